"""Pydantic request/response models for the HTTP surface.

Requests either name a preset or carry a full config table (same schema
as the TOML file); responses return file names relative to the output
directory plus compact per-variant summaries.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    preset: Optional[str] = None
    config: Optional[dict] = None
    config_path: Optional[str] = None      # TOML file or manifest (replay)
    out_dir: Optional[str] = None
    seed: Optional[int] = Field(None, ge=0)  # overrides master_seed


class VariantSummary(BaseModel):
    variant: str
    n_iterations: int
    total_retries: int
    final_m: Optional[int]
    terminated_reason: str
    truncated: bool
    snapshot_mus: list[float]


class RunResponse(BaseModel):
    out_dir: str
    files: list[str]
    variants: list[VariantSummary]
    warnings: list[str]


class CompareRequest(RunRequest):
    pass


class OnlineRequest(BaseModel):
    basis_path: str
    mus: list[float]
    m_small: int = Field(..., ge=1)
    seed: Optional[int] = Field(None, ge=0)
    n: Optional[int] = Field(None, ge=0)   # use only the first n snapshots
    out_path: Optional[str] = None         # also write a CSV here


class OnlineRow(BaseModel):
    mu: float
    estimate: float
    e_rel: Optional[float]                 # None when undefined
    m_mc: Optional[float]                  # None encodes +infinity
    lam: list[float]


class OnlineResponse(BaseModel):
    basis_size: int
    m_small: int
    rows: list[OnlineRow]
    csv_path: Optional[str]


class TheoryRequest(BaseModel):
    family: str = "tc1"
    gamma: float = Field(0.9, gt=0, lt=1)
    delta: float = Field(0.1, gt=0, lt=1)
    trials: int = Field(1000, ge=100)
    ms: list[int] = [200, 400, 800, 1600]
    kappas: list[float] = []
    n_max: int = Field(10, ge=1)
    m_ref: int = Field(20_000, ge=1)
    trial_size: int = Field(100, ge=1)
    seed: int = Field(20240901, ge=0)
    out_dir: str


class TheoryResponse(BaseModel):
    out_dir: str
    files: list[str]
    c_const: float
    c_rate: float
    r_squared: float
    n_points: int
    first_bound: Optional[int]


class MeshDumpRequest(BaseModel):
    n_per_side: int = Field(16, ge=2)
    out_dir: str


class MeshDumpResponse(BaseModel):
    out_dir: str
    files: list[str]
    n_vertices: int
    n_triangles: int


class PresetInfo(BaseModel):
    name: str
    family: str
    desk: bool


class ErrorDetail(BaseModel):
    error: str
    message: str
