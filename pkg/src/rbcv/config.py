"""Experiment configuration: schema, presets, TOML/manifest loading.

The config format is TOML with four tables: [experiment], [online],
[theory], [fem] (see README for the full key list). A run manifest
embeds the fully resolved config under "resolved_config"; feeding a
manifest back to `run` replays the run byte-identically.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - py 3.10
    import tomli as tomllib

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigurationError

Variant = Literal["imc", "hmc", "shmc"]

# keys that define the shared sample universe: a per-variant override of
# any of these would break apples-to-apples comparisons
PROTECTED_KEYS = frozenset({"family", "master_seed", "trial_size", "trial_seed",
                            "m_ref", "gamma"})


class FemSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_per_side: int = Field(16, ge=2)
    ellipticity_floor: float = Field(1e-6, gt=0)


class OnlineSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    enabled: bool = True
    mus: Union[Literal["trial"], list[float]] = "trial"
    m_small: int = Field(0, ge=0)          # 0 -> final iteration-batch size
    variant: Optional[Variant] = None      # default: first requested variant
    seed_offset: int = Field(1, ge=1)      # small-batch stream = base + offset


class TheorySettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    enabled: bool = False
    delta: float = Field(0.1, gt=0, lt=1)
    trials: int = Field(1000, ge=100)
    ms: list[int] = [200, 400, 800, 1600]
    kappas: list[float] = []               # empty -> scaled to the support
    n_max: int = Field(10, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: Literal["tc1", "tc2", "heat2d"] = "tc1"
    variants: list[Variant] = ["hmc"]
    gamma: float = Field(0.9, gt=0, lt=1)
    m1: int = Field(10, ge=1)
    m_ref: int = Field(100_000, ge=1)
    epsilon: float = Field(1e-6, gt=0)     # IMC termination only
    alpha: float = Field(2.0, gt=1)
    trial_size: int = Field(300, ge=1)
    trial_seed: Optional[int] = Field(None, ge=0)   # default: master_seed
    master_seed: int = Field(20240901, ge=0)
    max_iters: int = Field(100, ge=1)
    retry_cap: int = Field(200, ge=1)
    record_theta_profile: bool = True
    statistical_stop: bool = True      # off: run HMC/SHMC to max_iters
    desk: bool = True
    out_dir: Optional[str] = None
    online: OnlineSettings = OnlineSettings()
    theory: TheorySettings = TheorySettings()
    fem: FemSettings = FemSettings()
    variant_overrides: dict[Variant, dict] = {}

    @field_validator("variants")
    @classmethod
    def _nonempty_unique(cls, v):
        if not v:
            raise ValueError("at least one variant is required")
        if len(set(v)) != len(v):
            raise ValueError("variants must be unique")
        return v

    @field_validator("variant_overrides")
    @classmethod
    def _guard_overrides(cls, v):
        for variant, table in v.items():
            bad = PROTECTED_KEYS.intersection(table)
            if bad:
                raise ValueError(
                    f"variant override for {variant!r} touches protected key(s) "
                    f"{sorted(bad)}: comparisons must share one trial set, seed "
                    f"and reference batch")
            unknown = set(table) - {"m1", "epsilon", "max_iters", "retry_cap",
                                    "alpha", "record_theta_profile"}
            if unknown:
                raise ValueError(f"unknown override key(s) {sorted(unknown)} "
                                 f"for variant {variant!r}")
        return v

    def resolved_trial_seed(self) -> int:
        return self.master_seed if self.trial_seed is None else self.trial_seed

    def warnings(self) -> list[str]:
        out = []
        if self.m_ref < 10 * self.m1:
            out.append(f"m_ref={self.m_ref} is not much larger than m1={self.m1}")
        if not self.desk:
            out.append("paper-scale settings: expect a long run")
        return out


PRESETS: dict[str, dict] = {
    # desk scale: minutes on a laptop, used by the acceptance suite
    "tc1-desk": {"family": "tc1", "variants": ["hmc"], "gamma": 0.9, "m1": 10,
                 "m_ref": 20_000, "trial_size": 100, "max_iters": 35,
                 "epsilon": 1e-6, "desk": True},
    "tc2-desk": {"family": "tc2", "variants": ["hmc"], "gamma": 0.9, "m1": 10,
                 "m_ref": 20_000, "trial_size": 100, "max_iters": 35,
                 "epsilon": 1e-6, "desk": True},
    "heat2d-desk": {"family": "heat2d", "variants": ["hmc"], "gamma": 0.9,
                    "m1": 50, "m_ref": 2_000, "trial_size": 20, "max_iters": 6,
                    "epsilon": 1e-6, "desk": True,
                    "fem": {"n_per_side": 8, "ellipticity_floor": 1e-6}},
    # paper scale: the published experiment sizes (long-running)
    "tc1-paper": {"family": "tc1", "variants": ["hmc", "shmc", "imc"],
                  "gamma": 0.9, "m1": 10, "m_ref": 100_000, "trial_size": 300,
                  "max_iters": 30, "epsilon": 1e-6, "desk": False},
    "tc2-paper": {"family": "tc2", "variants": ["hmc", "shmc", "imc"],
                  "gamma": 0.9, "m1": 10, "m_ref": 100_000, "trial_size": 300,
                  "max_iters": 70, "epsilon": 1e-6, "desk": False},
    "heat2d-paper": {"family": "heat2d", "variants": ["hmc", "shmc", "imc"],
                     "gamma": 0.9, "m1": 800, "m_ref": 100_000, "trial_size": 50,
                     "max_iters": 7, "epsilon": 1e-6, "desk": False,
                     "fem": {"n_per_side": 16, "ellipticity_floor": 1e-6}},
}


def config_from_preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    data = dict(PRESETS[name])
    data.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(data)


def validate_config(data: dict) -> ExperimentConfig:
    """Pydantic validation with errors rewrapped to name the field."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigurationError("invalid experiment config: " + "; ".join(lines)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a TOML config or a JSON run manifest (replay)."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_bytes()
    if path.suffix == ".json" or text.lstrip()[:1] == b"{":
        payload = json.loads(text)
        data = payload.get("resolved_config", payload)
        return validate_config(data)
    raw = tomllib.loads(text.decode("utf-8"))
    data = dict(raw.pop("experiment", {}))
    for table in ("online", "theory", "fem"):
        if table in raw:
            data[table] = raw.pop(table)
    if "variant_overrides" in raw:
        data["variant_overrides"] = raw.pop("variant_overrides")
    if raw:
        raise ConfigurationError(f"unknown top-level table(s): {sorted(raw)}")
    return validate_config(data)
