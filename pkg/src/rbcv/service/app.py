"""FastAPI application wrapping the core package.

One process can host long-lived state (nothing persistent beyond the
filesystem here); all endpoints are synchronous because the work is
CPU-bound numerics.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, HTTPException

from .. import online as online_mod
from ..config import PRESETS, config_from_preset, load_config, validate_config
from ..errors import ConfigurationError, DomainError, RbcvError
from ..experiment import (compare_variants, dump_mesh, load_basis,
                          run_experiment, run_theory_validation)
from ..fem import build_mesh
from . import schemas as S


def _resolve_config(req: S.RunRequest):
    given = sum(x is not None for x in (req.preset, req.config, req.config_path))
    if given != 1:
        raise ConfigurationError(
            "provide exactly one of preset / config / config_path")
    if req.preset is not None:
        cfg = config_from_preset(req.preset)
    elif req.config is not None:
        cfg = validate_config(req.config)
    else:
        cfg = load_config(req.config_path)
    updates = {}
    if req.seed is not None:
        updates["master_seed"] = req.seed
    if req.out_dir is not None:
        updates["out_dir"] = req.out_dir
    if updates:
        cfg = cfg.model_copy(update=updates)
    return cfg


def _run_response(result) -> S.RunResponse:
    return S.RunResponse(
        out_dir=str(result.out_dir),
        files=sorted(result.files),
        variants=[S.VariantSummary(**{k: v for k, v in s.items()
                                      if k != "total_redraws"})
                  for s in result.manifest["variants"]],
        warnings=result.manifest["warnings"])


def create_app() -> FastAPI:
    app = FastAPI(title="rbcv", version="0.1.0",
                  description="Reduced-basis control variates with greedy "
                              "snapshot selection under Monte-Carlo sampling")

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, DomainError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except RbcvError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/presets", response_model=list[S.PresetInfo])
    def presets():
        return [S.PresetInfo(name=k, family=v["family"], desk=v["desk"])
                for k, v in sorted(PRESETS.items())]

    @app.post("/run", response_model=S.RunResponse)
    def run(req: S.RunRequest):
        cfg = guard(_resolve_config, req)
        result = guard(run_experiment, cfg, req.out_dir)
        return _run_response(result)

    @app.post("/compare", response_model=S.RunResponse)
    def compare(req: S.CompareRequest):
        cfg = guard(_resolve_config, req)
        result = guard(compare_variants, cfg, req.out_dir)
        return _run_response(result)

    @app.post("/online", response_model=S.OnlineResponse)
    def online(req: S.OnlineRequest):
        basis = guard(load_basis, req.basis_path)
        ctx = guard(online_mod.make_online_context, basis, req.m_small,
                    seed=req.seed)
        table = guard(online_mod.online_table, ctx, req.mus, req.n)
        rows = []
        for r in table:
            rows.append(S.OnlineRow(
                mu=r["mu"], estimate=r["estimate"],
                e_rel=None if math.isnan(r["e_rel"]) else r["e_rel"],
                m_mc=None if math.isinf(r["m_mc"]) else r["m_mc"],
                lam=r["lambda"]))
        csv_path = None
        if req.out_path:
            from pathlib import Path

            from ..experiment import _write_csv
            cols = ["mu", "estimate", "e_rel", "m_mc"] + \
                [f"lambda_{i+1}" for i in range(ctx.n if req.n is None else req.n)]
            _write_csv(Path(req.out_path), cols,
                       [[r["mu"], r["estimate"], r["e_rel"], r["m_mc"],
                         *r["lambda"]] for r in table])
            csv_path = req.out_path
        return S.OnlineResponse(basis_size=basis.n, m_small=req.m_small,
                                rows=rows, csv_path=csv_path)

    @app.post("/validate-theory", response_model=S.TheoryResponse)
    def validate_theory(req: S.TheoryRequest):
        from pathlib import Path

        from ..config import TheorySettings
        from ..families import default_dist, draw_trial_set, make_family
        from ..greedy import STREAM_TRIAL
        if req.family not in ("tc1", "tc2"):
            raise HTTPException(status_code=422,
                                detail="theory validation requires tc1 or tc2")
        cfg = config_from_preset(f"{req.family}-desk").model_copy(update={
            "gamma": req.gamma, "m_ref": req.m_ref, "trial_size": req.trial_size,
            "master_seed": req.seed,
            "theory": TheorySettings(enabled=True, delta=req.delta,
                                     trials=req.trials, ms=req.ms,
                                     kappas=req.kappas, n_max=req.n_max)})
        family = make_family(req.family)
        dist = default_dist(family)
        trial = draw_trial_set(family, cfg.trial_size,
                               cfg.resolved_trial_seed(), STREAM_TRIAL)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        info = guard(run_theory_validation, cfg, family, dist, trial, out)
        return S.TheoryResponse(out_dir=str(out),
                                files=["bounds.csv", "probe.csv"],
                                c_const=info["c_const"], c_rate=info["c_rate"],
                                r_squared=info["r_squared"],
                                n_points=info["n_points"],
                                first_bound=info["first_bound"])

    @app.post("/mesh-dump", response_model=S.MeshDumpResponse)
    def mesh_dump(req: S.MeshDumpRequest):
        files = guard(dump_mesh, req.n_per_side, req.out_dir)
        mesh = build_mesh(req.n_per_side)
        return S.MeshDumpResponse(out_dir=req.out_dir, files=files,
                                  n_vertices=mesh.n_vertices,
                                  n_triangles=mesh.n_triangles)

    return app


app = create_app()
