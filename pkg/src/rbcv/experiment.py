"""Run orchestration: greedy runs, file emission, manifests, replay.

A run writes into one output directory:

* ``trace.csv``      -- one row per attempt and one per accepted
                        iteration, for every requested variant;
* ``basis_<v>.json`` -- snapshot parameters, coefficient matrix,
                        normalisers, reference means and seeds;
* ``online.csv``     -- per-parameter estimator diagnostics;
* ``bounds.csv`` / ``probe.csv`` -- sample-bound table and concentration
                        probe grid (only when theory validation is on);
* ``compare.csv``    -- aligned per-iteration table across variants
                        (compare mode);
* ``manifest.json``  -- resolved config, every (seed, stream_id) drawn,
                        per-variant summaries and warnings.

All numeric output is deterministic for a fixed config; a manifest fed
back through `run` replays the run byte-identically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats, theory
from .config import ExperimentConfig, validate_config
from .errors import ConfigurationError
from .families import (FamilySpec, TrialSet, default_dist, draw_trial_set,
                       make_family)
from .fem import FemContext, mesh_to_csv
from .greedy import (STREAM_SMALL, STREAM_TRIAL, GreedyConfig, GreedyTrace,
                     ReducedBasis, run_hmc, run_imc)
from .online import make_online_context, online_table
from .stats import DistributionSpec

PACKAGE_VERSION = "0.1.0"

TRACE_COLUMNS = ["variant", "n", "event", "attempt", "m", "stream_id", "mu",
                 "beta_sq_at_mu", "theta_sq_at_mu", "r_value", "theta_sq_sup",
                 "beta_sq_sup", "accepted"]

BOUNDS_COLUMNS = ["n", "kappa", "phi_kappa", "m_lower", "vacuous"]
PROBE_COLUMNS = ["m", "kappa", "frequency", "m_phi"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def variant_stream_base(index: int) -> int:
    """Iteration-batch stream ids never collide across variants."""
    return 1_000_000 * (index + 1) + 100


# ---------------------------------------------------------------------------
# basis (de)serialisation
# ---------------------------------------------------------------------------

def save_basis(basis: ReducedBasis, trace: GreedyTrace, cfg: ExperimentConfig,
               path: Path) -> None:
    payload = {
        "variant": trace.variant,
        "family": basis.family.kind,
        "parameter_domain": list(basis.family.parameter_domain),
        "eval_domain": list(basis.family.eval_domain),
        "fem": ({"n_per_side": basis.family.fem.n_per_side,
                 "ellipticity_floor": basis.family.fem.ellipticity_floor}
                if basis.family.fem else None),
        "dist": basis.dist.to_dict(),
        "gamma": cfg.gamma,
        "snapshot_mus": [float(v) for v in basis.snapshot_params],
        "snapshot_indices": [int(v) for v in basis.snapshot_indices],
        "thetas": [float(v) for v in basis.thetas],
        "ref_means": [float(v) for v in basis.ref_means],
        "coeffs": [[float(v) for v in row] for row in basis.coeffs],
        "ref_batch": {"seed": basis.ref_batch.seed,
                      "stream_id": basis.ref_batch.stream_id,
                      "m": basis.ref_batch.m},
        "final_m": trace.records[-1].m if trace.records else None,
        "terminated_reason": trace.terminated_reason,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_basis(path: str | Path) -> ReducedBasis:
    """Rebuild a basis from its JSON file; the reference batch and the
    snapshot evaluations on it are regenerated from seeds."""
    data = json.loads(Path(path).read_text())
    fem = None
    if data["family"] == "heat2d":
        femcfg = data.get("fem") or {}
        fem = FemContext(n_per_side=femcfg.get("n_per_side", 16),
                         ellipticity_floor=femcfg.get("ellipticity_floor", 1e-6))
    family = make_family(data["family"], fem=fem)
    dist = DistributionSpec.from_dict(data["dist"])
    from .families import draw_family_batch, eval_family
    rb = data["ref_batch"]
    ref_batch, _ = draw_family_batch(family, dist, rb["m"], rb["seed"],
                                     rb["stream_id"])
    mus = [float(v) for v in data["snapshot_mus"]]
    snap_ref = np.vstack([eval_family(family, mu, ref_batch) for mu in mus])
    coeffs = np.array(data["coeffs"], dtype=np.float64)
    return ReducedBasis(
        family=family, dist=dist, ref_batch=ref_batch, snapshot_params=mus,
        snapshot_indices=[int(v) for v in data["snapshot_indices"]],
        coeffs=coeffs, thetas=[float(v) for v in data["thetas"]],
        ref_means=[float(v) for v in data["ref_means"]],
        snap_ref_evals=snap_ref,
        ref_rows=stats.center_rows(coeffs @ snap_ref))


# ---------------------------------------------------------------------------
# trace emission
# ---------------------------------------------------------------------------

def trace_rows(trace: GreedyTrace) -> list[list]:
    rows = []
    for rec in trace.records:
        for rt in rec.retries:
            rows.append([trace.variant, rec.n, "retry", rt.attempt, rt.m,
                         rt.stream_id, rt.mu, rt.beta_sq_at_mu,
                         rt.theta_sq_at_mu, rt.r_value, None, None,
                         rt.accepted])
        if not math.isnan(rec.mu):
            rows.append([trace.variant, rec.n, "accept", len(rec.retries),
                         rec.m, None, rec.mu, rec.beta_sq_at_mu,
                         rec.theta_sq_at_mu, rec.r_value, rec.theta_sq_sup,
                         rec.beta_sq_sup, True])
    return rows


# ---------------------------------------------------------------------------
# theory validation (bounds.csv / probe.csv)
# ---------------------------------------------------------------------------

def family_theory_constants(family: FamilySpec, dist: DistributionSpec) -> dict:
    """K2 / Kinf / KL for the 1-D families.

    tc1 is exact (mean 0.3, variance 53/300, sup deviation 0.7,
    Lipschitz 2); tc2 is estimated by dense-grid quadrature, recorded as
    such in the provenance field.
    """
    if family.kind == "tc1":
        return {"k2": math.sqrt(53.0 / 300.0), "kinf": 0.7, "kl": 2.0,
                "provenance": "analytic"}
    if family.kind == "tc2":
        from .families import testcase2_f
        xs = np.linspace(0.0, 1.0, 20001)
        w = np.full(xs.size, 1.0 / xs.size)
        k2 = kinf = 0.0
        for mu in np.linspace(0.0, 1.0, 201):
            vals = testcase2_f(float(mu), xs)
            mean = float(vals @ w)
            k2 = max(k2, math.sqrt(float(((vals - mean) ** 2) @ w)))
            kinf = max(kinf, float(np.max(np.abs(vals - mean))))
        return {"k2": k2, "kinf": kinf, "kl": family.lipschitz_bound,
                "provenance": "dense-grid estimate (20001 x 201 points)"}
    raise ConfigurationError("theory constants available for 1-D families only")


def basis_constant_sequences(basis: ReducedBasis, kinf_base: float,
                             kl_base: float) -> tuple[list[float], list[float]]:
    """Running max constants including the orthonormalised functions:
    sup norms from the reference batch values, Lipschitz from the
    coefficient l1 norms times the family bound."""
    l_family = basis.family.lipschitz_bound
    kinf_seq, kl_seq = [], []
    kinf, kl = kinf_base, kl_base
    for i in range(basis.n):
        kinf_seq.append(kinf)   # constants for iteration n = i+1 use rows < n
        kl_seq.append(kl)
        kinf = max(kinf, float(np.max(np.abs(basis.ref_rows[i]))))
        kl = max(kl, float(np.sum(np.abs(basis.coeffs[i]))) * l_family)
    return kinf_seq, kl_seq


def default_probe_kappas(dist: DistributionSpec) -> list[float]:
    comp = dist.components[0]
    if isinstance(comp, stats.Uniform):
        diam = comp.b - comp.a
    else:
        diam = 6.0 * comp.stddev
    return [round(f * diam, 12) for f in (0.02, 0.03, 0.045, 0.07)]


def run_theory_validation(cfg: ExperimentConfig, family: FamilySpec,
                          dist: DistributionSpec, trial: TrialSet,
                          out: Path) -> dict:
    if dist.d != 1:
        raise ConfigurationError("theory validation requires a 1-D family")
    ts = cfg.theory
    kappas = ts.kappas or default_probe_kappas(dist)
    fit = theory.fit_concentration_constants(
        dist, ts.ms, kappas, ts.trials, cfg.master_seed, alpha=cfg.alpha)
    _write_csv(out / "probe.csv", PROBE_COLUMNS,
               [[r["m"], r["kappa"], r["frequency"], r["m_phi"]]
                for r in fit.table])

    # measured sup residual variances from an ideal run on the same universe
    gcfg = GreedyConfig(family=family, dist=dist, trial=trial, gamma=cfg.gamma,
                        m1=cfg.m1, m_ref=cfg.m_ref, epsilon=cfg.epsilon,
                        max_iters=ts.n_max, seed=cfg.master_seed,
                        alpha=cfg.alpha)
    basis, trace = run_imc(gcfg)
    sigma_sq = [rec.theta_sq_at_mu for rec in trace.records]

    consts = family_theory_constants(family, dist)
    kinf_seq, kl_seq = basis_constant_sequences(basis, consts["kinf"],
                                                consts["kl"])
    params = theory.TheoryParams(
        alpha=cfg.alpha, c_const=fit.c_const, c_rate=fit.c_rate,
        gamma=cfg.gamma, delta=ts.delta, k2=consts["k2"],
        kinf=consts["kinf"], kl=consts["kl"], d=1, fitted=True)
    report = theory.bound_report(params, sigma_sq, kinf_seq[:len(sigma_sq)],
                                 kl_seq[:len(sigma_sq)])
    _write_csv(out / "bounds.csv", BOUNDS_COLUMNS,
               [[r["n"], r["kappa"], r["phi_kappa"], r["m_lower"], r["vacuous"]]
                for r in report.rows])
    return {"c_const": fit.c_const, "c_rate": fit.c_rate,
            "r_squared": fit.r_squared, "n_points": fit.n_points,
            "constants": consts, "first_bound": report.rows[0]["m_lower"]
            if report.rows else None}


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    out_dir: Path
    files: list[str] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    bases: dict[str, ReducedBasis] = field(default_factory=dict)
    traces: dict[str, GreedyTrace] = field(default_factory=dict)


def _apply_overrides(cfg: ExperimentConfig, variant: str) -> dict:
    base = {"m1": cfg.m1, "epsilon": cfg.epsilon, "max_iters": cfg.max_iters,
            "retry_cap": cfg.retry_cap, "alpha": cfg.alpha,
            "record_theta_profile": cfg.record_theta_profile}
    base.update(cfg.variant_overrides.get(variant, {}))
    return base


def _san(value):
    """NaN/inf are not valid JSON scalars; manifests store them as None."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   compare: bool = False) -> RunResult:
    out = Path(out_dir if out_dir is not None else (cfg.out_dir or "run-output"))
    out.mkdir(parents=True, exist_ok=True)

    fem = FemContext(cfg.fem.n_per_side, cfg.fem.ellipticity_floor) \
        if cfg.family == "heat2d" else None
    family = make_family(cfg.family, fem=fem)
    dist = default_dist(family)
    trial = draw_trial_set(family, cfg.trial_size, cfg.resolved_trial_seed(),
                           STREAM_TRIAL)

    result = RunResult(out_dir=out)
    batches = [{"purpose": "trial", "seed": cfg.resolved_trial_seed(),
                "stream_id": STREAM_TRIAL, "m": cfg.trial_size}]
    rows = []
    summaries = []
    warnings = cfg.warnings()

    for k, variant in enumerate(cfg.variants):
        over = _apply_overrides(cfg, variant)
        gcfg = GreedyConfig(
            family=family, dist=dist, trial=trial, gamma=cfg.gamma,
            m1=over["m1"], m_ref=cfg.m_ref, epsilon=over["epsilon"],
            max_iters=over["max_iters"], retry_cap=over["retry_cap"],
            seed=cfg.master_seed, alpha=over["alpha"],
            record_theta_profile=over["record_theta_profile"],
            statistical_stop=cfg.statistical_stop,
            iter_stream_base=variant_stream_base(k))
        if variant == "imc":
            basis, trace = run_imc(gcfg)
        else:
            basis, trace = run_hmc(gcfg, variant="H" if variant == "hmc" else "SH")
        result.bases[variant] = basis
        result.traces[variant] = trace
        rows.extend(trace_rows(trace))
        if trace.truncated:
            warnings.append(f"{variant}: truncated ({trace.terminated_reason})")
        batches.append({"purpose": "ref", "variant": variant,
                        "seed": cfg.master_seed, "stream_id": gcfg.ref_stream,
                        "m": cfg.m_ref})
        for rec in trace.records:
            for rt in rec.retries:
                batches.append({"purpose": "iteration", "variant": variant,
                                "n": rec.n, "attempt": rt.attempt,
                                "seed": cfg.master_seed,
                                "stream_id": rt.stream_id, "m": rt.m,
                                "redraws": rt.redraws})
        summaries.append({
            "variant": variant, "n_iterations": trace.n_iterations,
            "total_retries": trace.total_retries,
            "final_m": trace.records[-1].m if trace.records else None,
            "terminated_reason": trace.terminated_reason,
            "truncated": trace.truncated,
            "total_redraws": trace.total_redraws,
            "snapshot_mus": [float(m) for m in basis.snapshot_params],
        })
        basis_file = out / f"basis_{variant}.json"
        save_basis(basis, trace, cfg, basis_file)
        result.files.append(basis_file.name)

    _write_csv(out / "trace.csv", TRACE_COLUMNS, rows)
    result.files.append("trace.csv")

    if compare:
        _write_csv(out / "compare.csv", *compare_table(result.traces, cfg.variants))
        result.files.append("compare.csv")

    online_info = None
    if cfg.online.enabled:
        v_sel = cfg.online.variant or cfg.variants[0]
        if v_sel not in result.bases:
            raise ConfigurationError(f"online variant {v_sel!r} was not run")
        basis = result.bases[v_sel]
        trace = result.traces[v_sel]
        if basis.n >= 1:
            m_small = cfg.online.m_small or (
                trace.records[-1].m if trace.variant != "IMC" else cfg.m_ref)
            ctx = make_online_context(basis, m_small, seed=cfg.master_seed,
                                      stream_id=STREAM_SMALL)
            mus = (trial.parameters if cfg.online.mus == "trial"
                   else np.asarray(cfg.online.mus, dtype=np.float64))
            table = online_table(ctx, mus)
            ncols = basis.n
            cols = ["mu", "estimate", "e_rel", "m_mc"] + \
                [f"lambda_{i+1}" for i in range(ncols)]
            _write_csv(out / "online.csv", cols,
                       [[r["mu"], r["estimate"], r["e_rel"], r["m_mc"],
                         *r["lambda"]] for r in table])
            result.files.append("online.csv")
            batches.append({"purpose": "online_small", "variant": v_sel,
                            "seed": cfg.master_seed, "stream_id": STREAM_SMALL,
                            "m": m_small})
            online_info = {"variant": v_sel, "m_small": m_small,
                           "n_parameters": int(len(table))}
        else:
            warnings.append(f"online skipped: variant {v_sel} built no basis")

    theory_info = None
    if cfg.theory.enabled:
        theory_info = run_theory_validation(cfg, family, dist, trial, out)
        result.files.extend(["bounds.csv", "probe.csv"])

    manifest = {
        "package": "rbcv",
        "version": PACKAGE_VERSION,
        "resolved_config": json.loads(cfg.model_dump_json()),
        "out_dir": str(out),
        "files": sorted(result.files),
        "batches": [{k: _san(v) for k, v in b.items()} for b in batches],
        "variants": summaries,
        "online": online_info,
        "theory": theory_info,
        "warnings": warnings,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    result.files.append("manifest.json")
    result.manifest = manifest
    return result


def compare_table(traces: dict[str, GreedyTrace], variants: list[str]):
    """Aligned per-iteration table across variants (ragged rows padded
    with blanks)."""
    columns = ["n"]
    for v in variants:
        columns += [f"mu_{v}", f"m_{v}", f"theta_sq_at_mu_{v}",
                    f"theta_sq_sup_{v}", f"beta_sq_at_mu_{v}",
                    f"beta_sq_sup_{v}"]
    n_max = max((t.n_iterations for t in traces.values()), default=0)
    rows = []
    for i in range(n_max):
        row = [i + 1]
        for v in variants:
            recs = traces[v].records
            if i < len(recs) and not math.isnan(recs[i].mu):
                r = recs[i]
                row += [r.mu, r.m, r.theta_sq_at_mu, r.theta_sq_sup,
                        r.beta_sq_at_mu, r.beta_sq_sup]
            else:
                row += [None] * 6
        rows.append(row)
    return columns, rows


def compare_variants(cfg: ExperimentConfig, out_dir: str | Path | None = None
                     ) -> RunResult:
    """Run the requested variants on one shared sample universe and emit
    the aligned comparison table alongside the usual run files."""
    return run_experiment(cfg, out_dir, compare=True)


def dump_mesh(n_per_side: int, out_dir: str | Path) -> list[str]:
    from .fem import build_mesh
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vcsv, tcsv = mesh_to_csv(build_mesh(n_per_side))
    (out / "mesh_vertices.csv").write_text(vcsv)
    (out / "mesh_triangles.csv").write_text(tcsv)
    return ["mesh_vertices.csv", "mesh_triangles.csv"]
