"""Experiment pipelines behind the command line.

Each runner takes a resolved config and an output directory, writes its
CSV/JSON files there and returns a summary dict of headline numbers.
``run_experiment`` wraps a runner with timing, hashing and the manifest.
"""
import csv
import hashlib
import json
import math
import os
import time
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import chaos, recovery
from .config import ConfigError
from .dmaps import diffusion_map, make_swiss_roll
from .objectives import (CylinderParams, from_cylindrical, make_objective, to_cylindrical,
                         well_global_minimizer)
from .outer_loop import GRID, RIDGE, OuterConfig, cylinder_chart, run_baseline, run_grid, run_ridge
from .rng import child_seed, substream
from .sampler import SamplerParams, ensemble_bursts, langevin_em_burst

EXPERIMENTS = ("fig1-density", "swissroll", "ridge", "grid-linear2d", "cylinder",
               "chaos-additive", "chaos-multiplicative", "baseline")
MANIFEST = "manifest.json"
TIMINGS = "timings.json"


def version_tag() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def default_out_dir(experiment: str) -> Path:
    root = os.environ.get("OPT_MANIFOLD_OUT") or "runs"
    return Path(root) / experiment


class Outputs:
    """Writes files into one directory and remembers what it wrote."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}

    def _path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if p.parent != self.root.resolve():
            raise ConfigError(f"output name {name!r} escapes the output directory")
        self.files.append(name)
        return p

    def csv(self, name: str, header, rows):
        with open(self._path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def json(self, name: str, obj):
        with open(self._path(name), "w", encoding="utf-8") as fh:
            json.dump(_plain(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 3)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def trajectory_rows(ens, objective, n_traj: int):
    """``traj_id, step, t, x1..xn, f, accepted`` rows for the first ``n_traj`` paths."""
    for i in range(n_traj):
        path = ens.paths[i]
        f = objective(path)
        moved = np.r_[False, np.any(path[1:] != path[:-1], axis=-1)]
        for k in range(path.shape[0]):
            yield (i, k, k * ens.dt, *path[k], f[k], bool(moved[k]))


# ---------------------------------------------------------------------------
# runners

def run_fig1(cfg, out: Outputs):
    """RWMH and Euler-Maruyama Langevin endpoint samples from the same start."""
    seed, T, dt = cfg["seed"], cfg["sampler.T"], cfg["sampler.dt"]
    n, steps, x0 = cfg["fig1.n_real"], cfg["fig1.n_steps"], cfg["fig1.x0"]
    q = make_objective("quad1d")
    with out.stage("rwmh"):
        ens = ensemble_bursts([[x0]], n, steps * dt, SamplerParams(T, dt), q.energy,
                              seed=child_seed(seed, "fig1-rwmh"))[0]
        rw = ens.ends[:, 0]
    with out.stage("langevin"):
        lv = langevin_em_burst(np.full(n, x0), T, dt, steps * dt, lambda x: x,
                               substream(seed, "fig1-langevin")).states[-1]
    out.csv("rwmh_endpoints.csv", ["realization", "x"], zip(range(n), rw))
    n_dump = min(cfg["fig1.n_dump"], n)
    if n_dump:
        out.csv("rwmh_paths.csv", ["traj_id", "step", "t", "x1", "f", "accepted"],
                trajectory_rows(ens, q, n_dump))
    out.csv("langevin_endpoints.csv", ["realization", "x"], zip(range(n), lv))
    t = steps * dt
    se = math.sqrt(rw.var(ddof=1) / n + lv.var(ddof=1) / n)
    return {"ou_mean": x0 * math.exp(-t), "ou_var": T * (1 - math.exp(-2 * t)),
            "rwmh_mean": rw.mean(), "rwmh_var": rw.var(ddof=1),
            "langevin_mean": lv.mean(), "langevin_var": lv.var(ddof=1),
            "mean_gap_in_se": abs(rw.mean() - lv.mean()) / se,
            "acceptance_rate": float(ens.accepted.mean() / steps)}


def run_swissroll(cfg, out: Outputs):
    X, arc, height = make_swiss_roll(cfg["swissroll.m"], child_seed(cfg["seed"], "swissroll"))
    eps = None if cfg["dmaps.epsilon"] == "auto" else cfg["dmaps.epsilon"]
    with out.stage("embed"):
        emb = diffusion_map(X, k=cfg["dmaps.k"], alpha=cfg["dmaps.alpha"], epsilon=eps,
                            eps_method=cfg["dmaps.eps_method"], eps_k=cfg["dmaps.eps_k"])
    k = emb.coords.shape[1]
    rho_a = [abs(spearmanr(emb.coords[:, j], arc).statistic) for j in range(k)]
    rho_h = [abs(spearmanr(emb.coords[:, j], height).statistic) for j in range(k)]
    out.csv("embedding.csv", ["sample_id"] + [f"psi{j + 1}" for j in range(k)]
            + ["x", "y", "z", "arclength", "height"],
            ((i, *emb.coords[i], *X[i], arc[i], height[i]) for i in range(X.shape[0])))
    out.csv("spectrum.csv", ["index", "lambda", "harmonic", "spearman_arclength", "spearman_height"],
            [(j, emb.eigenvalues[j], j > 0 and bool(emb.harmonic_flags[j - 1]),
              rho_a[j - 1] if j else "", rho_h[j - 1] if j else "") for j in range(k + 1)])
    return {"epsilon": emb.kernel.epsilon, "eigenvalues": emb.eigenvalues,
            "best_arclength": [int(np.argmax(rho_a)) + 1, max(rho_a)],
            "harmonic_flags": emb.harmonic_flags, "spearman_height": rho_h}


def _history_rows(hist, f_of):
    return [(*row, f_of(np.asarray(row[3:]))) for row in hist.rows()]


def _records(hist):
    return [{"iter": i, "start": r.start, "cloud_size": r.cloud_size, "epsilon": r.epsilon,
             "eigenvalues": r.eigenvalues, "new_point": r.new_point, "f_new": r.f_new,
             "evals": r.evals, "info": {k: v for k, v in r.info.items() if k != "eigenvalues"}}
            for i, r in enumerate(hist.records, 1)]


def run_ridge_exp(cfg, out: Outputs):
    f = make_objective("bayes_ridge")
    seed = cfg["seed"]
    oc = OuterConfig(mode=RIDGE, n_coarse_iters=cfg["outer.n_coarse_iters"], T=cfg["sampler.T"],
                     dt=cfg["sampler.dt"], n_accepted=cfg["sampler.n_accept"],
                     step_factor=cfg["outer.step_factor"], min_correlation=cfg["outer.min_correlation"],
                     gh_delta=cfg["gh.delta"], gh_epsilon=cfg["gh.epsilon"],
                     eps_method=cfg["dmaps.eps_method"],
                     eps_k=cfg["dmaps.eps_k"])
    r0, th0 = cfg["ridge.r0"], cfg["ridge.theta0"]
    start = np.array([r0 * math.cos(th0), r0 * math.sin(th0)])
    with out.stage("coarse"):
        hist = run_ridge(oc, f, start, seed)
    with out.stage("baseline"):
        base = run_baseline(f, cfg["baseline.budget"], oc.sampler, start, seed)
    out.csv("history.csv", ["iter", "evals", "best_f", "x1", "x2", "f"], _history_rows(hist, f))
    out.csv("trace_coarse.csv", ["evals", "best_f"], zip(hist.trace_evals, hist.trace_best))
    out.csv("trace_baseline.csv", ["evals", "best_f"], zip(base.trace_evals, base.trace_best))
    out.json("history.json", {"status": hist.status, "evals": hist.evals, "start": start,
                              "records": _records(hist)})
    return {"status": hist.status, "best_f": hist.best_f, "evals": hist.evals,
            "first_reach_0.99": hist.first_reach(0.99), "baseline_best_f": base.best_f,
            "baseline_first_reach_0.99": base.first_reach(0.99), "final_point": hist.final_point}


def run_cylinder(cfg, out: Outputs):
    cyl = CylinderParams(cfg["cyl.k1"], cfg["cyl.k2"], cfg["cyl.R"])
    f = make_objective("cylinder_well", cyl)
    oc = OuterConfig(mode=GRID, n_coarse_iters=cfg["outer.n_coarse_iters"], T=cfg["sampler.T"],
                     dt=cfg["sampler.dt"],
                     grid_shape=(cfg["outer.grid_rows"], cfg["outer.grid_cols"]),
                     grid_extent=(cfg["outer.grid_extent_theta"], cfg["outer.grid_extent_z"]),
                     n_traj=cfg["outer.n_traj"], burst_duration=cfg["outer.burst_duration"],
                     t_ode=cfg["outer.t_ode"], ode_steps=cfg["outer.ode_steps"],
                     surface_degree=cfg["outer.degree"], tol=cfg["outer.tol"],
                     gh_train=cfg["outer.gh_train"], gh_delta=cfg["gh.delta"],
                     gh_epsilon=cfg["gh.epsilon"],
                     eps_method=cfg["dmaps.eps_method"], eps_k=cfg["dmaps.eps_k"])
    start = from_cylindrical(cyl.R, cfg["cylinder.theta0"], cfg["cylinder.z0"])
    with out.stage("coarse"):
        hist = run_grid(oc, f, start, cfg["seed"], chart=cylinder_chart(cyl.R))
    rows = []
    for row in hist.rows():
        x = np.asarray(row[3:])
        r, th, z = to_cylindrical(x)
        rows.append((*row, float(r), float(th), float(f(x))))
    out.csv("history.csv", ["iter", "evals", "best_f", "x1", "x2", "x3", "r", "theta", "f"], rows)
    out.json("history.json", {"status": hist.status, "evals": hist.evals, "start": start,
                              "records": _records(hist)})
    r, th, z = (float(v) for v in to_cylindrical(hist.final_point))
    return {"status": hist.status, "iterations": len(hist.records), "evals": hist.evals,
            "final_r": r, "final_theta": th, "final_z": z, "theta_star": well_global_minimizer(),
            "best_f": hist.best_f}


def run_linear2d(cfg, out: Outputs):
    spec = recovery.RecoverySpec(shape=(cfg["recovery.rows"], cfg["recovery.cols"]),
                                 n_traj=cfg["recovery.n_traj"], Dt=cfg["recovery.Dt"],
                                 dt=cfg["sampler.dt"], T=cfg["sampler.T"], n_cov=cfg["recovery.n_cov"],
                                 cov_dt=cfg["recovery.cov_dt"], sphere_span=cfg["recovery.sphere_span"],
                                 sphere_lat=cfg["recovery.sphere_lat"], degree=cfg["recovery.degree"],
                                 mask_fraction=cfg["recovery.mask_fraction"],
                                 eps_scale=cfg["recovery.eps_scale"])
    with out.stage("simulate"):
        data = recovery.simulate(spec, cfg["seed"])
    with out.stage("embed"):
        rep = recovery.run_recovery(spec, cfg["seed"], data)
    ref = rep.reference.theta
    fits = {}
    for run in (rep.euclid_plane, rep.mahal_sphere, rep.euclid_sphere):
        tag = run.label.replace("/", "_")
        gs = data.index()[0]
        pg = run.psi[gs]
        # c1, c2 are the embedding coordinates of the node; x1, x2 its position in the plane
        out.csv(f"coeff_field_{tag}.csv",
                ["grid_id", "c1", "c2", "theta1", "theta2", "theta3", "theta4", "mask", "x1", "x2",
                 "theta1_fit", "theta2_fit", "theta1_ref", "theta2_ref", "theta3_ref", "theta4_ref"],
                ((g, *pg[g], *run.estimates[g], *run.diffusion[g], bool(run.mask[g]), *data.grid[g],
                  *run.fitted[g], *ref[g]) for g in range(data.G)))
        fits[run.label] = {"epsilon": run.epsilon, "median_rel_err": run.median_rel_err,
                           "theta1": run.field.fits["theta1"].named,
                           "theta2": run.field.fits["theta2"].named,
                           "masked_in": int(run.mask.sum())}
    out.csv("embedding.csv", ["sample_id", "psi1", "psi2", "x1", "x2"],
            ((i, *rep.reference.psi[i], *data.points[i]) for i in range(data.points.shape[0])))
    out.json("fits.json", fits)
    return {label: v["median_rel_err"] for label, v in fits.items()} | {"evals": rep.evals}


def run_chaos(cfg, out: Outputs, mode: str):
    kw = dict(n_starts=cfg["chaos.n_starts"], n_traj=cfg["chaos.n_traj"], n_cov=cfg["chaos.n_cov"],
              dt_cov=cfg["chaos.dt_cov"], eps_k=cfg["chaos.eps_k"], y_start=cfg["chaos.y_start"],
              smoothing=cfg["chaos.smoothing"], central=cfg["chaos.central"])
    if cfg["chaos.eps_scale"] != "auto":
        kw["eps_scale"] = cfg["chaos.eps_scale"]
    spec = chaos.ChaosSpec.for_mode(mode, **kw)
    pkw = dict(A=cfg["chaos.A"], dt_sim=cfg["chaos.dt_sim"])
    if cfg["chaos.Dt_burst"] != "auto":
        pkw["Dt_burst"] = cfg["chaos.Dt_burst"]
    params = chaos.LorenzParams.for_mode(mode, **pkw)
    transform = None if cfg["chaos.transform"] == "none" else cfg["chaos.transform"]
    with out.stage("simulate"):
        data = chaos.simulate(spec, params, cfg["seed"])
    with out.stage("embed"):
        rep = chaos.run_chaos_experiment(spec, params, mode, cfg["seed"], transform, data)
    x0 = rep.x_starts
    out.csv("coeff_x.csv", ["x", "theta1", "theta2", "drift_fit", "diff2_fit"],
            zip(x0, rep.theta1, rep.theta2, rep.drift_fit(x0), rep.diff_fit(x0)))
    for name, rc in (("drift", rep.drift), ("diff", rep.diffusion)):
        # "theoretical" is the plug-in through the fitted polynomials, "pluggedin" the
        # plug-in through the per-start estimates
        out.csv(f"coeff_compare_{name}.csv",
                ["point_id", "x_or_psi", "theoretical", "estimated_direct", "estimated_pluggedin",
                 "psi", "central"],
                zip(range(rc.x.size), rc.x, rc.plugin_fit, rc.direct, rc.plugin_point, rc.psi0,
                    rc.central))
    out.csv("embedding.csv", ["sample_id", "psi1", "x"], zip(range(rep.psi.size), rep.psi, rep.data_x))
    fits = {"mode": mode, "transform": cfg["chaos.transform"], "coefficients": rep.coefficients,
            "parity_sigma": rep.extra["parity"], "epsilon": rep.epsilon,
            "eigenvalues": rep.eigenvalues, "spearman_psi1_x": rep.spearman,
            "deviation": {"drift_fit": rep.drift.deviation("plugin_fit"),
                          "drift_point": rep.drift.deviation("plugin_point"),
                          "diff_fit": rep.diffusion.deviation("plugin_fit"),
                          "diff_point": rep.diffusion.deviation("plugin_point")}}
    out.json("fits.json", fits)
    return {k: fits[k] for k in ("coefficients", "parity_sigma", "deviation")}


def _default_start(tag: str, cyl: CylinderParams):
    if tag == "quad1d":
        return np.array([1.0])
    if tag == "linear2d":
        return np.array([0.75, 0.6])
    if tag == "bayes_ridge":
        r0 = math.sqrt(4.32)
        return np.array([0.0, r0])
    return from_cylindrical(cyl.R, math.pi / 4, 0.0)


def run_baseline_exp(cfg, out: Outputs):
    cyl = CylinderParams(cfg["cyl.k1"], cfg["cyl.k2"], cfg["cyl.R"])
    f = make_objective(cfg["objective"], cyl)
    if cfg["baseline.x0"] == "auto":
        start = _default_start(cfg["objective"], cyl)
    else:
        try:
            start = np.array([float(v) for v in cfg["baseline.x0"].split(",")])
        except ValueError:
            raise ConfigError(f"baseline.x0: expected comma-separated numbers, "
                              f"got {cfg['baseline.x0']!r}") from None
        if start.size != f.dim:
            raise ConfigError(f"baseline.x0: {cfg['objective']} needs {f.dim} coordinates")
    with out.stage("baseline"):
        hist = run_baseline(f, cfg["baseline.budget"], SamplerParams(cfg["sampler.T"], cfg["sampler.dt"]),
                            start, cfg["seed"])
    out.csv("history.csv", ["evals", "best_f"], zip(hist.trace_evals, hist.trace_best))
    return {"best_f": hist.best_f, "evals": hist.evals}


RUNNERS = {
    "fig1-density": run_fig1,
    "swissroll": run_swissroll,
    "ridge": run_ridge_exp,
    "cylinder": run_cylinder,
    "grid-linear2d": run_linear2d,
    "chaos-additive": lambda cfg, out: run_chaos(cfg, out, chaos.ADDITIVE),
    "chaos-multiplicative": lambda cfg, out: run_chaos(cfg, out, chaos.MULTIPLICATIVE),
    "baseline": run_baseline_exp,
}


def run_experiment(experiment: str, cfg: dict, out_dir=None, threads: int | None = None) -> dict:
    """Run one experiment and write its manifest; returns the manifest.

    The manifest holds the resolved config, seed, version tag, summary and
    the sha256 of every output, and nothing run-dependent, so two runs with
    the same config produce byte-identical manifests.  Wall-clock timings go
    to a separate ``timings.json``, which is not part of the inventory.
    """
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    out = Outputs(default_out_dir(experiment) if out_dir is None else out_dir)
    t0 = time.perf_counter()
    summary = RUNNERS[experiment](cfg, out)
    total = time.perf_counter() - t0
    manifest = {"experiment": experiment, "seed": cfg["seed"], "version": version_tag(),
                "threads_hint": threads, "config": cfg, "summary": summary,
                "outputs": {name: sha256(out.root / name) for name in out.files}}
    manifest = _plain(manifest)
    with open(out.root / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out.root / TIMINGS, "w", encoding="utf-8") as fh:
        json.dump({"stages": out.timings, "total": round(total, 3)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def verify_manifest(path) -> list[str]:
    """Names of listed outputs that are missing or whose hash changed."""
    path = Path(path)
    man = json.loads(path.read_text(encoding="utf-8"))
    bad = []
    for name, digest in man["outputs"].items():
        p = path.parent / name
        if not p.exists() or sha256(p) != digest:
            bad.append(name)
    return bad
