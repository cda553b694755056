"""Disorder sweeps: seed bookkeeping, error combination across realizations,
and a resumable on-disk result tree.

Every random draw is pinned by (master seed, point index, realization
index) through named substreams, so re-running a sweep reproduces the
same bytes; completed work is recognized by content hash and skipped.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, ctwa, dtwa, ed, persist
from .dynamics import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, IntegratorConfig, sample_time_grid
from .lattice import ModelParams, build_couplings, build_lattice
from .observables import OBSERVABLE_KEYS, ObservableSeries

METHODS = ("dtwa", "ctwa", "exact")

# substream tags for seed derivation
_LATTICE, _TRAJECTORIES = 0, 1


@dataclass(frozen=True)
class SweepPoint:
    """One (p, delta, L) grid point and its sampling budget."""

    p: float
    delta: float
    L: int
    n_realizations: int
    n_traj: int
    t_max: float
    method: str = "dtwa"
    t_max_warning: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError("p must be in [0, 1)")
        if self.L < 2:
            raise ValueError("L must be at least 2")
        if self.n_realizations < 1:
            raise ValueError("need at least one realization")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @property
    def label(self) -> str:
        return f"point_p{self.p:g}_d{self.delta:g}_L{self.L}"

    def to_dict(self) -> dict:
        d = {
            "p": self.p, "delta": self.delta, "L": self.L,
            "n_realizations": self.n_realizations, "n_traj": self.n_traj,
            "t_max": self.t_max, "method": self.method,
        }
        if self.t_max_warning:
            d["t_max_warning"] = self.t_max_warning
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPoint":
        return cls(
            p=float(d["p"]), delta=float(d["delta"]), L=int(d["L"]),
            n_realizations=int(d["n_realizations"]), n_traj=int(d["n_traj"]),
            t_max=float(d["t_max"]), method=d.get("method", "dtwa"),
            t_max_warning=d.get("t_max_warning"),
        )


@dataclass(frozen=True)
class SweepPlan:
    points: tuple[SweepPoint, ...]
    seed: int
    points_per_decade: int = 40
    rel_tol: float = DEFAULT_REL_TOL
    abs_tol: float = DEFAULT_ABS_TOL
    batch_size: int = 2048
    j_perp: float = 1.0
    J: float = 1.0
    exponent: float = 3.0
    boundary: str = "open"

    def __post_init__(self):
        if not self.points:
            raise ValueError("plan has no points")
        labels = [pt.label for pt in self.points]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate (p, delta, L) points in plan")

    def to_dict(self) -> dict:
        return {
            "points": [pt.to_dict() for pt in self.points],
            "seed": self.seed,
            "points_per_decade": self.points_per_decade,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "batch_size": self.batch_size,
            "j_perp": self.j_perp,
            "J": self.J,
            "exponent": self.exponent,
            "boundary": self.boundary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPlan":
        return cls(
            points=tuple(SweepPoint.from_dict(p) for p in d["points"]),
            seed=int(d["seed"]),
            points_per_decade=int(d.get("points_per_decade", 40)),
            rel_tol=float(d.get("rel_tol", DEFAULT_REL_TOL)),
            abs_tol=float(d.get("abs_tol", DEFAULT_ABS_TOL)),
            batch_size=int(d.get("batch_size", 2048)),
            j_perp=float(d.get("j_perp", 1.0)),
            J=float(d.get("J", 1.0)),
            exponent=float(d.get("exponent", 3.0)),
            boundary=d.get("boundary", "open"),
        )


def derive_seed(master: int, point_idx: int, realization: int, stream: int) -> int:
    """Independent substream seed; collision-safe by SeedSequence entropy mixing."""
    ss = np.random.SeedSequence([int(master), int(point_idx), int(realization), int(stream)])
    return int(ss.generate_state(1, np.uint64)[0])


def plan_tmax(
    pilot_topt: float | None = None,
    default_tmax: float = 500.0,
    override: float | None = None,
) -> tuple[float, str | None]:
    """Simulation horizon policy: 10x the pilot squeezing time when one is
    known, a long fixed default otherwise.  An explicit override always wins
    but earns a manifest warning when it undercuts the policy."""
    target = 10.0 * pilot_topt if pilot_topt is not None else float(default_tmax)
    if override is None:
        return target, None
    override = float(override)
    warning = None
    if pilot_topt is not None and override < 10.0 * pilot_topt:
        warning = (
            f"t_max={override:g} is below 10 x pilot t_opt={pilot_topt:g}; "
            "late-time observables may not be converged"
        )
    return override, warning


@dataclass
class EnsembleResult:
    """Disorder-combined series plus the two error components.

    series.errors holds the combined standard error
    sqrt(sigma_dis^2 + mean(sigma_traj^2)/n); the addends are kept
    separately for diagnostics.
    """

    series: ObservableSeries
    sigma_dis: dict
    sigma_traj: dict

    def save(self, point_dir: str | Path, extra_meta: dict | None = None) -> None:
        point_dir = Path(point_dir)
        self.series.save_csv(point_dir / "ensemble.csv", meta=extra_meta)
        cols = ["t"]
        arrays = [self.series.t]
        for key in OBSERVABLE_KEYS:
            cols.append(f"sigma_dis_{key}")
            arrays.append(self.sigma_dis[key])
        for key in OBSERVABLE_KEYS:
            cols.append(f"sigma_traj_{key}")
            arrays.append(self.sigma_traj[key])
        persist.write_csv(point_dir / "components.csv", cols, zip(*arrays), {})


def combine_disorder(series_list: list[ObservableSeries]) -> EnsembleResult:
    """Average observables over disorder realizations on a shared time grid.

    The combined standard error adds the realization-to-realization
    scatter and the mean squared trajectory error in quadrature; with a
    single realization the scatter term is undefined and the result is
    flagged in meta instead.
    """
    if not series_list:
        raise ValueError("no realizations to combine")
    n = len(series_list)
    t0 = series_list[0].t
    for s in series_list[1:]:
        if len(s.t) != len(t0) or np.any(s.t != t0):
            raise ValueError("realizations must share one time grid")
        if s.method != series_list[0].method:
            raise ValueError("realizations mix methods")

    values, errors, sigma_dis, sigma_traj = {}, {}, {}, {}
    for key in OBSERVABLE_KEYS:
        vals = np.stack([s.values[key] for s in series_list])
        errs = np.stack([s.errors[key] for s in series_list])
        mean = vals.mean(axis=0)
        straj = np.sqrt((errs**2).mean(axis=0) / n)
        if n >= 2:
            sdis = np.sqrt(((vals - mean) ** 2).sum(axis=0) / (n * (n - 1)))
        else:
            sdis = np.zeros_like(mean)
        values[key] = mean
        sigma_dis[key] = sdis
        sigma_traj[key] = straj
        errors[key] = np.sqrt(sdis**2 + straj**2)

    flags = series_list[0].flags.astype(int)
    for s in series_list[1:]:
        flags = flags | s.flags.astype(int)
    series = ObservableSeries(
        t=t0.copy(),
        values=values,
        errors=errors,
        flags=flags,
        method=series_list[0].method,
        n_samples=n,
        meta={"n_realizations": n, "single_realization": n == 1},
    )
    return EnsembleResult(series=series, sigma_dis=sigma_dis, sigma_traj=sigma_traj)


def _compute_realization(plan: SweepPlan, point_idx: int, k: int) -> tuple[ObservableSeries, dict]:
    point = plan.points[point_idx]
    lat_seed = derive_seed(plan.seed, point_idx, k, _LATTICE)
    traj_seed = derive_seed(plan.seed, point_idx, k, _TRAJECTORIES)
    lat = build_lattice(point.L, point.p, lat_seed, boundary=plan.boundary)
    params = ModelParams(J=plan.J, delta=point.delta, exponent=plan.exponent,
                         j_perp=plan.j_perp)
    ct = build_couplings(lat, params)
    times = sample_time_grid(point.t_max, plan.points_per_decade)
    icfg = IntegratorConfig(rel_tol=plan.rel_tol, abs_tol=plan.abs_tol)
    if point.method == "dtwa":
        series = dtwa.run_ensemble(ct, times, point.n_traj, traj_seed, icfg, plan.batch_size)
    elif point.method == "ctwa":
        series = ctwa.run_ctwa_ensemble(ct, times, point.n_traj, traj_seed, icfg, plan.batch_size)
    else:
        series = ed.evolve_exact(ct, times)
    info = {
        "n_spins": lat.N,
        "lattice_seed": lat_seed,
        "trajectory_seed": traj_seed,
        "p": point.p,
        "delta": point.delta,
        "L": point.L,
        "realization": k,
    }
    return series, info


def _load_manifest(path: Path, plan: SweepPlan) -> dict:
    if path.exists():
        manifest = persist.read_json(path)
        if manifest.get("plan") != plan.to_dict():
            raise ValueError(
                "output directory holds a different plan; use a fresh directory"
            )
        return manifest
    return {
        "package_version": __version__,
        "plan": plan.to_dict(),
        "points": {},
    }


def run_sweep(
    plan: SweepPlan,
    out_dir: str | Path,
    workers: int = 1,
    tag_meta: dict | None = None,
) -> dict:
    """Execute (or resume) every realization of every plan point.

    Returns a summary {label: {"status", "computed", "reused"}}.  Results
    are independent of `workers`: seeds are assigned by index and merges
    happen in realization order.  tag_meta entries (config hash, tool
    version) are stamped into every CSV header; they must be stable across
    reruns or the content-hash resume will recompute everything.
    """
    if workers < 1:
        raise ValueError("workers must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    manifest = _load_manifest(manifest_path, plan)
    summary = {}

    for point_idx, point in enumerate(plan.points):
        label = point.label
        point_dir = out_dir / label
        point_dir.mkdir(exist_ok=True)
        entry = manifest["points"].setdefault(
            label, {"status": "pending", "realizations": {}}
        )
        if point.t_max_warning:
            entry["t_max_warning"] = point.t_max_warning

        loaded: dict[int, ObservableSeries] = {}
        to_compute = []
        for k in range(point.n_realizations):
            rec = entry["realizations"].get(str(k))
            path = point_dir / f"realization_{k}.csv"
            if (
                rec
                and rec.get("status") == "ok"
                and path.exists()
                and persist.sha256_file(path) == rec.get("sha256")
            ):
                loaded[k] = ObservableSeries.load_csv(path)
            else:
                to_compute.append(k)

        failures = {}
        t_point = time.monotonic()

        def job(k: int):
            t0 = time.monotonic()
            try:
                series, info = _compute_realization(plan, point_idx, k)
                return k, series, info, time.monotonic() - t0, None
            except Exception as exc:  # noqa: BLE001 - recorded, not swallowed
                return k, None, None, time.monotonic() - t0, f"{type(exc).__name__}: {exc}"

        if workers == 1 or len(to_compute) <= 1:
            results = [job(k) for k in to_compute]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, to_compute))

        # commit in realization order regardless of scheduling
        for k, series, info, wall, err in sorted(results):
            if err is not None:
                failures[k] = err
                entry["realizations"][str(k)] = {"status": err, "wall_time": wall}
                continue
            path = point_dir / f"realization_{k}.csv"
            series.save_csv(path, meta={**(tag_meta or {}), **info})
            entry["realizations"][str(k)] = {
                "status": "ok",
                "file": path.name,
                "sha256": persist.sha256_file(path),
                "wall_time": wall,
                "conservation": series.meta.get("conservation"),
                **info,
            }
            loaded[k] = series
            persist.write_json(manifest_path, manifest)

        if failures:
            entry["status"] = "incomplete"
        else:
            ordered = [loaded[k] for k in range(point.n_realizations)]
            result = combine_disorder(ordered)
            spins = [
                int(entry["realizations"][str(k)].get("n_spins", 0))
                for k in range(point.n_realizations)
            ]
            result.save(
                point_dir,
                extra_meta={
                    **(tag_meta or {}),
                    "p": point.p,
                    "delta": point.delta,
                    "L": point.L,
                    "spins_per_realization": ",".join(map(str, spins)),
                    "mean_spins": float(np.mean(spins)) if spins else 0.0,
                },
            )
            entry["ensemble_sha256"] = persist.sha256_file(point_dir / "ensemble.csv")
            entry["status"] = "complete"
        entry["wall_time"] = time.monotonic() - t_point
        persist.write_json(manifest_path, manifest)
        summary[label] = {
            "status": entry["status"],
            "computed": len(results),
            "reused": len(loaded) - sum(1 for r in results if r[4] is None),
            "failures": failures,
        }
    return summary


def load_point(out_dir: str | Path, label: str) -> EnsembleResult:
    """Rehydrate a completed point from disk (ensemble.csv + components.csv)."""
    point_dir = Path(out_dir) / label
    series = ObservableSeries.load_csv(point_dir / "ensemble.csv")
    _, cols = persist.read_csv_numeric(point_dir / "components.csv")
    sigma_dis = {k: cols[f"sigma_dis_{k}"] for k in OBSERVABLE_KEYS}
    sigma_traj = {k: cols[f"sigma_traj_{k}"] for k in OBSERVABLE_KEYS}
    return EnsembleResult(series=series, sigma_dis=sigma_dis, sigma_traj=sigma_traj)
