"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Heavy ensembles run through the resumable sweep layer into a cache
directory (default <repo>/.cache/acceptance, override with the
SPINSQUEEZE_ACCEPT_CACHE environment variable).  The first run computes
for real (about an hour on one core, dominated by the clean-lattice
scaling sweep); later runs reuse the content-hashed results and finish
in seconds.  Delete the cache directory to force a recomputation.

Tolerance policy: the scaling and method-agreement criteria (5, 6, 7)
pass rel_tol=1e-6 explicitly because the observables they gate carry
statistical errors several orders of magnitude above the integration
error, and the default 1e-10 tolerance would multiply the runtime for
no decision-relevant accuracy.  The conservation criterion (2) runs at
default tolerances, since those are exactly what it gates.

Statistical gates use seeds pinned here; each was verified to pass with
margin, so a failure indicates a real regression, not bad luck.
"""

import os
import time
from pathlib import Path

import numpy as np

from spinsqueeze import analysis, cli, ctwa, dtwa, ed, ensemble, persist
from spinsqueeze.dynamics import sample_time_grid
from spinsqueeze.lattice import (
    CouplingTable,
    LatticeRealization,
    ModelParams,
    build_couplings,
    build_lattice,
)
from spinsqueeze.observables import ObservableSeries

CACHE = Path(os.environ.get(
    "SPINSQUEEZE_ACCEPT_CACHE",
    str(Path(__file__).resolve().parent.parent / ".cache" / "acceptance"),
))


def _report(criterion: int, ok: bool, detail: str, t0: float) -> None:
    line = (f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail} "
            f"[{time.time() - t0:.0f}s]")
    print(line)
    assert ok, line


def _cached_sweep(name: str, plan: ensemble.SweepPlan):
    """Run (or resume) a sweep under the cache; return series keyed by point."""
    out = CACHE / name
    summary = ensemble.run_sweep(plan, out)
    bad = {k: v for k, v in summary.items() if v["status"] != "complete"}
    assert not bad, f"sweep {name} has incomplete points: {bad}"
    return {pt: ensemble.load_point(out, pt.label).series for pt in plan.points}, out


def _worst_band_ratio(values, reference, band) -> float:
    """max |values - reference| / band; a zero band demands exact equality."""
    dev = np.abs(np.asarray(values) - np.asarray(reference))
    band = np.asarray(band)
    ratio = np.where(band > 0, dev / np.where(band > 0, band, 1.0),
                     np.where(dev > 0, np.inf, 0.0))
    return float(ratio.max())


def _cached_series(name: str, builder):
    path = CACHE / f"{name}.csv"
    if path.exists():
        return ObservableSeries.load_csv(path)
    series = builder()
    series.save_csv(path)
    return series


def test_01_calibration_squeezing_starts_at_unity():
    t0 = time.time()
    worst, cases = 0.0, []
    for L, p, delta, method, seed in [(12, 0.3, -1.0, "dtwa", 11),
                                      (6, 0.5, 0.5, "ctwa", 12)]:
        lat = build_lattice(L, p, seed=seed)
        ct = build_couplings(lat, ModelParams(delta=delta))
        runner = dtwa.run_ensemble if method == "dtwa" else ctwa.run_ctwa_ensemble
        s = runner(ct, np.array([0.0, 0.05]), 4096, seed + 1)
        dev = abs(s.values["xi2"][0] - 1.0) / s.errors["xi2"][0]
        worst = max(worst, dev)
        cases.append(f"{method} N={lat.N}: {dev:.2f} sigma")
    _report(1, worst < 5.0, f"xi2(0)=1 within 5 sigma ({'; '.join(cases)})", t0)


def test_02_conservation_at_default_tolerances():
    t0 = time.time()
    points = tuple(
        ensemble.SweepPoint(p=p, delta=-1.0, L=L, n_realizations=1,
                            n_traj=16, t_max=200.0)
        for p, sizes in [(0.0, (4, 8, 16)), (0.5, (6, 11, 23))]
        for L in sizes
    )
    # default rel_tol/abs_tol on purpose: they are what this criterion gates
    plan = ensemble.SweepPlan(points=points, seed=202, points_per_decade=10)
    _, out = _cached_sweep("conservation", plan)
    manifest = persist.read_json(out / "manifest.json")
    worst = {"norm_dev": 0.0, "sz_drift": 0.0, "energy_drift": 0.0}
    spins = []
    for label in sorted(manifest["points"]):
        for rec in manifest["points"][label]["realizations"].values():
            cons = rec["conservation"]
            assert cons["n_failed"] == 0, f"{label}: integrator failures"
            for key in worst:
                worst[key] = max(worst[key], cons[key])
            spins.append(rec["n_spins"])
    ok = all(v < 1e-6 for v in worst.values())
    _report(2, ok,
            f"Jt<=200, N={sorted(spins)}: norm {worst['norm_dev']:.1e}, "
            f"Sz {worst['sz_drift']:.1e}, energy {worst['energy_drift']:.1e}, "
            f"all < 1e-6", t0)


def test_03_semiclassical_methods_match_exact_oracle():
    t0 = time.time()
    # (a) sampled ensemble vs exact magnetization on a fixed diluted
    # realization; the spread geometry keeps couplings inside the
    # semiclassical window so deviations are pure sampling noise
    lat = build_lattice(8, 0.875, seed=100)
    ct = build_couplings(lat, ModelParams(delta=-1.0))
    times = sample_time_grid(1.0, 40)
    exact = ed.evolve_exact(ct, times)
    s = dtwa.run_ensemble(ct, times, 100_000, seed=300)
    ratio_a = _worst_band_ratio(s.values["Sx"], exact.values["Sx"],
                                3.0 * s.errors["Sx"])

    # (b) two spins, one cluster: the cluster basis is complete, so xi2
    # must match the exact curve to sampling error at every time
    sites = np.array([[0, 0], [0, 1]], dtype=np.int64)
    ct2 = build_couplings(LatticeRealization(L=2, p=0.0, seed=0, sites=sites),
                          ModelParams(delta=-1.0))
    t2 = sample_time_grid(10.0, 25)
    ex2 = ed.evolve_exact(ct2, t2)
    c2 = ctwa.run_ctwa_ensemble(ct2, t2, 16_384, seed=301)
    ratio_b = _worst_band_ratio(c2.values["xi2"], ex2.values["xi2"],
                                c2.errors["xi2"])

    ok = ratio_a < 1.0 and ratio_b < 3.0
    _report(3, ok,
            f"N=8 Sx within 3 sigma of exact for Jt<=1 (worst {ratio_a:.2f} "
            f"of band); N=2 cluster xi2 within sampling error "
            f"(worst {ratio_b:.2f} sigma)", t0)


def test_04_ising_limit_magnetization_is_exact():
    t0 = time.time()
    n = 12
    ct = CouplingTable(matrix=np.ones((n, n)) - np.eye(n),
                       params=ModelParams(delta=1.0, j_perp=0.0))
    times = sample_time_grid(3.0, 25)
    exact = ed.evolve_exact(ct, times)
    s = _cached_series(
        "ising_oracle",
        lambda: dtwa.run_ensemble(ct, times, 100_000, seed=4))
    ratio = _worst_band_ratio(s.values["Sx"], exact.values["Sx"],
                              3.0 * s.errors["Sx"])
    _report(4, ratio < 1.0,
            f"N=12 all-to-all, zero transverse coupling: Sx within 3 sigma "
            f"of exact at all {len(times)} times (worst {ratio:.2f} of band)", t0)


def test_05_clean_lattice_squeezing_scales():
    t0 = time.time()
    points = tuple(
        ensemble.SweepPoint(p=0.0, delta=-1.0, L=L, n_realizations=1,
                            n_traj=2048, t_max=8.0)
        for L in (8, 12, 16, 24, 32)
    )
    plan = ensemble.SweepPlan(points=points, seed=500, points_per_decade=40,
                              rel_tol=1e-6, abs_tol=1e-8)
    series, _ = _cached_sweep("clean_scaling", plan)
    by_L = {pt.L: s for pt, s in series.items()}
    extracts = analysis.extract_xi_opt(by_L)
    ns = [float(by_L[L].meta["mean_spins"]) for L in sorted(extracts)]
    # Unweighted fit on purpose.  The per-point error bars come from the
    # correlation-free propagation, which is a deliberate overestimate
    # whose inflation grows as the optimum deepens (near-constant absolute
    # error against a shrinking signal); weighting by them hands the whole
    # fit to the two smallest sizes, where the local slope is noise.  The
    # quoted uncertainty is rescaled by the residual scatter instead.
    fit = analysis.fit_power_law(
        ns, [extracts[L].xi2_opt for L in sorted(extracts)])
    nu = fit.exponent
    nu_err = fit.exponent_err * np.sqrt(fit.chi2 / fit.dof)
    tags = {L: extracts[L].classification for L in sorted(extracts)}
    ok = fit.fitted and 0.5 <= nu <= 0.9
    _report(5, ok,
            f"xi2_opt vs N over N={[int(x) for x in ns]}: "
            f"nu = {nu:.3f} +- {nu_err:.3f} in [0.5, 0.9] "
            f"(classifications {sorted(set(tags.values()))})", t0)


def test_06_diluted_magnetization_power_law():
    t0 = time.time()
    # long horizon: the planar magnetization dephases toward its
    # random-phase floor slowly, and cutting the window early biases the
    # fitted exponent low; trajectory count stays small because the
    # realization-to-realization scatter dominates the error budget
    points = tuple(
        ensemble.SweepPoint(p=0.7, delta=-2.0, L=L, n_realizations=10,
                            n_traj=128, t_max=1000.0)
        for L in (12, 16, 24, 32)
    )
    plan = ensemble.SweepPlan(points=points, seed=600, points_per_decade=12,
                              rel_tol=1e-6, abs_tol=1e-8)
    series, _ = _cached_sweep("diluted_magnetization", plan)
    ns, ms, errs, converged = [], [], [], []
    for pt in plan.points:
        s = series[pt]
        lm = analysis.extract_mbar(s)
        ns.append(float(s.meta["mean_spins"]))
        ms.append(lm.mbar)
        errs.append(lm.err)
        converged.append(lm.converged)
    fit = analysis.fit_power_law(ns, ms, errs)
    alpha = fit.exponent
    ok = fit.fitted and abs(alpha - 0.5) <= 0.15
    _report(6, ok,
            f"late-time planar magnetization over N~{[int(x) for x in ns]} "
            f"(10 realizations each): alpha = {alpha:.3f} +- "
            f"{fit.exponent_err:.3f}, within 0.5 +- 0.15 "
            f"({sum(converged)}/{len(converged)} windows converged)", t0)


def test_07_pair_cluster_method_agrees_with_sampled():
    t0 = time.time()
    def plan_for(method):
        points = tuple(
            ensemble.SweepPoint(p=p, delta=-1.0, L=20, n_realizations=2,
                                n_traj=2048, t_max=6.0, method=method)
            for p in (0.25, 0.5)
        )
        # same master seed => identical lattices point by point
        return ensemble.SweepPlan(points=points, seed=700,
                                  points_per_decade=40,
                                  rel_tol=1e-6, abs_tol=1e-8)

    dser, _ = _cached_sweep("method_agreement_dtwa", plan_for("dtwa"))
    cser, _ = _cached_sweep("method_agreement_ctwa", plan_for("ctwa"))
    worst, notes = 0.0, []
    for (dpt, ds), (cpt, cs) in zip(sorted(dser.items(), key=lambda kv: kv[0].p),
                                    sorted(cser.items(), key=lambda kv: kv[0].p)):
        assert dpt.p == cpt.p
        window = (ds.t > 0) & (ds.values["xi2"] < 1.0)
        assert window.any(), f"no squeezing window at p={dpt.p}"
        combined = np.hypot(ds.errors["xi2"], cs.errors["xi2"])
        ratio = np.abs(ds.values["xi2"] - cs.values["xi2"]) / combined
        r = float(ratio[window].max())
        worst = max(worst, r)
        notes.append(f"p={dpt.p:g}: {window.sum()} pts, worst {r:.2f} sigma")
    _report(7, worst < 3.0,
            f"xi2 agreement inside the squeezing window, L=20 "
            f"({'; '.join(notes)})", t0)


def test_08_analysis_pipeline_oracles():
    t0 = time.time()
    checks = []

    # exact power-law recovery
    ns = np.array([64.0, 256.0, 1024.0, 4096.0])
    fit = analysis.fit_power_law(ns, 3.7 * ns ** (-2.0 / 3.0),
                                 np.full(4, 0.01))
    checks.append(("fit recovery", abs(fit.exponent - 2.0 / 3.0) < 1e-10))

    # frozen crossing-interpolation example
    est = analysis.extract_pc([0.6, 0.7], [0.3, 0.1], [0.02, 0.02], 0.2)
    checks.append(("crossing estimate",
                   abs(est.p_c - 0.65) < 1e-12
                   and abs(est.delta_pc - 0.05049752469181039) < 1e-15
                   and round(est.delta_pc, 4) == 0.0505))

    # an early deep dip must never come out classified as scalable
    t = sample_time_grid(50.0, 20)
    base = dict.fromkeys(["Sx", "Sy", "Sz", "Vyy", "Vzz", "Vyz", "mxy"])
    xi2 = 1.0 - 0.8 * np.exp(-((np.log(np.maximum(t, 1e-3) / 1.0)) ** 2) / 0.18)
    vals = {k: np.zeros_like(t) for k in base}
    vals["xi2"] = xi2
    errs = {k: np.full_like(t, 0.01) for k in vals}
    s = ObservableSeries(t=t, values=vals, errors=errs,
                         flags=np.zeros(len(t), dtype=np.int64),
                         method="dtwa", n_samples=100, meta={})
    e = analysis.extract_xi_opt({4: s})[4]
    checks.append(("early-time rejection",
                   e.classification != analysis.SCALABLE and e.t_opt < 5.0))

    # magnetization gate: each convergence criterion trips independently
    tt = np.linspace(0.0, 100.0, 200)

    def mag_series(mxy):
        vals = {k: np.zeros_like(tt) for k in base}
        vals["xi2"] = np.ones_like(tt)
        vals["mxy"] = mxy
        errs = {k: np.full_like(tt, 0.001) for k in vals}
        return ObservableSeries(t=tt, values=vals, errors=errs,
                                flags=np.zeros(len(tt), dtype=np.int64),
                                method="dtwa", n_samples=100, meta={})

    drifting = analysis.extract_mbar(mag_series(0.5 - 0.05 * tt / tt[-1]))
    stepped = analysis.extract_mbar(
        mag_series(np.where(tt < tt[-20], 0.45, 0.40)))
    settled = analysis.extract_mbar(mag_series(np.full_like(tt, 0.42)))
    checks.append(("magnetization gate",
                   (not drifting.converged)
                   and drifting.projected_change > 0.0025
                   and (not stepped.converged)
                   and abs(stepped.m1 - stepped.m2) / stepped.sigma >= 2.0
                   and stepped.projected_change < 0.0025
                   and settled.converged))

    # defect-density conversion at the usability optimum
    v = analysis.poisson_effective_vacancy(1.0)
    checks.append(("defect conversion",
                   abs(v - 0.632) < 5e-4 and abs(v - (1 - np.exp(-1.0))) < 1e-15))

    failed = [name for name, ok in checks if not ok]
    _report(8, not failed,
            f"{len(checks)} pipeline oracles ({', '.join(n for n, _ in checks)})"
            + (f"; FAILED: {failed}" if failed else ""), t0)


def test_09_pipeline_end_to_end_miniature_grid():
    t0 = time.time()
    out = CACHE / "mini_grid"
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "grid_config.json"
    persist.write_json(cfg_path, {
        "model": {"delta": [-2.0, -1.0, 0.0]},
        "lattice": {"L": [2, 3], "p": [0.2, 0.5, 0.8]},
        "ensemble": {"n_realizations": 2, "n_traj": 0, "method": "exact",
                     "t_max": 40.0},
        "integrator": {"points_per_decade": 18},
        "seed": 900,
    })
    rc_sim = cli.main(["simulate", "--config", str(cfg_path),
                       "--out-dir", str(out / "run")])
    rc_ana = cli.main(["analyze", "--in-dir", str(out / "run"),
                       "--mode", "phase-diagram"])

    _, grid_cols, grid_rows = persist.read_csv(out / "run" / "analysis" /
                                               "phase_diagram.csv")
    _, b_cols, b_rows = persist.read_csv(out / "run" / "analysis" /
                                         "boundary.csv")
    ok = (
        rc_sim == 0 and rc_ana == 0
        and grid_cols == ["p", "delta", "alpha", "alpha_err", "nu", "nu_err",
                          "hatched"]
        and len(grid_rows) == 9
        and all(r[6] in ("0", "1") for r in grid_rows)
        and b_cols == ["delta", "diagnostic", "threshold", "p_c", "delta_pc",
                       "bound"]
        and len(b_rows) == 6
        and {r[1] for r in b_rows} == {"alpha", "nu"}
        and all(r[5] in ("", "lower", "upper", "insufficient") for r in b_rows)
        and all(0.2 <= float(r[3]) <= 0.8 for r in b_rows if r[3])
    )
    _report(9, ok,
            f"3x3 grid through simulate+analyze: {len(grid_rows)} grid rows, "
            f"{len(b_rows)} boundary rows, schema-valid tables "
            f"(exact boundary values unasserted)", t0)
