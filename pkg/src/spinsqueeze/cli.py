"""Command-line front end: simulate, analyze, hist-jeff, oracle, poisson.

Every command is deterministic given its config and seed.  Exit codes:
0 success, 1 usage or config error, 2 runtime failure, 3 partial results.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, config, ctwa, dtwa, ed, ensemble, persist
from .dynamics import IntegratorConfig, sample_time_grid
from .lattice import LatticeRealization, ModelParams, build_couplings, build_lattice, effective_fields
from .observables import ObservableSeries


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is exit 1
    def error(self, message):
        raise config.ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="spinsqueeze", description=__doc__)
    parser.add_argument("--version", action="version", version=f"spinsqueeze {__version__}")
    parser.add_argument("--describe-schema", action="store_true",
                        help="print the JSON config schema and exit")
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="run a disorder sweep from a config file")
    sim.add_argument("--config", required=True, help="JSON config path")
    sim.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config entry (dotted path)")
    sim.add_argument("--out-dir", default=None)
    sim.add_argument("--workers", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="extract observables from a result tree")
    ana.add_argument("--in-dir", required=True)
    ana.add_argument("--mode", required=True,
                     choices=["squeezing", "magnetization", "topt", "phase-diagram"])
    ana.add_argument("--out-dir", default=None, help="default: <in-dir>/analysis")
    ana.add_argument("--early-cutoff", type=float, default=analysis.EARLY_TIME_CUTOFF)
    ana.add_argument("--alpha-threshold", type=float, default=0.1)
    ana.add_argument("--nu-threshold", type=float, default=0.1)
    ana.add_argument("--p-c", type=float, default=None,
                     help="critical dilution for the topt-mode gamma fit")
    ana.add_argument("--n-ref", type=float, default=5.0e3)
    ana.set_defaults(func=cmd_analyze)

    hist = sub.add_parser("hist-jeff", help="per-spin summed coupling histograms")
    hist.add_argument("--config", required=True)
    hist.add_argument("--set", dest="overrides", action="append", default=[])
    hist.add_argument("--out-dir", default=None)
    hist.add_argument("--bins", type=int, default=60)
    hist.set_defaults(func=cmd_hist_jeff)

    orc = sub.add_parser("oracle", help="semiclassical methods vs exact diagonalization")
    orc.add_argument("--n", type=int, required=True, help="spins on a unit-spaced chain")
    orc.add_argument("--delta", type=float, default=-1.0)
    orc.add_argument("--method", choices=["dtwa", "ctwa"], default="ctwa")
    orc.add_argument("--n-traj", type=int, default=4096)
    orc.add_argument("--t-max", type=float, default=10.0)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--points-per-decade", type=int, default=20)
    orc.add_argument("--out-dir", default=None)
    orc.set_defaults(func=cmd_oracle)

    poi = sub.add_parser("poisson", help="effective vacancy for Poisson defect counts")
    poi.add_argument("density", type=float, help="mean defects per site")
    poi.set_defaults(func=cmd_poisson)
    return parser


def _stamp(cfg: dict, mode: str | None = None) -> dict:
    meta = {"package_version": __version__, "config_hash": config.config_hash(cfg)}
    if mode:
        meta["mode"] = mode
    return meta


def cmd_simulate(args) -> int:
    cfg = config.load_config(args.config)
    if args.overrides:
        cfg = config.apply_overrides(cfg, args.overrides)
    out_dir = config.resolve_out_dir(cfg, args.out_dir)
    plan = config.build_plan(cfg)
    for pt in plan.points:
        if pt.t_max_warning:
            print(f"warning: {pt.t_max_warning}", file=sys.stderr)

    tag = {"sim_hash": config.sim_hash(cfg), "package_version": __version__}
    summary = ensemble.run_sweep(plan, out_dir, workers=args.workers, tag_meta=tag)
    persist.write_json(out_dir / "config.json", {
        "config": cfg,
        "config_hash": config.config_hash(cfg),
        "sim_hash": config.sim_hash(cfg),
        "package_version": __version__,
    })

    partial = False
    for label, info in summary.items():
        print(f"{label}: {info['status']} "
              f"(computed {info['computed']}, reused {info['reused']})")
        for k, msg in info["failures"].items():
            partial = True
            print(f"  realization {k} failed: {msg}", file=sys.stderr)
        if info["status"] != "complete":
            partial = True
    return 3 if partial else 0


def _load_tree(in_dir: Path):
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise config.ConfigError(f"no manifest.json under {in_dir}")
    manifest = persist.read_json(manifest_path)
    plan = ensemble.SweepPlan.from_dict(manifest["plan"])
    loaded, missing = [], []
    for pt in plan.points:
        status = manifest["points"].get(pt.label, {}).get("status")
        path = in_dir / pt.label / "ensemble.csv"
        if status == "complete" and path.exists():
            loaded.append((pt, ObservableSeries.load_csv(path)))
        else:
            missing.append(pt.label)
    return manifest, plan, loaded, missing


def _by_point(loaded):
    """Group complete points as (p, delta) -> {L: series}."""
    groups: dict = {}
    for pt, series in loaded:
        groups.setdefault((pt.p, pt.delta), {})[pt.L] = series
    return groups


def _mean_spins(series) -> float:
    return float(series.meta.get("mean_spins", "nan"))


def _csv(v):
    return "" if v is None else v


def cmd_analyze(args) -> int:
    in_dir = Path(args.in_dir)
    _, _, loaded, missing = _load_tree(in_dir)
    for label in missing:
        print(f"warning: skipping incomplete point {label}", file=sys.stderr)
    if not loaded:
        raise config.ConfigError(f"no complete points under {in_dir}")
    out_dir = Path(args.out_dir) if args.out_dir else in_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)

    run_cfg_path = in_dir / "config.json"
    if run_cfg_path.exists():
        meta = {
            "package_version": __version__,
            "config_hash": persist.read_json(run_cfg_path)["config_hash"],
        }
    else:
        meta = {"package_version": __version__, "config_hash": "unknown"}
    meta["mode"] = args.mode

    groups = _by_point(loaded)
    if args.mode == "squeezing":
        _write_xi_opt(groups, out_dir, args, meta)
    elif args.mode == "magnetization":
        _write_mbar(groups, out_dir, meta)
    elif args.mode == "topt":
        _write_topt(groups, out_dir, args, meta)
    else:
        _write_phase_diagram(groups, out_dir, args, meta)
    return 3 if missing else 0


def _extract_group(by_L, cutoff):
    extracts = analysis.extract_xi_opt(by_L, early_cutoff=cutoff)
    return extracts, analysis.family_is_scalable(extracts)


def _write_xi_opt(groups, out_dir, args, meta):
    rows = []
    meta = {**meta, "early_time_cutoff": args.early_cutoff}
    for (p, d), by_L in sorted(groups.items()):
        extracts, family = _extract_group(by_L, args.early_cutoff)
        for L in sorted(extracts):
            e = extracts[L]
            rows.append((p, d, L, _mean_spins(by_L[L]), e.xi2_opt, e.xi2_err,
                         e.t_opt, e.classification, int(family)))
    persist.write_csv(
        out_dir / "xi_opt.csv",
        ["p", "delta", "L", "n_spins", "xi2_opt", "xi2_err", "t_opt",
         "classification", "family_scalable"],
        rows, meta)
    print(f"wrote {out_dir / 'xi_opt.csv'} ({len(rows)} rows)")


def _write_mbar(groups, out_dir, meta):
    rows = []
    for (p, d), by_L in sorted(groups.items()):
        for L in sorted(by_L):
            lm = analysis.extract_mbar(by_L[L])
            rows.append((p, d, L, _mean_spins(by_L[L]), lm.mbar, lm.err,
                         lm.m1, lm.m2, lm.sigma, lm.projected_change,
                         int(lm.converged)))
    persist.write_csv(
        out_dir / "mbar.csv",
        ["p", "delta", "L", "n_spins", "mbar", "mbar_err", "m1", "m2",
         "sigma", "projected_change", "converged"],
        rows, meta)
    print(f"wrote {out_dir / 'mbar.csv'} ({len(rows)} rows)")


def _scalable_sizes(by_L, extracts):
    """(N, t_opt, xi2_opt, xi2_err) for sizes whose optimum is trustworthy."""
    out = []
    for L in sorted(extracts):
        e = extracts[L]
        if e.classification == analysis.SCALABLE:
            out.append((_mean_spins(by_L[L]), e.t_opt, e.xi2_opt, e.xi2_err))
    return out


def _write_topt(groups, out_dir, args, meta):
    meta = {**meta, "early_time_cutoff": args.early_cutoff, "n_ref": args.n_ref}
    rows = []
    topt_by_pd: dict = {}
    for (p, d), by_L in sorted(groups.items()):
        extracts, _ = _extract_group(by_L, args.early_cutoff)
        usable = _scalable_sizes(by_L, extracts)
        fit = analysis.fit_power_law([u[0] for u in usable], [u[1] for u in usable]) \
            if len(usable) >= 3 else analysis.ScalingFit(n_points=len(usable))
        if fit.fitted:
            val, err = analysis.evaluate_fit(fit, args.n_ref)
            topt_by_pd.setdefault(d, {})[p] = [(u[0], u[1], 0.0) for u in usable]
        else:
            val = err = None
            print(f"warning: p={p:g} delta={d:g}: {len(usable)} usable sizes, no fit",
                  file=sys.stderr)
        rows.append((p, d, len(usable), _csv(fit.slope), _csv(fit.slope_err),
                     _csv(val), _csv(err)))
    persist.write_csv(
        out_dir / "topt.csv",
        ["p", "delta", "n_sizes", "mu", "mu_err", "t_ref", "t_ref_err"],
        rows, meta)
    print(f"wrote {out_dir / 'topt.csv'} ({len(rows)} rows)")

    if args.p_c is None:
        return
    grows = []
    for d, by_p in sorted(topt_by_pd.items()):
        out = analysis.fit_topt_scaling(by_p, p_c=args.p_c, n_ref=args.n_ref)
        g = out.gamma_fit
        grows.append((d, args.p_c, args.n_ref, _csv(g.exponent), _csv(g.exponent_err),
                      _csv(out.excluded_p), g.n_points))
        if not g.fitted:
            print(f"warning: delta={d:g}: too few dilutions for a gamma fit",
                  file=sys.stderr)
    persist.write_csv(
        out_dir / "topt_gamma.csv",
        ["delta", "p_c", "n_ref", "gamma", "gamma_err", "excluded_p", "n_points"],
        grows, meta)
    print(f"wrote {out_dir / 'topt_gamma.csv'} ({len(grows)} rows)")


def _write_phase_diagram(groups, out_dir, args, meta):
    meta = {
        **meta,
        "alpha_threshold": args.alpha_threshold,
        "nu_threshold": args.nu_threshold,
        "early_time_cutoff": args.early_cutoff,
    }
    rows = []
    for (p, d), by_L in sorted(groups.items()):
        extracts, family = _extract_group(by_L, args.early_cutoff)
        usable = _scalable_sizes(by_L, extracts)
        nu = nu_err = None
        if family and len(usable) >= 3:
            fit = analysis.fit_power_law([u[0] for u in usable],
                                         [u[2] for u in usable],
                                         [u[3] for u in usable])
            if fit.fitted:
                nu, nu_err = fit.exponent, fit.exponent_err

        ns, ms, mes, hatched = [], [], [], False
        for L in sorted(by_L):
            lm = analysis.extract_mbar(by_L[L])
            hatched = hatched or not lm.converged
            if lm.mbar > 0:
                ns.append(_mean_spins(by_L[L]))
                ms.append(lm.mbar)
                mes.append(lm.err)
        alpha = alpha_err = None
        if len(ns) >= 3:
            fit = analysis.fit_power_law(ns, ms, mes)
            if fit.fitted:
                alpha, alpha_err = fit.exponent, fit.exponent_err

        rows.append({"p": p, "delta": d, "alpha": alpha, "alpha_err": alpha_err,
                     "nu": nu, "nu_err": nu_err, "hatched": hatched})

    table = analysis.assemble_phase_diagram(
        rows, alpha_threshold=args.alpha_threshold, nu_threshold=args.nu_threshold)
    persist.write_csv(
        out_dir / "phase_diagram.csv",
        ["p", "delta", "alpha", "alpha_err", "nu", "nu_err", "hatched"],
        [(r["p"], r["delta"], _csv(r["alpha"]), _csv(r["alpha_err"]),
          _csv(r["nu"]), _csv(r["nu_err"]), int(r["hatched"]))
         for r in table["grid"]],
        meta)
    persist.write_csv(
        out_dir / "boundary.csv",
        ["delta", "diagnostic", "threshold", "p_c", "delta_pc", "bound"],
        [(b["delta"], b["diagnostic"], b["threshold"], _csv(b["p_c"]),
          _csv(b["delta_pc"]), _csv(b["bound"]))
         for b in table["boundary"]],
        meta)
    print(f"wrote {out_dir / 'phase_diagram.csv'} ({len(table['grid'])} rows)")
    print(f"wrote {out_dir / 'boundary.csv'} ({len(table['boundary'])} rows)")


def cmd_hist_jeff(args) -> int:
    cfg = config.load_config(args.config)
    if args.overrides:
        cfg = config.apply_overrides(cfg, args.overrides)
    out_dir = config.resolve_out_dir(cfg, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = ModelParams(
        J=cfg["model"]["J"], delta=cfg["model"]["delta"][0],
        exponent=cfg["model"]["exponent"], j_perp=float(cfg["model"]["j_perp"]),
    )
    rows = []
    idx = 0
    for p in cfg["lattice"]["p"]:
        for L in cfg["lattice"]["L"]:
            pooled = []
            for k in range(cfg["ensemble"]["n_realizations"]):
                seed = ensemble.derive_seed(cfg["seed"], idx, k, 0)
                lat = build_lattice(L, p, seed, boundary=cfg["lattice"]["boundary"])
                pooled.append(effective_fields(lat, params))
            values = np.concatenate(pooled)
            counts, edges = np.histogram(values, bins=args.bins)
            width = np.diff(edges)
            density = counts / max(counts.sum(), 1) / width
            for b in range(len(counts)):
                rows.append((L, p, len(pooled), edges[b], edges[b + 1],
                             int(counts[b]), density[b]))
            idx += 1
    persist.write_csv(
        out_dir / "jeff_hist.csv",
        ["L", "p", "realizations", "bin_left", "bin_right", "count", "density"],
        rows, _stamp(cfg, "hist-jeff"))
    print(f"wrote {out_dir / 'jeff_hist.csv'} ({len(rows)} rows)")
    return 0


def cmd_oracle(args) -> int:
    if args.n < 2:
        raise config.ConfigError("oracle needs at least two spins")
    sites = np.array([[0, j] for j in range(args.n)], dtype=np.int64)
    lat = LatticeRealization(L=max(2, args.n), p=0.0, seed=0, sites=sites)
    ct = build_couplings(lat, ModelParams(delta=args.delta))
    times = sample_time_grid(args.t_max, args.points_per_decade)
    exact = ed.evolve_exact(ct, times)
    runner = dtwa.run_ensemble if args.method == "dtwa" else ctwa.run_ctwa_ensemble
    approx = runner(ct, times, args.n_traj, args.seed)

    dev = np.abs(approx.values["xi2"] - exact.values["xi2"])
    err = approx.errors["xi2"]
    ratio = np.where(err > 0, dev / np.where(err > 0, err, 1.0),
                     np.where(dev > 0, np.inf, 0.0))
    out_dir = Path(args.out_dir) if args.out_dir else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    persist.write_csv(
        out_dir / "oracle.csv",
        ["t", "xi2_exact", "xi2", "xi2_err", "Sx_exact", "Sx", "Sx_err",
         "deviation", "deviation_over_err"],
        zip(times, exact.values["xi2"], approx.values["xi2"], err,
            exact.values["Sx"], approx.values["Sx"], approx.errors["Sx"],
            dev, ratio),
        {"package_version": __version__, "method": args.method,
         "n": args.n, "delta": args.delta, "n_traj": args.n_traj,
         "seed": args.seed})
    print(f"wrote {out_dir / 'oracle.csv'}")
    print(f"max |xi2 - exact| = {dev.max():.3e}")
    print(f"max deviation / stat err = {np.nanmax(ratio):.2f}")
    return 0


def cmd_poisson(args) -> int:
    print(persist.format_value(analysis.poisson_effective_vacancy(args.density)))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.describe_schema:
            print(json.dumps(config.SCHEMA, indent=2, sort_keys=True))
            return 0
        if not getattr(args, "func", None):
            raise config.ConfigError("a command is required (see --help)")
        return args.func(args)
    except config.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - boundary of the process
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
