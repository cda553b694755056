"""Everything downstream of the time series: squeezing optima, late-time
magnetization with convergence gating, power-law exponent fits, dilution
phase boundaries, and the defect-density vacancy estimate.

All functions are pure; they read persisted series and return dataclasses,
so points of a parameter grid can be analyzed independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .observables import ObservableSeries

# minima earlier than this (in units of 1/J) are transient artifacts of the
# initial quench and never scale with system size
EARLY_TIME_CUTOFF = 5.0

# a local minimum must be the smallest sample in a window this wide and sit
# at least MIN_DEPTH_SIGMA combined standard errors below both window edges
MINIMA_WINDOW = 5
MIN_DEPTH_SIGMA = 2.0

SCALABLE = "scalable-candidate"
EARLY_EXCLUDED = "early-time-excluded"
GLOBAL_FALLBACK = "global-fallback"

# classification of a family of optima across sizes requires the optimum
# time to rise by at least this factor from smallest to largest size
MIN_TOPT_RISE = 1.10


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class Minimum:
    index: int
    t: float
    value: float
    error: float


@dataclass
class SqueezingExtract:
    """Best squeezing for one system size: value, time, and how it was found."""

    L: int
    xi2_opt: float
    xi2_err: float
    t_opt: float
    classification: str
    minima: list = field(default_factory=list)


@dataclass
class LateTimeMagnetization:
    mbar: float
    err: float
    m1: float
    m2: float
    sigma: float
    projected_change: float
    converged: bool
    window: int


@dataclass
class ScalingFit:
    """Weighted log-log linear fit.

    slope/intercept describe log y = slope * log x + intercept; exponent is
    -slope, the convention for decaying laws y ~ x^(-exponent).  Covariance
    comes from the Gaussian likelihood at the quoted errors (no rescaling
    by reduced chi-square).
    """

    n_points: int
    xs: tuple = ()
    slope: float | None = None
    slope_err: float | None = None
    intercept: float | None = None
    intercept_err: float | None = None
    cov_slope_intercept: float | None = None
    chi2: float | None = None
    dof: int | None = None

    @property
    def fitted(self) -> bool:
        return self.slope is not None

    @property
    def exponent(self) -> float | None:
        return None if self.slope is None else -self.slope

    @property
    def exponent_err(self) -> float | None:
        return self.slope_err


@dataclass
class PcEstimate:
    p_c: float
    delta_pc: float
    threshold: float
    bound: str | None = None  # None = bracketed; "lower"/"upper" = one-sided
    bracket: tuple | None = None


@dataclass
class ToptScaling:
    mu_fits: dict
    t_ref: dict
    gamma_fit: ScalingFit
    n_ref: float
    excluded_p: float | None


def _local_minima(t, y, err, flags) -> list[Minimum]:
    """Noise-robust minima: smallest in a centered window and at least
    MIN_DEPTH_SIGMA combined errors below both window edges."""
    half = MINIMA_WINDOW // 2
    out = []
    for i in range(half, len(y) - half):
        if flags[i]:
            continue
        window = y[i - half : i + half + 1]
        if y[i] > window.min():
            continue
        left = y[i - half] - y[i]
        right = y[i + half] - y[i]
        if left < MIN_DEPTH_SIGMA * math.hypot(err[i], err[i - half]):
            continue
        if right < MIN_DEPTH_SIGMA * math.hypot(err[i], err[i + half]):
            continue
        out.append(Minimum(index=i, t=float(t[i]), value=float(y[i]), error=float(err[i])))
    return out


def _global_minimum(t, y, err, flags) -> Minimum:
    ok = (t > 0.0) & ~flags.astype(bool)
    if not ok.any():
        raise AnalysisError("squeezing series has no usable samples")
    idx = np.flatnonzero(ok)
    i = idx[np.argmin(y[idx])]
    return Minimum(index=int(i), t=float(t[i]), value=float(y[i]), error=float(err[i]))


def extract_xi_opt(
    series_by_L: dict[int, ObservableSeries],
    early_cutoff: float = EARLY_TIME_CUTOFF,
) -> dict[int, SqueezingExtract]:
    """Pick the squeezing optimum for every system size.

    Minima earlier than `early_cutoff` are discarded.  Among survivors the
    selection walks sizes in ascending order and keeps the optimum times
    non-decreasing, preferring the deepest compatible minimum, so a shallow
    size-independent dip never shadows the growing one.  A size with no
    surviving minimum falls back to its global minimum: tagged
    early-time-excluded when that global minimum is itself a detected early
    minimum, global-fallback otherwise.
    """
    if not series_by_L:
        raise AnalysisError("no series to analyze")
    out: dict[int, SqueezingExtract] = {}
    prev_t = 0.0
    for L in sorted(series_by_L):
        s = series_by_L[L]
        t = np.asarray(s.t, dtype=float)
        y = np.asarray(s.values["xi2"], dtype=float)
        err = np.asarray(s.errors["xi2"], dtype=float)
        flags = np.asarray(s.flags) != 0
        if flags.all():
            raise AnalysisError(f"all samples flagged unreliable for L={L}")
        minima = _local_minima(t, y, err, flags)
        surviving = [m for m in minima if m.t >= early_cutoff]
        if surviving:
            compatible = [m for m in surviving if m.t >= prev_t] or surviving
            pick = min(compatible, key=lambda m: m.value)
            prev_t = pick.t
            cls = SCALABLE
        else:
            pick = _global_minimum(t, y, err, flags)
            early = any(m.index == pick.index for m in minima) and pick.t < early_cutoff
            cls = EARLY_EXCLUDED if early else GLOBAL_FALLBACK
        out[L] = SqueezingExtract(
            L=L, xi2_opt=pick.value, xi2_err=pick.error, t_opt=pick.t,
            classification=cls, minima=minima,
        )
    return out


def family_is_scalable(extracts: dict[int, SqueezingExtract]) -> bool:
    """True when the selected optimum times grow with system size: every
    size classified scalable, times non-decreasing, and a total rise of at
    least MIN_TOPT_RISE from the smallest size to the largest."""
    sizes = sorted(extracts)
    if len(sizes) < 2:
        return False
    picks = [extracts[L] for L in sizes]
    if any(p.classification != SCALABLE for p in picks):
        return False
    ts = [p.t_opt for p in picks]
    if any(b < a for a, b in zip(ts, ts[1:])):
        return False
    return ts[-1] >= MIN_TOPT_RISE * ts[0]


def extract_mbar(series: ObservableSeries) -> LateTimeMagnetization:
    """Average the easy-plane magnetization over the final tenth of the
    sampled times and test whether it has actually plateaued.

    The quoted error is the window average of per-sample errors, not a
    standard error of the mean: neighboring samples of one disorder
    ensemble are strongly correlated.  Convergence requires both checks:
    the final fifth split in half gives |m1 - m2| below two typical errors,
    and a linear trend over the averaging window, projected one window
    forward, moves the value by less than 0.0025.
    """
    n = len(series)
    w = n // 10
    if w < 5:
        raise AnalysisError(f"late-time window of {w} samples is too short")
    t = np.asarray(series.t, dtype=float)
    m = np.asarray(series.values["mxy"], dtype=float)
    e = np.asarray(series.errors["mxy"], dtype=float)

    mbar = float(m[-w:].mean())
    err = float(e[-w:].mean())

    m1 = float(m[-2 * w : -w].mean())
    m2 = float(m[-w:].mean())
    sigma = float(e[-2 * w :].mean())
    if sigma > 0.0:
        stable = abs(m1 - m2) / sigma < 2.0
    else:
        stable = m1 == m2

    slope = float(np.polyfit(t[-w:], m[-w:], 1)[0])
    span = float(t[-1] - t[-w])
    projected = abs(slope) * span
    flat = projected < 0.0025

    return LateTimeMagnetization(
        mbar=mbar, err=err, m1=m1, m2=m2, sigma=sigma,
        projected_change=projected, converged=stable and flat, window=w,
    )


def fit_power_law(xs, ys, errs=None) -> ScalingFit:
    """Weighted least squares for y = c * x^slope in log-log space.

    Weights are 1/sigma_log^2 with sigma_log = err/y.  If errors are
    missing or any is non-positive the fit is unweighted.  Fewer than three
    points is a no-fit result rather than an error: two sizes cannot
    constrain a scaling law.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = len(xs)
    if len(ys) != n:
        raise AnalysisError("xs and ys differ in length")
    if n < 3:
        return ScalingFit(n_points=n, xs=tuple(xs))
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise AnalysisError("power-law fit needs positive values")

    if errs is None:
        sigma = np.ones(n)
    else:
        errs = np.asarray(errs, dtype=float)
        sigma = np.where(errs > 0, errs / ys, np.nan)
        if np.any(~np.isfinite(sigma)):
            sigma = np.ones(n)

    X, Y = np.log(xs), np.log(ys)
    w = 1.0 / sigma**2
    s0, sx, sy = w.sum(), (w * X).sum(), (w * Y).sum()
    sxx, sxy = (w * X * X).sum(), (w * X * Y).sum()
    d = s0 * sxx - sx * sx
    slope = (s0 * sxy - sx * sy) / d
    intercept = (sxx * sy - sx * sxy) / d
    resid = Y - slope * X - intercept
    return ScalingFit(
        n_points=n,
        xs=tuple(xs),
        slope=float(slope),
        slope_err=float(math.sqrt(s0 / d)),
        intercept=float(intercept),
        intercept_err=float(math.sqrt(sxx / d)),
        cov_slope_intercept=float(-sx / d),
        chi2=float((w * resid**2).sum()),
        dof=n - 2,
    )


def extract_pc(ps, ys, dys, threshold: float) -> PcEstimate:
    """Locate the dilution where an exponent row crosses its threshold.

    Linear interpolation inside the first bracketing interval; the quoted
    uncertainty adds the propagated y-errors and, always, half the bracket
    width as a grid-discreteness floor.  A row that never crosses yields a
    one-sided bound at the grid edge.
    """
    ps = np.asarray(ps, dtype=float)
    ys = np.asarray(ys, dtype=float)
    dys = np.asarray(dys, dtype=float)
    if len(ps) < 2:
        raise AnalysisError("need at least two points to bracket a crossing")
    if np.any(np.diff(ps) <= 0):
        raise AnalysisError("dilution row must be strictly increasing")

    g = ys - threshold
    for i in range(len(ps) - 1):
        if g[i] == 0.0 and g[i + 1] == 0.0:
            continue
        if g[i] * g[i + 1] <= 0.0:
            p_l, p_r = ps[i], ps[i + 1]
            y_l, y_r = ys[i], ys[i + 1]
            t = (threshold - y_l) / (y_r - y_l)
            p_c = p_l + t * (p_r - p_l)
            half = (p_r - p_l) / 2.0
            slope2 = ((p_r - p_l) / (y_r - y_l)) ** 2
            var = slope2 * (t**2 * dys[i] ** 2 + (1 - t) ** 2 * dys[i + 1] ** 2)
            return PcEstimate(
                p_c=float(p_c),
                delta_pc=float(math.sqrt(var + half**2)),
                threshold=threshold,
                bracket=(float(p_l), float(p_r)),
            )

    # no crossing: everything on one side of the threshold
    half_edge = (ps[-1] - ps[-2]) / 2.0 if len(ps) > 1 else 0.0
    if g[0] > 0:
        # ordered along the whole row; the boundary lies beyond the last point
        return PcEstimate(p_c=float(ps[-1]), delta_pc=float(half_edge),
                          threshold=threshold, bound="lower")
    return PcEstimate(p_c=float(ps[0]), delta_pc=float((ps[1] - ps[0]) / 2.0),
                      threshold=threshold, bound="upper")


def evaluate_fit(fit: ScalingFit, x: float) -> tuple[float, float]:
    """Fitted value and its error at x, from the fit covariance."""
    lx = math.log(x)
    log_y = fit.slope * lx + fit.intercept
    var = (
        fit.intercept_err**2
        + lx**2 * fit.slope_err**2
        + 2.0 * lx * fit.cov_slope_intercept
    )
    y = math.exp(log_y)
    return y, y * math.sqrt(max(var, 0.0))


def fit_topt_scaling(
    topt_by_p: dict[float, list[tuple[float, float, float]]],
    p_c: float,
    n_ref: float = 5.0e3,
) -> ToptScaling:
    """Two-stage critical-slowing-down fit.

    Stage one fits t_opt vs N per dilution; stage two evaluates each fit
    at a common reference size and fits that against distance from the
    critical dilution, excluding the point nearest p_c where the power law
    is least trustworthy.  n_ref defaults to 5e3 (sensible range 1e3-1e4).
    """
    mu_fits: dict[float, ScalingFit] = {}
    t_ref: dict[float, tuple[float, float]] = {}
    for p in sorted(topt_by_p):
        rows = topt_by_p[p]
        ns = [r[0] for r in rows]
        ts = [r[1] for r in rows]
        es = [r[2] for r in rows]
        fit = fit_power_law(ns, ts, es)
        mu_fits[p] = fit
        if fit.fitted:
            t_ref[p] = evaluate_fit(fit, n_ref)

    usable = sorted(t_ref)
    excluded = None
    if usable:
        excluded = min(usable, key=lambda p: abs(p - p_c))
        usable = [p for p in usable if p != excluded]
    if len(usable) >= 3:
        gamma_fit = fit_power_law(
            [abs(p - p_c) for p in usable],
            [t_ref[p][0] for p in usable],
            [t_ref[p][1] for p in usable],
        )
    else:
        gamma_fit = ScalingFit(n_points=len(usable))
    return ToptScaling(mu_fits=mu_fits, t_ref=t_ref, gamma_fit=gamma_fit,
                       n_ref=n_ref, excluded_p=excluded)


def fit_topt_vs_delta(deltas, t_opts, errs=None) -> ScalingFit:
    """Fit t_opt against (1 - delta); the clean-system expectation is a
    slope of -1.  Requires every delta below 1 (easy-plane side)."""
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas >= 1.0):
        raise AnalysisError("t_opt vs delta fit requires delta < 1")
    return fit_power_law(1.0 - deltas, t_opts, errs)


def poisson_effective_vacancy(lam: float) -> float:
    """Effective vacancy probability when usable sites are those holding
    exactly one defect: 1 - lam * exp(-lam) for Poisson-distributed counts."""
    if lam < 0:
        raise AnalysisError("defect density must be non-negative")
    return 1.0 - lam * math.exp(-lam)


def assemble_phase_diagram(
    rows: list[dict],
    alpha_threshold: float = 0.1,
    nu_threshold: float = 0.1,
) -> dict:
    """Build the (p, delta) exponent grid and per-delta boundary estimates.

    Each input row carries p, delta, optional alpha/nu with errors, and a
    hatched flag for unconverged magnetization.  A missing exponent means
    no scaling was detected and enters the boundary search as zero.  The
    boundary is located separately from each diagnostic; thresholds are
    recorded alongside because their exact values are a choice, not a
    measurement.
    """
    grid = sorted(rows, key=lambda r: (r["delta"], r["p"]))
    boundary = []
    deltas = sorted({r["delta"] for r in grid})
    for d in deltas:
        row = [r for r in grid if r["delta"] == d]
        ps = [r["p"] for r in row]
        for name, thr in (("alpha", alpha_threshold), ("nu", nu_threshold)):
            ys = [r.get(name) if r.get(name) is not None else 0.0 for r in row]
            dys = [r.get(f"{name}_err") or 0.0 for r in row]
            entry = {"delta": d, "diagnostic": name, "threshold": thr}
            if len(ps) < 2:
                entry.update(p_c=None, delta_pc=None, bound="insufficient")
            else:
                est = extract_pc(ps, ys, dys, thr)
                entry.update(p_c=est.p_c, delta_pc=est.delta_pc, bound=est.bound)
            boundary.append(entry)
    return {"grid": grid, "boundary": boundary}
