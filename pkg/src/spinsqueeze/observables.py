"""Collective-spin observables: squeezing parameter and planar magnetization.

The squeezing parameter is N * Var_min / <Sx>^2, where Var_min is the
smallest variance of a collective spin quadrature in the plane
perpendicular to the mean spin (taken along x).  Minimizing over the
quadrature angle reduces to the smaller eigenvalue of the 2x2
covariance matrix of (Sy, Sz).

The planar magnetization is reported per spin,
m_xy = (2/N) sqrt(<Sx^2> + <Sy^2>), so a fully polarized state gives 1
and the disordered phase decays like N^(-1/2).

Error bars propagate the individual standard errors of each moment,
neglecting cross-correlations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import persist

# order of accumulated symmetric products S^a S^b
PRODUCT_NAMES = ("xx", "yy", "zz", "yz", "xy", "xz")
PRODUCT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 1), (0, 2))

OBSERVABLE_KEYS = ("Sx", "Sy", "Sz", "Vyy", "Vzz", "Vyz", "xi2", "mxy")

# pinned CSV schema first, documented extra error columns after
CSV_COLUMNS = (
    "t", "Sx", "Sy", "Sz", "Vyy", "Vzz", "Vyz",
    "xi2", "xi2_err", "mxy", "mxy_err", "flags",
    "Sx_err", "Sy_err", "Sz_err", "Vyy_err", "Vzz_err", "Vyz_err",
)

FLAG_SQUEEZING_UNRELIABLE = 1  # <Sx>^2 under 10x its squared standard error


def min_transverse_variance(vyy, vzz, vyz):
    """Smaller eigenvalue of [[Vyy, Vyz], [Vyz, Vzz]], vectorized."""
    vyy = np.asarray(vyy, dtype=float)
    half_sum = 0.5 * (vyy + vzz)
    half_diff = 0.5 * (vyy - vzz)
    return half_sum - np.sqrt(half_diff**2 + np.asarray(vyz, dtype=float) ** 2)


def _min_variance_gradient(vyy, vzz, vyz):
    """d(lambda_min)/d(Vyy, Vzz, Vyz); degenerate case uses the subgradient."""
    half_diff = 0.5 * (vyy - vzz)
    r = np.sqrt(half_diff**2 + vyz**2)
    safe = np.where(r > 0.0, r, 1.0)
    g_yy = 0.5 - np.where(r > 0.0, half_diff / (2.0 * safe), 0.0)
    g_zz = 0.5 + np.where(r > 0.0, half_diff / (2.0 * safe), 0.0)
    g_yz = -np.where(r > 0.0, vyz / safe, 0.0)
    return g_yy, g_zz, g_yz


@dataclass
class ObservableSeries:
    """Time series of collective observables with standard errors.

    values/errors hold one array per key in OBSERVABLE_KEYS.  Exact
    (oracle) series carry zero errors.  meta is free-form and ends up in
    the run manifest; method tags the producer (dtwa, ctwa, exact).
    """

    t: np.ndarray
    values: dict
    errors: dict
    flags: np.ndarray
    method: str
    n_samples: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in OBSERVABLE_KEYS:
            if key not in self.values or key not in self.errors:
                raise ValueError(f"series missing observable {key!r}")
            if len(self.values[key]) != len(self.t) or len(self.errors[key]) != len(self.t):
                raise ValueError(f"length mismatch for {key!r}")

    def __len__(self):
        return len(self.t)

    def save_csv(self, path: str, meta: dict | None = None) -> None:
        header = {"method": self.method, "n_samples": str(self.n_samples)}
        header.update({k: str(v) for k, v in (meta or {}).items()})
        v, e = self.values, self.errors
        rows = zip(
            self.t,
            v["Sx"], v["Sy"], v["Sz"], v["Vyy"], v["Vzz"], v["Vyz"],
            v["xi2"], e["xi2"], v["mxy"], e["mxy"], self.flags,
            e["Sx"], e["Sy"], e["Sz"], e["Vyy"], e["Vzz"], e["Vyz"],
        )
        persist.write_csv(path, CSV_COLUMNS, rows, header)

    @classmethod
    def load_csv(cls, path: str) -> "ObservableSeries":
        meta, cols = persist.read_csv_numeric(path)
        values = {k: cols[k] for k in OBSERVABLE_KEYS}
        errors = {k: cols[f"{k}_err"] for k in OBSERVABLE_KEYS if f"{k}_err" in cols}
        errors["xi2"] = cols["xi2_err"]
        errors["mxy"] = cols["mxy_err"]
        return cls(
            t=cols["t"],
            values=values,
            errors=errors,
            flags=cols["flags"].astype(int),
            method=meta.get("method", "unknown"),
            n_samples=int(meta.get("n_samples", "0")),
            meta=dict(meta),
        )


def assemble_series(
    times: np.ndarray,
    n_spins: int,
    mean: np.ndarray,
    mean_err: np.ndarray,
    second: np.ndarray,
    second_err: np.ndarray,
    n_samples: int,
    method: str,
    meta: dict | None = None,
    bessel: bool = True,
) -> ObservableSeries:
    """Build an ObservableSeries from collective moments.

    mean, mean_err: (T, 3) first moments of (Sx, Sy, Sz) and their errors.
    second, second_err: (T, 6) symmetric second moments in PRODUCT_NAMES
    order.  bessel=False is for exact moments (no sampling correction).
    """
    times = np.asarray(times, dtype=float)
    mean = np.asarray(mean, dtype=float)
    mean_err = np.asarray(mean_err, dtype=float)
    second = np.asarray(second, dtype=float)
    correction = n_samples / (n_samples - 1.0) if (bessel and n_samples > 1) else 1.0

    idx = {name: k for k, name in enumerate(PRODUCT_NAMES)}
    mx, my, mz = mean[:, 0], mean[:, 1], mean[:, 2]
    dmx, dmy, dmz = mean_err[:, 0], mean_err[:, 1], mean_err[:, 2]

    second_err = np.asarray(second_err, dtype=float)

    def covariance(name, ma, mb, da, db):
        v = correction * (second[:, idx[name]] - ma * mb)
        dv = np.sqrt(second_err[:, idx[name]] ** 2 + (mb * da) ** 2 + (ma * db) ** 2)
        return v, dv

    vyy, dvyy = covariance("yy", my, my, dmy, dmy)
    vzz, dvzz = covariance("zz", mz, mz, dmz, dmz)
    vyz, dvyz = covariance("yz", my, mz, dmy, dmz)
    # diagonal variances are non-negative up to roundoff
    vyy = np.maximum(vyy, 0.0)
    vzz = np.maximum(vzz, 0.0)

    lam = min_transverse_variance(vyy, vzz, vyz)
    g_yy, g_zz, g_yz = _min_variance_gradient(vyy, vzz, vyz)
    dlam = np.sqrt((g_yy * dvyy) ** 2 + (g_zz * dvzz) ** 2 + (g_yz * dvyz) ** 2)

    sx2 = mx**2
    with np.errstate(divide="ignore", invalid="ignore"):
        xi2 = np.where(sx2 > 0.0, n_spins * lam / sx2, np.inf)
        dxi2 = np.where(
            sx2 > 0.0,
            np.sqrt((n_spins * dlam / sx2) ** 2 + (2.0 * n_spins * lam * dmx / np.abs(mx) ** 3) ** 2),
            np.inf,
        )

    pxx = second[:, idx["xx"]]
    pyy = second[:, idx["yy"]]
    planar = np.maximum(pxx + pyy, 0.0)
    root = np.sqrt(planar)
    mxy = 2.0 / n_spins * root
    with np.errstate(divide="ignore", invalid="ignore"):
        dmxy = np.where(
            root > 0.0,
            (1.0 / n_spins) * np.sqrt(second_err[:, idx["xx"]] ** 2 + second_err[:, idx["yy"]] ** 2) / root,
            0.0,
        )

    flags = np.where(sx2 < 10.0 * dmx**2, FLAG_SQUEEZING_UNRELIABLE, 0)

    values = {
        "Sx": mx, "Sy": my, "Sz": mz,
        "Vyy": vyy, "Vzz": vzz, "Vyz": vyz,
        "xi2": xi2, "mxy": mxy,
    }
    errors = {
        "Sx": dmx, "Sy": dmy, "Sz": dmz,
        "Vyy": dvyy, "Vzz": dvzz, "Vyz": dvyz,
        "xi2": dxi2, "mxy": dmxy,
    }
    return ObservableSeries(
        t=times,
        values=values,
        errors=errors,
        flags=flags,
        method=method,
        n_samples=n_samples,
        meta=dict(meta or {}),
    )
