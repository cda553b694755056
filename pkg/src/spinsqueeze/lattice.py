"""Diluted square-lattice geometry and power-law couplings.

Spins occupy a random subset of an L x L square lattice: each site is
kept independently with probability f = 1 - p, where p is the vacancy
fraction.  A pair of occupied sites at Euclidean distance r couples
with strength J / r**exponent; exponent 3 is the dipolar case that all
production runs use.  Distances are open-boundary by default, with a
minimum-image periodic option for finite-size checks.

All randomness is funneled through numpy SeedSequence so that a
realization is a pure function of (L, p, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import persist


class LatticeError(ValueError):
    """Raised for invalid lattice parameters or an empty realization."""


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the power-law XXZ Hamiltonian.

    H = -sum_{i<j} J_ij [ j_perp (sx_i sx_j + sy_i sy_j) + delta sz_i sz_j ]
    with J_ij = J / r_ij**exponent.  j_perp is 1 in production; 0 switches
    to the pure Ising Hamiltonian used as an exactness test harness.
    """

    J: float = 1.0
    delta: float = -1.0
    exponent: float = 3.0
    spacing: float = 1.0
    j_perp: float = 1.0

    def __post_init__(self):
        if not self.J > 0:
            raise LatticeError(f"J must be positive, got {self.J}")
        if not self.exponent > 0:
            raise LatticeError(f"exponent must be positive, got {self.exponent}")
        if not self.spacing > 0:
            raise LatticeError(f"spacing must be positive, got {self.spacing}")
        if self.j_perp not in (0.0, 1.0):
            raise LatticeError(
                f"j_perp must be 1 (production) or 0 (Ising harness), got {self.j_perp}"
            )

    @property
    def weights(self) -> np.ndarray:
        """Per-component coupling weights (j_perp, j_perp, delta)."""
        return np.array([self.j_perp, self.j_perp, self.delta])

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "delta": self.delta,
            "exponent": self.exponent,
            "spacing": self.spacing,
            "j_perp": self.j_perp,
        }


@dataclass(frozen=True)
class LatticeRealization:
    """One disorder realization: the occupied sites of an L x L lattice."""

    L: int
    p: float
    seed: int
    sites: np.ndarray  # (N, 2) int lattice coordinates, row-major sorted
    boundary: str = "open"

    @property
    def N(self) -> int:
        return len(self.sites)

    @property
    def f(self) -> float:
        """Site occupation probability."""
        return 1.0 - self.p

    def positions(self, spacing: float = 1.0) -> np.ndarray:
        return self.sites.astype(float) * spacing

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "p": self.p,
            "seed": self.seed,
            "boundary": self.boundary,
            "sites": self.sites.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeRealization":
        return cls(
            L=int(d["L"]),
            p=float(d["p"]),
            seed=int(d["seed"]),
            boundary=d.get("boundary", "open"),
            sites=np.asarray(d["sites"], dtype=np.int64).reshape(-1, 2),
        )

    def save(self, path: str) -> None:
        persist.write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str) -> "LatticeRealization":
        return cls.from_dict(persist.read_json(path))


def build_lattice(L: int, p: float, seed: int, boundary: str = "open") -> LatticeRealization:
    """Draw one diluted-lattice realization.

    Sites are kept with probability 1 - p.  An all-empty draw is rejected
    and resampled from an incremented sub-seed; after 100 rejections the
    realization is declared impossible (p too close to 1 for this L).
    """
    if L < 1:
        raise LatticeError(f"L must be >= 1, got {L}")
    if not 0.0 <= p <= 1.0:
        raise LatticeError(f"vacancy fraction must lie in [0, 1], got {p}")
    if boundary not in ("open", "periodic"):
        raise LatticeError(f"boundary must be 'open' or 'periodic', got {boundary!r}")

    for attempt in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        kept = rng.random(L * L) < (1.0 - p)
        if kept.any():
            idx = np.flatnonzero(kept)
            sites = np.column_stack([idx // L, idx % L]).astype(np.int64)
            return LatticeRealization(L=L, p=p, seed=int(seed), sites=sites, boundary=boundary)
    raise LatticeError(
        f"no occupied sites after 100 attempts (L={L}, p={p}); lattice is empty"
    )


def pair_distances(lat: LatticeRealization, spacing: float = 1.0) -> np.ndarray:
    """Dense (N, N) matrix of pair distances; diagonal is 0."""
    pos = lat.positions(spacing)
    d = pos[:, None, :] - pos[None, :, :]
    if lat.boundary == "periodic":
        box = lat.L * spacing
        d = d - box * np.round(d / box)
    return np.sqrt((d * d).sum(axis=-1))


@dataclass(frozen=True)
class CouplingTable:
    """Dense symmetric J_ij = J / r_ij**exponent with zero diagonal."""

    matrix: np.ndarray
    params: ModelParams

    @property
    def N(self) -> int:
        return self.matrix.shape[0]


def build_couplings(lat: LatticeRealization, params: ModelParams) -> CouplingTable:
    r = pair_distances(lat, params.spacing)
    np.fill_diagonal(r, 1.0)  # avoid 0**-exponent; diagonal zeroed below
    J = params.J * r ** (-params.exponent)
    np.fill_diagonal(J, 0.0)
    return CouplingTable(matrix=J, params=params)


def effective_fields(
    lat: LatticeRealization,
    params: ModelParams,
    chunk: int = 4096,
) -> np.ndarray:
    """Per-spin total coupling J_i^eff = sum_j J_ij, streamed in row blocks.

    Never materializes the full N x N table, so it stays usable for
    lattices far larger than the dynamics can handle.  An isolated spin
    (N = 1) gets J^eff = 0.
    """
    pos = lat.positions(params.spacing)
    n = len(pos)
    out = np.zeros(n)
    box = lat.L * params.spacing
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = pos[start:stop, None, :] - pos[None, :, :]
        if lat.boundary == "periodic":
            d = d - box * np.round(d / box)
        r2 = (d * d).sum(axis=-1)
        # the self-distance is the only zero in each row
        w = np.where(r2 > 0.0, r2, np.inf) ** (-params.exponent / 2.0)
        out[start:stop] = params.J * w.sum(axis=1)
    return out


@dataclass(frozen=True)
class EffectiveFieldHistogram:
    """Pooled histogram of J^eff over disorder realizations, log-spaced bins."""

    edges: np.ndarray  # (n_bins + 1,) increasing positive bin edges
    density: np.ndarray  # (n_bins,) normalized so that sum(density * width) + underflow_mass = 1
    counts: np.ndarray  # (n_bins,) raw counts
    underflow: int  # exact zeros (isolated spins)
    total: int
    bins_per_decade: int
    n_realizations: int

    @property
    def underflow_mass(self) -> float:
        return self.underflow / self.total if self.total else 0.0

    def save_csv(self, path: str, meta: dict | None = None) -> None:
        header = {
            "underflow_count": str(self.underflow),
            "total_count": str(self.total),
            "bins_per_decade": str(self.bins_per_decade),
            "n_realizations": str(self.n_realizations),
        }
        header.update(meta or {})
        rows = zip(self.edges[:-1], self.edges[1:], self.density)
        persist.write_csv(path, ["bin_left", "bin_right", "density"], rows, header)


def field_histogram(
    lats: Sequence[LatticeRealization],
    params: ModelParams,
    bins_per_decade: int = 64,
) -> EffectiveFieldHistogram:
    """Pool J^eff of several realizations into one normalized histogram."""
    if not lats:
        raise LatticeError("need at least one realization")
    pooled = np.concatenate([effective_fields(lat, params) for lat in lats])
    positive = pooled[pooled > 0.0]
    underflow = int((pooled == 0.0).sum())
    if positive.size == 0:
        raise LatticeError("all effective fields are zero; nothing to bin")

    lo = np.floor(np.log10(positive.min()) * bins_per_decade) / bins_per_decade
    hi = np.ceil(np.log10(positive.max()) * bins_per_decade) / bins_per_decade
    if hi <= lo:
        hi = lo + 1.0 / bins_per_decade
    n_bins = int(round((hi - lo) * bins_per_decade))
    edges = 10.0 ** (lo + np.arange(n_bins + 1) / bins_per_decade)
    counts, _ = np.histogram(positive, bins=edges)
    widths = np.diff(edges)
    density = counts / (pooled.size * widths)
    return EffectiveFieldHistogram(
        edges=edges,
        density=density,
        counts=counts,
        underflow=underflow,
        total=int(pooled.size),
        bins_per_decade=bins_per_decade,
        n_realizations=len(lats),
    )
