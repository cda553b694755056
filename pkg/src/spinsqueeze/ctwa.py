"""Pair-cluster semiclassical dynamics: exact two-spin algebra inside each
cluster, mean-field coupling between clusters.

Each pair cluster carries 15 phase-space variables, the Weyl symbols of
{s^a x 1, 1 x s^b, s^a x s^b}; a leftover spin (odd N) stays a plain
3-variable precessing spin.  One-site variables of every spin coincide
with the discrete phase points used by :mod:`spinsqueeze.dtwa`, drawn
from the same seed stream, and collective observables are assembled from
one-site variables through the same moment pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (
    ConservationReport,
    IntegratorConfig,
    IntegrationError,
    adaptive_sample_loop,
    _cross_inplace,
)
from .dtwa import MomentAccumulator, collective_moments, draw_signs, phase_point_block
from .lattice import CouplingTable
from .observables import ObservableSeries, assemble_series

N_CLUSTER_VARS = 15
# two-site slot for the (alpha, beta) component pair
TWO_SITE = {("x", "x"): 6, ("y", "y"): 10, ("z", "z"): 14}


def _spin_half_matrices() -> list[np.ndarray]:
    sx = np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex)
    sy = np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex)
    sz = np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex)
    return [sx, sy, sz]


def cluster_basis() -> np.ndarray:
    """The 15 products {s^a x 1, 1 x s^b, s^a x s^b} as 4x4 matrices.

    Slots 0-2: first spin, 3-5: second spin, 6-14: two-site products in
    row-major component order (3*alpha + beta).
    """
    s = _spin_half_matrices()
    eye = np.eye(2, dtype=complex)
    mats = [np.kron(m, eye) for m in s]
    mats += [np.kron(eye, m) for m in s]
    mats += [np.kron(a, b) for a in s for b in s]
    return np.array(mats)


def structure_constants() -> np.ndarray:
    """f_abc with [G_a, G_b] = i sum_c f_abc G_c, from the 4x4 representation.

    The basis is trace-orthogonal but not normalized (one-site squares
    trace to 1, two-site to 1/4), so each projection divides by Tr G_c^2.
    """
    gam = cluster_basis()
    sq = np.einsum("aij,aji->a", gam, gam).real
    comm = np.einsum("aij,bjk->abik", gam, gam)
    comm = comm - comm.transpose(1, 0, 2, 3)
    f = np.einsum("abij,cji->abc", comm, gam) / (1j * sq)
    assert np.abs(f.imag).max() < 1e-13
    return f.real.copy()


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint pair cover of the spins, plus one leftover when N is odd."""

    pairs: tuple[tuple[int, int], ...]
    singleton: int | None = None

    def __post_init__(self):
        seen = [i for ij in self.pairs for i in ij]
        if self.singleton is not None:
            seen.append(self.singleton)
        if len(set(seen)) != len(seen):
            raise ValueError("partition reuses a spin")

    @property
    def n_spins(self) -> int:
        return 2 * len(self.pairs) + (self.singleton is not None)


def pair_spins(ct: CouplingTable) -> ClusterPartition:
    """Greedily pair the strongest-coupled free spins until at most one is left.

    Ties break toward the lexicographically smallest index pair, keeping
    the partition platform-independent.
    """
    n = ct.N
    if n == 1:
        return ClusterPartition(pairs=(), singleton=0)
    iu, ju = np.triu_indices(n, k=1)
    order = np.lexsort((ju, iu, -ct.matrix[iu, ju]))
    free = np.ones(n, dtype=bool)
    pairs = []
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        if free[i] and free[j]:
            pairs.append((i, j))
            free[i] = free[j] = False
    leftover = np.flatnonzero(free)
    singleton = int(leftover[0]) if leftover.size else None
    return ClusterPartition(pairs=tuple(pairs), singleton=singleton)


@dataclass
class ClusterPhasePoint:
    """Ensemble block of cluster variables.

    one_site: (N, M, 3) spin components, the same objects dTWA evolves.
    two_site: (P, M, 9) intra-pair products, row k belonging to pairs[k],
    components in 3*alpha + beta order.
    """

    one_site: np.ndarray
    two_site: np.ndarray

    def ravel(self) -> np.ndarray:
        return np.concatenate([self.one_site.ravel(), self.two_site.ravel()])


def sample_cluster_points(partition: ClusterPartition, n_traj: int, seed: int) -> ClusterPhasePoint:
    """Factorized discrete draws; two-site variables start as exact products."""
    n = partition.n_spins
    s = phase_point_block(draw_signs(n, n_traj, seed))
    if partition.pairs:
        i_arr = np.array([ij[0] for ij in partition.pairs])
        j_arr = np.array([ij[1] for ij in partition.pairs])
        q = np.einsum("pma,pmb->pmab", s[i_arr], s[j_arr]).reshape(len(i_arr), n_traj, 9)
    else:
        q = np.zeros((0, n_traj, 9))
    return ClusterPhasePoint(one_site=s, two_site=q)


class _ClusterSystem:
    """Precomputed geometry: index maps, decoupled coupling matrix, generators."""

    def __init__(self, partition: ClusterPartition, ct: CouplingTable):
        if partition.n_spins != ct.N:
            raise ValueError("partition does not cover the coupling table")
        self.partition = partition
        self.n = ct.N
        self.weights = ct.params.weights
        self.i_arr = np.array([ij[0] for ij in partition.pairs], dtype=np.intp)
        self.j_arr = np.array([ij[1] for ij in partition.pairs], dtype=np.intp)
        self.singles = np.array(
            [] if partition.singleton is None else [partition.singleton], dtype=np.intp
        )
        self.j_inter = ct.matrix.copy()
        self.j_inter[self.i_arr, self.j_arr] = 0.0
        self.j_inter[self.j_arr, self.i_arr] = 0.0
        self.j_intra = ct.matrix[self.i_arr, self.j_arr]

        f = structure_constants()
        # dynamic channels: gradients along the six one-site variables
        self.f_one = [np.ascontiguousarray(f[:, b, :].T) for b in range(6)]
        # static channel: the intra-pair part of H_W is linear with fixed
        # coefficients u_b = -J_intra * (jp, jp, delta) on (xx, yy, zz)
        jp, delta = ct.params.j_perp, ct.params.delta
        gen = np.zeros((15, 15))
        for slot, wc in [(6, jp), (10, jp), (14, delta)]:
            gen += wc * f[:, slot, :]
        # per-pair generator transposed for right-multiplication
        self.intra_gen_t = -self.j_intra[:, None, None] * gen.T[None]

    def fields(self, s: np.ndarray) -> np.ndarray:
        n, m, _ = s.shape
        return -(self.j_inter @ (s * self.weights).reshape(n, m * 3)).reshape(n, m, 3)

    def derivative(self, state: ClusterPhasePoint) -> ClusterPhasePoint:
        s, q = state.one_site, state.two_site
        h = self.fields(s)
        ds = np.empty_like(s)
        if self.singles.size:
            # fancy indexing yields copies, so assign rather than write in place
            ds[self.singles] = np.cross(h[self.singles], s[self.singles])
        if len(self.i_arr):
            x15 = np.concatenate([s[self.i_arr], s[self.j_arr], q], axis=-1)
            dx = np.matmul(x15, self.intra_gen_t)
            grad6 = np.concatenate([h[self.i_arr], h[self.j_arr]], axis=-1)
            for b in range(6):
                dx += grad6[..., b : b + 1] * (x15 @ self.f_one[b])
            ds[self.i_arr] = dx[..., 0:3]
            ds[self.j_arr] = dx[..., 3:6]
            dq = dx[..., 6:15]
        else:
            dq = np.zeros_like(q)
        return ClusterPhasePoint(one_site=ds, two_site=dq)

    def energy(self, state: ClusterPhasePoint) -> np.ndarray:
        """Classical H_W per trajectory: mean-field half-sum plus linear intra terms."""
        s, q = state.one_site, state.two_site
        e = 0.5 * np.einsum("nmc,nmc->m", self.fields(s), s)
        if len(self.j_intra):
            u = -self.j_intra  # (P,)
            e = e + u @ (q[:, :, 0] * self.weights[0])
            e = e + u @ (q[:, :, 4] * self.weights[1])
            e = e + u @ (q[:, :, 8] * self.weights[2])
        return e

    def unravel(self, y: np.ndarray, m: int) -> ClusterPhasePoint:
        cut = self.n * m * 3
        return ClusterPhasePoint(
            one_site=y[:cut].reshape(self.n, m, 3),
            two_site=y[cut:].reshape(len(self.i_arr), m, 9),
        )


def cluster_derivative(
    state: ClusterPhasePoint, partition: ClusterPartition, ct: CouplingTable
) -> ClusterPhasePoint:
    """Time derivative of a cluster ensemble block (convenience wrapper)."""
    return _ClusterSystem(partition, ct).derivative(state)


def integrate_clusters(
    state0: ClusterPhasePoint,
    partition: ClusterPartition,
    ct: CouplingTable,
    icfg: IntegratorConfig,
    observer=None,
) -> ConservationReport:
    """Evolve one block over icfg.sample_times, monitoring Sz, H_W, and the
    norms of unpaired spins (paired one-site variables shrink legitimately)."""
    if icfg.sample_times is None:
        raise ValueError("IntegratorConfig.sample_times is required")
    sys_ = _ClusterSystem(partition, ct)
    times = icfg.sample_times
    m = state0.one_site.shape[1]

    sz0 = state0.one_site[:, :, 2].sum(axis=0)
    e0 = sys_.energy(state0)
    e_scale = np.maximum(np.abs(e0), 1e-30)
    norm0 = np.sqrt((state0.one_site[sys_.singles] ** 2).sum(axis=-1))
    report = ConservationReport(n_trajectories=m)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return sys_.derivative(sys_.unravel(y, m)).ravel()

    def emit(k: int, y: np.ndarray) -> None:
        st = sys_.unravel(y, m)
        sz = st.one_site[:, :, 2].sum(axis=0)
        report.sz_drift = max(report.sz_drift, np.abs(sz - sz0).max() / (0.5 * sys_.n))
        e = sys_.energy(st)
        report.energy_drift = max(report.energy_drift, (np.abs(e - e0) / e_scale).max())
        if sys_.singles.size:
            norms = np.sqrt((st.one_site[sys_.singles] ** 2).sum(axis=-1))
            report.norm_dev = max(report.norm_dev, np.abs(norms - norm0).max())
        if observer is not None:
            observer(k, st)

    ok = adaptive_sample_loop(rhs, state0.ravel(), times, icfg, emit)
    if not ok:
        report.n_failed = m
        raise IntegrationError(f"step-size underflow; batch of {m} trajectories failed")
    return report


def run_ctwa_ensemble(
    ct: CouplingTable,
    times: np.ndarray,
    n_traj: int,
    seed: int,
    icfg: IntegratorConfig | None = None,
    batch_size: int = 1024,
    partition: ClusterPartition | None = None,
) -> ObservableSeries:
    """Cluster-method twin of dtwa.run_ensemble: same draws, same pipeline."""
    if n_traj < 2:
        raise ValueError("n_traj must be at least 2")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    times = np.asarray(times, dtype=float)
    icfg = (icfg or IntegratorConfig()).with_times(times)
    if partition is None:
        partition = pair_spins(ct)
    signs = draw_signs(ct.N, n_traj, seed)

    acc = MomentAccumulator(len(times))
    report = ConservationReport()
    i_arr = np.array([ij[0] for ij in partition.pairs], dtype=np.intp)
    j_arr = np.array([ij[1] for ij in partition.pairs], dtype=np.intp)
    for lo in range(0, n_traj, batch_size):
        s = phase_point_block(signs[lo : lo + batch_size])
        m = s.shape[1]
        if len(i_arr):
            q = np.einsum("pma,pmb->pmab", s[i_arr], s[j_arr]).reshape(len(i_arr), m, 9)
        else:
            q = np.zeros((0, m, 9))
        state0 = ClusterPhasePoint(one_site=s, two_site=q)
        means = np.empty((len(times), m, 3))
        prods = np.empty((len(times), m, 6))

        def observer(k: int, st: ClusterPhasePoint) -> None:
            means[k], prods[k] = collective_moments(st.one_site)

        report = report.merge(integrate_clusters(state0, partition, ct, icfg, observer))
        acc.commit(means, prods)

    mean, mean_err, second, second_err, count = acc.finalize()
    meta = {
        "seed": int(seed),
        "batch_size": int(batch_size),
        "rel_tol": icfg.rel_tol,
        "abs_tol": icfg.abs_tol,
        "n_pairs": len(partition.pairs),
        "singleton": partition.singleton,
        "conservation": report.to_dict(),
    }
    return assemble_series(
        times, ct.N, mean, mean_err, second, second_err,
        n_samples=count, method="ctwa", meta=meta,
    )
