"""Exact quantum dynamics for small systems (the validation oracle).

Works in the full 2^N product basis.  Spin 0 is the least significant
bit of the basis index; a set bit means "up", i.e. s^z = +1/2.  The
initial state is always the x-polarized product state, matching the
semiclassical simulations.

Propagation uses the scaled-and-squared matrix exponential below
N = 11 and Krylov stepping (expm_multiply) up to the hard cap N = 14:
exactness over speed, this is an oracle.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from . import observables
from .lattice import CouplingTable

N_CAP = 14
DENSE_MAX = 10


class DimensionError(ValueError):
    """System too large for the exact oracle."""


def _check_size(n: int, cap: int = N_CAP) -> None:
    if n > cap:
        raise DimensionError(f"exact oracle capped at N = {cap}, got N = {n}")
    if n < 1:
        raise DimensionError("need at least one spin")


def build_hamiltonian(ct: CouplingTable) -> sp.csr_matrix:
    """Sparse XXZ Hamiltonian -sum_{i<j} J_ij [jp (xx + yy) + delta zz]."""
    n = ct.N
    _check_size(n)
    params = ct.params
    dim = 1 << n
    states = np.arange(dim, dtype=np.int64)

    # diagonal: -delta * sum_{i<j} J_ij sz_i sz_j
    zvals = ((states[:, None] >> np.arange(n)) & 1) - 0.5  # (dim, n) of +-1/2
    diag = -params.delta * 0.5 * np.einsum("ki,ij,kj->k", zvals, ct.matrix, zvals)

    rows, cols, vals = [], [], []
    if params.j_perp != 0.0:
        for i in range(n):
            for j in range(i + 1, n):
                # flip-flop: amplitude -J_ij jp / 2 between states with opposite bits
                differ = ((states >> i) & 1) != ((states >> j) & 1)
                src = states[differ]
                dst = src ^ ((1 << i) | (1 << j))
                rows.append(src)
                cols.append(dst)
                vals.append(np.full(src.size, -ct.matrix[i, j] * params.j_perp / 2.0))
    if rows:
        h = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim),
        ).tocsr()
    else:
        h = sp.csr_matrix((dim, dim))
    return h + sp.diags(diag)


def x_polarized_state(n: int) -> np.ndarray:
    _check_size(n)
    dim = 1 << n
    return np.full(dim, dim**-0.5, dtype=complex)


def collective_operators(n: int) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """Collective S^x, S^y, S^z in the basis convention above."""
    _check_size(n)
    dim = 1 << n
    states = np.arange(dim, dtype=np.int64)
    sz_diag = (((states[:, None] >> np.arange(n)) & 1) - 0.5).sum(axis=1)
    sz = sp.diags(sz_diag).tocsr()

    rows, cols, xvals, yvals = [], [], [], []
    for i in range(n):
        flipped = states ^ (1 << i)
        up = ((states >> i) & 1).astype(bool)
        rows.append(states)
        cols.append(flipped)
        xvals.append(np.full(dim, 0.5))
        # <down|sy|up> = i/2, <up|sy|down> = -i/2
        yvals.append(np.where(up, -0.5j, 0.5j))
    sx = sp.coo_matrix(
        (np.concatenate(xvals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    sy = sp.coo_matrix(
        (np.concatenate(yvals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    return sx, sy, sz


def _propagators(h: sp.csr_matrix, n: int, dts: np.ndarray):
    """Yield functions applying exp(-i H dt) for each requested interval."""
    if n <= DENSE_MAX:
        hd = h.toarray()
        for dt in dts:
            u = scipy.linalg.expm(-1j * hd * dt)
            yield lambda psi, u=u: u @ psi
    else:
        a = (-1j) * h.tocsc()
        for dt in dts:
            yield lambda psi, a=a, dt=dt: scipy.sparse.linalg.expm_multiply(a * dt, psi)


def evolve_exact(ct: CouplingTable, times: np.ndarray, cap: int = N_CAP) -> observables.ObservableSeries:
    """Exact observable series on the sample grid, from the x-polarized state."""
    n = ct.N
    _check_size(n, cap)
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be non-empty, non-negative, strictly increasing")

    h = build_hamiltonian(ct)
    sx, sy, sz = collective_operators(n)
    psi = x_polarized_state(n)

    tgrid = times if times[0] == 0.0 else np.concatenate([[0.0], times])
    keep = slice(1, None) if times[0] != 0.0 else slice(None)
    dts = np.diff(tgrid)

    nt = len(times)
    mean = np.zeros((nt, 3))
    second = np.zeros((nt, 6))

    def record(k, psi):
        ax, ay, az = sx @ psi, sy @ psi, sz @ psi
        mean[k] = [np.vdot(psi, ax).real, np.vdot(psi, ay).real, np.vdot(psi, az).real]
        # Re<A psi|B psi> is the symmetrized moment <{A,B}>/2
        second[k] = [
            np.vdot(ax, ax).real,
            np.vdot(ay, ay).real,
            np.vdot(az, az).real,
            np.vdot(ay, az).real,
            np.vdot(ax, ay).real,
            np.vdot(ax, az).real,
        ]

    k = 0
    if times[0] == 0.0:
        record(0, psi)
        k = 1
    for step, apply_u in zip(range(len(dts)), _propagators(h, n, dts)):
        psi = apply_u(psi)
        record(k, psi)
        k += 1

    zeros = np.zeros_like(mean)
    zeros6 = np.zeros_like(second)
    return observables.assemble_series(
        times, n, mean, zeros, second, zeros6,
        n_samples=1, method="exact", bessel=False,
        meta={"N": n, "norm_final": float(np.linalg.norm(psi))},
    )


def short_time_expansion(ct: CouplingTable, order: int = 2) -> np.ndarray:
    """Taylor coefficients of <S^x(t)> at t = 0 up to the given order.

    Coefficient k is <psi0| (i ad_H)^k S^x |psi0> / k!, computed by nested
    sparse commutators.
    """
    n = ct.N
    _check_size(n)
    if order < 0:
        raise ValueError("order must be >= 0")
    h = build_hamiltonian(ct).astype(complex)
    sx, _, _ = collective_operators(n)
    psi = x_polarized_state(n)

    coeffs = np.zeros(order + 1)
    op = sx.astype(complex)
    fact = 1.0
    for k in range(order + 1):
        if k > 0:
            fact *= k
        coeffs[k] = np.vdot(psi, op @ psi).real / fact
        op = 1j * (h @ op - op @ h)
    return coeffs
