"""Squeezing / magnetization math and the series container."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinsqueeze import observables as obs


def theta_scan_min_variance(vyy, vzz, vyz, n_grid=1_000_000):
    """Brute-force minimum of n(theta)^T V n(theta) over the quadrature angle."""
    theta = np.linspace(0.0, np.pi, n_grid, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    return (c * c * vyy + 2 * c * s * vyz + s * s * vzz).min()


def make_series(n_spins, mean, second, mean_err=None, second_err=None, n_samples=1000):
    t = np.arange(len(mean), dtype=float)
    mean = np.asarray(mean, dtype=float)
    second = np.asarray(second, dtype=float)
    if mean_err is None:
        mean_err = np.zeros_like(mean)
    if second_err is None:
        second_err = np.zeros_like(second)
    return obs.assemble_series(
        t, n_spins, mean, mean_err, second, second_err,
        n_samples=n_samples, method="test", bessel=False,
    )


class TestMinTransverseVariance:
    def test_diagonal_by_inspection(self):
        assert obs.min_transverse_variance(2.0, 1.0, 0.0) == pytest.approx(1.0, abs=1e-14)

    def test_rank_one_by_inspection(self):
        assert obs.min_transverse_variance(1.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_degenerate_is_exact(self):
        # Vyz = 0 and Vyy = Vzz: closed form must return Vyy with no roundoff
        assert obs.min_transverse_variance(0.73, 0.73, 0.0) == 0.73

    @given(
        a=st.floats(0.05, 50.0),
        b=st.floats(0.05, 50.0),
        rho=st.floats(-0.99, 0.99),
    )
    @settings(max_examples=25, deadline=None)
    def test_matches_angle_scan(self, a, b, rho):
        vyz = rho * np.sqrt(a * b)  # positive semidefinite by construction
        lam = obs.min_transverse_variance(a, b, vyz)
        ref = theta_scan_min_variance(a, b, vyz)
        assert lam == pytest.approx(ref, abs=1e-9 * max(1.0, a, b))

    def test_vectorized(self):
        lam = obs.min_transverse_variance([2.0, 1.0], [1.0, 1.0], [0.0, 1.0])
        np.testing.assert_allclose(lam, [1.0, 0.0], atol=1e-14)


class TestAssembleSeries:
    def test_coherent_state_moments_give_unity(self):
        n = 16
        mean = [[n / 2, 0.0, 0.0]]
        # order: xx, yy, zz, yz, xy, xz ; raw second moments of the coherent state
        second = [[n * n / 4 + n / 4, n / 4, n / 4, 0.0, 0.0, 0.0]]
        series = make_series(n, mean, second)
        assert series.values["xi2"][0] == pytest.approx(1.0, rel=1e-14)
        assert series.values["Vyy"][0] == pytest.approx(n / 4)
        assert series.flags[0] == 0

    def test_perfect_polarization_magnetization(self):
        n = 10
        mean = [[n / 2, 0.0, 0.0]]
        second = [[n * n / 4, 0.0, 0.0, 0.0, 0.0, 0.0]]
        series = make_series(n, mean, second)
        assert series.values["mxy"][0] == pytest.approx(1.0, abs=1e-15)
        assert series.values["xi2"][0] == 0.0

    def test_bessel_correction_applied(self):
        # two samples of Sy = +1, -1: raw mean square 1, unbiased variance 2
        t = np.array([0.0])
        mean = np.array([[1.0, 0.0, 0.0]])
        second = np.array([[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]])
        series = obs.assemble_series(
            t, 4, mean, np.zeros((1, 3)), second, np.zeros((1, 6)),
            n_samples=2, method="test", bessel=True,
        )
        assert series.values["Vyy"][0] == pytest.approx(2.0)

    def test_unreliable_flag_when_signal_below_noise(self):
        n = 8
        mean = [[0.01, 0.0, 0.0]]
        second = [[0.1, n / 4, n / 4, 0.0, 0.0, 0.0]]
        mean_err = [[0.1, 0.0, 0.0]]  # Sx mean far below its standard error
        series = make_series(n, mean, second, mean_err=mean_err)
        assert series.flags[0] & obs.FLAG_SQUEEZING_UNRELIABLE

    def test_variance_floors_at_zero(self):
        # roundoff could push V slightly negative; it must be clamped
        n = 4
        mean = [[n / 2, 1.0, 0.0]]
        second = [[n * n / 4, 1.0 - 1e-17, n / 4, 0.0, 0.0, 0.0]]
        series = make_series(n, mean, second)
        assert series.values["Vyy"][0] >= 0.0

    def test_error_propagation_scales(self):
        # doubling all input errors doubles the xi2 error
        n = 12
        mean = [[4.0, 0.1, -0.2]]
        second = [[17.0, 2.0, 3.0, 0.4, 0.0, 0.0]]
        e1 = make_series(n, mean, second,
                         mean_err=[[0.05, 0.02, 0.02]],
                         second_err=[[0.3, 0.1, 0.1, 0.05, 0.0, 0.0]])
        e2 = make_series(n, mean, second,
                         mean_err=[[0.10, 0.04, 0.04]],
                         second_err=[[0.6, 0.2, 0.2, 0.10, 0.0, 0.0]])
        assert e2.errors["xi2"][0] == pytest.approx(2 * e1.errors["xi2"][0], rel=1e-12)
        assert e2.errors["mxy"][0] == pytest.approx(2 * e1.errors["mxy"][0], rel=1e-12)


class TestSeriesCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t = np.sort(rng.random(5)) * 10
        mean = rng.normal(size=(5, 3)) + np.array([5.0, 0, 0])
        second = np.abs(rng.normal(size=(5, 6))) + 25.0
        series = obs.assemble_series(
            t, 10, mean, np.abs(rng.normal(size=(5, 3))) * 0.01,
            second, np.abs(rng.normal(size=(5, 6))) * 0.01,
            n_samples=321, method="dtwa",
        )
        path = tmp_path / "series.csv"
        series.save_csv(str(path), meta={"config_hash": "deadbeef"})
        back = obs.ObservableSeries.load_csv(str(path))
        assert back.method == "dtwa"
        assert back.n_samples == 321
        assert back.meta["config_hash"] == "deadbeef"
        np.testing.assert_array_equal(back.t, series.t)
        for key in obs.OBSERVABLE_KEYS:
            np.testing.assert_array_equal(back.values[key], series.values[key])
            np.testing.assert_array_equal(back.errors[key], series.errors[key])

    def test_pinned_column_order(self, tmp_path):
        series = make_series(4, [[2.0, 0, 0]], [[4.0, 1.0, 1.0, 0, 0, 0]])
        path = tmp_path / "s.csv"
        series.save_csv(str(path))
        header = [l for l in path.read_text().splitlines() if not l.startswith("#")][0]
        assert header.startswith("t,Sx,Sy,Sz,Vyy,Vzz,Vyz,xi2,xi2_err,mxy,mxy_err,flags")
