import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chained_platoon, follower_map, jacobian_fd
from safedrive.analysis import (
    FollowerSystem, Stability, classify_stability, equilibrium, equilibrium_gap, jacobian,
    jacobian_eigenvalues, platoon_prediction, stability_sweep, step, trajectory, write_sweep_csv,
)
from safedrive.kernel import DefensivePrincipleError, VehicleParams

EGO = VehicleParams(max_decel=3.0, reaction_time=0.1, min_gap=4.0)


def system(w=25.0, ego=EGO, d_l=3.0, g=0.0, v=0.0):
    return FollowerSystem(w, ego, d_l, g, v)


class TestStep:
    def test_fixed_point(self):
        g, v = equilibrium(system())
        g2, v2 = step(system(g=g, v=v))
        # exact in real arithmetic; the square root costs at most a few ulps
        assert g2 == g and abs(v2 - v) <= 4 * np.spacing(v)

    def test_gap_surplus_becomes_speed(self):
        g2, v2 = step(system(g=10.0, v=25.0))
        assert g2 == 10.0 and v2 > 25.0

    def test_converges_from_far(self):
        tr = trajectory(system(g=20.0, v=20.0), 2000)
        assert tr[-1] == pytest.approx([6.5, 25.0], abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(4, 200), st.floats(0, 50), st.floats(0, 50), st.floats(0, 3))
    def test_matches_quadratic_roots(self, g, v, w, extra):
        sys = FollowerSystem(w, EGO, 3.0 + extra, g, v)
        want = follower_map(g, v, w, 0.1, 3.0, 3.0 + extra, 4.0)
        assert step(sys) == pytest.approx(want, abs=1e-9)

    def test_rejects_harder_braking_ego(self):
        with pytest.raises(DefensivePrincipleError):
            FollowerSystem(10, VehicleParams(max_decel=5), 3.0)


class TestEquilibrium:
    def test_standstill(self):
        assert equilibrium(system(w=0.0)) == (4.0, 0.0)

    def test_equal_decels(self):
        assert equilibrium(system()) == pytest.approx((6.5, 25.0), abs=1e-12)

    def test_unequal_decels(self):
        ego = VehicleParams(max_decel=2.0, reaction_time=0.1, min_gap=2.0)
        assert equilibrium_gap(20, ego, 4.0) == pytest.approx(20 * 0.1 + (4 - 2) / (2 * 4 * 2) * 400 + 2)
        assert equilibrium(system(w=20, ego=ego, d_l=4.0)) == pytest.approx((54.0, 20.0))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.5, 60), st.floats(1, 9), st.floats(0, 3), st.floats(0.05, 1))
    def test_is_fixed_point_of_step(self, w, d, extra, r):
        ego = VehicleParams(max_decel=d, reaction_time=r, min_gap=2.0)
        sys = FollowerSystem(w, ego, d + extra)
        g, v = equilibrium(sys)
        g2, v2 = step(sys.at(g, v))
        assert g2 == pytest.approx(g, rel=1e-12) and v2 == pytest.approx(v, rel=1e-9)


class TestSpectrum:
    def test_standstill_is_marginal(self):
        lp, lm = jacobian_eigenvalues(system(w=0.0))
        assert lp == pytest.approx(1j) and lm == pytest.approx(-1j)
        rep = classify_stability(system(w=0.0))
        assert rep.classification == Stability.MARGINAL
        assert abs(rep.spectral_radius - 1) <= 1e-12

    def test_reference_point(self):
        lp, lm = jacobian_eigenvalues(system())
        assert lp.imag == 0 and lm.imag == 0
        assert lp.real == pytest.approx(0.988, abs=5e-4)
        assert lm.real == pytest.approx(0.006, abs=5e-4)
        assert classify_stability(system()).classification == Stability.ASYMPTOTICALLY_STABLE

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 60), st.floats(1, 9), st.floats(0.05, 1))
    def test_closed_form_matches_eigensolver(self, w, d, r):
        sys = FollowerSystem(w, VehicleParams(max_decel=d, reaction_time=r), d)
        want = sorted(np.linalg.eigvals(jacobian(sys)), key=lambda z: (z.real, z.imag))
        got = sorted(jacobian_eigenvalues(sys), key=lambda z: (z.real, z.imag))
        assert np.allclose(got, want, rtol=0, atol=1e-10)
        assert max(abs(z) for z in got) < 1

    def test_analytic_jacobian_matches_finite_differences(self):
        sys = system()
        g, v = equilibrium(sys)
        J = jacobian(sys)
        assert np.allclose(J, jacobian_fd(g, v, 25, 0.1, 3, 3, 4), atol=1e-6)
        assert np.allclose(jacobian(sys, 9.0, 22.0), jacobian_fd(9.0, 22.0, 25, 0.1, 3, 3, 4), atol=1e-6)


class TestPlatoon:
    def test_homogeneous(self):
        assert platoon_prediction(25, [EGO] * 3, [3.0] * 3) == pytest.approx([6.5] * 3)

    def test_standstill(self):
        assert platoon_prediction(0, [EGO] * 3, [3.0] * 3) == [4.0] * 3

    def test_heterogeneous_matches_chained_maps(self):
        decels = [5.0, 4.0, 3.0, 3.0]
        followers = [VehicleParams(max_decel=d, reaction_time=0.1, min_gap=4.0) for d in decels[1:]]
        pred = platoon_prediction(25, followers, decels[:-1])
        sim = chained_platoon(25, decels, 0.1, 4.0, steps=5000)
        assert np.allclose(sim, pred, rtol=0.01)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            platoon_prediction(25, [EGO] * 2, [3.0])


def test_sweep_grid(tmp_path):
    rows = stability_sweep([0.0, 0.5, 25.0, 60.0], [1, 3, 9], [0.05, 1.0])
    assert len(rows) == 24
    for row in rows:
        want = "marginal" if row["w"] == 0 else "asymptotically_stable"
        assert row["classification"] == want
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    with open(path) as f:
        back = list(csv.DictReader(f))
    assert len(back) == 24 and float(back[5]["radius"]) == rows[5]["radius"]
