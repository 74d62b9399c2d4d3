"""Dissipativity certificates, worst-case sampling checks, trajectory-level
storage checks and the scalar-parametrized reduction falsifier."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dissipasynth as ds
from dissipasynth import (Certificate, StateSpace, certify_dissipativity,
                          close_loop, hinf_bisect, s_lemma_check,
                          storage_trajectory_check, worst_case_check)
from dissipasynth.analysis import supply_value
from dissipasynth.data import complete, energy_phi
from dissipasynth.model import DimensionError, frequency_response
from dissipasynth.synthesis import SynthesisIngredients, hinf_supply

from conftest import random_plant, record_noisy, scalar_plant


def hinf_qsr(gamma, p=1, q=1):
    return (-gamma**2 * np.eye(p), np.zeros((p, q)), np.eye(q))


def random_stable_system(rng, nu, rho=1, sigma=1):
    A = rng.standard_normal((nu, nu))
    A *= rng.uniform(0.3, 0.9) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    return StateSpace(A=A, B=rng.standard_normal((nu, rho)),
                      C=rng.standard_normal((sigma, nu)),
                      D=rng.standard_normal((sigma, rho)))


class TestCertifyDissipativity:
    def test_scalar_above_and_below_norm(self):
        # open-loop H-infinity norm of 1/(z - 0.5) is 2.0
        sys = StateSpace(A=0.5, B=1.0, C=1.0, D=0.0)
        assert certify_dissipativity(sys, hinf_qsr(2.1)) is not None
        assert certify_dissipativity(sys, hinf_qsr(1.9)) is None

    def test_unstable_never_certified(self):
        sys = StateSpace(A=1.1, B=1.0, C=1.0, D=0.0)
        assert certify_dissipativity(sys, hinf_qsr(100.0)) is None

    def test_zero_system(self):
        sys = StateSpace(A=0.0, B=0.0, C=0.0, D=0.0)
        cert = certify_dissipativity(sys, hinf_qsr(1.0))
        assert cert is not None and cert.slack > 0
        assert np.linalg.eigvalsh(cert.P)[0] > 0

    def test_dimension_mismatch(self):
        sys = StateSpace(A=0.5, B=np.ones((1, 2)), C=1.0,
                         D=np.zeros((1, 2)))
        with pytest.raises(DimensionError):
            certify_dissipativity(sys, hinf_qsr(2.0, p=1, q=1))

    def test_supply_rate_object_accepted(self):
        sys = StateSpace(A=0.5, B=1.0, C=1.0, D=0.0)
        cert = certify_dissipativity(sys, hinf_supply(3.0, 1, 1))
        assert cert is not None

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_certified_implies_peak_below_gamma(self, seed):
        rng = np.random.default_rng(seed)
        sys = random_stable_system(rng, int(rng.integers(1, 5)))
        peak = frequency_response(sys, 512).peak[1]
        gamma = peak * 1.1 + 0.1
        cert = certify_dissipativity(sys, hinf_qsr(gamma))
        assert cert is not None
        assert peak <= gamma * (1 + 1e-6)


class TestHinfBisect:
    def test_matches_frequency_sweep_scalar(self):
        sys = StateSpace(A=0.5, B=1.0, C=1.0, D=0.0)
        assert hinf_bisect(sys) == pytest.approx(2.0, rel=1e-3)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_frequency_sweep_random(self, seed):
        rng = np.random.default_rng(seed)
        sys = random_stable_system(rng, int(rng.integers(1, 7)))
        norm = frequency_response(sys, 4096).peak[1]
        assert hinf_bisect(sys) == pytest.approx(norm, rel=1e-3)


class TestWorstCaseCheck:
    def make_ingredients(self, rng, gamma):
        plant = scalar_plant()
        rec = record_noisy(plant, 8, 0.05, rng)
        cs = complete(rec, energy_phi(0.05, 8, 1), plant.B1)
        return SynthesisIngredients(
            cs=cs, supply=hinf_supply(gamma, 1, 1), B1=plant.B1,
            C1=plant.C1, D1=plant.D1, E=plant.E, C=plant.C, F=plant.F)

    def test_synthesized_controller_all_certified(self, rng):
        ing = self.make_ingredients(rng, 1.0)
        res = ds.search_alpha(ing, objective="minimize_gamma_sq")
        ing2 = self.make_ingredients(np.random.default_rng(0),
                                     res.performance * 1.001)
        report = worst_case_check(ing2, res.controller, 20, seed=1)
        assert report["all_certified"]
        assert report["worst_peak_gain"] <= res.performance * 1.002

    def test_bad_controller_fails(self, rng):
        # zero controller on a consistency set centered at an unstable A
        unstable = ds.Plant(A=1.2, B1=1.0, B=1.0, C1=1.0, D1=0.0, E=0.0,
                            C=1.0, F=0.0)
        rec = record_noisy(unstable, 8, 0.05, rng)
        cs = complete(rec, energy_phi(0.05, 8, 1), unstable.B1)
        ing = SynthesisIngredients(
            cs=cs, supply=hinf_supply(10.0, 1, 1), B1=unstable.B1,
            C1=unstable.C1, D1=unstable.D1, E=unstable.E, C=unstable.C,
            F=unstable.F)
        zero = ds.Controller(Ac=0.0, Bc=0.0, Cc=0.0, Dc=0.0)
        report = worst_case_check(ing, zero, 10, seed=0)
        assert not report["all_certified"]

    def test_zero_samples_vacuous_with_warning(self, rng):
        ing = self.make_ingredients(rng, 2.0)
        zero = ds.Controller(Ac=0.0, Bc=0.0, Cc=0.0, Dc=0.0)
        report = worst_case_check(ing, zero, 0, seed=0)
        assert report["all_certified"] and "warning" in report


class TestStorageTrajectoryCheck:
    def test_valid_certificate_passes(self):
        sys = StateSpace(A=0.5, B=1.0, C=1.0, D=0.0)
        supply = hinf_qsr(2.1)
        cert = certify_dissipativity(sys, supply)
        assert storage_trajectory_check(sys, cert, supply, horizon=200,
                                        trials=100, seed=0)

    def test_corrupted_certificate_fails(self):
        sys = StateSpace(A=0.5, B=1.0, C=1.0, D=0.0)
        supply = hinf_qsr(2.1)
        cert = certify_dissipativity(sys, supply)
        bad = Certificate(P=cert.P + 0.5 * np.eye(1), slack=cert.slack)
        assert not storage_trajectory_check(sys, bad, supply, horizon=200,
                                            trials=100, seed=0)

    def test_zero_trajectory_skipped(self):
        sys = StateSpace(A=0.0, B=0.0, C=0.0, D=0.0)
        cert = certify_dissipativity(sys, hinf_qsr(1.0))
        # zero state, zero disturbance-to-state coupling: both sides can be
        # zero at every step; skipping keeps the verdict true
        assert storage_trajectory_check(sys, cert, hinf_qsr(1.0), trials=5,
                                        seed=0)

    def test_supply_value_formula(self):
        Q, S, R = (np.array([[-4.0]]), np.array([[0.5]]), np.array([[1.0]]))
        w, z = np.array([2.0]), np.array([3.0])
        expected = -(4.0 * (-4.0) + 2 * 2.0 * 0.5 * 3.0 + 9.0)
        assert supply_value(Q, S, R, w, z) == pytest.approx(expected)


class TestSLemmaCheck:
    @staticmethod
    def random_hypothesis_K(rng, n, N):
        K22 = -np.eye(N) * rng.uniform(0.5, 2.0)
        K12 = rng.standard_normal((n, N))
        G = rng.standard_normal((n, n + 1))
        slack = G @ G.T
        K11 = K12 @ np.linalg.solve(K22, K12.T) + slack
        return np.block([[K11, K12], [K12.T, K22]])

    def test_constructed_instance_no_counterexample(self, rng):
        K = self.random_hypothesis_K(rng, 2, 3)
        M = 2.0 * K + np.eye(5)
        out = s_lemma_check(M, K, alpha=2.0, samples=1000, seed=0)
        assert out["reduction_holds"] and out["counterexample"] is None

    def test_negative_alpha_rejected(self, rng):
        K = self.random_hypothesis_K(rng, 1, 1)
        with pytest.raises(ValueError, match="alpha"):
            s_lemma_check(np.eye(2), K, alpha=-1.0)

    def test_scalar_reduction_fails(self):
        K = np.diag([1.0, -1.0])
        M = np.diag([3.0, -1.0])
        out = s_lemma_check(M, K, alpha=1.0, samples=10, seed=0)
        assert not out["reduction_holds"]
        assert out["counterexample"] is None

    def test_hypothesis_violation_raises(self):
        K = np.diag([1.0, 1.0])  # trailing block not negative definite
        with pytest.raises(ValueError):
            s_lemma_check(np.eye(2), K, alpha=1.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_never_finds_counterexample_when_reduction_holds(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 3))
        N = int(rng.integers(1, 4))
        K = self.random_hypothesis_K(rng, n, N)
        alpha = float(rng.uniform(0.5, 4.0))
        M = alpha * K + np.eye(n + N) * rng.uniform(0.5, 2.0)
        out = s_lemma_check(M, K, alpha=alpha, samples=200, seed=seed)
        if out["reduction_holds"]:
            assert out["counterexample"] is None
