import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fspg.functionals import ProblemSpec, Quartet, RegimeError, critical_exponent, evaluate
from fspg.gridfield import Field, GridMismatchError, GridSpec
from fspg.potentials import constant, paper_example
from fspg.solver import SolverConfig, minimize_on_manifold
from fspg.verify import (
    SingularSystemError,
    certificate_profile,
    cramer_d,
    critical_identity_defect,
    critical_probe,
    identity_report,
    lagrange_det,
    lagrange_matrix,
    lagrange_solve,
    level_report,
    nonexistence_critical_identity,
    nonexistence_subcritical_certificate,
    subcritical_probe,
    young_inequality_check,
)

from conftest import random_field, smooth_random_field

G = GridSpec(16, 10.0)


def sub_problem(grid=G, lam=0.5, coupling=1.0, p=1.5):
    return ProblemSpec(0.9, p, lam, constant(1.0), grid, coupling=coupling)


def crit_problem(grid=G, s=0.9, potential=None):
    return ProblemSpec(s, critical_exponent(s), 1.0, potential or constant(1.0), grid)


class TestLagrange:
    @pytest.mark.parametrize("s,p", [(0.8, 2.5), (0.9, 3.0), (0.95, 3.5), (0.76, 2.01)])
    def test_roots(self, s, p):
        for mu in (0.0, -1.0 / (6 * s - 3)):
            closed, num = lagrange_det(mu, s, p)
            assert abs(closed) <= 1e-12
            assert abs(num) <= 1e-12 * np.linalg.norm(lagrange_matrix(mu, s, p)) ** 4

    def test_random_draws(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            mu, s, p = rng.uniform(-3, 3), rng.uniform(0.75, 1.0), rng.uniform(1.0, 5.0)
            closed, num = lagrange_det(mu, s, p)
            assert abs(closed - num) <= 1e-10 * max(1.0, abs(closed))

    def test_known_value(self):
        closed, num = lagrange_det(1.0, 0.9, 3.0)
        assert closed == pytest.approx(-79.3152, abs=1e-4)
        assert num == pytest.approx(closed, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.1, 10), st.floats(-2, 2), st.floats(0.76, 0.99), st.floats(2.05, 5.0))
    def test_cramer_matches_solve(self, k, mu, s, p):
        if abs(mu) < 1e-3 or abs(1 + mu * (6 * s - 3)) < 1e-3:
            return
        d = lagrange_solve(k, mu, s, p)[3]
        assert d == pytest.approx(cramer_d(k, s, p), rel=1e-10, abs=1e-12 * k)

    def test_cramer_sign(self):
        assert cramer_d(1.0, 0.9, 3.0) == pytest.approx(-2 / 9, rel=1e-12)
        for s in (0.8, 0.9, 0.99):
            for p in (2.1, 3.0, 4.0):
                assert cramer_d(1.0, s, p) < 0

    def test_singular(self):
        for p in (1.0, 2.0):
            with pytest.raises(SingularSystemError):
                cramer_d(1.0, 0.9, p)
        with pytest.raises(SingularSystemError):
            lagrange_solve(1.0, 0.0, 0.9, 3.0)
        with pytest.raises(SingularSystemError):
            lagrange_solve(1.0, 1.0, 0.9, 2.0)


class TestSubcriticalCertificate:
    @pytest.mark.parametrize("p", [1.01, 1.25, 1.5, 1.75, 2.0])
    def test_profile_nonnegative(self, p):
        t = np.arange(0.0, 10.0 + 1e-9, 1e-4)
        assert np.all(certificate_profile(t, p) >= -1e-12 * (t * t + t**3 + t ** (p + 1)))

    def test_profile_fails_above_two(self):
        t = np.arange(0.0, 10.0, 1e-2)
        assert np.min(certificate_profile(t, 2.5)) < 0

    def test_values(self):
        ps = sub_problem()
        assert nonexistence_subcritical_certificate(Field.zeros(G), None, ps) == 0.0
        g = GridSpec(8, 1.0)
        one = Field(g, np.ones(g.shape))
        assert nonexistence_subcritical_certificate(one, None, sub_problem(g)) == pytest.approx(1.0)
        g2 = GridSpec(8, 2.0)
        one2 = Field(g2, np.ones(g2.shape))
        assert nonexistence_subcritical_certificate(one2, None, sub_problem(g2)) == pytest.approx(8.0)

    def test_sign_symmetric(self, rng):
        u = random_field(G, rng)
        ps = sub_problem()
        assert nonexistence_subcritical_certificate(u, None, ps) == nonexistence_subcritical_certificate(-u, None, ps)

    def test_grid_mismatch(self, rng):
        u = random_field(G, rng)
        with pytest.raises(GridMismatchError):
            nonexistence_subcritical_certificate(u, Field.zeros(GridSpec(8, 10.0)), sub_problem())
        phi = Field(G, evaluate(u, sub_problem()).phi)
        nonexistence_subcritical_certificate(u, phi, sub_problem())

    @pytest.mark.parametrize("kw", [dict(p=2.5), dict(coupling=0.2), dict(lam=1.5)])
    def test_regime(self, rng, kw):
        with pytest.raises(RegimeError):
            nonexistence_subcritical_certificate(random_field(G, rng), None, sub_problem(**kw))

    def test_regime_potential(self, rng):
        ps = ProblemSpec(0.9, 1.5, 0.5, constant(2.0), G)
        with pytest.raises(RegimeError):
            nonexistence_subcritical_certificate(random_field(G, rng), None, ps)


class TestCriticalIdentity:
    def test_zero(self):
        assert nonexistence_critical_identity(Field.zeros(G), crit_problem()) == (0.0, 0.0)

    def test_constant_potential(self, rng):
        u = smooth_random_field(G, rng)
        tv, tp = nonexistence_critical_identity(u, crit_problem())
        mass = float(np.sum(u.values**2) * G.cell_volume)
        assert tv == pytest.approx(2 * 0.9 * mass, rel=1e-13)
        assert tp > 0

    def test_defect_is_identity_combination(self, rng):
        for pot in (constant(1.0), paper_example(0.9)):
            u = smooth_random_field(G, rng)
            d = critical_identity_defect(u, crit_problem(potential=pot))
            assert d["defect"] == pytest.approx(d["combination"], rel=1e-10,
                                                abs=1e-12 * abs(d["term_V"]))

    def test_term_v_positive_for_example(self, rng):
        for _ in range(5):
            u = random_field(G, rng)
            tv, _ = nonexistence_critical_identity(u, crit_problem(potential=paper_example(0.9)))
            assert tv > 0

    def test_regime(self, rng):
        with pytest.raises(RegimeError):
            nonexistence_critical_identity(random_field(G, rng), ProblemSpec(0.9, 3.0, 1.0, constant(1.0), G))


class TestYoung:
    def test_random_fields(self, rng):
        ps = sub_problem()
        for _ in range(10):
            r = young_inequality_check(random_field(G, rng), ps)
            assert r["passed"]

    def test_ground_state(self, ground_state, base_problem):
        r = young_inequality_check(ground_state.field, base_problem.with_(grid=ground_state.field.grid))
        assert r["passed"]
        assert r["lhs"] <= r["rhs"]
        assert r["gauge_correction"] > 0


class TestReports:
    @settings(max_examples=200, deadline=None)
    @given(st.builds(Quartet, *[st.floats(1e-3, 1e3)] * 4, st.floats(-10, 10)),
           st.floats(0.76, 0.99), st.floats(2.05, 3.6), st.floats(0.1, 1.0))
    def test_identities(self, q, s, p, lam):
        ps = ProblemSpec(s, min(p, critical_exponent(s)), lam, constant(1.0), G)
        r = identity_report(q, ps)
        assert r["passed"]
        assert "reduced_identity" in r

    def test_reduced_identity_absent_for_small_p(self):
        r = identity_report(Quartet(1, 1, 1, 1), sub_problem())
        assert "reduced_identity" not in r and r["passed"]

    def test_level_report(self, ground_state, base_problem):
        rep = level_report([ground_state], base_problem)
        assert len(rep) == 1 and rep.passed
        row = rep.rows[0]
        assert row["max_rel_diff"] <= 1e-6
        assert row["theta_star"] == pytest.approx(1.0, abs=1e-4)
        assert rep.to_dict()["passed"]

    def test_level_report_skips_unconverged(self, ground_state, base_problem):
        from dataclasses import replace
        bad = replace(ground_state, status="max_iters")
        assert len(level_report([bad], base_problem)) == 0
        assert level_report([], base_problem).passed

    def test_nehari_ray(self):
        ps = ProblemSpec(0.95, 3.5, 1.0, constant(1.0), GridSpec(16, 20.0))
        r = minimize_on_manifold(ps)
        rep = level_report([r], ps, nehari_descent=True)
        row = rep.rows[0]
        assert abs(row["nehari_ray_level"] - r.level) <= 1e-4 * r.level
        assert row["nehari_ray_t"] == pytest.approx(1.0, abs=1e-3)
        assert "nehari_descent_level" in row


class TestProbes:
    def test_subcritical(self):
        rep = subcritical_probe(sub_problem(GridSpec(16, 20.0)))
        assert rep.consistent
        assert all(m <= 1e-6 for m in rep.mass_ratios)
        assert min(rep.certificate_min) >= -1e-12
        assert "consistent" in rep.message

    def test_subcritical_regime(self):
        with pytest.raises(RegimeError):
            subcritical_probe(ProblemSpec(0.9, 3.0, 1.0, constant(1.0), G))

    def test_critical(self):
        rep = critical_probe(crit_problem(GridSpec(16, 20.0)))
        assert rep.consistent
        assert rep.statuses[0] != "converged"
        assert rep.term_v_min[0] > 0
        assert rep.to_dict()["regime"] == "critical"

    def test_critical_regime(self):
        with pytest.raises(RegimeError):
            critical_probe(ProblemSpec(0.9, 3.0, 1.0, constant(1.0), G))
