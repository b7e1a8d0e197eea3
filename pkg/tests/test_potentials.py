import numpy as np
import pytest

from fspg.gridfield import Field, GridSpec
from fspg.potentials import (
    ConvergenceError,
    PotentialSpec,
    check_V1,
    check_V2,
    constant,
    estimate_alpha0,
    evaluate_V,
    load_radial_table,
    paper_example,
    radial_profile,
    radial_table,
    rayleigh_quotient,
    virial_V,
)

G = GridSpec(16, 10.0)


class TestSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PotentialSpec("harmonic", 1.0)

    def test_paper_example_limit(self):
        with pytest.raises(ValueError):
            PotentialSpec("paper_example", 3.0)

    def test_table_radii_must_increase(self):
        with pytest.raises(ValueError):
            radial_table([0, 2, 1], [1, 1, 1])
        with pytest.raises(ValueError):
            radial_table([0, 1, 1], [1, 1, 1])

    def test_table_v_inf_defaults_to_last_row(self):
        assert radial_table([0, 1, 2], [0.5, 0.8, 1.5]).v_inf == 1.5

    def test_hashable(self):
        assert hash(radial_table([0, 1], [1, 2])) == hash(radial_table([0, 1], [1, 2]))


class TestEvaluate:
    def test_constant(self):
        np.testing.assert_array_equal(evaluate_V(constant(1.0), G).values, 1.0)

    def test_paper_example(self):
        V = evaluate_V(paper_example(0.9), G)
        assert V.values[8, 8, 8] == 1.0
        Vfun, _ = radial_profile(paper_example(0.9))
        assert Vfun(1e8) == pytest.approx(2.0, abs=1e-12)

    def test_paper_example_needs_s(self):
        with pytest.raises(ValueError):
            evaluate_V(paper_example(), G)
        assert evaluate_V(paper_example(), G, s=0.9).values[8, 8, 8] == 1.0

    def test_virial(self):
        assert virial_V(constant(3.0), G).is_zero()
        W = virial_V(paper_example(0.9), G)
        assert W.values[8, 8, 8] == 0.0
        _, rdV = radial_profile(paper_example(0.9))
        assert rdV(1.0) == pytest.approx(0.45, rel=1e-14)

    def test_virial_closed_form_matches_finite_difference(self):
        V, rdV = radial_profile(paper_example(0.85))
        r = np.linspace(0.1, 5, 40)
        h = 1e-6
        fd = r * (V(r + h) - V(r - h)) / (2 * h)
        np.testing.assert_allclose(rdV(r), fd, rtol=1e-7)

    def test_table_interpolates_and_extrapolates(self):
        r = np.linspace(0, 5, 21)
        vals = 2 - np.exp(-r**2)
        spec = radial_table(r, vals, v_inf=2.0)
        V, rdV = radial_profile(spec)
        np.testing.assert_allclose(V(r), vals, atol=1e-14)
        assert V(10.0) == 2.0
        assert rdV(10.0) == 0.0
        # Spline derivative close to the analytic one.
        x = np.array([0.7, 1.3, 2.1])
        np.testing.assert_allclose(rdV(x), x * 2 * x * np.exp(-x**2), atol=5e-3)

    def test_table_with_derivatives_is_hermite(self):
        r = np.array([0.0, 1.0, 2.0])
        spec = radial_table(r, [1.0, 1.5, 2.0], derivatives=[0.0, 0.5, 0.0])
        _, rdV = radial_profile(spec)
        assert rdV(1.0) == pytest.approx(0.5)

    def test_short_table_without_derivatives_has_no_virial(self):
        spec = radial_table([0, 1, 2], [1, 1.5, 2])
        with pytest.raises(ValueError):
            virial_V(spec, G)
        evaluate_V(spec, G)

    def test_load_csv(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("r,V\n0,1\n1,1.5\n2,1.8\n3,2\n")
        spec = load_radial_table(p)
        assert spec.kind == "radial_table" and spec.v_inf == 2.0
        p.write_text("r,V,dV\n0,1,0\n1,1.5,0.3\n2,2,0\n")
        assert load_radial_table(p, v_inf=2.0).derivatives == (0.0, 0.3, 0.0)
        p.write_text("radius,value\n0,1\n")
        with pytest.raises(ValueError):
            load_radial_table(p)


class TestHypotheses:
    def test_V1_constant(self):
        rep = check_V1(constant(1.0), G, 0.9)
        assert rep.passed and rep.extreme == pytest.approx(1.8)

    def test_V1_constant_sign(self):
        assert not check_V1(constant(-0.5), G, 0.9).passed

    def test_V1_paper_example(self):
        assert check_V1(paper_example(0.9), G, 0.9).passed

    def test_V1_fails_for_dip(self):
        r = np.linspace(0, 6, 25)
        spec = radial_table(r, 1 - 2 * np.exp(-r**2), v_inf=1.0)
        rep = check_V1(spec, G, 0.9)
        assert not rep.passed
        assert rep.witness is not None and np.linalg.norm(rep.witness) < 1.0

    def test_V2(self):
        rc = check_V2(constant(1.0), G)
        assert rc.passed and rc.strict_fraction == 0.0 and "constant" in rc.note
        rp = check_V2(paper_example(0.9), G)
        assert rp.passed and rp.strict_fraction > 0 and rp.note == ""

    def test_V2_fails_when_exceeding_limit(self):
        r = np.linspace(0, 6, 25)
        spec = radial_table(r, 1 + np.exp(-r**2), v_inf=1.0)
        rep = check_V2(spec, G)
        assert not rep.passed and rep.witness is not None
        assert rep.to_dict()["witness"] == list(rep.witness)


class TestAlpha0:
    def test_constant_one(self):
        a = estimate_alpha0(constant(1.0), GridSpec(16, 10.0), 0.9)
        assert 1.0 - 1e-9 <= a <= 1.0 + 1e-6

    def test_zero_potential(self):
        a = estimate_alpha0(constant(0.0), GridSpec(16, 10.0), 0.9)
        assert -1e-9 <= a < 1e-6

    def test_paper_example(self):
        spec = paper_example(0.9)
        g = GridSpec(32, 20.0)
        a = estimate_alpha0(spec, g, 0.9)
        assert a >= 1.0
        assert a >= evaluate_V(spec, g).values.min() - 1e-9

    def test_non_convergence(self):
        with pytest.raises(ConvergenceError) as exc:
            estimate_alpha0(paper_example(0.9), GridSpec(16, 20.0), 0.9, max_iters=1)
        assert exc.value.best is not None

    def test_rayleigh_quotient_of_constant(self):
        g = GridSpec(8, 4.0)
        assert rayleigh_quotient(Field(g, np.ones(g.shape)), constant(1.5), 0.9) == pytest.approx(1.5)
