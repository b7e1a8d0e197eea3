import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from fspg.fibering import project
from fspg.functionals import ProblemSpec, RegimeError, constraint_g, energy, quartet, quartet_scale
from fspg.gridfield import Field, GridSpec
from fspg.potentials import constant
from fspg.solver import (SolverConfig, continuation, gaussian_init, minimize_on_manifold,
                         mountain_pass_check)

from conftest import smooth_random_field


def on_grid(ps, f):
    return ps.with_(grid=f.grid)


class TestGroundState:
    def test_converged(self, ground_state, base_problem):
        r = ground_state
        assert r.converged
        assert r.level > 0
        q = r.quartet
        ps = on_grid(base_problem, r.field)
        assert abs(constraint_g(q, ps)) <= 1e-8 * quartet_scale(q, ps)
        assert abs(r.residuals.mu_fit) <= 1e-4
        assert abs(r.residuals.pohozaev) <= 1e-3 * r.residuals.scale
        assert r.residuals.relative_grad <= 1e-5

    def test_level_is_energy(self, ground_state, base_problem):
        r = ground_state
        ps = on_grid(base_problem, r.field)
        assert r.level == pytest.approx(energy(quartet(r.field, ps), ps), rel=1e-12)

    def test_trace_monotone(self, ground_state):
        e = np.array([row[1] for row in ground_state.trace])
        assert np.all(np.diff(e) <= 1e-12 * abs(e[0]))
        assert ground_state.trace[0][0] == 0
        assert len(ground_state.trace) == ground_state.iterations + 1

    def test_warm_start(self, ground_state, base_problem):
        r = ground_state
        w = minimize_on_manifold(on_grid(base_problem, r.field),
                                 SolverConfig(init="previous", init_field=r.field))
        assert w.converged and w.iterations <= 1
        assert w.level == pytest.approx(r.level, rel=1e-10)

    def test_translation_invariance(self, ground_state, base_problem):
        r = ground_state
        ps = on_grid(base_problem, r.field)
        sh = Field(r.field.grid, np.roll(r.field.values, (5, -3, 2), axis=(0, 1, 2)))
        assert energy(quartet(sh, ps), ps) == pytest.approx(r.level, rel=1e-8)

    def test_minimality_against_perturbations(self, ground_state, base_problem, rng):
        r = ground_state
        ps = on_grid(base_problem, r.field)
        for _ in range(5):
            bump = smooth_random_field(r.field.grid, rng)
            w = r.field + bump * (0.05 * r.field.max_abs() / bump.max_abs())
            _, v = project(w, ps)
            assert energy(quartet(v, ps), ps) > r.level

    def test_mountain_pass(self, ground_state, base_problem):
        r = ground_state
        mp, star = mountain_pass_check(r, on_grid(base_problem, r.field), full_output=True)
        assert 1.0 <= mp / r.level <= 1.0 + 1e-6
        assert star == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("seed", [1, 2])
    def test_seed_independence(self, ground_state, base_problem, seed):
        r = minimize_on_manifold(base_problem, SolverConfig(seed=seed))
        assert r.converged
        assert r.level == pytest.approx(ground_state.level, rel=1e-6)

    @pytest.mark.parametrize("p", [2.5, 3.0])
    def test_positive_levels(self, p):
        ps = ProblemSpec(0.85, p, 1.0, constant(1.0), GridSpec(16, 20.0))
        r = minimize_on_manifold(ps, SolverConfig(max_iters=500))
        assert r.level > 0

    def test_nehari_manifold(self):
        ps = ProblemSpec(0.95, 3.5, 1.0, constant(1.0), GridSpec(16, 20.0))
        r = minimize_on_manifold(ps, SolverConfig(manifold="nehari", max_iters=500))
        q = r.quartet
        from fspg.functionals import nehari
        assert abs(nehari(q, ps.with_(grid=r.field.grid))) <= 1e-8 * quartet_scale(q, ps)


class TestPositivity:
    @pytest.mark.xfail(strict=True, reason="unclipped minimizer dips to -4.8e-4 of its maximum "
                                           "at 32^3; spectral ringing, not a sign change")
    def test_unclipped_nonnegative(self, ground_state):
        v = ground_state.field.values
        assert v.min() >= -1e-6 * v.max()

    @pytest.mark.xfail(strict=True, reason="clipping shifts the level by 1.5e-5 relative at 32^3")
    def test_clipped_level_matches(self, ground_state, base_problem):
        rc = minimize_on_manifold(base_problem, SolverConfig(clip_negative=True))
        assert rc.level == pytest.approx(ground_state.level, rel=1e-5)

    def test_clipped_is_nonnegative(self, base_problem):
        rc = minimize_on_manifold(base_problem, SolverConfig(clip_negative=True))
        assert rc.converged
        assert rc.field.values.min() >= 0


class TestContinuation:
    def test_levels_decrease(self, ground_state, base_problem):
        c = continuation(base_problem, SolverConfig(), [0.8, 0.9, 1.0])
        assert not c.errors
        assert np.all(np.diff(c.levels) <= 0)
        assert c.final.level == pytest.approx(ground_state.level, rel=1e-6)

    @pytest.mark.parametrize("grid", [[0.9, 0.8, 1.0], [0.8, 0.9], [0.0, 1.0], [0.5, 0.5, 1.0]])
    def test_bad_grid(self, base_problem, grid):
        with pytest.raises(ValueError):
            continuation(base_problem, SolverConfig(), grid)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(step_size=0), dict(tol_grad=-1), dict(max_iters=0),
                                    dict(backtrack_factor=1.0), dict(growth=0.5),
                                    dict(init="bogus"), dict(init="file"), dict(manifold="x")])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_regime(self):
        g = GridSpec(8, 10.0)
        with pytest.raises(RegimeError):
            minimize_on_manifold(ProblemSpec(0.7, 2.5, 1.0, constant(1.0), g))
        with pytest.raises(RegimeError):
            minimize_on_manifold(ProblemSpec(0.9, 2.0, 1.0, constant(1.0), g))
        with pytest.raises(RegimeError):
            minimize_on_manifold(ProblemSpec(0.9, 3.0, 1.0, constant(1.0), g),
                                 SolverConfig(manifold="nehari"))

    def test_gaussian_init_seeded(self):
        g = GridSpec(8, 10.0)
        a, b = gaussian_init(g, 3), gaussian_init(g, 3)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, gaussian_init(g, 4).values)

    def test_zero_init(self):
        g = GridSpec(8, 10.0)
        from fspg.fibering import NoProjectionError
        with pytest.raises(NoProjectionError):
            minimize_on_manifold(ProblemSpec(0.9, 3.0, 1.0, constant(1.0), g),
                                 SolverConfig(init="file", init_field=Field.zeros(g)))


class TestCollapse:
    def test_unconstrained_subcritical_collapses(self):
        ps = ProblemSpec(0.9, 1.5, 0.5, constant(1.0), GridSpec(16, 20.0), coupling=1.0)
        r = minimize_on_manifold(ps, SolverConfig(manifold="none", max_iters=2000))
        assert r.collapsed
        assert r.quartet.mass <= 1e-12


class TestOutput:
    def test_json_and_trace(self, ground_state, tmp_path):
        ground_state.write_json(tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["status"] == "converged"
        assert d["level"] == ground_state.level
        assert set(d["quartet"]) >= {"a", "b", "c", "d_raw"}
        ground_state.write_trace(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["iter", "energy", "grad_norm", "theta"]
        assert len(rows) == len(ground_state.trace) + 1
        assert float(rows[-1][1]) == ground_state.trace[-1][1]
