"""Ground states by descent on the constraint set ``{G = 0}``.

Each iteration takes a Sobolev-preconditioned gradient step on ``I`` and
projects back by dilation:

    u <- project(u - eta * P grad I(u)),   P = (1 + |xi|^(2s))^(-1)

A step is accepted when the reduced functional ``J`` (equal to ``I`` on the
constraint set) does not increase; otherwise ``eta`` is halved.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .fibering import (NoProjectionError, ProjectionRangeError, nehari_project, project,
                       scan_fiber)
from .functionals import (Evaluation, ProblemSpec, Quartet, RegimeError, ResidualReport,
                          critical_exponent, dual_norm, energy, evaluate, nehari, quartet_scale,
                          reduced_j, residual_report)
from .gridfield import Field, GridSpec, boundary_mass_fraction, ifftn_real, resample

__all__ = [
    "SolverConfig",
    "GroundStateResult",
    "ContinuationResult",
    "CollapseError",
    "minimize_on_manifold",
    "mountain_pass_check",
    "continuation",
    "gaussian_init",
    "resample",
    "MANIFOLDS",
]

MANIFOLDS = ("pohozaev_nehari", "nehari", "none")
DEFAULT_LAMBDAS = tuple(np.geomspace(0.7, 1.0, 8))


class CollapseError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Descent parameters.

    ``tol_grad`` is relative: the dual norm of ``grad I`` divided by
    ``||u||_{H^s}``. ``tol_energy`` bounds the relative change of ``J`` over
    ``energy_window`` iterations.

    Steps are limited by a trust region: the update may not exceed
    ``max_update`` times ``||u||`` and the projection may not dilate by more
    than ``max_dilation``. Without it, early long steps can shrink the box
    until the field is flat, where ``J`` tends to zero along constants (the
    periodic Poisson term vanishes on constants).

    ``fixed_box`` interpolates every projected iterate back onto the initial
    box, so the box length stays put; this is meant for refinement studies.
    By default the box follows the dilations.
    """

    step_size: float = 1.0
    tol_grad: float = 1e-5
    tol_energy: float = 1e-12
    max_iters: int = 2000
    seed: int = 0
    init: str = "gaussian"
    init_field: Field | None = None
    backtrack_factor: float = 0.5
    max_halvings: int = 40
    growth: float = 1.25
    max_step: float = 20.0
    max_dilation: float = 1.25
    max_update: float = 0.25
    max_boundary_fraction: float | None = None
    manifold: str = "pohozaev_nehari"
    clip_negative: bool = False
    collapse_tol: float = 1e-10
    energy_window: int = 10
    fixed_box: bool = False

    def __post_init__(self):
        if not (self.step_size > 0 and self.tol_grad > 0 and self.tol_energy > 0):
            raise ValueError("step size and tolerances must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")
        if self.init not in ("gaussian", "file", "previous"):
            raise ValueError("init must be gaussian, file or previous")
        if self.init in ("file", "previous") and self.init_field is None:
            raise ValueError(f"init={self.init!r} needs init_field")
        if self.manifold not in MANIFOLDS:
            raise ValueError(f"manifold must be one of {MANIFOLDS}")


@dataclass
class GroundStateResult:
    field: Field
    level: float
    quartet: Quartet
    residuals: ResidualReport
    iterations: int
    trace: list
    lam: float
    status: str = "converged"
    message: str = ""
    initial_norm: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def collapsed(self) -> bool:
        return self.status == "collapsed"

    def to_json_dict(self, field_path: str = "field.fspg") -> dict:
        return {
            "level": self.level,
            "lambda": self.lam,
            "quartet": self.quartet.to_dict(),
            "residuals": self.residuals.to_dict(),
            "iterations": int(self.iterations),
            "field_path": str(field_path),
            "status": self.status,
            "message": self.message,
            "grid": {"n": self.field.grid.n, "L": self.field.grid.L},
        }

    def write_json(self, path, field_path: str = "field.fspg") -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(field_path), indent=2, sort_keys=True))

    def write_trace(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "energy", "grad_norm", "theta"])
            for row in self.trace:
                wr.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


@dataclass
class ContinuationResult:
    lambdas: list
    levels: list
    results: list
    errors: dict = field(default_factory=dict)

    @property
    def final(self) -> GroundStateResult | None:
        return self.results[-1] if self.results else None


def gaussian_init(grid: GridSpec, seed: int = 0) -> Field:
    """Centered Gaussian with seeded random amplitude and width."""
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.5, 2.0)
    width = rng.uniform(0.05, 0.1) * grid.L
    r = grid.radius()
    return Field(grid, amp * np.exp(-0.5 * (r / width) ** 2))


def _check_regime(ps: ProblemSpec, cfg: SolverConfig):
    if cfg.manifold == "none":
        return
    if not 0.75 < ps.s < 1.0 and ps.s != 1.0:
        raise RegimeError(f"ground-state solver needs s in (3/4, 1), got {ps.s}")
    if cfg.manifold == "pohozaev_nehari" and not ps.p > 2:
        raise RegimeError("constraint-set descent needs p > 2")
    if cfg.manifold == "nehari" and not ps.p > 3:
        raise RegimeError("Nehari descent needs p > 3")


class _Problem:
    """Manifold-specific projection and merit function."""

    def __init__(self, ps: ProblemSpec, manifold: str, fixed_box: bool = False):
        self.ps = ps
        self.manifold = manifold
        self.fixed_box = fixed_box

    def project(self, u: Field, q: Quartet):
        if self.manifold == "pohozaev_nehari":
            if not self.fixed_box:
                return project(u, self.ps, q=q)
            # Dilate, interpolate back onto the reference box, repeat until the
            # residual dilation is negligible.
            total = 1.0
            for _ in range(8):
                th, v = project(u, self.ps, q=q)
                total *= th
                if abs(th - 1.0) < 1e-13:
                    break
                u = resample(v, self.ps.grid)
                q = evaluate(u, self.ps).quartet
            return total, v
        if self.manifold == "nehari":
            return nehari_project(u, self.ps, q=q)
        return 1.0, u

    def merit(self, q: Quartet) -> float:
        ps = self.ps
        if self.manifold == "pohozaev_nehari":
            return reduced_j(q, ps)
        if self.manifold == "nehari":
            return energy(q, ps) - nehari(q, ps) / (ps.p + 1)
        return energy(q, ps)


def _l2(u: Field) -> float:
    return float(np.sqrt(np.sum(u.values**2) * u.grid.cell_volume))


def minimize_on_manifold(ps: ProblemSpec, cfg: SolverConfig = SolverConfig(),
                         callback: Callable | None = None) -> GroundStateResult:
    """Minimize ``I`` over the constraint set (or run a plain descent).

    Parameters
    ----------
    ps : ProblemSpec
    cfg : SolverConfig
        ``cfg.manifold`` selects ``pohozaev_nehari`` (default), ``nehari``
        (ray projection, ``p > 3``) or ``none`` (unconstrained descent on
        ``I``, used by nonexistence probes).
    callback : callable, optional
        Called as ``callback(k, field, quartet)`` for the initial point and
        every accepted iterate.

    Returns
    -------
    GroundStateResult
        ``status`` is ``converged``, ``collapsed``, ``max_iters`` or
        ``projection_failed``; in the last two cases the best iterate is
        returned.
    """
    _check_regime(ps, cfg)
    prob = _Problem(ps, cfg.manifold, cfg.fixed_box)
    s = ps.s

    if cfg.init == "gaussian":
        u = gaussian_init(ps.grid, cfg.seed)
    else:
        u = cfg.init_field
    if cfg.clip_negative:
        u = Field(u.grid, np.maximum(u.values, 0.0))
    u0_norm = _l2(u)
    if u0_norm == 0:
        raise NoProjectionError("initial field is zero")

    q0 = evaluate(u, ps).quartet
    theta, u = prob.project(u, q0)
    ev = evaluate(u, ps, need_gradient=True)
    merit = prob.merit(ev.quartet)
    trace = []
    eta = cfg.step_size
    status, message = "max_iters", ""
    history = [merit]

    def rel_grad(e: Evaluation, f: Field):
        q = e.quartet
        hs = math.sqrt(max(q.a + q.mass, 0.0))
        return dual_norm(e.grad_hat, f.grid, s) / hs if hs > 0 else 0.0

    g = rel_grad(ev, u)
    trace.append((0, energy(ev.quartet, ps), g, theta))
    if callback is not None:
        callback(0, u, ev.quartet)

    k = 0
    if g <= cfg.tol_grad:
        status = "converged"
    while status == "max_iters" and k < cfg.max_iters:
        k += 1
        mult = u.grid.xi_power(s)
        direction = ifftn_real(ev.grad_hat / (1.0 + mult))
        accepted = False
        for _ in range(cfg.max_halvings):
            if cfg.manifold != "none":
                # Trust region: bounded relative update.
                dn = float(np.linalg.norm(direction))
                un = float(np.linalg.norm(u.values))
                if eta * dn > cfg.max_update * un:
                    eta = cfg.max_update * un / dn
            trial = u.values - eta * direction
            if cfg.clip_negative:
                trial = np.maximum(trial, 0.0)
            w = Field(u.grid, trial)
            try:
                qw = evaluate(w, ps).quartet
                th, cand = prob.project(w, qw)
            except (NoProjectionError, ProjectionRangeError):
                if cfg.manifold == "none":
                    raise
                eta *= cfg.backtrack_factor
                continue
            if cfg.manifold != "none" and not 1 / cfg.max_dilation <= th <= cfg.max_dilation:
                eta *= cfg.backtrack_factor
                continue
            if (cfg.max_boundary_fraction is not None
                    and boundary_mass_fraction(cand) > cfg.max_boundary_fraction):
                eta *= cfg.backtrack_factor
                continue
            ev_c = evaluate(cand, ps, need_gradient=True)
            m_c = prob.merit(ev_c.quartet)
            if m_c <= merit + 1e-14 * quartet_scale(ev.quartet, ps):
                accepted = True
                break
            eta *= cfg.backtrack_factor
        if not accepted:
            status, message = "max_iters", "line search failed to decrease the merit function"
            break

        u, ev, merit, theta = cand, ev_c, m_c, th
        eta = min(eta * cfg.growth, cfg.max_step)
        g = rel_grad(ev, u)
        trace.append((k, energy(ev.quartet, ps), g, theta))
        if callback is not None:
            callback(k, u, ev.quartet)

        if _l2(u) < cfg.collapse_tol * u0_norm:
            status = "collapsed"
            break
        if g <= cfg.tol_grad:
            status = "converged"
            break
        history.append(merit)
        if len(history) > cfg.energy_window:
            old = history[-1 - cfg.energy_window]
            if abs(old - merit) <= cfg.tol_energy * max(abs(merit), 1e-300):
                status, message = "converged", "energy stagnation"
                break

    if status == "max_iters" and not message:
        message = f"not converged after {cfg.max_iters} iterations"
    res = residual_report(u, ps)
    return GroundStateResult(u, energy(ev.quartet, ps), ev.quartet, res, k, trace, ps.lam,
                             status, message, u0_norm)


def mountain_pass_check(result: GroundStateResult, ps: ProblemSpec, full_output: bool = False):
    """Maximum of ``I`` over the dilation fiber of a converged state.

    A coarse log scan on ``[1e-3, 1e3]`` is refined on a narrow window around
    the best sample. Returns the maximum (and ``theta*`` if ``full_output``).
    """
    u = result.field
    if u.is_zero():
        raise NoProjectionError("zero field has no fiber maximum")
    q = evaluate(u, ps).quartet if ps.potential.is_constant else None
    coarse = scan_fiber(u, ps, 1e-3, 1e3, 241, q=q)
    t0 = coarse.argmax_theta()
    fine = scan_fiber(u, ps, t0 / 1.2, t0 * 1.2, 4001, q=q)
    i = int(np.argmax(fine.values))
    star = fine.theta_star if fine.theta_star is not None else float(fine.thetas[i])
    best = float(fine.values[i])
    if full_output:
        return best, star
    return best


def continuation(ps: ProblemSpec, cfg: SolverConfig = SolverConfig(),
                 lambda_grid=None) -> ContinuationResult:
    """Solve along an increasing lambda grid ending at 1, warm-starting each solve."""
    lams = list(DEFAULT_LAMBDAS if lambda_grid is None else lambda_grid)
    lams = [float(x) for x in lams]
    if any(b <= a for a, b in zip(lams, lams[1:])) or abs(lams[-1] - 1.0) > 1e-15:
        raise ValueError("lambda grid must be strictly increasing and end at 1")
    if lams[0] <= 0:
        raise ValueError("lambda grid must lie in (0, 1]")
    lams[-1] = 1.0
    out = ContinuationResult([], [], [])
    prev = None
    for lam in lams:
        c = cfg if prev is None else replace(cfg, init="previous", init_field=prev.field)
        try:
            r = minimize_on_manifold(ps.with_(lam=lam), c)
        except (NoProjectionError, ProjectionRangeError, RegimeError) as exc:
            out.errors[lam] = str(exc)
            continue
        out.lambdas.append(lam)
        out.levels.append(r.level)
        out.results.append(r)
        if r.status in ("converged", "max_iters"):
            prev = r
        else:
            out.errors[lam] = r.status
    return out
