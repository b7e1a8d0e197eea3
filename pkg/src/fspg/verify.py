"""Verifiers for the algebraic identities, level equalities and nonexistence certificates.

Everything here is either a pure function of numbers or a thin driver
around the solver. Nonexistence is never proved: a probe reports solver
collapse together with the sign of a certificate, and the report says the
outcome is *consistent with* nonexistence.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .fibering import NoProjectionError, nehari_project
from .fractional import seminorm_from_modes
from .functionals import (
    ProblemSpec,
    Quartet,
    RegimeError,
    constraint_g,
    critical_exponent,
    energy,
    evaluate,
    reduced_j,
)
from .gridfield import Field, GridMismatchError, fftn
from .potentials import evaluate_V, virial_V
from .solver import GroundStateResult, SolverConfig, minimize_on_manifold, mountain_pass_check

__all__ = [
    "SingularSystemError",
    "lagrange_matrix",
    "lagrange_det",
    "cramer_d",
    "lagrange_solve",
    "certificate_profile",
    "nonexistence_subcritical_certificate",
    "nonexistence_critical_identity",
    "critical_identity_defect",
    "young_inequality_check",
    "identity_report",
    "LevelReport",
    "level_report",
    "ProbeReport",
    "subcritical_probe",
    "critical_probe",
]

LEVEL_RTOL = 1e-4


class SingularSystemError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Lagrange multiplier algebra

def lagrange_matrix(mu: float, s: float, p: float) -> np.ndarray:
    """Coefficient matrix of the linear system for ``(a, b, c, d)``.

    Rows: the definition ``a + b + c - d = k``, membership ``G = 0``, the
    equation tested against ``u`` and the Pohozaev identity of the
    multiplier-modified equation. ``a, b, c, d`` are the halved or quartered
    integrals, so that ``I = a + b + c - d``.
    """
    D = 2 * s * (p + 1) - 3
    m6 = 1 + mu * (6 * s - 3)
    m4 = 1 + mu * (4 * s - 3)
    mD = 1 + mu * D
    return np.array([
        [1.0, 1.0, 1.0, -1.0],
        [6 * s - 3, 4 * s - 3, 6 * s - 3, -D],
        [2 * m6, 2 * m4, 4 * m6, -(p + 1) * mD],
        [(3 - 2 * s) * m6, 3 * m4, (3 + 2 * s) * m6, -3 * mD],
    ])


def lagrange_det(mu: float, s: float, p: float) -> tuple[float, float]:
    """Closed form and numerically evaluated determinant of :func:`lagrange_matrix`.

    The closed form is ``-16 mu s^3 (1 + mu(6s-3)) (p-1)(p-2)``.

    Examples
    --------
    >>> cf, num = lagrange_det(1.0, 0.9, 3.0)
    >>> round(cf, 4)
    -79.3152
    """
    closed = -16.0 * mu * s**3 * (1 + mu * (6 * s - 3)) * (p - 1) * (p - 2)
    return float(closed), float(np.linalg.det(lagrange_matrix(mu, s, p)))


def cramer_d(k: float, s: float, p: float) -> float:
    """Value of ``d`` for a regular multiplier: ``-3k(2s-1)(4s-3) / (4 s^2 (p-1)(p-2))``.

    It does not depend on ``mu``. For ``k > 0``, ``s`` in ``(3/4, 1)`` and
    ``p > 2`` it is negative, which is impossible for ``d > 0``.
    """
    if p == 1 or p == 2:
        raise SingularSystemError(f"system is singular for p={p}")
    return -3.0 * k * (2 * s - 1) * (4 * s - 3) / (4 * s * s * (p - 1) * (p - 2))


def lagrange_solve(k: float, mu: float, s: float, p: float) -> np.ndarray:
    """Dense solve of the system; returns ``(a, b, c, d)``."""
    A = lagrange_matrix(mu, s, p)
    det = np.linalg.det(A)
    if abs(det) <= 1e-14 * np.linalg.norm(A) ** 4:
        raise SingularSystemError(f"singular system at mu={mu}, s={s}, p={p}")
    return np.linalg.solve(A, np.array([k, 0.0, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# Certificates

def certificate_profile(t, p: float):
    """``t^2 + t^3 - t^(p+1)``, nonnegative on ``t >= 0`` when ``p <= 2``."""
    t = np.asarray(t, dtype=float)
    return t * t + t**3 - t ** (p + 1)


def _check_subcritical(ps: ProblemSpec):
    problems = []
    if not 1 < ps.p <= 2:
        problems.append(f"p={ps.p} not in (1, 2]")
    if ps.coupling < 0.25:
        problems.append(f"coupling={ps.coupling} below 1/4")
    if ps.lam > 1:
        problems.append(f"lambda={ps.lam} above 1")
    if not (ps.potential.is_constant and ps.potential.v_inf == 1.0):
        problems.append("potential is not V = 1")
    if problems:
        raise RegimeError("subcritical certificate needs " + "; ".join(problems))


def nonexistence_subcritical_certificate(u: Field, phi: Field | None, ps: ProblemSpec) -> float:
    """``C(u) = int (|u|^3 + u^2 - |u|^(p+1))``.

    For a solution the Nehari identity, the energy identity of ``phi`` and
    Young's inequality give ``0 >= C(u)``, while the integrand is pointwise
    nonnegative, so only ``u = 0`` is possible. ``phi`` is accepted so the
    pair can be checked for a matching grid; ``C`` itself depends on ``u``
    only.
    """
    _check_subcritical(ps)
    if phi is not None and phi.grid != u.grid:
        raise GridMismatchError("u and phi live on different grids")
    t = np.abs(u.values)
    return float(np.sum(certificate_profile(t, ps.p)) * u.grid.cell_volume)


def _certificate_scale(u: Field, p: float) -> float:
    t = np.abs(u.values)
    return float(np.sum(t * t + t**3 + t ** (p + 1)) * u.grid.cell_volume)


def _check_critical(ps: ProblemSpec):
    if not ps.is_critical:
        raise RegimeError(f"critical identity needs p = {critical_exponent(ps.s):.12g}, got {ps.p}")


def nonexistence_critical_identity(u: Field, ps: ProblemSpec) -> tuple[float, float]:
    """``term_V = int (2sV + x.grad V) u^2`` and ``term_phi = (6s-3)/(2(3-2s)) kappa int phi u^2``.

    For a solution at the critical exponent ``term_V/(3-2s) + term_phi = 0``;
    both terms are nonnegative under the potential hypotheses, so both must
    vanish.
    """
    _check_critical(ps)
    s = ps.s
    V = evaluate_V(ps.potential, u.grid, s).values
    W = virial_V(ps.potential, u.grid, s).values
    term_v = float(np.sum((2 * s * V + W) * u.values**2) * u.grid.cell_volume)
    c = evaluate(u, ps).quartet.c
    term_phi = (6 * s - 3) / (2 * (3 - 2 * s)) * ps.coupling * c
    return term_v, float(term_phi)


def critical_identity_defect(u: Field, ps: ProblemSpec) -> dict:
    """The identity ``term_V/(3-2s) + term_phi`` and the residuals it is built from.

    It equals ``(2P - (3-2s) N)/(3-2s)`` with ``P`` the Pohozaev functional
    and ``N = <I'(u), u>`` when ``p`` is critical, so for an approximate
    solution it is bounded by the residuals of those two identities.
    """
    from .functionals import nehari, pohozaev

    term_v, term_phi = nonexistence_critical_identity(u, ps)
    q = evaluate(u, ps).quartet
    s = ps.s
    return {"term_V": term_v, "term_phi": term_phi,
            "defect": term_v / (3 - 2 * s) + term_phi,
            "pohozaev": pohozaev(q, ps), "nehari": nehari(q, ps),
            "combination": (2 * pohozaev(q, ps) - (3 - 2 * s) * nehari(q, ps)) / (3 - 2 * s)}


def young_inequality_check(u: Field, ps: ProblemSpec) -> dict:
    """Check ``int |u|^3 <= ||(|u|)||_s^2 + ||phi_u||_s^2 / 4``.

    On the torus the gauge ``phi_hat(0) = 0`` means ``(-Delta)^s phi = u^2 - m``
    with ``m`` the mean of ``u^2``, so the left side carries the correction
    ``- m int |u|``. The inequality then holds exactly up to rounding. In
    free-space mode the correction is zero and the seminorm of ``phi`` is the
    periodic one, so the check is approximate.
    """
    g = u.grid
    s = ps.s
    absu = np.abs(u.values)
    dv = g.cell_volume
    phi = evaluate(u, ps).phi
    cubic = float(np.sum(absu**3) * dv)
    gauge = 0.0
    if ps.poisson_mode == "torus":
        gauge = float(np.mean(u.values**2)) * float(np.sum(absu) * dv)
    lhs = cubic - gauge
    rhs = seminorm_from_modes(fftn(absu), g, s) + 0.25 * seminorm_from_modes(fftn(phi), g, s)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "cubic": cubic, "gauge_correction": gauge,
            "passed": bool(lhs <= rhs + 1e-12 * scale)}


# ---------------------------------------------------------------------------
# Identities and level report

def identity_report(q: Quartet, ps: ProblemSpec, tol: float = 1e-12) -> dict:
    """The two linear identities linking ``I``, ``G`` and ``J`` on a quartet."""
    s, p, lam = ps.s, ps.p, ps.lam
    I = energy(q, ps)
    G = constraint_g(q, ps)
    lhs1 = (6 * s - 3) * I
    rhs1 = G + s * q.b + q.e / 2 + 2 * s * (p - 2) * lam * q.d_raw / (p + 1)
    scale = abs(q.a) + abs(q.b) + ps.coupling * abs(q.c) + lam * abs(q.d_raw) + abs(q.e)
    out = {"energy_identity": lhs1 - rhs1}
    if p > 2:
        out["reduced_identity"] = (I - reduced_j(q, ps)) - G / ps.D
    out = {k: float(v) for k, v in out.items()}
    out["scale"] = scale
    out["passed"] = all(abs(v) <= tol * max(scale, 1.0) for k, v in out.items() if k.endswith("identity"))
    return out


@dataclass
class LevelReport:
    rows: list = field(default_factory=list)
    rtol: float = LEVEL_RTOL

    @property
    def passed(self) -> bool:
        return all(not r["flagged"] for r in self.rows)

    def __len__(self):
        return len(self.rows)

    def to_dict(self) -> dict:
        return {"rtol": self.rtol, "passed": self.passed, "rows": list(self.rows)}


def level_report(results, ps: ProblemSpec, nehari_descent: bool = False,
                 rtol: float = LEVEL_RTOL) -> LevelReport:
    """Compare the level characterizations on converged results.

    For each converged result the row holds the manifold level, the maximum
    of ``I`` along its dilation fiber with the maximizing ``theta``, and for
    ``p > 3`` the level after ray projection onto the Nehari set. With
    ``nehari_descent`` a Nehari-constrained descent warm-started from the
    field is also run. A row is flagged if any level differs from the
    manifold level by more than ``rtol`` relative. Non-converged results are
    skipped.
    """
    rep = LevelReport(rtol=rtol)
    for res in results:
        if not res.converged or res.field.is_zero():
            continue
        pr = ps.with_(lam=res.lam)
        level = float(res.level)
        fmax, theta = mountain_pass_check(res, pr, full_output=True)
        row = {"manifold_level": level, "fiber_max": float(fmax), "theta_star": float(theta)}
        levels = [fmax]
        if pr.p > 3:
            try:
                t, v = nehari_project(res.field, pr)
                row["nehari_ray_level"] = energy(evaluate(v, pr).quartet, pr)
                row["nehari_ray_t"] = t
                levels.append(row["nehari_ray_level"])
            except NoProjectionError as exc:
                row["nehari_error"] = str(exc)
            if nehari_descent:
                cfg = SolverConfig(manifold="nehari", init="previous", init_field=res.field)
                nd = minimize_on_manifold(pr, cfg)
                row["nehari_descent_level"] = nd.level
                row["nehari_descent_status"] = nd.status
                levels.append(nd.level)
        rel = [abs(x - level) / max(abs(level), 1e-300) for x in levels]
        row["max_rel_diff"] = max(rel)
        row["flagged"] = bool(max(rel) > rtol)
        rep.rows.append(row)
    return rep


# ---------------------------------------------------------------------------
# Probes

@dataclass
class ProbeReport:
    regime: str
    seeds: list
    statuses: list
    mass_ratios: list
    certificate_min: list = field(default_factory=list)
    term_v_min: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    consistent: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _mass(u: Field) -> float:
    return float(np.sum(u.values**2) * u.grid.cell_volume)


def subcritical_probe(ps: ProblemSpec, seeds=(0, 1, 2), cfg: SolverConfig | None = None,
                      mass_tol: float = 1e-6) -> ProbeReport:
    """Unconstrained descent on ``I`` in the subcritical regime.

    Tracks the normalized certificate ``C(u)/scale`` along each trajectory.
    The outcome is consistent with nonexistence when every run collapses
    (final mass at most ``mass_tol`` times the initial mass) and the
    certificate never drops below ``-1e-12``.
    """
    _check_subcritical(ps)
    cfg = cfg or SolverConfig(manifold="none", max_iters=2000)
    cfg = replace(cfg, manifold="none")
    rep = ProbeReport("subcritical", [], [], [])
    for seed in seeds:
        worst = [math.inf]
        m0 = []

        def cb(k, u, q):
            if k == 0:
                m0.append(_mass(u))
            sc = _certificate_scale(u, ps.p)
            c = nonexistence_subcritical_certificate(u, None, ps)
            worst[0] = min(worst[0], c / sc if sc > 0 else 0.0)

        r = minimize_on_manifold(ps, replace(cfg, seed=int(seed)), callback=cb)
        rep.seeds.append(int(seed))
        rep.statuses.append(r.status)
        rep.mass_ratios.append(_mass(r.field) / m0[0])
        rep.certificate_min.append(worst[0])
        rep.iterations.append(int(r.iterations))
    rep.consistent = (all(m <= mass_tol for m in rep.mass_ratios)
                      and all(c >= -1e-12 for c in rep.certificate_min))
    rep.message = ("consistent with nonexistence in the subcritical regime" if rep.consistent
                   else "NOT consistent with nonexistence: a run kept mass or the certificate went negative")
    return rep


def critical_probe(ps: ProblemSpec, seeds=(0,), cfg: SolverConfig | None = None) -> ProbeReport:
    """Constrained descent at the critical exponent.

    Records the minimum of ``term_V / (2s int u^2)`` along each trajectory.
    Consistent with nonexistence when no run converges to a nonzero
    stationary state and ``term_V > 0`` for every nonzero iterate.
    """
    _check_critical(ps)
    cfg = cfg or SolverConfig(max_iters=5000)
    rep = ProbeReport("critical", [], [], [])
    for seed in seeds:
        worst = [math.inf]
        m0 = []

        def cb(k, u, q):
            m = _mass(u)
            if k == 0:
                m0.append(m)
            if m > 0:
                tv, _ = nonexistence_critical_identity(u, ps)
                worst[0] = min(worst[0], tv / m)

        r = minimize_on_manifold(ps, replace(cfg, seed=int(seed)), callback=cb)
        rep.seeds.append(int(seed))
        rep.statuses.append(r.status)
        rep.mass_ratios.append(_mass(r.field) / m0[0])
        rep.term_v_min.append(worst[0])
        rep.iterations.append(int(r.iterations))
    rep.consistent = (all(st != "converged" for st in rep.statuses)
                      and all(t > 0 for t in rep.term_v_min))
    rep.message = ("consistent with nonexistence at the critical exponent" if rep.consistent
                   else "NOT consistent with nonexistence: a run converged or term_V was not positive")
    return rep
