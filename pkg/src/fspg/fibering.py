"""Dilation fibering ``u_theta(x) = theta^(2s) u(theta x)`` and projection onto
the constraint set ``{G = 0}``.

Dilation is realized on metadata only: the sample array is multiplied by
``theta^(2s)`` and the box length becomes ``L/theta``. The quartet then obeys
the scaling laws

    a, c  -> theta^(6s-3)
    mass  -> theta^(4s-3)
    d_raw -> theta^(2s(p+1)-3)

so the fiber ``gamma(theta) = I(u_theta)`` is a closed-form function of the
quartet when ``V`` is constant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .functionals import ProblemSpec, Quartet, RegimeError, constraint_g, energy, evaluate
from .gridfield import Field, GridSpec
from .potentials import radial_profile

__all__ = [
    "NoProjectionError",
    "ProjectionRangeError",
    "FiberScan",
    "dilate",
    "dilated_quartet",
    "fiber_energy",
    "fiber_derivative",
    "h_function",
    "project_to_M",
    "project_to_M_generalV",
    "project",
    "scan_fiber",
    "nehari_project",
    "THETA_RANGE",
]

THETA_RANGE = (1e-6, 1e6)


class NoProjectionError(ValueError):
    """The fiber has no interior maximum (zero field or vanishing nonlinearity)."""


class ProjectionRangeError(RuntimeError):
    """No sign change of the fiber derivative inside the admissible range."""


def dilate(u: Field, theta: float, s: float) -> Field:
    if not theta > 0:
        raise ValueError(f"dilation parameter must be positive, got {theta}")
    if theta == 1.0:
        return u
    return Field(GridSpec(u.grid.n, u.grid.L / theta), u.values * theta ** (2 * s))


def dilated_quartet(q: Quartet, theta: float, ps: ProblemSpec) -> Quartet:
    """Quartet of ``u_theta`` from that of ``u`` (constant ``V`` only)."""
    _require_constant(ps)
    s = ps.s
    k = theta ** (6 * s - 3)
    m = theta ** (4 * s - 3)
    return Quartet(k * q.a, m * q.b, k * q.c, theta**ps.D * q.d_raw, 0.0, m * q.mass)


def _require_constant(ps: ProblemSpec):
    if not ps.potential.is_constant:
        raise RegimeError("closed-form fiber needs a constant potential; use the general-V path")


def fiber_energy(q: Quartet, theta, ps: ProblemSpec):
    """``gamma(theta) = I(u_theta)`` for constant ``V``; vectorized in ``theta``."""
    _require_constant(ps)
    s, p = ps.s, ps.p
    th = np.asarray(theta, dtype=float)
    out = (th ** (6 * s - 3) * (q.a / 2 + ps.coupling * q.c / 4) + th ** (4 * s - 3) * q.b / 2
           - ps.lam * th**ps.D * q.d_raw / (p + 1))
    return float(out) if out.ndim == 0 else out


def fiber_derivative(q: Quartet, theta, ps: ProblemSpec):
    """``gamma'(theta)``; at ``theta = 1`` this is ``G(u)``."""
    _require_constant(ps)
    s, p = ps.s, ps.p
    th = np.asarray(theta, dtype=float)
    out = ((6 * s - 3) * th ** (6 * s - 4) * (q.a / 2 + ps.coupling * q.c / 4)
           + (4 * s - 3) * th ** (4 * s - 4) * q.b / 2
           - ps.lam * ps.D * th ** (ps.D - 1) * q.d_raw / (p + 1))
    return float(out) if out.ndim == 0 else out


def h_function(q: Quartet, theta, ps: ProblemSpec):
    """``h(theta) = lam D theta^(2s(p-2)) d_raw/(p+1) - (4s-3) theta^(-2s) b/2``.

    ``gamma'(theta) = theta^(6s-4) (K - h(theta))`` with
    ``K = (6s-3)(a/2 + kappa c/4)``; ``h`` is increasing when ``p > 2``.
    """
    s, p = ps.s, ps.p
    th = np.asarray(theta, dtype=float)
    out = (ps.lam * ps.D * th ** (2 * s * (p - 2)) * q.d_raw / (p + 1)
           - (4 * s - 3) * th ** (-2 * s) * q.b / 2)
    return float(out) if out.ndim == 0 else out


def _root_log_theta(F, dF, method: str) -> float:
    """Root in ``t = log theta`` of a decreasing function ``F``.

    ``dF`` is the derivative with respect to ``t``.
    """
    lo_t, hi_t = math.log(THETA_RANGE[0]), math.log(THETA_RANGE[1])
    step = math.log(2.0)

    if method == "newton":
        t = 0.0
        for _ in range(200):
            f, df = F(t), dF(t)
            if df == 0:
                break
            dt = -f / df
            dt = max(-1.0, min(1.0, dt))
            t += dt
            if abs(dt) < 1e-15:
                break
        if not lo_t <= t <= hi_t:
            raise ProjectionRangeError("Newton iteration left the admissible theta range")
        return t

    # Exponential bracketing from theta = 1.
    f0 = F(0.0)
    if f0 == 0:
        return 0.0
    d = step if f0 > 0 else -step
    a, b = 0.0, d
    while F(b) * f0 > 0:
        a, b = b, b + d
        if not lo_t <= b <= hi_t:
            raise ProjectionRangeError("no sign change of the fiber derivative in [1e-6, 1e6]")
    lo, hi = min(a, b), max(a, b)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if F(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(mid)):
            break
    t = 0.5 * (lo + hi)
    if method == "bisection":
        return t
    for _ in range(5):
        df = dF(t)
        if df == 0:
            break
        nt = t - F(t) / df
        if not lo - 1e-12 <= nt <= hi + 1e-12:
            break
        if nt == t:
            break
        t = nt
    return t


def project_to_M(u: Field, ps: ProblemSpec, method: str = "hybrid", q: Quartet | None = None):
    """Unique dilation of ``u`` onto ``{G = 0}`` for constant ``V``.

    Parameters
    ----------
    method : {"hybrid", "bisection", "newton"}
        ``hybrid`` brackets by factors of 2 from ``theta = 1``, bisects 80
        times in ``log theta`` and polishes with at most 5 Newton steps.

    Returns
    -------
    theta0 : float
    projected : Field
        ``dilate(u, theta0)``, the maximizer of ``gamma`` over ``theta > 0``.
    """
    _require_constant(ps)
    if ps.p <= 2:
        raise RegimeError("fiber projection needs p > 2")
    if q is None:
        q = evaluate(u, ps).quartet
    if u.is_zero() or q.d_raw <= 0:
        raise NoProjectionError("cannot project the zero field (or a field with d_raw = 0)")
    theta = _theta_constant(q, ps, method)
    return theta, dilate(u, theta, ps.s)


def _theta_constant(q: Quartet, ps: ProblemSpec, method: str = "hybrid") -> float:
    s, p = ps.s, ps.p
    K = (6 * s - 3) * (q.a / 2 + ps.coupling * q.c / 4)
    A = ps.lam * ps.D * q.d_raw / (p + 1)
    B = (4 * s - 3) * q.b / 2
    al, be = 2 * s * (p - 2), 2 * s

    def F(t):
        return K - A * math.exp(al * t) + B * math.exp(-be * t)

    def dF(t):
        return -A * al * math.exp(al * t) - B * be * math.exp(-be * t)

    return math.exp(_root_log_theta(F, dF, method))


class _GeneralFiber:
    """Exact fiber of a field for a radial potential, evaluated by quadrature.

    ``b(theta) = theta^(4s-3) sum V(r_i/theta) w_i`` with ``w_i = h^3 u_i^2``,
    and similarly for the virial.
    """

    def __init__(self, u: Field, ps: ProblemSpec, q: Quartet):
        self.ps = ps
        self.q = q
        w = (u.values**2 * u.grid.cell_volume).ravel()
        r = u.grid.radius().ravel()
        keep = w > 0
        self.r, self.w = r[keep], w[keep]
        self.V, self.rdV = radial_profile(ps.potential, ps.s)

    def parts(self, theta):
        s = self.ps.s
        rr = self.r / theta
        f = theta ** (4 * s - 3)
        return f * float(np.dot(self.V(rr), self.w)), f * float(np.dot(self.rdV(rr), self.w))

    def gamma(self, theta):
        ps, q, s = self.ps, self.q, self.ps.s
        b, _ = self.parts(theta)
        return (theta ** (6 * s - 3) * (q.a / 2 + ps.coupling * q.c / 4) + b / 2
                - ps.lam * theta**ps.D * q.d_raw / (ps.p + 1))

    def g(self, theta):
        """``G_V(u_theta) = theta gamma_V'(theta)``."""
        ps, q, s = self.ps, self.q, self.ps.s
        b, e = self.parts(theta)
        return ((6 * s - 3) * theta ** (6 * s - 3) * (q.a / 2 + ps.coupling * q.c / 4)
                + (4 * s - 3) * b / 2 - e / 2 - ps.lam * ps.D * theta**ps.D * q.d_raw / (ps.p + 1))


def _general_roots(fib: _GeneralFiber, count: int = 41, lo: float = 1e-3, hi: float = 1e3):
    ts = np.geomspace(lo, hi, count)
    gs = np.array([fib.g(t) for t in ts])
    roots = []
    for i in range(count - 1):
        if gs[i] > 0 and gs[i + 1] <= 0:
            if gs[i + 1] == 0:
                roots.append(float(ts[i + 1]))
                continue
            lt = brentq(lambda x: fib.g(math.exp(x)), math.log(ts[i]), math.log(ts[i + 1]),
                        xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            roots.append(math.exp(lt))
    return roots


def project_to_M_generalV(u: Field, ps: ProblemSpec, q: Quartet | None = None, count: int = 41):
    """Dilation of ``u`` onto ``{G_V = 0}`` for a radial potential.

    The generalized fiber may have several local maxima; all are located by
    a log-spaced scan plus Brent refinement and the one with the largest
    ``gamma_V`` is returned.

    Raises
    ------
    ProjectionRangeError
        If ``G_V(u_theta)`` never changes sign from positive to negative on
        ``[1e-3, 1e3]``.
    """
    if ps.p <= 2:
        raise RegimeError("fiber projection needs p > 2")
    if q is None:
        q = evaluate(u, ps).quartet
    if u.is_zero() or q.d_raw <= 0:
        raise NoProjectionError("cannot project the zero field (or a field with d_raw = 0)")
    fib = _GeneralFiber(u, ps, q)
    roots = _general_roots(fib, count)
    if not roots:
        raise ProjectionRangeError("generalized fiber derivative has no sign change on [1e-3, 1e3]")
    theta = max(roots, key=fib.gamma)
    return theta, dilate(u, theta, ps.s)


def project(u: Field, ps: ProblemSpec, q: Quartet | None = None):
    """Dispatch to the constant-V or general-V projection."""
    if ps.potential.is_constant:
        return project_to_M(u, ps, q=q)
    return project_to_M_generalV(u, ps, q=q)


@dataclass(frozen=True)
class FiberScan:
    thetas: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    theta_star: float | None
    unique_root: bool
    sign_changes: int = 0

    def argmax_theta(self) -> float:
        return float(self.thetas[int(np.argmax(self.values))])

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["theta", "gamma", "gamma_prime"])
            for row in zip(self.thetas, self.values, self.derivative):
                wr.writerow([repr(float(x)) for x in row])


def scan_fiber(u: Field, ps: ProblemSpec, theta_min: float = 1e-3, theta_max: float = 1e3,
               count: int = 201, q: Quartet | None = None) -> FiberScan:
    """Sample ``gamma`` and ``gamma'`` on a log-spaced grid of dilations."""
    if not 0 < theta_min < theta_max:
        raise ValueError("need 0 < theta_min < theta_max")
    if q is None:
        q = evaluate(u, ps).quartet
    th = np.geomspace(theta_min, theta_max, count)
    if ps.potential.is_constant:
        vals = np.asarray(fiber_energy(q, th, ps))
        der = np.asarray(fiber_derivative(q, th, ps))
    else:
        fib = _GeneralFiber(u, ps, q)
        vals = np.array([fib.gamma(t) for t in th])
        der = np.array([fib.g(t) / t for t in th])
    sg = np.sign(der)
    sg = sg[sg != 0]
    changes = int(np.count_nonzero(np.diff(sg)))
    star = None
    idx = np.nonzero((der[:-1] > 0) & (der[1:] <= 0))[0]
    if idx.size:
        i = int(idx[0])
        # Linear interpolation of the derivative in log theta.
        l0, l1 = math.log(th[i]), math.log(th[i + 1])
        f0, f1 = der[i], der[i + 1]
        star = math.exp(l0 + (l1 - l0) * f0 / (f0 - f1))
    return FiberScan(th, vals, der, star, changes == 1, changes)


def nehari_project(u: Field, ps: ProblemSpec, q: Quartet | None = None):
    """Ray projection ``t u`` onto the Nehari set, for ``p > 3``.

    Solves ``(a + b) + t^2 kappa c = lam t^(p-1) d_raw``, which has a unique
    positive root when ``p > 3``.
    """
    if ps.p <= 3:
        raise RegimeError("Nehari ray projection is only offered for p > 3")
    if q is None:
        q = evaluate(u, ps).quartet
    if u.is_zero() or q.d_raw <= 0:
        raise NoProjectionError("cannot project the zero field")
    A, C, Dd, p = q.a + q.b, ps.coupling * q.c, ps.lam * q.d_raw, ps.p

    def F(x):
        t = math.exp(x)
        return Dd * t ** (p - 3) - C - A / (t * t)

    lo, hi = -1.0, 1.0
    while F(lo) > 0:
        lo *= 2
    while F(hi) < 0:
        hi *= 2
    lt = brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
    t = math.exp(lt)
    return t, Field(u.grid, t * u.values)


def g_of(u: Field, ps: ProblemSpec) -> float:
    return constraint_g(evaluate(u, ps).quartet, ps)


def energy_of(u: Field, ps: ProblemSpec) -> float:
    return energy(evaluate(u, ps).quartet, ps)
