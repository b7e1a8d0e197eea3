"""Scalar integrals of a field and the functionals built from them.

Every functional of the variational problem is a linear combination of the
five integrals ``a, b, c, d_raw, e`` (plus the plain mass, kept for the
dilation laws). They are computed once per field by :func:`quartet` and all
later algebra works on that cached value.

With ``kappa`` the coupling in front of ``phi_u`` and ``lam`` the weight of
the nonlinearity,

    I = a/2 + b/2 + kappa c/4 - lam d_raw/(p+1)

where ``(-Delta)^s phi_u = u^2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .fractional import POISSON_MODES, poisson_array, seminorm_from_modes
from .gridfield import Field, GridSpec, abs_power_signed, boundary_mass_fraction, fftn, ifftn_real, shift as _shift
from .potentials import PotentialSpec, evaluate_V, virial_V

__all__ = [
    "ProblemSpec",
    "Quartet",
    "ResidualReport",
    "Evaluation",
    "RegimeError",
    "critical_exponent",
    "quartet",
    "evaluate",
    "energy",
    "nehari",
    "gradient",
    "constraint_g",
    "constraint_gradient",
    "pohozaev",
    "reduced_j",
    "coulomb_functional",
    "coulomb_splitting_error",
    "dual_norm",
    "residual_report",
]


class RegimeError(ValueError):
    """Parameters outside the range where a formula or theorem applies."""


def critical_exponent(s: float) -> float:
    """``2*_s - 1 = (3 + 2s)/(3 - 2s)``."""
    return (3.0 + 2.0 * s) / (3.0 - 2.0 * s)


@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the fractional Schrodinger-Poisson problem.

    Attributes
    ----------
    s : float
        Fractional order in ``(1/2, 1]``. Ground-state paths require
        ``(3/4, 1)``; that is checked by the solver.
    p : float
        Exponent of the nonlinearity, ``1 < p <= (3+2s)/(3-2s)``.
    lam : float
        Weight of the nonlinearity, in ``(0, 1]``.
    potential : PotentialSpec
    grid : GridSpec
        Initial grid (dilations change the box of individual fields).
    poisson_mode : {"torus", "free_space"}
    coupling : float
        Weight of the Poisson term ``phi_u u`` (1 for the standard system).
    """

    s: float
    p: float
    lam: float
    potential: PotentialSpec
    grid: GridSpec
    poisson_mode: str = "torus"
    coupling: float = 1.0

    def __post_init__(self):
        s, p, lam = float(self.s), float(self.p), float(self.lam)
        if not 0.5 < s <= 1.0:
            raise RegimeError(f"s={s} outside (1/2, 1]")
        if not 1.0 < p <= critical_exponent(s) * (1 + 1e-12):
            raise RegimeError(f"p={p} outside (1, {critical_exponent(s):.6g}]")
        if not 0.0 < lam <= 1.0:
            raise RegimeError(f"lambda={lam} outside (0, 1]")
        if self.poisson_mode not in POISSON_MODES:
            raise ValueError(f"poisson_mode must be one of {POISSON_MODES}")
        if not self.coupling >= 0:
            raise RegimeError("coupling must be nonnegative")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "coupling", float(self.coupling))

    @property
    def D(self) -> float:
        """``2s(p+1) - 3``, the dilation exponent of ``d_raw``."""
        return 2.0 * self.s * (self.p + 1.0) - 3.0

    @property
    def is_critical(self) -> bool:
        return abs(self.p - critical_exponent(self.s)) <= 1e-12 * critical_exponent(self.s)

    def with_(self, **changes) -> "ProblemSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ProblemSpec(**d)


@dataclass(frozen=True)
class Quartet:
    """``a = ||u||_s^2``, ``b = int V u^2``, ``c = int phi_u u^2``,
    ``d_raw = int |u|^(p+1)``, ``e = int (x . grad V) u^2``, ``mass = int u^2``."""

    a: float
    b: float
    c: float
    d_raw: float
    e: float = 0.0
    mass: float = 0.0

    def scaled(self, tau: float, p: float) -> "Quartet":
        t2 = tau * tau
        return Quartet(t2 * self.a, t2 * self.b, t2 * t2 * self.c, abs(tau) ** (p + 1) * self.d_raw,
                       t2 * self.e, t2 * self.mass)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ResidualReport:
    nehari: float
    constraint_g: float
    pohozaev: float
    grad_norm: float
    mu_fit: float
    boundary_mass_fraction: float
    scale: float = 0.0
    hs_norm: float = 0.0

    @property
    def relative_grad(self) -> float:
        return self.grad_norm / self.hs_norm if self.hs_norm > 0 else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relative_grad"] = self.relative_grad
        return d


@dataclass
class Evaluation:
    """Quartet and, on request, the gradient of ``I`` for one field."""

    quartet: Quartet
    phi: np.ndarray | None = None
    grad: np.ndarray | None = None
    grad_hat: np.ndarray | None = None
    parts: dict = field(default_factory=dict)


@lru_cache(maxsize=8)
def _potential_arrays(spec: PotentialSpec, grid: GridSpec, s: float):
    V = evaluate_V(spec, grid, s).values
    W = virial_V(spec, grid, s).values
    return V, W


def evaluate(u: Field, ps: ProblemSpec, need_gradient: bool = False, need_parts: bool = False) -> Evaluation:
    """Compute the quartet (one Poisson solve) and optionally ``grad I``.

    The transforms of ``u`` and ``u^2`` are shared between the integrals and
    the gradient.
    """
    grid = u.grid
    s, p, w = ps.s, ps.p, grid.cell_volume
    vals = u.values
    uh = fftn(vals)
    a = seminorm_from_modes(uh, grid, s)
    u2 = vals * vals
    mass = float(np.sum(u2)) * w

    if ps.potential.is_constant:
        V = ps.potential.v_inf
        b = V * mass
        e = 0.0
    else:
        V, W = _potential_arrays(ps.potential, grid, s)
        b = float(np.sum(V * u2)) * w
        e = float(np.sum(W * u2)) * w

    if ps.poisson_mode == "torus":
        phi = poisson_array(u2, grid, s, "torus", src_hat=fftn(u2))
    else:
        phi = poisson_array(u2, grid, s, "free_space")
    c = float(np.sum(phi * u2)) * w
    nl = abs_power_signed(vals, p)
    d_raw = float(np.sum(nl * vals)) * w
    q = Quartet(a, b, c, d_raw, e, mass)

    ev = Evaluation(q, phi=phi)
    if need_gradient or need_parts:
        mult = grid.xi_power(s)
        local = V * vals + ps.coupling * phi * vals - ps.lam * nl
        ev.grad_hat = mult * uh + fftn(local)
        ev.grad = ifftn_real(ev.grad_hat)
    if need_parts:
        ev.parts = {"lap": ifftn_real(mult * uh), "Vu": V * vals,
                    "phiu": phi * vals, "nl": nl,
                    "xVu": (0.0 * vals) if ps.potential.is_constant else W * vals}
    return ev


def quartet(u: Field, ps: ProblemSpec) -> Quartet:
    return evaluate(u, ps).quartet


def energy(q: Quartet, ps: ProblemSpec) -> float:
    return q.a / 2 + q.b / 2 + ps.coupling * q.c / 4 - ps.lam * q.d_raw / (ps.p + 1)


def nehari(q: Quartet, ps: ProblemSpec) -> float:
    """``<I'(u), u>``."""
    return q.a + q.b + ps.coupling * q.c - ps.lam * q.d_raw


def pohozaev(q: Quartet, ps: ProblemSpec) -> float:
    """Pohozaev defect, zero at every solution."""
    s, p = ps.s, ps.p
    return ((3 - 2 * s) * q.a / 2 + 1.5 * q.b + (3 + 2 * s) * ps.coupling * q.c / 4 + q.e / 2
            - 3 * ps.lam * q.d_raw / (p + 1))


def constraint_g(q: Quartet, ps: ProblemSpec) -> float:
    """``G = 2s <I'(u),u> - P(u)``, the derivative of the fibering map at 1."""
    s, p = ps.s, ps.p
    return ((6 * s - 3) * q.a / 2 + (4 * s - 3) * q.b / 2 + (6 * s - 3) * ps.coupling * q.c / 4
            - q.e / 2 - ps.lam * ps.D * q.d_raw / (p + 1))


def reduced_j(q: Quartet, ps: ProblemSpec) -> float:
    """Functional that agrees with ``I`` on the constraint set.

    ``I - J = G / (2s(p+1) - 3)`` exactly. For constant ``V`` (``e = 0``)
    all coefficients are positive when ``p > 2``.
    """
    s, p = ps.s, ps.p
    if p <= 2:
        raise RegimeError("reduced functional needs p > 2")
    D = ps.D
    return (s * (p - 2) * q.a + s * (p - 1) * q.b + s * (p - 2) * ps.coupling * q.c / 2 + q.e / 2) / D


def gradient(u: Field, ps: ProblemSpec) -> Field:
    """``L^2`` gradient of ``I``: ``(-Delta)^s u + V u + kappa phi u - lam |u|^(p-1) u``."""
    return Field(u.grid, evaluate(u, ps, need_gradient=True).grad)


def constraint_gradient(u: Field, ps: ProblemSpec, ev: Evaluation | None = None) -> np.ndarray:
    """``L^2`` gradient of ``G`` as an array."""
    if ev is None or not ev.parts:
        ev = evaluate(u, ps, need_parts=True)
    s = ps.s
    pr = ev.parts
    return ((6 * s - 3) * pr["lap"] + (4 * s - 3) * pr["Vu"] - pr["xVu"]
            + (6 * s - 3) * ps.coupling * pr["phiu"] - ps.lam * ps.D * pr["nl"])


def dual_norm(g_hat: np.ndarray, grid: GridSpec, s: float) -> float:
    """``H^s``-dual norm ``||(1 + |xi|^(2s))^(-1/2) g^||`` with quadrature weights."""
    w = grid.cell_volume / grid.size
    return float(np.sqrt(np.sum((g_hat.real**2 + g_hat.imag**2) / (1.0 + grid.xi_power(s))) * w))


def _dual_inner(f_hat, g_hat, grid, s):
    w = grid.cell_volume / grid.size
    return float(np.sum((np.conj(f_hat) * g_hat).real / (1.0 + grid.xi_power(s))) * w)


def coulomb_functional(u: Field, ps: ProblemSpec) -> float:
    """``Psi(u) = int phi_u u^2``."""
    u2 = u.values**2
    phi = poisson_array(u2, u.grid, ps.s, ps.poisson_mode)
    return float(np.sum(phi * u2)) * u.grid.cell_volume


def coulomb_splitting_error(u: Field, v: Field, shift, ps: ProblemSpec) -> float:
    """``|Psi(u + T v) - Psi(u) - Psi(v)|`` with ``T`` a circular shift by ``shift`` cells."""
    moved = _shift(v, shift)
    return abs(coulomb_functional(u + moved, ps) - coulomb_functional(u, ps) - coulomb_functional(v, ps))


def residual_report(u: Field, ps: ProblemSpec, ev: Evaluation | None = None) -> ResidualReport:
    """Residuals of the Euler-Lagrange equation and of the two identities.

    ``mu_fit`` minimizes ``||grad I + mu grad G||`` in the dual norm, the
    Lagrange multiplier of the constraint. ``hs_norm`` is ``sqrt(a + mass)``,
    used to make ``grad_norm`` relative.
    """
    if ev is None or ev.grad_hat is None or not ev.parts:
        ev = evaluate(u, ps, need_gradient=True, need_parts=True)
    q = ev.quartet
    grid = u.grid
    gn = dual_norm(ev.grad_hat, grid, ps.s)
    gg_hat = fftn(constraint_gradient(u, ps, ev))
    den = _dual_inner(gg_hat, gg_hat, grid, ps.s)
    mu = -_dual_inner(gg_hat, ev.grad_hat, grid, ps.s) / den if den > 0 else 0.0
    scale = quartet_scale(q, ps)
    return ResidualReport(
        nehari=nehari(q, ps),
        constraint_g=constraint_g(q, ps),
        pohozaev=pohozaev(q, ps),
        grad_norm=gn,
        mu_fit=mu,
        boundary_mass_fraction=boundary_mass_fraction(u),
        scale=scale,
        hs_norm=float(np.sqrt(max(q.a + q.mass, 0.0))),
    )


def quartet_scale(q: Quartet, ps: ProblemSpec) -> float:
    return abs(q.a) + abs(q.b) + ps.coupling * abs(q.c) + ps.lam * abs(q.d_raw) + abs(q.e)
