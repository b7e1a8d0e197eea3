"""External potentials ``V(x)`` and numerical checks of the standing hypotheses.

Three families are supported, all radial:

* ``constant``: ``V = v_inf``;
* ``paper_example``: ``V(x) = 2 - 1/(1 + |x|^(2s))`` with ``v_inf = 2``;
* ``radial_table``: cubic interpolation of a table ``(r, V)``, equal to
  ``v_inf`` beyond the last radius.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .fractional import seminorm_from_modes
from .gridfield import Field, GridSpec, fftn, ifftn_real

__all__ = [
    "PotentialSpec",
    "HypothesisReport",
    "ConvergenceError",
    "constant",
    "paper_example",
    "radial_table",
    "load_radial_table",
    "evaluate_V",
    "virial_V",
    "radial_profile",
    "check_V1",
    "check_V2",
    "estimate_alpha0",
]

KINDS = ("constant", "paper_example", "radial_table")


class ConvergenceError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class PotentialSpec:
    """Radial potential description.

    ``s`` is required by ``paper_example`` (the exponent ``2s``) and may be
    left ``None`` and supplied at evaluation time. Table data are tuples so
    that specs are hashable.
    """

    kind: str
    v_inf: float
    s: float | None = None
    radii: tuple = ()
    values: tuple = ()
    derivatives: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "v_inf", float(self.v_inf))
        if self.kind == "paper_example" and self.v_inf != 2.0:
            raise ValueError("paper_example has v_inf = 2")
        if self.kind == "radial_table":
            r = np.asarray(self.radii, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 2:
                raise ValueError("radial table needs matching r and V columns with >= 2 rows")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ValueError("radial table radii must be nonnegative and strictly increasing")
            if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
                raise ValueError("radial table must be finite")
            if self.derivatives is not None and len(self.derivatives) != r.size:
                raise ValueError("derivative column length differs from the table")
            object.__setattr__(self, "radii", tuple(float(x) for x in r))
            object.__setattr__(self, "values", tuple(float(x) for x in v))
            if self.derivatives is not None:
                object.__setattr__(self, "derivatives", tuple(float(x) for x in self.derivatives))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @cached_property
    def _spline(self):
        r = np.asarray(self.radii)
        v = np.asarray(self.values)
        if self.derivatives is not None:
            from scipy.interpolate import CubicHermiteSpline

            return CubicHermiteSpline(r, v, np.asarray(self.derivatives))
        return CubicSpline(r, v, bc_type=((1, 0.0), "not-a-knot") if r[0] == 0 else "not-a-knot")


def constant(v: float) -> PotentialSpec:
    return PotentialSpec("constant", v)


def paper_example(s: float | None = None) -> PotentialSpec:
    return PotentialSpec("paper_example", 2.0, s=s)


def radial_table(radii, values, v_inf: float | None = None, derivatives=None) -> PotentialSpec:
    values = tuple(values)
    return PotentialSpec("radial_table", values[-1] if v_inf is None else v_inf,
                         radii=tuple(radii), values=values,
                         derivatives=None if derivatives is None else tuple(derivatives))


def load_radial_table(path, v_inf: float | None = None) -> PotentialSpec:
    """Read a CSV with header ``r,V`` (optional third column ``dV``)."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["r", "V"]:
        raise ValueError(f"{path}: header must start with 'r,V', got {rows[0]}")
    body = [[float(x) for x in row] for row in rows[1:] if row]
    data = np.array(body, dtype=float)
    derivs = data[:, 2] if len(header) > 2 and header[2] == "dV" else None
    return radial_table(data[:, 0], data[:, 1], v_inf, derivs)


def _resolve_s(spec: PotentialSpec, s):
    s = spec.s if s is None else s
    if s is None:
        raise ValueError("paper_example potential needs the fractional order s")
    return float(s)


def radial_profile(spec: PotentialSpec, s: float | None = None) -> tuple[Callable, Callable]:
    """Return vectorized ``V(r)`` and ``r V'(r)``."""
    if spec.kind == "constant":
        v = spec.v_inf
        return (lambda r: np.full_like(np.asarray(r, dtype=float), v),
                lambda r: np.zeros_like(np.asarray(r, dtype=float)))
    if spec.kind == "paper_example":
        ss = _resolve_s(spec, s)

        def V(r):
            return 2.0 - 1.0 / (1.0 + np.asarray(r, dtype=float) ** (2 * ss))

        def rdV(r):
            t = np.asarray(r, dtype=float) ** (2 * ss)
            return 2 * ss * t / (1.0 + t) ** 2

        return V, rdV

    spl = spec._spline
    rmax = spec.radii[-1]
    if spec.derivatives is None and len(spec.radii) < 4:
        deriv_ok = False
    else:
        deriv_ok = True
    dspl = spl.derivative()

    def V(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= rmax, spl(np.minimum(r, rmax)), spec.v_inf)

    def rdV(r):
        if not deriv_ok:
            raise ValueError("radial table needs derivative data or at least 4 rows for a stable spline")
        r = np.asarray(r, dtype=float)
        return np.where(r <= rmax, r * dspl(np.minimum(r, rmax)), 0.0)

    return V, rdV


def evaluate_V(spec: PotentialSpec, grid: GridSpec, s: float | None = None) -> Field:
    if spec.kind == "constant":
        return Field(grid, np.full(grid.shape, spec.v_inf))
    V, _ = radial_profile(spec, s)
    return Field(grid, V(grid.radius()))


def virial_V(spec: PotentialSpec, grid: GridSpec, s: float | None = None) -> Field:
    """Samples of ``x . grad V``; for a radial potential this is ``r V'(r)``."""
    if spec.kind == "constant":
        return Field.zeros(grid)
    _, rdV = radial_profile(spec, s)
    return Field(grid, rdV(grid.radius()))


@dataclass(frozen=True)
class HypothesisReport:
    name: str
    passed: bool
    extreme: float
    witness: tuple | None
    strict_fraction: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "extreme": self.extreme,
                "witness": None if self.witness is None else list(self.witness),
                "strict_fraction": self.strict_fraction, "note": self.note}


def _point(grid: GridSpec, flat_index: int) -> tuple:
    idx = np.unravel_index(flat_index, grid.shape)
    a = grid.axis()
    return tuple(float(a[i]) for i in idx)


def check_V1(spec: PotentialSpec, grid: GridSpec, s: float) -> HypothesisReport:
    """``2s V + x . grad V >= 0`` on the grid, plus boundedness of the virial."""
    V = evaluate_V(spec, grid, s).values
    W = virial_V(spec, grid, s).values
    q = 2 * s * V + W
    k = int(np.argmin(q))
    m = float(q.flat[k])
    passed = m >= -1e-12 and bool(np.all(np.isfinite(W)))
    return HypothesisReport("V1", passed, m, None if passed else _point(grid, k),
                            note=f"max |x.gradV| = {float(np.max(np.abs(W))):.6g}")


def check_V2(spec: PotentialSpec, grid: GridSpec, s: float | None = None) -> HypothesisReport:
    V = evaluate_V(spec, grid, s).values
    excess = V - spec.v_inf
    k = int(np.argmax(excess))
    m = float(excess.flat[k])
    passed = m <= 1e-12
    strict = float(np.mean(V < spec.v_inf - 1e-9))
    note = "constant-potential regime" if strict == 0.0 else ""
    return HypothesisReport("V2", passed, m, None if passed else _point(grid, k), strict, note)


def estimate_alpha0(spec: PotentialSpec, grid: GridSpec, s: float, starts: int = 3,
                    seed: int = 0, max_iters: int = 500, tol: float = 1e-9) -> float:
    """Estimate ``inf (||u||_s^2 + int V u^2) / int u^2`` on the grid.

    Preconditioned descent with a three-term Rayleigh-Ritz step (the
    current iterate, the preconditioned residual and the previous search
    direction) from ``starts`` random initial fields. Returns the smallest
    Rayleigh quotient found. This is an estimate, not a certificate.
    """
    V = evaluate_V(spec, grid, s).values
    mult = grid.xi_power(s)
    shift = max(float(np.mean(V)), 1e-3)
    precond = 1.0 / (shift + mult)

    def apply_h(u):
        return ifftn_real(mult * fftn(u)) + V * u

    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(max(3, starts)):
        u = rng.standard_normal(grid.shape)
        u /= np.linalg.norm(u)
        hu = apply_h(u)
        rq = float(np.vdot(u, hu))
        prev = None
        converged = False
        for _ in range(max_iters):
            res = hu - rq * u
            if np.linalg.norm(res) <= tol * max(1.0, abs(rq)):
                converged = True
                break
            dirs = [u, ifftn_real(precond * fftn(res))]
            if prev is not None:
                dirs.append(prev)
            basis, _ = np.linalg.qr(np.stack([d.ravel() for d in dirs], axis=1))
            hb = np.stack([apply_h(basis[:, j].reshape(grid.shape)).ravel()
                           for j in range(basis.shape[1])], axis=1)
            small = basis.T @ hb
            w, vec = np.linalg.eigh(0.5 * (small + small.T))
            new = (basis @ vec[:, 0]).reshape(grid.shape)
            new_h = (hb @ vec[:, 0]).reshape(grid.shape)
            prev = new - float(np.vdot(u, new)) * u
            u, hu, rq = new, new_h, float(w[0])
        best = min(best, rq)
        if not converged:
            raise ConvergenceError(f"Rayleigh quotient descent did not converge in {max_iters} iterations",
                                   best=best)
    return float(best)


def rayleigh_quotient(u: Field, spec: PotentialSpec, s: float) -> float:
    """``(||u||_s^2 + int V u^2) / int u^2`` for a given field."""
    V = evaluate_V(spec, u.grid, s).values
    a = seminorm_from_modes(fftn(u.values), u.grid, s)
    mass = float(np.sum(u.values**2)) * u.grid.cell_volume
    b = float(np.sum(V * u.values**2)) * u.grid.cell_volume
    return (a + b) / mass
