"""Compatibility of Z-dependent strains and reconstruction of the deformation.

Two halves:

* Strains ``C = [[f, g, 0], [g, h, 0], [0, 0, 1]]`` depending on ``Z`` only. Their
  Ricci-flatness reduces to ODEs in ``(f, g, h)``, or equivalently to structural
  equations for the scalars of a triangular orthonormal coframe. The ODEs close
  on second derivatives and are integrated with RK4; trajectories are matched
  against the two closed-form solution branches.
* Any flat strain field is integrated back to a map: the rotation in ``F = R U``
  is parallel-transported along paths with ``dR/ds = R K`` and ``F`` is then
  integrated along the same paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares

from .diffgeo import SPD_TOL, Domain, MetricField, christoffel_from, ricci
from .errors import (
    BlowUp,
    DegenerateDenominator,
    DomainError,
    InconsistentInitialData,
    InvalidParams,
    NotFlat,
    NotOrthogonal,
    NotSkew,
    NotSPD,
    SingularMetric,
    ZeroDenominator,
)
from .jet import Jet

DENOMINATOR_TOL = 1e-14
REDUCED_TOL = 1e-8
FLAT_TOL = 1e-8
SKEW_TOL = 1e-12
ORTHO_TOL = 1e-10
SERIES_THRESHOLD = 1e-6
TIE_TOL = 1e-10
STEPS_PER_UNIT = 1000
RECONSTRUCTION_STEPS_PER_UNIT = 100
FD_DELTA = 1e-3


# -- scalar functions of Z ---------------------------------------------------------

class ScalarZ:
    """Scalar function of ``Z`` that evaluates on arrays and on jets.

    Subclasses provide ``derivatives(Z, order)``: the list of the first ``order``
    derivatives (including the value) at ``Z``.
    """

    def derivatives(self, Z, order: int) -> list:
        raise NotImplementedError

    def __call__(self, Z):
        if isinstance(Z, Jet):
            return Z.compose(self.derivatives(Z.val, Z.order))
        return self.derivatives(np.asarray(Z, dtype=float), 0)[0]

    def to_json(self) -> dict:
        raise InvalidParams(f"{type(self).__name__} has no JSON form")


class PolyZ(ScalarZ):
    """Polynomial in ``Z``; ``coefficients`` in increasing degree."""

    def __init__(self, coefficients):
        c = np.atleast_1d(np.asarray(coefficients, dtype=float))
        if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
            raise InvalidParams("polynomial coefficients must be a non-empty list of finite numbers")
        self.poly = np.polynomial.Polynomial(c)

    @property
    def coefficients(self) -> np.ndarray:
        return self.poly.coef

    def derivatives(self, Z, order):
        Z = np.asarray(Z, dtype=float)
        return [np.broadcast_to(self.poly.deriv(k)(Z), Z.shape).astype(float) for k in range(order + 1)]

    def to_json(self):
        return self.coefficients.tolist()


class SplineZ(ScalarZ):
    """Cubic spline through ``(knots, values)``; evaluation outside the knots is refused."""

    def __init__(self, knots, values):
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size < 4:
            raise InvalidParams("spline needs matching 1-D knots and values with at least 4 entries")
        if not np.all(np.diff(k) > 0):
            raise InvalidParams("spline knots must be strictly increasing")
        self.knots, self.values = k, v
        self.spline = CubicSpline(k, v)

    def derivatives(self, Z, order):
        Z = np.asarray(Z, dtype=float)
        if np.any(Z < self.knots[0] - 1e-12) or np.any(Z > self.knots[-1] + 1e-12):
            raise DomainError(f"Z outside spline knots [{self.knots[0]}, {self.knots[-1]}]")
        return [self.spline(Z, k) if k <= 3 else np.zeros(Z.shape) for k in range(order + 1)]


class FuncZ(ScalarZ):
    """Wraps a jet-aware callable of ``Z``; derivatives come from univariate jets."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def derivatives(self, Z, order):
        Z = np.asarray(Z, dtype=float)
        z = Jet.variable(Z, 0, order, nvars=1)
        out = self.fn(z)
        if not isinstance(out, Jet):
            return [np.broadcast_to(np.asarray(out, dtype=float), Z.shape)] + [np.zeros(Z.shape)] * order
        return [out.coef[k] * math.factorial(k) for k in range(order + 1)]


def as_scalar(v) -> ScalarZ:
    if isinstance(v, ScalarZ):
        return v
    if callable(v):
        return FuncZ(v)
    return PolyZ([float(v)])


def _scalar_from_json(v, knots=None) -> ScalarZ:
    if knots is not None:
        return SplineZ(knots, v)
    if isinstance(v, (int, float)):
        return PolyZ([v])
    return PolyZ(v)


def _check_keys(d: dict, allowed: set, what: str):
    if not isinstance(d, dict):
        raise InvalidParams(f"{what} must be a JSON object")
    extra = set(d) - allowed
    if extra:
        raise InvalidParams(f"unknown keys in {what}: {sorted(extra)}")


def _branch_constants(params) -> tuple:
    if isinstance(params, dict):
        _check_keys(params, {"C1", "C2", "C3", "C4"}, "branch params")
        params = [params.get(f"C{i}", 0.0) for i in range(1, 5)]
    try:
        C = tuple(float(c) for c in params)
    except (TypeError, ValueError):
        raise InvalidParams("branch constants must be numbers") from None
    if len(C) != 4 or not np.all(np.isfinite(C)):
        raise InvalidParams("branch forms need finite constants C1..C4")
    return C


# -- metric ansatz -----------------------------------------------------------------

@dataclass
class MetricAnsatzZ:
    """``C = [[f, g, 0], [g, h, 0], [0, 0, 1]]`` with ``f, g, h`` functions of ``Z``."""

    f: ScalarZ
    g: ScalarZ
    h: ScalarZ
    kind: str = "custom"
    params: Optional[dict] = None

    def __post_init__(self):
        self.f, self.g, self.h = (as_scalar(v) for v in (self.f, self.g, self.h))

    @classmethod
    def branch1(cls, C1, C2, C3, C4) -> "MetricAnsatzZ":
        """``f = C2^2 + C1^2 (Z+C4)^2``, ``g = C2 C3``, ``h = C3^2``."""
        return cls(
            PolyZ([C2**2 + C1**2 * C4**2, 2 * C1**2 * C4, C1**2]),
            PolyZ([C2 * C3]),
            PolyZ([C3**2]),
            "branch1",
            {"C1": C1, "C2": C2, "C3": C3, "C4": C4},
        )

    @classmethod
    def branch2(cls, C1, C2, C3, C4) -> "MetricAnsatzZ":
        """``f = C2^2 + C1^2 (Z+C4)^2``, ``g = C1 C3 (Z+C4)^2``, ``h = C3^2 (Z+C4)^2``."""
        sq = np.array([C4**2, 2 * C4, 1.0])
        return cls(
            PolyZ(np.array([C2**2, 0, 0]) + C1**2 * sq),
            PolyZ(C1 * C3 * sq),
            PolyZ(C3**2 * sq),
            "branch2",
            {"C1": C1, "C2": C2, "C3": C3, "C4": C4},
        )

    @classmethod
    def constant(cls, f, g, h) -> "MetricAnsatzZ":
        return cls(PolyZ([f]), PolyZ([g]), PolyZ([h]), "custom-poly")

    def derivs(self, Z):
        """``(f, g, h, f', g', h', f'', g'', h'')`` at ``Z``."""
        d = [s.derivatives(Z, 2) for s in (self.f, self.g, self.h)]
        return tuple(d[i][k] for k in range(3) for i in range(3))

    def check(self, Z) -> None:
        f, g, h = self.derivs(Z)[:3]
        if np.any(f <= 0) or np.any(f * h - g * g <= SPD_TOL):
            raise NotSPD("ansatz needs f > 0 and f h - g^2 > 0")

    def metric(self, domain: Optional[Domain] = None) -> MetricField:
        def comps(X, Y, Z):
            g = self.g(Z)
            return [[self.f(Z), g, 0.0], [g, self.h(Z), 0.0], [0.0, 0.0, 1.0]]

        return MetricField(comps, domain, f"ansatz[{self.kind}]")

    def to_json(self) -> dict:
        if self.kind in ("branch1", "branch2"):
            return {"kind": self.kind, "params": dict(self.params)}
        if all(isinstance(s, SplineZ) for s in (self.f, self.g, self.h)):
            return {
                "kind": "spline",
                "knots": self.f.knots.tolist(),
                "f": self.f.values.tolist(),
                "g": self.g.values.tolist(),
                "h": self.h.values.tolist(),
            }
        return {"kind": "custom-poly", "params": {n: getattr(self, n).to_json() for n in "fgh"}}

    @classmethod
    def from_json(cls, d: dict) -> "MetricAnsatzZ":
        kind = d.get("kind") if isinstance(d, dict) else None
        if kind in ("branch1", "branch2"):
            _check_keys(d, {"kind", "params"}, "ansatz spec")
            return getattr(cls, kind)(*_branch_constants(d.get("params", {})))
        if kind == "custom-poly":
            _check_keys(d, {"kind", "params"}, "ansatz spec")
            p = d.get("params", {})
            _check_keys(p, {"f", "g", "h"}, "custom-poly params")
            return cls(*(_scalar_from_json(p.get(n, 0.0)) for n in "fgh"), kind="custom-poly")
        if kind == "spline":
            _check_keys(d, {"kind", "knots", "f", "g", "h"}, "ansatz spec")
            return cls(*(_scalar_from_json(d[n], d["knots"]) for n in "fgh"), kind="spline")
        raise InvalidParams(f"ansatz kind must be branch1, branch2, custom-poly or spline, got {kind!r}")


# -- compatibility ODEs ------------------------------------------------------------

def _ricci_ode_terms(f, g, h, fp, gp, hp, fpp, gpp, hpp, as_printed=False):
    e1 = 2 * f * h * fpp + f * fp * hp - 2 * f * gp**2 - 2 * g**2 * fpp + 2 * g * fp * gp - h * fp**2
    e2 = 2 * h * gp**2 - h * fp * hp - 2 * g * gp * hp + f * hp**2 + 2 * g**2 * hpp - 2 * f * h * hpp
    e3 = h * fp * gp - 2 * g * fp * hp + f * gp * hp + 2 * g**2 * gpp - 2 * f * h * gpp
    # the f^2 h'^2 term carries a minus sign; the printed form has a plus
    s = 1.0 if as_printed else -1.0
    e4 = (
        -(h**2) * fp**2
        + 2 * f * h**2 * fpp
        + s * f**2 * hp**2
        + 4 * f * g * gp * hp
        - 2 * g**2 * (fp * hp + f * hpp + gp**2)
        - 2 * h * (g**2 * fpp + g * (-2 * fp * gp + 2 * f * gpp) + f * (gp**2 - f * hpp))
        + 4 * g**3 * gpp
    )
    return np.stack(np.broadcast_arrays(e1, e2, e3, e4), -1)


def ricci_ode_residuals(ansatz: MetricAnsatzZ, Z, as_printed: bool = False) -> np.ndarray:
    """The four polynomial compatibility expressions at ``Z``, stacked on a trailing axis.

    They are scaled Ricci components: with ``D = f h - g^2``,
    ``Ric_11 D = e1/4``, ``Ric_22 D = -e2/4``, ``Ric_12 D = -e3/4`` and
    ``Ric_33 D^2 = e4/4``. ``as_printed`` flips the sign of the ``f^2 h'^2`` term
    in ``e4``, which then no longer tracks ``Ric_33``.
    """
    ansatz.check(Z)
    return _ricci_ode_terms(*ansatz.derivs(Z), as_printed=as_printed)


def solve_second_derivatives(f, g, h, fp, gp, hp):
    """``(f'', g'', h'')`` that zero the first three compatibility expressions."""
    den = g * g - f * h
    if np.any(np.abs(den) <= DENOMINATOR_TOL):
        raise DegenerateDenominator("g^2 - f h vanishes; the second derivatives are undetermined")
    den = 2.0 * den
    fpp = (-h * fp**2 + 2 * g * fp * gp - 2 * f * gp**2 + f * fp * hp) / den
    gpp = (-h * fp * gp + 2 * g * fp * hp - f * gp * hp) / den
    hpp = (-2 * h * gp**2 + h * fp * hp + 2 * g * gp * hp - f * hp**2) / den
    return fpp, gpp, hpp


def reduced_flatness(ansatz_or_data, Z=None):
    """``(g^2 - f h)(g'^2 - f' h')``: what remains of the fourth ODE after closing the first three.

    Accepts an ansatz with ``Z`` or raw data ``(f, g, h, f', g', h')``.
    """
    if isinstance(ansatz_or_data, MetricAnsatzZ):
        f, g, h, fp, gp, hp = ansatz_or_data.derivs(Z)[:6]
    else:
        f, g, h, fp, gp, hp = ansatz_or_data
    return (g * g - f * h) * (gp * gp - fp * hp)


# -- moving frames -----------------------------------------------------------------

@dataclass
class CoframeZ:
    """Coframe ``a dX``, ``b dX + c dY``, ``dZ`` with ``a, b, c`` functions of ``Z``."""

    a: ScalarZ
    b: ScalarZ
    c: ScalarZ
    kind: str = "custom"
    params: Optional[dict] = None

    def __post_init__(self):
        self.a, self.b, self.c = (as_scalar(v) for v in (self.a, self.b, self.c))

    @classmethod
    def branch1(cls, C1, C2, C3, C4) -> "CoframeZ":
        """``a = C1 (Z+C4)``, ``b = C3``, ``c = C2``."""
        return cls(PolyZ([C1 * C4, C1]), PolyZ([C3]), PolyZ([C2]), "branch1",
                   {"C1": C1, "C2": C2, "C3": C3, "C4": C4})

    @classmethod
    def branch2(cls, C1, C2, C3, C4) -> "CoframeZ":
        """``a = C2``, ``b = C3 (Z+C4)``, ``c = C1 (Z+C4)``."""
        return cls(PolyZ([C2]), PolyZ([C3 * C4, C3]), PolyZ([C1 * C4, C1]), "branch2",
                   {"C1": C1, "C2": C2, "C3": C3, "C4": C4})

    @classmethod
    def from_ansatz(cls, ansatz: MetricAnsatzZ) -> "CoframeZ":
        """``a = sqrt(f h - g^2)/sqrt(h)``, ``b = g/sqrt(h)``, ``c = sqrt(h)``."""
        f, g, h = ansatz.f, ansatz.g, ansatz.h
        return cls(
            FuncZ(lambda z: ((f(z) * h(z) - g(z) * g(z)) / h(z)) ** 0.5),
            FuncZ(lambda z: g(z) / h(z) ** 0.5),
            FuncZ(lambda z: h(z) ** 0.5),
            "from-ansatz",
        )

    def ansatz(self) -> MetricAnsatzZ:
        """Induced strain ``f = a^2 + b^2``, ``g = b c``, ``h = c^2``."""
        a, b, c = self.a, self.b, self.c
        return MetricAnsatzZ(
            FuncZ(lambda z: a(z) * a(z) + b(z) * b(z)),
            FuncZ(lambda z: b(z) * c(z)),
            FuncZ(lambda z: c(z) * c(z)),
            "from-coframe",
        )

    def to_json(self) -> dict:
        if self.kind in ("branch1", "branch2"):
            return {"kind": self.kind, "params": dict(self.params)}
        return {"kind": "custom-poly", "params": {n: getattr(self, n).to_json() for n in "abc"}}

    @classmethod
    def from_json(cls, d: dict) -> "CoframeZ":
        kind = d.get("kind") if isinstance(d, dict) else None
        if kind in ("branch1", "branch2"):
            _check_keys(d, {"kind", "params"}, "coframe spec")
            return getattr(cls, kind)(*_branch_constants(d.get("params", {})))
        if kind == "custom-poly":
            _check_keys(d, {"kind", "params"}, "coframe spec")
            p = d.get("params", {})
            _check_keys(p, {"a", "b", "c"}, "custom-poly params")
            return cls(*(_scalar_from_json(p.get(n, 0.0)) for n in "abc"), kind="custom-poly")
        if kind == "spline":
            _check_keys(d, {"kind", "knots", "a", "b", "c"}, "coframe spec")
            return cls(*(_scalar_from_json(d[n], d["knots"]) for n in "abc"), kind="spline")
        raise InvalidParams(f"coframe kind must be branch1, branch2, custom-poly or spline, got {kind!r}")


@dataclass
class FrameScalars:
    """Connection scalars ``xi``, ``eta``, ``psi`` as functions of ``Z``."""

    xi: ScalarZ
    eta: ScalarZ
    psi: ScalarZ

    def __post_init__(self):
        self.xi, self.eta, self.psi = (as_scalar(v) for v in (self.xi, self.eta, self.psi))

    def values(self, Z):
        """``(xi, eta, psi)`` at ``Z``."""
        return tuple(s(np.asarray(Z, dtype=float)) for s in (self.xi, self.eta, self.psi))

    def derivatives(self, Z):
        """``(xi, eta, psi, xi', eta', psi')`` at ``Z``."""
        d = [s.derivatives(Z, 1) for s in (self.xi, self.eta, self.psi)]
        return tuple(d[i][k] for k in range(2) for i in range(3))


def frame_scalars(coframe: CoframeZ, Z=None) -> FrameScalars:
    """``xi = a'/a``, ``eta = c'/c``, ``psi = (b' c - b c') / (2 a c)``.

    With ``Z`` given, ``a`` and ``c`` are checked to be nonzero there.
    """
    a, b, c = coframe.a, coframe.b, coframe.c
    if Z is not None:
        Z = np.asarray(Z, dtype=float)
        if np.any(a(Z) == 0) or np.any(c(Z) == 0):
            raise ZeroDenominator("coframe scalars need a != 0 and c != 0")

    def xi(z):
        return a(z).diff(0) / a(z).truncate(z.order - 1) if isinstance(z, Jet) else _d(a, z) / a(z)

    def eta(z):
        return c(z).diff(0) / c(z).truncate(z.order - 1) if isinstance(z, Jet) else _d(c, z) / c(z)

    def psi(z):
        if isinstance(z, Jet):
            aj, bj, cj = a(z), b(z), c(z)
            lo = z.order - 1
            return (bj.diff(0) * cj.truncate(lo) - bj.truncate(lo) * cj.diff(0)) / (2 * aj.truncate(lo) * cj.truncate(lo))
        return (_d(b, z) * c(z) - b(z) * _d(c, z)) / (2 * a(z) * c(z))

    return FrameScalars(_OneLess(xi), _OneLess(eta), _OneLess(psi))


def _d(s: ScalarZ, Z):
    return s.derivatives(np.asarray(Z, dtype=float), 1)[1]


class _OneLess(ScalarZ):
    """Scalar built from first derivatives: evaluated on a jet one order higher, then read off."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def derivatives(self, Z, order):
        Z = np.asarray(Z, dtype=float)
        z = Jet.variable(Z, 0, order + 1, nvars=1)
        out = self.fn(z)
        return [out.coef[k] * math.factorial(k) for k in range(order + 1)]


def structural_residuals(scalars: FrameScalars, Z, form: str = "corrected") -> np.ndarray:
    """Curvature 2-form coefficients of the coframe, stacked on a trailing axis.

    ``form="printed"``: ``(psi^2 - xi eta, 2 eta psi - psi', psi' + 2 psi eta,
    psi^2 - eta^2 - eta', psi^2 - xi' - xi^2)``.
    ``form="corrected"`` (default): the same five slots recomputed from the
    Riemann tensor, ``(psi^2 - xi eta, -psi' - 2 psi eta, psi' + 2 psi eta,
    psi^2 - eta^2 - eta', -3 psi^2 - xi' - xi^2)``. Both forms agree when
    ``psi = 0``; only the corrected one vanishes for every flat coframe.
    """
    xi, eta, psi, dxi, deta, dpsi = scalars.derivatives(np.asarray(Z, dtype=float))
    if form == "printed":
        r = (psi**2 - xi * eta, 2 * eta * psi - dpsi, dpsi + 2 * psi * eta,
             psi**2 - eta**2 - deta, psi**2 - dxi - xi**2)
    elif form == "corrected":
        r = (psi**2 - xi * eta, -dpsi - 2 * psi * eta, dpsi + 2 * psi * eta,
             psi**2 - eta**2 - deta, -3 * psi**2 - dxi - xi**2)
    else:
        raise InvalidParams(f"form must be 'corrected' or 'printed', got {form!r}")
    return np.stack(np.broadcast_arrays(*r), -1)


# -- integrating the closed ODE system -----------------------------------------------

def _closed_form(branch: str, C, Z):
    C1, C2, C3, C4 = C
    rho = Z + C4
    f = C2**2 + C1**2 * rho**2
    if branch == "branch1":
        return f, np.full_like(Z, C2 * C3), np.full_like(Z, C3**2)
    return f, C1 * C3 * rho**2, C3**2 * rho**2


def _initial_guess(branch: str, y0, Z0):
    f, g, h, fp, gp, hp = (float(v) for v in y0)
    try:
        if branch == "branch1":
            C3 = math.sqrt(h)
            C2 = g / C3
            rest = f - C2**2
            rho = 2 * rest / fp
            C1 = math.sqrt(rest) / abs(rho)
        else:
            rho = 2 * h / hp
            C3 = math.sqrt(h) / abs(rho)
            C1 = g / (C3 * rho**2)
            C2 = math.sqrt(max(f - C1**2 * rho**2, 0.0))
        guess = np.array([C1, C2, C3, rho - Z0])
        return guess if np.all(np.isfinite(guess)) else None
    except (ValueError, ZeroDivisionError):
        return None


@dataclass
class BranchFit:
    branch: str
    constants: np.ndarray
    deviation: float

    def to_json(self) -> dict:
        return {"constants": {f"C{i + 1}": float(c) for i, c in enumerate(self.constants)}, "deviation": self.deviation}


@dataclass
class FlatAnsatzTrajectory:
    """RK4 solution of the closed compatibility ODEs and its best closed-form match."""

    Z: np.ndarray
    states: np.ndarray  # (n + 1, 6): f, g, h, f', g', h'
    fits: dict
    branch: Union[str, list]
    deviation: float
    homogeneous: bool = False
    degenerate: bool = False

    def to_json(self) -> dict:
        return {
            "branch": self.branch,
            "deviation": self.deviation,
            "homogeneous": self.homogeneous,
            "degenerate": self.degenerate,
            "fits": {k: v.to_json() for k, v in sorted(self.fits.items())},
            "span": [float(self.Z[0]), float(self.Z[-1])],
            "steps": len(self.Z) - 1,
        }


def _rhs(y):
    f, g, h, fp, gp, hp = y
    return np.array([fp, gp, hp, *solve_second_derivatives(f, g, h, fp, gp, hp)])


def _fit_branch(branch, Z, traj, Z0, y0, seed):
    target = traj[:, :3]
    sub = np.linspace(0, len(Z) - 1, min(len(Z), 201)).round().astype(int)

    def resid(C):
        return (np.stack(_closed_form(branch, C, Z[sub]), -1) - target[sub]).ravel()

    rng = np.random.default_rng(seed)
    starts = []
    guess = _initial_guess(branch, y0, Z0)
    if guess is not None:
        starts.append(guess)
    while len(starts) < 3:
        base = starts[0] if starts else np.array([1.0, 1.0, 1.0, 1.0 - Z0])
        starts.append(base * (1 + 0.1 * rng.standard_normal(4)) + 0.1 * rng.standard_normal(4))
    best = None
    for x0 in starts:
        sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        dev = float(np.max(np.abs(np.stack(_closed_form(branch, sol.x, Z), -1) - target)))
        if best is None or dev < best.deviation:
            best = BranchFit(branch, sol.x, dev)
    return best


def integrate_flat_ansatz(initial, Z0: float = 0.0, span: float = 1.0, steps: Optional[int] = None,
                          seed: int = 0) -> FlatAnsatzTrajectory:
    """Integrate ``(f, g, h)`` from ``initial = (f, g, h, f', g', h')`` at ``Z0`` with RK4.

    The second derivatives come from :func:`solve_second_derivatives`. The initial
    data must satisfy the reduced condition (``|.| <= 1e-8``). The trajectory is
    fitted by least squares to both closed-form branches (3 starts each); the
    branch with the smaller maximum deviation wins, and near-ties list both.
    """
    y0 = np.asarray(initial, dtype=float)
    if y0.shape != (6,) or not np.all(np.isfinite(y0)):
        raise InvalidParams("initial data must be six finite numbers (f, g, h, f', g', h')")
    f, g, h = y0[:3]
    if f <= 0 or f * h - g * g <= SPD_TOL:
        raise NotSPD("initial strain must satisfy f > 0 and f h - g^2 > 0")
    red = reduced_flatness(tuple(y0))
    if abs(red) > REDUCED_TOL:
        raise InconsistentInitialData(f"reduced flatness condition violated: (g^2 - fh)(g'^2 - f'h') = {red:.3g}")
    n = steps if steps is not None else max(1, int(math.ceil(STEPS_PER_UNIT * abs(span))))
    if n < 1:
        raise InvalidParams("steps must be positive")
    dz = span / n
    Z = Z0 + dz * np.arange(n + 1)
    traj = np.empty((n + 1, 6))
    traj[0] = y = y0
    for i in range(n):
        k1 = _rhs(y)
        k2 = _rhs(y + 0.5 * dz * k1)
        k3 = _rhs(y + 0.5 * dz * k2)
        k4 = _rhs(y + dz * k3)
        y = y + dz / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or y[0] <= 0 or y[0] * y[2] - y[1] ** 2 <= SPD_TOL:
            raise BlowUp(f"trajectory left the SPD region near Z = {Z[i + 1]:.6g}")
        traj[i + 1] = y
    homogeneous = bool(np.all(np.abs(y0[3:]) <= DENOMINATOR_TOL))
    if homogeneous:
        C3 = math.sqrt(h)
        fit = BranchFit("branch1", np.array([0.0, g / C3, C3, 0.0]), 0.0)
        fit.deviation = float(np.max(np.abs(np.stack(_closed_form("branch1", fit.constants, Z), -1) - traj[:, :3])))
        return FlatAnsatzTrajectory(Z, traj, {"branch1": fit}, "branch1", fit.deviation, True, True)
    fits = {b: _fit_branch(b, Z, traj, Z0, y0, seed + k) for k, b in enumerate(("branch1", "branch2"))}
    d1, d2 = fits["branch1"].deviation, fits["branch2"].deviation
    if abs(d1 - d2) < TIE_TOL:
        label = ["branch1", "branch2"]
    else:
        label = "branch1" if d1 < d2 else "branch2"
    degenerate = bool(min(abs(fits[b].constants[0]) for b in fits) < 1e-12)
    return FlatAnsatzTrajectory(Z, traj, fits, label, min(d1, d2), False, degenerate)


def branch_initial_data(branch: str, C, Z0: float = 0.0) -> np.ndarray:
    """``(f, g, h, f', g', h')`` of a closed-form branch at ``Z0``."""
    a = MetricAnsatzZ.branch1(*C) if branch == "branch1" else MetricAnsatzZ.branch2(*C)
    return np.array(a.derivs(np.asarray(Z0, dtype=float))[:6], dtype=float)


# -- rotation transport ------------------------------------------------------------

def _stretch(C: np.ndarray, dC: np.ndarray):
    """``U = sqrt(C)``, its inverse and ``dU[..., A, B, E] = d_E U_AB``.

    The derivative solves the Sylvester relation ``U dU + dU U = dC`` in the eigenbasis.
    """
    w, Q = np.linalg.eigh(C)
    if np.any(w <= SPD_TOL):
        raise SingularMetric("strain is not positive definite")
    s = np.sqrt(w)
    U = (Q * s[..., None, :]) @ np.swapaxes(Q, -1, -2)
    Uinv = (Q / s[..., None, :]) @ np.swapaxes(Q, -1, -2)
    dCe = np.moveaxis(dC, -1, -3)  # (..., E, A, B)
    Qe = Q[..., None, :, :]
    M = np.swapaxes(Qe, -1, -2) @ dCe @ Qe
    M = M / (s[..., None, :, None] + s[..., None, None, :])
    dU = np.moveaxis(Qe @ M @ np.swapaxes(Qe, -1, -2), -3, -1)
    return U, Uinv, dU


def omega_from(C: np.ndarray, dC: np.ndarray):
    """``Omega^C_AB = (Gamma^M_BN U^C_M - U^C_N,B) U^-N_A`` with ``U``; shapes ``(..., 3, 3, 3)``."""
    U, Uinv, dU = _stretch(C, dC)
    G = christoffel_from(C, dC)
    T = np.einsum("...mbn,...cm->...cbn", G, U, optimize=True) - np.swapaxes(dU, -1, -2)
    return np.einsum("...cbn,...na->...cab", T, Uinv, optimize=True), U


def connection_omega(metric: MetricField, p) -> np.ndarray:
    """``Omega[..., C, A, B]`` of the rotation transport at points ``p``.

    Contracting the last slot with a direction gives a skew matrix ``K``.
    """
    s = metric.sample(np.asarray(p, dtype=float), order=1)
    return omega_from(s.C, s.dC)[0]


def rodrigues_exp(K, s: float = 1.0) -> np.ndarray:
    """``exp(s K)`` for a skew ``K`` by Rodrigues' formula, with a series near ``omega = 0``."""
    K = np.asarray(K, dtype=float)
    if K.shape[-2:] != (3, 3) or np.max(np.abs(K + np.swapaxes(K, -1, -2)), initial=0.0) > SKEW_TOL:
        raise NotSkew("K must be a skew-symmetric 3x3 matrix")
    w = np.sqrt(K[..., 2, 1] ** 2 + K[..., 0, 2] ** 2 + K[..., 1, 0] ** 2)
    ws = w * s
    small = np.abs(ws) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, w)
    a = np.where(small, s - w**2 * s**3 / 6.0, np.sin(ws) / safe)
    b = np.where(small, s**2 / 2.0 - w**2 * s**4 / 24.0, (1.0 - np.cos(ws)) / safe**2)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + a[..., None, None] * K + b[..., None, None] * (K @ K)


def project_orthogonal(R: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix (polar factor) via the SVD."""
    u, _, vt = np.linalg.svd(R)
    return u @ vt


@dataclass(frozen=True)
class PathSpec:
    """Straight segment from ``start`` to ``end`` traversed in ``steps`` RK4 steps."""

    start: tuple
    end: tuple
    steps: int = 0

    def __post_init__(self):
        a = tuple(float(v) for v in self.start)
        b = tuple(float(v) for v in self.end)
        if len(a) != 3 or len(b) != 3 or not np.all(np.isfinite(a + b)):
            raise InvalidParams("path endpoints must be finite 3-vectors")
        n = int(self.steps) if self.steps else max(1, int(math.ceil(STEPS_PER_UNIT * np.linalg.norm(np.subtract(b, a)))))
        if n < 1:
            raise InvalidParams("path needs at least one step")
        object.__setattr__(self, "start", a)
        object.__setattr__(self, "end", b)
        object.__setattr__(self, "steps", n)

    def points(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)[..., None]
        return np.asarray(self.start) + s * (np.asarray(self.end) - np.asarray(self.start))

    def check(self, domain: Optional[Domain]) -> None:
        if domain is not None:
            domain.require(np.array([self.start, self.end]))


class _Transport:
    """Batched RK4 for ``dR/ds = R K`` and ``dx/ds = R U V`` along straight segments."""

    def __init__(self, metric: MetricField):
        self.metric = metric

    def fields(self, points):
        s = self.metric.sample(points, order=1, check=False)
        return omega_from(s.C, s.dC)

    def segment(self, P, Q, R, x, n: int):
        """March ``n`` steps from ``P`` to ``Q`` (batched, shapes ``(L, 3)``)."""
        V = Q - P
        h = 1.0 / n

        def rates(Om, U, R):
            K = np.einsum("...cab,...b->...ca", Om, V)
            return R @ K, (R @ (U @ V[..., None]))[..., 0]

        cur = self.fields(P)
        for k in range(n):
            mid = self.fields(P + (k + 0.5) * h * V)
            end = self.fields(P + (k + 1) * h * V)
            dR1, dx1 = rates(*cur, R)
            dR2, dx2 = rates(*mid, R + 0.5 * h * dR1)
            dR3, dx3 = rates(*mid, R + 0.5 * h * dR2)
            dR4, dx4 = rates(*end, R + h * dR3)
            R = project_orthogonal(R + h / 6.0 * (dR1 + 2 * dR2 + 2 * dR3 + dR4))
            x = x + h / 6.0 * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
            cur = end
        return R, x


def _check_flat(metric: MetricField, points, tol: float = FLAT_TOL):
    r = float(np.max(np.abs(ricci(metric.restricted(None), points))))
    if r > tol:
        raise NotFlat(f"strain is not flat: max |Ric| = {r:.3g} > {tol:g}")
    return r


def _check_orthogonal(R0):
    R0 = np.asarray(R0, dtype=float)
    if R0.shape != (3, 3) or np.max(np.abs(R0.T @ R0 - np.eye(3))) > ORTHO_TOL:
        raise NotOrthogonal("R0 must be an orthogonal 3x3 matrix")
    return R0


def transport_rotation(metric: MetricField, path: Union[PathSpec, Sequence[PathSpec]], R0=None) -> np.ndarray:
    """Parallel-transport ``R0`` along a straight path (or a chain of them) with RK4.

    Flatness is checked at 5 points per segment; ``R`` is re-projected onto the
    orthogonal group after every step.
    """
    paths = [path] if isinstance(path, PathSpec) else list(path)
    R = _check_orthogonal(np.eye(3) if R0 is None else R0)
    for a, b in zip(paths, paths[1:]):
        if np.max(np.abs(np.subtract(a.end, b.start))) > 1e-12:
            raise InvalidParams("chained path segments must connect")
    t = _Transport(metric)
    for p in paths:
        p.check(metric.domain)
        _check_flat(metric, p.points(np.linspace(0, 1, 5)))
        P = np.asarray(p.start)[None]
        R, _ = t.segment(P, np.asarray(p.end)[None], R[None], np.zeros((1, 3)), p.steps)
        R = R[0]
    return R


# -- reconstruction ----------------------------------------------------------------

@dataclass
class ReconstructionResult:
    """Reconstructed map on a grid with its consistency defects.

    ``metric_defect`` is ``max |F^T F - C|`` with ``F`` differentiated from the
    reconstructed map; ``compatibility_defect`` is the largest mixed-partial
    asymmetry ``|d_B F_A - d_A F_B|`` of the transported ``F = R U``;
    ``path_independence_defect`` compares the X-Y-Z staircase against Z-Y-X.
    """

    points: np.ndarray
    values: np.ndarray
    rotations: np.ndarray
    base: np.ndarray
    anchor: np.ndarray
    metric_defect: float
    compatibility_defect: float
    path_independence_defect: float
    steps_per_unit: int
    check_points: np.ndarray = field(repr=False, default=None)
    _evaluate: Optional[Callable] = field(repr=False, default=None)

    def evaluate(self, points):
        """Map and rotation at arbitrary ``points`` via the X-Y-Z staircase from the base."""
        return self._evaluate(np.asarray(points, dtype=float))

    def to_json(self) -> dict:
        return {
            "base": self.base.tolist(),
            "anchor": self.anchor.tolist(),
            "shape": list(self.values.shape[:-1]),
            "points": self.points.reshape(-1, 3).tolist(),
            "values": self.values.reshape(-1, 3).tolist(),
            "metric_defect": self.metric_defect,
            "compatibility_defect": self.compatibility_defect,
            "path_independence_defect": self.path_independence_defect,
            "steps_per_unit": self.steps_per_unit,
        }


def _staircase(t: _Transport, base, R0, x0, targets, orders, n: int):
    """Axis-ordered staircases from ``base`` to each target, batched.

    ``orders[i]`` is the leg order (a permutation of 0, 1, 2) for target ``i``;
    every leg takes ``n`` steps so the discretization is smooth in the endpoint.
    """
    N = len(targets)
    P = np.broadcast_to(np.asarray(base, dtype=float), (N, 3)).copy()
    R = np.broadcast_to(R0, (N, 3, 3)).copy()
    x = np.broadcast_to(x0, (N, 3)).copy()
    rows = np.arange(N)
    for k in range(3):
        Q = P.copy()
        ax = orders[:, k]
        Q[rows, ax] = targets[rows, ax]
        R, x = t.segment(P, Q, R, x, n)
        P = Q
    return x, R


def _sweep(t: _Transport, P, R, x, axis, targets, spu):
    """March lines starting at ``P`` along ``axis`` through every target coordinate.

    Returns states with a new target axis: ``R (L, m, 3, 3)``, ``x (L, m, 3)``.
    """
    b = P[0, axis]
    m = len(targets)
    outR = np.empty((P.shape[0], m, 3, 3))
    outx = np.empty((P.shape[0], m, 3))
    up = [i for i in range(m) if targets[i] >= b]
    down = [i for i in reversed(range(m)) if targets[i] < b]
    for order in (up, down):
        curP, curR, curx = P, R, x
        for i in order:
            Q = curP.copy()
            Q[:, axis] = targets[i]
            n = int(math.ceil(spu * abs(targets[i] - curP[0, axis]) - 1e-9))
            if n > 0:
                curR, curx = t.segment(curP, Q, curR, curx, n)
            curP = Q
            outR[:, i], outx[:, i] = curR, curx
    return outR, outx


def _staircase_grid(t: _Transport, domain: Domain, base, R0, x0, order, spu):
    """March the staircase in leg ``order`` from ``base`` to every grid node."""
    axes = domain.axes()
    P = np.asarray(base, dtype=float)[None]
    R, x = R0[None], x0[None]
    shape = []
    for axis in order:
        R, x = _sweep(t, P, R, x, axis, axes[axis], spu)
        L = P.shape[0]
        P = np.repeat(P, len(axes[axis]), axis=0)
        P[:, axis] = np.tile(axes[axis], L)
        R, x = R.reshape(-1, 3, 3), x.reshape(-1, 3)
        shape.append(len(axes[axis]))
    R = R.reshape(*shape, 3, 3)
    x = x.reshape(*shape, 3)
    perm = tuple(int(i) for i in np.argsort(order))
    return np.transpose(R, (*perm, 3, 4)), np.transpose(x, (*perm, 3))


def _stencil(pts, delta):
    """Points ``pts + k delta e_B`` for ``k = -2, -1, 1, 2`` and each axis ``B``: shape (4, 3, N, 3)."""
    offs = np.array([-2.0, -1.0, 1.0, 2.0])[:, None, None, None] * delta
    return pts[None, None] + offs * np.eye(3)[None, :, None, :]


def _richardson_from(vals, delta):
    """Partials along each axis from stencil values ``(4, 3, ...)``; the axis index is appended last."""
    c1 = (vals[2] - vals[1]) / (2 * delta)
    c2 = (vals[3] - vals[0]) / (4 * delta)
    return np.moveaxis((4 * c1 - c2) / 3.0, 0, -1)


def reconstruct_map(
    metric: MetricField,
    domain: Domain,
    base=None,
    R0=None,
    anchor=None,
    steps_per_unit: int = RECONSTRUCTION_STEPS_PER_UNIT,
    check_points: int = 12,
    seed: int = 0,
) -> ReconstructionResult:
    """Recover ``phi`` from a flat strain by transporting ``R`` and integrating ``F = R U``.

    Every path is an axis-ordered staircase from ``base`` (default: the domain's lower
    corner) where ``phi = anchor`` (default: origin) and ``R = R0`` (default: I).
    Map defects are measured at ``check_points`` seeded interior points with
    Richardson-extrapolated central differences.
    """
    domain = domain if domain is not None else metric.domain
    if domain is None:
        raise InvalidParams("reconstruction needs a domain")
    metric = metric.restricted(None)
    grid = domain.grid()
    _check_flat(metric, grid)
    base = domain.lower if base is None else np.asarray(base, dtype=float)
    domain.require(base[None])
    R0 = _check_orthogonal(np.eye(3) if R0 is None else R0)
    anchor = np.zeros(3) if anchor is None else np.asarray(anchor, dtype=float)
    t = _Transport(metric)
    n = max(1, int(math.ceil(steps_per_unit * np.max(domain.upper - domain.lower))))
    xyz, zyx = np.array([0, 1, 2]), np.array([2, 1, 0])

    def evaluate(points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 3)
        x, R = _staircase(t, base, R0, anchor, flat, np.tile(xyz, (len(flat), 1)), n)
        return x.reshape(pts.shape), R.reshape(pts.shape[:-1] + (3, 3))

    # interior check points keep the difference stencils inside the domain
    rng = np.random.default_rng(seed)
    margin = 2 * FD_DELTA + 1e-9
    lo, hi = domain.lower + margin, domain.upper - margin
    cps = lo + (hi - lo) * rng.random((check_points, 3))
    sp = _stencil(cps, FD_DELTA)
    Rg, xg = _staircase_grid(t, domain, base, R0, anchor, xyz, steps_per_unit)
    Rz, xz = _staircase_grid(t, domain, base, R0, anchor, zyx, steps_per_unit)
    xs, Rs = evaluate(sp)
    path_defect = float(max(np.max(np.abs(xg - xz)), np.max(np.abs(Rg - Rz))))
    Ffd = _richardson_from(xs, FD_DELTA)  # (N, a, B)
    C = metric(cps)
    metric_defect = float(np.max(np.abs(np.swapaxes(Ffd, -1, -2) @ Ffd - C)))
    samp = metric.sample(sp, order=1, check=False)
    Fs = Rs @ _stretch(samp.C, samp.dC)[0]
    dF = _richardson_from(Fs, FD_DELTA)  # (N, a, A, B)
    compat_defect = float(np.max(np.abs(dF - np.swapaxes(dF, -1, -2))))
    return ReconstructionResult(
        grid, xg, Rg, base, anchor, metric_defect, compat_defect, path_defect, steps_per_unit, cps, evaluate
    )


# -- bending fixture -----------------------------------------------------------------

def bending_metric(a0: float = 1.0, a1: float = 1.0, b0: float = 1.5, domain: Optional[Domain] = None) -> MetricField:
    """``diag((a0 + a1 Z)^2, b0^2, 1)``."""
    return MetricField(
        lambda X, Y, Z: [[(a0 + a1 * Z) * (a0 + a1 * Z), 0.0, 0.0], [0.0, b0 * b0, 0.0], [0.0, 0.0, 1.0]],
        domain,
        "bending",
    )


def bending_map(points, a0: float = 1.0, a1: float = 1.0, b0: float = 1.5, X0: float = 0.0) -> np.ndarray:
    """``((a0 + a1 Z)/a1 sin(a1 (X - X0)), b0 Y, (a0 + a1 Z)/a1 cos(a1 (X - X0)) - a0/a1)``.

    Normalized so that the origin maps to the origin with ``F = diag(a0, b0, 1)`` there.
    """
    p = np.asarray(points, dtype=float)
    r = (a0 + a1 * p[..., 2]) / a1
    t = a1 * (p[..., 0] - X0)
    return np.stack([r * np.sin(t), b0 * p[..., 1], r * np.cos(t) - a0 / a1], -1)
