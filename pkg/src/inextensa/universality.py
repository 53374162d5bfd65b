"""Universality residuals and equilibrium checks for Z-fiber-reinforced solids.

All checks work in material Cartesian form with ``G = I`` and fibers along
``N = e_Z``. The stress is ``S = T N (x) N + Sbar``; the tension ``T`` absorbs the
Z component of equilibrium, so only the X and Y components constrain the strain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import numpy.polynomial.chebyshev as cheb

from .constitutive import EnergyFunction, Material, MonomialBasis, ResponseTriple, sample_materials, sbar_cauchy
from .diffgeo import DeformationMap, Domain, MetricField, MetricSample, fd_partials
from .errors import InvalidParams

CONSTANCY_THRESHOLD = 1e-8
TOL_DIFF = 1e-10
TOL_QUAD = 1e-7
INEXTENSIBILITY_TOL = 1e-10


# -- kinematic ingredients -----------------------------------------------------------

@dataclass
class Kinematics:
    """Strain-derived fields entering every residual, at a batch of points.

    ``dI[..., i, B]`` is the partial of invariant ``i`` along ``X^B``.
    """

    points: np.ndarray
    C: np.ndarray
    B: np.ndarray
    divC: np.ndarray
    divB: np.ndarray
    I: np.ndarray
    dI: np.ndarray

    @classmethod
    def from_sample(cls, s: MetricSample) -> "Kinematics":
        C, dC = s.C, s.dC
        B = np.linalg.inv(C)
        dCe = np.moveaxis(dC, -1, -3)  # (..., E, 3, 3)
        dB = -np.moveaxis(B[..., None, :, :] @ dCe @ B[..., None, :, :], -3, -1)
        I1 = np.trace(C, axis1=-2, axis2=-1)
        I2 = 0.5 * (I1**2 - np.einsum("...ij,...ji->...", C, C))
        I3 = np.linalg.det(C)
        dI1 = np.einsum("...iie->...e", dC)
        dI2 = I1[..., None] * dI1 - (C[..., None] * dC).sum(axis=(-3, -2))
        dI3 = I3[..., None] * (B[..., None] * dC).sum(axis=(-3, -2))
        return cls(
            s.points,
            C,
            B,
            np.einsum("...abb->...a", dC),
            np.einsum("...abb->...a", dB),
            np.stack([I1, I2, I3], -1),
            np.stack([dI1, dI2, dI3], -2),
        )

    @classmethod
    def of(cls, metric: MetricField, points) -> "Kinematics":
        return cls.from_sample(metric.sample(points, order=1))


def _kin(metric, points) -> Kinematics:
    if isinstance(metric, Kinematics):
        return metric
    if isinstance(metric, MetricSample):
        return Kinematics.from_sample(metric)
    return Kinematics.of(metric, points)


# -- residual suites -------------------------------------------------------------------

def cauchy_universality_residuals(metric, points=None) -> dict:
    """Absolute residuals of the Cauchy-elastic universality constraints.

    For ``A = 1, 2``: ``div C#``, ``div B#``, ``I_i,A``, ``C^AB I_i,B`` and
    ``B^AB I_i,B`` (i = 1..3), plus ``|C_33 - 1|``: 23 arrays in total.
    """
    k = _kin(metric, points)
    out = {}
    CdI = np.einsum("...ab,...ib->...ia", k.C, k.dI)
    BdI = np.einsum("...ab,...ib->...ia", k.B, k.dI)
    for A in (0, 1):
        a = A + 1
        out[f"divC_{a}"] = np.abs(k.divC[..., A])
        out[f"divB_{a}"] = np.abs(k.divB[..., A])
        for i in range(3):
            out[f"gradI{i + 1}_{a}"] = np.abs(k.dI[..., i, A])
        for i in range(3):
            out[f"C.gradI{i + 1}_{a}"] = np.abs(CdI[..., i, A])
        for i in range(3):
            out[f"B.gradI{i + 1}_{a}"] = np.abs(BdI[..., i, A])
    out["C33"] = np.abs(k.C[..., 2, 2] - 1.0)
    return out


def hyper_universality_residuals(metric, points=None) -> dict:
    """Absolute residuals of the eight hyperelastic constraint families for ``A = 1, 2``
    plus ``|C_33 - 1|``: 17 arrays."""
    k = _kin(metric, points)
    I1, I2, I3 = (k.I[..., i] for i in range(3))
    dI1, dI2, dI3 = (k.dI[..., i, :] for i in range(3))
    eye = np.eye(3)
    P = I1[..., None, None] * eye - k.C  # I1 G# - C#
    Bd = lambda v: np.einsum("...ab,...b->...a", k.B, v)
    Pd = lambda v: np.einsum("...ab,...b->...a", P, v)
    I3v = I3[..., None]
    h = [
        dI1 - k.divC,
        I3v * k.divB + Bd(dI3),
        dI1,
        Pd(dI2),
        I3v * Bd(dI3),
        dI2 + Pd(dI1),
        dI3 + I3v * Bd(dI1),
        I3v * Bd(dI2) + Pd(dI3),
    ]
    out = {}
    for A in (0, 1):
        for n, v in enumerate(h, start=1):
            out[f"hyper{n}_{A + 1}"] = np.abs(v[..., A])
    out["C33"] = np.abs(k.C[..., 2, 2] - 1.0)
    return out


def passes(residuals: dict, tol: float) -> bool:
    return all(float(np.max(v)) <= tol for v in residuals.values())


# -- invariant classification --------------------------------------------------------------

@dataclass
class CaseClassification:
    gradient_norms: np.ndarray  # max over the grid of |grad I_i|, i = 1..3
    label: str
    threshold: float = CONSTANCY_THRESHOLD

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "max_gradient_norms": {f"I{i + 1}": float(v) for i, v in enumerate(self.gradient_norms)},
            "threshold": self.threshold,
        }


def classify_invariants(metric: MetricField, domain: Domain, threshold: float = CONSTANCY_THRESHOLD) -> CaseClassification:
    """``case_ii`` when all three invariants are constant on the grid, else ``case_i``."""
    k = Kinematics.of(metric, domain.grid())
    norms = np.linalg.norm(k.dI, axis=-1).reshape(-1, 3).max(axis=0)
    label = "case_ii" if np.all(norms <= threshold) else "case_i"
    return CaseClassification(norms, label, threshold)


# -- equilibrium ---------------------------------------------------------------------------

def forcing_from(k: Kinematics, material: Material, basis: MonomialBasis = None) -> np.ndarray:
    """``F^A = -Sbar^AB_,B`` by the chain rule through the invariants.

    ``basis`` lets several materials share the monomial tables at ``k.I``.
    """
    I1, I2, I3 = (k.I[..., i] for i in range(3))
    basis = MonomialBasis(I1, I2, I3) if basis is None else basis
    chi, xi, eta = material.response(I1, I2, I3, basis)
    dchi, dxi, deta = material.response_gradient(I1, I2, I3, basis)
    # d_B of each response function: sum_i f_i I_i,B
    gchi = (dchi[..., None, :] @ k.dI)[..., 0, :]
    gxi = (dxi[..., None, :] @ k.dI)[..., 0, :]
    geta = (deta[..., None, :] @ k.dI)[..., 0, :]
    div = (
        gchi
        + xi[..., None] * k.divC
        + (k.C @ gxi[..., None])[..., 0]
        + eta[..., None] * k.divB
        + (k.B @ geta[..., None])[..., 0]
    )
    return -div


def equilibrium_forcing(metric, material: Material, points=None) -> np.ndarray:
    """``(F^1, F^2, F^3)`` on a trailing axis; the first two vanish for universal strains."""
    return forcing_from(_kin(metric, points), material)


def equilibrium_forcing_fd(metric: MetricField, material: Material, points, h: float = 1e-4) -> np.ndarray:
    """Finite-difference oracle: central differences of ``Sbar`` assembled pointwise."""
    field = metric.restricted(None)
    d, _ = fd_partials(lambda p: sbar_cauchy(field(p), None, material), points, h, second=False)
    return -np.einsum("...abb->...a", d)


# -- tension ----------------------------------------------------------------------------------

def _base_function(T0) -> Callable:
    if T0 is None:
        return lambda X, Y: np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y)))
    if callable(T0):
        return T0
    c = np.asarray(T0, dtype=float)
    if c.shape != (4,):
        raise InvalidParams("bilinear tension base needs coefficients (a, b, c, d) for a + bX + cY + dXY")
    return lambda X, Y: c[0] + c[1] * X + c[2] * Y + c[3] * X * Y


# Gauss-Kronrod (3, 7) on [-1, 1]: the Kronrod rule reuses the three Gauss nodes
_GK_NODES = np.array([
    -0.960491268708020283423507092629, -0.774596669241483377035853079956,
    -0.434243749346802558002071502845, 0.0,
    0.434243749346802558002071502845, 0.774596669241483377035853079956,
    0.960491268708020283423507092629,
])
_GK_KRONROD = np.array([
    0.104656226026467265193823857192, 0.268488089868333440728569280667,
    0.401397414775962222905051818618, 0.450916538658474142345110087046,
    0.401397414775962222905051818618, 0.268488089868333440728569280667,
    0.104656226026467265193823857192,
])
_GK_GAUSS = np.array([0.0, 5 / 9, 0.0, 8 / 9, 0.0, 5 / 9, 0.0])

RULES = ("chebyshev", "gauss-kronrod", "simpson")
DEFAULT_RULE = "chebyshev"
# Chebyshev points per fiber column; the forcing is analytic in Z, so coefficients decay geometrically
CHEB_POINTS = 32
# trailing coefficients used for the truncation error estimate
CHEB_TAIL = 4


def _interval_offsets(rule: str) -> np.ndarray:
    """Interior sample positions within a grid interval, as fractions of its width."""
    if rule == "gauss-kronrod":
        return 0.5 * (1.0 + _GK_NODES)
    if rule == "simpson":
        return np.array([0.25, 0.5, 0.75])
    raise InvalidParams(f"unknown quadrature rule {rule!r}; expected one of {RULES}")


def _cheb_nodes(z0: float, z1: float) -> np.ndarray:
    return z0 + 0.5 * (z1 - z0) * (1.0 + cheb.chebpts1(CHEB_POINTS))


def tension_points(domain: Domain, rule: str = DEFAULT_RULE) -> np.ndarray:
    """Grid nodes followed by the quadrature samples of every fiber column.

    The first ``nZ`` Z-slots are the nodes. The piecewise rules then add their
    interior samples interval by interval; ``chebyshev`` adds ``CHEB_POINTS``
    Chebyshev points spanning the whole column.
    """
    xs, ys, zs = domain.axes()
    h = zs[1] - zs[0]
    if rule == "chebyshev":
        interior = _cheb_nodes(zs[0], zs[-1])
    else:
        interior = (zs[:-1, None] + h * _interval_offsets(rule)[None, :]).ravel()
    zall = np.concatenate([zs, interior])
    return np.stack(np.meshgrid(xs, ys, zall, indexing="ij"), axis=-1)


def _cheb_cumulative(f: np.ndarray, zs: np.ndarray):
    """Integrals of the Chebyshev interpolant of ``f`` from ``zs[0]`` to each node.

    The error estimate bounds the truncated tail by the largest of the trailing
    coefficients, integrated over the column.
    """
    nz = len(zs)
    half = 0.5 * (zs[-1] - zs[0])
    samples = f[..., nz:]
    cols = samples.reshape(-1, CHEB_POINTS).T
    coef = cheb.chebfit(cheb.chebpts1(CHEB_POINTS), cols, CHEB_POINTS - 1)
    icoef = cheb.chebint(coef, lbnd=-1.0, scl=half)
    t = (zs - zs[0]) / half - 1.0
    cum = cheb.chebval(t, icoef).reshape(f.shape[:-1] + (nz,))
    tail = np.abs(coef[-CHEB_TAIL:]).max(axis=0).reshape(f.shape[:-1])
    err = 2.0 * tail[..., None] * (zs - zs[0])
    return cum, err


def _integrate_columns(f: np.ndarray, nz: int, h: float, rule: str):
    """Per-interval integrals of ``f`` along the last axis and their error estimates."""
    nodes = f[..., :nz]
    inner = f[..., nz:].reshape(f.shape[:-1] + (nz - 1, -1))
    if rule == "gauss-kronrod":
        fine = 0.5 * h * inner @ _GK_KRONROD
        coarse = 0.5 * h * inner @ _GK_GAUSS
        return fine, np.abs(fine - coarse)
    f0, f1 = nodes[..., :-1], nodes[..., 1:]
    q1, q2, q3 = inner[..., 0], inner[..., 1], inner[..., 2]
    coarse = h / 6.0 * (f0 + 4.0 * q2 + f1)
    fine = h / 12.0 * (f0 + 4.0 * q1 + 2.0 * q2 + 4.0 * q3 + f1)
    return coarse, np.abs(fine - coarse)


@dataclass
class TensionField:
    """Fiber tension ``T(X, Y, Z) = T0(X, Y) + int_{Z0}^{Z} F^3 dZ`` sampled on a grid."""

    domain: Domain
    values: np.ndarray  # (nX, nY, nZ)
    base: np.ndarray  # (nX, nY)
    forcing: np.ndarray  # F^3 at the nodes, (nX, nY, nZ)
    quadrature_error: np.ndarray  # accumulated error estimate at the nodes
    rule: str = DEFAULT_RULE

    def z_variation(self) -> float:
        """Largest spread of ``T - T0`` along any fiber column."""
        d = self.values - self.base[..., None]
        return float(np.max(d.max(axis=-1) - d.min(axis=-1)))


def solve_tension(
    metric: MetricField,
    material: Material,
    domain: Domain,
    T0=None,
    rule: str = DEFAULT_RULE,
    kin: Optional[Kinematics] = None,
) -> TensionField:
    """Integrate ``T_,3 = F^3`` up each fiber column from the ``Z0`` face.

    The default ``chebyshev`` rule interpolates the forcing at Chebyshev points of the
    whole column and integrates the interpolant exactly; its error estimate comes
    from the trailing coefficients. The piecewise rules treat each grid interval
    as one panel: ``gauss-kronrod`` (3, 7) estimates against its embedded 3-point
    Gauss rule, ``simpson`` uses the midpoint and compares with two half-width panels. ``T0`` is a
    callable of ``(X, Y)``, bilinear coefficients ``(a, b, c, d)``, or None for zero.
    """
    kin = kin if kin is not None else Kinematics.of(metric, tension_points(domain, rule))
    F3 = forcing_from(kin, material)[..., 2]
    return _tension_from_forcing(F3, domain, _base_function(T0), rule)


def _tension_from_forcing(F3: np.ndarray, domain: Domain, base_fn: Callable, rule: str) -> TensionField:
    xs, ys, zs = domain.axes()
    nz = len(zs)
    if rule == "chebyshev":
        cum, err = _cheb_cumulative(F3, zs)
    else:
        panels, errors = _integrate_columns(F3, nz, zs[1] - zs[0], rule)
        cum = np.zeros(F3.shape[:-1] + (nz,))
        cum[..., 1:] = np.cumsum(panels, axis=-1)
        err = np.zeros_like(cum)
        err[..., 1:] = np.cumsum(errors, axis=-1)
    Xg, Yg = np.meshgrid(xs, ys, indexing="ij")
    base = np.broadcast_to(np.asarray(base_fn(Xg, Yg), dtype=float), Xg.shape).copy()
    return TensionField(domain, base[..., None] + cum, base, F3[..., :nz], err, rule)


# -- reports ----------------------------------------------------------------------------------

@dataclass
class ConstraintReport:
    """Per-point residuals with aggregates and pass flags.

    ``residuals`` maps a name to an array over ``points`` (shape ``(N,)``);
    ``tolerances`` maps each name to its pass threshold.
    """

    points: np.ndarray
    residuals: dict
    tolerances: dict
    metadata: dict = field(default_factory=dict)

    def aggregates(self) -> dict:
        out = {}
        for name, v in self.residuals.items():
            v = np.asarray(v).reshape(-1)
            i = int(np.argmax(v))
            out[name] = {
                "max_abs": float(v[i]),
                "mean_abs": float(np.mean(v)),
                "worst_point": [float(c) for c in self.points.reshape(-1, 3)[i]] if len(self.points.reshape(-1, 3)) == len(v) else None,
                "tolerance": float(self.tolerances[name]),
                "pass": bool(v[i] <= self.tolerances[name]),
            }
        return out

    @property
    def passed(self) -> bool:
        return all(a["pass"] for a in self.aggregates().values())

    def failures(self) -> list:
        return [(n, a) for n, a in self.aggregates().items() if not a["pass"]]

    def to_json(self) -> dict:
        return {"metadata": self.metadata, "residuals": self.aggregates(), "pass": self.passed}

    @classmethod
    def build(cls, points, residuals: dict, tol: Union[float, dict], metadata=None, prefix: str = ""):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        res = {prefix + n: np.asarray(v, dtype=float).reshape(-1) for n, v in residuals.items()}
        tols = {n: (tol[n[len(prefix):]] if isinstance(tol, dict) else tol) for n in res}
        return cls(pts, res, tols, dict(metadata or {}))

    def merged(self, other: "ConstraintReport") -> "ConstraintReport":
        res = dict(self.residuals)
        res.update(other.residuals)
        tols = dict(self.tolerances)
        tols.update(other.tolerances)
        meta = dict(self.metadata)
        meta.update(other.metadata)
        pts = self.points if len(self.points) >= len(other.points) else other.points
        return ConstraintReport(pts, res, tols, meta)


def residual_report(metric: MetricField, domain: Domain, suite: str = "cauchy", tol: float = TOL_DIFF, prefix: str = "") -> ConstraintReport:
    grid = domain.grid()
    fn = {"cauchy": cauchy_universality_residuals, "hyper": hyper_universality_residuals}[suite]
    return ConstraintReport.build(grid, fn(metric, grid), tol, {"suite": suite}, prefix)


def full_equilibrium_residual(
    phi: Union[DeformationMap, MetricField],
    material: Union[Material, Sequence[Material], None],
    domain: Domain,
    samples: int = 10,
    seed: int = 1,
    T0=None,
    tol: float = TOL_QUAD,
    rule: str = DEFAULT_RULE,
) -> ConstraintReport:
    """Check ``Div S = 0`` for ``S = T e3 (x) e3 + Sbar`` over sampled materials.

    The tension is solved per material. Components 1 and 2 of ``Div S`` are the
    negated forcing at the grid nodes. Component 3 equals ``T_,3 - F^3``, which
    vanishes for the exact antiderivative, so it is reported as the accumulated
    quadrature error estimate of the tension solve.
    When ``material`` is None, ``samples`` response triples seeded ``seed .. seed+samples-1``
    are used.
    """
    metric = phi.metric() if isinstance(phi, DeformationMap) else phi
    metric = metric.restricted(domain)
    if material is None:
        materials = sample_materials(samples, seed)
    elif isinstance(material, (ResponseTriple, EnergyFunction)):
        materials = [material]
    else:
        materials = list(material)
    pts = tension_points(domain, rule)
    nz = domain.counts[2]
    kin = Kinematics.of(metric, pts)
    c33 = np.abs(kin.C[..., 2, 2] - 1.0)
    if np.max(c33) > INEXTENSIBILITY_TOL:
        raise InvalidParams(f"fiber inextensibility violated: max |C_ZZ - 1| = {np.max(c33):.3g}")
    base_fn = _base_function(T0)
    worst = np.zeros(domain.grid().shape)
    per_material = []
    basis = MonomialBasis(*(kin.I[..., i] for i in range(3)))
    for m in materials:
        F = forcing_from(kin, m, basis)
        tension = _tension_from_forcing(F[..., 2], domain, base_fn, rule)
        r = np.stack([np.abs(F[..., :nz, 0]), np.abs(F[..., :nz, 1]), tension.quadrature_error], -1)
        worst = np.maximum(worst, r)
        per_material.append({"seed": m.seed, "max_abs": [float(v) for v in r.reshape(-1, 3).max(axis=0)]})
    grid = domain.grid()
    res = {f"equilibrium_{A + 1}": worst[..., A] for A in range(3)}
    meta = {"materials": per_material, "fiber": [0, 0, 1], "quadrature": rule}
    return ConstraintReport.build(grid, res, tol, meta)
