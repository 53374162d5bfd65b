"""Tensor-field calculus on box domains.

Metric fields and deformation maps are closed-form callables ``(X, Y, Z) -> ...``
evaluated on truncated Taylor jets, so first and second partials come out exact to
roundoff. Central finite differences are kept alongside as independent oracles.

Array layout is points-first: a metric sample on an array of points with shape
``S + (3,)`` has ``C.shape == S + (3, 3)``, ``dC[..., A, B, E] = d_E C_AB`` and
``d2C[..., A, B, E, F] = d_E d_F C_AB``. Christoffel symbols are stored as
``Gamma[..., C, A, B] = Gamma^C_AB``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NotSPD, SingularMap, SingularMetric
from .jet import Jet

SPD_TOL = 1e-14
FD_STEP = 1e-4


# -- domains and charts -------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[x0,x1] x [y0,y1] x [z0,z1]`` with a structured grid.

    Parameters
    ----------
    bounds : tuple of 6 floats
        ``(x0, x1, y0, y1, z0, z1)``; every extent must be strictly positive.
    counts : tuple of 3 ints
        Grid nodes per axis (endpoints included), each at least 2.
    """

    bounds: tuple = (0.0, 1.0, 0.0, 1.0, 0.0, 1.0)
    counts: tuple = (21, 21, 21)

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        n = tuple(int(v) for v in self.counts)
        if len(b) != 6 or not np.all(np.isfinite(b)):
            raise DomainError(f"domain bounds must be 6 finite numbers, got {self.bounds}")
        if len(n) != 3:
            raise DomainError(f"grid counts must be 3 integers, got {self.counts}")
        for axis, (lo, hi) in zip("XYZ", (b[0:2], b[2:4], b[4:6])):
            if not hi > lo:
                raise DomainError(f"{axis} extent must be positive, got [{lo}, {hi}]")
        if min(n) < 2:
            raise DomainError(f"grid counts must be >= 2, got {n}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "counts", n)

    @classmethod
    def unit_box(cls, n: int = 21) -> "Domain":
        return cls((0.0, 1.0, 0.0, 1.0, 0.0, 1.0), (n, n, n))

    @classmethod
    def wedge(cls, n: int = 21) -> "Domain":
        """Default wedge for the annular family, clear of the axis and branch cut."""
        return cls((0.5, 1.5, -0.5, 0.5, 0.0, 1.0), (n, n, n))

    def with_counts(self, counts) -> "Domain":
        if np.isscalar(counts):
            counts = (counts,) * 3
        return Domain(self.bounds, tuple(counts))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.bounds[0::2])

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.bounds[1::2])

    def axes(self):
        return tuple(
            np.linspace(self.bounds[2 * i], self.bounds[2 * i + 1], self.counts[i])
            for i in range(3)
        )

    def grid(self) -> np.ndarray:
        """Grid nodes with shape ``(nX, nY, nZ, 3)``, indexing ``ij``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.array(self.counts) - 1)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        span = self.upper - self.lower
        lo = self.lower - tol * span
        hi = self.upper + tol * span
        return np.all((p >= lo) & (p <= hi), axis=-1)

    def require(self, points) -> None:
        inside = self.contains(points)
        if not np.all(inside):
            bad = np.asarray(points)[~inside].reshape(-1, 3)[0]
            raise DomainError(f"point {tuple(bad)} lies outside domain {self.bounds}")

    def random_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((n, 3))

    def to_json(self) -> dict:
        return {"bounds": list(self.bounds), "counts": list(self.counts)}


@dataclass(frozen=True)
class ReferenceChart:
    """Coordinate chart on the reference body: ``cartesian`` or ``cylindrical``.

    In the cylindrical chart points are ``(R, Theta, Z)`` and ``G = diag(1, R^2, 1)``.
    """

    kind: str = "cartesian"

    def __post_init__(self):
        if self.kind not in ("cartesian", "cylindrical"):
            raise ValueError(f"unknown chart {self.kind!r}")

    def metric(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        G = np.broadcast_to(np.eye(3), p.shape[:-1] + (3, 3)).copy()
        if self.kind == "cylindrical":
            R = p[..., 0]
            if np.any(R <= 0):
                raise DomainError("cylindrical chart requires R > 0")
            G[..., 1, 1] = R**2
        return G


CARTESIAN = ReferenceChart("cartesian")
CYLINDRICAL = ReferenceChart("cylindrical")


# -- SPD checks -----------------------------------------------------------------

def check_spd(C: np.ndarray, what: str = "metric", error=SingularMetric) -> None:
    """Raise unless every leading principal minor exceeds the SPD tolerance."""
    C = np.asarray(C, dtype=float)
    m1 = C[..., 0, 0]
    m2 = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    m3 = np.linalg.det(C)
    worst = np.minimum(np.minimum(m1, m2), m3)
    if not np.all(worst > SPD_TOL):
        idx = np.unravel_index(np.argmin(worst), worst.shape) if worst.ndim else ()
        raise error(
            f"{what} not positive definite at sample {idx}: "
            f"leading minors ({float(m1[idx]):.3g}, {float(m2[idx]):.3g}, {float(m3[idx]):.3g})"
        )


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


# -- metric fields ----------------------------------------------------------------

@dataclass
class MetricSample:
    """Metric values and partials at an array of points."""

    points: np.ndarray
    C: np.ndarray
    dC: np.ndarray
    d2C: Optional[np.ndarray] = None


def _as_jet(v, like: Jet) -> Jet:
    if isinstance(v, Jet):
        return v
    return Jet.constant(np.broadcast_to(np.asarray(v, dtype=float), like.shape), like.order)


def _stack_sym(rows) -> list:
    """Symmetric 3x3 nested list from the upper triangle of ``rows``."""
    return [[rows[min(i, j)][max(i, j)] for j in range(3)] for i in range(3)]


class MetricField:
    """Symmetric 3x3 field defined by a component function.

    Parameters
    ----------
    components : callable
        ``components(X, Y, Z)`` returns a nested 3x3 sequence of expressions
        built from the jet-aware functions in :mod:`inextensa.jet`; only the upper
        triangle is read, so the field is symmetric by construction.
    domain : Domain, optional
        When given, every evaluation checks that the points lie inside it.
    name : str
        Label used in reports.
    """

    def __init__(self, components: Callable, domain: Optional[Domain] = None, name: str = "metric"):
        self._components = components
        self.domain = domain
        self.name = name

    def component_jets(self, points, order: int):
        X, Y, Z = Jet.variables(points, order)
        rows = self._components(X, Y, Z)
        return _stack_sym([[_as_jet(v, X) for v in row] for row in rows])

    def _check(self, points):
        points = np.asarray(points, dtype=float)
        if not np.all(np.isfinite(points)):
            raise DomainError("non-finite evaluation point")
        if self.domain is not None:
            self.domain.require(points)
        return points

    def __call__(self, points) -> np.ndarray:
        """Plain values with shape ``points.shape[:-1] + (3, 3)``."""
        points = self._check(points)
        comps = self.component_jets(points, 0)
        return np.stack([np.stack([c.val for c in row], -1) for row in comps], -2)

    def sample(self, points, order: int = 2, check: bool = True) -> MetricSample:
        """Values and partials up to ``order`` (1 or 2), with an SPD check."""
        points = self._check(points)
        comps = self.component_jets(points, order)
        C = np.stack([np.stack([c.val for c in row], -1) for row in comps], -2)
        dC = np.stack([np.stack([c.grad for c in row], -2) for row in comps], -3)
        d2C = None
        if order >= 2:
            d2C = np.stack([np.stack([c.hess for c in row], -3) for row in comps], -4)
        if check:
            check_spd(C, self.name)
        return MetricSample(points, C, dC, d2C)

    def restricted(self, domain: Optional[Domain]) -> "MetricField":
        return MetricField(self._components, domain, self.name)


class PullbackMetric(MetricField):
    """Right Cauchy-Green field ``F^T F`` of a deformation map."""

    def __init__(self, phi: "DeformationMap"):
        super().__init__(None, phi.domain, f"C[{phi.name}]")
        self.phi = phi

    def component_jets(self, points, order: int):
        x = self.phi.jets(points, order + 1)
        grads = [[xa.diff(A) for A in range(3)] for xa in x]
        rows = [[None] * 3 for _ in range(3)]
        for A in range(3):
            for B in range(A, 3):
                rows[A][B] = sum(grads[a][A] * grads[a][B] for a in range(3))
        return _stack_sym(rows)

    def restricted(self, domain):
        return PullbackMetric(self.phi.restricted(domain))


class DeformationMap:
    """Point map ``(X, Y, Z) -> (x, y, z)`` given by a jet-aware callable."""

    def __init__(self, func: Callable, domain: Optional[Domain] = None, name: str = "map"):
        self._func = func
        self.domain = domain
        self.name = name

    def jets(self, points, order: int):
        points = np.asarray(points, dtype=float)
        if self.domain is not None:
            self.domain.require(points)
        X, Y, Z = Jet.variables(points, order)
        return [_as_jet(v, X) for v in self._func(X, Y, Z)]

    def __call__(self, points) -> np.ndarray:
        return np.stack([j.val for j in self.jets(points, 0)], axis=-1)

    def gradient(self, points) -> np.ndarray:
        """``F[..., a, A] = d phi^a / d X^A``."""
        return np.stack([j.grad for j in self.jets(points, 1)], axis=-2)

    def metric(self) -> PullbackMetric:
        return PullbackMetric(self)

    def restricted(self, domain: Optional[Domain]) -> "DeformationMap":
        return DeformationMap(self._func, domain, self.name)

    def orientation(self, points) -> int:
        """Common sign of det F over ``points``; raises if it changes or vanishes."""
        det = np.linalg.det(self.gradient(points))
        if np.any(np.abs(det) <= SPD_TOL):
            raise SingularMap(f"{self.name}: det F vanishes on the sample")
        signs = np.unique(np.sign(det))
        if len(signs) != 1:
            raise SingularMap(f"{self.name}: orientation changes sign on the sample")
        return int(signs[0])


def identity_map(domain: Optional[Domain] = None) -> DeformationMap:
    return DeformationMap(lambda X, Y, Z: (X, Y, Z), domain, "identity")


def constant_metric(C, domain: Optional[Domain] = None, name: str = "constant") -> MetricField:
    C = np.asarray(C, dtype=float)
    if C.shape != (3, 3):
        raise ValueError("constant metric needs a 3x3 matrix")
    C = _sym(C)
    check_spd(C, name)
    return MetricField(lambda X, Y, Z: C.tolist(), domain, name)


# -- connection and curvature -----------------------------------------------------

def _sample(metric, points, order):
    if isinstance(metric, MetricSample):
        return metric
    return metric.sample(points, order)


def christoffel_from(C: np.ndarray, dC: np.ndarray) -> np.ndarray:
    """``Gamma^C_AB = 1/2 C^CD (C_BD,A + C_AD,B - C_AB,D)`` from arrays."""
    Cinv = np.linalg.inv(C)
    L = (
        np.einsum("...bda->...dab", dC)
        + np.einsum("...adb->...dab", dC)
        - np.einsum("...abd->...dab", dC)
    )
    return 0.5 * np.einsum("...cd,...dab->...cab", Cinv, L, optimize=True)


def christoffel_derivative(C: np.ndarray, dC: np.ndarray, d2C: np.ndarray) -> np.ndarray:
    """``dGamma[..., C, A, B, E] = d_E Gamma^C_AB``."""
    Cinv = np.linalg.inv(C)
    L = (
        np.einsum("...bda->...dab", dC)
        + np.einsum("...adb->...dab", dC)
        - np.einsum("...abd->...dab", dC)
    )
    dL = (
        np.einsum("...bdae->...dabe", d2C)
        + np.einsum("...adbe->...dabe", d2C)
        - np.einsum("...abde->...dabe", d2C)
    )
    dCinv = -np.einsum("...cm,...mne,...nd->...cde", Cinv, dC, Cinv, optimize=True)
    return 0.5 * (
        np.einsum("...cde,...dab->...cabe", dCinv, L, optimize=True)
        + np.einsum("...cd,...dabe->...cabe", Cinv, dL, optimize=True)
    )


def ricci_from(C: np.ndarray, dC: np.ndarray, d2C: np.ndarray) -> np.ndarray:
    """Ricci tensor in the sign convention where ``diag(1+Z^2,1,1)`` has Ric_11(0) = +1.

    This is the negative of
    ``d_C G^C_AB - d_A G^C_CB + G^C_CD G^D_AB - G^C_AD G^D_CB``.
    """
    G = christoffel_from(C, dC)
    dG = christoffel_derivative(C, dC, d2C)
    R = (
        np.einsum("...cabc->...ab", dG)
        - np.einsum("...ccba->...ab", dG)
        + np.einsum("...ccd,...dab->...ab", G, G, optimize=True)
        - np.einsum("...cad,...dcb->...ab", G, G, optimize=True)
    )
    return -_sym(R)


def christoffel(metric, points=None) -> np.ndarray:
    """Christoffel symbols of a metric field, ``Gamma[..., C, A, B]``.

    Raises :class:`SingularMetric` where the metric fails the SPD check and
    :class:`DomainError` outside the metric's declared domain.
    """
    s = _sample(metric, points, 1)
    return christoffel_from(s.C, s.dC)


def ricci(metric, points=None) -> np.ndarray:
    """Ricci curvature of a metric field at ``points``; shape ``(..., 3, 3)``."""
    s = _sample(metric, points, 2)
    return ricci_from(s.C, s.dC, s.d2C)


# -- finite-difference oracles --------------------------------------------------------

def fd_partials(fn: Callable, points, h: float = FD_STEP, second: bool = True):
    """Central-difference first (and second) partials of an array-valued field.

    ``fn(points)`` must return an array of shape ``points.shape[:-1] + T``. Returns
    ``(d, d2)`` with the derivative directions appended as trailing axes.
    """
    p = np.asarray(points, dtype=float)
    eye = np.eye(3) * h
    f0 = fn(p)
    d = np.stack([(fn(p + eye[i]) - fn(p - eye[i])) / (2 * h) for i in range(3)], axis=-1)
    if not second:
        return d, None
    d2 = np.empty(f0.shape + (3, 3))
    for i in range(3):
        d2[..., i, i] = (fn(p + eye[i]) - 2 * f0 + fn(p - eye[i])) / h**2
        for j in range(i + 1, 3):
            v = (
                fn(p + eye[i] + eye[j])
                - fn(p + eye[i] - eye[j])
                - fn(p - eye[i] + eye[j])
                + fn(p - eye[i] - eye[j])
            ) / (4 * h**2)
            d2[..., i, j] = v
            d2[..., j, i] = v
    return d, d2


def fd_sample(metric: MetricField, points, h: float = FD_STEP) -> MetricSample:
    """Metric sample whose partials come from central differences of plain values."""
    fn = metric.restricted(None)
    dC, d2C = fd_partials(fn, points, h)
    p = np.asarray(points, dtype=float)
    return MetricSample(p, fn(p), dC, d2C)


def christoffel_fd(metric: MetricField, points, h: float = FD_STEP) -> np.ndarray:
    s = fd_sample(metric, points, h)
    return christoffel_from(s.C, s.dC)


def ricci_fd(metric: MetricField, points, h: float = FD_STEP) -> np.ndarray:
    s = fd_sample(metric, points, h)
    return ricci_from(s.C, s.dC, s.d2C)


def deformation_gradient_fd(phi: DeformationMap, points, h: float = FD_STEP) -> np.ndarray:
    fn = phi.restricted(None)
    d, _ = fd_partials(fn, points, h, second=False)
    return d


# -- kinematics -------------------------------------------------------------------------

def deformation_gradient(phi: DeformationMap, points) -> np.ndarray:
    """``F[..., a, A] = d phi^a / d X^A`` via first-order jets."""
    return phi.gradient(points)


def right_cauchy_green(phi: DeformationMap, points, chart: ReferenceChart = CARTESIAN) -> np.ndarray:
    """``C = F^T g F`` with a Cartesian (identity) ambient metric.

    ``chart`` describes the reference coordinates of ``points``; it only takes part
    in validation, since the components of ``F^T F`` are already chart components.
    """
    points = np.asarray(points, dtype=float)
    chart.metric(points)
    F = deformation_gradient(phi, points)
    det = np.linalg.det(F)
    if np.any(np.abs(det) <= SPD_TOL):
        raise SingularMap(f"{phi.name}: |det F| <= {SPD_TOL:g}")
    return _sym(np.einsum("...aA,...aB->...AB", F, F))


def _identity_like(C):
    return np.broadcast_to(np.eye(3), np.shape(C)).copy()


def invariants(C, G=None):
    """Principal invariants ``(I1, I2, I3)`` of ``M = G^{-1} C``."""
    C = np.asarray(C, dtype=float)
    G = _identity_like(C) if G is None else np.asarray(G, dtype=float)
    check_spd(C, "C")
    check_spd(G, "G")
    M = np.linalg.solve(G, C)
    I1 = np.trace(M, axis1=-2, axis2=-1)
    I2 = 0.5 * (I1**2 - np.einsum("...ij,...ji->...", M, M))
    I3 = np.linalg.det(C) / np.linalg.det(G)
    return I1, I2, I3


def jacobian_det(F, G=None, g=None):
    """Signed Jacobian ``sqrt(det g / det G) det F``."""
    F = np.asarray(F, dtype=float)
    detG = 1.0 if G is None else np.linalg.det(G)
    detg = 1.0 if g is None else np.linalg.det(g)
    return np.sqrt(detg / detG) * np.linalg.det(F)


def spd_sqrt(C):
    """Symmetric square root ``U`` of an SPD matrix and its inverse.

    Returns
    -------
    U, Uinv : ndarray
        Both symmetric with the shape of ``C``.
    """
    C = _sym(np.asarray(C, dtype=float))
    w, Q = np.linalg.eigh(C)
    if np.any(w <= SPD_TOL):
        raise SingularMetric("spd_sqrt needs a positive definite argument")
    r = np.sqrt(w)
    U = np.einsum("...ik,...k,...jk->...ij", Q, r, Q)
    Uinv = np.einsum("...ik,...k,...jk->...ij", Q, 1.0 / r, Q)
    return _sym(U), _sym(Uinv)


def rotation_2d(theta) -> np.ndarray:
    """``[[cos, sin], [-sin, cos]]``, the rotation used in the in-plane decomposition."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)


def principal_decomposition_2x2(c11, c12, c22):
    """Split an SPD 2x2 block as ``R(theta) diag(l1sq, l2sq) R(theta)^T``.

    ``R(theta) = [[cos, sin], [-sin, cos]]``; ``l1sq >= l2sq`` and
    ``theta`` lies in ``(-pi/2, pi/2]``, with ``theta = 0`` for an isotropic block.

    Returns
    -------
    l1sq, l2sq, theta : ndarray
    """
    c11, c12, c22 = (np.asarray(v, dtype=float) for v in (c11, c12, c22))
    if np.any(c11 <= SPD_TOL) or np.any(c11 * c22 - c12**2 <= SPD_TOL):
        raise NotSPD("2x2 block is not positive definite")
    mean = 0.5 * (c11 + c22)
    half = 0.5 * (c11 - c22)
    rad = np.hypot(half, c12)
    theta = 0.5 * np.arctan2(-2.0 * c12 + 0.0, c11 - c22)
    theta = np.where(theta <= -np.pi / 2, theta + np.pi, theta)
    theta = np.where(rad == 0.0, 0.0, theta)
    return mean + rad, mean - rad, theta


def raise_indices(C, G=None):
    """Contravariant ``C^AB = G^AM G^BN C_MN`` and ``B^AB`` (the inverse of ``C_AB``)."""
    C = np.asarray(C, dtype=float)
    G = _identity_like(C) if G is None else np.asarray(G, dtype=float)
    check_spd(C, "C")
    check_spd(G, "G")
    Ginv = np.linalg.inv(G)
    Csharp = _sym(Ginv @ C @ Ginv)
    Bsharp = _sym(np.linalg.inv(C))
    return Csharp, Bsharp


def polar(F):
    """Right polar decomposition ``F = R U``."""
    F = np.asarray(F, dtype=float)
    C = _sym(np.swapaxes(F, -1, -2) @ F)
    U, Uinv = spd_sqrt(C)
    return F @ Uinv, U


def to_points(*coords: Sequence[float]) -> np.ndarray:
    """Stack coordinate arrays into a ``(..., 3)`` point array."""
    return np.stack(np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords]), axis=-1)
