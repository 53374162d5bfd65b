"""Catalog of universal deformation families for Z-fiber-reinforced solids.

* ``z0``: homogeneous maps ``x = a X`` whose third column of ``a`` is a unit vector.
* ``z1``: bending about the Y axis with shear and stretch, strain depending on Z only.
* ``z2``: generalized helical bending with the angle depending on X and Y.
* ``5z``: annular-wedge inflation/bending/shear with constant invariants, evaluated
  in Cartesian coordinates on a wedge with X > 0.

Closed-form strains are the ``F^T F`` of the displayed maps; they serve as oracles
for the generic jet-based kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import jet as J
from .diffgeo import DeformationMap, Domain, MetricField, deformation_gradient
from .errors import DomainConflict, InvalidParams

KINDS = ("z0", "z1", "z2", "5z")
OFFSET_TOL = 1e-6
UNIT_TOL = 1e-12


def _nonzero(value: float, name: str):
    if not np.isfinite(value):
        raise InvalidParams(f"{name} must be finite")
    if value == 0.0:
        raise InvalidParams(f"{name} must be nonzero")


def _finite(values, what):
    if not np.all(np.isfinite(np.asarray(values, dtype=float))):
        raise InvalidParams(f"{what} must be finite numbers")


def _offset_clear(offset: float, domain: Optional[Domain], name: str):
    """Require ``Z + offset`` to keep one sign with magnitude >= OFFSET_TOL on the domain."""
    if domain is None:
        return
    z0, z1 = domain.bounds[4], domain.bounds[5]
    lo, hi = z0 + offset, z1 + offset
    if lo * hi <= 0 or min(abs(lo), abs(hi)) < OFFSET_TOL:
        raise DomainConflict(
            f"Z + {name} vanishes on Z in [{z0}, {z1}] ({name} = {offset}); the map is singular there"
        )


@dataclass(frozen=True)
class FamilyZ0Params:
    """Homogeneous map ``x = a X`` with ``det a > 0`` and a unit third column."""

    a: tuple

    kind = "z0"

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.shape != (3, 3):
            raise InvalidParams("a must be a 3x3 matrix")
        _finite(a, "a")
        if abs(float(a[:, 2] @ a[:, 2]) - 1.0) > UNIT_TOL:
            raise InvalidParams("a13^2 + a23^2 + a33^2 must equal 1")
        if np.linalg.det(a) <= 0:
            raise InvalidParams("det a must be positive")
        object.__setattr__(self, "a", tuple(map(tuple, a.tolist())))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.a)

    def validate(self, domain: Optional[Domain]) -> None:
        pass

    def to_json(self) -> dict:
        return {"family": "z0", "params": {"a": [list(r) for r in self.a]}}


@dataclass(frozen=True)
class _EightParams:
    C: tuple

    def __post_init__(self):
        C = tuple(float(c) for c in self.C)
        if len(C) != 8:
            raise InvalidParams(f"{self.kind} needs parameters C1..C8")
        _finite(C, "C1..C8")
        object.__setattr__(self, "C", C)
        self._check()

    def __getitem__(self, i: int) -> float:
        """1-based access: ``p[1]`` is C1."""
        return self.C[i - 1]

    def to_json(self) -> dict:
        return {"family": self.kind, "params": {f"C{i + 1}": c for i, c in enumerate(self.C)}}


class FamilyZ1Params(_EightParams):
    """``x = (Z+C4) sin(C1(X+C5)) + C6``, ``y = C2 X + C3 Y + C7``, ``z = (Z+C4) cos(C1(X+C5)) + C8``."""

    kind = "z1"

    def _check(self):
        _nonzero(self[1], "C1")
        _nonzero(self[3], "C3")

    def validate(self, domain):
        _offset_clear(self[4], domain, "C4")


class FamilyZ2Params(_EightParams):
    """``x = (Z+C5) sin(C1 X + C3 Y + C4) + C6``, ``y = C2 X + C7``, ``z = (Z+C5) cos(...) + C8``."""

    kind = "z2"

    def _check(self):
        _nonzero(self[2], "C2")
        _nonzero(self[3], "C3")

    def validate(self, domain):
        _offset_clear(self[5], domain, "C5")


@dataclass(frozen=True)
class Family5ZParams:
    """``r = C1 R``, ``theta = C2 log R + s Theta / C1^2 + C3``, ``z = Z + C4``."""

    C: tuple
    sign: int = 1

    kind = "5z"

    def __post_init__(self):
        C = tuple(float(c) for c in self.C)
        if len(C) != 4:
            raise InvalidParams("5z needs parameters C1..C4")
        _finite(C, "C1..C4")
        _nonzero(C[0], "C1")
        if self.sign not in (1, -1):
            raise InvalidParams("sign must be +1 or -1")
        object.__setattr__(self, "C", C)

    def __getitem__(self, i: int) -> float:
        return self.C[i - 1]

    def validate(self, domain):
        if domain is None:
            return
        x0 = domain.bounds[0]
        if x0 <= 0:
            raise DomainConflict("5z wedge needs X > 0 on the domain (principal angle branch)")
        if x0 < OFFSET_TOL:
            raise DomainConflict("5z wedge needs R >= 1e-6 on the domain")

    def to_json(self) -> dict:
        return {"family": "5z", "params": {f"C{i + 1}": c for i, c in enumerate(self.C)}, "sign": self.sign}


FamilyParams = Union[FamilyZ0Params, FamilyZ1Params, FamilyZ2Params, Family5ZParams]


def params_from_json(spec: dict) -> FamilyParams:
    """Build validated parameters from ``{family, params, sign?}``; unknown keys are rejected."""
    if not isinstance(spec, dict):
        raise InvalidParams("family spec must be a JSON object")
    extra = set(spec) - {"family", "params", "sign"}
    if extra:
        raise InvalidParams(f"unknown keys in family spec: {sorted(extra)}")
    kind = str(spec.get("family", "")).lower()
    if kind not in KINDS:
        raise InvalidParams(f"family must be one of {KINDS}, got {spec.get('family')!r}")
    params = spec.get("params")
    if not isinstance(params, dict):
        raise InvalidParams("params must be an object")
    if "sign" in spec and kind != "5z":
        raise InvalidParams("sign only applies to family 5z")
    if kind == "z0":
        if set(params) != {"a"}:
            raise InvalidParams("z0 params must be exactly {'a': 3x3 matrix}")
        return FamilyZ0Params(params["a"])
    n = 4 if kind == "5z" else 8
    names = [f"C{i + 1}" for i in range(n)]
    extra = set(params) - set(names)
    if extra:
        raise InvalidParams(f"unknown parameters {sorted(extra)}")
    try:
        C = [float(params.get(k, 0.0)) for k in names]
    except (TypeError, ValueError) as exc:
        raise InvalidParams(f"parameters must be numbers: {exc}") from None
    if kind == "z1":
        return FamilyZ1Params(C)
    if kind == "z2":
        return FamilyZ2Params(C)
    return Family5ZParams(C, int(spec.get("sign", 1)))


# -- maps ------------------------------------------------------------------------

def _map_function(p: FamilyParams):
    if p.kind == "z0":
        a = p.matrix
        return lambda X, Y, Z: tuple(a[i, 0] * X + a[i, 1] * Y + a[i, 2] * Z for i in range(3))
    if p.kind == "z1":
        def f(X, Y, Z):
            t = p[1] * (X + p[5])
            return ((Z + p[4]) * J.sin(t) + p[6], p[2] * X + p[3] * Y + p[7], (Z + p[4]) * J.cos(t) + p[8])
        return f
    if p.kind == "z2":
        def f(X, Y, Z):
            t = p[1] * X + p[3] * Y + p[4]
            return ((Z + p[5]) * J.sin(t) + p[6], p[2] * X + p[7], (Z + p[5]) * J.cos(t) + p[8])
        return f

    def f(X, Y, Z):
        R = J.sqrt(X * X + Y * Y)
        theta = p[2] * J.log(R) + p.sign * J.arctan(Y / X) / p[1] ** 2 + p[3]
        return (p[1] * R * J.cos(theta), p[1] * R * J.sin(theta), Z + p[4])
    return f


def default_domain(kind: str, n: int = 21) -> Domain:
    return Domain.wedge(n) if kind == "5z" else Domain.unit_box(n)


def make_family(kind: str, params, domain: Optional[Domain] = None) -> DeformationMap:
    """Deformation map of a family member, validated against ``domain``.

    ``params`` may be a params record or a raw sequence (``a`` for z0, ``C1..``
    for the others; for 5z a ``(C, sign)`` pair is also accepted).
    """
    p = as_params(kind, params)
    p.validate(domain)
    return DeformationMap(_map_function(p), domain, p.kind)


def as_params(kind: str, params) -> FamilyParams:
    if not isinstance(params, (FamilyZ0Params, FamilyZ1Params, FamilyZ2Params, Family5ZParams)):
        kind = kind.lower()
        if kind == "z0":
            params = FamilyZ0Params(params)
        elif kind == "z1":
            params = FamilyZ1Params(tuple(params) + (0.0,) * (8 - len(params)))
        elif kind == "z2":
            params = FamilyZ2Params(tuple(params) + (0.0,) * (8 - len(params)))
        elif kind == "5z":
            if len(params) == 2 and np.ndim(params[0]) == 1:
                params = Family5ZParams(tuple(params[0]), int(params[1]))
            else:
                params = Family5ZParams(tuple(params) + (0.0,) * (4 - len(params)))
        else:
            raise InvalidParams(f"unknown family {kind!r}")
    if params.kind != kind.lower():
        raise InvalidParams(f"params are for family {params.kind}, not {kind}")
    return params


# -- closed forms -------------------------------------------------------------------

def _closed_form_rows(p: FamilyParams, X, Y, Z, cartesian: bool = True):
    """Nested 3x3 closed-form strain; works for arrays and jets alike."""
    if p.kind == "z0":
        return (p.matrix.T @ p.matrix).tolist()
    if p.kind == "z1":
        rho = Z + p[4]
        return [
            [p[2] ** 2 + p[1] ** 2 * rho * rho, p[2] * p[3], 0.0],
            [p[2] * p[3], p[3] ** 2, 0.0],
            [0.0, 0.0, 1.0],
        ]
    if p.kind == "z2":
        rho2 = (Z + p[5]) * (Z + p[5])
        return [
            [p[2] ** 2 + p[1] ** 2 * rho2, p[1] * p[3] * rho2, 0.0],
            [p[1] * p[3] * rho2, p[3] ** 2 * rho2, 0.0],
            [0.0, 0.0, 1.0],
        ]
    R = J.sqrt(X * X + Y * Y)
    crr = p[1] ** 2 * (1 + p[2] ** 2)
    crt = p.sign * p[2] * R
    ctt = R * R / p[1] ** 2
    if not cartesian:
        return [[crr, crt, 0.0], [crt, ctt, 0.0], [0.0, 0.0, 1.0]]
    # Jacobian of (R, Theta) with respect to (X, Y)
    dR = (X / R, Y / R)
    dT = (-Y / (R * R), X / (R * R))
    rows = [[None] * 3 for _ in range(3)]
    for i in range(2):
        for j in range(2):
            rows[i][j] = (
                crr * dR[i] * dR[j] + crt * (dR[i] * dT[j] + dT[i] * dR[j]) + ctt * dT[i] * dT[j]
            )
    rows[0][2] = rows[1][2] = rows[2][0] = rows[2][1] = 0.0
    rows[2][2] = 1.0
    return rows


def closed_form_C(kind: str, params, points, cartesian: bool = False) -> np.ndarray:
    """Closed-form right Cauchy-Green strain at Cartesian ``points``.

    For ``5z`` the cylindrical components ``(R, Theta, Z)`` are returned unless
    ``cartesian`` is true; the other families are always Cartesian.
    """
    p = as_params(kind, params)
    pts = np.asarray(points, dtype=float)
    X, Y, Z = pts[..., 0], pts[..., 1], pts[..., 2]
    rows = _closed_form_rows(p, X, Y, Z, cartesian or p.kind != "5z")
    shape = pts.shape[:-1]
    return np.stack(
        [np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in r], -1) for r in rows], -2
    )


def closed_form_metric(kind: str, params, domain: Optional[Domain] = None) -> MetricField:
    """Closed-form strain as a Cartesian :class:`MetricField`."""
    p = as_params(kind, params)
    p.validate(domain)
    return MetricField(lambda X, Y, Z: _closed_form_rows(p, X, Y, Z, True), domain, f"C[{p.kind}]")


def closed_form_J(kind: str, params, points) -> np.ndarray:
    p = as_params(kind, params)
    pts = np.asarray(points, dtype=float)
    Z = pts[..., 2]
    if p.kind == "z0":
        return np.full(Z.shape, np.linalg.det(p.matrix))
    if p.kind == "z1":
        return p[1] * p[3] * (p[4] + Z)
    if p.kind == "z2":
        return -p[2] * p[3] * (p[5] + Z)
    return np.full(Z.shape, float(p.sign))


def cylindrical_points(points) -> np.ndarray:
    """``(X, Y, Z) -> (R, Theta, Z)`` on the principal branch."""
    p = np.asarray(points, dtype=float)
    return np.stack([np.hypot(p[..., 0], p[..., 1]), np.arctan2(p[..., 1], p[..., 0]), p[..., 2]], -1)


# -- fibers ---------------------------------------------------------------------------

@dataclass
class FiberImage:
    points: np.ndarray
    straightness_defect: float
    speed_defect: float


def fiber_image(kind: str, params, base, samples: int = 101, z_range=(0.0, 1.0)) -> FiberImage:
    """Image of the straight fiber ``{(X0, Y0, Z)}`` with straightness and speed defects.

    Straightness is the largest distance of a sampled image point from the chord
    between the endpoints; speed is the largest ``| |d phi/dZ| - 1 |``.
    """
    p = as_params(kind, params)
    if samples < 2:
        raise InvalidParams("fiber needs at least 2 samples")
    Zs = np.linspace(z_range[0], z_range[1], samples)
    pts = np.stack([np.full(samples, float(base[0])), np.full(samples, float(base[1])), Zs], -1)
    phi = DeformationMap(_map_function(p), None, p.kind)
    x = phi(pts)
    chord = x[-1] - x[0]
    length = np.linalg.norm(chord)
    rel = x - x[0]
    if length > 0:
        u = chord / length
        perp = rel - np.outer(rel @ u, u)
        straight = float(np.max(np.linalg.norm(perp, axis=-1)))
    else:
        straight = float(np.max(np.linalg.norm(rel, axis=-1)))
    F = deformation_gradient(phi, pts)
    speed = float(np.max(np.abs(np.linalg.norm(F[..., :, 2], axis=-1) - 1.0)))
    return FiberImage(x, straight, speed)


# -- random draws -------------------------------------------------------------------------

def _signed(rng, lo, hi):
    return rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi)


def random_params(kind: str, rng: np.random.Generator) -> FamilyParams:
    """Valid random parameters on the family's default domain."""
    kind = kind.lower()
    if kind == "z0":
        while True:
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            a = np.column_stack([rng.uniform(-1.5, 1.5, 3), rng.uniform(-1.5, 1.5, 3), n])
            d = np.linalg.det(a)
            if abs(d) > 0.2:
                if d < 0:
                    a[:, 0] *= -1
                return FamilyZ0Params(a)
    if kind == "z1":
        C = [_signed(rng, 0.5, 2.0), rng.uniform(-1, 1), _signed(rng, 0.5, 2.0), rng.uniform(0.5, 2.0)]
        C += list(rng.uniform(-1, 1, 4))
        return FamilyZ1Params(C)
    if kind == "z2":
        C = [rng.uniform(-1, 1), _signed(rng, 0.5, 2.0), _signed(rng, 0.5, 2.0), rng.uniform(-1, 1)]
        C += [rng.uniform(0.5, 2.0)] + list(rng.uniform(-1, 1, 3))
        return FamilyZ2Params(C)
    if kind == "5z":
        C = [rng.uniform(0.5, 2.0), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)]
        return Family5ZParams(C, int(rng.choice([-1, 1])))
    raise InvalidParams(f"unknown family {kind!r}")


FIGURE_PARAMS = {
    "z1": FamilyZ1Params([2.0, -1.0, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
    "z2": FamilyZ2Params([0.25, -1.25, 1.2, 0.0, 0.0, 0.0, 0.0, 0.0]),
}
