"""Randomized isotropic materials and constitutive stresses for fiber-reinforced solids.

Materials are polynomials of total degree <= 3 in the principal invariants with
coefficients drawn uniformly from [-1, 1]. Sampling many of them stands in for the
"for every material" quantifier in universality statements.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .diffgeo import check_spd, invariants, raise_indices
from .errors import InvalidParams, NotUnit

DEGREE = 3


def _exponents(degree: int):
    return [
        e
        for d in range(degree + 1)
        for e in sorted((e for e in itertools.product(range(d + 1), repeat=3) if sum(e) == d), reverse=True)
    ]


EXPONENTS = np.array(_exponents(DEGREE))  # (20, 3)


class MonomialBasis:
    """Monomials ``I1^a I2^b I3^c`` and their partial derivatives at fixed invariants.

    Derivative tables are cached, so many polynomials evaluated at the same
    invariants share the work.
    """

    def __init__(self, I1, I2, I3):
        I = [np.asarray(v, dtype=float) for v in (I1, I2, I3)]
        self.shape = np.broadcast_shapes(*(v.shape for v in I))
        # powers[axis][n] = I_axis ** n
        self._powers = []
        for v in I:
            v = np.broadcast_to(v, self.shape)
            self._powers.append([np.ones(self.shape), v, v * v, v * v * v])
        self._cache = {}

    def derivative(self, orders) -> np.ndarray:
        """``d^orders`` of every monomial, stacked on a leading axis of length 20."""
        key = tuple(int(o) for o in orders)
        if key not in self._cache:
            out = np.zeros((len(EXPONENTS),) + self.shape)
            for k, e in enumerate(EXPONENTS):
                if np.any(e < key):
                    continue
                scale = 1.0
                term = None
                for axis in range(3):
                    n, o = int(e[axis]), key[axis]
                    scale *= math.perm(n, o)
                    if n - o:
                        p = self._powers[axis][n - o]
                        term = p if term is None else term * p
                out[k] = scale if term is None else scale * term
            self._cache[key] = out
        return self._cache[key]


@dataclass(frozen=True)
class Poly3:
    """Trivariate polynomial ``sum_k c_k I1^a I2^b I3^c`` of total degree <= 3."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (len(EXPONENTS),):
            raise InvalidParams(f"Poly3 needs {len(EXPONENTS)} coefficients, got {c.shape}")
        object.__setattr__(self, "coefficients", c)

    def __call__(self, I1, I2, I3):
        return self._eval(I1, I2, I3, (0, 0, 0))

    def _eval(self, I1, I2, I3, orders, basis: "MonomialBasis" = None):
        basis = MonomialBasis(I1, I2, I3) if basis is None else basis
        return np.tensordot(self.coefficients, basis.derivative(orders), axes=1)

    def gradient(self, I1, I2, I3, basis: "MonomialBasis" = None) -> np.ndarray:
        """Partials with respect to ``(I1, I2, I3)`` on a trailing axis."""
        basis = MonomialBasis(I1, I2, I3) if basis is None else basis
        return np.stack([self._eval(I1, I2, I3, np.eye(3, dtype=int)[i], basis) for i in range(3)], axis=-1)

    def hessian(self, I1, I2, I3, basis: "MonomialBasis" = None) -> np.ndarray:
        """Second partials, exactly symmetric."""
        basis = MonomialBasis(I1, I2, I3) if basis is None else basis
        shape = basis.shape
        H = np.empty(shape + (3, 3))
        for i in range(3):
            for j in range(i, 3):
                o = np.zeros(3, dtype=int)
                o[i] += 1
                o[j] += 1
                H[..., i, j] = H[..., j, i] = self._eval(I1, I2, I3, o, basis)
        return H

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Poly3":
        return cls(rng.uniform(-1.0, 1.0, len(EXPONENTS)))

    @classmethod
    def monomial(cls, a: int, b: int, c: int, scale: float = 1.0) -> "Poly3":
        coef = np.zeros(len(EXPONENTS))
        coef[[tuple(e) for e in EXPONENTS.tolist()].index((a, b, c))] = scale
        return cls(coef)

    @classmethod
    def constant(cls, value: float) -> "Poly3":
        return cls.monomial(0, 0, 0, value)


@dataclass(frozen=True)
class ResponseTriple:
    """Cauchy-elastic response functions ``(chi, xi, eta)`` of the invariants."""

    chi: Poly3
    xi: Poly3
    eta: Poly3
    seed: Union[int, None] = None

    @classmethod
    def random(cls, seed: int) -> "ResponseTriple":
        rng = np.random.default_rng(seed)
        return cls(Poly3.random(rng), Poly3.random(rng), Poly3.random(rng), seed)

    def response(self, I1, I2, I3, basis: MonomialBasis = None):
        basis = MonomialBasis(I1, I2, I3) if basis is None else basis
        return tuple(p._eval(I1, I2, I3, (0, 0, 0), basis) for p in (self.chi, self.xi, self.eta))

    def response_gradient(self, I1, I2, I3, basis: MonomialBasis = None):
        """``(d chi/dI_j, d xi/dI_j, d eta/dI_j)``, each with ``j`` on a trailing axis."""
        basis = MonomialBasis(I1, I2, I3) if basis is None else basis
        return tuple(p.gradient(I1, I2, I3, basis) for p in (self.chi, self.xi, self.eta))

    def to_json(self) -> dict:
        coefs = np.concatenate([p.coefficients for p in (self.chi, self.xi, self.eta)])
        return {"kind": "response", "degree": DEGREE, "seed": self.seed, "coefficients": coefs.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ResponseTriple":
        c = np.asarray(d["coefficients"], dtype=float)
        n = len(EXPONENTS)
        if d.get("kind") != "response" or c.shape != (3 * n,):
            raise InvalidParams("not a response-triple descriptor")
        return cls(Poly3(c[:n]), Poly3(c[n : 2 * n]), Poly3(c[2 * n :]), d.get("seed"))


@dataclass(frozen=True)
class EnergyFunction:
    """Hyperelastic stored energy ``W(I1, I2, I3)``."""

    W: Poly3
    seed: Union[int, None] = None

    @classmethod
    def random(cls, seed: int) -> "EnergyFunction":
        return cls(Poly3.random(np.random.default_rng(seed)), seed)

    def __call__(self, I1, I2, I3):
        return self.W(I1, I2, I3)

    def gradient(self, I1, I2, I3, basis: MonomialBasis = None):
        return self.W.gradient(I1, I2, I3, basis)

    def hessian(self, I1, I2, I3, basis: MonomialBasis = None):
        return self.W.hessian(I1, I2, I3, basis)

    def response(self, I1, I2, I3, basis: MonomialBasis = None):
        """Equivalent response triple: ``chi = 2(W1 + W2 I1)``, ``xi = -2 W2``, ``eta = 2 W3 I3``."""
        W = self.gradient(I1, I2, I3, basis)
        return 2 * (W[..., 0] + W[..., 1] * I1), -2 * W[..., 1], 2 * W[..., 2] * I3

    def response_gradient(self, I1, I2, I3, basis: MonomialBasis = None):
        basis = MonomialBasis(I1, I2, I3) if basis is None else basis
        W = self.gradient(I1, I2, I3, basis)
        H = self.hessian(I1, I2, I3, basis)
        e1 = np.array([1.0, 0.0, 0.0])
        e3 = np.array([0.0, 0.0, 1.0])
        I1 = np.asarray(I1, dtype=float)[..., None]
        I3 = np.asarray(I3, dtype=float)[..., None]
        dchi = 2 * (H[..., 0, :] + H[..., 1, :] * I1 + W[..., 1:2] * e1)
        dxi = -2 * H[..., 1, :]
        deta = 2 * (H[..., 2, :] * I3 + W[..., 2:3] * e3)
        return dchi, dxi, deta

    def to_json(self) -> dict:
        return {"kind": "energy", "degree": DEGREE, "seed": self.seed, "coefficients": self.W.coefficients.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "EnergyFunction":
        if d.get("kind") != "energy":
            raise InvalidParams("not an energy descriptor")
        return cls(Poly3(d["coefficients"]), d.get("seed"))


Material = Union[ResponseTriple, EnergyFunction]


def material_from_json(d: dict) -> Material:
    return {"response": ResponseTriple, "energy": EnergyFunction}[d["kind"]].from_json(d)


def sample_materials(count: int, seed: int, kind: str = "response") -> list:
    """``count`` materials seeded ``seed + k`` for ``k = 0 .. count-1``."""
    cls = {"response": ResponseTriple, "energy": EnergyFunction}[kind]
    return [cls.random(seed + k) for k in range(count)]


def _identity_like(C):
    return np.broadcast_to(np.eye(3), np.shape(C)).copy()


def sbar_cauchy(C, G=None, r: Material = None) -> np.ndarray:
    """Constitutive stress ``chi G# + xi C# + eta B#``."""
    C = np.asarray(C, dtype=float)
    G = _identity_like(C) if G is None else np.asarray(G, dtype=float)
    I1, I2, I3 = invariants(C, G)
    chi, xi, eta = r.response(I1, I2, I3)
    Csharp, Bsharp = raise_indices(C, G)
    Gsharp = np.linalg.inv(G)
    S = chi[..., None, None] * Gsharp + xi[..., None, None] * Csharp + eta[..., None, None] * Bsharp
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def sbar_hyper(C, G=None, w: EnergyFunction = None, form: str = "reduced") -> np.ndarray:
    """Hyperelastic constitutive stress.

    ``form="reduced"``: ``2(W1 + W2 I1) G# - 2 W2 C# + 2 W3 I3 B#``.
    ``form="unreduced"``: ``2 W1 G# + 2(W2 I2 + W3 I3) B# - 2 W2 I3 B2#``.
    """
    C = np.asarray(C, dtype=float)
    G = _identity_like(C) if G is None else np.asarray(G, dtype=float)
    check_spd(C, "C")
    I1, I2, I3 = invariants(C, G)
    W = w.gradient(I1, I2, I3)
    W1, W2, W3 = (W[..., i][..., None, None] for i in range(3))
    Csharp, Bsharp = raise_indices(C, G)
    Gsharp = np.linalg.inv(G)
    I1, I2, I3 = (v[..., None, None] for v in (I1, I2, I3))
    if form == "reduced":
        S = 2 * (W1 + W2 * I1) * Gsharp - 2 * W2 * Csharp + 2 * W3 * I3 * Bsharp
    elif form == "unreduced":
        B2sharp = Bsharp @ G @ Bsharp
        S = 2 * W1 * Gsharp + 2 * (W2 * I2 + W3 * I3) * Bsharp - 2 * W2 * I3 * B2sharp
    else:
        raise ValueError(f"unknown form {form!r}")
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def full_second_pk(Sbar, T, N) -> np.ndarray:
    """``S = T N (x) N + Sbar`` for a unit fiber direction ``N``."""
    N = np.asarray(N, dtype=float)
    if abs(float(N @ N) - 1.0) > 1e-12:
        raise NotUnit(f"fiber direction has |N|^2 = {float(N @ N)!r}")
    T = np.asarray(T, dtype=float)[..., None, None]
    return np.asarray(Sbar, dtype=float) + T * np.outer(N, N)
