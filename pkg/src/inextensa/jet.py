"""Truncated multivariate Taylor arithmetic ("jets"), vectorized over numpy arrays.

A :class:`Jet` stores the Taylor coefficients ``c_alpha = d^alpha f / alpha!`` of a
scalar field up to a fixed total order in ``nvars`` variables. Every coefficient is
an ndarray with the same trailing shape, so one jet carries a whole grid of points.
Order 2 gives exact-to-roundoff first and second derivatives (hyper-dual numbers);
order 3 is used for maps, whose pulled-back metric needs third derivatives.

The module-level functions (:func:`sin`, :func:`sqrt`, ...) accept jets, ndarrays
or floats, so closed-form field expressions are written once and evaluated either
plainly (finite-difference oracles) or with derivatives.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _tables(nvars: int, order: int):
    monos = [
        m
        for deg in range(order + 1)
        for m in sorted(
            (m for m in itertools.product(range(deg + 1), repeat=nvars) if sum(m) == deg),
            reverse=True,
        )
    ]
    index = {m: i for i, m in enumerate(monos)}
    # for each left factor i: (partner indices j, product indices k)
    pairs = []
    for i, a in enumerate(monos):
        js, ks = [], []
        for j, b in enumerate(monos):
            s = tuple(x + y for x, y in zip(a, b))
            if sum(s) <= order:
                js.append(j)
                ks.append(index[s])
        pairs.append((np.array(js), np.array(ks)))
    return monos, index, pairs


class Jet:
    """Scalar field truncated at total order ``order`` in ``nvars`` variables."""

    __array_ufunc__ = None  # make ndarray (op) Jet defer to the Jet methods

    def __init__(self, coef: np.ndarray, order: int, nvars: int = 3):
        self.coef = coef
        self.order = order
        self.nvars = nvars

    # -- construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, order: int, nvars: int = 3) -> "Jet":
        value = np.asarray(value, dtype=float)
        monos, _, _ = _tables(nvars, order)
        coef = np.zeros((len(monos),) + value.shape)
        coef[0] = value
        return cls(coef, order, nvars)

    @classmethod
    def variable(cls, value, axis: int, order: int, nvars: int = 3) -> "Jet":
        jet = cls.constant(value, order, nvars)
        if order >= 1:
            e = [0] * nvars
            e[axis] = 1
            _, index, _ = _tables(nvars, order)
            jet.coef[index[tuple(e)]] = 1.0
        return jet

    @classmethod
    def variables(cls, points: np.ndarray, order: int) -> tuple["Jet", "Jet", "Jet"]:
        """Seed X, Y, Z jets from an array of points with shape (..., 3)."""
        points = np.asarray(points, dtype=float)
        return tuple(cls.variable(points[..., i], i, order) for i in range(3))

    # -- accessors ----------------------------------------------------------
    @property
    def shape(self):
        return self.coef.shape[1:]

    @property
    def val(self) -> np.ndarray:
        return self.coef[0]

    def _c(self, mono) -> np.ndarray:
        _, index, _ = _tables(self.nvars, self.order)
        return self.coef[index[tuple(mono)]]

    @property
    def grad(self) -> np.ndarray:
        """First partials stacked on the last axis: shape (..., nvars)."""
        if self.order < 1:
            raise ValueError("jet of order 0 carries no derivatives")
        out = []
        for i in range(self.nvars):
            e = [0] * self.nvars
            e[i] = 1
            out.append(self._c(e))
        return np.stack(out, axis=-1)

    @property
    def hess(self) -> np.ndarray:
        """Second partials on the last two axes: shape (..., nvars, nvars)."""
        if self.order < 2:
            raise ValueError("jet of order < 2 carries no second derivatives")
        n = self.nvars
        out = np.empty(self.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                e = [0] * n
                e[i] += 1
                e[j] += 1
                v = self._c(e) * (2.0 if i == j else 1.0)
                out[..., i, j] = v
                out[..., j, i] = v
        return out

    def diff(self, axis: int) -> "Jet":
        """Partial derivative along ``axis``; the result has order one lower."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        monos, index, _ = _tables(self.nvars, self.order)
        lower, _, _ = _tables(self.nvars, self.order - 1)
        coef = np.empty((len(lower),) + self.shape)
        for k, m in enumerate(lower):
            up = list(m)
            up[axis] += 1
            coef[k] = (m[axis] + 1) * self.coef[index[tuple(up)]]
        return Jet(coef, self.order - 1, self.nvars)

    def truncate(self, order: int) -> "Jet":
        if order >= self.order:
            return self
        n = len(_tables(self.nvars, order)[0])
        return Jet(self.coef[:n].copy(), order, self.nvars)

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.order != self.order or other.nvars != self.nvars:
                order = min(self.order, other.order)
                return other.truncate(order)
            return other
        return Jet.constant(other, self.order, self.nvars)

    def _match(self, other):
        other = self._coerce(other)
        me = self
        if other.order < me.order:
            me = me.truncate(other.order)
        return me, other

    def __neg__(self):
        return Jet(-self.coef, self.order, self.nvars)

    def __pos__(self):
        return self

    def __add__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            shape = np.broadcast_shapes(self.shape, other.shape)
            coef = np.array(np.broadcast_to(self.coef, self.coef.shape[:1] + shape))
            coef[0] += other
            return Jet(coef, self.order, self.nvars)
        a, b = self._match(other)
        return Jet(a.coef + b.coef, a.order, a.nvars)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coef * np.asarray(other, dtype=float), self.order, self.nvars)
        a, b = self._match(other)
        _, _, pairs = _tables(a.nvars, a.order)
        shape = np.broadcast_shapes(a.shape, b.shape)
        out = np.zeros((a.coef.shape[0],) + shape)
        for i, (js, ks) in enumerate(pairs):
            out[ks] += a.coef[i] * b.coef[js]
        return Jet(out, a.order, a.nvars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coef / np.asarray(other, dtype=float), self.order, self.nvars)
        return self * other._power(-1.0)

    def __rtruediv__(self, other):
        return self._power(-1.0) * other

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)) and p >= 0:
            out = Jet.constant(np.ones(self.shape), self.order, self.nvars)
            base = self
            n = int(p)
            while n:
                if n & 1:
                    out = out * base
                n >>= 1
                if n:
                    base = base * base
            return out
        return self._power(float(p))

    # -- composition with univariate functions ------------------------------
    def compose(self, derivs) -> "Jet":
        """f(self) given ``derivs[k] = f^(k)(self.val)`` for k = 0..order."""
        h = Jet(self.coef.copy(), self.order, self.nvars)
        h.coef[0] = 0.0
        out = Jet.constant(derivs[0], self.order, self.nvars)
        power = None
        for k in range(1, self.order + 1):
            power = h if power is None else power * h
            out = out + power * (derivs[k] / math.factorial(k))
        return out

    def _power(self, p: float) -> "Jet":
        a = self.val
        derivs = []
        c = 1.0
        for k in range(self.order + 1):
            derivs.append(c * a ** (p - k))
            c *= p - k
        return self.compose(derivs)

    def __repr__(self):
        return f"Jet(order={self.order}, nvars={self.nvars}, shape={self.shape})"


# -- elementary functions ---------------------------------------------------

def sin(x):
    if isinstance(x, Jet):
        s, c = np.sin(x.val), np.cos(x.val)
        return x.compose([(s, c, -s, -c)[k % 4] for k in range(x.order + 1)])
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        s, c = np.sin(x.val), np.cos(x.val)
        return x.compose([(c, -s, -c, s)[k % 4] for k in range(x.order + 1)])
    return np.cos(x)


def exp(x):
    if isinstance(x, Jet):
        e = np.exp(x.val)
        return x.compose([e] * (x.order + 1))
    return np.exp(x)


def log(x):
    if isinstance(x, Jet):
        a = x.val
        derivs = [np.log(a)]
        for k in range(1, x.order + 1):
            derivs.append((-1) ** (k - 1) * math.factorial(k - 1) / a**k)
        return x.compose(derivs)
    return np.log(x)


def sqrt(x):
    if isinstance(x, Jet):
        return x._power(0.5)
    return np.sqrt(x)


def arctan(x):
    if isinstance(x, Jet):
        t = np.arctan(x.val)
        c = np.cos(t)
        derivs = [t]
        # d^n/dx^n atan(x) = (n-1)! cos^n(t) sin(n (t + pi/2)),  t = atan(x)
        for n in range(1, x.order + 1):
            derivs.append(math.factorial(n - 1) * c**n * np.sin(n * (t + np.pi / 2)))
        return x.compose(derivs)
    return np.arctan(x)


def value(x) -> np.ndarray:
    """Plain value of a jet, or the argument itself as an array."""
    return x.val if isinstance(x, Jet) else np.asarray(x, dtype=float)
