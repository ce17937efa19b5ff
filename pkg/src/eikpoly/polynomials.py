"""Multiindex utilities and sparse multivariate polynomials.

Exponent vectors are plain tuples of non-negative ints.  A polynomial is a
sparse map from exponent tuple to float coefficient; derivatives are computed
term-wise with exact integer falling-factorial factors, so mixed partials of
any order are exact up to coefficient rounding.  Zero coefficients are pruned
exactly (no epsilon), which keeps construction deterministic.
"""

from __future__ import annotations

import math
from itertools import product
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

MultiIndex = Tuple[int, ...]


def zero_index(n: int) -> MultiIndex:
    return (0,) * n


def unit_index(n: int, i: int) -> MultiIndex:
    e = [0] * n
    e[i] = 1
    return tuple(e)


def mi_order(mi: MultiIndex) -> int:
    return sum(mi)


def mi_decrement(beta: MultiIndex, i: int, k: int = 1) -> MultiIndex:
    """Truncated decrement: component ``i`` drops by ``k``, floored at zero.

    Total function: if ``beta[i] < k`` the component is set to 0 and all other
    components are left unchanged.
    """
    b = list(beta)
    b[i] = b[i] - k if b[i] >= k else 0
    return tuple(b)


def mi_add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def mi_sub(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    c = tuple(x - y for x, y in zip(a, b))
    if any(x < 0 for x in c):
        raise ValueError(f"negative multiindex {a} - {b}")
    return c


def mi_leq(a: MultiIndex, b: MultiIndex) -> bool:
    return all(x <= y for x, y in zip(a, b))


def mi_factorial(a: MultiIndex) -> int:
    out = 1
    for x in a:
        out *= math.factorial(x)
    return out


def mi_binom(a: MultiIndex, b: MultiIndex) -> int:
    """Product of componentwise binomial coefficients C(a_i, b_i)."""
    out = 1
    for x, y in zip(a, b):
        out *= math.comb(x, y)
    return out


def enumerate_multiindices(n: int, m: int) -> List[MultiIndex]:
    """All multiindices of order exactly ``m`` in ``n`` variables.

    Graded-lexicographic order with descending first component, e.g.
    ``(n=2, m=3) -> [(3,0), (2,1), (1,2), (0,3)]``.  The list has
    ``binom(m+n-1, n-1)`` elements.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if n == 1:
        return [(m,)]
    out: List[MultiIndex] = []
    for first in range(m, -1, -1):
        for rest in enumerate_multiindices(n - 1, m - first):
            out.append((first,) + rest)
    return out


def submultiindices(alpha: MultiIndex) -> List[MultiIndex]:
    """All gamma with 0 <= gamma <= alpha componentwise, in a fixed order."""
    ranges = [range(a + 1) for a in alpha]
    return [tuple(g) for g in product(*ranges)]


class MPoly:
    """Sparse polynomial in ``n`` real variables with float coefficients."""

    __slots__ = ("n", "coeffs")

    def __init__(self, n: int, coeffs: Dict[MultiIndex, float] | None = None):
        self.n = n
        self.coeffs: Dict[MultiIndex, float] = {}
        if coeffs:
            for e, c in coeffs.items():
                if len(e) != n:
                    raise ValueError(f"exponent {e} has wrong length for n={n}")
                c = float(c)
                if c != 0.0:
                    self.coeffs[tuple(int(x) for x in e)] = c

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "MPoly":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> "MPoly":
        return cls(n, {zero_index(n): c})

    @classmethod
    def variable(cls, n: int, i: int) -> "MPoly":
        return cls(n, {unit_index(n, i): 1.0})

    @classmethod
    def from_terms(cls, n: int, terms: Iterable[Tuple[Sequence[int], float]]) -> "MPoly":
        out: Dict[MultiIndex, float] = {}
        for exps, c in terms:
            e = tuple(int(x) for x in exps)
            out[e] = out.get(e, 0.0) + float(c)
        return cls(n, out)

    # -- queries -------------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.coeffs

    def degree(self) -> int:
        return max((mi_order(e) for e in self.coeffs), default=0)

    def __eq__(self, other) -> bool:
        return isinstance(other, MPoly) and self.n == other.n and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.n, tuple(sorted(self.coeffs.items()))))

    def __repr__(self) -> str:
        if not self.coeffs:
            return "MPoly(0)"
        parts = [f"{c:g}*x^{e}" for e, c in sorted(self.coeffs.items())]
        return "MPoly(" + " + ".join(parts) + ")"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "MPoly":
        if not isinstance(other, MPoly):
            other = MPoly.constant(self.n, other)
        out = dict(self.coeffs)
        for e, c in other.coeffs.items():
            out[e] = out.get(e, 0.0) + c
        return MPoly(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "MPoly":
        return MPoly(self.n, {e: -c for e, c in self.coeffs.items()})

    def __sub__(self, other) -> "MPoly":
        if not isinstance(other, MPoly):
            other = MPoly.constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other) -> "MPoly":
        return (-self) + other

    def __mul__(self, other) -> "MPoly":
        if not isinstance(other, MPoly):
            return MPoly(self.n, {e: c * float(other) for e, c in self.coeffs.items()})
        out: Dict[MultiIndex, float] = {}
        for e1, c1 in self.coeffs.items():
            for e2, c2 in other.coeffs.items():
                e = mi_add(e1, e2)
                out[e] = out.get(e, 0.0) + c1 * c2
        return MPoly(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "MPoly":
        if k < 0:
            raise ValueError("negative power")
        out = MPoly.constant(self.n, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- calculus ------------------------------------------------------------

    def derivative(self, alpha: MultiIndex) -> "MPoly":
        """Exact mixed partial as a new polynomial.

        Integer falling-factorial factors are computed exactly and converted
        to float once per term.
        """
        out: Dict[MultiIndex, float] = {}
        for e, c in self.coeffs.items():
            if not mi_leq(alpha, e):
                continue
            fac = 1
            for ei, ai in zip(e, alpha):
                fac *= math.perm(ei, ai)
            out[mi_sub(e, alpha)] = out.get(mi_sub(e, alpha), 0.0) + c * fac
        return MPoly(self.n, out)

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate at points ``xs`` of shape (m, n); returns shape (m,)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        out = np.zeros(xs.shape[0])
        for e, c in self.coeffs.items():
            term = np.full(xs.shape[0], c)
            for i, p in enumerate(e):
                if p:
                    term = term * xs[:, i] ** p
            out += term
        return out

    def eval(self, x) -> float:
        return float(self.eval_many(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def eval_derivative_many(self, alpha: MultiIndex, xs: np.ndarray) -> np.ndarray:
        return self.derivative(alpha).eval_many(xs)

    def eval_derivative(self, alpha: MultiIndex, x) -> float:
        return self.derivative(alpha).eval(x)

    def substitute_affine(self, shift: Sequence[float], scale: Sequence[float]) -> "MPoly":
        """Polynomial of ``t`` obtained by substituting ``x_i = shift_i + scale_i * t_i``."""
        shift = [float(s) for s in shift]
        scale = [float(s) for s in scale]
        out = MPoly.zero(self.n)
        for e, c in self.coeffs.items():
            term = MPoly.constant(self.n, c)
            for i, p in enumerate(e):
                if p:
                    lin = MPoly(self.n, {zero_index(self.n): shift[i], unit_index(self.n, i): scale[i]})
                    term = term * lin**p
            out = out + term
        return out
