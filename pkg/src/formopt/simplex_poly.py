"""Exact polynomial algebra on the unit simplex.

Polynomials are stored as sparse maps from exponent tuples to coefficients.
Coefficients are normally :class:`fractions.Fraction`, but the arithmetic is
generic so the same class also carries float polynomials (used by the
quadrature oracle).
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from math import comb, factorial
from typing import Dict, Iterable, List, Sequence, Tuple


Rational = Fraction
MultiIndex = Tuple[int, ...]

SUPPORTED_DEGREES = {2: range(1, 6), 3: range(1, 5)}


class UnsupportedElement(ValueError):
    pass


def monomial_integral(m: Sequence[int]) -> Fraction:
    """Integral of X^m over the unit simplex: prod(m_i!) / (|m| + d)!."""
    if any(e < 0 for e in m):
        raise ValueError("exponents must be non-negative: %r" % (tuple(m),))
    num = 1
    for e in m:
        num *= factorial(e)
    return Fraction(num, factorial(sum(m) + len(m)))


class Polynomial:
    """Immutable multivariate polynomial in ``dim`` variables."""

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: Dict[MultiIndex, object] | None = None):
        self.dim = dim
        clean = {}
        for m, c in (terms or {}).items():
            m = tuple(m)
            if len(m) != dim:
                raise ValueError("multi-index %r does not have length %d" % (m, dim))
            if c != 0:
                clean[m] = c
        self.terms = clean

    @classmethod
    def constant(cls, dim: int, value=1) -> "Polynomial":
        return cls(dim, {(0,) * dim: Fraction(value) if isinstance(value, int) else value})

    @classmethod
    def variable(cls, dim: int, axis: int) -> "Polynomial":
        m = [0] * dim
        m[axis] = 1
        return cls(dim, {tuple(m): Fraction(1)})

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def _check(self, other: "Polynomial"):
        if self.dim != other.dim:
            raise ValueError("dimension mismatch: %d vs %d" % (self.dim, other.dim))

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.dim, other)
        self._check(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return Polynomial(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dim, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return poly_mul(self, other)
        return Polynomial(self.dim, {m: c * other for m, c in self.terms.items()})

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.dim == other.dim and self.terms == other.terms
        return NotImplemented

    def __hash__(self):
        return hash((self.dim, frozenset(self.terms.items())))

    def __call__(self, point: Sequence) -> object:
        total = 0
        for m, c in self.terms.items():
            v = c
            for x, e in zip(point, m):
                if e:
                    v = v * x**e
            total = total + v
        return total

    def __repr__(self):
        if not self.terms:
            return "Polynomial(%d, 0)" % self.dim
        parts = []
        for m in sorted(self.terms, key=lambda t: (sum(t), tuple(-e for e in t))):
            mono = "*".join("X%d^%d" % (i, e) if e > 1 else "X%d" % i for i, e in enumerate(m) if e)
            parts.append("%s%s" % (self.terms[m], "*" + mono if mono else ""))
        return "Polynomial(%d, %s)" % (self.dim, " + ".join(parts))


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    out: Dict[MultiIndex, object] = {}
    for m, a in p.terms.items():
        for n, b in q.terms.items():
            k = tuple(x + y for x, y in zip(m, n))
            out[k] = out.get(k, 0) + a * b
    return Polynomial(p.dim, out)


def poly_diff(p: Polynomial, axis: int) -> Polynomial:
    if not 0 <= axis < p.dim:
        raise ValueError("axis %d out of range for dimension %d" % (axis, p.dim))
    out = {}
    for m, c in p.terms.items():
        e = m[axis]
        if e:
            n = list(m)
            n[axis] = e - 1
            out[tuple(n)] = c * e
    return Polynomial(p.dim, out)


def integrate(p: Polynomial):
    """Exact integral of ``p`` over the unit simplex of its dimension."""
    total = Fraction(0)
    for m, c in p.terms.items():
        total = total + c * monomial_integral(m)
    return total


# -- dense monomial spaces ---------------------------------------------------

@lru_cache(maxsize=None)
def monomials(dim: int, degree: int) -> Tuple[MultiIndex, ...]:
    """All exponent tuples of total degree <= ``degree``, graded then lex-descending."""
    out = []
    for total in range(degree + 1):
        out.extend(_exact_degree(dim, total))
    return tuple(out)


def _exact_degree(dim: int, total: int) -> List[MultiIndex]:
    if dim == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        out.extend((first,) + rest for rest in _exact_degree(dim - 1, total - first))
    return out


def dense(p: Polynomial, degree: int) -> List:
    """Coefficients of ``p`` in the basis ``monomials(p.dim, degree)``."""
    basis = monomials(p.dim, degree)
    index = {m: i for i, m in enumerate(basis)}
    out = [Fraction(0)] * len(basis)
    for m, c in p.terms.items():
        try:
            out[index[m]] = c
        except KeyError:
            raise ValueError("polynomial degree exceeds %d" % degree) from None
    return out


# -- Lagrange basis ----------------------------------------------------------

def _reference_entities(dim: int) -> List[Tuple[int, ...]]:
    """Sub-simplices of the reference cell ordered by dimension, each group
    in reverse lexicographic order of sorted vertex tuples."""
    verts = range(dim + 1)
    out = []
    for size in range(1, dim + 2):
        out.extend(sorted(combinations(verts, size), reverse=True) if size > 1 else [(v,) for v in verts])
    return out


def lattice_nodes(dim: int, degree: int) -> List[Tuple[int, ...]]:
    """Barycentric lattice multi-indices (sum == degree), entity by entity.

    Entry j of a tuple is the weight of reference vertex j, where vertex 0 is
    the origin and vertex j>0 is the unit vector e_j.
    """
    out = []
    for ent in _reference_entities(dim):
        pts = []
        for bary in _compositions(len(ent), degree):
            if all(b > 0 for b in bary):
                full = [0] * (dim + 1)
                for v, b in zip(ent, bary):
                    full[v] = b
                pts.append(tuple(full))
        pts.sort(key=lambda lam: tuple(lam[v] for v in reversed(ent[1:])))
        out.extend(pts)
    return out


def _compositions(parts: int, total: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(parts - 1, total - first):
            yield (first,) + rest


class LagrangeBasis:
    """Nodal basis of P_k on the unit simplex with equispaced lattice nodes."""

    def __init__(self, dim: int, degree: int, nodes, functions, lattice):
        self.dim = dim
        self.degree = degree
        self.nodes = nodes
        self.functions = functions
        self.lattice = lattice

    def __len__(self):
        return len(self.functions)

    def gradients(self) -> List[List[Polynomial]]:
        return [[poly_diff(f, a) for a in range(self.dim)] for f in self.functions]


def solve_exact(matrix: List[List[Fraction]], rhs: List[List[Fraction]]) -> List[List[Fraction]]:
    """Gauss-Jordan elimination over the rationals; the pivot is the first
    row (lowest index) with a nonzero entry in the current column."""
    n = len(matrix)
    a = [list(row) + list(r) for row, r in zip(matrix, rhs)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular system")
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        prow = [x / p for x in a[col]]
        a[col] = prow
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], prow)]
    return [row[n:] for row in a]


@lru_cache(maxsize=None)
def lagrange_basis(dim: int, degree: int) -> LagrangeBasis:
    if dim not in SUPPORTED_DEGREES or degree not in SUPPORTED_DEGREES[dim]:
        raise UnsupportedElement("unsupported Lagrange element: dim=%r degree=%r" % (dim, degree))
    lattice = lattice_nodes(dim, degree)
    nodes = [tuple(Fraction(lam[j + 1], degree) for j in range(dim)) for lam in lattice]
    basis = monomials(dim, degree)
    assert len(basis) == len(nodes) == comb(degree + dim, dim)
    # V[j][m] = X^m evaluated at node j; coefficients C solve V C = I.
    vander = []
    for x in nodes:
        row = []
        for m in basis:
            v = Fraction(1)
            for xi, e in zip(x, m):
                v *= xi**e
            row.append(v)
        vander.append(row)
    n = len(nodes)
    eye = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    coef = solve_exact(vander, eye)
    functions = [Polynomial(dim, {m: coef[k][i] for k, m in enumerate(basis)}) for i in range(n)]
    return LagrangeBasis(dim, degree, nodes, functions, lattice)


def dimension_of(dim: int, degree: int) -> int:
    """|P_k| on a d-simplex."""
    return comb(degree + dim, dim)


def linear_combination(coeffs: Iterable, polys: Sequence[Polynomial]) -> Polynomial:
    out: Dict[MultiIndex, object] = {}
    for a, p in zip(coeffs, polys):
        if a == 0:
            continue
        for m, c in p.terms.items():
            out[m] = out.get(m, 0) + a * c
    return Polynomial(polys[0].dim, out)
