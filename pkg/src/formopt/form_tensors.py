"""Reference tensors, geometry vectors and their contraction.

The element tensor of every supported form is ``A0_bar @ g_K`` where the
exact matrix ``A0_bar`` depends only on the form and the element, and the
vector ``g_K`` collects the cell geometry and coefficient values.

Column layout of ``A0_bar`` (row-major, slowest axis first):

========================  =================  ============================
form                      matrix mode        action mode
========================  =================  ============================
laplacian                 (a1, a2)           (j, a1, a2)
weighted_laplacian        (c, a1, a2)        (j, c, a1, a2)
advection                 (a1, a2, a3)       (j, a1, a2, a3)
weighted_advection_x1     (c, a)             (j, c, a)
========================  =================  ============================

``j`` is the trial-function index, ``c`` the weight coefficient index and
the ``a`` axes are reference derivative directions. Matrix-mode rows are
``(i1, i2)`` (test, trial), action-mode rows are ``(i1,)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial, lcm
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from gmpy2 import mpq

from formopt.simplex_poly import (
    SUPPORTED_DEGREES,
    UnsupportedElement,
    dense,
    lagrange_basis,
    Polynomial,
    linear_combination,
    monomial_integral,
    monomials,
    poly_diff,
    poly_mul,
)

FORMS = ("laplacian", "weighted_laplacian", "advection", "weighted_advection_x1")
MODES = ("matrix", "action")


class DegenerateCell(ValueError):
    pass


@dataclass(frozen=True)
class FormSpec:
    form: str
    mode: str
    dim: int
    degree: int

    def __post_init__(self):
        if self.form not in FORMS:
            raise UnsupportedElement("unknown form %r" % (self.form,))
        if self.mode not in MODES:
            raise UnsupportedElement("unknown mode %r" % (self.mode,))
        if self.dim not in SUPPORTED_DEGREES or self.degree not in SUPPORTED_DEGREES[self.dim]:
            raise UnsupportedElement("unsupported dim/degree: %r/%r" % (self.dim, self.degree))

    @property
    def nbasis(self) -> int:
        return len(lagrange_basis(self.dim, self.degree))

    @property
    def weighted(self) -> bool:
        return self.form in ("weighted_laplacian", "weighted_advection_x1")

    def col_axes(self) -> List[Tuple[str, int]]:
        d, n = self.dim, self.nbasis
        axes = {
            "laplacian": [("a1", d), ("a2", d)],
            "weighted_laplacian": [("c", n), ("a1", d), ("a2", d)],
            "advection": [("a1", d), ("a2", d), ("a3", d)],
            "weighted_advection_x1": [("c", n), ("a", d)],
        }[self.form]
        if self.mode == "action":
            axes = [("j", n)] + axes
        return axes

    @property
    def ncols(self) -> int:
        return int(np.prod([s for _, s in self.col_axes()]))

    @property
    def nrows(self) -> int:
        return self.nbasis**2 if self.mode == "matrix" else self.nbasis

    def row_labels(self) -> List[Tuple[int, ...]]:
        n = self.nbasis
        if self.mode == "matrix":
            return [(i, j) for i in range(n) for j in range(n)]
        return [(i,) for i in range(n)]

    def coefficient_sizes(self) -> Dict[str, int]:
        """Per-cell coefficient arrays this form needs (name -> length)."""
        out = {}
        if self.weighted:
            out["w"] = self.nbasis
        if self.form == "advection":
            out["beta"] = self.dim
        if self.mode == "action":
            out["u"] = self.nbasis
        return out

    def label(self) -> str:
        return "%s/%s/d%d/k%d" % (self.form, self.mode, self.dim, self.degree)

    def to_dict(self) -> dict:
        return {"form": self.form, "mode": self.mode, "dim": self.dim, "degree": self.degree}


def all_specs(dim: int, degrees: Optional[Sequence[int]] = None) -> List[FormSpec]:
    degrees = SUPPORTED_DEGREES[dim] if degrees is None else degrees
    return [FormSpec(f, m, dim, k) for f in FORMS for m in MODES for k in degrees]


class FlattenedReferenceTensor:
    """Exact matrix A0_bar with a float mirror. Treat as immutable."""

    def __init__(self, spec: FormSpec, entries: np.ndarray):
        if entries.shape != (spec.nrows, spec.ncols):
            raise ValueError("entries shape %r does not match %r" % (entries.shape, (spec.nrows, spec.ncols)))
        self.spec = spec
        self.entries = entries
        self.entries.setflags(write=False)
        self.values = np.array([[float(x) for x in row] for row in entries], dtype=float).reshape(entries.shape)
        self.values.setflags(write=False)

    @property
    def nrows(self) -> int:
        return self.spec.nrows

    @property
    def ncols(self) -> int:
        return self.spec.ncols

    @property
    def row_labels(self):
        return self.spec.row_labels()

    @property
    def col_layout(self):
        return self.spec.col_axes()

    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    def row(self, i: int) -> Tuple[Fraction, ...]:
        return tuple(self.entries[i])

    def to_text(self) -> str:
        lines = []
        for lab, row in zip(self.row_labels, self.entries):
            lines.append("%s | %s" % (format_label(lab), " ".join(format_float11(float(x)) for x in row)))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "nrows": self.nrows,
            "ncols": self.ncols,
            "col_layout": [[name, size] for name, size in self.col_layout],
            "row_labels": [list(lab) for lab in self.row_labels],
            "entries": [[str(x) for x in row] for row in self.entries],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FlattenedReferenceTensor":
        spec = FormSpec(**data["spec"])
        entries = np.empty((data["nrows"], data["ncols"]), dtype=object)
        for i, row in enumerate(data["entries"]):
            for j, s in enumerate(row):
                entries[i, j] = Fraction(s)
        return cls(spec, entries)

    def with_entry(self, row: int, col: int, value) -> "FlattenedReferenceTensor":
        """Copy with one entry replaced (used to inject faults in checks)."""
        entries = self.entries.copy()
        entries[row, col] = Fraction(value)
        return FlattenedReferenceTensor(self.spec, entries)


def format_label(label: Sequence[int]) -> str:
    return "(%s)" % ", ".join(str(i) for i in label)


def format_float11(x: float) -> str:
    s = "%.11g" % x
    if s == "-0":
        s = "0"
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


# -- exact construction ------------------------------------------------------

def _scaled(rows: Sequence[Sequence[Fraction]]) -> Tuple[np.ndarray, int]:
    den = 1
    for row in rows:
        for x in row:
            den = lcm(den, Fraction(x).denominator)
    arr = np.empty((len(rows), len(rows[0])), dtype=object)
    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            arr[i, j] = int(Fraction(x) * den)
    return arr, den


@lru_cache(maxsize=None)
def _moments2(dim: int, p: int, q: int) -> Tuple[np.ndarray, int]:
    scale = factorial(p + q + dim)
    ma, mb = monomials(dim, p), monomials(dim, q)
    out = np.empty((len(ma), len(mb)), dtype=object)
    for i, a in enumerate(ma):
        for j, b in enumerate(mb):
            v = monomial_integral(tuple(x + y for x, y in zip(a, b))) * scale
            out[i, j] = int(v)
    return out, scale


@lru_cache(maxsize=None)
def _moments3(dim: int, p: int, q: int, r: int) -> Tuple[np.ndarray, int]:
    scale = factorial(p + q + r + dim)
    ma, mb, mc = monomials(dim, p), monomials(dim, q), monomials(dim, r)
    out = np.empty((len(ma), len(mb), len(mc)), dtype=object)
    for i, a in enumerate(ma):
        for j, b in enumerate(mb):
            ab = tuple(x + y for x, y in zip(a, b))
            for k, c in enumerate(mc):
                out[i, j, k] = int(monomial_integral(tuple(x + y for x, y in zip(ab, c))) * scale)
    return out, scale


@lru_cache(maxsize=None)
def _basis_data(dim: int, degree: int):
    """Integer-scaled basis values (n x |P_k| monomials) and reference
    gradients ((n*d) x |P_{k-1}| monomials, rows ordered (i, a))."""
    basis = lagrange_basis(dim, degree)
    phi, phi_den = _scaled([dense(f, degree) for f in basis.functions])
    grads = [dense(g, degree - 1) for gs in basis.gradients() for g in gs]
    dphi, dphi_den = _scaled(grads)
    return phi, phi_den, dphi, dphi_den


def _to_fractions(ints: np.ndarray, den: int) -> np.ndarray:
    out = np.empty(ints.shape, dtype=object)
    flat_in, flat_out = ints.reshape(-1), out.reshape(-1)
    for idx in range(flat_in.size):
        flat_out[idx] = Fraction(int(flat_in[idx]), den)
    return out


def _matrix_tensor(form: str, dim: int, k: int) -> np.ndarray:
    """Exact matrix-mode tensor with shape (n, n, *column axes)."""
    n = len(lagrange_basis(dim, k))
    d = dim
    phi, phi_den, dphi, dphi_den = _basis_data(dim, k)
    if form == "laplacian":
        m, s = _moments2(dim, k - 1, k - 1)
        b = dphi.dot(m).dot(dphi.T).reshape(n, d, n, d)
        ints = b.transpose(0, 2, 1, 3)
        den = dphi_den * dphi_den * s
    elif form == "weighted_laplacian":
        m3, s = _moments3(dim, k, k - 1, k - 1)
        blocks = []
        for c in range(n):
            mc = np.tensordot(phi[c], m3, axes=(0, 0))
            blocks.append(dphi.dot(mc).dot(dphi.T).reshape(n, d, n, d))
        ints = np.stack(blocks).transpose(1, 3, 0, 2, 4)
        den = phi_den * dphi_den * dphi_den * s
    elif form == "advection":
        m, s = _moments2(dim, k, k - 1)
        b = phi.dot(m).dot(dphi.T).reshape(n, n, d)
        ints = np.zeros((n, n, d, d, d), dtype=object)
        for a in range(d):
            ints[:, :, a, a, :] = b
        den = phi_den * dphi_den * s
    elif form == "weighted_advection_x1":
        m3, s = _moments3(dim, k, k, k - 1)
        blocks = []
        for c in range(n):
            mc = np.tensordot(phi[c], m3, axes=(0, 1))
            blocks.append(phi.dot(mc).dot(dphi.T).reshape(n, n, d))
        ints = np.stack(blocks).transpose(1, 2, 0, 3)
        den = phi_den * phi_den * dphi_den * s
    else:
        raise UnsupportedElement(form)
    return _to_fractions(np.ascontiguousarray(ints), den)


@lru_cache(maxsize=64)
def build_reference_tensor(spec: FormSpec) -> FlattenedReferenceTensor:
    t = _matrix_tensor(spec.form, spec.dim, spec.degree)
    n = spec.nbasis
    if spec.mode == "matrix":
        entries = t.reshape(n * n, -1)
    else:
        # trial index i2 joins the columns as the slowest axis
        entries = t.reshape(n, -1)
    return FlattenedReferenceTensor(spec, np.ascontiguousarray(entries))


# -- geometry ----------------------------------------------------------------

@dataclass(frozen=True)
class AffineMapData:
    jacobian: np.ndarray
    inverse: np.ndarray
    det: float


def affine_maps(coords: np.ndarray, check: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched affine maps for cells given as (ncells, d+1, d) vertex arrays.

    Returns (jacobian, inverse, det); jacobian columns are v_{j+1} - v_0.
    """
    coords = np.asarray(coords, dtype=float)
    d = coords.shape[-1]
    jac = (coords[:, 1:, :] - coords[:, :1, :]).transpose(0, 2, 1)
    if d == 2:
        a, b, c, e = jac[:, 0, 0], jac[:, 0, 1], jac[:, 1, 0], jac[:, 1, 1]
        det = a * e - b * c
        inv = np.empty_like(jac)
        inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 0], inv[:, 1, 1] = e, -b, -c, a
    elif d == 3:
        c0, c1, c2 = jac[:, :, 0], jac[:, :, 1], jac[:, :, 2]
        r0, r1, r2 = np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)
        det = np.einsum("ei,ei->e", c0, r0)
        inv = np.stack([r0, r1, r2], axis=1)
    else:
        raise UnsupportedElement("dimension %r" % d)
    if check:
        edges = coords[:, :, None, :] - coords[:, None, :, :]
        scale = np.sqrt((edges**2).sum(-1)).max(axis=(1, 2))
        bad = np.abs(det) < 1e-14 * scale**d
        if np.any(bad):
            raise DegenerateCell("degenerate cell(s): %s" % np.flatnonzero(bad)[:5].tolist())
    inv = inv / det[:, None, None]
    return jac, inv, det


def affine_map(cell: Sequence[Sequence[float]]) -> AffineMapData:
    jac, inv, det = affine_maps(np.asarray(cell, dtype=float)[None])
    return AffineMapData(jac[0], inv[0], float(det[0]))


def _as_batch(x, ncells, size, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (ncells, arr.shape[0]))
    if arr.shape != (ncells, size):
        raise ValueError("coefficient %r has shape %r, expected %r" % (name, arr.shape, (ncells, size)))
    return arr


def geometry_vectors(spec: FormSpec, inverse: np.ndarray, det: np.ndarray, coeffs: Dict[str, np.ndarray]) -> np.ndarray:
    """Geometry vectors for a batch of cells, shape (ncells, ncols).

    ``coeffs`` holds per-cell arrays (or one array broadcast to all cells)
    for the names in ``spec.coefficient_sizes()``.
    """
    ncells = det.shape[0]
    sizes = spec.coefficient_sizes()
    extra = set(coeffs) - set(sizes)
    missing = set(sizes) - set(coeffs)
    if missing or extra:
        raise ValueError("coefficients for %s: expected %s, got %s" % (spec.label(), sorted(sizes), sorted(coeffs)))
    c = {name: _as_batch(coeffs[name], ncells, size, name) for name, size in sizes.items()}
    scale = np.abs(det)
    kinv = inverse
    if spec.form == "laplacian":
        g = np.einsum("e,eab,ecb->eac", scale, kinv, kinv)
    elif spec.form == "weighted_laplacian":
        g = np.einsum("e,ec,eab,edb->ecad", scale, c["w"], kinv, kinv)
    elif spec.form == "advection":
        # g[a1, a2, a3] = det * beta[a1] * K[a3, a2]
        g = np.einsum("e,ea,eyx->eaxy", scale, c["beta"], kinv)
    else:
        g = np.einsum("e,ec,ea->eca", scale, c["w"], kinv[:, :, 0])
    g = g.reshape(ncells, -1)
    if spec.mode == "action":
        g = (c["u"][:, :, None] * g[:, None, :]).reshape(ncells, -1)
    return g


def build_geometry_vector(spec: FormSpec, amap: AffineMapData, coeffs: Optional[Dict] = None) -> np.ndarray:
    coeffs = {k: np.asarray(v, dtype=float)[None] for k, v in (coeffs or {}).items()}
    for name, size in spec.coefficient_sizes().items():
        if name in coeffs and coeffs[name].shape != (1, size):
            raise ValueError("coefficient %r must have %d entries" % (name, size))
    return geometry_vectors(spec, amap.inverse[None], np.array([amap.det]), coeffs)[0]


def contract(tensor: FlattenedReferenceTensor, g: Sequence[float]) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (tensor.ncols,):
        raise ValueError("geometry vector has length %r, tensor has %d columns" % (g.shape, tensor.ncols))
    a = tensor.values.dot(g)
    n = tensor.spec.nbasis
    return a.reshape(n, n) if tensor.spec.mode == "matrix" else a


# -- independent oracle -------------------------------------------------------

@lru_cache(maxsize=None)
def _exact_moments(dim: int, deg_a: int, deg_b: int) -> np.ndarray:
    ma, mb = monomials(dim, deg_a), monomials(dim, deg_b)
    out = np.empty((len(ma), len(mb)), dtype=object)
    for i, a in enumerate(ma):
        for j, b in enumerate(mb):
            out[i, j] = mpq(monomial_integral(tuple(x + y for x, y in zip(a, b))))
    return out


def quadrature_oracle(spec: FormSpec, cell, coeffs: Optional[Dict] = None) -> np.ndarray:
    """Element tensor computed by pulling the physical integrand back to the
    reference cell and integrating the resulting polynomials exactly.

    Float inputs (vertices, coefficients) are converted to rationals without
    rounding, so the result is the correctly rounded integral for those
    inputs. Shares no code with :func:`build_reference_tensor` beyond the
    basis and the monomial integration rule.
    """
    coeffs = coeffs or {}
    for name, size in spec.coefficient_sizes().items():
        if np.shape(coeffs.get(name)) != (size,):
            raise ValueError("coefficient %r must have %d entries" % (name, size))
    affine_map(cell)  # rejects degenerate cells
    d, k = spec.dim, spec.degree
    basis = lagrange_basis(d, k)
    n = len(basis)
    verts = [[mpq(float(x)) for x in v] for v in np.asarray(cell, dtype=float)]
    jac = [[verts[j + 1][i] - verts[0][i] for j in range(d)] for i in range(d)]
    det, kinv = _exact_inverse(jac)
    vol = abs(det)
    ex = {name: [mpq(float(x)) for x in np.asarray(v, dtype=float)] for name, v in coeffs.items()}
    functions = [Polynomial(d, {m: mpq(c) for m, c in f.terms.items()}) for f in basis.functions]
    ref_grads = [[poly_diff(f, a) for a in range(d)] for f in functions]
    # physical gradients: d(phi)/dx_b = sum_a dX_a/dx_b * d(phi)/dX_a
    phys = [[linear_combination([kinv[a][b] for a in range(d)], ref_grads[i]) for b in range(d)] for i in range(n)]

    if spec.mode == "matrix":
        trial_grads = phys
    else:
        u = ex["u"]
        trial_grads = [[linear_combination(u, [p[b] for p in phys]) for b in range(d)]]

    def dmat(polys, deg):
        return np.array([dense(p, deg) for p in polys], dtype=object).reshape(len(polys), -1)

    if spec.form in ("laplacian", "weighted_laplacian"):
        out = None
        wh = linear_combination(ex["w"], functions) if spec.form == "weighted_laplacian" else None
        left_deg = 2 * k - 1 if wh is not None else k - 1
        for b in range(d):
            test = [phys[i][b] for i in range(n)]
            if wh is not None:
                test = [poly_mul(wh, p) for p in test]
            trial = [g[b] for g in trial_grads]
            term = dmat(test, left_deg).dot(_exact_moments(d, left_deg, k - 1)).dot(dmat(trial, k - 1).T)
            out = term if out is None else out + term
    elif spec.form == "advection":
        trial = [linear_combination(ex["beta"], g) for g in trial_grads]
        out = dmat(functions, k).dot(_exact_moments(d, k, k - 1)).dot(dmat(trial, k - 1).T)
    else:
        wh = linear_combination(ex["w"], functions)
        test = [poly_mul(wh, f) for f in functions]
        trial = [g[0] for g in trial_grads]
        out = dmat(test, 2 * k).dot(_exact_moments(d, 2 * k, k - 1)).dot(dmat(trial, k - 1).T)
    out = np.array([[float(vol * x) for x in row] for row in out])
    return out if spec.mode == "matrix" else out[:, 0]


def _exact_inverse(jac):
    d = len(jac)
    if d == 2:
        (a, b), (c, e) = jac
        det = a * e - b * c
        adj = [[e, -b], [-c, a]]
    else:
        m = jac
        det = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
               - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
               + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
        adj = [[m[(j + 1) % 3][(i + 1) % 3] * m[(j + 2) % 3][(i + 2) % 3]
                - m[(j + 1) % 3][(i + 2) % 3] * m[(j + 2) % 3][(i + 1) % 3] for j in range(3)] for i in range(3)]
    return det, [[x / det for x in row] for row in adj]


def random_cell(rng: np.random.Generator, dim: int, min_quality: float = 0.05) -> np.ndarray:
    """Random non-degenerate simplex with coordinates in [-1, 1]."""
    while True:
        v = rng.uniform(-1.0, 1.0, size=(dim + 1, dim))
        jac = (v[1:] - v[0]).T
        edges = np.linalg.norm(v[:, None] - v[None], axis=-1).max()
        if abs(np.linalg.det(jac)) > min_quality * edges**dim:
            return v


def random_coefficients(spec: FormSpec, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    return {name: rng.uniform(-1.0, 1.0, size=size) for name, size in spec.coefficient_sizes().items()}


def dump_json(tensor: FlattenedReferenceTensor) -> str:
    return json.dumps(tensor.to_json())
