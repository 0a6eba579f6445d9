"""Reference tensors, geometry vectors and the quadrature oracle."""
import json
from fractions import Fraction

import numpy as np
import pytest
import sympy

from formopt.form_tensors import (
    DegenerateCell,
    FlattenedReferenceTensor,
    FormSpec,
    affine_map,
    affine_maps,
    all_specs,
    build_geometry_vector,
    build_reference_tensor,
    contract,
    format_float11,
    quadrature_oracle,
    random_cell,
    random_coefficients,
)
from formopt.simplex_poly import UnsupportedElement, lagrange_basis

SYMS = sympy.symbols("x0 x1 x2")


def _rational_cell(rng, dim):
    while True:
        v = [[sympy.Rational(int(rng.integers(-12, 13)), 7) for _ in range(dim)] for _ in range(dim + 1)]
        jac = sympy.Matrix([[v[j + 1][i] - v[0][i] for j in range(dim)] for i in range(dim)])
        if abs(jac.det()) > sympy.Rational(1, 4):
            return v, jac


def _random_poly(rng, dim, degree):
    x = SYMS[:dim]
    terms = 0
    for e in np.ndindex(*([degree + 1] * dim)):
        if sum(e) <= degree:
            terms += sympy.Rational(int(rng.integers(-5, 6)), 3) * sympy.prod([xi**p for xi, p in zip(x, e)])
    return terms


def _physical_integral(expr, v, jac, dim):
    x, ref = SYMS[:dim], sympy.symbols("X0 X1 X2")[:dim]
    sub = {x[i]: v[0][i] + sum(jac[i, j] * ref[j] for j in range(dim)) for i in range(dim)}
    f = sympy.expand(expr.subs(sub, simultaneous=True))
    if dim == 2:
        r = sympy.integrate(f, (ref[1], 0, 1 - ref[0]), (ref[0], 0, 1))
    else:
        r = sympy.integrate(f, (ref[2], 0, 1 - ref[0] - ref[1]), (ref[1], 0, 1 - ref[0]), (ref[0], 0, 1))
    return r * abs(jac.det())


def _interpolate(poly, v, jac, dim, degree):
    x = SYMS[:dim]
    out = []
    for node in lagrange_basis(dim, degree).nodes:
        phys = [v[0][i] + sum(jac[i, j] * sympy.Rational(node[j].numerator, node[j].denominator) for j in range(dim))
                for i in range(dim)]
        out.append(float(poly.subs(dict(zip(x, phys)))))
    return np.array(out)


@pytest.mark.parametrize("spec", [s for s in all_specs(2, [1, 2, 3])] + [s for s in all_specs(3, [1, 2])],
                         ids=lambda s: s.label())
def test_bilinear_form_matches_symbolic_integral(spec):
    """v^T A u against the defining integral for polynomials u, v, w in P_k."""
    rng = np.random.default_rng(11 + spec.degree)
    d, k = spec.dim, spec.degree
    x = SYMS[:d]
    verts, jac = _rational_cell(rng, d)
    u, v, w = (_random_poly(rng, d, k) for _ in range(3))
    beta = [sympy.Rational(int(rng.integers(-9, 10)), 4) for _ in range(d)]
    grad = lambda p: [sympy.diff(p, xi) for xi in x]
    integrand = {
        "laplacian": sum(a * b for a, b in zip(grad(v), grad(u))),
        "weighted_laplacian": w * sum(a * b for a, b in zip(grad(v), grad(u))),
        "advection": v * sum(b * g for b, g in zip(beta, grad(u))),
        "weighted_advection_x1": w * v * sympy.diff(u, x[0]),
    }[spec.form]
    ref = float(_physical_integral(integrand, verts, jac, d))

    cell = np.array([[float(c) for c in p] for p in verts])
    uu, vv, ww = (_interpolate(p, verts, jac, d, k) for p in (u, v, w))
    coeffs = {}
    if spec.weighted:
        coeffs["w"] = ww
    if spec.form == "advection":
        coeffs["beta"] = np.array([float(b) for b in beta])
    if spec.mode == "action":
        coeffs["u"] = uu
    tensor = build_reference_tensor(spec)
    out = contract(tensor, build_geometry_vector(spec, affine_map(cell), coeffs))
    got = vv @ out @ uu if spec.mode == "matrix" else vv @ out
    assert got == pytest.approx(ref, rel=1e-11, abs=1e-11)


def test_linear_laplacian_matches_barycentric_gradient_formula():
    rng = np.random.default_rng(3)
    for dim in (2, 3):
        cell = random_cell(rng, dim)
        # gradients of barycentric coordinates: rows of inv([[1, x], ...])
        m = np.hstack([np.ones((dim + 1, 1)), cell])
        grads = np.linalg.inv(m)[1:].T
        vol = abs(np.linalg.det(m)) / (2 if dim == 2 else 6)
        ref = vol * grads @ grads.T
        spec = FormSpec("laplacian", "matrix", dim, 1)
        got = contract(build_reference_tensor(spec), build_geometry_vector(spec, affine_map(cell)))
        np.testing.assert_allclose(got, ref, rtol=1e-13, atol=1e-13)


def test_table_values_for_quadratic_laplacian():
    t = build_reference_tensor(FormSpec("laplacian", "matrix", 2, 2))
    assert (t.nrows, t.ncols) == (36, 4)
    assert t.row(0) == (Fraction(1, 2),) * 4
    assert t.row(11) == (Fraction(-2, 3), Fraction(-2, 3), 0, 0)
    assert t.row(21) == (Fraction(4, 3), Fraction(2, 3), Fraction(2, 3), Fraction(4, 3))
    allowed = {Fraction(0), Fraction(1, 6), Fraction(1, 2), Fraction(2, 3), Fraction(4, 3)}
    assert {abs(x) for x in t.entries.ravel()} <= allowed
    assert t.to_text().splitlines()[0] == "(0, 0) | 0.5 0.5 0.5 0.5"
    assert t.to_text().splitlines()[1] == "(0, 1) | 0.16666666667 0.0 0.16666666667 0.0"


@pytest.mark.parametrize("spec", all_specs(2, [1, 2, 3]) + all_specs(3, [1, 2]), ids=lambda s: s.label())
def test_contraction_matches_oracle_small(spec):
    rng = np.random.default_rng(5)
    tensor = build_reference_tensor(spec)
    for _ in range(3):
        cell = random_cell(rng, spec.dim)
        coeffs = random_coefficients(spec, rng)
        got = contract(tensor, build_geometry_vector(spec, affine_map(cell), coeffs))
        ref = quadrature_oracle(spec, cell, coeffs)
        assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


def test_shapes_and_column_layout():
    s = FormSpec("weighted_laplacian", "action", 3, 2)
    assert s.nbasis == 10
    assert s.col_axes() == [("j", 10), ("c", 10), ("a1", 3), ("a2", 3)]
    assert build_reference_tensor(s).values.shape == (10, 900)
    assert FormSpec("advection", "matrix", 2, 1).ncols == 8


def test_laplacian_rows_of_linear_element_have_zero_sum():
    t = build_reference_tensor(FormSpec("laplacian", "matrix", 2, 1))
    a = t.values.reshape(3, 3, 4).sum(axis=1)
    assert np.all(a == 0)


def test_json_round_trip_is_exact():
    t = build_reference_tensor(FormSpec("advection", "action", 2, 2))
    data = json.loads(json.dumps(t.to_json()))
    assert all(isinstance(s, str) for row in data["entries"] for s in row)
    back = FlattenedReferenceTensor.from_json(data)
    assert back.spec == t.spec
    assert np.all(back.entries == t.entries)


def test_tensor_is_read_only():
    t = build_reference_tensor(FormSpec("laplacian", "matrix", 2, 1))
    with pytest.raises(ValueError):
        t.values[0, 0] = 1.0


def test_format_float11():
    assert format_float11(0.5) == "0.5"
    assert format_float11(0.0) == "0.0"
    assert format_float11(-0.0) == "0.0"
    assert format_float11(1.0) == "1.0"
    assert format_float11(-4 / 3) == "-1.3333333333"
    assert format_float11(1 / 6) == "0.16666666667"


def test_degenerate_cell_is_rejected():
    with pytest.raises(DegenerateCell):
        affine_map([[0, 0], [1, 1], [2, 2]])
    with pytest.raises(DegenerateCell):
        affine_maps(np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]]))


def test_invalid_specs():
    with pytest.raises(UnsupportedElement):
        FormSpec("laplacian", "matrix", 2, 6)
    with pytest.raises(UnsupportedElement):
        FormSpec("mass", "matrix", 2, 1)
    with pytest.raises(UnsupportedElement):
        FormSpec("laplacian", "vector", 2, 1)


def test_geometry_vector_rejects_wrong_coefficients():
    spec = FormSpec("advection", "matrix", 2, 1)
    amap = affine_map([[0, 0], [1, 0], [0, 1]])
    with pytest.raises(ValueError):
        build_geometry_vector(spec, amap, {})
    with pytest.raises(ValueError):
        build_geometry_vector(spec, amap, {"beta": [1.0, 2.0, 3.0]})
    with pytest.raises(ValueError):
        contract(build_reference_tensor(spec), np.zeros(3))


def test_orientation_does_not_change_element_tensor():
    spec = FormSpec("advection", "matrix", 2, 2)
    cell = np.array([[0.1, 0.0], [1.0, 0.2], [0.3, 0.9]])
    flipped = cell[[1, 0, 2]]
    beta = {"beta": np.array([0.4, -1.2])}
    t = build_reference_tensor(spec)
    a = contract(t, build_geometry_vector(spec, affine_map(cell), beta))
    b = contract(t, build_geometry_vector(spec, affine_map(flipped), beta))
    perm = [1, 0, 2, 4, 3, 5]  # swapping vertices 0 and 1 swaps the edges opposite them
    np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-14)
