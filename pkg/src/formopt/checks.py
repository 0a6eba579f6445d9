"""Correctness checks shared by the ``verify`` command and the test suite."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from formopt.assembly import assemble_action, assemble_matrix, build_dofmap, default_coefficients
from formopt.bench import make_mesh
from formopt.form_tensors import (
    FORMS,
    MODES,
    FlattenedReferenceTensor,
    FormSpec,
    affine_map,
    build_geometry_vector,
    build_reference_tensor,
    contract,
    quadrature_oracle,
    random_cell,
    random_coefficients,
)
from formopt.progir import BatchKernel, DenseKernel, generate, interpret
from formopt.relations import optimize

ORACLE_TOL = 1e-10
PROGRAM_TOL = 1e-12
GLOBAL_MATRIX_ATOL = 1e-10
DUALITY_RTOL = 1e-9
ROWSUM_TOL = 1e-9
VERIFY_MESH_N = {2: 8, 3: 4}


def rel_error(got, ref) -> float:
    """max |got - ref| scaled by max |ref| (absolute when ref is all zero)."""
    got, ref = np.asarray(got, dtype=float), np.asarray(ref, dtype=float)
    scale = float(np.abs(ref).max()) if ref.size else 0.0
    err = float(np.abs(got - ref).max()) if ref.size else 0.0
    return err / scale if scale > 0 else err


def corrupt(tensor: FlattenedReferenceTensor) -> FlattenedReferenceTensor:
    """Copy of ``tensor`` with its first nonzero entry increased by one."""
    r, c = map(int, np.argwhere(tensor.values != 0)[0])
    return tensor.with_entry(r, c, tensor.entries[r, c] + 1)


def oracle_error(spec: FormSpec, rng: np.random.Generator, ncells: int = 20,
                 tensor: Optional[FlattenedReferenceTensor] = None) -> float:
    tensor = tensor if tensor is not None else build_reference_tensor(spec)
    worst = 0.0
    for _ in range(ncells):
        cell = random_cell(rng, spec.dim)
        coeffs = random_coefficients(spec, rng)
        got = contract(tensor, build_geometry_vector(spec, affine_map(cell), coeffs))
        worst = max(worst, rel_error(got, quadrature_oracle(spec, cell, coeffs)))
    return worst


def program_error(spec: FormSpec, rng: np.random.Generator, nvec: int = 100,
                  tensor: Optional[FlattenedReferenceTensor] = None) -> float:
    tensor = tensor if tensor is not None else build_reference_tensor(spec)
    prog = generate(optimize(tensor), tensor)
    g = rng.uniform(-1.0, 1.0, (tensor.ncols, nvec))
    got = interpret(prog, g)
    ref = tensor.values.dot(g)
    return max(rel_error(got[:, j], ref[:, j]) for j in range(nvec))


@dataclass
class CaseCheck:
    spec: FormSpec
    errors: Dict[str, float] = field(default_factory=dict)
    limits: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.errors[k] <= self.limits[k] for k in self.errors)

    def line(self) -> str:
        parts = " ".join("%s=%.3e" % (k, self.errors[k]) for k in sorted(self.errors))
        return "%s %s %s" % ("PASS" if self.passed else "FAIL", self.spec.label(), parts)


def global_errors(spec: FormSpec, rng: np.random.Generator, mesh_n: Optional[int] = None,
                  tensor: Optional[FlattenedReferenceTensor] = None) -> Dict[str, float]:
    """Optimized vs naive assembly, matrix/action duality and Laplacian row sums.

    Matrix specs report ``global_matrix`` (absolute) and, for Laplacians,
    ``row_sums``; action specs report ``global_action`` and ``duality``
    (relative, against the matrix-mode assembly times u).
    """
    mesh = make_mesh(spec.dim, VERIFY_MESH_N[spec.dim] if mesh_n is None else mesh_n)
    dofmap = build_dofmap(mesh, spec.degree)
    tensor = tensor if tensor is not None else build_reference_tensor(spec)
    opt = BatchKernel(generate(optimize(tensor), tensor))
    coeffs = default_coefficients(spec, mesh, dofmap, rng)
    out: Dict[str, float] = {}
    if spec.mode == "matrix":
        a_naive = assemble_matrix(mesh, dofmap, spec, DenseKernel(tensor), coeffs).to_dense()
        a_opt = assemble_matrix(mesh, dofmap, spec, opt, coeffs).to_dense()
        out["global_matrix"] = float(np.abs(a_naive - a_opt).max())
        if spec.form in ("laplacian", "weighted_laplacian"):
            out["row_sums"] = float(np.abs(a_opt.sum(axis=1)).max())
    else:
        u = rng.uniform(-1.0, 1.0, dofmap.num_global_dofs)
        y_naive = assemble_action(mesh, dofmap, spec, DenseKernel(tensor), coeffs, u)
        y_opt = assemble_action(mesh, dofmap, spec, opt, coeffs, u)
        mspec = FormSpec(spec.form, "matrix", spec.dim, spec.degree)
        a = assemble_matrix(mesh, dofmap, mspec, DenseKernel(build_reference_tensor(mspec)), coeffs)
        out["global_action"] = rel_error(y_opt, y_naive)
        out["duality"] = rel_error(y_opt, a.matvec(u))
    return out


LIMITS = {
    "oracle": ORACLE_TOL,
    "program": PROGRAM_TOL,
    "global_matrix": GLOBAL_MATRIX_ATOL,
    "row_sums": ROWSUM_TOL,
    "global_action": DUALITY_RTOL,
    "duality": DUALITY_RTOL,
}


def verify_case(spec: FormSpec, seed: int = 0, ncells: int = 20, nvec: int = 100, mesh_n: Optional[int] = None,
                inject_fault: bool = False) -> CaseCheck:
    rng = np.random.default_rng([seed, spec.dim, spec.degree, hash_form(spec)])
    tensor = build_reference_tensor(spec)
    if inject_fault:
        tensor = corrupt(tensor)
    res = CaseCheck(spec)
    res.errors["oracle"] = oracle_error(spec, rng, ncells, tensor)
    res.errors["program"] = program_error(spec, rng, nvec, tensor)
    res.errors.update(global_errors(spec, rng, mesh_n, tensor))
    res.limits = {k: LIMITS[k] for k in res.errors}
    return res


def hash_form(spec: FormSpec) -> int:
    """Stable small integer per (form, mode), for seeding."""
    return FORMS.index(spec.form) * len(MODES) + MODES.index(spec.mode)


def verify(specs: List[FormSpec], seed: int = 0, **kw) -> List[CaseCheck]:
    return [verify_case(s, seed, **kw) for s in specs]
