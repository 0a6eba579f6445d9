"""Straight-line programs evaluating ``y = A0_bar @ g``.

A program is a list of instructions, one per row of the reference matrix:

* ``Direct``: ``y[r] = sum(c * g[col])`` over the nonzero entries,
* ``Scale``:  ``y[r] = s * y[src]`` (``s == 1`` is a plain copy),
* ``Delta``:  ``y[r] = y[src] + sum(d * g[col])``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from formopt.form_tensors import FlattenedReferenceTensor, FormSpec, format_label
from formopt.relations import ROOT, DependencyForest

# longest sum emitted as one Python expression by compile_kernel
_CHUNK = 64


@dataclass(frozen=True)
class Direct:
    row: int
    terms: Tuple[Tuple[int, float], ...]


@dataclass(frozen=True)
class Scale:
    row: int
    src_row: int
    scalar: float


@dataclass(frozen=True)
class Delta:
    row: int
    src_row: int
    terms: Tuple[Tuple[int, float], ...]


Instruction = Union[Direct, Scale, Delta]


@dataclass(frozen=True)
class OpCount:
    maps: int
    multiplies: int
    additions: int

    def to_json(self) -> dict:
        return {"maps": self.maps, "multiplies": self.multiplies, "additions": self.additions}


class InconsistentProgram(ValueError):
    pass


@dataclass
class StraightLineProgram:
    spec: FormSpec | None
    nrows: int
    ncols: int
    instructions: List[Instruction]

    @property
    def op_counts(self) -> OpCount:
        return count_ops(self)

    def to_json(self) -> dict:
        out = []
        for ins in self.instructions:
            if isinstance(ins, Direct):
                out.append({"op": "direct", "row": ins.row, "terms": [[c, v] for c, v in ins.terms]})
            elif isinstance(ins, Scale):
                out.append({"op": "scale", "row": ins.row, "src_row": ins.src_row, "scalar": ins.scalar})
            else:
                out.append({"op": "delta", "row": ins.row, "src_row": ins.src_row,
                            "terms": [[c, v] for c, v in ins.terms]})
        return {
            "spec": self.spec.to_dict() if self.spec else None,
            "nrows": self.nrows,
            "ncols": self.ncols,
            "instructions": out,
            "op_counts": self.op_counts.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "StraightLineProgram":
        ins: List[Instruction] = []
        for item in data["instructions"]:
            if item["op"] == "direct":
                ins.append(Direct(item["row"], tuple((int(c), float(v)) for c, v in item["terms"])))
            elif item["op"] == "scale":
                ins.append(Scale(item["row"], item["src_row"], float(item["scalar"])))
            else:
                ins.append(Delta(item["row"], item["src_row"], tuple((int(c), float(v)) for c, v in item["terms"])))
        spec = FormSpec(**data["spec"]) if data.get("spec") else None
        return cls(spec, data["nrows"], data["ncols"], ins)


def generate(forest: DependencyForest, tensor: FlattenedReferenceTensor) -> StraightLineProgram:
    if forest.nrows != tensor.nrows:
        raise InconsistentProgram("forest has %d rows, tensor has %d" % (forest.nrows, tensor.nrows))
    out: List[Instruction] = []
    for r in forest.topo_order:
        row = tensor.row(r)
        par = forest.parent[r]
        rel = forest.relations[r]
        if par == ROOT:
            if rel.kind != "direct":
                raise InconsistentProgram("root-attached row %d has relation %s" % (r, rel.kind))
            out.append(Direct(r, tuple((c, float(x)) for c, x in enumerate(row) if x != 0)))
            continue
        src = tensor.row(par)
        if rel.kind == "equal":
            if src != row:
                raise InconsistentProgram("rows %d and %d are not equal" % (par, r))
            out.append(Scale(r, par, 1.0))
        elif rel.kind == "collinear":
            if any(b != rel.scalar * a for a, b in zip(src, row)):
                raise InconsistentProgram("rows %d and %d are not collinear" % (par, r))
            out.append(Scale(r, par, float(rel.scalar)))
        elif rel.kind == "hamming":
            terms = tuple((c, float(Fraction(row[c]) - Fraction(src[c]))) for c in rel.diff_positions)
            if any(row[c] != src[c] for c in range(len(row)) if c not in set(rel.diff_positions)):
                raise InconsistentProgram("hamming positions of row %d are incomplete" % r)
            out.append(Delta(r, par, terms))
        else:
            raise InconsistentProgram("row %d: relation %r needs a root parent" % (r, rel.kind))
    return StraightLineProgram(tensor.spec, tensor.nrows, tensor.ncols, out)


def generate_direct(tensor: FlattenedReferenceTensor) -> StraightLineProgram:
    """Unoptimized program: every row as a zero-skipping dot product."""
    ins = [Direct(r, tuple((c, float(x)) for c, x in enumerate(tensor.row(r)) if x != 0))
           for r in range(tensor.nrows)]
    return StraightLineProgram(tensor.spec, tensor.nrows, tensor.ncols, ins)


def count_ops(program: StraightLineProgram) -> OpCount:
    maps = mul = add = 0
    for ins in program.instructions:
        if isinstance(ins, Direct):
            t = len(ins.terms)
            maps += t
            mul += t
            add += max(t - 1, 0)
        elif isinstance(ins, Scale):
            if ins.scalar != 1.0:
                maps += 1
                mul += 1
        else:
            t = len(ins.terms)
            maps += t
            mul += t
            add += t
    return OpCount(maps, mul, add)


def interpret(program: StraightLineProgram, g) -> np.ndarray:
    """Reference evaluator. ``g`` may be one vector or a (ncols, m) batch."""
    g = np.asarray(g, dtype=float)
    if g.shape[0] != program.ncols:
        raise ValueError("geometry vector has %d entries, program expects %d" % (g.shape[0], program.ncols))
    y = np.zeros((program.nrows,) + g.shape[1:])
    written = np.zeros(program.nrows, dtype=bool)
    for ins in program.instructions:
        if isinstance(ins, Direct):
            acc = np.zeros(g.shape[1:])
            for col, c in ins.terms:
                acc = acc + c * g[col]
        else:
            if not written[ins.src_row]:
                raise InconsistentProgram("row %d read before it is written" % ins.src_row)
            if isinstance(ins, Scale):
                acc = y[ins.src_row] * ins.scalar if ins.scalar != 1.0 else y[ins.src_row].copy()
            else:
                acc = y[ins.src_row]
                for col, d in ins.terms:
                    acc = acc + d * g[col]
        y[ins.row] = acc
        written[ins.row] = True
    return y


# -- text forms --------------------------------------------------------------

def _num(x: float) -> str:
    return "%.17g" % x


def _sum_terms(terms, first: bool) -> str:
    parts = []
    for col, c in terms:
        if first:
            parts.append("%s*g[%d]" % (_num(c), col))
            first = False
        elif c < 0:
            parts.append(" - %s*g[%d]" % (_num(-c), col))
        else:
            parts.append(" + %s*g[%d]" % (_num(c), col))
    return "".join(parts)


def emit_line(ins: Instruction) -> str:
    if isinstance(ins, Direct):
        body = _sum_terms(ins.terms, True) if ins.terms else "0"
        return "y[%d] = %s" % (ins.row, body)
    if isinstance(ins, Scale):
        return "y[%d] = %s*y[%d]" % (ins.row, _num(ins.scalar), ins.src_row)
    return "y[%d] = y[%d]%s" % (ins.row, ins.src_row, _sum_terms(ins.terms, False))


def emit_text(program: StraightLineProgram) -> str:
    return "".join(emit_line(ins) + "\n" for ins in program.instructions)


_LINE = re.compile(r"^y\[(\d+)\] = (.*)$")
_TERM = re.compile(r"([+-]?)\s*([^*\s]+)\*g\[(\d+)\]")
_SCALE = re.compile(r"^(\S+)\*y\[(\d+)\]$")
_DELTA = re.compile(r"^y\[(\d+)\](.*)$")


def parse_text(text: str, nrows: int, ncols: int, spec: FormSpec | None = None) -> StraightLineProgram:
    """Inverse of :func:`emit_text`."""
    ins: List[Instruction] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise ValueError("line %d: cannot parse %r" % (lineno, line))
        row, rhs = int(m.group(1)), m.group(2)
        sm = _SCALE.match(rhs)
        if sm:
            ins.append(Scale(row, int(sm.group(2)), float(sm.group(1))))
            continue
        dm = _DELTA.match(rhs)
        if dm:
            ins.append(Delta(row, int(dm.group(1)), _parse_terms(dm.group(2))))
        elif rhs == "0":
            ins.append(Direct(row, ()))
        else:
            ins.append(Direct(row, _parse_terms(rhs)))
    return StraightLineProgram(spec, nrows, ncols, ins)


def _parse_terms(s: str) -> Tuple[Tuple[int, float], ...]:
    out = []
    for sign, num, col in _TERM.findall(s):
        v = float(num)
        out.append((int(col), -v if sign == "-" else v))
    return tuple(out)


def emit_dot(forest: DependencyForest, name: str = "forest") -> str:
    """DOT digraph with arrows from each row to the row it is computed from."""
    labels = forest.row_labels or [(i,) for i in range(forest.nrows)]
    lines = ["digraph %s {" % name, "  rankdir=RL;"]
    for i, lab in enumerate(labels):
        lines.append('  n%d [label="%s"];' % (i, format_label(lab)))
    for child, par in enumerate(forest.parent):
        if par != ROOT:
            rel = forest.relations[child]
            lines.append('  n%d -> n%d [label="%s %d"];' % (child, par, rel.kind, rel.cost))
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json_text(program: StraightLineProgram) -> str:
    return json.dumps(program.to_json())


# -- compiled batch kernels ----------------------------------------------------

def kernel_source(program: StraightLineProgram, name: str = "kernel") -> str:
    """Python source of an unrolled kernel ``kernel(g, y)``.

    ``g`` is indexable by column (e.g. a (ncols, ncells) array) and ``y`` is
    a preallocated (nrows, ncells) output array.
    """
    lines = ["def %s(g, y):" % name]
    for ins in program.instructions:
        if isinstance(ins, Scale):
            if ins.scalar == 1.0:
                lines.append("    y[%d] = y[%d]" % (ins.row, ins.src_row))
            else:
                lines.append("    y[%d] = %s*y[%d]" % (ins.row, _num(ins.scalar), ins.src_row))
            continue
        terms = ins.terms
        if isinstance(ins, Direct):
            if not terms:
                lines.append("    y[%d] = 0.0" % ins.row)
                continue
            head, terms = terms[:_CHUNK], terms[_CHUNK:]
            lines.append("    y[%d] = %s" % (ins.row, _sum_terms(head, True)))
        else:
            head, terms = terms[:_CHUNK], terms[_CHUNK:]
            lines.append("    y[%d] = y[%d]%s" % (ins.row, ins.src_row, _sum_terms(head, False)))
        while terms:
            head, terms = terms[:_CHUNK], terms[_CHUNK:]
            lines.append("    y[%d] += %s" % (ins.row, _sum_terms(head, True)))
    lines.append("    return y")
    return "\n".join(lines) + "\n"


def compile_kernel(program: StraightLineProgram) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    namespace: Dict[str, object] = {}
    code = compile(kernel_source(program), "<kernel %s>" % (program.spec.label() if program.spec else ""), "exec")
    exec(code, namespace)
    return namespace["kernel"]  # type: ignore[return-value]


class BatchKernel:
    """Evaluates a program for many geometry vectors at once.

    Calling it with a (ncells, ncols) array returns (ncells, nrows).
    """

    def __init__(self, program: StraightLineProgram):
        self.program = program
        self._fn = compile_kernel(program)

    def __call__(self, gvecs: np.ndarray) -> np.ndarray:
        gt = np.ascontiguousarray(np.asarray(gvecs, dtype=float).T)
        y = np.empty((self.program.nrows, gt.shape[1]))
        self._fn(gt, y)
        return y.T


class DenseKernel:
    """Naive contraction with the float mirror (one matrix product)."""

    def __init__(self, tensor: FlattenedReferenceTensor):
        self.tensor = tensor

    def __call__(self, gvecs: np.ndarray) -> np.ndarray:
        return np.asarray(gvecs, dtype=float).dot(self.tensor.values.T)


def check_topological(program: StraightLineProgram) -> bool:
    seen = set()
    for ins in program.instructions:
        if not isinstance(ins, Direct) and ins.src_row not in seen:
            return False
        seen.add(ins.row)
    return len(seen) == program.nrows == len(program.instructions)


def row_cost(ins: Instruction) -> int:
    if isinstance(ins, Scale):
        return 0 if ins.scalar == 1.0 else 1
    return len(ins.terms)


def instruction_rows(program: StraightLineProgram) -> Sequence[int]:
    return [ins.row for ins in program.instructions]
