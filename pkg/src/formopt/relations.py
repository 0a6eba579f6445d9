"""Complexity-reducing relations between rows and the minimum spanning forest.

Every row of the reference matrix is a vertex; a virtual root (index -1)
stands for "compute this dot product from scratch". Edge weights count
multiply-add pairs:

* root -> row: number of nonzeros in the row,
* row <-> row: 0 if equal, 1 if collinear, else the Hamming distance.

A minimum spanning tree of this augmented graph is a minimum spanning forest
of the rows once the root is dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from formopt.form_tensors import FlattenedReferenceTensor

ROOT = -1

EQUAL, COLLINEAR, HAMMING = 0, 1, 2
_KIND_NAMES = {EQUAL: "equal", COLLINEAR: "collinear", HAMMING: "hamming"}


@dataclass(frozen=True)
class Relation:
    """How to compute one row's dot product from its parent's.

    ``scalar`` is set for collinear relations (row = scalar * parent);
    ``diff_positions`` for Hamming relations.
    """

    kind: str
    cost: int
    scalar: Optional[Fraction] = None
    diff_positions: Tuple[int, ...] = ()

    def to_json(self) -> dict:
        out = {"kind": self.kind, "cost": self.cost}
        if self.scalar is not None:
            out["scalar"] = str(self.scalar)
        if self.kind == "hamming":
            out["diff_positions"] = list(self.diff_positions)
        return out


def best_relation(src: Sequence, dst: Sequence) -> Relation:
    """Cheapest relation computing ``dst . g`` from ``src . g``.

    Collinear scalars satisfy ``dst = scalar * src``.
    """
    if len(src) != len(dst):
        raise ValueError("row lengths differ: %d vs %d" % (len(src), len(dst)))
    src = [Fraction(x) for x in src]
    dst = [Fraction(x) for x in dst]
    if src == dst:
        return Relation("equal", 0)
    p = next((i for i, x in enumerate(src) if x != 0), None)
    if p is not None and dst[p] != 0:
        c = dst[p] / src[p]
        if all(b == c * a for a, b in zip(src, dst)):
            return Relation("collinear", 1, scalar=c)
    diff = tuple(i for i, (a, b) in enumerate(zip(src, dst)) if a != b)
    return Relation("hamming", len(diff), diff_positions=diff)


def direct_relation(row: Sequence) -> Relation:
    return Relation("direct", sum(1 for x in row if x != 0))


class RelationGraph:
    """Complete graph over the rows plus the virtual root.

    ``weights[i, j]`` and ``kinds[i, j]`` describe the row-row edges;
    ``root_weights[i]`` is the direct cost of row i. Relation objects are
    materialised on demand with :meth:`relation`.
    """

    def __init__(self, rows: Sequence[Sequence[Fraction]], weights: np.ndarray, kinds: np.ndarray,
                 root_weights: np.ndarray):
        self.rows = rows
        self.weights = weights
        self.kinds = kinds
        self.root_weights = root_weights

    @property
    def nrows(self) -> int:
        return len(self.rows)

    @property
    def nvertices(self) -> int:
        return self.nrows + 1

    def weight(self, i: int, j: int) -> int:
        if i == ROOT:
            return int(self.root_weights[j])
        if j == ROOT:
            return int(self.root_weights[i])
        return int(self.weights[i, j])

    def relation(self, parent: int, child: int) -> Relation:
        if parent == ROOT:
            return direct_relation(self.rows[child])
        rel = best_relation(self.rows[parent], self.rows[child])
        assert rel.cost == self.weights[parent, child], (parent, child)
        return rel


def _row_keys(rows: Sequence[Sequence[Fraction]]):
    """Integer value ids per entry plus equality and direction keys per row."""
    ids: Dict[Fraction, int] = {Fraction(0): 0}
    coded = np.zeros((len(rows), len(rows[0]) if rows else 0), dtype=np.int64)
    eq_key, dir_key = [], []
    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            if x != 0:
                coded[i, j] = ids.setdefault(x, len(ids))
        eq_key.append(tuple(coded[i]))
        lead = next((x for x in row if x != 0), None)
        dir_key.append(None if lead is None else tuple(x / lead for x in row))
    return coded, eq_key, dir_key


def build_graph(tensor_or_rows) -> RelationGraph:
    """Relation graph of a tensor (or of a plain list of rational rows)."""
    if isinstance(tensor_or_rows, FlattenedReferenceTensor):
        rows = [tensor_or_rows.row(i) for i in range(tensor_or_rows.nrows)]
    else:
        rows = [tuple(Fraction(x) for x in r) for r in tensor_or_rows]
    n = len(rows)
    coded, eq_key, dir_key = _row_keys(rows)
    nz = coded != 0
    root_weights = nz.sum(axis=1).astype(np.int64)

    weights = np.empty((n, n), dtype=np.int64)
    block = max(1, int(4_000_000 // max(1, n * coded.shape[1])))
    for start in range(0, n, block):
        stop = min(n, start + block)
        weights[start:stop] = (coded[start:stop, None, :] != coded[None, :, :]).sum(axis=2)
    kinds = np.full((n, n), HAMMING, dtype=np.int8)

    # equal and collinear classes via hashing of exact keys
    for keyset, kind, cost in ((dir_key, COLLINEAR, 1), (eq_key, EQUAL, 0)):
        groups: Dict[object, List[int]] = {}
        for i, key in enumerate(keyset):
            if key is not None:
                groups.setdefault(key, []).append(i)
        for members in groups.values():
            if len(members) > 1:
                idx = np.array(members)
                sub = np.ix_(idx, idx)
                weights[sub] = np.minimum(weights[sub], cost)
                kinds[sub] = kind
    np.fill_diagonal(weights, 0)
    np.fill_diagonal(kinds, EQUAL)
    return RelationGraph(rows, weights, kinds, root_weights)


@dataclass
class DependencyForest:
    parent: List[int]
    relations: List[Relation]
    topo_order: List[int]
    total_cost: int
    row_labels: List[Tuple[int, ...]] = field(default_factory=list)

    @property
    def nrows(self) -> int:
        return len(self.parent)

    def children(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {ROOT: []}
        for i in range(self.nrows):
            out.setdefault(i, [])
        for child, par in enumerate(self.parent):
            out[par].append(child)
        return out

    def roots(self) -> List[int]:
        return [i for i, p in enumerate(self.parent) if p == ROOT]


def minimum_spanning_forest(graph: RelationGraph, row_labels=None) -> DependencyForest:
    """Prim's algorithm from the virtual root.

    Among equal-weight candidate edges the lexicographically smallest
    (parent, child) pair wins, with the root ordered first.
    """
    n = graph.nrows
    weights = graph.weights
    best_w = graph.root_weights.astype(np.int64).copy()
    best_p = np.full(n, ROOT, dtype=np.int64)
    in_tree = np.zeros(n, dtype=bool)
    big = np.iinfo(np.int64).max
    stride = n + 2
    parent = [ROOT] * n
    for _ in range(n):
        key = np.where(in_tree, big, (best_w * stride + (best_p + 1)) * stride + np.arange(n))
        v = int(np.argmin(key))
        in_tree[v] = True
        parent[v] = int(best_p[v])
        w = weights[v]
        better = ~in_tree & ((w < best_w) | ((w == best_w) & (v < best_p)))
        best_w = np.where(better, w, best_w)
        best_p = np.where(better, v, best_p)

    relations = [graph.relation(parent[i], i) for i in range(n)]
    forest = DependencyForest(parent, relations, [], sum(r.cost for r in relations),
                              list(row_labels) if row_labels is not None else [])
    forest.topo_order = _preorder(forest)
    return forest


def _preorder(forest: DependencyForest) -> List[int]:
    children = forest.children()
    order: List[int] = []
    stack = list(reversed(children[ROOT]))
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(reversed(children[v]))
    if len(order) != forest.nrows:
        raise ValueError("parent array contains a cycle")
    return order


def optimize(tensor: FlattenedReferenceTensor) -> DependencyForest:
    return minimum_spanning_forest(build_graph(tensor), tensor.row_labels)


@dataclass(frozen=True)
class OpCounts:
    maps: int
    base: int
    ffc: int

    def to_json(self) -> dict:
        return {"base": self.base, "ffc": self.ffc, "ferari": self.maps}


def forest_cost(forest: DependencyForest, tensor: FlattenedReferenceTensor) -> OpCounts:
    """(optimized MAPs, dense base count, zero-skipping count)."""
    return OpCounts(maps=forest.total_cost, base=tensor.nrows * tensor.ncols, ffc=tensor.nnz())
