"""Adaptive timing of local kernels and global assembly.

Each measurement repeats its workload, doubling the repetition count until a
set of at least ``min_reps`` repetitions used at least ``min_cpu`` seconds of
process CPU time. Local time is one kernel evaluation over a precomputed
batch holding every cell's geometry vector; global time is a full assembly
(geometry, kernel, sparse insertion).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from formopt import __version__
from formopt.assembly import (
    assemble_action,
    assemble_matrix,
    build_dofmap,
    default_coefficients,
    geometry_batch,
    unit_cube_mesh,
    unit_square_mesh,
)
from formopt.form_tensors import FormSpec, build_reference_tensor
from formopt.progir import BatchKernel, generate, generate_direct
from formopt.relations import forest_cost, optimize

log = logging.getLogger(__name__)

MIN_REPS = 10
MIN_CPU_SECONDS = 1.0
DEFAULT_MESH_N = {2: 64, 3: 16}


@dataclass
class Measurement:
    seconds: float  # per repetition
    reps: int
    cpu_total: float

    def to_json(self) -> dict:
        return {"seconds": self.seconds, "reps": self.reps, "cpu_total": self.cpu_total}


def measure(fn: Callable[[], object], min_reps: int = MIN_REPS, min_cpu: float = MIN_CPU_SECONDS) -> Measurement:
    reps = min_reps
    while True:
        start = time.process_time()
        for _ in range(reps):
            fn()
        elapsed = time.process_time() - start
        if elapsed >= min_cpu:
            return Measurement(elapsed / reps, reps, elapsed)
        reps *= 2


@dataclass
class CaseResult:
    spec: FormSpec
    mesh_n: int
    status: str = "ok"
    skip_reason: Optional[str] = None
    num_cells: int = 0
    num_global_dofs: int = 0
    op_counts: Dict[str, int] = field(default_factory=dict)
    optimizer_seconds: float = 0.0
    timings: Dict[str, Measurement] = field(default_factory=dict)

    def speedup(self, what: str) -> Optional[float]:
        naive, opt = self.timings.get(what + "_naive"), self.timings.get(what + "_opt")
        if naive is None or opt is None or opt.seconds <= 0:
            return None
        return naive.seconds / opt.seconds

    def to_json(self) -> dict:
        spec = self.spec
        oc = self.op_counts
        out = {
            "form": spec.form,
            "mode": spec.mode,
            "dim": spec.dim,
            "degree": spec.degree,
            "status": self.status,
            "skip_reason": self.skip_reason,
            "mesh_n": self.mesh_n,
            "num_cells": self.num_cells,
            "num_global_dofs": self.num_global_dofs,
            "nrows": spec.nrows,
            "ncols": spec.ncols,
            "op_counts": oc,
            "op_ratio_ffc_over_ferari": (oc["ffc"] / oc["ferari"]) if oc.get("ferari") else None,
            "op_ratio_base_over_ferari": (oc["base"] / oc["ferari"]) if oc.get("ferari") else None,
            "optimizer_seconds": self.optimizer_seconds,
        }
        for key in ("local_naive", "local_opt", "global_naive", "global_opt"):
            m = self.timings.get(key)
            scope, variant = key.split("_")
            out["%s_time_%s" % (scope, variant)] = m.seconds if m else None
            out[key + "_reps"] = m.reps if m else None
            out[key + "_cpu_total"] = m.cpu_total if m else None
        out["local_speedup"] = self.speedup("local")
        out["global_speedup"] = self.speedup("global")
        return out


def make_mesh(dim: int, n: int):
    return unit_square_mesh(n) if dim == 2 else unit_cube_mesh(n)


def run_case(spec: FormSpec, mesh_n: Optional[int] = None, seed: int = 0, time_budget: float = 600.0,
             min_reps: int = MIN_REPS, min_cpu: float = MIN_CPU_SECONDS, mesh=None, dofmap=None) -> CaseResult:
    mesh_n = DEFAULT_MESH_N[spec.dim] if mesh_n is None else mesh_n
    res = CaseResult(spec, mesh_n)
    t_start = time.perf_counter()
    tensor = build_reference_tensor(spec)
    t0 = time.perf_counter()
    forest = optimize(tensor)
    res.optimizer_seconds = time.perf_counter() - t0
    counts = forest_cost(forest, tensor)
    res.op_counts = counts.to_json()
    if time.perf_counter() - t_start > time_budget:
        res.status, res.skip_reason = "skipped", "optimizer exceeded time budget"
        return res

    naive = BatchKernel(generate_direct(tensor))
    opt = BatchKernel(generate(forest, tensor))
    mesh = mesh if mesh is not None else make_mesh(spec.dim, mesh_n)
    dofmap = dofmap if dofmap is not None else build_dofmap(mesh, spec.degree)
    res.num_cells, res.num_global_dofs = mesh.num_cells, dofmap.num_global_dofs
    rng = np.random.default_rng(seed)
    coeffs = default_coefficients(spec, mesh, dofmap, rng)
    u = rng.uniform(-1.0, 1.0, dofmap.num_global_dofs) if spec.mode == "action" else None
    gbatch = geometry_batch(spec, mesh, dofmap, coeffs, u)

    def glob(kernel):
        if spec.mode == "matrix":
            return lambda: assemble_matrix(mesh, dofmap, spec, kernel, coeffs)
        return lambda: assemble_action(mesh, dofmap, spec, kernel, coeffs, u)

    # one probe run of each workload to project the cost of the full protocol
    probe_start = time.perf_counter()
    glob(naive)()
    probe = time.perf_counter() - probe_start
    projected = 4 * max(min_reps * probe, min_cpu) + (time.perf_counter() - t_start)
    if projected > time_budget:
        res.status = "skipped"
        res.skip_reason = "projected %.0f s exceeds time budget %.0f s" % (projected, time_budget)
        return res

    res.timings["local_naive"] = measure(lambda: naive(gbatch), min_reps, min_cpu)
    res.timings["local_opt"] = measure(lambda: opt(gbatch), min_reps, min_cpu)
    res.timings["global_naive"] = measure(glob(naive), min_reps, min_cpu)
    res.timings["global_opt"] = measure(glob(opt), min_reps, min_cpu)
    log.info("%s: local x%.2f global x%.2f", spec.label(), res.speedup("local"), res.speedup("global"))
    return res


def benchmark(specs: Sequence[FormSpec], mesh_n: Optional[int] = None, seed: int = 0, time_budget: float = 600.0,
              min_reps: int = MIN_REPS, min_cpu: float = MIN_CPU_SECONDS,
              progress: Optional[Callable[[CaseResult], None]] = None) -> dict:
    """Run cases one after another and return the report dictionary."""
    meshes: Dict[tuple, object] = {}
    dofmaps: Dict[tuple, object] = {}
    cases: List[CaseResult] = []
    for spec in specs:
        n = DEFAULT_MESH_N[spec.dim] if mesh_n is None else mesh_n
        mkey = (spec.dim, n)
        if mkey not in meshes:
            meshes[mkey] = make_mesh(spec.dim, n)
        dkey = mkey + (spec.degree,)
        if dkey not in dofmaps:
            dofmaps[dkey] = build_dofmap(meshes[mkey], spec.degree)
        res = run_case(spec, n, seed, time_budget, min_reps, min_cpu, meshes[mkey], dofmaps[dkey])
        cases.append(res)
        if progress:
            progress(res)
    return make_report(cases, seed, min_reps, min_cpu)


def make_report(cases: Sequence[CaseResult], seed: int, min_reps: int = MIN_REPS,
                min_cpu: float = MIN_CPU_SECONDS) -> dict:
    records = [c.to_json() for c in cases]
    return {
        "tool": "formopt",
        "version": __version__,
        "seed": seed,
        "protocol": {
            "min_reps": min_reps,
            "min_cpu_seconds": min_cpu,
            "clock": "process_time",
            "kernel": "unrolled straight-line code compiled to batched numpy column operations",
            "naive_kernel": "zero-skipping direct dot products",
            "local_batch": "geometry vectors of every mesh cell, precomputed once",
        },
        "cases": records,
        "columns_vs_global_speedup": [
            {"form": r["form"], "mode": r["mode"], "dim": r["dim"], "degree": r["degree"],
             "ncols": r["ncols"], "global_speedup": r["global_speedup"]}
            for r in records if r["status"] == "ok"
        ],
    }


def format_report(report: dict) -> str:
    head = ("%-22s %-6s %1s %1s %8s %8s %8s %6s %6s %8s %8s %8s" %
            ("form", "mode", "d", "k", "base", "ffc", "ferari", "ffc/fe", "ncols", "local_x", "global_x", "opt_s"))
    lines = ["# seed %s, >= %d reps and >= %.1f s CPU per measurement" %
             (report["seed"], report["protocol"]["min_reps"], report["protocol"]["min_cpu_seconds"]), head]

    def fmt(x, spec="%8.2f"):
        return spec % x if x is not None else "%8s" % "-"

    for r in report["cases"]:
        oc = r["op_counts"]
        lines.append("%-22s %-6s %1d %1d %8d %8d %8d %6.2f %6d %s %s %8.2f%s" % (
            r["form"], r["mode"], r["dim"], r["degree"], oc["base"], oc["ffc"], oc["ferari"],
            r["op_ratio_ffc_over_ferari"] or 0.0, r["ncols"], fmt(r["local_speedup"]), fmt(r["global_speedup"]),
            r["optimizer_seconds"], "" if r["status"] == "ok" else "  SKIPPED: %s" % r["skip_reason"]))
    return "\n".join(lines) + "\n"
