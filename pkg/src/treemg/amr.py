"""Dynamic mesh refinement.

Two criteria drive the mesh.  A hard-coded one refines the leaf cells along
the heated boundary edge every other cycle until they reach the depth cap,
which keeps the initial vertex count low without polluting the solution.  A
feature-based one measures per vertex the largest absolute second
difference of the solution along the coordinate axes and refines around the
(approximately) ten percent largest indicators, selected by bin sorting:
whole bins are taken from the top until the decile is covered, so marking
is deterministic and never splits a bin.

New vertices are initialized d-linearly by the spacetree; operator and
state rebuilds after a regrid are the solver engines' responsibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spacetree import CellId, Spacetree, VertexId, VertexKind

__all__ = [
    "RefinePolicy",
    "RegridReport",
    "mark_boundary",
    "curvature_indicators",
    "mark_curvature",
    "cells_for_vertices",
    "apply_refinement",
]


@dataclass(frozen=True)
class RefinePolicy:
    boundary_cadence: int = 2
    decile: float = 0.10
    bins: int = 64

    def __post_init__(self):
        if not 0.0 < self.decile < 1.0:
            raise ValueError("decile must lie in (0, 1)")
        if self.boundary_cadence < 1:
            raise ValueError("boundary cadence must be positive")


@dataclass
class RegridReport:
    refined_cells: int
    created_vertices: int

    @property
    def changed(self) -> bool:
        return self.refined_cells > 0


def mark_boundary(tree: Spacetree, cycle: int, policy: RefinePolicy = RefinePolicy()) -> set[CellId]:
    """Leaf cells with a face on the heated edge y = 0, every other cycle."""
    if cycle % policy.boundary_cadence != 0:
        return set()
    marks: set[CellId] = set()
    for l in range(tree.depth, -1, -1):
        if l >= tree.lmax:
            continue
        exists = tree.cells_exist(l)
        refined = tree.refined[l]
        for i in np.nonzero(exists[:, 0] & ~refined[:, 0])[0]:
            marks.add(CellId(l, int(i), 0))
    return marks


def curvature_indicators(tree: Spacetree, level: int) -> np.ndarray:
    """Largest absolute axis-aligned second derivative of u per vertex,
    estimated by second differences over the level's mesh width.

    Only same-level neighbours enter; where a vertex lacks one of the two
    neighbours along an axis that axis is skipped, so no fictitious
    cross-level curvature appears at resolution transitions.  The 1/h^2
    scaling keeps levels comparable: refined regions stay in the running
    where the solution really curves, so meshes grade towards features
    instead of unfolding uniformly.
    """
    u = tree.u[level]
    exists = tree.vertex_kinds(level) != VertexKind.NONE
    inv_h2 = float(9.0**level)
    ind = np.zeros_like(u)
    # x axis
    ok = exists[1:-1, :] & exists[:-2, :] & exists[2:, :]
    d2 = np.abs(u[:-2, :] - 2.0 * u[1:-1, :] + u[2:, :])
    ind[1:-1, :] = np.where(ok, d2, 0.0)
    # y axis
    ok = exists[:, 1:-1] & exists[:, :-2] & exists[:, 2:]
    d2 = np.abs(u[:, :-2] - 2.0 * u[:, 1:-1] + u[:, 2:])
    ind[:, 1:-1] = np.maximum(ind[:, 1:-1], np.where(ok, d2, 0.0))
    return ind * inv_h2


def mark_curvature(tree: Spacetree, policy: RefinePolicy = RefinePolicy()) -> set[VertexId]:
    """Vertices carrying approximately the top decile of the indicator.

    The indicator is evaluated at composite vertices (the finest vertex at
    each position).  Bin sorting over (0, max]: zero indicators never mark,
    and bins are taken whole from the top until the decile of the composite
    vertex count is reached.
    """
    per_level: list[tuple[int, np.ndarray, np.ndarray]] = []
    values = []
    total = 0
    scale = 1.0
    for l in range(tree.lmin, tree.depth + 1):
        scale = max(scale, float(np.abs(tree.u[l]).max()))
    for l in range(tree.lmin, tree.depth + 1):
        comp = tree.composite_mask(l)
        total += int(comp.sum())
        ind = np.where(comp, curvature_indicators(tree, l), 0.0)
        # roundoff of the level's second differences never marks
        floor = 1e-12 * scale * 9.0**l
        ind[ind <= floor] = 0.0
        per_level.append((l, ind, comp))
        vals = ind[comp]
        values.append(vals[vals > 0.0])
    if total == 0:
        return set()
    allvals = np.concatenate(values) if values else np.array([])
    if allvals.size == 0:
        return set()
    top = float(allvals.max())
    if top <= 0.0:
        return set()
    edges = np.linspace(0.0, top, policy.bins + 1)
    counts, _ = np.histogram(allvals, bins=edges)
    want = policy.decile * total
    cum = 0
    cut_bin = policy.bins - 1
    for b in range(policy.bins - 1, -1, -1):
        cum += counts[b]
        cut_bin = b
        if cum >= want:
            break
    threshold = edges[cut_bin]
    marks: set[VertexId] = set()
    for l, ind, comp in per_level:
        sel = comp & (ind > threshold) if threshold > 0.0 else comp & (ind > 0.0)
        for i, j in zip(*np.nonzero(sel)):
            marks.add(VertexId(l, int(i), int(j)))
    return marks


def cells_for_vertices(tree: Spacetree, vertices: set[VertexId]) -> set[CellId]:
    """Unrefined existing cells adjacent to the marked vertices."""
    cells: set[CellId] = set()
    for v in vertices:
        if v.level >= tree.lmax:
            continue
        n = 3**v.level
        for ci in (v.i - 1, v.i):
            for cj in (v.j - 1, v.j):
                if not (0 <= ci < n and 0 <= cj < n):
                    continue
                cell = CellId(v.level, ci, cj)
                if tree.cell_exists(cell) and not tree.is_refined(cell):
                    cells.add(cell)
    return cells


def apply_refinement(tree: Spacetree, cells: set[CellId]) -> RegridReport:
    """Refine the marked cells, coarse levels first."""
    todo = [c for c in sorted(cells) if not tree.is_refined(c) and c.level < tree.lmax]
    made = tree.refine_many(todo)
    return RegridReport(len(todo), len(made))
