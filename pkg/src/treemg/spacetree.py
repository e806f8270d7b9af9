"""Tripartitioned spacetree over the unit square.

The bounding cell (level 0) is recursively cut into 3x3 children.  Every
level is a Cartesian grid; level grids may be ragged because cells refine
individually.  Vertices live on the (3**l + 1)**2 grid of a level and are
classified into interior degrees of freedom, Dirichlet boundary vertices,
hanging vertices (fewer than four adjacent same-level cells) and
coarse-overlapped vertices (all four adjacent cells refined, so a finer
copy carries the solution).

Vertex storage is per-level array stores rather than traversal stacks; the
single-touch property of the depth-first traversal is enforced by contract
and checked by instrumentation counters, not by stack mechanics.  Hanging
vertices are not held persistently: their values are re-interpolated from
the parent level whenever they are needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .discretization import EpsilonField, boundary_value, constant_field, epsilon_cells
from .operators import prolong_values

__all__ = [
    "CellId",
    "VertexId",
    "VertexKind",
    "Spacetree",
    "build_regular",
    "traverse",
    "refine_cell",
    "TraversalCounters",
    "PEANO_CHILD_ORDER",
    "LEX_CHILD_ORDER",
]


@dataclass(frozen=True, order=True)
class CellId:
    level: int
    i: int
    j: int

    def parent(self) -> "CellId":
        return CellId(self.level - 1, self.i // 3, self.j // 3)


@dataclass(frozen=True, order=True)
class VertexId:
    level: int
    i: int
    j: int

    def position(self) -> tuple[float, float]:
        n = 3**self.level
        return (self.i / n, self.j / n)

    def is_c_point(self) -> bool:
        """True when the vertex spatially coincides with one on the parent level."""
        return self.i % 3 == 0 and self.j % 3 == 0


class VertexKind:
    NONE = 0  # no adjacent cell on this level
    INTERIOR_DOF = 1
    DIRICHLET = 2
    HANGING = 3
    COARSE_OVERLAPPED = 4  # all four adjacent cells refined


# Serpentine child order: consecutive children share a face, as a
# space-filling-curve traversal would visit them.  Solver correctness must
# not depend on the order; the lexicographic one exists to assert that.
PEANO_CHILD_ORDER = (
    (0, 0), (1, 0), (2, 0),
    (2, 1), (1, 1), (0, 1),
    (0, 2), (1, 2), (2, 2),
)
LEX_CHILD_ORDER = tuple((a, b) for a in range(3) for b in range(3))


class Spacetree:
    """Adaptive tripartitioned mesh plus the persistent solution field.

    refined[l] is a boolean (3**l, 3**l) array marking refined cells of
    level l.  Cells of level l exist iff their parent is refined (the root
    always exists), so tree closure holds by construction.  The solution u
    is stored per level on the full vertex grid; slots of non-existing
    vertices stay at zero.
    """

    def __init__(self, lmin: int = 1, lmax: int = 2, field: EpsilonField | None = None):
        if lmin < 1:
            raise ValueError("lmin must be at least 1")
        if lmax < lmin:
            raise ValueError("lmax must not be smaller than lmin")
        self.lmin = lmin
        self.lmax = lmax
        self.field = field if field is not None else constant_field(1.0)
        self.refined: list[np.ndarray] = [np.zeros((3**l, 3**l), dtype=bool) for l in range(lmax)]
        self.u: list[np.ndarray] = []
        self.eps: list[np.ndarray] = []
        self._kind_cache: dict[int, np.ndarray] = {}
        self._ensure_level_arrays(0)

    # -- construction ------------------------------------------------------

    def _ensure_level_arrays(self, level: int) -> None:
        while len(self.u) <= level:
            l = len(self.u)
            n = 3**l
            u = np.zeros((n + 1, n + 1))
            # Boundary data holds on every level of the generating system.
            u[:, 0] = 1.0
            self.u.append(u)
            self.eps.append(epsilon_cells(self.field, l))

    def invalidate_kinds(self, level: int | None = None) -> None:
        if level is None:
            self._kind_cache.clear()
        else:
            self._kind_cache.pop(level, None)

    # -- queries -----------------------------------------------------------

    @property
    def depth(self) -> int:
        """Finest level with existing cells."""
        for l in range(self.lmax - 1, -1, -1):
            if self.refined[l].any():
                return l + 1
        return 0

    def cells_exist(self, level: int) -> np.ndarray:
        if level == 0:
            return np.ones((1, 1), dtype=bool)
        return np.repeat(np.repeat(self.refined[level - 1], 3, axis=0), 3, axis=1)

    def cell_exists(self, cell: CellId) -> bool:
        if cell.level == 0:
            return True
        return bool(self.refined[cell.level - 1][cell.i // 3, cell.j // 3])

    def is_refined(self, cell: CellId) -> bool:
        if cell.level >= self.lmax:
            return False
        return bool(self.refined[cell.level][cell.i, cell.j])

    def adjacent_cell_count(self, level: int) -> np.ndarray:
        """Number of existing level cells around each vertex of the level."""
        exists = self.cells_exist(level).astype(np.int8)
        n = 3**level
        count = np.zeros((n + 1, n + 1), dtype=np.int8)
        count[:-1, :-1] += exists
        count[1:, :-1] += exists
        count[:-1, 1:] += exists
        count[1:, 1:] += exists
        return count

    def vertex_kinds(self, level: int) -> np.ndarray:
        """Vertex classification of a level as an int8 array."""
        cached = self._kind_cache.get(level)
        if cached is not None:
            return cached
        n = 3**level
        count = self.adjacent_cell_count(level)
        kinds = np.full((n + 1, n + 1), VertexKind.NONE, dtype=np.int8)
        exists = count > 0
        boundary = np.zeros_like(exists)
        boundary[0, :] = boundary[-1, :] = True
        boundary[:, 0] = boundary[:, -1] = True
        kinds[exists & boundary] = VertexKind.DIRICHLET
        interior = exists & ~boundary
        kinds[interior & (count < 4)] = VertexKind.HANGING
        full = interior & (count == 4)
        if level < self.lmax:
            refined = np.zeros((n + 2, n + 2), dtype=np.int8)
            refined[1:-1, 1:-1] = self.refined[level] if level < len(self.refined) else 0
            overlap = (
                refined[:-1, :-1] + refined[1:, :-1] + refined[:-1, 1:] + refined[1:, 1:]
            ) == 4
            kinds[full & overlap] = VertexKind.COARSE_OVERLAPPED
            kinds[full & ~overlap] = VertexKind.INTERIOR_DOF
        else:
            kinds[full] = VertexKind.INTERIOR_DOF
        self._kind_cache[level] = kinds
        return kinds

    def dof_mask(self, level: int) -> np.ndarray:
        """Vertices carrying an equation: interior DoFs plus overlapped ones."""
        kinds = self.vertex_kinds(level)
        return (kinds == VertexKind.INTERIOR_DOF) | (kinds == VertexKind.COARSE_OVERLAPPED)

    def composite_mask(self, level: int) -> np.ndarray:
        """Vertices owning the solution at this level (not overlapped by finer DoFs)."""
        return self.vertex_kinds(level) == VertexKind.INTERIOR_DOF

    def vertex_kind(self, v: VertexId) -> int:
        return int(self.vertex_kinds(v.level)[v.i, v.j])

    def interior_dof_count(self, level: int) -> int:
        return int((self.vertex_kinds(level) == VertexKind.INTERIOR_DOF).sum())

    def boundary_count(self, level: int) -> int:
        return int((self.vertex_kinds(level) == VertexKind.DIRICHLET).sum())

    # -- refinement --------------------------------------------------------

    def refine(self, cell: CellId) -> set[VertexId] | None:
        """Refine one cell; returns the set of newly created vertices.

        Refining a cell at lmax is a no-op and returns None.  New vertices
        get d-linearly interpolated solution values; boundary vertices get
        the boundary data.
        """
        if not self.cell_exists(cell):
            raise ValueError(f"cell {cell} does not exist")
        if cell.level >= self.lmax:
            return None
        if self.is_refined(cell):
            raise ValueError(f"cell {cell} is already refined")

        child_level = cell.level + 1
        self._ensure_level_arrays(child_level)
        counts_before = self.adjacent_cell_count(child_level)
        self.refined[cell.level][cell.i, cell.j] = True
        self.invalidate_kinds(cell.level)
        self.invalidate_kinds(child_level)
        counts_after = self.adjacent_cell_count(child_level)

        created: set[VertexId] = set()
        new_mask = (counts_before == 0) & (counts_after > 0)
        n = 3**child_level
        for i, j in zip(*np.nonzero(new_mask)):
            created.add(VertexId(child_level, int(i), int(j)))
            x, y = i / n, j / n
            if i == 0 or j == 0 or i == n or j == n:
                self.u[child_level][i, j] = boundary_value(x, y)
            else:
                self.u[child_level][i, j] = self._interpolate_from_parent(child_level, int(i), int(j))
        return created

    def refine_many(self, cells) -> set[VertexId]:
        """Batched refinement, coarse levels first.

        Already-refined cells are skipped, cells at lmax are no-ops, and
        nonexistent cells raise.  New vertices get d-linear values (boundary
        data on the boundary) exactly as single-cell refinement does, but
        each touched level pays for one interpolation pass instead of one
        per cell.
        """
        by_level: dict[int, list[CellId]] = {}
        for cell in cells:
            if not self.cell_exists(cell):
                raise ValueError(f"cell {cell} does not exist")
            if cell.level >= self.lmax:
                continue
            by_level.setdefault(cell.level, []).append(cell)
        created: set[VertexId] = set()
        for l in sorted(by_level):
            child = l + 1
            self._ensure_level_arrays(child)
            before = self.adjacent_cell_count(child)
            touched = False
            for cell in by_level[l]:
                if self.refined[l][cell.i, cell.j]:
                    continue
                self.refined[l][cell.i, cell.j] = True
                touched = True
            if not touched:
                continue
            self.invalidate_kinds(l)
            self.invalidate_kinds(child)
            after = self.adjacent_cell_count(child)
            new_mask = (before == 0) & (after > 0)
            if not new_mask.any():
                continue
            vals = prolong_values(self.u[l])
            n = 3**child
            for i, j in zip(*np.nonzero(new_mask)):
                i, j = int(i), int(j)
                created.add(VertexId(child, i, j))
                if i == 0 or j == 0 or i == n or j == n:
                    self.u[child][i, j] = boundary_value(i / n, j / n)
                else:
                    self.u[child][i, j] = vals[i, j]
        return created

    def _interpolate_from_parent(self, level: int, i: int, j: int) -> float:
        ci, ri = divmod(i, 3)
        cj, rj = divmod(j, 3)
        wa = (1.0 - ri / 3.0, ri / 3.0)
        wb = (1.0 - rj / 3.0, rj / 3.0)
        coarse = self.u[level - 1]
        val = 0.0
        for da in (0, 1):
            if wa[da] == 0.0:
                continue
            for db in (0, 1):
                if wb[db] == 0.0:
                    continue
                val += wa[da] * wb[db] * coarse[ci + da, cj + db]
        return val

    def cell_vertices(self, cell: CellId) -> tuple[VertexId, VertexId, VertexId, VertexId]:
        return (
            VertexId(cell.level, cell.i, cell.j),
            VertexId(cell.level, cell.i + 1, cell.j),
            VertexId(cell.level, cell.i, cell.j + 1),
            VertexId(cell.level, cell.i + 1, cell.j + 1),
        )


def build_regular(levels: int, lmin: int = 1, lmax: int | None = None,
                  field: EpsilonField | None = None) -> Spacetree:
    """Spacetree with every cell refined on levels 0..levels-1.

    The finest level then carries (3**levels - 1)**2 interior degrees of
    freedom.  lmax defaults to the construction depth.
    """
    if levels < 1:
        raise ValueError("need at least one refined level to obtain DoFs")
    tree = Spacetree(lmin=lmin, lmax=levels if lmax is None else lmax, field=field)
    for l in range(levels):
        tree.refined[l][:, :] = True
        tree._ensure_level_arrays(l + 1)
    tree.invalidate_kinds()
    return tree


def refine_cell(tree: Spacetree, cell: CellId) -> set[VertexId] | None:
    return tree.refine(cell)


@dataclass
class TraversalCounters:
    """Instrumentation of one depth-first sweep.

    loads[v] counts first touches, stores[v] last touches.  A correct sweep
    loads and stores every persistent vertex exactly once.
    """

    loads: dict[VertexId, int]
    stores: dict[VertexId, int]

    def max_load_count(self) -> int:
        return max(self.loads.values()) if self.loads else 0


def traverse(
    tree: Spacetree,
    descend_into_cell: Callable | None = None,
    touch_vertex_first_time: Callable | None = None,
    touch_vertex_last_time: Callable | None = None,
    backtrack_from_cell: Callable | None = None,
    child_order: Iterable[tuple[int, int]] = PEANO_CHILD_ORDER,
    count_touches: bool = False,
) -> TraversalCounters | None:
    """Depth-first multiscale traversal of all existing cells.

    Per cell the visitor sees the cell, its four vertices, the parent cell
    and the parent's four vertices.  Each persistent vertex receives exactly
    one first-touch when its first adjacent same-level cell is entered and
    one last-touch after its last adjacent cell has been left.
    """
    counters = TraversalCounters({}, {}) if count_touches else None
    order = tuple(child_order)
    touched: list[np.ndarray] = []
    adjacency: list[np.ndarray] = []
    for l in range(tree.depth + 1):
        n = 3**l
        touched.append(np.zeros((n + 1, n + 1), dtype=np.int8))
        adjacency.append(tree.adjacent_cell_count(l))

    def visit(cell: CellId, parent: CellId | None) -> None:
        verts = tree.cell_vertices(cell)
        lvl = cell.level
        for v in verts:
            touched[lvl][v.i, v.j] += 1
            if touched[lvl][v.i, v.j] == 1:
                if counters is not None:
                    counters.loads[v] = counters.loads.get(v, 0) + 1
                if touch_vertex_first_time is not None:
                    touch_vertex_first_time(v)
        parent_verts = tree.cell_vertices(parent) if parent is not None else None
        if descend_into_cell is not None:
            descend_into_cell(cell, verts, parent, parent_verts)
        if tree.is_refined(cell):
            for a, b in order:
                visit(CellId(lvl + 1, 3 * cell.i + a, 3 * cell.j + b), cell)
        if backtrack_from_cell is not None:
            backtrack_from_cell(cell, verts, parent, parent_verts)
        for v in verts:
            if touched[lvl][v.i, v.j] == adjacency[lvl][v.i, v.j]:
                touched[lvl][v.i, v.j] += 1  # guard against double last-touch
                if counters is not None:
                    counters.stores[v] = counters.stores.get(v, 0) + 1
                if touch_vertex_last_time is not None:
                    touch_vertex_last_time(v)

    visit(CellId(0, 0, 0), None)
    return counters
