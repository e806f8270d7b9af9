"""Inter-grid transfer operators and coarse-grid stencils.

Two flavours exist.  The geometric flavour uses d-linear prolongation with
its transpose as restriction and rediscretized coarse stencils.  The
operator-dependent flavour builds prolongation weights per coarse vertex by
collapsing the fine stencils along coarse cell faces (identity on c-points,
lumped 1D solves on face points, exact local solves on interior points),
uses the transpose as restriction and Ritz-Galerkin coarse stencils
A_c = R A P.

The auxiliary damping solver additionally needs a smoothed restriction
R~ = omega * R A diag(A)^-1, composed as stencils and truncated to the 7x7
footprint of the tripartitioning transfer operators.  By default it is
built from the unit-coefficient operator on every level, which removes the
material parameter from the damping term on elements with constant
coefficient.

Array convention: vertex fields of a level with n cells per axis are
(n+1, n+1) arrays indexed [i, j], i along x.  Stencil tables are
(n+1, n+1, 3, 3) with table[i, j, a, b] coupling vertex (i, j) to
(i+a-1, j+b-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import ELEMENT_MATRIX_UNIT, CORNER_OFFSETS, interior_stencil

__all__ = [
    "Stencil",
    "geometric_prolongation",
    "prolongation_weight",
    "prolong_values",
    "restrict_dlinear",
    "inject",
    "ElementOperator",
    "TableOperator",
    "assemble_stencil_table",
    "boxmg_prolongation",
    "ritz_galerkin_coarse",
    "geometric_p_table",
    "smoothed_restriction",
    "smoothed_restriction_table",
    "TransferOps",
]


@dataclass(frozen=True)
class Stencil:
    """Fixed-footprint coefficient table anchored at its centre.

    Operator stencils have half-width 1 (3x3); transfer and smoothed
    stencils have half-width 3 (7x7) so they reach across one
    tripartitioned cell.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] % 2 == 0:
            raise ValueError("stencil must be an odd square table")
        if v.shape[0] not in (3, 7):
            raise ValueError("stencil half-width must be 1 or 3")
        object.__setattr__(self, "values", v)

    @property
    def half_width(self) -> int:
        return self.values.shape[0] // 2

    def __getitem__(self, offset: tuple[int, int]) -> float:
        a, b = offset
        w = self.half_width
        return float(self.values[a + w, b + w])


def prolongation_weight(a: int, b: int) -> float:
    """d-linear weight of a coarse vertex at fine offset (a, b)."""
    return max(0.0, 1.0 - abs(a) / 3.0) * max(0.0, 1.0 - abs(b) / 3.0)


def geometric_prolongation() -> Stencil:
    """Bilinear interpolation weights over the 7x7 fine footprint."""
    offs = np.arange(-3, 4)
    w = np.maximum(0.0, 1.0 - np.abs(offs) / 3.0)
    return Stencil(np.outer(w, w))


# 1D d-linear weights at fine offsets -2..2 (the +-3 weights vanish).
_W5 = np.array([1.0, 2.0, 3.0, 2.0, 1.0]) / 3.0


def _prolong1d(arr: np.ndarray, axis: int) -> np.ndarray:
    """d-linear refinement of one axis, coarse (m+1) -> fine (3m+1)."""
    arr = np.moveaxis(arr, axis, 0)
    m = arr.shape[0] - 1
    nf = 3 * m
    q, r = np.divmod(np.arange(nf + 1), 3)
    qn = np.minimum(q + 1, m)
    wl = 1.0 - r / 3.0
    shape = (nf + 1,) + arr.shape[1:]
    out = np.empty(shape)
    out[:] = wl.reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[q]
    out += (1.0 - wl).reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[qn]
    return np.moveaxis(out, 0, axis)


def _restrict1d(arr: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of d-linear refinement along one axis, fine -> coarse."""
    arr = np.moveaxis(arr, axis, 0)
    nf = arr.shape[0] - 1
    m = nf // 3
    out = np.zeros((m + 1,) + arr.shape[1:])
    for off, w in zip(range(-2, 3), _W5):
        lo = (max(0, -off) + 2) // 3
        hi = m - (max(0, off) + 2) // 3
        idx = 3 * np.arange(lo, hi + 1) + off
        out[lo : hi + 1] += w * arr[idx]
    return np.moveaxis(out, 0, axis)


def prolong_values(coarse: np.ndarray) -> np.ndarray:
    """d-linear interpolation of a coarse vertex field to the next level."""
    return _prolong1d(_prolong1d(coarse, 0), 1)


def restrict_dlinear(fine: np.ndarray) -> np.ndarray:
    """Accumulating transpose of d-linear prolongation."""
    return _restrict1d(_restrict1d(fine, 0), 1)


def inject(fine: np.ndarray) -> np.ndarray:
    """Values of the fine field at the spatially coinciding coarse vertices."""
    return fine[::3, ::3]


# -- level operators --------------------------------------------------------


def apply_constant_stencil(x: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    """Nine-point stencil with constant coefficients, zero-extended rows.

    Rows at the grid border use the full stencil against zero-extended
    neighbours; callers mask rows they do not own.
    """
    out = np.zeros_like(x)
    n1 = x.shape[0]
    for a in range(3):
        for b in range(3):
            c = stencil[a, b]
            if c == 0.0:
                continue
            src_i = slice(max(0, a - 1), n1 + min(0, a - 1))
            src_j = slice(max(0, b - 1), n1 + min(0, b - 1))
            dst_i = slice(max(0, 1 - a), n1 + min(0, 1 - a))
            dst_j = slice(max(0, 1 - b), n1 + min(0, 1 - b))
            out[dst_i, dst_j] += c * x[src_i, src_j]
    return out


class ElementOperator:
    """Vertex-stencil operator assembled on the fly from per-cell material
    samples.  eps holds one (possibly zero) coefficient per cell of the
    level; zero marks cells that do not exist.  For a uniform coefficient
    the application collapses to the constant nine-point stencil at
    interior vertices (border rows of that fast path are full-stencil
    against zero-extension; the engines never consume them)."""

    def __init__(self, eps: np.ndarray):
        self.eps = eps
        self.n = eps.shape[0]
        first = float(eps.flat[0])
        self.const_eps = first if first > 0.0 and np.all(eps == first) else None

    def apply(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        if self.const_eps is not None:
            return apply_constant_stencil(x, interior_stencil(self.const_eps))
        out = np.zeros_like(x)
        for a, (a0, a1) in enumerate(CORNER_OFFSETS):
            acc = np.zeros((n, n))
            for b, (b0, b1) in enumerate(CORNER_OFFSETS):
                acc += ELEMENT_MATRIX_UNIT[a, b] * x[b0 : b0 + n, b1 : b1 + n]
            out[a0 : a0 + n, a1 : a1 + n] += self.eps * acc
        return out

    def diag(self) -> np.ndarray:
        cached = getattr(self, "_diag", None)
        if cached is not None:
            return cached
        n = self.n
        out = np.zeros((n + 1, n + 1))
        for a, (a0, a1) in enumerate(CORNER_OFFSETS):
            out[a0 : a0 + n, a1 : a1 + n] += ELEMENT_MATRIX_UNIT[a, a] * self.eps
        self._diag = out
        return out

    def table(self) -> np.ndarray:
        return assemble_stencil_table(self.eps)

    def stencil_at(self, i: int, j: int) -> np.ndarray:
        n = self.n
        s = np.zeros((3, 3))
        for a, (a0, a1) in enumerate(CORNER_OFFSETS):
            ci, cj = i - a0, j - a1
            if not (0 <= ci < n and 0 <= cj < n):
                continue
            eps = self.eps[ci, cj]
            if eps == 0.0:
                continue
            for b, (b0, b1) in enumerate(CORNER_OFFSETS):
                s[b0 - a0 + 1, b1 - a1 + 1] += eps * ELEMENT_MATRIX_UNIT[a, b]
        return s

    def element_matrix_at(self, ci: int, cj: int) -> np.ndarray:
        return self.eps[ci, cj] * ELEMENT_MATRIX_UNIT


class TableOperator:
    """Operator stored as an explicit per-vertex 3x3 stencil table."""

    def __init__(self, table: np.ndarray):
        self.tbl = table
        self.n = table.shape[0] - 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        out = np.zeros_like(x)
        for a in range(3):
            for b in range(3):
                src_i = slice(max(0, a - 1), n + 1 + min(0, a - 1))
                src_j = slice(max(0, b - 1), n + 1 + min(0, b - 1))
                dst_i = slice(max(0, 1 - a), n + 1 + min(0, 1 - a))
                dst_j = slice(max(0, 1 - b), n + 1 + min(0, 1 - b))
                out[dst_i, dst_j] += self.tbl[dst_i, dst_j, a, b] * x[src_i, src_j]
        return out

    def diag(self) -> np.ndarray:
        return self.tbl[:, :, 1, 1]

    def table(self) -> np.ndarray:
        return self.tbl

    def stencil_at(self, i: int, j: int) -> np.ndarray:
        return self.tbl[i, j]


def assemble_stencil_table(eps: np.ndarray) -> np.ndarray:
    """Per-vertex stencils summed from adjacent element matrices.

    Vertices next to missing cells (boundary, hanging) receive the
    truncated rows of their remaining elements.
    """
    n = eps.shape[0]
    tbl = np.zeros((n + 1, n + 1, 3, 3))
    for a, (a0, a1) in enumerate(CORNER_OFFSETS):
        for b, (b0, b1) in enumerate(CORNER_OFFSETS):
            tbl[a0 : a0 + n, a1 : a1 + n, b0 - a0 + 1, b1 - a1 + 1] += (
                ELEMENT_MATRIX_UNIT[a, b] * eps
            )
    return tbl


# -- operator-dependent prolongation ----------------------------------------


def _gather_vertex(arr: np.ndarray, oi: int, oj: int, nc: int) -> np.ndarray:
    """arr sampled at fine positions 3*v + (oi, oj) for all coarse v.

    Out-of-range samples read as zero.
    """
    nf = arr.shape[0] - 1
    idx_i = 3 * np.arange(nc + 1) + oi
    idx_j = 3 * np.arange(nc + 1) + oj
    vi = (idx_i >= 0) & (idx_i <= nf)
    vj = (idx_j >= 0) & (idx_j <= nf)
    out_shape = (nc + 1, nc + 1) + arr.shape[2:]
    out = np.zeros(out_shape, dtype=arr.dtype)
    sub = arr[np.ix_(idx_i[vi], idx_j[vj])]
    out[np.ix_(vi, vj)] = sub
    return out


def _solve_gamma(a_m1, a_01, a_p1, a_m2, a_02, a_p2, active):
    """Lumped 1D interpolation solves for the two face points of an edge.

    Point 1 sits next to the 'low' c-point, point 2 next to the 'high' one.
    Returns (w_low_1, w_low_2, w_high_1, w_high_2).
    """
    det = a_01 * a_02 - a_p1 * a_m2
    scale = np.abs(a_01 * a_02) + np.abs(a_p1 * a_m2)
    bad = active & (np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300))
    if bad.any():
        raise ArithmeticError("degenerate collapsed stencil in face-point solve")
    det = np.where(active, det, 1.0)
    wl1 = np.where(active, (-a_m1) * a_02 / det, 0.0)
    wl2 = np.where(active, a_m2 * a_m1 / det, 0.0)
    wh1 = np.where(active, a_p1 * a_p2 / det, 0.0)
    wh2 = np.where(active, a_01 * (-a_p2) / det, 0.0)
    return wl1, wl2, wh1, wh2


def boxmg_prolongation(fine_table: np.ndarray, refined: np.ndarray,
                       fine_kinds: np.ndarray | None = None,
                       hanging_kind: int = 3) -> np.ndarray:
    """Operator-dependent prolongation weights per coarse vertex.

    fine_table holds the raw assembled fine stencils, refined the boolean
    coarse-cell mask below which fine cells exist.  Weights are the
    identity on c-points; on face points they come from the stencil lumped
    along the face normal; interior points solve the local 4x4 system
    A P e = 0 exactly.  Weights targeting hanging fine vertices are
    replaced by the d-linear ones, matching the interpolation used for
    hanging-vertex values.

    Returns a (nc+1, nc+1, 7, 7) table of weights at fine offsets -3..3.
    """
    nc = refined.shape[0]
    nf = 3 * nc
    p = np.zeros((nc + 1, nc + 1, 7, 7))

    # c-points: identity.
    p[:, :, 3, 3] = 1.0

    cell_i = np.arange(nc)
    vert_j = np.arange(nc + 1)

    # Horizontal edges run along x between c-points (I,J) and (I+1,J); the
    # face normal is y, so the stencil is lumped over the y offsets.
    active_h = np.zeros((nc, nc + 1), dtype=bool)
    active_h[:, 1:] |= refined
    active_h[:, :-1] |= refined
    g1 = fine_table[1::3, ::3].sum(axis=3)  # (nc, nc+1, 3) lumped over dy
    g2 = fine_table[2::3, ::3].sum(axis=3)
    wl1_h, wl2_h, wh1_h, wh2_h = _solve_gamma(
        g1[..., 0], g1[..., 1], g1[..., 2], g2[..., 0], g2[..., 1], g2[..., 2], active_h
    )

    # Vertical edges: normal is x, lump over the x offsets.
    active_v = np.zeros((nc + 1, nc), dtype=bool)
    active_v[1:, :] |= refined
    active_v[:-1, :] |= refined
    h1 = fine_table[::3, 1::3].sum(axis=2)  # (nc+1, nc, 3) lumped over dx
    h2 = fine_table[::3, 2::3].sum(axis=2)
    wl1_v, wl2_v, wh1_v, wh2_v = _solve_gamma(
        h1[..., 0], h1[..., 1], h1[..., 2], h2[..., 0], h2[..., 1], h2[..., 2], active_v
    )

    # Scatter face-point weights.  Horizontal edge (I, J): fine points
    # (3I+1, 3J) and (3I+2, 3J); low c-point (I, J), high (I+1, J).
    p[:-1, :, 4, 3] = np.where(active_h, wl1_h, p[:-1, :, 4, 3])
    p[:-1, :, 5, 3] = np.where(active_h, wl2_h, p[:-1, :, 5, 3])
    p[1:, :, 2, 3] = np.where(active_h, wh2_h, p[1:, :, 2, 3])
    p[1:, :, 1, 3] = np.where(active_h, wh1_h, p[1:, :, 1, 3])
    p[:, :-1, 3, 4] = np.where(active_v, wl1_v, p[:, :-1, 3, 4])
    p[:, :-1, 3, 5] = np.where(active_v, wl2_v, p[:, :-1, 3, 5])
    p[:, 1:, 3, 2] = np.where(active_v, wh2_v, p[:, 1:, 3, 2])
    p[:, 1:, 3, 1] = np.where(active_v, wh1_v, p[:, 1:, 3, 1])

    # Interior points, cell by cell (vectorized over refined cells).  The
    # four interior points of a refined coarse cell couple only to each
    # other and to the cell's boundary points.
    ci, cj = np.nonzero(refined)
    if ci.size:
        base_i = 3 * ci
        base_j = 3 * cj
        f_off = ((1, 1), (2, 1), (1, 2), (2, 2))
        m = ci.size
        a_ff = np.zeros((m, 4, 4))
        rhs = np.zeros((m, 4, 4))  # one column per coarse corner of the cell

        # Known boundary weights of the patch for each of the 4 corners.
        # Patch-local coordinates (p, q) in 0..3.
        known = np.zeros((m, 4, 4, 4))  # [cell, p, q, corner] (interior slots unused)
        corners = ((0, 0), (3, 0), (0, 3), (3, 3))
        for c, (cp, cq) in enumerate(corners):
            known[:, cp, cq, c] = 1.0
        # Bottom/top edges (horizontal): points (1,0),(2,0),(1,3),(2,3).
        for q, edge_j in ((0, 0), (3, 1)):
            ej = cj + edge_j
            known[:, 1, q, 0 + 2 * edge_j] = wl1_h[ci, ej]
            known[:, 2, q, 0 + 2 * edge_j] = wl2_h[ci, ej]
            known[:, 1, q, 1 + 2 * edge_j] = wh1_h[ci, ej]
            known[:, 2, q, 1 + 2 * edge_j] = wh2_h[ci, ej]
        # Left/right edges (vertical): points (0,1),(0,2),(3,1),(3,2).
        for pcoord, edge_i in ((0, 0), (3, 1)):
            ei = ci + edge_i
            known[:, pcoord, 1, 0 + edge_i] = wl1_v[ei, cj]
            known[:, pcoord, 2, 0 + edge_i] = wl2_v[ei, cj]
            known[:, pcoord, 1, 2 + edge_i] = wh1_v[ei, cj]
            known[:, pcoord, 2, 2 + edge_i] = wh2_v[ei, cj]

        for r, (fp, fq) in enumerate(f_off):
            stn = fine_table[base_i + fp, base_j + fq]  # (m, 3, 3)
            for da in (-1, 0, 1):
                for db in (-1, 0, 1):
                    tp, tq = fp + da, fq + db
                    coeff = stn[:, da + 1, db + 1]
                    if (tp, tq) in f_off:
                        a_ff[:, r, f_off.index((tp, tq))] += coeff
                    else:
                        rhs[:, r, :] -= coeff[:, None] * known[:, tp, tq, :]
        sol = np.linalg.solve(a_ff, rhs)  # (m, 4 points, 4 corners)

        for c, (cp, cq) in enumerate(corners):
            wi = ci + cp // 3
            wj = cj + cq // 3
            for r, (fp, fq) in enumerate(f_off):
                off_i = base_i + fp - 3 * wi + 3
                off_j = base_j + fq - 3 * wj + 3
                p[wi, wj, off_i, off_j] = sol[:, r, c]

    # Hanging fine targets interpolate d-linearly instead.
    if fine_kinds is not None:
        hang = fine_kinds == hanging_kind
        for oi in range(-3, 4):
            for oj in range(-3, 4):
                w = prolongation_weight(oi, oj)
                tgt = _gather_vertex(hang.astype(float), oi, oj, nc) > 0.5
                if tgt.any():
                    p[:, :, oi + 3, oj + 3] = np.where(tgt, w, p[:, :, oi + 3, oj + 3])

    # Drop weights pointing outside the fine grid.
    for oi in range(-3, 4):
        for oj in range(-3, 4):
            idx_i = 3 * np.arange(nc + 1) + oi
            idx_j = 3 * np.arange(nc + 1) + oj
            bad_i = (idx_i < 0) | (idx_i > nf)
            bad_j = (idx_j < 0) | (idx_j > nf)
            if bad_i.any():
                p[bad_i, :, oi + 3, oj + 3] = 0.0
            if bad_j.any():
                p[:, bad_j, oi + 3, oj + 3] = 0.0
    return p


def geometric_p_table(nc: int) -> np.ndarray:
    """Constant d-linear weights in the per-vertex table layout."""
    base = geometric_prolongation().values
    return np.broadcast_to(base, (nc + 1, nc + 1, 7, 7))


def ritz_galerkin_coarse(fine_table_masked: np.ndarray, p_table: np.ndarray) -> np.ndarray:
    """Coarse stencil table A_c = R A P from fine stencils and P weights.

    fine_table_masked must have rows zeroed at vertices without test
    functions (Dirichlet, hanging); restriction only gathers residuals from
    equation-carrying vertices.  R = P^T.
    """
    nc = p_table.shape[0] - 1
    out = np.zeros((nc + 1, nc + 1, 3, 3))
    pad = np.zeros((nc + 3, nc + 3, 7, 7))
    pad[1:-1, 1:-1] = p_table
    for oi in range(-2, 3):
        for oj in range(-2, 3):
            r_w = p_table[:, :, oi + 3, oj + 3]
            if not np.any(r_w):
                continue
            arow = _gather_vertex(fine_table_masked, oi, oj, nc)  # (nc+1,nc+1,3,3)
            for si in (-1, 0, 1):
                for sj in (-1, 0, 1):
                    acoef = arow[:, :, si + 1, sj + 1]
                    ti, tj = oi + si, oj + sj
                    for dwi in (-1, 0, 1):
                        pi = ti - 3 * dwi
                        if not -3 <= pi <= 3:
                            continue
                        for dwj in (-1, 0, 1):
                            pj = tj - 3 * dwj
                            if not -3 <= pj <= 3:
                                continue
                            p_w = pad[1 + dwi : nc + 2 + dwi, 1 + dwj : nc + 2 + dwj,
                                      pi + 3, pj + 3]
                            out[:, :, dwi + 1, dwj + 1] += r_w * acoef * p_w
    return out


# -- smoothed auxiliary restriction -----------------------------------------


def smoothed_restriction(omega: float, truncate: bool = True) -> np.ndarray:
    """Stencil of omega * R A diag(A)^-1 for the unit-coefficient operator.

    The raw composition lives on a 9x9 footprint; truncation keeps the 7x7
    transfer footprint and drops anything outside it without
    renormalizing.  (For the operators at hand nothing nonzero falls
    outside, so truncation removes exact zeros only.)
    """
    r7 = geometric_prolongation().values
    a1 = interior_stencil(1.0)
    inv_diag = 3.0 / 8.0
    raw = np.zeros((9, 9))
    for ji in range(-3, 4):
        for jj in range(-3, 4):
            w = r7[ji + 3, jj + 3]
            if w == 0.0:
                continue
            for si in (-1, 0, 1):
                for sj in (-1, 0, 1):
                    raw[ji + si + 4, jj + sj + 4] += w * a1[si + 1, sj + 1] * inv_diag
    raw *= omega
    return raw[1:-1, 1:-1] if truncate else raw


def smoothed_restriction_table(p_table: np.ndarray, omega: float,
                               fine_table: np.ndarray | None = None,
                               fine_diag: np.ndarray | None = None) -> np.ndarray:
    """Per-vertex smoothed restriction weights.

    Composes the given restriction weights (transpose of p_table) with
    A diag(A)^-1.  With fine_table None the unit-coefficient operator is
    used, which is the default for the damping term.  Truncated to 7x7.
    """
    nc = p_table.shape[0] - 1
    out = np.zeros((nc + 1, nc + 1, 7, 7))
    if fine_table is None:
        a1 = interior_stencil(1.0)
        inv = 3.0 / 8.0
        for ji in range(-3, 4):
            for jj in range(-3, 4):
                w = p_table[:, :, ji + 3, jj + 3]
                if not np.any(w):
                    continue
                for si in (-1, 0, 1):
                    for sj in (-1, 0, 1):
                        ti, tj = ji + si, jj + sj
                        if -3 <= ti <= 3 and -3 <= tj <= 3:
                            out[:, :, ti + 3, tj + 3] += w * (a1[si + 1, sj + 1] * inv)
    else:
        for ji in range(-3, 4):
            for jj in range(-3, 4):
                w = p_table[:, :, ji + 3, jj + 3]
                if not np.any(w):
                    continue
                arow = _gather_vertex(fine_table, ji, jj, nc)
                for si in (-1, 0, 1):
                    for sj in (-1, 0, 1):
                        ti, tj = ji + si, jj + sj
                        if -3 <= ti <= 3 and -3 <= tj <= 3:
                            dinv = _gather_vertex(fine_diag, ti, tj, nc)
                            dinv = np.where(dinv != 0.0, 1.0 / np.where(dinv == 0, 1, dinv), 0.0)
                            out[:, :, ti + 3, tj + 3] += w * arow[:, :, si + 1, sj + 1] * dinv
    out *= omega
    return out


# -- transfer bundle ---------------------------------------------------------


class TransferOps:
    """Transfer operators between one coarse level and the next finer one.

    With p_table None the geometric separable fast paths are used;
    otherwise the per-vertex weight tables.  Restriction is always the
    transpose of prolongation and accumulates (it never averages).
    """

    def __init__(self, nc: int, p_table: np.ndarray | None, rtilde: np.ndarray | None,
                 rtilde_omega: float | None = None):
        self.nc = nc
        self.p_table = p_table
        self.rtilde = rtilde  # (7,7) constant or (nc+1,nc+1,7,7)
        # set when rtilde is exactly the unit-coefficient composition, which
        # then evaluates via one stencil pass plus a separable restriction
        self.rtilde_omega = rtilde_omega

    def prolong(self, coarse: np.ndarray) -> np.ndarray:
        if self.p_table is None:
            return prolong_values(coarse)
        nf = 3 * self.nc
        fine = np.zeros((nf + 1, nf + 1))
        for oi in range(-3, 4):
            for oj in range(-3, 4):
                w = self.p_table[:, :, oi + 3, oj + 3]
                if not np.any(w):
                    continue
                self._scatter(fine, w * coarse, oi, oj)
        return fine

    def prolong_values(self, coarse: np.ndarray) -> np.ndarray:
        return prolong_values(coarse)

    def restrict(self, fine: np.ndarray) -> np.ndarray:
        if self.p_table is None:
            return restrict_dlinear(fine)
        out = np.zeros((self.nc + 1, self.nc + 1))
        for oi in range(-3, 4):
            for oj in range(-3, 4):
                w = self.p_table[:, :, oi + 3, oj + 3]
                if not np.any(w):
                    continue
                out += w * _gather_vertex(fine, oi, oj, self.nc)
        return out

    def restrict_smoothed(self, fine: np.ndarray) -> np.ndarray:
        out = np.zeros((self.nc + 1, self.nc + 1))
        if self.rtilde is None:
            return out
        if self.rtilde_omega is not None and self.p_table is None:
            smoothed = apply_constant_stencil(fine, interior_stencil(1.0))
            smoothed *= self.rtilde_omega * 3.0 / 8.0
            return restrict_dlinear(smoothed)
        const = self.rtilde.ndim == 2
        for oi in range(-3, 4):
            for oj in range(-3, 4):
                w = self.rtilde[oi + 3, oj + 3] if const else self.rtilde[:, :, oi + 3, oj + 3]
                if const and w == 0.0:
                    continue
                out += w * _gather_vertex(fine, oi, oj, self.nc)
        return out

    def p_weights_at(self, vi: int, vj: int) -> np.ndarray:
        if self.p_table is not None:
            return self.p_table[vi, vj]
        return geometric_prolongation().values

    def rtilde_weights_at(self, vi: int, vj: int) -> np.ndarray:
        if self.rtilde is None:
            return np.zeros((7, 7))
        return self.rtilde if self.rtilde.ndim == 2 else self.rtilde[vi, vj]

    def _scatter(self, fine: np.ndarray, weighted: np.ndarray, oi: int, oj: int) -> None:
        nc, nf = self.nc, fine.shape[0] - 1
        idx_i = 3 * np.arange(nc + 1) + oi
        idx_j = 3 * np.arange(nc + 1) + oj
        vi = (idx_i >= 0) & (idx_i <= nf)
        vj = (idx_j >= 0) & (idx_j <= nf)
        fine[np.ix_(idx_i[vi], idx_j[vj])] += weighted[np.ix_(vi, vj)]
