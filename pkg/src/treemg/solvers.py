"""Level-by-level reference engine for the additive solver family.

All solvers run on full-approximation state: every level stores nodal
solution values and coarse levels hold the injection of the next finer
one.  A coarse right-hand side combines the operator image of the
injected state over the refined region with the accumulated restriction
of the finer level's residual,

    b_c = A_c^(refined part)(I u) + R (b_f - A_f u_f),

so the smoother input on every level is exactly the restricted residual
chain.  Wherever the coarse operator satisfies the Galerkin identity
A_c = R A_f P (always for the operator-dependent flavour, and exactly for
unit coefficients with the geometric one) this equals the restriction of
the hierarchical residual b_f - A_f (id - P I) u_f; for rediscretized
coarse operators under strong coefficient variation the hierarchical form
would leave a consistency defect that keeps the exact solution from being
a fixed point, hence the correction-consistent form is authoritative.
Residuals accumulated at hanging vertices carry no equation but restrict
onwards, which keeps composite meshes consistent across resolution
transitions.

One damped Jacobi step per level per cycle, no exceptions.  Variants
differ only in the per-level update and in what feeds the restriction:

  additive        d_l = w M^-1 rho_l
  additive-exp    d_l = w_hat**(ltop-l) M^-1 rho_l
  bpx             coarse d_l = w rho_l (h**(d-2) == 1 in 2D), fine as additive
  afacc           as additive, but residual entries at vertices coinciding
                  with the next coarser level are zeroed before restriction
  adafac-pi       damping c~_l = P I d_l subtracted per level
  adafac-jac      damping from an auxiliary Jacobi step on the next coarser
                  level, fed by the smoothed restriction of rho
  multiplicative-v10  presmooth, exact coarse solve, correct (two-grid
                  reference; used to validate the overshoot identity)

Level contributions are summed coarse to fine in a fixed order so that
regression tests can compare iterates bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .operators import (
    ElementOperator,
    TableOperator,
    TransferOps,
    assemble_stencil_table,
    boxmg_prolongation,
    geometric_p_table,
    prolong_values,
    ritz_galerkin_coarse,
    smoothed_restriction,
    smoothed_restriction_table,
)
from .spacetree import Spacetree, VertexKind

__all__ = [
    "VARIANTS",
    "PIPELINE_VARIANTS",
    "SolverConfig",
    "CycleStats",
    "ReferenceEngine",
    "jacobi_step",
]

VARIANTS = (
    "additive",
    "additive-exp",
    "bpx",
    "afacc",
    "adafac-pi",
    "adafac-jac",
    "multiplicative-v10",
)
PIPELINE_VARIANTS = ("additive", "adafac-pi", "adafac-jac")


@dataclass
class SolverConfig:
    variant: str = "adafac-jac"
    flavor: str = "geometric"
    omega: float = 0.6
    omega_tilde: float | None = None  # damping-equation weight, defaults to omega
    omega_hat: float = 0.7  # base of the exponential per-level damping
    rtilde_true_operator: bool = False  # build R~ from the true stencils
    damping_scale: float = 1.0  # testing hook: 0 reduces both adAFAC variants to additive

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown solver variant {self.variant!r}")
        if self.flavor not in ("geometric", "boxmg"):
            raise ValueError(f"unknown operator flavor {self.flavor!r}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if not 0.0 < self.omega_hat < 1.0:
            raise ValueError("omega_hat must lie in (0, 1)")

    @property
    def wt(self) -> float:
        return self.omega if self.omega_tilde is None else self.omega_tilde


@dataclass
class CycleStats:
    """Residual of the iterate a cycle started from, plus work counts."""

    l2h: float
    linf: float
    dofs: int
    updates: int
    level_dofs: dict = dc_field(default_factory=dict)


def jacobi_step(op, u: np.ndarray, b: np.ndarray, omega: float,
                dof_mask: np.ndarray) -> np.ndarray:
    """Damped Jacobi update d = omega diag(A)^-1 (b - A u), not applied.

    Rows outside dof_mask (Dirichlet, hanging) stay zero.
    """
    diag = op.diag()
    safe = np.where(dof_mask, diag, 1.0)
    return np.where(dof_mask, omega * (b - op.apply(u)) / safe, 0.0)


class ReferenceEngine:
    """Runs cycles on a spacetree; the semantic ground truth engine.

    advance() performs one cycle and returns the residual statistics of the
    iterate it started from, mirroring the pipelined engine where cycle n's
    residual is fully accumulated during sweep n+1.
    """

    def __init__(self, tree: Spacetree, cfg: SolverConfig):
        self.tree = tree
        self.cfg = cfg
        self.rhs: dict[int, np.ndarray] = {}
        self.rebuild()

    # -- operator construction ---------------------------------------------

    def rebuild(self) -> None:
        """(Re)build stencils, transfer operators and masks from the tree."""
        tree = self.tree
        self.ltop = tree.depth
        if self.ltop < tree.lmin:
            raise ValueError("tree has no DoF-carrying level at or above lmin")
        self.ops: dict[int, object] = {}
        self.transfers: dict[int, TransferOps] = {}
        self.masks: dict[int, dict[str, np.ndarray]] = {}
        self.hweight: dict[int, np.ndarray] = {}
        want_rt = self.cfg.variant == "adafac-jac"

        # Effective material samples: leaf cells keep their midpoint sample
        # (the composite discretization), refined cells average their
        # children so correction-equation stencils carry the scale of the
        # fine content they stand in for.  Without this, a refined cell
        # whose own midpoint sees the weak material but whose children
        # contain the stiff one gets a diagonal orders of magnitude below
        # the residuals restricted into it, and every additive variant
        # explodes on the inclusion and checkerboard setups.
        self.eff_eps: dict[int, np.ndarray] = {}
        for l in range(self.ltop, tree.lmin - 1, -1):
            eff = tree.eps[l].copy()
            if l < tree.lmax and tree.refined[l].any():
                n = 3**l
                child = self.eff_eps.get(l + 1)
                if child is None:
                    child = tree.eps[l + 1]
                avg = child.reshape(n, 3, n, 3).mean(axis=(1, 3))
                eff = np.where(tree.refined[l], avg, eff)
            self.eff_eps[l] = eff

        self.refined_ops: dict[int, ElementOperator | None] = {}
        eps_masked = {}
        for l in range(tree.lmin, self.ltop + 1):
            eps_masked[l] = self.eff_eps[l] * tree.cells_exist(l)
            kinds = tree.vertex_kinds(l)
            dof = tree.dof_mask(l)
            hanging = kinds == VertexKind.HANGING
            self.masks[l] = {
                "kinds": kinds,
                "dof": dof,
                "composite": kinds == VertexKind.INTERIOR_DOF,
                "hanging": hanging,
                "exists": kinds != VertexKind.NONE,
                "overlapped": kinds == VertexKind.COARSE_OVERLAPPED,
                "rho_src": dof | hanging,
            }
            if l < tree.lmax and tree.refined[l].any():
                self.refined_ops[l] = ElementOperator(self.eff_eps[l] * tree.refined[l])
            else:
                self.refined_ops[l] = None
            n = 3**l
            if l < tree.lmax and tree.refined[l].any():
                refined_around = np.zeros((n + 2, n + 2), dtype=bool)
                refined_around[1:-1, 1:-1] = tree.refined[l]
                any_refined = (
                    refined_around[:-1, :-1] | refined_around[1:, :-1]
                    | refined_around[:-1, 1:] | refined_around[1:, 1:]
                )
                self.hweight[l] = np.where(any_refined, 3.0 ** -(l + 1), 3.0**-l)
            else:
                # no refined cells: the local mesh width is uniform
                self.hweight[l] = np.full((1, 1), 3.0**-l)

        if self.cfg.flavor == "geometric":
            for l in range(tree.lmin, self.ltop + 1):
                self.ops[l] = ElementOperator(eps_masked[l])
            rt = smoothed_restriction(self.cfg.omega) if want_rt else None
            for l in range(tree.lmin, self.ltop):
                nc = 3**l
                rtl = rt
                fast_omega = self.cfg.omega if want_rt else None
                if want_rt and self.cfg.rtilde_true_operator:
                    fine_tbl = assemble_stencil_table(eps_masked[l + 1])
                    fine_tbl *= self.masks[l + 1]["dof"][:, :, None, None]
                    rtl = smoothed_restriction_table(
                        geometric_p_table(nc), self.cfg.omega,
                        fine_table=fine_tbl, fine_diag=self.ops[l + 1].diag(),
                    )
                    fast_omega = None
                self.transfers[l] = TransferOps(nc, None, rtl, rtilde_omega=fast_omega)
        else:
            self.ops[self.ltop] = ElementOperator(eps_masked[self.ltop])
            raw = self.ops[self.ltop].table()
            for l in range(self.ltop - 1, tree.lmin - 1, -1):
                fine_kinds = self.masks[l + 1]["kinds"]
                refined = tree.refined[l][:, :] & (tree.cells_exist(l))
                p_tbl = boxmg_prolongation(raw, refined, fine_kinds, VertexKind.HANGING)
                masked = raw * self.masks[l + 1]["dof"][:, :, None, None]
                rap = ritz_galerkin_coarse(masked, p_tbl)
                tbl = assemble_stencil_table(eps_masked[l])
                overlap = self.masks[l]["kinds"] == VertexKind.COARSE_OVERLAPPED
                tbl[overlap] = rap[overlap]
                self.ops[l] = TableOperator(tbl)
                rtl = None
                if want_rt:
                    if self.cfg.rtilde_true_operator:
                        rtl = smoothed_restriction_table(
                            p_tbl, self.cfg.omega, fine_table=masked,
                            fine_diag=self.ops[l + 1].diag(),
                        )
                    else:
                        rtl = smoothed_restriction_table(p_tbl, self.cfg.omega)
                self.transfers[l] = TransferOps(3**l, p_tbl, rtl)
                raw = tbl

        if self.cfg.variant == "multiplicative-v10":
            if self.ltop - tree.lmin != 1 or not self._regular():
                raise ValueError("the two-grid reference needs a regular two-level tree")
            self._coarse_dense = self._dense_interior_matrix(tree.lmin)

    def _regular(self) -> bool:
        return all(
            self.tree.refined[l].all() for l in range(self.ltop)
        )

    def _dense_interior_matrix(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        op = self.ops[l]
        dof = self.masks[l]["dof"]
        idx = np.argwhere(dof)
        m = len(idx)
        a = np.zeros((m, m))
        pos = {(int(i), int(j)): k for k, (i, j) in enumerate(idx)}
        for k, (i, j) in enumerate(idx):
            s = op.stencil_at(int(i), int(j))
            for a_off in range(3):
                for b_off in range(3):
                    t = (int(i) + a_off - 1, int(j) + b_off - 1)
                    if t in pos:
                        a[k, pos[t]] += s[a_off, b_off]
        return np.linalg.inv(a), idx

    # -- FAS state ----------------------------------------------------------

    def update_fas_state(self) -> None:
        """Injection bottom-up, then hanging interpolation top-down."""
        tree = self.tree
        for l in range(self.ltop - 1, tree.lmin - 1, -1):
            fine_kinds = self.masks[l + 1]["kinds"]
            take = (fine_kinds[::3, ::3] == VertexKind.INTERIOR_DOF) | (
                fine_kinds[::3, ::3] == VertexKind.COARSE_OVERLAPPED
            )
            tree.u[l][take] = tree.u[l + 1][::3, ::3][take]
        for l in range(tree.lmin, self.ltop + 1):
            self._refresh_hanging(l)

    def _refresh_hanging(self, l: int) -> None:
        hang = self.masks[l]["hanging"]
        if hang.any():
            vals = prolong_values(self.tree.u[l - 1])
            self.tree.u[l][hang] = vals[hang]

    def hierarchical_surplus(self, l: int) -> np.ndarray:
        """u_hat = u - P I u; zero at hanging vertices by construction."""
        tree = self.tree
        uh = tree.u[l] - self.transfers[l - 1].prolong(tree.u[l - 1])
        uh[self.masks[l]["hanging"]] = 0.0
        return uh

    def _rhs(self, l: int) -> np.ndarray:
        r = self.rhs.get(l)
        if r is None:
            return np.zeros_like(self.tree.u[l])
        return r

    def _omega_add(self, l: int) -> float:
        if self.cfg.variant == "additive-exp":
            return self.cfg.omega_hat ** (self.ltop - l)
        return self.cfg.omega

    # -- one cycle -----------------------------------------------------------

    def _bpart(self, l: int, au: np.ndarray) -> np.ndarray:
        """Operator image of the injected state over the refined region.

        Overlapped vertices own a pure correction equation, so their whole
        stored row (Galerkin under the operator-dependent flavour) enters;
        elsewhere only the element contributions of refined cells do.
        """
        rop = self.refined_ops[l]
        if rop is None:
            return np.zeros_like(au)
        ar = rop.apply(self.tree.u[l])
        over = self.masks[l]["overlapped"]
        if over.any():
            ar = np.where(over, au, ar)
        return ar

    def advance(self) -> CycleStats:
        if self.cfg.variant == "multiplicative-v10":
            return self._advance_mult_v10()
        tree = self.tree
        cfg = self.cfg
        l0, l1 = tree.lmin, self.ltop

        b = {l1: self._rhs(l1)}
        d: dict[int, np.ndarray] = {}
        dtil: dict[int, np.ndarray] = {}
        stats = self._new_stats()
        for l in range(l1, l0 - 1, -1):
            op = self.ops[l]
            dof = self.masks[l]["dof"]
            src = self.masks[l]["rho_src"]
            diag = np.where(dof, op.diag(), 1.0)
            au = op.apply(tree.u[l])
            if l < l1:
                b[l] = b[l] + self._bpart(l, au)
            rho = np.where(src, b[l] - au, 0.0)
            rho_dof = np.where(dof, rho, 0.0)
            self._accumulate_stats(stats, l, rho_dof)
            if cfg.variant == "bpx" and l < l1:
                d[l] = cfg.omega * rho_dof
            else:
                d[l] = self._omega_add(l) * rho_dof / diag
            if cfg.variant == "adafac-jac" and l < l1:
                dtil[l] = cfg.damping_scale * (cfg.wt * self.transfers[l].restrict_smoothed(
                    rho_fine) / diag)
                dtil[l][~dof] = 0.0
            if l > l0:
                if cfg.variant == "afacc":
                    masked = rho.copy()
                    masked[::3, ::3] = 0.0
                    b[l - 1] = self.transfers[l - 1].restrict(masked)
                else:
                    b[l - 1] = self.transfers[l - 1].restrict(rho)
                b[l - 1] += self._rhs(l - 1)
            # the damping anticipates the smoother's update M^-1 rho, which
            # exists at smoothed vertices only: hanging residuals restrict
            # into the correction right-hand side but never into b~
            rho_fine = rho_dof

        if cfg.variant == "adafac-pi":
            for l in range(l0 + 1, l1 + 1):
                inj = np.zeros_like(tree.u[l - 1])
                fk = self.masks[l]["kinds"][::3, ::3]
                take = (fk == VertexKind.INTERIOR_DOF) | (fk == VertexKind.COARSE_OVERLAPPED)
                inj[take] = d[l][::3, ::3][take]
                dtil[l] = cfg.damping_scale * self.transfers[l - 1].prolong(inj)
                dtil[l][~self.masks[l]["dof"]] = 0.0

        carry = None
        for l in range(l0, l1 + 1):
            g = d[l]
            if cfg.variant == "adafac-jac" and l in dtil:
                g = g - dtil[l]
            elif cfg.variant == "adafac-pi" and l in dtil:
                g = g - dtil[l]
            carry = g if carry is None else self.transfers[l - 1].prolong(carry) + g
            carry[~self.masks[l]["exists"]] = 0.0
            tree.u[l] += carry

        self.update_fas_state()
        stats.updates = self._count_updates()
        return self.finalize_stats(stats)

    def _advance_mult_v10(self) -> CycleStats:
        tree = self.tree
        cfg = self.cfg
        l0, l1 = tree.lmin, self.ltop
        op_f, op_c = self.ops[l1], self.ops[l0]
        dof_f, dof_c = self.masks[l1]["dof"], self.masks[l0]["dof"]

        stats = self._new_stats()
        rho = np.where(dof_f, self._rhs(l1) - op_f.apply(tree.u[l1]), 0.0)
        self._accumulate_stats(stats, l1, rho)
        rho_c0 = np.where(dof_c, self.transfers[l0].restrict(rho), 0.0)
        self._accumulate_stats(stats, l0, rho_c0)

        diag_f = np.where(dof_f, op_f.diag(), 1.0)
        tree.u[l1] += cfg.omega * rho / diag_f
        self.update_fas_state()

        rho_sm = np.where(dof_f, self._rhs(l1) - op_f.apply(tree.u[l1]), 0.0)
        rho_c = np.where(dof_c, self.transfers[l0].restrict(rho_sm), 0.0)
        inv, idx = self._coarse_dense
        c_vec = inv @ rho_c[tuple(idx.T)]
        c = np.zeros_like(tree.u[l0])
        c[tuple(idx.T)] = c_vec
        tree.u[l0] += c
        tree.u[l1] += self.transfers[l0].prolong(c)
        self.update_fas_state()
        stats.updates = self._count_updates()
        return self.finalize_stats(stats)

    # -- reporting -----------------------------------------------------------

    def _new_stats(self) -> CycleStats:
        return CycleStats(0.0, 0.0, 0, 0, {})

    def _accumulate_stats(self, stats: CycleStats, l: int, rho: np.ndarray) -> None:
        comp = self.masks[l]["composite"]
        if comp.any():
            r = rho[comp]
            h = np.broadcast_to(self.hweight[l], rho.shape)[comp]
            stats.l2h += float(((h * r) ** 2).sum())
            stats.linf = max(stats.linf, float(np.abs(r).max()))
            stats.dofs += int(comp.sum())
        stats.level_dofs[l] = int(self.masks[l]["dof"].sum())

    def finalize_stats(self, stats: CycleStats) -> CycleStats:
        stats.l2h = float(np.sqrt(stats.l2h))
        return stats

    def _count_updates(self) -> int:
        cfg = self.cfg
        l0, l1 = self.tree.lmin, self.ltop
        total = sum(int(self.masks[l]["dof"].sum()) for l in range(l0, l1 + 1))
        if cfg.variant == "adafac-jac":
            total += sum(int(self.masks[l]["dof"].sum()) for l in range(l0, l1))
        elif cfg.variant == "adafac-pi":
            total += sum(int(self.masks[l]["dof"].sum()) for l in range(l0 + 1, l1 + 1))
        elif cfg.variant == "multiplicative-v10":
            pass  # fine smoother plus one coarse solve, both already counted
        return total

    def residual_stats(self) -> CycleStats:
        """Residual of the current iterate without advancing it."""
        tree = self.tree
        l0, l1 = tree.lmin, self.ltop
        b = {l1: self._rhs(l1)}
        stats = self._new_stats()
        for l in range(l1, l0 - 1, -1):
            op = self.ops[l]
            src = self.masks[l]["rho_src"]
            au = op.apply(tree.u[l])
            if l < l1:
                b[l] = b[l] + self._bpart(l, au)
            rho = np.where(src, b[l] - au, 0.0)
            self._accumulate_stats(stats, l, np.where(self.masks[l]["dof"], rho, 0.0))
            if l > l0:
                if self.cfg.variant == "afacc":
                    masked = rho.copy()
                    masked[::3, ::3] = 0.0
                    b[l - 1] = self.transfers[l - 1].restrict(masked) + self._rhs(l - 1)
                else:
                    b[l - 1] = self.transfers[l - 1].restrict(rho) + self._rhs(l - 1)
        return self.finalize_stats(stats)

    def fine_solution(self) -> np.ndarray:
        return self.tree.u[self.ltop]

    def composite_solution(self) -> dict[int, np.ndarray]:
        out = {}
        for l in range(self.tree.lmin, self.ltop + 1):
            mask = self.masks[l]["composite"]
            out[l] = np.where(mask, self.tree.u[l], 0.0)
        return out
