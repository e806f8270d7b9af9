import numpy as np
import pytest

from treemg.discretization import constant_field, half_domain_jump
from treemg.oracle import build_hierarchy, dense_cycle, exact_solve
from treemg.solvers import ReferenceEngine, SolverConfig, jacobi_step
from treemg.spacetree import build_regular

POISSON = constant_field(1.0)


def make_engine(levels=2, field=POISSON, **cfg_kw):
    tree = build_regular(levels, field=field)
    cfg = SolverConfig(**cfg_kw)
    eng = ReferenceEngine(tree, cfg)
    return tree, eng


def randomize(tree, eng, seed=0):
    rng = np.random.default_rng(seed)
    l1 = eng.ltop
    interior = tree.dof_mask(l1)
    tree.u[l1][interior] = rng.standard_normal(int(interior.sum()))
    eng.update_fas_state()


def fine_vec(tree, eng):
    return tree.u[eng.ltop].reshape(-1).copy()


@pytest.mark.parametrize("variant", ["additive", "additive-exp", "bpx", "afacc",
                                     "adafac-pi", "adafac-jac"])
def test_engine_matches_dense_transcription_two_grid(variant):
    tree, eng = make_engine(2, variant=variant)
    randomize(tree, eng, seed=5)
    h = build_hierarchy(1, 2, POISSON)
    want = dense_cycle(h, variant, fine_vec(tree, eng))
    eng.advance()
    got = fine_vec(tree, eng)
    assert np.abs(got - want).max() < 1e-12


def test_engine_matches_dense_multiplicative():
    tree, eng = make_engine(2, variant="multiplicative-v10")
    randomize(tree, eng, seed=6)
    h = build_hierarchy(1, 2, POISSON)
    want = dense_cycle(h, "multiplicative-v10", fine_vec(tree, eng))
    eng.advance()
    assert np.abs(fine_vec(tree, eng) - want).max() < 1e-12


@pytest.mark.parametrize("variant", ["additive", "adafac-pi", "adafac-jac"])
def test_engine_matches_dense_three_grid(variant):
    tree, eng = make_engine(3, variant=variant)
    randomize(tree, eng, seed=7)
    h = build_hierarchy(1, 3, POISSON)
    want = dense_cycle(h, variant, fine_vec(tree, eng))
    eng.advance()
    assert np.abs(fine_vec(tree, eng) - want).max() < 1e-12


@pytest.mark.parametrize("variant", ["adafac-pi", "adafac-jac"])
def test_engine_boxmg_matches_dense_on_jump(variant):
    field = half_domain_jump(1)
    tree, eng = make_engine(2, field=field, variant=variant, flavor="boxmg")
    randomize(tree, eng, seed=8)
    h = build_hierarchy(1, 2, field, flavor="boxmg")
    want = dense_cycle(h, variant, fine_vec(tree, eng))
    eng.advance()
    assert np.abs(fine_vec(tree, eng) - want).max() < 1e-12


def test_jacobi_step_zero_at_solution():
    tree, eng = make_engine(2)
    u_star = exact_solve(build_hierarchy(1, 2, POISSON).fine())
    tree.u[2][:, :] = u_star.reshape(tree.u[2].shape)
    eng.update_fas_state()
    op = eng.ops[2]
    d = jacobi_step(op, tree.u[2], np.zeros_like(tree.u[2]), 0.6, tree.dof_mask(2))
    assert np.abs(d).max() < 1e-13


def test_jacobi_step_single_dof():
    tree, eng = make_engine(1)
    # level 1 has 4 DoFs; zero them and check d = omega * b / diag
    tree.u[1][:, :] = 0.0
    op = eng.ops[1]
    b = np.zeros_like(tree.u[1])
    b[1, 1] = 2.0
    d = jacobi_step(op, tree.u[1], b, 0.6, tree.dof_mask(1))
    assert d[1, 1] == pytest.approx(0.6 * 2.0 / (8.0 / 3.0))


def test_jacobi_step_matches_dense():
    tree, eng = make_engine(1)
    randomize(tree, eng, seed=9)
    h = build_hierarchy(1, 1, POISSON)
    lvl = h.fine()
    u = fine_vec(tree, eng)
    want = 0.6 * lvl.inv_diag * (-lvl.a @ u)
    d = jacobi_step(eng.ops[1], tree.u[1], np.zeros_like(tree.u[1]), 0.6, tree.dof_mask(1))
    assert np.abs(d.reshape(-1) - want).max() < 1e-14


def test_update_fas_state_bilinear_surplus_vanishes():
    tree, eng = make_engine(2)
    for l in (1, 2):
        n = 3**l
        x = np.linspace(0, 1, n + 1)[:, None]
        y = np.linspace(0, 1, n + 1)[None, :]
        tree.u[l][:, :] = 0.25 + x - 2 * y + 0.5 * x * y
    uh = eng.hierarchical_surplus(2)
    assert np.abs(uh).max() < 1e-13


def test_hierarchical_residual_matches_dense():
    tree, eng = make_engine(2)
    randomize(tree, eng, seed=10)
    h = build_hierarchy(1, 2, POISSON)
    u = fine_vec(tree, eng)
    nc = 3
    p = h.p[1]
    inj = h.injection(1)
    uhat = u - p @ (inj @ u)
    want = (-h.fine().a @ uhat)
    uh = eng.hierarchical_surplus(2)
    got = np.where(tree.dof_mask(2), -eng.ops[2].apply(uh), 0.0)
    assert np.abs(got.reshape(-1) - want).max() < 1e-12


def test_injection_copies_fine_values():
    tree, eng = make_engine(2)
    randomize(tree, eng, seed=11)
    assert np.array_equal(tree.u[1][1:-1, 1:-1], tree.u[2][::3, ::3][1:-1, 1:-1])


@pytest.mark.parametrize("variant", ["additive", "additive-exp", "bpx", "afacc",
                                     "adafac-pi", "adafac-jac", "multiplicative-v10"])
def test_exact_solution_is_fixed_point(variant):
    tree, eng = make_engine(2, variant=variant)
    u_star = exact_solve(build_hierarchy(1, 2, POISSON).fine())
    tree.u[2][:, :] = u_star.reshape(tree.u[2].shape)
    eng.update_fas_state()
    eng.advance()
    assert np.abs(fine_vec(tree, eng) - u_star).max() < 1e-14


@pytest.mark.parametrize("flavor", ["geometric", "boxmg"])
def test_fixed_point_on_jump_both_flavors(flavor):
    # the correction-consistent coarse right-hand side keeps the exact
    # solution a fixed point even where rediscretized coarse operators
    # disagree with the Galerkin ones
    field = half_domain_jump(2)
    tree, eng = make_engine(2, field=field, variant="adafac-jac", flavor=flavor)
    u_star = exact_solve(build_hierarchy(1, 2, field).fine())
    tree.u[2][:, :] = u_star.reshape(tree.u[2].shape)
    eng.update_fas_state()
    eng.advance()
    assert np.abs(fine_vec(tree, eng) - u_star).max() < 1e-13


@pytest.mark.parametrize("flavor,field", [
    ("geometric", POISSON),
    ("boxmg", half_domain_jump(2)),
])
def test_restriction_equals_hierarchical_residual_under_galerkin(flavor, field):
    # wherever A_c = R A_f P holds, the correction-consistent right-hand
    # side equals the restricted hierarchical residual R(b - A u_hat)
    tree, eng = make_engine(2, field=field, variant="additive", flavor=flavor)
    randomize(tree, eng, seed=21)
    op_f, op_c = eng.ops[2], eng.ops[1]
    dof_f = tree.dof_mask(2)
    rho_f = np.where(dof_f, -op_f.apply(tree.u[2]), 0.0)
    correction_consistent = eng.transfers[1].restrict(rho_f) + eng._bpart(1, op_c.apply(tree.u[1]))
    uh = eng.hierarchical_surplus(2)
    rhat = np.where(dof_f, -op_f.apply(uh), 0.0)
    hierarchical = eng.transfers[1].restrict(rhat)
    dof_c = tree.dof_mask(1)
    assert np.abs((correction_consistent - hierarchical)[dof_c]).max() < 1e-11


def test_deep_convergence_on_adaptive_mesh():
    # composite-grid consistency: residual keeps contracting to near
    # round-off on a static adaptive mesh (no stalling floor)
    from treemg.spacetree import CellId

    tree = build_regular(2, lmax=3, field=half_domain_jump(2))
    tree.refine_many([CellId(2, i, 0) for i in range(9)] + [CellId(2, 4, 4)])
    eng = ReferenceEngine(tree, SolverConfig(variant="adafac-jac"))
    eng.update_fas_state()
    norms = [eng.advance().l2h for _ in range(220)]
    assert norms[-1] < 1e-10 * norms[0]


def test_refinement_residual_change_is_local():
    from treemg.spacetree import CellId

    tree = build_regular(2, lmax=3, field=POISSON)
    eng = ReferenceEngine(tree, SolverConfig(variant="additive"))
    for _ in range(60):
        eng.advance()
    # record the fine-level residual, refine one interior cell, re-measure
    op = eng.ops[2]
    rho_before = np.where(tree.dof_mask(2), -op.apply(tree.u[2]), 0.0)
    tree.refine_many([CellId(2, 4, 4)])
    eng.rebuild()
    eng.update_fas_state()
    op = eng.ops[2]
    rho_after = np.where(tree.dof_mask(2), -op.apply(tree.u[2]), 0.0)
    change = np.abs(rho_after - rho_before)
    near = np.zeros_like(change, dtype=bool)
    near[1:9, 1:9] = True  # 7x7-ish neighbourhood of cell (4, 4) corners
    assert change[~near].max() < 1e-12


def test_dirichlet_values_never_change():
    tree, eng = make_engine(2, variant="adafac-jac")
    boundary = tree.vertex_kinds(2) == 2  # VertexKind.DIRICHLET
    before = tree.u[2][boundary].copy()
    for _ in range(5):
        eng.advance()
    assert np.array_equal(tree.u[2][boundary], before)


@pytest.mark.parametrize("variant", ["adafac-pi", "adafac-jac"])
def test_damping_off_reduces_bitwise_to_additive(variant):
    tree_a, eng_a = make_engine(3, variant="additive")
    tree_b, eng_b = make_engine(3, variant=variant, damping_scale=0.0)
    randomize(tree_a, eng_a, seed=12)
    randomize(tree_b, eng_b, seed=12)
    for _ in range(3):
        eng_a.advance()
        eng_b.advance()
    assert np.array_equal(tree_a.u[3], tree_b.u[3])


def test_flavor_equality_on_poisson():
    # identical iterates from geometric and operator-dependent transfers
    results = {}
    for flavor in ("geometric", "boxmg"):
        tree, eng = make_engine(3, variant="adafac-jac", flavor=flavor)
        randomize(tree, eng, seed=13)
        for _ in range(5):
            eng.advance()
        results[flavor] = tree.u[3].copy()
    assert np.abs(results["geometric"] - results["boxmg"]).max() < 1e-12


def test_stats_residual_normalization_inputs():
    tree, eng = make_engine(2, variant="additive")
    s0 = eng.residual_stats()
    s1 = eng.advance()
    # advance reports the residual of the state it started from
    assert s1.l2h == pytest.approx(s0.l2h, rel=1e-13)
    assert s1.linf == pytest.approx(s0.linf, rel=1e-13)
    assert s1.dofs == 64
    # one fine + one coarse correction equation per cycle
    assert s1.updates == 64 + 4


def test_update_counts_per_variant():
    for variant, want in (
        ("additive", 64 + 4),
        ("adafac-jac", 64 + 4 + 4),      # damping equation on the coarse level
        ("adafac-pi", 64 + 4 + 64),      # damping term per fine-level vertex
    ):
        tree, eng = make_engine(2, variant=variant)
        stats = eng.advance()
        assert stats.updates == want, variant


def test_residual_decreases_on_small_poisson():
    tree, eng = make_engine(2, variant="adafac-jac")
    norms = [eng.advance().l2h for _ in range(30)]
    assert norms[-1] < 1e-3 * norms[0]


def test_multiplicative_requires_two_levels():
    with pytest.raises(ValueError):
        make_engine(3, variant="multiplicative-v10")


def test_rtilde_true_operator_option():
    # damping built from the true stencils instead of the unit-coefficient
    # ones: still converges, but produces a different iterate under jumps
    field = half_domain_jump(2)
    iterates = {}
    for flag in (False, True):
        tree, eng = make_engine(3, field=field, variant="adafac-jac",
                                rtilde_true_operator=flag)
        for _ in range(12):
            stats = eng.advance()
        iterates[flag] = (tree.u[3].copy(), stats.l2h)
    assert iterates[False][1] < 1.0 and iterates[True][1] < 1.0
    assert np.abs(iterates[False][0] - iterates[True][0]).max() > 1e-10


def test_omega_tilde_zero_matches_scaled_damping():
    # omega_tilde scales the damping equation only
    tree_a, eng_a = make_engine(3, variant="adafac-jac", omega_tilde=0.3)
    tree_b, eng_b = make_engine(3, variant="adafac-jac", omega_tilde=0.6)
    for _ in range(3):
        sa = eng_a.advance()
        sb = eng_b.advance()
    assert not np.allclose(tree_a.u[3], tree_b.u[3], atol=1e-12)
