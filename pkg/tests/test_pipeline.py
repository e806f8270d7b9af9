import numpy as np
import pytest

from treemg.discretization import constant_field, half_domain_jump
from treemg.pipeline import PipelineEngine, sweep_count_for_cycles
from treemg.solvers import ReferenceEngine, SolverConfig
from treemg.spacetree import LEX_CHILD_ORDER, CellId, build_regular


def paired_engines(levels, variant, field=None, seed=1, **cfg_kw):
    field = field or constant_field(1.0)
    cfg = SolverConfig(variant=variant, **cfg_kw)
    tree_r = build_regular(levels, field=field)
    tree_p = build_regular(levels, field=field)
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(tree_r.u[levels].shape)
    for tree in (tree_r, tree_p):
        m = tree.dof_mask(levels)
        tree.u[levels][m] += vals[m]
    ref = ReferenceEngine(tree_r, cfg)
    pipe = PipelineEngine(tree_p, cfg)
    ref.update_fas_state()
    pipe.update_fas_state()
    return ref, pipe


@pytest.mark.parametrize("variant", ["additive", "adafac-pi", "adafac-jac"])
def test_engine_equivalence_regular(variant):
    # pipe's snapshot after sweep k+1's descent == ref iterate after k cycles
    ref, pipe = paired_engines(3, variant)
    s_r = ref.advance()
    s_p = pipe.advance()
    assert s_p.l2h == pytest.approx(s_r.l2h, rel=1e-10)
    prev = {l: ref.tree.u[l].copy() for l in range(1, 4)}
    for k in range(1, 21):
        s_r_next = ref.advance()
        s_p_next = pipe.advance(capture_iterate=True)
        snap = pipe.last_snapshot
        for l in range(1, 4):
            mask = ref.masks[l]["exists"]
            diff = np.abs(snap[l] - prev[l])[mask].max()
            assert diff < 1e-12, f"cycle {k} level {l}: {diff}"
        assert s_p_next.l2h == pytest.approx(s_r_next.l2h, rel=1e-9)
        prev = {l: ref.tree.u[l].copy() for l in range(1, 4)}


@pytest.mark.parametrize("variant", ["adafac-pi", "adafac-jac"])
def test_engine_equivalence_boxmg_jump(variant):
    ref, pipe = paired_engines(2, variant, field=half_domain_jump(1), flavor="boxmg")
    ref.advance()
    pipe.advance()
    prev = {l: ref.tree.u[l].copy() for l in range(1, 3)}
    for k in range(6):
        ref_stats = ref.advance()
        pipe.advance(capture_iterate=True)
        for l in range(1, 3):
            mask = ref.masks[l]["exists"]
            diff = np.abs(pipe.last_snapshot[l] - prev[l])[mask].max()
            assert diff < 1e-12
        prev = {l: ref.tree.u[l].copy() for l in range(1, 3)}


def test_child_order_does_not_change_iterates():
    field = constant_field(1.0)
    cfg = SolverConfig(variant="adafac-jac")
    results = {}
    for name, order in (("peano", None), ("lex", LEX_CHILD_ORDER)):
        tree = build_regular(2, field=field)
        kw = {} if order is None else {"child_order": order}
        eng = PipelineEngine(tree, cfg, **kw)
        for _ in range(6):
            eng.advance()
        results[name] = tree.u[2].copy()
    assert np.abs(results["peano"] - results["lex"]).max() < 1e-13


def test_single_touch_instrumentation():
    tree = build_regular(2)
    eng = PipelineEngine(tree, SolverConfig(variant="adafac-jac"))
    eng.advance(count_touches=True)
    counters = eng.last_counters
    assert counters.max_load_count() == 1
    assert max(counters.stores.values()) == 1
    # every persistent vertex loaded and stored exactly once
    assert set(counters.loads) == set(counters.stores)


def test_sweep_count_for_cycles():
    assert sweep_count_for_cycles(0) == 1
    assert sweep_count_for_cycles(1) == 2
    assert sweep_count_for_cycles(40) == 41
    with pytest.raises(ValueError):
        sweep_count_for_cycles(-1)


def test_phase_protocol():
    tree = build_regular(2)
    eng = PipelineEngine(tree, SolverConfig(variant="additive"))
    with pytest.raises(RuntimeError):
        eng.sweep("steady")
    eng.sweep("kickoff")
    eng.sweep("steady")
    with pytest.raises(RuntimeError):
        eng.sweep("kickoff")
    eng.reset_helpers()
    eng.sweep("kickoff")


def test_zero_data_stays_zero():
    tree = build_regular(2)
    # wipe the heated edge so everything is zero
    for l in range(3):
        tree.u[l][:, :] = 0.0
    eng = PipelineEngine(tree, SolverConfig(variant="adafac-jac"))
    for _ in range(3):
        stats = eng.advance()
    assert stats.l2h == 0.0
    for l in (1, 2):
        assert np.abs(tree.u[l]).max() == 0.0
        for arr in eng.helpers[l].values():
            assert np.abs(arr).max() == 0.0


def test_matvec_accumulation_matches_stencil_application():
    tree = build_regular(2)
    rng = np.random.default_rng(3)
    m = tree.dof_mask(2)
    tree.u[2][m] += rng.standard_normal(int(m.sum()))
    eng = PipelineEngine(tree, SolverConfig(variant="additive"))
    eng.update_fas_state()
    u0 = {l: tree.u[l].copy() for l in (1, 2)}
    eng.advance()
    for l in (1, 2):
        want = eng.ops[l].apply(u0[l])
        dof = eng.masks[l]["dof"]
        got = eng.helpers[l]["acc_au"]
        assert np.abs((got - want)[dof]).max() < 1e-13


def test_unsupported_variant_rejected():
    tree = build_regular(2)
    for variant in ("bpx", "afacc", "additive-exp", "multiplicative-v10"):
        with pytest.raises(ValueError):
            PipelineEngine(tree, SolverConfig(variant=variant))


def test_equivalence_on_adaptive_steady_mesh():
    """Static adaptive mesh: one refined patch; engines agree."""
    field = constant_field(1.0)
    cfg = SolverConfig(variant="adafac-jac")
    trees = []
    for _ in range(2):
        tree = build_regular(2, lmax=3, field=field)
        tree.refine(CellId(2, 4, 0))
        tree.refine(CellId(2, 4, 1))
        trees.append(tree)
    ref = ReferenceEngine(trees[0], cfg)
    pipe = PipelineEngine(trees[1], cfg)
    ref.update_fas_state()
    pipe.update_fas_state()
    ref.advance()
    pipe.advance()
    prev = {l: trees[0].u[l].copy() for l in range(1, 4)}
    for k in range(8):
        ref.advance()
        pipe.advance(capture_iterate=True)
        for l in range(1, 4):
            mask = ref.masks[l]["exists"]
            diff = np.abs(pipe.last_snapshot[l] - prev[l])[mask].max()
            assert diff < 1e-12, f"cycle {k} level {l}: {diff}"
        prev = {l: trees[0].u[l].copy() for l in range(1, 4)}
