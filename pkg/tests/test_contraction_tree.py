from __future__ import annotations

import math

import numpy as np
import pytest

from contract_slide.core.encoding import fingerprint
from contract_slide.core.enums import WorkloadName
from contract_slide.core.model import Partial
from contract_slide.infrastructure.memo_store import MemoMissError, MemoStore
from contract_slide.services.contraction_tree import (
    BucketCountMismatchError,
    ContractionTree,
    DirtySet,
    EmptyLeavesError,
    NodeId,
    TreeError,
    TreeModeMismatchError,
    append_fold,
    build_append,
    build_fixed,
    build_variable,
    coin,
    empty_append_tree,
    leaf_identity,
    propagate,
)
from contract_slide.services.udf import CombineFn
from contract_slide.services.worker_pool import WorkerPool
from contract_slide.services.workloads import builtin_workload

SUM = builtin_workload(WorkloadName.WORDCOUNT).combine_fn


def _leaves(count: int, value: bytes = b"1") -> list[tuple]:
    return [(leaf_identity(f"split-{index}".encode()), Partial((value,))) for index in range(count)]


def _distinct_leaves(count: int) -> list[tuple]:
    # Powers of two make every contiguous range sum, and so every combine input, unique.
    return [(leaf_identity(f"split-{index}".encode()), Partial((str(2**index).encode(),))) for index in range(count)]


def _ancestors(tree: ContractionTree, leaf: NodeId) -> list[NodeId]:
    parents = {child: node.node_id for node in tree.internal_nodes() for child in node.children}
    path, current = [], leaf
    while current in parents:
        current = parents[current]
        path.append(current)
    return path


def _dirty_from(tree: ContractionTree, previous: ContractionTree) -> DirtySet:
    tree.inherit(previous)
    dirty = DirtySet()
    for leaf in tree.leaves:
        if leaf.prior is None or leaf.prior.payload_fp != leaf.payload_fp:
            dirty.mark(leaf.node_id)
    return dirty


def test_coin_is_a_pure_function_of_identity_level_and_salt() -> None:
    ident = leaf_identity(b"x")
    flips = {coin(ident, level, salt) for level in range(8) for salt in range(8)}

    assert coin(ident, 3, 11) == coin(ident, 3, 11)
    assert flips == {True, False}


def test_variable_tree_contracts_every_level() -> None:
    tree = build_variable(_leaves(64), salt=7, key=b"k")

    for level in tree.levels[1:]:
        for node in level:
            assert len(node.children) >= 2
    for upper, lower in zip(tree.levels[1:], tree.levels):
        assert len(upper) < len(lower)
        assert sum(len(node.children) for node in upper) == len(lower)
    assert len(tree.levels[-1]) == 1


def test_variable_tree_shape_ignores_leaf_contents() -> None:
    first = build_variable(_leaves(40, b"1"), salt=3)
    second = build_variable(_leaves(40, b"9"), salt=3)

    for level in range(len(first.levels)):
        assert first.node_ids(level) == second.node_ids(level)


def test_empty_leaves_are_rejected() -> None:
    with pytest.raises(EmptyLeavesError):
        build_variable([], salt=0)


def test_single_leaf_tree_has_no_combine_nodes() -> None:
    tree = build_variable(_leaves(1), salt=0)

    assert list(tree.internal_nodes()) == []
    assert tree.depth == 0
    assert tree.root is tree.leaves[0]


@pytest.mark.asyncio()
async def test_initial_propagation_executes_every_combine_node() -> None:
    memo = MemoStore()
    tree = build_variable(_distinct_leaves(32), salt=1, key=b"w")

    outcome = await propagate(tree, DirtySet(), SUM, memo)

    assert outcome.root == Partial((str(2**32 - 1).encode(),))
    assert outcome.fresh == len(list(tree.internal_nodes()))
    assert outcome.hits == 0


@pytest.mark.asyncio()
async def test_replacing_one_leaf_reruns_only_its_root_path() -> None:
    memo = MemoStore()
    leaves = _leaves(50)
    previous = build_variable(leaves, salt=5, key=b"w")
    await propagate(previous, DirtySet(), SUM, memo)

    changed = list(leaves)
    changed[17] = (changed[17][0], Partial((b"4",)))
    tree = build_variable(changed, salt=5, key=b"w")
    outcome = await propagate(tree, _dirty_from(tree, previous), SUM, memo)

    assert outcome.root == Partial((b"53",))
    assert outcome.fresh == len(_ancestors(tree, tree.leaves[17].node_id))
    assert outcome.fresh + outcome.hits == len(list(tree.internal_nodes()))


@pytest.mark.asyncio()
async def test_unchanged_tree_is_served_entirely_from_memo() -> None:
    memo = MemoStore()
    previous = build_variable(_leaves(20), salt=2, key=b"w")
    await propagate(previous, DirtySet(), SUM, memo)

    tree = build_variable(_leaves(20), salt=2, key=b"w")
    outcome = await propagate(tree, _dirty_from(tree, previous), SUM, memo)

    assert outcome.fresh == 0
    assert outcome.root == Partial((b"20",))


@pytest.mark.asyncio()
async def test_fixed_tree_slide_reruns_log_b_nodes() -> None:
    memo = MemoStore()
    buckets = [Partial((str(slot).encode(),)) for slot in range(8)]
    previous = build_fixed(buckets, 8, key=b"sum")
    first = await propagate(previous, DirtySet(), SUM, memo)

    slid = list(buckets)
    slid[0] = Partial((b"100",))
    tree = build_fixed(slid, 8, key=b"sum")
    outcome = await propagate(tree, _dirty_from(tree, previous), SUM, memo)

    assert first.fresh == 7
    assert tree.depth == 3
    assert outcome.fresh == 3
    assert outcome.root == Partial((b"128",))


def test_fixed_tree_pads_to_a_power_of_two() -> None:
    tree = build_fixed([Partial((b"1",))] * 5, 5)

    assert len(tree.leaves) == 8
    assert tree.depth == 3


def test_fixed_tree_needs_exactly_b_buckets() -> None:
    with pytest.raises(BucketCountMismatchError):
        build_fixed([Partial()] * 3, 4)


@pytest.mark.asyncio()
async def test_append_fold_combines_the_accumulator_with_the_new_partial() -> None:
    memo = MemoStore()
    seeded = build_append(None, [(leaf_identity(b"split-0"), Partial((b"6",)))], key=b"a")
    first = await propagate(seeded, DirtySet(), SUM, memo)

    ident = leaf_identity(b"split-1")
    grown = append_fold(seeded, ident, Partial((b"4",)))
    outcome = await propagate(grown, DirtySet([NodeId(0, ident)]), SUM, memo)

    assert first.fresh == 0
    assert first.root == Partial((b"6",))
    assert outcome.fresh == 1
    assert outcome.root == Partial((b"10",))
    assert grown.depth == 1


@pytest.mark.asyncio()
async def test_sequential_appends_cost_one_combine_each_and_keep_one_entry() -> None:
    memo = MemoStore()
    tree = empty_append_tree(b"a")
    fresh = []
    for index in range(50):
        memo.begin_run()
        ident = leaf_identity(f"split-{index}".encode())
        tree = append_fold(tree, ident, Partial((b"1",)))
        outcome = await propagate(tree, DirtySet([NodeId(0, ident)]), SUM, memo)
        memo.end_run_evict()
        fresh.append(outcome.fresh)
        assert tree.depth <= 1
        assert len(memo) <= 1

    assert fresh[0] == 0
    assert sum(fresh) == 49
    assert outcome.root == Partial((b"50",))


def test_build_append_puts_every_new_partial_under_one_node() -> None:
    tree = build_append(Partial((b"3",)), _leaves(3), key=b"a")

    assert len(tree.leaves) == 4
    assert tree.depth == 1
    assert [len(node.children) for node in tree.internal_nodes()] == [4]


def test_append_fold_needs_an_evaluated_accumulator() -> None:
    with pytest.raises(TreeError, match="not been evaluated"):
        append_fold(build_append(None, _leaves(2), key=b"a"), leaf_identity(b"x"), Partial())


def test_append_fold_rejects_other_modes() -> None:
    with pytest.raises(TreeModeMismatchError):
        append_fold(build_fixed([Partial()] * 2), leaf_identity(b"x"), Partial())


def test_empty_append_tree_has_no_root() -> None:
    tree = empty_append_tree(b"a")

    assert tree.root is None
    assert tree.depth == 0


@pytest.mark.asyncio()
async def test_clean_node_missing_from_memo_is_an_error_in_strict_mode() -> None:
    memo = MemoStore()
    previous = build_variable(_leaves(8), salt=4, key=b"w")
    await propagate(previous, DirtySet(), SUM, memo)

    tree = build_variable(_leaves(8), salt=4, key=b"w")
    with pytest.raises(MemoMissError):
        await propagate(tree, _dirty_from(tree, previous), SUM, MemoStore())


@pytest.mark.asyncio()
async def test_lenient_mode_recomputes_a_missing_clean_node() -> None:
    memo = MemoStore()
    previous = build_variable(_leaves(8), salt=4, key=b"w")
    await propagate(previous, DirtySet(), SUM, memo)

    tree = build_variable(_leaves(8), salt=4, key=b"w")
    outcome = await propagate(tree, _dirty_from(tree, previous), SUM, MemoStore(), strict=False)

    assert outcome.root == Partial((b"8",))
    assert outcome.fresh == len(list(tree.internal_nodes()))


@pytest.mark.asyncio()
async def test_growing_combine_outputs_are_counted() -> None:
    growing = CombineFn("grow", "1", lambda _key, values: values + [b"0"], monotonic=False)
    tree = build_variable(_leaves(4), salt=0, key=b"g")

    outcome = await propagate(tree, DirtySet(), growing, MemoStore())

    assert outcome.violations == outcome.fresh > 0


@pytest.mark.asyncio()
async def test_pool_width_does_not_change_results() -> None:
    results = []
    for width in (1, 8):
        tree = build_variable(_leaves(40), salt=9, key=b"w")
        with WorkerPool(width) as pool:
            outcome = await propagate(tree, DirtySet(), SUM, MemoStore(), pool=pool)
        results.append((outcome.root, outcome.fresh, [task.task for task in outcome.executed]))

    assert results[0] == results[1]


def test_coins_are_fair_and_salt_reshuffles_half_of_them() -> None:
    idents = [fingerprint(index.to_bytes(4, "big")) for index in range(100_000)]
    first = [coin(ident, 0, 1) for ident in idents]
    second = [coin(ident, 0, 2) for ident in idents]

    assert abs(sum(first) / len(idents) - 0.5) <= 0.01
    assert abs(sum(a != b for a, b in zip(first, second)) / len(idents) - 0.5) <= 0.01


def test_eight_leaves_contract_in_about_three_levels() -> None:
    depths = [build_variable(_leaves(8), salt=salt).depth for salt in range(1000)]

    assert all(1 <= depth <= 7 for depth in depths)
    assert 1.5 <= float(np.mean(depths)) <= 3.5


@pytest.mark.slow()
@pytest.mark.asyncio()
async def test_single_leaf_edits_stay_logarithmic_on_average() -> None:
    rng = np.random.default_rng(2024)
    size = 2**10
    fresh = []
    for _ in range(200):
        salt = int(rng.integers(0, 2**63))
        index = int(rng.integers(0, size))
        memo = MemoStore()
        leaves = _leaves(size)
        previous = build_variable(leaves, salt, key=b"w")
        await propagate(previous, DirtySet(), SUM, memo)

        changed = list(leaves)
        changed[index] = (changed[index][0], Partial((b"2",)))
        tree = build_variable(changed, salt, key=b"w")
        outcome = await propagate(tree, _dirty_from(tree, previous), SUM, memo)
        fresh.append(outcome.fresh)

    assert float(np.mean(fresh)) <= 3 * math.log2(size)
