"""Self-adjusting contraction trees.

Three shapes share one node model:

* append-only: a single accumulator node over the previous accumulator and
  the partials appended since, one combine per append;
* fixed-width: a static perfect binary skeleton over a ring of bucket slots;
* variable-width: randomized contraction whose grouping depends only on
  hash-derived coins of node identities, so an edit re-groups an expected
  constant number of nodes per level.

Structure is built without values; :func:`propagate` evaluates the tree bottom
up against the memo store and executes only the dirty nodes.
"""

from __future__ import annotations

import asyncio
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from contract_slide.core.encoding import (
    canonical_encode,
    decode_partial,
    fingerprint,
    fingerprint_of,
)
from contract_slide.core.enums import TaskKind, TreeVariant
from contract_slide.core.errors import ContractSlideError
from contract_slide.core.logging import get_logger
from contract_slide.core.model import (
    Fingerprint,
    FingerprintList,
    FreshTask,
    KeyedValues,
    Partial,
    TaskId,
)
from contract_slide.infrastructure.memo_store import MemoMissError, MemoStore
from contract_slide.services.udf import CombineFn
from contract_slide.services.worker_pool import WorkerPool, run_task

log = get_logger(__name__)

_LEVEL = struct.Struct(">I")
_SLOTS = struct.Struct(">III")
_COIN = struct.Struct(">IQ")


class TreeError(ContractSlideError):
    """Raised when a contraction tree cannot be built or extended."""


class EmptyLeavesError(TreeError):
    """Raised when a tree that needs leaves receives none."""


class BucketCountMismatchError(TreeError):
    """Raised when a fixed-width tree receives the wrong number of buckets."""


class TreeModeMismatchError(TreeError):
    """Raised when an operation is applied to a tree of another mode."""


@dataclass(frozen=True, slots=True)
class TreeMode:
    variant: TreeVariant
    bucket_count: int | None = None

    def __post_init__(self) -> None:
        if self.variant is TreeVariant.FIXED:
            if self.bucket_count is None or self.bucket_count < 2:
                raise ValueError("fixed-width trees need at least 2 buckets")
        elif self.bucket_count is not None:
            raise ValueError(f"{self.variant} trees take no bucket count")

    @classmethod
    def append(cls) -> TreeMode:
        return cls(TreeVariant.APPEND)

    @classmethod
    def fixed(cls, bucket_count: int) -> TreeMode:
        return cls(TreeVariant.FIXED, bucket_count)

    @classmethod
    def variable(cls) -> TreeMode:
        return cls(TreeVariant.VARIABLE)

    @property
    def padded_slots(self) -> int:
        """Power of two holding every bucket slot of a fixed-width window."""
        if self.bucket_count is None:
            raise TreeModeMismatchError("only fixed-width trees have slots")
        return 1 << (self.bucket_count - 1).bit_length()

    def __str__(self) -> str:
        if self.variant is TreeVariant.FIXED:
            return f"fixed[{self.bucket_count}]"
        return self.variant.value


@dataclass(frozen=True, slots=True, order=True)
class NodeId:
    level: int
    ident: Fingerprint

    def short(self) -> str:
        return f"L{self.level}:{self.ident.short()}"


@dataclass(frozen=True, slots=True)
class NodeRecord:
    """What the previous run memoized for a node with the same identity and children."""

    task_id: TaskId | None
    payload_fp: Fingerprint


@dataclass(slots=True)
class TreeNode:
    node_id: NodeId
    children: tuple[NodeId, ...] = ()
    value: Partial | None = None
    payload_fp: Fingerprint | None = None
    task_id: TaskId | None = None
    prior: NodeRecord | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def set_value(self, value: Partial) -> None:
        self.value = value
        self.payload_fp = fingerprint_of(value)


@dataclass(slots=True)
class ContractionTree:
    key: bytes
    mode: TreeMode
    levels: list[list[TreeNode]] = field(default_factory=lambda: [[]])
    _index: dict[NodeId, TreeNode] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        for level in self.levels:
            for node in level:
                self._index[node.node_id] = node

    def add(self, level: int, node: TreeNode) -> TreeNode:
        while len(self.levels) <= level:
            self.levels.append([])
        self.levels[level].append(node)
        self._index[node.node_id] = node
        return node

    def node(self, node_id: NodeId) -> TreeNode:
        return self._index[node_id]

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._index

    @property
    def leaves(self) -> list[TreeNode]:
        return self.levels[0]

    @property
    def root(self) -> TreeNode | None:
        for level in reversed(self.levels):
            if level:
                return level[-1]
        return None

    @property
    def depth(self) -> int:
        return sum(1 for level in self.levels[1:] if level)

    def internal_nodes(self) -> Iterator[TreeNode]:
        for level in self.levels[1:]:
            yield from level

    def node_ids(self, level: int) -> set[NodeId]:
        if level >= len(self.levels):
            return set()
        return {node.node_id for node in self.levels[level]}

    def inherit(self, previous: ContractionTree | None) -> None:
        """Attach the previous run's memo records to nodes whose identity and children are unchanged."""
        if previous is None:
            return
        for level in self.levels:
            for node in level:
                if node.node_id not in previous:
                    continue
                old = previous.node(node.node_id)
                if old.children != node.children or old.payload_fp is None:
                    continue
                node.prior = NodeRecord(task_id=old.task_id, payload_fp=old.payload_fp)

    def release_values(self) -> None:
        """Drop evaluated values once a run commits; identities and fingerprints stay."""
        for level in self.levels:
            for node in level:
                node.value = None


class DirtySet:
    """Per-level sets of nodes whose inputs changed since the memoized run."""

    def __init__(self, node_ids: Sequence[NodeId] = ()) -> None:
        self._levels: list[set[NodeId]] = []
        for node_id in node_ids:
            self.mark(node_id)

    def mark(self, node_id: NodeId) -> None:
        while len(self._levels) <= node_id.level:
            self._levels.append(set())
        self._levels[node_id.level].add(node_id)

    def __contains__(self, node_id: object) -> bool:
        if not isinstance(node_id, NodeId) or node_id.level >= len(self._levels):
            return False
        return node_id in self._levels[node_id.level]

    def level(self, level: int) -> frozenset[NodeId]:
        if level >= len(self._levels):
            return frozenset()
        return frozenset(self._levels[level])

    def __len__(self) -> int:
        return sum(len(level) for level in self._levels)

    def __bool__(self) -> bool:
        return len(self) > 0


def coin(node_fp: Fingerprint, level: int, salt: int) -> bool:
    """Deterministic fair bit from a node's own identity, level and salt."""
    digest = hashlib.sha256(node_fp.digest + _COIN.pack(level, salt & 0xFFFFFFFFFFFFFFFF)).digest()
    return bool(digest[0] & 1)


def leaf_identity(position: bytes) -> Fingerprint:
    return fingerprint(b"leaf:" + position)


def _parent_identity(level: int, children: Sequence[NodeId]) -> Fingerprint:
    listed = FingerprintList(tuple(child.ident for child in children))
    return fingerprint(_LEVEL.pack(level) + canonical_encode(listed))


def _slot_identity(level: int, low: int, high: int) -> Fingerprint:
    return fingerprint(b"slot:" + _SLOTS.pack(level, low, high))


def _group_level(nodes: Sequence[TreeNode], level: int, salt: int) -> list[list[TreeNode]]:
    runs: list[list[TreeNode]] = []
    current: list[TreeNode] = []
    for node in nodes:
        current.append(node)
        if coin(node.node_id.ident, level, salt):
            runs.append(current)
            current = []
    if current:
        runs.append(current)

    # A run of one joins its right neighbour; a trailing one joins the group before it.
    groups: list[list[TreeNode]] = []
    pending: list[TreeNode] = []
    for run in runs:
        pending.extend(run)
        if len(pending) >= 2:
            groups.append(pending)
            pending = []
    if pending:
        groups[-1].extend(pending)
    return groups


def build_variable(
    leaves: Sequence[tuple[Fingerprint, Partial]],
    salt: int,
    *,
    key: bytes = b"",
) -> ContractionTree:
    if not leaves:
        raise EmptyLeavesError("variable-width trees need at least one leaf")
    tree = ContractionTree(key=key, mode=TreeMode.variable())
    for ident, value in leaves:
        node_id = NodeId(0, ident)
        if node_id in tree:
            raise TreeError(f"duplicate leaf identity {ident.short()}")
        node = TreeNode(node_id)
        node.set_value(value)
        tree.add(0, node)

    level = 0
    current = tree.levels[0]
    while len(current) > 1:
        level += 1
        for group in _group_level(current, level - 1, salt):
            children = tuple(node.node_id for node in group)
            tree.add(level, TreeNode(NodeId(level, _parent_identity(level, children)), children))
        current = tree.levels[level]
    return tree


def build_fixed(
    buckets: Sequence[Partial],
    bucket_count: int | None = None,
    *,
    key: bytes = b"",
) -> ContractionTree:
    mode = TreeMode.fixed(bucket_count if bucket_count is not None else len(buckets))
    if len(buckets) != mode.bucket_count:
        raise BucketCountMismatchError(
            f"expected {mode.bucket_count} bucket partials, received {len(buckets)}"
        )
    slots = mode.padded_slots
    padded = list(buckets) + [Partial()] * (slots - len(buckets))

    tree = ContractionTree(key=key, mode=mode)
    for slot, value in enumerate(padded):
        node = TreeNode(NodeId(0, _slot_identity(0, slot, slot + 1)))
        node.set_value(value)
        tree.add(0, node)

    level, width = 0, 1
    while len(tree.levels[level]) > 1:
        below = tree.levels[level]
        level, width = level + 1, width * 2
        for index in range(0, len(below), 2):
            low = (index // 2) * width
            children = (below[index].node_id, below[index + 1].node_id)
            ident = _slot_identity(level, low, low + width)
            tree.add(level, TreeNode(NodeId(level, ident), children))
    return tree


def accumulator_identity(key: bytes) -> Fingerprint:
    return fingerprint(b"acc:" + key)


def empty_append_tree(key: bytes = b"") -> ContractionTree:
    return ContractionTree(key=key, mode=TreeMode.append())


def build_append(
    accumulator: Partial | None,
    partials: Sequence[tuple[Fingerprint, Partial]],
    *,
    key: bytes = b"",
) -> ContractionTree:
    """One accumulator node over the previous accumulator and the newly appended partials.

    With no accumulator and a single partial the partial becomes the accumulator
    and nothing has to be combined.
    """
    tree = empty_append_tree(key)
    if accumulator is not None:
        seed = TreeNode(NodeId(0, accumulator_identity(key)))
        seed.set_value(accumulator)
        tree.add(0, seed)
    for ident, value in partials:
        node_id = NodeId(0, ident)
        if node_id in tree:
            raise TreeError(f"duplicate leaf identity {ident.short()}")
        leaf = TreeNode(node_id)
        leaf.set_value(value)
        tree.add(0, leaf)
    if len(tree.leaves) >= 2:
        children = tuple(leaf.node_id for leaf in tree.leaves)
        tree.add(1, TreeNode(NodeId(1, _parent_identity(1, children)), children))
    return tree


def append_fold(tree: ContractionTree, ident: Fingerprint, new_partial: Partial) -> ContractionTree:
    """Start the next append-only tree from ``tree``'s evaluated accumulator.

    Only the accumulator value carries over; the returned tree holds it as a
    clean leaf next to ``new_partial`` under a single combine node.
    """
    if tree.mode.variant is not TreeVariant.APPEND:
        raise TreeModeMismatchError(f"append_fold needs an append-only tree, got {tree.mode}")
    root = tree.root
    if root is not None and root.value is None:
        raise TreeError(f"accumulator of key {tree.key!r} has not been evaluated")
    accumulator = root.value if root is not None else None
    return build_append(accumulator, [(ident, new_partial)], key=tree.key)


@dataclass(slots=True)
class Propagation:
    root: Partial | None = None
    fresh: int = 0
    hits: int = 0
    violations: int = 0
    executed: list[FreshTask] = field(default_factory=list)


def _combine_input(tree: ContractionTree, node: TreeNode) -> KeyedValues:
    values: list[bytes] = []
    for child_id in node.children:
        child = tree.node(child_id)
        if child.value is None:
            raise TreeError(f"child {child_id.short()} evaluated out of order")
        values.extend(child.value.values)
    return KeyedValues(tree.key, tuple(values))


def _combine_task(combine: CombineFn, payload: KeyedValues) -> TaskId:
    return TaskId(TaskKind.COMBINE, combine.fn_id, fingerprint_of(payload))


async def _execute(
    tree: ContractionTree,
    node: TreeNode,
    combine: CombineFn,
    memo: MemoStore,
    pool: WorkerPool | None,
    result: Propagation,
) -> FreshTask:
    payload = _combine_input(tree, node)
    task_id = _combine_task(combine, payload)
    output, seconds = await run_task(pool, combine, payload.key, payload.values)
    value = Partial(tuple(output))
    memo.put(task_id, canonical_encode(value))
    node.task_id = task_id
    node.set_value(value)
    if len(value) > len(payload.values):
        result.violations += 1
        log.warning(
            "non_monotonic_combine",
            key=tree.key,
            combine=combine.name,
            input_size=len(payload.values),
            output_size=len(value),
        )
    return FreshTask(TaskKind.COMBINE, task_id.short(), seconds)


def _reuse(node: TreeNode, task_id: TaskId, output: bytes) -> None:
    node.task_id = task_id
    node.set_value(decode_partial(output))


def _lookup(
    tree: ContractionTree,
    node: TreeNode,
    combine: CombineFn,
    memo: MemoStore,
    *,
    strict: bool,
) -> bool:
    """Serve a clean node from the memo store; False means it has to run."""
    if node.prior is not None and node.prior.task_id is not None:
        entry = memo.get(node.prior.task_id)
        if entry is not None:
            _reuse(node, node.prior.task_id, entry.output)
            return True
        if strict:
            raise MemoMissError(
                f"clean node {node.node_id.short()} of key {tree.key!r} missing from memo store"
            )
        log.warning("memo_clean_miss", key=tree.key, node=node.node_id)
        return False

    task_id = _combine_task(combine, _combine_input(tree, node))
    entry = memo.get(task_id)
    if entry is None:
        return False
    _reuse(node, task_id, entry.output)
    return True


async def propagate(
    tree: ContractionTree,
    dirty: DirtySet,
    combine: CombineFn,
    memo: MemoStore,
    *,
    pool: WorkerPool | None = None,
    strict: bool = True,
) -> Propagation:
    """Evaluate ``tree`` bottom-up, executing only nodes below which something changed.

    ``dirty`` must mark exactly the changed or new leaves; parents of executed
    nodes are marked as the pass climbs. Clean nodes with a prior record must be
    present in ``memo``. Nodes without history are looked up by content first.
    """
    result = Propagation()
    for level in tree.levels[1:]:
        pending: list[TreeNode] = []
        for node in level:
            if _visit(tree, node, dirty, combine, memo, result, strict=strict):
                pending.append(node)
        # Level barrier: every dirty node of this level finishes before the next level starts.
        executed = await asyncio.gather(
            *(_execute(tree, node, combine, memo, pool, result) for node in pending)
        )
        result.executed.extend(executed)

    result.fresh = len(result.executed)
    root = tree.root
    result.root = root.value if root is not None else None
    return result


def _visit(
    tree: ContractionTree,
    node: TreeNode,
    dirty: DirtySet,
    combine: CombineFn,
    memo: MemoStore,
    result: Propagation,
    *,
    strict: bool,
) -> bool:
    if not any(child in dirty for child in node.children):
        if _lookup(tree, node, combine, memo, strict=strict):
            result.hits += 1
            return False
    dirty.mark(node.node_id)
    return True
