"""Append-only Merkle Tree Ladder.

A ladder holds ``n`` object leaves arranged as a sequence of perfect binary
trees ("rungs") whose sizes follow the binary decomposition of ``n``.  Because
rungs are laid out largest first, every rung of size ``2**k`` starts at a
multiple of ``2**k``; a node is therefore addressed globally by
``(level, offset)`` and level ``k`` simply holds the ``n >> k`` completed
subtree roots of that height.

Depth-0 metadata rungs (CRL, Manifest) sit after the object rungs, never merge
with them, and can be swapped without touching any object node.

Hash domains::

    leaf    SHA-256(0x00 || payload)
    node    SHA-256(0x01 || left || right)
    ladder  SHA-256(0x02 || u64be(leaf_count) || rung roots...)
    agg     SHA-256(0x03 || u64be(leaf_count) || rung roots...)
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

DIGEST_SIZE = 32

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
LADDER_PREFIX = b"\x02"
AGGREGATE_PREFIX = b"\x03"

Digest = bytes


class LadderError(Exception):
    pass


class EmptyLadder(LadderError):
    pass


class IndexOutOfRange(LadderError, IndexError):
    pass


def check_digest(value: bytes) -> Digest:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes")
    return bytes(value)


def leaf_hash(payload: bytes) -> Digest:
    return hashlib.sha256(LEAF_PREFIX + payload).digest()


def node_hash(left: Digest, right: Digest) -> Digest:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def rung_sizes(n: int) -> list[int]:
    """Descending powers of two summing to ``n``."""
    if n < 0:
        raise ValueError("leaf count must be non-negative")
    return [1 << k for k in range(n.bit_length() - 1, -1, -1) if n >> k & 1]


def ladder_hash(prefix: bytes, leaf_count: int, roots: Iterable[Digest]) -> Digest:
    h = hashlib.sha256(prefix + leaf_count.to_bytes(8, "big"))
    for root in roots:
        h.update(root)
    return h.digest()


class RungKind(enum.Enum):
    OBJECT = "object"
    METADATA = "metadata"


@dataclass(frozen=True)
class Rung:
    start_index: int
    size: int
    root: Digest
    kind: RungKind = RungKind.OBJECT

    @property
    def depth(self) -> int:
        return self.size.bit_length() - 1


@dataclass(frozen=True)
class AuthPath:
    """Sibling hashes from a leaf up to the root of its rung."""

    leaf_index: int
    siblings: tuple[Digest, ...]
    rung_position: int

    @property
    def byte_size(self) -> int:
        return DIGEST_SIZE * len(self.siblings)


@dataclass
class _MetadataSlot:
    name: str
    root: Digest


class Ladder:
    """Per-CA authentication structure.

    Object leaves are appended with :meth:`append_leaf`; metadata rungs are
    kept in a separate, named list so refreshing one never disturbs object
    nodes.  ``node_hashes`` counts every internal node hash this instance has
    computed, which tests and benchmarks use as a hardware-independent cost.
    """

    def __init__(self) -> None:
        self._levels: list[list[Digest]] = [[]]
        self._metadata: list[_MetadataSlot] = []
        self.node_hashes = 0

    # -- construction -----------------------------------------------------

    @classmethod
    def from_commitments(
        cls,
        commitments: Sequence[Digest],
        metadata: Sequence[Digest] | Mapping[str, Digest] = (),
    ) -> "Ladder":
        """Build all rungs bottom-up, one level at a time.

        Each internal node is hashed exactly once, so a ladder of ``n``
        leaves spread over ``r`` object rungs costs ``n - r`` node hashes.
        """
        ladder = cls()
        level = [check_digest(c) for c in commitments]
        ladder._levels = [level]
        while len(level) >= 2:
            level = [node_hash(level[j], level[j + 1]) for j in range(0, len(level) - 1, 2)]
            ladder.node_hashes += len(level)
            ladder._levels.append(level)
        items = metadata.items() if isinstance(metadata, Mapping) else (
            (f"meta{i}", d) for i, d in enumerate(metadata)
        )
        for name, digest in items:
            ladder.append_metadata_rung(digest, slot=name)
        return ladder

    def copy(self) -> "Ladder":
        other = Ladder()
        other._levels = [list(level) for level in self._levels]
        other._metadata = [_MetadataSlot(m.name, m.root) for m in self._metadata]
        return other

    # -- mutation -----------------------------------------------------------

    def append_leaf(self, commitment: Digest) -> int:
        """Append one object leaf and merge equal-size rungs.

        Returns the number of internal nodes computed, which equals the number
        of merges (the trailing zero bits of the new leaf count).  Existing
        nodes are never rewritten.
        """
        node = check_digest(commitment)
        levels = self._levels
        levels[0].append(node)
        computed = 0
        k = 0
        while len(levels[k]) % 2 == 0:
            node = node_hash(levels[k][-2], levels[k][-1])
            if len(levels) == k + 1:
                levels.append([])
            levels[k + 1].append(node)
            computed += 1
            k += 1
        self.node_hashes += computed
        return computed

    def extend(self, commitments: Iterable[Digest]) -> int:
        return sum(self.append_leaf(c) for c in commitments)

    def update_leaves(self, changes: Mapping[int, Digest]) -> int:
        """Overwrite existing leaves and recompute every affected node once.

        Dirty offsets are propagated level by level, so siblings that both
        changed share a single parent recomputation.  Returns the number of
        node hashes performed.
        """
        n = self.leaf_count
        dirty: set[int] = set()
        for index, digest in changes.items():
            if not 0 <= index < n:
                raise IndexOutOfRange(index)
            self._levels[0][index] = check_digest(digest)
            dirty.add(index)
        computed = 0
        k = 0
        while dirty and k + 1 < len(self._levels):
            below = self._levels[k]
            above = self._levels[k + 1]
            parents = {i >> 1 for i in dirty if (i >> 1) < len(above)}
            for p in parents:
                above[p] = node_hash(below[2 * p], below[2 * p + 1])
            computed += len(parents)
            dirty = parents
            k += 1
        self.node_hashes += computed
        return computed

    def append_metadata_rung(self, commitment: Digest, slot: str | None = None) -> None:
        """Append a depth-0 rung, or swap the root of an existing named slot."""
        commitment = check_digest(commitment)
        if slot is not None:
            for meta in self._metadata:
                if meta.name == slot:
                    meta.root = commitment
                    return
        else:
            slot = f"meta{len(self._metadata)}"
        self._metadata.append(_MetadataSlot(slot, commitment))

    def truncate(self, n: int) -> None:
        """Drop leaves ``n`` and above (used when a validator discards a tail)."""
        if n > self.leaf_count:
            raise IndexOutOfRange(n)
        self._levels = [level[: n >> k] for k, level in enumerate(self._levels)]
        while len(self._levels) > 1 and not self._levels[-1]:
            self._levels.pop()

    # -- queries ------------------------------------------------------------

    @property
    def leaf_count(self) -> int:
        return len(self._levels[0])

    def leaf(self, index: int) -> Digest:
        if not 0 <= index < self.leaf_count:
            raise IndexOutOfRange(index)
        return self._levels[0][index]

    def leaves(self) -> list[Digest]:
        return list(self._levels[0])

    def node(self, level: int, offset: int) -> Digest:
        try:
            return self._levels[level][offset]
        except IndexError:
            raise KeyError((level, offset)) from None

    def node_cache(self) -> Iterator[tuple[tuple[int, int], Digest]]:
        """All cached internal nodes keyed by ``(level, offset)``."""
        for k, level in enumerate(self._levels[1:], start=1):
            for offset, digest in enumerate(level):
                yield (k, offset), digest

    @property
    def levels(self) -> list[list[Digest]]:
        return self._levels

    @property
    def object_rungs(self) -> list[Rung]:
        rungs = []
        start = 0
        for size in rung_sizes(self.leaf_count):
            k = size.bit_length() - 1
            rungs.append(Rung(start, size, self._levels[k][start >> k], RungKind.OBJECT))
            start += size
        return rungs

    @property
    def metadata_rungs(self) -> list[Rung]:
        n = self.leaf_count
        return [Rung(n + j, 1, m.root, RungKind.METADATA) for j, m in enumerate(self._metadata)]

    def metadata_root(self, slot: str) -> Digest:
        for meta in self._metadata:
            if meta.name == slot:
                return meta.root
        raise KeyError(slot)

    @property
    def rungs(self) -> list[Rung]:
        return self.object_rungs + self.metadata_rungs

    def root(self) -> Digest:
        return ladder_root(self)

    def auth_path(self, index: int) -> AuthPath:
        return auth_path(self, index)


def ladder_root(ladder: Ladder, prefix: bytes = LADDER_PREFIX) -> Digest:
    rungs = ladder.rungs
    if not rungs:
        raise EmptyLadder("ladder has no rungs")
    return ladder_hash(prefix, ladder.leaf_count, (r.root for r in rungs))


def aggregate_root(ladder: Ladder) -> Digest:
    """Registry root; an empty registry still has a well-defined root."""
    if not ladder.rungs:
        return ladder_hash(AGGREGATE_PREFIX, 0, ())
    return ladder_root(ladder, AGGREGATE_PREFIX)


def rebuild_from_commitments(
    commitments: Sequence[Digest], metadata: Sequence[Digest] | Mapping[str, Digest] = ()
) -> Ladder:
    return Ladder.from_commitments(commitments, metadata)


def append_leaf(ladder: Ladder, commitment: Digest) -> Ladder:
    ladder.append_leaf(commitment)
    return ladder


def append_metadata_rung(ladder: Ladder, commitment: Digest, slot: str | None = None) -> Ladder:
    ladder.append_metadata_rung(commitment, slot)
    return ladder


def _locate(n: int, index: int) -> tuple[int, int, int]:
    """Return (rung position, rung start, rung size) holding ``index``."""
    start = 0
    for pos, size in enumerate(rung_sizes(n)):
        if index < start + size:
            return pos, start, size
        start += size
    raise IndexOutOfRange(index)


def auth_path(ladder: Ladder, index: int) -> AuthPath:
    n = ladder.leaf_count
    if not 0 <= index < n:
        raise IndexOutOfRange(index)
    pos, _, size = _locate(n, index)
    siblings = []
    offset = index
    for k in range(size.bit_length() - 1):
        siblings.append(ladder.levels[k][offset ^ 1])
        offset >>= 1
    return AuthPath(index, tuple(siblings), pos)


def fold_path(leaf: Digest, path: AuthPath) -> tuple[Digest, int]:
    """Fold ``leaf`` up ``path``; returns (computed rung root, hashes used)."""
    node = leaf
    bits = path.leaf_index
    for sibling in path.siblings:
        node = node_hash(sibling, node) if bits & 1 else node_hash(node, sibling)
        bits >>= 1
    return node, len(path.siblings)


def verify_path(leaf: Digest, path: AuthPath, expected_rung_root: Digest) -> bool:
    if any(len(s) != DIGEST_SIZE for s in path.siblings):
        return False
    root, _ = fold_path(leaf, path)
    return root == expected_rung_root


def internal_node_count(n: int) -> int:
    """Internal nodes of a ladder with ``n`` leaves: ``n`` minus the rung count."""
    return n - bin(n).count("1")


def path_hash_count(n: int) -> int:
    """Node hashes needed to walk one path per leaf for all ``n`` leaves."""
    return sum(size * (size.bit_length() - 1) for size in rung_sizes(n))

