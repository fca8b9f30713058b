from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ladder_rpki import mtl
from ladder_rpki.mtl import Ladder, auth_path, fold_path, ladder_root, leaf_hash, rung_sizes, verify_path


def commitments(n: int, salt: bytes = b"") -> list[bytes]:
    return [leaf_hash(salt + i.to_bytes(4, "big")) for i in range(n)]


# -- hashing ------------------------------------------------------------------


def test_leaf_hash_known_answer():
    # SHA-256 of the single byte 0x00
    assert leaf_hash(b"").hex() == "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d"


def test_domains_are_separated():
    a = leaf_hash(b"x")
    assert mtl.node_hash(a, a) != leaf_hash(a + a)
    assert mtl.ladder_hash(mtl.LADDER_PREFIX, 1, [a]) != mtl.ladder_hash(mtl.AGGREGATE_PREFIX, 1, [a])


def test_ladder_rejects_short_digest():
    with pytest.raises(ValueError):
        Ladder().append_leaf(b"short")
    with pytest.raises(ValueError):
        Ladder.from_commitments([b"short"])


# -- rung decomposition -----------------------------------------------------


def test_rung_sizes_fourteen_then_merge_to_sixteen():
    ladder = Ladder.from_commitments(commitments(14))
    assert [r.size for r in ladder.object_rungs] == [8, 4, 2]
    ladder.append_leaf(leaf_hash(b"15"))
    ladder.append_leaf(leaf_hash(b"16"))
    assert [r.size for r in ladder.object_rungs] == [16]


def test_rung_sizes_exhaustive_against_binary_decomposition():
    for n in range(4097):
        assert rung_sizes(n) == oracles.binary_decomposition(n)


def test_rung_sizes_rejects_negative():
    with pytest.raises(ValueError):
        rung_sizes(-1)


def test_rungs_are_aligned():
    ladder = Ladder.from_commitments(commitments(45))
    for rung in ladder.object_rungs:
        assert rung.start_index % rung.size == 0
        assert rung.depth == rung.size.bit_length() - 1


# -- roots ------------------------------------------------------------------


def test_root_known_answer_fourteen_leaves():
    leaves = [leaf_hash(bytes([i])) for i in range(14)]
    ladder = Ladder.from_commitments(leaves)
    assert ladder.root().hex() == "677c700b8627cb3fc54f24df5d2d3594255ca056dfb3863fa5238c448a47abf8"
    ladder.append_metadata_rung(leaf_hash(b"crl"), "crl")
    ladder.append_metadata_rung(leaf_hash(b"mf"), "manifest")
    assert ladder.root().hex() == "0fe4059c251ccebbbb54cac25a7294f9f8e223e55222313be128ab12a8645a98"


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=300), st.binary(max_size=4))
def test_root_matches_recursive_oracle(n, salt):
    leaves = commitments(n, salt)
    meta = [leaf_hash(b"crl" + salt), leaf_hash(b"manifest" + salt)]
    ladder = Ladder.from_commitments(leaves, {"crl": meta[0], "manifest": meta[1]})
    assert [r.root for r in ladder.object_rungs] == oracles.rung_roots(leaves)
    assert ladder_root(ladder) == oracles.ladder_root(leaves, meta)


def test_empty_ladder_has_no_root():
    with pytest.raises(mtl.EmptyLadder):
        Ladder().root()


def test_metadata_only_ladder_has_root():
    ladder = Ladder.from_commitments([], [leaf_hash(b"m")])
    assert ladder.root() == oracles.ladder_root([], [leaf_hash(b"m")])


def test_empty_aggregate_root_is_defined():
    assert mtl.aggregate_root(Ladder()) == oracles.sha256(b"\x03" + bytes(8))


# -- append / rebuild -----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.lists(st.binary(max_size=8), max_size=200))
def test_append_equals_rebuild(payloads):
    leaves = [leaf_hash(p) for p in payloads]
    grown = Ladder()
    for c in leaves:
        grown.append_leaf(c)
    built = Ladder.from_commitments(leaves)
    assert grown.levels == built.levels
    assert grown.object_rungs == built.object_rungs


@pytest.mark.parametrize("n", [0, 1, 2, 3, 14, 15, 16, 1000, 4096])
def test_bulk_build_costs_n_minus_r(n):
    ladder = Ladder.from_commitments(commitments(n))
    assert ladder.node_hashes == oracles.bulk_node_hashes(n) == mtl.internal_node_count(n)


def test_append_returns_merge_count():
    ladder = Ladder.from_commitments(commitments(7))
    assert ladder.append_leaf(leaf_hash(b"8")) == 3
    assert ladder.append_leaf(leaf_hash(b"9")) == 0


def test_append_never_rewrites_existing_nodes():
    ladder = Ladder.from_commitments(commitments(100))
    before = dict(ladder.node_cache())
    ladder.extend(commitments(57, b"more"))
    after = dict(ladder.node_cache())
    assert all(after[k] == v for k, v in before.items())


# -- leaf updates -------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=200), st.data())
def test_update_leaves_equals_rebuild(n, data):
    leaves = commitments(n)
    indices = data.draw(st.sets(st.integers(min_value=0, max_value=n - 1), max_size=10))
    changes = {i: leaf_hash(b"new" + bytes([i % 256])) for i in indices}
    ladder = Ladder.from_commitments(leaves)
    ladder.node_hashes = 0
    spent = ladder.update_leaves(changes)
    for i, c in changes.items():
        leaves[i] = c
    assert ladder.levels == Ladder.from_commitments(leaves).levels
    # each change dirties at most one node per level of its rung
    bound = sum(len(auth_path(ladder, i).siblings) for i in indices)
    assert spent == ladder.node_hashes <= bound


def test_update_leaves_out_of_range():
    with pytest.raises(mtl.IndexOutOfRange):
        Ladder.from_commitments(commitments(4)).update_leaves({4: leaf_hash(b"")})


def test_truncate_restores_prefix():
    ladder = Ladder.from_commitments(commitments(37))
    ladder.truncate(20)
    assert ladder.levels == Ladder.from_commitments(commitments(37)[:20]).levels


# -- metadata rungs -------------------------------------------------------------


def test_metadata_refresh_leaves_object_nodes_alone():
    ladder = Ladder.from_commitments(commitments(300))
    levels = [list(level) for level in ladder.levels]
    hashes = ladder.node_hashes
    for i in range(200):
        ladder.append_metadata_rung(leaf_hash(b"crl%d" % i), "crl")
        ladder.append_metadata_rung(leaf_hash(b"mf%d" % i), "manifest")
    assert ladder.levels == levels
    assert ladder.node_hashes == hashes
    assert [r.start_index for r in ladder.metadata_rungs] == [300, 301]
    assert ladder.metadata_root("manifest") == leaf_hash(b"mf199")


def test_metadata_rungs_never_merge():
    ladder = Ladder.from_commitments(commitments(2), [leaf_hash(b"a"), leaf_hash(b"b")])
    assert [(r.size, r.kind) for r in ladder.rungs] == [
        (2, mtl.RungKind.OBJECT),
        (1, mtl.RungKind.METADATA),
        (1, mtl.RungKind.METADATA),
    ]


# -- authentication paths -----------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 5, 14, 33, 64])
def test_every_path_verifies(n):
    leaves = commitments(n)
    ladder = Ladder.from_commitments(leaves)
    rungs = ladder.object_rungs
    for i in range(n):
        path = auth_path(ladder, i)
        assert verify_path(leaves[i], path, rungs[path.rung_position].root)
        assert not verify_path(leaf_hash(b"other"), path, rungs[path.rung_position].root)


def test_path_hash_total_matches_oracle():
    for n in (1, 7, 100, 4096):
        ladder = Ladder.from_commitments(commitments(n))
        total = sum(fold_path(ladder.leaf(i), auth_path(ladder, i))[1] for i in range(n))
        assert total == oracles.per_path_node_hashes(n) == mtl.path_hash_count(n)


def test_path_out_of_range():
    with pytest.raises(mtl.IndexOutOfRange):
        auth_path(Ladder.from_commitments(commitments(3)), 3)


def test_path_byte_size():
    ladder = Ladder.from_commitments(commitments(64))
    assert auth_path(ladder, 5).byte_size == 32 * 6
