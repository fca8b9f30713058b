from __future__ import annotations

import json

import pytest

import oracles
from conftest import FixedClock
from ladder_rpki import signing
from ladder_rpki.formats import CaMode, ChildEntry, Crl, EntryKind, Manifest, RegistryListing, RegistryRoot, RootRecord
from ladder_rpki.mtl import leaf_hash
from ladder_rpki.publisher import (
    AlreadyDeleted,
    CertificateAuthority,
    DuplicateCa,
    DuplicateName,
    NotFound,
    ObjectStatus,
    PublicationPoint,
    RateLimited,
    RateLimits,
    Registry,
    UnknownChild,
    load_trust_anchor,
    registry_update,
)


def make_ca(n: int = 0, **kw) -> CertificateAuthority:
    kw.setdefault("clock", FixedClock())
    ca = CertificateAuthority("ca", **kw)
    for i in range(n):
        ca.issue_object(f"o{i}.roa", b"payload %d" % i)
    return ca


# -- object lifecycle ---------------------------------------------------------


def test_issue_assigns_dense_indices_and_commitments():
    ca = make_ca(3)
    assert [o.leaf_index for o in ca.objects] == [0, 1, 2]
    assert ca.objects[1].commitment == oracles.leaf(b"payload 1")


def test_duplicate_name_rejected():
    ca = make_ca(1)
    with pytest.raises(DuplicateName):
        ca.issue_object("o0.roa", b"x")


def test_delete_marks_placeholder_and_revokes():
    ca = make_ca(3)
    ca.delete_object("o1.roa")
    manifest = ca.build_manifest()
    assert [e.label for e in manifest.entries] == ["o0.roa", "D", "o2.roa"]
    assert manifest.entries[1].commitment == oracles.leaf(b"payload 1")
    assert 1 in ca.build_crl().revoked
    with pytest.raises(AlreadyDeleted):
        ca.delete_object("o1.roa")
    with pytest.raises(NotFound):
        ca.delete_object("missing.roa")


def test_deleted_name_can_be_reissued_at_new_index():
    ca = make_ca(2)
    ca.delete_object("o0.roa")
    obj = ca.issue_object("o0.roa", b"fresh")
    assert obj.leaf_index == 2


def test_hidden_objects_are_committed_not_served():
    ca = make_ca(1)
    ca.hide_object("secret", b"hidden bytes")
    snap = ca.publish()
    assert [e.label for e in snap.manifest.entries] == ["o0.roa", "H"]
    assert "secret" not in snap.objects
    ca.revoke_hidden("secret")
    assert ca.build_crl().revoked == {1: ca.clock()}
    with pytest.raises(AlreadyDeleted):
        ca.revoke_hidden("secret")
    with pytest.raises(NotFound):
        ca.revoke_hidden("o0.roa")


def test_index_stability_within_epoch():
    ca = make_ca(10)
    before = {o.name: (o.leaf_index, o.commitment) for o in ca.objects}
    for name in ("o3.roa", "o7.roa"):
        ca.delete_object(name)
    ca.hide_object("h", b"h")
    ca.issue_object("late.roa", b"late")
    ca.publish()
    manifest = ca.build_manifest()
    for name, (index, commitment) in before.items():
        assert manifest.entries[index].commitment == commitment
        if name not in ("o3.roa", "o7.roa"):
            assert manifest.entries[index].name == name


# -- publish ----------------------------------------------------------------


def test_build_is_pure_and_publish_increments_serial():
    ca = make_ca(2)
    m1 = ca.build_manifest()
    assert ca.build_manifest() == m1
    assert ca.serial == 0
    assert ca.publish().serial == 1
    assert ca.publish().serial == 2


def test_published_root_matches_oracle():
    ca = make_ca(14)
    snap = ca.publish()
    meta = [leaf_hash(snap.crl_bytes), leaf_hash(snap.manifest_bytes)]
    assert snap.ladder_root == oracles.ladder_root(ca.build_manifest().commitments(), meta)
    assert snap.self_check()
    assert ca.ladder.metadata_root("manifest") == leaf_hash(snap.manifest_bytes)
    assert ca.ladder.metadata_root("crl") == leaf_hash(snap.crl_bytes)


def test_manifest_excludes_itself_and_commits_crl():
    snap = make_ca(3).publish()
    manifest = snap.manifest
    assert len(manifest.entries) == 3
    assert manifest.crl_commitment == leaf_hash(snap.crl_bytes)


def test_zero_churn_publish_hashes_no_object_nodes():
    ca = make_ca(100)
    ca.publish()
    snap = ca.publish()
    assert snap.node_hashes == 0


def test_publish_cost_counts_only_new_merges():
    ca = make_ca(7)
    ca.publish()
    ca.issue_object("x", b"x")
    assert ca.publish().node_hashes == 3


def test_delegated_root_is_signed():
    ca = make_ca(2, mode=CaMode.DELEGATED, seed=b"d")
    snap = ca.publish()
    assert signing.verify(ca.keypair.public_key, snap.ladder_root, snap.record.signature)
    assert make_ca(2).publish().record.signature == b""


def test_dual_stack_sidecars():
    ca = make_ca(0, dual_stack=True)
    ca.issue_object("a", b"a")
    ca.hide_object("h", b"h")
    assert len(ca.objects[0].classical_sig) == 256
    assert ca.objects[1].classical_sig is None


# -- rate limits -----------------------------------------------------------------


def test_delete_cap_blocks_publish():
    ca = make_ca(5, limits=RateLimits(max_deletes=2))
    for name in ("o0.roa", "o1.roa", "o2.roa"):
        ca.delete_object(name)
    with pytest.raises(RateLimited):
        ca.publish()
    assert ca.serial == 0


def test_update_cap_uses_window():
    clock = FixedClock()
    ca = make_ca(1, limits=RateLimits(max_updates=2, window=60), clock=clock)
    ca.publish()
    ca.publish()
    with pytest.raises(RateLimited):
        ca.publish()
    clock.advance(61)
    ca.publish()


# -- epoch rebuild --------------------------------------------------------------


def test_rebuild_epoch_drops_deleted_and_revoked():
    ca = make_ca(6)
    ca.hide_object("h1", b"h1")
    ca.hide_object("h2", b"h2")
    ca.delete_object("o1.roa")
    ca.revoke_hidden("h1")
    ca.publish()
    ca.rebuild_epoch()
    snap = ca.publish()
    manifest = snap.manifest
    assert (manifest.epoch, manifest.serial) == (1, 1)
    assert [e.label for e in manifest.entries] == ["o0.roa", "o2.roa", "o3.roa", "o4.roa", "o5.roa", "H"]
    assert Crl.from_bytes(snap.crl_bytes).revoked == {}
    assert snap.self_check()
    assert not any(e.kind is EntryKind.DELETED for e in manifest.entries)


# -- on-disk snapshots ---------------------------------------------------------


def test_snapshot_layout(point):
    ca_dir = point.repo / "alpha"
    assert (ca_dir / "current").read_text() == "0.1"
    snap = ca_dir / "0.1"
    assert sorted(p.name for p in snap.iterdir()) == ["crl.bin", "manifest.bin", "obj", "root.bin"]
    assert len(list((snap / "obj").iterdir())) == 14
    record = RootRecord.from_bytes((snap / "root.bin").read_bytes())
    assert record.ladder_root == point.cas["alpha"].current.ladder_root
    assert record.rung_descriptor == [8, 4, 2]
    assert (point.repo / "_registry" / "listing.bin").is_file()


def test_served_files_rebuild_to_root(point):
    snap = point.repo / "alpha" / "0.1"
    manifest_bytes = (snap / "manifest.bin").read_bytes()
    manifest = Manifest.from_bytes(manifest_bytes)
    for name, index in manifest.names().items():
        assert leaf_hash((snap / "obj" / name).read_bytes()) == manifest.entries[index].commitment
    meta = [leaf_hash((snap / "crl.bin").read_bytes()), leaf_hash(manifest_bytes)]
    assert oracles.ladder_root(manifest.commitments(), meta) == point.cas["alpha"].current.ladder_root


def test_old_snapshots_pruned(tmp_path, clock):
    pp = PublicationPoint.create(tmp_path / "repo", seed=b"a", clock=clock)
    pp.keep = 3
    pp.init_ca("ca").issue_object("a", b"a")
    for _ in range(6):
        pp.publish("ca")
    snaps = sorted(p.name for p in (pp.repo / "ca").iterdir() if p.is_dir())
    assert snaps == ["0.4", "0.5", "0.6"]


def test_dual_stack_sidecar_files(tmp_path, clock):
    pp = PublicationPoint.create(tmp_path / "repo", seed=b"a", clock=clock)
    pp.init_ca("ca", dual_stack=True).issue_object("a.roa", b"a")
    pp.publish("ca")
    assert (pp.repo / "ca" / "0.1" / "sig" / "a.roa").stat().st_size == 256


# -- registry --------------------------------------------------------------------


def test_registry_hosted_and_delegated(point):
    listing = RegistryListing.from_bytes((point.repo / "_registry" / "listing.bin").read_bytes())
    assert [(c.child_id, c.mode) for c in listing.children] == [
        ("gamma", CaMode.DELEGATED),
        ("alpha", CaMode.HOSTED),
        ("beta", CaMode.HOSTED),
    ]
    assert listing.children[1].ladder_root == point.cas["alpha"].current.ladder_root
    assert listing.children[0].public_key == point.cas["gamma"].keypair.public_key
    root = RegistryRoot.from_bytes((point.repo / "_registry" / "root.bin").read_bytes())
    assert root.aggregate_root == listing.aggregate_root()
    assert signing.verify(point.trust_anchor, root.aggregate_root, root.signature)


def test_delegated_publish_leaves_aggregate_alone(point):
    before = point.registry.root()
    point.cas["gamma"].issue_object("new", b"new")
    point.publish("gamma")
    assert point.registry.root() == before
    point.cas["alpha"].issue_object("new", b"new")
    point.publish("alpha")
    assert point.registry.root() != before


def test_registry_update_rehashes_one_path():
    reg = Registry("reg", signing.keygen(signing.TEST_SCHEME, b"ta"))
    for i in range(16):
        reg.update(ChildEntry.hosted(f"c{i}", leaf_hash(bytes([i]))))
    result = reg.update(ChildEntry.hosted("c5", leaf_hash(b"new")))
    assert result.changed and result.node_hashes == 4
    assert not reg.update(ChildEntry.hosted("c5", leaf_hash(b"new"))).changed
    with pytest.raises(UnknownChild):
        reg.update(ChildEntry.hosted("zz", leaf_hash(b"")), add=False)
    signed = registry_update(reg, ChildEntry.hosted("c6", leaf_hash(b"n6"))).signed
    assert signed.aggregate_root == RegistryListing("reg", reg.children).aggregate_root()


def test_delegated_overhead_falcon():
    reg = Registry("reg", signing.keygen(signing.TEST_SCHEME, b"ta"))
    reg.update(ChildEntry.delegated("d", b"k" * 897, "falcon-model"))
    reg.update(ChildEntry.hosted("h", leaf_hash(b"")))
    assert reg.delegated_overhead() == 1563


def test_duplicate_ca(point):
    with pytest.raises(DuplicateCa):
        point.init_ca("alpha")
    with pytest.raises(DuplicateCa):
        point.init_ca("_registry")


# -- persistence ------------------------------------------------------------------


def test_save_load_roundtrip(point, clock):
    point.cas["alpha"].delete_object("alpha-3.roa")
    point.cas["alpha"].hide_object("hid", b"hid")
    point.publish("alpha")
    point.save()
    loaded = PublicationPoint.load(point.repo, clock=clock)
    for ca_id, ca in point.cas.items():
        other = loaded.cas[ca_id]
        assert other.build_manifest().to_bytes() == ca.build_manifest().to_bytes()
        assert other.current.ladder_root == ca.current.ladder_root
        assert [o.status for o in other.objects] == [o.status for o in ca.objects]
    assert loaded.registry.root() == point.registry.root()
    assert loaded.registry.serial == point.registry.serial
    # a reloaded CA publishes the same root the original would
    assert loaded.publish("beta").ladder_root == point.publish("beta").ladder_root


def test_trust_anchor_file(point, tmp_path):
    path = tmp_path / "ta.json"
    point.write_trust_anchor(path)
    scheme, key = load_trust_anchor(path)
    assert scheme == signing.TEST_SCHEME and key == point.trust_anchor
    assert json.loads(path.read_text())["public_key"] == key.hex()


def test_object_status_values():
    assert {s.value for s in ObjectStatus} == {"published", "deleted", "hidden"}
