from __future__ import annotations

import base64
import threading

import pytest

from ladder_rpki import signing
from ladder_rpki.formats import Crl, Manifest, PathBundle, RegistryListing, RegistryRoot, RootRecord
from ladder_rpki.mtl import leaf_hash
from ladder_rpki.publisher import PublicationPoint
from ladder_rpki.service import (
    BindFailure,
    CorruptRepo,
    EndpointDescriptor,
    HttpTransport,
    LoopbackTransport,
    PublicationServer,
    RepositoryView,
    TransportError,
)


@pytest.fixture
def view(point) -> RepositoryView:
    return RepositoryView(point.repo)


def test_registry_root_json(view, point):
    resp = view.handle("/registry/root")
    assert resp.ok and resp.content_type == "application/json"
    doc = resp.json()
    assert set(doc) >= {"epoch", "serial", "aggregate_root", "scheme", "signature", "signer_id"}
    root = RegistryRoot.from_json(doc)
    assert root.aggregate_root == point.registry.root()
    assert signing.verify(point.trust_anchor, root.aggregate_root, root.signature)


def test_registry_root_is_byte_stable(view):
    assert view.handle("/registry/root").body == view.handle("/registry/root").body


def test_listing_three_hosted_children(tmp_path, clock):
    pp = PublicationPoint.create(tmp_path / "repo", seed=b"t", clock=clock)
    for name in ("a", "b", "c"):
        pp.init_ca(name).issue_object("x", name.encode())
    pp.publish_all()
    listing = RegistryListing.from_bytes(RepositoryView(pp.repo).handle("/registry/listing").body)
    assert len(listing.children) == 3
    assert all(len(c.ladder_root) == 32 for c in listing.children)


def test_ca_routes(view, point):
    snap = point.cas["alpha"].current
    manifest = view.handle("/ca/alpha/manifest")
    assert manifest.body == snap.manifest_bytes
    assert manifest.content_type == "application/octet-stream"
    assert manifest.headers["X-Snapshot"] == "0.1"
    assert view.handle("/ca/alpha/crl").body == snap.crl_bytes
    assert view.handle("/ca/alpha/obj/alpha-3.roa").body == b"alpha object 3"
    record = RootRecord.from_json(view.handle("/ca/alpha/root").json())
    assert record.ladder_root == snap.ladder_root
    assert record.rung_descriptor == [8, 4, 2]


def test_manifest_leaf_is_metadata_rung_root(view, point):
    body = view.handle("/ca/alpha/manifest").body
    assert leaf_hash(body) == point.cas["alpha"].ladder.metadata_root("manifest")


def test_not_found(view):
    for target in ("/ca/alpha/obj/missing", "/ca/nobody/manifest", "/ca/_registry/manifest", "/nope",
                   "/ca/alpha/obj/..", "/ca/alpha/manifest?snapshot=9.9", "/ca/alpha/manifest?root=zz"):
        assert view.handle(target).status == 404, target


def test_unavailable_before_registry(tmp_path):
    (tmp_path / "empty").mkdir()
    assert RepositoryView(tmp_path / "empty").handle("/registry/root").status == 503


def test_corrupt_repo(tmp_path):
    with pytest.raises(CorruptRepo):
        RepositoryView(tmp_path / "missing")


def test_pinning_by_root_and_snapshot(view, point):
    old = point.cas["alpha"].current
    point.cas["alpha"].issue_object("new", b"new")
    point.publish("alpha")
    assert view.handle("/ca/alpha/manifest").headers["X-Snapshot"] == "0.2"
    pinned = view.handle(f"/ca/alpha/manifest?root={old.ladder_root.hex()}")
    assert pinned.body == old.manifest_bytes
    assert view.handle("/ca/alpha/manifest?snapshot=0.1").body == old.manifest_bytes
    assert view.handle(f"/ca/alpha/obj/new?root={old.ladder_root.hex()}").status == 404


def test_paths_route(view, point):
    bundle = PathBundle.from_bytes(view.handle("/ca/alpha/paths").body)
    assert [r.root for r in point.cas["alpha"].ladder.object_rungs] == bundle.rung_roots
    assert set(bundle.paths) == {f"alpha-{i}.roa" for i in range(14)}


def test_falcon_sized_root_envelope():
    sig = signing.placeholder_signature("falcon-model", b"root")
    root = RegistryRoot("reg", 0, 1, leaf_hash(b"agg"), "falcon-model", "reg", sig)
    doc = root.to_json()
    assert len(base64.b64decode(doc["signature"])) == 666
    assert len(bytes.fromhex(doc["aggregate_root"])) == 32
    # seven TLV headers, epoch and serial, and the three text fields
    framing = 7 * 5 + 2 * 8 + len("reg") * 2 + len("falcon-model")
    assert len(root.to_bytes()) == 32 + 666 + framing


def test_loopback_counts_and_failure_injection(view):
    transport = LoopbackTransport(view)
    body = transport.get("/registry/listing").body
    assert transport.requests == 1 and transport.bytes_received == len(body)
    transport.fail_after = 1
    with pytest.raises(TransportError):
        transport.get("/registry/root")


def test_endpoint_descriptor(point):
    transport = EndpointDescriptor("registry", repo_root=point.repo).transport()
    assert transport.get("/registry/root").ok


def test_http_routes_match_loopback(point, view):
    with PublicationServer(point.repo) as server:
        http = HttpTransport(server.url)
        for target in ("/registry/root", "/registry/listing", "/ca/alpha/manifest", "/ca/gamma/root",
                       "/ca/beta/obj/beta-2.roa"):
            a, b = http.get(target), view.handle(target)
            assert (a.status, a.body) == (b.status, b.body)
        assert http.get("/ca/alpha/obj/missing").status == 404
        assert http.get("/ca/alpha/manifest").headers["X-Snapshot"] == "0.1"


def test_http_connection_failure_is_transport_error():
    with pytest.raises(TransportError):
        HttpTransport("http://127.0.0.1:9", timeout=1).get("/registry/root")


def test_bind_failure(point):
    with PublicationServer(point.repo) as server:
        host, port = server.url.rsplit(":", 1)
        with pytest.raises(BindFailure):
            PublicationServer(point.repo, ("127.0.0.1", int(port)))


def test_reads_during_publish_come_from_one_snapshot(point):
    """Readers fetch manifest, CRL and every object tagged with one serial;
    each such set must cross-validate while a writer keeps publishing."""
    ca = point.cas["alpha"]
    stop = threading.Event()
    errors: list[str] = []

    def writer():
        i = 0
        while not stop.is_set() and i < 60:
            ca.issue_object(f"w{i}", b"w%d" % i)
            if i % 3 == 0:
                ca.delete_object(f"w{i}")
            point.publish("alpha")
            i += 1

    def reader(http: HttpTransport):
        for _ in range(25):
            head = http.get("/ca/alpha/manifest")
            snap = head.headers["X-Snapshot"]
            pin = f"?snapshot={snap}"
            crl = http.get(f"/ca/alpha/crl{pin}")
            root = http.get(f"/ca/alpha/root{pin}")
            if 404 in (crl.status, root.status):
                continue  # pruned between requests; never mixed
            manifest = Manifest.from_bytes(head.body)
            if manifest.crl_commitment != leaf_hash(crl.body):
                errors.append(f"crl mismatch at {snap}")
            record = RootRecord.from_json(root.json())
            if (record.epoch, record.serial) != (manifest.epoch, manifest.serial):
                errors.append(f"root mismatch at {snap}")
            Crl.from_bytes(crl.body)
            for name, index in list(manifest.names().items())[-3:]:
                obj = http.get(f"/ca/alpha/obj/{name}{pin}")
                if obj.status == 200 and leaf_hash(obj.body) != manifest.entries[index].commitment:
                    errors.append(f"object mismatch {name} at {snap}")

    with PublicationServer(point.repo) as server:
        threads = [threading.Thread(target=writer)]
        threads += [threading.Thread(target=reader, args=(HttpTransport(server.url),)) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads[1:]:
            t.join()
        stop.set()
        threads[0].join()
    assert errors == []
