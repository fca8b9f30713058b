"""CA-side state machine and on-disk publication.

A :class:`CertificateAuthority` owns one ladder.  Objects are only ever
appended within an epoch: deleting marks the Manifest entry ``D`` and hiding
publishes an ``H`` entry, both keeping the leaf commitment so indices never
move.  :meth:`CertificateAuthority.publish` refreshes the CRL and Manifest
depth-0 rungs, derives the ladder root and atomically swaps the served
snapshot.

Repository layout::

    <repo>/<ca_id>/<epoch>.<serial>/{manifest.bin, crl.bin, root.bin, obj/<name>, sig/<name>}
    <repo>/<ca_id>/current
    <repo>/_registry/{listing.bin, root.bin}
    <repo>/.pp/                      publisher-private state (never served)
"""

from __future__ import annotations

import base64
import enum
import json
import logging
import os
import shutil
import tempfile
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import signing
from .formats import (
    CaMode,
    ChildEntry,
    Crl,
    Manifest,
    ManifestEntry,
    RegistryListing,
    RegistryRoot,
    RootRecord,
    check_name,
)
from .mtl import AuthPath, Digest, Ladder, aggregate_root, ladder_root, leaf_hash

log = logging.getLogger(__name__)

CRL_SLOT = "crl"
MANIFEST_SLOT = "manifest"
REGISTRY_DIR = "_registry"
STATE_DIR = ".pp"
DEFAULT_KEEP_SNAPSHOTS = 16


class PublisherError(Exception):
    pass


class DuplicateCa(PublisherError):
    pass


class DuplicateName(PublisherError):
    pass


class NotFound(PublisherError, KeyError):
    pass


class AlreadyDeleted(PublisherError):
    pass


class RateLimited(PublisherError):
    pass


class SigningFailure(PublisherError):
    pass


class UnknownChild(PublisherError, KeyError):
    pass


class ObjectStatus(str, enum.Enum):
    PUBLISHED = "published"
    DELETED = "deleted"
    HIDDEN = "hidden"


@dataclass
class RepositoryObject:
    name: str
    payload: bytes
    status: ObjectStatus
    leaf_index: int
    commitment: Digest
    classical_sig: bytes | None = None
    revoked: bool = False
    revoked_at: int = 0

    def manifest_entry(self) -> ManifestEntry:
        if self.status is ObjectStatus.PUBLISHED:
            return ManifestEntry.named(self.name, self.commitment)
        if self.status is ObjectStatus.DELETED:
            return ManifestEntry.deleted(self.commitment)
        return ManifestEntry.hidden(self.commitment)


@dataclass
class RateLimits:
    """Publish caps; ``0`` disables a cap."""

    max_deletes: int = 0
    max_updates: int = 0
    window: float = 60.0


@dataclass(frozen=True)
class RateDecision:
    allowed: bool
    reason: str = ""


@dataclass
class PublishedSnapshot:
    ca_id: str
    epoch: int
    serial: int
    manifest_bytes: bytes
    crl_bytes: bytes
    root_bytes: bytes
    objects: dict[str, bytes]
    ladder_root: Digest
    record: RootRecord
    node_hashes: int = 0
    path: Path | None = None

    @property
    def snapshot_id(self) -> str:
        return f"{self.epoch}.{self.serial}"

    @property
    def manifest(self) -> Manifest:
        return Manifest.from_bytes(self.manifest_bytes)

    def recompute_root(self) -> Digest:
        """Rebuild the ladder from the served artifacts alone."""
        ladder = Ladder.from_commitments(
            self.manifest.commitments(),
            {CRL_SLOT: leaf_hash(self.crl_bytes), MANIFEST_SLOT: leaf_hash(self.manifest_bytes)},
        )
        return ladder_root(ladder)

    def self_check(self) -> bool:
        manifest = self.manifest
        if manifest.crl_commitment != leaf_hash(self.crl_bytes):
            return False
        for name, index in manifest.names().items():
            payload = self.objects.get(name)
            if payload is None or leaf_hash(payload) != manifest.entries[index].commitment:
                return False
        return self.recompute_root() == self.ladder_root == self.record.ladder_root


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CertificateAuthority:
    """One CA and its append-only ladder.

    ``clock`` returns integer-ish seconds and is injectable so repositories can
    be generated byte-for-byte reproducibly.
    """

    def __init__(
        self,
        ca_id: str,
        mode: CaMode | str = CaMode.HOSTED,
        scheme: str = signing.TEST_SCHEME,
        *,
        parent: str = "",
        seed: bytes | None = None,
        dual_stack: bool = False,
        classical_scheme: str = "rsa2048-model",
        limits: RateLimits | None = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.ca_id = check_name(ca_id)
        self.mode = CaMode(mode)
        self.scheme = signing.get_scheme(scheme)
        self.parent = parent
        self.dual_stack = dual_stack
        self.classical_scheme = classical_scheme
        self.limits = limits or RateLimits()
        self.clock = clock
        self.keypair: signing.KeyPair | None = None
        if self.mode is CaMode.DELEGATED:
            self.keypair = signing.keygen(self.scheme, seed if seed is not None else os.urandom(32))

        self.objects: list[RepositoryObject] = []
        self._names: dict[str, int] = {}
        self.ladder = Ladder()
        self.epoch = 0
        self.serial = 0
        self._publish_times: deque[float] = deque()
        self._hashes_at_publish = 0
        self.current: PublishedSnapshot | None = None

    # -- object lifecycle -------------------------------------------------

    def _append(self, name: str, payload: bytes, status: ObjectStatus) -> RepositoryObject:
        check_name(name)
        if name in self._names:
            raise DuplicateName(name)
        commitment = leaf_hash(payload)
        obj = RepositoryObject(name, bytes(payload), status, len(self.objects), commitment)
        if self.dual_stack and status is ObjectStatus.PUBLISHED:
            obj.classical_sig = signing.placeholder_signature(self.classical_scheme, payload)
        self.ladder.append_leaf(commitment)
        self.objects.append(obj)
        self._names[name] = obj.leaf_index
        return obj

    def issue_object(self, name: str, payload: bytes) -> RepositoryObject:
        return self._append(name, payload, ObjectStatus.PUBLISHED)

    def hide_object(self, name: str, payload: bytes) -> RepositoryObject:
        """Commit a non-public object: the leaf is kept, the bytes are never served."""
        return self._append(name, payload, ObjectStatus.HIDDEN)

    def _lookup(self, name: str) -> RepositoryObject:
        if name not in self._names:
            raise NotFound(name)
        return self.objects[self._names[name]]

    def delete_object(self, name: str) -> RepositoryObject:
        if name not in self._names and any(
            o.name == name and o.status is ObjectStatus.DELETED for o in self.objects
        ):
            raise AlreadyDeleted(name)
        obj = self._lookup(name)
        if obj.status is not ObjectStatus.PUBLISHED:
            raise AlreadyDeleted(name) if obj.status is ObjectStatus.DELETED else NotFound(name)
        obj.status = ObjectStatus.DELETED
        obj.revoked = True
        obj.revoked_at = int(self.clock())
        del self._names[name]
        return obj

    def revoke_hidden(self, name: str) -> RepositoryObject:
        """Revoke a hidden object through the CRL; its entry stays ``H``."""
        obj = self._lookup(name)
        if obj.status is not ObjectStatus.HIDDEN:
            raise NotFound(name)
        if obj.revoked:
            raise AlreadyDeleted(name)
        obj.revoked = True
        obj.revoked_at = int(self.clock())
        return obj

    def object(self, name: str) -> RepositoryObject:
        return self._lookup(name)

    @property
    def leaf_count(self) -> int:
        return len(self.objects)

    @property
    def revoked(self) -> dict[int, int]:
        return {o.leaf_index: o.revoked_at for o in self.objects if o.revoked}

    @property
    def deleted_count(self) -> int:
        return sum(o.status is ObjectStatus.DELETED for o in self.objects)

    # -- metadata -----------------------------------------------------------

    def build_crl(self) -> Crl:
        return Crl(self.ca_id, self.serial, self.revoked)

    def build_manifest(self, crl: Crl | None = None) -> Manifest:
        crl = crl or self.build_crl()
        return Manifest(
            ca_id=self.ca_id,
            epoch=self.epoch,
            serial=self.serial,
            entries=[o.manifest_entry() for o in self.objects],
            crl_commitment=leaf_hash(crl.to_bytes()),
            issued_at=int(self.clock()),
        )

    def rate_limit_check(self, window: float | None = None) -> RateDecision:
        limits = self.limits
        if limits.max_deletes and len(self.revoked) > limits.max_deletes:
            return RateDecision(False, f"{len(self.revoked)} revocations exceed cap {limits.max_deletes}")
        if limits.max_updates:
            now = self.clock()
            horizon = now - (window if window is not None else limits.window)
            recent = sum(t > horizon for t in self._publish_times)
            if recent >= limits.max_updates:
                return RateDecision(False, f"{recent} publishes in window exceed cap {limits.max_updates}")
        return RateDecision(True)

    # -- publication ----------------------------------------------------------

    def publish(self, repo: Path | str | None = None, keep: int = DEFAULT_KEEP_SNAPSHOTS) -> PublishedSnapshot:
        """Refresh CRL and Manifest rungs, derive and (delegated) sign the root.

        With ``repo`` set the snapshot is written to a fresh directory and the
        ``current`` pointer is swapped atomically afterwards.
        """
        decision = self.rate_limit_check()
        if not decision.allowed:
            raise RateLimited(decision.reason)
        self.serial += 1
        crl = self.build_crl()
        crl_bytes = crl.to_bytes()
        manifest = self.build_manifest(crl)
        manifest_bytes = manifest.to_bytes()
        # metadata order is fixed: CRL first, Manifest last
        self.ladder.append_metadata_rung(leaf_hash(crl_bytes), CRL_SLOT)
        self.ladder.append_metadata_rung(leaf_hash(manifest_bytes), MANIFEST_SLOT)
        root = ladder_root(self.ladder)

        record = RootRecord(
            self.ca_id, self.epoch, self.serial, root, list(manifest.rung_descriptor), self.mode, self.parent
        )
        if self.mode is CaMode.DELEGATED:
            try:
                sig = signing.sign(self.keypair, root, signer_id=self.ca_id)
            except signing.SignatureError as exc:
                raise SigningFailure(str(exc)) from exc
            record.scheme, record.signer_id, record.signature = sig.scheme, sig.signer_id, sig.signature

        snapshot = PublishedSnapshot(
            ca_id=self.ca_id,
            epoch=self.epoch,
            serial=self.serial,
            manifest_bytes=manifest_bytes,
            crl_bytes=crl_bytes,
            root_bytes=record.to_bytes(),
            objects={o.name: o.payload for o in self.objects if o.status is ObjectStatus.PUBLISHED},
            ladder_root=root,
            record=record,
            node_hashes=self.ladder.node_hashes - self._hashes_at_publish,
        )
        self._hashes_at_publish = self.ladder.node_hashes
        if repo is not None:
            snapshot.path = self._write(Path(repo), snapshot, keep)
        self._publish_times.append(self.clock())
        while len(self._publish_times) > 1024:
            self._publish_times.popleft()
        self.current = snapshot
        return snapshot

    def _write(self, repo: Path, snap: PublishedSnapshot, keep: int) -> Path:
        ca_dir = repo / self.ca_id
        ca_dir.mkdir(parents=True, exist_ok=True)
        final = ca_dir / snap.snapshot_id
        staging = Path(tempfile.mkdtemp(dir=ca_dir, prefix=f".stage-{snap.snapshot_id}-"))
        (staging / "manifest.bin").write_bytes(snap.manifest_bytes)
        (staging / "crl.bin").write_bytes(snap.crl_bytes)
        (staging / "root.bin").write_bytes(snap.root_bytes)
        (staging / "obj").mkdir()
        # snapshots are immutable once swapped in, so unchanged objects are linked
        prev = self.current if self.current is not None and self.current.path is not None else None
        for name, payload in snap.objects.items():
            target = staging / "obj" / name
            if prev is not None and prev.objects.get(name) == payload:
                try:
                    os.link(prev.path / "obj" / name, target)
                    continue
                except OSError:
                    pass
            target.write_bytes(payload)
        sidecars = {o.name: o.classical_sig for o in self.objects if o.status is ObjectStatus.PUBLISHED and o.classical_sig}
        if sidecars:
            (staging / "sig").mkdir()
            for name, sig in sidecars.items():
                (staging / "sig" / name).write_bytes(sig)
        if final.exists():
            shutil.rmtree(final)
        os.rename(staging, final)
        _atomic_write(ca_dir / "current", snap.snapshot_id.encode())
        self._prune(ca_dir, keep)
        return final

    @staticmethod
    def _prune(ca_dir: Path, keep: int) -> None:
        snaps = []
        for entry in ca_dir.iterdir():
            parts = entry.name.split(".")
            if entry.is_dir() and len(parts) == 2 and all(p.isdigit() for p in parts):
                snaps.append(((int(parts[0]), int(parts[1])), entry))
        snaps.sort()
        for _, entry in snaps[: max(0, len(snaps) - keep)]:
            shutil.rmtree(entry, ignore_errors=True)

    def rebuild_epoch(self) -> None:
        """Drop deleted and revoked leaves, reindex densely, start a new epoch."""
        survivors = [o for o in self.objects if o.status is not ObjectStatus.DELETED and not o.revoked]
        for index, obj in enumerate(survivors):
            obj.leaf_index = index
        self.objects = survivors
        self._names = {o.name: o.leaf_index for o in survivors}
        self.ladder = Ladder.from_commitments([o.commitment for o in survivors])
        self._hashes_at_publish = 0
        self.epoch += 1
        self.serial = 0

    def load_current(self, repo: Path | str) -> PublishedSnapshot | None:
        """Re-read the served snapshot so a reloaded CA knows its published root."""
        ca_dir = Path(repo) / self.ca_id
        try:
            snap_dir = ca_dir / (ca_dir / "current").read_text().strip()
            root_bytes = (snap_dir / "root.bin").read_bytes()
            manifest_bytes = (snap_dir / "manifest.bin").read_bytes()
            crl_bytes = (snap_dir / "crl.bin").read_bytes()
            obj_dir = snap_dir / "obj"
            objects = {p.name: p.read_bytes() for p in obj_dir.iterdir()} if obj_dir.is_dir() else {}
        except FileNotFoundError:
            return None
        record = RootRecord.from_bytes(root_bytes)
        self.current = PublishedSnapshot(
            self.ca_id, record.epoch, record.serial, manifest_bytes, crl_bytes, root_bytes,
            objects, record.ladder_root, record, path=snap_dir,
        )
        return self.current

    def native_paths(self) -> dict[str, AuthPath]:
        """Per-object authentication paths, as a path-carrying layout would ship them."""
        return {
            o.name: self.ladder.auth_path(o.leaf_index) for o in self.objects if o.status is ObjectStatus.PUBLISHED
        }

    def child_entry(self) -> ChildEntry:
        if self.mode is CaMode.DELEGATED:
            return ChildEntry.delegated(self.ca_id, self.keypair.public_key, self.scheme.name)
        if self.current is None:
            raise PublisherError(f"{self.ca_id} has not published yet")
        return ChildEntry.hosted(self.ca_id, self.current.ladder_root)

    # -- persistence (for the CLI) -------------------------------------------

    def to_state(self) -> dict:
        return {
            "ca_id": self.ca_id,
            "mode": self.mode.value,
            "scheme": self.scheme.name,
            "parent": self.parent,
            "dual_stack": self.dual_stack,
            "classical_scheme": self.classical_scheme,
            "limits": vars(self.limits),
            "epoch": self.epoch,
            "serial": self.serial,
            "publish_times": list(self._publish_times),
            "keypair": None
            if self.keypair is None
            else [_b64(self.keypair.public_key), _b64(self.keypair.secret_key)],
            "objects": [
                {
                    "name": o.name,
                    "payload": _b64(o.payload),
                    "status": o.status.value,
                    "revoked": o.revoked,
                    "revoked_at": o.revoked_at,
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_state(cls, state: dict, clock: Callable[[], float] = time.time) -> "CertificateAuthority":
        ca = cls(
            state["ca_id"],
            CaMode.HOSTED,
            state["scheme"],
            parent=state["parent"],
            dual_stack=state["dual_stack"],
            classical_scheme=state["classical_scheme"],
            limits=RateLimits(**state["limits"]),
            clock=clock,
        )
        ca.mode = CaMode(state["mode"])
        if state["keypair"]:
            pk, sk = (base64.b64decode(v) for v in state["keypair"])
            ca.keypair = signing.KeyPair(ca.scheme, pk, sk)
        for rec in state["objects"]:
            payload = base64.b64decode(rec["payload"])
            status = ObjectStatus(rec["status"])
            commitment = leaf_hash(payload)
            obj = RepositoryObject(rec["name"], payload, status, len(ca.objects), commitment)
            if ca.dual_stack and status is not ObjectStatus.HIDDEN:
                obj.classical_sig = signing.placeholder_signature(ca.classical_scheme, payload)
            obj.revoked = rec["revoked"]
            obj.revoked_at = rec["revoked_at"]
            ca.objects.append(obj)
            if status is not ObjectStatus.DELETED:
                ca._names[obj.name] = obj.leaf_index
        ca.ladder = Ladder.from_commitments([o.commitment for o in ca.objects])
        ca._hashes_at_publish = ca.ladder.node_hashes
        ca.epoch = state["epoch"]
        ca.serial = state["serial"]
        ca._publish_times.extend(state.get("publish_times", ()))
        return ca


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode()


# ---------------------------------------------------------------------------
# registry aggregate


@dataclass
class RegistryUpdate:
    changed: bool
    node_hashes: int = 0
    listing_growth: int = 0


class Registry:
    """Parent-level aggregate over hosted child roots and delegated child keys."""

    def __init__(self, registry_id: str, trust_anchor: signing.KeyPair, epoch: int = 0) -> None:
        self.registry_id = check_name(registry_id)
        self.trust_anchor = trust_anchor
        self.epoch = epoch
        self.serial = 0
        self.children: list[ChildEntry] = []
        self._index: dict[str, int] = {}
        self.ladder = Ladder()
        self.signed: RegistryRoot | None = None

    def listing(self) -> RegistryListing:
        return RegistryListing(self.registry_id, list(self.children))

    def child(self, child_id: str) -> ChildEntry:
        if child_id not in self._index:
            raise UnknownChild(child_id)
        return self.children[self._index[child_id]]

    def update(self, entry: ChildEntry, add: bool = True) -> RegistryUpdate:
        """Add or refresh one child leaf.  Only its merge path is rehashed."""
        before = len(self.listing().to_bytes())
        if entry.child_id not in self._index:
            if not add:
                raise UnknownChild(entry.child_id)
            self._index[entry.child_id] = len(self.children)
            self.children.append(entry)
            hashes = self.ladder.append_leaf(entry.digest())
            return RegistryUpdate(True, hashes, len(self.listing().to_bytes()) - before)
        pos = self._index[entry.child_id]
        if self.children[pos] == entry:
            return RegistryUpdate(False)
        self.children[pos] = entry
        hashes = self.ladder.update_leaves({pos: entry.digest()})
        return RegistryUpdate(True, hashes, len(self.listing().to_bytes()) - before)

    def root(self) -> Digest:
        return aggregate_root(self.ladder)

    def sign(self) -> RegistryRoot:
        self.serial += 1
        root = self.root()
        try:
            sig = signing.sign(self.trust_anchor, root, signer_id=self.registry_id)
        except signing.SignatureError as exc:
            raise SigningFailure(str(exc)) from exc
        self.signed = RegistryRoot(self.registry_id, self.epoch, self.serial, root, sig.scheme, sig.signer_id, sig.signature)
        return self.signed

    def write(self, repo: Path | str) -> None:
        """Write listing then root; a validator that races this rejects the
        mismatched pair and retries."""
        if self.signed is None or self.signed.aggregate_root != self.root():
            self.sign()
        reg_dir = Path(repo) / REGISTRY_DIR
        _atomic_write(reg_dir / "listing.bin", self.listing().to_bytes())
        _atomic_write(reg_dir / "root.bin", self.signed.to_bytes())

    def delegated_overhead(self) -> int:
        """Public key plus root signature bytes carried for delegated children."""
        total = 0
        for c in self.children:
            if c.mode is CaMode.DELEGATED:
                total += len(c.public_key) + signing.get_scheme(c.scheme).signature_bytes
        return total


def registry_update(agg: Registry, child: ChildEntry, add: bool = True) -> Registry:
    agg.update(child, add=add)
    agg.sign()
    return agg


# ---------------------------------------------------------------------------
# publication point: a registry plus its CAs on one repository directory


@dataclass
class PublicationPoint:
    repo: Path
    registry: Registry
    cas: dict[str, CertificateAuthority] = field(default_factory=dict)
    clock: Callable[[], float] = time.time
    keep: int = DEFAULT_KEEP_SNAPSHOTS

    @classmethod
    def create(
        cls,
        repo: Path | str,
        registry_id: str = "registry",
        scheme: str = signing.TEST_SCHEME,
        seed: bytes | None = None,
        clock: Callable[[], float] = time.time,
    ) -> "PublicationPoint":
        anchor = signing.keygen(scheme, seed if seed is not None else os.urandom(32))
        pp = cls(Path(repo), Registry(registry_id, anchor), clock=clock)
        pp.repo.mkdir(parents=True, exist_ok=True)
        pp.registry.write(pp.repo)
        return pp

    @property
    def trust_anchor(self) -> bytes:
        return self.registry.trust_anchor.public_key

    def init_ca(self, ca_id: str, mode: CaMode | str = CaMode.HOSTED, scheme: str = signing.TEST_SCHEME, **kwargs) -> CertificateAuthority:
        if ca_id in self.cas or ca_id == REGISTRY_DIR:
            raise DuplicateCa(ca_id)
        kwargs.setdefault("clock", self.clock)
        ca = CertificateAuthority(ca_id, mode, scheme, parent=self.registry.registry_id, **kwargs)
        self.cas[ca_id] = ca
        if ca.mode is CaMode.DELEGATED:
            self.registry.update(ca.child_entry())
            self.registry.write(self.repo)
        return ca

    def publish(self, ca_id: str) -> PublishedSnapshot:
        """Publish one CA; hosted CAs are then re-aggregated and the registry re-signed."""
        ca = self.cas[ca_id]
        snap = ca.publish(self.repo, keep=self.keep)
        if ca.mode is CaMode.HOSTED:
            if self.registry.update(ca.child_entry()).changed:
                self.registry.write(self.repo)
        return snap

    def publish_all(self, ca_ids: Iterable[str] | None = None) -> list[PublishedSnapshot]:
        """Publish several CAs with a single registry re-sign at the end."""
        snaps = []
        changed = False
        for ca_id in ca_ids if ca_ids is not None else list(self.cas):
            ca = self.cas[ca_id]
            snaps.append(ca.publish(self.repo, keep=self.keep))
            if ca.mode is CaMode.HOSTED:
                changed |= self.registry.update(ca.child_entry()).changed
        if changed:
            self.registry.write(self.repo)
        return snaps

    def rebuild_epoch(self, ca_id: str) -> PublishedSnapshot:
        self.cas[ca_id].rebuild_epoch()
        return self.publish(ca_id)

    # -- persistence ----------------------------------------------------------

    def save(self) -> None:
        state = {
            "registry": {
                "registry_id": self.registry.registry_id,
                "epoch": self.registry.epoch,
                "serial": self.registry.serial,
                "scheme": self.registry.trust_anchor.scheme.name,
                "keypair": [_b64(self.registry.trust_anchor.public_key), _b64(self.registry.trust_anchor.secret_key)],
                "children": [_b64(c.to_bytes()) for c in self.registry.children],
            },
            "cas": [ca.to_state() for ca in self.cas.values()],
        }
        _atomic_write(self.repo / STATE_DIR / "state.json", json.dumps(state, indent=1).encode())

    @classmethod
    def load(cls, repo: Path | str, clock: Callable[[], float] = time.time) -> "PublicationPoint":
        repo = Path(repo)
        path = repo / STATE_DIR / "state.json"
        if not path.exists():
            raise PublisherError(f"no publication point initialised at {repo}")
        state = json.loads(path.read_text())
        reg = state["registry"]
        pk, sk = (base64.b64decode(v) for v in reg["keypair"])
        anchor = signing.KeyPair(signing.get_scheme(reg["scheme"]), pk, sk)
        registry = Registry(reg["registry_id"], anchor, reg["epoch"])
        for raw in reg["children"]:
            registry.update(ChildEntry.from_bytes(base64.b64decode(raw)))
        registry.serial = reg["serial"]
        pp = cls(repo, registry, clock=clock)
        for ca_state in state["cas"]:
            ca = CertificateAuthority.from_state(ca_state, clock=clock)
            ca.load_current(repo)
            pp.cas[ca.ca_id] = ca
        return pp

    def write_trust_anchor(self, path: Path | str) -> None:
        doc = {"scheme": self.registry.trust_anchor.scheme.name, "public_key": self.trust_anchor.hex()}
        Path(path).write_text(json.dumps(doc) + "\n")


def load_trust_anchor(path: Path | str) -> tuple[str, bytes]:
    doc = json.loads(Path(path).read_text())
    return doc["scheme"], bytes.fromhex(doc["public_key"])
