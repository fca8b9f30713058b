"""Relying party: ladder-guided sync and bottom-up bulk verification.

One :func:`sync_cycle` walks the hierarchy top-down:

1. fetch and verify the signed registry root; if it equals the cached root
   (and there are no delegated children to poll) the cycle ends after one
   request;
2. otherwise fetch the listing and pick out children whose root or key moved;
3. for each such CA fetch the Manifest and CRL pinned to the expected root,
   diff it against the cached Manifest and fetch only new or changed objects;
4. rebuild the ladder bottom-up, reusing cached nodes, and compare roots;
5. stage verified CA state and commit it only if no transport error occurred.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from . import signing, tlv
from .formats import (
    CaMode,
    Crl,
    EntryKind,
    FormatError,
    Manifest,
    ManifestInvalid,
    PathBundle,
    RegistryListing,
    RegistryRoot,
    RootRecord,
)
from .mtl import (
    DIGEST_SIZE,
    LADDER_PREFIX,
    Digest,
    Ladder,
    fold_path,
    ladder_hash,
    ladder_root,
    leaf_hash,
    rung_sizes,
)
from .publisher import CRL_SLOT, MANIFEST_SLOT
from .service import Response, TransportError

log = logging.getLogger(__name__)

REGISTRY_RETRIES = 3


class Failure(str, enum.Enum):
    ROOT_MISMATCH = "RootMismatch"
    MANIFEST_INVALID = "ManifestInvalid"
    MISSING_OBJECT = "MissingObject"
    COMMITMENT_MISMATCH = "CommitmentMismatch"
    SIGNATURE_INVALID = "SignatureInvalid"


class SignatureInvalid(Exception):
    pass


class Transport(Protocol):
    requests: int
    bytes_received: int

    def get(self, path: str) -> Response: ...


@dataclass
class DiffSet:
    changed: set[int] = field(default_factory=set)
    added: set[int] = field(default_factory=set)
    deleted_marked: set[int] = field(default_factory=set)
    hidden: set[int] = field(default_factory=set)
    unchanged: int = 0

    @property
    def size(self) -> int:
        return len(self.changed) + len(self.added) + len(self.deleted_marked) + len(self.hidden) + self.unchanged


def localize_diff(old: Manifest | None, new: Manifest) -> DiffSet:
    """Index-aligned comparison of ``(label, commitment)`` pairs.

    Manifests from a different epoch are not comparable index-by-index, so
    they are treated like an empty cache.
    """
    if new.rung_descriptor != rung_sizes(len(new.entries)):
        raise ManifestInvalid("rung descriptor does not match entry count")
    if old is not None and (old.epoch != new.epoch or old.ca_id != new.ca_id):
        old = None
    previous = old.entries if old is not None else []
    diff = DiffSet()
    for i, entry in enumerate(new.entries):
        before = previous[i] if i < len(previous) else None
        if before == entry:
            diff.unchanged += 1
        elif entry.kind is EntryKind.DELETED:
            diff.deleted_marked.add(i)
        elif entry.kind is EntryKind.HIDDEN:
            diff.hidden.add(i)
        elif before is None:
            diff.added.add(i)
        else:
            diff.changed.add(i)
    return diff


# ---------------------------------------------------------------------------
# cache


@dataclass
class CaCache:
    ca_id: str
    mode: CaMode
    epoch: int
    serial: int
    ladder_root: Digest
    manifest_bytes: bytes
    crl_bytes: bytes
    verified: set[int]
    ladder: Ladder | None = None
    public_key: bytes = b""

    _manifest: Manifest | None = field(default=None, repr=False, compare=False)

    @property
    def manifest(self) -> Manifest:
        if self._manifest is None:
            self._manifest = Manifest.from_bytes(self.manifest_bytes)
        return self._manifest

    def valid_objects(self) -> list[tuple[str, Digest]]:
        revoked = Crl.from_bytes(self.crl_bytes).revoked
        return [
            (e.name, e.commitment)
            for i, e in enumerate(self.manifest.entries)
            if e.kind is EntryKind.NAME and i not in revoked
        ]

    def to_bytes(self) -> bytes:
        levels = b""
        if self.ladder is not None:
            levels = b"".join(tlv.field(0x01, b"".join(level)) for level in self.ladder.levels)
        return tlv.encode(
            [
                (0x01, tlv.text(self.ca_id)),
                (0x02, tlv.text(self.mode.value)),
                (0x03, tlv.u64(self.epoch)),
                (0x04, tlv.u64(self.serial)),
                (0x05, self.ladder_root),
                (0x06, self.manifest_bytes),
                (0x07, self.crl_bytes),
                (0x08, b"".join(tlv.u64(i) for i in sorted(self.verified))),
                (0x09, levels),
                (0x0A, self.public_key),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CaCache":
        ca, mode, epoch, serial, root, manifest, crl, verified, levels, pk = tlv.decode(data, range(1, 11))
        ladder = None
        if levels:
            ladder = Ladder()
            ladder.levels[:] = [
                [v[i : i + DIGEST_SIZE] for i in range(0, len(v), DIGEST_SIZE)] for _, v in tlv.iter_fields(levels)
            ]
        return cls(
            tlv.read_text(ca),
            CaMode(tlv.read_text(mode)),
            tlv.read_u64(epoch),
            tlv.read_u64(serial),
            root,
            manifest,
            crl,
            {int.from_bytes(verified[i : i + 8], "big") for i in range(0, len(verified), 8)},
            ladder,
            pk,
        )


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class ValidatorCache:
    """Verified state from earlier cycles; optionally persisted one file per CA."""

    def __init__(self, path: Path | str | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self.aggregate_root: Digest | None = None
        self.listing_bytes: bytes | None = None
        self.cas: dict[str, CaCache] = {}
        if self.path is not None:
            self._load()

    @property
    def listing(self) -> RegistryListing | None:
        return RegistryListing.from_bytes(self.listing_bytes) if self.listing_bytes else None

    def _load(self) -> None:
        reg = self.path / "registry.bin"
        if reg.is_file():
            root, listing = tlv.decode(reg.read_bytes(), (1, 2))
            self.aggregate_root, self.listing_bytes = root, listing
        ca_dir = self.path / "ca"
        if ca_dir.is_dir():
            for entry in sorted(ca_dir.glob("*.bin")):
                state = CaCache.from_bytes(entry.read_bytes())
                self.cas[state.ca_id] = state

    def commit(
        self,
        states: Iterable[CaCache],
        removed: Iterable[str] = (),
        registry: tuple[Digest, bytes] | None = None,
    ) -> None:
        for state in states:
            self.cas[state.ca_id] = state
            if self.path is not None:
                _atomic_write(self.path / "ca" / f"{state.ca_id}.bin", state.to_bytes())
        for ca_id in removed:
            self.cas.pop(ca_id, None)
            if self.path is not None:
                (self.path / "ca" / f"{ca_id}.bin").unlink(missing_ok=True)
        if registry is not None:
            self.aggregate_root, self.listing_bytes = registry
            if self.path is not None:
                _atomic_write(self.path / "registry.bin", tlv.encode([(1, registry[0]), (2, registry[1])]))

    def roots(self) -> dict[str, Digest]:
        return {ca_id: state.ladder_root for ca_id, state in self.cas.items()}


# ---------------------------------------------------------------------------
# verification


@dataclass
class ValidationOutcome:
    ca_id: str
    verified: list[str] = field(default_factory=list)
    root_match: bool = False
    failure: Failure | None = None
    detail: str = ""
    hash_invocations: int = 0
    node_hashes: int = 0
    state: CaCache | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.failure is None

    def fail(self, failure: Failure, detail: object = "") -> "ValidationOutcome":
        self.failure = failure
        self.detail = str(detail)
        self.root_match = False
        self.verified = []
        self.state = None
        return self


def _reusable(cache: CaCache | None, manifest: Manifest) -> CaCache | None:
    if cache is None or cache.epoch != manifest.epoch or cache.ca_id != manifest.ca_id:
        return None
    return cache


def _known(cache: CaCache | None, ca_id: str) -> set[tuple[str, Digest]]:
    """(name, commitment) pairs whose bytes an earlier cycle already hashed.

    Only the commitment matters for later cycles, so these never need to be
    fetched again, even across an epoch rebuild that moves their index.
    """
    if cache is None or cache.ca_id != ca_id:
        return set()
    entries = cache.manifest.entries
    return {(entries[i].name, entries[i].commitment) for i in cache.verified if i < len(entries)}


def _check_metadata(
    outcome: ValidationOutcome, manifest_bytes: bytes, crl_bytes: bytes, ca_id: str | None
) -> tuple[Manifest, Crl, Digest] | None:
    try:
        manifest = Manifest.from_bytes(manifest_bytes)
        crl = Crl.from_bytes(crl_bytes)
    except FormatError as exc:
        outcome.fail(Failure.MANIFEST_INVALID, exc)
        return None
    crl_leaf = leaf_hash(crl_bytes)
    outcome.hash_invocations += 1
    if ca_id is not None and (manifest.ca_id != ca_id or crl.ca_id != ca_id):
        outcome.fail(Failure.MANIFEST_INVALID, f"manifest names CA {manifest.ca_id!r}")
        return None
    if manifest.crl_commitment != crl_leaf:
        outcome.fail(Failure.MANIFEST_INVALID, "CRL commitment mismatch")
        return None
    return manifest, crl, crl_leaf


def bulk_verify(
    manifest_bytes: bytes,
    crl_bytes: bytes,
    objects: Mapping[str, bytes],
    expected_root: Digest,
    cache: CaCache | None = None,
    *,
    ca_id: str | None = None,
    mode: CaMode = CaMode.HOSTED,
) -> ValidationOutcome:
    """Check fetched objects against their commitments and rebuild the ladder.

    Objects missing from ``objects`` are accepted only when the cache already
    verified the same commitment at the same index in the same epoch.  The
    cached ladder is copied and only dirty paths and new leaves are hashed.
    """
    outcome = ValidationOutcome(ca_id or "")
    checked = _check_metadata(outcome, manifest_bytes, crl_bytes, ca_id)
    if checked is None:
        return outcome
    manifest, crl, crl_leaf = checked
    outcome.ca_id = manifest.ca_id
    base = _reusable(cache, manifest)
    known = _known(cache, manifest.ca_id)

    verified_idx: set[int] = set()
    for i, entry in enumerate(manifest.entries):
        if entry.kind is not EntryKind.NAME:
            continue
        payload = objects.get(entry.name)
        if payload is not None:
            outcome.hash_invocations += 1
            if leaf_hash(payload) != entry.commitment:
                return outcome.fail(Failure.COMMITMENT_MISMATCH, i)
        elif (entry.name, entry.commitment) not in known:
            return outcome.fail(Failure.MISSING_OBJECT, entry.name)
        verified_idx.add(i)

    commitments = manifest.commitments()
    if base is not None and base.ladder is not None and base.ladder.leaf_count <= len(commitments):
        ladder = base.ladder.copy()
        old = ladder.leaves()
        dirty = {i: c for i, c in enumerate(commitments[: len(old)]) if c != old[i]}
        ladder.update_leaves(dirty)
        ladder.extend(commitments[len(old) :])
    else:
        ladder = Ladder.from_commitments(commitments)
    ladder.append_metadata_rung(crl_leaf, CRL_SLOT)
    ladder.append_metadata_rung(leaf_hash(manifest_bytes), MANIFEST_SLOT)
    root = ladder_root(ladder)
    outcome.node_hashes = ladder.node_hashes
    outcome.hash_invocations += ladder.node_hashes + 2
    if root != expected_root:
        return outcome.fail(Failure.ROOT_MISMATCH, root.hex())

    outcome.root_match = True
    outcome.verified = [e.name for i, e in enumerate(manifest.entries) if i in verified_idx and i not in crl.revoked]
    outcome.state = CaCache(
        manifest.ca_id,
        mode,
        manifest.epoch,
        manifest.serial,
        root,
        manifest_bytes,
        crl_bytes,
        verified_idx,
        ladder,
    )
    outcome.state._manifest = manifest
    return outcome


def verify_path_mode(
    manifest_bytes: bytes,
    crl_bytes: bytes,
    objects: Mapping[str, bytes],
    bundle: PathBundle,
    expected_root: Digest,
    cache: CaCache | None = None,
    *,
    ca_id: str | None = None,
    mode: CaMode = CaMode.HOSTED,
) -> ValidationOutcome:
    """Path-carrying baseline: walk one authentication path per object."""
    outcome = ValidationOutcome(ca_id or "")
    checked = _check_metadata(outcome, manifest_bytes, crl_bytes, ca_id)
    if checked is None:
        return outcome
    manifest, crl, crl_leaf = checked
    outcome.ca_id = manifest.ca_id
    n = len(manifest.entries)
    if len(bundle.rung_roots) != len(rung_sizes(n)):
        return outcome.fail(Failure.ROOT_MISMATCH, "rung count")
    manifest_leaf = leaf_hash(manifest_bytes)
    root = ladder_hash(LADDER_PREFIX, n, [*bundle.rung_roots, crl_leaf, manifest_leaf])
    outcome.hash_invocations += 2
    if root != expected_root:
        return outcome.fail(Failure.ROOT_MISMATCH, root.hex())

    known = _known(cache, manifest.ca_id)
    verified_idx: set[int] = set()
    for i, entry in enumerate(manifest.entries):
        if entry.kind is not EntryKind.NAME:
            continue
        payload = objects.get(entry.name)
        if payload is not None:
            leaf = leaf_hash(payload)
            outcome.hash_invocations += 1
        elif (entry.name, entry.commitment) in known:
            leaf = entry.commitment
        else:
            return outcome.fail(Failure.MISSING_OBJECT, entry.name)
        path = bundle.paths.get(entry.name)
        if path is None or path.leaf_index != i or path.rung_position >= len(bundle.rung_roots):
            return outcome.fail(Failure.COMMITMENT_MISMATCH, i)
        computed, used = fold_path(leaf, path)
        outcome.node_hashes += used
        outcome.hash_invocations += used
        if computed != bundle.rung_roots[path.rung_position]:
            return outcome.fail(Failure.COMMITMENT_MISMATCH, i)
        verified_idx.add(i)

    outcome.root_match = True
    outcome.verified = [e.name for i, e in enumerate(manifest.entries) if i in verified_idx and i not in crl.revoked]
    outcome.state = CaCache(
        manifest.ca_id, mode, manifest.epoch, manifest.serial, root, manifest_bytes, crl_bytes, verified_idx
    )
    return outcome


def check_root_record(record: RootRecord, public_key: bytes, scheme: str) -> bool:
    return signing.verify(public_key, record.ladder_root, record.signature, scheme)


# ---------------------------------------------------------------------------
# sync


@dataclass
class SyncReport:
    requests: int = 0
    fetched_bytes: int = 0
    object_bytes: int = 0
    metadata_bytes: int = 0
    registry_bytes: int = 0
    objects_fetched: int = 0
    hash_invocations: int = 0
    cas_touched: int = 0
    outcomes: dict[str, str] = field(default_factory=dict)
    aborted: str = ""
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.aborted and all(v == "Verified" for v in self.outcomes.values())

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "ok": self.ok}, sort_keys=True)


class _Fetcher:
    def __init__(self, transport: Transport, report: SyncReport) -> None:
        self.transport = transport
        self.report = report

    def get(self, path: str, kind: str) -> Response | None:
        """Returns None on 404; raises TransportError on anything else."""
        resp = self.transport.get(path)
        self.report.requests += 1
        self.report.fetched_bytes += len(resp.body)
        setattr(self.report, kind, getattr(self.report, kind) + len(resp.body))
        if resp.status == 404:
            return None
        if resp.status != 200:
            raise TransportError(f"{path}: HTTP {resp.status}")
        return resp


def _registry_state(
    fetch: _Fetcher, cache: ValidatorCache, trust_anchor: tuple[str, bytes], report: SyncReport
) -> tuple[RegistryRoot, RegistryListing, bytes, bool]:
    scheme, public_key = trust_anchor
    for _ in range(REGISTRY_RETRIES):
        resp = fetch.get("/registry/root", "registry_bytes")
        if resp is None:
            raise TransportError("registry root not found")
        try:
            reg_root = RegistryRoot.from_json(resp.json())
        except (FormatError, ValueError) as exc:
            raise SignatureInvalid(f"malformed registry root: {exc}") from exc
        if not signing.verify(public_key, reg_root.aggregate_root, reg_root.signature, scheme):
            raise SignatureInvalid("registry root signature does not verify")
        if reg_root.aggregate_root == cache.aggregate_root and cache.listing_bytes is not None:
            return reg_root, cache.listing, cache.listing_bytes, False
        resp = fetch.get("/registry/listing", "registry_bytes")
        if resp is None:
            raise TransportError("registry listing not found")
        listing = RegistryListing.from_bytes(resp.body)
        report.hash_invocations += len(listing.children) + listing.ladder().node_hashes + 1
        if listing.aggregate_root() == reg_root.aggregate_root:
            return reg_root, listing, resp.body, True
        log.info("registry listing raced with a publish; retrying")
    raise TransportError("registry listing never matched the signed root")


def sync_cycle(
    transport: Transport,
    cache: ValidatorCache,
    trust_anchor: tuple[str, bytes],
    *,
    native: bool = False,
    ca_budget: float = 60.0,
) -> SyncReport:
    """Run one synchronization and validation cycle; see the module docstring."""
    report = SyncReport()
    fetch = _Fetcher(transport, report)
    started = time.monotonic()
    staged: list[CaCache] = []
    try:
        reg_root, listing, listing_bytes, listing_changed = _registry_state(fetch, cache, trust_anchor, report)
        delegated = [c for c in listing.children if c.mode is CaMode.DELEGATED]
        if not listing_changed and not delegated:
            return report
        for child in listing.children:
            cached = cache.cas.get(child.child_id)
            pin_root = child.ladder_root
            if child.mode is CaMode.DELEGATED:
                resp = fetch.get(f"/ca/{child.child_id}/root", "metadata_bytes")
                if resp is None:
                    report.outcomes[child.child_id] = f"Failed({Failure.MISSING_OBJECT.value}: root)"
                    continue
                try:
                    record = RootRecord.from_json(resp.json())
                except (FormatError, ValueError):
                    report.outcomes[child.child_id] = f"Failed({Failure.MANIFEST_INVALID.value})"
                    continue
                report.hash_invocations += 1
                if record.ca_id != child.child_id or not check_root_record(record, child.public_key, child.scheme):
                    report.outcomes[child.child_id] = f"Failed({Failure.SIGNATURE_INVALID.value})"
                    continue
                pin_root = record.ladder_root
            if cached is not None and cached.ladder_root == pin_root and cached.public_key == child.public_key:
                continue
            report.cas_touched += 1
            outcome = _sync_ca(fetch, child.child_id, child.mode, pin_root, cached, native, report)
            if time.monotonic() - started > ca_budget * max(1, report.cas_touched):
                log.warning("CA budget exceeded while syncing %s", child.child_id)
            report.hash_invocations += outcome.hash_invocations
            if outcome.ok:
                outcome.state.public_key = child.public_key
                staged.append(outcome.state)
                report.outcomes[child.child_id] = "Verified"
            else:
                log.warning("CA %s failed: %s %s", child.child_id, outcome.failure.value, outcome.detail)
                report.outcomes[child.child_id] = f"Failed({outcome.failure.value}: {outcome.detail})"
    except TransportError as exc:
        report.aborted = f"TransportError: {exc}"
        report.elapsed = time.monotonic() - started
        return report
    except SignatureInvalid as exc:
        report.aborted = f"SignatureInvalid: {exc}"
        report.elapsed = time.monotonic() - started
        return report

    present = {c.child_id for c in listing.children}
    removed = [ca_id for ca_id in cache.cas if ca_id not in present]
    all_ok = all(v == "Verified" for v in report.outcomes.values())
    cache.commit(staged, removed, (reg_root.aggregate_root, listing_bytes) if all_ok else None)
    report.elapsed = time.monotonic() - started
    return report


def _sync_ca(
    fetch: _Fetcher,
    ca_id: str,
    mode: CaMode,
    pin_root: Digest,
    cached: CaCache | None,
    native: bool,
    report: SyncReport,
) -> ValidationOutcome:
    pin = f"?root={pin_root.hex()}"
    manifest_resp = fetch.get(f"/ca/{ca_id}/manifest{pin}", "metadata_bytes")
    crl_resp = fetch.get(f"/ca/{ca_id}/crl{pin}", "metadata_bytes")
    if manifest_resp is None or crl_resp is None:
        return ValidationOutcome(ca_id).fail(Failure.MISSING_OBJECT, "manifest" if manifest_resp is None else "crl")
    try:
        manifest = Manifest.from_bytes(manifest_resp.body)
        diff = localize_diff(cached.manifest if cached is not None else None, manifest)
    except FormatError as exc:
        return ValidationOutcome(ca_id).fail(Failure.MANIFEST_INVALID, exc)
    known = _known(cached, ca_id)
    objects: dict[str, bytes] = {}
    for entry in manifest.entries:
        if entry.kind is not EntryKind.NAME or (entry.name, entry.commitment) in known:
            continue
        resp = fetch.get(f"/ca/{ca_id}/obj/{entry.name}{pin}", "object_bytes")
        if resp is None:
            return ValidationOutcome(ca_id).fail(Failure.MISSING_OBJECT, entry.name)
        objects[entry.name] = resp.body
        report.objects_fetched += 1
    log.debug(
        "%s: %d added, %d changed, %d deleted, %d hidden, %d unchanged",
        ca_id, len(diff.added), len(diff.changed), len(diff.deleted_marked), len(diff.hidden), diff.unchanged,
    )
    if native:
        resp = fetch.get(f"/ca/{ca_id}/paths{pin}", "metadata_bytes")
        if resp is None:
            return ValidationOutcome(ca_id).fail(Failure.MISSING_OBJECT, "paths")
        try:
            bundle = PathBundle.from_bytes(resp.body)
        except FormatError as exc:
            return ValidationOutcome(ca_id).fail(Failure.MANIFEST_INVALID, exc)
        return verify_path_mode(
            manifest_resp.body, crl_resp.body, objects, bundle, pin_root, cached, ca_id=ca_id, mode=mode
        )
    return bulk_verify(manifest_resp.body, crl_resp.body, objects, pin_root, cached, ca_id=ca_id, mode=mode)


# ---------------------------------------------------------------------------
# output


def emit_validated(
    cache: ValidatorCache,
    outcomes: Mapping[str, str] | None = None,
    path: Path | str | None = None,
    include_stale: bool = False,
) -> bytes:
    """Sorted ``ca_id<TAB>name<TAB>commitment`` lines for every verified CA.

    A CA whose latest outcome failed is left out unless ``include_stale``.
    """
    outcomes = outcomes or {}
    lines = []
    for ca_id, state in sorted(cache.cas.items()):
        status = outcomes.get(ca_id, "Verified")
        if status != "Verified" and not include_stale:
            log.info("excluding %s: %s", ca_id, status)
            continue
        for name, commitment in state.valid_objects():
            lines.append(f"{ca_id}\t{name}\t{commitment.hex()}\n")
    lines.sort()
    data = "".join(lines).encode()
    if path is not None:
        _atomic_write(Path(path), data)
    return data
