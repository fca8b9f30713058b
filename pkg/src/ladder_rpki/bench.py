"""Synthetic repositories, churn, size accounting and instrumentation.

Everything asserted by tests is a count or a byte sum; wall-clock times are
recorded alongside for information only.

Compressed layouts are modeled as multipliers on object payload bytes,
derived from the ratio of compressed to uncompressed classical repository
size.  They are approximations, not encodings.
"""

from __future__ import annotations

import configparser
import enum
import hashlib
import json
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import signing, tlv
from .formats import (
    PLACEHOLDER_ENTRY_BYTES,
    CaMode,
    EntryKind,
    Manifest,
    RegistryListing,
    RegistryRoot,
    RootRecord,
)
from .mtl import DIGEST_SIZE, Ladder, fold_path, leaf_hash, path_hash_count, rung_sizes
from .publisher import REGISTRY_DIR, ObjectStatus, PublicationPoint
from .service import LoopbackTransport, RepositoryView, path_bundle
from .validator import ValidatorCache, bulk_verify, sync_cycle, verify_path_mode

CLASSICAL_SCHEME = "rsa2048-model"


class Mode(str, enum.Enum):
    PQ_ONLY = "PqOnly"
    DUAL_STACK = "DualStack"


class Layout(str, enum.Enum):
    ORIGINAL = "Original"
    NULL_SCHEME = "NullScheme"
    IRPKI = "Irpki"


# compressed / original classical repository size
LAYOUT_MULTIPLIER = {
    Layout.ORIGINAL: 1.0,
    Layout.NULL_SCHEME: 685.8 / 853.2,
    Layout.IRPKI: 142.6 / 853.2,
}


class Deployment(str, enum.Enum):
    PER_OBJECT = "per-object"
    NATIVE_MTL = "native-mtl"
    LADDER = "ladder"


@dataclass(frozen=True)
class SizeModel:
    scheme: str
    deployment: Deployment = Deployment.LADDER
    mode: Mode = Mode.PQ_ONLY
    layout: Layout = Layout.ORIGINAL

    @property
    def label(self) -> str:
        return f"{self.deployment.value}/{self.scheme}/{self.mode.value}/{self.layout.value}"


@dataclass(frozen=True)
class ChurnModel:
    adds_per_step: int = 10
    deletes_per_step: int = 5
    manifest_refresh_every: int = 1
    steps: int = 60
    rebuild_every: int = 0
    mean_object_bytes: int = 256
    seed: int = 0


@dataclass
class SizeRow:
    model: str
    payload: int = 0
    manifest: int = 0
    crl: int = 0
    signatures: int = 0
    paths: int = 0
    roots: int = 0
    registry: int = 0

    @property
    def total(self) -> int:
        return self.payload + self.manifest + self.crl + self.signatures + self.paths + self.roots + self.registry


@dataclass
class ChurnStep:
    step: int
    epoch: int
    deletes_in_epoch: int
    d_entry_bytes: int
    object_node_hashes: int
    publish_seconds: float


@dataclass
class BenchReport:
    sizes: list[SizeRow] = field(default_factory=list)
    churn: list[ChurnStep] = field(default_factory=list)
    validation: dict[str, dict] = field(default_factory=dict)
    sync: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def merge(self, other: "BenchReport") -> "BenchReport":
        self.sizes += other.sizes
        self.churn += other.churn
        self.validation.update(other.validation)
        self.sync += other.sync
        self.timings.update(other.timings)
        return self

    def to_dict(self, with_timings: bool = True) -> dict:
        doc = asdict(self)
        for row, raw in zip(self.sizes, doc["sizes"]):
            raw["total"] = row.total
        if not with_timings:
            doc.pop("timings")
            for step in doc["churn"]:
                step.pop("publish_seconds")
            for stats in doc["validation"].values():
                stats.pop("seconds", None)
            for cycle in doc["sync"]:
                cycle.pop("seconds", None)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


class _Clock:
    """Deterministic clock so generated repositories are reproducible."""

    def __init__(self, start: int = 1_700_000_000) -> None:
        self.now = start

    def __call__(self) -> float:
        self.now += 1
        return self.now


def _object_bytes(rng: random.Random, mean: int) -> bytes:
    if mean <= 0:
        return b""
    size = rng.randint(max(1, mean // 2), mean + mean // 2)
    return rng.randbytes(size)


def generate_repo(
    repo: Path | str,
    n_cas: int,
    objects_per_ca: int,
    mean_object_bytes: int = 256,
    seed: int = 0,
    *,
    delegated: int = 0,
    hidden_every: int = 0,
    dual_stack: bool = False,
) -> PublicationPoint:
    """Write a deterministic repository and return its publication point.

    The last ``delegated`` CAs run in delegated mode.  With ``hidden_every``
    set, every k-th object is committed as hidden instead of published.
    """
    if min(n_cas, objects_per_ca, mean_object_bytes, delegated) < 0:
        raise ValueError("sizes must be non-negative")
    rng = random.Random(seed)
    base = hashlib.sha256(f"bench seed {seed}".encode()).digest()
    pp = PublicationPoint.create(repo, "registry", seed=base, clock=_Clock())
    for c in range(n_cas):
        mode = CaMode.DELEGATED if c >= n_cas - delegated else CaMode.HOSTED
        ca = pp.init_ca(f"ca{c:03d}", mode, seed=hashlib.sha256(base + c.to_bytes(4, "big")).digest(), dual_stack=dual_stack)
        for i in range(objects_per_ca):
            payload = _object_bytes(rng, mean_object_bytes)
            if hidden_every and i % hidden_every == hidden_every - 1:
                ca.hide_object(f"obj{i:06d}.roa", payload)
            else:
                ca.issue_object(f"obj{i:06d}.roa", payload)
    pp.publish_all()
    pp.save()
    return pp


# ---------------------------------------------------------------------------
# size accounting


@dataclass
class _CaSnapshot:
    manifest: Manifest
    manifest_bytes: int
    crl_bytes: int
    root: RootRecord
    root_bytes: int
    objects: dict[str, int]
    sidecar_bytes: int


def _current_snapshots(repo: Path) -> dict[str, _CaSnapshot]:
    out = {}
    for ca_dir in sorted(p for p in repo.iterdir() if (p / "current").is_file()):
        snap = ca_dir / (ca_dir / "current").read_text().strip()
        obj_dir, sig_dir = snap / "obj", snap / "sig"
        manifest_raw = (snap / "manifest.bin").read_bytes()
        root_raw = (snap / "root.bin").read_bytes()
        out[ca_dir.name] = _CaSnapshot(
            Manifest.from_bytes(manifest_raw),
            len(manifest_raw),
            (snap / "crl.bin").stat().st_size,
            RootRecord.from_bytes(root_raw),
            len(root_raw),
            {p.name: p.stat().st_size for p in obj_dir.iterdir()} if obj_dir.is_dir() else {},
            sum(p.stat().st_size for p in sig_dir.iterdir()) if sig_dir.is_dir() else 0,
        )
    return out


def directory_bytes(repo: Path | str, include_sidecars: bool = True) -> int:
    """Independent walk over every served file of the current snapshots."""
    repo = Path(repo)
    total = 0
    for ca_dir in repo.iterdir():
        if (ca_dir / "current").is_file():
            snap = ca_dir / (ca_dir / "current").read_text().strip()
            for path in snap.rglob("*"):
                if path.is_file() and (include_sidecars or path.parent.name != "sig"):
                    total += path.stat().st_size
    for name in ("listing.bin", "root.bin"):
        path = repo / REGISTRY_DIR / name
        if path.is_file():
            total += path.stat().st_size
    return total


def extension_bytes(manifest: Manifest) -> int:
    """Manifest bytes that exist only for ladder authentication.

    That is the rung descriptor field plus every D/H placeholder entry.
    """
    placeholders = sum(e.kind is not EntryKind.NAME for e in manifest.entries)
    return tlv.HEADER_SIZE + 8 * len(manifest.rung_descriptor) + PLACEHOLDER_ENTRY_BYTES * placeholders


def account_sizes(repo: Path | str, model: SizeModel) -> SizeRow:
    """Repository bytes for the served content under ``model``.

    Per-object deployments sign every object, Manifest and CRL individually.
    Native MTL carries one authentication path per object and one signed
    root per CA.  The ladder deployment carries the extended Manifest, root
    records and the registry; signature fields are resized to the model's
    scheme.  Dual-stack adds a classical signature and key per signed object.
    """
    repo = Path(repo)
    scheme = signing.get_scheme(model.scheme)
    classical = signing.get_scheme(CLASSICAL_SCHEME)
    mult = LAYOUT_MULTIPLIER[model.layout]
    row = SizeRow(model.label)
    signed_objects = 0
    for snap in _current_snapshots(repo).values():
        row.payload += round(sum(snap.objects.values()) * mult)
        row.crl += snap.crl_bytes
        signed_objects += len(snap.objects) + 2
        if model.deployment is Deployment.LADDER:
            row.manifest += snap.manifest_bytes
            sig = len(snap.root.signature)
            row.roots += snap.root_bytes - sig + (scheme.signature_bytes if sig else 0)
            continue
        row.manifest += snap.manifest_bytes - extension_bytes(snap.manifest)
        if model.deployment is Deployment.PER_OBJECT:
            row.signatures += (len(snap.objects) + 2) * scheme.delegation_bytes
        else:
            sizes = rung_sizes(len(snap.manifest.entries))
            starts = [sum(sizes[:j]) for j in range(len(sizes))]
            names = snap.manifest.names()
            for name in snap.objects:
                index = names[name]
                size = next(s for s, st in zip(sizes, starts) if st <= index < st + s)
                row.paths += DIGEST_SIZE * (size.bit_length() - 1)
            row.roots += DIGEST_SIZE + scheme.delegation_bytes
    if model.deployment is Deployment.LADDER:
        reg = repo / REGISTRY_DIR
        listing = RegistryListing.from_bytes((reg / "listing.bin").read_bytes())
        for child in listing.children:
            if child.mode is CaMode.DELEGATED:
                row.registry += scheme.public_key_bytes - len(child.public_key)
        row.registry += len(listing.to_bytes())
        reg_root = RegistryRoot.from_bytes((reg / "root.bin").read_bytes())
        row.registry += len(reg_root.to_bytes()) - len(reg_root.signature) + scheme.signature_bytes
    if model.mode is Mode.DUAL_STACK:
        row.signatures += signed_objects * classical.delegation_bytes
    return row


def size_matrix(
    repo: Path | str,
    schemes: Iterable[str] = ("falcon-model", "mldsa-model"),
    modes: Iterable[Mode] = tuple(Mode),
    layouts: Iterable[Layout] = tuple(Layout),
) -> BenchReport:
    """RSA baseline plus per-object, native-MTL and ladder rows per scheme."""
    report = BenchReport()
    schemes, modes, layouts = list(schemes), list(modes), list(layouts)
    for layout in layouts:
        report.sizes.append(account_sizes(repo, SizeModel(CLASSICAL_SCHEME, Deployment.PER_OBJECT, Mode.PQ_ONLY, layout)))
        for mode in modes:
            for scheme in schemes:
                report.sizes.append(account_sizes(repo, SizeModel(scheme, Deployment.PER_OBJECT, mode, layout)))
            for deployment in (Deployment.NATIVE_MTL, Deployment.LADDER):
                report.sizes.append(account_sizes(repo, SizeModel(schemes[0], deployment, mode, layout)))
    return report


# ---------------------------------------------------------------------------
# churn


def churn_step(pp: PublicationPoint, churn: ChurnModel, rng: random.Random, step: int, ca_ids: list[str]) -> bool:
    """Mutate the CAs for one step; returns True when the step was an epoch rebuild."""
    rebuilt = bool(churn.rebuild_every) and step % churn.rebuild_every == 0
    for ca_id in ca_ids:
        ca = pp.cas[ca_id]
        if rebuilt:
            ca.rebuild_epoch()
            continue
        live = sorted(o.name for o in ca.objects if o.status is ObjectStatus.PUBLISHED)
        for name in rng.sample(live, min(churn.deletes_per_step, len(live))):
            ca.delete_object(name)
        for _ in range(churn.adds_per_step):
            # leaf counts never repeat within an epoch, so names stay unique
            ca.issue_object(f"churn-e{ca.epoch}-{ca.leaf_count:08d}.roa", _object_bytes(rng, churn.mean_object_bytes))
    return rebuilt


def run_churn(pp: PublicationPoint, churn: ChurnModel, ca_ids: Iterable[str] | None = None) -> BenchReport:
    """Apply add/delete steps to each CA, publishing every refresh interval.

    ``d_entry_bytes`` is the Manifest placeholder overhead of deleted leaves
    summed over the churned CAs; an epoch rebuild drops it to zero.
    """
    rng = random.Random(churn.seed)
    ca_ids = list(ca_ids) if ca_ids is not None else list(pp.cas)
    report = BenchReport()
    for step in range(1, churn.steps + 1):
        rebuilt = churn_step(pp, churn, rng, step, ca_ids)
        if step % max(1, churn.manifest_refresh_every) and not rebuilt:
            continue
        started = time.perf_counter()
        snaps = pp.publish_all(ca_ids)
        elapsed = time.perf_counter() - started
        deleted = sum(pp.cas[c].deleted_count for c in ca_ids)
        report.churn.append(
            ChurnStep(
                step,
                max(pp.cas[c].epoch for c in ca_ids) if ca_ids else 0,
                deleted,
                deleted * PLACEHOLDER_ENTRY_BYTES,
                0 if rebuilt else sum(s.node_hashes for s in snaps),
                elapsed,
            )
        )
    report.timings["churn_total"] = sum(s.publish_seconds for s in report.churn)
    return report


# ---------------------------------------------------------------------------
# validation


@dataclass
class _Content:
    manifest_bytes: bytes
    crl_bytes: bytes
    objects: dict[str, bytes]
    root: RootRecord


def _load_content(repo: Path) -> dict[str, _Content]:
    out = {}
    for ca_dir in sorted(p for p in repo.iterdir() if (p / "current").is_file()):
        snap = ca_dir / (ca_dir / "current").read_text().strip()
        out[ca_dir.name] = _Content(
            (snap / "manifest.bin").read_bytes(),
            (snap / "crl.bin").read_bytes(),
            {p.name: p.read_bytes() for p in (snap / "obj").iterdir()},
            RootRecord.from_bytes((snap / "root.bin").read_bytes()),
        )
    return out


def run_validation_bench(
    repo: Path | str,
    modes: Iterable[str] = ("bulk", "native-path", "per-object-signature"),
    trust_anchor: tuple[str, bytes] | None = None,
) -> BenchReport:
    """Validate identical content in each mode, counting hashes and verifies.

    Ladder modes verify one registry signature plus one per delegated CA.
    The per-object mode signs every object with the test scheme up front and
    then performs one verification per object.
    """
    repo = Path(repo)
    content = _load_content(repo)
    reg_root = RegistryRoot.from_bytes((repo / REGISTRY_DIR / "root.bin").read_bytes())
    listing = RegistryListing.from_bytes((repo / REGISTRY_DIR / "listing.bin").read_bytes())
    keys = {c.child_id: c for c in listing.children}
    report = BenchReport()
    for mode in modes:
        stats = {"hashes": 0, "node_hashes": 0, "verifies": 0, "objects": 0, "accepted": True}
        started = time.perf_counter()
        if mode == "per-object-signature":
            key = signing.keygen(signing.TEST_SCHEME, b"per-object bench key")
            signed = [
                (payload, signing.sign(key, payload).signature)
                for c in content.values()
                for payload in c.objects.values()
            ]
            started = time.perf_counter()
            for payload, sig in signed:
                stats["verifies"] += 1
                stats["accepted"] &= signing.verify(key.public_key, payload, sig)
            stats["objects"] = len(signed)
        else:
            if trust_anchor is not None:
                stats["verifies"] += 1
                stats["accepted"] &= signing.verify(trust_anchor[1], reg_root.aggregate_root, reg_root.signature, trust_anchor[0])
            for ca_id, c in content.items():
                child = keys.get(ca_id)
                if child is not None and child.mode is CaMode.DELEGATED:
                    stats["verifies"] += 1
                    stats["accepted"] &= signing.verify(child.public_key, c.root.ladder_root, c.root.signature, child.scheme)
                stats["objects"] += len(c.objects)
                if mode == "bulk":
                    outcome = bulk_verify(c.manifest_bytes, c.crl_bytes, c.objects, c.root.ladder_root, ca_id=ca_id)
                else:
                    bundle = path_bundle(Manifest.from_bytes(c.manifest_bytes))
                    outcome = verify_path_mode(
                        c.manifest_bytes, c.crl_bytes, c.objects, bundle, c.root.ladder_root, ca_id=ca_id
                    )
                stats["hashes"] += outcome.hash_invocations
                stats["node_hashes"] += outcome.node_hashes
                stats["accepted"] &= outcome.ok
        stats["seconds"] = time.perf_counter() - started
        report.validation[mode] = stats
    return report


def hash_count_ratio(n: int) -> tuple[int, int, float]:
    """(per-path node hashes, bulk node hashes, ratio) for ``n`` leaves, measured."""
    commitments = [leaf_hash(i.to_bytes(8, "big")) for i in range(n)]
    ladder = Ladder.from_commitments(commitments)
    native = 0
    for i in range(n):
        _, used = fold_path(commitments[i], ladder.auth_path(i))
        native += used
    assert native == path_hash_count(n)
    return native, ladder.node_hashes, native / ladder.node_hashes if ladder.node_hashes else float("inf")


# ---------------------------------------------------------------------------
# sync


def run_sync_bench(
    pp: PublicationPoint,
    churn: ChurnModel,
    transport_factory: Callable[[], object] | None = None,
    cache: ValidatorCache | None = None,
) -> BenchReport:
    """Cold sync, one idle warm cycle, then one warm cycle per churn step.

    Each warm cycle records its request count, fetched bytes and the
    frugality bound: bytes of newly published objects plus the metadata of
    the CAs that changed plus the registry root and listing.
    """
    transport = transport_factory() if transport_factory else LoopbackTransport(RepositoryView(pp.repo))
    cache = cache if cache is not None else ValidatorCache()
    anchor = (pp.registry.trust_anchor.scheme.name, pp.trust_anchor)
    report = BenchReport()

    def cycle(label: str, bound: int | None) -> None:
        r = sync_cycle(transport, cache, anchor)
        entry = {
            "cycle": label,
            "requests": r.requests,
            "fetched_bytes": r.fetched_bytes,
            "object_bytes": r.object_bytes,
            "objects_fetched": r.objects_fetched,
            "ok": r.ok,
            "seconds": r.elapsed,
        }
        if bound is not None:
            entry["bound"] = bound
            entry["within_bound"] = r.fetched_bytes <= bound
        report.sync.append(entry)

    cycle("cold", None)
    cycle("idle", None)
    rng = random.Random(churn.seed)
    ca_ids = list(pp.cas)
    for step in range(1, churn.steps + 1):
        before = {c: pp.cas[c].current.root_bytes if pp.cas[c].current else b"" for c in ca_ids}
        known = {c: _known_objects(pp.cas[c]) for c in ca_ids}
        churn_step(pp, churn, rng, step, ca_ids)
        pp.publish_all(ca_ids)
        bound = _registry_bytes(pp)
        for ca_id in ca_ids:
            snap = pp.cas[ca_id].current
            if snap is None or snap.root_bytes == before[ca_id]:
                continue
            bound += len(snap.manifest_bytes) + len(snap.crl_bytes)
            bound += sum(len(p) for n, p in snap.objects.items() if (n, leaf_hash(p)) not in known[ca_id])
        cycle(f"warm{step}", bound)
    return report


def _known_objects(ca) -> set[tuple[str, bytes]]:
    if ca.current is None:
        return set()
    return {(n, leaf_hash(p)) for n, p in ca.current.objects.items()}


def _envelope_size(doc: dict) -> int:
    return len(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode())


def _registry_bytes(pp: PublicationPoint) -> int:
    """Per-cycle constant: registry root, listing and delegated root records."""
    reg = pp.repo / REGISTRY_DIR
    total = _envelope_size(RegistryRoot.from_bytes((reg / "root.bin").read_bytes()).to_json())
    total += (reg / "listing.bin").stat().st_size
    for ca in pp.cas.values():
        if ca.mode is CaMode.DELEGATED and ca.current is not None:
            total += _envelope_size(ca.current.record.to_json())
    return total


# ---------------------------------------------------------------------------
# config


@dataclass
class BenchConfig:
    """Key-value bench configuration (INI sections ``generate``, ``churn``, ``sync``)."""

    repo: str = "bench-repo"
    n_cas: int = 5
    objects_per_ca: int = 2000
    mean_object_bytes: int = 256
    seed: int = 42
    delegated: int = 1
    hidden_every: int = 0
    churn: ChurnModel = field(default_factory=ChurnModel)
    sync_steps: int = 5

    @classmethod
    def load(cls, path: Path | str | None) -> "BenchConfig":
        cfg = cls()
        if path is None:
            return cfg
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        gen = parser["generate"] if parser.has_section("generate") else {}
        cfg.repo = gen.get("repo", cfg.repo)
        for key in ("n_cas", "objects_per_ca", "mean_object_bytes", "seed", "delegated", "hidden_every"):
            if key in gen:
                setattr(cfg, key, int(gen[key]))
        if parser.has_section("churn"):
            values = {k: int(v) for k, v in parser["churn"].items() if k in ChurnModel.__dataclass_fields__}
            cfg.churn = ChurnModel(**values)
        if parser.has_section("sync"):
            cfg.sync_steps = parser["sync"].getint("steps", cfg.sync_steps)
        return cfg
