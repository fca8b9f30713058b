"""Repository artifacts and their canonical encodings.

Manifests, CRLs, root records and registry listings are hashed or signed, so
they use the canonical TLV form from :mod:`ladder_rpki.tlv`.  Each class has a
``to_bytes`` / ``from_bytes`` pair; ``from_bytes`` raises :class:`FormatError`
(or a subclass) on anything malformed rather than returning partial data.
"""

from __future__ import annotations

import base64
import enum
import re
from dataclasses import dataclass, field
from typing import Mapping

from . import tlv
from .mtl import DIGEST_SIZE, AuthPath, Digest, Ladder, aggregate_root, leaf_hash, rung_sizes

NAME_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9._-]{0,254}$")


class FormatError(tlv.DecodeError):
    pass


class ManifestInvalid(FormatError):
    pass


def check_name(name: str) -> str:
    if not NAME_RE.match(name) or name in (".", ".."):
        raise ValueError(f"object name {name!r} is not filesystem-safe")
    return name


def _digest(value: bytes) -> Digest:
    if len(value) != DIGEST_SIZE:
        raise FormatError("digest field must be 32 bytes")
    return value


def _u64_list(value: bytes) -> list[int]:
    if len(value) % 8:
        raise FormatError("u64 list length not a multiple of 8")
    return [int.from_bytes(value[i : i + 8], "big") for i in range(0, len(value), 8)]


class EntryKind(enum.IntEnum):
    NAME = 0
    DELETED = 1
    HIDDEN = 2


@dataclass(frozen=True)
class ManifestEntry:
    kind: EntryKind
    commitment: Digest
    name: str | None = None

    @classmethod
    def named(cls, name: str, commitment: Digest) -> "ManifestEntry":
        return cls(EntryKind.NAME, commitment, name)

    @classmethod
    def deleted(cls, commitment: Digest) -> "ManifestEntry":
        return cls(EntryKind.DELETED, commitment)

    @classmethod
    def hidden(cls, commitment: Digest) -> "ManifestEntry":
        return cls(EntryKind.HIDDEN, commitment)

    @property
    def label(self) -> str:
        if self.kind is EntryKind.NAME:
            return self.name or ""
        return "D" if self.kind is EntryKind.DELETED else "H"

    def to_bytes(self) -> bytes:
        name = tlv.text(self.name) if self.kind is EntryKind.NAME else b""
        return tlv.field(0x10, bytes([self.kind]) + self.commitment + name)

    @classmethod
    def from_value(cls, value: bytes) -> "ManifestEntry":
        if len(value) < 1 + DIGEST_SIZE:
            raise ManifestInvalid("manifest entry too short")
        try:
            kind = EntryKind(value[0])
        except ValueError:
            raise ManifestInvalid(f"unknown entry label {value[0]}") from None
        commitment = value[1 : 1 + DIGEST_SIZE]
        rest = value[1 + DIGEST_SIZE :]
        if kind is EntryKind.NAME:
            name = tlv.read_text(rest)
            if not NAME_RE.match(name):
                raise ManifestInvalid(f"bad object name {name!r}")
            return cls(kind, commitment, name)
        if rest:
            raise ManifestInvalid("placeholder entry carries a name")
        return cls(kind, commitment)


# Encoded size of a D or H entry; a Name entry adds the UTF-8 name length.
PLACEHOLDER_ENTRY_BYTES = tlv.HEADER_SIZE + 1 + DIGEST_SIZE


@dataclass
class Manifest:
    ca_id: str
    epoch: int
    serial: int
    entries: list[ManifestEntry]
    crl_commitment: Digest
    issued_at: int = 0
    rung_descriptor: list[int] | None = None
    legacy_fields: dict[str, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rung_descriptor is None:
            self.rung_descriptor = rung_sizes(len(self.entries))

    def commitments(self) -> list[Digest]:
        return [e.commitment for e in self.entries]

    def names(self) -> dict[str, int]:
        return {e.name: i for i, e in enumerate(self.entries) if e.kind is EntryKind.NAME}

    def to_bytes(self) -> bytes:
        legacy = b"".join(
            tlv.field(0x11, tlv.text(k)) + tlv.field(0x12, v) for k, v in sorted(self.legacy_fields.items())
        )
        return tlv.encode(
            [
                (0x01, tlv.text(self.ca_id)),
                (0x02, tlv.u64(self.epoch)),
                (0x03, tlv.u64(self.serial)),
                (0x04, tlv.u64(self.issued_at)),
                (0x05, b"".join(tlv.u64(s) for s in self.rung_descriptor)),
                (0x06, self.crl_commitment),
                (0x07, b"".join(e.to_bytes() for e in self.entries)),
                (0x08, legacy),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Manifest":
        try:
            ca, epoch, serial, issued, rungs, crl, entries, legacy = tlv.decode(data, range(1, 9))
            parsed = []
            for tag, value in tlv.iter_fields(entries):
                if tag != 0x10:
                    raise ManifestInvalid(f"unexpected entry tag {tag:#x}")
                parsed.append(ManifestEntry.from_value(value))
            legacy_items = list(tlv.iter_fields(legacy))
            if len(legacy_items) % 2 or any(t != 0x11 + (i % 2) for i, (t, _) in enumerate(legacy_items)):
                raise ManifestInvalid("malformed legacy fields")
            legacy_map = {
                tlv.read_text(legacy_items[i][1]): legacy_items[i + 1][1] for i in range(0, len(legacy_items), 2)
            }
            manifest = cls(
                ca_id=tlv.read_text(ca),
                epoch=tlv.read_u64(epoch),
                serial=tlv.read_u64(serial),
                issued_at=tlv.read_u64(issued),
                rung_descriptor=_u64_list(rungs),
                crl_commitment=_digest(crl),
                entries=parsed,
                legacy_fields=legacy_map,
            )
        except ManifestInvalid:
            raise
        except tlv.DecodeError as exc:
            raise ManifestInvalid(str(exc)) from exc
        if manifest.rung_descriptor != rung_sizes(len(parsed)):
            raise ManifestInvalid("rung descriptor does not match entry count")
        return manifest


@dataclass
class Crl:
    """Revoked leaves keyed by index (we have no EE certificate serials)."""

    ca_id: str
    serial: int
    revoked: dict[int, int] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        body = b"".join(tlv.u64(i) + tlv.u64(t) for i, t in sorted(self.revoked.items()))
        return tlv.encode([(0x01, tlv.text(self.ca_id)), (0x02, tlv.u64(self.serial)), (0x03, body)])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Crl":
        try:
            ca, serial, body = tlv.decode(data, (1, 2, 3))
            values = _u64_list(body)
            if len(values) % 2:
                raise FormatError("odd revocation list")
            return cls(tlv.read_text(ca), tlv.read_u64(serial), dict(zip(values[::2], values[1::2])))
        except FormatError:
            raise
        except tlv.DecodeError as exc:
            raise FormatError(str(exc)) from exc


class CaMode(str, enum.Enum):
    HOSTED = "hosted"
    DELEGATED = "delegated"


@dataclass
class RootRecord:
    """The per-CA ``root.bin``: ladder root plus either a signature (delegated)
    or a pointer to the registry that aggregates it (hosted)."""

    ca_id: str
    epoch: int
    serial: int
    ladder_root: Digest
    rung_descriptor: list[int]
    mode: CaMode
    parent: str = ""
    scheme: str = ""
    signer_id: str = ""
    signature: bytes = b""

    def to_bytes(self) -> bytes:
        return tlv.encode(
            [
                (0x01, tlv.text(self.ca_id)),
                (0x02, tlv.u64(self.epoch)),
                (0x03, tlv.u64(self.serial)),
                (0x04, self.ladder_root),
                (0x05, b"".join(tlv.u64(s) for s in self.rung_descriptor)),
                (0x06, tlv.text(self.mode.value)),
                (0x07, tlv.text(self.parent)),
                (0x08, tlv.text(self.scheme)),
                (0x09, tlv.text(self.signer_id)),
                (0x0A, self.signature),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RootRecord":
        try:
            ca, epoch, serial, root, rungs, mode, parent, scheme, signer, sig = tlv.decode(data, range(1, 11))
            return cls(
                tlv.read_text(ca),
                tlv.read_u64(epoch),
                tlv.read_u64(serial),
                _digest(root),
                _u64_list(rungs),
                CaMode(tlv.read_text(mode)),
                tlv.read_text(parent),
                tlv.read_text(scheme),
                tlv.read_text(signer),
                sig,
            )
        except ValueError as exc:
            raise FormatError(str(exc)) from exc

    def to_json(self) -> dict:
        doc = {
            "ca_id": self.ca_id,
            "epoch": self.epoch,
            "serial": self.serial,
            "ladder_root": self.ladder_root.hex(),
            "rung_descriptor": self.rung_descriptor,
            "mode": self.mode.value,
        }
        if self.mode is CaMode.HOSTED:
            doc["parent"] = self.parent
        else:
            doc.update(
                scheme=self.scheme,
                signer_id=self.signer_id,
                signature=base64.b64encode(self.signature).decode(),
            )
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "RootRecord":
        try:
            return cls(
                ca_id=doc["ca_id"],
                epoch=int(doc["epoch"]),
                serial=int(doc["serial"]),
                ladder_root=_digest(bytes.fromhex(doc["ladder_root"])),
                rung_descriptor=[int(s) for s in doc["rung_descriptor"]],
                mode=CaMode(doc["mode"]),
                parent=doc.get("parent", ""),
                scheme=doc.get("scheme", ""),
                signer_id=doc.get("signer_id", ""),
                signature=base64.b64decode(doc.get("signature", ""), validate=True),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad root record: {exc}") from exc


@dataclass(frozen=True)
class ChildEntry:
    child_id: str
    mode: CaMode
    ladder_root: Digest = b""
    public_key: bytes = b""
    scheme: str = ""

    @classmethod
    def hosted(cls, child_id: str, ladder_root: Digest) -> "ChildEntry":
        return cls(child_id, CaMode.HOSTED, ladder_root=ladder_root)

    @classmethod
    def delegated(cls, child_id: str, public_key: bytes, scheme: str) -> "ChildEntry":
        return cls(child_id, CaMode.DELEGATED, public_key=public_key, scheme=scheme)

    def to_bytes(self) -> bytes:
        material = self.ladder_root if self.mode is CaMode.HOSTED else self.public_key
        return tlv.encode(
            [
                (0x01, tlv.text(self.child_id)),
                (0x02, tlv.text(self.mode.value)),
                (0x03, material),
                (0x04, tlv.text(self.scheme)),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChildEntry":
        try:
            child, mode, material, scheme = tlv.decode(data, (1, 2, 3, 4))
            mode = CaMode(tlv.read_text(mode))
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
        if mode is CaMode.HOSTED:
            return cls(tlv.read_text(child), mode, ladder_root=_digest(material))
        return cls(tlv.read_text(child), mode, public_key=material, scheme=tlv.read_text(scheme))

    def digest(self) -> Digest:
        return leaf_hash(self.to_bytes())


@dataclass
class RegistryListing:
    registry_id: str
    children: list[ChildEntry]

    def to_bytes(self) -> bytes:
        body = b"".join(tlv.field(0x20, c.to_bytes()) for c in self.children)
        return tlv.encode([(0x01, tlv.text(self.registry_id)), (0x02, body)])

    @classmethod
    def from_bytes(cls, data: bytes) -> "RegistryListing":
        try:
            reg, body = tlv.decode(data, (1, 2))
            children = []
            for tag, value in tlv.iter_fields(body):
                if tag != 0x20:
                    raise FormatError(f"unexpected listing tag {tag:#x}")
                children.append(ChildEntry.from_bytes(value))
        except FormatError:
            raise
        except tlv.DecodeError as exc:
            raise FormatError(str(exc)) from exc
        return cls(tlv.read_text(reg), children)

    def ladder(self) -> Ladder:
        return Ladder.from_commitments([c.digest() for c in self.children])

    def aggregate_root(self) -> Digest:
        return aggregate_root(self.ladder())


@dataclass
class RegistryRoot:
    registry_id: str
    epoch: int
    serial: int
    aggregate_root: Digest
    scheme: str
    signer_id: str
    signature: bytes

    def to_bytes(self) -> bytes:
        return tlv.encode(
            [
                (0x01, tlv.text(self.registry_id)),
                (0x02, tlv.u64(self.epoch)),
                (0x03, tlv.u64(self.serial)),
                (0x04, self.aggregate_root),
                (0x05, tlv.text(self.scheme)),
                (0x06, tlv.text(self.signer_id)),
                (0x07, self.signature),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RegistryRoot":
        try:
            reg, epoch, serial, root, scheme, signer, sig = tlv.decode(data, range(1, 8))
            return cls(
                tlv.read_text(reg),
                tlv.read_u64(epoch),
                tlv.read_u64(serial),
                _digest(root),
                tlv.read_text(scheme),
                tlv.read_text(signer),
                sig,
            )
        except tlv.DecodeError as exc:
            raise FormatError(str(exc)) from exc

    def to_json(self) -> dict:
        return {
            "registry_id": self.registry_id,
            "epoch": self.epoch,
            "serial": self.serial,
            "aggregate_root": self.aggregate_root.hex(),
            "scheme": self.scheme,
            "signature": base64.b64encode(self.signature).decode(),
            "signer_id": self.signer_id,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "RegistryRoot":
        try:
            return cls(
                doc["registry_id"],
                int(doc["epoch"]),
                int(doc["serial"]),
                _digest(bytes.fromhex(doc["aggregate_root"])),
                doc["scheme"],
                doc["signer_id"],
                base64.b64decode(doc["signature"], validate=True),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad registry root: {exc}") from exc


@dataclass
class PathBundle:
    """Rung roots plus one authentication path per served object.

    Only the path-carrying baseline uses this; the manifest-driven layout
    never ships paths.
    """

    rung_roots: list[Digest]
    paths: dict[str, AuthPath]

    def to_bytes(self) -> bytes:
        body = b"".join(
            tlv.field(
                0x10,
                tlv.field(0x01, tlv.text(name))
                + tlv.field(0x02, tlv.u64(p.leaf_index) + tlv.u64(p.rung_position) + b"".join(p.siblings)),
            )
            for name, p in sorted(self.paths.items())
        )
        return tlv.encode([(0x01, b"".join(self.rung_roots)), (0x02, body)])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PathBundle":
        try:
            roots, body = tlv.decode(data, (1, 2))
            if len(roots) % DIGEST_SIZE:
                raise FormatError("rung roots not a multiple of 32 bytes")
            rung_roots = [roots[i : i + DIGEST_SIZE] for i in range(0, len(roots), DIGEST_SIZE)]
            paths = {}
            for tag, value in tlv.iter_fields(body):
                name, raw = tlv.decode(value, (1, 2))
                if tag != 0x10 or len(raw) < 16 or (len(raw) - 16) % DIGEST_SIZE:
                    raise FormatError("malformed path record")
                sibs = tuple(raw[i : i + DIGEST_SIZE] for i in range(16, len(raw), DIGEST_SIZE))
                paths[tlv.read_text(name)] = AuthPath(
                    int.from_bytes(raw[:8], "big"), sibs, int.from_bytes(raw[8:16], "big")
                )
        except FormatError:
            raise
        except tlv.DecodeError as exc:
            raise FormatError(str(exc)) from exc
        return cls(rung_roots, paths)
