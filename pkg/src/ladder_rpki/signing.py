"""Pluggable signature schemes and byte-size profiles.

Only ``test-hash-sig`` is executable out of the box.  The post-quantum and
RSA entries are size models: they carry the public-key and signature lengths
used for repository accounting but cannot sign.  Additional executable
backends can be plugged in with :func:`register_backend`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

TEST_SCHEME = "test-hash-sig"


class SignatureError(Exception):
    pass


class NotExecutable(SignatureError):
    pass


class UnknownScheme(SignatureError, KeyError):
    pass


@dataclass(frozen=True)
class SchemeProfile:
    name: str
    public_key_bytes: int
    signature_bytes: int
    executable: bool = False

    def __post_init__(self) -> None:
        if self.public_key_bytes <= 0 or self.signature_bytes <= 0:
            raise ValueError(f"{self.name}: key and signature sizes must be positive")

    @property
    def delegation_bytes(self) -> int:
        """Bytes a delegated child adds: one public key plus one root signature."""
        return self.public_key_bytes + self.signature_bytes


@dataclass(frozen=True)
class KeyPair:
    scheme: SchemeProfile
    public_key: bytes
    secret_key: bytes

    def __repr__(self) -> str:
        return f"KeyPair(scheme={self.scheme.name!r}, public_key={self.public_key.hex()[:16]}...)"


@dataclass(frozen=True)
class RootSignature:
    scheme: str
    signer_id: str
    signature: bytes
    signed_payload_digest: bytes


class Backend(Protocol):
    def keygen(self, seed: bytes) -> tuple[bytes, bytes]: ...

    def sign(self, secret_key: bytes, message: bytes) -> bytes: ...

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


class Ed25519Backend:
    """Deterministic keys from a seed; Ed25519 signatures are deterministic too."""

    def keygen(self, seed: bytes) -> tuple[bytes, bytes]:
        secret = hashlib.sha256(b"ladder-rpki keygen\x00" + seed).digest()
        public = Ed25519PrivateKey.from_private_bytes(secret).public_key()
        raw = public.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return raw, secret

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


_PROFILES: dict[str, SchemeProfile] = {}
_BACKENDS: dict[str, Backend] = {}


def register_profile(profile: SchemeProfile) -> None:
    if profile.executable and profile.name not in _BACKENDS:
        raise NotExecutable(f"{profile.name}: no backend registered for an executable profile")
    _PROFILES[profile.name] = profile


def register_backend(profile: SchemeProfile, backend: Backend) -> None:
    _BACKENDS[profile.name] = backend
    register_profile(profile)


register_backend(SchemeProfile(TEST_SCHEME, 32, 64, executable=True), Ed25519Backend())
# Size models only.  RSA public key is the DER SubjectPublicKeyInfo length;
# ML-DSA is the ML-DSA-44 parameter set.
register_profile(SchemeProfile("falcon-model", 897, 666))
register_profile(SchemeProfile("mldsa-model", 1312, 2420))
register_profile(SchemeProfile("rsa2048-model", 270, 256))


def scheme_catalog() -> list[SchemeProfile]:
    return list(_PROFILES.values())


def get_scheme(name: str | SchemeProfile) -> SchemeProfile:
    if isinstance(name, SchemeProfile):
        return name
    try:
        return _PROFILES[name]
    except KeyError:
        raise UnknownScheme(name) from None


def load_profiles(path: str | Path) -> list[SchemeProfile]:
    """Register size profiles from a JSON list of ``{name, public_key_bytes,
    signature_bytes, executable}`` records."""
    records = json.loads(Path(path).read_text())
    profiles = [SchemeProfile(**r) for r in records]
    for profile in profiles:
        register_profile(profile)
    return profiles


def _backend(scheme: SchemeProfile) -> Backend:
    if not scheme.executable or scheme.name not in _BACKENDS:
        raise NotExecutable(f"{scheme.name} is a size model and cannot sign or verify")
    return _BACKENDS[scheme.name]


def keygen(scheme: str | SchemeProfile, seed: bytes) -> KeyPair:
    profile = get_scheme(scheme)
    public, secret = _backend(profile).keygen(seed)
    return KeyPair(profile, public, secret)


def sign(key: KeyPair, message: bytes, signer_id: str = "") -> RootSignature:
    signature = _backend(key.scheme).sign(key.secret_key, message)
    return RootSignature(key.scheme.name, signer_id, signature, hashlib.sha256(message).digest())


def verify(
    public_key: bytes, message: bytes, signature: bytes, scheme: str | SchemeProfile = TEST_SCHEME
) -> bool:
    try:
        profile = get_scheme(scheme)
        backend = _backend(profile)
    except SignatureError:
        return False
    if len(public_key) != profile.public_key_bytes or len(signature) != profile.signature_bytes:
        return False
    return backend.verify(public_key, message, signature)


def placeholder_signature(scheme: str | SchemeProfile, message: bytes) -> bytes:
    """Deterministic filler of the profile's signature length.

    Stands in for signatures of size-model schemes (e.g. the classical
    sidecar in dual-stack mode) so that byte accounting is exact.  It carries
    no security whatsoever.
    """
    profile = get_scheme(scheme)
    return hashlib.shake_256(profile.name.encode() + b"\x00" + message).digest(profile.signature_bytes)

