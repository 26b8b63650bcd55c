"""Keypairs, persistent pseudonyms, signing, and the participant directory.

Pseudonyms are the only participant identifiers that ever reach ledger
bytes. Real-world names live in a separate off-ledger mapping kept by the
test/simulation harness, and ``anonymity_audit`` checks mechanically that
none of them leaked into a chain.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

SEED_LEN = 32
PSEUDONYM_LEN = 20
ZERO_PSEUDONYM = bytes(PSEUDONYM_LEN)


class BadSeedLengthError(ValueError):
    """Seed material is not exactly 32 bytes."""


class EmptyMessageError(ValueError):
    """Refused to sign an empty message."""


class UnknownPseudonymError(KeyError):
    """Pseudonym has no registered public key."""


def derive_pseudonym(public_key: bytes) -> bytes:
    """Persistent pseudonym: SHA-256 of the raw public key, truncated to 20 bytes."""
    return hashlib.sha256(public_key).digest()[:PSEUDONYM_LEN]


@dataclass(frozen=True)
class Signature:
    """A detached signature attributed to a pseudonym.

    ``raw`` is never empty; the all-zero placeholder used while a
    transaction is being authored is represented as ``None`` at the field
    level, not as an empty Signature.
    """

    raw: bytes
    signer: bytes

    def __post_init__(self) -> None:
        if not self.raw:
            raise ValueError("signature bytes must be non-empty")
        if len(self.signer) != PSEUDONYM_LEN:
            raise ValueError("signer must be a 20-byte pseudonym")


@dataclass(frozen=True)
class NodeIdentity:
    """A participant keypair plus its derived pseudonym.

    The secret key never appears in any canonical encoding or ledger file;
    it exists only in memory and in the operator's 32-byte seed file.
    """

    signing_key: ed25519.Ed25519PrivateKey = field(repr=False)
    public_key: bytes
    pseudonym: bytes

    def __repr__(self) -> str:  # keep key material out of logs
        return f"NodeIdentity(pseudonym={self.pseudonym.hex()})"


def keygen(seed: bytes) -> NodeIdentity:
    """Derive a deterministic identity from 32 bytes of entropy."""
    if len(seed) != SEED_LEN:
        raise BadSeedLengthError(f"seed must be {SEED_LEN} bytes, got {len(seed)}")
    signing_key = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
    public_key = signing_key.public_key().public_bytes_raw()
    return NodeIdentity(
        signing_key=signing_key,
        public_key=public_key,
        pseudonym=derive_pseudonym(public_key),
    )


def sign(identity: NodeIdentity, message: bytes) -> Signature:
    """Sign a message, staking the identity's pseudonymous reputation on it."""
    if not message:
        raise EmptyMessageError("refusing to sign an empty message")
    return Signature(raw=identity.signing_key.sign(bytes(message)), signer=identity.pseudonym)


class Directory:
    """Pseudonym registry: public keys (shareable) plus off-ledger labels.

    The public-key half is what verifiers need and is safe to publish.
    The label half maps pseudonyms to real-world names and must never be
    encoded into chain bytes; it exists so the harness can audit that the
    ledger leaks nothing de-anonymizing.
    """

    def __init__(self) -> None:
        self._keys: dict[bytes, bytes] = {}
        self._labels: dict[bytes, str] = {}

    def register(self, identity: NodeIdentity, label: str | None = None) -> None:
        self.register_key(identity.pseudonym, identity.public_key, label)

    def register_key(self, pseudonym: bytes, public_key: bytes, label: str | None = None) -> None:
        if len(pseudonym) != PSEUDONYM_LEN:
            raise ValueError("pseudonym must be 20 bytes")
        if len(public_key) != 32:
            raise ValueError("public key must be 32 raw bytes")
        self._keys[pseudonym] = public_key
        if label is not None:
            if not label:
                raise ValueError("off-ledger label must be non-empty")
            self._labels[pseudonym] = label

    def __contains__(self, pseudonym: bytes) -> bool:
        return pseudonym in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def public_key(self, pseudonym: bytes) -> bytes:
        try:
            return self._keys[pseudonym]
        except KeyError:
            raise UnknownPseudonymError(pseudonym.hex()) from None

    def label(self, pseudonym: bytes) -> str | None:
        return self._labels.get(pseudonym)

    def labels(self) -> dict[bytes, str]:
        return dict(self._labels)

    def pseudonyms(self) -> list[bytes]:
        return list(self._keys)

    # -- file formats ------------------------------------------------------

    def to_public_json(self) -> str:
        """Public directory: JSON map pseudonym-hex -> public-key-hex."""
        return json.dumps(
            {p.hex(): k.hex() for p, k in self._keys.items()},
            indent=2,
            sort_keys=True,
        )

    def to_labels_json(self) -> str:
        """Off-ledger label map. Harness-side only; never ships with a chain."""
        return json.dumps(
            {p.hex(): label for p, label in self._labels.items()},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_public_json(cls, text: str) -> "Directory":
        directory = cls()
        for pseudonym_hex, key_hex in json.loads(text).items():
            directory.register_key(bytes.fromhex(pseudonym_hex), bytes.fromhex(key_hex))
        return directory

    def load_labels_json(self, text: str) -> None:
        for pseudonym_hex, label in json.loads(text).items():
            pseudonym = bytes.fromhex(pseudonym_hex)
            if not label:
                raise ValueError("off-ledger label must be non-empty")
            self._labels[pseudonym] = label

    def save(self, directory_path: Path, labels_path: Path | None = None) -> None:
        directory_path.write_text(self.to_public_json() + "\n")
        if labels_path is not None:
            labels_path.write_text(self.to_labels_json() + "\n")

    @classmethod
    def load(cls, directory_path: Path, labels_path: Path | None = None) -> "Directory":
        directory = cls.from_public_json(directory_path.read_text())
        if labels_path is not None and labels_path.exists():
            directory.load_labels_json(labels_path.read_text())
        return directory


def verify_signature(directory: Directory, sig: Signature, message: bytes) -> bool:
    """True iff ``sig`` verifies over ``message`` under the key registered for its signer.

    Raises UnknownPseudonymError when the signer is not in the directory;
    malformed or mismatched signature bytes simply return False.
    """
    key_bytes = directory.public_key(sig.signer)
    public_key = ed25519.Ed25519PublicKey.from_public_bytes(key_bytes)
    try:
        public_key.verify(sig.raw, bytes(message))
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class AuditOccurrence:
    offset: int
    label: str
    pseudonym: bytes


@dataclass(frozen=True)
class AuditReport:
    """Result of scanning chain bytes for off-ledger label leakage."""

    scanned_bytes: int
    labels_checked: int
    occurrences: tuple[AuditOccurrence, ...]

    @property
    def passed(self) -> bool:
        return not self.occurrences

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "scanned_bytes": self.scanned_bytes,
            "labels_checked": self.labels_checked,
            "occurrences": [
                {"offset": o.offset, "label": o.label, "pseudonym": o.pseudonym.hex()}
                for o in self.occurrences
            ],
        }


def anonymity_audit(chain_bytes: bytes, directory: Directory) -> AuditReport:
    """Scan raw chain bytes for any off-ledger label; report every occurrence.

    Passing means the ledger exposes pseudonyms and structure only. An
    empty label map passes vacuously.
    """
    occurrences: list[AuditOccurrence] = []
    for pseudonym, label in directory.labels().items():
        needle = label.encode("utf-8")
        start = 0
        while True:
            offset = chain_bytes.find(needle, start)
            if offset < 0:
                break
            occurrences.append(AuditOccurrence(offset=offset, label=label, pseudonym=pseudonym))
            start = offset + 1
    occurrences.sort(key=lambda o: (o.offset, o.label))
    return AuditReport(
        scanned_bytes=len(chain_bytes),
        labels_checked=len(directory.labels()),
        occurrences=tuple(occurrences),
    )


def save_seed(path: Path, seed: bytes) -> None:
    """Write a key seed with owner-only permissions."""
    if len(seed) != SEED_LEN:
        raise BadSeedLengthError(f"seed must be {SEED_LEN} bytes, got {len(seed)}")
    path.write_bytes(seed)
    os.chmod(path, 0o600)


def load_seed(path: Path) -> bytes:
    seed = path.read_bytes()
    if len(seed) != SEED_LEN:
        raise BadSeedLengthError(f"seed file must hold {SEED_LEN} bytes, got {len(seed)}")
    return seed
