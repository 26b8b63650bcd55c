"""Wire-level ledger records: units, transactions, blocks, chains.

These are the values that get canonically encoded and hashed. They are
immutable; appending to a chain produces a new chain value, so records are
safe to share read-only across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

from .identity import PSEUDONYM_LEN, Signature

HASH_LEN = 32
ZERO_HASH = bytes(HASH_LEN)
U64_MAX = 2**64 - 1


def _check_hash(value: bytes, name: str) -> None:
    if len(value) != HASH_LEN:
        raise ValueError(f"{name} must be {HASH_LEN} bytes, got {len(value)}")


def _check_pseudonym(value: bytes, name: str) -> None:
    if len(value) != PSEUDONYM_LEN:
        raise ValueError(f"{name} must be a {PSEUDONYM_LEN}-byte pseudonym")


def _check_u64(value: int, name: str) -> None:
    if not 0 <= value <= U64_MAX:
        raise ValueError(f"{name} must fit an unsigned 64-bit integer, got {value}")


@dataclass(frozen=True)
class UnitId:
    """Outpoint-style identifier: the producing transaction hash plus output index."""

    origin_tx: bytes
    output_index: int

    def __post_init__(self) -> None:
        _check_hash(self.origin_tx, "origin_tx")
        _check_u64(self.output_index, "output_index")

    def hex(self) -> str:
        return f"{self.origin_tx.hex()}:{self.output_index}"

    @classmethod
    def from_hex(cls, text: str) -> "UnitId":
        tx_hex, _, index = text.partition(":")
        return cls(origin_tx=bytes.fromhex(tx_hex), output_index=int(index))


@dataclass(frozen=True)
class OutputSpec:
    """Declared output of a transaction: the unit kind and the inputs it was made from.

    Explicit parent subsets make taint attribution exact under mixing; a
    transaction must account for every input across its outputs' parents.
    """

    kind: str
    parents: tuple[UnitId, ...] = ()

    def __post_init__(self) -> None:
        if not self.kind:
            raise ValueError("output kind must be non-empty")
        if len(set(self.parents)) != len(self.parents):
            raise ValueError("output parents must not repeat")


@dataclass(frozen=True)
class Transaction:
    """A dual-signed exchange: inputs consumed, outputs produced, both parties on record.

    A transaction with no inputs is a mint (raw-material origination) and
    must be a self-exchange. Signature fields are None while the record is
    being authored; both must be present before it can enter a block.
    """

    inputs: tuple[UnitId, ...]
    outputs: tuple[OutputSpec, ...]
    sender: bytes
    receiver: bytes
    height_hint: int
    sender_sig: Signature | None = None
    receiver_sig: Signature | None = None

    def __post_init__(self) -> None:
        _check_pseudonym(self.sender, "sender")
        _check_pseudonym(self.receiver, "receiver")
        _check_u64(self.height_hint, "height_hint")
        if len(set(self.inputs)) != len(self.inputs):
            raise ValueError("transaction inputs must not repeat")

    @property
    def is_mint(self) -> bool:
        return not self.inputs

    @property
    def is_signed(self) -> bool:
        return self.sender_sig is not None and self.receiver_sig is not None

    def counterparties(self) -> set[bytes]:
        return {self.sender, self.receiver}

    def with_signatures(
        self,
        sender_sig: Signature | None = None,
        receiver_sig: Signature | None = None,
    ) -> "Transaction":
        return Transaction(
            inputs=self.inputs,
            outputs=self.outputs,
            sender=self.sender,
            receiver=self.receiver,
            height_hint=self.height_hint,
            sender_sig=sender_sig if sender_sig is not None else self.sender_sig,
            receiver_sig=receiver_sig if receiver_sig is not None else self.receiver_sig,
        )

    def unsigned(self) -> "Transaction":
        return Transaction(
            inputs=self.inputs,
            outputs=self.outputs,
            sender=self.sender,
            receiver=self.receiver,
            height_hint=self.height_hint,
        )


@dataclass(frozen=True)
class BlockHeader:
    """Fixed 80-byte header: predecessor hash, height, payload digest, timestamp.

    The height doubles as the ledger's coarse clock; the wall-clock
    timestamp is informational only and never consulted by verification
    logic beyond being part of the hashed bytes.
    """

    prev_hash: bytes
    height: int
    payload_hash: bytes
    timestamp: int

    def __post_init__(self) -> None:
        _check_hash(self.prev_hash, "prev_hash")
        _check_hash(self.payload_hash, "payload_hash")
        _check_u64(self.height, "height")
        _check_u64(self.timestamp, "timestamp")


@dataclass(frozen=True)
class Block:
    """A header, its transaction batch, and the committers' signatures over the block hash."""

    header: BlockHeader
    transactions: tuple[Transaction, ...]
    commit_signatures: tuple[Signature, ...]


@dataclass(frozen=True)
class Chain:
    """An append-only block list plus the head hash that authenticates all of it."""

    blocks: tuple[Block, ...]
    head_hash: bytes

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ValueError("a chain holds at least its genesis block")
        _check_hash(self.head_hash, "head_hash")

    @property
    def height(self) -> int:
        return self.blocks[-1].header.height

    def __len__(self) -> int:
        return len(self.blocks)
