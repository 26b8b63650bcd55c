"""Canonical binary encoding and content hashing for ledger records.

Hash stability is the hard requirement here, so the format is a bespoke
fixed-order layout rather than anything self-describing:

* integers: 8-byte big-endian unsigned
* fixed-width fields: raw bytes (32-byte hashes, 20-byte pseudonyms)
* variable-length bytes and strings: 4-byte big-endian length, then bytes
* lists: 4-byte big-endian element count, then each element
* fields in declared record order

Every field is either fixed-width or length-prefixed, so the encoding is
injective: distinct values never share an encoding. An absent signature
(an unsigned transaction under authoring) encodes as a zero length plus a
zero signer, which no real signature can collide with because signature
bytes are never empty.
"""

from __future__ import annotations

import hashlib
import struct

from .identity import PSEUDONYM_LEN, ZERO_PSEUDONYM, Signature
from .records import HASH_LEN, Block, BlockHeader, OutputSpec, Transaction, UnitId

HEADER_LEN = HASH_LEN + 8 + HASH_LEN + 8  # 80 bytes


class DecodeError(ValueError):
    """Byte input does not parse as a canonical record."""


def _u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def _u32(value: int) -> bytes:
    return struct.pack(">I", value)


def _var_bytes(value: bytes) -> bytes:
    return _u32(len(value)) + value


def _string(value: str) -> bytes:
    return _var_bytes(value.encode("utf-8"))


def _signature(sig: Signature | None) -> bytes:
    if sig is None:
        return _u32(0) + ZERO_PSEUDONYM
    return _var_bytes(sig.raw) + sig.signer


def _unit_id(unit: UnitId) -> bytes:
    return unit.origin_tx + _u64(unit.output_index)


def _output_spec(output: OutputSpec) -> bytes:
    parts = [_string(output.kind), _u32(len(output.parents))]
    parts.extend(_unit_id(parent) for parent in output.parents)
    return b"".join(parts)


def encode_transaction(tx: Transaction) -> bytes:
    parts = [_u32(len(tx.inputs))]
    parts.extend(_unit_id(unit) for unit in tx.inputs)
    parts.append(_u32(len(tx.outputs)))
    parts.extend(_output_spec(output) for output in tx.outputs)
    parts.append(tx.sender)
    parts.append(tx.receiver)
    parts.append(_u64(tx.height_hint))
    parts.append(_signature(tx.sender_sig))
    parts.append(_signature(tx.receiver_sig))
    return b"".join(parts)


def encode_transaction_list(txs: tuple[Transaction, ...]) -> bytes:
    return _u32(len(txs)) + b"".join(encode_transaction(tx) for tx in txs)


def encode_header(header: BlockHeader) -> bytes:
    return header.prev_hash + _u64(header.height) + header.payload_hash + _u64(header.timestamp)


def encode_block(block: Block) -> bytes:
    parts = [encode_header(block.header), encode_transaction_list(block.transactions)]
    parts.append(_u32(len(block.commit_signatures)))
    parts.extend(_signature(sig) for sig in block.commit_signatures)
    return b"".join(parts)


def canonical_encode(value: Block | BlockHeader | Transaction) -> bytes:
    """Encode any hashable record in its canonical byte form."""
    if isinstance(value, BlockHeader):
        return encode_header(value)
    if isinstance(value, Block):
        return encode_block(value)
    if isinstance(value, Transaction):
        return encode_transaction(value)
    raise TypeError(f"no canonical encoding for {type(value).__name__}")


# -- content hashes ---------------------------------------------------------


def block_hash(header: BlockHeader) -> bytes:
    """SHA-256 of the canonical header bytes; the value hash pointers carry."""
    return hashlib.sha256(encode_header(header)).digest()


def payload_hash(txs: tuple[Transaction, ...]) -> bytes:
    """Digest over the canonically encoded transaction list of a block."""
    return hashlib.sha256(encode_transaction_list(txs)).digest()


def transaction_hash(tx: Transaction) -> bytes:
    """Identifier hash over the full (signed) transaction encoding."""
    return hashlib.sha256(encode_transaction(tx)).digest()


def transaction_signing_bytes(tx: Transaction) -> bytes:
    """What both counterparties sign: the encoding with signature fields zeroed."""
    return encode_transaction(tx.unsigned())


# -- decoding ---------------------------------------------------------------


class _Reader:
    """Strict cursor over an immutable buffer; every read is bounds-checked."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated record: wanted {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def var_bytes(self) -> bytes:
        return self.take(self.u32())

    def string(self) -> str:
        raw = self.var_bytes()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid utf-8 in string field: {exc}") from None

    def done(self) -> bool:
        return self.pos == len(self.data)


def _read_signature(reader: _Reader) -> Signature | None:
    raw = reader.var_bytes()
    signer = reader.take(PSEUDONYM_LEN)
    if not raw:
        if signer != ZERO_PSEUDONYM:
            raise DecodeError("empty signature must carry a zero signer")
        return None
    return Signature(raw=raw, signer=signer)


def _read_unit_id(reader: _Reader) -> UnitId:
    return UnitId(origin_tx=reader.take(HASH_LEN), output_index=reader.u64())


def _read_output_spec(reader: _Reader) -> OutputSpec:
    kind = reader.string()
    parents = tuple(_read_unit_id(reader) for _ in range(reader.u32()))
    return _wrap(OutputSpec, kind=kind, parents=parents)


def _read_transaction(reader: _Reader) -> Transaction:
    inputs = tuple(_read_unit_id(reader) for _ in range(reader.u32()))
    outputs = tuple(_read_output_spec(reader) for _ in range(reader.u32()))
    sender = reader.take(PSEUDONYM_LEN)
    receiver = reader.take(PSEUDONYM_LEN)
    height_hint = reader.u64()
    sender_sig = _read_signature(reader)
    receiver_sig = _read_signature(reader)
    return _wrap(
        Transaction,
        inputs=inputs,
        outputs=outputs,
        sender=sender,
        receiver=receiver,
        height_hint=height_hint,
        sender_sig=sender_sig,
        receiver_sig=receiver_sig,
    )


def _read_header(reader: _Reader) -> BlockHeader:
    return _wrap(
        BlockHeader,
        prev_hash=reader.take(HASH_LEN),
        height=reader.u64(),
        payload_hash=reader.take(HASH_LEN),
        timestamp=reader.u64(),
    )


def _read_block(reader: _Reader) -> Block:
    header = _read_header(reader)
    transactions = tuple(_read_transaction(reader) for _ in range(reader.u32()))
    commit_signatures = []
    for _ in range(reader.u32()):
        sig = _read_signature(reader)
        if sig is None:
            raise DecodeError("block commit signatures must be non-empty")
        commit_signatures.append(sig)
    return Block(header=header, transactions=transactions, commit_signatures=tuple(commit_signatures))


def _wrap(record_type, **fields):
    # Record invariants (field widths, duplicate inputs) become decode errors.
    try:
        return record_type(**fields)
    except ValueError as exc:
        raise DecodeError(f"invalid {record_type.__name__}: {exc}") from None


def _decode_with(read, data: bytes):
    reader = _Reader(data)
    value = read(reader)
    if not reader.done():
        raise DecodeError(f"{len(reader.data) - reader.pos} trailing bytes after record")
    return value


def decode_header(data: bytes) -> BlockHeader:
    return _decode_with(_read_header, data)


def decode_transaction(data: bytes) -> Transaction:
    return _decode_with(_read_transaction, data)


def decode_block(data: bytes) -> Block:
    return _decode_with(_read_block, data)


def read_block(reader: _Reader) -> Block:
    """Read one block from a stream of concatenated block encodings."""
    return _read_block(reader)


def stream_reader(data: bytes) -> _Reader:
    return _Reader(data)
