"""Append-only hash-linked ledger: building, verifying, and persisting chains.

A chain is trusted through one 32-byte head hash. Verification walks the
blocks front to back and re-derives every hash and commit signature, so a
single flipped bit anywhere surfaces as a failed check at a specific block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .encoding import (
    DecodeError,
    block_hash,
    encode_block,
    payload_hash,
    read_block,
    stream_reader,
)
from .identity import Directory, NodeIdentity, Signature, UnknownPseudonymError, sign, verify_signature
from .records import HASH_LEN, ZERO_HASH, Block, BlockHeader, Chain, OutputSpec, Transaction, UnitId
from .provenance import (
    UnspentUnitSet,
    apply_transaction,
    replay_chain,
    validate_transaction,
)

CHAIN_MAGIC = b"PCH1"
HEAD_SUFFIX = ".head"


class EmptyBlockError(ValueError):
    """Non-genesis blocks must carry at least one transaction."""


class MissingCommitterError(ValueError):
    """A transaction counterparty did not co-sign the block commit."""


class InvalidTransactionError(ValueError):
    """A transaction failed validation; carries the stable reason code."""

    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class ChainFormatError(ValueError):
    """Chain or head file is malformed, truncated, or missing."""


# -- building -----------------------------------------------------------------


def genesis_block() -> Block:
    """The fixed first block every chain shares: no payload, zero prev hash."""
    header = BlockHeader(
        prev_hash=ZERO_HASH, height=0, payload_hash=payload_hash(()), timestamp=0
    )
    return Block(header=header, transactions=(), commit_signatures=())


def genesis_chain() -> Chain:
    block = genesis_block()
    return Chain(blocks=(block,), head_hash=block_hash(block.header))


_GENESIS_ENCODING = encode_block(genesis_block())


def append_block(
    chain: Chain,
    transactions: list[Transaction] | tuple[Transaction, ...],
    committers: list[NodeIdentity] | tuple[NodeIdentity, ...],
    directory: Directory,
    *,
    state: UnspentUnitSet | None = None,
    timestamp: int | None = None,
) -> Chain:
    """Validate transactions against the chain tip and commit them as a new block.

    Every transaction counterparty must appear among the committers, whose
    signatures over the new block hash form the commit certificate. Pass the
    replayed tip state to skip the from-genesis replay on long chains.
    """
    txs = tuple(transactions)
    if not txs:
        raise EmptyBlockError("a block must carry at least one transaction")

    present = {identity.pseudonym for identity in committers}
    required = set()
    for tx in txs:
        required |= tx.counterparties()
    missing = required - present
    if missing:
        names = ", ".join(sorted(pseudonym.hex() for pseudonym in missing))
        raise MissingCommitterError(f"counterparties absent from the commit: {names}")

    if state is None:
        state = replay_chain(chain, directory)
    height = chain.height + 1
    for tx in txs:
        result = validate_transaction(state, tx, directory)
        if not result.ok:
            raise InvalidTransactionError(result.code, result.detail)
        if tx.height_hint != height:
            raise InvalidTransactionError(
                "HeightMismatch",
                f"transaction bound to height {tx.height_hint}, block commits at {height}",
            )
        try:
            state = apply_transaction(state, tx)
        except ValueError as exc:
            raise InvalidTransactionError("DuplicateUnit", str(exc)) from None

    if timestamp is None:
        timestamp = chain.blocks[-1].header.timestamp + 1
    header = BlockHeader(
        prev_hash=chain.head_hash,
        height=height,
        payload_hash=payload_hash(txs),
        timestamp=timestamp,
    )
    message = block_hash(header)
    commit_signatures = tuple(sign(identity, message) for identity in committers)
    block = Block(header=header, transactions=txs, commit_signatures=commit_signatures)
    return Chain(blocks=chain.blocks + (block,), head_hash=message)


# -- verification -------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of a full-chain check; pinpoints the first failing block."""

    valid: bool
    blocks_checked: int
    failed_index: int | None = None
    failed_check: str | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "blocks_checked": self.blocks_checked,
            "failed_index": self.failed_index,
            "failed_check": self.failed_check,
            "detail": self.detail,
        }


def _fail(index: int, check: str, detail: str, checked: int) -> VerificationReport:
    return VerificationReport(
        valid=False,
        blocks_checked=checked,
        failed_index=index,
        failed_check=check,
        detail=detail,
    )


def verify_chain(chain: Chain, trusted_head: bytes, directory: Directory) -> VerificationReport:
    """Check an entire chain against one trusted head hash.

    Per block, in walk order: shape, height, prev link, payload hash, commit
    signatures (including counterparty coverage); then the recomputed head
    against the trusted one. The first failure wins.
    """
    if len(trusted_head) != HASH_LEN:
        raise ValueError("trusted head must be 32 bytes")

    prev = ZERO_HASH
    for index, block in enumerate(chain.blocks):
        header = block.header
        if index == 0:
            if encode_block(block) != _GENESIS_ENCODING:
                return _fail(0, "block_shape", "first block is not the fixed genesis", index)
        elif not block.transactions:
            return _fail(index, "block_shape", "non-genesis block carries no transactions", index)
        if header.height != index:
            return _fail(index, "height", f"expected height {index}, found {header.height}", index)
        if header.prev_hash != prev:
            return _fail(index, "prev_hash", "previous-block hash does not match", index)
        if header.payload_hash != payload_hash(block.transactions):
            return _fail(index, "payload_hash", "transactions do not hash to the header", index)
        current = block_hash(header)
        if index > 0:
            failure = check_commit_signatures(block, current, directory)
            if failure:
                return _fail(index, "commit_signature", failure, index)
        prev = current

    if prev != trusted_head:
        last = len(chain.blocks) - 1
        return _fail(last, "head", "recomputed head does not match the trusted head", last)
    return VerificationReport(valid=True, blocks_checked=len(chain.blocks))


def check_commit_signatures(block: Block, message: bytes, directory: Directory) -> str | None:
    """Verify every commit signature and counterparty coverage; None when clean."""
    signers = set()
    for signature in block.commit_signatures:
        try:
            if not verify_signature(directory, signature, message):
                return f"commit signature by {signature.signer.hex()} does not verify"
        except UnknownPseudonymError:
            return f"commit signer {signature.signer.hex()} not registered in the directory"
        signers.add(signature.signer)
    for tx in block.transactions:
        missing = tx.counterparties() - signers
        if missing:
            names = ", ".join(sorted(pseudonym.hex() for pseudonym in missing))
            return f"counterparties did not sign the commit: {names}"
    return None


# -- persistence --------------------------------------------------------------


def head_path_for(chain_path: Path) -> Path:
    return chain_path.with_name(chain_path.name + HEAD_SUFFIX)


def encode_chain(chain: Chain) -> bytes:
    """The exact bytes the chain file holds: magic, block count, blocks."""
    parts = [CHAIN_MAGIC, len(chain.blocks).to_bytes(4, "big")]
    parts.extend(encode_block(block) for block in chain.blocks)
    return b"".join(parts)


def save_chain(chain_path: Path, chain: Chain) -> None:
    """Write the block file and its 32-byte head file side by side."""
    chain_path = Path(chain_path)
    chain_path.write_bytes(encode_chain(chain))
    head_path_for(chain_path).write_bytes(chain.head_hash)


def load_head(chain_path: Path, *, head_path: Path | None = None) -> bytes:
    head_path = Path(head_path) if head_path else head_path_for(Path(chain_path))
    try:
        head = head_path.read_bytes()
    except FileNotFoundError:
        raise ChainFormatError(f"missing head file {head_path}") from None
    if len(head) != HASH_LEN:
        raise ChainFormatError(f"head file {head_path} must hold exactly {HASH_LEN} bytes")
    return head


def load_chain(chain_path: Path, *, head_path: Path | None = None) -> Chain:
    """Read blocks and the stored head back; structural decode only, no verification."""
    chain_path = Path(chain_path)
    try:
        data = chain_path.read_bytes()
    except FileNotFoundError:
        raise ChainFormatError(f"missing chain file {chain_path}") from None
    if data[:4] != CHAIN_MAGIC:
        raise ChainFormatError("bad magic; not a chain file")
    if len(data) < 8:
        raise ChainFormatError("truncated chain file")
    count = int.from_bytes(data[4:8], "big")
    if count == 0:
        raise ChainFormatError("chain file declares zero blocks")
    reader = stream_reader(data[8:])
    blocks = []
    try:
        for _ in range(count):
            blocks.append(read_block(reader))
    except DecodeError as exc:
        raise ChainFormatError(f"undecodable block data: {exc}") from None
    if not reader.done():
        raise ChainFormatError("trailing bytes after the declared block count")
    return Chain(blocks=tuple(blocks), head_hash=load_head(chain_path, head_path=head_path))


# -- export -------------------------------------------------------------------


def transaction_to_dict(tx: Transaction) -> dict:
    def signature_to_dict(signature: Signature | None) -> dict | None:
        if signature is None:
            return None
        return {"raw": signature.raw.hex(), "signer": signature.signer.hex()}

    return {
        "inputs": [unit_id.hex() for unit_id in tx.inputs],
        "outputs": [
            {"kind": output.kind, "parents": [parent.hex() for parent in output.parents]}
            for output in tx.outputs
        ],
        "sender": tx.sender.hex(),
        "receiver": tx.receiver.hex(),
        "height_hint": tx.height_hint,
        "sender_sig": signature_to_dict(tx.sender_sig),
        "receiver_sig": signature_to_dict(tx.receiver_sig),
    }


def transaction_from_dict(raw: dict) -> Transaction:
    """Inverse of transaction_to_dict; raises ValueError on malformed fields."""

    def signature_from_dict(entry) -> Signature | None:
        if entry is None:
            return None
        return Signature(raw=bytes.fromhex(entry["raw"]), signer=bytes.fromhex(entry["signer"]))

    return Transaction(
        inputs=tuple(UnitId.from_hex(value) for value in raw["inputs"]),
        outputs=tuple(
            OutputSpec(
                kind=entry["kind"],
                parents=tuple(UnitId.from_hex(value) for value in entry.get("parents", [])),
            )
            for entry in raw["outputs"]
        ),
        sender=bytes.fromhex(raw["sender"]),
        receiver=bytes.fromhex(raw["receiver"]),
        height_hint=int(raw["height_hint"]),
        sender_sig=signature_from_dict(raw.get("sender_sig")),
        receiver_sig=signature_from_dict(raw.get("receiver_sig")),
    )


def block_to_dict(block: Block) -> dict:
    return {
        "hash": block_hash(block.header).hex(),
        "prev_hash": block.header.prev_hash.hex(),
        "height": block.header.height,
        "payload_hash": block.header.payload_hash.hex(),
        "timestamp": block.header.timestamp,
        "transactions": [transaction_to_dict(tx) for tx in block.transactions],
        "commit_signatures": [
            {"raw": signature.raw.hex(), "signer": signature.signer.hex()}
            for signature in block.commit_signatures
        ],
    }


def export_jsonl(chain: Chain) -> str:
    """One JSON object per block per line, in chain order."""
    lines = [json.dumps(block_to_dict(block), sort_keys=True) for block in chain.blocks]
    return "\n".join(lines) + "\n"
