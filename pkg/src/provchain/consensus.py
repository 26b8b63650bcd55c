"""Quorum-replicated commits and recovery of damaged replicas.

Resilience comes from copies: a block commits only when enough replicas
independently validate it, and a replica that loses or mangles its copy
re-derives the canonical chain from any surviving quorum.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .encoding import block_hash, payload_hash
from .identity import Directory, NodeIdentity, Signature, sign, verify_signature
from .ledger import check_commit_signatures, verify_chain
from .provenance import UnspentUnitSet, apply_transaction, replay_chain, validate_transaction
from .records import Block, Chain


class InsufficientQuorumError(RuntimeError):
    """A proposed block gathered fewer acknowledgements than the quorum."""


class NoQuorumError(RuntimeError):
    """No head is both claimed by a quorum and backed by an intact copy."""


class ForkError(RuntimeError):
    """Two distinct heads each claim a quorum; impossible unless quorum <= n/2."""


class ValidationDivergenceError(RuntimeError):
    """Honest replicas at the same head disagreed on a proposal."""


class InvalidCanonicalError(ValueError):
    """A chain offered for repair fails verification against its own head."""


class ConfigError(ValueError):
    """Replication settings are unusable."""


@dataclass(frozen=True)
class QuorumConfig:
    """How many replicas exist and how many must agree.

    In "bft" mode the quorum is replica_count - fault_bound and the replica
    count must be at least 3 * fault_bound + 1. In "fraction" mode the quorum
    is ceil(consent_fraction * replica_count) with the fraction strictly
    above one half. Both choices keep any quorum a strict majority, so two
    disjoint quorums can never exist.
    """

    mode: str
    replica_count: int
    fault_bound: int = 0
    consent_fraction: Fraction | None = None

    def __post_init__(self) -> None:
        if self.replica_count < 1:
            raise ConfigError("replica_count must be at least 1")
        if self.mode == "bft":
            if self.fault_bound < 0:
                raise ConfigError("fault_bound must be non-negative")
            if self.replica_count < 3 * self.fault_bound + 1:
                raise ConfigError(
                    f"{self.replica_count} replicas cannot tolerate "
                    f"{self.fault_bound} faults; need at least {3 * self.fault_bound + 1}"
                )
        elif self.mode == "fraction":
            if self.consent_fraction is None:
                raise ConfigError("fraction mode requires consent_fraction")
            if not (Fraction(1, 2) < self.consent_fraction <= 1):
                raise ConfigError("consent_fraction must lie in (1/2, 1]")
        else:
            raise ConfigError(f"unknown mode {self.mode!r}; expected 'bft' or 'fraction'")

    def quorum_size(self) -> int:
        if self.mode == "bft":
            return self.replica_count - self.fault_bound
        return math.ceil(self.consent_fraction * self.replica_count)


def parse_fraction(value) -> Fraction:
    """Exact fraction from a config value: "2/3", "0.75", 0.75, or 1."""
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, int):
        return Fraction(value)
    raise ConfigError(f"cannot read a fraction from {value!r}")


def load_quorum_config(path: Path) -> QuorumConfig:
    """Read replication settings from a TOML file.

    Recognized keys: mode, replica_count, fault_bound, consent_fraction
    (a string like "2/3", or a number).
    """
    with open(path, "rb") as handle:
        raw = tomllib.load(handle)
    try:
        mode = raw.get("mode", "bft")
        replica_count = int(raw["replica_count"])
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]!r}") from None
    fraction = raw.get("consent_fraction")
    return QuorumConfig(
        mode=mode,
        replica_count=replica_count,
        fault_bound=int(raw.get("fault_bound", 0)),
        consent_fraction=parse_fraction(fraction) if fraction is not None else None,
    )


class ReplicaStatus(enum.Enum):
    HONEST = "honest"
    CORRUPTED = "corrupted"
    OFFLINE = "offline"


@dataclass
class Replica:
    """One independent copy of the ledger plus its maintainer's identity.

    The head is stored separately from the block data on purpose: storage
    corruption mangles blocks while the small trusted head survives, which
    is exactly the mismatch verification is meant to expose.
    """

    replica_id: int
    identity: NodeIdentity
    chain: Chain
    head: bytes
    state: UnspentUnitSet
    status: ReplicaStatus = ReplicaStatus.HONEST

    @classmethod
    def from_chain(
        cls, replica_id: int, identity: NodeIdentity, chain: Chain, directory: Directory
    ) -> "Replica":
        return cls(
            replica_id=replica_id,
            identity=identity,
            chain=chain,
            head=chain.head_hash,
            state=replay_chain(chain, directory),
        )

    def validate_proposal(self, block: Block, directory: Directory) -> tuple[bool, str]:
        """Would this replica extend its own copy with the block? Pure check."""
        header = block.header
        if header.prev_hash != self.head:
            return False, "proposal does not extend this replica's head"
        if header.height != len(self.chain.blocks):
            return False, f"expected height {len(self.chain.blocks)}, found {header.height}"
        if not block.transactions:
            return False, "non-genesis block carries no transactions"
        if header.payload_hash != payload_hash(block.transactions):
            return False, "transactions do not hash to the header"
        failure = check_commit_signatures(block, block_hash(header), directory)
        if failure:
            return False, failure
        state = self.state
        for tx in block.transactions:
            result = validate_transaction(state, tx, directory)
            if not result.ok:
                return False, f"{result.code}: {result.detail}"
            if tx.height_hint != header.height:
                return False, f"transaction bound to height {tx.height_hint}"
            try:
                state = apply_transaction(state, tx)
            except ValueError as exc:
                return False, str(exc)
        return True, ""

    def accept_block(self, block: Block) -> None:
        """Extend the local copy; callers must have validated the block."""
        for tx in block.transactions:
            self.state = apply_transaction(self.state, tx)
        self.chain = Chain(
            blocks=self.chain.blocks + (block,), head_hash=block_hash(block.header)
        )
        self.head = self.chain.head_hash


@dataclass(frozen=True)
class CommitCertificate:
    """Proof that a quorum of replicas acknowledged one block hash."""

    block_hash: bytes
    quorum: int
    signatures: tuple[Signature, ...] = field(default=())

    @property
    def ack_count(self) -> int:
        return len({signature.signer for signature in self.signatures})

    def to_dict(self) -> dict:
        return {
            "block_hash": self.block_hash.hex(),
            "quorum": self.quorum,
            "acks": self.ack_count,
            "signers": sorted(signature.signer.hex() for signature in self.signatures),
        }


def verify_certificate(certificate: CommitCertificate, directory: Directory) -> bool:
    """A certificate stands iff a quorum of distinct signers covered the hash."""
    signers = set()
    for signature in certificate.signatures:
        if not verify_signature(directory, signature, certificate.block_hash):
            return False
        signers.add(signature.signer)
    return len(signers) >= certificate.quorum


def propose_block(
    replicas: list[Replica], block: Block, config: QuorumConfig, directory: Directory
) -> CommitCertificate:
    """Offer a block to every replica; commit it only on a quorum of acks.

    Honest replicas already at the block's parent validate independently.
    With enough acknowledgements each acking replica appends and the
    certificate is returned; otherwise nothing changes anywhere.
    """
    quorum = config.quorum_size()
    honest = [replica for replica in replicas if replica.status is ReplicaStatus.HONEST]
    at_tip = [replica for replica in honest if replica.head == block.header.prev_hash]

    acks: list[Replica] = []
    rejections: list[tuple[int, str]] = []
    for replica in at_tip:
        ok, why = replica.validate_proposal(block, directory)
        if ok:
            acks.append(replica)
        else:
            rejections.append((replica.replica_id, why))
    if acks and rejections:
        details = "; ".join(f"replica {rid}: {why}" for rid, why in rejections)
        raise ValidationDivergenceError(
            f"replicas at the same head split on the proposal: {details}"
        )
    if len(acks) < quorum:
        why = rejections[0][1] if rejections else "too few replicas at the proposal's parent"
        raise InsufficientQuorumError(
            f"{len(acks)} acknowledgements, quorum is {quorum}: {why}"
        )

    message = block_hash(block.header)
    signatures = tuple(
        sign(replica.identity, message)
        for replica in sorted(acks, key=lambda replica: replica.replica_id)
    )
    for replica in acks:
        replica.accept_block(block)
    return CommitCertificate(block_hash=message, quorum=quorum, signatures=signatures)


def canonical_chain(
    replicas: list[Replica], config: QuorumConfig, directory: Directory
) -> Chain:
    """Recover the one true chain from whatever replicas still answer.

    A head must be claimed by a full quorum, and at least one replica
    claiming it must hold a copy that verifies end to end against it.
    Claims are cheap; intact bytes are not.
    """
    quorum = config.quorum_size()
    responding = [replica for replica in replicas if replica.status is not ReplicaStatus.OFFLINE]
    votes = Counter(replica.head for replica in responding)
    winners = [head for head, count in votes.items() if count >= quorum]
    if len(winners) > 1:
        raise ForkError("two heads each claim a quorum; replication invariant broken")
    if not winners:
        raise NoQuorumError(
            f"no head reaches the quorum of {quorum} among {len(responding)} responding replicas"
        )
    winner = winners[0]

    candidates = sorted(
        (replica for replica in responding if replica.head == winner),
        key=lambda replica: replica.replica_id,
    )
    for replica in candidates:
        report = verify_chain(replica.chain, winner, directory)
        if report.valid:
            return Chain(blocks=replica.chain.blocks, head_hash=winner)
    raise NoQuorumError(
        "a head has enough claims but no claimant holds a copy that verifies against it"
    )


def repair_replica(replica: Replica, canonical: Chain, directory: Directory) -> None:
    """Overwrite a replica's copy with a canonical chain, re-deriving its state.

    The chain is re-verified here regardless of where it came from; repair
    must never install bytes that do not check out.
    """
    report = verify_chain(canonical, canonical.head_hash, directory)
    if not report.valid:
        raise InvalidCanonicalError(
            f"refusing repair: {report.failed_check} at block {report.failed_index}"
        )
    replica.chain = canonical
    replica.head = canonical.head_hash
    replica.state = replay_chain(canonical, directory)
    replica.status = ReplicaStatus.HONEST
