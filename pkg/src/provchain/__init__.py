"""Tamper-evident supply-chain ledger with unit-level provenance.

Four ideas, layered: every block is welded to its predecessor by hash, so
one trusted head digest vouches for the whole history; every transaction
carries signatures from both counterparties; every exchanged unit is
unique and names its parents, so contamination traces backward and recalls
trace forward; and multiple replicas vote, so a damaged copy is detected
and rebuilt from the surviving quorum.
"""

from .consensus import (
    CommitCertificate,
    ConfigError,
    ForkError,
    InsufficientQuorumError,
    InvalidCanonicalError,
    NoQuorumError,
    QuorumConfig,
    Replica,
    ReplicaStatus,
    ValidationDivergenceError,
    canonical_chain,
    load_quorum_config,
    propose_block,
    repair_replica,
    verify_certificate,
)
from .encoding import (
    DecodeError,
    block_hash,
    canonical_encode,
    decode_block,
    decode_header,
    decode_transaction,
    encode_block,
    encode_header,
    encode_transaction,
    payload_hash,
    transaction_hash,
    transaction_signing_bytes,
)
from .identity import (
    AuditOccurrence,
    AuditReport,
    Directory,
    NodeIdentity,
    Signature,
    UnknownPseudonymError,
    anonymity_audit,
    derive_pseudonym,
    keygen,
    load_seed,
    save_seed,
    sign,
    verify_signature,
)
from .ledger import (
    ChainFormatError,
    EmptyBlockError,
    InvalidTransactionError,
    MissingCommitterError,
    VerificationReport,
    append_block,
    encode_chain,
    export_jsonl,
    genesis_block,
    genesis_chain,
    load_chain,
    load_head,
    save_chain,
    verify_chain,
)
from .provenance import (
    AncestrySubgraph,
    GraphNode,
    InvalidChainError,
    ProvenanceGraph,
    RecallReport,
    RejectReason,
    Unit,
    UnknownUnitError,
    UnspentUnitSet,
    ValidationResult,
    apply_transaction,
    build_provenance_graph,
    recall_set,
    replay_chain,
    trace_back,
    validate_transaction,
)
from .records import (
    Block,
    BlockHeader,
    Chain,
    OutputSpec,
    Transaction,
    UnitId,
    ZERO_HASH,
)
from .simnet import (
    CorruptReplica,
    DropReplica,
    Exchange,
    InputError,
    MalformedScriptError,
    MarkTainted,
    Mint,
    OutputDraft,
    Scenario,
    ScenarioReport,
    contamination_fixture,
    counterfeit_scenario,
    load_scenario,
    parse_scenario,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AncestrySubgraph",
    "AuditOccurrence",
    "AuditReport",
    "Block",
    "BlockHeader",
    "Chain",
    "ChainFormatError",
    "CommitCertificate",
    "ConfigError",
    "CorruptReplica",
    "DecodeError",
    "Directory",
    "DropReplica",
    "EmptyBlockError",
    "Exchange",
    "ForkError",
    "GraphNode",
    "InputError",
    "InsufficientQuorumError",
    "InvalidCanonicalError",
    "InvalidChainError",
    "InvalidTransactionError",
    "MalformedScriptError",
    "MarkTainted",
    "Mint",
    "MissingCommitterError",
    "NoQuorumError",
    "NodeIdentity",
    "OutputDraft",
    "OutputSpec",
    "ProvenanceGraph",
    "QuorumConfig",
    "RecallReport",
    "RejectReason",
    "Replica",
    "ReplicaStatus",
    "Scenario",
    "ScenarioReport",
    "Signature",
    "Transaction",
    "Unit",
    "UnitId",
    "UnknownPseudonymError",
    "UnknownUnitError",
    "UnspentUnitSet",
    "ValidationDivergenceError",
    "ValidationResult",
    "VerificationReport",
    "ZERO_HASH",
    "anonymity_audit",
    "append_block",
    "apply_transaction",
    "block_hash",
    "build_provenance_graph",
    "canonical_chain",
    "canonical_encode",
    "contamination_fixture",
    "counterfeit_scenario",
    "decode_block",
    "decode_header",
    "decode_transaction",
    "derive_pseudonym",
    "encode_block",
    "encode_chain",
    "encode_header",
    "encode_transaction",
    "export_jsonl",
    "genesis_block",
    "genesis_chain",
    "keygen",
    "load_chain",
    "load_head",
    "load_quorum_config",
    "load_scenario",
    "load_seed",
    "parse_scenario",
    "payload_hash",
    "propose_block",
    "recall_set",
    "repair_replica",
    "replay_chain",
    "run_scenario",
    "save_chain",
    "save_seed",
    "sign",
    "trace_back",
    "transaction_hash",
    "transaction_signing_bytes",
    "validate_transaction",
    "verify_certificate",
    "verify_chain",
    "verify_signature",
]
