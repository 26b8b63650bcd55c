"""Deterministic scenario engine: scripted supply chains under injected faults.

A scenario is a seed, a cast of participants, a replica cluster, and an
ordered script of events. Exchanges become blocks through the quorum
protocol; fault events damage replicas or garble human input. After every
event the cluster is swept for damage, detections are logged, and broken
replicas are repaired from the surviving quorum. Simulated time is the
event index, so equal seeds give byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .consensus import (
    InsufficientQuorumError,
    NoQuorumError,
    QuorumConfig,
    Replica,
    ReplicaStatus,
    canonical_chain,
    parse_fraction,
    propose_block,
    repair_replica,
)
from .encoding import (
    DecodeError,
    decode_block,
    encode_block,
    transaction_hash,
    transaction_signing_bytes,
)
from .identity import Directory, NodeIdentity, anonymity_audit, keygen, sign
from .ledger import append_block, encode_chain, genesis_chain, verify_chain
from .provenance import (
    ProvenanceGraph,
    UnspentUnitSet,
    apply_transaction,
    build_provenance_graph,
    recall_set,
    trace_back,
    validate_transaction,
)
from .records import Chain, OutputSpec, Transaction, UnitId

HASH_MISMATCH = "hash_mismatch"
SIGNATURE_FAILURE = "signature_failure"
QUORUM_MINORITY = "quorum_minority"
COUNTERPARTY_REFUSAL = "counterparty_refusal"

MUTATIONS = ("receiver", "output_kind", "height_hint", "drop_input")
STAGES = ("pre_sign", "post_sign")


class MalformedScriptError(ValueError):
    """A scenario script cannot be executed; carries the offending event index."""

    def __init__(self, index: int | None, message: str) -> None:
        where = "script" if index is None else f"event {index}"
        super().__init__(f"{where}: {message}")
        self.index = index


# -- events -------------------------------------------------------------------


@dataclass(frozen=True)
class OutputDraft:
    """One planned output of a scripted exchange, with an optional unit label."""

    kind: str
    parents: tuple[str, ...] = ()
    label: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parents": list(self.parents), "label": self.label}


@dataclass(frozen=True)
class Mint:
    node: str
    kind: str
    count: int
    labels: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "type": "mint",
            "node": self.node,
            "kind": self.kind,
            "count": self.count,
            "labels": list(self.labels),
        }


@dataclass(frozen=True)
class Exchange:
    sender: str
    receiver: str
    inputs: tuple[str, ...]
    outputs: tuple[OutputDraft, ...]

    def to_dict(self) -> dict:
        return {
            "type": "exchange",
            "sender": self.sender,
            "receiver": self.receiver,
            "inputs": list(self.inputs),
            "outputs": [draft.to_dict() for draft in self.outputs],
        }


@dataclass(frozen=True)
class CorruptReplica:
    replica: int
    block: int
    offset: int

    def to_dict(self) -> dict:
        return {
            "type": "corrupt_replica",
            "replica": self.replica,
            "block": self.block,
            "offset": self.offset,
        }


@dataclass(frozen=True)
class DropReplica:
    replica: int

    def to_dict(self) -> dict:
        return {"type": "drop_replica", "replica": self.replica}


@dataclass(frozen=True)
class InputError:
    """A human typo in an authored exchange.

    Mutated before signing, the counterparty sees terms it never agreed to
    and refuses to co-sign. Mutated after both signatures, the stale
    signatures no longer cover the bytes and validation fails instead.
    """

    sender: str
    receiver: str
    inputs: tuple[str, ...]
    outputs: tuple[OutputDraft, ...]
    mutation: str
    stage: str = "pre_sign"

    def to_dict(self) -> dict:
        return {
            "type": "input_error",
            "sender": self.sender,
            "receiver": self.receiver,
            "inputs": list(self.inputs),
            "outputs": [draft.to_dict() for draft in self.outputs],
            "mutation": self.mutation,
            "stage": self.stage,
        }


@dataclass(frozen=True)
class MarkTainted:
    unit: str

    def to_dict(self) -> dict:
        return {"type": "mark_tainted", "unit": self.unit}


ScenarioEvent = Mint | Exchange | CorruptReplica | DropReplica | InputError | MarkTainted


# -- scenario -----------------------------------------------------------------


def derive_identity(seed: int, tag: str) -> NodeIdentity:
    """Stable per-seed identity for a named role or replica slot."""
    material = hashlib.sha256(
        b"provchain.identity/" + seed.to_bytes(8, "big") + b"/" + tag.encode()
    ).digest()
    return keygen(material)


@dataclass(frozen=True)
class Scenario:
    seed: int
    participants: tuple[tuple[str, NodeIdentity], ...]
    script: tuple[ScenarioEvent, ...]
    quorum: QuorumConfig

    @classmethod
    def build(
        cls,
        seed: int,
        participant_labels: list[str] | tuple[str, ...],
        quorum: QuorumConfig,
        script: list[ScenarioEvent] | tuple[ScenarioEvent, ...],
    ) -> "Scenario":
        if not 0 <= seed < 2**64:
            raise MalformedScriptError(None, "seed must fit in 64 bits")
        labels = tuple(participant_labels)
        if not labels:
            raise MalformedScriptError(None, "a scenario needs at least one participant")
        if len(set(labels)) != len(labels):
            raise MalformedScriptError(None, "participant labels must be unique")
        participants = tuple(
            (label, derive_identity(seed, f"participant:{label}")) for label in labels
        )
        return cls(seed=seed, participants=participants, script=tuple(script), quorum=quorum)

    @property
    def participant_labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.participants)

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario.build(seed, self.participant_labels, self.quorum, self.script)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "participants": list(self.participant_labels),
            "quorum": _quorum_to_dict(self.quorum),
            "script": [event.to_dict() for event in self.script],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _quorum_to_dict(config: QuorumConfig) -> dict:
    return {
        "mode": config.mode,
        "replica_count": config.replica_count,
        "fault_bound": config.fault_bound,
        "consent_fraction": str(config.consent_fraction)
        if config.consent_fraction is not None
        else None,
    }


def _quorum_from_dict(raw: dict) -> QuorumConfig:
    fraction = raw.get("consent_fraction")
    return QuorumConfig(
        mode=raw.get("mode", "bft"),
        replica_count=int(raw.get("replica_count", 4)),
        fault_bound=int(raw.get("fault_bound", 0)),
        consent_fraction=parse_fraction(fraction) if fraction is not None else None,
    )


def _drafts_from(index: int, raw_outputs) -> tuple[OutputDraft, ...]:
    drafts = []
    for entry in raw_outputs:
        if not isinstance(entry, dict) or "kind" not in entry:
            raise MalformedScriptError(index, "each output needs at least a kind")
        drafts.append(
            OutputDraft(
                kind=str(entry["kind"]),
                parents=tuple(str(parent) for parent in entry.get("parents", [])),
                label=str(entry["label"]) if entry.get("label") is not None else None,
            )
        )
    return tuple(drafts)


def _event_from_dict(index: int, raw: dict) -> ScenarioEvent:
    if not isinstance(raw, dict) or "type" not in raw:
        raise MalformedScriptError(index, "events must be objects with a type")
    kind = raw["type"]
    try:
        if kind == "mint":
            return Mint(
                node=str(raw["node"]),
                kind=str(raw["kind"]),
                count=int(raw["count"]),
                labels=tuple(str(label) for label in raw.get("labels", [])),
            )
        if kind == "exchange":
            return Exchange(
                sender=str(raw["sender"]),
                receiver=str(raw["receiver"]),
                inputs=tuple(str(label) for label in raw.get("inputs", [])),
                outputs=_drafts_from(index, raw.get("outputs", [])),
            )
        if kind == "corrupt_replica":
            return CorruptReplica(
                replica=int(raw["replica"]), block=int(raw["block"]), offset=int(raw["offset"])
            )
        if kind == "drop_replica":
            return DropReplica(replica=int(raw["replica"]))
        if kind == "input_error":
            mutation = str(raw["mutation"])
            stage = str(raw.get("stage", "pre_sign"))
            if mutation not in MUTATIONS:
                raise MalformedScriptError(index, f"unknown mutation {mutation!r}")
            if stage not in STAGES:
                raise MalformedScriptError(index, f"unknown stage {stage!r}")
            return InputError(
                sender=str(raw["sender"]),
                receiver=str(raw["receiver"]),
                inputs=tuple(str(label) for label in raw.get("inputs", [])),
                outputs=_drafts_from(index, raw.get("outputs", [])),
                mutation=mutation,
                stage=stage,
            )
        if kind == "mark_tainted":
            return MarkTainted(unit=str(raw["unit"]))
    except MalformedScriptError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedScriptError(index, f"bad {kind} event: {exc}") from None
    raise MalformedScriptError(index, f"unknown event type {kind!r}")


def _inferred_labels(script: tuple[ScenarioEvent, ...]) -> list[str]:
    labels: list[str] = []
    for event in script:
        if isinstance(event, Mint):
            mentioned = [event.node]
        elif isinstance(event, (Exchange, InputError)):
            mentioned = [event.sender, event.receiver]
        else:
            continue
        for label in mentioned:
            if label not in labels:
                labels.append(label)
    return labels


def parse_scenario(text: str, *, seed_override: int | None = None) -> Scenario:
    """Read a scenario from JSON: a full object, or a bare list of events.

    A bare event list gets defaults: seed 0, participants inferred from the
    events in first-mention order, and a four-replica cluster tolerating
    one fault.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedScriptError(None, f"not valid JSON: {exc}") from None

    if isinstance(raw, list):
        raw = {"script": raw}
    if not isinstance(raw, dict):
        raise MalformedScriptError(None, "scenario must be a JSON object or event list")

    events = raw.get("script", [])
    if not isinstance(events, list):
        raise MalformedScriptError(None, "script must be a list of events")
    script = tuple(_event_from_dict(index, entry) for index, entry in enumerate(events))

    seed = seed_override if seed_override is not None else int(raw.get("seed", 0))
    labels = raw.get("participants") or _inferred_labels(script)
    if not labels:
        raise MalformedScriptError(None, "no participants given and none inferable")
    try:
        quorum = (
            _quorum_from_dict(raw["quorum"])
            if "quorum" in raw
            else QuorumConfig(mode="bft", replica_count=4, fault_bound=1)
        )
    except ValueError as exc:
        raise MalformedScriptError(None, f"bad quorum settings: {exc}") from None
    return Scenario.build(seed, [str(label) for label in labels], quorum, script)


def load_scenario(path: Path, *, seed_override: int | None = None) -> Scenario:
    return parse_scenario(Path(path).read_text(), seed_override=seed_override)


# -- report -------------------------------------------------------------------


@dataclass
class ScenarioReport:
    """Everything a scenario run produced, serializable deterministically.

    The final chain, directory, and provenance graph ride along as runtime
    handles for callers that keep working with the result; only the plain
    data enters the JSON form.
    """

    seed: int
    quorum: dict
    participants: dict[str, str]
    counters: dict[str, int]
    replica_rows: dict[str, dict]
    canonical_head: str
    converged: bool
    detections: list[dict]
    rejections: list[dict]
    repairs: list[dict]
    tainted: list[dict]
    recall: dict | None
    live_units: list[dict]
    unit_labels: dict[str, str]
    audit: dict
    chain: Chain = field(repr=False)
    directory: Directory = field(repr=False)
    graph: ProvenanceGraph = field(repr=False)

    @property
    def ok(self) -> bool:
        return self.converged and bool(self.audit.get("passed"))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "quorum": self.quorum,
            "participants": self.participants,
            "counters": self.counters,
            "replicas": self.replica_rows,
            "canonical_head": self.canonical_head,
            "converged": self.converged,
            "detections": self.detections,
            "rejections": self.rejections,
            "repairs": self.repairs,
            "tainted": self.tainted,
            "recall": self.recall,
            "live_units": self.live_units,
            "unit_labels": self.unit_labels,
            "anonymity_audit": self.audit,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        counters = self.counters
        lines = [
            f"seed {self.seed}; {counters['events']} events -> "
            f"{counters['blocks']} blocks, {counters['transactions']} transactions, "
            f"{counters['units']} units",
            f"canonical head {self.canonical_head}",
        ]
        for replica_id, row in sorted(self.replica_rows.items(), key=lambda kv: int(kv[0])):
            verified = {True: "verified", False: "BROKEN", None: "unreachable"}[row["verified"]]
            lines.append(
                f"replica {replica_id}: {row['status']}, {verified}, head {row['head'][:16]}"
            )
        lines.append(
            f"faults detected: {len(self.detections)}; repairs: {counters['repaired_replicas']}; "
            f"rejected transactions: {counters['rejected']}"
        )
        if self.recall is not None:
            lines.append(
                f"recall: {self.recall['affected_count']} affected units "
                f"({len(self.recall['still_live'])} live, {len(self.recall['consumed_into'])} consumed)"
            )
        audit = "clean" if self.audit.get("passed") else "LABEL LEAK"
        lines.append(f"anonymity audit: {audit}")
        lines.append(f"converged: {'yes' if self.converged else 'NO'}")
        return "\n".join(lines) + "\n"


# -- engine -------------------------------------------------------------------


class _Engine:
    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.config = scenario.quorum
        self.directory = Directory()
        self.identities: dict[str, NodeIdentity] = {}
        for label, identity in scenario.participants:
            self.identities[label] = identity
            self.directory.register(identity, label=label)
        self.replicas: list[Replica] = []
        chain = genesis_chain()
        for replica_id in range(self.config.replica_count):
            identity = derive_identity(scenario.seed, f"replica:{replica_id}")
            self.directory.register(identity, label=f"replica-{replica_id}")
            self.replicas.append(
                Replica.from_chain(replica_id, identity, chain, self.directory)
            )
        self.chain = chain
        self.state = UnspentUnitSet.empty()
        self.units: dict[str, UnitId] = {}
        self.unit_labels: dict[UnitId, str] = {}
        self.tainted: list[tuple[str, UnitId]] = []
        self.detections: list[dict] = []
        self.rejections: list[dict] = []
        self.repairs: list[dict] = []
        self.counters = {
            "events": len(scenario.script),
            "blocks": 0,
            "transactions": 0,
            "units": 0,
            "repaired_replicas": 0,
            "rejected": 0,
        }

    # -- script plumbing --

    def _participant(self, index: int, label: str) -> NodeIdentity:
        try:
            return self.identities[label]
        except KeyError:
            raise MalformedScriptError(index, f"unknown participant {label!r}") from None

    def _unit(self, index: int, label: str) -> UnitId:
        try:
            return self.units[label]
        except KeyError:
            raise MalformedScriptError(index, f"unit {label!r} does not exist yet") from None

    def _replica(self, index: int, replica_id: int) -> Replica:
        if not 0 <= replica_id < len(self.replicas):
            raise MalformedScriptError(index, f"no replica {replica_id}")
        return self.replicas[replica_id]

    def _detect(self, event: int, kind: str, mechanism: str, *, replica: int | None = None,
                check: str | None = None, block: int | None = None, detail: str = "") -> None:
        self.detections.append(
            {
                "event": event,
                "kind": kind,
                "mechanism": mechanism,
                "replica": replica,
                "check": check,
                "block": block,
                "detail": detail,
            }
        )

    def _reject(self, event: int, code: str, detail: str) -> None:
        self.rejections.append({"event": event, "code": code, "detail": detail})
        self.counters["rejected"] += 1

    # -- transaction building --

    def _draft_outputs(self, index: int, drafts: tuple[OutputDraft, ...]) -> tuple[OutputSpec, ...]:
        specs = []
        for draft in drafts:
            parents = tuple(self._unit(index, label) for label in draft.parents)
            specs.append(OutputSpec(kind=draft.kind, parents=parents))
        return tuple(specs)

    def _intended_exchange(
        self, index: int, sender: str, receiver: str,
        inputs: tuple[str, ...], outputs: tuple[OutputDraft, ...],
    ) -> Transaction:
        sender_id = self._participant(index, sender)
        receiver_id = self._participant(index, receiver)
        return Transaction(
            inputs=tuple(self._unit(index, label) for label in inputs),
            outputs=self._draft_outputs(index, outputs),
            sender=sender_id.pseudonym,
            receiver=receiver_id.pseudonym,
            height_hint=len(self.chain.blocks),
        )

    def _cosign(self, tx: Transaction) -> Transaction:
        message = transaction_signing_bytes(tx)
        sender_id = self._identity_for(tx.sender)
        receiver_id = self._identity_for(tx.receiver)
        return tx.with_signatures(
            sender_sig=sign(sender_id, message), receiver_sig=sign(receiver_id, message)
        )

    def _identity_for(self, pseudonym: bytes) -> NodeIdentity:
        for identity in self.identities.values():
            if identity.pseudonym == pseudonym:
                return identity
        raise KeyError(pseudonym.hex())

    def _commit(self, index: int, tx: Transaction, labels: tuple[str, ...]) -> None:
        """Validate, commit through the quorum, and bind output labels."""
        result = validate_transaction(self.state, tx, self.directory)
        if not result.ok:
            self._reject(index, result.code, result.detail)
            return

        committers = [self._identity_for(tx.sender)]
        if tx.receiver != tx.sender:
            committers.append(self._identity_for(tx.receiver))
        candidate = append_block(
            self.chain, [tx], committers, self.directory, state=self.state, timestamp=index
        )
        block = candidate.blocks[-1]
        try:
            propose_block(self.replicas, block, self.config, self.directory)
        except InsufficientQuorumError as exc:
            self._detect(index, "no_quorum", QUORUM_MINORITY, detail=str(exc))
            return

        self.chain = candidate
        self.state = apply_transaction(self.state, tx)
        self.counters["blocks"] += 1
        self.counters["transactions"] += 1
        tx_hash = transaction_hash(tx)
        for position, label in enumerate(labels):
            unit_id = UnitId(origin_tx=tx_hash, output_index=position)
            if label in self.units:
                raise MalformedScriptError(index, f"unit label {label!r} already bound")
            self.units[label] = unit_id
            self.unit_labels[unit_id] = label
            self.counters["units"] += 1

    def _output_labels(self, index: int, count: int, given: tuple[str, ...]) -> tuple[str, ...]:
        if given and len(given) != count:
            raise MalformedScriptError(
                index, f"{len(given)} labels for {count} outputs"
            )
        return given or tuple(f"e{index}.{position}" for position in range(count))

    # -- event handlers --

    def _run_mint(self, index: int, event: Mint) -> None:
        if event.count < 1:
            raise MalformedScriptError(index, "mint count must be positive")
        node = self._participant(index, event.node)
        tx = Transaction(
            inputs=(),
            outputs=tuple(OutputSpec(kind=event.kind) for _ in range(event.count)),
            sender=node.pseudonym,
            receiver=node.pseudonym,
            height_hint=len(self.chain.blocks),
        )
        labels = self._output_labels(index, event.count, event.labels)
        self._commit(index, self._cosign(tx), labels)

    def _run_exchange(self, index: int, event: Exchange) -> None:
        tx = self._intended_exchange(index, event.sender, event.receiver, event.inputs, event.outputs)
        labels = self._output_labels(
            index, len(event.outputs), tuple(draft.label for draft in event.outputs if draft.label)
        )
        self._commit(index, self._cosign(tx), labels)

    def _mutate(self, index: int, event: InputError, tx: Transaction) -> Transaction:
        if event.mutation == "receiver":
            labels = self.scenario.participant_labels
            if len(labels) < 2:
                raise MalformedScriptError(index, "receiver mutation needs two participants")
            slot = labels.index(event.receiver)
            wrong = self._participant(index, labels[(slot + 1) % len(labels)])
            return Transaction(
                inputs=tx.inputs, outputs=tx.outputs, sender=tx.sender,
                receiver=wrong.pseudonym, height_hint=tx.height_hint,
                sender_sig=tx.sender_sig, receiver_sig=tx.receiver_sig,
            )
        if event.mutation == "output_kind":
            if not tx.outputs:
                raise MalformedScriptError(index, "output_kind mutation needs an output")
            first = tx.outputs[0]
            outputs = (OutputSpec(kind=first.kind + "-typo", parents=first.parents),) + tx.outputs[1:]
            return Transaction(
                inputs=tx.inputs, outputs=outputs, sender=tx.sender, receiver=tx.receiver,
                height_hint=tx.height_hint, sender_sig=tx.sender_sig, receiver_sig=tx.receiver_sig,
            )
        if event.mutation == "height_hint":
            return Transaction(
                inputs=tx.inputs, outputs=tx.outputs, sender=tx.sender, receiver=tx.receiver,
                height_hint=tx.height_hint + 1, sender_sig=tx.sender_sig,
                receiver_sig=tx.receiver_sig,
            )
        if event.mutation == "drop_input":
            if not tx.inputs:
                raise MalformedScriptError(index, "drop_input mutation needs an input")
            return Transaction(
                inputs=tx.inputs[:-1], outputs=tx.outputs, sender=tx.sender,
                receiver=tx.receiver, height_hint=tx.height_hint,
                sender_sig=tx.sender_sig, receiver_sig=tx.receiver_sig,
            )
        raise MalformedScriptError(index, f"unknown mutation {event.mutation!r}")

    def _run_input_error(self, index: int, event: InputError) -> None:
        intended = self._intended_exchange(
            index, event.sender, event.receiver, event.inputs, event.outputs
        )
        if event.stage == "pre_sign":
            garbled = self._mutate(index, event, intended)
            if transaction_signing_bytes(garbled) == transaction_signing_bytes(intended):
                raise MalformedScriptError(index, "mutation left the transaction unchanged")
            self._detect(
                index, "input_error", COUNTERPARTY_REFUSAL,
                detail=f"{event.mutation}: counterparty terms differ from the agreed exchange",
            )
            self._reject(index, "CounterpartyRefused", event.mutation)
            return

        if event.mutation == "drop_input":
            raise MalformedScriptError(
                index, "drop_input reshapes the transaction; model it pre_sign"
            )
        signed = self._cosign(intended)
        garbled = self._mutate(index, event, signed)
        result = validate_transaction(self.state, garbled, self.directory)
        if result.ok:
            raise AssertionError("a post-signing mutation escaped signature coverage")
        self._detect(
            index, "input_error", SIGNATURE_FAILURE,
            detail=f"{event.mutation}: {result.code}",
        )
        self._reject(index, result.code, result.detail)

    def _run_corrupt(self, index: int, event: CorruptReplica) -> None:
        replica = self._replica(index, event.replica)
        if replica.status is ReplicaStatus.OFFLINE:
            raise MalformedScriptError(index, f"replica {event.replica} is offline")
        blocks = replica.chain.blocks
        if not 0 <= event.block < len(blocks):
            raise MalformedScriptError(
                index, f"replica {event.replica} has no block {event.block}"
            )
        damaged = _flip_one_byte(blocks[event.block], event.offset)
        replaced = blocks[: event.block] + (damaged,) + blocks[event.block + 1 :]
        replica.chain = Chain(blocks=replaced, head_hash=replica.chain.head_hash)
        replica.status = ReplicaStatus.CORRUPTED

    def _run_drop(self, index: int, event: DropReplica) -> None:
        replica = self._replica(index, event.replica)
        replica.status = ReplicaStatus.OFFLINE
        self._detect(
            index, "drop_replica", QUORUM_MINORITY, replica=event.replica,
            detail="replica stopped answering",
        )

    def _run_mark_tainted(self, index: int, event: MarkTainted) -> None:
        self.tainted.append((event.unit, self._unit(index, event.unit)))

    # -- sweep and repair --

    def _sweep(self, index: int) -> None:
        suspect = False
        for replica in self.replicas:
            if replica.status is ReplicaStatus.OFFLINE:
                continue
            report = verify_chain(replica.chain, replica.head, self.directory)
            if not report.valid:
                mechanism = (
                    SIGNATURE_FAILURE
                    if report.failed_check == "commit_signature"
                    else HASH_MISMATCH
                )
                self._detect(
                    index, "replica_fault", mechanism, replica=replica.replica_id,
                    check=report.failed_check, block=report.failed_index,
                    detail=report.detail,
                )
                suspect = True
        heads = {
            replica.head for replica in self.replicas
            if replica.status is not ReplicaStatus.OFFLINE
        }
        if len(heads) > 1:
            suspect = True
        if not suspect:
            return

        try:
            canonical = canonical_chain(self.replicas, self.config, self.directory)
        except NoQuorumError as exc:
            self._detect(index, "no_quorum", QUORUM_MINORITY, detail=str(exc))
            return
        for replica in self.replicas:
            if replica.status is ReplicaStatus.OFFLINE:
                continue
            if replica.status is ReplicaStatus.HONEST and replica.head == canonical.head_hash:
                continue
            if replica.status is ReplicaStatus.HONEST:
                self._detect(
                    index, "replica_fault", QUORUM_MINORITY, replica=replica.replica_id,
                    detail="head differs from the quorum head",
                )
            repair_replica(replica, canonical, self.directory)
            self.repairs.append({"event": index, "replica": replica.replica_id})
            self.counters["repaired_replicas"] += 1

    # -- run --

    def run(self) -> ScenarioReport:
        handlers = {
            Mint: self._run_mint,
            Exchange: self._run_exchange,
            InputError: self._run_input_error,
            CorruptReplica: self._run_corrupt,
            DropReplica: self._run_drop,
            MarkTainted: self._run_mark_tainted,
        }
        for index, event in enumerate(self.scenario.script):
            handler = handlers.get(type(event))
            if handler is None:
                raise MalformedScriptError(index, f"unhandled event {type(event).__name__}")
            handler(index, event)
            self._sweep(index)
        return self._report()

    def _report(self) -> ScenarioReport:
        replica_rows: dict[str, dict] = {}
        online_heads = set()
        converged = True
        for replica in self.replicas:
            if replica.status is ReplicaStatus.OFFLINE:
                verified = None
            else:
                verified = verify_chain(replica.chain, replica.head, self.directory).valid
                online_heads.add(replica.head)
                if not verified or replica.head != self.chain.head_hash:
                    converged = False
            replica_rows[str(replica.replica_id)] = {
                "head": replica.head.hex(),
                "status": replica.status.value,
                "verified": verified,
            }
        if len(online_heads) > 1:
            converged = False

        graph = build_provenance_graph(self.chain, self.directory)
        recall = None
        if self.tainted:
            recall = recall_set(graph, [unit_id for _, unit_id in self.tainted]).to_dict()

        live_units = []
        for unit_id, unit in sorted(self.state.units().items(), key=lambda kv: kv[0].hex()):
            ancestry = trace_back(graph, unit_id)
            roots = sorted(
                node.unit.id.hex() for node in ancestry.entries if node.unit.is_minted
            )
            live_units.append(
                {
                    "unit": unit_id.hex(),
                    "label": self.unit_labels.get(unit_id),
                    "kind": unit.kind,
                    "owner": unit.owner.hex(),
                    "mint_roots": roots,
                    "root_owners": sorted(owner.hex() for owner in ancestry.root_owners()),
                }
            )

        audit = anonymity_audit(encode_chain(self.chain), self.directory)
        return ScenarioReport(
            seed=self.scenario.seed,
            quorum=_quorum_to_dict(self.config),
            participants={
                label: identity.pseudonym.hex() for label, identity in self.scenario.participants
            },
            counters=dict(self.counters),
            replica_rows=replica_rows,
            canonical_head=self.chain.head_hash.hex(),
            converged=converged,
            detections=list(self.detections),
            rejections=list(self.rejections),
            repairs=list(self.repairs),
            tainted=[{"label": label, "unit": unit_id.hex()} for label, unit_id in self.tainted],
            recall=recall,
            live_units=live_units,
            unit_labels={label: unit_id.hex() for label, unit_id in self.units.items()},
            audit=audit.to_dict(),
            chain=self.chain,
            directory=self.directory,
            graph=graph,
        )


def _flip_one_byte(block, offset: int):
    """Damage a block's stored bytes while keeping them decodable.

    Flips the low bit at the given offset; if the result no longer decodes,
    walks forward byte by byte until it does. Every block has flippable
    bytes inside its fixed-width header, so the walk always terminates.
    """
    data = bytearray(encode_block(block))
    start = offset % len(data)
    for step in range(len(data)):
        position = (start + step) % len(data)
        data[position] ^= 0x01
        try:
            return decode_block(bytes(data))
        except (DecodeError, ValueError):
            data[position] ^= 0x01
    raise AssertionError("no decodable single-byte corruption exists")


def run_scenario(scenario: Scenario) -> ScenarioReport:
    """Execute a script deterministically and return the full report."""
    return _Engine(scenario).run()


# -- canned scenarios ----------------------------------------------------------


def contamination_fixture() -> Scenario:
    """Four-firm chain where two of four raw lots are mishandled in processing.

    A supplier mints four raw lots (plus two control lots later); a
    processor turns the four into intermediates, two of which are
    contaminated; each retailer receives a product mixing one contaminated
    and one clean intermediate, and one control product has clean-only
    ancestry. Marking the two bad intermediates must recall exactly the two
    intermediates and the two mixed products, never the control.
    """
    script = (
        Mint(node="supplier", kind="raw-lot", count=4,
             labels=("lot-1", "lot-2", "lot-3", "lot-4")),
        Exchange(
            sender="supplier", receiver="processor",
            inputs=("lot-1", "lot-2", "lot-3", "lot-4"),
            outputs=(
                OutputDraft(kind="raw-lot", parents=("lot-1",), label="custody-1"),
                OutputDraft(kind="raw-lot", parents=("lot-2",), label="custody-2"),
                OutputDraft(kind="raw-lot", parents=("lot-3",), label="custody-3"),
                OutputDraft(kind="raw-lot", parents=("lot-4",), label="custody-4"),
            ),
        ),
        Exchange(
            sender="processor", receiver="processor",
            inputs=("custody-1", "custody-2", "custody-3", "custody-4"),
            outputs=(
                OutputDraft(kind="intermediate", parents=("custody-1",), label="batch-a"),
                OutputDraft(kind="intermediate", parents=("custody-2",), label="batch-b"),
                OutputDraft(kind="intermediate", parents=("custody-3",), label="batch-c"),
                OutputDraft(kind="intermediate", parents=("custody-4",), label="batch-d"),
            ),
        ),
        Exchange(
            sender="processor", receiver="retailer-north",
            inputs=("batch-a", "batch-c"),
            outputs=(
                OutputDraft(kind="product", parents=("batch-a", "batch-c"), label="product-north"),
            ),
        ),
        Exchange(
            sender="processor", receiver="retailer-south",
            inputs=("batch-b", "batch-d"),
            outputs=(
                OutputDraft(kind="product", parents=("batch-b", "batch-d"), label="product-south"),
            ),
        ),
        Mint(node="supplier", kind="raw-lot", count=2, labels=("lot-5", "lot-6")),
        Exchange(
            sender="supplier", receiver="processor",
            inputs=("lot-5", "lot-6"),
            outputs=(
                OutputDraft(kind="raw-lot", parents=("lot-5",), label="custody-5"),
                OutputDraft(kind="raw-lot", parents=("lot-6",), label="custody-6"),
            ),
        ),
        Exchange(
            sender="processor", receiver="retailer-south",
            inputs=("custody-5", "custody-6"),
            outputs=(
                OutputDraft(
                    kind="product", parents=("custody-5", "custody-6"), label="product-control"
                ),
            ),
        ),
        MarkTainted(unit="batch-a"),
        MarkTainted(unit="batch-b"),
    )
    return Scenario.build(
        seed=2718281828,
        participant_labels=["supplier", "processor", "retailer-north", "retailer-south"],
        quorum=QuorumConfig(mode="bft", replica_count=4, fault_bound=1),
        script=script,
    )


def counterfeit_scenario() -> Scenario:
    """A counterfeiter copies a brand's kind label and tries to spend its stock.

    The forged spend dies on ownership. The look-alike mint is accepted, as
    any mint is, but its ancestry bottoms out at the attacker's pseudonym:
    no path reaches the brand's mint roots, and that disjointness is the
    detection signal a buyer checks.
    """
    script = (
        Mint(node="brand", kind="designer-handbag", count=2, labels=("auth-1", "auth-2")),
        Exchange(
            sender="brand", receiver="distributor",
            inputs=("auth-1",),
            outputs=(
                OutputDraft(kind="designer-handbag", parents=("auth-1",), label="retail-1"),
            ),
        ),
        Mint(node="attacker", kind="designer-handbag", count=1, labels=("fake-1",)),
        Exchange(
            sender="attacker", receiver="distributor",
            inputs=("auth-2",),
            outputs=(
                OutputDraft(kind="designer-handbag", parents=("auth-2",), label="stolen-1"),
            ),
        ),
    )
    return Scenario.build(
        seed=1414213562,
        participant_labels=["brand", "distributor", "attacker"],
        quorum=QuorumConfig(mode="bft", replica_count=4, fault_bound=1),
        script=script,
    )
