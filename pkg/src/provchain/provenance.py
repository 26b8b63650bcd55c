"""Unique-unit provenance: validation, live-unit state, and recall tracing.

Every exchanged unit is unique and carries explicit parentage, so the
history of any finished product is a navigable DAG. The unspent-unit set
is always the fold of every committed transaction from genesis; tracing
ancestors answers "where did this come from", tracing descendants answers
"what must we recall".
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

from .encoding import block_hash, payload_hash, transaction_hash, transaction_signing_bytes
from .identity import Directory, UnknownPseudonymError, verify_signature
from .records import ZERO_HASH, Chain, Transaction, UnitId


class InvalidChainError(ValueError):
    """Chain fails structural verification or replays to an invalid state."""


class UnknownUnitError(KeyError):
    """Unit id does not appear in the graph or state being queried."""


class RejectReason(enum.Enum):
    """Why a transaction was refused. Values are the stable wire-level codes."""

    UNKNOWN_INPUT = "UnknownInput"
    NOT_OWNER = "NotOwner"
    BAD_SENDER_SIG = "BadSenderSig"
    BAD_RECEIVER_SIG = "BadReceiverSig"
    PARENT_NOT_IN_INPUTS = "ParentNotInInputs"
    UNCONSUMED_INPUT = "UnconsumedInput"
    BAD_MINT = "BadMint"


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    reason: RejectReason | None = None
    detail: str = ""

    @classmethod
    def accept(cls) -> "ValidationResult":
        return cls(ok=True)

    @classmethod
    def reject(cls, reason: RejectReason, detail: str = "") -> "ValidationResult":
        return cls(ok=False, reason=reason, detail=detail)

    @property
    def code(self) -> str | None:
        return self.reason.value if self.reason else None


@dataclass(frozen=True)
class Unit:
    """A live, uniquely identified exchange unit and where it came from."""

    id: UnitId
    kind: str
    owner: bytes
    parents: tuple[UnitId, ...]

    @property
    def is_minted(self) -> bool:
        return not self.parents


class UnspentUnitSet:
    """The live-unit ledger state: every currently unconsumed unit by id."""

    __slots__ = ("_units",)

    def __init__(self, units: dict[UnitId, Unit] | None = None) -> None:
        self._units: dict[UnitId, Unit] = dict(units) if units else {}

    @classmethod
    def empty(cls) -> "UnspentUnitSet":
        return cls()

    def __contains__(self, unit_id: UnitId) -> bool:
        return unit_id in self._units

    def __len__(self) -> int:
        return len(self._units)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UnspentUnitSet):
            return NotImplemented
        return self._units == other._units

    def get(self, unit_id: UnitId) -> Unit | None:
        return self._units.get(unit_id)

    def units(self) -> dict[UnitId, Unit]:
        return dict(self._units)

    def owned_by(self, pseudonym: bytes) -> list[Unit]:
        return [unit for unit in self._units.values() if unit.owner == pseudonym]


def validate_transaction(
    state: UnspentUnitSet, tx: Transaction, directory: Directory
) -> ValidationResult:
    """Accept iff the transaction is a well-formed, dually signed spend of live units.

    Checks run in a fixed order so rejections are deterministic: mint shape,
    input existence, ownership, sender signature, receiver signature, parent
    subsets, full consumption.
    """
    if tx.is_mint:
        if tx.sender != tx.receiver:
            return ValidationResult.reject(
                RejectReason.BAD_MINT, "mint must originate and receive at the same pseudonym"
            )
        if not tx.outputs:
            return ValidationResult.reject(RejectReason.BAD_MINT, "mint declares no outputs")

    for unit_id in tx.inputs:
        if unit_id not in state:
            return ValidationResult.reject(RejectReason.UNKNOWN_INPUT, unit_id.hex())
    for unit_id in tx.inputs:
        owner = state.get(unit_id).owner
        if owner != tx.sender:
            return ValidationResult.reject(
                RejectReason.NOT_OWNER,
                f"input {unit_id.hex()} is owned by {owner.hex()}, not the sender",
            )

    message = transaction_signing_bytes(tx)
    failure = _check_party_signature(tx.sender_sig, tx.sender, message, directory, "sender")
    if failure:
        return ValidationResult.reject(RejectReason.BAD_SENDER_SIG, failure)
    failure = _check_party_signature(tx.receiver_sig, tx.receiver, message, directory, "receiver")
    if failure:
        return ValidationResult.reject(RejectReason.BAD_RECEIVER_SIG, failure)

    declared = set(tx.inputs)
    used: set[UnitId] = set()
    for index, output in enumerate(tx.outputs):
        for parent in output.parents:
            if parent not in declared:
                return ValidationResult.reject(
                    RejectReason.PARENT_NOT_IN_INPUTS,
                    f"output {index} claims parent {parent.hex()} outside the inputs",
                )
            used.add(parent)
    if used != declared:
        unused = sorted(unit.hex() for unit in declared - used)
        return ValidationResult.reject(
            RejectReason.UNCONSUMED_INPUT,
            f"inputs not accounted for by any output: {', '.join(unused)}",
        )

    return ValidationResult.accept()


def _check_party_signature(sig, party: bytes, message: bytes, directory: Directory, role: str) -> str | None:
    if sig is None:
        return f"{role} signature missing"
    if sig.signer != party:
        return f"{role} signature signed by {sig.signer.hex()}, not the {role}"
    try:
        if not verify_signature(directory, sig, message):
            return f"{role} signature does not verify"
    except UnknownPseudonymError:
        return f"{role} pseudonym not registered in the directory"
    return None


def apply_transaction(state: UnspentUnitSet, tx: Transaction) -> UnspentUnitSet:
    """Pure state transition: inputs leave the live set, declared outputs join it.

    Callers must have validated the transaction first; a unit-id collision
    here means that precondition was broken.
    """
    units = state.units()
    for unit_id in tx.inputs:
        del units[unit_id]
    tx_hash = transaction_hash(tx)
    for index, output in enumerate(tx.outputs):
        unit_id = UnitId(origin_tx=tx_hash, output_index=index)
        if unit_id in units:
            raise ValueError(f"unit id collision for {unit_id.hex()}")
        units[unit_id] = Unit(
            id=unit_id, kind=output.kind, owner=tx.receiver, parents=output.parents
        )
    return UnspentUnitSet(units)


# -- chain replay -------------------------------------------------------------


def _check_linkage(chain: Chain) -> None:
    """Structural sanity for a chain about to be replayed: hashes, heights, head."""
    for index, block in enumerate(chain.blocks):
        header = block.header
        if header.height != index:
            raise InvalidChainError(f"block {index} carries height {header.height}")
        expected_prev = ZERO_HASH if index == 0 else block_hash(chain.blocks[index - 1].header)
        if header.prev_hash != expected_prev:
            raise InvalidChainError(f"block {index} does not link to its predecessor")
        if header.payload_hash != payload_hash(block.transactions):
            raise InvalidChainError(f"block {index} payload hash mismatch")
    if chain.head_hash != block_hash(chain.blocks[-1].header):
        raise InvalidChainError("chain head hash does not match the last block")


@dataclass(frozen=True)
class GraphNode:
    """One unit in the provenance DAG with its production and consumption facts."""

    unit: Unit
    height: int
    consumed_by: bytes | None

    @property
    def live(self) -> bool:
        return self.consumed_by is None

    def to_dict(self) -> dict:
        return {
            "unit": self.unit.id.hex(),
            "kind": self.unit.kind,
            "owner": self.unit.owner.hex(),
            "parents": [parent.hex() for parent in self.unit.parents],
            "producing_tx": self.unit.id.origin_tx.hex(),
            "height": self.height,
            "live": self.live,
            "consumed_by": self.consumed_by.hex() if self.consumed_by else None,
        }


class ProvenanceGraph:
    """DAG over every unit ever produced; edges run parent -> child."""

    def __init__(
        self,
        nodes: dict[UnitId, GraphNode],
        children: dict[UnitId, tuple[UnitId, ...]],
    ) -> None:
        self._nodes = nodes
        self._children = children

    def __contains__(self, unit_id: UnitId) -> bool:
        return unit_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def num_edges(self) -> int:
        return sum(len(kids) for kids in self._children.values())

    def node(self, unit_id: UnitId) -> GraphNode:
        try:
            return self._nodes[unit_id]
        except KeyError:
            raise UnknownUnitError(unit_id.hex()) from None

    def nodes(self) -> dict[UnitId, GraphNode]:
        return dict(self._nodes)

    def children(self, unit_id: UnitId) -> tuple[UnitId, ...]:
        return self._children.get(unit_id, ())

    def mint_roots(self) -> list[UnitId]:
        """Units with no parents: the raw-material entry points of the graph."""
        return [unit_id for unit_id, node in self._nodes.items() if node.unit.is_minted]

    def to_dot(self, highlight: frozenset[UnitId] | set[UnitId] = frozenset()) -> str:
        """DOT dump for visualization; highlighted units render filled."""
        lines = ["digraph provenance {", "  rankdir=BT;"]
        for unit_id, node in self._nodes.items():
            name = unit_id.hex()[:12]
            label = f"{node.unit.kind}\\nh={node.height}"
            style = ' style=filled fillcolor="/set19/3"' if unit_id in highlight else ""
            lines.append(f'  "{name}" [label="{label}"{style}];')
        for parent, kids in self._children.items():
            for child in kids:
                lines.append(f'  "{parent.hex()[:12]}" -> "{child.hex()[:12]}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _fold_chain(chain: Chain, directory: Directory) -> tuple[UnspentUnitSet, ProvenanceGraph]:
    """Replay all transactions from genesis, validating each against the running state."""
    state = UnspentUnitSet.empty()
    produced_heights: dict[UnitId, int] = {}
    consumed_by: dict[UnitId, bytes] = {}
    children: dict[UnitId, list[UnitId]] = {}
    history: dict[UnitId, Unit] = {}

    for block in chain.blocks:
        height = block.header.height
        for tx in block.transactions:
            result = validate_transaction(state, tx, directory)
            if not result.ok:
                raise InvalidChainError(f"block {height}: {result.code}: {result.detail}")
            if tx.height_hint != height:
                raise InvalidChainError(
                    f"block {height}: transaction bound to height {tx.height_hint}"
                )
            tx_hash = transaction_hash(tx)
            for unit_id in tx.inputs:
                consumed_by[unit_id] = tx_hash
            state = apply_transaction(state, tx)
            for index, output in enumerate(tx.outputs):
                unit_id = UnitId(origin_tx=tx_hash, output_index=index)
                if unit_id in history:
                    raise InvalidChainError(f"block {height}: duplicate unit id {unit_id.hex()}")
                history[unit_id] = state.get(unit_id)
                produced_heights[unit_id] = height
                for parent in output.parents:
                    children.setdefault(parent, []).append(unit_id)

    nodes = {
        unit_id: GraphNode(
            unit=unit, height=produced_heights[unit_id], consumed_by=consumed_by.get(unit_id)
        )
        for unit_id, unit in history.items()
    }
    frozen_children = {parent: tuple(kids) for parent, kids in children.items()}
    return state, ProvenanceGraph(nodes, frozen_children)


def replay_chain(chain: Chain, directory: Directory) -> UnspentUnitSet:
    """Recompute the live-unit set as the fold of the whole chain."""
    _check_linkage(chain)
    state, _ = _fold_chain(chain, directory)
    return state


def build_provenance_graph(chain: Chain, directory: Directory) -> ProvenanceGraph:
    """Build the full unit DAG for a chain, rejecting anything that does not replay."""
    _check_linkage(chain)
    _, graph = _fold_chain(chain, directory)
    return graph


# -- tracing ------------------------------------------------------------------


@dataclass(frozen=True)
class AncestrySubgraph:
    """The ancestor closure of one unit, ordered by chain height."""

    target: UnitId
    entries: tuple[GraphNode, ...]
    edges: tuple[tuple[UnitId, UnitId], ...]

    def unit_ids(self) -> set[UnitId]:
        return {node.unit.id for node in self.entries}

    def producing_txs(self) -> set[bytes]:
        return {node.unit.id.origin_tx for node in self.entries}

    def root_owners(self) -> set[bytes]:
        """Owners of the minted units this ancestry bottoms out at."""
        return {node.unit.owner for node in self.entries if node.unit.is_minted}

    def to_dict(self) -> dict:
        return {
            "target": self.target.hex(),
            "units": [node.to_dict() for node in self.entries],
            "edges": [[parent.hex(), child.hex()] for parent, child in self.edges],
        }


def trace_back(graph: ProvenanceGraph, unit_id: UnitId) -> AncestrySubgraph:
    """Everything upstream of a unit, the unit itself included."""
    closure = _closure(graph, [unit_id], lambda node_id: graph.node(node_id).unit.parents)
    entries = _sorted_nodes(graph, closure)
    edges = [
        (parent, node.unit.id)
        for node in entries
        for parent in node.unit.parents
        if parent in closure
    ]
    return AncestrySubgraph(target=unit_id, entries=entries, edges=tuple(edges))


@dataclass(frozen=True)
class RecallReport:
    """Descendant closure of a tainted set, split into live and consumed units."""

    tainted: tuple[UnitId, ...]
    affected: tuple[GraphNode, ...]
    live: tuple[UnitId, ...]
    consumed: tuple[UnitId, ...]

    def unit_ids(self) -> set[UnitId]:
        return {node.unit.id for node in self.affected}

    def to_dict(self) -> dict:
        return {
            "tainted_roots": [unit.hex() for unit in self.tainted],
            "affected": [node.to_dict() for node in self.affected],
            "still_live": [unit.hex() for unit in self.live],
            "consumed_into": [unit.hex() for unit in self.consumed],
            "affected_count": len(self.affected),
        }


def recall_set(graph: ProvenanceGraph, tainted: list[UnitId]) -> RecallReport:
    """Every unit with a tainted ancestor (the tainted units themselves included).

    Units without a tainted ancestor are never recalled; precision is the
    point of keeping parentage explicit.
    """
    closure = _closure(graph, tainted, graph.children)
    affected = _sorted_nodes(graph, closure)
    live = tuple(node.unit.id for node in affected if node.live)
    consumed = tuple(node.unit.id for node in affected if not node.live)
    return RecallReport(
        tainted=tuple(tainted), affected=affected, live=live, consumed=consumed
    )


def _closure(graph: ProvenanceGraph, roots: list[UnitId], neighbors) -> set[UnitId]:
    for root in roots:
        if root not in graph:
            raise UnknownUnitError(root.hex())
    seen: set[UnitId] = set()
    queue = deque(roots)
    while queue:
        current = queue.popleft()
        if current in seen:
            continue
        seen.add(current)
        queue.extend(neighbors(current))
    return seen


def _sorted_nodes(graph: ProvenanceGraph, unit_ids: set[UnitId]) -> tuple[GraphNode, ...]:
    nodes = [graph.node(unit_id) for unit_id in unit_ids]
    nodes.sort(key=lambda node: (node.height, node.unit.id.hex()))
    return tuple(nodes)
