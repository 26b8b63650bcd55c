"""Shared test helpers: deterministic identities and random supply-chain histories.

The history builder keeps its own adjacency and liveness bookkeeping while
it constructs each chain, so tests can compare library answers against
records that never passed through the code under test.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import pytest

from provchain import (
    Chain,
    Directory,
    NodeIdentity,
    OutputSpec,
    Transaction,
    UnitId,
    UnspentUnitSet,
    append_block,
    apply_transaction,
    genesis_chain,
    keygen,
    sign,
    transaction_hash,
    transaction_signing_bytes,
)

guarantee_lines: list[str] = []


def pytest_runtest_logreport(report):
    if report.failed and report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.rsplit("::", 1)[-1]
        guarantee_lines.append(f"FAIL {name}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if guarantee_lines:
        terminalreporter.section("top-level guarantees")
        for line in guarantee_lines:
            terminalreporter.write_line(line)


FIRM_LABELS = [
    "Acme Foods",
    "Bolt Freight",
    "Cascade Mills",
    "Delta Packing",
    "Evergreen Farms",
    "Fulton Textiles",
    "Granite Metals",
    "Harbor Cold Storage",
    "Ironwood Lumber",
    "Juniper Organics",
    "Keystone Chemicals",
    "Lakeside Canning",
    "Meridian Plastics",
    "Northgate Dairy",
    "Orchard Valley Co-op",
    "Pinnacle Electronics",
    "Quarry Stoneworks",
    "Redwood Apparel",
    "Summit Beverages",
    "Tidewater Seafood",
    "Union Foundry",
    "Vertex Pharma",
]

UNIT_KINDS = [
    "raw-lot",
    "ingot",
    "fabric-roll",
    "subassembly",
    "carton",
    "pallet",
    "retail-pack",
]


def make_identity(rng: random.Random) -> NodeIdentity:
    return keygen(rng.randbytes(32))


def cosigned(tx: Transaction, by: dict[bytes, NodeIdentity]) -> Transaction:
    """Attach both counterparty signatures using the identity lookup."""
    message = transaction_signing_bytes(tx)
    return tx.with_signatures(
        sender_sig=sign(by[tx.sender], message),
        receiver_sig=sign(by[tx.receiver], message),
    )


@dataclass
class History:
    """A committed chain plus construction-time ground truth about its units."""

    chain: Chain
    directory: Directory
    identities: dict[bytes, NodeIdentity]
    state: UnspentUnitSet
    parents: dict[UnitId, tuple[UnitId, ...]] = field(default_factory=dict)
    children: dict[UnitId, list[UnitId]] = field(default_factory=dict)
    live: set[UnitId] = field(default_factory=set)
    owner: dict[UnitId, bytes] = field(default_factory=dict)
    height_of: dict[UnitId, int] = field(default_factory=dict)
    consumed: dict[UnitId, bytes] = field(default_factory=dict)

    def commit(self, tx: Transaction, timestamp: int | None = None) -> None:
        committers = {tx.sender: self.identities[tx.sender]}
        committers[tx.receiver] = self.identities[tx.receiver]
        self.chain = append_block(
            self.chain,
            [tx],
            list(committers.values()),
            self.directory,
            state=self.state,
            timestamp=timestamp,
        )
        height = self.chain.height
        tx_hash = transaction_hash(tx)
        for unit_id in tx.inputs:
            self.live.discard(unit_id)
            self.consumed[unit_id] = tx_hash
        self.state = apply_transaction(self.state, tx)
        for index, output in enumerate(tx.outputs):
            unit_id = UnitId(origin_tx=tx_hash, output_index=index)
            self.parents[unit_id] = output.parents
            for parent in output.parents:
                self.children.setdefault(parent, []).append(unit_id)
            self.live.add(unit_id)
            self.owner[unit_id] = tx.receiver
            self.height_of[unit_id] = height

    def signed(self, tx: Transaction) -> Transaction:
        return cosigned(tx, self.identities)

    def units_of(self, pseudonym: bytes) -> list[UnitId]:
        return sorted(
            (unit for unit in self.live if self.owner[unit] == pseudonym),
            key=lambda unit: unit.hex(),
        )


def build_history(
    rng: random.Random,
    *,
    parties: int = 4,
    max_units: int = 60,
    max_blocks: int = 40,
    label_offset: int = 0,
) -> History:
    """Grow a random but always-valid supply chain, one transaction per block."""
    directory = Directory()
    identities: dict[bytes, NodeIdentity] = {}
    labels = FIRM_LABELS[label_offset:]
    for index in range(parties):
        identity = make_identity(rng)
        identities[identity.pseudonym] = identity
        directory.register(identity, label=labels[index % len(labels)])
    history = History(
        chain=genesis_chain(),
        directory=directory,
        identities=identities,
        state=UnspentUnitSet.empty(),
    )
    pseudonyms = sorted(identities)

    made = 0
    while history.chain.height < max_blocks and made < max_units:
        holders = sorted({history.owner[unit] for unit in history.live})
        do_mint = not holders or rng.random() < 0.35
        height = history.chain.height + 1
        if do_mint:
            node = rng.choice(pseudonyms)
            count = rng.randint(1, 3)
            tx = Transaction(
                inputs=(),
                outputs=tuple(OutputSpec(kind=rng.choice(UNIT_KINDS)) for _ in range(count)),
                sender=node,
                receiver=node,
                height_hint=height,
            )
            made += count
        else:
            sender = rng.choice(holders)
            holdings = history.units_of(sender)
            inputs = tuple(rng.sample(holdings, k=rng.randint(1, min(3, len(holdings)))))
            receiver = rng.choice(pseudonyms)
            output_count = rng.randint(1, min(2, len(inputs)))
            assigned: list[list[UnitId]] = [[] for _ in range(output_count)]
            for position, unit in enumerate(inputs):
                assigned[position % output_count].append(unit)
            outputs = tuple(
                OutputSpec(kind=rng.choice(UNIT_KINDS), parents=tuple(group))
                for group in assigned
            )
            tx = Transaction(
                inputs=inputs,
                outputs=outputs,
                sender=sender,
                receiver=receiver,
                height_hint=height,
            )
            made += output_count
        history.commit(history.signed(tx))
    return history


def ancestor_closure(parents: dict[UnitId, tuple[UnitId, ...]], start: UnitId) -> set[UnitId]:
    """Plain DFS over the recorded parent edges, the start included."""
    seen: set[UnitId] = set()
    stack = [start]
    while stack:
        unit = stack.pop()
        if unit in seen:
            continue
        seen.add(unit)
        stack.extend(parents.get(unit, ()))
    return seen


def descendant_closure(children: dict[UnitId, list[UnitId]], roots: list[UnitId]) -> set[UnitId]:
    """Plain BFS over the recorded child edges, the roots included."""
    seen: set[UnitId] = set()
    queue = list(roots)
    while queue:
        unit = queue.pop(0)
        if unit in seen:
            continue
        seen.add(unit)
        queue.extend(children.get(unit, []))
    return seen


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)


@pytest.fixture
def small_history(rng) -> History:
    return build_history(rng, parties=4, max_units=40, max_blocks=25)
