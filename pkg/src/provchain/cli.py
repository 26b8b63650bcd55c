"""Command-line surface: keys, transactions, commits, verification, tracing.

All state lives under one data directory (flag --data-dir or environment
variable PROVCHAIN_DATA_DIR), which doubles as a multi-party workbench:
every counterparty whose seed file sits in keys/ can co-sign and commit
there. Co-signing is a two-step offline flow through transaction files,
because the ledger defines agreement, not transport.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock, Timeout

from .consensus import ConfigError, QuorumConfig, load_quorum_config
from .encoding import transaction_signing_bytes
from .identity import BadSeedLengthError, Directory, NodeIdentity, keygen, load_seed, save_seed, sign
from .identity import anonymity_audit
from .ledger import (
    ChainFormatError,
    EmptyBlockError,
    InvalidTransactionError,
    MissingCommitterError,
    append_block,
    block_hash,
    export_jsonl,
    genesis_chain,
    load_chain,
    load_head,
    save_chain,
    transaction_from_dict,
    transaction_to_dict,
    verify_chain,
)
from .provenance import (
    InvalidChainError,
    UnknownUnitError,
    build_provenance_graph,
    recall_set,
    trace_back,
)
from .records import Chain, OutputSpec, Transaction, UnitId
from .simnet import (
    MalformedScriptError,
    contamination_fixture,
    counterfeit_scenario,
    load_scenario,
    run_scenario,
)

CHAIN_FILE = "chain.pch"
DIRECTORY_FILE = "directory.json"
LABELS_FILE = "labels.json"
CONFIG_FILE = "config.toml"
REPORT_FILE = "report.json"
KEYS_DIR = "keys"
TXS_DIR = "txs"
LOCK_FILE = ".lock"

FIXTURES = {"contamination": contamination_fixture, "counterfeit": counterfeit_scenario}


class CommandError(Exception):
    """Operational or validation failure; exits 1 with the reason on stdout."""


@dataclass
class CliConfig:
    data_dir: Path
    quorum: QuorumConfig
    directory_path: Path

    @classmethod
    def resolve(cls, data_dir: str | None) -> "CliConfig":
        root = Path(
            data_dir
            or os.environ.get("PROVCHAIN_DATA_DIR")
            or Path.cwd() / "provchain-data"
        )
        config_path = root / CONFIG_FILE
        if config_path.exists():
            quorum = load_quorum_config(config_path)
        else:
            quorum = QuorumConfig(mode="bft", replica_count=4, fault_bound=1)
        return cls(data_dir=root, quorum=quorum, directory_path=root / DIRECTORY_FILE)

    @property
    def chain_path(self) -> Path:
        return self.data_dir / CHAIN_FILE

    @property
    def labels_path(self) -> Path:
        return self.data_dir / LABELS_FILE

    def load_directory(self) -> Directory:
        if self.directory_path.exists():
            labels = self.labels_path if self.labels_path.exists() else None
            return Directory.load(self.directory_path, labels)
        return Directory()

    def save_directory(self, directory: Directory) -> None:
        directory.save(self.directory_path, self.labels_path)

    def load_chain_or_genesis(self) -> Chain:
        if self.chain_path.exists():
            return load_chain(self.chain_path)
        return genesis_chain()

    def require_chain(self) -> Chain:
        if not self.chain_path.exists():
            raise CommandError(f"no chain at {self.chain_path}; commit a block first")
        return load_chain(self.chain_path)

    def seed_path(self, pseudonym: bytes) -> Path:
        return self.data_dir / KEYS_DIR / f"{pseudonym.hex()}.seed"

    def load_identity(self, pseudonym: bytes) -> NodeIdentity:
        path = self.seed_path(pseudonym)
        if not path.exists():
            raise CommandError(f"no signing key for {pseudonym.hex()} under {path.parent}")
        return keygen(load_seed(path))

    def resolve_party(self, directory: Directory, value: str) -> bytes:
        """A party can be named by directory label or by pseudonym hex."""
        for pseudonym in directory.pseudonyms():
            if directory.label(pseudonym) == value:
                return pseudonym
        try:
            pseudonym = bytes.fromhex(value)
        except ValueError:
            raise CommandError(f"unknown party {value!r}") from None
        if pseudonym not in directory:
            raise CommandError(f"pseudonym {value} is not registered")
        return pseudonym

    def lock(self) -> FileLock:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        return FileLock(self.data_dir / LOCK_FILE, timeout=10)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _parse_unit(value: str) -> UnitId:
    try:
        return UnitId.from_hex(value)
    except ValueError as exc:
        raise CommandError(f"bad unit id {value!r}: {exc}") from None


# -- subcommand handlers --------------------------------------------------------


def _cmd_keygen(args, config: CliConfig) -> int:
    with config.lock():
        directory = config.load_directory()
        if args.seed is not None:
            try:
                seed = bytes.fromhex(args.seed)
            except ValueError:
                raise CommandError("--seed must be hex") from None
        else:
            seed = os.urandom(32)
        identity = keygen(seed)
        directory.register(identity, label=args.label)
        config.save_directory(directory)
        config.seed_path(identity.pseudonym).parent.mkdir(parents=True, exist_ok=True)
        save_seed(config.seed_path(identity.pseudonym), seed)
    _emit(
        args,
        {"pseudonym": identity.pseudonym.hex(), "label": args.label},
        f"{identity.pseudonym.hex()} ({args.label})",
    )
    return 0


def _parse_output_spec(raw: str, inputs: tuple[UnitId, ...]) -> tuple[str, tuple[UnitId, ...]]:
    """An output flag is "KIND" or "KIND@P1,P2" where P is a unit id or #k input ref."""
    kind, _, parent_part = raw.partition("@")
    if not kind:
        raise CommandError(f"output {raw!r} has no kind")
    parents = []
    if parent_part:
        for token in parent_part.split(","):
            token = token.strip()
            if token.startswith("#"):
                try:
                    parents.append(inputs[int(token[1:])])
                except (ValueError, IndexError):
                    raise CommandError(f"output parent {token!r} is not an input index") from None
            else:
                parents.append(_parse_unit(token))
    return kind, tuple(parents)


def _cmd_tx_new(args, config: CliConfig) -> int:
    with config.lock():
        directory = config.load_directory()
        sender = config.resolve_party(directory, args.sender)
        receiver = config.resolve_party(directory, args.receiver)
        inputs = tuple(_parse_unit(value) for value in args.input or [])
        outputs = []
        for raw in args.output or []:
            kind, parents = _parse_output_spec(raw, inputs)
            outputs.append(OutputSpec(kind=kind, parents=parents))
        if args.height is not None:
            height = args.height
        else:
            height = config.load_chain_or_genesis().height + 1
        try:
            tx = Transaction(
                inputs=inputs,
                outputs=tuple(outputs),
                sender=sender,
                receiver=receiver,
                height_hint=height,
            )
        except ValueError as exc:
            raise CommandError(str(exc)) from None

        digest = transaction_signing_bytes(tx)
        name = hashlib.sha256(digest).hexdigest()[:12]
        out_path = Path(args.out) if args.out else config.data_dir / TXS_DIR / f"tx-{name}.json"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(
            json.dumps(transaction_to_dict(tx), indent=2, sort_keys=True) + "\n"
        )
    _emit(
        args,
        {"file": str(out_path), "tx": transaction_to_dict(tx)},
        f"unsigned transaction written to {out_path}",
    )
    return 0


def _load_tx_file(path: Path) -> Transaction:
    if not path.exists():
        raise CommandError(f"no transaction file {path}")
    try:
        return transaction_from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CommandError(f"unreadable transaction file {path}: {exc}") from None


def _cmd_tx_cosign(args, config: CliConfig) -> int:
    with config.lock():
        directory = config.load_directory()
        path = Path(args.file)
        tx = _load_tx_file(path)
        signer = config.resolve_party(directory, getattr(args, "as"))
        if signer not in (tx.sender, tx.receiver):
            raise CommandError("not a counterparty")
        identity = config.load_identity(signer)
        signature = sign(identity, transaction_signing_bytes(tx))
        roles = []
        if signer == tx.sender:
            tx = tx.with_signatures(sender_sig=signature)
            roles.append("sender")
        if signer == tx.receiver:
            tx = tx.with_signatures(receiver_sig=signature)
            roles.append("receiver")
        role = "+".join(roles)
        path.write_text(json.dumps(transaction_to_dict(tx), indent=2, sort_keys=True) + "\n")
    _emit(
        args,
        {"file": str(path), "signed_as": role, "complete": tx.is_signed},
        f"signed as {role}; transaction is {'ready' if tx.is_signed else 'awaiting the other party'}",
    )
    return 0


def _cmd_block_commit(args, config: CliConfig) -> int:
    with config.lock():
        directory = config.load_directory()
        chain = config.load_chain_or_genesis()
        txs = [_load_tx_file(Path(value)) for value in args.tx]
        required = set()
        for tx in txs:
            required |= tx.counterparties()
        committers = [config.load_identity(pseudonym) for pseudonym in sorted(required)]
        chain = append_block(
            chain, txs, committers, directory, timestamp=args.timestamp
        )
        save_chain(config.chain_path, chain)
    block = chain.blocks[-1]
    payload = {
        "height": block.header.height,
        "hash": block_hash(block.header).hex(),
        "transactions": len(block.transactions),
    }
    _emit(
        args,
        payload,
        f"committed block {payload['height']} {payload['hash']} "
        f"({payload['transactions']} transactions)",
    )
    return 0


def _cmd_verify(args, config: CliConfig) -> int:
    chain_path = Path(args.chain) if args.chain else config.chain_path
    head_path = Path(args.head) if args.head else None
    chain = load_chain(chain_path, head_path=head_path)
    directory = config.load_directory()
    report = verify_chain(chain, chain.head_hash, directory)
    if report.valid:
        _emit(args, report.to_dict(), "VALID")
        return 0
    _emit(
        args,
        report.to_dict(),
        f"INVALID: {report.failed_check} at block {report.failed_index}: {report.detail}",
    )
    return 1


def _graph_for(config: CliConfig):
    chain = config.require_chain()
    directory = config.load_directory()
    return build_provenance_graph(chain, directory), directory


def _cmd_trace(args, config: CliConfig) -> int:
    graph, directory = _graph_for(config)
    unit = _parse_unit(args.unit)
    try:
        ancestry = trace_back(graph, unit)
    except UnknownUnitError as exc:
        raise CommandError(f"unknown unit {exc}") from None
    lines = []
    for node in ancestry.entries:
        owner = directory.label(node.unit.owner) or node.unit.owner.hex()
        lines.append(
            f"h={node.height} {node.unit.kind} {node.unit.id.hex()} held by {owner}"
        )
    _emit(args, ancestry.to_dict(), "\n".join(lines))
    return 0


def _cmd_recall(args, config: CliConfig) -> int:
    units = [_parse_unit(value) for value in (args.units or []) + (args.unit or [])]
    if not units:
        raise CommandError("recall needs at least one unit id")
    graph, directory = _graph_for(config)
    try:
        report = recall_set(graph, units)
    except UnknownUnitError as exc:
        raise CommandError(f"unknown unit {exc}") from None
    lines = [f"{len(report.affected)} affected units"]
    for node in report.affected:
        owner = directory.label(node.unit.owner) or node.unit.owner.hex()
        status = "live" if node.live else "consumed"
        lines.append(
            f"h={node.height} {node.unit.kind} {node.unit.id.hex()} held by {owner} [{status}]"
        )
    _emit(args, report.to_dict(), "\n".join(lines))
    return 0


def _cmd_audit(args, config: CliConfig) -> int:
    chain_path = Path(args.chain) if args.chain else config.chain_path
    if not chain_path.exists():
        raise CommandError(f"no chain at {chain_path}")
    directory = config.load_directory()
    report = anonymity_audit(chain_path.read_bytes(), directory)
    if report.passed:
        _emit(
            args,
            report.to_dict(),
            f"clean: {report.labels_checked} labels absent from {report.scanned_bytes} bytes",
        )
        return 0
    lines = [f"LEAK: {len(report.occurrences)} label occurrences"]
    for occurrence in report.occurrences:
        lines.append(f"  {occurrence.label!r} at byte {occurrence.offset}")
    _emit(args, report.to_dict(), "\n".join(lines))
    return 1


def _cmd_simulate(args, config: CliConfig) -> int:
    if bool(args.scenario) == bool(args.fixture):
        raise CommandError("pass exactly one of <scenario.json> or --fixture")
    if args.fixture:
        scenario = FIXTURES[args.fixture]()
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
    else:
        scenario_path = Path(args.scenario)
        if not scenario_path.exists():
            raise CommandError(f"no scenario file {scenario_path}")
        scenario = load_scenario(scenario_path, seed_override=args.seed)
    report = run_scenario(scenario)
    with config.lock():
        save_chain(config.chain_path, report.chain)
        report.directory.save(config.directory_path, config.labels_path)
        (config.data_dir / REPORT_FILE).write_text(report.to_json())
        (config.data_dir / "chain.jsonl").write_text(export_jsonl(report.chain))
    _emit(args, report.to_dict(), report.to_text())
    return 0 if report.ok else 1


def _summarize_report(raw: dict) -> str:
    counters = raw.get("counters", {})
    lines = [
        f"seed {raw.get('seed')}; {counters.get('events', 0)} events -> "
        f"{counters.get('blocks', 0)} blocks, {counters.get('transactions', 0)} transactions, "
        f"{counters.get('units', 0)} units",
        f"canonical head {raw.get('canonical_head')}",
        f"faults detected: {len(raw.get('detections', []))}; "
        f"repairs: {counters.get('repaired_replicas', 0)}; "
        f"rejected transactions: {counters.get('rejected', 0)}",
        f"converged: {'yes' if raw.get('converged') else 'NO'}",
    ]
    return "\n".join(lines)


def _cmd_report(args, config: CliConfig) -> int:
    path = config.data_dir / REPORT_FILE
    if not path.exists():
        raise CommandError(f"no report at {path}; run simulate first")
    raw = json.loads(path.read_text())
    _emit(args, raw, _summarize_report(raw))
    return 0


# -- parser ---------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", help="state directory (default: $PROVCHAIN_DATA_DIR)")
    common.add_argument("--json", action="store_true", help="machine output as JSON on stdout")

    parser = argparse.ArgumentParser(
        prog="provchain",
        description="Tamper-evident supply-chain ledger with unit-level provenance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[common], help="create an identity and register it")
    p.add_argument("--label", required=True, help="private off-ledger name for the key")
    p.add_argument("--seed", help="32-byte hex seed (default: random)")
    p.set_defaults(handler=_cmd_keygen, mutating=True)

    tx = sub.add_parser("tx", help="author and co-sign transactions")
    tx_sub = tx.add_subparsers(dest="tx_command", required=True)

    p = tx_sub.add_parser("new", parents=[common], help="author an unsigned transaction")
    p.add_argument("--sender", required=True, help="label or pseudonym hex")
    p.add_argument("--receiver", required=True, help="label or pseudonym hex")
    p.add_argument("--input", action="append", help="unit id txhash:index (repeatable)")
    p.add_argument(
        "--output",
        action="append",
        help="output spec KIND or KIND@P1,P2 with P a unit id or #k input reference",
    )
    p.add_argument("--height", type=int, help="target block height (default: next)")
    p.add_argument("--out", help="file to write (default: under data_dir/txs)")
    p.set_defaults(handler=_cmd_tx_new, mutating=True)

    p = tx_sub.add_parser("cosign", parents=[common], help="sign a transaction file")
    p.add_argument("--file", required=True, help="transaction file from tx new")
    p.add_argument("--as", required=True, help="label or pseudonym hex of the signing party")
    p.set_defaults(handler=_cmd_tx_cosign, mutating=True)

    block = sub.add_parser("block", help="commit transactions")
    block_sub = block.add_subparsers(dest="block_command", required=True)

    p = block_sub.add_parser("commit", parents=[common], help="append a block of signed txs")
    p.add_argument("--tx", action="append", required=True, help="transaction file (repeatable)")
    p.add_argument("--timestamp", type=int, help="block timestamp (default: previous + 1)")
    p.set_defaults(handler=_cmd_block_commit, mutating=True)

    p = sub.add_parser("verify", parents=[common], help="check a chain against its head hash")
    p.add_argument("--chain", help="chain file (default: data_dir/chain.pch)")
    p.add_argument("--head", help="32-byte head file (default: <chain>.head)")
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("trace", parents=[common], help="list a unit's full ancestry")
    p.add_argument("unit", help="unit id txhash:index")
    p.set_defaults(handler=_cmd_trace)

    p = sub.add_parser("recall", parents=[common], help="list everything tainted units reached")
    p.add_argument("units", nargs="*", help="unit ids txhash:index")
    p.add_argument("--unit", action="append", help="unit id (repeatable)")
    p.set_defaults(handler=_cmd_recall)

    p = sub.add_parser("audit", parents=[common], help="scan chain bytes for identity leaks")
    p.add_argument("--chain", help="chain file (default: data_dir/chain.pch)")
    p.set_defaults(handler=_cmd_audit)

    p = sub.add_parser("simulate", parents=[common], help="run a scenario script")
    p.add_argument("scenario", nargs="?", help="scenario JSON file")
    p.add_argument("--fixture", choices=sorted(FIXTURES), help="run a built-in scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(handler=_cmd_simulate, mutating=True)

    p = sub.add_parser("report", parents=[common], help="print the last simulation report")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        config = CliConfig.resolve(args.data_dir)
        return args.handler(args, config)
    except CommandError as exc:
        _emit(args, {"error": str(exc)}, f"error: {exc}")
        return 1
    except (
        BadSeedLengthError,
        ConfigError,
        InvalidTransactionError,
        EmptyBlockError,
        MissingCommitterError,
        ChainFormatError,
        InvalidChainError,
        MalformedScriptError,
    ) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        _emit(args, {"error": str(exc), "code": code}, f"error: {exc}")
        return 1
    except Timeout:
        _emit(args, {"error": "data directory is locked"}, "error: data directory is locked")
        return 1


if __name__ == "__main__":
    sys.exit(main())
