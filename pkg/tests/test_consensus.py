"""Quorum configuration, block proposal, recovery, and repair."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from provchain import (
    Block,
    Chain,
    CommitCertificate,
    ConfigError,
    ForkError,
    InsufficientQuorumError,
    InvalidCanonicalError,
    NoQuorumError,
    OutputSpec,
    QuorumConfig,
    Replica,
    ReplicaStatus,
    Signature,
    Transaction,
    ValidationDivergenceError,
    append_block,
    canonical_chain,
    keygen,
    load_quorum_config,
    propose_block,
    repair_replica,
    replay_chain,
    verify_certificate,
    verify_chain,
)
from provchain.consensus import parse_fraction

from conftest import build_history, cosigned


class TestQuorumMath:
    def test_bft_four_tolerates_one(self):
        config = QuorumConfig(mode="bft", replica_count=4, fault_bound=1)
        assert config.quorum_size() == 3

    def test_bft_seven_tolerates_two(self):
        config = QuorumConfig(mode="bft", replica_count=7, fault_bound=2)
        assert config.quorum_size() == 5

    def test_bft_replica_floor(self):
        with pytest.raises(ConfigError):
            QuorumConfig(mode="bft", replica_count=3, fault_bound=1)
        with pytest.raises(ConfigError):
            QuorumConfig(mode="bft", replica_count=6, fault_bound=2)

    def test_fraction_two_thirds_of_five(self):
        config = QuorumConfig(
            mode="fraction", replica_count=5, consent_fraction=Fraction(2, 3)
        )
        # ceil(10/3) = 4
        assert config.quorum_size() == 4

    def test_fraction_of_one_is_everyone(self):
        config = QuorumConfig(mode="fraction", replica_count=3, consent_fraction=Fraction(1))
        assert config.quorum_size() == 3

    def test_fraction_must_exceed_half(self):
        with pytest.raises(ConfigError):
            QuorumConfig(mode="fraction", replica_count=4, consent_fraction=Fraction(1, 2))
        with pytest.raises(ConfigError):
            QuorumConfig(mode="fraction", replica_count=4, consent_fraction=Fraction(3, 2))

    def test_fraction_requires_value(self):
        with pytest.raises(ConfigError):
            QuorumConfig(mode="fraction", replica_count=4)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            QuorumConfig(mode="popular-vote", replica_count=4)

    def test_replica_count_floor(self):
        with pytest.raises(ConfigError):
            QuorumConfig(mode="bft", replica_count=0)

    def test_quorums_always_majorities(self):
        # any two quorums intersect: 2 * quorum > n
        for n in range(4, 14):
            for f in range((n - 1) // 3 + 1):
                config = QuorumConfig(mode="bft", replica_count=n, fault_bound=f)
                assert 2 * config.quorum_size() > n
        for n in range(1, 12):
            for frac in (Fraction(2, 3), Fraction(3, 5), Fraction(51, 100), Fraction(1)):
                config = QuorumConfig(mode="fraction", replica_count=n, consent_fraction=frac)
                assert 2 * config.quorum_size() > n


class TestFractionParsing:
    def test_string_ratio(self):
        assert parse_fraction("2/3") == Fraction(2, 3)

    def test_float_exact_decimal(self):
        assert parse_fraction(0.75) == Fraction(3, 4)

    def test_int(self):
        assert parse_fraction(1) == Fraction(1)

    def test_decimal_string(self):
        assert parse_fraction("0.6") == Fraction(3, 5)

    def test_garbage(self):
        with pytest.raises(ConfigError):
            parse_fraction(object())


class TestConfigFile:
    def test_bft_defaults(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('replica_count = 4\nfault_bound = 1\n')
        config = load_quorum_config(path)
        assert config.mode == "bft"
        assert config.quorum_size() == 3

    def test_fraction_string(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('mode = "fraction"\nreplica_count = 5\nconsent_fraction = "2/3"\n')
        assert load_quorum_config(path).quorum_size() == 4

    def test_fraction_float(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('mode = "fraction"\nreplica_count = 4\nconsent_fraction = 0.75\n')
        config = load_quorum_config(path)
        assert config.consent_fraction == Fraction(3, 4)
        assert config.quorum_size() == 3

    def test_missing_replica_count(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('mode = "bft"\n')
        with pytest.raises(ConfigError):
            load_quorum_config(path)


def make_cluster(n=4, fault_bound=1, seed=5150, mode="bft", consent_fraction=None):
    rng = random.Random(seed)
    history = build_history(rng, parties=3, max_units=24, max_blocks=10)
    config = QuorumConfig(
        mode=mode,
        replica_count=n,
        fault_bound=fault_bound if mode == "bft" else 0,
        consent_fraction=consent_fraction,
    )
    replicas = []
    for index in range(n):
        identity = keygen(rng.randbytes(32))
        history.directory.register(identity)
        replicas.append(Replica.from_chain(index, identity, history.chain, history.directory))
    return history, config, replicas


def craft_block(history) -> Block:
    """A properly signed next block for the cluster's shared chain."""
    minter = next(iter(history.identities.values()))
    tx = cosigned(
        Transaction(
            inputs=(),
            outputs=(OutputSpec(kind="raw-lot"),),
            sender=minter.pseudonym,
            receiver=minter.pseudonym,
            height_hint=history.chain.height + 1,
        ),
        history.identities,
    )
    extended = append_block(
        history.chain, [tx], [minter], history.directory, state=history.state
    )
    return extended.blocks[-1]


def corrupt_copy(replica, index=2):
    """Flip a commit-signature bit in one stored block; head claim unchanged."""
    block = replica.chain.blocks[index]
    sig = block.commit_signatures[0]
    flipped = Signature(raw=sig.raw[:-1] + bytes([sig.raw[-1] ^ 1]), signer=sig.signer)
    patched = Block(
        header=block.header,
        transactions=block.transactions,
        commit_signatures=(flipped,) + block.commit_signatures[1:],
    )
    blocks = replica.chain.blocks[:index] + (patched,) + replica.chain.blocks[index + 1 :]
    replica.chain = Chain(blocks=blocks, head_hash=replica.chain.head_hash)
    replica.status = ReplicaStatus.CORRUPTED


class TestReplica:
    def test_from_chain(self):
        history, _, replicas = make_cluster()
        replica = replicas[0]
        assert replica.head == history.chain.head_hash
        assert replica.state == replay_chain(history.chain, history.directory)
        assert replica.status is ReplicaStatus.HONEST

    def test_validate_proposal_checks_parent(self):
        history, _, replicas = make_cluster()
        block = craft_block(history)
        ok, _ = replicas[0].validate_proposal(block, history.directory)
        assert ok
        replicas[1].head = b"\x12" * 32
        ok, why = replicas[1].validate_proposal(block, history.directory)
        assert not ok and "head" in why

    def test_accept_block_advances_copy(self):
        history, _, replicas = make_cluster()
        block = craft_block(history)
        replica = replicas[0]
        replica.accept_block(block)
        assert replica.chain.height == history.chain.height + 1
        assert replica.head != history.chain.head_hash
        report = verify_chain(replica.chain, replica.head, history.directory)
        assert report.valid


class TestProposeBlock:
    def test_quorum_commit(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        assert certificate.ack_count == 4
        assert certificate.quorum == 3
        assert verify_certificate(certificate, history.directory)
        heads = {replica.head for replica in replicas}
        assert len(heads) == 1
        assert all(replica.chain.height == history.chain.height + 1 for replica in replicas)

    def test_signatures_sorted_by_replica_id(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        expected = [replica.identity.pseudonym for replica in sorted(replicas, key=lambda r: r.replica_id)]
        assert [sig.signer for sig in certificate.signatures] == expected

    def test_offline_majority_blocks_commit_for_everyone(self):
        history, config, replicas = make_cluster()
        replicas[0].status = ReplicaStatus.OFFLINE
        replicas[1].status = ReplicaStatus.OFFLINE
        block = craft_block(history)
        before = [replica.chain.height for replica in replicas]
        with pytest.raises(InsufficientQuorumError):
            propose_block(replicas, block, config, history.directory)
        # nobody appended: no splinter ledgers below quorum
        assert [replica.chain.height for replica in replicas] == before
        assert all(replica.head == history.chain.head_hash for replica in replicas)

    def test_corrupted_replica_does_not_ack(self):
        history, config, replicas = make_cluster()
        corrupt_copy(replicas[3])
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        assert certificate.ack_count == 3
        assert replicas[3].chain.height == history.chain.height  # left behind

    def test_divergent_validation_raises(self):
        history, config, replicas = make_cluster()
        # spend a live unit, then secretly remove it from one replica's state
        owner_pseudonym, unit = next(
            (owner, unit)
            for unit, owner in sorted(
                history.owner.items(), key=lambda item: item[0].hex()
            )
            if unit in history.live
        )
        owner = history.identities[owner_pseudonym]
        receiver = next(iter(history.identities.values()))
        tx = cosigned(
            Transaction(
                inputs=(unit,),
                outputs=(OutputSpec(kind="carton", parents=(unit,)),),
                sender=owner.pseudonym,
                receiver=receiver.pseudonym,
                height_hint=history.chain.height + 1,
            ),
            history.identities,
        )
        extended = append_block(
            history.chain, [tx], [owner, receiver], history.directory, state=history.state
        )
        block = extended.blocks[-1]
        units = replicas[2].state.units()
        del units[unit]
        replicas[2].state = type(replicas[2].state)(units)
        before = [replica.chain.height for replica in replicas]
        with pytest.raises(ValidationDivergenceError):
            propose_block(replicas, block, config, history.directory)
        assert [replica.chain.height for replica in replicas] == before


class TestCanonicalChain:
    def test_all_honest(self):
        history, config, replicas = make_cluster()
        canonical = canonical_chain(replicas, config, history.directory)
        assert canonical.head_hash == history.chain.head_hash
        assert canonical.blocks == history.chain.blocks

    def test_skips_corrupt_copy_with_true_head_claim(self):
        history, config, replicas = make_cluster()
        corrupt_copy(replicas[0])  # lowest id: would be tried first
        canonical = canonical_chain(replicas, config, history.directory)
        assert canonical.head_hash == history.chain.head_hash
        report = verify_chain(canonical, canonical.head_hash, history.directory)
        assert report.valid

    def test_fabricated_heads_beyond_bound_deny_rather_than_mislead(self):
        history, config, replicas = make_cluster()
        for replica in replicas[:2]:  # two liars exceed the fault bound of one
            replica.head = b"\xee" * 32
            replica.status = ReplicaStatus.CORRUPTED
        with pytest.raises(NoQuorumError):
            canonical_chain(replicas, config, history.directory)

    def test_colluding_quorum_without_bytes_cannot_win(self):
        history, config, replicas = make_cluster()
        for replica in replicas[:3]:  # a full quorum of head claims, no data
            replica.head = b"\xee" * 32
        with pytest.raises(NoQuorumError) as err:
            canonical_chain(replicas, config, history.directory)
        assert "verifies" in str(err.value)

    def test_all_offline(self):
        history, config, replicas = make_cluster()
        for replica in replicas:
            replica.status = ReplicaStatus.OFFLINE
        with pytest.raises(NoQuorumError):
            canonical_chain(replicas, config, history.directory)

    def test_two_quorum_heads_is_a_fork(self):
        # defensive check: feed more replicas than the config admits, so two
        # disjoint head claims can each gather a quorum of three
        history, config, replicas = make_cluster()
        rng = random.Random(77)
        extra = []
        for index in range(4, 7):
            identity = keygen(rng.randbytes(32))
            history.directory.register(identity)
            clone = Replica.from_chain(index, identity, history.chain, history.directory)
            clone.head = b"\xab" * 32
            extra.append(clone)
        with pytest.raises(ForkError):
            canonical_chain(replicas[:3] + extra, config, history.directory)

    def test_offline_replicas_do_not_vote(self):
        history, config, replicas = make_cluster()
        replicas[0].status = ReplicaStatus.OFFLINE
        canonical = canonical_chain(replicas, config, history.directory)
        assert canonical.head_hash == history.chain.head_hash


class TestRepair:
    def test_restores_corrupt_replica(self):
        history, config, replicas = make_cluster()
        corrupt_copy(replicas[1])
        canonical = canonical_chain(replicas, config, history.directory)
        repair_replica(replicas[1], canonical, history.directory)
        assert replicas[1].status is ReplicaStatus.HONEST
        assert replicas[1].head == history.chain.head_hash
        assert replicas[1].chain == canonical
        assert replicas[1].state == replay_chain(canonical, history.directory)

    def test_repair_is_idempotent(self):
        history, config, replicas = make_cluster()
        canonical = canonical_chain(replicas, config, history.directory)
        repair_replica(replicas[2], canonical, history.directory)
        first = (replicas[2].chain, replicas[2].head)
        repair_replica(replicas[2], canonical, history.directory)
        assert (replicas[2].chain, replicas[2].head) == first

    def test_refuses_bad_canonical(self):
        history, config, replicas = make_cluster()
        corrupt_copy(replicas[0])
        bad = replicas[0].chain  # tampered bytes with the original head claim
        with pytest.raises(InvalidCanonicalError):
            repair_replica(replicas[1], bad, history.directory)

    def test_repaired_replica_rejoins_commits(self):
        history, config, replicas = make_cluster()
        corrupt_copy(replicas[3])
        canonical = canonical_chain(replicas, config, history.directory)
        repair_replica(replicas[3], canonical, history.directory)
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        assert certificate.ack_count == 4


class TestCertificates:
    def test_verify_round_trip(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        assert verify_certificate(certificate, history.directory)

    def test_too_few_signers_fails(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        thin = CommitCertificate(
            block_hash=certificate.block_hash,
            quorum=certificate.quorum,
            signatures=certificate.signatures[:2],
        )
        assert not verify_certificate(thin, history.directory)

    def test_tampered_hash_fails(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        swapped = CommitCertificate(
            block_hash=b"\x00" * 32,
            quorum=certificate.quorum,
            signatures=certificate.signatures,
        )
        assert not verify_certificate(swapped, history.directory)

    def test_duplicate_signers_do_not_inflate_acks(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        padded = CommitCertificate(
            block_hash=certificate.block_hash,
            quorum=certificate.quorum,
            signatures=certificate.signatures[:1] * 4,
        )
        assert padded.ack_count == 1
        assert not verify_certificate(padded, history.directory)

    def test_to_dict(self):
        history, config, replicas = make_cluster()
        block = craft_block(history)
        certificate = propose_block(replicas, block, config, history.directory)
        raw = certificate.to_dict()
        assert raw["acks"] == 4 and raw["quorum"] == 3
        assert raw["signers"] == sorted(raw["signers"])
