import os
from dataclasses import replace

import pytest

from fybrr import consensus as cons
from fybrr import identity as idm
from fybrr.errors import (
    AuthenticationError,
    MalformedInput,
    NotAMember,
    NotFound,
    ProposalExpired,
)

T0 = 1_700_000_000_000


def ident(n: int) -> idm.PeerIdentity:
    return idm.generate_identity(bytes([n]) * 32)


def member_subject(identity: idm.PeerIdentity) -> cons.Subject:
    return cons.Subject(
        peer_id=identity.peer_id,
        keys=cons.MemberKeys(identity.enc_public, identity.sig_public),
    )


def grow_swarm(n: int) -> tuple[cons.ConsensusEngine, list[idm.PeerIdentity]]:
    """Genesis plus n-1 unanimous add votes; returns the engine and members."""
    people = [ident(i + 1) for i in range(n)]
    engine = cons.ConsensusEngine.genesis(people[0], created_at=T0)
    for i in range(1, n):
        proposal, _ = engine.propose(
            cons.Kind.ADD_MEMBER, member_subject(people[i]), people[0], now=T0 + i
        )
        for voter in people[:i]:
            engine.cast_vote(proposal.proposal_id, cons.Choice.YES, voter, now=T0 + i)
        assert engine.tally(proposal.proposal_id, now=T0 + i) == cons.Outcome.ACCEPTED
        engine.apply(proposal.proposal_id, now=T0 + i)
    return engine, people


def test_genesis_sole_member():
    creator = ident(1)
    engine = cons.ConsensusEngine.genesis(creator, created_at=T0)
    assert engine.state.epoch == 0
    assert engine.state.member_ids() == {creator.peer_id}


def test_majority_examples_from_rule():
    # 3 of 5 is a strict majority; 2 of 4 is not; 1 of 1 is.
    assert cons.majority_outcome(5, 3, 0, False) == cons.Outcome.ACCEPTED
    assert cons.majority_outcome(4, 2, 2, False) == cons.Outcome.REJECTED
    assert cons.majority_outcome(1, 1, 0, False) == cons.Outcome.ACCEPTED
    assert cons.majority_outcome(5, 2, 1, False) == cons.Outcome.PENDING
    assert cons.majority_outcome(5, 2, 1, True) == cons.Outcome.REJECTED


def test_five_member_vote_accepts_with_three_yes():
    engine, people = grow_swarm(5)
    outsider = ident(9)
    proposal, _ = engine.propose(
        cons.Kind.ADD_MEMBER, member_subject(outsider), people[0], now=T0 + 100
    )
    pid = proposal.proposal_id
    engine.cast_vote(pid, cons.Choice.YES, people[0], now=T0 + 101)
    engine.cast_vote(pid, cons.Choice.YES, people[1], now=T0 + 102)
    assert engine.tally(pid, now=T0 + 102) == cons.Outcome.PENDING
    engine.cast_vote(pid, cons.Choice.YES, people[2], now=T0 + 103)
    assert engine.tally(pid, now=T0 + 103) == cons.Outcome.ACCEPTED
    state = engine.apply(pid)
    assert outsider.peer_id in state.members
    assert state.epoch == 5


def test_first_vote_binds():
    engine, people = grow_swarm(3)
    proposal, _ = engine.propose(
        cons.Kind.SET_POLICY, cons.Subject(name="relay", value="on"), people[1], now=T0 + 10
    )
    pid = proposal.proposal_id
    first = engine.cast_vote(pid, cons.Choice.YES, people[0], now=T0 + 11)
    assert first.choice == cons.Choice.YES
    # the flipped second ballot is silently ignored, not an error
    engine.cast_vote(pid, cons.Choice.NO, people[0], now=T0 + 12)
    assert engine.counts(pid) == (1, 0)


def test_vote_after_deadline_rejected():
    engine, people = grow_swarm(2)
    proposal, _ = engine.propose(
        cons.Kind.SET_POLICY, cons.Subject(name="x", value="1"), people[0],
        now=T0, ttl_ms=1000,
    )
    with pytest.raises(ProposalExpired):
        engine.cast_vote(proposal.proposal_id, cons.Choice.YES, people[1], now=T0 + 1001)
    assert engine.tally(proposal.proposal_id, now=T0 + 1001) == cons.Outcome.REJECTED


def test_non_member_proposer_rejected():
    engine, _ = grow_swarm(2)
    stranger = ident(42)
    with pytest.raises(NotAMember):
        engine.propose(cons.Kind.SET_POLICY, cons.Subject(name="a", value="b"), stranger)


def test_add_existing_member_rejected_at_creation():
    engine, people = grow_swarm(3)
    with pytest.raises(MalformedInput):
        engine.propose(cons.Kind.ADD_MEMBER, member_subject(people[1]), people[0])


def test_remove_member_revokes_future_ballots():
    engine, people = grow_swarm(3)
    target = people[2]
    proposal, _ = engine.propose(
        cons.Kind.REMOVE_MEMBER, cons.Subject(peer_id=target.peer_id), people[0], now=T0 + 50
    )
    pid = proposal.proposal_id
    engine.cast_vote(pid, cons.Choice.YES, people[0], now=T0 + 51)
    engine.cast_vote(pid, cons.Choice.YES, people[1], now=T0 + 52)
    engine.apply(pid)
    assert target.peer_id not in engine.state.members

    follow_up, _ = engine.propose(
        cons.Kind.SET_POLICY, cons.Subject(name="p", value="v"), people[0], now=T0 + 60
    )
    with pytest.raises(NotAMember):
        engine.cast_vote(follow_up.proposal_id, cons.Choice.YES, target, now=T0 + 61)


def test_promote_bootstrap_stays_subset():
    engine, people = grow_swarm(3)
    proposal, _ = engine.propose(
        cons.Kind.PROMOTE_BOOTSTRAP, cons.Subject(peer_id=people[1].peer_id), people[0],
        now=T0 + 10,
    )
    pid = proposal.proposal_id
    for voter in people[:2]:
        engine.cast_vote(pid, cons.Choice.YES, voter, now=T0 + 11)
    state = engine.apply(pid)
    assert people[1].peer_id in state.bootstrap
    assert state.bootstrap <= state.member_ids()


def test_apply_is_idempotent_and_gated():
    engine, people = grow_swarm(1)
    proposal, _ = engine.propose(
        cons.Kind.SET_POLICY, cons.Subject(name="k", value="v"), people[0], now=T0
    )
    pid = proposal.proposal_id
    with pytest.raises(MalformedInput):
        engine.apply(pid)  # not yet accepted
    engine.cast_vote(pid, cons.Choice.YES, people[0], now=T0 + 1)
    first = engine.apply(pid)
    second = engine.apply(pid)
    assert first is second
    assert engine.state.epoch == 1


def test_epochs_are_monotone_with_no_gaps():
    engine, _ = grow_swarm(5)
    epochs = []
    state = cons.MembershipState(
        epoch=0,
        members={engine.genesis_record.creator.peer_id: engine.genesis_record.creator},
    )
    for proposal, _, _ in engine.log:
        state = cons.apply_effect(state, proposal)
        epochs.append(state.epoch)
    assert epochs == [1, 2, 3, 4]


def test_log_replay_matches_state_byte_for_byte():
    engine, _ = grow_swarm(4)
    replayed = cons.replay_log(engine.encode_log())
    assert replayed.canonical() == engine.state.canonical()
    rebuilt = cons.ConsensusEngine.from_log(engine.encode_log())
    assert rebuilt.state.canonical() == engine.state.canonical()


def test_log_with_forged_ballot_fails_replay():
    engine, people = grow_swarm(3)
    proposal, sig = engine.propose(
        cons.Kind.SET_POLICY, cons.Subject(name="z", value="1"), people[0], now=T0 + 5
    )
    pid = proposal.proposal_id
    for voter in people[:2]:
        engine.cast_vote(pid, cons.Choice.YES, voter, now=T0 + 6)
    engine.apply(pid)

    genesis, entries = cons.decode_log(engine.encode_log())
    target_proposal, target_sig, ballots = entries[-1]
    forged = tuple(replace(b, signature=bytes(64)) for b in ballots)
    entries[-1] = (target_proposal, target_sig, forged)
    with pytest.raises(AuthenticationError):
        cons.replay_log(cons.encode_log(genesis, entries))


def test_empty_log_is_genesis_state():
    creator = ident(3)
    record = cons.GenesisRecord.create(creator, T0)
    state = cons.replay_log(cons.encode_log(record, []))
    assert state.epoch == 0
    assert state.member_ids() == {creator.peer_id}


def test_adopt_log_moves_forward_only():
    engine_a, people = grow_swarm(3)
    engine_b = cons.ConsensusEngine(engine_a.genesis_record, engine_a.log[:1])
    assert engine_b.state.epoch == 1
    assert engine_b.adopt_log(engine_a.encode_log())
    assert engine_b.state.canonical() == engine_a.state.canonical()
    assert not engine_b.adopt_log(engine_a.encode_log())  # nothing newer


def test_adopt_log_rejects_foreign_genesis():
    engine_a, _ = grow_swarm(2)
    engine_c = cons.ConsensusEngine.genesis(ident(7), created_at=T0)
    with pytest.raises(AuthenticationError):
        engine_c.adopt_log(engine_a.encode_log())


def test_ballot_for_unknown_proposal():
    engine, people = grow_swarm(2)
    with pytest.raises(NotFound):
        engine.tally(os.urandom(32))
    ballot = cons.Ballot(os.urandom(32), people[0].peer_id, cons.Choice.YES, 0, bytes(64))
    with pytest.raises(NotFound):
        engine.receive_ballot(ballot)


def test_tally_invariant_under_ballot_delivery_order():
    import itertools

    engine, people = grow_swarm(3)
    proposal, sig = engine.propose(
        cons.Kind.SET_POLICY, cons.Subject(name="order", value="x"), people[0], now=T0 + 5
    )
    ballots = [
        engine.cast_vote(proposal.proposal_id, choice, voter, now=T0 + 6)
        for voter, choice in zip(people, (cons.Choice.YES, cons.Choice.YES, cons.Choice.NO))
    ]
    reference = engine.tally(proposal.proposal_id, now=T0 + 7)

    for order in itertools.permutations(ballots):
        fresh = cons.ConsensusEngine(engine.genesis_record, engine.log)
        fresh.receive_proposal(proposal, sig)
        for ballot in order:
            fresh.receive_ballot(ballot, now=T0 + 6)
        assert fresh.tally(proposal.proposal_id, now=T0 + 7) == reference
