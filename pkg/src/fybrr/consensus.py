"""Signed majority voting over swarm membership and policy.

Every member holds the same genesis record and applied-proposal log, so
membership state is a deterministic fold: identical history means
byte-identical state everywhere. A proposal is accepted the moment its
yes-ballots exceed half of the full membership at its creation epoch;
absentees therefore count against a proposal, never for it. Votes bind on
first cast, are rejected after the deadline, and a proposal can only be
applied while the epoch it was raised under is still current: anything it
raced against must be re-proposed.

Member entries carry both public keys, so ballots, proposals, and log
replays are verifiable with no external key directory; ids remain
self-certifying hashes of the keys.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

from . import identity as idm
from .errors import (
    AuthenticationError,
    MalformedInput,
    NotAMember,
    NotFound,
    ProposalExpired,
)
from .wire import Reader, Writer

_GENESIS_CONTEXT = b"fybrr/genesis/v1"
_PROPOSAL_CONTEXT = b"fybrr/proposal/v1"
_BALLOT_CONTEXT = b"fybrr/ballot/v1"

DEFAULT_TTL_MS = 24 * 3600 * 1000


class Kind(Enum):
    ADD_MEMBER = 1
    REMOVE_MEMBER = 2
    PROMOTE_BOOTSTRAP = 3
    DEMOTE_BOOTSTRAP = 4
    SET_POLICY = 5


class Outcome(Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class Choice(Enum):
    YES = 1
    NO = 2


@dataclass(frozen=True)
class MemberKeys:
    enc_public: bytes
    sig_public: bytes

    @property
    def peer_id(self) -> bytes:
        return idm.derive_peer_id(self.enc_public, self.sig_public)


@dataclass(frozen=True)
class Subject:
    """Either a member (id plus keys for additions) or a (name, value) policy."""

    peer_id: bytes | None = None
    keys: MemberKeys | None = None
    name: str | None = None
    value: str | None = None

    def encode(self) -> bytes:
        if self.peer_id is not None:
            w = Writer().u8(1).fixed(self.peer_id, 32)
            if self.keys is not None:
                w.u8(1).fixed(self.keys.enc_public, 32).fixed(self.keys.sig_public, 32)
            else:
                w.u8(0)
            return w.bytes()
        w = Writer().u8(2).var16((self.name or "").encode())
        return w.var16((self.value or "").encode()).bytes()

    @classmethod
    def read(cls, r: Reader) -> "Subject":
        tag = r.u8()
        if tag == 1:
            peer_id = r.fixed(32)
            keys = None
            if r.u8() == 1:
                keys = MemberKeys(r.fixed(32), r.fixed(32))
                if keys.peer_id != peer_id:
                    raise MalformedInput("subject keys do not hash to the subject id")
            return cls(peer_id=peer_id, keys=keys)
        if tag == 2:
            return cls(name=r.var16().decode(), value=r.var16().decode())
        raise MalformedInput(f"unknown subject tag {tag}")


@dataclass(frozen=True)
class Proposal:
    kind: Kind
    subject: Subject
    proposer: bytes
    created_at: int
    deadline: int

    def canonical(self) -> bytes:
        return (
            Writer()
            .raw(_PROPOSAL_CONTEXT)
            .u8(self.kind.value)
            .var16(self.subject.encode())
            .fixed(self.proposer, 32)
            .u64(self.created_at)
            .u64(self.deadline)
            .bytes()
        )

    @property
    def proposal_id(self) -> bytes:
        return idm.content_id(self.canonical())

    def encode(self) -> bytes:
        return (
            Writer()
            .u8(self.kind.value)
            .var16(self.subject.encode())
            .fixed(self.proposer, 32)
            .u64(self.created_at)
            .u64(self.deadline)
            .bytes()
        )

    @classmethod
    def read(cls, r: Reader) -> "Proposal":
        kind = Kind(r.u8())
        subject = Subject.read(Reader(r.var16()))
        return cls(kind, subject, r.fixed(32), r.u64(), r.u64())


@dataclass(frozen=True)
class Ballot:
    proposal_id: bytes
    voter: bytes
    choice: Choice
    epoch: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .raw(_BALLOT_CONTEXT)
            .fixed(self.proposal_id, 32)
            .fixed(self.voter, 32)
            .u8(self.choice.value)
            .u64(self.epoch)
            .bytes()
        )

    def encode(self) -> bytes:
        return (
            Writer()
            .fixed(self.proposal_id, 32)
            .fixed(self.voter, 32)
            .u8(self.choice.value)
            .u64(self.epoch)
            .fixed(self.signature, 64)
            .bytes()
        )

    @classmethod
    def read(cls, r: Reader) -> "Ballot":
        return cls(r.fixed(32), r.fixed(32), Choice(r.u8()), r.u64(), r.fixed(64))


@dataclass
class MembershipState:
    epoch: int = 0
    members: dict[bytes, MemberKeys] = field(default_factory=dict)
    bootstrap: set[bytes] = field(default_factory=set)
    policies: dict[str, str] = field(default_factory=dict)

    def member_ids(self) -> set[bytes]:
        return set(self.members)

    def canonical(self) -> bytes:
        w = Writer().u64(self.epoch).u16(len(self.members))
        for pid in sorted(self.members):
            keys = self.members[pid]
            w.fixed(pid, 32).fixed(keys.enc_public, 32).fixed(keys.sig_public, 32)
        w.u16(len(self.bootstrap))
        for pid in sorted(self.bootstrap):
            w.fixed(pid, 32)
        w.u16(len(self.policies))
        for name in sorted(self.policies):
            w.var16(name.encode()).var16(self.policies[name].encode())
        return w.bytes()

    def copy(self) -> "MembershipState":
        return MembershipState(
            epoch=self.epoch,
            members=dict(self.members),
            bootstrap=set(self.bootstrap),
            policies=dict(self.policies),
        )


def majority_outcome(n_members: int, yes: int, no: int, past_deadline: bool) -> Outcome:
    """The decision rule, in one place so oracles can call it directly.

    Accepted needs a strict majority of the full membership. Rejection is
    declared as soon as no-votes make that majority unreachable, or once
    the deadline passes without acceptance.
    """
    if 2 * yes > n_members:
        return Outcome.ACCEPTED
    if 2 * no >= n_members or past_deadline:
        return Outcome.REJECTED
    return Outcome.PENDING


def apply_effect(state: MembershipState, proposal: Proposal) -> MembershipState:
    out = state.copy()
    subject = proposal.subject
    if proposal.kind == Kind.ADD_MEMBER:
        out.members[subject.peer_id] = subject.keys
    elif proposal.kind == Kind.REMOVE_MEMBER:
        out.members.pop(subject.peer_id, None)
        out.bootstrap.discard(subject.peer_id)
    elif proposal.kind == Kind.PROMOTE_BOOTSTRAP:
        out.bootstrap.add(subject.peer_id)
    elif proposal.kind == Kind.DEMOTE_BOOTSTRAP:
        out.bootstrap.discard(subject.peer_id)
    elif proposal.kind == Kind.SET_POLICY:
        out.policies[subject.name] = subject.value or ""
    out.epoch = state.epoch + 1
    if not out.bootstrap <= set(out.members):
        raise MalformedInput("bootstrap set escaped the membership set")
    return out


@dataclass(frozen=True)
class GenesisRecord:
    creator: MemberKeys
    created_at: int
    signature: bytes

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .raw(_GENESIS_CONTEXT)
            .fixed(self.creator.enc_public, 32)
            .fixed(self.creator.sig_public, 32)
            .u64(self.created_at)
            .bytes()
        )

    @classmethod
    def create(cls, creator: idm.PeerIdentity, created_at: int) -> "GenesisRecord":
        record = cls(MemberKeys(creator.enc_public, creator.sig_public), created_at, b"")
        return replace(record, signature=idm.sign(record.signing_bytes(), creator))

    def verify(self) -> bool:
        return idm.verify(self.signing_bytes(), self.signature, self.creator.sig_public)

    def encode(self) -> bytes:
        return (
            Writer()
            .fixed(self.creator.enc_public, 32)
            .fixed(self.creator.sig_public, 32)
            .u64(self.created_at)
            .fixed(self.signature, 64)
            .bytes()
        )

    @classmethod
    def read(cls, r: Reader) -> "GenesisRecord":
        return cls(MemberKeys(r.fixed(32), r.fixed(32)), r.u64(), r.fixed(64))


LogEntry = tuple[Proposal, bytes, tuple[Ballot, ...]]


def encode_log(genesis: GenesisRecord, log: list[LogEntry]) -> bytes:
    w = Writer().var16(genesis.encode()).u16(len(log))
    for proposal, proposer_sig, ballots in log:
        w.var16(proposal.encode()).fixed(proposer_sig, 64).u16(len(ballots))
        for ballot in ballots:
            w.raw(ballot.encode())
    return w.bytes()


def decode_log(data: bytes) -> tuple[GenesisRecord, list[LogEntry]]:
    r = Reader(data)
    genesis = GenesisRecord.read(Reader(r.var16()))
    entries = []
    for _ in range(r.u16()):
        proposal = Proposal.read(Reader(r.var16()))
        proposer_sig = r.fixed(64)
        ballots = tuple(Ballot.read(r) for _ in range(r.u16()))
        entries.append((proposal, proposer_sig, ballots))
    r.done()
    return genesis, entries


def replay_log(data: bytes) -> MembershipState:
    """Rebuild state from a serialized history, verifying every signature.

    Raises AuthenticationError on any forged record, and MalformedInput
    when an entry could not actually have been accepted under the rule.
    """
    genesis, entries = decode_log(data)
    if not genesis.verify():
        raise AuthenticationError("genesis record signature invalid")
    state = MembershipState(epoch=0, members={genesis.creator.peer_id: genesis.creator})
    for proposal, proposer_sig, ballots in entries:
        keys = state.members.get(proposal.proposer)
        if keys is None:
            raise NotAMember("log proposal from a non-member")
        if not idm.verify(proposal.canonical(), proposer_sig, keys.sig_public):
            raise AuthenticationError("log proposal signature invalid")
        yes = no = 0
        seen: set[bytes] = set()
        for ballot in ballots:
            if ballot.proposal_id != proposal.proposal_id or ballot.voter in seen:
                raise MalformedInput("log ballot mismatched or duplicated")
            if ballot.epoch != state.epoch:
                raise MalformedInput("log ballot epoch mismatch")
            voter_keys = state.members.get(ballot.voter)
            if voter_keys is None:
                raise NotAMember("log ballot from a non-member")
            if not idm.verify(ballot.signing_bytes(), ballot.signature, voter_keys.sig_public):
                raise AuthenticationError("log ballot signature invalid")
            seen.add(ballot.voter)
            if ballot.choice == Choice.YES:
                yes += 1
            else:
                no += 1
        if majority_outcome(len(state.members), yes, no, past_deadline=False) != Outcome.ACCEPTED:
            raise MalformedInput("log entry was never acceptable")
        state = apply_effect(state, proposal)
    return state


def _now_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class Tracked:
    """A proposal this replica knows about, with its epoch-frozen electorate."""

    proposal: Proposal
    proposer_sig: bytes
    epoch: int
    electorate: dict[bytes, MemberKeys]
    ballots: dict[bytes, Ballot] = field(default_factory=dict)
    applied: bool = False


class ConsensusEngine:
    """One member's replica of the voting state machine."""

    def __init__(self, genesis_record: GenesisRecord, log: list[LogEntry] | None = None):
        self.genesis_record = genesis_record
        self.log: list[LogEntry] = list(log or [])
        self.state = replay_log(encode_log(genesis_record, self.log))
        self._tracked: dict[bytes, Tracked] = {}

    @classmethod
    def genesis(cls, creator: idm.PeerIdentity, created_at: int | None = None) -> "ConsensusEngine":
        created_at = _now_ms() if created_at is None else created_at
        return cls(GenesisRecord.create(creator, created_at))

    @classmethod
    def from_log(cls, data: bytes) -> "ConsensusEngine":
        genesis, entries = decode_log(data)
        return cls(genesis, entries)

    def encode_log(self) -> bytes:
        return encode_log(self.genesis_record, self.log)

    # ------------------------------------------------------------- proposals

    def propose(
        self,
        kind: Kind,
        subject: Subject,
        proposer: idm.PeerIdentity,
        now: int | None = None,
        ttl_ms: int = DEFAULT_TTL_MS,
    ) -> tuple[Proposal, bytes]:
        now = _now_ms() if now is None else now
        if proposer.peer_id not in self.state.members:
            raise NotAMember("proposer is not a member")
        proposal = Proposal(kind, subject, proposer.peer_id, now, now + ttl_ms)
        self._check_subject(proposal)
        sig = idm.sign(proposal.canonical(), proposer)
        self.receive_proposal(proposal, sig)
        return proposal, sig

    def _check_subject(self, proposal: Proposal) -> None:
        subject = proposal.subject
        kind = proposal.kind
        if proposal.deadline <= proposal.created_at:
            raise MalformedInput("deadline must be after creation")
        if kind == Kind.SET_POLICY:
            if subject.name is None:
                raise MalformedInput("policy proposal needs a name")
            return
        if subject.peer_id is None:
            raise MalformedInput(f"{kind.name} needs a member subject")
        members = self.state.members
        if kind == Kind.ADD_MEMBER:
            if subject.peer_id in members:
                raise MalformedInput("subject is already a member")
            if subject.keys is None:
                raise MalformedInput("adding a member requires their public keys")
        elif subject.peer_id not in members:
            raise MalformedInput("subject is not a member")

    def receive_proposal(self, proposal: Proposal, proposer_sig: bytes) -> None:
        pid = proposal.proposal_id
        if pid in self._tracked:
            return
        keys = self.state.members.get(proposal.proposer)
        if keys is None:
            raise NotAMember("proposal from a non-member")
        if not idm.verify(proposal.canonical(), proposer_sig, keys.sig_public):
            raise AuthenticationError("proposal signature invalid")
        self._check_subject(proposal)
        self._tracked[pid] = Tracked(
            proposal, proposer_sig, epoch=self.state.epoch, electorate=dict(self.state.members)
        )

    def proposals(self) -> list[Tracked]:
        return list(self._tracked.values())

    def get(self, proposal_id: bytes) -> Tracked:
        tracked = self._tracked.get(proposal_id)
        if tracked is None:
            raise NotFound("unknown proposal")
        return tracked

    # --------------------------------------------------------------- ballots

    def cast_vote(
        self,
        proposal_id: bytes,
        choice: Choice,
        voter: idm.PeerIdentity,
        now: int | None = None,
    ) -> Ballot:
        now = _now_ms() if now is None else now
        tracked = self.get(proposal_id)
        if now > tracked.proposal.deadline:
            raise ProposalExpired("proposal deadline has passed")
        if voter.peer_id not in tracked.electorate or voter.peer_id not in self.state.members:
            raise NotAMember("voter is not a member for this proposal")
        ballot = Ballot(proposal_id, voter.peer_id, choice, tracked.epoch)
        ballot = replace(ballot, signature=idm.sign(ballot.signing_bytes(), voter))
        self.receive_ballot(ballot, now)
        return ballot

    def receive_ballot(self, ballot: Ballot, now: int | None = None) -> bool:
        """Record a ballot; returns False when it is ignored.

        The first ballot from a voter binds; later ones, late ones, wrong
        epochs, non-members (including members removed since the proposal's
        epoch), and bad signatures are all dropped.
        """
        now = _now_ms() if now is None else now
        tracked = self._tracked.get(ballot.proposal_id)
        if tracked is None:
            raise NotFound("ballot for unknown proposal")
        if ballot.voter in tracked.ballots:
            return False
        if now > tracked.proposal.deadline:
            return False
        if ballot.epoch != tracked.epoch:
            return False
        keys = tracked.electorate.get(ballot.voter)
        if keys is None or ballot.voter not in self.state.members:
            return False
        if not idm.verify(ballot.signing_bytes(), ballot.signature, keys.sig_public):
            return False
        tracked.ballots[ballot.voter] = ballot
        return True

    # ----------------------------------------------------------------- tally

    def counts(self, proposal_id: bytes) -> tuple[int, int]:
        tracked = self.get(proposal_id)
        yes = sum(1 for b in tracked.ballots.values() if b.choice == Choice.YES)
        no = sum(1 for b in tracked.ballots.values() if b.choice == Choice.NO)
        return yes, no

    def tally(self, proposal_id: bytes, now: int | None = None) -> Outcome:
        now = _now_ms() if now is None else now
        tracked = self.get(proposal_id)
        yes, no = self.counts(proposal_id)
        return majority_outcome(
            len(tracked.electorate), yes, no, past_deadline=now > tracked.proposal.deadline
        )

    # ----------------------------------------------------------------- apply

    def apply(self, proposal_id: bytes, now: int | None = None) -> MembershipState:
        """Fold an accepted proposal into the state; idempotent per proposal."""
        tracked = self.get(proposal_id)
        if tracked.applied:
            return self.state
        if self.tally(proposal_id, now) != Outcome.ACCEPTED:
            raise MalformedInput("cannot apply a proposal that is not accepted")
        if tracked.epoch != self.state.epoch:
            raise MalformedInput("proposal raced another change; re-propose it")
        self.state = apply_effect(self.state, tracked.proposal)
        tracked.applied = True
        self.log.append(
            (tracked.proposal, tracked.proposer_sig, tuple(tracked.ballots.values()))
        )
        return self.state

    # ------------------------------------------------------------------ sync

    def adopt_log(self, data: bytes) -> bool:
        """Adopt a peer's longer verified history; returns True on adoption."""
        genesis, entries = decode_log(data)
        if genesis != self.genesis_record:
            raise AuthenticationError("history from a different swarm genesis")
        candidate = replay_log(data)
        if candidate.epoch <= self.state.epoch:
            return False
        self.log = entries
        self.state = candidate
        for tracked in self._tracked.values():
            if not tracked.applied and tracked.epoch < self.state.epoch:
                tracked.ballots.clear()
        return True
