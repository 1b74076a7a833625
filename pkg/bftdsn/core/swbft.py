"""Storage-weighted BFT consensus.

The Tendermint propose/prevote/precommit round structure with locking and
valid-value rules, where every quorum is counted in pledged-sector weight:
``n - f`` for progress and ``f + 1`` for skipping to a higher round. Counting
for height ``h`` uses the weight table committed at ``h - 1``.

``SwBftCore`` is a per-node state machine: each input returns the list of
outputs (broadcasts, timers, decisions, evidence) for the host to act on.
Messages the node sends to itself are processed inside the same call.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Callable, Mapping

from bftdsn.core.codec import wire_type
from bftdsn.core.exceptions import (
    EmptyWeightTableError,
    InvalidVoteSignatureError,
    UnknownVoterError,
)
from bftdsn.core.models import (
    Block,
    EquivocationEvidence,
    Vote,
    VoteStep,
    vote_message,
)
from bftdsn.core.utils import hash_bytes, short_hex, u32, u64
from bftdsn.core.wts import (
    AggregateSignature,
    KeyRing,
    MessageTag,
    PartialSignature,
    SigningKey,
    partial_valid,
    tagged_message,
    wts_aggregate,
    wts_psign,
)

logger = logging.getLogger("bftdsn.sim.consensus")

NIL = None

FUTURE_LIMIT = 4096


class Step(IntEnum):
    PROPOSE = 0
    PREVOTE = 1
    PRECOMMIT = 2
    COMMIT = 3


_VOTE_STEPS = {VoteStep.PREVOTE: Step.PREVOTE, VoteStep.PRECOMMIT: Step.PRECOMMIT}


def proposal_message(height: int, round_: int, block_hash: bytes, valid_round: int) -> bytes:
    return tagged_message(
        MessageTag.VOTE, b"P", u64(height), u32(round_), block_hash, u32(valid_round + 1)
    )


@wire_type(40)
@dataclass(frozen=True)
class Proposal:
    height: int
    round: int
    block: Block
    valid_round: int
    proposer: int
    signature: PartialSignature

    @property
    def message(self) -> bytes:
        return proposal_message(self.height, self.round, self.block.block_hash, self.valid_round)


@dataclass(frozen=True)
class Broadcast:
    message: Proposal | Vote


@dataclass(frozen=True)
class ScheduleTimeout:
    height: int
    round: int
    step: Step
    delay_ms: float


@dataclass(frozen=True)
class Decide:
    block: Block
    round: int


@dataclass(frozen=True)
class ReportEquivocation:
    evidence: EquivocationEvidence


Output = Broadcast | ScheduleTimeout | Decide | ReportEquivocation


@lru_cache(maxsize=256)
def _rotation(weights: tuple[tuple[int, int], ...]) -> tuple[int, ...]:
    """Smooth weighted round-robin over one full cycle of total weight."""
    total = sum(weight for _, weight in weights)
    current = {miner: 0 for miner, _ in weights}
    sequence = []
    for _ in range(total):
        for miner, weight in weights:
            current[miner] += weight
        chosen = max(weights, key=lambda item: (current[item[0]], -item[0]))[0]
        current[chosen] -= total
        sequence.append(chosen)
    return tuple(sequence)


def select_proposer(height: int, round_: int, table: Mapping[int, int]) -> int:
    weights = tuple(sorted((miner, w) for miner, w in table.items() if w > 0))
    if not weights:
        raise EmptyWeightTableError()
    rotation = _rotation(weights)
    return rotation[(height + round_) % len(rotation)]


def round_timeout(delta_ms: float, round_: int) -> float:
    return 4 * delta_ms + delta_ms * round_


@dataclass
class ConsensusState:
    height: int = 0
    round: int = 0
    step: Step = Step.PROPOSE
    locked_block: Block | None = None
    locked_round: int = -1
    valid_block: Block | None = None
    valid_round: int = -1
    votes: dict = field(default_factory=dict)
    proposals: dict = field(default_factory=dict)
    round_senders: dict = field(default_factory=dict)
    decided: Block | None = None
    prevote_timer: set = field(default_factory=set)
    precommit_timer: set = field(default_factory=set)
    lock_done: set = field(default_factory=set)

    def votes_for(self, round_: int, step: VoteStep) -> dict[int, Vote]:
        return self.votes.setdefault((round_, step), {})


class SwBftCore:
    def __init__(
        self,
        node_id: int,
        key: SigningKey,
        propose: Callable[[int, int], Block],
        is_valid: Callable[[Block], bool],
        delta_ms: float,
        future_limit: int = FUTURE_LIMIT,
    ) -> None:
        self.node_id = node_id
        self._key = key
        self._propose = propose
        self._is_valid = is_valid
        self._delta = delta_ms
        self.state = ConsensusState()
        self.ring: KeyRing | None = None
        self.trace: list[tuple] = []
        self._future: deque[Proposal | Vote] = deque()
        self._future_limit = future_limit
        self._valid_cache: dict[bytes, bool] = {}

    @property
    def quorum(self) -> int:
        total = self.ring.total_weight
        return total - (total - 1) // 3

    @property
    def skip_threshold(self) -> int:
        return (self.ring.total_weight - 1) // 3 + 1

    def start_height(self, height: int, ring: KeyRing) -> list[Output]:
        self.state = ConsensusState(height=height)
        self.ring = ring
        self._valid_cache = {}
        out: list[Output] = []
        self._start_round(0, out)
        pending, self._future = self._future, deque()
        for message in pending:
            if message.height == height:
                if isinstance(message, Vote):
                    try:
                        self._check_vote(message)
                    except (UnknownVoterError, InvalidVoteSignatureError):
                        continue
                self._accept(message, out)
            elif message.height == height + 1:
                self._defer(message)
        self._evaluate(out)
        return out

    def on_proposal(self, proposal: Proposal) -> list[Output]:
        out: list[Output] = []
        if self._route(proposal):
            self._accept(proposal, out)
            self._evaluate(out)
        return out

    def on_vote(self, vote: Vote) -> list[Output]:
        out: list[Output] = []
        if self._route(vote):
            self._check_vote(vote)
            self._accept(vote, out)
            self._evaluate(out)
        return out

    def on_timeout(self, height: int, round_: int, step: Step) -> list[Output]:
        out: list[Output] = []
        s = self.state
        if height != s.height or s.decided is not None or round_ != s.round:
            return out
        if step is Step.PROPOSE and s.step is Step.PROPOSE:
            self._vote(VoteStep.PREVOTE, NIL, out)
        elif step is Step.PREVOTE and s.step is Step.PREVOTE:
            self._vote(VoteStep.PRECOMMIT, NIL, out)
        elif step is Step.PRECOMMIT:
            self._start_round(round_ + 1, out)
        self._evaluate(out)
        return out

    def _route(self, message: Proposal | Vote) -> bool:
        """True when the message belongs to the current height."""
        if message.height == self.state.height and self.state.decided is None:
            return True
        if message.height == self.state.height + 1:
            self._defer(message)
        return False

    def _defer(self, message: Proposal | Vote) -> None:
        """Hold a next-height message; the oldest goes once the buffer is full."""
        if len(self._future) >= self._future_limit:
            dropped = self._future.popleft()
            logger.warning(
                "node=%s future buffer full, dropped %s h=%s r=%s",
                self.node_id,
                type(dropped).__name__.lower(),
                dropped.height,
                dropped.round,
            )
        self._future.append(message)

    def _check_vote(self, vote: Vote) -> None:
        if not self.ring.knows(vote.voter):
            raise UnknownVoterError(vote.voter)
        if vote.signature.signer != vote.voter or not partial_valid(
            vote.signature, self.ring, hash_bytes(vote.message)
        ):
            raise InvalidVoteSignatureError(vote.voter)

    def _accept(self, message: Proposal | Vote, out: list[Output]) -> None:
        s = self.state
        if isinstance(message, Proposal):
            expected = select_proposer(s.height, message.round, self.ring.weights)
            if (
                message.proposer != expected
                or message.signature.signer != expected
                or message.block.height != s.height
                or not partial_valid(message.signature, self.ring, hash_bytes(message.message))
            ):
                logger.warning(
                    "node=%s dropped proposal h=%s r=%s from %s",
                    self.node_id,
                    message.height,
                    message.round,
                    message.proposer,
                )
                return
            if message.round in s.proposals:
                return
            s.proposals[message.round] = message
            s.round_senders.setdefault(message.round, set()).add(message.proposer)
            return

        bucket = s.votes_for(message.round, message.step)
        previous = bucket.get(message.voter)
        if previous is not None:
            if previous.block_hash != message.block_hash:
                logger.warning(
                    "node=%s equivocation by %s h=%s r=%s",
                    self.node_id,
                    message.voter,
                    message.height,
                    message.round,
                )
                out.append(ReportEquivocation(EquivocationEvidence(previous, message)))
            return
        bucket[message.voter] = message
        s.round_senders.setdefault(message.round, set()).add(message.voter)

    def _weight(self, round_: int, step: VoteStep, block_hash: bytes | None) -> int:
        bucket = self.state.votes.get((round_, step), {})
        return sum(
            self.ring.weight_of(voter)
            for voter, vote in bucket.items()
            if vote.block_hash == block_hash
        )

    def _weight_any(self, round_: int, step: VoteStep) -> int:
        bucket = self.state.votes.get((round_, step), {})
        return sum(self.ring.weight_of(voter) for voter in bucket)

    def _valid(self, block: Block) -> bool:
        key = block.block_hash
        if key not in self._valid_cache:
            self._valid_cache[key] = bool(self._is_valid(block))
        return self._valid_cache[key]

    def _start_round(self, round_: int, out: list[Output]) -> None:
        s = self.state
        s.round = round_
        s.step = Step.PROPOSE
        proposer = select_proposer(s.height, round_, self.ring.weights)
        if proposer == self.node_id:
            block = s.valid_block if s.valid_block is not None else self._propose(s.height, round_)
            message = proposal_message(s.height, round_, block.block_hash, s.valid_round)
            proposal = Proposal(
                height=s.height,
                round=round_,
                block=block,
                valid_round=s.valid_round,
                proposer=self.node_id,
                signature=wts_psign(message, self._key),
            )
            self.trace.append(("proposal", s.height, round_, block.block_hash, s.valid_round))
            out.append(Broadcast(proposal))
            self._accept(proposal, out)
        else:
            out.append(
                ScheduleTimeout(s.height, round_, Step.PROPOSE, round_timeout(self._delta, round_))
            )

    def _vote(self, step: VoteStep, block_hash: bytes | None, out: list[Output]) -> None:
        s = self.state
        message = vote_message(s.height, s.round, step, block_hash)
        vote = Vote(
            height=s.height,
            round=s.round,
            step=step,
            block_hash=block_hash,
            voter=self.node_id,
            signature=wts_psign(message, self._key),
        )
        s.step = _VOTE_STEPS[step]
        self.trace.append((step.name.lower(), s.height, s.round, block_hash))
        out.append(Broadcast(vote))
        if self.ring.knows(self.node_id):
            self._accept(vote, out)

    def _evaluate(self, out: list[Output]) -> None:
        changed = True
        while changed and self.state.decided is None:
            changed = self._step_once(out)

    def _step_once(self, out: list[Output]) -> bool:
        s = self.state
        r = s.round
        quorum = self.quorum
        proposal = s.proposals.get(r)

        if s.step is Step.PROPOSE and proposal is not None:
            block, vr = proposal.block, proposal.valid_round
            digest = block.block_hash
            if vr == -1:
                accept = self._valid(block) and (
                    s.locked_round == -1 or s.locked_block.block_hash == digest
                )
                self._vote(VoteStep.PREVOTE, digest if accept else NIL, out)
                return True
            if 0 <= vr < r and self._weight(vr, VoteStep.PREVOTE, digest) >= quorum:
                accept = self._valid(block) and (
                    s.locked_round <= vr or s.locked_block.block_hash == digest
                )
                self._vote(VoteStep.PREVOTE, digest if accept else NIL, out)
                return True

        if (
            s.step is Step.PREVOTE
            and r not in s.prevote_timer
            and self._weight_any(r, VoteStep.PREVOTE) >= quorum
        ):
            s.prevote_timer.add(r)
            out.append(ScheduleTimeout(s.height, r, Step.PREVOTE, round_timeout(self._delta, r)))

        if (
            proposal is not None
            and s.step >= Step.PREVOTE
            and r not in s.lock_done
            and self._weight(r, VoteStep.PREVOTE, proposal.block.block_hash) >= quorum
            and self._valid(proposal.block)
        ):
            s.lock_done.add(r)
            if s.step is Step.PREVOTE:
                s.locked_block, s.locked_round = proposal.block, r
                self._vote(VoteStep.PRECOMMIT, proposal.block.block_hash, out)
            s.valid_block, s.valid_round = proposal.block, r
            return True

        if s.step is Step.PREVOTE and self._weight(r, VoteStep.PREVOTE, NIL) >= quorum:
            self._vote(VoteStep.PRECOMMIT, NIL, out)
            return True

        if r not in s.precommit_timer and self._weight_any(r, VoteStep.PRECOMMIT) >= quorum:
            s.precommit_timer.add(r)
            out.append(
                ScheduleTimeout(s.height, r, Step.PRECOMMIT, round_timeout(self._delta, r))
            )

        for round_, candidate in sorted(s.proposals.items()):
            digest = candidate.block.block_hash
            if (
                self._weight(round_, VoteStep.PRECOMMIT, digest) >= quorum
                and self._valid(candidate.block)
            ):
                self._decide(candidate.block, round_, out)
                return False

        for round_ in sorted(s.round_senders):
            if round_ <= r:
                continue
            weight = sum(self.ring.weight_of(sender) for sender in s.round_senders[round_])
            if weight >= self.skip_threshold:
                self._start_round(round_, out)
                return True
        return False

    def _decide(self, block: Block, round_: int, out: list[Output]) -> None:
        s = self.state
        bucket = s.votes.get((round_, VoteStep.PRECOMMIT), {})
        parts = [
            vote.signature for vote in bucket.values() if vote.block_hash == block.block_hash
        ]
        certificate: AggregateSignature = wts_aggregate(parts, self.ring)
        committed = block.with_certificate(round_, certificate)
        s.decided = committed
        s.step = Step.COMMIT
        self.trace.append(("decide", s.height, round_, block.block_hash))
        logger.debug(
            "node=%s committed h=%s r=%s block=%s txs=%s",
            self.node_id,
            s.height,
            round_,
            short_hex(block.block_hash),
            len(block.txs),
        )
        out.append(Decide(committed, round_))
