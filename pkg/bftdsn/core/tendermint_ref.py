"""Unweighted Tendermint, kept as a differential-testing reference.

One validator, one vote; with ``f = (N - 1) // 3`` a quorum is ``N - f`` messages
and a round skip needs ``f + 1``; the proposer is ``validators[(h + r) mod N]``.
Messages are unsigned. With all weights equal to one, ``SwBftCore`` must
produce the same trace as this implementation on the same delivery schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from bftdsn.core.models import Block
from bftdsn.core.swbft import Broadcast, Decide, ScheduleTimeout, Step, round_timeout


@dataclass(frozen=True)
class RefProposal:
    height: int
    round: int
    block: Block
    valid_round: int
    sender: int


@dataclass(frozen=True)
class RefVote:
    height: int
    round: int
    kind: str  # "prevote" | "precommit"
    value: bytes | None
    sender: int


@dataclass
class _Height:
    round: int = 0
    step: Step = Step.PROPOSE
    locked_value: Block | None = None
    locked_round: int = -1
    valid_value: Block | None = None
    valid_round: int = -1
    decision: Block | None = None
    proposals: dict = field(default_factory=dict)
    prevotes: dict = field(default_factory=dict)
    precommits: dict = field(default_factory=dict)
    senders: dict = field(default_factory=dict)
    fired: set = field(default_factory=set)


class TendermintReference:
    def __init__(
        self,
        node_id: int,
        validators: Sequence[int],
        get_value: Callable[[int, int], Block],
        is_valid: Callable[[Block], bool],
        delta_ms: float,
    ) -> None:
        self.node_id = node_id
        self.validators = sorted(validators)
        self.get_value = get_value
        self.is_valid = is_valid
        self.delta = delta_ms
        self.height = 0
        self.h = _Height()
        self.trace: list[tuple] = []
        self._later: list = []

    @property
    def big(self) -> int:
        return len(self.validators) - self.f

    @property
    def f(self) -> int:
        return (len(self.validators) - 1) // 3

    @property
    def small(self) -> int:
        return self.f + 1

    def proposer(self, height: int, round_: int) -> int:
        return self.validators[(height + round_) % len(self.validators)]

    def start_height(self, height: int) -> list:
        self.height = height
        self.h = _Height()
        out: list = []
        self._start_round(0, out)
        pending, self._later = self._later, []
        for message in pending:
            if message.height == height:
                self._store(message)
            elif message.height == height + 1:
                self._later.append(message)
        self._run(out)
        return out

    def receive(self, message: RefProposal | RefVote) -> list:
        out: list = []
        if message.height == self.height + 1:
            self._later.append(message)
            return out
        if message.height != self.height or self.h.decision is not None:
            return out
        self._store(message)
        self._run(out)
        return out

    def on_timeout(self, height: int, round_: int, step: Step) -> list:
        out: list = []
        h = self.h
        if height != self.height or round_ != h.round or h.decision is not None:
            return out
        if step is Step.PROPOSE and h.step is Step.PROPOSE:
            self._broadcast_vote("prevote", None, out)
            h.step = Step.PREVOTE
        elif step is Step.PREVOTE and h.step is Step.PREVOTE:
            self._broadcast_vote("precommit", None, out)
            h.step = Step.PRECOMMIT
        elif step is Step.PRECOMMIT:
            self._start_round(h.round + 1, out)
        self._run(out)
        return out

    def _store(self, message: RefProposal | RefVote) -> None:
        h = self.h
        if isinstance(message, RefProposal):
            if message.sender != self.proposer(self.height, message.round):
                return
            h.proposals.setdefault(message.round, message)
        else:
            book = h.prevotes if message.kind == "prevote" else h.precommits
            book.setdefault(message.round, {}).setdefault(message.sender, message.value)
        h.senders.setdefault(message.round, set()).add(message.sender)

    def _count(self, book: dict, round_: int, value: object = ...) -> int:
        votes = book.get(round_, {})
        if value is ...:
            return len(votes)
        return sum(1 for v in votes.values() if v == value)

    def _start_round(self, round_: int, out: list) -> None:
        h = self.h
        h.round = round_
        h.step = Step.PROPOSE
        if self.proposer(self.height, round_) == self.node_id:
            value = h.valid_value if h.valid_value is not None else self.get_value(self.height, round_)
            proposal = RefProposal(self.height, round_, value, h.valid_round, self.node_id)
            self.trace.append(("proposal", self.height, round_, value.block_hash, h.valid_round))
            out.append(Broadcast(proposal))
            self._store(proposal)
        else:
            out.append(
                ScheduleTimeout(self.height, round_, Step.PROPOSE, round_timeout(self.delta, round_))
            )

    def _broadcast_vote(self, kind: str, value: bytes | None, out: list) -> None:
        vote = RefVote(self.height, self.h.round, kind, value, self.node_id)
        self.trace.append((kind, self.height, self.h.round, value))
        out.append(Broadcast(vote))
        self._store(vote)

    def _run(self, out: list) -> None:
        while self.h.decision is None and self._rules(out):
            pass

    def _rules(self, out: list) -> bool:
        h = self.h
        r = h.round
        p = h.proposals.get(r)

        # upon <PROPOSAL, h, r, v, -1> while step = propose
        if p is not None and h.step is Step.PROPOSE and p.valid_round == -1:
            v = p.block.block_hash
            good = self.is_valid(p.block) and (h.locked_round == -1 or h.locked_value.block_hash == v)
            self._broadcast_vote("prevote", v if good else None, out)
            h.step = Step.PREVOTE
            return True

        # upon <PROPOSAL, h, r, v, vr> and 2f+1 <PREVOTE, h, vr, id(v)>
        if (
            p is not None
            and h.step is Step.PROPOSE
            and 0 <= p.valid_round < r
            and self._count(h.prevotes, p.valid_round, p.block.block_hash) >= self.big
        ):
            v = p.block.block_hash
            good = self.is_valid(p.block) and (
                h.locked_round <= p.valid_round or h.locked_value.block_hash == v
            )
            self._broadcast_vote("prevote", v if good else None, out)
            h.step = Step.PREVOTE
            return True

        # upon 2f+1 <PREVOTE, h, r, *> for the first time
        if (
            h.step is Step.PREVOTE
            and ("prevote-timer", r) not in h.fired
            and self._count(h.prevotes, r) >= self.big
        ):
            h.fired.add(("prevote-timer", r))
            out.append(ScheduleTimeout(self.height, r, Step.PREVOTE, round_timeout(self.delta, r)))

        # upon <PROPOSAL, h, r, v, *> and 2f+1 <PREVOTE, h, r, id(v)> for the first time
        if (
            p is not None
            and h.step >= Step.PREVOTE
            and ("lock", r) not in h.fired
            and self._count(h.prevotes, r, p.block.block_hash) >= self.big
            and self.is_valid(p.block)
        ):
            h.fired.add(("lock", r))
            if h.step is Step.PREVOTE:
                h.locked_value, h.locked_round = p.block, r
                self._broadcast_vote("precommit", p.block.block_hash, out)
                h.step = Step.PRECOMMIT
            h.valid_value, h.valid_round = p.block, r
            return True

        # upon 2f+1 <PREVOTE, h, r, nil> while step = prevote
        if h.step is Step.PREVOTE and self._count(h.prevotes, r, None) >= self.big:
            self._broadcast_vote("precommit", None, out)
            h.step = Step.PRECOMMIT
            return True

        # upon 2f+1 <PRECOMMIT, h, r, *> for the first time
        if ("precommit-timer", r) not in h.fired and self._count(h.precommits, r) >= self.big:
            h.fired.add(("precommit-timer", r))
            out.append(
                ScheduleTimeout(self.height, r, Step.PRECOMMIT, round_timeout(self.delta, r))
            )

        # upon <PROPOSAL, h, r', v, *> and 2f+1 <PRECOMMIT, h, r', id(v)>
        for round_, proposal in sorted(h.proposals.items()):
            v = proposal.block.block_hash
            if self._count(h.precommits, round_, v) >= self.big and self.is_valid(proposal.block):
                h.decision = proposal.block
                h.step = Step.COMMIT
                self.trace.append(("decide", self.height, round_, v))
                out.append(Decide(proposal.block, round_))
                return False

        # upon f+1 <*, h, r', *> with r' > r
        for round_ in sorted(h.senders):
            if round_ > r and len(h.senders[round_]) >= self.small:
                self._start_round(round_, out)
                return True
        return False
