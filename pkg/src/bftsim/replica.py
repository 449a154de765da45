"""Per-replica protocol state machine.

Pure and deterministic: every handler consumes one input (a delivered
message or a timer expiry) and returns a list of output actions for the
network layer to execute.  No clocks, no randomness, no I/O in here.

Two commit variants are supported (three adjacent certified blocks vs two)
and two pacemakers (timeout-certificate round sync vs the asynchronous
fallback view-change with coin-based leader election).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from . import crypto
from .core import (AnyBlock, CoinQC, CoinQCRelay, CoinShare, FallbackBlock,
                   FallbackQC, FallbackTC, FBProposal, FBVote, FQCRelay,
                   FTCRelay, ParentCert, Proposal, QC, Rank, TCRelay, Timeout,
                   TimeoutCert, TxnBatch, Vote, WireMessage, ZERO_RANK,
                   block_id_of, fallback_block_id_of, genesis_block,
                   genesis_qc, is_endorsed, make_block, make_fallback_block,
                   max_cert, rank_of)

THREE_CHAIN = "three_chain"
TWO_CHAIN = "two_chain"
VARIANTS = (THREE_CHAIN, TWO_CHAIN)

BASELINE_TC = "baseline_tc"
ASYNC_FALLBACK = "async_fallback"
PACEMAKERS = (BASELINE_TC, ASYNC_FALLBACK)

PENDING_CAP = 1024  # buffered out-of-order messages per peer


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReplicaConfig:
    n: int
    f: int
    variant: str = THREE_CHAIN
    pacemaker: str = ASYNC_FALLBACK
    timeout_duration: int = 50
    leader_rotation_period: int = 4
    adopt_foreign_fchains: bool = False
    run_seed: int = 0

    def validate(self) -> None:
        if self.f < 1:
            raise ConfigError(f"f must be >= 1, got {self.f}")
        if self.n != 3 * self.f + 1:
            raise ConfigError(f"n must equal 3f+1: n={self.n}, f={self.f}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant: {self.variant}")
        if self.pacemaker not in PACEMAKERS:
            raise ConfigError(f"unknown pacemaker: {self.pacemaker}")
        if self.timeout_duration < 1:
            raise ConfigError("timeout_duration must be >= 1")
        if self.leader_rotation_period < 1:
            raise ConfigError("leader_rotation_period must be >= 1")

    @property
    def quorum(self) -> int:
        return crypto.quorum_threshold(self.f)

    @property
    def adopts(self) -> bool:
        # the 2-chain variant is only live if replicas extend foreign chains
        return self.variant == TWO_CHAIN or self.adopt_foreign_fchains

    @property
    def fallback_top_height(self) -> int:
        return 2 if self.variant == TWO_CHAIN else 3


# --- output actions --------------------------------------------------------


@dataclass(frozen=True)
class Send:
    to: int
    msg: WireMessage


@dataclass(frozen=True)
class Multicast:
    msg: WireMessage


@dataclass(frozen=True)
class SetTimer:
    round: int
    duration: int


@dataclass(frozen=True)
class CancelTimers:
    pass


@dataclass(frozen=True)
class CommitNotice:
    block_ids: tuple[str, ...]  # newly committed, oldest first


OutputAction = Union[Send, Multicast, SetTimer, CancelTimers, CommitNotice]


# --- replica state ---------------------------------------------------------


@dataclass
class ReplicaState:
    """Protocol variables plus bookkeeping (stores, share buckets, buffers)."""

    voted_round: int = 0
    locked_rank: Rank = ZERO_RANK
    current_round: int = 1
    current_view: int = 0
    high_qc: ParentCert = None  # set in Replica.__init__
    in_fallback: bool = False
    fallback_voted_round: dict[int, int] = field(default_factory=dict)
    fallback_voted_height: dict[int, int] = field(default_factory=dict)
    committed: list[str] = field(default_factory=list)

    # stores
    blocks: dict[str, AnyBlock] = field(default_factory=dict)
    qc_by_block: dict[str, QC] = field(default_factory=dict)
    fqc_by_key: dict[tuple, FallbackQC] = field(default_factory=dict)
    fqc_by_block: dict[str, FallbackQC] = field(default_factory=dict)
    coin_history: dict[int, CoinQC] = field(default_factory=dict)
    fallback_ftc: dict[int, FallbackTC] = field(default_factory=dict)

    # share buckets
    vote_shares: dict[tuple, dict[int, crypto.Share]] = field(default_factory=dict)
    fvote_shares: dict[tuple, dict[int, crypto.Share]] = field(default_factory=dict)
    timeout_round_shares: dict[int, dict[int, crypto.Share]] = field(default_factory=dict)
    timeout_view_shares: dict[int, dict[int, crypto.Share]] = field(default_factory=dict)
    coin_shares: dict[int, dict[int, crypto.Share]] = field(default_factory=dict)
    certs_formed: set[tuple] = field(default_factory=set)
    tcs_formed: set[int] = field(default_factory=set)

    # one-shot markers
    seen_proposals: dict[tuple, str] = field(default_factory=dict)
    entered_fallback_view: int = -1
    proposed_f_heights: dict[int, set[int]] = field(default_factory=dict)
    reacted_f_heights: dict[int, set[int]] = field(default_factory=dict)
    relayed_top_fqc: set[int] = field(default_factory=set)
    completion_marks: dict[int, set[int]] = field(default_factory=dict)
    coin_share_sent: set[int] = field(default_factory=set)
    coin_relayed: set[int] = field(default_factory=set)

    voting_stopped: bool = False
    timer_round: Optional[int] = None

    # commit machinery
    committed_set: set[str] = field(default_factory=set)
    commit_frontier: set[str] = field(default_factory=set)

    # out-of-order buffers
    pending: dict[tuple, list[tuple[int, WireMessage]]] = field(default_factory=dict)
    pending_per_sender: dict[int, int] = field(default_factory=dict)
    pending_rank_locks: dict[str, list[ParentCert]] = field(default_factory=dict)

    dropped: dict[str, int] = field(default_factory=dict)


class Replica:
    """One replica.  Feed it messages/timer expiries, collect actions."""

    def __init__(self, config: ReplicaConfig, rid: int,
                 payload_valid: Optional[Callable[[TxnBatch], bool]] = None):
        config.validate()
        self.config = config
        self.rid = rid
        self.payload_valid = payload_valid or (lambda batch: True)
        self.genesis = genesis_block()
        self.genesis_qc = genesis_qc(config.n)
        st = ReplicaState()
        st.high_qc = self.genesis_qc
        st.fallback_voted_round = {j: 0 for j in range(config.n)}
        st.fallback_voted_height = {j: 0 for j in range(config.n)}
        st.blocks[self.genesis.id] = self.genesis
        st.qc_by_block[self.genesis.id] = self.genesis_qc
        self.state = st

    # --- helpers -----------------------------------------------------------

    def leader_of(self, round: int) -> int:
        period = self.config.leader_rotation_period
        return ((round - 1) // period) % self.config.n

    def _drop(self, reason: str) -> list[OutputAction]:
        self.state.dropped[reason] = self.state.dropped.get(reason, 0) + 1
        return []

    def _verify(self, cert) -> bool:
        return crypto.verify_certificate(cert, self.config.n, self.config.f,
                                         run_seed=self.config.run_seed)

    def _certified_or_endorsed(self, block_id: str) -> bool:
        st = self.state
        if block_id in st.qc_by_block:
            return True
        fqc = st.fqc_by_block.get(block_id)
        return fqc is not None and is_endorsed(fqc, st.coin_history)

    def _buffer(self, key: tuple, sender: int, msg: WireMessage) -> list[OutputAction]:
        st = self.state
        if st.pending_per_sender.get(sender, 0) >= PENDING_CAP:
            return self._drop("buffer_overflow")
        st.pending.setdefault(key, []).append((sender, msg))
        st.pending_per_sender[sender] = st.pending_per_sender.get(sender, 0) + 1
        return []

    def _redispatch(self, key: tuple) -> list[OutputAction]:
        st = self.state
        acts: list[OutputAction] = []
        for sender, msg in st.pending.pop(key, []):
            st.pending_per_sender[sender] -= 1
            acts += self.handle_message(msg, sender)
        return acts

    def _purge_stale_views(self) -> None:
        st = self.state
        v_cur = st.current_view
        for key in [k for k in st.pending if k[0] in ("enterfb", "view", "coinqc") and k[1] < v_cur]:
            for sender, _ in st.pending.pop(key):
                st.pending_per_sender[sender] -= 1
                st.dropped["stale_view"] = st.dropped.get("stale_view", 0) + 1
        for d in (st.timeout_view_shares, st.coin_shares):
            for v in [v for v in d if v < v_cur]:
                del d[v]
        # fallback blocks of closed views can no longer become endorsed
        for bid in [b for b in st.commit_frontier
                    if isinstance(st.blocks[b], FallbackBlock)
                    and st.blocks[b].view < v_cur
                    and not self._certified_or_endorsed(b)]:
            st.commit_frontier.discard(bid)

    def _store_body(self, block: AnyBlock) -> None:
        st = self.state
        if block.id in st.blocks:
            return
        st.blocks[block.id] = block
        if st.pending_rank_locks.pop(block.id, None) is not None:
            self._apply_lock_rank(block)
        if self._certified_or_endorsed(block.id):
            st.commit_frontier.add(block.id)

    def _apply_lock_rank(self, certified_body: AnyBlock) -> None:
        # 3-chain lock: rank of the certificate inside the certified block
        st = self.state
        r = rank_of(certified_body.parent_qc, st.coin_history)
        if r > st.locked_rank:
            st.locked_rank = r

    def _register_qc(self, qc: QC) -> None:
        st = self.state
        if qc.block_id not in st.qc_by_block:
            st.qc_by_block[qc.block_id] = qc
            if qc.block_id in st.blocks:
                st.commit_frontier.add(qc.block_id)

    # --- lifecycle ---------------------------------------------------------

    def init(self) -> list[OutputAction]:
        st = self.state
        st.timer_round = 1
        acts: list[OutputAction] = [SetTimer(1, self.config.timeout_duration)]
        if self.leader_of(1) == self.rid:
            acts += self._propose()
        return acts

    def handle_message(self, msg: WireMessage, sender: int) -> list[OutputAction]:
        if isinstance(msg, Proposal):
            return self.handle_proposal(msg, sender)
        if isinstance(msg, Vote):
            return self.handle_vote(msg, sender)
        if isinstance(msg, Timeout):
            return self.handle_timeout_msg(msg, sender)
        if isinstance(msg, TCRelay):
            return self.handle_tc_relay(msg, sender)
        if isinstance(msg, FTCRelay):
            return self.handle_ftc_relay(msg, sender)
        if isinstance(msg, FBProposal):
            return self.handle_fblock(msg, sender)
        if isinstance(msg, FBVote):
            return self.handle_fvote(msg, sender)
        if isinstance(msg, FQCRelay):
            return self.handle_fqc_relay(msg, sender)
        if isinstance(msg, (CoinShare, CoinQCRelay)):
            return self.handle_coin(msg, sender)
        return self._drop("unknown_message")

    # --- steady state ------------------------------------------------------

    def _propose(self) -> list[OutputAction]:
        st = self.state
        parent = st.high_qc
        payload = TxnBatch(f"p{self.rid}-r{st.current_round}-v{st.current_view}", 256)
        block = make_block(parent, st.current_round, st.current_view, payload)
        evidence = None
        if isinstance(parent, FallbackQC):
            evidence = st.coin_history.get(parent.view)
        self._store_body(block)
        return [Multicast(Proposal(block, self.rid, evidence))]

    def handle_proposal(self, p: Proposal, sender: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        b = p.block
        if p.sender != sender or b.round < 1 or b.parent_qc is None:
            return self._drop("malformed_proposal")
        if sender != self.leader_of(b.round):
            return self._drop("wrong_leader")
        if b.id != block_id_of(b.parent_qc, b.round, b.view, b.payload):
            return self._drop("bad_block_digest")

        acts: list[OutputAction] = []
        if p.coin_qc is not None:
            acts += self._accept_coin(p.coin_qc)

        parent = b.parent_qc
        if not self._verify(parent):
            return self._drop("bad_parent_cert") + acts
        if isinstance(parent, FallbackQC):
            acts += self._register_fqc(parent)
            if parent.view not in st.coin_history:
                # endorsement undecidable until the view's coin arrives
                return acts + self._buffer(("coinqc", parent.view), sender, p)
            if not is_endorsed(parent, st.coin_history):
                return self._drop("unendorsed_parent") + acts

        self._store_body(b)
        acts += self.lock_update(parent)

        # vote decision: first proposal from this round's leader only
        first_id = st.seen_proposals.setdefault((b.round, sender), b.id)
        if first_id != b.id:
            return self._drop("conflicting_proposal") + acts
        if b.round != st.current_round or b.view != st.current_view:
            return acts
        if st.voting_stopped or b.round <= st.voted_round:
            return acts
        if cfg.pacemaker == ASYNC_FALLBACK:
            if st.in_fallback:
                return acts
            if b.round != parent.round + 1:
                return acts
        if rank_of(parent, st.coin_history) < st.locked_rank:
            return self._drop("lock_violation") + acts
        if not self.payload_valid(b.payload):
            return self._drop("invalid_payload") + acts
        st.voted_round = b.round
        nxt = self.leader_of(b.round + 1)
        acts.append(Send(nxt, Vote(b.id, b.round, b.view, self.rid)))
        return acts

    def handle_vote(self, v: Vote, sender: int) -> list[OutputAction]:
        st = self.state
        if v.voter != sender:
            return self._drop("forged_vote")
        if self.leader_of(v.round + 1) != self.rid:
            return self._drop("misdirected_vote")
        message = crypto.vote_message(v.block_id, v.round, v.view)
        bucket = st.vote_shares.setdefault(message, {})
        bucket.setdefault(sender, crypto.make_share(message, sender, "vote"))
        if len(bucket) >= self.config.quorum and message not in st.certs_formed:
            st.certs_formed.add(message)
            qc = crypto.combine(bucket.values(), self.config.quorum)
            return self.lock_update(qc)
        return []

    def lock_update(self, cert: ParentCert) -> list[OutputAction]:
        """Process a newly seen certificate: rank lock, high qc, round, commit."""
        st, cfg = self.state, self.config
        acts: list[OutputAction] = []
        if isinstance(cert, QC):
            self._register_qc(cert)
        else:
            acts += self._register_fqc(cert)
            if not is_endorsed(cert, st.coin_history):
                # only certificates usable as block parents move the lock
                return acts
        if cfg.variant == THREE_CHAIN:
            body = st.blocks.get(cert.block_id)
            if body is None:
                st.pending_rank_locks.setdefault(cert.block_id, []).append(cert)
            else:
                self._apply_lock_rank(body)
        else:
            r = rank_of(cert, st.coin_history)
            if r > st.locked_rank:
                st.locked_rank = r
        st.high_qc = max_cert(st.high_qc, cert, st.coin_history)
        acts += self.advance_round(cert)
        acts += self.try_commit()
        return acts

    def advance_round(self, trigger) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if isinstance(trigger, TimeoutCert):
            if cfg.pacemaker != BASELINE_TC:
                return []  # fallback pacemaker advances on certificates only
            tc: Optional[TimeoutCert] = trigger
        else:
            tc = None
        new_round = trigger.round + 1
        if new_round <= st.current_round:
            return []
        st.current_round = new_round
        return self._enter_round(tc)

    def _enter_round(self, tc: Optional[TimeoutCert]) -> list[OutputAction]:
        st, cfg = self.state, self.config
        st.voting_stopped = False
        st.timer_round = st.current_round
        acts: list[OutputAction] = [CancelTimers(),
                                    SetTimer(st.current_round, cfg.timeout_duration)]
        leader = self.leader_of(st.current_round)
        if tc is not None and leader != self.rid:
            acts.append(Send(leader, TCRelay(tc, self.rid)))
        if leader == self.rid:
            acts += self._propose()
        for key in [k for k in st.seen_proposals if k[0] < st.current_round]:
            del st.seen_proposals[key]
        return acts

    def try_commit(self) -> list[OutputAction]:
        st = self.state
        acts: list[OutputAction] = []
        for top_id in sorted(st.commit_frontier):
            target = self._commit_target(top_id)
            if target is not None:
                acts += self._commit(target)
        return acts

    def _commit_target(self, top_id: str) -> Optional[str]:
        st = self.state
        blk = st.blocks.get(top_id)
        if blk is None or blk.parent_qc is None:
            return None
        parent = st.blocks.get(blk.parent_qc.block_id)
        if parent is None or not self._certified_or_endorsed(parent.id):
            return None
        if blk.round != parent.round + 1 or blk.view != parent.view:
            return None
        if self.config.variant == TWO_CHAIN:
            return parent.id if parent.id not in st.committed_set else None
        if parent.parent_qc is None:
            return None
        grand = st.blocks.get(parent.parent_qc.block_id)
        if grand is None or not self._certified_or_endorsed(grand.id):
            return None
        if parent.round != grand.round + 1 or parent.view != grand.view:
            return None
        return grand.id if grand.id not in st.committed_set else None

    def _commit(self, target_id: str) -> list[OutputAction]:
        st = self.state
        chain: list[str] = []
        cur = target_id
        while cur != self.genesis.id and cur not in st.committed_set:
            body = st.blocks.get(cur)
            if body is None:
                return []  # ancestor body missing; retried when it arrives
            chain.append(cur)
            cur = body.parent_qc.block_id if body.parent_qc else self.genesis.id
        if not chain:
            return []
        chain.reverse()
        st.committed.extend(chain)
        st.committed_set.update(chain)
        for bid in chain:
            st.commit_frontier.discard(bid)
        return [CommitNotice(tuple(chain))]

    # --- pacemaker ---------------------------------------------------------

    def handle_timer_expiry(self, round: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if round != st.current_round or st.timer_round != round:
            return []
        st.timer_round = None
        if cfg.pacemaker == BASELINE_TC:
            st.voting_stopped = True
            return [Multicast(Timeout(st.current_round, None, st.high_qc, self.rid))]
        st.in_fallback = True
        return [Multicast(Timeout(None, st.current_view, st.high_qc, self.rid))]

    def handle_timeout_msg(self, t: Timeout, sender: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if t.sender != sender:
            return self._drop("forged_timeout")
        if not self._verify(t.high_qc):
            return self._drop("bad_timeout_cert")
        acts = self._lock_carried_cert(t.high_qc)
        if cfg.pacemaker == BASELINE_TC:
            if t.round is None:
                return self._drop("malformed_timeout") + acts
            bucket = st.timeout_round_shares.setdefault(t.round, {})
            message = crypto.timeout_round_message(t.round)
            bucket.setdefault(sender, crypto.make_share(message, sender, "timeout_round"))
            if len(bucket) >= cfg.quorum and t.round not in st.tcs_formed:
                st.tcs_formed.add(t.round)
                tc = crypto.combine(bucket.values(), cfg.quorum)
                acts += self.advance_round(tc)
            return acts
        if t.view is None:
            return self._drop("malformed_timeout") + acts
        if t.view < st.current_view:
            return acts  # stale share; the carried certificate was still useful
        bucket = st.timeout_view_shares.setdefault(t.view, {})
        message = crypto.timeout_view_message(t.view)
        bucket.setdefault(sender, crypto.make_share(message, sender, "timeout_view"))
        if len(bucket) >= cfg.quorum and st.entered_fallback_view < t.view:
            ftc = crypto.combine(bucket.values(), cfg.quorum)
            acts += self.enter_fallback(ftc)
        return acts

    def _lock_carried_cert(self, cert: ParentCert) -> list[OutputAction]:
        st = self.state
        if isinstance(cert, FallbackQC):
            acts = self._register_fqc(cert)
            if cert.view not in st.coin_history:
                # park: endorsement may be decided by a later coin
                return acts
            if not is_endorsed(cert, st.coin_history):
                return acts
            return acts + self.lock_update(cert)
        return self.lock_update(cert)

    def handle_tc_relay(self, m: TCRelay, sender: int) -> list[OutputAction]:
        if self.config.pacemaker != BASELINE_TC:
            return self._drop("unexpected_tc")
        if not self._verify(m.tc):
            return self._drop("bad_tc")
        return self.advance_round(m.tc)

    # --- fallback ----------------------------------------------------------

    def enter_fallback(self, ftc: FallbackTC) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if ftc.view < st.current_view or st.entered_fallback_view >= ftc.view:
            return []
        if not self._verify(ftc):
            return self._drop("bad_ftc")
        st.in_fallback = True
        st.current_view = ftc.view
        st.entered_fallback_view = ftc.view
        st.fallback_ftc.setdefault(ftc.view, ftc)
        st.fallback_voted_round = {j: 0 for j in range(cfg.n)}
        st.fallback_voted_height = {j: 0 for j in range(cfg.n)}
        self._purge_stale_views()
        payload = TxnBatch(f"f{self.rid}-v{ftc.view}-h1", 256)
        fb = make_fallback_block(st.high_qc, st.high_qc.round + 1, ftc.view,
                                 payload, 1, self.rid)
        self._store_body(fb)
        st.proposed_f_heights.setdefault(ftc.view, set()).add(1)
        acts: list[OutputAction] = [Multicast(FTCRelay(ftc, self.rid)),
                                    Multicast(FBProposal(fb, ftc))]
        acts += self._redispatch(("enterfb", ftc.view))
        acts += self._redispatch(("view", ftc.view))
        return acts

    def handle_ftc_relay(self, m: FTCRelay, sender: int) -> list[OutputAction]:
        # recorded for height-1 vote validation; entry itself is share-driven
        if not self._verify(m.ftc):
            return self._drop("bad_ftc")
        self.state.fallback_ftc.setdefault(m.ftc.view, m.ftc)
        return []

    def _propose_fallback(self, view: int, height: int,
                          parent: ParentCert) -> list[OutputAction]:
        st = self.state
        proposed = st.proposed_f_heights.setdefault(view, set())
        if height in proposed:
            return []
        proposed.add(height)
        payload = TxnBatch(f"f{self.rid}-v{view}-h{height}", 256)
        fb = make_fallback_block(parent, parent.round + 1, view, payload,
                                 height, self.rid)
        self._store_body(fb)
        return [Multicast(FBProposal(fb, None))]

    def _register_fqc(self, fqc: FallbackQC) -> list[OutputAction]:
        st, cfg = self.state, self.config
        key = (fqc.view, fqc.proposer, fqc.height)
        if key in st.fqc_by_key:
            return []
        if not self._verify(fqc):
            return self._drop("bad_fqc")
        st.fqc_by_key[key] = fqc
        st.fqc_by_block[fqc.block_id] = fqc
        if fqc.block_id in st.blocks and is_endorsed(fqc, st.coin_history):
            st.commit_frontier.add(fqc.block_id)
        acts: list[OutputAction] = []
        in_own_fallback = (st.in_fallback and fqc.view == st.current_view
                           and st.entered_fallback_view == fqc.view)
        if in_own_fallback:
            acts += self._fallback_reactions(fqc)
        if (cfg.variant == THREE_CHAIN and fqc.view == st.current_view
                and fqc.height == cfg.fallback_top_height):
            marks = st.completion_marks.setdefault(fqc.view, set())
            marks.add(fqc.proposer)
            acts += self._maybe_coin_share(fqc.view)
        return acts

    def _fallback_reactions(self, fqc: FallbackQC) -> list[OutputAction]:
        st, cfg = self.state, self.config
        top = cfg.fallback_top_height
        acts: list[OutputAction] = []
        if cfg.adopts:
            reacted = st.reacted_f_heights.setdefault(fqc.view, set())
            if fqc.height not in reacted:
                reacted.add(fqc.height)
                if fqc.height < top:
                    acts += self._propose_fallback(fqc.view, fqc.height + 1, fqc)
                elif cfg.variant == TWO_CHAIN:
                    # counter-sign the first completed chain top and spread it
                    acts.append(Multicast(FQCRelay(fqc, self.rid)))
        elif fqc.proposer == self.rid and fqc.height < top:
            acts += self._propose_fallback(fqc.view, fqc.height + 1, fqc)
        if (cfg.variant == THREE_CHAIN and fqc.height == top
                and fqc.proposer == self.rid
                and fqc.view not in st.relayed_top_fqc):
            st.relayed_top_fqc.add(fqc.view)
            acts.append(Multicast(FQCRelay(fqc, self.rid)))
        return acts

    def handle_fblock(self, m: FBProposal, sender: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        fb = m.fblock
        if fb.proposer != sender:
            return self._drop("forged_fblock")
        if not 1 <= fb.height <= cfg.fallback_top_height or fb.parent_qc is None:
            return self._drop("malformed_fblock")
        if fb.id != fallback_block_id_of(fb.parent_qc, fb.round, fb.view,
                                         fb.payload, fb.height, fb.proposer):
            return self._drop("bad_block_digest")

        acts: list[OutputAction] = []
        if m.ftc is not None and self._verify(m.ftc):
            st.fallback_ftc.setdefault(m.ftc.view, m.ftc)

        parent = fb.parent_qc
        if not self._verify(parent):
            return self._drop("bad_parent_cert") + acts
        if fb.height == 1:
            if isinstance(parent, FallbackQC):
                acts += self._register_fqc(parent)
                if parent.view not in st.coin_history:
                    return acts + self._buffer(("coinqc", parent.view), sender, m)
                if not is_endorsed(parent, st.coin_history):
                    return self._drop("unendorsed_parent") + acts
            self._store_body(fb)
            acts += self.lock_update(parent)
        else:
            if not isinstance(parent, FallbackQC) or parent.view != fb.view \
                    or parent.height != fb.height - 1:
                return self._drop("malformed_fblock") + acts
            self._store_body(fb)
            acts += self._register_fqc(parent)

        # vote decision
        if not (st.in_fallback and st.entered_fallback_view == fb.view
                and st.current_view == fb.view):
            if fb.view >= st.current_view and st.entered_fallback_view < fb.view:
                return acts + self._buffer(("enterfb", fb.view), sender, m)
            return acts  # stale view
        if fb.height <= st.fallback_voted_height[fb.proposer]:
            return acts
        if fb.height == 1:
            if fb.view not in st.fallback_ftc:
                return acts
            if fb.round != parent.round + 1:
                return acts
            if rank_of(parent, st.coin_history) < st.locked_rank:
                return self._drop("lock_violation") + acts
        else:
            if not cfg.adopts and parent.proposer != fb.proposer:
                return acts
            if fb.round != parent.round + 1:
                return acts
            if fb.round <= st.fallback_voted_round[fb.proposer]:
                return acts
        st.fallback_voted_round[fb.proposer] = fb.round
        st.fallback_voted_height[fb.proposer] = fb.height
        acts.append(Send(fb.proposer, FBVote(fb.id, fb.round, fb.view,
                                             fb.height, fb.proposer, self.rid)))
        return acts

    def handle_fvote(self, v: FBVote, sender: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if v.voter != sender:
            return self._drop("forged_vote")
        if v.proposer != self.rid:
            return self._drop("misdirected_vote")
        message = crypto.fallback_vote_message(v.block_id, v.round, v.view,
                                               v.height, v.proposer)
        bucket = st.fvote_shares.setdefault(message, {})
        bucket.setdefault(sender, crypto.make_share(message, sender, "fallback_vote"))
        if len(bucket) >= cfg.quorum and message not in st.certs_formed:
            st.certs_formed.add(message)
            fqc = crypto.combine(bucket.values(), cfg.quorum)
            return self._register_fqc(fqc)
        return []

    def handle_fqc_relay(self, m: FQCRelay, sender: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        fqc = m.fqc
        if not self._verify(fqc):
            return self._drop("bad_fqc")
        if fqc.view > st.current_view:
            return self._buffer(("view", fqc.view), sender, m)
        acts: list[OutputAction] = []
        if (cfg.variant == TWO_CHAIN and fqc.height == cfg.fallback_top_height
                and fqc.view == st.current_view):
            marks = st.completion_marks.setdefault(fqc.view, set())
            marks.add(sender)  # distinct counter-signers trigger the election
            acts += self._maybe_coin_share(fqc.view)
        acts += self._register_fqc(fqc)
        return acts

    def _maybe_coin_share(self, view: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        marks = st.completion_marks.get(view, set())
        if len(marks) < cfg.quorum or view in st.coin_share_sent:
            return []
        st.coin_share_sent.add(view)
        return [Multicast(CoinShare(view, self.rid))]

    def handle_coin(self, m: Union[CoinShare, CoinQCRelay],
                    sender: int) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if isinstance(m, CoinQCRelay):
            if m.coin_qc.view > st.current_view:
                return self._buffer(("view", m.coin_qc.view), sender, m)
            return self._accept_coin(m.coin_qc)
        if m.signer != sender:
            return self._drop("forged_coin_share")
        if m.view < st.current_view:
            return []
        if m.view > st.current_view:
            return self._buffer(("view", m.view), sender, m)
        bucket = st.coin_shares.setdefault(m.view, {})
        message = crypto.coin_message(m.view)
        bucket.setdefault(sender, crypto.make_share(message, sender, "coin"))
        if len(bucket) >= crypto.coin_threshold(cfg.f) and m.view not in st.coin_history:
            coin = crypto.combine(bucket.values(), crypto.coin_threshold(cfg.f),
                                  run_seed=cfg.run_seed, n=cfg.n)
            return self._accept_coin(coin)
        return []

    def _accept_coin(self, coin: CoinQC) -> list[OutputAction]:
        st, cfg = self.state, self.config
        if coin.view in st.coin_history:
            return []
        if not self._verify(coin):
            return self._drop("bad_coin")
        st.coin_history[coin.view] = coin
        for (fv, proposer, _h), fqc in st.fqc_by_key.items():
            if fv == coin.view and proposer == coin.elected and fqc.block_id in st.blocks:
                st.commit_frontier.add(fqc.block_id)
        acts: list[OutputAction] = []
        if coin.view not in st.coin_relayed:
            st.coin_relayed.add(coin.view)
            acts.append(Multicast(CoinQCRelay(coin, self.rid)))
        if coin.view == st.current_view:
            # exit the fallback (or skip the view if never entered)
            if st.in_fallback:
                st.voted_round = st.fallback_voted_round[coin.elected]
            st.in_fallback = False
            st.current_view = coin.view + 1
            self._purge_stale_views()
            best = None
            for h in range(cfg.fallback_top_height, 0, -1):
                best = st.fqc_by_key.get((coin.view, coin.elected, h))
                if best is not None:
                    break
            if best is not None:
                acts += self.lock_update(best)
            acts += self.try_commit()
            if st.timer_round != st.current_round:
                # keep a timer live so an unlucky election retries the view
                st.timer_round = st.current_round
                acts += [CancelTimers(),
                         SetTimer(st.current_round, cfg.timeout_duration)]
            acts += self._redispatch(("view", st.current_view))
        else:
            acts += self.try_commit()
        acts += self._redispatch(("coinqc", coin.view))
        return acts
