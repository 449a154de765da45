"""Core protocol data types.

Blocks, certificates, wire messages, and the rank total order that the
voting/locking rules compare certificates by.  Everything here is an
immutable value object; replicas replace state wholesale instead of
mutating shared structures.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Optional, Union

ReplicaId = int
BlockId = str  # 128-bit hex digest

ORIGIN_DIGEST = "origin"  # stand-in parent digest for the genesis block


@dataclass(frozen=True, order=True)
class Rank:
    """Total order over certificates: (view, endorsed, round) lexicographic.

    Field order matters: dataclass ordering compares view first, then the
    endorsed flag (False < True), then round.  An endorsed fallback
    certificate therefore outranks every same-view regular certificate.
    """

    view: int
    endorsed: bool
    round: int


ZERO_RANK = Rank(0, False, 0)


@dataclass(frozen=True)
class TxnBatch:
    """Opaque payload; only identity and an abstract size are modeled."""

    payload_id: str
    size_bytes: int = 0


# --- certificates ---------------------------------------------------------


@dataclass(frozen=True)
class QC:
    """Quorum certificate: 2f+1 vote shares for one block."""

    block_id: BlockId
    round: int
    view: int
    signers: frozenset[ReplicaId]


@dataclass(frozen=True)
class FallbackQC:
    """Certificate for a fallback block, tagged with chain height and owner."""

    block_id: BlockId
    round: int
    view: int
    height: int
    proposer: ReplicaId
    signers: frozenset[ReplicaId]


@dataclass(frozen=True)
class TimeoutCert:
    """2f+1 round-timeout shares; lets the baseline pacemaker skip ahead."""

    round: int
    signers: frozenset[ReplicaId]


@dataclass(frozen=True)
class FallbackTC:
    """2f+1 view-timeout shares; entry ticket for the fallback of a view."""

    view: int
    signers: frozenset[ReplicaId]


@dataclass(frozen=True)
class CoinQC:
    """f+1 coin shares opening the leader election of a fallback view."""

    view: int
    elected: ReplicaId
    signers: frozenset[ReplicaId]


Certificate = Union[QC, FallbackQC, TimeoutCert, FallbackTC, CoinQC]
ParentCert = Union[QC, FallbackQC]


# --- blocks ---------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    id: BlockId
    parent_qc: Optional[ParentCert]  # None only for genesis
    round: int
    view: int
    payload: TxnBatch


@dataclass(frozen=True)
class FallbackBlock:
    """A block on some replica's fallback chain.

    Wraps a regular block body; the id already commits to (height, proposer)
    so a fallback block can never collide with a regular one.
    """

    inner: Block
    height: int
    proposer: ReplicaId

    @property
    def id(self) -> BlockId:
        return self.inner.id

    @property
    def parent_qc(self) -> Optional[ParentCert]:
        return self.inner.parent_qc

    @property
    def round(self) -> int:
        return self.inner.round

    @property
    def view(self) -> int:
        return self.inner.view

    @property
    def payload(self) -> TxnBatch:
        return self.inner.payload


AnyBlock = Union[Block, FallbackBlock]


def cert_digest(cert: Optional[Certificate]) -> str:
    """Stable digest input for a certificate.

    Excludes the signer set: a threshold signature is one object no matter
    which share subset produced it, and block ids must not depend on vote
    arrival order.
    """
    if cert is None:
        return ORIGIN_DIGEST
    if isinstance(cert, QC):
        return f"qc|{cert.block_id}|{cert.round}|{cert.view}"
    if isinstance(cert, FallbackQC):
        return f"fqc|{cert.block_id}|{cert.round}|{cert.view}|{cert.height}|{cert.proposer}"
    if isinstance(cert, TimeoutCert):
        return f"tc|{cert.round}"
    if isinstance(cert, FallbackTC):
        return f"ftc|{cert.view}"
    if isinstance(cert, CoinQC):
        return f"coin|{cert.view}|{cert.elected}"
    raise TypeError(f"not a certificate: {cert!r}")


def _digest(parts: str) -> str:
    return hashlib.sha256(parts.encode()).hexdigest()[:32]  # 128 bits


def block_id_of(parent_qc: Optional[ParentCert], round: int, view: int,
                payload: TxnBatch) -> BlockId:
    return _digest(f"blk|{cert_digest(parent_qc)}|{round}|{view}|{payload.payload_id}")


def fallback_block_id_of(parent_qc: ParentCert, round: int, view: int,
                         payload: TxnBatch, height: int,
                         proposer: ReplicaId) -> BlockId:
    return _digest(
        f"fblk|{cert_digest(parent_qc)}|{round}|{view}|{payload.payload_id}"
        f"|{height}|{proposer}"
    )


def make_block(parent_qc: Optional[ParentCert], round: int, view: int,
               payload: TxnBatch) -> Block:
    return Block(block_id_of(parent_qc, round, view, payload),
                 parent_qc, round, view, payload)


def make_fallback_block(parent_qc: ParentCert, round: int, view: int,
                        payload: TxnBatch, height: int,
                        proposer: ReplicaId) -> FallbackBlock:
    bid = fallback_block_id_of(parent_qc, round, view, payload, height, proposer)
    return FallbackBlock(Block(bid, parent_qc, round, view, payload),
                         height, proposer)


def genesis_block() -> Block:
    return make_block(None, 0, 0, TxnBatch("genesis", 0))


def genesis_qc(n: int) -> QC:
    """Synthetic certificate for genesis, treated as signed by everyone."""
    g = genesis_block()
    return QC(g.id, 0, 0, frozenset(range(n)))


# --- rank -----------------------------------------------------------------


def is_endorsed(fqc: FallbackQC, coin_history: Mapping[int, CoinQC]) -> bool:
    """Endorsement is derived, never stored: a fallback certificate counts
    as endorsed exactly when its view's election picked its proposer."""
    coin = coin_history.get(fqc.view)
    return coin is not None and coin.elected == fqc.proposer


def rank_of(obj, coin_history: Optional[Mapping[int, CoinQC]] = None) -> Rank:
    """Rank of a certificate or block (genesis parent None ranks lowest)."""
    if coin_history is None:
        coin_history = {}
    if obj is None:
        return ZERO_RANK
    if isinstance(obj, QC):
        return Rank(obj.view, False, obj.round)
    if isinstance(obj, FallbackQC):
        return Rank(obj.view, is_endorsed(obj, coin_history), obj.round)
    if isinstance(obj, Block):
        return Rank(obj.view, False, obj.round)
    if isinstance(obj, FallbackBlock):
        coin = coin_history.get(obj.view)
        endorsed = coin is not None and coin.elected == obj.proposer
        return Rank(obj.view, endorsed, obj.round)
    raise TypeError(f"unrankable: {obj!r}")


def max_cert(a: ParentCert, b: ParentCert,
             coin_history: Optional[Mapping[int, CoinQC]] = None) -> ParentCert:
    """Higher-ranked of two certificates; ties keep the first argument."""
    return b if rank_of(b, coin_history) > rank_of(a, coin_history) else a


# --- wire messages --------------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    block: Block
    sender: ReplicaId
    # election evidence when the parent certificate is an endorsed fallback
    # certificate of the previous view (first block of a new view)
    coin_qc: Optional[CoinQC] = None


@dataclass(frozen=True)
class Vote:
    block_id: BlockId
    round: int
    view: int
    voter: ReplicaId


@dataclass(frozen=True)
class Timeout:
    """Timeout share: round-scoped under the baseline pacemaker, view-scoped
    under the fallback pacemaker.  Exactly one of round/view is set."""

    round: Optional[int]
    view: Optional[int]
    high_qc: ParentCert
    sender: ReplicaId


@dataclass(frozen=True)
class TCRelay:
    tc: TimeoutCert
    sender: ReplicaId


@dataclass(frozen=True)
class FTCRelay:
    ftc: FallbackTC
    sender: ReplicaId


@dataclass(frozen=True)
class FBProposal:
    fblock: FallbackBlock
    # height-1 proposals carry the entry ticket so receivers can validate
    ftc: Optional[FallbackTC] = None


@dataclass(frozen=True)
class FBVote:
    block_id: BlockId
    round: int
    view: int
    height: int
    proposer: ReplicaId
    voter: ReplicaId


@dataclass(frozen=True)
class FQCRelay:
    fqc: FallbackQC
    sender: ReplicaId  # doubles as the counter-signer in the 2-chain variant


@dataclass(frozen=True)
class CoinShare:
    view: int
    signer: ReplicaId


@dataclass(frozen=True)
class CoinQCRelay:
    coin_qc: CoinQC
    sender: ReplicaId


WireMessage = Union[Proposal, Vote, Timeout, TCRelay, FTCRelay, FBProposal,
                    FBVote, FQCRelay, CoinShare, CoinQCRelay]

_VARIANT_BY_TYPE = {
    Proposal: "proposal",
    Vote: "vote",
    Timeout: "timeout",
    TCRelay: "tc_relay",
    FTCRelay: "ftc_relay",
    FBProposal: "fb_proposal",
    FBVote: "fb_vote",
    FQCRelay: "fqc_relay",
    CoinShare: "coin_share",
    CoinQCRelay: "coin_qc_relay",
}

# Abstract size = number of authenticator slots the variant carries at
# capacity (optional slots count whether or not they are filled), so size
# is a pure function of the variant.
MESSAGE_SIZE_UNITS = {
    "proposal": 2,      # parent certificate + optional coin-QC evidence
    "vote": 1,
    "timeout": 2,       # timeout share + carried high qc
    "tc_relay": 1,
    "ftc_relay": 1,
    "fb_proposal": 2,   # parent certificate + optional entry ticket
    "fb_vote": 1,
    "fqc_relay": 2,     # certificate + counter-signature slot
    "coin_share": 1,
    "coin_qc_relay": 1,
}

MESSAGE_VARIANTS = tuple(MESSAGE_SIZE_UNITS)


def message_variant(msg: WireMessage) -> str:
    try:
        return _VARIANT_BY_TYPE[type(msg)]
    except KeyError:
        raise TypeError(f"not a wire message: {msg!r}") from None


def message_size_units(msg: WireMessage) -> int:
    return MESSAGE_SIZE_UNITS[message_variant(msg)]


def message_sender(msg: WireMessage) -> ReplicaId:
    """Claimed sender identity; every variant carries one."""
    if isinstance(msg, Proposal):
        return msg.sender
    if isinstance(msg, Vote):
        return msg.voter
    if isinstance(msg, FBProposal):
        return msg.fblock.proposer
    if isinstance(msg, FBVote):
        return msg.voter
    if isinstance(msg, CoinShare):
        return msg.signer
    return msg.sender


# --- JSON plumbing for trace files ----------------------------------------


def encode_cert(cert: Optional[Certificate]) -> Optional[dict]:
    if cert is None:
        return None
    d: dict = {"signers": sorted(cert.signers)}
    if isinstance(cert, QC):
        d.update(kind="qc", block_id=cert.block_id, round=cert.round,
                 view=cert.view)
    elif isinstance(cert, FallbackQC):
        d.update(kind="fqc", block_id=cert.block_id, round=cert.round,
                 view=cert.view, height=cert.height, proposer=cert.proposer)
    elif isinstance(cert, TimeoutCert):
        d.update(kind="tc", round=cert.round)
    elif isinstance(cert, FallbackTC):
        d.update(kind="ftc", view=cert.view)
    elif isinstance(cert, CoinQC):
        d.update(kind="coin", view=cert.view, elected=cert.elected)
    else:
        raise TypeError(f"not a certificate: {cert!r}")
    return d


def decode_cert(d: Optional[dict]) -> Optional[Certificate]:
    if d is None:
        return None
    signers = frozenset(d["signers"])
    kind = d["kind"]
    if kind == "qc":
        return QC(d["block_id"], d["round"], d["view"], signers)
    if kind == "fqc":
        return FallbackQC(d["block_id"], d["round"], d["view"], d["height"],
                          d["proposer"], signers)
    if kind == "tc":
        return TimeoutCert(d["round"], signers)
    if kind == "ftc":
        return FallbackTC(d["view"], signers)
    if kind == "coin":
        return CoinQC(d["view"], d["elected"], signers)
    raise ValueError(f"unknown certificate kind: {kind}")


def _encode_block(b: Block) -> dict:
    return {"id": b.id, "parent": encode_cert(b.parent_qc), "round": b.round,
            "view": b.view, "payload": [b.payload.payload_id,
                                        b.payload.size_bytes]}


def _decode_block(d: dict) -> Block:
    return Block(d["id"], decode_cert(d["parent"]), d["round"], d["view"],
                 TxnBatch(d["payload"][0], d["payload"][1]))


def encode_message(msg: WireMessage) -> dict:
    kind = message_variant(msg)
    d: dict = {"kind": kind}
    if isinstance(msg, Proposal):
        d.update(block=_encode_block(msg.block), sender=msg.sender,
                 coin_qc=encode_cert(msg.coin_qc))
    elif isinstance(msg, Vote):
        d.update(block_id=msg.block_id, round=msg.round, view=msg.view,
                 voter=msg.voter)
    elif isinstance(msg, Timeout):
        d.update(round=msg.round, view=msg.view,
                 high_qc=encode_cert(msg.high_qc), sender=msg.sender)
    elif isinstance(msg, TCRelay):
        d.update(tc=encode_cert(msg.tc), sender=msg.sender)
    elif isinstance(msg, FTCRelay):
        d.update(ftc=encode_cert(msg.ftc), sender=msg.sender)
    elif isinstance(msg, FBProposal):
        d.update(inner=_encode_block(msg.fblock.inner),
                 height=msg.fblock.height, proposer=msg.fblock.proposer,
                 ftc=encode_cert(msg.ftc))
    elif isinstance(msg, FBVote):
        d.update(block_id=msg.block_id, round=msg.round, view=msg.view,
                 height=msg.height, proposer=msg.proposer, voter=msg.voter)
    elif isinstance(msg, FQCRelay):
        d.update(fqc=encode_cert(msg.fqc), sender=msg.sender)
    elif isinstance(msg, CoinShare):
        d.update(view=msg.view, signer=msg.signer)
    elif isinstance(msg, CoinQCRelay):
        d.update(coin_qc=encode_cert(msg.coin_qc), sender=msg.sender)
    return d


def decode_message(d: dict) -> WireMessage:
    kind = d["kind"]
    if kind == "proposal":
        return Proposal(_decode_block(d["block"]), d["sender"],
                        decode_cert(d["coin_qc"]))
    if kind == "vote":
        return Vote(d["block_id"], d["round"], d["view"], d["voter"])
    if kind == "timeout":
        return Timeout(d["round"], d["view"], decode_cert(d["high_qc"]),
                       d["sender"])
    if kind == "tc_relay":
        return TCRelay(decode_cert(d["tc"]), d["sender"])
    if kind == "ftc_relay":
        return FTCRelay(decode_cert(d["ftc"]), d["sender"])
    if kind == "fb_proposal":
        return FBProposal(FallbackBlock(_decode_block(d["inner"]),
                                        d["height"], d["proposer"]),
                          decode_cert(d["ftc"]))
    if kind == "fb_vote":
        return FBVote(d["block_id"], d["round"], d["view"], d["height"],
                      d["proposer"], d["voter"])
    if kind == "fqc_relay":
        return FQCRelay(decode_cert(d["fqc"]), d["sender"])
    if kind == "coin_share":
        return CoinShare(d["view"], d["signer"])
    if kind == "coin_qc_relay":
        return CoinQCRelay(decode_cert(d["coin_qc"]), d["sender"])
    raise ValueError(f"unknown message kind: {kind}")
