"""Share aggregation, thresholds, and the election PRF."""

import hashlib
import random

import pytest
from scipy import stats

from bftsim.core import CoinQC, FallbackQC, FallbackTC, QC, TimeoutCert
from bftsim.crypto import (
    PRF_ID,
    CryptoError,
    InsufficientShares,
    MixedMessages,
    Share,
    coin_message,
    coin_threshold,
    combine,
    elect_leader,
    fallback_vote_message,
    make_share,
    quorum_threshold,
    timeout_round_message,
    timeout_view_message,
    verify_certificate,
    vote_message,
)


def test_thresholds():
    for f in (1, 2, 3, 10):
        assert quorum_threshold(f) == 2 * f + 1
        assert coin_threshold(f) == f + 1


def test_make_share_validates_kind():
    m = vote_message("abcd", 3, 0)
    s = make_share(m, 2, "vote")
    assert s == Share(m, 2, "vote")
    with pytest.raises(CryptoError):
        make_share(m, 2, "coin")
    with pytest.raises(CryptoError):
        make_share(m, 2, "nonsense")


def test_combine_votes_into_qc():
    m = vote_message("abcd", 3, 1)
    shares = [make_share(m, i, "vote") for i in (0, 1, 3)]
    qc = combine(shares, 3)
    assert qc == QC("abcd", 3, 1, frozenset({0, 1, 3}))


def test_combine_counts_distinct_signers_only():
    m = vote_message("abcd", 3, 1)
    shares = [make_share(m, 0, "vote"), make_share(m, 0, "vote"),
              make_share(m, 0, "vote"), make_share(m, 1, "vote")]
    with pytest.raises(InsufficientShares):
        combine(shares, 3)


def test_combine_rejects_mixed_messages():
    a = vote_message("abcd", 3, 1)
    b = vote_message("efgh", 3, 1)
    shares = [make_share(a, 0, "vote"), make_share(a, 1, "vote"),
              make_share(b, 2, "vote")]
    with pytest.raises(MixedMessages):
        combine(shares, 3)


def test_combine_every_certificate_kind():
    fv = fallback_vote_message("ffff", 7, 2, 1, 3)
    fqc = combine([make_share(fv, i, "fallback_vote") for i in range(3)], 3)
    assert fqc == FallbackQC("ffff", 7, 2, 1, 3, frozenset({0, 1, 2}))

    tr = timeout_round_message(9)
    tc = combine([make_share(tr, i, "timeout_round") for i in range(3)], 3)
    assert tc == TimeoutCert(9, frozenset({0, 1, 2}))

    tv = timeout_view_message(4)
    ftc = combine([make_share(tv, i, "timeout_view") for i in range(3)], 3)
    assert ftc == FallbackTC(4, frozenset({0, 1, 2}))

    cm = coin_message(4)
    coin = combine([make_share(cm, i, "coin") for i in (1, 3)], 2,
                   run_seed=42, n=4)
    assert coin == CoinQC(4, elect_leader(4, 42, 4), frozenset({1, 3}))


def test_combine_coin_requires_seed_and_n():
    cm = coin_message(4)
    shares = [make_share(cm, i, "coin") for i in (1, 3)]
    with pytest.raises(CryptoError):
        combine(shares, 2)


def test_verify_certificate():
    n, f = 4, 1
    ok = QC("abcd", 3, 1, frozenset({0, 1, 3}))
    assert verify_certificate(ok, n, f)
    # below quorum
    assert not verify_certificate(QC("abcd", 3, 1, frozenset({0, 1})), n, f)
    # signer out of range
    assert not verify_certificate(QC("abcd", 3, 1, frozenset({0, 1, 9})), n, f)
    # coin certificates need only f+1 but must name the PRF winner
    view, seed = 6, 11
    winner = elect_leader(view, seed, n)
    good = CoinQC(view, winner, frozenset({0, 2}))
    bad = CoinQC(view, (winner + 1) % n, frozenset({0, 2}))
    assert verify_certificate(good, n, f, run_seed=seed)
    assert not verify_certificate(bad, n, f, run_seed=seed)
    assert not verify_certificate(CoinQC(view, winner, frozenset({0})), n, f,
                                  run_seed=seed)


def test_elect_leader_pinned_values():
    # frozen from the PRF definition: sha256("sha256-mod|seed|view")[:8] % n
    assert [elect_leader(v, 0, 4) for v in range(8)] == [1, 2, 2, 3, 0, 1, 1, 1]
    assert [elect_leader(v, 42, 7) for v in range(8)] == [1, 3, 1, 4, 2, 3, 3, 2]
    # independent recomputation of one value
    raw = hashlib.sha256(f"{PRF_ID}|0|3".encode()).digest()
    assert elect_leader(3, 0, 4) == int.from_bytes(raw[:8], "big") % 4


def test_elect_leader_deterministic_across_processes():
    # pure function of (view, seed, n): repeated calls agree
    rng = random.Random(7)
    for _ in range(200):
        v, s, n = rng.randrange(10**6), rng.randrange(10**6), rng.choice((4, 7))
        assert elect_leader(v, s, n) == elect_leader(v, s, n)
        assert 0 <= elect_leader(v, s, n) < n


def test_elect_leader_uniform_chi_square():
    # 10k consecutive views per committee size; uniformity must not be
    # rejected at the 1 percent level
    for n, seed in ((4, 1), (7, 2)):
        counts = [0] * n
        for v in range(10_000):
            counts[elect_leader(v, seed, n)] += 1
        _, p = stats.chisquare(counts)
        assert p > 0.01, (n, seed, counts, p)
