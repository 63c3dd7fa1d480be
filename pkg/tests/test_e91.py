import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from e91chaos.e91 import (
    ALICE_ANGLES,
    BOB_ANGLES,
    CHSH_PAIRS,
    ChshReport,
    EmptyKey,
    EveConfig,
    InsufficientCounts,
    RoundRecord,
    SessionConfig,
    SessionTranscript,
    detect_eavesdropper,
    estimate_chsh,
    eve_knowledge,
    qber,
    run_session,
)
from e91chaos.quantum import Angle, joint_expectation, prepare_bell

SQRT2 = math.sqrt(2)


def exact_eve_statistics(eve_bases, target=0):
    """Density-matrix oracle for full intercept-resend on |phi+>.

    Returns (S, QBER, Eve's knowledge of Alice's sifted bits), averaging over
    Eve's uniformly chosen basis and both sifting bases.
    """
    Z, X, I = np.diag([1.0, -1.0]), np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2)
    obs = lambda p: math.cos(p) * Z + math.sin(p) * X
    proj = lambda p, s: (I + s * obs(p)) / 2
    on = lambda op: np.kron(op, I) if target == 0 else np.kron(I, op)
    psi = np.array([1.0, 0, 0, 1.0]) / SQRT2
    rho = np.outer(psi, psi)
    branches = {}
    for e in eve_bases:
        for s in (1, -1):
            k = on(proj(e, s))
            branches[(e, s)] = k @ rho @ k / len(eve_bases)
    mixed = sum(branches.values())
    E = lambda a, b: float(np.trace(mixed @ np.kron(obs(a), obs(b))))
    S = E(0, math.pi / 4) - E(0, 3 * math.pi / 4) + E(math.pi / 2, math.pi / 4) + E(math.pi / 2, 3 * math.pi / 4)
    sift_angles = (math.pi / 4, math.pi / 2)
    q = k = 0.0
    for th in sift_angles:
        for (e, s), r in branches.items():
            for sa, sb in itertools.product((1, -1), repeat=2):
                p = float(np.trace(r @ np.kron(proj(th, sa), proj(th, sb))))
                q += p * (sa != sb) / len(sift_angles)
                k += p * (sa == s) / len(sift_angles)
    return S, q, k


# frozen from exact_eve_statistics; see test_frozen_oracle_values
EVE_DEFAULT_S, EVE_DEFAULT_QBER, EVE_DEFAULT_KNOWLEDGE = SQRT2, 0.125, (1 + (1 + 1 / SQRT2) / 2) / 2
EVE_CONJ_S, EVE_CONJ_QBER, EVE_CONJ_KNOWLEDGE = SQRT2, 0.25, (0.75 + (1 + 1 / SQRT2) / 2) / 2


def test_frozen_oracle_values():
    s, q, k = exact_eve_statistics((math.pi / 4, math.pi / 2))
    assert (s, q, k) == pytest.approx((EVE_DEFAULT_S, EVE_DEFAULT_QBER, EVE_DEFAULT_KNOWLEDGE), abs=1e-12)
    s, q, k = exact_eve_statistics((0.0, math.pi / 2))
    assert (s, q, k) == pytest.approx((EVE_CONJ_S, EVE_CONJ_QBER, EVE_CONJ_KNOWLEDGE), abs=1e-12)
    assert exact_eve_statistics((math.pi / 4, math.pi / 2), target=1) == pytest.approx(
        (EVE_DEFAULT_S, EVE_DEFAULT_QBER, EVE_DEFAULT_KNOWLEDGE), abs=1e-12
    )


def transcript_of(rounds, eve=None):
    return SessionTranscript(SessionConfig(max(1, len(rounds)), 0, eve), tuple(rounds))


@pytest.fixture(scope="module")
def clean_20k():
    return run_session(SessionConfig(20_000, 0))


@pytest.fixture(scope="module")
def eve_50k():
    return run_session(SessionConfig(50_000, 1, EveConfig(1.0)))


class TestConfig:
    def test_rejects_zero_pairs(self):
        with pytest.raises(ValueError):
            SessionConfig(0)

    def test_rejects_bad_seed(self):
        with pytest.raises(ValueError):
            SessionConfig(10, -1)
        with pytest.raises(ValueError):
            SessionConfig(10, 2**64)

    def test_eve_probability_range(self):
        with pytest.raises(ValueError):
            EveConfig(1.5)

    def test_eve_default_bases(self):
        assert EveConfig().basis_set == (Angle.PI_4, Angle.PI_2)
        assert EveConfig(0.5, ("0", "pi/2")).basis_set == (Angle.ZERO, Angle.PI_2)

    def test_eve_needs_bases(self):
        with pytest.raises(ValueError):
            EveConfig(1.0, ())


class TestSifting:
    def test_sifted_length_9000(self):
        t = run_session(SessionConfig(9000, 5))
        assert 1800 <= len(t.sifted_key_alice) <= 2200

    def test_sifted_length_500(self):
        t = run_session(SessionConfig(500, 5))
        assert abs(len(t.sifted_key_alice) - 111) <= 30

    def test_only_matching_angles_kept(self):
        t = run_session(SessionConfig(300, 2))
        kept = [r for r in t.rounds if ALICE_ANGLES[r.alice_basis_index] == BOB_ANGLES[r.bob_basis_index]]
        assert {(r.alice_basis_index, r.bob_basis_index) for r in kept} <= {(2, 1), (3, 2)}
        assert t.sifted_key_alice == "".join(str(r.alice_bit) for r in kept)
        assert t.sifted_key_bob == "".join(str(r.bob_bit) for r in kept)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**64 - 1))
    def test_keys_identical_without_eve(self, seed):
        t = run_session(SessionConfig(200, seed))
        assert t.sifted_key_alice == t.sifted_key_bob

    def test_inconsistent_sifted_key_rejected(self):
        rounds = (RoundRecord(2, 1, 0, 0),)
        with pytest.raises(ValueError):
            SessionTranscript(SessionConfig(1), rounds, "1", "1")


class TestDeterminism:
    def test_same_seed_same_transcript(self):
        assert run_session(SessionConfig(500, 42)) == run_session(SessionConfig(500, 42))

    def test_different_seed_differs(self):
        assert run_session(SessionConfig(500, 42)).rounds != run_session(SessionConfig(500, 43)).rounds

    def test_workers_do_not_change_result(self):
        config = SessionConfig(2000, 9, EveConfig(0.5))
        assert run_session(config, workers=3) == run_session(config)

    def test_prefix_stability(self):
        # round i depends only on (seed, i)
        short, long = run_session(SessionConfig(100, 8)), run_session(SessionConfig(300, 8))
        assert long.rounds[:100] == short.rounds


class TestChsh:
    def test_ideal_s_value(self, clean_20k):
        assert abs(estimate_chsh(clean_20k).s_value - 2 * SQRT2) < 0.1

    def test_s_sign_combination(self, clean_20k):
        r = estimate_chsh(clean_20k)
        assert r.s_value == pytest.approx(r.e11 - r.e13 + r.e31 + r.e33, abs=1e-15)

    def test_sign_pattern(self, clean_20k):
        r = estimate_chsh(clean_20k)
        assert r.e11 > 0 and r.e13 < 0 and r.e31 > 0 and r.e33 > 0

    def test_terms_match_exact_oracle(self, clean_20k):
        r = estimate_chsh(clean_20k)
        phi = prepare_bell(0, 0)
        for (ia, ib), e, n in zip(CHSH_PAIRS, (r.e11, r.e13, r.e31, r.e33), r.counts):
            assert abs(e - joint_expectation(phi, ALICE_ANGLES[ia], BOB_ANGLES[ib])) < 4 / math.sqrt(n)

    def test_eve_terms_match_collapse_model(self, eve_50k):
        r = estimate_chsh(eve_50k)
        for (ia, ib), e, n in zip(CHSH_PAIRS, (r.e11, r.e13, r.e31, r.e33), r.counts):
            a, b = ALICE_ANGLES[ia], BOB_ANGLES[ib]
            model = np.mean([math.cos(a - eps) * math.cos(b - eps) for eps in (math.pi / 4, math.pi / 2)])
            assert abs(e - model) < 4 / math.sqrt(n)

    def test_full_intercept_halves_s(self, eve_50k):
        assert abs(estimate_chsh(eve_50k).s_value - EVE_DEFAULT_S) < 0.15

    def test_insufficient_counts(self):
        rounds = [RoundRecord(1, 1, 0, 0), RoundRecord(3, 1, 0, 0), RoundRecord(3, 3, 0, 0)]
        with pytest.raises(InsufficientCounts):
            estimate_chsh(transcript_of(rounds))

    def test_counting_rule(self):
        rounds = [
            RoundRecord(1, 1, 0, 0), RoundRecord(1, 1, 1, 0),  # E11 = 0
            RoundRecord(1, 3, 0, 1),                           # E13 = -1
            RoundRecord(3, 1, 1, 1),                           # E31 = 1
            RoundRecord(3, 3, 0, 0), RoundRecord(3, 3, 1, 1), RoundRecord(3, 3, 1, 0),  # E33 = 1/3
            RoundRecord(2, 1, 0, 0),                           # sifting round, ignored
        ]
        r = estimate_chsh(transcript_of(rounds))
        assert (r.e11, r.e13, r.e31) == (0.0, -1.0, 1.0)
        assert r.e33 == pytest.approx(1 / 3)
        assert r.counts == (2, 1, 1, 3)
        assert r.s_value == pytest.approx(0 + 1 + 1 + 1 / 3)

    @pytest.mark.slow
    def test_monotone_in_intercept_probability(self):
        s = [
            estimate_chsh(run_session(SessionConfig(50_000, 3, EveConfig(p) if p else None))).s_value
            for p in (0.0, 0.5, 1.0)
        ]
        assert s[0] > s[1] > s[2]


class TestDetection:
    def _report(self, s):
        return ChshReport(0, 0, 0, 0, (1, 1, 1, 1), s)

    def test_clean_value_passes(self):
        assert detect_eavesdropper(self._report(2.797)) is False

    def test_low_value_flags(self):
        assert detect_eavesdropper(self._report(0.973)) is True

    def test_boundary_is_strict(self):
        assert detect_eavesdropper(self._report(2.0)) is True
        assert detect_eavesdropper(self._report(2.0001)) is False

    def test_uses_absolute_value(self):
        assert detect_eavesdropper(self._report(-2.8)) is False

    def test_threshold_domain(self):
        with pytest.raises(ValueError):
            detect_eavesdropper(self._report(2.5), threshold=3.0)
        with pytest.raises(ValueError):
            detect_eavesdropper(self._report(2.5), threshold=0.0)

    def test_custom_threshold(self):
        assert detect_eavesdropper(self._report(2.5), threshold=2.6) is True


class TestQberAndKnowledge:
    def test_qber_zero_without_eve(self, clean_20k):
        assert qber(clean_20k) == 0.0

    def test_knowledge_half_without_eve(self, clean_20k):
        assert eve_knowledge(clean_20k) == 0.5

    def test_qber_counts_mismatches(self):
        # 101 sifted bits, 13 mismatching
        rounds = [RoundRecord(2, 1, 0, 1 if i < 13 else 0) for i in range(101)]
        assert qber(transcript_of(rounds)) == pytest.approx(13 / 101)

    def test_empty_key(self):
        t = transcript_of([RoundRecord(1, 1, 0, 0)])
        with pytest.raises(EmptyKey):
            qber(t)
        with pytest.raises(EmptyKey):
            eve_knowledge(t)

    def test_full_intercept_qber(self, eve_50k):
        assert len(eve_50k.sifted_key_alice) >= 10_000
        assert abs(qber(eve_50k) - EVE_DEFAULT_QBER) < 0.03

    def test_full_intercept_knowledge(self, eve_50k):
        assert abs(eve_knowledge(eve_50k) - EVE_DEFAULT_KNOWLEDGE) < 0.03

    @pytest.mark.slow
    def test_conjugate_eve_bases(self):
        t = run_session(SessionConfig(50_000, 4, EveConfig(1.0, (Angle.ZERO, Angle.PI_2))))
        assert abs(estimate_chsh(t).s_value - EVE_CONJ_S) < 0.15
        assert abs(qber(t) - EVE_CONJ_QBER) < 0.03
        assert abs(eve_knowledge(t) - EVE_CONJ_KNOWLEDGE) < 0.03

    def test_eve_on_bob(self):
        t = run_session(SessionConfig(30_000, 6, EveConfig(1.0, target="B")))
        assert abs(estimate_chsh(t).s_value - SQRT2) < 0.15
        assert abs(qber(t) - EVE_DEFAULT_QBER) < 0.03

    def test_partial_interception_scoring(self):
        rounds = [
            RoundRecord(2, 1, 0, 0, 0, Angle.PI_4),  # Eve right
            RoundRecord(2, 1, 1, 1, 0, Angle.PI_2),  # Eve wrong
            RoundRecord(3, 2, 0, 0),                 # not intercepted: 0.5
            RoundRecord(1, 1, 0, 0, 0, Angle.PI_4),  # not sifted
        ]
        assert eve_knowledge(transcript_of(rounds, EveConfig(0.5))) == pytest.approx(1.5 / 3)


class TestTranscriptJson:
    def test_round_trip(self):
        t = run_session(SessionConfig(400, 77, EveConfig(0.5, (Angle.ZERO, Angle.PI3_4), "B")))
        assert SessionTranscript.from_json(t.to_json()) == t

    def test_canonical_fields(self):
        t = run_session(SessionConfig(200, 1, EveConfig(0.5)))
        d = json.loads(t.to_json())
        assert list(d) == ["config", "rounds", "sifted_key_alice", "sifted_key_bob"]
        assert d["config"]["eve"]["basis_set"] == ["pi/4", "pi/2"]
        for rec, raw in zip(t.rounds, d["rounds"]):
            assert ("eve_bit" in raw) == rec.intercepted == ("eve_basis" in raw)
            if rec.intercepted:
                assert raw["eve_basis"] in ("pi/4", "pi/2")
            assert raw["alice_bit"] in (0, 1) and type(raw["alice_bit"]) is int

    def test_serialization_is_stable(self):
        config = SessionConfig(300, 5, EveConfig(0.3))
        assert run_session(config).to_json() == run_session(config).to_json()

    def test_rejects_bool_bits(self):
        t = run_session(SessionConfig(10, 1))
        d = json.loads(t.to_json())
        d["rounds"][0]["alice_bit"] = True
        with pytest.raises(ValueError):
            SessionTranscript.from_dict(d)
