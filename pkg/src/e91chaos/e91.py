"""E91 sessions: pair distribution, basis sifting and the CHSH test.

Alice measures at {0, pi/4, pi/2} (indices 1..3), Bob at {pi/4, pi/2, 3pi/4}.
Rounds where both angles coincide, (2, 1) and (3, 2), feed the key; rounds
with indices in {1, 3} x {1, 3} feed the CHSH estimate

    S = E(a1, b1) - E(a1, b3) + E(a3, b1) + E(a3, b3)

which is 2*sqrt(2) for an untouched |phi+> source.

Randomness is counter based: every round draws a fixed block of uniforms from
a Philox generator keyed by the session seed with the round index as counter,
so any party (or worker) can reproduce the draws of any round on its own.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .quantum import Angle, measure, prepare_bell

__all__ = [
    "ALICE_ANGLES",
    "BOB_ANGLES",
    "CHSH_PAIRS",
    "ChshReport",
    "EmptyKey",
    "EveConfig",
    "InsufficientCounts",
    "RoundRecord",
    "SessionConfig",
    "SessionTranscript",
    "detect_eavesdropper",
    "estimate_chsh",
    "eve_knowledge",
    "is_sifted",
    "qber",
    "round_uniforms",
    "run_session",
    "sift",
    "simulate_round",
]

ALICE_ANGLES = {1: Angle.ZERO, 2: Angle.PI_4, 3: Angle.PI_2}
BOB_ANGLES = {1: Angle.PI_4, 2: Angle.PI_2, 3: Angle.PI3_4}
CHSH_PAIRS = ((1, 1), (1, 3), (3, 1), (3, 3))
CLASSICAL_BOUND = 2.0
SEED_LIMIT = 2**64

# slots of the per-round uniform block
EVE_INTERCEPT, EVE_BASIS, EVE_OUTCOME, ALICE_BASIS, BOB_BASIS, ALICE_OUTCOME, BOB_OUTCOME = range(7)
_BLOCK = 8


class InsufficientCounts(ValueError):
    """A CHSH basis pair has no rounds in the transcript."""


class EmptyKey(ValueError):
    """The sifted key is empty."""


@dataclass(frozen=True)
class EveConfig:
    intercept_probability: float = 1.0
    basis_set: tuple[Angle, ...] = (Angle.PI_4, Angle.PI_2)
    target: str = "A"

    def __post_init__(self):
        if not 0.0 <= self.intercept_probability <= 1.0:
            raise ValueError("intercept_probability must lie in [0, 1]")
        bases = tuple(b if isinstance(b, Angle) else Angle.parse(b) if isinstance(b, str) else Angle(b)
                      for b in self.basis_set)
        if not bases:
            raise ValueError("Eve needs at least one basis")
        object.__setattr__(self, "basis_set", bases)
        if self.target not in ("A", "B"):
            raise ValueError("target must be 'A' or 'B'")

    def to_dict(self) -> dict:
        return {
            "intercept_probability": self.intercept_probability,
            "basis_set": [b.label for b in self.basis_set],
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EveConfig":
        return cls(float(d["intercept_probability"]), tuple(Angle.parse(b) for b in d["basis_set"]), d["target"])


@dataclass(frozen=True)
class SessionConfig:
    num_pairs: int
    rng_seed: int = 0
    eve: Optional[EveConfig] = None

    def __post_init__(self):
        if isinstance(self.num_pairs, bool) or not isinstance(self.num_pairs, (int, np.integer)):
            raise TypeError("num_pairs must be an integer")
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be at least 1")
        if not 0 <= self.rng_seed < SEED_LIMIT:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return {
            "num_pairs": int(self.num_pairs),
            "rng_seed": int(self.rng_seed),
            "eve": None if self.eve is None else self.eve.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        eve = d.get("eve")
        return cls(int(d["num_pairs"]), int(d["rng_seed"]), None if eve is None else EveConfig.from_dict(eve))


@dataclass(frozen=True)
class RoundRecord:
    alice_basis_index: int
    bob_basis_index: int
    alice_bit: int
    bob_bit: int
    eve_bit: Optional[int] = None
    eve_basis: Optional[Angle] = None

    def __post_init__(self):
        if self.alice_basis_index not in ALICE_ANGLES or self.bob_basis_index not in BOB_ANGLES:
            raise ValueError("basis indices must be in 1..3")
        if (self.eve_bit is None) != (self.eve_basis is None):
            raise ValueError("eve_bit and eve_basis must be both present or both absent")

    @property
    def intercepted(self) -> bool:
        return self.eve_bit is not None

    @property
    def alice_angle(self) -> Angle:
        return ALICE_ANGLES[self.alice_basis_index]

    @property
    def bob_angle(self) -> Angle:
        return BOB_ANGLES[self.bob_basis_index]

    def to_dict(self) -> dict:
        d = {
            "alice_basis_index": self.alice_basis_index,
            "bob_basis_index": self.bob_basis_index,
            "alice_bit": self.alice_bit,
            "bob_bit": self.bob_bit,
        }
        if self.intercepted:
            d["eve_bit"] = self.eve_bit
            d["eve_basis"] = self.eve_basis.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        eve_basis = d.get("eve_basis")
        return cls(
            int(d["alice_basis_index"]),
            int(d["bob_basis_index"]),
            _bit(d["alice_bit"]),
            _bit(d["bob_bit"]),
            None if d.get("eve_bit") is None else _bit(d["eve_bit"]),
            None if eve_basis is None else Angle.parse(eve_basis),
        )


def _bit(v) -> int:
    if v not in (0, 1) or isinstance(v, bool):
        raise ValueError(f"expected a 0/1 bit, got {v!r}")
    return int(v)


def is_sifted(alice_basis_index: int, bob_basis_index: int) -> bool:
    return ALICE_ANGLES[alice_basis_index] is BOB_ANGLES[bob_basis_index]


def sift(rounds: Iterable[RoundRecord]) -> tuple[str, str]:
    alice, bob = [], []
    for rec in rounds:
        if is_sifted(rec.alice_basis_index, rec.bob_basis_index):
            alice.append("01"[rec.alice_bit])
            bob.append("01"[rec.bob_bit])
    return "".join(alice), "".join(bob)


@dataclass(frozen=True)
class SessionTranscript:
    config: SessionConfig
    rounds: tuple[RoundRecord, ...]
    sifted_key_alice: str = field(default="")
    sifted_key_bob: str = field(default="")

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        alice, bob = sift(self.rounds)
        if not self.sifted_key_alice and not self.sifted_key_bob:
            object.__setattr__(self, "sifted_key_alice", alice)
            object.__setattr__(self, "sifted_key_bob", bob)
        elif (alice, bob) != (self.sifted_key_alice, self.sifted_key_bob):
            raise ValueError("sifted keys do not match the recorded rounds")

    @property
    def sifted_fraction(self) -> float:
        return len(self.sifted_key_alice) / len(self.rounds)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rounds": [r.to_dict() for r in self.rounds],
            "sifted_key_alice": self.sifted_key_alice,
            "sifted_key_bob": self.sifted_key_bob,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "SessionTranscript":
        return cls(
            SessionConfig.from_dict(d["config"]),
            tuple(RoundRecord.from_dict(r) for r in d["rounds"]),
            d["sifted_key_alice"],
            d["sifted_key_bob"],
        )

    @classmethod
    def from_json(cls, text: str) -> "SessionTranscript":
        return cls.from_dict(json.loads(text))


def round_uniforms(seed: int, index: int) -> np.ndarray:
    """The block of uniforms that drives round ``index`` of session ``seed``."""
    bitgen = np.random.Philox(key=seed, counter=[0, index, 0, 0])
    return np.random.Generator(bitgen).random(_BLOCK)


def pick_basis(u: float) -> int:
    return 1 + int(u * 3)


def eve_intercepts(eve: Optional[EveConfig], u: np.ndarray) -> Optional[Angle]:
    """Eve's basis for this round, or None when she lets the pair through."""
    if eve is None or not u[EVE_INTERCEPT] < eve.intercept_probability:
        return None
    return eve.basis_set[int(u[EVE_BASIS] * len(eve.basis_set))]


def measure_pair(
    alice_angle: float, bob_angle: float, eve: Optional[EveConfig], u: np.ndarray
) -> tuple[int, int, Optional[int], Optional[Angle]]:
    """Prepare |phi+>, let Eve act, then measure A before B.

    The fixed order matters only for reproducibility; the joint statistics do
    not depend on it.
    """
    state = prepare_bell(0, 0)
    eve_basis = eve_intercepts(eve, u)
    eve_bit = None
    if eve_basis is not None:
        out, state = measure(state, eve.target, eve_basis, float(u[EVE_OUTCOME]))
        eve_bit = out.bit
    a, state = measure(state, "A", alice_angle, float(u[ALICE_OUTCOME]))
    b, state = measure(state, "B", bob_angle, float(u[BOB_OUTCOME]))
    return a.bit, b.bit, eve_bit, eve_basis


def simulate_round(config: SessionConfig, index: int) -> RoundRecord:
    u = round_uniforms(config.rng_seed, index)
    ia, ib = pick_basis(u[ALICE_BASIS]), pick_basis(u[BOB_BASIS])
    a, b, eve_bit, eve_basis = measure_pair(ALICE_ANGLES[ia], BOB_ANGLES[ib], config.eve, u)
    return RoundRecord(ia, ib, a, b, eve_bit, eve_basis)


def _simulate_range(args) -> list[RoundRecord]:
    config, start, stop = args
    return [simulate_round(config, i) for i in range(start, stop)]


def run_session(config: SessionConfig, workers: int = 1) -> SessionTranscript:
    """Simulate ``config.num_pairs`` rounds and sift the result.

    With ``workers > 1`` rounds are simulated in worker processes; the
    transcript is identical either way.
    """
    n = config.num_pairs
    if workers <= 1 or n < 2 * workers:
        rounds = _simulate_range((config, 0, n))
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        chunks = [(config, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rounds = [r for part in pool.map(_simulate_range, chunks) for r in part]
    return SessionTranscript(config, tuple(rounds))


@dataclass(frozen=True)
class ChshReport:
    e11: float
    e13: float
    e31: float
    e33: float
    counts: tuple[int, int, int, int]
    s_value: float

    def to_dict(self) -> dict:
        return {
            "e11": self.e11,
            "e13": self.e13,
            "e31": self.e31,
            "e33": self.e33,
            "counts": list(self.counts),
            "s_value": self.s_value,
        }


def chsh_from_samples(samples: Iterable[tuple[int, int, int, int]]) -> ChshReport:
    """CHSH estimate from (alice_index, bob_index, alice_bit, bob_bit) tuples.

    Tuples outside the four CHSH basis pairs are ignored.
    """
    sums = {p: 0 for p in CHSH_PAIRS}
    counts = {p: 0 for p in CHSH_PAIRS}
    for ia, ib, a, b in samples:
        key = (ia, ib)
        if key in sums:
            counts[key] += 1
            # eigenvalue product is +1 when bits agree
            sums[key] += 1 if a == b else -1
    missing = [p for p in CHSH_PAIRS if counts[p] == 0]
    if missing:
        raise InsufficientCounts(f"no rounds for basis pairs {missing}")
    e = [sums[p] / counts[p] for p in CHSH_PAIRS]
    s = e[0] - e[1] + e[2] + e[3]
    return ChshReport(e[0], e[1], e[2], e[3], tuple(counts[p] for p in CHSH_PAIRS), s)


def estimate_chsh(transcript: SessionTranscript) -> ChshReport:
    return chsh_from_samples(
        (r.alice_basis_index, r.bob_basis_index, r.alice_bit, r.bob_bit) for r in transcript.rounds
    )


def detect_eavesdropper(report: ChshReport, threshold: float = CLASSICAL_BOUND) -> bool:
    """True (an anomaly) unless |S| strictly exceeds ``threshold``.

    Landing exactly on the bound is treated as an anomaly.
    """
    if not 0.0 < threshold <= 2.0 * math.sqrt(2.0) + 1e-12:
        raise ValueError("threshold must lie in (0, 2*sqrt(2)]")
    return abs(report.s_value) <= threshold


def eve_knowledge(transcript: SessionTranscript) -> float:
    """Fraction of Alice's sifted bits Eve holds; unintercepted positions score 0.5."""
    score, n = 0.0, 0
    for r in transcript.rounds:
        if not is_sifted(r.alice_basis_index, r.bob_basis_index):
            continue
        n += 1
        if r.eve_bit is None:
            score += 0.5
        elif r.eve_bit == r.alice_bit:
            score += 1.0
    if n == 0:
        raise EmptyKey("transcript has no sifted bits")
    return score / n


def qber(transcript: SessionTranscript) -> float:
    a, b = transcript.sifted_key_alice, transcript.sifted_key_bob
    if not a:
        raise EmptyKey("transcript has no sifted bits")
    return sum(x != y for x, y in zip(a, b)) / len(a)


def disclosed_samples(bases_alice: Sequence[int], bases_bob: Sequence[int], bits: Sequence[int]) -> dict[int, int]:
    """Outcome bits a party may publish: CHSH rounds only, never sifted ones."""
    return {
        i: bits[i]
        for i, (ia, ib) in enumerate(zip(bases_alice, bases_bob))
        if (ia, ib) in CHSH_PAIRS
    }
