"""Two-qubit statevector engine.

Amplitudes are stored in the computational basis |00>, |01>, |10>, |11> with
qubit A on the left. Observables live in the x-z plane of the Bloch sphere:
``cos(phi) Z + sin(phi) X`` with eigenvalues +1 / -1.

Everything here is plain Python arithmetic on four complex numbers; numpy's
per-call overhead dominates at this size and the session loop calls these
functions hundreds of thousands of times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

__all__ = [
    "Angle",
    "Outcome",
    "StateNormError",
    "TwoQubitState",
    "joint_expectation",
    "measure",
    "outcome_probability",
    "prepare_bell",
]

NORM_TOLERANCE = 1e-9
_SNAP = 1e-12
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class StateNormError(ValueError):
    """A state handed to the engine is not normalized."""


class Angle(float, Enum):
    """Azimuthal measurement angles used by the protocol."""

    ZERO = 0.0
    PI_4 = math.pi / 4
    PI_2 = math.pi / 2
    PI3_4 = 3 * math.pi / 4

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "Angle":
        key = text.strip().replace("π", "pi").replace(" ", "")
        for angle, label in _LABELS.items():
            if key == label:
                return angle
        raise ValueError(f"unknown angle {text!r}; expected one of {', '.join(_LABELS.values())}")

    def __str__(self) -> str:
        return self.label


_LABELS = {
    Angle.ZERO: "0",
    Angle.PI_4: "pi/4",
    Angle.PI_2: "pi/2",
    Angle.PI3_4: "3pi/4",
}


@dataclass(frozen=True)
class Outcome:
    eigenvalue: int

    def __post_init__(self):
        if self.eigenvalue not in (1, -1):
            raise ValueError(f"eigenvalue must be +1 or -1, got {self.eigenvalue}")

    @property
    def bit(self) -> int:
        return (1 - self.eigenvalue) // 2

    @classmethod
    def from_bit(cls, bit: int) -> "Outcome":
        return cls(1 - 2 * bit)


@dataclass(frozen=True)
class TwoQubitState:
    amplitudes: tuple[complex, complex, complex, complex]

    def __post_init__(self):
        if len(self.amplitudes) != 4:
            raise ValueError("a two-qubit state has exactly 4 amplitudes")
        object.__setattr__(self, "amplitudes", tuple(complex(a) for a in self.amplitudes))

    @property
    def norm_squared(self) -> float:
        return sum(a.real * a.real + a.imag * a.imag for a in self.amplitudes)

    def to_array(self) -> np.ndarray:
        return np.array(self.amplitudes, dtype=complex)

    def check_normalized(self, tol: float = NORM_TOLERANCE) -> None:
        n = self.norm_squared
        if abs(n - 1.0) > tol:
            raise StateNormError(f"state norm^2 is {n!r}, expected 1")


def prepare_bell(m: int, n: int) -> TwoQubitState:
    """Return |B_mn> = (|0>|m> + (-1)^n |1>|1 xor m>) / sqrt(2)."""
    if m not in (0, 1) or n not in (0, 1):
        raise ValueError("m and n must be bits")
    amps = [0j, 0j, 0j, 0j]
    amps[m] = _INV_SQRT2
    amps[2 + (1 ^ m)] = (-1) ** n * _INV_SQRT2
    return TwoQubitState(tuple(amps))


def _project(amps, qubit: str, c: float, s: float, sign: int):
    # P = (I + sign * [[c, s], [s, -c]]) / 2 on the chosen qubit
    p00 = 0.5 * (1 + sign * c)
    p01 = 0.5 * sign * s
    p11 = 0.5 * (1 - sign * c)
    a00, a01, a10, a11 = amps
    if qubit == "A":
        return (p00 * a00 + p01 * a10, p00 * a01 + p01 * a11,
                p01 * a00 + p11 * a10, p01 * a01 + p11 * a11)
    if qubit == "B":
        return (p00 * a00 + p01 * a01, p01 * a00 + p11 * a01,
                p00 * a10 + p01 * a11, p01 * a10 + p11 * a11)
    raise ValueError(f"qubit must be 'A' or 'B', got {qubit!r}")


def _weight(amps) -> float:
    return sum(a.real * a.real + a.imag * a.imag for a in amps)


def outcome_probability(state: TwoQubitState, qubit: str, angle: float) -> float:
    """Born probability of the +1 outcome."""
    state.check_normalized()
    phi = float(angle)
    return _weight(_project(state.amplitudes, qubit, math.cos(phi), math.sin(phi), 1))


def measure(
    state: TwoQubitState,
    qubit: str,
    angle: float,
    rng: Union[np.random.Generator, float],
) -> tuple[Outcome, TwoQubitState]:
    """Projectively measure one qubit and return the outcome with the collapsed state.

    ``rng`` is either a numpy Generator or an already drawn uniform in [0, 1);
    the outcome is +1 iff that uniform falls below P(+).
    """
    state.check_normalized()
    phi = float(angle)
    c, s = math.cos(phi), math.sin(phi)
    plus = _project(state.amplitudes, qubit, c, s, 1)
    p_plus = _weight(plus)
    # rounding residue must never select a zero-weight branch
    if p_plus > 1.0 - _SNAP:
        p_plus = 1.0
    elif p_plus < _SNAP:
        p_plus = 0.0
    u = rng if isinstance(rng, float) else float(rng.random())
    if u < p_plus:
        sign, branch = 1, plus
    else:
        sign = -1
        branch = _project(state.amplitudes, qubit, c, s, -1)
    scale = 1.0 / math.sqrt(_weight(branch))
    return Outcome(sign), TwoQubitState(tuple(a * scale for a in branch))


def joint_expectation(state: TwoQubitState, angle_a: float, angle_b: float) -> float:
    """Exact <state| O(angle_a) (x) O(angle_b) |state>, no sampling."""
    state.check_normalized()
    ca, sa = math.cos(float(angle_a)), math.sin(float(angle_a))
    cb, sb = math.cos(float(angle_b)), math.sin(float(angle_b))
    oa = ((ca, sa), (sa, -ca))
    ob = ((cb, sb), (sb, -cb))
    amps = state.amplitudes
    total = 0j
    for i in range(4):
        ia, ib = divmod(i, 2)
        for j in range(4):
            ja, jb = divmod(j, 2)
            coeff = oa[ia][ja] * ob[ib][jb]
            if coeff:
                total += amps[i].conjugate() * coeff * amps[j]
    return total.real
