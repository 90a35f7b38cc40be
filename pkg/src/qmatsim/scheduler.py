"""Round / phase / slot bookkeeping and closed-form DoF values.

All counting is done in exact rational arithmetic with :class:`fractions.Fraction`.
Users are indexed ``0..K-1`` internally; JSON dumps keep that convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from math import comb, factorial

__all__ = [
    "SlotId",
    "Schedule",
    "harmonic",
    "dof_qmat",
    "dof_baselines",
    "repetitions",
    "symbol_budget",
    "build_round_schedule",
    "dof_from_schedule",
    "order1_symbols_per_round",
    "rate_exponents",
]


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**9)


def _check_alpha(alpha) -> Fraction:
    a = _as_fraction(alpha)
    if not 0 <= a <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return a


def _check_users(K: int) -> None:
    if int(K) != K or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K}")


def harmonic(K: int) -> Fraction:
    _check_users(K)
    return sum((Fraction(1, k) for k in range(1, K + 1)), Fraction(0))


def dof_qmat(K: int, alpha) -> Fraction:
    a = _check_alpha(alpha)
    return (1 - a) * K / harmonic(K) + a * K


def dof_baselines(K: int, alpha) -> tuple[Fraction, Fraction, Fraction]:
    """Sum DoF of (MAT, ZF, TDMA)."""
    a = _check_alpha(alpha)
    return Fraction(K) / harmonic(K), 1 + (K - 1) * a, Fraction(1)


def repetitions(K: int) -> list[int]:
    """Executions ``n_j = (j-1)! (K-j)!`` of each phase per round.

    These are the smallest integers with ``n_{j+1} (K-j) = n_j j``, i.e. the
    order-(j+1) symbols produced by phase j are exactly consumed by phase j+1.
    """
    _check_users(K)
    return [factorial(j - 1) * factorial(K - j) for j in range(1, K + 1)]


def symbol_budget(K: int, j: int) -> tuple[int, int, int]:
    """(order-j symbols sent, order-(j+1) symbols generated, aux per slot) for one execution."""
    _check_users(K)
    if not 1 <= j <= K:
        raise ValueError(f"phase j must lie in [1, {K}], got {j}")
    if j == K:
        return 1, 0, 0
    return (K - j + 1) * comb(K, j), j * comb(K, j + 1), K - j


def order1_symbols_per_round(K: int) -> int:
    return repetitions(K)[0] * symbol_budget(K, 1)[0]


def rate_exponents(alpha) -> dict[str, float]:
    a = float(alpha)
    return {"qmat": 1.0 - a, "auxiliary": min(a, 1.0 - a), "zf": a}


@dataclass(frozen=True, order=True)
class SlotId:
    round: int
    phase: int
    repetition: int
    user_set: tuple[int, ...]

    def __post_init__(self):
        if len(self.user_set) != self.phase:
            raise ValueError("user_set size must equal the phase index")

    def complement(self, K: int) -> tuple[int, ...]:
        return tuple(k for k in range(K) if k not in self.user_set)

    @property
    def key(self) -> tuple:
        """Position inside a round; the same key in the next round carries the auxiliaries."""
        return (self.phase, self.repetition, self.user_set)


@dataclass
class Schedule:
    K: int
    rounds: int
    slots: list[SlotId]
    repetitions: list[int]
    budgets: dict[int, tuple[int, int, int]] = field(default_factory=dict)

    def slots_per_round(self) -> int:
        return len(self.slots) // self.rounds

    def phase_slots(self, j: int) -> int:
        """Slots of phase j in a single round."""
        return self.repetitions[j - 1] * comb(self.K, j)

    def round_slots(self, n: int) -> list[SlotId]:
        return [s for s in self.slots if s.round == n]

    def to_json(self, alpha=None) -> str:
        doc = {
            "K": self.K,
            "rounds": self.rounds,
            "repetitions": self.repetitions,
            "budgets": {str(j): list(b) for j, b in self.budgets.items()},
            "phase_slots_per_round": [self.phase_slots(j) for j in range(1, self.K + 1)],
            "slots_per_round": self.slots_per_round(),
            "slots": [
                {"round": s.round, "phase": s.phase, "repetition": s.repetition,
                 "user_set": list(s.user_set)}
                for s in self.slots
            ],
        }
        if alpha is not None:
            doc["rate_exponents"] = rate_exponents(alpha)
        return json.dumps(doc, indent=1)


def build_round_schedule(K: int, rounds: int) -> Schedule:
    _check_users(K)
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    reps = repetitions(K)
    slots = [
        SlotId(n, j, r, S)
        for n in range(1, rounds + 1)
        for j in range(1, K + 1)
        for r in range(1, reps[j - 1] + 1)
        for S in combinations(range(K), j)
    ]
    budgets = {j: symbol_budget(K, j) for j in range(1, K + 1)}
    return Schedule(K=K, rounds=rounds, slots=slots, repetitions=reps, budgets=budgets)


def dof_from_schedule(K: int, alpha) -> Fraction:
    """Sum DoF obtained by counting one round of the schedule.

    Order-1 symbols carry ``(1-alpha)`` DoF each and every slot carries one ZF
    symbol of ``alpha`` DoF per user.
    """
    a = _check_alpha(alpha)
    reps = repetitions(K)
    slots = sum(reps[j - 1] * comb(K, j) for j in range(1, K + 1))
    return (order1_symbols_per_round(K) * (1 - a) + slots * K * a) / slots
