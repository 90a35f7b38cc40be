"""Fading channel generation and the delayed-CSIT ledger.

Every slot draws an i.i.d. Rayleigh channel ``H`` (row ``k`` is ``h_k^H``)
together with an independent estimation error ``H_tilde`` of power
``P**-alpha`` per entry.  The transmitter only ever sees ``H_hat = H - H_tilde``
for the slot in flight; the true ``H`` of a slot becomes readable once the slot
has been released from the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SimParams",
    "ChannelSlotState",
    "CsitLedger",
    "DelayedCsitError",
    "LedgerOrderError",
    "csit_error_power",
    "draw_channel",
    "crandn",
    "slot_rng",
]

MODES = ("sinr-exponent", "bit-true")


class DelayedCsitError(RuntimeError):
    """Raised when true CSI of a slot is read before that slot has ended."""


class LedgerOrderError(ValueError):
    """Raised when slots are registered out of order."""


@dataclass(frozen=True)
class SimParams:
    K: int
    P: float
    alpha: float
    M: int | None = None
    rounds: int = 6
    mode: str = "sinr-exponent"
    seed: int = 0

    def __post_init__(self):
        if self.M is None:
            object.__setattr__(self, "M", self.K)
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K}")
        if self.M < self.K:
            raise ValueError(f"M must be >= K (M={self.M}, K={self.K})")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.P > 1.0:
            raise ValueError(f"P must be > 1, got {self.P}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def log2P(self) -> float:
        return float(np.log2(self.P))


@dataclass(frozen=True)
class ChannelSlotState:
    H: np.ndarray
    H_hat: np.ndarray
    H_tilde: np.ndarray
    noise: np.ndarray


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance `var`."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def slot_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (trial, slot, ...) coordinate."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, key)])


def csit_error_power(alpha: float, P: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not P > 1.0:
        raise ValueError(f"P must be > 1, got {P}")
    return float(P ** (-alpha))


def draw_channel(params: SimParams, rng: np.random.Generator) -> ChannelSlotState:
    K, M = params.K, params.M
    H = crandn(rng, (K, M))
    H_tilde = crandn(rng, (K, M), csit_error_power(params.alpha, params.P))
    noise = crandn(rng, K)
    return ChannelSlotState(H=H, H_hat=H - H_tilde, H_tilde=H_tilde, noise=noise)


@dataclass
class CsitLedger:
    """Transmitter-side view of channel knowledge.

    ``now`` is the slot currently in flight (``None`` between slots).  True CSI
    of slot ``t`` is readable only once ``t < now`` or after ``release()``
    closed slot ``t``.
    """

    past: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    current_estimate: np.ndarray | None = None
    now: int | None = None
    _next: int = 0
    _readable_below: int = 0

    def advance(self, slot_index: int, state: ChannelSlotState) -> "CsitLedger":
        if slot_index != self._next:
            raise LedgerOrderError(
                f"expected slot {self._next}, got {slot_index}"
            )
        # the previous in-flight slot is over once a new one starts
        self._readable_below = slot_index
        self.past[slot_index] = (state.H, state.H_hat)
        self.current_estimate = state.H_hat
        self.now = slot_index
        self._next = slot_index + 1
        return self

    def release(self) -> "CsitLedger":
        """End the in-flight slot: its true channel becomes readable."""
        self._readable_below = self._next
        self.current_estimate = None
        self.now = None
        return self

    def true_channel(self, slot_index: int) -> np.ndarray:
        if slot_index >= self._readable_below:
            raise DelayedCsitError(
                f"true CSI of slot {slot_index} is not available yet "
                f"(readable below slot {self._readable_below})"
            )
        return self.past[slot_index][0]

    def estimate(self, slot_index: int) -> np.ndarray:
        if slot_index not in self.past:
            raise KeyError(f"slot {slot_index} has not been registered")
        return self.past[slot_index][1]
