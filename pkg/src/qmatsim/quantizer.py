"""Gap-enforced scalar quantizers and the two-step interference quantizer.

``Q_{b1,b2}`` is an MSE-optimal (Lloyd-Max) Gaussian codebook built with
``(b1-b2)/2*log2(P) - 1/2*log2(log2(P))`` bits per real dimension and then
pruned so that neighbouring levels are at least ``sqrt(log2(P) P**b2)`` apart.
The wide spacing makes the quantizer insensitive to additive noise of power
``P**b2``, which is what lets a receiver re-derive the transmitter's coarse
index from its own noisy observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "Codebook",
    "UniformQuantizer",
    "QuantizedInterference",
    "build_codebook",
    "lloyd_max_gaussian",
    "quantize",
    "quantize_complex",
    "agreement_probability",
    "gaussian_distortion",
    "two_step_quantize",
    "interference_quantizer",
    "receiver_requantize",
    "int_to_bits",
    "bits_to_int",
]

LLOYD_ITERS = 64
LLOYD_TOL = 1e-10
MAX_LEVELS = 1 << 22
# fine / single stage uniform quantizers span this many reference std devs
UNIFORM_SPAN = 5.0

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def int_to_bits(value: int, width: int) -> np.ndarray:
    """MSB-first natural binary representation."""
    if width == 0:
        return np.zeros(0, dtype=np.uint8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((int(value) >> shifts) & 1).astype(np.uint8)


def bits_to_int(bits) -> int:
    out = 0
    for b in np.asarray(bits, dtype=np.uint8):
        out = (out << 1) | int(b)
    return out


def _pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def _cell_mass(a, b):
    # upper-tail form keeps precision for cells far in the positive tail
    return np.where(a >= 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def lloyd_max_gaussian(n_levels: int, iters: int = LLOYD_ITERS, tol: float = LLOYD_TOL) -> np.ndarray:
    """Lloyd-Max reconstruction levels for a unit-variance Gaussian.

    Starts from the asymptotically optimal companding levels (point density
    proportional to ``p**(1/3)``, i.e. quantiles of N(0, 3)) and runs the
    centroid / midpoint iteration.
    """
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    if n_levels == 1:
        return np.zeros(1)
    u = (np.arange(n_levels) + 0.5) / n_levels
    c = math.sqrt(3.0) * ndtri(u)
    c = 0.5 * (c - c[::-1])  # exact symmetry
    for _ in range(iters):
        edges = np.concatenate(([-np.inf], 0.5 * (c[:-1] + c[1:]), [np.inf]))
        a, b = edges[:-1], edges[1:]
        mass = _cell_mass(a, b)
        first = _pdf(a) - _pdf(b)
        new = np.where(mass > 0, first / np.where(mass > 0, mass, 1.0), c)
        new = 0.5 * (new - new[::-1])
        delta = np.max(np.abs(new - c)) / max(np.max(np.abs(new)), 1e-300)
        c = new
        if delta < tol:
            break
    return c


def gaussian_distortion(points: np.ndarray, sigma: float) -> float:
    """Exact MSE of nearest-point quantization of N(0, sigma^2) onto `points`."""
    p = np.sort(np.asarray(points, dtype=float)) / sigma
    if p.size == 1:
        return float(sigma**2 * (1.0 + p[0] ** 2))
    edges = 0.5 * (p[:-1] + p[1:])
    total = 0.0
    # end cells: closed form of  int (x-c)^2 phi(x) dx  over a half line
    for c, lo, hi in ((p[0], -np.inf, edges[0]), (p[-1], edges[-1], np.inf)):
        if np.isinf(lo):
            m0, m1 = ndtr(hi), -_pdf(hi)
            m2 = ndtr(hi) - hi * _pdf(hi)
        else:
            m0, m1 = ndtr(-lo), _pdf(lo)
            m2 = ndtr(-lo) + lo * _pdf(lo)
        total += m2 - 2 * c * m1 + c * c * m0
    if p.size > 2:
        # inner cells: 8-point Gauss-Legendre (integrand is smooth per cell)
        x, w = np.polynomial.legendre.leggauss(8)
        a, b = edges[:-1], edges[1:]
        c = p[1:-1]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals = np.square(nodes - c[:, None]) * _pdf(nodes)
        total += float(np.sum(half * (vals @ w)))
    return float(sigma**2 * total)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Codebook:
    beta1: float
    beta2: float
    P: float
    points: np.ndarray
    boundaries: np.ndarray
    rate: float
    degenerate: bool = False
    distortion: float = 0.0

    @property
    def log2P(self) -> float:
        return math.log2(self.P)

    @property
    def min_distance(self) -> float:
        return math.sqrt(self.log2P * self.P**self.beta2)

    @property
    def guard_width(self) -> float:
        return math.sqrt(math.log(math.log(self.P)) * self.P**self.beta2)

    @property
    def index_bits(self) -> int:
        n = self.points.size
        return 0 if n <= 1 else int(math.ceil(math.log2(n)))

    def index(self, x) -> np.ndarray:
        """Cell index of each sample; ties go to the lower level."""
        return np.searchsorted(self.boundaries, x, side="left")

    def to_json(self) -> str:
        return json.dumps(
            {
                "beta1": self.beta1,
                "beta2": self.beta2,
                "P": self.P,
                "rate_bits_per_dim": self.rate,
                "degenerate": self.degenerate,
                "min_distance": self.min_distance,
                "guard_width": self.guard_width,
                "gaussian_distortion": self.distortion,
                "points": self.points.tolist(),
                "boundaries": self.boundaries.tolist(),
            }
        )


def prune_min_distance(points: np.ndarray, min_distance: float) -> np.ndarray:
    kept = [points[0]]
    for p in points[1:]:
        if p - kept[-1] >= min_distance:
            kept.append(p)
    return np.asarray(kept)


@lru_cache(maxsize=256)
def build_codebook(beta1: float, beta2: float, P: float) -> Codebook:
    """Build ``Q_{beta1,beta2}`` for power parameter `P`.

    `beta2` may be 0 (the ``alpha = 0`` end of the interference quantizer);
    the construction is unchanged.
    """
    beta1, beta2, P = float(beta1), float(beta2), float(P)
    if beta2 > beta1:
        raise ValueError(f"beta2 ({beta2}) must not exceed beta1 ({beta1})")
    if beta2 < 0:
        raise ValueError(f"beta2 must be >= 0, got {beta2}")
    if not P > 4.0:
        raise ValueError(f"P must exceed 4 so that log2(log2(P)) > 0, got {P}")
    L = math.log2(P)
    rate = 0.5 * (beta1 - beta2) * L - 0.5 * math.log2(L)
    n = int(math.floor(2.0**rate)) if rate > 0 else 1
    if n > MAX_LEVELS:
        raise ValueError(f"codebook with {n} levels exceeds the {MAX_LEVELS} limit")
    sigma = math.sqrt(P**beta1)
    if n <= 1:
        pts = np.zeros(1)
    else:
        pts = prune_min_distance(lloyd_max_gaussian(n) * sigma, math.sqrt(L * P**beta2))
    bnd = 0.5 * (pts[:-1] + pts[1:])
    return Codebook(
        beta1=beta1,
        beta2=beta2,
        P=P,
        points=_frozen(pts),
        boundaries=_frozen(bnd),
        rate=rate,
        degenerate=pts.size == 1,
        distortion=gaussian_distortion(pts, sigma),
    )


def quantize(codebook: Codebook, x: float) -> tuple[np.ndarray, float]:
    idx = int(codebook.index(float(x)))
    return int_to_bits(idx, codebook.index_bits), float(codebook.points[idx])


def quantize_complex(codebook: Codebook, z: complex) -> tuple[np.ndarray, complex]:
    b_re, l_re = quantize(codebook, z.real)
    b_im, l_im = quantize(codebook, z.imag)
    return np.concatenate((b_re, b_im)), complex(l_re, l_im)


def dequantize_complex(codebook: Codebook, bits) -> complex:
    w = codebook.index_bits
    bits = np.asarray(bits, dtype=np.uint8)
    n = codebook.points.size
    i_re = min(bits_to_int(bits[:w]), n - 1)
    i_im = min(bits_to_int(bits[w : 2 * w]), n - 1)
    return complex(codebook.points[i_re], codebook.points[i_im])


def agreement_probability(codebook: Codebook, beta2: float, P: float, trials: int,
                          rng: np.random.Generator) -> float:
    """Fraction of trials with ``Q(sqrt(P^b1) y + sqrt(P^b2) n) == Q(sqrt(P^b1) y)``.

    `beta2` is the noise exponent; ``-inf`` means no noise.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    y = rng.standard_normal(trials) * math.sqrt(P**codebook.beta1)
    n = rng.standard_normal(trials) * math.sqrt(P**beta2)
    return float(np.mean(codebook.index(y) == codebook.index(y + n)))


@dataclass(frozen=True)
class UniformQuantizer:
    """Mid-rise uniform quantizer with ``2**bits`` cells on ``[-half_range, half_range]``."""

    bits: int
    half_range: float

    @property
    def step(self) -> float:
        return 2.0 * self.half_range / (1 << self.bits)

    def index(self, x: float) -> int:
        if self.bits == 0:
            return 0
        n = 1 << self.bits
        i = int(math.floor((x + self.half_range) / self.step))
        return min(max(i, 0), n - 1)

    def level(self, idx: int) -> float:
        if self.bits == 0:
            return 0.0
        return -self.half_range + (idx + 0.5) * self.step

    def quantize(self, x: float) -> tuple[np.ndarray, float]:
        i = self.index(x)
        return int_to_bits(i, self.bits), self.level(i)


def _split_bits(total: int) -> tuple[int, int]:
    return (total + 1) // 2, total // 2


@dataclass(frozen=True)
class InterferenceQuantizer:
    """Both stages of the interference quantizer for one ``(alpha, P)``.

    ``coarse`` is ``Q_{1-alpha,alpha}`` when alpha < 1/2 and ``None``
    otherwise; ``fine_re`` / ``fine_im`` quantize the residual (alpha < 1/2) or
    the interference itself (alpha >= 1/2).
    """

    alpha: float
    P: float
    coarse: Codebook | None
    fine_re: UniformQuantizer
    fine_im: UniformQuantizer

    @property
    def coarse_width(self) -> int:
        return 0 if self.coarse is None else 2 * self.coarse.index_bits

    @property
    def fine_width(self) -> int:
        return self.fine_re.bits + self.fine_im.bits

    @property
    def width(self) -> int:
        return self.coarse_width + self.fine_width

    def error_variance(self) -> float:
        """Nominal ``E|i - combined|^2`` used to weight interference observations."""
        if self.fine_width:
            return (self.fine_re.step**2 + self.fine_im.step**2) / 12.0
        if self.coarse is not None:
            return 2.0 * self.coarse.distortion
        return 2.0 * (self.fine_re.half_range / UNIFORM_SPAN) ** 2

    def fine(self, z: complex) -> tuple[np.ndarray, complex]:
        b_re, l_re = self.fine_re.quantize(z.real)
        b_im, l_im = self.fine_im.quantize(z.imag)
        return np.concatenate((b_re, b_im)), complex(l_re, l_im)

    def fine_level(self, bits) -> complex:
        bits = np.asarray(bits, dtype=np.uint8)
        nr = self.fine_re.bits
        return complex(
            self.fine_re.level(bits_to_int(bits[:nr])),
            self.fine_im.level(bits_to_int(bits[nr : nr + self.fine_im.bits])),
        )

    def dequantize(self, bits) -> complex:
        """Rebuild the combined estimate from a (possibly zero-padded) bit string."""
        bits = np.asarray(bits, dtype=np.uint8)
        # padding is prepended, so the payload sits in the trailing bits
        bits = bits[bits.size - self.width :] if self.width else bits[:0]
        cw = self.coarse_width
        coarse = dequantize_complex(self.coarse, bits[:cw]) if self.coarse is not None else 0j
        return coarse + self.fine_level(bits[cw:])


@lru_cache(maxsize=256)
def interference_quantizer(alpha: float, P: float, backoff: float = 0.0) -> InterferenceQuantizer:
    """Quantizer pair used on interference of power ~ ``P**(1-alpha)``.

    `backoff` shrinks the bit budget of the transmitted (fine or single) stage
    to ``round((1-backoff) * rate * log2 P)``.
    """
    alpha, P = float(alpha), float(P)
    L = math.log2(P)
    if alpha < 0.5:
        coarse = build_codebook(1.0 - alpha, alpha, P)
        total = int(round((1.0 - backoff) * alpha * L))
        # residual of the coarse stage: spread of the Gaussian distortion
        ref_std = math.sqrt(coarse.distortion)
    else:
        coarse = None
        total = int(round((1.0 - backoff) * (1.0 - alpha) * L))
        ref_std = math.sqrt(P ** (1.0 - alpha))
    b_re, b_im = _split_bits(total)
    A = UNIFORM_SPAN * ref_std
    return InterferenceQuantizer(alpha, P, coarse, UniformQuantizer(b_re, A), UniformQuantizer(b_im, A))


@dataclass(frozen=True)
class QuantizedInterference:
    coarse_bits: np.ndarray
    fine_bits: np.ndarray
    coarse_level: complex
    fine_level: complex
    combined: complex = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "combined", self.coarse_level + self.fine_level)

    @property
    def bits(self) -> np.ndarray:
        return np.concatenate((self.coarse_bits, self.fine_bits))


def two_step_quantize(i: complex, alpha: float, P: float, backoff: float = 0.0) -> QuantizedInterference:
    """Quantize interference ``i`` so that ``i - combined`` sits near the noise floor.

    For alpha < 1/2 the coarse index comes from ``Q_{1-alpha,alpha}`` and the
    residual is requantized with ``alpha*log2 P`` bits; otherwise a single
    uniform stage with ``(1-alpha)*log2 P`` bits is used.
    """
    q = interference_quantizer(alpha, P, backoff)
    i = complex(i)
    if q.coarse is not None:
        cbits, clevel = quantize_complex(q.coarse, i)
    else:
        cbits, clevel = np.zeros(0, dtype=np.uint8), 0j
    fbits, flevel = q.fine(i - clevel)
    return QuantizedInterference(cbits, fbits, clevel, flevel)


def receiver_requantize(y: complex, alpha: float, P: float, correction: complex = 0j) -> np.ndarray:
    """Coarse index bits of ``Q_{1-alpha,alpha}(y - correction)``.

    A receiver that already knows the fine-stage estimate of the residual can
    pass it as `correction`, which moves its observation next to a codebook
    point instead of next to the (unknown) interference value.
    """
    if alpha >= 0.5:
        raise ValueError("the coarse stage only exists for alpha < 1/2")
    cb = build_codebook(1.0 - alpha, alpha, P)
    bits, _ = quantize_complex(cb, complex(y) - correction)
    return bits
