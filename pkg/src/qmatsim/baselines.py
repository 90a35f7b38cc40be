"""Per-slot sum rates of the reference schemes (ZF with rate splitting, TDMA, MAT)."""

from __future__ import annotations

import math

import numpy as np

from .channel import SimParams, crandn, draw_channel, slot_rng
from .engine import QmatTrial
from .precoding import zf_beamformer

__all__ = ["zf_rate_split_rate", "tdma_rate", "mat_rate", "scheme_rate", "SCHEMES"]

SCHEMES = ("qmat", "mat", "zf", "tdma")


def _log2p1(x: float) -> float:
    return math.log2(1.0 + x)


def zf_rate_split_slot(H: np.ndarray, H_hat: np.ndarray, P: float, alpha: float,
                       rng: np.random.Generator) -> float:
    """One slot of rate-split ZF: a common layer at power P over ZF layers at P^alpha.

    The common symbol is decoded first by every user (treating the ZF layers as
    noise) and then removed; each user then decodes its own ZF symbol.
    """
    K, M = H.shape
    L = math.log2(P)
    v_c = crandn(rng, M)
    v_c /= np.linalg.norm(v_c)
    zf = np.stack([zf_beamformer(np.delete(H_hat, k, axis=0), rng, M) for k in range(K)], axis=1)
    g_c = np.abs(H @ v_c) ** 2 * P
    g_zf = np.abs(H @ zf) ** 2 * P**alpha
    own = np.diag(g_zf)
    cross = g_zf.sum(axis=1) - own
    common_rate = min(_log2p1(float(np.min(g_c / (g_zf.sum(axis=1) + 1.0)))), (1.0 - alpha) * L)
    private = sum(min(_log2p1(own[k] / (cross[k] + 1.0)), alpha * L) for k in range(K))
    return common_rate + private


def zf_rate_split_rate(params: SimParams, trial: int, slots: int) -> float:
    total = 0.0
    for t in range(slots):
        rng = slot_rng(params.seed, trial, t)
        st = draw_channel(params, rng)
        total += zf_rate_split_slot(st.H, st.H_hat, params.P, params.alpha, rng)
    return total / slots


def tdma_rate(params: SimParams, trial: int, slots: int) -> float:
    """Round-robin single-user slots with matched filtering on the current estimate."""
    L = params.log2P
    total = 0.0
    for t in range(slots):
        rng = slot_rng(params.seed, trial, t)
        st = draw_channel(params, rng)
        k = t % params.K
        # row k is h_k^H, so the matched beam is its conjugate
        v = st.H_hat[k].conj()
        v = v / np.linalg.norm(v)
        total += min(L, _log2p1(params.P * abs(st.H[k] @ v) ** 2))
    return total / slots


def mat_rate(params: SimParams, trial: int, include_final: bool = False) -> float:
    """Q-MAT with no current CSIT: alpha forced to 0, so the ZF layer carries nothing."""
    p0 = SimParams(K=params.K, P=params.P, alpha=0.0, M=params.M, rounds=params.rounds,
                   mode=params.mode, seed=params.seed)
    return QmatTrial(p0, trial, include_final=include_final).run().sum_rate


def scheme_rate(scheme: str, params: SimParams, trial: int, include_final: bool = False,
                backoff: float = 0.2) -> float:
    """Sum rate in bits per slot of one trial of `scheme`."""
    if scheme == "qmat":
        return QmatTrial(params, trial, backoff=backoff, include_final=include_final).run().sum_rate
    if scheme == "mat":
        return mat_rate(params, trial, include_final)
    # reference schemes use as many slots as the Q-MAT run they are compared with
    slots = max(params.K, 12)
    if scheme == "zf":
        return zf_rate_split_rate(params, trial, slots)
    if scheme == "tdma":
        return tdma_rate(params, trial, slots)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
