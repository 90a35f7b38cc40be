import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from qmatsim.channel import crandn
from qmatsim.quantizer import (
    UniformQuantizer,
    agreement_probability,
    bits_to_int,
    build_codebook,
    gaussian_distortion,
    int_to_bits,
    interference_quantizer,
    lloyd_max_gaussian,
    quantize,
    quantize_complex,
    receiver_requantize,
    two_step_quantize,
)

# Max (1960) optimum levels / MSE for a unit Gaussian
MAX_TABLE = {
    4: ([0.4528, 1.510], 0.1175),
    8: ([0.2451, 0.7560, 1.344, 2.152], 0.03455),
}


def exact_agreement(cb, noise_std):
    """P{Q(y + n) == Q(y)} by numerical integration over each cell."""
    sig = math.sqrt(cb.P**cb.beta1)
    edges = np.concatenate(([-np.inf], cb.boundaries, [np.inf]))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        lo, hi = max(a, -12 * sig), min(b, 12 * sig)

        def f(y, a=a, b=b):
            stay = stats.norm.cdf((b - y) / noise_std) - stats.norm.cdf((a - y) / noise_std)
            return stats.norm.pdf(y, scale=sig) * stay

        total += integrate.quad(f, lo, hi, limit=200)[0]
    return total


@pytest.mark.parametrize("n", sorted(MAX_TABLE))
def test_lloyd_max_matches_classical_table(n):
    levels, mse = MAX_TABLE[n]
    c = lloyd_max_gaussian(n)
    assert np.allclose(c[n // 2 :], levels, atol=2e-3)
    assert gaussian_distortion(c, 1.0) == pytest.approx(mse, rel=5e-3)


def test_distortion_matches_monte_carlo():
    cb = build_codebook(1.0, 0.5, 2.0**20)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(200_000) * math.sqrt(cb.P)
    mc = np.mean((x - cb.points[cb.index(x)]) ** 2)
    assert mc == pytest.approx(cb.distortion, rel=0.03)


def test_rate_and_spacing_formula():
    cb = build_codebook(1.0, 0.5, 2.0**20)
    assert cb.rate == pytest.approx(5 - 0.5 * math.log2(20))
    assert cb.points.size <= 7
    assert cb.min_distance == pytest.approx(math.sqrt(20 * 2**10))
    assert cb.min_distance == pytest.approx(143.108, abs=1e-3)
    assert cb.guard_width == pytest.approx(math.sqrt(math.log(math.log(2.0**20)) * 2**10))


def test_distortion_bound():
    cb = build_codebook(1.0, 0.5, 2.0**20)
    assert cb.distortion <= 4 * 20 * 2**10


def test_equal_exponents_give_single_point():
    cb = build_codebook(0.5, 0.5, 1e6)
    assert cb.degenerate and cb.points.tolist() == [0.0]
    assert cb.index_bits == 0
    bits, level = quantize(cb, 123.4)
    assert bits.size == 0 and level == 0.0


def test_parameter_errors():
    with pytest.raises(ValueError):
        build_codebook(0.4, 0.6, 1e4)
    with pytest.raises(ValueError):
        build_codebook(1.0, 0.5, 3.0)


@settings(max_examples=40, deadline=None)
@given(
    b1=st.floats(0.05, 1.0),
    frac=st.floats(0.0, 1.0),
    logP=st.floats(3.0, 40.0),
)
def test_min_distance_and_width_invariants(b1, frac, logP):
    b2 = b1 * frac
    cb = build_codebook(b1, b2, 2.0**logP)
    gaps = np.diff(cb.points)
    assert np.all(gaps >= cb.min_distance * (1 - 1e-12))
    assert np.all(np.diff(cb.points) > 0)
    assert cb.points.size <= max(1, math.floor(2.0 ** max(cb.rate, 0)))
    assert cb.index_bits == (0 if cb.points.size == 1 else math.ceil(math.log2(cb.points.size)))
    assert np.allclose(cb.boundaries, 0.5 * (cb.points[:-1] + cb.points[1:]))


@settings(max_examples=80, deadline=None)
@given(x=st.floats(-1e7, 1e7, allow_nan=False))
def test_quantize_is_nearest_and_idempotent(x):
    cb = build_codebook(1.0, 0.5, 1e8)
    bits, level = quantize(cb, x)
    assert abs(x - level) <= np.min(np.abs(x - cb.points)) + 1e-9
    assert quantize(cb, level)[1] == level
    assert bits.size == cb.index_bits
    assert cb.points[bits_to_int(bits)] == level


def test_levels_overload_and_ties():
    cb = build_codebook(1.0, 0.5, 2.0**20)
    for p in cb.points:
        assert quantize(cb, p)[1] == p
    assert quantize(cb, 1e12)[1] == cb.points[-1]
    assert quantize(cb, -1e12)[1] == cb.points[0]
    mid = cb.boundaries[2]
    assert quantize(cb, mid)[1] == cb.points[2]


def test_complex_quantization():
    cb = build_codebook(1.0, 0.5, 2.0**20)
    assert quantize_complex(cb, 0j)[1] == 0j
    z = complex(cb.points[1], cb.points[5])
    bits, level = quantize_complex(cb, z)
    assert level == z
    assert bits.size == 2 * cb.index_bits
    rng = np.random.default_rng(3)
    zs = crandn(rng, 20_000, 2 * cb.P)
    d = np.mean([abs(v - quantize_complex(cb, v)[1]) ** 2 for v in zs])
    assert d <= 2 * 4 * math.log2(cb.P) * cb.P**0.5


def test_agreement_without_noise():
    cb = build_codebook(1.0, 0.5, 1e6)
    assert agreement_probability(cb, -np.inf, 1e6, 500, np.random.default_rng(0)) == 1.0


@pytest.mark.parametrize("P", [1e4, 1e6, 1e8])
def test_agreement_matches_integration_oracle(P):
    cb = build_codebook(1.0, 0.5, P)
    exact = exact_agreement(cb, math.sqrt(P**0.5))
    mc = agreement_probability(cb, 0.5, P, 10_000, np.random.default_rng(int(P) % 97))
    sd = math.sqrt(exact * (1 - exact) / 10_000)
    assert abs(mc - exact) <= 4 * sd + 1e-3


def test_agreement_high_power():
    cb = build_codebook(1.0, 0.5, 1e8)
    assert agreement_probability(cb, 0.5, 1e8, 10_000, np.random.default_rng(1)) >= 0.9


def test_agreement_trend_above_degenerate_range():
    rng = np.random.default_rng(7)
    vals = [agreement_probability(build_codebook(1.0, 0.5, P), 0.5, P, 10_000, rng) for P in (1e4, 1e6, 1e8)]
    assert all(b >= a - 0.02 for a, b in zip(vals, vals[1:]))


def test_bit_helpers_roundtrip():
    for v in (0, 1, 5, 255):
        assert bits_to_int(int_to_bits(v, 9)) == v
    assert int_to_bits(3, 0).size == 0


def test_uniform_quantizer():
    q = UniformQuantizer(3, 4.0)
    assert q.step == 1.0
    assert q.quantize(0.2)[1] == 0.5
    assert q.quantize(100.0)[1] == 3.5
    assert q.quantize(-100.0)[1] == -3.5
    assert UniformQuantizer(0, 4.0).quantize(3.0)[1] == 0.0


class TestTwoStep:
    def test_alpha_one_is_empty(self):
        q = two_step_quantize(0.7 - 0.2j, 1.0, 1e6)
        assert q.bits.size == 0 and q.combined == 0

    def test_coarse_rate_at_quarter(self):
        cq = interference_quantizer(0.25, 2.0**16)
        assert cq.coarse.beta1 == 0.75 and cq.coarse.beta2 == 0.25
        assert cq.coarse.index_bits == 2
        assert cq.fine_width == 4

    def test_half_uses_single_stage(self):
        q = two_step_quantize(10 + 3j, 0.5, 2.0**20)
        assert q.coarse_bits.size == 0 and q.fine_bits.size == 10

    def test_combined_is_sum_of_stages(self):
        q = two_step_quantize(800 - 1300j, 0.25, 1e8)
        assert q.combined == q.coarse_level + q.fine_level

    def test_dequantize_reproduces_combined(self):
        rng = np.random.default_rng(4)
        for alpha in (0.0, 0.25, 0.5, 0.75):
            cq = interference_quantizer(alpha, 2.0**30)
            for z in crandn(rng, 50, 2.0 ** (30 * (1 - alpha))):
                q = two_step_quantize(z, alpha, 2.0**30)
                assert cq.dequantize(q.bits) == q.combined

    def test_residual_does_not_grow_with_power(self):
        rng = np.random.default_rng(0)
        powers = [10.0**e for e in range(2, 9)]
        errs = []
        for P in powers:
            i = crandn(rng, 3000, P**0.75)
            errs.append(np.mean([abs(z - two_step_quantize(z, 0.25, P).combined) ** 2 for z in i]))
        slope = np.polyfit(np.log2(powers), np.log2(errs), 1)[0]
        assert abs(slope) <= 0.1

    def test_bit_lengths(self):
        L = 40
        for alpha in (0.1, 0.3):
            q = two_step_quantize(1e5 + 0j, alpha, 2.0**L)
            assert q.fine_bits.size == round(alpha * L)
        q = two_step_quantize(1e3 + 0j, 0.75, 2.0**L)
        assert q.coarse_bits.size == 0 and q.fine_bits.size == round(0.25 * L)


class TestReceiverRequantize:
    def test_exact_without_residue(self):
        rng = np.random.default_rng(0)
        for z in crandn(rng, 100, 1e8**0.75):
            assert np.array_equal(receiver_requantize(z, 0.25, 1e8), two_step_quantize(z, 0.25, 1e8).coarse_bits)

    def test_match_rate_with_residue(self):
        P = 1e8
        rng = np.random.default_rng(1)
        i = crandn(rng, 1000, P**0.75)
        r = crandn(rng, 1000, P**0.25)
        hits = [np.array_equal(receiver_requantize(a + b, 0.25, P), two_step_quantize(a, 0.25, P).coarse_bits)
                for a, b in zip(i, r)]
        assert np.mean(hits) >= 0.9

    def test_matched_bits_rebuild_combined(self):
        P, alpha = 1e8, 0.25
        cq = interference_quantizer(alpha, P)
        q = two_step_quantize(3e4 - 1e4j, alpha, P)
        coarse = receiver_requantize(3e4 - 1e4j, alpha, P)
        assert cq.dequantize(np.concatenate((coarse, q.fine_bits))) == q.combined

    def test_rejects_single_stage_range(self):
        with pytest.raises(ValueError):
            receiver_requantize(1.0, 0.5, 1e6)


def test_codebook_json_dump():
    import json

    doc = json.loads(build_codebook(1.0, 0.5, 2.0**20).to_json())
    assert doc["beta1"] == 1.0 and len(doc["points"]) == len(doc["boundaries"]) + 1
