import numpy as np
import pytest

from qmatsim.channel import (
    CsitLedger,
    DelayedCsitError,
    LedgerOrderError,
    SimParams,
    csit_error_power,
    draw_channel,
    slot_rng,
)


def _error_variance(alpha, P, draws, seed=0):
    params = SimParams(K=2, P=P, alpha=alpha)
    rng = np.random.default_rng(seed)
    acc = [np.mean(np.abs(draw_channel(params, rng).H_tilde) ** 2) for _ in range(draws)]
    return float(np.mean(acc))


def test_error_power_values():
    assert csit_error_power(0, 123.0) == 1.0
    assert csit_error_power(1, 100.0) == pytest.approx(0.01)
    assert csit_error_power(0.5, 1e6) == pytest.approx(1e-3)


@pytest.mark.parametrize("alpha,P", [(0.0, 1e2), (0.5, 1e2), (1.0, 1e2), (0.0, 1e6), (0.5, 1e6), (1.0, 1e6)])
def test_estimation_error_variance_matches_exponent(alpha, P):
    # 2x2 entries per draw, 2500 draws -> 10^4 samples
    var = _error_variance(alpha, P, 2500, seed=int(alpha * 10 + np.log10(P)))
    assert abs(var / P**-alpha - 1) < 0.1


def test_error_variance_at_full_alpha_and_high_power():
    params = SimParams(K=1, M=1, P=1e8, alpha=1.0)
    rng = np.random.default_rng(4)
    samples = np.concatenate([draw_channel(params, rng).H_tilde.ravel() for _ in range(10**5)])
    assert 0.5e-8 <= np.mean(np.abs(samples) ** 2) <= 2e-8


def test_decomposition_is_exact():
    params = SimParams(K=3, P=1e4, alpha=0.3)
    st = draw_channel(params, np.random.default_rng(1))
    # exact up to one rounding of the subtraction
    assert np.max(np.abs(st.H - (st.H_hat + st.H_tilde))) <= 4 * np.finfo(float).eps


def test_channel_entries_are_unit_variance():
    params = SimParams(K=4, P=1e3, alpha=0.5)
    rng = np.random.default_rng(2)
    H = np.stack([draw_channel(params, rng).H for _ in range(3000)])
    assert abs(np.mean(np.abs(H) ** 2) - 1) < 0.03
    assert abs(np.mean(H)) < 0.03


def test_same_seed_same_channels():
    params = SimParams(K=2, P=1e3, alpha=0.5, seed=9)
    a = draw_channel(params, slot_rng(9, 0, 5))
    b = draw_channel(params, slot_rng(9, 0, 5))
    c = draw_channel(params, slot_rng(9, 0, 6))
    assert np.array_equal(a.H, b.H) and np.array_equal(a.noise, b.noise)
    assert not np.array_equal(a.H, c.H)


def test_params_validation():
    with pytest.raises(ValueError):
        SimParams(K=2, P=10.0, alpha=1.5)
    with pytest.raises(ValueError):
        SimParams(K=3, M=2, P=10.0, alpha=0.5)
    with pytest.raises(ValueError):
        SimParams(K=2, P=1.0, alpha=0.5)
    with pytest.raises(ValueError):
        SimParams(K=2, P=10.0, alpha=0.5, mode="analog")
    assert SimParams(K=3, P=10.0, alpha=0.0).M == 3


class TestLedger:
    def setup_method(self):
        params = SimParams(K=2, P=1e4, alpha=0.5)
        rng = np.random.default_rng(0)
        self.s0 = draw_channel(params, rng)
        self.s1 = draw_channel(params, rng)

    def test_current_slot_truth_is_hidden(self):
        ledger = CsitLedger().advance(0, self.s0)
        with pytest.raises(DelayedCsitError):
            ledger.true_channel(0)
        assert np.array_equal(ledger.current_estimate, self.s0.H_hat)

    def test_previous_slot_truth_is_readable(self):
        ledger = CsitLedger().advance(0, self.s0).advance(1, self.s1)
        assert np.array_equal(ledger.true_channel(0), self.s0.H)
        with pytest.raises(DelayedCsitError):
            ledger.true_channel(1)

    def test_release_ends_the_slot(self):
        ledger = CsitLedger().advance(0, self.s0).release()
        assert ledger.true_channel(0) is self.s0.H
        assert ledger.current_estimate is None

    def test_out_of_order_rejected(self):
        ledger = CsitLedger().advance(0, self.s0)
        with pytest.raises(LedgerOrderError):
            ledger.advance(2, self.s1)
        with pytest.raises(LedgerOrderError):
            ledger.advance(0, self.s1)

    def test_estimate_lookup(self):
        ledger = CsitLedger().advance(0, self.s0)
        assert np.array_equal(ledger.estimate(0), self.s0.H_hat)
        with pytest.raises(KeyError):
            ledger.estimate(3)
