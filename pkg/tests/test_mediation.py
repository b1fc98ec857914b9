import math
import re

import numpy as np
import pytest

from datatypes import ChainConfig, ErrorFamily, MediationData, NullPartition
from errors import DomainError, InsufficientDrawsError, InvalidSpecError, RankDeficientError
from mcmc import effective_sample_size
from mediation import (
    MEDIATOR_LABEL,
    bf_mediation,
    bf_mediation_from_odds,
    fit_mediation,
    hpd_interval,
    kde_mode,
    partition_from_odds,
    summarize,
)
from special_math import SeededRng, draw_standard_normal

THIRDS = NullPartition()


def _mediation_data(n: int = 60, alpha: float = 0.5, beta: float = 0.5, seed: int = 1) -> MediationData:
    rng = SeededRng(seed)
    x = draw_standard_normal(rng, n)
    m = alpha * x + draw_standard_normal(rng, n)
    y = beta * m + 0.2 * x + draw_standard_normal(rng, n)
    return MediationData(x, m, y)


def test_bf_mediation_reference_values():
    assert bf_mediation(1.0, 1.0, THIRDS) == pytest.approx(1.0)
    assert bf_mediation(10.0, 5.0, THIRDS) == pytest.approx(9.375)
    assert bf_mediation(5.0, 10.0, THIRDS) == pytest.approx(bf_mediation(10.0, 5.0, THIRDS))
    assert bf_mediation(math.inf, math.inf, THIRDS) == math.inf


def test_bf_mediation_from_odds_reference_values():
    assert bf_mediation_from_odds(10.0, 5.0, 1.0, 1.0) == pytest.approx(9.375)
    assert bf_mediation_from_odds(1.0, 1.0, 3.0, 0.2) == pytest.approx(1.0)


def test_odds_and_partition_forms_agree():
    rng = SeededRng(2).generator
    for _ in range(1000):
        bf_a, bf_b = np.exp(rng.uniform(-8, 8, size=2))
        po_a, po_b = np.exp(rng.uniform(-3, 3, size=2))
        via_partition = bf_mediation(bf_a, bf_b, partition_from_odds(po_a, po_b))
        assert bf_mediation_from_odds(bf_a, bf_b, po_a, po_b) == pytest.approx(via_partition, rel=1e-12)


def test_equal_odds_give_thirds():
    q = partition_from_odds(1.0, 1.0)
    assert (q.q00, q.q01, q.q10) == pytest.approx((1 / 3, 1 / 3, 1 / 3))


def test_bf_mediation_is_increasing_in_each_path():
    assert bf_mediation(2.0, 3.0, THIRDS) < bf_mediation(4.0, 3.0, THIRDS)
    assert bf_mediation(2.0, 3.0, THIRDS) < bf_mediation(2.0, 6.0, THIRDS)


def test_bayes_factor_algebra_domain():
    with pytest.raises(DomainError):
        bf_mediation(0.0, 1.0, THIRDS)
    with pytest.raises(DomainError):
        bf_mediation_from_odds(1.0, 1.0, -1.0, 1.0)
    with pytest.raises(DomainError):
        partition_from_odds(0.0, 1.0)


def test_null_partition_validation():
    with pytest.raises(InvalidSpecError):
        NullPartition(0.5, 0.5, 0.5)
    q = NullPartition.normalized(2.0, 1.0, 1.0)
    assert q.q00 == pytest.approx(0.5)


def test_summarize_constant_draws():
    row = summarize(np.full(200, 2.5))
    assert (row.mean, row.mode, row.p2_5, row.p50, row.p97_5) == (2.5, 2.5, 2.5, 2.5, 2.5)
    assert row.ci_length == 0.0


def test_summarize_percentiles_use_linear_interpolation():
    draws = np.arange(1, 10001) / 10000
    row = summarize(draws)
    assert row.p50 == pytest.approx(0.50005)
    assert row.p2_5 == pytest.approx(0.025, abs=1e-3)
    assert row.ci_length == pytest.approx(row.p97_5 - row.p2_5)
    assert row.p2_5 <= row.p25 <= row.p50 <= row.p75 <= row.p97_5


def test_summarize_normal_draws():
    row = summarize(draw_standard_normal(SeededRng(3), 100000))
    assert abs(row.mode) < 0.05
    assert abs(row.mean) < 0.02
    assert row.covers(0.0)


def test_kde_mode_of_skewed_draws():
    draws = SeededRng(4).generator.gamma(3.0, 1.0, 50000)
    assert kde_mode(draws) == pytest.approx(2.0, abs=0.15)


def test_summarize_needs_enough_draws():
    with pytest.raises(InsufficientDrawsError):
        summarize(np.arange(99.0))


def test_hpd_interval():
    normal = draw_standard_normal(SeededRng(5), 100000)
    lower, upper = hpd_interval(normal)
    assert lower == pytest.approx(-1.96, abs=0.05)
    assert upper == pytest.approx(1.96, abs=0.05)

    exponential = SeededRng(6).generator.exponential(size=100000)
    lower, upper = hpd_interval(exponential)
    assert lower < 0.01
    assert upper == pytest.approx(-math.log(0.05), abs=0.05)
    with pytest.raises(DomainError):
        hpd_interval(normal, prob=1.0)


def test_fit_without_bayes_factors():
    result = fit_mediation(_mediation_data(), ErrorFamily.NORMAL, ChainConfig(total_iterations=2000, seed=1),
                           with_bayes_factors=False, report_hpd=True)
    assert np.array_equal(result.ab_draws, result.alpha_draws * result.beta_draws)
    assert set(result.summaries) == {"alpha", "beta", "ab", "tau", "sigma_m", "sigma_y"}
    assert set(result.diagnostics) == {"mediator", "outcome"}
    assert result.bf_alpha is None and result.bf_med is None
    assert result.evidence == {}
    assert set(result.hpd) == {"alpha", "beta", "ab"}
    assert result.summaries["ab"].mean == pytest.approx(float(np.mean(result.alpha_draws * result.beta_draws)))


def test_fit_with_bayes_factors():
    data = _mediation_data(n=80, alpha=0.8, beta=0.8, seed=2)
    partition = NullPartition(0.5, 0.25, 0.25)
    result = fit_mediation(data, ErrorFamily.GAMMA_ONLY, ChainConfig(total_iterations=2000, seed=2),
                           partition=partition)
    assert set(result.evidence) == {"mediator_full", "mediator_without_x", "outcome_full", "outcome_without_m"}
    assert result.bf_med == pytest.approx(bf_mediation(result.bf_alpha, result.bf_beta, partition))
    assert result.bf_alpha > 1.0
    assert {"gamma_m", "gamma_y"} <= set(result.summaries)
    assert result.partition == partition


def test_fit_is_deterministic():
    data = _mediation_data(seed=3)
    config = ChainConfig(total_iterations=1000, seed=7)
    first = fit_mediation(data, ErrorFamily.NORMAL, config, with_bayes_factors=False, stream_id=3)
    second = fit_mediation(data, ErrorFamily.NORMAL, config, with_bayes_factors=False, stream_id=3)
    assert np.array_equal(first.ab_draws, second.ab_draws)


def test_row_permutation_leaves_posterior_unchanged():
    data = _mediation_data(n=80, seed=4)
    config = ChainConfig(total_iterations=6000, seed=8)
    original = fit_mediation(data, ErrorFamily.NORMAL, config, with_bayes_factors=False)
    order = SeededRng(9).generator.permutation(data.n)
    permuted = fit_mediation(data.permuted(order), ErrorFamily.NORMAL, config, with_bayes_factors=False)
    for a, b in ((original.alpha_draws, permuted.alpha_draws), (original.beta_draws, permuted.beta_draws)):
        se = math.sqrt(np.var(a) / effective_sample_size(a) + np.var(b) / effective_sample_size(b))
        assert abs(np.mean(a) - np.mean(b)) < 4.0 * se


def test_equation_errors_carry_the_equation_label():
    data = _mediation_data()
    constant_x = MediationData(np.full(data.n, 2.0), data.m, data.y)
    with pytest.raises(RankDeficientError, match=re.escape(MEDIATOR_LABEL)):
        fit_mediation(constant_x, ErrorFamily.NORMAL, ChainConfig(total_iterations=1000))


def test_sub_models_in_worker_processes_give_the_same_draws():
    data = _mediation_data(seed=5)
    config = ChainConfig(total_iterations=1000, seed=10)
    serial = fit_mediation(data, ErrorFamily.NORMAL, config, with_bayes_factors=False)
    parallel = fit_mediation(data, ErrorFamily.NORMAL, config, with_bayes_factors=False, workers=2)
    assert np.array_equal(serial.ab_draws, parallel.ab_draws)


def test_worker_errors_keep_the_equation_label():
    data = _mediation_data()
    constant_x = MediationData(np.full(data.n, 2.0), data.m, data.y)
    with pytest.raises(RankDeficientError, match=re.escape(MEDIATOR_LABEL)):
        fit_mediation(constant_x, ErrorFamily.NORMAL, ChainConfig(total_iterations=1000), workers=2)


def test_mediation_data_validation():
    with pytest.raises(InvalidSpecError):
        MediationData(np.zeros(5), np.zeros(4), np.zeros(5))
    with pytest.raises(InvalidSpecError):
        MediationData(np.zeros(3), np.zeros(3), np.zeros(3))
