import math
import warnings

import numpy as np
import pytest
from scipy import stats

from bnpdetect.core import ChainState, DetectionHistoryTable, ModelSpec, validate_state
from bnpdetect.diagnostics import crp_cluster_counts
from bnpdetect.likelihood import FLAT
from bnpdetect.mcmc import (
    SamplerSchedule,
    ScaleAdapter,
    TruncationWarning,
    alpha_update_escobar_west,
    crp_active_p_update,
    crp_label_update_neal8,
    escobar_west_mixture_weight,
    fm_label_gibbs,
    fm_label_probabilities,
    fm_ordered_p_update,
    neal8_log_weights,
    neal8_sweep,
    ordering_allows,
    reflect_unit,
    run_chain,
    run_chains,
    rw_update_probability,
    structural_update,
)
from bnpdetect.simharness import simulate_cr, simulate_occ


def _weights(logw):
    w = np.exp(logw - np.max(logw))
    return w / w.sum()


def pooled_chi2(a, b, min_expected=5.0):
    """Two-sample chi-square on integer samples, pooling sparse tail bins."""
    support = np.union1d(a, b)
    tab = np.array([[np.sum(a == v) for v in support], [np.sum(b == v) for v in support]], float)
    pooled, cur = [], np.zeros(2)
    for col in tab.T:
        cur = cur + col
        if cur.sum() * min(tab.sum(1)) / tab.sum() >= min_expected:
            pooled.append(cur)
            cur = np.zeros(2)
    if cur.sum():
        if pooled:
            pooled[-1] = pooled[-1] + cur
        else:
            pooled.append(cur)
    if len(pooled) < 2:
        return 1.0
    return stats.chi2_contingency(np.array(pooled).T)[1]


def prior_only_cluster_counts(alpha, n, sweeps, seed, thin=10, burn=100):
    """Algorithm-8 sweeps with a constant likelihood and fixed alpha."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, np.int64)
    counts = np.zeros(n, np.int64)
    counts[0] = n
    p = np.full(n, 0.5)
    tll = np.zeros((n, 1))
    pat = np.zeros(n, np.int64)
    z = np.zeros(1, np.int64)
    out = []
    for s in range(sweeps):
        neal8_sweep(labels, counts, p, tll, pat, z, z, z, FLAT, 0.5, alpha,
                    rng.random((n, 1)), rng.random(n))
        assert (counts > 0).sum() == len(np.unique(labels))
        if s >= burn and s % thin == 0:
            out.append(int((counts > 0).sum()))
    return np.array(out)


# random-walk kernel

def test_reflection():
    assert reflect_unit(1.1) == pytest.approx(0.9)
    assert reflect_unit(-0.1) == pytest.approx(0.1)
    assert reflect_unit(0.3) == pytest.approx(0.3)
    x = reflect_unit(np.linspace(-3, 3, 101))
    assert ((x >= 0) & (x <= 1)).all()


def test_reflected_candidate_is_what_gets_evaluated(rng):
    seen = []

    def ll(v):
        seen.append(v)
        return 0.0

    rw_update_probability(0.5, ll, 0.1, rng, candidate=1.1)
    assert seen[-1] == pytest.approx(0.9)


def test_infinite_ratio_always_accepted(rng):
    def ll(v):
        return math.inf if v > 0.6 else -50.0

    for _ in range(20):
        value, accepted = rw_update_probability(0.5, ll, 0.1, rng, candidate=0.8)
        assert accepted and value == pytest.approx(0.8)


def test_zero_likelihood_candidate_rejected(rng):
    value, accepted = rw_update_probability(
        0.5, lambda v: -math.inf if v > 0.6 else 0.0, 0.1, rng, candidate=0.8
    )
    assert not accepted and value == 0.5


def test_nonfinite_current_loglik_is_contract_violation(rng):
    with pytest.raises(ValueError):
        rw_update_probability(0.5, lambda v: -math.inf, 0.1, rng)


def test_adapter_increases_scale_at_high_acceptance():
    ad = ScaleAdapter(0.1, (), interval=50)
    for i in range(50):
        ad.record(i % 5 != 0)  # 0.8
    assert ad.scale > 0.1
    ad = ScaleAdapter(0.1, (), interval=50)
    for i in range(50):
        ad.record(i % 10 == 0)  # 0.1
    assert ad.scale < 0.1


def test_adapter_frozen_and_per_element():
    ad = ScaleAdapter(0.1, (2,), interval=10)
    for _ in range(10):
        ad.record(True, where=0)
    assert ad.scale[0] > 0.1 and ad.scale[1] == 0.1
    ad.freeze()
    before = ad.scale.copy()
    for _ in range(100):
        ad.record(True, where=1)
    np.testing.assert_array_equal(ad.scale, before)
    assert ad.acceptance_rate() == 1.0


def test_adaptation_moves_acceptance_towards_target():
    rng = np.random.default_rng(5)
    ad = ScaleAdapter(0.001, (), interval=50)
    x = 0.5
    for _ in range(20000):
        x, acc = rw_update_probability(
            x, lambda v: stats.beta(40, 40).logpdf(v), float(ad.scale), rng
        )
        ad.record(acc)
    ad.freeze()
    ad.total_accepts[...] = 0
    ad.total_props[...] = 0
    for _ in range(5000):
        x, acc = rw_update_probability(
            x, lambda v: stats.beta(40, 40).logpdf(v), float(ad.scale), rng
        )
        ad.record(acc)
    assert abs(ad.acceptance_rate() - 0.44) < 0.06


# finite mixture

def _cr_table(rows):
    return DetectionHistoryTable(np.array(rows, dtype=np.int8), "cr")


def test_fm_label_probabilities_examples():
    from bnpdetect.mcmc import _normalise_log_weights

    np.testing.assert_allclose(_normalise_log_weights(np.log([0.2, 0.6])), [0.25, 0.75])

    table = _cr_table([[1, 1, 1, 1, 1]])
    spec = ModelSpec("cr", "fm", n_components=3)
    state = ChainState(0.7, np.full(3, 0.4), np.zeros(1, np.int64))
    np.testing.assert_allclose(fm_label_probabilities(0, state, spec, table), [1 / 3] * 3)

    spec = ModelSpec("cr", "fm", n_components=2)
    state = ChainState(0.7, np.array([0.3, 0.9]), np.zeros(1, np.int64))
    probs = fm_label_probabilities(0, state, spec, table)
    assert probs[1] == pytest.approx(81 / 82, abs=1e-12)
    assert probs[1] == pytest.approx(0.9878, abs=5e-5)


def test_fm_label_gibbs_frequencies():
    table = _cr_table([[1, 1, 1, 0, 0]])
    spec = ModelSpec("cr", "fm", n_components=2)
    state = ChainState(0.7, np.array([0.3, 0.6]), np.zeros(1, np.int64))
    target = fm_label_probabilities(0, state, spec, table)
    rng = np.random.default_rng(11)
    draws = np.array([fm_label_gibbs(0, state, spec, table, rng) for _ in range(20000)])
    assert abs(draws.mean() - target[1]) < 4 * math.sqrt(target[1] * target[0] / 20000)


def test_fm_label_on_wrong_mode():
    table = _cr_table([[1, 1]])
    with pytest.raises(ValueError):
        fm_label_probabilities(0, ChainState(0.5, np.array([0.5])), ModelSpec("cr", "hom"), table)


def test_ordering_rejection_before_likelihood(rng):
    p = np.array([0.4, 0.6])
    calls = []

    def ll(v):
        calls.append(v)
        return 0.0

    value, accepted = rw_update_probability(
        p[0], ll, 0.1, rng, constraint=lambda v: ordering_allows(p, 0, v), candidate=0.7
    )
    assert not accepted and value == 0.4
    assert calls == [0.4]  # only the current value

    calls.clear()
    rw_update_probability(
        p[0], ll, 0.1, rng, constraint=lambda v: ordering_allows(p, 0, v), candidate=0.5
    )
    assert calls == [0.4, 0.5]


def test_single_component_ordering_is_unconstrained():
    p = np.array([0.5])
    assert ordering_allows(p, 0, 0.0) and ordering_allows(p, 0, 1.0)


def test_fm_ordered_update_keeps_order():
    table = simulate_cr(30, 30, 6, 0.7, 0.8, 0.3, seed=1)
    spec = ModelSpec("cr", "fm", n_components=3)
    rng = np.random.default_rng(3)
    state = ChainState(0.7, np.array([0.3, 0.5, 0.8]), rng.integers(0, 3, table.n_units))
    for _ in range(200):
        fm_ordered_p_update(state, spec, table, rng, scale=0.3)
        assert (np.diff(state.p) >= 0).all()


# CRP labels

def test_neal8_weight_examples():
    logw = neal8_log_weights(
        np.array([3], np.int64), np.log([0.4]), np.log([0.1]), 1.0, True
    )
    assert _weights(logw)[0] == pytest.approx(1.2 / 1.3, abs=1e-12)
    assert _weights(logw)[0] == pytest.approx(0.923, abs=5e-4)

    tiny = neal8_log_weights(np.array([3], np.int64), np.log([0.4]), np.log([0.1]), 1e-300, True)
    assert _weights(tiny)[0] == pytest.approx(1.0)
    zero = neal8_log_weights(np.array([3], np.int64), np.log([0.4]), np.log([0.1]), 0.0, True)
    assert zero[1] == -np.inf

    prior = neal8_log_weights(np.array([2, 0], np.int64), np.zeros(2), np.zeros(1), 1.0, True)
    np.testing.assert_allclose(_weights(prior), [2 / 3, 0.0, 1 / 3])

    closed = neal8_log_weights(np.array([2], np.int64), np.zeros(1), np.zeros(1), 1.0, False)
    np.testing.assert_allclose(_weights(closed), [1.0, 0.0])


def test_neal8_unit_update_prior_frequencies():
    # psi = 0 makes every all-zero site's likelihood 1 whatever its p
    table = DetectionHistoryTable(np.zeros((3, 2), np.int8), "occ")
    spec = ModelSpec("occ", "np", truncation=3)
    rng = np.random.default_rng(7)
    opened = 0
    reps = 20000
    for _ in range(reps):
        state = ChainState(0.0, np.array([0.5, 0.5, 0.5]), np.array([0, 0, 0]), 1.0)
        _, new = crp_label_update_neal8(2, state, spec, table, m=1, rng=rng)
        opened += new
    assert abs(opened / reps - 1 / 3) < 4 * math.sqrt(2 / 9 / reps)


def test_neal8_singleton_reuses_its_p_and_slots_are_recycled():
    table = DetectionHistoryTable(np.zeros((3, 2), np.int8), "occ")
    spec = ModelSpec("occ", "np", truncation=3)
    rng = np.random.default_rng(0)
    for _ in range(200):
        state = ChainState(0.0, np.array([0.5, 0.123, 0.9]), np.array([0, 0, 1]), 1.0)
        label, opened = crp_label_update_neal8(2, state, spec, table, m=1, rng=rng)
        if opened:
            assert label == 1  # the emptied slot is reused
            assert state.p[1] == 0.123
        else:
            assert label == 0
        assert state.p[2] == 0.9


def test_neal8_truncation_warning():
    table = DetectionHistoryTable(np.zeros((3, 2), np.int8), "occ")
    spec = ModelSpec("occ", "np", truncation=2)
    rng = np.random.default_rng(0)
    state = ChainState(0.0, np.array([0.5, 0.5]), np.array([0, 1, 1]), 100.0)
    with pytest.warns(TruncationWarning):
        label, opened = crp_label_update_neal8(2, state, spec, table, m=1, rng=rng)
    assert not opened and label in (0, 1)
    assert not validate_state(state, spec, table)


def test_neal8_update_requires_np_mode():
    table = DetectionHistoryTable(np.zeros((3, 2), np.int8), "occ")
    with pytest.raises(ValueError):
        crp_label_update_neal8(0, ChainState(0.5, np.array([0.5])), ModelSpec("occ", "hom"),
                               table, rng=np.random.default_rng(0))


def test_active_update_leaves_inactive_slots_bit_identical():
    table = simulate_occ(20, 20, 5, 0.8, 0.8, 0.3, seed=4)
    spec = ModelSpec("occ", "np", truncation=40)
    rng = np.random.default_rng(1)
    p0 = rng.random(40)
    labels = np.where(np.arange(40) < 20, 3, 17)
    state = ChainState(0.8, p0.copy(), labels, 1.0)
    for _ in range(50):
        crp_active_p_update(state, spec, table, rng, scale=0.2)
        changed = np.flatnonzero(state.p != p0)
        assert set(changed) <= {3, 17}
    assert state.p.tobytes()[:3 * 8] == p0.tobytes()[:3 * 8]
    inactive = np.setdiff1d(np.arange(40), [3, 17])
    assert state.p[inactive].tobytes() == p0[inactive].tobytes()


def test_single_active_cluster_matches_homogeneous_update():
    table = simulate_occ(20, 20, 5, 0.8, 0.8, 0.3, seed=4)
    np_spec = ModelSpec("occ", "np", truncation=5)
    hom_spec = ModelSpec("occ", "hom")
    a = ChainState(0.8, np.array([0.4, 0.5, 0.5, 0.5, 0.5]), np.zeros(40, np.int64), 1.0)
    b = ChainState(0.8, np.array([0.4]))
    ra, rb = np.random.default_rng(9), np.random.default_rng(9)
    for _ in range(30):
        crp_active_p_update(a, np_spec, table, ra, scale=0.2)
        crp_active_p_update(b, hom_spec, table, rb, scale=0.2)
        assert a.p[0] == b.p[0]


# concentration

def test_escobar_west_weight_example():
    pi = escobar_west_mixture_weight(5, 67, 1.0, 1.0, 0.5)
    odds = 5 / (67 * (1 - math.log(0.5)))
    assert pi == pytest.approx(odds / (1 + odds), rel=1e-12)
    assert 67 * (1 - math.log(0.5)) == pytest.approx(113.44, abs=5e-3)
    assert pi == pytest.approx(0.0422, abs=5e-5)


def test_escobar_west_contract():
    rng = np.random.default_rng(0)
    for bad in [(0, 5, 1, 1), (1, 0, 1, 1), (1, 5, 0, 1), (1, 5, 1, -1)]:
        with pytest.raises(ValueError):
            alpha_update_escobar_west(1.0, *bad, rng)
    assert alpha_update_escobar_west(1.0, 1, 10, 1.0, 1.0, rng) > 0


def test_escobar_west_k1_mixture_components():
    # with k=1 and a=1 the two components are Gamma(2, r) and Gamma(1, r)
    pi = escobar_west_mixture_weight(1, 10, 1.0, 1.0, math.exp(-1.0))
    assert pi == pytest.approx((1 / (10 * 2.0)) / (1 + 1 / 20.0))


# structural parameter

def test_structural_update_recovers_prior_without_information():
    # T=1 capture histories carry no information about phi
    table = DetectionHistoryTable(np.ones((5, 1), np.int8), "cr")
    spec = ModelSpec("cr", "hom")
    state = ChainState(0.5, np.array([0.5]))
    rng = np.random.default_rng(2)
    ad = ScaleAdapter(0.5, ())
    out = np.empty(40000)
    for i in range(out.size):
        structural_update(state, spec, table, rng, ad)
        out[i] = state.structural
    assert stats.kstest(out[::20], "uniform").pvalue > 0.01


def test_psi_with_all_detected_histories_avoids_zero():
    table = DetectionHistoryTable(np.ones((10, 3), np.int8), "occ")
    spec = ModelSpec("occ", "hom")
    state = ChainState(0.5, np.array([0.5]))
    rng = np.random.default_rng(2)
    for _ in range(2000):
        structural_update(state, spec, table, rng, 0.3)
        assert state.structural > 0


# whole chains

def _small_spec(mode, **kw):
    return ModelSpec("cr", mode, iterations=400, burnin=100, label_thin=1, **kw)


@pytest.fixture(scope="module")
def small_cr():
    return simulate_cr(40, 40, 6, 0.7, 0.8, 0.3, seed=12)


def test_schedules():
    names = [b for b, _ in SamplerSchedule.for_spec(ModelSpec("cr", "np")).blocks]
    assert names == ["labels", "p", "alpha", "structural"]
    assert SamplerSchedule.for_spec(ModelSpec("cr", "hom")).targets == ["p", "structural"]
    fm = SamplerSchedule.for_spec(ModelSpec("cr", "fm", n_components=2))
    assert fm.targets == ["labels", "p", "structural"]


@pytest.mark.parametrize("mode,kw", [("hom", {}), ("fm", {"n_components": 3}), ("np", {"truncation": 40})])
def test_chain_invariants(small_cr, mode, kw):
    spec = _small_spec(mode, **kw)
    d = run_chain(spec, small_cr, 5)
    assert d.structural.shape == (1, 300)
    assert d.loglik.shape == (1, 300, small_cr.n_units)
    assert np.isfinite(d.loglik).all()
    for t in range(d.n_draws):
        labels = None if d.labels is None else d.labels[0, t]
        alpha = None if d.alpha is None else d.alpha[0, t]
        state = ChainState(d.structural[0, t], d.p[0, t], labels, alpha)
        assert validate_state(state, spec, small_cr) == []
        if mode == "fm":
            assert (np.diff(d.p[0, t]) >= 0).all()
        if mode == "np":
            assert d.n_clusters[0, t] == len(np.unique(labels))
    rep = d.reports[0]
    for key in ("seed", "iterations", "acceptance", "truncation_warnings", "seconds"):
        assert key in rep


def test_chain_determinism(small_cr):
    spec = _small_spec("np", truncation=40)
    a = run_chains(spec, small_cr, 42, n_chains=2)
    b = run_chains(spec, small_cr, 42, n_chains=2)
    for name in ("structural", "p", "n_clusters", "loglik", "alpha", "labels"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = run_chains(spec, small_cr, 43, n_chains=2)
    assert a.structural.tobytes() != c.structural.tobytes()
    assert a.structural[0].tobytes() != a.structural[1].tobytes()


def test_zero_retained_iterations(small_cr):
    spec = ModelSpec("cr", "np", iterations=10, burnin=10, truncation=5)
    d = run_chain(spec, small_cr, 1)
    assert d.structural.shape == (1, 0)
    assert d.loglik.shape == (1, 0, small_cr.n_units)


def test_truncation_reported(small_cr):
    spec = ModelSpec("cr", "np", iterations=50, burnin=0, truncation=1, alpha_prior=(50.0, 0.1))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        d = run_chain(spec, small_cr, 1)
    assert any(issubclass(x.category, TruncationWarning) for x in w)
    assert d.reports[0]["truncation_warnings"]
    assert (d.n_clusters == 1).all()


def test_homogeneous_recovers_truth():
    table = simulate_cr(800, 800, 8, 0.7, 0.8, 0.8, seed=21)
    spec = ModelSpec("cr", "hom", iterations=3000, burnin=1000)
    d = run_chain(spec, table, 3)
    lo, hi = np.quantile(d.structural, [0.025, 0.975])
    assert lo < 0.7 < hi


# prior-only CRP behaviour

@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
def test_prior_only_sweeps_match_sequential_crp(alpha):
    k = prior_only_cluster_counts(alpha, 60, 30000, seed=int(alpha * 10))
    ref = crp_cluster_counts(alpha, 60, k.size, np.random.default_rng(99))
    assert pooled_chi2(k, ref) > 0.01


def test_prior_only_mean_matches_harmonic_number():
    k = prior_only_cluster_counts(1.0, 60, 40000, seed=3)
    h60 = sum(1 / i for i in range(1, 61))
    assert h60 == pytest.approx(4.68, abs=5e-3)
    assert abs(k.mean() - h60) < 3 * k.std(ddof=1) / math.sqrt(k.size)
