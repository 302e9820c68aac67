"""Subset-simulation driver: quantiles, chains, estimators, bookkeeping."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from lfmc.assembly import ModelEnsemble, ModelHandle
from lfmc.distributions import StandardNormal
from lfmc.errors import ConfigError, NonConvergenceError, SeedSelectionError
from lfmc.rng import stream
from lfmc.subset import (
    RunConfig,
    _finish_subset,
    _new_counters,
    _ResponsePool,
    _running_threshold,
    chain_autocovariance,
    classical_subset_simulation,
    conditional_delta,
    first_subset_delta,
    initial_phase,
    mcmc_propose,
    point_failure_matrix,
    point_failure_probability,
    run,
    run_first_subset,
    run_subsequent_subset,
    sorted_quantile,
)

PHI_2 = 0.9772498680518208
PHI_MINUS_2 = 0.02275013194817921


def linear_ensemble(strategy="lfds", offset=0.0):
    """HF and LF both return x[0] + offset, so corrections are exactly zero."""
    f = lambda x: float(x[0]) + offset
    return ModelEnsemble(hf=ModelHandle(0, f), lfs=[ModelHandle(1, f)],
                         strategy=strategy)


# ----------------------------------------------------------------- quantile


def test_sorted_quantile_hand_values():
    vals = [1.0, 2.0, 3.0, 4.0, 5.0]
    assert sorted_quantile(vals, 0.1) == pytest.approx(1.4)
    assert sorted_quantile(vals, 0.0) == 1.0
    assert sorted_quantile(vals, 1.0) == 5.0
    assert sorted_quantile(vals, 0.5) == 3.0


def test_sorted_quantile_matches_numpy_linear():
    rng = np.random.default_rng(0)
    vals = np.sort(rng.normal(size=37))
    for q in (0.05, 0.1, 0.37, 0.9):
        assert sorted_quantile(vals, q) == pytest.approx(
            np.quantile(vals, q), rel=1e-12)


def test_sorted_quantile_rejects_empty():
    with pytest.raises(ValueError):
        sorted_quantile([], 0.1)


def test_response_pool_keeps_ascending_order():
    pool = _ResponsePool()
    for v in (3.0, 1.0, 2.0, -5.0):
        pool.add(v)
    assert pool.values == [-5.0, 1.0, 2.0, 3.0]
    assert len(pool) == 4


def test_running_threshold_warmup_fallback():
    cfg = RunConfig(n_pts=100, n_chains=20)
    pool = _ResponsePool()
    for v in np.linspace(0.0, 1.0, 19):
        pool.add(v)
    # fewer than max(10, n_chains) entries: the fallback applies
    assert _running_threshold(pool, cfg, fallback=math.inf) == math.inf
    pool.add(2.0)
    expected = max(cfg.failure_threshold, pool.quantile(cfg.pi_target))
    assert _running_threshold(pool, cfg, fallback=math.inf) == expected


# ------------------------------------------------------------------- config


def test_config_defaults_validate():
    cfg = RunConfig()
    assert cfg.validate() is cfg
    assert cfg.n_spc == 200


@pytest.mark.parametrize("kwargs, fragment", [
    (dict(n_pts=0), "n_pts"),
    (dict(n_chains=-3), "n_chains"),
    (dict(n_init=0), "n_init"),
    (dict(max_subsets=0), "max_subsets"),
    (dict(gp_reopt_stride=0), "gp_reopt_stride"),
    (dict(pi_target=0.0), "pi_target"),
    (dict(pi_target=1.5), "pi_target"),
    (dict(u_threshold=-1.0), "u_threshold"),
    (dict(proposal_scale=0.0), "proposal_scale"),
    (dict(proposal_scale=math.inf), "proposal_scale"),
    (dict(failure_threshold=math.inf), "failure_threshold"),
    (dict(seed=-1), "seed"),
    (dict(seed=1.5), "seed"),
    (dict(n_pts=150, n_chains=100), "divisible"),
    (dict(n_pts=200, n_chains=100, pi_target=0.1), "seed"),
])
def test_config_rejects_bad_fields(kwargs, fragment):
    with pytest.raises(ConfigError, match=fragment):
        RunConfig(**kwargs).validate()


def test_config_allows_infinite_u_threshold():
    RunConfig(u_threshold=math.inf).validate()


def test_config_allows_vector_proposal_scale():
    RunConfig(proposal_scale=(0.5, 2.0)).validate()


# ------------------------------------------------------- point probabilities


def test_point_failure_probability_values():
    assert point_failure_probability(math.inf, True) == 1.0
    assert point_failure_probability(math.inf, False) == 0.0
    assert point_failure_probability(2.0, True) == pytest.approx(PHI_2, rel=1e-14)
    assert point_failure_probability(2.0, False) == pytest.approx(
        PHI_MINUS_2, rel=1e-14)
    assert point_failure_probability(0.0, True) == 0.5


def test_point_failure_matrix_matches_scalar_rule():
    u = np.array([[2.0, math.inf], [0.0, 3.0]])
    resp = np.array([[-1.0, 5.0], [0.0, 2.0]])
    out = point_failure_matrix(u, resp, threshold=0.0)
    expected = np.array([
        [point_failure_probability(2.0, True),
         point_failure_probability(math.inf, False)],
        [point_failure_probability(0.0, True),
         point_failure_probability(3.0, False)],
    ])
    assert_array_equal(out, expected)
    # a response exactly on the threshold counts as failing
    assert out[1, 0] == 0.5


# -------------------------------------------------------------------- mcmc


class ScriptedRNG:
    """Replays fixed arrays for uniform() so acceptance is deterministic."""

    def __init__(self, outputs):
        self._outputs = [np.asarray(o, dtype=float) for o in outputs]

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._outputs.pop(0)


def test_mcmc_componentwise_acceptance():
    dist = StandardNormal(2)
    x = np.zeros(2)
    steps = [0.5, -0.5]
    # ratio for each component is exp(-0.125) ~ 0.8825
    rng = ScriptedRNG([steps, [0.99, 0.99]])
    cand, moved = mcmc_propose(x, dist, rng, 1.0)
    assert not moved
    assert_array_equal(cand, x)

    rng = ScriptedRNG([steps, [0.0, 0.99]])
    cand, moved = mcmc_propose(x, dist, rng, 1.0)
    assert moved
    assert_array_equal(cand, [0.5, 0.0])

    rng = ScriptedRNG([steps, [0.0, 0.0]])
    cand, moved = mcmc_propose(x, dist, rng, 1.0)
    assert moved
    assert_array_equal(cand, [0.5, -0.5])


def test_mcmc_consumes_fixed_randomness():
    """Exactly 2d uniforms per step, whatever the acceptance pattern."""
    dist = StandardNormal(3)
    x = np.array([0.1, -0.2, 0.3])
    rng_a = np.random.default_rng(7)
    mcmc_propose(x, dist, rng_a, 0.7)
    marker_a = rng_a.uniform()

    rng_b = np.random.default_rng(7)
    scale = np.full(3, 0.7)
    rng_b.uniform(-scale, scale)
    rng_b.uniform(size=3)
    marker_b = rng_b.uniform()
    assert marker_a == marker_b


def test_mcmc_preserves_standard_normal_marginals():
    dist = StandardNormal(1)
    rng = np.random.default_rng(123)
    x = np.zeros(1)
    draws = np.empty(20000)
    for i in range(draws.size):
        x, _ = mcmc_propose(x, dist, rng, 1.0)
        draws[i] = x[0]
    assert abs(draws.mean()) < 0.05
    assert abs(draws.var() - 1.0) < 0.08


# -------------------------------------------------------------- variability


def test_first_subset_delta_hand_value():
    assert first_subset_delta(0.1, 5000) == pytest.approx(
        0.042426406871192851, rel=1e-15)
    assert first_subset_delta(0.0, 100) == math.inf


def test_autocovariance_toy_values():
    probs = np.array([[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0]])
    p = probs.mean()
    assert p == 0.5
    assert chain_autocovariance(probs, p, 1) == pytest.approx(-1.0 / 12.0)
    assert chain_autocovariance(probs, p, 2) == pytest.approx(0.0)
    assert chain_autocovariance(probs, p, 3) == pytest.approx(-0.25)
    # gamma = -1 exactly, so the bracket clips to zero
    assert conditional_delta(probs, p) == 0.0


def test_delta_for_perfectly_correlated_chains():
    probs = np.vstack([np.ones(4), np.zeros(4)])
    p = probs.mean()
    # rho = 1 at every lag: gamma = n_spc - 1 = 3
    assert conditional_delta(probs, p) == pytest.approx(math.sqrt(0.5),
                                                        rel=1e-15)


def test_delta_infinite_when_nothing_fails():
    probs = np.zeros((2, 4))
    assert conditional_delta(probs, 0.0) == math.inf


# ------------------------------------------------------------ initial phase


def test_initial_phase_learns_discrepancy_on_doe_stream():
    hf = ModelHandle(0, lambda x: float(x[0]) ** 2 + float(x[1]))
    lf = ModelHandle(1, lambda x: float(x[0]) ** 2)
    ens = ModelEnsemble(hf=hf, lfs=[lf], strategy="lfds")
    dist = StandardNormal(2)
    cfg = RunConfig(n_init=12, seed=5)
    initial_phase(ens, dist, cfg)
    gp = ens.corrections[0]

    X_expected = StandardNormal(2).sample(stream(5, "init-doe"), 12)
    assert_array_equal(gp.training_inputs_, X_expected)
    assert_allclose(gp.training_targets_, X_expected[:, 1], rtol=1e-14)


def test_initial_phase_keeps_prefitted_corrections_objects():
    ens = linear_ensemble()
    dist = StandardNormal(1)
    initial_phase(ens, dist, RunConfig(n_init=8, seed=1))
    assert ens.corrections[0].n_train_ == 8


# -------------------------------------------------------------- first subset


def test_first_subset_reproduces_plain_monte_carlo():
    """With a zero-discrepancy ensemble the subset is a crude MC pass."""
    ens = linear_ensemble()
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=200, n_chains=10, n_init=6, seed=3,
                    failure_threshold=-3.0)
    initial_phase(ens, dist, cfg)
    rec = run_first_subset(ens, dist, cfg)

    X = StandardNormal(1).sample(stream(3, "mc-subset-1"), 200)
    expected = X.reshape(10, 20, 1)
    assert_array_equal(rec.samples, expected)
    assert_array_equal(rec.responses, expected[:, :, 0])
    assert rec.threshold == pytest.approx(
        sorted_quantile(np.sort(X[:, 0]), 0.1))
    assert rec.hf_calls == 0
    assert rec.surrogate_evals == 200
    assert rec.lf_calls == {1: 200}
    assert rec.index == 1
    # seeds are the n_chains lowest responses in stable order
    seed_resp = np.array([s.response for s in rec.seed_states])
    assert_array_equal(seed_resp, np.sort(X[:, 0])[:10])


def test_first_subset_conditional_probability_matches_quantile():
    ens = linear_ensemble()
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=100, n_chains=10, n_init=6, seed=9,
                    failure_threshold=-3.0)
    initial_phase(ens, dist, cfg)
    rec = run_first_subset(ens, dist, cfg)
    # every stored response is surrogate-exact here, so the per-point
    # probabilities are saturated indicators and the mean hits pi_target
    assert rec.cond_prob == pytest.approx(cfg.pi_target, abs=1e-12)
    assert rec.delta == pytest.approx(
        first_subset_delta(rec.cond_prob, cfg.n_pts), rel=1e-15)


# -------------------------------------------------------- subsequent subsets


def test_second_subset_matches_reference_walk():
    """Bitwise replay of the Metropolis bookkeeping on an exact surrogate."""
    ens = linear_ensemble()
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=200, n_chains=10, n_init=6, seed=11,
                    failure_threshold=-3.0)
    initial_phase(ens, dist, cfg)
    rec1 = run_first_subset(ens, dist, cfg)
    rec2 = run_subsequent_subset(ens, dist, cfg, rec1, 2)

    samples = np.empty((10, 20, 1))
    responses = np.empty((10, 20))
    moves = 0
    for l in range(10):
        rng_chain = stream(11, "mcmc-chain-2-{}".format(l))
        x = rec1.seed_states[l].x.copy()
        resp = rec1.seed_states[l].response
        for m in range(20):
            candidate, moved = mcmc_propose(x, dist, rng_chain, 1.0)
            if moved:
                moves += 1
                if candidate[0] <= rec1.threshold:
                    x, resp = candidate, float(candidate[0])
            samples[l, m] = x
            responses[l, m] = resp

    assert_array_equal(rec2.samples, samples)
    assert_array_equal(rec2.responses, responses)
    assert rec2.surrogate_evals == moves
    assert rec2.hf_calls == 0
    assert rec2.lf_calls == {1: moves}
    # unmoved slots record no fresh model activity
    assert np.all(rec2.lf_masks[rec2.hf_call_flags] != 0)
    assert rec2.threshold == pytest.approx(
        sorted_quantile(np.sort(responses.ravel()), 0.1))


def test_subsequent_subset_requires_seeds():
    ens = linear_ensemble()
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=100, n_chains=10, n_init=6, seed=2)
    initial_phase(ens, dist, cfg)
    rec1 = run_first_subset(ens, dist, cfg)
    rec1.seed_states = None
    with pytest.raises(ConfigError, match="no seeds"):
        run_subsequent_subset(ens, dist, cfg, rec1, 2)


def test_seed_selection_error_when_pool_disagrees():
    cfg = RunConfig(n_pts=4, n_chains=2, pi_target=0.5, n_init=2)
    pool = _ResponsePool()
    for v in (1.0, 2.0, 3.0, 4.0):
        pool.add(v)
    shape = (2, 2)
    ens = linear_ensemble()
    counters = _new_counters(ens)
    with pytest.raises(SeedSelectionError, match="pi_target"):
        _finish_subset(
            1, cfg, pool,
            samples=np.zeros(shape + (1,)),
            responses=np.full(shape, 10.0),
            u_values=np.full(shape, np.inf),
            hf_flags=np.ones(shape, dtype=bool),
            selected_models=np.zeros(shape, dtype=int),
            lf_masks=np.zeros(shape, dtype=np.int64),
            hf_call_flags=np.zeros(shape, dtype=bool),
            counters=counters,
            want_seeds=True,
        )


# ------------------------------------------------------------- full pipeline


def test_full_run_estimates_a_normal_tail():
    ens = linear_ensemble(offset=0.0)
    # failure when x <= -2: P = Phi(-2)
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=1000, n_chains=20, n_init=8, seed=4,
                    failure_threshold=-2.0)
    est = run(ens, dist, cfg)
    assert est.records[-1].threshold == -2.0
    assert not est.incomplete
    assert est.p_f == pytest.approx(PHI_MINUS_2, rel=0.4)
    assert est.cov == pytest.approx(
        math.sqrt(sum(r.delta**2 for r in est.records)), rel=1e-15)
    assert est.total_samples == est.n_subsets * cfg.n_pts
    # zero-discrepancy ensemble never needs the high-fidelity model
    assert est.hf_calls == cfg.n_init
    assert est.lf_calls[1] == est.surrogate_evals + cfg.n_init


def test_full_run_is_deterministic():
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=400, n_chains=10, n_init=8, seed=21,
                    failure_threshold=-2.0)
    a = run(linear_ensemble(), dist, cfg)
    b = run(linear_ensemble(), dist, cfg)
    assert a.p_f == b.p_f
    assert a.cov == b.cov
    assert [r.threshold for r in a.records] == [r.threshold for r in b.records]


def test_run_raises_after_max_subsets_with_partial_result():
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=100, n_chains=10, n_init=6, seed=0,
                    failure_threshold=-40.0, max_subsets=3)
    with pytest.raises(NonConvergenceError) as info:
        run(linear_ensemble(), dist, cfg)
    partial = info.value.partial
    assert partial.incomplete
    assert partial.n_subsets == 3
    assert len(partial.records) == 3


# -------------------------------------------------------- classical reference


def test_classical_matches_normal_tail():
    hf = ModelHandle(0, lambda x: float(x[0]))
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=1000, n_chains=20, n_init=8, seed=4,
                    failure_threshold=-2.0)
    res = classical_subset_simulation(hf, dist, cfg)
    assert res.thresholds[-1] == -2.0
    assert res.p_f == pytest.approx(PHI_MINUS_2, rel=0.4)
    assert res.n_subsets == len(res.p_values)


def test_classical_first_subset_uses_the_same_stream():
    hf = ModelHandle(0, lambda x: float(x[0]))
    dist = StandardNormal(1)
    cfg = RunConfig(n_pts=100, n_chains=10, n_init=6, seed=3,
                    failure_threshold=-2.0)
    res = classical_subset_simulation(hf, dist, cfg)
    X = StandardNormal(1).sample(stream(3, "mc-subset-1"), 100)
    assert res.thresholds[0] == pytest.approx(
        max(-2.0, sorted_quantile(np.sort(X[:, 0]), 0.1)), rel=1e-15)
