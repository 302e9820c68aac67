"""Subset simulation driven by the actively learned ensemble surrogate.

The driver draws crude Monte Carlo samples in the first subset and
component-wise Metropolis chains afterwards. Every fresh point is scored
by the assembled surrogate; when the learning function
U = |S - F| / sigma falls below the acceptance threshold the high-fidelity
model is substituted, the point joins the training set of every correction
that was evaluated in that call, and the stored U becomes infinite so the
estimators treat the response as exact.

Per-subset failure probabilities average the per-point probabilities
Phi(+-U); their variability follows the standard chain-autocovariance
expansion, with R(0) taken in its Bernoulli form P(1 - P).
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._validation import check_positive, check_positive_int, check_probability
from .assembly import ModelEnsemble, evaluate_surrogate
from .errors import ConfigError, NonConvergenceError, SeedSelectionError
from .rng import stream

MIN_POOL_FOR_QUANTILE = 10


@dataclass(frozen=True)
class RunConfig:
    """Driver settings; n_pts samples per subset split over n_chains chains."""

    n_pts: int = 20000
    n_chains: int = 100
    n_init: int = 20
    pi_target: float = 0.1
    failure_threshold: float = 0.0
    u_threshold: float = 2.0
    max_subsets: int = 25
    proposal_scale: float = 1.0
    gp_reopt_stride: int = 1
    seed: int = 0

    def validate(self) -> "RunConfig":
        for name in ("n_pts", "n_chains", "n_init", "max_subsets",
                     "gp_reopt_stride"):
            try:
                check_positive_int(getattr(self, name), name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            check_probability(self.pi_target, "pi_target")
            check_positive(self.u_threshold, "u_threshold", allow_inf=True)
            scale = np.atleast_1d(np.asarray(self.proposal_scale, dtype=float))
            if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
                raise ConfigError("proposal_scale must be positive and finite")
            if not np.isfinite(self.failure_threshold):
                raise ConfigError("failure_threshold must be finite")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not float(self.seed).is_integer() or self.seed < 0:
            raise ConfigError(
                f"seed must be a nonnegative integer, got {self.seed!r}"
            )
        if self.n_pts % self.n_chains != 0:
            raise ConfigError(
                f"n_pts ({self.n_pts}) must be divisible by n_chains "
                f"({self.n_chains})"
            )
        if self.pi_target * self.n_pts < self.n_chains:
            raise ConfigError(
                "pi_target * n_pts must be at least n_chains so every chain "
                f"gets a seed (got {self.pi_target} * {self.n_pts} < "
                f"{self.n_chains})"
            )
        return self

    @property
    def n_spc(self) -> int:
        return self.n_pts // self.n_chains


@dataclass
class ChainState:
    """Current point of one chain with its stored bookkeeping."""

    x: np.ndarray
    response: float
    u_value: float
    hf_flag: bool
    selected_model: int


@dataclass
class SubsetRecord:
    """Everything one subset produced, fresh samples only (seeds excluded)."""

    index: int
    samples: np.ndarray          # (n_chains, n_spc, dim)
    responses: np.ndarray        # (n_chains, n_spc)
    u_values: np.ndarray
    hf_flags: np.ndarray         # stored response originates from the HF model
    selected_models: np.ndarray
    lf_masks: np.ndarray         # bit i set when lfs[i] was evaluated fresh
    hf_call_flags: np.ndarray    # a fresh HF evaluation happened at this slot
    threshold: float
    cond_prob: float
    delta: float
    hf_calls: int
    lf_calls: dict[int, int]
    surrogate_evals: int
    seed_states: list[ChainState] | None = None

    @property
    def seeds_out(self) -> np.ndarray | None:
        if self.seed_states is None:
            return None
        return np.array([state.x for state in self.seed_states])


@dataclass
class FailureEstimate:
    """Final product of a run, with per-subset records for reporting."""

    p_f: float
    cov: float
    n_subsets: int
    hf_calls: int
    lf_calls: dict[int, int]
    total_samples: int
    surrogate_evals: int
    records: list[SubsetRecord]
    incomplete: bool = False

    @property
    def hf_fraction(self) -> float:
        return self.hf_calls / self.total_samples if self.total_samples else 0.0


@dataclass
class _Tracker:
    """Cross-subset run state: shared streams and retrain counters."""

    lfss_rng: np.random.Generator
    insertions: dict[int, int] = field(default_factory=dict)


# ------------------------------------------------------------ small helpers


def sorted_quantile(sorted_values, q: float) -> float:
    """Linear-interpolation quantile of an ascending sequence."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of an empty sequence")
    h = (n - 1) * q
    i = int(math.floor(h))
    if i + 1 >= n:
        return float(sorted_values[-1])
    frac = h - i
    return float(sorted_values[i] + frac * (sorted_values[i + 1] - sorted_values[i]))


class _ResponsePool:
    """Ascending pool of fresh responses for the running quantile."""

    __slots__ = ("values",)

    def __init__(self):
        self.values: list[float] = []

    def add(self, value: float) -> None:
        insort(self.values, value)

    def __len__(self) -> int:
        return len(self.values)

    def quantile(self, q: float) -> float:
        return sorted_quantile(self.values, q)


def _running_threshold(pool: _ResponsePool, cfg: RunConfig,
                       fallback: float) -> float:
    if len(pool) < max(MIN_POOL_FOR_QUANTILE, cfg.n_chains):
        return fallback
    return max(cfg.failure_threshold, pool.quantile(cfg.pi_target))


def point_failure_probability(u_value: float, predicted_failure: bool) -> float:
    """Probability the point is a failure given its stored U.

    Infinite U marks an exactly known (high-fidelity) response, so the
    result is exactly 1 or 0.
    """
    if math.isinf(u_value):
        return 1.0 if predicted_failure else 0.0
    return float(ndtr(u_value)) if predicted_failure else float(ndtr(-u_value))


def point_failure_matrix(u_values: np.ndarray, responses: np.ndarray,
                         threshold: float) -> np.ndarray:
    failing = responses <= threshold
    return np.where(failing, ndtr(u_values), ndtr(-u_values))


def mcmc_propose(x: np.ndarray, distribution, rng: np.random.Generator,
                 proposal_scale) -> tuple[np.ndarray, bool]:
    """One component-wise Metropolis step against the input marginals.

    Draws a fixed amount of randomness regardless of the acceptance
    pattern so chain streams stay aligned across configurations. Returns
    the (possibly unchanged) candidate and whether any component moved.
    """
    d = x.shape[0]
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), (d,))
    steps = rng.uniform(-scale, scale)
    accept_draws = rng.uniform(size=d)
    proposal = x + steps
    ratios = np.array([
        distribution.component_pdf(j, proposal[j])
        / distribution.component_pdf(j, x[j])
        for j in range(d)
    ])
    accept = accept_draws < ratios
    if not accept.any():
        return x, False
    candidate = np.where(accept, proposal, x)
    return candidate, True


# ----------------------------------------------------- variability chain


def first_subset_delta(cond_prob: float, n_pts: int) -> float:
    """Coefficient of variation of an independent-sample estimate."""
    if cond_prob <= 0.0:
        return math.inf
    return math.sqrt((1.0 - cond_prob) / (cond_prob * n_pts))


def chain_autocovariance(point_probs: np.ndarray, cond_prob: float,
                         lag: int) -> float:
    """R_s(lag) across chains; rows are chains, columns chain positions."""
    n_chains, n_spc = point_probs.shape
    n_pts = n_chains * n_spc
    cross = float(np.sum(point_probs[:, : n_spc - lag] * point_probs[:, lag:]))
    return cross / (n_pts - lag * n_chains) - cond_prob**2


def conditional_delta(point_probs: np.ndarray, cond_prob: float) -> float:
    """COV of a chain-correlated conditional probability estimate."""
    n_chains, n_spc = point_probs.shape
    n_pts = n_chains * n_spc
    if cond_prob <= 0.0:
        return math.inf
    r0 = cond_prob * (1.0 - cond_prob)
    gamma = 0.0
    for lag in range(1, n_spc):
        if r0 > 0.0:
            rho = chain_autocovariance(point_probs, cond_prob, lag) / r0
        else:
            rho = 0.0
        gamma += 2.0 * (1.0 - lag / n_spc) * rho
    return math.sqrt(
        (1.0 - cond_prob) / (cond_prob * n_pts) * max(1.0 + gamma, 0.0)
    )


# ------------------------------------------------------------- the driver


def initial_phase(ensemble: ModelEnsemble, distribution,
                  cfg: RunConfig) -> ModelEnsemble:
    """Draw the initial design and train every correction on discrepancies."""
    from .gp import CorrectionGP
    from .rng import stream_seed

    rng = stream(cfg.seed, "init-doe")
    X = distribution.sample(rng, cfg.n_init)
    hf_values = np.array([ensemble.hf.evaluate(x) for x in X])
    for i, lf in enumerate(ensemble.lfs):
        targets = hf_values - np.array([lf.evaluate(x) for x in X])
        gp = ensemble.corrections[i]
        if gp is None:
            gp = CorrectionGP(
                random_state=stream_seed(cfg.seed, f"gp-multistart-{lf.id}")
            )
        ensemble.corrections[i] = gp.fit(X, targets)
    return ensemble


def _evaluate_and_learn(ensemble: ModelEnsemble, x: np.ndarray,
                        running_f: float, cfg: RunConfig, tracker: _Tracker,
                        counters: dict) -> ChainState:
    """Score a fresh point; substitute and learn when the surrogate is unsure."""
    evaluation = evaluate_surrogate(ensemble, x, running_f, tracker.lfss_rng)
    counters["surrogate_evals"] += 1
    mask = 0
    index_of = counters["index_of"]
    for lf_id in evaluation.lf_values:
        counters["lf_calls"][lf_id] += 1
        mask |= 1 << index_of[lf_id]
    counters["lf_mask"] = mask

    # u_threshold = inf is the forced-HF mode (classical-SuS degeneration);
    # without the guard the warm-up fallback F = +inf would make U = inf and
    # accept the surrogate even there.
    if evaluation.u_value >= cfg.u_threshold and not math.isinf(cfg.u_threshold):
        return ChainState(x, evaluation.s_value, evaluation.u_value,
                          False, evaluation.selected_model)

    hf_value = ensemble.hf.evaluate(x)
    counters["hf_calls"] += 1
    for lf_id, lf_value in evaluation.lf_values.items():
        i = index_of[lf_id]
        count = tracker.insertions.get(lf_id, 0) + 1
        tracker.insertions[lf_id] = count
        reoptimize = count % cfg.gp_reopt_stride == 0
        ensemble.corrections[i] = ensemble.corrections[i].add_point_and_retrain(
            x, hf_value - lf_value, reoptimize=reoptimize
        )
    return ChainState(x, hf_value, math.inf, True, evaluation.selected_model)


def _new_counters(ensemble: ModelEnsemble) -> dict:
    return {
        "hf_calls": 0,
        "surrogate_evals": 0,
        "lf_calls": {lf.id: 0 for lf in ensemble.lfs},
        "index_of": {lf.id: i for i, lf in enumerate(ensemble.lfs)},
        "lf_mask": 0,
    }


def _finish_subset(index: int, cfg: RunConfig, pool: _ResponsePool, samples,
                   responses, u_values, hf_flags, selected_models, lf_masks,
                   hf_call_flags, counters: dict,
                   want_seeds: bool) -> SubsetRecord:
    threshold = max(cfg.failure_threshold, pool.quantile(cfg.pi_target))
    point_probs = point_failure_matrix(u_values, responses, threshold)
    cond_prob = float(point_probs.mean())
    if index == 1:
        delta = first_subset_delta(cond_prob, cfg.n_pts)
    else:
        delta = conditional_delta(point_probs, cond_prob)

    seed_states = None
    if want_seeds and threshold != cfg.failure_threshold:
        eligible = int(np.sum(responses <= threshold))
        if eligible < cfg.n_chains:
            raise SeedSelectionError(
                f"only {eligible} responses at or below the threshold; "
                f"pi_target * n_pts must exceed n_chains ({cfg.n_chains})"
            )
        order = np.argsort(responses.ravel(), kind="stable")[: cfg.n_chains]
        seed_states = []
        for flat in order:
            l, m = divmod(int(flat), cfg.n_spc)
            seed_states.append(ChainState(
                samples[l, m].copy(), float(responses[l, m]),
                float(u_values[l, m]), bool(hf_flags[l, m]),
                int(selected_models[l, m]),
            ))

    return SubsetRecord(
        index=index, samples=samples, responses=responses, u_values=u_values,
        hf_flags=hf_flags, selected_models=selected_models, lf_masks=lf_masks,
        hf_call_flags=hf_call_flags, threshold=threshold, cond_prob=cond_prob,
        delta=delta, hf_calls=counters["hf_calls"],
        lf_calls=counters["lf_calls"],
        surrogate_evals=counters["surrogate_evals"], seed_states=seed_states,
    )


def run_first_subset(ensemble: ModelEnsemble, distribution, cfg: RunConfig,
                     tracker: _Tracker | None = None) -> SubsetRecord:
    """Crude Monte Carlo subset with the running-threshold learning filter."""
    if tracker is None:
        tracker = _Tracker(stream(cfg.seed, "lfss-selection"))
    rng_mc = stream(cfg.seed, "mc-subset-1")
    d = distribution.dim
    samples = np.empty((cfg.n_chains, cfg.n_spc, d))
    responses = np.empty((cfg.n_chains, cfg.n_spc))
    u_values = np.empty((cfg.n_chains, cfg.n_spc))
    hf_flags = np.zeros((cfg.n_chains, cfg.n_spc), dtype=bool)
    selected_models = np.zeros((cfg.n_chains, cfg.n_spc), dtype=int)
    lf_masks = np.zeros((cfg.n_chains, cfg.n_spc), dtype=np.int64)
    hf_call_flags = np.zeros((cfg.n_chains, cfg.n_spc), dtype=bool)
    counters = _new_counters(ensemble)
    pool = _ResponsePool()

    for l in range(cfg.n_chains):
        for m in range(cfg.n_spc):
            x = distribution.sample(rng_mc, 1)[0]
            running_f = _running_threshold(pool, cfg, fallback=math.inf)
            state = _evaluate_and_learn(ensemble, x, running_f, cfg, tracker,
                                        counters)
            samples[l, m] = state.x
            responses[l, m] = state.response
            u_values[l, m] = state.u_value
            hf_flags[l, m] = state.hf_flag
            selected_models[l, m] = state.selected_model
            lf_masks[l, m] = counters["lf_mask"]
            hf_call_flags[l, m] = state.hf_flag
            pool.add(state.response)

    return _finish_subset(1, cfg, pool, samples, responses, u_values, hf_flags,
                          selected_models, lf_masks, hf_call_flags, counters,
                          want_seeds=True)


def run_subsequent_subset(ensemble: ModelEnsemble, distribution,
                          cfg: RunConfig, prev: SubsetRecord, index: int,
                          tracker: _Tracker | None = None) -> SubsetRecord:
    """One conditional subset: Metropolis chains started from the seeds."""
    if tracker is None:
        tracker = _Tracker(stream(cfg.seed, "lfss-selection"))
    if prev.seed_states is None:
        raise ConfigError("previous subset carries no seeds; it was terminal")
    d = distribution.dim
    samples = np.empty((cfg.n_chains, cfg.n_spc, d))
    responses = np.empty((cfg.n_chains, cfg.n_spc))
    u_values = np.empty((cfg.n_chains, cfg.n_spc))
    hf_flags = np.zeros((cfg.n_chains, cfg.n_spc), dtype=bool)
    selected_models = np.zeros((cfg.n_chains, cfg.n_spc), dtype=int)
    lf_masks = np.zeros((cfg.n_chains, cfg.n_spc), dtype=np.int64)
    hf_call_flags = np.zeros((cfg.n_chains, cfg.n_spc), dtype=bool)
    counters = _new_counters(ensemble)
    pool = _ResponsePool()

    for l in range(cfg.n_chains):
        rng_chain = stream(cfg.seed, f"mcmc-chain-{index}-{l}")
        state = prev.seed_states[l]
        for m in range(cfg.n_spc):
            candidate, moved = mcmc_propose(state.x, distribution, rng_chain,
                                            cfg.proposal_scale)
            fresh_mask = 0
            fresh_hf = False
            if moved:
                running_f = _running_threshold(pool, cfg,
                                               fallback=prev.threshold)
                trial = _evaluate_and_learn(ensemble, candidate, running_f,
                                            cfg, tracker, counters)
                fresh_mask = counters["lf_mask"]
                fresh_hf = trial.hf_flag
                # Candidates outside the previous failure domain repeat the
                # chain state; the learned point is kept either way.
                if trial.response <= prev.threshold:
                    state = trial
            samples[l, m] = state.x
            responses[l, m] = state.response
            u_values[l, m] = state.u_value
            hf_flags[l, m] = state.hf_flag
            selected_models[l, m] = state.selected_model
            lf_masks[l, m] = fresh_mask
            hf_call_flags[l, m] = fresh_hf
            pool.add(state.response)

    return _finish_subset(index, cfg, pool, samples, responses, u_values,
                          hf_flags, selected_models, lf_masks, hf_call_flags,
                          counters, want_seeds=True)


def run(ensemble: ModelEnsemble, distribution, cfg: RunConfig,
        skip_initial: bool = False) -> FailureEstimate:
    """Full pipeline: initial design, subsets until the target threshold."""
    cfg.validate()
    if not skip_initial:
        initial_phase(ensemble, distribution, cfg)
    tracker = _Tracker(stream(cfg.seed, "lfss-selection"))

    records: list[SubsetRecord] = []
    record = run_first_subset(ensemble, distribution, cfg, tracker)
    records.append(record)
    while record.threshold != cfg.failure_threshold:
        if len(records) >= cfg.max_subsets:
            partial = _assemble(records, ensemble, cfg, incomplete=True)
            raise NonConvergenceError(
                f"threshold {cfg.failure_threshold} not reached after "
                f"{cfg.max_subsets} subsets (latest {record.threshold:.6g})",
                partial=partial,
            )
        record = run_subsequent_subset(ensemble, distribution, cfg, record,
                                       len(records) + 1, tracker)
        records.append(record)
    return _assemble(records, ensemble, cfg, incomplete=False)


def _assemble(records: list[SubsetRecord], ensemble: ModelEnsemble,
              cfg: RunConfig, incomplete: bool) -> FailureEstimate:
    p_f = float(np.prod([rec.cond_prob for rec in records]))
    cov = math.sqrt(sum(rec.delta**2 for rec in records))
    lf_calls = {lf.id: cfg.n_init for lf in ensemble.lfs}
    for rec in records:
        for lf_id, count in rec.lf_calls.items():
            lf_calls[lf_id] += count
    return FailureEstimate(
        p_f=p_f,
        cov=cov,
        n_subsets=len(records),
        hf_calls=cfg.n_init + sum(rec.hf_calls for rec in records),
        lf_calls=lf_calls,
        total_samples=len(records) * cfg.n_pts,
        surrogate_evals=sum(rec.surrogate_evals for rec in records),
        records=records,
        incomplete=incomplete,
    )


# ----------------------------------------------- classical reference path


@dataclass
class ClassicalResult:
    """Indicator-based subset simulation outcome."""

    p_values: list[float]
    thresholds: list[float]
    p_f: float
    n_subsets: int


def classical_subset_simulation(hf_handle, distribution,
                                cfg: RunConfig) -> ClassicalResult:
    """Plain subset simulation: every response from the model, indicator
    estimators only. Shares the sampling plumbing (streams, proposal,
    quantile, seed rule) so surrogate-free runs are comparable point for
    point, but estimates nothing through the surrogate machinery.
    """
    cfg.validate()
    rng_mc = stream(cfg.seed, "mc-subset-1")
    d = distribution.dim

    p_values: list[float] = []
    thresholds: list[float] = []
    seeds: list[tuple[np.ndarray, float]] = []
    index = 0
    prev_threshold = math.inf

    while True:
        index += 1
        samples = np.empty((cfg.n_chains, cfg.n_spc, d))
        responses = np.empty((cfg.n_chains, cfg.n_spc))
        pool = _ResponsePool()
        for l in range(cfg.n_chains):
            if index == 1:
                for m in range(cfg.n_spc):
                    x = distribution.sample(rng_mc, 1)[0]
                    samples[l, m] = x
                    responses[l, m] = hf_handle.evaluate(x)
                    pool.add(responses[l, m])
            else:
                rng_chain = stream(cfg.seed, f"mcmc-chain-{index}-{l}")
                x, resp = seeds[l]
                for m in range(cfg.n_spc):
                    candidate, moved = mcmc_propose(x, distribution, rng_chain,
                                                    cfg.proposal_scale)
                    if moved:
                        cand_resp = hf_handle.evaluate(candidate)
                        if cand_resp <= prev_threshold:
                            x, resp = candidate, cand_resp
                    samples[l, m] = x
                    responses[l, m] = resp
                    pool.add(resp)

        threshold = max(cfg.failure_threshold, pool.quantile(cfg.pi_target))
        indicator = (responses <= threshold).astype(float)
        p_values.append(float(indicator.mean()))
        thresholds.append(threshold)

        if threshold == cfg.failure_threshold:
            break
        if index >= cfg.max_subsets:
            raise NonConvergenceError(
                f"threshold {cfg.failure_threshold} not reached after "
                f"{cfg.max_subsets} subsets (latest {threshold:.6g})"
            )
        order = np.argsort(responses.ravel(), kind="stable")[: cfg.n_chains]
        seeds = []
        for flat in order:
            l, m = divmod(int(flat), cfg.n_spc)
            seeds.append((samples[l, m].copy(), float(responses[l, m])))
        prev_threshold = threshold

    return ClassicalResult(
        p_values=p_values,
        thresholds=thresholds,
        p_f=float(np.prod(p_values)),
        n_subsets=index,
    )
