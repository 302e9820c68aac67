"""Assembly of corrected low-fidelity models into a single surrogate.

Every low-fidelity model is corrected by its GP (S_i = L_i + G_i). The
ensemble surrogate at a point is built from the cost-biased local model
probabilities in one of three ways:

* lfma: probability-weighted average of all corrected models, with
  variance accumulated as sum((p_i * sigma_i)^2);
* lfds: deterministic selection of the most probable model (ties go to
  the lowest model id);
* lfss: stochastic selection, one categorical draw per evaluation.

Only the models actually evaluated appear in ``lf_values``; the driver
uses exactly those entries for active-learning updates and call counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from ._validation import check_positive
from .errors import InputError
from .gp import CorrectionGP
from .model_probability import (CostModel, FoldedGaussianParams,
                                cost_biased_probabilities)

STRATEGIES = ("lfma", "lfds", "lfss")


@dataclass
class ModelHandle:
    """A callable model plus its slice of the global input vector.

    input_indices selects the coordinates the model consumes (None means
    all of them); tau is its relative evaluation cost.
    """

    id: int
    evaluator: Callable[[np.ndarray], float]
    input_indices: Sequence[int] | None = None
    tau: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.id = int(self.id)
        if self.input_indices is not None:
            self.input_indices = np.asarray(self.input_indices, dtype=int)
        self.tau = check_positive(self.tau, "tau")

    def evaluate(self, x: np.ndarray) -> float:
        sub = x if self.input_indices is None else x[self.input_indices]
        return float(self.evaluator(sub))


@dataclass
class ModelEnsemble:
    """One high-fidelity model, its low-fidelity stand-ins, and their state."""

    hf: ModelHandle
    lfs: list[ModelHandle]
    strategy: str
    cost: CostModel | None = None
    corrections: list[CorrectionGP | None] = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if len(self.lfs) == 0:
            raise InputError("at least one low-fidelity model is required")
        ids = [lf.id for lf in self.lfs]
        if len(set(ids)) != len(ids):
            raise InputError(f"low-fidelity model ids must be unique, got {ids}")
        # selection ties resolve to the first position, which must therefore
        # be the lowest id
        if ids != sorted(ids):
            raise InputError(
                f"low-fidelity models must be listed in increasing id order, got {ids}"
            )
        if self.cost is None:
            self.cost = CostModel(np.array([lf.tau for lf in self.lfs]))
        if self.cost.taus.shape[0] != len(self.lfs):
            raise InputError(
                f"cost model covers {self.cost.taus.shape[0]} models, "
                f"ensemble has {len(self.lfs)}"
            )
        if not self.corrections:
            self.corrections = [None] * len(self.lfs)

    @property
    def n_models(self) -> int:
        return len(self.lfs)


@dataclass
class SurrogateEvaluation:
    """Outcome of one assembled-surrogate evaluation."""

    s_value: float
    sigma: float
    u_value: float
    selected_model: int           # lf id; 0 when the averaged form was used
    probabilities: np.ndarray     # cost-biased model probabilities
    lf_values: dict[int, float]   # raw LF responses actually computed


def misclassification_prob(u_value: float) -> float:
    """Probability the sign classification at this point is wrong, Phi(-u)."""
    return float(ndtr(-u_value))


def classify(evaluation: SurrogateEvaluation, threshold: float) -> int:
    """1 when the surrogate response is at or below the threshold, else 0."""
    return int(evaluation.s_value <= threshold)


def _u_value(s_value: float, sigma: float, threshold: float) -> float:
    if sigma > 0.0:
        return abs(s_value - threshold) / sigma
    return 0.0 if s_value == threshold else np.inf


def evaluate_surrogate(ensemble: ModelEnsemble, x: np.ndarray, threshold: float,
                       rng: np.random.Generator | None = None) -> SurrogateEvaluation:
    """Evaluate the assembled surrogate at x against the running threshold."""
    means = np.empty(ensemble.n_models)
    stds = np.empty(ensemble.n_models)
    for i, gp in enumerate(ensemble.corrections):
        if gp is None:
            raise InputError(
                f"correction for model id {ensemble.lfs[i].id} is untrained; "
                "run initial_phase first"
            )
        means[i], stds[i] = gp.predict_point(x)

    params = [FoldedGaussianParams(m, s) for m, s in zip(means, stds)]
    probs = cost_biased_probabilities(params, ensemble.cost)

    if ensemble.strategy == "lfma":
        lf_values = {lf.id: lf.evaluate(x) for lf in ensemble.lfs}
        corrected = np.array([lf_values[lf.id] for lf in ensemble.lfs]) + means
        s_value = float(probs @ corrected)
        sigma = float(np.sqrt(np.sum((probs * stds) ** 2)))
        selected = 0
    else:
        if ensemble.strategy == "lfss":
            if rng is None:
                raise InputError("lfss strategy needs a random generator")
            k = int(rng.choice(ensemble.n_models, p=probs))
        else:
            k = int(np.argmax(probs))
        handle = ensemble.lfs[k]
        lf_values = {handle.id: handle.evaluate(x)}
        s_value = float(lf_values[handle.id] + means[k])
        sigma = float(stds[k])
        selected = handle.id

    return SurrogateEvaluation(
        s_value=s_value,
        sigma=sigma,
        u_value=_u_value(s_value, sigma, threshold),
        selected_model=selected,
        probabilities=probs,
        lf_values=lf_values,
    )
