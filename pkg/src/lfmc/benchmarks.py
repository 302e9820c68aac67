"""Analytic reliability benchmarks with exact low-fidelity decompositions.

Both problems live on two uncorrelated standard-normal inputs and define
failure as response <= 0.

Four-branch: the high-fidelity response is the minimum of four limit-state
branches and each branch doubles as a low-fidelity model, so
min_i L_i(x) == H(x) everywhere.

Rastrigin: H(x) = 10 - sum_{i=1,2} (x_i^2 - 5 cos(2 pi x_i)). Type 1 splits
by coordinate (each LF sees only its own x_i); type 2 splits by term (a
quadratic bowl and a cosine field, both on the full input). In both cases
L_1 + L_2 - 10 == H exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import ModelEnsemble, ModelHandle
from .distributions import StandardNormal
from .errors import InputError
from .gp import CorrectionGP
from .model_probability import CostModel
from .rng import stream_seed

_SQRT2 = np.sqrt(2.0)


def _four_branch_terms(x: np.ndarray):
    x1, x2 = x[..., 0], x[..., 1]
    spread = 3.0 + 0.1 * (x1 - x2) ** 2
    return (
        spread - (x1 + x2) / _SQRT2,
        spread + (x1 + x2) / _SQRT2,
        x1 - x2 + 6.0 / _SQRT2,
        x2 - x1 + 6.0 / _SQRT2,
    )


def four_branch_hf(x):
    """Minimum of the four branches; series-system limit state."""
    x = np.asarray(x, dtype=float)
    out = np.min(np.stack(_four_branch_terms(x)), axis=0)
    return out if out.ndim else float(out)


def four_branch_lf(i: int, x):
    """Branch i (1-based) of the four-branch system."""
    if i not in (1, 2, 3, 4):
        raise InputError(f"four-branch model index must be 1..4, got {i}")
    x = np.asarray(x, dtype=float)
    out = _four_branch_terms(x)[i - 1]
    return out if np.ndim(out) else float(out)


def rastrigin_hf(x):
    x = np.asarray(x, dtype=float)
    out = 10.0 - np.sum(x**2 - 5.0 * np.cos(2.0 * np.pi * x), axis=-1)
    return out if out.ndim else float(out)


def rastrigin_type1_lf(x_own):
    """Coordinate split: the LF for x_i sees only its own coordinate."""
    x_own = np.asarray(x_own, dtype=float)
    out = 10.0 - (x_own**2 - 5.0 * np.cos(2.0 * np.pi * x_own))
    return out if out.ndim else float(out)


def rastrigin_type2_lf(i: int, x):
    """Term split: model 1 is the quadratic bowl, model 2 the cosine field."""
    if i not in (1, 2):
        raise InputError(f"rastrigin type-2 model index must be 1 or 2, got {i}")
    x = np.asarray(x, dtype=float)
    if i == 1:
        out = 10.0 - np.sum(x**2, axis=-1)
    else:
        out = 10.0 + np.sum(5.0 * np.cos(2.0 * np.pi * x), axis=-1)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BenchmarkSpec:
    """Static description of a named benchmark."""

    name: str
    dimension: int
    n_models: int
    failure_threshold: float = 0.0


BENCHMARKS = {
    "four_branch": BenchmarkSpec("four_branch", 2, 4),
    "rastrigin_type1": BenchmarkSpec("rastrigin_type1", 2, 2),
    "rastrigin_type2": BenchmarkSpec("rastrigin_type2", 2, 2),
}


def _handles(name: str) -> tuple[ModelHandle, list[ModelHandle]]:
    if name == "four_branch":
        hf = ModelHandle(0, lambda x: four_branch_hf(x), name="four_branch_hf")
        lfs = [
            ModelHandle(i, lambda x, i=i: four_branch_lf(i, x),
                        name=f"branch_{i}")
            for i in (1, 2, 3, 4)
        ]
    elif name == "rastrigin_type1":
        hf = ModelHandle(0, lambda x: rastrigin_hf(x), name="rastrigin_hf")
        lfs = [
            ModelHandle(i, lambda sub: rastrigin_type1_lf(sub[0]),
                        input_indices=[i - 1], name=f"coordinate_{i}")
            for i in (1, 2)
        ]
    elif name == "rastrigin_type2":
        hf = ModelHandle(0, lambda x: rastrigin_hf(x), name="rastrigin_hf")
        lfs = [
            ModelHandle(i, lambda x, i=i: rastrigin_type2_lf(i, x),
                        name=("quadratic" if i == 1 else "cosine"))
            for i in (1, 2)
        ]
    else:
        raise InputError(
            f"unknown benchmark {name!r}; options: {sorted(BENCHMARKS)}"
        )
    return hf, lfs


def make_benchmark_ensemble(name: str, strategy: str, master_seed: int,
                            beta: float = 0.0, gamma_override=None
                            ) -> tuple[ModelEnsemble, StandardNormal]:
    """Build the named benchmark's ensemble and its input distribution.

    Analytic benchmarks all carry tau = 1 per model, so the cost bias is
    inert unless gamma_override says otherwise.
    """
    spec = BENCHMARKS.get(name)
    if spec is None:
        raise InputError(
            f"unknown benchmark {name!r}; options: {sorted(BENCHMARKS)}"
        )
    hf, lfs = _handles(name)
    corrections = [
        CorrectionGP(random_state=stream_seed(master_seed, f"gp-multistart-{lf.id}"))
        for lf in lfs
    ]
    cost = CostModel(np.array([lf.tau for lf in lfs]), beta=beta,
                     gamma_override=gamma_override)
    ensemble = ModelEnsemble(hf=hf, lfs=lfs, strategy=strategy, cost=cost,
                             corrections=corrections)
    return ensemble, StandardNormal(spec.dimension)
