"""Input distributions for the reliability driver.

Everything runs in independent standard-normal space; models that need
physical variables are expected to transform inside their evaluator. The
component-wise Metropolis proposal only ever needs marginal densities, so
the interface is deliberately small.
"""

from __future__ import annotations

import numpy as np

from ._validation import check_positive_int

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class StandardNormal:
    """Vector of independent standard-normal coordinates."""

    def __init__(self, dim: int):
        self.dim = check_positive_int(dim, "dim")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def component_pdf(self, j: int, value):
        value = np.asarray(value, dtype=float)
        out = _INV_SQRT_2PI * np.exp(-0.5 * value * value)
        return out if out.ndim else float(out)
