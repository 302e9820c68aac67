"""Folded-Gaussian correction magnitudes and local model probabilities.

Each corrected low-fidelity model carries a GP correction whose pointwise
prediction is Gaussian, so the correction magnitude |G_i| follows a folded
Gaussian. Model i is "locally best" when its magnitude is the smallest of
the ensemble; the probability of that event,

    p_i = integral_0^inf f_i(z) * prod_{j != i} (1 - F_j(z)) dz,

is evaluated with an adaptive Gauss-Kronrod (G7/K15) scheme. Each p_i is
integrated in the component's own standardized coordinate u = (z - |mu_i|)
/ sigma_i over u in [-min(8, |mu_i|/sigma_i), 8] (the support of f_i up to
mass 1e-15), with breakpoints where every other model's survival factor
transitions. Arguments of exp/erf are formed from the difference
|mu_i| - |mu_j| directly, never from z itself, so components whose sigma
sits at the 1e-12 floor (GP predictions at training points) are resolved
without catastrophic cancellation. Cost biasing rescales each magnitude by
gamma(tau_i) = tau_i**beta before the same integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

from ._validation import as_float_vector, check_nonnegative
from .errors import InputError, QuadratureError

SIGMA_FLOOR = 1e-12
QUAD_ABS_TOL = 1e-10
MAX_INTERVALS = 1024
MAX_SWEEPS = 64

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# 15-point Kronrod extension of 7-point Gauss-Legendre on [-1, 1].
_XGK = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_WGK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
])

NODES = np.concatenate([-_XGK[:7], [0.0], _XGK[6::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:7], [_WGK[7]], _WGK[6::-1]])
GAUSS_WEIGHTS = np.zeros(15)
for _i, _w in zip((1, 3, 5), _WG[:3]):
    GAUSS_WEIGHTS[_i] = _w
    GAUSS_WEIGHTS[14 - _i] = _w
GAUSS_WEIGHTS[7] = _WG[3]
del _i, _w


@dataclass
class FoldedGaussianParams:
    """Parameters (mu, sigma) of |G| for a Gaussian G ~ N(mu, sigma^2).

    sigma is floored at 1e-12 so degenerate GP predictions stay integrable.
    """

    mu: float
    sigma: float

    def __post_init__(self):
        self.mu = float(self.mu)
        sigma = float(self.sigma)
        if not np.isfinite(self.mu) or not np.isfinite(sigma) or sigma < 0:
            raise InputError(
                f"folded-Gaussian parameters must be finite with sigma >= 0, "
                f"got mu={self.mu!r}, sigma={self.sigma!r}"
            )
        self.sigma = max(sigma, SIGMA_FLOOR)

    def scaled(self, gamma: float) -> "FoldedGaussianParams":
        """Parameters of gamma * |G|."""
        return FoldedGaussianParams(gamma * self.mu, gamma * self.sigma)


def folded_pdf(z, params: FoldedGaussianParams):
    """Density of the folded Gaussian; zero for z < 0."""
    z = np.asarray(z, dtype=float)
    lo = (z - params.mu) / params.sigma
    hi = (z + params.mu) / params.sigma
    val = (_INV_SQRT_2PI / params.sigma) * (
        np.exp(-0.5 * lo * lo) + np.exp(-0.5 * hi * hi)
    )
    out = np.where(z >= 0.0, val, 0.0)
    return out if out.ndim else float(out)


def folded_cdf(z, params: FoldedGaussianParams):
    """Distribution function of the folded Gaussian; zero for z <= 0."""
    z = np.asarray(z, dtype=float)
    s = _SQRT2 * params.sigma
    val = 0.5 * (erf((z - params.mu) / s) + erf((z + params.mu) / s))
    out = np.where(z > 0.0, val, 0.0)
    return out if out.ndim else float(out)


def normalize_costs(taus) -> np.ndarray:
    """Scale evaluation costs so the cheapest model has cost exactly 1."""
    taus = as_float_vector(taus, "taus")
    if np.any(taus <= 0):
        raise InputError("taus must be positive")
    return taus / taus.min()


@dataclass
class CostModel:
    """Relative evaluation costs and the biasing exponent gamma = tau**beta."""

    taus: np.ndarray
    beta: float = 0.0
    gamma_override: np.ndarray | None = None
    gammas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.taus = normalize_costs(self.taus)
        self.beta = check_nonnegative(self.beta, "beta")
        if self.gamma_override is not None:
            gammas = as_float_vector(self.gamma_override, "gamma_override",
                                     dim=self.taus.shape[0])
            if np.any(gammas < 1.0):
                raise InputError("gamma_override values must be >= 1")
            self.gamma_override = gammas
            self.gammas = gammas
        else:
            self.gammas = self.taus**self.beta


def local_model_probabilities(params: Sequence[FoldedGaussianParams],
                              return_raw: bool = False):
    """Probability that each model's correction magnitude is the smallest.

    Returns the renormalized probability vector; with return_raw=True also
    returns the raw quadrature values whose sum certifies convergence.
    """
    if len(params) == 0:
        raise InputError("at least one model is required")
    if len(params) == 1:
        p = np.array([1.0])
        return (p, p.copy()) if return_raw else p
    mu = np.array([q.mu for q in params])
    sigma = np.array([q.sigma for q in params])
    raw = _integrate_min_probabilities(mu, sigma)
    p = raw / raw.sum()
    return (p, raw) if return_raw else p


def cost_biased_probabilities(params: Sequence[FoldedGaussianParams],
                              cost_model: CostModel,
                              return_raw: bool = False):
    """Local probabilities of the cost-scaled magnitudes gamma_i * |G_i|."""
    if len(params) != cost_model.gammas.shape[0]:
        raise InputError(
            f"cost model covers {cost_model.gammas.shape[0]} models, "
            f"got {len(params)} parameter sets"
        )
    scaled = [q.scaled(g) for q, g in zip(params, cost_model.gammas)]
    return local_model_probabilities(scaled, return_raw=return_raw)


# ----------------------------------------------------------- quadrature core

_BREAK_OFFSETS = np.array([-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0])
_U_MAX = 8.0


def _component_edges(index: int, m: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Initial interval seams for p_index in its standardized coordinate.

    The component's own density is an O(1) bump at u = 0. Every other
    survival factor changes value only inside narrow bands around
    z = |mu_j| and z = -|mu_j|; their edges are mapped into u so the
    transitions start out isolated in their own intervals.
    """
    si = sigma[index]
    u_lo = -min(_U_MAX, m[index] / si)
    pts = [_BREAK_OFFSETS]
    for j in range(m.shape[0]):
        if j == index:
            continue
        pts.append(((m[j] - m[index]) + _BREAK_OFFSETS * sigma[j]) / si)
        pts.append(((-m[j] - m[index]) + _BREAK_OFFSETS * sigma[j]) / si)
    merged = np.concatenate(pts)
    merged = merged[(merged > u_lo) & (merged < _U_MAX)]
    return np.unique(np.concatenate([[u_lo, _U_MAX], merged]))


def _component_integrand(u: np.ndarray, index: int, m: np.ndarray,
                         sigma: np.ndarray) -> np.ndarray:
    """Integrand of p_index at standardized offsets u = (z - m_i) / sigma_i.

    Includes the Jacobian, so f_i(z) dz = (phi(u) + phi(u + 2 m_i/sigma_i)) du
    with the second (mirror) lobe vanishing when m_i >> sigma_i.
    """
    si = sigma[index]
    density = np.exp(-0.5 * u * u) + np.exp(-0.5 * (u + 2.0 * m[index] / si) ** 2)
    out = _INV_SQRT_2PI * density
    for j in range(m.shape[0]):
        if j == index:
            continue
        near = ((m[index] - m[j]) + si * u) / sigma[j]
        far = ((m[index] + m[j]) + si * u) / sigma[j]
        out = out * (1.0 - 0.5 * (erf(near / _SQRT2) + erf(far / _SQRT2)))
    return out


def _eval_intervals(a: np.ndarray, b: np.ndarray, index: int,
                    m: np.ndarray, sigma: np.ndarray):
    """Kronrod estimates and Gauss-Kronrod error gaps per interval."""
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    u = center[:, None] + half[:, None] * NODES
    vals = _component_integrand(u.ravel(), index, m, sigma)
    vals = vals.reshape(a.shape[0], 15)
    k15 = half * (vals @ KRONROD_WEIGHTS)
    g7 = half * (vals @ GAUSS_WEIGHTS)
    return k15, np.abs(k15 - g7)


def _integrate_component(index: int, m: np.ndarray, sigma: np.ndarray,
                         tol: float) -> float:
    edges = _component_edges(index, m, sigma)
    a, b = edges[:-1], edges[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    k_est, err = _eval_intervals(a, b, index, m, sigma)

    for _ in range(MAX_SWEEPS):
        if err.sum() <= tol:
            return float(k_est.sum())
        split = err > tol / (2.0 * a.shape[0])
        if not split.any():
            split[np.argmax(err)] = True
        if a.shape[0] + split.sum() > MAX_INTERVALS:
            break
        mids = 0.5 * (a[split] + b[split])
        new_a = np.concatenate([a[split], mids])
        new_b = np.concatenate([mids, b[split]])
        new_k, new_err = _eval_intervals(new_a, new_b, index, m, sigma)
        a = np.concatenate([a[~split], new_a])
        b = np.concatenate([b[~split], new_b])
        k_est = np.concatenate([k_est[~split], new_k])
        err = np.concatenate([err[~split], new_err])

    raise QuadratureError(
        f"model-probability quadrature for component {index} did not reach "
        f"the absolute tolerance {tol:g} (residual error {err.sum():.3e})",
        raw_values=float(k_est.sum()),
    )


def _integrate_min_probabilities(mu: np.ndarray, sigma: np.ndarray,
                                 tol: float = QUAD_ABS_TOL) -> np.ndarray:
    m = np.abs(mu)
    raw = np.full(m.shape[0], np.nan)
    for i in range(m.shape[0]):
        try:
            raw[i] = _integrate_component(i, m, sigma, tol)
        except QuadratureError as exc:
            raw[i] = exc.raw_values
            raise QuadratureError(str(exc), raw_values=raw) from None
    return raw
