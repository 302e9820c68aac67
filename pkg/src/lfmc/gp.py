"""Exact Gaussian-process regression for low-fidelity correction models.

The corrections learned here are zero-mean GPs over standardized inputs and
targets. The covariance of the training block is sigma^2 (R + jitter I)
where R is a unit-diagonal correlation matrix (squared-exponential ARD by
default, Matern-5/2 as the alternative) and the jitter is a dimensionless
diagonal inflation, not a learned noise level. Hyperparameters are chosen
by multi-start Nelder-Mead on the log-lengthscales with the signal variance
profiled in closed form, so a fit is deterministic given ``random_state``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import as_float_matrix, as_float_vector, check_positive
from .errors import FitFailureError, InputError

LOG_BOUND = np.log(1e3)
JITTER_CEILING = 1e-4
SIGNAL_VARIANCE_FLOOR = 1e-12
KERNELS = ("squared_exponential", "matern52")

NM_OPTIONS = {"xatol": 0.05, "fatol": 1e-3, "maxiter": 120, "maxfev": 150}


class DuplicateTrainingPointWarning(UserWarning):
    """Raised (as a warning) when an added training input already exists."""


@dataclass(frozen=True)
class KernelConfig:
    """Fitted kernel hyperparameters in standardized-input units."""

    kernel: str
    lengthscales: np.ndarray
    signal_variance: float
    noise_jitter: float


def kernel_correlation(Xa: np.ndarray, Xb: np.ndarray, kernel: str,
                       lengthscales: np.ndarray) -> np.ndarray:
    """Unit-diagonal correlation matrix between two standardized input sets."""
    scaled_a = Xa / lengthscales
    scaled_b = Xb / lengthscales
    if kernel == "squared_exponential":
        sq = cdist(scaled_a, scaled_b, "sqeuclidean")
        return np.exp(-0.5 * sq)
    if kernel == "matern52":
        r = cdist(scaled_a, scaled_b, "euclidean")
        sqrt5_r = np.sqrt(5.0) * r
        return (1.0 + sqrt5_r + sqrt5_r**2 / 3.0) * np.exp(-sqrt5_r)
    raise InputError(f"kernel must be one of {KERNELS}, got {kernel!r}")


def _factorize(R: np.ndarray, jitter: float):
    """Cholesky of R + j I, doubling j up to the ceiling when singular."""
    j = jitter
    n = R.shape[0]
    while True:
        try:
            cf = cho_factor(R + j * np.eye(n), lower=True)
            return cf, j
        except LinAlgError:
            j *= 2.0
            if j > JITTER_CEILING:
                raise FitFailureError(
                    "kernel matrix is singular even at the jitter ceiling "
                    f"{JITTER_CEILING:g}"
                ) from None


def _standardize_constants(values: np.ndarray):
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return mean, scale


class CorrectionGP(RegressorMixin, BaseEstimator):
    """Zero-mean exact GP regressor with profiled signal variance.

    Parameters
    ----------
    kernel : str
        "squared_exponential" (ARD, default) or "matern52".
    lengthscales : array-like or None
        Fixed lengthscales in standardized-input units. None means they are
        optimized by multi-start Nelder-Mead within [1e-3, 1e3].
    signal_variance : float or None
        Fixed signal variance. None means it is profiled in closed form at
        every candidate lengthscale vector.
    noise_jitter : float
        Dimensionless diagonal inflation of the correlation matrix; doubled
        internally up to 1e-4 if the factorization fails. Not a noise model.
    n_starts : int
        Multi-start count for a cold fit (start 0 is all-ones lengthscales,
        the rest are log-uniform draws in [0.1, 10]).
    n_retrain_starts : int
        Start count used by add_point_and_retrain (start 0 warm-starts at
        the current lengthscales, start 1 is all-ones, further starts are
        seeded random draws).
    random_state : int
        Seed for the multi-start draws; fits are deterministic given it.
    """

    def __init__(self, kernel: str = "squared_exponential", lengthscales=None,
                 signal_variance: float | None = None, noise_jitter: float = 1e-10,
                 n_starts: int = 8, n_retrain_starts: int = 2, random_state: int = 0):
        self.kernel = kernel
        self.lengthscales = lengthscales
        self.signal_variance = signal_variance
        self.noise_jitter = noise_jitter
        self.n_starts = n_starts
        self.n_retrain_starts = n_retrain_starts
        self.random_state = random_state

    # ------------------------------------------------------------------ fit

    def fit(self, X, y):
        X = as_float_matrix(X, "X")
        y = as_float_vector(y, "y")
        if X.shape[0] != y.shape[0]:
            raise InputError(
                f"X and y disagree on sample count: {X.shape[0]} vs {y.shape[0]}"
            )
        if X.shape[0] < 1:
            raise InputError("at least one training point is required")
        if self.kernel not in KERNELS:
            raise InputError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        check_positive(self.noise_jitter, "noise_jitter")
        if self.noise_jitter < 1e-12:
            raise InputError("noise_jitter must be at least 1e-12")
        return self._fit_impl(X, y, starts=None)

    def _fit_impl(self, X, y, starts, fixed_ls=None):
        self.training_inputs_ = X
        self.training_targets_ = y
        self.n_train_ = X.shape[0]
        d = X.shape[1]

        self.input_mean_, self.input_scale_ = _standardize_constants(X)
        self.target_mean_, self.target_scale_ = _standardize_constants(y)
        self._Xs = (X - self.input_mean_) / self.input_scale_
        self._ys = (y - self.target_mean_) / self.target_scale_

        if fixed_ls is None and self.lengthscales is not None:
            fixed_ls = np.broadcast_to(
                np.asarray(self.lengthscales, dtype=float), (d,)
            )
        if fixed_ls is not None:
            ls = as_float_vector(fixed_ls, "lengthscales", dim=d)
            if np.any(ls <= 0):
                raise InputError("lengthscales must be positive")
            best_log_ls = np.log(ls)
        else:
            best_log_ls = self._optimize_lengthscales(d, starts)

        self._finalize(np.exp(best_log_ls))
        return self

    def _optimize_lengthscales(self, d: int, starts) -> np.ndarray:
        if starts is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.random_state]))
            starts = [np.zeros(d)]
            for _ in range(max(1, self.n_starts) - 1):
                starts.append(rng.uniform(np.log(0.1), np.log(10.0), size=d))

        best = None
        for idx, z0 in enumerate(starts):
            res = minimize(self._nll_of_log_ls, np.asarray(z0, dtype=float),
                           method="Nelder-Mead", options=NM_OPTIONS)
            candidate = (res.fun, idx, np.clip(res.x, -LOG_BOUND, LOG_BOUND))
            if best is None or candidate[0] < best[0]:
                best = candidate
        return best[2]

    def _nll_of_log_ls(self, log_ls: np.ndarray) -> float:
        ls = np.exp(np.clip(log_ls, -LOG_BOUND, LOG_BOUND))
        try:
            nll, _, _, _ = self._nll_pieces(ls)
        except FitFailureError:
            return 1e25
        return nll

    def _nll_pieces(self, ls: np.ndarray):
        """NLL through the Cholesky route, plus the pieces a fit stores."""
        n = self.n_train_
        R = kernel_correlation(self._Xs, self._Xs, self.kernel, ls)
        cf, j_eff = _factorize(R, self.noise_jitter)
        solved = cho_solve(cf, self._ys)
        quad = float(self._ys @ solved)
        logdet_A = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
        if self.signal_variance is not None:
            s2 = check_positive(self.signal_variance, "signal_variance")
            nll = 0.5 * (n * np.log(s2) + logdet_A) + 0.5 * quad / s2
        else:
            s2 = max(quad / n, SIGNAL_VARIANCE_FLOOR)
            nll = 0.5 * (n * np.log(s2) + logdet_A) + 0.5 * n
        return float(nll), s2, cf, j_eff

    def _finalize(self, ls: np.ndarray):
        nll, s2, cf, j_eff = self._nll_pieces(ls)
        L = np.tril(cf[0])
        self.kernel_config_ = KernelConfig(self.kernel, ls, s2, j_eff)
        self.L_ = L
        self.alpha_ = cho_solve(cf, self._ys)
        self.A_inv_ = cho_solve(cf, np.eye(self.n_train_))
        self.nll_ = nll
        return self

    # -------------------------------------------------------------- predict

    def _require_fitted(self):
        if not hasattr(self, "kernel_config_"):
            raise InputError("this CorrectionGP is not fitted yet; call fit first")

    def predict(self, X, return_std: bool = False):
        self._require_fitted()
        X = as_float_matrix(X, "X", n_cols=self.training_inputs_.shape[1])
        Xs = (X - self.input_mean_) / self.input_scale_
        cfg = self.kernel_config_
        r = kernel_correlation(Xs, self._Xs, self.kernel, cfg.lengthscales)
        mean = self.target_mean_ + self.target_scale_ * (r @ self.alpha_)
        if not return_std:
            return mean
        var_std = cfg.signal_variance * (
            1.0 + cfg.noise_jitter - np.einsum("ij,ij->i", r @ self.A_inv_, r)
        )
        # jitter * signal variance is the smallest value the posterior variance
        # attains (at a training point); flooring there keeps ill-conditioned
        # solves from reporting spurious certainty.
        floor = cfg.signal_variance * cfg.noise_jitter
        std = self.target_scale_ * np.sqrt(np.maximum(var_std, floor))
        return mean, std

    def predict_point(self, x: np.ndarray) -> tuple[float, float]:
        """Single-point (mean, std) without validation; the driver hot path."""
        self._require_fitted()
        xs = (x - self.input_mean_) / self.input_scale_
        cfg = self.kernel_config_
        diff = (xs - self._Xs) / cfg.lengthscales
        if self.kernel == "squared_exponential":
            r = np.exp(-0.5 * np.einsum("ij,ij->i", diff, diff))
        else:
            dist = np.sqrt(5.0 * np.einsum("ij,ij->i", diff, diff))
            r = (1.0 + dist + dist**2 / 3.0) * np.exp(-dist)
        mean = self.target_mean_ + self.target_scale_ * float(r @ self.alpha_)
        var_std = cfg.signal_variance * (
            1.0 + cfg.noise_jitter - float(r @ (self.A_inv_ @ r))
        )
        floor = cfg.signal_variance * cfg.noise_jitter
        std = self.target_scale_ * float(np.sqrt(max(var_std, floor)))
        return mean, std

    # -------------------------------------------------- active-learning API

    def add_point_and_retrain(self, x, y, reoptimize: bool = True) -> "CorrectionGP":
        """Return a new estimator trained on the union set.

        The receiver is left untouched. A duplicate input is skipped with a
        DuplicateTrainingPointWarning and the receiver itself is returned.
        """
        self._require_fitted()
        x = as_float_vector(x, "x", dim=self.training_inputs_.shape[1])
        y = float(y)
        if np.any(np.all(self.training_inputs_ == x, axis=1)):
            warnings.warn(
                "training input already present; point skipped",
                DuplicateTrainingPointWarning,
            )
            return self
        X_new = np.vstack([self.training_inputs_, x])
        y_new = np.append(self.training_targets_, y)

        fresh = CorrectionGP(**self.get_params())
        if not reoptimize:
            return fresh._fit_impl(
                X_new, y_new, starts=None,
                fixed_ls=self.kernel_config_.lengthscales,
            )

        d = X_new.shape[1]
        starts = [np.log(self.kernel_config_.lengthscales), np.zeros(d)]
        extra = max(2, self.n_retrain_starts) - 2
        if extra > 0:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.random_state, X_new.shape[0]])
            )
            for _ in range(extra):
                starts.append(rng.uniform(np.log(0.1), np.log(10.0), size=d))
        return fresh._fit_impl(X_new, y_new, starts=starts)

    # ------------------------------------------------------------ utilities

    def negative_log_likelihood(self, lengthscales=None) -> float:
        """NLL via the Cholesky factorization at given or fitted lengthscales."""
        if lengthscales is None:
            return self.nll_
        ls = as_float_vector(lengthscales, "lengthscales",
                             dim=self.training_inputs_.shape[1])
        nll, _, _, _ = self._nll_pieces(ls)
        return nll
