"""scikit-learn style wrappers around the fitting routines.

The functional API in :mod:`kickecho.levy` and :mod:`kickecho.decayfit` is
the primary interface; these classes make the same fits usable in pipelines
and grid searches.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .decayfit import FLOOR, fit_decay_law
from .ensembles import ActionDistribution
from .errors import FitError
from .levy import fit_eta_dl, lm_fit, spectrum


class WidthModelRegressor(RegressorMixin, BaseEstimator):
    """Fit ``dl(eta)`` with the exponential or linear model."""

    def __init__(self, model="exp", policy="marquardt", max_iter=2000):
        self.model = model
        self.policy = policy
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        pts = np.column_stack([X[:, 0], y])
        self.fit_ = lm_fit(pts, model=self.model, policy=self.policy, max_iter=self.max_iter)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X)
        return np.asarray(self.fit_(X[:, 0]), float)


class DecayLawRegressor(RegressorMixin, BaseEstimator):
    """``M = exp(-c0 sigma^nu t^alpha)`` from rows of ``(sigma, t)``.

    The fit is linear in ``ln(-ln M)``; rows with ``M`` outside
    ``(floor, 1)`` are ignored.
    """

    def __init__(self, floor=FLOOR):
        self.floor = floor

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        sig, t = X[:, 0], X[:, 1]
        sel = (y > self.floor) & (y < 1.0) & (t > 0) & (sig > 0)
        if np.count_nonzero(sel) < 3:
            raise FitError("fewer than 3 usable rows")
        A = np.column_stack([np.ones(sel.sum()), np.log(sig[sel]), np.log(t[sel])])
        coef, *_ = np.linalg.lstsq(A, np.log(-np.log(y[sel])), rcond=None)
        self.c0_, self.nu_, self.alpha_ = float(np.exp(coef[0])), float(coef[1]), float(coef[2])
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "c0_")
        X = check_array(X)
        return np.exp(-self.c0_ * X[:, 0] ** self.nu_ * X[:, 1] ** self.alpha_)

    @staticmethod
    def from_grid(sigmas, times, M, floor=FLOOR):
        """Grid form; returns the :class:`~kickecho.decayfit.DecayLawFit`."""
        return fit_decay_law(sigmas, times, M, floor)


class LevySpectrumEstimator(BaseEstimator):
    """Stable index and width of a sample of actions.

    ``fit`` takes a 1-d array of ``s`` values (or an ``(n, 1)`` column).
    """

    def __init__(self, n_freq=4, pad=4, bins="fd"):
        self.n_freq = n_freq
        self.pad = pad
        self.bins = bins

    def fit(self, X, y=None, sample_weight=None):
        s = check_array(np.asarray(X, float).reshape(-1, 1))[:, 0]
        dist = ActionDistribution(0, s, sample_weight, bins=self.bins)
        self.relation_ = spectrum(dist, pad=self.pad)
        fit = fit_eta_dl(self.relation_, self.n_freq)
        self.eta_, self.dl_, self.residual_ = fit.eta, fit.dl, fit.residual
        return self
