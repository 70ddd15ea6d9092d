"""TargetedFactorModel - main public interface."""

import numpy as np

from targeted_factors._internals.methods import MethodFit, MethodOptions, fit_method, parse_method
from targeted_factors._internals.model import Scaler, standardize


class TargetedFactorModel:
    """
    Fit-and-predict wrapper over every estimator, working on the raw data scale.

    Usage:
        model = TargetedFactorModel(k=2, method="ptfa", seed=0)
        model.fit(raw_X, raw_Y)
        Y_hat = model.predict(raw_X_new)

    Missing entries (NaN) are allowed; "ptfa" then imputes them inside the EM loop.
    """

    def __init__(
        self,
        k: int,
        method: str = "ptfa",
        *,
        seed: int | None = None,
        tolerance: float = 1e-6,
        max_iter: int = 1000,
        lambda_x: float = 0.94,
        lambda_y: float = 0.94,
    ):
        """
        Args:
            k: Number of latent factors.
            method: Any name accepted by the method registry (ptfa, ptfa-sv, pls, ...).
            seed: Seed for the loading initialization.
            tolerance: EM stopping tolerance on the parameter change.
            max_iter: EM iteration cap.
            lambda_x: EWMA decay for the feature noise (ptfa-sv only).
            lambda_y: EWMA decay for the target noise (ptfa-sv only).
        """
        self.k = k
        self.method = parse_method(method)
        self.seed = seed
        self.options = MethodOptions(tolerance=tolerance, max_iter=max_iter, lambda_x=lambda_x, lambda_y=lambda_y)
        self._fit: MethodFit | None = None
        self._scaler: Scaler | None = None

    def fit(self, raw_X, raw_Y) -> "TargetedFactorModel":
        """Standardize the raw panel and fit the configured method."""
        panel = standardize(raw_X, raw_Y, missing_policy="zero_impute")
        self._fit = fit_method(self.method, panel, self.k, seed=self.seed, options=self.options)
        self._scaler = panel.scaler
        return self

    def _require_fit(self) -> MethodFit:
        if self._fit is None:
            raise RuntimeError("TargetedFactorModel not fitted. Call fit() first.")
        return self._fit

    def fitted(self) -> np.ndarray:
        """In-sample fitted targets on the raw scale."""
        return self._scaler.inverse_y(self._require_fit().fitted)

    def predict(self, raw_X_new) -> np.ndarray:
        """Target predictions on the raw scale; missing features are set to their training mean."""
        model = self._require_fit()
        X_new = self._scaler.transform_x(np.atleast_2d(np.asarray(raw_X_new, dtype=float)))
        X_new = np.where(np.isnan(X_new), 0.0, X_new)
        return self._scaler.inverse_y(model.predict(X_new))

    @property
    def converged(self) -> bool:
        return self._require_fit().converged

    @property
    def scaler(self) -> Scaler | None:
        """Training-sample standardization (for advanced use)."""
        return self._scaler
