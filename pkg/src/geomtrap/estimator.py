"""scikit-learn wrapper: points in, slow potentials out."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fields import FieldSpec
from .reduction import SpinHalf, potential_arrays

__all__ = ["SlowModePotential", "check_points"]

FEATURES = ("v_dyn", "v_geom", "v_total")


def check_points(X):
    """Validate a point array of shape (n, 3); NaN is not allowed on input."""
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != 3:
        raise ValueError(f"expected points with 3 columns, got {X.shape[1]}")
    return X


class SlowModePotential(TransformerMixin, BaseEstimator):
    """Map positions to ``(v_dyn, v_geom, v_total)`` for a spin-1/2 in a field.

    Nothing is learned: ``fit`` only builds the fast system from the
    parameters.  Invalid points (inside wire cores, ``|B| = 0``) give NaN
    rows.

    Parameters
    ----------
    field : FieldSpec or dict
        Field description; dicts use the JSON source schema.
    mu, hbar, mass : float
        Magnetic moment and units.
    include_geom : bool
        When False the ``v_geom`` column is zero (valid points) and
        ``v_total`` equals ``v_dyn``.
    """

    def __init__(self, field=None, mu=1.0, hbar=1.0, mass=1.0, include_geom=True):
        self.field = field
        self.mu = mu
        self.hbar = hbar
        self.mass = mass
        self.include_geom = include_geom

    def fit(self, X=None, y=None):
        if self.field is None:
            raise ValueError("field must be given")
        spec = self.field if isinstance(self.field, FieldSpec) else FieldSpec.from_dict(self.field)
        self.system_ = SpinHalf(spec, mu=self.mu, hbar=self.hbar, mass=self.mass)
        if X is not None:
            self.n_features_in_ = check_points(X).shape[1]
        else:
            self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "system_")
        X = check_points(X)
        vd, vg = potential_arrays(self.system_, X)
        if not self.include_geom:
            vg = np.where(np.isfinite(vg), 0.0, vg)
        return np.column_stack([vd, vg, vd + vg])

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURES, dtype=object)
