"""Estimator interface around the sampler.

:class:`LatentClassSSM` follows the scikit-learn conventions: constructor
arguments are stored untouched, ``fit`` returns ``self`` and sets the
trailing-underscore attributes, and ``get_params``/``set_params``/``clone``
work as usual.

Inputs are panels. A :class:`~careerssm.panel.PerformancePanel` is used
directly; a bare ``(P, Q, T)`` array is accepted with NaN marking missing
cells.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .clustering import co_clustering_matrix, least_squares_partition
from .errors import ValidationError
from .gibbs import ChainConfig, empirical_priors, run_chain
from .missingness import ModelVariant
from .panel import DEFAULT_DISCIPLINES, PerformancePanel, check_careers, derive_careers
from .predictive import NewRunnerPattern, prediction_bands, sample_predictive
from .scoring import crps_ensemble


def check_panel(X, disciplines=None, base_year=0):
    """Coerce ``X`` to a :class:`PerformancePanel`.

    Arrays must be three-dimensional with finite positive entries wherever
    they are not NaN.
    """
    if isinstance(X, PerformancePanel):
        return X
    values = np.asarray(X, dtype=float)
    if values.ndim != 3:
        raise ValidationError(f"expected a (P, Q, T) array, got shape {values.shape}")
    P, Q, _ = values.shape
    if disciplines is None:
        disciplines = DEFAULT_DISCIPLINES if P == len(DEFAULT_DISCIPLINES) else tuple(str(p) for p in range(P))
    mask = ~np.isnan(values)
    return PerformancePanel(
        values=values,
        mask=mask,
        disciplines=tuple(disciplines),
        runner_ids=tuple(f"q{q}" for q in range(Q)),
        base_year=base_year,
    )


def check_panel_careers(panel, careers=None):
    """Careers given explicitly are checked against the mask; otherwise derived from it."""
    if careers is None:
        return derive_careers(panel.mask)
    careers = np.asarray(careers)
    if careers.shape != (panel.n_runners, panel.n_years):
        raise ValidationError(
            f"careers shape {careers.shape} does not match panel ({panel.n_runners}, {panel.n_years})"
        )
    return check_careers(careers, panel.mask)


class LatentClassSSM(BaseEstimator):
    """Latent-class local-level model with informative missingness.

    Parameters
    ----------
    variant : {"complete", "no_missing", "attitude_only", "history_only"}
        Which parts of the missingness pattern inform group membership.
    n_components : int
        Number of mixture components ``G`` (deliberately generous; empty
        components are expected).
    n_iter, n_keep : int
        Gibbs sweeps and the number of final sweeps retained.
    random_state : int or None
    keep_imputed : bool
        Also retain the completed panel of every kept sweep.

    Attributes
    ----------
    draws_ : PosteriorDraws
    priors_ : Priors
    labels_ : (Q,) point-estimate partition of the training runners
    co_clustering_ : (Q, Q) posterior similarity matrix
    n_clusters_ : int
        Groups in ``labels_``.
    disciplines_, n_years_, base_year_
    """

    def __init__(self, variant="complete", n_components=50, n_iter=10000, n_keep=2000,
                 random_state=None, keep_imputed=False):
        self.variant = variant
        self.n_components = n_components
        self.n_iter = n_iter
        self.n_keep = n_keep
        self.random_state = random_state
        self.keep_imputed = keep_imputed

    def fit(self, X, careers=None, callback=None):
        panel = check_panel(X)
        careers = check_panel_careers(panel, careers)
        variant = ModelVariant.parse(self.variant)
        config = ChainConfig(
            n_components=self.n_components, n_iter=self.n_iter, n_keep=self.n_keep, seed=self.random_state
        )
        self.priors_ = empirical_priors(panel.values, panel.mask, config.n_components)
        self.draws_ = run_chain(
            panel.values, panel.mask, careers, variant, config, priors=self.priors_,
            keep_imputed=self.keep_imputed, callback=callback,
        )
        self.co_clustering_ = co_clustering_matrix(self.draws_.allocation)
        self.labels_ = least_squares_partition(self.draws_.allocation, self.co_clustering_)
        self.n_clusters_ = int(np.unique(self.labels_).size)
        self.disciplines_ = panel.disciplines
        self.n_years_ = panel.n_years
        self.base_year_ = panel.base_year
        self.runner_ids_ = panel.runner_ids
        return self

    @classmethod
    def from_draws(cls, draws, disciplines, base_year=0):
        """Rebuild a fitted estimator around previously saved draws."""
        meta = draws.meta
        est = cls(
            variant=draws.variant.value, n_components=draws.n_components,
            n_iter=meta.get("n_iter", draws.n_kept), n_keep=draws.n_kept, random_state=meta.get("seed"),
        )
        est.draws_ = draws
        est.co_clustering_ = co_clustering_matrix(draws.allocation)
        est.labels_ = least_squares_partition(draws.allocation, est.co_clustering_)
        est.n_clusters_ = int(np.unique(est.labels_).size)
        est.disciplines_ = tuple(disciplines)
        est.n_years_ = draws.states.shape[1]
        est.base_year_ = base_year
        return est

    def _patterns(self, X, careers):
        check_is_fitted(self, "draws_")
        panel = check_panel(X, disciplines=self.disciplines_, base_year=self.base_year_)
        if panel.shape[0] != len(self.disciplines_) or panel.n_years != self.n_years_:
            raise ValidationError(
                f"panel has {panel.shape[0]} disciplines and {panel.n_years} years; "
                f"fitted on {len(self.disciplines_)} and {self.n_years_}"
            )
        careers = check_panel_careers(panel, careers)
        patterns = [
            NewRunnerPattern(panel.mask[:, q], careers[q], panel.runner_ids[q]) for q in range(panel.n_runners)
        ]
        return panel, patterns

    def sample_predictive(self, X, careers=None, n_samples=2000, random_state=None):
        """Predictive ensembles for every observed cell of every runner in ``X``.

        Only the mask and careers of ``X`` are used; values are ignored.
        """
        _, patterns = self._patterns(X, careers)
        rng = np.random.default_rng(random_state)
        return [sample_predictive(p, self.draws_, n_samples, rng) for p in patterns]

    def predict_interval(self, X, careers=None, alpha=0.05, n_samples=2000, random_state=None):
        ens = self.sample_predictive(X, careers, n_samples, random_state)
        return [prediction_bands(e, alpha) for e in ens]

    def predict(self, X, careers=None, n_samples=2000, random_state=None):
        """Predictive medians on the observed cells of ``X`` (NaN elsewhere), shape ``(P, Q, T)``."""
        panel, _ = self._patterns(X, careers)
        out = np.full(panel.shape, np.nan)
        bands = self.predict_interval(X, careers, 0.05, n_samples, random_state)
        for q, b in enumerate(bands):
            out[b.cells[:, 0], q, b.cells[:, 1]] = b.median
        return out

    def score(self, X, careers=None, n_samples=2000, random_state=None):
        """Negative mean CRPS over the observed cells of ``X`` (higher is better)."""
        panel = check_panel(X, disciplines=self.disciplines_, base_year=self.base_year_)
        ens = self.sample_predictive(panel, careers, n_samples, random_state)
        scores = [
            crps_ensemble(e.draws, panel.values[e.cells[:, 0], q, e.cells[:, 1]]) for q, e in enumerate(ens)
        ]
        return -float(np.mean(np.concatenate(scores)))
