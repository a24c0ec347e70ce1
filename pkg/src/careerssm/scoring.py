"""Ensemble scoring: CRPS, interval score and pairwise preference fractions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .predictive import empirical_quantiles


def crps_ensemble(draws, y, fair=False):
    """Empirical CRPS of an ensemble against the outcome ``y``.

    ``mean|x - y| - sum_{i,j}|x_i - x_j| / (2 B^2)`` evaluated in
    ``O(B log B)`` from the order statistics. With ``fair=True`` the pair
    term is divided by ``2 B (B - 1)`` instead.

    ``draws`` may carry leading batch axes (ensemble on the last axis), in
    which case ``y`` broadcasts against them.
    """
    x = np.sort(np.asarray(draws, float), axis=-1)
    B = x.shape[-1]
    if B < 1:
        raise ValidationError("empty ensemble")
    y = np.asarray(y, float)
    spread = np.abs(x - y[..., None]).mean(axis=-1)
    # sum_{i,j} |x_i - x_j| = 2 sum_i (2i - B - 1) x_(i), i = 1..B
    # the weights sum to zero, so centring leaves the sum unchanged and limits cancellation
    weights = 2.0 * np.arange(1, B + 1) - B - 1
    pair_sum = 2.0 * ((x - x[..., B // 2, None]) * weights).sum(axis=-1)
    if fair:
        if B < 2:
            raise ValidationError("fair CRPS needs at least two members")
        return spread - pair_sum / (2.0 * B * (B - 1))
    return spread - pair_sum / (2.0 * B * B)


def interval_score_bounds(lower, upper, y, alpha):
    """Interval score for a central ``1 - alpha`` interval ``[lower, upper]``."""
    lower, upper, y = (np.asarray(a, float) for a in (lower, upper, y))
    below = (lower - y) * (y < lower)
    above = (y - upper) * (y > upper)
    return (upper - lower) + (2.0 / alpha) * (below + above)


def interval_score(draws, y, alpha=0.05):
    """Interval score with bounds at the empirical ``alpha/2`` and ``1 - alpha/2`` quantiles."""
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"alpha must lie in (0, 0.5), got {alpha}")
    draws = np.asarray(draws, float)
    if draws.shape[-1] < 2:
        raise ValidationError("interval score needs at least two members")
    lo, hi = empirical_quantiles(draws, [alpha / 2, 1 - alpha / 2])
    return interval_score_bounds(lo, hi, y, alpha)


def pairwise_compare(scores_j, scores_jp):
    """Share of cells where model ``j`` scores strictly lower than ``j'``; ties count one half."""
    a = np.asarray(scores_j, float)
    b = np.asarray(scores_jp, float)
    if a.shape != b.shape:
        raise ValidationError(f"score vectors differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValidationError("no cells to compare")
    return float(((a < b).sum() + 0.5 * (a == b).sum()) / a.size)


@dataclass
class ScoreReport:
    """Per-cell scores for several models and the pairwise preference matrices."""

    models: list
    crps: dict  # model -> (n,)
    interval: dict  # model -> (n,)
    alpha: float
    cells: list = field(default_factory=list)  # (runner_id, discipline, year) per cell

    @property
    def n_cells(self):
        return len(next(iter(self.crps.values())))

    def matrix(self, score):
        """``M[i, j] = S(model_i, model_j)``; the diagonal is NaN."""
        table = {"crps": self.crps, "interval": self.interval}[score]
        n = len(self.models)
        out = np.full((n, n), np.nan)
        for i, a in enumerate(self.models):
            for j, b in enumerate(self.models):
                if i != j:
                    out[i, j] = pairwise_compare(table[a], table[b])
        return out

    def combined_table(self):
        """CRPS fractions above the diagonal, interval-score fractions below."""
        c, s = self.matrix("crps"), self.matrix("interval")
        n = len(self.models)
        upper = np.triu(np.ones((n, n), bool), 1)
        lower = np.tril(np.ones((n, n), bool), -1)
        return np.where(upper, c, np.where(lower, s, np.nan))

    def to_dict(self):
        return {
            "format_version": 1,
            "alpha": self.alpha,
            "models": list(self.models),
            "n_cells": self.n_cells,
            "pairwise_crps": _nan_to_none(self.matrix("crps")),
            "pairwise_interval": _nan_to_none(self.matrix("interval")),
            "mean_crps": {m: float(np.mean(v)) for m, v in self.crps.items()},
            "mean_interval": {m: float(np.mean(v)) for m, v in self.interval.items()},
        }

    def format_table(self):
        table = self.combined_table()
        width = max(12, max(len(m) for m in self.models) + 2)
        lines = [
            f"Pairwise preference S(row, column); above diagonal: CRPS, below: interval "
            f"score (alpha={self.alpha:g}); cells={self.n_cells}",
            "Model".ljust(width) + "".join(m.rjust(width) for m in self.models),
        ]
        for i, m in enumerate(self.models):
            row = "".join(
                ("--" if i == j else f"{table[i, j]:.3f}").rjust(width) for j in range(len(self.models))
            )
            lines.append(m.ljust(width) + row)
        return "\n".join(lines) + "\n"


def _nan_to_none(m):
    return [[None if np.isnan(v) else float(v) for v in row] for row in m]


def score_models(ensembles, truths, alpha=0.05, fair=False):
    """Score several models' ensembles on the same cells.

    Parameters
    ----------
    ensembles : dict model -> (n, B) array of draws
    truths : (n,) realised values
    """
    truths = np.asarray(truths, float)
    models = list(ensembles)
    if len(models) < 2:
        raise ValidationError("need ensembles from at least two models")
    crps, isc = {}, {}
    for m in models:
        d = np.asarray(ensembles[m], float)
        if d.ndim != 2 or d.shape[0] != truths.shape[0]:
            raise ValidationError(
                f"model {m!r}: ensemble shape {d.shape} does not match {truths.shape[0]} cells"
            )
        crps[m] = crps_ensemble(d, truths, fair=fair)
        isc[m] = interval_score(d, truths, alpha)
    return ScoreReport(models=models, crps=crps, interval=isc, alpha=float(alpha))
