"""Career chain and discipline-participation likelihoods.

The career of a runner is a three-state monotone chain (not started, in
career, finished) that starts from an implicit "not started" state before
the first year. Group ``g`` enters with probability ``lambda1[g]`` per year
and, once in career, finishes with probability ``lambda2[g]`` per year.
While in career, discipline ``p`` is observed with probability
``delta[p, g]``; outside the career nothing is observed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import xlogy

from .errors import ValidationError
from .panel import check_careers


class ModelVariant(str, Enum):
    """Which missingness processes inform the cluster allocation."""

    COMPLETE = "complete"
    NO_MISSING = "no_missing"
    ATTITUDE_ONLY = "attitude_only"
    HISTORY_ONLY = "history_only"

    @property
    def uses_history(self):
        return self in (ModelVariant.COMPLETE, ModelVariant.HISTORY_ONLY)

    @property
    def uses_attitude(self):
        return self in (ModelVariant.COMPLETE, ModelVariant.ATTITUDE_ONLY)

    @property
    def label(self):
        return _LABELS[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        if key in _ALIASES:
            return _ALIASES[key]
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(
                f"unknown variant {value!r}; expected one of {[v.value for v in cls]}"
            ) from None


_LABELS = {
    ModelVariant.COMPLETE: "Complete",
    ModelVariant.NO_MISSING: "NoMissing",
    ModelVariant.ATTITUDE_ONLY: "AttitudeOnly",
    ModelVariant.HISTORY_ONLY: "HistoryOnly",
}
_ALIASES = {
    "c": ModelVariant.COMPLETE,
    "nm": ModelVariant.NO_MISSING,
    "nomissing": ModelVariant.NO_MISSING,
    "a": ModelVariant.ATTITUDE_ONLY,
    "attitude": ModelVariant.ATTITUDE_ONLY,
    "attitudeonly": ModelVariant.ATTITUDE_ONLY,
    "h": ModelVariant.HISTORY_ONLY,
    "history": ModelVariant.HISTORY_ONLY,
    "historyonly": ModelVariant.HISTORY_ONLY,
}


@dataclass(frozen=True)
class ChainProbabilities:
    lambda1: np.ndarray  # (G,) P(0 -> 1)
    lambda2: np.ndarray  # (G,) P(1 -> 2)


@dataclass(frozen=True)
class ParticipationProbabilities:
    delta: np.ndarray  # (P, G) P(discipline observed | in career)


@dataclass(frozen=True)
class TransitionCounts:
    """Per-group sufficient statistics of the missingness processes."""

    n01: np.ndarray  # (G,)
    n00: np.ndarray
    n12: np.ndarray
    n11: np.ndarray
    obs: np.ndarray  # (P, G) observed disciplines among in-career years
    miss: np.ndarray  # (P, G)


@dataclass(frozen=True)
class BetaPosterior:
    """Beta(a, b) parameters; each array's last axis is ``(a, b)``."""

    lambda1: np.ndarray  # (G, 2)
    lambda2: np.ndarray  # (G, 2)
    delta: np.ndarray  # (P, G, 2)


@dataclass(frozen=True)
class PatternStats:
    """Per-runner counts from which every pattern likelihood is assembled."""

    chain: np.ndarray  # (Q, 4): n01, n00, n12, n11
    chain_impossible: np.ndarray  # (Q,) forbidden transitions (0->2, 1->0, 2->0, 2->1)
    obs: np.ndarray  # (Q, P)
    miss: np.ndarray  # (Q, P)
    attitude_impossible: np.ndarray  # (Q,) observations outside the career


def pattern_stats(careers, mask):
    """Count transitions and participation for every runner.

    ``careers`` is ``(Q, T)`` and ``mask`` is ``(P, Q, T)``. The implicit
    state before year 1 is "not started".
    """
    careers = np.asarray(careers)
    mask = np.asarray(mask, dtype=bool)
    if careers.ndim == 1:
        careers = careers[None]
    if mask.ndim == 2:
        mask = mask[:, None, :]
    prev = np.concatenate([np.zeros((careers.shape[0], 1), careers.dtype), careers[:, :-1]], axis=1)
    cur = careers
    n00 = ((prev == 0) & (cur == 0)).sum(1)
    n01 = ((prev == 0) & (cur == 1)).sum(1)
    n11 = ((prev == 1) & (cur == 1)).sum(1)
    n12 = ((prev == 1) & (cur == 2)).sum(1)
    n22 = ((prev == 2) & (cur == 2)).sum(1)
    bad = careers.shape[1] - (n00 + n01 + n11 + n12 + n22)
    in_career = cur == 1
    obs = (mask & in_career[None]).sum(2).T
    miss = (~mask & in_career[None]).sum(2).T
    outside = (mask & ~in_career[None]).sum((0, 2))
    return PatternStats(
        chain=np.stack([n01, n00, n12, n11], axis=1),
        chain_impossible=bad,
        obs=obs,
        miss=miss,
        attitude_impossible=outside,
    )


def pattern_loglik_matrix(stats, chain, part, variant, n_groups=None):
    """Log-probability of every runner's pattern under every group, shape ``(Q, G)``.

    ``chain`` may be ``None`` when the variant ignores history and ``part``
    may be ``None`` when it ignores attitude.
    """
    variant = ModelVariant.parse(variant)
    Q = stats.chain.shape[0]
    out = None
    if variant.uses_history:
        lam1 = np.asarray(chain.lambda1, float)[None]
        lam2 = np.asarray(chain.lambda2, float)[None]
        c = stats.chain[:, :, None]
        out = (
            xlogy(c[:, 0], lam1)
            + xlogy(c[:, 1], 1.0 - lam1)
            + xlogy(c[:, 2], lam2)
            + xlogy(c[:, 3], 1.0 - lam2)
        )
        out = np.where(stats.chain_impossible[:, None] > 0, -np.inf, out)
    if variant.uses_attitude:
        delta = np.asarray(part.delta, float)
        att = xlogy(stats.obs[:, :, None], delta[None]).sum(1) + xlogy(
            stats.miss[:, :, None], 1.0 - delta[None]
        ).sum(1)
        att = np.where(stats.attitude_impossible[:, None] > 0, -np.inf, att)
        out = att if out is None else out + att
    if out is None:
        out = np.zeros((Q, n_groups if n_groups is not None else _n_groups(chain, part)))
    return out


def _n_groups(chain, part):
    if chain is not None:
        return len(chain.lambda1)
    if part is not None:
        return part.delta.shape[1]
    return 1


def pattern_loglik(career, runner_mask, chain, part, variant):
    """Log-probability of one runner's career and participation mask under one group.

    ``chain`` holds scalar ``lambda1``/``lambda2`` and ``part`` a length-P
    ``delta`` for the group in question. Complete adds the chain and
    attitude terms, AttitudeOnly and HistoryOnly keep one of them, and
    NoMissing returns 0.
    """
    variant = ModelVariant.parse(variant)
    if variant is ModelVariant.NO_MISSING:
        return 0.0
    stats = pattern_stats(np.asarray(career)[None], np.asarray(runner_mask, bool)[:, None, :])
    ch = None
    if chain is not None:
        ch = ChainProbabilities(np.atleast_1d(chain.lambda1), np.atleast_1d(chain.lambda2))
    pa = None
    if part is not None:
        pa = ParticipationProbabilities(np.asarray(part.delta, float).reshape(-1, 1))
    return float(pattern_loglik_matrix(stats, ch, pa, variant)[0, 0])


def count_sufficient_stats(careers, mask, allocation, n_groups):
    """Aggregate :func:`pattern_stats` by group.

    Raises :class:`~careerssm.errors.ValidationError` when careers and mask
    disagree.
    """
    careers = check_careers(careers, mask)
    return aggregate_counts(pattern_stats(careers, mask), allocation, n_groups)


def aggregate_counts(stats, allocation, n_groups):
    allocation = np.asarray(allocation)
    chain = np.zeros((n_groups, 4), dtype=np.int64)
    np.add.at(chain, allocation, stats.chain)
    obs = np.zeros((n_groups, stats.obs.shape[1]), dtype=np.int64)
    miss = np.zeros_like(obs)
    np.add.at(obs, allocation, stats.obs)
    np.add.at(miss, allocation, stats.miss)
    return TransitionCounts(
        n01=chain[:, 0], n00=chain[:, 1], n12=chain[:, 2], n11=chain[:, 3],
        obs=obs.T, miss=miss.T,
    )


def update_beta_params(counts, prior=(1.0, 1.0)):
    """Conjugate Beta posteriors for ``lambda1``, ``lambda2`` and ``delta``.

    Empty groups have zero counts and fall back to the prior.
    """
    a0, b0 = prior
    return BetaPosterior(
        lambda1=np.stack([a0 + counts.n01, b0 + counts.n00], axis=-1).astype(float),
        lambda2=np.stack([a0 + counts.n12, b0 + counts.n11], axis=-1).astype(float),
        delta=np.stack([a0 + counts.obs, b0 + counts.miss], axis=-1).astype(float),
    )


def draw_missingness_params(posterior, variant, rng):
    """Sample ``(ChainProbabilities | None, ParticipationProbabilities | None)``."""
    variant = ModelVariant.parse(variant)
    chain = part = None
    if variant.uses_history:
        chain = ChainProbabilities(
            lambda1=rng.beta(posterior.lambda1[:, 0], posterior.lambda1[:, 1]),
            lambda2=rng.beta(posterior.lambda2[:, 0], posterior.lambda2[:, 1]),
        )
    if variant.uses_attitude:
        part = ParticipationProbabilities(delta=rng.beta(posterior.delta[..., 0], posterior.delta[..., 1]))
    return chain, part
