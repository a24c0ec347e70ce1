"""Predictive ensembles for new runners with known missingness patterns.

For a retained draw, a new runner joins group ``g`` with probability
proportional to ``pi[g]`` times the probability of its career/participation
pattern under ``g`` (only the parts the variant models). Given the group,
the runner's observed cells in year ``t`` are Gaussian around the group
trend with covariance ``sigma_r`` restricted to those disciplines, and years
are independent given the trend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import ValidationError
from .gibbs import _categorical
from .missingness import ModelVariant, pattern_loglik_matrix, pattern_stats
from .panel import CareerState, check_careers, derive_career_states

QUANTILE_METHOD = "linear"


@dataclass(frozen=True)
class NewRunnerPattern:
    """Observation mask ``(P, T)`` and career ``(T,)`` of a runner to predict."""

    mask: np.ndarray
    career: np.ndarray
    runner_id: str = ""

    def __post_init__(self):
        mask = np.asarray(self.mask, bool)
        if mask.ndim != 2:
            raise ValidationError("pattern mask must be (P, T)")
        career = check_careers(np.asarray(self.career)[None], mask[:, None, :])[0]
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "career", career)

    @classmethod
    def from_mask(cls, mask, runner_id=""):
        return cls(mask, derive_career_states(mask), runner_id)


@dataclass(frozen=True)
class PredictiveEnsemble:
    """``draws[i]`` holds ``B`` samples for cell ``cells[i] = (p, t)``."""

    cells: np.ndarray  # (n, 2) int
    draws: np.ndarray  # (n, B)
    runner_id: str = ""

    @property
    def B(self):
        return self.draws.shape[1]


@dataclass(frozen=True)
class PredictionBand:
    cells: np.ndarray  # (n, 2)
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    alpha: float
    runner_id: str = ""


def _single_stats(pattern):
    return pattern_stats(pattern.career[None], pattern.mask[:, None, :])


def allocation_weights(pattern, params, variant):
    """Group probabilities of a new runner given its pattern, for one draw."""
    variant = ModelVariant.parse(variant)
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(params.pi, float))
    if variant is not ModelVariant.NO_MISSING:
        logw = logw + pattern_loglik_matrix(_single_stats(pattern), params.chain, params.part, variant)[0]
    norm = logsumexp(logw)
    if not np.isfinite(norm):
        raise ValidationError("pattern has zero probability under every group")
    return np.exp(logw - norm)


def allocation_logweights_draws(pattern, draws):
    """Unnormalised log group weights for every retained draw, ``(K, G)``."""
    variant = draws.variant
    with np.errstate(divide="ignore"):
        logw = np.log(draws.pi)
    st = _single_stats(pattern)
    if variant.uses_history:
        n01, n00, n12, n11 = st.chain[0]
        logw = logw + (
            xlogy(n01, draws.lambda1) + xlogy(n00, 1 - draws.lambda1)
            + xlogy(n12, draws.lambda2) + xlogy(n11, 1 - draws.lambda2)
        )
        if st.chain_impossible[0]:
            logw = logw - np.inf
    if variant.uses_attitude:
        obs = st.obs[0][None, :, None]
        miss = st.miss[0][None, :, None]
        logw = logw + (xlogy(obs, draws.delta) + xlogy(miss, 1 - draws.delta)).sum(axis=1)
        if st.attitude_impossible[0]:
            logw = logw - np.inf
    return logw


def sample_predictive(pattern, draws, B, rng):
    """``B`` predictive samples for every observed cell of ``pattern``.

    Retained draws are cycled in order (sample ``b`` uses draw ``b mod K``).
    """
    rng = np.random.default_rng(rng)
    B = int(B)
    if B < 2:
        raise ValidationError("B must be >= 2")
    cells = np.argwhere(pattern.mask)  # (n, 2) rows (p, t)
    if cells.size == 0:
        raise ValidationError(f"runner {pattern.runner_id!r} has no cell to predict")
    K = draws.n_kept
    k = np.arange(B) % K
    logw = allocation_logweights_draws(pattern, draws)
    g = _categorical(logw[k], rng)
    years = np.unique(cells[:, 1])
    P = draws.sigma_r.shape[1]
    chol = np.linalg.cholesky(draws.sigma_r)  # (K, P, P)
    z = rng.standard_normal((B, years.size, P))
    noise = np.einsum("bij,btj->bti", chol[k], z)
    # states: (K, T, P, G) -> (B, years, P)
    alpha = draws.states[k[:, None], years[None, :], :, g[:, None]]
    y = alpha + noise
    col = np.searchsorted(years, cells[:, 1])
    out = y[:, col, cells[:, 0]].T  # (n, B)
    return PredictiveEnsemble(cells=cells, draws=out, runner_id=pattern.runner_id)


def empirical_quantiles(draws, probs):
    """Quantiles along the last axis with linear interpolation between order statistics."""
    return np.quantile(draws, probs, axis=-1, method=QUANTILE_METHOD)


def prediction_bands(ensemble, alpha=0.05):
    """Central ``1 - alpha`` band and median per cell."""
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"alpha must lie in (0, 0.5), got {alpha}")
    lo, med, hi = empirical_quantiles(ensemble.draws, [alpha / 2, 0.5, 1 - alpha / 2])
    return PredictionBand(ensemble.cells, lo, med, hi, float(alpha), ensemble.runner_id)


def scenario_pattern(n_years, disciplines, active, drop_in=0, drop_out=None, runner_id=""):
    """An idealised runner competing in every year of its career.

    ``active`` lists the discipline labels it runs; ``drop_in`` is the first
    in-career time index and ``drop_out`` the first finished index (``None``
    for a career lasting to the end of the panel).
    """
    disciplines = [str(d) for d in disciplines]
    missing = [a for a in active if str(a) not in disciplines]
    if missing:
        raise ValidationError(f"unknown disciplines {missing}")
    end = n_years if drop_out is None else drop_out
    if not 0 <= drop_in < end <= n_years:
        raise ValidationError(f"empty career for drop_in={drop_in}, drop_out={drop_out}")
    career = np.full(n_years, CareerState.IN_CAREER, dtype=np.int8)
    career[:drop_in] = CareerState.NOT_STARTED
    career[end:] = CareerState.FINISHED
    mask = np.zeros((len(disciplines), n_years), bool)
    rows = [disciplines.index(str(a)) for a in active]
    mask[np.ix_(rows, np.arange(drop_in, end))] = True
    return NewRunnerPattern(mask, career, runner_id)


def scenario_presets(disciplines, n_years, base_age=18):
    """Named idealised runners: varying drop-in and drop-out age and discipline sets.

    ``base_age`` is the age at the first time index. Ages that fall outside
    the panel are skipped.
    """
    out = {}

    def t_of(age):
        return age - base_age

    for age in (18, 22, 26, 30):
        t = t_of(age)
        if 0 <= t < n_years:
            out[f"drop_in_{age}"] = scenario_pattern(
                n_years, disciplines, ("800", "1500"), drop_in=t, runner_id=f"drop_in_{age}"
            )
    for age in (20, 24, 28):
        t = t_of(age)
        if 0 < t < n_years:
            out[f"drop_out_{age}"] = scenario_pattern(
                n_years, disciplines, ("800", "1500"), drop_out=t, runner_id=f"drop_out_{age}"
            )
    out["no_drop_out"] = scenario_pattern(n_years, disciplines, ("800", "1500"), runner_id="no_drop_out")
    for name, active in (
        ("only_1500", ("1500",)),
        ("1500_5000", ("1500", "5000")),
        ("800_1500", ("800", "1500")),
        ("all_disciplines", ("800", "1500", "5000")),
    ):
        out[name] = scenario_pattern(n_years, disciplines, active, runner_id=name)
    return out
