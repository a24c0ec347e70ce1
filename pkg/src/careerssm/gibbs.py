"""Gibbs sampler for the latent-class local-level model.

One sweep updates, in order,

1. the allocations ``S`` (missing cells integrated out),
2. the missing cells given ``S`` (together an exact block draw of (S, E~)),
3. the group trends ``A`` by simulation smoothing of the collapsed series,
4. the mixture weights ``pi``,
5. the career / participation probabilities kept by the variant,
6. the measurement row covariance ``sigma_r``,
7. the disturbance row covariance ``psi_r``,
8. the initial-state means ``a_hat``.

Array conventions: panel values are ``(P, Q, T)``, trends are ``(T, P, G)``
and allocations are 0-based integers of length ``Q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from scipy.stats import invwishart

from .errors import NumericalError, ValidationError
from .missingness import (
    ChainProbabilities,
    ModelVariant,
    ParticipationProbabilities,
    aggregate_counts,
    draw_missingness_params,
    pattern_loglik_matrix,
    pattern_stats,
    update_beta_params,
)
from .panel import check_careers
from .ssm import check_pd, group_means, sample_group_trajectories

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Priors:
    """Hyperparameters.

    ``a_hat_mean`` and ``p0`` are the prior mean and (diagonal) spread of the
    initial-state means; the latter is also the fixed spread of the first
    trend value around ``a_hat``.
    """

    a_hat_mean: np.ndarray  # (P,)
    p0: np.ndarray  # (P,)
    n_components: int
    dirichlet: float | None = None
    beta: tuple = (1.0, 1.0)

    @property
    def P(self):
        return len(self.a_hat_mean)

    @property
    def e(self):
        return 1.0 / self.n_components if self.dirichlet is None else self.dirichlet

    @property
    def iw_df(self):
        return self.P + 1.0

    @property
    def iw_scale(self):
        return np.eye(self.P)


def empirical_priors(values, mask, n_components):
    """Data-driven ``a_hat_mean`` and ``p0`` from observed first-year times.

    ``p0`` is twice the first-year sample variance per discipline. A
    discipline with fewer than two first-year observations falls back to
    the mean and variance over all years.
    """
    values = np.asarray(values, float)
    mask = np.asarray(mask, bool)
    P = values.shape[0]
    mean = np.empty(P)
    p0 = np.empty(P)
    for p in range(P):
        first = values[p, mask[p, :, 0], 0]
        if first.size < 2:
            logger.warning(
                "discipline %d has %d first-year observations; using all years for its prior",
                p, first.size,
            )
            first = values[p][mask[p]]
        if first.size < 2:
            raise ValidationError(f"discipline {p} has fewer than two observations")
        mean[p] = first.mean()
        p0[p] = 2.0 * first.var(ddof=1)
        if not p0[p] > 0:
            raise ValidationError(f"discipline {p} has zero first-year variance")
    return Priors(a_hat_mean=mean, p0=p0, n_components=int(n_components))


@dataclass(frozen=True)
class ModelParameters:
    sigma_r: np.ndarray  # (P, P)
    psi_r: np.ndarray  # (P, P)
    pi: np.ndarray  # (G,)
    chain: ChainProbabilities | None
    part: ParticipationProbabilities | None
    a_hat: np.ndarray  # (P, G)
    p0: np.ndarray  # (P,)

    @property
    def n_components(self):
        return len(self.pi)


@dataclass
class ChainState:
    params: ModelParameters
    states: np.ndarray  # (T, P, G)
    allocation: np.ndarray  # (Q,)
    completed: np.ndarray  # (P, Q, T); mask-0 cells hold the current imputations
    iteration: int = 0


@dataclass(frozen=True)
class ChainConfig:
    n_components: int = 50
    n_iter: int = 10000
    n_keep: int = 2000
    seed: int | None = None

    def __post_init__(self):
        if self.n_components < 1:
            raise ValidationError("n_components must be >= 1")
        if not 1 <= self.n_keep <= self.n_iter:
            raise ValidationError(f"need 1 <= n_keep <= n_iter, got {self.n_keep}, {self.n_iter}")


@dataclass
class PosteriorDraws:
    """Retained draws of a chain, stacked along a leading axis of length ``K``."""

    variant: ModelVariant
    sigma_r: np.ndarray  # (K, P, P)
    psi_r: np.ndarray  # (K, P, P)
    pi: np.ndarray  # (K, G)
    lambda1: np.ndarray | None  # (K, G)
    lambda2: np.ndarray | None  # (K, G)
    delta: np.ndarray | None  # (K, P, G)
    a_hat: np.ndarray  # (K, P, G)
    p0: np.ndarray  # (P,)
    states: np.ndarray  # (K, T, P, G)
    allocation: np.ndarray  # (K, Q)
    n_filled_trace: np.ndarray  # (n_iter,) G+ at every iteration
    imputed: np.ndarray | None = None  # (K, P, Q, T) when requested
    meta: dict = field(default_factory=dict)

    @property
    def n_kept(self):
        return self.pi.shape[0]

    @property
    def n_components(self):
        return self.pi.shape[1]

    @property
    def occupancy(self):
        """Per-draw group sizes, ``(K, G)``."""
        G = self.n_components
        return np.stack([np.bincount(a, minlength=G) for a in self.allocation])

    @property
    def n_filled(self):
        return (self.occupancy > 0).sum(axis=1)

    def params(self, k):
        chain = part = None
        if self.lambda1 is not None:
            chain = ChainProbabilities(self.lambda1[k], self.lambda2[k])
        if self.delta is not None:
            part = ParticipationProbabilities(self.delta[k])
        return ModelParameters(
            sigma_r=self.sigma_r[k], psi_r=self.psi_r[k], pi=self.pi[k], chain=chain,
            part=part, a_hat=self.a_hat[k], p0=self.p0,
        )

    def chain_state(self, k):
        completed = None if self.imputed is None else self.imputed[k]
        return ChainState(self.params(k), self.states[k], self.allocation[k], completed, k)


class SamplerData:
    """Observed data plus the per-runner summaries every sweep reuses."""

    def __init__(self, values, mask, careers):
        self.values = np.asarray(values, float)
        self.mask = np.asarray(mask, bool)
        self.careers = check_careers(careers, self.mask)
        self.stats = pattern_stats(self.careers, self.mask)
        self.cells = _pattern_cells(self.values, self.mask)

    @property
    def shape(self):
        return self.values.shape


def _pattern_cells(values, mask):
    """Group (runner, year) cells by which disciplines are observed.

    Returns a list of ``(observed_idx, missing_idx, q, t, y_obs)`` with
    ``y_obs`` of shape ``(n, len(observed_idx))``.
    """
    P = mask.shape[0]
    codes = (mask * (1 << np.arange(P))[:, None, None]).sum(axis=0)
    out = []
    for code in np.unique(codes):
        bits = (code >> np.arange(P)) & 1
        o = np.flatnonzero(bits)
        m = np.flatnonzero(bits == 0)
        q, t = np.nonzero(codes == code)
        y = values[o][:, q, t].T if o.size else np.empty((q.size, 0))
        out.append((o, m, q, t, y))
    return out


def runner_obs_loglik(runner_cells, group_states, sigma_r):
    """Observed-data log-likelihood of one runner under one group trend.

    Parameters
    ----------
    runner_cells : iterable of (p, t, value)
    group_states : (T, P) trend of the group
    sigma_r : (P, P)

    Missing disciplines are integrated out, so a year only contributes the
    marginal density of its observed coordinates.
    """
    group_states = np.asarray(group_states, float)
    sigma_r = np.asarray(sigma_r, float)
    by_year = {}
    for p, t, v in runner_cells:
        by_year.setdefault(int(t), []).append((int(p), float(v)))
    total = 0.0
    for t, items in sorted(by_year.items()):
        idx = np.array([p for p, _ in items])
        y = np.array([v for _, v in items])
        chol = check_pd(sigma_r[np.ix_(idx, idx)], f"sigma_r[{idx.tolist()}]")
        z = solve_triangular(chol, y - group_states[t, idx], lower=True)
        total += -0.5 * (idx.size * _LOG_2PI + z @ z) - np.log(np.diag(chol)).sum()
    return float(total)


def obs_loglik_matrix(data, states, sigma_r):
    """``(Q, G)`` observed-data log-likelihood of every runner under every group."""
    P, Q, T = data.shape
    G = states.shape[2]
    out = np.zeros((Q, G))
    for o, _, q, t, y in data.cells:
        if o.size == 0:
            continue
        chol = check_pd(sigma_r[np.ix_(o, o)], f"sigma_r[{o.tolist()}]")
        resid = y[:, :, None] - states[t][:, o, :]  # (n, |o|, G)
        z = solve_triangular(chol, np.moveaxis(resid, 1, 0).reshape(o.size, -1), lower=True)
        quad = (z * z).sum(axis=0).reshape(q.size, G)
        ll = -0.5 * (o.size * _LOG_2PI + quad) - np.log(np.diag(chol)).sum()
        np.add.at(out, q, ll)
    return out


def allocation_logweights(data, states, params, variant):
    """Unnormalised ``log P(S_q = g | ...)``, shape ``(Q, G)``."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    logw = log_pi[None, :] + obs_loglik_matrix(data, states, params.sigma_r)
    variant = ModelVariant.parse(variant)
    if variant is not ModelVariant.NO_MISSING:
        logw = logw + pattern_loglik_matrix(data.stats, params.chain, params.part, variant)
    return logw


def _categorical(logw, rng):
    """One categorical draw per row of ``logw`` via the inverse CDF."""
    norm = logsumexp(logw, axis=1, keepdims=True)
    if not np.isfinite(norm).all():
        q = int(np.flatnonzero(~np.isfinite(norm[:, 0]))[0])
        raise NumericalError(f"all allocation weights are zero for runner at column {q}")
    cdf = np.cumsum(np.exp(logw - norm), axis=1)
    u = rng.random(logw.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), logw.shape[1] - 1)


def sample_allocations(data, states, params, variant, rng):
    """Draw every runner's group from its full conditional (missing cells integrated out)."""
    return _categorical(allocation_logweights(data, states, params, variant), rng)


def impute_missing(data, allocation, states, sigma_r, rng):
    """Complete the panel by drawing each missing cell from its conditional Gaussian.

    Returns a ``(P, Q, T)`` array equal to the observed values where the mask
    is set.
    """
    sigma_r = np.asarray(sigma_r, float)
    completed = data.values.copy()
    for o, m, q, t, y in data.cells:
        if m.size == 0:
            continue
        alpha = states[t, :, allocation[q]]  # (n, P)
        if o.size == 0:
            chol = check_pd(sigma_r, "sigma_r")
            draw = alpha + rng.standard_normal((q.size, m.size)) @ chol.T
        else:
            s_oo = sigma_r[np.ix_(o, o)]
            s_om = sigma_r[np.ix_(o, m)]
            try:
                gain = np.linalg.solve(s_oo, s_om)  # Sigma_oo^{-1} Sigma_om
            except np.linalg.LinAlgError:
                raise NumericalError(f"sigma_r[{o.tolist()}] is singular") from None
            mean = alpha[:, m] + (y - alpha[:, o]) @ gain
            cov = sigma_r[np.ix_(m, m)] - s_om.T @ gain
            chol = check_pd(0.5 * (cov + cov.T), "conditional covariance of missing cells")
            draw = mean + rng.standard_normal((q.size, m.size)) @ chol.T
        for j, p in enumerate(m):
            completed[p, q, t] = draw[:, j]
    return completed


def sample_states(completed, allocation, params, rng):
    """Trend draw for every group; empty groups are drawn from the prior. Returns ``(T, P, G)``."""
    G = params.n_components
    means, counts = group_means(completed, allocation, G)
    P = completed.shape[0]
    m0 = params.a_hat.T
    c0 = np.broadcast_to(np.diag(params.p0), (G, P, P))
    traj = sample_group_trajectories(means, counts, params.sigma_r, params.psi_r, m0, c0, rng)
    return np.transpose(traj, (1, 2, 0))


def pi_posterior(allocation, n_components, e):
    return e + np.bincount(allocation, minlength=n_components).astype(float)


def update_pi(allocation, n_components, rng, e=None):
    """Dirichlet draw of the mixture weights; ``e`` defaults to ``1 / n_components``."""
    e = 1.0 / n_components if e is None else e
    return rng.dirichlet(pi_posterior(allocation, n_components, e))


def sigma_r_posterior(completed, allocation, states, prior_df, prior_scale):
    """Inverse-Wishart ``(df, scale)`` for ``sigma_r`` given completed data."""
    P, Q, T = completed.shape
    alpha = np.transpose(states[:, :, allocation], (1, 2, 0))  # (P, Q, T)
    resid = (completed - alpha).reshape(P, Q * T)
    return prior_df + Q * T, prior_scale + resid @ resid.T


def psi_r_posterior(states, prior_df, prior_scale):
    """Inverse-Wishart ``(df, scale)`` for ``psi_r``, summing over every component."""
    T, P, G = states.shape
    xi = np.diff(states, axis=0)
    return prior_df + G * (T - 1), prior_scale + np.einsum("tpg,tqg->pq", xi, xi)


def initial_mean_posterior(states_at_1, p0, ybar1):
    """Normal posterior ``(mean (P, G), var (P,))`` of the initial-state means."""
    states_at_1 = np.asarray(states_at_1, float)
    ybar1 = np.asarray(ybar1, float)
    return 0.5 * (ybar1[:, None] + states_at_1), 0.5 * np.asarray(p0, float)


def draw_inverse_wishart(df, scale, rng):
    P = np.shape(scale)[0]
    draw = np.asarray(invwishart.rvs(df=df, scale=scale, random_state=rng), float).reshape(P, P)
    return 0.5 * (draw + draw.T)


def update_sigma_r(completed, allocation, states, rng, prior_df=None, prior_scale=None):
    P = completed.shape[0]
    df, scale = sigma_r_posterior(
        completed, allocation, states,
        P + 1.0 if prior_df is None else prior_df,
        np.eye(P) if prior_scale is None else prior_scale,
    )
    return draw_inverse_wishart(df, scale, rng)


def update_psi_r(states, rng, prior_df=None, prior_scale=None):
    P = states.shape[1]
    df, scale = psi_r_posterior(
        states, P + 1.0 if prior_df is None else prior_df,
        np.eye(P) if prior_scale is None else prior_scale,
    )
    return draw_inverse_wishart(df, scale, rng)


def update_initial_mean(states_at_1, p0, ybar1, rng):
    mean, var = initial_mean_posterior(states_at_1, p0, ybar1)
    return mean + np.sqrt(var)[:, None] * rng.standard_normal(mean.shape)


def initial_state(data, priors, variant, rng):
    """Diffuse start: random allocation, prior-scale covariances, prior-mean probabilities."""
    variant = ModelVariant.parse(variant)
    P, Q, T = data.shape
    G = priors.n_components
    a_hat = np.repeat(np.asarray(priors.a_hat_mean, float)[:, None], G, axis=1)
    chain = part = None
    if variant.uses_history:
        chain = ChainProbabilities(np.full(G, 0.5), np.full(G, 0.5))
    if variant.uses_attitude:
        part = ParticipationProbabilities(np.full((P, G), 0.5))
    params = ModelParameters(
        sigma_r=np.eye(P), psi_r=np.eye(P), pi=np.full(G, 1.0 / G), chain=chain, part=part,
        a_hat=a_hat, p0=np.asarray(priors.p0, float),
    )
    return ChainState(
        params=params,
        states=np.repeat(a_hat[None], T, axis=0),
        allocation=rng.integers(G, size=Q),
        completed=data.values.copy(),
        iteration=0,
    )


def gibbs_sweep(state, data, variant, priors, rng):
    """One full sweep; returns a new :class:`ChainState`."""
    variant = ModelVariant.parse(variant)
    params = state.params
    G = priors.n_components
    step = "sample_allocations"
    try:
        allocation = sample_allocations(data, state.states, params, variant, rng)
        step = "impute_missing"
        completed = impute_missing(data, allocation, state.states, params.sigma_r, rng)
        step = "sample_states"
        states = sample_states(completed, allocation, params, rng)
        step = "update_pi"
        pi = update_pi(allocation, G, rng, priors.e)
        step = "update_beta_params"
        chain = part = None
        if variant is not ModelVariant.NO_MISSING:
            counts = aggregate_counts(data.stats, allocation, G)
            chain, part = draw_missingness_params(
                update_beta_params(counts, priors.beta), variant, rng
            )
        step = "update_sigma_r"
        sigma_r = update_sigma_r(completed, allocation, states, rng, priors.iw_df, priors.iw_scale)
        step = "update_psi_r"
        psi_r = update_psi_r(states, rng, priors.iw_df, priors.iw_scale)
        step = "update_initial_mean"
        a_hat = update_initial_mean(states[0], params.p0, priors.a_hat_mean, rng)
    except NumericalError as exc:
        exc.step = exc.step or step
        exc.iteration = state.iteration + 1
        raise
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc), step=step, iteration=state.iteration + 1) from exc
    new_params = replace(
        params, sigma_r=sigma_r, psi_r=psi_r, pi=pi, chain=chain, part=part, a_hat=a_hat
    )
    return ChainState(new_params, states, allocation, completed, state.iteration + 1)


def run_chain(values, mask, careers, variant, config, priors=None, rng=None,
              keep_imputed=False, callback=None):
    """Run the sampler and keep the last ``config.n_keep`` draws.

    Parameters
    ----------
    values, mask : (P, Q, T) arrays of the training panel
    careers : (Q, T) career states
    variant : ModelVariant or str
    config : ChainConfig
    priors : Priors, optional
        Defaults to :func:`empirical_priors` on the data.
    rng : numpy Generator, optional
        Defaults to ``np.random.default_rng(config.seed)``.
    callback : callable(ChainState), optional
        Called after every sweep.
    """
    variant = ModelVariant.parse(variant)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    data = SamplerData(values, mask, careers)
    if priors is None:
        priors = empirical_priors(data.values, data.mask, config.n_components)
    G = priors.n_components
    P, Q, T = data.shape
    K = config.n_keep
    first_kept = config.n_iter - K

    keep = {
        "sigma_r": np.empty((K, P, P)), "psi_r": np.empty((K, P, P)), "pi": np.empty((K, G)),
        "a_hat": np.empty((K, P, G)), "states": np.empty((K, T, P, G)),
        "allocation": np.empty((K, Q), dtype=np.int32),
    }
    lam1 = np.empty((K, G)) if variant.uses_history else None
    lam2 = np.empty((K, G)) if variant.uses_history else None
    delta = np.empty((K, P, G)) if variant.uses_attitude else None
    imputed = np.empty((K, P, Q, T)) if keep_imputed else None
    trace = np.empty(config.n_iter, dtype=np.int32)

    state = initial_state(data, priors, variant, rng)
    report_every = max(1, config.n_iter // 10)
    for it in range(config.n_iter):
        state = gibbs_sweep(state, data, variant, priors, rng)
        trace[it] = np.unique(state.allocation).size
        if it >= first_kept:
            k = it - first_kept
            p = state.params
            keep["sigma_r"][k] = p.sigma_r
            keep["psi_r"][k] = p.psi_r
            keep["pi"][k] = p.pi
            keep["a_hat"][k] = p.a_hat
            keep["states"][k] = state.states
            keep["allocation"][k] = state.allocation
            if lam1 is not None:
                lam1[k] = p.chain.lambda1
                lam2[k] = p.chain.lambda2
            if delta is not None:
                delta[k] = p.part.delta
            if imputed is not None:
                imputed[k] = state.completed
        if callback is not None:
            callback(state)
        if (it + 1) % report_every == 0:
            logger.info("iteration %d/%d  G+=%d", it + 1, config.n_iter, trace[it])

    return PosteriorDraws(
        variant=variant, lambda1=lam1, lambda2=lam2, delta=delta, p0=np.asarray(priors.p0, float),
        n_filled_trace=trace, imputed=imputed,
        meta={
            "n_components": G, "n_iter": config.n_iter, "n_keep": K, "seed": config.seed,
            "a_hat_mean": np.asarray(priors.a_hat_mean, float).tolist(),
        },
        **keep,
    )
