"""Local-level state space machinery for the group trends.

Every group ``g`` carries a ``P``-variate random walk

    alpha_{t+1} = alpha_t + xi_t,          xi_t ~ N(0, psi_r)
    ybar_t      = alpha_t + e_t,           e_t  ~ N(0, sigma_r / n_g)

where ``ybar_t`` is the mean of the (completed) series of the ``n_g`` runners
allocated to the group. Because runners are independent given the group trend,
the group mean is a sufficient statistic for the trend, which keeps smoothing
cost independent of the number of runners.

The recursions below are written over a leading batch axis so that the Gibbs
sampler can smooth all filled groups in one pass; the public single-series
functions are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class GroupSeries:
    """Collapsed series of one group.

    ``means`` has shape ``(T, P)`` and is ``None`` for an empty group.
    """

    means: np.ndarray | None
    count: int


@dataclass(frozen=True)
class FilterOutput:
    pred_mean: np.ndarray  # (T, P)   E[alpha_t | y_{1:t-1}]
    pred_cov: np.ndarray   # (T, P, P)
    filt_mean: np.ndarray  # (T, P)   E[alpha_t | y_{1:t}]
    filt_cov: np.ndarray   # (T, P, P)
    loglik: float

    @property
    def predicted(self):
        return [GaussianMoments(m, c) for m, c in zip(self.pred_mean, self.pred_cov)]

    @property
    def filtered(self):
        return [GaussianMoments(m, c) for m, c in zip(self.filt_mean, self.filt_cov)]


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def check_pd(matrix, name):
    """Cholesky factor of ``matrix``; raises :class:`NumericalError` naming it if not PD."""
    matrix = np.asarray(matrix, dtype=float)
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite") from None


def check_psd(matrix, name, tol=1e-10):
    matrix = np.asarray(matrix, dtype=float)
    if not np.allclose(matrix, matrix.T, atol=tol) or np.linalg.eigvalsh(matrix).min() < -tol:
        raise NumericalError(f"{name} is not symmetric positive semi-definite")
    return matrix


def sample_mvn(mean, cov, rng):
    """Draw from N(mean, cov) over arbitrary leading batch axes.

    Uses a clipped eigendecomposition so singular (PSD) covariances are
    accepted, which the degenerate smoothing limits rely on.
    """
    w, v = np.linalg.eigh(symmetrize(cov))
    w = np.clip(w, 0.0, None)
    z = rng.standard_normal(np.shape(mean))
    return mean + np.einsum("...ij,...j->...i", v, np.sqrt(w) * z)


def _filter_batch(y, obs_cov, state_cov, m0, c0):
    """Kalman filter for ``B`` independent local-level series.

    Parameters
    ----------
    y : (B, T, P)
    obs_cov : (B, P, P)
    state_cov : (P, P)
    m0, c0 : (B, P), (B, P, P) moments of alpha_1.
    """
    B, T, P = y.shape
    eye = np.eye(P)
    pm = np.empty((B, T, P))
    pc = np.empty((B, T, P, P))
    fm = np.empty((B, T, P))
    fc = np.empty((B, T, P, P))
    loglik = np.zeros(B)
    m, c = np.asarray(m0, float), np.asarray(c0, float)
    for t in range(T):
        pm[:, t], pc[:, t] = m, c
        s = symmetrize(c + obs_cov)
        try:
            chol = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise NumericalError(f"innovation covariance at t={t} is not positive definite") from None
        v = y[:, t] - m
        # K = C S^{-1}; S and C symmetric so S^{-1} C = K^T
        gain = np.swapaxes(np.linalg.solve(s, c), -1, -2)
        sinv_v = np.linalg.solve(s, v[..., None])[..., 0]
        loglik -= 0.5 * (
            P * _LOG_2PI
            + 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
            + np.einsum("bi,bi->b", v, sinv_v)
        )
        m = m + np.einsum("bij,bj->bi", gain, v)
        ikh = eye - gain
        c = ikh @ c @ np.swapaxes(ikh, -1, -2) + gain @ obs_cov @ np.swapaxes(gain, -1, -2)
        c = symmetrize(c)
        fm[:, t], fc[:, t] = m, c
        c = c + state_cov
    return pm, pc, fm, fc, loglik


def _backward_sample_batch(fm, fc, pc, rng):
    B, T, P = fm.shape
    x = np.empty((B, T, P))
    x[:, T - 1] = sample_mvn(fm[:, T - 1], fc[:, T - 1], rng)
    for t in range(T - 2, -1, -1):
        j = np.swapaxes(np.linalg.solve(pc[:, t + 1], fc[:, t]), -1, -2)
        mean = fm[:, t] + np.einsum("bij,bj->bi", j, x[:, t + 1] - fm[:, t])
        cov = fc[:, t] - j @ fc[:, t]
        x[:, t] = sample_mvn(mean, cov, rng)
    return x


def _smooth_batch(fm, fc, pc):
    B, T, P = fm.shape
    sm = np.empty_like(fm)
    sc = np.empty_like(fc)
    sm[:, T - 1], sc[:, T - 1] = fm[:, T - 1], fc[:, T - 1]
    for t in range(T - 2, -1, -1):
        j = np.swapaxes(np.linalg.solve(pc[:, t + 1], fc[:, t]), -1, -2)
        # predicted mean of alpha_{t+1} equals the filtered mean at t (identity transition)
        sm[:, t] = fm[:, t] + np.einsum("bij,bj->bi", j, sm[:, t + 1] - fm[:, t])
        sc[:, t] = symmetrize(fc[:, t] + j @ (sc[:, t + 1] - pc[:, t + 1]) @ np.swapaxes(j, -1, -2))
    return sm, sc


def _prior_batch(m0, c0, psi_r, T, rng):
    B, P = np.shape(m0)
    x = np.empty((B, T, P))
    x[:, 0] = sample_mvn(m0, c0, rng)
    if T > 1:
        steps = sample_mvn(np.zeros((B, T - 1, P)), np.broadcast_to(psi_r, (B, T - 1, P, P)), rng)
        x[:, 1:] = x[:, :1] + np.cumsum(steps, axis=1)
    return x


def collapse_groups(completed_values, allocation, n_groups):
    """Group-mean series of a completed ``(P, Q, T)`` panel.

    Returns one :class:`GroupSeries` per group; empty groups have count 0
    and ``means=None``.
    """
    means, counts = group_means(
        np.asarray(completed_values, dtype=float), np.asarray(allocation), n_groups
    )
    return [
        GroupSeries(means=means[g], count=int(counts[g])) if counts[g]
        else GroupSeries(means=None, count=0)
        for g in range(n_groups)
    ]


def group_means(completed_values, allocation, n_groups):
    """Array form of :func:`collapse_groups`: ``(G, T, P)`` means (NaN if empty) and counts."""
    P, Q, T = completed_values.shape
    counts = np.bincount(allocation, minlength=n_groups)
    sums = np.zeros((n_groups, P, T))
    np.add.at(sums, allocation, np.moveaxis(completed_values, 1, 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None, None]
    return np.swapaxes(means, 1, 2), counts


def _check_series(series):
    if series.count < 1 or series.means is None:
        raise ValidationError("series must come from a non-empty group (count >= 1)")
    return np.asarray(series.means, dtype=float)


def kalman_filter(series, sigma_r, psi_r, init):
    """Filter one collapsed group series.

    Returns ``(FilterOutput, loglik)`` where ``loglik`` is the
    prediction-error decomposition of ``log p(ybar_{1:T})``.
    """
    y = _check_series(series)
    check_pd(sigma_r, "sigma_r")
    check_psd(psi_r, "psi_r")
    obs_cov = np.asarray(sigma_r, float) / series.count
    pm, pc, fm, fc, ll = _filter_batch(
        y[None], obs_cov[None], np.asarray(psi_r, float), np.asarray(init.mean, float)[None],
        np.asarray(init.cov, float)[None],
    )
    out = FilterOutput(pm[0], pc[0], fm[0], fc[0], float(ll[0]))
    return out, out.loglik


def kalman_smoother(filter_output, psi_r):
    """Rauch-Tung-Striebel pass; returns the smoothed moments for t = 1..T."""
    del psi_r  # carried by the predicted covariances already
    f = filter_output
    sm, sc = _smooth_batch(f.filt_mean[None], f.filt_cov[None], f.pred_cov[None])
    return [GaussianMoments(m, c) for m, c in zip(sm[0], sc[0])]


def simulation_smoother(series, sigma_r, psi_r, init, rng):
    """One draw of ``alpha_{1:T}`` from its joint posterior, shape ``(T, P)``.

    Forward filtering, backward sampling.
    """
    rng = np.random.default_rng(rng)
    y = _check_series(series)
    check_pd(sigma_r, "sigma_r")
    check_psd(psi_r, "psi_r")
    obs_cov = np.asarray(sigma_r, float) / series.count
    _, pc, fm, fc, _ = _filter_batch(
        y[None], obs_cov[None], np.asarray(psi_r, float), np.asarray(init.mean, float)[None],
        np.asarray(init.cov, float)[None],
    )
    return _backward_sample_batch(fm, fc, pc, rng)[0]


def sample_prior_trajectory(init, psi_r, T, rng):
    """Random-walk path from the state prior, shape ``(T, P)``."""
    rng = np.random.default_rng(rng)
    check_psd(psi_r, "psi_r")
    m0 = np.asarray(init.mean, float)[None]
    c0 = np.asarray(init.cov, float)[None]
    return _prior_batch(m0, c0, np.asarray(psi_r, float), int(T), rng)[0]


def sample_group_trajectories(means, counts, sigma_r, psi_r, m0, c0, rng):
    """Draw every group's trajectory in one batched pass.

    Parameters
    ----------
    means : (G, T, P) group means (ignored where ``counts == 0``)
    counts : (G,) member counts
    m0 : (G, P), c0 : (G, P, P) initial-state moments per group

    Returns
    -------
    ndarray of shape (G, T, P)
    """
    G, T, P = means.shape
    out = np.empty((G, T, P))
    filled = counts > 0
    if filled.any():
        obs_cov = sigma_r[None] / counts[filled, None, None]
        _, pc, fm, fc, _ = _filter_batch(means[filled], obs_cov, psi_r, m0[filled], c0[filled])
        out[filled] = _backward_sample_batch(fm, fc, pc, rng)
    if (~filled).any():
        out[~filled] = _prior_batch(m0[~filled], c0[~filled], psi_r, T, rng)
    return out
