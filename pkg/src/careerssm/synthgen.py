"""Forward simulation of panels from the full generative model.

Presets
-------
``desk``
    60 runners, 12 years, three well separated groups with group-dependent
    career and participation probabilities (recovery benchmark).
``informative``
    200 runners, four groups built as a 2x2 design: two participation
    profiles crossed with two career profiles. Participation separates the
    trends more strongly than careers do.
``null``
    Same trends as ``informative`` but career and participation
    probabilities shared by all groups.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .panel import DEFAULT_DISCIPLINES, CareerState, PerformancePanel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorConfig:
    """Generating parameters for :func:`generate`.

    ``a_hat`` holds the starting trend of every group (``(P, G)``) and
    ``init_spread`` an optional per-discipline variance around it.
    """

    n_runners: int
    n_years: int
    pi: tuple
    lambda1: tuple
    lambda2: tuple
    delta: tuple  # P rows of G entries
    a_hat: tuple  # P rows of G entries
    sigma_r: tuple  # P x P
    psi_r: tuple  # P x P
    init_spread: tuple | None = None
    disciplines: tuple = DEFAULT_DISCIPLINES
    base_year: int = 2006
    min_obs: int = 2
    max_rounds: int = 200
    seed: int = 0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        P, G = self.P, self.G
        shapes = {
            "lambda1": (np.shape(self.lambda1), (G,)),
            "lambda2": (np.shape(self.lambda2), (G,)),
            "delta": (np.shape(self.delta), (P, G)),
            "a_hat": (np.shape(self.a_hat), (P, G)),
            "sigma_r": (np.shape(self.sigma_r), (P, P)),
            "psi_r": (np.shape(self.psi_r), (P, P)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValidationError(f"{name} has shape {got}, expected {want}")
        if self.n_runners < 1 or self.n_years < 2:
            raise ValidationError("need n_runners >= 1 and n_years >= 2")
        pi = np.asarray(self.pi, float)
        if (pi < 0).any() or not np.isclose(pi.sum(), 1.0):
            raise ValidationError("pi must be a probability vector")
        for name in ("lambda1", "lambda2", "delta"):
            arr = np.asarray(getattr(self, name), float)
            if ((arr < 0) | (arr > 1)).any():
                raise ValidationError(f"{name} entries must lie in [0, 1]")
        for name in ("sigma_r", "psi_r"):
            arr = np.asarray(getattr(self, name), float)
            if not np.allclose(arr, arr.T) or np.linalg.eigvalsh(arr).min() < 0:
                raise ValidationError(f"{name} must be symmetric PSD")

    @property
    def P(self):
        return len(self.disciplines)

    @property
    def G(self):
        return len(self.pi)


def _cov(sd, corr):
    sd = np.asarray(sd, float)
    c = np.full((sd.size, sd.size), corr)
    np.fill_diagonal(c, 1.0)
    return tuple(map(tuple, np.outer(sd, sd) * c))


def _cols(*columns):
    """Build a P x G nested tuple from G per-group P-vectors."""
    return tuple(map(tuple, np.array(columns, float).T))


_BASE = np.array([115.0, 240.0, 870.0])
_SIGMA = _cov([1.5, 3.0, 12.0], 0.5)
_PSI = _cov([0.4, 0.8, 3.0], 0.5)


def desk_config(seed=20240607, **overrides):
    cfg = GeneratorConfig(
        n_runners=60,
        n_years=12,
        pi=(0.4, 0.35, 0.25),
        lambda1=(0.6, 0.35, 0.2),
        lambda2=(0.08, 0.2, 0.35),
        delta=_cols([0.7, 0.8, 0.3], [0.4, 0.8, 0.5], [0.2, 0.6, 0.8]),
        a_hat=_cols(_BASE - [3, 6, 20], _BASE + [3, 6, 10], _BASE + [9, 18, 40]),
        sigma_r=_SIGMA,
        psi_r=_PSI,
        seed=seed,
        name="desk",
    )
    return replace(cfg, **overrides) if overrides else cfg


_ATT_A = [0.85, 0.7, 0.08]
_ATT_B = [0.08, 0.7, 0.85]
_HIST_1 = (0.55, 0.06)
_HIST_2 = (0.15, 0.35)
_ATT_SHIFT = np.array([8.0, 14.0, 45.0])
_HIST_SHIFT = np.array([4.0, 8.0, 24.0])


def informative_config(seed=20240611, **overrides):
    hist = [_HIST_1, _HIST_2, _HIST_1, _HIST_2]
    cfg = GeneratorConfig(
        n_runners=200,
        n_years=12,
        pi=(0.25, 0.25, 0.25, 0.25),
        lambda1=tuple(h[0] for h in hist),
        lambda2=tuple(h[1] for h in hist),
        delta=_cols(_ATT_A, _ATT_A, _ATT_B, _ATT_B),
        a_hat=_cols(
            _BASE, _BASE + _HIST_SHIFT, _BASE + _ATT_SHIFT, _BASE + _ATT_SHIFT + _HIST_SHIFT
        ),
        sigma_r=_SIGMA,
        psi_r=_PSI,
        seed=seed,
        name="informative",
    )
    return replace(cfg, **overrides) if overrides else cfg


def null_config(seed=20240613, **overrides):
    base = informative_config(seed=seed)
    G = base.G
    cfg = replace(
        base,
        lambda1=(0.35,) * G,
        lambda2=(0.15,) * G,
        delta=_cols(*([[0.5, 0.7, 0.5]] * G)),
        name="null",
    )
    return replace(cfg, **overrides) if overrides else cfg


PRESETS = {"desk": desk_config, "informative": informative_config, "null": null_config}


def _mvn(rng, cov, size):
    """Zero-mean normal draws; PSD (singular) covariances fall back to an eigen factor."""
    cov = np.asarray(cov, float)
    P = cov.shape[0]
    try:
        np.linalg.cholesky(cov)
        method = "cholesky"
    except np.linalg.LinAlgError:
        method = "eigh"
    return rng.multivariate_normal(np.zeros(P), cov, size=size, method=method)


def simulate_runners(n, pi, lambda1, lambda2, delta, states, sigma_r, rng):
    """Draw ``n`` runners given parameters and group trends.

    Parameters
    ----------
    states : (T, P, G) group trends

    Returns
    -------
    allocation : (n,)
    careers : (n, T)
    mask : (P, n, T) bool
    full_values : (P, n, T) values for every cell, observed or not
    """
    T, P, G = states.shape
    lambda1 = np.asarray(lambda1, float)
    lambda2 = np.asarray(lambda2, float)
    delta = np.asarray(delta, float)
    allocation = rng.choice(G, size=n, p=np.asarray(pi, float))
    careers = np.zeros((n, T), dtype=np.int8)
    cur = np.zeros(n, dtype=np.int8)
    for t in range(T):
        u = rng.random(n)
        enter = (cur == CareerState.NOT_STARTED) & (u < lambda1[allocation])
        leave = (cur == CareerState.IN_CAREER) & (u < lambda2[allocation])
        cur = cur + enter + leave
        careers[:, t] = cur
    in_career = careers == CareerState.IN_CAREER
    mask = (rng.random((P, n, T)) < delta[:, allocation][:, :, None]) & in_career[None]
    alpha = np.transpose(states[:, :, allocation], (1, 2, 0))  # (P, n, T)
    noise = _mvn(rng, sigma_r, (n, T))
    full_values = alpha + np.transpose(noise, (2, 0, 1))
    return allocation, careers, mask, full_values


def simulate_trends(a_hat, init_spread, psi_r, T, rng):
    """Group random walks started at ``a_hat`` (``(P, G)``); returns ``(T, P, G)``."""
    a_hat = np.asarray(a_hat, float)
    P, G = a_hat.shape
    start = a_hat.T.copy()
    if init_spread is not None:
        start = start + rng.standard_normal((G, P)) * np.sqrt(np.asarray(init_spread, float))
    steps = _mvn(rng, psi_r, (T - 1, G))
    path = np.concatenate([start[None], start[None] + np.cumsum(steps, axis=0)], axis=0)  # (T, G, P)
    return np.transpose(path, (0, 2, 1))


def generate(config, rng=None):
    """Simulate a panel.

    Runners with fewer than ``config.min_obs`` observations are redrawn in
    full (group included), in rounds, until every runner qualifies.

    Returns
    -------
    panel : PerformancePanel
    careers : (Q, T) generated career states
    truth : dict with ``allocation``, ``states`` (T, P, G), ``params`` and
        ``regenerated`` (number of redraws)
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    Q, T = config.n_runners, config.n_years
    states = simulate_trends(config.a_hat, config.init_spread, config.psi_r, T, rng)
    args = (config.pi, config.lambda1, config.lambda2, config.delta, states, config.sigma_r)

    allocation, careers, mask, full = simulate_runners(Q, *args, rng=rng)
    pending = np.flatnonzero(mask.sum(axis=(0, 2)) < config.min_obs)
    regenerated = 0
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > config.max_rounds:
            raise ValidationError(
                f"config {config.name!r} is infeasible: {pending.size} runners still have fewer "
                f"than {config.min_obs} observations after {config.max_rounds} redraw rounds"
            )
        regenerated += pending.size
        a, c, m, v = simulate_runners(pending.size, *args, rng=rng)
        allocation[pending], careers[pending], mask[:, pending], full[:, pending] = a, c, m, v
        pending = pending[m.sum(axis=(0, 2)) < config.min_obs]
    if regenerated:
        logger.info("regenerated %d runners failing min_obs=%d", regenerated, config.min_obs)
    if (full[mask] <= 0).any():
        raise ValidationError("generated a non-positive time; check a_hat and sigma_r scales")

    width = len(str(Q))
    panel = PerformancePanel(
        values=np.where(mask, full, np.nan),
        mask=mask,
        disciplines=config.disciplines,
        runner_ids=tuple(f"r{q + 1:0{width}d}" for q in range(Q)),
        base_year=config.base_year,
    )
    truth = {
        "allocation": allocation,
        "states": states,
        "full_values": full,
        "regenerated": regenerated,
        "params": {
            "pi": np.asarray(config.pi, float),
            "lambda1": np.asarray(config.lambda1, float),
            "lambda2": np.asarray(config.lambda2, float),
            "delta": np.asarray(config.delta, float),
            "sigma_r": np.asarray(config.sigma_r, float),
            "psi_r": np.asarray(config.psi_r, float),
            "a_hat": np.asarray(config.a_hat, float),
        },
    }
    return panel, careers, truth


def summarize(panel, careers=None):
    """Exploratory summary of a panel.

    Career length is ``last observed year - first observed year + 1``.
    ``in_career_share[t]`` is the fraction of runners whose career state is
    "in career" at year ``t``; careers are derived from the mask unless given.
    """
    from .panel import derive_careers

    mask = panel.mask
    active = mask.any(axis=0)  # (Q, T)
    first = active.argmax(axis=1)
    last = active.shape[1] - 1 - active[:, ::-1].argmax(axis=1)
    length = last - first + 1
    if careers is None:
        careers = derive_careers(mask)
    hist = np.bincount(length, minlength=panel.n_years + 1)[1:]
    return {
        "n_runners": panel.n_runners,
        "n_years": panel.n_years,
        "n_observed": int(mask.sum()),
        "n_cells": int(mask.size),
        "career_length": length,
        "career_length_hist": {int(k + 1): int(v) for k, v in enumerate(hist)},
        "mean_career_length": float(length.mean()),
        "in_career_share": (np.asarray(careers) == CareerState.IN_CAREER).mean(axis=0),
        "observations_per_discipline": dict(zip(panel.disciplines, mask.sum(axis=(1, 2)).tolist())),
    }
