"""Acceptance suite.

Each test checks one criterion at its stated tolerance and time budget and
records a single PASS/FAIL line, collected in the ``acceptance criteria``
section of the pytest summary. Run just this file with::

    pytest tests/test_acceptance.py -v
"""

import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import betaln
from scipy.stats import beta as beta_dist
from scipy.stats import dirichlet, invgamma, invwishart

import geweke
from careerssm import cli
from careerssm.clustering import adjusted_rand_index, least_squares_partition, match_groups
from careerssm.gibbs import (
    ChainConfig,
    initial_mean_posterior,
    pi_posterior,
    psi_r_posterior,
    run_chain,
    sigma_r_posterior,
)
from careerssm.missingness import count_sufficient_stats, update_beta_params
from careerssm.panel import split_train_test
from careerssm.predictive import NewRunnerPattern, sample_predictive
from careerssm.scoring import crps_ensemble, interval_score_bounds, pairwise_compare, score_models
from careerssm.ssm import GaussianMoments, GroupSeries, kalman_filter, kalman_smoother, sample_group_trajectories
from careerssm.synthgen import desk_config, generate, informative_config, null_config

from oracles import crps_double_sum, crps_gaussian, inverse_gamma_from_iw, joint_loglik, joint_posterior

VARIANTS = ("complete", "attitude_only", "history_only", "no_missing")


def _spd(rng, P, scale=1.0):
    a = rng.standard_normal((P, P))
    return scale * (a @ a.T + P * np.eye(P))


# 1 ---------------------------------------------------------------------------

def test_gaussian_oracle(criterion):
    shapes = [(P, T) for P in range(1, 7) for T in range(1, 13) if P * T <= 12]
    worst, elapsed, n = 0.0, 0.0, 0
    for i, (P, T) in enumerate(shapes):
        for rep in range(4):
            rng = np.random.default_rng([i, rep])
            sigma, psi, c0 = _spd(rng, P), _spd(rng, P, 0.3), _spd(rng, P, 2.0)
            m0 = rng.normal(100, 5, P)
            count = int(rng.integers(1, 5))
            y = m0 + rng.normal(0, 3, (T, P))
            t0 = time.perf_counter()
            out, ll = kalman_filter(GroupSeries(y, count), sigma, psi, GaussianMoments(m0, c0))
            smoothed = kalman_smoother(out, psi)
            elapsed += time.perf_counter() - t0
            mean, cov = joint_posterior([y], [sigma / count], psi, m0, c0)
            worst = max(worst, abs(ll - joint_loglik(y, sigma / count, psi, m0, c0)))
            for t, mom in enumerate(smoothed):
                worst = max(
                    worst,
                    np.abs(mom.mean - mean[t]).max(),
                    np.abs(mom.cov - cov[t * P:(t + 1) * P, t * P:(t + 1) * P]).max(),
                )
            n += 1
    ok = criterion(
        1, "Kalman filter/smoother vs joint Gaussian", worst <= 1e-8 and elapsed < 1.0,
        f"{n} instances over {len(shapes)} shapes, max abs error {worst:.2e} (tol 1e-8), {elapsed:.3f} s (< 1 s)",
    )
    assert ok


# 2 ---------------------------------------------------------------------------

def test_simulation_smoother_moments(criterion):
    y = np.array([[1.0], [2.5], [1.5]])
    sigma, psi, m0, c0 = 1.5 * np.eye(1), 0.7 * np.eye(1), np.array([0.0]), 2.0 * np.eye(1)
    n = 50_000
    t0 = time.perf_counter()
    draws = sample_group_trajectories(
        np.broadcast_to(y, (n, 3, 1)).copy(), np.ones(n, int), sigma, psi,
        np.broadcast_to(m0, (n, 1)), np.broadcast_to(c0, (n, 1, 1)), np.random.default_rng(11),
    )[:, :, 0]
    elapsed = time.perf_counter() - t0
    mean, cov = joint_posterior([y], [sigma], psi, m0, c0)
    z = list(np.abs(draws.mean(axis=0) - mean[:, 0]) / (draws.std(axis=0, ddof=1) / np.sqrt(n)))
    centred = draws - mean[:, 0]
    for s in range(3):
        for t in range(s, 3):
            prod = centred[:, s] * centred[:, t]
            z.append(abs(prod.mean() - cov[s, t]) / (prod.std(ddof=1) / np.sqrt(n)))
    ok = criterion(
        2, "simulation smoother moments", max(z) < 3 and elapsed < 30,
        f"{len(z)} moments, max |z| {max(z):.2f} (< 3), {elapsed:.2f} s (< 30 s)",
    )
    assert ok


# 3 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_geweke(criterion):
    t0 = time.perf_counter()
    z = geweke.geweke_z(100_000, 2024)
    elapsed = time.perf_counter() - t0
    worst = int(np.argmax(np.abs(z)))
    ok = criterion(
        3, "Geweke joint-distribution test", bool(np.all(np.abs(z) < 3)) and elapsed < 600,
        f"{len(z)} test functions over 1e5 sweeps, max |z| {abs(z[worst]):.2f} ({geweke.NAMES[worst]}), "
        f"{elapsed:.0f} s (< 600 s)",
    )
    assert ok


# 4 ---------------------------------------------------------------------------

def test_conjugate_units(criterion):
    failures = []
    rng = np.random.default_rng(0)

    # pi: Dirichlet(e + n_g)
    alloc = np.array([0] * 10 + [2] * 5)
    if not np.array_equal(pi_posterior(alloc, 3, 1 / 3), np.array([10, 0, 5]) + 1 / 3):
        failures.append("pi assembly")
    # posterior density = prior x multinomial likelihood up to one constant
    post, prior = dirichlet(pi_posterior(alloc, 3, 1 / 3)), dirichlet(np.full(3, 1 / 3))
    gaps = [
        post.logpdf(x) - prior.logpdf(x) - 10 * np.log(x[0]) - 5 * np.log(x[2])
        for x in (np.array([0.5, 0.2, 0.3]), np.array([0.7, 0.1, 0.2]), np.array([0.1, 0.3, 0.6]))
    ]
    if np.ptp(gaps) > 1e-10:
        failures.append("pi density")

    # sigma_r and psi_r: integer-count assembly and scalar inverse-gamma oracle
    P, Q, T, G = 2, 6, 4, 3
    states = rng.normal(0, 3, (T, P, G))
    allocation = rng.integers(G, size=Q)
    completed = np.transpose(states[:, :, allocation], (1, 2, 0)) + rng.normal(0, 1, (P, Q, T))
    df, scale = sigma_r_posterior(completed, allocation, states, P + 1, np.eye(P))
    want = np.eye(P) + sum(
        np.outer(completed[:, q, t] - states[t, :, allocation[q]], completed[:, q, t] - states[t, :, allocation[q]])
        for q in range(Q) for t in range(T)
    )
    if df != P + 1 + Q * T or not np.allclose(scale, want, rtol=1e-13, atol=0):
        failures.append("sigma_r assembly")
    df, scale = psi_r_posterior(states, P + 1, np.eye(P))
    want = np.eye(P) + sum(
        np.outer(states[t + 1, :, g] - states[t, :, g], states[t + 1, :, g] - states[t, :, g])
        for t in range(T - 1) for g in range(G)
    )
    if df != P + 1 + G * (T - 1) or not np.allclose(scale, want, rtol=1e-13, atol=0):
        failures.append("psi_r assembly")

    s1 = states[:, :1]
    c1 = completed[:1]
    df, scale = sigma_r_posterior(c1, allocation, s1, 2, np.eye(1))
    resid = c1[0] - s1[:, 0, allocation].T
    ig = (1 + resid.size / 2, 0.5 + (resid**2).sum() / 2)
    if not np.allclose(inverse_gamma_from_iw(df, scale[0, 0]), ig, atol=1e-10, rtol=0):
        failures.append("sigma_r scalar oracle")
    for v in (0.4, 1.3, 9.0):
        if abs(invwishart(df, scale).logpdf(v) - invgamma(ig[0], scale=ig[1]).logpdf(v)) > 1e-10:
            failures.append("sigma_r scalar density")
    df, scale = psi_r_posterior(s1, 2, np.eye(1))
    xi = np.diff(s1[:, 0], axis=0)
    ig = (1 + xi.size / 2, 0.5 + (xi**2).sum() / 2)
    if not np.allclose(inverse_gamma_from_iw(df, scale[0, 0]), ig, atol=1e-10, rtol=0):
        failures.append("psi_r scalar oracle")

    # initial-state mean: normal-normal with equal prior and likelihood spread
    a1, ybar, p0 = 93.7, 101.2, 5.5
    m, v = initial_mean_posterior(np.array([[a1]]), np.array([p0]), np.array([ybar]))
    prec = 2 / p0
    if abs(m[0, 0] - (ybar / p0 + a1 / p0) / prec) > 1e-10 or abs(v[0] - 1 / prec) > 1e-10:
        failures.append("a_hat oracle")
    m, v = initial_mean_posterior(np.array([[104.0]]), np.array([8.0]), np.array([100.0]))
    if (m[0, 0], v[0]) != (102.0, 4.0):
        failures.append("a_hat example")

    # career and participation probabilities: Beta(1 + counts)
    careers = np.array([[0, 0, 1, 1, 1, 2, 2, 2]])
    mask = np.zeros((1, 1, 8), bool)
    mask[0, 0, [2, 4]] = True
    counts = count_sufficient_stats(careers, mask, np.array([0]), 1)
    post = update_beta_params(counts)
    expected = {"lambda1": [2, 3], "lambda2": [2, 3], "delta": [3, 2]}
    got = {"lambda1": post.lambda1[0], "lambda2": post.lambda2[0], "delta": post.delta[0, 0]}
    for name, ab in expected.items():
        if got[name].tolist() != ab:
            failures.append(f"{name} counts")
        a, b = ab
        for u in (0.2, 0.5, 0.9):
            direct = (a - 1) * np.log(u) + (b - 1) * np.log1p(-u) - betaln(a, b)
            if abs(beta_dist(*got[name]).logpdf(u) - direct) > 1e-10:
                failures.append(f"{name} density")

    ok = criterion(
        4, "conjugate updates", not failures,
        "pi, sigma_r, psi_r, a_hat, lambda1, lambda2, delta exact; scalar oracles within 1e-10"
        if not failures else f"failed: {sorted(set(failures))}",
    )
    assert ok


# 5 ---------------------------------------------------------------------------

def test_scoring_oracle(criterion):
    rng = np.random.default_rng(1)
    worst = 0.0
    for B in list(range(1, 40)) + [64, 100, 150, 200]:
        for _ in range(5):
            x = rng.normal(0, rng.uniform(0.1, 50), B)
            y = rng.normal(0, 10)
            worst = max(worst, abs(crps_ensemble(x, y) - crps_double_sum(x, y)))
    reps = crps_ensemble(rng.normal(3.0, 2.0, (200, 20_000)), np.full(200, 4.1))
    z = abs(reps.mean() - crps_gaussian(3.0, 2.0, 4.1)) / (reps.std(ddof=1) / np.sqrt(reps.size))
    examples = [
        crps_ensemble([1.0, 2.0, 3.0], 2.0) - 2 / 9,
        interval_score_bounds(2.0, 3.0, 3.5, 0.05) - 21.0,
        interval_score_bounds(2.0, 3.0, 1.5, 0.05) - 21.0,
        interval_score_bounds(2.0, 3.0, 2.5, 0.05) - 1.0,
        pairwise_compare([1, 3, 2], [2, 2, 2]) - 0.5,
    ]
    anti = max(
        abs(pairwise_compare(a, b) + pairwise_compare(b, a) - 1.0)
        for a, b in (rng.integers(0, 4, (2, 25)) for _ in range(500))
    )
    ok = criterion(
        5, "scoring oracles", worst <= 1e-12 and z < 3 and max(map(abs, examples)) <= 1e-15 and anti == 0.0,
        f"sorted vs double sum {worst:.1e} (tol 1e-12), Gaussian CRPS |z| {z:.2f}, "
        f"hand examples max error {max(map(abs, examples)):.1e}, antisymmetry error {anti}",
    )
    assert ok


# 6 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_desk_recovery(criterion):
    cfg = desk_config()
    panel, careers, truth = generate(cfg)
    t0 = time.perf_counter()
    draws = run_chain(panel.values, panel.mask, careers, "complete", ChainConfig(10, 2000, 500, seed=11))
    elapsed = time.perf_counter() - t0
    ari = adjusted_rand_index(truth["allocation"], least_squares_partition(draws.allocation))

    params = truth["params"]
    covered, total = 0, 0
    matched = np.array([match_groups(truth["allocation"], a) for a in draws.allocation])  # (K, H)
    rows = np.arange(draws.n_kept)[:, None]
    samples = {
        "lambda1": (draws.lambda1[rows, matched], params["lambda1"]),
        "lambda2": (draws.lambda2[rows, matched], params["lambda2"]),
    }
    for p in range(cfg.P):
        samples[f"delta[{p}]"] = (draws.delta[rows, p, matched], params["delta"][p])
    missed = []
    for name, (s, true) in samples.items():
        lo, hi = np.quantile(s, [0.025, 0.975], axis=0)
        inside = (lo <= true) & (true <= hi)
        covered += int(inside.sum())
        total += inside.size
        missed += [f"{name}[{h}]" for h in np.flatnonzero(~inside)]
    share = covered / total
    ok = criterion(
        6, "desk recovery", ari > 0.8 and share >= 0.9 and elapsed < 900,
        f"ARI {ari:.3f} (> 0.8), true lambda/delta inside central 95% intervals {covered}/{total} = {share:.2f} "
        f"(>= 0.9){', missed ' + ','.join(missed) if missed else ''}, fit {elapsed:.0f} s (< 900 s)",
    )
    assert ok


# 7, 8 ------------------------------------------------------------------------

def _held_out_report(config, variants):
    """Fit each variant on 70% of runners and score predictions for the rest."""
    panel, careers, _ = generate(config)
    plan = split_train_test(panel, 0.3, seed=7)
    index = {r: i for i, r in enumerate(panel.runner_ids)}
    train = [index[r] for r in plan.train_ids]
    test = [index[r] for r in plan.test_ids]
    ensembles, truths = {}, None
    for v in variants:
        draws = run_chain(
            panel.values[:, train], panel.mask[:, train], careers[train], v, ChainConfig(10, 2000, 500, seed=11)
        )
        rng = np.random.default_rng(5)
        ens, obs = [], []
        for q in test:
            e = sample_predictive(NewRunnerPattern(panel.mask[:, q], careers[q]), draws, 2000, rng)
            ens.append(e.draws)
            obs.append(panel.values[e.cells[:, 0], q, e.cells[:, 1]])
        ensembles[v] = np.concatenate(ens)
        truths = np.concatenate(obs)
    return score_models(ensembles, truths)


@pytest.mark.slow
def test_model_ordering(criterion):
    t0 = time.perf_counter()
    report = _held_out_report(informative_config(), VARIANTS)
    elapsed = time.perf_counter() - t0
    c, s = report.matrix("crps"), report.matrix("interval")
    # VARIANTS is listed in the expected order, so each must beat every later one
    chain_ok = all(
        m[i, j] > 0.5 for m in (c, s) for i in range(4) for j in range(i + 1, 4)
    )
    ok = criterion(
        7, "informative ordering C > A > H > NM", c[0, 3] > 0.5 and s[0, 3] > 0.5 and chain_ok and elapsed < 2700,
        f"S1(C,NM)={c[0, 3]:.3f} S2(C,NM)={s[0, 3]:.3f}; "
        f"S1 C/A/H: {c[0, 1]:.3f} {c[1, 2]:.3f} {c[2, 3]:.3f}; S2 C/A/H: {s[0, 1]:.3f} {s[1, 2]:.3f} {s[2, 3]:.3f}; "
        f"{report.n_cells} cells, {elapsed:.0f} s (< 2700 s)",
    )
    assert ok


@pytest.mark.slow
def test_null_check(criterion):
    t0 = time.perf_counter()
    report = _held_out_report(null_config(), ("complete", "no_missing"))
    elapsed = time.perf_counter() - t0
    s1 = report.matrix("crps")[0, 1]
    ok = criterion(
        8, "null missingness gives no preference", 0.4 <= s1 <= 0.6 and elapsed < 2700,
        f"S1(C,NM)={s1:.3f} (in [0.4, 0.6]), S2(C,NM)={report.matrix('interval')[0, 1]:.3f}, "
        f"{report.n_cells} cells, {elapsed:.0f} s",
    )
    assert ok


# 9 ---------------------------------------------------------------------------

def _pipeline(root):
    data = str(root / "panel.csv")
    steps = [
        ["simulate", "--preset", "desk", "--out", str(root)],
        *[
            ["fit", "--data", data, "--variant", v, "-G", "6", "--iters", "60", "--keep", "20",
             "--seed", "3", "--split-fraction", "0.3", "--split-seed", "1", "--out", str(root)]
            for v in ("complete", "no_missing")
        ],
        *[
            ["predict", "--data", data, "--checkpoint", str(root / f"draws_{v}.ckpt"), "-B", "200",
             "--seed", "8", "--scenarios", "--out", str(root)]
            for v in ("complete", "no_missing")
        ],
        ["score", "--data", data, "--ensembles", str(root / "ensemble_complete.ens"),
         str(root / "ensemble_no_missing.ens"), "--out", str(root)],
    ]
    codes = [cli.main(argv) for argv in steps]
    return codes, {p.name: p.read_bytes() for p in sorted(Path(root).iterdir())}


def test_end_to_end_determinism(criterion, tmp_path):
    root = tmp_path / "run"
    codes_a, first = _pipeline(root)
    shutil.rmtree(root)
    codes_b, second = _pipeline(root)
    differing = sorted(k for k in first if first[k] != second.get(k)) + sorted(set(second) - set(first))
    ok = criterion(
        9, "seeded CLI pipeline byte-identical", codes_a == codes_b == [0] * 6 and not differing and len(first) > 10,
        f"exit codes {codes_a}, {len(first)} files compared, "
        + (f"differing: {differing}" if differing else "all identical"),
    )
    assert ok
