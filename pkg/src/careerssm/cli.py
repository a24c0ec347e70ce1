"""Command-line entry point: ``careerssm simulate | fit | predict | score``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure inside the sampler, 3 file-system errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import load_config, resolve_config
from .errors import NumericalError, ValidationError
from .estimator import LatentClassSSM
from .io import (
    FORMAT_VERSION,
    load_draws,
    load_ensembles,
    read_panel_csv,
    save_draws,
    save_ensembles,
    write_bands_csv,
    write_json,
    write_panel_csv,
)
from .missingness import ModelVariant
from .panel import derive_careers, split_train_test
from .predictive import prediction_bands, sample_predictive, scenario_presets
from .scoring import score_models
from .synthgen import PRESETS, generate

logger = logging.getLogger("careerssm")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out, name, cfg):
    (out / name).write_text(cfg.dump())


def _require(cfg, key):
    if getattr(cfg, key) is None:
        raise ValidationError(f"missing required setting {key!r}")
    return getattr(cfg, key)


def cmd_simulate(cfg):
    if cfg.preset not in PRESETS:
        raise ValidationError(f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
    gen = PRESETS[cfg.preset]() if cfg.seed is None else PRESETS[cfg.preset](seed=cfg.seed)
    overrides = {"min_obs": cfg.min_obs}
    if cfg.n_runners is not None:
        overrides["n_runners"] = cfg.n_runners
    gen = replace(gen, **overrides)
    panel, careers, truth = generate(gen)
    out = _out_dir(cfg)
    write_panel_csv(out / "panel.csv", panel)
    write_json(
        out / "truth.json",
        {
            "format_version": FORMAT_VERSION,
            "preset": gen.name,
            "seed": gen.seed,
            "disciplines": list(panel.disciplines),
            "base_year": panel.base_year,
            "runner_ids": list(panel.runner_ids),
            "allocation": truth["allocation"],
            "careers": careers,
            "states": truth["states"],
            "params": truth["params"],
            "regenerated": truth["regenerated"],
        },
    )
    _snapshot(out, "simulate.cfg", replace(cfg, seed=gen.seed))
    print(f"simulated {panel.n_runners} runners x {panel.n_years} years ({int(panel.mask.sum())} observed cells) -> {out}")
    return EXIT_OK


def _read_data(cfg, disciplines=None, min_obs=None):
    return read_panel_csv(
        _require(cfg, "data"),
        min_obs=cfg.min_obs if min_obs is None else min_obs,
        disciplines=tuple(disciplines) if disciplines is not None else cfg.discipline_list,
    )


def cmd_fit(cfg):
    panel = _read_data(cfg)
    variant = ModelVariant.parse(cfg.variant)
    if cfg.split_fraction > 0:
        plan = split_train_test(panel, cfg.split_fraction, cfg.split_seed)
        train_ids, test_ids = list(plan.train_ids), list(plan.test_ids)
    else:
        train_ids, test_ids = list(panel.runner_ids), []
    train = panel.subset(train_ids)
    seed = 0 if cfg.seed is None else cfg.seed
    est = LatentClassSSM(
        variant=variant.value, n_components=cfg.n_components, n_iter=cfg.n_iter, n_keep=cfg.n_keep,
        random_state=seed,
    )
    est.fit(train, derive_careers(train.mask))
    out = _out_dir(cfg)
    save_draws(
        out / f"draws_{variant.value}.ckpt",
        est.draws_,
        disciplines=list(panel.disciplines),
        base_year=panel.base_year,
        n_years=panel.n_years,
        min_obs=cfg.min_obs,
        split_fraction=cfg.split_fraction,
        split_seed=cfg.split_seed,
        train_ids=train_ids,
        test_ids=test_ids,
    )
    trace = est.draws_.n_filled_trace
    lines = [f"# format-version: {FORMAT_VERSION}", f"# n_components: {cfg.n_components}", "iteration,g_plus"]
    lines += [f"{i + 1},{int(g)}" for i, g in enumerate(trace)]
    (out / f"fitlog_{variant.value}.csv").write_text("\n".join(lines) + "\n")
    _snapshot(out, f"fit_{variant.value}.cfg", replace(cfg, seed=seed))
    kept = est.draws_.n_filled
    print(
        f"{variant.label}: {len(train_ids)} training runners, {len(test_ids)} held out; "
        f"G+ over kept draws: median {int(np.median(kept))}, range {kept.min()}-{kept.max()}"
    )
    return EXIT_OK


def cmd_predict(cfg):
    draws, meta = load_draws(_require(cfg, "checkpoint"))
    variant = draws.variant
    test_ids = meta.get("test_ids", [])
    if not test_ids:
        raise ValidationError("empty test set: the checkpoint was fitted without held-out runners")
    panel = _read_data(cfg, disciplines=meta["disciplines"], min_obs=meta["min_obs"])
    missing = sorted(set(test_ids) - set(panel.runner_ids))
    if missing:
        raise ValidationError(f"{len(missing)} held-out runners absent from the data, e.g. {missing[0]!r}")
    if panel.n_years != meta["n_years"] or panel.base_year != meta["base_year"]:
        raise ValidationError("data years do not match the checkpoint")
    test = panel.subset(test_ids)
    seed = 0 if cfg.seed is None else cfg.seed
    est = LatentClassSSM.from_draws(draws, panel.disciplines, panel.base_year)
    ensembles = est.sample_predictive(test, derive_careers(test.mask), cfg.n_samples, seed)
    out = _out_dir(cfg)
    bands = [prediction_bands(e, cfg.alpha) for e in ensembles]
    write_bands_csv(out / f"bands_{variant.value}.csv", bands, panel.disciplines, panel.base_year)
    save_ensembles(
        out / f"ensemble_{variant.value}.ens",
        ensembles,
        test.runner_ids,
        variant=variant.value,
        disciplines=list(panel.disciplines),
        base_year=panel.base_year,
        n_samples=cfg.n_samples,
        seed=seed,
    )
    if cfg.scenarios:
        rng = np.random.default_rng([seed, 1])
        patterns = scenario_presets(panel.disciplines, panel.n_years, cfg.base_age)
        sc_bands = [prediction_bands(sample_predictive(p, draws, cfg.n_samples, rng), cfg.alpha) for p in patterns.values()]
        write_bands_csv(out / f"scenarios_{variant.value}.csv", sc_bands, panel.disciplines, panel.base_year)
    _snapshot(out, f"predict_{variant.value}.cfg", replace(cfg, seed=seed))
    n_cells = sum(len(e.cells) for e in ensembles)
    print(f"{variant.label}: {n_cells} cells for {len(test_ids)} runners, B={cfg.n_samples} -> {out}")
    return EXIT_OK


def _cell_keys(arrays, meta):
    ids = meta["runner_ids"]
    return [
        (ids[r], int(p), int(t)) for r, p, t in zip(arrays["runner"], arrays["discipline"], arrays["year_index"])
    ]


def cmd_score(cfg):
    paths = cfg.ensemble_list
    if len(paths) < 2:
        raise ValidationError("score needs ensembles from at least two variants")
    loaded = [load_ensembles(p) for p in paths]
    keys = _cell_keys(*loaded[0])
    names = []
    for path, (arrays, meta) in zip(paths, loaded):
        if _cell_keys(arrays, meta) != keys:
            raise ValidationError(f"{path}: cell set differs from {paths[0]}")
        name = ModelVariant.parse(meta["variant"]).label
        if name in names:
            name = f"{name}#{len(names)}"
        names.append(name)
    meta0 = loaded[0][1]
    panel = _read_data(cfg, disciplines=meta0["disciplines"], min_obs=1)
    index = {r: q for q, r in enumerate(panel.runner_ids)}
    truths = np.empty(len(keys))
    for i, (rid, p, t) in enumerate(keys):
        if rid not in index or not panel.mask[p, index[rid], t]:
            raise ValidationError(f"no observed value for runner {rid!r}, discipline {panel.disciplines[p]}, year index {t}")
        truths[i] = panel.values[p, index[rid], t]
    report = score_models({n: a["draws"] for n, (a, _) in zip(names, loaded)}, truths, alpha=cfg.alpha)
    out = _out_dir(cfg)
    write_json(out / "scores.json", report.to_dict())
    (out / "scores.txt").write_text(f"# format-version: {FORMAT_VERSION}\n" + report.format_table())
    _snapshot(out, "score.cfg", cfg)
    print(report.format_table(), end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "score": cmd_score}


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input, so they share the validation exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="careerssm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="BLAS thread limit")
        p.add_argument("--min-obs", dest="min_obs", type=int)
        p.add_argument("--disciplines", help="comma-separated discipline labels")

    p = sub.add_parser("simulate", help="generate a synthetic panel and truth sidecar")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--runners", dest="n_runners", type=int)

    p = sub.add_parser("fit", help="run the Gibbs sampler on the training runners")
    common(p)
    p.add_argument("--data")
    p.add_argument("--variant")
    p.add_argument("-G", "--components", dest="n_components", type=int)
    p.add_argument("--iters", dest="n_iter", type=int)
    p.add_argument("--keep", dest="n_keep", type=int)
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--split-seed", dest="split_seed", type=int)

    p = sub.add_parser("predict", help="predictive bands and ensembles for held-out runners")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("-B", "--samples", dest="n_samples", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--base-age", dest="base_age", type=int)
    p.add_argument("--scenarios", action="store_const", const=True)

    p = sub.add_parser("score", help="pairwise CRPS and interval-score comparison")
    common(p)
    p.add_argument("--data")
    p.add_argument("--ensembles", nargs="+")
    p.add_argument("--alpha", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    if isinstance(overrides.get("ensembles"), list):
        overrides["ensembles"] = ",".join(overrides["ensembles"])
    try:
        file_values = load_config(args.config) if args.config else {}
        cfg = resolve_config(file_values, overrides)
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
