"""File formats.

* Panels: long-format CSV ``runner_id,discipline,year,seconds`` preceded by
  ``# key: value`` header comments (``format-version``, ``years``,
  ``disciplines``).
* Posterior draws and predictive ensembles: zip archives of ``.npy`` arrays
  plus a ``meta.json`` entry carrying ``format`` and ``format_version``.
  Entries are written with a fixed timestamp so that identical content
  gives identical bytes.
* Bands: CSV ``runner_id,discipline,year,lower,median,upper``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .gibbs import PosteriorDraws
from .missingness import ModelVariant
from .panel import DEFAULT_DISCIPLINES, validate_panel

FORMAT_VERSION = 1
PANEL_HEADER = ("runner_id", "discipline", "year", "seconds")
BANDS_HEADER = ("runner_id", "discipline", "year", "lower", "median", "upper")
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _fmt(x):
    return repr(float(x))


def write_panel_csv(path, panel):
    lines = [
        f"# format-version: {FORMAT_VERSION}",
        f"# years: {panel.years[0]}-{panel.years[-1]}",
        f"# disciplines: {','.join(panel.disciplines)}",
        ",".join(PANEL_HEADER),
    ]
    for rid, disc, year, sec in panel.to_records():
        lines.append(f"{rid},{disc},{year},{_fmt(sec)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_header_comments(lines):
    meta = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip().lower()] = value.strip()
            body_start = i + 1
        else:
            break
    return meta, body_start


def read_panel_csv(path, min_obs=2, disciplines=None, years=None):
    """Parse a long-format CSV into a validated panel.

    Header comments, when present, fix the year range and discipline set;
    explicit arguments take precedence. Malformed rows raise
    :class:`ValidationError` naming the line.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    meta, start = _read_header_comments(lines)
    if "format-version" in meta and meta["format-version"] != str(FORMAT_VERSION):
        raise ValidationError(f"{path}: unsupported format-version {meta['format-version']}")
    if disciplines is None:
        disciplines = tuple(meta["disciplines"].split(",")) if "disciplines" in meta else DEFAULT_DISCIPLINES
    if years is None and "years" in meta:
        try:
            first, last = (int(v) for v in meta["years"].split("-"))
        except ValueError:
            raise ValidationError(f"{path}: bad years header {meta['years']!r}") from None
        years = (first, last)
    reader = csv.reader(lines[start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError(f"{path}: missing header line") from None
    if tuple(h.strip() for h in header) != PANEL_HEADER:
        raise ValidationError(
            f"{path}, line {start + 1}: expected header {','.join(PANEL_HEADER)}, got {','.join(header)}"
        )
    records = []
    for offset, row in enumerate(reader):
        lineno = start + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ValidationError(f"{path}, line {lineno}: expected 4 fields, got {len(row)}")
        rid, disc, year, sec = (c.strip() for c in row)
        try:
            year_i = int(year)
            sec_f = float(sec)
        except ValueError:
            raise ValidationError(f"{path}, line {lineno}: cannot parse year/seconds in {row}") from None
        if not np.isfinite(sec_f) or sec_f <= 0:
            raise ValidationError(f"{path}, line {lineno}: non-positive time {sec}")
        if disc not in disciplines:
            raise ValidationError(f"{path}, line {lineno}: undeclared discipline {disc!r}")
        records.append((rid, disc, year_i, sec_f))
    return validate_panel(records, min_obs=min_obs, disciplines=disciplines, years=years)


def _write_zip(path, arrays, meta):
    buf = _io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            arr = arrays[name]
            if arr is None:
                continue
            out = _io.BytesIO()
            np.lib.format.write_array(out, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, out.getvalue())
    Path(path).write_bytes(buf.getvalue())


def _read_zip(path, expected_format):
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile:
        raise ValidationError(f"{path}: not a {expected_format} archive") from None
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != expected_format:
            raise ValidationError(f"{path}: expected format {expected_format!r}, got {meta.get('format')!r}")
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported format_version {meta.get('format_version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(_io.BytesIO(zf.read(name)), allow_pickle=False)
    return arrays, meta


_DRAW_FIELDS = (
    "sigma_r", "psi_r", "pi", "lambda1", "lambda2", "delta", "a_hat", "p0", "states",
    "allocation", "n_filled_trace", "imputed",
)


def save_draws(path, draws, **meta):
    """Write a checkpoint of retained draws; ``meta`` entries must be JSON-serialisable."""
    arrays = {name: getattr(draws, name) for name in _DRAW_FIELDS}
    header = {
        "format": "careerssm-draws",
        "format_version": FORMAT_VERSION,
        "variant": draws.variant.value,
        "chain": draws.meta,
        **meta,
    }
    _write_zip(path, arrays, header)


def load_draws(path):
    """Inverse of :func:`save_draws`; returns ``(PosteriorDraws, meta)``."""
    arrays, meta = _read_zip(path, "careerssm-draws")
    draws = PosteriorDraws(
        variant=ModelVariant.parse(meta["variant"]),
        meta=meta.get("chain", {}),
        **{name: arrays.get(name) for name in _DRAW_FIELDS},
    )
    return draws, meta


def save_ensembles(path, ensembles, runner_ids, **meta):
    """Stack per-runner ensembles into one archive.

    ``ensembles`` is a list of :class:`~careerssm.predictive.PredictiveEnsemble`
    whose ``runner_id`` values appear in ``runner_ids``.
    """
    index = {r: i for i, r in enumerate(runner_ids)}
    runner = np.concatenate([np.full(len(e.cells), index[e.runner_id]) for e in ensembles])
    cells = np.concatenate([e.cells for e in ensembles])
    draws = np.concatenate([e.draws for e in ensembles])
    header = {
        "format": "careerssm-ensemble",
        "format_version": FORMAT_VERSION,
        "runner_ids": list(runner_ids),
        **meta,
    }
    _write_zip(path, {"runner": runner, "discipline": cells[:, 0], "year_index": cells[:, 1], "draws": draws}, header)


def load_ensembles(path):
    """Returns ``(arrays, meta)`` with ``runner``, ``discipline``, ``year_index`` and ``draws``."""
    return _read_zip(path, "careerssm-ensemble")


def write_bands_csv(path, bands, disciplines, base_year):
    alpha = bands[0].alpha if bands else float("nan")
    lines = [
        f"# format-version: {FORMAT_VERSION}",
        f"# alpha: {alpha:g}",
        ",".join(BANDS_HEADER),
    ]
    for b in bands:
        for (p, t), lo, med, hi in zip(b.cells, b.lower, b.median, b.upper):
            lines.append(
                f"{b.runner_id},{disciplines[p]},{base_year + t},{_fmt(lo)},{_fmt(med)},{_fmt(hi)}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_bands_csv(path):
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header_comments(lines)
    rows = list(csv.DictReader(lines[start:]))
    return rows, meta


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
