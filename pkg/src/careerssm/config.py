"""Run configuration.

Config files are flat ``key = value`` text. Blank lines and lines starting
with ``#`` are ignored; keys use the long option names with underscores.
Values given on the command line override the file, and the file overrides
the defaults below.

Keys
----
data            input panel CSV (fit, predict, score)
out             output directory
preset          simulate: desk | informative | null
variant         complete | no_missing | attitude_only | history_only
n_components    mixture components G
n_iter          Gibbs sweeps
n_keep          final sweeps retained
seed            master seed of the command (simulate: preset seed when unset)
split_fraction  share of runners held out for testing (0 disables the split)
split_seed      seed of the runner split
alpha           band and interval-score level
n_samples       predictive draws per cell (B)
min_obs         minimum observed cells per runner
base_age        age at the first panel year (scenario patterns)
n_runners       simulate: override the preset runner count
disciplines     comma-separated discipline labels
threads         BLAS thread limit
checkpoint      predict: draws checkpoint
ensembles       score: comma-separated ensemble archives
scenarios       predict: also write bands for the idealised runner patterns
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .missingness import ModelVariant
from .panel import DEFAULT_DISCIPLINES


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    out: str = "."
    preset: str = "desk"
    variant: str = "complete"
    n_components: int = 50
    n_iter: int = 10000
    n_keep: int = 2000
    seed: int | None = None
    split_fraction: float = 0.3
    split_seed: int = 0
    alpha: float = 0.05
    n_samples: int = 2000
    min_obs: int = 2
    base_age: int = 18
    n_runners: int | None = None
    disciplines: str = ",".join(DEFAULT_DISCIPLINES)
    threads: int = 1
    checkpoint: str | None = None
    ensembles: str | None = None
    scenarios: bool = False

    def __post_init__(self):
        ModelVariant.parse(self.variant)
        checks = [
            (self.n_components >= 1, "n_components must be >= 1"),
            (self.n_iter >= 1, "n_iter must be >= 1"),
            (1 <= self.n_keep <= self.n_iter, "n_keep must lie in [1, n_iter]"),
            (0.0 <= self.split_fraction < 1.0, "split_fraction must lie in [0, 1)"),
            (0.0 < self.alpha < 0.5, "alpha must lie in (0, 0.5)"),
            (self.n_samples >= 2, "n_samples must be >= 2"),
            (self.min_obs >= 1, "min_obs must be >= 1"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.n_runners is None or self.n_runners >= 1, "n_runners must be >= 1"),
            ((self.seed is None or self.seed >= 0) and self.split_seed >= 0, "seeds must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    @property
    def discipline_list(self):
        return tuple(d.strip() for d in self.disciplines.split(",") if d.strip())

    @property
    def ensemble_list(self):
        return [e.strip() for e in (self.ensembles or "").split(",") if e.strip()]

    def dump(self):
        """Resolved snapshot in the same ``key = value`` format."""
        lines = ["# format-version: 1"]
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key, raw):
    typ = _FIELDS[key].type
    try:
        if "bool" in typ:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ValidationError(f"{source}, line {lineno}: expected key = value")
        if key not in _FIELDS:
            raise ValidationError(f"{source}, line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw.strip())
    return values


def load_config(path):
    return parse_config_text(Path(path).read_text(), source=str(path))


def resolve_config(file_values=None, overrides=None):
    """Defaults, then file values, then non-``None`` overrides."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**merged)
