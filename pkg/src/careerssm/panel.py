"""Performance panels, career-state derivation and runner-level splits.

A panel stores seasonal-best times as a ``(P, Q, T)`` array (disciplines x
runners x years) together with a boolean observation mask of the same shape.
Missing cells hold ``NaN`` in ``values``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_DISCIPLINES = ("800", "1500", "5000")


class CareerState(IntEnum):
    NOT_STARTED = 0
    IN_CAREER = 1
    FINISHED = 2


@dataclass(frozen=True)
class PerformancePanel:
    """Seasonal-best times with their observation mask.

    Attributes
    ----------
    values : ndarray of shape (P, Q, T)
        Times in seconds; ``NaN`` where ``mask`` is False.
    mask : ndarray of bool, shape (P, Q, T)
    disciplines : tuple of str, length P
    runner_ids : tuple of str, length Q
    base_year : int
        Calendar year of the first time index.
    """

    values: np.ndarray
    mask: np.ndarray
    disciplines: tuple
    runner_ids: tuple
    base_year: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 3 or values.shape != mask.shape:
            raise ValidationError(
                f"values and mask must be 3-d arrays of equal shape, got "
                f"{values.shape} and {mask.shape}"
            )
        P, Q, T = values.shape
        if P < 1 or Q < 1 or T < 2:
            raise ValidationError(f"panel needs P>=1, Q>=1, T>=2; got {(P, Q, T)}")
        if len(self.disciplines) != P:
            raise ValidationError("one discipline label per row required")
        if len(self.runner_ids) != Q:
            raise ValidationError("one runner id per column required")
        if len(set(self.runner_ids)) != Q:
            raise ValidationError("runner ids must be unique")
        present = np.isfinite(values) & (values > 0)
        if not np.array_equal(present, mask):
            bad = np.argwhere(present != mask)[0]
            raise ValidationError(
                "value present iff mask=1 violated at cell "
                f"(discipline={self.disciplines[bad[0]]}, "
                f"runner={self.runner_ids[bad[1]]}, year={self.base_year + bad[2]})"
            )
        values = np.where(mask, values, np.nan)
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "disciplines", tuple(str(d) for d in self.disciplines))
        object.__setattr__(self, "runner_ids", tuple(str(r) for r in self.runner_ids))
        object.__setattr__(self, "base_year", int(self.base_year))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_disciplines(self):
        return self.values.shape[0]

    @property
    def n_runners(self):
        return self.values.shape[1]

    @property
    def n_years(self):
        return self.values.shape[2]

    @property
    def years(self):
        return tuple(range(self.base_year, self.base_year + self.n_years))

    def subset(self, runner_ids: Iterable[str]) -> "PerformancePanel":
        """Panel restricted to ``runner_ids`` (in the given order)."""
        index = {r: i for i, r in enumerate(self.runner_ids)}
        ids = [str(r) for r in runner_ids]
        try:
            cols = [index[r] for r in ids]
        except KeyError as exc:
            raise ValidationError(f"unknown runner id {exc.args[0]!r}") from None
        return PerformancePanel(
            values=self.values[:, cols, :],
            mask=self.mask[:, cols, :],
            disciplines=self.disciplines,
            runner_ids=tuple(ids),
            base_year=self.base_year,
        )

    def to_records(self) -> list:
        """Long-format ``(runner_id, discipline, year, seconds)`` tuples."""
        out = []
        for q, rid in enumerate(self.runner_ids):
            for t in range(self.n_years):
                for p, disc in enumerate(self.disciplines):
                    if self.mask[p, q, t]:
                        out.append((rid, disc, self.base_year + t, float(self.values[p, q, t])))
        return out


@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    test_ids: tuple
    seed: int = field(default=0)


def validate_panel(
    records: Iterable[Sequence],
    min_obs: int = 2,
    disciplines: Sequence[str] = DEFAULT_DISCIPLINES,
    years: tuple | None = None,
) -> PerformancePanel:
    """Build a :class:`PerformancePanel` from long-format records.

    Parameters
    ----------
    records : iterable of (runner_id, discipline, year, seconds)
    min_obs : int
        Runners with fewer observed cells are dropped.
    disciplines : sequence of str
        Declared discipline set; its order fixes the row order of the panel.
    years : (first, last), optional
        Explicit inclusive year range. When omitted the range is inferred
        from the records and every year in it must carry at least one record.

    Raises
    ------
    ValidationError
        On duplicate cells, non-positive or non-finite times, undeclared
        disciplines, non-contiguous years, or an empty panel after filtering.
    """
    disciplines = tuple(str(d) for d in disciplines)
    disc_index = {d: i for i, d in enumerate(disciplines)}
    cells = {}
    runner_order = {}
    for i, rec in enumerate(records):
        if len(rec) != 4:
            raise ValidationError(f"record {i}: expected 4 fields, got {len(rec)}")
        rid, disc, year, seconds = rec
        rid, disc = str(rid), str(disc)
        if disc not in disc_index:
            raise ValidationError(f"record {i}: undeclared discipline {disc!r}")
        try:
            year = int(year)
            seconds = float(seconds)
        except (TypeError, ValueError):
            raise ValidationError(f"record {i}: unparseable year/seconds {rec!r}") from None
        if not np.isfinite(seconds) or seconds <= 0:
            raise ValidationError(
                f"record {i}: non-positive time {seconds} for runner {rid}, {disc}, {year}"
            )
        key = (rid, disc, year)
        if key in cells:
            raise ValidationError(
                f"duplicate cell (runner={rid}, discipline={disc}, year={year})"
            )
        cells[key] = seconds
        runner_order.setdefault(rid, len(runner_order))

    if not cells:
        raise ValidationError("no records")
    seen_years = sorted({k[2] for k in cells})
    if years is None:
        first, last = seen_years[0], seen_years[-1]
        missing = sorted(set(range(first, last + 1)) - set(seen_years))
        if missing:
            raise ValidationError(f"years are not contiguous; no records for {missing}")
    else:
        first, last = int(years[0]), int(years[1])
        outside = [y for y in seen_years if y < first or y > last]
        if outside:
            raise ValidationError(f"records outside year range {first}-{last}: {outside}")
    T = last - first + 1
    if T < 2:
        raise ValidationError("at least two years are required")

    counts = {}
    for rid, _, _ in cells:
        counts[rid] = counts.get(rid, 0) + 1
    kept = [r for r in runner_order if counts[r] >= min_obs]
    if not kept:
        raise ValidationError(f"empty panel after dropping runners with < {min_obs} observations")
    col = {r: j for j, r in enumerate(kept)}

    values = np.full((len(disciplines), len(kept), T), np.nan)
    for (rid, disc, year), sec in cells.items():
        j = col.get(rid)
        if j is not None:
            values[disc_index[disc], j, year - first] = sec
    return PerformancePanel(
        values=values,
        mask=~np.isnan(values),
        disciplines=disciplines,
        runner_ids=tuple(kept),
        base_year=first,
    )


def derive_career_states(runner_mask: np.ndarray) -> np.ndarray:
    """Career states of one runner from its ``(P, T)`` observation mask.

    Years before the first observed year are ``NOT_STARTED``, years from the
    first through the last observed year are ``IN_CAREER`` and later years
    are ``FINISHED``.

    >>> m = np.zeros((1, 8), bool); m[0, [2, 4]] = True
    >>> derive_career_states(m).tolist()
    [0, 0, 1, 1, 1, 2, 2, 2]
    """
    runner_mask = np.asarray(runner_mask, dtype=bool)
    if runner_mask.ndim == 1:
        runner_mask = runner_mask[None, :]
    active = np.flatnonzero(runner_mask.any(axis=0))
    if active.size == 0:
        raise ValidationError("runner has no observed cell; cannot derive career")
    T = runner_mask.shape[1]
    states = np.full(T, CareerState.IN_CAREER, dtype=np.int8)
    states[: active[0]] = CareerState.NOT_STARTED
    states[active[-1] + 1:] = CareerState.FINISHED
    return states


def derive_careers(mask: np.ndarray) -> np.ndarray:
    """Vectorised :func:`derive_career_states` over a ``(P, Q, T)`` mask; returns ``(Q, T)``."""
    mask = np.asarray(mask, dtype=bool)
    active = mask.any(axis=0)  # (Q, T)
    if not active.any(axis=1).all():
        q = int(np.flatnonzero(~active.any(axis=1))[0])
        raise ValidationError(f"runner at column {q} has no observed cell")
    started = np.cumsum(active, axis=1) > 0
    finished = np.cumsum(active[:, ::-1], axis=1)[:, ::-1] == 0
    careers = np.ones(active.shape, dtype=np.int8)
    careers[~started] = CareerState.NOT_STARTED
    careers[finished] = CareerState.FINISHED
    return careers


def check_careers(careers: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Validate ``(Q, T)`` careers against a ``(P, Q, T)`` mask and return them as int8.

    Careers must be non-decreasing with entries in {0, 1, 2}, and no
    discipline may be observed outside the in-career years.
    """
    careers = np.asarray(careers)
    mask = np.asarray(mask, dtype=bool)
    if careers.ndim == 1:
        careers = careers[None, :]
    if careers.shape != mask.shape[1:]:
        raise ValidationError(
            f"careers shape {careers.shape} does not match mask runners/years {mask.shape[1:]}"
        )
    if not np.isin(careers, (0, 1, 2)).all():
        raise ValidationError("career states must be in {0, 1, 2}")
    if (np.diff(careers, axis=1) < 0).any():
        q = int(np.flatnonzero((np.diff(careers, axis=1) < 0).any(axis=1))[0])
        raise ValidationError(f"career of runner at column {q} is not monotone")
    outside = mask.any(axis=0) & (careers != CareerState.IN_CAREER)
    if outside.any():
        q, t = np.argwhere(outside)[0]
        raise ValidationError(
            f"runner at column {q} has observations at t={t} outside its career"
        )
    return careers.astype(np.int8)


def split_train_test(panel: PerformancePanel, fraction: float, seed: int) -> SplitPlan:
    """Random runner-level split; ``fraction`` is the share of runners held out."""
    Q = panel.n_runners
    if Q < 2:
        raise ValidationError("need at least two runners to split")
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1), got {fraction}")
    n_test = int(np.floor(fraction * Q + 0.5))
    if n_test == 0 or n_test == Q:
        raise ValidationError(
            f"fraction {fraction} with {Q} runners leaves an empty train or test set"
        )
    perm = np.random.default_rng(seed).permutation(Q)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    ids = panel.runner_ids
    return SplitPlan(
        train_ids=tuple(ids[i] for i in train),
        test_ids=tuple(ids[i] for i in test),
        seed=int(seed),
    )
