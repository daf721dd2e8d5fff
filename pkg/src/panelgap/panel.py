"""Panel data model, calendar arithmetic, CSV ingestion and outcome transforms."""

from __future__ import annotations

import csv
import io
import math
import os
import re
import warnings
from dataclasses import dataclass, field
from functools import total_ordering
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np

MONTHLY = "monthly"
ANNUAL = "annual"

MIN_PRE_PERIODS_RECOMMENDED = 24

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_YEAR_RE = re.compile(r"^(\d{4})$")


class PanelFormatError(ValueError):
    """Raised when a CSV row cannot be parsed."""


class DuplicateCellError(ValueError):
    """Raised when the same (unit, period) appears twice in the input."""


class UnknownUnitError(KeyError):
    """Raised when a referenced unit is not in the panel."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown unit"


@total_ordering
@dataclass(frozen=True, eq=False)
class PeriodIndex:
    """A calendar period expressed as an offset from an origin.

    ``origin`` is ``(year, month)``; for annual data the month is ignored
    and stored as 1.
    """

    frequency: str
    origin: tuple[int, int]
    offset: int = 0

    def __post_init__(self) -> None:
        if self.frequency not in (MONTHLY, ANNUAL):
            raise ValueError(f"unknown frequency {self.frequency!r}")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        year, month = self.origin
        if not 1 <= month <= 12:
            raise ValueError(f"origin month {month} outside 1..12")

    @classmethod
    def parse(cls, text: str) -> "PeriodIndex":
        text = text.strip()
        m = _MONTH_RE.match(text)
        if m:
            year, month = int(m.group(1)), int(m.group(2))
            if not 1 <= month <= 12:
                raise ValueError(f"month out of range in {text!r}")
            return cls(MONTHLY, (year, month), 0)
        m = _YEAR_RE.match(text)
        if m:
            return cls(ANNUAL, (int(m.group(1)), 1), 0)
        raise ValueError(f"cannot parse period {text!r} (expected YYYY-MM or YYYY)")

    @property
    def ordinal(self) -> int:
        """Periods since year 0 (months for monthly data, years for annual)."""
        year, month = self.origin
        if self.frequency == MONTHLY:
            return year * 12 + (month - 1) + self.offset
        return year + self.offset

    @property
    def year(self) -> int:
        return self.ordinal // 12 if self.frequency == MONTHLY else self.ordinal

    @property
    def month(self) -> int:
        return self.ordinal % 12 + 1 if self.frequency == MONTHLY else 1

    def __add__(self, n: int) -> "PeriodIndex":
        if not isinstance(n, (int, np.integer)):
            return NotImplemented
        return PeriodIndex(self.frequency, self.origin, self.offset + int(n))

    def distance(self, other: "PeriodIndex") -> int:
        """Number of periods from ``self`` to ``other`` (negative if earlier)."""
        self._check_same_frequency(other)
        return other.ordinal - self.ordinal

    def _check_same_frequency(self, other: "PeriodIndex") -> None:
        if self.frequency != other.frequency:
            raise ValueError("cannot compare monthly and annual periods")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PeriodIndex):
            return NotImplemented
        return self.frequency == other.frequency and self.ordinal == other.ordinal

    def __lt__(self, other: "PeriodIndex") -> bool:
        self._check_same_frequency(other)
        return self.ordinal < other.ordinal

    def __hash__(self) -> int:
        return hash((self.frequency, self.ordinal))

    def __str__(self) -> str:
        if self.frequency == MONTHLY:
            return f"{self.year:04d}-{self.month:02d}"
        return f"{self.year:04d}"

    def __repr__(self) -> str:
        return f"PeriodIndex({str(self)!r})"


def period_range(start: PeriodIndex, stop: PeriodIndex) -> tuple[PeriodIndex, ...]:
    """Inclusive range of periods from ``start`` to ``stop``."""
    n = start.distance(stop)
    if n < 0:
        raise ValueError(f"{stop} precedes {start}")
    return tuple(PeriodIndex(start.frequency, start.origin, start.offset + k) for k in range(n + 1))


@dataclass(frozen=True)
class PanelMatrix:
    """Units x periods outcome grid with an observation mask.

    Cells where ``mask`` is false hold NaN and are never read by the
    estimators.
    """

    units: tuple[str, ...]
    periods: tuple[PeriodIndex, ...]
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        units = tuple(str(u) for u in self.units)
        periods = tuple(self.periods)
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.shape != (len(units), len(periods)) or mask.shape != values.shape:
            raise ValueError(
                f"grid shape {values.shape} / mask {mask.shape} does not match "
                f"{len(units)} units x {len(periods)} periods"
            )
        if len(units) < 2 or len(periods) < 3:
            raise ValueError("a panel needs at least 2 units and 3 periods")
        if len(set(units)) != len(units):
            raise ValueError("duplicate unit ids")
        if len({p.frequency for p in periods}) != 1:
            raise ValueError("mixed-frequency periods")
        ords = [p.ordinal for p in periods]
        if any(b - a != 1 for a, b in zip(ords, ords[1:])):
            raise ValueError("periods must be consecutive and ascending")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed cells must be finite")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def frequency(self) -> str:
        return self.periods[0].frequency

    def unit_index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise UnknownUnitError(f"unit {unit!r} not found in panel") from None

    def period_index(self, period: PeriodIndex | str) -> int:
        if isinstance(period, str):
            period = PeriodIndex.parse(period)
        k = self.periods[0].distance(period)
        if not 0 <= k < len(self.periods):
            raise ValueError(f"period {period} outside {self.periods[0]}..{self.periods[-1]}")
        return k

    def series(self, unit: str) -> np.ndarray:
        return self.values[self.unit_index(unit)]

    def select_units(self, units: Sequence[str]) -> "PanelMatrix":
        idx = [self.unit_index(u) for u in units]
        return PanelMatrix(tuple(units), self.periods, self.values[idx], self.mask[idx])

    def drop_units(self, units: Iterable[str]) -> "PanelMatrix":
        drop = set(units)
        for u in drop:
            self.unit_index(u)
        keep = [u for u in self.units if u not in drop]
        return self.select_units(keep)

    def with_first(self, unit: str) -> "PanelMatrix":
        """Reorder so ``unit`` is the first row."""
        self.unit_index(unit)
        return self.select_units([unit] + [u for u in self.units if u != unit])

    def truncate(self, stop: int, start: int = 0) -> "PanelMatrix":
        """Keep periods ``start .. stop-1`` (integer positions)."""
        return PanelMatrix(
            self.units, self.periods[start:stop], self.values[:, start:stop], self.mask[:, start:stop]
        )

    def with_mask(self, mask: np.ndarray) -> "PanelMatrix":
        mask = np.asarray(mask, dtype=bool) & self.mask
        return PanelMatrix(self.units, self.periods, self.values, mask)

    def with_values(self, values: np.ndarray) -> "PanelMatrix":
        return PanelMatrix(self.units, self.periods, values, self.mask)

    def to_csv(self, dest: Union[str, os.PathLike, IO[str], None] = None) -> str:
        """Long-format CSV (``unit,period,value``); unobserved cells are omitted."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unit", "period", "value"])
        for i, unit in enumerate(self.units):
            for t, period in enumerate(self.periods):
                if self.mask[i, t]:
                    w.writerow([unit, str(period), repr(float(self.values[i, t]))])
        return _emit(buf.getvalue(), dest)

    def to_wide_csv(self, dest: Union[str, os.PathLike, IO[str], None] = None) -> str:
        """Debug export: one row per period, one column per unit, blank = unobserved."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", *self.units])
        for t, period in enumerate(self.periods):
            row = [str(period)]
            for i in range(len(self.units)):
                row.append(repr(float(self.values[i, t])) if self.mask[i, t] else "")
            w.writerow(row)
        return _emit(buf.getvalue(), dest)

    def equals(self, other: "PanelMatrix") -> bool:
        """Bit-equal values on observed cells, identical mask, units and periods."""
        return (
            self.units == other.units
            and self.periods == other.periods
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )


def _emit(text: str, dest) -> str:
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


@dataclass(frozen=True)
class TreatmentAssignment:
    treated_unit: str
    t0: PeriodIndex

    @classmethod
    def parse(cls, treated_unit: str, t0: str) -> "TreatmentAssignment":
        return cls(treated_unit, PeriodIndex.parse(t0))

    def t0_index(self, panel: PanelMatrix) -> int:
        """Column position of the first treated period; validates against ``panel``."""
        panel.unit_index(self.treated_unit)
        k = panel.period_index(self.t0)
        if k < 1:
            raise ValueError(f"t0 {self.t0} leaves no pre-treatment periods")
        if k >= len(panel.periods):
            raise ValueError(f"t0 {self.t0} is after the last period {panel.periods[-1]}")
        return k


@dataclass(frozen=True)
class ObservedSets:
    """Boolean masks for the untreated-observed cells and the block to impute."""

    omega: np.ndarray
    missing: np.ndarray
    treated: int
    t0: int

    @property
    def missing_periods(self) -> np.ndarray:
        """Column positions of the treated unit's imputed cells, in time order."""
        return np.flatnonzero(self.missing[self.treated])

    @property
    def pre_periods(self) -> np.ndarray:
        """Column positions of the treated unit's observed pre-treatment cells."""
        return np.flatnonzero(self.omega[self.treated, : self.t0])

    def pairs(self, which: str = "omega") -> set[tuple[int, int]]:
        grid = self.omega if which == "omega" else self.missing
        return {(int(i), int(t)) for i, t in zip(*np.nonzero(grid))}


def build_observed_sets(panel: PanelMatrix, treat: TreatmentAssignment) -> ObservedSets:
    """Split the observed cells into the estimation set and the post-treatment block."""
    i = panel.unit_index(treat.treated_unit)
    k = treat.t0_index(panel)
    if k < MIN_PRE_PERIODS_RECOMMENDED:
        warnings.warn(
            f"only {k} pre-treatment periods (>= {MIN_PRE_PERIODS_RECOMMENDED} recommended)",
            stacklevel=2,
        )
    missing = np.zeros(panel.shape, dtype=bool)
    missing[i, k:] = panel.mask[i, k:]
    omega = panel.mask & ~missing
    for a in (omega, missing):
        a.setflags(write=False)
    return ObservedSets(omega=omega, missing=missing, treated=i, t0=k)


PanelSource = Union[str, os.PathLike, bytes, IO[bytes], IO[str]]


def _read_text(source: PanelSource) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8-sig") if isinstance(data, bytes) else data
    with open(source, "r", encoding="utf-8-sig", newline="") as fh:
        return fh.read()


def load_panel(
    source: PanelSource,
    schema: Mapping[str, str] | None = None,
    outcome: str | None = None,
) -> PanelMatrix:
    """Read a long-format CSV into a :class:`PanelMatrix`.

    Parameters
    ----------
    source : path, bytes or file object
        CSV with columns ``unit``, ``period`` and ``value``.
    schema : mapping, optional
        Maps the canonical names (``unit``, ``period``, ``value``, ``outcome``)
        to the column names used in the file.
    outcome : str, optional
        When the file carries an ``outcome`` column, keep only rows for this
        outcome.

    Returns
    -------
    PanelMatrix
        Units in order of first appearance; periods span the earliest to the
        latest date seen; absent cells are unobserved.
    """
    cols = {"unit": "unit", "period": "period", "value": "value", "outcome": "outcome"}
    if schema:
        cols.update(schema)
    reader = csv.DictReader(io.StringIO(_read_text(source)))
    header = reader.fieldnames or []
    for key in ("unit", "period", "value"):
        if cols[key] not in header:
            raise PanelFormatError(f"missing column {cols[key]!r} (header: {header})")
    has_outcome = cols["outcome"] in header

    cells: dict[tuple[str, PeriodIndex], float] = {}
    units: list[str] = []
    seen_units: set[str] = set()
    freq = None
    for lineno, row in enumerate(reader, start=2):
        if has_outcome and outcome is not None and row[cols["outcome"]] != outcome:
            continue
        unit = (row[cols["unit"]] or "").strip()
        if not unit:
            raise PanelFormatError(f"row {lineno}: empty unit")
        try:
            period = PeriodIndex.parse(row[cols["period"]] or "")
        except ValueError as exc:
            raise PanelFormatError(f"row {lineno}: {exc}") from None
        if freq is None:
            freq = period.frequency
        elif period.frequency != freq:
            raise PanelFormatError(f"row {lineno}: mixed {freq} and {period.frequency} periods")
        raw = (row[cols["value"]] or "").strip()
        try:
            value = float(raw)
        except ValueError:
            raise PanelFormatError(f"row {lineno}: non-numeric value {raw!r}") from None
        if not math.isfinite(value):
            raise PanelFormatError(f"row {lineno}: non-finite value {raw!r}")
        key = (unit, period)
        if key in cells:
            raise DuplicateCellError(f"row {lineno}: duplicate cell ({unit}, {period})")
        cells[key] = value
        if unit not in seen_units:
            seen_units.add(unit)
            units.append(unit)
    if not cells:
        raise PanelFormatError("no data rows")

    first = min(p for _, p in cells)
    last = max(p for _, p in cells)
    periods = period_range(PeriodIndex(first.frequency, (first.year, first.month)), last)
    values = np.full((len(units), len(periods)), np.nan)
    mask = np.zeros_like(values, dtype=bool)
    row_of = {u: i for i, u in enumerate(units)}
    for (unit, period), value in cells.items():
        i, t = row_of[unit], first.distance(period)
        values[i, t] = value
        mask[i, t] = True
    return PanelMatrix(tuple(units), periods, values, mask)


def spread(base: Sequence[float], benchmark: Sequence[float]) -> np.ndarray:
    """Elementwise ``base - benchmark`` (e.g. a yield over a safe benchmark yield)."""
    a = np.asarray(base, dtype=float)
    b = np.asarray(benchmark, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a - b


def growth_rate(series: Sequence[float], method: str = "simple") -> np.ndarray:
    """Period-on-period growth in percent.

    ``simple`` is ``100 * (x_t - x_{t-1}) / |x_{t-1}|``; ``log`` is
    ``100 * (ln x_t - ln x_{t-1})``.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("growth_rate needs a 1-d series of length >= 2")
    if method == "simple":
        prev = x[:-1]
        if np.any(prev == 0):
            raise ZeroDivisionError(f"zero value at position {int(np.flatnonzero(prev == 0)[0])}")
        return 100.0 * (x[1:] - prev) / np.abs(prev)
    if method == "log":
        if np.any(x <= 0):
            raise ValueError(f"non-positive value at position {int(np.flatnonzero(x <= 0)[0])}")
        return 100.0 * np.diff(np.log(x))
    raise ValueError(f"unknown growth method {method!r}")
