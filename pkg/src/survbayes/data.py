"""Trial data containers, CSV I/O, simulation, and resampling.

The unit of analysis is a two-arm randomized trial with a right-censored
time-to-event endpoint. One row per subject: a positive follow-up time, an
event indicator (1 = event observed, 0 = censored), and an arm code
(0 = control, 1 = treatment).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

CANONICAL_COLUMNS = ("id", "time", "event", "arm")


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: follow-up time, event flag, and arm assignment."""

    subject_id: str
    time: float
    event: bool
    arm: int

    def __post_init__(self) -> None:
        if not (self.time > 0.0 and np.isfinite(self.time)):
            raise DataError(
                f"subject {self.subject_id!r}: time must be a positive finite "
                f"number, got {self.time!r}"
            )
        if self.arm not in (0, 1):
            raise DataError(
                f"subject {self.subject_id!r}: arm must be 0 (control) or 1 "
                f"(treatment), got {self.arm!r}"
            )


@dataclass(frozen=True)
class TrialDataset:
    """Immutable collection of subject records plus a time-unit label.

    Invariants enforced at construction: at least one record, at least one
    observed event, unique subject ids. Array views are cached and marked
    read-only so a dataset can be shared freely between fits.
    """

    records: tuple[SurvivalRecord, ...]
    time_unit: str = "months"

    def __post_init__(self) -> None:
        if not self.records:
            raise DataError("dataset is empty")
        if not any(r.event for r in self.records):
            raise DataError("dataset has no observed events")
        seen: set[str] = set()
        for r in self.records:
            if r.subject_id in seen:
                raise DataError(f"duplicate subject id {r.subject_id!r}")
            seen.add(r.subject_id)

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def times(self) -> np.ndarray:
        arr = np.array([r.time for r in self.records], dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def events(self) -> np.ndarray:
        arr = np.array([r.event for r in self.records], dtype=bool)
        arr.setflags(write=False)
        return arr

    @cached_property
    def arms(self) -> np.ndarray:
        arr = np.array([r.arm for r in self.records], dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    @property
    def n_by_arm(self) -> tuple[int, int]:
        n1 = int(self.arms.sum())
        return len(self.records) - n1, n1

    def subset(self, mask: np.ndarray) -> "TrialDataset":
        recs = tuple(r for r, keep in zip(self.records, mask) if keep)
        return TrialDataset(records=recs, time_unit=self.time_unit)

    def rescaled(self, factor: float) -> "TrialDataset":
        """Multiply all times by a positive constant (e.g. months -> years with 1/12)."""
        if not factor > 0:
            raise ConfigError(f"time factor must be positive, got {factor}")
        recs = tuple(replace(r, time=r.time * factor) for r in self.records)
        return TrialDataset(records=recs, time_unit=self.time_unit)


def _parse_row(row: Mapping[str, str], rownum: int, colmap: Mapping[str, str]) -> SurvivalRecord:
    def cell(name: str) -> str:
        raw = row.get(colmap[name])
        if raw is None or raw.strip() == "":
            raise DataError(f"row {rownum}: missing value for column {colmap[name]!r}")
        return raw.strip()

    sid = cell("id")
    try:
        time = float(cell("time"))
    except ValueError:
        raise DataError(f"row {rownum}: time {cell('time')!r} is not a number") from None
    ev_raw = cell("event")
    if ev_raw not in ("0", "1"):
        raise DataError(f"row {rownum}: event must be 0 or 1, got {ev_raw!r}")
    arm_raw = cell("arm")
    if arm_raw not in ("0", "1"):
        raise DataError(f"row {rownum}: arm must be 0 or 1, got {arm_raw!r}")
    try:
        return SurvivalRecord(subject_id=sid, time=time, event=ev_raw == "1", arm=int(arm_raw))
    except DataError as exc:
        raise DataError(f"row {rownum}: {exc}") from None


def load_csv(
    path: str | os.PathLike[str],
    column_map: Mapping[str, str] | None = None,
    time_unit: str = "months",
) -> TrialDataset:
    """Read a trial dataset from CSV.

    The file must have a header row. Canonical column names are
    ``id,time,event,arm``; ``column_map`` remaps canonical -> actual header
    names for files that use different labels. Decimal separator is ``.``,
    encoding UTF-8. Row numbers in error messages count data rows from 1.
    """
    colmap = dict(zip(CANONICAL_COLUMNS, CANONICAL_COLUMNS))
    if column_map:
        unknown = set(column_map) - set(CANONICAL_COLUMNS)
        if unknown:
            raise ConfigError(f"column_map has unknown canonical names: {sorted(unknown)}")
        colmap.update(column_map)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: file is empty")
        missing = [colmap[c] for c in CANONICAL_COLUMNS if colmap[c] not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        records = [_parse_row(row, i, colmap) for i, row in enumerate(reader, start=1)]
    return TrialDataset(records=tuple(records), time_unit=time_unit)


def write_csv(data: TrialDataset, path: str | os.PathLike[str]) -> None:
    """Write a dataset with the canonical header. Floats use repr round-trip."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CANONICAL_COLUMNS)
    for r in data.records:
        writer.writerow([r.subject_id, repr(r.time), int(r.event), r.arm])
    _atomic_write_text(path, buf.getvalue())


def _atomic_write_text(path: str | os.PathLike[str], text: str) -> None:
    """Write via temp file + rename so readers never see partial output."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass(frozen=True)
class SimSpec:
    """Configuration for simulating one two-arm proportional-hazards trial.

    Event times are drawn by inverting the arm-specific survival function;
    the baseline is Weibull with ``shape == 1.0`` meaning constant hazard.
    Censoring: an independent exponential censoring time at ``censor_rate``
    (0 disables it) and an administrative ``cutoff`` (None disables it).
    """

    n_control: int
    n_treatment: int
    true_log_hr: float
    rate: float = 1.0
    shape: float = 1.0
    cutoff: float | None = None
    censor_rate: float = 0.0
    seed: int = 0
    time_unit: str = "months"

    def __post_init__(self) -> None:
        if self.n_control < 1 or self.n_treatment < 1:
            raise ConfigError("both arms need at least one subject")
        if not (np.isfinite(self.true_log_hr)):
            raise ConfigError(f"true_log_hr must be finite, got {self.true_log_hr!r}")
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise ConfigError(f"rate must be positive, got {self.rate!r}")
        if not (self.shape > 0 and np.isfinite(self.shape)):
            raise ConfigError(f"shape must be positive, got {self.shape!r}")
        if self.cutoff is not None and not self.cutoff > 0:
            raise ConfigError(f"cutoff must be positive when given, got {self.cutoff!r}")
        if self.censor_rate < 0:
            raise ConfigError(f"censor_rate must be >= 0, got {self.censor_rate!r}")


def _invert_baseline(u: np.ndarray, spec: SimSpec) -> np.ndarray:
    # S0(t) = exp(-rate * t^shape); solve S0(t) = u.
    return (-np.log(u) / spec.rate) ** (1.0 / spec.shape)


def simulate_trial(spec: SimSpec) -> TrialDataset:
    """Simulate one trial under proportional hazards by inversion.

    For arm code z the survival function is S0(t)**exp(z*beta), so with
    u ~ U(0,1) the event time is S0^{-1}(u**exp(-z*beta)). Control rows come
    first, ids are "1".."n". Raises DataError (via TrialDataset) if the
    censoring configuration leaves no observed events.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n_control + spec.n_treatment
    arm = np.concatenate(
        [np.zeros(spec.n_control, dtype=np.int64), np.ones(spec.n_treatment, dtype=np.int64)]
    )
    u = rng.uniform(size=n)
    # Guard u=0 (log(0)); probability-zero but cheap to exclude.
    u = np.clip(u, np.finfo(float).tiny, 1.0)
    event_time = _invert_baseline(u ** np.exp(-spec.true_log_hr * arm), spec)

    censor_time = np.full(n, np.inf)
    if spec.censor_rate > 0:
        censor_time = rng.exponential(scale=1.0 / spec.censor_rate, size=n)
    if spec.cutoff is not None:
        censor_time = np.minimum(censor_time, spec.cutoff)

    observed = np.minimum(event_time, censor_time)
    is_event = event_time <= censor_time
    records = tuple(
        SurvivalRecord(subject_id=str(i + 1), time=float(observed[i]), event=bool(is_event[i]), arm=int(arm[i]))
        for i in range(n)
    )
    return TrialDataset(records=records, time_unit=spec.time_unit)


def bootstrap_stratified(data: TrialDataset, seed: int, max_retries: int = 1000) -> TrialDataset:
    """Resample subjects with replacement within each arm.

    Arm sizes are preserved exactly. A resample that happens to contain no
    events would violate the dataset invariant, so such draws are discarded
    and redrawn from the same stream (deterministic per seed); after
    ``max_retries`` rejections a DataError is raised. Resampled subjects get
    fresh ids "1".."n" because the originals may repeat.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    idx_by_arm = [np.flatnonzero(data.arms == z) for z in (0, 1)]
    for arm_idx in idx_by_arm:
        if arm_idx.size == 0:
            raise DataError("stratified bootstrap needs both arms present")
    events = data.events
    for _ in range(max_retries):
        chosen = np.concatenate([rng.choice(ix, size=ix.size, replace=True) for ix in idx_by_arm])
        if events[chosen].any():
            records = tuple(
                replace(data.records[j], subject_id=str(i + 1)) for i, j in enumerate(chosen)
            )
            return TrialDataset(records=records, time_unit=data.time_unit)
    raise DataError(f"bootstrap produced no events in {max_retries} resamples")


def dataset_from_arrays(
    times: Sequence[float] | np.ndarray,
    events: Sequence[int] | np.ndarray,
    arms: Sequence[int] | np.ndarray,
    time_unit: str = "months",
) -> TrialDataset:
    """Convenience constructor used by tests and scripts."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    arms = np.asarray(arms)
    if not (times.shape == events.shape == arms.shape):
        raise DataError("times, events, arms must have identical shapes")
    records = tuple(
        SurvivalRecord(str(i + 1), float(t), bool(e), int(z))
        for i, (t, e, z) in enumerate(zip(times, events, arms))
    )
    return TrialDataset(records=records, time_unit=time_unit)
