"""Dataset I/O and the embedded leukemia remission data."""
from __future__ import annotations

import csv
import math
from pathlib import Path

from .survival import Observation, SurvivalDataset

WEEKS_PER_YEAR = 52.0

# remission lengths in weeks; a trailing "+" marks a censored observation
_LEUKEMIA = {
    "6MP": "6 6 6 6+ 7 9+ 10 10+ 11+ 13 16 17+ 19+ 20+ 22 23 25+ 32+ 32+ 34+ 35+",
    "placebo": "1 1 2 2 3 4 4 5 5 8 8 8 8 11 11 12 12 15 17 22 23",
}


class DataError(ValueError):
    """Malformed dataset file."""


def embedded_leukemia(unit: str = "years") -> SurvivalDataset:
    """Remission times of 42 leukemia patients in two arms (6-MP, placebo).

    ``unit="years"`` divides the week counts by 52; ``unit="weeks"`` keeps them.
    """
    if unit not in ("years", "weeks"):
        raise ValueError("unit must be 'years' or 'weeks'")
    div = WEEKS_PER_YEAR if unit == "years" else 1.0
    obs = []
    for group, text in _LEUKEMIA.items():
        for tok in text.split():
            censored = tok.endswith("+")
            weeks = float(tok.rstrip("+"))
            obs.append(Observation(weeks / div, not censored, group))
    return SurvivalDataset(tuple(obs), unit)


def load_dataset_csv(path, time_divisor: float = 1.0) -> SurvivalDataset:
    """Read ``time,status[,group][,covariates...]`` with a header row.

    ``status`` is 1 for an event and 0 for a censored time. Any column other
    than time, status and group is a numeric covariate. Errors name the
    1-based data row and the column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty file (a header row is required)")
    header = [h.strip() for h in rows[0]]
    for col in ("time", "status"):
        if col not in header:
            raise DataError(f"{path}: missing required column {col!r}")
    it, ist = header.index("time"), header.index("status")
    ig = header.index("group") if "group" in header else None
    covs = [(j, h) for j, h in enumerate(header) if h not in ("time", "status", "group")]
    obs = []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        try:
            t = float(row[it])
        except ValueError:
            raise DataError(f"{path}: row {r}, column 'time': cannot parse {row[it]!r}") from None
        if not (math.isfinite(t) and t > 0):
            raise DataError(f"{path}: row {r}, column 'time': time must be positive and finite, got {row[it]!r}")
        s = row[ist].strip()
        if s not in ("0", "1"):
            raise DataError(f"{path}: row {r}, column 'status': expected 0 or 1, got {row[ist]!r}")
        z = {}
        for j, name in covs:
            try:
                z[name] = float(row[j])
            except ValueError:
                raise DataError(f"{path}: row {r}, column {name!r}: cannot parse {row[j]!r}") from None
        group = row[ig].strip() if ig is not None else None
        obs.append(Observation(t / time_divisor, s == "1", group, z))
    if not obs:
        raise DataError(f"{path}: no data rows")
    return SurvivalDataset(tuple(obs))


def write_dataset_csv(data: SurvivalDataset, path, header_comment: str | None = None) -> None:
    """Write a dataset in the format read by :func:`load_dataset_csv` (times via ``repr``)."""
    groups = any(o.group is not None for o in data.observations)
    covs = data.covariate_names
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "status"] + (["group"] if groups else []) + covs)
        for o in data.observations:
            row = [repr(float(o.time)), int(o.event)]
            if groups:
                row.append("" if o.group is None else o.group)
            row += [repr(float(o.covariates[c])) for c in covs]
            w.writerow(row)
