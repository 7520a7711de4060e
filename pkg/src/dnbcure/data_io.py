"""CSV ingestion and export, plus the melanoma conversion recipe.

Data files follow the column contract ``time,status,<covariates...>`` with
``status = 1`` for an observed event. Row numbers in error messages are
1-based data rows (the header is row 0).
"""

from __future__ import annotations

import csv
import io
import json
import os
import subprocess
import sys
import tarfile
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from dnbcure.exceptions import DataError, DNBCureError, UsageError
from dnbcure.model import Dataset

__all__ = [
    "DesignSpec",
    "read_table",
    "build_dataset",
    "read_dataset",
    "write_simulated_csv",
    "write_json",
    "read_json",
    "convert_melanoma",
    "MELANOMA_EM_START",
    "fetch_melanoma",
    "default_melanoma_path",
    "IOFailure",
]


class IOFailure(DNBCureError, OSError):
    """Unreadable or unwritable file."""

    exit_code = 5


@dataclass
class DesignSpec:
    """Which CSV columns feed which link.

    Columns listed in ``categorical`` that also appear in ``eta_covariates``
    expand to one indicator per level (no reference level, since the log
    link has no intercept). ``levels`` is filled from the data when empty.
    """

    p_covariates: list[str]
    eta_covariates: list[str]
    categorical: list[str] = field(default_factory=list)
    levels: dict[str, list] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "p_covariates": list(self.p_covariates),
            "eta_covariates": list(self.eta_covariates),
            "categorical": list(self.categorical),
            "levels": {k: list(v) for k, v in self.levels.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpec":
        return cls(list(d["p_covariates"]), list(d["eta_covariates"]), list(d.get("categorical", [])),
                   {k: list(v) for k, v in d.get("levels", {}).items()})


def read_table(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except FileNotFoundError as exc:
        raise IOFailure(f"cannot read {path}: file not found") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"malformed CSV {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"empty CSV {path}") from exc


def _rows(mask) -> list[int]:
    return (np.flatnonzero(np.asarray(mask)) + 1).tolist()


def _numeric(frame: pd.DataFrame, col: str) -> np.ndarray:
    values = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        raise DataError(f"column {col!r} has missing or non-numeric values", rows=_rows(bad))
    return values


def _level_label(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def build_dataset(frame: pd.DataFrame, spec: DesignSpec) -> Dataset:
    """Validate a ``time,status,...`` table and assemble the two design matrices."""
    missing = [c for c in ["time", "status", *spec.p_covariates, *spec.eta_covariates] if c not in frame.columns]
    if missing:
        raise DataError(f"missing columns: {', '.join(missing)}")
    if not spec.eta_covariates:
        raise UsageError("at least one eta covariate is required")
    if len(frame) == 0:
        raise DataError("no data rows")
    time = _numeric(frame, "time")
    bad = time <= 0
    if bad.any():
        raise DataError("time must be > 0", rows=_rows(bad))
    status = _numeric(frame, "status")
    bad = (status != 0) & (status != 1)
    if bad.any():
        raise DataError("status must be 0 or 1", rows=_rows(bad))

    x_p = [np.ones(len(frame))]
    names_p = ["intercept"]
    for col in spec.p_covariates:
        x_p.append(_numeric(frame, col))
        names_p.append(col)

    x_eta, names_eta = [], []
    for col in spec.eta_covariates:
        values = _numeric(frame, col)
        if col in spec.categorical:
            if col not in spec.levels:
                spec.levels[col] = sorted(np.unique(values).tolist())
            levels = spec.levels[col]
            unknown = ~np.isin(values, levels)
            if unknown.any():
                raise DataError(f"column {col!r} has levels not seen at fit time", rows=_rows(unknown))
            for lv in levels:
                x_eta.append((values == lv).astype(float))
                names_eta.append(f"{col}[{_level_label(lv)}]")
        else:
            x_eta.append(values)
            names_eta.append(col)

    return Dataset(time, status, np.column_stack(x_p), np.column_stack(x_eta), tuple(names_p), tuple(names_eta))


def read_dataset(path: str | Path, spec: DesignSpec) -> Dataset:
    return build_dataset(read_table(path), spec)


def _fmt(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def write_simulated_csv(path: str | Path, time, status, ulcer, thickness) -> None:
    """Write ``time,status,ulcer,thickness`` with round-trip float formatting."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time", "status", "ulcer", "thickness"])
    for row in zip(time, status, ulcer, thickness):
        writer.writerow([repr(float(row[0])), int(row[1]), int(row[2]), repr(float(row[3]))])
    _write_text(path, buf.getvalue())


def write_rows_csv(path: str | Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) if isinstance(row[h], (float, np.floating)) else row[h] for h in header])
    _write_text(path, buf.getvalue())


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def write_json(path: str | Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def read_json(path: str | Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise IOFailure(f"cannot read {path}: file not found") from exc
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Melanoma recipe
# ---------------------------------------------------------------------------

#: Rdatasets copy of ``MASS::Melanoma`` (same 205 patients as ``timereg::melanoma``).
MELANOMA_URL = "https://vincentarelbundock.github.io/Rdatasets/csv/MASS/Melanoma.csv"
#: Source distribution on PyPI that bundles the same Rdatasets CSV.
MELANOMA_SDIST = "pydataset==0.2.0"
_SDIST_MEMBER = "resources/rdata/csv/MASS/Melanoma.csv"

#: Published EM estimates for this cohort under the same model and design
#: (``p`` on thickness with intercept, ``eta`` on one indicator per ulcer
#: level), layout ``[phi, b1:intercept, b1:thickness, b2:ulcer[0],
#: b2:ulcer[1], gamma1, gamma2]``. Used as the reference starting point.
MELANOMA_EM_START = (6.600, -5.882, 1.197, 3.484, 5.490, 0.300, 0.127)


def convert_melanoma(src: str | Path, dest: str | Path) -> pd.DataFrame:
    """Convert the R ``Melanoma`` table to ``time,status,ulcer,thickness``.

    Time goes from days to years (/365.25); only deaths from melanoma
    (R status 1) count as events, everything else is censored.
    """
    raw = read_table(src)
    need = {"time", "status", "ulcer", "thickness"}
    if not need <= set(raw.columns):
        raise DataError(f"{src} does not look like the melanoma table (needs {sorted(need)})")
    out = pd.DataFrame({
        "time": raw["time"].astype(float) / 365.25,
        "status": (raw["status"] == 1).astype(int),
        "ulcer": raw["ulcer"].astype(int),
        "thickness": raw["thickness"].astype(float),
    })
    buf = io.StringIO(newline="")
    out.to_csv(buf, index=False, lineterminator="\n")
    _write_text(dest, buf.getvalue())
    return out


def _from_sdist(workdir: Path) -> Path:
    cmd = [sys.executable, "-m", "pip", "download", "--no-deps", "--no-binary", ":all:", "-d", str(workdir),
           MELANOMA_SDIST]
    subprocess.run(cmd, check=True, capture_output=True)
    archive = next(workdir.glob("pydataset-*.tar.gz"))
    with tarfile.open(archive) as outer:
        member = next(m for m in outer.getmembers() if m.name.endswith("pydataset/resources.tar.gz"))
        inner_bytes = outer.extractfile(member).read()
    with tarfile.open(fileobj=io.BytesIO(inner_bytes)) as inner:
        data = inner.extractfile(_SDIST_MEMBER).read()
    target = workdir / "Melanoma.csv"
    target.write_bytes(data)
    return target


def fetch_melanoma(dest: str | Path) -> pd.DataFrame:
    """Download ``MASS::Melanoma`` and write the converted CSV to ``dest``.

    Tries the Rdatasets mirror first, then the PyPI source distribution of
    ``pydataset`` through ``pip download``.
    """
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        src = tmp / "Melanoma.csv"
        errors = []
        try:
            import urllib.request

            with urllib.request.urlopen(MELANOMA_URL, timeout=20) as resp:
                src.write_bytes(resp.read())
        except Exception as exc:  # noqa: BLE001 - fall through to the next source
            errors.append(f"{MELANOMA_URL}: {exc}")
            try:
                src = _from_sdist(tmp)
            except Exception as exc2:  # noqa: BLE001
                errors.append(f"pip download {MELANOMA_SDIST}: {exc2}")
                raise IOFailure("could not fetch the melanoma data:\n  " + "\n  ".join(errors)) from exc2
        return convert_melanoma(src, dest)


def default_melanoma_path() -> Path:
    env = os.environ.get("DNBCURE_MELANOMA")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "dnbcure" / "melanoma.csv"
