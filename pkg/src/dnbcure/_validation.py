"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from dnbcure.exceptions import DataError, UsageError


def check_survival_target(y) -> tuple[np.ndarray, np.ndarray]:
    """Split a survival target into ``(time, event)``.

    Accepts an ``(n, 2)`` array of ``[time, event]``, a structured array with
    fields ``time``/``event`` (or ``status``), or a pair of 1-d arrays.
    """
    if isinstance(y, tuple) and len(y) == 2:
        time, event = (np.asarray(v, dtype=float) for v in y)
    else:
        arr = np.asarray(y)
        if arr.dtype.names:
            names = arr.dtype.names
            ev_name = "event" if "event" in names else "status" if "status" in names else None
            if "time" not in names or ev_name is None:
                raise DataError("structured target needs 'time' and 'event' (or 'status') fields")
            time, event = arr["time"].astype(float), arr[ev_name].astype(float)
        elif arr.ndim == 2 and arr.shape[1] == 2:
            time, event = arr[:, 0].astype(float), arr[:, 1].astype(float)
        else:
            raise DataError("target must be (n, 2) [time, event], a structured array, or a (time, event) pair")
    if time.ndim != 1 or time.shape != event.shape:
        raise DataError("time and event must be 1-d arrays of equal length")
    return time, event


def resolve_columns(spec, n_features: int, feature_names=None, what: str = "features") -> list[int]:
    """Turn a list of column indices or names into indices."""
    if spec is None:
        return []
    if isinstance(spec, (str, int, np.integer)):
        spec = [spec]
    out = []
    for item in spec:
        if isinstance(item, (int, np.integer)):
            if not -n_features <= item < n_features:
                raise UsageError(f"{what}: column index {item} out of range for {n_features} columns")
            out.append(int(item) % n_features)
        else:
            if feature_names is None:
                raise UsageError(f"{what}: column names need a DataFrame input")
            names = list(feature_names)
            if item not in names:
                raise UsageError(f"{what}: unknown column {item!r}")
            out.append(names.index(item))
    return out


def check_design(X) -> tuple[np.ndarray, list[str] | None]:
    names = None
    if hasattr(X, "columns"):
        names = [str(c) for c in X.columns]
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DataError("X must be 2-dimensional")
    bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
    if bad.size:
        raise DataError("X contains non-finite values", rows=bad.tolist())
    return arr, names
