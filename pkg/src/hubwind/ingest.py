"""CSV schemas, validation and 10-minute alignment of input series.

All files are UTF-8 with a header row, '.' decimals and ISO-8601 UTC
timestamps. Times are carried internally as integer minutes since
``hubwind.core.DEFAULT_ORIGIN``.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from hubwind.core import DEFAULT_ORIGIN, TIME_STEP_MINUTES, GeoLocation, direction_components
from hubwind.evaluation import hourly_to_ten_minute

STATION_COLUMNS = ["station_id", "k_50", "lambda_50", "k_75", "lambda_75", "k_100", "lambda_100",
                   "mean50", "mean100"]
WIND_COLUMNS = ["station_id", "timestamp", "speed_ms", "direction_deg"]
REANALYSIS_COLUMNS = ["station_id", "timestamp", "w10", "w50", "w75", "w100"]
TARGET_COLUMNS = ["site_id", "hub_height_m", "mean50", "mean100"]
PREDICTION_COLUMNS = ["site_id", "timestamp", "speed_mean", "sqrt_mean", "sqrt_var", "lo", "hi"]
FARM_COLUMNS = ["site_id", "timestamp", "speed_ms"]
BASELINE_COLUMNS = ["site_id", "timestamp", "w10", "w100"]

_ORIGIN = pd.Timestamp(DEFAULT_ORIGIN)


class SchemaError(ValueError):
    """Input file violates its schema; message names the file, row and column."""

    def __init__(self, path, message, row=None, column=None):
        where = f"{path}"
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column '{column}'"
        super().__init__(f"{where}: {message}")
        self.path, self.row, self.column = path, row, column


def _read(path, required):
    try:
        df = pd.read_csv(path, dtype={required[0]: str}, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise SchemaError(path, f"cannot read CSV ({exc})") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(path, f"missing columns {missing}")
    return df


def _numeric(df, column, path, lo=None, hi=None, allow_missing=False):
    values = pd.to_numeric(df[column], errors="coerce")
    bad = values.isna() & (df[column].notna() | (not allow_missing))
    if lo is not None:
        bad |= values < lo
    if hi is not None:
        bad |= values > hi
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(path, f"invalid value {df[column].iloc[i]!r}", row=i + 2, column=column)
    return values.to_numpy(dtype=float)


def to_epoch_minutes(timestamps, path="<timestamps>"):
    ts = pd.to_datetime(pd.Series(timestamps), utc=True, errors="coerce", format="ISO8601")
    if ts.isna().any():
        i = int(np.flatnonzero(ts.isna().to_numpy())[0])
        raise SchemaError(path, f"bad timestamp {pd.Series(timestamps).iloc[i]!r}", row=i + 2,
                          column="timestamp")
    return ((ts - _ORIGIN) // pd.Timedelta(minutes=1)).to_numpy(dtype=np.int64)


def to_iso(epoch_minutes):
    ts = _ORIGIN + pd.to_timedelta(np.asarray(epoch_minutes, dtype=np.int64), unit="min")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def month_of(epoch_minutes):
    ts = _ORIGIN + pd.to_timedelta(np.asarray(epoch_minutes, dtype=np.int64), unit="min")
    return np.asarray(ts.strftime("%Y-%m"))


def hour_of_day(epoch_minutes):
    return (np.asarray(epoch_minutes) % 1440) / 60.0


def _coordinates(df, path, projection):
    if {"x_km", "y_km"} <= set(df.columns):
        return _numeric(df, "x_km", path), _numeric(df, "y_km", path)
    if {"lon", "lat"} <= set(df.columns):
        if projection is None:
            raise SchemaError(path, "lon/lat given but no projection reference configured")
        lon, lat = _numeric(df, "lon", path), _numeric(df, "lat", path)
        pts = [GeoLocation.from_lonlat(a, b, projection["ref_lon"], projection["ref_lat"])
               for a, b in zip(lon, lat)]
        return np.array([p.x for p in pts]), np.array([p.y for p in pts])
    raise SchemaError(path, "need x_km, y_km or lon, lat columns")


def read_stations(path, projection=None) -> pd.DataFrame:
    df = _read(path, STATION_COLUMNS)
    x, y = _coordinates(df, path, projection)
    out = pd.DataFrame({"station_id": df["station_id"].astype(str), "x_km": x, "y_km": y})
    for col in STATION_COLUMNS[1:]:
        out[col] = _numeric(df, col, path, lo=1e-12)
    if out["station_id"].duplicated().any():
        raise SchemaError(path, "duplicate station_id", column="station_id")
    return out.set_index("station_id")


def read_targets(path, projection=None) -> pd.DataFrame:
    df = _read(path, TARGET_COLUMNS)
    x, y = _coordinates(df, path, projection)
    out = pd.DataFrame({"site_id": df["site_id"].astype(str), "x_km": x, "y_km": y})
    out["hub_height_m"] = _numeric(df, "hub_height_m", path, lo=50.0, hi=100.0)
    out["mean50"] = _numeric(df, "mean50", path, lo=1e-12)
    out["mean100"] = _numeric(df, "mean100", path, lo=1e-12)
    if out["site_id"].duplicated().any():
        raise SchemaError(path, "duplicate site_id", column="site_id")
    return out.set_index("site_id")


def _check_monotone(ids, epochs, path):
    for sid in pd.unique(ids):
        idx = np.flatnonzero(ids == sid)
        steps = np.diff(epochs[idx])
        if np.any(steps <= 0):
            bad = idx[1:][steps <= 0][0]
            raise SchemaError(path, f"non-monotone timestamps for '{sid}'", row=int(bad) + 2,
                              column="timestamp")


def _align_station(epochs, speed, direction):
    u, v = direction_components(direction)
    # smallest step is the native cadence; larger steps are gaps
    cadence = int(np.min(np.diff(epochs))) if len(epochs) > 1 else TIME_STEP_MINUTES
    if cadence < TIME_STEP_MINUTES or np.any(epochs % TIME_STEP_MINUTES):
        bucket = epochs - epochs % TIME_STEP_MINUTES
        frame = pd.DataFrame({"bucket": bucket, "speed": speed, "uu": u, "vv": v})
        agg = frame.groupby("bucket", sort=True).mean()
        times = agg.index.to_numpy(dtype=np.int64)
        # vector mean of unit directions keeps calm-wind buckets well defined
        uu, vv = agg["uu"].to_numpy(), agg["vv"].to_numpy()
        return times, agg["speed"].to_numpy(), _angle(uu, vv)
    if cadence == TIME_STEP_MINUTES:
        return epochs, speed, direction
    if cadence % TIME_STEP_MINUTES:
        raise ValueError(f"cadence of {cadence} min does not divide into 10-minute steps")
    grid, s = hourly_to_ten_minute(epochs, speed, cadence)
    _, uu = hourly_to_ten_minute(epochs, u, cadence)
    _, vv = hourly_to_ten_minute(epochs, v, cadence)
    keep = np.isfinite(s)
    return grid[keep], s[keep], _angle(uu[keep], vv[keep])


def _angle(u, v):
    """Inverse of :func:`direction_components` (FROM-direction in degrees)."""
    return np.mod(np.rad2deg(np.arctan2(-u, -v)), 360.0)


def ingest_station_csv(path) -> pd.DataFrame:
    """Validated 10-minute station series: columns station_id, epoch, speed,
    direction.

    Sub-10-minute records are averaged per bucket (directions as unit
    vectors); coarser records, such as hourly stations, are linearly
    interpolated between consecutive points.
    """
    df = _read(path, WIND_COLUMNS)
    ids = df["station_id"].astype(str).to_numpy()
    epochs = to_epoch_minutes(df["timestamp"], path)
    speed = _numeric(df, "speed_ms", path, lo=0.0)
    direction = np.mod(_numeric(df, "direction_deg", path), 360.0)
    _check_monotone(ids, epochs, path)
    parts = []
    for sid in pd.unique(ids):
        sel = ids == sid
        t, s, d = _align_station(epochs[sel], speed[sel], direction[sel])
        parts.append(pd.DataFrame({"station_id": sid, "epoch": t, "speed": s, "direction": d}))
    return pd.concat(parts, ignore_index=True)


def read_reanalysis(path) -> pd.DataFrame:
    df = _read(path, REANALYSIS_COLUMNS)
    out = pd.DataFrame({"station_id": df["station_id"].astype(str),
                        "epoch": to_epoch_minutes(df["timestamp"], path)})
    for col in REANALYSIS_COLUMNS[2:]:
        out[col] = _numeric(df, col, path, lo=0.0)
    if "direction_deg" in df.columns:
        # optional 10 m direction; without it the direction terms of the shear model vanish
        out["direction_deg"] = np.mod(_numeric(df, "direction_deg", path), 360.0)
    _check_monotone(out["station_id"].to_numpy(), out["epoch"].to_numpy(), path)
    return out


def read_site_series(path, columns) -> pd.DataFrame:
    df = _read(path, columns)
    out = pd.DataFrame({"site_id": df["site_id"].astype(str),
                        "epoch": to_epoch_minutes(df["timestamp"], path)})
    for col in columns[2:]:
        out[col] = _numeric(df, col, path, lo=0.0, allow_missing=True)
    return out


def write_csv_atomic(df: pd.DataFrame, path, **kwargs):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        df.to_csv(fh, index=False, lineterminator="\n", **kwargs)
    os.replace(tmp, path)


def write_text_atomic(text: str, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
