"""Dataset ingestion: station/forecast/observation CSV files, regular-grid
forecast files with bilinear interpolation to stations, rotated-pole
coordinate projection, and rolling training windows.

CSV schemas
-----------
stations.csv      station_id,lon,lat,x_km,y_km      (lon/lat may be empty)
forecasts.csv     date,station_id,member,value_c    (member is 1-based)
observations.csv  date,station_id,value_c

Missing values are empty fields; absent rows mean the same thing. Duplicate
keys are load errors that name the offending line.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EnsembleDataset, Station, StationSet, TrainingWindow, _readonly

log = logging.getLogger(__name__)

KM_PER_DEGREE = 111.2


class LoadError(ValueError):
    """Raised when an input file violates its schema."""


def _rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header plus (line_number, fields) for every data row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        body = [(i, row) for i, row in enumerate(reader, start=2) if row]
    return [h.strip() for h in header], body


def _check_header(path, header, expected):
    if header != list(expected):
        raise LoadError(f"{path}: header {header!r} does not match {list(expected)!r}")


def _parse_float(path, line, text, what, required):
    text = text.strip()
    if not text:
        if required:
            raise LoadError(f"{path} line {line}: missing {what}")
        return None
    try:
        return float(text)
    except ValueError:
        raise LoadError(f"{path} line {line}: bad {what} {text!r}") from None


def load_stations(path) -> StationSet:
    header, body = _rows(path)
    _check_header(path, header, ("station_id", "lon", "lat", "x_km", "y_km"))
    stations = []
    seen = set()
    for line, row in body:
        if len(row) != 5:
            raise LoadError(f"{path} line {line}: expected 5 fields, got {len(row)}")
        sid = row[0].strip()
        if not sid:
            raise LoadError(f"{path} line {line}: empty station id")
        if sid in seen:
            raise LoadError(f"{path} line {line}: duplicate station id {sid!r}")
        seen.add(sid)
        lon = _parse_float(path, line, row[1], "lon", required=False)
        lat = _parse_float(path, line, row[2], "lat", required=False)
        x = _parse_float(path, line, row[3], "x_km", required=True)
        y = _parse_float(path, line, row[4], "y_km", required=True)
        stations.append(Station(sid, x, y, lon, lat))
    if not stations:
        raise LoadError(f"{path}: no stations")
    return StationSet(stations)


def load_dataset(stations_path, forecasts_path, observations_path) -> EnsembleDataset:
    """Read the three CSV files into one aligned dataset."""
    stations = load_stations(stations_path)
    sindex = {sid: i for i, sid in enumerate(stations.ids)}

    header, body = _rows(forecasts_path)
    _check_header(forecasts_path, header, ("date", "station_id", "member", "value_c"))
    fc_rows = []
    seen_fc = set()
    n_members = 0
    for line, row in body:
        if len(row) != 4:
            raise LoadError(f"{forecasts_path} line {line}: expected 4 fields, got {len(row)}")
        date, sid, member_text = row[0].strip(), row[1].strip(), row[2].strip()
        if sid not in sindex:
            raise LoadError(f"{forecasts_path} line {line}: unknown station id {sid!r}")
        try:
            member = int(member_text)
        except ValueError:
            raise LoadError(f"{forecasts_path} line {line}: bad member {member_text!r}") from None
        if member < 1:
            raise LoadError(f"{forecasts_path} line {line}: member must be 1-based, got {member}")
        key = (date, sid, member)
        if key in seen_fc:
            raise LoadError(f"{forecasts_path} line {line}: duplicate (date, station, member) {key!r}")
        seen_fc.add(key)
        value = _parse_float(forecasts_path, line, row[3], "value_c", required=False)
        n_members = max(n_members, member)
        fc_rows.append((date, sid, member, value))
    if n_members == 0:
        raise LoadError(f"{forecasts_path}: no forecast rows")

    header, body = _rows(observations_path)
    _check_header(observations_path, header, ("date", "station_id", "value_c"))
    ob_rows = []
    seen_ob = set()
    for line, row in body:
        if len(row) != 3:
            raise LoadError(f"{observations_path} line {line}: expected 3 fields, got {len(row)}")
        date, sid = row[0].strip(), row[1].strip()
        if sid not in sindex:
            raise LoadError(f"{observations_path} line {line}: unknown station id {sid!r}")
        key = (date, sid)
        if key in seen_ob:
            raise LoadError(f"{observations_path} line {line}: duplicate (date, station) {key!r}")
        seen_ob.add(key)
        value = _parse_float(observations_path, line, row[2], "value_c", required=False)
        ob_rows.append((date, sid, value))

    days = sorted({r[0] for r in fc_rows} | {r[0] for r in ob_rows})
    day_index = {d: i for i, d in enumerate(days)}
    forecasts = np.full((len(days), len(stations), n_members), np.nan)
    observations = np.full((len(days), len(stations)), np.nan)
    for date, sid, member, value in fc_rows:
        if value is not None:
            forecasts[day_index[date], sindex[sid], member - 1] = value
    for date, sid, value in ob_rows:
        if value is not None:
            observations[day_index[date], sindex[sid]] = value

    dataset = EnsembleDataset(stations, days, forecasts, observations)
    log.info(
        "loaded %d stations, %d days, %d members (%d forecast rows, %d observation rows, %d eliminated days)",
        len(stations), len(days), n_members, len(fc_rows), len(ob_rows), int(dataset.eliminated.sum()),
    )
    return dataset


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def save_dataset(dataset: EnsembleDataset, stations_path, forecasts_path, observations_path) -> None:
    """Write the three CSV files; a reload reproduces the dataset exactly."""
    with open(stations_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("station_id", "lon", "lat", "x_km", "y_km"))
        for s in dataset.stations:
            w.writerow((s.id, _fmt(s.lon), _fmt(s.lat), _fmt(s.x), _fmt(s.y)))
    with open(forecasts_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("date", "station_id", "member", "value_c"))
        for di, day in enumerate(dataset.days):
            for si, sid in enumerate(dataset.stations.ids):
                for m in range(dataset.members):
                    w.writerow((day, sid, m + 1, _fmt(dataset.forecasts[di, si, m])))
    with open(observations_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("date", "station_id", "value_c"))
        for di, day in enumerate(dataset.days):
            for si, sid in enumerate(dataset.stations.ids):
                w.writerow((day, sid, _fmt(dataset.observations[di, si])))


@dataclass(frozen=True)
class GridForecast:
    """Regular grid of forecast values, one 2-D layer per member.

    values[m, j, i] sits at (x0 + i*dx, y0 + j*dy); layers are stored member
    major with members 1..M mapping to indices 0..M-1.
    """

    nx: int
    ny: int
    x0: float
    y0: float
    dx: float
    dy: float
    values: np.ndarray

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacing must be positive")
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != (self.ny, self.nx):
            raise ValueError(f"values shape {v.shape} does not match (M, {self.ny}, {self.nx})")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def members(self) -> int:
        return self.values.shape[0]


def load_grid(paths: Sequence) -> GridForecast:
    """Assemble one GridForecast from per-member grid files.

    Each file starts with a header line `nx,ny,x0,y0,dx,dy,member` followed by
    the ny*nx values in row-major order (row j varies slowest).
    """
    layers = {}
    geometry = None
    for path in paths:
        text = Path(path).read_text()
        lines = text.strip().splitlines()
        if not lines:
            raise LoadError(f"{path}: empty grid file")
        head = lines[0].split(",")
        if len(head) != 7:
            raise LoadError(f"{path}: bad grid header {lines[0]!r}")
        try:
            nx, ny = int(head[0]), int(head[1])
            x0, y0, dx, dy = (float(t) for t in head[2:6])
            member = int(head[6])
        except ValueError:
            raise LoadError(f"{path}: bad grid header {lines[0]!r}") from None
        geom = (nx, ny, x0, y0, dx, dy)
        if geometry is None:
            geometry = geom
        elif geom != geometry:
            raise LoadError(f"{path}: grid geometry {geom!r} differs from {geometry!r}")
        tokens = " ".join(lines[1:]).replace(",", " ").split()
        if len(tokens) != nx * ny:
            raise LoadError(f"{path}: expected {nx * ny} grid values, got {len(tokens)}")
        if member in layers:
            raise LoadError(f"{path}: duplicate member {member}")
        layers[member] = np.array([float(t) for t in tokens]).reshape(ny, nx)
    if not layers:
        raise LoadError("no grid files given")
    members = sorted(layers)
    if members != list(range(1, len(members) + 1)):
        raise LoadError(f"grid members {members} do not form 1..M")
    nx, ny, x0, y0, dx, dy = geometry
    return GridForecast(nx, ny, x0, y0, dx, dy, np.stack([layers[m] for m in members]))


def bilinear_interpolate(grid: GridForecast, station: Station) -> np.ndarray:
    """Per-member bilinear interpolation of the grid at the station.

    Exact (to rounding) for fields affine in the coordinates; stations outside
    the grid's bounding box are an error.
    """
    u = (station.x - grid.x0) / grid.dx
    v = (station.y - grid.y0) / grid.dy
    if not (0.0 <= u <= grid.nx - 1 and 0.0 <= v <= grid.ny - 1):
        raise ValueError(f"station {station.id!r} at ({station.x}, {station.y}) lies outside the grid")
    i = min(int(math.floor(u)), grid.nx - 2)
    j = min(int(math.floor(v)), grid.ny - 2)
    fu = u - i
    fv = v - j
    vals = grid.values
    return (
        vals[:, j, i] * (1 - fu) * (1 - fv)
        + vals[:, j, i + 1] * fu * (1 - fv)
        + vals[:, j + 1, i] * (1 - fu) * fv
        + vals[:, j + 1, i + 1] * fu * fv
    )


def project_rotated_pole(lon, lat, pole_lon: float, pole_lat: float, km_per_degree: float = KM_PER_DEGREE):
    """Rotated-pole projection to planar km coordinates.

    (pole_lon, pole_lat) is the geographic position of the rotated north pole.
    The convention puts rotated longitude zero on the meridian opposite the
    pole, so a pole at (180, 90) is the identity and a region "under" a pole
    placed on the far side of the globe gets small rotated coordinates.
    Rotated lon/lat are scaled by km_per_degree.
    """
    lon_arr = np.asarray(lon, dtype=float)
    lat_arr = np.asarray(lat, dtype=float)
    if np.any(np.abs(lat_arr) > 90.0) or abs(pole_lat) > 90.0:
        raise ValueError("latitudes must lie in [-90, 90]")
    lam = np.radians(lon_arr)
    phi = np.radians(lat_arr)
    lam_p = math.radians(pole_lon)
    phi_p = math.radians(pole_lat)

    dlam = lam - lam_p
    sin_phi_r = np.sin(phi) * math.sin(phi_p) + np.cos(phi) * math.cos(phi_p) * np.cos(dlam)
    phi_r = np.arcsin(np.clip(sin_phi_r, -1.0, 1.0))
    lam_r = np.arctan2(
        -np.cos(phi) * np.sin(dlam),
        -np.cos(phi) * math.sin(phi_p) * np.cos(dlam) + np.sin(phi) * math.cos(phi_p),
    )
    x = np.degrees(lam_r) * km_per_degree
    y = np.degrees(phi_r) * km_per_degree
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def rolling_windows(dataset: EnsembleDataset, window_length: int = 25) -> list[TrainingWindow]:
    """One training window per eligible target day.

    Eliminated days are excluded from both roles; each window holds the
    window_length most recent non-eliminated days strictly before its target.
    """
    if window_length < 1:
        raise ValueError("window_length must be positive")
    valid = dataset.non_eliminated_days()
    if len(valid) <= window_length:
        warnings.warn(
            f"only {len(valid)} usable days; need more than {window_length} for any window",
            stacklevel=2,
        )
        return []
    return [
        TrainingWindow(valid[k], tuple(valid[k - window_length:k]))
        for k in range(window_length, len(valid))
    ]


def read_key_values(path) -> dict:
    """key=value lines into a dict; '#' lines and blanks skipped.

    Values keep their raw text; callers coerce. Duplicate keys are an
    error so a manifest cannot silently contradict itself.
    """
    out: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise LoadError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in out:
                raise LoadError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out
