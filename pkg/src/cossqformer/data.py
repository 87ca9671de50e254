"""City/day records: parsing, power-plant feature, imputation, split and windows.

File schemas (UTF-8, comma separated, ``.`` decimals, blank cell = missing):

* ``samples.csv``: ``city,date,pm25_med,pm10_med,no2_med,o3_med,so2_med,co_med,
  pop_home,traffic_mmiles,pressure,humidity,temperature,dew,wind_gust,wind_speed``
  with an optional trailing ``pp_feature`` column.
* ``plants.csv``: ``plant_id,lat,lon,fuel,year,month,gen_daily_avg``
* ``cities.csv``: ``city,lat,lon``
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

POLLUTANTS = ("pm25", "pm10", "no2", "o3", "so2", "co")
POLLUTANT_LABELS = {
    "pm25": "PM2.5",
    "pm10": "PM10",
    "no2": "NO2",
    "o3": "O3",
    "so2": "SO2",
    "co": "CO",
}
RAW_FEATURES = (
    "pop_home",
    "traffic_mmiles",
    "pressure",
    "humidity",
    "temperature",
    "dew",
    "wind_gust",
    "wind_speed",
)
PP_FEATURE = "pp_feature"
FEATURES = RAW_FEATURES + (PP_FEATURE,)
SAMPLE_HEADER = ("city", "date") + tuple(f"{p}_med" for p in POLLUTANTS) + RAW_FEATURES
PLANT_HEADER = ("plant_id", "lat", "lon", "fuel", "year", "month", "gen_daily_avg")
CITY_HEADER = ("city", "lat", "lon")

EARTH_RADIUS_KM = 6371.0
R_LIMIT_KM = 30.0
TEST_START = dt.date(2020, 3, 1)
TEST_END = dt.date(2020, 4, 29)  # inclusive; 60 days


class DataError(ValueError):
    """Input data violates a documented schema or invariant."""


class FeatureError(DataError):
    pass


class Fuel(str, enum.Enum):
    COAL = "Coal"
    OIL = "Oil"
    GAS = "Gas"
    BIOMASS = "Biomass"


@dataclass(frozen=True)
class SampleRecord:
    city: str
    date: dt.date
    targets: dict
    features: dict

    def target(self, pollutant: str) -> Optional[float]:
        return self.targets.get(pollutant)


@dataclass(frozen=True)
class CityMeta:
    city: str
    lat: float
    lon: float


@dataclass
class PowerPlant:
    plant_id: str
    lat: float
    lon: float
    fuel: Fuel
    generation: dict = field(default_factory=dict)  # (year, month) -> average daily generation


@dataclass(frozen=True)
class SeriesWindow:
    """``seq_len`` consecutive days ending on ``end_date``.

    ``features`` has one row per day: the day's features followed by the
    previous day's pollutant level. ``target`` is the observed level on
    ``end_date``; ``prev_value`` is the level fed in for the day before it.
    """

    city: str
    pollutant: str
    features: np.ndarray
    target: float
    end_date: dt.date

    @property
    def prev_value(self) -> float:
        return float(self.features[-1, -1])

    @property
    def seq_len(self) -> int:
        return self.features.shape[0]

    @property
    def start_date(self) -> dt.date:
        return self.end_date - dt.timedelta(days=self.seq_len - 1)


def _cell(text: str, line: int, column: str) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}: column {column!r}: non-finite value {text!r}")
    return value


def _header(reader, expected: Sequence[str], what: str, optional: Sequence[str] = ()) -> list:
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{what}: empty file (no header)") from None
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    if header[: len(expected)] != list(expected) or header[len(expected):] not in (
        [],
        list(optional),
    ):
        raise DataError(f"{what}: header {header} does not match {list(expected)}")
    return header


def parse_records(stream: TextIO) -> list:
    """Parse ``samples.csv`` rows into records, one per (city, date)."""
    reader = csv.reader(stream)
    header = _header(reader, SAMPLE_HEADER, "samples.csv", optional=(PP_FEATURE,))
    has_pp = len(header) > len(SAMPLE_HEADER)
    records = []
    seen = set()
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {line}: expected {len(header)} cells, got {len(row)}")
        city = row[0].strip()
        if not city:
            raise DataError(f"line {line}: empty city")
        try:
            date = dt.date.fromisoformat(row[1].strip())
        except ValueError:
            raise DataError(f"line {line}: bad date {row[1]!r}") from None
        if (city, date) in seen:
            raise DataError(f"line {line}: duplicate record for ({city}, {date.isoformat()})")
        seen.add((city, date))
        targets = {
            p: _cell(row[2 + i], line, f"{p}_med") for i, p in enumerate(POLLUTANTS)
        }
        base = 2 + len(POLLUTANTS)
        features = {f: _cell(row[base + i], line, f) for i, f in enumerate(RAW_FEATURES)}
        features[PP_FEATURE] = _cell(row[-1], line, PP_FEATURE) if has_pp else None
        for name in ("traffic_mmiles", PP_FEATURE):
            if features[name] is not None and features[name] < 0:
                raise DataError(f"line {line}: {name} must be >= 0")
        records.append(SampleRecord(city, date, targets, features))
    return records


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def serialize_records(records: Iterable[SampleRecord], stream: TextIO, with_pp: Optional[bool] = None) -> None:
    records = list(records)
    if with_pp is None:
        with_pp = any(r.features.get(PP_FEATURE) is not None for r in records)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SAMPLE_HEADER + ((PP_FEATURE,) if with_pp else ()))
    for r in records:
        row = [r.city, r.date.isoformat()]
        row += [_fmt(r.targets.get(p)) for p in POLLUTANTS]
        row += [_fmt(r.features.get(f)) for f in RAW_FEATURES]
        if with_pp:
            row.append(_fmt(r.features.get(PP_FEATURE)))
        writer.writerow(row)


def _coord(lat: Optional[float], lon: Optional[float], line: int) -> tuple:
    if lat is None or lon is None or not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
        raise DataError(f"line {line}: invalid coordinates ({lat}, {lon})")
    return lat, lon


def parse_cities(stream: TextIO) -> dict:
    reader = csv.reader(stream)
    _header(reader, CITY_HEADER, "cities.csv")
    cities = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"line {line}: expected 3 cells, got {len(row)}")
        lat, lon = _coord(_cell(row[1], line, "lat"), _cell(row[2], line, "lon"), line)
        name = row[0].strip()
        if name in cities:
            raise DataError(f"line {line}: duplicate city {name!r}")
        cities[name] = CityMeta(name, lat, lon)
    return cities


def parse_plants(stream: TextIO) -> list:
    reader = csv.reader(stream)
    _header(reader, PLANT_HEADER, "plants.csv")
    plants: dict = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(PLANT_HEADER):
            raise DataError(f"line {line}: expected {len(PLANT_HEADER)} cells, got {len(row)}")
        pid = row[0].strip()
        lat, lon = _coord(_cell(row[1], line, "lat"), _cell(row[2], line, "lon"), line)
        try:
            fuel = Fuel(row[3].strip().capitalize())
        except ValueError:
            raise DataError(f"line {line}: unknown fuel {row[3]!r}") from None
        try:
            year, month = int(row[4]), int(row[5])
        except ValueError:
            raise DataError(f"line {line}: bad year/month") from None
        if not 1 <= month <= 12:
            raise DataError(f"line {line}: month {month} out of range")
        gen = _cell(row[6], line, "gen_daily_avg")
        if gen is None or gen < 0:
            raise DataError(f"line {line}: gen_daily_avg must be a non-negative number")
        plant = plants.get(pid)
        if plant is None:
            plant = plants[pid] = PowerPlant(pid, lat, lon, fuel)
        elif (plant.lat, plant.lon) != (lat, lon):
            raise DataError(f"line {line}: plant {pid!r} moved")
        plant.generation[(year, month)] = gen
    return list(plants.values())


def haversine_km(a: tuple, b: tuple) -> float:
    """Great-circle distance in km between ``(lat, lon)`` pairs in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def power_plant_feature(city: CityMeta, plants: Iterable[PowerPlant], year_month: tuple, r_limit: float = R_LIMIT_KM) -> float:
    """Sum of ``G_p / r^2`` over plants strictly closer than ``r_limit`` km.

    Plants without a generation figure for the month contribute nothing; so
    does a plant sitting exactly on the city centre (r = 0).
    """
    total = 0.0
    for p in plants:
        g = p.generation.get(tuple(year_month))
        if g is None:
            continue
        r = haversine_km((city.lat, city.lon), (p.lat, p.lon))
        if 0.0 < r < r_limit:
            total += g / (r * r)
    return total


def attach_power_plant_feature(records: Iterable[SampleRecord], cities: dict, plants: Sequence[PowerPlant]) -> list:
    """Fill each record's ``pp_feature`` from its month's plant generation."""
    cache: dict = {}
    out = []
    for r in records:
        meta = cities.get(r.city)
        if meta is None:
            raise DataError(f"city {r.city!r} missing from cities.csv")
        key = (r.city, r.date.year, r.date.month)
        if key not in cache:
            cache[key] = power_plant_feature(meta, plants, (r.date.year, r.date.month))
        feats = dict(r.features)
        feats[PP_FEATURE] = cache[key]
        out.append(replace(r, features=feats))
    return out


def is_test_date(date: dt.date) -> bool:
    return TEST_START <= date <= TEST_END


def split_train_test(records: Iterable[SampleRecord]) -> tuple:
    """Per city, the fixed 60-day test segment vs everything else."""
    train, test = [], []
    for r in records:
        (test if is_test_date(r.date) else train).append(r)
    return train, test


def group_by_city(records: Iterable[SampleRecord]) -> dict:
    groups: dict = {}
    for r in records:
        groups.setdefault(r.city, []).append(r)
    for rs in groups.values():
        rs.sort(key=lambda r: r.date)
    return dict(sorted(groups.items()))


def impute(records: Iterable[SampleRecord]) -> list:
    """Forward-fill features within each city; leading gaps take the city's
    training-period median. Targets are left untouched."""
    out = []
    for city, rs in group_by_city(records).items():
        medians = {}
        for f in FEATURES:
            train_vals = [r.features.get(f) for r in rs if not is_test_date(r.date)]
            train_vals = [v for v in train_vals if v is not None]
            if not train_vals:
                train_vals = [r.features.get(f) for r in rs if r.features.get(f) is not None]
            if not train_vals:
                raise FeatureError(f"city {city!r} has no observations of feature {f!r}")
            medians[f] = float(np.median(train_vals))
        last: dict = {}
        for r in rs:
            feats = dict(r.features)
            for f in FEATURES:
                if feats.get(f) is None:
                    feats[f] = last.get(f, medians[f])
                else:
                    last[f] = feats[f]
            out.append(replace(r, features=feats))
    return out


def build_windows(records: Iterable[SampleRecord], pollutant: str, seq_len: int) -> list:
    """Sliding windows over consecutive calendar days.

    A window ending on day ``t`` needs days ``t - seq_len .. t`` present
    (the extra leading day supplies the first previous-day value) and an
    observed target on ``t``. A missing previous-day level falls back to the
    city's last observed level; with none available the window is skipped.
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    if pollutant not in POLLUTANTS:
        raise ValueError(f"unknown pollutant {pollutant!r}")
    windows = []
    for city, rs in group_by_city(records).items():
        n = len(rs)
        carried: list = []
        last = None
        for r in rs:
            # carried[i]: most recent observed level up to and including day i
            v = r.targets.get(pollutant)
            if v is not None:
                last = v
            carried.append(last)
        day = np.array([r.date.toordinal() for r in rs])
        feats = np.array(
            [[np.nan if r.features.get(f) is None else r.features[f] for f in FEATURES] for r in rs],
            dtype=np.float64,
        ).reshape(n, len(FEATURES))
        for e in range(seq_len, n):
            s = e - seq_len
            if day[e] - day[s] != seq_len:
                continue
            target = rs[e].targets.get(pollutant)
            if target is None:
                continue
            prev = carried[s:e]
            if any(p is None for p in prev):
                continue
            block = feats[s + 1 : e + 1]
            if np.isnan(block).any():
                raise DataError(f"{city}: features missing in window ending {rs[e].date}; impute first")
            mat = np.column_stack([block, np.asarray(prev, dtype=np.float64)])
            mat.flags.writeable = False
            windows.append(SeriesWindow(city, pollutant, mat, float(target), rs[e].date))
    return windows


def window_touches_test(w: SeriesWindow) -> bool:
    """True if any day feeding the window (incl. the previous-day level) is a test day."""
    first = w.start_date - dt.timedelta(days=1)
    return not (w.end_date < TEST_START or first > TEST_END)


def split_windows(windows: Iterable[SeriesWindow]) -> tuple:
    """Test windows end inside the test segment; train windows never touch it."""
    train, test = [], []
    for w in windows:
        if is_test_date(w.end_date):
            test.append(w)
        elif not window_touches_test(w):
            train.append(w)
    return train, test


def prepare_windows(records: Iterable[SampleRecord], pollutant: str, seq_len: int) -> tuple:
    """Impute, window and split: returns ``(train_windows, test_windows)``."""
    return split_windows(build_windows(impute(records), pollutant, seq_len))


def summarize_distribution(records: Iterable[SampleRecord], name: str) -> tuple:
    """25th/50th/75th percentiles (linear interpolation) of a target or feature."""
    if name in POLLUTANTS:
        values = [r.targets.get(name) for r in records]
    elif name in FEATURES:
        values = [r.features.get(name) for r in records]
    else:
        raise ValueError(f"unknown field {name!r}")
    values = [v for v in values if v is not None]
    if not values:
        raise DataError(f"no observed values for {name!r}")
    q = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])


def load_directory(path: str) -> list:
    """Read ``samples.csv`` (+ ``cities.csv`` / ``plants.csv``) from ``path``.

    The power-plant feature is computed when both auxiliary files exist;
    otherwise ``samples.csv`` must carry a ``pp_feature`` column.
    """
    samples = os.path.join(path, "samples.csv")
    if not os.path.exists(samples):
        raise DataError(f"{samples} not found")
    with open(samples, encoding="utf-8", newline="") as fh:
        records = parse_records(fh)
    cities_path = os.path.join(path, "cities.csv")
    plants_path = os.path.join(path, "plants.csv")
    if os.path.exists(cities_path) and os.path.exists(plants_path):
        with open(cities_path, encoding="utf-8", newline="") as fh:
            cities = parse_cities(fh)
        with open(plants_path, encoding="utf-8", newline="") as fh:
            plants = parse_plants(fh)
        records = attach_power_plant_feature(records, cities, plants)
    elif records and all(r.features.get(PP_FEATURE) is None for r in records):
        raise DataError(f"{path}: need cities.csv and plants.csv, or a pp_feature column")
    return records


def records_to_csv(records: Iterable[SampleRecord]) -> str:
    buf = io.StringIO()
    serialize_records(records, buf)
    return buf.getvalue()
