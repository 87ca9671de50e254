"""Seeded synthetic cities for smoke tests and the bundled fixture.

Pollutant levels follow an AR(1) around a base level plus same-day
exogenous effects (traffic raises, wind disperses, nearby generation adds),
so a model that reads the day's features should beat carrying yesterday's
value forward.
"""

from __future__ import annotations

import datetime as dt
import math
import os
from typing import Optional

import numpy as np

from .data import (
    CITY_HEADER,
    PLANT_HEADER,
    POLLUTANTS,
    PP_FEATURE,
    RAW_FEATURES,
    CityMeta,
    Fuel,
    PowerPlant,
    SampleRecord,
    power_plant_feature,
    serialize_records,
)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

_CITIES = (("Alderton", 40.0, -100.0), ("Brookfield", 35.5, -90.2), ("Carver", 45.1, -110.3))
_BASE = {"pm25": 28.0, "pm10": 15.0, "no2": 6.4, "o3": 20.8, "so2": 1.1, "co": 2.5}
_KM_PER_DEG = 6371.0 * math.pi / 180.0


def _offset(lat: float, lon: float, km: float, bearing: float) -> tuple:
    dlat = km * math.cos(bearing) / _KM_PER_DEG
    dlon = km * math.sin(bearing) / (_KM_PER_DEG * math.cos(math.radians(lat)))
    return round(lat + dlat, 6), round(lon + dlon, 6)


def _months(start: dt.date, n_days: int) -> list:
    seen = []
    for t in range(n_days):
        d = start + dt.timedelta(days=t)
        if (d.year, d.month) not in seen:
            seen.append((d.year, d.month))
    return seen


def _ar1(rng, n: int, phi: float, sd: float) -> np.ndarray:
    out = np.zeros(n)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + rng.normal(0.0, sd)
    return out


def make_fixture(
    seed: int = 7,
    n_days: int = 400,
    start: dt.date = dt.date(2019, 9, 1),
    missing_rate: float = 0.02,
    cities=_CITIES,
) -> tuple:
    """Returns ``(records, cities, plants)``; records carry ``pp_feature``."""
    rng = np.random.default_rng(seed)
    metas = {name: CityMeta(name, lat, lon) for name, lat, lon in cities}
    months = _months(start, n_days)
    plants = []
    for ci, meta in enumerate(metas.values()):
        for k in range(4):
            km = float(rng.uniform(3.0, 45.0))
            lat, lon = _offset(meta.lat, meta.lon, km, float(rng.uniform(0, 2 * math.pi)))
            base = float(rng.uniform(50.0, 500.0))
            gen = {
                (y, m): round(base * (1.0 + 0.2 * math.sin(2 * math.pi * m / 12.0)) + float(rng.normal(0, 10)), 3)
                for (y, m) in months
            }
            gen = {key: max(g, 0.0) for key, g in gen.items()}
            plants.append(PowerPlant(f"P{ci}{k}", lat, lon, list(Fuel)[k % 4], gen))

    records = []
    for meta in metas.values():
        dates = [start + dt.timedelta(days=t) for t in range(n_days)]
        doy = np.array([d.timetuple().tm_yday for d in dates])
        season = np.sin(2 * np.pi * doy / 365.25)
        weekend = np.array([d.weekday() >= 5 for d in dates], dtype=float)
        lockdown = np.array([dt.date(2020, 3, 15) <= d <= dt.date(2020, 5, 31) for d in dates], dtype=float)
        temperature = 15 + 10 * season + _ar1(rng, n_days, 0.7, 1.5)
        dew = temperature - 5 - np.abs(rng.normal(0, 2, n_days))
        humidity = np.clip(60 + _ar1(rng, n_days, 0.5, 8.0), 5, 100)
        pressure = 1013 + _ar1(rng, n_days, 0.8, 2.0)
        wind_speed = np.clip(5 + _ar1(rng, n_days, 0.4, 1.8), 0.2, None)
        wind_gust = wind_speed * 1.5 + np.abs(rng.normal(0, 1, n_days))
        traffic = np.clip(30 * (1 - 0.25 * weekend) * (1 - 0.45 * lockdown) + rng.normal(0, 3.0, n_days), 0, None)
        pop_home = 0.2 + 0.1 * weekend + 0.15 * lockdown + rng.normal(0, 0.02, n_days)
        pp = np.array([power_plant_feature(meta, plants, (d.year, d.month)) for d in dates])
        feats = {
            "pop_home": pop_home,
            "traffic_mmiles": traffic,
            "pressure": pressure,
            "humidity": humidity,
            "temperature": temperature,
            "dew": dew,
            "wind_gust": wind_gust,
            "wind_speed": wind_speed,
        }
        feats = {k: np.round(v, 3) for k, v in feats.items()}
        pp = np.round(pp, 6)
        levels = {}
        for p in POLLUTANTS:
            b = _BASE[p]
            drive = (
                0.20 * (feats["traffic_mmiles"] - 25.0) / 6.0
                - 0.25 * (feats["wind_speed"] - 5.0) / 2.0
                + 0.10 * (feats["humidity"] - 60.0) / 9.0
                + 0.05 * (pp - pp.mean()) / (pp.std() + 1e-9)
            )
            level = np.zeros(n_days)
            level[0] = b
            for t in range(1, n_days):
                level[t] = b + 0.5 * (level[t - 1] - b) + 0.5 * b * (drive[t] + rng.normal(0, 0.05))
            levels[p] = np.round(np.clip(level, 0.05 * b, None), 3)
        for t, d in enumerate(dates):
            targets = {p: (None if rng.random() < missing_rate else float(levels[p][t])) for p in POLLUTANTS}
            fvals = {f: (None if rng.random() < missing_rate else float(feats[f][t])) for f in RAW_FEATURES}
            fvals[PP_FEATURE] = float(pp[t])
            records.append(SampleRecord(meta.city, d, targets, fvals))
    return records, metas, plants


def make_lagged_fixture(seed: int = 11, lag: int = 10, n_days: int = 400, start: dt.date = dt.date(2019, 9, 1), cities=_CITIES) -> list:
    """Records whose pm25 level is driven by humidity ``lag`` days earlier
    and nothing else; only windows reaching back ``lag`` days can explain it."""
    rng = np.random.default_rng(seed)
    records = []
    for name, _, _ in cities:
        drive = rng.normal(0.0, 1.0, n_days)
        noise = rng.normal(0.0, 0.3, n_days)
        for t in range(n_days):
            d = start + dt.timedelta(days=t)
            feats = {f: round(float(rng.normal(0.0, 1.0)), 4) for f in RAW_FEATURES}
            feats["humidity"] = round(float(drive[t]), 4)
            feats[PP_FEATURE] = 0.0
            level = 20.0 + 6.0 * drive[t - lag] + noise[t] if t >= lag else 20.0 + noise[t]
            targets = {p: None for p in POLLUTANTS}
            targets["pm25"] = round(float(level), 4)
            records.append(SampleRecord(name, d, targets, feats))
    return records


def write_fixture(path: str, seed: int = 7, n_days: int = 400) -> None:
    """Write ``samples.csv``, ``cities.csv`` and ``plants.csv`` into ``path``."""
    records, metas, plants = make_fixture(seed=seed, n_days=n_days)
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "samples.csv"), "w", encoding="utf-8", newline="") as fh:
        serialize_records(records, fh, with_pp=False)
    with open(os.path.join(path, "cities.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CITY_HEADER) + "\n")
        for m in metas.values():
            fh.write(f"{m.city},{m.lat!r},{m.lon!r}\n")
    with open(os.path.join(path, "plants.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(PLANT_HEADER) + "\n")
        for p in plants:
            for (y, mo), g in sorted(p.generation.items()):
                fh.write(f"{p.plant_id},{p.lat!r},{p.lon!r},{p.fuel.value},{y},{mo},{g!r}\n")


def fixture_dir(path: Optional[str] = None) -> str:
    """Directory of the bundled fixture (created on first use if absent)."""
    path = path or FIXTURE_DIR
    if not os.path.exists(os.path.join(path, "samples.csv")):
        write_fixture(path)
    return path
