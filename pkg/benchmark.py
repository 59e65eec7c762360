"""
Haversine benchmarking of ranked cities against known mine sites.
"""
import json
import logging
import math
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import EmptyMineSet, EmptyRows
from models import (BenchmarkReport, CityError, CityRecord, EmbeddingTable, FilteredVocabulary, GeoPoint,
                    MineRecord, ReducerModel)
from ranking import score_all, top_k_cities

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0

TECHNIQUE_LABELS = {
    "none": "No Dimensionality Reduction",
    "pca": "PCA",
    "ae": "Autoencoder",
    "vae": "Variational Autoencoder(VAE)",
    "vae-lstm": "VAE with LSTM",
}

REPORT_COLUMNS = ["technique", "keyword", "rank", "word", "city", "admin_name", "lat", "lng",
                  "nearest_mine", "error_km"]


def haversine_km(p: GeoPoint, q: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius 6371 km."""
    d_phi = q.phi - p.phi
    d_lam = q.lam - p.lam
    a = math.sin(d_phi / 2.0) ** 2 + math.cos(p.phi) * math.cos(q.phi) * math.sin(d_lam / 2.0) ** 2
    a = min(1.0, max(0.0, a))
    c = 2.0 * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))
    return EARTH_RADIUS_KM * c


def nearest_mine(city: GeoPoint, mines: Sequence[MineRecord]) -> Tuple[MineRecord, float]:
    """Closest mine to city; the earlier mine in file order wins ties."""
    if not mines:
        raise EmptyMineSet("no mines to compare against")
    best, best_distance = None, math.inf
    for mine in mines:
        distance = haversine_km(city, GeoPoint(mine.lat, mine.lng))
        if distance < best_distance:
            best, best_distance = mine, distance
    return best, best_distance


def rmse(rows: Sequence[Union[CityError, float]]) -> float:
    """Root mean square of error distances (CityError rows or plain numbers)."""
    if not rows:
        raise EmptyRows("RMSE of zero rows")
    distances = [r.distance_km if isinstance(r, CityError) else float(r) for r in rows]
    return math.sqrt(math.fsum(d * d for d in distances) / len(distances))


def run_benchmark(keyword: str, table: EmbeddingTable, model: ReducerModel, fvocab: FilteredVocabulary,
                  mines: Sequence[MineRecord], k: int = 10) -> BenchmarkReport:
    """
    Score, rank, and measure each top-k city's distance to its nearest mine.

    Returns:
        BenchmarkReport labelled with the model's kind; rmse_km is NaN when no city ranked
    """
    if not mines:
        raise EmptyMineSet("no mines to compare against")
    scores = score_all(keyword, table, model, fvocab)
    ranking = top_k_cities(scores, fvocab, k)

    rows = []
    for ranked in ranking:
        mine, distance = nearest_mine(GeoPoint(ranked.city.lat, ranked.city.lng), mines)
        rows.append(CityError(ranked=ranked, nearest_mine=mine, distance_km=distance))

    if rows:
        error = rmse(rows)
    else:
        logger.warning("no city ranked for '%s' with %s; rmse undefined", keyword, model.kind)
        error = float("nan")
    report = BenchmarkReport(technique=model.kind, keyword=keyword, rows=rows, rmse_km=error,
                             short_list=ranking.short_list)
    logger.info("%s: %d cities, rmse %.4f km", TECHNIQUE_LABELS.get(model.kind, model.kind), len(rows), error)
    return report


def random_baseline_rmse(cities: Sequence[CityRecord], mines: Sequence[MineRecord], k: int,
                         rng: np.random.Generator) -> float:
    """RMSE of k gazetteer cities drawn uniformly at random (with replacement when k > len)."""
    if not cities:
        raise EmptyRows("no cities to sample")
    picks = rng.choice(len(cities), size=k, replace=k > len(cities))
    distances = [nearest_mine(GeoPoint(cities[i].lat, cities[i].lng), mines)[1] for i in picks]
    return rmse(distances)


def baseline_frame(cities: Sequence[CityRecord], mines: Sequence[MineRecord], k: int,
                   seeds: Sequence[int]) -> pd.DataFrame:
    """Random-city RMSE for each seed, as `seed,rmse_km` rows."""
    rows = []
    for seed in seeds:
        error = random_baseline_rmse(cities, mines, k, np.random.default_rng(seed))
        rows.append({"seed": seed, "rmse_km": format_rmse(error)})
    return pd.DataFrame(rows, columns=["seed", "rmse_km"])


def emit_geojson(report: BenchmarkReport, mines: Sequence[MineRecord]) -> Dict[str, Any]:
    """FeatureCollection of ranked cities and mines; coordinates are [lng, lat]."""
    features = []
    for row in report.rows:
        city = row.ranked.city
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [city.lng, city.lat]},
            "properties": {
                "role": "city",
                "rank": row.ranked.rank,
                "word": row.ranked.word,
                "city": city.city,
                "admin_name": city.admin_name,
                "country": city.country,
                "score": row.ranked.score,
                "error_km": row.distance_km,
                "nearest_mine": row.nearest_mine.name,
            },
        })
    for mine in mines:
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [mine.lng, mine.lat]},
            "properties": {"role": "mine", "name": mine.name, "commodity": mine.commodity},
        })
    return {
        "type": "FeatureCollection",
        "features": features,
        "metadata": {
            "technique": report.technique,
            "keyword": report.keyword,
            "rmse_km": None if math.isnan(report.rmse_km) else report.rmse_km,
            "homonyms_deduplicated": report.homonyms_deduplicated,
        },
    }


def geojson_text(report: BenchmarkReport, mines: Sequence[MineRecord]) -> str:
    return json.dumps(emit_geojson(report, mines), indent=2) + "\n"


def report_frame(report: BenchmarkReport) -> pd.DataFrame:
    rows = [{
        "technique": report.technique,
        "keyword": report.keyword,
        "rank": row.ranked.rank,
        "word": row.ranked.word,
        "city": row.ranked.city.city,
        "admin_name": row.ranked.city.admin_name,
        "lat": f"{row.ranked.city.lat:.4f}",
        "lng": f"{row.ranked.city.lng:.4f}",
        "nearest_mine": row.nearest_mine.name,
        "error_km": f"{row.distance_km:.4f}",
    } for row in report.rows]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def format_rmse(value: float) -> str:
    return "n/a" if math.isnan(value) else f"{value:.4f}"


def summary_frame(reports: Sequence[BenchmarkReport]) -> pd.DataFrame:
    """One row per technique: label and RMSE in km."""
    return pd.DataFrame(
        [{"technique": TECHNIQUE_LABELS.get(r.technique, r.technique), "rmse_km": format_rmse(r.rmse_km)}
         for r in reports],
        columns=["technique", "rmse_km"],
    )


def format_summary_table(reports: Sequence[BenchmarkReport]) -> str:
    lines = ["Dimensionality Reduction Technique | Prediction Error(km)"]
    lines.extend(f"{TECHNIQUE_LABELS.get(r.technique, r.technique)} | {format_rmse(r.rmse_km)}" for r in reports)
    return "\n".join(lines)
