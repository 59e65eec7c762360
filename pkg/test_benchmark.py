#!/usr/bin/env python3
"""
Tests for haversine distances, nearest-mine lookup, RMSE, reports and GeoJSON,
plus the planted-resource end-to-end check.
"""
import json
import math
import tempfile
from pathlib import Path

import geopandas as gpd
import numpy as np

from benchmark import (EARTH_RADIUS_KM, TECHNIQUE_LABELS, baseline_frame, emit_geojson, format_summary_table,
                       geojson_text, haversine_km, nearest_mine, random_baseline_rmse, report_frame, rmse,
                       run_benchmark, summary_frame)
from config import derive_seed
from corpus_pipeline import load_stop_words, process_corpus
from errors import EmptyMineSet, EmptyRows, InvalidCoordinate
from fixtures import make_city, planted_resource_world
from gazetteer import filter_vocabulary
from glove import accumulate_cooc, build_vocabulary, train_glove
from models import (BenchmarkReport, EmbeddingTable, FilteredVocabulary, GeoPoint, GloveConfig, MineRecord,
                    ReducerSpec, Vocabulary)
from reducers import fit_reducer


def _law_of_cosines_km(p, q):
    value = (math.sin(p.phi) * math.sin(q.phi)
             + math.cos(p.phi) * math.cos(q.phi) * math.cos(q.lam - p.lam))
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, value)))


def _mine(name, lat, lng):
    return MineRecord(name=name, lat=lat, lng=lng, commodity="lithium")


def test_haversine_examples():
    p = GeoPoint(12.5, -45.0)
    assert haversine_km(p, p) == 0.0
    assert abs(haversine_km(GeoPoint(0.0, 0.0), GeoPoint(0.0, 180.0)) - math.pi * 6371.0) < 1e-6
    assert abs(haversine_km(GeoPoint(0.0, 0.0), GeoPoint(0.0, 180.0)) - 20015.0868) < 1e-4
    assert abs(haversine_km(GeoPoint(90.0, 0.0), GeoPoint(0.0, 0.0)) - 10007.5434) < 1e-4


def test_haversine_matches_law_of_cosines():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
        q = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
        d, oracle = haversine_km(p, q), _law_of_cosines_km(p, q)
        if oracle < 1.0:
            assert abs(d - oracle) < 1e-6
        else:
            assert abs(d - oracle) / oracle < 1e-6
        assert d == haversine_km(q, p) or abs(d - haversine_km(q, p)) < 1e-9


def test_haversine_bounds_and_triangle_inequality():
    rng = np.random.default_rng(1)
    half_circumference = math.pi * EARTH_RADIUS_KM
    for _ in range(300):
        p, q, r = (GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180))) for _ in range(3))
        pq, qr, pr = haversine_km(p, q), haversine_km(q, r), haversine_km(p, r)
        assert 0.0 <= pq <= half_circumference + 1e-9
        assert pr <= pq + qr + 1e-6


def test_geopoint_rejects_out_of_range_coordinates():
    GeoPoint(90.0, -180.0)
    GeoPoint(-90.0, 180.0)
    for lat, lng in ((90.5, 0.0), (-91.0, 0.0), (0.0, 180.5), (0.0, -200.0), (float("nan"), 0.0)):
        try:
            GeoPoint(lat, lng)
            assert False, f"expected InvalidCoordinate for ({lat}, {lng})"
        except InvalidCoordinate:
            pass


def test_rmse_never_drops_when_one_error_grows():
    rng = np.random.default_rng(4)
    for _ in range(200):
        distances = list(rng.uniform(0.0, 5000.0, size=int(rng.integers(1, 12))))
        before = rmse(distances)
        grown = list(distances)
        grown[int(rng.integers(len(grown)))] += float(rng.uniform(0.0, 1000.0))
        assert rmse(grown) >= before
        assert min(distances) - 1e-9 <= before <= max(distances) + 1e-9


def test_nearest_mine():
    city = GeoPoint(-33.85, 116.06)
    only = _mine("Greenbushes", -33.85, 116.0)
    assert nearest_mine(city, [only])[0] is only

    mines = [_mine("A", 10.0, 10.0), _mine("B", -33.85, 116.06), _mine("C", 40.0, -100.0)]
    mine, distance = nearest_mine(city, mines)
    assert mine.name == "B" and distance == 0.0

    twins = [_mine("first", 1.0, 0.0), _mine("second", -1.0, 0.0)]
    assert nearest_mine(GeoPoint(0.0, 0.0), twins)[0].name == "first"

    try:
        nearest_mine(city, [])
        assert False, "expected EmptyMineSet"
    except EmptyMineSet:
        pass


def test_nearest_mine_matches_double_loop():
    rng = np.random.default_rng(3)
    cities = [GeoPoint(float(rng.uniform(-80, 80)), float(rng.uniform(-180, 180))) for _ in range(5)]
    mines = [_mine(f"m{i}", float(rng.uniform(-80, 80)), float(rng.uniform(-180, 180))) for i in range(7)]
    for city in cities:
        best = None
        for mine in mines:
            d = haversine_km(city, GeoPoint(mine.lat, mine.lng))
            if best is None or d < best[1]:
                best = (mine, d)
        assert nearest_mine(city, mines) == best


def test_rmse():
    assert abs(rmse([3.0, 4.0]) - math.sqrt(12.5)) < 1e-12
    assert rmse([0.0, 0.0, 0.0]) == 0.0
    assert rmse([7.25]) == 7.25
    try:
        rmse([])
        assert False, "expected EmptyRows"
    except EmptyRows:
        pass


def test_summary_formatting():
    pca = BenchmarkReport(technique="pca", keyword="lithium", rows=[], rmse_km=1662.5537)
    ae = BenchmarkReport(technique="ae", keyword="lithium", rows=[], rmse_km=511.8307)
    frame = summary_frame([pca, ae])
    assert list(frame.columns) == ["technique", "rmse_km"]
    assert frame.values.tolist() == [["PCA", "1662.5537"], ["Autoencoder", "511.8307"]]
    assert format_summary_table([ae]).splitlines()[-1] == "Autoencoder | 511.8307"
    assert TECHNIQUE_LABELS["none"] == "No Dimensionality Reduction"


def _single_city_setup():
    words = ["lithium", "salar", "brine"]
    table = EmbeddingTable(vocabulary=Vocabulary(words=words),
                           vectors=np.array([[1.0, 0.2], [1.0, 0.2], [0.0, 1.0]]))
    city = make_city("salar", -23.5, -68.2, row=0)
    fvocab = FilteredVocabulary(words=words, city_index={"salar": [city]})
    return table, fvocab


def test_city_at_mine_site_has_zero_error():
    table, fvocab = _single_city_setup()
    model = fit_reducer(table, ReducerSpec(kind="none"))
    report = run_benchmark("lithium", table, model, fvocab, [_mine("Atacama", -23.5, -68.2)], k=1)
    assert report.rmse_km == 0.0 and len(report.rows) == 1
    assert report.technique == "none" and not report.homonyms_deduplicated

    frame = report_frame(report)
    assert list(frame.columns) == ["technique", "keyword", "rank", "word", "city", "admin_name", "lat", "lng",
                                   "nearest_mine", "error_km"]
    assert frame["error_km"].tolist() == ["0.0000"]


def _check_geojson(document):
    assert document["type"] == "FeatureCollection"
    assert isinstance(document["features"], list)
    for feature in document["features"]:
        assert set(feature) == {"type", "geometry", "properties"}
        assert feature["type"] == "Feature"
        geometry = feature["geometry"]
        assert geometry["type"] == "Point" and len(geometry["coordinates"]) == 2
        lng, lat = geometry["coordinates"]
        assert -180.0 <= lng <= 180.0 and -90.0 <= lat <= 90.0
        assert feature["properties"]["role"] in ("city", "mine")


def test_geojson():
    mine = _mine("Atacama", -23.5, -68.2)
    empty = BenchmarkReport(technique="pca", keyword="lithium", rows=[], rmse_km=float("nan"))
    document = emit_geojson(empty, [mine])
    assert len(document["features"]) == 1
    assert document["features"][0]["geometry"]["coordinates"] == [-68.2, -23.5]
    _check_geojson(document)
    assert json.loads(geojson_text(empty, [mine]))["metadata"]["rmse_km"] is None

    words = ["lithium"] + [f"town{i}" for i in range(10)]
    rng = np.random.default_rng(2)
    table = EmbeddingTable(vocabulary=Vocabulary(words=words), vectors=rng.normal(size=(11, 3)))
    cities = [make_city(w, float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)), row=i)
              for i, w in enumerate(words[1:])]
    fvocab = FilteredVocabulary(words=words, city_index={c.city_ascii: [c] for c in cities})
    mines = [_mine(f"m{i}", float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170))) for i in range(5)]
    report = run_benchmark("lithium", table, fit_reducer(table, ReducerSpec(kind="none")), fvocab, mines, k=10)
    document = json.loads(geojson_text(report, mines))
    assert len(document["features"]) == 15
    _check_geojson(document)
    ranks = [f["properties"]["rank"] for f in document["features"] if f["properties"]["role"] == "city"]
    assert ranks == list(range(1, 11))


def test_geojson_reads_back_as_point_layer():
    rng = np.random.default_rng(6)
    words = ["lithium"] + [f"town{i}" for i in range(6)]
    table = EmbeddingTable(vocabulary=Vocabulary(words=words), vectors=rng.normal(size=(7, 3)))
    cities = [make_city(w, float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)), row=i)
              for i, w in enumerate(words[1:])]
    fvocab = FilteredVocabulary(words=words, city_index={c.city_ascii: [c] for c in cities})
    mines = [_mine(f"m{i}", float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170))) for i in range(3)]
    report = run_benchmark("lithium", table, fit_reducer(table, ReducerSpec(kind="none")), fvocab, mines, k=4)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "map_none.geojson"
        path.write_text(geojson_text(report, mines), encoding="utf-8")
        layer = gpd.read_file(path)

    assert len(layer) == 4 + 3
    assert set(layer.geom_type) == {"Point"}
    assert layer.crs is not None and layer.crs.to_epsg() == 4326
    assert layer["role"].tolist() == ["city"] * 4 + ["mine"] * 3
    expected = [(row.ranked.city.lng, row.ranked.city.lat) for row in report.rows] + [(m.lng, m.lat) for m in mines]
    assert np.allclose(np.column_stack([layer.geometry.x, layer.geometry.y]), expected, atol=1e-9)


def _planted_pipeline(seed=0):
    world = planted_resource_world(seed=seed)
    streams = process_corpus(world.docs, load_stop_words())
    vocab = build_vocabulary(streams, min_count=2)
    cooc = accumulate_cooc(streams, vocab, window=5)
    config = GloveConfig(dim=20, window=5, epochs=15, min_count=2, seed=derive_seed(seed, "glove"))
    table = train_glove(cooc, config)
    fvocab = filter_vocabulary(table, set(world.english_words), world.cities)
    model = fit_reducer(table, ReducerSpec(kind="none"))
    return world, run_benchmark(world.keyword, table, model, fvocab, world.mines, k=10)


def test_planted_resource_beats_random_cities():
    world, report = _planted_pipeline()
    assert len(report.rows) == 10
    ranked = {row.ranked.word for row in report.rows}
    assert set(world.planted) <= ranked

    wins = 0
    for trial in range(20):
        baseline = random_baseline_rmse(world.cities, world.mines, 10, np.random.default_rng(trial))
        wins += report.rmse_km < baseline
    assert wins >= 18, f"only {wins}/20 wins, rmse {report.rmse_km:.1f} km"

    frame = baseline_frame(world.cities, world.mines, 10, [0, 1, 0])
    assert frame["seed"].tolist() == [0, 1, 0]
    assert frame["rmse_km"][0] == frame["rmse_km"][2]


def main():
    """Run all tests."""
    print("🚀 Running benchmark tests...\n")
    tests = [
        test_haversine_examples,
        test_haversine_matches_law_of_cosines,
        test_haversine_bounds_and_triangle_inequality,
        test_geopoint_rejects_out_of_range_coordinates,
        test_nearest_mine,
        test_nearest_mine_matches_double_loop,
        test_rmse,
        test_rmse_never_drops_when_one_error_grows,
        test_summary_formatting,
        test_city_at_mine_site_has_zero_error,
        test_geojson,
        test_geojson_reads_back_as_point_layer,
        test_planted_resource_beats_random_cities,
    ]

    passed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
            passed += 1
        except Exception as e:
            print(f"❌ {test.__name__}: {e!r}")

    print(f"\n📊 Test Results: {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    main()
