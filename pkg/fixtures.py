"""
Seeded synthetic data for tests and the demo subcommand.

Nothing here reads the network or real gazetteers; every function is a pure
function of its seed.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from artifacts import atomic_write_text, write_frame
from benchmark import haversine_km
from corpus_pipeline import stem
from models import CityRecord, Document, EmbeddingTable, GeoPoint, MineRecord, Vocabulary

KM_PER_DEGREE = 111.195

CLUSTER_WORDS = (
    ("granite", "basalt", "quartz", "mineral", "crystal", "magma", "lava", "rock", "stone", "sediment"),
    ("river", "ocean", "water", "rain", "flood", "stream", "lake", "wave", "tide", "coast"),
)

MINING_WORDS = ("brine", "deposit", "extraction", "drill", "ore", "pit", "shaft", "geology", "assay", "tonnage")
TOWN_WORDS = ("festival", "market", "harbor", "museum", "football", "weather", "bakery", "theater", "school",
              "railway", "garden", "library")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v", "z", "br", "dr", "kr", "tr", "gl", "pl", "qu")
_VOWELS = ("a", "o", "u", "i")
_CODAS = ("ok", "ip", "ag", "ob", "ux", "af", "ug", "op")


def two_cluster_corpus(seed: int = 0, n_docs: int = 40, doc_len: int = 60) -> List[Document]:
    """Documents that each draw every token from one of two disjoint topic word sets."""
    rng = np.random.default_rng(seed)
    docs = []
    for n in range(n_docs):
        words = CLUSTER_WORDS[n % 2]
        tokens = rng.choice(len(words), size=doc_len)
        docs.append(Document(id=f"doc{n:03d}", text=" ".join(words[t] for t in tokens)))
    return docs


def cluster_stems() -> Tuple[List[str], List[str]]:
    return [stem(w) for w in CLUSTER_WORDS[0]], [stem(w) for w in CLUSTER_WORDS[1]]


def city_names(count: int, rng: np.random.Generator) -> List[str]:
    """Distinct invented names that the Porter stemmer leaves unchanged."""
    names: List[str] = []
    seen = set()
    while len(names) < count:
        name = (_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                + _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                + _CODAS[rng.integers(len(_CODAS))])
        if name in seen or stem(name) != name:
            continue
        seen.add(name)
        names.append(name)
    return names


def make_city(name: str, lat: float, lng: float, row: int, admin_name: str = "Region",
              country: str = "Testland") -> CityRecord:
    return CityRecord(city=name.capitalize(), city_ascii=name, lat=lat, lng=lng, country=country,
                      iso2="TL", iso3="TLD", admin_name=admin_name, row=row)


def offset_point(lat: float, lng: float, distance_km: float, bearing: float) -> Tuple[float, float]:
    """Small-distance offset on the sphere; accurate to well under a kilometre below 100 km."""
    d_lat = distance_km * math.cos(bearing) / KM_PER_DEGREE
    d_lng = distance_km * math.sin(bearing) / (KM_PER_DEGREE * math.cos(math.radians(lat)))
    return lat + d_lat, ((lng + d_lng + 180.0) % 360.0) - 180.0


def random_place(rng: np.random.Generator, max_abs_lat: float = 60.0) -> Tuple[float, float]:
    lat = math.degrees(math.asin(rng.uniform(-math.sin(math.radians(max_abs_lat)),
                                             math.sin(math.radians(max_abs_lat)))))
    return lat, float(rng.uniform(-180.0, 180.0))


@dataclass
class PlantedWorld:
    """A corpus whose keyword co-occurs with cities planted next to known mines."""
    keyword: str
    docs: List[Document]
    cities: List[CityRecord]
    mines: List[MineRecord]
    english_words: List[str]
    planted: List[str] = field(default_factory=list)
    mining_towns: List[str] = field(default_factory=list)


def planted_resource_world(seed: int = 0, keyword: str = "lithium", n_other: int = 40) -> PlantedWorld:
    """
    Build the planted-resource scenario.

    Three cities lie within 50 km of the keyword's mine and share documents with the
    keyword. Seven mining towns lie within 50 km of three other mines and share mining
    vocabulary (and the occasional keyword). The remaining cities sit at least 500 km
    from every mine and only appear in unrelated town documents.
    """
    rng = np.random.default_rng(seed)
    names = city_names(10 + n_other, rng)
    planted, towns, others = names[:3], names[3:10], names[10:]

    mines: List[MineRecord] = []
    cities: List[CityRecord] = []

    def add_city(name, lat, lng, admin):
        cities.append(make_city(name, lat, lng, row=len(cities), admin_name=admin))

    lat, lng = random_place(rng)
    mines.append(MineRecord(name=f"{keyword.capitalize()} Flats", lat=lat, lng=lng, commodity=keyword))
    for name in planted:
        add_city(name, *offset_point(lat, lng, rng.uniform(5.0, 45.0), rng.uniform(0, 2 * math.pi)), "Brine Basin")

    for commodity, group in (("copper", towns[:3]), ("gold", towns[3:5]), ("tin", towns[5:])):
        lat, lng = random_place(rng)
        mines.append(MineRecord(name=f"{commodity.capitalize()} Ridge", lat=lat, lng=lng, commodity=commodity))
        for name in group:
            add_city(name, *offset_point(lat, lng, rng.uniform(5.0, 45.0), rng.uniform(0, 2 * math.pi)), "Ore Hills")

    for name in others:
        while True:
            lat, lng = random_place(rng)
            here = GeoPoint(lat, lng)
            if all(haversine_km(here, GeoPoint(m.lat, m.lng)) >= 500.0 for m in mines):
                break
        add_city(name, lat, lng, "Lowlands")

    def document(doc_id, pools, weights, length=50):
        picks = rng.choice(len(pools), size=length, p=weights)
        return Document(id=doc_id, text=" ".join(pools[p][rng.integers(len(pools[p]))] for p in picks))

    docs = []
    for n in range(20):
        docs.append(document(f"lithium{n:02d}", [(keyword,), planted, MINING_WORDS], [0.25, 0.3, 0.45]))
    for n in range(30):
        docs.append(document(f"mining{n:02d}", [(keyword,), towns, MINING_WORDS], [0.05, 0.35, 0.6]))
    for n in range(80):
        docs.append(document(f"town{n:02d}", [others, TOWN_WORDS], [0.4, 0.6]))

    english = sorted({stem(w) for w in (keyword,) + MINING_WORDS + TOWN_WORDS})
    return PlantedWorld(keyword=keyword, docs=docs, cities=cities, mines=mines, english_words=english,
                        planted=list(planted), mining_towns=list(towns))


def synthetic_table(seed: int = 0, n: int = 500, dim: int = 40, offset: float = 1.0,
                    spread: float = 0.3, noise: float = 0.05) -> EmbeddingTable:
    """n vectors around a common offset with a planted two-factor structure."""
    rng = np.random.default_rng(seed)
    mean = offset + 0.1 * rng.standard_normal(dim)
    factors = rng.standard_normal((n, 2))
    loadings = rng.standard_normal((2, dim)) / math.sqrt(dim)
    vectors = mean + spread * factors @ loadings * math.sqrt(dim) / 2 + noise * rng.standard_normal((n, dim))
    words = [f"word{i:04d}" for i in range(n)]
    return EmbeddingTable(vocabulary=Vocabulary(words=words), vectors=vectors)


def cities_frame(cities: Sequence[CityRecord]) -> pd.DataFrame:
    return pd.DataFrame([{
        "city": c.city, "city_ascii": c.city_ascii, "lat": format(float(c.lat), ".17g"), "lng": format(float(c.lng), ".17g"),
        "country": c.country, "iso2": c.iso2, "iso3": c.iso3, "admin_name": c.admin_name,
    } for c in cities], columns=["city", "city_ascii", "lat", "lng", "country", "iso2", "iso3", "admin_name"])


def mines_frame(mines: Sequence[MineRecord]) -> pd.DataFrame:
    return pd.DataFrame([{"name": m.name, "lat": format(float(m.lat), ".17g"), "lng": format(float(m.lng), ".17g"), "commodity": m.commodity}
                         for m in mines], columns=["name", "lat", "lng", "commodity"])


DEMO_CONFIG = """[paths]
corpus_path = corpus.tsv
english_words_path = english.txt
cities_path = cities.csv
mines_path = mines.csv

[pipeline]
keyword = {keyword}
k = 10
seed = {seed}
output_dir = output

[glove]
dim = 20
window = 5
epochs = 15
min_count = 2
lr = 0.05

[reducers]
kinds = none, pca, ae, vae, vae-lstm
hidden_dims = 16, 8
epochs = 30
batch_size = 16
lr = 0.005
lstm_steps = 5
lstm_features = 4
lstm_hidden = 8
"""


def write_world(world: PlantedWorld, out_dir, seed: int = 0) -> Path:
    """Write corpus, gazetteer, mines, word list and a pipeline.ini; returns the config path."""
    out = Path(out_dir)
    atomic_write_text(out / "corpus.tsv", "".join(f"{d.id}\t{d.text}\n" for d in world.docs))
    atomic_write_text(out / "english.txt", "".join(f"{w}\n" for w in world.english_words))
    write_frame(out / "cities.csv", cities_frame(world.cities))
    write_frame(out / "mines.csv", mines_frame(world.mines))
    return atomic_write_text(out / "pipeline.ini", DEMO_CONFIG.format(keyword=world.keyword, seed=seed))
