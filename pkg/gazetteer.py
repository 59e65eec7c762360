"""
City gazetteer and mine-site loading, and the English/city vocabulary filter.
"""
import logging
import math
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set

import pandas as pd

from corpus_pipeline import fold_ascii
from errors import ConfigError, EmptyMineSet, ParseError, RangeError
from models import CityRecord, EmbeddingTable, FilteredVocabulary, MineRecord

logger = logging.getLogger(__name__)

CITY_COLUMNS = ["city", "city_ascii", "lat", "lng", "country", "iso2", "iso3", "admin_name"]
MINE_COLUMNS = ["name", "lat", "lng", "commodity"]

_PANDAS_LINE = re.compile(r"line (\d+)")


def _read_csv(path, required: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file does not exist: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(path, 1, "missing CSV header")
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        raise ParseError(path, int(match.group(1)) if match else 0, "malformed CSV row")

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(path, 1, f"missing column(s): {', '.join(missing)}")
    return frame


def _records(frame: pd.DataFrame) -> List[Dict[str, str]]:
    """Rows as dicts of strings; short rows read as empty fields."""
    return [{k: ("" if pd.isna(v) else str(v).strip()) for k, v in row.items()} for row in frame.to_dict("records")]


def _coordinate(path, line: int, raw: str, name: str, limit: float) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(path, line, f"{name} is not a number: {raw!r}")
    if not math.isfinite(value):
        raise ParseError(path, line, f"{name} is not finite")
    if not -limit <= value <= limit:
        raise RangeError(path, line, f"{name} {value} outside [-{limit:g}, {limit:g}]")
    return value


def normalize_city_name(name: str) -> str:
    """Lowercase ASCII key: folded alphabetic runs joined by single spaces."""
    return " ".join(fold_ascii(name))


def load_cities(path) -> List[CityRecord]:
    """
    Parse a Simplemaps-style cities CSV.

    Columns are matched by header name; extra columns are ignored. Rows whose
    ASCII name has no letters at all are skipped.
    """
    frame = _read_csv(path, CITY_COLUMNS)
    cities = []
    skipped = 0
    for offset, data in enumerate(_records(frame)):
        line = offset + 2
        key = normalize_city_name(data["city_ascii"] or data["city"])
        if not key:
            skipped += 1
            continue
        cities.append(CityRecord(
            city=data["city"],
            city_ascii=key,
            lat=_coordinate(path, line, data["lat"], "lat", 90.0),
            lng=_coordinate(path, line, data["lng"], "lng", 180.0),
            country=data["country"],
            iso2=data["iso2"],
            iso3=data["iso3"],
            admin_name=data["admin_name"],
            row=len(cities),
        ))

    if skipped:
        logger.warning("skipped %d city rows without an alphabetic name in %s", skipped, path)
    logger.info("loaded %d cities from %s", len(cities), path)
    return cities


def load_mines(path) -> List[MineRecord]:
    frame = _read_csv(path, MINE_COLUMNS)
    mines = []
    for offset, data in enumerate(_records(frame)):
        line = offset + 2
        mines.append(MineRecord(
            name=data["name"],
            lat=_coordinate(path, line, data["lat"], "lat", 90.0),
            lng=_coordinate(path, line, data["lng"], "lng", 180.0),
            commodity=data["commodity"],
        ))

    if not mines:
        raise EmptyMineSet(f"no mine records in {path}")
    return mines


def load_english_words(path: Optional[str] = None) -> Set[str]:
    """One word per line, lowercased. Without a path, the NLTK words corpus is used."""
    if path:
        source = Path(path)
        if not source.exists():
            raise ConfigError(f"English word list does not exist: {source}")
        lines = source.read_text(encoding="utf-8").splitlines()
        return {line.strip().lower() for line in lines if line.strip() and not line.startswith("#")}

    try:
        from nltk.corpus import words
        return {w.lower() for w in words.words()}
    except LookupError:
        raise ConfigError("no english_words_path set and the NLTK 'words' corpus is not installed "
                          "(run: python -m nltk.downloader words)")


def index_cities(cities: Iterable[CityRecord]) -> Dict[str, List[CityRecord]]:
    """Single-token city names -> every record carrying that name, in file order."""
    index: Dict[str, List[CityRecord]] = {}
    for record in cities:
        if " " in record.city_ascii:
            continue
        index.setdefault(record.city_ascii, []).append(record)
    return index


def filter_vocabulary(table: EmbeddingTable, english: Set[str], cities: List[CityRecord]) -> FilteredVocabulary:
    """Keep embedding words that are English words or single-token city names."""
    index = index_cities(cities)
    kept = [w for w in table.words if w in english or w in index]
    city_index = {w: list(index.get(w, [])) for w in kept}
    n_cities = sum(1 for w in kept if city_index[w])
    logger.info("filtered vocabulary: %d of %d words kept, %d city names", len(kept), len(table), n_cities)
    return FilteredVocabulary(words=kept, city_index=city_index)
