"""
Cosine-similarity scoring of the filtered vocabulary against a keyword, and top-k city extraction.
"""
import logging
from typing import List, Sequence

import numpy as np
import pandas as pd

from errors import UnknownKeyword, ZeroVector
from models import (CityRanking, EmbeddingTable, FilteredVocabulary, RankedCity, ReducerModel,
                    SimilarityScore)
from reducers import transform

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-12
RANKING_COLUMNS = ["rank", "word", "city", "admin_name", "country", "lat", "lng", "score"]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u| |v|), clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"cosine of vectors with shapes {u.shape} and {v.shape}")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        raise ZeroVector("cosine similarity of a zero-norm vector")
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))


def levenshtein(a: str, b: str) -> int:
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def suggest_keywords(word: str, vocabulary: Sequence[str], n: int = 5) -> List[str]:
    """Closest vocabulary words by edit distance, ties alphabetical."""
    return sorted(vocabulary, key=lambda w: (levenshtein(word, w), w))[:n]


def score_all(keyword: str, table: EmbeddingTable, model: ReducerModel,
              fvocab: FilteredVocabulary) -> List[SimilarityScore]:
    """
    Cosine similarity between the keyword and every filtered word, in the model's space.

    Args:
        keyword: Must be in the embedding vocabulary
        table: Raw embeddings
        model: Reducer applied to keyword and words before scoring (identity for kind none)
        fvocab: Words to score; the keyword itself is left out

    Returns:
        One score per scorable word, in filtered-vocabulary order
    """
    if keyword not in table:
        raise UnknownKeyword(keyword, suggest_keywords(keyword, table.words))

    words = [w for w in fvocab.words if w != keyword and w in table]
    matrix = np.array([table.vector(keyword)] + [table.vector(w) for w in words]).reshape(len(words) + 1, table.dim)
    reduced = transform(model, matrix)
    target = reduced[0]
    if np.linalg.norm(target) < ZERO_NORM:
        raise ZeroVector(f"keyword '{keyword}' has a zero-norm vector in {model.kind} space")

    scores = []
    skipped = 0
    for word, vector in zip(words, reduced[1:]):
        try:
            scores.append(SimilarityScore(word=word, score=cosine_similarity(target, vector)))
        except ZeroVector:
            skipped += 1
    if skipped:
        logger.warning("skipped %d zero-norm word vectors in %s space", skipped, model.kind)
    return scores


def top_k_cities(scores: Sequence[SimilarityScore], fvocab: FilteredVocabulary, k: int) -> CityRanking:
    """
    Expand scored city words into one row per matching gazetteer record and keep the top k.

    Rows sort by score descending, then word, then gazetteer file order; homonym rows
    share their word's score and each take a slot.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    expanded = [(s, city) for s in scores for city in fvocab.cities_for(s.word)]
    expanded.sort(key=lambda item: (-item[0].score, item[0].word, item[1].row))
    rows = [RankedCity(rank=i + 1, word=s.word, city=city, score=s.score)
            for i, (s, city) in enumerate(expanded[:k])]
    return CityRanking(rows=rows, short_list=len(expanded) < k)


def top_k_words(scores: Sequence[SimilarityScore], fvocab: FilteredVocabulary, k: int) -> List[SimilarityScore]:
    """Most similar words that are not city names."""
    terms = [s for s in scores if not fvocab.cities_for(s.word)]
    terms.sort(key=lambda s: (-s.score, s.word))
    return terms[:k]


def ranking_frame(ranking: CityRanking) -> pd.DataFrame:
    rows = [{
        "rank": r.rank,
        "word": r.word,
        "city": r.city.city,
        "admin_name": r.city.admin_name,
        "country": r.city.country,
        "lat": r.city.lat,
        "lng": r.city.lng,
        "score": f"{r.score:.6f}",
    } for r in ranking]
    return pd.DataFrame(rows, columns=RANKING_COLUMNS)


def format_ranking_table(ranking: CityRanking) -> str:
    """Plain-text Rank | City | Admin-name table."""
    lines = ["Rank | City | Admin-name"]
    lines.extend(f"{r.rank} | {r.word} | {r.city.admin_name}" for r in ranking)
    if ranking.short_list:
        lines.append(f"(only {len(ranking)} city rows available)")
    return "\n".join(lines)


def argsort_words(scores: Sequence[SimilarityScore]) -> List[str]:
    """Words ordered by score descending, ties alphabetical."""
    return [s.word for s in sorted(scores, key=lambda s: (-s.score, s.word))]
