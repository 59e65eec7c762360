"""
GloVe: co-occurrence counting and AdaGrad training of word vectors.
"""
import logging
import math
import re
from collections import Counter, defaultdict
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from artifacts import atomic_write_text, write_frame
from errors import DimensionMismatch, EmptyVocabulary, NonFiniteLoss, ParseError
from models import CoocMatrix, EmbeddingTable, GloveConfig, TokenStream, Vocabulary

logger = logging.getLogger(__name__)

_HEADER = re.compile(r"^#glove dim=(\d+) vocab=(\d+)\s*$")


def build_vocabulary(streams: Sequence[TokenStream], min_count: int) -> Vocabulary:
    """Words seen at least min_count times, most frequent first, ties alphabetical."""
    counts = Counter()
    for stream in streams:
        counts.update(stream.tokens)

    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    if not kept:
        raise EmptyVocabulary(f"no word occurs at least {min_count} times")
    return Vocabulary(words=kept, counts=[counts[w] for w in kept])


def accumulate_cooc(streams: Sequence[TokenStream], vocab: Vocabulary, window: int) -> CoocMatrix:
    """
    Distance-weighted symmetric co-occurrence counts.

    Each in-window pair at distance d adds 1/d to both (i, j) and (j, i).
    Out-of-vocabulary tokens are skipped but still occupy positions.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")

    entries = defaultdict(float)
    for stream in streams:
        ids = [vocab.index.get(token) for token in stream.tokens]
        n = len(ids)
        for p, i in enumerate(ids):
            if i is None:
                continue
            for d in range(1, window + 1):
                q = p + d
                if q >= n:
                    break
                j = ids[q]
                if j is None:
                    continue
                weight = 1.0 / d
                entries[(i, j)] += weight
                entries[(j, i)] += weight

    return CoocMatrix(size=len(vocab), entries=dict(entries), vocabulary=vocab)


def cooc_to_sparse(cooc: CoocMatrix) -> sparse.csr_matrix:
    """Row-major CSR view of the co-occurrence entries."""
    if not cooc.entries:
        return sparse.csr_matrix((cooc.size, cooc.size))
    keys = sorted(cooc.entries)
    rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    cols = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    vals = np.fromiter((cooc.entries[k] for k in keys), dtype=np.float64, count=len(keys))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(cooc.size, cooc.size))


def glove_weight(x: float, x_max: float, alpha: float) -> float:
    if x < x_max:
        return (x / x_max) ** alpha
    return 1.0


def loss_term(w_i: np.ndarray, wc_j: np.ndarray, b_i: float, bc_j: float, x: float,
              x_max: float, alpha: float) -> float:
    """f(x) * (w_i . wc_j + b_i + bc_j - log x)^2"""
    diff = float(w_i @ wc_j) + b_i + bc_j - math.log(x)
    return glove_weight(x, x_max, alpha) * diff * diff


def loss_term_gradients(w_i: np.ndarray, wc_j: np.ndarray, b_i: float, bc_j: float, x: float,
                        x_max: float, alpha: float) -> Tuple[float, np.ndarray, np.ndarray, float]:
    """Loss of one entry and its gradients w.r.t. w_i, wc_j and either bias."""
    diff = float(w_i @ wc_j) + b_i + bc_j - math.log(x)
    fdiff = glove_weight(x, x_max, alpha) * diff
    return fdiff * diff, 2.0 * fdiff * wc_j, 2.0 * fdiff * w_i, 2.0 * fdiff


def train_glove(cooc: CoocMatrix, config: GloveConfig) -> EmbeddingTable:
    """
    Fit GloVe vectors to a co-occurrence matrix with AdaGrad.

    Args:
        cooc: Non-empty co-occurrence matrix
        config: Hyperparameters; seed drives init and the per-epoch shuffle

    Returns:
        EmbeddingTable of main + context vectors with the per-epoch mean loss trace
    """
    config.validate()
    if len(cooc) == 0:
        raise EmptyVocabulary("co-occurrence matrix has no entries")

    vocab = cooc.vocabulary or Vocabulary(words=[f"w{i}" for i in range(cooc.size)])
    size, dim = cooc.size, config.dim
    rng = np.random.default_rng(config.seed)

    scale = 0.5 / dim
    W = rng.uniform(-scale, scale, size=(size, dim))
    Wc = rng.uniform(-scale, scale, size=(size, dim))
    b = rng.uniform(-scale, scale, size=size)
    bc = rng.uniform(-scale, scale, size=size)
    gsq_W = np.ones((size, dim))
    gsq_Wc = np.ones((size, dim))
    gsq_b = np.ones(size)
    gsq_bc = np.ones(size)

    matrix = cooc_to_sparse(cooc).tocoo()
    rows, cols, vals = matrix.row, matrix.col, matrix.data
    n_entries = len(vals)
    lr = config.lr

    trace = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for e in rng.permutation(n_entries):
            i, j, x = int(rows[e]), int(cols[e]), float(vals[e])
            loss, g_w, g_wc, g_b = loss_term_gradients(W[i], Wc[j], b[i], bc[j], x, config.x_max, config.alpha)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch)
            total += loss

            gsq_W[i] += g_w * g_w
            gsq_Wc[j] += g_wc * g_wc
            gsq_b[i] += g_b * g_b
            gsq_bc[j] += g_b * g_b
            W[i] -= lr * g_w / np.sqrt(gsq_W[i])
            Wc[j] -= lr * g_wc / np.sqrt(gsq_Wc[j])
            b[i] -= lr * g_b / math.sqrt(gsq_b[i])
            bc[j] -= lr * g_b / math.sqrt(gsq_bc[j])

        mean_loss = total / n_entries
        if not math.isfinite(mean_loss):
            raise NonFiniteLoss(epoch)
        trace.append(mean_loss)
        logger.info("glove epoch %d/%d mean loss %.6f", epoch, config.epochs, mean_loss)

    vectors = W + Wc
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteLoss(config.epochs)
    return EmbeddingTable(vocabulary=vocab, vectors=vectors, loss_trace=trace)


def save_embeddings(table: EmbeddingTable, path) -> Path:
    lines = [f"#glove dim={table.dim} vocab={len(table)}"]
    for word, row in zip(table.words, table.vectors):
        lines.append(word + "\t" + "\t".join(format(float(v), ".17g") for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    """
    Read an embedding file written by save_embeddings.

    Raises:
        EmptyVocabulary: file (or its body) is empty
        ParseError: bad header, bad number or row of the wrong arity
        DimensionMismatch: rows are consistent with each other but not with the header
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not any(line.strip() for line in lines):
        raise EmptyVocabulary(f"embedding file is empty: {path}")

    header = _HEADER.match(lines[0])
    if not header:
        raise ParseError(path, 1, "expected '#glove dim=D vocab=V' header")
    dim, expected_rows = int(header.group(1)), int(header.group(2))

    records = [(line_no, line.split("\t")) for line_no, line in enumerate(lines[1:], start=2) if line.strip()]
    widths = {len(fields) for _, fields in records}
    if len(widths) == 1 and min(widths) >= 2 and dim + 1 not in widths:
        raise DimensionMismatch(f"{path}: header dim={dim} but every row has {min(widths) - 1} values")

    words: List[str] = []
    rows: List[List[float]] = []
    for line_no, fields in records:
        if len(fields) != dim + 1:
            raise ParseError(path, line_no, f"expected {dim + 1} tab-separated fields, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError:
            raise ParseError(path, line_no, "non-numeric vector component")
        if not fields[0]:
            raise ParseError(path, line_no, "empty word")
        words.append(fields[0])

    if not words:
        raise EmptyVocabulary(f"embedding file has no rows: {path}")
    if len(words) != expected_rows:
        raise ParseError(path, len(lines) + 1, f"header declares {expected_rows} rows, found {len(words)}")
    if len(set(words)) != len(words):
        raise ParseError(path, 1, "duplicate word in embedding file")

    vectors = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(vectors)):
        raise ParseError(path, 1, "non-finite vector component")
    return EmbeddingTable(vocabulary=Vocabulary(words=words), vectors=vectors)


def save_loss_trace(trace: Sequence[float], path) -> Path:
    frame = pd.DataFrame({"epoch": range(1, len(trace) + 1), "mean_loss": list(trace)})
    return write_frame(path, frame)

