"""
Data models for the geo-embedding pipeline.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import ConfigError, InvalidCoordinate

REDUCER_KINDS = ("none", "pca", "ae", "vae", "vae-lstm")


@dataclass(frozen=True)
class Document:
    """A single corpus unit."""
    id: str
    text: str = ""


@dataclass(frozen=True)
class TokenStream:
    """Normalized tokens of one document, in document order."""
    doc_id: str
    tokens: Tuple[str, ...] = ()


@dataclass(frozen=True)
class StopWordList:
    words: frozenset = frozenset()

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class Vocabulary:
    """Dense word <-> index mapping with corpus frequencies."""
    words: List[str] = field(default_factory=list)
    counts: List[int] = field(default_factory=list)
    index: Dict[str, int] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.index = {word: i for i, word in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ConfigError("vocabulary words must be unique")
        if not self.counts:
            self.counts = [0] * len(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index


@dataclass
class CoocMatrix:
    """Sparse symmetric co-occurrence counts keyed by (i, j) word indices."""
    size: int = 0
    entries: Dict[Tuple[int, int], float] = field(default_factory=dict)
    vocabulary: Optional[Vocabulary] = None

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, i: int, j: int) -> float:
        return self.entries.get((i, j), 0.0)

    def total(self) -> float:
        return math.fsum(self.entries.values())


@dataclass
class GloveConfig:
    """GloVe training hyperparameters."""
    dim: int = 200
    window: int = 10
    x_max: float = 100.0
    alpha: float = 0.75
    lr: float = 0.05
    epochs: int = 25
    seed: int = 0
    min_count: int = 5

    def validate(self) -> "GloveConfig":
        if self.dim < 2:
            raise ConfigError(f"glove dim must be >= 2, got {self.dim}")
        if self.window < 1:
            raise ConfigError(f"glove window must be >= 1, got {self.window}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"glove alpha must be in (0, 1], got {self.alpha}")
        if self.x_max <= 0:
            raise ConfigError(f"glove x_max must be > 0, got {self.x_max}")
        if self.lr <= 0:
            raise ConfigError(f"glove lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"glove epochs must be >= 0, got {self.epochs}")
        if self.min_count < 1:
            raise ConfigError(f"glove min_count must be >= 1, got {self.min_count}")
        return self


@dataclass
class EmbeddingTable:
    """Trained word vectors (main + context) with their vocabulary."""
    vocabulary: Vocabulary
    vectors: np.ndarray
    loss_trace: List[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def words(self) -> List[str]:
        return self.vocabulary.words

    def __len__(self) -> int:
        return len(self.vocabulary)

    def __contains__(self, word: str) -> bool:
        return word in self.vocabulary

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.vocabulary.index[word]]

    def same_as(self, other: "EmbeddingTable") -> bool:
        """Equal words and bit-identical vectors."""
        return (self.words == other.words
                and self.vectors.shape == other.vectors.shape
                and np.array_equal(self.vectors, other.vectors))


@dataclass(frozen=True)
class CityRecord:
    """One gazetteer row."""
    city: str
    city_ascii: str
    lat: float
    lng: float
    country: str = ""
    iso2: str = ""
    iso3: str = ""
    admin_name: str = ""
    row: int = 0


@dataclass(frozen=True)
class MineRecord:
    """A known mine or deposit site."""
    name: str
    lat: float
    lng: float
    commodity: str = ""


@dataclass
class FilteredVocabulary:
    """Embedding words kept after the English/city filter, with their city matches."""
    words: List[str] = field(default_factory=list)
    city_index: Dict[str, List[CityRecord]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.words)

    def cities_for(self, word: str) -> List[CityRecord]:
        return self.city_index.get(word, [])


@dataclass
class ReducerSpec:
    """Which reduction technique to fit, and how."""
    kind: str = "none"
    latent_dim: int = 2
    hidden_dims: Tuple[int, ...] = (128, 64, 32, 16, 8)
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    kl_weight: float = 1.0
    lstm_steps: int = 25
    lstm_features: int = 8
    lstm_hidden: int = 64

    def validate(self) -> "ReducerSpec":
        if self.kind not in REDUCER_KINDS:
            raise ConfigError(f"unknown reducer kind '{self.kind}', expected one of {', '.join(REDUCER_KINDS)}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        dims = list(self.hidden_dims)
        if any(b >= a for a, b in zip(dims, dims[1:])):
            raise ConfigError(f"hidden_dims must be strictly decreasing, got {dims}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        if self.kl_weight < 0:
            raise ConfigError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if self.lstm_steps < 1 or self.lstm_features < 1 or self.lstm_hidden < 1:
            raise ConfigError("lstm_steps, lstm_features and lstm_hidden must be positive")
        return self


@dataclass(frozen=True)
class TraceRow:
    """Per-epoch training loss. Epoch 0 is the untrained model."""
    epoch: int
    loss: float
    recon: float
    kl: float = 0.0


@dataclass
class ReducerModel:
    """A fitted reducer: its spec, parameters and training trace."""
    spec: ReducerSpec
    input_dim: int
    parameters: Dict[str, np.ndarray] = field(default_factory=dict)
    training_trace: List[TraceRow] = field(default_factory=list)
    recon_mse: float = 0.0
    degenerate: bool = False

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def output_dim(self) -> int:
        return self.input_dim if self.spec.kind == "none" else self.spec.latent_dim


@dataclass(frozen=True)
class SimilarityScore:
    word: str
    score: float


@dataclass(frozen=True)
class RankedCity:
    """A city row of a ranking table; homonym rows share their word's score."""
    rank: int
    word: str
    city: CityRecord
    score: float


@dataclass
class CityRanking:
    """Top-k city rows; short_list is set when fewer than k were available."""
    rows: List[RankedCity] = field(default_factory=list)
    short_list: bool = False

    def __iter__(self) -> Iterator[RankedCity]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]


@dataclass(frozen=True)
class GeoPoint:
    """Geodetic coordinate in degrees; lat in [-90, 90], lng in [-180, 180]."""
    lat: float
    lng: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lng <= 180.0):
            raise InvalidCoordinate(f"({self.lat}, {self.lng}) is not a valid latitude/longitude")

    @property
    def phi(self) -> float:
        return math.radians(self.lat)

    @property
    def lam(self) -> float:
        return math.radians(self.lng)


@dataclass(frozen=True)
class CityError:
    ranked: RankedCity
    nearest_mine: MineRecord
    distance_km: float


@dataclass
class BenchmarkReport:
    """Per-technique ranked cities with their nearest-mine errors."""
    technique: str
    keyword: str
    rows: List[CityError] = field(default_factory=list)
    rmse_km: float = 0.0
    short_list: bool = False
    homonyms_deduplicated: bool = False


@dataclass
class PipelineConfig:
    """Everything one pipeline run needs."""
    corpus_path: Optional[str] = None
    stopwords_path: Optional[str] = None
    english_words_path: Optional[str] = None
    cities_path: Optional[str] = None
    mines_path: Optional[str] = None
    keyword: str = "lithium"
    glove: GloveConfig = field(default_factory=GloveConfig)
    reducers: List[ReducerSpec] = field(default_factory=lambda: [ReducerSpec(kind=k) for k in REDUCER_KINDS])
    k: int = 10
    output_dir: str = "output"
    seed: int = 0
    workers: int = 1
    baseline_trials: int = 0

    def validate(self) -> "PipelineConfig":
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.baseline_trials < 0:
            raise ConfigError(f"baseline_trials must be >= 0, got {self.baseline_trials}")
        self.glove.validate()
        for spec in self.reducers:
            spec.validate()
        return self

    def reducer(self, kind: str) -> ReducerSpec:
        for spec in self.reducers:
            if spec.kind == kind:
                return spec
        raise ConfigError(f"reducer kind '{kind}' is not configured")
