"""
Exception hierarchy for the geo-embedding pipeline.

Library code raises these; only cli.py turns them into exit codes.
"""
from typing import List, Optional


class PipelineError(Exception):
    """Base class for every error the pipeline reports to the user."""
    exit_code = 1


# Input / configuration errors (exit 2)
class InputError(PipelineError):
    exit_code = 2


class ConfigError(InputError):
    """Missing or invalid configuration value."""


class ParseError(InputError):
    """Malformed line in an input or artifact file."""

    def __init__(self, path, line: int, reason: str = "malformed input"):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")


class RangeError(ParseError):
    """Coordinate outside its valid range."""

    def __init__(self, path, line: int, reason: str = "coordinate out of range"):
        super().__init__(path, line, reason)


class InvalidCoordinate(InputError):
    """Latitude or longitude outside [-90, 90] x [-180, 180], or not finite."""


class DuplicateDocumentId(InputError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"duplicate document id: {doc_id}")


class EmptyVocabulary(InputError):
    """No word passed the frequency threshold, or an embedding file had no rows."""


class EmptyMineSet(InputError):
    """Mine list has no records."""


class EmptyRows(InputError):
    """RMSE requested over zero rows."""


class DimensionMismatch(InputError):
    """Embedding rows disagree on dimension."""


class KindMismatch(InputError):
    """Model file holds a different reducer kind than requested."""


class ShapeMismatch(InputError):
    """Tensor operands have incompatible shapes."""


class ZeroVector(InputError):
    """Cosine similarity of a (near) zero-norm vector."""


class UnknownKeyword(PipelineError):
    exit_code = 3

    def __init__(self, keyword: str, suggestions: Optional[List[str]] = None):
        self.keyword = keyword
        self.suggestions = list(suggestions or [])
        message = f"keyword '{keyword}' is not in the embedding vocabulary"
        if self.suggestions:
            message += f" (did you mean: {', '.join(self.suggestions)}?)"
        super().__init__(message)


class MissingArtifact(PipelineError):
    exit_code = 4

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing stage artifact: {self.path}")


# Numeric failures (exit 1)
class NonFiniteValue(PipelineError):
    """An operation produced NaN or Inf."""


class NonFiniteLoss(NonFiniteValue):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss during epoch {epoch}")


class DegenerateData(PipelineError):
    """Covariance rank below the requested latent dimension."""
