"""
Text extraction: tokenization, stop-word removal and Porter stemming.
"""
import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Optional

from nltk.stem.porter import PorterStemmer

from errors import ConfigError, DuplicateDocumentId, ParseError
from models import Document, StopWordList, TokenStream

logger = logging.getLogger(__name__)

DEFAULT_STOPWORDS_PATH = Path(__file__).resolve().parent / "data" / "stopwords.txt"

_WORD = re.compile(r"[a-z]+")
_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@lru_cache(maxsize=4096)
def _fold_char(ch: str) -> str:
    """Map one character to a lowercase ASCII letter, a space when it splits, or nothing for a stray mark."""
    if ch.isascii():
        return ch.lower() if ch.isalpha() else " "
    if unicodedata.combining(ch):
        return ""
    decomposed = unicodedata.normalize("NFD", ch)
    base, marks = decomposed[0], decomposed[1:]
    if marks and base.isascii() and base.isalpha() and all(unicodedata.combining(m) for m in marks):
        return base.lower()
    return " "


def fold_ascii(text: str) -> List[str]:
    """Lowercase ASCII-alphabetic runs of text after diacritic folding, any length."""
    text = unicodedata.normalize("NFC", text)
    return _WORD.findall("".join(_fold_char(ch) for ch in text))


def tokenize(text: str) -> List[str]:
    """
    Lowercase, fold single-letter Latin diacritics to ASCII and split on everything else.

    Tokens shorter than two characters are dropped.
    """
    return [token for token in fold_ascii(text) if len(token) >= 2]


def remove_stop_words(tokens: Iterable[str], stops: StopWordList) -> List[str]:
    return [token for token in tokens if token not in stops]


def stem(token: str) -> str:
    """Porter (1980) stem of a lowercase alphabetic token."""
    return _stemmer.stem(token)


def process_document(doc: Document, stops: StopWordList) -> TokenStream:
    tokens = remove_stop_words(tokenize(doc.text), stops)
    return TokenStream(doc_id=doc.id, tokens=tuple(stem(token) for token in tokens))


def process_corpus(docs: List[Document], stops: StopWordList, workers: int = 1) -> List[TokenStream]:
    """
    Run tokenize -> remove_stop_words -> stem on every document.

    Args:
        docs: Documents with unique ids
        stops: Stop words removed before stemming
        workers: Thread count; results keep input order either way

    Returns:
        One TokenStream per document, in input order
    """
    seen = set()
    for doc in docs:
        if doc.id in seen:
            raise DuplicateDocumentId(doc.id)
        seen.add(doc.id)

    if workers > 1 and len(docs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            streams = list(pool.map(lambda d: process_document(d, stops), docs))
    else:
        streams = [process_document(doc, stops) for doc in docs]

    logger.debug("processed %d documents into %d tokens", len(streams), sum(len(s.tokens) for s in streams))
    return streams


def load_corpus(path) -> List[Document]:
    """
    Load documents from a directory of .txt files or an id<TAB>text file.

    Directory documents are keyed by their relative POSIX path, sorted.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"corpus path does not exist: {path}")

    if path.is_dir():
        files = sorted(path.rglob("*.txt"), key=lambda p: p.relative_to(path).as_posix())
        return [Document(id=f.relative_to(path).as_posix(), text=f.read_text(encoding="utf-8")) for f in files]

    docs = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError(path, line_no, "expected id<TAB>text")
            doc_id, text = line.split("\t", 1)
            docs.append(Document(id=doc_id, text=text))
    return docs


def load_stop_words(path: Optional[str] = None) -> StopWordList:
    """Read one stop word per line; '#' starts a comment. None loads the shipped list."""
    source = Path(path) if path else DEFAULT_STOPWORDS_PATH
    if not source.exists():
        raise ConfigError(f"stop-word file does not exist: {source}")

    words = set()
    for line in source.read_text(encoding="utf-8").splitlines():
        word = line.split("#", 1)[0].strip().lower()
        if word:
            words.add(word)

    if not words:
        raise ConfigError(f"stop-word file is empty: {source}")
    return StopWordList(words=frozenset(words))
