"""Tokenisation and hashed term-frequency embeddings of period summaries.

The hashing embedder stands in for a pretrained sentence encoder. Vectors
produced elsewhere (for example by a sentence-transformer) can be imported
with :func:`load_precomputed` and take precedence at featurisation time.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import SchemaError

_CJK = (
    "\u3040-\u30ff"          # hiragana, katakana
    "\u3400-\u4dbf"          # CJK ext A
    "\u4e00-\u9fff"          # CJK unified
    "\uac00-\ud7af"          # hangul syllables
    "\uf900-\ufaff"          # compatibility ideographs
    "\U00020000-\U0003134f"  # CJK ext B..G
)
_TOKEN_RE = re.compile(rf"[A-Za-z0-9]+|[{_CJK}]")


@dataclass(frozen=True)
class EmbedderConfig:
    dim: int = 64
    hash_seed: int = 0
    signed_hashing: bool = True

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.hash_seed < 0:
            raise ValueError("hash_seed must be unsigned")


def tokenize(text: str) -> list[str]:
    """Lower-cased ASCII alphanumeric runs; each CJK codepoint is its own token."""
    return [tok.lower() for tok in _TOKEN_RE.findall(text)]


@lru_cache(maxsize=65536)
def _bucket(token: str, dim: int, seed: int) -> tuple[int, float]:
    key = seed.to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16, key=key).digest()
    index = int.from_bytes(digest[:8], "little") % dim
    sign = 1.0 if digest[8] & 1 else -1.0
    return index, sign


def embed_tokens(tokens: list[str], config: EmbedderConfig) -> np.ndarray:
    vec = np.zeros(config.dim)
    for tok in tokens:
        idx, sign = _bucket(tok, config.dim, config.hash_seed)
        vec[idx] += sign if config.signed_hashing else 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def embed_text(text: str, config: EmbedderConfig = EmbedderConfig()) -> np.ndarray:
    """L2-normalised hashed TF vector of ``text``; zero vector if it has no tokens."""
    return embed_tokens(tokenize(text), config)


def load_precomputed(path, expected_dim: int) -> dict[tuple[str, int], np.ndarray]:
    """Read ``student_id, period_index, v_0 .. v_{dim-1}`` rows into a lookup map.

    Rows are L2-normalised on load; all-zero rows are kept as-is.
    """
    path = Path(path)
    out: dict[tuple[str, int], np.ndarray] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if len(header) < 2 or header[0] != "student_id" or header[1] != "period_index":
            raise SchemaError(f"{path}: header must start with student_id,period_index")
        if len(header) - 2 != expected_dim:
            raise SchemaError(f"{path}: header declares {len(header) - 2} dims, expected {expected_dim}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 2 != expected_dim:
                raise SchemaError(f"{path}:{lineno}: row has {len(row) - 2} values, expected {expected_dim}")
            try:
                key = (row[0], int(row[1]))
                vec = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise SchemaError(f"{path}:{lineno}: non-finite embedding value")
            norm = np.linalg.norm(vec)
            out[key] = vec / norm if norm > 0 else vec
    return out
