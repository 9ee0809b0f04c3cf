"""Text and image embeddings with a content-addressed cache.

Every vector handed out is unit-norm, so cosine similarity is a dot product.
Providers only need to return a raw vector; :class:`Embedder` normalizes,
checks the dimension and caches by content hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import urllib.error
import urllib.request
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .extraction import STOPWORDS, ProviderError

TEXT = "text"
IMAGE = "image"
MODALITIES = (TEXT, IMAGE)
DEFAULT_TEST_DIM = 64


class EmbeddingError(ValueError):
    """Dimension mismatch, non-normalizable vector or missing embedding."""


class EmbeddingVector:
    """An immutable unit-norm vector tagged with its modality."""

    __slots__ = ("values", "modality")

    def __init__(self, values: Sequence[float] | np.ndarray, modality: str = TEXT, *, normalize: bool = True):
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if normalize:
            norm = float(np.linalg.norm(arr))
            if not math.isfinite(norm) or norm == 0.0:
                raise EmbeddingError("cannot normalize a zero or non-finite vector")
            arr = arr / norm
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "modality", modality)

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingVector is immutable")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.modality == other.modality and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.modality, self.values.tobytes()))

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dim}, modality={self.modality!r})"

    def scaled(self, factor: float) -> EmbeddingVector:
        """Raw (unnormalized) multiple of this vector; used to probe scale invariance."""
        return EmbeddingVector(self.values * factor, self.modality, normalize=False)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity, clipped to [-1, 1].

    Vectors built by this module are unit-norm, but the norms are divided out
    anyway so that scaled copies compare the same as the originals.
    """
    if a.dim != b.dim:
        raise EmbeddingError(f"dimension mismatch: {a.dim} vs {b.dim}")
    denom = float(np.linalg.norm(a.values) * np.linalg.norm(b.values))
    if denom == 0.0:
        raise EmbeddingError("cosine of a zero vector")
    return max(-1.0, min(1.0, float(np.dot(a.values, b.values)) / denom))


def top_k_similar(
    query: EmbeddingVector, candidates: Iterable[tuple[str, EmbeddingVector]], k: int
) -> list[tuple[str, float]]:
    """Rank candidates by cosine to ``query``; ties go to the smaller id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [(cid, cosine(query, vec)) for cid, vec in candidates]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


# -- providers -------------------------------------------------------------


class EmbeddingProvider(Protocol):
    identity: str
    dim: int

    def embed(self, modality: str, payload: str) -> Sequence[float]: ...


_WORD = re.compile(r"[a-z0-9]+")


def hash_tokens(payload: str) -> list[str]:
    tokens = _WORD.findall(payload.casefold())
    content = [t for t in tokens if t not in STOPWORDS]
    return content or tokens or [payload]


class HashEmbedder:
    """Deterministic bag-of-tokens embedder for tests and offline runs.

    Each token is hashed (with the seed) onto ``active`` coordinates carrying
    positive weights; a payload's vector is the sum over its token multiset.
    Text and image payloads share the space: an image is represented by the
    tokens of its reference string, so ``images/red-hat-portrait.jpg`` lands
    near text mentioning a red hat. All similarities are non-negative, and
    payloads with no tokens in common score close to zero.
    """

    def __init__(self, dim: int = DEFAULT_TEST_DIM, seed: int = 0, active: int = 2):
        if dim < active:
            raise ValueError("dim must be >= active")
        self.dim = dim
        self.seed = seed
        self.active = active
        self.identity = f"hash(dim={dim},seed={seed},active={active})"

    def token_vector(self, token: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        digest = hashlib.sha256(f"{self.seed}\x00{token}".encode("utf-8")).digest()
        counter = 0
        placed = 0
        while placed < self.active:
            if counter + 3 > len(digest):
                digest = hashlib.sha256(digest).digest()
                counter = 0
            coord = int.from_bytes(digest[counter : counter + 2], "big") % self.dim
            weight = 0.5 + digest[counter + 2] / 510.0
            counter += 3
            if vec[coord] == 0.0:
                vec[coord] = weight
                placed += 1
        return vec

    def embed(self, modality: str, payload: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in hash_tokens(payload):
            vec += self.token_vector(token)
        return vec


def content_key(modality: str, payload: str) -> str:
    """Cache id of a payload: sha256 over modality and payload."""
    return hashlib.sha256(f"{modality}\x00{payload}".encode("utf-8")).hexdigest()


class CacheFileProvider:
    """Serves precomputed vectors from an embedding cache file (see EmbeddingStore.save)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.store = EmbeddingStore.load(self.path)
        self.dim = self.store.dim
        self.identity = f"cache:{self.path.name}"

    def embed(self, modality: str, payload: str) -> np.ndarray:
        key = content_key(modality, payload)
        if (modality, key) not in self.store:
            raise ProviderError(self.identity, f"no cached {modality} vector for {payload[:40]!r}")
        return self.store.get(modality, key).values


class HTTPEmbeddingProvider:
    """Remote encoder: POST ``{"modality", "payload"}`` and read ``{"vector": [...]}``."""

    def __init__(self, url: str, dim: int, timeout: float = 30.0):
        self.url = url
        self.dim = dim
        self.timeout = timeout
        self.identity = f"http:{url}"

    def embed(self, modality: str, payload: str) -> list[float]:
        body = json.dumps({"modality": modality, "payload": payload}).encode("utf-8")
        request = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                data = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise ProviderError(self.identity, f"embedding request failed: {exc}") from exc
        vector = data.get("vector") if isinstance(data, dict) else None
        if not isinstance(vector, list) or not all(isinstance(x, (int, float)) for x in vector):
            raise ProviderError(self.identity, "malformed embedding response")
        return vector


# -- store and caching front end ---------------------------------------------


class EmbeddingStore:
    """Vectors keyed by ``(kind, id)``, all of one dimension.

    Persisted as JSONL rows ``{"id", "kind", "dim", "values"}`` sorted by key.
    """

    def __init__(self, dim: int, identity: str = ""):
        self.dim = dim
        self.identity = identity
        self._vectors: dict[tuple[str, str], EmbeddingVector] = {}

    def put(self, kind: str, key: str, vector: EmbeddingVector, *, replace: bool = False) -> None:
        if vector.dim != self.dim:
            raise EmbeddingError(f"dimension mismatch: store has {self.dim}, vector has {vector.dim}")
        if not replace and (kind, key) in self._vectors:
            raise KeyError(f"duplicate embedding key {(kind, key)!r}")
        self._vectors[(kind, key)] = vector

    def get(self, kind: str, key: str) -> EmbeddingVector:
        try:
            return self._vectors[(kind, key)]
        except KeyError:
            raise EmbeddingError(f"missing embedding for {kind}:{key}") from None

    def __contains__(self, item: tuple[str, str]) -> bool:
        return item in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def items(self):
        return sorted(self._vectors.items())

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (kind, key), vec in self.items():
                row = {"id": key, "kind": kind, "dim": vec.dim, "values": [float(v) for v in vec.values], "modality": vec.modality}
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingStore:
        store: EmbeddingStore | None = None
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if store is None:
                store = cls(int(row["dim"]), identity=f"file:{Path(path).name}")
            if len(row["values"]) != row["dim"]:
                raise EmbeddingError(f"line {lineno}: values length differs from dim")
            modality = row.get("modality", IMAGE if row["kind"] == IMAGE else TEXT)
            # stored vectors are already unit-norm; renormalizing could perturb the bits
            store.put(row["kind"], row["id"], EmbeddingVector(row["values"], modality, normalize=False))
        if store is None:
            raise EmbeddingError(f"{path}: empty embedding file")
        return store


class Embedder:
    """Caching front end over an :class:`EmbeddingProvider`.

    Vectors are cached by content hash, so the same payload always yields the
    identical (bitwise) vector within a process.
    """

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider
        self.cache = EmbeddingStore(provider.dim, identity=provider.identity)

    @property
    def identity(self) -> str:
        return self.provider.identity

    @property
    def dim(self) -> int:
        return self.provider.dim

    def _embed(self, modality: str, payload: str) -> EmbeddingVector:
        if not payload or not payload.strip():
            raise ValueError(f"{modality} payload must be non-empty")
        key = content_key(modality, payload)
        if (modality, key) in self.cache:
            return self.cache.get(modality, key)
        try:
            raw = self.provider.embed(modality, payload)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(self.identity, f"embedding failed: {exc}") from exc
        try:
            vector = EmbeddingVector(raw, modality)
        except EmbeddingError as exc:
            raise ProviderError(self.identity, str(exc)) from exc
        self.cache.put(modality, key, vector)
        return vector

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._embed(TEXT, text)

    def embed_image(self, image_ref: str) -> EmbeddingVector:
        return self._embed(IMAGE, image_ref)

    def save_cache(self, path: str | Path) -> None:
        self.cache.save(path)


def embed_text(text: str, embedder: Embedder) -> EmbeddingVector:
    return embedder.embed_text(text)


def embed_image(image_ref: str, embedder: Embedder) -> EmbeddingVector:
    return embedder.embed_image(image_ref)


def seeded_embedder(seed: int = 0, dim: int = DEFAULT_TEST_DIM) -> Embedder:
    """The deterministic test embedder wrapped in a cache."""
    return Embedder(HashEmbedder(dim=dim, seed=seed))
