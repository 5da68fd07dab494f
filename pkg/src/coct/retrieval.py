"""Lexical retrieval over concept descriptions for RAG prompting.

BM25 (k1=1.2, b=0.75) is the default ranker. An OpenAI-compatible
embeddings endpoint can be plugged in; transport failures there fall back
to BM25 with a warning flag instead of failing the generation.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import requests

from .backend import API_KEY_ENV, TransportError
from .concepts import ConceptSet
from .metrics import tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingConfig:
    endpoint: str
    model: str = "default"
    api_key_env: str = API_KEY_ENV
    timeout_s: float = 30.0


class RetrieverIndex:
    """One document per concept: its description text.

    Scoring is deterministic; ties break by document (concept list) order.
    """

    def __init__(self, documents: list[tuple[str, str]],
                 k1: float = 1.2, b: float = 0.75,
                 embedding: EmbeddingConfig | None = None):
        if not documents:
            raise ValueError("index needs at least one document")
        self.documents = list(documents)
        self.k1 = k1
        self.b = b
        self.embedding = embedding
        self._doc_tokens = [tokenize(text) for _, text in self.documents]
        self._doc_counts = [Counter(toks) for toks in self._doc_tokens]
        self._avgdl = sum(len(t) for t in self._doc_tokens) / len(self._doc_tokens)
        df: Counter = Counter()
        for counts in self._doc_counts:
            df.update(counts.keys())
        n = len(self.documents)
        self._idf = {
            term: math.log(1.0 + (n - d + 0.5) / (d + 0.5)) for term, d in df.items()
        }

    @classmethod
    def from_concept_set(cls, concept_set: ConceptSet,
                         embedding: EmbeddingConfig | None = None) -> RetrieverIndex:
        docs = [
            (c.name, c.description) for c in concept_set.concepts if c.description
        ]
        if not docs:
            raise ValueError(
                f"concept set {concept_set.id!r} has no descriptions to index"
            )
        return cls(docs, embedding=embedding)

    def __len__(self) -> int:
        return len(self.documents)

    def _bm25_score(self, query_terms: list[str], doc_idx: int) -> float:
        counts = self._doc_counts[doc_idx]
        dl = len(self._doc_tokens[doc_idx])
        norm = self.k1 * (1.0 - self.b + self.b * dl / self._avgdl)
        score = 0.0
        for term in query_terms:
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            score += self._idf.get(term, 0.0) * tf * (self.k1 + 1.0) / (tf + norm)
        return score

    def bm25_rank(self, query: str, k: int) -> list[tuple[str, float]]:
        query_terms = sorted(set(tokenize(query)))
        scored = [
            (self._bm25_score(query_terms, i), i) for i in range(len(self.documents))
        ]
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        return [(self.documents[i][0], s) for s, i in scored[:k]]

    def _embed(self, texts: list[str]) -> list[list[float]]:
        import os

        url = self.embedding.endpoint.rstrip("/") + "/embeddings"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.embedding.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                url,
                json={"model": self.embedding.model, "input": texts},
                headers=headers,
                timeout=self.embedding.timeout_s,
            )
            resp.raise_for_status()
            data = resp.json()["data"]
            return [entry["embedding"] for entry in data]
        except (requests.RequestException, KeyError, ValueError, TypeError) as exc:
            raise TransportError(f"embedding endpoint failed: {exc}") from exc

    def embed_rank(self, query: str, k: int) -> list[tuple[str, float]]:
        vectors = self._embed([query] + [text for _, text in self.documents])
        qv, doc_vs = vectors[0], vectors[1:]

        def cosine(u, v):
            nu = math.sqrt(sum(x * x for x in u))
            nv = math.sqrt(sum(x * x for x in v))
            if nu == 0 or nv == 0:
                return 0.0
            return sum(a * b for a, b in zip(u, v)) / (nu * nv)

        scored = [(cosine(qv, dv), i) for i, dv in enumerate(doc_vs)]
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        return [(self.documents[i][0], s) for s, i in scored[:k]]


def retrieve_with_info(index: RetrieverIndex, query: str, k: int) -> tuple[list[tuple[str, float]], dict]:
    """Ranked (concept, score) list plus how it was produced: whether the
    embedding path ran, and whether it fell back to BM25."""
    if not 1 <= k <= len(index):
        raise ValueError(f"k must be in 1..{len(index)}, got {k}")
    info = {"used_embedding": False, "fallback": False}
    if index.embedding is not None:
        try:
            ranked = index.embed_rank(query, k)
            info["used_embedding"] = True
            return ranked, info
        except TransportError as exc:
            logger.warning("embedding retrieval failed, falling back to BM25: %s", exc)
            info["fallback"] = True
    return index.bm25_rank(query, k), info


def retrieve(index: RetrieverIndex, query: str, k: int) -> list[tuple[str, float]]:
    ranked, _ = retrieve_with_info(index, query, k)
    return ranked
