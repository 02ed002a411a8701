"""Next-token scorers over fused text and image context.

Two implementations of the scorer contract (``score_next(context, prefix)
-> vocab-sized logits``):

* ``LexicalOverlapScorer``: deterministic baseline; the logit of a token
  is the number of times its term occurs in the context text.
* ``TrainableScorer``: a compact trainable model.  Image feature vectors
  are projected into the embedding space and prepended to the embedded
  text sequence as position-free rows; one causal self-attention block
  plus a tanh feed-forward produces hidden states, and an output
  projection maps the final state to logits.  Image rows whose projected
  vector is exactly zero are dropped, so an all-zero projection reduces
  bit-for-bit to the text-only computation.

Gradients are computed analytically in ``backward`` (verified against
central finite differences in the test suite).  Parameters ship in a
binary checkpoint: JSON header line with dimensions, vocabulary hash and
seed, then little-endian float32 tensors in a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import DataError
from .corpus import FIRST_TERM_ID, CorpusManifest

DEFAULT_D_MODEL = 64

PARAM_ORDER = ("emb", "img_proj", "wq", "wk", "wv", "w1", "b1", "w2", "b2", "out")

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ScorerContext:
    """Fused scoring input: token ids of topic + inferred query, plus the
    conversation's image feature vectors (empty for text-only runs)."""

    text_tokens: tuple[int, ...]
    image_vectors: tuple[np.ndarray, ...] = ()

    def __post_init__(self) -> None:
        if not self.text_tokens:
            raise ValueError("scorer context needs at least one text token")


def vocab_size(manifest: CorpusManifest) -> int:
    return FIRST_TERM_ID + len(manifest.vocabulary)


def vocab_hash(manifest: CorpusManifest) -> str:
    joined = ";".join(f"{t}={i}" for t, i in sorted(manifest.vocabulary.items()))
    return hashlib.sha1(joined.encode("utf-8")).hexdigest()


class LexicalOverlapScorer:
    """Term-overlap counts as logits; ignores images and the prefix."""

    def __init__(self, n_vocab: int):
        self.n_vocab = n_vocab

    def score_next(self, context: ScorerContext, prefix: Sequence[int]) -> np.ndarray:
        logits = np.zeros(self.n_vocab, dtype=np.float64)
        for token in context.text_tokens:
            if FIRST_TERM_ID <= token < self.n_vocab:
                logits[token] += 1.0
        return logits


@dataclass
class FusionParameters:
    emb: np.ndarray       # (vocab, d)
    img_proj: np.ndarray  # (d_img, d)
    wq: np.ndarray        # (d, d)
    wk: np.ndarray        # (d, d)
    wv: np.ndarray        # (d, d)
    w1: np.ndarray        # (d, d)
    b1: np.ndarray        # (d,)
    w2: np.ndarray        # (d, d)
    b2: np.ndarray        # (d,)
    out: np.ndarray       # (d, vocab)
    vocab_hash: str = ""
    seed: int = 0

    @property
    def n_vocab(self) -> int:
        return self.emb.shape[0]

    @property
    def d_model(self) -> int:
        return self.emb.shape[1]

    @property
    def d_img(self) -> int:
        return self.img_proj.shape[0]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_ORDER]

    def validate(self) -> None:
        d = self.d_model
        expected = {
            "emb": (self.n_vocab, d),
            "img_proj": (self.d_img, d),
            "wq": (d, d), "wk": (d, d), "wv": (d, d),
            "w1": (d, d), "b1": (d,), "w2": (d, d), "b2": (d,),
            "out": (d, self.n_vocab),
        }
        for name, arr in self.arrays():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    def copy(self) -> "FusionParameters":
        return FusionParameters(
            **{name: arr.copy() for name, arr in self.arrays()},
            vocab_hash=self.vocab_hash,
            seed=self.seed,
        )


def init_parameters(
    n_vocab: int,
    d_img: int,
    d_model: int = DEFAULT_D_MODEL,
    seed: int = 0,
    vocab_hash: str = "",
) -> FusionParameters:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_model)

    def mat(rows: int, cols: int) -> np.ndarray:
        return rng.normal(0.0, scale, size=(rows, cols))

    return FusionParameters(
        emb=mat(n_vocab, d_model),
        img_proj=rng.normal(0.0, 1.0 / np.sqrt(max(d_img, 1)), size=(d_img, d_model)),
        wq=mat(d_model, d_model),
        wk=mat(d_model, d_model),
        wv=mat(d_model, d_model),
        w1=mat(d_model, d_model),
        b1=np.zeros(d_model),
        w2=mat(d_model, d_model),
        b2=np.zeros(d_model),
        out=mat(d_model, n_vocab),
        vocab_hash=vocab_hash,
        seed=seed,
    )


def zero_gradients(params: FusionParameters) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.arrays()}


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal table; no learned positions."""
    pos = np.arange(length)[:, None].astype(np.float64)
    dim = np.arange(d_model)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class TrainableScorer:
    """Causal fusion model over projected image rows + embedded text."""

    def __init__(self, params: FusionParameters):
        params.validate()
        self.params = params

    # -- forward ---------------------------------------------------------

    def _inputs(self, context: ScorerContext, tokens: Sequence[int]):
        p = self.params
        img_rows = []
        for vec in context.image_vectors:
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (p.d_img,):
                raise ValueError(
                    f"image vector has shape {vec.shape}, projection expects ({p.d_img},)"
                )
            projected = vec @ p.img_proj
            if np.any(projected != 0.0):
                img_rows.append((vec, projected))
        text = list(context.text_tokens) + list(tokens)
        if max(text) >= p.n_vocab or min(text) < 0:
            raise ValueError("token id outside the scorer vocabulary")
        pos = positional_encoding(len(text), p.d_model)
        x_text = p.emb[text] + pos
        x_img = np.array([row for _, row in img_rows]).reshape(len(img_rows), p.d_model)
        x = np.vstack([x_img, x_text]) if img_rows else x_text
        return x, [vec for vec, _ in img_rows], text

    def forward(self, context: ScorerContext, tokens: Sequence[int]):
        """Logits at every position plus the cache for ``backward``."""
        p = self.params
        x, img_vecs, text = self._inputs(context, tokens)
        s = x.shape[0]
        q = x @ p.wq
        k = x @ p.wk
        v = x @ p.wv
        scores = (q @ k.T) / np.sqrt(p.d_model)
        mask = np.triu(np.ones((s, s), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
        scores -= scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        attn = weights / weights.sum(axis=1, keepdims=True)
        h = x + attn @ v
        m = h @ p.w1 + p.b1
        g = np.tanh(m)
        f = g @ p.w2 + p.b2
        y = h + f
        logits = y @ p.out
        cache = {
            "x": x, "q": q, "k": k, "v": v, "attn": attn,
            "h": h, "g": g, "y": y,
            "img_vecs": img_vecs, "text": text,
        }
        return logits, cache

    def score_next(self, context: ScorerContext, prefix: Sequence[int]) -> np.ndarray:
        logits, _ = self.forward(context, prefix)
        return logits[-1]

    # -- backward --------------------------------------------------------

    def backward(self, cache: dict, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(logits)."""
        p = self.params
        grads = zero_gradients(p)
        x, q, k, v = cache["x"], cache["q"], cache["k"], cache["v"]
        attn, h, g, y = cache["attn"], cache["h"], cache["g"], cache["y"]

        grads["out"] = y.T @ d_logits
        d_y = d_logits @ p.out.T
        d_h = d_y.copy()
        d_f = d_y
        grads["b2"] = d_f.sum(axis=0)
        grads["w2"] = g.T @ d_f
        d_g = d_f @ p.w2.T
        d_m = d_g * (1.0 - g * g)
        grads["b1"] = d_m.sum(axis=0)
        grads["w1"] = h.T @ d_m
        d_h += d_m @ p.w1.T

        d_x = d_h.copy()
        d_attn = d_h @ v.T
        d_v = attn.T @ d_h
        d_scores = attn * (d_attn - (attn * d_attn).sum(axis=1, keepdims=True))
        d_scores /= np.sqrt(p.d_model)
        d_q = d_scores @ k
        d_k = d_scores.T @ q
        d_x += d_q @ p.wq.T + d_k @ p.wk.T + d_v @ p.wv.T
        grads["wq"] = x.T @ d_q
        grads["wk"] = x.T @ d_k
        grads["wv"] = x.T @ d_v

        n_img = len(cache["img_vecs"])
        for j, vec in enumerate(cache["img_vecs"]):
            grads["img_proj"] += np.outer(vec, d_x[j])
        for offset, token in enumerate(cache["text"]):
            grads["emb"][token] += d_x[n_img + offset]
        return grads


def apply_gradients(
    params: FusionParameters, grads: dict[str, np.ndarray], lr: float
) -> None:
    for name, arr in params.arrays():
        arr -= lr * grads[name]


def save_checkpoint(params: FusionParameters, path: str | Path) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "n_vocab": params.n_vocab,
        "d_model": params.d_model,
        "d_img": params.d_img,
        "vocab_hash": params.vocab_hash,
        "seed": params.seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in params.arrays():
            data = arr.astype("<f4").tobytes()
            fh.write(struct.pack("<I", len(data)))
            fh.write(data)


def load_checkpoint(path: str | Path) -> FusionParameters:
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(blob[:newline])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad checkpoint header: {exc.msg}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format")
    d, n_vocab, d_img = header["d_model"], header["n_vocab"], header["d_img"]
    shapes = {
        "emb": (n_vocab, d), "img_proj": (d_img, d),
        "wq": (d, d), "wk": (d, d), "wv": (d, d),
        "w1": (d, d), "b1": (d,), "w2": (d, d), "b2": (d,),
        "out": (d, n_vocab),
    }
    pos = newline + 1
    tensors = {}
    for name in PARAM_ORDER:
        if pos + 4 > len(blob):
            raise DataError(f"{path}: truncated checkpoint at byte {pos}")
        (size,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + size > len(blob):
            raise DataError(f"{path}: truncated checkpoint at byte {pos}")
        flat = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=pos)
        pos += size
        tensors[name] = flat.astype(np.float64).reshape(shapes[name])
    if pos != len(blob):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    params = FusionParameters(
        **tensors,
        vocab_hash=header.get("vocab_hash", ""),
        seed=int(header.get("seed", 0)),
    )
    params.validate()
    return params
