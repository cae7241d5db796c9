"""Query-guided space decoder on small dense arrays.

The decode path is: per-frame visual tokens are enhanced by attending over
caption tokens, the frame's query token then attends over the enhanced
tokens, and a two-layer MLP maps the result to a normalized box. Attention
has no projections, so the space head holds every trainable parameter.

LLM last-layer embeddings are inputs here; :func:`stub_vision_embed` and
:func:`stub_text_embed` stand in for the frozen encoders.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import BBox, Tube
from .losses import LossWeights, space_loss, space_loss_grad

_VISION_STREAM = 0x56
_TEXT_STREAM = 0x54
_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class QueryLayout:
    n_frames: int
    tokens_per_frame: int
    dim: int

    def __post_init__(self) -> None:
        if min(self.n_frames, self.tokens_per_frame, self.dim) < 1:
            raise ValueError(f"layout sizes must be >= 1, got {self}")


@dataclass
class SpaceHeadParams:
    """Linear(D->D) -> GELU -> Linear(D->4) -> sigmoid.

    Rows are features: ``hidden = s @ w1 + b1``.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "gelu_tanh"

    def __post_init__(self) -> None:
        self.w1, self.b1, self.w2, self.b2 = (
            np.asarray(a, dtype=np.float64) for a in (self.w1, self.b1, self.w2, self.b2)
        )
        d = self.w1.shape[0]
        if self.w1.shape != (d, d) or self.b1.shape != (d,):
            raise ShapeError(f"first layer must be ({d},{d}) + ({d},), got {self.w1.shape} + {self.b1.shape}")
        if self.w2.shape != (d, 4) or self.b2.shape != (4,):
            raise ShapeError(f"second layer must be ({d},4) + (4,), got {self.w2.shape} + {self.b2.shape}")
        if self.activation != "gelu_tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, dim: int, seed: int, scale: float = 1.0) -> SpaceHeadParams:
        rng = np.random.default_rng([seed, dim])
        return cls(
            w1=rng.normal(0.0, scale / math.sqrt(dim), (dim, dim)),
            b1=rng.normal(0.0, 0.1, dim),
            w2=rng.normal(0.0, scale / math.sqrt(dim), (dim, 4)),
            b2=rng.normal(0.0, 0.1, 4),
        )

    @classmethod
    def zeros(cls, dim: int) -> SpaceHeadParams:
        return cls(np.zeros((dim, dim)), np.zeros(dim), np.zeros((dim, 4)), np.zeros(4))

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.named_arrays().values()])

    @classmethod
    def unflatten(cls, flat: np.ndarray, dim: int) -> SpaceHeadParams:
        flat = np.asarray(flat, dtype=np.float64)
        sizes = [dim * dim, dim, dim * 4, 4]
        if flat.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters for dim {dim}, got {flat.size}")
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(dim, dim), parts[1], parts[2].reshape(dim, 4), parts[3])


def _unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((rows, dim))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # a zero draw has probability ~0; guard anyway so rows stay unit-norm
    x[norms[:, 0] == 0.0, 0] = 1.0
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def stub_vision_embed(frame_id: int, layout: QueryLayout, seed: int) -> np.ndarray:
    """Deterministic unit-norm ``(S, D)`` tokens for one frame."""
    rng = np.random.default_rng([_VISION_STREAM, seed, frame_id])
    return _unit_rows(rng, layout.tokens_per_frame, layout.dim)


def stub_text_embed(tokens: Sequence[int], dim: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm ``(len(tokens), D)`` embeddings, one row per token id."""
    out = np.empty((len(tokens), dim))
    for k, tok in enumerate(tokens):
        rng = np.random.default_rng([_TEXT_STREAM, seed, int(tok)])
        out[k] = _unit_rows(rng, 1, dim)[0]
    return out


def interleave_queries(visual: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Append each frame's query row after its visual tokens: ``(N, S+1, D)``."""
    visual, queries = np.asarray(visual), np.asarray(queries)
    if visual.ndim != 3 or queries.ndim != 3 or queries.shape[1] != 1:
        raise ShapeError(f"expected (N,S,D) and (N,1,D), got {visual.shape} and {queries.shape}")
    if visual.shape[0] != queries.shape[0] or visual.shape[2] != queries.shape[2]:
        raise ShapeError(f"frame/dim mismatch: {visual.shape} vs {queries.shape}")
    return np.concatenate([visual, queries], axis=1)


def deinterleave_queries(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(h)
    if h.ndim != 3 or h.shape[1] < 2:
        raise ShapeError(f"expected (N, S+1, D) with S >= 1, got {h.shape}")
    return h[:, :-1, :], h[:, -1:, :]


def query_positions(layout: QueryLayout) -> list[int]:
    """Flat sequence positions of the query tokens once ``H`` is flattened."""
    block = layout.tokens_per_frame + 1
    return [(i + 1) * block - 1 for i in range(layout.n_frames)]


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    q, k = np.atleast_2d(q), np.atleast_2d(k)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] < 1:
        raise ShapeError("attention needs at least one key")
    scores = q @ k.T / math.sqrt(q.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    return w / w.sum(axis=1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product attention with no projections."""
    k, v = np.atleast_2d(k), np.atleast_2d(v)
    if k.shape != v.shape:
        raise ShapeError(f"keys {k.shape} and values {v.shape} differ")
    return attention_weights(q, k) @ v


def dual_cross_attention(
    qv: np.ndarray, qs: np.ndarray, kt: np.ndarray, vt: np.ndarray
) -> np.ndarray:
    """Text-enhance the frame's visual tokens, then pool them with the frame query.

    Returns the ``(1, D)`` spatial representation of the frame.
    """
    enhanced = attention(qv, kt, vt)
    return attention(np.atleast_2d(qs), enhanced, enhanced)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _head_forward(s: np.ndarray, params: SpaceHeadParams):
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape != (1, params.dim):
        raise ShapeError(f"space head expects (1, {params.dim}), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite input to space head")
    pre = s @ params.w1 + params.b1
    act = _gelu(pre)
    logits = act @ params.w2 + params.b2
    out = _sigmoid(logits)
    if not np.all(np.isfinite(out)) or not np.all(np.isfinite(pre)):
        raise FloatingPointError("non-finite activation in space head")
    return s, pre, act, out[0]


def space_head(s: np.ndarray, params: SpaceHeadParams) -> BBox:
    return BBox.from_seq(_head_forward(s, params)[3])


def space_head_backward(
    s: np.ndarray, params: SpaceHeadParams, d_box: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients given ``d_box``, the loss gradient w.r.t. the output box."""
    s, pre, act, out = _head_forward(s, params)
    d_logits = (np.asarray(d_box, dtype=np.float64) * out * (1.0 - out))[None, :]
    d_act = d_logits @ params.w2.T
    d_pre = d_act * _gelu_grad(pre)
    return {
        "w1": s.T @ d_pre,
        "b1": d_pre[0],
        "w2": act.T @ d_logits,
        "b2": d_logits[0],
    }


@dataclass(frozen=True)
class FrameFeatures:
    """LLM last-layer embeddings for one frame: visual tokens and its query."""

    visual: np.ndarray
    query: np.ndarray


def _frame_representation(
    frame: int, features: Mapping[int, FrameFeatures], kt: np.ndarray, vt: np.ndarray
) -> np.ndarray:
    if frame not in features:
        raise KeyError(f"no decoder features for frame {frame}")
    f = features[frame]
    return dual_cross_attention(f.visual, f.query, kt, vt)


def decode_tube(
    frame_range: tuple[int, int],
    features: Mapping[int, FrameFeatures],
    kt: np.ndarray,
    vt: np.ndarray,
    params: SpaceHeadParams,
) -> Tube:
    first, last = frame_range
    if first > last:
        raise ValueError(f"empty frame range [{first}, {last}]")
    boxes = [
        space_head(_frame_representation(f, features, kt, vt), params)
        for f in range(first, last + 1)
    ]
    return Tube(first, boxes)


def decode_space_loss_grad(
    frame_range: tuple[int, int],
    features: Mapping[int, FrameFeatures],
    kt: np.ndarray,
    vt: np.ndarray,
    params: SpaceHeadParams,
    gt: Tube,
    weights: LossWeights = LossWeights(),
) -> tuple[float, SpaceHeadParams]:
    """Space loss of the decoded tube against ``gt`` and its gradient w.r.t. the head."""
    first, last = frame_range
    reps = [_frame_representation(f, features, kt, vt) for f in range(first, last + 1)]
    pred = Tube(first, [space_head(r, params) for r in reps])
    loss = space_loss(pred, gt, weights, frame_range)
    d_boxes = space_loss_grad(pred, gt, weights, frame_range)
    total = {name: np.zeros_like(a) for name, a in params.named_arrays().items()}
    for rep, d_box in zip(reps, d_boxes):
        for name, g in space_head_backward(rep, params, d_box).items():
            total[name] += g
    return loss, SpaceHeadParams(**total)


def decoder_parameters(params: SpaceHeadParams) -> dict[str, np.ndarray]:
    """Every trainable array on the decode path, keyed by owner."""
    return {f"space_head.{name}": a for name, a in params.named_arrays().items()}


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write a JSON shape header line followed by little-endian float64 data."""
    array = np.ascontiguousarray(array, dtype="<f8")
    header = json.dumps({"dtype": "<f8", "shape": list(array.shape)}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(array.tobytes(order="C"))


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        payload = fh.read()
    if header.get("dtype") != "<f8":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(d) for d in header["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(payload) != expected:
        raise ValueError(f"payload is {len(payload)} bytes, shape {shape} needs {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
