"""A toy deterministic encoder: two-layer tanh perceptron with Adam
updates and bit-exact checkpointing.

The encoder maps D input features to H hidden units through tanh and
then linearly to a d-dimensional embedding. Embeddings are raw layer
output (no normalization); cosine similarity absorbs scale. Defaults
D=32, H=64, d=32 keep finite-difference testing cheap.

Initialization draws weights from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
using the recorded seed; biases start at zero. ``encode`` and ``cosine``
are read-only over the parameters and safe to call concurrently;
``apply_gradients`` returns a fresh parameter object and never mutates
its input.

Checkpoint format v1 (documented contract, stable within the major
version): a canonical JSON object (sorted keys, no whitespace) with

    format      "corrtune-encoder"
    version     1
    input_dim / hidden_dim / embed_dim
    seed, step
    arrays      name -> {shape, data}; data is base64 of the float64
                little-endian row-major buffer. Names: w1 b1 w2 b2 plus
                Adam moments m_* and v_* for each.
    checksum    sha256 hex of the raw array buffers concatenated in
                sorted name order

Loading validates format, version, shapes, finiteness and checksum;
anything off raises ``CheckpointError``.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, replace
from collections.abc import Mapping

import numpy as np

from .errors import CheckpointError, DegenerateInput, InvalidInput, TrainingDiverged

__all__ = [
    "EncoderParams",
    "ForwardCache",
    "init_params",
    "encode",
    "encode_forward",
    "encode_backward",
    "cosine",
    "cosine_pairs",
    "cosine_pairs_backward",
    "apply_gradients",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_id",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_NORM_EPS = 1e-12
_WEIGHT_NAMES = ("w1", "b1", "w2", "b2")
_FORMAT = "corrtune-encoder"
_VERSION = 1


@dataclass(frozen=True)
class EncoderParams:
    """Weights, Adam moment buffers, step counter and the init seed."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    seed: int

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[1]

    def weights(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _WEIGHT_NAMES}


@dataclass(frozen=True)
class ForwardCache:
    """Intermediates of one encode pass, consumed by the backward pass."""

    features: np.ndarray
    hidden: np.ndarray


def init_params(
    input_dim: int = 32, hidden_dim: int = 64, embed_dim: int = 32, seed: int = 0
) -> EncoderParams:
    for name, dim in (
        ("input_dim", input_dim),
        ("hidden_dim", hidden_dim),
        ("embed_dim", embed_dim),
    ):
        if not isinstance(dim, int) or dim < 1:
            raise InvalidInput(f"{name} must be a positive integer, got {dim}")
    rng = np.random.default_rng(seed)
    lim1 = 1.0 / np.sqrt(input_dim)
    lim2 = 1.0 / np.sqrt(hidden_dim)
    w1 = rng.uniform(-lim1, lim1, size=(input_dim, hidden_dim))
    w2 = rng.uniform(-lim2, lim2, size=(hidden_dim, embed_dim))
    b1 = np.zeros(hidden_dim)
    b2 = np.zeros(embed_dim)
    zeros = {
        "w1": np.zeros_like(w1),
        "b1": np.zeros_like(b1),
        "w2": np.zeros_like(w2),
        "b2": np.zeros_like(b2),
    }
    return EncoderParams(
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        m={k: a.copy() for k, a in zeros.items()},
        v=zeros,
        step=0,
        seed=seed,
    )


def _as_feature_matrix(params: EncoderParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise InvalidInput(
            f"features must be (batch, {params.input_dim}), got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidInput("features contain non-finite entries")
    return x


def encode_forward(params: EncoderParams, features) -> tuple[np.ndarray, ForwardCache]:
    x = _as_feature_matrix(params, features)
    hidden = np.tanh(x @ params.w1 + params.b1)
    embeddings = hidden @ params.w2 + params.b2
    return embeddings, ForwardCache(features=x, hidden=hidden)


def encode(params: EncoderParams, features) -> np.ndarray:
    """Embed a (batch, input_dim) feature matrix; deterministic."""
    embeddings, _ = encode_forward(params, features)
    return embeddings


def encode_backward(
    params: EncoderParams, cache: ForwardCache, grad_embeddings: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients for one encode pass, summed over the batch."""
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if g.shape != (cache.hidden.shape[0], params.embed_dim):
        raise InvalidInput(
            f"grad_embeddings must be {(cache.hidden.shape[0], params.embed_dim)},"
            f" got {g.shape}"
        )
    grad_hidden = (g @ params.w2.T) * (1.0 - cache.hidden**2)
    return {
        "w2": cache.hidden.T @ g,
        "b2": g.sum(axis=0),
        "w1": cache.features.T @ grad_hidden,
        "b1": grad_hidden.sum(axis=0),
    }


def cosine(a, b) -> float:
    """Cosine similarity of two embeddings, clamped to [-1, 1]."""
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise InvalidInput(f"shape mismatch: {x.shape} vs {y.shape}")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx <= _NORM_EPS or ny <= _NORM_EPS:
        raise DegenerateInput("cosine of a (near-)zero-norm embedding")
    return float(np.clip(float(x @ y) / (nx * ny), -1.0, 1.0))


def cosine_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rowwise cosine of two equally-shaped embedding matrices."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na <= _NORM_EPS) or np.any(nb <= _NORM_EPS):
        raise DegenerateInput("cosine of a (near-)zero-norm embedding")
    return np.clip(np.sum(a * b, axis=1) / (na * nb), -1.0, 1.0)


def cosine_pairs_backward(
    a: np.ndarray, b: np.ndarray, grad_cos: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop rowwise cosine: gradients w.r.t. both embedding matrices.

    Uses the unclamped cosine derivative; the clamp only ever shaves
    float round-off beyond +-1.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na <= _NORM_EPS) or np.any(nb <= _NORM_EPS):
        raise DegenerateInput("cosine of a (near-)zero-norm embedding")
    ahat = a / na[:, None]
    bhat = b / nb[:, None]
    c = np.sum(ahat * bhat, axis=1)
    g = np.asarray(grad_cos, dtype=np.float64)[:, None]
    grad_a = g * (bhat - c[:, None] * ahat) / na[:, None]
    grad_b = g * (ahat - c[:, None] * bhat) / nb[:, None]
    return grad_a, grad_b


def apply_gradients(
    params: EncoderParams, grads: Mapping[str, np.ndarray], learning_rate: float
) -> EncoderParams:
    """One Adam step (beta1=0.9, beta2=0.999, eps=1e-8); returns new params.

    Missing gradient entries are treated as zero. Non-finite gradients
    raise ``TrainingDiverged``.
    """
    if not (isinstance(learning_rate, (int, float)) and learning_rate > 0):
        raise InvalidInput(f"learning_rate must be positive, got {learning_rate}")
    weights = params.weights()
    full = {}
    for name, w in weights.items():
        g = np.asarray(grads.get(name, np.zeros_like(w)), dtype=np.float64)
        if g.shape != w.shape:
            raise InvalidInput(f"gradient {name} has shape {g.shape}, want {w.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name}")
        full[name] = g
    for name in grads:
        if name not in weights:
            raise InvalidInput(f"unknown gradient entry {name!r}")

    t = params.step + 1
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = full[name]
        m = ADAM_BETA1 * params.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * params.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        updated = w - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if not np.all(np.isfinite(updated)):
            raise TrainingDiverged(f"non-finite parameter {name} after update")
        new_w[name], new_m[name], new_v[name] = updated, m, v
    return replace(
        params,
        w1=new_w["w1"],
        b1=new_w["b1"],
        w2=new_w["w2"],
        b2=new_w["b2"],
        m=new_m,
        v=new_v,
        step=t,
    )


def _encode_array(a: np.ndarray) -> dict:
    buf = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(buf).decode("ascii")}


def _decode_array(entry, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        buf = base64.b64decode(entry["data"].encode("ascii"), validate=True)
        arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    except Exception as exc:
        raise CheckpointError(f"array {name!r} is corrupted: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"array {name!r} contains non-finite values")
    return arr


def _array_table(params: EncoderParams) -> dict[str, np.ndarray]:
    table = dict(params.weights())
    table.update({f"m_{k}": a for k, a in params.m.items()})
    table.update({f"v_{k}": a for k, a in params.v.items()})
    return table


def _checksum(table: Mapping[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(table):
        digest.update(np.ascontiguousarray(table[name], dtype="<f8").tobytes())
    return digest.hexdigest()


def save_checkpoint(params: EncoderParams) -> bytes:
    """Serialize to canonical JSON bytes; round-trips bit-exactly."""
    table = _array_table(params)
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "embed_dim": params.embed_dim,
        "seed": params.seed,
        "step": params.step,
        "arrays": {name: _encode_array(a) for name, a in table.items()},
        "checksum": _checksum(table),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def load_checkpoint(blob: bytes) -> EncoderParams:
    try:
        doc = json.loads(blob.decode("ascii"))
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise CheckpointError("not an encoder checkpoint")
    if doc.get("version") != _VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r}, want {_VERSION}"
        )
    try:
        arrays = doc["arrays"]
        expected = [n for n in _WEIGHT_NAMES]
        expected += [f"m_{n}" for n in _WEIGHT_NAMES] + [f"v_{n}" for n in _WEIGHT_NAMES]
        table = {name: _decode_array(arrays[name], name) for name in expected}
        seed = int(doc["seed"])
        step = int(doc["step"])
        dims = (int(doc["input_dim"]), int(doc["hidden_dim"]), int(doc["embed_dim"]))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if _checksum(table) != doc.get("checksum"):
        raise CheckpointError("checksum mismatch")
    d_in, d_hidden, d_embed = dims
    if table["w1"].shape != (d_in, d_hidden) or table["w2"].shape != (d_hidden, d_embed):
        raise CheckpointError("array shapes disagree with recorded dimensions")
    if table["b1"].shape != (d_hidden,) or table["b2"].shape != (d_embed,):
        raise CheckpointError("array shapes disagree with recorded dimensions")
    return EncoderParams(
        w1=table["w1"],
        b1=table["b1"],
        w2=table["w2"],
        b2=table["b2"],
        m={n: table[f"m_{n}"] for n in _WEIGHT_NAMES},
        v={n: table[f"v_{n}"] for n in _WEIGHT_NAMES},
        step=step,
        seed=seed,
    )


def checkpoint_id(blob: bytes) -> str:
    """Short stable identifier of a serialized checkpoint."""
    return hashlib.sha256(blob).hexdigest()[:12]
