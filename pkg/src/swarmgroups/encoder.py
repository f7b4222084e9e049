"""Trajectory encoder with first-order attention, the second-order
interaction matrix A2 = A1 A1^T, and an entropy-aware gated fusion.

Tokens are laid out time-major: row ``t * N + n`` is agent ``n`` at frame
``t``. All functions work on plain arrays and on autodiff nodes alike.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InputError
from .numcore import Rng
from .numcore import autodiff as ad

# Centered positions span tens of world units; this keeps the raw feature
# scale comparable to the per-step velocities.
POSITION_SCALE = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    layers: int = 2
    gate_hidden: int = 32


def init_encoder_params(cfg: EncoderConfig, rng: Rng) -> dict[str, np.ndarray]:
    d, h = cfg.d, cfg.gate_hidden
    p = {
        "in_W": rng.normal((4, d)) / 2.0,
        "in_b": np.zeros((1, d)),
        "time_scale": np.full((1, 1), 0.1),
    }
    for layer in range(cfg.layers):
        for name in ("Wq", "Wk", "Wv"):
            p[f"l{layer}_{name}"] = rng.normal((d, d)) / np.sqrt(d)
    p["gate_W1"] = rng.normal((2 * d + 1, h)) / np.sqrt(2 * d + 1)
    p["gate_b1"] = np.zeros((1, h))
    p["gate_W2"] = rng.normal((h, 1)) / np.sqrt(h)
    p["gate_b2"] = np.zeros((1, 1))
    return p


def token_features(X: np.ndarray) -> np.ndarray:
    """Per-token [centered position, finite-difference velocity], time-major."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != 2:
        raise DimensionError(f"observation window must be frames x agents x 2, got {X.shape}")
    frames, n, _ = X.shape
    centered = (X - X.mean(axis=(0, 1), keepdims=True)) * POSITION_SCALE
    vel = np.zeros_like(X)
    if frames > 1:
        vel[1:] = X[1:] - X[:-1]
        vel[0] = vel[1]
    return np.concatenate([centered, vel], axis=2).reshape(frames * n, 4)


def time_encoding(frames: int, n: int, d: int) -> np.ndarray:
    """Sinusoidal frame encoding repeated for each agent's token."""
    t = np.arange(frames)[:, None]
    i = np.arange(d)[None, :]
    angle = t / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return np.repeat(pe, n, axis=0)


def embed(X, params):
    frames, n = np.shape(X)[0], np.shape(X)[1]
    d = ad.value(params["in_W"]).shape[1]
    feats = token_features(X)
    return feats @ params["in_W"] + params["in_b"] + params["time_scale"] * time_encoding(frames, n, d)


def first_order(tokens, params, layer: int):
    """Single-head attention: returns (A1, A1 @ V)."""
    d = ad.value(tokens).shape[1]
    q = tokens @ params[f"l{layer}_Wq"]
    k = tokens @ params[f"l{layer}_Wk"]
    a1 = ad.softmax_rows(ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(d)))
    return a1, a1 @ (tokens @ params[f"l{layer}_Wv"])


def second_order(a1):
    return ad.matmul(a1, ad.transpose(a1))


def group_embedding(a2, f_agent):
    return a2 @ f_agent


def attention_entropy(a2):
    """Entropy of each row of ``a2`` after normalizing it to sum 1, divided by log(M)."""
    m = ad.value(a2).shape[1]
    if m == 1:
        return np.zeros((ad.value(a2).shape[0], 1))
    p = a2 / ad.row_sum(a2)
    return ad.row_sum(ad.xlogx(p)) * (-1.0 / np.log(m))


def gate(f_agent, f_group, a2, params):
    """Gate coefficients (column) and the normalized entropies that fed them."""
    entropy = attention_entropy(a2)
    z = ad.concat_cols([f_agent, f_group, entropy])
    hidden = ad.tanh(z @ params["gate_W1"] + params["gate_b1"])
    alpha = ad.sigmoid(hidden @ params["gate_W2"] + params["gate_b2"])
    return alpha, entropy


def fuse(f_agent, f_group, alpha):
    return (1.0 - alpha) * f_agent + alpha * f_group


@dataclass
class EncoderOutput:
    f_agent: object
    a1: object
    a2: object
    f_group: object
    alpha: object
    entropy: object
    f_final: object
    frames: int
    n_agents: int


def encode(X, params, layers: int | None = None) -> EncoderOutput:
    """Full forward pass over one observation window."""
    X = np.asarray(X, dtype=np.float64)
    frames, n = X.shape[:2]
    if layers is None:
        layers = sum(1 for k in params if k.endswith("_Wq"))
    h = embed(X, params)
    a1 = None
    for layer in range(layers):
        a1, v = first_order(h, params, layer)
        h = ad.layer_norm(h + v)
    a2 = second_order(a1)
    f_group = group_embedding(a2, h)
    alpha, entropy = gate(h, f_group, a2, params)
    return EncoderOutput(h, a1, a2, f_group, alpha, entropy, fuse(h, f_group, alpha), frames, n)


def agent_pool_matrix(frames: int, n: int) -> np.ndarray:
    """N x (frames*N) matrix averaging each agent's tokens."""
    return np.tile(np.eye(n), (1, frames)) / frames


def per_agent(values, frames: int, n: int) -> np.ndarray:
    """Average a per-token column (e.g. gate values) over each agent's tokens."""
    return ad.value(values).reshape(frames, n).mean(axis=0)


# -- checkpoint container ---------------------------------------------------

def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """One JSON manifest line, then raw little-endian float64 payload."""
    entries, offset, blobs = [], 0, []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"format": "swarmgroups-ckpt-1", "meta": meta or {}, "tensors": entries}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(manifest.encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path):
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise InputError(f"{path}: not a checkpoint (no manifest line)")
    try:
        manifest = json.loads(head)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed checkpoint manifest ({exc})") from None
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return tensors, manifest.get("meta", {})
