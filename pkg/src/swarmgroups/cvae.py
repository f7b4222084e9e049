"""Conditional variational trajectory predictor built on the swarm-aware encoder.

The posterior sees past and future frames; the decoder sees the pooled
past embedding plus a latent sample and emits future offsets (accumulated
from the last observed position) and a reconstruction of the past.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence as Seq

import numpy as np

from .encoder import EncoderConfig, agent_pool_matrix, encode, init_encoder_params, load_checkpoint, save_checkpoint
from .errors import ConfigError, InputError, NumericalError
from .numcore import Rng, Tape, grad
from .numcore import autodiff as ad
from .swarmsim import Sequence, training_origins, window

log = logging.getLogger(__name__)

LOSS_TERMS = ("elbo", "rec", "variety", "sym", "psd", "balance")


@dataclass(frozen=True)
class ModelConfig:
    H: int = 8
    T: int = 12
    d: int = 32
    layers: int = 2
    gate_hidden: int = 32
    z: int = 16

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.d, self.layers, self.gate_hidden)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 8
    K: int = 5
    prior_var: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: dict = field(default_factory=lambda: {t: 1.0 for t in LOSS_TERMS})
    # None = every stride-T window of every training sequence each epoch
    windows_per_sequence: int | None = None

    def validate(self) -> "TrainConfig":
        if self.K < 1:
            raise ConfigError("K", "must be >= 1")
        if not self.prior_var > 0:
            raise ConfigError("prior_var", "must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        unknown = set(self.weights) - set(LOSS_TERMS)
        if unknown:
            raise ConfigError(f"weights.{sorted(unknown)[0]}", "unknown loss term")
        return self


@dataclass
class LossReport:
    elbo: float = 0.0
    rec: float = 0.0
    variety: float = 0.0
    sym: float = 0.0
    psd: float = 0.0
    balance: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, rng: Rng) -> dict[str, np.ndarray]:
    p = init_encoder_params(cfg.encoder, rng.child(0))
    r = rng.child(1)
    d, z = cfg.d, cfg.z
    w = d + z
    p["post_Wmu"] = r.normal((d, z)) / np.sqrt(d)
    p["post_bmu"] = np.zeros((1, z))
    p["post_Ws"] = r.normal((d, z)) / np.sqrt(d)
    # softplus(0.5413) = 1, i.e. sigma starts at the prior scale
    p["post_bs"] = np.full((1, z), 0.5413248546129181)
    for b in range(2):
        p[f"dec_r{b}_W1"] = r.normal((w, w)) / np.sqrt(w)
        p[f"dec_r{b}_b1"] = np.zeros((1, w))
        p[f"dec_r{b}_W2"] = r.normal((w, w)) / np.sqrt(w) * 0.1
        p[f"dec_r{b}_b2"] = np.zeros((1, w))
    p["dec_fut_W"] = r.normal((w, 2 * cfg.T)) / np.sqrt(w) * 0.1
    p["dec_fut_b"] = np.zeros((1, 2 * cfg.T))
    p["dec_past_W"] = r.normal((w, 2 * (cfg.H + 1))) / np.sqrt(w) * 0.1
    p["dec_past_b"] = np.zeros((1, 2 * (cfg.H + 1)))
    return p


def frames_to_rows(F: np.ndarray) -> np.ndarray:
    """[frames, N, 2] -> [N, 2*frames] with (x, y) pairs per frame."""
    F = np.asarray(F, dtype=np.float64)
    return F.transpose(1, 0, 2).reshape(F.shape[1], -1)


def rows_to_frames(R: np.ndarray) -> np.ndarray:
    R = ad.value(R)
    return R.reshape(R.shape[0], -1, 2).transpose(1, 0, 2)


def _cumulative(T: int) -> np.ndarray:
    """Right-multiplying offsets [N, 2T] by this gives running sums per axis."""
    return np.kron(np.triu(np.ones((T, T))), np.eye(2))


@dataclass
class LatentParams:
    mu: object
    sigma: object


def posterior(X, Y, params, cfg: ModelConfig) -> LatentParams:
    XY = np.concatenate([np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)], axis=0)
    enc = encode(XY, params, cfg.layers)
    pooled = agent_pool_matrix(enc.frames, enc.n_agents) @ enc.f_final
    mu = pooled @ params["post_Wmu"] + params["post_bmu"]
    sigma = ad.softplus(pooled @ params["post_Ws"] + params["post_bs"])
    return LatentParams(mu, sigma)


def decode_context(enc, latent, params):
    """Residual MLP over [pooled f_final || latent]."""
    pooled = agent_pool_matrix(enc.frames, enc.n_agents) @ enc.f_final
    h = ad.concat_cols([pooled, latent])
    for b in range(2):
        inner = ad.tanh(h @ params[f"dec_r{b}_W1"] + params[f"dec_r{b}_b1"])
        h = h + (inner @ params[f"dec_r{b}_W2"] + params[f"dec_r{b}_b2"])
    return h


def decode_rows(X, enc, latent, params, cfg: ModelConfig):
    """Future rows [N, 2T] and past-reconstruction rows [N, 2(H+1)]."""
    X = np.asarray(X, dtype=np.float64)
    h = decode_context(enc, latent, params)
    last = X[-1]  # [N, 2]
    offsets = h @ params["dec_fut_W"] + params["dec_fut_b"]
    future = np.tile(last, (1, cfg.T)) + offsets @ _cumulative(cfg.T)
    past = np.tile(last, (1, X.shape[0])) + (h @ params["dec_past_W"] + params["dec_past_b"])
    return future, past


def decode(X, latent, params, cfg: ModelConfig):
    """Predicted future [T, N, 2] and reconstructed past [H+1, N, 2]."""
    enc = encode(X, params, cfg.layers)
    future, past = decode_rows(X, enc, latent, params, cfg)
    return rows_to_frames(future), rows_to_frames(past)


# -- losses -----------------------------------------------------------------

def kl_diag_gaussian(mu, sigma, prior_var: float):
    """KL(N(mu, diag sigma^2) || N(0, prior_var I)), summed over all entries."""
    var = ad.square(sigma)
    terms = math.log(prior_var) - ad.log(var) + (var + ad.square(mu)) * (1.0 / prior_var) - 1.0
    return ad.sum_all(terms) * 0.5


def loss_traj(X, Y, future_samples: Seq, past_hat, latent: LatentParams, prior_var: float):
    """(elbo, rec, variety); the ELBO uses the first sample."""
    y = frames_to_rows(Y)
    x = frames_to_rows(X)
    errs = [ad.sum_all(ad.square(f - y)) for f in future_samples]
    elbo = errs[0] + kl_diag_gaussian(latent.mu, latent.sigma, prior_var)
    rec = ad.sum_all(ad.square(past_hat - x))
    variety = ad.minimum(errs)
    return elbo, rec, variety


def time_block_average(a, n: int):
    """Average of the same-time N x N diagonal blocks of a token matrix."""
    m = ad.value(a).shape[0]
    frames = m // n
    acc = None
    for t in range(frames):
        blk = ad.block(a, t * n, (t + 1) * n, t * n, (t + 1) * n)
        acc = blk if acc is None else acc + blk
    return acc * (1.0 / frames)


def loss_swarm(a2, n: int):
    """(sym, psd) penalties on the time-averaged affinity."""
    S = time_block_average(a2, n)
    sym = ad.sum_all(ad.square(S - ad.transpose(S)))
    psd = ad.psd_penalty(S)
    return sym, psd


def loss_balance(alpha, entropy):
    """Mean squared gap between gate values and their 1 - entropy targets."""
    return ad.mean_all(ad.square(alpha - (1.0 - entropy)))


def window_losses(X, Y, params, cfg: ModelConfig, tcfg: TrainConfig, eps: Seq[np.ndarray]):
    """Every loss term for one training window, as nodes (or floats on arrays)."""
    latent = posterior(X, Y, params, cfg)
    enc = encode(X, params, cfg.layers)
    futures, past_hat = [], None
    for k, e in enumerate(eps):
        sample = latent.mu + latent.sigma * e
        fut, past = decode_rows(X, enc, sample, params, cfg)
        futures.append(fut)
        if k == 0:
            past_hat = past
    elbo, rec, variety = loss_traj(X, Y, futures, past_hat, latent, tcfg.prior_var)
    sym, psd = loss_swarm(enc.a2, enc.n_agents)
    balance = loss_balance(enc.alpha, enc.entropy)
    terms = dict(elbo=elbo, rec=rec, variety=variety, sym=sym, psd=psd, balance=balance)
    total = None
    for name, t in terms.items():
        w = tcfg.weights.get(name, 1.0)
        total = t * w if total is None else total + t * w
    terms["total"] = total
    return terms


def _check_finite(report: dict, where: str):
    for name in (*LOSS_TERMS, "total"):
        v = float(ad.value(report[name]))
        if not math.isfinite(v):
            raise NumericalError(f"non-finite loss term {name!r} ({v}) {where}", term=name)


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[LossReport]
    val_history: list[float]
    best_epoch: int
    final_params: dict[str, np.ndarray]


def windows_for(sequences: Seq[Sequence], cfg: ModelConfig) -> list[tuple[int, int]]:
    out = []
    for i, s in enumerate(sequences):
        out.extend((i, t0) for t0 in training_origins(s.total_steps, cfg.H, cfg.T))
    return out


def _draw_eps(rng: Rng, n: int, cfg: ModelConfig, K: int) -> list[np.ndarray]:
    return [rng.normal((n, cfg.z)) for _ in range(K)]


def evaluate_loss(params, sequences: Seq[Sequence], cfg: ModelConfig, tcfg: TrainConfig, seed: int = 0) -> float:
    """Mean total loss over all stride-T windows, with fixed noise draws."""
    wins = windows_for(sequences, cfg)
    if not wins:
        return float("nan")
    base = Rng(seed)
    totals = []
    for j, (i, t0) in enumerate(wins):
        X, Y = window(sequences[i], t0, cfg.H, cfg.T)
        eps = _draw_eps(base.child(j), X.shape[1], cfg, tcfg.K)
        totals.append(float(window_losses(X, Y, params, cfg, tcfg, eps)["total"]))
    return float(np.mean(totals))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1: float, b2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def window_gradient(params, X, Y, cfg, tcfg, eps):
    tape = Tape()
    nodes = {k: tape.param(k, v) for k, v in params.items()}
    terms = window_losses(X, Y, nodes, cfg, tcfg, eps)
    report = {k: float(ad.value(v)) for k, v in terms.items()}
    return grad(tape, terms["total"]), report


def train(
    train_seqs: Seq[Sequence],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    val_seqs: Seq[Sequence] = (),
    init: dict[str, np.ndarray] | None = None,
    on_epoch: Callable[[int, LossReport, float, dict], None] | None = None,
) -> TrainResult:
    """Adam over minibatches of windows; keeps the parameters with the best validation loss."""
    tcfg.validate()
    if not train_seqs:
        raise InputError("training set is empty")
    wins = windows_for(train_seqs, cfg)
    if not wins:
        raise InputError("no training windows fit the sequences for the configured H and T")
    rng = Rng(tcfg.seed)
    params = {k: v.copy() for k, v in (init or init_params(cfg, rng.child(0))).items()}
    opt = Adam(params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    history, val_history = [], []
    best, best_val, best_epoch = None, math.inf, -1
    for epoch in range(tcfg.epochs):
        erng = rng.child(1, epoch)
        order = [wins[j] for j in erng.permutation(len(wins))]
        if tcfg.windows_per_sequence is not None:
            taken: dict[int, int] = {}
            picked = []
            for i, t0 in order:
                if taken.get(i, 0) < tcfg.windows_per_sequence:
                    taken[i] = taken.get(i, 0) + 1
                    picked.append((i, t0))
            order = picked
        sums = dict.fromkeys((*LOSS_TERMS, "total"), 0.0)
        for b0 in range(0, len(order), tcfg.batch_size):
            batch = order[b0:b0 + tcfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for j, (i, t0) in enumerate(batch):
                X, Y = window(train_seqs[i], t0, cfg.H, cfg.T)
                eps = _draw_eps(erng.child(b0 + j), X.shape[1], cfg, tcfg.K)
                g, report = window_gradient(params, X, Y, cfg, tcfg, eps)
                _check_finite(report, f"at epoch {epoch}, sequence {i}, t0={t0}")
                for k in acc:
                    acc[k] += g[k]
                for k in sums:
                    sums[k] += report[k]
            scale = 1.0 / len(batch)
            for k, v in acc.items():
                if not np.all(np.isfinite(v)):
                    raise NumericalError(f"non-finite gradient for {k!r} at epoch {epoch}", term="total")
                acc[k] = v * scale
            opt.step(params, acc)
        rep = LossReport(**{k: v / len(order) for k, v in sums.items()})
        history.append(rep)
        val = evaluate_loss(params, val_seqs, cfg, tcfg, seed=tcfg.seed + 7919) if val_seqs else rep.total
        val_history.append(val)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d total %.4f val %.4f", epoch, rep.total, val)
        if on_epoch is not None:
            on_epoch(epoch, rep, val, best if best is not None else params)
    if best is None:
        best, best_epoch = {k: v.copy() for k, v in params.items()}, tcfg.epochs - 1
    return TrainResult(best, history, val_history, best_epoch, params)


# -- model container --------------------------------------------------------

class TrajectoryModel:
    """Parameters plus the architecture they belong to."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int = 0) -> "TrajectoryModel":
        return cls(cfg, init_params(cfg, Rng(seed).child(0)))

    def encode(self, X):
        return encode(X, self.params, self.cfg.layers)

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model": asdict(self.cfg)}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "TrajectoryModel":
        tensors, meta = load_checkpoint(path)
        known = {f.name for f in fields(ModelConfig)}
        cfg = ModelConfig(**{k: v for k, v in meta.get("model", {}).items() if k in known})
        return cls(cfg, tensors)
