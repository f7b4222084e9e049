"""Reynolds flocking simulator producing labeled multi-swarm trajectories.

Same-group agents within ``perception_radius`` contribute cohesion and
alignment; every agent (any group) within ``separation_radius`` contributes
separation. Speeds are renormalized to the group's speed each step, and the
square world reflects agents at its walls.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, RangeError
from .numcore import Rng


@dataclass(frozen=True)
class GroupParams:
    cohesion: float
    separation: float
    alignment: float
    speed: float

    def validate(self, where: str = "group"):
        for name in ("cohesion", "separation", "alignment"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{where}.{name}", f"must be a finite gain >= 0, got {v!r}")
        if not np.isfinite(self.speed) or self.speed <= 0:
            raise ConfigError(f"{where}.speed", f"must be > 0, got {self.speed!r}")


# Two-group presets; one entry per group.
SWARM_PRESETS: dict[str, tuple[GroupParams, ...]] = {
    "A": (GroupParams(0.005, 0.1, 0.3, 1.0), GroupParams(0.007, 0.2, 0.1, 1.2)),
    "B": (GroupParams(0.005, 0.1, 0.1, 1.0), GroupParams(0.010, 0.3, 0.3, 1.3)),
    "C": (GroupParams(0.005, 0.1, 0.1, 1.0), GroupParams(0.010, 0.4, 0.3, 1.5)),
}


@dataclass(frozen=True)
class SimConfig:
    groups: tuple[GroupParams, ...]
    n_agents_per_group: int = 12
    world_size: float = 50.0
    total_steps: int = 200
    perception_radius: float = 10.0
    separation_radius: float = 2.0
    seed: int = 0

    @property
    def n_agents(self) -> int:
        return self.n_agents_per_group * len(self.groups)

    @property
    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.groups)), self.n_agents_per_group)

    def validate(self) -> "SimConfig":
        if not self.groups:
            raise ConfigError("groups", "at least one group is required")
        for i, g in enumerate(self.groups):
            if not isinstance(g, GroupParams):
                raise ConfigError(f"groups[{i}]", "expected cohesion/separation/alignment/speed")
            g.validate(f"groups[{i}]")
        if int(self.n_agents_per_group) != self.n_agents_per_group or self.n_agents_per_group < 1:
            raise ConfigError("n_agents_per_group", f"must be a positive integer, got {self.n_agents_per_group!r}")
        if int(self.total_steps) != self.total_steps or self.total_steps < 1:
            raise ConfigError("total_steps", f"must be a positive integer, got {self.total_steps!r}")
        if not self.world_size > 0:
            raise ConfigError("world_size", f"must be > 0, got {self.world_size!r}")
        if not self.perception_radius > 0:
            raise ConfigError("perception_radius", f"must be > 0, got {self.perception_radius!r}")
        if not 0 <= self.separation_radius <= self.perception_radius:
            raise ConfigError("separation_radius", "must lie in [0, perception_radius]")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = [asdict(g) for g in self.groups]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        swarm = d.pop("swarm", None)
        if "groups" in d:
            groups = d.pop("groups")
            if not isinstance(groups, list):
                raise ConfigError("groups", "must be a list of objects")
            parsed = []
            for i, g in enumerate(groups):
                try:
                    parsed.append(GroupParams(**{k: float(g[k]) for k in ("cohesion", "separation", "alignment", "speed")}))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"groups[{i}]", f"malformed group entry ({exc})") from None
        elif swarm is not None:
            if swarm not in SWARM_PRESETS:
                raise ConfigError("swarm", f"unknown preset {swarm!r}; choose from {sorted(SWARM_PRESETS)}")
            parsed = list(SWARM_PRESETS[swarm])
        else:
            raise ConfigError("groups", "either 'groups' or 'swarm' must be given")
        known = {"n_agents_per_group", "world_size", "total_steps", "perception_radius", "separation_radius", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown simulation key")
        kwargs = {}
        for k, v in d.items():
            try:
                kwargs[k] = int(v) if k in ("n_agents_per_group", "total_steps", "seed") else float(v)
            except (TypeError, ValueError):
                raise ConfigError(k, f"not a number: {v!r}") from None
        return cls(groups=tuple(parsed), **kwargs).validate()


def swarm_config(name: str = "A", **overrides) -> SimConfig:
    return SimConfig(groups=SWARM_PRESETS[name], **overrides).validate()


@dataclass
class Sequence:
    positions: np.ndarray  # [steps, N, 2]
    velocities: np.ndarray  # [steps, N, 2]
    labels: np.ndarray  # ground truth, evaluation only
    config: SimConfig
    split: str | None = None

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def total_steps(self) -> int:
        return self.positions.shape[0]

    def to_json(self) -> str:
        payload = {
            "config": self.config.to_dict(),
            "labels": [int(x) for x in self.labels],
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
        }
        if self.split is not None:
            payload["split"] = self.split
        # json emits repr() floats, which round-trip exactly
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Sequence":
        d = json.loads(line)
        return cls(
            positions=np.array(d["positions"], dtype=np.float64),
            velocities=np.array(d["velocities"], dtype=np.float64),
            labels=np.array(d["labels"], dtype=np.int64),
            config=SimConfig.from_dict(d["config"]),
            split=d.get("split"),
        )


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    group: np.ndarray = field(default=None)


def _group_arrays(config: SimConfig, group: np.ndarray):
    gp = config.groups
    coh = np.array([gp[g].cohesion for g in group])
    sep = np.array([gp[g].separation for g in group])
    ali = np.array([gp[g].alignment for g in group])
    speed = np.array([gp[g].speed for g in group])
    return coh, sep, ali, speed


def step(state: SwarmState, config: SimConfig) -> SwarmState:
    """Advance every agent by one time step."""
    pos, vel, group = state.positions, state.velocities, state.group
    coh, sep, ali, speed = _group_arrays(config, group)
    n = pos.shape[0]

    diff = pos[:, None, :] - pos[None, :, :]  # diff[i, j] = pos_i - pos_j
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    not_self = ~np.eye(n, dtype=bool)
    same = (group[:, None] == group[None, :]) & not_self
    flock = same & (dist2 <= config.perception_radius**2)
    crowd = not_self & (dist2 <= config.separation_radius**2) & (dist2 > 0)

    count = flock.sum(axis=1)
    has = count > 0
    safe = np.maximum(count, 1)[:, None]
    centroid = (flock @ pos) / safe
    mean_vel = (flock @ vel) / safe
    cohesion = np.where(has[:, None], (centroid - pos) * coh[:, None], 0.0)
    alignment = np.where(has[:, None], (mean_vel - vel) * ali[:, None], 0.0)
    inv = np.where(crowd, 1.0 / np.where(crowd, dist2, 1.0), 0.0)
    separation = np.einsum("ij,ijk->ik", inv, diff) * sep[:, None]

    steer = vel + cohesion + alignment + separation
    norm = np.linalg.norm(steer, axis=1)
    # a zero steering vector keeps the old heading
    steer = np.where((norm > 0)[:, None], steer, vel)
    norm = np.linalg.norm(steer, axis=1)
    new_vel = steer / norm[:, None] * speed[:, None]
    new_pos = pos + new_vel
    new_pos, new_vel = reflect(new_pos, new_vel, config.world_size)
    return SwarmState(new_pos, new_vel, group)


def reflect(pos: np.ndarray, vel: np.ndarray, size: float):
    """Mirror positions that left [0, size] and negate that velocity component."""
    pos, vel = pos.copy(), vel.copy()
    low, high = pos < 0, pos > size
    pos = np.where(low, -pos, pos)
    pos = np.where(high, 2 * size - pos, pos)
    vel = np.where(low | high, -vel, vel)
    # one step can never exceed the world, but clip against pathological speeds
    return np.clip(pos, 0.0, size), vel


def initial_state(config: SimConfig, rng: Rng) -> SwarmState:
    group = config.labels
    n = group.size
    pos = rng.uniform(0.0, config.world_size, size=(n, 2))
    heading = rng.uniform(0.0, 2 * np.pi, size=n)
    speed = _group_arrays(config, group)[3]
    vel = np.stack([np.cos(heading), np.sin(heading)], axis=1) * speed[:, None]
    return SwarmState(pos, vel, group)


def simulate(config: SimConfig) -> Sequence:
    config.validate()
    state = initial_state(config, Rng(config.seed))
    pos = np.empty((config.total_steps, config.n_agents, 2))
    vel = np.empty_like(pos)
    for t in range(config.total_steps):
        if t:
            state = step(state, config)
        pos[t], vel[t] = state.positions, state.velocities
    return Sequence(pos, vel, config.labels, config)


def sequence_seeds(master_seed: int, count: int) -> list[int]:
    """Distinct per-sequence seeds derived from one master seed."""
    ss = np.random.SeedSequence(int(master_seed))
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0] >> 1) for c in ss.spawn(count)]
    if len(set(seeds)) != count:  # pragma: no cover - 2^-63 collision odds
        raise RuntimeError("seed collision")
    return seeds


def make_dataset(config: SimConfig, n_train: int, n_val: int, n_test: int, seed: int):
    """Simulate train/val/test splits, one independently seeded sequence each."""
    for name, n in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if n < 1:
            raise ConfigError(name, f"must be >= 1, got {n}")
    seeds = sequence_seeds(seed, n_train + n_val + n_test)
    seqs = [simulate(_with_seed(config, s)) for s in seeds]
    for i, s in enumerate(seqs):
        s.split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return seqs[:n_train], seqs[n_train:n_train + n_val], seqs[n_train + n_val:]


def _with_seed(config: SimConfig, seed: int) -> SimConfig:
    d = config.to_dict()
    d["seed"] = seed
    return SimConfig.from_dict(d)


def window(seq: Sequence, t0: int, H: int, T: int):
    """Observed frames t0-H..t0 and future frames t0+1..t0+T."""
    if H < 0 or T < 0 or t0 - H < 0 or t0 + T >= seq.total_steps:
        raise RangeError(f"window t0={t0}, H={H}, T={T} outside 0..{seq.total_steps - 1}")
    return seq.positions[t0 - H:t0 + 1].copy(), seq.positions[t0 + 1:t0 + T + 1].copy()


def training_origins(total_steps: int, H: int, T: int, stride: int | None = None) -> list[int]:
    """Window origins for sliding windows with stride T (by default)."""
    stride = stride or T or 1
    return list(range(H, total_steps - T, stride))


def alignment_statistic(velocities: np.ndarray, labels: np.ndarray) -> float:
    """Mean pairwise cosine similarity of velocities within each group."""
    unit = velocities / np.linalg.norm(velocities, axis=-1, keepdims=True)
    sims = []
    for g in np.unique(labels):
        u = unit[labels == g]
        m = len(u)
        if m < 2:
            continue
        c = u @ u.T
        sims.append((c.sum() - m) / (m * (m - 1)))
    return float(np.mean(sims))


def write_jsonl(path: str | Path, sequences: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        for s in sequences:
            fh.write(s.to_json() + "\n")


def read_jsonl(path: str | Path) -> list[Sequence]:
    with open(path) as fh:
        return [Sequence.from_json(line) for line in fh if line.strip()]
