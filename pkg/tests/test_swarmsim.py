import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmgroups.errors import ConfigError, RangeError
from swarmgroups.swarmsim import (
    SWARM_PRESETS,
    GroupParams,
    Sequence,
    SimConfig,
    SwarmState,
    alignment_statistic,
    make_dataset,
    read_jsonl,
    simulate,
    step,
    swarm_config,
    training_origins,
    window,
    write_jsonl,
)


def solo_config(**kw):
    base = dict(groups=(GroupParams(0.0, 0.0, 0.0, 1.5),), n_agents_per_group=1, world_size=50.0)
    base.update(kw)
    return SimConfig(**base).validate()


def test_table_presets():
    a = SWARM_PRESETS["A"]
    assert [g.cohesion for g in a] == [0.005, 0.007]
    assert [g.separation for g in a] == [0.1, 0.2]
    assert [g.alignment for g in a] == [0.3, 0.1]
    assert [g.speed for g in a] == [1.0, 1.2]
    assert [g.speed for g in SWARM_PRESETS["C"]] == [1.0, 1.5]
    cfg = swarm_config("A")
    assert cfg.n_agents == 24 and cfg.total_steps == 200
    assert list(cfg.labels) == [0] * 12 + [1] * 12


def test_step_lone_agent_moves_straight():
    cfg = solo_config()
    s = SwarmState(np.array([[10.0, 10.0]]), np.array([[1.5, 0.0]]), np.array([0]))
    nxt = step(s, cfg)
    assert np.allclose(nxt.positions, [[11.5, 10.0]])
    assert np.allclose(nxt.velocities, [[1.5, 0.0]])


def test_step_reflects_at_wall():
    cfg = solo_config()
    s = SwarmState(np.array([[50.0 - 0.75, 20.0]]), np.array([[1.5, 0.0]]), np.array([0]))
    nxt = step(s, cfg)
    assert np.allclose(nxt.positions, [[50.0 - 0.75, 20.0]])
    assert np.allclose(nxt.velocities, [[-1.5, 0.0]])
    s = SwarmState(np.array([[20.0, 0.5]]), np.array([[0.0, -1.5]]), np.array([0]))
    nxt = step(s, cfg)
    assert np.allclose(nxt.positions, [[20.0, 1.0]]) and np.allclose(nxt.velocities, [[0.0, 1.5]])


def test_cohesion_pulls_pair_together():
    cfg = SimConfig(groups=(GroupParams(0.2, 0.0, 0.0, 1.0),), n_agents_per_group=2).validate()
    pos = np.array([[20.0, 20.0], [25.0, 20.0]])
    vel = np.array([[0.0, 1.0], [0.0, 1.0]])
    nxt = step(SwarmState(pos, vel, np.array([0, 0])), cfg)
    assert np.linalg.norm(nxt.positions[0] - nxt.positions[1]) < 5.0


def test_separation_crosses_groups_but_attraction_does_not():
    groups = (GroupParams(0.5, 0.0, 0.5, 1.0), GroupParams(0.5, 0.0, 0.5, 1.0))
    cfg = SimConfig(groups=groups, n_agents_per_group=2).validate()
    rng = np.random.default_rng(0)
    pos = rng.uniform(20, 28, size=(4, 2))
    vel = rng.normal(size=(4, 2))
    vel /= np.linalg.norm(vel, axis=1, keepdims=True)
    group = np.array([0, 0, 1, 1])
    full = step(SwarmState(pos, vel, group), cfg)
    # drop the other group: with zero separation, group 0 must be unaffected
    solo = SimConfig(groups=groups[:1], n_agents_per_group=2).validate()
    part = step(SwarmState(pos[:2], vel[:2], group[:2]), solo)
    assert np.array_equal(full.positions[:2], part.positions)

    sep_cfg = SimConfig(groups=(GroupParams(0, 1.0, 0, 1.0), GroupParams(0, 1.0, 0, 1.0)), n_agents_per_group=1)
    pos = np.array([[20.0, 20.0], [21.0, 20.0]])
    vel = np.array([[0.0, 1.0], [0.0, 1.0]])
    nxt = step(SwarmState(pos, vel, np.array([0, 1])), sep_cfg.validate())
    assert np.linalg.norm(nxt.positions[0] - nxt.positions[1]) > 1.0


def test_simulate_deterministic_and_shapes():
    cfg = swarm_config("A", seed=11, total_steps=40)
    a, b = simulate(cfg), simulate(cfg)
    assert a.positions.shape == (40, 24, 2)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)
    assert not np.array_equal(a.positions, simulate(swarm_config("A", seed=12, total_steps=40)).positions)


@settings(max_examples=15, deadline=None)
@given(
    st.integers(0, 10_000),
    st.floats(0.0, 0.05),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.3, 3.0),
    st.floats(5.0, 60.0),
)
def test_boundary_and_speed_invariants(seed, coh, sep, ali, speed, world):
    groups = (GroupParams(coh, sep, ali, speed), GroupParams(coh / 2, sep, ali / 2, speed * 1.3))
    cfg = SimConfig(groups=groups, n_agents_per_group=5, world_size=world, total_steps=60, seed=seed).validate()
    seq = simulate(cfg)
    assert np.all(seq.positions >= 0) and np.all(seq.positions <= world)
    speeds = np.linalg.norm(seq.velocities, axis=-1)
    expected = np.array([g.speed for g in groups])[seq.labels]
    assert np.max(np.abs(speeds - expected)) <= 1e-9


def test_alignment_increases_for_swarm_a():
    ups = 0
    for s in range(20):
        seq = simulate(swarm_config("A", seed=s))
        ups += alignment_statistic(seq.velocities[199], seq.labels) > alignment_statistic(seq.velocities[10], seq.labels)
    assert ups >= 18


def test_smoothed_alignment_trend_non_decreasing():
    ok = 0
    for s in range(20):
        seq = simulate(swarm_config("A", seed=100 + s))
        series = np.array([alignment_statistic(v, seq.labels) for v in seq.velocities])
        smooth = np.convolve(series, np.ones(20) / 20, mode="valid")
        ok += np.polyfit(np.arange(smooth.size), smooth, 1)[0] >= 0
    assert ok >= 18


def test_make_dataset_counts_and_seeds():
    cfg = swarm_config("A", total_steps=20)
    tr, va, te = make_dataset(cfg, 2, 1, 1, seed=5)
    seqs = tr + va + te
    assert len(seqs) == 4
    assert len({s.config.seed for s in seqs}) == 4
    assert [s.split for s in seqs] == ["train", "train", "val", "test"]
    again = make_dataset(cfg, 2, 1, 1, seed=5)
    for a, b in zip(seqs, sum(again, [])):
        assert np.array_equal(a.positions, b.positions)


def test_make_dataset_paper_scale_count():
    from swarmgroups.swarmsim import sequence_seeds

    assert len(set(sequence_seeds(0, 100 + 10 + 10))) == 120


def test_make_dataset_rejects_empty_split():
    with pytest.raises(ConfigError):
        make_dataset(swarm_config("A"), 0, 1, 1, seed=0)


def test_window_shapes_and_overlap():
    seq = simulate(swarm_config("A", seed=3))
    x, y = window(seq, 100, 8, 12)
    assert x.shape == (9, 24, 2) and y.shape == (12, 24, 2)
    assert np.array_equal(x[-1], seq.positions[100]) and np.array_equal(y[0], seq.positions[101])
    x0, y0 = window(seq, 50, 0, 1)
    assert x0.shape == (1, 24, 2) and np.array_equal(y0[0], seq.positions[51])
    xa, _ = window(seq, 60, 8, 12)
    xb, _ = window(seq, 61, 8, 12)
    assert np.array_equal(xa[1:], xb[:-1])
    with pytest.raises(RangeError):
        window(seq, 5, 8, 12)
    with pytest.raises(RangeError):
        window(seq, 190, 8, 12)


def test_training_origins():
    origins = training_origins(200, 8, 12)
    assert origins[0] == 8 and all(b - a == 12 for a, b in zip(origins, origins[1:]))
    assert origins[-1] + 12 <= 199


def test_jsonl_round_trip_bit_exact(tmp_path):
    cfg = swarm_config("B", total_steps=15)
    seqs = sum(make_dataset(cfg, 1, 1, 1, seed=2), [])
    path = tmp_path / "d.jsonl"
    write_jsonl(path, seqs)
    back = read_jsonl(path)
    assert len(path.read_text().splitlines()) == 3
    for a, b in zip(seqs, back):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.velocities, b.velocities)
        assert a.config == b.config and a.split == b.split


@pytest.mark.parametrize(
    "bad, field",
    [
        ({"swarm": "Z"}, "swarm"),
        ({"swarm": "A", "world_size": -1}, "world_size"),
        ({"swarm": "A", "separation_radius": 20.0}, "separation_radius"),
        ({"groups": [{"cohesion": 0.1}]}, "groups[0]"),
        ({"groups": [{"cohesion": -1, "separation": 0, "alignment": 0, "speed": 1}]}, "groups[0].cohesion"),
        ({"swarm": "A", "bogus": 1}, "bogus"),
    ],
)
def test_config_errors_name_field(bad, field):
    with pytest.raises(ConfigError) as exc:
        SimConfig.from_dict(bad)
    assert exc.value.field == field
