import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multitype_cp.errors import DomainError
from multitype_cp.experiments import (COEXISTENCE, EXTINCTION, OUTCOMES, TYPE1_WINS,
                                      TYPE2_WINS, ExperimentConfig, boundary_density,
                                      classify_outcome, initial_configuration, read_pgm,
                                      run_once, snapshot, sweep, to_pgm)
from multitype_cp.lattice import Configuration, TorusGeometry

SWAP = {TYPE1_WINS: TYPE2_WINS, TYPE2_WINS: TYPE1_WINS, COEXISTENCE: COEXISTENCE,
        EXTINCTION: EXTINCTION}


def fake(n1, n2, total=100, horizon=10.0):
    times = np.linspace(0.0, horizon, len(n1))
    return SimpleNamespace(times=times, n1=np.asarray(n1), n2=np.asarray(n2),
                           total_sites=total)


SMALL = ExperimentConfig(lam=4.0, sides=(12, 12), horizon=10.0, replicates=3, seed=5,
                         n_samples=21)


@pytest.mark.parametrize("n1,n2,expected", [
    ([40] * 11, [0] * 11, TYPE1_WINS),
    ([0] * 11, [40] * 11, TYPE2_WINS),
    ([20] * 11, [20] * 11, COEXISTENCE),
    ([0] * 11, [0] * 11, EXTINCTION),
    ([40] * 10 + [0], [30] * 11, TYPE2_WINS),    # gone at the final sample
    ([0] * 10 + [1], [30] * 11, TYPE2_WINS),      # present, tail density 0.005
    ([50] * 9 + [0, 1], [30] * 11, TYPE2_WINS),   # the tail holds only the last two samples
])
def test_classify_examples(n1, n2, expected):
    assert classify_outcome(fake(n1, n2)) == expected


def test_classify_threshold_is_inclusive():
    # tail = last two samples: mean density exactly theta
    assert classify_outcome(fake([0] * 9 + [1, 1], [50] * 11)) == COEXISTENCE


def test_classify_empty_tail():
    with pytest.raises(DomainError):
        classify_outcome(fake([], []))
    with pytest.raises(DomainError):
        classify_outcome(fake([5], [5]))


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=2, max_size=30),
       st.floats(0.0, 0.2), st.floats(0.05, 1.0))
def test_classify_relabel(pairs, theta, frac):
    n1, n2 = zip(*pairs)
    a = classify_outcome(fake(n1, n2), theta, frac)
    b = classify_outcome(fake(n2, n1), theta, frac)
    assert SWAP[a] == b


def test_boundary_density():
    geo = TorusGeometry((4, 4))
    assert boundary_density(Configuration.full(geo)) == 0.0
    half = np.where(np.arange(16) < 8, 1, 2).astype(np.uint8)
    # two rows of 1s against two rows of 2s: 2 horizontal cuts of 4 edges over 32 edges
    assert boundary_density(Configuration(geo, half)) == pytest.approx(8 / 32)
    checker = ((np.arange(16) // 4 + np.arange(16) % 4) % 2 + 1).astype(np.uint8)
    assert boundary_density(Configuration(geo, checker)) == 1.0


def test_config_round_trip_and_hash(tmp_path):
    cfg = ExperimentConfig(lam=3.0, matrix=(1, -1, 0.5, 0), sides=(20, 20), horizon=50,
                           replicates=4, seed=9, initial={"kind": "heaviside"})
    path = tmp_path / "cfg.json"
    cfg.save(path)
    back = ExperimentConfig.load(path)
    assert back == cfg and back.hash() == cfg.hash()
    assert json.loads(path.read_text())["schema_version"] == 1
    assert cfg.with_value("lam", 2.0).hash() != cfg.hash()
    assert cfg.with_value("a21", 7).matrix == (1.0, -1.0, 7.0, 0.0)


@pytest.mark.parametrize("bad", [
    {"schema_version": 2},
    {"colour": "red"},
    {"engine": "gpu"},
    {"matrix": [1, 2, 3]},
    {"horizon": 0},
    {"initial": {"kind": "random"}},
    {"tail_fraction": 0},
])
def test_config_rejects(bad):
    data = ExperimentConfig().to_dict()
    data.update(bad)
    with pytest.raises(DomainError):
        ExperimentConfig.from_dict(data)


def test_initial_conditions(tmp_path):
    rng = np.random.default_rng(0)
    cfg = ExperimentConfig(sides=(6, 4), initial={"kind": "heaviside"})
    grid = initial_configuration(cfg, rng).as_grid()
    assert np.all(grid[:3] == 1) and np.all(grid[3:] == 2)
    cfg = ExperimentConfig(sides=(6, 4), initial={"kind": "all1"})
    assert initial_configuration(cfg, rng).count(1) == 24
    states = np.arange(24) % 3
    np.save(tmp_path / "s.npy", states.astype(np.uint8))
    cfg = ExperimentConfig(sides=(6, 4), initial={"kind": "file", "path": str(tmp_path / "s.npy")})
    assert np.array_equal(initial_configuration(cfg, rng).states, states)


@pytest.mark.parametrize("engine", ["direct", "graphical"])
def test_run_once_deterministic(engine):
    cfg = ExperimentConfig(sides=(10, 10), horizon=5.0, engine=engine, matrix=(0.5, 0, 0, 0.5),
                           n_samples=11)
    a, b = run_once(cfg, 7), run_once(cfg, 7)
    assert np.array_equal(a.n1, b.n1) and a.final == b.final
    assert a.times.shape[0] == 11


def test_sweep_1x1_is_replicate_runs():
    res = sweep(SMALL, "a11", [0.0])
    assert res.counts.shape == (1, 1, 4)
    assert res.counts.sum() == SMALL.replicates
    assert res.header()[0] == "a11" and "" not in res.header()
    assert res.failures == ()
    assert res.config_hash == SMALL.hash()
    for r in range(SMALL.replicates):
        traj = run_once(SMALL, int(res.seeds[0, 0, r]))
        assert res.per_run[0, 0, r, 0] == traj.density1[-1]
    assert len(set(res.seeds.ravel().tolist())) == SMALL.replicates


def test_sweep_independent_of_order_and_workers():
    grid = [-0.5, 0.5]
    base = sweep(SMALL, "a12", grid, "a21", grid)
    n = base.seeds.size
    perm = np.random.default_rng(1).permutation(n)
    assert sweep(SMALL, "a12", grid, "a21", grid, order=perm) == base
    assert sweep(SMALL, "a12", grid, "a21", grid, workers=2) == base


def test_sweep_counts_sum_to_replicates(tmp_path):
    res = sweep(SMALL, "lam", [1.0, 4.0])
    assert np.all(res.counts.sum(axis=2) == SMALL.replicates)
    assert np.allclose(res.fraction(TYPE1_WINS) + res.fraction(TYPE2_WINS)
                       + res.fraction(COEXISTENCE) + res.fraction(EXTINCTION), 1.0)
    res.to_csv(tmp_path / "sweep.csv")
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "lam," + ",".join(OUTCOMES) + ",density1,density2,boundary"
    assert len(lines) == 3
    meta = res.metadata()
    assert meta["config_hash"] == SMALL.hash() and len(meta["seeds"]) == 2


def test_sweep_failures_recorded():
    cfg = ExperimentConfig(sides=(8, 8), horizon=2.0, replicates=2,
                           initial={"kind": "file", "path": "/nonexistent/states.npy"})
    res = sweep(cfg, "a11", [0.0, 1.0])
    assert len(res.failures) == 4
    assert res.counts.sum() == 0
    assert "FileNotFoundError" in res.failures[0][3]


def test_sweep_rejects_unknown_axis():
    with pytest.raises(DomainError):
        sweep(SMALL, "a33", [0.0])
    with pytest.raises(DomainError):
        sweep(SMALL, "a11", [])


def test_a12_a21_sweep_antisymmetric():
    """Swapping the off-diagonal axes and relabeling types preserves the law.

    The product start with p_type1 = 1/2 is symmetric, so the Type1Wins
    fraction at (u, v) estimates the Type2Wins fraction at (v, u).
    """
    cfg = ExperimentConfig(lam=4.0, sides=(16, 16), horizon=40.0, replicates=40, seed=3)
    grid = [-1.0, 1.5]
    res = sweep(cfg, "a12", grid, "a21", grid, workers=4)
    f1, f2 = res.fraction(TYPE1_WINS), res.fraction(TYPE2_WINS)
    for i in range(2):
        for j in range(2):
            p, q = f1[i, j], f2[j, i]
            pool = (p + q) / 2
            se = math.sqrt(max(pool * (1 - pool), 1 / 40) * 2 / 40)
            assert abs(p - q) < 4 * se
    # a12 > 0 > a21 favors type 1 decisively
    assert f1[1, 0] > 0.5 and f2[0, 1] > 0.5


def test_a11_sweep_trend():
    cfg = ExperimentConfig(lam=4.0, sides=(16, 16), horizon=40.0, replicates=20, seed=4)
    res = sweep(cfg, "a11", [-1.0, 0.0, 1.0, 2.0], workers=4)
    wins = res.counts[:, 0, OUTCOMES.index(TYPE1_WINS)]
    for a, b in zip(wins, wins[1:]):
        assert b >= a - 4
    assert wins[-1] > wins[0]


def test_pgm_all_white_and_levels():
    geo = TorusGeometry((4, 6))
    img = to_pgm(Configuration.empty(geo))
    assert img.startswith(b"P5\n6 4\n255\n")
    assert np.all(read_pgm(img) == 255)
    states = np.array([0, 1, 2] * 8, dtype=np.uint8)
    pix = read_pgm(to_pgm(Configuration(geo, states)))
    assert pix.shape == (4, 6)
    assert np.array_equal(pix.ravel(), np.array([255, 0, 128] * 8))


def test_pgm_requires_2d():
    with pytest.raises(DomainError):
        to_pgm(Configuration.empty(TorusGeometry((10,))))
    with pytest.raises(DomainError):
        snapshot(ExperimentConfig(sides=(10,)), [1.0])


def test_snapshot_deterministic():
    cfg = ExperimentConfig(sides=(20, 20), horizon=5.0, matrix=(1, 0, 0, 1))
    a, _ = snapshot(cfg, [0.0, 2.5, 5.0])
    b, traj = snapshot(cfg, [5.0, 2.5, 0.0])
    assert a == b and sorted(a) == [0.0, 2.5, 5.0]
    assert read_pgm(a[5.0]).shape == (20, 20)
    with pytest.raises(DomainError):
        snapshot(cfg, [6.0])
