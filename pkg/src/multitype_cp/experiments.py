"""Experiment configs, outcome classification, sweeps and snapshots.

An :class:`ExperimentConfig` is stored as a JSON document::

    {
      "schema_version": 1,
      "lam": 4.0, "g": "exp",
      "matrix": [a11, a12, a21, a22],
      "sides": [100, 100],
      "initial": {"kind": "product", "p_occupied": 0.5, "p_type1": 0.5},
      "horizon": 300.0, "replicates": 20, "seed": 1,
      "engine": "direct", "n_samples": 101,
      "theta": 0.01, "tail_fraction": 0.1
    }

``initial.kind`` is one of ``product``, ``heaviside`` (1s on the first half
of the first axis, 2s elsewhere), ``all1`` or ``file`` (with ``path`` naming
a ``.npy`` array of site states).  The config hash is the SHA-256 of the
canonical JSON (sorted keys, no whitespace) and is written next to every
output.

Replicate ``r`` of sweep cell ``c`` runs with seed
``derived_seed(seed, REPLICATE, c, r)``; its initial configuration draws
from ``rng_for(run_seed, INITIAL)``.  A run therefore depends only on the
config and its (cell, replicate) index.
"""

import csv
import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import direct, graphical
from .errors import DomainError
from .lattice import Configuration, TorusGeometry
from .payoff import FitnessSpec, PayoffMatrix
from .seeding import INITIAL, REPLICATE, derived_seed, rng_for

SCHEMA_VERSION = 1
WORKERS_ENV = "MTCP_WORKERS"

TYPE1_WINS = "Type1Wins"
TYPE2_WINS = "Type2Wins"
COEXISTENCE = "Coexistence"
EXTINCTION = "Extinction"
OUTCOMES = (TYPE1_WINS, TYPE2_WINS, COEXISTENCE, EXTINCTION)

AXES = ("a11", "a12", "a21", "a22", "lam")
ENGINES = ("direct", "graphical")


@dataclass(frozen=True)
class ExperimentConfig:
    lam: float = 4.0
    matrix: tuple = (0.0, 0.0, 0.0, 0.0)
    sides: tuple = (100, 100)
    initial: dict = field(default_factory=lambda: {"kind": "product", "p_occupied": 0.5,
                                                   "p_type1": 0.5})
    horizon: float = 100.0
    replicates: int = 1
    seed: int = 0
    engine: str = "direct"
    g: str = "exp"
    n_samples: int = 101
    theta: float = 0.01
    tail_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "matrix", tuple(float(a) for a in self.matrix))
        object.__setattr__(self, "sides", tuple(int(s) for s in self.sides))
        object.__setattr__(self, "initial", dict(self.initial))
        if len(self.matrix) != 4:
            raise DomainError("matrix needs four entries a11, a12, a21, a22")
        if self.engine not in ENGINES:
            raise DomainError(f"unknown engine {self.engine!r}")
        if self.horizon <= 0 or self.replicates < 1 or self.n_samples < 2:
            raise DomainError("horizon, replicates and n_samples must be positive")
        if not 0 < self.tail_fraction <= 1 or self.theta < 0:
            raise DomainError("need 0 < tail_fraction <= 1 and theta >= 0")
        if self.initial.get("kind") not in ("product", "heaviside", "all1", "file"):
            raise DomainError(f"unknown initial condition {self.initial.get('kind')!r}")
        self.payoff_matrix()
        self.fitness_spec()

    def payoff_matrix(self):
        return PayoffMatrix(*self.matrix)

    def fitness_spec(self):
        return FitnessSpec(self.lam, self.g)

    def geometry(self):
        return TorusGeometry(self.sides)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["matrix"] = list(self.matrix)
        out["sides"] = list(self.sides)
        out["schema_version"] = SCHEMA_VERSION
        return out

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise DomainError(f"config schema version {version} is not supported")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_value(self, axis, value):
        if axis == "lam":
            return dataclasses.replace(self, lam=float(value))
        m = list(self.matrix)
        m[AXES.index(axis)] = float(value)
        return dataclasses.replace(self, matrix=tuple(m))


def initial_configuration(config, rng):
    geo = config.geometry()
    init = config.initial
    kind = init["kind"]
    if kind == "product":
        return Configuration.product(geo, rng, init.get("p_occupied", 0.5),
                                     init.get("p_type1", 0.5))
    if kind == "all1":
        return Configuration.full(geo)
    if kind == "heaviside":
        grid = np.full(geo.sides, 2, dtype=np.uint8)
        grid[: geo.sides[0] // 2] = 1
        return Configuration(geo, grid.ravel())
    states = np.load(init["path"])
    return Configuration(geo, states)


def run_once(config, seed):
    """One trajectory of ``config`` with run seed ``seed``."""
    config0 = initial_configuration(config, rng_for(seed, INITIAL))
    A, spec = config.payoff_matrix(), config.fitness_spec()
    samples = np.linspace(0.0, config.horizon, config.n_samples)
    if config.engine == "direct":
        return direct.simulate(config0, A, spec, config.horizon, seed=seed, sample_times=samples)
    stream = graphical.build_events(config0.geometry, graphical.max_rate(spec, A),
                                    config.horizon, seed)
    return graphical.evolve(config0, stream, A, spec, sample_times=samples)


def classify_outcome(trajectory, theta=0.01, tail_fraction=0.1):
    """Type1Wins, Type2Wins, Coexistence or Extinction from the tail of a run.

    A type survives when its mean density over the last ``tail_fraction`` of
    the sampled horizon is at least ``theta`` and it is present at the final
    sample.
    """
    times = np.asarray(trajectory.times, float)
    if times.size == 0:
        raise DomainError("trajectory has no samples")
    t0, t1 = times[0], times[-1]
    tail = times >= t1 - tail_fraction * (t1 - t0)
    if t1 == t0 or np.count_nonzero(tail) == 0:
        raise DomainError("the tail window contains no samples")
    d1 = np.asarray(trajectory.n1)[tail] / trajectory.total_sites
    d2 = np.asarray(trajectory.n2)[tail] / trajectory.total_sites
    s1 = d1.mean() >= theta and trajectory.n1[-1] > 0
    s2 = d2.mean() >= theta and trajectory.n2[-1] > 0
    if s1 and s2:
        return COEXISTENCE
    if s1:
        return TYPE1_WINS
    if s2:
        return TYPE2_WINS
    return EXTINCTION


def boundary_density(config):
    """Fraction of nearest-neighbor edges joining a 1 and a 2."""
    edges = config.geometry.edges()
    a = config.states[edges[:, 0]]
    b = config.states[edges[:, 1]]
    return float(np.count_nonzero((a * b) == 2)) / edges.shape[0]


@dataclass(frozen=True)
class RunSummary:
    outcome: str
    density1: float
    density2: float
    boundary: float
    seed: int
    error: str = ""


def _task(args):
    config, cell, rep = args
    seed = derived_seed(config.seed, REPLICATE, cell, rep)
    try:
        traj = run_once(config, seed)
        return cell, rep, RunSummary(classify_outcome(traj, config.theta, config.tail_fraction),
                                     float(traj.density1[-1]), float(traj.density2[-1]),
                                     boundary_density(traj.final), seed)
    except Exception as exc:     # recorded per cell, never fatal
        return cell, rep, RunSummary("", np.nan, np.nan, np.nan, seed,
                                     f"{type(exc).__name__}: {exc}")


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class SweepResult:
    axis1: str
    grid1: np.ndarray
    axis2: str
    grid2: np.ndarray
    replicates: int
    counts: np.ndarray          # (n1, n2, 4) in OUTCOMES order
    density1: np.ndarray        # (n1, n2) mean final densities
    density2: np.ndarray
    boundary: np.ndarray
    seeds: np.ndarray           # (n1, n2, replicates)
    per_run: np.ndarray         # (n1, n2, replicates, 3): density1, density2, boundary
    failures: tuple             # ((i, j, rep, message), ...)
    config_hash: str

    def fraction(self, outcome):
        k = OUTCOMES.index(outcome)
        done = self.counts.sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.counts[..., k] / done

    def __eq__(self, other):
        if not isinstance(other, SweepResult):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def rows(self):
        for i, v1 in enumerate(self.grid1):
            for j, v2 in enumerate(self.grid2):
                key = [float(v1), float(v2)] if self.axis2 else [float(v1)]
                yield (key + [int(c) for c in self.counts[i, j]]
                       + [float(self.density1[i, j]), float(self.density2[i, j]),
                          float(self.boundary[i, j])])

    def header(self):
        axes = [self.axis1, self.axis2] if self.axis2 else [self.axis1]
        return [*axes, *OUTCOMES, "density1", "density2", "boundary"]

    def to_bytes(self):
        lines = [",".join(self.header())]
        lines += [",".join(repr(v) for v in row) for row in self.rows()]
        lines.append(",".join(str(int(s)) for s in self.seeds.ravel()))
        lines.append(",".join(repr(float(v)) for v in self.per_run.ravel()))
        lines += [repr(f) for f in self.failures]
        return "\n".join(lines).encode()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())

    def metadata(self):
        return {"config_hash": self.config_hash, "axis1": self.axis1, "axis2": self.axis2,
                "grid1": [float(v) for v in self.grid1], "grid2": [float(v) for v in self.grid2],
                "replicates": self.replicates, "seeds": self.seeds.tolist(),
                "failures": [list(f) for f in self.failures]}


def sweep(config, axis1, grid1, axis2=None, grid2=(None,), workers=None, order=None):
    """Run ``config.replicates`` replicates at every cell of ``grid1 x grid2``.

    ``order`` optionally permutes the task list; results do not depend on it
    nor on ``workers`` (default from ``$MTCP_WORKERS``).
    """
    for axis in (axis1, axis2):
        if axis is not None and axis not in AXES:
            raise DomainError(f"unknown sweep axis {axis!r}")
    if axis2 is None:
        grid2 = (None,)
    grid1 = np.asarray(grid1, float)
    n1, n2, R = len(grid1), len(grid2), config.replicates
    if n1 == 0:
        raise DomainError("empty sweep grid")
    tasks = []
    for i, v1 in enumerate(grid1):
        for j, v2 in enumerate(grid2):
            cfg = config.with_value(axis1, v1)
            if axis2 is not None:
                cfg = cfg.with_value(axis2, v2)
            cell = i * n2 + j
            tasks += [(cfg, cell, r) for r in range(R)]
    if order is not None:
        tasks = [tasks[k] for k in order]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=1))
    else:
        results = [_task(t) for t in tasks]

    counts = np.zeros((n1, n2, len(OUTCOMES)), dtype=np.int64)
    dens = np.full((n1, n2, R, 3), np.nan)
    seeds = np.zeros((n1, n2, R), dtype=np.uint64)
    failures = []
    for cell, rep, res in results:
        i, j = divmod(cell, n2)
        seeds[i, j, rep] = res.seed
        if res.error:
            failures.append((i, j, rep, res.error))
            continue
        counts[i, j, OUTCOMES.index(res.outcome)] += 1
        dens[i, j, rep] = (res.density1, res.density2, res.boundary)
    with np.errstate(invalid="ignore"):
        means = np.nanmean(dens, axis=2) if np.isfinite(dens).any() else np.full((n1, n2, 3), np.nan)
    g2 = np.asarray([np.nan if v is None else v for v in grid2], float)
    return SweepResult(axis1, grid1, axis2 or "", g2, R, counts, means[..., 0], means[..., 1],
                       means[..., 2], seeds, dens, tuple(sorted(failures)), config.hash())


# PGM gray levels: empty white, type 1 black, type 2 gray
_GRAY = np.array([255, 0, 128], dtype=np.uint8)


def to_pgm(config):
    """Binary P5 image of a two-dimensional configuration."""
    if config.geometry.d != 2:
        raise DomainError("snapshots need a two-dimensional torus")
    rows, cols = config.geometry.sides
    pixels = _GRAY[config.as_grid()]
    return b"P5\n%d %d\n255\n" % (cols, rows) + pixels.tobytes()


def read_pgm(data):
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DomainError("not a binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)
    return pixels


def snapshot(config, times, replicate=0):
    """PGM bytes of one run of ``config`` at each of ``times``.

    Returns ``(images, trajectory)`` with ``images`` keyed by time.
    """
    if len(config.sides) != 2:
        raise DomainError("snapshots need a two-dimensional torus")
    times = sorted(float(t) for t in times)
    if not times or times[0] < 0 or times[-1] > config.horizon:
        raise DomainError("snapshot times must lie in [0, horizon]")
    seed = derived_seed(config.seed, REPLICATE, 0, replicate)
    config0 = initial_configuration(config, rng_for(seed, INITIAL))
    A, spec = config.payoff_matrix(), config.fitness_spec()
    samples = np.linspace(0.0, config.horizon, config.n_samples)
    if config.engine == "direct":
        traj = direct.simulate(config0, A, spec, config.horizon, seed=seed,
                               sample_times=samples, snapshot_times=times)
    else:
        stream = graphical.build_events(config0.geometry, graphical.max_rate(spec, A),
                                        config.horizon, seed)
        traj = graphical.evolve(config0, stream, A, spec, sample_times=samples,
                                snapshot_times=times)
    return {t: to_pgm(traj.snapshots[t]) for t in times}, traj
