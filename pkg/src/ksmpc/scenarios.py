"""Experiment definitions and the closed-loop simulation driver."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .avoidance import facet_normals
from .kinematics import ALL_MODES, HOVER, PLANAR_MODES, ROTATION_FORMS, ModeSet, Pose, step
from .koopman import ObstacleTracker
from .smpc import Agent, ControllerParams, sequential_round

log = logging.getLogger(__name__)

OBSTACLE_KINDS = ("two-ring", "circular", "figure-eight", "butterfly3d", "static")
FACET_KINDS = ("planar", "sphere", "axis")
MODE_SETS = {"planar": PLANAR_MODES, "all": ALL_MODES}
SOURCES = ("camera", "uav")
FUSIONS = ("independent", "average")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str = "custom"
    n_uavs: int = 4
    n_obstacles: int = 8
    T: float = 0.01
    horizon: int = 4
    duration: float = 35.0
    r_rob: float = 0.1125
    r_obs: float = 0.1125
    v_bar: float = 0.2
    w_bar: float = 0.6
    r_cl: float = 0.9
    r_sense: Optional[float] = None  # None -> 2 r_cl
    r_init: float = 3.5
    r_ref: float = 0.5
    delta_obs: float = 0.015
    delta_agent: float = 0.015
    gamma: int = 26
    facets: str = "planar"
    modes: str = "planar"
    rotation: str = "standard"
    obstacle_kind: str = "two-ring"
    obstacle_ring_radii: tuple = (2.5, 1.5)
    obstacle_r_cov: float = 0.3
    obstacle_alpha_rate: float = 0.15
    obstacle_alpha0: float = 0.0
    obstacle_path_radius: float = 1.0
    obstacle_omega: float = 0.3
    obstacle_center: tuple = (0.0, 0.0, 0.0)
    obstacle_lemniscate_a: float = 1.5
    obstacle_butterfly_scale: float = 1.5
    obstacle_butterfly_z: float = 0.3
    noise_sigma0: float = 0.01
    noise_kappa: float = 0.05
    noise_source: str = "uav"
    koopman_dims: int = 2
    koopman_buffer: int = 200
    koopman_ridge: Optional[float] = None
    koopman_fuse: str = "independent"
    seed: int = 0
    prediction_only: bool = False

    def __post_init__(self):
        for name in ("obstacle_ring_radii", "obstacle_center"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.T))

    @property
    def sensing_radius(self) -> float:
        return 2.0 * self.r_cl if self.r_sense is None else self.r_sense

    def validate(self) -> "ScenarioConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("T", "r_rob", "r_obs", "v_bar", "w_bar", "r_cl", "obstacle_r_cov", "obstacle_path_radius", "obstacle_lemniscate_a",
                     "obstacle_butterfly_scale"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and math.isfinite(v) and v > 0, f"{name} must be positive, got {v!r}")
        for name in ("r_init", "r_ref"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and math.isfinite(v) and v >= 0, f"{name} must be >= 0, got {v!r}")
        need(self.duration >= 0, "duration must be >= 0")
        need(abs(self.steps * self.T - self.duration) <= 1e-9 * max(1.0, self.duration),
             "duration must be a whole number of sampling periods")
        need(self.n_uavs >= 1, "n_uavs must be >= 1")
        need(self.n_obstacles >= 0, "n_obstacles must be >= 0")
        need(self.horizon >= 1, "horizon must be >= 1")
        need(self.r_sense is None or self.r_sense > 0, "r_sense must be positive")
        need(self.obstacle_alpha_rate >= 0 and self.obstacle_omega >= 0, "rates must be >= 0")
        need(all(r > 0 for r in self.obstacle_ring_radii) and self.obstacle_ring_radii, "ring radii must be positive")
        need(len(self.obstacle_center) == 3, "obstacle_center needs three coordinates")
        need(self.delta_obs >= 0 and self.delta_agent >= 0, "safety margins must be >= 0")
        need(self.gamma >= 6, "gamma must be >= 6")
        need(self.facets in FACET_KINDS, f"facets must be one of {FACET_KINDS}")
        need(self.facets != "axis" or self.gamma == 6, "axis facets require gamma = 6")
        need(self.modes in MODE_SETS, f"modes must be one of {tuple(MODE_SETS)}")
        need(self.rotation in ROTATION_FORMS, f"rotation must be one of {ROTATION_FORMS}")
        need(self.obstacle_kind in OBSTACLE_KINDS, f"obstacle_kind must be one of {OBSTACLE_KINDS}")
        need(self.noise_sigma0 >= 0 and self.noise_kappa >= 0, "noise parameters must be >= 0")
        need(self.noise_source in SOURCES, f"noise_source must be one of {SOURCES}")
        need(self.koopman_dims in (2, 3), "koopman_dims must be 2 or 3")
        need(self.koopman_buffer >= self.koopman_dims * 6 + 3, "koopman_buffer too small to ever fit")
        need(self.koopman_ridge is None or self.koopman_ridge >= 0, "koopman_ridge must be >= 0")
        need(self.koopman_fuse in FUSIONS, f"koopman_fuse must be one of {FUSIONS}")
        need(0 <= self.seed < 2**64, "seed must fit in an unsigned 64-bit integer")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


# -- obstacle generators -------------------------------------------------------

def _butterfly(theta: float, scale: float, zamp: float):
    rho = math.exp(math.cos(theta)) - 2.0 * math.cos(4.0 * theta) - math.sin(theta / 12.0) ** 5
    s = scale / (math.e + 3.0)
    return s * rho * math.sin(theta), s * rho * math.cos(theta), zamp * math.sin(2.0 * theta)


def obstacle_position(kind: str, params: ScenarioConfig, t: float, index: int = 0) -> np.ndarray:
    """True position of obstacle ``index`` (0-based) at time ``t``."""
    if t < 0:
        raise ValueError("time must be >= 0")
    c = np.asarray(params.obstacle_center, dtype=float)
    n = max(params.n_obstacles, 1)
    if kind == "two-ring":
        rings = params.obstacle_ring_radii
        per_ring = math.ceil(n / len(rings))
        q, l = divmod(index, per_ring)
        if q >= len(rings):
            raise ConfigError(f"obstacle {index} does not fit on {len(rings)} rings")
        ang = 2.0 * math.pi * len(rings) * l / n
        alpha = params.obstacle_alpha0 + params.obstacle_alpha_rate * t
        r = rings[q]
        cov = params.obstacle_r_cov
        return c + np.array([r * math.cos(ang) + cov * math.cos(alpha),
                             r * math.sin(ang) + cov * math.sin(alpha), 0.0])
    phase = 2.0 * math.pi * index / n
    w = params.obstacle_omega * t + phase
    if kind == "circular":
        r = params.obstacle_path_radius
        return c + np.array([r * math.cos(w), r * math.sin(w), 0.0])
    if kind == "figure-eight":
        a = params.obstacle_lemniscate_a
        return c + np.array([a * math.sin(w), a * math.sin(w) * math.cos(w), 0.0])
    if kind == "butterfly3d":
        return c + np.array(_butterfly(w, params.obstacle_butterfly_scale, params.obstacle_butterfly_z))
    if kind == "static":
        return c.copy()
    raise ConfigError(f"unknown obstacle kind {kind!r}")


def obstacle_positions(params: ScenarioConfig, t: float) -> np.ndarray:
    if not params.n_obstacles:
        return np.zeros((0, 3))
    return np.array([obstacle_position(params.obstacle_kind, params, t, l) for l in range(params.n_obstacles)])


def initial_pose(i: int, n_r: int, r_init: float) -> Pose:
    """Start pose of UAV ``i`` (1-based) on a circle of radius ``r_init``."""
    if not 1 <= i <= n_r:
        raise IndexError(f"UAV index {i} outside 1..{n_r}")
    a = 2.0 * math.pi * (i - 1) / n_r
    return Pose(r_init * math.cos(a), r_init * math.sin(a), 0.0)


def reference_pose(i: int, n_r: int, r_ref: float) -> np.ndarray:
    """Target position of UAV ``i``, antipodal to its start direction."""
    if not 1 <= i <= n_r:
        raise IndexError(f"UAV index {i} outside 1..{n_r}")
    a = 2.0 * math.pi * (i - 1) / n_r
    return np.array([-r_ref * math.cos(a), -r_ref * math.sin(a), 0.0])


# -- measurements and metrics --------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Per-axis Gaussian noise with std ``sigma0 (1 + kappa * range)``."""

    sigma0: float = 0.01
    kappa: float = 0.05

    def __post_init__(self):
        if self.sigma0 < 0 or self.kappa < 0:
            raise ValueError("noise parameters must be >= 0")

    def std(self, rng_m: float) -> float:
        return self.sigma0 * (1.0 + self.kappa * rng_m)


def measure(true_pos, observer_pos, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Noisy reading of ``true_pos``; ``observer_pos=None`` means zero range."""
    true_pos = np.asarray(true_pos, dtype=float)
    dist = 0.0 if observer_pos is None else float(np.linalg.norm(true_pos - np.asarray(observer_pos, float)))
    std = noise.std(dist)
    draw = rng.standard_normal(true_pos.shape)
    if std == 0.0:
        return true_pos.copy()
    return true_pos + std * draw


@dataclass(frozen=True)
class PredictionMetrics:
    rmse: float
    mae: float
    max_err: float
    count: int = 0

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "max_err": self.max_err, "count": self.count}


def prediction_metrics(predicted, truth) -> PredictionMetrics:
    """RMSE, MAE and max of the pointwise Euclidean errors.

    Inputs are aligned ``(..., d)`` arrays of positions (or 1-D arrays of
    scalar errors against zeros).
    """
    p = np.asarray(predicted, dtype=float)
    q = np.asarray(truth, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    if p.size == 0:
        return PredictionMetrics(0.0, 0.0, 0.0, 0)
    err = np.abs(p - q) if p.ndim == 1 else np.linalg.norm(p - q, axis=-1).ravel()
    return errors_metrics(err)


def errors_metrics(err) -> PredictionMetrics:
    err = np.asarray(err, dtype=float).ravel()
    if err.size == 0:
        return PredictionMetrics(0.0, 0.0, 0.0, 0)
    mx = float(np.max(err))
    mae = min(float(np.mean(err)), mx)
    if mx == 0.0:
        return PredictionMetrics(0.0, 0.0, 0.0, int(err.size))
    # scaling by the max avoids under/overflow in the squares; the clamp only
    # absorbs last-ulp rounding, since MAE <= RMSE <= MaxErr holds exactly
    rmse = mx * float(np.sqrt(np.mean((err / mx) ** 2)))
    return PredictionMetrics(min(max(rmse, mae), mx), mae, mx, int(err.size))


# -- simulation ---------------------------------------------------------------

@dataclass
class TraceRecord:
    k: int
    time: float
    poses: list
    modes: list
    feasible: list
    obstacles: np.ndarray  # (N_obs, 3) true
    measured: dict  # source -> (N_obs, 3), nan where not observed
    nodes: list = field(default_factory=list)


@dataclass
class PredictionRecord:
    k: int
    source: str
    obstacle: int
    positions: np.ndarray  # (N, 3) for steps k+1..k+N
    from_model: bool
    reliable: bool


@dataclass
class SimulationTrace:
    config: ScenarioConfig
    records: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    references: list = field(default_factory=list)
    noise_std: list = field(default_factory=list)  # per-axis std of every measurement taken

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    def uav_positions(self) -> np.ndarray:
        """``(K+1, N_r, 3)`` positions."""
        return np.array([[p.position for p in r.poses] for r in self.records])

    def obstacle_truth(self) -> np.ndarray:
        """``(K+1, N_obs, 3)`` true obstacle positions."""
        n = self.config.n_obstacles
        return np.array([r.obstacles if n else np.zeros((0, 3)) for r in self.records])


def controller_params(cfg: ScenarioConfig) -> ControllerParams:
    normals = facet_normals(cfg.gamma, axis_aligned=cfg.facets == "axis", planar=cfg.facets == "planar")
    return ControllerParams(
        horizon=cfg.horizon, T=cfg.T, modes=ModeSet(cfg.v_bar, cfg.w_bar),
        alphabet=MODE_SETS[cfg.modes], normals=normals, r_cl=cfg.r_cl,
        r_sense=cfg.sensing_radius, obstacle_radius=cfg.r_obs,
        delta_obstacle=cfg.delta_obs, delta_agent=cfg.delta_agent, rotation=cfg.rotation,
    )


def _source_names(cfg: ScenarioConfig) -> list:
    if cfg.noise_source == "camera":
        return ["cam"]
    if cfg.koopman_fuse == "average":
        return ["avg"]
    return [f"u{i + 1}" for i in range(cfg.n_uavs)]


def run_simulation(config: ScenarioConfig) -> SimulationTrace:
    """Advance obstacles, measure, refit predictors, run one sequential round, record.

    Record ``k`` holds the state at ``t_k = k T`` together with the mode chosen
    at that state; the final record's mode is decided but not applied.
    """
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed)
    noise = NoiseModel(cfg.noise_sigma0, cfg.noise_kappa)
    params = controller_params(cfg)
    agents = [Agent(i + 1, initial_pose(i + 1, cfg.n_uavs, cfg.r_init),
                    reference_pose(i + 1, cfg.n_uavs, cfg.r_ref), cfg.r_rob)
              for i in range(cfg.n_uavs)]
    sources = _source_names(cfg)
    trackers = {(s, l): ObstacleTracker(l, cfg.T, cfg.koopman_dims, cfg.koopman_buffer, cfg.koopman_ridge)
                for s in sources for l in range(cfg.n_obstacles)}
    trace = SimulationTrace(cfg, references=[a.reference for a in agents])
    K = cfg.steps

    for k in range(K + 1):
        t = k * cfg.T
        truth = obstacle_positions(cfg, t)
        measured = {s: np.full((cfg.n_obstacles, 3), np.nan) for s in sources}
        for l in range(cfg.n_obstacles):
            if cfg.noise_source == "camera":
                measured["cam"][l] = measure(truth[l], None, noise, rng)
                trace.noise_std.append(noise.std(0.0))
                continue
            seen = []
            for a in agents:
                pos = a.pose.position
                dist = float(np.linalg.norm(truth[l] - pos))
                if dist <= cfg.sensing_radius:
                    seen.append(measure(truth[l], pos, noise, rng))
                    trace.noise_std.append(noise.std(dist))
                    if cfg.koopman_fuse == "independent":
                        measured[f"u{a.id}"][l] = seen[-1]
            if seen and cfg.koopman_fuse == "average":
                measured["avg"][l] = np.mean(seen, axis=0)

        forecasts = {s: [] for s in sources}
        for (s, l), tracker in trackers.items():
            m = measured[s][l]
            if np.all(np.isfinite(m)):
                tracker.observe(t, m)
            elif len(tracker.buffer):
                tracker.buffer.clear()
                tracker.model = None
            if len(tracker.buffer):
                pred = tracker.forecast(cfg.horizon)
                forecasts[s].append(pred)
                trace.predictions.append(PredictionRecord(k, s, l, pred.positions, pred.from_model, pred.reliable))

        if cfg.prediction_only:
            modes = [HOVER] * cfg.n_uavs
            feasible = [True] * cfg.n_uavs
            nodes = [0] * cfg.n_uavs
            sequences = {}
        else:
            if cfg.noise_source == "camera":
                by_agent = {a.id: forecasts["cam"] for a in agents}
            elif cfg.koopman_fuse == "average":
                by_agent = {a.id: forecasts["avg"] for a in agents}
            else:
                by_agent = {a.id: forecasts[f"u{a.id}"] for a in agents}
            result = sequential_round(agents, by_agent, params)
            modes = [result.modes[a.id] for a in agents]
            feasible = [result.solutions[a.id].feasible for a in agents]
            nodes = [result.solutions[a.id].nodes for a in agents]
            sequences = result.sequences

        trace.records.append(TraceRecord(k, t, [a.pose for a in agents], modes, feasible,
                                         truth, measured, nodes))
        if k < K:
            for a, sigma in zip(agents, modes):
                a.pose = step(a.pose, sigma, cfg.T, params.modes, cfg.rotation)
                a.sequence = sequences.get(a.id)
    return trace


# -- reports ------------------------------------------------------------------

def prediction_errors(trace: SimulationTrace, model_only: bool = True) -> dict:
    """Pointwise forecast errors against later truth, grouped by source.

    Forecasts whose target step falls past the end of the run are skipped.
    """
    truth = trace.obstacle_truth()
    K = len(trace.records) - 1
    out: dict = {}
    for rec in trace.predictions:
        if model_only and not rec.from_model:
            continue
        n = min(len(rec.positions), K - rec.k)
        if n <= 0:
            continue
        target = truth[rec.k + 1: rec.k + 1 + n, rec.obstacle]
        err = np.linalg.norm(rec.positions[:n] - target, axis=1)
        out.setdefault(rec.source, []).append(err)
    return {s: np.concatenate(v) for s, v in out.items()}


def distance_report(trace: SimulationTrace) -> dict:
    """Smallest UAV-obstacle and UAV-UAV center distances over the run."""
    if not trace.records:
        raise ValueError("empty trace")
    times = trace.times
    uav = trace.uav_positions()
    report: dict = {"uav_obstacle": None, "inter_agent": None}
    if trace.config.n_obstacles:
        obs = trace.obstacle_truth()
        d = np.linalg.norm(uav[:, :, None, :] - obs[:, None, :, :], axis=-1)
        k, i, l = np.unravel_index(int(np.argmin(d)), d.shape)
        report["uav_obstacle"] = {"distance": float(d[k, i, l]), "time": float(times[k]),
                                  "uav": int(i) + 1, "obstacle": int(l) + 1}
    n = uav.shape[1]
    if n > 1:
        d = np.linalg.norm(uav[:, :, None, :] - uav[:, None, :, :], axis=-1)
        iu = np.triu_indices(n, 1)
        pairs = d[:, iu[0], iu[1]]
        k, p = np.unravel_index(int(np.argmin(pairs)), pairs.shape)
        report["inter_agent"] = {"distance": float(pairs[k, p]), "time": float(times[k]),
                                 "pair": [int(iu[0][p]) + 1, int(iu[1][p]) + 1]}
    return report


def convergence_errors(trace: SimulationTrace) -> list:
    final = trace.records[-1].poses
    return [float(np.linalg.norm(p.position - ref)) for p, ref in zip(final, trace.references)]
