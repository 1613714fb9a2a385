"""Online EDMD predictor for obstacle positions.

Each tracked coordinate ``z`` is lifted to ``[z, z^2, sin z, cos z, z^2 sin z,
z^2 cos z]``; the per-coordinate blocks are concatenated. A linear operator is
fitted on consecutive lifted snapshots and iterated to forecast.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BLOCK = 6
RIDGE_SCALE = 1e-8
DEFAULT_CAPACITY = 200
DEFAULT_MAGNITUDE_BOUND = 1e3


class NotReadyError(RuntimeError):
    """Too few buffered samples to fit an operator."""


class ConditioningError(np.linalg.LinAlgError):
    """The regression produced a non-finite operator."""


class ConditioningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LiftingDictionary:
    """Observable dictionary over the first ``dims`` position coordinates."""

    dims: int = 2

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")

    @property
    def size(self) -> int:
        return BLOCK * self.dims

    @property
    def position_index(self) -> np.ndarray:
        return np.arange(self.dims) * BLOCK

    def lift(self, position) -> np.ndarray:
        return lift(np.asarray(position, dtype=float)[: self.dims])

    def lift_many(self, positions) -> np.ndarray:
        """Lift an ``(M, >=dims)`` array row-wise into ``(M, L)``."""
        z = np.asarray(positions, dtype=float)[:, : self.dims]
        z2 = z * z
        s, c = np.sin(z), np.cos(z)
        blocks = np.stack([z, z2, s, c, z2 * s, z2 * c], axis=2)
        return blocks.reshape(len(z), self.size)

    def extract(self, lifted) -> np.ndarray:
        return extract_position(lifted, self.dims)


def lift(position) -> np.ndarray:
    """Concatenate the six observables of every coordinate in ``position``."""
    z = np.asarray(position, dtype=float).ravel()
    if z.size not in (2, 3):
        raise ValueError(f"expected a 2- or 3-coordinate position, got {z.size}")
    z2 = z * z
    s, c = np.sin(z), np.cos(z)
    return np.stack([z, z2, s, c, z2 * s, z2 * c], axis=1).ravel()


def extract_position(lifted, dims: Optional[int] = None) -> np.ndarray:
    """Read the linear observable of each coordinate block."""
    g = np.asarray(lifted, dtype=float).ravel()
    if dims is None:
        if g.size % BLOCK:
            raise ValueError(f"lifted length {g.size} is not a multiple of {BLOCK}")
        dims = g.size // BLOCK
    if g.size != BLOCK * dims:
        raise ValueError(f"expected lifted length {BLOCK * dims}, got {g.size}")
    return g[::BLOCK].copy()


class ObservationBuffer:
    """Fixed-capacity ring of equally spaced ``(time, position)`` samples.

    A sample that does not follow the previous one by exactly one sampling
    period (within ``1e-9 T``) restarts the buffer, so stored pairs are always
    consecutive.
    """

    def __init__(self, T: float, capacity: int = DEFAULT_CAPACITY):
        if not T > 0:
            raise ValueError("sampling time must be positive")
        if capacity < 2:
            raise ValueError("capacity must hold at least one pair")
        self.T = T
        self.capacity = capacity
        self._times: deque = deque(maxlen=capacity)
        self._positions: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._times)

    def append(self, t: float, position) -> None:
        if self._times:
            gap = t - self._times[-1]
            if gap <= 0:
                raise ValueError("timestamps must be strictly increasing")
            if abs(gap - self.T) > 1e-9 * self.T:
                self.clear()
        self._times.append(float(t))
        self._positions.append(np.array(position, dtype=float).ravel())

    def clear(self) -> None:
        self._times.clear()
        self._positions.clear()

    @property
    def times(self) -> np.ndarray:
        return np.array(self._times)

    @property
    def positions(self) -> np.ndarray:
        return np.array(self._positions)

    @property
    def latest(self) -> np.ndarray:
        return self._positions[-1].copy()


@dataclass
class KoopmanModel:
    K: np.ndarray
    dictionary: LiftingDictionary
    residual: float
    ridge: float = 0.0
    rank: int = 0
    mean_tail: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        L = self.dictionary.size
        if self.K.shape != (L, L):
            raise ValueError(f"K has shape {self.K.shape}, expected {(L, L)}")
        if not np.all(np.isfinite(self.K)):
            raise ConditioningError("operator has non-finite entries")


@dataclass
class ObstaclePrediction:
    """Forecast positions for steps ``k+1 .. k+N``."""

    obstacle_id: int
    positions: np.ndarray
    origin: np.ndarray
    from_model: bool = True
    reliable: bool = True

    @property
    def horizon(self) -> int:
        return len(self.positions)


def min_pairs(dictionary: LiftingDictionary) -> int:
    return dictionary.size + 1


def default_ridge(gram_trace: float, size: int) -> float:
    return RIDGE_SCALE * gram_trace / size


def fit(buffer, ridge: Optional[float] = None,
        dictionary: Optional[LiftingDictionary] = None) -> KoopmanModel:
    """Least-squares operator on consecutive lifted snapshot pairs.

    Minimises ``sum ||g(z_{j+1}) - K g(z_j)||^2 + ridge ||K||_F^2``. ``ridge=None``
    selects ``1e-8 trace(Gram) / L``. The problem is solved as an augmented
    least-squares system rather than by inverting the Gram matrix, which keeps
    the ``ridge=0`` case usable on nearly collinear data (minimum-norm solution).

    ``buffer`` is an :class:`ObservationBuffer` or an ``(M, d)`` position array.
    """
    positions = buffer.positions if isinstance(buffer, ObservationBuffer) else np.asarray(buffer, float)
    if dictionary is None:
        dictionary = LiftingDictionary(2 if positions.ndim < 2 else min(positions.shape[1], 3))
    L = dictionary.size
    if positions.ndim != 2 or len(positions) - 1 < min_pairs(dictionary):
        raise NotReadyError(
            f"need {min_pairs(dictionary) + 1} samples, have {len(positions) if positions.ndim else 0}"
        )
    G = dictionary.lift_many(positions)
    X, Y = G[:-1], G[1:]
    if ridge is None:
        ridge = default_ridge(float(np.einsum("ij,ij->", X, X)), L)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge > 0:
        A = np.vstack([X, math.sqrt(ridge) * np.eye(L)])
        B = np.vstack([Y, np.zeros((L, L))])
    else:
        A, B = X, Y
    Kt, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if ridge == 0 and rank < L:
        warnings.warn(
            f"snapshot matrix has numerical rank {rank} < {L}; returning the "
            "minimum-norm operator (use ridge > 0 for a regularised fit)",
            ConditioningWarning, stacklevel=2,
        )
    K = Kt.T
    if not np.all(np.isfinite(K)):
        raise ConditioningError("least-squares solve failed; use ridge > 0")
    err = Y - X @ Kt
    residual = float(np.sqrt(np.einsum("ij,ij->", err, err) / len(X)))
    tail = positions[:, dictionary.dims:].mean(axis=0)
    return KoopmanModel(K, dictionary, residual, float(ridge), int(rank), tail)


def predict(model: KoopmanModel, latest, horizon: int, obstacle_id: int = 0,
            magnitude_bound: float = DEFAULT_MAGNITUDE_BOUND) -> ObstaclePrediction:
    """Iterate the lifted operator ``horizon`` times from ``lift(latest)``.

    Coordinates beyond the dictionary's dims are held at their buffer mean.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    latest = np.asarray(latest, dtype=float).ravel()
    d = model.dictionary.dims
    g = model.dictionary.lift(latest)
    idx = model.dictionary.position_index
    out = np.empty((horizon, latest.size))
    out[:, d:] = model.mean_tail if model.mean_tail.size == latest.size - d else latest[d:]
    for t in range(horizon):
        g = model.K @ g
        out[t, :d] = g[idx]
    reliable = bool(np.all(np.isfinite(out)) and np.max(np.linalg.norm(out, axis=1)) <= magnitude_bound)
    return ObstaclePrediction(obstacle_id, out, latest, True, reliable)


def hold_prediction(latest, horizon: int, obstacle_id: int = 0) -> ObstaclePrediction:
    """Constant-position forecast used before a model is available."""
    latest = np.asarray(latest, dtype=float).ravel()
    return ObstaclePrediction(obstacle_id, np.tile(latest, (horizon, 1)), latest, False, True)


class ObstacleTracker:
    """Buffer, refit-every-sample model, and forecaster for one obstacle track."""

    def __init__(self, obstacle_id: int, T: float, dims: int = 2,
                 capacity: int = DEFAULT_CAPACITY, ridge: Optional[float] = None,
                 magnitude_bound: float = DEFAULT_MAGNITUDE_BOUND):
        self.obstacle_id = obstacle_id
        self.dictionary = LiftingDictionary(dims)
        self.buffer = ObservationBuffer(T, capacity)
        self.ridge = ridge
        self.magnitude_bound = magnitude_bound
        self.model: Optional[KoopmanModel] = None

    @property
    def ready(self) -> bool:
        return len(self.buffer) - 1 >= min_pairs(self.dictionary)

    def observe(self, t: float, position) -> None:
        self.buffer.append(t, position)
        self.model = fit(self.buffer, self.ridge, self.dictionary) if self.ready else None

    def forecast(self, horizon: int) -> ObstaclePrediction:
        if not len(self.buffer):
            raise NotReadyError("no measurements")
        if self.model is None:
            return hold_prediction(self.buffer.latest, horizon, self.obstacle_id)
        return predict(self.model, self.buffer.latest, horizon, self.obstacle_id, self.magnitude_bound)
