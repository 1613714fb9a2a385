"""Per-agent switched OCP, its tree-search solver, and the sequential round.

Each agent picks ``N`` modes minimising ``sum_t ||p_t - p_ref||`` over the N
successor positions, subject to one linearised separation constraint per step
for every sensed obstacle forecast and every cluster neighbour.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .avoidance import (
    DEFAULT_FACETS,
    LinearConstraint,
    build_agent_constraint,
    build_obstacle_constraint,
    facet_normals,
    safety_sphere,
)
from .kinematics import (
    ALL_MODES,
    HOVER,
    ModeSet,
    Pose,
    advance,
    check_sequence,
    rollout,
)
from .koopman import ObstaclePrediction

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
SQRT3 = math.sqrt(3.0)


@dataclass
class OcpProblem:
    """One agent's finite-horizon problem at the current sample.

    ``obstacles`` and ``neighbors`` hold ``(N, 3)`` predicted positions for the
    N successor steps; the matching radius lists hold the full separation
    ``R_i + R_other + delta`` for each.
    """

    state: Pose
    reference: np.ndarray
    horizon: int
    T: float
    modes: ModeSet
    obstacles: list = field(default_factory=list)
    obstacle_radii: list = field(default_factory=list)
    neighbors: dict = field(default_factory=dict)
    neighbor_radii: dict = field(default_factory=dict)
    normals: Optional[np.ndarray] = None
    alphabet: tuple = ALL_MODES
    rotation: str = "standard"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.T > 0:
            raise ValueError("sampling time must be positive")
        self.reference = np.asarray(self.reference, dtype=float).ravel()[:3]
        self.alphabet = tuple(sorted(check_sequence(self.alphabet)))
        if not self.alphabet:
            raise ValueError("empty mode alphabet")
        if self.normals is None:
            self.normals = facet_normals(DEFAULT_FACETS)
        self.obstacles = [np.asarray(o, dtype=float).reshape(-1, 3) for o in self.obstacles]
        self.neighbors = {j: np.asarray(q, dtype=float).reshape(-1, 3) for j, q in self.neighbors.items()}
        if len(self.obstacle_radii) != len(self.obstacles):
            raise ValueError("one radius per obstacle")
        if set(self.neighbor_radii) != set(self.neighbors):
            raise ValueError("one radius per neighbour")
        for traj in [*self.obstacles, *self.neighbors.values()]:
            if len(traj) != self.horizon:
                raise ValueError(f"prediction length {len(traj)} != horizon {self.horizon}")

    def anchors(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per step: stacked reference points ``(m, 3)`` and radii ``(m,)``."""
        refs = [*self.obstacles, *(self.neighbors[j] for j in sorted(self.neighbors))]
        radii = [*self.obstacle_radii, *(self.neighbor_radii[j] for j in sorted(self.neighbors))]
        out = []
        for t in range(self.horizon):
            if refs:
                out.append((np.array([r[t] for r in refs]), np.array(radii, dtype=float)))
            else:
                out.append((np.zeros((0, 3)), np.zeros(0)))
        return out


@dataclass
class Solution:
    sequence: tuple
    poses: list
    cost: float
    feasible: bool
    violation: float = 0.0
    nodes: int = 0

    @property
    def first_mode(self) -> int:
        return self.sequence[0]


def stage_cost(poses: Sequence[Pose], reference) -> float:
    """Sum of position errors over the successor poses (the start pose excluded)."""
    ref = np.asarray(reference, dtype=float)
    total = 0.0
    for p in poses[1:]:
        total += math.sqrt((p.x - ref[0]) ** 2 + (p.y - ref[1]) ** 2 + (p.z - ref[2]) ** 2)
    return total


def assemble_constraints(problem: OcpProblem, poses: Sequence[Pose]) -> list[list[LinearConstraint]]:
    """One constraint per step for each obstacle and neighbour, anchored at ``poses``.

    ``poses`` holds the N successor poses (or N+1 with the start, which is dropped).
    """
    if len(poses) == problem.horizon + 1:
        poses = poses[1:]
    if len(poses) != problem.horizon:
        raise ValueError("need one candidate pose per step")
    out = []
    for t, pose in enumerate(poses):
        p = pose.position
        row = []
        for traj, r in zip(problem.obstacles, problem.obstacle_radii):
            row.append(build_obstacle_constraint(p, safety_sphere(traj[t], r, 0.0), normals=problem.normals, t=t))
        for j in sorted(problem.neighbors):
            sph = safety_sphere(problem.neighbors[j][t], problem.neighbor_radii[j], 0.0)
            row.append(build_agent_constraint(p, sph, normals=problem.normals, t=t))
        out.append(row)
    return out


class _Search:
    """Depth-first enumeration of the mode tree in ascending lexicographic order."""

    def __init__(self, problem: OcpProblem):
        self.p = problem
        self.N = problem.horizon
        self.ref = tuple(float(v) for v in problem.reference)
        self.normals = np.ascontiguousarray(problem.normals, dtype=float)
        self.steps = []
        for refs, radii in problem.anchors():
            # eta^T (p - a) - r = eta^T p - (eta^T a + r), maximised over facets
            self.steps.append((refs @ self.normals.T, radii) if len(radii) else None)
        self.reach = problem.T * problem.modes.v_bar * SQRT3
        self.nodes = 0

    def _margins(self, t: int, pos) -> Optional[np.ndarray]:
        data = self.steps[t]
        if data is None:
            return None
        proj, radii = data
        fp = self.normals @ np.array(pos)
        return (fp - proj).max(axis=1) - radii

    def _lower_bound(self, dist: float, remaining: int) -> float:
        total = 0.0
        for s in range(1, remaining + 1):
            rest = dist - s * self.reach
            if rest <= 0.0:
                break
            total += rest
        return total

    def run(self, by_violation: bool):
        """Return ``(seq, violation, cost, states)`` of the winning leaf, or None.

        Leaves are met in ascending lexicographic order, so a subtree whose
        violation and cost bounds are both no better than some earlier leaf
        cannot hold the answer and is skipped. This also collapses the plateaus
        of equal-cost attitude-only sequences.
        """
        p = self.p
        start = p.state.state
        leaves: list = []
        front: list = []  # (violation, cost) of earlier leaves, Pareto-reduced
        vmin = [math.inf]
        seq: list[int] = []
        states: list = [start]
        rx, ry, rz = self.ref

        def dominated(v: float, c: float) -> bool:
            for fv, fc in front:
                if fv <= v and fc <= c:
                    return True
            return False

        def visit(depth: int, cost: float, viol: float):
            for sigma in p.alphabet:
                st = advance(states[-1], sigma, p.T, p.modes, p.rotation)
                self.nodes += 1
                m = self._margins(depth, st[:3])
                v = viol
                if m is not None and float(m.min()) < 0.0:
                    if not by_violation:
                        continue
                    v += float(-m[m < 0.0].sum())
                    if v > vmin[0] + TIE_TOL:
                        continue
                d = math.sqrt((st[0] - rx) ** 2 + (st[1] - ry) ** 2 + (st[2] - rz) ** 2)
                c = cost + d
                remaining = self.N - depth - 1
                if dominated(v, c + self._lower_bound(d, remaining)):
                    continue
                seq.append(sigma)
                states.append(st)
                if remaining == 0:
                    leaves.append((tuple(seq), v, c, list(states)))
                    front[:] = [f for f in front if not (v <= f[0] and c <= f[1])]
                    front.append((v, c))
                    vmin[0] = min(vmin[0], v)
                else:
                    visit(depth + 1, c, v)
                seq.pop()
                states.pop()

        visit(0, 0.0, 0.0)
        if not leaves:
            return None
        pool = [lf for lf in leaves if lf[1] <= vmin[0] + TIE_TOL]
        cmin = min(lf[2] for lf in pool)
        pool = [lf for lf in pool if lf[2] <= cmin + TIE_TOL]
        return min(pool, key=lambda lf: lf[0])


def solve(problem: OcpProblem) -> Solution:
    """Globally optimal mode sequence by pruned depth-first search.

    Prefixes violating a step constraint are cut, and a prefix is dropped when
    its cost plus an admissible bound on the remaining steps (each step closes
    at most ``sqrt(3) T v_bar`` of the distance) exceeds the best leaf. Costs
    within ``1e-12`` of the minimum tie, and the lexicographically smallest
    sequence among them wins. When no sequence is feasible the one with the
    least summed constraint violation is returned (ties: cost, then sequence)
    and flagged infeasible.
    """
    search = _Search(problem)
    leaf = search.run(by_violation=False)
    feasible = leaf is not None
    if not feasible:
        leaf = search.run(by_violation=True)
        log.debug("no feasible sequence; least violation %.3g", leaf[1])
    seq, viol, cost, states = leaf
    poses = [Pose.from_state(s) for s in states]
    return Solution(seq, poses, cost, feasible, 0.0 if feasible else viol, search.nodes)


# -- clusters and the sequential protocol -----------------------------------

def compute_cluster(positions: Mapping, i, r_cl: float) -> set:
    """Agents strictly closer than ``r_cl`` to agent ``i``."""
    if i not in positions:
        raise KeyError(f"unknown agent {i!r}")
    if not r_cl > 0:
        raise ValueError("cluster radius must be positive")
    pi = np.asarray(positions[i], dtype=float)
    return {j for j, pj in positions.items()
            if j != i and float(np.linalg.norm(pi - np.asarray(pj, dtype=float))) < r_cl}


@dataclass
class NeighborInfo:
    pose: Pose
    sequence: Optional[tuple] = None
    fresh: bool = False


@dataclass
class ClusterView:
    owner: object
    neighbors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.owner in self.neighbors:
            raise ValueError("an agent is not its own neighbour")


def neighbor_trajectories(view: ClusterView, T: float, modes: ModeSet, horizon: int,
                          rotation: str = "standard") -> dict:
    """Reconstruct each neighbour's next ``horizon`` positions from its shared modes.

    Sequences shorter than the horizon are padded with hover; a neighbour with
    no sequence is held at its reported position.
    """
    out = {}
    for j, info in view.neighbors.items():
        seq = tuple(info.sequence or ())[:horizon]
        if not seq:
            out[j] = np.tile(info.pose.position, (horizon, 1))
            continue
        seq = seq + (HOVER,) * (horizon - len(seq))
        out[j] = np.array([p.position for p in rollout(info.pose, seq, T, modes, rotation)[1:]])
    return out


def shift_sequence(seq: Optional[Sequence[int]], horizon: int) -> Optional[tuple]:
    """Drop the applied first mode and pad the tail with hover."""
    if not seq:
        return None
    rest = tuple(seq[1:horizon])
    return rest + (HOVER,) * (horizon - len(rest))


@dataclass
class ControllerParams:
    horizon: int = 4
    T: float = 0.01
    modes: ModeSet = field(default_factory=lambda: ModeSet(0.2, 0.6))
    alphabet: tuple = ALL_MODES
    normals: Optional[np.ndarray] = None
    r_cl: float = 0.9
    r_sense: Optional[float] = None
    obstacle_radius: float = 0.1125
    delta_obstacle: float = 0.015
    delta_agent: float = 0.015
    rotation: str = "standard"

    def __post_init__(self):
        if self.normals is None:
            self.normals = facet_normals(DEFAULT_FACETS)
        if self.r_sense is None:
            self.r_sense = 2.0 * self.r_cl


@dataclass
class Agent:
    id: int
    pose: Pose
    reference: np.ndarray
    radius: float = 0.1125
    sequence: Optional[tuple] = None  # last published sequence


@dataclass
class RoundResult:
    modes: dict
    solutions: dict
    sequences: dict
    problems: dict


def build_problem(agent: Agent, view: ClusterView, forecasts: Sequence[ObstaclePrediction],
                  params: ControllerParams, radii: Mapping) -> OcpProblem:
    p = agent.pose.position
    obstacles, obstacle_radii = [], []
    for pred in forecasts:
        if float(np.linalg.norm(p - pred.origin[:3])) <= params.r_sense:
            obstacles.append(pred.positions[: params.horizon, :3])
            obstacle_radii.append(agent.radius + params.obstacle_radius + params.delta_obstacle)
    neighbors = neighbor_trajectories(view, params.T, params.modes, params.horizon, params.rotation)
    neighbor_radii = {j: agent.radius + radii[j] + params.delta_agent for j in neighbors}
    return OcpProblem(agent.pose, agent.reference, params.horizon, params.T, params.modes,
                      obstacles, obstacle_radii, neighbors, neighbor_radii, params.normals,
                      params.alphabet, params.rotation)


def sequential_round(agents: Sequence[Agent], forecasts: Mapping, params: ControllerParams,
                     order: Optional[Sequence] = None) -> RoundResult:
    """Solve every agent's OCP in ``order`` and commit first modes.

    Agents solved earlier in the round share their fresh sequences; the rest
    contribute their previous sequence shifted by one step, or are held static
    when they have none yet. ``forecasts`` maps agent id to the obstacle
    predictions that agent sees.
    """
    by_id = {a.id: a for a in agents}
    if order is None:
        order = sorted(by_id)
    if sorted(order) != sorted(by_id):
        raise ValueError("order must be a permutation of the agent ids")
    positions = {a.id: a.pose.position for a in agents}
    radii = {a.id: a.radius for a in agents}
    published: dict = {}
    modes, solutions, problems = {}, {}, {}
    for i in order:
        agent = by_id[i]
        view = ClusterView(i)
        for j in sorted(compute_cluster(positions, i, params.r_cl)):
            if j in published:
                view.neighbors[j] = NeighborInfo(by_id[j].pose, published[j], True)
            else:
                view.neighbors[j] = NeighborInfo(by_id[j].pose, shift_sequence(by_id[j].sequence, params.horizon))
        problem = build_problem(agent, view, forecasts.get(i, ()), params, radii)
        sol = solve(problem)
        if not sol.feasible:
            log.info("agent %s infeasible, violation %.3g m", i, sol.violation)
        published[i] = sol.sequence
        modes[i] = sol.first_mode
        solutions[i] = sol
        problems[i] = problem
    return RoundResult(modes, solutions, published, problems)
