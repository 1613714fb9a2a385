import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksmpc.avoidance import facet_normals
from ksmpc.kinematics import ModeSet, Pose, rollout
from ksmpc.koopman import hold_prediction
from ksmpc.smpc import (
    Agent,
    ClusterView,
    ControllerParams,
    NeighborInfo,
    OcpProblem,
    assemble_constraints,
    compute_cluster,
    neighbor_trajectories,
    sequential_round,
    shift_sequence,
    solve,
    stage_cost,
)
from oracles import brute_force, random_problem

MODES = ModeSet(0.2, 0.6)


def problem(**kw):
    base = dict(state=Pose(0, 0, 0), reference=(0, 0, 0), horizon=2, T=0.01, modes=MODES)
    base.update(kw)
    return OcpProblem(**base)


def test_solve_at_reference_hovers():
    sol = solve(problem(horizon=3))
    assert sol.sequence == (1, 1, 1)
    assert sol.cost == 0.0
    assert sol.feasible


def test_solve_reference_ahead_in_x():
    sol = solve(problem(reference=(10, 0, 0)))
    assert sol.sequence == (2, 2)
    assert sol.cost == pytest.approx((10 - 0.002) + (10 - 0.004), abs=1e-12)


def test_solve_blocked_direction_detours():
    # an obstacle sitting on the +x ray makes (2, 2) infeasible
    ref = (1.0, 0.0, 0.0)
    free = solve(problem(reference=ref))
    assert free.sequence == (2, 2)
    obs = [np.array([[0.25, 0, 0], [0.25, 0, 0]])]
    axes = facet_normals(6, axis_aligned=True)
    sol = solve(problem(reference=ref, obstacles=obs, obstacle_radii=[0.2475], normals=axes))
    assert sol.feasible
    assert sol.sequence != (2, 2)
    for t, pose in enumerate(sol.poses[1:]):
        assert np.linalg.norm(np.array(pose.position) - obs[0][t]) >= 0.2475


def test_infeasible_returns_least_violation():
    obs = [np.zeros((2, 3))]
    pr = problem(reference=(1, 0, 0), obstacles=obs, obstacle_radii=[0.5])
    sol = solve(pr)
    seq, cost, feasible, viol = brute_force(pr)
    assert not sol.feasible and not feasible
    assert sol.sequence == seq
    assert sol.violation == pytest.approx(viol, abs=1e-12)


@pytest.mark.parametrize("seed", range(40))
def test_matches_brute_force_n2(seed):
    pr = random_problem(np.random.default_rng(seed), 2)
    sol = solve(pr)
    seq, cost, feasible, viol = brute_force(pr)
    assert sol.sequence == seq
    assert sol.cost == pytest.approx(cost, abs=1e-12)
    assert sol.feasible == feasible


@pytest.mark.parametrize("seed", range(8))
def test_matches_brute_force_n3(seed):
    pr = random_problem(np.random.default_rng(1000 + seed), 3)
    sol = solve(pr)
    seq, cost, feasible, _ = brute_force(pr)
    assert (sol.sequence, sol.feasible) == (seq, feasible)
    assert sol.cost == pytest.approx(cost, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_solution_invariants(seed):
    pr = random_problem(np.random.default_rng(500 + seed), 3)
    sol = solve(pr)
    assert len(sol.sequence) == pr.horizon
    assert all(s in pr.alphabet for s in sol.sequence)
    poses = rollout(pr.state, sol.sequence, pr.T, pr.modes)
    assert [p.state for p in poses] == pytest.approx([p.state for p in sol.poses])
    assert stage_cost(poses, pr.reference) == pytest.approx(sol.cost, abs=1e-12)
    if sol.feasible:
        for row in assemble_constraints(pr, poses):
            for c in row:
                assert c.satisfied(poses[c.t + 1].position)
                # constraint satisfaction implies true separation
                assert np.linalg.norm(np.array(poses[c.t + 1].position) - c.reference) >= c.offset
    assert solve(pr).sequence == sol.sequence


def test_restricted_alphabet():
    sol = solve(problem(reference=(0, 0, 5), alphabet=(1, 2, 3, 7, 8, 9, 13)))
    assert sol.sequence == (1, 1)
    assert solve(problem(reference=(0, 0, 5))).sequence == (4, 4)


def test_problem_validation():
    with pytest.raises(ValueError):
        problem(horizon=0)
    with pytest.raises(ValueError):
        problem(T=0.0)
    with pytest.raises(ValueError):
        problem(obstacles=[np.zeros((2, 3))], obstacle_radii=[])
    with pytest.raises(ValueError):
        problem(obstacles=[np.zeros((3, 3))], obstacle_radii=[0.2])
    with pytest.raises(ValueError):
        problem(alphabet=(0, 1))


def test_assemble_constraints_shape():
    pr = problem(obstacles=[np.ones((2, 3)), -np.ones((2, 3))], obstacle_radii=[0.2, 0.2],
                 neighbors={5: np.full((2, 3), 2.0)}, neighbor_radii={5: 0.3})
    poses = rollout(pr.state, (2, 3), pr.T, pr.modes)
    rows = assemble_constraints(pr, poses)
    assert [len(r) for r in rows] == [3, 3]
    assert [c.t for c in rows[1]] == [1, 1, 1]
    assert rows[0][2].offset == 0.3


def test_cluster_examples():
    pos = {1: (0, 0, 0), 2: (0.5, 0, 0), 3: (5, 0, 0)}
    assert compute_cluster(pos, 1, 0.9) == {2}
    assert compute_cluster(pos, 3, 0.9) == set()
    assert compute_cluster({1: (0, 0, 0), 2: (0.9, 0, 0)}, 1, 0.9) == set()
    with pytest.raises(KeyError):
        compute_cluster(pos, 9, 0.9)


@settings(max_examples=50)
@given(st.lists(st.tuples(*[st.floats(-3, 3)] * 3), min_size=2, max_size=8), st.floats(0.1, 3.0))
def test_cluster_symmetric(points, r_cl):
    pos = dict(enumerate(points))
    for i in pos:
        for j in compute_cluster(pos, i, r_cl):
            assert i in compute_cluster(pos, j, r_cl)
            assert i != j


def test_neighbor_trajectories_examples():
    view = ClusterView(0, {1: NeighborInfo(Pose(1, 0, 0), (1, 1, 1, 1)),
                           2: NeighborInfo(Pose(0, 1, 0)),
                           3: NeighborInfo(Pose(0, 0, 0), (2,))})
    out = neighbor_trajectories(view, 0.01, MODES, 4)
    assert np.array_equal(out[1], np.tile([1, 0, 0], (4, 1)))
    assert np.array_equal(out[2], np.tile([0, 1, 0], (4, 1)))
    assert out[3][:, 0] == pytest.approx([0.002] * 4)


def test_shift_sequence():
    assert shift_sequence((2, 3, 4, 5), 4) == (3, 4, 5, 1)
    assert shift_sequence(None, 4) is None
    assert shift_sequence((7,), 3) == (1, 1, 1)


def params(**kw):
    base = dict(horizon=2, T=0.01, modes=MODES, normals=facet_normals(26))
    base.update(kw)
    return ControllerParams(**base)


def test_single_agent_round_equals_solve():
    a = Agent(0, Pose(0, 0, 0), np.array([1.0, 0.5, 0]))
    res = sequential_round([a], {}, params())
    assert res.solutions[0].sequence == solve(res.problems[0]).sequence
    assert res.modes[0] == res.solutions[0].first_mode


def test_far_agents_are_independent_of_order():
    agents = [Agent(i, Pose(3.0 * i, 0, 0), np.array([3.0 * i, 1.0, 0])) for i in range(3)]
    a = sequential_round(agents, {}, params())
    b = sequential_round(agents, {}, params(), order=[2, 0, 1])
    assert a.modes == b.modes


def test_round_uses_fresh_then_shifted_sequences():
    agents = [Agent(0, Pose(0, 0, 0), np.array([1.0, 0, 0]), sequence=(9, 9)),
              Agent(1, Pose(0.5, 0, 0), np.array([-1.0, 0, 0]), sequence=(8, 8))]
    res = sequential_round(agents, {}, params())
    # agent 0 sees agent 1's shifted previous plan, agent 1 sees agent 0's fresh plan
    nb0 = res.problems[0].neighbors[1]
    expected0 = [p.position for p in rollout(agents[1].pose, (8, 1), 0.01, MODES)[1:]]
    assert np.allclose(nb0, expected0)
    nb1 = res.problems[1].neighbors[0]
    expected1 = [p.position for p in rollout(agents[0].pose, res.sequences[0], 0.01, MODES)[1:]]
    assert np.allclose(nb1, expected1)


def test_first_step_static_neighbours():
    agents = [Agent(0, Pose(0, 0, 0), np.zeros(3)), Agent(1, Pose(0.5, 0, 0), np.zeros(3))]
    res = sequential_round(agents, {}, params())
    assert np.array_equal(res.problems[0].neighbors[1], np.tile([0.5, 0, 0], (2, 1)))


def test_sensing_radius_filters_obstacles():
    a = Agent(0, Pose(0, 0, 0), np.zeros(3))
    near = hold_prediction(np.array([0.5, 0, 0]), 2, 0)
    far = hold_prediction(np.array([5.0, 0, 0]), 2, 1)
    res = sequential_round([a], {0: [near, far]}, params(r_sense=1.0))
    assert len(res.problems[0].obstacles) == 1
    assert res.problems[0].obstacle_radii == [pytest.approx(0.1125 + 0.1125 + 0.015)]


def test_round_rejects_bad_order():
    with pytest.raises(ValueError):
        sequential_round([Agent(0, Pose(0, 0, 0), np.zeros(3))], {}, params(), order=[1])


def test_head_on_agents_keep_separation():
    # two agents swapping places on a line; run the closed loop for a while
    p = params(horizon=3, T=0.05, normals=facet_normals(12, planar=True), alphabet=(1, 2, 3, 7, 8, 9, 13))
    agents = [Agent(0, Pose(-0.6, 0, 0), np.array([0.6, 0, 0])),
              Agent(1, Pose(0.6, 0, 0, 0, 0, math.pi), np.array([-0.6, 0, 0]))]
    dmin = math.inf
    for _ in range(300):
        res = sequential_round(agents, {}, p)
        for a in agents:
            a.pose = rollout(a.pose, (res.modes[a.id],), p.T, p.modes)[1]
            a.sequence = res.sequences[a.id]
        dmin = min(dmin, np.linalg.norm(np.subtract(agents[0].pose.position, agents[1].pose.position)))
    assert dmin >= 2 * 0.1125
