import numpy as np
import pytest

from meshopt.algorithms import (
    AlgorithmError,
    AlgorithmSpec,
    OutboundMessage,
    cadmm_dual_update,
    cadmm_round,
    dgd_atc_step,
    dgd_cta_step,
    diging_step,
    init_state,
    make_schedule,
    next_q_step,
    next_q_surrogate,
)
from meshopt.graph import complete_graph, path_graph
from meshopt.problem import QuadraticLocalCost, SeparableProblem, scalar_consensus
from meshopt.weights import metropolis


def rows_of(w):
    values = w.values
    return [{j: values[i, j] for j in range(values.shape[0]) if values[i, j] != 0.0}
            for i in range(values.shape[0])]


def random_quadratics(n_robots, dim, seed):
    rng = np.random.default_rng(seed)
    costs = []
    for _ in range(n_robots):
        a = rng.standard_normal((dim, dim))
        costs.append(QuadraticLocalCost(P=a @ a.T + np.eye(dim),
                                        r=rng.standard_normal(dim)))
    return SeparableProblem(costs)


# ---------------------------------------------------------------------------
# Step schedules
# ---------------------------------------------------------------------------

def test_schedule_values():
    assert make_schedule("constant", 0.1).evaluate(999) == 0.1
    inv = make_schedule("inverse", 1.0)
    assert inv.evaluate(0) == 1.0
    assert inv.evaluate(9) == pytest.approx(0.1)
    assert make_schedule("inverse-sqrt", 1.0).evaluate(3) == pytest.approx(0.5)


def test_schedule_rejects_bad_input():
    with pytest.raises(AlgorithmError):
        make_schedule("constant", 0.0)
    with pytest.raises(AlgorithmError):
        make_schedule("constant", -1.0)
    with pytest.raises(AlgorithmError):
        make_schedule("geometric", 1.0)


def test_algorithm_spec_validation_and_param_plumbing():
    with pytest.raises(AlgorithmError):
        AlgorithmSpec("diging")  # missing alpha
    with pytest.raises(AlgorithmError):
        AlgorithmSpec("c-admm", rho=-1.0)
    with pytest.raises(AlgorithmError):
        AlgorithmSpec("warp-drive", alpha=0.1)
    spec = AlgorithmSpec("next-q", schedule=make_schedule("inverse-sqrt", 0.5))
    assert spec.tunable == "alpha"
    assert spec.with_param(0.25).schedule.alpha0 == 0.25
    admm = AlgorithmSpec("c-admm", rho=2.0)
    assert admm.tunable == "rho"
    assert admm.with_param(5.0).rho == 5.0
    # communicated bundle sizes
    assert AlgorithmSpec("dgd-cta", schedule=make_schedule("constant", 1.0)).payload_reals(8) == 8
    assert AlgorithmSpec("diging", alpha=0.1).payload_reals(8) == 16
    assert spec.payload_reals(8) == 16
    assert admm.payload_reals(8) == 8


def test_outbound_message_byte_size():
    msg = OutboundMessage(sender=0, payload=(np.zeros(8), np.zeros(8)))
    assert msg.n_reals == 16
    assert msg.byte_size == 128


# ---------------------------------------------------------------------------
# DGD (CTA and ATC)
# ---------------------------------------------------------------------------

def quad_1d(coeff, center):
    # f(x) = coeff * (x - center)^2
    return QuadraticLocalCost(P=[[2.0 * coeff]], r=[-2.0 * coeff * center],
                              c=coeff * center ** 2)


def test_dgd_cta_single_node_step():
    # f = x^2, x0 = 1, alpha = 0.1: x1 = 1 - 0.1 * 2 = 0.8
    prob = SeparableProblem([QuadraticLocalCost(P=[[2.0]], r=[0.0])])
    state = init_state(prob, AlgorithmSpec("dgd-cta", schedule=make_schedule("constant", 0.1)),
                       0, np.array([1.0]))
    out = dgd_cta_step(prob, 0, state, {}, {0: 1.0}, make_schedule("constant", 0.1), 0)
    assert out.x == pytest.approx([0.8])


def test_dgd_two_node_hand_oracle():
    # f_i = (x - a_i)^2 with a = (0, 3), started at the local minimizers;
    # metropolis on 2 nodes swaps the values and gradients vanish
    prob = SeparableProblem([quad_1d(1.0, 0.0), quad_1d(1.0, 3.0)])
    w = rows_of(metropolis(complete_graph(2)))
    sched = make_schedule("constant", 0.1)
    s0 = init_state(prob, AlgorithmSpec("dgd-cta", schedule=sched), 0, np.array([0.0]))
    s1 = init_state(prob, AlgorithmSpec("dgd-cta", schedule=sched), 1, np.array([3.0]))
    n0 = dgd_cta_step(prob, 0, s0, {1: s1.x}, w[0], sched, 0)
    n1 = dgd_cta_step(prob, 1, s1, {0: s0.x}, w[1], sched, 0)
    # hand evaluation: x0' = 1*3 - 0.1*2*(0-0) = 3 ; x1' = 1*0 - 0.1*2*(3-3) = 0
    assert n0.x == pytest.approx([3.0])
    assert n1.x == pytest.approx([0.0])


def test_atc_differs_from_cta_off_minimum():
    prob = SeparableProblem([quad_1d(1.0, 0.0), quad_1d(1.0, 3.0)])
    w = rows_of(metropolis(complete_graph(2)))
    sched = make_schedule("constant", 0.1)
    x = [np.array([1.0]), np.array([2.0])]
    states = [init_state(prob, AlgorithmSpec("dgd-cta", schedule=sched), i, x[i])
              for i in range(2)]
    cta0 = dgd_cta_step(prob, 0, states[0], {1: x[1]}, w[0], sched, 0)
    # hand evaluation, CTA: x0' = x1 - 0.1 * 2 * (1 - 0) = 2 - 0.2 = 1.8
    assert cta0.x == pytest.approx([1.8])
    adapted = [x[i] - 0.1 * prob.gradient(i, x[i]) for i in range(2)]
    atc0 = dgd_atc_step(prob, 0, states[0], {1: adapted[1]}, w[0], sched, 0)
    # hand evaluation, ATC: x0' = x1 - 0.1 * 2 * (2 - 3) = 2 + 0.2 = 2.2
    assert atc0.x == pytest.approx([2.2])
    assert not np.allclose(cta0.x, atc0.x)


def test_dgd_mixing_term_vanishes_at_consensus():
    # at consensus the combine step reproduces the common value exactly, so
    # the whole update reduces to the local gradient step
    prob = SeparableProblem([quad_1d(1.0, 0.0), quad_1d(1.0, 3.0)])
    w = rows_of(metropolis(complete_graph(2)))
    sched = make_schedule("constant", 0.05)
    star = prob.oracle_solve()
    states = [init_state(prob, AlgorithmSpec("dgd-cta", schedule=sched), i, star)
              for i in range(2)]
    for i in range(2):
        other = 1 - i
        out = dgd_cta_step(prob, i, states[i], {other: states[other].x}, w[i], sched, 0)
        expected = star - 0.05 * prob.gradient(i, star)
        assert np.allclose(out.x, expected, atol=1e-15)


def test_mix_renormalizes_over_available_senders():
    # a sender named in the row but absent from the inbox triggers the
    # renormalization fallback instead of silently losing mass
    prob = SeparableProblem([quad_1d(1.0, 0.0), quad_1d(1.0, 3.0), quad_1d(1.0, 6.0)])
    w = rows_of(metropolis(path_graph(3)))
    sched = make_schedule("constant", 0.0 + 1e-12)
    state = init_state(prob, AlgorithmSpec("dgd-cta", schedule=sched), 1, np.array([1.0]))
    # row 1 is {0: .5, 2: .5}; only node 0 delivered -> weights renormalized to {0: 1}
    out = dgd_cta_step(prob, 1, state, {0: np.array([5.0])}, w[1], sched, 0)
    assert out.x == pytest.approx([5.0], abs=1e-9)


# ---------------------------------------------------------------------------
# DIGing
# ---------------------------------------------------------------------------

def test_diging_single_node_hand_oracle():
    prob = SeparableProblem([QuadraticLocalCost(P=[[2.0]], r=[0.0])])
    spec = AlgorithmSpec("diging", alpha=0.1)
    state = init_state(prob, spec, 0, np.array([1.0]))
    assert state.y == pytest.approx([2.0])  # y0 = grad f(x0)
    out = diging_step(prob, 0, state, {}, {0: 1.0}, 0.1)
    assert out.x == pytest.approx([0.8])
    assert out.y == pytest.approx([1.6])  # 2 + 1.6 - 2


def test_diging_fixed_point_at_optimum():
    prob = random_quadratics(3, 4, seed=1)
    star = prob.oracle_solve()
    w = rows_of(metropolis(complete_graph(3)))
    # at the optimum the tracked average gradient is zero
    from meshopt.algorithms import DigingState
    states = [DigingState(x=star.copy(), y=np.zeros(4), last_grad=prob.gradient(i, star))
              for i in range(3)]
    for _ in range(10):
        payloads = [(s.x, s.y) for s in states]
        states = [diging_step(prob, i, states[i],
                              {j: payloads[j] for j in range(3) if j != i},
                              w[i], 0.05)
                  for i in range(3)]
    for s in states:
        assert np.max(np.abs(s.x - star)) <= 1e-8


def test_diging_gradient_tracking_conservation():
    # sum_i y_i == sum_i grad f_i(x_i) at every iteration under doubly-stochastic W
    prob = random_quadratics(4, 3, seed=2)
    spec = AlgorithmSpec("diging", alpha=0.02)
    w = rows_of(metropolis(cycle := complete_graph(4)))
    rng = np.random.default_rng(0)
    states = [init_state(prob, spec, i, rng.standard_normal(3)) for i in range(4)]
    for k in range(50):
        payloads = [(s.x, s.y) for s in states]
        states = [diging_step(prob, i, states[i],
                              {j: payloads[j] for j in cycle.neighbors(i)},
                              w[i], spec.alpha)
                  for i in range(4)]
        y_sum = sum(s.y for s in states)
        g_sum = sum(prob.gradient(i, states[i].x) for i in range(4))
        assert np.max(np.abs(y_sum - g_sum)) <= 1e-9


# ---------------------------------------------------------------------------
# NEXT-Q
# ---------------------------------------------------------------------------

def test_next_q_single_robot_newton_step():
    prob = random_quadratics(1, 5, seed=3)
    spec = AlgorithmSpec("next-q", schedule=make_schedule("constant", 1.0))
    rng = np.random.default_rng(1)
    state = init_state(prob, spec, 0, rng.standard_normal(5))
    # with N = 1: pi0 = (N-1) grad = 0, so the surrogate step is pure Newton
    assert np.max(np.abs(state.pi_tilde)) == 0.0
    out = next_q_step(prob, 0, state, {}, {0: 1.0}, spec.schedule, 0)
    star = prob.oracle_solve()
    assert np.max(np.abs(out.x - star)) <= 1e-10


def test_next_q_fixed_point():
    prob = random_quadratics(3, 4, seed=4)
    star = prob.oracle_solve()
    w = rows_of(metropolis(complete_graph(3)))
    sched = make_schedule("inverse-sqrt", 0.9)
    from meshopt.algorithms import NextState
    states = [NextState(x=star.copy(), y=np.zeros(4),
                        pi_tilde=-prob.gradient(i, star),
                        last_grad=prob.gradient(i, star))
              for i in range(3)]
    for i in range(3):
        assert np.max(np.abs(next_q_surrogate(prob, i, states[i]) - star)) <= 1e-9
    for k in range(10):
        payloads = []
        for i in range(3):
            from meshopt.algorithms import next_q_local
            payloads.append((next_q_local(prob, i, states[i], sched, k), states[i].y))
        states = [next_q_step(prob, i, states[i],
                              {j: payloads[j] for j in range(3) if j != i},
                              w[i], sched, k)
                  for i in range(3)]
    for s in states:
        assert np.max(np.abs(s.x - star)) <= 1e-8


def test_next_q_tracking_conservation():
    prob = random_quadratics(5, 3, seed=5)
    g = path_graph(5)
    w = rows_of(metropolis(g))
    sched = make_schedule("inverse-sqrt", 0.2)
    spec = AlgorithmSpec("next-q", schedule=sched)
    rng = np.random.default_rng(2)
    states = [init_state(prob, spec, i, rng.standard_normal(3)) for i in range(5)]
    from meshopt.algorithms import next_q_local
    for k in range(50):
        payloads = [(next_q_local(prob, i, states[i], sched, k), states[i].y)
                    for i in range(5)]
        states = [next_q_step(prob, i, states[i],
                              {j: payloads[j] for j in g.neighbors(i)},
                              w[i], sched, k)
                  for i in range(5)]
        y_sum = sum(s.y for s in states)
        g_sum = sum(prob.gradient(i, states[i].x) for i in range(5))
        assert np.max(np.abs(y_sum - g_sum)) <= 1e-9


# ---------------------------------------------------------------------------
# C-ADMM
# ---------------------------------------------------------------------------

def test_cadmm_isolated_node_minimizes_locally():
    prob = scalar_consensus([4.0])
    spec = AlgorithmSpec("c-admm", rho=1.0)
    state = init_state(prob, spec, 0, np.array([0.0]))
    interim, outbound = cadmm_round(prob, 0, state, {}, rho=1.0)
    assert outbound == pytest.approx([4.0])
    done = cadmm_dual_update(interim, {}, rho=1.0)
    assert done.y == pytest.approx([0.0])


def test_cadmm_three_node_regression_fixture():
    # a = (0, 3, 6) on the complete triangle, rho = 1, started at the local
    # minimizers; first round computed by hand from the prox formula:
    #   x_i' = (a_i + x_i + (x_j1 + x_j2)/2) / 3  ->  (1.5, 3.0, 4.5)
    #   y_i' = sum_j (x_i' - x_j')               ->  (-4.5, 0.0, 4.5)
    prob = scalar_consensus([0.0, 3.0, 6.0])
    spec = AlgorithmSpec("c-admm", rho=1.0)
    states = [init_state(prob, spec, i, np.array([a])) for i, a in enumerate([0.0, 3.0, 6.0])]
    g = complete_graph(3)

    def one_round(states):
        xs = [s.x for s in states]
        interim, outs = zip(*[
            cadmm_round(prob, i, states[i],
                        {j: xs[j] for j in g.neighbors(i)}, rho=1.0)
            for i in range(3)])
        return [cadmm_dual_update(interim[i],
                                  {j: outs[j] for j in g.neighbors(i)}, rho=1.0)
                for i in range(3)]

    states = one_round(states)
    assert [s.x[0] for s in states] == pytest.approx([1.5, 3.0, 4.5])
    assert [s.y[0] for s in states] == pytest.approx([-4.5, 0.0, 4.5])
    for k in range(199):
        states = one_round(states)
        if max(abs(s.x[0] - 3.0) for s in states) <= 1e-8:
            break
    assert max(abs(s.x[0] - 3.0) for s in states) <= 1e-8
    assert k + 2 <= 200


def test_cadmm_equal_iterates_add_zero_dual():
    prob = scalar_consensus([0.0, 3.0, 6.0])
    star = prob.oracle_solve()
    spec = AlgorithmSpec("c-admm", rho=1.0)
    from meshopt.algorithms import AdmmState
    state = AdmmState(x=star.copy(), y=np.array([1.25]),
                      neighbor_x={1: star.copy(), 2: star.copy()})
    done = cadmm_dual_update(state, {1: star.copy(), 2: star.copy()}, rho=1.0)
    assert done.y == pytest.approx([1.25])  # consensus residual zero


def test_cadmm_fixed_point_with_converged_duals():
    prob = random_quadratics(3, 4, seed=6)
    star = prob.oracle_solve()
    g = complete_graph(3)
    from meshopt.algorithms import AdmmState
    # stationarity of the prox objective at consensus requires y_i = -grad f_i(x*)
    states = [AdmmState(x=star.copy(), y=-prob.gradient(i, star)) for i in range(3)]
    for _ in range(10):
        xs = [s.x for s in states]
        interim, outs = zip(*[
            cadmm_round(prob, i, states[i], {j: xs[j] for j in g.neighbors(i)}, rho=0.7)
            for i in range(3)])
        states = [cadmm_dual_update(interim[i], {j: outs[j] for j in g.neighbors(i)}, rho=0.7)
                  for i in range(3)]
    for s in states:
        assert np.max(np.abs(s.x - star)) <= 1e-8


def test_cadmm_rejects_topology_change_within_round():
    prob = scalar_consensus([0.0, 3.0])
    spec = AlgorithmSpec("c-admm", rho=1.0)
    state = init_state(prob, spec, 0, np.array([0.0]))
    interim, _ = cadmm_round(prob, 0, state, {1: np.array([3.0])}, rho=1.0)
    with pytest.raises(AlgorithmError, match="within a round"):
        cadmm_dual_update(interim, {}, rho=1.0)


def test_cadmm_rejects_nonpositive_rho():
    prob = scalar_consensus([0.0])
    state = init_state(prob, AlgorithmSpec("c-admm", rho=1.0), 0, np.array([0.0]))
    with pytest.raises(AlgorithmError):
        cadmm_round(prob, 0, state, {}, rho=0.0)


# ---------------------------------------------------------------------------
# Single-robot degeneracy
# ---------------------------------------------------------------------------

def centralized_gradient_descent(prob, schedule, x0, iters):
    x = np.asarray(x0, dtype=float)
    history = [x]
    for k in range(iters):
        x = x - schedule.evaluate(k) * prob.joint_gradient(x)
        history.append(x)
    return history


@pytest.mark.parametrize("name", ["dgd-cta", "dgd-atc"])
def test_single_robot_dgd_equals_centralized_gd(name):
    prob = random_quadratics(1, 4, seed=8)
    sched = make_schedule("inverse-sqrt", 0.3)
    spec = AlgorithmSpec(name, schedule=sched)
    x0 = np.random.default_rng(3).standard_normal(4)
    reference = centralized_gradient_descent(prob, sched, x0, 25)
    state = init_state(prob, spec, 0, x0)
    step = dgd_cta_step if name == "dgd-cta" else dgd_atc_step
    for k in range(25):
        state = step(prob, 0, state, {}, {0: 1.0}, sched, k)
        assert np.max(np.abs(state.x - reference[k + 1])) <= 1e-12


def test_single_robot_diging_equals_constant_step_gd():
    prob = random_quadratics(1, 4, seed=9)
    sched = make_schedule("constant", 0.05)
    x0 = np.random.default_rng(4).standard_normal(4)
    reference = centralized_gradient_descent(prob, sched, x0, 25)
    state = init_state(prob, AlgorithmSpec("diging", alpha=0.05), 0, x0)
    for k in range(25):
        state = diging_step(prob, 0, state, {}, {0: 1.0}, 0.05)
        assert np.max(np.abs(state.x - reference[k + 1])) <= 1e-12
