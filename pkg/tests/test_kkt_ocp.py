"""Stage-structured backend: Riccati recursion, pivots, cost scaling."""
import numpy as np
import pytest

from qcipm import flops
from qcipm.ipm import (IpmSettings, Residuals, initial_iterate, solve)
from qcipm.kkt_ocp import RiccatiKkt
from qcipm.layout import layout_of
from qcipm.linalg import IndefiniteError, is_psd
from qcipm.model import OcpDims, new_ocp_qcqp, validate
from oracles import direction_errors, random_ocp, run_with_capture


def scalar_chain(r0=1.0, q0=1.0, qN=1.0):
    dims = OcpDims(N=1, nx=[1, 1], nu=[1, 0], nbu=[0, 0], nbx=[0, 0],
                   ng=[0, 0], nq=[0, 0], ns=[0, 0])
    p = new_ocp_qcqp(dims)
    p.dyn[0].A = np.array([[1.0]])
    p.dyn[0].B = np.array([[1.0]])
    p.dyn[0].b = np.zeros(1)
    p.stages[0].cost.R = np.array([[r0]])
    p.stages[0].cost.Q = np.array([[q0]])
    p.stages[1].cost.Q = np.array([[qN]])
    return p.freeze()


def backend_at_start(p, reg=0.0):
    lay = layout_of(p)
    cfg = IpmSettings()
    cfg.reg_eps = reg
    kkt = RiccatiKkt(p, lay, cfg)
    kkt.update(initial_iterate(p, lay))
    return kkt


def test_scalar_riccati_recursion():
    # A = B = 1, R = Q = 1 on both stages:
    # P_1 = 1, Rbar_0 = 1 + 1 = 2, K_0 = -1/2, P_0 = 2 - 1/2 = 3/2
    kkt = backend_at_start(scalar_chain())
    assert kkt.P[1][0, 0] == 1.0
    assert kkt.r_fac[0].solve(np.array([1.0]))[0] == pytest.approx(0.5)
    assert kkt.K[0][0, 0] == pytest.approx(-0.5)
    assert kkt.P[0][0, 0] == pytest.approx(1.5)
    assert kkt.K[1].shape == (0, 1)  # terminal stage has no controls


def test_control_pivot_failure_names_the_stage():
    p = scalar_chain(r0=-2.0)  # Rbar_0 = -2 + 1 = -1
    with pytest.raises(IndefiniteError, match="stage 0 control pivot"):
        backend_at_start(p)


def test_initial_state_pivot_failure():
    p = scalar_chain(q0=0.0, qN=0.0)  # cost-to-go collapses to zero
    with pytest.raises(IndefiniteError, match="initial-state pivot"):
        backend_at_start(p)


def test_solve_before_update_guard():
    p = scalar_chain()
    lay = layout_of(p)
    kkt = RiccatiKkt(p, lay, IpmSettings())
    res = Residuals(np.zeros(lay.ny), np.zeros(lay.ne),
                    np.zeros(lay.ni), np.zeros(lay.ni))
    with pytest.raises(RuntimeError, match="solve before update"):
        kkt.solve(res)


def test_horizon_zero_is_a_plain_qp():
    dims = OcpDims(N=0, nx=[2], nu=[0], nbu=[0], nbx=[1], ng=[0], nq=[0],
                   ns=[0])
    p = new_ocp_qcqp(dims)
    p.stages[0].cost.Q = np.diag([1.0, 2.0])
    p.stages[0].cost.q = np.array([-1.0, -2.0])
    p.stages[0].ineq.idxbx = np.array([0])
    p.stages[0].ineq.lb = np.array([-5.0])
    p.stages[0].ineq.ub = np.array([np.inf])
    assert validate(p).ok
    p.freeze()
    sol, stats = solve(p, IpmSettings.for_mode("balance"))
    assert stats.status == "converged"
    assert np.allclose(sol.y, [1.0, 1.0], atol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cost_to_go_symmetric_positive(seed):
    rng = np.random.default_rng(seed)
    kkt = backend_at_start(random_ocp(rng), reg=1e-10)
    for P in kkt.P:
        assert np.array_equal(P, P.T)
        assert is_psd(P)


def test_explicit_directions_match_flat_solve():
    rng = np.random.default_rng(7)
    p = random_ocp(rng)
    sol, stats, events = run_with_capture(p, IpmSettings.for_mode("balance"))
    assert stats.status == "converged"
    errs = direction_errors(p, events)
    assert errs and max(errs) < 1e-9


def chain_problem(N, nx=8, nu=2):
    dims = OcpDims(N=N, nx=[nx] * (N + 1), nu=[nu] * N + [0],
                   nbu=[0] * (N + 1), nbx=[0] * (N + 1), ng=[0] * (N + 1),
                   nq=[0] * (N + 1), ns=[0] * (N + 1))
    p = new_ocp_qcqp(dims)
    for n in range(N):
        p.dyn[n].A = 0.9 * np.eye(nx)
        p.dyn[n].B = 0.1 * np.ones((nx, nu))
        p.dyn[n].b = np.zeros(nx)
        p.stages[n].cost.R = np.eye(nu)
    for n in range(N + 1):
        p.stages[n].cost.Q = np.eye(nx)
    return p.freeze()


def test_riccati_cost_grows_linearly_with_horizon():
    counts = {}
    for N in (4, 8, 16, 32):
        p = chain_problem(N)
        lay = layout_of(p)
        kkt = RiccatiKkt(p, lay, IpmSettings())
        it = initial_iterate(p, lay)
        with flops.tally() as tal:
            kkt.update(it)
        counts[N] = tal["riccati_factorize"]
    d1 = counts[8] - counts[4]
    assert d1 > 0
    # exactly affine in N: doubling the gap doubles the increment
    assert counts[16] - counts[8] == 2 * d1
    assert counts[32] - counts[16] == 4 * d1
