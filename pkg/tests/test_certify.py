import numpy as np
import pytest

from ddcontrol.certify import (
    certify_contraction,
    check_convergent_behavior,
    check_tracking,
    closed_loop_field,
    estimate_roa,
    find_equilibrium,
)
from ddcontrol.datamat import build_annihilator, build_matrices
from ddcontrol.dictionary import BoxSet, Dictionary, JacobianBound
from ddcontrol.pipelines import (
    MANIP_CLOSED2_REF,
    MANIP_CLOSED_REF,
    MANIP_XSTAR2_REF,
    MANIP_XSTAR_REF,
    SURGE_K_REF,
    SURGE_PINV_REF,
)
from ddcontrol.plants import (
    ExoModel,
    IntegralController,
    Plant,
    StaticController,
    UniformInput,
    builtin_plant,
    run_experiment,
)
from ddcontrol.synthesis import SynthesisResult, synth_known_freq


def test_certificate_passes_for_good_design(manip_design, manip_dict):
    cert = certify_contraction(manip_design, manip_dict, BoxSet.full(4), n_samples=4000)
    assert cert.passed and cert.worst <= 1e-7
    assert cert.box.is_bounded  # unbounded set truncated for sampling


def test_certificate_fails_for_open_loop(manip, manip_dict):
    # K = 0 on the (marginally unstable) arm: evidence of failure, not an error
    fake = SynthesisResult(
        mode="contractive", feasible=True, K=np.zeros((1, 5)), P=np.eye(4),
        alpha=0.01, beta=0.01, M=manip.A[:, :4], N=manip.A[:, 4:],
    )
    cert = certify_contraction(fake, manip_dict, BoxSet.full(4), n_samples=2000)
    assert not cert.passed
    assert cert.worst > 0


def test_data_and_truth_modes_agree(manip, manip_dict, manip_design):
    A, B = manip.factorization_in(manip_dict)
    c_data = certify_contraction(manip_design, manip_dict, BoxSet.full(4), n_samples=3000)
    c_truth = certify_contraction(
        manip_design, manip_dict, BoxSet.full(4), n_samples=3000, mode="truth", truth=(A, B)
    )
    assert abs(c_data.worst - c_truth.worst) <= 1e-8


def test_certificate_sampling_deterministic(manip_design, manip_dict):
    a = certify_contraction(manip_design, manip_dict, BoxSet.full(4), n_samples=1000, seed=3)
    b = certify_contraction(manip_design, manip_dict, BoxSet.full(4), n_samples=1000, seed=3)
    assert a.worst == b.worst and np.array_equal(a.worst_x, b.worst_x)


# -- equilibria ----------------------------------------------------------------


def test_equilibrium_of_published_designs():
    d1 = Dictionary.from_json('{"n":4,"terms":["cos(x1)"]}')
    x1 = find_equilibrium(MANIP_CLOSED_REF, d1)
    assert np.abs(x1 - MANIP_XSTAR_REF).max() <= 5e-3
    d2 = Dictionary.from_json('{"n":4,"terms":["cos(x1)","x1^2","sin(x2)"]}')
    x2 = find_equilibrium(MANIP_CLOSED2_REF, d2, sim_dt=5e-4)
    assert np.abs(x2 - MANIP_XSTAR2_REF).max() <= 5e-3


def test_equilibrium_fixed_point_residual(manip_design, manip_dict):
    x = find_equilibrium(manip_design, manip_dict)
    f, _ = closed_loop_field(manip_design, manip_dict)
    assert np.linalg.norm(f(x)) <= 1e-9


def test_surge_equilibrium_is_origin(surge_design, surge_dict):
    x = find_equilibrium(surge_design, surge_dict, sim_horizon=40.0)
    assert np.linalg.norm(x) <= 1e-9


# -- region of attraction --------------------------------------------------------


def test_roa_monotone_in_bisection_refinement():
    surge = builtin_plant("surge")
    d = Dictionary.from_json('{"n":2,"terms":["x1^2","x1^3"]}')
    A, B = surge.factorization_in(d)
    f, _ = closed_loop_field(A + B @ SURGE_K_REF, d)
    box = BoxSet.from_bounds([[-7, 7], [-95, 95]])
    gammas = [
        estimate_roa(f, SURGE_PINV_REF, np.zeros(2), box, grid=(200, 200), bisect_iters=it).gamma
        for it in (4, 8, 16, 40)
    ]
    assert all(g2 >= g1 for g1, g2 in zip(gammas, gammas[1:]))
    assert gammas[-1] >= 90.0


def test_roa_box_limited_for_global_linear_contraction():
    d = Dictionary(2)
    f, _ = closed_loop_field(np.array([[-1.0, 0.0], [0.0, -2.0]]), d)
    est = estimate_roa(f, np.eye(2), np.zeros(2), BoxSet.from_bounds([[-3, 3], [-3, 3]]), grid=(80, 80))
    assert est.box_limited
    assert est.gamma > 0


def test_roa_empty_estimate_diagnosed():
    d = Dictionary(2)
    f, _ = closed_loop_field(np.array([[1.0, 0.0], [0.0, 1.0]]), d)  # expanding flow
    est = estimate_roa(f, np.eye(2), np.zeros(2), BoxSet.from_bounds([[-1, 1], [-1, 1]]), grid=(40, 40))
    assert est.gamma == 0.0
    assert "no positive level" in est.diagnosis


# -- behavioral audits ------------------------------------------------------------


def test_convergence_constant_disturbance(manip_design, manip_dict):
    plant = builtin_plant("manipulator")
    ctrl = StaticController(manip_design.K, manip_dict)
    exo = ExoModel.constant([0.05, 0.1, 0.0, 0.02])
    rep = check_convergent_behavior(
        plant, ctrl, trials=6, horizon=60.0, dt=2e-3, seed=2, disturbance=exo
    )
    assert rep["passed"]


def test_entrainment_to_periodic_disturbance(rng):
    d = Dictionary(2)
    A = np.array([[0.0, 1.0], [0.5, 0.0]])
    B = np.array([[0.0], [1.0]])
    plant = Plant.from_factorization("toy", d, A, B, E=np.array([[1.0], [0.0]]))
    psi = 1.3
    exo = ExoModel(1, 0, (psi,), np.array([[0.6, 0.0]]), np.array([0.8, -0.4]))
    ds = run_experiment(plant, UniformInput(-1, 1, seed=6), rng.uniform(-1, 1, 2), T=10, dt=0.2, disturbance=exo)
    dm = build_matrices(ds, d)
    W = build_annihilator(ds.times, 1, [psi], 0)
    res = synth_known_freq(dm, JacobianBound(np.zeros((2, 0))), W)
    assert res.feasible
    ctrl = StaticController(res.K, d)
    rep = check_convergent_behavior(
        plant, ctrl, trials=5, horizon=60.0, dt=2e-3, seed=4,
        disturbance=exo, period=2 * np.pi / psi, record_every=2,
    )
    assert rep["passed"]
    assert rep["max_period_gap"] <= 1e-4


def test_tracking_trivial_case(surge, surge_dict):
    # r = 0, d = 0, x0 = 0 at an origin equilibrium keeps the error at zero
    C = np.array([[1.0, 0, 0, 0]])
    K = np.zeros((1, 5))
    ctrl = IntegralController(K, surge_dict, C, np.array([0.0]))
    rep = check_tracking(
        surge, ctrl, trials=1, horizon=1.0, dt=1e-3,
        x0_box=BoxSet.from_bounds([[0, 0]] * 2), tol=1e-12,
    )
    assert rep["passed"] and rep["max_tail_error"] <= 1e-12
