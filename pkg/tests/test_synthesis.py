import json

import numpy as np
import pytest

from ddcontrol.datamat import build_annihilator, build_extended, build_matrices
from ddcontrol.dictionary import (
    BasisFunction,
    BoxSet,
    Dictionary,
    JacobianBound,
    bound_jacobian,
    eval_Z,
    jac_Z,
)
from ddcontrol.plants import (
    ExoModel,
    ExperimentDataset,
    Plant,
    UniformInput,
    builtin_plant,
    input_extended,
    run_experiment,
)
from ddcontrol.synthesis import (
    NoiseModel,
    SynthesisError,
    SynthesisResult,
    SynthOptions,
    synth_contractive,
    synth_convex_hull,
    synth_extended,
    synth_general_nonlin,
    synth_known_freq,
    synth_min_nonlinearity,
    synth_monotone,
    synth_noisy,
    synth_remainder,
    synth_taylor_baseline,
    synth_taylor_remainder,
)


def synthetic_dataset(dictionary, A, B, T, rng, x_range=1.0, u_range=1.0):
    """Exact samples from a factored plant (derivatives computed analytically)."""
    X = rng.uniform(-x_range, x_range, (T, dictionary.n))
    U = rng.uniform(-u_range, u_range, (T, B.shape[1]))
    Xd = eval_Z(dictionary, X) @ np.asarray(A).T + U @ np.asarray(B).T
    return ExperimentDataset(0.05 * np.arange(T), X, U, Xd)


# -- base program --------------------------------------------------------------


def test_manipulator_contractive_feasible(manip_design):
    assert manip_design.feasible
    assert manip_design.alpha >= 1e-3  # certified margin at least the requested one
    ev = np.linalg.eigvalsh(manip_design.P)
    assert ev[0] >= 1e-6 * 0.99
    assert manip_design.beta == pytest.approx(manip_design.alpha / ev[-1])


def test_consistency_equalities_hold(manip_dm, manip_design):
    res = manip_design
    top = np.vstack([res.P, np.zeros((1, 4))])
    assert np.max(np.abs(manip_dm.Z0 @ res.Y1 - top)) <= 1e-7
    rhs = np.vstack([np.zeros((4, 1)), np.eye(1)])
    assert np.max(np.abs(manip_dm.Z0 @ res.G2 - rhs)) <= 1e-7


def test_gain_reconstruction_is_exact(manip_dm, manip_design):
    res = manip_design
    K = manip_dm.U0 @ np.hstack([np.linalg.solve(res.P.T, res.Y1.T).T, res.G2])
    assert np.array_equal(K, res.K)


def test_lemma_identity_manipulator(manip, manip_dict, manip_dm, manip_design):
    A, B = manip.factorization_in(manip_dict)
    assert np.linalg.norm((A + B @ manip_design.K) - manip_dm.X1 @ manip_design.G) <= 1e-6


def test_schur_equivalence(manip_dm, manip_design):
    # the solved block LMI implies the expanded contraction inequality
    res = manip_design
    Pinv = res.P_inv
    RQ = np.diag([1.0, 0, 0, 0])
    expanded = (
        Pinv @ res.M + res.M.T @ Pinv
        + res.alpha * Pinv @ Pinv
        + RQ @ RQ.T
        + Pinv @ res.N @ res.N.T @ Pinv
    )
    assert np.linalg.eigvalsh(expanded)[-1] <= 1e-7


def test_linear_plant_reduces_to_linear_stabilization(rng):
    # empty Q: the growth borders vanish and the program is pure stabilization
    d = Dictionary(2)
    A = np.array([[0.0, 1.0], [2.0, 0.0]])  # unstable
    B = np.array([[0.0], [1.0]])
    ds = synthetic_dataset(d, A, B, 8, rng)
    dm = build_matrices(ds, d)
    res = synth_contractive(dm, JacobianBound(np.zeros((2, 0))))
    assert res.feasible
    Acl = A + B @ res.K
    assert np.max(np.real(np.linalg.eigvals(Acl))) < 0
    assert np.linalg.norm(Acl - res.M) <= 1e-6


def test_surge_designs_feasible(surge_design):
    assert surge_design.feasible and surge_design.alpha > 0


def test_rank_deficient_data_diagnosed(manip_dict):
    x = np.tile(np.array([[0.1, 0.0, 0.0, 0.0]]), (6, 1))
    ds = ExperimentDataset(0.05 * np.arange(6), x, np.zeros((6, 1)), np.zeros((6, 4)))
    with pytest.warns(UserWarning):
        dm = build_matrices(ds, manip_dict)
        res = synth_contractive(dm, JacobianBound(np.diag([1.0, 0, 0, 0])))
    assert not res.feasible
    assert "equalities" in (res.diagnosis or "")


def test_margin_mode_maximizes_alpha(manip_dm, manip_design):
    res = synth_contractive(
        manip_dm, JacobianBound(np.diag([1.0, 0, 0, 0])),
        SynthOptions(margin=True, p_max=100.0, p_floor=1e-2),
    )
    assert res.feasible
    assert res.alpha > manip_design.alpha


def test_result_json_round_trip(manip_design):
    back = SynthesisResult.from_json_dict(json.loads(manip_design.to_json()))
    assert back.mode == "contractive" and back.feasible
    assert np.allclose(back.K, manip_design.K)
    assert np.allclose(back.M, manip_design.M)
    assert back.beta == pytest.approx(manip_design.beta)


# -- generalized nonlinearity conditions ---------------------------------------


def test_general_reduces_to_base(manip_dm, manip_design):
    RQ = np.diag([1.0, 0, 0, 0])
    res = synth_general_nonlin(manip_dm, RQ @ RQ.T, np.eye(1), np.zeros((4, 1)))
    assert res.feasible == manip_design.feasible


def test_general_incremental_sector_toy(rng):
    # Q = sin(x1) satisfies dQ' R dQ + S dQ + dQ' S' <= W with the values below
    d = Dictionary(2, (BasisFunction.sine(0),))
    A = np.array([[0.0, 1.0, 0.4], [1.0, 0.0, 0.8]])
    B = np.eye(2)
    ds = synthetic_dataset(d, A, B, 10, rng)
    dm = build_matrices(ds, d)
    W = np.diag([1.3, 0.0])
    R = np.array([[1.0]])
    S = np.array([[0.1], [0.0]])
    # sampled validity of the assumed condition
    X = rng.uniform(-3, 3, (2000, 2))
    J = d.jac_Q(X)
    cond = np.einsum("nki,kl,nlj->nij", J, R, J) + np.einsum("ik,nkj->nij", S, J)
    cond = cond + np.swapaxes(np.einsum("ik,nkj->nij", S, J), 1, 2) - W
    assert np.linalg.eigvalsh(cond)[..., -1].max() <= 1e-9
    res = synth_general_nonlin(dm, W, R, S)
    assert res.feasible


def test_general_accepts_singular_R(manip_dm):
    RQ = np.diag([1.0, 0, 0, 0])
    res = synth_general_nonlin(manip_dm, RQ @ RQ.T, np.zeros((1, 1)), np.zeros((4, 1)))
    # R = 0 forces the coupling row to vanish, which these data cannot do;
    # the call must be accepted (PSD precondition only), whatever the verdict
    assert res.mode == "general"


def test_general_rejects_indefinite_R(manip_dm):
    with pytest.raises(SynthesisError):
        synth_general_nonlin(manip_dm, np.eye(4), -np.eye(1), np.zeros((4, 1)))


def test_monotone_cubic_plant(rng):
    d = Dictionary(1, (BasisFunction.monomial({0: 3}),))
    ds = synthetic_dataset(d, np.array([[1.0, -1.0]]), np.array([[1.0]]), 8, rng, 2.0, 2.0)
    dm = build_matrices(ds, d)
    res = synth_monotone(dm, np.array([[-1.0]]), check_set=BoxSet.full(1))
    assert res.feasible
    assert np.max(np.abs(res.N - (-res.P))) <= 1e-6  # X1 G2 = P S assigned
    # contraction holds globally without dominating the cubic growth
    X = rng.uniform(-50, 50, (500, 1))
    J = res.M[0, 0] + res.N[0, 0] * 3 * X[:, 0] ** 2
    Pinv = res.P_inv[0, 0]
    assert np.max(2 * Pinv * J + res.beta * Pinv) <= 1e-9


def test_monotone_warning_on_violation(rng):
    d = Dictionary(1, (BasisFunction.sine(0),))  # sin is not monotone under S = -1
    ds = synthetic_dataset(d, np.array([[-1.0, 0.2]]), np.array([[1.0]]), 8, rng)
    dm = build_matrices(ds, d)
    with pytest.warns(UserWarning, match="monotonicity"):
        synth_monotone(dm, np.array([[-1.0]]), check_set=BoxSet.full(1))


def test_hull_single_zero_vertex_is_linear_condition(rng):
    d = Dictionary(2, (BasisFunction.sine(0),))
    A = np.array([[0.0, 1.0, 0.0], [1.5, 0.0, 0.0]])  # nonlinearity decoupled
    B = np.array([[0.0], [1.0]])
    ds = synthetic_dataset(d, A, B, 10, rng)
    dm = build_matrices(ds, d)
    res = synth_convex_hull(dm, [np.zeros((1, 2))], beta=0.05)
    assert res.feasible


def test_hull_two_vertices_saturation(rng):
    # dQ = cos(x1) e1' stays in the hull of +/- e1'
    d = Dictionary(2, (BasisFunction.sine(0),))
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    ds = synthetic_dataset(d, A, B, 10, rng, 2.0, 2.0)
    dm = build_matrices(ds, d)
    V1 = np.array([[1.0, 0.0]])
    res = synth_convex_hull(dm, [V1, -V1], beta=0.1)
    assert res.feasible
    assert res.beta >= 0.1 - 1e-9
    # sampled contraction for random interpolated Jacobians
    Pinv = res.P_inv
    lam = np.random.default_rng(0).uniform(0, 1, 200)
    worst = -np.inf
    for l in lam:
        J = res.M + res.N @ (l * V1 + (1 - l) * (-V1))
        S = Pinv @ J + J.T @ Pinv + res.beta * Pinv
        worst = max(worst, np.linalg.eigvalsh(S)[-1])
    assert worst <= 1e-8


def test_hull_wrong_vertex_shape(surge_dm):
    with pytest.raises(SynthesisError, match="shape"):
        synth_convex_hull(surge_dm, [np.zeros((3, 3))], beta=0.1)


# -- first-order baselines -------------------------------------------------------


def test_taylor_baseline_manipulator(manip_dm):
    res = synth_taylor_baseline(manip_dm)
    assert res.feasible
    assert res.K.shape == (1, 4)  # state feedback only
    assert np.max(np.real(np.linalg.eigvals(res.M))) < 0


def test_taylor_baseline_unstable_linear_plant(rng):
    d = Dictionary(3)
    A = rng.normal(size=(3, 3)) + 0.5 * np.eye(3)
    B = rng.normal(size=(3, 2))
    ds = synthetic_dataset(d, A, B, 9, rng)
    dm = build_matrices(ds, d)
    res = synth_taylor_baseline(dm)
    assert res.feasible
    assert np.max(np.real(np.linalg.eigvals(A + B @ res.K))) < 0


def test_min_nonlinearity_exact_cancellation(rng):
    # xdot2 = u + x1^2: the input channel spans the nonlinearity
    d = Dictionary(2, (BasisFunction.monomial({0: 2}),))
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    ds = synthetic_dataset(d, A, B, 9, rng)
    dm = build_matrices(ds, d)
    res = synth_min_nonlinearity(dm)
    assert res.feasible
    assert res.objective_value <= 1e-6
    assert res.dims["exact_cancellation"]


def test_min_nonlinearity_manipulator_cannot_cancel(manip_dm):
    res = synth_min_nonlinearity(manip_dm)
    assert res.feasible
    # the cosine enters through an unactuated row; 1.96 is the structural floor
    assert res.objective_value == pytest.approx(1.96, abs=1e-3)
    assert not res.dims["exact_cancellation"]


def test_min_nonlinearity_empty_library(rng):
    d = Dictionary(2)
    ds = synthetic_dataset(d, np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2), 8, rng)
    res = synth_min_nonlinearity(build_matrices(ds, d))
    assert res.feasible and res.objective_value == 0.0


def test_taylor_remainder_zero_delta_reduces(manip_dm):
    res0 = synth_taylor_remainder(manip_dm, np.zeros((4, 4)))
    res1 = synth_taylor_baseline(manip_dm)
    assert res0.feasible == res1.feasible
    assert np.max(np.real(np.linalg.eigvals(res0.M))) < 0


def test_taylor_remainder_oversized_delta_infeasible(manip_dm):
    res = synth_taylor_remainder(manip_dm, 100.0 * np.eye(4))
    assert not res.feasible


# -- extended, noisy, remainder, annihilator ------------------------------------


def test_extended_cstr_both_widths(rng):
    ext = input_extended(builtin_plant("cstr"))
    ds = run_experiment(ext, UniformInput(-0.1, 0.1, seed=21), rng.uniform(-0.1, 0.1, 3), T=10, dt=0.05)
    edm = build_extended(ds, ext.dictionary)
    res_narrow = synth_extended(edm, JacobianBound(np.diag([0.1, 0.0, 0.1])))
    res_wide = synth_extended(edm, JacobianBound(np.diag([0.2, 0.0, 0.2])))
    assert res_narrow.feasible and res_wide.feasible
    assert np.linalg.norm((ext.A + ext.B @ res_narrow.K) - edm.Xi1 @ res_narrow.G) <= 1e-6
    # the wider box needs larger coefficients (order 1e3 in the reference run)
    assert np.abs(res_wide.K).max() > np.abs(res_narrow.K).max()


def test_extended_linear_plant(rng):
    d2 = Dictionary(2)
    lin = Plant.from_factorization("lin", d2, np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[0.0], [1.0]]))
    ext = input_extended(lin, Dictionary(3), np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0, 0, 0]]), np.array([[0.0], [0.0], [1.0]]))
    ds = run_experiment(ext, UniformInput(-1, 1, seed=8), rng.uniform(-1, 1, 3), T=9, dt=0.05)
    edm = build_extended(ds, ext.dictionary)
    res = synth_extended(edm, JacobianBound(np.zeros((3, 0))))
    assert res.feasible
    assert np.max(np.real(np.linalg.eigvals(res.M))) < 0


def test_noisy_zero_delta_matches_clean_feasibility(manip_dm, manip_design):
    noise = NoiseModel(np.zeros((4, 4)))
    res = synth_noisy(manip_dm, JacobianBound(np.diag([1.0, 0, 0, 0])), noise)
    assert res.feasible == manip_design.feasible


def test_noisy_large_delta_infeasible(manip_dm):
    noise = NoiseModel.pointwise(10.0, manip_dm.T, 4)
    res = synth_noisy(manip_dm, JacobianBound(np.diag([1.0, 0, 0, 0])), noise)
    assert not res.feasible
    assert res.diagnosis is not None


def test_remainder_reduces_when_absent(manip_dm, manip_design):
    res = synth_remainder(
        manip_dm, JacobianBound(np.diag([1.0, 0, 0, 0])), JacobianBound(np.zeros((4, 1))),
        NoiseModel(np.zeros((4, 4))),
    )
    # with R_D = 0 the extra identity border still charges +I; feasibility may
    # only shrink relative to the plain program, never grow
    assert (not res.feasible) or manip_design.feasible


def test_remainder_requires_bound(manip_dm):
    with pytest.raises(SynthesisError, match="R_D"):
        synth_remainder(
            manip_dm, JacobianBound(np.diag([1.0, 0, 0, 0])), None, NoiseModel(np.zeros((4, 4)))
        )


def test_remainder_two_state_toy_with_truth_certificate(rng):
    # library keeps x1^2; an unmodeled eps*sin(x1) acts as the remainder
    eps = 0.3
    d = Dictionary(2, (BasisFunction.monomial({0: 2}),))
    T = 12
    X = rng.uniform(-1, 1, (T, 2))
    U = rng.uniform(-2, 2, (T, 1))
    A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    rem = np.stack([np.zeros(T), eps * np.sin(X[:, 0])], axis=1)
    ds = ExperimentDataset(0.05 * np.arange(T), X, U, eval_Z(d, X) @ A.T + U @ B.T + rem)
    dm = build_matrices(ds, d)
    D0 = rem.T
    noise = NoiseModel(np.diag([0.0, np.linalg.norm(D0[1]) * 1.02]))
    res = synth_remainder(
        dm, JacobianBound(np.diag([2.0, 0.0])), JacobianBound(np.diag([eps * 1.05, 0.0])), noise
    )
    assert res.feasible
    # ground-truth certificate with the remainder Jacobian included
    Pinv = res.P_inv
    Xs = rng.uniform(-1, 1, (4000, 2))
    dZ = jac_Z(d, Xs)
    J = np.einsum("ij,njk->nik", (dm.X1 - D0) @ res.G, dZ)
    J[:, 1, 0] += eps * np.cos(Xs[:, 0])
    S = np.einsum("ij,njk->nik", Pinv, J)
    S = S + np.swapaxes(S, 1, 2) + res.beta * Pinv
    assert np.linalg.eigvalsh(S)[:, -1].max() <= 1e-7


def test_remainder_gravity_sized_term_is_infeasible(manip, rng):
    # regression: dropping the whole cosine term leaves a remainder whose
    # sample energy rivals the dynamics; the program correctly reports
    # infeasibility instead of pretending robustness
    d = Dictionary(4)
    ds = run_experiment(manip, UniformInput(-3, 3, seed=77), rng.uniform(-2, 2, 4), T=20, dt=0.1)
    dm = build_matrices(ds, d)
    D0 = np.zeros((4, 20))
    D0[1] = -1.96 * np.cos(ds.x[:, 0])
    noise = NoiseModel(np.diag([0.0, np.linalg.norm(D0[1]) * 1.02, 0.0, 0.0]))
    RD = np.diag([1.96 * np.sin(0.3) * 1.05, 0, 0, 0])
    res = synth_remainder(dm, JacobianBound(np.zeros((4, 1))), JacobianBound(RD), noise)
    assert not res.feasible


def test_known_freq_constant_disturbance_identity(manip, manip_dict, rng):
    exo = ExoModel.constant(rng.uniform(-1, 1, 4))
    ds = run_experiment(
        manip, UniformInput(-0.1, 0.1, seed=13), rng.uniform(-0.1, 0.1, 4),
        T=10, dt=0.05, disturbance=exo,
    )
    dm = build_matrices(ds, manip_dict)
    W = build_annihilator(ds.times, 0, (), 1)
    res = synth_known_freq(dm, bound_jacobian(manip_dict, BoxSet.full(4)), W)
    assert res.feasible
    A, B = manip.factorization_in(manip_dict)
    assert np.linalg.norm((A + B @ res.K) - dm.X1 @ res.G) <= 1e-6
    # the annihilator itself is honored exactly
    assert np.max(np.abs(W.reduced() @ np.hstack([res.Y1, res.G2]))) <= 1e-9


def test_known_freq_without_disturbance_is_sound(manip, manip_dict, manip_dm):
    W = build_annihilator(0.05 * np.arange(10), 0, (), 1)
    res = synth_known_freq(manip_dm, bound_jacobian(manip_dict, BoxSet.full(4)), W)
    if res.feasible:  # the constraint only restricts the decision set
        A, B = manip.factorization_in(manip_dict)
        assert np.linalg.norm((A + B @ res.K) - manip_dm.X1 @ res.G) <= 1e-6


def test_known_freq_single_frequency_toy(rng):
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
    assert np.linalg.norm((A + B @ res.K) - dm.X1 @ res.G) <= 1e-6
