import numpy as np
import pytest

from ddcontrol.datamat import (
    DataMatrices,
    build_annihilator,
    build_extended,
    build_integral,
    build_matrices,
)
from ddcontrol.dictionary import Dictionary
from ddcontrol.pipelines import manipulator_dataset
from ddcontrol.plants import (
    ExoModel,
    ExperimentDataset,
    UniformInput,
    builtin_plant,
    input_extended,
    run_experiment,
    run_integral_experiment,
)


def test_hand_computed_z0():
    d = Dictionary.from_json('{"n":1,"terms":["x1^2"]}')
    ds = ExperimentDataset(
        np.array([0.0, 1.0]), np.array([[1.0], [2.0]]), np.zeros((2, 1)), np.zeros((2, 1))
    )
    dm = build_matrices(ds, d)
    assert np.array_equal(dm.Z0, np.array([[1.0, 2.0], [1.0, 4.0]]))
    assert dm.rank_Z0 == 2
    assert np.array_equal(dm.X0, dm.Z0[:1])


def test_noise_free_identity(manip, manip_dict, manip_dm):
    A, B = manip.A, manip.B
    resid = manip_dm.X1 - A @ manip_dm.Z0 - B @ manip_dm.U0
    assert np.linalg.norm(resid) <= 1e-10


def test_duplicate_columns_flagged():
    d = Dictionary.from_json('{"n":2,"terms":["x1^2"]}')
    x = np.tile([[0.5, -0.5]], (4, 1))
    ds = ExperimentDataset(0.1 * np.arange(4), x, np.zeros((4, 1)), np.zeros((4, 2)))
    dm = build_matrices(ds, d)
    assert dm.rank_Z0 < dm.s
    assert any("rank" in w for w in dm.warnings)


def test_too_few_samples_warn():
    d = Dictionary.from_json('{"n":2,"terms":["x1^2","x1^3","sin(x1)"]}')
    ds = ExperimentDataset(
        np.arange(3.0), np.random.default_rng(0).uniform(-1, 1, (3, 2)),
        np.zeros((3, 1)), np.zeros((3, 2)),
    )
    dm = build_matrices(ds, d)
    assert any("cannot have full row rank" in w for w in dm.warnings)


def test_diagnostics_table_mentions_rank(manip_dm):
    table = manip_dm.diagnostics_table()
    assert "rank" in table and "Z0" in table


def test_json_round_trip(manip_dm):
    back = DataMatrices.from_json_dict(manip_dm.to_json_dict())
    for name in ("U0", "X0", "X1", "Z0"):
        assert np.allclose(getattr(back, name), getattr(manip_dm, name))
    assert back.rank_Z0 == manip_dm.rank_Z0


# -- annihilator --------------------------------------------------------------


def test_annihilator_constant_is_ones():
    W = build_annihilator(np.linspace(0, 1, 9), 0, (), 1)
    assert np.array_equal(W.W, np.ones((1, 9)))
    assert np.array_equal(W.reduced(), np.ones((1, 9)))


def test_annihilator_quarter_period():
    W = build_annihilator([0.0, 0.25, 0.5], 1, [2 * np.pi], 0)
    assert np.allclose(W.W, [[1, 0, -1], [0, 1, 0]], atol=1e-12)


def test_annihilator_null_space_oracle(rng):
    times = np.sort(rng.uniform(0, 5, 12))
    W = build_annihilator(times, 2, [0.9, 2.3], 1)
    # SVD null-space oracle: W annihilates exactly its kernel
    _, _, Vt = np.linalg.svd(W.W)
    G = Vt[W.W.shape[0] :].T
    assert np.max(np.abs(W.W @ G)) <= 1e-10


def test_annihilator_column_permutation_covariance(rng):
    times = np.sort(rng.uniform(0, 3, 8))
    perm = rng.permutation(8)
    W1 = build_annihilator(times, 1, [1.7], 1)
    W2 = build_annihilator(times[perm], 1, [1.7], 1)
    assert np.allclose(W1.W[:, perm], W2.W)


def test_annihilator_errors():
    with pytest.raises(ValueError, match="no disturbance model"):
        build_annihilator([0.0, 1.0], 0, (), 0)
    with pytest.raises(ValueError):
        build_annihilator([0.0, 1.0], 2, [1.0], 0)
    with pytest.raises(ValueError):
        build_annihilator([0.0, 1.0], 2, [1.0, 1.0], 0)


def test_annihilator_reduced_drops_duplicate_ones():
    W = build_annihilator(np.linspace(0, 1, 10), 1, [2.0], 3)
    assert W.W.shape == (5, 10)
    assert W.reduced().shape == (3, 10)


def test_exosystem_decomposition_invariant(manip, manip_dict, rng):
    # X1 - A Z0 - B U0 equals E Phi W for exosystem-disturbed data
    Gamma = rng.normal(size=(4, 3)) * 0.2
    exo = ExoModel(1, 1, (0.8,), Gamma, rng.normal(size=3))
    ds = run_experiment(
        manip, UniformInput(-0.1, 0.1, seed=4), rng.uniform(-0.1, 0.1, 4),
        T=10, dt=0.05, disturbance=exo,
    )
    dm = build_matrices(ds, manip_dict)
    W = build_annihilator(ds.times, 1, [0.8], 1)
    lhs = dm.X1 - manip.A @ dm.Z0 - manip.B @ dm.U0
    rhs = np.eye(4) @ exo.Phi @ W.W
    assert np.max(np.abs(lhs - rhs)) <= 1e-8


# -- extended -----------------------------------------------------------------


def test_extended_identity_cstr(rng):
    ext = input_extended(builtin_plant("cstr"))
    ds = run_experiment(ext, UniformInput(-0.1, 0.1, seed=21), rng.uniform(-0.1, 0.1, 3), T=10, dt=0.05)
    edm = build_extended(ds, ext.dictionary)
    resid = edm.Xi1 - ext.A @ edm.Z0 - ext.B @ edm.V0
    assert np.linalg.norm(resid) <= 1e-10
    assert np.allclose(edm.Xi1[-1], edm.V0[0])


def test_extended_zero_input_at_equilibrium():
    ext = input_extended(builtin_plant("cstr"))
    ds = run_experiment(ext, np.zeros((5, 1)), np.zeros(3), T=5, dt=0.05)
    edm = build_extended(ds, ext.dictionary)
    assert np.allclose(edm.Xi1, 0.0)


def test_integral_bottom_rows_are_output(manip, manip_dict, rng):
    C = np.array([[1.0, 0, 0, 0, 0]])
    exo = ExoModel.constant([0.1, 0.2, 0.3, 0.4])
    ds = run_integral_experiment(
        manip, manip_dict, C, [np.pi / 3], UniformInput(-0.1, 0.1, seed=15),
        rng.uniform(-0.1, 0.1, 4), T=10, dt=0.05, disturbance=exo,
    )
    edm = build_integral(ds, manip_dict)
    assert np.allclose(edm.Z1[-1], ds.x[:, 0])  # y = x1
    assert edm.Z0.shape == (6, 10) and edm.Z1.shape == (5, 10)
    # the integral-mode data identity with the unknown constant disturbance
    Acal = np.block([[manip.A[:, :4], np.zeros((4, 1)), manip.A[:, 4:]], [C[:, :4], 0.0, C[:, 4:]]])
    Bcal = np.vstack([manip.B, np.zeros((1, 1))])
    Ecal = np.vstack([np.eye(4), np.zeros((1, 4))])
    resid = edm.Z1 - Acal @ edm.Z0 - Bcal @ edm.U0 - Ecal @ np.outer([0.1, 0.2, 0.3, 0.4], np.ones(10))
    assert np.max(np.abs(resid)) <= 1e-10


def test_integral_requires_channels(manip_dict):
    ds = ExperimentDataset(
        np.arange(4.0), np.zeros((4, 4)), np.zeros((4, 1)), np.zeros((4, 4))
    )
    with pytest.raises(ValueError, match="needs recorded y and xi"):
        build_integral(ds, manip_dict)


def test_extended_requires_matching_dictionary(manip_dict):
    ds = manipulator_dataset()
    with pytest.raises(ValueError):
        build_extended(ds, Dictionary(3, ()))
