"""Golden reproduction studies with pinned seeds.

Each study runs one of the worked benchmark designs end to end (experiment,
matrices, synthesis, certification, simulation) and returns a Study with a
flat summary plus the intermediate objects.  The acceptance suite and the
``reproduce`` command both consume these, so the configurations live in
exactly one place.  Reference values quoted in summaries come from the
benchmark write-ups; exact gains are not reproducible (program solutions
are not unique), so comparisons target feasibility, certified quantities,
and closed-loop behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from ddcontrol.certify import (
    certify_contraction,
    certify_contraction_robust,
    check_contraction_envelope,
    check_convergent_behavior,
    check_tracking,
    closed_loop_field,
    estimate_roa,
    find_equilibrium,
)
from ddcontrol.datamat import build_annihilator, build_extended, build_integral, build_matrices
from ddcontrol.dictionary import BoxSet, Dictionary, JacobianBound, bound_jacobian
from ddcontrol.plants import (
    AffineController,
    BoundedNoise,
    ExoModel,
    ExperimentDataset,
    IntegralController,
    StaticController,
    UniformInput,
    builtin_plant,
    input_extended,
    run_experiment,
    run_integral_experiment,
    simulate_closed_loop,
)
from ddcontrol.synthesis import (
    NoiseModel,
    SynthOptions,
    synth_contractive,
    synth_extended,
    synth_integral,
    synth_known_freq,
    synth_noisy,
    synth_taylor_remainder,
)

__all__ = ["Study", "STUDIES", "run_study", "study_names"]


@dataclass
class Study:
    name: str
    passed: bool
    summary: dict
    reference: dict = field(default_factory=dict)
    objects: dict = field(default_factory=dict)

    def table(self) -> str:
        lines = [f"study: {self.name}  ->  {'PASS' if self.passed else 'FAIL'}"]
        width = max((len(k) for k in self.summary), default=0)
        for k, v in self.summary.items():
            ref = f"   [reference: {self.reference[k]}]" if k in self.reference else ""
            lines.append(f"  {k:<{width}} = {v}{ref}")
        return "\n".join(lines)


# -- shared experiment builders ---------------------------------------------

MANIP_DICT = '{"n":4,"terms":["cos(x1)"]}'
MANIP_DICT_WIDE = '{"n":4,"terms":["cos(x1)","x1^2","sin(x2)"]}'
MANIP_DICT_INT2 = '{"n":4,"terms":["cos(x1)","sin(x2)"]}'
SURGE_DICT = '{"n":2,"terms":["x1^2","x1^3"]}'
SURGE_DICT_WIDE = '{"n":2,"terms":["x1^2","x1^3","x2^2","x2^3"]}'

SURGE_K_REF = np.array([[472.8008, -26.7351, 0.9875, 0.1960]])
SURGE_PINV_REF = np.array([[7.1505, -0.3761], [-0.3761, 0.0335]])
SURGE_K2_REF = np.array([[418.8709, -37.8660, 0.5014, 0.3406, -0.0002, 0.0001]])
SURGE_PINV2_REF = np.array([[18.8524, -1.6006], [-1.6006, 0.1770]])

MANIP_CLOSED_REF = np.array(
    [
        [-0.0000, 1.0000, 0.0000, 0.0000, 0.0000],
        [-2.0000, -0.0000, 1.0000, -0.0000, -1.9600],
        [0.0000, 0.0000, 0.0000, 1.0000, -0.0000],
        [-24.8923, -102.1423, -53.6282, -12.2658, 0.0982],
    ]
)
MANIP_CLOSED2_REF = np.array(
    [
        [-0.0000, 1.0000, -0.0000, -0.0000, -0.0000, 0.0000, 0.0000],
        [-2.0000, 0.0000, 1.0000, 0.0000, -1.9600, 0.0000, 0.0000],
        [-0.0000, -0.0000, -0.0000, 1.0000, 0.0000, -0.0000, -0.0000],
        [-1069.1743, -1203.9634, -319.1524, -35.2523, 0.2666, -0.0001, 0.0000],
    ]
)
MANIP_XSTAR_REF = np.array([-0.6382, 0.0, 0.2977, 0.0])
MANIP_XSTAR2_REF = np.array([-0.3447, 0.0, 1.1554, 0.0])


def manipulator_dataset(seed_u: int = 3, seed_x0: int = 7) -> ExperimentDataset:
    plant = builtin_plant("manipulator")
    x0 = np.random.default_rng(seed_x0).uniform(-0.1, 0.1, 4)
    return run_experiment(plant, UniformInput(-0.1, 0.1, seed=seed_u), x0, T=10, dt=0.05)


def manipulator_rich_dataset(seed_u: int = 3, seed_x0: int = 103) -> ExperimentDataset:
    # the wide library needs more excitation to separate sin(x2) from x2
    plant = builtin_plant("manipulator")
    x0 = np.random.default_rng(seed_x0).uniform(-1.0, 1.0, 4)
    return run_experiment(plant, UniformInput(-1.0, 1.0, seed=seed_u), x0, T=10, dt=0.1)


def surge_dataset(seed_u: int = 11, seed_x0: int = 5) -> ExperimentDataset:
    plant = builtin_plant("surge")
    x0 = np.random.default_rng(seed_x0).uniform(-1.0, 1.0, 2)
    return run_experiment(plant, UniformInput(-1.0, 1.0, seed=seed_u), x0, T=10, dt=0.05)


# -- studies ------------------------------------------------------------------


def study_manipulator(opts: Optional[SynthOptions] = None) -> Study:
    """Base benchmark: flexible-joint arm, single-cosine library, global set."""
    plant = builtin_plant("manipulator")
    d = Dictionary.from_json(MANIP_DICT)
    box = BoxSet.full(4)
    ds = manipulator_dataset()
    dm = build_matrices(ds, d)
    res = synth_contractive(dm, bound_jacobian(d, box), opts)
    summary = {"feasible": res.feasible}
    objects = {"dataset": ds, "dm": dm, "result": res, "dictionary": d, "box": box}
    if not res.feasible:
        return Study("manipulator", False, summary, {"feasible": True}, objects)
    cert = certify_contraction(res, d, box, n_samples=10_000, tol=1e-7)
    A, B = plant.factorization_in(d)
    lemma = float(np.linalg.norm((A + B @ res.K) - dm.X1 @ res.G))
    x_star = find_equilibrium(res, d)
    summary.update(
        {
            "alpha": res.alpha,
            "beta": res.beta,
            "cert_worst": cert.worst,
            "cert_passed": cert.passed,
            "lemma_residual": lemma,
            "x_star": np.round(x_star, 6).tolist(),
            "gain_magnitude": float(np.abs(res.K).max()),
        }
    )
    objects.update({"certificate": cert, "x_star": x_star})
    passed = res.feasible and cert.passed and lemma <= 1e-6
    return Study("manipulator", passed, summary, {"feasible": True}, objects)


def study_manipulator_wide(opts: Optional[SynthOptions] = None) -> Study:
    """Wide library on the arm plus the box-width sweep up to w = 100."""
    d = Dictionary.from_json(MANIP_DICT_WIDE)
    ds = manipulator_rich_dataset()
    dm = build_matrices(ds, d)
    plant = builtin_plant("manipulator")
    A, B = plant.factorization_in(d)
    gains, feas, alphas = [], [], []
    widths = [1, 2, 5, 10, 20, 50, 100]
    results = {}
    for w in widths:
        box = BoxSet.from_bounds([[-w, w], None, None, None])
        r = synth_contractive(dm, bound_jacobian(d, box), opts)
        feas.append(bool(r.feasible))
        gains.append(float(np.abs(r.K[:, :4]).max()) if r.feasible else float("nan"))
        alphas.append(r.alpha)
        results[w] = r
    cert = None
    if results[1].feasible:
        box1 = BoxSet.from_bounds([[-1, 1], None, None, None])
        cert = certify_contraction(results[1], d, box1, n_samples=10_000, tol=1e-7)
    lemma = (
        float(np.linalg.norm((A + B @ results[1].K) - dm.X1 @ results[1].G))
        if results[1].feasible
        else float("nan")
    )
    monotone = all(g2 >= g1 * 0.95 for g1, g2 in zip(gains, gains[1:]))
    summary = {
        "widths": widths,
        "feasible": feas,
        "linear_gain_magnitude": [float(f"{g:.6g}") for g in gains],
        "gain_growth_monotone": monotone,
        "w1_cert_worst": None if cert is None else cert.worst,
        "w1_lemma_residual": lemma,
    }
    reference = {"feasible": "feasible up to w = 100", "linear_gain_magnitude": "grows with w"}
    passed = all(feas) and (cert is not None and cert.passed) and monotone
    return Study(
        "manipulator-wide",
        passed,
        summary,
        reference,
        {"dm": dm, "results": results, "certificate": cert, "dictionary": d, "dataset": ds},
    )


def _surge_study(name: str, dict_json: str, bounds, opts) -> Study:
    plant = builtin_plant("surge")
    d = Dictionary.from_json(dict_json)
    box = BoxSet.from_bounds(bounds)
    ds = surge_dataset()
    dm = build_matrices(ds, d)
    res = synth_contractive(dm, bound_jacobian(d, box), opts)
    summary = {"feasible": res.feasible}
    objects = {"dataset": ds, "dm": dm, "result": res, "dictionary": d, "box": box}
    if not res.feasible:
        return Study(name, False, summary, {"feasible": True}, objects)
    cert = certify_contraction(res, d, box, n_samples=10_000, tol=1e-7)
    A, B = plant.factorization_in(d)
    lemma = float(np.linalg.norm((A + B @ res.K) - dm.X1 @ res.G))
    x_star = find_equilibrium(res, d, sim_horizon=40.0)
    summary.update(
        {
            "alpha": res.alpha,
            "beta": res.beta,
            "cert_worst": cert.worst,
            "cert_passed": cert.passed,
            "lemma_residual": lemma,
            "x_star_norm": float(np.linalg.norm(x_star)),
        }
    )
    objects.update({"certificate": cert, "x_star": x_star})
    passed = res.feasible and cert.passed and lemma <= 1e-6 and np.linalg.norm(x_star) <= 1e-6
    return Study(name, passed, summary, {"feasible": True, "x_star_norm": 0.0}, objects)


def study_surge(opts: Optional[SynthOptions] = None) -> Study:
    """Axial-compressor surge subsystem with the quadratic/cubic library."""
    return _surge_study("surge", SURGE_DICT, [[-1, 1], None], opts)


def study_surge_more(opts: Optional[SynthOptions] = None) -> Study:
    """Surge with extra x2 library terms on a thin box."""
    return _surge_study("surge-more", SURGE_DICT_WIDE, [[-1, 1], [-0.1, 0.1]], opts)


def _surge_roa(name, K, Pinv, dict_json, box_bounds, grid, gamma_ref, gamma_min) -> Study:
    plant = builtin_plant("surge")
    d = Dictionary.from_json(dict_json)
    A_full, B = plant.factorization_in(d)
    Acl = A_full + B @ K
    f, _ = closed_loop_field(Acl, d)
    roa = estimate_roa(f, Pinv, np.zeros(2), BoxSet.from_bounds(box_bounds), grid=grid, r_excl=1e-3)
    summary = {
        "gamma": roa.gamma,
        "box_limited": roa.box_limited,
        "violations_sampled": roa.n_violations,
    }
    passed = roa.gamma >= gamma_min and not roa.box_limited
    return Study(
        name, passed, summary, {"gamma": gamma_ref},
        {"roa": roa, "field": f, "dictionary": d, "Acl": Acl},
    )


def study_surge_roa() -> Study:
    """Sub-level-set ROA for the published surge design (first library)."""
    return _surge_roa(
        "surge-roa", SURGE_K_REF, SURGE_PINV_REF, SURGE_DICT,
        [[-7, 7], [-95, 95]], (400, 400), 95.0, 90.0,
    )


def study_surge_roa_more() -> Study:
    """Sub-level-set ROA for the published surge design (wide library)."""
    return _surge_roa(
        "surge-roa-more", SURGE_K2_REF, SURGE_PINV2_REF, SURGE_DICT_WIDE,
        [[-6, 6], [-60, 60]], (400, 400), 75.0, 71.0,
    )


def study_cstr(opts: Optional[SynthOptions] = None) -> Study:
    """Stirred-tank reactor through the input-integrator extension."""
    ext = input_extended(builtin_plant("cstr"))
    x0 = np.random.default_rng(9).uniform(-0.1, 0.1, 3)
    ds = run_experiment(ext, UniformInput(-0.1, 0.1, seed=21), x0, T=10, dt=0.05)
    edm = build_extended(ds, ext.dictionary)
    res_narrow = synth_extended(edm, JacobianBound(np.diag([0.1, 0.0, 0.1])), opts)
    res_wide = synth_extended(edm, JacobianBound(np.diag([0.2, 0.0, 0.2])), opts)
    summary = {"feasible_w005": res_narrow.feasible, "feasible_w01": res_wide.feasible}
    objects = {"edm": edm, "result_w005": res_narrow, "result_w01": res_wide, "plant": ext, "dataset": ds}
    if not (res_narrow.feasible and res_wide.feasible):
        return Study("cstr", False, summary, {"feasible_w005": True, "feasible_w01": True}, objects)
    wbox = BoxSet.from_bounds([[-0.05, 0.05], None, [-0.05, 0.05]])
    cert = certify_contraction(res_narrow, ext.dictionary, wbox, n_samples=10_000, tol=1e-7)
    lemma = float(np.linalg.norm((ext.A + ext.B @ res_narrow.K) - edm.Xi1 @ res_narrow.G))
    summary.update(
        {
            "alpha_w005": res_narrow.alpha,
            "cert_worst": cert.worst,
            "cert_passed": cert.passed,
            "lemma_residual": lemma,
            "gain_magnitude_w01": float(np.abs(res_wide.K).max()),
        }
    )
    objects["certificate"] = cert
    reference = {
        "feasible_w005": True,
        "feasible_w01": True,
        "gain_magnitude_w01": "order 1e3",
    }
    passed = cert.passed and lemma <= 1e-6
    return Study("cstr", passed, summary, reference, objects)


def study_manipulator_equilibria() -> Study:
    """Equilibria of the two published arm closed loops, found independently."""
    d1 = Dictionary.from_json(MANIP_DICT)
    d2 = Dictionary.from_json(MANIP_DICT_WIDE)
    x1 = find_equilibrium(MANIP_CLOSED_REF, d1)
    x2 = find_equilibrium(MANIP_CLOSED2_REF, d2, sim_dt=5e-4)
    err1 = float(np.abs(x1 - MANIP_XSTAR_REF).max())
    err2 = float(np.abs(x2 - MANIP_XSTAR2_REF).max())
    summary = {
        "x_star_1": np.round(x1, 5).tolist(),
        "x_star_2": np.round(x2, 5).tolist(),
        "error_1": err1,
        "error_2": err2,
    }
    reference = {"x_star_1": MANIP_XSTAR_REF.tolist(), "x_star_2": MANIP_XSTAR2_REF.tolist()}
    return Study(
        "manipulator-equilibria", err1 <= 5e-3 and err2 <= 5e-3, summary, reference,
        {"x1": x1, "x2": x2},
    )


def study_convergence(opts: Optional[SynthOptions] = None) -> Study:
    """Unique-equilibrium convergence and the exponential pairwise envelope."""
    base = study_manipulator(opts)
    if not base.passed:
        return Study("manipulator-convergence", False, {"base_feasible": False}, {}, {})
    res = base.objects["result"]
    d = base.objects["dictionary"]
    plant = builtin_plant("manipulator")
    ctrl = StaticController(res.K, d)
    conv = check_convergent_behavior(plant, ctrl, trials=10, horizon=60.0, dt=2e-3, seed=1)
    x_star = base.objects["x_star"]
    eq_err = float(np.abs(np.asarray(conv["endpoint"]) - x_star).max())
    env = check_contraction_envelope(
        plant, ctrl, res.condition_factor, res.beta, trials=10, horizon=60.0, dt=2e-3, seed=1
    )
    summary = {
        "pairwise_gap": conv["max_tail_gap"],
        "converged": conv["passed"],
        "equilibrium_error": eq_err,
        "envelope_worst_excess": env["worst_excess"],
        "envelope_passed": env["passed"],
    }
    passed = conv["passed"] and eq_err <= 1e-5 and env["passed"]
    return Study(
        "manipulator-convergence", passed, summary, {},
        {"base": base, "convergence": conv, "envelope": env},
    )


def study_known_freq(opts: Optional[SynthOptions] = None) -> Study:
    """Constant disturbance of unknown magnitude rejected by the ones row."""
    plant = builtin_plant("manipulator")
    d = Dictionary.from_json(MANIP_DICT)
    rng = np.random.default_rng(33)
    exo = ExoModel.constant(rng.uniform(-1.0, 1.0, 4))
    ds = run_experiment(
        plant, UniformInput(-0.1, 0.1, seed=13), rng.uniform(-0.1, 0.1, 4),
        T=10, dt=0.05, disturbance=exo,
    )
    dm = build_matrices(ds, d)
    W = build_annihilator(ds.times, 0, (), 1)
    res = synth_known_freq(dm, bound_jacobian(d, BoxSet.full(4)), W, opts)
    summary = {"feasible": res.feasible}
    objects = {"dm": dm, "result": res, "exo": exo, "W": W, "dictionary": d}
    if not res.feasible:
        return Study("known-freq", False, summary, {"feasible": True}, objects)
    A, B = plant.factorization_in(d)
    lemma = float(np.linalg.norm((A + B @ res.K) - dm.X1 @ res.G))
    cert = certify_contraction(res, d, BoxSet.full(4), n_samples=10_000, tol=1e-7)
    summary.update(
        {"lemma_residual": lemma, "alpha": res.alpha, "cert_worst": cert.worst,
         "disturbance_magnitude": float(np.linalg.norm(exo.d(0.0)))}
    )
    objects["certificate"] = cert
    passed = lemma <= 1e-6 and cert.passed
    return Study("known-freq", passed, summary, {"lemma_residual": "0 (exact)"}, objects)


def study_noisy(opts: Optional[SynthOptions] = None) -> Study:
    """Bounded process noise during collection; Monte-Carlo robustness audit."""
    plant = builtin_plant("manipulator")
    d = Dictionary.from_json(MANIP_DICT)
    delta, T = 0.01, 20
    gen = BoundedNoise(delta, 4, seed=44)
    x0 = np.random.default_rng(34).uniform(-0.5, 0.5, 4)
    ds = run_experiment(plant, UniformInput(-1.0, 1.0, seed=14), x0, T=T, dt=0.1, disturbance=gen)
    dm = build_matrices(ds, d)
    noise = NoiseModel.pointwise(delta, T, 4)
    res = synth_noisy(dm, bound_jacobian(d, BoxSet.full(4)), noise, opts)
    summary = {"feasible": res.feasible, "delta": delta}
    objects = {"dm": dm, "result": res, "noise": noise, "dictionary": d, "dataset": ds}
    if not res.feasible:
        return Study("noisy", False, summary, {"feasible": True}, objects)
    D0 = ds.d.T
    in_ball = bool(np.linalg.eigvalsh(noise.Delta @ noise.Delta.T - D0 @ D0.T)[0] >= -1e-12)
    rob = certify_contraction_robust(
        res, d, BoxSet.full(4), noise, n_disturbances=100, n_samples=10_000, tol=1e-7
    )
    summary.update(
        {"alpha": res.alpha, "mu": res.mu, "samples_in_ball": in_ball,
         "robust_worst": rob["worst"], "robust_passed": rob["passed"]}
    )
    objects["robust"] = rob
    return Study("noisy", rob["passed"] and in_ball, summary, {"robust_passed": True}, objects)


def study_integral(opts: Optional[SynthOptions] = None, horizon: float = 150.0) -> Study:
    """Constant reference tracking and disturbance rejection, both libraries."""
    plant = builtin_plant("manipulator")
    r_ref = np.array([np.pi / 3])
    dist = ExoModel.constant([0.1, 0.2, 0.3, 0.4])
    outcomes = {}
    passed = True
    for tag, dict_json, urange, dt, seed in (
        ("lib1", MANIP_DICT, 0.1, 0.05, 15),
        ("lib2", MANIP_DICT_INT2, 0.5, 0.1, 16),
    ):
        d = Dictionary.from_json(dict_json)
        C = np.zeros((1, d.s))
        C[0, 0] = 1.0
        x0 = np.random.default_rng(seed).uniform(-urange, urange, 4)
        ds = run_integral_experiment(
            plant, d, C, r_ref, UniformInput(-urange, urange, seed=seed), x0,
            T=10, dt=dt, disturbance=dist,
        )
        edm = build_integral(ds, d)
        res = synth_integral(edm, bound_jacobian(d, BoxSet.full(4)), opts)
        entry = {"feasible": res.feasible}
        if res.feasible:
            ctrl = IntegralController(res.K, d, C, r_ref)
            track = check_tracking(
                plant, ctrl, trials=10, horizon=horizon, dt=4e-3,
                seed=5, disturbance=dist, tol=1e-3,
            )
            cert = certify_contraction(
                res, d, BoxSet.full(4), n_samples=10_000, tol=1e-7, n_aug=1, seed=2
            )
            entry.update(
                {"alpha": res.alpha, "max_tail_error": track["max_tail_error"],
                 "tracking_passed": track["passed"], "cert_worst": cert.worst,
                 "cert_passed": cert.passed}
            )
            outcomes[tag] = {"result": res, "tracking": track, "cert": cert,
                             "controller": ctrl, "edm": edm, "dictionary": d, "C": C}
            passed = passed and track["passed"] and cert.passed
        else:
            outcomes[tag] = {"result": res}
            passed = False
        outcomes[tag]["summary"] = entry
    summary = {tag: outcomes[tag]["summary"] for tag in outcomes}
    summary["r"] = float(r_ref[0])
    summary["d"] = [0.1, 0.2, 0.3, 0.4]
    return Study(
        "integral-tracking", passed, summary,
        {"lib1": "tracking error -> 0", "lib2": "tracking error -> 0"},
        {"outcomes": outcomes, "plant": plant, "disturbance": dist, "r_ref": r_ref},
    )


def study_integral_degenerate(opts: Optional[SynthOptions] = None) -> Study:
    """Row-rank-deficient output map: the program must come back infeasible."""
    plant = builtin_plant("manipulator")
    d = Dictionary.from_json(MANIP_DICT)
    C = np.array([[1.0, 0, 0, 0, 0], [2.0, 0, 0, 0, 0]])  # rank 1, p = 2
    dist = ExoModel.constant([0.1, 0.2, 0.3, 0.4])
    ds = run_integral_experiment(
        plant, d, C, [0.1, 0.2], UniformInput(-0.1, 0.1, seed=17),
        np.random.default_rng(17).uniform(-0.1, 0.1, 4), T=12, dt=0.05, disturbance=dist,
    )
    edm = build_integral(ds, d)
    res = synth_integral(edm, bound_jacobian(d, BoxSet.full(4)), opts)
    summary = {
        "feasible": res.feasible,
        "status": res.report.status,
        "diagnosis": res.diagnosis,
    }
    return Study(
        "integral-degenerate", not res.feasible and res.report.status == "infeasible",
        summary, {"feasible": False}, {"result": res},
    )


def study_taylor_remainder(opts: Optional[SynthOptions] = None) -> Study:
    """First-order robust design around a known arm equilibrium."""
    plant = builtin_plant("manipulator")
    x1s = -0.3447
    x3s = 2 * x1s + 1.96 * np.cos(x1s)
    us = (-(4.0 / 3.0) * x1s + (2.0 / 3.0) * x3s) * (3.0 / 20.0)
    x_star = np.array([x1s, 0.0, x3s, 0.0])
    u_star = np.array([us])
    rng = np.random.default_rng(101)
    x0 = x_star + rng.uniform(-0.05, 0.05, 4)
    useq = u_star + rng.uniform(-0.5, 0.5, (10, 1))
    ds = run_experiment(plant, useq, x0, T=10, dt=0.1)
    shifted = ExperimentDataset(ds.times, ds.x - x_star, ds.u - u_star, ds.xdot)
    dm = build_matrices(shifted, Dictionary(4))
    Delta = np.diag([0.0, 0.0197, 0.0, 0.0])
    # ground-truth remainder samples must sit inside the quadratic bound
    s1 = np.sin(x1s)
    A_lin = np.array([[0, 1, 0, 0], [-2 + 1.96 * s1, 0, 1, 0], [0, 0, 0, 1], [4 / 3, 0, -2 / 3, 0]])
    B_lin = np.array([[0.0], [0.0], [0.0], [20.0 / 3.0]])
    R0 = dm.X1 - A_lin @ dm.X0 - B_lin @ dm.U0
    in_ball = bool(np.linalg.eigvalsh(Delta @ Delta.T - R0 @ R0.T)[0] >= -1e-12)
    res = synth_taylor_remainder(dm, Delta, opts)
    summary = {"feasible": res.feasible, "u_star": float(us), "remainder_in_ball": in_ball}
    objects = {"dm": dm, "result": res, "x_star": x_star, "u_star": u_star}
    if not res.feasible:
        return Study("remainder-taylor", False, summary, {"feasible": True, "u_star": 0.1845}, objects)
    ctrl = AffineController(res.K, x_star, u_star)
    x0s = x_star + np.random.default_rng(7).uniform(-0.05, 0.05, (8, 4))
    traj = simulate_closed_loop(plant, ctrl, x0s, horizon=40.0, dt=2e-3, record_every=50)
    end_err = float(np.abs(traj.x[-1] - x_star).max())
    summary.update({"alpha": res.alpha, "endpoint_error": end_err, "K": np.round(res.K, 4).tolist()})
    objects.update({"controller": ctrl, "trajectory": traj})
    passed = in_ball and end_err <= 1e-6
    return Study("remainder-taylor", passed, summary, {"feasible": True, "u_star": 0.1845}, objects)


STUDIES: Dict[str, Callable[[], Study]] = {
    "manipulator": study_manipulator,
    "manipulator-wide": study_manipulator_wide,
    "manipulator-equilibria": study_manipulator_equilibria,
    "manipulator-convergence": study_convergence,
    "surge": study_surge,
    "surge-more": study_surge_more,
    "surge-roa": study_surge_roa,
    "surge-roa-more": study_surge_roa_more,
    "cstr": study_cstr,
    "known-freq": study_known_freq,
    "noisy": study_noisy,
    "integral-tracking": study_integral,
    "integral-degenerate": study_integral_degenerate,
    "remainder-taylor": study_taylor_remainder,
}


def study_names() -> list:
    return sorted(STUDIES)


def run_study(name: str) -> Study:
    try:
        fn = STUDIES[name]
    except KeyError:
        raise ValueError(f"unknown study {name!r}; available: {', '.join(study_names())}") from None
    return fn()
