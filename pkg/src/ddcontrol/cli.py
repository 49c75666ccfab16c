"""Command-line front end: experiments, synthesis, certification, reproduction.

Exit codes are a stable CI contract: 0 success, 1 configuration/usage error,
2 infeasible program, 3 numerical solver failure, 4 certification failure.
DDCONTROL_MAX_ITER caps the interior-point iteration count.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from ddcontrol.certify import certify_contraction, estimate_roa
from ddcontrol.datamat import build_annihilator, build_extended, build_integral, build_matrices
from ddcontrol.dictionary import BoxSet, Dictionary, JacobianBound, bound_jacobian
from ddcontrol.pipelines import run_study, study_names
from ddcontrol.plants import (
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
from ddcontrol.svgplot import svg_line_chart, svg_roa_plot
from ddcontrol import synthesis as syn
from ddcontrol.synthesis import NoiseModel, SynthOptions, SynthesisResult

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_CERTIFICATION = 4


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def _dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    return text


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path!r} does not exist")
    if p.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(p.read_text())
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})")


def _load_dictionary(spec) -> Dictionary:
    if isinstance(spec, str) and spec.strip().startswith("{"):
        return Dictionary.from_json(spec)
    if isinstance(spec, str):
        return Dictionary.from_json(json.loads(Path(spec).read_text()))
    return Dictionary.from_json(spec)


def _parse_box(spec, n) -> BoxSet:
    if spec is None:
        return BoxSet.full(n)
    box = BoxSet.from_bounds(spec)
    if box.dim != n:
        raise ConfigError(f"set has {box.dim} coordinates, expected {n}")
    return box


def _parse_input(text: str, seed) -> UniformInput:
    parts = text.split(":")
    if parts[0] != "uniform" or len(parts) != 3:
        raise ConfigError(f"unsupported input law {text!r} (expected uniform:lo:hi)")
    if seed is None:
        raise ConfigError("a seed is required for the uniform input law")
    return UniformInput(float(parts[1]), float(parts[2]), int(seed))


def _parse_disturbance(noise, exo, q, seed):
    if noise and exo:
        raise ConfigError("give either --noise or --exo, not both")
    if noise:
        parts = noise.split(":")
        if parts[0] != "bounded" or len(parts) not in (2, 3):
            raise ConfigError(f"unsupported noise spec {noise!r} (expected bounded:delta[:seed])")
        nseed = int(parts[2]) if len(parts) == 3 else (seed or 0)
        return BoundedNoise(float(parts[1]), q, nseed)
    if exo:
        parts = exo.split(":")
        if parts[0] == "const":
            if parts[1].startswith("q="):
                qq = int(parts[1][2:])
                mags = np.random.default_rng(seed or 0).uniform(-1.0, 1.0, qq)
            else:
                mags = np.array([float(v) for v in parts[1].split(",")])
            return ExoModel.constant(mags)
        if parts[0] == "sin" and len(parts) == 3:
            freq = float(parts[1])
            amps = np.array([float(v) for v in parts[2].split(",")])
            qq = len(amps)
            Gamma = np.zeros((qq, 2))
            Gamma[:, 0] = amps
            return ExoModel(1, 0, (freq,), Gamma, np.array([1.0, 0.0]))
        raise ConfigError(f"unsupported exo spec {exo!r} (expected const:... or sin:freq:amps)")
    return None


def _options_from(cfg: dict) -> SynthOptions:
    opts = SynthOptions(**cfg.get("options", {}))
    env_cap = os.environ.get("DDCONTROL_MAX_ITER")
    if env_cap:
        opts.max_iter = int(env_cap)
    return opts


@click.group()
def cli():
    """Data-driven synthesis and certification of contractive controllers."""


@cli.command()
@click.option("--plant", required=True, help="builtin plant name")
@click.option("--T", "t_samples", type=int, default=10, show_default=True)
@click.option("--dt", type=float, default=0.05, show_default=True)
@click.option("--input", "input_law", default="uniform:-0.1:0.1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="input-law seed")
@click.option("--x0", default=None, help="comma-separated initial state (default: zero)")
@click.option("--x0-seed", type=int, default=None, help="draw x0 uniformly from the input range")
@click.option("--noise", default=None, help="bounded:delta[:seed]")
@click.option("--exo", default=None, help="const:v1,v2,... | const:q=N | sin:freq:amps")
@click.option("--out", "-o", default="dataset.csv", show_default=True)
def experiment(plant, t_samples, dt, input_law, seed, x0, x0_seed, noise, exo, out):
    """Run an open-loop experiment and write the dataset CSV + sidecar."""
    try:
        pl = builtin_plant(plant)
    except ValueError as exc:
        raise ConfigError(str(exc))
    law = _parse_input(input_law, seed)
    if x0 is not None:
        x0v = np.array([float(v) for v in x0.split(",")])
    elif x0_seed is not None:
        x0v = np.random.default_rng(x0_seed).uniform(law.lo, law.hi, pl.n)
    else:
        x0v = np.zeros(pl.n)
    dist = _parse_disturbance(noise, exo, pl.n, seed)
    ds = run_experiment(pl, law, x0v, T=t_samples, dt=dt, disturbance=dist)
    ds.to_csv(out)
    click.echo(f"wrote {out} ({ds.T} samples) and {Path(out).with_suffix('.json')}")
    sys.exit(EXIT_OK)


def _build_experiment(cfg: dict, plant, dictionary):
    exp = cfg.get("experiment", {})
    law = _parse_input(exp.get("input", "uniform:-0.1:0.1"), exp.get("input_seed", exp.get("seed", 0)))
    if exp.get("x0") is not None:
        x0 = np.asarray(exp["x0"], dtype=float)
    else:
        rng = np.random.default_rng(exp.get("x0_seed", 0))
        rad = float(exp.get("x0_range", max(abs(law.lo), abs(law.hi))))
        x0 = rng.uniform(-rad, rad, plant.n)
    dist = _parse_disturbance(exp.get("noise"), exp.get("exo"), plant.n, exp.get("seed"))
    T = int(exp.get("T", 10))
    dt = float(exp.get("dt", 0.05))
    mode = cfg.get("mode", "contractive")
    if mode == "integral":
        params = cfg.get("params", {})
        C = np.asarray(params["C"], dtype=float)
        r = np.asarray(params["r"], dtype=float)
        d_const = params.get("d")
        dist = ExoModel.constant(d_const) if d_const is not None else dist
        ds = run_integral_experiment(plant, dictionary, C, r, law, x0, T=T, dt=dt, disturbance=dist)
    else:
        ds = run_experiment(plant, law, x0, T=T, dt=dt, disturbance=dist)
    return ds, dist


def _growth_bound(cfg, dictionary, box, rows):
    params = cfg.get("params", {})
    if "R_Q" in params:
        return JacobianBound(np.asarray(params["R_Q"], dtype=float))
    if "R_Q_diag" in params:
        return JacobianBound(np.diag(np.asarray(params["R_Q_diag"], dtype=float)))
    return bound_jacobian(dictionary, box)


def _dispatch_mode(cfg, dm, dictionary, box, opts, ds):
    mode = cfg.get("mode", "contractive")
    params = cfg.get("params", {})
    if mode == "contractive":
        return syn.synth_contractive(dm, _growth_bound(cfg, dictionary, box, dm.n), opts)
    if mode == "general":
        return syn.synth_general_nonlin(
            dm, np.asarray(params["W"], dtype=float), np.asarray(params["R"], dtype=float),
            np.asarray(params["S"], dtype=float), opts,
        )
    if mode == "monotone":
        return syn.synth_monotone(dm, np.asarray(params["S"], dtype=float), opts, check_set=box)
    if mode == "hull":
        verts = [np.asarray(v, dtype=float) for v in params["vertices"]]
        return syn.synth_convex_hull(dm, verts, float(params["beta"]), opts)
    if mode == "taylor":
        return syn.synth_taylor_baseline(dm, opts)
    if mode == "min-nonlin":
        return syn.synth_min_nonlinearity(dm, opts)
    if mode == "taylor-remainder":
        return syn.synth_taylor_remainder(dm, np.asarray(params["Delta"], dtype=float), opts)
    if mode == "noisy":
        if "Delta" in params:
            noise = NoiseModel(np.asarray(params["Delta"], dtype=float),
                               np.asarray(params["E"], dtype=float) if "E" in params else None)
        else:
            noise = NoiseModel.pointwise(float(params["delta"]), dm.T, int(params.get("q", dm.n)),
                                         np.asarray(params["E"], dtype=float) if "E" in params else None)
        return syn.synth_noisy(dm, _growth_bound(cfg, dictionary, box, dm.n), noise, opts)
    if mode == "remainder":
        noise = NoiseModel(np.asarray(params["Delta"], dtype=float))
        bound_D = JacobianBound(np.asarray(params["R_D"], dtype=float))
        return syn.synth_remainder(dm, _growth_bound(cfg, dictionary, box, dm.n), bound_D, noise, opts)
    if mode == "known-freq":
        W = build_annihilator(
            ds.times, int(params.get("sigma1", 0)), params.get("frequencies", []),
            int(params.get("sigma2", 1)),
        )
        return syn.synth_known_freq(dm, _growth_bound(cfg, dictionary, box, dm.n), W, opts)
    raise ConfigError(f"unknown mode {cfg.get('mode')!r}")


@cli.command()
@click.option("--config", "config_path", required=True, help="JSON or TOML run configuration")
@click.option("--out", "-o", default=None, help="result JSON path (overrides config 'output')")
def synthesize(config_path, out):
    """Run the experiment -> matrices -> synthesis pipeline from a config."""
    cfg = _load_config(config_path)
    mode = cfg.get("mode", "contractive")
    opts = _options_from(cfg)
    dictionary = None
    if "dictionary" in cfg:
        dictionary = _load_dictionary(cfg["dictionary"])

    if mode == "extended":
        plant = input_extended(builtin_plant(cfg["plant"]))
        dictionary = dictionary or plant.dictionary
        if dictionary is None:
            raise ConfigError("extended mode needs a dictionary over the extended state")
        ds, _ = _build_experiment(cfg, plant, dictionary)
        edm = build_extended(ds, dictionary)
        box = _parse_box(cfg.get("set"), dictionary.n)
        res = syn.synth_extended(edm, _growth_bound(cfg, dictionary, box, edm.n_state), opts)
    elif mode == "integral":
        if dictionary is None:
            raise ConfigError("config needs a 'dictionary' entry")
        plant = builtin_plant(cfg["plant"])
        ds, _ = _build_experiment(cfg, plant, dictionary)
        edm = build_integral(ds, dictionary)
        box = _parse_box(cfg.get("set"), dictionary.n)
        res = syn.synth_integral(edm, _growth_bound(cfg, dictionary, box, dictionary.n), opts)
    else:
        if dictionary is None:
            raise ConfigError("config needs a 'dictionary' entry")
        if "dataset" in cfg:
            ds = ExperimentDataset.from_csv(cfg["dataset"])
        else:
            plant = builtin_plant(cfg["plant"])
            ds, _ = _build_experiment(cfg, plant, dictionary)
        if dictionary.n != ds.n:
            raise ConfigError("dictionary dimension does not match the dataset")
        dm = build_matrices(ds, dictionary)
        box = _parse_box(cfg.get("set"), dictionary.n)
        res = _dispatch_mode(cfg, dm, dictionary, box, opts, ds)

    out_path = out or cfg.get("output", "result.json")
    Path(out_path).write_text(res.to_json() + "\n")
    click.echo(f"mode={res.mode} feasible={res.feasible}")
    if res.feasible:
        click.echo(
            f"alpha={res.alpha:.6g} beta={res.beta:.6g} |K|={np.abs(res.K).max():.6g} "
            f"eq_residual={res.report.residual_eq:.2e} block_violation={res.report.worst_block_violation:.2e}"
        )
        click.echo(f"wrote {out_path}")
        sys.exit(EXIT_OK)
    click.echo(f"diagnosis: {res.diagnosis}")
    click.echo(f"wrote {out_path}")
    sys.exit(EXIT_INFEASIBLE if res.report.status == "infeasible" else EXIT_NUMERICAL)


@cli.command()
@click.option("--result", "result_path", required=True, help="synthesis result JSON")
@click.option("--dictionary", "dict_spec", required=True)
@click.option("--set", "set_spec", default=None, help="JSON list of [lo,hi] or null per coordinate")
@click.option("--samples", type=int, default=10_000, show_default=True)
@click.option("--tol", type=float, default=1e-7, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-aug", type=int, default=0, help="augmented (integrator) states")
@click.option("--out", "-o", default=None, help="certificate JSON path")
def certify(result_path, dict_spec, set_spec, samples, tol, seed, n_aug, out):
    """Sampled contraction certificate for a stored synthesis result."""
    res = SynthesisResult.from_json_dict(json.loads(Path(result_path).read_text()))
    if not res.feasible:
        raise ConfigError("stored result is infeasible; nothing to certify")
    d = _load_dictionary(dict_spec)
    box = _parse_box(json.loads(set_spec) if isinstance(set_spec, str) else set_spec, d.n + n_aug)
    cert = certify_contraction(res, d, box, n_samples=samples, tol=tol, n_aug=n_aug, seed=seed)
    text = _dump_json(cert.to_json_dict(), out)
    click.echo(text if out is None else f"wrote {out}")
    click.echo(f"certificate: {'PASS' if cert.passed else 'FAIL'} worst={cert.worst:.3e} tol={tol:g}")
    sys.exit(EXIT_OK if cert.passed else EXIT_CERTIFICATION)


@cli.command()
@click.option("--plant", required=True)
@click.option("--result", "result_path", required=True)
@click.option("--dictionary", "dict_spec", required=True)
@click.option("--x0", required=True, help="comma-separated initial state")
@click.option("--horizon", type=float, default=20.0, show_default=True)
@click.option("--dt", type=float, default=2e-3, show_default=True)
@click.option("--C", "c_spec", default=None, help="integral mode: output matrix as JSON")
@click.option("--r", "r_spec", default=None, help="integral mode: reference as comma list")
@click.option("--d", "d_spec", default=None, help="constant disturbance as comma list")
@click.option("--out", "-o", default="trajectory.csv", show_default=True)
def simulate(plant, result_path, dict_spec, x0, horizon, dt, c_spec, r_spec, d_spec, out):
    """Simulate a stored controller on a builtin plant; write the CSV."""
    pl = builtin_plant(plant)
    res = SynthesisResult.from_json_dict(json.loads(Path(result_path).read_text()))
    if not res.feasible:
        raise ConfigError("stored result is infeasible; nothing to simulate")
    d = _load_dictionary(dict_spec)
    x0v = np.array([float(v) for v in x0.split(",")])
    dist = ExoModel.constant([float(v) for v in d_spec.split(",")]) if d_spec else None
    if res.mode == "integral":
        if c_spec is None or r_spec is None:
            raise ConfigError("integral results need --C and --r")
        C = np.asarray(json.loads(c_spec), dtype=float)
        r = np.array([float(v) for v in r_spec.split(",")])
        ctrl = IntegralController(res.K, d, C, r)
    elif res.mode == "extended":
        pl = input_extended(pl)
        if x0v.shape[0] != pl.n:
            raise ConfigError(f"extended mode: x0 needs the {pl.n} extended-state entries")
        ctrl = StaticController(res.K, d)
    else:
        ctrl = StaticController(res.K, d)
    traj = simulate_closed_loop(pl, ctrl, x0v, horizon=horizon, dt=dt, disturbance=dist, record_every=10)
    traj.to_csv(out)
    click.echo(f"wrote {out} ({len(traj.times)} rows)")
    sys.exit(EXIT_OK)


def _write_study_artifacts(study, outdir: Path):
    outdir.mkdir(parents=True, exist_ok=True)
    _dump_json(
        {"name": study.name, "passed": study.passed, "summary": study.summary,
         "reference": study.reference},
        outdir / f"{study.name}.json",
    )
    (outdir / f"{study.name}.txt").write_text(study.table() + "\n")
    if study.name.startswith("surge-roa"):
        roa = study.objects["roa"]
        f = study.objects["field"]
        xg = np.linspace(roa.box.lo[0], roa.box.hi[0], 220)
        yg = np.linspace(roa.box.lo[1], roa.box.hi[1], 220)
        Xg, Yg = np.meshgrid(xg, yg, indexing="ij")
        pts = np.stack([Xg.ravel(), Yg.ravel()], axis=-1)
        diff = pts - roa.center
        vdot = 2.0 * np.einsum("ni,ij,nj->n", diff, roa.P_inv, f(pts))
        svg_roa_plot(
            outdir / f"{study.name}.svg", xg, yg, (vdot < 0).reshape(len(xg), len(yg)),
            P_inv=roa.P_inv, gamma=roa.gamma, center=roa.center,
            title=f"{study.name}: certified level {roa.gamma:.1f}",
        )
    if study.name == "integral-tracking" and "lib1" in study.objects.get("outcomes", {}):
        oc = study.objects["outcomes"]["lib1"]
        if "controller" in oc:
            plant = study.objects["plant"]
            x0 = np.random.default_rng(5).uniform(-1, 1, (6, 4))
            traj = simulate_closed_loop(
                plant, oc["controller"], x0, horizon=60.0, dt=4e-3,
                disturbance=study.objects["disturbance"], record_every=40,
            )
            series = [(f"x1 (run {i + 1})", traj.x[:, i, 0]) for i in range(x0.shape[0])]
            series.append(("reference", np.full(len(traj.times), study.objects["r_ref"][0])))
            svg_line_chart(
                outdir / "integral-tracking.svg", traj.times, series,
                title="integral loop: regulated output", xlabel="t [s]", ylabel="x1",
            )
    if study.name == "manipulator-convergence" and "base" in study.objects:
        base = study.objects["base"]
        res = base.objects["result"]
        plant = builtin_plant("manipulator")
        ctrl = StaticController(res.K, base.objects["dictionary"])
        x0 = np.random.default_rng(1).uniform(-1, 1, (6, 4))
        traj = simulate_closed_loop(plant, ctrl, x0, horizon=30.0, dt=2e-3, record_every=40)
        series = [(f"x1 (run {i + 1})", traj.x[:, i, 0]) for i in range(6)]
        svg_line_chart(
            outdir / "manipulator-convergence.svg", traj.times, series,
            title="closed-loop state response", xlabel="t [s]", ylabel="x1",
        )


@cli.command()
@click.argument("name")
@click.option("--outdir", default="reproduce_out", show_default=True)
def reproduce(name, outdir):
    """Re-run a named benchmark study (or 'all'); write reports and plots."""
    names = study_names() if name == "all" else [name]
    outp = Path(outdir)
    any_fail = False
    for nm in names:
        try:
            study = run_study(nm)
        except ValueError as exc:
            raise ConfigError(str(exc))
        _write_study_artifacts(study, outp)
        click.echo(study.table())
        click.echo("")
        any_fail = any_fail or not study.passed
    sys.exit(EXIT_CERTIFICATION if any_fail else EXIT_OK)


@cli.command("print-defaults")
def print_defaults():
    """Print the default synthesis options and a config template."""
    defaults = {
        "options": asdict(SynthOptions()),
        "config_template": {
            "mode": "contractive",
            "plant": "manipulator",
            "dictionary": {"n": 4, "terms": ["cos(x1)"]},
            "set": None,
            "experiment": {"T": 10, "dt": 0.05, "input": "uniform:-0.1:0.1",
                           "input_seed": 3, "x0_seed": 7},
            "params": {},
            "output": "result.json",
        },
        "exit_codes": {"ok": EXIT_OK, "config_error": EXIT_CONFIG,
                       "infeasible": EXIT_INFEASIBLE, "numerical_failure": EXIT_NUMERICAL,
                       "certification_failure": EXIT_CERTIFICATION},
        "env": {"DDCONTROL_MAX_ITER": "iteration cap for the interior-point solvers"},
    }
    click.echo(_dump_json(defaults))
    sys.exit(EXIT_OK)


def main():
    try:
        cli.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
