"""Command-line entry point.

Subcommands: synth-data, train, plan, guide, eval, verify-duality, bench.
Every output directory receives exactly one manifest.json recording the
resolved configuration, the seed, and per-phase wall-clock timings; rerunning
a subcommand with the same arguments reproduces every other output file
byte for byte.

Exit codes: 0 ok, 2 input error, 3 no feasible plan, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _accel, dataio
from .dynamics import AugmentedState, VelocityChannels
from .errors import (
    DegenerateWeights,
    FactorizationFailure,
    NoFeasiblePath,
    NonFiniteObjective,
    UnreachableGoal,
)
from .inference_oracle import duality_residuals
from .lvm import BackConstraintSpec, LatentModel, MotionDataset, TrainConfig, train
from .multiscale import LevelSchedule, cascade
from .planner import Plan, PlannerConfig, plan
from .svg_plot import plan_svg
from .synth_data import GeneratorSpec, generate
from .tasks import KinematicChain, Task

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


class _Manifest:
    def __init__(self, subcommand: str, args: argparse.Namespace, seed):
        self.payload = {
            "subcommand": subcommand,
            "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "seed": seed,
            "git_describe": _git_describe(),
            "package_version": __version__,
            "timings_s": {},
        }
        self._t0 = time.perf_counter()
        self._phase = None
        self._phase_t0 = None

    def phase(self, name: str):
        now = time.perf_counter()
        if self._phase is not None:
            self.payload["timings_s"][self._phase] = round(now - self._phase_t0, 6)
        self._phase, self._phase_t0 = name, now

    def write(self, out_dir: Path):
        self.phase(None)
        self.payload["timings_s"]["total"] = round(time.perf_counter() - self._t0, 6)
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(self.payload, fh, indent=2, default=str)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path, frame_rate) -> MotionDataset:
    observations, starts, phase, names = dataio.dataset_from_csv(path)
    return MotionDataset(
        observations=observations,
        sequence_starts=tuple(starts),
        phase=phase,
        frame_rate=frame_rate,
        channel_names=tuple(names),
    )


def _chain_from_task_file(path) -> KinematicChain | None:
    with open(path) as fh:
        raw = json.load(fh)
    if not raw.get("chain"):
        return None
    c = raw["chain"]
    return KinematicChain(
        link_lengths=tuple(c["link_lengths"]),
        joint_channels=tuple(c["joint_channels"]),
        root_height_channel=c.get("root_height_channel"),
    )


def _start_state(model: LatentModel, task: Task) -> AugmentedState:
    g = np.asarray(task.start_pose, dtype=float) if task.start_pose is not None else None
    x0 = model.latent[task.start_latent_index % model.n_frames]
    return AugmentedState(latent=x0, global_pose=g)


def _write_trajectory_csv(path, plan_result: Plan, latent_dim: int, obs_dim: int):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["step", "g_x", "g_y", "g_theta"]
        header += [f"x_{i}" for i in range(latent_dim)]
        header += [f"y_{i}" for i in range(obs_dim)]
        header += ["cost", "delta"]
        writer.writerow(header)
        k_steps = plan_result.latents.shape[0]
        for k in range(k_steps):
            g = plan_result.globals[k] if plan_result.globals is not None else [np.nan] * 3
            row = [k + 1] + [repr(float(v)) for v in g]
            row += [repr(float(v)) for v in plan_result.latents[k]]
            row += [repr(float(v)) for v in plan_result.poses[k]]
            row += [repr(float(plan_result.step_costs[k]))]
            row += [repr(float(plan_result.dp_scores[k]))]
            writer.writerow(row)


def cmd_synth_data(args) -> int:
    manifest = _Manifest("synth-data", args, args.seed)
    out = _out_dir(args)
    manifest.phase("generate")
    spec = GeneratorSpec(
        kind=args.kind,
        n_channels=args.channels,
        noise_std=args.noise,
        frames_per_cycle=args.frames_per_cycle,
        n_cycles=args.cycles,
        turn_amplitude=args.turn_amplitude,
        turn_levels=args.turn_levels,
        seed=args.seed,
        frame_rate=args.frame_rate,
    )
    data, truth = generate(spec)
    manifest.phase("write")
    seq_ids = np.zeros(data.n_frames, dtype=int)
    for i, s in enumerate(data.sequence_starts):
        seq_ids[s:] = i
    dataio.dataset_to_csv(
        out / "data.csv",
        data.observations,
        seq_ids,
        data.channel_names,
        phase=data.phase,
    )
    with open(out / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_0", "z_1", "phase", "gait_mix", "label", "speed"])
        for i in range(data.n_frames):
            writer.writerow(
                [repr(float(truth["latent"][i, 0])), repr(float(truth["latent"][i, 1])),
                 repr(float(truth["phase"][i])), repr(float(truth["gait_mix"][i])),
                 int(truth["labels"][i]), repr(float(truth["speed"][i]))]
            )
    manifest.write(out)
    return EXIT_OK


def _back_constraint_spec(name: str, latent_dim: int) -> BackConstraintSpec | None:
    if name == "none":
        return None
    if name == "rbf":
        return BackConstraintSpec(kinds=("rbf",) * latent_dim)
    if name == "periodic":
        if latent_dim < 3:
            raise ValueError("periodic back-constraints need latent_dim >= 3")
        kinds = ("rbf",) * (latent_dim - 2) + ("periodic-cos", "periodic-sin")
        return BackConstraintSpec(kinds=kinds)
    raise ValueError(f"unknown back-constraint preset {name!r}")


def cmd_train(args) -> int:
    manifest = _Manifest("train", args, args.seed)
    out = _out_dir(args)
    manifest.phase("load")
    data = _load_dataset(args.data, args.frame_rate)
    spec = _back_constraint_spec(args.back_constraints, args.latent_dim)
    cfg = TrainConfig(
        latent_dim=args.latent_dim,
        iterations=args.iterations,
        back_constraints=spec,
        seed=args.seed,
    )
    manifest.phase("train")
    model, history = train(data, cfg)
    manifest.phase("write")
    model.save(out / "model.json")
    with open(out / "curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accepted_step", "objective"])
        for i, value in enumerate(history):
            writer.writerow([i, repr(float(value))])
    manifest.write(out)
    return EXIT_OK


def _schedule_from_args(args) -> LevelSchedule | None:
    if getattr(args, "multiscale", None):
        return LevelSchedule.parse(args.multiscale)
    return None


def cmd_plan(args) -> int:
    manifest = _Manifest("plan", args, args.seed)
    out = _out_dir(args)
    manifest.phase("load")
    model = LatentModel.load(args.model)
    task = Task.load(args.task)
    chain = _chain_from_task_file(args.task)
    start = _start_state(model, task)
    channels = VelocityChannels.from_names(model.channel_names)
    horizon = args.horizon or task.horizon

    guidance = None
    schedule = _schedule_from_args(args)
    if args.guidance:
        guidance = np.loadtxt(args.guidance, delimiter=",", ndmin=2)
    elif schedule is not None:
        manifest.phase("cascade")
        guidance = cascade(model, task, chain, start, schedule, horizon, args.seed + 7919,
                           channels=channels)

    manifest.phase("plan")
    cfg = PlannerConfig(
        particle_count=args.particles,
        horizon=horizon,
        seed=args.seed,
        guidance=guidance,
        record_trellis=args.svg,
    )
    result = plan(model, task, chain, start, cfg, channels=channels)
    manifest.phase("write")
    _write_trajectory_csv(out / "trajectory.csv", result, model.latent_dim, model.obs_dim)
    if guidance is not None:
        np.savetxt(out / "guidance.csv", guidance, delimiter=",")
    if args.svg:
        (out / "plan.svg").write_text(plan_svg(task, result))
    manifest.write(out)
    return EXIT_OK


def cmd_guide(args) -> int:
    manifest = _Manifest("guide", args, args.seed)
    out = _out_dir(args)
    manifest.phase("load")
    model = LatentModel.load(args.model)
    task = Task.load(args.task)
    chain = _chain_from_task_file(args.task)
    start = _start_state(model, task)
    channels = VelocityChannels.from_names(model.channel_names)
    schedule = LevelSchedule.parse(args.multiscale)
    horizon = args.horizon or task.horizon
    manifest.phase("cascade")
    control = cascade(model, task, chain, start, schedule, horizon, args.seed, channels=channels)
    manifest.phase("write")
    np.savetxt(out / "control.csv", control, delimiter=",")
    manifest.write(out)
    return EXIT_OK


def _eval_cell(model, task, chain, start, channels, case, seed):
    t0 = time.perf_counter()
    schedule = LevelSchedule.parse(case["schedule"]) if case.get("schedule") else None
    horizon = task.horizon
    n_particles = int(case["particles"])
    try:
        guidance = None
        if schedule is not None:
            guidance = cascade(model, task, chain, start, schedule, horizon, seed + 7919,
                               channels=channels)
        cfg = PlannerConfig(particle_count=n_particles, horizon=horizon, seed=seed, guidance=guidance)
        result = plan(model, task, chain, start, cfg, channels=channels)
        success = result.goal_reached_step is not None
        dp_ops = result.dp_ops
    except (NoFeasiblePath, DegenerateWeights):
        success = False
        dp_ops = n_particles**2 * horizon
    return success, time.perf_counter() - t0, dp_ops


def cmd_eval(args) -> int:
    manifest = _Manifest("eval", args, None)
    out = _out_dir(args)
    manifest.phase("load")
    with open(args.config) as fh:
        bench = json.load(fh)
    model = LatentModel.load(bench["model"])
    channels = VelocityChannels.from_names(model.channel_names)
    seeds = bench.get("seeds") or list(range(int(bench.get("n_seeds", 20))))
    envs = []
    for env in bench["environments"]:
        task = Task.from_dict(env["task"]) if isinstance(env.get("task"), dict) else Task.load(env["task"])
        chain = None
        if isinstance(env.get("task"), str):
            chain = _chain_from_task_file(env["task"])
        envs.append((env["name"], task, chain))

    manifest.phase("run")
    jobs = []
    for case in bench["cases"]:
        for env_name, task, chain in envs:
            start = _start_state(model, task)
            for seed in seeds:
                jobs.append((case, env_name, task, chain, start, int(seed)))

    max_workers = int(os.environ.get("LATENTPLAN_THREADS", "0")) or (os.cpu_count() or 1)
    results = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(_eval_cell, model, task, chain, start, channels, case, seed)
            for case, env_name, task, chain, start, seed in jobs
        ]
        for job, fut in zip(jobs, futures):
            results.append((job[0]["name"], job[1]) + fut.result())

    manifest.phase("write")
    table = {}
    for case_name, env_name, success, wall, dp_ops in results:
        cell = table.setdefault((case_name, env_name), [0, 0, 0.0, 0])
        cell[0] += int(success)
        cell[1] += 1
        cell[2] += wall
        cell[3] += dp_ops
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "env", "successes", "trials", "rate", "mean_wallclock_s", "mean_dp_ops"])
        for case in bench["cases"]:
            for env_name, _, _ in envs:
                s, t, wall, ops = table[(case["name"], env_name)]
                writer.writerow(
                    [case["name"], env_name, s, t, repr(s / t), f"{wall / t:.4f}", repr(ops / t)]
                )
    manifest.write(out)
    return EXIT_OK


def cmd_verify_duality(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst_pol = worst_val = 0.0
    for i in range(args.instances):
        n_states = int(rng.integers(2, 7))
        horizon = int(rng.integers(2, 6))
        pol_res, val_res = duality_residuals(rng, n_states, horizon)
        worst_pol = max(worst_pol, pol_res)
        worst_val = max(worst_val, val_res)
        print(f"instance {i:3d}  S={n_states} K={horizon}  "
              f"posterior-vs-chain {pol_res:.3e}  value-vs-enumeration {val_res:.3e}")
    print(f"max residuals: posterior {worst_pol:.3e}, value {worst_val:.3e}")
    return EXIT_OK if max(worst_pol, worst_val) < 1e-9 else EXIT_NUMERICAL


def cmd_bench(args) -> int:
    from ._accel import _build_numba, rbf_cross_np, transition_scores_np, viterbi_step_np

    rng = np.random.default_rng(0)
    P, N, d = args.particles, args.train_rows, 4
    A = rng.normal(size=(P, d))
    B = rng.normal(size=(N, d))
    x_new = rng.normal(size=(P, d))
    g_new = rng.normal(size=(P, 3))
    mu = rng.normal(size=(P, d))
    var = rng.uniform(0.1, 1.0, size=P)
    gvar = rng.uniform(0.1, 1.0, size=P)
    free = np.arange(d - 2, dtype=np.int64)
    delta = rng.normal(size=P)
    trans = rng.normal(size=(P, P))

    try:
        nb = _build_numba()
    except ImportError:
        nb = None
        print("numba unavailable; timing the numpy backend only")

    cases = [
        ("rbf_cross", lambda f: f(A, B, 1.0, 1.0), rbf_cross_np, nb[0] if nb else None),
        (
            "transition_scores",
            lambda f: f(x_new, g_new, mu, var, g_new, gvar, free),
            transition_scores_np,
            nb[1] if nb else None,
        ),
        ("viterbi_step", lambda f: f(delta, trans), viterbi_step_np, nb[2] if nb else None),
    ]
    rows = [("kernel", "numpy_ms", "numba_ms", "speedup")]
    for name, call, np_fn, nb_fn in cases:
        t_np = _time_call(lambda: call(np_fn), args.repeats)
        t_nb = _time_call(lambda: call(nb_fn), args.repeats) if nb_fn else float("nan")
        speed = f"{t_np / t_nb:.1f}x" if np.isfinite(t_nb) else "-"
        rows.append((name, f"{t_np * 1e3:.3f}", f"{t_nb * 1e3:.3f}", speed))
    widths = [max(len(str(r[i])) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    print(f"active backend: {_accel.backend_name()}")
    return EXIT_OK


def _time_call(fn, repeats: int) -> float:
    fn()  # warm up (and trigger any jit)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentplan", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic motion dataset")
    p.add_argument("--kind", default="two-gait",
                   choices=("circle", "lissajous", "two-gait", "turning"))
    p.add_argument("--channels", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--frames-per-cycle", type=int, default=72)
    p.add_argument("--cycles", type=int, default=2)
    p.add_argument("--turn-amplitude", type=float, default=0.0)
    p.add_argument("--turn-levels", type=int, default=3)
    p.add_argument("--frame-rate", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the latent model on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--latent-dim", type=int, default=3)
    p.add_argument("--iterations", type=int, default=150)
    p.add_argument("--back-constraints", default="periodic", choices=("none", "rbf", "periodic"))
    p.add_argument("--frame-rate", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="plan a trajectory with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--particles", type=int, default=500)
    p.add_argument("--horizon", type=int, default=0, help="0 uses the task horizon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--guidance", default=None, help="control CSV to guide the proposal")
    p.add_argument("--multiscale", default=None, help='schedule "M:N,M:N,..." coarsest first')
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("guide", help="run the multiscale cascade only")
    p.add_argument("--model", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--multiscale", required=True)
    p.add_argument("--horizon", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_guide)

    p = sub.add_parser("eval", help="success-rate sweep over cases x environments x seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-duality", help="print control-as-inference residuals")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_duality)

    p = sub.add_parser("bench", help="time the hot kernels on both backends")
    p.add_argument("--particles", type=int, default=500)
    p.add_argument("--train-rows", type=int, default=300)
    p.add_argument("--repeats", type=int, default=20)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NoFeasiblePath, DegenerateWeights) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FactorizationFailure, NonFiniteObjective, UnreachableGoal) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
