"""Command-line harness: dataset generation, denoiser training, guided
generation, window ablations, and the controller x adapter evaluation grid.

Option precedence is flags > config file > built-in defaults; the config
file is flat `key=value` text whose keys mirror the long flag names. Every
subcommand is deterministic given --seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .adapter import AdapterConfig
from .denoisers import (
    AnalyticGaussianPrior,
    MlpTrainConfig,
    load_denoiser,
    save_denoiser,
    train_mlp_denoiser,
)
from .diffusion import ddim_subsequence, make_schedule, sample
from .metrics import (
    final_velocity_similarity,
    penetration_frames,
    smoothness,
    trajectory_rmse,
)
from .motion import (
    ConditionLabel,
    MotionFileError,
    TwoAgentMotion,
    default_skeleton,
    load_motion,
    load_trajectory,
    project_root_trajectory,
    save_motion,
)
from .pace import GuidanceWindow, PaceConfig, guided_sample
from .scenarios import (
    ScenarioKind,
    generate_scenario,
    generate_trajectory_condition,
    rest_pose,
)
from .svgplot import write_trajectory_svg

DATASET_MANIFEST = "manifest.json"


class CliError(Exception):
    """User-facing command failure; message printed to stderr, exit code 1."""


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    convert: type | object
    default: object
    help: str
    choices: tuple | None = None
    switch: bool = False  # presence-only CLI flag


GLOBAL_OPTS = [
    Opt("seed", int, 0, "base random seed"),
    Opt("out-dir", str, ".", "directory for outputs"),
    Opt("denoiser", str, "analytic", "analytic | checkpoint:<path>"),
    Opt("t-steps", int, 1000, "diffusion training steps T"),
    Opt("beta-min", float, 1e-4, "linear schedule start"),
    Opt("beta-max", float, 2e-2, "linear schedule end"),
    Opt("ddim-steps", int, 50, "DDIM transitions at sampling time"),
    Opt("sampler", str, "ddim", "reverse sampler", choices=("ddim", "posterior")),
    Opt("fps", float, 30.0, "output framerate"),
    Opt("prior-mean", str, "rest", "analytic prior mean", choices=("rest", "zero")),
    Opt("prior-length-scale", float, 10.0, "analytic prior temporal length scale (frames)"),
    Opt("prior-variance", float, 0.25, "analytic prior per-coordinate variance"),
]

PACE_OPTS = [
    Opt("window-start", float, 0.7, "guidance window start (fraction of T)"),
    Opt("window-end", float, 0.3, "guidance window end (fraction of T)"),
    Opt("grad-step", float, 0.5, "trajectory refinement step size"),
    Opt("grad-iters", int, 1, "trajectory refinement iterations per step"),
    Opt("inject-mode", str, "noised", "trajectory injection mode", choices=("noised", "raw")),
    Opt("target-agent", str, "a", "which agent the trajectory constrains", choices=("a", "b", "both")),
    Opt("no-controller", bool, False, "disable the pace controller", switch=True),
]

ADAPTER_OPTS = [
    Opt("delta", float, 0.10, "joint-distance hinge margin (m)"),
    Opt("w-joint", float, 1.0, "joint-distance loss weight"),
    Opt("w-vel", float, 0.1, "velocity loss weight"),
    Opt("adapter-steps", str, "3", "firing step count, or explicit comma list of steps"),
    Opt("adapter-grad-step", float, 0.1, "adapter gradient step size"),
    Opt("adapter-grad-iters", int, 5, "adapter gradient iterations"),
    Opt("vel-loss-form", str, "cosine", "velocity loss form", choices=("cosine", "dot")),
    Opt("no-adapter", bool, False, "disable the synchronization adapter", switch=True),
]

COMMAND_OPTS: dict[str, list[Opt]] = {
    "make-data": GLOBAL_OPTS + [
        Opt("n-per-kind", int, 10, "scenarios per kind"),
        Opt("kinds", str, ",".join(k.value for k in ScenarioKind), "comma list of kinds"),
        Opt("frames", int, 210, "frames per scenario"),
    ],
    "train": GLOBAL_OPTS + [
        Opt("data", str, None, "dataset directory from make-data"),
        Opt("epochs", int, 200, "training epochs"),
        Opt("hidden", int, 256, "hidden width"),
        Opt("layers", int, 3, "hidden layer count"),
        Opt("lr", float, 1e-3, "SGD learning rate"),
        Opt("batch", int, 32, "minibatch size"),
        Opt("checkpoint-out", str, "denoiser.ckpt", "checkpoint filename (in out-dir)"),
    ],
    "generate": GLOBAL_OPTS + PACE_OPTS + ADAPTER_OPTS + [
        Opt("trajectory", str, None, "trajectory condition file (agent a)"),
        Opt("trajectory-b", str, None, "second trajectory file for --target-agent both"),
        Opt("condition", str, "circle-duet", "condition category"),
        Opt("frames", int, None, "frames when no trajectory is given"),
        Opt("out", str, "motion.json", "motion filename (in out-dir)"),
        Opt("plot", str, None, "also write an overhead-view SVG here"),
    ],
    "ablate-window": GLOBAL_OPTS + ADAPTER_OPTS + [
        Opt("windows", str, "0.8:0.2,0.7:0.3,0.6:0.4", "comma list of start:end windows"),
        Opt("seeds", int, 5, "runs per window"),
        Opt("shape", str, "line", "trajectory shape", choices=("line", "circle", "s-curve")),
        Opt("scale", float, 2.0, "trajectory scale (m)"),
        Opt("frames", int, 96, "frames per run"),
        Opt("grad-step", float, 0.5, "trajectory refinement step size"),
        Opt("grad-iters", int, 1, "trajectory refinement iterations per step"),
        Opt("inject-mode", str, "noised", "trajectory injection mode", choices=("noised", "raw")),
        Opt("with-adapter", bool, False, "enable the adapter during ablation", switch=True),
        Opt("table-out", str, "ablation.tsv", "table filename (in out-dir)"),
    ],
    "evaluate": GLOBAL_OPTS + PACE_OPTS + ADAPTER_OPTS + [
        Opt("kind", str, "approach-collide", "scenario kind"),
        Opt("runs", int, 5, "scenarios per configuration"),
        Opt("frames", int, 210, "frames per scenario"),
        Opt("table-out", str, "evaluate.tsv", "per-run table filename (in out-dir)"),
        Opt("summary-out", str, "evaluate-summary.tsv", "grid summary filename (in out-dir)"),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duetgen",
        description="Two-agent motion diffusion with leader trajectory guidance",
    )
    parser.add_argument("--version", action="version", version=f"duetgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in COMMAND_OPTS.items():
        cmd = sub.add_parser(command)
        cmd.add_argument("--config", default=None, help="key=value config file")
        for opt in opts:
            flag = "--" + opt.name
            if opt.switch:
                cmd.add_argument(flag, action="store_const", const="true",
                                 default=None, help=opt.help, dest=opt.name)
            else:
                cmd.add_argument(flag, default=None, help=opt.help, dest=opt.name)
    return parser


def _load_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise CliError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(config_path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def _resolve(args: argparse.Namespace, opts: list[Opt]) -> dict[str, object]:
    config = _load_config(args.config)
    known = {opt.name for opt in opts}
    unknown = set(config) - known
    if unknown:
        raise CliError(f"config keys not understood by this command: {sorted(unknown)}")
    resolved: dict[str, object] = {}
    for opt in opts:
        raw = getattr(args, opt.name)
        if raw is None:
            raw = config.get(opt.name)
        if raw is None:
            value = opt.default
        else:
            try:
                value = _parse_bool(raw) if opt.convert is bool else opt.convert(raw)
            except ValueError as exc:
                raise CliError(f"--{opt.name}: {exc}") from exc
        if opt.choices is not None and value not in opt.choices:
            raise CliError(f"--{opt.name} must be one of {opt.choices}, got {value!r}")
        resolved[opt.name] = value
    return resolved


def _config_hash(options: dict[str, object], extra: dict[str, object] | None = None) -> str:
    payload = {k: v for k, v in sorted(options.items())}
    if extra:
        payload.update(extra)
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def _rest_mean(n_frames: int) -> np.ndarray:
    """Idle two-agent prior mean: rest poses 1 m apart along z."""
    pose = rest_pose()
    mean = np.tile(pose, (2, n_frames, 1, 1)).reshape(2, n_frames, 22, 3)
    mean[0, :, :, 2] -= 0.5
    mean[1, :, :, 2] += 0.5
    return mean


def _make_denoiser(options: dict[str, object], n_frames: int, mean: np.ndarray | None = None):
    spec = str(options["denoiser"])
    if spec == "analytic":
        schedule = make_schedule(
            options["t-steps"], options["beta-min"], options["beta-max"]
        )
        if mean is None:
            if options["prior-mean"] == "rest":
                mean = _rest_mean(n_frames)
            else:
                mean = np.zeros((2, n_frames, 22, 3))
        return AnalyticGaussianPrior(
            mean, schedule,
            length_scale=options["prior-length-scale"],
            variance=options["prior-variance"],
        ), schedule
    if spec.startswith("checkpoint:"):
        path = spec.split(":", 1)[1]
        if not Path(path).is_file():
            raise CliError(f"checkpoint not found: {path}")
        model = load_denoiser(path)
        if model.motion_shape[1] != n_frames:
            raise CliError(
                f"checkpoint was trained on {model.motion_shape[1]}-frame motions, "
                f"run needs {n_frames}"
            )
        return model, model.schedule
    raise CliError(f"--denoiser must be 'analytic' or 'checkpoint:<path>', got {spec!r}")


def _adapter_config(options: dict[str, object]) -> AdapterConfig:
    steps_raw = str(options["adapter-steps"])
    if "," in steps_raw:
        steps: int | tuple[int, ...] = tuple(int(s) for s in steps_raw.split(",") if s)
    else:
        steps = int(steps_raw)
    return AdapterConfig(
        delta=options["delta"],
        w_joint=options["w-joint"],
        w_vel=options["w-vel"],
        adapter_steps=steps,
        grad_step_size=options["adapter-grad-step"],
        grad_iters=options["adapter-grad-iters"],
        vel_loss_form=options["vel-loss-form"],
    )


def _pace_config(options: dict[str, object], window: tuple[float, float] | None = None) -> PaceConfig:
    if window is None:
        window = (options["window-start"], options["window-end"])
    return PaceConfig(
        window=GuidanceWindow(*window),
        grad_step_size=options["grad-step"],
        grad_steps=options["grad-iters"],
        injection_mode=options["inject-mode"],
        target_agent=options.get("target-agent", "a"),
    )


def _out_path(options: dict[str, object], name: str) -> Path:
    out_dir = Path(str(options["out-dir"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _write_table(path: Path, header: list[str], rows: list[list[object]]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(
            f"{v:.6f}" if isinstance(v, float) else str(v) for v in row
        ))
    path.write_text("\n".join(lines) + "\n")


def cmd_make_data(options: dict[str, object]) -> int:
    kind_names = [k.strip() for k in str(options["kinds"]).split(",") if k.strip()]
    try:
        kinds = [ScenarioKind(name) for name in kind_names]
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out_dir = Path(str(options["out-dir"]))
    items_dir = out_dir / "items"
    items_dir.mkdir(parents=True, exist_ok=True)
    base_seed = int(options["seed"])
    manifest_items = []
    for kind in kinds:
        kind_index = list(ScenarioKind).index(kind)
        for i in range(int(options["n-per-kind"])):
            item_seed = (base_seed, kind_index, i)
            rng = np.random.default_rng(item_seed)
            motion, _ = generate_scenario(kind, options["frames"], options["fps"], rng)
            filename = f"items/{kind.value}-{i:04d}.json"
            save_motion(motion, out_dir / filename)
            manifest_items.append({
                "file": filename,
                "kind": kind.value,
                "seed": list(item_seed),
                "frames": options["frames"],
                "fps": options["fps"],
            })
    manifest = {
        "format": "duetgen-dataset",
        "version": 1,
        "base_seed": base_seed,
        "items": manifest_items,
    }
    (out_dir / DATASET_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )
    print(f"wrote {len(manifest_items)} motions to {out_dir}")
    return 0


def load_dataset_dir(path) -> list[tuple[TwoAgentMotion, ConditionLabel]]:
    """Read a make-data directory back into (motion, condition) pairs."""
    root = Path(path)
    manifest_path = root / DATASET_MANIFEST
    if not manifest_path.is_file():
        raise CliError(f"no {DATASET_MANIFEST} in {path}")
    manifest = json.loads(manifest_path.read_text())
    pairs = []
    for item in manifest["items"]:
        motion = load_motion(root / item["file"])
        pairs.append((motion, ConditionLabel(item["kind"])))
    return pairs


def cmd_train(options: dict[str, object]) -> int:
    if options["data"] is None:
        raise CliError("--data is required (a make-data directory)")
    dataset = load_dataset_dir(options["data"])
    schedule = make_schedule(options["t-steps"], options["beta-min"], options["beta-max"])
    config = MlpTrainConfig(
        hidden_width=options["hidden"],
        hidden_layers=options["layers"],
        learning_rate=options["lr"],
        epochs=options["epochs"],
        batch_size=options["batch"],
    )
    rng = np.random.default_rng(int(options["seed"]))
    model = train_mlp_denoiser(dataset, schedule, config, rng, log=print)
    out = _out_path(options, str(options["checkpoint-out"]))
    save_denoiser(model, out)
    print(f"checkpoint: {out}")
    print(f"loss first={model.loss_history[0]:.6f} last={model.loss_history[-1]:.6f}")
    return 0


def _load_target(options: dict[str, object]):
    """Returns (target-or-None, n_frames, fps_hint)."""
    if options["trajectory"] is None:
        if not options["no-controller"]:
            raise CliError("--trajectory is required unless --no-controller is given")
        if options["frames"] is None:
            raise CliError("--frames is required when no trajectory sets the length")
        return None, int(options["frames"]), None
    trajectory, fps = load_trajectory(options["trajectory"])
    if options["target-agent"] == "both":
        if options["trajectory-b"] is None:
            raise CliError("--target-agent both needs --trajectory-b")
        trajectory_b, _ = load_trajectory(options["trajectory-b"])
        if trajectory_b.length != trajectory.length:
            raise CliError("the two trajectories disagree on length")
        return (trajectory, trajectory_b), trajectory.length, fps
    return trajectory, trajectory.length, fps


def cmd_generate(options: dict[str, object]) -> int:
    target, n_frames, _ = _load_target(options)
    denoiser, schedule = _make_denoiser(options, n_frames)
    skeleton = default_skeleton()
    steps = ddim_subsequence(schedule.T, min(int(options["ddim-steps"]), schedule.T))
    if options["sampler"] == "posterior":
        steps = list(range(schedule.T, -1, -1))
    rng = np.random.default_rng(int(options["seed"]))
    condition = ConditionLabel(str(options["condition"]))
    adapter_config = None if options["no-adapter"] else _adapter_config(options)

    if options["no-controller"] and adapter_config is None:
        motion = sample(
            denoiser, condition, schedule, steps, rng=rng,
            sampler=str(options["sampler"]), fps=options["fps"],
        )
    elif options["no-controller"]:
        from .adapter import adapter_hook

        hook = adapter_hook(
            adapter_config, skeleton, schedule, steps,
            GuidanceWindow(options["window-start"], options["window-end"]),
        )
        motion = sample(
            denoiser, condition, schedule, steps, [hook], rng,
            sampler=str(options["sampler"]), fps=options["fps"],
        )
    else:
        motion = guided_sample(
            denoiser, condition, target, schedule, _pace_config(options), rng,
            adapter_config=adapter_config, skeleton=skeleton,
            step_subsequence=steps, sampler=str(options["sampler"]),
            fps=options["fps"],
        )

    out = _out_path(options, str(options["out"]))
    save_motion(motion, out)
    print(f"motion: {out}")
    if options["plot"] is not None:
        leader = project_root_trajectory(motion.agent_a, skeleton).points
        follower = project_root_trajectory(motion.agent_b, skeleton).points
        if target is None:
            target_pts = None
        elif isinstance(target, tuple):
            target_pts = target[0].planar
        else:
            target_pts = target.planar
        plot_path = _out_path(options, str(options["plot"]))
        write_trajectory_svg(plot_path, target_pts, leader, follower)
        print(f"plot: {plot_path}")
    return 0


def _parse_windows(text: str) -> list[tuple[float, float]]:
    windows = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            start, end = chunk.split(":")
            windows.append((float(start), float(end)))
        except ValueError as exc:
            raise CliError(f"bad window {chunk!r}, expected start:end") from exc
    if not windows:
        raise CliError("no windows given")
    return windows


def _motion_smoothness(motion: TwoAgentMotion) -> float:
    return 0.5 * (smoothness(motion.agent_a) + smoothness(motion.agent_b))


def cmd_ablate_window(options: dict[str, object]) -> int:
    windows = _parse_windows(str(options["windows"]))
    n_frames = int(options["frames"])
    target = generate_trajectory_condition(
        str(options["shape"]), n_frames, options["scale"]
    )
    denoiser, schedule = _make_denoiser(options, n_frames)
    skeleton = default_skeleton()
    steps = ddim_subsequence(schedule.T, min(int(options["ddim-steps"]), schedule.T))
    adapter_config = _adapter_config(options) if options["with-adapter"] else None
    seeds = [int(options["seed"]) + i for i in range(int(options["seeds"]))]

    def run_batch(window: tuple[float, float] | None) -> list[float]:
        rmses, jerks, pens = [], [], []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            if window is None:
                motion = sample(denoiser, None, schedule, steps, rng=rng, fps=options["fps"])
            else:
                config = PaceConfig(
                    window=GuidanceWindow(*window),
                    grad_step_size=options["grad-step"],
                    grad_steps=options["grad-iters"],
                    injection_mode=options["inject-mode"],
                )
                motion = guided_sample(
                    denoiser, None, target, schedule, config, rng,
                    adapter_config=adapter_config, skeleton=skeleton,
                    step_subsequence=steps, fps=options["fps"],
                )
            rmses.append(trajectory_rmse(motion.agent_a, target, skeleton))
            jerks.append(_motion_smoothness(motion))
            pens.append(penetration_frames(motion, skeleton))
        return [float(np.mean(rmses)), float(np.mean(jerks)), float(np.mean(pens))]

    header = ["window", "trajectory_rmse", "smoothness", "penetration_frames", "n_seeds"]
    rows: list[list[object]] = []
    rows.append(["baseline", *run_batch(None), len(seeds)])
    for window in windows:
        rows.append([f"{window[0]:.2f}:{window[1]:.2f}", *run_batch(window), len(seeds)])
    table = _out_path(options, str(options["table-out"]))
    _write_table(table, header, rows)
    print(table.read_text(), end="")
    return 0


def cmd_evaluate(options: dict[str, object]) -> int:
    try:
        kind = ScenarioKind(str(options["kind"]))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    n_frames = int(options["frames"])
    skeleton = default_skeleton()
    schedule = make_schedule(options["t-steps"], options["beta-min"], options["beta-max"])
    steps = ddim_subsequence(schedule.T, min(int(options["ddim-steps"]), schedule.T))
    adapter_base = _adapter_config(options)
    grid = [(False, False), (True, False), (False, True), (True, True)]

    header = [
        "scenario", "kind", "seed", "controller", "adapter", "config_hash",
        "trajectory_rmse", "penetration_frames", "smoothness",
        "final_velocity_similarity", "wall_time_s",
    ]
    rows: list[list[object]] = []
    sums: dict[tuple[bool, bool], list[float]] = {g: [0.0] * 5 for g in grid}

    for i in range(int(options["runs"])):
        scen_rng = np.random.default_rng((int(options["seed"]), 7, i))
        scenario, condition = generate_scenario(kind, n_frames, options["fps"], scen_rng)
        target = project_root_trajectory(scenario.agent_a, skeleton)
        if str(options["denoiser"]) == "analytic":
            denoiser, schedule_i = _make_denoiser(
                options, n_frames, mean=scenario.as_tensor()
            )
        else:
            denoiser, schedule_i = _make_denoiser(options, n_frames)
        for controller, adapter_on in grid:
            rng = np.random.default_rng((int(options["seed"]), 11, i))
            start = time.perf_counter()
            if controller:
                motion = guided_sample(
                    denoiser, condition, target, schedule_i, _pace_config(options), rng,
                    adapter_config=adapter_base if adapter_on else None,
                    skeleton=skeleton, step_subsequence=steps, fps=options["fps"],
                )
            elif adapter_on:
                from .adapter import adapter_hook

                hook = adapter_hook(
                    adapter_base, skeleton, schedule_i, steps,
                    GuidanceWindow(options["window-start"], options["window-end"]),
                )
                motion = sample(
                    denoiser, condition, schedule_i, steps, [hook], rng,
                    fps=options["fps"],
                )
            else:
                motion = sample(
                    denoiser, condition, schedule_i, steps, rng=rng, fps=options["fps"]
                )
            elapsed = time.perf_counter() - start
            run_metrics = [
                trajectory_rmse(motion.agent_a, target, skeleton),
                float(penetration_frames(motion, skeleton)),
                _motion_smoothness(motion),
                final_velocity_similarity(motion, min(20, n_frames - 1)),
                elapsed,
            ]
            config_hash = _config_hash(
                {"controller": controller, "adapter": adapter_on},
                {"kind": kind.value, "frames": n_frames},
            )
            rows.append([
                i, kind.value, int(options["seed"]), int(controller), int(adapter_on),
                config_hash, *run_metrics,
            ])
            for j, value in enumerate(run_metrics):
                sums[(controller, adapter_on)][j] += value

    table = _out_path(options, str(options["table-out"]))
    _write_table(table, header, rows)

    n_runs = int(options["runs"])
    summary_header = [
        "controller", "adapter", "trajectory_rmse", "penetration_frames",
        "smoothness", "final_velocity_similarity", "wall_time_s",
    ]
    summary_rows: list[list[object]] = [
        [int(c), int(a), *(s / n_runs for s in sums[(c, a)])] for c, a in grid
    ]
    summary = _out_path(options, str(options["summary-out"]))
    _write_table(summary, summary_header, summary_rows)
    print(summary.read_text(), end="")
    return 0


COMMANDS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "ablate-window": cmd_ablate_window,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        options = _resolve(args, COMMAND_OPTS[args.command])
        return COMMANDS[args.command](options)
    except (CliError, MotionFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
