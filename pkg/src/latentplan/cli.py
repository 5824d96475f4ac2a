"""Command-line driver: ``latentplan <subcommand> [flags]``.

Every subcommand writes a ``<subcommand>.config.json`` echo of its resolved
settings next to its outputs. ``--config FILE`` overlays a JSON object of
settings (keys are flag names, with dashes or underscores); explicit flags win.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import TrajectoryCodec, normalize_traj, component_weights, variance_report, write_variance_csv
from .denoiser import DenoiserConfig, load_checkpoint
from .diffusion import cosine_schedule
from .errors import ConfigError, LatentPlanError
from .evaluation import (
    evaluate,
    evaluate_constant_velocity,
    generate_plans,
    goal_ablation,
    sampler_sweep,
    write_ablation_csv,
    write_scenario_csv,
    write_sweep_csv,
)
from .plotting import component_weights_svg, trajectory_fan_svg, variance_curve_svg
from .scenegen import GOAL_VARIANTS, TURN_KINDS, GeneratorConfig, build_dataset, config_dict, load_dataset
from .trainer import TrainConfig, fit_pipeline, train_from_files

log = logging.getLogger("latentplan")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
PAPER_SWEEP = "10,20,50,100,200"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as exceptions and tracks option defaults.

    Options are registered with ``default=None`` so that an explicit flag can
    be told apart from an omitted one when a ``--config`` overlay is applied.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.option_defaults: dict = {}
        self.required_options: set = set()

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")

    def option(self, flag: str, default=None, required: bool = False, **kwargs):
        action = self.add_argument(flag, default=None, **kwargs)
        self.option_defaults[action.dest] = default
        if required:
            self.required_options.add(action.dest)
        return action


def _resolve(args: argparse.Namespace, parser: _Parser) -> dict:
    overlay = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"--config file not found: {path}")
        try:
            overlay = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise UsageError(f"--config {path}: invalid JSON ({exc})") from exc
        if not isinstance(overlay, dict):
            raise UsageError(f"--config {path}: expected a JSON object")
        overlay = {k.replace("-", "_"): v for k, v in overlay.items()}
        unknown = sorted(set(overlay) - set(parser.option_defaults))
        if unknown:
            raise UsageError(f"--config {path}: unknown settings {unknown}")
    settings = {}
    for dest, default in parser.option_defaults.items():
        value = getattr(args, dest)
        settings[dest] = value if value is not None else overlay.get(dest, default)
    missing = sorted(d for d in parser.required_options if settings[d] is None)
    if missing:
        flags = ", ".join("--" + d.replace("_", "-") for d in missing)
        raise UsageError(f"{parser.prog}: missing required setting(s): {flags}")
    return settings


def _echo(command: str, settings: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, "seed": settings.get("seed"), "settings": settings}
    (out_dir / f"{command}.config.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def _existing(settings: dict, *keys: str) -> None:
    from .errors import DataError

    for key in keys:
        value = settings.get(key)
        if value is not None and not Path(value).exists():
            raise DataError(f"--{key.replace('_', '-')}: file not found: {value}")


def _positive(settings: dict, *keys: str) -> None:
    for key in keys:
        if settings[key] is not None and settings[key] < 1:
            raise UsageError(f"--{key.replace('_', '-')} must be >= 1, got {settings[key]}")


def _select(samples, subset: str, limit: int | None):
    if subset == "turns":
        samples = [s for s in samples if s.kind in TURN_KINDS]
    if limit is not None:
        samples = samples[:limit]
    if not samples:
        raise UsageError("no scenarios left after --subset/--limit")
    return samples


def _schedule_for(meta: dict):
    return cosine_schedule(int(meta.get("train_config", {}).get("T", 500)))


def _check_steps(n: int, schedule) -> None:
    if not 1 <= n <= schedule.T:
        raise UsageError(f"--ddim-steps must lie in [1, {schedule.T}], got {n}")


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(s: dict) -> None:
    _positive(s, "n_train", "n_val", "workers")
    mix = s["mix"]
    if isinstance(mix, str):
        try:
            mix = json.loads(mix)
        except ValueError as exc:
            raise UsageError(f"--mix: invalid JSON ({exc})") from exc
    params = GeneratorConfig(noise=s["noise"])
    out = Path(s["out_dir"])
    _echo("gen-data", {**s, "mix": mix, "generator": config_dict(params)}, out)
    train, val = build_dataset(s["n_train"], s["n_val"], mix, s["seed"], out, params, s["goal"], s["workers"])
    print(f"wrote {train} and {val}")


def cmd_fit(s: dict) -> None:
    _existing(s, "dataset")
    _positive(s, "d")
    out = Path(s["out_dir"])
    _echo("fit", s, out)
    codec = fit_pipeline(s["dataset"], out / "codec.json", d=s["d"], whiten=not s["no_whiten"])
    futures = np.stack([x.future for x in load_dataset(s["dataset"])])
    rows = variance_report(codec.basis, normalize_traj(futures, codec.stats), codec.stats)
    write_variance_csv(rows, out / "variance.csv")
    last = rows[-1]
    print(f"codec written to {out / 'codec.json'}: k={last['k']} captures {last['cum_variance_ratio']:.6f} "
          f"of the variance, mean waypoint error {last['mean_waypoint_error_m']:.4f} m")


def cmd_train(s: dict) -> None:
    _existing(s, "dataset", "val_dataset", "codec")
    _positive(s, "steps", "batch", "eval_interval")
    if s["goal"] not in GOAL_VARIANTS:
        raise UsageError(f"--goal must be one of {GOAL_VARIANTS}")
    factory = DenoiserConfig.paper if s["scale"] == "paper" else DenoiserConfig.desk
    model_config = factory(ego_encoder=s["ego_encoder"])
    try:
        config = TrainConfig(steps=s["steps"], batch=s["batch"], lr=s["lr"], weight_decay=s["weight_decay"],
                             restart_period=s["restart_period"], goal_mode=s["goal"], seed=s["seed"],
                             eval_interval=s["eval_interval"], val_minade=s["val_minade"])
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(s["out_dir"])
    _echo("train", s, out)
    res = train_from_files(s["dataset"], s["val_dataset"], s["codec"], model_config, config, out, s["tag"])
    print(f"best val loss {res.best_val_loss:.6f} -> {res.best_path}; final -> {res.final_path}; log -> {res.log_path}")


def _load_model_and_data(s: dict):
    _existing(s, "checkpoint", "codec", "dataset")
    model, meta, _ = load_checkpoint(s["checkpoint"])
    codec = TrajectoryCodec.load(s["codec"])
    if meta.get("codec_fingerprint") not in (None, codec.fingerprint()):
        raise ConfigError(f"checkpoint {s['checkpoint']} was trained with a different codec than {s['codec']}")
    return model, meta, codec, load_dataset(s["dataset"])


def cmd_sample(s: dict) -> None:
    _positive(s, "k")
    model, meta, codec, samples = _load_model_and_data(s)
    schedule = _schedule_for(meta)
    _check_steps(s["ddim_steps"], schedule)
    if not 0 <= s["index"] < len(samples):
        raise UsageError(f"--index {s['index']} outside dataset of {len(samples)} scenarios")
    out = Path(s["out_dir"])
    _echo("sample", s, out)
    goal = s["goal"] or meta.get("goal_mode")
    sample = samples[s["index"]]
    plans = generate_plans(model, codec, sample, s["k"], s["ddim_steps"], s["seed"], schedule, goal)
    _write_json({"scenario_id": sample.id, "kind": sample.kind, "goal_mode": goal, "plans": plans.tolist()},
                out / "plans.json")
    print(f"wrote {len(plans)} plans for scenario {sample.id} to {out / 'plans.json'}")


def cmd_eval(s: dict) -> None:
    _positive(s, "k")
    model, meta, codec, samples = _load_model_and_data(s)
    schedule = _schedule_for(meta)
    _check_steps(s["ddim_steps"], schedule)
    samples = _select(samples, s["subset"], s["limit"])
    out = Path(s["out_dir"])
    _echo("eval", s, out)
    goal = s["goal"] or meta.get("goal_mode")
    rep = evaluate(model, codec, samples, s["k"], s["ddim_steps"], s["seed"], schedule, goal)
    write_scenario_csv(rep, out / "scenarios.csv")
    summary = {"model": rep.summary(), "goal_mode": goal,
               "constant_velocity": evaluate_constant_velocity(samples).summary()}
    _write_json(summary, out / "summary.json")
    m, cv = summary["model"], summary["constant_velocity"]
    print(f"minADE {m['min_ade']:.4f} m, minFDE {m['min_fde']:.4f} m, MissRate {m['miss_rate']:.4f} "
          f"(K={m['K']}, N={m['N']}, {m['n_scenarios']} scenarios); constant velocity minADE {cv['min_ade']:.4f} m")


def cmd_sweep(s: dict) -> None:
    _positive(s, "k")
    model, meta, codec, samples = _load_model_and_data(s)
    schedule = _schedule_for(meta)
    try:
        steps = [int(v) for v in str(s["steps"]).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--steps must be a comma-separated list of integers, got {s['steps']!r}") from exc
    for n in steps:
        _check_steps(n, schedule)
    samples = _select(samples, s["subset"], s["limit"])
    out = Path(s["out_dir"])
    _echo("sweep", s, out)
    goal = s["goal"] or meta.get("goal_mode")
    rows = sampler_sweep(model, codec, samples, steps, s["k"], s["seed"], schedule, goal)
    write_sweep_csv(rows, out / "sweep.csv")
    for r in rows:
        print(f"N={r['N']:>4}: minADE {r['min_ade']:.4f}  minFDE {r['min_fde']:.4f}  MissRate {r['miss_rate']:.4f}")


def cmd_ablate(s: dict) -> None:
    _positive(s, "k")
    _existing(s, "endpoint_checkpoint")
    model, meta, codec, samples = _load_model_and_data(s)
    endpoint, endpoint_meta, _ = load_checkpoint(s["endpoint_checkpoint"])
    schedule = _schedule_for(meta)
    _check_steps(s["ddim_steps"], schedule)
    samples = _select(samples, s["subset"], s["limit"])
    out = Path(s["out_dir"])
    _echo("ablate", s, out)
    rows = goal_ablation(model, endpoint, codec, samples, s["k"], s["ddim_steps"], s["seed"], schedule,
                         meta, endpoint_meta)
    write_ablation_csv(rows, out / "ablation.csv")
    for r in rows:
        print(f"{r['goal_mode']:>12}: minADE {r['min_ade']:.4f}  minFDE {r['min_fde']:.4f}  MissRate {r['miss_rate']:.4f}")


def cmd_plot(s: dict) -> None:
    out = Path(s["out_dir"])
    kind = s["kind"]
    if kind == "variance":
        if s["variance_csv"]:
            _existing(s, "variance_csv")
            import csv

            with open(s["variance_csv"], newline="", encoding="utf-8") as fh:
                rows = [{"k": int(r["k"]), "cum_variance_ratio": float(r["cum_variance_ratio"])} for r in csv.DictReader(fh)]
        else:
            if not (s["codec"] and s["dataset"]):
                raise UsageError("plot --kind variance needs --variance-csv or both --codec and --dataset")
            _existing(s, "codec", "dataset")
            codec = TrajectoryCodec.load(s["codec"])
            futures = np.stack([x.future for x in load_dataset(s["dataset"])])
            rows = variance_report(codec.basis, normalize_traj(futures, codec.stats), codec.stats)
        _echo("plot", s, out)
        variance_curve_svg(rows, marker_k=s["marker_k"], path=out / "variance.svg")
        print(f"wrote {out / 'variance.svg'}")
        return

    if not (s["codec"] and s["dataset"]):
        raise UsageError(f"plot --kind {kind} needs --codec and --dataset")
    _existing(s, "codec", "dataset")
    codec = TrajectoryCodec.load(s["codec"])
    samples = load_dataset(s["dataset"])
    if not 0 <= s["index"] < len(samples):
        raise UsageError(f"--index {s['index']} outside dataset of {len(samples)} scenarios")
    sample = samples[s["index"]]
    if kind == "weights":
        _echo("plot", s, out)
        idx, w = component_weights(normalize_traj(sample.future, codec.stats), codec.basis)
        component_weights_svg(idx, w, title=f"Latent weights, scenario {sample.id} ({sample.kind})",
                              path=out / "weights.svg")
        print(f"wrote {out / 'weights.svg'}")
        return

    if not s["checkpoint"]:
        raise UsageError("plot --kind fan needs --checkpoint")
    _existing(s, "checkpoint")
    _positive(s, "k")
    model, meta, _ = load_checkpoint(s["checkpoint"])
    schedule = _schedule_for(meta)
    _check_steps(s["ddim_steps"], schedule)
    _echo("plot", s, out)
    goal = s["goal"] or meta.get("goal_mode")
    plans = generate_plans(model, codec, sample, s["k"], s["ddim_steps"], s["seed"], schedule, goal)
    shown_goal = sample.with_goal(goal).goal.waypoints if goal else sample.goal.waypoints
    trajectory_fan_svg(plans, sample.future, list(sample.map), shown_goal, sample.ego_history[:, :2],
                       title=f"Scenario {sample.id} ({sample.kind}), goal: {goal}", path=out / "fan.svg")
    print(f"wrote {out / 'fan.svg'}")


# ---------------------------------------------------------------------------
# parser


def _common(p: _Parser, *flags: str) -> None:
    table = {
        "seed": dict(default=0, type=int, help="global random seed (default 0)"),
        "dataset": dict(help="scenario JSONL file"),
        "codec": dict(help="codec JSON written by 'fit'"),
        "checkpoint": dict(help="model checkpoint JSON written by 'train'"),
        "k": dict(default=20, type=int, help="samples per scenario (default 20)"),
        "ddim-steps": dict(default=100, type=int, help="DDIM steps N (default 100)"),
        "goal": dict(choices=GOAL_VARIANTS, help="goal conditioning; default: the checkpoint's training mode"),
        "subset": dict(default="all", choices=("all", "turns"), help="scenario subset (default all)"),
        "limit": dict(type=int, help="evaluate only the first N scenarios of the subset"),
    }
    for flag in flags:
        p.option(f"--{flag}", **table[flag])


def build_parser() -> _Parser:
    parser = _Parser(prog="latentplan", description="Goal-conditioned latent diffusion trajectory planner.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    specs = {}

    def command(name: str, help: str) -> _Parser:
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="JSON file of settings; explicit flags take precedence")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        p.option("--out-dir", required=True, help="directory for every output of this command")
        specs[name] = p
        return p

    p = command("gen-data", "generate curated synthetic train/val scenario sets")
    _common(p, "seed")
    p.option("--n-train", default=20000, type=int, help="training scenarios (default 20000)")
    p.option("--n-val", default=1000, type=int, help="validation scenarios (default 1000)")
    p.option("--mix", help='kind proportions as JSON, e.g. \'{"left_turn": 0.5, "straight": 0.5}\'')
    p.option("--goal", default="sparse", choices=GOAL_VARIANTS, help="stored goal variant (default sparse)")
    p.option("--noise", default=1.0, type=float, help="driver-noise scale (default 1.0)")
    p.option("--workers", default=1, type=int, help="generator processes (default 1)")

    p = command("fit", "fit the trajectory codec and write the variance report")
    _common(p, "dataset")
    p.required_options.add("dataset")
    p.option("--d", default=16, type=int, help="latent dimension (default 16)")
    p.option("--no-whiten", default=False, action="store_const", const=True, help="skip PCA whitening")

    p = command("train", "train the conditional denoiser")
    _common(p, "seed", "dataset", "codec")
    p.required_options.update({"dataset", "codec", "val_dataset"})
    p.option("--val-dataset", help="validation scenario JSONL file")
    p.option("--steps", default=20000, type=int, help="optimizer steps (default 20000)")
    p.option("--batch", default=64, type=int, help="batch size (default 64)")
    p.option("--lr", default=1e-4, type=float, help="peak learning rate (default 1e-4)")
    p.option("--weight-decay", default=1e-4, type=float, help="AdamW weight decay (default 1e-4)")
    p.option("--restart-period", type=int, help="cosine restart period in steps (default: no restart)")
    p.option("--goal", default="sparse", choices=GOAL_VARIANTS, help="goal conditioning (default sparse)")
    p.option("--scale", default="desk", choices=("desk", "paper"), help="model size (default desk)")
    p.option("--ego-encoder", default="cnn", choices=("cnn", "mlp"), help="ego history encoder (default cnn)")
    p.option("--eval-interval", default=1000, type=int, help="steps between validation passes (default 1000)")
    p.option("--val-minade", default=False, action="store_const", const=True,
             help="also log a cheap sampled minADE at each validation pass")
    p.option("--tag", default="model", help="checkpoint/log file prefix (default 'model')")

    p = command("sample", "draw K plans for one scenario")
    _common(p, "seed", "dataset", "codec", "checkpoint", "k", "ddim-steps", "goal")
    p.required_options.update({"dataset", "codec", "checkpoint"})
    p.option("--index", default=0, type=int, help="scenario position in the dataset (default 0)")

    p = command("eval", "minADE/minFDE/MissRate on a dataset, with the constant-velocity baseline")
    _common(p, "seed", "dataset", "codec", "checkpoint", "k", "ddim-steps", "goal", "subset", "limit")
    p.required_options.update({"dataset", "codec", "checkpoint"})

    p = command("sweep", "evaluate across DDIM step counts")
    _common(p, "seed", "dataset", "codec", "checkpoint", "k", "goal", "subset", "limit")
    p.required_options.update({"dataset", "codec", "checkpoint"})
    p.option("--steps", default=PAPER_SWEEP, help=f"comma-separated step counts (default {PAPER_SWEEP})")

    p = command("ablate", "goal-representation ablation: sparse route, endpoint, no goal")
    _common(p, "seed", "dataset", "codec", "checkpoint", "k", "ddim-steps", "subset", "limit")
    p.required_options.update({"dataset", "codec", "checkpoint", "endpoint_checkpoint"})
    p.option("--endpoint-checkpoint", help="checkpoint trained with --goal endpoint")
    p.option_defaults["subset"] = "turns"

    p = command("plot", "render SVG figures")
    _common(p, "seed", "dataset", "codec", "checkpoint", "k", "ddim-steps", "goal")
    p.option("--kind", required=True, choices=("fan", "variance", "weights"), help="figure type")
    p.option("--index", default=0, type=int, help="scenario position for fan/weights (default 0)")
    p.option("--variance-csv", help="variance report from 'fit' (variance plot)")
    p.option("--marker-k", default=16, type=int, help="highlighted k on the variance plot (default 16)")

    parser.command_parsers = specs
    return parser


HANDLERS = {"gen-data": cmd_gen_data, "fit": cmd_fit, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval,
            "sweep": cmd_sweep, "ablate": cmd_ablate, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        settings = _resolve(args, parser.command_parsers[args.command])
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        HANDLERS[args.command](settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LatentPlanError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
