"""Experiment orchestration: run configs, training runs with periodic
checkpoint-and-evaluate, metrics CSV emission, curve plotting and the value
grid export.

Run configs are flat key=value text files; command-line flags override file
values. Every run directory receives a config snapshot that reproduces the
run exactly (criterion: metrics.csv is byte-identical on re-runs).
"""
from __future__ import annotations

import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from . import constraints as fl
from .envs import GridLayout, GridWorld, make_env, unwrap, default_registry
from .plots import heatmap_svg, line_chart_svg, rolling_mean
from .training import (
    EvalResult,
    System3Config,
    Trainer,
    TrainingDiverged,
    VERSION_TAG,
    evaluate_policy,
)

METRICS_HEADER = (
    "step,iteration,mean_env_return,constraint_satisfaction,"
    "violations,forward_loss,policy_loss,entropy,seed"
)
TRAIN_LOG_HEADER = (
    "iteration,steps,mean_env_return,episodes_completed,rc_rate,"
    "true_satisfaction_rate,disagreement_rate,forward_loss,policy_loss,"
    "value_loss,entropy,combined_loss"
)


class ConfigError(ValueError):
    """Bad run configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    """Everything one experiment needs; see README for the key names."""

    experiment: str = "run"
    env: str = "gridworld"
    layout: str = "default"
    constraint: str = "none"
    seeds: tuple[int, ...] = (0,)
    eval_every: int = 400
    eval_horizon: int = 1000
    out: str = "runs"
    d: int = 1
    sys3: System3Config = field(default_factory=System3Config)

    def __post_init__(self):
        if self.env not in ("gridworld", "cartpole"):
            raise ConfigError(f"unknown env {self.env!r} (gridworld or cartpole)")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.eval_every < 1 or self.eval_horizon < 1:
            raise ConfigError("eval_every and eval_horizon must be >= 1")
        if self.d < 1:
            raise ConfigError("d must be >= 1")


# Mapping of config-file keys onto RunConfig / System3Config fields.
_RUN_KEYS = {
    "experiment": str,
    "env": str,
    "layout": str,
    "constraint": str,
    "eval_every": int,
    "eval_horizon": int,
    "out": str,
    "d": int,
}
_SYS3_KEYS = {
    "lambda": ("lam", float),
    "beta": ("beta", float),
    "gamma": ("gamma", float),
    "gae_lambda": ("gae_lambda", float),
    "lr": ("learning_rate", float),
    "rollout_length": ("rollout_length", int),
    "batch_size": ("batch_size", int),
    "steps": ("total_steps", int),
    "constraint_weight": ("constraint_reward_weight", float),
    "use_env_reward": ("use_env_reward", None),
    "entropy_coef": ("entropy_coef", float),
    "value_coef": ("value_coef", float),
    "optimizer": ("optimizer", str),
    "policy_features": ("policy_features", str),
    "model_warmup_iters": ("model_warmup_iters", int),
}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_kv_file(path) -> dict[str, str]:
    """Flat `key = value` lines; '#' comments; later keys win."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path) as fp:
        for lineno, raw in enumerate(fp, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def build_run_config(values: dict[str, str]) -> RunConfig:
    """Typed RunConfig from flat string key/values; unknown keys rejected."""
    values = dict(values)
    run_kwargs: dict = {}
    sys3_kwargs: dict = {}
    if "seeds" in values:
        text = values.pop("seeds")
        try:
            run_kwargs["seeds"] = tuple(int(s) for s in str(text).split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"bad seeds list {text!r}") from exc
    if "hidden" in values:
        text = values.pop("hidden")
        try:
            sys3_kwargs["hidden"] = tuple(int(s) for s in str(text).split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"bad hidden sizes {text!r}") from exc
    for key, value in values.items():
        if key in _RUN_KEYS:
            run_kwargs[key] = _RUN_KEYS[key](value)
        elif key in _SYS3_KEYS:
            fieldname, conv = _SYS3_KEYS[key]
            if conv is None:
                sys3_kwargs[fieldname] = _parse_bool(str(value))
            else:
                try:
                    sys3_kwargs[fieldname] = conv(value)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {value!r}") from exc
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        sys3 = System3Config(**sys3_kwargs)
        config = RunConfig(sys3=sys3, **run_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if config.constraint != "none" and not os.path.exists(config.constraint):
        raise ConfigError(f"constraint file not found: {config.constraint}")
    if config.env == "gridworld" and config.layout != "default" and not os.path.exists(config.layout):
        raise ConfigError(f"layout file not found: {config.layout}")
    return config


def snapshot_text(config: RunConfig, seed: int) -> str:
    """Flat key=value snapshot that re-runs this seed identically."""
    s = config.sys3
    lines = [
        f"# {VERSION_TAG}",
        f"experiment = {config.experiment}",
        f"env = {config.env}",
        f"layout = {config.layout}",
        f"constraint = {config.constraint}",
        f"seeds = {seed}",
        f"eval_every = {config.eval_every}",
        f"eval_horizon = {config.eval_horizon}",
        f"out = {config.out}",
        f"d = {config.d}",
        f"lambda = {s.lam!r}",
        f"beta = {s.beta!r}",
        f"gamma = {s.gamma!r}",
        f"gae_lambda = {s.gae_lambda!r}",
        f"lr = {s.learning_rate!r}",
        f"rollout_length = {s.rollout_length}",
        f"batch_size = {s.batch_size}",
        f"steps = {s.total_steps}",
        f"constraint_weight = {s.constraint_reward_weight!r}",
        f"use_env_reward = {str(s.use_env_reward).lower()}",
        f"entropy_coef = {s.entropy_coef!r}",
        f"value_coef = {s.value_coef!r}",
        f"hidden = {','.join(str(h) for h in s.hidden)}",
        f"optimizer = {s.optimizer}",
        f"policy_features = {s.policy_features}",
        f"model_warmup_iters = {s.model_warmup_iters}",
    ]
    return "\n".join(lines) + "\n"


def _metrics_row(step, iteration, ev: EvalResult, train_metrics: dict, seed: int) -> str:
    return ",".join(
        [
            str(step),
            str(iteration),
            repr(float(ev.mean_return)),
            repr(float(ev.satisfaction_rate)),
            str(int(ev.violation_count)),
            repr(float(train_metrics.get("forward_loss", 0.0))),
            repr(float(train_metrics.get("policy_loss", 0.0))),
            repr(float(train_metrics.get("entropy", 0.0))),
            str(seed),
        ]
    )


def run_dir_for(config: RunConfig, seed: int) -> str:
    return os.path.join(config.out, config.experiment, f"seed_{seed}")


def _layout_for(config: RunConfig):
    if config.env != "gridworld":
        return None
    if config.layout == "default":
        return GridLayout.default_bridge()
    return GridLayout.from_file(config.layout)


def train_one_seed(config: RunConfig, seed: int) -> str:
    """Train one seed to completion; returns the run directory.

    Evaluation (and a checkpoint) happens whenever the step counter crosses a
    multiple of eval_every, snapped to the iteration boundary; the actual
    step count is what lands in metrics.csv.
    """
    sys3 = config.sys3
    if config.constraint != "none":
        sys3 = System3Config.from_dict({**sys3.to_dict(), "constraint_file": config.constraint})
    run_dir = run_dir_for(config, seed)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    with open(os.path.join(run_dir, "config.snapshot"), "w") as fp:
        fp.write(snapshot_text(config, seed))

    trainer = Trainer(sys3, config.env, seed=seed, layout=_layout_for(config), d=config.d)
    next_eval_at = config.eval_every
    metrics_path = os.path.join(run_dir, "metrics.csv")
    train_log_path = os.path.join(run_dir, "train_log.csv")
    last = {}
    with open(metrics_path, "w") as metrics_fp, open(train_log_path, "w") as log_fp:
        metrics_fp.write(METRICS_HEADER + "\n")
        log_fp.write(TRAIN_LOG_HEADER + "\n")
        try:
            while trainer.steps < sys3.total_steps:
                last = trainer.train_iteration()
                log_fp.write(
                    ",".join(
                        [
                            str(last["iteration"]),
                            str(last["steps"]),
                            repr(last["mean_env_return"]),
                            str(last["episodes_completed"]),
                            repr(last["rc_rate"]),
                            repr(last["true_satisfaction_rate"]),
                            repr(last["disagreement_rate"]),
                            repr(last["forward_loss"]),
                            repr(last["policy_loss"]),
                            repr(last["value_loss"]),
                            repr(last["entropy"]),
                            repr(last["combined_loss"]),
                        ]
                    )
                    + "\n"
                )
                if trainer.steps >= next_eval_at:
                    ckpt = os.path.join(run_dir, "checkpoints", f"step_{trainer.steps:09d}")
                    trainer.save_checkpoint(ckpt)
                    ev = trainer.evaluate(config.eval_horizon)
                    metrics_fp.write(
                        _metrics_row(trainer.steps, trainer.iteration, ev, last, seed) + "\n"
                    )
                    metrics_fp.flush()
                    next_eval_at = (trainer.steps // config.eval_every + 1) * config.eval_every
        except TrainingDiverged as exc:
            # keep partial artifacts and surface the diagnostics
            with open(os.path.join(run_dir, "diverged.txt"), "w") as fp:
                fp.write(f"{exc}\n{exc.dump!r}\n")
            raise
    return run_dir


def run_train(config: RunConfig, parallel: bool = False) -> list[str]:
    """Train every seed; sequential by default, one process per seed if asked."""
    if parallel and len(config.seeds) > 1:
        with multiprocessing.Pool(min(len(config.seeds), os.cpu_count() or 1)) as pool:
            return pool.starmap(train_one_seed, [(config, s) for s in config.seeds])
    return [train_one_seed(config, seed) for seed in config.seeds]


# ---------------------------------------------------------------------------
# Standalone evaluation


def run_eval(
    checkpoint: str,
    eval_horizon: int = 1000,
    constraint: str | None = None,
    seed: int | None = None,
) -> tuple[EvalResult, str]:
    """Deterministic greedy evaluation of a saved checkpoint.

    Without an explicit seed this reproduces the training loop's own
    evaluation at the checkpointed step (same derived seed, same horizon).
    Returns the result and the metrics.csv-formatted row.
    """
    if eval_horizon < 1:
        raise ConfigError("eval_horizon must be >= 1")
    trainer = Trainer.load_checkpoint(checkpoint)
    bound = trainer.bound
    if constraint is not None and constraint != "none":
        if not os.path.exists(constraint):
            raise ConfigError(f"constraint file not found: {constraint}")
        formula = fl.load_constraint_file(constraint)
        bound = fl.bind(formula, trainer.registry, trainer.schema)
    elif constraint == "none":
        bound = None
    if seed is None:
        seed = (trainer._eval_seed_base + trainer._eval_count) % 2**62
    env = make_env(trainer.env_id, seed, trainer.layout, 1)
    ev = evaluate_policy(trainer.agent, env, bound, eval_horizon, seed, trainer.model)
    row = _metrics_row(trainer.steps, trainer.iteration, ev, {}, trainer.seed)
    return ev, row


# ---------------------------------------------------------------------------
# Curves


_METRIC_COLUMNS = {
    "mean_env_return": 2,
    "constraint_satisfaction": 3,
    "violations": 4,
    "forward_loss": 5,
    "policy_loss": 6,
    "entropy": 7,
}
_SCORE_METRICS = ("mean_env_return",)


def read_metrics_csv(path) -> tuple[list[list[float]], int]:
    """Rows of parsed floats plus the count of malformed rows skipped."""
    rows: list[list[float]] = []
    skipped = 0
    with open(path) as fp:
        header = fp.readline().strip()
        if header != METRICS_HEADER:
            raise ConfigError(f"{path}: unexpected metrics header")
        for line in fp:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != len(METRICS_HEADER.split(",")):
                skipped += 1
                continue
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                skipped += 1
    return rows, skipped


def emit_curves(
    metrics_paths,
    out_dir,
    window_scores: int = 20,
    window_errors: int = 10,
) -> tuple[list[str], int]:
    """Per-metric SVG chart (seed mean line, min-max band) plus smoothed CSV.

    Returns written file paths and the number of malformed rows skipped.
    The input CSVs are never modified.
    """
    if not metrics_paths:
        raise ConfigError("need at least one metrics.csv")
    os.makedirs(out_dir, exist_ok=True)
    all_rows = []
    skipped = 0
    for path in metrics_paths:
        rows, bad = read_metrics_csv(path)
        skipped += bad
        if rows:
            all_rows.append(rows)
    if not all_rows:
        raise ConfigError("no usable rows in the given metrics files")
    length = min(len(rows) for rows in all_rows)
    steps = np.array([r[0] for r in all_rows[0][:length]])
    written: list[str] = []
    for metric, col in _METRIC_COLUMNS.items():
        window = window_scores if metric in _SCORE_METRICS else window_errors
        smoothed = np.stack(
            [rolling_mean([r[col] for r in rows[:length]], window) for rows in all_rows]
        )
        mean = smoothed.mean(axis=0)
        lo = smoothed.min(axis=0)
        hi = smoothed.max(axis=0)
        csv_path = os.path.join(out_dir, f"curve_{metric}.csv")
        with open(csv_path, "w") as fp:
            fp.write("step,mean,min,max\n")
            for i in range(length):
                fp.write(
                    f"{int(steps[i])},{float(mean[i])!r},{float(lo[i])!r},{float(hi[i])!r}\n"
                )
        svg_path = os.path.join(out_dir, f"curve_{metric}.svg")
        with open(svg_path, "w") as fp:
            fp.write(
                line_chart_svg(
                    steps, mean, lo, hi,
                    title=f"{metric} (window {window}, {len(all_rows)} seeds)",
                    y_label=metric,
                )
            )
        written += [csv_path, svg_path]
    return written, skipped


# ---------------------------------------------------------------------------
# Value grid


def export_value_grid(checkpoint: str, out_csv: str, out_svg: str | None = None) -> np.ndarray:
    """Evaluate the value head at every grid cell; write CSV (+ SVG heatmap)."""
    trainer = Trainer.load_checkpoint(checkpoint)
    base = unwrap(make_env(trainer.env_id, 0, trainer.layout, 1))
    if not isinstance(base, GridWorld):
        raise ConfigError("value-grid export needs a gridworld checkpoint")
    w, h = base.layout.width, base.layout.height
    cells = np.array([[x, y] for y in range(h) for x in range(w)], dtype=np.float64)
    values = trainer.agent.values_batch(cells).reshape(h, w)
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    with open(out_csv, "w") as fp:
        fp.write("y," + ",".join(f"x{x}" for x in range(w)) + "\n")
        for y in range(h):
            fp.write(str(y) + "," + ",".join(repr(float(v)) for v in values[y]) + "\n")
    if out_svg is not None:
        with open(out_svg, "w") as fp:
            fp.write(heatmap_svg(values, title="state values V(s)"))
    return values


def read_value_grid(path) -> np.ndarray:
    """Parse a value-grid CSV back into an (h, w) array."""
    rows = []
    with open(path) as fp:
        fp.readline()
        for line in fp:
            parts = line.strip().split(",")
            if parts and parts[0] != "":
                rows.append([float(v) for v in parts[1:]])
    return np.array(rows)


# ---------------------------------------------------------------------------
# Constraint checking


def check_constraint(path: str, env_id: str, layout: str = "default") -> str:
    """Parse and bind a .fl file against an environment; returns a report.

    Raises ConfigError (missing file), FLSyntaxError or BindError on trouble.
    """
    if not os.path.exists(path):
        raise ConfigError(f"constraint file not found: {path}")
    formula = fl.load_constraint_file(path)
    layout_obj = None
    if env_id == "gridworld":
        layout_obj = GridLayout.default_bridge() if layout == "default" else GridLayout.from_file(layout)
    env = make_env(env_id, 0, layout_obj, 1)
    registry = default_registry(env)
    fl.bind(formula, registry, env.schema)
    sets = ", ".join(f"{n}[{len(registry.points(n))}]" for n in registry.names()) or "(none)"
    return (
        f"ok: {path}\n"
        f"formula: {fl.to_text(formula)}\n"
        f"schema: {', '.join(env.schema.names)} (size {env.schema.size})\n"
        f"registry sets: {sets}"
    )
