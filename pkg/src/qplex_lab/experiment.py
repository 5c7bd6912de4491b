"""Run one configured experiment to disk and summarise seed sweeps."""
from __future__ import annotations

import csv
import math
import os
import subprocess
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .dataset import make_uniform_episodes, read_dataset, write_dataset
from .envs import MatrixGame, make_env
from .errors import UsageError
from .trainer import EpsilonSchedule, Learner, LearnerConfig, LogRow, RunLog, train_offline, train_online

OUT_ROOT_ENV = "QPLEX_LAB_OUT"
CURVE_HEADER = ["step", "episode", "return", "q_inf_norm", "loss"]


def version_string() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / f"{cfg.env.replace('/', '-')}-{cfg.algo}-seed{cfg.seed}"


def learner_config(cfg: ExperimentConfig) -> LearnerConfig:
    return LearnerConfig(algo=cfg.algo, gamma=cfg.gamma, lr=cfg.lr, batch_size=cfg.batch_size,
                         target_update_episodes=cfg.target_update_episodes, hidden_dim=cfg.agent_hidden,
                         recurrent=cfg.recurrent, lambda_layers=cfg.lambda_layers, lambda_heads=cfg.lambda_heads,
                         mixer_hidden=cfg.mixer_hidden, time_feature=cfg.time_feature)


def _num(x: float) -> str:
    return repr(float(x))


def _curve_line(row: LogRow) -> list[str]:
    return [str(row.step), str(row.episode), _num(row.mean_return), _num(row.q_inf_norm), _num(row.loss)]


def load_offline_dataset(cfg: ExperimentConfig, env, out: Path):
    if cfg.dataset:
        name, spec, episodes = read_dataset(cfg.dataset)
        if name != env.name or spec != env.spec:
            raise UsageError(f"dataset: {cfg.dataset} was collected on {name}, not {env.name}")
        return episodes
    seed = cfg.seed if cfg.dataset_seed < 0 else cfg.dataset_seed
    episodes = make_uniform_episodes(env, cfg.dataset_episodes, seed, cfg.dataset_mode == "exhaustive")
    write_dataset(out / "dataset.txt", env.name, env.spec, episodes)
    return episodes


def run_experiment(cfg: ExperimentConfig) -> tuple[RunLog, Path]:
    """Train per ``cfg`` and write ``curve.csv``, ``meta.txt`` and (matrix games) ``qtable.csv``.

    ``curve.csv`` is flushed after every evaluation so an aborted run leaves a
    valid prefix behind.
    """
    cfg.validate()
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env, gamma=cfg.gamma)
    rng = np.random.default_rng(cfg.seed)
    learner = Learner(env, learner_config(cfg), rng)
    stop = None if math.isnan(cfg.stop_at_return) else cfg.stop_at_return
    with open(out / "meta.txt", "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(cfg.as_lines() + [f"version={version_string()}"]) + "\n")

    with open(out / "curve.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        fh.flush()

        def on_row(row: LogRow) -> None:
            writer.writerow(_curve_line(row))
            fh.flush()

        if cfg.regime == "online":
            eps = EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end, cfg.anneal_steps, cfg.epsilon)
            run = train_online(env, learner, rng, cfg.total_env_steps, eps, cfg.buffer_capacity,
                               cfg.updates_per_episode, cfg.eval_every, cfg.eval_episodes, stop, on_row)
        else:
            dataset = load_offline_dataset(cfg, env, out)
            run = train_offline(env, learner, rng, dataset, cfg.total_iterations, cfg.updates_per_episode,
                                cfg.eval_every, cfg.eval_episodes, stop, on_row)

    if isinstance(env, MatrixGame) and run.q_table is not None:
        write_qtable(out / "qtable.csv", run.q_table)
    return run, out


def write_qtable(path, table: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(table):
            writer.writerow([_num(x) for x in row])


def read_qtable(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh)])


def read_curve(path) -> list[dict]:
    """Parse a ``curve.csv``; any structural problem raises :class:`UsageError` naming the file."""
    path = Path(path)
    try:
        with open(path, encoding="ascii") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"{path}: cannot read curve ({exc.strerror})") from None
    if not rows or rows[0] != CURVE_HEADER:
        raise UsageError(f"{path}: missing or wrong curve header")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(CURVE_HEADER):
            raise UsageError(f"{path}:{i}: expected {len(CURVE_HEADER)} columns")
        try:
            out.append({"step": int(row[0]), "episode": int(row[1]), "return": float(row[2]),
                        "q_inf_norm": float(row[3]), "loss": float(row[4])})
        except ValueError:
            raise UsageError(f"{path}:{i}: malformed number") from None
    return out


def _run_algo(run_dir: Path) -> str:
    meta = run_dir / "meta.txt"
    if meta.exists():
        for line in meta.read_text(encoding="ascii").splitlines():
            if line.startswith("algo="):
                return line.split("=", 1)[1]
    return run_dir.name


SUMMARY_HEADER = ["algo", "step", "n_runs", "return_median", "return_p25", "return_p75",
                  "q_inf_norm_median", "q_inf_norm_p25", "q_inf_norm_p75"]


def summarize(curves_by_algo: dict[str, list[list[dict]]]) -> list[list]:
    """Median and 25/75 percentiles (linear interpolation) per algo and eval step."""
    table = []
    for algo in sorted(curves_by_algo):
        by_step: dict[int, list[dict]] = defaultdict(list)
        for curve in curves_by_algo[algo]:
            for row in curve:
                by_step[row["step"]].append(row)
        for step in sorted(by_step):
            rows = by_step[step]
            ret = np.array([r["return"] for r in rows])
            qn = np.array([r["q_inf_norm"] for r in rows])
            table.append([algo, step, len(rows)] + [float(np.percentile(ret, p)) for p in (50, 25, 75)]
                         + [float(np.percentile(qn, p)) for p in (50, 25, 75)])
    return table


def compare_runs(run_dirs, report_path) -> list[list]:
    if not run_dirs:
        raise UsageError("compare needs at least one run directory")
    curves: dict[str, list[list[dict]]] = defaultdict(list)
    for d in map(Path, run_dirs):
        curves[_run_algo(d)].append(read_curve(d / "curve.csv"))
    table = summarize(curves)
    with open(report_path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for row in table:
            writer.writerow(row[:3] + [_num(x) for x in row[3:]])
    return table
