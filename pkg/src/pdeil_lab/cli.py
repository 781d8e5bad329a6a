"""Command-line experiment harness.

Subcommands::

    collect-demos      roll out the scripted expert and write a demo file
    run-pdeil          PDEIL runs over seeds x demo-episode counts
    run-bc             behavioral-cloning baseline on the same demos
    ablate-alpha       PDEIL runs over alphas x seeds
    tabular-verify     random-MDP check that the expert is optimal for the exact reward
    probe-correlation  PDEIL with recovered-vs-true reward scatter data per epoch
    train-expert       policy-gradient learner on the ground-truth reward

Configuration is a flat ``key=value`` file (``--config``); every key can be
overridden by ``--<key> value`` (dashes or underscores). ``--dump-config``
prints the effective configuration. Output goes to ``--out_dir`` or, if
unset, ``$PDEIL_OUT`` or ``./runs``.

Metrics CSV columns (one row per epoch):
  epoch                                 1-based epoch index
  env_steps_total                       demo + try + learner environment steps so far
  eval_return_mean                      ground-truth return, deterministic actions
  recovered_vs_true_reward_correlation  Pearson r over the try-phase trajectory
  misleading_clamp_events               learner reward evaluations clamped from above
  alpha                                 trade-off parameter of the run
  reward_mean, reward_max               recovered reward seen by the learner
  failed                                1 if the run aborted on non-finite gradients

Exit codes: 0 success, 1 run failure(s), 2 config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .envs import EnvKind
from .learn import BCConfig, LearnerConfig, PPOLearner, bc_train, evaluate_policy, params_to_json, policy_for_env, value_init
from .pdeil import (
    BufferMode,
    DemoSet,
    MetricsRow,
    MetricsWriter,
    PdeilConfig,
    collect_expert_demos,
    read_metrics,
    run_pdeil,
)
from .tabular import theorem2_sweep

log = logging.getLogger("pdeil_lab")

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2

# Per-environment presets. Everything not listed takes the dataclass default.
ENV_PRESETS = {
    EnvKind.CARTPOLE: {"n_epochs": 50, "learn_steps": 4, "threshold": 400.0},
    EnvKind.PENDULUM: {"n_epochs": 100, "learn_steps": 4, "threshold": -400.0},
}

PDEIL_KEYS = {f.name: f for f in fields(PdeilConfig) if f.name not in ("learner",)}
LEARNER_KEYS = {f.name: f for f in fields(LearnerConfig)}
BC_KEYS = {"bc_epochs": "epochs", "bc_learning_rate": "learning_rate"}
EXTRA_KEYS = {
    "seeds": "",
    "alphas": "0.0,0.5,1.0",
    "demo_episode_counts": "",
    "threshold": "",
    "workers": "1",
    "trials": "500",
    "min_states": "2",
    "max_states": "6",
    "min_actions": "2",
    "max_actions": "4",
    "gamma_min": "0.5",
    "gamma_max": "0.99",
    "brute_force_limit": "1024",
    "policies_per_mdp": "100",
    "probe_epochs": "13,14,15,16",
    "demo_file": "",
    "out_dir": "",
    "train_iterations": "100",
}


class ConfigError(ValueError):
    pass


def _parse_bool(v: str) -> bool:
    low = str(v).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _default_config(env: EnvKind) -> dict:
    cfg = {}
    base = PdeilConfig(env=env)
    for name in PDEIL_KEYS:
        v = getattr(base, name)
        cfg[name] = v.value if isinstance(v, (EnvKind, BufferMode)) else v
    for name in LEARNER_KEYS:
        cfg[name] = getattr(base.learner, name)
    bc = BCConfig()
    cfg["bc_epochs"] = bc.epochs
    cfg["bc_learning_rate"] = bc.learning_rate
    cfg.update(EXTRA_KEYS)
    cfg.update(ENV_PRESETS[env])
    return cfg


def _coerce(key: str, value, template):
    if isinstance(value, str):
        value = value.strip()
    try:
        if isinstance(template, bool):
            return _parse_bool(value) if isinstance(value, str) else bool(value)
        if isinstance(template, int):
            return int(value)
        if isinstance(template, float):
            return float(value)
        if isinstance(template, tuple):
            if isinstance(value, str):
                return tuple(int(x) for x in value.split(",") if x.strip())
            return tuple(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve_config(file_values: dict, overrides: dict) -> dict:
    """Defaults (env presets) < config file < command-line overrides."""
    raw = {**file_values, **overrides}
    env = EnvKind.parse(raw.get("env", EnvKind.CARTPOLE.value))
    cfg = _default_config(env)
    unknown = set(raw) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    for k, v in raw.items():
        cfg[k] = _coerce(k, v, cfg[k])
    cfg["env"] = env.value
    return cfg


def _list(value, cast=float) -> list:
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(x) for x in str(value).split(",") if x.strip()]


def seed_list(cfg: dict) -> list[int]:
    """``seeds`` (comma list) if given, else the single ``seed``."""
    return _list(cfg["seeds"], int) if cfg["seeds"] else [int(cfg["seed"])]


def pdeil_config_from(cfg: dict, **changes) -> PdeilConfig:
    c = {**cfg, **changes}
    learner = LearnerConfig(**{k: c[k] for k in LEARNER_KEYS})
    return PdeilConfig(learner=learner, **{k: c[k] for k in PDEIL_KEYS})


def config_hash(pc: PdeilConfig) -> str:
    """Hash of everything except the seed, so seeds of one config group together."""
    d = asdict(replace(pc, seed=0))
    d["env"] = pc.env.value
    d["buffer_mode"] = pc.buffer_mode.value
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:12]


def output_root(cfg: dict) -> Path:
    return Path(cfg.get("out_dir") or os.environ.get("PDEIL_OUT") or "runs")


@dataclass
class RunSummary:
    config_hash: str
    env: str
    alpha: float
    demo_episodes: int
    seed: int
    final_return: float
    best_return: float
    epochs_to_threshold: Optional[int]
    failed: bool
    metrics_path: str = ""
    method: str = "pdeil"

    def as_row(self) -> dict:
        d = asdict(self)
        d["epochs_to_threshold"] = "" if self.epochs_to_threshold is None else self.epochs_to_threshold
        d["failed"] = int(self.failed)
        return d


def summarize(pc: PdeilConfig, metrics: list, threshold: Optional[float], path="", failed=False) -> RunSummary:
    returns = [m.eval_return_mean if isinstance(m, MetricsRow) else m["eval_return_mean"] for m in metrics]
    finite = [r for r in returns if not math.isnan(r)]
    hit = None
    if threshold is not None:
        hit = next((i + 1 for i, r in enumerate(returns) if r >= threshold), None)
    return RunSummary(
        config_hash(pc),
        pc.env.value,
        pc.alpha,
        pc.demo_episodes,
        pc.seed,
        finite[-1] if finite else float("nan"),
        max(finite) if finite else float("nan"),
        hit,
        failed,
        str(path),
    )


def _demo_path(root: Path, env: EnvKind, episodes: int, seed: int) -> Path:
    return root / "demos" / f"{env.value}_ep{episodes}_seed{seed}.jsonl"


def collect_demos(env, episodes: int, seed: int, path) -> DemoSet:
    demos = collect_expert_demos(EnvKind.parse(env), episodes, seed)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    demos.save(path)
    return demos


def _run_one(job) -> RunSummary:
    pc, metrics_path, threshold, demo_file, ckpt_dir = job
    demos = DemoSet.load(demo_file) if demo_file else None
    try:
        res = run_pdeil(pc, demos=demos, metrics_path=metrics_path, checkpoint_dir=ckpt_dir)
    except Exception:
        log.exception("run failed: %s seed %d", pc.env.value, pc.seed)
        rows = read_metrics(metrics_path) if Path(metrics_path).exists() else []
        return summarize(pc, rows, threshold, metrics_path, failed=True)
    return summarize(pc, res.metrics, threshold, metrics_path, res.failed)


@dataclass
class ExperimentSpec:
    base: dict
    alphas: list
    seeds: list
    demo_episode_counts: list
    out_dir: Path
    name: str = "experiment"

    def __post_init__(self):
        if not (self.alphas and self.seeds and self.demo_episode_counts):
            raise ConfigError("sweep axes must be nonempty")


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[RunSummary]:
    """Run the cross product of sweep axes; write per-run metrics, summaries and aggregates."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threshold = spec.base.get("threshold")
    threshold = float(threshold) if threshold not in ("", None) else None
    jobs = []
    for alpha in spec.alphas:
        for episodes in spec.demo_episode_counts:
            for seed in spec.seeds:
                pc = pdeil_config_from(spec.base, alpha=alpha, demo_episodes=episodes, seed=seed)
                tag = f"{pc.env.value}_alpha{alpha:g}_ep{episodes}_seed{seed}"
                demo_file = spec.base.get("demo_file") or ""
                ckpt = out / "checkpoints" / tag if pc.checkpoint_every else None
                jobs.append((pc, str(out / "metrics" / f"{tag}.csv"), threshold, demo_file, ckpt))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_one, jobs))
    else:
        summaries = [_run_one(j) for j in jobs]
    write_summaries(out / "summary.csv", summaries)
    aggregate_runs(summaries, spec.base["n_epochs"], out / "aggregate.csv")
    return summaries


def write_summaries(path, summaries: list[RunSummary]) -> None:
    with open(path, "w", newline="") as f:
        names = [f.name for f in fields(RunSummary)]
        w = csv.DictWriter(f, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for s in summaries:
            row = s.as_row()
            if row["metrics_path"]:
                # relative paths keep the file identical across output roots
                row["metrics_path"] = os.path.relpath(row["metrics_path"], Path(path).parent)
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


AGG_COLUMNS = ("config_hash", "alpha", "demo_episodes", "epoch", "n_runs", "n_failed", "return_mean", "return_std", "corr_mean", "corr_std")


def _mean_std(values: list) -> tuple[float, float]:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return float("nan"), float("nan")
    arr = np.asarray(vals)
    if np.all(arr == arr[0]):
        return float(arr[0]), 0.0  # avoid round-off noise for identical runs
    return float(arr.mean()), float(arr.std())


def aggregate_runs(summaries: list[RunSummary], n_epochs: int, path) -> list[dict]:
    """Mean and std across seeds per (config, epoch).

    Every config gets ``n_epochs`` rows; epochs missing from failed runs are
    counted in ``n_failed`` instead of being dropped.
    """
    groups: dict = {}
    for s in summaries:
        groups.setdefault((s.config_hash, s.alpha, s.demo_episodes), []).append(s)
    rows = []
    for (h, alpha, episodes), runs in groups.items():
        per_run = [read_metrics(r.metrics_path) if r.metrics_path and Path(r.metrics_path).exists() else [] for r in runs]
        for epoch in range(1, n_epochs + 1):
            present = [m[epoch - 1] for m in per_run if len(m) >= epoch]
            n_failed = sum(1 for r, m in zip(runs, per_run) if r.failed and len(m) < epoch)
            rm, rs = _mean_std([p["eval_return_mean"] for p in present])
            cm, cs = _mean_std([p["recovered_vs_true_reward_correlation"] for p in present])
            rows.append(
                {
                    "config_hash": h,
                    "alpha": alpha,
                    "demo_episodes": episodes,
                    "epoch": epoch,
                    "n_runs": len(present),
                    "n_failed": n_failed,
                    "return_mean": rm,
                    "return_std": rs,
                    "corr_mean": cm,
                    "corr_std": cs,
                }
            )
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=AGG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


def run_bc_baseline(env, demos: DemoSet, seed: int, cfg: BCConfig = BCConfig(), eval_episodes: int = 5, metrics_path=None, threshold=None) -> RunSummary:
    """Train behavioral cloning and evaluate it with the PDEIL evaluation protocol."""
    kind = EnvKind.parse(env)
    policy = bc_train(demos.states, demos.actions, kind, cfg, seed)
    eval_rng = np.random.default_rng([seed, 0xBC])
    ret = float(np.mean(evaluate_policy(kind, policy, eval_episodes, eval_rng)))
    row = MetricsRow(1, len(demos), ret, float("nan"), 0, float("nan"))
    if metrics_path:
        w = MetricsWriter(metrics_path)
        w.write(row)
        w.close()
    pc = PdeilConfig(env=kind, seed=seed, demo_episodes=len(demos.expert_returns))
    summary = summarize(pc, [row], threshold, metrics_path or "")
    summary.method = "bc"
    summary.config_hash = hashlib.sha256(json.dumps([kind.value, asdict(cfg)]).encode()).hexdigest()[:12]
    return summary


# --------------------------------------------------------------------------
# subcommands


def cmd_collect_demos(cfg: dict) -> int:
    root = output_root(cfg)
    seeds = seed_list(cfg)
    for seed in seeds:
        path = Path(cfg["demo_file"]) if cfg["demo_file"] and len(seeds) == 1 else _demo_path(root, EnvKind.parse(cfg["env"]), cfg["demo_episodes"], seed)
        demos = collect_demos(cfg["env"], cfg["demo_episodes"], seed, path)
        print(f"{path}: {len(demos)} pairs, expert return mean {demos.return_stats['mean']:.2f}")
    return EXIT_OK


def _sweep(cfg: dict, alphas: list, name: str) -> int:
    counts = _list(cfg["demo_episode_counts"], int) if cfg["demo_episode_counts"] else [cfg["demo_episodes"]]
    spec = ExperimentSpec(cfg, alphas, seed_list(cfg), counts, output_root(cfg) / name, name)
    summaries = run_experiment(spec, workers=int(cfg["workers"]))
    for s in summaries:
        print(
            f"{s.env} alpha={s.alpha:g} demos={s.demo_episodes} seed={s.seed}: "
            f"final {s.final_return:.1f} best {s.best_return:.1f} "
            f"to-threshold {s.epochs_to_threshold} failed {int(s.failed)}"
        )
    print(f"wrote {spec.out_dir}")
    return EXIT_RUN_FAILURE if any(s.failed for s in summaries) else EXIT_OK


def cmd_run_pdeil(cfg: dict) -> int:
    return _sweep(cfg, [cfg["alpha"]], "run-pdeil")


def cmd_ablate_alpha(cfg: dict) -> int:
    return _sweep(cfg, _list(cfg["alphas"]), "ablate-alpha")


def cmd_run_bc(cfg: dict) -> int:
    root = output_root(cfg) / "run-bc"
    bc = BCConfig(epochs=cfg["bc_epochs"], learning_rate=cfg["bc_learning_rate"])
    threshold = float(cfg["threshold"]) if cfg["threshold"] != "" else None
    summaries = []
    for seed in seed_list(cfg):
        demos = DemoSet.load(cfg["demo_file"]) if cfg["demo_file"] else collect_expert_demos(EnvKind.parse(cfg["env"]), cfg["demo_episodes"], seed)
        path = root / "metrics" / f"{cfg['env']}_bc_ep{cfg['demo_episodes']}_seed{seed}.csv"
        s = run_bc_baseline(cfg["env"], demos, seed, bc, cfg["eval_episodes"], path, threshold)
        summaries.append(s)
        print(f"{s.env} BC demos={s.demo_episodes} seed={seed}: return {s.final_return:.1f}")
    write_summaries(root / "summary.csv", summaries)
    return EXIT_OK


def cmd_tabular_verify(cfg: dict) -> int:
    root = output_root(cfg) / "tabular-verify"
    root.mkdir(parents=True, exist_ok=True)
    res = theorem2_sweep(
        int(cfg["trials"]),
        seed_list(cfg)[0],
        alpha=cfg["alpha"],
        min_states=int(cfg["min_states"]),
        max_states=int(cfg["max_states"]),
        min_actions=int(cfg["min_actions"]),
        max_actions=int(cfg["max_actions"]),
        gamma_range=(float(cfg["gamma_min"]), float(cfg["gamma_max"])),
        brute_force_limit=int(cfg["brute_force_limit"]),
        policies_per_mdp=int(cfg["policies_per_mdp"]),
    )
    keys = sorted({k for r in res.rows for k in r}, key=lambda k: (k != "trial", k))
    with open(root / "trials.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in res.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    status = "PASS" if res.passed else "FAIL"
    print(
        f"{status}: expert optimal in {res.matches}/{res.trials} trials; "
        f"brute force agrees {res.brute_force_agree}/{res.brute_force_checked}; "
        f"J-ordering violations {res.j_violations}; "
        f"fixed-agent reward optimum equals expert in {res.fixed_agent_matches}/{res.trials}"
    )
    return EXIT_OK if res.passed else EXIT_RUN_FAILURE


def cmd_probe_correlation(cfg: dict) -> int:
    root = output_root(cfg) / "probe-correlation"
    root.mkdir(parents=True, exist_ok=True)
    wanted = set(_list(cfg["probe_epochs"], int))
    failed = False
    for seed in seed_list(cfg):
        pc = pdeil_config_from(cfg, seed=seed)
        scatter = root / f"{pc.env.value}_alpha{pc.alpha:g}_seed{seed}_scatter.csv"
        with open(scatter, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "true_reward", "recovered_reward"])

            def hook(epoch, reward_model, traj):
                if epoch in wanted:
                    rec, _ = reward_model.evaluate(traj.states, traj.actions)
                    for t, r in zip(traj.rewards, rec):
                        w.writerow([epoch, repr(float(t)), repr(float(r))])

            res = run_pdeil(pc, metrics_path=root / f"{pc.env.value}_alpha{pc.alpha:g}_seed{seed}.csv", on_epoch=hook)
        failed |= res.failed
        for m in res.metrics:
            if m.epoch in wanted:
                print(f"seed {seed} epoch {m.epoch}: correlation {m.recovered_vs_true_reward_correlation:.3f}")
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def cmd_train_expert(cfg: dict) -> int:
    """Cross-check: train the learner on the ground-truth reward."""
    pc = pdeil_config_from(cfg)
    kind = pc.env
    seed = seed_list(cfg)[0]
    learner = PPOLearner(policy_for_env(kind, seed, pc.hidden, pc.init_log_std), value_init(kind.state_dim, seed + 1, pc.hidden), pc.learner, seed)
    rng = np.random.default_rng([seed, 0xE7])
    for it in range(1, int(cfg["train_iterations"]) + 1):
        batch, _ = learner.collect(kind, pc.learner.rollout_steps)
        learner.update(batch)
        if it % 10 == 0:
            ret = float(np.mean(evaluate_policy(kind, learner.policy, pc.eval_episodes, rng)))
            print(f"iteration {it}: eval return {ret:.1f}")
    root = output_root(cfg) / "train-expert"
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{kind.value}_seed{seed}_policy.json").write_text(params_to_json(learner.policy))
    return EXIT_OK


COMMANDS = {
    "collect-demos": cmd_collect_demos,
    "run-pdeil": cmd_run_pdeil,
    "run-bc": cmd_run_bc,
    "ablate-alpha": cmd_ablate_alpha,
    "tabular-verify": cmd_tabular_verify,
    "probe-correlation": cmd_probe_correlation,
    "train-expert": cmd_train_expert,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdeil-lab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _split_overrides(rest: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"missing value for {tok}")
            val = rest[i + 1]
            i += 1
        out[key.replace("-", "_")] = val
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(file_values, _split_overrides(rest))
        if args.dump_config:
            for k in sorted(cfg):
                v = cfg[k]
                if isinstance(v, tuple):
                    v = ",".join(map(str, v))
                print(f"{k}={v}")
            return EXIT_OK
        pdeil_config_from(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
