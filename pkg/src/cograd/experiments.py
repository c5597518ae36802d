"""Config-driven experiment orchestration.

One JSON config describes a full study: a dataset (synthetic or CSV), a
model, training settings, a list of gradient strategies, and a list of
seeds. Every (strategy x seed) run writes its own directory; a comparison
table aggregates final test metrics across seeds with deltas against the
plain-sum baseline.

Per-seed derivation keeps comparisons paired: run seed s regenerates the
synthetic dataset with ``data seed + s``, initializes the net with
``model seed + s``, and drives batching with s itself, so every strategy
sees identical data and initialization at the same s.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, DivergenceError
from .gradmod import (
    EXACT_HVP_PARAM_BUDGET,
    StrategyConfig,
    approx_hvp,
    transfer_exact,
    transfer_first_order,
)
from .model import (
    SharedBottomNet,
    backward_task,
    forward,
    init_net,
    load_net,
    save_net,
    task_loss,
    theta_grad_fn,
    theta_loss_fn,
)
from .tasks_data import (
    MultiTaskDataset,
    SyntheticTaskConfig,
    generate_synthetic,
    load_csv,
    split,
)
from .tensor_core import finite_diff_hvp
from .trainer import (
    ProbeConfig,
    TrainConfig,
    _evaluate_split,
    probe_harmonization,
    save_metrics,
    train,
)

_REQUIRED = object()

_TRAIN_KEYS = (
    "steps",
    "batch_size",
    "learning_rate",
    "loss_weights",
    "eval_every",
    "optimizer",
    "shuffle",
    "transference_every",
)


def _get(section: dict, key: str, path: str, default: Any = _REQUIRED) -> Any:
    if key in section:
        return section[key]
    if default is _REQUIRED:
        raise ConfigError(f"{path}.{key}: required field missing")
    return default


def _reject_unknown(section: dict, allowed: tuple[str, ...], path: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")


@dataclass(frozen=True)
class DataConfig:
    synthetic: SyntheticTaskConfig | None
    csv_path: Path | None
    csv_has_group: bool
    n_tasks: int
    split: tuple[float, float, float]


@dataclass(frozen=True)
class ModelConfig:
    shared_widths: tuple[int, ...]
    head_widths: tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    model: ModelConfig
    train_kwargs: dict
    strategies: tuple[StrategyConfig, ...]
    strategy_labels: tuple[str, ...]
    seeds: tuple[int, ...]
    output_dir: Path
    validate_checkpoints: tuple[int, ...]
    probe: ProbeConfig


def _resolve_data(raw: dict, base_dir: Path) -> DataConfig:
    _reject_unknown(raw, ("synthetic", "csv", "split"), "data")
    proportions = tuple(float(p) for p in _get(raw, "split", "data", [4, 1, 1]))
    if len(proportions) != 3 or any(p <= 0 for p in proportions):
        raise ConfigError("data.split: expected three positive proportions")
    if ("synthetic" in raw) == ("csv" in raw):
        raise ConfigError("data: exactly one of 'synthetic' or 'csv' is required")
    if "synthetic" in raw:
        section = raw["synthetic"]
        _reject_unknown(
            section,
            ("n_samples", "n_features", "task_angle_deg", "positive_rates", "label_noise", "seed"),
            "data.synthetic",
        )
        try:
            cfg = SyntheticTaskConfig(
                n_samples=int(_get(section, "n_samples", "data.synthetic")),
                n_features=int(_get(section, "n_features", "data.synthetic")),
                task_angle_deg=float(_get(section, "task_angle_deg", "data.synthetic")),
                positive_rates=tuple(_get(section, "positive_rates", "data.synthetic")),
                label_noise=float(_get(section, "label_noise", "data.synthetic", 0.0)),
                seed=int(_get(section, "seed", "data.synthetic", 0)),
            )
        except ConfigError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None
        return DataConfig(cfg, None, False, len(cfg.positive_rates), proportions)
    section = raw["csv"]
    _reject_unknown(section, ("path", "n_tasks", "has_group_column"), "data.csv")
    path = Path(_get(section, "path", "data.csv"))
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"data.csv.path: file not found: {path}")
    n_tasks = int(_get(section, "n_tasks", "data.csv"))
    if n_tasks < 1:
        raise ConfigError("data.csv.n_tasks: must be at least 1")
    return DataConfig(
        None, path, bool(_get(section, "has_group_column", "data.csv", False)), n_tasks, proportions
    )


def _resolve_model(raw: dict) -> ModelConfig:
    _reject_unknown(raw, ("shared_widths", "head_widths", "seed"), "model")
    shared = tuple(int(w) for w in _get(raw, "shared_widths", "model"))
    heads = tuple(int(w) for w in _get(raw, "head_widths", "model"))
    if not shared or any(w <= 0 for w in shared):
        raise ConfigError("model.shared_widths: must be non-empty positive widths")
    if not heads or any(w <= 0 for w in heads):
        raise ConfigError("model.head_widths: must be non-empty positive widths")
    return ModelConfig(shared, heads, int(_get(raw, "seed", "model", 0)))


def _resolve_strategy(raw: dict, index: int) -> StrategyConfig:
    path = f"strategies[{index}]"
    _reject_unknown(raw, ("kind", "gammas", "lambda", "relax", "per_layer"), path)
    try:
        return StrategyConfig(
            kind=_get(raw, "kind", path),
            gammas=tuple(float(g) for g in raw.get("gammas", ())),
            lam=float(raw.get("lambda", 1.0)),
            relax=float(raw.get("relax", 0.5)),
            per_layer=bool(raw.get("per_layer", False)),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _strategy_labels(strategies: tuple[StrategyConfig, ...]) -> tuple[str, ...]:
    labels = []
    seen: dict[str, int] = {}
    for s in strategies:
        seen[s.kind] = seen.get(s.kind, 0) + 1
        labels.append(s.kind if seen[s.kind] == 1 else f"{s.kind}_{seen[s.kind]}")
    return tuple(labels)


def resolve_config(raw: dict, base_dir: Path) -> ExperimentConfig:
    """Validate a parsed config dict; errors name the offending field path."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(
        raw,
        ("data", "model", "train", "strategies", "seeds", "output_dir", "validate", "probe"),
        "config",
    )
    for key in ("data", "model", "train", "strategies", "seeds", "output_dir"):
        if key not in raw:
            raise ConfigError(f"{key}: required section missing")

    data = _resolve_data(raw["data"], base_dir)
    model = _resolve_model(raw["model"])

    train_raw = dict(raw["train"])
    _reject_unknown(train_raw, _TRAIN_KEYS, "train")
    if isinstance(train_raw.get("loss_weights"), list):
        train_raw["loss_weights"] = tuple(train_raw["loss_weights"])
    train_kwargs = {k: train_raw[k] for k in _TRAIN_KEYS if k in train_raw}

    strategies = tuple(_resolve_strategy(s, i) for i, s in enumerate(raw["strategies"]))
    if not strategies:
        raise ConfigError("strategies: at least one strategy required")
    seeds = tuple(int(s) for s in raw["seeds"])
    if not seeds:
        raise ConfigError("seeds: at least one seed required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicate seeds would overwrite each other's outputs")

    # Validate training fields and strategy/task compatibility up front, so
    # bad configs fail before any run starts.
    try:
        TrainConfig(strategy=strategies[0], seed=0, **train_kwargs)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from None
    for i, s in enumerate(strategies):
        try:
            s.check_tasks(data.n_tasks)
        except ConfigError as exc:
            raise ConfigError(f"strategies[{i}]: {exc}") from None

    output_dir = Path(raw["output_dir"])
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    checkpoints: tuple[int, ...] = ()
    if "validate" in raw:
        _reject_unknown(raw["validate"], ("checkpoints",), "validate")
        checkpoints = tuple(int(c) for c in raw["validate"].get("checkpoints", ()))
        if any(c < 0 for c in checkpoints):
            raise ConfigError("validate.checkpoints: steps must be non-negative")

    probe = ProbeConfig()
    if "probe" in raw:
        section = dict(raw["probe"])
        _reject_unknown(
            section,
            ("grad_tol", "max_iters", "n_bins", "bin_halfwidth", "band", "tasks"),
            "probe",
        )
        if "tasks" in section:
            section["tasks"] = tuple(int(t) for t in section["tasks"])
        try:
            probe = dataclasses.replace(probe, **section)
        except TypeError as exc:
            raise ConfigError(f"probe: {exc}") from None

    return ExperimentConfig(
        data=data,
        model=model,
        train_kwargs=train_kwargs,
        strategies=strategies,
        strategy_labels=_strategy_labels(strategies),
        seeds=seeds,
        output_dir=output_dir,
        validate_checkpoints=checkpoints,
        probe=probe,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return resolve_config(raw, path.parent.resolve())


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical dict echo of a resolved config (embedded in summaries)."""
    if cfg.data.synthetic is not None:
        data: dict[str, Any] = {"synthetic": dataclasses.asdict(cfg.data.synthetic)}
        data["synthetic"]["positive_rates"] = list(cfg.data.synthetic.positive_rates)
    else:
        data = {
            "csv": {
                "path": str(cfg.data.csv_path),
                "n_tasks": cfg.data.n_tasks,
                "has_group_column": cfg.data.csv_has_group,
            }
        }
    data["split"] = list(cfg.data.split)
    strategies = []
    for s in cfg.strategies:
        strategies.append(
            {
                "kind": s.kind,
                "gammas": list(s.gammas),
                "lambda": s.lam,
                "relax": s.relax,
                "per_layer": s.per_layer,
            }
        )
    return {
        "data": data,
        "model": {
            "shared_widths": list(cfg.model.shared_widths),
            "head_widths": list(cfg.model.head_widths),
            "seed": cfg.model.seed,
        },
        "train": dict(cfg.train_kwargs),
        "strategies": strategies,
        "seeds": list(cfg.seeds),
        "output_dir": str(cfg.output_dir),
    }


def build_dataset(data: DataConfig, run_seed: int) -> MultiTaskDataset:
    """Dataset for one run; synthetic data is re-drawn per run seed."""
    if data.synthetic is not None:
        cfg = dataclasses.replace(data.synthetic, seed=data.synthetic.seed + run_seed)
        return generate_synthetic(cfg)
    return load_csv(data.csv_path, data.n_tasks, data.csv_has_group)


@dataclass
class RunResult:
    strategy_label: str
    seed: int
    metric: str
    test_values: tuple[float, ...]
    val_values: tuple[float, ...]
    theta_params: int
    wall_time_s: float
    run_dir: Path | None


def _fresh_strategy(template: StrategyConfig) -> StrategyConfig:
    return dataclasses.replace(template, state={})


def run_one(
    cfg: ExperimentConfig,
    strategy_idx: int,
    seed: int,
    output_root: Path | None = None,
) -> RunResult:
    """Train one (strategy, seed) cell and write its artifacts."""
    label = cfg.strategy_labels[strategy_idx]
    ds = build_dataset(cfg.data, seed)
    splits = split(ds, cfg.data.split)
    net = init_net(
        input_dim=ds.n_features,
        shared_widths=list(cfg.model.shared_widths),
        head_widths=list(cfg.model.head_widths),
        num_tasks=ds.n_tasks,
        seed=cfg.model.seed + seed,
    )
    theta_params = len(net.get_theta())
    train_cfg = TrainConfig(
        strategy=_fresh_strategy(cfg.strategies[strategy_idx]), seed=seed, **cfg.train_kwargs
    )
    started = time.perf_counter()
    try:
        net, log = train(net, splits, train_cfg)
    except DivergenceError as exc:
        raise DivergenceError(f"run {label}/seed {seed}: {exc}") from exc
    wall = time.perf_counter() - started

    final_val = _evaluate_split(net, splits.val)
    final_test = _evaluate_split(net, splits.test)

    run_dir = None
    if output_root is not None:
        run_dir = output_root / label / str(seed)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_net(net, run_dir / "checkpoint.json")
        save_metrics(log, run_dir)
        summary = {
            "strategy": label,
            "seed": seed,
            "metric": final_test.metric,
            "final_test": {f"task_{t}": v for t, v in enumerate(final_test.values)},
            "final_val": {f"task_{t}": v for t, v in enumerate(final_val.values)},
            "theta_params": theta_params,
            "wall_time_s": wall,
            "config": config_to_dict(cfg),
        }
        (run_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
        )
    return RunResult(
        strategy_label=label,
        seed=seed,
        metric=final_test.metric,
        test_values=final_test.values,
        val_values=final_val.values,
        theta_params=theta_params,
        wall_time_s=wall,
        run_dir=run_dir,
    )


def _run_cell(args: tuple) -> RunResult:
    cfg, strategy_idx, seed, output_root = args
    return run_one(cfg, strategy_idx, seed, output_root)


def _execute_runs(
    cfg: ExperimentConfig, output_root: Path, jobs: int = 1
) -> list[RunResult]:
    cells = [
        (cfg, si, seed, output_root)
        for si in range(len(cfg.strategies))
        for seed in cfg.seeds
    ]
    if jobs <= 1:
        return [_run_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, cells))


def _write_comparison(
    results: list[RunResult], labels: tuple[str, ...], n_tasks: int, path: Path
) -> None:
    """Mean/std of final test metrics per strategy, with deltas vs the sum
    baseline (or the first strategy when no sum run exists)."""
    by_label = {label: [r for r in results if r.strategy_label == label] for label in labels}
    means = {
        label: np.mean([r.test_values for r in runs], axis=0) for label, runs in by_label.items()
    }
    stds = {
        label: np.std([r.test_values for r in runs], axis=0) for label, runs in by_label.items()
    }
    baseline = "sum" if "sum" in by_label else labels[0]
    metric = results[0].metric
    header = ["strategy", "n_seeds", "metric"]
    for t in range(n_tasks):
        header += [f"task{t}_mean", f"task{t}_std", f"task{t}_delta_vs_{baseline}"]
    lines = [",".join(header)]
    for label in labels:
        row = [label, str(len(by_label[label])), metric]
        for t in range(n_tasks):
            row += [
                f"{means[label][t]:.6f}",
                f"{stds[label][t]:.6f}",
                f"{means[label][t] - means[baseline][t]:.6f}",
            ]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_study(cfg: ExperimentConfig, jobs: int = 1) -> list[RunResult]:
    """All (strategy x seed) runs plus the top-level comparison table."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    results = _execute_runs(cfg, cfg.output_dir, jobs)
    _write_comparison(
        results, cfg.strategy_labels, cfg.data.n_tasks, cfg.output_dir / "comparison.csv"
    )
    return results


def _default_checkpoints(steps: int) -> tuple[int, ...]:
    marks = {0, steps // 4, steps // 2, (3 * steps) // 4, steps}
    return tuple(sorted(marks))


def run_validate_approx(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Compare the squared-gradient curvature surrogate against true HVPs.

    Runs a short training with the first configured strategy and seed,
    snapshots the net at the configured checkpoints, and for every ordered
    task pair records: cosine and norm ratio between the central-difference
    HVP and the surrogate, plus the exact-vs-first-order transference gap at
    gamma and gamma/2. Returns the report path.
    """
    del jobs  # single short run; kept for interface symmetry
    steps = int(cfg.train_kwargs.get("steps", 0))
    checkpoints = cfg.validate_checkpoints or _default_checkpoints(steps)
    seed = cfg.seeds[0]
    ds = build_dataset(cfg.data, seed)
    splits = split(ds, cfg.data.split)
    net = init_net(
        input_dim=ds.n_features,
        shared_widths=list(cfg.model.shared_widths),
        head_widths=list(cfg.model.head_widths),
        num_tasks=ds.n_tasks,
        seed=cfg.model.seed + seed,
    )
    theta_size = len(net.get_theta())
    if theta_size > EXACT_HVP_PARAM_BUDGET:
        raise ConfigError(
            f"model.shared_widths: {theta_size} shared parameters exceed the "
            f"finite-difference budget of {EXACT_HVP_PARAM_BUDGET}"
        )

    snapshots: dict[int, SharedBottomNet] = {}
    if 0 in checkpoints:
        snapshots[0] = net.copy()
    wanted = set(checkpoints)

    def capture(step: int, live_net: SharedBottomNet) -> None:
        if step in wanted:
            snapshots[step] = live_net.copy()

    train_cfg = TrainConfig(
        strategy=_fresh_strategy(cfg.strategies[0]), seed=seed, **cfg.train_kwargs
    )
    train(net, splits, train_cfg, step_callback=capture)

    strategy = cfg.strategies[0]
    lam = strategy.lam
    gammas = list(strategy.gammas) + [0.0] * (ds.n_tasks - len(strategy.gammas))
    gammas = [g if g > 0 else 0.1 for g in gammas]
    probe_batch = splits.train.take(
        np.arange(min(int(cfg.train_kwargs["batch_size"]), splits.train.n_rows))
    )
    x, y = probe_batch.features, probe_batch.labels

    rows = []
    for step in sorted(snapshots):
        snap = snapshots[step]
        theta = snap.get_theta().values
        logits, cache = forward(snap, x)
        del logits
        grads = [backward_task(snap, cache, y[:, t], t)[0].values for t in range(ds.n_tasks)]
        grad_fns = [theta_grad_fn(snap, x, y[:, t], t) for t in range(ds.n_tasks)]
        loss_fns = [theta_loss_fn(snap, x, y[:, t], t) for t in range(ds.n_tasks)]
        for i in range(ds.n_tasks):
            for j in range(ds.n_tasks):
                if i == j:
                    continue
                fd = finite_diff_hvp(grad_fns[j], theta, grads[i])
                ap = lam * grads[j] * grads[j] * grads[i]
                fd_norm = float(np.linalg.norm(fd))
                ap_norm = float(np.linalg.norm(ap))
                cosine = (
                    float(np.dot(fd, ap)) / (fd_norm * ap_norm)
                    if fd_norm > 0 and ap_norm > 0
                    else 0.0
                )
                ratio = ap_norm / fd_norm if fd_norm > 0 else float("nan")
                gamma = gammas[i]
                gap_full = abs(
                    transfer_exact(loss_fns[j], theta, grads[i], gamma)
                    - transfer_first_order(grads[i], grads[j], gamma)
                )
                gap_half = abs(
                    transfer_exact(loss_fns[j], theta, grads[i], gamma / 2.0)
                    - transfer_first_order(grads[i], grads[j], gamma / 2.0)
                )
                gap_ratio = gap_full / gap_half if gap_half > 0 else float("nan")
                rows.append(
                    [step, i, j, cosine, ratio, gamma, gap_full, gap_half, gap_ratio]
                )

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    report = cfg.output_dir / "validate_approx.csv"
    header = (
        "step,source_task,target_task,hvp_cosine,hvp_norm_ratio,"
        "gamma,gap_at_gamma,gap_at_half_gamma,gap_ratio"
    )
    lines = [header]
    for row in rows:
        lines.append(
            ",".join(
                [str(row[0]), str(row[1]), str(row[2])]
                + [repr(float(v)) for v in row[3:]]
            )
        )
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def run_probe(
    checkpoint_path: str | Path,
    data_arg: str | Path,
    output_dir: Path,
    has_group_column: bool = False,
) -> tuple[Path, Path]:
    """Probe a trained checkpoint against a dataset; write histogram + summary.

    ``data_arg`` is either a dataset CSV or an experiment config JSON whose
    data section describes the dataset (and optionally a probe section).
    """
    net = load_net(checkpoint_path)
    probe_cfg = ProbeConfig()
    data_path = Path(data_arg)
    if data_path.suffix == ".json":
        cfg = load_config(data_path)
        ds = build_dataset(cfg.data, cfg.seeds[0])
        probe_cfg = cfg.probe
    else:
        ds = load_csv(data_path, net.num_tasks, has_group_column)
    if ds.n_tasks != net.num_tasks:
        raise ConfigError(
            f"checkpoint has {net.num_tasks} heads but dataset has {ds.n_tasks} tasks"
        )
    result = probe_harmonization(net, ds, probe_cfg)

    output_dir.mkdir(parents=True, exist_ok=True)
    hist_path = output_dir / "probe_histogram.csv"
    lines = ["bin_center,count"]
    for center, count in zip(result.bin_centers, result.counts):
        lines.append(f"{repr(float(center))},{int(count)}")
    hist_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary_path = output_dir / "probe_summary.json"
    summary = {
        "general_knowledge_share": result.general_share,
        "band": probe_cfg.band,
        "trunk_width": int(result.diffs.size),
        "max_abs_diff": float(np.max(np.abs(result.diffs))),
        "iters_used": list(result.iters_used),
        "tasks": list(probe_cfg.tasks),
    }
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return hist_path, summary_path


def run_capacity_sweep(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Train every strategy at base width and doubled first shared width.

    Emits capacity_sweep.csv with one row per (strategy, width) holding
    mean final test metrics across seeds and the doubled-minus-base deltas.
    """
    widths = cfg.model.shared_widths
    doubled = (2 * widths[0],) + widths[1:]
    variants = [("base", widths), ("doubled", doubled)]

    all_results: dict[str, list[RunResult]] = {}
    for name, shared in variants:
        variant_cfg = dataclasses.replace(
            cfg, model=dataclasses.replace(cfg.model, shared_widths=shared)
        )
        root = cfg.output_dir / name
        root.mkdir(parents=True, exist_ok=True)
        results = _execute_runs(variant_cfg, root, jobs)
        _write_comparison(
            results, cfg.strategy_labels, cfg.data.n_tasks, root / "comparison.csv"
        )
        all_results[name] = results

    metric = all_results["base"][0].metric
    n_tasks = cfg.data.n_tasks
    header = ["strategy", "width_variant", "first_shared_width", "theta_params", "metric"]
    header += [f"task{t}_mean" for t in range(n_tasks)]
    header += [f"task{t}_delta_vs_base" for t in range(n_tasks)]
    lines = [",".join(header)]
    for label in cfg.strategy_labels:
        means = {}
        params = {}
        for name, _ in variants:
            runs = [r for r in all_results[name] if r.strategy_label == label]
            means[name] = np.mean([r.test_values for r in runs], axis=0)
            params[name] = runs[0].theta_params
        for name, shared in variants:
            row = [label, name, str(shared[0]), str(params[name]), metric]
            row += [f"{means[name][t]:.6f}" for t in range(n_tasks)]
            row += [f"{means[name][t] - means['base'][t]:.6f}" for t in range(n_tasks)]
            lines.append(",".join(row))
    out = cfg.output_dir / "capacity_sweep.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out
