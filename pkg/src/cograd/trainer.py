"""Multi-task training loop, optimizers, instrumentation, and the probe.

One training step on a batch:

1. update each task head from its own weighted loss gradient,
2. recompute per-task gradients over the shared trunk,
3. pass those through the configured gradient strategy,
4. apply one optimizer step to the trunk on the weighted sum of the
   modified gradients.

Head updates never see the strategy: gradient coordination acts on shared
parameters only. Runs are bitwise deterministic given the config seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DivergenceError, EvaluationError, ProbeError
from .gradmod import (
    StrategyConfig,
    TransferenceRecord,
    measure_transference,
    modify_gradients,
    pairwise_cosine,
)
from .metrics import evaluate_auc, evaluate_gauc, loss_weights_from_prior
from .model import (
    SharedBottomNet,
    backward_task,
    forward,
    task_loss,
    theta_grad_fn,
    theta_loss_fn,
    trunk_activations,
)
from .tasks_data import DatasetSplits, MultiTaskDataset, batches
from scipy.special import expit

_OPTIMIZERS = ("adam", "sgd")

# Probe pairs at a gamma below typical learning rates when a strategy
# carries no positive gamma of its own.
_DEFAULT_PROBE_GAMMA = 0.1


@dataclass
class AdamState:
    """First and second moment accumulators for one parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(params, grad, state: AdamState, eta: float) -> np.ndarray:
    """One bias-corrected Adam update; advances ``state`` in place."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if p.size != g.size or p.size != state.m.size:
        raise ConfigError(
            f"size mismatch: {p.size} params, {g.size} grads, {state.m.size} state"
        )
    state.step_count += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step_count)
    v_hat = state.v / (1.0 - state.beta2**state.step_count)
    return p - eta * m_hat / (np.sqrt(v_hat) + state.eps_hat)


def sgd_step(params, grad, eta: float) -> np.ndarray:
    """Plain gradient-descent update."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if p.size != g.size:
        raise ConfigError(f"size mismatch: {p.size} params, {g.size} grads")
    return p - eta * g


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one training run.

    ``loss_weights`` is a per-task tuple, the string "prior" (inverse label
    entropy, favoring sparse tasks), or None for uniform weights.
    ``eval_every`` / ``transference_every`` of 0 disable that instrumentation.
    """

    steps: int
    batch_size: int
    learning_rate: float
    strategy: StrategyConfig
    loss_weights: tuple[float, ...] | str | None = None
    eval_every: int = 0
    seed: int = 0
    optimizer: str = "adam"
    shuffle: bool = True
    transference_every: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {_OPTIMIZERS}")
        if self.eval_every < 0 or self.transference_every < 0:
            raise ConfigError("eval_every and transference_every must be non-negative")
        if isinstance(self.loss_weights, str) and self.loss_weights != "prior":
            raise ConfigError('loss_weights must be a tuple, "prior", or None')
        if isinstance(self.loss_weights, (tuple, list)):
            object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
            if any(w <= 0 for w in self.loss_weights):
                raise ConfigError("loss_weights must be positive")


@dataclass
class StepRecord:
    step: int
    losses: tuple[float, ...]  # per-task batch loss after the head update
    cosines: np.ndarray  # (T, T) over raw trunk gradients


@dataclass
class EvalRecord:
    step: int
    metric: str  # "auc" or "gauc"
    values: tuple[float, ...]


@dataclass
class MetricsLog:
    """Per-step and per-eval records of one training run."""

    num_tasks: int
    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)
    transference: list[TransferenceRecord] = field(default_factory=list)

    def add_step(self, record: StepRecord) -> None:
        if self.steps and record.step <= self.steps[-1].step:
            raise ConfigError("step records must be strictly increasing")
        self.steps.append(record)

    def add_eval(self, record: EvalRecord) -> None:
        if self.evals and record.step <= self.evals[-1].step:
            raise ConfigError("eval records must be strictly increasing")
        self.evals.append(record)


def _resolve_weights(cfg: TrainConfig, train_ds: MultiTaskDataset) -> np.ndarray:
    if cfg.loss_weights is None:
        return np.ones(train_ds.n_tasks)
    if cfg.loss_weights == "prior":
        return loss_weights_from_prior(train_ds.labels)
    weights = np.asarray(cfg.loss_weights, dtype=np.float64)
    if weights.size != train_ds.n_tasks:
        raise ConfigError(f"{weights.size} loss weights for {train_ds.n_tasks} tasks")
    return weights


def _probe_gammas(strategy: StrategyConfig, num_tasks: int) -> list[float]:
    gammas = list(strategy.gammas) + [0.0] * (num_tasks - len(strategy.gammas))
    return [g if g > 0 else _DEFAULT_PROBE_GAMMA for g in gammas]


def _evaluate_split(net: SharedBottomNet, ds: MultiTaskDataset) -> EvalRecord:
    logits, _ = forward(net, ds.features)
    scores = expit(logits)
    metric = "gauc" if ds.group_ids is not None else "auc"
    values = []
    for t in range(ds.n_tasks):
        if metric == "gauc":
            values.append(evaluate_gauc(scores[:, t], ds.labels[:, t], ds.group_ids))
        else:
            values.append(evaluate_auc(scores[:, t], ds.labels[:, t]))
    return EvalRecord(step=0, metric=metric, values=tuple(values))


def train(
    net: SharedBottomNet,
    splits: DatasetSplits,
    cfg: TrainConfig,
    step_callback: Callable[[int, SharedBottomNet], None] | None = None,
) -> tuple[SharedBottomNet, MetricsLog]:
    """Run the two-phase step loop for ``cfg.steps`` batches.

    Evaluates ranking metrics on the validation split every ``eval_every``
    steps. ``step_callback(step, net)`` fires after each trunk update, for
    checkpoint capture. Aborts with the step index if any loss goes
    non-finite. The net is trained in place and also returned.
    """
    num_tasks = net.num_tasks
    if splits.train.n_tasks != num_tasks:
        raise ConfigError(f"net has {num_tasks} heads, data has {splits.train.n_tasks} tasks")
    cfg.strategy.check_tasks(num_tasks)
    weights = _resolve_weights(cfg, splits.train)
    log = MetricsLog(num_tasks=num_tasks)

    theta_size = len(net.get_theta())
    use_adam = cfg.optimizer == "adam"
    theta_state = AdamState.zeros(theta_size) if use_adam else None
    phi_states = (
        [AdamState.zeros(len(net.get_phi(t))) for t in range(num_tasks)] if use_adam else None
    )

    step = 0
    epoch = 0
    while step < cfg.steps:
        shuffle_seed = cfg.seed * 1_000_003 + epoch if cfg.shuffle else None
        for batch in batches(splits.train, cfg.batch_size, shuffle_seed):
            step += 1
            x, y = batch.features, batch.labels
            try:
                # Phase 1: head updates from each task's own weighted loss.
                _, cache = forward(net, x)
                for t in range(num_tasks):
                    _, grad_phi = backward_task(net, cache, y[:, t], t)
                    phi_grad = weights[t] * grad_phi.values
                    if use_adam:
                        new_phi = adam_step(net.get_phi(t).values, phi_grad, phi_states[t], cfg.learning_rate)
                    else:
                        new_phi = sgd_step(net.get_phi(t).values, phi_grad, cfg.learning_rate)
                    net.set_phi(t, new_phi)

                # Phase 2: per-task trunk gradients at the updated heads.
                logits, cache = forward(net, x)
            except EvaluationError as exc:
                raise DivergenceError(f"training diverged at step {step}: {exc}") from exc
            losses = []
            raw_grads = []
            for t in range(num_tasks):
                losses.append(task_loss(logits[:, t], y[:, t]))
                grad_theta, _ = backward_task(net, cache, y[:, t], t)
                raw_grads.append(grad_theta)
            if not all(np.isfinite(losses)):
                raise DivergenceError(f"training diverged at step {step}: non-finite loss")

            if cfg.transference_every and step % cfg.transference_every == 0:
                loss_fns = [theta_loss_fn(net, x, y[:, t], t) for t in range(num_tasks)]
                log.transference.extend(
                    measure_transference(
                        step,
                        net.get_theta().values,
                        raw_grads,
                        loss_fns,
                        _probe_gammas(cfg.strategy, num_tasks),
                    )
                )

            grad_fns = None
            if cfg.strategy.kind == "cograd_exact_hvp":
                grad_fns = [theta_grad_fn(net, x, y[:, t], t) for t in range(num_tasks)]
            modified = modify_gradients(
                raw_grads,
                cfg.strategy,
                order_seed=cfg.seed * 1_000_003 + step,
                grad_fns=grad_fns,
                theta=net.get_theta().values,
            )

            aggregate = np.zeros(theta_size)
            for t in range(num_tasks):
                aggregate += weights[t] * np.asarray(modified[t])
            if use_adam:
                new_theta = adam_step(net.get_theta().values, aggregate, theta_state, cfg.learning_rate)
            else:
                new_theta = sgd_step(net.get_theta().values, aggregate, cfg.learning_rate)
            net.set_theta(new_theta)

            log.add_step(StepRecord(step=step, losses=tuple(losses), cosines=pairwise_cosine(raw_grads)))
            if cfg.eval_every and step % cfg.eval_every == 0:
                record = _evaluate_split(net, splits.val)
                log.add_eval(EvalRecord(step=step, metric=record.metric, values=record.values))
            if step_callback is not None:
                step_callback(step, net)
            if step == cfg.steps:
                break
        epoch += 1
    return net, log


def save_metrics(log: MetricsLog, directory: str | Path) -> None:
    """Write the log as plot-ready CSVs.

    metrics_steps.csv: step, loss_<t>..., cos_<i>_<j>... (upper-triangle pairs)
    metrics_eval.csv: step, metric, task_<t>...
    metrics_transference.csv: step, source_task, target_task, exact_delta,
    first_order, gamma_used (written only when records exist).
    Floats use repr formatting, so reruns reproduce files byte for byte.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pairs = [(i, j) for i in range(log.num_tasks) for j in range(i + 1, log.num_tasks)]

    with (directory / "metrics_steps.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step"]
            + [f"loss_{t}" for t in range(log.num_tasks)]
            + [f"cos_{i}_{j}" for i, j in pairs]
        )
        for rec in log.steps:
            writer.writerow(
                [rec.step]
                + [repr(float(v)) for v in rec.losses]
                + [repr(float(rec.cosines[i, j])) for i, j in pairs]
            )

    with (directory / "metrics_eval.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "metric"] + [f"task_{t}" for t in range(log.num_tasks)])
        for rec in log.evals:
            writer.writerow([rec.step, rec.metric] + [repr(float(v)) for v in rec.values])

    if log.transference:
        with (directory / "metrics_transference.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "source_task", "target_task", "exact_delta", "first_order", "gamma_used"]
            )
            for rec in log.transference:
                writer.writerow(
                    [
                        rec.step,
                        rec.source_task,
                        rec.target_task,
                        repr(float(rec.exact_delta)),
                        repr(float(rec.first_order)),
                        repr(float(rec.gamma_used)),
                    ]
                )


@dataclass(frozen=True)
class ProbeConfig:
    """Settings for the knowledge-harmonization probe."""

    grad_tol: float = 1e-6
    max_iters: int = 100
    n_bins: int = 41
    bin_halfwidth: float = 0.05
    band: float = 0.01  # |difference| below this counts as general knowledge
    tasks: tuple[int, int] = (0, 1)


@dataclass
class ProbeResult:
    diffs: np.ndarray  # per-hidden-unit importance difference, task a - task b
    importances: np.ndarray  # (2, width), each row sums to 1
    bin_centers: np.ndarray
    counts: np.ndarray  # histogram of clipped diffs; sums to the trunk width
    general_share: float  # fraction of units inside the band
    iters_used: tuple[int, int]


def _fit_probe_head(
    activations: np.ndarray, labels: np.ndarray, cfg: ProbeConfig, task: int
) -> tuple[np.ndarray, int]:
    """Logistic fit by damped Newton steps; returns weights and iterations.

    Plain full-batch gradient descent stalls far above the stopping
    tolerance on near-separable activations, so the readout is driven to
    convergence with Newton steps plus backtracking instead.
    """
    n, width = activations.shape
    design = np.hstack([activations, np.ones((n, 1))])
    w = np.zeros(width + 1)
    logits = design @ w
    loss = task_loss(logits, labels)
    grad_norm = np.inf
    for it in range(cfg.max_iters + 1):
        p = expit(logits)
        grad = design.T @ ((p - labels) / n)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < cfg.grad_tol:
            return w[:-1], it
        if it == cfg.max_iters:
            break
        curvature = np.maximum(p * (1.0 - p), 1e-12) / n
        hess = design.T @ (curvature[:, None] * design) + 1e-10 * np.eye(width + 1)
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        candidate_logits = logits
        candidate_loss = loss
        for _ in range(40):
            candidate_logits = design @ (w - scale * step)
            candidate_loss = task_loss(candidate_logits, labels)
            if candidate_loss <= loss + 1e-15:
                break
            scale *= 0.5
        w = w - scale * step
        logits = candidate_logits
        loss = candidate_loss
    raise ProbeError(
        f"task {task}: probe gradient norm {grad_norm:.3e} still above "
        f"{cfg.grad_tol:.1e} after {cfg.max_iters} iterations"
    )


def probe_harmonization(
    net: SharedBottomNet, ds: MultiTaskDataset, cfg: ProbeConfig = ProbeConfig()
) -> ProbeResult:
    """Measure how evenly trunk units serve two tasks.

    Freezes the trunk, fits one fresh logistic readout per task from the
    last shared layer, normalizes each absolute weight vector to sum 1, and
    histograms the per-unit difference. Mass near zero is knowledge both
    tasks use; mass in the tails is task-specific.
    """
    a, b = cfg.tasks
    if ds.n_tasks < 2 or max(a, b) >= ds.n_tasks or a == b:
        raise ConfigError(f"probe needs two distinct tasks within {ds.n_tasks}")
    activations = trunk_activations(net, ds.features)

    importances = []
    iters = []
    for task in (a, b):
        w, used = _fit_probe_head(activations, ds.labels[:, task], cfg, task)
        total = float(np.sum(np.abs(w)))
        if total == 0.0:
            raise ProbeError(f"task {task}: probe converged to an all-zero weight vector")
        importances.append(np.abs(w) / total)
        iters.append(used)

    diffs = importances[0] - importances[1]
    hw = cfg.bin_halfwidth
    edges = np.linspace(-hw, hw, cfg.n_bins + 1)
    counts, _ = np.histogram(np.clip(diffs, -hw, hw), edges)
    return ProbeResult(
        diffs=diffs,
        importances=np.stack(importances),
        bin_centers=(edges[:-1] + edges[1:]) / 2.0,
        counts=counts,
        general_share=float(np.mean(np.abs(diffs) < cfg.band)),
        iters_used=(iters[0], iters[1]),
    )
