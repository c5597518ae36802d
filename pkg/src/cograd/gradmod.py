"""Gradient coordination for shared multi-task parameters.

Quantifies inter-task transference (how one task's virtual update moves
another task's loss) and implements gradient modifications over the shared
parameters:

- ``cograd_modify``: descend each task's loss while pushing transference up,
  using the squared-gradient curvature surrogate H_i v ~ lam * g_i (.) g_i (.) v.
- ``cograd_modify_exact_hvp``: the same correction with true Hessian-vector
  products from central differences; the expensive reference variant.
- ``pcgrad_modify``: project conflicting gradients onto partner normal planes.
- ``magnitude_balance``: scale gradients toward the anchor task's moving norm.

Every modified gradient is computed from the original (pre-modification)
gradients simultaneously; only pcgrad is sequential, following its source
method. Inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateGradientError,
    DimensionError,
    EvaluationError,
)
from .tensor_core import ParamVector, finite_diff_hvp

STRATEGY_KINDS = ("sum", "cograd", "cograd_exact_hvp", "pcgrad", "magnitude_balance")

# Exact-HVP cost grows as parameters x tasks^2 gradient evaluations per step.
EXACT_HVP_PARAM_BUDGET = 10_000


@dataclass
class TransferenceRecord:
    """Measured effect of task i's virtual update on task j's loss."""

    step: int
    source_task: int
    target_task: int
    exact_delta: float
    first_order: float
    gamma_used: float

    def __post_init__(self) -> None:
        if self.gamma_used <= 0:
            raise ConfigError("gamma_used must be positive")


@dataclass
class StrategyConfig:
    """Selects and parameterizes one gradient strategy.

    ``gammas`` are the per-task virtual learning rates of the transference
    correction (zero disables a task's contribution); ``lam`` scales the
    curvature surrogate; ``relax`` softens magnitude balancing; ``state``
    carries the moving-average norms between magnitude-balance steps.
    """

    kind: str
    gammas: tuple[float, ...] = ()
    lam: float = 1.0
    relax: float = 0.5
    per_layer: bool = False
    state: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.gammas = tuple(float(g) for g in self.gammas)
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if any(g < 0 for g in self.gammas):
            raise ConfigError("gammas must be non-negative")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if not 0.0 <= self.relax <= 1.0:
            raise ConfigError("relax must lie in [0, 1]")
        if self.per_layer and self.kind in ("cograd_exact_hvp", "magnitude_balance"):
            raise ConfigError(f"per_layer is not supported for {self.kind}")

    def check_tasks(self, num_tasks: int) -> None:
        if self.kind in ("cograd", "cograd_exact_hvp") and len(self.gammas) != num_tasks:
            raise ConfigError(
                f"strategy {self.kind!r} needs one gamma per task "
                f"({num_tasks}), got {len(self.gammas)}"
            )


def _values(grad) -> np.ndarray:
    return np.asarray(grad, dtype=np.float64)


def _wrap(values: np.ndarray, like):
    """Return values in the container style of ``like``."""
    if isinstance(like, ParamVector):
        return ParamVector(values, like.layout)
    return values


def _check_equal_lengths(vectors: Sequence[np.ndarray]) -> int:
    sizes = {v.size for v in vectors}
    if len(sizes) > 1:
        raise DimensionError(f"gradient lengths differ: {sorted(sizes)}")
    return vectors[0].size if vectors else 0


def transfer_exact(
    loss_j: Callable[[np.ndarray], float],
    theta,
    g_i,
    gamma_i: float,
) -> float:
    """Lookahead loss change L_j(theta) - L_j(theta - gamma_i * g_i).

    The update is virtual; ``theta`` is not mutated. Positive means task i's
    step would also reduce task j's loss.
    """
    if gamma_i <= 0:
        raise ConfigError("gamma_i must be positive")
    th = _values(theta)
    gi = _values(g_i)
    if th.size != gi.size:
        raise DimensionError(f"theta has {th.size} entries, g_i has {gi.size}")
    before = float(loss_j(th.copy()))
    after = float(loss_j(th - gamma_i * gi))
    if not (np.isfinite(before) and np.isfinite(after)):
        raise EvaluationError("non-finite loss during lookahead evaluation")
    return before - after


def transfer_first_order(g_i, g_j, gamma_i: float) -> float:
    """First-order transference gamma_i * (g_i . g_j)."""
    gi = _values(g_i)
    gj = _values(g_j)
    if gi.size != gj.size:
        raise DimensionError(f"g_i has {gi.size} entries, g_j has {gj.size}")
    return float(gamma_i * np.dot(gi, gj))


def measure_transference(
    step: int,
    theta,
    grads: Sequence,
    loss_fns: Sequence[Callable[[np.ndarray], float]],
    gammas: Sequence[float],
) -> list[TransferenceRecord]:
    """Exact and first-order transference for every ordered task pair."""
    records = []
    for i in range(len(grads)):
        for j in range(len(grads)):
            if i == j:
                continue
            records.append(
                TransferenceRecord(
                    step=step,
                    source_task=i,
                    target_task=j,
                    exact_delta=transfer_exact(loss_fns[j], theta, grads[i], gammas[i]),
                    first_order=transfer_first_order(grads[i], grads[j], gammas[i]),
                    gamma_used=float(gammas[i]),
                )
            )
    return records


def approx_hvp(g_owner, direction, lam: float = 1.0):
    """Squared-gradient surrogate for H_owner . direction: lam * g^2 (.) direction."""
    if lam <= 0:
        raise ConfigError("lam must be positive")
    go = _values(g_owner)
    d = _values(direction)
    if go.size != d.size:
        raise DimensionError(f"owner gradient has {go.size} entries, direction has {d.size}")
    return _wrap(lam * go * go * d, g_owner)


def _cograd_core(values: list[np.ndarray], gammas: tuple[float, ...], lam: float) -> list[np.ndarray]:
    out = []
    for i, gi in enumerate(values):
        correction = np.zeros_like(gi)
        for j, gj in enumerate(values):
            if j != i and gammas[j] != 0.0:
                correction += gammas[j] * gj
        out.append(gi - lam * gi * gi * correction)
    return out


def cograd_modify(grads: Sequence, cfg: StrategyConfig) -> list:
    """Transference-raising modification g_i - sum_{j!=i} gamma_j*lam*g_i(.)g_i(.)g_j.

    All outputs are computed from the original gradients simultaneously.
    With every gamma zero, or a single task, the output is a bitwise copy of
    the input.
    """
    cfg.check_tasks(len(grads))
    values = [_values(g) for g in grads]
    _check_equal_lengths(values)
    # Null cases return untouched copies so downstream arithmetic is bitwise
    # identical to the plain sum baseline.
    if len(grads) == 1 or all(g == 0.0 for g in cfg.gammas):
        return [_wrap(v.copy(), g) for v, g in zip(values, grads)]
    if cfg.per_layer:
        # Elementwise arithmetic is layout-independent; slicing is supported
        # for interface parity with the other strategies.
        return _apply_per_layer(grads, values, lambda vs: _cograd_core(vs, cfg.gammas, cfg.lam))
    out = _cograd_core(values, cfg.gammas, cfg.lam)
    return [_wrap(v, g) for v, g in zip(out, grads)]


def cograd_modify_exact_hvp(
    grads: Sequence,
    grad_fns: Sequence[Callable[[np.ndarray], np.ndarray]],
    theta,
    cfg: StrategyConfig,
) -> list:
    """Reference variant with true curvature: g_i - sum_{j!=i} gamma_j * H_i g_j.

    H_i g_j comes from central differences of task i's gradient function, so
    the cost is two gradient evaluations per ordered task pair per step. The
    shared-parameter count is capped to keep that tractable.
    """
    cfg.check_tasks(len(grads))
    if len(grad_fns) != len(grads):
        raise DimensionError(f"{len(grads)} gradients but {len(grad_fns)} gradient functions")
    th = _values(theta)
    if th.size > EXACT_HVP_PARAM_BUDGET:
        raise ConfigError(
            f"exact-HVP variant refused: {th.size} shared parameters exceed "
            f"the budget of {EXACT_HVP_PARAM_BUDGET}"
        )
    values = [_values(g) for g in grads]
    _check_equal_lengths(values)
    if len(grads) == 1 or all(g == 0.0 for g in cfg.gammas):
        return [_wrap(v.copy(), g) for v, g in zip(values, grads)]
    out = []
    for i, gi in enumerate(values):
        modified = gi.copy()
        for j, gj in enumerate(values):
            if j != i and cfg.gammas[j] != 0.0:
                modified -= cfg.gammas[j] * finite_diff_hvp(grad_fns[i], th, gj)
        out.append(modified)
    return [_wrap(v, g) for v, g in zip(out, grads)]


def _pcgrad_core(values: list[np.ndarray], order: np.ndarray) -> list[np.ndarray]:
    out: list[np.ndarray] = [None] * len(values)  # type: ignore[list-item]
    for i in order:
        projected = values[i].copy()
        for j in order:
            if j == i:
                continue
            partner = values[j]  # original gradient, never the projected one
            dot = float(np.dot(projected, partner))
            if dot < 0.0:
                norm_sq = float(np.dot(partner, partner))
                if norm_sq == 0.0:
                    raise DegenerateGradientError(
                        f"task {i} conflicts with zero-norm gradient of task {j}"
                    )
                projected -= (dot / norm_sq) * partner
        out[i] = projected
    return out


def pcgrad_modify(
    grads: Sequence,
    order_seed: int | None = None,
    order: Sequence[int] | None = None,
) -> list:
    """Sequentially project each gradient off conflicting partners.

    Task i's gradient is projected onto the normal plane of every original
    partner gradient it conflicts with (negative inner product), in a seeded
    random task order; ``order`` pins the traversal explicitly instead.
    """
    values = [_values(g) for g in grads]
    _check_equal_lengths(values)
    n = len(values)
    if order is not None:
        traversal = np.asarray(order, dtype=int)
        if sorted(traversal.tolist()) != list(range(n)):
            raise ConfigError(f"order must be a permutation of 0..{n - 1}")
    elif order_seed is not None:
        traversal = np.random.default_rng(order_seed).permutation(n)
    else:
        traversal = np.arange(n)
    out = _pcgrad_core(values, traversal)
    return [_wrap(v, g) for v, g in zip(out, grads)]


def magnitude_balance(grads: Sequence, cfg: StrategyConfig) -> list:
    """Scale non-anchor gradients toward the anchor task's moving-average norm.

    Norms are tracked as m_t <- 0.9 m_t + 0.1 ||g_t|| (zero-initialized,
    updated before scaling); each task t > 0 is scaled by (m_0 / m_t)^relax.
    Task 0 is the anchor and passes through unscaled. Mutates ``cfg.state``.
    """
    values = [_values(g) for g in grads]
    _check_equal_lengths(values)
    n = len(values)
    moving = cfg.state.setdefault("moving_norms", np.zeros(n))
    if moving.shape != (n,):
        raise DimensionError(
            f"strategy state tracks {moving.shape[0]} tasks, got {n} gradients"
        )
    norms = np.array([float(np.linalg.norm(v)) for v in values])
    moving *= 0.9
    moving += 0.1 * norms
    out = [values[0].copy()]
    for t in range(1, n):
        if moving[t] == 0.0:
            raise DegenerateGradientError(f"task {t} has zero moving-average gradient norm")
        scale = (moving[0] / moving[t]) ** cfg.relax
        out.append(values[t] * scale)
    return [_wrap(v, g) for v, g in zip(out, grads)]


def pairwise_cosine(grads: Sequence) -> np.ndarray:
    """Cosine similarity matrix; entries with a zero-norm operand are 0."""
    values = [_values(g) for g in grads]
    _check_equal_lengths(values)
    n = len(values)
    norms = [float(np.linalg.norm(v)) for v in values]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if norms[i] > 0.0 and norms[j] > 0.0:
                out[i, j] = float(np.dot(values[i], values[j])) / (norms[i] * norms[j])
    return out


def _apply_per_layer(grads: Sequence, values: list[np.ndarray], op) -> list:
    """Run a strategy independently on each named parameter block."""
    layouts = [g.layout for g in grads if isinstance(g, ParamVector)]
    if len(layouts) != len(grads):
        raise ConfigError("per_layer requires gradients with a parameter layout")
    if any(layout != layouts[0] for layout in layouts[1:]):
        raise DimensionError("per_layer requires identical layouts across tasks")
    out = [np.empty_like(v) for v in values]
    for entry in layouts[0]:
        sl = slice(entry.offset, entry.offset + entry.size)
        for t, block in enumerate(op([v[sl] for v in values])):
            out[t][sl] = block
    return [_wrap(v, g) for v, g in zip(out, grads)]


def modify_gradients(
    grads: Sequence,
    cfg: StrategyConfig,
    order_seed: int | None = None,
    grad_fns: Sequence[Callable[[np.ndarray], np.ndarray]] | None = None,
    theta=None,
) -> list:
    """Dispatch to the strategy named by ``cfg.kind``.

    ``order_seed`` feeds pcgrad's traversal; ``grad_fns`` and ``theta`` are
    required by the exact-HVP variant only.
    """
    if cfg.kind == "sum":
        return [_wrap(_values(g).copy(), g) for g in grads]
    if cfg.kind == "cograd":
        return cograd_modify(grads, cfg)
    if cfg.kind == "cograd_exact_hvp":
        if grad_fns is None or theta is None:
            raise ConfigError("cograd_exact_hvp needs grad_fns and theta")
        return cograd_modify_exact_hvp(grads, grad_fns, theta, cfg)
    if cfg.kind == "pcgrad":
        if cfg.per_layer:
            return _apply_per_layer(
                grads,
                [_values(g) for g in grads],
                lambda vs: _pcgrad_core(
                    vs,
                    np.random.default_rng(order_seed).permutation(len(vs))
                    if order_seed is not None
                    else np.arange(len(vs)),
                ),
            )
        return pcgrad_modify(grads, order_seed=order_seed)
    if cfg.kind == "magnitude_balance":
        return magnitude_balance(grads, cfg)
    raise ConfigError(f"unknown strategy kind {cfg.kind!r}")
