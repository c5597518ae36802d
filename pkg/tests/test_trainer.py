import numpy as np
import pytest

from cograd import (
    AdamState,
    ConfigError,
    DivergenceError,
    ProbeConfig,
    ProbeError,
    StrategyConfig,
    TrainConfig,
    adam_step,
    backward_task,
    forward,
    generate_synthetic,
    init_net,
    probe_harmonization,
    save_metrics,
    sgd_step,
    split,
    SyntheticTaskConfig,
    task_loss,
    train,
)


def small_dataset(seed=0, n=240, angle=45.0, rates=(0.5, 0.5), noise=0.0):
    return generate_synthetic(
        SyntheticTaskConfig(
            n_samples=n,
            n_features=6,
            task_angle_deg=angle,
            positive_rates=rates,
            label_noise=noise,
            seed=seed,
        )
    )


def small_net(seed=0):
    return init_net(6, [8], [4], 2, seed)


def small_config(**kw):
    base = dict(
        steps=12,
        batch_size=40,
        learning_rate=0.05,
        strategy=StrategyConfig(kind="sum"),
        loss_weights=(1.0, 1.0),
        seed=7,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_adam_first_step_is_signed_learning_rate():
    g = np.array([3.0, -0.5, 1e-3])
    state = AdamState.zeros(3)
    new = adam_step(np.zeros(3), g, state, 0.01)
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(new, expected, atol=1e-15)
    assert np.allclose(new, -0.01 * np.sign(g), atol=1e-5)
    assert state.step_count == 1


def test_adam_zero_gradient_no_move():
    state = AdamState.zeros(4)
    params = np.array([1.0, -2.0, 0.5, 0.0])
    assert np.array_equal(adam_step(params, np.zeros(4), state, 0.1), params)
    assert state.step_count == 1


def test_adam_matches_reference_implementation():
    rng = np.random.default_rng(0)
    params = rng.standard_normal(6)
    state = AdamState.zeros(6)
    m = np.zeros(6)
    v = np.zeros(6)
    ref = params.copy()
    for t in range(1, 8):
        g = rng.standard_normal(6)
        params = adam_step(params, g, state, 0.02)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1.0 - 0.9**t)
        v_hat = v / (1.0 - 0.999**t)
        ref = ref - 0.02 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(params, ref, atol=1e-14)


def test_sgd_step_exact():
    got = sgd_step(np.array([1.0, 2.0]), np.array([10.0, -4.0]), 0.1)
    assert np.array_equal(got, np.array([0.0, 2.4]))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        small_config(steps=0)
    with pytest.raises(ConfigError):
        small_config(batch_size=0)
    with pytest.raises(ConfigError):
        small_config(learning_rate=0.0)
    with pytest.raises(ConfigError):
        small_config(optimizer="adagrad")
    with pytest.raises(ConfigError):
        small_config(loss_weights=(1.0, -1.0))
    with pytest.raises(ConfigError):
        small_config(loss_weights="uniform")


def test_train_deterministic_across_runs():
    splits = split(small_dataset(), (4, 1, 1))
    net_a, log_a = train(small_net(), splits, small_config(eval_every=4))
    net_b, log_b = train(small_net(), splits, small_config(eval_every=4))
    assert np.array_equal(net_a.get_theta().values, net_b.get_theta().values)
    for t in range(2):
        assert np.array_equal(net_a.get_phi(t).values, net_b.get_phi(t).values)
    assert [r.losses for r in log_a.steps] == [r.losses for r in log_b.steps]
    assert [r.values for r in log_a.evals] == [r.values for r in log_b.evals]


def test_null_strategies_match_sum_bitwise():
    # cograd with all-zero gammas and the exact-HVP variant must reproduce
    # the plain summed-gradient trajectory bit for bit.
    splits = split(small_dataset(), (4, 1, 1))
    nets = {}
    for name, strategy in [
        ("sum", StrategyConfig(kind="sum")),
        ("cograd", StrategyConfig(kind="cograd", gammas=(0.0, 0.0))),
        ("exact", StrategyConfig(kind="cograd_exact_hvp", gammas=(0.0, 0.0))),
    ]:
        net, _ = train(small_net(), splits, small_config(steps=50, strategy=strategy))
        nets[name] = net
    for name in ("cograd", "exact"):
        assert np.array_equal(nets[name].get_theta().values, nets["sum"].get_theta().values)
        for t in range(2):
            assert np.array_equal(nets[name].get_phi(t).values, nets["sum"].get_phi(t).values)


def test_single_sgd_step_hand_trace():
    # Recompute the two phases by hand: head updates from per-task losses at
    # the initial parameters, then the trunk update from gradients taken at
    # the updated heads.
    ds = small_dataset(n=30)
    net = small_net()
    reference = net.copy()
    lr = 0.05
    weights = (0.25, 1.75)

    cfg = small_config(
        steps=1,
        batch_size=30,
        learning_rate=lr,
        loss_weights=weights,
        optimizer="sgd",
        shuffle=False,
    )
    trained, log = train(net, split(ds, (28, 1, 1)), cfg)

    x = ds.features[:28]
    y = ds.labels[:28]
    _, cache = forward(reference, x)
    for t in range(2):
        _, grad_phi = backward_task(reference, cache, y[:, t], t)
        reference.set_phi(t, reference.get_phi(t).values - lr * weights[t] * grad_phi.values)
    logits, cache = forward(reference, x)
    agg = np.zeros(len(reference.get_theta()))
    expected_losses = []
    for t in range(2):
        expected_losses.append(task_loss(logits[:, t], y[:, t]))
        grad_theta, _ = backward_task(reference, cache, y[:, t], t)
        agg += weights[t] * grad_theta.values
    reference.set_theta(reference.get_theta().values - lr * agg)

    assert np.array_equal(trained.get_theta().values, reference.get_theta().values)
    for t in range(2):
        assert np.array_equal(trained.get_phi(t).values, reference.get_phi(t).values)
    assert log.steps[0].losses == tuple(expected_losses)


def test_sum_step_matches_monolithic_adam_oracle():
    # With unit weights and the plain sum strategy, one trainer step on the
    # trunk equals a single Adam step on the gradient of L_0 + L_1.
    ds = small_dataset(n=32)
    cfg = small_config(steps=1, batch_size=32, loss_weights=(1.0, 1.0), shuffle=False)
    trained, _ = train(small_net(seed=3), split(ds, (30, 1, 1)), cfg)

    reference = small_net(seed=3)
    x, y = ds.features[:30], ds.labels[:30]
    _, cache = forward(reference, x)
    for t in range(2):
        _, grad_phi = backward_task(reference, cache, y[:, t], t)
        phi_state = AdamState.zeros(len(grad_phi.values))
        reference.set_phi(
            t, adam_step(reference.get_phi(t).values, grad_phi.values, phi_state, cfg.learning_rate)
        )
    _, cache = forward(reference, x)
    monolithic = np.zeros(len(reference.get_theta()))
    for t in range(2):
        grad_theta, _ = backward_task(reference, cache, y[:, t], t)
        monolithic += grad_theta.values
    theta_state = AdamState.zeros(len(monolithic))
    expected = adam_step(reference.get_theta().values, monolithic, theta_state, cfg.learning_rate)

    assert np.linalg.norm(trained.get_theta().values - expected) < 1e-10


def test_head_update_isolated_from_other_task():
    # Task 1's head update must not depend on task 0's labels.
    ds_a = small_dataset(n=40)
    flipped = ds_a.labels.copy()
    flipped[:, 0] = 1.0 - flipped[:, 0]
    from cograd import MultiTaskDataset

    ds_b = MultiTaskDataset(features=ds_a.features, labels=flipped)
    cfg = small_config(steps=1, batch_size=38, optimizer="sgd", shuffle=False)
    net_a, _ = train(small_net(), split(ds_a, (38, 1, 1)), cfg)
    net_b, _ = train(small_net(), split(ds_b, (38, 1, 1)), cfg)
    assert np.array_equal(net_a.get_phi(1).values, net_b.get_phi(1).values)
    assert not np.array_equal(net_a.get_phi(0).values, net_b.get_phi(0).values)


def test_eval_cadence():
    splits = split(small_dataset(), (4, 1, 1))
    _, log = train(small_net(), splits, small_config(steps=10, eval_every=3))
    assert [r.step for r in log.evals] == [3, 6, 9]
    assert all(r.metric == "auc" for r in log.evals)
    assert len(log.steps) == 10


def test_transference_cadence_and_sign():
    splits = split(small_dataset(angle=0.0), (4, 1, 1))
    cfg = small_config(steps=6, transference_every=2, strategy=StrategyConfig(kind="cograd", gammas=(0.05, 0.05)))
    _, log = train(small_net(), splits, cfg)
    steps = sorted({r.step for r in log.transference})
    assert steps == [2, 4, 6]
    # two ordered pairs per measured step
    assert len(log.transference) == 6
    assert all(r.gamma_used == 0.05 for r in log.transference)


def test_divergence_raises():
    splits = split(small_dataset(), (4, 1, 1))
    cfg = small_config(steps=5, learning_rate=1e120, optimizer="sgd")
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError, match="step"):
            train(small_net(), splits, cfg)


def test_task_count_mismatch():
    splits = split(small_dataset(), (4, 1, 1))
    net = init_net(6, [8], [4], 3, 0)
    with pytest.raises(ConfigError):
        train(net, splits, small_config())


def test_prior_weights_resolved_from_train_split():
    ds = small_dataset(n=600, rates=(0.5, 0.1))
    splits = split(ds, (4, 1, 1))
    net, log = train(small_net(), splits, small_config(loss_weights="prior", steps=3))
    assert len(log.steps) == 3


def test_save_metrics_deterministic_bytes(tmp_path):
    splits = split(small_dataset(), (4, 1, 1))
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        _, log = train(
            small_net(),
            splits,
            small_config(eval_every=4, transference_every=6),
        )
        save_metrics(log, out)
    for name in ("metrics_steps.csv", "metrics_eval.csv", "metrics_transference.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    header = (out_a / "metrics_steps.csv").read_text().splitlines()[0]
    assert header == "step,loss_0,loss_1,cos_0_1"


def test_probe_identical_tasks_all_general():
    # angle 0 with equal rates duplicates the label column, so the two
    # fitted readouts coincide and every unit counts as shared knowledge.
    ds = small_dataset(n=400, angle=0.0)
    net = small_net(seed=5)
    result = probe_harmonization(net, ds)
    assert result.general_share == 1.0
    assert np.allclose(result.diffs, 0.0, atol=1e-9)
    assert result.counts.sum() == net.trunk_width
    assert result.counts[len(result.counts) // 2] == net.trunk_width


def test_probe_shapes_and_normalization():
    ds = small_dataset(n=400, angle=60.0, rates=(0.5, 0.3))
    net = small_net(seed=6)
    result = probe_harmonization(net, ds)
    width = net.trunk_width
    assert result.importances.shape == (2, width)
    assert np.allclose(result.importances.sum(axis=1), 1.0, atol=1e-12)
    assert abs(result.diffs.sum()) < 1e-12
    assert result.bin_centers.shape == (41,)
    assert result.bin_centers[20] == pytest.approx(0.0, abs=1e-15)
    assert result.counts.sum() == width
    assert 0.0 <= result.general_share <= 1.0


def test_probe_nonconvergence_raises():
    ds = small_dataset(n=100)
    with pytest.raises(ProbeError, match="iterations"):
        probe_harmonization(small_net(), ds, ProbeConfig(max_iters=1))


def test_probe_task_selection_validation():
    ds = small_dataset(n=50)
    with pytest.raises(ConfigError):
        probe_harmonization(small_net(), ds, ProbeConfig(tasks=(0, 0)))
    with pytest.raises(ConfigError):
        probe_harmonization(small_net(), ds, ProbeConfig(tasks=(0, 5)))


def test_metrics_log_rejects_nonincreasing_steps():
    from cograd import MetricsLog, StepRecord

    log = MetricsLog(num_tasks=2)
    log.add_step(StepRecord(step=1, losses=(0.5, 0.5), cosines=np.eye(2)))
    with pytest.raises(ConfigError):
        log.add_step(StepRecord(step=1, losses=(0.4, 0.4), cosines=np.eye(2)))
