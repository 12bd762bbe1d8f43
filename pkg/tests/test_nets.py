import numpy as np
import pytest

from maw import nets
from maw.autodiff import Tape
from maw.errors import ConfigError, DomainError, NumericalError


def test_glorot_bounds_and_limits():
    rng = np.random.default_rng(0)
    w = nets.glorot_init(2, 3, rng)
    limit = np.sqrt(6.0 / 5.0)
    assert limit == pytest.approx(1.0954, abs=1e-4)
    assert np.all(np.abs(w) <= limit)
    w11 = nets.glorot_init(1, 1, rng)
    assert np.abs(w11[0, 0]) <= np.sqrt(3.0)


def test_glorot_empirical_variance():
    rng = np.random.default_rng(1)
    rows, cols = 100, 1000  # 1e5 draws
    w = nets.glorot_init(rows, cols, rng)
    target = 2.0 / (rows + cols)  # uniform variance L^2 / 3
    assert np.var(w) == pytest.approx(target, rel=0.05)


def _scalar_adam_oracle(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    # frozen reference recurrence, independent of the implementation under test
    theta, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta -= lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
        out.append(theta)
    return out


def test_adam_first_step():
    cfg = nets.OptimizerConfig("adam", 1e-3)
    params = {"w": np.array(0.0)}
    slots = {"step": 0, "m": {"w": np.array(0.0)}, "v": {"w": np.array(0.0)}}
    nets.adam_step(params, {"w": np.array(1.0)}, slots, cfg)
    assert params["w"] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_zero_gradient_keeps_params():
    cfg = nets.OptimizerConfig("adam", 1e-3)
    params = {"w": np.array(1.5)}
    slots = {"step": 0, "m": {"w": np.array(0.2)}, "v": {"w": np.array(0.3)}}
    nets.adam_step(params, {"w": np.array(0.0)}, slots, cfg)
    assert params["w"] != 1.5 or slots["m"]["w"] == 0.0  # moments decay
    # with zero moments the parameter is exactly unchanged
    params = {"w": np.array(1.5)}
    slots = {"step": 0, "m": {"w": np.array(0.0)}, "v": {"w": np.array(0.0)}}
    nets.adam_step(params, {"w": np.array(0.0)}, slots, cfg)
    assert params["w"] == 1.5


def test_adam_matches_scalar_oracle():
    cfg = nets.OptimizerConfig("adam", 1e-3)
    params = {"w": np.array(0.0)}
    slots = {"step": 0, "m": {"w": np.array(0.0)}, "v": {"w": np.array(0.0)}}
    seen = []
    for _ in range(5):
        nets.adam_step(params, {"w": np.array(1.0)}, slots, cfg)
        seen.append(float(params["w"]))
    oracle = _scalar_adam_oracle([1.0] * 5, 1e-3)
    assert np.allclose(seen, oracle, rtol=1e-12)
    assert all(b < a for a, b in zip(seen, seen[1:]))  # decreasing


def test_rmsprop_first_step():
    cfg = nets.OptimizerConfig("rmsprop", 0.0005)
    params = {"w": np.array(0.0)}
    slots = {"step": 0, "v": {"w": np.array(0.0)}}
    nets.rmsprop_step(params, {"w": np.array(1.0)}, slots, cfg)
    assert params["w"] == pytest.approx(-0.0005 / (np.sqrt(0.1) + 1e-8), rel=1e-9)


def test_rmsprop_zero_gradient():
    cfg = nets.OptimizerConfig("rmsprop", 0.0005)
    params = {"w": np.array(2.0)}
    slots = {"step": 0, "v": {"w": np.array(0.5)}}
    nets.rmsprop_step(params, {"w": np.array(0.0)}, slots, cfg)
    assert params["w"] == 2.0


def test_rmsprop_update_magnitude_approaches_lr():
    cfg = nets.OptimizerConfig("rmsprop", 0.0005)
    params = {"w": np.array(0.0)}
    slots = {"step": 0, "v": {"w": np.array(0.0)}}
    deltas = []
    prev = 0.0
    for _ in range(200):
        nets.rmsprop_step(params, {"w": np.array(1.0)}, slots, cfg)
        deltas.append(abs(float(params["w"]) - prev))
        prev = float(params["w"])
    # v -> g^2 so |update| -> lr
    assert deltas[-1] == pytest.approx(0.0005, rel=1e-3)
    assert deltas[0] > deltas[-1]


def test_nan_gradient_raises_with_name():
    cfg = nets.OptimizerConfig("adam", 1e-3)
    params = {"enc.w": np.array(0.0)}
    slots = {"step": 0, "m": {"enc.w": np.array(0.0)}, "v": {"enc.w": np.array(0.0)}}
    with pytest.raises(NumericalError, match="enc.w"):
        nets.adam_step(params, {"enc.w": np.array(np.nan)}, slots, cfg)


def test_clip_weights():
    store = nets.ParamStore()
    store.add("cri.w", np.array([-2.0, 0.5, 3.0]))
    nets.clip_weights(store, ["cri.w"])
    assert np.array_equal(store.params["cri.w"], [-1.0, 0.5, 1.0])
    nets.clip_weights(store, ["cri.w"])  # idempotent
    assert np.array_equal(store.params["cri.w"], [-1.0, 0.5, 1.0])
    store.add("cri.ok", np.array([0.1, -0.9]))
    nets.clip_weights(store, ["cri.ok"])
    assert np.array_equal(store.params["cri.ok"], [0.1, -0.9])
    with pytest.raises(DomainError):
        nets.clip_weights(store, ["cri.w"], lo=1.0, hi=-1.0)


def test_mlp_spec_validation():
    with pytest.raises(ConfigError):
        nets.MlpSpec(0, (3,), ("relu",))
    with pytest.raises(ConfigError):
        nets.MlpSpec(2, (3, 4), ("relu",))
    with pytest.raises(ConfigError):
        nets.MlpSpec(2, (3,), ("tanh",))
    with pytest.raises(ConfigError):
        nets.MlpSpec(2, (6,), ("linear",), final_transform="split4")


def test_split4_is_a_bijection_on_the_output():
    rng = np.random.default_rng(2)
    spec = nets.mlp(3, (5, 8), "relu", final_transform="split4")
    store = nets.ParamStore()
    nets.build_mlp_params(store, "enc", spec, rng)
    x = rng.standard_normal((4, 3))
    full_spec = nets.MlpSpec(3, (5, 8), ("relu", "linear"), True, "none")
    full = nets.mlp_apply(store, "enc", full_spec, x)
    parts = nets.mlp_apply(store, "enc", spec, x)
    assert len(parts) == 4
    assert np.array_equal(np.concatenate(parts, axis=1), full)


def test_unit_normalize_transform():
    rng = np.random.default_rng(3)
    spec = nets.mlp(2, (4, 3), "relu", final_transform="unit_normalize")
    plain = nets.MlpSpec(2, (4, 3), ("relu", "linear"), True, "none")
    store = nets.ParamStore()
    nets.build_mlp_params(store, "dec", spec, rng)
    x = rng.standard_normal((6, 2))
    pre = nets.mlp_apply(store, "dec", plain, x)
    out = nets.mlp_apply(store, "dec", spec, x)
    norms = np.linalg.norm(out, axis=1)
    nonzero = np.linalg.norm(pre, axis=1) > 0.0
    assert nonzero.any()
    assert np.all(np.abs(norms[nonzero] - 1.0) <= 1e-9)
    assert np.all(norms[~nonzero] == 0.0)


def test_tape_and_numpy_forward_agree_in_eval_mode():
    rng = np.random.default_rng(4)
    spec = nets.mlp(3, (5, 4), "relu", final_transform="unit_normalize")
    store = nets.ParamStore()
    nets.build_mlp_params(store, "net", spec, rng)
    # push the running stats away from their init to make the check real
    store.state["net.l0.running_mean"] += 0.3
    store.state["net.l0.running_var"] *= 1.7
    x = rng.standard_normal((5, 3))
    tape = Tape()
    out_tape = nets.mlp_forward(tape, store, "net", spec, tape.const(x), train=False)
    out_np = nets.mlp_apply(store, "net", spec, x)
    assert np.allclose(out_tape.value, out_np, atol=1e-12)


def test_optimizer_steps_are_deterministic():
    rng = np.random.default_rng(5)
    spec = nets.mlp(3, (4, 2), "relu")
    results = []
    for _ in range(2):
        store = nets.ParamStore()
        nets.build_mlp_params(store, "n", spec, np.random.default_rng(7))
        opt = nets.Optimizer(nets.OptimizerConfig("adam", 1e-3), store.names("n"), store)
        grads = {k: np.ones_like(v) for k, v in store.params.items()}
        for _ in range(3):
            opt.step(store, grads)
        results.append({k: v.copy() for k, v in store.params.items()})
    for k in results[0]:
        assert np.array_equal(results[0][k], results[1][k])
