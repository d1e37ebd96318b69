"""
最佳化：LARS、動量 SGD、學習率排程與超參數網格
"""

from collections import OrderedDict

import numpy as np
import pytest

from autodiff import Tensor
from errors import ConfigError, ContractError, NumericError
from optim import (
    LarsConfig,
    Schedule,
    ScheduleKind,
    SGDMomentum,
    SweepGrid,
    build_sweep,
    lars_step,
    schedule_lr,
    sgd_momentum_step,
    trust_ratio,
    write_sweep_configs,
)
from tools.file_tools import read_json


def params_of(**arrays):
    return OrderedDict((name, Tensor(np.asarray(value, dtype=float), requires_grad=True))
                       for name, value in arrays.items())


class TestLars:
    def test_trust_ratio_example(self):
        w = np.array([2.0, 0.0])
        g = np.array([0.0, 1.0])
        assert trust_ratio(w, g, 1e-3) == pytest.approx(0.002)

    def test_zero_norms_give_unit_ratio(self):
        assert trust_ratio(np.zeros(3), np.ones(3), 1e-3) == 1.0
        assert trust_ratio(np.ones(3), np.zeros(3), 1e-3) == 1.0

    def test_zero_gradient_leaves_parameters(self):
        params = params_of(w=[1.0, -2.0])
        lars_step(params, {"w": np.zeros(2)}, {}, LarsConfig(weight_decay=0.0), lr_t=0.5)
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])

    @staticmethod
    def _run_excluded(grads, lrs):
        lars_params = params_of(**{"head.bias": [0.5, 1.0, -1.0]})
        sgd_params = params_of(**{"head.bias": [0.5, 1.0, -1.0]})
        cfg = LarsConfig(momentum=0.9, weight_decay=0.0, exclude_from_adaptation=("*.bias",))
        lars_state, sgd_state = {}, {}
        for grad, lr in zip(grads, lrs):
            ratios = lars_step(lars_params, {"head.bias": grad}, lars_state, cfg, lr_t=lr)
            sgd_momentum_step(sgd_params, {"head.bias": grad}, sgd_state, lr_t=lr, momentum=0.9)
            assert ratios["head.bias"] == 1.0
        return lars_params["head.bias"].data, sgd_params["head.bias"].data

    def test_excluded_parameters_match_sgd_bitwise_at_power_of_two_lr(self, rng):
        grads = [rng.standard_normal(3) for _ in range(20)]
        lars, sgd = self._run_excluded(grads, [0.125] * 20)
        np.testing.assert_array_equal(lars, sgd)

    def test_excluded_parameters_track_sgd_at_constant_lr(self, rng):
        grads = [rng.standard_normal(3) for _ in range(20)]
        lars, sgd = self._run_excluded(grads, [0.1] * 20)
        np.testing.assert_allclose(lars, sgd, rtol=1e-12, atol=1e-14)

    def test_varying_lr_is_folded_into_momentum(self, rng):
        grads = [rng.standard_normal(3) for _ in range(50)]
        lrs = [0.1 * (1.0 + np.cos(t / 7.0)) for t in range(50)]
        lars, sgd = self._run_excluded(grads, lrs)
        w = np.array([0.5, 1.0, -1.0])
        m = np.zeros(3)
        for grad, lr in zip(grads, lrs):
            m = 0.9 * m + lr * grad
            w = w - m
        np.testing.assert_allclose(lars, w, rtol=1e-12, atol=1e-14)
        assert not np.allclose(lars, sgd)

    def test_nan_gradient_names_parameter(self):
        params = params_of(**{"encoder.w": [1.0]})
        with pytest.raises(NumericError, match="encoder.w"):
            lars_step(params, {"encoder.w": np.array([np.nan])}, {}, LarsConfig(), 0.1)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            LarsConfig(momentum=1.0)


class TestSGD:
    def test_plain_gradient_descent(self):
        params = params_of(w=[1.0, 2.0])
        sgd_momentum_step(params, {"w": np.array([0.5, -1.0])}, {}, lr_t=0.1, momentum=0.0)
        np.testing.assert_allclose(params["w"].data, [0.95, 2.1])

    def test_momentum_recurrence(self):
        params = params_of(w=[0.0])
        state = {}
        g = np.array([1.0])
        sgd_momentum_step(params, {"w": g}, state, lr_t=0.1, momentum=0.9)
        before = params["w"].data.copy()
        sgd_momentum_step(params, {"w": g}, state, lr_t=0.1, momentum=0.9)
        np.testing.assert_allclose(before - params["w"].data, [0.1 * 1.9])

    def test_state_dict_round_trip(self):
        params = params_of(w=[1.0, 2.0])
        optimizer = SGDMomentum(params, momentum=0.9)
        for name, param in params.items():
            param.accumulate_grad(np.ones(2))
        optimizer.step(0.1)
        restored = SGDMomentum(params, momentum=0.9)
        restored.load_state_dict(optimizer.state_dict())
        np.testing.assert_array_equal(restored.state["w"], optimizer.state["w"])


class TestSchedule:
    def test_warmup_cosine_points(self):
        schedule = Schedule(total_steps=100, warmup_steps=10)
        assert schedule_lr(schedule, 0) == 0.0
        assert schedule_lr(schedule, 5) == pytest.approx(0.5)
        assert schedule_lr(schedule, 10) == pytest.approx(1.0)
        assert schedule_lr(schedule, 100) == pytest.approx(0.0, abs=1e-12)

    def test_default_warmup_is_five_percent(self):
        assert Schedule(total_steps=200).warmup_steps == 10

    def test_constant(self):
        schedule = Schedule(total_steps=10, kind=ScheduleKind.CONSTANT)
        assert {schedule_lr(schedule, t) for t in range(11)} == {1.0}

    def test_monotone_after_warmup(self):
        schedule = Schedule(total_steps=50, warmup_steps=5)
        values = [schedule_lr(schedule, t) for t in range(5, 51)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_invalid(self):
        with pytest.raises(ConfigError):
            Schedule(total_steps=10, warmup_steps=10)
        with pytest.raises(ContractError):
            schedule_lr(Schedule(total_steps=10), 11)


class TestSweep:
    def test_default_grid_has_28_points(self):
        points = build_sweep()
        assert len(points) == 28
        assert len(set(points)) == 28

    def test_custom_grid(self):
        assert build_sweep(SweepGrid((0.1,), (0.0, 1e-4))) == [(0.1, 0.0), (0.1, 1e-4)]

    def test_writes_one_config_per_point(self, tmp_path):
        grid = SweepGrid((0.1, 0.01), (0.0,))
        paths = write_sweep_configs({"optim": {"momentum": 0.9}}, tmp_path, grid)
        assert len(paths) == 2
        lrs = sorted(read_json(path)["optim"]["lr"] for path in paths)
        assert lrs == [0.01, 0.1]
