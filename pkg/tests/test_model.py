"""
Tests for the network variants.
"""

import numpy as np
import pytest

from eloqnet import diffcore as dc
from eloqnet.connectivity import (
    DynamicConnectivity,
    TimeSeries,
    TumorMask,
    WindowConfig,
)
from eloqnet.diffcore import Tensor, check_gradients
from eloqnet.errors import ConfigError, DimensionError
from eloqnet.layers import AttentionPair
from eloqnet.loss import LabelTensor, LossMode, total_loss
from eloqnet.model import (
    MOTOR_TASKS,
    TASKS,
    HeadOutputs,
    ModelConfig,
    NodeClass,
    Task,
    Variant,
    aggregate_scores,
    ann_hidden_size,
    build_variant,
    count_parameters,
    forward,
    parameter_table,
    predict_labels,
    prepare_connectivity,
)


def _static(connectivity):
    return DynamicConnectivity(matrices=connectivity.matrices[:1])


def _labels(regions, tasks=TASKS):
    eloquent = {task: [k % regions, (k + 1) % regions] for k, task in enumerate(tasks)}
    return LabelTensor.from_regions(regions, eloquent, tumor=[regions - 1])


class TestTask:
    def test_systems(self):
        assert Task.LANGUAGE.system == "language"
        assert {t.system for t in MOTOR_TASKS} == {"motor"}

    def test_str_is_value(self):
        assert str(Task.FINGER) == "finger"
        assert str(Variant.MT_GNN_STATIC) == "mt-gnn-static"

    def test_class_order(self):
        assert [int(c) for c in NodeClass] == [0, 1, 2]


class TestModelConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"filters": 0},
            {"fc_dims": (4,)},
            {"lstm_hidden": 0},
            {"variant": "transformer"},
            {"heads": ("language", "finger", "foot")},
            {"leaky_slope": float("inf")},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(regions=8, **kwargs)

    def test_variant_from_string(self):
        assert ModelConfig(regions=8, variant="mt-ann").variant is Variant.MT_ANN


class TestBuildVariant:
    def test_proposed_groups(self, small_model_cfg, rng):
        state = build_variant(small_model_cfg, rng)
        groups = list(state.groups())
        assert groups[:4] == ["e2e", "e2n", "n2g", "lstm"]
        assert groups[-4:] == [f"head.{t}" for t in TASKS]

    def test_static_has_no_attention_layers(self, small_model_cfg, rng):
        cfg = ModelConfig(regions=8, filters=2, variant=Variant.MT_GNN_STATIC)
        groups = build_variant(cfg, rng).groups()
        assert "lstm" not in groups
        assert "n2g" not in groups

    def test_ann_matches_convolutional_size(self):
        for regions, filters in [(8, 2), (90, 25), (30, 7)]:
            conv = ModelConfig(regions=regions, filters=filters)
            ann = ModelConfig(regions=regions, filters=filters, variant="mt-ann")
            conv_count = count_parameters(build_variant(conv, np.random.default_rng(0)))
            ann_state = build_variant(ann, np.random.default_rng(0))
            assert "e2e" not in ann_state.groups()
            step = regions + 1 + filters
            assert abs(count_parameters(ann_state) - conv_count) <= step
            assert ann_hidden_size(ann) >= 1

    def test_same_seed_same_parameters(self, small_model_cfg):
        a = build_variant(small_model_cfg, np.random.default_rng(5)).snapshot()
        b = build_variant(small_model_cfg, np.random.default_rng(5)).snapshot()
        assert list(a) == list(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_parameter_names_are_unique(self, small_model_cfg, rng):
        state = build_variant(small_model_cfg, rng)
        names = [p.name for p in state.parameters().values()]
        assert names == list(state.parameters())

    def test_parameter_table(self, small_model_cfg, rng):
        state = build_variant(small_model_cfg, rng)
        table = parameter_table(state)
        assert "total" in table
        assert str(count_parameters(state)) in table


class TestForward:
    def test_shapes(self, small_model_cfg, small_connectivity, rng):
        state = build_variant(small_model_cfg, rng)
        outputs = forward(small_connectivity, small_model_cfg, state)
        assert list(outputs.scores) == list(TASKS)
        assert outputs.stacked().shape == (4, 3, 8, 3)
        assert outputs.window_count == 3
        for a in outputs.attention.numpy():
            assert a.sum() == pytest.approx(1.0, abs=1e-12)

    def test_region_mismatch(self, small_connectivity, rng):
        cfg = ModelConfig(regions=9, filters=2, fc_dims=(4, 3), lstm_hidden=3)
        state = build_variant(cfg, rng)
        with pytest.raises(DimensionError):
            forward(small_connectivity, cfg, state)

    def test_static_attention_is_one(self, small_connectivity, rng):
        cfg = ModelConfig(regions=8, filters=2, fc_dims=(4, 3), variant="mt-gnn-static")
        state = build_variant(cfg, rng)
        outputs = forward(_static(small_connectivity), cfg, state)
        language, motor = outputs.attention.numpy()
        assert language.tolist() == [1.0]
        assert motor.tolist() == [1.0]

    def test_static_rejects_several_windows(self, small_connectivity, rng):
        cfg = ModelConfig(regions=8, filters=2, fc_dims=(4, 3), variant="mt-gnn-static")
        with pytest.raises(DimensionError):
            forward(small_connectivity, cfg, build_variant(cfg, rng))

    def test_ann_forward(self, small_connectivity, rng):
        cfg = ModelConfig(regions=8, filters=2, fc_dims=(4, 3), variant="mt-ann")
        outputs = forward(small_connectivity, cfg, build_variant(cfg, rng))
        assert outputs.stacked().shape == (4, 3, 8, 3)

    def test_tumor_signals_do_not_change_outputs(self, small_model_cfg, rng):
        window = WindowConfig(window_length=20, stride=10)
        mask = TumorMask(frozenset({2, 5}))
        data = rng.normal(size=(60, 8))
        changed = data.copy()
        changed[:, [2, 5]] = 10.0 * rng.normal(size=(60, 2))
        state = build_variant(small_model_cfg, rng)
        first, second = (
            forward(
                prepare_connectivity(TimeSeries(x), window, mask, Variant.PROPOSED),
                small_model_cfg,
                state,
            )
            for x in (data, changed)
        )
        np.testing.assert_array_equal(first.stacked(), second.stacked())
        for a, b in zip(first.attention.numpy(), second.attention.numpy()):
            np.testing.assert_array_equal(a, b)

    def test_zero_connectivity_gives_constant_outputs(self, small_model_cfg, rng):
        state = build_variant(small_model_cfg, rng)
        connectivity = DynamicConnectivity(matrices=np.zeros((4, 8, 8)))
        outputs = forward(connectivity, small_model_cfg, state)
        for task in TASKS:
            scores = outputs.scores[task].value
            for t in range(1, 4):
                np.testing.assert_allclose(scores[t], scores[0], rtol=1e-12, atol=1e-14)

    def test_e2e_size_at_full_scale(self):
        cfg = ModelConfig(regions=384, filters=25)
        state = build_variant(cfg, np.random.default_rng(0))
        e2e = state.groups()["e2e"]
        assert sum(t.size for t in e2e.values()) == 2 * 25 * 384 + 25 == 19225

    def test_prepare_connectivity_per_variant(self, rng):
        ts = TimeSeries(rng.normal(size=(60, 6)))
        window = WindowConfig(window_length=20, stride=10)
        mask = TumorMask(frozenset({2}))
        dynamic = prepare_connectivity(ts, window, mask, Variant.PROPOSED)
        static = prepare_connectivity(ts, window, mask, Variant.MT_GNN_STATIC)
        assert dynamic.window_count == 5
        assert static.window_count == 1
        assert np.all(static.matrices[0, 2] == 0.0)


class TestAggregation:
    def test_attention_weighted_sum(self, small_model_cfg, small_connectivity, rng):
        state = build_variant(small_model_cfg, rng)
        outputs = forward(small_connectivity, small_model_cfg, state)
        aggregated = aggregate_scores(outputs)
        language, motor = outputs.attention.numpy()
        for task in TASKS:
            weights = language if task is Task.LANGUAGE else motor
            expected = np.einsum("t,tnc->nc", weights, outputs.scores[task].value)
            np.testing.assert_allclose(aggregated[task].value, expected)

    def test_convex_combination(self, small_model_cfg, small_connectivity, rng):
        state = build_variant(small_model_cfg, rng)
        outputs = forward(small_connectivity, small_model_cfg, state)
        aggregated = aggregate_scores(outputs)
        for task in TASKS:
            scores = outputs.scores[task].value
            assert np.all(aggregated[task].value >= scores.min(axis=0) - 1e-12)
            assert np.all(aggregated[task].value <= scores.max(axis=0) + 1e-12)

    def test_one_hot_attention_selects_a_window(self, rng):
        scores = {task: Tensor(rng.normal(size=(3, 5, 3))) for task in TASKS}
        attention = AttentionPair(
            language=Tensor(np.array([0.0, 1.0, 0.0])),
            motor=Tensor(np.array([0.0, 0.0, 1.0])),
        )
        aggregated = aggregate_scores(HeadOutputs(scores=scores, attention=attention))
        np.testing.assert_array_equal(
            aggregated[Task.LANGUAGE].value, scores[Task.LANGUAGE].value[1]
        )
        for task in MOTOR_TASKS:
            np.testing.assert_array_equal(aggregated[task].value, scores[task].value[2])

    def test_labels_survive_monotone_transforms(self, rng):
        scores = rng.normal(size=(12, 3))
        expected = predict_labels({Task.FOOT: Tensor(scores)})[Task.FOOT]
        for transform in (np.exp, lambda s: 3.0 * s - 7.0, lambda s: s**3):
            predicted = predict_labels({Task.FOOT: Tensor(transform(scores))})
            np.testing.assert_array_equal(predicted[Task.FOOT], expected)

    def test_ties_go_to_lowest_class(self):
        scores = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0], [3.0, 3.0, 3.0]])
        predicted = predict_labels({Task.LANGUAGE: Tensor(scores)})
        assert predicted[Task.LANGUAGE].tolist() == [0, 1, 0]


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("mode", list(LossMode))
def test_model_gradients(variant, mode, small_connectivity, rng):
    cfg = ModelConfig(
        regions=8,
        filters=2,
        fc_dims=(4, 3),
        lstm_hidden=3,
        variant=variant,
    )
    assert cfg.leaky_slope == -0.1
    state = build_variant(cfg, rng)
    connectivity = (
        _static(small_connectivity)
        if variant is Variant.MT_GNN_STATIC
        else small_connectivity
    )
    labels = _labels(8)

    def f():
        return total_loss(forward(connectivity, cfg, state), labels, mode=mode).total

    # Rounding in f bounds the numeric estimate to about 2e-9 at h=1e-6, so
    # entries below 1e-3 are measured against 1e-3
    report = check_gradients(f, state.parameters(), h=1e-6, tol=1e-5, floor=1e-3)
    assert report.checked == count_parameters(state)
    assert report.passed, (report.worst, report.max_error)


def test_absent_head_receives_no_gradient(small_model_cfg, small_connectivity, rng):
    state = build_variant(small_model_cfg, rng)
    labels = _labels(8, tasks=(Task.LANGUAGE, Task.FOOT))
    with dc.ComputeGraph() as graph:
        loss = total_loss(forward(small_connectivity, small_model_cfg, state), labels)
    graph.backward(loss.total)
    for task in (Task.FINGER, Task.TONGUE):
        for p in state.head_parameters(task).values():
            assert np.all(p.grad == 0.0)
    assert np.any(state.head_parameters(Task.FOOT)["head.foot.weight"].grad != 0.0)
