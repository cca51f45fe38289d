import numpy as np
import pytest

from enginediag import models, nn
from enginediag.errors import EmptyLabelSet, ShapeMismatch, UnknownFeatureKind
from enginediag.labels import ATTRIBUTE_TASKS, CLASS_COUNTS, TASK_NAMES, LabelSet

HEAD_WIDTHS = {"fuel": 2, "config": 3, "cylinders": 6, "aspiration": 2, "misfire": 2}


def small_x(kind, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    if kind in models.TWO_D_KINDS:
        return rng.standard_normal((batch, 1, 30, 13)).astype(np.float32)
    return rng.standard_normal((batch, 1, 2600)).astype(np.float32)


def labels_batch(n=2):
    pool = [
        LabelSet(fuel="gasoline", config="inline", cylinders=4,
                 aspiration="normal", status="normal"),
        LabelSet(fuel="diesel", config="v", cylinders=6,
                 aspiration="turbo", status="misfire"),
        LabelSet(fuel="gasoline", config="flat", cylinders=4,
                 aspiration="turbo", status="normal"),
    ]
    return [pool[i % len(pool)] for i in range(n)]


class TestBuildTrunk:
    def test_1d_structure(self):
        trunk, width = models.build_trunk("waveform", rng=np.random.default_rng(0))
        convs = [l for l in trunk.layers if isinstance(l, nn.Conv1d)]
        assert len(convs) == 4
        assert convs[0].kernel == 80 and convs[0].stride == 4
        assert all(c.kernel == 3 and c.stride == 1 for c in convs[1:])
        assert width == 512

    def test_mfcc_structure(self):
        trunk, width = models.build_trunk("mfcc", rng=np.random.default_rng(0))
        convs = [l for l in trunk.layers if isinstance(l, nn.Conv2d)]
        assert len(convs) == 3
        assert all((c.kh, c.kw) == (2, 2) for c in convs)
        assert width == 128

    def test_spectrogram_kernels(self):
        trunk, _ = models.build_trunk("spectrogram", rng=np.random.default_rng(0))
        convs = [l for l in trunk.layers if isinstance(l, nn.Conv2d)]
        assert all((c.kh, c.kw) == (3, 3) for c in convs)

    def test_block_order(self):
        trunk, _ = models.build_trunk("fft", rng=np.random.default_rng(0))
        kinds = [type(l).__name__ for l in trunk.layers[:5]]
        assert kinds == ["Conv1d", "MaxPool1d", "BatchNorm", "ReLU", "Dropout"]

    def test_embedding_width_independent_of_input_width(self):
        trunk, width = models.build_trunk("fft", rng=np.random.default_rng(0),
                                          dtype=np.float64)
        for w in (2600, 4000, 24_000):
            out = trunk.forward(np.random.default_rng(1).standard_normal((1, 1, w)))
            assert out.shape == (1, width)

    def test_unknown_kind(self):
        with pytest.raises(UnknownFeatureKind):
            models.build_trunk("cepstrum", rng=np.random.default_rng(0))


class TestParallel:
    def test_head_widths(self):
        model = models.build_parallel("mfcc", seed=1)
        outs = model.forward(small_x("mfcc"), training=False)
        assert {t: o.shape[1] for t, o in outs.items()} == HEAD_WIDTHS

    def test_log_distributions(self):
        model = models.build_parallel("mfcc", seed=1)
        outs = model.forward(small_x("mfcc", batch=3), training=False)
        for out in outs.values():
            np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-5)

    def test_parameter_count_stable(self):
        model = models.build_parallel("fft", seed=2)
        count = sum(p.data.size for p in model.named_parameters().values())
        again = models.build_parallel("fft", seed=3)
        assert count == sum(p.data.size for p in again.named_parameters().values())

    def test_batch_permutation_equivariant(self):
        model = models.build_parallel("mfcc", seed=4)
        x = small_x("mfcc", batch=5, seed=9)
        perm = np.array([3, 0, 4, 1, 2])
        outs = model.forward(x, training=False)
        outs_perm = model.forward(x[perm], training=False)
        for task in TASK_NAMES:
            np.testing.assert_allclose(outs[task][perm], outs_perm[task], atol=1e-6)

    def test_longer_input_forwards(self):
        # Global average pooling makes inference length-agnostic: features
        # of a 4-second clip (non-canonical width) must forward cleanly.
        model = models.build_parallel("fft", seed=5)
        out = model.forward(
            np.random.default_rng(0).standard_normal((1, 1, 32_000)).astype(np.float32),
            training=False)
        assert out["misfire"].shape == (1, 2)


class TestCascade:
    def test_bridge_width(self):
        model = models.build_cascade("mfcc", seed=1)
        assert model.misfire_head.linear.in_features == model.embed_width + 13

    def test_disjoint_stage_parameters(self):
        model = models.build_cascade("mfcc", seed=1)
        names = set(model.named_parameters())
        stage1 = {n for n in names if n.startswith("stage1.")}
        stage2 = {n for n in names if n.startswith("stage2.")}
        assert stage1 | stage2 == names
        assert not (stage1 & stage2)
        assert stage1 and stage2

    def test_soft_equals_detached_forward(self):
        model = models.build_cascade("mfcc", seed=2)
        x = small_x("mfcc", batch=3)
        soft = model.forward(x, training=False, mode="soft")
        detached = model.forward(x, training=False, mode="detached")
        for task in TASK_NAMES:
            np.testing.assert_array_equal(soft[task], detached[task])

    def test_oracle_bridge_is_one_hot(self):
        model = models.build_cascade("mfcc", seed=3)
        labels = labels_batch(2)
        x = small_x("mfcc", batch=2)
        bridge = models._one_hot_labels(labels, np.float32)
        assert bridge.shape == (2, 13)
        assert np.all(bridge.sum(axis=1) == 4.0)  # exactly four ones
        outs = model.forward(x, training=False, mode="oracle", labels=labels)
        assert outs["misfire"].shape == (2, 2)

    def test_oracle_requires_labels(self):
        model = models.build_cascade("mfcc", seed=3)
        with pytest.raises(ShapeMismatch):
            model.forward(small_x("mfcc"), training=False, mode="oracle")

    def test_zero_bridge_reduces_to_single_task_net(self):
        # With the cascaded inputs forced to zero the misfire path is a
        # plain trunk+head whose bridge weights are inert.
        model = models.build_cascade("mfcc", seed=4)
        x = small_x("mfcc", batch=2)
        zero_bridge = model.forward(x, training=False,
                                    cascade_override=np.zeros((2, 13)))
        w = model.misfire_head.linear.weight.data
        b = model.misfire_head.linear.bias.data
        emb2 = model.stage2_trunk.forward(x, training=False)
        logits = emb2 @ w[:model.embed_width] + b
        expected = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        np.testing.assert_allclose(zero_bridge["misfire"], expected, atol=1e-6)

    def test_forward_cascade_helper(self):
        model = models.build_cascade("mfcc", seed=5)
        outs = models.forward_cascade(model, small_x("mfcc"), mode="soft")
        assert set(outs) == set(TASK_NAMES)


class TestNaive:
    def test_fit_and_predict(self):
        labels = [LabelSet(fuel="gasoline")] * 867 + [LabelSet(fuel="diesel")] * 133
        baseline = models.NaiveBaseline().fit(labels)
        preds = baseline.predict(10)
        assert np.all(preds["fuel"] == 0)
        accuracy = np.mean([l.class_index("fuel") == 0 for l in labels])
        assert accuracy == pytest.approx(0.867)

    def test_single_sample(self):
        labels = [LabelSet(fuel="diesel", config="v", cylinders=8,
                           aspiration="turbo", status="misfire")]
        baseline = models.NaiveBaseline().fit(labels)
        preds = baseline.predict(1)
        assert all(preds[t][0] == labels[0].class_index(t) for t in TASK_NAMES)

    def test_tie_breaks_low_index(self):
        labels = [LabelSet(fuel="gasoline"), LabelSet(fuel="diesel")]
        baseline = models.NaiveBaseline().fit(labels)
        assert baseline.modes["fuel"] == 0

    def test_empty(self):
        with pytest.raises(EmptyLabelSet):
            models.NaiveBaseline().fit([])

    def test_masked_labels_skipped(self):
        labels = [LabelSet(fuel="diesel"), LabelSet(config="inline")]
        baseline = models.NaiveBaseline().fit(labels)
        assert baseline.modes["fuel"] == 1
        assert "misfire" not in baseline.modes


class TestDescriptors:
    def test_roundtrip_parallel(self):
        model = models.build_parallel("fft", dropout_p=0.25, seed=1)
        rebuilt = models.from_descriptor(model.descriptor())
        assert rebuilt.architecture == "parallel"
        assert rebuilt.feature_kind == "fft"
        assert rebuilt.dropout_p == 0.25

    def test_roundtrip_naive(self):
        baseline = models.NaiveBaseline({"fuel": 1, "misfire": 0})
        rebuilt = models.from_descriptor(baseline.descriptor())
        assert rebuilt.modes == {"fuel": 1, "misfire": 0}
