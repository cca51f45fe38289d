"""Classifier assembly: shared-trunk Parallel, two-stage Cascade, and the
modal-class Naive baseline.

1D features (waveform, fft, wavelets, fused) get a four-block trunk whose
first convolution uses kernel 80 at stride 4 to open a wide receptive
field; the remaining convolutions use kernel 3.  2D features get three
blocks (2x2 kernels for mfcc, 3x3 for the larger spectrogram).  Every
block is conv -> maxpool -> batchnorm -> relu -> dropout, and both trunk
families end in global average pooling, which makes inference agnostic
to the input feature length.

The Cascade's second stage sees its own trunk embedding concatenated
with the first stage's four attribute log-prob vectors (13 values); in
`soft` mode gradients flow through that bridge, `detached` treats the
bridge as constant, and `oracle` substitutes one-hot true labels.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from . import nn
from .errors import EmptyLabelSet, ShapeMismatch, UnknownFeatureKind
from .labels import (
    ATTRIBUTE_TASKS,
    CASCADE_WIDTH,
    CLASS_COUNTS,
    TASK_NAMES,
    LabelSet,
)

ONE_D_KINDS = ("waveform", "fft", "wavelets", "fused")
TWO_D_KINDS = ("mfcc", "spectrogram")

TRUNK_1D_CHANNELS = (128, 128, 256, 512)
TRUNK_2D_CHANNELS = (32, 64, 128)
CASCADE_MODES = ("soft", "detached", "oracle")


def build_trunk(feature_kind: str, dropout_p: float = 0.5, *, rng,
                dtype=np.float32) -> tuple[nn.Sequential, int]:
    """Convolutional trunk for one feature kind; returns (trunk, embed width)."""
    layers = []
    if feature_kind in ONE_D_KINDS:
        in_ch = 1
        for i, out_ch in enumerate(TRUNK_1D_CHANNELS):
            kernel, stride = (80, 4) if i == 0 else (3, 1)
            layers += [
                nn.Conv1d(in_ch, out_ch, kernel, stride, rng=rng, dtype=dtype),
                nn.MaxPool1d(4),
                nn.BatchNorm(out_ch, dtype=dtype),
                nn.ReLU(),
                nn.Dropout(dropout_p),
            ]
            in_ch = out_ch
    elif feature_kind in TWO_D_KINDS:
        kernel = 2 if feature_kind == "mfcc" else 3
        in_ch = 1
        for out_ch in TRUNK_2D_CHANNELS:
            layers += [
                nn.Conv2d(in_ch, out_ch, kernel, rng=rng, dtype=dtype),
                nn.MaxPool2d(2),
                nn.BatchNorm(out_ch, dtype=dtype),
                nn.ReLU(),
                nn.Dropout(dropout_p),
            ]
            in_ch = out_ch
    else:
        raise UnknownFeatureKind(feature_kind)
    layers.append(nn.GlobalAvgPool())
    return nn.Sequential(layers), in_ch


class Head:
    """Linear + log-softmax classification head for one task."""

    def __init__(self, in_width: int, classes: int, *, rng, dtype=np.float32):
        self.linear = nn.Linear(in_width, classes, rng=rng, dtype=dtype)
        self.log_softmax = nn.LogSoftmax()

    def forward(self, emb, training=False):
        return self.log_softmax.forward(self.linear.forward(emb, training), training)

    def backward(self, dout):
        return self.linear.backward(self.log_softmax.backward(dout))

    def params(self):
        return self.linear.params()

    def named_params(self, prefix):
        return {f"{prefix}{p.name}": p for p in self.linear.params()}


class ParallelModel:
    """One shared trunk, five task heads on the shared embedding."""

    architecture = "parallel"

    def __init__(self, feature_kind: str, dropout_p: float = 0.5, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.feature_kind = feature_kind
        self.dropout_p = dropout_p
        self.trunk, self.embed_width = build_trunk(
            feature_kind, dropout_p, rng=rng, dtype=dtype)
        self.heads = {
            task: Head(self.embed_width, CLASS_COUNTS[task], rng=rng, dtype=dtype)
            for task in TASK_NAMES
        }

    def forward(self, x, training=False):
        emb = self.trunk.forward(x, training=training)
        return {task: head.forward(emb, training) for task, head in self.heads.items()}

    def backward(self, dlogprobs):
        demb = None
        for task, head in self.heads.items():
            if task not in dlogprobs:
                continue
            dx = head.backward(dlogprobs[task])
            demb = dx if demb is None else demb + dx
        if demb is not None:
            self.trunk.backward(demb)

    def named_parameters(self):
        out = self.trunk.named_params("trunk.")
        for task in TASK_NAMES:
            out.update(self.heads[task].named_params(f"heads.{task}."))
        return out

    def named_buffers(self):
        return self.trunk.named_buffers("trunk.")

    def set_buffers(self, values):
        self.trunk.set_buffers(values, "trunk.")

    def reseed_dropout(self, seed: int):
        for i, layer in enumerate(self.trunk.dropouts()):
            layer.reseed(seed + i)

    def descriptor(self):
        return {"architecture": self.architecture,
                "feature_kind": self.feature_kind,
                "dropout_p": self.dropout_p}


def _one_hot_labels(labels: list[LabelSet], dtype) -> np.ndarray:
    """Attribute labels as a (b, 13) one-hot block; missing labels stay zero."""
    out = np.zeros((len(labels), CASCADE_WIDTH), dtype=dtype)
    for i, labelset in enumerate(labels):
        offset = 0
        for task in ATTRIBUTE_TASKS:
            idx = labelset.class_index(task)
            if idx is not None:
                out[i, offset + idx] = 1.0
            offset += CLASS_COUNTS[task]
    return out


class CascadeModel:
    """Stage 1 predicts attributes; stage 2 predicts misfire from its own
    trunk embedding concatenated with stage 1's cascaded predictions."""

    architecture = "cascade"

    def __init__(self, feature_kind: str, dropout_p: float = 0.5, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.feature_kind = feature_kind
        self.dropout_p = dropout_p
        self.dtype = dtype
        self.stage1_trunk, self.embed_width = build_trunk(
            feature_kind, dropout_p, rng=rng, dtype=dtype)
        self.attribute_heads = {
            task: Head(self.embed_width, CLASS_COUNTS[task], rng=rng, dtype=dtype)
            for task in ATTRIBUTE_TASKS
        }
        self.stage2_trunk, _ = build_trunk(feature_kind, dropout_p, rng=rng, dtype=dtype)
        self.misfire_head = Head(self.embed_width + CASCADE_WIDTH,
                                 CLASS_COUNTS["misfire"], rng=rng, dtype=dtype)

    def forward(self, x, training=False, mode: str = "soft",
                labels: list[LabelSet] | None = None,
                cascade_override: np.ndarray | None = None):
        if mode not in CASCADE_MODES:
            raise ValueError(f"unknown cascade mode {mode!r}")
        emb1 = self.stage1_trunk.forward(x, training=training)
        outputs = {task: head.forward(emb1, training)
                   for task, head in self.attribute_heads.items()}
        if cascade_override is not None:
            bridge = cascade_override.astype(self.dtype)
        elif mode == "oracle":
            if labels is None:
                raise ShapeMismatch("oracle mode needs the true labels")
            bridge = _one_hot_labels(labels, self.dtype)
        else:
            bridge = np.concatenate([outputs[t] for t in ATTRIBUTE_TASKS], axis=1)
        emb2 = self.stage2_trunk.forward(x, training=training)
        joined = np.concatenate([emb2, bridge], axis=1)
        outputs["misfire"] = self.misfire_head.forward(joined, training)
        self._mode = mode
        self._bridge_grad_flows = (mode == "soft" and cascade_override is None)
        return outputs

    def backward(self, dlogprobs):
        dbridge = None
        if "misfire" in dlogprobs:
            djoined = self.misfire_head.backward(dlogprobs["misfire"])
            self.stage2_trunk.backward(djoined[:, :self.embed_width])
            dbridge = djoined[:, self.embed_width:]
        demb1 = None
        offset = 0
        for task in ATTRIBUTE_TASKS:
            dhead = dlogprobs.get(task)
            width = CLASS_COUNTS[task]
            if dbridge is not None and self._bridge_grad_flows:
                extra = dbridge[:, offset:offset + width]
                dhead = extra if dhead is None else dhead + extra
            offset += width
            if dhead is None:
                continue
            dx = self.attribute_heads[task].backward(dhead)
            demb1 = dx if demb1 is None else demb1 + dx
        if demb1 is not None:
            self.stage1_trunk.backward(demb1)

    def named_parameters(self):
        out = self.stage1_trunk.named_params("stage1.trunk.")
        for task in ATTRIBUTE_TASKS:
            out.update(self.attribute_heads[task].named_params(f"stage1.heads.{task}."))
        out.update(self.stage2_trunk.named_params("stage2.trunk."))
        out.update(self.misfire_head.named_params("stage2.heads.misfire."))
        return out

    def named_buffers(self):
        out = self.stage1_trunk.named_buffers("stage1.trunk.")
        out.update(self.stage2_trunk.named_buffers("stage2.trunk."))
        return out

    def set_buffers(self, values):
        self.stage1_trunk.set_buffers(values, "stage1.trunk.")
        self.stage2_trunk.set_buffers(values, "stage2.trunk.")

    def reseed_dropout(self, seed: int):
        drops = self.stage1_trunk.dropouts() + self.stage2_trunk.dropouts()
        for i, layer in enumerate(drops):
            layer.reseed(seed + i)

    def descriptor(self):
        return {"architecture": self.architecture,
                "feature_kind": self.feature_kind,
                "dropout_p": self.dropout_p}


def build_parallel(feature_kind: str, dropout_p: float = 0.5, seed: int = 0,
                   dtype=np.float32) -> ParallelModel:
    return ParallelModel(feature_kind, dropout_p, seed, dtype)


def build_cascade(feature_kind: str, dropout_p: float = 0.5, seed: int = 0,
                  dtype=np.float32) -> CascadeModel:
    return CascadeModel(feature_kind, dropout_p, seed, dtype)


def forward_cascade(model: CascadeModel, features, mode: str = "soft",
                    labels: list[LabelSet] | None = None):
    """Run the two-stage graph; returns the five log-prob matrices."""
    return model.forward(features, training=False, mode=mode, labels=labels)


class NaiveBaseline:
    """Predicts each task's most frequent class (ties break to the lowest
    class index) for every input."""

    architecture = "naive"
    feature_kind = None

    def __init__(self, modes: dict[str, int] | None = None):
        self.modes = modes or {}

    def fit(self, labels: list[LabelSet]) -> "NaiveBaseline":
        if not labels:
            raise EmptyLabelSet("cannot fit the naive baseline on no labels")
        for task in TASK_NAMES:
            counts = Counter(
                idx for labelset in labels
                if (idx := labelset.class_index(task)) is not None)
            if not counts:
                continue
            best = max(counts.values())
            self.modes[task] = min(i for i, c in counts.items() if c == best)
        return self

    def predict(self, n: int) -> dict[str, np.ndarray]:
        return {task: np.full(n, mode, dtype=np.int64)
                for task, mode in self.modes.items()}

    def descriptor(self):
        return {"architecture": self.architecture, "modes": self.modes}


def from_descriptor(descriptor: dict, seed: int = 0):
    """Rebuild an untrained model skeleton from a checkpoint descriptor."""
    arch = descriptor["architecture"]
    if arch == "parallel":
        return ParallelModel(descriptor["feature_kind"],
                             descriptor.get("dropout_p", 0.5), seed)
    if arch == "cascade":
        return CascadeModel(descriptor["feature_kind"],
                            descriptor.get("dropout_p", 0.5), seed)
    if arch == "naive":
        return NaiveBaseline({t: int(i) for t, i in descriptor["modes"].items()})
    raise ValueError(f"unknown architecture {arch!r}")
