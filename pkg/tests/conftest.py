"""Shared fixtures and independent numeric oracles.

Oracles here never call the implementation paths they are checking:
the DFT oracle is a direct O(N^2) matrix evaluation, the convolution
oracle is an explicit loop, and the metrics oracle counts with Python
loops.
"""

import numpy as np
import pytest

from enginediag.audio import CANONICAL_RATE, CLIP_SAMPLES, Clip


def make_clip(samples, source_id="test", chunk_index=0, split=None) -> Clip:
    samples = np.asarray(samples, dtype=np.float32)
    if samples.shape != (CLIP_SAMPLES,):
        raise ValueError("test clips must be full length")
    return Clip(samples=samples, source_id=source_id,
                chunk_index=chunk_index, split=split)


def tone_clip(freq_hz, amplitude=0.5, phase=0.0) -> Clip:
    t = np.arange(CLIP_SAMPLES) / CANONICAL_RATE
    return make_clip(amplitude * np.sin(2 * np.pi * freq_hz * t + phase))


def noise_clip(seed=0, scale=0.2) -> Clip:
    rng = np.random.default_rng(seed)
    return make_clip(np.clip(rng.normal(0.0, scale, CLIP_SAMPLES), -1, 1),
                     source_id=f"noise{seed}")


def brute_dft_mag(x, k_max=None, block=256):
    """Direct O(N^2) DFT magnitudes for bins 0..k_max-1 (no FFT calls)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k_max is None:
        k_max = n // 2 + 1
    out = np.empty(k_max)
    ns = np.arange(n)
    for start in range(0, k_max, block):
        ks = np.arange(start, min(start + block, k_max))[:, None]
        out[start:start + len(ks)] = np.abs(
            np.exp(-2j * np.pi * ks * ns[None, :] / n) @ x)
    return out


def brute_conv2d(x, w, b, stride):
    """Quadruple-loop valid cross-correlation oracle."""
    bsz, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    h_out = (h - kh) // stride + 1
    w_out = (wd - kw) // stride + 1
    out = np.zeros((bsz, c_out, h_out, w_out))
    for n in range(bsz):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for c in range(c_in):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += x[n, c, i * stride + di, j * stride + dj] \
                                    * w[o, c, di, dj]
                    out[n, o, i, j] = acc + b[o]
    return out


def brute_metrics(y_true, y_pred, n_classes):
    """Loop-based confusion counts and macro precision/recall.

    Macro recall averages classes with support; macro precision averages
    classes with support that were predicted at least once.
    """
    confusion = [[0] * n_classes for _ in range(n_classes)]
    for t, p in zip(y_true, y_pred):
        confusion[t][p] += 1
    total = len(y_true)
    correct = sum(confusion[c][c] for c in range(n_classes))
    recalls, precisions = [], []
    for c in range(n_classes):
        support = sum(confusion[c])
        predicted = sum(confusion[r][c] for r in range(n_classes))
        if support > 0:
            recalls.append(confusion[c][c] / support)
            if predicted > 0:
                precisions.append(confusion[c][c] / predicted)
    return {
        "confusion": confusion,
        "accuracy": correct / total if total else 0.0,
        "recall": sum(recalls) / len(recalls) if recalls else 0.0,
        "precision": sum(precisions) / len(precisions) if precisions else 0.0,
    }


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 24-source synthetic corpus (3 s each) with splits assigned."""
    from enginediag import synth
    from enginediag import train as train_mod

    root = tmp_path_factory.mktemp("corpus")
    manifest = synth.synth_corpus(synth.balanced_counts(24), seed=7, out_dir=root)
    rows = train_mod.split_dataset(train_mod.read_manifest(manifest), seed=1)
    return root, rows
