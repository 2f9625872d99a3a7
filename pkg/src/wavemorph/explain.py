"""Grad-CAM on the final conv block and penultimate embedding export."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .convnet import forward, head_backward
from .dataio import resize_bilinear, save_pgm
from .errors import InputError
from .wavelet import SubbandStack

TARGETS = ("bonafide", "morph")


@dataclass
class CamIntermediates:
    alpha: np.ndarray  # (K,)
    feature_maps: np.ndarray  # (K, H', W')
    grads: np.ndarray  # (K, H', W') d y / d A
    z: int


@dataclass
class CamMap:
    values: np.ndarray  # (H', W'), >= 0
    target: str


def _as_batch(x, params):
    data = x.data if isinstance(x, SubbandStack) else np.asarray(x)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4 or data.shape[1] != params["conv1.w"].shape[1]:
        raise InputError(f"input shape {data.shape} does not match model channels {params['conv1.w'].shape[1]}")
    return data


def cam_from(feature_maps, grads):
    """ReLU(sum_k alpha_k A^k) with alpha_k the spatial mean of d y / d A^k."""
    K, H, W = feature_maps.shape
    z = H * W
    alpha = grads.sum(axis=(1, 2)) / z
    cam = np.maximum(np.tensordot(alpha, feature_maps, axes=1), 0.0)
    return cam, alpha, z


def grad_cam(params, x, target: str = "morph"):
    """Class activation map for one input stack.

    The class score is the logit for ``"morph"`` and its negation for
    ``"bonafide"`` (single-logit head).
    """
    if target not in TARGETS:
        raise InputError(f"target must be one of {TARGETS}")
    batch = _as_batch(x, params)
    if batch.shape[0] != 1:
        raise InputError("grad_cam takes a single input")
    _, cache = forward(params, batch)
    sign = 1.0 if target == "morph" else -1.0
    grads = head_backward(params, cache.a3.shape, np.array([sign], dtype=cache.a3.dtype))[0]
    A = cache.a3[0]
    values, alpha, z = cam_from(A.astype(np.float64), grads.astype(np.float64))
    return CamMap(values, target), CamIntermediates(alpha, A, grads, z)


def extract_embeddings(params, batch, batch_size: int = 64) -> np.ndarray:
    """Global-average-pooled final-block activations, shape (B, K)."""
    batch = _as_batch(batch, params)
    out = [forward(params, batch[i:i + batch_size])[1].embedding for i in range(0, len(batch), batch_size)]
    return np.concatenate(out).astype(np.float64)


def save_embeddings_csv(path, embeddings, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(embeddings.shape[1])])
        for lab, row in zip(labels, embeddings):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def normalize_cam(values) -> np.ndarray:
    """Min-max to [0, 1]; all-zero and constant maps become all zero."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InputError("CAM contains non-finite values")
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def render_cam(cam: CamMap, base_image, out_path, csv_path=None) -> np.ndarray:
    """Write an overlay PGM (half base image, half heat) and the raw CAM grid as CSV.

    Returns the upsampled normalised heat map.
    """
    base = np.asarray(base_image, dtype=np.float64)
    heat = resize_bilinear(normalize_cam(cam.values), *base.shape)
    save_pgm(0.5 * base + 0.5 * heat, out_path)
    if csv_path is not None:
        np.savetxt(csv_path, np.asarray(cam.values, dtype=np.float64), delimiter=",", fmt="%.17g")
    return heat
