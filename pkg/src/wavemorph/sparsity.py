"""Group-Lasso machinery on first-layer input-channel groups.

Group ``c`` of a conv weight ``w`` with shape (N, C, kh, kw) is the slice
``w[:, c, :, :]``. The penalty is ``lam * sum_c ||w[:, c]||_2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ConfigError, SelectionError
from .wavelet import PATHS, SubbandPath

DEFAULT_THRESHOLD = 1e-3
SUBGRADIENT_EPS = 1e-12


def _weights(conv1):
    w = conv1["conv1.w"] if isinstance(conv1, dict) else conv1
    w = np.asarray(w)
    if w.ndim != 4:
        raise ConfigError(f"expected a 4-D conv weight, got shape {w.shape}")
    return w


def group_norms(conv1) -> np.ndarray:
    """Euclidean norm of each input-channel group, shape (C,), in float64."""
    w = _weights(conv1).astype(np.float64)
    return np.sqrt(np.einsum("nchw,nchw->c", w, w))


def penalty(conv1, lam: float) -> float:
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0 (got {lam})")
    if lam == 0:
        return 0.0
    return float(lam * group_norms(conv1).sum())


def penalty_subgradient(conv1, lam: float, eps: float = SUBGRADIENT_EPS) -> np.ndarray:
    """``lam * w_g / ||w_g||`` on groups with norm > eps, zero blocks elsewhere."""
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    w = _weights(conv1)
    norms = group_norms(w)
    scale = np.where(norms > eps, lam / np.where(norms > eps, norms, 1.0), 0.0)
    return (w * scale[None, :, None, None]).astype(w.dtype)


def prox_group(conv1, tau) -> np.ndarray:
    """Block soft-threshold: scale each group by ``max(0, 1 - tau_g / ||w_g||)``.

    ``tau`` is a scalar or a per-group vector. Groups with norm <= tau come
    out exactly zero. Returns a new array; the input is not modified.
    """
    w = _weights(conv1)
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (w.shape[1],))
    if np.any(tau < 0):
        raise ConfigError("tau must be >= 0")
    norms = group_norms(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > tau, 1.0 - tau / norms, 0.0)
    out = w * scale[None, :, None, None].astype(w.dtype)
    out[:, scale == 0.0] = 0
    return out


@dataclass
class SelectionResult:
    lam: float
    threshold: float
    norms: np.ndarray
    selected: list
    paths: list = field(default_factory=list)
    mode: str = "proximal"

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambda": self.lam,
                "threshold": self.threshold,
                "mode": self.mode,
                "norms": [float(v) for v in self.norms],
                "selected": [int(i) for i in self.selected],
                "paths": [str(p) for p in self.paths],
            },
            indent=2,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "SelectionResult":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"selection file not found: {path}")
        try:
            rec = json.loads(path.read_text())
            return cls(
                lam=float(rec["lambda"]),
                threshold=float(rec["threshold"]),
                norms=np.asarray(rec["norms"], dtype=np.float64),
                selected=[int(i) for i in rec["selected"]],
                paths=[SubbandPath.parse(p) for p in rec["paths"]],
                mode=str(rec.get("mode", "proximal")),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ArtifactError(f"{path}: malformed selection ({exc})") from None


def select_subbands(conv1, lam: float, threshold: float = DEFAULT_THRESHOLD, paths=None,
                    mode: str = "proximal") -> SelectionResult:
    """Keep the input channels whose group norm is at least ``threshold``."""
    if threshold <= 0:
        raise ConfigError("threshold must be > 0")
    norms = group_norms(conv1)
    selected = [int(i) for i in np.flatnonzero(norms >= threshold)]
    if paths is None:
        paths = list(PATHS) if norms.size == len(PATHS) else [None] * norms.size
    if not selected:
        dump = ", ".join(f"{i}:{v:.3g}" for i, v in enumerate(norms))
        raise SelectionError(f"no group norm reaches threshold {threshold}; norms = [{dump}]")
    return SelectionResult(lam, threshold, norms, selected, [paths[i] for i in selected], mode)
