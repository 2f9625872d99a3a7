"""Two-phase training: group-sparse phase 1 with a lambda sweep, then retraining.

Optimisation is minibatch Adam on mean BCE, learning rate ``lr0`` divided by
10 every 20 epochs. The group penalty is handled in one of two modes:

``subgradient``
    ``lam * w_g / ||w_g||`` is added to the conv1 gradient before the Adam step.
``proximal`` (default)
    after the Adam step conv1 goes through the block soft-threshold. The
    threshold uses Adam's effective step for each group,
    ``tau_g = lr * lam / mean_g(sqrt(v_hat) + eps)``; this is the exact prox
    of the penalty in the metric that is diagonal and constant on each group.
    A zeroed group stays at zero while ``||m_hat_g|| <= lam``.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .convnet import ModelConfig, backward, bce_loss, forward, init_model, predict_logits, sigmoid
from .dataio import StackDataset
from .errors import ConfigError, NumericError, SelectionError
from .sparsity import (
    DEFAULT_THRESHOLD,
    SelectionResult,
    group_norms,
    penalty,
    penalty_subgradient,
    prox_group,
    select_subbands,
)
from .wavelet import PATHS

log = logging.getLogger(__name__)

MODES = ("proximal", "subgradient")
DEFAULT_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    epochs: int = 150
    lr0: float = 1e-3
    lr_step: int = 20
    lr_factor: float = 10.0
    batch_size: int = 32
    seed: int = 0
    mode: str = "proximal"
    threshold: float = DEFAULT_THRESHOLD
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    conv_channels: tuple = (32, 64, 128)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.threshold <= 0:
            raise ConfigError("threshold must be > 0")
        if self.lr_step < 1 or self.lr_factor < 1:
            raise ConfigError("lr_step must be >= 1 and lr_factor >= 1")


def lr_at(epoch: int, lr0: float = 1e-3, step: int = 20, factor: float = 10.0) -> float:
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return lr0 / factor ** (epoch // step)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})

    def v_hat(self, name, beta2=0.999):
        return self.v[name] / (1.0 - beta2 ** self.t)


def adam_step(params, grads, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name} at step {state.t + 1}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(params[name].dtype)
    return params, state


def adam_group_scale(state: AdamState, beta2: float, eps: float) -> np.ndarray:
    """Per-input-channel mean of Adam's denominator on conv1, shape (C,)."""
    denom = np.sqrt(state.v_hat("conv1.w", beta2).astype(np.float64)) + eps
    return denom.mean(axis=(0, 2, 3))


@dataclass
class TrainReport:
    lam: float
    mode: str
    loss_history: list  # per epoch {"classification", "penalty", "total"}
    norm_history: list  # per epoch group norm vectors
    params: dict
    model_cfg: ModelConfig
    val_auc: float | None = None
    val_scores: np.ndarray | None = None
    lr_history: list = field(default_factory=list)

    @property
    def final_norms(self) -> np.ndarray:
        return self.norm_history[-1]

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "mode": self.mode,
            "val_auc": self.val_auc,
            "loss_history": self.loss_history,
            "lr_history": self.lr_history,
            "norm_history": [[float(v) for v in n] for n in self.norm_history],
            "in_channels": self.model_cfg.in_channels,
            "channel_indices": list(self.model_cfg.bands),
        }


def score(params, ds: StackDataset, batch_size: int = 64) -> np.ndarray:
    """Morph likelihood (sigmoid of the logit) for every sample."""
    return sigmoid(predict_logits(params, ds.x, batch_size).astype(np.float64))


def train_model(train: StackDataset, cfg: TrainConfig, model_cfg: ModelConfig | None = None,
                val: StackDataset | None = None, dtype=np.float32) -> TrainReport:
    """Minimise mean BCE + lam * group penalty on conv1 with Adam."""
    if len(train) == 0:
        raise ConfigError("empty training split")
    if model_cfg is None:
        model_cfg = ModelConfig(in_channels=train.x.shape[1], image_size=train.x.shape[-1],
                                conv_channels=tuple(cfg.conv_channels))
    if train.x.shape[1] != model_cfg.in_channels:
        raise ConfigError(f"data has {train.x.shape[1]} channels, model expects {model_cfg.in_channels}")
    params = init_model(model_cfg, cfg.seed, dtype=dtype)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 1])
    x = np.ascontiguousarray(train.x, dtype=dtype)
    y = np.asarray(train.labels, dtype=np.float64)
    n = len(y)
    betas = (cfg.beta1, cfg.beta2)
    losses, norms, lrs = [], [], []
    last_good = copy.deepcopy(params)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.lr0, cfg.lr_step, cfg.lr_factor)
        order = rng.permutation(n)
        cl_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = forward(params, x[idx])
            loss = bce_loss(logits, y[idx])
            if not np.isfinite(loss):
                err = NumericError(f"non-finite loss at epoch {epoch}")
                err.last_good = last_good
                raise err
            grads = backward(params, cache, y[idx])
            if cfg.lam > 0 and cfg.mode == "subgradient":
                grads["conv1.w"] = grads["conv1.w"] + penalty_subgradient(params["conv1.w"], cfg.lam)
            try:
                adam_step(params, grads, state, lr, betas, cfg.adam_eps)
            except NumericError as err:
                err.last_good = last_good
                raise
            if cfg.lam > 0 and cfg.mode == "proximal":
                tau = lr * cfg.lam / adam_group_scale(state, cfg.beta2, cfg.adam_eps)
                params["conv1.w"][...] = prox_group(params["conv1.w"], tau)
            cl_sum += loss * len(idx)
        cl = cl_sum / n
        pen = penalty(params["conv1.w"], cfg.lam)
        losses.append({"classification": cl, "penalty": pen, "total": cl + pen})
        norms.append(group_norms(params["conv1.w"]))
        lrs.append(lr)
        last_good = copy.deepcopy(params)
        log.debug("epoch %d lr %.1e loss %.5f penalty %.5f", epoch, lr, cl, pen)
    report = TrainReport(cfg.lam, cfg.mode, losses, norms, params, model_cfg, lr_history=lrs)
    if val is not None and len(val):
        report.val_scores = score(params, val)
        report.val_auc = metrics.auc(metrics.ScoreSet(report.val_scores, val.labels))
    return report


def train_phase1(data: StackDataset, cfg: TrainConfig) -> TrainReport:
    """Group-sparse training on the full 48-band stack (train split), val AUC on val."""
    if data.x.shape[1] != len(PATHS):
        raise ConfigError(f"phase 1 expects {len(PATHS)}-channel stacks, got {data.x.shape[1]}")
    train, val = data.subset("train"), data.subset("val")
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("phase 1 needs non-empty train and val splits")
    return train_model(train, cfg, val=val)


def select(report: TrainReport, threshold: float | None = None) -> SelectionResult:
    paths = [PATHS[i] for i in report.model_cfg.bands]
    thr = DEFAULT_THRESHOLD if threshold is None else threshold
    return select_subbands(report.params["conv1.w"], report.lam, thr, paths, report.mode)


def train_phase2(data: StackDataset, selection: SelectionResult, cfg: TrainConfig) -> TrainReport:
    """Fresh model on the selected bands only, no sparsity penalty."""
    if len(selection.norms) != data.x.shape[1]:
        raise ConfigError(f"selection covers {len(selection.norms)} channels but data has {data.x.shape[1]}")
    if not selection.selected:
        raise SelectionError("empty selection")
    reduced = data.channels(selection.selected)
    cfg2 = replace(cfg, lam=0.0)
    model_cfg = ModelConfig(
        in_channels=len(selection.selected),
        image_size=data.x.shape[-1],
        conv_channels=tuple(cfg.conv_channels),
        channel_indices=tuple(selection.selected),
        note="retrained on selected sub-bands",
    )
    return train_model(reduced.subset("train"), cfg2, model_cfg, val=reduced.subset("val"))


@dataclass
class SweepResult:
    entries: list  # {"lambda", "val_auc", "n_selected", "status"}
    best_lambda: float
    reports: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        return {"entries": self.entries, "best_lambda": self.best_lambda}


def sweep_lambda(data: StackDataset, grid, cfg: TrainConfig, keep_reports: bool = True) -> SweepResult:
    """Phase-1 training per lambda (same seed); best = highest val AUC, ties to larger lambda."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigError("lambda grid is empty")
    entries, reports = [], {}
    for lam in grid:
        try:
            rep = train_phase1(data, replace(cfg, lam=lam))
        except NumericError as exc:
            log.warning("lambda %g failed: %s", lam, exc)
            entries.append({"lambda": lam, "val_auc": None, "n_selected": None, "status": "failed"})
            continue
        try:
            n_sel = len(select(rep, cfg.threshold).selected)
        except SelectionError:
            n_sel = 0
        entries.append({"lambda": lam, "val_auc": rep.val_auc, "n_selected": n_sel, "status": "ok"})
        if keep_reports:
            reports[lam] = rep
    ok = [e for e in entries if e["status"] == "ok"]
    if not ok:
        raise NumericError("every lambda in the sweep failed")
    best = max(ok, key=lambda e: (e["val_auc"], e["lambda"]))
    return SweepResult(entries, best["lambda"], reports)
