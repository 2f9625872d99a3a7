"""Morph-attack detection error rates.

Scores are morph likelihoods; a sample is classified as Morph iff
``score >= t``. Hence

    APCER(t) = #{morph : score < t} / #morph         (non-decreasing in t)
    BPCER(t) = #{bona fide : score >= t} / #bona fide (non-increasing in t)

Threshold sweeps run over the candidate set ``-inf``, every distinct score,
the midpoints between consecutive distinct scores, and ``+inf``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError

BONA_FIDE = 0
MORPH = 1


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray

    def __init__(self, scores, labels):
        s = np.asarray(scores, dtype=np.float64).ravel()
        y = np.asarray(labels).ravel().astype(int)
        if s.shape != y.shape:
            raise MetricError("scores and labels differ in length")
        if not np.all(np.isfinite(s)):
            raise MetricError("scores must be finite")
        if not np.all((y == BONA_FIDE) | (y == MORPH)):
            raise MetricError("labels must be 0 (bona fide) or 1 (morph)")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @property
    def morph(self) -> np.ndarray:
        return self.scores[self.labels == MORPH]

    @property
    def bona_fide(self) -> np.ndarray:
        return self.scores[self.labels == BONA_FIDE]

    def swapped(self) -> "ScoreSet":
        return ScoreSet(self.scores, 1 - self.labels)


def _need_morph(ss: ScoreSet):
    if not np.any(ss.labels == MORPH):
        raise MetricError("no morph scores")


def _need_bona(ss: ScoreSet):
    if not np.any(ss.labels == BONA_FIDE):
        raise MetricError("no bona fide scores")


def apcer(ss: ScoreSet, t: float) -> float:
    _need_morph(ss)
    m = ss.morph
    return float(np.count_nonzero(m < t) / m.size)


def bpcer(ss: ScoreSet, t: float) -> float:
    _need_bona(ss)
    b = ss.bona_fide
    return float(np.count_nonzero(b >= t) / b.size)


def candidate_thresholds(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2.0
    inner = np.empty(u.size + mids.size)
    inner[0::2] = u
    inner[1::2] = mids
    return np.concatenate(([-np.inf], inner, [np.inf]))


def rates(ss: ScoreSet, thresholds) -> tuple:
    """Vectorised (APCER, BPCER) arrays over ``thresholds``."""
    _need_morph(ss)
    _need_bona(ss)
    m = np.sort(ss.morph)
    b = np.sort(ss.bona_fide)
    t = np.asarray(thresholds, dtype=np.float64)
    a = np.searchsorted(m, t, side="left") / m.size
    bp = (b.size - np.searchsorted(b, t, side="left")) / b.size
    return a, bp


def d_eer(ss: ScoreSet, return_threshold: bool = False):
    """Mean of APCER and BPCER where |APCER - BPCER| is smallest (first = lowest threshold)."""
    t = candidate_thresholds(ss.scores)
    a, b = rates(ss, t)
    i = int(np.argmin(np.abs(a - b)))
    value = float((a[i] + b[i]) / 2.0)
    return (value, float(t[i])) if return_threshold else value


def bpcer_at_apcer(ss: ScoreSet, target: float) -> float:
    """BPCER at the largest candidate threshold whose APCER does not exceed ``target``."""
    t = candidate_thresholds(ss.scores)
    a, b = rates(ss, t)
    ok = np.flatnonzero(a <= target)  # never empty: APCER(-inf) = 0
    return float(b[ok[-1]])


def auc(ss: ScoreSet) -> float:
    """P(morph score > bona fide score), ties counted as 1/2."""
    _need_morph(ss)
    _need_bona(ss)
    ranks = rankdata(ss.scores)
    n_m = int(np.count_nonzero(ss.labels == MORPH))
    n_b = ss.labels.size - n_m
    r_m = ranks[ss.labels == MORPH].sum()
    return float((r_m - n_m * (n_m + 1) / 2.0) / (n_m * n_b))


@dataclass
class DetCurve:
    thresholds: np.ndarray
    apcer: np.ndarray
    bpcer: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "apcer", "bpcer"])
            for t, a, b in zip(self.thresholds, self.apcer, self.bpcer):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def det_curve(ss: ScoreSet) -> DetCurve:
    t = candidate_thresholds(ss.scores)
    a, b = rates(ss, t)
    return DetCurve(t, a, b)


def report(ss: ScoreSet) -> dict:
    """The metrics JSON record: rates as fractions plus 2-decimal percentages."""
    value, thr = d_eer(ss, return_threshold=True)
    rec = {
        "d_eer": value,
        "bpcer5": bpcer_at_apcer(ss, 0.05),
        "bpcer10": bpcer_at_apcer(ss, 0.10),
        "auc": auc(ss),
        "n_bonafide": int(np.count_nonzero(ss.labels == BONA_FIDE)),
        "n_morph": int(np.count_nonzero(ss.labels == MORPH)),
        "d_eer_threshold": thr if np.isfinite(thr) else None,
    }
    rec["percent"] = {k: round(100.0 * rec[k], 2) for k in ("d_eer", "bpcer5", "bpcer10", "auc")}
    return rec


def dumps_report(rec: dict) -> str:
    return json.dumps(rec, indent=2, sort_keys=True)
