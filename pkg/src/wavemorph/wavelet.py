"""Undecimated (a trous) uniform wavelet packet decomposition.

An image is split once; the level-1 LL band is dropped and each of LH, HL
and HH is split at levels 2 and 3 keeping all four children, which yields
3 * 4 * 4 = 48 sub-bands that all keep the source resolution.

Filtering is circular convolution (periodic boundary). At level ``l`` the
analysis filters are dilated by ``2**(l-1)`` (zeros between taps). Band
names give (row filter, column filter): the row filter runs along each row
(axis -1) and the column filter along each column (axis -2).
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._kernels import backend as _kernels
from .errors import ArtifactError, ConfigError, InputError

BANDS = ("LL", "LH", "HL", "HH")
FIRST_LEVEL_BANDS = ("LH", "HL", "HH")
N_LEVELS = 3
MIN_SIZE = 8

_SQRT2 = np.sqrt(2.0)
# Daubechies 4-tap (db2) low-pass, in analysis (pywt dec_lo reversed) order.
_DB2_LO = np.array(
    [
        (1 + np.sqrt(3.0)) / (4 * _SQRT2),
        (3 + np.sqrt(3.0)) / (4 * _SQRT2),
        (3 - np.sqrt(3.0)) / (4 * _SQRT2),
        (1 - np.sqrt(3.0)) / (4 * _SQRT2),
    ]
)


class WaveletFamily(str, Enum):
    HAAR = "haar"
    DB2 = "db2"


@dataclass(frozen=True)
class WaveletSpec:
    family: WaveletFamily
    lo: np.ndarray
    hi: np.ndarray
    boundary: str = "periodic"

    def __post_init__(self):
        if self.lo.ndim != 1 or self.lo.shape != self.hi.shape or self.lo.size < 2:
            raise ConfigError("lo and hi must be 1-D with equal length >= 2")


def _qmf(lo):
    """hi[k] = (-1)**k * lo[L-1-k]."""
    L = lo.size
    return np.array([(-1) ** k * lo[L - 1 - k] for k in range(L)])


def build_filters(family="haar") -> WaveletSpec:
    """Analysis filter pair for a supported wavelet family ("haar" or "db2")."""
    try:
        fam = WaveletFamily(str(getattr(family, "value", family)).lower())
    except ValueError:
        raise ConfigError(f"unsupported wavelet family {family!r}; choose from "
                          f"{[f.value for f in WaveletFamily]}") from None
    if fam is WaveletFamily.HAAR:
        lo = np.array([1.0, 1.0]) / _SQRT2
    else:
        lo = _DB2_LO.copy()
    return WaveletSpec(family=fam, lo=lo, hi=_qmf(lo))


@dataclass(frozen=True)
class SubbandPath:
    steps: tuple

    def __post_init__(self):
        if len(self.steps) != N_LEVELS or any(s not in BANDS for s in self.steps):
            raise InputError(f"invalid sub-band path {self.steps!r}")
        if self.steps[0] == "LL":
            raise InputError("level-1 LL subtree is not part of the decomposition")

    def __str__(self):
        return ".".join(self.steps)

    @classmethod
    def parse(cls, text: str) -> "SubbandPath":
        return cls(tuple(text.strip().split(".")))

    @property
    def finest_highpass(self) -> bool:
        """True when the finest-level split is high-pass along both axes (HH)."""
        return self.steps[0] == "HH"


def all_paths() -> list[SubbandPath]:
    """The 48 admissible paths in channel order (lexicographic by level)."""
    return [SubbandPath(p) for p in itertools.product(FIRST_LEVEL_BANDS, BANDS, BANDS)]


PATHS = tuple(all_paths())


@dataclass
class SubbandStack:
    data: np.ndarray  # (C, H, W)
    paths: list = field(default_factory=lambda: list(PATHS))
    source_size: tuple = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InputError("stack data must be C x H x W")
        if len(self.paths) != self.data.shape[0]:
            raise InputError("one path per channel required")
        if self.source_size is None:
            self.source_size = tuple(self.data.shape[1:])

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def select(self, indices) -> "SubbandStack":
        idx = list(indices)
        return SubbandStack(self.data[idx], [self.paths[i] for i in idx], self.source_size)


def analysis_step(plane, spec: WaveletSpec, level: int):
    """One undecimated separable split of ``plane`` (shape (..., H, W)).

    Returns ``(LL, LH, HL, HH)``, each the shape of the input.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.size == 0 or plane.ndim < 2:
        raise InputError("analysis_step needs a non-empty 2-D plane")
    if level < 1:
        raise InputError("level must be >= 1")
    d = 2 ** (level - 1)
    rows_lo = _kernels.circular_filter(plane, spec.lo, d, -1)
    rows_hi = _kernels.circular_filter(plane, spec.hi, d, -1)
    ll = _kernels.circular_filter(rows_lo, spec.lo, d, -2)
    lh = _kernels.circular_filter(rows_lo, spec.hi, d, -2)
    hl = _kernels.circular_filter(rows_hi, spec.lo, d, -2)
    hh = _kernels.circular_filter(rows_hi, spec.hi, d, -2)
    return ll, lh, hl, hh


def decompose_array(images, spec: WaveletSpec) -> np.ndarray:
    """Decompose ``(..., H, W)`` images to ``(..., 48, H, W)`` float64 coefficients."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 2 or min(images.shape[-2:]) < MIN_SIZE:
        raise InputError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {images.shape[-2:]}")
    lead = images.shape[:-2]
    H, W = images.shape[-2:]
    # Level 1 keeps LH, HL, HH; axis -3 enumerates the tree nodes in path order.
    nodes = np.stack(analysis_step(images, spec, 1)[1:], axis=-3)
    for level in range(2, N_LEVELS + 1):
        children = analysis_step(nodes, spec, level)
        nodes = np.stack(children, axis=-3)  # (..., K, 4, H, W)
        nodes = nodes.reshape(lead + (-1, H, W))
    return nodes


def decompose(image, spec: WaveletSpec | None = None) -> SubbandStack:
    """48-channel sub-band stack of a single H x W image."""
    spec = spec or build_filters("haar")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InputError("decompose expects a single H x W plane")
    return SubbandStack(decompose_array(image, spec), list(PATHS), image.shape)


_SBS_MAGIC = b"SBS1"


def save_stack(stack: SubbandStack, path) -> None:
    """Write the SBS1 format: header, float32 LE coefficients, newline-separated paths."""
    C, H, W = stack.data.shape
    with open(path, "wb") as fh:
        fh.write(_SBS_MAGIC)
        fh.write(struct.pack("<III", C, H, W))
        fh.write(np.ascontiguousarray(stack.data, dtype="<f4").tobytes())
        fh.write("\n".join(str(p) for p in stack.paths).encode("ascii"))


def load_stack(path) -> SubbandStack:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"stack file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != _SBS_MAGIC or len(raw) < 16:
        raise ArtifactError(f"{path} is not an SBS1 stack file")
    C, H, W = struct.unpack("<III", raw[4:16])
    n = C * H * W * 4
    body = raw[16:16 + n]
    if len(body) != n:
        raise ArtifactError(f"{path}: truncated coefficient block")
    data = np.frombuffer(body, dtype="<f4").reshape(C, H, W).astype(np.float32)
    names = raw[16 + n:].decode("ascii").split("\n")
    if len(names) != C:
        raise ArtifactError(f"{path}: expected {C} path names, found {len(names)}")
    return SubbandStack(data, [SubbandPath.parse(s) for s in names], (H, W))
