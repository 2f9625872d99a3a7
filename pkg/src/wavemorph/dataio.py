"""Manifests, image loading, and the synthetic bona fide / morph generator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ArtifactError,
    ConfigError,
    CorruptImageError,
    ImageNotFoundError,
    InputError,
    UnsupportedFormatError,
)

BONA_FIDE = 0
MORPH = 1
SPLITS = ("train", "val", "test")
LUMA = np.array([0.299, 0.587, 0.114])
_FORMATS = {"PNG", "PPM"}  # Pillow reports binary PGM as PPM


@dataclass(frozen=True)
class Entry:
    path: str
    label: int
    split: str

    def to_json(self) -> str:
        return json.dumps({"path": self.path, "label": self.label, "split": self.split})


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    name: str = "dataset"

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.label not in (BONA_FIDE, MORPH):
                raise InputError(f"bad label {e.label!r} for {e.path}")
            if e.split not in SPLITS:
                raise InputError(f"bad split {e.split!r} for {e.path}")
            if e.path in seen:
                raise InputError(f"duplicate path in manifest {self.name!r}: {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict:
        out = {s: {BONA_FIDE: 0, MORPH: 0} for s in SPLITS}
        for e in self.entries:
            out[e.split][e.label] += 1
        return out

    def check_trainable(self, splits=SPLITS) -> None:
        """Every requested split must hold at least one entry of each label."""
        counts = self.counts()
        for s in splits:
            if counts[s][BONA_FIDE] == 0 or counts[s][MORPH] == 0:
                raise InputError(f"split {s!r} of {self.name!r} lacks one of the two labels: {counts[s]}")

    def save(self, path) -> None:
        Path(path).write_text("".join(e.to_json() + "\n" for e in self.entries))

    @classmethod
    def load(cls, path, name=None) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"manifest not found: {path}")
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entries.append(Entry(str(rec["path"]), int(rec["label"]), str(rec["split"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ArtifactError(f"{path}:{lineno}: malformed manifest line ({exc})") from None
        return cls(entries, name or path.stem)


def merge_manifests(manifests, name="universal") -> DatasetManifest:
    """Concatenate manifests in order into one (the "universal" dataset)."""
    if not manifests:
        raise InputError("merge_manifests needs at least one manifest")
    entries = [e for m in manifests for e in m.entries]
    seen = {}
    for m in manifests:
        for e in m.entries:
            if e.path in seen and seen[e.path] != m.name:
                raise InputError(f"path {e.path} appears in both {seen[e.path]!r} and {m.name!r}")
            seen[e.path] = m.name
    return DatasetManifest(entries, name)


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D array.

    Output corners coincide with input corners; sample (i, j) sits at source
    coordinate (i * (h-1)/(out_h-1), j * (w-1)/(out_w-1)).
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis_coords(h, out_h)
    c0, c1, fc = axis_coords(w, out_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def load_image(path, size: int | None = 160) -> np.ndarray:
    """Decode a PNG or binary PGM into an ``size x size`` grayscale array in [0, 1].

    Colour input is reduced to luma (0.299 R + 0.587 G + 0.114 B) before
    resizing. ``size=None`` keeps the native resolution.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in _FORMATS:
                raise UnsupportedFormatError(f"{path}: format {im.format} not supported (PNG or PGM only)")
            im.load()
            mode = im.mode
            if mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) @ LUMA
            elif mode in ("L", "P", "LA"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                raise UnsupportedFormatError(f"{path}: pixel mode {mode} is not 8-bit")
    except UnidentifiedImageError:
        raise UnsupportedFormatError(f"{path}: not a recognised image file") from None
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptImageError(f"{path}: cannot decode ({exc})") from None
    arr = arr / 255.0
    if size is not None:
        arr = resize_bilinear(arr, size, size)
    return np.clip(arr, 0.0, 1.0)


def save_pgm(img, path) -> None:
    """Write a [0, 1] array as 8-bit binary PGM (P5)."""
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path, format="PPM")


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    n_pairs: int = 200
    blob_count: int = 6
    artifact_amplitude: float = 0.08
    artifact_period: int = 2
    alpha: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if self.n_pairs < 2:
            raise ConfigError(f"n_pairs must be >= 2 (got {self.n_pairs})")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1] (got {self.alpha})")
        if self.artifact_period < 2:
            raise ConfigError(f"artifact_period must be >= 2 (got {self.artifact_period})")
        if self.artifact_amplitude < 0:
            raise ConfigError("artifact_amplitude must be >= 0")
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")
        if self.blob_count < 1:
            raise ConfigError("blob_count must be >= 1")


def checkerboard(size: int, period: int) -> np.ndarray:
    """Sign-alternating +-1 pattern repeating every ``period`` pixels on both axes."""
    half = max(period // 2, 1)
    idx = np.arange(size) // half
    return np.where((idx[:, None] + idx[None, :]) % 2 == 0, 1.0, -1.0)


def gaussian_blobs(rng, size: int, count: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(count):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(0.08, 0.25) * size
        amp = rng.uniform(0.3, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return 0.1 + 0.8 * img


def split_for_index(i: int, n: int) -> str:
    n_train = int(round(0.70 * n))
    n_val = int(round(0.15 * n))
    if i < n_train:
        return "train"
    if i < n_train + n_val:
        return "val"
    return "test"


@dataclass
class SynthResult:
    manifest: DatasetManifest
    clamp_fraction: float
    images: dict  # file name -> float array actually written (pre-quantisation)


def synth_images(cfg: SynthConfig):
    """Generate (bona_fide, morph, split) arrays in memory, no files."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_pairs
    bona = np.stack([gaussian_blobs(rng, cfg.image_size, cfg.blob_count) for _ in range(n)])
    splits = [split_for_index(i, n) for i in range(n)]
    art = cfg.artifact_amplitude * checkerboard(cfg.image_size, cfg.artifact_period)
    morphs = np.empty_like(bona)
    clamped = 0
    for i in range(n):
        # second parent: next pair index inside the same split (wraps), so no cross-split leakage
        same = [j for j in range(n) if splits[j] == splits[i]]
        pos = same.index(i)
        j = same[(pos + 1) % len(same)] if len(same) > 1 else (i + 1) % n
        raw = cfg.alpha * bona[i] + (1 - cfg.alpha) * bona[j] + art
        clamped += int(np.count_nonzero((raw < 0) | (raw > 1)))
        morphs[i] = np.clip(raw, 0.0, 1.0)
    frac = clamped / morphs.size
    return bona, morphs, splits, frac


def synth_dataset(cfg: SynthConfig, out_dir) -> SynthResult:
    """Write ``n_pairs`` bona fide and ``n_pairs`` morph PGM files plus manifest.jsonl."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    bona, morphs, splits, frac = synth_images(cfg)
    entries, images = [], {}
    for i in range(cfg.n_pairs):
        for label, arr, tag in ((BONA_FIDE, bona[i], "bona"), (MORPH, morphs[i], "morph")):
            name = f"{tag}_{i:05d}.pgm"
            save_pgm(arr, img_dir / name)
            images[name] = arr
            entries.append(Entry(f"images/{name}", label, splits[i]))
    manifest = DatasetManifest(entries, "synthetic")
    manifest.save(out_dir / "manifest.jsonl")
    return SynthResult(manifest, frac, images)


def resolve(manifest_path, entry: Entry) -> Path:
    """Manifest paths are relative to the manifest's directory unless absolute."""
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# --------------------------------------------------------------------------
# decomposed dataset held in memory


@dataclass
class StackDataset:
    x: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int
    splits: np.ndarray  # (N,) str
    paths: list = None  # SubbandPath per channel
    names: list = None

    def subset(self, split: str) -> "StackDataset":
        m = self.splits == split
        names = [n for n, k in zip(self.names, m) if k] if self.names else None
        return StackDataset(self.x[m], self.labels[m], self.splits[m], self.paths, names)

    def channels(self, indices) -> "StackDataset":
        idx = list(indices)
        if not idx or max(idx) >= self.x.shape[1] or idx != sorted(set(idx)):
            raise ConfigError(f"channel selection {idx} inconsistent with {self.x.shape[1]} channels")
        paths = [self.paths[i] for i in idx] if self.paths else None
        return StackDataset(np.ascontiguousarray(self.x[:, idx]), self.labels, self.splits, paths, self.names)

    def __len__(self):
        return len(self.labels)


def load_decomposed(directory) -> StackDataset:
    """Read the ``index.jsonl`` + SBS1 files written by ``wavemorph decompose``."""
    from .wavelet import load_stack

    directory = Path(directory)
    index = directory / "index.jsonl"
    if not index.exists():
        raise ArtifactError(f"{directory} has no index.jsonl (run `wavemorph decompose` first)")
    recs = [json.loads(line) for line in index.read_text().splitlines() if line.strip()]
    if not recs:
        raise ArtifactError(f"{index} is empty")
    stacks = [load_stack(directory / r["path"]) for r in recs]
    shapes = {s.data.shape for s in stacks}
    if len(shapes) != 1:
        raise ArtifactError(f"stacks in {directory} differ in shape: {sorted(shapes)}")
    x = np.stack([s.data for s in stacks]).astype(np.float32)
    return StackDataset(
        x,
        np.array([int(r["label"]) for r in recs]),
        np.array([str(r["split"]) for r in recs]),
        list(stacks[0].paths),
        [str(r.get("source", r["path"])) for r in recs],
    )
