"""Dataset scanning, image preprocessing, splits, batching, sampling.

Directory layouts understood by scan_dataset:

    root/<class>/<image files>                       (flat)
    root/{Training,Testing}/<class>/<image files>    (pre-split folders)

Class names come from folder names sorted lexicographically.  Preprocessing
is decode -> luma grayscale -> bilinear resize -> 5x5 Gaussian blur ->
scale to [0, 1], all in float32.

All random choices (splits, epoch shuffles, few-shot draws) run through
PCG64 generators keyed by explicit integer seeds, so every derived ordering
is reproducible from the seeds alone.
"""

import io
import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

log = logging.getLogger("leancnn.data")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
SPLIT_FOLDERS = ("Training", "Testing")
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601


# ---------------------------------------------------------------------------
# scanning


@dataclass
class DatasetManifest:
    """Flat record of every image found under a dataset root."""

    root: str
    classes: list
    paths: list                      # relative to root
    labels: np.ndarray               # int64 indices into classes
    folds: list = None               # per-record "train"/"test", or None

    @property
    def n(self):
        return len(self.paths)

    def class_counts(self):
        counts = np.bincount(self.labels, minlength=len(self.classes))
        return {c: int(counts[i]) for i, c in enumerate(self.classes)}

    def to_dict(self):
        return {
            "root": self.root,
            "classes": list(self.classes),
            "paths": list(self.paths),
            "labels": [int(v) for v in self.labels],
            "folds": list(self.folds) if self.folds is not None else None,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def from_dict(cls, d):
        return cls(root=d["root"], classes=list(d["classes"]),
                   paths=list(d["paths"]),
                   labels=np.asarray(d["labels"], dtype=np.int64),
                   folds=list(d["folds"]) if d.get("folds") is not None else None)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"unreadable dataset manifest {path}: {e}") from e


def _is_image(name):
    return name.lower().endswith(IMAGE_EXTENSIONS)


def _class_dirs(root):
    return sorted(d for d in os.listdir(root)
                  if os.path.isdir(os.path.join(root, d)))


def scan_dataset(root):
    """Walk a dataset folder and return its manifest.

    Raises DataError when the root is missing or yields no class folders
    with images.  Folders that contain no images are kept out of the class
    list with a logged warning.
    """
    if not os.path.isdir(root):
        raise DataError(f"path not found: {root}")
    top = _class_dirs(root)
    presplit = len(top) > 0 and all(d in SPLIT_FOLDERS for d in top)

    per_class = {}   # class -> list of (relpath, fold)
    if presplit:
        for fold_dir in top:
            fold = "train" if fold_dir == "Training" else "test"
            for cls in _class_dirs(os.path.join(root, fold_dir)):
                files = sorted(f for f in os.listdir(os.path.join(root, fold_dir, cls))
                               if _is_image(f))
                per_class.setdefault(cls, []).extend(
                    (os.path.join(fold_dir, cls, f), fold) for f in files)
    else:
        for cls in top:
            files = sorted(f for f in os.listdir(os.path.join(root, cls))
                           if _is_image(f))
            per_class[cls] = [(os.path.join(cls, f), None) for f in files]

    classes = []
    for cls in sorted(per_class):
        if per_class[cls]:
            classes.append(cls)
        else:
            log.warning("class folder %r under %s contains no images, skipping",
                        cls, root)
    if not classes:
        raise DataError(f"no class folders with images found under {root}")

    paths, labels, folds = [], [], []
    any_fold = False
    for i, cls in enumerate(classes):
        for rel, fold in per_class[cls]:
            paths.append(rel)
            labels.append(i)
            folds.append(fold)
            any_fold = any_fold or fold is not None
    return DatasetManifest(root=str(root), classes=classes, paths=paths,
                           labels=np.asarray(labels, dtype=np.int64),
                           folds=folds if any_fold else None)


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessConfig:
    input_size: int = 224
    blur_size: int = 5
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.input_size < 1:
            raise ConfigError(f"input_size must be >= 1, got {self.input_size}")
        if self.blur_size < 1 or self.blur_size % 2 == 0:
            raise ConfigError(f"blur_size must be odd and >= 1, got {self.blur_size}")
        if self.blur_sigma <= 0:
            raise ConfigError(f"blur_sigma must be > 0, got {self.blur_sigma}")


def gaussian_kernel1d(size, sigma):
    """Normalized 1-D Gaussian taps centered on the middle element."""
    off = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(off * off) / (2.0 * sigma * sigma))
    k /= k.sum()
    return k.astype(np.float32)


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-center bilinear resize of a 2-D float array.

    Source coordinates are (dst + 0.5) * (in/out) - 0.5 clamped to the valid
    range, so resizing to the same shape reproduces the input exactly.
    """
    in_h, in_w = img.shape
    img = img.astype(np.float32, copy=False)

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(in_h, out_h)
    x0, x1, fx = axis_coords(in_w, out_w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def _blur_axis(img, kernel, axis):
    pad = len(kernel) // 2
    padw = [(0, 0), (0, 0)]
    padw[axis] = (pad, pad)
    padded = np.pad(img, padw, mode="edge")
    out = np.zeros_like(img, dtype=np.float32)
    for i, kv in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


def gaussian_blur(img, size=5, sigma=1.0):
    """Separable Gaussian blur with edge-replicate padding."""
    k = gaussian_kernel1d(size, sigma)
    return _blur_axis(_blur_axis(img, k, 0), k, 1)


def to_grayscale(img):
    """PIL image -> float32 2-D luma array in [0, 255]."""
    if img.mode == "L":
        return np.asarray(img, dtype=np.float32)
    rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    r, g, b = LUMA_WEIGHTS
    return rgb[..., 0] * r + rgb[..., 1] * g + rgb[..., 2] * b


def preprocess_bytes(data, cfg):
    """Decode an encoded image and run the full pipeline.

    Returns a float32 (input_size, input_size) array in [0, 1].  Decode
    failures raise DataError.
    """
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            gray = to_grayscale(img)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DataError(f"cannot decode image: {e}") from e
    resized = bilinear_resize(gray, cfg.input_size, cfg.input_size)
    blurred = gaussian_blur(resized, cfg.blur_size, cfg.blur_sigma)
    return (blurred / np.float32(255.0)).astype(np.float32)


def preprocess_file(path, cfg):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DataError(f"cannot read image file {path}: {e}") from e
    try:
        return preprocess_bytes(data, cfg)
    except DataError as e:
        raise DataError(f"cannot decode image file {path}: {e}") from e


# ---------------------------------------------------------------------------
# splitting and label transforms


def split_indices(n, train_ratio, seed):
    """Random train/test index split; both halves returned sorted ascending.

    Train takes the first floor(train_ratio * n) entries of one PCG64(seed)
    permutation, so the membership is a pure function of (n, ratio, seed).
    """
    if not 0.0 < train_ratio < 1.0:
        raise ConfigError(f"train_ratio must be in (0, 1), got {train_ratio}")
    if n < 2:
        raise DataError(f"cannot split {n} records into train and test")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    k = int(np.floor(train_ratio * n))
    if k == 0 or k == n:
        raise DataError(
            f"train_ratio {train_ratio} leaves an empty side for n={n}")
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_manifest(manifest, mode="auto", train_ratio=0.8, seed=42):
    """Resolve a manifest into (train_indices, test_indices).

    mode "folders" uses the Training/Testing layout recorded at scan time,
    "ratio" draws a seeded random split, "auto" prefers folders when the
    manifest has them.
    """
    if mode not in ("auto", "folders", "ratio"):
        raise ConfigError(f"unknown split mode {mode!r}")
    if mode == "auto":
        mode = "folders" if manifest.folds is not None else "ratio"
    if mode == "folders":
        if manifest.folds is None:
            raise DataError(
                f"dataset under {manifest.root} has no Training/Testing folders; "
                "use a ratio split")
        folds = np.asarray(manifest.folds)
        train = np.flatnonzero(folds == "train")
        test = np.flatnonzero(folds == "test")
        if len(train) == 0 or len(test) == 0:
            raise DataError(f"dataset under {manifest.root} is missing a "
                            "Training or Testing side")
        return train, test
    return split_indices(manifest.n, train_ratio, seed)


def binarize_labels(labels, classes, positive_classes):
    """Map multi-class labels onto {0: negative, 1: positive}.

    positive_classes must name a non-empty proper subset of classes.
    Returns (new_labels, ["negative", "positive"]).
    """
    positives = set(positive_classes)
    if not positives:
        raise ConfigError("binarize needs at least one positive class")
    unknown = positives - set(classes)
    if unknown:
        raise ConfigError(
            f"positive classes {sorted(unknown)} not present in {list(classes)}")
    if positives == set(classes):
        raise ConfigError("every class marked positive leaves no negatives")
    pos_idx = np.asarray([i for i, c in enumerate(classes) if c in positives])
    new = np.isin(np.asarray(labels), pos_idx).astype(np.int64)
    return new, ["negative", "positive"]


# ---------------------------------------------------------------------------
# datasets


class _AuditMixin:
    """Records which indices fetch() touched, for leakage checks in tests."""

    def _init_audit(self):
        self.accessed = set()

    def reset_audit(self):
        self.accessed.clear()


class ArrayDataset(_AuditMixin):
    """In-memory images, shape (N, C, H, W) float32."""

    def __init__(self, images, labels, class_names):
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got shape {images.shape}")
        if len(images) != len(labels):
            raise DataError(f"{len(images)} images but {len(labels)} labels")
        self.images = images
        self.labels = labels
        self.class_names = list(class_names)
        self._init_audit()

    def __len__(self):
        return len(self.images)

    def fetch(self, idx):
        idx = int(idx)
        self.accessed.add(idx)
        return self.images[idx], int(self.labels[idx])


class ImageDataset(_AuditMixin):
    """Lazily decoded images from a manifest, with an in-memory cache."""

    def __init__(self, manifest, preprocess=None, labels=None, class_names=None,
                 cache=True):
        self.manifest = manifest
        self.preprocess = preprocess or PreprocessConfig()
        self.labels = np.asarray(labels if labels is not None else manifest.labels,
                                 dtype=np.int64)
        self.class_names = list(class_names if class_names is not None
                                else manifest.classes)
        if len(self.labels) != manifest.n:
            raise DataError(f"{manifest.n} records but {len(self.labels)} labels")
        self._cache = {} if cache else None
        self._init_audit()

    def __len__(self):
        return self.manifest.n

    def fetch(self, idx):
        idx = int(idx)
        self.accessed.add(idx)
        if self._cache is not None and idx in self._cache:
            img = self._cache[idx]
        else:
            path = os.path.join(self.manifest.root, self.manifest.paths[idx])
            img = preprocess_file(path, self.preprocess)[None, :, :]
            if self._cache is not None:
                self._cache[idx] = img
        return img, int(self.labels[idx])


class Subset(_AuditMixin):
    """A view over selected indices of another dataset."""

    def __init__(self, base, indices):
        self.base = base
        self.indices = np.asarray(indices, dtype=np.int64)
        if len(self.indices) and (self.indices.min() < 0
                                  or self.indices.max() >= len(base)):
            raise DataError(
                f"subset indices out of range for dataset of size {len(base)}")
        self.labels = np.asarray(base.labels)[self.indices] \
            if len(self.indices) else np.empty((0,), dtype=np.int64)
        self.class_names = list(base.class_names)
        self._init_audit()

    def __len__(self):
        return len(self.indices)

    def fetch(self, idx):
        idx = int(idx)
        self.accessed.add(idx)
        return self.base.fetch(int(self.indices[idx]))


# ---------------------------------------------------------------------------
# batching and sampling


@dataclass
class Batch:
    images: np.ndarray    # (B, C, H, W) float32
    labels: np.ndarray    # (B,) int64
    indices: np.ndarray   # (B,) positions inside the source dataset


def batch_indices(n, batch_size, seed, epoch, shuffle=True):
    """Per-epoch batch index lists; shuffle order depends on (seed, epoch)."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((seed, epoch))))
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def iter_batches(dataset, batch_size, seed=0, epoch=0, shuffle=True):
    """Yield Batch objects covering the dataset exactly once."""
    for idx in batch_indices(len(dataset), batch_size, seed, epoch, shuffle):
        images, labels = [], []
        for i in idx:
            img, lab = dataset.fetch(i)
            images.append(img)
            labels.append(lab)
        yield Batch(images=np.stack(images),
                    labels=np.asarray(labels, dtype=np.int64),
                    indices=np.asarray(idx, dtype=np.int64))


def few_shot_subset(dataset, k, seed):
    """Balanced subset with exactly k examples of every class.

    Draws without replacement using PCG64(seed); a class with fewer than k
    examples raises DataError naming it.  k=0 yields an empty subset.
    """
    if k < 0:
        raise ConfigError(f"shots per class must be >= 0, got {k}")
    labels = np.asarray(dataset.labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = []
    for ci, cname in enumerate(dataset.class_names):
        pool = np.flatnonzero(labels == ci)
        if len(pool) < k:
            raise DataError(
                f"class {cname!r} has {len(pool)} examples, cannot draw {k}")
        if k > 0:
            chosen.append(np.sort(rng.choice(pool, size=k, replace=False)))
    indices = np.concatenate(chosen) if chosen else np.empty((0,), dtype=np.int64)
    return Subset(dataset, indices)
