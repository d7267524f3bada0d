"""Dataset ingestion, preprocessing, labeling, splitting and batching.

The on-disk layout is one subdirectory per class, named by its zero-based
class id, holding PNG/JPEG/BMP images. A manifest maps each class id to a
display name and one of four categories (vowel, consonant, numeric,
compound); without a manifest file the default 84-class partition applies:
ids 0-10 vowel, 11-49 consonant, 50-59 numeric, 60-83 compound.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ImageError, ParameterError
from .tensor import Tensor

CATEGORIES = ("vowel", "consonant", "numeric", "compound")

_DEFAULT_SPANS = {"vowel": range(0, 11), "consonant": range(11, 50),
                  "numeric": range(50, 60), "compound": range(60, 84)}

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class ClassInfo:
    name: str
    category: str


@dataclass(frozen=True)
class Entry:
    path: str
    class_id: int
    category: str


def default_manifest(class_count: int = 84) -> dict[int, ClassInfo]:
    if class_count != 84:
        raise DataError("the default manifest covers exactly 84 classes; supply one otherwise")
    manifest = {}
    for category, span in _DEFAULT_SPANS.items():
        for cid in span:
            manifest[cid] = ClassInfo(name=str(cid), category=category)
    return dict(sorted(manifest.items()))


def load_manifest(path) -> dict[int, ClassInfo]:
    """Read a JSON manifest: {"<class id>": {"name": ..., "category": ...}, ...}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    manifest = {}
    for key, info in raw.items():
        cid = int(key)
        category = info["category"]
        if category not in CATEGORIES:
            raise DataError(f"manifest class {cid}: unknown category {category!r}")
        manifest[cid] = ClassInfo(name=str(info.get("name", key)), category=category)
    _check_manifest(manifest)
    return dict(sorted(manifest.items()))


def manifest_to_dict(manifest: dict[int, ClassInfo]) -> dict:
    return {str(cid): {"name": info.name, "category": info.category}
            for cid, info in sorted(manifest.items())}


def manifest_from_dict(raw: dict) -> dict[int, ClassInfo]:
    return {int(k): ClassInfo(name=v["name"], category=v["category"]) for k, v in raw.items()}


def _check_manifest(manifest: dict[int, ClassInfo]):
    if not manifest:
        raise DataError("manifest is empty")
    if sorted(manifest) != list(range(len(manifest))):
        raise DataError("manifest class ids must be dense 0..C-1")


@dataclass
class DatasetIndex:
    """Catalog of (path, class id, category) entries plus the class manifest."""

    entries: list[Entry]
    manifest: dict[int, ClassInfo]
    unreadable: list[str] = field(default_factory=list)
    # For filtered indexes: source_ids[new id] is the class id in the parent index.
    source_ids: tuple[int, ...] = ()

    def __post_init__(self):
        _check_manifest(self.manifest)
        if not self.entries:
            raise DataError("dataset index has no entries")
        c = len(self.manifest)
        for e in self.entries:
            if not 0 <= e.class_id < c:
                raise DataError(f"entry class id {e.class_id} outside 0..{c - 1}")
            if self.manifest[e.class_id].category != e.category:
                raise DataError(f"entry category {e.category!r} disagrees with manifest for class {e.class_id}")
        if not self.source_ids:
            self.source_ids = tuple(range(c))

    @property
    def class_count(self) -> int:
        return len(self.manifest)

    def __len__(self):
        return len(self.entries)

    def class_sizes(self) -> list[int]:
        sizes = [0] * self.class_count
        for e in self.entries:
            sizes[e.class_id] += 1
        return sizes

    def category_sizes(self) -> dict[str, int]:
        sizes = {cat: 0 for cat in CATEGORIES}
        for e in self.entries:
            sizes[e.category] += 1
        return sizes


def _sorted_entries(entries: list[Entry]) -> list[Entry]:
    return sorted(entries, key=lambda e: (e.class_id, os.path.basename(e.path), e.path))


def scan_dataset(root, manifest: dict[int, ClassInfo] | None = None,
                 verify_images: bool = False) -> DatasetIndex:
    """Catalog a class-per-directory tree.

    With ``verify_images`` every file is opened once; undecodable files are
    reported on the index rather than silently dropped.
    """
    root = Path(root)
    if manifest is None:
        manifest = default_manifest()
    _check_manifest(manifest)
    entries: list[Entry] = []
    unreadable: list[str] = []
    for cid in range(len(manifest)):
        class_dir = root / str(cid)
        if not class_dir.is_dir():
            raise DataError(f"class directory {cid} missing under {root}")
        files = sorted(p for p in class_dir.iterdir()
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise DataError(f"class directory {cid} contains no images")
        for p in files:
            if verify_images and not _decodable(p):
                unreadable.append(str(p))
                continue
            entries.append(Entry(str(p), cid, manifest[cid].category))
    return DatasetIndex(_sorted_entries(entries), manifest, unreadable=unreadable)


def _decodable(path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError):
        return False


# ---- image loading ---------------------------------------------------------


def bilinear_resize(arr: np.ndarray, size: int) -> np.ndarray:
    """Resize a (H, W) float array to (size, size) with half-pixel-center bilinear
    sampling. Same-size input is returned unresampled."""
    h, w = arr.shape
    if h == size and w == size:
        return arr.copy()
    ys = np.clip((np.arange(size) + 0.5) * (h / size) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(size) + 0.5) * (w / size) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(arr.dtype)[:, None]
    fx = (xs - x0).astype(arr.dtype)[None, :]
    top = arr[y0[:, None], x0[None, :]] * (1 - fx) + arr[y0[:, None], x1[None, :]] * fx
    bot = arr[y1[:, None], x0[None, :]] * (1 - fx) + arr[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def load_image(path, size: int, invert: bool = True) -> Tensor:
    """Decode, luma-convert, resize to size x size, scale to [0, 1].

    ``invert`` flips the polarity so dark strokes on a light scan become
    high-valued; it defaults on because the source material is pen on paper.
    """
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            arr = np.asarray(gray, dtype=np.float32) / np.float32(255.0)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    arr = bilinear_resize(arr, size)
    if invert:
        arr = 1.0 - arr
    arr = np.clip(arr, 0.0, 1.0, dtype=np.float32)
    return Tensor._wrap(arr.reshape(1, size, size, 1))


def one_hot(class_id: int, class_count: int) -> Tensor:
    if not 0 <= class_id < class_count:
        raise DataError(f"label {class_id} outside 0..{class_count - 1}")
    row = np.zeros((1, 1, 1, class_count), dtype=np.float32)
    row[0, 0, 0, class_id] = 1.0
    return Tensor._wrap(row)


# ---- splitting and filtering -------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train fraction must lie strictly between 0 and 1, got {self.train_fraction}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(index: DatasetIndex, spec: SplitSpec) -> tuple[DatasetIndex, DatasetIndex]:
    """Deterministic train/test partition.

    Stratified mode gives each class floor(fraction * n) training entries, then
    tops classes up one entry each in ascending class-id order until the train
    side holds round(fraction * total) entries overall.
    """
    sizes = index.class_sizes()
    for cid, n in enumerate(sizes):
        if n < 2:
            raise DataError(f"class {cid} has {n} entries; splitting needs at least 2")
    rng = np.random.default_rng(spec.seed)
    total_train = _round_half_up(spec.train_fraction * len(index))
    entries = _sorted_entries(index.entries)
    train: list[Entry] = []
    test: list[Entry] = []
    if spec.stratified:
        targets = [spec.train_fraction * n for n in sizes]
        per_class_train = [int(np.floor(t)) for t in targets]
        leftover = total_train - sum(per_class_train)
        # Rounding slots go to fractional-target classes first (ascending id),
        # keeping every class within one sample of its exact target.
        fractional = [cid for cid in range(index.class_count)
                      if targets[cid] - per_class_train[cid] > 1e-9
                      and per_class_train[cid] < sizes[cid]]
        whole = [cid for cid in range(index.class_count)
                 if cid not in set(fractional) and per_class_train[cid] < sizes[cid]]
        for cid in fractional + whole:
            if leftover <= 0:
                break
            per_class_train[cid] += 1
            leftover -= 1
        offset = 0
        for cid, n in enumerate(sizes):
            group = entries[offset : offset + n]
            offset += n
            order = rng.permutation(n)
            take = per_class_train[cid]
            train.extend(group[i] for i in order[:take])
            test.extend(group[i] for i in order[take:])
    else:
        order = rng.permutation(len(entries))
        train.extend(entries[i] for i in order[:total_train])
        test.extend(entries[i] for i in order[total_train:])
    make = lambda rows: DatasetIndex(_sorted_entries(rows), index.manifest,
                                     source_ids=index.source_ids)
    return make(train), make(test)


def filter_category(index: DatasetIndex, category: str) -> DatasetIndex:
    """Entries of one category only, class ids re-densified to 0..C'-1."""
    if category not in CATEGORIES:
        raise DataError(f"unknown category {category!r}; pick one of {CATEGORIES}")
    old_ids = sorted(cid for cid, info in index.manifest.items() if info.category == category)
    kept = set(old_ids)
    remap = {old: new for new, old in enumerate(old_ids)}
    entries = [Entry(e.path, remap[e.class_id], e.category)
               for e in index.entries if e.class_id in kept]
    if not entries:
        raise DataError(f"no entries of category {category!r}")
    manifest = {remap[old]: index.manifest[old] for old in old_ids}
    source = tuple(index.source_ids[old] for old in old_ids)
    return DatasetIndex(_sorted_entries(entries), manifest, source_ids=source)


def subsample(index: DatasetIndex, per_class: int, seed: int = 0) -> DatasetIndex:
    """Seeded per-class cap: keep at most per_class entries of every class."""
    if per_class < 1:
        raise DataError(f"per-class cap must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    entries = _sorted_entries(index.entries)
    sizes = index.class_sizes()
    kept: list[Entry] = []
    offset = 0
    for n in sizes:
        group = entries[offset : offset + n]
        offset += n
        perm = rng.permutation(n)
        if n <= per_class:
            kept.extend(group)
        else:
            kept.extend(group[i] for i in sorted(perm[:per_class]))
    return DatasetIndex(_sorted_entries(kept), index.manifest, source_ids=index.source_ids)


# ---- materialized examples and batching --------------------------------------


@dataclass
class ExampleSet:
    """Decoded images and one-hot labels for one index, in index order."""

    images: np.ndarray  # (N, S, S, 1) float32 in [0, 1]
    labels: np.ndarray  # (N, C) float32 one-hot
    class_ids: np.ndarray
    paths: tuple[str, ...]

    def __len__(self):
        return self.images.shape[0]

    @property
    def class_count(self) -> int:
        return self.labels.shape[1]


def load_examples(index: DatasetIndex, image_size: int, invert: bool = True) -> ExampleSet:
    n = len(index)
    c = index.class_count
    images = np.empty((n, image_size, image_size, 1), dtype=np.float32)
    labels = np.zeros((n, c), dtype=np.float32)
    ids = np.empty(n, dtype=np.int64)
    for i, e in enumerate(index.entries):
        images[i] = load_image(e.path, image_size, invert=invert).data[0]
        labels[i, e.class_id] = 1.0
        ids[i] = e.class_id
    return ExampleSet(images, labels, ids, tuple(e.path for e in index.entries))


def batches(examples: ExampleSet, batch_size: int, shuffle_seed: int = 0,
            epoch: int = 0, shuffle: bool = True):
    """Yield (images, labels) tensor pairs covering the set exactly once.

    The order is the permutation keyed by (shuffle_seed, epoch); the final
    short batch is kept.
    """
    if batch_size < 1:
        raise ParameterError(f"batch size must be >= 1, got {batch_size}")
    n = len(examples)
    if shuffle:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
    else:
        order = np.arange(n)
    c = examples.class_count
    for start in range(0, n, batch_size):
        pick = order[start : start + batch_size]
        imgs = np.ascontiguousarray(examples.images[pick])
        labs = np.ascontiguousarray(examples.labels[pick]).reshape(len(pick), 1, 1, c)
        yield Tensor._wrap(imgs), Tensor._wrap(labs)


# ---- listing files -----------------------------------------------------------


def write_listing(index: DatasetIndex, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in index.entries:
            fh.write(f"{e.path},{e.class_id}\n")


def read_listing(path, manifest: dict[int, ClassInfo]) -> DatasetIndex:
    _check_manifest(manifest)
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                file_path, cid_text = line.rsplit(",", 1)
                cid = int(cid_text)
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected 'path,class-id'") from None
            if cid not in manifest:
                raise DataError(f"{path}:{lineno}: class id {cid} not in manifest")
            entries.append(Entry(file_path, cid, manifest[cid].category))
    if not entries:
        raise DataError(f"listing {path} is empty")
    return DatasetIndex(_sorted_entries(entries), manifest)
