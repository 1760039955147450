"""Datasets, the canonical PXCLDS01 file format and the domain-shift transforms."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .replay import Sample

IMAGE_SHAPE = (28, 28)
PIXELS = 28 * 28
DATASET_MAGIC = b"PXCLDS01"
SPLIT_TAGS = ("train", "val", "test")

DOMAIN_NAMES = ("Base", "LowDose", "Portable", "Anatomical", "Institutional")


class CanonicalFormatError(ValueError):
    """Base class for PXCLDS01 parse failures."""


class BadMagicError(CanonicalFormatError):
    pass


class TruncatedFileError(CanonicalFormatError):
    pass


class CountMismatchError(CanonicalFormatError):
    pass


class BadLabelError(CanonicalFormatError):
    pass


@dataclass
class DatasetSplit:
    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8 in {0, 1}
    split_tag: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 3 or self.images.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"images must be (n, 28, 28), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if np.any(self.labels > 1):
            raise ValueError("labels must be 0 or 1")
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "DatasetSplit":
        return DatasetSplit(self.images[index], self.labels[index], self.split_tag)


# ---------------------------------------------------------------------------
# canonical file
# ---------------------------------------------------------------------------


def canonical_size(counts: Sequence[int]) -> int:
    """Byte size of a PXCLDS01 file holding ``counts`` train/val/test samples."""
    return len(DATASET_MAGIC) + sum(4 + n * (PIXELS + 1) for n in counts)


def write_canonical(splits: Sequence[DatasetSplit], path) -> None:
    """Write train/val/test splits as PXCLDS01.

    Layout: 8-byte magic, then per split a little-endian u32 count followed by
    ``count`` records of 784 row-major uint8 pixels and one label byte.
    """
    if len(splits) != 3:
        raise ValueError("expected exactly three splits (train, val, test)")
    chunks = [DATASET_MAGIC]
    for split in splits:
        if len(split) == 0:
            raise ValueError(f"{split.split_tag} split is empty")
        records = np.empty((len(split), PIXELS + 1), dtype=np.uint8)
        records[:, :PIXELS] = split.images.reshape(len(split), PIXELS)
        records[:, PIXELS] = split.labels
        chunks.append(struct.pack("<I", len(split)))
        chunks.append(records.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def parse_canonical(data: bytes) -> Tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    if data[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise BadMagicError("bad magic: not a PXCLDS01 dataset")
    pos = len(DATASET_MAGIC)
    splits = []
    for tag in SPLIT_TAGS:
        if pos + 4 > len(data):
            raise TruncatedFileError(f"truncated before the {tag} sample count")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        size = n * (PIXELS + 1)
        if pos + size > len(data):
            raise TruncatedFileError(
                f"truncated {tag} section: {n} samples need {size} bytes, {len(data) - pos} remain"
            )
        records = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos).reshape(n, PIXELS + 1)
        pos += size
        labels = records[:, PIXELS].copy()
        if np.any(labels > 1):
            raise BadLabelError(f"{tag} section holds labels outside {{0, 1}}")
        images = records[:, :PIXELS].reshape(n, *IMAGE_SHAPE).copy()
        splits.append(DatasetSplit(images, labels, tag))
    if pos != len(data):
        raise CountMismatchError(
            f"sample counts cover {pos} bytes but the file has {len(data)}"
        )
    return tuple(splits)


def load_canonical(path) -> Tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    return parse_canonical(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Smooth noise backgrounds; class 1 adds a bright Gaussian blob."""

    n_per_split: Tuple[int, int, int] = (3000, 500, 1000)
    class1_fraction: float = 0.5
    blob_intensity: float = 0.5
    noise_std: float = 0.15
    seed: int = 0
    background_level: float = 0.4
    background_smoothness: float = 4.0
    blob_sigma: float = 2.5

    def __post_init__(self):
        if len(self.n_per_split) != 3 or any(int(n) <= 0 for n in self.n_per_split):
            raise ValueError("n_per_split needs three positive counts")
        if not 0 < self.class1_fraction < 1:
            raise ValueError("class1_fraction must lie in (0, 1)")


def _synthetic_split(config: SyntheticConfig, n: int, tag_index: int, tag: str) -> DatasetSplit:
    gen = rngmod.substream(config.seed, rngmod.SYNTHETIC, tag_index)
    n1 = int(round(n * config.class1_fraction))
    labels = np.zeros(n, dtype=np.uint8)
    labels[:n1] = 1
    gen.shuffle(labels)

    white = gen.standard_normal((n, *IMAGE_SHAPE))
    smooth = ndimage.gaussian_filter(white, sigma=(0, config.background_smoothness,
                                                   config.background_smoothness), mode="wrap")
    smooth -= smooth.mean(axis=(1, 2), keepdims=True)
    smooth /= smooth.std(axis=(1, 2), keepdims=True) + 1e-12
    images = config.background_level + config.noise_std * smooth

    rr, cc = np.mgrid[0:28, 0:28]
    centers = gen.uniform(7.0, 21.0, size=(n, 2))
    for i in np.flatnonzero(labels):
        d2 = (rr - centers[i, 0]) ** 2 + (cc - centers[i, 1]) ** 2
        images[i] += config.blob_intensity * np.exp(-d2 / (2 * config.blob_sigma**2))

    pixels = np.clip(np.rint(np.clip(images, 0.0, 1.0) * 255), 0, 255).astype(np.uint8)
    return DatasetSplit(pixels, labels, tag)


def generate_synthetic(config: SyntheticConfig) -> Tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    return tuple(
        _synthetic_split(config, int(n), i, tag)
        for i, (n, tag) in enumerate(zip(config.n_per_split, SPLIT_TAGS))
    )


# ---------------------------------------------------------------------------
# domain transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainParams:
    lowdose_contrast: float = 0.7
    lowdose_noise_std: float = 0.15
    portable_blur_sigma: float = 1.0
    anatomical_scale: Tuple[float, float] = (0.85, 1.0)
    anatomical_max_shift: int = 2
    institutional_gamma: Tuple[float, float] = (1.2, 1.4)
    institutional_brightness: Tuple[float, float] = (0.02, 0.10)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    domain_id: int
    params: DomainParams = field(default_factory=DomainParams)
    seed: int = 0

    def __post_init__(self):
        if self.name not in DOMAIN_NAMES:
            raise ValueError(f"unknown domain {self.name!r}; expected one of {DOMAIN_NAMES}")


def default_domains(seed: int = 0, params: DomainParams | None = None) -> List[DomainSpec]:
    """The five domains in curriculum order, each with its own derived seed."""
    params = params or DomainParams()
    return [DomainSpec(name, i, params, seed + i) for i, name in enumerate(DOMAIN_NAMES)]


def gaussian_kernel3(sigma: float) -> np.ndarray:
    ax = np.array([-1.0, 0.0, 1.0])
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    return k / k.sum()


def _blur3(image: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel3(sigma)
    padded = np.pad(image, 1, mode="reflect")
    out = np.zeros_like(image)
    for i in range(3):
        for j in range(3):
            out += k[i, j] * padded[i : i + 28, j : j + 28]
    return out


def _scale_shift(image: np.ndarray, scale: float, dy: int, dx: int) -> np.ndarray:
    center = (np.array(IMAGE_SHAPE) - 1) / 2.0
    rr, cc = np.mgrid[0:28, 0:28].astype(np.float64)
    src_r = center[0] + (rr - center[0] - dy) / scale
    src_c = center[1] + (cc - center[1] - dx) / scale
    return ndimage.map_coordinates(image, [src_r, src_c], order=1, mode="constant", cval=0.0)


def apply_domain(image, spec: DomainSpec, sample_index: int) -> np.ndarray:
    """Transform one 28x28 image in [0, 1]; pure in (image, spec, sample_index)."""
    x = np.asarray(image, dtype=np.float64)
    if x.shape != IMAGE_SHAPE:
        raise ValueError(f"expected a 28x28 image, got {x.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("image pixels must lie in [0, 1]")
    p = spec.params
    if spec.name == "Base":
        return x.copy()
    gen = rngmod.substream(spec.seed, rngmod.TRANSFORM, sample_index)
    if spec.name == "LowDose":
        x = 0.5 + p.lowdose_contrast * (x - 0.5)
        x = x + gen.normal(0.0, p.lowdose_noise_std, size=x.shape)
    elif spec.name == "Portable":
        x = _blur3(x, p.portable_blur_sigma)
    elif spec.name == "Anatomical":
        scale = gen.uniform(*p.anatomical_scale)
        dy, dx = gen.integers(-p.anatomical_max_shift, p.anatomical_max_shift + 1, size=2)
        x = _scale_shift(x, scale, int(dy), int(dx))
    elif spec.name == "Institutional":
        gamma = gen.uniform(*p.institutional_gamma)
        offset = gen.uniform(*p.institutional_brightness)
        x = x**gamma + offset
    return np.clip(x, 0.0, 1.0)


def make_domain_stream(split: DatasetSplit, spec: DomainSpec, start_index: int = 0) -> List[Sample]:
    """Scale to [0, 1], transform, and tag every image; order is preserved.

    ``start_index`` offsets the source indices (and hence the per-sample
    transform seeds) when ``split`` is a shard of a larger split.
    """
    scaled = split.images.astype(np.float64) / 255.0
    return [
        Sample(apply_domain(img, spec, start_index + i), int(label), spec.domain_id, start_index + i)
        for i, (img, label) in enumerate(zip(scaled, split.labels))
    ]


def partition(split: DatasetSplit, parts: int, index: int) -> DatasetSplit:
    """Contiguous shard ``index`` of ``parts`` equal shards (remainder dropped)."""
    size = len(split) // parts
    if size == 0:
        raise ValueError(f"{split.split_tag} split of {len(split)} cannot feed {parts} domains")
    return split.subset(slice(index * size, (index + 1) * size))
