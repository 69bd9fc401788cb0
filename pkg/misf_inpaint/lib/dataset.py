"""Samples, fixtures, manifests and deterministic batch iteration."""

from __future__ import annotations

import concurrent.futures
import logging
import pathlib
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from misf_inpaint.lib import kvfile
from misf_inpaint.lib.errors import ConfigError, ContractError
from misf_inpaint.lib.image_io import load_image, load_mask
from misf_inpaint.lib.masks import Bucket, MaskSpec, generate_mask

FILL_VALUE = 1.0
FIXTURE_COUNT = 32
FIXTURE_PREFIX = "fixture:"
MANIFEST_KEYS = ("root", "resolution", "buckets", "seed", "masks", "flip")


def corrupt(clean: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Holes (mask = 1) become white; every other pixel is copied exactly."""
    clean = np.asarray(clean)
    mask = np.asarray(mask)
    if mask.shape[-2:] != clean.shape[-2:] or mask.shape[-3] != 1:
        raise ContractError(f"mask {mask.shape} does not fit image {clean.shape}")
    return np.where(mask > 0, np.asarray(FILL_VALUE, dtype=clean.dtype), clean)


def fixture_image(index: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """One procedural [3, size, size] image; kinds cycle gradient/checker/blobs."""
    rng = np.random.default_rng([seed, index])
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    kind = index % 3
    if kind == 0:
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        low, high = rng.uniform(0, 1, size=(2, 3, 1, 1))
        image = low + (high - low) * ramp[None]
    elif kind == 1:
        cells = int(rng.integers(2, 9))
        board = (np.floor(xx * cells * 0.999) + np.floor(yy * cells * 0.999)) % 2
        first, second = rng.uniform(0, 1, size=(2, 3, 1, 1))
        image = np.where(board[None] > 0, first, second)
    else:
        image = np.broadcast_to(rng.uniform(0, 0.3, size=(3, 1, 1)), (3, size, size)).copy()
        for _ in range(int(rng.integers(2, 6))):
            cy, cx = rng.uniform(0, 1, size=2)
            sigma = rng.uniform(0.05, 0.25)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
            image += rng.uniform(0, 1, size=(3, 1, 1)) * blob[None]
    return np.clip(image, 0.0, 1.0)


def fixture_images(count: int = FIXTURE_COUNT, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    return [fixture_image(i, size, seed) for i in range(count)]


@dataclass
class ImageSample:
    """A clean image, its hole mask and the corrupted input derived from them."""

    id: str
    clean: np.ndarray
    mask: np.ndarray
    bucket: Bucket | None = None

    @property
    def corrupted(self) -> np.ndarray:
        return corrupt(self.clean, self.mask)

    def flipped(self) -> ImageSample:
        return ImageSample(
            self.id, self.clean[..., ::-1].copy(), self.mask[..., ::-1].copy(), self.bucket
        )


@dataclass
class DatasetManifest:
    """Where the images live, how they are split and how masks are drawn.

    `buckets` is either ``cycle`` (sample i uses bucket i mod 3) or one bucket
    label such as ``20-40``.
    """

    root: pathlib.Path = field(default_factory=pathlib.Path)
    train: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)
    resolution: int = 64
    buckets: str = "cycle"
    seed: int = 0
    masks: pathlib.Path | None = None
    flip: bool = False

    @classmethod
    def fixtures(
        cls, train: int = 16, test: int = 16, resolution: int = 64, seed: int = 0, **kwargs
    ) -> DatasetManifest:
        if train + test > FIXTURE_COUNT:
            raise ContractError(f"only {FIXTURE_COUNT} fixtures exist, asked for {train + test}")
        return cls(
            train=[f"{FIXTURE_PREFIX}{i}" for i in range(train)],
            test=[f"{FIXTURE_PREFIX}{i}" for i in range(train, train + test)],
            resolution=resolution,
            seed=seed,
            **kwargs,
        )

    def split(self, name: str) -> list[str]:
        if name not in ("train", "test"):
            raise ContractError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test

    def bucket_for(self, index: int) -> Bucket:
        if self.buckets == "cycle":
            return list(Bucket)[index % len(Bucket)]
        return Bucket.parse(self.buckets)

    def _mask_files(self) -> list[pathlib.Path]:
        assert self.masks is not None
        directory = self.masks if self.masks.is_absolute() else self.root / self.masks
        files = sorted(directory.glob("*.png"))
        if not files:
            raise ContractError(f"no PNG masks in {directory}")
        return files

    def mask_for(self, index: int) -> tuple[np.ndarray, Bucket | None]:
        """Mask of the sample at `index`, keyed by (seed, index) only."""
        if self.masks is not None:
            files = self._mask_files()
            mask = load_mask(files[index % len(files)])
            if mask.shape[1:] != (self.resolution, self.resolution):
                raise ContractError(f"mask {mask.shape} does not match resolution {self.resolution}")
            return mask, Bucket.of(float(mask.mean()))
        bucket = self.bucket_for(index)
        spec = MaskSpec(bucket=bucket, seed=self.seed * 100_003 + index)
        return generate_mask(spec, self.resolution, self.resolution), bucket

    def image_for(self, ref: str) -> np.ndarray:
        if ref.startswith(FIXTURE_PREFIX):
            return fixture_image(int(ref[len(FIXTURE_PREFIX) :]), self.resolution, self.seed)
        image = load_image(self.root / ref, np.float64)
        if image.shape[1:] != (self.resolution, self.resolution):
            raise ContractError(
                f"{ref} is {image.shape[2]}x{image.shape[1]}, manifest wants {self.resolution}"
            )
        return image

    def sample(self, split: str, index: int) -> ImageSample:
        ref = self.split(split)[index]
        mask, bucket = self.mask_for(index if split == "train" else len(self.train) + index)
        return ImageSample(ref, self.image_for(ref), mask, bucket)


def load_manifest(path: str | pathlib.Path) -> DatasetManifest:
    """Read a manifest; relative roots are taken from the manifest's directory."""
    path = pathlib.Path(path)
    parsed = kvfile.parse_file(path)
    for key in parsed.values:
        if key not in MANIFEST_KEYS:
            raise ConfigError(key, "unknown manifest key")
    for name in parsed.sections:
        if name not in ("train", "test"):
            raise ConfigError(name, "manifest sections are [train] and [test]")
    values = parsed.values
    root = pathlib.Path(values.get("root", "."))
    if not root.is_absolute():
        root = path.parent / root
    try:
        manifest = DatasetManifest(
            root=root,
            train=parsed.sections.get("train", []),
            test=parsed.sections.get("test", []),
            resolution=int(values.get("resolution", 64)),
            buckets=values.get("buckets", "cycle"),
            seed=int(values.get("seed", 0)),
            masks=pathlib.Path(values["masks"]) if "masks" in values else None,
            flip=kvfile.parse_bool("flip", values.get("flip", "false")),
        )
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(path), f"bad manifest value: {err}") from err
    if manifest.buckets != "cycle":
        try:
            Bucket.parse(manifest.buckets)
        except ContractError as err:
            raise ConfigError("buckets", str(err)) from err
    logging.debug(
        "manifest %s: %d train / %d test", path, len(manifest.train), len(manifest.test)
    )
    return manifest


@dataclass
class Batch:
    """Stacked samples; images [B, 3, H, W], masks [B, 1, H, W]."""

    ids: list[str]
    corrupted: np.ndarray
    mask: np.ndarray
    clean: np.ndarray
    buckets: list[Bucket | None]

    def __len__(self) -> int:
        return len(self.ids)


def epoch_order(manifest: DatasetManifest, split: str, epoch: int, shuffle: bool) -> np.ndarray:
    size = len(manifest.split(split))
    if not shuffle:
        return np.arange(size)
    return np.random.default_rng([manifest.seed, epoch]).permutation(size)


def batches_per_epoch(manifest: DatasetManifest, batch_size: int, training: bool = True) -> int:
    size = len(manifest.split("train" if training else "test"))
    return size // batch_size if training else -(-size // batch_size)


def _stack(samples: Sequence[ImageSample], dtype: np.dtype) -> Batch:
    return Batch(
        ids=[s.id for s in samples],
        corrupted=np.stack([s.corrupted for s in samples]).astype(dtype),
        mask=np.stack([s.mask for s in samples]).astype(dtype),
        clean=np.stack([s.clean for s in samples]).astype(dtype),
        buckets=[s.bucket for s in samples],
    )


def batch_iter(
    manifest: DatasetManifest,
    batch_size: int,
    epoch: int = 0,
    *,
    training: bool = True,
    dtype: np.dtype | type = np.float32,
    workers: int = 1,
) -> Iterator[Batch]:
    """Batches of one epoch.

    Training shuffles by (seed, epoch), applies the optional flip and drops the
    final partial batch; evaluation walks the test split in order and keeps it.
    The sequence does not depend on `workers`.
    """
    if batch_size < 1:
        raise ContractError(f"batch size must be >= 1, got {batch_size}")
    split = "train" if training else "test"
    if not manifest.split(split):
        raise ContractError(f"the {split} split is empty")
    order = epoch_order(manifest, split, epoch, shuffle=training)
    count = batches_per_epoch(manifest, batch_size, training)

    def load(index: int) -> ImageSample:
        sample = manifest.sample(split, int(index))
        if training and manifest.flip:
            coin = np.random.default_rng([manifest.seed, epoch, int(index)]).random()
            if coin < 0.5:
                sample = sample.flipped()
        return sample

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for b in range(count):
            indices = order[b * batch_size : (b + 1) * batch_size]
            yield _stack(list(pool.map(load, indices)), np.dtype(dtype))
