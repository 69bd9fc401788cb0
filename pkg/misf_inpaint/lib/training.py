"""The alternating discriminator / generator training loop."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import pathlib
from collections.abc import Iterator
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from misf_inpaint.lib import mtf
from misf_inpaint.lib.checkpoint import load_checkpoint, save_checkpoint
from misf_inpaint.lib.dataset import Batch, DatasetManifest, batch_iter, batches_per_epoch
from misf_inpaint.lib.errors import ContractError, NumericError
from misf_inpaint.lib.losses import FeatureExtractor, LossWeights, discriminator_loss, total_loss
from misf_inpaint.lib.metrics import capped_psnr, l1_pct, psnr, ssim
from misf_inpaint.lib.networks import MisfModel, ModelConfig, Variant, composite
from misf_inpaint.lib.optim import AdamConfig, AdamState, adam_step
from misf_inpaint.lib.tensor import Parameter, Tensor, backward, no_grad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_iters: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 100
    eval_every: int = 100
    precision: str = "float32"
    masked_l1: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_iters < 0:
            raise ContractError(f"max_iters must be >= 0, got {self.max_iters}")
        AdamConfig(self.lr, self.beta1, self.beta2, self.eps)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class MetricsRow:
    """One line of the metrics CSV."""

    iter: int
    l1: float
    gan: float
    perc: float
    style: float
    total: float
    psnr_train: float


CSV_COLUMNS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class StepResult:
    row: MetricsRow
    grad_norm: float
    disc_loss: float | None


@dataclass
class EvalPoint:
    iter: int
    psnr: float
    ssim: float
    l1_pct: float


@dataclass
class OverfitResult:
    curve: list[EvalPoint] = field(default_factory=list)
    rows: list[MetricsRow] = field(default_factory=list)

    @property
    def final(self) -> EvalPoint:
        return self.curve[-1]


def _format(value: float | int) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


def _grad_norm(params: list[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def dump_batch(batch: Batch, directory: pathlib.Path) -> pathlib.Path:
    """Write a batch's tensors as MTF1 files for post-mortem inspection."""
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("corrupted", "mask", "clean"):
        mtf.save(directory / f"{name}.mtf", getattr(batch, name))
    (directory / "ids.txt").write_text("\n".join(batch.ids) + "\n", encoding="utf-8")
    return directory


def evaluate_split(
    model: MisfModel, manifest: DatasetManifest, split: str = "train", *, delta: bool = False
) -> EvalPoint:
    """Mean PSNR / SSIM / L1% of the composited outputs over a split."""
    scores = []
    with no_grad():
        for index in range(len(manifest.split(split))):
            sample = manifest.sample(split, index)
            image = Tensor(sample.corrupted[None].astype(model.dtype))
            output = model.forward(image, sample.mask[None], delta=delta).numpy()[0]
            scores.append(
                (
                    capped_psnr(psnr(output, sample.clean)),
                    ssim(output, sample.clean),
                    l1_pct(output, sample.clean),
                )
            )
    mean_psnr, mean_ssim, mean_l1 = (float(np.mean(column)) for column in zip(*scores, strict=True))
    return EvalPoint(0, mean_psnr, mean_ssim, mean_l1)


class Trainer:
    """Owns the model, both optimizer states and the data position."""

    def __init__(
        self,
        model: MisfModel,
        manifest: DatasetManifest,
        config: TrainConfig,
        weights: LossWeights = LossWeights(),
        fx: FeatureExtractor | None = None,
        *,
        metrics_path: str | pathlib.Path | None = None,
        checkpoint_dir: str | pathlib.Path | None = None,
        dump_dir: str | pathlib.Path = "nan-dump",
        config_text: str = "",
        config_hash: str = "",
        delta: bool = False,
    ):
        if model.dtype != np.dtype(config.precision):
            raise ContractError(f"model is {model.dtype}, config asks for {config.precision}")
        self.model = model
        self.manifest = manifest
        self.config = config
        self.weights = weights
        self.fx = fx or FeatureExtractor(seed=config.seed, dtype=model.dtype)
        self.metrics_path = pathlib.Path(metrics_path) if metrics_path else None
        self.checkpoint_dir = pathlib.Path(checkpoint_dir) if checkpoint_dir else None
        self.dump_dir = pathlib.Path(dump_dir)
        self.config_text = config_text
        self.config_hash = config_hash
        self.delta = delta
        self.gen_state = AdamState()
        self.disc_state = AdamState()
        self.iteration = 0
        self._per_epoch = batches_per_epoch(manifest, config.batch_size)
        if self._per_epoch == 0:
            raise ContractError(
                f"{len(manifest.train)} training samples cannot fill a batch of {config.batch_size}"
            )
        self._epoch: int | None = None
        self._batches: Iterator[Batch] = iter(())

    def next_batch(self) -> Batch:
        """The batch for the current iteration, a pure function of (seed, iteration)."""
        epoch, position = divmod(self.iteration, self._per_epoch)
        if epoch != self._epoch:
            batches = batch_iter(
                self.manifest, self.config.batch_size, epoch, dtype=self.model.dtype
            )
            self._batches = itertools.islice(batches, position, None)
            self._epoch = epoch
        return next(self._batches)

    def train_step(self, batch: Batch) -> StepResult:
        """Discriminator update on the detached output, then the generator update."""
        try:
            return self._step(batch)
        except NumericError as err:
            where = dump_batch(batch, self.dump_dir / f"iter-{self.iteration}")
            logging.error("non-finite value at iteration %d; batch dumped to %s", self.iteration, where)
            raise NumericError(f"{err} at iteration {self.iteration} (batch dumped to {where})") from err

    def _step(self, batch: Batch) -> StepResult:
        model = self.model
        corrupted = Tensor(batch.corrupted)
        clean = Tensor(batch.clean)
        output = model.forward(corrupted, delta=self.delta)

        disc_value = None
        if self.weights.gan > 0:
            d_loss = discriminator_loss(model.disc, output, clean)
            backward(d_loss)
            adam_step(model.discriminator_parameters(), self.disc_state, self.config.adam)
            disc_value = d_loss.item()

        mask = batch.mask if self.config.masked_l1 else None
        loss, parts = total_loss(output, clean, self.weights, model.disc, self.fx, mask)
        backward(loss)
        params = model.generator_parameters()
        if self.delta:
            # forced kernels leave the kernel branch out of the graph
            params = [p for p in params if p.grad is not None]
        grad_norm = _grad_norm(params)
        adam_step(params, self.gen_state, self.config.adam)

        completed = composite(output.detach(), corrupted, batch.mask).numpy()
        row = MetricsRow(
            iter=self.iteration,
            l1=parts.l1,
            gan=parts.gan,
            perc=parts.perc,
            style=parts.style,
            total=parts.total,
            psnr_train=capped_psnr(psnr(completed, batch.clean)),
        )
        return StepResult(row, grad_norm, disc_value)

    def _append(self, row: MetricsRow) -> None:
        if self.metrics_path is None:
            return
        fresh = row.iter == 0 or not self.metrics_path.exists()
        with self.metrics_path.open("w" if fresh else "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(CSV_COLUMNS)
            writer.writerow([_format(v) for v in astuple(row)])

    def save(self, directory: str | pathlib.Path | None = None) -> pathlib.Path:
        target = pathlib.Path(directory) if directory else self.checkpoint_dir
        if target is None:
            raise ContractError("no checkpoint directory configured")
        return save_checkpoint(
            target,
            self.model,
            self.iteration,
            self.config_text,
            self.config_hash,
            self.gen_state,
            self.disc_state,
        )

    def resume(self, directory: str | pathlib.Path) -> None:
        """Restore parameters, optimizer moments and the iteration counter."""
        manifest = load_checkpoint(
            directory, self.model, self.gen_state, self.disc_state, self.config_hash or None
        )
        self.iteration = manifest.step
        self._epoch = None

    def run(self, until: int | None = None) -> list[MetricsRow]:
        """Train from the current iteration up to `until` (default max_iters)."""
        stop = self.config.max_iters if until is None else until
        rows = []
        while self.iteration < stop:
            result = self.train_step(self.next_batch())
            rows.append(result.row)
            self._append(result.row)
            self.iteration += 1
            if self.config.log_every and self.iteration % self.config.log_every == 0:
                logging.info(
                    "iter %d total=%.5f l1=%.5f psnr=%.2f grad_norm=%.3e",
                    self.iteration,
                    result.row.total,
                    result.row.l1,
                    result.row.psnr_train,
                    result.grad_norm,
                )
            if (
                self.checkpoint_dir is not None
                and self.config.checkpoint_every
                and self.iteration % self.config.checkpoint_every == 0
            ):
                self.save()
        return rows


def overfit_harness(
    variant: Variant,
    manifest: DatasetManifest,
    iters: int,
    *,
    seed: int = 0,
    weights: LossWeights = LossWeights(1.0, 0.0, 0.0, 0.0),
    batch_size: int = 4,
    eval_every: int = 100,
    precision: str = "float32",
) -> tuple[MisfModel, OverfitResult]:
    """Train a misf-tiny model on a small fixture set, tracking training-set quality."""
    if len(manifest.train) > 32:
        raise ContractError(f"the overfit harness takes at most 32 images, got {len(manifest.train)}")
    model = MisfModel(ModelConfig(variant=variant, seed=seed, precision=precision))
    config = TrainConfig(
        batch_size=batch_size,
        max_iters=iters,
        seed=seed,
        log_every=eval_every,
        eval_every=eval_every,
        precision=precision,
    )
    trainer = Trainer(model, manifest, config, weights)
    result = OverfitResult()

    def checkpoint() -> None:
        point = evaluate_split(model, manifest, "train")
        point.iter = trainer.iteration
        result.curve.append(point)
        logging.info(
            "%s iter %d: psnr=%.2f ssim=%.4f l1=%.3f",
            variant.value,
            point.iter,
            point.psnr,
            point.ssim,
            point.l1_pct,
        )

    checkpoint()
    while trainer.iteration < iters:
        step = min(iters, trainer.iteration + eval_every) if eval_every else iters
        result.rows += trainer.run(until=step)
        checkpoint()
    return model, result
