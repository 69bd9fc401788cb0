"""Entry point for the CLI.

Every subcommand resolves a run configuration (defaults, ``--config`` file,
``--set key=value`` overrides, explicit flags, then ``MISF_SEED``), logs it
with its hash and hands off to the library. Library errors become exit codes:
1 for configuration and contract errors, 2 for numeric aborts, 3 for I/O.
"""

import contextlib
import csv
import logging
import pathlib
from collections.abc import Iterator
from importlib import metadata

import click
import numpy as np

from misf_inpaint.cli.printing import (
    print_fill_trace,
    print_gradcheck,
    print_report,
    print_similarities,
)
from misf_inpaint.lib import mtf
from misf_inpaint.lib.checkpoint import load_checkpoint, read_config_text
from misf_inpaint.lib.config import RunConfig, log_config, resolve_run_config
from misf_inpaint.lib.dataset import FIXTURE_COUNT, DatasetManifest, corrupt, load_manifest
from misf_inpaint.lib.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    ImageFormatError,
    MaskBucketError,
    NumericError,
)
from misf_inpaint.lib.gradsuite import REGISTRY, run_suite
from misf_inpaint.lib.image_io import load_image, load_mask, save_image, save_mask
from misf_inpaint.lib.kvfile import parse_text
from misf_inpaint.lib.losses import FeatureExtractor
from misf_inpaint.lib.masks import Bucket, MaskSpec, generate_mask, hole_ratio
from misf_inpaint.lib.metrics import MetricReport, MetricRow, emit_report, feature_similarity
from misf_inpaint.lib.networks import PRESETS, MisfModel, Variant, composite
from misf_inpaint.lib.recurrent import recurrent_filter
from misf_inpaint.lib.tensor import Tensor, no_grad
from misf_inpaint.lib.training import Trainer

VARIANTS = [v.value for v in Variant]


class NumericAbort(click.ClickException):
    exit_code = 2


class IOFailure(click.ClickException):
    exit_code = 3


@contextlib.contextmanager
def exit_codes() -> Iterator[None]:
    """Translate library exceptions into click exceptions with our exit codes."""
    try:
        yield
    except ConfigError as err:
        raise click.ClickException(f"config error: {err}") from err
    except NumericError as err:
        raise NumericAbort(str(err)) from err
    except (CheckpointError, ImageFormatError, OSError) as err:
        raise IOFailure(str(err)) from err
    except (ContractError, MaskBucketError) as err:
        raise click.ClickException(str(err)) from err


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        format="%(levelname)s: %(message)s",
        level=logging.DEBUG if verbose else logging.INFO,
        force=True,
    )


def verbose_option(f):
    return click.option(
        "--verbose", is_flag=True, help="Show debug logging whilst running."
    )(f)


def config_options(f):
    """--config/--set/--variant/--seed shared by commands that build a run config."""
    f = click.option(
        "--seed", type=int, default=None, help="Override the config seed."
    )(f)
    f = click.option(
        "--variant",
        type=click.Choice(VARIANTS),
        default=None,
        help="Network variant (default misf).",
    )(f)
    f = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override one config key; may be repeated.",
    )(f)
    f = click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="Run config file of 'key = value' lines.",
    )(f)
    return f


def run_manifest(config: RunConfig) -> DatasetManifest:
    """The configured manifest, or the fixture set at the preset's resolution."""
    if config.manifest:
        return load_manifest(config.manifest)
    resolution = PRESETS[config.preset].resolution
    test = min(16, FIXTURE_COUNT - config.fixtures)
    return DatasetManifest.fixtures(
        train=config.fixtures, test=test, resolution=resolution, seed=config.seed
    )


def feature_extractor(config: RunConfig, model: MisfModel) -> FeatureExtractor:
    return FeatureExtractor(
        seed=config.seed, dtype=model.dtype, weights_path=config.fx_weights or None
    )


def load_trained(checkpoint: str) -> tuple[RunConfig, MisfModel]:
    """Rebuild the model a checkpoint was trained with and load its parameters."""
    text = read_config_text(checkpoint)
    config = RunConfig.from_mapping(parse_text(text, f"{checkpoint}/config.txt").values)
    log_config(config)
    model = MisfModel(config.model_config())
    load_checkpoint(checkpoint, model, expected_hash=config.config_hash())
    return config, model


@click.group(invoke_without_command=True)
@click.pass_context
@click.version_option(version=metadata.version("misf-inpaint"))
def cli(ctx: click.Context) -> None:
    ctx.ensure_object(dict)

    if ctx.invoked_subcommand is not None:
        return

    click.echo(ctx.get_help())
    ctx.exit()


@cli.command()
@config_options
@click.option(
    "-o",
    "--out",
    type=click.Path(file_okay=False),
    required=True,
    help="Run directory; receives metrics.csv and checkpoint/.",
)
@click.option("--max-iters", type=int, default=None, help="Iterations to train.")
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Dataset manifest (default: the built-in fixtures).",
)
@click.option("--masked-l1", is_flag=True, help="Average L1 over holes only.")
@click.option(
    "--fx-weights",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="MTF1 weights for the perceptual feature extractor.",
)
@click.option(
    "--resume",
    type=click.Path(exists=True, file_okay=False),
    default=None,
    help="Continue from this checkpoint directory.",
)
@click.option(
    "--delta-kernels",
    is_flag=True,
    help="Force every predicted kernel to the identity (delta) kernel.",
)
@verbose_option
def train(
    config_path: str | None,
    overrides: tuple[str, ...],
    variant: str | None,
    seed: int | None,
    out: str,
    max_iters: int | None,
    manifest: str | None,
    masked_l1: bool,
    fx_weights: str | None,
    resume: str | None,
    delta_kernels: bool,
    verbose: bool,
) -> None:
    """Train a model and write its metrics CSV and checkpoint."""
    setup_logging(verbose)
    with exit_codes():
        config = resolve_run_config(
            config_path,
            overrides,
            {
                "variant": variant,
                "seed": seed,
                "max_iters": max_iters,
                "manifest": manifest,
                "masked_l1": masked_l1 or None,
                "fx_weights": fx_weights,
            },
        )
        run_dir = pathlib.Path(out)
        run_dir.mkdir(parents=True, exist_ok=True)
        dataset = run_manifest(config)
        model = MisfModel(config.model_config())
        trainer = Trainer(
            model,
            dataset,
            config.train_config(),
            config.loss_weights(),
            feature_extractor(config, model),
            metrics_path=run_dir / "metrics.csv",
            checkpoint_dir=run_dir / "checkpoint",
            dump_dir=run_dir / "nan-dump",
            config_text=config.to_text(),
            config_hash=config.config_hash(),
            delta=delta_kernels,
        )
        if resume:
            trainer.resume(resume)
        rows = trainer.run()
        trainer.save()

    print(f"trained {config.variant} ({config.preset}) to iteration {trainer.iteration}")
    if rows:
        print(f"final total loss {rows[-1].total:.5f}, psnr_train {rows[-1].psnr_train:.2f} dB")
    print(f"config hash {config.config_hash()}; checkpoint in {run_dir / 'checkpoint'}")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False))
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "-o", "--out", type=click.Path(dir_okay=False), required=True, help="Output image."
)
@click.option(
    "--dump-kernels",
    type=click.Path(file_okay=False),
    default=None,
    help="Write every predicted kernel field here as MTF1.",
)
@click.option(
    "--dump-features",
    type=click.Path(file_okay=False),
    default=None,
    help="Write every named intermediate tensor here as MTF1.",
)
@verbose_option
def inpaint(
    checkpoint: str,
    image: str,
    mask: str,
    out: str,
    dump_kernels: str | None,
    dump_features: str | None,
    verbose: bool,
) -> None:
    """Complete the holes of IMAGE marked by MASK with a trained CHECKPOINT."""
    setup_logging(verbose)
    with exit_codes():
        _, model = load_trained(checkpoint)
        pixels = load_image(image, model.dtype)
        holes = load_mask(mask, model.dtype)
        corrupted = Tensor(corrupt(pixels, holes)[None])
        with no_grad():
            trace = model.forward_trace(corrupted)
            completed = composite(trace.output, corrupted, holes[None])
        save_image(completed, out)
        if dump_kernels:
            _dump(dump_kernels, {k: field.data for k, field in trace.kernels.items()})
        if dump_features:
            _dump(dump_features, trace.tensors)
    print(f"wrote {out} ({pixels.shape[2]}x{pixels.shape[1]}, {hole_ratio(holes):.1%} holes)")


def _dump(directory: str, tensors: dict[str, Tensor]) -> None:
    target = pathlib.Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    for name, tensor in tensors.items():
        mtf.save(target / f"{name}.mtf", tensor.numpy())
    logging.info("dumped %d tensors to %s", len(tensors), target)


@cli.command("eval")
@click.option(
    "--results",
    type=click.Path(exists=True, file_okay=False),
    required=True,
    help="Directory of completed PNG images.",
)
@click.option(
    "--gt",
    type=click.Path(exists=True, file_okay=False),
    required=True,
    help="Directory of ground-truth PNG images with the same file names.",
)
@click.option(
    "--masks",
    type=click.Path(exists=True, file_okay=False),
    required=True,
    help="Directory of PNG masks with the same file names.",
)
@click.option(
    "-o", "--out", type=click.Path(dir_okay=False), required=True, help="Report file."
)
@click.option("--json", "as_json", is_flag=True, help="Write JSON instead of CSV.")
@click.option(
    "--variant", type=click.Choice(VARIANTS), default="misf", show_default=True,
    help="Variant label recorded in every row.",
)
@verbose_option
def evaluate(
    results: str, gt: str, masks: str, out: str, as_json: bool, variant: str, verbose: bool
) -> None:
    """Score completed images against ground truth, per hole-ratio bucket."""
    setup_logging(verbose)
    with exit_codes():
        log_config(RunConfig.from_mapping({"variant": variant}))
        rows = []
        for result in sorted(pathlib.Path(results).glob("*.png")):
            output = load_image(result, np.float64)
            target = load_image(pathlib.Path(gt) / result.name, np.float64)
            mask = load_mask(pathlib.Path(masks) / result.name)
            bucket = Bucket.of(hole_ratio(mask))
            rows.append(
                MetricRow.measure(
                    result.stem, bucket.label if bucket else "none", output, target, variant
                )
            )
        emit_report(rows, out, "json" if as_json else "csv")
    print_report(MetricReport(rows))


@cli.command("mask-gen")
@click.option(
    "--bucket",
    type=click.Choice([b.label for b in Bucket]),
    required=True,
    help="Hole-ratio bucket.",
)
@click.option("--seed", type=int, default=0, show_default=True, help="First mask seed.")
@click.option(
    "-o", "--out", type=click.Path(file_okay=False), required=True, help="Output directory."
)
@click.option("--count", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--size", type=click.IntRange(min=32), default=64, show_default=True)
@click.option("--rectangles", is_flag=True, help="Mix rectangles in with the strokes.")
@verbose_option
def mask_gen(
    bucket: str, seed: int, out: str, count: int, size: int, rectangles: bool, verbose: bool
) -> None:
    """Generate COUNT free-form hole masks in one ratio bucket."""
    setup_logging(verbose)
    target = pathlib.Path(out)
    with exit_codes():
        log_config(RunConfig.from_mapping({"seed": str(seed)}))
        target.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            spec = MaskSpec(bucket=Bucket.parse(bucket), seed=seed + i, rectangles=rectangles)
            mask = generate_mask(spec, size, size)
            save_mask(mask, target / f"mask_{seed + i:06d}.png")
            logging.info("mask %d: %.1f%% holes", seed + i, 100 * hole_ratio(mask))
    print(f"wrote {count} {bucket} masks to {target}")


@cli.command()
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--eps", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--only",
    multiple=True,
    type=click.Choice(list(REGISTRY)),
    help="Run only this check; may be repeated.",
)
@verbose_option
@click.pass_context
def gradcheck(
    ctx: click.Context, tol: float, eps: float, seed: int, only: tuple[str, ...], verbose: bool
) -> None:
    """Compare analytic gradients with central differences, in 64-bit."""
    setup_logging(verbose)
    with exit_codes():
        log_config(RunConfig.from_mapping({"seed": str(seed), "precision": "float64"}))
        results = run_suite(eps=eps, tol=tol, seed=seed, names=list(only) or None)
    print_gradcheck(results, tol)
    if not all(report.passed for _, report in results):
        ctx.exit(1)


@cli.command("feature-sim")
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False))
@click.option(
    "--split", type=click.Choice(["train", "test"]), default="test", show_default=True
)
@click.option("--count", type=click.IntRange(min=1), default=20, show_default=True)
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Dataset manifest (default: the checkpoint's own).",
)
@verbose_option
def feature_sim(
    checkpoint: str, split: str, count: int, manifest: str | None, verbose: bool
) -> None:
    """Correlate corrupted-image features with clean-image features.

    Compares the filter layer before and after semantic filtering.
    """
    setup_logging(verbose)
    with exit_codes():
        config, model = load_trained(checkpoint)
        dataset = load_manifest(manifest) if manifest else run_manifest(config)
        total = min(count, len(dataset.split(split)))
        pairs = []
        for index in range(total):
            sample = dataset.sample(split, index)
            corrupted = sample.corrupted[None].astype(model.dtype)
            clean = sample.clean[None].astype(model.dtype)
            pairs.append(
                (
                    sample.id,
                    feature_similarity(model, corrupted, clean, "pre-filter"),
                    feature_similarity(model, corrupted, clean, "post-filter"),
                )
            )
    improved = print_similarities(pairs)
    print(f"\npost-filter >= pre-filter on {improved}/{total} samples")


@cli.command("demo-recurrent")
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False))
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "-o", "--out", type=click.Path(file_okay=False), required=True, help="Frame directory."
)
@click.option("--iterations", type=click.IntRange(min=0), default=8, show_default=True)
@click.option(
    "--clean",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Ground truth, for the accuracy column of the trace.",
)
@verbose_option
def demo_recurrent(
    checkpoint: str,
    image: str,
    mask: str,
    out: str,
    iterations: int,
    clean: str | None,
    verbose: bool,
) -> None:
    """Feed a model its own output and save every frame."""
    setup_logging(verbose)
    target = pathlib.Path(out)
    with exit_codes():
        _, model = load_trained(checkpoint)
        holes = load_mask(mask, model.dtype)
        corrupted = corrupt(load_image(image, model.dtype), holes)
        truth = load_image(clean, np.float64) if clean else None
        result = recurrent_filter(corrupted, holes, model, iterations, clean=truth)
        target.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(result.frames):
            save_image(frame, target / f"frame_{t:03d}.png")
        with (target / "trace.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "filled", "accurate"])
            for front in result.trace:
                accurate = "" if front.accurate is None else repr(front.accurate)
                writer.writerow([front.iteration, repr(front.filled), accurate])
    print_fill_trace(result.trace)
    print(f"wrote {len(result.frames)} frames to {target}")


if __name__ == "__main__":
    cli()
