"""Image-quality metrics, feature similarity and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import pathlib
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.tensor import Tensor, no_grad

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Full-scale scores of each variant (PSNR dB, SSIM, L1 %) per dataset and
# hole-ratio bucket, for report context only; not reproducible at desk scale.
# Dunhuang uses its own fixed masks, listed under "official".
_COLUMNS = (
    ("places2", "0-20"),
    ("places2", "20-40"),
    ("places2", "40-60"),
    ("celeba", "0-20"),
    ("celeba", "20-40"),
    ("celeba", "40-60"),
    ("dunhuang", "official"),
)
_TABLE = {
    "img-filter": (
        (25.489, 17.663, 13.773, 27.314, 19.020, 14.837, 37.021),
        (0.9180, 0.7571, 0.5911, 0.9298, 0.7830, 0.6301, 0.9692),
        (1.535, 5.477, 11.42, 1.264, 4.750, 10.44, 0.386),
    ),
    "sem-filter": (
        (31.010, 24.117, 19.944, 34.253, 26.518, 21.486, 37.897),
        (0.9487, 0.8409, 0.6910, 0.9657, 0.8871, 0.7631, 0.9696),
        (0.750, 2.370, 4.995, 0.488, 1.651, 3.895, 0.383),
    ),
    "misf": (
        (31.335, 24.239, 20.044, 34.494, 26.635, 21.553, 38.383),
        (0.9506, 0.8435, 0.6931, 0.9680, 0.8911, 0.7698, 0.9735),
        (0.726, 2.340, 4.965, 0.474, 1.616, 3.826, 0.341),
    ),
    "en-decoder-filter": (
        (31.187, 24.107, 19.898, 34.330, 26.484, 21.428, 38.195),
        (0.9499, 0.8420, 0.6907, 0.9661, 0.8871, 0.7614, 0.9734),
        (0.732, 2.360, 5.022, 0.487, 1.657, 3.909, 0.345),
    ),
    "en-decoder": (
        (30.824, 23.980, 19.871, 33.745, 26.122, 21.077, 37.766),
        (0.9466, 0.8358, 0.6841, 0.9632, 0.8805, 0.7510, 0.9711),
        (0.769, 2.432, 5.104, 0.518, 1.740, 4.117, 0.362),
    ),
}
REFERENCE_SCORES: dict[tuple[str, str, str], dict[str, float]] = {
    (variant, dataset, bucket): {
        "psnr": psnr_row[i],
        "ssim": ssim_row[i],
        "l1_pct": l1_row[i],
    }
    for variant, (psnr_row, ssim_row, l1_row) in _TABLE.items()
    for i, (dataset, bucket) in enumerate(_COLUMNS)
}


def _arrays(output: np.ndarray | Tensor, target: np.ndarray | Tensor) -> tuple[np.ndarray, np.ndarray]:
    a = output.numpy() if isinstance(output, Tensor) else np.asarray(output)
    b = target.numpy() if isinstance(target, Tensor) else np.asarray(target)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(output: np.ndarray | Tensor, target: np.ndarray | Tensor) -> float:
    """10 log10(1 / MSE) in dB; identical images give +inf."""
    a, b = _arrays(output, target)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def capped_psnr(value: float) -> float:
    return min(value, PSNR_CAP)


def l1_pct(output: np.ndarray | Tensor, target: np.ndarray | Tensor) -> float:
    a, b = _arrays(output, target)
    return 100.0 * float(np.mean(np.abs(a - b)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2
    line = np.exp(-(offsets**2) / (2 * sigma**2))
    window = np.outer(line, line)
    return window / window.sum()


def grayscale(image: np.ndarray) -> np.ndarray:
    """[..., 3, H, W] -> [..., H, W] luma."""
    r, g, b = GRAY_WEIGHTS
    return r * image[..., 0, :, :] + g * image[..., 1, :, :] + b * image[..., 2, :, :]


def _ssim_single(x: np.ndarray, y: np.ndarray) -> float:
    window = gaussian_window()
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs images of at least {SSIM_WINDOW}px, got {x.shape}")

    def local(z: np.ndarray) -> np.ndarray:
        return np.einsum("hwij,ij->hw", sliding_window_view(z, window.shape), window)

    mu_x, mu_y = local(x), local(y)
    var_x = local(x * x) - mu_x**2
    var_y = local(y * y) - mu_y**2
    cov = local(x * y) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(numerator / denominator))


def ssim(output: np.ndarray | Tensor, target: np.ndarray | Tensor) -> float:
    """Mean Gaussian-window SSIM of the luma planes; batches are averaged."""
    a, b = _arrays(output, target)
    if a.ndim not in (3, 4) or a.shape[-3] != 3:
        raise ContractError(f"SSIM expects [3, H, W] or [B, 3, H, W], got {a.shape}")
    ga, gb = grayscale(a), grayscale(b)
    if ga.ndim == 2:
        return _ssim_single(ga, gb)
    return float(np.mean([_ssim_single(x, y) for x, y in zip(ga, gb, strict=True)]))


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    a = a - a.mean()
    b = b - b.mean()
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0:
        raise ContractError("cross-correlation of a zero-variance feature")
    return float(np.clip(a @ b / norm, -1.0, 1.0))


FEATURE_SITES = ("pre-filter", "post-filter")


def feature_similarity(model, corrupted: np.ndarray, clean: np.ndarray, site: str) -> float:
    """Correlation between the corrupted and clean images' features at the filter layer.

    `pre-filter` compares F_l, `post-filter` the semantically filtered F_l.
    """
    if site not in FEATURE_SITES:
        raise ContractError(f"site must be one of {FEATURE_SITES}, got {site!r}")
    if not model.variant.filters_features:
        raise ContractError(f"{model.variant.value} does not filter features")
    level = model.config.filter_layer
    name = f"F{level}" if site == "pre-filter" else f"F{level}_hat"
    with no_grad():
        a = model.forward_trace(Tensor(np.asarray(corrupted, dtype=model.dtype))).tensors[name]
        b = model.forward_trace(Tensor(np.asarray(clean, dtype=model.dtype))).tensors[name]
    return normalized_cross_correlation(a.numpy(), b.numpy())


@dataclass
class MetricRow:
    id: str
    bucket: str
    psnr: float
    ssim: float
    l1_pct: float
    variant: str

    @classmethod
    def measure(
        cls, sample_id: str, bucket: str, output: np.ndarray, target: np.ndarray, variant: str
    ) -> MetricRow:
        return cls(
            sample_id,
            bucket,
            capped_psnr(psnr(output, target)),
            ssim(output, target),
            l1_pct(output, target),
            variant,
        )


COLUMNS = tuple(f.name for f in fields(MetricRow))


@dataclass
class MetricReport:
    """Per-sample rows plus per-bucket means (rows with id ``mean``)."""

    rows: list[MetricRow]

    def aggregates(self) -> list[MetricRow]:
        groups: dict[tuple[str, str], list[MetricRow]] = {}
        for row in self.rows:
            groups.setdefault((row.bucket, row.variant), []).append(row)
        return [
            MetricRow(
                "mean",
                bucket,
                float(np.mean([r.psnr for r in members])),
                float(np.mean([r.ssim for r in members])),
                float(np.mean([r.l1_pct for r in members])),
                variant,
            )
            for (bucket, variant), members in groups.items()
        ]

    def to_dict(self) -> dict[str, list[dict[str, object]]]:
        return {
            "rows": [asdict(r) for r in self.rows],
            "aggregates": [asdict(r) for r in self.aggregates()],
        }


def emit_report(rows: Sequence[MetricRow], path: str | pathlib.Path, fmt: str = "csv") -> None:
    """Write rows then bucket aggregates as CSV, or the same content as JSON."""
    path = pathlib.Path(path)
    report = MetricReport(list(rows))
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for row in [*report.rows, *report.aggregates()]:
                writer.writerow(
                    [row.id, row.bucket, repr(row.psnr), repr(row.ssim), repr(row.l1_pct), row.variant]
                )
    else:
        raise ContractError(f"unknown report format {fmt!r}")
    logging.info("wrote %d rows to %s", len(report.rows), path)


def read_report_csv(path: str | pathlib.Path) -> MetricReport:
    """Per-sample rows of a CSV written by `emit_report` (aggregate rows skipped)."""
    rows = []
    with pathlib.Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ContractError(f"unexpected report columns {reader.fieldnames}")
        for record in reader:
            if record["id"] == "mean":
                continue
            rows.append(
                MetricRow(
                    record["id"],
                    record["bucket"],
                    float(record["psnr"]),
                    float(record["ssim"]),
                    float(record["l1_pct"]),
                    record["variant"],
                )
            )
    return MetricReport(rows)


def bucket_means(rows: Iterable[MetricRow]) -> dict[str, MetricRow]:
    return {row.bucket: row for row in MetricReport(list(rows)).aggregates()}
