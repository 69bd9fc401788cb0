"""Shared printing utilities for CLI output."""

from collections.abc import Iterable, Sequence

from sty import fg

from misf_inpaint.lib.gradcheck import GradCheckReport
from misf_inpaint.lib.metrics import MetricReport, MetricRow
from misf_inpaint.lib.recurrent import FillFront

PASS = fg(102, 153, 0) + "PASS" + fg.rs
FAIL = fg.red + "FAIL" + fg.rs


def verdict(passed: bool) -> str:
    return PASS if passed else FAIL


def print_gradcheck(results: Sequence[tuple[str, GradCheckReport]], tol: float) -> None:
    """One line per registered check, then the pass count."""
    width = max((len(name) for name, _ in results), default=4)
    print(f"{'op':<{width}}  result  max_rel_err  coords  (tol {tol:g})")
    for name, report in results:
        extra = f"  {report.nonfinite} non-finite" if report.nonfinite else ""
        print(
            f"{name:<{width}}  {verdict(report.passed)}    "
            f"{report.max_rel_err:11.3e}  {report.checked:6d}{extra}"
        )
    passed = sum(report.passed for _, report in results)
    print(f"\n{passed}/{len(results)} checks passed")


def _metric_line(row: MetricRow) -> str:
    return (
        f"{row.id:<24} {row.bucket:<7} {row.psnr:8.3f} {row.ssim:7.4f} "
        f"{row.l1_pct:7.3f}  {row.variant}"
    )


def print_report(report: MetricReport) -> None:
    """Per-sample rows followed by highlighted bucket means."""
    print(f"{'id':<24} {'bucket':<7} {'psnr':>8} {'ssim':>7} {'l1_pct':>7}  variant")
    for row in report.rows:
        print(_metric_line(row))
    for row in report.aggregates():
        print(fg.li_blue + _metric_line(row) + fg.rs)


def print_similarities(pairs: Iterable[tuple[str, float, float]]) -> int:
    """Print pre/post-filter correlations; returns how many improved."""
    improved = 0
    print(f"{'id':<24} {'pre':>8} {'post':>8}")
    for sample_id, pre, post in pairs:
        better = post >= pre
        improved += better
        colour = fg(102, 153, 0) if better else fg.red
        print(f"{sample_id:<24} {pre:8.4f} {colour}{post:8.4f}{fg.rs}")
    return improved


def print_fill_trace(trace: Iterable[FillFront]) -> None:
    for front in trace:
        accurate = "" if front.accurate is None else f"  accurate {front.accurate:6.1%}"
        print(f"{front.iteration:3d}. filled {front.filled:6.1%}{accurate}")
