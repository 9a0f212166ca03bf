"""
Report generator.

Takes a :class:`~scatter_attack.evaluation.CampaignReport` and writes

* ``outcomes.csv``: one row per attacked image,
* ``summary.json``: rates, on-target fractions, config and outcomes,
* ``success_rates.svg``: grouped bar chart of the success rates.

Every file is a pure function of the report, so re-emitting the same
report reproduces the same bytes. :func:`write_panel` draws one image
attacked both ways, with the scatterers marked on the perturbed images.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Tuple, Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Patch, Rectangle

from .attack import ATTACK_KINDS, AttackResult
from .errors import FormatError
from .evaluation import CampaignReport, ImageOutcome
from .positioning import TargetMask


PathLike = Union[str, Path]

CSV_COLUMNS = tuple(f.name for f in fields(ImageOutcome))
CSV_NAME = "outcomes.csv"
JSON_NAME = "summary.json"
SVG_NAME = "success_rates.svg"

# Bar heights are percentages.
FULL_SCALE = 100.0
BAR_WIDTH = 0.8
BAR_GAP = 0.1
GROUP_GAP = 0.8
FIGSIZE = (7.0, 4.0)
PALETTE = {"otsa": "#d95f02", "baseline": "#7570b3", "fgsm": "#1b9e77"}
DEFAULT_COLOUR = "#666666"
# SVG element ids are derived from this salt.
SVG_HASH_SALT = "scatter-attack"

PANEL_FIGSIZE = (10.0, 2.9)
MASK_COLOUR = "#1b9e77"
ON_TARGET_COLOUR = "#1b9e77"
OFF_TARGET_COLOUR = "#d62728"


@dataclass(frozen=True)
class ReportPaths:
    csv: Path
    json: Path
    svg: Path


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report file ({exc.strerror})", str(path)) from exc


# ------------------------------------------------------------------
# Public API
# ------------------------------------------------------------------


def emit_report(report: CampaignReport, directory: PathLike) -> ReportPaths:
    """Write the CSV, JSON and SVG files for *report* under *directory*."""
    directory = Path(directory)
    paths = ReportPaths(directory / CSV_NAME, directory / JSON_NAME, directory / SVG_NAME)
    _write(paths.csv, render_csv(report.outcomes))
    _write(paths.json, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(paths.svg, render_svg(report.rates))
    return paths


def render_csv(outcomes: List[ImageOutcome]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for o in outcomes:
        writer.writerow([o.id, o.attack, o.pre_pred, o.post_pred, int(o.success), o.n_kept, o.iters])
    return buffer.getvalue()


def read_outcomes_csv(path: PathLike) -> List[ImageOutcome]:
    """Parse a CSV written by :func:`emit_report` back into outcomes."""
    path = Path(path)
    where = str(path)
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise FormatError("header", f"expected columns {','.join(CSV_COLUMNS)}", where)
        outcomes = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise FormatError(f"row {line}", f"expected {len(CSV_COLUMNS)} fields", where)
            try:
                outcomes.append(
                    ImageOutcome(
                        id=row[0],
                        attack=row[1],
                        pre_pred=int(row[2]),
                        post_pred=int(row[3]),
                        success=_parse_flag(row[4]),
                        n_kept=int(row[5]),
                        iters=int(row[6]),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"row {line}", str(exc), where) from exc
    return outcomes


def load_report(path: PathLike) -> CampaignReport:
    """Rebuild a :class:`CampaignReport` from its ``summary.json``."""
    path = Path(path)
    where = str(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        outcomes = [ImageOutcome(**row) for row in data["outcomes"]]
        return CampaignReport(
            rates={k: float(v) for k, v in data["rates"].items()},
            on_target_fraction={k: float(v) for k, v in data["on_target_fraction"].items()},
            sample_size=int(data["sample_size"]),
            config=data["config"],
            outcomes=outcomes,
        )
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("summary", f"invalid JSON: {exc}", where) from exc
    except (KeyError, TypeError, AttributeError) as exc:
        raise FormatError("summary", f"missing or malformed field: {exc}", where) from exc


# ------------------------------------------------------------------
# Helpers
# ------------------------------------------------------------------


def _parse_flag(text: str) -> bool:
    if text not in ("0", "1"):
        raise ValueError(f"success must be 0 or 1, got {text!r}")
    return text == "1"


def _bar_order(label: str) -> Tuple[float, str, int]:
    kind, _, group = label.partition("-")
    digits = group[1:]
    count = float(digits) if group.startswith("n") and digits.isdigit() else float("inf")
    rank = ATTACK_KINDS.index(kind) if kind in ATTACK_KINDS else len(ATTACK_KINDS)
    return count, group or kind, rank


def _group_rates(rates: Dict[str, float]) -> List[Tuple[str, List[Tuple[str, str, float]]]]:
    """Split labels like ``otsa-n2`` into groups ``n2`` holding ``(kind, label, rate)`` bars.

    Groups run by scatterer count and bars by attack kind, whatever the
    order of *rates*, so a report reloaded from JSON draws the same chart.
    """
    groups: Dict[str, List[Tuple[str, str, float]]] = {}
    for label in sorted(rates, key=_bar_order):
        kind, _, group = label.partition("-")
        groups.setdefault(group or kind, []).append((kind, label, rates[label]))
    return list(groups.items())


def bar_height(rate: float) -> float:
    """Bar height in percent, clamped to ``[0, FULL_SCALE]``."""
    return max(0.0, min(1.0, rate)) * FULL_SCALE


def build_chart(rates: Dict[str, float]) -> Tuple[Figure, Dict[str, Rectangle]]:
    """Grouped bar chart, one group per scatterer count and one bar per attack kind.

    Returns the figure and its bars keyed by attack label; every bar
    carries the SVG id ``bar-<label>``.
    """
    fig = Figure(figsize=FIGSIZE)
    ax = fig.add_subplot()
    bars: Dict[str, Rectangle] = {}
    ticks: List[float] = []
    tick_labels: List[str] = []
    x = 0.0
    for group, members in _group_rates(rates):
        start = x
        for kind, label, rate in members:
            h = bar_height(rate)
            (rect,) = ax.bar(x, h, width=BAR_WIDTH, color=PALETTE.get(kind, DEFAULT_COLOUR))
            rect.set_gid(f"bar-{label}")
            ax.annotate(
                f"{rate * 100:.0f}%",
                (x, h),
                xytext=(0, 2),
                textcoords="offset points",
                ha="center",
                fontsize=8,
            )
            bars[label] = rect
            x += BAR_WIDTH + BAR_GAP
        ticks.append((start + x - BAR_WIDTH - BAR_GAP) / 2)
        tick_labels.append(group)
        x += GROUP_GAP

    ax.set_xticks(ticks)
    ax.set_xticklabels(tick_labels)
    ax.set_ylim(0, FULL_SCALE * 1.1)
    ax.set_ylabel("Success rate (%)")
    ax.set_title("Success rates")
    kinds = sorted({label.partition("-")[0] for label in rates})
    if kinds:
        ax.legend(
            handles=[Patch(color=PALETTE.get(k, DEFAULT_COLOUR), label=k) for k in kinds],
            loc="upper left",
            fontsize=8,
        )
    fig.tight_layout()
    return fig, bars


def render_svg(rates: Dict[str, float]) -> str:
    """SVG text of :func:`build_chart`; identical rates give identical bytes."""
    fig, _ = build_chart(rates)
    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


# ------------------------------------------------------------------
# Comparison panel
# ------------------------------------------------------------------


def _scatterer_markers(ax, result: AttackResult) -> None:
    for theta, on_target in zip(result.thetas, result.on_target):
        ax.plot(
            theta.y,
            theta.x,
            marker="o" if on_target else "x",
            markersize=6,
            markerfacecolor="none",
            color=ON_TARGET_COLOUR if on_target else OFF_TARGET_COLOUR,
        )


def build_panel(
    image: np.ndarray, mask: TargetMask, otsa: AttackResult, baseline: AttackResult
) -> Figure:
    """Clean image, target region, then each perturbed image with its scatterers.

    Scatterers that end on the target are drawn as circles, the others as
    crosses. Perturbed images share the clean image's colour scale.
    """
    image = np.asarray(image, dtype=np.float64)
    fig = Figure(figsize=PANEL_FIGSIZE)
    axes = fig.subplots(1, 4)
    vmax = max(float(image.max()), 1e-12)
    axes[0].imshow(image, cmap="gray", vmin=0.0, vmax=vmax)
    axes[0].set_title(f"Clean (label {otsa.label})", fontsize=9)
    axes[1].imshow(mask.to_array(), cmap="gray", vmin=0, vmax=1)
    axes[1].set_title(f"Target ({len(mask)} px)", fontsize=9)
    for ax, result in zip(axes[2:], (otsa, baseline)):
        ax.imshow(result.adversarial, cmap="gray", vmin=0.0, vmax=vmax)
        ax.contour(mask.to_array().astype(float), levels=[0.5], colors=[MASK_COLOUR], linewidths=0.6)
        _scatterer_markers(ax, result)
        verdict = "success" if result.success else "failure"
        ax.set_title(f"{result.kind}: {result.predicted_label} ({verdict})", fontsize=9)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    return fig


def write_panel(
    image: np.ndarray,
    mask: TargetMask,
    otsa: AttackResult,
    baseline: AttackResult,
    path: PathLike,
) -> Path:
    """Save :func:`build_panel` as SVG; the same inputs give the same bytes."""
    path = Path(path)
    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        build_panel(image, mask, otsa, baseline).savefig(buffer, format="svg", metadata={"Date": None})
    _write(path, buffer.getvalue())
    return path
