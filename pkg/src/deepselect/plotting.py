"""Dependency-free SVG charts and PGM contact sheets."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 300
MARGIN = 40


class PlotError(ValueError):
    pass


def read_loss_log(path) -> list[tuple[int, float]]:
    rows = _read_rows(path)
    if not rows or rows[0][:2] != ["epoch", "loss"]:
        raise PlotError(f"{path}: expected header 'epoch,loss'")
    try:
        data = [(int(r[0]), float(r[1])) for r in rows[1:] if r]
    except (ValueError, IndexError) as exc:
        raise PlotError(f"{path}: malformed loss row ({exc})") from None
    if not data:
        raise PlotError(f"{path}: loss log has no rows")
    return data


def read_scene_dice(path) -> dict[str, float]:
    rows = _read_rows(path)
    if not rows or rows[0][:4] != ["level", "scene", "sequence", "dice"]:
        raise PlotError(f"{path}: expected an evaluation report header")
    out = {}
    try:
        for r in rows[1:]:
            if r and r[0] == "scene":
                out[f"S{r[1]}"] = float(r[3])
            elif r and r[0] == "overall":
                out["Average"] = float(r[3])
    except (ValueError, IndexError) as exc:
        raise PlotError(f"{path}: malformed report row ({exc})") from None
    if not out:
        raise PlotError(f"{path}: report has no scene rows")
    return out


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            return list(csv.reader(fh))
    except FileNotFoundError:
        raise PlotError(f"missing input: {path}") from None


def _svg(body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    return "\n".join(
        [head, f'<title>{escape(title)}</title>', f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
        + body
        + ["</svg>", ""]
    )


def loss_curve_svg(loss_log) -> str:
    if not loss_log:
        raise PlotError("empty loss log")
    epochs = np.array([e for e, _ in loss_log], dtype=float)
    losses = np.array([v for _, v in loss_log], dtype=float)
    x0, x1 = MARGIN, WIDTH - MARGIN
    y0, y1 = HEIGHT - MARGIN, MARGIN
    ex = (epochs - epochs.min()) / (np.ptp(epochs) or 1.0)
    top = losses.max() or 1.0
    pts = " ".join(f"{x0 + e * (x1 - x0):.2f},{y0 - v / top * (y0 - y1):.2f}" for e, v in zip(ex, losses))
    body = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="{x0}" y="{y1 - 8}" font-size="12">loss (max {top:.4g})</text>',
    ]
    return _svg(body, "training loss")


def dice_bars_svg(scene_dice: dict[str, float]) -> str:
    """One bar per scene; bar height is dice times the plot height."""
    if not scene_dice:
        raise PlotError("no dice values to plot")
    x0, y0 = MARGIN, HEIGHT - MARGIN
    plot_h = HEIGHT - 2 * MARGIN
    slot = (WIDTH - 2 * MARGIN) / len(scene_dice)
    body = [f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN}" y2="{y0}" stroke="black"/>']
    for i, (name, d) in enumerate(scene_dice.items()):
        h = max(0.0, min(1.0, d)) * plot_h
        x = x0 + i * slot + slot * 0.15
        body.append(
            f'<rect class="bar" data-label="{escape(name)}" x="{x:.2f}" y="{y0 - h:.2f}" '
            f'width="{slot * 0.7:.2f}" height="{h:.2f}" fill="seagreen"/>'
        )
        body.append(f'<text x="{x + slot * 0.35:.2f}" y="{y0 + 14}" text-anchor="middle" font-size="11">{escape(name)}</text>')
        body.append(f'<text x="{x + slot * 0.35:.2f}" y="{y0 - h - 4:.2f}" text-anchor="middle" font-size="10">{d:.2f}</text>')
    return _svg(body, "dice by scene")


def plot(in_path, out_dir) -> list[Path]:
    """Write the chart matching the CSV at ``in_path`` (loss log or evaluation report)."""
    out_dir = Path(out_dir)
    rows = _read_rows(in_path)
    if not rows:
        raise PlotError(f"{in_path}: empty file")
    out_dir.mkdir(parents=True, exist_ok=True)
    if rows[0][:2] == ["epoch", "loss"]:
        target = out_dir / "loss_curve.svg"
        target.write_text(loss_curve_svg(read_loss_log(in_path)))
    elif rows[0][:1] == ["level"]:
        target = out_dir / "dice_by_scene.svg"
        target.write_text(dice_bars_svg(read_scene_dice(in_path)))
    else:
        raise PlotError(f"{in_path}: unrecognized CSV header {rows[0]}")
    return [target]


def contact_sheet(frames, pred_labels, gt_labels, every: int = 10, border: int = 2) -> np.ndarray:
    """Grid image: columns are sampled time steps, rows are cameras.

    The predicted camera gets a white frame, the ground-truth camera a black
    inner frame; a correct prediction shows both.
    """
    frames = np.asarray(frames)
    steps, N, _, H, W = frames.shape
    ts = list(range(0, steps, max(1, every)))
    cell_h, cell_w = H + 4 * border, W + 4 * border
    sheet = np.full((N * cell_h, len(ts) * cell_w), 128, dtype=np.uint8)
    for j, t in enumerate(ts):
        for n in range(N):
            y, x = n * cell_h, j * cell_w
            cell = sheet[y:y + cell_h, x:x + cell_w]
            if pred_labels[t] == n:
                cell[:] = 255
            inner = cell[border:cell_h - border, border:cell_w - border]
            if gt_labels[t] == n:
                inner[:] = 0
            inner[border:border + H, border:border + W] = frames[t, n, 0]
    return sheet
