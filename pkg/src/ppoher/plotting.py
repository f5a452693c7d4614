"""Dependency-free SVG line charts: median success line over an IQR band."""
from __future__ import annotations

import json
import re
from pathlib import Path

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 20, 36, 48
X_KEYS = {"timesteps": "timestep", "wall_clock": "wall_clock_seconds"}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", label)


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(label: str, points: list, x_mode: str = "timesteps") -> str:
    if x_mode not in X_KEYS:
        raise ValueError(f"x_mode must be one of {sorted(X_KEYS)}")
    if not points:
        raise ValueError(f"condition {label!r} has no points to plot")
    key = X_KEYS[x_mode]
    xs = [float(p[key]) for p in points]
    x_max = max(xs) or 1.0
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + plot_w * x / x_max

    def sy(y):
        return MARGIN_T + plot_h * (1.0 - y)

    median = " ".join(
        f"{'M' if i == 0 else 'L'}{_fmt(sx(x))},{_fmt(sy(p['success_median']))}"
        for i, (x, p) in enumerate(zip(xs, points))
    )
    upper = [f"{_fmt(sx(x))},{_fmt(sy(p['success_q75']))}" for x, p in zip(xs, points)]
    lower = [f"{_fmt(sx(x))},{_fmt(sy(p['success_q25']))}" for x, p in zip(xs, points)]
    band = " ".join(upper + lower[::-1])

    x_title = "timesteps" if x_mode == "timesteps" else "wall clock (s)"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{_esc(label)}</text>',
        f'<line class="axis" x1="{MARGIN_L}" y1="{_fmt(sy(0))}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{_fmt(sy(0))}" stroke="black"/>',
        f'<line class="axis" x1="{MARGIN_L}" y1="{_fmt(sy(0))}" x2="{MARGIN_L}" '
        f'y2="{_fmt(sy(1))}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{MARGIN_L - 6}" y="{_fmt(sy(tick) + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{tick:g}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{_fmt(sx(frac * x_max))}" y="{HEIGHT - MARGIN_B + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{frac * x_max:.4g}</text>'
        )
    parts += [
        f'<text x="{MARGIN_L + plot_w / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_title}</text>',
        f'<polygon class="iqr" points="{band}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>',
        f'<path class="median" d="{median}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def plot(summary, output, x_mode: str = "timesteps") -> list[Path]:
    """Write one SVG per condition of ``summary`` (a dict or a summary.json path) into ``output``."""
    if not isinstance(summary, dict):
        summary = json.loads(Path(summary).read_text())
    conditions = summary.get("conditions") or {}
    if not conditions:
        raise ValueError("summary has no conditions to plot")
    out_dir = Path(output)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for label in sorted(conditions):
        path = out_dir / f"{_safe_name(label)}__{x_mode}.svg"
        path.write_text(render_svg(label, conditions[label]["points"], x_mode), encoding="utf-8")
        written.append(path)
    return written
