"""Small hand-written SVG figures: trajectories, policy summaries and PR curves."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

POLICY_ORDER = ("random", "random-ba", "downward", "frozen", "proportional", "ddpg", "hybrid")

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class _Svg:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.items = []

    def add(self, s):
        self.items.append(s)

    def line(self, x0, y0, x1, y1, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="{stroke}" stroke-width="{width}"{d}/>')

    def polyline(self, pts, stroke="#000", width=1.5):
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        self.add(f'<polyline points="{path}" fill="none" stroke="{stroke}" stroke-width="{width}"/>')

    def circle(self, cx, cy, r, fill="none", stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="{fill}" stroke="{stroke}" stroke-width="{width}"{d}/>')

    def rect(self, x, y, w, h, fill="#888", cls=None, value=None):
        extra = (f' class="{cls}"' if cls else "") + (f' data-value="{value!r}"' if value is not None else "")
        self.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}"{extra}/>')

    def text(self, x, y, s, size=11, anchor="start"):
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{escape(str(s))}</text>')

    def render(self):
        head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" viewBox="0 0 {self.width} {self.height}">'
        return "\n".join([head, f'<rect width="{self.width}" height="{self.height}" fill="white"/>', *self.items, "</svg>"]) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def _star(cx, cy, r):
    pts = []
    for k in range(10):
        rad = r if k % 2 == 0 else r * 0.45
        a = -math.pi / 2 + k * math.pi / 5
        pts.append(f"{cx + rad * math.cos(a):.2f},{cy + rad * math.sin(a):.2f}")
    return " ".join(pts)


def plot_trajectory(record, scene=None, path=None, workspace=None, plant_radius=0.15, radius=0.5, size=420):
    """Top-down view of one episode: page radius is sin(phi).

    Each step gets one marker at the pose it reached: a blue star where it
    earned the detection reward, a yellow circle where the reward was
    negative. The plant footprint (and its berries, if ``scene`` is given)
    is drawn at the same scale; dashed circles are the workspace limits.
    """
    svg = _Svg(size, size + 40)
    c = size / 2.0
    scale = size * 0.42

    def xy(theta, phi):
        r = math.sin(phi) * scale
        return c + r * math.cos(theta), c - r * math.sin(theta)

    svg.circle(c, c, scale, stroke="#ccc")
    if workspace is not None:
        for phi in (workspace.phi_min, workspace.phi_max):
            svg.circle(c, c, math.sin(phi) * scale, stroke="#999", dash="4,3")
    svg.circle(c, c, plant_radius / radius * scale, fill="#e8f3e0", stroke="#6a9955")
    if scene is not None:
        for b in scene.berries:
            bx, by = c + b.center[0] / radius * scale, c - b.center[1] / radius * scale
            svg.circle(bx, by, max(b.radius / radius * scale, 1.5), fill="#c0392b" if b.ripe else "#9acd32", stroke="none")
    pts = [xy(t, p) for t, p in record.poses]
    if len(pts) >= 2:
        svg.polyline(pts, stroke="#555", width=1.2)
    for (x, y), r in zip(pts, record.rewards):
        if r == record.r_detect:
            svg.add(f'<polygon class="detect" points="{_star(x, y, 6)}" fill="#1f4fd8" stroke="none"/>')
        elif r < 0:
            svg.add(f'<circle class="negative" cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="#f2c200" stroke="#8a6d00" stroke-width="0.6"/>')
    base = size + 8
    svg.add(f'<polygon points="{_star(14, base + 6, 5)}" fill="#1f4fd8" stroke="none"/>')
    svg.text(24, base + 10, "detection reward", 10)
    svg.circle(130, base + 6, 3.5, fill="#f2c200", stroke="#8a6d00", width=0.6)
    svg.text(138, base + 10, "negative reward", 10)
    detects = sum(1 for r in record.rewards if r == record.r_detect)
    svg.text(8, base + 26, f"plant {record.plant_seed}: {record.length} steps, {detects} rewarded, return {record.discounted_return:.2f}", 10)
    if path:
        svg.save(path)
    return svg.render()


def trajectories_svg(records, path=None, workspace=None, size=420):
    """Several camera paths on one top-down plot, one color each."""
    svg = _Svg(size, size)
    c = size / 2.0
    scale = size * 0.45

    def xy(theta, phi):
        r = math.sin(phi) * scale
        return c + r * math.cos(theta), c - r * math.sin(theta)

    if workspace is not None:
        for phi in (workspace.phi_min, workspace.phi_max):
            svg.circle(c, c, math.sin(phi) * scale, stroke="#999", dash="4,3")
    svg.circle(c, c, scale, stroke="#ccc")
    for k, rec in enumerate(records):
        color = _PALETTE[k % len(_PALETTE)]
        pts = [xy(*rec.start_pose)] + [xy(t, p) for t, p in rec.poses]
        svg.polyline(pts, stroke=color)
        svg.circle(*pts[0], 4, stroke=color, width=1.5)
    svg.text(8, 16, "camera paths (top view); rings mark the spawn pose")
    if path:
        svg.save(path)
    return svg.render()


def _ordered(summaries):
    rank = {name: i for i, name in enumerate(POLICY_ORDER)}
    return sorted(summaries, key=lambda s: rank.get(s.policy, len(rank)))


_ERRORS = {"mean_return": "return_stderr", "mean_first_reward": "first_reward_stderr"}


def summary_bars_svg(summaries, path=None, metric="mean_return", title=None, width=520, height=320):
    """One bar per policy in baseline order, with standard-error whiskers.

    ``None`` values (a policy that was never rewarded has no mean step
    count) draw no bar. Each bar carries its exact value in ``data-value``.
    """
    err_attr = _ERRORS.get(metric)
    items = []
    for s in _ordered(summaries):
        err = getattr(s, err_attr, None) if err_attr else None
        items.append((s.policy, getattr(s, metric), err or 0.0))
    svg = _Svg(width, height)
    left, bottom, top = 50, height - 50, 30
    lows = [v - e for _, v, e in items if v is not None] or [0.0]
    highs = [v + e for _, v, e in items if v is not None] or [0.0]
    lo, hi = min(0.0, min(lows)), max(0.0, max(highs))
    if hi == lo:
        hi = lo + 1.0
    span = hi - lo

    def y(v):
        return bottom - (v - lo) / span * (bottom - top)

    svg.line(left, y(0.0), width - 10, y(0.0))
    svg.line(left, top, left, bottom)
    svg.text(left - 6, y(hi) + 4, f"{hi:.1f}", 10, "end")
    svg.text(left - 6, y(lo) + 4, f"{lo:.1f}", 10, "end")
    slot = (width - left - 20) / max(len(items), 1)
    for i, (name, v, err) in enumerate(items):
        x = left + 10 + i * slot
        mid = x + slot * 0.35
        if v is not None:
            y0, y1 = sorted((y(0.0), y(v)))
            svg.rect(x, y0, slot * 0.7, max(y1 - y0, 0.5), _PALETTE[i % len(_PALETTE)], "bar", v)
            if err > 0:
                svg.line(mid, y(v - err), mid, y(v + err), width=1.2)
                svg.line(mid - 4, y(v + err), mid + 4, y(v + err), width=1.2)
                svg.line(mid - 4, y(v - err), mid + 4, y(v - err), width=1.2)
            svg.text(mid, min(y(v + err), y(v - err), y0) - 4, f"{v:.1f}", 10, "middle")
        svg.text(mid, bottom + 16, name, 10, "middle")
    svg.text(width / 2, 18, title or metric.replace("_", " "), 12, "middle")
    if path:
        svg.save(path)
    return svg.render()


def pr_svg(rows, path=None, width=420, height=380):
    """One recall-precision polyline per IOU threshold."""
    svg = _Svg(width, height)
    left, right, top, bottom = 50, width - 90, 20, height - 40

    def xy(recall, precision):
        return left + recall * (right - left), bottom - precision * (bottom - top)

    svg.line(left, bottom, right, bottom)
    svg.line(left, top, left, bottom)
    svg.text((left + right) / 2, height - 10, "recall", 11, "middle")
    svg.text(12, (top + bottom) / 2, "precision", 11, "middle")
    by_iou = {}
    for r in rows:
        by_iou.setdefault(r.iou_thresh, []).append(r)
    for k, (iou, pts) in enumerate(sorted(by_iou.items())):
        pts = sorted(pts, key=lambda r: r.conf_thresh)
        color = _PALETTE[k % len(_PALETTE)]
        svg.polyline([xy(r.recall, r.precision) for r in pts], stroke=color)
        svg.text(right + 8, top + 14 * (k + 1), f"IOU {iou:.1f}", 10)
        svg.line(right + 60, top + 14 * (k + 1) - 4, right + 80, top + 14 * (k + 1) - 4, stroke=color, width=2)
    if path:
        svg.save(path)
    return svg.render()
