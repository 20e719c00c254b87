"""Overhead-view SVG plots of trajectories: target condition, leader root
path, follower root path as three distinct strokes. Built with ElementTree
so the output is always well-formed XML."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

_SVG_NS = "http://www.w3.org/2000/svg"

_LAYERS = (
    ("target", "#888888", "6 4"),
    ("leader", "#1f6fd6", None),
    ("follower", "#d67a1f", None),
)


def _bounds(paths) -> tuple[float, float, float, float]:
    pts = np.concatenate([np.asarray(p, dtype=float) for p in paths if p is not None])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    pad = 0.08 * span.max()
    return lo[0] - pad, lo[1] - pad, hi[0] + pad, hi[1] + pad


def write_trajectory_svg(
    path,
    target: np.ndarray | None,
    leader: np.ndarray,
    follower: np.ndarray,
    size: int = 480,
) -> None:
    """Render the ground plane (x right, z up) with the three path layers;
    `target` may be None when a run was unguided."""
    paths = {"target": target, "leader": leader, "follower": follower}
    x0, z0, x1, z1 = _bounds(paths.values())
    scale = size / max(x1 - x0, z1 - z0)

    def pixel(p):
        return (p[0] - x0) * scale, (z1 - p[1]) * scale

    width = (x1 - x0) * scale
    height = (z1 - z0) * scale
    ET.register_namespace("", _SVG_NS)
    svg = ET.Element(
        f"{{{_SVG_NS}}}svg",
        {"width": f"{width:.1f}", "height": f"{height:.1f}",
         "viewBox": f"0 0 {width:.1f} {height:.1f}"},
    )
    ET.SubElement(
        svg, f"{{{_SVG_NS}}}rect",
        {"x": "0", "y": "0", "width": f"{width:.1f}", "height": f"{height:.1f}",
         "fill": "#fcfcfa", "stroke": "#cccccc"},
    )
    legend_y = 18.0
    for name, color, dash in _LAYERS:
        pts = paths[name]
        if pts is None:
            continue
        attrs = {
            "class": name,
            "fill": "none",
            "stroke": color,
            "stroke-width": "2",
            "points": " ".join(f"{px:.2f},{pz:.2f}" for px, pz in map(pixel, np.asarray(pts))),
        }
        if dash:
            attrs["stroke-dasharray"] = dash
        ET.SubElement(svg, f"{{{_SVG_NS}}}polyline", attrs)
        start = pixel(np.asarray(pts)[0])
        ET.SubElement(
            svg, f"{{{_SVG_NS}}}circle",
            {"cx": f"{start[0]:.2f}", "cy": f"{start[1]:.2f}", "r": "3.5", "fill": color},
        )
        label = ET.SubElement(
            svg, f"{{{_SVG_NS}}}text",
            {"x": "10", "y": f"{legend_y:.1f}", "fill": color, "font-size": "12",
             "font-family": "sans-serif"},
        )
        label.text = name
        legend_y += 16.0
    Path(path).write_bytes(ET.tostring(svg, xml_declaration=True, encoding="utf-8"))
