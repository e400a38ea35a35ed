"""CSV, JSON and SVG writers for run artifacts."""
import csv
import json
import os
import platform
import subprocess

import numpy as np

SAMPLES = 512


def fmt(v):
    """Deterministic text for numbers (round-trip precision)."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def curve_rows(curves, m=SAMPLES):
    """Rows (kind, curve, index, x, y) with control points and a dense sample."""
    rows = []
    for k, c in enumerate(curves):
        for i, p in enumerate(c.points):
            rows.append(("control", k, i, p[0], p[1]))
        for i, p in enumerate(c.sample(m)):
            rows.append(("sample", k, i, p[0], p[1]))
    return rows


CURVE_HEADER = ["kind", "curve", "index", "x", "y"]


def write_curves(path, curves):
    write_csv(path, CURVE_HEADER, curve_rows(curves))


def read_curve_csv(path):
    """Control points per curve from a curve CSV."""
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "control":
                out.setdefault(int(row["curve"]), []).append((float(row["x"]), float(row["y"])))
    return [np.array(out[k]) for k in sorted(out)]


def code_version():
    from . import __version__
    rev = None
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        rev = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5).stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        pass
    return {"package": __version__, "git": rev, "python": platform.python_version(),
            "numpy": np.__version__}


def write_manifest(path, config, extra=None):
    data = {"config": config, "version": code_version()}
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


# ------------------------------------------------------------------ SVG
def svg_curves(path, snapshots, target=None, size=480):
    """Overlay of polylines on the square (-1, 1)^2.

    snapshots : list of lists of (m, 2) polylines (one list per iterate);
    later snapshots are drawn darker.  target : list of polylines, dashed.
    """
    def tr(P):
        P = np.asarray(P)
        xs = (P[:, 0] + 1) * 0.5 * size
        ys = (1 - P[:, 1]) * 0.5 * size
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))

    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="black"/>']
    n = len(snapshots)
    for k, polys in enumerate(snapshots):
        shade = int(200 - 200 * (k + 1) / max(n, 1))
        color = f"rgb({shade},{shade},255)"
        width = 2.0 if k == n - 1 else 1.0
        for P in polys:
            lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{tr(P)}"/>')
    for P in target or []:
        lines.append(f'<polyline fill="none" stroke="red" stroke-width="1.5" '
                     f'stroke-dasharray="6,4" points="{tr(P)}"/>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
