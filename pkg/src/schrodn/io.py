"""Serialization of fields, ray data and DN matrices, plus plain SVG plots.

Text formats start with ``#`` header lines (format tag, shape, metric and the
config fingerprint) followed by CSV rows.  Floats are written with 17
significant digits, so repeated runs give byte-identical files.

DN matrix binary layout (little-endian)::

    b"SDNM"            4 bytes magic
    uint32             format version (1)
    uint32             header length n
    n bytes            UTF-8 JSON header, sorted keys: meta, fingerprint and
                       the shapes of "matrix", "gram_in", "gram_out"
    complex128 arrays  matrix, gram_in, gram_out in C order
"""

import csv
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from . import calculus as tc
from .geometry import metric_from_preset, sample_inflow_bundle

FIELD_TAG = "schrodn-field v1"
RAY_TAG = "schrodn-raydata v1"
DN_MAGIC = b"SDNM"
DN_VERSION = 1


def _fmt(x):
    return format(float(x), ".17g")


def _header(lines):
    return "".join(f"# {line}\n" for line in lines)


def _read_header(path):
    meta, rows = {}, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, val = line[2:].partition("=")
            meta[key.strip()] = val.strip()
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows


# -- fields --------------------------------------------------------------------------


def _field_kind(f):
    if isinstance(f, tc.ScalarField):
        return "scalar"
    if isinstance(f, tc.VectorField):
        return "vector"
    return "covector"


def write_field(path, f, fingerprint=""):
    """Write a grid field as CSV: ``i, j, r, theta`` and real/imag parts per component."""
    grid = f.grid
    kind = _field_kind(f)
    comps = [f.values] if kind == "scalar" else [f.components[0], f.components[1]]
    head = [FIELD_TAG, f"kind={kind}", f"n_r={grid.n_r}", f"n_theta={grid.n_theta}",
            f"radius={_fmt(grid.radius)}", f"metric={grid.metric.name}",
            f"metric_params={json.dumps(grid.metric.params, sort_keys=True)}",
            f"fingerprint={fingerprint}"]
    cols = ["i", "j", "r", "theta"]
    for c in range(len(comps)):
        cols += [f"c{c}_re", f"c{c}_im"]
    buf = _io.StringIO()
    buf.write(_header(head))
    buf.write(",".join(cols) + "\n")
    for i in range(grid.n_r):
        for j in range(grid.n_theta):
            row = [str(i), str(j), _fmt(grid.r[i]), _fmt(grid.theta[j])]
            for c in comps:
                row += [_fmt(c[i, j].real), _fmt(c[i, j].imag)]
            buf.write(",".join(row) + "\n")
    Path(path).write_text(buf.getvalue())


def read_field(path, metric=None):
    """Read a field written by :func:`write_field`; the grid is rebuilt from the header."""
    meta, rows = _read_header(path)
    if FIELD_TAG not in meta:
        raise ValueError(f"{path}: not a field file")
    if metric is None:
        metric = metric_from_preset(meta["metric"], json.loads(meta["metric_params"]))
    grid = tc.PolarGrid(int(meta["n_r"]), int(meta["n_theta"]), metric,
                        radius=float(meta["radius"]))
    data = np.array([[float(v) for v in r[4:]] for r in rows[1:]])
    vals = data[:, 0::2] + 1j * data[:, 1::2]
    if meta["kind"] == "scalar":
        return tc.ScalarField(grid, vals[:, 0].reshape(grid.shape))
    cls = tc.VectorField if meta["kind"] == "vector" else tc.CovectorField
    return cls(grid, vals.T.reshape(2, *grid.shape))


# -- ray data ------------------------------------------------------------------------


def write_raydata(path, d, metric_name="", fingerprint=""):
    """CSV with columns ``s, alpha, re, im, mu, weight`` in bundle order."""
    b = d.bundle
    n_s, n_a = b.shape
    head = [RAY_TAG, f"n_s={n_s}", f"n_alpha={n_a}", f"radius={_fmt(b.radius)}",
            f"metric={metric_name}", f"fingerprint={fingerprint}"]
    buf = _io.StringIO()
    buf.write(_header(head))
    buf.write("s,alpha,re,im,mu,weight\n")
    for k in range(len(b)):
        v = d.values[k]
        buf.write(",".join([_fmt(b.s[k // n_a]), _fmt(b.alpha[k % n_a]), _fmt(v.real),
                            _fmt(v.imag), _fmt(b.mu[k]), _fmt(b.weight[k])]) + "\n")
    Path(path).write_text(buf.getvalue())


def read_raydata(path, metric):
    """Read ray data; the bundle is regenerated from ``metric`` and the header."""
    from .raytransform import RayData
    meta, rows = _read_header(path)
    if RAY_TAG not in meta:
        raise ValueError(f"{path}: not a ray-data file")
    bundle = sample_inflow_bundle(metric, int(meta["n_s"]), int(meta["n_alpha"]),
                                  radius=float(meta["radius"]))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return RayData(bundle, data[:, 2] + 1j * data[:, 3])


# -- DN matrices ---------------------------------------------------------------------


def write_dn_matrix(path, D, fingerprint=""):
    arrays = {k: np.ascontiguousarray(getattr(D, k), dtype="<c16")
              for k in ("matrix", "gram_in", "gram_out")}
    header = {"meta": D.meta, "fingerprint": fingerprint,
              "shapes": {k: list(a.shape) for k, a in arrays.items()}}
    hb = json.dumps(header, sort_keys=True, default=float).encode()
    with open(path, "wb") as fh:
        fh.write(DN_MAGIC + struct.pack("<II", DN_VERSION, len(hb)) + hb)
        for k in ("matrix", "gram_in", "gram_out"):
            fh.write(arrays[k].tobytes())


def read_dn_matrix(path):
    from .schrodinger import DNMatrix
    raw = Path(path).read_bytes()
    if raw[:4] != DN_MAGIC:
        raise ValueError(f"{path}: not a DN matrix file")
    version, n = struct.unpack("<II", raw[4:12])
    if version != DN_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    header = json.loads(raw[12:12 + n])
    off = 12 + n
    out = {}
    for k in ("matrix", "gram_in", "gram_out"):
        shape = tuple(header["shapes"][k])
        cnt = int(np.prod(shape))
        out[k] = np.frombuffer(raw, dtype="<c16", count=cnt, offset=off).reshape(shape).copy()
        off += 16 * cnt
    D = DNMatrix(out["matrix"], out["gram_in"].real.copy() if not np.any(out["gram_in"].imag)
                 else out["gram_in"], out["gram_out"].real.copy()
                 if not np.any(out["gram_out"].imag) else out["gram_out"], header["meta"])
    return D, header.get("fingerprint", "")


def dn_file_difference(path_a, path_b):
    """Operator norm of the difference of two stored DN matrices."""
    from .schrodinger import dn_operator_norm
    Da, _ = read_dn_matrix(path_a)
    Db, _ = read_dn_matrix(path_b)
    return dn_operator_norm(Da - Db)[0]


# -- SVG -----------------------------------------------------------------------------


def _svg(width, height, body, fingerprint):
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<!-- fingerprint {fingerprint} -->\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n{body}</svg>\n')


def _ticks(lo, hi):
    return list(range(int(np.floor(lo)), int(np.ceil(hi)) + 1))


def loglog_svg(path, x, y, title="", xlabel="", ylabel="", slope=None, fingerprint=""):
    """Log-log scatter with a least-squares line when ``slope`` is given."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    lx, ly = np.log10(x[keep]), np.log10(y[keep])
    W, H, m = 480, 360, 60
    if len(lx) == 0:
        Path(path).write_text(_svg(W, H, f'<text x="{m}" y="{m}">no data</text>\n',
                                   fingerprint))
        return
    x0, x1 = np.floor(lx.min()), np.ceil(lx.max()) + (lx.min() == lx.max())
    y0, y1 = np.floor(ly.min()), np.ceil(ly.max()) + (ly.min() == ly.max())

    def px(v):
        return m + (v - x0) / (x1 - x0) * (W - 2 * m)

    def py(v):
        return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

    parts = [f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" '
             f'stroke="black"/>']
    for t in _ticks(x0, x1):
        parts.append(f'<text x="{px(t):.2f}" y="{H - m + 18}" font-size="11" '
                     f'text-anchor="middle">1e{t}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<text x="{m - 6}" y="{py(t) + 4:.2f}" font-size="11" '
                     f'text-anchor="end">1e{t}</text>')
    for a, b in zip(lx, ly):
        parts.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="steelblue"/>')
    if slope is not None and np.isfinite(slope) and len(lx) > 1:
        c = np.mean(ly) - slope * np.mean(lx)
        xa, xb = lx.min(), lx.max()
        parts.append(f'<line x1="{px(xa):.2f}" y1="{py(slope * xa + c):.2f}" '
                     f'x2="{px(xb):.2f}" y2="{py(slope * xb + c):.2f}" stroke="firebrick"/>')
        title = f"{title} (slope {slope:.3f})"
    parts.append(f'<text x="{W / 2}" y="{m / 2}" font-size="13" text-anchor="middle">'
                 f'{title}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 15}" font-size="12" text-anchor="middle">'
                 f'{xlabel}</text>')
    parts.append(f'<text x="15" y="{H / 2}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 15 {H / 2})">{ylabel}</text>')
    Path(path).write_text(_svg(W, H, "\n".join(parts) + "\n", fingerprint))


def heatmap_svg(path, values, title="", xlabel="", ylabel="", fingerprint=""):
    """Grayscale heatmap of a 2-D real array (rows drawn top to bottom)."""
    v = np.asarray(values, float)
    n0, n1 = v.shape
    W, H, m = 480, 400, 50
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    cw, ch = (W - 2 * m) / n1, (H - 2 * m) / n0
    parts = []
    for i in range(n0):
        for j in range(n1):
            g = int(round(255 * (1 - (v[i, j] - lo) / span)))
            parts.append(f'<rect x="{m + j * cw:.2f}" y="{m + i * ch:.2f}" width="{cw:.2f}" '
                         f'height="{ch:.2f}" fill="rgb({g},{g},{g})"/>')
    parts.append(f'<text x="{W / 2}" y="{m / 2}" font-size="13" text-anchor="middle">'
                 f'{title} [{lo:.3g}, {hi:.3g}]</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 15}" font-size="12" text-anchor="middle">'
                 f'{xlabel}</text>')
    parts.append(f'<text x="15" y="{H / 2}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 15 {H / 2})">{ylabel}</text>')
    Path(path).write_text(_svg(W, H, "\n".join(parts) + "\n", fingerprint))


def write_csv(path, columns, rows, fingerprint="", extra_header=()):
    """Plain CSV with a fingerprint header; numbers use 17 significant digits."""
    buf = _io.StringIO()
    buf.write(_header([f"fingerprint={fingerprint}", *extra_header]))
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) if isinstance(v, (float, np.floating, int, np.integer))
                           and not isinstance(v, bool) else str(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue())
