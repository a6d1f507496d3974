"""Tactile image processing: depth, moments, optical flow, flow entropy.

The simulated gel produces depth maps directly, but the full sensing path a
real sensor would need is implemented and tested here:

* ``depth_from_gradients``: Poisson integration of a surface-gradient field
  (red-black Gauss-Seidel, zero boundary).
* ``moments_features``: raw image moments -> contact centroid and total
  depth mass, the (mu, Sigma) part of the tactile observation.
* ``lucas_kanade``: windowed optical flow between two frames.
* ``flow_entropy``: Shannon entropy (nats) of the flow components over a
  fixed clamped histogram; the screw task's reward is the negative entropy
  of the downward component.

Depth units are millimetres throughout; image coordinates are (x = column,
y = row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FLOW_OK = 0
FLOW_BORDER = 1
FLOW_DEGENERATE = 2

_EIGEN_MIN = 1e-4
_PGM_MAXVAL = 65535


class UnusableFlowError(ValueError):
    """No valid flow vectors: the frame pair carries no usable motion signal."""


@dataclass
class PoissonResult:
    depth: np.ndarray
    residual: float
    converged: bool
    iterations: int


@dataclass
class MomentFeatures:
    """Contact centroid (pixels) and total depth mass of a tactile image."""

    cx: float
    cy: float
    total: float


@dataclass
class FlowField:
    """Sparse optical flow: (x, y) sample points, (dx, dy) vectors, status codes."""

    points: np.ndarray
    vectors: np.ndarray
    status: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.status == FLOW_OK


def _check_depth(depth: np.ndarray) -> np.ndarray:
    d = np.asarray(depth, dtype=float)
    if d.ndim != 2 or d.shape[0] < 2 or d.shape[1] < 2:
        raise ValueError(f"depth grid must be 2-D and at least 2x2, got {d.shape}")
    if (d < -1e-12).any():
        raise ValueError("depth values must be non-negative")
    return np.maximum(d, 0.0)


def depth_from_gradients(
    gx: np.ndarray,
    gy: np.ndarray,
    tol: float = 1e-6,
    max_iters: int = 20000,
) -> PoissonResult:
    """Integrate a gradient field into a depth map via the Poisson equation.

    Solves lap(z) = div(g) with zero-Dirichlet boundary using red-black
    Gauss-Seidel sweeps until the max-norm residual drops to ``tol`` (or
    ``max_iters`` sweeps, reported via ``converged``). The solution is then
    sign-fixed (indentation positive) and shifted so its minimum is zero;
    the reported residual refers to the raw solve, whose Laplacian the
    shift does not change.
    """
    gx = np.asarray(gx, dtype=float)
    gy = np.asarray(gy, dtype=float)
    if gx.shape != gy.shape or gx.ndim != 2:
        raise ValueError(f"gradient components must share a 2-D shape, got {gx.shape} vs {gy.shape}")
    h, w = gx.shape
    z = np.zeros((h, w))
    if h < 3 or w < 3:
        return PoissonResult(z, 0.0, True, 0)
    # divergence by central differences on the interior
    f = np.zeros((h, w))
    f[1:-1, 1:-1] = (gx[1:-1, 2:] - gx[1:-1, :-2]) / 2.0 + (
        gy[2:, 1:-1] - gy[:-2, 1:-1]
    ) / 2.0

    rows, cols = np.meshgrid(np.arange(1, h - 1), np.arange(1, w - 1), indexing="ij")
    red = ((rows + cols) % 2) == 0
    masks = (red, ~red)

    def sweep_color(mask: np.ndarray) -> None:
        interior = 0.25 * (
            z[:-2, 1:-1] + z[2:, 1:-1] + z[1:-1, :-2] + z[1:-1, 2:] - f[1:-1, 1:-1]
        )
        block = z[1:-1, 1:-1]
        block[mask] = interior[mask]

    def residual_now() -> float:
        lap = (
            z[:-2, 1:-1] + z[2:, 1:-1] + z[1:-1, :-2] + z[1:-1, 2:] - 4.0 * z[1:-1, 1:-1]
        )
        return float(np.abs(lap - f[1:-1, 1:-1]).max())

    iterations = 0
    residual = residual_now()
    while residual > tol and iterations < max_iters:
        for mask in masks:
            sweep_color(mask)
        iterations += 1
        residual = residual_now()
    converged = residual <= tol
    if z.max() < -z.min():
        z = -z
    z = z - z.min()
    return PoissonResult(z, residual, converged, iterations)


def moments_features(depth: np.ndarray) -> MomentFeatures:
    """Raw moments of a depth image: centroid (m10/m00, m01/m00) and mass m00.

    An all-zero image has no centroid; the geometric centre is reported with
    zero mass so downstream features stay finite.
    """
    d = _check_depth(depth)
    h, w = d.shape
    m00 = float(d.sum())
    if m00 == 0.0:
        return MomentFeatures((w - 1) / 2.0, (h - 1) / 2.0, 0.0)
    xs = np.arange(w, dtype=float)
    ys = np.arange(h, dtype=float)
    m10 = float((d * xs[None, :]).sum())
    m01 = float((d * ys[:, None]).sum())
    return MomentFeatures(m10 / m00, m01 / m00, m00)


def lucas_kanade(
    prev: np.ndarray,
    nxt: np.ndarray,
    points: np.ndarray,
    window: int = 7,
) -> FlowField:
    """Windowed Lucas-Kanade flow from ``prev`` to ``nxt`` at given points.

    Frames are grayscale in [0, 1]. Points are (x, y) pixel positions; each
    gets a (dx, dy) vector from the 2x2 least-squares solve over its window.
    Points too close to the border are flagged FLOW_BORDER; windows whose
    structure tensor has minimum eigenvalue below 1e-4 (no texture, aperture
    ambiguity) are flagged FLOW_DEGENERATE. Only FLOW_OK vectors are valid.
    """
    a = np.asarray(prev, dtype=float)
    b = np.asarray(nxt, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"frames must share a 2-D shape, got {a.shape} vs {b.shape}")
    for name, img in (("prev", a), ("next", b)):
        if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
            raise ValueError(f"{name} frame values must lie in [0, 1]")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError(f"points must be (N, 2) of (x, y), got {pts.shape}")
    h, w = a.shape
    gy_a, gx_a = np.gradient(a)
    gy_b, gx_b = np.gradient(b)
    ix = 0.5 * (gx_a + gx_b)
    iy = 0.5 * (gy_a + gy_b)
    it = b - a
    r = window // 2
    vectors = np.zeros((len(pts), 2))
    status = np.full(len(pts), FLOW_OK, dtype=int)
    for i, (px, py) in enumerate(pts):
        cx = int(round(px))
        cy = int(round(py))
        if cx - r < 0 or cy - r < 0 or cx + r >= w or cy + r >= h:
            status[i] = FLOW_BORDER
            continue
        sl = (slice(cy - r, cy + r + 1), slice(cx - r, cx + r + 1))
        wx = ix[sl].reshape(-1)
        wy = iy[sl].reshape(-1)
        wt = it[sl].reshape(-1)
        gxx = float(wx @ wx)
        gxy = float(wx @ wy)
        gyy = float(wy @ wy)
        half_tr = 0.5 * (gxx + gyy)
        disc = math.sqrt(max(0.25 * (gxx - gyy) ** 2 + gxy * gxy, 0.0))
        if half_tr - disc < _EIGEN_MIN:
            status[i] = FLOW_DEGENERATE
            continue
        det = gxx * gyy - gxy * gxy
        bx = -float(wx @ wt)
        by = -float(wy @ wt)
        vectors[i, 0] = (gyy * bx - gxy * by) / det
        vectors[i, 1] = (gxx * by - gxy * bx) / det
    return FlowField(pts, vectors, status)


def component_entropy(
    values: np.ndarray, bins: int, value_range: tuple[float, float]
) -> float:
    """Shannon entropy (nats) of values binned over a fixed clamped range."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError(f"empty value range {value_range}")
    v = np.clip(np.asarray(values, dtype=float), lo, hi)
    counts, _ = np.histogram(v, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def flow_entropy(
    flow: FlowField, bins: int, value_range: tuple[float, float]
) -> tuple[float, float]:
    """Entropy (nats) of the valid flow vectors' x and y components."""
    valid = flow.vectors[flow.valid]
    if len(valid) == 0:
        raise UnusableFlowError("no valid flow vectors in frame pair")
    hx = component_entropy(valid[:, 0], bins, value_range)
    hy = component_entropy(valid[:, 1], bins, value_range)
    return hx, hy


def write_pgm(path, depth: np.ndarray, scale: float | None = None) -> None:
    """Dump a depth map as 16-bit ASCII PGM (P2).

    Values are quantized linearly: gray = round(depth / scale * 65535),
    clipped to [0, 65535]. ``scale`` defaults to the image maximum (or 1.0
    for an empty image) and is recorded in a header comment so the mapping
    back to depth units survives in the file.
    """
    d = _check_depth(depth)
    if scale is None:
        scale = float(d.max()) if d.max() > 0 else 1.0
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    gray = np.clip(np.rint(d / scale * _PGM_MAXVAL), 0, _PGM_MAXVAL).astype(int)
    h, w = gray.shape
    lines = [
        "P2",
        f"# depth = gray * {scale!r} / {_PGM_MAXVAL}",
        f"{w} {h}",
        str(_PGM_MAXVAL),
    ]
    lines.extend(" ".join(str(v) for v in row) for row in gray)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pgm(path) -> tuple[np.ndarray, float]:
    """Read a PGM written by write_pgm; returns (depth, scale)."""
    scale = 1.0
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                if "depth = gray *" in line:
                    scale = float(line.split("*")[1].split("/")[0])
                continue
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError("not an ASCII PGM (P2) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=float)
    if data.size != w * h:
        raise ValueError("truncated PGM payload")
    return data.reshape(h, w) / maxval * scale, scale


def write_flow_table(path, flow: FlowField) -> None:
    """Dump a flow field as a plain text table, one vector per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y dx dy status\n")
        for (px, py), (dx, dy), st in zip(flow.points, flow.vectors, flow.status):
            fh.write(f"{px:.17g} {py:.17g} {dx:.17g} {dy:.17g} {int(st)}\n")


def read_flow_table(path) -> FlowField:
    points = []
    vectors = []
    status = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            px, py, dx, dy, st = line.split()
            points.append((float(px), float(py)))
            vectors.append((float(dx), float(dy)))
            status.append(int(st))
    return FlowField(
        np.array(points, dtype=float).reshape(-1, 2),
        np.array(vectors, dtype=float).reshape(-1, 2),
        np.array(status, dtype=int),
    )
