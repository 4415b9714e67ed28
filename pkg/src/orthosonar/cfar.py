"""Smallest-of cell-averaging CFAR (SOCA-CFAR) over polar sonar images.

The training region around each cell under test is split into four blocks
(up, down, left, right) lying outside the guard ring.  Along the range axis
(rows) "up" means smaller range index.  With ``t`` training and ``g`` guard
cells, the up block spans rows ``[i-g-t, i-g-1]`` and columns
``[j-g-t, j+g+t]``; the others follow by symmetry.  Every block holds
``t * (2(g+t) + 1)`` cells.

A cell is a detection when ``x > alpha * min(block means)``, with alpha set
from the design false-alarm probability.  Cells whose full window leaves the
raster are never detections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sonar_image import Detection, PolarImage


@dataclass(frozen=True)
class CfarParams:
    train_cells: int = 8
    guard_cells: int = 2
    p_fa: float = 1e-3

    def __post_init__(self) -> None:
        if self.train_cells < 1:
            raise ValueError("train_cells must be >= 1")
        if self.guard_cells < 0:
            raise ValueError("guard_cells must be >= 0")
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError("p_fa must lie in (0, 1)")

    @property
    def half_window(self) -> int:
        return self.train_cells + self.guard_cells

    @property
    def cells_per_quadrant(self) -> int:
        return self.train_cells * (2 * self.half_window + 1)


def _as_array(image) -> np.ndarray:
    if isinstance(image, PolarImage):
        return image.intensities
    return np.asarray(image, dtype=np.float64)


def window_fits(shape: tuple[int, int], cell: tuple[int, int], params: CfarParams) -> bool:
    h = params.half_window
    i, j = cell
    return h <= i < shape[0] - h and h <= j < shape[1] - h


def quadrant_noise_estimates(image, cell: tuple[int, int], params: CfarParams) -> tuple[float, float, float, float]:
    """Mean of the up, down, left and right training blocks around ``cell``."""
    x = _as_array(image)
    i, j = cell
    if not window_fits(x.shape, cell, params):
        raise ValueError(f"CFAR window around {cell} does not fit in {x.shape}")
    t, g = params.train_cells, params.guard_cells
    h = t + g
    up = x[i - h : i - g, j - h : j + h + 1]
    down = x[i + g + 1 : i + h + 1, j - h : j + h + 1]
    left = x[i - h : i + h + 1, j - h : j - g]
    right = x[i - h : i + h + 1, j + g + 1 : j + h + 1]
    return tuple(float(block.mean()) for block in (up, down, left, right))


def detection_constant(n: int, p_fa: float) -> float:
    """Scale factor on the noise mean giving false-alarm rate ``p_fa`` for ``n`` cells."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return n * (p_fa ** (-1.0 / n) - 1.0)


def soca_threshold(image, cell: tuple[int, int], params: CfarParams) -> float:
    mu = quadrant_noise_estimates(image, cell, params)
    return min(mu) * detection_constant(params.cells_per_quadrant, params.p_fa)


def _window_sums(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Sums over every ``rows x cols`` window; entry ``[a, b]`` covers rows a.., cols b..

    Built from running sums so that an all-zero window yields exactly 0.
    """
    c = np.zeros((x.shape[0], x.shape[1] + 1))
    np.cumsum(x, axis=1, out=c[:, 1:])
    horiz = c[:, cols:] - c[:, :-cols]
    r = np.zeros((horiz.shape[0] + 1, horiz.shape[1]))
    np.cumsum(horiz, axis=0, out=r[1:])
    out = r[rows:] - r[:-rows]
    return np.maximum(out, 0.0)


def quadrant_mean_maps(image, params: CfarParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell minimum block mean and the mask of cells whose window fits.

    Both returned arrays have the image's shape; the minimum is 0 where the
    window does not fit.
    """
    x = _as_array(image)
    n_rows, n_cols = x.shape
    t, g = params.train_cells, params.guard_cells
    h = t + g
    span = 2 * h + 1
    mu_min = np.zeros_like(x)
    valid = np.zeros(x.shape, dtype=bool)
    if n_rows < span or n_cols < span:
        return mu_min, valid

    # horizontal strip t x span and vertical strip span x t
    strip_h = _window_sums(x, t, span)
    strip_v = _window_sums(x, span, t)
    ci = np.arange(h, n_rows - h)[:, None]
    cj = np.arange(h, n_cols - h)[None, :]
    up = strip_h[ci - h, cj - h]
    down = strip_h[ci + g + 1, cj - h]
    left = strip_v[ci - h, cj - h]
    right = strip_v[ci - h, cj + g + 1]
    block_min = np.minimum(np.minimum(up, down), np.minimum(left, right))
    mu_min[h : n_rows - h, h : n_cols - h] = block_min / params.cells_per_quadrant
    valid[h : n_rows - h, h : n_cols - h] = True
    return mu_min, valid


def detection_mask(image, params: CfarParams, beam_mask: np.ndarray | None = None) -> np.ndarray:
    """Boolean raster of CFAR contacts."""
    x = _as_array(image)
    alpha = detection_constant(params.cells_per_quadrant, params.p_fa)
    if beam_mask is None:
        mu_min, valid = quadrant_mean_maps(x, params)
        return valid & (x > alpha * mu_min)

    beam_mask = np.asarray(beam_mask, dtype=bool)
    hits = np.zeros(x.shape, dtype=bool)
    cols = np.flatnonzero(beam_mask)
    if len(cols) == 0:
        return hits
    # only the gated columns plus a window margin need evaluating; the
    # margin keeps window validity identical to a full-image pass
    h = params.half_window
    lo = max(int(cols[0]) - h, 0)
    hi = min(int(cols[-1]) + h + 1, x.shape[1])
    sub = x[:, lo:hi]
    mu_min, valid = quadrant_mean_maps(sub, params)
    hits[:, lo:hi] = valid & (sub > alpha * mu_min)
    hits &= beam_mask[None, :]
    return hits


def detect(image: PolarImage, params: CfarParams, mask: np.ndarray | None = None) -> list[Detection]:
    """Run SOCA-CFAR on ``image``; ``mask`` gates beams (e.g. the overlap mask).

    Detections come back sorted by (range_bin, beam_index).
    """
    hits = detection_mask(image.intensities, params, mask)
    rows, cols = np.nonzero(hits)
    ranges = image.intrinsics.range_centers()[rows]
    angles = image.intrinsics.beam_angles()[cols]
    vals = image.intensities[rows, cols]
    return [
        Detection(int(i), int(j), float(r), float(a), float(v))
        for i, j, r, a, v in zip(rows, cols, ranges, angles, vals)
    ]
