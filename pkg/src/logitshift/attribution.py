"""Gradient-based attribution methods and heatmap comparison metrics.

Every method comes in a pre-softmax and a post-softmax flavor, selected by
score kind, because the two react very differently to logit-shift surgery:
post-softmax maps are provably invariant, pre-softmax maps are not.

Two class-activation-map variants are implemented:

  * gap:         weight each channel by the spatial mean of its gradient,
                 heatmap(i,j) = relu( sum_k mean_ij(g)_k * A[i,j,k] )
  * elementwise: gradient times activation per cell,
                 heatmap(i,j) = relu( sum_k g[i,j,k] * A[i,j,k] )

The elementwise variant is the one whose reaction to a logit-shift tap has a
simple closed form (the tap cell gains gain * channel-sum of activations),
so both are kept first-class and reported side by side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .network import INPUT, POST, Conv2D, MaxPool, ScoreSelector
from .tensor import Tensor

SALIENCY = "saliency"
INTEGRATED_GRADIENTS = "integrated_gradients"
GAP = "gap"
ELEMENTWISE = "elementwise"
VARIANTS = (GAP, ELEMENTWISE)


@dataclass
class Heatmap:
    """Spatial attribution grid at a layer's resolution (post-ReLU)."""

    grid: Tensor
    pre_relu_grid: Tensor
    target_layer: str
    class_index: int
    score_kind: str
    variant: str


@dataclass
class AttributionMap:
    """Input-shaped attribution values (may be signed)."""

    values: Tensor
    method: str
    class_index: int
    score_kind: str
    baseline: Tensor = None


def saliency(net, x: Tensor, sel: ScoreSelector) -> AttributionMap:
    """Plain input gradient of the selected score."""
    grads = net.backward(net.forward(x), sel)
    return AttributionMap(grads.wrt_input, SALIENCY, sel.class_index, sel.kind)


def grad_cam(net, x: Tensor, class_index: int, target_layer: str,
             score_kind: str = POST, variant: str = GAP) -> Heatmap:
    """Class activation map at a spatial layer, gap or elementwise variant."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    shape = net.shapes.get(target_layer)
    if shape is None:
        net.index(target_layer)
    if len(shape) != 3:
        raise ValueError(f"target layer {target_layer!r} is not spatial (shape {shape})")
    trace = net.forward(x)
    grads = net.backward(trace, ScoreSelector(kind=score_kind, class_index=class_index))
    acts = trace.activations[target_layer].arr
    g = grads.wrt_activations[target_layer].arr
    if variant == GAP:
        alpha = g.mean(axis=(0, 1))
        pre_relu = acts @ alpha
    else:
        pre_relu = (g * acts).sum(axis=2)
    return Heatmap(
        grid=Tensor(np.maximum(pre_relu, 0.0)),
        pre_relu_grid=Tensor(pre_relu),
        target_layer=target_layer,
        class_index=class_index,
        score_kind=score_kind,
        variant=variant,
    )


def integrated_gradients(net, x: Tensor, baseline: Tensor, class_index: int,
                         steps: int = 32, score_kind: str = POST) -> AttributionMap:
    """Path integral of input gradients from baseline to input.

    Midpoint Riemann sum with `steps` points; satisfies the completeness
    property (attributions sum to the score difference) up to quadrature
    error, which shrinks as steps grow.
    """
    if baseline.shape != x.shape:
        raise ValueError(f"baseline shape {baseline.shape} does not match input {x.shape}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    sel = ScoreSelector(kind=score_kind, class_index=class_index)
    delta = x.arr - baseline.arr
    total = np.zeros_like(delta)
    for s in range(1, steps + 1):
        point = Tensor(baseline.arr + ((s - 0.5) / steps) * delta)
        total += net.backward(net.forward(point), sel).wrt_input.arr
    return AttributionMap(
        Tensor(delta * (total / steps)),
        INTEGRATED_GRADIENTS,
        class_index,
        score_kind,
        baseline=baseline,
    )


# ---------------------------------------------------------------------------
# post-processing


def upsample(h, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsample (corner-aligned) of a heatmap grid to out_h x out_w."""
    grid = h.grid.arr if isinstance(h, Heatmap) else (h.arr if isinstance(h, Tensor) else np.asarray(h, dtype=float))
    if grid.ndim != 2:
        raise ValueError(f"expected a 2-d grid, got shape {grid.shape}")
    rows, cols = grid.shape
    if out_h < rows or out_w < cols:
        raise ValueError(f"output {out_h}x{out_w} smaller than grid {rows}x{cols}")

    def src_coords(n_out, n_in):
        if n_in == 1 or n_out == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    sr = src_coords(out_h, rows)
    sc = src_coords(out_w, cols)
    r0 = np.minimum(sr.astype(int), rows - 1)
    c0 = np.minimum(sc.astype(int), cols - 1)
    r1 = np.minimum(r0 + 1, rows - 1)
    c1 = np.minimum(c0 + 1, cols - 1)
    fr = (sr - r0)[:, None]
    fc = (sc - c0)[None, :]
    top = grid[np.ix_(r0, c0)] * (1 - fc) + grid[np.ix_(r0, c1)] * fc
    bot = grid[np.ix_(r1, c0)] * (1 - fc) + grid[np.ix_(r1, c1)] * fc
    return Tensor(top * (1 - fr) + bot * fr)


@dataclass
class NormalizeResult:
    values: Tensor
    zero_map: bool


def normalize(m: Tensor) -> NormalizeResult:
    """Scale by the maximum so the range fits [0, 1]; degenerate maps
    (max <= 0, e.g. all zeros) are returned unchanged with the flag set."""
    peak = float(m.arr.max())
    if peak <= 0.0:
        return NormalizeResult(m, zero_map=True)
    return NormalizeResult(Tensor(m.arr / peak), zero_map=False)


# ---------------------------------------------------------------------------
# comparison metrics


@dataclass(frozen=True)
class Rect:
    """Half-open rectangle [row0, row1) x [col0, col1) in grid coordinates."""

    row0: int
    col0: int
    row1: int
    col1: int

    @classmethod
    def cell(cls, row: int, col: int) -> "Rect":
        return cls(row, col, row + 1, col + 1)

    def contains(self, row: int, col: int) -> bool:
        return self.row0 <= row < self.row1 and self.col0 <= col < self.col1


@dataclass
class ComparisonReport:
    """Five divergence statistics between two same-shaped heatmaps.

    Correlations are None (with the flag set) when either map is constant,
    where they are mathematically undefined.
    """

    pearson: float
    spearman: float
    max_abs_diff: float
    argmax_distance: int
    mass_fraction_a: float
    mass_fraction_b: float
    undefined_correlation: bool

    def to_dict(self) -> dict:
        return {
            "pearson": self.pearson,
            "spearman": self.spearman,
            "max_abs_diff": self.max_abs_diff,
            "argmax_distance_chebyshev": self.argmax_distance,
            "mass_fraction_a": self.mass_fraction_a,
            "mass_fraction_b": self.mass_fraction_b,
            "undefined_correlation": self.undefined_correlation,
        }


def _mass_fraction(arr: np.ndarray, region: Rect) -> float:
    total = float(arr.sum())
    if total == 0.0:
        return 0.0
    inside = float(arr[region.row0 : region.row1, region.col0 : region.col1].sum())
    return inside / total


def compare_heatmaps(a: Tensor, b: Tensor, tap_region: Rect) -> ComparisonReport:
    """Quantify how far heatmap b drifted from a, and where the mass sits."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    fa = a.arr.reshape(-1)
    fb = b.arr.reshape(-1)
    constant = bool(np.all(fa == fa[0]) or np.all(fb == fb[0]))
    if constant:
        pearson = spearman = None
    else:
        pearson = float(stats.pearsonr(fa, fb).statistic)
        spearman = float(stats.spearmanr(fa, fb).statistic)
    am_a = np.unravel_index(int(np.argmax(a.arr)), a.shape)
    am_b = np.unravel_index(int(np.argmax(b.arr)), b.shape)
    return ComparisonReport(
        pearson=pearson,
        spearman=spearman,
        max_abs_diff=float(np.abs(fa - fb).max()),
        argmax_distance=int(max(abs(am_a[0] - am_b[0]), abs(am_a[1] - am_b[1]))),
        mass_fraction_a=_mass_fraction(a.arr, tap_region),
        mass_fraction_b=_mass_fraction(b.arr, tap_region),
        undefined_correlation=constant,
    )


# ---------------------------------------------------------------------------
# tap-region geometry


def project_rect_upstream(net, from_layer: str, rect: Rect, to_layer: str = INPUT) -> Rect:
    """Receptive field of `rect` (cells of from_layer) at an upstream layer.

    Walks conv/pool geometry backwards; to_layer="input" projects all the way
    to the image.  Both endpoints must be spatial.
    """
    start = net.index(from_layer)
    stop = -1 if to_layer == INPUT else net.index(to_layer)
    if stop > start:
        raise ValueError(f"{to_layer!r} is downstream of {from_layer!r}")
    r0, c0, r1, c1 = rect.row0, rect.col0, rect.row1, rect.col1
    for i in range(start, stop, -1):
        ly = net.layers[i]
        if isinstance(ly, Conv2D):
            kh, kw = ly.weights.shape[1], ly.weights.shape[2]
            r0 = r0 * ly.stride - ly.padding
            c0 = c0 * ly.stride - ly.padding
            r1 = (r1 - 1) * ly.stride - ly.padding + kh
            c1 = (c1 - 1) * ly.stride - ly.padding + kw
        elif isinstance(ly, MaxPool):
            (wh, ww), (sh, sw) = ly.window, ly.stride
            r0, c0 = r0 * sh, c0 * sw
            r1 = (r1 - 1) * sh + wh
            c1 = (c1 - 1) * sw + ww
        else:
            shape = net.shapes[ly.name]
            if len(shape) != 3:
                raise ValueError(f"cannot project through non-spatial layer {ly.name!r}")
    in_shape = net.shapes[INPUT] if to_layer == INPUT else net.shapes[to_layer]
    return Rect(max(r0, 0), max(c0, 0), min(r1, in_shape[0]), min(c1, in_shape[1]))


def default_tap_region(net, attack_cfg, target_layer: str) -> Rect:
    """Region where the tap's influence lands in a heatmap at target_layer.

    The tap cell itself when the heatmap is computed at the tap layer, or its
    receptive field when the heatmap target sits upstream of the tap.
    """
    cell = Rect.cell(attack_cfg.tap_row, attack_cfg.tap_col)
    if target_layer == attack_cfg.tap_layer:
        return cell
    if target_layer != INPUT and net.index(target_layer) > net.index(attack_cfg.tap_layer):
        raise ValueError(
            f"target layer {target_layer!r} is downstream of the tap {attack_cfg.tap_layer!r}"
        )
    return project_rect_upstream(net, attack_cfg.tap_layer, cell, to_layer=target_layer)
