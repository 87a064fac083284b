"""Feed-forward CNN representation with activation-recording forward pass and
reverse-mode gradients.

A network is an ordered list of layers ending in a Dense layer whose output is
the logit vector z; the probability vector y = softmax(z) is computed
functionally at scoring time, never stored as a layer.  Both z and y are
first-class outputs so scores of either kind can be selected and
differentiated.

Gradient conventions (deterministic subgradients):
  * ReLU derivative at exactly 0 is 0,
  * max pooling routes gradient to the first (row-major) maximal entry of
    each window, as recorded during the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .tensor import Tensor

PRE = "pre"
POST = "post"
SCORE_KINDS = (PRE, POST)

#: pseudo layer name addressing the network input (finite differences, saliency)
INPUT = "input"


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class Conv2D:
    """2-D cross-correlation, weights (out_ch, k_rows, k_cols, in_ch)."""

    name: str
    weights: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if len(self.weights.shape) != 4:
            raise ValueError(f"layer {self.name!r}: conv weights must be 4-d, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"layer {self.name!r}: bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output channels"
            )
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"layer {self.name!r}: invalid stride/padding")


@dataclass(frozen=True)
class ReLU:
    name: str


@dataclass(frozen=True)
class MaxPool:
    name: str
    window: tuple = (2, 2)
    stride: tuple = None  # defaults to the window (non-overlapping)

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(self.window))
        if len(self.window) != 2 or min(self.window) < 1:
            raise ValueError(f"layer {self.name!r}: bad pool window {self.window}")
        object.__setattr__(self, "stride", tuple(self.stride) if self.stride is not None else self.window)
        if len(self.stride) != 2 or min(self.stride) < 1:
            raise ValueError(f"layer {self.name!r}: bad pool stride {self.stride}")


@dataclass(frozen=True)
class Flatten:
    name: str


@dataclass(frozen=True)
class Dense:
    """Affine map, weights (out, in)."""

    name: str
    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        if len(self.weights.shape) != 2:
            raise ValueError(f"layer {self.name!r}: dense weights must be 2-d, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"layer {self.name!r}: bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} outputs"
            )


LayerSpec = (Conv2D, ReLU, MaxPool, Flatten, Dense)


def _layer_out_shape(layer, in_shape, layer_name):
    if isinstance(layer, Conv2D):
        if len(in_shape) != 3:
            raise ValueError(f"layer {layer_name!r}: conv input must be 3-d, got shape {in_shape}")
        out_ch, kh, kw, in_ch = layer.weights.shape
        h, w, c = in_shape
        if c != in_ch:
            raise ValueError(f"layer {layer_name!r}: expects {in_ch} input channels, got {c}")
        oh = (h + 2 * layer.padding - kh) // layer.stride + 1
        ow = (w + 2 * layer.padding - kw) // layer.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"layer {layer_name!r}: kernel {kh}x{kw} does not fit input {in_shape}")
        return (oh, ow, out_ch)
    if isinstance(layer, ReLU):
        return in_shape
    if isinstance(layer, MaxPool):
        if len(in_shape) != 3:
            raise ValueError(f"layer {layer_name!r}: pool input must be 3-d, got shape {in_shape}")
        (wh, ww), (sh, sw) = layer.window, layer.stride
        h, w, c = in_shape
        if wh > h or ww > w:
            raise ValueError(f"layer {layer_name!r}: window {layer.window} exceeds input {in_shape}")
        return ((h - wh) // sh + 1, (w - ww) // sw + 1, c)
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, Dense):
        if len(in_shape) != 1:
            raise ValueError(f"layer {layer_name!r}: dense input must be 1-d, got shape {in_shape}")
        out, inp = layer.weights.shape
        if in_shape[0] != inp:
            raise ValueError(f"layer {layer_name!r}: expects {inp} inputs, got {in_shape[0]}")
        return (out,)
    raise TypeError(f"unknown layer type {type(layer).__name__}")


# ---------------------------------------------------------------------------
# traces, selectors, gradients


@dataclass
class ForwardTrace:
    """Everything recorded during one forward pass."""

    input: Tensor
    activations: dict          # layer name -> output Tensor
    pool_argmax: dict          # pool name -> (arg_rows, arg_cols) int64 arrays
    z: Tensor                  # pre-softmax output (shift included, if any)
    y: Tensor                  # softmax(z)
    shift: float = 0.0         # class-independent logit shift (0 for plain nets)


@dataclass(frozen=True)
class ScoreSelector:
    """Which network output to use as the score S: z_c ('pre') or y_c ('post')."""

    kind: str
    class_index: int

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"score kind must be one of {SCORE_KINDS}, got {self.kind!r}")
        if self.class_index < 0:
            raise ValueError("class index must be nonnegative")


@dataclass
class GradientSet:
    """Gradients of one scalar score wrt every activation and parameter."""

    wrt_input: Tensor
    wrt_activations: dict      # layer name -> Tensor (same shape as the output)
    wrt_params: dict           # layer name -> {"weights": Tensor, "bias": Tensor}


# ---------------------------------------------------------------------------
# softmax and scores


def _softmax(z: np.ndarray) -> np.ndarray:
    # max subtraction is itself a class-independent shift, which provably
    # cannot change the output -- the same identity the logit-shift attack rides on
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(z) -> Tensor:
    """Stabilized softmax of a length-n vector (n >= 1)."""
    arr = z.arr if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"softmax expects a nonempty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("softmax input must be finite")
    return Tensor(_softmax(arr))


def score(trace: ForwardTrace, sel: ScoreSelector) -> float:
    """Selected scalar score from a trace: z_c or y_c."""
    n = trace.z.shape[0]
    if sel.class_index >= n:
        raise ValueError(f"class {sel.class_index} out of range for {n} classes")
    vec = trace.z if sel.kind == PRE else trace.y
    return float(vec.arr[sel.class_index])


def cross_entropy(trace: ForwardTrace, label: int) -> float:
    """-log y_label, evaluated stably from the logits."""
    z = trace.z.arr
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[label])


# ---------------------------------------------------------------------------
# the network


class Network:
    """Immutable feed-forward CNN: ordered layers plus a declared input shape."""

    def __init__(self, layers, input_shape):
        layers = tuple(layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        names = [ly.name for ly in layers]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate layer names: {sorted(dupes)}")
        if INPUT in names:
            raise ValueError(f"{INPUT!r} is reserved and cannot name a layer")
        if not isinstance(layers[-1], Dense):
            raise ValueError("final layer must be Dense (it produces the logits)")
        self.layers = layers
        self.input_shape = tuple(int(d) for d in input_shape)
        shapes = {INPUT: self.input_shape}
        cur = self.input_shape
        for ly in layers:
            cur = _layer_out_shape(ly, cur, ly.name)
            shapes[ly.name] = cur
        self.shapes = shapes
        self.class_count = layers[-1].weights.shape[0]
        self._index = {ly.name: i for i, ly in enumerate(layers)}

    # --- structure helpers ---------------------------------------------------

    def index(self, name: str) -> int:
        if name not in self._index:
            raise ValueError(f"unknown layer {name!r}; layers are {[ly.name for ly in self.layers]}")
        return self._index[name]

    def layer(self, name: str):
        return self.layers[self.index(name)]

    def final_pool(self) -> str:
        """Name of the last pooling layer."""
        for ly in reversed(self.layers):
            if isinstance(ly, MaxPool):
                return ly.name
        raise ValueError("network has no pooling layer")

    def spatial_layers(self):
        """Names of layers with (rows, cols, channels) outputs."""
        return [ly.name for ly in self.layers if len(self.shapes[ly.name]) == 3]

    def with_params(self, params: dict) -> "Network":
        """Copy of the network with parameters replaced.

        `params` maps (layer_name, "weights"|"bias") to arrays; layers not
        mentioned keep their current tensors.
        """
        new_layers = []
        for ly in self.layers:
            if isinstance(ly, (Conv2D, Dense)):
                w = params.get((ly.name, "weights"))
                b = params.get((ly.name, "bias"))
                if w is not None or b is not None:
                    ly = replace(
                        ly,
                        weights=Tensor(w) if w is not None else ly.weights,
                        bias=Tensor(b) if b is not None else ly.bias,
                    )
            new_layers.append(ly)
        return Network(new_layers, self.input_shape)

    def param_layers(self):
        return [ly for ly in self.layers if isinstance(ly, (Conv2D, Dense))]

    # --- forward ---------------------------------------------------------------

    def _apply_layer(self, ly, a, pool_args=None):
        if isinstance(ly, Conv2D):
            return kernels.conv2d_forward(a, ly.weights.arr, ly.bias.arr, ly.stride, ly.padding)
        if isinstance(ly, ReLU):
            return np.maximum(a, 0.0)
        if isinstance(ly, MaxPool):
            out, ar, ac = kernels.maxpool_forward(a, *ly.window, *ly.stride)
            if pool_args is not None:
                pool_args[ly.name] = (ar, ac)
            return out
        if isinstance(ly, Flatten):
            return np.ascontiguousarray(a).reshape(-1)
        if isinstance(ly, Dense):
            return ly.weights.arr @ a + ly.bias.arr
        raise TypeError(f"unknown layer type {type(ly).__name__}")

    def forward(self, x: Tensor) -> ForwardTrace:
        """Full forward pass recording every intermediate activation."""
        if x.shape != self.input_shape:
            raise ValueError(f"input shape {x.shape} does not match network input {self.input_shape}")
        a = x.arr
        acts = {}
        pool_args = {}
        for ly in self.layers:
            a = self._apply_layer(ly, a, pool_args)
            acts[ly.name] = Tensor(a)
        z = acts[self.layers[-1].name]
        return ForwardTrace(x, acts, pool_args, z, Tensor(_softmax(z.arr)))

    def _tail(self, start: int, act: np.ndarray) -> dict:
        """Re-run layers after index `start` (-1 = from the input) on `act`.

        Pool argmaxes are recomputed honestly; returns new activations as
        plain arrays keyed by layer name.
        """
        a = act
        acts = {}
        for ly in self.layers[start + 1 :]:
            a = self._apply_layer(ly, a)
            acts[ly.name] = a
        return acts

    def run_tail(self, trace: ForwardTrace, start: int, act: np.ndarray):
        """(z, y) after replacing the output of layer index `start` with `act`."""
        if start == len(self.layers) - 1:
            z = act
        else:
            z = self._tail(start, act)[self.layers[-1].name]
        return z, _softmax(z)

    def predict(self, x: Tensor) -> int:
        """argmax_c y_c with first-index tie-break (softmax is monotone, so
        this equals argmax over the logits)."""
        return int(np.argmax(self.forward(x).y.arr))

    # --- backward ----------------------------------------------------------------

    def _logit_seed(self, trace: ForwardTrace, sel: ScoreSelector) -> np.ndarray:
        n = self.class_count
        if sel.class_index >= n:
            raise ValueError(f"class {sel.class_index} out of range for {n} classes")
        if sel.kind == PRE:
            dz = np.zeros(n)
            dz[sel.class_index] = 1.0
        else:
            # softmax Jacobian row: dy_c/dz_i = y_c (delta_ci - y_i)
            y = trace.y.arr
            yc = y[sel.class_index]
            dz = -yc * y
            dz[sel.class_index] += yc
        return dz

    def _backprop(self, trace: ForwardTrace, dz: np.ndarray, tap=None) -> GradientSet:
        """Reverse sweep from a gradient seed at the logits.

        `tap`, when given, is (layer_name, row, col, coeff): an extra gradient
        `coeff` added at every channel of one spatial cell of that layer's
        output, i.e. the backward edge of a logit-shift branch reading that cell.
        """
        if trace.input.shape != self.input_shape:
            raise ValueError("trace does not belong to this network")
        wrt_acts = {}
        wrt_params = {}
        g = dz
        for i in reversed(range(len(self.layers))):
            ly = self.layers[i]
            if tap is not None and ly.name == tap[0]:
                g = g.copy()
                g[tap[1], tap[2], :] += tap[3]
            wrt_acts[ly.name] = Tensor(g)
            x = trace.activations[self.layers[i - 1].name].arr if i > 0 else trace.input.arr
            if isinstance(ly, Dense):
                wrt_params[ly.name] = {"weights": Tensor(np.outer(g, x)), "bias": Tensor(g)}
                g = ly.weights.arr.T @ g
            elif isinstance(ly, Flatten):
                g = g.reshape(x.shape)
            elif isinstance(ly, MaxPool):
                ar, ac = trace.pool_argmax[ly.name]
                g = kernels.maxpool_backward(x.shape[0], x.shape[1], ar, ac, g)
            elif isinstance(ly, ReLU):
                g = np.where(x > 0.0, g, 0.0)
            elif isinstance(ly, Conv2D):
                gx, gw, gb = kernels.conv2d_backward(x, ly.weights.arr, ly.stride, ly.padding, g)
                wrt_params[ly.name] = {"weights": Tensor(gw), "bias": Tensor(gb)}
                g = gx
        return GradientSet(Tensor(g), wrt_acts, wrt_params)

    def backward(self, trace: ForwardTrace, sel: ScoreSelector) -> GradientSet:
        """Gradients of the selected score wrt all activations and parameters."""
        return self._backprop(trace, self._logit_seed(trace, sel))

    def loss_backward(self, trace: ForwardTrace, label: int) -> GradientSet:
        """Gradients of the cross-entropy loss -log y_label."""
        if not 0 <= label < self.class_count:
            raise ValueError(f"label {label} out of range for {self.class_count} classes")
        dz = trace.y.arr.copy()
        dz[label] -= 1.0
        return self._backprop(trace, dz)


# ---------------------------------------------------------------------------
# module-level operations (work on Network and any object with the same surface)


def forward(net, x: Tensor) -> ForwardTrace:
    return net.forward(x)


def backward(net, trace: ForwardTrace, sel: ScoreSelector) -> GradientSet:
    return net.backward(trace, sel)


def predict(net, x: Tensor) -> int:
    return net.predict(x)


def finite_diff_gradient(net, x: Tensor, sel: ScoreSelector, target_layer: str, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of the selected score wrt one layer's activation.

    Independent oracle for `backward`: each coordinate of the target
    activation (or of the input, for target_layer="input") is nudged by +-h
    and the downstream subnetwork is re-run, pool argmaxes recomputed.  Only
    valid away from ReLU/pool kinks; callers sample accordingly.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    if sel.class_index >= net.class_count:
        raise ValueError(f"class {sel.class_index} out of range for {net.class_count} classes")
    trace = net.forward(x)
    if target_layer == INPUT:
        start = -1
        base = trace.input.arr
    else:
        start = net.index(target_layer)
        base = trace.activations[target_layer].arr
    grad = np.empty(base.size)
    flat = base.reshape(-1)
    for i in range(flat.size):
        vals = []
        for delta in (h, -h):
            pert = flat.copy()
            pert[i] += delta
            z, y = net.run_tail(trace, start, pert.reshape(base.shape))
            vals.append(z[sel.class_index] if sel.kind == PRE else y[sel.class_index])
        grad[i] = (vals[0] - vals[1]) / (2.0 * h)
    return Tensor(grad.reshape(base.shape))


def kink_margin(net, trace: ForwardTrace) -> float:
    """Distance of a trace from the nearest ReLU/pool nondifferentiability.

    Minimum over all ReLU pre-activation magnitudes and all pool-window
    (max - runner-up) gaps; finite-difference tests resample inputs until
    this margin comfortably exceeds the step size.
    """
    margin = np.inf
    for i, ly in enumerate(net.layers):
        x = trace.activations[net.layers[i - 1].name].arr if i > 0 else trace.input.arr
        if isinstance(ly, ReLU):
            margin = min(margin, float(np.abs(x).min()))
        elif isinstance(ly, MaxPool):
            (wh, ww), (sh, sw) = ly.window, ly.stride
            oh, ow, c = net.shapes[ly.name]
            if wh * ww == 1:
                continue
            for io in range(oh):
                for jo in range(ow):
                    win = x[io * sh : io * sh + wh, jo * sw : jo * sw + ww, :].reshape(-1, x.shape[2])
                    srt = np.sort(win, axis=0)
                    margin = min(margin, float((srt[-1] - srt[-2]).min()))
    return margin
