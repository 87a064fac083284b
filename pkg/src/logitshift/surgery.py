"""Logit-shift model surgery and its machine checks.

The modification wires a parameter-free branch that reads the activations of
one spatial cell of a chosen layer, sums them over channels, scales by a
gain, and adds the result to every logit:

    shift = gain * sum_k A[tap_row, tap_col, k]
    z'_i  = z_i + shift        (same shift for every class i)

Because the shift is class-independent, softmax(z') == softmax(z) exactly, so
predictions, post-softmax gradients and training gradients are unchanged --
while gradients of the pre-softmax logits acquire a spike of exactly `gain`
at the tap cell (per channel).  The verifiers below check each of those
claims numerically; the negative control (a shift applied to a single class
only) must make them fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import (
    POST,
    PRE,
    ForwardTrace,
    GradientSet,
    Network,
    ScoreSelector,
    _softmax,
)
from .tensor import Tensor


@dataclass(frozen=True)
class AttackConfig:
    """Where the shift branch taps the network and how hard it pulls."""

    tap_layer: str
    tap_row: int = 0
    tap_col: int = 0
    gain: float = 10.0

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("gain must be finite")
        if self.tap_row < 0 or self.tap_col < 0:
            raise ValueError("tap position must be nonnegative")


def _check_tap(net: Network, cfg: AttackConfig) -> None:
    shape = net.shapes.get(cfg.tap_layer)
    if shape is None:
        net.index(cfg.tap_layer)  # raises with the layer list
    if len(shape) != 3:
        raise ValueError(f"tap layer {cfg.tap_layer!r} is not spatial (shape {shape})")
    if cfg.tap_row >= shape[0] or cfg.tap_col >= shape[1]:
        raise ValueError(
            f"tap position ({cfg.tap_row}, {cfg.tap_col}) outside layer "
            f"{cfg.tap_layer!r} extent {shape[0]}x{shape[1]}"
        )


def default_attack(net: Network, gain: float = 10.0) -> AttackConfig:
    """Default configuration: cell (0, 0) of the final pooling layer."""
    return AttackConfig(tap_layer=net.final_pool(), tap_row=0, tap_col=0, gain=gain)


def shift_term(trace: ForwardTrace, cfg: AttackConfig) -> float:
    """The logit shift for one trace: gain times the channel sum at the tap cell."""
    if cfg.tap_layer not in trace.activations:
        raise ValueError(f"trace has no activations for layer {cfg.tap_layer!r}")
    arr = trace.activations[cfg.tap_layer].arr
    if arr.ndim != 3 or cfg.tap_row >= arr.shape[0] or cfg.tap_col >= arr.shape[1]:
        raise ValueError(
            f"tap position ({cfg.tap_row}, {cfg.tap_col}) invalid for layer "
            f"{cfg.tap_layer!r} with shape {arr.shape}"
        )
    return float(cfg.gain * arr[cfg.tap_row, cfg.tap_col, :].sum())


class AttackedNetwork:
    """A base network plus the shift branch; no parameters of its own.

    Exposes the same forward/backward surface as Network, so attribution and
    training code runs on either without caring which it got.
    """

    def __init__(self, base: Network, config: AttackConfig):
        _check_tap(base, config)
        self.base = base
        self.config = config

    # structure delegation ----------------------------------------------------

    @property
    def layers(self):
        return self.base.layers

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def class_count(self):
        return self.base.class_count

    @property
    def shapes(self):
        return self.base.shapes

    def index(self, name):
        return self.base.index(name)

    def layer(self, name):
        return self.base.layer(name)

    def final_pool(self):
        return self.base.final_pool()

    def spatial_layers(self):
        return self.base.spatial_layers()

    def param_layers(self):
        return self.base.param_layers()

    # forward/backward ----------------------------------------------------------

    def _shift_seed(self, dz: np.ndarray) -> float:
        """Gradient flowing into the branch: dS/dshift = sum_i dS/dz'_i."""
        return float(self.config.gain * dz.sum())

    def forward(self, x: Tensor) -> ForwardTrace:
        tr = self.base.forward(x)
        t = shift_term(tr, self.config)
        z = tr.z.arr + t
        return ForwardTrace(tr.input, tr.activations, tr.pool_argmax, Tensor(z), Tensor(_softmax(z)), shift=t)

    def run_tail(self, trace: ForwardTrace, start: int, act: np.ndarray):
        cfg = self.config
        tap_idx = self.base.index(cfg.tap_layer)
        acts = self.base._tail(start, act)
        z = acts[self.base.layers[-1].name]
        if tap_idx > start:
            tap_act = acts[cfg.tap_layer]
        elif tap_idx == start:
            tap_act = act
        else:
            tap_act = trace.activations[cfg.tap_layer].arr
        z = z + cfg.gain * tap_act[cfg.tap_row, cfg.tap_col, :].sum()
        return z, _softmax(z)

    def predict(self, x: Tensor) -> int:
        return int(np.argmax(self.forward(x).y.arr))

    def backward(self, trace: ForwardTrace, sel: ScoreSelector) -> GradientSet:
        dz = self.base._logit_seed(trace, sel)
        cfg = self.config
        tap = (cfg.tap_layer, cfg.tap_row, cfg.tap_col, self._shift_seed(dz))
        return self.base._backprop(trace, dz, tap=tap)

    def loss_backward(self, trace: ForwardTrace, label: int) -> GradientSet:
        if not 0 <= label < self.class_count:
            raise ValueError(f"label {label} out of range for {self.class_count} classes")
        dz = trace.y.arr.copy()
        dz[label] -= 1.0
        cfg = self.config
        tap = (cfg.tap_layer, cfg.tap_row, cfg.tap_col, self._shift_seed(dz))
        return self.base._backprop(trace, dz, tap=tap)


class SingleClassShiftNetwork(AttackedNetwork):
    """Negative control: the shift lands on one logit instead of all of them.

    This is NOT output-preserving -- softmax of unequally shifted logits
    changes -- so every equivalence verifier must flag it.  Exists purely to
    prove the verifiers can fail.
    """

    def __init__(self, base: Network, config: AttackConfig, shifted_class: int = 0):
        super().__init__(base, config)
        if not 0 <= shifted_class < base.class_count:
            raise ValueError(f"shifted class {shifted_class} out of range")
        self.shifted_class = shifted_class

    def _shift_seed(self, dz: np.ndarray) -> float:
        return float(self.config.gain * dz[self.shifted_class])

    def forward(self, x: Tensor) -> ForwardTrace:
        tr = self.base.forward(x)
        t = shift_term(tr, self.config)
        z = tr.z.arr.copy()
        z[self.shifted_class] += t
        return ForwardTrace(tr.input, tr.activations, tr.pool_argmax, Tensor(z), Tensor(_softmax(z)), shift=t)

    def run_tail(self, trace: ForwardTrace, start: int, act: np.ndarray):
        cfg = self.config
        tap_idx = self.base.index(cfg.tap_layer)
        acts = self.base._tail(start, act)
        z = acts[self.base.layers[-1].name].copy()
        if tap_idx > start:
            tap_act = acts[cfg.tap_layer]
        elif tap_idx == start:
            tap_act = act
        else:
            tap_act = trace.activations[cfg.tap_layer].arr
        z[self.shifted_class] += cfg.gain * tap_act[cfg.tap_row, cfg.tap_col, :].sum()
        return z, _softmax(z)


def apply_logit_shift(net: Network, cfg: AttackConfig) -> AttackedNetwork:
    """Attach the shift branch; base parameters are shared, not copied."""
    return AttackedNetwork(net, cfg)


def apply_single_class_shift(net: Network, cfg: AttackConfig, shifted_class: int = 0) -> SingleClassShiftNetwork:
    return SingleClassShiftNetwork(net, cfg, shifted_class)


# ---------------------------------------------------------------------------
# verification


@dataclass
class EquivalenceReport:
    """Measured deviations between a network and its modified twin.

    Gradient fields stay None until the corresponding check has run; `passed`
    accounts for whichever checks are present.
    """

    probe_count: int
    output_tol: float
    max_output_deviation: float
    prediction_agreement: float
    grad_tol: float = None
    max_postsoftmax_grad_deviation: float = None
    param_grad_tol: float = None
    max_param_grad_deviation: float = None

    @property
    def outputs_equivalent(self) -> bool:
        return self.max_output_deviation <= self.output_tol and self.prediction_agreement == 1.0

    @property
    def passed(self) -> bool:
        ok = self.outputs_equivalent
        if self.max_postsoftmax_grad_deviation is not None:
            ok = ok and self.max_postsoftmax_grad_deviation <= self.grad_tol
        if self.max_param_grad_deviation is not None:
            ok = ok and self.max_param_grad_deviation <= self.param_grad_tol
        return ok

    def to_dict(self) -> dict:
        return {
            "probe_count": self.probe_count,
            "max_output_deviation": self.max_output_deviation,
            "output_tolerance": self.output_tol,
            "prediction_agreement": self.prediction_agreement,
            "max_postsoftmax_grad_deviation": self.max_postsoftmax_grad_deviation,
            "postsoftmax_grad_tolerance": self.grad_tol,
            "max_param_grad_deviation": self.max_param_grad_deviation,
            "param_grad_tolerance": self.param_grad_tol,
            "passed": self.passed,
        }


def verify_output_equivalence(orig, atk, probes, tol: float = 1e-10) -> EquivalenceReport:
    """Max |y' - y| over probes plus prediction agreement rate."""
    if not probes:
        raise ValueError("need at least one probe input")
    max_dev = 0.0
    agree = 0
    for x in probes:
        y0 = orig.forward(x).y.arr
        y1 = atk.forward(x).y.arr
        max_dev = max(max_dev, float(np.abs(y1 - y0).max()))
        agree += int(np.argmax(y0) == np.argmax(y1))
    return EquivalenceReport(
        probe_count=len(probes),
        output_tol=tol,
        max_output_deviation=max_dev,
        prediction_agreement=agree / len(probes),
    )


def _grad_set_deviation(a: GradientSet, b: GradientSet, params: bool, activations: bool) -> float:
    dev = 0.0
    if activations:
        dev = max(dev, float(np.abs(a.wrt_input.arr - b.wrt_input.arr).max()))
        for name, ta in a.wrt_activations.items():
            dev = max(dev, float(np.abs(ta.arr - b.wrt_activations[name].arr).max()))
    if params:
        for name, pa in a.wrt_params.items():
            for key, ta in pa.items():
                dev = max(dev, float(np.abs(ta.arr - b.wrt_params[name][key].arr).max()))
    return dev


def verify_postsoftmax_gradient_equality(orig, atk, probes, tol: float = 1e-10) -> float:
    """Max deviation of post-softmax score gradients, all probes x classes x layers."""
    max_dev = 0.0
    for x in probes:
        tr0 = orig.forward(x)
        tr1 = atk.forward(x)
        for c in range(orig.class_count):
            sel = ScoreSelector(kind=POST, class_index=c)
            g0 = orig.backward(tr0, sel)
            g1 = atk.backward(tr1, sel)
            max_dev = max(max_dev, _grad_set_deviation(g0, g1, params=True, activations=True))
    return max_dev


def presoftmax_gradient_delta(orig, atk, x: Tensor, target_layer: str, class_index: int = 0) -> Tensor:
    """dz'_c/dA - dz_c/dA at one layer.

    At the tap layer this is exactly `gain` at the tap cell (every channel)
    and zero elsewhere; upstream of the tap it is the branch gradient routed
    through the recorded pool argmaxes.
    """
    sel = ScoreSelector(kind=PRE, class_index=class_index)
    g0 = orig.backward(orig.forward(x), sel)
    g1 = atk.backward(atk.forward(x), sel)
    if target_layer not in g0.wrt_activations:
        raise ValueError(f"unknown layer {target_layer!r}")
    return Tensor(g1.wrt_activations[target_layer].arr - g0.wrt_activations[target_layer].arr)


def verify_training_gradient_equality(orig, atk, batch, tol: float = 1e-12) -> float:
    """Max deviation of batch-mean cross-entropy parameter gradients.

    The branch has no parameters of its own and receives a loss gradient of
    gain * (sum_i y'_i - 1), which is zero up to float roundoff; parameter
    gradients therefore agree to roundoff, which `tol` absorbs.
    """
    if not batch:
        raise ValueError("need at least one labeled sample")
    sums0 = {}
    sums1 = {}

    def accumulate(sums, gs):
        for name, pdict in gs.wrt_params.items():
            for key, t in pdict.items():
                k = (name, key)
                if k in sums:
                    sums[k] = sums[k] + t.arr
                else:
                    sums[k] = t.arr.copy()

    for x, label in batch:
        accumulate(sums0, orig.loss_backward(orig.forward(x), label))
        accumulate(sums1, atk.loss_backward(atk.forward(x), label))
    inv = 1.0 / len(batch)
    return max(float(np.abs(sums1[k] * inv - sums0[k] * inv).max()) for k in sums0)


def run_full_verification(
    orig,
    atk,
    probes,
    labeled_batch=None,
    output_tol: float = 1e-10,
    grad_tol: float = 1e-10,
    param_grad_tol: float = 1e-12,
    grad_probe_limit: int = 20,
) -> EquivalenceReport:
    """Output, post-softmax-gradient and training-gradient checks in one report."""
    report = verify_output_equivalence(orig, atk, probes, tol=output_tol)
    report.grad_tol = grad_tol
    report.max_postsoftmax_grad_deviation = verify_postsoftmax_gradient_equality(
        orig, atk, probes[:grad_probe_limit], tol=grad_tol
    )
    if labeled_batch:
        report.param_grad_tol = param_grad_tol
        report.max_param_grad_deviation = verify_training_gradient_equality(
            orig, atk, labeled_batch, tol=param_grad_tol
        )
    return report
