"""Synthetic quadrant-blob dataset, deterministic init, SGD training and the
lockstep twin-training experiment.

The task: a single Gaussian blob sits in one quadrant of a grayscale image
over low uniform noise; the label is the quadrant (0 top-left, 1 top-right,
2 bottom-left, 3 bottom-right).  Ground-truth attribution location is known
by construction, so heatmap localization can be checked without a human in
the loop.

Everything is driven by the package PRNG (see rng.py): image i uses the
substream child_seed(seed, i) (center row, center col, then noise pixels
row-major), epoch e shuffles with child_seed(schedule_seed, e), and
initialization fills conv1, conv2, dense weights in declaration order from
a single stream.  Same seed, bitwise-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import Conv2D, Dense, Flatten, MaxPool, Network, ReLU, cross_entropy
from .rng import Rng, child_seed
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class SyntheticDataset:
    images: list        # Tensor (S, S, 1), values in [0, 1]
    labels: list        # quadrant index per image
    seed: int
    image_size: int
    blob_centers: list  # (row, col) float center per image

    def __len__(self):
        return len(self.images)


def quadrant_of(row: float, col: float, image_size: int) -> int:
    half = image_size // 2
    return 2 * int(row >= half) + int(col >= half)


def blob_image(center_row: float, center_col: float, image_size: int, sigma: float) -> np.ndarray:
    """Noise-free Gaussian bump with peak 1.0 at the (continuous) center."""
    d_r = np.arange(image_size)[:, None] - center_row
    d_c = np.arange(image_size)[None, :] - center_col
    return np.exp(-(d_r**2 + d_c**2) / (2.0 * sigma**2))


def gen_blob_dataset(count: int, image_size: int, seed: int, noise_high: float = 0.1) -> SyntheticDataset:
    """Balanced 4-class blob dataset, deterministic in `seed`.

    Labels cycle 0,1,2,3 so class counts differ by at most one; blob centers
    are drawn strictly inside the labeled quadrant (at least one pixel off
    every quadrant edge); sigma is fixed at image_size / 10.
    """
    if count < 4:
        raise ValueError("need at least 4 images (one per class)")
    if image_size < 8:
        raise ValueError("image size must be at least 8")
    sigma = image_size / 10.0
    half = image_size // 2
    images, labels, centers = [], [], []
    for i in range(count):
        label = i % 4
        qr, qc = divmod(label, 2)
        r_lo, r_hi = (0, half) if qr == 0 else (half, image_size)
        c_lo, c_hi = (0, half) if qc == 0 else (half, image_size)
        rng = Rng(child_seed(seed, i))
        center_row = r_lo + 1 + rng.random() * (r_hi - r_lo - 2)
        center_col = c_lo + 1 + rng.random() * (c_hi - c_lo - 2)
        noise = np.empty(image_size * image_size)
        for p in range(noise.size):
            noise[p] = rng.random()
        img = noise.reshape(image_size, image_size) * noise_high
        img = np.clip(img + blob_image(center_row, center_col, image_size, sigma), 0.0, 1.0)
        images.append(Tensor(img[:, :, None]))
        labels.append(label)
        centers.append((center_row, center_col))
    return SyntheticDataset(images, labels, seed, image_size, centers)


# ---------------------------------------------------------------------------
# initialization


def _he_fill(rng: Rng, shape, fan_in: int) -> np.ndarray:
    scale = math.sqrt(2.0 / fan_in)
    flat = np.empty(int(np.prod(shape)))
    for i in range(flat.size):
        flat[i] = rng.normal() * scale
    return flat.reshape(shape)


def init_network(seed: int, image_size: int = 32) -> Network:
    """Reference architecture with He fan-in init, bitwise-deterministic in seed.

    conv(8ch 3x3 pad 1) -> relu -> pool2 -> conv(16ch 3x3 pad 1) -> relu ->
    pool2 -> flatten -> dense(4).  Biases start at zero.
    """
    if image_size < 8 or image_size % 4 != 0:
        raise ValueError("image size must be >= 8 and divisible by 4 (two 2x2 pools)")
    rng = Rng(seed)
    w1 = _he_fill(rng, (8, 3, 3, 1), fan_in=9)
    w2 = _he_fill(rng, (16, 3, 3, 8), fan_in=72)
    dense_in = (image_size // 4) ** 2 * 16
    w3 = _he_fill(rng, (4, dense_in), fan_in=dense_in)
    layers = [
        Conv2D("conv1", Tensor(w1), Tensor(np.zeros(8)), stride=1, padding=1),
        ReLU("relu1"),
        MaxPool("pool1"),
        Conv2D("conv2", Tensor(w2), Tensor(np.zeros(16)), stride=1, padding=1),
        ReLU("relu2"),
        MaxPool("pool2"),
        Flatten("flatten"),
        Dense("dense", Tensor(w3), Tensor(np.zeros(4))),
    ]
    return Network(layers, (image_size, image_size, 1))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0  # batch schedule seed

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class TrainResult:
    network: Network
    loss_curve: list      # entry 0 = before any update, entry e = after epoch e
    final_accuracy: float


def _params_of(net: Network) -> dict:
    out = {}
    for ly in net.param_layers():
        out[(ly.name, "weights")] = ly.weights.arr.copy()
        out[(ly.name, "bias")] = ly.bias.arr.copy()
    return out


def _mean_loss(net, data: SyntheticDataset) -> float:
    total = 0.0
    for x, label in zip(data.images, data.labels):
        total += cross_entropy(net.forward(x), label)
    return total / len(data.images)


def _batch_mean_grads(net, data: SyntheticDataset, idxs) -> dict:
    sums = None
    for idx in idxs:
        gs = net.loss_backward(net.forward(data.images[idx]), data.labels[idx])
        if sums is None:
            sums = {
                (name, key): t.arr.copy()
                for name, pdict in gs.wrt_params.items()
                for key, t in pdict.items()
            }
        else:
            for name, pdict in gs.wrt_params.items():
                for key, t in pdict.items():
                    sums[(name, key)] += t.arr
    inv = 1.0 / len(idxs)
    return {k: v * inv for k, v in sums.items()}


def _epoch_order(n: int, schedule_seed: int, epoch: int) -> list:
    order = list(range(n))
    Rng(child_seed(schedule_seed, epoch)).shuffle(order)
    return order


def accuracy(net, data: SyntheticDataset) -> float:
    hits = sum(int(net.predict(x) == label) for x, label in zip(data.images, data.labels))
    return hits / len(data.images)


def train_sgd(net: Network, data: SyntheticDataset, cfg: TrainConfig) -> TrainResult:
    """Plain SGD on cross-entropy with a seeded, fixed batch schedule.

    The loss curve holds the full-dataset mean loss before training and after
    each epoch; a non-finite loss aborts with TrainingDiverged.
    """
    if not data.images:
        raise ValueError("dataset is empty")
    if max(data.labels) >= net.class_count:
        raise ValueError("dataset labels exceed the network's class count")
    params = _params_of(net)
    cur = net.with_params(params)
    losses = [_mean_loss(cur, data)]
    if not math.isfinite(losses[0]):
        raise TrainingDiverged(f"initial loss is {losses[0]}")
    for epoch in range(cfg.epochs):
        order = _epoch_order(len(data.images), cfg.seed, epoch)
        for at in range(0, len(order), cfg.batch_size):
            grads = _batch_mean_grads(cur, data, order[at : at + cfg.batch_size])
            for k in params:
                params[k] = params[k] - cfg.learning_rate * grads[k]
            cur = net.with_params(params)
        losses.append(_mean_loss(cur, data))
        if not math.isfinite(losses[-1]):
            raise TrainingDiverged(f"loss became {losses[-1]} after epoch {epoch + 1}")
    return TrainResult(cur, losses, accuracy(cur, data))


# ---------------------------------------------------------------------------
# lockstep twin training


@dataclass
class LockstepResult:
    steps: int
    max_param_divergence: float      # across the whole run, checked every step
    max_step_grad_deviation: float   # batch-mean gradient gap, worst step


def lockstep_training_check(
    seed: int,
    data: SyntheticDataset,
    cfg: TrainConfig,
    attack,
    shift_builder=None,
    max_steps: int = None,
    stop_threshold: float = None,
) -> LockstepResult:
    """Train a fresh network and its shifted twin on identical schedules.

    Both start from init_network(seed); the twin gets the shift branch
    (shift_builder defaults to apply_logit_shift) rebuilt on its drifting
    parameters every step.  Parameters are compared after every SGD step.
    `stop_threshold` ends the run early once divergence exceeds it (for
    negative controls that are expected to blow up).
    """
    from .surgery import apply_logit_shift

    if shift_builder is None:
        shift_builder = apply_logit_shift
    base = init_network(seed, data.image_size)
    p_plain = _params_of(base)
    p_twin = _params_of(base)
    max_div = 0.0
    max_grad_dev = 0.0
    steps = 0
    for epoch in range(cfg.epochs):
        order = _epoch_order(len(data.images), cfg.seed, epoch)
        for at in range(0, len(order), cfg.batch_size):
            idxs = order[at : at + cfg.batch_size]
            net_plain = base.with_params(p_plain)
            net_twin = shift_builder(base.with_params(p_twin), attack)
            g_plain = _batch_mean_grads(net_plain, data, idxs)
            g_twin = _batch_mean_grads(net_twin, data, idxs)
            max_grad_dev = max(
                max_grad_dev,
                max(float(np.abs(g_plain[k] - g_twin[k]).max()) for k in g_plain),
            )
            for k in p_plain:
                p_plain[k] = p_plain[k] - cfg.learning_rate * g_plain[k]
                p_twin[k] = p_twin[k] - cfg.learning_rate * g_twin[k]
            steps += 1
            max_div = max(
                max_div,
                max(float(np.abs(p_plain[k] - p_twin[k]).max()) for k in p_plain),
            )
            if max_steps is not None and steps >= max_steps:
                return LockstepResult(steps, max_div, max_grad_dev)
            if stop_threshold is not None and max_div > stop_threshold:
                return LockstepResult(steps, max_div, max_grad_dev)
    return LockstepResult(steps, max_div, max_grad_dev)
