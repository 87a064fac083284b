"""Model manifest serialization (versioned JSON) and dataset export.

Manifest schema (format "logitshift-model", version 1):

    {
      "format": "logitshift-model",
      "format_version": 1,
      "tool_version": "<package version>",
      "input_shape": [H, W, C],
      "class_count": n,
      "layers": [
        {"kind": "conv2d", "name": ..., "stride": s, "padding": p,
         "weights": nested lists (out_ch, kh, kw, in_ch), "bias": [...]},
        {"kind": "relu", "name": ...},
        {"kind": "maxpool", "name": ..., "window": [h, w], "stride": [sh, sw]},
        {"kind": "flatten", "name": ...},
        {"kind": "dense", "name": ..., "weights": (out, in), "bias": [...]}
      ],
      "attack": null
              | {"tap_layer": ..., "tap_row": i, "tap_col": j, "gain": K,
                 "shifted_class": null | c}
    }

Parameters are decimal literals produced by Python's shortest-round-trip
float repr, so parse(serialize(net)) reproduces every float64 bit for bit.
A non-null "shifted_class" marks the deliberately broken single-class
variant used as a negative control.  All writes are atomic.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import __version__
from .network import Conv2D, Dense, Flatten, MaxPool, Network, ReLU
from .surgery import AttackConfig, AttackedNetwork, SingleClassShiftNetwork
from .tensor import Tensor

MODEL_FORMAT = "logitshift-model"
FORMAT_VERSION = 1


def dump_json(path, obj) -> None:
    """Deterministic, atomic JSON write (sorted keys, repr floats)."""
    payload = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(payload)
    os.replace(tmp, path)


def load_json(path):
    with open(path) as f:
        return json.load(f)


def _layer_to_dict(ly) -> dict:
    if isinstance(ly, Conv2D):
        return {
            "kind": "conv2d",
            "name": ly.name,
            "stride": ly.stride,
            "padding": ly.padding,
            "weights": ly.weights.tolist(),
            "bias": ly.bias.tolist(),
        }
    if isinstance(ly, ReLU):
        return {"kind": "relu", "name": ly.name}
    if isinstance(ly, MaxPool):
        return {"kind": "maxpool", "name": ly.name, "window": list(ly.window), "stride": list(ly.stride)}
    if isinstance(ly, Flatten):
        return {"kind": "flatten", "name": ly.name}
    if isinstance(ly, Dense):
        return {"kind": "dense", "name": ly.name, "weights": ly.weights.tolist(), "bias": ly.bias.tolist()}
    raise TypeError(f"cannot serialize layer type {type(ly).__name__}")


def _layer_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "conv2d":
        return Conv2D(d["name"], Tensor(d["weights"]), Tensor(d["bias"]),
                      stride=int(d["stride"]), padding=int(d["padding"]))
    if kind == "relu":
        return ReLU(d["name"])
    if kind == "maxpool":
        return MaxPool(d["name"], window=tuple(d["window"]), stride=tuple(d["stride"]))
    if kind == "flatten":
        return Flatten(d["name"])
    if kind == "dense":
        return Dense(d["name"], Tensor(d["weights"]), Tensor(d["bias"]))
    raise ValueError(f"unknown layer kind {kind!r}")


def model_to_dict(net) -> dict:
    attack = None
    base = net
    if isinstance(net, AttackedNetwork):
        base = net.base
        attack = {
            "tap_layer": net.config.tap_layer,
            "tap_row": net.config.tap_row,
            "tap_col": net.config.tap_col,
            "gain": net.config.gain,
            "shifted_class": net.shifted_class if isinstance(net, SingleClassShiftNetwork) else None,
        }
    return {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "input_shape": list(base.input_shape),
        "class_count": base.class_count,
        "layers": [_layer_to_dict(ly) for ly in base.layers],
        "attack": attack,
    }


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} document (format {doc.get('format')!r})")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {doc.get('format_version')!r}")
    net = Network([_layer_from_dict(d) for d in doc["layers"]], doc["input_shape"])
    if net.class_count != doc.get("class_count"):
        raise ValueError("class_count does not match the final layer")
    attack = doc.get("attack")
    if attack is None:
        return net
    cfg = AttackConfig(
        tap_layer=attack["tap_layer"],
        tap_row=int(attack["tap_row"]),
        tap_col=int(attack["tap_col"]),
        gain=float(attack["gain"]),
    )
    if attack.get("shifted_class") is not None:
        return SingleClassShiftNetwork(net, cfg, int(attack["shifted_class"]))
    return AttackedNetwork(net, cfg)


def save_model(path, net) -> None:
    dump_json(path, model_to_dict(net))


def load_model(path):
    return model_from_dict(load_json(path))


# ---------------------------------------------------------------------------
# dataset export


def export_dataset(dataset, out_dir) -> None:
    """PGM image per sample (16-bit) plus a manifest with labels and seed."""
    from .netpbm import from_unit_float, write_pgm

    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, img in enumerate(dataset.images):
        name = f"img_{i:04d}.pgm"
        write_pgm(os.path.join(out_dir, name), from_unit_float(img.arr[:, :, 0], 65535), maxval=65535)
        files.append(name)
    dump_json(
        os.path.join(out_dir, "manifest.json"),
        {
            "format": "logitshift-dataset",
            "format_version": 1,
            "seed": dataset.seed,
            "image_size": dataset.image_size,
            "count": len(dataset.images),
            "labels": list(dataset.labels),
            "files": files,
        },
    )


def load_dataset_dir(path):
    """(images, labels) from an exported dataset directory.

    Images come back quantized to the PGM depth; exact values are recovered
    by regenerating from the manifest seed instead.
    """
    from .netpbm import read_netpbm, to_gray_float

    doc = load_json(os.path.join(path, "manifest.json"))
    if doc.get("format") != "logitshift-dataset":
        raise ValueError(f"{path}: not a dataset directory")
    images = []
    for name in doc["files"]:
        values, maxval = read_netpbm(os.path.join(path, name))
        images.append(Tensor(to_gray_float(values, maxval)[:, :, None]))
    return images, [int(v) for v in doc["labels"]]
