"""Checkpoint files: JSON with every float as 17-significant-digit text.

Decimal text round-trips IEEE doubles exactly and, unlike binary
blobs, diffs cleanly and is platform-independent; with sorted keys and
fixed indentation, save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .baselines import BaselineNet, ReluLayer
from .data import PreprocessStats
from .errors import ConfigError, ShapeError
from .polynet import ActivationCoeffs, PolyLayer, PolyNetwork

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_bytes", "CheckpointBundle"]

FORMAT_VERSION = 1


def _f(x: float) -> str:
    return format(float(x), ".17g")


def _encode_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [_f(v) for v in np.asarray(arr).ravel()]}


def _decode_array(obj: dict) -> np.ndarray:
    arr = np.asarray([float(s) for s in obj["data"]], dtype=np.float64)
    return arr.reshape(obj["shape"])


class CheckpointBundle:
    """A loaded checkpoint: the network plus its training provenance."""

    def __init__(self, net, provenance: dict, preprocess: PreprocessStats | None):
        self.net = net
        self.provenance = provenance
        self.preprocess = preprocess


def _checkpoint_dict(net, provenance: dict | None, preprocess: PreprocessStats | None) -> dict:
    obj = {
        "format_version": FORMAT_VERSION,
        "kind": net.activation_kind,
        "input_dim": net.input_dim,
        "num_classes": net.num_classes,
        "widths": net.widths,
        "params": {name: _encode_array(arr) for name, arr in net.parameters().items()},
        "provenance": dict(provenance or {}),
    }
    if net.activation_kind == "relu":
        obj["dropout_rate"] = _f(net.dropout_rate)
    if preprocess is not None:
        obj["preprocess"] = {
            "feature_names": list(preprocess.feature_names),
            "impute_values": {k: _f(v) for k, v in sorted(preprocess.impute_values.items())},
            "means": _encode_array(preprocess.means),
            "stds": _encode_array(preprocess.stds),
        }
    return obj


def checkpoint_bytes(net, provenance=None, preprocess=None) -> bytes:
    text = json.dumps(_checkpoint_dict(net, provenance, preprocess), sort_keys=True, indent=2)
    return (text + "\n").encode("utf-8")


def save_checkpoint(path, net, provenance=None, preprocess=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net, provenance, preprocess))


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format_version {version!r}")
    params = {name: _decode_array(spec) for name, spec in obj["params"].items()}
    widths = obj["widths"]
    kind = obj["kind"]

    if kind == "poly":
        layers = [
            PolyLayer(
                params[f"layer{i}.W"],
                params[f"layer{i}.b"],
                ActivationCoeffs(*(params[f"layer{i}.c{k}"] for k in range(4))),
            )
            for i in range(len(widths))
        ]
        net = PolyNetwork(layers, params["head.W"], params["head.b"])
    elif kind == "relu":
        layers = [
            ReluLayer(params[f"layer{i}.W"], params[f"layer{i}.b"]) for i in range(len(widths))
        ]
        net = BaselineNet(
            layers, params["head.W"], params["head.b"], dropout_rate=float(obj["dropout_rate"])
        )
    else:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")

    if net.input_dim != obj["input_dim"] or net.widths != widths:
        raise ShapeError(f"{path}: stored shapes disagree with parameter arrays")

    preprocess = None
    if "preprocess" in obj:
        pp = obj["preprocess"]
        preprocess = PreprocessStats(
            feature_names=list(pp["feature_names"]),
            impute_values={k: float(v) for k, v in pp["impute_values"].items()},
            means=_decode_array(pp["means"]),
            stds=_decode_array(pp["stds"]),
        )
    return CheckpointBundle(net, obj.get("provenance", {}), preprocess)
