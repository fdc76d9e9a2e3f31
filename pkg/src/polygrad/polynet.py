"""Cubic-activation networks and the dual-stream forward pass.

A network is a stack of fully connected layers whose per-neuron
activation is a learnable cubic phi(z) = c0 + c1 z + c2 z^2 + c3 z^3,
followed by a linear head. ``forward_values`` runs the ordinary value
stream; ``forward_dual`` additionally propagates, per sample, the
cumulative Jacobian of each layer's output with respect to the network
input, updated analytically layer by layer:

    S1 = diag(phi'(z1)) @ W1
    Sl = diag(phi'(zl)) @ Wl @ S(l-1)          for l >= 2
    head_jacobian = W_head @ SL

No backward pass and no second-order graph is involved; the extra cost
is one (width x width) @ (width x d) product per layer per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MemoryBudgetError, NumericOverflowError, ShapeError
from .linalg import Rng, gauss_init

__all__ = [
    "ActivationCoeffs",
    "PolyLayer",
    "PolyNetwork",
    "DualState",
    "poly_eval",
    "poly_deriv",
    "forward_values",
    "forward_dual",
    "dreg_penalty",
    "count_parameters",
]

# Default cap on the per-call Jacobian-stream allocation. All S blocks for
# a batch take batch * sum(width_l) * d doubles; reject configurations that
# would exceed this many bytes (callers may raise the cap explicitly).
DEFAULT_DUAL_BYTES = 1 << 29  # 512 MiB


@dataclass
class ActivationCoeffs:
    """Per-neuron cubic coefficients; each vector has length = layer width."""

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray

    def __post_init__(self):
        self.c0 = np.asarray(self.c0, dtype=np.float64)
        self.c1 = np.asarray(self.c1, dtype=np.float64)
        self.c2 = np.asarray(self.c2, dtype=np.float64)
        self.c3 = np.asarray(self.c3, dtype=np.float64)
        widths = {v.shape for v in (self.c0, self.c1, self.c2, self.c3)}
        if len(widths) != 1 or self.c0.ndim != 1:
            raise ShapeError(f"coefficient vectors must share one 1-D shape, got {widths}")

    @property
    def width(self) -> int:
        return self.c0.size

    @classmethod
    def identity(cls, width: int) -> "ActivationCoeffs":
        """phi(z) = z exactly."""
        z = np.zeros(width)
        return cls(z.copy(), np.ones(width), z.copy(), z.copy())

    @classmethod
    def near_identity(cls, rng: Rng, width: int, noise_std: float = 0.01) -> "ActivationCoeffs":
        """Identity start plus small noise on the curvature terms.

        A cubic explodes quickly for |z| > 1, so training starts from
        phi ~= z and lets the optimizer grow the higher-order terms.
        """
        return cls(
            np.zeros(width),
            np.ones(width),
            noise_std * rng.standard_normal(width),
            noise_std * rng.standard_normal(width),
        )


def _check_width(coeffs: ActivationCoeffs, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != coeffs.width:
        raise ShapeError(
            f"pre-activation shape {z.shape} does not match coefficient width {coeffs.width}"
        )
    return z


def poly_eval(coeffs: ActivationCoeffs, z: np.ndarray) -> np.ndarray:
    """Elementwise phi(z), coefficients broadcast per column."""
    z = _check_width(coeffs, z)
    return coeffs.c0 + z * (coeffs.c1 + z * (coeffs.c2 + z * coeffs.c3))


def poly_deriv(coeffs: ActivationCoeffs, z: np.ndarray, order: int = 1) -> np.ndarray:
    """Analytic phi'(z) (order 1) or phi''(z) (order 2)."""
    z = _check_width(coeffs, z)
    if order == 1:
        return coeffs.c1 + z * (2.0 * coeffs.c2 + 3.0 * coeffs.c3 * z)
    if order == 2:
        return 2.0 * coeffs.c2 + 6.0 * coeffs.c3 * z
    raise ValueError(f"derivative order must be 1 or 2, got {order}")


@dataclass
class PolyLayer:
    """Fully connected layer with learnable cubic activation."""

    weights: np.ndarray  # (out_width, in_width)
    bias: np.ndarray  # (out_width,)
    coeffs: ActivationCoeffs  # width out_width

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError("layer weights must be 2-D")
        out_w = self.weights.shape[0]
        if self.bias.shape != (out_w,) or self.coeffs.width != out_w:
            raise ShapeError(
                f"layer fields disagree on width: weights {self.weights.shape}, "
                f"bias {self.bias.shape}, coeffs {self.coeffs.width}"
            )

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]


@dataclass
class PolyNetwork:
    """Stack of PolyLayers plus a linear classification head."""

    layers: list[PolyLayer]
    head_weights: np.ndarray  # (num_classes, last_width)
    head_bias: np.ndarray  # (num_classes,)

    activation_kind = "poly"

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        self.head_weights = np.asarray(self.head_weights, dtype=np.float64)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float64)
        prev = self.layers[0].in_width
        for i, layer in enumerate(self.layers):
            if layer.in_width != prev:
                raise ShapeError(f"layer {i} expects input width {layer.in_width}, got {prev}")
            prev = layer.out_width
        if self.head_weights.ndim != 2 or self.head_weights.shape[1] != prev:
            raise ShapeError(
                f"head weights {self.head_weights.shape} do not conform to last width {prev}"
            )
        if self.head_bias.shape != (self.head_weights.shape[0],):
            raise ShapeError("head bias does not conform to head weights")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_width

    @property
    def num_classes(self) -> int:
        return self.head_weights.shape[0]

    @property
    def widths(self) -> list[int]:
        return [layer.out_width for layer in self.layers]

    @classmethod
    def build(
        cls,
        rng: Rng,
        input_dim: int,
        widths: list[int],
        num_classes: int,
        coeff_noise: float = 0.01,
    ) -> "PolyNetwork":
        """Fresh network: W ~ N(0, 1/fan_in), zero bias, near-identity cubics."""
        layers = []
        fan_in = input_dim
        for i, w in enumerate(widths):
            layers.append(
                PolyLayer(
                    gauss_init(rng.spawn("W", i), w, fan_in, 1.0 / np.sqrt(fan_in)),
                    np.zeros(w),
                    ActivationCoeffs.near_identity(rng.spawn("coeffs", i), w, coeff_noise),
                )
            )
            fan_in = w
        head_w = gauss_init(rng.spawn("head"), num_classes, fan_in, 1.0 / np.sqrt(fan_in))
        return cls(layers, head_w, np.zeros(num_classes))

    def parameters(self) -> dict[str, np.ndarray]:
        """Ordered registry of every trainable array, one slot each."""
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.W"] = layer.weights
            params[f"layer{i}.b"] = layer.bias
            params[f"layer{i}.c0"] = layer.coeffs.c0
            params[f"layer{i}.c1"] = layer.coeffs.c1
            params[f"layer{i}.c2"] = layer.coeffs.c2
            params[f"layer{i}.c3"] = layer.coeffs.c3
        params["head.W"] = self.head_weights
        params["head.b"] = self.head_bias
        return params


@dataclass
class DualState:
    """Cached streams of one forward pass.

    ``preacts``/``acts`` hold z and phi(z) per layer, (batch, width).
    ``jacobians``, when populated, holds one (batch, width, d) block per
    layer: jacobians[l][b] is the Jacobian of layer l's output w.r.t.
    the input row b. ``head_jacobian`` is (batch, num_classes, d). The
    implicit layer-0 Jacobian is the d x d identity and is never stored.
    """

    preacts: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)
    jacobians: list[np.ndarray] | None = None
    head_jacobian: np.ndarray | None = None


def _check_input(net: PolyNetwork, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input_dim {net.input_dim}")
    return x


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(f"non-finite values in {where}", layer=where)


def forward_values(net: PolyNetwork, x: np.ndarray) -> tuple[np.ndarray, DualState]:
    """Value stream only: logits plus the z/phi(z) cache."""
    x = _check_input(net, x)
    cache = DualState()
    h = x
    for i, layer in enumerate(net.layers):
        z = h @ layer.weights.T + layer.bias
        h = poly_eval(layer.coeffs, z)
        _check_finite(h, f"layer {i}")
        cache.preacts.append(z)
        cache.acts.append(h)
    logits = h @ net.head_weights.T + net.head_bias
    _check_finite(logits, "head")
    return logits, cache


def forward_dual(
    net: PolyNetwork, x: np.ndarray, max_dual_bytes: int = DEFAULT_DUAL_BYTES
) -> tuple[np.ndarray, DualState]:
    """Value stream plus per-sample cumulative input-Jacobians.

    Memory for the Jacobian blocks is batch * sum(widths) * d doubles;
    configurations beyond ``max_dual_bytes`` are rejected up front.
    """
    x = _check_input(net, x)
    batch, d = x.shape
    need = 8 * batch * d * (sum(net.widths) + net.num_classes)
    if need > max_dual_bytes:
        raise MemoryBudgetError(
            f"dual stream needs {need} bytes for batch={batch}, d={d}, "
            f"widths={net.widths}; cap is {max_dual_bytes}"
        )

    dual = DualState(jacobians=[])
    h = x
    S = None  # (batch, width, d); layer-0 value is the implicit identity
    for i, layer in enumerate(net.layers):
        z = h @ layer.weights.T + layer.bias
        h = poly_eval(layer.coeffs, z)
        _check_finite(h, f"layer {i}")
        fprime = poly_deriv(layer.coeffs, z, order=1)
        if S is None:
            S = fprime[:, :, None] * layer.weights[None, :, :]
        else:
            S = fprime[:, :, None] * (layer.weights @ S)
        dual.preacts.append(z)
        dual.acts.append(h)
        dual.jacobians.append(S)
    logits = h @ net.head_weights.T + net.head_bias
    _check_finite(logits, "head")
    dual.head_jacobian = net.head_weights @ S
    return logits, dual


def dreg_penalty(
    dual: DualState,
    include_layers: set[int] | None = None,
    include_head: bool = False,
) -> float:
    """Mean over batch and included layers of ||S_l||_F^2.

    ``include_layers`` defaults to every hidden layer; the head Jacobian
    is brought in separately via ``include_head``. The double mean keeps
    the penalty weight scale-free in batch size and depth.
    """
    if dual.jacobians is None:
        raise ValueError("dual state has no Jacobian stream; run forward_dual")
    n_hidden = len(dual.jacobians)
    if include_layers is None:
        include_layers = set(range(n_hidden))
    bad = [l for l in include_layers if not 0 <= l < n_hidden]
    if bad:
        raise ValueError(f"layer indices {bad} out of range for {n_hidden} layers")
    blocks = [dual.jacobians[l] for l in sorted(include_layers)]
    if include_head:
        if dual.head_jacobian is None:
            raise ValueError("dual state has no head Jacobian")
        blocks.append(dual.head_jacobian)
    if not blocks:
        raise ValueError("penalty over an empty layer set")
    batch = blocks[0].shape[0]
    total = sum(float(np.sum(S * S)) for S in blocks)
    return total / (batch * len(blocks))


def count_parameters(net: PolyNetwork) -> int:
    return sum(p.size for p in net.parameters().values())
