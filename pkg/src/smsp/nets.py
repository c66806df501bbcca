"""Prunable networks: small CNNs and MLPs whose conv filters and hidden
nodes each carry a learnable mask score.

A unit (conv output filter or dense hidden node) is the granularity of
pruning. Scores multiply the unit's post-activation output, so a zero
score removes the unit's contribution exactly; `extract_subnetwork`
then drops the pruned units physically and slices the consumers'
input weights to match. The final classifier layer is never prunable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import (
    Parameter,
    Tensor,
    add_bias,
    avg_pool2,
    channel_scale,
    check_finite,
    col_scale,
    conv2d,
    matmul,
    mul,
    relu,
    reshape,
)

__all__ = [
    "ConvSpec",
    "DenseSpec",
    "Architecture",
    "MaskedNetwork",
    "FlopsLedger",
    "desk_cnn",
    "desk_mlp",
    "init_network",
    "clone_network",
    "masked_forward",
    "extract_subnetwork",
    "count_flops",
    "track_training_flops",
    "save_network",
    "load_network",
]


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 2  # 2 = 2x2 average pool after the masked activation, 1 = none


@dataclass(frozen=True)
class DenseSpec:
    width: int
    activation: str = "relu"  # "relu" | "linear"


@dataclass(frozen=True)
class Architecture:
    arch_id: str
    input_shape: tuple
    layers: tuple
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 output classes")
        seen_dense = False
        for spec in self.layers:
            if isinstance(spec, ConvSpec):
                if seen_dense:
                    raise ValueError("conv layers must precede dense layers")
                if len(self.input_shape) != 3:
                    raise ValueError("conv layers need a (C, H, W) input shape")
                if spec.pool not in (1, 2):
                    raise ValueError("only 2x2 pooling (or none) is supported")
            elif isinstance(spec, DenseSpec):
                seen_dense = True
                if spec.activation not in ("relu", "linear"):
                    raise ValueError(f"unknown activation {spec.activation!r}")
            else:
                raise ValueError(f"unknown layer spec {spec!r}")
        # walking the dims validates pooling divisibility early
        _spatial_walk(self)

    @property
    def n_prunable(self) -> int:
        return sum(_units_of(spec) for spec in self.layers)

    def unit_slices(self) -> list[tuple[int, int]]:
        """Global [start, stop) unit-id range of each prunable layer."""
        out, start = [], 0
        for spec in self.layers:
            n = _units_of(spec)
            out.append((start, start + n))
            start += n
        return out

    def to_dict(self) -> dict:
        layers = []
        for spec in self.layers:
            if isinstance(spec, ConvSpec):
                layers.append(
                    {
                        "kind": "conv",
                        "out_channels": spec.out_channels,
                        "kernel": spec.kernel,
                        "stride": spec.stride,
                        "padding": spec.padding,
                        "pool": spec.pool,
                    }
                )
            else:
                layers.append({"kind": "dense", "width": spec.width, "activation": spec.activation})
        return {
            "arch_id": self.arch_id,
            "input_shape": list(self.input_shape),
            "layers": layers,
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "Architecture":
        layers = []
        for spec in d["layers"]:
            if spec["kind"] == "conv":
                layers.append(
                    ConvSpec(
                        spec["out_channels"],
                        spec["kernel"],
                        spec["stride"],
                        spec["padding"],
                        spec["pool"],
                    )
                )
            elif spec["kind"] == "dense":
                layers.append(DenseSpec(spec["width"], spec["activation"]))
            else:
                raise ValueError(f"unknown layer kind {spec['kind']!r}")
        return Architecture(d["arch_id"], tuple(d["input_shape"]), tuple(layers), d["num_classes"])


def _units_of(spec) -> int:
    return spec.out_channels if isinstance(spec, ConvSpec) else spec.width


def _spatial_walk(arch: Architecture) -> list[tuple[int, int, int, int]]:
    """Per conv layer: (h_conv, w_conv, h_after_pool, w_after_pool)."""
    dims = []
    if len(arch.input_shape) != 3:
        return dims
    _, h, w = arch.input_shape
    for spec in arch.layers:
        if not isinstance(spec, ConvSpec):
            break
        ho = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
        wo = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
        if ho <= 0 or wo <= 0:
            raise ValueError(f"conv layer collapses spatial dims to {ho}x{wo}")
        h, w = ho, wo
        if spec.pool == 2:
            if h % 2 or w % 2:
                raise ValueError(f"2x2 pool needs even dims, got {h}x{w}")
            h, w = h // 2, w // 2
        dims.append((ho, wo, h, w))
    return dims


def desk_cnn(num_classes: int = 20, input_shape: tuple = (1, 16, 16)) -> Architecture:
    """Reference desk-scale CNN: conv 8 and 16 filters (3x3), dense 32."""
    c, h, w = input_shape
    return Architecture(
        arch_id=f"cnn8-16-d32/in{c}x{h}x{w}/out{num_classes}",
        input_shape=tuple(input_shape),
        layers=(ConvSpec(8), ConvSpec(16), DenseSpec(32)),
        num_classes=num_classes,
    )


def desk_mlp(num_classes: int = 20, input_dim: int = 256) -> Architecture:
    """Reference desk-scale MLP: two hidden layers of 64 nodes."""
    return Architecture(
        arch_id=f"mlp64-64/in{input_dim}/out{num_classes}",
        input_shape=(input_dim,),
        layers=(DenseSpec(64), DenseSpec(64)),
        num_classes=num_classes,
    )


class MaskedNetwork:
    """Parameters plus per-unit mask state for one architecture.

    `scores[l]` is a trainable Parameter (one entry per unit of layer l)
    and `gates[l]` a constant 0/1 array marking the retained set. The
    gate multiplies the score inside the graph, so pruned units receive
    an exactly-zero score gradient. `scores is None` marks a plain
    (extracted, mask-free) network.
    """

    def __init__(self, arch, weights, biases, scores, gates, dtype):
        self.arch = arch
        self.weights = weights
        self.biases = biases
        self.scores = scores
        self.gates = gates
        self.dtype = dtype

    # -------------------------------------------------------- parameters

    def all_parameters(self) -> list[Parameter]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        if self.scores is not None:
            params.extend(self.scores)
        return params

    def weight_parameters(self) -> list[Parameter]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def set_weights_trainable(self, flag: bool) -> None:
        for p in self.weight_parameters():
            p.set_trainable(flag)

    # -------------------------------------------------------- mask state

    @property
    def masked(self) -> bool:
        return self.scores is not None

    @property
    def n_prunable(self) -> int:
        return self.arch.n_prunable

    def score_vector(self) -> np.ndarray:
        """Concatenated per-unit scores (float32 copy), zeros at pruned units."""
        if not self.masked:
            raise ValueError("network carries no mask")
        return np.concatenate([s.data.astype(np.float32) for s in self.scores])

    def gate_vector(self) -> np.ndarray:
        if not self.masked:
            raise ValueError("network carries no mask")
        return np.concatenate([g for g in self.gates]).astype(np.float32)

    def retained_per_layer(self) -> list[int]:
        if not self.masked:
            return [_units_of(s) for s in self.arch.layers]
        return [int(g.sum()) for g in self.gates]

    def pruning_ratio(self) -> float:
        n = self.n_prunable
        return 1.0 - sum(self.retained_per_layer()) / n if n else 0.0

    def set_mask(self, scores: np.ndarray, gates: np.ndarray | None = None) -> None:
        """Load a flat score vector; the retained set defaults to nonzero scores."""
        if not self.masked:
            raise ValueError("network carries no mask")
        scores = np.asarray(scores)
        if scores.shape != (self.n_prunable,):
            raise ValueError(f"expected {self.n_prunable} scores, got {scores.shape}")
        if gates is None:
            gates = (scores != 0).astype(self.dtype)
        gates = np.asarray(gates).astype(self.dtype)
        for (start, stop), s, g in zip(self.arch.unit_slices(), self.scores, self.gates):
            s.data = scores[start:stop].astype(self.dtype)
            g[:] = gates[start:stop]

    def prune_units(self, layer: int, unit_mask: np.ndarray) -> None:
        """Zero the given units of one layer: gate off and score to exactly 0."""
        self.gates[layer][unit_mask] = 0
        self.scores[layer].data[unit_mask] = 0


def init_network(arch: Architecture, seed: int, dtype=np.float32, masked: bool = True) -> MaskedNetwork:
    """He-initialised network; mask scores start at 1 with everything retained."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    in_units = arch.input_shape[0] if len(arch.input_shape) == 3 else arch.input_shape[0]
    feat = None
    dims = _spatial_walk(arch)
    conv_i = 0
    for spec in arch.layers:
        if isinstance(spec, ConvSpec):
            fan_in = in_units * spec.kernel * spec.kernel
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (spec.out_channels, in_units, spec.kernel, spec.kernel))
            weights.append(Parameter(w, dtype=dtype))
            biases.append(Parameter(np.zeros(spec.out_channels), dtype=dtype))
            in_units = spec.out_channels
            feat = in_units * dims[conv_i][2] * dims[conv_i][3]
            conv_i += 1
        else:
            fan_in = feat if feat is not None else in_units
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, spec.width))
            weights.append(Parameter(w, dtype=dtype))
            biases.append(Parameter(np.zeros(spec.width), dtype=dtype))
            in_units = spec.width
            feat = spec.width
    fan_in = feat if feat is not None else in_units
    w = rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, arch.num_classes))
    weights.append(Parameter(w, dtype=dtype))
    biases.append(Parameter(np.zeros(arch.num_classes), dtype=dtype))
    scores = gates = None
    if masked:
        scores = [Parameter(np.ones(_units_of(s)), dtype=dtype) for s in arch.layers]
        gates = [np.ones(_units_of(s), dtype) for s in arch.layers]
    return MaskedNetwork(arch, weights, biases, scores, gates, dtype)


def clone_network(net: MaskedNetwork) -> MaskedNetwork:
    """Deep copy with fresh Parameters; trainable flags are preserved."""
    weights = [Parameter(w.data.copy(), trainable=w.trainable, dtype=net.dtype) for w in net.weights]
    biases = [Parameter(b.data.copy(), trainable=b.trainable, dtype=net.dtype) for b in net.biases]
    scores = gates = None
    if net.masked:
        scores = [Parameter(s.data.copy(), trainable=s.trainable, dtype=net.dtype) for s in net.scores]
        gates = [g.copy() for g in net.gates]
    return MaskedNetwork(net.arch, weights, biases, scores, gates, net.dtype)


def masked_forward(net: MaskedNetwork, batch) -> Tensor:
    """Forward pass; each retained unit's post-activation output is scaled
    by its (gated) score. Returns logits over all base classes."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch), dtype=net.dtype)
    arch = net.arch
    if len(arch.input_shape) == 1 and x.data.ndim > 2:
        x = reshape(x, (x.data.shape[0], -1))
    expected = (x.data.shape[0],) + tuple(arch.input_shape)
    if x.data.shape != expected:
        raise ValueError(f"batch shape {x.data.shape} does not match input {arch.input_shape}")
    t = x
    flattened = len(arch.input_shape) == 1
    for li, spec in enumerate(arch.layers):
        if isinstance(spec, ConvSpec):
            t = conv2d(t, net.weights[li], net.biases[li], spec.stride, spec.padding)
            t = relu(t)
            if net.masked:
                t = channel_scale(t, _gated_scores(net, li))
            if spec.pool == 2:
                t = avg_pool2(t)
        else:
            if not flattened:
                t = reshape(t, (t.data.shape[0], -1))
                flattened = True
            t = add_bias(matmul(t, net.weights[li]), net.biases[li])
            if spec.activation == "relu":
                t = relu(t)
            if net.masked:
                t = col_scale(t, _gated_scores(net, li))
    if not flattened:
        t = reshape(t, (t.data.shape[0], -1))
    logits = add_bias(matmul(t, net.weights[-1]), net.biases[-1])
    check_finite("logits", logits.data)
    return logits


def _gated_scores(net: MaskedNetwork, layer: int) -> Tensor:
    # gate as a constant factor keeps pruned units' score gradient at exactly 0
    return mul(net.scores[layer], Tensor(net.gates[layer]))


def extract_subnetwork(net: MaskedNetwork) -> MaskedNetwork:
    """Physically drop every gated-off unit and return a mask-free network.

    Weights are sliced from the source: a removed conv filter also removes
    the matching input-channel slices (or flattened feature columns) of its
    consumers. Forward output matches `masked_forward` of the source with
    scores set to 1 on the retained set.
    """
    arch = net.arch
    kept = []
    for li, spec in enumerate(arch.layers):
        k = (net.gates[li] > 0) if net.masked else np.ones(_units_of(spec), bool)
        if int(k.sum()) == 0:
            raise ValueError(f"layer {li} would be left with 0 units")
        kept.append(np.flatnonzero(k))
    dims = _spatial_walk(arch)
    new_layers = []
    for spec, k in zip(arch.layers, kept):
        if isinstance(spec, ConvSpec):
            new_layers.append(
                ConvSpec(len(k), spec.kernel, spec.stride, spec.padding, spec.pool)
            )
        else:
            new_layers.append(DenseSpec(len(k), spec.activation))
    sub_arch = Architecture(
        arch_id=f"{arch.arch_id}#sub{sum(len(k) for k in kept)}",
        input_shape=arch.input_shape,
        layers=tuple(new_layers),
        num_classes=arch.num_classes,
    )
    weights, biases = [], []
    prev_kept = None  # indices of retained units in the previous prunable layer
    prev_was_conv = False
    conv_i = 0
    for li, spec in enumerate(arch.layers):
        w = net.weights[li].data
        b = net.biases[li].data
        k = kept[li]
        if isinstance(spec, ConvSpec):
            wk = w[k]
            if prev_kept is not None:
                wk = wk[:, prev_kept]
            weights.append(Parameter(wk.copy(), dtype=net.dtype))
            biases.append(Parameter(b[k].copy(), dtype=net.dtype))
            prev_kept = k
            prev_was_conv = True
            conv_i += 1
        else:
            win = w
            if prev_kept is not None:
                rows = _input_rows(prev_kept, prev_was_conv, dims, conv_i)
                win = w[rows]
            weights.append(Parameter(win[:, k].copy(), dtype=net.dtype))
            biases.append(Parameter(b[k].copy(), dtype=net.dtype))
            prev_kept = k
            prev_was_conv = False
    w = net.weights[-1].data
    b = net.biases[-1].data
    if prev_kept is not None:
        rows = _input_rows(prev_kept, prev_was_conv, dims, conv_i)
        w = w[rows]
    weights.append(Parameter(w.copy(), dtype=net.dtype))
    biases.append(Parameter(b.copy(), dtype=net.dtype))
    return MaskedNetwork(sub_arch, weights, biases, None, None, net.dtype)


def _input_rows(prev_kept, prev_was_conv, dims, conv_i):
    """Rows of a dense weight matrix fed by the previous layer's kept units."""
    if not prev_was_conv:
        return prev_kept
    h, w = dims[conv_i - 1][2], dims[conv_i - 1][3]
    hw = h * w
    return (prev_kept[:, None] * hw + np.arange(hw)[None, :]).ravel()


def count_flops(net: MaskedNetwork) -> int:
    """Forward multiply-add FLOPs per sample, counting retained units only."""
    arch = net.arch
    retained = net.retained_per_layer()
    dims = _spatial_walk(arch)
    total = 0
    in_units = arch.input_shape[0]
    feat = None
    conv_i = 0
    for li, spec in enumerate(arch.layers):
        r = retained[li]
        if isinstance(spec, ConvSpec):
            ho, wo = dims[conv_i][0], dims[conv_i][1]
            total += 2 * spec.kernel * spec.kernel * in_units * r * ho * wo
            in_units = r
            feat = r * dims[conv_i][2] * dims[conv_i][3]
            conv_i += 1
        else:
            fan_in = feat if feat is not None else in_units
            total += 2 * fan_in * r
            in_units = r
            feat = r
    fan_in = feat if feat is not None else in_units
    total += 2 * fan_in * arch.num_classes
    return int(total)


@dataclass
class FlopsLedger:
    forward_flops_per_sample: int = 0
    cumulative_training_flops: int = 0


def track_training_flops(ledger: FlopsLedger, net: MaskedNetwork, batch_size: int) -> FlopsLedger:
    """Account one optimizer step: forward plus backward at ~2x forward."""
    f = count_flops(net)
    ledger.forward_flops_per_sample = f
    ledger.cumulative_training_flops += 3 * f * batch_size
    return ledger


# ----------------------------------------------------------- persistence


def save_network(path, net: MaskedNetwork, meta: dict | None = None) -> None:
    arrays = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w.data
        arrays[f"b{i}"] = b.data
    if net.masked:
        for i, (s, g) in enumerate(zip(net.scores, net.gates)):
            arrays[f"s{i}"] = s.data
            arrays[f"g{i}"] = g
    header = {
        "arch": net.arch.to_dict(),
        "dtype": np.dtype(net.dtype).name,
        "masked": net.masked,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_network(path) -> tuple[MaskedNetwork, dict]:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        arch = Architecture.from_dict(header["arch"])
        dtype = np.dtype(header["dtype"]).type
        nlayers = len(arch.layers) + 1
        weights = [Parameter(z[f"w{i}"], dtype=dtype) for i in range(nlayers)]
        biases = [Parameter(z[f"b{i}"], dtype=dtype) for i in range(nlayers)]
        scores = gates = None
        if header["masked"]:
            scores = [Parameter(z[f"s{i}"], dtype=dtype) for i in range(len(arch.layers))]
            gates = [z[f"g{i}"].astype(dtype) for i in range(len(arch.layers))]
    net = MaskedNetwork(arch, weights, biases, scores, gates, dtype)
    return net, header["meta"]
