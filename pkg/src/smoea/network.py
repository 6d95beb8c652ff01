"""Model definition and structural surgery.

A Network is an ordered list of layers (conv / relu / maxpool / flatten /
dense) plus the input geometry. Conv layers are addressed by a 1-based
ordinal l; masking, sub-network extraction and compaction all speak in
those ordinals. Networks are treated as immutable values: every mutation
returns a new Network.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .exceptions import MaskError, ModelFormatError, UnknownLayerError
from .tensor import ConvParams

MODEL_MANIFEST = "manifest.json"


@dataclass
class ConvLayer:
    kind = "conv"
    params: ConvParams


@dataclass
class ReluLayer:
    kind = "relu"


@dataclass
class PoolLayer:
    kind = "maxpool"


@dataclass
class FlattenLayer:
    kind = "flatten"


@dataclass
class DenseLayer:
    kind = "dense"
    weights: np.ndarray  # [D, O]
    bias: np.ndarray  # [O]


Layer = ConvLayer | ReluLayer | PoolLayer | FlattenLayer | DenseLayer


@dataclass
class FilterMask:
    """Binary retain/prune vector over one conv layer's output filters."""

    bits: np.ndarray  # uint8 0/1
    layer_ordinal: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise MaskError("mask bits must be a vector")
        if not self.bits.any():
            raise MaskError("mask must retain at least one filter")

    @property
    def retained(self) -> int:
        return int(self.bits.sum())

    @property
    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


@dataclass
class Network:
    layers: list[Layer]
    input_shape: tuple[int, int, int]  # (C, H, W)

    @property
    def conv_positions(self) -> list[int]:
        """Layer-list indices of conv layers; entry l-1 is conv ordinal l."""
        return [i for i, lay in enumerate(self.layers) if lay.kind == "conv"]

    @property
    def num_convs(self) -> int:
        return len(self.conv_positions)

    def conv(self, ordinal: int) -> ConvLayer:
        pos = self.conv_positions
        if not 1 <= ordinal <= len(pos):
            raise UnknownLayerError(f"no conv layer with ordinal {ordinal}")
        return self.layers[pos[ordinal - 1]]


@dataclass
class SubNetwork:
    """Two-layer block: the conv being pruned, any interstitial relu/pool/
    flatten layers, and the next parametric (conv or dense) layer."""

    first: ConvLayer
    interstitial: list[Layer]
    second: ConvLayer | DenseLayer


# ---------------------------------------------------------------------------
# construction


def _he_conv(rng, out_c, in_c, k) -> ConvParams:
    std = np.sqrt(2.0 / (in_c * k * k))
    return ConvParams(
        out_channels=out_c,
        in_channels=in_c,
        kernel_h=k,
        kernel_w=k,
        stride=1,
        padding=k // 2,
        weights=rng.normal(0.0, std, size=(out_c, in_c, k, k)),
        bias=np.zeros(out_c),
    )


def build_cnn(
    conv_channels: list[int],
    pool_after: set[int],
    input_shape: tuple[int, int, int],
    num_classes: int = 10,
    seed: int = 0,
    kernel: int = 3,
) -> Network:
    """Conv-relu stacks with 2x2 maxpools after the listed conv ordinals,
    then flatten and a single classifier dense layer. He-style init."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    layers: list[Layer] = []
    in_c = c
    for l, out_c in enumerate(conv_channels, start=1):
        layers.append(ConvLayer(_he_conv(rng, out_c, in_c, kernel)))
        layers.append(ReluLayer())
        if l in pool_after:
            layers.append(PoolLayer())
            h //= 2
            w //= 2
        in_c = out_c
    layers.append(FlattenLayer())
    flat = in_c * h * w
    std = np.sqrt(2.0 / flat)
    layers.append(
        DenseLayer(
            weights=rng.normal(0.0, std, size=(flat, num_classes)),
            bias=np.zeros(num_classes),
        )
    )
    return Network(layers, input_shape)


def build_vgg14(seed: int = 0) -> Network:
    """13-conv VGG backbone on 32x32x3 with a single 512->10 classifier."""
    channels = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
    return build_cnn(
        channels, pool_after={2, 4, 7, 10, 13}, input_shape=(3, 32, 32), seed=seed
    )


def build_toy_cnn(
    conv_channels=(8, 16, 16, 16),
    input_shape=(3, 8, 8),
    num_classes: int = 10,
    seed: int = 0,
) -> Network:
    """Small 4-conv network used throughout the desk-scale experiments."""
    n = len(conv_channels)
    pool_after = {n // 2, n} if n >= 2 else {n}
    return build_cnn(list(conv_channels), pool_after, input_shape, num_classes, seed)


# ---------------------------------------------------------------------------
# forward passes


def forward(
    net: Network, batch: np.ndarray, capture: set[int] | frozenset[int] = frozenset()
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Full forward pass; records the tensor flowing INTO each requested
    conv ordinal."""
    capture = set(capture)
    bad = capture - set(range(1, net.num_convs + 1))
    if bad:
        raise UnknownLayerError(f"capture ordinals {sorted(bad)} out of range")
    captured: dict[int, np.ndarray] = {}
    x = batch
    ordinal = 0
    for lay in net.layers:
        if lay.kind == "conv":
            ordinal += 1
            if ordinal in capture:
                captured[ordinal] = x
            x = T.conv2d_forward(x, lay.params)
        elif lay.kind == "relu":
            x = T.relu(x)
        elif lay.kind == "maxpool":
            x, _ = T.maxpool2x2(x)
        elif lay.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        else:
            x = T.dense_forward(x, lay.weights, lay.bias)
    return x, captured


def forward_cached(net: Network, batch: np.ndarray):
    """Forward pass keeping per-layer inputs and pool records for backprop."""
    x = batch
    inputs: list = []
    records: list = []
    for lay in net.layers:
        inputs.append(x)
        if lay.kind == "conv":
            x = T.conv2d_forward(x, lay.params)
            records.append(None)
        elif lay.kind == "relu":
            x = T.relu(x)
            records.append(None)
        elif lay.kind == "maxpool":
            x, rec = T.maxpool2x2(x)
            records.append(rec)
        elif lay.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
            records.append(None)
        else:
            x = T.dense_forward(x, lay.weights, lay.bias)
            records.append(None)
    return x, inputs, records


def backward(net: Network, inputs, records, grad_logits: np.ndarray):
    """Backprop through a cached forward pass.

    Returns {layer_index: (grad_weights, grad_bias)} for parametric layers.
    """
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    g = grad_logits
    for i in range(len(net.layers) - 1, -1, -1):
        lay = net.layers[i]
        x = inputs[i]
        if lay.kind == "conv":
            g, gw, gb = T.conv2d_backward(x, lay.params, g)
            grads[i] = (gw, gb)
        elif lay.kind == "relu":
            g = T.relu_backward(x, g)
        elif lay.kind == "maxpool":
            g = T.maxpool2x2_backward(records[i], g)
        elif lay.kind == "flatten":
            g = g.reshape(x.shape)
        else:
            g, gw, gb = T.dense_backward(x, lay.weights, g)
            grads[i] = (gw, gb)
    return grads


# ---------------------------------------------------------------------------
# masking / sub-networks


def apply_mask(net: Network, mask: FilterMask) -> Network:
    """Zero out the pruned output-channel slices (weights and bias) of conv
    layer mask.layer_ordinal; returns a new network."""
    lay = net.conv(mask.layer_ordinal)
    if mask.bits.shape[0] != lay.params.out_channels:
        raise MaskError(
            f"mask length {mask.bits.shape[0]} != {lay.params.out_channels} filters"
        )
    keep = mask.bits.astype(np.float64)
    p = lay.params
    new_params = ConvParams(
        p.out_channels,
        p.in_channels,
        p.kernel_h,
        p.kernel_w,
        p.stride,
        p.padding,
        p.weights * keep[:, None, None, None],
        p.bias * keep,
    )
    layers = list(net.layers)
    layers[net.conv_positions[mask.layer_ordinal - 1]] = ConvLayer(new_params)
    return Network(layers, net.input_shape)


def extract_subnetwork(net: Network, ordinal: int) -> SubNetwork:
    pos = net.conv_positions
    if not 1 <= ordinal <= len(pos):
        raise UnknownLayerError(f"no conv layer with ordinal {ordinal}")
    i = pos[ordinal - 1]
    first = net.layers[i]
    interstitial: list[Layer] = []
    for lay in net.layers[i + 1 :]:
        if lay.kind in ("conv", "dense"):
            return SubNetwork(first, interstitial, lay)
        interstitial.append(lay)
    raise UnknownLayerError(f"conv {ordinal} has no following parametric layer")


def subnetwork_tail_forward(sub: SubNetwork, first_out: np.ndarray) -> np.ndarray:
    """Forward from the first layer's output through interstitial + second."""
    x = first_out
    for lay in sub.interstitial:
        if lay.kind == "relu":
            x = T.relu(x)
        elif lay.kind == "maxpool":
            x, _ = T.maxpool2x2(x)
        else:
            x = x.reshape(x.shape[0], -1)
    if sub.second.kind == "conv":
        return T.conv2d_forward(x, sub.second.params)
    return T.dense_forward(x, sub.second.weights, sub.second.bias)


def subnetwork_forward(
    sub: SubNetwork, map_l: np.ndarray, mask: FilterMask | None = None
) -> np.ndarray:
    out = T.conv2d_forward(map_l, sub.first.params)
    if mask is not None:
        if mask.bits.shape[0] != sub.first.params.out_channels:
            raise MaskError(
                f"mask length {mask.bits.shape[0]} != "
                f"{sub.first.params.out_channels} filters"
            )
        # zeroing the whole output channel equals masking weights+bias
        out = out * mask.bits.astype(np.float64)[None, :, None, None]
    return subnetwork_tail_forward(sub, out)


# ---------------------------------------------------------------------------
# compaction


def activation_shapes(net: Network) -> list[tuple[int, ...]]:
    """Per-layer input shape (channel-first, no batch dim)."""
    shape: tuple[int, ...] = net.input_shape
    shapes = []
    for lay in net.layers:
        shapes.append(shape)
        if lay.kind == "conv":
            oh, ow = T.conv_output_hw(lay.params, shape[1], shape[2])
            shape = (lay.params.out_channels, oh, ow)
        elif lay.kind == "maxpool":
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif lay.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif lay.kind == "dense":
            shape = (lay.weights.shape[1],)
    return shapes


def compact(net: Network, masks: dict[int, FilterMask]) -> Network:
    """Physically remove pruned channels and the coupled input slices of the
    next parametric layer. Forward outputs equal the masked network exactly."""
    pos = net.conv_positions
    for l, m in masks.items():
        if not 1 <= l <= len(pos):
            raise MaskError(f"mask ordinal {l} out of range")
        if m.bits.shape[0] != net.conv(l).params.out_channels:
            raise MaskError(f"mask length mismatch at conv {l}")
    shapes = activation_shapes(net)

    layers: list[Layer] = []
    prev_keep: np.ndarray | None = None  # kept channel indices of last conv
    prev_width: int | None = None  # original channel count of last conv
    ordinal = 0
    for i, lay in enumerate(net.layers):
        if lay.kind == "conv":
            ordinal += 1
            p = lay.params
            in_keep = prev_keep if prev_keep is not None else np.arange(p.in_channels)
            out_keep = (
                masks[ordinal].kept_indices
                if ordinal in masks
                else np.arange(p.out_channels)
            )
            layers.append(
                ConvLayer(
                    ConvParams(
                        len(out_keep),
                        len(in_keep),
                        p.kernel_h,
                        p.kernel_w,
                        p.stride,
                        p.padding,
                        p.weights[np.ix_(out_keep, in_keep)],
                        p.bias[out_keep],
                    )
                )
            )
            prev_keep = out_keep
            prev_width = p.out_channels
        elif lay.kind == "dense":
            if prev_keep is not None and len(prev_keep) != prev_width:
                # rows of the dense weights follow the row-major flatten of
                # [C, H, W]; keep the rows fed by retained channels
                flat_shape = shapes[i]  # input to dense, after flatten
                spatial = flat_shape[0] // prev_width
                kept_flag = np.zeros(prev_width, dtype=bool)
                kept_flag[prev_keep] = True
                rows = np.flatnonzero(np.repeat(kept_flag, spatial))
                layers.append(DenseLayer(lay.weights[rows, :], lay.bias.copy()))
            else:
                layers.append(DenseLayer(lay.weights.copy(), lay.bias.copy()))
            prev_keep = None
            prev_width = None
        else:
            layers.append(copy.deepcopy(lay))
    return Network(layers, net.input_shape)


# ---------------------------------------------------------------------------
# accounting


def count_params(net: Network) -> int:
    total = 0
    for lay in net.layers:
        if lay.kind == "conv":
            total += lay.params.weights.size + lay.params.bias.size
        elif lay.kind == "dense":
            total += lay.weights.size + lay.bias.size
    return int(total)


def count_flops(net: Network, input_shape: tuple[int, int, int] | None = None) -> int:
    """Forward FLOPs, one multiply-accumulate counted as 2 operations."""
    work = net if input_shape is None else Network(net.layers, input_shape)
    shapes = activation_shapes(work)
    total = 0
    for lay, shape in zip(work.layers, shapes):
        if lay.kind == "conv":
            p = lay.params
            oh, ow = T.conv_output_hw(p, shape[1], shape[2])
            total += 2 * p.in_channels * p.kernel_h * p.kernel_w * p.out_channels * oh * ow
        elif lay.kind == "dense":
            total += 2 * lay.weights.shape[0] * lay.weights.shape[1]
    return int(total)


# ---------------------------------------------------------------------------
# serialization: directory with a JSON manifest plus one little-endian
# float64 blob per parametric layer (weights row-major, then bias)


def save_model(net: Network, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format": "smoea-model",
        "endianness": "little",
        "dtype": "float64",
        "input_shape": list(net.input_shape),
        "num_layers": len(net.layers),
        "layers": [],
    }
    blob_idx = 0
    for lay in net.layers:
        entry: dict = {"kind": lay.kind}
        if lay.kind == "conv":
            p = lay.params
            entry.update(
                out_channels=p.out_channels,
                in_channels=p.in_channels,
                kernel_h=p.kernel_h,
                kernel_w=p.kernel_w,
                stride=p.stride,
                padding=p.padding,
                blob=f"layer_{blob_idx:02d}.bin",
            )
            blob = np.concatenate(
                [p.weights.ravel(), p.bias.ravel()]
            ).astype("<f8")
            (path / entry["blob"]).write_bytes(blob.tobytes())
            blob_idx += 1
        elif lay.kind == "dense":
            entry.update(
                in_features=int(lay.weights.shape[0]),
                out_features=int(lay.weights.shape[1]),
                blob=f"layer_{blob_idx:02d}.bin",
            )
            blob = np.concatenate([lay.weights.ravel(), lay.bias.ravel()]).astype("<f8")
            (path / entry["blob"]).write_bytes(blob.tobytes())
            blob_idx += 1
        manifest["layers"].append(entry)
    (path / MODEL_MANIFEST).write_text(json.dumps(manifest, indent=2))


def load_model(path: str | Path) -> Network:
    path = Path(path)
    manifest_path = path / MODEL_MANIFEST
    if not manifest_path.is_file():
        raise ModelFormatError(f"no model manifest at {manifest_path}")
    raw = manifest_path.read_text()
    if not raw.strip():
        raise ModelFormatError("empty model manifest")
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"malformed manifest: {e}") from e
    for key in ("format", "input_shape", "layers", "num_layers"):
        if key not in manifest:
            raise ModelFormatError(f"manifest missing field {key!r}")
    if manifest["format"] != "smoea-model":
        raise ModelFormatError(f"unknown model format {manifest['format']!r}")
    if manifest.get("endianness", "little") != "little":
        raise ModelFormatError("unsupported endianness")
    if manifest["num_layers"] != len(manifest["layers"]):
        raise ModelFormatError(
            f"manifest num_layers {manifest['num_layers']} != "
            f"{len(manifest['layers'])} layer entries"
        )
    layers: list[Layer] = []
    for entry in manifest["layers"]:
        kind = entry.get("kind")
        if kind == "relu":
            layers.append(ReluLayer())
        elif kind == "maxpool":
            layers.append(PoolLayer())
        elif kind == "flatten":
            layers.append(FlattenLayer())
        elif kind == "conv":
            oc, ic = entry["out_channels"], entry["in_channels"]
            kh, kw = entry["kernel_h"], entry["kernel_w"]
            n_w, n_b = oc * ic * kh * kw, oc
            data = _read_blob(path, entry, n_w + n_b)
            layers.append(
                ConvLayer(
                    ConvParams(
                        oc, ic, kh, kw, entry["stride"], entry["padding"],
                        data[:n_w].reshape(oc, ic, kh, kw), data[n_w:],
                    )
                )
            )
        elif kind == "dense":
            d, o = entry["in_features"], entry["out_features"]
            data = _read_blob(path, entry, d * o + o)
            layers.append(DenseLayer(data[: d * o].reshape(d, o), data[d * o :]))
        else:
            raise ModelFormatError(f"unknown layer kind {kind!r}")
    return Network(layers, tuple(manifest["input_shape"]))


def _read_blob(path: Path, entry: dict, expected: int) -> np.ndarray:
    blob_path = path / entry.get("blob", "")
    if not blob_path.is_file():
        raise ModelFormatError(f"missing blob {entry.get('blob')!r}")
    raw = blob_path.read_bytes()
    if len(raw) != expected * 8:
        raise ModelFormatError(
            f"blob {entry['blob']} has {len(raw)} bytes, expected {expected * 8}"
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)
