"""Network descriptions and per-layer workload characterization.

A network file lists layers in execution order. Each layer reads the layer
named in ``from`` (default: the previous layer; ``input`` is the network
input) or, for concat/add, the layers in ``inputs``. Shapes are (C, H, W)
per image.

Per-layer DMA volumes come from a tiling model of the TCDM: the layer is cut
into row tiles and output-channel groups that fit double-buffered, and bytes
are split into the head (first input tile plus first weight group, moved
before any compute), the tail (last output tile, moved after) and the rest,
which streams in parallel with compute.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

WORD = 4
MB = 1 << 20
TCDM_BYTES = 128 * 1024
PASSES = ("inference", "fwd", "bwd")
KINDS = ("conv", "linear", "maxpool", "avgpool", "relu", "lrn", "batchnorm", "softmax", "concat", "add", "lstm")
ELEMENTWISE = ("relu", "lrn", "batchnorm", "softmax")
NETWORKS = ("alexnet", "googlenet", "inception_v3", "resnet34", "resnet50", "resnet152", "lstm512")


class WorkloadError(ValueError):
    """Malformed network description or unsupported layer."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer with resolved shapes. ``geom`` holds kind-specific fields."""

    name: str
    kind: str
    in_shapes: tuple
    out_shape: tuple
    geom: dict = field(default_factory=dict, compare=False, hash=False)
    repeat: int = 1
    input_grad: bool = True  # False when the layer reads the network input

    @property
    def in_shape(self) -> tuple:
        return self.in_shapes[0]

    @property
    def out_elems(self) -> int:
        return math.prod(self.out_shape)

    @property
    def in_elems(self) -> int:
        return sum(math.prod(s) for s in self.in_shapes)

    @property
    def params(self) -> int:
        """Trainable values (weights plus biases)."""
        g = self.geom
        if self.kind == "conv":
            kh, kw = g["kernel"]
            n = kh * kw * (self.in_shape[0] // g["groups"]) * g["out_channels"]
            return n + (g["out_channels"] if g["bias"] else 0)
        if self.kind == "linear":
            return g["in_features"] * g["out_features"] + (g["out_features"] if g["bias"] else 0)
        if self.kind == "batchnorm":
            return 2 * self.in_shape[0]
        if self.kind == "lstm":
            h = g["hidden_size"]
            return 4 * h * (g["input_size"] + h) + 4 * h
        return 0


def _pair(v) -> tuple:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise WorkloadError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _window_out(n: int, k: int, s: int, p: int, ceil: bool = False) -> int:
    span = n + 2 * p - k
    if span < 0 or s < 1:
        raise WorkloadError(f"window {k} (pad {p}) does not fit extent {n}")
    out = (-(-span // s) if ceil else span // s) + 1
    if ceil and (out - 1) * s >= n + p:
        out -= 1  # the last window must start inside the input or left pad
    return out


def make_layer(kind: str, in_shapes, name: str = "", repeat: int = 1, input_grad: bool = True,
               **geom) -> LayerSpec:
    """Validate geometry and infer the output shape."""
    if kind not in KINDS:
        raise WorkloadError(f"unsupported layer kind {kind!r}")
    if repeat < 1:
        raise WorkloadError("repeat must be at least 1")
    if in_shapes and isinstance(in_shapes[0], int):
        in_shapes = (in_shapes,)
    in_shapes = tuple(tuple(int(d) for d in s) for s in in_shapes)
    if not in_shapes or any(len(s) != 3 or min(s) < 1 for s in in_shapes):
        raise WorkloadError(f"{name or kind}: input shapes must be positive (C, H, W), got {in_shapes}")
    if kind not in ("concat", "add") and len(in_shapes) != 1:
        raise WorkloadError(f"{name or kind}: expects exactly one input")
    c, h, w = in_shapes[0]
    g = dict(geom)
    if kind == "conv":
        kh, kw = g["kernel"] = _pair(g["kernel"])
        ph, pw = g["pad"] = _pair(g.get("pad", 0))
        s = g["stride"] = int(g.get("stride", 1))
        groups = g["groups"] = int(g.get("groups", 1))
        co = g["out_channels"] = int(g["out_channels"])
        g["bias"] = bool(g.get("bias", True))
        if groups < 1 or c % groups or co % groups:
            raise WorkloadError(f"{name}: channels {c}->{co} not divisible by groups {groups}")
        out = (co, _window_out(h, kh, s, ph), _window_out(w, kw, s, pw))
    elif kind in ("maxpool", "avgpool"):
        kh, kw = g["kernel"] = _pair(g["kernel"])
        ph, pw = g["pad"] = _pair(g.get("pad", 0))
        s = g["stride"] = int(g.get("stride", 1))
        ceil = g["ceil_mode"] = bool(g.get("ceil_mode", False))
        if ph * 2 > kh or pw * 2 > kw:
            raise WorkloadError(f"{name}: pad exceeds half the window")
        out = (c, _window_out(h, kh, s, ph, ceil), _window_out(w, kw, s, pw, ceil))
    elif kind == "linear":
        n_in = c * h * w
        g["in_features"] = int(g.get("in_features", n_in))
        g["out_features"] = int(g["out_features"])
        g["bias"] = bool(g.get("bias", True))
        if not 1 <= g["in_features"] <= n_in:
            raise WorkloadError(f"{name}: in_features {g['in_features']} exceeds input size {n_in}")
        out = (g["out_features"], 1, 1)
    elif kind == "lstm":
        for k in ("input_size", "hidden_size", "batch"):
            g[k] = int(g[k])
        if c * h * w != g["input_size"]:
            raise WorkloadError(f"{name}: input size {c * h * w} != {g['input_size']}")
        out = (g["hidden_size"], 1, 1)
    elif kind == "concat":
        if len({s[1:] for s in in_shapes}) != 1:
            raise WorkloadError(f"{name}: concat inputs differ in spatial size {in_shapes}")
        out = (sum(s[0] for s in in_shapes), h, w)
    elif kind == "add":
        if len(in_shapes) != 2:
            raise WorkloadError(f"{name}: add takes two inputs")
        (mc, mh, mw), (sc, sh, sw) = in_shapes
        stride = -(-sh // mh)
        # Parameter-free shortcut: strided subsampling and zero-padded channels.
        if sc > mc or -(-sh // stride) != mh or -(-sw // stride) != mw:
            raise WorkloadError(f"{name}: shortcut {in_shapes[1]} cannot join {in_shapes[0]}")
        g["shortcut_stride"] = stride
        out = in_shapes[0]
    else:
        if kind == "lrn":
            g["size"] = int(g.get("size", 5))
        out = in_shapes[0]
    return LayerSpec(name or kind, kind, in_shapes, out, g, int(repeat), input_grad)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple
    layers: tuple
    retained: tuple = ("conv",)
    retain_input: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        try:
            name = doc["name"]
            inp = tuple(int(d) for d in doc["input"])
            raw = doc.get("layers", [])
        except (KeyError, TypeError) as e:
            raise WorkloadError(f"network description missing {e}") from None
        if len(inp) != 3:
            raise WorkloadError("input must be [C, H, W]")
        shapes = {"input": inp}
        layers = []
        prev = "input"
        for i, entry in enumerate(raw):
            entry = dict(entry)
            lname = entry.pop("name", f"layer{i}")
            kind = entry.pop("kind", None)
            repeat = entry.pop("repeat", 1)
            srcs = entry.pop("inputs", None) or [entry.pop("from", prev)]
            entry.pop("from", None)
            if lname in shapes:
                raise WorkloadError(f"duplicate layer name {lname!r}")
            missing = [s for s in srcs if s not in shapes]
            if missing:
                raise WorkloadError(f"{lname}: unknown input {missing[0]!r}")
            layer = make_layer(kind, [shapes[s] for s in srcs], lname, repeat,
                               input_grad=srcs != ["input"], **entry)
            if layer.repeat > 1 and layer.out_shape != layer.in_shape:
                raise WorkloadError(f"{lname}: repeated layer must preserve its shape")
            shapes[lname] = layer.out_shape
            layers.append(layer)
            prev = lname
        retained = tuple(doc.get("retained", ("conv",)))
        bad = [k for k in retained if k not in KINDS]
        if bad:
            raise WorkloadError(f"unknown retained kind {bad[0]!r}")
        return cls(name, inp, tuple(layers), retained, bool(doc.get("retain_input", False)))

    @property
    def params(self) -> int:
        return sum(l.params * l.repeat for l in self.layers)


def load_network(name_or_path) -> NetworkSpec:
    """Load a shipped network by name, or a JSON file by path."""
    p = Path(str(name_or_path))
    if p.suffix == ".json" or p.exists():
        text = p.read_text()
    elif name_or_path in NETWORKS:
        text = resources.files("ntxsim").joinpath("networks", f"{name_or_path}.json").read_text()
    else:
        raise WorkloadError(f"unknown network {name_or_path!r}; available: {', '.join(NETWORKS)}")
    return NetworkSpec.from_dict(json.loads(text))


@dataclass(frozen=True)
class LayerWorkload:
    """Work of one layer pass on one image. ``n_c`` counts NTX iterations:
    MACs plus ``n_cmp`` single-operation steps (comparisons, copies)."""

    n_c: int
    d_head: int = 0
    d_par: int = 0
    d_tail: int = 0
    param_bytes: int = 0
    act_bytes: int = 0
    n_cmp: int = 0

    def __post_init__(self):
        if min(self.n_c, self.d_head, self.d_par, self.d_tail, self.param_bytes, self.act_bytes, self.n_cmp) < 0:
            raise WorkloadError("workload terms must be non-negative")
        if self.n_cmp > self.n_c:
            raise WorkloadError("n_cmp cannot exceed n_c")

    @property
    def d_dma(self) -> int:
        return self.d_head + self.d_par + self.d_tail

    @property
    def macs(self) -> int:
        return self.n_c - self.n_cmp

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.n_cmp

    def __add__(self, other: "LayerWorkload") -> "LayerWorkload":
        return LayerWorkload(*(a + b for a, b in zip(self._fields(), other._fields())))

    def _fields(self):
        return (self.n_c, self.d_head, self.d_par, self.d_tail, self.param_bytes, self.act_bytes, self.n_cmp)

    def scaled(self, k: int) -> "LayerWorkload":
        return LayerWorkload(*(k * a for a in self._fields()))


ZERO = LayerWorkload(0)


def _splits(n: int) -> np.ndarray:
    """Distinct tile sizes ceil(n / k) for k = 1..n."""
    return np.unique(-(-n // np.arange(1, n + 1)))


@lru_cache(maxsize=4096)
def tile_traffic(c_in: int, in_h: int, in_w: int, c_out: int, out_h: int, out_w: int,
                 taps: int, rows_per_out: float, halo: int, pad_w: int = 0,
                 resident_out: bool = False, tcdm_bytes: int = TCDM_BYTES) -> tuple:
    """(head, par, tail) bytes of the cheapest tiling of one convolution-like pass.

    An output tile of ``G`` channels by ``R`` rows stays in the TCDM while
    chunks of ``Ci`` input channels and the matching weights stream through
    double buffers. An output row needs ``rows_per_out`` input rows plus
    ``halo`` more. Either row tiles or channel groups form the outer loop, and
    an operand is fetched once only if it stays resident across the inner
    loop. With ``resident_out`` the tile being accumulated is a weight
    gradient (G x Ci x taps) and the (c_out, out_h, out_w) operand streams.
    Partial sums of successive chunks are combined in place; those adds are
    not counted.
    """
    cap = tcdm_bytes // WORD
    wp = in_w + 2 * pad_w
    r = _splits(out_h)[:, None, None]
    g = _splits(c_out)[None, :, None]
    ci = _splits(c_in)[None, None, :]
    rin = np.minimum(np.ceil((r - 1) * rows_per_out).astype(np.int64) + 1 + halo, in_h + 2 * halo)
    n_rt, n_g, n_ci = -(-out_h // r), -(-c_out // g), -(-c_in // ci)
    rows_read = np.minimum(n_rt * rin, in_h + (n_rt - 1) * halo)
    x_all = c_in * rows_read * in_w  # one sweep over the input, halos included
    w_all = c_out * c_in * taps
    y_all = c_out * out_h * out_w
    fp = 2 * ci * rin * wp + 2 * g * ci * taps + 2 * g * r * out_w
    x_first = ci * np.minimum(rin, in_h) * in_w
    if resident_out:
        # One weight-gradient tile per (G, Ci); all rows of x and dy stream past it.
        total = n_g * x_all + n_ci * y_all + w_all + 0 * r
        head = x_first + g * r * out_w
        tail = g * ci * taps + 0 * r
    else:
        single = n_ci == 1
        rows_outer = np.where(single, 1, n_g) * x_all + np.where(single & (n_g == 1), 1, n_rt) * w_all
        groups_outer = np.where(single & (n_rt == 1), 1, n_g) * x_all + np.where(single, 1, n_rt) * w_all
        total = np.minimum(rows_outer, groups_outer) + y_all
        head = x_first + g * ci * taps
        tail = g * r * out_w + 0 * ci
    ok = fp <= cap
    if not ok.any():
        raise WorkloadError(f"no tiling of {c_in}x{in_h}x{in_w} -> {c_out}x{out_h}x{out_w} fits the TCDM")
    total, head, tail = np.broadcast_arrays(np.where(ok, total, np.iinfo(np.int64).max), head, tail)
    # Cheapest traffic; ties go to the shortest head.
    key = total.astype(np.float64) + head / (1.0 + head.max())
    i = np.unravel_index(np.argmin(key), key.shape)
    h_, t_, tot = int(head[i]), int(tail[i]), int(total[i])
    return WORD * h_, WORD * (tot - h_ - t_), WORD * t_


def _grouped(groups, c, h, w, co, oh, ow, taps, rows_per_out, halo, pad_w, resident_out=False):
    head, par, tail = tile_traffic(c // groups, h, w, co // groups, oh, ow, taps, rows_per_out, halo, pad_w,
                                   resident_out)
    return head, par + (groups - 1) * (head + par + tail), tail


def _conv_traffic(l: LayerSpec, pass_: str) -> tuple:
    c, h, w = l.in_shape
    co, oh, ow = l.out_shape
    kh, kw = l.geom["kernel"]
    s, pw, groups = l.geom["stride"], l.geom["pad"][1], l.geom["groups"]
    if pass_ == "backward_data":
        # A stride-1 correlation over dy per output phase: each dx row needs 1/s dy rows.
        return _grouped(groups, co, oh, ow, c, h, w, kh * kw, 1.0 / s, -(-kh // s) - 1, -(-kw // s) - 1)
    if pass_ == "backward_weight":
        return _grouped(groups, c, h, w, co, oh, ow, kh * kw, s, kh - 1, pw, resident_out=True)
    return _grouped(groups, c, h, w, co, oh, ow, kh * kw, s, kh - 1, pw)


def _conv_workload(l: LayerSpec, pass_: str) -> LayerWorkload:
    g = l.geom
    c = l.in_shape[0]
    co, oh, ow = l.out_shape
    kh, kw = g["kernel"]
    macs = oh * ow * co * kh * kw * (c // g["groups"])
    pbytes = l.params * WORD
    if pass_ != "bwd":
        return LayerWorkload(macs, *_conv_traffic(l, "forward"), param_bytes=pbytes, act_bytes=l.out_elems * WORD)
    wl = LayerWorkload(macs, *_conv_traffic(l, "backward_weight"), param_bytes=pbytes)
    if l.input_grad:
        wl = wl + LayerWorkload(macs, *_conv_traffic(l, "backward_data"), act_bytes=l.in_elems * WORD)
    if g["bias"]:
        wl = wl + LayerWorkload(l.out_elems, 0, l.out_elems * WORD, 0)
    return wl


def _linear_workload(l: LayerSpec, pass_: str) -> LayerWorkload:
    n, m = l.geom["in_features"], l.geom["out_features"]
    # A fully connected layer is a 1x1 convolution on a single pixel; the bias
    # rides along as an extra input column of ones.
    n1 = n + 1 if l.geom["bias"] else n
    pbytes = l.params * WORD
    if pass_ != "bwd":
        return LayerWorkload(n1 * m, *tile_traffic(n1, 1, 1, m, 1, 1, 1, 1, 0), param_bytes=pbytes,
                             act_bytes=m * WORD)
    wl = LayerWorkload(n1 * m, *tile_traffic(n1, 1, 1, m, 1, 1, 1, 1, 0, resident_out=True), param_bytes=pbytes)
    if l.input_grad:
        wl = wl + LayerWorkload(n * m, *tile_traffic(m, 1, 1, n, 1, 1, 1, 1, 0), act_bytes=n * WORD)
    return wl


def _lstm_workload(l: LayerSpec, pass_: str) -> LayerWorkload:
    g = l.geom
    b, hid, k = g["batch"], g["hidden_size"], g["input_size"] + g["hidden_size"]
    # The four gates form one (4h x (in+h)) by ((in+h) x batch) matrix product:
    # a 1x1 convolution over a 1 x batch image.
    gemm = tile_traffic(k, 1, b, 4 * hid, 1, b, 1, 1, 0)
    # Gate nonlinearities and the cell/hidden update stream 4h + 3h values per sample.
    elem = b * hid * 7
    pbytes = l.params * WORD
    fwd = LayerWorkload(b * 4 * hid * k + elem, *gemm, param_bytes=pbytes, act_bytes=b * hid * 2 * WORD) \
        + LayerWorkload(elem, 0, 3 * WORD * elem, 0, n_cmp=elem)
    if pass_ != "bwd":
        return fwd
    wgrad = tile_traffic(k, 1, b, 4 * hid, 1, b, 1, 1, 0, resident_out=True)
    dgrad = tile_traffic(4 * hid, 1, b, k, 1, b, 1, 1, 0)
    return LayerWorkload(b * 4 * hid * k, *wgrad, param_bytes=pbytes) \
        + LayerWorkload(b * 4 * hid * k, *dgrad) + LayerWorkload(2 * elem, 0, 4 * WORD * elem, 0, n_cmp=elem)


# Per element of the output (or input, for backward): (MACs, single ops, words moved).
_STREAM = {
    ("relu", "inference"): (0, 1, 2), ("relu", "fwd"): (0, 1, 2), ("relu", "bwd"): (0, 1, 3),
    # Training normalisation first reduces sum and sum of squares, then rescales.
    ("batchnorm", "inference"): (1, 0, 2), ("batchnorm", "fwd"): (3, 0, 3), ("batchnorm", "bwd"): (5, 0, 5),
    ("softmax", "inference"): (2, 2, 2), ("softmax", "fwd"): (2, 2, 2), ("softmax", "bwd"): (2, 0, 3),
    ("concat", "inference"): (0, 1, 2), ("concat", "fwd"): (0, 1, 2), ("concat", "bwd"): (0, 1, 2),
    ("add", "inference"): (0, 1, 3), ("add", "fwd"): (0, 1, 3), ("add", "bwd"): (0, 1, 3),
}


def _stream_workload(l: LayerSpec, pass_: str) -> LayerWorkload:
    n = l.out_elems
    if l.kind == "lrn":
        size = l.geom["size"]
        macs, ops, words = (size + 1, 1, 2) if pass_ != "bwd" else (2 * size + 2, 1, 4)
    elif l.kind in ("maxpool", "avgpool"):
        kh, kw = l.geom["kernel"]
        win = kh * kw
        if l.kind == "maxpool":
            # Forward compares every window cell; training also records the argmax.
            # Backward selects and scatter-adds one value per window cell.
            fwd_words = (l.in_elems / n) + (1 if pass_ == "inference" else 2)
            macs, ops, words = (0, win, fwd_words) if pass_ != "bwd" else (0, 5 * win, 2 + l.in_elems / n)
        else:
            macs, ops, words = (win, 0, l.in_elems / n + 1) if pass_ != "bwd" else (win, 0, 1 + l.in_elems / n)
    else:
        macs, ops, words = _STREAM[(l.kind, pass_)]
    d = int(round(words * n)) * WORD
    act = n * WORD if pass_ != "bwd" else 0
    return LayerWorkload(n * (macs + ops), 0, d, 0, param_bytes=l.params * WORD, act_bytes=act, n_cmp=n * ops)


def layer_workload(l: LayerSpec, pass_: str = "inference") -> LayerWorkload:
    """Work of one pass of ``l`` on one image, summed over its repetitions."""
    if pass_ not in PASSES:
        raise WorkloadError(f"pass must be one of {PASSES}")
    if l.kind == "conv":
        wl = _conv_workload(l, pass_)
    elif l.kind == "linear":
        wl = _linear_workload(l, pass_)
    elif l.kind == "lstm":
        wl = _lstm_workload(l, pass_)
    elif l.kind in KINDS:
        wl = _stream_workload(l, pass_)
    else:
        raise WorkloadError(f"unsupported layer kind {l.kind!r}")
    return wl.scaled(l.repeat) if l.repeat > 1 else wl


def network_workloads(n: NetworkSpec, mode: str = "train") -> list:
    """(layer, pass, workload) triples: forward then reversed backward for ``train``."""
    if mode == "inference":
        return [(l, "inference", layer_workload(l, "inference")) for l in n.layers]
    if mode != "train":
        raise WorkloadError("mode must be 'inference' or 'train'")
    out = [(l, "fwd", layer_workload(l, "fwd")) for l in n.layers]
    out += [(l, "bwd", layer_workload(l, "bwd")) for l in reversed(n.layers)]
    return out


def training_step_ops(n: NetworkSpec) -> int:
    """NTX operations per image for one forward and backward pass."""
    return sum(w.n_c for _, _, w in network_workloads(n, "train"))


def training_step_flops(n: NetworkSpec) -> int:
    return sum(w.flops for _, _, w in network_workloads(n, "train"))


def activation_values(n: NetworkSpec, kinds=None) -> tuple:
    """(largest single output, sum over layers and repetitions) in values."""
    sel = [l for l in n.layers if kinds is None or l.kind in kinds]
    if not sel:
        return 0, 0
    return max(l.out_elems for l in sel), sum(l.out_elems * l.repeat for l in sel)


REGIMES = ("inference", "train_bs1", "train_bsN")


def network_memory_footprint(n: NetworkSpec, regime: str = "train_bs1") -> tuple:
    """(parameter MB, activation MB, total MB) with MB = 2**20 bytes.

    Training keeps the outputs of the network's retained layer kinds for the
    backward pass; batches beyond one add a gradient accumulator the size of
    the parameters.
    """
    if regime not in REGIMES:
        raise WorkloadError(f"regime must be one of {REGIMES}")
    params = n.params * WORD / MB
    if regime == "inference":
        peak, _ = activation_values(n)
        acts = max(peak, math.prod(n.input_shape)) * WORD / MB
        return params, acts, params + acts
    _, total = activation_values(n, n.retained)
    if n.retain_input:
        total += math.prod(n.input_shape)
    acts = total * WORD / MB
    extra = params if regime == "train_bsN" else 0.0
    return params, acts, params + acts + extra
