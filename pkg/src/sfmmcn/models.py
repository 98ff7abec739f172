"""Built-in network generators (VGG-16, ResNet-18, a small U-net) with
seeded pseudo-random Q8.8 weights.

Channel widths scale by a factor; spatial sizes scale too but are rounded up
to a multiple of 32 (8 for the U-net) so that every pooling/stride stage
stays integral.
"""

import math
from fractions import Fraction

import numpy as np

from . import fxp
from .netdesc import parse_network
from .weights import WeightStore

MODELS = ("vgg16", "resnet18", "unet")

_VGG_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def parse_scale(s):
    """'1/8', '0.25', 1 or 'tiny' -> Fraction or the string 'tiny'."""
    if isinstance(s, str) and s.strip().lower() == "tiny":
        return "tiny"
    try:
        f = Fraction(str(s).strip())
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"bad scale {s!r}; use a fraction like 1/8 or 'tiny'") from None
    if not 0 < f <= 1:
        raise ValueError(f"scale must be in (0, 1], got {s!r}")
    return f


def _ch(c, s):
    return max(1, int(round(c * s)))


def _spatial(n, s, mult):
    return max(mult, int(math.ceil(n * s / mult)) * mult)


class _Builder:
    def __init__(self, seed):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.lines = []
        self.records = {}

    def conv(self, name, cin, cout, k, stride=1, pad=None, emit=True):
        pad = (k // 2) if pad is None else pad
        std = 0.7 * math.sqrt(2.0 / (cin * k * k))
        self.records[f"{name}.weight"] = fxp.quantize_array(self.rng.normal(0, std, (cout, cin, k, k)))
        self.records[f"{name}.bias"] = fxp.quantize_array(self.rng.uniform(-0.1, 0.1, cout))
        if emit:
            self.lines.append(f"conv{k}x{k} in={cin} out={cout} stride={stride} pad={pad} w={name}")

    def dense(self, name, n_in, n_out, emit=True):
        std = math.sqrt(1.0 / n_in)
        self.records[f"{name}.weight"] = fxp.quantize_array(self.rng.normal(0, std, (n_out, n_in)))
        self.records[f"{name}.bias"] = fxp.quantize_array(self.rng.uniform(-0.1, 0.1, n_out))
        if emit:
            self.lines.append(f"dense in={n_in} out={n_out} w={name}")

    def finish(self, name, shape):
        c, h, w = shape
        text = "\n".join([f"network {name}", f"input c={c} h={h} w={w}"] + self.lines) + "\n"
        return parse_network(text), WeightStore(self.records)


def vgg16(scale="1/8", seed=0):
    s = parse_scale(scale)
    if s == "tiny":
        s, size = Fraction(1, 32), 32
    else:
        size = _spatial(224, s, 32)
    b = _Builder(seed)
    hw, cin, n = size, 3, 0
    for item in _VGG_CFG:
        if item == "M":
            b.lines.append("maxpool")
            hw //= 2
            continue
        n += 1
        cout = _ch(item, s)
        b.conv(f"conv{n}", cin, cout, 3)
        b.lines.append("relu")
        cin = cout
    flat = cin * hw * hw
    d = _ch(4096, s)
    b.dense("fc1", flat, d)
    b.lines.append("relu")
    b.dense("fc2", d, d)
    b.lines.append("relu")
    b.dense("fc3", d, _ch(1000, s))
    return b.finish("vgg16", (3, size, size))


def resnet18(scale="1/8", seed=0):
    s = parse_scale(scale)
    if s == "tiny":
        s, size = Fraction(1, 32), 32
    else:
        size = _spatial(224, s, 32)
    b = _Builder(seed)
    c0 = _ch(64, s)
    b.conv("stem", 3, c0, 3)
    b.lines += ["relu", "maxpool"]
    hw = size // 2
    cin = c0
    for stage, width in enumerate((64, 128, 256, 512), start=1):
        cout = _ch(width, s)
        for blk in range(2):
            stride = 2 if stage > 1 and blk == 0 else 1
            p = f"layer{stage}.{blk}"
            b.lines.append("residual_begin")
            b.conv(f"{p}.conv1", cin, cout, 3, stride=stride)
            b.lines.append("relu")
            b.conv(f"{p}.conv2", cout, cout, 3)
            if stride != 1 or cin != cout:
                b.conv(f"{p}.down", cin, cout, 1, stride=stride, emit=False)
                b.lines.append(f"residual_end w={p}.down stride={stride}")
            else:
                b.lines.append("residual_end")
            b.lines.append("relu")
            hw //= stride
            cin = cout
    b.dense("fc", cin * hw * hw, _ch(1000, s))
    return b.finish("resnet18", (3, size, size))


def unet(scale="tiny", seed=0):
    """Down path of a de-noise U-net: stem conv, then three levels of
    unet_block separated by stride-2 convolutions."""
    s = parse_scale(scale)
    if s == "tiny":
        widths, size, temb = (4, 8, 8), 8, 4
    else:
        widths = tuple(_ch(c, s) for c in (64, 128, 256))
        size = _spatial(64, s, 8)
        temb = max(2, _ch(32, s))
    b = _Builder(seed)
    b.conv("stem", 3, widths[0], 3)
    b.lines.append("relu")
    cin = widths[0]
    for lvl, c in enumerate(widths):
        if lvl:
            b.conv(f"down{lvl}", cin, c, 3, stride=2)
            b.lines.append("relu")
        p = f"block{lvl}"
        b.conv(f"{p}.conv1", c, c, 3, emit=False)
        b.conv(f"{p}.conv2", c, c, 3, emit=False)
        b.dense(f"{p}.dense", temb, c, emit=False)
        b.lines.append(f"unet_block ch={c} temb={temb} w={p}")
        cin = c
    return b.finish("unet", (3, size, size))


GENERATORS = {"vgg16": vgg16, "resnet18": resnet18, "unet": unet}


def generate(model, scale=None, seed=0):
    if model not in GENERATORS:
        raise ValueError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    if scale is None:
        scale = "tiny" if model == "unet" else "1/8"
    return GENERATORS[model](scale, seed)


def temb_dim(graph):
    dims = {layer.temb for layer in graph.layers if layer.kind == "unet_block" and layer.temb}
    return dims.pop() if len(dims) == 1 else None


def random_input(shape, seed=0, sparsity=0.0, t_dim=None):
    """Input records for a network: uniform activations in [-1, 1) with an
    optional fraction forced to zero, plus a time embedding if asked."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = fxp.quantize_array(rng.uniform(-1, 1, shape))
    if sparsity:
        x = np.where(rng.random(shape) < sparsity, 0, x)
    recs = {"input": x}
    if t_dim:
        recs["temb"] = fxp.quantize_array(rng.uniform(-1, 1, (t_dim,)))
    return WeightStore(recs)


def random_network(seed, max_layers=4, max_hw=8, max_ch=10):
    """A random small network (at most ``max_layers`` constructs) mixing plain
    convs, pooling, ReLU, residual blocks with either shortcut kind,
    unet_blocks and a trailing dense layer. Returns (graph, weights, inputs)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    b = _Builder(seed)
    c = int(rng.integers(1, max_ch + 1))
    h = int(rng.integers(2, max_hw + 1))
    w = int(rng.integers(2, max_hw + 1))
    shape0 = (c, h, w)
    t_dim = int(rng.integers(1, 6))
    used_temb = False
    n = int(rng.integers(1, max_layers + 1))
    for i in range(n):
        last = i == n - 1
        kinds = ["conv3x3", "conv1x1", "relu", "residual", "unet"]
        if h % 2 == 0 and w % 2 == 0:
            kinds.append("maxpool")
        if last:
            kinds.append("dense")
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind in ("conv3x3", "conv1x1"):
            k = 3 if kind == "conv3x3" else 1
            stride = int(rng.integers(1, 3)) if min(h, w) > 2 else 1
            pad = int(rng.integers(0, 2)) if k == 3 and min(h, w) >= 3 else k // 2
            co = int(rng.integers(1, max_ch + 1))
            b.conv(f"l{i}", c, co, k, stride=stride, pad=pad)
            h = (h + 2 * pad - k) // stride + 1
            w = (w + 2 * pad - k) // stride + 1
            c = co
        elif kind in ("relu", "maxpool"):
            b.lines.append(kind)
            if kind == "maxpool":
                h, w = h // 2, w // 2
        elif kind == "residual":
            stride = 2 if min(h, w) > 2 and rng.random() < 0.3 else 1
            co = c if rng.random() < 0.5 and stride == 1 else int(rng.integers(1, max_ch + 1))
            b.lines.append("residual_begin")
            if rng.random() < 0.5:
                b.conv(f"l{i}.a", c, co, 3, stride=stride)
                b.lines.append("relu")
                b.conv(f"l{i}.b", co, co, 3)
            else:
                b.conv(f"l{i}.a", c, co, 3, stride=stride)
            if co != c or stride != 1:
                b.conv(f"l{i}.sc", c, co, 1, stride=stride, emit=False)
                b.lines.append(f"residual_end w=l{i}.sc stride={stride}")
            else:
                b.lines.append("residual_end")
            h = (h - 1) // stride + 1
            w = (w - 1) // stride + 1
            c = co
        elif kind == "unet":
            temb = t_dim if rng.random() < 0.8 else 0
            b.conv(f"l{i}.conv1", c, c, 3, emit=False)
            b.conv(f"l{i}.conv2", c, c, 3, emit=False)
            if temb:
                b.dense(f"l{i}.dense", temb, c, emit=False)
                used_temb = True
            b.lines.append(f"unet_block ch={c} temb={temb} w=l{i}")
        else:
            b.dense(f"l{i}", c * h * w, int(rng.integers(1, 9)))
            c, h, w = b.records[f"l{i}.bias"].shape[0], 1, 1
    g, ws = b.finish(f"rand{seed}", shape0)
    x = random_input(shape0, seed + 1, sparsity=float(rng.choice([0.0, 0.5])),
                     t_dim=t_dim if used_temb else None)
    return g, ws, x
