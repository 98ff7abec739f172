"""Network description: text format, graph validation, block expansion.

One layer per line, ``key=value`` arguments, ``#`` starts a comment::

    network tiny
    input c=1 h=8 w=8
    conv3x3 in=1 out=4 stride=1 pad=1 w=c1
    relu
    residual_begin
    conv3x3 in=4 out=4 w=c2
    residual_end
    unet_block ch=4 temb=2 w=u1
    maxpool
    dense in=64 out=10 w=fc

A conv ``w=name`` refers to weight records ``name.weight`` and ``name.bias``.
``residual_end w=name stride=s`` adds a 1x1 convolution on the shortcut.
``unet_block w=p`` refers to ``p.conv1``, ``p.conv2`` and (if ``temb>0``)
``p.dense``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import fxp, golden
from .golden import ConvParams, Tensor

KINDS = ("conv3x3", "conv1x1", "maxpool", "relu", "dense",
         "residual_begin", "residual_end", "unet_block")

_KEYS = {
    "conv3x3": ({"in", "out", "w"}, {"stride", "pad"}),
    "conv1x1": ({"in", "out", "w"}, {"stride", "pad"}),
    "maxpool": (set(), set()),
    "relu": (set(), set()),
    "dense": ({"in", "out", "w"}, set()),
    "residual_begin": (set(), set()),
    "residual_end": (set(), {"w", "stride"}),
    "unet_block": ({"ch", "temb", "w"}, set()),
}


class ParseError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(f"line {ln}, col {col}: {msg}" for ln, col, msg in self.errors))


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    kind: str
    in_ch: int = 0
    out_ch: int = 0
    stride: int = 1
    pad: int = 0
    weight: str = None
    temb: int = 0
    line: int = field(default=0, compare=False)

    @property
    def kernel(self):
        return {"conv3x3": 3, "conv1x1": 1, "unet_block": 3}.get(self.kind, 0)

    def to_text(self):
        k = self.kind
        if k in ("conv3x3", "conv1x1"):
            return f"{k} in={self.in_ch} out={self.out_ch} stride={self.stride} pad={self.pad} w={self.weight}"
        if k == "dense":
            return f"dense in={self.in_ch} out={self.out_ch} w={self.weight}"
        if k == "residual_end" and self.weight:
            return f"residual_end w={self.weight} stride={self.stride}"
        if k == "unet_block":
            return f"unet_block ch={self.in_ch} temb={self.temb} w={self.weight}"
        return k


@dataclass(frozen=True)
class NetworkGraph:
    name: str
    input_shape: tuple
    layers: tuple

    def to_text(self):
        c, h, w = self.input_shape
        lines = [f"network {self.name}", f"input c={c} h={h} w={w}"]
        lines += [layer.to_text() for layer in self.layers]
        return "\n".join(lines) + "\n"

    @property
    def conv_count(self):
        n = 0
        for layer in self.layers:
            if layer.kind in ("conv3x3", "conv1x1"):
                n += 1
            elif layer.kind == "unet_block":
                n += 2
        return n


def _int(tok, val, errors, ln, col):
    try:
        v = int(val)
    except ValueError:
        errors.append((ln, col, f"malformed value {tok!r}, expected integer"))
        return None
    if v < 0:
        errors.append((ln, col, f"negative value in {tok!r}"))
        return None
    return v


def parse_network(text):
    errors = []
    name = "network"
    input_shape = None
    layers = []
    open_block = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        toks = []
        pos = 0
        for tok in line.split():
            pos = line.index(tok, pos)
            toks.append((tok, pos + 1))
            pos += len(tok)
        kind, kcol = toks[0]
        if kind == "network":
            if len(toks) != 2:
                errors.append((ln, kcol, "expected 'network <name>'"))
            else:
                name = toks[1][0]
            continue
        args = {}
        bad = False
        for tok, col in toks[1:]:
            if "=" not in tok or tok.startswith("=") or tok.endswith("="):
                errors.append((ln, col, f"syntax error: expected key=value, got {tok!r}"))
                bad = True
                continue
            k, v = tok.split("=", 1)
            if k in args:
                errors.append((ln, col, f"duplicate key {k!r}"))
                bad = True
            args[k] = (v, col, tok)
        if kind == "input":
            vals = {}
            for k in ("c", "h", "w"):
                if k not in args:
                    errors.append((ln, kcol, f"input declaration missing {k}="))
                    bad = True
                else:
                    vals[k] = _int(args[k][2], args[k][0], errors, ln, args[k][1])
            extra = set(args) - {"c", "h", "w"}
            for k in sorted(extra):
                errors.append((ln, args[k][1], f"unknown key {k!r} for input"))
            if not bad and all(v for v in vals.values()):
                input_shape = (vals["c"], vals["h"], vals["w"])
            elif not bad:
                errors.append((ln, kcol, "input dimensions must be >= 1"))
            continue
        if kind not in _KEYS:
            errors.append((ln, kcol, f"unknown layer kind {kind!r}"))
            continue
        required, optional = _KEYS[kind]
        for k in sorted(required - set(args)):
            errors.append((ln, kcol, f"{kind} missing {k}="))
            bad = True
        for k in sorted(set(args) - required - optional):
            errors.append((ln, args[k][1], f"unknown key {k!r} for {kind}"))
            bad = True
        if bad:
            continue
        kw = {}
        for k, (v, col, tok) in args.items():
            if k == "w":
                kw["weight"] = v
                continue
            iv = _int(tok, v, errors, ln, col)
            if iv is None:
                bad = True
                continue
            kw[{"in": "in_ch", "out": "out_ch", "ch": "in_ch"}.get(k, k)] = iv
        if bad:
            continue
        if kind == "unet_block":
            kw["out_ch"] = kw["in_ch"]
            kw["pad"] = 1
        if kind == "conv3x3":
            kw.setdefault("pad", 1)
        if kind in ("conv3x3", "conv1x1", "dense", "unet_block"):
            if kw["in_ch"] < 1 or kw["out_ch"] < 1:
                errors.append((ln, kcol, f"{kind} channel counts must be >= 1"))
                continue
        if kind in ("conv3x3", "conv1x1", "residual_end") and kw.get("stride", 1) not in (1, 2):
            errors.append((ln, args["stride"][1], "malformed shape: stride must be 1 or 2"))
            continue
        if kind == "residual_begin":
            if open_block is not None:
                errors.append((ln, kcol, f"residual_begin overlaps the block opened at line {open_block}"
                               f" (lines {open_block} and {ln})"))
                continue
            open_block = ln
        elif kind == "residual_end":
            if open_block is None:
                errors.append((ln, kcol, "residual_end without a matching residual_begin"))
                continue
            open_block = None
        layers.append(Layer(kind=kind, line=ln, **kw))
    if open_block is not None:
        errors.append((open_block, 1, f"residual_begin at line {open_block} is never closed"))
    if input_shape is None and not any("input" in e[2] for e in errors):
        errors.append((1, 1, "missing 'input c=.. h=.. w=..' declaration"))
    if errors:
        raise ParseError(errors)
    return NetworkGraph(name=name, input_shape=input_shape, layers=tuple(layers))


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _expect(ws, name, shape, line, issues):
    if ws is None:
        return
    if name not in ws:
        issues.append(Issue(line, f"unresolved weight reference {name!r}"))
    elif tuple(ws[name].shape) != tuple(shape):
        issues.append(Issue(line, f"weight {name!r} has shape {tuple(ws[name].shape)}, expected {tuple(shape)}"))


def _expect_conv(ws, name, out_ch, in_ch, k, line, issues):
    _expect(ws, f"{name}.weight", (out_ch, in_ch, k, k), line, issues)
    _expect(ws, f"{name}.bias", (out_ch,), line, issues)


def infer_shapes(g):
    """Per-layer (input shape, output shape) and the list of chaining issues."""
    issues = []
    shapes = []
    cur = tuple(g.input_shape)
    producer = None  # (line, kind) of the layer that produced ``cur``
    block_in = None
    prev = None
    for layer in g.layers:
        c, h, w = cur
        out = cur
        who = f"{producer[1]} at line {producer[0]}" if producer else "the network input"
        if layer.kind in ("conv3x3", "conv1x1", "unet_block"):
            if layer.in_ch != c:
                issues.append(Issue(layer.line, f"{layer.kind} at line {layer.line} expects {layer.in_ch} input"
                                    f" channels but {who} produces {c}"))
            k = layer.kernel
            oh = golden.conv_out_size(h, k, layer.stride, layer.pad)
            ow = golden.conv_out_size(w, k, layer.stride, layer.pad)
            if oh < 1 or ow < 1:
                issues.append(Issue(layer.line, f"{layer.kind} output would be empty for {h}x{w} input"))
                oh, ow = max(oh, 1), max(ow, 1)
            out = (layer.out_ch, oh, ow)
        elif layer.kind == "maxpool":
            if h % 2 or w % 2:
                issues.append(Issue(layer.line, f"maxpool at line {layer.line} needs even spatial dims, {who} produces {h}x{w}"))
            out = (c, max(h // 2, 1), max(w // 2, 1))
        elif layer.kind == "dense":
            if layer.in_ch != c * h * w:
                issues.append(Issue(layer.line, f"dense at line {layer.line} expects {layer.in_ch} inputs"
                                    f" but {who} produces {c * h * w}"))
            out = (layer.out_ch, 1, 1)
        elif layer.kind == "residual_begin":
            block_in = cur
        elif layer.kind == "residual_end":
            if prev is None or prev.kind not in ("conv3x3", "conv1x1") or prev.line < 0:
                issues.append(Issue(layer.line, "residual_end must directly follow a convolution"))
            if block_in is not None:
                bc, bh, bw = block_in
                if layer.weight:
                    sh = golden.conv_out_size(bh, 1, layer.stride, 0)
                    sw = golden.conv_out_size(bw, 1, layer.stride, 0)
                    sc = (c, sh, sw)
                else:
                    sc = block_in
                if sc != cur:
                    issues.append(Issue(layer.line, f"shortcut shape {sc} does not match main path {cur}"))
        if layer.kind in ("dense", "unet_block") and block_in is not None:
            issues.append(Issue(layer.line, f"{layer.kind} is not allowed inside a residual block"))
        if layer.kind == "residual_end":
            block_in = None
        shapes.append((cur, out))
        if out != cur or layer.kind not in ("relu", "residual_begin", "residual_end"):
            producer = (layer.line, layer.kind)
        cur = out
        prev = layer
    return shapes, issues


def validate_graph(g, ws=None, temb_dim=None):
    """Return a list of :class:`Issue`; empty means valid."""
    shapes, issues = infer_shapes(g)
    block_in = None
    for layer, (ishape, _) in zip(g.layers, shapes):
        if layer.kind in ("conv3x3", "conv1x1"):
            _expect_conv(ws, layer.weight, layer.out_ch, layer.in_ch, layer.kernel, layer.line, issues)
        elif layer.kind == "dense":
            _expect(ws, f"{layer.weight}.weight", (layer.out_ch, layer.in_ch), layer.line, issues)
            _expect(ws, f"{layer.weight}.bias", (layer.out_ch,), layer.line, issues)
        elif layer.kind == "residual_begin":
            block_in = ishape
        elif layer.kind == "residual_end" and layer.weight:
            in_c = block_in[0] if block_in else 0
            _expect_conv(ws, layer.weight, ishape[0], in_c, 1, layer.line, issues)
        elif layer.kind == "unet_block":
            ch = layer.in_ch
            _expect_conv(ws, f"{layer.weight}.conv1", ch, ch, 3, layer.line, issues)
            _expect_conv(ws, f"{layer.weight}.conv2", ch, ch, 3, layer.line, issues)
            if layer.temb:
                _expect(ws, f"{layer.weight}.dense.weight", (ch, layer.temb), layer.line, issues)
                _expect(ws, f"{layer.weight}.dense.bias", (ch,), layer.line, issues)
                if temb_dim is not None and temb_dim != layer.temb:
                    issues.append(Issue(layer.line, f"unet_block expects a {layer.temb}-dim time embedding,"
                                        f" got {temb_dim}"))
    return issues


# -- execution plan ---------------------------------------------------------

PE9_TASKS = ("idle", "stage", "serve", "conv1x1", "dense")


@dataclass(frozen=True)
class Step:
    op: str  # conv | maxpool | relu | dense
    line: int
    in_shape: tuple
    out_shape: tuple
    weight: str = None
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    pe9: str = "idle"
    save_shortcut: bool = False
    residual: bool = False
    shortcut_weight: str = None
    shortcut_stride: int = 1
    temb_weight: str = None
    block: int = None


def expand_blocks(g, ws=None, temb_dim=None):
    """Lower residual and U-net blocks into primitive steps.

    PE_9 duties are annotations on conv steps, never extra steps.
    """
    issues = validate_graph(g, ws, temb_dim)
    if issues:
        raise PlanError("\n".join(map(str, issues)))
    shapes, _ = infer_shapes(g)
    steps = []
    block = None
    block_id = 0
    pending_save = False
    for i, (layer, (ishape, oshape)) in enumerate(zip(g.layers, shapes)):
        k = layer.kind
        if k == "residual_begin":
            block = block_id
            block_id += 1
            pending_save = True
            continue
        if k == "residual_end":
            last = steps[-1]
            steps[-1] = replace(last, residual=True,
                                pe9="conv1x1" if layer.weight else "serve",
                                shortcut_weight=layer.weight,
                                shortcut_stride=layer.stride)
            block = None
            continue
        if k in ("conv3x3", "conv1x1"):
            steps.append(Step("conv", layer.line, ishape, oshape, weight=layer.weight,
                              kernel=layer.kernel, stride=layer.stride, pad=layer.pad,
                              pe9="stage" if block is not None else "idle",
                              save_shortcut=pending_save, block=block))
            pending_save = False
        elif k == "unet_block":
            p = layer.weight
            bid = block_id
            block_id += 1
            steps.append(Step("conv", layer.line, ishape, oshape, weight=f"{p}.conv1", kernel=3,
                              pad=1, pe9="dense" if layer.temb else "stage", save_shortcut=True,
                              temb_weight=f"{p}.dense" if layer.temb else None, block=bid))
            steps.append(Step("relu", layer.line, oshape, oshape, block=bid))
            steps.append(Step("conv", layer.line, oshape, oshape, weight=f"{p}.conv2", kernel=3,
                              pad=1, pe9="serve", residual=True, block=bid))
        elif k in ("maxpool", "relu"):
            steps.append(Step(k, layer.line, ishape, oshape, save_shortcut=pending_save, block=block))
            pending_save = False
        elif k == "dense":
            steps.append(Step("dense", layer.line, ishape, oshape, weight=layer.weight))
    return steps


# -- golden execution -------------------------------------------------------

def conv_params(ws, name, stride=1, pad=0):
    return ConvParams(ws[f"{name}.weight"], ws[f"{name}.bias"], stride=stride, pad=pad)


def shortcut_acc(ws, shortcut, weight, stride):
    """Q16.16 shortcut term for the residual adder."""
    if weight is None:
        return fxp.promote_array(shortcut.data)
    return golden.conv2d_acc(shortcut, conv_params(ws, weight, stride=stride, pad=0))


def run_graph_golden(g, ws, x, temb=None):
    issues = validate_graph(g, ws, None if temb is None else len(temb))
    if issues:
        raise PlanError("\n".join(map(str, issues)))
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape != tuple(g.input_shape):
        raise golden.ShapeError(f"input shape {x.shape} does not match declared {tuple(g.input_shape)}")
    shortcut = None
    layers = g.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        k = layer.kind
        if k in ("conv3x3", "conv1x1"):
            p = conv_params(ws, layer.weight, layer.stride, layer.pad)
            nxt = layers[i + 1] if i + 1 < len(layers) else None
            if nxt is not None and nxt.kind == "residual_end":
                res = shortcut_acc(ws, shortcut, nxt.weight, nxt.stride)
                x = golden.conv2d(x, p, residual=res)
                i += 1
            else:
                x = golden.conv2d(x, p)
        elif k == "relu":
            x = golden.relu(x)
        elif k == "maxpool":
            x = golden.maxpool2(x)
        elif k == "dense":
            v = golden.dense(x.data.ravel(), ws[f"{layer.weight}.weight"], ws[f"{layer.weight}.bias"])
            x = Tensor(v.reshape(-1, 1, 1))
        elif k == "residual_begin":
            shortcut = x
        elif k == "unet_block":
            x = golden.unet_block(x, temb, unet_params(ws, layer))
        i += 1
    return x


def unet_params(ws, layer):
    p = layer.weight
    dw = db = None
    if layer.temb:
        dw, db = ws[f"{p}.dense.weight"], ws[f"{p}.dense.bias"]
    return golden.UnetParams(conv_params(ws, f"{p}.conv1", 1, 1), conv_params(ws, f"{p}.conv2", 1, 1), dw, db)


def run_plan_golden(plan, ws, x, temb=None):
    """Golden execution of an expanded plan, driven by its annotations."""
    shortcut = None
    for st in plan:
        if st.save_shortcut:
            shortcut = x
        if st.op == "conv":
            p = conv_params(ws, st.weight, st.stride, st.pad)
            res = None
            if st.temb_weight:
                d = golden.dense(temb, ws[f"{st.temb_weight}.weight"], ws[f"{st.temb_weight}.bias"])
                res = np.broadcast_to(fxp.promote_array(d)[:, None, None], st.out_shape)
            elif st.residual:
                res = shortcut_acc(ws, shortcut, st.shortcut_weight, st.shortcut_stride)
            x = golden.conv2d(x, p, residual=res)
        elif st.op == "relu":
            x = golden.relu(x)
        elif st.op == "maxpool":
            x = golden.maxpool2(x)
        elif st.op == "dense":
            v = golden.dense(x.data.ravel(), ws[f"{st.weight}.weight"], ws[f"{st.weight}.bias"])
            x = Tensor(v.reshape(-1, 1, 1))
    return x
