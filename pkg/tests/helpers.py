import numpy as np

from sfmmcn import netdesc
from sfmmcn.golden import Tensor
from sfmmcn.weights import WeightStore


def random_weights(g, seed=0, lo=-300, hi=300):
    """Random raw weights for every reference in ``g``."""
    rng = np.random.default_rng(seed)
    recs = {}

    def conv(name, o, i, k):
        recs[f"{name}.weight"] = rng.integers(lo, hi, (o, i, k, k))
        recs[f"{name}.bias"] = rng.integers(lo, hi, (o,))

    block_in = None
    shapes, _ = netdesc.infer_shapes(g)
    for layer, (ishape, _) in zip(g.layers, shapes):
        if layer.kind in ("conv3x3", "conv1x1"):
            conv(layer.weight, layer.out_ch, layer.in_ch, layer.kernel)
        elif layer.kind == "dense":
            recs[f"{layer.weight}.weight"] = rng.integers(lo, hi, (layer.out_ch, layer.in_ch))
            recs[f"{layer.weight}.bias"] = rng.integers(lo, hi, (layer.out_ch,))
        elif layer.kind == "residual_begin":
            block_in = ishape
        elif layer.kind == "residual_end" and layer.weight:
            conv(layer.weight, ishape[0], block_in[0], 1)
        elif layer.kind == "unet_block":
            conv(f"{layer.weight}.conv1", layer.in_ch, layer.in_ch, 3)
            conv(f"{layer.weight}.conv2", layer.in_ch, layer.in_ch, 3)
            if layer.temb:
                recs[f"{layer.weight}.dense.weight"] = rng.integers(lo, hi, (layer.in_ch, layer.temb))
                recs[f"{layer.weight}.dense.bias"] = rng.integers(lo, hi, (layer.in_ch,))
    return WeightStore(recs)


def random_tensor(shape, seed=0, lo=-256, hi=256, sparsity=0.0):
    rng = np.random.default_rng(seed)
    x = rng.integers(lo, hi, shape)
    if sparsity:
        x[rng.random(shape) < sparsity] = 0
    return Tensor(x)


def net(text, seed=0):
    g = netdesc.parse_network(text)
    return g, random_weights(g, seed), random_tensor(g.input_shape, seed + 1)
