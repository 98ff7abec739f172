"""Independent reference implementations used only by the tests.

Written with plain Python integers and Fractions, sharing no code with the
package, so agreement is a real cross-check rather than a tautology.
"""

from fractions import Fraction

Q = 256
ACC_LO, ACC_HI = -(2 ** 31), 2 ** 31 - 1
FX_LO, FX_HI = -(2 ** 15), 2 ** 15 - 1


def sat(v, lo=ACC_LO, hi=ACC_HI):
    return max(lo, min(hi, v))


def narrow(acc):
    # Fraction rounding is half-to-even
    return sat(round(Fraction(acc, Q)), FX_LO, FX_HI)


def conv(x, w, b, stride=1, pad=0, residual=None):
    """x: [c][h][w] ints, w: [o][c][k][k], b: [o]; residual: [o][oh][ow] Q16.16."""
    cin, h, wd = len(x), len(x[0]), len(x[0][0])
    k = len(w[0][0])
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1

    def px(c, y, xx):
        if 0 <= y < h and 0 <= xx < wd:
            return x[c][y][xx]
        return 0

    out = []
    for o in range(len(w)):
        plane = []
        for oy in range(oh):
            row = []
            for ox in range(ow):
                total = b[o] * Q
                for c in range(cin):
                    po = 0
                    for ky in range(k):
                        for kx in range(k):
                            po = sat(po + px(c, oy * stride + ky - pad, ox * stride + kx - pad) * w[o][c][ky][kx])
                    total = sat(total + po)
                if residual is not None:
                    total = sat(total + residual[o][oy][ox])
                row.append(narrow(total))
            plane.append(row)
        out.append(plane)
    return out


def conv_acc_1x1(x, w, b, stride):
    """Full-precision 1x1 conv accumulator (the fused shortcut term)."""
    out = []
    for o in range(len(w)):
        plane = []
        for y in range(0, len(x[0]), stride):
            row = []
            for xx in range(0, len(x[0][0]), stride):
                total = b[o] * Q
                for c in range(len(x)):
                    total = sat(total + sat(x[c][y][xx] * w[o][c][0][0]))
                row.append(total)
            plane.append(row)
        out.append(plane)
    return out


def window_fetches(addr_seq, regs=8):
    """Fetch count of a register file that keeps exactly the previous cycle's
    operands: brute force over the cycle sequence."""
    held, n = [], 0
    for cycle in addr_seq:
        for a in set(cycle):
            if a not in held:
                n += 1
        held = list(set(cycle))[:regs]
    return n
