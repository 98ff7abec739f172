"""One server-flow unit: eight compute PEs (lanes 0-7) plus the server PE_9.

Lanes compute one output element each. Every clock, each busy lane issues
one MAC and the server executes at most one queued micro-op: a MAC of the
1x1 shortcut convolution, a MAC of the time-embedding dense row, or a
delivery of a residual term into a lane's residual register. Anything still
queued when the lanes finish their windows stalls the unit until drained.

Activation traffic goes through an 8-entry reuse register file. Each cycle
the lanes need a set of activation addresses; addresses held from the
previous cycle are served from the registers and only the rest are fetched
(by PE_9). With reuse disabled every operand slot is a fetch.
"""

from collections import deque
from functools import partial

import numpy as np

from . import fxp
from .pe import NORMAL, PE, RESIDUAL, ProtocolError

SERIES = "series"
RESIDUAL_STAGE = "residual_stage"
RESIDUAL_IDENTITY = "residual_identity"
RESIDUAL_CONV = "residual_conv"
UNET_DENSE = "unet_dense"
MODES = (SERIES, RESIDUAL_STAGE, RESIDUAL_IDENTITY, RESIDUAL_CONV, UNET_DENSE)

MODE_FOR_TASK = {
    "idle": SERIES,
    "stage": RESIDUAL_STAGE,
    "serve": RESIDUAL_IDENTITY,
    "conv1x1": RESIDUAL_CONV,
    "dense": UNET_DENSE,
}

LANES = 8
REUSE_REGS = 8


class SchedulingError(ValueError):
    pass


class SFU:
    def __init__(self, index=0, zero_gate=True, reuse=True):
        self.index = index
        self.pes = [PE(zero_gate) for _ in range(LANES + 1)]
        self.server = self.pes[LANES]
        self.reuse = reuse
        self.regs = frozenset()
        self.mode = SERIES
        self.split = False
        self.cycle = 0
        self.queue = deque()
        self.dense_hold = {}
        self.dense_pending = set()
        self.reset_stats()

    def reset_stats(self):
        """Clear per-layer counters; the reuse registers are invalidated too
        since the next layer reads a different buffer."""
        self.regs = frozenset()
        self.act_reads = 0
        self.act_slots = 0
        self.weight_reads = 0
        self.shortcut_reads = 0
        self.writes = 0
        self.lane_busy_cycles = 0
        self.server_busy_cycles = 0
        self.peak_busy = 0
        self.stall_cycles = 0
        for pe in self.pes:
            pe.mults = pe.skips = 0

    @property
    def server_active(self):
        return self.mode != SERIES

    def set_mode(self, mode, split=False):
        if mode not in MODES:
            raise SchedulingError(f"unknown mode {mode!r}")
        if any(pe.busy for pe in self.pes[:LANES]):
            raise ProtocolError("mode change in the middle of a window")
        self.mode = mode
        self.split = split
        self.dense_hold = {}
        self.dense_pending = set()

    # -- per-cycle machinery ---------------------------------------------

    def run_window(self, lanes, window, weight_reads_per_cycle=1):
        """Clock ``window`` cycles. ``lanes`` holds (pe, xs, ws, addrs) tuples."""
        nl = len(lanes)
        busy = nl + (1 if self.server_active else 0)
        if busy > self.peak_busy:
            self.peak_busy = busy
        queue = self.queue
        for t in range(window):
            need = set()
            for pe, xs, ws, addrs in lanes:
                pe.tick(xs[t], ws[t])
                need.add(addrs[t])
            if self.reuse:
                self.act_reads += len(need - self.regs)
                self.regs = need
            else:
                self.act_reads += nl
            if queue:
                queue.popleft()()
        self.act_slots += nl * window
        self.weight_reads += weight_reads_per_cycle * window
        self.lane_busy_cycles += nl * window
        if self.server_active:
            self.server_busy_cycles += window
        self.cycle += window

    def drain(self):
        """Stall until the server queue is empty; returns stall cycles."""
        n = 0
        while self.queue:
            self.queue.popleft()()
            n += 1
        self.cycle += n
        self.stall_cycles += n
        if self.server_active:
            self.server_busy_cycles += n
        return n

    def idle(self, n):
        self.cycle += n
        if self.server_active:
            self.server_busy_cycles += n

    # -- server micro-ops ------------------------------------------------

    def _op_deliver(self, target, value):
        target.load_residual(value)
        self.shortcut_reads += 1

    def _op_shortcut_mac(self, x, w, bias, first, target):
        srv = self.server
        if first:
            srv.start(bias_acc=bias, window=1)
        srv.tick(x, w)
        self.shortcut_reads += 1
        self.weight_reads += 1
        if target is None:
            srv.close_partial()
        else:
            target.load_residual(srv.take_sum())

    def _op_dense_mac(self, x, w, bias, first, n, key, targets):
        srv = self.server
        if first:
            srv.start(bias_acc=bias, window=n)
        srv.tick(x, w)
        self.shortcut_reads += 1
        self.weight_reads += 1
        if targets is not None:
            d = srv.emit()
            self.dense_hold[key] = d
            for pe in targets:
                pe.load_residual(fxp.promote(d))

    def _op_broadcast(self, key, targets):
        v = fxp.promote(self.dense_hold[key])
        for pe in targets:
            pe.load_residual(v)

    def queue_deliver(self, target, value):
        self.queue.append(partial(self._op_deliver, target, value))

    def queue_shortcut_conv(self, xs, ws, bias, target):
        """1x1 shortcut for one output element: one MAC per input channel."""
        n = len(xs)
        for i in range(n):
            self.queue.append(partial(self._op_shortcut_mac, xs[i], ws[i], bias,
                                      i == 0, target if i == n - 1 else None))

    def queue_dense(self, key, xs, ws, bias, targets):
        """Dense row ``key`` for the time embedding, broadcast to ``targets``.

        The row is computed once per mode setting; later requests only
        re-broadcast the held value.
        """
        if key in self.dense_pending:
            self.queue.append(partial(self._op_broadcast, key, targets))
            return
        self.dense_pending.add(key)
        n = len(xs)
        for i in range(n):
            self.queue.append(partial(self._op_dense_mac, xs[i], ws[i], bias, i == 0, n, key,
                                      targets if i == n - 1 else None))


# -- single-window conveniences ----------------------------------------------

def _window_lanes(sfu, patches, kernels, biases, residual, addrs=None):
    """Start lanes for one window batch and return their operand tuples.

    Without explicit ``addrs`` the patches are taken as consecutive output
    pixels of one row: lane k reads column k + kx of kernel row ky.
    """
    lanes = []
    for k, patch in enumerate(patches):
        if patch is None:
            continue
        pe = sfu.pes[k]
        kern = np.asarray(kernels[k], dtype=np.int64).ravel().tolist()
        xs = np.asarray(patch, dtype=np.int64).ravel().tolist()
        pe.start(bias_acc=fxp.promote(int(biases[k])), window=len(xs),
                 mode=RESIDUAL if residual else NORMAL)
        if addrs is None:
            kw = int(round(len(xs) ** 0.5))
            a = [(i // kw, k % 4 + i % kw) if sfu.split else (i // kw, k + i % kw) for i in range(len(xs))]
        else:
            a = list(addrs[k])
        lanes.append((pe, xs, kern, a))
    return lanes


def sfu_run_window(sfu, patches, kernel, bias=0, mode=SERIES, shortcut=None, addrs=None):
    """Run one window batch on a unit.

    ``patches``: 8 entries, each a k x k activation patch (raw Q8.8) or None.
    ``kernel``: the k x k weight slice shared by all lanes.
    ``shortcut``: per mode, None (series), 8 shortcut activations
    (residual_identity), a (x_vec, w_vec, bias) triple per lane
    (residual_conv), or (t_embed, w_row, bias) (unet_dense).

    ``addrs``: optional per-lane operand addresses for the reuse counters.

    Returns (lane outputs, PE_9 output). PE_9 output is the list of values it
    delivered, or None in series mode.
    """
    if mode not in MODES:
        raise SchedulingError(f"unknown mode {mode!r}")
    if mode in (RESIDUAL_IDENTITY, RESIDUAL_CONV, UNET_DENSE) and shortcut is None:
        raise SchedulingError(f"{mode} needs shortcut data")
    sfu.set_mode(mode)
    residual = mode in (RESIDUAL_IDENTITY, RESIDUAL_CONV, UNET_DENSE)
    lanes = _window_lanes(sfu, patches, [kernel] * LANES, [bias] * LANES, residual, addrs)
    active = [k for k, p in enumerate(patches) if p is not None]
    pe9 = None
    if mode == RESIDUAL_IDENTITY:
        pe9 = []
        for k in active:
            v = fxp.promote(int(shortcut[k]))
            sfu.queue_deliver(sfu.pes[k], v)
            pe9.append(v)
    elif mode == RESIDUAL_CONV:
        for k in active:
            xs, ws, b = shortcut[k]
            sfu.queue_shortcut_conv(list(map(int, xs)), list(map(int, ws)), fxp.promote(int(b)), sfu.pes[k])
    elif mode == UNET_DENSE:
        t, w_row, b = shortcut
        sfu.queue_dense(0, list(map(int, t)), list(map(int, w_row)), fxp.promote(int(b)),
                        [sfu.pes[k] for k in active])
    window = len(lanes[0][1]) if lanes else 0
    sfu.run_window(lanes, window)
    sfu.drain()
    if mode == RESIDUAL_CONV:
        pe9 = [sfu.pes[k].residual_in for k in active]
    elif mode == UNET_DENSE:
        pe9 = [sfu.dense_hold[0]]
    outs = [sfu.pes[k].emit() if patches[k] is not None else None for k in range(LANES)]
    sfu.cycle += 1
    return outs, pe9


def sfu_small_map(sfu, two_channel_inputs, kernels, biases=(0, 0), mode=SERIES, shortcut=None):
    """Split-array operation for a 2x2 map: lanes 0-3 compute channel N and
    lanes 4-7 channel N+1; PE_9 serves channel N's lanes first, then N+1's.

    ``two_channel_inputs``: two lists of 4 k x k patches (None for unused).
    ``kernels``: the two k x k kernels. ``shortcut`` (residual_identity):
    two lists of 4 shortcut activations.
    """
    if len(two_channel_inputs) != 2 or any(len(c) != 4 for c in two_channel_inputs):
        raise SchedulingError("small-map split needs two channels of a 2x2 map (4 patches each)")
    sfu.set_mode(mode, split=True)
    patches = list(two_channel_inputs[0]) + list(two_channel_inputs[1])
    kern = [kernels[0]] * 4 + [kernels[1]] * 4
    bias = [biases[0]] * 4 + [biases[1]] * 4
    residual = mode == RESIDUAL_IDENTITY
    lanes = _window_lanes(sfu, patches, kern, bias, residual)
    if residual:
        flat = list(shortcut[0]) + list(shortcut[1])
        for k, p in enumerate(patches):
            if p is not None:
                sfu.queue_deliver(sfu.pes[k], fxp.promote(int(flat[k])))
    window = len(lanes[0][1]) if lanes else 0
    sfu.run_window(lanes, window, weight_reads_per_cycle=2)
    sfu.drain()
    outs = [sfu.pes[k].emit() if patches[k] is not None else None for k in range(LANES)]
    sfu.cycle += 1
    return outs[:4], outs[4:]


def sfu_reuse_load(sfu, needed):
    """Fill the reuse registers for the first cycle of a scan; every operand
    is a fetch."""
    needed = frozenset(needed)
    if len(needed) > REUSE_REGS:
        raise SchedulingError(f"{len(needed)} operands exceed the {REUSE_REGS} reuse registers")
    sfu.regs = needed
    return len(needed)


def sfu_reuse_update(sfu, needed):
    """Advance the reuse register file to the operand addresses of one cycle.

    Returns the number of fetches the cycle costs.
    """
    needed = frozenset(needed)
    if len(needed) > REUSE_REGS:
        raise SchedulingError(f"{len(needed)} operands exceed the {REUSE_REGS} reuse registers")
    if not sfu.reuse:
        return len(needed)
    if not sfu.regs:
        raise ProtocolError("reuse update without a previously loaded window")
    n = len(needed - sfu.regs)
    sfu.regs = needed
    return n
