"""Top-level accelerator: an array of SF units driven by a layer scheduler.

Convolution mapping
-------------------
Each unit computes one output channel (two for maps of at most 4 pixels,
where the lanes split 4/4 between channel N and N+1). Lanes take 8
consecutive output pixels per batch. A batch runs one ``k*k``-cycle window
per input channel; the final output is emitted in the cycle that overlaps
the first window of the next batch, so a layer costs
``batches * steps * k*k + stalls + 1`` cycles.

When a layer has fewer input channels than there are units, ``Cin`` units
cooperate on one output channel, one input channel each, and sum their
partial outputs over the register exchange. With 3 input channels and 8
units this leaves 2 units idle.

PE_9 duties come from the execution plan (see ``netdesc.expand_blocks``).
Pooling and activation units work on the emitted stream and add no cycles.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import fxp, netdesc
from .golden import Tensor
from .pe import NORMAL, RESIDUAL
from .sfu import LANES, MODE_FOR_TASK, SERIES, SFU, SchedulingError


@dataclass(frozen=True)
class AcceleratorConfig:
    units: int = 8
    frequency_hz: float = 400e6
    reuse_enabled: bool = True
    zero_gate: bool = True
    p1: float = 1.0
    pr: float = 0.1
    pc: float = 5.0
    setup_cycles: int = 0

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("units must be >= 1")
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")
        if min(self.p1, self.pr, self.pc) < 0 or self.setup_cycles < 0:
            raise ValueError("power coefficients and setup latency must be nonnegative")

    @property
    def total_pes(self):
        return 9 * self.units


@dataclass
class LayerRecord:
    index: int
    op: str
    line: int
    mode: str = SERIES
    cycles: int = 0
    operating_cycles: int = 0
    active_pe_cycles: int = 0
    total_pe_cycles: int = 0
    pe_act: int = 0
    pe_total: int = 0
    multiplies: int = 0
    skipped: int = 0
    act_reads: int = 0
    act_reads_no_reuse: int = 0
    weight_reads: int = 0
    shortcut_reads: int = 0
    writes: int = 0
    stall_cycles: int = 0
    iterations: int = 0
    active_units: int = 0
    steps_per_batch: int = 0
    window: int = 0
    input_width: int = 0
    emissions: list = field(default_factory=list, repr=False)
    mode_cycles: dict = field(default_factory=dict)

    @property
    def mac_slots(self):
        return self.multiplies + self.skipped

    @property
    def first_emit_cycle(self):
        return self.emissions[0] if self.emissions else None

    @property
    def emit_period(self):
        """Steady-state cycles between consecutive batch emissions."""
        if len(self.emissions) < 2:
            return None
        gaps = np.diff(self.emissions)
        return int(np.median(gaps))

    @property
    def cycles_per_conv(self):
        """Steady-state cycles per single-channel convolution window."""
        p = self.emit_period
        if p is None:
            return self.window if self.emissions else None
        return p / self.steps_per_batch


@dataclass
class CycleLog:
    config: AcceleratorConfig
    layers: list = field(default_factory=list)

    def total(self, attr):
        return sum(getattr(r, attr) for r in self.layers)

    @property
    def cycles(self):
        return self.total("cycles")

    def mode_histogram(self):
        hist = {}
        for r in self.layers:
            for m, c in r.mode_cycles.items():
                hist[m] = hist.get(m, 0) + c
        return hist

    def signature(self):
        """Hashable summary used for determinism checks."""
        return tuple((r.op, r.cycles, r.active_pe_cycles, r.multiplies, r.skipped,
                      r.act_reads, r.weight_reads, r.shortcut_reads, r.writes,
                      tuple(r.emissions)) for r in self.layers)


@dataclass(frozen=True)
class TileSchedule:
    """How one conv or dense step maps onto the unit array."""

    group: int  # units cooperating on one output channel
    channels_per_unit: int  # 2 when the lanes split for a small map
    iterations: tuple  # per iteration: tuple of output-channel tuples, one per group
    batches: tuple  # per batch: lane -> (slot, pixel) or None
    steps: int  # input-channel windows per batch
    window: int

    @property
    def active_units(self):
        return max(len(it) for it in self.iterations) * self.group


def schedule_layer(step, cfg):
    if step.op == "conv":
        if step.kernel not in (1, 3):
            raise SchedulingError(f"unsupported kernel {step.kernel}x{step.kernel}")
        cin = step.in_shape[0]
        cout, oh, ow = step.out_shape
        npix = oh * ow
        g = cin if cin < cfg.units else 1
        groups = cfg.units // g
        cpu = 2 if npix <= 4 and cout > 1 else 1
        if cpu == 2:
            batches = (tuple([(0, p) if p < npix else None for p in range(4)]
                             + [(1, p) if p < npix else None for p in range(4)]),)
        else:
            batches = tuple(tuple((0, b * LANES + k) if b * LANES + k < npix else None
                                  for k in range(LANES))
                            for b in range(math.ceil(npix / LANES)))
        per_iter = groups * cpu
        its = []
        for base in range(0, cout, per_iter):
            chans = list(range(base, min(base + per_iter, cout)))
            its.append(tuple(tuple(chans[q * cpu:(q + 1) * cpu])
                             for q in range(math.ceil(len(chans) / cpu))))
        return TileSchedule(g, cpu, tuple(its), batches, cin if g == 1 else 1, step.kernel ** 2)
    if step.op == "dense":
        nout = step.out_shape[0]
        cap = cfg.units * LANES
        its = []
        for base in range(0, nout, cap):
            outs = list(range(base, min(base + cap, nout)))
            its.append(tuple(tuple(outs[u * LANES:(u + 1) * LANES])
                             for u in range(math.ceil(len(outs) / LANES))))
        n_in = int(np.prod(step.in_shape))
        return TileSchedule(1, 1, tuple(its), (tuple((k, None) for k in range(LANES)),), 1, n_in)
    raise SchedulingError(f"step {step.op!r} does not run on the PE array")


class Accelerator:
    def __init__(self, cfg=None):
        self.cfg = cfg or AcceleratorConfig()
        self.units = [SFU(i, zero_gate=self.cfg.zero_gate, reuse=self.cfg.reuse_enabled)
                      for i in range(self.cfg.units)]

    # -- public ----------------------------------------------------------

    def run_plan(self, plan, ws, x, temb=None):
        log = CycleLog(self.cfg)
        shortcut = None
        for i, st in enumerate(plan):
            if st.save_shortcut:
                shortcut = x
            rec = LayerRecord(index=i, op=st.op, line=st.line,
                              pe_total=self.cfg.total_pes)
            if st.op == "conv":
                x = self._run_conv(st, ws, x, shortcut, temb, rec)
            elif st.op == "dense":
                x = self._run_dense(st, ws, x, rec)
            elif st.op == "relu":
                x = activation_unit(x)
                rec.writes = x.data.size
            elif st.op == "maxpool":
                x = pooling_unit(x)
                rec.writes = x.data.size
            log.layers.append(rec)
        return x, log

    # -- conv ------------------------------------------------------------

    def _run_conv(self, st, ws, x, shortcut, temb, rec):
        cfg = self.cfg
        sched = schedule_layer(st, cfg)
        cin, h, w = st.in_shape
        cout, oh, ow = st.out_shape
        k, s, pad = st.kernel, st.stride, st.pad
        kk = k * k
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
        hp, wp = xp.shape[1], xp.shape[2]
        xflat = xp.ravel().tolist()
        wt = ws[f"{st.weight}.weight"].reshape(cout, cin, kk).tolist()
        bias = [fxp.promote(int(b)) for b in ws[f"{st.weight}.bias"]]
        offs = [ky * wp + kx for ky in range(k) for kx in range(k)]
        origin = [(oy * s) * wp + ox * s for oy in range(oh) for ox in range(ow)]
        out = np.zeros((cout, oh * ow), dtype=np.int64)

        task = st.pe9
        mode = MODE_FOR_TASK[task]
        residual = st.residual or task == "dense"
        if task in ("serve", "conv1x1") and shortcut is None:
            raise SchedulingError(f"{mode} without shortcut data")
        sc = shortcut.data.reshape(shortcut.shape[0], -1) if shortcut is not None else None
        if task == "conv1x1":
            scw = ws[f"{st.shortcut_weight}.weight"][:, :, 0, 0].tolist()
            scb = [fxp.promote(int(b)) for b in ws[f"{st.shortcut_weight}.bias"]]
            sh, sw = shortcut.shape[1], shortcut.shape[2]
            sc_origin = [(oy * st.shortcut_stride) * sw + ox * st.shortcut_stride
                         for oy in range(oh) for ox in range(ow)]
            scl = sc.tolist()
        if task == "dense":
            tw = ws[f"{st.temb_weight}.weight"].tolist()
            tb = [fxp.promote(int(b)) for b in ws[f"{st.temb_weight}.bias"]]
            tv = [int(v) for v in np.asarray(temb).ravel()]

        g = sched.group
        for u in self.units:
            u.reset_stats()
        cycle = cfg.setup_cycles
        for iteration in sched.iterations:
            units_used = []
            for q, chans in enumerate(iteration):
                for j in range(g):
                    unit = self.units[q * g + j]
                    unit.set_mode(mode, split=sched.channels_per_unit == 2)
                    units_used.append((q, j, unit, chans))
            for batch in sched.batches:
                # open lanes and queue server work
                lane_sets = {}
                for q, j, unit, chans in units_used:
                    lanes = []
                    for kl, slot in enumerate(batch):
                        if slot is None or slot[0] >= len(chans):
                            continue
                        co, pix = chans[slot[0]], slot[1]
                        pe = unit.pes[kl]
                        if j == 0:
                            pe.start(bias_acc=bias[co], window=kk,
                                     mode=RESIDUAL if residual else NORMAL)
                        else:
                            pe.start(bias_acc=0, window=kk)
                        lanes.append((kl, pe, co, pix))
                    lane_sets[unit.index] = lanes
                for q, j, unit, chans in units_used:
                    leader = self.units[q * g]
                    lanes = lane_sets[leader.index]
                    if task == "serve" and j == 0:
                        for kl, pe, co, pix in lanes:
                            unit.queue_deliver(pe, fxp.promote(sc[co][pix]))
                    elif task == "conv1x1":
                        for kl, pe, co, pix in lanes:
                            if kl % g != j:
                                continue
                            o = sc_origin[pix]
                            xs = [scl[c][o] for c in range(len(scl))]
                            unit.queue_shortcut_conv(xs, scw[co], scb[co], pe)
                    elif task == "dense":
                        # rows spread over the group's servers, as for 1x1 shortcuts
                        for i, co in enumerate(chans):
                            if i % g != j:
                                continue
                            targets = [pe for kl, pe, c, pix in lanes if c == co]
                            if targets:
                                unit.queue_dense(co, tv, tw[co], tb[co], targets)
                # input-channel windows
                batch_start = cycle
                for step_i in range(sched.steps):
                    for q, j, unit, chans in units_used:
                        ci = step_i if g == 1 else j
                        base = ci * hp * wp
                        wl = []
                        ncos = set()
                        for kl, pe, co, pix in lane_sets[unit.index]:
                            o = base + origin[pix]
                            addrs = [o + d for d in offs]
                            wl.append((pe, [xflat[a] for a in addrs], wt[co][ci], addrs))
                            ncos.add(co)
                        unit.run_window(wl, kk, weight_reads_per_cycle=len(ncos))
                        if step_i < sched.steps - 1:
                            for pe, *_ in wl:
                                pe.close_partial()
                    cycle += kk
                stalls = [unit.drain() for _, _, unit, _ in units_used]
                stall = max(stalls) if stalls else 0
                for (_, _, unit, _), n in zip(units_used, stalls):
                    unit.idle(stall - n)
                cycle += stall
                rec.stall_cycles += stall
                # register exchange, then emission in the overlapped cycle
                for q, chans in enumerate(iteration):
                    leader = self.units[q * g]
                    for kl, pe, co, pix in lane_sets[leader.index]:
                        partials = [self.units[q * g + j].pes[kl].take_sum() for j in range(1, g)]
                        out[co, pix] = pe.emit(partials)
                        leader.writes += 1
                last_lanes = sum(len(lane_sets[self.units[q * g].index]) for q in range(len(iteration)))
                rec.emissions.append(cycle + 1 - cfg.setup_cycles)
                rec.mode_cycles[mode] = rec.mode_cycles.get(mode, 0) + (cycle - batch_start)
        cycle += 1  # final emission cycle
        rec.mode_cycles[mode] = rec.mode_cycles.get(mode, 0) + 1
        self._finish_record(rec, sched, cycle, mode, last_lanes)
        rec.input_width = w
        return Tensor(out.reshape(cout, oh, ow))

    # -- dense -----------------------------------------------------------

    def _run_dense(self, st, ws, x, rec):
        cfg = self.cfg
        sched = schedule_layer(st, cfg)
        xv = x.data.ravel().tolist()
        n_in = len(xv)
        wmat = ws[f"{st.weight}.weight"].tolist()
        bias = [fxp.promote(int(b)) for b in ws[f"{st.weight}.bias"]]
        nout = st.out_shape[0]
        out = np.zeros(nout, dtype=np.int64)
        addrs = list(range(n_in))
        for u in self.units:
            u.reset_stats()
        cycle = cfg.setup_cycles
        for iteration in sched.iterations:
            for ui, outs in enumerate(iteration):
                unit = self.units[ui]
                unit.set_mode(SERIES)
                wl = []
                for kl, j in enumerate(outs):
                    pe = unit.pes[kl]
                    pe.start(bias_acc=bias[j], window=n_in)
                    wl.append((pe, xv, wmat[j], addrs))
                unit.run_window(wl, n_in, weight_reads_per_cycle=len(wl))
                for kl, j in enumerate(outs):
                    out[j] = unit.pes[kl].emit()
                    unit.writes += 1
            last_lanes = sum(len(outs) for outs in iteration)
            cycle += n_in
            rec.emissions.append(cycle + 1 - cfg.setup_cycles)
        cycle += 1
        rec.mode_cycles[SERIES] = cycle - cfg.setup_cycles
        self._finish_record(rec, sched, cycle, SERIES, last_lanes)
        return Tensor(out.reshape(nout, 1, 1))

    def _finish_record(self, rec, sched, cycle, mode, final_lanes):
        units = self.units
        rec.mode = mode
        rec.cycles = cycle
        rec.operating_cycles = cycle - self.cfg.setup_cycles
        rec.total_pe_cycles = self.cfg.total_pes * cycle
        # lanes emitting in the last, non-overlapped cycle are active too
        rec.active_pe_cycles = sum(u.lane_busy_cycles + u.server_busy_cycles for u in units) + final_lanes
        rec.pe_act = sum(u.peak_busy for u in units)
        rec.multiplies = sum(pe.mults for u in units for pe in u.pes)
        rec.skipped = sum(pe.skips for u in units for pe in u.pes)
        rec.act_reads = sum(u.act_reads for u in units)
        rec.act_reads_no_reuse = sum(u.act_slots for u in units)
        rec.weight_reads = sum(u.weight_reads for u in units)
        rec.shortcut_reads = sum(u.shortcut_reads for u in units)
        rec.writes = sum(u.writes for u in units)
        rec.iterations = len(sched.iterations)
        rec.active_units = sched.active_units if rec.op == "conv" else \
            max(len(it) for it in sched.iterations)
        rec.steps_per_batch = sched.steps
        rec.window = sched.window


# -- pooling / activation units (stream processors outside the PE array) ----

def activation_unit(x):
    d = x.data.ravel().tolist()
    return Tensor(np.array([v if v > 0 else 0 for v in d], dtype=np.int64).reshape(x.shape))


def pooling_unit(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise SchedulingError(f"pooling unit needs even dims, got {h}x{w}")
    d = x.data.tolist()
    out = [[[max(d[ch][2 * i][2 * j], d[ch][2 * i][2 * j + 1],
                 d[ch][2 * i + 1][2 * j], d[ch][2 * i + 1][2 * j + 1])
             for j in range(w // 2)] for i in range(h // 2)] for ch in range(c)]
    return Tensor(np.array(out, dtype=np.int64))


def run_network(g, ws, x, cfg=None, temb=None):
    """Validate, expand and simulate a network. Returns (output, CycleLog)."""
    cfg = cfg or AcceleratorConfig()
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape != tuple(g.input_shape):
        raise netdesc.PlanError(f"input shape {x.shape} does not match declared {tuple(g.input_shape)}")
    plan = netdesc.expand_blocks(g, ws, None if temb is None else len(temb))
    return Accelerator(cfg).run_plan(plan, ws, x, temb)


@dataclass(frozen=True)
class TrafficSummary:
    weight_reads: int
    activation_reads: int
    shortcut_reads: int
    writes: int
    activation_reads_without_reuse: int

    @property
    def reuse_savings(self):
        return self.activation_reads_without_reuse - self.activation_reads

    @property
    def total_reads(self):
        return self.weight_reads + self.activation_reads + self.shortcut_reads

    def to_dict(self):
        return {
            "weight_reads": self.weight_reads,
            "activation_reads": self.activation_reads,
            "shortcut_reads": self.shortcut_reads,
            "writes": self.writes,
            "activation_reads_without_reuse": self.activation_reads_without_reuse,
            "reuse_savings": self.reuse_savings,
        }


def memory_traffic(log):
    return TrafficSummary(
        weight_reads=log.total("weight_reads"),
        activation_reads=log.total("act_reads"),
        shortcut_reads=log.total("shortcut_reads"),
        writes=log.total("writes"),
        activation_reads_without_reuse=log.total("act_reads_no_reuse"),
    )


# -- row-based baseline -----------------------------------------------------

@dataclass
class BaselineLayer:
    index: int
    line: int
    input_width: int
    kernel: int
    cycles_per_conv: int
    convs: int
    cycles: int
    macs_per_pass: int


@dataclass
class BaselineLog:
    layers: list
    notes: list

    @property
    def cycles(self):
        return sum(r.cycles for r in self.layers)


def baseline_run(plan):
    """Analytic row-based accelerator: one kernel row per cycle, so a
    single-channel convolution pass over an N-pixel-wide map takes
    ``k * N`` cycles and yields N outputs (one output per ``k`` cycles)."""
    layers, notes = [], []
    for i, st in enumerate(plan):
        if st.op != "conv":
            notes.append(f"step {i} ({st.op}, line {st.line}) skipped: baseline models convolutions only")
            continue
        cin, _, n = st.in_shape
        cout, oh, ow = st.out_shape
        k = st.kernel
        convs = cin * cout * oh * ow
        layers.append(BaselineLayer(i, st.line, n, k, k * n, convs, k * convs, n))
    return BaselineLog(layers, notes)
