"""Figures of merit: computing-cycle percentage, PE utilization, power,
efficiency factor and throughput.

Two efficiency-factor conventions are reported side by side:

* ``nu_eq4``  = P_total / U_PE  (power per percent of utilization)
* ``nu_table`` = P_total / PE_act (power per executing PE)

The second one is what cross-accelerator comparison tables use, and what
makes the factor fall as more units are added.
"""

from dataclasses import dataclass, field

from .accel import AcceleratorConfig, run_network


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. zero denominator)."""


def compute_ct(operating, enabled):
    """Percentage of enabled cycles spent operating."""
    if enabled <= 0:
        raise MetricError("computing-cycle percentage undefined for zero enabled cycles")
    if not 0 <= operating <= enabled:
        raise MetricError(f"operating cycles {operating} outside [0, {enabled}]")
    return 100.0 * operating / enabled


def compute_upe(pe_act, pe_total, c_t):
    """PE utilization in percent; ``c_t`` is already a percentage."""
    if pe_total <= 0:
        raise MetricError("PE utilization undefined for zero PEs")
    if not 0 <= pe_act <= pe_total:
        raise MetricError(f"active PEs {pe_act} outside [0, {pe_total}]")
    return pe_act / pe_total * c_t


def compute_ptotal(n_active, p1, p_r, p_c):
    if min(n_active, p1, p_r, p_c) < 0:
        raise MetricError("power terms must be nonnegative")
    return n_active * p1 + p_r + p_c


def compute_nu(p_total, u_pe):
    if u_pe <= 0:
        raise MetricError("efficiency factor undefined at zero utilization")
    return p_total / u_pe


def nu_table(p_total, pe_act):
    if pe_act <= 0:
        raise MetricError("efficiency factor undefined with no active PEs")
    return p_total / pe_act


def compute_throughput(mac_count, cycles, frequency_hz):
    """Giga-ops per second, two ops per MAC."""
    if cycles <= 0:
        raise MetricError("throughput undefined for zero cycles")
    return 2.0 * mac_count / (cycles / frequency_hz) / 1e9


def speedup_vs_row_baseline(lanes, cycles_per_conv, kernel_rows=3):
    """Outputs per cycle of one unit over a row-based engine that produces
    one output every ``kernel_rows`` cycles."""
    return (lanes / cycles_per_conv) / (1.0 / kernel_rows)


@dataclass
class LayerMetrics:
    index: int
    op: str
    line: int
    mode: str
    cycles: int
    c_t: float = None
    u_pe: float = None
    pe_act: int = None
    p_total: float = None
    nu_eq4: float = None
    nu_table: float = None
    cycles_per_conv: float = None
    speedup_vs_baseline: float = None

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class RunReport:
    units: int
    pe_total: int
    cycles: int
    c_t: float
    u_pe: float
    pe_act: float
    p_total: float
    nu_eq4: float
    nu_table: float
    energy: float
    throughput_gops: float
    speedup_vs_baseline: float
    mac_slots: int
    multiplies: int
    skipped_multiplies: int
    traffic: dict
    layers: list = field(default_factory=list)
    power_units: str = "arbitrary (configured coefficients)"

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "layers"}
        d["layers"] = [m.to_dict() for m in self.layers]
        return d


def _safe(fn, *args):
    try:
        return fn(*args)
    except MetricError:
        return None


def layer_metrics(rec, cfg):
    m = LayerMetrics(rec.index, rec.op, rec.line, rec.mode, rec.cycles)
    if rec.cycles == 0:
        return m
    m.c_t = compute_ct(rec.operating_cycles, rec.cycles)
    m.pe_act = rec.pe_act
    m.u_pe = compute_upe(rec.pe_act, rec.pe_total, m.c_t)
    m.p_total = compute_ptotal(rec.pe_act, cfg.p1, cfg.pr * (rec.pe_total - rec.pe_act), cfg.pc)
    m.nu_eq4 = _safe(compute_nu, m.p_total, m.u_pe)
    m.nu_table = _safe(nu_table, m.p_total, rec.pe_act)
    if rec.op == "conv":
        m.cycles_per_conv = rec.cycles_per_conv
        if m.cycles_per_conv:
            m.speedup_vs_baseline = speedup_vs_row_baseline(8, m.cycles_per_conv, int(rec.window ** 0.5))
    return m


def build_report(log):
    from .accel import memory_traffic

    cfg = log.config
    per_layer = [layer_metrics(r, cfg) for r in log.layers]
    timed = [(r, m) for r, m in zip(log.layers, per_layer) if r.cycles > 0]
    t_sum = sum(r.cycles for r, _ in timed)
    c_t = u_pe = pe_act = p_total = nu4 = nut = None
    if t_sum:
        c_t = compute_ct(sum(r.operating_cycles for r, _ in timed), t_sum)
        u_pe = sum(m.u_pe * r.cycles for r, m in timed) / t_sum
        pe_act = sum(r.pe_act * r.cycles for r, _ in timed) / t_sum
        idle = cfg.total_pes - pe_act
        p_total = compute_ptotal(pe_act, cfg.p1, cfg.pr * idle, cfg.pc)
        nu4 = _safe(compute_nu, p_total, u_pe)
        nut = _safe(nu_table, p_total, pe_act)
    cycles = log.cycles
    slots = log.total("mac_slots")
    active = log.total("active_pe_cycles")
    energy = cfg.p1 * active + cfg.pr * (cfg.total_pes * cycles - active) + cfg.pc * cycles
    speedups = [m.speedup_vs_baseline for m in per_layer if m.speedup_vs_baseline is not None]
    return RunReport(
        units=cfg.units,
        pe_total=cfg.total_pes,
        cycles=cycles,
        c_t=c_t,
        u_pe=u_pe,
        pe_act=pe_act,
        p_total=p_total,
        nu_eq4=nu4,
        nu_table=nut,
        energy=energy,
        throughput_gops=_safe(compute_throughput, slots, cycles, cfg.frequency_hz),
        speedup_vs_baseline=min(speedups) if speedups else None,
        mac_slots=slots,
        multiplies=log.total("multiplies"),
        skipped_multiplies=log.total("skipped"),
        traffic=memory_traffic(log).to_dict(),
        layers=per_layer,
    )


@dataclass(frozen=True)
class SweepRow:
    units: int
    pe_count: int
    pe_act: float
    u_pe: float
    p_total: float
    nu_eq4: float
    nu_table: float
    cycles: int

    def to_dict(self):
        return dict(self.__dict__)


def sweep_units(unit_counts, graph, ws, x, base_cfg=None, temb=None):
    """Efficiency factor and power against the number of SF units."""
    unit_counts = list(unit_counts)
    if not unit_counts:
        raise ValueError("empty unit list")
    base = base_cfg or AcceleratorConfig()
    rows = []
    for n in unit_counts:
        cfg = AcceleratorConfig(units=n, frequency_hz=base.frequency_hz, reuse_enabled=base.reuse_enabled,
                                zero_gate=base.zero_gate, p1=base.p1, pr=base.pr, pc=base.pc,
                                setup_cycles=base.setup_cycles)
        _, log = run_network(graph, ws, x, cfg, temb)
        rep = build_report(log)
        rows.append(SweepRow(n, cfg.total_pes, rep.pe_act, rep.u_pe, rep.p_total,
                             rep.nu_eq4, rep.nu_table, rep.cycles))
    return rows
