"""Simulator-level properties over hypothesis-drawn workloads."""

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sfmmcn import metrics, models, netdesc
from sfmmcn.accel import AcceleratorConfig, run_network

seeds = st.integers(0, 2 ** 32 - 1)
fast = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@fast
@given(seeds)
def test_simulator_equals_golden(seed):
    g, ws, inp = models.random_network(seed)
    sim, _ = run_network(g, ws, inp["input"], None, inp.get("temb"))
    assert sim == netdesc.run_graph_golden(g, ws, inp["input"], inp.get("temb"))


@fast
@given(seeds)
def test_deterministic(seed):
    g, ws, inp = models.random_network(seed)
    a = run_network(g, ws, inp["input"], None, inp.get("temb"))
    b = run_network(g, ws, inp["input"], None, inp.get("temb"))
    assert a[0] == b[0] and a[1].signature() == b[1].signature()


@fast
@given(seeds, st.integers(1, 16))
def test_unit_count_never_changes_outputs(seed, units):
    g, ws, inp = models.random_network(seed)
    a, _ = run_network(g, ws, inp["input"], None, inp.get("temb"))
    b, log = run_network(g, ws, inp["input"], AcceleratorConfig(units=units), inp.get("temb"))
    assert a == b
    assert all(r.pe_act <= r.pe_total == 9 * units for r in log.layers)


@fast
@given(seeds)
def test_report_bounds(seed):
    g, ws, inp = models.random_network(seed)
    _, log = run_network(g, ws, inp["input"], None, inp.get("temb"))
    rep = metrics.build_report(log)
    for m in rep.layers:
        if m.cycles:
            assert 0 <= m.c_t <= 100 and 0 <= m.u_pe <= 100
            assert m.nu_table > 0 and m.nu_eq4 > 0
    assert rep.mac_slots == rep.multiplies + rep.skipped_multiplies
    t = rep.traffic
    assert t["activation_reads"] <= t["activation_reads_without_reuse"]
