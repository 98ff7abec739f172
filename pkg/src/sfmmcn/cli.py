"""Command-line front end.

    sfmmcn run NET WEIGHTS INPUT        simulate and report
    sfmmcn verify NET WEIGHTS INPUT     simulator vs golden, bit-exact
    sfmmcn verify --random N            randomized small-network sweep
    sfmmcn compare NET WEIGHTS INPUT    cycles/CONV against the row baseline
    sfmmcn sweep NET WEIGHTS INPUT --units-list 2,4,8,16
    sfmmcn gen MODEL --scale 1/8 --out DIR

Exit codes: 0 ok, 1 verification mismatch, 2 input/validation error,
3 internal protocol error.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import accel, metrics, models, netdesc, weights
from .golden import ShapeError, Tensor
from .pe import ProtocolError
from .sfu import SchedulingError

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_PROTOCOL = 0, 1, 2, 3


class InputError(Exception):
    """Bad files or flags; reported with exit code 2."""


# -- loading -----------------------------------------------------------------

def _read_network(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"{path}: cannot read network file ({e.strerror})") from None
    try:
        return netdesc.parse_network(text)
    except netdesc.ParseError as e:
        raise InputError("\n".join(f"{path}:{ln}:{col}: {msg}" for ln, col, msg in e.errors)) from None


def _read_store(path, what):
    try:
        return weights.load(path)
    except OSError as e:
        raise InputError(f"{path}: cannot read {what} file ({e.strerror})") from None
    except weights.FormatError as e:
        raise InputError(f"{path}: {e}") from None


def load_workload(net_path, w_path, in_path):
    """Parse and validate all three files before any simulation."""
    g = _read_network(net_path)
    missing = not os.path.exists(w_path)
    ws = weights.WeightStore() if missing else _read_store(w_path, "weights")
    inp = _read_store(in_path, "input")
    if "input" not in inp:
        raise InputError(f"{in_path}: no record named 'input'")
    x = inp["input"]
    temb = inp.get("temb")
    issues = netdesc.validate_graph(g, ws, None if temb is None else len(temb))
    msgs = [f"{net_path}:{i.line}: {i.message}" for i in issues]
    if missing:
        msgs.insert(0, f"{w_path}: weights file not found")
    if tuple(x.shape) != tuple(g.input_shape):
        msgs.append(f"{in_path}: input shape {tuple(x.shape)} does not match declared {tuple(g.input_shape)}")
    if msgs:
        raise InputError("\n".join(msgs))
    return g, ws, Tensor(x), temb


def _config(a, units=None):
    try:
        return accel.AcceleratorConfig(
            units=a.units if units is None else units, frequency_hz=a.freq,
            reuse_enabled=not a.no_reuse, zero_gate=not a.no_zero_gate,
            p1=a.p1, pr=a.pr, pc=a.pc)
    except ValueError as e:
        raise InputError(str(e)) from None


# -- formatting --------------------------------------------------------------

def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}" if abs(v) < 1e5 else f"{v:.6g}"
    return str(v)


def table_text(rows, columns):
    cells = [[str(c) for c in columns]] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(s.rjust(wd) for s, wd in zip(row, widths)) for row in cells) + "\n"


def table_csv(rows, columns):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({c: "" if r.get(c) is None else r.get(c) for c in columns})
    return buf.getvalue()


def _emit(a, payload, rows, columns, summary=None):
    if a.format == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    elif a.format == "csv":
        text = table_csv(rows, columns)
    else:
        text = table_text(rows, columns)
        if summary:
            text += "\n" + "\n".join(f"{k}: {_fmt(v)}" for k, v in summary.items()) + "\n"
    if a.out:
        with open(a.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------

LAYER_COLUMNS = ["index", "line", "op", "mode", "cycles", "pe_act", "c_t", "u_pe",
                 "nu_eq4", "nu_table", "cycles_per_conv", "speedup_vs_baseline"]


def cmd_run(a):
    g, ws, x, temb = load_workload(a.network, a.weights, a.input)
    cfg = _config(a)
    _, log = accel.run_network(g, ws, x, cfg, temb)
    rep = metrics.build_report(log)
    d = rep.to_dict()
    summary = {k: v for k, v in d.items() if k not in ("layers", "traffic")}
    _emit(a, d, d["layers"], LAYER_COLUMNS, summary)
    return EXIT_OK


def first_mismatch(a, b):
    """(coordinates, a value, b value) of the first differing element, or None."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return ("shape", a.shape, b.shape)
    diff = np.argwhere(a != b)
    if not len(diff):
        return None
    idx = tuple(int(i) for i in diff[0])
    return idx, int(a[idx]), int(b[idx])


def verify_one(g, ws, x, temb, cfg):
    sim, _ = accel.run_network(g, ws, x, cfg, temb)
    gold = netdesc.run_graph_golden(g, ws, x, temb)
    return first_mismatch(sim.data, gold.data)


def cmd_verify(a):
    cfg = _config(a)
    if a.random:
        if a.network:
            raise InputError("give either files or --random, not both")
        failures = []
        for s in range(a.seed, a.seed + a.random):
            g, ws, inp = models.random_network(s)
            m = verify_one(g, ws, inp["input"], inp.get("temb"), cfg)
            if m:
                failures.append((s, m))
                print(f"seed {s}: mismatch at {m[0]}: simulator={m[1]} golden={m[2]}")
        print(f"{a.random - len(failures)}/{a.random} random networks bit-exact")
        return EXIT_MISMATCH if failures else EXIT_OK
    if not (a.network and a.weights and a.input):
        raise InputError("verify needs NET WEIGHTS INPUT or --random N")
    g, ws, x, temb = load_workload(a.network, a.weights, a.input)
    m = verify_one(g, ws, x, temb, cfg)
    if m:
        print(f"FAIL: first mismatch at (c, y, x) = {m[0]}: simulator={m[1]} golden={m[2]}")
        return EXIT_MISMATCH
    print(f"PASS: {g.name} output bit-exact with the golden model")
    return EXIT_OK


COMPARE_COLUMNS = ["line", "input_width", "kernel", "baseline_cycles_per_conv", "sfmmcn_cycles_per_conv",
                   "baseline_macs", "sfmmcn_macs", "speedup", "baseline_cycles", "sfmmcn_cycles"]


def compare_rows(g, ws, x, temb, cfg):
    plan = netdesc.expand_blocks(g, ws, None if temb is None else len(temb))
    _, log = accel.Accelerator(cfg).run_plan(plan, ws, x, temb)
    base = accel.baseline_run(plan)
    recs = {r.index: r for r in log.layers}
    rows = []
    for b in base.layers:
        r = recs[b.index]
        cpc = r.cycles_per_conv
        rows.append({
            "line": b.line,
            "input_width": b.input_width,
            "kernel": b.kernel,
            "baseline_cycles_per_conv": b.cycles_per_conv,
            "sfmmcn_cycles_per_conv": cpc,
            "baseline_macs": b.macs_per_pass,
            # outputs the unit completes in the baseline's per-pass cycle budget
            "sfmmcn_macs": round(accel.LANES * b.cycles_per_conv / cpc) if cpc else None,
            "speedup": metrics.speedup_vs_row_baseline(accel.LANES, cpc, b.kernel) if cpc else None,
            "baseline_cycles": b.cycles,
            "sfmmcn_cycles": r.cycles,
        })
    totals = {"baseline_cycles": base.cycles,
              "sfmmcn_cycles": sum(r["sfmmcn_cycles"] for r in rows)}
    totals["cycle_ratio"] = (totals["baseline_cycles"] / totals["sfmmcn_cycles"]
                             if totals["sfmmcn_cycles"] else None)
    return rows, totals, base.notes


def cmd_compare(a):
    g, ws, x, temb = load_workload(a.network, a.weights, a.input)
    rows, totals, notes = compare_rows(g, ws, x, temb, _config(a))
    if not rows:
        notes = notes + ["no convolution layers: baseline comparison is empty"]
    summary = dict(totals)
    for i, n in enumerate(notes):
        summary[f"note{i}"] = n
    _emit(a, {"layers": rows, "totals": totals, "notes": notes}, rows, COMPARE_COLUMNS, summary)
    return EXIT_OK


SWEEP_COLUMNS = ["units", "pe_count", "pe_act", "u_pe", "p_total", "nu_eq4", "nu_table", "cycles"]


def _units_list(s):
    try:
        vals = [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"bad unit list {s!r}") from None
    if not vals:
        raise InputError("empty unit list")
    if min(vals) < 1:
        raise InputError("unit counts must be >= 1")
    return vals


def cmd_sweep(a):
    units = _units_list(a.units_list)
    if a.model:
        g, ws = models.generate(a.model, a.scale, a.seed)
        inp = models.random_input(g.input_shape, a.seed, t_dim=models.temb_dim(g))
        x, temb = Tensor(inp["input"]), inp.get("temb")
    elif a.network and a.weights and a.input:
        g, ws, x, temb = load_workload(a.network, a.weights, a.input)
    else:
        raise InputError("sweep needs NET WEIGHTS INPUT or --model NAME")
    rows = [r.to_dict() for r in metrics.sweep_units(units, g, ws, x, _config(a), temb)]
    _emit(a, {"rows": rows}, rows, SWEEP_COLUMNS)
    return EXIT_OK


def cmd_gen(a):
    try:
        g, ws = models.generate(a.model, a.scale, a.seed)
    except ValueError as e:
        raise InputError(str(e)) from None
    out = a.out or "."
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, a.model)
    with open(stem + ".net", "w") as f:
        f.write(g.to_text())
    weights.save(stem + ".weights.sfmw", ws)
    inp = models.random_input(g.input_shape, a.seed, sparsity=a.sparsity, t_dim=models.temb_dim(g))
    weights.save(stem + ".input.sfmw", inp)
    print(f"wrote {stem}.net ({len(g.layers)} layers, {g.conv_count} convs), "
          f"{stem}.weights.sfmw ({len(ws)} records), {stem}.input.sfmw")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _common(p, files=True, optional_files=False):
    if files:
        nargs = "?" if optional_files else None
        p.add_argument("network", nargs=nargs)
        p.add_argument("weights", nargs=nargs)
        p.add_argument("input", nargs=nargs)
    p.add_argument("--units", type=int, default=8)
    p.add_argument("--freq", type=float, default=400e6, help="clock frequency in Hz")
    p.add_argument("--no-reuse", action="store_true")
    p.add_argument("--no-zero-gate", action="store_true")
    p.add_argument("--p1", type=float, default=1.0, help="power per active PE")
    p.add_argument("--pr", type=float, default=0.1, help="power per idle PE")
    p.add_argument("--pc", type=float, default=5.0, help="fixed power (control, buffers)")
    p.add_argument("--format", choices=("json", "text", "csv"), default="text")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")


def build_parser():
    ap = argparse.ArgumentParser(prog="sfmmcn", description="SF-MMCN accelerator simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="simulate a network and report metrics")
    _common(p)
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("verify", help="check the simulator against the golden model")
    _common(p, optional_files=True)
    p.add_argument("--random", type=int, default=0, metavar="N",
                   help="verify N random small networks (seeds from --seed)")
    p.set_defaults(fn=cmd_verify)
    p = sub.add_parser("compare", help="cycles per convolution against the row-based baseline")
    _common(p)
    p.set_defaults(fn=cmd_compare)
    p = sub.add_parser("sweep", help="efficiency factor and power against the number of units")
    _common(p, optional_files=True)
    p.add_argument("--units-list", default="2,4,8,16")
    p.add_argument("--model", choices=models.MODELS)
    p.add_argument("--scale")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("gen", help="write a built-in network, seeded weights and an input")
    p.add_argument("model")
    p.add_argument("--scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sparsity", type=float, default=0.0, help="fraction of zero input activations")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_gen)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return a.fn(a)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ProtocolError, SchedulingError) as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (netdesc.PlanError, ShapeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
