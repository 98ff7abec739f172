import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfmmcn import fxp
from sfmmcn.pe import NORMAL, PE, RESIDUAL, ProtocolError, pe_emit, pe_load_residual, pe_tick

import oracles

fixed = st.integers(fxp.FIXED_MIN, fxp.FIXED_MAX)


def test_zero_input_skips():
    pe = PE()
    pe.start()
    pe.tick(0, 1234)
    assert pe.acc == 0 and pe.skips == 1 and pe.mults == 0


def test_zero_gate_off_counts_multiply():
    pe = PE(zero_gate=False)
    pe.start()
    pe.tick(0, 1234)
    assert pe.acc == 0 and pe.skips == 0 and pe.mults == 1


def test_identity_multiply():
    pe = PE()
    pe.start()
    pe.tick(fxp.ONE, 77)
    assert pe.acc == 77 * fxp.ONE


@given(st.lists(st.tuples(fixed, fixed), min_size=9, max_size=9), fixed)
def test_nine_ticks_match_dot_product(pairs, bias):
    pe = PE()
    pe.start(bias_acc=fxp.promote(bias))
    for x, w in pairs:
        pe.tick(x, w)
    po = 0
    for x, w in pairs:
        po = oracles.sat(po + x * w)
    assert pe.acc == po
    assert pe.emit() == oracles.narrow(oracles.sat(bias * 256 + po))
    assert pe.issued == 9


def test_emit_normal_and_residual():
    pe = PE()
    pe.start(window=1)
    pe.tick(fxp.quantize(2.0), fxp.ONE)
    assert pe.emit() == fxp.quantize(2.0)

    pe.start(window=1, mode=RESIDUAL)
    pe.tick(fxp.ONE, fxp.ONE)
    pe.load_residual(fxp.promote(fxp.ONE))
    assert pe.emit() == fxp.quantize(2.0)


def test_residual_zero_equals_normal():
    rng = np.random.default_rng(1)
    xs, ws = rng.integers(-999, 999, 9), rng.integers(-999, 999, 9)
    outs = []
    for mode in (NORMAL, RESIDUAL):
        pe = PE()
        pe.start(bias_acc=500, mode=mode)
        for x, w in zip(xs.tolist(), ws.tolist()):
            pe.tick(x, w)
        if mode == RESIDUAL:
            pe.load_residual(0)
        outs.append(pe.emit())
    assert outs[0] == outs[1]


def test_protocol_errors():
    pe = PE()
    with pytest.raises(ProtocolError):
        pe.tick(1, 1)
    pe.start(window=2)
    with pytest.raises(ProtocolError):
        pe.start()
    pe.tick(1, 1)
    with pytest.raises(ProtocolError):
        pe.emit()
    with pytest.raises(ProtocolError):
        pe.load_residual(5)
    pe.tick(1, 1)
    with pytest.raises(ProtocolError):
        pe.tick(1, 1)
    pe.emit()
    assert not pe.busy


def test_partials_and_channels():
    # two input-channel windows plus one exchanged partial, in order
    pe = PE()
    pe.start(bias_acc=fxp.promote(3), window=1)
    pe.tick(10, 20)
    pe.close_partial()
    pe.tick(5, 6)
    partner = PE()
    partner.start(window=1)
    partner.tick(7, 8)
    out = pe.emit([partner.take_sum()])
    assert out == oracles.narrow(3 * 256 + 200 + 30 + 56)


def test_value_helpers_do_not_mutate():
    s = PE()
    s.start(window=1, mode=RESIDUAL)
    s2 = pe_tick(s, 256, 256)
    assert s.counter == 0 and s2.counter == 1
    s3 = pe_load_residual(s2, 1 << 16)
    assert s2.residual_in == 0
    out, s4 = pe_emit(s3)
    assert out == 512 and s3.busy and not s4.busy
