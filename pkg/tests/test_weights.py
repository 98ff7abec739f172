import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sfmmcn import weights
from sfmmcn.weights import FormatError, WeightStore


def test_roundtrip_file(tmp_path):
    ws = WeightStore({"a.weight": np.arange(-8, 10).reshape(2, 1, 3, 3), "a.bias": [1, -2]})
    p = tmp_path / "w.sfmw"
    weights.save(p, ws)
    assert weights.load(p) == ws


def test_layout_is_little_endian():
    buf = weights.dumps(WeightStore({"x": [[1, -1]]}))
    assert buf[:5] == b"SFMW\x01"
    assert struct.unpack_from("<H", buf, 5) == (1,)
    assert buf[7:8] == b"x"
    assert buf[8] == 2
    assert struct.unpack_from("<2I", buf, 9) == (1, 2)
    assert struct.unpack_from("<2h", buf, 17) == (1, -1)
    assert len(buf) == 21


@settings(max_examples=50)
@given(st.dictionaries(st.text(min_size=1, max_size=12),
                       hnp.arrays(np.int64, hnp.array_shapes(max_dims=4, max_side=4),
                                  elements=st.integers(-32768, 32767)),
                       max_size=4))
def test_roundtrip_property(recs):
    ws = WeightStore(recs)
    assert weights.loads(weights.dumps(ws)) == ws


def test_errors():
    with pytest.raises(FormatError):
        weights.loads(b"NOPE\x01")
    with pytest.raises(FormatError):
        weights.loads(b"SFMW\x02")
    good = weights.dumps(WeightStore({"x": [1, 2, 3]}))
    with pytest.raises(FormatError):
        weights.loads(good[:-2])
    with pytest.raises(FormatError):
        weights.loads(good + good[5:])
    with pytest.raises(FormatError):
        WeightStore({"x": [70000]})


def test_store_is_immutable():
    ws = WeightStore({"x": [1, 2]})
    with pytest.raises(ValueError):
        ws["x"][0] = 5
    with pytest.raises(TypeError):
        ws["y"] = 1
