import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stemos import canonical
from stemos.errors import InvalidTransformError
from stemos.geometry import Transform, is_rotation, rotation_angle, so3_exp, so3_log

vec = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3)


def test_canonical_is_key_sorted_and_compact():
    assert canonical.dumps({"b": 1, "a": (1.5, None)}) == '{"a":[1.5,null],"b":1}'
    assert canonical.dumps({"x": np.float64(-0.0), "s": {3, 1}}) == '{"s":[1,3],"x":0.0}'


def test_canonical_rejects_non_finite():
    with pytest.raises(ValueError):
        canonical.dumps(float("nan"))


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_canonical_float_round_trip(x):
    assert canonical.loads(canonical.dumps([x]))[0] == x


@given(vec)
def test_exp_log_round_trip(w):
    w = np.asarray(w)
    if np.linalg.norm(w) >= math.pi - 1e-6:
        return
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)
    assert is_rotation(so3_exp(w))


def test_log_near_pi():
    w = np.array([0.0, 0.0, math.pi])
    assert rotation_angle(np.eye(3), so3_exp(w)) == pytest.approx(math.pi)


@given(vec, vec, vec, vec)
def test_compose_inverse(w1, t1, w2, t2):
    a = Transform.from_rotvec(w1, t1)
    b = Transform.from_rotvec(w2, t2)
    p = np.array([[0.3, -0.2, 1.0], [1.0, 2.0, 3.0]])
    assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
    assert np.allclose((a @ a.inverse()).R, np.eye(3), atol=1e-9)
    assert np.allclose(a.inverse().apply(a.apply(p)), p)


def test_validation_and_round_trip():
    with pytest.raises(InvalidTransformError):
        Transform((1, 0, 0, 0, 1, 0, 0, 0, -1)).validate()
    T = Transform.from_yaw(0.7, 1.0, 2.0, 3.0)
    assert Transform.from_dict(T.to_dict()) == T
    with pytest.raises(InvalidTransformError):
        Transform.from_dict({"R": [1, 0], "t": [0, 0, 0]})
