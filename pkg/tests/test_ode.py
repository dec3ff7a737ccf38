import math

import numpy as np
import pytest

from octrl.ode import Event, StepSizeUnderflow, dopri45


def test_exponential_decay():
    res = dopri45(lambda t, y: [-y[0]], 0.0, [1.0], 5.0, rtol=1e-10, t_eval=np.linspace(0, 5, 11))
    assert res.event is None
    np.testing.assert_allclose(res.y, np.exp(-np.array(res.t))[:, None], rtol=1e-9)


def test_backward_direction():
    res = dopri45(lambda t, y: [y[0]], 1.0, [math.e], 0.0, rtol=1e-10, t_eval=[1.0, 0.5, 0.0])
    assert res.t == [1.0, 0.5, 0.0]
    assert res.y[-1][0] == pytest.approx(1.0, rel=1e-9)


def test_dense_output_between_steps():
    # few large steps, many output points: dense output must still be accurate
    res = dopri45(lambda t, y: [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, rtol=1e-9,
                  t_eval=np.linspace(0, 10, 1001))
    assert res.n_steps < 1001
    np.testing.assert_allclose(np.array(res.y)[:, 0], np.sin(res.t), atol=1e-7)


def test_terminal_event():
    ev = Event("y<=0.5", lambda t, y: y[0] - 0.5, -1)
    res = dopri45(lambda t, y: [-y[0]], 0.0, [1.0], 5.0, rtol=1e-10, events=[ev])
    assert res.event == "y<=0.5"
    assert res.t_final == pytest.approx(math.log(2.0), abs=1e-9)


def test_event_direction_filter():
    ev = Event("up", lambda t, y: y[0] - 0.5, +1)
    res = dopri45(lambda t, y: [-y[0]], 0.0, [1.0], 5.0, events=[ev])
    assert res.event is None


def test_retry_errors_become_domain_event():
    def rhs(t, y):
        if y[0] <= 0:
            raise ArithmeticError("left the domain")
        return [-1.0 / y[0]]

    res = dopri45(rhs, 0.0, [1.0], 2.0, rtol=1e-8, retry_errors=(ArithmeticError,))
    assert res.event == "domain"
    assert res.t_final == pytest.approx(0.5, abs=1e-3)


def test_underflow():
    def rhs(t, y):
        return [1.0 / (1.0 - t) ** 2]

    with pytest.raises(StepSizeUnderflow):
        dopri45(rhs, 0.0, [0.0], 2.0, rtol=1e-8)
    res = dopri45(rhs, 0.0, [0.0], 2.0, rtol=1e-8, halt_on_underflow=True)
    assert res.event == "underflow" and res.t_final < 1.0
