import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from octrl import _backend
from octrl.expr import Compiled, parse

ROOT = Path(__file__).resolve().parent.parent


def backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("OCTRL_BACKEND", None)
    if env_value is not None:
        env["OCTRL_BACKEND"] = env_value
    out = subprocess.run([sys.executable, "-c", "from octrl import _backend; print(_backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_forced_fallback():
    assert backend_in_subprocess("python") == "python"
    assert backend_in_subprocess("PYTHON") == "python"


def test_default_prefers_compiled():
    try:
        _backend.get("cython")
    except ImportError:
        assert backend_in_subprocess(None) == "python"
    else:
        assert backend_in_subprocess(None) == "cython"


def test_kernels_module_matches_name():
    assert _backend.kernels is _backend.get(_backend.BACKEND)


@pytest.mark.parametrize("text", ["c^(1-2)/(1-2) + 0.5*ln(x) + exp(-c*x/10)", "(c*x)^0.5 - t^2", "-c"])
def test_parity(text):
    try:
        ck = _backend.get("cython")
    except ImportError:
        pytest.skip("compiled core not built")
    a, b = Compiled(parse(text), _backend.get("python")), Compiled(parse(text), ck)
    rng = np.random.default_rng(1)
    for c, x, t in rng.uniform(0.1, 5.0, size=(50, 3)):
        np.testing.assert_allclose(a.jet(c, x, t), b.jet(c, x, t), rtol=1e-13, atol=1e-300)
    cs, xs = rng.uniform(0.1, 5.0, (2, 100))
    np.testing.assert_allclose(a.values(cs, xs, 0.5), b.values(cs, xs, 0.5), rtol=1e-13)


def test_benchmark_quick():
    out = subprocess.run([sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"), "--quick",
                          "--repeat", "1"], capture_output=True, text=True, timeout=300)
    assert out.returncode == 0, out.stderr
    assert "speedup" in out.stdout.lower() or "python" in out.stdout.lower()
