"""Smoke test for the phasecascade_py extension.

Build first:
    cargo build --release -p phasecascade-py --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libphasecascade_py.so]
"""

import importlib.util
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_library():
    if len(sys.argv) > 1:
        return Path(sys.argv[1])
    for profile in ("release", "debug"):
        for name in ("libphasecascade_py.so", "libphasecascade_py.dylib", "phasecascade_py.dll"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("extension not built; see the module docstring")


def load(lib):
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    tmp = Path(tempfile.mkdtemp())
    target = tmp / ("phasecascade_py" + suffix)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("phasecascade_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    pc = load(find_library())

    eps = pc.epsilon_sweep(0.5, 5)
    assert eps == [0.5, 0.25, 0.125, 0.0625, 0.03125]
    slope, _, stderr = pc.order_fit(eps, [e**2 for e in eps])
    assert abs(slope - 2.0) < 1e-12 and stderr < 1e-12

    n = 16
    h = 2 * math.pi / n
    xs = [(i * h, j * h) for i in range(n) for j in range(n)]
    # gradient of sin(x1 + 2 x2) projects to zero
    u1 = [math.cos(a + 2 * b) for a, b in xs]
    u2 = [2 * math.cos(a + 2 * b) for a, b in xs]
    p1, p2 = pc.leray_project(n, u1, u2)
    assert max(map(abs, p1 + p2)) < 1e-12
    # a shear is already solenoidal
    s1, s2 = pc.leray_project(n, [math.sin(b) for _, b in xs], [0.0] * (n * n))
    assert max(abs(v - math.sin(b)) for v, (_, b) in zip(s1, xs)) < 1e-12

    spec = pc.shell_spectrum(n, [math.cos(3 * a) for a, _ in xs])
    assert abs(spec[3] - sum(spec)) < 1e-12 * sum(spec)

    rows, fits = pc.residual_sweep([0.5, 0.25, 0.125, 0.0625], n=32, m_theta=4, dt=0.05, t_end=0.2, l=1, order=2)
    assert len(rows) == 4 * 6
    slopes = {name: s for name, s, _ in fits}
    assert abs(slopes["f_l2"] - 3.0) < 0.1, slopes

    try:
        pc.order_fit([0.5, 0.25], [1.0, 1.0])
    except ValueError as e:
        assert "snapshots" in str(e) or "need" in str(e), e
    else:
        raise AssertionError("short fit accepted")

    print("phasecascade_py smoke test passed")


if __name__ == "__main__":
    main()
