"""Smoke test for the koopman_mp_py extension.

Build first with `cargo build -p koopman-mp-py --release` (or `maturin
develop -m crates/python/Cargo.toml`), then run `python python/smoke_test.py`.
"""

import cmath
import glob
import importlib
import json
import math
import os
import shutil
import sys
import tempfile


def load_module():
    try:
        return importlib.import_module("koopman_mp_py")
    except ImportError:
        pass
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = [os.environ.get("KOOPMAN_MP_PY_LIB", "")]
    for profile in ("release", "debug"):
        candidates += glob.glob(os.path.join(root, "target", profile, "libkoopman_mp_py.*"))
    lib = next((c for c in candidates if c and os.path.exists(c)), None)
    if lib is None:
        sys.exit("koopman_mp_py not found; build it with `cargo build -p koopman-mp-py`")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "koopman_mp_py.so"))
    sys.path.insert(0, tmp)
    return importlib.import_module("koopman_mp_py")


def rotation_gram(kp, alpha, kmax, m):
    ks = range(-kmax, kmax + 1)
    xs = [2 * math.pi * i / m for i in range(m)]
    psi_x = [[cmath.exp(1j * k * x) for k in ks] for x in xs]
    psi_y = [[cmath.exp(1j * k * (x + alpha)) for k in ks] for x in xs]
    return kp.GramPair.from_data(psi_x, psi_y, [1.0 / m] * m)


def main():
    kp = load_module()
    alpha, kmax = 1.0, 3

    gram = rotation_gram(kp, alpha, kmax, 64)
    model = kp.mpedmd(gram)
    assert len(model) == 2 * kmax + 1
    assert all(abs(abs(l) - 1) < 1e-12 for l in model.eigenvalues)
    expected = sorted(cmath.phase(cmath.exp(1j * k * alpha)) for k in range(-kmax, kmax + 1))
    got = sorted(cmath.phase(l) for l in model.eigenvalues)
    assert max(abs(a - b) for a, b in zip(expected, got)) < 1e-8

    g = [0j] * len(model)
    g[kmax + 1] = 1
    atoms = [a for a in model.measure(g) if a[1] > 1e-12]
    assert len(atoms) == 1 and abs(atoms[0][0] - alpha) < 1e-8 and abs(atoms[0][1] - 1) < 1e-8
    assert abs(model.moment(g, 2) - cmath.exp(2j * alpha)) < 1e-10
    assert max(model.residuals(gram)) < 1e-6

    theta0 = 0.3
    row = [cmath.exp(1j * k * theta0) for k in range(-kmax, kmax + 1)]
    pred = model.predict(row, g, 10)
    assert all(abs(p - cmath.exp(1j * (theta0 + n * alpha))) < 1e-8 for n, p in enumerate(pred))

    a0 = [complex(i, -i) for i in range(len(model))]
    assert abs(model.energy(a0, 1000) - model.energy(a0, 0)) < 1e-9 * model.energy(a0, 0)

    again = kp.KoopmanModel.from_json(model.to_json())
    assert again.eigenvalues == model.eigenvalues

    # shift example: EDMD is nilpotent, mpEDMD the cyclic shift
    n = 6
    shift = kp.GramPair([[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)],
                        [[1.0 if i == j + 1 else 0.0 for j in range(n)] for i in range(n)])
    e = kp.edmd(shift)
    assert not e.reliable
    c = kp.mpedmd(shift)
    assert abs(c.k[0][n - 1] - 1) < 1e-12

    c_mat, sigma = kp.procrustes([[1, 0], [0, 1]], [[0, 1], [1, 0]])
    assert abs(sum(sigma) - 2) < 1e-12

    assert abs(kp.w1([(0.0, 1.0)], [(0.5, 1.0)]) - 0.5) < 1e-12

    traj = kp.lorenz_trajectory([1.0, 1.0, 1.0], 0.1, 20)
    assert len(traj) == 21 and len(traj[0]) == 3

    summary = json.loads(kp.run_experiment("shift-warning"))
    assert summary["passed"]

    try:
        kp.mpedmd(kp.GramPair([[0j, 0j], [0j, 0j]], [[0j, 0j], [0j, 0j]]))
    except kp.NumericalError:
        pass
    else:
        raise AssertionError("singular Gram matrix accepted")

    print("koopman_mp_py smoke test passed")


if __name__ == "__main__":
    main()
