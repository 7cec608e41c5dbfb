"""Smoke test for the `sobol_robust` extension module.

Builds the extension with cargo (unless it is already importable), then
exercises marginals, a small study run and indices from external
evaluations.

    python3 python/smoke_test.py
"""

import importlib
import json
import math
import pathlib
import random
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        return importlib.import_module("sobol_robust")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "sobol-robust-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libsobol_robust_py.so"
    if not built.exists():
        built = built.with_suffix(".dylib")
    dest = pathlib.Path(tempfile.mkdtemp()) / ("sobol_robust" + sysconfig.get_config_var("EXT_SUFFIX"))
    shutil.copy(built, dest)
    sys.path.insert(0, str(dest.parent))
    return importlib.import_module("sobol_robust")


def check_marginals(sr):
    m = sr.Marginal.truncated_normal(0.5, 0.3, 0.0, 1.0)
    for q in (0.1, 0.5, 0.9):
        assert abs(m.cdf(m.quantile(q)) - q) < 1e-6
    xs = m.sample(2000, 1)
    assert all(0.0 <= x <= 1.0 for x in xs)
    assert abs(sum(xs) / len(xs) - 0.5) < 0.03
    u = sr.Marginal.uniform(2.0, 4.0)
    assert u.support() == (2.0, 4.0)
    assert u.to_physical(0.25) == 2.5
    try:
        sr.Marginal.uniform(1.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("empty support accepted")


def check_study(sr):
    config = {
        "version": 1,
        "model": {"kind": "linear", "coefficients": [3, 2, 1]},
        "margins": [{"family": "uniform", "lo": 0, "hi": 1}] * 3,
        "N": 2000,
        "partition": {"M": 5},
        "tau": 1.5,
        "r": 20,
        "B_rep": 32,
        "seed": 5,
    }
    with tempfile.TemporaryDirectory() as tmp:
        study = sr.Study.from_json(json.dumps(config), tmp)
        assert study.names == ["x1", "x2", "x3"]
        first = study.run(out=tmp)
        exact = [9 / 14, 4 / 14, 1 / 14]
        for t, e, s in zip(first["T"], exact, first["stdT"]):
            assert abs(t - e) <= 4 * s, (t, e, s)
        assert first["model_calls"] == 5 * 2000
        for lo, t, hi in zip(first["envelope_min_T"], first["T"], first["envelope_max_T"]):
            assert lo <= t <= hi
        again = study.run(out=tmp, reuse_bundle=True)
        assert again["model_calls"] == 0
        assert again["T"] == first["T"]
        text = sr.report(tmp)
        assert text.splitlines()[2].split()[1] == "x1"

    bad = dict(config, N=1)
    try:
        sr.Study.from_json(json.dumps(bad))
    except ValueError as e:
        assert "N must be" in str(e)
    else:
        raise AssertionError("N = 1 accepted")


def check_external_evaluations(sr):
    rng = random.Random(0)
    n, p = 3000, 2
    a = [[rng.random() for _ in range(p)] for _ in range(n)]
    b = [[rng.random() for _ in range(p)] for _ in range(n)]

    def f(x):
        return math.sin(math.pi * x[0]) + 0.3 * x[1]

    f_c = []
    for k in range(p):
        rows = [[b[r][i] if i == k else a[r][i] for i in range(p)] for r in range(n)]
        f_c.append([f(x) for x in rows])
    est = sr.indices_from_evaluations(a, b, [f(x) for x in a], [f(x) for x in b], f_c, b_rep=32, seed=1)
    assert est["T"][0] > est["T"][1] > 0.0


def main():
    sr = load_module()
    check_marginals(sr)
    check_study(sr)
    check_external_evaluations(sr)
    print(f"sobol_robust {sr.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
