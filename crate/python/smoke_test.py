"""Smoke test for the sharp_py extension: python python/smoke_test.py"""

import json
import math
import pathlib

import sharp_py as sp

ROOT = pathlib.Path(__file__).resolve().parent.parent


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    # 1-D Gaussian: N(0,1), identity, sigma 1, s = 2 -> posterior mean 1
    prior = sp.GmmPrior.isotropic([0.0], 1.0)
    ident = sp.LinearOperator.identity(1)
    assert close(sp.mmse_restore(prior, ident, 1.0, [2.0]), [1.0], 1e-12)
    assert close(sp.observation_score(prior, ident, 1.0, [2.0]), [-1.0], 1e-12)
    assert abs(sp.observation_logpdf(prior, ident, 1.0, [0.0]) + 0.5 * math.log(4 * math.pi)) < 1e-12

    # adjoint test on an undersampled k-space operator
    op = sp.LinearOperator.kspace(8, 8, 4, 2)
    v = [math.sin(i) for i in range(op.in_dim)]
    u = [math.cos(3 * i) for i in range(op.out_dim)]
    lhs = sum(a * b for a, b in zip(u, op.apply(v)))
    rhs = sum(a * b for a, b in zip(op.adjoint_apply(u), v))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    recipe = {"dim": 4, "components": 2, "cov_scale": 0.5, "seed": 1}
    gmm = sp.GmmPrior.from_recipe(json.dumps(recipe))
    assert gmm.dim == 4 and gmm.components == 2
    assert len(gmm.sample(3)) == 4

    assert abs(sp.psnr([0.1, 0.1], [0.0, 0.0], 1.0) - 20.0) < 1e-12
    assert sp.ssim([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0], 2, 2, 4.0) == 1.0

    cfg = json.loads((ROOT / "configs" / "quickstart.json").read_text())
    cfg["solver"]["iterations"] = 50
    x_true, x_final, trace, row = sp.run_seed(json.dumps(cfg), 1)
    assert len(x_final) == 256 and len(trace.splitlines()) == 51
    print("run_seed:", row)

    checks = sp.validate()
    assert all(passed for _, passed, _ in checks), checks
    print(f"smoke test passed ({len(checks)} oracle checks)")


if __name__ == "__main__":
    main()
