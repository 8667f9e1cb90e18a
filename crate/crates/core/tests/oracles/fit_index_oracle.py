"""Independent oracle for the fit-index suite.

Generates random (chi2, df, n, S, Sigma) instances and evaluates CFI, TLI,
NFI, RMSEA with its 90% interval, and SRMR using numpy/scipy only. The
output fixture is consumed by the `acceptance` test target.

    python3 fit_index_oracle.py > ../fixtures/fit_indices.json
"""
import json
import math
import sys

import numpy as np
from scipy.optimize import brentq
from scipy.stats import chi2, ncx2


def ncx2_cdf(x, df, lam):
    if lam == 0.0:
        return chi2.cdf(x, df)
    return ncx2.cdf(x, df, lam)


def invert_ncp(x, df, target):
    """Noncentrality lam with P(X <= x; df, lam) = target, or 0 if none."""
    if ncx2_cdf(x, df, 0.0) < target:
        return 0.0
    hi = max(1.0, x)
    while ncx2_cdf(x, df, hi) > target:
        hi *= 2.0
    f = lambda lam: ncx2_cdf(x, df, lam) - target
    return brentq(f, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def indices(c_m, d_m, c_b, d_b, n):
    num = max(c_m - d_m, 0.0)
    den = max(c_b - d_b, c_m - d_m, 0.0)
    cfi = 1.0 if den == 0.0 else 1.0 - num / den
    tli = ((c_b / d_b) - (c_m / d_m)) / ((c_b / d_b) - 1.0)
    nfi = (c_b - c_m) / c_b
    rmsea = math.sqrt(num / (d_m * n))
    lo = math.sqrt(invert_ncp(c_m, d_m, 0.95) / (d_m * n))
    hi = math.sqrt(invert_ncp(c_m, d_m, 0.05) / (d_m * n))
    return cfi, tli, nfi, rmsea, lo, hi


def srmr(s, sigma):
    p = s.shape[0]
    acc = 0.0
    count = 0
    for i in range(p):
        for j in range(i, p):
            z = (s[i, j] - sigma[i, j]) / math.sqrt(s[i, i] * s[j, j])
            acc += z * z
            count += 1
    return math.sqrt(acc / count)


def random_spd(rng, p):
    a = rng.normal(size=(p, p))
    scale = rng.uniform(0.3, 5.0, size=p)
    m = a @ a.T / p + np.eye(p) * 0.5
    return m * np.outer(scale, scale)


def main():
    rng = np.random.default_rng(20240611)
    out = []
    for k in range(1000):
        p = int(rng.integers(2, 9))
        s = random_spd(rng, p)
        noise = rng.normal(scale=0.05, size=(p, p))
        sigma = s + (noise + noise.T) / 2.0 * np.sqrt(np.outer(np.diag(s), np.diag(s)))
        d_m = int(rng.integers(1, 151))
        if k < 20:
            c_m = float(d_m)
        else:
            c_m = float(rng.uniform(0.0, 6.0 * d_m + 400.0))
        d_b = d_m + int(rng.integers(1, 200))
        c_b = c_m + float(rng.uniform(d_b + 10.0, 60000.0))
        n = int(rng.integers(50, 50001))
        cfi, tli, nfi, rmsea, lo, hi = indices(c_m, d_m, c_b, d_b, n)
        out.append({
            "chi2_m": c_m, "df_m": d_m, "chi2_b": c_b, "df_b": d_b, "n": n,
            "s": s.tolist(), "sigma": sigma.tolist(),
            "cfi": cfi, "tli": tli, "nfi": nfi,
            "rmsea": rmsea, "rmsea_lower": lo, "rmsea_upper": hi,
            "srmr": srmr(s, sigma),
        })
    json.dump(out, sys.stdout)


if __name__ == "__main__":
    main()
