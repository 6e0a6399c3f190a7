"""Regenerates the frozen oracle values used by the integration tests.

Requires mpmath. Run from this directory: python3 gen_fixtures.py
"""
import random

import mpmath as mp

mp.mp.dps = 60


def ln_pois(lam, k):
    lam = mp.mpf(lam)
    return k * mp.log(lam) - lam - mp.loggamma(k + 1)


def pois(lam, k):
    return mp.exp(ln_pois(lam, k))


def lower(lam, k):
    # P(X <= k - 1)
    return mp.fsum(pois(lam, j) for j in range(k))


def g_single(lam, a, k):
    lam = mp.mpf(lam)
    if k <= 0:
        return mp.mpf(0)
    pref = mp.exp(-k * mp.log(lam) + lam + mp.loggamma(k))
    pa = pois(lam, a)
    lo = lower(lam, k)
    if k >= a + 1:
        return pref * pa * (1 - lo)
    return -pref * pa * lo


def poisson_grid():
    rng = random.Random(20240611)
    rows = []
    for _ in range(1000):
        lam = float(mp.mpf(10) ** rng.uniform(-2, 6))
        mode = int(lam)
        choice = rng.random()
        if choice < 0.5:
            k = max(0, int(rng.gauss(lam, 3 * lam ** 0.5 + 1)))
        elif choice < 0.75:
            k = rng.randint(0, max(1, 3 * mode + 10))
        else:
            k = int(10 ** rng.uniform(0, 7))
        rows.append((lam, k, ln_pois(lam, k)))
    with open("poisson_log_pmf.csv", "w") as f:
        f.write("lambda,k,ln_pmf\n")
        for lam, k, v in rows:
            f.write(f"{lam!r},{k},{mp.nstr(v, 25)}\n")


def stein_values():
    cases = [(4.0, 3, 5), (4.0, 3, 3), (4.0, 3, 1), (9.0, 12, 7), (9.0, 12, 8),
             (2.5, 0, 4), (30.0, 10, 45), (30.0, 45, 10), (100.0, 100, 101), (100.0, 100, 100)]
    rng = random.Random(77)
    for _ in range(40):
        lam = round(rng.uniform(0.5, 60.0), 3)
        a = rng.randint(0, int(2 * lam) + 5)
        k = rng.randint(0, int(2 * lam) + 5)
        cases.append((lam, a, k))
    with open("stein_values.csv", "w") as f:
        f.write("lambda,a,k,g,delta_g\n")
        for lam, a, k in cases:
            g = g_single(lam, a, k)
            d = g_single(lam, a, k + 1) - g
            f.write(f"{lam!r},{a},{k},{mp.nstr(g, 30)},{mp.nstr(d, 30)}\n")


if __name__ == "__main__":
    poisson_grid()
    stein_values()
