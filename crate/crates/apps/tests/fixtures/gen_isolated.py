# P(W = k) = C(n,k) q^{k(n-k) + C(k,2)} P(G(n-k, p) has no isolated vertex),
# with the last factor from the complementary recursion over the isolated set.
import csv
import mpmath as mp

mp.mp.dps = 400


def law(n, p):
    q = 1 - mp.mpf(p)
    none = [mp.mpf(1)]  # none[m] = P(G(m, p) has no isolated vertex)
    for m in range(1, n + 1):
        s = mp.mpf(0)
        for k in range(1, m + 1):
            s += mp.binomial(m, k) * q ** (k * (m - k) + k * (k - 1) // 2) * none[m - k]
        none.append(1 - s)
    return [mp.binomial(n, k) * q ** (k * (n - k) + k * (k - 1) // 2) * none[n - k] for k in range(n + 1)]


with open("isolated_pmf.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["n", "p", "k", "prob"])
    for n, lam in [(10, 1.0), (10, 2.0), (50, 1.0), (120, 2.0), (200, 1.0)]:
        p = lam / n
        for k, v in enumerate(law(n, p)):
            w.writerow([n, repr(p), k, mp.nstr(v, 25)])
