"""Independent oracle for audit-planning figures frozen into tests.

Computes, from first principles with exact rational arithmetic:
  - hypergeometric detection probabilities for trace audits,
  - minimal-cost audit plans,
  - accept/reject probabilities for the coverage challenge game.
Run: python3 scripts/oracle_audit_math.py
"""

import math
from fractions import Fraction


def detect(N, C, L, m, s):
    """P[>=1 corrupted transition audited]; one bad transition per bad point."""
    total = Fraction(0)
    miss = Fraction(L - s, L)
    for k in range(0, min(C, m) + 1):
        pk = Fraction(math.comb(C, k) * math.comb(N - C, m - k), math.comb(N, m))
        total += pk * miss**k
    return 1 - total


def plan(N, C, L, target):
    best = None
    for s in range(1, L + 1):
        lo, hi = 1, N
        if detect(N, C, L, N, s) < target:
            continue
        while lo < hi:
            mid = (lo + hi) // 2
            if detect(N, C, L, mid, s) >= target:
                hi = mid
            else:
                lo = mid + 1
        cand = (lo * s, lo, s)
        if best is None or cand < best:
            best = cand
    return best


def cp_reject(N, bad, draws, max_failures):
    """P[#bad sampled (no replacement) > max_failures]."""
    acc = Fraction(0)
    for k in range(0, max_failures + 1):
        acc += Fraction(
            math.comb(bad, k) * math.comb(N - bad, draws - k), math.comb(N, draws)
        )
    return 1 - acc


if __name__ == "__main__":
    p = detect(100, 10, 10, 25, 6)
    print("detect(N=100,C=10,L=10,m=25,s=6) =", p, float(p))
    p = detect(50, 10, 5, 7, 5)
    closed = 1 - Fraction(math.comb(40, 7), math.comb(50, 7))
    print("detect s=L:", p, "closed:", closed, "equal:", p == closed)
    for target in (0.9, 0.95, 0.99):
        cost, m, s = plan(100, 10, 10, Fraction(target).limit_denominator(100))
        pr = detect(100, 10, 10, m, s)
        print(f"plan(N=100,C=10,L=10,target={target}): m={m} s={s} cost={cost} p={float(pr):.6f}")
    r = cp_reject(200, 60, 20, 1)
    print("cp_reject(N=200,bad=60,draws=20,max_fail=1) =", float(r), r)
    r139 = cp_reject(1000, 300, 139, 13)
    print("cp_reject(N=1000,bad=300,draws=139,max_fail=13) =", float(r139))
    print("sample sizes:", math.ceil(math.log(1000) / 0.1), math.ceil(2 * math.log(1000) / 0.1))
    print("detect(100,0,...) path: C=0 ->", detect(100, 0, 10, 25, 6))
