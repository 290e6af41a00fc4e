"""
Download cost across parameters
===============================

Counts every downloaded symbol exactly and compares the rate to the closed
form (1 - K/N) / (1 - (K/N)^M), and to retrieving the virtual message as if
it were one of V independent messages.
"""

from pfrlab import SchemeParams, baseline_rates, rate_report

grid = [(3, 1, 1), (3, 2, 2), (4, 2, 2), (4, 3, 2), (4, 3, 3), (5, 2, 2)]

#%%
print(f"{'N K M':<7} {'V':>2} {'L':>6} {'D':>7} {'rate':>8} {'baseline':>9} {'ratio':>8}")
for N, K, M in grid:
    p = SchemeParams(N, K, M, 2)
    r = rate_report(p, check=True)
    b = baseline_rates(p)
    print(f"{N} {K} {M}   {p.V:>2} {r.L:>6} {r.D:>7} {str(r.rate):>8} "
          f"{str(b['baseline']):>9} {float(b['ratio']):>8.4f}")

#%%
# Every step of the counting argument, as exact rationals.
print(rate_report(SchemeParams(4, 2, 2, 2)).table())
