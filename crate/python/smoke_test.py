"""Smoke test for the wishvol extension module."""
import math

import wishvol

ue = wishvol.UeHyper(20.0, 0.95, [[1.0, 0.0], [0.0, 1.0]])
bb = ue.matched()
assert bb.q == 2

returns, phis = wishvol.simulate(ue, 80, 7)
assert len(returns) == 80 and len(phis) == 81

fu = wishvol.forward_filter(returns, ue)
fb = wishvol.forward_filter(returns, bb)
gap = max(abs(a - b) for a, b in zip(fu.log_forecasts, fb.log_forecasts))
assert gap < 1e-10, gap
assert math.isclose(fu.log_marginal, sum(fu.log_forecasts), rel_tol=1e-12)

lam = wishvol.constrained_lambda(10.0, 3)
assert abs(lam - 6 / 7) < 1e-15

grid = wishvol.grid_search(returns, [[1.0, 0.0], [0.0, 1.0]], [5.0, 10.0], [0.9, 0.95])
assert len(grid["surface"]) == 4

ens = wishvol.smooth(returns, ue, 30, 11)
assert len(ens) == 30
bands = ens.correlation(0, 1)
assert all(lo <= mid <= hi for lo, mid, hi in bands)

assert wishvol.log_plr(ens.logliks, ens.logliks) == 0.0

mix = wishvol.mixture(returns, ue, bb, 200, 3)
assert 0.0 < mix["alpha_mean"] < 1.0

upper, coverage = wishvol.ppc(returns, ue)
assert len(coverage) == 80

assert abs(wishvol.tricomi_u(1.0, 1.0, 1.0) - 0.5963473623231940) < 1e-10

try:
    wishvol.UeHyper(-1.0, 0.9, [[1.0]])
except wishvol.WishvolError as e:
    print("rejected bad hyper:", e)
else:
    raise AssertionError("negative n accepted")

print("smoke test ok")
