"""
Bid and ask under volatility uncertainty
========================================

A European call is priced when the volatility is only known to lie in a band.
The bid is the supremum of the discounted expectation over scenarios and the
ask is the infimum, so the quotes bracket every constant-volatility price.
"""

import numpy as np

from fgbm.core import SeedSpec, VolatilityBand
from fgbm.market import MarketModel, Payoff, bs_closed_form, price_bid_ask

band = VolatilityBand(0.1, 0.3)

# %%
# Brownian case: three engines
# ----------------------------
# At ``H = 1/2`` the nonlinear pricing PDE is available, so the PDE quote can
# be set against Monte Carlo and against the two lognormal extremes.

model = MarketModel(spot=100.0, rate=0.0, h=0.5, band=band, horizon=1.0)
call = Payoff.call(100.0)
for engine, kw in (("Pde", {"grid_n": 800}), ("ScenarioMC", {"num_paths": 100_000, "seed": SeedSpec(1)}),
                   ("PerScenarioClosedForm", {})):
    q = price_bid_ask(model, call, engine, **kw)
    print(f"{engine:>22}: bid={q.bid:8.4f}  ask={q.ask:8.4f}  spread={q.spread:.4f}")
print(f"{'lognormal oracle':>22}: bid={bs_closed_form(100, 100, 0, 0.09, 1):8.4f}  "
      f"ask={bs_closed_form(100, 100, 0, 0.01, 1):8.4f}")

# %%
# Memory widens the spread for long maturities
# --------------------------------------------
# With constant scenarios the terminal log-price variance is ``sigma^2 T^2H``.
# For ``H > 1/2`` it grows faster than linearly, and so does the spread.

maturities = np.array([0.25, 0.5, 1.0, 2.0, 4.0])
rows = []
for H in (0.3, 0.5, 0.7):
    spreads = [price_bid_ask(MarketModel(100.0, 0.0, H, band, T), call, "PerScenarioClosedForm").spread
               for T in maturities]
    rows.append(spreads)
    print(f"H={H}: " + "  ".join(f"{s:7.3f}" for s in spreads))

np.savetxt("spread_vs_maturity.csv", np.column_stack([maturities, np.array(rows).T]), delimiter=",",
           header="T,H0.3,H0.5,H0.7", comments="")
