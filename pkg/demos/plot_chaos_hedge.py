"""
Chaos expansions, Wick calculus and a hedge integrand
=====================================================

Random variables built from fractional noise are stored as Hermite chaos
expansions.  Here a cubic Wick polynomial in the terminal value is split into
its mean and a stochastic integral, then turned into a hedge ratio.
"""

import numpy as np

from fgbm.chaos import TruncationSpec, WickPolynomial, clark_ocone_polynomial, fgbm_chaos, wick_power
from fgbm.core import SeedSpec, VolatilityBand
from fgbm.market import MarketModel, Payoff, hedge_ratio

H, T = 0.7, 1.0
trunc = TruncationSpec(max_order=3, K=32)

# %%
# The terminal value is first order
# ---------------------------------
# Its coefficients are ``int_0^T M_H h_k``; the truncated variance falls short
# of ``T^2H`` by an amount that shrinks slowly with ``K``.

BT = fgbm_chaos(T, H, trunc)
print("truncated variance", BT.norm2(), "exact", T ** (2 * H))
print("Wick square has", len(wick_power(BT, 2)), "second-order terms")

# %%
# Integrand and reconstruction
# ----------------------------

F = WickPolynomial.in_terminal_value([0.5, 1.0, -0.5, 0.25])
co = clark_ocone_polynomial(F, H, T, trunc)
print("mean", co.mean, " max coefficient error", co.max_coefficient_error)

# %%
# Hedge ratio along simulated states
# ----------------------------------
# The integrand is evaluated at simulated ``B_H(t)`` under the upper scenario
# and divided by the stock price.

model = MarketModel(100.0, 0.02, H, VolatilityBand(0.1, 0.3), T)
for t in (0.25, 0.5, 0.75):
    hr = hedge_ratio(model, Payoff("PolynomialWick", polynomial=F), t, num_samples=5, seed=SeedSpec(4))
    print(f"t={t}: ratio={np.round(hr.ratio, 5)}")
