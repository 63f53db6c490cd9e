"""Regenerate the bundled Daubechies filter table (src/fgbm/data/daubechies.json).

Minimum-phase spectral factorization of the Daubechies half-band polynomial.
Run from the repository root: ``python tools/gen_daubechies.py``.
"""
import json
from math import comb
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50


def daubechies(n):
    # P(y) = sum_k C(n-1+k, k) y^k with y = (2 - z - 1/z) / 4
    deg = n - 1
    poly = [mp.mpf(0)] * (2 * deg + 1)  # coefficients of z^0 .. z^(2deg) of z^deg * P
    for k in range(n):
        c = mp.mpf(comb(n - 1 + k, k))
        # y^k * z^deg = ((2 - z - 1/z)/4)^k * z^deg -> expand (-z^2 + 2z - 1)^k / 4^k * z^(deg-k)
        base = [mp.mpf(-1), mp.mpf(2), mp.mpf(-1)]  # coefficients z^0, z^1, z^2
        term = [mp.mpf(1)]
        for _ in range(k):
            term = [sum(term[i] * base[j - i] for i in range(len(term)) if 0 <= j - i < 3)
                    for j in range(len(term) + 2)]
        for i, a in enumerate(term):
            poly[i + deg - k] += c * a / mp.mpf(4) ** k
    roots = mp.polyroots(poly[::-1], maxsteps=200, extraprec=200) if deg > 0 else []
    inside = [r for r in roots if abs(r) < 1]
    h = [mp.mpf(1)]
    for _ in range(n):
        h = [(h[i] if i < len(h) else 0) + (h[i - 1] if i >= 1 else 0) for i in range(len(h) + 1)]
    for r in inside:
        h = [(h[i] if i < len(h) else 0) - r * (h[i - 1] if i >= 1 else 0) for i in range(len(h) + 1)]
    h = [mp.re(c) for c in h]
    s = sum(h)
    h = [c * mp.sqrt(2) / s for c in h]
    return [float(c) for c in h]


if __name__ == "__main__":
    table = {f"db{n}": daubechies(n) for n in range(1, 11)}
    out = Path(__file__).resolve().parents[1] / "src" / "fgbm" / "data" / "daubechies.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, indent=1) + "\n")
    print(f"wrote {out}")
