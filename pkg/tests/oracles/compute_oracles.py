"""Regenerate frozen.json with mpmath, independently of the package.

Product link y = s1 s2 with orthonormal signals: the law of y has density
K0(|y|)/pi, E[s1^2 | y] K0(|y|)/pi = |y| K1(|y|)/pi and E[s1 s2 | y] = y.
All theory quantities reduce to 1-D integrals over y of these kernels.

    python tests/oracles/compute_oracles.py
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 20
FLOOR = -30


@functools.lru_cache(maxsize=None)
def k01(a):
    return mp.besselk(0, a), mp.besselk(1, a)


def tstar(y):
    a = abs(y)
    k0, k1 = k01(a)
    return 1 - k0 / (y * k0 + a * k1)


def floor_crossings():
    # T* reaches the floor only at |y| ~ e^{-31}; locate both crossings
    out = []
    for sgn in (1, -1):
        f = lambda t: tstar(sgn * mp.exp(t)) - FLOOR
        out.append(mp.exp(mp.findroot(f, -31)))
    return out


Y_POS, Y_NEG = floor_crossings()
BREAKS = [mp.mpf(10) ** k for k in (-12, -8, -4, -2, -1, 0)] + [4, 10, 25, 50]


def integrate(g):
    """int over y of g(y, z(y)) with z the floored T*."""
    total = mp.mpf(0)
    for sgn, y0 in ((1, Y_POS), (-1, Y_NEG)):
        pts = [mp.mpf(0), y0] + [b for b in BREAKS if b > y0]
        for lo, hi in zip(pts[:-1], pts[1:]):
            def h(a):
                y = sgn * a
                z = mp.mpf(FLOOR) if a <= y0 else tstar(y)
                return g(y, z)
            total += mp.quad(h, [lo, hi])
    return total


dens = lambda y: k01(abs(y))[0] / mp.pi
diag_k = lambda y: abs(y) * k01(abs(y))[1] / mp.pi
off_k = lambda y: y * k01(abs(y))[0] / mp.pi


def theory(delta):
    delta = mp.mpf(delta)
    lam_bar = mp.findroot(lambda l: integrate(lambda y, z: dens(y) * z**2 / (l - z) ** 2) - 1 / delta,
                         (mp.mpf("1.00001"), mp.mpf(20)), solver="illinois")
    psi = lambda l: l * (1 / delta + integrate(lambda y, z: dens(y) * z / (l - z)))
    psi_p = lambda l: 1 / delta - integrate(lambda y, z: dens(y) * z**2 / (l - z) ** 2)
    r_top = lambda a: integrate(lambda y, z: a * z / (a - z) * (diag_k(y) + off_k(y)))
    dr_top = lambda a: -integrate(lambda y, z: z**2 / (a - z) ** 2 * (diag_k(y) + off_k(y)))
    zeta = lambda a: psi(max(a, lam_bar))
    out = {"lambda_bar": lam_bar, "bulk_edge": psi(lam_bar)}
    g_edge = zeta(lam_bar + mp.mpf("1e-20")) - r_top(lam_bar + mp.mpf("1e-20"))
    if g_edge < 0:
        alpha = mp.findroot(lambda a: psi(a) - r_top(a), (lam_bar + mp.mpf("1e-12"), mp.mpf(50)), solver="illinois")
        zp = psi_p(alpha)
        out.update({"alpha1": alpha, "lambda1": psi(alpha),
                    "overlap_sq": zp * mp.mpf(0.5) / (zp - dr_top(alpha))})
    return out


def main():
    res = {}
    res["bessel"] = {str(x): [float(mp.besselk(0, x)), float(mp.besselk(1, x))]
                     for x in ("1e-6", "0.001", "0.5", "1", "1.999", "2", "2.001", "5", "20", "50", "200")}
    res["t_star_product"] = {str(y): float(tstar(mp.mpf(y))) for y in (-5, -2, -1, -0.5, 0.5, 1, 2, 5)}
    unfl = lambda g: 2 * mp.quad(lambda a: g(a) + g(-a), [0, mp.mpf("1e-8"), 1, 10, 60]) / 2
    obj_diag = unfl(lambda y: (y * mp.besselk(0, abs(y)) + abs(y) * mp.besselk(1, abs(y))
                               - mp.besselk(0, abs(y))) ** 2 / (mp.pi * mp.besselk(0, abs(y))))
    obj_e1 = unfl(lambda y: (abs(y) * mp.besselk(1, abs(y)) - mp.besselk(0, abs(y))) ** 2
                  / (mp.pi * mp.besselk(0, abs(y))))
    res["product_objective"] = {"diag": float(obj_diag), "e1": float(obj_e1), "delta_c": float(1 / obj_diag)}
    gamma = (1 + mp.sqrt(4 * mp.mpf("0.09") * mp.mpf("0.24") + mp.mpf("0.04"))) / 2
    res["mixed_pr"] = {"gamma": float(gamma), "delta_c": float(1 / (2 * gamma**2))}
    res["product_theory"] = {}
    for d in (1, 5):
        res["product_theory"][str(d)] = {k: float(v) for k, v in theory(d).items()}
        print(d, res["product_theory"][str(d)], flush=True)
    path = Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    print(json.dumps(res, indent=2), flush=True)


if __name__ == "__main__":
    main()
