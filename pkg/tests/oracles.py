"""Independent reference solutions shared by several test modules."""

import mpmath as mp
import numpy as np


def well_oracle(depth, a, h, region, n_re=24, n_im=12):
    """Roots of the even/odd matching conditions, from a grid of starting points."""
    mp.mp.dps = 30

    def k(z):
        return mp.sqrt(z) / h

    def q(z):
        return mp.sqrt(z - depth) / h

    eqs = [lambda z: q(z) * mp.tan(q(z) * a) + 1j * k(z),
           lambda z: q(z) * mp.cos(q(z) * a) - 1j * k(z) * mp.sin(q(z) * a)]
    re0, re1, im0, im1 = region
    roots = []
    for f in eqs:
        for x in np.linspace(re0, re1, n_re):
            for y in np.linspace(im0, im1, n_im):
                try:
                    z = complex(mp.findroot(f, mp.mpc(x, y - 0.05), tol=1e-25, maxsteps=60))
                except (ValueError, ZeroDivisionError):
                    continue
                if abs(complex(f(z))) > 1e-12:
                    continue
                inside = re0 < z.real < re1 and im0 < z.imag < im1
                if inside and all(abs(z - w) > 1e-6 for w in roots):
                    roots.append(z)
    return sorted(roots, key=lambda z: (z.real, z.imag))
