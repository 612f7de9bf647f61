"""Named Hamiltonians, paths, and glue pairs used by experiments and tests.

All entries are closed-form DSL expressions. Radial planar profiles are
designed against the action variable rho = pi r^2: the orbit period at a
level is 1/|dh/drho|, which pins where short orbits appear.
"""

from __future__ import annotations

import math

import numpy as np

from .expr import ScalarField
from .paths import HamiltonianPath, path_from_expr
from . import surfaces as sf

PI = "3.141592653589793"
TWO_PI = "6.283185307179586"
HALF_PI = "1.5707963267948966"

# detour time-profile gain: gamma'(t) = 1 + k sin(2 pi t) with k chosen so
# the total variation of gamma is 5/3 (solves 2k cos a + 2a = 5 pi/3 with
# a = asin(1/k))
DETOUR_K = 2.4103465427143013


def _detour_gamma(k=DETOUR_K):
    c = k / (2.0 * math.pi)

    def gamma(t):
        return t + c * (1.0 - math.cos(2.0 * math.pi * t))

    def gamma_prime(t):
        return 1.0 + k * math.sin(2.0 * math.pi * t)
    return gamma, gamma_prime


def detour_profile_src(k=DETOUR_K):
    return f"(1.0 + {k!r}*sin({TWO_PI}*t))"


ENTRIES = {
    # gentle radial bump: max 1, plateau r^2 <= 0.2, slopes keep all orbit
    # periods above 3
    "slow-bump": {
        "surface": {"kind": "plane"},
        "expr": "bump(x^2 + y^2 - 0.2; 2.0)",
        "support": {"center": (0.0, 0.0), "radius": 1.5},
        "normalized": True,
    },
    # plateau of area pi*0.36 ~ 1.13 > max H = 1; edge slopes keep periods
    # above 2
    "plateau-bump": {
        "surface": {"kind": "plane"},
        "expr": "bump(x^2 + y^2 - 0.36; 1.2)",
        "support": {"center": (0.0, 0.0), "radius": 1.3},
        "normalized": True,
    },
    # linearized frequency 4 pi at the elliptic center (orbit period 1/2);
    # the radial slope peaks exactly at the center, so 1/2 is the global
    # minimal period
    "rot4pi": {
        "surface": {"kind": "plane"},
        "expr": f"1.28*(bump({PI}*(x^2+y^2) - 0.8; 1.6) - "
                f"bump({PI}*(x^2+y^2) + 0.6; 1.2))",
        "support": {"center": (0.0, 0.0), "radius": 1.0},
        "normalized": True,
    },
    # linearized frequency pi (linear period 2): the rigidity control; the
    # cutoff is gentle enough that no orbit closes in time < 1
    "rot-pi-control": {
        "surface": {"kind": "plane"},
        "expr": f"{HALF_PI}*(x^2+y^2)*bump(x^2+y^2 - 0.36; 2.5)",
        "support": {"center": (0.0, 0.0), "radius": 1.8},
        "normalized": True,
    },
    # quadratic 2 pi r^2 plus quartic r^4 near the center: periods decrease
    # with radius, giving a nonlinear short-orbit witness for the probe
    "quartic-rigid": {
        "surface": {"kind": "plane"},
        "expr": f"({TWO_PI}*(x^2+y^2) + (x^2+y^2)^2)*bump(x^2+y^2 - 0.2; 1.5)",
        "support": {"center": (0.0, 0.0), "radius": 1.4},
        "normalized": True,
    },
    # sphere height scaled to total variation = area (full turn in time 1)
    "sphere-height": {
        "surface": {"kind": "sphere", "area": 4.0},
        "expr": "2.0*z",
        "support": None,
        "normalized": False,
    },
    "sphere-height-shifted": {
        "surface": {"kind": "sphere", "area": 4.0},
        "expr": "2.0*z + 2.0",
        "support": None,
        "normalized": True,
    },
    # torus shear profile f(x) = sin^2(pi x): f(0) = f'(0) = 0, f(1/2) = 1
    "torus-shear": {
        "surface": {"kind": "torus", "area": 1.0},
        "expr": f"0.5 - 0.5*cos({TWO_PI}*x)",
        "support": None,
        "normalized": True,
    },
    # peaked traveling bump: the arg-max drifts at unit speed
    "traveling-bump": {
        "surface": {"kind": "plane"},
        "expr": "bump((x - t)^2 + y^2; 0.4)",
        "support": {"box": ((-0.9, 1.9), (-0.9, 0.9))},
        "normalized": True,
    },
    # autonomous for t <= 1/2, then the center drifts with nonzero end slope
    "auto-then-travel": {
        "surface": {"kind": "plane"},
        "expr": "bump((x - 0.4 + 0.4*bump(t - 0.5; 0.6))^2 + y^2; 0.4)",
        "support": {"box": ((-0.9, 1.4), (-0.9, 0.9))},
        "normalized": True,
    },
    # generating-function profile with two isolated interior critical points
    "flat-profile": {
        "surface": {"kind": "plane"},
        "expr": "x*bump(x^2 + y^2 - 0.25; 1.0)",
        "support": {"center": (0.0, 0.0), "radius": 1.2},
        "normalized": False,
    },
}


def entry_names():
    return sorted(ENTRIES)


def load(name):
    """Build the named catalog path."""
    spec = ENTRIES[name]
    surface = sf.from_descriptor(spec["surface"])
    return path_from_expr(surface, spec["expr"], support=spec["support"],
                          name=name, normalized=spec["normalized"])


def load_scaled(name, factor):
    """Catalog entry with the expression scaled by a constant factor."""
    spec = ENTRIES[name]
    surface = sf.from_descriptor(spec["surface"])
    return path_from_expr(surface, f"{factor!r}*({spec['expr']})",
                          support=spec["support"], name=f"{name}*{factor}")


def glue_pair(name):
    """Homotopic (detour, straight) path pairs sharing one autonomous core.

    The straight path flows the core G for unit time (K_t = G); the detour
    reparametrizes the same flow by a non-monotone gamma with gamma(1) = 1,
    so both have the same time-1 map while the detour is strictly longer
    (length ratio 5/3). Cores are declared so the gluing machinery can
    collapse flow compositions.
    """
    pairs = {
        "slow-bump-detour": ("slow-bump", 0.6),
        "plateau-detour": ("plateau-bump", 1.0),
        "shear-detour": ("torus-shear", 1.0),
    }
    base_name, scale = pairs[name]
    spec = ENTRIES[base_name]
    surface = sf.from_descriptor(spec["surface"])
    g_src = f"{scale!r}*({spec['expr']})" if scale != 1.0 else spec["expr"]
    G = ScalarField(g_src, wrt=surface.admitted_vars)
    gamma, gamma_prime = _detour_gamma()
    K = HamiltonianPath(surface, G, (0.0, 1.0), spec["support"],
                        normalized=False, name=f"{name}:straight",
                        core=(G, lambda t: t, lambda t: 1.0))
    h_src = f"{detour_profile_src()}*({g_src})"
    Hfield = ScalarField(h_src, wrt=tuple(list(surface.admitted_vars) + ["t"]))
    H = HamiltonianPath(surface, Hfield, (0.0, 1.0), spec["support"],
                        normalized=False, name=f"{name}:detour",
                        core=(G, gamma, gamma_prime))
    return H, K


def glue_pair_names():
    return ["slow-bump-detour", "plateau-detour", "shear-detour"]
