"""Time-dependent Hamiltonian paths on a surface.

A HamiltonianPath carries the generating function H(x, t) as a compiled
ScalarField (or any object with the same evaluation interface), the time
interval, and planar support metadata. The object is immutable; derived
quantities (extremum tracks, normalization shift) are computed by the
lengths module and memoized per path.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field

import numpy as np

from .expr import ScalarField
from .surfaces import field_args


@dataclass(frozen=True)
class HamiltonianPath:
    surface: object
    field: object                   # ScalarField-like over chart vars + t
    interval: tuple = (0.0, 1.0)
    support: dict | None = None     # plane: {"center": (..), "radius": r} or {"box": ..}
    normalized: bool = False        # inf_x H_t = 0 already holds
    name: str = ""
    # declared autonomous-core structure: (G, gamma) meaning H_t = gamma'(t) G
    # and the isotopy is the core flow at parameter gamma(t); lets the gluing
    # machinery collapse flow compositions to a single core trajectory
    core: tuple | None = None

    @property
    def autonomous(self):
        return not getattr(self.field, "time_dependent", True)

    def values(self, states, t):
        args = field_args(self.surface, states, t)
        v = np.asarray(self.field.value(**args), dtype=float)
        return np.broadcast_to(v, (np.atleast_2d(states).shape[0],))

    def fingerprint(self):
        src = getattr(self.field, "source", repr(self.field))
        key = f"{self.surface.kind}|{self.surface.area}|{src}|{self.interval}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def describe(self):
        return {
            "surface": self.surface.describe(),
            "expr": getattr(self.field, "source", "<numeric>"),
            "interval": list(self.interval),
            "support": self.support,
            "name": self.name,
        }


class NumericField:
    """Callable-backed field with the ScalarField evaluation interface.

    Used where H_t is only known numerically (generating-function
    isotopies). Gradients fall back to central differences in the chart
    variables.
    """

    def __init__(self, fn, wrt=("x", "y"), time_dependent=True, source="<numeric>",
                 fd_step=1e-6):
        self._fn = fn
        self.wrt = tuple(wrt)
        self.time_dependent = time_dependent
        self.source = source
        self._h = fd_step

    def value(self, **bindings):
        return self._fn(**bindings)

    def __call__(self, **bindings):
        return self._fn(**bindings)

    def grad_component(self, var, **bindings):
        b_plus = dict(bindings)
        b_minus = dict(bindings)
        b_plus[var] = np.asarray(bindings.get(var, 0.0), dtype=float) + self._h
        b_minus[var] = np.asarray(bindings.get(var, 0.0), dtype=float) - self._h
        return (np.asarray(self._fn(**b_plus), dtype=float)
                - np.asarray(self._fn(**b_minus), dtype=float)) / (2 * self._h)

    def grad(self, **bindings):
        cols = [self.grad_component(v, **bindings) for v in self.wrt]
        shape = np.broadcast_shapes(*[np.shape(c) for c in cols])
        return np.stack([np.broadcast_to(np.asarray(c, float), shape) for c in cols],
                        axis=-1)

    def hess_component(self, v1, v2, **bindings):
        b_plus = dict(bindings)
        b_minus = dict(bindings)
        b_plus[v2] = np.asarray(bindings.get(v2, 0.0), dtype=float) + self._h
        b_minus[v2] = np.asarray(bindings.get(v2, 0.0), dtype=float) - self._h
        return (np.asarray(self.grad_component(v1, **b_plus), dtype=float)
                - np.asarray(self.grad_component(v1, **b_minus), dtype=float)) / (2 * self._h)


def path_from_expr(surface, source, interval=(0.0, 1.0), support=None, name="",
                   normalized=False):
    """Parse DSL source into a HamiltonianPath on the given surface."""
    wrt = surface.admitted_vars
    fld = ScalarField(source, wrt=wrt)
    return HamiltonianPath(surface, fld, tuple(interval), support, normalized, name)


def scaled_field(fld, factor, wrt):
    """factor * field, staying in the compiled-AST world when possible."""
    from .expr import Bin, Num, fold
    if isinstance(fld, ScalarField):
        return ScalarField(fold(Bin("*", Num(float(factor)), fld.ast)), wrt=wrt)
    return NumericField(lambda **b: factor * np.asarray(fld.value(**b), float),
                        wrt=wrt, time_dependent=fld.time_dependent)


def shifted_field(fld, shift, wrt):
    """field + shift (constant), staying compiled when possible."""
    from .expr import Bin, Num, fold
    if isinstance(fld, ScalarField):
        return ScalarField(fold(Bin("+", fld.ast, Num(float(shift)))), wrt=wrt)
    return NumericField(lambda **b: np.asarray(fld.value(**b), float) + shift,
                        wrt=wrt, time_dependent=fld.time_dependent)
