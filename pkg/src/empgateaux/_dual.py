"""Forward-mode dual numbers ``a + b*eps`` with ``eps**2 = 0``.

Evaluating a rational function of the mixture weight on duals returns its
value and exact first derivative in one pass.  Comparisons look only at the
real part so code written for floats (clipping, zero checks) runs unchanged.
"""

from __future__ import annotations

import math


class Dual:
    __slots__ = ("re", "du")

    def __init__(self, re, du=0.0):
        self.re = float(re)
        self.du = float(du)

    @staticmethod
    def lift(v) -> "Dual":
        return v if isinstance(v, Dual) else Dual(v, 0.0)

    def __add__(self, o):
        o = Dual.lift(o)
        return Dual(self.re + o.re, self.du + o.du)

    __radd__ = __add__

    def __sub__(self, o):
        o = Dual.lift(o)
        return Dual(self.re - o.re, self.du - o.du)

    def __rsub__(self, o):
        return Dual.lift(o) - self

    def __mul__(self, o):
        o = Dual.lift(o)
        return Dual(self.re * o.re, self.re * o.du + self.du * o.re)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = Dual.lift(o)
        return Dual(self.re / o.re, (self.du * o.re - self.re * o.du) / (o.re * o.re))

    def __rtruediv__(self, o):
        return Dual.lift(o) / self

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __abs__(self):
        return -self if self.re < 0 else self

    def _r(self, o):
        return o.re if isinstance(o, Dual) else float(o)

    def __eq__(self, o):
        return self.re == self._r(o)

    def __ne__(self, o):
        return self.re != self._r(o)

    def __lt__(self, o):
        return self.re < self._r(o)

    def __le__(self, o):
        return self.re <= self._r(o)

    def __gt__(self, o):
        return self.re > self._r(o)

    def __ge__(self, o):
        return self.re >= self._r(o)

    def __hash__(self):
        return hash(self.re)

    def __float__(self):
        return self.re

    def __repr__(self):
        return f"Dual({self.re!r}, {self.du!r})"

    def isfinite(self) -> bool:
        return math.isfinite(self.re) and math.isfinite(self.du)
