"""Forward-mode automatic differentiation with hyper-dual numbers.

A :class:`Dual2` carries a batch of values together with exact first and
second derivatives with respect to ``n`` seed directions.  Propagating a
function written in ordinary arithmetic through Dual2 operands therefore
yields the exact gradient and Hessian of every output in a single forward
pass -- no symbolic manipulation and no derivatives beyond second order.

Shapes: ``val`` is ``(m,)`` for ``m`` batched evaluation points, ``grad`` is
``(m, n)`` and ``hess`` is ``(m, n, n)``.  Scalars and plain ``(m,)`` arrays
mix freely with Dual2 operands and are treated as constants.
"""

from __future__ import annotations

import numpy as np


class Dual2:
    __slots__ = ("val", "grad", "hess")

    # make ndarray <op> Dual2 defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, val, grad, hess):
        self.val = val
        self.grad = grad
        self.hess = hess

    @property
    def n_dirs(self):
        return self.grad.shape[1]

    # -- helpers ---------------------------------------------------------

    def _const(self, other):
        """Broadcast a non-dual operand to the batch value shape."""
        return np.broadcast_to(np.asarray(other, dtype=float), self.val.shape)

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.val + other.val, self.grad + other.grad,
                         self.hess + other.hess)
        if isinstance(other, (int, float)):
            # results are never mutated, so sharing grad/hess is safe
            return Dual2(self.val + other, self.grad, self.hess)
        return Dual2(self.val + self._const(other), self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.val, -self.grad, -self.hess)

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.val - other.val, self.grad - other.grad,
                         self.hess - other.hess)
        if isinstance(other, (int, float)):
            return Dual2(self.val - other, self.grad, self.hess)
        return Dual2(self.val - self._const(other), self.grad, self.hess)

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return Dual2(other - self.val, -self.grad, -self.hess)
        return Dual2(self._const(other) - self.val, -self.grad, -self.hess)

    def __mul__(self, other):
        if isinstance(other, Dual2):
            av, bv = self.val, other.val
            ag, bg = self.grad, other.grad
            cross = ag[:, :, None] * bg[:, None, :]
            hess = (self.hess * bv[:, None, None]
                    + other.hess * av[:, None, None]
                    + cross + np.swapaxes(cross, 1, 2))
            return Dual2(av * bv,
                         ag * bv[:, None] + bg * av[:, None],
                         hess)
        if isinstance(other, (int, float)):
            return Dual2(self.val * other, self.grad * other,
                         self.hess * other)
        c = self._const(other)
        return Dual2(self.val * c, self.grad * c[:, None],
                     self.hess * c[:, None, None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            # f = a/b  =>  f' = (a' - f b')/b ;  f'' from a'' = (f b)''
            w = 1.0 / other.val
            fv = self.val * w
            fg = (self.grad - fv[:, None] * other.grad) * w[:, None]
            cross = fg[:, :, None] * other.grad[:, None, :]
            fh = (self.hess - other.hess * fv[:, None, None]
                  - cross - np.swapaxes(cross, 1, 2)) * w[:, None, None]
            return Dual2(fv, fg, fh)
        if isinstance(other, (int, float)):
            c = 1.0 / other
            return Dual2(self.val * c, self.grad * c, self.hess * c)
        c = 1.0 / self._const(other)
        return Dual2(self.val * c, self.grad * c[:, None],
                     self.hess * c[:, None, None])

    def __rtruediv__(self, other):
        # c / x = c * x**(-1)
        return self.__pow__(-1.0) * other

    def __pow__(self, p):
        if isinstance(p, Dual2):
            raise TypeError("dual exponents are not supported")
        x = self.val
        if p == 2:
            fv = x * x
            d1 = 2.0 * x
            d2 = np.full_like(x, 2.0)
        else:
            fv = x ** p
            d1 = p * x ** (p - 1)
            d2 = p * (p - 1) * x ** (p - 2)
        return self._chain(fv, d1, d2)

    # -- chain rule for elementary functions ------------------------------

    def _chain(self, fv, d1, d2):
        """Compose with a scalar function given f(x), f'(x), f''(x)."""
        outer = self.grad[:, :, None] * self.grad[:, None, :]
        return Dual2(fv, self.grad * d1[:, None],
                     self.hess * d1[:, None, None] + outer * d2[:, None, None])

    def exp(self):
        fv = np.exp(self.val)
        return self._chain(fv, fv, fv)

    def log(self):
        inv = 1.0 / self.val
        return self._chain(np.log(self.val), inv, -inv * inv)

    def sqrt(self):
        fv = np.sqrt(self.val)
        d1 = 0.5 / fv
        return self._chain(fv, d1, -0.5 * d1 / self.val)

    def sin(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(c, -s, -c)

    def __repr__(self):
        return f"Dual2(val={self.val!r})"


def seed_variables(values, n_dirs=None, offset=0):
    """Create one Dual2 per column of ``values`` with unit seed directions.

    values : (m, k) array; column j becomes a Dual2 whose gradient is the
    unit vector ``e_{offset+j}`` in an ``n_dirs``-dimensional seed space
    (default ``k``).  Returns a list of k Dual2 objects.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("values must be (m, k)")
    m, k = values.shape
    n = k if n_dirs is None else n_dirs
    out = []
    for j in range(k):
        grad = np.zeros((m, n))
        grad[:, offset + j] = 1.0
        out.append(Dual2(values[:, j].copy(), grad, np.zeros((m, n, n))))
    return out


def _dispatch(name):
    npf = getattr(np, name)

    def fn(x):
        if isinstance(x, Dual2):
            return getattr(x, name)()
        return npf(x)

    fn.__name__ = name
    return fn


exp = _dispatch("exp")
log = _dispatch("log")
sqrt = _dispatch("sqrt")
sin = _dispatch("sin")
cos = _dispatch("cos")
