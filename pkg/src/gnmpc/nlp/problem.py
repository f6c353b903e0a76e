"""Parametric NLP representation.

A :class:`ParametricNLP` models

    min_z  Phi(z; zeta)   s.t.   g(z; zeta) <= 0,   h(z; zeta) = 0

with decision variables ``z`` (dim ``n_z``) and parameters ``zeta``
(dim ``n_p``).  Functions are assembled from *blocks*:

* :class:`LinearTerms` hold affine rows/objective parts with constant
  coefficients (kept sparse; they dominate transcribed optimal control
  problems, where bounds and slack rows are all affine), and
* :class:`NonlinearBlock` holds a batch of identical nonlinear functions
  over a small subset of variables per instance ("one stage per row").
  Derivatives come from a single hyper-dual forward pass per block, exact
  to second order.

Blocks keep constraint row ordering explicit so multipliers, sensitivities
and KKT residuals all refer to the same documented indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp

from gnmpc.errors import DimensionMismatch
from gnmpc.nlp.dual import Dual2, seed_variables

Kind = Literal["obj", "ineq", "eq"]


@dataclass
class NonlinearBlock:
    """A batch of m identical scalar/vector functions over local variables.

    ``fun(zvars, pvars)`` receives ``len(z_index[0])`` decision entries and
    ``len(p_index)`` parameter entries (Dual2 or plain ``(m,)`` arrays) and
    must return a list of ``n_out`` outputs built from smooth arithmetic.
    """

    fun: Callable
    z_index: np.ndarray          # (m, n_loc) int
    p_index: np.ndarray          # (n_ploc,) int
    n_out: int
    kind: Kind
    rows: np.ndarray | None = None   # (m, n_out) constraint rows; None for obj


@dataclass
class LinearTerms:
    """Affine rows  A z + B zeta + c  accumulated as triplets."""

    rows: list = field(default_factory=list)     # (row, col, coeff) on z
    rows_p: list = field(default_factory=list)   # (row, col, coeff) on zeta
    const: dict = field(default_factory=dict)    # row -> constant

    def add(self, row, z_cols=(), z_coeffs=(), p_cols=(), p_coeffs=(), const=0.0):
        for c, v in zip(z_cols, z_coeffs):
            self.rows.append((row, int(c), float(v)))
        for c, v in zip(p_cols, p_coeffs):
            self.rows_p.append((row, int(c), float(v)))
        if const:
            self.const[row] = self.const.get(row, 0.0) + float(const)

    def to_csr(self, n_rows, n_z, n_p):
        def build(trip, n_cols):
            if trip:
                r, c, v = zip(*trip)
            else:
                r, c, v = (), (), ()
            return sp.csr_matrix(
                (np.asarray(v, float), (np.asarray(r, int), np.asarray(c, int))),
                shape=(n_rows, n_cols))
        cvec = np.zeros(n_rows)
        for r, v in self.const.items():
            cvec[r] = v
        return build(self.rows, n_z), build(self.rows_p, n_p), cvec


class EvalPack:
    """Container for one evaluation of the problem functions."""

    __slots__ = ("phi", "grad_phi", "g", "h", "J_g", "J_h", "W",
                 "J_gp", "J_hp", "W_zp")

    def __init__(self):
        self.phi = 0.0
        self.grad_phi = None
        self.g = None
        self.h = None
        self.J_g = None
        self.J_h = None
        self.W = None
        self.J_gp = None
        self.J_hp = None
        self.W_zp = None


class ParametricNLP:
    """Block-assembled twice-differentiable parametric NLP."""

    def __init__(self, n_z, n_p, name=""):
        self.n_z = int(n_z)
        self.n_p = int(n_p)
        self.name = name
        self.n_g = 0
        self.n_h = 0
        self.blocks: list[NonlinearBlock] = []
        self._lin_g = LinearTerms()
        self._lin_h = LinearTerms()
        self.obj_lin_z = np.zeros(self.n_z)
        self.obj_lin_p = np.zeros(self.n_p)
        self.obj_const = 0.0
        self.z_init: Callable | None = None   # zeta -> z0
        self._finalized = False

    # -- construction -----------------------------------------------------

    def _alloc_rows(self, kind, n_rows):
        if kind == "ineq":
            base = self.n_g
            self.n_g += n_rows
        elif kind == "eq":
            base = self.n_h
            self.n_h += n_rows
        else:
            raise ValueError(kind)
        return base

    def add_nonlinear_block(self, kind, fun, z_index, p_index, n_out):
        z_index = np.atleast_2d(np.asarray(z_index, dtype=int))
        p_index = np.asarray(p_index, dtype=int).ravel()
        if z_index.size and z_index.max() >= self.n_z:
            raise DimensionMismatch("z index out of range")
        if p_index.size and p_index.max() >= self.n_p:
            raise DimensionMismatch("parameter index out of range")
        m = z_index.shape[0]
        rows = None
        if kind != "obj":
            base = self._alloc_rows(kind, m * n_out)
            rows = base + np.arange(m * n_out).reshape(m, n_out)
        self.blocks.append(NonlinearBlock(fun, z_index, p_index, n_out, kind, rows))
        return rows

    def add_linear_rows(self, kind, n_rows):
        """Allocate affine rows; fill them via the returned (terms, base)."""
        base = self._alloc_rows(kind, n_rows)
        terms = self._lin_g if kind == "ineq" else self._lin_h
        return terms, base

    def add_linear_terms(self, kind, row, z_cols=(), z_coeffs=(), p_cols=(),
                         p_coeffs=(), const=0.0):
        """Accumulate affine coefficients onto an existing constraint row.

        Rows mix freely: a nonlinear block output and affine terms on the
        same row add up.  Shooting constraints exploit this by keeping
        ``f(x_i, u_i)`` in a block while the ``- x_{i+1}`` part stays
        affine, which shrinks the seed space of the hyper-dual pass.
        """
        terms = self._lin_g if kind == "ineq" else self._lin_h
        terms.add(row, z_cols, z_coeffs, p_cols, p_coeffs, const)

    def add_linear_objective(self, z_cols=(), z_coeffs=(), p_cols=(),
                             p_coeffs=(), const=0.0):
        for c, v in zip(z_cols, z_coeffs):
            self.obj_lin_z[int(c)] += float(v)
        for c, v in zip(p_cols, p_coeffs):
            self.obj_lin_p[int(c)] += float(v)
        self.obj_const += float(const)

    def finalize(self):
        self.A_g, self.B_g, self.c_g = self._lin_g.to_csr(self.n_g, self.n_z, self.n_p)
        self.A_h, self.B_h, self.c_h = self._lin_h.to_csr(self.n_h, self.n_z, self.n_p)
        self.has_nl_ineq = any(b.kind == "ineq" for b in self.blocks)
        self.has_nl_eq = any(b.kind == "eq" for b in self.blocks)
        self._A_h_dense = self.A_h.toarray() if self.has_nl_eq else None
        self._A_g_dense = self.A_g.toarray() if self.has_nl_ineq else None
        self._B_g_dense = None
        self._B_h_dense = None
        self._finalized = True
        return self

    # -- evaluation --------------------------------------------------------

    @classmethod
    def from_callables(cls, phi, n_z, n_p, g=None, h=None, n_g=0, n_h=0,
                       name=""):
        """Wrap plain callables ``f(z_list, p_list)`` as one-instance blocks.

        ``phi`` returns a scalar expression; ``g``/``h`` return lists of
        ``n_g``/``n_h`` expressions.  Convenient for small problems where
        block structure does not matter.
        """
        nlp = cls(n_z, n_p, name=name)
        all_z = np.arange(n_z)[None, :]
        all_p = np.arange(n_p)
        nlp.add_nonlinear_block("obj", lambda zv, pv: [phi(zv, pv)],
                                all_z, all_p, 1)
        if g is not None and n_g:
            nlp.add_nonlinear_block("ineq", g, all_z, all_p, n_g)
        if h is not None and n_h:
            nlp.add_nonlinear_block("eq", h, all_z, all_p, n_h)
        return nlp.finalize()

    def _block_inputs(self, block, z, zeta, order, wrt_p):
        m, n_loc = block.z_index.shape
        zloc = z[block.z_index]                       # (m, n_loc)
        ploc = np.broadcast_to(zeta[block.p_index], (m, len(block.p_index)))
        if order == 0:
            zv = [zloc[:, j] for j in range(n_loc)]
            pv = [ploc[:, j] for j in range(ploc.shape[1])]
            return zv, pv, 0
        n_pl = ploc.shape[1] if wrt_p else 0
        n_dirs = n_loc + n_pl
        zv = seed_variables(zloc, n_dirs, 0)
        if wrt_p:
            pv = seed_variables(ploc, n_dirs, n_loc)
        else:
            pv = [ploc[:, j] for j in range(ploc.shape[1])]
        return zv, pv, n_dirs

    def evaluate(self, z, zeta, lam=None, nu=None, order=2, wrt_p=False):
        """Evaluate functions and derivatives at (z, zeta).

        order=0: values only.  order>=1: Jacobians and objective gradient.
        order=2: also the Lagrangian Hessian ``W = Hess_zz(Phi + lam.g + nu.h)``
        (requires ``lam``/``nu``; pass zeros for pure function Hessians).
        With ``wrt_p`` the parametric Jacobians and the cross Hessian
        ``W_zp = Hess_z,zeta of the Lagrangian`` are assembled as well.
        """
        if not self._finalized:
            raise RuntimeError("call finalize() first")
        z = np.asarray(z, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        if z.shape != (self.n_z,) or zeta.shape != (self.n_p,):
            raise DimensionMismatch(
                f"expected z{(self.n_z,)}, zeta{(self.n_p,)}; "
                f"got {z.shape}, {zeta.shape}")
        pk = EvalPack()
        pk.g = self.A_g @ z + self.B_g @ zeta + self.c_g
        pk.h = self.A_h @ z + self.B_h @ zeta + self.c_h
        pk.phi = float(self.obj_lin_z @ z + self.obj_lin_p @ zeta + self.obj_const)
        if order >= 1:
            pk.grad_phi = self.obj_lin_z.copy()
            pk.J_g = (self._A_g_dense.copy() if self.has_nl_ineq else self.A_g)
            pk.J_h = (self._A_h_dense.copy() if self.has_nl_eq else self.A_h)
            if wrt_p:
                pk.J_gp = (self.B_g.toarray() if self.has_nl_ineq else self.B_g)
                pk.J_hp = (self.B_h.toarray() if self.has_nl_eq else self.B_h)
                pk.W_zp = np.zeros((self.n_z, self.n_p))
        if order >= 2:
            pk.W = np.zeros((self.n_z, self.n_z))

        for blk in self.blocks:
            zv, pv, n_dirs = self._block_inputs(blk, z, zeta, order, wrt_p)
            outs = blk.fun(zv, pv)
            if len(outs) != blk.n_out:
                raise DimensionMismatch(
                    f"block returned {len(outs)} outputs, declared {blk.n_out}")
            m, n_loc = blk.z_index.shape
            if blk.kind == "obj":
                mult = None
            elif blk.kind == "ineq":
                mult = None if lam is None else lam[blk.rows]
            else:
                mult = None if nu is None else nu[blk.rows]
            hess_acc = None
            for o, out in enumerate(outs):
                if not isinstance(out, Dual2):
                    out = Dual2(np.broadcast_to(np.asarray(out, float), (m,)),
                                np.zeros((m, n_dirs or 1)),
                                np.zeros((m, n_dirs or 1, n_dirs or 1)))
                val = out.val
                if blk.kind == "obj":
                    pk.phi += float(val.sum())
                else:
                    target = pk.g if blk.kind == "ineq" else pk.h
                    target[blk.rows[:, o]] += val
                if order >= 1:
                    gz = out.grad[:, :n_loc]
                    if blk.kind == "obj":
                        np.add.at(pk.grad_phi, blk.z_index, gz)
                    else:
                        J = pk.J_g if blk.kind == "ineq" else pk.J_h
                        np.add.at(J, (blk.rows[:, o][:, None], blk.z_index), gz)
                        if wrt_p and len(blk.p_index):
                            Jp = pk.J_gp if blk.kind == "ineq" else pk.J_hp
                            np.add.at(Jp, (blk.rows[:, o][:, None],
                                           blk.p_index[None, :]),
                                      out.grad[:, n_loc:])
                if order >= 2:
                    w = (np.ones(m) if blk.kind == "obj"
                         else (mult[:, o] if mult is not None else np.zeros(m)))
                    contrib = out.hess * w[:, None, None]
                    hess_acc = contrib if hess_acc is None else hess_acc + contrib
            if order >= 2 and hess_acc is not None:
                np.add.at(pk.W, (blk.z_index[:, :, None], blk.z_index[:, None, :]),
                          hess_acc[:, :n_loc, :n_loc])
                if wrt_p and len(blk.p_index):
                    np.add.at(pk.W_zp,
                              (blk.z_index[:, :, None], blk.p_index[None, None, :]),
                              hess_acc[:, :n_loc, n_loc:])
        return pk
