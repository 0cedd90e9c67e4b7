"""Structured convex expressions and programs.

An expression is

    const + lin^T x + sum_t w_t * phi_t(u_t^T x + d_t)

with ``phi`` one of ``z**2`` ("quad"), ``1/z`` ("recip", z > 0) or
``-log z`` ("neglog", z > 0) and every weight ``w_t >= 0`` (``> 0`` for
recip/neglog), so each expression is convex by construction.
:class:`ConvexExpr` is the one-expression form; :class:`ExprBlock` stores many
rows at once as sparse matrices and is what the solver evaluates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

QUAD, RECIP, NEGLOG = 0, 1, 2
KIND_NAMES = {"quad": QUAD, "recip": RECIP, "neglog": NEGLOG}


def _as_map(coefs):
    if isinstance(coefs, dict):
        return {int(k): float(v) for k, v in coefs.items()}
    return {int(k): float(v) for k, v in coefs}


@dataclass
class ConvexExpr:
    affine: dict = field(default_factory=dict)
    const: float = 0.0
    quads: list = field(default_factory=list)
    recips: list = field(default_factory=list)
    neglogs: list = field(default_factory=list)

    def __post_init__(self):
        self.affine = _as_map(self.affine)
        for name, terms in (("quad", self.quads), ("recip", self.recips), ("neglog", self.neglogs)):
            for inner, _, weight in terms:
                if weight < 0 or (name != "quad" and weight == 0):
                    raise ValueError(f"{name} term needs a positive weight, got {weight}")

    def add_quad(self, inner, offset=0.0, weight=1.0):
        self.quads.append((_as_map(inner), float(offset), float(weight)))
        self.__post_init__()
        return self

    def add_recip(self, inner, offset=0.0, weight=1.0):
        self.recips.append((_as_map(inner), float(offset), float(weight)))
        self.__post_init__()
        return self

    def add_neglog(self, inner, offset=0.0, weight=1.0):
        self.neglogs.append((_as_map(inner), float(offset), float(weight)))
        self.__post_init__()
        return self

    def max_index(self):
        idx = list(self.affine)
        for terms in (self.quads, self.recips, self.neglogs):
            for inner, _, _ in terms:
                idx.extend(inner)
        return max(idx, default=-1)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        dot = lambda m: sum(c * x[i] for i, c in m.items())
        out = self.const + dot(self.affine)
        out += sum(w * (dot(m) + d) ** 2 for m, d, w in self.quads)
        for m, d, w in self.recips:
            z = dot(m) + d
            out += w / z if z > 0 else np.inf
        for m, d, w in self.neglogs:
            z = dot(m) + d
            out += -w * np.log(z) if z > 0 else np.inf
        return float(out)

    def to_block(self, n):
        return ExprBlock.from_exprs([self], n)

    def __str__(self):
        parts = [f"const {self.const!r}"]
        parts += [f"lin x{i} {c!r}" for i, c in sorted(self.affine.items())]
        for name, terms in (("quad", self.quads), ("recip", self.recips), ("neglog", self.neglogs)):
            for m, d, w in terms:
                inner = " ".join(f"x{i}:{c!r}" for i, c in sorted(m.items()))
                parts.append(f"{name} w={w!r} d={d!r} {inner}")
        return "\n".join(parts)


def _phi(kind, z):
    """phi, phi', phi'' for each term kind."""
    val = np.empty_like(z)
    d1 = np.empty_like(z)
    d2 = np.empty_like(z)
    q = kind == QUAD
    r = kind == RECIP
    g = kind == NEGLOG
    val[q] = z[q] ** 2
    d1[q] = 2 * z[q]
    d2[q] = 2.0
    zr = z[r]
    val[r] = 1.0 / zr
    d1[r] = -1.0 / zr**2
    d2[r] = 2.0 / zr**3
    zg = z[g]
    val[g] = -np.log(zg)
    d1[g] = -1.0 / zg
    d2[g] = 1.0 / zg**2
    return val, d1, d2


class ExprBlock:
    """``n_rows`` expressions over ``n`` variables stored as sparse arrays."""

    def __init__(self, n, n_rows, lin, const, term_row, term_kind, term_weight, inner, inner_off):
        self.n = int(n)
        self.n_rows = int(n_rows)
        self.lin = sp.csr_matrix(lin, shape=(n_rows, n))
        self.const = np.asarray(const, dtype=float).reshape(n_rows)
        self.term_row = np.asarray(term_row, dtype=np.int64)
        self.term_kind = np.asarray(term_kind, dtype=np.int8)
        self.term_weight = np.asarray(term_weight, dtype=float)
        self.inner = sp.csr_matrix(inner, shape=(self.term_row.size, n))
        self.inner_off = np.asarray(inner_off, dtype=float)
        T = self.term_row.size
        if np.any(self.term_weight < 0) or np.any(self.term_weight[self.term_kind != QUAD] <= 0):
            raise ValueError("term weights must keep every expression convex")
        self._scatter = sp.csr_matrix(
            (np.ones(T), (self.term_row, np.arange(T))), shape=(n_rows, T))
        self._domain = self.term_kind != QUAD

    @classmethod
    def empty(cls, n, n_rows=0):
        return cls(n, n_rows, sp.csr_matrix((n_rows, n)), np.zeros(n_rows), [], [], [], sp.csr_matrix((0, n)), [])

    @classmethod
    def from_exprs(cls, exprs, n):
        rows, cols, vals, const = [], [], [], []
        t_row, t_kind, t_w, i_rows, i_cols, i_vals, i_off = [], [], [], [], [], [], []
        for r, e in enumerate(exprs):
            const.append(e.const)
            for i, c in e.affine.items():
                rows.append(r); cols.append(i); vals.append(c)
            for kind, terms in ((QUAD, e.quads), (RECIP, e.recips), (NEGLOG, e.neglogs)):
                for m, d, w in terms:
                    t = len(t_row)
                    t_row.append(r); t_kind.append(kind); t_w.append(w); i_off.append(d)
                    for i, c in m.items():
                        i_rows.append(t); i_cols.append(i); i_vals.append(c)
        R, T = len(exprs), len(t_row)
        lin = sp.csr_matrix((vals, (rows, cols)), shape=(R, n))
        inner = sp.csr_matrix((i_vals, (i_rows, i_cols)), shape=(T, n))
        return cls(n, R, lin, const, t_row, t_kind, t_w, inner, i_off)

    @classmethod
    def stack(cls, blocks, n):
        blocks = [b for b in blocks if b.n_rows > 0]
        if not blocks:
            return cls.empty(n)
        offsets = np.cumsum([0] + [b.n_rows for b in blocks])
        return cls(
            n, int(offsets[-1]),
            sp.vstack([b.lin for b in blocks], format="csr"),
            np.concatenate([b.const for b in blocks]),
            np.concatenate([b.term_row + o for b, o in zip(blocks, offsets)]),
            np.concatenate([b.term_kind for b in blocks]),
            np.concatenate([b.term_weight for b in blocks]),
            sp.vstack([b.inner for b in blocks], format="csr"),
            np.concatenate([b.inner_off for b in blocks]),
        )

    def to_exprs(self):
        out = [ConvexExpr(const=float(c)) for c in self.const]
        lin = self.lin.tocoo()
        for r, i, v in zip(lin.row, lin.col, lin.data):
            out[r].affine[int(i)] = out[r].affine.get(int(i), 0.0) + float(v)
        inner = self.inner.tocsr()
        for t in range(self.term_row.size):
            sl = slice(inner.indptr[t], inner.indptr[t + 1])
            m = dict(zip(inner.indices[sl].tolist(), inner.data[sl].tolist()))
            entry = (m, float(self.inner_off[t]), float(self.term_weight[t]))
            target = {QUAD: "quads", RECIP: "recips", NEGLOG: "neglogs"}[int(self.term_kind[t])]
            getattr(out[self.term_row[t]], target).append(entry)
        return out

    # -- evaluation --------------------------------------------------------

    def inner_values(self, x):
        return self.inner @ x + self.inner_off

    def in_domain(self, x, z=None):
        z = self.inner_values(x) if z is None else z
        return bool(np.all(z[self._domain] > 0))

    def value(self, x):
        z = self.inner_values(x)
        if not self.in_domain(x, z):
            return np.full(self.n_rows, np.inf)
        val, _, _ = _phi(self.term_kind, z)
        return self.lin @ x + self.const + self._scatter @ (self.term_weight * val)

    def derivatives(self, x):
        """Values, sparse Jacobian and per-term curvature ``w * phi''``."""
        z = self.inner_values(x)
        val, d1, d2 = _phi(self.term_kind, z)
        g = self.lin @ x + self.const + self._scatter @ (self.term_weight * val)
        J = self.lin + self._scatter @ sp.diags(self.term_weight * d1) @ self.inner
        return g, sp.csr_matrix(J), self.term_weight * d2

    def weighted_hessian(self, curv, row_weights):
        """``sum_r row_weights[r] * hess(row r)`` as a sparse matrix."""
        s = curv * row_weights[self.term_row]
        return self.inner.T @ sp.diags(s) @ self.inner


class SpecBuilder:
    """Incremental, vectorized construction of a :class:`SubproblemSpec`.

    Variables are allocated in named blocks; constraint families are added as
    arrays of index/coefficient pairs so one call emits many rows.
    """

    def __init__(self):
        self.n = 0
        self.blocks = {}
        self._lo = []
        self._hi = []
        self._rows = []
        self._obj = []
        self._eq = []
        self.family_rows = {}

    def var(self, name, shape=(), lo=-np.inf, hi=np.inf):
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        size = int(np.prod(shape)) if shape else 1
        idx = np.arange(self.n, self.n + size).reshape(shape) if shape else np.int64(self.n)
        self.n += size
        self._lo.append(np.broadcast_to(np.asarray(lo, dtype=float), shape).ravel().copy())
        self._hi.append(np.broadcast_to(np.asarray(hi, dtype=float), shape).ravel().copy())
        self.blocks[name] = idx
        return idx

    @staticmethod
    def _pairs(pairs, R):
        """Normalize ``(idx, coef)`` pairs to ``(R, p)`` arrays.

        ``idx`` is a scalar, ``(R,)`` or ``(R, p)``; ``coef`` is a scalar, a
        per-row ``(R,)`` vector, ``(1, p)`` per column or ``(R, p)``.
        """
        idx_list, coef_list = [], []
        for idx, coef in pairs:
            idx = np.asarray(idx, dtype=np.int64)
            if idx.ndim == 0:
                idx = np.full((R, 1), idx)
            elif idx.ndim == 1:
                if idx.size != R:
                    raise ValueError("1-D index arrays must have one entry per row")
                idx = idx[:, None]
            coef = np.asarray(coef, dtype=float)
            if coef.ndim == 1:
                coef = coef[:, None]
            idx_list.append(idx)
            coef_list.append(np.broadcast_to(coef, idx.shape))
        if not idx_list:
            return np.zeros((R, 0), dtype=np.int64), np.zeros((R, 0))
        return np.concatenate(idx_list, axis=1), np.concatenate(coef_list, axis=1)

    def _family(self, R, lin, const, terms):
        lin_idx, lin_coef = self._pairs(lin, R)
        entry = {"R": R, "lin": (lin_idx, lin_coef),
                 "const": np.broadcast_to(np.asarray(const, dtype=float), (R,)).copy(), "terms": []}
        for kind, weight, inner, offset in terms:
            in_idx, in_coef = self._pairs(inner, R)
            entry["terms"].append((
                KIND_NAMES[kind] if isinstance(kind, str) else kind,
                np.broadcast_to(np.asarray(weight, dtype=float), (R,)).copy(),
                in_idx, in_coef,
                np.broadcast_to(np.asarray(offset, dtype=float), (R,)).copy(),
            ))
        return entry

    def ineq(self, name, R, lin=(), const=0.0, terms=()):
        """Add ``R`` rows ``const + lin.x + sum terms <= 0``.

        ``lin`` is a sequence of ``(idx, coef)`` with ``idx`` of shape ``(R,)``
        or ``(R, p)``; ``terms`` is a sequence of ``(kind, weight, inner, offset)``
        where ``inner`` has the same form as ``lin``.
        """
        start = sum(f["R"] for f in self._rows)
        self._rows.append(self._family(R, lin, const, terms))
        self.family_rows[name] = np.arange(start, start + R)

    def objective(self, lin=(), const=0.0, terms=()):
        """Add summands to the single-row objective.

        ``lin`` pairs may have any shape (index and coefficient arrays of equal
        or broadcastable shape, summed over); ``terms`` follow :meth:`ineq`
        with ``R`` inferred from the first inner index array.
        """
        flat = []
        for idx, coef in lin:
            idx = np.asarray(idx, dtype=np.int64)
            coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
            flat.append((idx.reshape(1, -1), coef.reshape(1, -1)))
        self._obj.append(self._family(1, flat, float(np.sum(const)), []))
        for kind, weight, inner, offset in terms:
            first = np.asarray(inner[0][0])
            R = first.shape[0] if first.ndim else 1
            self._obj.append(self._family(R, (), 0.0, [(kind, weight, inner, offset)]))

    def eq(self, name, R, lin, rhs):
        """Add ``R`` affine equalities ``lin.x == rhs``."""
        self._eq.append(self._family(R, lin, -np.asarray(rhs, dtype=float), []))

    def _assemble(self, families, n_rows, collapse=False):
        rows, cols, vals, const = [], [], [], np.zeros(n_rows)
        t_row, t_kind, t_w, i_r, i_c, i_v, i_off = [], [], [], [], [], [], []
        base = 0
        T = 0
        for fam in families:
            R = fam["R"]
            target = np.zeros(R, dtype=np.int64) if collapse else np.arange(base, base + R)
            idx, coef = fam["lin"]
            if idx.size:
                rows.append(np.repeat(target, idx.shape[1])); cols.append(idx.ravel()); vals.append(coef.ravel())
            np.add.at(const, target, fam["const"])
            for kind, w, in_idx, in_coef, off in fam["terms"]:
                t_ids = np.arange(T, T + R)
                t_row.append(target); t_kind.append(np.full(R, kind)); t_w.append(w); i_off.append(off)
                i_r.append(np.repeat(t_ids, in_idx.shape[1])); i_c.append(in_idx.ravel()); i_v.append(in_coef.ravel())
                T += R
            if not collapse:
                base += R
        cat = lambda xs, dt=float: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
        lin = sp.csr_matrix((cat(vals), (cat(rows, np.int64), cat(cols, np.int64))), shape=(n_rows, self.n))
        inner = sp.csr_matrix((cat(i_v), (cat(i_r, np.int64), cat(i_c, np.int64))), shape=(T, self.n))
        return ExprBlock(self.n, n_rows, lin, const, cat(t_row, np.int64), cat(t_kind, np.int8),
                         cat(t_w), inner, cat(i_off))

    def build(self):
        lo = np.concatenate(self._lo) if self._lo else np.zeros(0)
        hi = np.concatenate(self._hi) if self._hi else np.zeros(0)
        m = sum(f["R"] for f in self._rows)
        ineqs = self._assemble(self._rows, m)
        objective = self._assemble(self._obj, 1, collapse=True)
        p = sum(f["R"] for f in self._eq)
        eq_block = self._assemble(self._eq, p)
        spec = SubproblemSpec(self.n, objective, ineqs, eq_block.lin, -eq_block.const, lo, hi)
        spec.var_blocks = dict(self.blocks)
        spec.family_rows = dict(self.family_rows)
        return spec


class SubproblemSpec:
    """``min objective(x)`` s.t. ``ineqs(x) <= 0``, ``A x = b``, ``lo <= x <= hi``."""

    def __init__(self, n_vars, objective, ineqs=None, eq_A=None, eq_b=None, lo=None, hi=None):
        self.n_vars = int(n_vars)
        n = self.n_vars
        if isinstance(objective, ConvexExpr):
            objective = objective.to_block(n)
        if ineqs is None:
            ineqs = ExprBlock.empty(n)
        elif not isinstance(ineqs, ExprBlock):
            ineqs = ExprBlock.from_exprs(list(ineqs), n)
        self.objective = objective
        self.ineqs = ineqs
        self.eq_A = sp.csr_matrix((0, n)) if eq_A is None else sp.csr_matrix(eq_A, shape=(np.shape(eq_A)[0], n))
        self.eq_b = np.zeros(0) if eq_b is None else np.asarray(eq_b, dtype=float).ravel()
        self.lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float).copy()
        self.hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float).copy()
        self.var_blocks = {}
        self.family_rows = {}
        if self.objective.n_rows != 1:
            raise ValueError("objective must be a single expression")
        if np.any(self.lo > self.hi):
            raise ValueError("empty variable box")

    @property
    def n_ineqs(self):
        return self.ineqs.n_rows

    @property
    def n_eqs(self):
        return self.eq_A.shape[0]

    def objective_value(self, x):
        return float(self.objective.value(x)[0])

    def residuals(self, x):
        """(max inequality violation incl. box, max |Ax - b|)."""
        g = self.ineqs.value(x) if self.n_ineqs else np.zeros(0)
        box = np.concatenate([self.lo - x, x - self.hi])
        ineq = max(float(np.max(g, initial=-np.inf)), float(np.max(box, initial=-np.inf)), 0.0)
        eq = float(np.max(np.abs(self.eq_A @ x - self.eq_b), initial=0.0))
        return ineq, eq

    def counts(self):
        """Number of affine rows and rows with curved terms (reporting only)."""
        curved = np.zeros(self.n_ineqs, dtype=bool)
        curved[self.ineqs.term_row] = True
        return {"variables": self.n_vars, "linear": int((~curved).sum()) + self.n_eqs,
                "nonlinear": int(curved.sum()), "equalities": self.n_eqs}

    def dump(self, path_or_file):
        """Write a plain-text listing, one term per line."""
        close = False
        fh = path_or_file
        if not hasattr(fh, "write"):
            fh = open(path_or_file, "w")
            close = True
        try:
            fh.write(f"n_vars {self.n_vars}\n")
            for i in range(self.n_vars):
                fh.write(f"bound x{i} {float(self.lo[i])!r} {float(self.hi[i])!r}\n")
            fh.write("objective\n")
            fh.write(str(self.objective.to_exprs()[0]) + "\n")
            for r, e in enumerate(self.ineqs.to_exprs()):
                fh.write(f"ineq {r}\n{e}\n")
            A = self.eq_A.tocsr()
            for r in range(self.n_eqs):
                sl = slice(A.indptr[r], A.indptr[r + 1])
                terms = " ".join(f"x{i}:{float(v)!r}" for i, v in zip(A.indices[sl], A.data[sl]))
                fh.write(f"eq {r} rhs={float(self.eq_b[r])!r} {terms}\n")
        finally:
            if close:
                fh.close()
