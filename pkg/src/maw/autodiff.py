"""Reverse-mode automatic differentiation over the op set the model needs.

A Tape records nodes in topological (insertion) order; each node stores its
value, a zero-initialized adjoint of the same shape, and vjp closures that
push its adjoint into its parents.  One backward pass per forward build;
reset() re-arms a tape.  Sampling noise enters as constant leaves so the
reparameterized gradients flow only into distribution parameters.

Batched variants (batch_diag_sandwich, batch_sym_eig, batch_recompose,
mixture_sample) operate on row-stacked blocks: a batch of L dxd matrices is
stored as an (L*d) x d matrix.  They exist so one tape node covers a whole
minibatch instead of L python-level nodes.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import DomainError, ShapeError

EIG_GAP_CLAMP = 1e-6
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Node:
    __slots__ = ("value", "adjoint", "parents", "needs_grad", "tag")

    def __init__(self, value, parents=(), needs_grad=False, tag=""):
        self.value = value
        self.adjoint = np.zeros_like(value)
        self.parents = parents
        self.needs_grad = needs_grad
        self.tag = tag


class Tape:
    """Append-only DAG of Node records; single backward pass per build."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self._consumed = False

    # -- leaves ------------------------------------------------------------

    def param(self, value, name: str) -> Node:
        if name in self.params:
            raise DomainError(f"duplicate parameter name on tape: {name}")
        node = self._make(np.asarray(value, dtype=np.float64), (), True, "param")
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return self._make(np.asarray(value, dtype=np.float64), (), False, "const")

    def _make(self, value, parents, needs_grad, tag):
        node = Node(value, parents, needs_grad, tag)
        self.nodes.append(node)
        return node

    def _as_node(self, x) -> Node:
        return x if isinstance(x, Node) else self.const(x)

    def _record(self, value, parent_vjps, tag=""):
        kept = tuple((p, vjp) for p, vjp in parent_vjps if p.needs_grad)
        return self._make(np.asarray(value, dtype=np.float64), kept, bool(kept), tag)

    # -- backward ----------------------------------------------------------

    def backward(self, root: Node) -> dict[str, np.ndarray]:
        """Seed d(root)/d(root)=1 and accumulate adjoints in reverse order.

        Returns a map from parameter name to adjoint; parameters never
        reached by the sweep keep their zero adjoint.
        """
        if self._consumed:
            raise DomainError("tape already ran backward; call reset() to reuse")
        if root.value.ndim != 0:
            raise DomainError("backward root must be a scalar node")
        self._consumed = True
        root.adjoint = root.adjoint + 1.0
        for node in reversed(self.nodes):
            if not node.parents:
                continue
            a = node.adjoint
            for parent, vjp in node.parents:
                parent.adjoint = parent.adjoint + vjp(a)
        return {name: n.adjoint.copy() for name, n in self.params.items()}

    def reset(self):
        for node in self.nodes:
            node.adjoint = np.zeros_like(node.value)
        self._consumed = False

    # -- elementwise / arithmetic -------------------------------------------

    def add(self, a, b) -> Node:
        a, b = self._as_node(a), self._as_node(b)
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
        return self._record(
            a.value + b.value,
            [(a, lambda g: g), (b, lambda g: g)],
            "add",
        )

    def scale(self, x, c: float) -> Node:
        x = self._as_node(x)
        c = float(c)
        return self._record(c * x.value, [(x, lambda g: c * g)], "scale")

    def hadamard(self, x, y) -> Node:
        """Elementwise product; y may be a broadcastable constant."""
        x, y = self._as_node(x), self._as_node(y)
        out = x.value * y.value
        if out.shape != x.value.shape and out.shape != y.value.shape:
            raise ShapeError("hadamard operands do not broadcast to an operand shape")
        xv, yv = x.value, y.value

        def vjp_x(g):
            r = g * yv
            return r if r.shape == xv.shape else _unbroadcast(r, xv.shape)

        def vjp_y(g):
            r = g * xv
            return r if r.shape == yv.shape else _unbroadcast(r, yv.shape)

        return self._record(out, [(x, vjp_x), (y, vjp_y)], "hadamard")

    def exp(self, x) -> Node:
        x = self._as_node(x)
        out = np.exp(x.value)
        return self._record(out, [(x, lambda g: g * out)], "exp")

    def relu(self, x) -> Node:
        x = self._as_node(x)
        mask = x.value > 0.0
        return self._record(
            np.where(mask, x.value, 0.0), [(x, lambda g: g * mask)], "relu"
        )

    def leaky_relu(self, x, alpha: float = 0.2) -> Node:
        x = self._as_node(x)
        slope = np.where(x.value > 0.0, 1.0, alpha)
        return self._record(x.value * slope, [(x, lambda g: g * slope)], "leaky_relu")

    def softplus(self, x) -> Node:
        x = self._as_node(x)
        v = x.value
        out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
        sig = 1.0 / (1.0 + np.exp(-v))
        return self._record(out, [(x, lambda g: g * sig)], "softplus")

    def mean_all(self, x) -> Node:
        x = self._as_node(x)
        size = x.value.size
        return self._record(
            np.asarray(x.value.mean()),
            [(x, lambda g: np.full_like(x.value, float(g) / size))],
            "mean_all",
        )

    def sum_all(self, x) -> Node:
        x = self._as_node(x)
        return self._record(
            np.asarray(x.value.sum()),
            [(x, lambda g: np.full_like(x.value, float(g)))],
            "sum_all",
        )

    def pick(self, x, index: int) -> Node:
        x = self._as_node(x)
        if x.value.ndim != 1:
            raise ShapeError("pick expects a vector")

        def vjp(g):
            out = np.zeros_like(x.value)
            out[index] = float(g)
            return out

        return self._record(np.asarray(x.value[index]), [(x, vjp)], "pick")

    # -- linear maps ---------------------------------------------------------

    def affine(self, x, w, b) -> Node:
        """x @ W + b for a batch matrix (L,n) or a single vector (n,)."""
        x, w, b = self._as_node(x), self._as_node(w), self._as_node(b)
        xv, wv, bv = x.value, w.value, b.value
        if wv.ndim != 2 or xv.shape[-1] != wv.shape[0] or bv.shape != (wv.shape[1],):
            raise ShapeError(
                f"affine shapes x{xv.shape} W{wv.shape} b{bv.shape} incompatible"
            )
        out = xv @ wv + bv

        def vjp_x(g):
            return g @ wv.T

        def vjp_w(g):
            if xv.ndim == 1:
                return np.outer(xv, g)
            return xv.T @ g

        def vjp_b(g):
            return g if g.ndim == 1 else g.sum(axis=0)

        return self._record(out, [(x, vjp_x), (w, vjp_w), (b, vjp_b)], "affine")

    def matmul(self, a, b) -> Node:
        a, b = self._as_node(a), self._as_node(b)
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul shapes {av.shape} x {bv.shape} do not chain")
        return self._record(
            av @ bv,
            [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
            "matmul",
        )

    def gather_rows(self, x, idx) -> Node:
        """Row gather X[idx]; backward scatter-adds."""
        x = self._as_node(x)
        idx = np.asarray(idx, dtype=np.intp)

        def vjp(g):
            out = np.zeros_like(x.value)
            np.add.at(out, idx, g)
            return out

        return self._record(x.value[idx], [(x, vjp)], "gather_rows")

    def col_block(self, x, start: int, stop: int) -> Node:
        x = self._as_node(x)
        if x.value.ndim != 2:
            raise ShapeError("col_block expects a matrix")

        def vjp(g):
            out = np.zeros_like(x.value)
            out[:, start:stop] = g
            return out

        return self._record(x.value[:, start:stop], [(x, vjp)], "col_block")

    # -- norms and normalization ----------------------------------------------

    def l2norm_of_diff(self, x, y) -> Node:
        x, y = self._as_node(x), self._as_node(y)
        if x.value.shape != y.value.shape:
            raise ShapeError("l2norm_of_diff operands must share a shape")
        diff = x.value - y.value
        norm = float(np.linalg.norm(diff))
        unit = diff / norm if norm > 0.0 else np.zeros_like(diff)
        return self._record(
            np.asarray(norm),
            [(x, lambda g: float(g) * unit), (y, lambda g: -float(g) * unit)],
            "l2norm_of_diff",
        )

    def sqnorm_of_diff(self, x, y) -> Node:
        x, y = self._as_node(x), self._as_node(y)
        if x.value.shape != y.value.shape:
            raise ShapeError("sqnorm_of_diff operands must share a shape")
        diff = x.value - y.value
        return self._record(
            np.asarray(float(np.sum(diff * diff))),
            [(x, lambda g: 2.0 * float(g) * diff), (y, lambda g: -2.0 * float(g) * diff)],
            "sqnorm_of_diff",
        )

    def mean_rowwise_norm_diff(self, a, b, squared: bool = False) -> Node:
        """Mean over rows of ||a_r - b_r||_2 (or its square)."""
        a, b = self._as_node(a), self._as_node(b)
        if a.value.shape != b.value.shape or a.value.ndim != 2:
            raise ShapeError("mean_rowwise_norm_diff expects two equal-shape matrices")
        diff = a.value - b.value
        norms = np.linalg.norm(diff, axis=1)
        nrows = diff.shape[0]
        if squared:
            out = float(np.mean(norms**2))

            def base(g):
                return (2.0 * float(g) / nrows) * diff

        else:
            out = float(np.mean(norms))
            safe = np.where(norms > 0.0, norms, 1.0)
            unit = np.where(norms[:, None] > 0.0, diff / safe[:, None], 0.0)

            def base(g):
                return (float(g) / nrows) * unit

        return self._record(
            np.asarray(out),
            [(a, base), (b, lambda g: -base(g))],
            "mean_rowwise_norm_diff",
        )

    def unit_normalize(self, x) -> Node:
        """x / ||x||_2 for a vector; the zero vector maps to itself."""
        x = self._as_node(x)
        if x.value.ndim != 1:
            raise ShapeError("unit_normalize expects a vector")
        norm = float(np.linalg.norm(x.value))
        if norm == 0.0:
            return self._record(
                np.zeros_like(x.value),
                [(x, lambda g: np.zeros_like(x.value))],
                "unit_normalize",
            )
        y = x.value / norm

        def vjp(g):
            return (g - y * float(y @ g)) / norm

        return self._record(y, [(x, vjp)], "unit_normalize")

    def normalize_rows(self, x) -> Node:
        """Unit-normalize each row of a matrix; zero rows stay zero."""
        x = self._as_node(x)
        if x.value.ndim != 2:
            raise ShapeError("normalize_rows expects a matrix")
        norms = np.linalg.norm(x.value, axis=1)
        safe = np.where(norms > 0.0, norms, 1.0)
        y = np.where(norms[:, None] > 0.0, x.value / safe[:, None], 0.0)

        def vjp(g):
            dots = np.sum(y * g, axis=1, keepdims=True)
            return np.where(norms[:, None] > 0.0, (g - y * dots) / safe[:, None], 0.0)

        return self._record(y, [(x, vjp)], "normalize_rows")

    # -- batch normalization ----------------------------------------------------

    def batch_norm(self, x, gamma, beta, running_mean, running_var, train: bool) -> Node:
        """Per-feature batch normalization.

        Train mode requires a batch of >= 2 rows, uses batch statistics and
        updates the running arrays in place (momentum 0.9, biased variance).
        Eval mode standardizes with the running statistics and accepts a
        single vector or a matrix.
        """
        x, gamma, beta = self._as_node(x), self._as_node(gamma), self._as_node(beta)
        xv = x.value
        if train:
            if xv.ndim != 2 or xv.shape[0] < 2:
                raise DomainError("batch_norm in train mode needs a batch of >= 2")
            mean = xv.mean(axis=0)
            var = xv.var(axis=0)
            running_mean *= BN_MOMENTUM
            running_mean += (1.0 - BN_MOMENTUM) * mean
            running_var *= BN_MOMENTUM
            running_var += (1.0 - BN_MOMENTUM) * var
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (xv - mean) * inv
            out = gamma.value * xhat + beta.value
            gv = gamma.value

            def vjp_x(g):
                dxhat = g * gv
                return inv * (
                    dxhat
                    - dxhat.mean(axis=0)
                    - xhat * np.mean(dxhat * xhat, axis=0)
                )

        else:
            inv = 1.0 / np.sqrt(running_var + BN_EPS)
            xhat = (xv - running_mean) * inv
            out = gamma.value * xhat + beta.value
            gv = gamma.value

            def vjp_x(g):
                return g * gv * inv

        def vjp_gamma(g):
            r = g * xhat
            return r if r.ndim == 1 else r.sum(axis=0)

        def vjp_beta(g):
            return g if g.ndim == 1 else g.sum(axis=0)

        return self._record(
            out, [(x, vjp_x), (gamma, vjp_gamma), (beta, vjp_beta)], "batch_norm"
        )

    # -- quadratic forms and spectra ------------------------------------------

    def diag_sandwich(self, a, s) -> Node:
        """A^T diag(s) A for one weight vector s."""
        a, s = self._as_node(a), self._as_node(s)
        av, sv = a.value, s.value
        if av.ndim != 2 or sv.ndim != 1 or av.shape[0] != sv.shape[0]:
            raise ShapeError(f"diag_sandwich shapes A{av.shape} s{sv.shape} incompatible")
        out = av.T @ (sv[:, None] * av)

        def vjp_a(g):
            return sv[:, None] * (av @ (g + g.T))

        def vjp_s(g):
            return np.sum((av @ g.T) * av, axis=1)

        return self._record(out, [(a, vjp_a), (s, vjp_s)], "diag_sandwich")

    def batch_diag_sandwich(self, a, s_rows) -> Node:
        """Blocks M_l = A^T diag(S[l]) A stacked into an (L*d, d) matrix."""
        a, s_rows = self._as_node(a), self._as_node(s_rows)
        av, sv = a.value, s_rows.value
        if av.ndim != 2 or sv.ndim != 2 or sv.shape[1] != av.shape[0]:
            raise ShapeError(
                f"batch_diag_sandwich shapes A{av.shape} S{sv.shape} incompatible"
            )
        nblocks, d = sv.shape[0], av.shape[1]
        blocks = np.einsum("pk,lp,pq->lkq", av, sv, av)

        def vjp_a(g):
            g3 = g.reshape(nblocks, d, d)
            sym = g3 + np.transpose(g3, (0, 2, 1))
            return np.einsum("lp,pk,lkq->pq", sv, av, sym)

        def vjp_s(g):
            g3 = g.reshape(nblocks, d, d)
            return np.einsum("pk,lqk,pq->lp", av, g3, av)

        return self._record(
            blocks.reshape(nblocks * d, d), [(a, vjp_a), (s_rows, vjp_s)], "batch_diag_sandwich"
        )

    def sym_eig_diff(self, m) -> tuple[Node, Node]:
        """Differentiable symmetric eigendecomposition (single matrix).

        Returns (eigenvalues, eigenvectors) nodes; eigenvalues descending.
        Off-diagonal inverse-gap factors are clamped at 1e-6 so the backward
        map stays finite through degenerate spectra.
        """
        m = self._as_node(m)
        eig = linalg.sym_eig(m.value)
        w, u = eig.eigenvalues, eig.eigenvectors

        def vjp_w(g):
            out = (u * g) @ u.T
            return 0.5 * (out + out.T)

        def vjp_u(g):
            f = _clamped_inverse_gaps(w)
            out = u @ (f * (u.T @ g)) @ u.T
            return 0.5 * (out + out.T)

        w_node = self._record(w, [(m, vjp_w)], "sym_eig_w")
        u_node = self._record(u, [(m, vjp_u)], "sym_eig_u")
        return w_node, u_node

    def batch_sym_eig(self, mblocks, d: int) -> tuple[Node, Node]:
        """Eigendecompose a stack of d x d symmetric blocks.

        mblocks is (L*d, d); returns eigenvalue rows (L, d) and eigenvector
        blocks (L*d, d), with the same clamped backward as sym_eig_diff.
        """
        mblocks = self._as_node(mblocks)
        mv = mblocks.value
        if mv.ndim != 2 or mv.shape[1] != d or mv.shape[0] % d != 0:
            raise ShapeError(f"batch_sym_eig got shape {mv.shape} for block size {d}")
        nblocks = mv.shape[0] // d
        m3 = mv.reshape(nblocks, d, d)
        if d == 2:
            ws, us = linalg.sym_eig_2x2_batch(m3)
        else:
            ws = np.empty((nblocks, d))
            us = np.empty((nblocks, d, d))
            for l in range(nblocks):
                eig = linalg.sym_eig(m3[l])
                ws[l] = eig.eigenvalues
                us[l] = eig.eigenvectors

        def vjp_w(g):
            out = np.einsum("lik,lk,ljk->lij", us, g, us)
            out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
            return out.reshape(nblocks * d, d)

        def vjp_u(g):
            g3 = g.reshape(nblocks, d, d)
            f = _clamped_inverse_gaps_batch(ws)
            s = np.einsum("lki,lkj->lij", us, g3)
            out = np.einsum("lik,lkm,ljm->lij", us, f * s, us)
            out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
            return out.reshape(nblocks * d, d)

        w_node = self._record(ws, [(mblocks, vjp_w)], "batch_sym_eig_w")
        u_node = self._record(
            us.reshape(nblocks * d, d), [(mblocks, vjp_u)], "batch_sym_eig_u"
        )
        return w_node, u_node

    def batch_recompose(self, ublocks, w_rows) -> Node:
        """Blocks U_l diag(w_l) U_l^T from eigenvector blocks and value rows."""
        ublocks, w_rows = self._as_node(ublocks), self._as_node(w_rows)
        uv, wv = ublocks.value, w_rows.value
        if wv.ndim != 2 or uv.shape != (wv.shape[0] * wv.shape[1], wv.shape[1]):
            raise ShapeError(
                f"batch_recompose shapes U{uv.shape} w{wv.shape} incompatible"
            )
        nblocks, d = wv.shape
        u3 = uv.reshape(nblocks, d, d)
        out = np.einsum("lik,lk,ljk->lij", u3, wv, u3)

        def vjp_u(g):
            g3 = g.reshape(nblocks, d, d)
            sym = g3 + np.transpose(g3, (0, 2, 1))
            return (np.einsum("lij,ljk,lk->lik", sym, u3, wv)).reshape(nblocks * d, d)

        def vjp_w(g):
            g3 = g.reshape(nblocks, d, d)
            return np.einsum("lik,lij,ljk->lk", u3, g3, u3)

        return self._record(
            out.reshape(nblocks * d, d), [(ublocks, vjp_u), (w_rows, vjp_w)], "batch_recompose"
        )

    def rows_to_diag_blocks(self, s_rows) -> Node:
        """Embed each row of S as a diagonal d x d block, stacked (L*d, d)."""
        s_rows = self._as_node(s_rows)
        sv = s_rows.value
        if sv.ndim != 2:
            raise ShapeError("rows_to_diag_blocks expects a matrix of diagonal rows")
        nblocks, d = sv.shape
        out = np.zeros((nblocks, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = sv

        def vjp(g):
            return g.reshape(nblocks, d, d)[:, idx, idx]

        return self._record(out.reshape(nblocks * d, d), [(s_rows, vjp)], "rows_to_diag_blocks")

    def mixture_sample(self, mu1, mu2, m1blocks, m2blocks, labels, point_idx, eps1, eps2) -> Node:
        """Reparameterized mixture draws z_k = mu_j[i] + M_j[i] eps1_k + eps2_k.

        labels (values in {1, 2}) pick the mode per draw, point_idx maps each
        draw to its batch row; eps1/eps2 are fixed standard-normal constants so
        the covariance of each mode is exactly M M^T + I.
        """
        mu1, mu2 = self._as_node(mu1), self._as_node(mu2)
        m1blocks, m2blocks = self._as_node(m1blocks), self._as_node(m2blocks)
        labels = np.asarray(labels, dtype=np.intp)
        point_idx = np.asarray(point_idx, dtype=np.intp)
        eps1 = np.asarray(eps1, dtype=np.float64)
        eps2 = np.asarray(eps2, dtype=np.float64)
        nrows, d = mu1.value.shape
        ndraws = labels.shape[0]
        if point_idx.shape != (ndraws,) or eps1.shape != (ndraws, d) or eps2.shape != (ndraws, d):
            raise ShapeError("mixture_sample draw arrays are inconsistent")
        m1 = m1blocks.value.reshape(nrows, d, d)
        m2 = m2blocks.value.reshape(nrows, d, d)
        pick1 = labels == 1
        msel = np.where(pick1[:, None, None], m1[point_idx], m2[point_idx])
        musel = np.where(pick1[:, None], mu1.value[point_idx], mu2.value[point_idx])
        out = musel + np.einsum("kde,ke->kd", msel, eps1) + eps2

        def vjp_mu(g, mask, ref):
            acc = np.zeros_like(ref)
            np.add.at(acc, point_idx[mask], g[mask])
            return acc

        def vjp_m(g, mask, ref3):
            acc = np.zeros_like(ref3)
            np.add.at(acc, point_idx[mask], g[mask, :, None] * eps1[mask, None, :])
            return acc.reshape(nrows * d, d)

        return self._record(
            out,
            [
                (mu1, lambda g: vjp_mu(g, pick1, mu1.value)),
                (mu2, lambda g: vjp_mu(g, ~pick1, mu2.value)),
                (m1blocks, lambda g: vjp_m(g, pick1, m1)),
                (m2blocks, lambda g: vjp_m(g, ~pick1, m2)),
            ],
            "mixture_sample",
        )

    def vae_kl_diag(self, mu_rows, logvar_rows) -> Node:
        """Batch-mean KL(N(mu, diag(e^logvar)) || N(0, I)) for row-wise params."""
        mu_rows, logvar_rows = self._as_node(mu_rows), self._as_node(logvar_rows)
        mv, lv = mu_rows.value, logvar_rows.value
        if mv.shape != lv.shape or mv.ndim != 2:
            raise ShapeError("vae_kl_diag expects matching (L, d) matrices")
        nrows = mv.shape[0]
        var = np.exp(lv)
        kl = 0.5 * float(np.sum(mv * mv + var - lv - 1.0)) / nrows
        return self._record(
            np.asarray(kl),
            [
                (mu_rows, lambda g: (float(g) / nrows) * mv),
                (logvar_rows, lambda g: (0.5 * float(g) / nrows) * (var - 1.0)),
            ],
            "vae_kl_diag",
        )


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _clamped_inverse_gaps(w: np.ndarray) -> np.ndarray:
    """F[i, j] = 1 / (w_j - w_i) with the gap clamped away from zero.

    Gap magnitudes below 1e-6 are clamped; the sign of an exactly tied gap
    follows the descending sort order so the result is deterministic.
    The diagonal is zero.
    """
    return _clamped_inverse_gaps_batch(w[None, :])[0]


def _clamped_inverse_gaps_batch(ws: np.ndarray) -> np.ndarray:
    d = ws.shape[1]
    gaps = ws[:, None, :] - ws[:, :, None]
    idx = np.arange(d)
    tie_sign = np.sign(idx[:, None] - idx[None, :]).astype(np.float64)
    signs = np.where(gaps > 0.0, 1.0, np.where(gaps < 0.0, -1.0, tie_sign))
    clamped = signs * np.maximum(np.abs(gaps), EIG_GAP_CLAMP)
    f = np.zeros_like(gaps)
    off = ~np.eye(d, dtype=bool)
    f[:, off] = 1.0 / clamped[:, off]
    return f
