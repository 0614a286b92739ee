"""Exact adapter gradients via the dense quadratic-cost pipeline.

This path materializes the L x L intermediates on purpose: it is the
reference whose cost grows as Theta(L^2) and against which the factored path
is compared. The five stages are

    f = rownorm(exp(C1 @ W @ C2.T))           attention matrix
    c = f @ C3 - Y                            residual
    q = C3 @ c.T                              score matrix (columns <-> rows)
    p = p1 - p2, column j: f_j*q_j - f_j<f_j, q_j>   softmax-Jacobian action
    dL/dW = C1.T @ p.T @ C2                   weight gradient

with the adapter gradients read off as dL/dA = B.T @ dL/dW and
dL/dB = dL/dW @ A.T. The p matrices store column j against softmax row j,
so the matrix sandwiched between C1.T and C2 is p.T, whose row j is p_j.

The key-side gradients of the general problem evaluate the same pipeline at
the transposed key weight and route the resulting d^2 gradient vector
through the vec-transpose permutation before projecting onto the adapter.
"""

from dataclasses import dataclass

import numpy as np

from . import instrument
from .attention import (
    AttentionInstance,
    adapted_weight,
    check_dense_guard,
    compose_general_constants,
    forward_f,
    general_scores,
    q_from_c,
    residual_from_f,
    softmax_rows,
)
from .errors import DimensionError, SizeGuardError
from .tensorops import kronecker, matrixize, transpose_perm, vectorize

# jacobian_blocks builds d^2 x rd dense matrices; keep it to small d.
JACOBIAN_GUARD_D = 6


@dataclass(frozen=True)
class PMatrices:
    """The split softmax-Jacobian scores, all L x L, column j per row j of f.

    p1[:, j] = f_j * q_j, p2[:, j] = f_j * <f_j, q_j>, p = p1 - p2.
    """

    p1: np.ndarray
    p2: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class GradientPair:
    """Adapter gradients dL/dA (r x d) and dL/dB (d x r)."""

    GA: np.ndarray
    GB: np.ndarray


def split_p(f, q):
    """Split Jacobian scores from a given attention matrix and score matrix.

    Column j of p is (diag(f_j) - f_j f_j^T) q_j where f_j is softmax row j
    of f and q_j is column j of q. Each column costs O(L): the diagonal part
    is the Hadamard product f_j * q_j and the outer-product part collapses to
    f_j scaled by <f_j, q_j>.
    """
    f = np.asarray(f)
    q = np.asarray(q)
    if f.shape != q.shape or f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise DimensionError(
            f"f and q must be equal square matrices, got {f.shape} and {q.shape}"
        )
    check_dense_guard(f.shape[0])
    ft = f.T
    p1 = ft * q
    # r_j = <f_j, q_j> reduces p2 to a column scaling of f^T.
    r = np.einsum("lj,lj->j", ft, q)
    p2 = ft * r[np.newaxis, :]
    p = p1 - p2
    instrument.count(4 * f.size)
    instrument.alloc(p1.size)
    instrument.alloc(p2.size)
    instrument.alloc(p.size)
    return PMatrices(p1=p1, p2=p2, p=p)


def compute_p(inst, W):
    """PMatrices of the instance at weight W (forward pass included)."""
    f = forward_f(inst, W)
    c = residual_from_f(f, inst)
    q = q_from_c(c, inst)
    return split_p(f, q)


def grad_wrt_W(inst, W):
    """dL/dW as a d x d matrix, assembled as C1.T @ p.T @ C2."""
    pm = compute_p(inst, W)
    return _sandwich(inst.C1, pm.p.T, inst.C2)


def _sandwich(C1, g_rows, C2):
    """C1.T @ g_rows @ C2 staged as (C1.T @ g_rows) @ C2."""
    L, d = C1.shape
    left = C1.T @ g_rows
    out = left @ C2
    instrument.count_matmul(d, L, L)
    instrument.count_matmul(d, L, d)
    return out


def grad_adapters_special(inst, Wstar, adp):
    """Exact (dL/dA, dL/dB) for the query-side special case."""
    if adp.d != inst.d:
        raise DimensionError("adapter dimension does not match the instance")
    W = adapted_weight(Wstar, adp)
    M = grad_wrt_W(inst, W)
    instrument.count_matmul(adp.r, adp.d, adp.d)
    instrument.count_matmul(adp.d, adp.d, adp.r)
    return GradientPair(GA=adp.B.T @ M, GB=M @ adp.A.T)


def grad_adapters_general(g, adpQ, adpK):
    """Exact gradient pairs (Q-side, K-side) of the two-sided problem.

    One softmax-Jacobian computation serves both sides (the score matrix is
    shared); only the sandwich constants differ. The key side differentiates
    with respect to WK.T, so its d^2 gradient vector passes through the
    vec-transpose permutation before the adapter projections.
    """
    consts = compose_general_constants(g, adpQ, adpK)
    d = g.d
    check_dense_guard(g.L)
    S = general_scores(g, adpQ, adpK)
    f = softmax_rows(S)
    spec = AttentionInstance(C1=consts.CQ1, C2=consts.CQ2, C3=consts.C3, Y=g.Y)
    c = residual_from_f(f, spec)
    q = q_from_c(c, spec)
    pm = split_p(f, q)
    g_rows = pm.p.T

    NQ = _sandwich(consts.CQ1, g_rows, consts.CQ2)
    sQ = adpQ.scale
    pair_q = GradientPair(GA=sQ * (adpQ.B.T @ NQ), GB=sQ * (NQ @ adpQ.A.T))

    NK = _sandwich(consts.CK1, g_rows, consts.CK2)
    T = transpose_perm(d, d)
    dW_K = matrixize(T.apply(vectorize(NK)), d, d)
    pair_k = GradientPair(GA=adpK.B.T @ dW_K, GB=dW_K @ adpK.A.T)
    instrument.count_matmul(adpQ.r, d, d)
    instrument.count_matmul(d, d, adpQ.r)
    instrument.count_matmul(adpK.r, d, d)
    instrument.count_matmul(d, d, adpK.r)
    instrument.count(2 * d * d)
    return pair_q, pair_k


def jacobian_blocks(adp):
    """Dense Jacobians (J_B, J_A) of vec(W) in vec(A) and vec(B).

    Under row-major vec the exact identities are

        vec(Wbar + B @ A) = vec(Wbar) + J_B @ vec(A),  J_B = B kron I_d
        vec(Wbar + B @ A) = vec(Wbar) + J_A @ vec(B),  J_A = I_d kron A.T

    both of shape d^2 x rd. Test support only; guarded to small d.
    """
    d, r = adp.d, adp.r
    if d > JACOBIAN_GUARD_D:
        raise SizeGuardError(
            f"jacobian_blocks is test support, guarded to d <= {JACOBIAN_GUARD_D}; "
            f"got d = {d}"
        )
    eye = np.eye(d)
    J_B = kronecker(adp.B, eye)
    J_A = kronecker(eye, adp.A.T)
    return J_B, J_A
