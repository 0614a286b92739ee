"""Independent ground-truth routes for validating the gradient code.

Three families, all deliberately slow and simple:

* central finite differences of the loss (fd_grad and its wrappers),
* a literal per-column softmax-Jacobian build (dense_p_oracle) that
  materializes diag(f_j) and the outer product f_j f_j^T,
* the fully materialized Kronecker route (dense_kron_grad_oracle) that forms
  C1 kron C2 and the dense adapter Jacobians and works entirely on vecs.

Size guards hard-fail instead of truncating; these functions exist to settle
orientation and sign questions, not to run at scale.
"""

import numpy as np

from .attention import (
    LoraAdapter,
    adapted_weight,
    forward_f,
    general_loss,
    loss,
    q_from_c,
    residual_from_f,
)
from .errors import NonFiniteError, SizeGuardError
from .exact import GradientPair, PMatrices, compute_p, jacobian_blocks
from .tensorops import kronecker, matrixize, subblock

DENSE_P_GUARD_L = 64
KRON_GUARD_L = 8
KRON_GUARD_D = 3

FD_STEP = 1e-5


def fd_grad(fn, X, h=FD_STEP):
    """Central-difference gradient of a scalar function of a matrix.

    The step for entry (i, j) is h * max(1, |X[i, j]|), balancing truncation
    against round-off at double precision. Raises NonFiniteError if fn
    returns a non-finite value at any probe point.
    """
    X = np.asarray(X, dtype=np.float64)
    grad = np.empty_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for entry in it:
        idx = it.multi_index
        step = h * max(1.0, abs(float(entry)))
        probe = X.copy()
        probe[idx] = X[idx] + step
        hi = fn(probe)
        probe[idx] = X[idx] - step
        lo = fn(probe)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(
                f"loss is not finite at a finite-difference probe near index {idx}"
            )
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def fd_grad_W(inst, W, h=FD_STEP):
    """Finite-difference d x d gradient of loss(inst, .) at W."""
    return fd_grad(lambda Wp: loss(inst, Wp), W, h=h)


def _replace_factor(adp, which, value):
    if which == "A":
        return LoraAdapter(B=adp.B, A=value, r=adp.r, alpha=adp.alpha)
    if which == "B":
        return LoraAdapter(B=value, A=adp.A, r=adp.r, alpha=adp.alpha)
    raise ValueError(f"which must be 'A' or 'B', got {which!r}")


def fd_grad_adapter(inst, Wstar, adp, which, h=FD_STEP):
    """Finite-difference gradient of the special-case loss w.r.t. one factor."""

    def at(factor):
        pert = _replace_factor(adp, which, factor)
        return loss(inst, adapted_weight(Wstar, pert))

    start = adp.A if which == "A" else adp.B
    return fd_grad(at, start, h=h)


def fd_grad_general(g, adpQ, adpK, side, which, h=FD_STEP):
    """Finite-difference gradient of the two-sided loss w.r.t. one factor."""
    if side not in ("Q", "K"):
        raise ValueError(f"side must be 'Q' or 'K', got {side!r}")

    def at(factor):
        if side == "Q":
            return general_loss(g, _replace_factor(adpQ, which, factor), adpK)
        return general_loss(g, adpQ, _replace_factor(adpK, which, factor))

    base = adpQ if side == "Q" else adpK
    start = base.A if which == "A" else base.B
    return fd_grad(at, start, h=h)


def dense_p_oracle(inst, W):
    """Literal (diag(f_j) - f_j f_j^T) q_j build, column by column."""
    L = inst.L
    if L > DENSE_P_GUARD_L:
        raise SizeGuardError(
            f"dense_p_oracle is limited to L <= {DENSE_P_GUARD_L}, got L = {L}"
        )
    f = forward_f(inst, W)
    c = residual_from_f(f, inst)
    q = q_from_c(c, inst)
    p1 = np.empty((L, L))
    p2 = np.empty((L, L))
    for j in range(L):
        fj = f[j, :]
        qj = q[:, j]
        p1[:, j] = np.diag(fj) @ qj
        p2[:, j] = np.outer(fj, fj) @ qj
    return PMatrices(p1=p1, p2=p2, p=p1 - p2)


def dense_kron_grad_oracle(inst, Wstar, adp):
    """Adapter gradients via materialized C1 kron C2 and dense Jacobians.

    Assembles vec(dL/dW) = sum_j subblock_j(C1 kron C2)^T p_j, then projects
    through J_B^T and J_A^T. Independent of the staged matrix-product route;
    agrees with it and with finite differences on guarded sizes.
    """
    L, d = inst.L, inst.d
    if L > KRON_GUARD_L or d > KRON_GUARD_D:
        raise SizeGuardError(
            f"dense_kron_grad_oracle is limited to L <= {KRON_GUARD_L} and "
            f"d <= {KRON_GUARD_D}, got L = {L}, d = {d}"
        )
    W = adapted_weight(Wstar, adp)
    pm = compute_p(inst, W)
    K = kronecker(inst.C1, inst.C2)
    vg = np.zeros(d * d)
    for j in range(L):
        Cj = subblock(K, j)
        vg += Cj.T @ pm.p[:, j]
    J_B, J_A = jacobian_blocks(adp)
    GA = matrixize(J_B.T @ vg, adp.r, d)
    GB = matrixize(J_A.T @ vg, d, adp.r)
    return GradientPair(GA=GA, GB=GB)
