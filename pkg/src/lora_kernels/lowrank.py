"""Factored almost-linear gradient pipeline.

Every L x L object of the exact path is replaced by an explicit rank
factorization U @ V.T and the chain

    f  ->  q = C3 @ c.T  ->  p1, p2  ->  dL/dW

is rebuilt so that only L x k arrays are ever formed. Orientations follow
the exact path's column convention: the factored p matrices represent the
same column-j-per-softmax-row-j layout as the dense PMatrices, so

    p1 ~ (V1 @ U1.T) * (U2 @ V2.T)        (elementwise, = f.T * q)

and the columnwise-Kronecker identity turns that Hadamard product into the
single factorization (V1 ck U2) @ (U1 ck V2).T.

Two interchangeable sources for the f factor:

* approx_f_poly: truncated-Taylor feature maps of the score factors; the
  production backend, with cost independent of L x L and a rank k1 that
  explodes combinatorially as the norm bound grows (the phase transition
  this library exists to exhibit).
* approx_f_svd: truncated SVD of the densely computed f; validation only,
  used to test the downstream chain in isolation at machine precision.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import instrument
from .attention import (
    AttentionInstance,
    adapted_general_weights,
    adapted_weight,
    check_dense_guard,
    compose_general_constants,
    forward_f,
)
from .errors import (
    ApproxBreakdownError,
    DimensionError,
    NormBoundError,
    RankInfeasibleError,
)
from .exact import GradientPair
from .tensorops import colwise_kronecker, matrixize, transpose_perm, vectorize

# Hard ceiling on the degree search: the remainder rule always terminates,
# this only turns a logic bug into a loud failure.
_DEGREE_CEILING = 10_000


@dataclass(frozen=True)
class LowRankFactor:
    """An L x L matrix held as U @ V.T with U, V of shape L x k.

    Production configurations keep k well below L; the chained p1 factor
    (rank k1 * k2) and full-rank SVD factors may exceed L and are allowed.
    """

    U: np.ndarray
    V: np.ndarray
    k: int

    def __post_init__(self):
        if self.U.ndim != 2 or self.U.shape != self.V.shape:
            raise DimensionError(
                f"factor halves must share shape, got {self.U.shape} "
                f"and {self.V.shape}"
            )
        if self.k != self.U.shape[1]:
            raise DimensionError(
                f"declared rank {self.k} does not match {self.U.shape[1]} columns"
            )

    @property
    def L(self):
        return self.U.shape[0]

    def dense(self):
        """Materialize U @ V.T. Test support; guarded like the exact path."""
        check_dense_guard(self.L)
        return self.U @ self.V.T


@dataclass(frozen=True)
class FactoredResidual:
    """Residual c = f @ C3 - Y with f kept factored: c = U @ M - Y."""

    U: np.ndarray
    M: np.ndarray
    Y: np.ndarray

    def dense(self):
        return self.U @ self.M - self.Y


@dataclass(frozen=True)
class PolyApproxConfig:
    """Knobs of the polynomial backend.

    gamma is the entrywise norm bound the score factors are assumed (and
    checked) to satisfy; degree pins the Taylor degree, or None to let
    select_degree pick the smallest degree meeting eps_target.
    """

    gamma: float
    degree: int | None
    eps_target: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.degree is not None and self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.eps_target <= 0:
            raise ValueError(f"eps_target must be positive, got {self.eps_target}")


def monomial_count(d, g):
    """Number of monomials of total degree <= g in d variables."""
    return math.comb(d + g, g)


def select_degree(cfg, d, max_rank=None):
    """Smallest Taylor degree meeting eps_target on scores bounded by d*gamma^2.

    The scores C1 W C2.T are entrywise bounded by R = d * gamma^2 when both
    factors obey the gamma bound, and the degree-g Taylor remainder of exp
    on [-R, R] is at most R^(g+1) e^R / (g+1)!. Requiring that to be below
    eps_target * e^(-R) makes the error small relative to the smallest
    attainable exp value, so it survives the softmax normalization. The
    comparison runs in log space to dodge overflow at large R.

    With max_rank given, a degree whose monomial count C(d+g, g) exceeds it
    raises RankInfeasibleError; that error is the phase-transition signal.
    """
    R = d * cfg.gamma * cfg.gamma
    log_eps = math.log(cfg.eps_target)
    for g in range(_DEGREE_CEILING + 1):
        if R == 0.0:
            ok = True
        else:
            log_rem = (g + 1) * math.log(R) + 2.0 * R - math.lgamma(g + 2)
            ok = log_rem <= log_eps
        if ok:
            if max_rank is not None and monomial_count(d, g) > max_rank:
                raise RankInfeasibleError(g, monomial_count(d, g), max_rank)
            return g
    raise RuntimeError(f"degree search did not terminate below {_DEGREE_CEILING}")


def _monomials(d, g):
    """Sorted variable-index tuples for all monomials of degree <= g."""
    out = []
    for t in range(g + 1):
        out.extend(itertools.combinations_with_replacement(range(d), t))
    return out


def feature_map(X, g):
    """Rows of X mapped so inner products become truncated exp kernels.

    Column beta of the output is X^beta / sqrt(beta!) over all monomials of
    total degree <= g, giving <phi(x), phi(y)> = sum_{t<=g} <x,y>^t / t!.
    """
    X = np.asarray(X)
    L, d = X.shape
    mons = _monomials(d, g)
    Phi = np.empty((L, len(mons)))
    instrument.alloc(Phi.size)
    for col, idx in enumerate(mons):
        v = np.ones(L)
        counts = {}
        for i in idx:
            v = v * X[:, i]
            counts[i] = counts.get(i, 0) + 1
        fact = 1.0
        for c in counts.values():
            fact *= math.factorial(c)
        Phi[:, col] = v / math.sqrt(fact)
        instrument.count(L * (len(idx) + 1))
    return Phi


def approx_f_poly(inst, W, cfg, max_rank=None, check_norms=True):
    """Low-rank f factor from truncated-Taylor feature maps.

    U1 is the row-normalized feature map of C1 @ W, V1 the feature map of
    C2; U1 @ V1.T approximates f entrywise within eps_target whenever the
    norm preconditions hold. Never touches an L x L array.
    """
    W = np.asarray(W)
    d = inst.d
    if W.shape != (d, d):
        raise DimensionError(f"W must be {d} x {d}, got {W.shape}")
    CW = inst.C1 @ W
    instrument.count_matmul(inst.L, d, d)
    if check_norms:
        # The tiny relative slack keeps instances rescaled to sit exactly at
        # gamma from failing on the last float64 ulp.
        for name, mat in (("C1 @ W", CW), ("C2", inst.C2)):
            measured = float(np.abs(mat).max())
            if measured > cfg.gamma * (1.0 + 1e-12):
                raise NormBoundError(name, measured, cfg.gamma)
    g = cfg.degree if cfg.degree is not None else select_degree(cfg, d, max_rank)
    k1 = monomial_count(d, g)
    if max_rank is not None and k1 > max_rank:
        raise RankInfeasibleError(g, k1, max_rank)
    Phi1 = feature_map(CW, g)
    Phi2 = feature_map(inst.C2, g)
    col_mass = Phi2.sum(axis=0)
    norm = Phi1 @ col_mass
    instrument.count_matmul(inst.L, k1, 1)
    if norm.min() <= 0.0:
        raise ApproxBreakdownError(
            "truncated polynomial produced a non-positive softmax normalizer "
            f"(min {norm.min():.3e}); the norm bound gamma={cfg.gamma} is too "
            "large for degree "
            f"{g}"
        )
    U1 = Phi1 / norm[:, None]
    instrument.count(Phi1.size)
    instrument.alloc(U1.size)
    return LowRankFactor(U=U1, V=Phi2, k=k1)


def approx_f_svd(inst, W, k):
    """Best rank-k factor of the densely computed f. Validation backend."""
    L = inst.L
    if not 1 <= k <= L:
        raise DimensionError(f"rank k={k} must satisfy 1 <= k <= L={L}")
    f = forward_f(inst, W)
    u, s, vh = np.linalg.svd(f, full_matrices=False)
    return LowRankFactor(U=u[:, :k] * s[:k], V=vh[:k].T, k=k)


def approx_c(f_lr, inst):
    """Residual c with the f factor kept implicit: c = U1 @ (V1.T @ C3) - Y."""
    if f_lr.L != inst.L:
        raise DimensionError("factor and instance disagree on L")
    M = f_lr.V.T @ inst.C3
    instrument.count_matmul(f_lr.k, inst.L, inst.d)
    instrument.alloc(M.size)
    return FactoredResidual(U=f_lr.U, M=M, Y=inst.Y)


def approx_q(f_lr, inst):
    """Factor of q = C3 @ c.T built from the f factor, exactly.

    U2 = [C3 | -C3], V2 = [U1 (V1.T C3) | Y]; the product U2 @ V2.T equals
    C3 @ (U1 V1.T C3 - Y).T with no approximation beyond f's own.
    """
    res = approx_c(f_lr, inst)
    fc = res.U @ res.M
    instrument.count_matmul(inst.L, f_lr.k, inst.d)
    U2 = np.hstack([inst.C3, -inst.C3])
    V2 = np.hstack([fc, inst.Y])
    instrument.alloc(U2.size)
    instrument.alloc(V2.size)
    return LowRankFactor(U=U2, V=V2, k=2 * inst.d)


def approx_p1(f_lr, q_lr):
    """Factor of p1 = f.T * q via the columnwise-Kronecker identity.

    p1's column convention stores f row j against column j, so the dense
    target is (V1 U1.T) * (U2 V2.T) and the factor halves combine crosswise:
    U3 = V1 ck U2, V3 = U1 ck V2, rank k1 * k2.
    """
    if f_lr.L != q_lr.L:
        raise DimensionError("factors disagree on L")
    U3 = colwise_kronecker(f_lr.V, q_lr.U)
    V3 = colwise_kronecker(f_lr.U, q_lr.V)
    return LowRankFactor(U=U3, V=V3, k=f_lr.k * q_lr.k)


def approx_p2(f_lr, q_lr):
    """Factor of p2 = f.T scaled per column by r_j = <f_j, q_j>.

    The row dots come from the precomputed Gram matrix G = V1.T @ U2:
    r_j = U1[j, :] @ G @ V2[j, :].T, each O(k1 k2). The factor keeps f's
    rank: U4 = V1, V4 = U1 with row j scaled by r_j.
    """
    if f_lr.L != q_lr.L:
        raise DimensionError("factors disagree on L")
    G = f_lr.V.T @ q_lr.U
    instrument.count_matmul(f_lr.k, f_lr.L, q_lr.k)
    r = ((f_lr.U @ G) * q_lr.V).sum(axis=1)
    instrument.count_matmul(f_lr.L, f_lr.k, q_lr.k)
    instrument.count(f_lr.L * q_lr.k)
    V4 = f_lr.U * r[:, None]
    instrument.count(V4.size)
    instrument.alloc(V4.size)
    return LowRankFactor(U=f_lr.V, V=V4, k=f_lr.k)


def _staged_grad_W(inst, p1_lr, p2_lr):
    """dL/dW from the factored p matrices, staged to avoid L x L products.

    dL/dW = C1.T p.T C2 and p.T = V3 U3.T - V4 U4.T, so each term is two
    thin products: (C1.T V) @ (U.T C2).
    """
    L, d = inst.L, inst.d
    out = np.zeros((d, d))
    for lr, sign in ((p1_lr, 1.0), (p2_lr, -1.0)):
        left = inst.C1.T @ lr.V
        right = lr.U.T @ inst.C2
        instrument.count_matmul(d, L, lr.k)
        instrument.count_matmul(lr.k, L, d)
        instrument.count_matmul(d, lr.k, d)
        out += sign * (left @ right)
    return out


def grad_from_f_factor(f_lr, inst, adp):
    """Adapter gradients from a given f factor; backend-agnostic chain."""
    if adp.d != inst.d:
        raise DimensionError("adapter dimension does not match the instance")
    q_lr = approx_q(f_lr, inst)
    p1_lr = approx_p1(f_lr, q_lr)
    p2_lr = approx_p2(f_lr, q_lr)
    M = _staged_grad_W(inst, p1_lr, p2_lr)
    instrument.count_matmul(adp.r, adp.d, adp.d)
    instrument.count_matmul(adp.d, adp.d, adp.r)
    return GradientPair(GA=adp.B.T @ M, GB=M @ adp.A.T)


def approx_grad_special(inst, Wstar, adp, cfg, max_rank=None):
    """Almost-linear adapter gradients with the polynomial backend."""
    W = adapted_weight(Wstar, adp)
    f_lr = approx_f_poly(inst, W, cfg, max_rank=max_rank)
    return grad_from_f_factor(f_lr, inst, adp)


def approx_grad_general(g, adpQ, adpK, cfg, max_rank=None):
    """Almost-linear gradient pairs (Q-side, K-side) of the two-sided problem.

    Runs the factored pipeline twice: the query side on (CQ1, CQ2) at the
    adapted query weight, the key side on (CK1, CK2) at the transposed
    adapted key weight, whose d^2 gradient vector then passes through the
    vec-transpose permutation exactly as in the exact path.
    """
    consts = compose_general_constants(g, adpQ, adpK)
    WQ, WK = adapted_general_weights(g, adpQ, adpK)
    d = g.d

    inst_q = AttentionInstance(C1=consts.CQ1, C2=consts.CQ2, C3=consts.C3, Y=g.Y)
    try:
        f_lr_q = approx_f_poly(inst_q, WQ, cfg, max_rank=max_rank)
    except NormBoundError as err:
        raise NormBoundError(f"Q side {err.name}", err.measured, err.bound)
    q_lr = approx_q(f_lr_q, inst_q)
    p1_lr = approx_p1(f_lr_q, q_lr)
    p2_lr = approx_p2(f_lr_q, q_lr)
    NQ = _staged_grad_W(inst_q, p1_lr, p2_lr)
    sQ = adpQ.scale
    pair_q = GradientPair(GA=sQ * (adpQ.B.T @ NQ), GB=sQ * (NQ @ adpQ.A.T))

    inst_k = AttentionInstance(C1=consts.CK1, C2=consts.CK2, C3=consts.C3, Y=g.Y)
    try:
        f_lr_k = approx_f_poly(inst_k, WK.T, cfg, max_rank=max_rank)
    except NormBoundError as err:
        raise NormBoundError(f"K side {err.name}", err.measured, err.bound)
    q_lr_k = approx_q(f_lr_k, inst_k)
    p1_lr_k = approx_p1(f_lr_k, q_lr_k)
    p2_lr_k = approx_p2(f_lr_k, q_lr_k)
    NK = _staged_grad_W(inst_k, p1_lr_k, p2_lr_k)
    T = transpose_perm(d, d)
    dW_K = matrixize(T.apply(vectorize(NK)), d, d)
    pair_k = GradientPair(GA=adpK.B.T @ dW_K, GB=dW_K @ adpK.A.T)
    instrument.count_matmul(adpQ.r, d, d)
    instrument.count_matmul(d, d, adpQ.r)
    instrument.count_matmul(adpK.r, d, d)
    instrument.count_matmul(d, d, adpK.r)
    return pair_q, pair_k
