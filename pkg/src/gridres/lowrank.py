"""Thin SVD by one-sided Jacobi rotations and spectral low-rank regularizers.

Every regularizer here is a sum ``sum_i f_i(sigma_i)`` over the singular
values of the batch Q-matrix, so its gradient is ``U diag(f_i'(sigma_i)) V^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUCLEAR = "nuclear"
LOG_NUCLEAR = "log_nuclear"
ELASTIC_NET = "elastic_net"
SCHATTEN_P = "schatten_p"
TRUNCATED_NUCLEAR = "truncated_nuclear"
PARTIAL_SUM_NUCLEAR = "partial_sum_nuclear"
WEIGHTED_NUCLEAR = "weighted_nuclear"

KINDS = (
    NUCLEAR,
    LOG_NUCLEAR,
    ELASTIC_NET,
    SCHATTEN_P,
    TRUNCATED_NUCLEAR,
    PARTIAL_SUM_NUCLEAR,
    WEIGHTED_NUCLEAR,
)


class ConvergenceFailure(RuntimeError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass
class SvdResult:
    U: np.ndarray  # (m, k)
    s: np.ndarray  # (k,), descending
    V: np.ndarray  # (n, k)
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint column pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        left, right = players[:half], players[half:][::-1]
        rounds.append((np.array(left), np.array(right)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _complete_basis(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of U flagged not ``good`` with an orthonormal completion."""
    m, k = U.shape
    basis = [U[:, i] for i in range(k) if good[i]]
    out = U.copy()
    candidates = iter(np.eye(m))
    for i in range(k):
        if good[i]:
            continue
        while True:
            v = next(candidates).copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            norm = np.linalg.norm(v)
            if norm > 0.5:
                v /= norm
                break
        out[:, i] = v
        basis.append(v)
    return out


def _jacobi_numpy(W, V, pairs, tol, max_sweeps):
    """Cyclic sweeps over ``pairs``; returns the sweep count or -1 on failure."""
    m = W.shape[0]
    sweeps = 0
    while True:
        if sweeps >= max_sweeps:
            return -1
        sweeps += 1
        rotated = False
        for i, j in pairs:
            wi, wj = W[:, i], W[:, j]
            alpha, beta, gamma = wi @ wi, wj @ wj, wi @ wj
            if not abs(gamma) > tol * np.sqrt(alpha * beta):
                continue
            rotated = True
            zeta = (beta - alpha) / (2.0 * gamma)
            if zeta == 0.0:
                t = 1.0
            else:
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            W[:, i], W[:, j] = c * wi - s * wj, s * wi + c * wj
            vi, vj = V[:, i].copy(), V[:, j].copy()
            V[:, i], V[:, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            return sweeps


_jacobi = _jacobi_numpy

if numba is not None:

    @numba.njit(cache=True)
    def _jacobi_fused(W, V, pairs, tol, max_sweeps):
        m, k = W.shape[0], V.shape[0]
        sweeps = 0
        while True:
            if sweeps >= max_sweeps:
                return -1
            sweeps += 1
            rotated = False
            for p in range(pairs.shape[0]):
                i, j = pairs[p, 0], pairs[p, 1]
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    alpha += W[r, i] * W[r, i]
                    beta += W[r, j] * W[r, j]
                    gamma += W[r, i] * W[r, j]
                if not abs(gamma) > tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    wi, wj = W[r, i], W[r, j]
                    W[r, i] = c * wi - s * wj
                    W[r, j] = s * wi + c * wj
                for r in range(k):
                    vi, vj = V[r, i], V[r, j]
                    V[r, i] = c * vi - s * vj
                    V[r, j] = s * vi + c * vj
            if not rotated:
                return sweeps

    _jacobi = _jacobi_fused


def svd(matrix: np.ndarray, tol: float | None = None, max_sweeps: int = 60) -> SvdResult:
    """Thin SVD of a real matrix via Hestenes one-sided Jacobi.

    Columns are orthogonalized pairwise until every pair satisfies
    ``|w_i . w_j| <= tol * |w_i| |w_j|``. A wide matrix is handled through its
    transpose. Signs are fixed so that the largest-magnitude entry of every
    column of U is non-negative.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2:
        raise ValueError("svd expects a 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("svd input has non-finite entries")
    m, n = A.shape
    if n > m:
        res = svd(A.T, tol=tol, max_sweeps=max_sweeps)
        U, V = res.V, res.U
        return _canonical(U, res.s, V, res.sweeps)

    if tol is None:
        tol = np.finfo(float).eps * m
    pad = n % 2
    W = np.zeros((m, n + pad))
    W[:, :n] = A
    V = np.eye(n + pad)
    schedule = _round_robin(n + pad)

    pairs = np.array([(i, j) for I, J in schedule for i, j in zip(I, J)], dtype=np.int64)
    sweeps = _jacobi(W, V, pairs, float(tol), max_sweeps) if n >= 2 else 0
    if sweeps < 0:
        raise ConvergenceFailure(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")

    W, V = W[:, :n], V[:n, :n]
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    good = sigma > np.finfo(float).tiny
    U = np.zeros_like(W)
    U[:, good] = W[:, good] / sigma[good]
    if not good.all():
        sigma[~good] = 0.0
        U = _complete_basis(U, good)
    return _canonical(U, sigma, V, sweeps)


def _canonical(U, s, V, sweeps) -> SvdResult:
    U, V = U.copy(), V.copy()
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(U=U * signs, s=s, V=V * signs, sweeps=sweeps)


# --------------------------------------------------------------------------
# regularizers


@dataclass
class RegularizerSpec:
    kind: str = NUCLEAR
    gamma_en: float = 0.0
    p: float = 1.0
    r: int = 0
    weights: list[float] = field(default_factory=list)
    # sum the weighted norm from index r+1 instead of over every singular value
    weighted_from_r: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown regularizer {self.kind!r}; expected one of {KINDS}")
        if self.kind == SCHATTEN_P and not self.p > 0:
            raise InvalidSpec("schatten_p requires p > 0")
        if self.r < 0:
            raise InvalidSpec("r must be non-negative")
        if any(w < 0 for w in self.weights):
            raise InvalidSpec("weights must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> RegularizerSpec:
        return cls(**doc)

    def _mask(self, k: int) -> np.ndarray:
        """Which singular values (0-based) enter the sum."""
        mask = np.ones(k, dtype=bool)
        uses_r = self.kind in (TRUNCATED_NUCLEAR, PARTIAL_SUM_NUCLEAR) or (
            self.kind == WEIGHTED_NUCLEAR and self.weighted_from_r
        )
        if uses_r:
            if not self.r < k:
                raise InvalidSpec(f"r = {self.r} must be smaller than k = {k}")
            mask[: self.r] = False
        return mask

    def _weights(self, k: int) -> np.ndarray:
        if len(self.weights) < k:
            raise InvalidSpec(f"weighted_nuclear needs {k} weights, got {len(self.weights)}")
        return np.asarray(self.weights[:k], dtype=float)


def spectral_terms(spec: RegularizerSpec, s: np.ndarray) -> np.ndarray:
    k = len(s)
    mask = spec._mask(k)
    if spec.kind in (NUCLEAR, TRUNCATED_NUCLEAR, PARTIAL_SUM_NUCLEAR):
        f = s.copy()
    elif spec.kind == LOG_NUCLEAR:
        f = np.log(s + 1.0)
    elif spec.kind == ELASTIC_NET:
        f = s + spec.gamma_en * s**2
    elif spec.kind == SCHATTEN_P:
        f = s**spec.p
    else:
        f = spec._weights(k) * s
    return np.where(mask, f, 0.0)


def spectral_derivative(spec: RegularizerSpec, s: np.ndarray) -> np.ndarray:
    k = len(s)
    mask = spec._mask(k)
    if spec.kind in (NUCLEAR, TRUNCATED_NUCLEAR, PARTIAL_SUM_NUCLEAR):
        g = np.ones(k)
    elif spec.kind == LOG_NUCLEAR:
        g = 1.0 / (s + 1.0)
    elif spec.kind == ELASTIC_NET:
        g = 1.0 + 2.0 * spec.gamma_en * s
    elif spec.kind == SCHATTEN_P:
        with np.errstate(divide="ignore", invalid="ignore"):
            g = spec.p * s ** (spec.p - 1.0)
        # p < 1 has no derivative at zero; take the zero subgradient member
        g = np.where(np.isfinite(g), g, 0.0)
    else:
        g = spec._weights(k)
    return np.where(mask, g, 0.0)


def reg_value(spec: RegularizerSpec, svd_result: SvdResult) -> float:
    return float(spectral_terms(spec, svd_result.s).sum())


def is_degenerate(s: np.ndarray, separation: float = 1e-6) -> bool:
    """True when singular values repeat or vanish, where the gradient is only a subgradient."""
    if len(s) == 0:
        return False
    gaps = -np.diff(s)
    return bool((gaps < separation).any() or s[-1] < separation)


def reg_grad(
    spec: RegularizerSpec, matrix: np.ndarray, svd_result: SvdResult | None = None
) -> tuple[np.ndarray, bool]:
    """Gradient of ``reg_value`` w.r.t. the matrix, and a degeneracy flag."""
    if svd_result is None:
        svd_result = svd(matrix)
    g = spectral_derivative(spec, svd_result.s)
    grad = (svd_result.U * g) @ svd_result.V.T
    return grad, is_degenerate(svd_result.s)
