"""Smallest non-zero eigenpairs of the discrete curl-curl pencil.

The pencil ``C Me^-1 C^T u = lambda Mh u`` is symmetrised with the block
Cholesky factor ``Mh = L L^T`` into ``S = L^-1 C Me^-1 C^T L^-T``.  Its
kernel (discrete gradients) is huge, and the wanted eigenvalues sit at the
bottom of a stiff spectrum, right next to it.  Plain Lanczos drifts into the
kernel through rounding; the thick-restart variant below starts in the range
of ``S`` and discards kernel Ritz vectors at every restart.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .assembly import BlockDiagMatrix

log = logging.getLogger(__name__)


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # magnetic coefficients, Mh-orthonormal
    residuals: np.ndarray
    lambda_max: float
    restarts: int
    kernel_count: int

    def write_csv(self, path, analytic=None, extra: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = list((extra or {}).keys()) + ["index", "lambda", "residual"]
            if analytic is not None:
                head += ["analytic", "rel_error"]
            w.writerow(head)
            for k, lam in enumerate(self.eigenvalues):
                row = list((extra or {}).values()) + [k + 1, repr(float(lam)), repr(float(self.residuals[k]))]
                if analytic is not None and k < len(analytic):
                    row += [repr(float(analytic[k])), repr(float(abs(lam - analytic[k]) / analytic[k]))]
                w.writerow(row)


class CurlCurl:
    """The symmetric operator ``S`` and its relation to magnetic coefficients."""

    def __init__(self, Me: BlockDiagMatrix, Mh: BlockDiagMatrix, C):
        self.Me, self.Mh, self.C = Me, Mh, C
        self.Linv = Mh.Linv_csr
        self.LinvT = Mh.Linv_csr.T.tocsr()
        self.n = Mh.n
        self.applications = 0

    def __matmul__(self, X):
        self.applications += 1 if X.ndim == 1 else X.shape[1]
        return self.Linv @ (self.C @ self.Me.solve(self.C.T @ (self.LinvT @ X)))

    def to_coefficients(self, V):
        """Magnetic coefficients ``u = L^-T v`` (Mh-orthonormal when ``V`` is orthonormal)."""
        return self.LinvT @ V


def estimate_lambda_max(S: CurlCurl, steps: int = 40, seed: int = 0) -> float:
    """Upper estimate of the largest eigenvalue by Lanczos with full reorthogonalisation.

    Returns the largest Ritz value plus its residual norm, which bounds an
    eigenvalue from above.
    """
    rng = np.random.default_rng(seed)
    n = S.n
    steps = min(steps, n)
    Q = np.zeros((n, steps + 1))
    q = rng.standard_normal(n)
    Q[:, 0] = q / np.linalg.norm(q)
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    m = steps
    for k in range(steps):
        w = S @ Q[:, k]
        alpha[k] = Q[:, k] @ w
        w -= Q[:, : k + 1] @ (Q[:, : k + 1].T @ w)
        w -= Q[:, : k + 1] @ (Q[:, : k + 1].T @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-12 * abs(alpha[k]):
            m = k + 1
            break
        Q[:, k + 1] = w / beta[k]
    T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
    theta, Y = np.linalg.eigh(T)
    return float(theta[-1] + abs(beta[m - 1] * Y[-1, -1]))


def solve_eigenpairs(
    Me: BlockDiagMatrix,
    Mh: BlockDiagMatrix,
    C,
    count: int,
    tol: float = 1e-8,
    basis: int = 60,
    keep: int | None = None,
    max_restarts: int = 2000,
    kernel_rel: float = 1e-8,
    seed: int = 0,
    lam_max: float | None = None,
) -> EigenResult:
    """``count`` smallest non-zero eigenpairs of ``C Me^-1 C^T u = lambda Mh u``.

    Thick-restart Lanczos on ``S`` with full reorthogonalisation.  The start
    vector is ``S r`` for random ``r``, so it has no kernel component; the
    kernel only re-enters through rounding, slowly, and Ritz vectors with
    values below ``kernel_rel * lambda_max`` are dropped at every restart.

    Args:
        tol: relative residual ``||S v - lambda v|| / lambda`` required for
            each returned pair.
        basis: Lanczos vectors kept in memory before a restart.
        keep: Ritz vectors retained at a restart (default ``basis // 2``).

    Raises:
        EigenSolverError: no convergence within ``max_restarts`` restarts.
    """
    S = CurlCurl(Me, Mh, C)
    n = S.n
    basis = min(basis, n - 1)
    keep = keep or max(count + 2, basis // 2)
    if keep >= basis:
        raise ValueError("keep must be smaller than basis")
    if lam_max is None:
        lam_max = estimate_lambda_max(S, seed=seed)
    kernel = kernel_rel * lam_max
    rng = np.random.default_rng(seed)
    # rows of Q are the Lanczos vectors; row m is the pending one
    Q = np.zeros((basis + 1, n))
    T = np.zeros((basis + 1, basis + 1))
    q = S @ rng.standard_normal(n)
    Q[0] = q / np.linalg.norm(q)
    m = 0
    for restart in range(max_restarts + 1):
        while m < basis:
            w = S @ Q[m]
            before = np.linalg.norm(w)
            c = Q[: m + 1] @ w
            w -= c @ Q[: m + 1]
            nrm = np.linalg.norm(w)
            if nrm < 0.7 * before:
                c2 = Q[: m + 1] @ w
                w -= c2 @ Q[: m + 1]
                c += c2
                nrm = np.linalg.norm(w)
            T[: m + 1, m] = c
            T[m, : m + 1] = c
            beta = nrm
            m += 1
            Q[m] = w / beta
        theta, U = np.linalg.eigh(0.5 * (T[:m, :m] + T[:m, :m].T))
        res = np.abs(beta * U[m - 1])
        phys = np.nonzero(theta > kernel)[0]
        if len(phys) >= count:
            want = phys[:count]
            rel = res[want] / theta[want]
            log.debug("restart %d: theta=%s maxres=%.2e", restart, theta[want], rel.max())
            if rel.max() < tol:
                V = U[:, want].T @ Q[:m]
                return EigenResult(
                    eigenvalues=theta[want],
                    eigenvectors=S.to_coefficients(V.T),
                    residuals=rel,
                    lambda_max=lam_max,
                    restarts=restart,
                    kernel_count=int(len(theta) - len(phys)),
                )
        kept = phys[:keep]
        k = len(kept)
        pending = Q[m].copy()
        Q[:k] = U[:, kept].T @ Q[:m]
        Q[k] = pending
        T[:] = 0.0
        T[np.arange(k), np.arange(k)] = theta[kept]
        T[k, :k] = T[:k, k] = beta * U[m - 1, kept]
        m = k
    raise EigenSolverError(f"eigenpairs not converged after {max_restarts} restarts")


@dataclass(frozen=True)
class SpuriousReport:
    window: tuple
    computed: np.ndarray
    analytic: np.ndarray
    flagged: np.ndarray
    missing: np.ndarray

    @property
    def n_flags(self) -> int:
        return len(self.flagged)


def spurious_scan(values, analytic, window=(1.0, 15.0), rel_tol: float = 0.05) -> SpuriousReport:
    """Match computed eigenvalues in ``window`` to analytic ones, counting multiplicity.

    Each analytic value can absorb one computed value within ``rel_tol``;
    computed values left over are flagged as spurious.  Analytic values in
    the window with no partner are reported as missing.
    """
    lo, hi = window
    comp = np.sort(np.asarray(values, dtype=float))
    comp = comp[(comp >= lo) & (comp <= hi)]
    ana = np.sort(np.asarray(analytic, dtype=float))
    ana_w = ana[(ana >= lo * (1 - rel_tol)) & (ana <= hi * (1 + rel_tol))]
    used = np.zeros(len(ana_w), dtype=bool)
    flagged = []
    for v in comp:
        cand = np.nonzero(~used & (np.abs(ana_w - v) <= rel_tol * ana_w))[0]
        if len(cand):
            used[cand[np.argmin(np.abs(ana_w[cand] - v))]] = True
        else:
            flagged.append(v)
    missing = ana_w[~used & (ana_w >= lo) & (ana_w <= hi)]
    return SpuriousReport(tuple(window), comp, ana_w, np.array(flagged), missing)


def lumped_relative_error(M: BlockDiagMatrix, x: np.ndarray, ref: np.ndarray) -> float:
    """``||s x - ref||_M / ||ref||_M`` with the best-fit scale ``s`` (fixes sign and normalisation)."""
    Mx = M.matvec(x)
    s = float(ref @ Mx) / float(x @ Mx)
    r = s * x - ref
    return float(np.sqrt(max(r @ M.matvec(r), 0.0) / (ref @ M.matvec(ref))))


def eigenfunction_errors(Me, Mh, C, u, lam, e_ref, h_ref) -> tuple[float, float]:
    """Relative mass-lumped errors of the electric and magnetic eigenfields.

    ``u`` are magnetic coefficients of an eigenvector with eigenvalue
    ``lam``; the electric partner is ``Me^-1 C^T u / sqrt(lam)``.  ``e_ref``
    and ``h_ref`` are interpolants of the exact mode (free electric DOFs).
    """
    e = Me.solve(C.T @ u) / np.sqrt(lam)
    return lumped_relative_error(Me, e, e_ref), lumped_relative_error(Mh, u, h_ref)
