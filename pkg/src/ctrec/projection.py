"""Reconciliation projections in structural and constraint form.

Both forms realize the same oblique projection onto the coherent subspace;
which is cheaper depends on whether the summing map or the constraint set
is smaller. Operators keep their matrices factored — nothing is ever
inverted explicitly — and expose a matrix-free ``apply``. Dense
materialization exists for test oracles and debugging only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotPositiveDefiniteError, SingularSystemError, ValidationError
from .hierarchy import CrossSectionalStructure, TemporalStructure

# Above this size a Gram system is factored sparsely instead of densely.
DENSE_SOLVE_CUTOFF = 800
# Refuse dense materialization beyond this dimension.
DENSE_MATERIALIZE_CAP = 2048
# Cholesky fallback: accept a pivoted factorization when the most negative
# eigenvalue is within this relative tolerance of zero.
PIVOT_FALLBACK_TOL = 1e-10


def sigma_diagonal(sigma) -> np.ndarray | None:
    """Return the diagonal of a covariance, or None when it is genuinely dense.

    Accepts a 1-d array (the diagonal itself), a 2-d array, or any object
    carrying a ``diag`` attribute (the package's named diagonal covariances).
    """
    diag = getattr(sigma, "diag", sigma)
    diag = np.asarray(diag, dtype=float)
    if diag.ndim == 1:
        return diag
    if diag.ndim == 2:
        return None
    raise ValidationError(f"covariance must be 1-d or 2-d, got ndim={diag.ndim}")


# Treat a factored system as singular below this reciprocal condition number.
RCOND_FLOOR = 1e-14


def _raise_singular(A: np.ndarray, context: str, rcond: float):
    eigs = sla.eigvalsh(A, check_finite=False)
    scale = max(abs(eigs[0]), abs(eigs[-1]), 1.0)
    raise SingularSystemError(
        f"{context} is singular to working precision",
        deficiency=int(np.sum(eigs <= PIVOT_FALLBACK_TOL * scale)),
        condition=float(1.0 / rcond) if rcond > 0 else np.inf,
    )


def sym_solver(A: np.ndarray, context: str) -> Callable[[np.ndarray], np.ndarray]:
    """Factor a symmetric matrix, preferring Cholesky.

    Falls back to a pivoted LU when the matrix misses positive definiteness
    by less than PIVOT_FALLBACK_TOL (near-singular variance-scaled systems);
    raises otherwise, with a condition estimate and rank deficiency count.
    """
    try:
        c = sla.cho_factor(A, check_finite=False)
    except sla.LinAlgError:
        eigs = sla.eigvalsh(A, check_finite=False)
        scale = max(abs(eigs[0]), abs(eigs[-1]), 1.0)
        if eigs[0] < -PIVOT_FALLBACK_TOL * scale:
            raise NotPositiveDefiniteError(
                f"{context} is not positive definite (min eigenvalue {eigs[0]:.3e})"
            )
        if eigs[0] <= np.finfo(float).eps * scale:
            _raise_singular(A, context, float(eigs[0] / scale))
        lu = sla.lu_factor(A, check_finite=False)
        return lambda b: sla.lu_solve(lu, b, check_finite=False)
    # Cholesky can succeed on a numerically singular matrix; vet the factor.
    pocon = sla.get_lapack_funcs("pocon", (A,))
    rcond, _ = pocon(c[0], np.linalg.norm(A, 1), uplo=b"L" if c[1] else b"U")
    if rcond < RCOND_FLOOR:
        _raise_singular(A, context, float(rcond))
    return lambda b: sla.cho_solve(c, b, check_finite=False)


def _gram_solver(G, context: str) -> Callable[[np.ndarray], np.ndarray]:
    """Factor a (possibly sparse) Gram matrix once and return its solve."""
    r = G.shape[0]
    if sp.issparse(G):
        if r <= DENSE_SOLVE_CUTOFF:
            return sym_solver(G.toarray(), context)
        try:
            lu = spla.splu(G.tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(f"{context} could not be factored: {exc}")
        return lu.solve
    return sym_solver(np.asarray(G, dtype=float), context)


@dataclass
class Projector:
    """An oblique projection onto a coherent subspace, applied matrix-free.

    Idempotent up to round-off; fixes every already-coherent vector; its
    range satisfies the framework's zero constraints.
    """

    kind: str
    framework: str
    dim: int
    sigma_ref: str
    _apply: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValidationError(f"vector length {x.shape[0]} != {self.dim}")
        return self._apply(x)

    __call__ = apply

    def dense(self) -> np.ndarray:
        """Materialize the projection matrix column by column (oracle/debug only)."""
        if self.dim > DENSE_MATERIALIZE_CAP:
            raise ValidationError(
                f"refusing to materialize a {self.dim}x{self.dim} operator"
            )
        return self._apply(np.eye(self.dim))

    def dump_csv(self, path) -> None:
        """Write the materialized operator to CSV for debugging."""
        M = self.dense()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in M:
                writer.writerow([repr(float(v)) for v in row])


def structural_projector(
    K, sigma, framework: str = "ct", sigma_ref: str = "custom"
) -> Projector:
    """Projection built from a summing map: K (Kᵀ Σ⁻¹ K)⁻¹ Kᵀ Σ⁻¹.

    Args:
        K: summing matrix (sparse or dense), full column rank.
        sigma: covariance — 1-d diagonal, 2-d symmetric positive definite,
            or a named diagonal covariance object.

    The operator performs two linear solves per application (covariance and
    Gram); with a diagonal covariance the first solve is elementwise.
    """
    diag = sigma_diagonal(sigma)
    if diag is not None:
        if K.shape[0] != diag.shape[0]:
            raise ValidationError(
                f"covariance dimension {diag.shape[0]} != operator rows {K.shape[0]}"
            )
        if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
            raise NotPositiveDefiniteError("diagonal covariance must be positive")
        Ks = sp.csr_matrix(K)
        B = (Ks.T @ sp.diags(1.0 / diag)).tocsr()  # Kᵀ Σ⁻¹
        solve = _gram_solver((B @ Ks).tocsc(), "structural Gram matrix")

        def apply(x):
            return Ks @ solve(B @ x)

    else:
        S = np.asarray(getattr(sigma, "diag", sigma), dtype=float)
        Kd = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
        if Kd.shape[0] != S.shape[0]:
            raise ValidationError(
                f"covariance dimension {S.shape[0]} != operator rows {Kd.shape[0]}"
            )
        try:
            c = sla.cho_factor(S, check_finite=False)
        except sla.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"covariance Cholesky failed: {exc}")
        B = sla.cho_solve(c, Kd, check_finite=False)  # Σ⁻¹ K
        G = Kd.T @ B
        solve = sym_solver(G, "structural Gram matrix")

        def apply(x):
            return Kd @ solve(B.T @ x)

    return Projector(
        kind="structural",
        framework=framework,
        dim=K.shape[0],
        sigma_ref=sigma_ref,
        _apply=apply,
    )


def zero_projector(
    H, sigma, framework: str = "ct", sigma_ref: str = "custom"
) -> Projector:
    """Projection built from zero constraints: I − Σ Hᵀ (H Σ Hᵀ)⁻¹ H.

    H must have full row rank; a rank-deficient constraint Gram raises with
    the deficiency count when it can be computed cheaply.
    """
    diag = sigma_diagonal(sigma)
    Hs = sp.csr_matrix(H)
    dim = Hs.shape[1]
    if Hs.shape[0] == 0:  # no constraints: everything is already coherent
        return Projector(
            kind="zero_constrained",
            framework=framework,
            dim=dim,
            sigma_ref=sigma_ref,
            _apply=lambda x: np.asarray(x, dtype=float).copy(),
        )
    if diag is not None:
        if diag.shape[0] != dim:
            raise ValidationError(
                f"covariance dimension {diag.shape[0]} != operator size {dim}"
            )
        if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
            raise NotPositiveDefiniteError("diagonal covariance must be positive")
        HSig = (Hs @ sp.diags(diag)).tocsr()
        solve = _gram_solver((HSig @ Hs.T).tocsc(), "constraint Gram matrix")

        def apply(x):
            y = Hs.T @ solve(Hs @ x)
            return x - (y.T * diag).T  # row-scale works for vector and matrix

    else:
        S = np.asarray(getattr(sigma, "diag", sigma), dtype=float)
        if S.shape[0] != dim:
            raise ValidationError(
                f"covariance dimension {S.shape[0]} != operator size {dim}"
            )
        HSig = Hs @ S
        solve = sym_solver(HSig @ Hs.T.toarray(), "constraint Gram matrix")

        def apply(x):
            return x - S @ (Hs.T @ solve(Hs @ x))

    return Projector(
        kind="zero_constrained",
        framework=framework,
        dim=dim,
        sigma_ref=sigma_ref,
        _apply=apply,
    )


def oblique_matrix(S, weight) -> np.ndarray:
    """Small dense oblique projection S (Sᵀ W⁻¹ S)⁻¹ Sᵀ W⁻¹.

    ``weight`` is either the diagonal of W (1-d) or a dense symmetric
    positive definite W (2-d). Used per temporal position (cross-sectional
    step) or per series (temporal step), and by the averaging heuristic.
    """
    S = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=float)
    w = np.asarray(weight, dtype=float)
    if w.ndim == 1:
        if np.any(w <= 0):
            raise NotPositiveDefiniteError("diagonal weights must be positive")
        A = S / w[:, None]
    else:
        try:
            c = sla.cho_factor(w, check_finite=False)
        except sla.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"weight Cholesky failed: {exc}")
        A = sla.cho_solve(c, S, check_finite=False)
    solve = sym_solver(S.T @ A, "projection Gram matrix")
    return S @ solve(A.T)


def averaged_cs_projector(
    cs: CrossSectionalStructure, weights_by_order: Mapping[int, np.ndarray]
) -> np.ndarray:
    """Mean of the per-order cross-sectional projection matrices.

    One (n, n) projection per temporal aggregation order, averaged with
    equal weights; the result is applied blockwise across temporal
    positions and is generally no longer idempotent.
    """
    if not weights_by_order:
        raise ValidationError("no per-order weights given")
    S = cs.summing_dense
    mats = [oblique_matrix(S, w) for w in weights_by_order.values()]
    return sum(mats) / len(mats)


def averaged_te_projector(
    te: TemporalStructure, omegas_by_series: Sequence[np.ndarray] | np.ndarray
) -> np.ndarray:
    """Mean of the per-series temporal projection matrices (mirror of the above)."""
    omegas = list(omegas_by_series)
    if not omegas:
        raise ValidationError("no per-series weights given")
    S = te.summing_dense
    mats = [oblique_matrix(S, w) for w in omegas]
    return sum(mats) / len(mats)
