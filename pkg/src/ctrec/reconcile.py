"""Reconciliation strategies over a single forecast origin.

Every strategy takes an incoherent forecast block and returns a report
carrying the reconciled block, the iteration trace, the remaining
constraint violations, and wall time / peak-allocation measurements.

The cross-sectional step projects every temporal position onto the
hierarchy's summing subspace; the temporal step projects every series onto
the temporal-grid subspace. One-shot methods do one of these (or the
combined projection); the sequential, averaged and alternating heuristics
compose them. All of them leave the inputs untouched and are safe to run
concurrently over origins.
"""

from __future__ import annotations

import time
import tracemalloc
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .covariance import DiagonalSigma
from .errors import ValidationError
from .hierarchy import CrossTemporalStructure
from .projection import (
    Projector,
    averaged_cs_projector,
    averaged_te_projector,
    structural_projector,
    sym_solver,
    zero_projector,
)

ITERATIVE_DEFAULT_DELTA = 1e-6
ITERATIVE_DEFAULT_MAX_ITER = 100
STOP_CRITERIA = ("fixed_point", "frobenius", "incoherence")

# Below this vector length the combined projection is solved densely.
_DENSE_OCT_CUTOFF = 600


@dataclass(frozen=True)
class ForecastBlock:
    """One origin's forecasts for every series at every temporal position."""

    values: np.ndarray
    structure: CrossTemporalStructure
    origin_id: str = "0"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        ct = self.structure
        if values.shape != (ct.n_series, ct.n_positions):
            raise ValidationError(
                f"block shape {values.shape} != ({ct.n_series}, {ct.n_positions})"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"origin {self.origin_id}: non-finite forecasts")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def vector(self) -> np.ndarray:
        return self.structure.vectorize(self.values)

    @classmethod
    def from_vector(
        cls, x: np.ndarray, structure: CrossTemporalStructure, origin_id: str = "0"
    ) -> "ForecastBlock":
        return cls(structure.devectorize(x), structure, origin_id)

    def with_values(self, values: np.ndarray) -> "ForecastBlock":
        return ForecastBlock(values, self.structure, self.origin_id)


@dataclass(frozen=True)
class ReconcileReport:
    """Outcome and diagnostics of one reconciliation run.

    ``trace`` holds the Frobenius norm of the change made by each complete
    cycle (a single entry for one-shot methods). ``coherence`` is the pair
    of largest absolute cross-sectional and temporal constraint violations.
    ``peak_mem`` is a best-effort traced-allocation peak in bytes (0 when
    measurement was off). ``iterates`` is only populated on request.
    """

    block: ForecastBlock
    method: str
    covariance: str
    iterations: int
    trace: tuple[float, ...]
    coherence: tuple[float, float]
    elapsed: float
    peak_mem: int
    converged: bool = True
    flags: tuple[str, ...] = ()
    iterates: tuple[np.ndarray, ...] | None = None
    delta: float | None = None  # stopping tolerance, alternating runs only


class _Meter:
    """Wall time plus best-effort peak-allocation tracking."""

    def __init__(self, memory: bool):
        self.memory = memory
        self.elapsed = 0.0
        self.peak = 0

    def __enter__(self):
        self._nested = tracemalloc.is_tracing()
        if self.memory:
            if self._nested:
                tracemalloc.reset_peak()
            else:
                tracemalloc.start()
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._t0
        if self.memory:
            self.peak = tracemalloc.get_traced_memory()[1]
            if not self._nested:
                tracemalloc.stop()
        return False


def frobenius_gap(a, b) -> float:
    """Frobenius norm of the difference of two blocks (or arrays)."""
    av = a.values if isinstance(a, ForecastBlock) else np.asarray(a)
    bv = b.values if isinstance(b, ForecastBlock) else np.asarray(b)
    return float(np.linalg.norm(av - bv))


def _sigma_name(sigma) -> str:
    if isinstance(sigma, DiagonalSigma):
        return sigma.name
    if isinstance(sigma, Mapping):
        return "per-order"
    return "custom"


def _sigma_flags(*sigmas) -> tuple[str, ...]:
    return tuple(
        "variance-floor"
        for s in sigmas
        if isinstance(s, DiagonalSigma) and s.floored
    )


def _column_projector(S: np.ndarray, weight) -> Callable[[np.ndarray], np.ndarray]:
    """Projector onto span(S) under a diagonal or dense weight, for column batches."""
    w = np.asarray(weight, dtype=float)
    if w.ndim == 1:
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be positive and finite")
        A = S / w[:, None]
    else:
        c = sla.cho_factor(w, check_finite=False)
        A = sla.cho_solve(c, S, check_finite=False)
    solve = sym_solver(S.T @ A, "projection Gram matrix")
    return lambda cols: S @ solve(A.T @ cols)


def _cs_applier(
    ct: CrossTemporalStructure, sigma
) -> Callable[[np.ndarray], np.ndarray]:
    """Build the cross-sectional step: project every column of a block.

    Accepts a named diagonal covariance, a per-order mapping {order: weight}
    (weights are length-n diagonals or dense (n, n) matrices), a constant
    weight shared by all positions, or an (n, q) array of per-position
    diagonals.
    """
    S = ct.cs.summing_dense
    n, q = ct.n_series, ct.n_positions

    def per_position(cells):
        patterns, inverse = np.unique(cells, axis=1, return_inverse=True)
        groups = [
            (np.flatnonzero(inverse == g), _column_projector(S, patterns[:, g]))
            for g in range(patterns.shape[1])
        ]

        def apply(X):
            out = np.empty_like(X, dtype=float)
            for cols, project in groups:
                out[:, cols] = project(X[:, cols])
            return out

        return apply

    if isinstance(sigma, DiagonalSigma):
        if sigma.structure.dim != ct.dim:
            raise ValidationError("covariance built for a different structure")
        return per_position(sigma.cells())

    if isinstance(sigma, Mapping):
        missing = set(ct.te.orders) - set(sigma)
        if missing:
            raise ValidationError(f"per-order weights missing orders {sorted(missing)}")
        steps = [
            (ct.te.order_slice(k), _column_projector(S, sigma[k]))
            for k in ct.te.orders
        ]

        def apply(X):
            out = np.empty_like(X, dtype=float)
            for cols, project in steps:
                out[:, cols] = project(X[:, cols])
            return out

        return apply

    w = np.asarray(sigma, dtype=float)
    # (n, q) is always read as a per-position diagonal table; when q == n a
    # dense shared weight must come through a per-order mapping instead
    if w.shape == (n, q):
        return per_position(w)
    if w.shape in ((n,), (n, n)):
        project = _column_projector(S, w)
        return lambda X: project(X)
    raise ValidationError(
        f"cross-sectional weights of shape {w.shape} do not match n={n}, q={q}"
    )


def _te_applier(
    ct: CrossTemporalStructure, sigma
) -> Callable[[np.ndarray], np.ndarray]:
    """Build the temporal step: project every row of a block.

    Accepts a named diagonal covariance, a constant weight shared by all
    series (length-q diagonal or dense (q, q)), an (n, q) array of
    per-series diagonals, or a sequence of n per-series weights.
    """
    S = ct.te.summing_dense
    n, q = ct.n_series, ct.n_positions

    def per_series(rows):
        patterns, inverse = np.unique(rows, axis=0, return_inverse=True)
        groups = [
            (np.flatnonzero(inverse == g), _column_projector(S, patterns[g]))
            for g in range(patterns.shape[0])
        ]

        def apply(X):
            out = np.empty_like(X, dtype=float)
            for idx, project in groups:
                out[idx, :] = project(X[idx, :].T).T
            return out

        return apply

    if isinstance(sigma, DiagonalSigma):
        if sigma.structure.dim != ct.dim:
            raise ValidationError("covariance built for a different structure")
        return per_series(sigma.per_series())

    sigma = np.asarray(sigma, dtype=float) if isinstance(sigma, np.ndarray) else sigma
    # (n, q) is always read as a per-series diagonal table; when n == q a
    # dense shared weight must come through a per-series sequence instead
    if isinstance(sigma, np.ndarray) and sigma.shape == (n, q):
        return per_series(sigma)

    if isinstance(sigma, np.ndarray) and sigma.shape in ((q,), (q, q)):
        project = _column_projector(S, sigma)
        return lambda X: project(X.T).T

    if isinstance(sigma, Sequence) or (
        isinstance(sigma, np.ndarray) and sigma.ndim == 3
    ):
        projections = [_column_projector(S, w) for w in sigma]
        if len(projections) != n:
            raise ValidationError(f"{len(projections)} per-series weights for {n} series")

        def apply(X):
            out = np.empty_like(X, dtype=float)
            for i, project in enumerate(projections):
                out[i, :] = project(X[i, :, None])[:, 0]
            return out

        return apply
    shape = getattr(sigma, "shape", None)
    raise ValidationError(f"temporal weights of shape {shape} do not match n={n}, q={q}")


def _oct_projector(ct: CrossTemporalStructure, sigma) -> Projector:
    """One-shot combined projector; sparse constraint form for diagonals."""
    name = _sigma_name(sigma)
    diag = sigma.diag if isinstance(sigma, DiagonalSigma) else np.asarray(sigma, float)
    if diag.ndim == 2:
        return structural_projector(ct.full_summing("ct"), diag, "ct", name)
    if diag.shape != (ct.dim,):
        raise ValidationError(f"covariance length {diag.shape} != ({ct.dim},)")
    if ct.dim <= _DENSE_OCT_CUTOFF:
        return structural_projector(ct.full_summing("ct"), diag, "ct", name)
    return zero_projector(ct.full_constraint("ct"), diag, "ct", name)


def _finish(
    block: ForecastBlock,
    values: np.ndarray,
    method: str,
    covariance: str,
    meter: _Meter,
    iterations: int = 1,
    trace: Sequence[float] = (),
    converged: bool = True,
    flags: Sequence[str] = (),
    iterates=None,
) -> ReconcileReport:
    out = block.with_values(values)
    return ReconcileReport(
        block=out,
        method=method,
        covariance=covariance,
        iterations=iterations,
        trace=tuple(float(g) for g in trace),
        coherence=block.structure.coherence_residuals(out.values),
        elapsed=meter.elapsed,
        peak_mem=meter.peak,
        converged=converged,
        flags=tuple(flags),
        iterates=None if iterates is None else tuple(iterates),
    )


def reconcile_cs(
    block: ForecastBlock, sigma_cs, measure_memory: bool = False
) -> ReconcileReport:
    """Cross-sectionally coherent reconciliation (temporal coherence not enforced)."""
    with _Meter(measure_memory) as meter:
        apply = _cs_applier(block.structure, sigma_cs)
        values = apply(block.values)
        gap = frobenius_gap(values, block.values)
    return _finish(
        block, values, "cs", _sigma_name(sigma_cs), meter,
        trace=[gap], flags=_sigma_flags(sigma_cs),
    )


def reconcile_te(
    block: ForecastBlock, sigma_te, measure_memory: bool = False
) -> ReconcileReport:
    """Temporally coherent reconciliation (cross-sectional coherence not enforced)."""
    with _Meter(measure_memory) as meter:
        apply = _te_applier(block.structure, sigma_te)
        values = apply(block.values)
        gap = frobenius_gap(values, block.values)
    return _finish(
        block, values, "te", _sigma_name(sigma_te), meter,
        trace=[gap], flags=_sigma_flags(sigma_te),
    )


def reconcile_oct(
    block: ForecastBlock, sigma_ct, measure_memory: bool = False
) -> ReconcileReport:
    """One-shot fully coherent reconciliation under the combined covariance."""
    with _Meter(measure_memory) as meter:
        projector = _oct_projector(block.structure, sigma_ct)
        values = block.structure.devectorize(projector(block.vector))
        gap = frobenius_gap(values, block.values)
    return _finish(
        block, values, "oct", _sigma_name(sigma_ct), meter,
        trace=[gap], flags=_sigma_flags(sigma_ct),
    )


def reconcile_seq(
    block: ForecastBlock,
    sigma_cs,
    sigma_te,
    order: str = "cst",
    measure_memory: bool = False,
) -> ReconcileReport:
    """Both uni-dimensional reconciliations once, in the given order.

    "cst" runs cross-sectional then temporal (output exactly temporally
    coherent), "tcs" the reverse. The first dimension's coherence is not
    preserved in general; the report carries the remaining violation.
    """
    _check_order(order)
    with _Meter(measure_memory) as meter:
        cs_step = _cs_applier(block.structure, sigma_cs)
        te_step = _te_applier(block.structure, sigma_te)
        if order == "cst":
            values = te_step(cs_step(block.values))
        else:
            values = cs_step(te_step(block.values))
        gap = frobenius_gap(values, block.values)
    return _finish(
        block, values, f"seq-{order}",
        f"cs={_sigma_name(sigma_cs)},te={_sigma_name(sigma_te)}", meter,
        trace=[gap], flags=_sigma_flags(sigma_cs, sigma_te),
    )


def reconcile_ka(
    block: ForecastBlock,
    w_by_order,
    omega_by_series,
    order: str = "tcs",
    measure_memory: bool = False,
) -> ReconcileReport:
    """Averaging heuristic: one uni-dimensional step, then the other
    dimension's per-order (or per-series) projections averaged into a single
    matrix and applied blockwise.

    "cst" reconciles cross-sectionally, then applies the average of the
    per-series temporal projections; "tcs" reconciles temporally, then
    applies the average of the per-order cross-sectional projections. The
    result's full coherence is verified numerically and flagged if violated.
    """
    _check_order(order)
    ct = block.structure
    if isinstance(w_by_order, DiagonalSigma):
        w_views = w_by_order.per_order()
    elif isinstance(w_by_order, Mapping):
        w_views = dict(w_by_order)
    else:
        raise ValidationError(
            "the averaging heuristic needs one cross-sectional weight per "
            "order: a mapping {order: weight} or a named diagonal covariance"
        )
    if isinstance(omega_by_series, DiagonalSigma):
        omega_views = omega_by_series.per_series()
    elif isinstance(omega_by_series, (Sequence, np.ndarray)) and np.ndim(omega_by_series) >= 2:
        omega_views = omega_by_series
    else:
        raise ValidationError(
            "the averaging heuristic needs one temporal weight per series: "
            "an (n, q) array, a sequence, or a named diagonal covariance"
        )
    with _Meter(measure_memory) as meter:
        if order == "cst":
            cs_step = _cs_applier(ct, w_by_order)
            m_bar = averaged_te_projector(ct.te, list(omega_views))
            values = cs_step(block.values) @ m_bar.T
        else:
            te_step = _te_applier(ct, omega_by_series)
            m_bar = averaged_cs_projector(ct.cs, w_views)
            values = m_bar @ te_step(block.values)
        gap = frobenius_gap(values, block.values)
    flags = list(_sigma_flags(w_by_order, omega_by_series))
    tol = 1e-8 * max(1.0, float(np.abs(values).max()))
    if max(ct.coherence_residuals(values)) > tol:
        flags.append("ka-incoherent")
    return _finish(
        block, values, f"ka-{order}", "per-order/per-series", meter,
        trace=[gap], flags=flags,
    )


def reconcile_iterative(
    block: ForecastBlock,
    sigma_cs,
    sigma_te,
    order: str = "tcs",
    delta: float = ITERATIVE_DEFAULT_DELTA,
    max_iter: int = ITERATIVE_DEFAULT_MAX_ITER,
    criterion: str = "fixed_point",
    keep_iterates: bool = False,
    measure_memory: bool = False,
) -> ReconcileReport:
    """Alternate the two uni-dimensional reconciliations until convergence.

    Each cycle applies both steps in the given order; the trace records the
    Frobenius change per complete cycle. Stopping criteria:

    * ``fixed_point`` (default): the next half-step would move the iterate
      by at most ``delta * max(1, ||x||_F)`` — detects an already-coherent
      fixed point after a single cycle, and the computed half-step is
      reused so nothing is wasted;
    * ``frobenius``: the change made by the cycle is below the same bound;
    * ``incoherence``: the largest constraint violation is below
      ``delta * max(1, max|x|)``.

    On ``max_iter`` without convergence the result is still returned,
    flagged "non-converged". The last half-step of the final cycle makes
    the second dimension's coherence exact; the other dimension's residual
    is reported, never hidden.
    """
    _check_order(order)
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    if max_iter < 1:
        raise ValidationError(f"max_iter must be >= 1, got {max_iter}")
    if criterion not in STOP_CRITERIA:
        raise ValidationError(f"criterion {criterion!r} not in {STOP_CRITERIA}")
    ct = block.structure
    with _Meter(measure_memory) as meter:
        cs_step = _cs_applier(ct, sigma_cs)
        te_step = _te_applier(ct, sigma_te)
        first, second = (cs_step, te_step) if order == "cst" else (te_step, cs_step)

        previous = block.values
        half = first(previous)
        trace, iterates = [], []
        converged = False
        iterations = 0
        for j in range(1, max_iter + 1):
            current = second(half)
            trace.append(float(np.linalg.norm(current - previous)))
            if keep_iterates:
                iterates.append(current.copy())
            iterations = j
            if criterion == "frobenius":
                converged = trace[-1] <= delta * max(
                    1.0, float(np.linalg.norm(previous))
                )
                previous = current
                if converged:
                    break
                half = first(current)
            elif criterion == "incoherence":
                converged = max(ct.coherence_residuals(current)) <= delta * max(
                    1.0, float(np.abs(current).max())
                )
                previous = current
                if converged:
                    break
                half = first(current)
            else:
                next_half = first(current)
                converged = float(np.linalg.norm(next_half - current)) <= delta * max(
                    1.0, float(np.linalg.norm(current))
                )
                previous = current
                if converged:
                    break
                half = next_half
    flags = list(_sigma_flags(sigma_cs, sigma_te))
    if not converged:
        flags.append("non-converged")
    report = _finish(
        block, previous, f"ite-{order}",
        f"cs={_sigma_name(sigma_cs)},te={_sigma_name(sigma_te)}", meter,
        iterations=iterations, trace=trace, converged=converged, flags=flags,
        iterates=iterates if keep_iterates else None,
    )
    return replace(report, delta=delta)


def sntz(report: ReconcileReport, measure_memory: bool = False) -> ReconcileReport:
    """Clamp negative finest-grain bottom values to zero and rebuild upward.

    Expects an already fully coherent input; the output is fully coherent
    by construction and nonnegative at the finest bottom level.
    """
    block = report.block
    ct = block.structure
    with _Meter(measure_memory) as meter:
        bottom = ct.bottom_hf(block.values)
        values = ct.from_bottom_hf(np.maximum(bottom, 0.0))
    out = block.with_values(values)
    return replace(
        report,
        block=out,
        method=report.method + "+sntz",
        coherence=ct.coherence_residuals(values),
        elapsed=report.elapsed + meter.elapsed,
        peak_mem=max(report.peak_mem, meter.peak),
        flags=report.flags + ("sntz",),
    )


def baseline_bu(block: ForecastBlock) -> ForecastBlock:
    """Bottom-up: rebuild everything from the block's own finest bottom values."""
    ct = block.structure
    return block.with_values(ct.from_bottom_hf(ct.bottom_hf(block.values)))


def baseline_pers_bu(
    history: np.ndarray,
    structure: CrossTemporalStructure,
    origin_id: str = "0",
) -> ForecastBlock:
    """Seasonal persistence: repeat the previous cycle's finest bottom
    observations and aggregate bottom-up.

    ``history`` holds at least one full cycle (m columns) of finest-grain
    observations for the bottom series; the trailing cycle is used.
    """
    history = np.asarray(history, dtype=float)
    n_b, m = structure.cs.n_bottom, structure.te.m
    if history.ndim != 2 or history.shape[0] != n_b or history.shape[1] < m:
        raise ValidationError(
            f"history shape {history.shape} does not cover one cycle of "
            f"{m} values for {n_b} bottom series"
        )
    return ForecastBlock(
        structure.from_bottom_hf(history[:, -m:]), structure, origin_id
    )


def run_batch(
    blocks: Iterable[ForecastBlock],
    strategy: Callable[[ForecastBlock], ReconcileReport],
    max_workers: int = 1,
) -> list[ReconcileReport]:
    """Apply one strategy per origin, deterministically ordered by origin id.

    Results do not depend on the worker count: strategies are pure and the
    output order is fixed by sorting.
    """
    blocks = sorted(blocks, key=lambda b: b.origin_id)
    if max_workers <= 1:
        return [strategy(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(strategy, blocks))


def _check_order(order: str) -> None:
    if order not in ("cst", "tcs"):
        raise ValidationError(f"order must be 'cst' or 'tcs', got {order!r}")
