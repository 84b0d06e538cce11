"""Error covariance constructions used by the reconciliation strategies.

Every named rule (identity, structural scaling in three flavors, and
per-series/per-order variance scaling) produces a diagonal matrix. The
diagonal is stored once, in the canonical series-major layout, and can be
viewed per aggregation order (one cross-sectional weight vector per order)
or per series (one temporal weight vector per series). The three framework
variants of a named rule share that diagonal by construction, which is
exactly the premise under which the alternating heuristic converges to the
one-shot solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .hierarchy import CrossTemporalStructure

COVARIANCE_NAMES = ("ols", "str", "str_cs", "str_te", "wlsv")

# Variance floor for degenerate residual cells, relative to the largest cell.
DEFAULT_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class ResidualSet:
    """In-sample one-step-ahead forecast errors from N forecast origins.

    ``blocks`` is (N, n, k_star + m): one error block per origin, laid out
    like a forecast block.
    """

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 3:
            raise ValidationError(f"residuals must be (N, n, q), got {blocks.shape}")
        if blocks.shape[0] < 2:
            raise ValidationError(
                f"variance estimation needs at least 2 origins, got {blocks.shape[0]}"
            )
        if not np.all(np.isfinite(blocks)):
            raise ValidationError("residuals contain non-finite entries")
        blocks = blocks.copy()
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_blocks(cls, blocks: Iterable[np.ndarray]) -> "ResidualSet":
        return cls(np.stack([np.asarray(b, dtype=float) for b in blocks]))

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, n_series: int) -> "ResidualSet":
        """Split a long matrix of vertically stacked origin blocks."""
        stacked = np.asarray(stacked, dtype=float)
        if stacked.ndim != 2 or stacked.shape[0] % n_series != 0:
            raise ValidationError(
                f"stacked residual shape {stacked.shape} does not split into "
                f"blocks of {n_series} rows"
            )
        return cls(stacked.reshape(-1, n_series, stacked.shape[1]))

    @property
    def n_origins(self) -> int:
        return self.blocks.shape[0]


@dataclass(frozen=True)
class DiagonalSigma:
    """A diagonal covariance in the canonical layout, with structure views.

    ``floored`` records (series index, order) cells whose estimated variance
    was lifted to the floor; reconciliation reports surface the flag.
    """

    structure: CrossTemporalStructure
    diag: np.ndarray
    name: str
    framework: str = "ct"
    floored: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.shape != (self.structure.dim,):
            raise ValidationError(
                f"diagonal length {diag.shape} != ({self.structure.dim},)"
            )
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
            raise ValidationError("covariance diagonal must be finite and positive")
        diag = diag.copy()
        diag.setflags(write=False)
        object.__setattr__(self, "diag", diag)

    def cells(self) -> np.ndarray:
        """The diagonal as an (n, q) array mirroring a forecast block."""
        ct = self.structure
        return self.diag.reshape(ct.n_series, ct.n_positions)

    def per_order(self) -> dict[int, np.ndarray]:
        """One cross-sectional weight vector per aggregation order.

        Requires the diagonal to be constant across the positions of each
        order, which holds for every named rule.
        """
        ct, cells = self.structure, self.cells()
        out = {}
        for k in ct.te.orders:
            block = cells[:, ct.te.order_slice(k)]
            if not np.all(block == block[:, :1]):
                raise ValidationError(
                    f"diagonal varies within order {k}; no per-order view exists"
                )
            out[k] = block[:, 0].copy()
        return out

    def per_series(self) -> np.ndarray:
        """One temporal weight vector per series (rows of :meth:`cells`)."""
        return self.cells().copy()


def sigma_ols(ct: CrossTemporalStructure, framework: str = "ct") -> DiagonalSigma:
    """Identity covariance: plain least squares in every framework."""
    return DiagonalSigma(ct, np.ones(ct.dim), name="ols", framework=framework)


def sigma_str(
    ct: CrossTemporalStructure, framework: str = "ct", variant: str = "ct"
) -> DiagonalSigma:
    """Structural scaling: row sums of the summing matrices.

    variant "ct" scales by both factors (the row sums of the combined map),
    "cs" by the cross-sectional factor only, "te" by the temporal one only.
    """
    cs_part = ct.cs.row_sums
    te_part = ct.te.row_sums
    if variant == "ct":
        diag = np.kron(cs_part, te_part)
        name = "str"
    elif variant == "cs":
        diag = np.kron(cs_part, np.ones(ct.n_positions))
        name = "str_cs"
    elif variant == "te":
        diag = np.kron(np.ones(ct.n_series), te_part)
        name = "str_te"
    else:
        raise ValidationError(f"unknown structural variant {variant!r}")
    return DiagonalSigma(ct, diag, name=name, framework=framework)


def sigma_wlsv(
    ct: CrossTemporalStructure,
    residuals: ResidualSet,
    framework: str = "ct",
    floor: float = DEFAULT_VARIANCE_FLOOR,
    center: bool = False,
) -> DiagonalSigma:
    """Series variance scaling: pooled per-(series, order) residual variances.

    For each series and each aggregation order, the variance pools the
    squared residuals over all origins and all positions of that order,
    dividing by the count (zero-mean convention; set ``center=True`` to
    subtract the pooled mean first). Degenerate cells are lifted to
    ``floor`` times the largest cell and flagged.
    """
    blocks = residuals.blocks
    if blocks.shape[1:] != (ct.n_series, ct.n_positions):
        raise ValidationError(
            f"residual blocks {blocks.shape[1:]} do not match the structure "
            f"({ct.n_series}, {ct.n_positions})"
        )
    cells = np.empty((ct.n_series, ct.n_positions))
    floored = []
    by_order = {}
    for k in ct.te.orders:
        cols = ct.te.order_slice(k)
        pool = blocks[:, :, cols]
        if center:
            pool = pool - pool.mean(axis=(0, 2), keepdims=True)
        by_order[k] = (pool**2).mean(axis=(0, 2))
    top = max(v.max() for v in by_order.values())
    eps = floor * (top if top > 0 else 1.0)
    for k, variances in by_order.items():
        low = variances < eps
        if low.any():
            floored.extend((int(i), k) for i in np.flatnonzero(low))
            variances = np.where(low, eps, variances)
        cells[:, ct.te.order_slice(k)] = variances[:, None]
    return DiagonalSigma(
        ct,
        cells.ravel(),
        name="wlsv",
        framework=framework,
        floored=tuple(floored),
    )


def build_sigma(
    name: str,
    ct: CrossTemporalStructure,
    residuals: ResidualSet | None = None,
    framework: str = "ct",
) -> DiagonalSigma:
    """Build a named covariance; wlsv requires residuals."""
    if name == "ols":
        return sigma_ols(ct, framework)
    if name in ("str", "str_cs", "str_te"):
        variant = "ct" if name == "str" else name.split("_")[1]
        return sigma_str(ct, framework, variant=variant)
    if name == "wlsv":
        if residuals is None:
            raise ValidationError("wlsv needs a residual set")
        return sigma_wlsv(ct, residuals, framework)
    raise ValidationError(f"unknown covariance {name!r}; choose from {COVARIANCE_NAMES}")


@dataclass(frozen=True)
class CovarianceSpec:
    """A named covariance construction rule bound to an optional residual set."""

    name: str
    framework: str = "ct"
    residuals: ResidualSet | None = None

    def __post_init__(self):
        if self.name not in COVARIANCE_NAMES:
            raise ValidationError(
                f"unknown covariance {self.name!r}; choose from {COVARIANCE_NAMES}"
            )
        if self.framework not in ("cs", "te", "ct"):
            raise ValidationError(f"unknown framework {self.framework!r}")

    def build(self, ct: CrossTemporalStructure) -> DiagonalSigma:
        return build_sigma(self.name, ct, self.residuals, self.framework)
