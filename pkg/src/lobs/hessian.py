"""Reduced layer Hessians and their recursive pseudo-inverse.

For the layer reconstruction error E = (1/n)||Ẑ - Z||_F² the Hessian with
respect to the layer's parameter vector is block diagonal with one block
per output unit, and every block equals 2Ψ where Ψ = (1/n) Σ_j y_j y_jᵀ is
the autocorrelation of the layer inputs (bias row included).  Only the
single (m+1)×(m+1) block is ever stored; its inverse stands in for the
whole H⁻¹.
"""

from dataclasses import dataclass

import numpy as np

from . import convops
from .errors import NumericalInstabilityError

ALPHA_MIN = 1e4
ALPHA_MAX = 1e8
DEGENERATE_DIAG = 1e-12


@dataclass
class PsiMatrix:
    """Input autocorrelation Ψ of one layer over a probe snapshot."""

    layer_index: int
    psi: np.ndarray
    sample_count: int


@dataclass
class PsiInverse:
    """(Regularized) pseudo-inverse of Ψ; ``alpha`` seeds the recursion.

    ``alpha = 0`` marks an exact inverse injected directly (tests, oracles).
    """

    layer_index: int
    inv: np.ndarray
    alpha: float

    @classmethod
    def exact(cls, psi):
        return cls(psi.layer_index, np.linalg.inv(psi.psi), 0.0)


@dataclass
class PatchSet:
    """Receptive-field columns of a conv input volume, plus bias ones.

    ``origins[k] = (sample, position)`` identifies column k.
    """

    columns: np.ndarray
    origins: np.ndarray


def accumulate_psi(snapshot, deterministic=True, chunk=1024):
    """Average outer product of snapshot input columns.

    Deterministic mode accumulates fixed-size column chunks in column
    order so repeated runs are bitwise identical; fast mode is a single
    GEMM (reassociation differences stay below 1e-12).
    """
    y = snapshot.inputs
    if y.shape[1] == 0:
        raise ValueError("snapshot holds no columns")
    n = y.shape[1]
    if deterministic:
        psi = np.zeros((y.shape[0], y.shape[0]))
        for start in range(0, n, chunk):
            block = y[:, start:start + chunk]
            psi += block @ block.T
        psi /= n
    else:
        psi = (y @ y.T) / n
    return PsiMatrix(snapshot.layer_index, psi, n)


def recursive_psi_inverse(snapshot, alpha=1e6):
    """Rank-one recursion for Ψ⁻¹, consuming one input column per step.

    Starting from αI, each incoming column y performs the Sherman-Morrison
    update for Ψ ← Ψ + (1/n) y yᵀ, so after all n columns the result is the
    inverse of (1/α)I + Ψ — a ridge-regularized pseudo-inverse whose bias
    vanishes as α grows.
    """
    if not (ALPHA_MIN <= alpha <= ALPHA_MAX):
        raise ValueError(f"alpha={alpha} outside [{ALPHA_MIN:g}, {ALPHA_MAX:g}]")
    y = snapshot.inputs
    n = y.shape[1]
    if n == 0:
        raise ValueError("snapshot holds no columns")
    inv = np.eye(y.shape[0]) * alpha
    for j in range(n):
        col = y[:, j]
        v = inv @ col
        denom = n + col @ v
        if not np.isfinite(denom) or denom <= 1e-300:
            raise NumericalInstabilityError(
                f"denominator {denom} at update step {j}", step=j)
        inv -= np.outer(v, v) / denom
    inv = (inv + inv.T) / 2.0
    return PsiInverse(snapshot.layer_index, inv, alpha)


def pinv_diag_entry(pinv, q):
    """Diagonal entry of the implicit block-diagonal inverse at flat index q.

    Every output unit shares one block, so only ``q mod block_size``
    matters: parameter q of block ``q // block_size`` maps to row
    ``r = q % block_size`` of the stored inverse.
    """
    rows = pinv.inv.shape[0]
    r = q % rows
    return pinv.inv[r, r]


def replicate_block_diag(block, n_blocks):
    """Materialize diag(block, ..., block) with ``n_blocks`` copies."""
    m = block.shape[0]
    out = np.zeros((m * n_blocks, m * n_blocks))
    for i in range(n_blocks):
        out[i * m:(i + 1) * m, i * m:(i + 1) * m] = block
    return out


def materialize_error_hessian(psi, n_blocks):
    """Explicit Hessian of the layer reconstruction error.

    The error carries no 1/2 prefactor, so each of the ``n_blocks``
    identical diagonal blocks is 2Ψ.
    """
    return replicate_block_diag(2.0 * psi.psi, n_blocks)


def extract_patches(conv, maps, in_shape, positions_cap=None, seed=0):
    """PatchSet for a batch of (n, c, h, w) input volumes.

    Feeding the columns to :func:`accumulate_psi` yields the conv layer's Ψ
    with effective sample count n × positions.  ``positions_cap`` keeps a
    seeded uniform subset of positions per sample (Ψ is an average over
    positions, so the subsample is unbiased).
    """
    maps = np.asarray(maps, dtype=np.float64)
    n = maps.shape[0]
    columns = convops.im2col(maps, conv, in_shape)
    positions = columns.shape[1] // n
    samples = np.repeat(np.arange(n), positions)
    pos = np.tile(np.arange(positions), n)
    origins = np.stack([samples, pos], axis=1)
    if positions_cap is not None and positions > positions_cap:
        rng = np.random.default_rng(seed)
        keep = np.concatenate([
            j * positions + np.sort(rng.choice(positions, size=positions_cap,
                                               replace=False))
            for j in range(n)])
        columns = columns[:, keep]
        origins = origins[keep]
    return PatchSet(columns, origins)
