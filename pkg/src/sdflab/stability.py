"""Volume-constrained second variation of area and strict stability.

Every surface kind (flat lamella face, circle, cylinder, graph, sampled
curve) is reduced to a :class:`SurfacePatch`: a periodic parameter grid with
per-node measure weights, inverse metric, ``|B|^2`` and unit normal.  The
Jacobi form

    Pi(psi) = int |grad psi|^2 - |B|^2 psi^2 dmu

is discretized with the same spectral first derivatives used everywhere
else, giving a symmetric stiffness matrix ``S`` with ``psi.S.psi = Pi(psi)``
exactly and ``J = diag(w)^-1 S``.

Nyquist modes have vanishing discrete first derivative, so they would show
up as spurious near-zero eigenvectors.  Eigenproblems are therefore posed on
the span of the resolved real Fourier modes (|index| < N/2 on every axis).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, GridMismatchError
from .geometry import (
    CurveCache,
    GeometryCache,
    GraphSurface,
    build_geometry,
    parameter_grid,
)
from .lattice import FlatTorus, PeriodicGrid, psum

ZERO_TOL = 1e-7
MAX_NODES = 20000


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """Discrete data needed by the Jacobi form on one hypersurface."""

    kind: str
    grid: PeriodicGrid
    weights: np.ndarray
    g_inv: np.ndarray
    B_norm2: np.ndarray
    nu: np.ndarray

    @property
    def area(self) -> float:
        return psum(self.weights)

    @property
    def size(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class ReferenceSurface:
    """A constant-mean-curvature critical set.

    ``kind`` is one of ``lamella`` (``grid``), ``circle`` (``radius``,
    ``nodes``), ``cylinder`` (``radius``, ``axis_period``, ``resolution``) or
    ``graph`` (``surface``). ``center`` locates the circle.
    """

    kind: str
    radius: float = 1.0
    nodes: int = 256
    axis_period: float = np.pi
    resolution: tuple[int, ...] = (32, 32)
    grid: Optional[PeriodicGrid] = None
    surface: Optional[GraphSurface] = None
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("lamella", "circle", "cylinder", "graph"):
            raise ConfigError(f"unknown reference kind {self.kind!r}")
        if self.kind == "lamella" and self.grid is None:
            raise ConfigError("lamella reference needs a grid")
        if self.kind == "graph" and self.surface is None:
            raise ConfigError("graph reference needs a surface")
        if self.kind in ("circle", "cylinder") and not self.radius > 0:
            raise ConfigError("radius must be positive")

    @property
    def dimension(self) -> int:
        if self.kind == "circle":
            return 2
        if self.kind == "cylinder":
            return 3
        if self.kind == "lamella":
            return self.grid.dimension + 1
        return self.surface.dimension

    def mean_curvature(self) -> float:
        """Constant mean curvature of the analytic kinds."""
        return {"lamella": 0.0, "circle": 1.0 / self.radius, "cylinder": 1.0 / self.radius}[self.kind]

    def analytic_sigma(self) -> float:
        """Smallest Jacobi eigenvalue on the mean-zero complement of translations."""
        if self.kind == "lamella":
            return min((2 * np.pi / L) ** 2 for L in self.grid.torus.side_lengths)
        R = self.radius
        if self.kind == "circle":
            return 3.0 / R**2
        if self.kind == "cylinder":
            q = (2 * np.pi / self.axis_period) ** 2
            return min(3.0 / R**2, q - 1.0 / R**2, q)
        raise ConfigError("no closed-form spectrum for graph references")

    def patch(self) -> SurfacePatch:
        if self.kind == "lamella":
            grid = self.grid
            d = grid.dimension
            shape = grid.shape
            eye = np.broadcast_to(np.eye(d).reshape((d, d) + (1,) * d), (d, d) + shape).copy()
            nu = np.zeros((d + 1,) + shape)
            nu[d] = 1.0
            return SurfacePatch(
                "lamella", grid, np.full(shape, grid.cell_volume), eye, np.zeros(shape), nu
            )
        if self.kind == "circle":
            grid = parameter_grid(self.nodes)
            (theta,) = grid.coordinates()
            R = self.radius
            return SurfacePatch(
                "circle",
                grid,
                np.full(grid.shape, R * grid.cell_volume),
                np.full((1, 1) + grid.shape, 1.0 / R**2),
                np.full(grid.shape, 1.0 / R**2),
                np.stack([np.cos(theta), np.sin(theta)]),
            )
        if self.kind == "cylinder":
            grid = PeriodicGrid(FlatTorus((2 * np.pi, self.axis_period)), self.resolution)
            theta, _ = grid.coordinates()
            R = self.radius
            g_inv = np.zeros((2, 2) + grid.shape)
            g_inv[0, 0] = 1.0 / R**2
            g_inv[1, 1] = 1.0
            return SurfacePatch(
                "cylinder",
                grid,
                np.full(grid.shape, R * grid.cell_volume),
                g_inv,
                np.full(grid.shape, 1.0 / R**2),
                np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)]),
            )
        return patch_from_cache(build_geometry(self.surface))


def patch_from_cache(cache) -> SurfacePatch:
    if isinstance(cache, GeometryCache):
        return SurfacePatch("graph", cache.grid, cache.weights, cache.g_inv, cache.B_norm2, cache.nu)
    if isinstance(cache, CurveCache):
        return SurfacePatch(
            "curve",
            cache.grid,
            cache.weights,
            (1.0 / cache.speed**2)[None, None],
            cache.kappa**2,
            cache.normal.T.copy(),
        )
    raise TypeError(f"cannot build a surface patch from {type(cache).__name__}")


def as_patch(obj) -> SurfacePatch:
    if isinstance(obj, SurfacePatch):
        return obj
    if isinstance(obj, ReferenceSurface):
        return obj.patch()
    if isinstance(obj, GraphSurface):
        return patch_from_cache(build_geometry(obj))
    return patch_from_cache(obj)


def _field(patch: SurfacePatch, psi) -> np.ndarray:
    arr = np.asarray(psi, dtype=float)
    if arr.shape != patch.grid.shape:
        raise GridMismatchError(f"field shape {arr.shape} does not match grid {patch.grid.shape}")
    return arr


def mu_mean(patch: SurfacePatch, psi) -> float:
    return psum(_field(patch, psi) * patch.weights) / patch.area


def quadratic_form(obj, psi) -> float:
    """``Pi(psi)`` after projecting ``psi`` onto mu-mean zero."""
    patch = as_patch(obj)
    psi = _field(patch, psi)
    psi = psi - mu_mean(patch, psi)
    dpsi = patch.grid.gradient(psi)
    grad2 = np.einsum("i...,ij...,j...->...", dpsi, patch.g_inv, dpsi)
    return psum(patch.weights * (grad2 - patch.B_norm2 * psi**2))


# ---------------------------------------------------------------------------
# translations


@dataclass(frozen=True, eq=False)
class TranslationSubspace:
    """Normal components of translations ``<e_i | nu>`` in a Gram-diagonal frame.

    ``candidates`` are the mean-zero projections of ``nu^i`` in the original
    basis, ``frame`` the orthogonal matrix whose columns are the new basis
    vectors, ``surviving`` the 1-based indices I_E of rotated functions with
    non-negligible mu-norm and ``basis`` those functions.
    """

    candidates: np.ndarray
    gram: np.ndarray
    frame: np.ndarray
    rotated_gram: np.ndarray
    surviving: tuple[int, ...]
    basis: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.surviving)


def translation_basis(obj, rel_tol: float = 1e-8) -> TranslationSubspace:
    patch = as_patch(obj)
    w = patch.weights
    cands = np.stack([c - mu_mean(patch, c) for c in patch.nu])
    n = cands.shape[0]
    gram = np.array([[psum(w * cands[i] * cands[j]) for j in range(n)] for i in range(n)])
    gram = 0.5 * (gram + gram.T)
    vals, frame = np.linalg.eigh(gram)
    # keep the coordinate order where the Gram matrix is already diagonal
    if np.allclose(gram, np.diag(np.diag(gram)), atol=1e-12 * max(1.0, np.abs(gram).max())):
        vals, frame = np.diag(gram).copy(), np.eye(n)
    rotated = np.einsum("ia,i...->a...", frame, cands)
    rgram = frame.T @ gram @ frame
    cutoff = rel_tol * np.sqrt(patch.area)
    keep = [a for a in range(n) if np.sqrt(max(rgram[a, a], 0.0)) > cutoff]
    basis = rotated[keep] if keep else np.zeros((0,) + patch.grid.shape)
    return TranslationSubspace(cands, gram, frame, rgram, tuple(a + 1 for a in keep), basis)


# ---------------------------------------------------------------------------
# Jacobi operator


def fourier_derivative_matrix(n: int, length: float) -> np.ndarray:
    """Dense first-derivative matrix on ``n`` periodic nodes (Nyquist zeroed)."""
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = 0.0
    sym = 1j * k * (2 * np.pi / length)
    eye = np.eye(n)
    return np.real(np.fft.ifft(sym[:, None] * np.fft.fft(eye, axis=0), axis=0))


def resolved_basis_1d(n: int) -> np.ndarray:
    """Orthonormal real Fourier basis without the Nyquist mode, ``(n, n - 1)``."""
    x = 2 * np.pi * np.arange(n) / n
    cols = [np.full(n, 1.0 / np.sqrt(n))]
    for k in range(1, n // 2):
        cols.append(np.sqrt(2.0 / n) * np.cos(k * x))
        cols.append(np.sqrt(2.0 / n) * np.sin(k * x))
    return np.column_stack(cols)


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


@dataclass(eq=False)
class JacobiOperator:
    """``psi -> -Lap_g psi - |B|^2 psi`` as ``diag(w)^-1 S`` with ``S`` symmetric."""

    patch: SurfacePatch
    stiffness: np.ndarray
    weights: np.ndarray
    _basis: Optional[np.ndarray] = field(default=None, repr=False)

    def apply(self, psi) -> np.ndarray:
        v = np.asarray(psi, dtype=float).ravel()
        return (self.stiffness @ v / self.weights).reshape(self.patch.grid.shape)

    def inner(self, u, v) -> float:
        return psum(self.weights * np.asarray(u, dtype=float).ravel() * np.asarray(v, dtype=float).ravel())

    def form(self, psi) -> float:
        v = np.asarray(psi, dtype=float).ravel()
        return float(v @ self.stiffness @ v)

    @property
    def resolved_basis(self) -> np.ndarray:
        if self._basis is None:
            self._basis = _kron_all([resolved_basis_1d(n) for n in self.patch.grid.shape])
        return self._basis

    def reduced(self, constraints=()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stiffness and mass on the resolved space μ-orthogonal to ``constraints``.

        Returns ``(S_z, M_z, B)`` where the columns of ``B`` span the
        constrained space in node coordinates.
        """
        Q = self.resolved_basis
        if len(constraints):
            C = np.stack([(self.weights * np.ravel(c)) @ Q for c in constraints])
            Z = sla.null_space(C)
            B = Q @ Z
        else:
            B = Q
        S = B.T @ self.stiffness @ B
        M = B.T @ (self.weights[:, None] * B)
        return 0.5 * (S + S.T), 0.5 * (M + M.T), B


def assemble_jacobi(obj) -> JacobiOperator:
    patch = as_patch(obj)
    grid = patch.grid
    n = grid.size
    if n > MAX_NODES:
        raise ConfigError(f"{n} nodes exceed the dense limit {MAX_NODES}; use a coarser grid")
    d = grid.dimension
    D = []
    for axis in range(d):
        mats = [np.eye(m) for m in grid.shape]
        mats[axis] = fourier_derivative_matrix(grid.shape[axis], grid.torus.side_lengths[axis])
        D.append(_kron_all(mats))
    w = patch.weights.ravel()
    S = -np.diag(w * patch.B_norm2.ravel())
    for i in range(d):
        for j in range(d):
            a = (w * patch.g_inv[i, j].ravel())[:, None]
            S += D[i].T @ (a * D[j])
    return JacobiOperator(patch, 0.5 * (S + S.T), w)


def _eigh(S, M, count=None):
    if count is not None and count < S.shape[0]:
        return sla.eigh(S, M, subset_by_index=[0, count - 1])
    return sla.eigh(S, M)


def jacobi_spectrum(op: JacobiOperator, count: Optional[int] = None) -> np.ndarray:
    """Eigenvalues of ``J`` on the resolved space, ascending."""
    S, M, _ = op.reduced()
    return _eigh(S, M, count)[0]


def min_eig_T_perp(op: JacobiOperator, subspace: TranslationSubspace) -> tuple[float, np.ndarray]:
    """Smallest Rayleigh quotient of ``Pi`` on mean-zero functions orthogonal to translations.

    The returned eigenfield is normalized to unit ``L^2(mu)`` norm.
    """
    constraints = [np.ones(op.patch.grid.shape)] + list(subspace.basis)
    S, M, B = op.reduced(constraints)
    vals, vecs = _eigh(S, M, 1)
    psi = (B @ vecs[:, 0]).reshape(op.patch.grid.shape)
    psi = psi / np.sqrt(op.inner(psi, psi))
    return float(vals[0]), psi


def group_multiplicities(values, tol: float = ZERO_TOL) -> list[tuple[float, int]]:
    out: list[tuple[float, int]] = []
    for v in values:
        if out and abs(v - out[-1][0]) <= tol * max(1.0, abs(v)):
            val, mult = out[-1]
            out[-1] = (val, mult + 1)
        else:
            out.append((float(v), 1))
    return out


@dataclass(frozen=True, eq=False)
class StabilityReport:
    kind: str
    lowest: list[tuple[float, int]]
    sigma_min: float
    surviving: tuple[int, ...]
    gram: np.ndarray
    classification: str
    near_zero: int
    eigenfield: Optional[np.ndarray] = None
    tol: float = ZERO_TOL

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classification": self.classification,
            "sigma_min": self.sigma_min,
            "tol": self.tol,
            "translation_indices": list(self.surviving),
            "translation_gram": self.gram.tolist(),
            "near_zero_eigenvalues": self.near_zero,
            "lowest_eigenvalues": [{"value": v, "multiplicity": m} for v, m in self.lowest],
        }


def classify(sigma_min: float, mean_zero_spectrum, tol: float = ZERO_TOL) -> str:
    """``strictly_stable`` / ``stable`` / ``unstable`` from sigma on T-perp."""
    if sigma_min > tol:
        return "strictly_stable"
    if sigma_min < -tol or np.min(mean_zero_spectrum) < -tol:
        return "unstable"
    return "stable"


def analyze(obj, tol: float = ZERO_TOL, count: int = 10) -> StabilityReport:
    """Full pipeline: Jacobi operator, translations, sigma on T-perp, classification."""
    patch = as_patch(obj)
    kind = obj.kind if isinstance(obj, ReferenceSurface) else patch.kind
    op = assemble_jacobi(patch)
    sub = translation_basis(patch)
    full = jacobi_spectrum(op)
    S0, M0, _ = op.reduced([np.ones(patch.grid.shape)])
    mean_zero = _eigh(S0, M0, min(count + patch.nu.shape[0], S0.shape[0]))[0]
    sigma, psi = min_eig_T_perp(op, sub)
    near_zero = int(np.sum(np.abs(full) <= 1e-8))
    return StabilityReport(
        kind=kind,
        lowest=group_multiplicities(full[: max(count, 1)], tol),
        sigma_min=sigma,
        surviving=sub.surviving,
        gram=sub.gram,
        classification=classify(sigma, mean_zero, tol),
        near_zero=near_zero,
        eigenfield=psi,
        tol=tol,
    )
