"""Truncated singular kernels and their discretized operators.

Kernel families carry declared size/smoothness and lower ellipticity
constants; `check_cz_bounds` and `check_ellipticity` verify them by sampled
finite differences. Operators act by midpoint quadrature over mesh cells,
so truncations must not dip below the mesh scale.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dyadic import Grid
from .haar import HaarSystem, cached_system
from .measure import MeshMeasure

KERNEL_FAMILIES = ("hilbert", "fractional_integral", "riesz_like")

# max |S'| and |S''| of the quintic smoothstep on [0, 1]
_S1_MAX = 15.0 / 8.0
_S2_MAX = 10.0 / np.sqrt(3.0)


class TruncationError(ValueError):
    """Raised when a truncation cannot be resolved on the mesh."""


class BoundViolation(AssertionError):
    """A declared kernel constant failed a sampled check."""


@dataclass(frozen=True)
class Kernel:
    family: str
    lam: float
    dimension: int
    c_cz: float
    stein_c0: float
    grad_c1: float
    direction: tuple
    delta0: float
    sign: float = 1.0

    # -- pointwise evaluation ------------------------------------------------
    def eval(self, x, y) -> np.ndarray:
        """K(x, y) for point arrays of shape (..., n); 0 at x == y."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        r = np.linalg.norm(d, axis=-1)
        alpha = self.lam - self.dimension
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "hilbert":
                val = np.where(r > 0, 1.0 / np.where(d[..., 0] != 0, d[..., 0], 1.0), 0.0)
            elif self.family == "fractional_integral":
                val = np.where(r > 0, np.where(r > 0, r, 1.0) ** alpha, 0.0)
            else:  # riesz_like
                val = np.where(r > 0, d[..., 0] * np.where(r > 0, r, 1.0) ** (alpha - 1.0), 0.0)
        return self.sign * val

    def grad2(self, x, y) -> np.ndarray:
        """Analytic gradient of K in the second argument, shape (..., n)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise ValueError("gradient undefined at coincident points")
        alpha = self.lam - self.dimension
        if self.family == "hilbert":
            out = (1.0 / d) ** 2  # d/dy of 1/(x-y)
        elif self.family == "fractional_integral":
            out = -alpha * r ** (alpha - 2.0) * d
        else:
            out = -(alpha - 1.0) * d[..., :1] * d * r ** (alpha - 3.0)
            out[..., 0] -= (r ** (alpha - 1.0))[..., 0]
        return self.sign * out

    def transpose(self) -> "Kernel":
        """Kernel of the adjoint: K*(x, y) = K(y, x)."""
        if self.family == "fractional_integral":
            return self
        return replace(self, sign=-self.sign)


def make_kernel(family: str, lam: float, dimension: int,
                direction=None) -> Kernel:
    """Build a kernel with analytically derived declared constants."""
    if family not in KERNEL_FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; choose from {KERNEL_FAMILIES}")
    n = dimension
    lam = float(lam)
    if family == "hilbert":
        if n != 1:
            raise ValueError("hilbert kernel requires dimension 1")
        if lam != 0.0:
            raise ValueError("hilbert kernel has lam = 0")
    if not 0.0 <= lam < n:
        raise ValueError(f"lam must satisfy 0 <= lam < {n}, got {lam}")
    if direction is None:
        direction = (1.0,) + (0.0,) * (n - 1)
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    if family == "hilbert":
        c_cz, c0, c1 = 2.0, 1.0, 1.0
    elif family == "fractional_integral":
        a = n - lam
        c_cz = max(1.0, a, a * (a + 3.0))
        c0, c1 = 1.0, a
    else:
        if abs(v[0]) < 0.5:
            raise ValueError("riesz_like ellipticity direction needs |v_1| >= 1/2")
        a = n - lam
        c_cz = max(1.0, n + 2.0 - lam, n * (a + 1.0) * (a + 6.0))
        c0, c1 = float(abs(v[0])), a * float(abs(v[0]))
    delta0 = min(1.0, c1 / (2.0 * c_cz))
    return Kernel(family=family, lam=lam, dimension=n, c_cz=c_cz,
                  stein_c0=c0, grad_c1=c1, direction=tuple(float(t) for t in v),
                  delta0=delta0)


def smoothstep(u) -> np.ndarray:
    """Quintic smoothstep: C^2 ramp from 0 at u<=0 to 1 at u>=1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


@dataclass(frozen=True)
class Truncation:
    eps: float
    rmax: float

    def __post_init__(self):
        if not 0 < self.eps:
            raise ValueError("eps must be positive")
        if self.rmax < 4.0 * self.eps:
            raise ValueError(f"need rmax >= 4*eps for a plateau; got eps={self.eps}, rmax={self.rmax}")

    def scale(self, dist) -> np.ndarray:
        """Radial profile: 0 below eps, rises on [eps, 2eps], 1 through
        rmax/2, falls to 0 at rmax."""
        d = np.asarray(dist, dtype=float)
        rise = smoothstep((d - self.eps) / self.eps)
        fall = 1.0 - smoothstep((d - 0.5 * self.rmax) / (0.5 * self.rmax))
        return rise * fall

    def plateau(self) -> tuple:
        return 2.0 * self.eps, 0.5 * self.rmax

    def profile_factor(self, order: int) -> float:
        """Multiplier on the raw-kernel constant covering profile derivatives."""
        if order == 0:
            return 1.0
        if order == 1:
            return 1.0 + 2.0 * _S1_MAX
        if order == 2:
            return 1.0 + 4.0 * _S1_MAX + 4.0 * _S2_MAX
        raise ValueError("orders above 2 are not declared")


def default_truncation(grid: Grid) -> Truncation:
    return Truncation(eps=4.0 * grid.cell_side, rmax=4.0 * grid.side)


def eval_truncated(kernel: Kernel, trunc: Truncation, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(x - y, axis=-1)
    return kernel.eval(x, y) * trunc.scale(r)


@lru_cache(maxsize=8)
def kernel_matrix(kernel: Kernel, trunc: Truncation, grid: Grid) -> np.ndarray:
    """G[i, j] = truncated kernel between cell centers i and j (C order)."""
    pts = grid.flat_centers
    return points_matrix(kernel, trunc, pts, grid)


def points_matrix(kernel: Kernel, trunc: Truncation, points: np.ndarray,
                  grid: Grid, block: int = 1024) -> np.ndarray:
    """Truncated kernel from mesh cell centers (columns) to `points` (rows)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    centers = grid.flat_centers
    out = np.empty((points.shape[0], centers.shape[0]))
    for start in range(0, points.shape[0], block):
        stop = min(start + block, points.shape[0])
        x = points[start:stop, None, :]
        y = centers[None, :, :]
        r = np.linalg.norm(x - y, axis=-1)
        out[start:stop] = kernel.eval(x, y) * trunc.scale(r)
    return out


def require_resolved(trunc: Truncation, grid: Grid) -> None:
    if trunc.eps < 2.0 * grid.cell_diameter - 1e-12 * grid.side:
        raise TruncationError(
            f"truncation under-resolved: eps={trunc.eps:.3g} is below twice the "
            f"cell diameter {grid.cell_diameter:.3g}"
        )


def apply(kernel: Kernel, trunc: Truncation, sigma: MeshMeasure, f: np.ndarray,
          points: np.ndarray | None = None) -> np.ndarray:
    """Midpoint-quadrature action of the truncated operator on a mesh function.

    With points=None the output is a mesh function (evaluated at every cell
    center); otherwise an array of values at the given points.
    """
    grid = sigma.grid
    require_resolved(trunc, grid)
    fw = np.asarray(f).ravel() * sigma.flat_mass
    if points is None:
        g = kernel_matrix(kernel, trunc, grid)
        return (g @ fw).reshape(grid.mesh_shape)
    g = points_matrix(kernel, trunc, points, grid)
    return g @ fw


@dataclass(eq=False)
class HaarMatrix:
    """Coefficient matrix of the operator between two Haar systems.

    entries[row, col] pairs the col-th wavelet of the source system (mass
    sigma) with the row-th wavelet of the target system (mass omega).
    """

    entries: np.ndarray
    row_labels: list
    col_labels: list
    depth: int
    sigma_system: HaarSystem
    omega_system: HaarSystem
    kernel: "Kernel | None" = None
    trunc: "Truncation | None" = None

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.entries, axis=0)

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.entries, axis=1)


def assemble_haar_matrix(kernel: Kernel, trunc: Truncation, sigma: MeshMeasure,
                         omega: MeshMeasure, depth: int,
                         rotation_seed: int | None = None) -> HaarMatrix:
    if sigma.grid != omega.grid:
        raise ValueError("sigma and omega must share a grid")
    require_resolved(trunc, sigma.grid)
    ssys = cached_system(sigma, depth, rotation_seed)
    osys = cached_system(omega, depth, rotation_seed)
    g = kernel_matrix(kernel, trunc, sigma.grid)
    entries = osys.weighted_matrix @ (g @ ssys.weighted_matrix.T)
    return HaarMatrix(entries=entries, row_labels=osys.wavelet_labels(),
                      col_labels=ssys.wavelet_labels(), depth=depth,
                      sigma_system=ssys, omega_system=osys,
                      kernel=kernel, trunc=trunc)


def save_haar_matrix_csv(matrix: HaarMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_cube", "row_index", "col_cube", "col_index", "value"])
        for i, (rc, ri) in enumerate(matrix.row_labels):
            for j, (cc, ci) in enumerate(matrix.col_labels):
                writer.writerow([rc, ri, cc, ci, repr(float(matrix.entries[i, j]))])


# -- sampled verification of declared constants -------------------------------

@dataclass(frozen=True)
class CZBoundsReport:
    measured: tuple
    declared: tuple
    samples: int
    seed: int
    worst_pair: tuple


def _fd_gradient(fn, x: np.ndarray, h: float) -> np.ndarray:
    n = x.size
    out = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return out


def _fd_hessian(fn, x: np.ndarray, h: float) -> np.ndarray:
    n = x.size
    out = np.zeros((n, n))
    f0 = fn(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        out[i, i] = (fn(x + ei) - 2.0 * f0 + fn(x - ei)) / h ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            out[i, j] = out[j, i] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4.0 * h ** 2)
    return out


def check_cz_bounds(kernel: Kernel, trunc: Truncation, grid: Grid,
                    m_max: int = 2, samples: int = 48, seed: int = 0) -> CZBoundsReport:
    """Sampled size/smoothness check of the truncated kernel.

    Raises BoundViolation naming the worst pair if any sampled ratio exceeds
    the declared constant (with the profile factor folded in).
    """
    if m_max > 2:
        raise ValueError("declared constants cover m <= 2")
    rng = np.random.default_rng(seed)
    n = kernel.dimension
    lo = np.log(1.05 * trunc.eps)
    hi = np.log(0.98 * trunc.rmax)
    measured = [0.0] * (m_max + 1)
    worst = None
    ktr = lambda x, y: float(kernel.eval(x, y) * trunc.scale(np.linalg.norm(x - y)))
    for _ in range(samples):
        x = grid.window_lower + rng.uniform(0.0, 1.0, size=n) * grid.side
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        d = float(np.exp(rng.uniform(lo, hi)))
        y = x - d * u
        fd_h = 1e-5 * d
        for m in range(m_max + 1):
            if m == 0:
                mag = abs(ktr(x, y))
            elif m == 1:
                gx = _fd_gradient(lambda p: ktr(p, y), x, fd_h)
                gy = _fd_gradient(lambda p: ktr(x, p), y, fd_h)
                mag = max(np.linalg.norm(gx), np.linalg.norm(gy))
            else:
                hx = _fd_hessian(lambda p: ktr(p, y), x, fd_h)
                hy = _fd_hessian(lambda p: ktr(x, p), y, fd_h)
                mag = max(np.linalg.norm(hx, 2), np.linalg.norm(hy, 2))
            ratio = mag * d ** (n + m - kernel.lam)
            if ratio > measured[m]:
                measured[m] = ratio
                worst = (tuple(x), tuple(y), m)
    declared = tuple(kernel.c_cz * trunc.profile_factor(m) for m in range(m_max + 1))
    for m in range(m_max + 1):
        if measured[m] > declared[m] * (1.0 + 1e-3):
            raise BoundViolation(
                f"size-smoothness bound violated at order {m}: measured "
                f"{measured[m]:.6g} > declared {declared[m]:.6g} at pair {worst}"
            )
    return CZBoundsReport(measured=tuple(measured), declared=declared,
                          samples=samples, seed=seed, worst_pair=worst)


@dataclass(frozen=True)
class EllipticityReport:
    kappa: int
    inf_sum_ratio: float
    inf_term_ratio: float
    declared: float
    samples: int
    seed: int
    perturbed_inf: float | None


def check_ellipticity(kernel: Kernel, kappa: int, samples: int = 64, seed: int = 0,
                      grid: Grid | None = None, perturb: bool = False) -> EllipticityReport:
    """Lower ellipticity of the raw kernel along its declared direction.

    kappa=0 checks kernel size along v; kappa=1 checks the derivative in the
    step length, both as an infimum of the two-ended sum over sampled
    (base point, t)."""
    if kappa not in (0, 1):
        raise ValueError("kappa must be 0 or 1")
    rng = np.random.default_rng(seed)
    n = kernel.dimension
    side = grid.side if grid is not None else 1.0
    base = grid.window_lower if grid is not None else np.zeros(n)
    v = np.asarray(kernel.direction)
    declared = kernel.grad_c1 if kappa == 1 else kernel.stein_c0
    power = kernel.lam - n - kappa

    def terms(w: np.ndarray, t: float, x: np.ndarray) -> tuple:
        if kappa == 0:
            return (abs(float(kernel.eval(x + t * w, x))),
                    abs(float(kernel.eval(x, x + t * w))))
        h = 1e-5 * t
        d1 = (float(kernel.eval(x + (t + h) * w, x)) - float(kernel.eval(x + (t - h) * w, x))) / (2 * h)
        d2 = (float(kernel.eval(x, x + (t + h) * w)) - float(kernel.eval(x, x + (t - h) * w))) / (2 * h)
        return abs(d1), abs(d2)

    inf_sum = np.inf
    inf_term = np.inf
    for _ in range(samples):
        x = base + rng.uniform(0.0, 1.0, size=n) * side
        t = float(np.exp(rng.uniform(np.log(1e-3 * side), np.log(side))))
        t1, t2 = terms(v, t, x)
        scale_t = t ** (-power)
        ratio = (t1 + t2) * scale_t
        inf_sum = min(inf_sum, ratio)
        inf_term = min(inf_term, t1 * scale_t, t2 * scale_t)
        if ratio < declared * (1.0 - 1e-6):
            raise BoundViolation(
                f"ellipticity violated at (x={tuple(x)}, t={t:.6g}): "
                f"ratio {ratio:.6g} < declared {declared:.6g}"
            )
    perturbed_inf = None
    if perturb and kappa == 1 and n >= 2:
        perturbed_inf = np.inf
        for _ in range(samples):
            x = base + rng.uniform(0.0, 1.0, size=n) * side
            t = float(np.exp(rng.uniform(np.log(1e-3 * side), np.log(side))))
            raw = rng.standard_normal(n)
            raw -= raw @ v * v
            nrm = np.linalg.norm(raw)
            if nrm == 0:
                continue
            w = v + rng.uniform(0.0, 0.999) * kernel.delta0 * raw / nrm
            w = w / np.linalg.norm(w)
            if np.linalg.norm(w - v) >= kernel.delta0:
                continue
            ratio = sum(terms(w, t, x)) * t ** (-power)
            perturbed_inf = min(perturbed_inf, ratio)
            if ratio < 0.5 * declared * (1.0 - 1e-6):
                raise BoundViolation(
                    f"perturbed ellipticity violated at (x={tuple(x)}, t={t:.6g}, "
                    f"w={tuple(w)}): ratio {ratio:.6g} < {0.5 * declared:.6g}"
                )
    return EllipticityReport(kappa=kappa, inf_sum_ratio=float(inf_sum),
                             inf_term_ratio=float(inf_term), declared=declared,
                             samples=samples, seed=seed,
                             perturbed_inf=None if perturbed_inf is None else float(perturbed_inf))


# -- operator norm via eigen-iteration ----------------------------------------

@dataclass(frozen=True)
class PowerIterationResult:
    value: float
    vector: np.ndarray
    iterations: int
    converged: bool


def top_singular_value(entries: np.ndarray, tol: float = 1e-12,
                       max_iter: int = 10000) -> PowerIterationResult:
    """Largest singular value by power iteration on the normal matrix."""
    m = np.asarray(entries, dtype=float)
    if m.size == 0 or not np.any(m):
        return PowerIterationResult(0.0, np.zeros(m.shape[1] if m.ndim == 2 else 0), 0, True)
    col = np.linalg.norm(m, axis=0)
    v = col + 1e-12 * (1.0 + np.arange(m.shape[1]))  # deterministic, generic start
    v /= np.linalg.norm(v)
    prev = 0.0
    for it in range(1, max_iter + 1):
        w = m @ v
        s = float(np.linalg.norm(w))
        u = m.T @ w
        nu = float(np.linalg.norm(u))
        if nu == 0:
            return PowerIterationResult(s, v, it, True)
        v = u / nu
        if it >= 3 and abs(s - prev) <= tol * max(1.0, s):
            return PowerIterationResult(s, v, it, True)
        prev = s
    warnings.warn("power iteration did not converge; returning last iterate")
    return PowerIterationResult(prev, v, max_iter, False)
