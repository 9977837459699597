"""Size, testing, and operator-norm characteristics for measure pairs.

Every supremum here is a finite search over a declared family: dyadic cubes
down to a depth, optional non-dyadic sample boxes, and sampled coefficient
families. Reports carry the search metadata next to the value so separate
runs stay comparable, and every witness can be re-evaluated independently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .dyadic import DyadicCube, Grid, box_distance
from .haar import cached_system
from .measure import MeshMeasure
from .operators import (
    HaarMatrix,
    Kernel,
    Truncation,
    assemble_haar_matrix,
    kernel_matrix,
    make_kernel,
    require_resolved,
    top_singular_value,
)

__all__ = [
    "CharacteristicReport",
    "LpConfig",
    "QuadraticFamily",
    "conjugate_exponent",
    "validate_offset_family",
    "level_masses",
    "a2_lambda",
    "ap_lambda",
    "haar_testing",
    "haar_testing_dual",
    "lp_haar_testing",
    "lp_haar_testing_dual",
    "cube_testing",
    "operator_norm",
    "matched_haar_testing",
    "quadratic_offset_ap",
    "quadratic_subcube_ap",
    "quadratic_haar_testing",
    "reevaluate",
]


@dataclass
class CharacteristicReport:
    """A named constant together with the configuration that attained it."""

    name: str
    value: float
    witness: dict
    search_space: dict
    seed: int | None = None

    def __post_init__(self):
        if not self.value >= 0.0:
            raise ValueError(f"characteristic value must be >= 0, got {self.value}")

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "witness": self.witness,
            "search_space": self.search_space,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class LpConfig:
    """Exponent pair (p, p') with 1/p + 1/p' = 1."""

    p: float
    p_prime: float | None = None

    def __post_init__(self):
        p = float(self.p)
        if not (1.0 < p < np.inf):
            raise ValueError(f"p must lie in (1, inf), got {p}")
        q = p / (p - 1.0) if self.p_prime is None else float(self.p_prime)
        if abs(1.0 / p + 1.0 / q - 1.0) > 1e-12:
            raise ValueError(f"p'={q} is not conjugate to p={p}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_prime", q)


def conjugate_exponent(p: float) -> float:
    return LpConfig(p).p_prime


@dataclass(frozen=True)
class QuadraticFamily:
    """Cubes with partner cubes (offsets or subcubes) and real coefficients."""

    cubes: tuple
    partners: tuple
    coefficients: tuple

    def __post_init__(self):
        cubes = tuple(str(k) for k in self.cubes)
        partners = tuple(str(k) for k in self.partners)
        coeffs = tuple(float(a) for a in self.coefficients)
        if not len(cubes) == len(partners) == len(coeffs):
            raise ValueError("cubes, partners, coefficients must share a length")
        if len(coeffs) == 0:
            raise ValueError("family must be nonempty")
        if not all(np.isfinite(a) for a in coeffs):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "cubes", cubes)
        object.__setattr__(self, "partners", partners)
        object.__setattr__(self, "coefficients", coeffs)


def validate_offset_family(grid: Grid, family: QuadraticFamily,
                           max_distance: float = 10.0) -> None:
    """Check offset-pair constraints: equal level, disjoint, nearby, no repeats."""
    cubes = [DyadicCube.from_key(grid, k) for k in family.cubes]
    for q, pkey in zip(cubes, family.partners):
        s = DyadicCube.from_key(grid, pkey)
        if s.level != q.level:
            raise ValueError(f"partner {pkey} is not at the level of {q.key()}")
        if s.coords == q.coords:
            raise ValueError(f"partner {pkey} must be disjoint from {q.key()}")
        gap = box_distance(q.lower, q.upper, s.lower, s.upper)
        if gap > max_distance * q.side * (1.0 + 1e-12):
            raise ValueError(f"partner {pkey} lies farther than {max_distance} "
                             f"sides from {q.key()}")
    for a, b in itertools.combinations(cubes, 2):
        if a.contains(b) or b.contains(a):
            raise ValueError(f"family cubes {a.key()} and {b.key()} overlap")


# -- shared helpers ---------------------------------------------------------

def level_masses(measure: MeshMeasure, level: int) -> np.ndarray:
    """Masses of every dyadic cube at one level, indexed by coordinates."""
    grid = measure.grid
    if not 0 <= level <= grid.max_level:
        raise ValueError(f"level {level} outside [0, {grid.max_level}]")
    f = 2 ** (grid.max_level - level)
    n = grid.dimension
    shape = tuple(v for _ in range(n) for v in (2 ** level, f))
    arr = measure.cell_mass.reshape(shape)
    return arr.sum(axis=tuple(2 * i + 1 for i in range(n)))


def _jittered_boxes(grid: Grid, depth: int, count: int, rng) -> list:
    """Non-dyadic axis-parallel cubes inside the window, varied in scale."""
    out = []
    for _ in range(count):
        u = float(rng.uniform(0.0, max(depth, 1)))
        s = grid.side * 2.0 ** (-u)
        frac = rng.uniform(0.0, 1.0, size=grid.dimension)
        lower = grid.window_lower + frac * (grid.side - s)
        out.append((tuple(float(v) for v in lower), float(s)))
    return out


def _check_pair(sigma: MeshMeasure, omega: MeshMeasure) -> Grid:
    if sigma.grid != omega.grid:
        raise ValueError("sigma and omega must share a grid")
    return sigma.grid


def _kernel_spec(kernel: Kernel) -> dict:
    return {
        "family": kernel.family,
        "lambda": kernel.lam,
        "dimension": kernel.dimension,
        "direction": list(kernel.direction),
        "sign": kernel.sign,
    }


def _kernel_from_spec(spec: dict) -> Kernel:
    k = make_kernel(spec["family"], spec["lambda"], spec["dimension"],
                    direction=tuple(spec["direction"]))
    if spec.get("sign", 1.0) != k.sign:
        k = replace(k, sign=float(spec["sign"]))
    return k


def _trunc_spec(trunc: Truncation) -> dict:
    return {"eps": trunc.eps, "rmax": trunc.rmax}


def _trunc_from_spec(spec: dict) -> Truncation:
    return Truncation(eps=float(spec["eps"]), rmax=float(spec["rmax"]))


def _sign_normalized(vec: np.ndarray) -> np.ndarray:
    """Fix the overall sign so the first nonzero entry is positive."""
    v = np.asarray(vec, dtype=float)
    nz = np.nonzero(np.abs(v) > 1e-14)[0]
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


# -- Muckenhoupt characteristics --------------------------------------------

def _size_value(smass: float, wmass: float, volume: float,
                s_expo: float, w_expo: float, vol_expo: float) -> float:
    if volume <= 0.0:
        return 0.0
    return float(smass ** s_expo * wmass ** w_expo / volume ** vol_expo)


def _muckenhoupt_scan(name: str, sigma: MeshMeasure, omega: MeshMeasure,
                      lam: float, s_expo: float, w_expo: float,
                      depth: int | None, jitter_count: int,
                      seed: int) -> CharacteristicReport:
    grid = _check_pair(sigma, omega)
    n = grid.dimension
    if not 0.0 <= lam < n:
        raise ValueError(f"lam must satisfy 0 <= lam < {n}, got {lam}")
    e = 1.0 - lam / n
    depth = grid.max_level if depth is None else int(depth)
    if not 0 <= depth <= grid.max_level:
        raise ValueError(f"depth outside [0, {grid.max_level}]")

    best = -1.0
    witness: dict = {}
    scanned = 0
    for level in range(depth + 1):
        sm = level_masses(sigma, level).ravel()
        wm = level_masses(omega, level).ravel()
        vol = (grid.side / 2 ** level) ** n
        vals = sm ** s_expo * wm ** w_expo / vol ** e
        scanned += vals.size
        j = int(np.argmax(vals))
        if vals[j] > best:
            best = float(vals[j])
            coords = np.unravel_index(j, (2 ** level,) * n)
            cube = DyadicCube(grid, level, tuple(int(c) for c in coords))
            witness = {
                "kind": "dyadic",
                "cube": cube.key(),
                "sigma_mass": float(sm[j]),
                "omega_mass": float(wm[j]),
                "volume": float(vol),
            }
    rng = np.random.default_rng(seed)
    for lower, s in _jittered_boxes(grid, depth, jitter_count, rng):
        upper = tuple(lv + s for lv in lower)
        smass = sigma.box_mass(lower, upper)
        wmass = omega.box_mass(lower, upper)
        vol = s ** n
        v = _size_value(smass, wmass, vol, s_expo, w_expo, e)
        if v > best:
            best = v
            witness = {
                "kind": "box",
                "lower": list(lower),
                "side": s,
                "sigma_mass": smass,
                "omega_mass": wmass,
                "volume": vol,
            }
    witness["lambda"] = lam
    search_space = {
        "depth": depth,
        "dyadic_cubes": scanned,
        "jitter_count": jitter_count,
        "sigma_exponent": s_expo,
        "omega_exponent": w_expo,
    }
    return CharacteristicReport(name, max(best, 0.0), witness, search_space, seed)


def a2_lambda(sigma: MeshMeasure, omega: MeshMeasure, lam: float,
              depth: int | None = None, jitter_count: int = 0,
              seed: int = 0) -> CharacteristicReport:
    """Two-measure size characteristic in square-root form.

    Scans sup over cubes of sqrt of (|Q|_sigma / |Q|^{1-lam/n}) times
    (|Q|_omega / |Q|^{1-lam/n}); the squared value is also recorded.
    """
    rep = _muckenhoupt_scan("a2_lambda", sigma, omega, lam, 0.5, 0.5,
                            depth, jitter_count, seed)
    rep.witness["sqrt_value"] = rep.value
    rep.witness["squared_value"] = rep.value ** 2
    rep.search_space["convention"] = "square-root form; squared value in witness"
    return rep


def ap_lambda(sigma: MeshMeasure, omega: MeshMeasure, lam: float, p: float = 2.0,
              depth: int | None = None, jitter_count: int = 0,
              seed: int = 0) -> CharacteristicReport:
    """Product-form size characteristic |Q|_w^{1/p} |Q|_s^{1/p'} / |Q|^{1-lam/n}.

    At p = 2 this coincides with the square-root form of a2_lambda.
    """
    cfg = LpConfig(p)
    rep = _muckenhoupt_scan("ap_lambda", sigma, omega, lam,
                            1.0 / cfg.p_prime, 1.0 / cfg.p,
                            depth, jitter_count, seed)
    rep.witness["p"] = cfg.p
    rep.search_space["p"] = cfg.p
    rep.search_space["p_prime"] = cfg.p_prime
    rep.search_space["convention"] = "product form"
    return rep


def _evaluate_size_witness(sigma: MeshMeasure, omega: MeshMeasure,
                           witness: dict) -> float:
    grid = _check_pair(sigma, omega)
    n = grid.dimension
    lam = float(witness["lambda"])
    e = 1.0 - lam / n
    p = witness.get("p")
    if p is None:
        s_expo = w_expo = 0.5
    else:
        cfg = LpConfig(float(p))
        s_expo, w_expo = 1.0 / cfg.p_prime, 1.0 / cfg.p
    if witness["kind"] == "dyadic":
        cube = DyadicCube.from_key(grid, witness["cube"])
        sm, wm, vol = sigma.cube_mass(cube), omega.cube_mass(cube), cube.volume
    else:
        lower = np.asarray(witness["lower"], dtype=float)
        upper = lower + float(witness["side"])
        sm, wm = sigma.box_mass(lower, upper), omega.box_mass(lower, upper)
        vol = float(witness["side"]) ** n
    return _size_value(sm, wm, vol, s_expo, w_expo, e)


# -- Haar testing characteristics -------------------------------------------

def _wavelet_images(sigma: MeshMeasure, kernel: Kernel, trunc: Truncation,
                    depth: int):
    """Canonical system plus the operator image of every wavelet (by column)."""
    require_resolved(trunc, sigma.grid)
    system = cached_system(sigma, depth)
    g = kernel_matrix(kernel, trunc, sigma.grid)
    images = g @ system.weighted_matrix.T
    return system, images


def _local_weights(grid: Grid, wflat: np.ndarray, key: str) -> np.ndarray:
    cube = DyadicCube.from_key(grid, key)
    return wflat * cube.indicator().ravel()


def haar_testing(sigma: MeshMeasure, omega: MeshMeasure, kernel: Kernel,
                 trunc: Truncation, mode: str = "global", depth: int = 6,
                 rotation_samples: int = 4, seed: int = 0) -> CharacteristicReport:
    """Largest L2(omega) norm of the operator on a unit wavelet combination.

    For each cube the supremum over all rotations of the wavelet block is the
    top singular value of the weighted image block, computed exactly; the
    rotation_samples argument is recorded for comparability but is subsumed
    by the exact per-cube optimum. mode="local" restricts the output norm to
    the cube itself.
    """
    if mode not in ("global", "local"):
        raise ValueError(f"mode must be 'global' or 'local', got {mode!r}")
    grid = _check_pair(sigma, omega)
    system, images = _wavelet_images(sigma, kernel, trunc, depth)
    wflat = omega.flat_mass
    best = -1.0
    witness: dict = {"cube": None, "coefficients": [], "mode": mode}
    blocks = 0
    for key, (start, count) in system.cube_slots.items():
        if count == 0:
            continue
        blocks += 1
        block = images[:, start:start + count]
        weights = _local_weights(grid, wflat, key) if mode == "local" else wflat
        m = np.sqrt(weights)[:, None] * block
        _, svals, vh = np.linalg.svd(m, full_matrices=False)
        top = float(svals[0])
        if top > best:
            best = top
            vec = _sign_normalized(vh[0])
            witness = {"cube": key, "coefficients": [float(v) for v in vec],
                       "mode": mode}
    search_space = {
        "depth": depth,
        "cube_blocks": blocks,
        "rotation_samples": rotation_samples,
        "per_cube_optimum": "exact",
        "kernel": _kernel_spec(kernel),
        "trunc": _trunc_spec(trunc),
    }
    return CharacteristicReport("haar_testing", max(best, 0.0), witness,
                                search_space, seed)


def haar_testing_dual(sigma: MeshMeasure, omega: MeshMeasure, kernel: Kernel,
                      trunc: Truncation, **kwargs) -> CharacteristicReport:
    """Haar testing for the adjoint: measures swapped, kernel transposed."""
    rep = haar_testing(omega, sigma, kernel.transpose(), trunc, **kwargs)
    rep.name = "dual_haar_testing"
    return rep


def lp_haar_testing(sigma: MeshMeasure, omega: MeshMeasure, kernel: Kernel,
                    trunc: Truncation, p: float = 2.0, mode: str = "global",
                    depth: int = 6, rotation_samples: int = 4,
                    seed: int = 0) -> CharacteristicReport:
    """Largest ratio of Lp(omega) image norm to Lp(sigma) wavelet norm.

    Candidates per cube are the canonical wavelets, seeded random unit
    combinations, and at p = 2 the exact block optimum, which makes the
    value agree with haar_testing there.
    """
    if mode not in ("global", "local"):
        raise ValueError(f"mode must be 'global' or 'local', got {mode!r}")
    cfg = LpConfig(p)
    grid = _check_pair(sigma, omega)
    system, images = _wavelet_images(sigma, kernel, trunc, depth)
    sflat = sigma.flat_mass
    wflat = omega.flat_mass
    values = system.values_matrix
    rng = np.random.default_rng(seed)
    best = -1.0
    witness: dict = {"cube": None, "coefficients": [], "mode": mode, "p": cfg.p}
    for key, (start, count) in system.cube_slots.items():
        if count == 0:
            continue
        block = images[:, start:start + count]
        vblock = values[start:start + count]
        weights = _local_weights(grid, wflat, key) if mode == "local" else wflat
        candidates = [np.eye(count)[j] for j in range(count)]
        if count > 1:
            for _ in range(rotation_samples):
                c = rng.standard_normal(count)
                norm = np.linalg.norm(c)
                if norm > 0:
                    candidates.append(c / norm)
        if cfg.p == 2.0:
            m = np.sqrt(weights)[:, None] * block
            vh = np.linalg.svd(m, full_matrices=False)[2]
            candidates.append(_sign_normalized(vh[0]))
        for c in candidates:
            f = vblock.T @ c
            den = float(np.sum(sflat * np.abs(f) ** cfg.p)) ** (1.0 / cfg.p)
            if den <= 0.0:
                continue
            num = float(np.sum(weights * np.abs(block @ c) ** cfg.p)) ** (1.0 / cfg.p)
            ratio = num / den
            if ratio > best:
                best = ratio
                witness = {"cube": key, "coefficients": [float(v) for v in c],
                           "mode": mode, "p": cfg.p}
    search_space = {
        "depth": depth,
        "rotation_samples": rotation_samples,
        "p": cfg.p,
        "kernel": _kernel_spec(kernel),
        "trunc": _trunc_spec(trunc),
    }
    return CharacteristicReport("lp_haar_testing", max(best, 0.0), witness,
                                search_space, seed)


def lp_haar_testing_dual(sigma: MeshMeasure, omega: MeshMeasure, kernel: Kernel,
                         trunc: Truncation, p: float = 2.0,
                         **kwargs) -> CharacteristicReport:
    """Dual Lp Haar testing: conjugate exponent, swapped measures, transpose."""
    rep = lp_haar_testing(omega, sigma, kernel.transpose(), trunc,
                          p=conjugate_exponent(p), **kwargs)
    rep.name = "dual_lp_haar_testing"
    return rep


def _evaluate_haar_witness(sigma: MeshMeasure, omega: MeshMeasure,
                           kernel: Kernel, trunc: Truncation, depth: int,
                           witness: dict, p: float = 2.0) -> float:
    grid = _check_pair(sigma, omega)
    system, images = _wavelet_images(sigma, kernel, trunc, depth)
    start, count = system.cube_slots[witness["cube"]]
    c = np.asarray(witness["coefficients"], dtype=float)
    block = images[:, start:start + count]
    wflat = omega.flat_mass
    weights = (_local_weights(grid, wflat, witness["cube"])
               if witness.get("mode") == "local" else wflat)
    num = float(np.sum(weights * np.abs(block @ c) ** p)) ** (1.0 / p)
    f = system.values_matrix[start:start + count].T @ c
    den = float(np.sum(sigma.flat_mass * np.abs(f) ** p)) ** (1.0 / p)
    if witness.get("p") is None:
        # L2-normalized convention: unit coefficient vectors, no denominator
        return num
    return num / den if den > 0 else 0.0


# -- cube testing -------------------------------------------------------------

def _restriction_weights(grid: Grid, wflat: np.ndarray, mode: str,
                         cube: DyadicCube | None = None,
                         box: tuple | None = None) -> np.ndarray:
    if mode == "global":
        return wflat
    if cube is not None:
        if mode == "local":
            return wflat * cube.indicator().ravel()
        lo, hi = cube.triple_box()
    else:
        lower = np.asarray(box[0], dtype=float)
        s = float(box[1])
        if mode == "local":
            lo, hi = lower, lower + s
        else:
            center = lower + 0.5 * s
            lo, hi = center - 1.5 * s, center + 1.5 * s
    frac, _ = grid.box_fractions(lo, hi)
    return wflat * frac.ravel()


def cube_testing(sigma: MeshMeasure, omega: MeshMeasure, kernel: Kernel,
                 trunc: Truncation, mode: str = "global", depth: int = 6,
                 p: float = 2.0, jitter_count: int = 0,
                 seed: int = 0) -> CharacteristicReport:
    """Largest normalized Lp(omega) norm of the operator on cube indicators.

    The test function on a cube I is its indicator scaled by |I|_sigma^{-1/p};
    mode picks the output restriction: none, the concentric triple, or I
    itself. jitter_count adds non-dyadic sample cubes (fractional indicators
    at mesh resolution).
    """
    if mode not in ("global", "triple", "local"):
        raise ValueError(f"mode must be global/triple/local, got {mode!r}")
    cfg = LpConfig(p)
    grid = _check_pair(sigma, omega)
    require_resolved(trunc, grid)
    if not 0 <= depth <= grid.max_level:
        raise ValueError(f"depth outside [0, {grid.max_level}]")
    g = kernel_matrix(kernel, trunc, grid)
    sflat = sigma.flat_mass
    wflat = omega.flat_mass
    best = -1.0
    witness: dict = {}
    scanned = 0
    for level in range(depth + 1):
        for cube in grid.cubes_at_level(level):
            smass = sigma.cube_mass(cube)
            if smass <= 0.0:
                continue
            scanned += 1
            tvals = g @ (cube.indicator().ravel() * sflat)
            weights = _restriction_weights(grid, wflat, mode, cube=cube)
            num = float(np.sum(weights * np.abs(tvals) ** cfg.p)) ** (1.0 / cfg.p)
            val = num / smass ** (1.0 / cfg.p)
            if val > best:
                best = val
                witness = {"kind": "dyadic", "cube": cube.key(),
                           "mode": mode, "p": cfg.p}
    rng = np.random.default_rng(seed)
    for lower, s in _jittered_boxes(grid, depth, jitter_count, rng):
        upper = tuple(lv + s for lv in lower)
        smass = sigma.box_mass(lower, upper)
        if smass <= 0.0:
            continue
        scanned += 1
        frac, _ = grid.box_fractions(np.asarray(lower), np.asarray(upper))
        tvals = g @ (frac.ravel() * sflat)
        weights = _restriction_weights(grid, wflat, mode, box=(lower, s))
        num = float(np.sum(weights * np.abs(tvals) ** cfg.p)) ** (1.0 / cfg.p)
        val = num / smass ** (1.0 / cfg.p)
        if val > best:
            best = val
            witness = {"kind": "box", "lower": list(lower), "side": s,
                       "mode": mode, "p": cfg.p}
    search_space = {
        "depth": depth,
        "cubes_scanned": scanned,
        "jitter_count": jitter_count,
        "mode": mode,
        "p": cfg.p,
        "restriction": "clipped to window",
        "kernel": _kernel_spec(kernel),
        "trunc": _trunc_spec(trunc),
    }
    return CharacteristicReport("cube_testing", max(best, 0.0), witness,
                                search_space, seed)


def _evaluate_cube_witness(sigma: MeshMeasure, omega: MeshMeasure,
                           kernel: Kernel, trunc: Truncation,
                           witness: dict) -> float:
    grid = _check_pair(sigma, omega)
    g = kernel_matrix(kernel, trunc, grid)
    p = float(witness["p"])
    mode = witness["mode"]
    if witness["kind"] == "dyadic":
        cube = DyadicCube.from_key(grid, witness["cube"])
        smass = sigma.cube_mass(cube)
        ind = cube.indicator().ravel()
        weights = _restriction_weights(grid, omega.flat_mass, mode, cube=cube)
    else:
        lower = np.asarray(witness["lower"], dtype=float)
        s = float(witness["side"])
        smass = sigma.box_mass(lower, lower + s)
        frac, _ = grid.box_fractions(lower, lower + s)
        ind = frac.ravel()
        weights = _restriction_weights(grid, omega.flat_mass, mode,
                                       box=(lower, s))
    if smass <= 0.0:
        return 0.0
    tvals = g @ (ind * sigma.flat_mass)
    num = float(np.sum(weights * np.abs(tvals) ** p)) ** (1.0 / p)
    return num / smass ** (1.0 / p)


# -- operator norm and matched testing ----------------------------------------

def _matrix_metadata(matrix: HaarMatrix) -> dict:
    meta = {
        "depth": matrix.depth,
        "rotation_seed": matrix.sigma_system.rotation_seed,
    }
    if matrix.kernel is not None:
        meta["kernel"] = _kernel_spec(matrix.kernel)
    if matrix.trunc is not None:
        meta["trunc"] = _trunc_spec(matrix.trunc)
    return meta


def operator_norm(matrix: HaarMatrix, tol: float = 1e-12,
                  max_iters: int = 10000) -> CharacteristicReport:
    """Largest singular value of the coefficient matrix by power iteration."""
    res = top_singular_value(matrix.entries, tol=tol, max_iter=max_iters)
    v = np.asarray(res.vector, dtype=float)
    norm = np.linalg.norm(v)
    if v.size and norm > 0:
        v = _sign_normalized(v / norm)
        value = float(np.linalg.norm(matrix.entries @ v))
    else:
        value = 0.0
    witness = {"side": "source", "coefficients": [float(x) for x in v]}
    search_space = _matrix_metadata(matrix)
    search_space.update({
        "rows": int(matrix.entries.shape[0]),
        "cols": int(matrix.entries.shape[1]),
        "tol": tol,
        "max_iters": max_iters,
        "iterations": res.iterations,
        "converged": bool(res.converged),
    })
    return CharacteristicReport("operator_norm", value, witness, search_space)


def _group_blocks(labels: list) -> dict:
    groups: dict = {}
    for idx, (key, _windex) in enumerate(labels):
        groups.setdefault(key, []).append(idx)
    return groups


def matched_haar_testing(matrix: HaarMatrix,
                         dual: bool = False) -> CharacteristicReport:
    """Largest per-cube block norm of the coefficient matrix.

    Grouping columns by source cube gives the testing constant in the same
    truncated coordinates as the operator norm, so it never exceeds the
    matrix norm; dual=True groups rows by target cube for the adjoint.
    The block optimum covers every rotation of the cube's wavelets.
    """
    labels = matrix.row_labels if dual else matrix.col_labels
    groups = _group_blocks(labels)
    best = -1.0
    witness: dict = {}
    for key, idx in groups.items():
        block = matrix.entries[idx, :].T if dual else matrix.entries[:, idx]
        _, svals, vh = np.linalg.svd(block, full_matrices=False)
        top = float(svals[0])
        if top > best:
            best = top
            vec = _sign_normalized(vh[0])
            witness = {"cube": key, "side": "row" if dual else "column",
                       "coefficients": [float(v) for v in vec]}
    name = "dual_haar_testing_matched" if dual else "haar_testing_matched"
    search_space = _matrix_metadata(matrix)
    search_space.update({"cube_blocks": len(groups), "per_cube_optimum": "exact"})
    return CharacteristicReport(name, max(best, 0.0), witness, search_space)


def _evaluate_matrix_witness(matrix: HaarMatrix, witness: dict) -> float:
    c = np.asarray(witness["coefficients"], dtype=float)
    side = witness.get("side", "source")
    if side == "source":
        return float(np.linalg.norm(matrix.entries @ c))
    if side == "column":
        idx = _group_blocks(matrix.col_labels)[witness["cube"]]
        return float(np.linalg.norm(matrix.entries[:, idx] @ c))
    idx = _group_blocks(matrix.row_labels)[witness["cube"]]
    return float(np.linalg.norm(matrix.entries[idx, :].T @ c))


# -- quadratic characteristics -------------------------------------------------

def _offset_partner_coords(level: int, coords: tuple, n: int,
                           max_distance: float) -> list:
    top = 2 ** level
    reach = int(np.ceil(max_distance)) + 1
    out = []
    for delta in itertools.product(range(-reach, reach + 1), repeat=n):
        if all(d == 0 for d in delta):
            continue
        cand = tuple(c + d for c, d in zip(coords, delta))
        if any(not 0 <= cc < top for cc in cand):
            continue
        gap2 = sum(max(abs(d) - 1, 0) ** 2 for d in delta)
        if gap2 <= max_distance ** 2 + 1e-9:
            out.append(cand)
    return out


def _offset_family_value(sigma: MeshMeasure, omega: MeshMeasure, lam: float,
                         p: float, cubes: list, partners: list,
                         coeffs: np.ndarray) -> float:
    grid = sigma.grid
    e = 1.0 - lam / grid.dimension
    num_f = np.zeros(grid.mesh_shape)
    den_f = np.zeros(grid.mesh_shape)
    for q, s, a in zip(cubes, partners, coeffs):
        smass = sigma.cube_mass(s)
        es = smass / s.volume ** e
        num_f[q.slices()] += (a * es) ** 2
        den_f[s.slices()] += a ** 2
    num = float(np.sum(omega.flat_mass * num_f.ravel() ** (p / 2.0))) ** (1.0 / p)
    den = float(np.sum(sigma.flat_mass * den_f.ravel() ** (p / 2.0))) ** (1.0 / p)
    return num / den if den > 0.0 else 0.0


def quadratic_offset_ap(sigma: MeshMeasure, omega: MeshMeasure, lam: float,
                        p: float = 2.0, depth: int | None = None,
                        max_distance: float = 10.0, family_count: int = 32,
                        seed: int = 0) -> CharacteristicReport:
    """Vector-valued size characteristic over equal-size nearby cube pairs.

    Pairs (I, I*) run over same-level disjoint dyadic cubes within
    max_distance sidelengths (enumerated exhaustively per cube); families
    combine disjoint cubes with seeded coefficients. Singleton families are
    always included, so the value dominates the scalar pair ratio.
    """
    cfg = LpConfig(p)
    grid = _check_pair(sigma, omega)
    n = grid.dimension
    if not 0.0 <= lam < n:
        raise ValueError(f"lam must satisfy 0 <= lam < {n}, got {lam}")
    e = 1.0 - lam / n
    depth = grid.max_level if depth is None else int(depth)
    if not 1 <= depth <= grid.max_level:
        raise ValueError(f"depth outside [1, {grid.max_level}]")

    best_partner: dict = {}
    scalar_best = -1.0
    scalar_pair: tuple | None = None
    pair_count = 0
    sm_by_level = {lv: level_masses(sigma, lv) for lv in range(depth + 1)}
    wm_by_level = {lv: level_masses(omega, lv) for lv in range(depth + 1)}
    for level in range(1, depth + 1):
        sm = sm_by_level[level]
        wm = wm_by_level[level]
        vol = (grid.side / 2 ** level) ** n
        for coords in itertools.product(range(2 ** level), repeat=n):
            plist = _offset_partner_coords(level, coords, n, max_distance)
            if not plist:
                continue
            pair_count += len(plist)
            parr = np.array(plist)
            svals = sm[tuple(parr.T)]
            ratios = (svals ** (1.0 / cfg.p_prime) * wm[coords] ** (1.0 / cfg.p)
                      / vol ** e)
            j = int(np.argmax(ratios))
            key = DyadicCube(grid, level, coords).key()
            pkey = DyadicCube(grid, level, tuple(int(c) for c in plist[j])).key()
            best_partner[key] = pkey
            if ratios[j] > scalar_best:
                scalar_best = float(ratios[j])
                scalar_pair = (key, pkey)
    scalar_best = max(scalar_best, 0.0)

    best = scalar_best
    family_witness: dict = {}
    if scalar_pair is not None:
        family_witness = {"cubes": [scalar_pair[0]], "partners": [scalar_pair[1]],
                          "coefficients": [1.0]}

    def consider(cubes, partners, coeffs):
        nonlocal best, family_witness
        val = _offset_family_value(sigma, omega, lam, cfg.p,
                                   cubes, partners, coeffs)
        if val > best:
            best = val
            family_witness = {
                "cubes": [q.key() for q in cubes],
                "partners": [s.key() for s in partners],
                "coefficients": [float(a) for a in coeffs],
            }

    # deterministic sibling families: the children of each parent, each with
    # its best partner and unit coefficients
    families = 0
    for level in range(0, depth):
        for parent in grid.cubes_at_level(level):
            members, partners = [], []
            for child in parent.children():
                pkey = best_partner.get(child.key())
                if pkey is not None:
                    members.append(child)
                    partners.append(DyadicCube.from_key(grid, pkey))
            if len(members) >= 2:
                families += 1
                consider(members, partners, np.ones(len(members)))

    rng = np.random.default_rng(seed)
    for _ in range(family_count):
        level = int(rng.integers(1, depth + 1))
        total = 2 ** (n * level)
        k = int(rng.integers(2, min(6, total) + 1))
        flats = rng.choice(total, size=k, replace=False)
        members, partners = [], []
        for f in np.sort(flats):
            coords = tuple(int(c) for c in
                           np.unravel_index(int(f), (2 ** level,) * n))
            plist = _offset_partner_coords(level, coords, n, max_distance)
            if not plist:
                continue
            pick = plist[int(rng.integers(0, len(plist)))]
            members.append(DyadicCube(grid, level, coords))
            partners.append(DyadicCube(grid, level, pick))
        if len(members) >= 2:
            families += 1
            coeffs = rng.uniform(0.2, 1.0, size=len(members))
            consider(members, partners, coeffs)
            consider(members, partners, np.ones(len(members)))

    witness = dict(family_witness)
    witness.update({"variant": "offset", "lambda": lam, "p": cfg.p,
                    "singleton_value": scalar_best})
    search_space = {
        "depth": depth,
        "max_distance": max_distance,
        "pairs_scanned": pair_count,
        "families_evaluated": families,
        "family_count": family_count,
        "p": cfg.p,
    }
    return CharacteristicReport("quadratic_offset_ap", best, witness,
                                search_space, seed)


def _subcube_family_value(sigma: MeshMeasure, omega: MeshMeasure, lam: float,
                          p: float, cubes: list, subcubes: list,
                          coeffs: np.ndarray) -> float:
    grid = sigma.grid
    e = 1.0 - lam / grid.dimension
    num_f = np.zeros(grid.mesh_shape)
    den_f = np.zeros(grid.mesh_shape)
    for q, j, a in zip(cubes, subcubes, coeffs):
        smass = sigma.cube_mass(j)
        es = smass / j.volume ** e
        num_f[q.slices()] += (a * es) ** 2
        den_f[j.slices()] += a ** 2
    num = float(np.sum(omega.flat_mass * num_f.ravel() ** (p / 2.0))) ** (1.0 / p)
    den = float(np.sum(sigma.flat_mass * den_f.ravel() ** (p / 2.0))) ** (1.0 / p)
    return num / den if den > 0.0 else 0.0


def quadratic_subcube_ap(sigma: MeshMeasure, omega: MeshMeasure, lam: float,
                         p: float = 2.0, depth: int | None = None,
                         max_generation: int = 2, family_count: int = 32,
                         seed: int = 0) -> CharacteristicReport:
    """Vector-valued size characteristic with dyadic subcubes as partners.

    Pairs (I, J) run over cubes to the depth and their dyadic subcubes down
    to max_generation levels (generation 0 recovers the plain pair I = J,
    so the value dominates the product-form characteristic at this depth).
    """
    cfg = LpConfig(p)
    grid = _check_pair(sigma, omega)
    n = grid.dimension
    if not 0.0 <= lam < n:
        raise ValueError(f"lam must satisfy 0 <= lam < {n}, got {lam}")
    e = 1.0 - lam / n
    depth = grid.max_level if depth is None else int(depth)
    if not 0 <= depth <= grid.max_level:
        raise ValueError(f"depth outside [0, {grid.max_level}]")

    max_lv = min(depth + max_generation, grid.max_level)
    sm_by_level = {lv: level_masses(sigma, lv) for lv in range(max_lv + 1)}
    wm_by_level = {lv: level_masses(omega, lv) for lv in range(max_lv + 1)}

    scalar_best = -1.0
    scalar_pair: tuple | None = None
    best_sub: dict = {}
    pair_count = 0
    for level in range(depth + 1):
        wm = wm_by_level[level]
        for cube in grid.cubes_at_level(level):
            wmass = wm[cube.coords]
            top_ratio, top_key = -1.0, None
            for gen in range(0, min(max_generation, grid.max_level - level) + 1):
                sub_level = level + gen
                sm = sm_by_level[sub_level]
                vol = (grid.side / 2 ** sub_level) ** n
                sl = tuple(slice(c * 2 ** gen, (c + 1) * 2 ** gen)
                           for c in cube.coords)
                blockm = sm[sl].ravel()
                pair_count += blockm.size
                ratios = (blockm ** (1.0 / cfg.p_prime)
                          * wmass ** (1.0 / cfg.p) / vol ** e)
                j = int(np.argmax(ratios))
                if ratios[j] > top_ratio:
                    top_ratio = float(ratios[j])
                    offs = np.unravel_index(j, (2 ** gen,) * n)
                    coords = tuple(c * 2 ** gen + int(o)
                                   for c, o in zip(cube.coords, offs))
                    top_key = DyadicCube(grid, sub_level, coords).key()
            if top_key is None:
                continue
            best_sub[cube.key()] = top_key
            if top_ratio > scalar_best:
                scalar_best = top_ratio
                scalar_pair = (cube.key(), top_key)
    scalar_best = max(scalar_best, 0.0)

    best = scalar_best
    family_witness: dict = {}
    if scalar_pair is not None:
        family_witness = {"cubes": [scalar_pair[0]], "partners": [scalar_pair[1]],
                          "coefficients": [1.0]}

    def consider(cubes, subs, coeffs):
        nonlocal best, family_witness
        val = _subcube_family_value(sigma, omega, lam, cfg.p, cubes, subs, coeffs)
        if val > best:
            best = val
            family_witness = {
                "cubes": [q.key() for q in cubes],
                "partners": [s.key() for s in subs],
                "coefficients": [float(a) for a in coeffs],
            }

    families = 0
    for level in range(0, depth):
        for parent in grid.cubes_at_level(level):
            members, subs = [], []
            for child in parent.children():
                skey = best_sub.get(child.key())
                if skey is not None:
                    members.append(child)
                    subs.append(DyadicCube.from_key(grid, skey))
            if len(members) >= 2:
                families += 1
                consider(members, subs, np.ones(len(members)))

    rng = np.random.default_rng(seed)
    for _ in range(family_count):
        level = int(rng.integers(0, depth + 1))
        total = 2 ** (n * level)
        k = int(rng.integers(1, min(6, total) + 1))
        flats = rng.choice(total, size=k, replace=False)
        members, subs = [], []
        for f in np.sort(flats):
            coords = tuple(int(c) for c in
                           np.unravel_index(int(f), (2 ** level,) * n))
            cube = DyadicCube(grid, level, coords)
            gen = int(rng.integers(0, min(max_generation,
                                          grid.max_level - level) + 1))
            offs = tuple(int(rng.integers(0, 2 ** gen)) for _ in range(n))
            sub = DyadicCube(grid, level + gen,
                             tuple(c * 2 ** gen + o
                                   for c, o in zip(coords, offs)))
            members.append(cube)
            subs.append(sub)
        if members:
            families += 1
            coeffs = rng.uniform(0.2, 1.0, size=len(members))
            consider(members, subs, coeffs)
            consider(members, subs, np.ones(len(members)))

    witness = dict(family_witness)
    witness.update({"variant": "subcube", "lambda": lam, "p": cfg.p,
                    "singleton_value": scalar_best})
    search_space = {
        "depth": depth,
        "max_generation": max_generation,
        "pairs_scanned": pair_count,
        "families_evaluated": families,
        "family_count": family_count,
        "p": cfg.p,
    }
    return CharacteristicReport("quadratic_subcube_ap", best, witness,
                                search_space, seed)


def _evaluate_quadratic_witness(sigma: MeshMeasure, omega: MeshMeasure,
                                witness: dict) -> float:
    grid = _check_pair(sigma, omega)
    lam = float(witness["lambda"])
    p = float(witness["p"])
    cubes = [DyadicCube.from_key(grid, k) for k in witness["cubes"]]
    partners = [DyadicCube.from_key(grid, k) for k in witness["partners"]]
    coeffs = np.asarray(witness["coefficients"], dtype=float)
    if witness["variant"] == "offset":
        return _offset_family_value(sigma, omega, lam, p, cubes, partners, coeffs)
    return _subcube_family_value(sigma, omega, lam, p, cubes, partners, coeffs)


def _haar_family_value(images: np.ndarray, values: np.ndarray,
                       slots: dict, sflat: np.ndarray, wflat: np.ndarray,
                       members: list, weights: np.ndarray, p: float) -> float:
    num_f = np.zeros(images.shape[0])
    den_f = np.zeros(images.shape[0])
    for (key, coeffs), a in zip(members, weights):
        start, count = slots[key]
        c = np.asarray(coeffs, dtype=float)
        u = images[:, start:start + count] @ c
        h = values[start:start + count].T @ c
        num_f += (a * u) ** 2
        den_f += (a * h) ** 2
    num = float(np.sum(wflat * num_f ** (p / 2.0))) ** (1.0 / p)
    den = float(np.sum(sflat * den_f ** (p / 2.0))) ** (1.0 / p)
    return num / den if den > 0.0 else 0.0


def quadratic_haar_testing(sigma: MeshMeasure, omega: MeshMeasure,
                           kernel: Kernel, trunc: Truncation, p: float = 2.0,
                           depth: int = 6, family_count: int = 32,
                           seed: int = 0) -> CharacteristicReport:
    """Vector-valued Haar testing over families of disjoint cubes.

    Each family member is a unit wavelet combination on its cube; the value
    compares the pointwise square sum of the images against that of the
    wavelets, both in Lp. Singleton members include the exact per-cube
    optimum, so at p = 2 the value matches scalar haar_testing.
    """
    cfg = LpConfig(p)
    grid = _check_pair(sigma, omega)
    system, images = _wavelet_images(sigma, kernel, trunc, depth)
    sflat = sigma.flat_mass
    wflat = omega.flat_mass
    values = system.values_matrix
    slots = system.cube_slots
    sqrtw = np.sqrt(wflat)

    member_best: dict = {}
    scalar_best = -1.0
    scalar_member: tuple | None = None
    by_level: dict = {}
    for key, (start, count) in slots.items():
        if count == 0:
            continue
        level = int(key.split(":", 1)[0])
        by_level.setdefault(level, []).append(key)
        block = images[:, start:start + count]
        vblock = values[start:start + count]
        candidates = [np.eye(count)[j] for j in range(count)]
        if count > 1:
            m = sqrtw[:, None] * block
            vh = np.linalg.svd(m, full_matrices=False)[2]
            candidates.append(_sign_normalized(vh[0]))
        top_val, top_c = -1.0, None
        for c in candidates:
            f = vblock.T @ c
            den = float(np.sum(sflat * np.abs(f) ** cfg.p)) ** (1.0 / cfg.p)
            if den <= 0.0:
                continue
            num = float(np.sum(wflat * np.abs(block @ c) ** cfg.p)) ** (1.0 / cfg.p)
            ratio = num / den
            if ratio > top_val:
                top_val, top_c = ratio, c
        if top_c is None:
            continue
        member_best[key] = [float(v) for v in top_c]
        if top_val > scalar_best:
            scalar_best = top_val
            scalar_member = (key, member_best[key])
    scalar_best = max(scalar_best, 0.0)

    best = scalar_best
    witness_members: list = []
    witness_weights: list = [1.0]
    if scalar_member is not None:
        witness_members = [{"cube": scalar_member[0],
                            "coefficients": scalar_member[1]}]

    def consider(keys, weights):
        nonlocal best, witness_members, witness_weights
        members = [(k, member_best[k]) for k in keys]
        val = _haar_family_value(images, values, slots, sflat, wflat,
                                 members, weights, cfg.p)
        if val > best:
            best = val
            witness_members = [{"cube": k, "coefficients": member_best[k]}
                               for k in keys]
            witness_weights = [float(a) for a in weights]

    families = 0
    for level in sorted(by_level):
        keys = by_level[level]
        if len(keys) >= 2:
            families += 1
            consider(keys, np.ones(len(keys)))

    rng = np.random.default_rng(seed)
    levels = sorted(by_level)
    for _ in range(family_count):
        level = levels[int(rng.integers(0, len(levels)))]
        keys = by_level[level]
        k = int(rng.integers(1, min(6, len(keys)) + 1))
        picks = sorted(rng.choice(len(keys), size=k, replace=False).tolist())
        chosen = [keys[i] for i in picks]
        families += 1
        consider(chosen, rng.uniform(0.2, 1.0, size=len(chosen)))

    witness = {"members": witness_members, "weights": witness_weights,
               "p": cfg.p, "scalar_value": scalar_best}
    search_space = {
        "depth": depth,
        "families_evaluated": families,
        "family_count": family_count,
        "p": cfg.p,
        "kernel": _kernel_spec(kernel),
        "trunc": _trunc_spec(trunc),
    }
    return CharacteristicReport("quadratic_haar_testing", best, witness,
                                search_space, seed)


def _evaluate_quadratic_haar_witness(sigma: MeshMeasure, omega: MeshMeasure,
                                     kernel: Kernel, trunc: Truncation,
                                     depth: int, witness: dict) -> float:
    system, images = _wavelet_images(sigma, kernel, trunc, depth)
    members = [(m["cube"], m["coefficients"]) for m in witness["members"]]
    weights = np.asarray(witness["weights"], dtype=float)
    return _haar_family_value(images, system.values_matrix, system.cube_slots,
                              sigma.flat_mass, omega.flat_mass,
                              members, weights, float(witness["p"]))


# -- witness re-evaluation -----------------------------------------------------

def reevaluate(report: CharacteristicReport, sigma: MeshMeasure,
               omega: MeshMeasure) -> float:
    """Recompute a report's value from its stored witness.

    Reports produced by the dual variants carry the already swapped roles,
    so the original (sigma, omega) order is always passed here. Kernel and
    truncation parameters are rebuilt from the report's search metadata.
    """
    name = report.name
    witness = report.witness
    space = report.search_space
    if name.startswith("dual_"):
        name = name[len("dual_"):]
        if name != "haar_testing_matched":
            sigma, omega = omega, sigma
    if name in ("a2_lambda", "ap_lambda"):
        return _evaluate_size_witness(sigma, omega, witness)
    if name in ("quadratic_offset_ap", "quadratic_subcube_ap"):
        return _evaluate_quadratic_witness(sigma, omega, witness)
    kernel = _kernel_from_spec(space["kernel"]) if "kernel" in space else None
    trunc = _trunc_from_spec(space["trunc"]) if "trunc" in space else None
    if name == "haar_testing":
        return _evaluate_haar_witness(sigma, omega, kernel, trunc,
                                      int(space["depth"]), witness)
    if name == "lp_haar_testing":
        return _evaluate_haar_witness(sigma, omega, kernel, trunc,
                                      int(space["depth"]), witness,
                                      p=float(witness["p"]))
    if name == "cube_testing":
        return _evaluate_cube_witness(sigma, omega, kernel, trunc, witness)
    if name == "quadratic_haar_testing":
        return _evaluate_quadratic_haar_witness(sigma, omega, kernel, trunc,
                                                int(space["depth"]), witness)
    if name in ("operator_norm", "haar_testing_matched"):
        if kernel is None or trunc is None:
            raise ValueError(f"report {report.name} lacks kernel metadata")
        matrix = assemble_haar_matrix(kernel, trunc, sigma, omega,
                                      int(space["depth"]),
                                      rotation_seed=space.get("rotation_seed"))
        return _evaluate_matrix_witness(matrix, witness)
    raise ValueError(f"unknown report name {report.name!r}")
