"""Frame-style two-sided bounds for Haar coefficient maps.

Empirical frame bounds in L2(mu), block square-function bounds in Lp(mu),
and the coefficient/synthesis round trip packaged as a three-part check.
Bounds are sampled, never certified: each report records the sample count,
the seed, and the extreme witnesses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .experiments import ExperimentReport, _jsonable
from .haar import HaarSystem, cached_system
from .measure import DegenerateMeasureError, MeshMeasure

__all__ = [
    "FrameBoundsReport",
    "BanachFrameTriple",
    "hilbert_frame_bounds",
    "lp_square_function_bounds",
    "banach_frame_check",
]


@dataclass(frozen=True)
class FrameBoundsReport:
    """Empirical two-sided bound: lower <= energy ratio <= upper.

    A strictly positive lower bound is evidence of the frame property on the
    sampled directions; lower == 0 certifies a direction outside the span
    (carried by the witness). Bounds are over the recorded sample count only.
    """

    lower: float
    upper: float
    sample_count: int
    p: float
    lower_witness: dict
    upper_witness: dict
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ValueError("frame bounds must be finite")
        if self.lower < 0.0 or self.lower > self.upper:
            raise ValueError(
                f"need 0 <= lower <= upper, got ({self.lower}, {self.upper})"
            )
        if self.upper <= 0.0:
            raise ValueError("upper frame bound must be positive")

    def as_dict(self) -> dict:
        return _jsonable(
            {
                "lower": self.lower,
                "upper": self.upper,
                "sample_count": self.sample_count,
                "p": self.p,
                "lower_witness": self.lower_witness,
                "upper_witness": self.upper_witness,
                "seed": self.seed,
                "details": self.details,
            }
        )


def _ratio_report(ratios: np.ndarray, labels: list, sample_count: int, p: float,
                  seed: int | None, details: dict) -> FrameBoundsReport:
    i_lo = int(np.argmin(ratios))
    i_hi = int(np.argmax(ratios))
    return FrameBoundsReport(
        lower=float(ratios[i_lo]),
        upper=float(ratios[i_hi]),
        sample_count=sample_count,
        p=p,
        lower_witness={"sample": labels[i_lo], "ratio": float(ratios[i_lo])},
        upper_witness={"sample": labels[i_hi], "ratio": float(ratios[i_hi])},
        seed=seed,
        details=details,
    )


def hilbert_frame_bounds(elements: list, mu: MeshMeasure, sample_count: int = 64,
                         seed: int = 0, probes: list | None = None) -> FrameBoundsReport:
    """Sampled L2(mu) frame bounds of a finite family of mesh functions.

    Ratios sum |<x, f_j>_mu|^2 / ||x||_mu^2 over random mesh functions x,
    plus any supplied probe functions (labeled in the witnesses). A complete
    orthonormal family gives lower = upper = 1.
    """
    if mu.total_mass <= 0.0:
        raise DegenerateMeasureError("measure carries no mass")
    if not elements:
        raise ValueError("need at least one element")
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    grid = mu.grid
    rng = np.random.default_rng(seed)
    rows = np.stack([np.asarray(e, dtype=float).ravel() for e in elements])
    if rows.shape[1] != grid.n_cells:
        raise ValueError("elements must be mesh functions on the measure's grid")
    xs = rng.standard_normal((sample_count, grid.n_cells))
    labels = [{"kind": "random", "index": i} for i in range(sample_count)]
    if probes:
        pr = np.stack([np.asarray(q, dtype=float).ravel() for q in probes])
        xs = np.concatenate([pr, xs])
        labels = [{"kind": "probe", "index": i} for i in range(len(probes))] + labels
    weighted = rows * mu.flat_mass
    coeffs = weighted @ xs.T
    num = (coeffs**2).sum(axis=0)
    den = xs**2 @ mu.flat_mass
    keep = den > 0.0
    if not np.any(keep):
        raise DegenerateMeasureError("every sample has zero norm under the measure")
    ratios = num[keep] / den[keep]
    labels = [lab for lab, k in zip(labels, keep) if k]
    details = {"element_count": len(elements), "probe_count": len(probes or [])}
    return _ratio_report(ratios, labels, sample_count, p=2.0, seed=seed,
                         details=details)


def _block_square(system: HaarSystem, coeffs: np.ndarray) -> np.ndarray:
    """Mesh array of sum over cubes of the squared per-cube component."""
    values = system.values_matrix
    out = np.zeros(values.shape[1])
    for start, count in system.cube_slots.values():
        if count == 0:
            continue
        block = coeffs[start:start + count] @ values[start:start + count]
        out += block**2
    return out.reshape(system.measure.grid.mesh_shape)


def _resolved_samples(grid, depth: int, sample_count: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Random mesh functions constant on the level-depth cubes."""
    factor = 2 ** (grid.max_level - depth)
    coarse = rng.standard_normal((sample_count,) + (2**depth,) * grid.dimension)
    f = coarse
    for ax in range(1, grid.dimension + 1):
        f = np.repeat(f, factor, axis=ax)
    return f


def _square_function_ratios(mu: MeshMeasure, p: float, depth: int,
                            samples: np.ndarray, probes: list | None):
    system = cached_system(mu, depth)
    funcs = [np.asarray(q, dtype=float) for q in (probes or [])]
    labels = [{"kind": "probe", "index": i} for i in range(len(funcs))]
    funcs += [samples[i] for i in range(samples.shape[0])]
    labels += [{"kind": "random", "index": i} for i in range(samples.shape[0])]
    ratios = []
    kept_labels = []
    for f, lab in zip(funcs, labels):
        centered = f - mu.integrate(f) / mu.total_mass
        den = mu.norm_lp(centered, p)
        if den == 0.0:
            continue
        coeffs = system.expand(f)
        square = _block_square(system, coeffs)
        num = mu.norm_lp(np.sqrt(square), p)
        ratios.append(num / den)
        kept_labels.append(lab)
    if not ratios:
        raise DegenerateMeasureError("every sample is constant under the measure")
    return np.asarray(ratios), kept_labels, system


def lp_square_function_bounds(mu: MeshMeasure, p: float, depth: int,
                              sample_count: int = 64, seed: int = 0,
                              probes: list | None = None) -> FrameBoundsReport:
    """Block square function against the centered Lp norm, sampled.

    Ratios ||(sum_Q |D_Q f|^2)^(1/2)||_p / ||f - average||_p over random
    functions resolved at the system depth; D_Q is the per-cube wavelet
    component. At p = 2 both bounds equal 1 exactly. Details carry the same
    band one level deeper as a stability check.
    """
    if not 1.0 < p < float("inf"):
        raise ValueError(f"p must lie in (1, inf), got {p}")
    grid = mu.grid
    if not 1 <= depth <= grid.max_level:
        raise ValueError(f"depth must be in [1, {grid.max_level}], got {depth}")
    if mu.total_mass <= 0.0:
        raise DegenerateMeasureError("measure carries no mass")
    rng = np.random.default_rng(seed)
    samples = _resolved_samples(grid, depth, sample_count, rng)
    ratios, labels, _ = _square_function_ratios(mu, p, depth, samples, probes)
    details: dict = {"depth": depth}
    if depth + 1 <= grid.max_level:
        deeper = _resolved_samples(grid, depth + 1, sample_count,
                                   np.random.default_rng(seed))
        d_ratios, _, _ = _square_function_ratios(mu, p, depth + 1, deeper, probes)
        lo, hi = float(ratios.min()), float(ratios.max())
        dlo, dhi = float(d_ratios.min()), float(d_ratios.max())
        details["neighbor_depth"] = depth + 1
        details["neighbor_band"] = [dlo, dhi]
        details["band_drift"] = max(abs(dlo - lo) / lo, abs(dhi - hi) / hi)
    return _ratio_report(ratios, labels, sample_count, p=p, seed=seed,
                         details=details)


@dataclass(frozen=True)
class BanachFrameTriple:
    """Coefficient maps, sequence-space norm, and synthesis for one system.

    functionals sends a mesh function to (wavelet coefficients, mean
    coefficient); sequence_space_norm is the Lp norm of the block square
    function of a coefficient sequence; reconstruction synthesizes a mesh
    function back from coefficients.
    """

    mu: MeshMeasure
    p: float
    system: HaarSystem

    def functionals(self, f: np.ndarray):
        return self.system.expand(f), self.system.mean_coefficient(f)

    def sequence_space_norm(self, coeffs: np.ndarray) -> float:
        return self.mu.norm_lp(np.sqrt(_block_square(self.system, coeffs)), self.p)

    def reconstruction(self, coeffs: np.ndarray, mean_coeff: float = 0.0) -> np.ndarray:
        return self.system.reconstruct(coeffs, mean_coeff)


def banach_frame_check(mu: MeshMeasure, p: float, depth: int,
                       sample_count: int = 32, seed: int = 0) -> ExperimentReport:
    """Exercise the four frame-triple properties on sampled functions.

    (1) coefficient sequences of sampled functions have finite sequence
    norm; (2) each sampled ratio of sequence norm to centered Lp norm lies
    in the band reported by lp_square_function_bounds at the same seed;
    (3) synthesis is bounded on random sparse coefficient sequences, with
    the empirical bound recorded; (4) synthesis of the coefficients of f
    returns f to 1e-10 on positive-mass cells.
    """
    band = lp_square_function_bounds(mu, p, depth, sample_count=sample_count,
                                     seed=seed)
    grid = mu.grid
    rng = np.random.default_rng(seed)
    samples = _resolved_samples(grid, depth, sample_count, rng)
    triple = BanachFrameTriple(mu=mu, p=p, system=cached_system(mu, depth))
    finite_ok = True
    band_ok = True
    band_slack = 1e-12 * max(1.0, band.upper)
    worst_roundtrip = 0.0
    positive = mu.cell_mass > 0.0
    failures = []
    for i in range(samples.shape[0]):
        f = samples[i]
        coeffs, mean_c = triple.functionals(f)
        norm_seq = triple.sequence_space_norm(coeffs)
        if not np.isfinite(norm_seq):
            finite_ok = False
            failures.append({"property": 1, "sample": i})
        centered = f - mu.integrate(f) / mu.total_mass
        den = mu.norm_lp(centered, p)
        if den > 0.0:
            ratio = norm_seq / den
            if not (band.lower - band_slack <= ratio <= band.upper + band_slack):
                band_ok = False
                failures.append({"property": 2, "sample": i, "ratio": float(ratio)})
        back = triple.reconstruction(coeffs, mean_c)
        gap = float(np.max(np.abs((back - f)[positive]))) if positive.any() else 0.0
        worst_roundtrip = max(worst_roundtrip, gap)
        if gap > 1e-10:
            failures.append({"property": 4, "sample": i, "gap": gap})
    n_wavelets = triple.system.n_wavelets
    synth_bound = 0.0
    sparse_trials = max(8, sample_count // 2)
    for i in range(sparse_trials):
        coeffs = np.zeros(n_wavelets)
        k = max(1, n_wavelets // 8)
        idx = rng.choice(n_wavelets, size=min(k, n_wavelets), replace=False)
        coeffs[idx] = rng.standard_normal(idx.size)
        norm_seq = triple.sequence_space_norm(coeffs)
        if norm_seq == 0.0:
            continue
        out = triple.reconstruction(coeffs, 0.0)
        synth_bound = max(synth_bound, mu.norm_lp(out, p) / norm_seq)
    synth_ok = bool(np.isfinite(synth_bound) and synth_bound > 0.0)
    if not synth_ok:
        failures.append({"property": 3, "bound": synth_bound})
    roundtrip_ok = worst_roundtrip <= 1e-10
    passed = finite_ok and band_ok and synth_ok and roundtrip_ok
    details = {
        "band": [band.lower, band.upper],
        "finite_coefficients": finite_ok,
        "band_consistent": band_ok,
        "synthesis_bound": synth_bound,
        "synthesis_trials": sparse_trials,
        "roundtrip_max_gap": worst_roundtrip,
        "roundtrip_ok": roundtrip_ok,
        "failures": failures,
        "p": p,
        "depth": depth,
        "sample_count": sample_count,
    }
    return ExperimentReport(name="banach_frame", value=float(synth_bound),
                            passed=passed, details=details, seed=seed)
