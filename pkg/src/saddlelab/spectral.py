"""Hessian eigen-spectrum diagnostics through matrix-free operator probes.

A full-reorthogonalization Lanczos run turns an HVP oracle into Ritz
values/weights; averaging Gaussian-broadened Ritz quadrature over several
random probes estimates the eigenvalue density. Extreme eigenpairs come from
the edge Ritz pairs refined by shifted power iteration (spectrum shifted so
the wanted end dominates), which needs nothing beyond further HVPs. The
|lambda_min / lambda_max| ratio summarizes how saddle-like the landscape is.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ParameterError, UndefinedRatioError
from .linalg import SeededRng
from .losses import LossSpec, loss_on_logits
from .model import Batch, MlpSpec, ParamVector, forward, hvp, per_class_batch

SPECTRUM_FORMAT_VERSION = 1


@dataclass
class HvpOracle:
    """Symmetric linear operator v -> Hv with a known dimension."""

    apply: callable
    dim: int

    @classmethod
    def for_batch(cls, spec: MlpSpec, w: ParamVector, batch: Batch, loss: LossSpec) -> "HvpOracle":
        return cls(apply=lambda v: hvp(spec, w, batch, loss, v), dim=w.data.shape[0])

    @classmethod
    def from_matrix(cls, a) -> "HvpOracle":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ParameterError("operator matrix must be square")
        return cls(apply=lambda v: a @ v, dim=a.shape[0])


@dataclass(frozen=True)
class SpectralSettings:
    lanczos_iters: int = 80
    num_probes: int = 10
    broadening_sigma2: float = 1e-5
    grid_spec: tuple | None = None  # (lo, hi, points); None -> auto
    residual_tol: float = 1e-6
    max_refine_iters: int = 5000

    def __post_init__(self):
        if self.lanczos_iters < 2:
            raise ParameterError("lanczos_iters must be >= 2")
        if self.num_probes < 1:
            raise ParameterError("num_probes must be >= 1")
        if self.broadening_sigma2 <= 0:
            raise ParameterError("broadening_sigma2 must be > 0")


@dataclass
class LanczosResult:
    alphas: np.ndarray  # diagonal of the tridiagonal matrix
    betas: np.ndarray  # off-diagonal (one shorter than alphas)
    basis: np.ndarray | None  # (k, dim) Krylov basis, row-major
    early_stop: bool  # hit an invariant subspace before the iteration budget

    @property
    def iters_done(self) -> int:
        return self.alphas.shape[0]


def lanczos(oracle: HvpOracle, iters: int, rng: SeededRng, with_basis: bool = True) -> LanczosResult:
    """Tridiagonalize the operator restricted to a random Krylov subspace.

    The starting vector is a normalized Gaussian probe from rng. Every new
    residual is reorthogonalized against the whole basis (two classical
    Gram-Schmidt passes), so ghost eigenvalues do not appear at the dims used
    here. A residual norm at rounding level ends the recursion early with the
    early_stop flag set.
    """
    k = min(iters, oracle.dim)
    if k < 1:
        raise ParameterError("need at least one iteration")
    v = rng.normal(size=oracle.dim)
    v = v / np.linalg.norm(v)
    basis = np.zeros((k, oracle.dim))
    basis[0] = v
    alphas = np.zeros(k)
    betas = np.zeros(max(k - 1, 0))
    early = False
    scale = 0.0
    prev = np.zeros(oracle.dim)
    beta_prev = 0.0
    done = 0
    for j in range(k):
        z = np.asarray(oracle.apply(basis[j]), dtype=np.float64)
        alphas[j] = float(basis[j] @ z)
        z = z - alphas[j] * basis[j] - beta_prev * prev
        # full reorthogonalization, twice for numerical safety
        for _ in range(2):
            z -= basis[: j + 1].T @ (basis[: j + 1] @ z)
        done = j + 1
        scale = max(scale, abs(alphas[j]), beta_prev)
        if j == k - 1:
            break
        beta = float(np.linalg.norm(z))
        if beta <= 1e-13 * max(scale, 1.0):
            early = True
            break
        betas[j] = beta
        prev = basis[j]
        beta_prev = beta
        basis[j + 1] = z / beta
    alphas = alphas[:done]
    betas = betas[: max(done - 1, 0)]
    basis = basis[:done] if with_basis else None
    return LanczosResult(alphas=alphas, betas=betas, basis=basis, early_stop=early)


def ritz_decomposition(result: LanczosResult):
    """(ritz_values, ritz_weights, tridiag_eigvecs); weights are the squared
    first components, the quadrature weights of the probe's spectral measure."""
    if result.alphas.shape[0] == 1:
        return result.alphas.copy(), np.ones(1), np.ones((1, 1))
    vals, vecs = eigh_tridiagonal(result.alphas, result.betas)
    weights = vecs[0] ** 2
    return vals, weights, vecs


@dataclass
class SpectralDensity:
    grid: np.ndarray
    density: np.ndarray
    ritz_values: list  # one array per probe
    ritz_weights: list
    broadening_sigma2: float
    num_probes: int
    lanczos_iters: int

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def mass_between(self, lo: float, hi: float) -> float:
        sel = (self.grid >= lo) & (self.grid <= hi)
        if sel.sum() < 2:
            return 0.0
        return float(np.trapezoid(self.density[sel], self.grid[sel]))


def _auto_grid(all_vals: np.ndarray, sigma: float, grid_spec):
    if grid_spec is not None:
        lo, hi, points = grid_spec
        return np.linspace(lo, hi, int(points))
    lo = float(all_vals.min()) - 6.0 * sigma
    hi = float(all_vals.max()) + 6.0 * sigma
    # spacing <= sigma keeps the trapezoid mass error of each Gaussian bump
    # below ~1e-8; cap the point count for pathological spans
    points = int(np.clip(math.ceil((hi - lo) / sigma) + 1, 512, 60000))
    return np.linspace(lo, hi, points)


def spectral_density(oracle: HvpOracle, settings: SpectralSettings, rng: SeededRng) -> SpectralDensity:
    """Average Gaussian-broadened Ritz quadrature over independent probes."""
    per_probe_vals, per_probe_weights = [], []
    for p in range(settings.num_probes):
        run = lanczos(oracle, settings.lanczos_iters, rng.child("probe", p), with_basis=False)
        vals, weights, _ = ritz_decomposition(run)
        per_probe_vals.append(vals)
        per_probe_weights.append(weights)
    sigma = math.sqrt(settings.broadening_sigma2)
    all_vals = np.concatenate(per_probe_vals)
    grid = _auto_grid(all_vals, sigma, settings.grid_spec)
    density = np.zeros_like(grid)
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    for vals, weights in zip(per_probe_vals, per_probe_weights):
        for lam, wgt in zip(vals, weights):
            density += wgt * norm * np.exp(-0.5 * ((grid - lam) / sigma) ** 2)
    density /= settings.num_probes
    return SpectralDensity(
        grid=grid,
        density=density,
        ritz_values=per_probe_vals,
        ritz_weights=per_probe_weights,
        broadening_sigma2=settings.broadening_sigma2,
        num_probes=settings.num_probes,
        lanczos_iters=settings.lanczos_iters,
    )


@dataclass
class ExtremeEigs:
    lambda_min: float
    lambda_max: float
    v_min: np.ndarray  # unit norm, largest-magnitude component positive
    residual_min: float
    residual_max: float
    converged: bool

    @property
    def spread(self) -> float:
        return self.lambda_max - self.lambda_min


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def _refine_eigpair(oracle: HvpOracle, v0: np.ndarray, shift: float, sign: float,
                    tol: float, max_iters: int):
    """Power iteration on sign*(H - shift*I); sign=-1 targets the bottom of the
    spectrum (the operator becomes shift*I - H), sign=+1 the top."""
    v = v0 / np.linalg.norm(v0)
    lam = float(v @ oracle.apply(v))
    residual = math.inf
    for _ in range(max_iters):
        hv = np.asarray(oracle.apply(v), dtype=np.float64)
        lam = float(v @ hv)
        residual = float(np.linalg.norm(hv - lam * v))
        if residual < tol:
            return _fix_sign(v), lam, residual, True
        u = sign * (hv - shift * v)
        nu = float(np.linalg.norm(u))
        if nu == 0.0:
            # operator is shift*I on this vector; already an eigenvector
            return _fix_sign(v), lam, residual, residual < tol
        v = u / nu
    return _fix_sign(v), lam, residual, False


def extreme_eigs(oracle: HvpOracle, iters: int, tol: float, rng: SeededRng,
                 max_refine_iters: int = 5000) -> ExtremeEigs:
    """Extreme eigenpairs: Lanczos edge Ritz pairs, then shifted power
    iteration until the eigen-residual drops below tol (or the budget runs
    out, in which case converged=False and residuals tell the story)."""
    if iters < 2:
        raise ParameterError("iters must be >= 2")
    run = lanczos(oracle, iters, rng.child("lanczos"), with_basis=True)
    vals, _, vecs = ritz_decomposition(run)
    v_min0 = run.basis.T @ vecs[:, 0]
    v_max0 = run.basis.T @ vecs[:, -1]
    lam_min_est, lam_max_est = float(vals[0]), float(vals[-1])

    v_min, lam_min, res_min, ok_min = _refine_eigpair(
        oracle, v_min0, shift=lam_max_est, sign=-1.0, tol=tol, max_iters=max_refine_iters
    )
    v_max, lam_max, res_max, ok_max = _refine_eigpair(
        oracle, v_max0, shift=min(lam_min, lam_min_est), sign=1.0, tol=tol, max_iters=max_refine_iters
    )
    return ExtremeEigs(
        lambda_min=lam_min,
        lambda_max=lam_max,
        v_min=v_min,
        residual_min=res_min,
        residual_max=res_max,
        converged=ok_min and ok_max,
    )


def nonconvexity_ratio(extremes: ExtremeEigs) -> float:
    """|lambda_min/lambda_max|, with 0 for positive-definite spectra."""
    if extremes.lambda_max == 0.0:
        raise UndefinedRatioError("lambda_max is zero")
    if extremes.lambda_min > 0.0:
        return 0.0
    return abs(extremes.lambda_min / extremes.lambda_max)


@dataclass
class ClassSpectrumEntry:
    class_id: int | None  # None = spectrum of the full-dataset average loss
    density: SpectralDensity
    extremes: ExtremeEigs
    ratio: float
    loss: float
    accuracy: float
    num_samples: int


def classwise_spectrum_report(spec: MlpSpec, w: ParamVector, ds, loss: LossSpec,
                              classes, settings: SpectralSettings, rng: SeededRng):
    """Per-class curvature diagnostics plus the full-dataset contrast entry.

    Curvature is measured on the unweighted loss (class weights stripped):
    the full-dataset Hessian then decomposes exactly into the n_y/N-weighted
    sum of class Hessians, which is what makes the per-class view meaningful.
    """
    classes = list(classes)
    if not classes:
        raise ParameterError("classes must be non-empty")
    plain_loss = loss.with_class_weights(None)
    entries = []
    for cid in classes:
        batch = per_class_batch(ds, cid)
        entries.append(_spectrum_entry(spec, w, batch, plain_loss, cid, settings, rng.child("class", cid)))
    full_batch = Batch(ds.features, ds.labels)
    entries.append(_spectrum_entry(spec, w, full_batch, plain_loss, None, settings, rng.child("full")))
    return entries


def _spectrum_entry(spec, w, batch, loss, class_id, settings, rng) -> ClassSpectrumEntry:
    oracle = HvpOracle.for_batch(spec, w, batch, loss)
    density = spectral_density(oracle, settings, rng.child("density"))
    extremes = extreme_eigs(
        oracle, settings.lanczos_iters, settings.residual_tol, rng.child("extreme"),
        max_refine_iters=settings.max_refine_iters,
    )
    try:
        ratio = nonconvexity_ratio(extremes)
    except UndefinedRatioError:
        ratio = math.nan
    logits = forward(spec, w, batch.features)
    value, _ = loss_on_logits(loss, logits, batch.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == batch.labels))
    return ClassSpectrumEntry(
        class_id=class_id,
        density=density,
        extremes=extremes,
        ratio=ratio,
        loss=value,
        accuracy=acc,
        num_samples=len(batch),
    )


def save_spectrum(entry: ClassSpectrumEntry, csv_path, json_path, meta: dict | None = None) -> None:
    """CSV of (grid, density) plus a JSON sidecar with the Ritz data, extreme
    eigenpair summary, settings, and any caller metadata (seed, epoch, ...)."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eigenvalue", "density"])
        for g, d in zip(entry.density.grid, entry.density.density):
            writer.writerow([format(g, ".17g"), format(d, ".17g")])
    sidecar = {
        "format_version": SPECTRUM_FORMAT_VERSION,
        "class_id": entry.class_id,
        "num_samples": entry.num_samples,
        "loss": entry.loss,
        "accuracy": entry.accuracy,
        "lambda_min": entry.extremes.lambda_min,
        "lambda_max": entry.extremes.lambda_max,
        "residual_min": entry.extremes.residual_min,
        "residual_max": entry.extremes.residual_max,
        "converged": entry.extremes.converged,
        "nonconvexity_ratio": None if math.isnan(entry.ratio) else entry.ratio,
        "settings": {
            "lanczos_iters": entry.density.lanczos_iters,
            "num_probes": entry.density.num_probes,
            "broadening_sigma2": entry.density.broadening_sigma2,
        },
        "ritz_values": [[float(x) for x in vals] for vals in entry.density.ritz_values],
        "ritz_weights": [[float(x) for x in wts] for wts in entry.density.ritz_weights],
    }
    if meta:
        sidecar.update(meta)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")
