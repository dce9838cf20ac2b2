"""Brute-force dependence spectra used as ground truth for trained models.

For a discrete joint pmf the normalized density ratio is the matrix
``Q[x, u] = p(x, u) / sqrt(p(x) p(u))``; its singular values are the
spectrum and ``left[:, k] / sqrt(p(x))`` the eigenfunctions. The bivariate
Gaussian is handled by discretizing it on a grid, which converges to the
Mehler series ``1, |rho|, rho**2, ...``.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceFailure, DimensionMismatch, InvalidPmf, InvalidRho

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteJoint:
    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 2 or pmf.size == 0:
            raise InvalidPmf(f"pmf must be a non-empty 2-D array, got shape {pmf.shape}")
        if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
            raise InvalidPmf("pmf entries must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise InvalidPmf(f"pmf sums to {pmf.sum():.15g}, not 1")
        # symbols that never occur carry no information; drop them
        pmf = pmf[pmf.sum(axis=1) > 0][:, pmf.sum(axis=0) > 0]
        object.__setattr__(self, "pmf", pmf)

    @property
    def px(self):
        return self.pmf.sum(axis=1)

    @property
    def pu(self):
        return self.pmf.sum(axis=0)

    def sample(self, n, rng):
        """Draw ``n`` symbol pairs; returns integer arrays ``(x, u)``."""
        flat = rng.choice(self.pmf.size, size=n, p=self.pmf.ravel())
        return np.unravel_index(flat, self.pmf.shape)


@dataclass(frozen=True)
class OracleSpectrum:
    values: np.ndarray
    phi: np.ndarray   # (n_x, r): eigenfunction values per x symbol
    psi: np.ndarray   # (n_u, r)


def discrete_cdr_spectrum(joint):
    if not isinstance(joint, DiscreteJoint):
        joint = DiscreteJoint(joint)
    px, pu = joint.px, joint.pu
    q = joint.pmf / np.sqrt(np.outer(px, pu))
    left, values, right_t = np.linalg.svd(q, full_matrices=False)
    phi = left / np.sqrt(px)[:, None]
    psi = right_t.T / np.sqrt(pu)[:, None]
    # fix signs so the constant pair comes out positive
    for k in range(values.size):
        if phi[np.argmax(np.abs(phi[:, k])), k] < 0:
            phi[:, k] *= -1
            psi[:, k] *= -1
    return OracleSpectrum(np.clip(values, 0.0, None), phi, psi)


def _gaussian_grid_joint(rho, grid_points, extent):
    edges = np.linspace(-extent, extent, grid_points + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x, u = np.meshgrid(mid, mid, indexing="ij")
    dens = np.exp(-(x * x - 2 * rho * x * u + u * u) / (2 * (1 - rho * rho)))
    return DiscreteJoint(dens / dens.sum())


def gaussian_cdr_spectrum(rho, grid_points=256, extent=5.0, refine_check=False, n_values=4):
    """Spectrum of a grid-discretized standard bivariate normal with correlation ``rho``.

    With ``refine_check`` the grid is doubled and the top ``n_values``
    singular values must move by less than ``1e-3``; otherwise
    :class:`ConvergenceFailure` is raised.
    """
    if not -1.0 < rho < 1.0:
        raise InvalidRho(f"rho must lie in (-1, 1), got {rho}")
    if grid_points < 64:
        raise ValueError(f"grid_points must be >= 64, got {grid_points}")
    if extent < 4:
        raise ValueError(f"extent must be >= 4 standard deviations, got {extent}")
    spec = discrete_cdr_spectrum(_gaussian_grid_joint(rho, grid_points, extent))
    if refine_check:
        fine = discrete_cdr_spectrum(_gaussian_grid_joint(rho, 2 * grid_points, extent))
        drift = float(np.max(np.abs(fine.values[:n_values] - spec.values[:n_values])))
        if drift >= 1e-3:
            raise ConvergenceFailure(f"grid refinement moved the top {n_values} values by {drift:.2e}")
    return spec


def verify_against_oracle(model, oracle, k):
    """Largest absolute gap between the model's and the oracle's top ``k`` values."""
    sigma = np.asarray(getattr(model, "spectrum", model), dtype=np.float64)
    if k > sigma.size:
        raise DimensionMismatch(f"k={k} exceeds the model's {sigma.size} components")
    ref = np.zeros(k)
    m = min(k, oracle.values.size)
    ref[:m] = oracle.values[:m]
    return float(np.max(np.abs(sigma[:k] - ref)))


def one_hot(symbols, n):
    out = np.zeros((len(symbols), n))
    out[np.arange(len(symbols)), symbols] = 1.0
    return out


def random_pmf(shape, rng, concentration=1.0):
    pmf = rng.dirichlet(np.full(np.prod(shape), concentration)).reshape(shape)
    return pmf / pmf.sum()


def write_spectrum_csv(path, spectra):
    """``name,index,value`` rows for a mapping of case name to :class:`OracleSpectrum`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "index", "value"])
        for name, spec in spectra.items():
            for i, v in enumerate(spec.values):
                writer.writerow([name, i + 1, repr(float(v))])
