"""Registered recovery checks: train on samples with a known spectrum and compare."""

import csv
import time
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .engine import train_fmca_pairs
from .oracle import (DiscreteJoint, discrete_cdr_spectrum, gaussian_cdr_spectrum, one_hot,
                     random_pmf, verify_against_oracle)


@dataclass(frozen=True)
class OracleCase:
    name: str
    sampler: Callable        # rng -> (X, U) training pairs
    oracle: Callable         # () -> OracleSpectrum
    n_components: int        # values compared against the oracle
    tolerance: float
    train: dict              # may set a wider ``n_components`` for training


@dataclass
class CaseResult:
    name: str
    expected: Tuple[float, ...]
    recovered: Tuple[float, ...]
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return self.error < self.tolerance


def _discrete_case(name, pmf, k, tol, n_samples=100_000, **train):
    joint = DiscreteJoint(pmf)
    nx, nu = joint.pmf.shape

    def sampler(rng):
        x, u = joint.sample(n_samples, rng)
        return one_hot(x, nx), one_hot(u, nu)

    opts = dict(n_layers=0, n_iter=2000, batch_size=512, epsilon=1e-6)
    opts.update(train)
    return OracleCase(name, sampler, lambda: discrete_cdr_spectrum(joint), k, tol, opts)


def _gaussian_case(name, rho, k, tol, n_samples=100_000, **train):
    def sampler(rng):
        z = rng.standard_normal((n_samples, 2))
        x = z[:, 0]
        return x, rho * x + np.sqrt(1 - rho * rho) * z[:, 1]

    opts = dict(hidden_units=32, n_layers=2, n_iter=10_000, batch_size=512, epsilon=1e-4)
    opts.update(train)
    return OracleCase(name, sampler, lambda: gaussian_cdr_spectrum(rho), k, tol, opts)


def default_cases(quick=False):
    """The standard suite. ``quick`` shortens the Gaussian runs (looser, for smoke tests)."""
    cases = [_discrete_case("pmf-2x2", [[0.4, 0.1], [0.1, 0.4]], 2, 2e-2, n_iter=500,
                            batch_size=256, n_samples=20_000)]
    for seed in range(3):
        pmf = random_pmf((4, 4), np.random.default_rng(seed))
        cases.append(_discrete_case(f"pmf-4x4-{seed}", pmf, 4, 5e-2))
    gauss_iter = 1000 if quick else 10_000
    cases.append(_gaussian_case("gauss-rho0", 0.0, 2, 5e-2, n_iter=gauss_iter))
    # spare components keep the weakest scored one from sitting at the edge of the learned space
    cases.append(_gaussian_case("gauss-rho0.5", 0.5, 4, 5e-2, n_iter=gauss_iter, n_components=6))
    return cases


def run_case(case, seed=0):
    rng = np.random.default_rng(seed)
    X, U = case.sampler(rng)
    start = time.perf_counter()
    opts = dict(case.train)
    opts.setdefault("n_components", case.n_components)
    model = train_fmca_pairs(X, U, seed=seed, **opts)
    elapsed = time.perf_counter() - start
    oracle = case.oracle()
    k = case.n_components
    expected = np.zeros(k)
    m = min(k, oracle.values.size)
    expected[:m] = oracle.values[:m]
    return CaseResult(case.name, tuple(float(v) for v in expected),
                      tuple(float(v) for v in model.spectrum[:k]),
                      verify_against_oracle(model, oracle, k), case.tolerance, elapsed)


def run_suite(cases=None, seed=0, on_result=None):
    results = []
    for case in default_cases() if cases is None else cases:
        res = run_case(case, seed)
        if on_result is not None:
            on_result(res)
        results.append(res)
    return results


def write_report(path, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "expected", "recovered", "error", "tolerance", "passed", "seconds"])
        for r in results:
            writer.writerow([r.name, " ".join(f"{v:.6f}" for v in r.expected),
                             " ".join(f"{v:.6f}" for v in r.recovered), repr(r.error),
                             repr(r.tolerance), "pass" if r.passed else "fail", f"{r.seconds:.2f}"])
