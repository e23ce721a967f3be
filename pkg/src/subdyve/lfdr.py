"""Local false discovery rates from z-scores via binned Poisson regression
(Lindsey's method) against a theoretical N(0, 1) null."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

__all__ = [
    "DegenerateScoreError",
    "LfdrFitError",
    "LfdrModel",
    "zscore",
    "fit",
    "evaluate",
    "select",
    "estimate_pi0",
    "write_model",
    "read_model",
]


class DegenerateScoreError(ValueError):
    """Scores are (numerically) constant, so z-scores are undefined."""


class LfdrFitError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def zscore(logits) -> tuple[np.ndarray, float, float]:
    """Standardize with the mean and the population (n-divisor) std."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size < 2:
        raise DegenerateScoreError("need at least two scores")
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma < 1e-12:
        raise DegenerateScoreError(f"scores are constant (std {sigma:.3e})")
    return (x - mu) / sigma, mu, sigma


@dataclass
class LfdrModel:
    bin_edges: np.ndarray
    beta: np.ndarray  # coefficients on t = 2 (z - lo) / (hi - lo) - 1
    pi0: float
    ridge: float
    n: int
    single_bin: bool = False

    @property
    def degree(self) -> int:
        return len(self.beta) - 1

    def _design(self, z) -> np.ndarray:
        lo, hi = self.bin_edges[0], self.bin_edges[-1]
        z = np.clip(np.asarray(z, dtype=np.float64), lo, hi)
        t = 2.0 * (z - lo) / (hi - lo) - 1.0
        return np.vander(t, self.degree + 1, increasing=True)

    def density(self, z) -> np.ndarray:
        """Fitted marginal density (count model divided by n * bin width)."""
        width = self.bin_edges[1] - self.bin_edges[0]
        return np.exp(self._design(np.atleast_1d(z)) @ self.beta) / (self.n * width)

    def null_density(self, z) -> np.ndarray:
        return norm.pdf(np.atleast_1d(np.asarray(z, dtype=np.float64)))

    def lfdr(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        if self.single_bin:
            return np.ones_like(z)
        return np.clip(self.pi0 * self.null_density(z) / self.density(z), 0.0, 1.0)


def _newton_poisson(X, counts, ridge, tol=1e-8, max_iter=200) -> np.ndarray:
    """Minimize sum(exp(X b) - N * X b) + ridge / 2 * |b|^2 by damped Newton."""
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(counts.mean() + 1.0)

    def objective(b):
        eta = X @ b
        return float(np.sum(np.exp(eta) - counts * eta) + 0.5 * ridge * b @ b)

    f = objective(beta)
    for _ in range(max_iter):
        mu = np.exp(X @ beta)
        grad = X.T @ (mu - counts) + ridge * beta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return beta
        H = (X.T * mu) @ X + ridge * np.eye(X.shape[1])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        decrease = float(grad @ step)
        if decrease < 1e-12 * (1.0 + abs(f)):
            # objective changes are below roundoff: plain Newton steps
            beta = beta - step
            f = objective(beta)
            continue
        t = 1.0
        while t > 1e-12:
            cand = beta - t * step
            fc = objective(cand)
            if np.isfinite(fc) and fc <= f - 1e-4 * t * decrease:
                break
            t *= 0.5
        else:
            raise LfdrFitError("line search failed in Poisson fit", gnorm)
        beta, f = cand, fc
    mu = np.exp(X @ beta)
    gnorm = float(np.linalg.norm(X.T @ (mu - counts) + ridge * beta))
    raise LfdrFitError(f"Newton did not converge in {max_iter} iterations", gnorm)


def fit(z, bins: int = 50, degree: int = 7, ridge: float = 1e-4, pi0: float = 0.9) -> LfdrModel:
    """Fit the marginal density of ``z`` by penalized Poisson regression of
    equal-width bin counts on a polynomial of the bin centers.

    A sample with no spread yields a ``single_bin`` model whose lfdr is 1
    everywhere.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size < 2:
        raise ValueError("need at least two z-scores")
    if not 0 < pi0 <= 1:
        raise ValueError("pi0 must lie in (0, 1]")
    lo, hi = float(z.min()), float(z.max())
    if hi - lo < 1e-12:
        edges = np.array([lo - 0.5, lo + 0.5])
        return LfdrModel(edges, np.zeros(1), pi0, ridge, z.size, single_bin=True)
    edges = np.linspace(lo, hi, bins + 1)
    # bins are (b_{j-1}, b_j]; the minimum goes to the first bin
    idx = np.clip(np.searchsorted(edges, z, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    model = LfdrModel(edges, np.zeros(degree + 1), pi0, ridge, z.size)
    centers = 0.5 * (edges[:-1] + edges[1:])
    X = model._design(centers)
    model.beta = _newton_poisson(X, counts, ridge)
    return model


def evaluate(model: LfdrModel, z) -> float | np.ndarray:
    """``pi0 f0(z) / f(z)`` clipped to [0, 1]; scalar in, scalar out."""
    out = model.lfdr(z)
    return float(out[0]) if np.ndim(z) == 0 else out


def select(model: LfdrModel, z, threshold: float) -> np.ndarray:
    """Indices whose lfdr is at most ``threshold``."""
    return np.flatnonzero(model.lfdr(z) <= threshold)


def estimate_pi0(z, half_width: float = 0.5) -> float:
    """Central-bin estimate: empirical mass in [-h, h] over the N(0,1) mass there."""
    z = np.asarray(z, dtype=np.float64)
    frac = float(np.mean(np.abs(z) <= half_width))
    null_mass = norm.cdf(half_width) - norm.cdf(-half_width)
    return float(min(1.0, max(frac / null_mass, 1e-6)))


def write_model(path, model: LfdrModel) -> None:
    fmt = lambda xs: " ".join(f"{x:.17g}" for x in xs)  # noqa: E731
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# lfdr model\n")
        fh.write(f"bin_edges {fmt(model.bin_edges)}\n")
        fh.write(f"beta {fmt(model.beta)}\n")
        fh.write(f"pi0 {model.pi0:.17g}\n")
        fh.write(f"ridge {model.ridge:.17g}\n")
        fh.write(f"n {model.n}\n")
        fh.write(f"single_bin {int(model.single_bin)}\n")


def read_model(path) -> LfdrModel:
    fields = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            key, *vals = line.split()
            fields[key] = vals
    return LfdrModel(
        np.array([float(v) for v in fields["bin_edges"]]),
        np.array([float(v) for v in fields["beta"]]),
        float(fields["pi0"][0]),
        float(fields["ridge"][0]),
        int(fields["n"][0]),
        bool(int(fields["single_bin"][0])),
    )
