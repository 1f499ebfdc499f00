"""
Uncertainty Module
Correlated truncated-Gaussian forecast errors for renewables and loads
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules.core.errors import BadCorrelationMatrix

TRUNCATION = 3.0
PSD_TOLERANCE = 1e-10

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


@dataclass
class ErrorModel:
    """
    Relative forecast errors for N channels

    Each channel has a std fraction sigma and belongs to one correlation
    group. Group factors map iid normals to correlated normals, z = F u.
    """

    sigma: np.ndarray
    caps: np.ndarray
    groups: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    @property
    def n_channels(self) -> int:
        return len(self.sigma)


def correlation_factor(matrix: np.ndarray) -> np.ndarray:
    """
    Factor a correlation matrix as F F^T through its eigendecomposition

    Works for singular (e.g. perfectly correlated) matrices, unlike Cholesky.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise BadCorrelationMatrix("Correlation matrix must be square", shape=matrix.shape)
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise BadCorrelationMatrix("Correlation matrix is not symmetric")
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-12):
        raise BadCorrelationMatrix("Correlation matrix needs a unit diagonal")
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    if eigenvalues.min() < -PSD_TOLERANCE:
        raise BadCorrelationMatrix("Correlation matrix is not positive semi-definite",
                                   min_eigenvalue=float(eigenvalues.min()))
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def equicorrelation(size: int, rho: float) -> np.ndarray:
    matrix = np.full((size, size), rho, dtype=float)
    np.fill_diagonal(matrix, 1.0)
    return matrix


def build_error_model(sigma: Sequence[float],
                      caps: Sequence[float],
                      group_of: Sequence[str],
                      correlation: Optional[Dict[str, dict]] = None,
                      labels: Optional[Sequence[str]] = None) -> ErrorModel:
    """
    Assemble an ErrorModel from per-channel settings

    Args:
        sigma: Std fraction per channel
        caps: Upper clip per channel (inf for loads)
        group_of: Correlation group name per channel
        correlation: Group name -> {"rho": r} or {"matrix": [[...]]}; groups
            without an entry are independent
        labels: Channel names for diagnostics
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise BadCorrelationMatrix("Error std fractions must be non-negative")
    correlation = correlation or {}

    members: Dict[str, List[int]] = {}
    for index, name in enumerate(group_of):
        members.setdefault(name, []).append(index)

    groups = []
    for name, indices in members.items():
        settings = correlation.get(name)
        if settings is None:
            matrix = np.eye(len(indices))
        elif settings.get("matrix") is not None:
            matrix = np.asarray(settings["matrix"], dtype=float)
            if matrix.shape != (len(indices), len(indices)):
                raise BadCorrelationMatrix("Correlation matrix size does not match group",
                                           group=name, members=len(indices))
        else:
            matrix = equicorrelation(len(indices), settings["rho"])
        try:
            factor = correlation_factor(matrix)
        except BadCorrelationMatrix as e:
            e.context["group"] = name
            raise
        groups.append((np.asarray(indices, dtype=int), factor))

    return ErrorModel(
        sigma=sigma,
        caps=np.asarray(caps, dtype=float),
        groups=groups,
        labels=list(labels or []),
    )


def _truncated_block(rng: np.random.Generator, factor: np.ndarray, rows: int) -> np.ndarray:
    width = factor.shape[0]
    z = rng.standard_normal((rows, width)) @ factor.T
    bad = np.any(np.abs(z) > TRUNCATION, axis=1)
    while bad.any():
        z[bad] = rng.standard_normal((int(bad.sum()), width)) @ factor.T
        bad = np.any(np.abs(z) > TRUNCATION, axis=1)
    return z


def sample_errors(error_model: ErrorModel, hours: int, seed: SeedLike = None) -> np.ndarray:
    """Standardized correlated errors z of shape (channels, hours), |z| <= 3"""
    rng = np.random.default_rng(seed)
    z = np.zeros((error_model.n_channels, hours))
    for indices, factor in error_model.groups:
        z[indices] = _truncated_block(rng, factor, hours).T
    return z


def sample_net_load(forecasts: np.ndarray, error_model: ErrorModel,
                    seed: SeedLike = None) -> np.ndarray:
    """
    Draw realized profiles around forecasts

    realized = forecast * (1 + sigma * z) with z a correlated standard normal
    truncated at 3 standard deviations; results are clipped to [0, cap].

    Args:
        forecasts: Array (channels, hours) in MW
        error_model: Per-channel std fractions, caps and correlation groups
        seed: Integer seed, SeedSequence or Generator

    Returns:
        Array (channels, hours) of realized MW values
    """
    forecasts = np.asarray(forecasts, dtype=float)
    if forecasts.shape[0] != error_model.n_channels:
        raise BadCorrelationMatrix("Forecast rows do not match error channels",
                                   rows=forecasts.shape[0], channels=error_model.n_channels)
    z = sample_errors(error_model, forecasts.shape[1], seed)
    realized = forecasts * (1.0 + error_model.sigma[:, None] * z)
    return np.clip(realized, 0.0, error_model.caps[:, None])
