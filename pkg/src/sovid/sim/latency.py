"""Link latency models for the simulator.

The bundled synthetic matrix draws symmetric one-way latencies from a
lognormal distribution with a 60 ms median and dispersion matching published
wide-area RTT datasets; a loader accepts a real matrix from disk (.npy or
whitespace-delimited text) instead. Latencies are whole milliseconds so
event times stay integral and runs stay bit-reproducible.
"""

from __future__ import annotations

import numpy as np

MIN_LATENCY_MS = 2
MAX_LATENCY_MS = 800


def synthetic_matrix(n: int, seed: int, median_ms: float = 60.0,
                     sigma: float = 0.45) -> np.ndarray:
    """Symmetric n×n one-way latency matrix in integer milliseconds."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mu = np.log(median_ms)
    raw = rng.lognormal(mean=mu, sigma=sigma, size=(n, n))
    upper = np.triu(raw, k=1)
    sym = upper + upper.T
    clipped = np.clip(sym, MIN_LATENCY_MS, MAX_LATENCY_MS)
    matrix = np.rint(clipped).astype(np.int64)
    np.fill_diagonal(matrix, MIN_LATENCY_MS)
    return matrix


def load_matrix(path: str) -> np.ndarray:
    """Load an n×n matrix of one-way latencies (ms) from .npy or text."""
    if path.endswith(".npy"):
        matrix = np.load(path)
    else:
        matrix = np.loadtxt(path)
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"latency matrix must be square, got {matrix.shape}")
    return np.maximum(np.rint(matrix).astype(np.int64), 1)


def median_link_latency(matrix: np.ndarray) -> float:
    n = matrix.shape[0]
    if n < 2:
        return float(matrix[0, 0])
    idx = np.triu_indices(n, k=1)
    return float(np.median(matrix[idx]))
