"""
Sliding-window dynamic connectivity.

Each window of a region time series is z-scored per region, turned into a
Pearson correlation matrix and mapped through the similarity kernel
``W = exp((rho - 1) / epsilon)``. Rows and columns of tumor regions are then
fixed to zero.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateRegionError,
    DimensionError,
    InputTooShortError,
    MaskError,
)

logger = logging.getLogger("eloqnet.connectivity")

DEFAULT_WINDOW_LENGTH = 45
DEFAULT_STRIDE = 5
DEFAULT_EPSILON = 1.0

# Relative variance below which a window column counts as constant
_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class TimeSeries:
    """Region time courses of one scan.

    Attributes:
        data: Array of shape ``(frames, regions)``.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"Time series must be 2-D, got shape {data.shape}")
        if data.shape[1] < 2:
            raise ConfigError(f"Need at least 2 regions, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise ConfigError("Time series contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def region_count(self) -> int:
        return self.data.shape[1]

    def truncated(self, frames: int) -> "TimeSeries":
        """Return the first ``frames`` frames of the scan."""
        return TimeSeries(self.data[:frames])


@dataclass(frozen=True)
class WindowConfig:
    """Sliding window parameters.

    Attributes:
        window_length: Frames per window (D).
        stride: Frames between window starts.
        epsilon: Decay parameter of the similarity kernel, at least 1.
        allow_degenerate: Treat zero-variance regions as masked for the
            window they occur in instead of raising.
    """

    window_length: int = DEFAULT_WINDOW_LENGTH
    stride: int = DEFAULT_STRIDE
    epsilon: float = DEFAULT_EPSILON
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.window_length < 2:
            raise ConfigError(f"window_length must be >= 2, got {self.window_length}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not self.epsilon >= 1.0:
            raise ConfigError(f"epsilon must be >= 1, got {self.epsilon}")

    def window_count(self, frame_count: int) -> int:
        """Number of windows T for a scan of ``frame_count`` frames."""
        if frame_count < self.window_length:
            raise InputTooShortError(
                f"Scan has {frame_count} frames, window needs {self.window_length}"
            )
        return (frame_count - self.window_length) // self.stride + 1

    def whole_scan(self, frame_count: int) -> "WindowConfig":
        """Single window spanning the whole scan (static connectivity)."""
        return WindowConfig(
            window_length=frame_count,
            stride=1,
            epsilon=self.epsilon,
            allow_degenerate=self.allow_degenerate,
        )


@dataclass(frozen=True)
class TumorMask:
    """Regions removed from the connectivity analysis."""

    region_indices: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        indices = frozenset(int(i) for i in self.region_indices)
        if any(i < 0 for i in indices):
            raise MaskError(f"Negative mask index in {sorted(indices)}")
        object.__setattr__(self, "region_indices", indices)

    def validate(self, region_count: int) -> None:
        out_of_range = [i for i in self.region_indices if i >= region_count]
        if out_of_range:
            raise MaskError(
                f"Mask indices {sorted(out_of_range)} out of range for "
                f"{region_count} regions"
            )

    def as_array(self) -> np.ndarray:
        return np.array(sorted(self.region_indices), dtype=int)

    def __len__(self) -> int:
        return len(self.region_indices)


@dataclass(frozen=True)
class DynamicConnectivity:
    """Masked similarity matrices of every window.

    Attributes:
        matrices: Array of shape ``(T, N, N)``.
        mask: Mask applied to every matrix.
    """

    matrices: np.ndarray
    mask: TumorMask = field(default_factory=TumorMask)

    def __post_init__(self):
        matrices = np.array(self.matrices, dtype=np.float64)
        if matrices.ndim != 3 or matrices.shape[1] != matrices.shape[2]:
            raise DimensionError(
                f"Connectivity must have shape (T, N, N), got {matrices.shape}"
            )
        matrices.flags.writeable = False
        object.__setattr__(self, "matrices", matrices)

    @property
    def window_count(self) -> int:
        return self.matrices.shape[0]

    @property
    def region_count(self) -> int:
        return self.matrices.shape[1]


def extract_windows(ts: TimeSeries, cfg: WindowConfig) -> list[np.ndarray]:
    """Cut the scan into left-aligned windows.

    Window ``t`` covers frames ``[t * stride, t * stride + D)``; trailing
    frames that do not fill a window are dropped.

    Raises:
        InputTooShortError: If the scan is shorter than one window.
    """
    count = cfg.window_count(ts.frame_count)
    starts = [t * cfg.stride for t in range(count)]
    return [ts.data[s : s + cfg.window_length] for s in starts]


def _correlation(
    window: np.ndarray, skip: np.ndarray, allow_degenerate: bool, index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of the window columns not in ``skip``.

    Returns the correlation matrix and the boolean vector of columns that
    were left out (skipped or degenerate).
    """
    length = window.shape[0]
    excluded = skip.copy()
    data = np.where(excluded[None, :], 0.0, window)

    centered = data - data.mean(axis=0, keepdims=True)
    std = np.sqrt((centered**2).mean(axis=0))
    scale = np.maximum(np.abs(data).max(axis=0), 1.0)
    degenerate = (std <= _VARIANCE_FLOOR * scale) & ~excluded
    if degenerate.any():
        region = int(np.flatnonzero(degenerate)[0])
        if not allow_degenerate:
            raise DegenerateRegionError(region, index)
        logger.debug(
            f"Window {index}: masking degenerate regions {np.flatnonzero(degenerate)}"
        )
        excluded |= degenerate

    z = np.zeros_like(data)
    keep = ~excluded
    z[:, keep] = centered[:, keep] / (std[keep] * np.sqrt(length))
    rho = z.T @ z
    rho = 0.5 * (rho + rho.T)
    return np.clip(rho, -1.0, 1.0), excluded


def _kernel(rho: np.ndarray, epsilon: float) -> np.ndarray:
    w = np.exp((rho - 1.0) / epsilon)
    np.fill_diagonal(w, 1.0)
    return w


def similarity_matrix(
    X: np.ndarray, epsilon: float = DEFAULT_EPSILON, allow_degenerate: bool = False
) -> np.ndarray:
    """Similarity kernel of one window.

    Columns are z-scored and scaled by ``1/sqrt(D)`` so that ``X^T X`` is the
    Pearson correlation ``rho``; the result is ``exp((rho - 1) / epsilon)``
    with an exact unit diagonal.

    Args:
        X: Window of shape ``(D, N)``.
        epsilon: Kernel decay, at least 1.
        allow_degenerate: Zero the rows and columns of constant regions
            instead of raising.

    Returns:
        np.ndarray: Symmetric ``(N, N)`` matrix with entries in
            ``[exp(-2/epsilon), 1]``.

    Raises:
        DegenerateRegionError: If a region is constant in the window.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"Window must be 2-D, got shape {X.shape}")
    if not epsilon >= 1.0:
        raise ConfigError(f"epsilon must be >= 1, got {epsilon}")
    skip = np.zeros(X.shape[1], dtype=bool)
    rho, excluded = _correlation(X, skip, allow_degenerate, index=0)
    w = _kernel(rho, epsilon)
    w[excluded, :] = 0.0
    w[:, excluded] = 0.0
    return w


def apply_tumor_mask(W: np.ndarray, mask: TumorMask) -> np.ndarray:
    """Zero the rows and columns of masked regions, diagonal included.

    Raises:
        MaskError: If an index is out of range.
    """
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {W.shape}")
    mask.validate(W.shape[0])
    idx = mask.as_array()
    if idx.size:
        W[idx, :] = 0.0
        W[:, idx] = 0.0
    return W


def build_dynamic_connectivity(
    ts: TimeSeries, cfg: WindowConfig, mask: TumorMask = TumorMask()
) -> DynamicConnectivity:
    """Masked similarity matrices of every window of the scan.

    Masked regions are zeroed before any arithmetic, so their time courses
    have no influence on the output at all.

    Raises:
        InputTooShortError: If the scan is shorter than one window.
        MaskError: If the mask does not fit the region count.
        DegenerateRegionError: If an unmasked region is constant inside a
            window and ``cfg.allow_degenerate`` is off.
    """
    mask.validate(ts.region_count)
    skip = np.zeros(ts.region_count, dtype=bool)
    skip[mask.as_array()] = True

    windows = extract_windows(ts, cfg)
    matrices = np.empty((len(windows), ts.region_count, ts.region_count))
    for t, window in enumerate(windows):
        rho, excluded = _correlation(window, skip, cfg.allow_degenerate, index=t)
        w = _kernel(rho, cfg.epsilon)
        w[excluded, :] = 0.0
        w[:, excluded] = 0.0
        matrices[t] = w

    logger.debug(
        f"Built {len(windows)} windows of {ts.region_count} regions "
        f"(D={cfg.window_length}, stride={cfg.stride}, eps={cfg.epsilon}, "
        f"masked={len(mask)})"
    )
    return DynamicConnectivity(matrices=matrices, mask=mask)
