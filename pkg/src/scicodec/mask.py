"""Generation, discretization, structuralization, and export of structural masks.

A lambda-bit structural mask takes values on the grid {0, 1/L, ..., 1 - 1/L}
(L = 2^lambda) for lambda >= 2, or {0, 1} for lambda = 1, and its per-pixel
sum across the temporal dimension is exactly 1. Mask entries are stored as
integer "units" (value * L), so the sum constraint is an exact integer
identity rather than a floating-point approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core


@dataclass(frozen=True)
class LearnableMask:
    """Continuous mask parameters in [0, 1], shape (B, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"mask must be (B,H,W) with positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
            raise ValueError("learnable mask values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class MaskCube:
    """Discrete mask stored as integer units; transmittance value = units / 2^lam.

    For lam >= 2 valid units lie in [0, L-1]; for lam = 1 they lie in {0, L}
    (binary transmittance 0 or 1). Construction does not enforce the
    structural sum; use validate() to check it.
    """

    units: np.ndarray  # (B, H, W) int64
    lam: int

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError(f"mask bit depth must be >= 1, got {self.lam}")
        arr = np.asarray(self.units)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"mask must be (B,H,W) with positive dims, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("mask units must be integers")
        arr = arr.astype(np.int64)
        if arr.min() < 0 or arr.max() > self.level_count:
            raise ValueError(f"mask units outside [0, {self.level_count}]")
        object.__setattr__(self, "units", arr)

    @property
    def level_count(self) -> int:
        """L = 2^lam."""
        return 1 << self.lam

    @property
    def values(self) -> np.ndarray:
        """Transmittance in [0, 1], float64 (exact: units are dyadic)."""
        return self.units.astype(np.float64) / self.level_count

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.units.shape

    @property
    def frames(self) -> int:
        return self.units.shape[0]

    @classmethod
    def from_values(cls, values: np.ndarray, lam: int) -> "MaskCube":
        L = 1 << lam
        scaled = np.asarray(values, dtype=np.float64) * L
        units = np.rint(scaled).astype(np.int64)
        if not np.allclose(scaled, units, atol=1e-9):
            raise ValueError("values are not on the 1/L grid")
        return cls(units, lam)


@dataclass
class MaskValidationReport:
    """Grid and sum violations found by validate(); empty iff the mask is valid."""

    n_grid_violations: int = 0
    n_sum_violations: int = 0
    grid_samples: list = field(default_factory=list)  # (t, u, v, units)
    sum_samples: list = field(default_factory=list)  # (u, v, column sum in units)

    @property
    def ok(self) -> bool:
        return self.n_grid_violations == 0 and self.n_sum_violations == 0


_MAX_REPORT_SAMPLES = 100


def _as_float_mask(m) -> np.ndarray:
    if isinstance(m, LearnableMask):
        return m.data
    if isinstance(m, MaskCube):
        return m.values
    return np.asarray(m, dtype=np.float64)


def random_binary(B: int, H: int, W: int, p: float = 0.5, seed: int = 0) -> MaskCube:
    """I.i.d. Bernoulli(p) binary mask (lam = 1), deterministic given seed."""
    if not 0 <= p <= 1:
        raise ValueError(f"Bernoulli probability must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    bits = rng.random((B, H, W)) < p
    return MaskCube(bits.astype(np.int64) * 2, lam=1)


def random_structural(B: int, H: int, W: int, lam: int, seed: int = 0) -> MaskCube:
    """Uniform random continuous mask pushed through structuralize."""
    rng = np.random.default_rng(seed)
    return structuralize(rng.random((B, H, W)), lam)


def discretize(m_prime, lam: int) -> MaskCube:
    """Round a continuous mask onto the 1/L grid (lam >= 2).

    value = floor(m' * L + 0.5) / L, entries equal to 1 are remapped to
    1 - 1/L, and fully dark pixel columns are lifted to 1/L everywhere.
    The temporal sum constraint is NOT yet enforced.
    """
    if lam < 2:
        raise ValueError("discretize is defined for lam >= 2; lam = 1 masks are "
                         "binarized inside structuralize")
    mp = _as_float_mask(m_prime)
    if mp.min() < 0 or mp.max() > 1:
        raise ValueError("continuous mask values must lie in [0, 1]")
    L = 1 << lam
    units = np.floor(mp * L + 0.5).astype(np.int64)
    units[units == L] = L - 1
    dark = units.sum(axis=0) == 0
    units[:, dark] = 1
    return MaskCube(units, lam)


def _binarize(m_prime: np.ndarray) -> np.ndarray:
    """lam = 1 structuralization: one active frame per pixel.

    The frame with the largest continuous value wins; ties go to the
    smallest frame index.
    """
    B = m_prime.shape[0]
    winner = np.argmax(m_prime, axis=0)
    units = np.zeros_like(m_prime, dtype=np.int64)
    np.put_along_axis(units, winner[None], 2, axis=0)
    return units


def structuralize(m_prime, lam: int) -> MaskCube:
    """Produce a valid structural mask from continuous values in [0, 1].

    For lam >= 2: discretize, then redistribute the per-pixel excess
    sum(M) - 1 across frames proportionally to each frame's share of the
    remaining mass, rounding half-up on the 1/L grid:

        omega = sum_t M;  sigma = L * (omega - 1)
        for k in 0..B-1:
            delta    = floor(sigma * M[k] / omega + 0.5) / L   (0 where omega = 0)
            out[k]   = M[k] - delta
            omega   -= M[k];  sigma -= L * delta

    A deterministic repair pass then clamps any entry that left the grid and
    moves the residual one unit at a time across frames (t ascending) until
    the exact sum constraint holds. All arithmetic is integer, so the output
    invariants are exact.
    """
    mp = _as_float_mask(m_prime)
    if mp.min() < 0 or mp.max() > 1:
        raise ValueError("continuous mask values must lie in [0, 1]")
    if lam == 1:
        return MaskCube(_binarize(mp), lam=1)

    B = mp.shape[0]
    L = 1 << lam
    if B == 1:
        # A single frame cannot sum to 1 on a grid capped at 1 - 1/L.
        raise ValueError("structural masks with lam >= 2 need at least 2 frames")

    units = discretize(mp, lam).units.copy()
    out = np.empty_like(units)
    omega = units.sum(axis=0)  # remaining mass, in units
    sigma = omega - L  # excess over the target sum, in units
    for k in range(B):
        u_k = units[k]
        delta = np.zeros_like(u_k)
        live = omega > 0
        # floor(sigma*u/omega + 1/2) == (2*sigma*u + omega) // (2*omega), exactly
        num = 2 * sigma[live] * u_k[live] + omega[live]
        delta[live] = num // (2 * omega[live])
        out[k] = u_k - delta
        omega = omega - u_k
        sigma = sigma - delta

    _repair_units(out, L)
    return MaskCube(out, lam)


def _repair_units(out: np.ndarray, L: int) -> None:
    """Clamp to [0, L-1] and walk single units across frames until sums hit L."""
    np.clip(out, 0, L - 1, out=out)
    diff = L - out.sum(axis=0)  # positive: units still to add
    B = out.shape[0]
    while True:
        pending = diff != 0
        if not pending.any():
            return
        for k in range(B):
            add = (diff > 0) & (out[k] < L - 1)
            out[k][add] += 1
            diff[add] -= 1
            sub = (diff < 0) & (out[k] > 0)
            out[k][sub] -= 1
            diff[sub] += 1


def validate(m: MaskCube) -> MaskValidationReport:
    """Report grid and temporal-sum violations; never raises."""
    report = MaskValidationReport()
    L = m.level_count
    if m.lam == 1:
        on_grid = (m.units == 0) | (m.units == L)
    else:
        on_grid = (m.units >= 0) & (m.units <= L - 1)
    bad = np.argwhere(~on_grid)
    report.n_grid_violations = len(bad)
    report.grid_samples = [
        (int(t), int(u), int(v), int(m.units[t, u, v]))
        for t, u, v in bad[:_MAX_REPORT_SAMPLES]
    ]

    sums = m.units.sum(axis=0)
    bad_sum = np.argwhere(sums != L)
    report.n_sum_violations = len(bad_sum)
    report.sum_samples = [
        (int(u), int(v), int(sums[u, v])) for u, v in bad_sum[:_MAX_REPORT_SAMPLES]
    ]
    return report


def effective_levels(m: MaskCube, kappa: int) -> np.ndarray:
    """Per-pixel count of sensor levels each frame can still resolve.

    floor(2^kappa / max(temporal transmittance sum, 1/L)), capped at 2^kappa.
    A structural mask scores the full 2^kappa everywhere; a binary mask that
    stacks s frames onto a pixel scores 2^kappa / s.
    """
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    L = m.level_count
    sums = np.maximum(m.units.sum(axis=0), 1)
    levels = ((1 << kappa) * L) // sums
    return np.minimum(levels, 1 << kappa).astype(np.int64)


def _bit_levels(m: MaskCube) -> np.ndarray:
    """Integer level index that fits in lam bits (binary masks use 0/1)."""
    return m.units if m.lam >= 2 else m.units // 2


def export_dmd(m: MaskCube, path) -> None:
    """Write per-frame bit planes for a digital micro-mirror device.

    For each time slot, lam planes from most to least significant bit; each
    plane is row-major, 1 bit per pixel packed MSB-first, rows padded to
    whole bytes. A JSON manifest records geometry and plane order.
    """
    levels = _bit_levels(m)
    B, H, W = m.shape
    chunks = []
    for t in range(B):
        for bit in range(m.lam - 1, -1, -1):
            plane = ((levels[t] >> bit) & 1).astype(np.uint8)
            chunks.append(np.packbits(plane, axis=-1).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    core.write_manifest(
        path,
        {"B": B, "H": H, "W": W, "lambda": m.lam, "plane_order": "msb_first"},
    )


def import_dmd(path) -> MaskCube:
    """Inverse of export_dmd; reconstructs units exactly."""
    manifest = core.read_manifest(path)
    B, H, W, lam = (int(manifest[k]) for k in ("B", "H", "W", "lambda"))
    row_bytes = (W + 7) // 8
    plane_size = H * row_bytes
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != B * lam * plane_size:
        raise core.TruncatedPayloadError(
            f"{path}: expected {B * lam * plane_size} plane bytes, got {len(raw)}"
        )
    levels = np.zeros((B, H, W), dtype=np.int64)
    offset = 0
    for t in range(B):
        for bit in range(lam - 1, -1, -1):
            packed = np.frombuffer(raw, dtype=np.uint8, count=plane_size, offset=offset)
            plane = np.unpackbits(packed.reshape(H, row_bytes), axis=-1, count=None)
            levels[t] |= plane[:, :W].astype(np.int64) << bit
            offset += plane_size
    units = levels if lam >= 2 else levels * 2
    return MaskCube(units, lam)


def save_mask(path, m: MaskCube) -> None:
    core.save_array(path, m.units)
    B, H, W = m.shape
    core.write_manifest(
        path, {"role": "mask", "B": B, "H": H, "W": W, "lambda": m.lam}
    )


def load_mask(path) -> MaskCube:
    units = core.load_array(path)
    manifest = core.read_manifest(path)
    if manifest.get("role") != "mask":
        raise core.ContainerError(f"{path}: manifest role is not 'mask'")
    return MaskCube(units, int(manifest["lambda"]))
