"""Physical downlink: power normalization, MIMO fading, L-MMSE detection.

Symbols are serialized row-major from the [L, symbol_dim] signal, zero-padded
to a multiple of n_t, and reshaped into n_t-row blocks with one block-fading
channel matrix per frame.  Detection applies
X_hat = H_hatᴴ (H_hat H_hatᴴ + noise_var I)⁻¹ Y blockwise with the estimated
CSI and strips the padding.

SNR is calibrated per configuration: noise_var is set so the expected
received per-symbol signal power over channel draws divided by noise_var
equals 10**(snr_db/10).  The expectation is a Monte Carlo estimate frozen
per (kind, rician_r, n_t, n_r), so noise_var scales exactly with SNR.

Training never touches this statistical channel; it uses surrogate_channel,
a differentiable per-entry gain-plus-noise map over the interleaved real
view, with gains drawn from the matching fading component marginals and
treated as constants by autodiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctensor import ComplexTensor
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .rng import RngStream, _mix64
from .tensor import Tensor, add, mul

__all__ = [
    "ChannelConfig",
    "ChannelFrame",
    "normalize_power",
    "power_scale",
    "calibrate_noise",
    "draw_channel",
    "transmit",
    "lmmse_detect",
    "transmit_detect",
    "surrogate_channel",
]

_CAL_DRAWS = 10_000
_CAL_SEED = 0xCA11B8A7E
_INV_FLOOR = 1e-12


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"  # awgn | rayleigh | rician
    snr_db: float = 10.0
    n_t: int = 1
    n_r: int = 1
    rician_r: float = 1.0
    csi_error_var: float = 0.0
    p_s: float = 1.0  # max average symbol power (normalization target)

    def validate(self):
        if self.kind not in ("awgn", "rayleigh", "rician"):
            raise ConfigError(f"unknown channel kind {self.kind!r}")
        if self.n_t < 1 or self.n_r < 1:
            raise ConfigError("antenna counts must be >= 1")
        if self.kind == "awgn" and self.n_t != self.n_r:
            raise ConfigError("awgn (identity) channel requires n_t == n_r")
        if self.rician_r < 0:
            raise ConfigError("rician factor must be >= 0")
        if self.csi_error_var < 0:
            raise ConfigError("csi_error_var must be >= 0")
        if self.p_s <= 0:
            raise ConfigError("p_s must be > 0")


@dataclass
class ChannelFrame:
    h: ComplexTensor  # true channel [n_r, n_t]
    h_hat: ComplexTensor  # estimated CSI
    noise_var: float


def power_scale(x: ComplexTensor, p_s: float) -> float:
    """Scale factor bringing mean per-symbol power exactly to p_s."""
    mean_pow = x.mean_power()
    if mean_pow == 0.0:
        raise ContractError("cannot normalize an all-zero signal")
    return math.sqrt(p_s / mean_pow)


def normalize_power(x: ComplexTensor, p_s: float) -> ComplexTensor:
    """Rescale so the mean per-symbol power equals p_s exactly."""
    return x * power_scale(x, p_s)


# -- calibration --------------------------------------------------------------

_gain_cache: dict = {}


def _mean_channel_gain(cfg: ChannelConfig) -> float:
    """Monte Carlo mean of ||H||_F^2 / n_r, the per-receive-symbol power gain
    for unit-power inputs; exact 1.0 for the identity channel."""
    if cfg.kind == "awgn":
        return float(cfg.n_t) / cfg.n_r  # identity: always n_t == n_r == gain 1
    key = (cfg.kind, float(cfg.rician_r), cfg.n_t, cfg.n_r)
    if key not in _gain_cache:
        # process-stable stream id (never Python's randomized hash())
        r_bits = int(np.float64(cfg.rician_r).view(np.uint64))
        sid = _mix64(_mix64(_mix64(len(cfg.kind) * 1315423911 + cfg.kind.encode()[0],
                                   r_bits), cfg.n_t), cfg.n_r)
        rng = RngStream(_CAL_SEED, sid)
        draws = rng.complex_normal((_CAL_DRAWS, cfg.n_r, cfg.n_t), 0.0, 1.0)
        if cfg.kind == "rician":
            mu = math.sqrt(cfg.rician_r / (cfg.rician_r + 1.0))
            sig = math.sqrt(1.0 / (cfg.rician_r + 1.0))
            draws = mu + sig * draws
        power = np.sum(np.abs(draws) ** 2, axis=(1, 2)) / cfg.n_r
        _gain_cache[key] = float(power.mean())
    return _gain_cache[key]


def calibrate_noise(cfg: ChannelConfig, signal_power: float | None = None) -> float:
    """Noise variance hitting the configured SNR for p_s-power inputs."""
    cfg.validate()
    p = cfg.p_s if signal_power is None else signal_power
    snr_lin = 10.0 ** (cfg.snr_db / 10.0)
    return p * _mean_channel_gain(cfg) / snr_lin


# -- channel draws -------------------------------------------------------------


def _draw_h(cfg: ChannelConfig, rng: RngStream) -> np.ndarray:
    shape = (cfg.n_r, cfg.n_t)
    if cfg.kind == "awgn":
        return np.eye(cfg.n_r, cfg.n_t, dtype=np.complex128)
    if cfg.kind == "rayleigh":
        return rng.complex_normal(shape, 0.0, 1.0)
    mu = math.sqrt(cfg.rician_r / (cfg.rician_r + 1.0))
    var = 1.0 / (cfg.rician_r + 1.0)
    return rng.complex_normal(shape, mu, var)


def draw_channel(cfg: ChannelConfig, rng: RngStream) -> ChannelFrame:
    """One block-fading realization plus its (possibly corrupted) CSI."""
    cfg.validate()
    h = _draw_h(cfg, rng)
    if cfg.csi_error_var > 0:
        h_hat = h + rng.complex_normal(h.shape, 0.0, cfg.csi_error_var)
    else:
        h_hat = h
    return ChannelFrame(ComplexTensor(h), ComplexTensor(h_hat), calibrate_noise(cfg))


# -- transmission and detection -------------------------------------------------


def _to_blocks(x: ComplexTensor, n_t: int):
    flat = x.data.reshape(-1)
    count = flat.size
    m = -(-count // n_t)  # ceil
    padded = np.zeros(m * n_t, dtype=np.complex128)
    padded[:count] = flat
    return padded.reshape(m, n_t).T, count


def transmit(x: ComplexTensor, frame: ChannelFrame, rng: RngStream) -> ComplexTensor:
    """Y = H X_blocks + N with i.i.d. CN(0, noise_var) entries."""
    n_t = frame.h.shape[1]
    blocks, _ = _to_blocks(x, n_t)
    y = frame.h.data @ blocks
    if frame.noise_var > 0:
        y = y + rng.complex_normal(y.shape, 0.0, frame.noise_var)
    return ComplexTensor(y)


def lmmse_detect(y: ComplexTensor, frame: ChannelFrame, out_shape=None) -> ComplexTensor:
    """L-MMSE detection with estimated CSI.

    out_shape, when given, strips the zero-padding and restores the original
    [L, symbol_dim] layout; otherwise the n_t-row block matrix is returned.
    """
    hh = frame.h_hat.data
    n_r = hh.shape[0]
    if y.data.ndim != 2 or y.shape[0] != n_r:
        raise ShapeError(f"received blocks {y.shape} do not match CSI {hh.shape}")
    gram = hh @ hh.conj().T + max(frame.noise_var, _INV_FLOOR) * np.eye(n_r)
    try:
        w = np.linalg.solve(gram, y.data)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"detection system singular: {exc}") from exc
    xb = hh.conj().T @ w
    if out_shape is None:
        return ComplexTensor(xb)
    count = int(np.prod(out_shape))
    flat = xb.T.reshape(-1)
    if count > flat.size:
        raise ShapeError(f"requested {count} symbols from {flat.size} detected")
    return ComplexTensor(flat[:count].reshape(out_shape))


def transmit_detect(x: ComplexTensor, frame: ChannelFrame, rng: RngStream) -> ComplexTensor:
    """Round trip preserving the input layout exactly."""
    y = transmit(x, frame, rng)
    return lmmse_detect(y, frame, out_shape=x.shape)


# -- differentiable training surrogate ------------------------------------------


def surrogate_gains(cfg: ChannelConfig, shape, rng: RngStream) -> np.ndarray:
    """Per-entry real gains over the interleaved (re, im) view.

    Entries follow the component marginals of the configured fading law:
    ones for awgn, N(0, 1/2) for rayleigh, and N(mu, var/2) on re-slots /
    N(0, var/2) on im-slots for rician.
    """
    if cfg.kind == "awgn":
        return np.ones(shape)
    if cfg.kind == "rayleigh":
        return rng.normal(shape, 0.0, math.sqrt(0.5))
    mu = math.sqrt(cfg.rician_r / (cfg.rician_r + 1.0))
    std = math.sqrt(0.5 / (cfg.rician_r + 1.0))
    w = rng.normal(shape, 0.0, std)
    w[..., 0::2] += mu
    return w


def surrogate_channel(x: Tensor, cfg: ChannelConfig, rng: RngStream,
                      return_gain: bool = False):
    """Differentiable stand-in for the downlink: y = w * x + b.

    w (fading gains) and b (noise, variance noise_var/2 per real slot) are
    drawn per call and enter the graph as constants, so gradients flow to x
    only.
    """
    cfg.validate()
    if x.shape[-1] % 2:
        raise ShapeError("surrogate expects an interleaved real view (even width)")
    w = surrogate_gains(cfg, x.shape, rng)
    noise_var = calibrate_noise(cfg)
    b = rng.normal(x.shape, 0.0, math.sqrt(noise_var / 2.0)) if noise_var > 0 else np.zeros(x.shape)
    out = add(mul(x, Tensor(w)), Tensor(b))
    if return_gain:
        return out, w
    return out
