"""Point-to-point link pipeline: semantic codec + channel codec + channel.

Bundles the trainable pieces behind one object with checkpoint IO, and
provides the two forward passes the rest of the system uses: a
differentiable pass through the surrogate channel for training, and a
statistical pass through fading + L-MMSE detection for evaluation.

The transmit power scale is treated as known at the receiver (automatic gain
control), so detected symbols are de-normalized before channel decoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chancodec import ChanCodecParams, chan_decode, chan_encode, chan_decode_real, chan_encode_real
from .channel import ChannelConfig, draw_channel, power_scale, surrogate_channel, transmit_detect
from .codec import CodecConfig, CodecParams, SemanticTensor, decode, encode, zero_fill
from .errors import ContractError, ParseError
from .masking import MaskPlan, PatchGrid, patchify, unpatchify
from .rng import RngStream
from .snapshot import load_tensors, save_tensors
from .tensor import Tensor, div, gather_rows, mul, power, tmean

__all__ = ["LinkModel", "LinkResult", "surrogate_link", "evaluate_link", "codec_only_pass"]


@dataclass
class LinkModel:
    grid: PatchGrid
    codec_cfg: CodecConfig
    codec: CodecParams
    chan: ChanCodecParams

    @staticmethod
    def init(grid: PatchGrid, rng: RngStream, feature_dim=64, enc_layers=4,
             dec_layers=2, num_heads=4, symbol_dim=8) -> "LinkModel":
        cfg = CodecConfig.for_grid(grid, feature_dim, enc_layers, dec_layers, num_heads)
        return LinkModel(
            grid=grid,
            codec_cfg=cfg,
            codec=CodecParams.init(cfg, rng.substream(1)),
            chan=ChanCodecParams.init(cfg.feature_dim, symbol_dim, rng.substream(2)),
        )

    def all_tensors(self) -> dict:
        out = dict(self.codec.tensors())
        out.update(self.chan.tensors())
        return out

    def save(self, path) -> None:
        """Checkpoint: named tensors plus a JSON manifest sidecar."""
        path = Path(path)
        save_tensors(path, self.all_tensors())
        manifest = {
            "codec": self.codec_cfg.to_dict(),
            "grid": {
                "patch_size": self.grid.patch_size,
                "grid_h": self.grid.grid_h,
                "grid_w": self.grid.grid_w,
                "channels": self.grid.channels,
            },
            "symbol_dim": self.chan.symbol_dim,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @staticmethod
    def load(path) -> "LinkModel":
        path = Path(path)
        manifest_path = path.with_suffix(path.suffix + ".json")
        if not path.exists() or not manifest_path.exists():
            raise ParseError(f"checkpoint {path} or its manifest is missing")
        try:
            manifest = json.loads(manifest_path.read_text())
            cfg = CodecConfig.from_dict(manifest["codec"])
            g = manifest["grid"]
            grid = PatchGrid(g["patch_size"], g["grid_h"], g["grid_w"], g["channels"])
            symbol_dim = int(manifest["symbol_dim"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ParseError(f"{manifest_path}: malformed checkpoint manifest ({exc})") from exc
        model = LinkModel.init(
            grid,
            RngStream(0),
            feature_dim=cfg.feature_dim,
            enc_layers=cfg.enc_layers,
            dec_layers=cfg.dec_layers,
            num_heads=cfg.num_heads,
            symbol_dim=symbol_dim,
        )
        stored = load_tensors(path)
        slots = model.all_tensors()
        if set(stored) != set(slots):
            raise ParseError(f"checkpoint {path} does not match manifest structure")
        for name, slot in slots.items():
            if stored[name].data.shape != slot.data.shape:
                raise ParseError(f"checkpoint tensor {name} has shape {stored[name].data.shape}")
            slot.data[...] = stored[name].data
        return model


@dataclass
class LinkResult:
    image: Tensor  # reconstructed C x H x W
    z: SemanticTensor  # transmitted semantics
    z_hat: SemanticTensor  # received semantics
    plan: MaskPlan


def codec_only_pass(model: LinkModel, image: Tensor, plan: MaskPlan):
    """Mask, encode, zero-fill, decode; no channel.  Returns (Q, Z)."""
    rows = patchify(image, model.grid)
    kept = gather_rows(rows, plan.keep_indices)
    z = encode(kept, plan.keep_indices, model.codec, model.codec_cfg)
    q_rows = decode(zero_fill(z), model.codec, model.codec_cfg)
    return unpatchify(q_rows, model.grid), z


def _normalize_real(view: Tensor, p_s: float):
    """In-graph power normalization of an interleaved real view.

    Mean per-complex-symbol power is 2 * mean of squared real entries.
    Returns (normalized view, scale tensor).
    """
    mean_pow = mul(tmean(mul(view, view)), 2.0)
    if float(mean_pow.data) == 0.0:
        raise ContractError("cannot normalize an all-zero signal")
    scale = power(div(Tensor(np.asarray(p_s)), mean_pow), 0.5)
    return mul(view, scale), scale


def surrogate_link(model: LinkModel, image: Tensor, plan: MaskPlan,
                   chan_cfg: ChannelConfig, rng: RngStream) -> LinkResult:
    """Differentiable end-to-end pass used by training phases 2 and 3."""
    rows = patchify(image, model.grid)
    kept = gather_rows(rows, plan.keep_indices)
    z = encode(kept, plan.keep_indices, model.codec, model.codec_cfg)

    view = chan_encode_real(z.values, model.chan)
    norm_view, scale = _normalize_real(view, chan_cfg.p_s)
    received = surrogate_channel(norm_view, chan_cfg, rng)
    z_hat_rows = chan_decode_real(div(received, scale), model.chan)
    z_hat = z.with_values(z_hat_rows)

    q_rows = decode(zero_fill(z_hat), model.codec, model.codec_cfg)
    return LinkResult(unpatchify(q_rows, model.grid), z, z_hat, plan)


def evaluate_link(model: LinkModel, image: Tensor, plan: MaskPlan,
                  chan_cfg: ChannelConfig, rng: RngStream,
                  frame=None) -> LinkResult:
    """Statistical-channel pass: fading draw, transmit, L-MMSE detect.

    A pre-drawn frame can be passed to pair arms of a comparison on the same
    channel realization.
    """
    rows = patchify(image, model.grid)
    kept = gather_rows(rows, plan.keep_indices)
    z = encode(kept, plan.keep_indices, model.codec, model.codec_cfg)

    x = chan_encode(z, model.chan)
    s = power_scale(x, chan_cfg.p_s)
    if frame is None:
        frame = draw_channel(chan_cfg, rng.substream(1))
    x_hat = transmit_detect(x * s, frame, rng.substream(2)) * (1.0 / s)
    z_hat = z.with_values(chan_decode(x_hat, model.chan))

    q_rows = decode(zero_fill(z_hat), model.codec, model.codec_cfg)
    return LinkResult(unpatchify(q_rows, model.grid), z, z_hat, plan)
