"""The forecasting network: ring (or grid) patch embedding with learned
position vectors, a stack of frequency-domain attention blocks, and a
direct two-window output head.

Each block row-transforms the token embeddings into paired cosine/sine
coefficients (A, B), attends over the concatenated [A, B] features per
head, transforms the attended halves back to the spatial domain, and
applies a feed-forward map.  Disabling use_fourier removes the transform
sandwich, giving the standard-attention ablation; patching_mode chooses
between ring tokens and square planar patches.

The transform stages use explicit cosine/sine basis matmuls following
the spectral module's (A, B) convention, rescaled to the orthonormal
variant so feature variance stays O(1) through the attention; the tests
hold the spectral module as ground truth for the bases.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, NumericalError, StructuralError
from .geometry import Graticule, WeatherState, grid_patch_cell_counts, make_graticule
from .spectral import dft_basis

DIRECT_WINDOWS = 2  # weeks 3-4 and weeks 5-6


@dataclass
class ModelConfig:
    hidden_dim: int = 256
    num_layers: int = 8
    num_heads: int = 16
    patching_mode: str = "circular"      # circular | grid
    grid_patch_deg: float | None = None  # required iff patching_mode == grid
    use_fourier: bool = True
    head_dim_mode: str = "split"         # split | full
    attn_scale_mode: str = "per_head"    # per_head (sqrt of key width) | hidden_dim (sqrt D)
    seed: int = 0

    def validate(self) -> None:
        if self.hidden_dim < 1 or self.num_layers < 1 or self.num_heads < 1:
            raise ConfigurationError("hidden_dim, num_layers, num_heads must be positive")
        if self.patching_mode not in ("circular", "grid"):
            raise ConfigurationError(f"unknown patching_mode {self.patching_mode!r}")
        if self.patching_mode == "grid" and not self.grid_patch_deg:
            raise ConfigurationError("grid patching requires grid_patch_deg")
        if self.head_dim_mode not in ("split", "full"):
            raise ConfigurationError(f"unknown head_dim_mode {self.head_dim_mode!r}")
        if self.attn_scale_mode not in ("per_head", "hidden_dim"):
            raise ConfigurationError(f"unknown attn_scale_mode {self.attn_scale_mode!r}")
        if self.head_dim_mode == "split":
            feat = 2 * self.hidden_dim if self.use_fourier else self.hidden_dim
            if feat % self.num_heads != 0:
                raise ConfigurationError(
                    f"num_heads={self.num_heads} must divide the feature width {feat}")
            if self.use_fourier and (feat // self.num_heads) % 2 != 0:
                raise ConfigurationError(
                    f"per-head width {feat // self.num_heads} must be even to split "
                    "into real/imaginary halves")

    def to_kv_lines(self, prefix: str = "model.") -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{prefix}{f.name} = {'none' if v is None else v}")
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str], prefix: str = "model.") -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            key = prefix + f.name
            if key not in kv:
                continue
            raw = kv[key]
            if raw == "none":
                kwargs[f.name] = None
            elif f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("bool", bool):
                kwargs[f.name] = raw in ("True", "true", "1")
            elif f.name == "grid_patch_deg":
                kwargs[f.name] = float(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class ForecastPair:
    """Predicted bi-weekly means, each on the full grid."""

    weeks34: np.ndarray
    weeks56: np.ndarray


def _ensure_finite(t: torch.Tensor, stage: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericalError(f"non-finite values after stage {stage!r}", stage=stage)
    return t


class FrequencyAttentionBlock(nn.Module):
    """One encoder block.

    With use_fourier, the token-mixing branch is: row transform of the
    normalized embedding into (A, B); per-head Q/K/V over [A, B]; scaled
    dot-product attention; split of the attended features into halves;
    inverse transform per head; head concatenation.  Without it, the
    branch is plain multi-head attention on the embedding.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        d = cfg.hidden_dim
        self.use_fourier = cfg.use_fourier
        self.num_heads = cfg.num_heads
        feat = 2 * d if cfg.use_fourier else d
        if cfg.head_dim_mode == "split":
            self.head_width = feat // cfg.num_heads
        else:
            self.head_width = feat
        concat_width = self.num_heads * (self.head_width // 2 if cfg.use_fourier
                                         else self.head_width)
        if cfg.attn_scale_mode == "per_head":
            self.scale = float(self.head_width) ** 0.5
        else:
            self.scale = float(d) ** 0.5
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.qkv = nn.Linear(feat, 3 * self.num_heads * self.head_width, bias=False)
        self.out_proj = None if concat_width == d else nn.Linear(concat_width, d, bias=False)
        self.mlp = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))
        if cfg.use_fourier:
            # Orthonormal scaling: the plain transform has per-element
            # variance D/2, which saturates the softmax at init for large
            # D (the 1/sqrt(d_k) rule assumes unit-variance features).
            # The constants are absorbable into the Q/K/V weights, so the
            # function class of the block is unchanged.
            fwd_cos, fwd_sin = dft_basis(d)
            half = self.head_width // 2
            inv_cos, inv_sin = dft_basis(half)
            self.register_buffer("fwd_cos", torch.from_numpy(fwd_cos / d**0.5).float())
            self.register_buffer("fwd_sin", torch.from_numpy(fwd_sin / d**0.5).float())
            self.register_buffer("inv_cos", torch.from_numpy(inv_cos / half**0.5).float())
            self.register_buffer("inv_sin", torch.from_numpy(inv_sin / half**0.5).float())

    def token_mix(self, u: torch.Tensor) -> torch.Tensor:
        """Attention branch on a pre-normalized (..., P, D) embedding."""
        m = self.num_heads
        if self.use_fourier:
            a = u @ self.fwd_cos
            b = u @ self.fwd_sin
            c = _ensure_finite(torch.cat([a, b], dim=-1), "dft")
        else:
            c = u
        qkv = self.qkv(c).reshape(*u.shape[:-1], 3, m, self.head_width)
        qkv = qkv.movedim(-3, 0).movedim(-2, -3)  # (3, ..., M, P, head_width)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = torch.softmax(q @ k.transpose(-1, -2) / self.scale, dim=-1)
        mixed = _ensure_finite(att @ v, "attention")
        if self.use_fourier:
            half = self.head_width // 2
            a_t, b_t = mixed[..., :half], mixed[..., half:]
            mixed = _ensure_finite(a_t @ self.inv_cos + b_t @ self.inv_sin, "idft")
        # (..., M, P, w) -> (..., P, M*w), matching head concatenation order
        return mixed.movedim(-3, -2).reshape(*u.shape[:-1], -1)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        mix = self.token_mix(self.norm1(e))
        if self.out_proj is not None:
            mix = self.out_proj(mix)
        e = e + mix
        e = e + self.mlp(self.norm2(e))
        return _ensure_finite(e, "block_output")


class Forecaster(nn.Module):
    """Patch embedding, num_layers blocks, and the per-patch output head.

    output_windows is 2 for direct bi-weekly prediction and 1 for the
    next-day head used by autoregressive mode.
    """

    def __init__(self, cfg: ModelConfig, grid: Graticule, var_names,
                 output_windows: int = DIRECT_WINDOWS):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.grid = grid
        self.var_names = list(var_names)
        self.output_windows = output_windows
        h, w, k = grid.num_lat, grid.num_lon, len(self.var_names)
        if cfg.patching_mode == "circular":
            self.patch_cells = None
            self.pad_rows = 0
            self.num_tokens = h
            self.token_width = w * k
        else:
            ph, pw = grid_patch_cell_counts(grid, cfg.grid_patch_deg)
            if w % pw != 0:
                raise ConfigurationError(f"patch width {pw} cells does not divide W={w}")
            self.patch_cells = (ph, pw)
            self.pad_rows = (-h) % ph
            self.num_tokens = ((h + self.pad_rows) // ph) * (w // pw)
            self.token_width = ph * pw * k
        torch.manual_seed(cfg.seed)
        self.embed = nn.Linear(self.token_width, cfg.hidden_dim, bias=False)
        self.pos = nn.Parameter(torch.zeros(self.num_tokens, cfg.hidden_dim))
        self.blocks = nn.ModuleList(
            FrequencyAttentionBlock(cfg) for _ in range(cfg.num_layers))
        self.final_norm = nn.LayerNorm(cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, output_windows * self.token_width)
        self.apply(self._init_weights)
        # Blocks start as exact identities and fade in: the value slice
        # of the fused attention projection and the feed-forward output
        # weight are zeroed, and the block norm gains start small.  The
        # init model is then the shallow embed->head map, which the
        # fixed Adam budget can actually fit; without this the default
        # 8-layer stack needs roughly twice the epoch budget.
        with torch.no_grad():
            for block in self.blocks:
                hw, m = block.head_width, block.num_heads
                block.qkv.weight[2 * m * hw:, :].zero_()
                block.mlp[2].weight.zero_()
                block.norm1.weight.fill_(0.3)
                block.norm2.weight.fill_(0.3)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, nn.Linear):
            nn.init.trunc_normal_(module.weight, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)

    # -- patch layout ------------------------------------------------------
    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        """(N, H, W, K) -> (N, P, token_width), matching geometry patching."""
        n, h, w, k = x.shape
        if self.patch_cells is None:
            return x.reshape(n, h, w * k)
        ph, pw = self.patch_cells
        if self.pad_rows:
            x = torch.cat([x, x[:, -1:].expand(n, self.pad_rows, w, k)], dim=1)
        hp = h + self.pad_rows
        tiles = x.reshape(n, hp // ph, ph, w // pw, pw, k).permute(0, 1, 3, 2, 4, 5)
        return tiles.reshape(n, self.num_tokens, self.token_width)

    def unpatchify(self, tokens: torch.Tensor) -> torch.Tensor:
        """(N, P, token_width) -> (N, H, W, K)."""
        n = tokens.shape[0]
        h, w = self.grid.num_lat, self.grid.num_lon
        k = len(self.var_names)
        if self.patch_cells is None:
            return tokens.reshape(n, h, w, k)
        ph, pw = self.patch_cells
        hp = h + self.pad_rows
        tiles = tokens.reshape(n, hp // ph, w // pw, ph, pw, k).permute(0, 1, 3, 2, 4, 5)
        return tiles.reshape(n, hp, w, k)[:, :h]

    # -- forward -----------------------------------------------------------
    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        if x.ndim == 3:
            x = x.unsqueeze(0)
        n, h, w, k = x.shape
        if (h, w, k) != (self.grid.num_lat, self.grid.num_lon, len(self.var_names)):
            raise ConfigurationError(
                f"input shape {(h, w, k)} does not match model grid "
                f"{(self.grid.num_lat, self.grid.num_lon, len(self.var_names))}")
        tokens = self.patchify(x)
        e = self.embed(tokens) + self.pos
        _ensure_finite(e, "embedding")
        for block in self.blocks:
            e = block(e)
        e = self.final_norm(e)
        out = self.head(e)
        _ensure_finite(out, "head")
        per_window = out.reshape(n, self.num_tokens, self.output_windows, self.token_width)
        return tuple(self.unpatchify(per_window[:, :, i]) for i in range(self.output_windows))

    @torch.no_grad()
    def predict(self, state: WeatherState) -> ForecastPair:
        """Direct bi-weekly forecast for one WeatherState (model space)."""
        if self.output_windows != DIRECT_WINDOWS:
            raise ConfigurationError("predict needs a direct two-window model")
        if state.var_names != self.var_names:
            raise ConfigurationError(
                f"state variables {state.var_names} do not match model {self.var_names}")
        x = torch.from_numpy(np.asarray(state.values, dtype=np.float32))
        y34, y56 = self.forward(x)
        return ForecastPair(weeks34=y34[0].numpy(), weeks56=y56[0].numpy())

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# checkpoint archive: every parameter under a dotted key, plus the config
# as key-value text.  A numpy .npz is the single-archive container.

def _model_meta_lines(model: Forecaster) -> list[str]:
    return model.cfg.to_kv_lines() + [
        f"data.lat_res_deg = {model.grid.lat_res_deg!r}",
        f"data.lon_res_deg = {model.grid.lon_res_deg!r}",
        "data.vars = " + ",".join(model.var_names),
        f"data.output_windows = {model.output_windows}",
    ]


def save_checkpoint(path, model: Forecaster) -> None:
    arrays = {f"param.{name}": tensor.detach().cpu().numpy()
              for name, tensor in model.state_dict().items()}
    config_text = "\n".join(_model_meta_lines(model)) + "\n"
    with open(path, "wb") as f:  # np.savez would append .npz to a bare path
        np.savez(f, config=np.array(config_text), **arrays)


def _parse_kv_text(text: str) -> dict[str, str]:
    kv = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#") or "=" not in ln:
            continue
        key, value = ln.split("=", 1)
        kv[key.strip()] = value.strip()
    return kv


def load_checkpoint(path, expect: dict[str, str] | None = None) -> Forecaster:
    """Rebuild a Forecaster from a checkpoint archive.

    expect maps config keys to required values (e.g. the manifest's grid
    and variables); the first mismatched key aborts the load.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as archive:
        if "config" not in archive:
            raise ConfigurationError(f"{path} is not a checkpoint: missing config entry")
        kv = _parse_kv_text(str(archive["config"]))
        if expect:
            for key in sorted(expect):
                if kv.get(key) != str(expect[key]):
                    raise ConfigurationError(
                        f"checkpoint config mismatch at {key!r}: "
                        f"checkpoint has {kv.get(key)!r}, expected {expect[key]!r}")
        cfg = ModelConfig.from_kv(kv)
        grid = make_graticule(float(kv["data.lat_res_deg"]), float(kv["data.lon_res_deg"]))
        var_names = kv["data.vars"].split(",")
        model = Forecaster(cfg, grid, var_names,
                           output_windows=int(kv["data.output_windows"]))
        state = {}
        for key in archive.files:
            if key.startswith("param."):
                state[key[len("param."):]] = torch.from_numpy(archive[key])
    missing = set(model.state_dict()) - set(state)
    extra = set(state) - set(model.state_dict())
    if missing or extra:
        raise StructuralError(
            f"checkpoint parameters disagree with model: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}")
    model.load_state_dict(state)
    return model
