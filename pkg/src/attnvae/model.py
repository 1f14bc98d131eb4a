"""Variational sequence autoencoder with temporal attention.

The encoder is a two-layer bidirectional LSTM stack (a wide outer layer over
the raw window, a narrower inner layer above it) whose per-step states
parameterise a diagonal Gaussian over a latent matrix: one latent vector per
time step. During training the latent matrix is drawn with the
reparameterisation trick; at inference it is the posterior mean, which makes
scores repeatable. A multi-head attention block then mixes the latent matrix
using the observed window itself as queries and keys, and a mirrored
two-layer bidirectional LSTM decoder maps the result to a diagonal Gaussian
over the reconstructed window. Both log variance heads are clipped to a
symmetric range for numerical safety. The ``use_attention`` flag swaps the
attention block for an identity bridge, the ablation used to probe whether
the latent bottleneck is actually carrying information.

Model files are a versioned little-endian binary container; loading restores
parameters bit for bit.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import DataError, DimensionError

_MAGIC = b"AVAEMODL"
_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``d_head`` left at 0 resolves to max(1, n_features // n_heads).
    """

    n_features: int
    window: int
    latent_dim: int = 16
    outer_units: int = 512
    inner_units: int = 256
    n_heads: int = 8
    d_head: int = 0
    use_attention: bool = True
    logvar_clip: float = 10.0

    def __post_init__(self):
        if self.d_head == 0:
            object.__setattr__(self, "d_head", max(1, self.n_features // self.n_heads))

    def validate(self) -> None:
        if self.window < 2:
            raise DimensionError("ModelConfig.window must be at least 2")
        for name in ("n_features", "latent_dim", "outer_units", "inner_units",
                     "n_heads", "d_head"):
            if getattr(self, name) < 1:
                raise DimensionError(f"ModelConfig.{name} must be positive")
        if self.logvar_clip <= 0:
            raise DimensionError("ModelConfig.logvar_clip must be positive")


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def _add_params(params: dict[str, Tensor], prefix: str, arrays: dict[str, np.ndarray]) -> None:
    for key, value in arrays.items():
        params[f"{prefix}.{key}"] = Tensor(value, requires_grad=True)


def init_model(config: ModelConfig, rng: np.random.Generator) -> Model:
    config.validate()
    cfg = config
    params: dict[str, Tensor] = {}
    _add_params(params, "enc1", nn.bilstm_init(rng, cfg.n_features, cfg.outer_units))
    _add_params(params, "enc2", nn.bilstm_init(rng, 2 * cfg.outer_units, cfg.inner_units))
    enc_out = 2 * cfg.inner_units
    _add_params(params, "enc_mu", {
        "w": nn.glorot_uniform(rng, (enc_out, cfg.latent_dim)),
        "b": np.zeros(cfg.latent_dim)})
    _add_params(params, "enc_lv", {
        "w": nn.glorot_uniform(rng, (enc_out, cfg.latent_dim)),
        "b": np.zeros(cfg.latent_dim)})
    if cfg.use_attention:
        _add_params(params, "attn", nn.attention_init(
            rng, cfg.n_features, cfg.latent_dim, cfg.n_heads, cfg.d_head))
    _add_params(params, "dec1", nn.bilstm_init(rng, cfg.latent_dim, cfg.inner_units))
    _add_params(params, "dec2", nn.bilstm_init(rng, 2 * cfg.inner_units, cfg.outer_units))
    dec_out = 2 * cfg.outer_units
    _add_params(params, "dec_mu", {
        "w": nn.glorot_uniform(rng, (dec_out, cfg.n_features)),
        "b": np.zeros(cfg.n_features)})
    _add_params(params, "dec_lv", {
        "w": nn.glorot_uniform(rng, (dec_out, cfg.n_features)),
        "b": np.zeros(cfg.n_features)})
    return Model(config, params)


def _subset(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    cfg = model.config
    if x.ndim != 3 or x.shape[1] != cfg.window or x.shape[2] != cfg.n_features:
        raise DimensionError(
            f"expected windows of shape (B, {cfg.window}, {cfg.n_features}), got {x.shape}")
    return x


def encode(model: Model, x: Tensor) -> tuple[Tensor, Tensor]:
    """Posterior mean and clipped log variance of the latent matrix."""
    cfg = model.config
    states = nn.bilstm(x, _subset(model.params, "enc1"))
    states = nn.bilstm(states, _subset(model.params, "enc2"))
    mu = nn.dense(states, model.params["enc_mu.w"], model.params["enc_mu.b"])
    lv = nn.dense(states, model.params["enc_lv.w"], model.params["enc_lv.b"])
    return mu, ad.clip(lv, -cfg.logvar_clip, cfg.logvar_clip)


def sample_latent(mu: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
    """Reparameterised draw z = mu + eps * exp(log_var / 2)."""
    if eps.shape != mu.shape:
        raise DimensionError(f"epsilon shape {eps.shape} does not match mean {mu.shape}")
    return ad.add(mu, ad.mul(Tensor(eps), ad.exp(ad.mul(log_var, 0.5))))


def decode(model: Model, x: Tensor, z: Tensor) -> tuple[Tensor, Tensor]:
    """Map the latent matrix (optionally attention-mixed) to the output Gaussian."""
    cfg = model.config
    if cfg.use_attention:
        mixed = nn.multi_head_attention(x, x, z, _subset(model.params, "attn"), cfg.n_heads)
    else:
        mixed = z
    states = nn.bilstm(mixed, _subset(model.params, "dec1"))
    states = nn.bilstm(states, _subset(model.params, "dec2"))
    mu = nn.dense(states, model.params["dec_mu.w"], model.params["dec_mu.b"])
    lv = nn.dense(states, model.params["dec_lv.w"], model.params["dec_lv.b"])
    return mu, ad.clip(lv, -cfg.logvar_clip, cfg.logvar_clip)


def forward_train(model: Model, x: np.ndarray, eps: np.ndarray) -> dict[str, Tensor]:
    """Stochastic pass used by the training loop; keeps everything on the tape."""
    xd = _check_input(model, x)
    xt = Tensor(xd)
    mu_z, lv_z = encode(model, xt)
    z = sample_latent(mu_z, lv_z, np.asarray(eps, dtype=np.float64))
    mu_x, lv_x = decode(model, xt, z)
    return {"mu_x": mu_x, "log_var_x": lv_x, "mu_z": mu_z, "log_var_z": lv_z, "z": z}


def forward_infer(model: Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic pass: the latent matrix is the posterior mean."""
    xd = _check_input(model, x)
    with ad.no_grad():
        xt = Tensor(xd)
        mu_z, _ = encode(model, xt)
        mu_x, lv_x = decode(model, xt, mu_z)
    return mu_x.data, lv_x.data


def attention_maps(model: Model, x: np.ndarray) -> np.ndarray:
    """Per-head attention weights (B, heads, W, W) for the deterministic pass."""
    if not model.config.use_attention:
        raise DataError("model was built without an attention block")
    xd = _check_input(model, x)
    with ad.no_grad():
        xt = Tensor(xd)
        mu_z, _ = encode(model, xt)
        _, weights = nn.multi_head_attention(
            xt, xt, mu_z, _subset(model.params, "attn"), model.config.n_heads,
            return_weights=True)
    return weights.data


# -- serialization --------------------------------------------------------


def save_model(model: Model, path) -> None:
    buf = io.BytesIO()
    cfg = model.config
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(struct.pack("<7i", cfg.n_features, cfg.window, cfg.latent_dim,
                          cfg.outer_units, cfg.inner_units, cfg.n_heads, cfg.d_head))
    buf.write(struct.pack("<B", 1 if cfg.use_attention else 0))
    buf.write(struct.pack("<d", cfg.logvar_clip))
    items = model.named_parameters()
    buf.write(struct.pack("<I", len(items)))
    for name, tensor in items:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", tensor.data.ndim))
        for dim in tensor.data.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DataError("model file is truncated")
    return raw


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise DataError(f"{path} is not a model file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise DataError(f"unsupported model file version {version}")
        ints = struct.unpack("<7i", _read_exact(fh, 28))
        (use_attention,) = struct.unpack("<B", _read_exact(fh, 1))
        (logvar_clip,) = struct.unpack("<d", _read_exact(fh, 8))
        config = ModelConfig(*ints, use_attention=bool(use_attention),
                             logvar_clip=logvar_clip)
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4))
        params: dict[str, Tensor] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape)
            params[name] = Tensor(data.astype(np.float64), requires_grad=True)
    return Model(config, params)
