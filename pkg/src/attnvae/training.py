"""Training loop: loss assembly, KL weight schedule, optimizer, early stopping.

The objective is the negative evidence lower bound with the KL term weighted
by a cyclically annealed beta: after a linear warm-up (grace period) the
weight ramps from beta_low to beta_high over each cycle and then snaps back,
so reconstruction dominates early in every cycle and the latent code cannot
collapse silently. Windows fed to the model are corrupted with Gaussian
noise; the likelihood target stays clean. Validation reconstruction loss is
computed without input noise but with latent sampling, using an epsilon
stream that is reset every epoch so consecutive epochs are compared on
identical draws. The best parameters by validation reconstruction loss are
kept and restored when patience runs out.

All randomness is drawn from named substreams of the run seed, so two runs
with the same configuration produce bitwise identical histories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .model import Model, forward_train
from .seeding import substream


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 512
    noise_std: float = 0.01
    grace_epochs: int = 25
    cycle_epochs: int = 25
    beta_low: float = 1e-8
    beta_high: float = 1e-2
    patience: int = 250
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0

    def validate(self) -> None:
        for name in ("max_epochs", "batch_size", "grace_epochs", "cycle_epochs",
                     "beta_low", "beta_high", "learning_rate", "eps"):
            if getattr(self, name) <= 0:
                raise ContractError(f"TrainConfig.{name} must be positive")
        if self.patience < 1:
            raise ContractError("TrainConfig.patience must be at least 1")
        if self.noise_std < 0:
            raise ContractError("TrainConfig.noise_std must be non-negative")


def beta_at_epoch(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    """KL weight for a zero-based epoch index.

    During the grace period the weight rises linearly from 0 to beta_low.
    Afterwards each cycle ramps linearly from beta_low to beta_high, reaching
    beta_high on the cycle's final epoch before snapping back.
    """
    if epoch < 0:
        raise ContractError("beta_at_epoch: epoch must be non-negative")
    grace, cycle = config.grace_epochs, config.cycle_epochs
    if epoch < grace:
        return (epoch / grace) * config.beta_low
    if cycle == 1:
        return config.beta_high
    phase = (epoch - grace) % cycle
    return config.beta_low + (phase / (cycle - 1)) * (config.beta_high - config.beta_low)


def loss_terms(x_clean: np.ndarray, outputs: dict[str, Tensor], beta: float
               ) -> dict[str, Tensor]:
    """Batch-mean loss decomposition: total = recon + beta * kl.

    recon is the negative Gaussian log likelihood of the clean window summed
    over time steps and channels; kl is the divergence of the latent matrix
    posterior from a standard normal, summed the same way.
    """
    log_p = ad.gaussian_log_prob(Tensor(np.asarray(x_clean, dtype=np.float64)),
                                 outputs["mu_x"], outputs["log_var_x"])
    recon = ad.neg(ad.tmean(ad.tsum(log_p, axis=(-2, -1))))
    kl = ad.tmean(ad.kl_diag_gaussian_to_std_normal(outputs["mu_z"], outputs["log_var_z"]))
    total = ad.add(recon, ad.mul(kl, beta))
    return {"total": total, "recon": recon, "kl": kl}


class AmsGrad:
    """Adam variant that normalizes by a running elementwise maximum of the
    second moment, so the effective step size never grows between steps.

    Both moment estimates are bias-corrected; the maximum is tracked on the
    uncorrected second moment so it is non-decreasing by construction.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-7):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._vhat: dict[str, np.ndarray] = {}

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in named_params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.data)
                self._vhat[name] = np.zeros_like(p.data)
            v, vhat = self._v[name], self._vhat[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(vhat, v, out=vhat)
            p.data -= self.lr * (m / bc1) / (np.sqrt(vhat / bc2) + self.eps)

    @staticmethod
    def zero_grad(named_params: list[tuple[str, Tensor]]) -> None:
        for _, p in named_params:
            p.grad = None


def _batched(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def validation_recon(model: Model, windows: np.ndarray, config: TrainConfig,
                     epoch_rng: np.random.Generator) -> float:
    """Mean per-window reconstruction loss with sampling but no input noise."""
    total = 0.0
    latent_shape = (windows.shape[1], model.config.latent_dim)
    for batch_idx in _batched(len(windows), config.batch_size):
        batch = windows[batch_idx]
        eps = epoch_rng.standard_normal((len(batch), *latent_shape))
        with ad.no_grad():
            outputs = forward_train(model, batch, eps)
            terms = loss_terms(batch, outputs, beta=0.0)
        total += terms["recon"].item() * len(batch)
    return total / len(windows)


def train(model: Model, train_windows: np.ndarray, val_windows: np.ndarray,
          config: TrainConfig) -> tuple[Model, list[dict[str, float]]]:
    """Optimize the model in place; returns it with the best weights restored,
    plus one history record per epoch ran."""
    config.validate()
    train_windows = np.asarray(train_windows, dtype=np.float64)
    val_windows = np.asarray(val_windows, dtype=np.float64)
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ContractError("train: training and validation sets must be non-empty")

    named = model.named_parameters()
    opt = AmsGrad(config.learning_rate, config.beta1, config.beta2, config.eps)
    batch_rng = substream(config.seed, "batch")
    noise_rng = substream(config.seed, "noise")
    eps_rng = substream(config.seed, "epsilon")
    latent_shape = (train_windows.shape[1], model.config.latent_dim)

    history: list[dict[str, float]] = []
    best_val = np.inf
    best_epoch = -1
    best_state: dict[str, np.ndarray] = {}

    for epoch in range(config.max_epochs):
        beta = beta_at_epoch(epoch, config)
        order = batch_rng.permutation(len(train_windows))
        recon_sum = 0.0
        kl_sum = 0.0
        for batch_idx in _batched(len(train_windows), config.batch_size, order):
            clean = train_windows[batch_idx]
            noisy = clean + config.noise_std * noise_rng.standard_normal(clean.shape)
            eps = eps_rng.standard_normal((len(clean), *latent_shape))
            outputs = forward_train(model, noisy, eps)
            terms = loss_terms(clean, outputs, beta)
            recon_sum += terms["recon"].item() * len(clean)
            kl_sum += terms["kl"].item() * len(clean)
            AmsGrad.zero_grad(named)
            ad.backward(terms["total"])
            opt.step(named)

        val_recon = validation_recon(model, val_windows, config,
                                     substream(config.seed, "val_epsilon"))
        improved = val_recon < best_val
        if improved:
            best_val = val_recon
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in named}
        history.append({
            "epoch": float(epoch),
            "recon": recon_sum / len(train_windows),
            "kl": kl_sum / len(train_windows),
            "beta": beta,
            "val_recon": val_recon,
            "best_flag": 1.0 if improved else 0.0,
        })
        if epoch - best_epoch >= config.patience:
            break

    for name, p in named:
        p.data = best_state[name]
    return model, history


def write_history(history: list[dict[str, float]], path) -> None:
    import csv

    fields = ["epoch", "recon", "kl", "beta", "val_recon", "best_flag"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: f"{row[k]:.17g}" if k not in ("epoch", "best_flag")
                             else int(row[k]) for k in fields})


def read_history(path) -> list[dict[str, float]]:
    import csv

    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
