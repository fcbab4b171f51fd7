"""State-representation pretraining for the feature task.

A randomly initialized policy collects (state, feature-observation) pairs;
a regression network with the policy's trunk learns to predict the flat
state from the observation; the trained hidden layers are then transplanted
into the policy, whose action head starts fresh.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .dynamics import sample_initial_state
from .policy import (AdamParams, AdamState, MlpArch, MlpParams, adam_step,
                     forward_from_handles, forward_np, init_params,
                     param_handles, save_policy)
from .rollout import RolloutSettings, rollout

logger = logging.getLogger(__name__)

DOMAIN_PRETRAIN = 5

_MAGIC = b"DQRD"
_VERSION = 1


@dataclass
class ReprDataset:
    """Paired ground-truth states (n, 15) and feature observations (n, 82);
    the first ``n_train`` rows are the training split."""

    x: np.ndarray
    o: np.ndarray
    n_train: int
    seed: int

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def train_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[:self.n_train], self.o[:self.n_train]

    def holdout_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.n_train:], self.o[self.n_train:]


def collect_dataset(policy: MlpParams, size: int, rng: np.random.Generator,
                    s: RolloutSettings, init_cfg=None, envs: int = 100,
                    holdout_frac: float = 0.1, seed: int = 0) -> ReprDataset:
    """Roll the (random) policy through feature-mode episodes until ``size``
    pairs are stored, shuffle, and split train/holdout."""
    if size <= 0:
        raise ValueError("dataset size must be positive")
    if s.task != "features":
        raise ValueError("representation datasets are collected in feature mode")
    if init_cfg is None:
        init_cfg = _default_init()
    xs, os_ = [], []
    have = 0
    while have < size:
        init = sample_initial_state(rng, init_cfg, envs, s.dyn.delay_steps)
        batch = rollout(lambda o: (forward_np(policy, o), {}), init, s, rng=rng)
        n, b, _ = batch.obs.shape
        xs.append(batch.x[:n].reshape(n * b, 15))
        os_.append(batch.obs.reshape(n * b, 82))
        have += n * b
    x = np.concatenate(xs)[:size]
    o = np.concatenate(os_)[:size]
    perm = rng.permutation(size)
    x, o = x[perm], o[perm]
    n_train = size - max(1, int(round(size * holdout_frac))) if size > 1 else 1
    return ReprDataset(x, o, n_train, seed)


def _default_init():
    from .dynamics import InitStateParams
    return InitStateParams()


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-6))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def forward(self, x):
        return (x - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


@dataclass
class FitResult:
    params: MlpParams
    norm: Standardizer
    holdout_mse: list[float]   # raw-state MSE per epoch
    train_loss: list[float]


def fit_representation(dataset: ReprDataset, arch: MlpArch, epochs: int,
                       rng: np.random.Generator, lr: float = 1e-3,
                       batch_size: int = 1024, standardize: bool = True,
                       grad_clip: float = 0.0) -> FitResult:
    """Minibatch regression of the flat state from feature observations.

    Targets are standardized per dimension with training-split statistics
    (stored in the result so predictions can be mapped back); the reported
    holdout error is the raw-state mean squared norm, comparable to the
    variance of the data itself. Aborts if the holdout error exceeds 10x its
    initial value.
    """
    if arch.head != "linear" or arch.out_dim != 15 or arch.in_dim != 82:
        raise ValueError("representation net must map 82 observations to 15 states")
    x_tr, o_tr = dataset.train_split()
    x_ho, o_ho = dataset.holdout_split()
    norm = Standardizer.fit(x_tr) if standardize else Standardizer.identity(15)
    z_tr = norm.forward(x_tr)
    params = init_params(arch, rng)
    adam = AdamState.for_params(params.flat_list())
    hp = AdamParams(lr=lr, grad_clip=grad_clip)

    def holdout_raw_mse() -> float:
        pred = norm.inverse(forward_np(params, o_ho))
        return float(np.mean(np.sum((pred - x_ho) ** 2, axis=1)))

    initial = holdout_raw_mse()
    holdout, train_losses = [], []
    n = x_tr.shape[0]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        nb = 0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            tape = Tape()
            handles = param_handles(params, tape, requires_grad=True)
            pred = forward_from_handles(arch, handles, tape.const(o_tr[idx]), tape)
            diff = tape.sub(pred, tape.const(z_tr[idx]))
            loss = tape.smul(tape.sum(tape.mul(diff, diff)), 1.0 / idx.shape[0])
            grad_map = tape.backward(loss)
            grads = [grad_map[h.node_id] for h in handles]
            params.set_flat_list(adam_step(adam, params.flat_list(), grads, hp))
            epoch_loss += float(loss.value)
            nb += 1
        train_losses.append(epoch_loss / max(nb, 1))
        mse = holdout_raw_mse()
        holdout.append(mse)
        if not np.isfinite(mse) or mse > 10.0 * initial:
            raise RuntimeError(
                f"representation fit diverged at epoch {epoch}: holdout MSE "
                f"{mse:.4g} vs initial {initial:.4g}")
    return FitResult(params, norm, holdout, train_losses)


def variance_baseline(dataset: ReprDataset) -> float:
    """Holdout MSE of always predicting the training-split mean state."""
    x_tr, _ = dataset.train_split()
    x_ho, _ = dataset.holdout_split()
    mean = x_tr.mean(axis=0)
    return float(np.mean(np.sum((x_ho - mean) ** 2, axis=1)))


def transplant(trunk: MlpParams, policy: MlpParams) -> MlpParams:
    """Copy hidden-layer weights from a trained trunk into a policy with the
    same trunk sizes; the policy's own (small-init) final layer is kept."""
    if trunk.arch.in_dim != policy.arch.in_dim \
            or trunk.arch.hidden != policy.arch.hidden:
        raise ValueError(
            f"trunk {trunk.arch.in_dim}x{trunk.arch.hidden} does not match "
            f"policy {policy.arch.in_dim}x{policy.arch.hidden}")
    out = policy.copy()
    for i in range(len(trunk.weights) - 1):
        out.weights[i] = trunk.weights[i].copy()
        out.biases[i] = trunk.biases[i].copy()
    return out


def run_pretraining(cfg, out_dir=None) -> MlpParams:
    """Full pipeline: collect, fit, transplant; returns policy parameters
    ready for feature-mode training. Artifacts land in ``out_dir``."""
    from .config import make_arch, make_rollout_settings

    cfg = cfg.normalized()
    s = make_rollout_settings(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(
        cfg.seed, spawn_key=(DOMAIN_PRETRAIN,)))
    policy_arch = make_arch(cfg)
    policy = init_params(policy_arch, rng)
    logger.info("collecting %d representation pairs", cfg.pretrain.dataset_size)
    dataset = collect_dataset(policy, cfg.pretrain.dataset_size, rng, s,
                              init_cfg=cfg.init_state,
                              envs=min(cfg.pretrain.collect_envs, cfg.envs * 4),
                              holdout_frac=cfg.pretrain.holdout_frac,
                              seed=cfg.seed)
    repr_arch = MlpArch(82, tuple(cfg.hidden), 15, "linear")
    fit = fit_representation(dataset, repr_arch, cfg.pretrain.epochs, rng,
                             lr=cfg.pretrain.lr,
                             batch_size=cfg.pretrain.batch_size,
                             standardize=cfg.pretrain.standardize)
    logger.info("representation holdout MSE %.4f (baseline %.4f)",
                fit.holdout_mse[-1], variance_baseline(dataset))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(out / "pretrain_dataset.bin", dataset)
        save_policy(out / "pretrain_repr.npz", fit.params,
                    extra={"kind": "representation",
                           "holdout_mse": fit.holdout_mse[-1],
                           "norm_mean": fit.norm.mean.tolist(),
                           "norm_std": fit.norm.std.tolist()})
    return transplant(fit.params, policy)


# ------------------------------------------------------------- dataset file

def save_dataset(path, dataset: ReprDataset) -> None:
    """Binary record stream: little-endian header (magic, version, count,
    x_dim, o_dim, n_train, seed) followed by the x block then the o block,
    both float64 little-endian, row-major."""
    header = _MAGIC + struct.pack("<IQIIQq", _VERSION, dataset.size,
                                  dataset.x.shape[1], dataset.o.shape[1],
                                  dataset.n_train, dataset.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dataset.x.astype("<f8").tobytes())
        fh.write(dataset.o.astype("<f8").tobytes())


def load_dataset(path) -> ReprDataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError("not a representation dataset file")
        version, count, x_dim, o_dim, n_train, seed = struct.unpack(
            "<IQIIQq", fh.read(struct.calcsize("<IQIIQq")))
        if version != _VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        x = np.frombuffer(fh.read(count * x_dim * 8), dtype="<f8").reshape(count, x_dim)
        o = np.frombuffer(fh.read(count * o_dim * 8), dtype="<f8").reshape(count, o_dim)
    return ReprDataset(x.astype(np.float64), o.astype(np.float64), n_train, seed)
