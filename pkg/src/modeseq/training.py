"""Training loop, per-step CSV log and the checkpoint file format."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ModelConfig, TrainConfig, config_snapshot
from .features import POS_SCALE, Sample, SceneBatch, featurize
from .losses import total_objective
from .network import ModeSeqNetwork
from .numcore import AdamW, backward, clip_grad_norm, cosine_lr

CHECKPOINT_FORMAT = "modeseq-checkpoint"
CHECKPOINT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def log_columns(n_layers: int) -> list[str]:
    cols = ["step", "epoch"]
    for ell in range(n_layers):
        cols += [f"layer{ell}_reg", f"layer{ell}_cls", f"layer{ell}_rank", f"layer{ell}_total"]
    return cols + ["total", "lr", "grad_norm", "clipped"]


@dataclass
class TrainResult:
    network: ModeSeqNetwork
    optimizer: AdamW
    history: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.history], dtype=np.float64)


def total_steps(n_samples: int, cfg: TrainConfig) -> int:
    if cfg.max_steps:
        return cfg.max_steps
    return cfg.epochs * math.ceil(n_samples / cfg.batch_size)


def train_network(samples: Sequence[Sample] | SceneBatch, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  log_path=None, checkpoint_path=None, checkpoint_every: int = 0,
                  network: Optional[ModeSeqNetwork] = None,
                  callback: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Fit a network with AdamW, cosine learning rate and global-norm clipping.

    Runs are deterministic given ``train_cfg.seed`` (which also seeds the
    parameter initialisation). Raises :class:`NumericalError` on a non-finite
    loss or gradient norm, naming the step and the offending layer terms.
    """
    data = samples if isinstance(samples, SceneBatch) else featurize(samples)
    n = len(data)
    if n == 0:
        raise ValueError("no training samples")
    net = network
    if net is None:
        net = ModeSeqNetwork(model_cfg, seed=train_cfg.seed)
        if train_cfg.init_mean_future:
            init_mean_future(net, data.gt)
    params = net.trainable()
    opt = AdamW(params, lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2),
                eps=train_cfg.adam_eps, weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))
    steps = total_steps(n, train_cfg)
    bs = min(train_cfg.batch_size, n)
    result = TrainResult(net, opt)
    cols = log_columns(model_cfg.n_layers)

    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(log_fh, fieldnames=cols)
        writer.writeheader()
    try:
        step = 0
        epoch = 0
        while step < steps:
            order = rng.permutation(n)
            for start in range(0, n, bs):
                if step >= steps:
                    break
                batch = data.subset(order[start:start + bs])
                lr = cosine_lr(step, steps, train_cfg.lr)
                outputs = net(batch)
                loss, terms = total_objective(outputs, batch.gt, train_cfg, joint=model_cfg.joint)
                row = {"step": step, "epoch": epoch}
                for ell, t in enumerate(terms):
                    row.update({f"layer{ell}_reg": t.regression, f"layer{ell}_cls": t.classification,
                                f"layer{ell}_rank": t.ranking, f"layer{ell}_total": t.total})
                if not np.isfinite(loss.item()):
                    raise NumericalError(f"non-finite loss at step {step}: {row}")
                backward(loss)
                norm, clipped = clip_grad_norm(params, train_cfg.grad_clip)
                if not np.isfinite(norm):
                    raise NumericalError(f"non-finite gradient norm at step {step}: {row}")
                opt.step(lr)
                net.zero_grad()
                row.update({"total": loss.item(), "lr": lr, "grad_norm": norm, "clipped": int(clipped)})
                result.history.append(row)
                if writer is not None:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
                if callback is not None:
                    callback(row)
                step += 1
                if checkpoint_path is not None and checkpoint_every and step % checkpoint_every == 0:
                    save_checkpoint(checkpoint_path, net, model_cfg, train_cfg, opt, step)
            epoch += 1
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, net, model_cfg, train_cfg, opt, len(result.history))
    return result


def init_mean_future(network: ModeSeqNetwork, gt: np.ndarray) -> None:
    """Set every trajectory head's output bias to the mean training future.

    All modes then start where the ground truth lives, spread only by their
    query-dependent part. Starting at the origin instead lets one mode win every
    assignment on the way there, dragging the others along with it.
    """
    mean = np.asarray(gt, dtype=np.float64).mean(axis=(0, 1)).reshape(-1) / POS_SCALE
    for head in network.decoder.heads:
        head.loc.fc2.bias.data = mean.copy()


# checkpoints


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, network: ModeSeqNetwork, model_cfg: ModelConfig, train_cfg: TrainConfig,
                    optimizer: Optional[AdamW] = None, step: int = 0) -> Path:
    """Write a zip holding a JSON header, every parameter and the optimizer state.

    Identical inputs give byte-identical files. The write is atomic.
    """
    path = Path(path)
    state = network.state_dict()
    opt_state = optimizer.state_dict() if optimizer is not None else {}
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "config": config_snapshot(model_cfg, train_cfg),
        "parameters": sorted(state),
        "optimizer": sorted(opt_state),
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write_entry(zf, "header.json", json.dumps(header, indent=1, sort_keys=True).encode())
        for name in sorted(state):
            _write_entry(zf, f"params/{name}.npy", _npy_bytes(state[name]))
        for name in sorted(opt_state):
            _write_entry(zf, f"optim/{name}.npy", _npy_bytes(opt_state[name]))
    os.replace(tmp, path)
    return path


@dataclass
class Checkpoint:
    network: ModeSeqNetwork
    model_config: ModelConfig
    train_config: TrainConfig
    step: int
    optimizer_state: dict
    header: dict

    def optimizer(self) -> AdamW:
        cfg = self.train_config
        opt = AdamW(self.network.trainable(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                    eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
        if self.optimizer_state:
            opt.load_state_dict(self.optimizer_state)
        return opt


def load_checkpoint(path, model_config: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint; ``model_config``, if given, must match the stored one's dimensions."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise ValueError(f"{path}: not a readable checkpoint ({exc})") from exc
    with zf:
        try:
            header = json.loads(zf.read("header.json"))
        except KeyError:
            raise ValueError(f"{path}: checkpoint has no header") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        stored = ModelConfig(**header["config"]["model"])
        train_cfg = TrainConfig(**header["config"]["train"])
        if model_config is not None:
            dims = ("hidden_dim", "n_heads", "n_layers", "n_modes", "max_modes", "joint",
                    "share_heads", "t_obs", "t_hat")
            diff = [f"{k}: checkpoint {getattr(stored, k)} vs config {getattr(model_config, k)}"
                    for k in dims if getattr(stored, k) != getattr(model_config, k)]
            if diff:
                raise ValueError(f"{path}: dimension mismatch: " + "; ".join(diff))
            stored = model_config
        state = {n: np.load(io.BytesIO(zf.read(f"params/{n}.npy"))) for n in header["parameters"]}
        opt_state = {n: np.load(io.BytesIO(zf.read(f"optim/{n}.npy"))) for n in header["optimizer"]}
    net = ModeSeqNetwork(stored, seed=0)
    net.load_state_dict(state)
    return Checkpoint(net, stored, train_cfg, int(header["step"]), opt_state, header)
