"""Teacher-forced cross-entropy training with Adam, stepped learning-rate
decay, global-norm gradient clipping, and binary checkpoints.

Checkpoint layout: magic bytes "NTTCKPT1", a little-endian uint64 header
length, a UTF-8 JSON header (version, model hyperparameters, epoch, Adam
step counter, RNG state, ordered tensor directory with name/shape/offset),
then raw little-endian float64 payloads in directory order. Offsets are
relative to the payload start.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .model import CaptionModel, ModelConfig, build_model
from .rng import SeededRng
from .taskgen import Example, SlotTok, TextTok, split_examples

CHECKPOINT_MAGIC = b"NTTCKPT1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 10
    anneal_factor: float = 0.8
    anneal_every: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    eval_split: str = "val"       # accuracy is measured on this split
    target_accuracy: float = 0.0  # stop early once reached (0 disables)
    shuffle: bool = True

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not (0.0 < self.anneal_factor <= 1.0):
            raise ValueError("anneal_factor must be in (0, 1]")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """base_lr decayed by anneal_factor once per anneal_every epochs."""
    return cfg.base_lr * cfg.anneal_factor ** (epoch // cfg.anneal_every)


def step_loss(example: Example, model: CaptionModel, train: bool = False,
              rng: SeededRng | None = None) -> ad.Tensor:
    """Mean next-token negative log-likelihood under teacher forcing.

    Text targets score the sentinel mass times the textual word probability;
    slot targets score the region, its plurality, and its sub-category.
    """
    tokens = example.tokens
    if len(tokens) < 2:
        raise ValueError("example needs at least two tokens (BOS + target)")
    state = model.init_state()
    total = None
    n_regions = example.regions.count
    for t in range(1, len(tokens)):
        dist, _, state = model.step(state, tokens[t - 1], example.regions, train, rng)
        target = tokens[t]
        if isinstance(target, TextTok):
            contrib = ad.add(ad.nll_pick(dist.p_region_sentinel, n_regions),
                             ad.nll_pick(dist.p_txt, target.id))
        else:
            contrib = ad.add(ad.add(ad.nll_pick(dist.p_region_sentinel, target.region),
                                    ad.nll_pick(dist.p_plural[target.region], target.plural)),
                             ad.nll_pick(dist.p_subcat[target.region], target.subcat))
        total = contrib if total is None else ad.add(total, contrib)
    return ad.scale(total, 1.0 / (len(tokens) - 1))


class Adam:
    """Bias-corrected Adam over a parameter set, applied in sorted name order."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.m):
            p = self.params[name]
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def load_state(self, header: dict, moments_m: dict, moments_v: dict) -> None:
        self.t = int(header["t"])
        self.beta1, self.beta2, self.eps = header["beta1"], header["beta2"], header["eps"]
        self.m = {k: v.copy() for k, v in moments_m.items()}
        self.v = {k: v.copy() for k, v in moments_v.items()}


def adam_step(optimizer: Adam, lr: float) -> None:
    optimizer.step(lr)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for name in sorted(params.names()):
        g = params[name].grad
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad = p.grad * factor
    return norm


def teacher_forced_accuracy(model: CaptionModel, examples: list[Example]) -> float:
    """Fraction of steps whose combined-space argmax equals the target token."""
    from .inference import argmax_token  # local import avoids a cycle

    correct = 0
    total = 0
    for ex in examples:
        state = model.init_state()
        for t in range(1, len(ex.tokens)):
            dist, _, state = model.step(state, ex.tokens[t - 1], ex.regions, train=False)
            _, tok = argmax_token(dist)
            if tok == ex.tokens[t]:
                correct += 1
            total += 1
    return correct / total if total else 0.0


def train(examples: list[Example], model: CaptionModel, cfg: TrainConfig,
          optimizer: Adam | None = None, rng: SeededRng | None = None,
          start_epoch: int = 0) -> list[dict]:
    """Run the training loop; returns one log record per completed epoch.

    Passing optimizer/rng/start_epoch from a loaded checkpoint resumes an
    interrupted run on the exact same trajectory.
    """
    train_set = split_examples(examples, "train") or examples
    eval_set = split_examples(examples, cfg.eval_split) or train_set
    optimizer = optimizer or Adam(model.params, cfg.beta1, cfg.beta2, cfg.eps)
    rng = rng or SeededRng(cfg.seed)

    log: list[dict] = []
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(len(train_set)) if cfg.shuffle else np.arange(len(train_set))
        epoch_loss = 0.0
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            model.params.zero_grad()
            batch_loss = 0.0
            try:
                for ex in batch:
                    with Tape() as tape:
                        loss = step_loss(ex, model, train=True, rng=rng)
                        tape.backward(loss)
                    batch_loss += loss.item()
            except ValueError as e:
                raise TrainingDiverged(f"epoch {epoch} batch {bi}: {e}") from e
            batch_loss /= len(batch)
            if math.isnan(batch_loss) or math.isinf(batch_loss):
                raise TrainingDiverged(f"epoch {epoch} batch {bi}: non-finite loss")
            inv = 1.0 / len(batch)
            for p in model.params:
                p.grad = p.grad * inv
            clip_gradients(model.params, cfg.grad_clip)
            optimizer.step(lr)
            epoch_loss += batch_loss * len(batch)
        epoch_loss /= len(order)
        accuracy = teacher_forced_accuracy(model, eval_set)
        log.append({"epoch": epoch, "lr": lr, "train_loss": epoch_loss,
                    "accuracy": accuracy, "eval_split": cfg.eval_split})
        if cfg.target_accuracy and accuracy >= cfg.target_accuracy:
            break
    return log


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, model: CaptionModel, optimizer: Adam | None = None,
                    epoch: int = 0, rng: SeededRng | None = None,
                    train_cfg: TrainConfig | None = None) -> None:
    entries: list[tuple[str, np.ndarray]] = [(p.name, p.data) for p in model.params]
    if optimizer is not None:
        for name in sorted(optimizer.m):
            entries.append((f"adam.m.{name}", optimizer.m[name]))
        for name in sorted(optimizer.v):
            entries.append((f"adam.v.{name}", optimizer.v[name]))

    directory = []
    offset = 0
    for name, arr in entries:
        nbytes = arr.size * 8
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "nbytes": nbytes})
        offset += nbytes

    header = {
        "version": 1,
        "model": model.cfg.to_dict(),
        "epoch": epoch,
        "adam": optimizer.state_dict() if optimizer is not None else None,
        "rng_state": rng.get_state() if rng is not None else None,
        "train": asdict(train_cfg) if train_cfg is not None else None,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> dict:
    """Load a checkpoint; returns model, optimizer (if saved), epoch, rng state."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()

    model = build_model(ModelConfig.from_dict(header["model"]))
    for p in model.params:
        if p.name not in tensors:
            raise ValueError(f"checkpoint missing tensor {p.name!r}")
        if tensors[p.name].shape != p.data.shape:
            raise ValueError(f"checkpoint tensor {p.name!r} has shape "
                             f"{tensors[p.name].shape}, expected {p.data.shape}")
        p.data = tensors[p.name]

    optimizer = None
    if header.get("adam") is not None:
        optimizer = Adam(model.params)
        m = {p.name: tensors[f"adam.m.{p.name}"] for p in model.params}
        v = {p.name: tensors[f"adam.v.{p.name}"] for p in model.params}
        optimizer.load_state(header["adam"], m, v)

    rng = None
    if header.get("rng_state") is not None:
        rng = SeededRng(header["rng_state"]["seed"])
        rng.set_state(header["rng_state"])

    return {"model": model, "optimizer": optimizer, "epoch": int(header["epoch"]),
            "rng": rng, "header": header}
