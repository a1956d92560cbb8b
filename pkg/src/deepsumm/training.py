"""Optimizer, training loop, grid search and checkpoint files."""

from __future__ import annotations

import itertools
import json
import logging
import math
import shutil
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics
from .corpus import make_batches
from .errors import ContractError, DivergedError, FormatError, NonFiniteError
from .model import Model
from .seq2seq import Seq2Seq, Seq2SeqConfig
from .tensor import backward, no_grad
from .transformer import Transformer, TransformerConfig

logger = logging.getLogger(__name__)

MODEL_KINDS = {"transformer": Transformer, "seq2seq": Seq2Seq}
CONFIG_KINDS = {"transformer": TransformerConfig, "seq2seq": Seq2SeqConfig}

CHECKPOINT_MAGIC = b"DSUM"
CHECKPOINT_VERSION = 1


def build_model(kind: str, config, seed: int = 0, dtype=np.float32) -> Model:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    return cls(config, seed=seed, dtype=dtype)


# -- optimization -------------------------------------------------------------


class Adam:
    """Adaptive moment estimation with a fixed learning rate."""

    def __init__(self, params: Sequence, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            g *= factor
    return total


# -- training loop -----------------------------------------------------------------


@dataclass
class TrainHyper:
    lr: float = 1e-4
    epochs: int = 10
    batch: int = 128
    seed: int = 0
    clip_norm: float = 5.0
    max_steps: Optional[int] = None
    dropout: Optional[float] = None  # None: use the config's value


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ppl: float
    wall_seconds: float
    steps: int = 0


@dataclass
class TrainRun:
    model_kind: str
    config: object
    learning_rate: float
    epochs: int
    seed: int
    batch: int = 0
    records: list = field(default_factory=list)
    best_checkpoint_path: Optional[str] = None
    best_val_ppl: float = math.inf
    steps: int = 0
    error: Optional[str] = None
    point: dict = field(default_factory=dict)
    model: Optional[Model] = field(default=None, repr=False, compare=False)

    @property
    def final_val_ppl(self) -> float:
        return self.records[-1].val_ppl if self.records else math.inf

    @property
    def loss_curve(self) -> list:
        return [r.train_loss for r in self.records]

    def summary(self) -> dict:
        return {"model_kind": self.model_kind, "config": asdict(self.config),
                "learning_rate": self.learning_rate, "epochs": self.epochs, "seed": self.seed,
                "batch": self.batch, "final_val_ppl": self.final_val_ppl,
                "best_val_ppl": self.best_val_ppl, "best_checkpoint_path": self.best_checkpoint_path,
                "steps": self.steps, "error": self.error, "point": self.point}


def evaluate_loss(model: Model, pairs: Sequence[tuple], batch_size: int = 64) -> tuple:
    """Summed teacher-forced cross-entropy and non-pad target token count over ``pairs``."""
    total = 0.0
    count = 0
    with no_grad():
        for batch in make_batches(pairs, batch_size):
            total += float(model.loss(batch, dropout=0.0, reduction="sum").data)
            count += int(batch.tgt_mask[:, 1:].sum())
    return total, count


def evaluate_perplexity(model: Model, pairs: Sequence[tuple], batch_size: int = 64) -> float:
    return metrics.perplexity(*evaluate_loss(model, pairs, batch_size))


def train(model_kind: str, config, train_pairs: Sequence[tuple], val_pairs: Sequence[tuple],
          hyper: TrainHyper, out_dir=None, model: Optional[Model] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainRun:
    """Train one model; returns the run with per-epoch records and the trained model attached.

    Each epoch shuffles with a seed derived from ``hyper.seed``, takes one
    clipped Adam step per batch and then measures validation perplexity.
    ``wall_seconds`` covers the optimization steps only. With ``out_dir`` a
    checkpoint is written per epoch, the best one copied to ``best.ckpt``, and
    records appended to ``train_log.jsonl``.
    """
    if not train_pairs:
        raise ContractError("training set is empty")
    if model is None:
        model = build_model(model_kind, config, seed=hyper.seed)
    optimizer = Adam(list(model.parameters()), lr=hyper.lr)
    run = TrainRun(model_kind, config, hyper.lr, hyper.epochs, hyper.seed, hyper.batch, model=model)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.jsonl"
        log_path.write_text("")
    shuffle_rng = np.random.default_rng(hyper.seed)
    val_set = val_pairs if val_pairs else train_pairs
    batch_index = 0
    for epoch in range(1, hyper.epochs + 1):
        epoch_seed = int(shuffle_rng.integers(2**31))
        losses = []
        start = time.perf_counter()
        for batch in make_batches(train_pairs, hyper.batch, shuffle_seed=epoch_seed):
            if hyper.max_steps is not None and run.steps >= hyper.max_steps:
                break
            optimizer.zero_grad()
            try:
                loss = model.loss(batch, dropout=hyper.dropout)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteError("loss")
                backward(loss)
            except NonFiniteError:
                raise DivergedError(batch_index) from None
            clip_grad_norm(optimizer.params, hyper.clip_norm)
            optimizer.step()
            losses.append(value)
            run.steps += 1
            batch_index += 1
        wall = time.perf_counter() - start
        if not losses:
            break
        val_ppl = evaluate_perplexity(model, val_set)
        record = EpochRecord(epoch, float(np.mean(losses)), val_ppl, wall, run.steps)
        run.records.append(record)
        logger.info("epoch %d loss %.4f val_ppl %.3f (%.2fs)", epoch, record.train_loss, val_ppl, wall)
        if out is not None:
            ckpt = out / f"epoch_{epoch:03d}.ckpt"
            save_checkpoint(model, ckpt)
            with open(log_path, "a") as fh:
                fh.write(json.dumps({"epoch": epoch, "train_loss": record.train_loss,
                                     "val_ppl": val_ppl, "wall_seconds": wall}) + "\n")
            if val_ppl < run.best_val_ppl:
                shutil.copyfile(ckpt, out / "best.ckpt")
                run.best_checkpoint_path = str(out / "best.ckpt")
        run.best_val_ppl = min(run.best_val_ppl, val_ppl)
        if on_epoch is not None:
            on_epoch(record)
        if hyper.max_steps is not None and run.steps >= hyper.max_steps:
            break
    return run


# -- grid search ----------------------------------------------------------------------

GRID_AXES = ("learning_rate", "N", "d_model", "h", "batch")


@dataclass
class GridSpec:
    axes: dict

    def __post_init__(self):
        unknown = set(self.axes) - set(GRID_AXES)
        if unknown:
            raise ContractError(f"unknown grid axes {sorted(unknown)}; allowed: {GRID_AXES}")
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ContractError("grid must have at least one value on every axis")

    def points(self) -> list:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]

    def __len__(self) -> int:
        return math.prod(len(v) for v in self.axes.values())


def apply_point(model_kind: str, config, hyper: TrainHyper, point: dict) -> tuple:
    """Config and hyperparameters for one grid point."""
    cfg_changes = {}
    if model_kind == "transformer":
        for axis, name in (("N", "N"), ("d_model", "d_model"), ("h", "h")):
            if axis in point:
                cfg_changes[name] = point[axis]
        if "d_model" in point or "h" in point:
            cfg_changes.setdefault("d_k", 0)
            cfg_changes.setdefault("d_v", 0)
    elif "d_model" in point:
        cfg_changes.update(embed_dim=point["d_model"], hidden_dim=point["d_model"])
    new_cfg = replace(config, **cfg_changes) if cfg_changes else config
    new_hyper = replace(hyper, lr=point.get("learning_rate", hyper.lr), batch=point.get("batch", hyper.batch))
    return new_cfg, new_hyper


def grid_search(model_kind: str, grid: GridSpec, config, train_pairs, val_pairs,
                budget_epochs: int, hyper: Optional[TrainHyper] = None, out_dir=None) -> list:
    """Train every grid point for ``budget_epochs``; rank by final validation perplexity.

    Failed points are kept, marked with ``error`` and ranked last.
    """
    hyper = replace(hyper or TrainHyper(), epochs=budget_epochs)
    runs = []
    for i, point in enumerate(grid.points()):
        point_dir = Path(out_dir) / f"point_{i:03d}" if out_dir is not None else None
        cfg, hp = config, hyper
        try:
            cfg, hp = apply_point(model_kind, config, hyper, point)
            run = train(model_kind, cfg, train_pairs, val_pairs, hp, point_dir)
        except Exception as exc:  # a failing point must not abort the sweep
            logger.warning("grid point %s failed: %s", point, exc)
            run = TrainRun(model_kind, cfg, point.get("learning_rate", hp.lr), hp.epochs, hp.seed,
                           point.get("batch", hp.batch), error=f"{type(exc).__name__}: {exc}")
        run.point = dict(point)
        runs.append(run)
    return sorted(runs, key=lambda r: (r.error is not None, r.final_val_ppl))


# -- checkpoints ------------------------------------------------------------------------


def _config_text(config) -> str:
    return "".join(f"{f.name}={getattr(config, f.name)!r}\n" for f in fields(config))


def _parse_config(kind: str, text: str):
    cls = CONFIG_KINDS[kind]
    types = {"int": int, "float": float}
    values = {}
    for line in text.splitlines():
        key, sep, raw = line.partition("=")
        if not sep:
            raise FormatError(f"malformed config line {line!r}")
        values[key] = raw
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            raise FormatError(f"config missing {f.name!r}")
        kwargs[f.name] = types.get(f.type if isinstance(f.type, str) else f.type.__name__, str)(values[f.name])
    return cls(**kwargs)


def save_checkpoint(model: Model, path) -> None:
    """Little-endian: magic, version, kind, config text, then named float32 tensors."""
    kind = model.kind.encode("utf-8")
    cfg = _config_text(model.config).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
              struct.pack("<I", len(kind)), kind, struct.pack("<I", len(cfg)), cfg,
              struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw_name = name.encode("utf-8")
        chunks += [struct.pack("<I", len(raw_name)), raw_name, struct.pack("<I", p.ndim),
                   struct.pack(f"<{p.ndim}I", *p.shape), p.data.astype("<f4").tobytes()]
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError("checkpoint truncated")
        chunk = self.data[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("checkpoint contains invalid text") from None


def load_checkpoint(path) -> tuple:
    """Read a checkpoint; returns ``(kind, config, {name: float32 array})``."""
    try:
        r = _Reader(Path(path).read_bytes())
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    kind = r.text()
    if kind not in CONFIG_KINDS:
        raise FormatError(f"unknown model kind {kind!r} in checkpoint")
    try:
        config = _parse_config(kind, r.text())
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad config block: {exc}") from None
    params = {}
    for _ in range(r.u32()):
        name = r.text()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = math.prod(shape)
        params[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after checkpoint tensors")
    return kind, config, params


def load_model(path) -> Model:
    kind, config, params = load_checkpoint(path)
    model = build_model(kind, config)
    model.load_state_dict(params)
    return model
