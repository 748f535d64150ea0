"""Adam, the milestone schedule, L1 pretraining and adversarial fine-tuning."""

from __future__ import annotations

import csv
import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .autodiff import NumericalError, Tensor, checkpoint, no_grad
from .autodiff import functional as F
from .cfa import PairedImage, PatchBatch, augment, sample_patches
from .config import RunConfig
from .demosaic import DemosaicMethod
from .losses import (CriticScores, d_loss_ragan, identity_extractor, l1_loss, random_conv_extractor,
                     total_generator_loss, vgg19_extractor)
from .models import Discriminator, Generator, NetworkConfig, generator_inputs, images_to_tensor
from .nn import Module, Parameter
from .seeding import derive_seed

CONFIG_KEY = "__config__"
PRETRAIN_COLUMNS = ("step", "lr", "l1")
ADVERSARIAL_COLUMNS = ("step", "lr", "d_loss", "perceptual", "adversarial", "l1", "total")


class DivergenceError(NumericalError):
    """Training produced a NaN or infinite loss."""


# -- optimiser ---------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, Optional[np.ndarray]],
              state: AdamState) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays and advances ``state``."""
    missing = [k for k in params if grads.get(k) is None]
    if missing:
        raise ValueError(f"no gradient for parameters: {missing}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=p.dtype)
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = (b1 * m + (1 - b1) * g).astype(p.dtype)
        v = (b2 * v + (1 - b2) * g * g).astype(p.dtype)
        state.m[k], state.v[k] = m, v
        m_hat = m / c1
        v_hat = v / c2
        out[k] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return out


class Adam:
    """Adam bound to a module's parameters, updating them in place."""

    def __init__(self, module: Module, lr: float = 1e-4, **kw):
        self.params: dict[str, Parameter] = {k: p for k, p in module.named_parameters() if p.requires_grad}
        self.state = AdamState(lr=lr, **kw)

    def step(self) -> None:
        new = adam_step({k: p.data for k, p in self.params.items()},
                        {k: p.grad for k, p in self.params.items()}, self.state)
        for k, p in self.params.items():
            p.data = new[k]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                          for p in params if p.grad is not None))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * s).astype(p.grad.dtype)
    return total


# -- schedule ----------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    base: float = 1e-4
    milestones: tuple = ()
    factor: float = 0.5

    def __post_init__(self):
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {ms}")
        object.__setattr__(self, "milestones", ms)

    @classmethod
    def from_config(cls, cfg) -> "Schedule":
        """Milestones are divided by ``cfg.divisor`` (desk-scale runs)."""
        return cls(cfg.lr, tuple(max(1, m // cfg.divisor) for m in cfg.milestones), cfg.factor)

    def lr(self, step: int) -> float:
        passed = sum(1 for m in self.milestones if m <= step)
        return self.base * self.factor ** passed


# -- data --------------------------------------------------------------------------

def batch_for_step(pairs: Sequence[PairedImage], seed: int, step: int, batch_size: int,
                   patch: int, use_augment: bool) -> PatchBatch:
    """The batch for ``step`` depends only on (seed, step), never on call order."""
    if not pairs:
        raise ValueError("training set is empty")
    factor = pairs[0].factor
    out = PatchBatch([], [], [])
    for i in range(batch_size):
        s = derive_seed(seed, "batch", step, i)
        pair = pairs[s % len(pairs)]
        one = sample_patches(pair, factor, 1, seed=s, patch=patch)
        out.cfa += one.cfa
        out.hr += one.hr
        out.origins += one.origins
    if use_augment:
        out = augment(out, derive_seed(seed, "augment", step))
    return out


def batch_stream(make: Callable[[int], PatchBatch], start: int, stop: int,
                 prefetch: int = 2) -> Iterator[tuple[int, PatchBatch]]:
    """Yield (step, batch) in step order, built by a worker thread ahead of use.

    Each batch is a pure function of its step, so prefetching changes timing
    but never content.
    """
    if prefetch <= 0:
        for step in range(start, stop):
            yield step, make(step)
        return
    q: queue.Queue = queue.Queue(maxsize=prefetch)
    stop_flag = threading.Event()

    def worker():
        for step in range(start, stop):
            if stop_flag.is_set():
                return
            try:
                item = (step, make(step), None)
            except BaseException as exc:  # surfaced in the consumer
                item = (step, None, exc)
            while not stop_flag.is_set():
                try:
                    q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if item[2] is not None:
                return

    th = threading.Thread(target=worker, daemon=True)
    th.start()
    try:
        for _ in range(start, stop):
            step, batch, exc = q.get()
            if exc is not None:
                raise exc
            yield step, batch
    finally:
        stop_flag.set()
        th.join(timeout=5)


# -- checkpoints and logs --------------------------------------------------------------

def _encode_json(doc) -> np.ndarray:
    return np.frombuffer(json.dumps(doc, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def save_model(path, module: Module, meta: dict) -> None:
    arrays = module.state_dict()
    arrays[CONFIG_KEY] = _encode_json(meta)
    checkpoint.save(path, arrays)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    arrays = checkpoint.load(path)
    meta_arr = arrays.pop(CONFIG_KEY, None)
    meta = json.loads(meta_arr.tobytes().decode("utf-8")) if meta_arr is not None else {}
    return arrays, meta


def load_generator(path, dtype=np.float32) -> tuple[Generator, dict]:
    state, meta = read_checkpoint(path)
    if "network" not in meta:
        raise checkpoint.CheckpointError(f"{path}: checkpoint has no network configuration")
    gen = Generator(NetworkConfig(**meta["network"]), seed=0, dtype=dtype)
    gen.load_state_dict(state)
    return gen, meta


class LossLog:
    """CSV loss curve; floats are written with ``repr`` so reruns compare bitwise."""

    def __init__(self, path, columns: Sequence[str]):
        self.path = Path(path) if path is not None else None
        self.columns = tuple(columns)
        self.rows: list[dict] = []
        self._fh = None
        if self.path is not None:
            self._fh = self.path.open("w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(self.columns)

    def log(self, **row) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                                   for c in self.columns])

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _check_finite(value: float, step: int, what: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} is {value} at step {step}")


@dataclass
class TrainResult:
    generator: Generator
    log: LossLog
    checkpoint: Optional[Path] = None
    discriminator: Optional[Discriminator] = None
    manifest: dict = field(default_factory=dict)


def _meta(cfg: RunConfig, phase: str, steps: int) -> dict:
    return {"network": cfg.network.to_dict(), "run": cfg.to_dict(), "phase": phase, "steps": steps,
            "config_sha256": cfg.digest()}


def build_extractor(cfg: RunConfig, dtype=np.float32):
    ext = cfg.loss.extractor
    if ext.kind == "identity":
        return identity_extractor
    if ext.kind == "vgg19":
        return vgg19_extractor(ext.weights, ext.layer, ext.post_activation, dtype=dtype)
    return random_conv_extractor(ext.seed, ext.layer, dtype=dtype)


def _generator_step(gen: Generator, batch: PatchBatch, method: DemosaicMethod, dtype):
    cfa3, init = generator_inputs(batch.cfa, method, dtype)
    hr = images_to_tensor(batch.hr, dtype)
    return gen(cfa3, init), hr


# -- training phases ---------------------------------------------------------------

def pretrain_generator(data: Sequence[PairedImage], cfg: RunConfig, init_state: dict | None = None,
                       out_dir=None, prefetch: int = 2, dtype=np.float32) -> TrainResult:
    """Adam on the L1 loss. Each logged loss is measured before that step's update."""
    if not data:
        raise ValueError("training set is empty")
    tc = cfg.trainer
    gen = Generator(cfg.network, seed=cfg.seed, dtype=dtype)
    if init_state is not None:
        gen.load_state_dict(init_state)
    opt = Adam(gen, tc.lr)
    sched = Schedule.from_config(tc)
    method = DemosaicMethod(cfg.demosaic.init_method, cfg.demosaic.iterations)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = LossLog(out / "pretrain_loss.csv" if out else None, PRETRAIN_COLUMNS)
    make = lambda step: batch_for_step(data, cfg.seed, step, tc.batch_size, tc.patch_size, tc.augment)
    try:
        for step, batch in batch_stream(make, 0, tc.pretrain_steps, prefetch):
            opt.state.lr = sched.lr(step)
            sr, hr = _generator_step(gen, batch, method, dtype)
            loss = l1_loss(sr, hr)
            value = loss.item()
            _check_finite(value, step, "L1 loss")
            if step % tc.log_every == 0:
                log.log(step=step, lr=opt.state.lr, l1=value)
            opt.zero_grad()
            loss.backward()
            if tc.grad_clip is not None:
                clip_grad_norm(list(opt.params.values()), tc.grad_clip)
            opt.step()
    finally:
        log.close()
    result = TrainResult(gen, log)
    if out is not None:
        result.checkpoint = out / "generator_pretrain.ckpt"
        save_model(result.checkpoint, gen, _meta(cfg, "pretrain", tc.pretrain_steps))
        result.manifest = _write_run_manifest(out, cfg, sched, {"pretrain": log.path.name},
                                              {"generator": result.checkpoint.name})
    return result


def adversarial_train(data: Sequence[PairedImage], cfg: RunConfig, generator_checkpoint,
                      out_dir=None, extractor=None, prefetch: int = 2, dtype=np.float32) -> TrainResult:
    """Alternate one critic step (RaGAN) and one generator step (total loss) per batch.

    ``generator_checkpoint`` is a path or a state dict from pretraining.
    """
    if not data:
        raise ValueError("training set is empty")
    tc = cfg.trainer
    if isinstance(generator_checkpoint, (str, Path)):
        if not Path(generator_checkpoint).exists():
            raise FileNotFoundError(f"generator checkpoint {generator_checkpoint} does not exist")
        state, _ = read_checkpoint(generator_checkpoint)
    else:
        state = generator_checkpoint
    gen = Generator(cfg.network, seed=cfg.seed, dtype=dtype)
    gen.load_state_dict(state)
    hr_size = tc.patch_size * cfg.network.scale
    disc = Discriminator(cfg.network, hr_size, seed=cfg.seed, dtype=dtype)
    extractor = extractor if extractor is not None else build_extractor(cfg, dtype)
    weights = cfg.loss.weights()
    opt_g = Adam(gen, tc.lr)
    opt_d = Adam(disc, tc.lr)
    sched = Schedule.from_config(tc)
    method = DemosaicMethod(cfg.demosaic.init_method, cfg.demosaic.iterations)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = LossLog(out / "adversarial_loss.csv" if out else None, ADVERSARIAL_COLUMNS)
    make = lambda step: batch_for_step(data, cfg.seed, step, tc.batch_size, tc.patch_size, tc.augment)
    try:
        for step, batch in batch_stream(make, 0, tc.adversarial_steps, prefetch):
            lr = sched.lr(step)
            opt_g.state.lr = opt_d.state.lr = lr
            sr, hr = _generator_step(gen, batch, method, dtype)
            fake = sr.detach()

            for _ in range(tc.d_steps_per_g):
                opt_d.zero_grad()
                d_loss = d_loss_ragan(CriticScores(disc(hr), disc(fake)), weights.clamp_eps)
                d_value = d_loss.item()
                _check_finite(d_value, step, "critic loss")
                d_loss.backward()
                if tc.grad_clip is not None:
                    clip_grad_norm(list(opt_d.params.values()), tc.grad_clip)
                opt_d.step()

            with no_grad():
                real_scores = disc(hr)
            parts: dict = {}
            total = total_generator_loss(sr, hr, CriticScores(real_scores, disc(sr)), weights,
                                         extractor, parts)
            t_value = total.item()
            _check_finite(t_value, step, "generator loss")
            if step % tc.log_every == 0:
                log.log(step=step, lr=lr, d_loss=d_value, perceptual=parts["perceptual"],
                        adversarial=parts["adversarial"], l1=parts["l1"], total=t_value)
            opt_g.zero_grad()
            total.backward()
            disc.zero_grad()  # the generator step must not leave gradients on the critic
            if tc.grad_clip is not None:
                clip_grad_norm(list(opt_g.params.values()), tc.grad_clip)
            opt_g.step()
    finally:
        log.close()
    result = TrainResult(gen, log, discriminator=disc)
    if out is not None:
        result.checkpoint = out / "generator_adversarial.ckpt"
        save_model(result.checkpoint, gen, _meta(cfg, "adversarial", tc.adversarial_steps))
        save_model(out / "discriminator.ckpt", disc, {"input_size": hr_size, **_meta(cfg, "adversarial",
                                                                                     tc.adversarial_steps)})
        result.manifest = _write_run_manifest(out, cfg, sched, {"adversarial": log.path.name},
                                              {"generator": result.checkpoint.name,
                                               "discriminator": "discriminator.ckpt"})
    return result


def _write_run_manifest(out: Path, cfg: RunConfig, sched: Schedule, curves: dict, ckpts: dict) -> dict:
    path = out / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc.update(config=cfg.to_dict(), config_sha256=cfg.digest(), seed=cfg.seed, git=_git_describe(),
               schedule={"base_lr": sched.base, "milestones": list(sched.milestones), "factor": sched.factor},
               grad_clip=cfg.trainer.grad_clip)
    doc.setdefault("loss_curves", {}).update(curves)
    doc.setdefault("checkpoints", {}).update(ckpts)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc
