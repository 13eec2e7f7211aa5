"""Training loop: depth schedulers, AdamW, warmup, checkpoints, grad checks."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import pickle
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concatenate, no_grad
from .errors import BadMagic, NonFinite, ShapeMismatch, UnsupportedVersion
from .io import EmbeddingStore, PairDataset, make_batches
from .model import ModelConfig, TreeModel
from .objective import info_nce, l1_penalty, level_losses
from .propagation import PropagationConfig
from .splits import SplitConfig

CKPT_MAGIC = b"RTCK"
CKPT_VERSION = 1

SCHEDULERS = ("constant", "linear_growth", "exponential_growth",
              "stochastic", "nested")


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 4e-4
    total_steps: int = 200_000
    warmup_steps: int = 10_000
    weight_decay: float = 0.01
    scheduler: str = "stochastic"
    stochastic_beta: float = 1.0
    l1_weight: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 50
    checkpoint_every: int = 0   # 0 = only final

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup must not exceed total steps")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.stochastic_beta < 0:
            raise ValueError("stochastic bias exponent must be >= 0")


def select_level(scheduler: str, step: int, total_steps: int, depth: int,
                 rng, beta: float = 1.0):
    """Which tree level the loss trains on at this step ('all' for nested)."""
    if scheduler == "constant":
        return depth
    if scheduler == "linear_growth":
        if total_steps <= 0:
            return depth
        return max(1, math.ceil(depth * step / total_steps))
    if scheduler == "exponential_growth":
        # trained depth doubles at evenly spaced milestones: 1, 2, 4, ..., D
        stages = math.floor(math.log2(depth)) + 1
        if total_steps <= 0:
            return depth
        stage = min(stages - 1, math.floor(stages * step / total_steps))
        return min(depth, 2**stage) if step < total_steps else depth
    if scheduler == "stochastic":
        weights = np.arange(1, depth + 1, dtype=np.float64) ** beta
        weights /= weights.sum()
        return int(rng.choice(np.arange(1, depth + 1), p=weights))
    if scheduler == "nested":
        return "all"
    raise ValueError(f"unknown scheduler {scheduler!r}")


def lr_at(step: int, config: TrainConfig) -> float:
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    return config.learning_rate


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer over a param dict."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray],
             lr: float) -> None:
        c = self.config
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"grad shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise NonFinite(f"non-finite gradient for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            mhat = self.m[name] / (1 - c.beta1**t)
            vhat = self.v[name] / (1 - c.beta2**t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + c.eps) \
                - lr * c.weight_decay * p.data

    def state(self):
        return {"step_count": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state):
        self.step_count = state["step_count"]
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: TreeModel, train_config: TrainConfig,
                    optimizer: AdamW, step: int, rng) -> None:
    payload = {
        "model_config": _config_to_dict(model.config),
        "train_config": dataclasses.asdict(train_config),
        "params": model.get_param_arrays(),
        "optimizer": optimizer.state(),
        "step": step,
        "rng_state": rng.bit_generator.state,
    }
    blob = CKPT_MAGIC + bytes([CKPT_VERSION]) + pickle.dumps(payload)
    # atomic write-then-rename
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: magic {blob[:4]!r}")
    if blob[4] != CKPT_VERSION:
        raise UnsupportedVersion(f"{path}: checkpoint version {blob[4]}")
    payload = pickle.loads(blob[5:])
    model_config = _config_from_dict(payload["model_config"])
    train_config = TrainConfig(**payload["train_config"])
    model = TreeModel(model_config, np.random.default_rng(0))
    model.set_param_arrays(payload["params"])
    optimizer = AdamW(train_config)
    optimizer.load_state(payload["optimizer"])
    rng = np.random.default_rng(0)
    rng.bit_generator.state = payload["rng_state"]
    return model, train_config, optimizer, payload["step"], rng


def _config_to_dict(config: ModelConfig) -> dict:
    return dataclasses.asdict(config)


def _config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        depth=d["depth"],
        split=SplitConfig(**d["split"]),
        propagation=PropagationConfig(**d["propagation"]),
        score_dropout=d["score_dropout"],
    )


# ---------------------------------------------------------------------------
# training loop


def train(
    train_config: TrainConfig,
    model: TreeModel,
    query_store: EmbeddingStore,
    context_store: EmbeddingStore,
    pairs: PairDataset,
    metric_log=None,
    checkpoint_dir=None,
    eval_hook=None,
    eval_every: int = 0,
    optimizer: AdamW | None = None,
    start_step: int = 0,
    rng=None,
):
    """Run the optimization loop; returns (model, optimizer, rng, losses).

    Deterministic for a fixed seed (single-threaded); a run resumed from a
    checkpoint at step k continues bit-identically to an uninterrupted one.
    """
    c = train_config
    depth = model.topology.depth
    if optimizer is None:
        optimizer = AdamW(c)
    if rng is None:
        rng = np.random.default_rng(c.seed)
    train_pairs = pairs.split_pairs("train")
    if not train_pairs:
        raise ValueError("train split is empty")
    batches_per_epoch = max(1, len(train_pairs) // c.batch_size)
    params = model.params
    losses: list[float] = []
    log_fh = open(metric_log, "a", encoding="utf-8") if metric_log else None
    epoch = -1
    epoch_batches = None
    try:
        for step in range(start_step, c.total_steps):
            e = step // batches_per_epoch
            if e != epoch:
                epoch = e
                epoch_batches = make_batches(
                    pairs, "train", c.batch_size, c.seed + 1 + epoch)
            qids, cids = zip(*epoch_batches[step % batches_per_epoch])
            level = select_level(c.scheduler, step, c.total_steps, depth,
                                 rng, c.stochastic_beta)
            q_levels = model.forward(
                model.batch_inputs(query_store, qids), True, rng)
            c_levels = model.forward(
                model.batch_inputs(context_store, cids), True, rng)
            if level == "all":
                loss = level_losses(q_levels, c_levels, "sum_all_levels")
                reg_level = depth
            else:
                loss = level_losses(q_levels, c_levels, "single", level)
                reg_level = level
            if c.l1_weight > 0:
                both = concatenate(
                    [q_levels[reg_level], c_levels[reg_level]], axis=0)
                loss = loss + l1_penalty(both, c.l1_weight)
            if not np.isfinite(loss.data):
                raise NonFinite(f"non-finite loss at step {step}")
            for p in params.values():
                p.zero_grad()
            loss.backward()
            grads = {k: (p.grad if p.grad is not None
                         else np.zeros_like(p.data))
                     for k, p in params.items()}
            lr = lr_at(step, c)
            optimizer.step(params, grads, lr)
            losses.append(float(loss.data))
            if log_fh and (step % c.log_every == 0
                           or step == c.total_steps - 1):
                log_fh.write(json.dumps({
                    "step": step,
                    "loss": float(loss.data),
                    "level": level,
                    "lr": lr,
                }) + "\n")
                log_fh.flush()
            if eval_hook and eval_every and (step + 1) % eval_every == 0:
                with no_grad():
                    eval_hook(model, step)
            if checkpoint_dir and c.checkpoint_every and \
                    (step + 1) % c.checkpoint_every == 0:
                save_checkpoint(
                    os.path.join(checkpoint_dir, f"step_{step + 1}.rtck"),
                    model, c, optimizer, step + 1, rng)
        if checkpoint_dir:
            save_checkpoint(os.path.join(checkpoint_dir, "final.rtck"),
                            model, c, optimizer, c.total_steps, rng)
    finally:
        if log_fh:
            log_fh.close()
    return model, optimizer, rng, losses


# ---------------------------------------------------------------------------
# finite-difference gradient checker


GRAD_CHECK_COMBOS = (
    [("linear", None, p) for p in ("product", "learned")]
    + [("perceptron", None, p) for p in ("product", "learned")]
    + [("cross_attention", a, p)
       for a in ("mean_linear", "per_node_linear", "tree_structured")
       for p in ("product", "learned")]
)


def check_gradients(seed: int = 0, depth: int = 3, dim: int = 8,
                    batch: int = 4, threshold: float = 1e-3,
                    fd_step: float = 1e-5, tamper_param: str | None = None):
    """Compare analytic gradients against central finite differences.

    Relative error uses a 1e-6 absolute floor in the denominator so that
    float64 cancellation noise on near-zero gradients does not mask real
    defects. Returns one report per split x aggregator x propagation combo.
    """
    reports = []
    for variant, agg, prop in GRAD_CHECK_COMBOS:
        rng = np.random.default_rng(seed)
        split_cfg = SplitConfig(
            variant=variant, dim=dim, token_dim=dim, hidden=6,
            n_e=2, n_heads=2, d_head=3, node_emb_dim=5,
            aggregator=agg or "tree_structured", agg_hidden=4)
        cfg = ModelConfig(depth=depth, split=split_cfg,
                          propagation=PropagationConfig(prop, hidden=5))
        model = TreeModel(cfg, np.random.default_rng(seed + 1))
        if variant == "cross_attention":
            qx = [rng.normal(size=(int(rng.integers(2, 6)), dim))
                  for _ in range(batch)]
            cx = [rng.normal(size=(int(rng.integers(2, 6)), dim))
                  for _ in range(batch)]
        else:
            qx = rng.normal(size=(batch, dim))
            cx = rng.normal(size=(batch, dim))

        def loss_value():
            ql = model.forward(qx)
            cl = model.forward(cx)
            return info_nce(ql[depth], cl[depth])

        params = model.params
        for p in params.values():
            p.zero_grad()
        loss_value().backward()
        max_err = 0.0
        for name, p in params.items():
            analytic = (p.grad if p.grad is not None
                        else np.zeros_like(p.data)).reshape(-1).copy()
            if tamper_param and name == tamper_param:
                analytic = analytic + 1.0
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + fd_step
                lp = loss_value().data.item()
                flat[i] = orig - fd_step
                lm = loss_value().data.item()
                flat[i] = orig
                numeric = (lp - lm) / (2 * fd_step)
                denom = max(abs(numeric), abs(analytic[i]), 1e-6)
                max_err = max(max_err, abs(numeric - analytic[i]) / denom)
        reports.append({
            "split": variant,
            "aggregator": agg,
            "propagation": prop,
            "max_rel_err": max_err,
            "pass": max_err <= threshold,
        })
    return reports
