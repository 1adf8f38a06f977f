"""Staged domain-incremental training with replay, mixup, contrastive, parity and distillation terms.

Each stage trains the student on one sensitive-attribute domain, joining every
minibatch with an equally sized memory batch.  From the second stage on, the
student entering the stage is frozen as the teacher.  At the end of each epoch
the student is fine-tuned on buffer batches against the teacher, then the
buffer absorbs the samples seen for the first time that epoch.  The buffer is
frozen for the whole final stage.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from fairdd import autodiff as ad
from fairdd.augment import MixupConfig, mix, one_hot
from fairdd.data import Dataset, batches
from fairdd.losses import LossBreakdown, LossWeights, combine, cross_entropy, distill, spd_loss, supcon
from fairdd.metrics import PredictionDump
from fairdd.model import Network, NetworkConfig
from fairdd.replay import ReplayBuffer, Sample, stack

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class TrainConfig:
    stage_order: list[int] = field(default_factory=lambda: [1, 0])
    epochs_per_stage: int = 20
    batch_size: int = 32
    memory_batch_size: int | None = None  # None: same as batch_size
    learning_rate: float = 0.01
    momentum: float = 0.9
    finetune_learning_rate: float | None = None  # None: learning_rate / 10
    finetune_batches: int = 5
    weights: LossWeights = field(default_factory=LossWeights)
    mixup: MixupConfig = field(default_factory=MixupConfig)
    use_supcon: bool = True
    buffer_capacity: int = 300
    hidden_dims: tuple[int, ...] = (32,)
    projector_dim: int = 32
    grad_clip: float | None = 5.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.mixup, dict):
            self.mixup = MixupConfig(**self.mixup)
        self.stage_order = [int(s) for s in self.stage_order]
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.finetune_learning_rate is None:
            self.finetune_learning_rate = self.learning_rate / 10
        if self.memory_batch_size is None:
            self.memory_batch_size = self.batch_size
        if len(set(self.stage_order)) != len(self.stage_order):
            raise ValueError(f"stage_order repeats a domain: {self.stage_order}")
        for name in ("epochs_per_stage", "batch_size", "memory_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.finetune_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if not self.finetune_learning_rate < self.learning_rate:
            raise ValueError("finetune_learning_rate must be smaller than learning_rate")
        if self.finetune_batches < 0 or self.buffer_capacity < 0:
            raise ValueError("finetune_batches and buffer_capacity must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class StageReport:
    stage: int
    domain: int
    epochs: list[dict] = field(default_factory=list)
    domain_accuracy: dict[int, float] = field(default_factory=dict)
    teacher_checksum_before: str | None = None
    teacher_checksum_after: str | None = None
    buffer_checksum_before: str | None = None
    buffer_checksum_after: str | None = None
    degenerate_spd_steps: int = 0


# optimisation -------------------------------------------------------------


def optimizer_step(params, grads, lr: float) -> None:
    """Plain SGD update in place: p <- p - lr * g."""
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ad.ShapeError(f"optimizer_step: param {p.shape} vs grad {g.shape}")
        p.value = p.value - lr * g


class SGD:
    def __init__(self, params: list[ad.Node], lr: float, momentum: float = 0.0,
                 grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = [np.zeros_like(p.value) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if self.grad_clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm) for g in grads]
        if self.momentum == 0:
            optimizer_step(self.params, grads, self.lr)
            return
        for i, g in enumerate(grads):
            self.velocity[i] = self.momentum * self.velocity[i] + g
        optimizer_step(self.params, self.velocity, self.lr)


# loss assembly ------------------------------------------------------------


def step_loss(
    net: Network,
    x_cur: np.ndarray,
    a_cur: np.ndarray,
    y_cur: np.ndarray,
    x_mem: np.ndarray,
    a_mem: np.ndarray,
    y_mem: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    teacher: Network | None = None,
):
    """Objective for one minibatch; returns (total Node, LossBreakdown, spd_degenerate)."""
    u = net.config.num_classes
    w = config.weights
    x = np.concatenate([x_cur, x_mem]) if len(x_mem) else x_cur
    a = np.concatenate([a_cur, a_mem]) if len(x_mem) else a_cur
    y = np.concatenate([y_cur, y_mem]) if len(x_mem) else y_cur

    out = net.forward(x)
    sup = supcon(out.embeddings, y, w.tau) if config.use_supcon and len(y) >= 2 else None
    spd, degenerate = spd_loss(out.probs, a) if w.beta > 0 else (None, False)
    dis = None
    if teacher is not None and w.alpha > 0:
        dis = distill(teacher.predict_proba(x), out.probs, w.T)

    if config.mixup.enabled:
        x_mix, y_mix = mix(x_cur, y_cur, x_mem, y_mem, u, rng, config.mixup.theta)
        ce = cross_entropy(y_mix, net.forward(x_mix).probs)
    else:
        ce = cross_entropy(one_hot(y, u), out.probs)
    total, bd = combine(ce, sup, dis, spd, w)
    return total, bd, degenerate


def _mean_breakdown(items: list[LossBreakdown]) -> dict[str, float]:
    if not items:
        return {k: 0.0 for k in ("ce", "sup", "dis", "spd", "total")}
    return {k: float(np.mean([getattr(b, k) for b in items])) for k in ("ce", "sup", "dis", "spd", "total")}


def _check_finite(total: ad.Node, bd: LossBreakdown, context: dict) -> None:
    if not np.isfinite(total.value).all():
        raise TrainingError(f"non-finite loss at {context}", {"context": context, "breakdown": asdict(bd)})


# evaluation ---------------------------------------------------------------


def predict(net: Network, ds: Dataset) -> PredictionDump:
    q = net.predict_proba(ds.x)
    return PredictionDump.from_probs(q, ds.y, ds.a, ds.ids)


def domain_accuracy(net: Network, test: Dataset, domains) -> dict[int, float]:
    acc = {}
    for g in domains:
        sub = test.subset(test.a == g)
        if len(sub):
            acc[int(g)] = float(np.mean(net.predict_proba(sub.x).argmax(axis=1) == sub.y))
    return acc


# distillation fine-tuning ---------------------------------------------------


def distill_finetune(student: Network, teacher: Network, buffer: ReplayBuffer,
                     config: TrainConfig, rng: np.random.Generator, warn: bool = True) -> list[float]:
    """Fine-tune the student on buffer batches against the teacher; returns per-step losses."""
    if len(buffer) == 0:
        if warn:
            log.warning("distillation fine-tuning skipped: replay buffer is empty")
        return []
    params = student.parameters()
    opt = SGD(params, config.finetune_learning_rate, 0.0, config.grad_clip)
    losses = []
    for _ in range(config.finetune_batches):
        x, _, _ = stack(buffer.sample_batch(config.memory_batch_size, rng))
        loss = distill(teacher.predict_proba(x), student.forward(x).probs, config.weights.T)
        if not np.isfinite(loss.value):
            raise TrainingError("non-finite distillation fine-tuning loss")
        opt.step(ad.grads(loss, params))
        losses.append(float(loss.value))
    return losses


# protocols ---------------------------------------------------------------


def _network_for(config: TrainConfig, ds: Dataset) -> Network:
    return Network(NetworkConfig(ds.feature_dim, config.hidden_dims, ds.num_classes,
                                 config.projector_dim, config.seed))


def _emit(sink: TextIO | Callable[[dict], None] | None, record: dict) -> None:
    if sink is None:
        return
    if callable(sink):
        sink(record)
    else:
        sink.write(json.dumps(record, sort_keys=True) + "\n")


def run_incremental(config: TrainConfig, dataset: Dataset, log_sink=None,
                    stage_callback: Callable[[int, Network, Network | None, ReplayBuffer], None] | None = None,
                    ) -> tuple[Network, list[StageReport]]:
    domains = dataset.groups()
    if len(domains) < 2:
        raise ValueError(f"domain-incremental training needs >= 2 domains, found {domains}")
    if sorted(config.stage_order) != domains:
        raise ValueError(f"stage_order {config.stage_order} must cover the domains {domains} exactly once")

    rng = np.random.default_rng(config.seed)
    train, test = dataset.train(), dataset.test()
    net = _network_for(config, dataset)
    opt = SGD(net.parameters(), config.learning_rate, config.momentum, config.grad_clip)
    buffer = ReplayBuffer(config.buffer_capacity)
    offered: set[int] = set()
    teacher: Network | None = None
    reports: list[StageReport] = []
    seen_domains: list[int] = []
    warned_empty = False

    for k, dom in enumerate(config.stage_order):
        final = k == len(config.stage_order) - 1
        if k > 0:
            teacher = net.clone()
        if final:
            buffer.freeze()
        seen_domains.append(dom)
        report = StageReport(stage=k + 1, domain=dom,
                             teacher_checksum_before=teacher.checksum() if teacher else None,
                             buffer_checksum_before=buffer.checksum())
        domain = train.subset(train.a == dom)

        for epoch in range(config.epochs_per_stage):
            step_bds = []
            first_seen: list[int] = []
            for idx in batches(domain, config.batch_size, rng):
                mem = buffer.sample_batch(config.memory_batch_size, rng) if k > 0 and len(buffer) else []
                x_m, a_m, y_m = stack(mem, dataset.feature_dim)
                total, bd, degenerate = step_loss(
                    net, domain.x[idx], domain.a[idx], domain.y[idx], x_m, a_m, y_m,
                    config, rng, teacher,
                )
                _check_finite(total, bd, {"stage": k + 1, "epoch": epoch + 1})
                report.degenerate_spd_steps += int(degenerate)
                opt.step(ad.grads(total, net.parameters()))
                step_bds.append(bd)
                first_seen.extend(int(i) for i in idx if int(domain.ids[i]) not in offered)

            ft_losses = []
            if teacher is not None:
                ft_losses = distill_finetune(net, teacher, buffer, config, rng, warn=not warned_empty)
                warned_empty = warned_empty or not len(buffer)
            if not buffer.frozen:
                for i in first_seen:
                    offered.add(int(domain.ids[i]))
                    buffer.offer(Sample(domain.x[i], int(domain.a[i]), int(domain.y[i]),
                                        int(domain.ids[i])), rng)

            record = {"stage": k + 1, "domain": dom, "epoch": epoch + 1, **_mean_breakdown(step_bds),
                      "finetune": float(np.mean(ft_losses)) if ft_losses else None,
                      "accuracy": {str(g): v for g, v in domain_accuracy(net, test, seen_domains).items()}}
            report.epochs.append(record)
            _emit(log_sink, record)

        report.domain_accuracy = domain_accuracy(net, test, seen_domains)
        report.teacher_checksum_after = teacher.checksum() if teacher else None
        report.buffer_checksum_after = buffer.checksum()
        if report.teacher_checksum_after != report.teacher_checksum_before:
            raise TrainingError(f"teacher parameters changed during stage {k + 1}")
        reports.append(report)
        if stage_callback is not None:
            stage_callback(k + 1, net, teacher, buffer)
    return net, reports


def run_vanilla(config: TrainConfig, dataset: Dataset, log_sink=None) -> tuple[Network, list[StageReport]]:
    """Joint training on all domains pooled, cross-entropy only."""
    domains = dataset.groups()
    if len(domains) < 2:
        raise ValueError(f"need >= 2 domains, found {domains}")
    rng = np.random.default_rng(config.seed)
    train, test = dataset.train(), dataset.test()
    net = _network_for(config, dataset)
    opt = SGD(net.parameters(), config.learning_rate, config.momentum, config.grad_clip)
    u = dataset.num_classes
    report = StageReport(stage=1, domain=-1)
    for epoch in range(config.epochs_per_stage):
        step_bds = []
        for idx in batches(train, config.batch_size, rng):
            ce = cross_entropy(one_hot(train.y[idx], u), net.forward(train.x[idx]).probs)
            total, bd = combine(ce, None, None, None, config.weights)
            _check_finite(total, bd, {"stage": 1, "epoch": epoch + 1, "mode": "vanilla"})
            opt.step(ad.grads(total, net.parameters()))
            step_bds.append(bd)
        record = {"stage": 1, "domain": -1, "epoch": epoch + 1, **_mean_breakdown(step_bds),
                  "finetune": None,
                  "accuracy": {str(g): v for g, v in domain_accuracy(net, test, domains).items()}}
        report.epochs.append(record)
        _emit(log_sink, record)
    report.domain_accuracy = domain_accuracy(net, test, domains)
    return net, [report]
