"""K-shot contrastive pretraining, linear-probe evaluation and the K/rho sweep.

One training step, per minibatch:

1. the key encoder embeds the K key views of each instance and a subspace is
   built per instance (these are the positives);
2. the query encoder embeds the query view;
3. each query is scored against its own positive plus a snapshot of the queue;
4. the loss gradient is backpropagated through the query encoder only;
5. SGD step, then momentum update of the key encoder;
6. the batch's subspaces are enqueued.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoder as enc
from .config import TrainConfig
from .data import Dataset, batch_arrays, generate_dataset, make_batch
from .errors import NonFiniteLoss
from .loss import batch_kshot_loss_and_grad
from .queue import SubspaceQueue
from .seeding import stream
from .storage import Checkpoint, load_checkpoint, load_dataset, save_checkpoint, write_csv, write_json
from .subspace import build_subspaces, stack_bases

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    pair: enc.EncoderPair
    optimizer: enc.SgdState
    queue: SubspaceQueue
    step: int = 0


@dataclass
class StepResult:
    loss: float
    num_candidates: int
    ranks: list[int]
    spectra: list[list[float]]


@dataclass
class TrainReport:
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    epoch_mean_rank: list[float] = field(default_factory=list)
    step_candidates: list[int] = field(default_factory=list)
    final_spectra: list[list[float]] = field(default_factory=list)
    final_ranks: list[int] = field(default_factory=list)
    checkpoint: str | None = None
    config: dict = field(default_factory=dict)

    @property
    def mean_rank(self) -> float:
        return float(np.mean(self.epoch_mean_rank)) if self.epoch_mean_rank else 0.0

    @property
    def seconds_per_epoch(self) -> float:
        return float(np.mean(self.epoch_seconds)) if self.epoch_seconds else 0.0

    def to_json(self) -> dict:
        """Deterministic part of the report; wall-clock timings are kept out (see ``timing_json``)."""
        return {
            "config": self.config,
            "checkpoint": self.checkpoint,
            "steps": len(self.step_losses),
            "epoch_losses": self.epoch_losses,
            "epoch_mean_rank": self.epoch_mean_rank,
            "mean_rank": self.mean_rank,
            "step_candidates": self.step_candidates,
            "final_spectra": self.final_spectra,
            "final_ranks": self.final_ranks,
        }

    def timing_json(self) -> dict:
        return {"epoch_seconds": self.epoch_seconds, "seconds_per_epoch": self.seconds_per_epoch}


@dataclass
class ProbeReport:
    accuracy: float
    train_accuracy: float
    per_class_accuracy: list[float]
    num_test: int
    num_classes: int
    permuted_labels: bool = False
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "train_accuracy": self.train_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "num_test": self.num_test,
            "num_classes": self.num_classes,
            "permuted_labels": self.permuted_labels,
            "config": self.config,
        }


def load_or_generate(config: TrainConfig) -> Dataset:
    if config.dataset_path:
        return load_dataset(config.dataset_path)
    return generate_dataset(
        config.num_classes, config.instances_per_class, config.feature_dim, config.class_separation, config.seed
    )


def init_state(config: TrainConfig) -> TrainState:
    query = enc.init_mlp(config.encoder_dims, stream(config.seed, "init"))
    pair = enc.EncoderPair.from_query(query, config.momentum)
    return TrainState(pair, enc.SgdState(), SubspaceQueue(config.queue_capacity, width=config.k_shots))


def embed_keys(params: enc.MlpParams, key_views: np.ndarray) -> np.ndarray:
    b, k, f = key_views.shape
    v, _ = enc.forward(params, key_views.reshape(b * k, f))
    return v.reshape(b, k, -1)


def train_step(
    state: TrainState,
    key_views: np.ndarray,
    query_views: np.ndarray,
    ids: Sequence[int],
    config: TrainConfig,
    lr: float,
) -> StepResult:
    keys = embed_keys(state.pair.key, key_views)
    positives = build_subspaces(keys, config.policy(), list(ids))

    queries, cache = enc.forward(state.pair.query, query_views)
    negatives = state.queue.stacked_snapshot()
    out = batch_kshot_loss_and_grad(queries, stack_bases(positives), negatives, config.temperature)
    if not math.isfinite(out.loss):
        raise NonFiniteLoss(f"non-finite loss at step {state.step}", step=state.step, losses=out.losses.tolist())

    grads = enc.backward(state.pair.query, cache, out.grad_wrt_queries)
    state.pair.query, state.optimizer = enc.sgd_step(
        state.pair.query, grads, lr, config.weight_decay, config.sgd_momentum, state.optimizer
    )
    enc.momentum_update(state.pair)
    state.queue.enqueue_batch(positives)
    state.step += 1
    return StepResult(
        out.loss,
        1 + negatives.shape[0],
        [s.rank for s in positives],
        [s.spectrum.tolist() for s in positives],
    )


def epoch_lr(config: TrainConfig, epoch: int) -> float:
    if not config.cosine_decay:
        return config.lr
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))


def _dump_diagnostic(out_dir: Path | None, state: TrainState, exc: NonFiniteLoss) -> None:
    if out_dir is None:
        return
    norms = [[float(np.linalg.norm(w)), float(np.linalg.norm(b))] for w, b in state.pair.query.layers]
    path = write_json(out_dir / "diagnostic.json", {"error": str(exc), **exc.context, "query_layer_norms": norms})
    exc.context["dump"] = str(path)


def pretrain(
    config: TrainConfig,
    dataset: Dataset | None = None,
    out_dir: str | Path | None = None,
) -> tuple[TrainReport, Checkpoint]:
    """Run the full pretraining loop; writes reports and a checkpoint when ``out_dir`` is given."""
    dataset = dataset if dataset is not None else load_or_generate(config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    aug = config.augmentation()
    state = init_state(config)
    report = TrainReport(config=config.to_dict())
    n = len(dataset)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = epoch_lr(config, epoch)
        order = stream(config.seed, "shuffle", epoch).permutation(n)
        losses, ranks = [], []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batches = make_batch([dataset[i] for i in idx], aug, step=epoch)
            key_views, query_views = batch_arrays(batches)
            try:
                res = train_step(state, key_views, query_views, [b.instance_id for b in batches], config, lr)
            except NonFiniteLoss as exc:
                _dump_diagnostic(out_dir, state, exc)
                raise
            losses.append(res.loss)
            ranks.extend(res.ranks)
            report.step_losses.append(res.loss)
            report.step_candidates.append(res.num_candidates)
            report.final_spectra, report.final_ranks = res.spectra, res.ranks
        report.epoch_losses.append(float(np.mean(losses)))
        report.epoch_mean_rank.append(float(np.mean(ranks)))
        report.epoch_seconds.append(time.perf_counter() - started)
        log.info("epoch %d/%d loss %.4f mean L %.2f", epoch + 1, config.epochs, report.epoch_losses[-1], report.epoch_mean_rank[-1])

    ckpt = Checkpoint(state.pair, state.optimizer, state.step, {"config": config.to_dict()})
    if out_dir is not None:
        report.checkpoint = "checkpoint.kscl"
        save_checkpoint(out_dir / "checkpoint.kscl", ckpt)
        write_json(out_dir / "train_report.json", report.to_json())
        write_json(out_dir / "timing.json", report.timing_json())
        write_csv(out_dir / "losses.csv", ["step", "loss"], [(i, repr(x)) for i, x in enumerate(report.step_losses)])
    return report, ckpt


def _softmax_regression(x: np.ndarray, y: np.ndarray, classes: int, epochs: int, lr: float) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent (momentum 0.9) on multinomial cross-entropy, zero init."""
    n, d = x.shape
    w = np.zeros((d, classes))
    b = np.zeros(classes)
    vw, vb = np.zeros_like(w), np.zeros_like(b)
    onehot = np.eye(classes)[y]
    for _ in range(epochs):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        vw = 0.9 * vw + x.T @ g
        vb = 0.9 * vb + g.sum(axis=0)
        w -= lr * vw
        b -= lr * vb
    return w, b


def embed_dataset(params: enc.MlpParams, dataset: Dataset) -> np.ndarray:
    v, _ = enc.forward(params, dataset.features)
    return v


def linear_probe(
    checkpoint: Checkpoint | str | Path,
    dataset: Dataset,
    probe_epochs: int = 300,
    lr: float = 0.5,
    seed: int = 0,
    split: float = 0.8,
    permute_labels: bool = False,
) -> ProbeReport:
    """Train a softmax linear classifier on frozen query-encoder embeddings of clean instances.

    Features are standardized with training-split statistics. With
    ``permute_labels`` the labels are shuffled first, giving a chance-level
    control.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    x = embed_dataset(checkpoint.pair.query, dataset)
    y = dataset.labels.copy()
    if permute_labels:
        y = y[stream(seed, "probe_permute").permutation(y.size)]
    order = stream(seed, "probe_split").permutation(y.size)
    cut = int(round(split * y.size))
    tr, te = order[:cut], order[cut:]
    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0) + 1e-12
    z = (x - mu) / sd
    c = dataset.num_classes
    w, b = _softmax_regression(z[tr], y[tr], c, probe_epochs, lr)
    pred = np.argmax(z @ w + b, axis=1)
    correct = pred == y
    per_class = [float(np.mean(correct[te][y[te] == k])) if np.any(y[te] == k) else float("nan") for k in range(c)]
    return ProbeReport(
        accuracy=float(np.mean(correct[te])),
        train_accuracy=float(np.mean(correct[tr])),
        per_class_accuracy=per_class,
        num_test=int(te.size),
        num_classes=c,
        permuted_labels=permute_labels,
        config={"probe_epochs": probe_epochs, "lr": lr, "seed": seed, "split": split},
    )


ABLATION_COLUMNS = ["K", "rho", "seed", "probe_acc", "mean_L", "sec_per_epoch"]


def sweep_cells(config: TrainConfig) -> list[tuple[int, float, int]]:
    """(K, rho, seed) grid; rho is meaningless for K = 1, so that row appears once per seed with rho = 1."""
    cells = []
    for k in config.sweep_k:
        rhos = (1.0,) if k == 1 else config.sweep_rho
        for rho in rhos:
            for seed in config.sweep_seeds:
                cells.append((k, float(rho), seed))
    return cells


def run_cell(config: TrainConfig, cell: tuple[int, float, int]) -> dict:
    k, rho, seed = cell
    cfg = config.replace(k_shots=k, rho=rho, seed=seed)
    dataset = load_or_generate(cfg)
    report, ckpt = pretrain(cfg, dataset)
    probe = linear_probe(ckpt, dataset, cfg.probe_epochs, cfg.probe_lr, seed, cfg.probe_split)
    log.info("cell K=%d rho=%g seed=%d: probe %.4f, mean L %.3f", k, rho, seed, probe.accuracy, report.mean_rank)
    return {
        "K": k,
        "rho": rho,
        "seed": seed,
        "probe_acc": probe.accuracy,
        "mean_L": report.mean_rank,
        "sec_per_epoch": report.seconds_per_epoch,
        "epoch_losses": report.epoch_losses,
    }


def ablation_sweep(config: TrainConfig, out_dir: str | Path | None = None) -> list[dict]:
    """Pretrain and probe every grid cell; rows come back in grid order whatever ``jobs`` is."""
    cells = sweep_cells(config)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(run_cell, [config] * len(cells), cells))
    else:
        rows = [run_cell(config, cell) for cell in cells]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        # ablation.csv is deterministic; wall-clock goes to its own file
        write_csv(
            out_dir / "ablation.csv",
            ABLATION_COLUMNS[:-1],
            [(r["K"], repr(r["rho"]), r["seed"], repr(r["probe_acc"]), repr(r["mean_L"])) for r in rows],
        )
        write_csv(
            out_dir / "ablation_timing.csv",
            ["K", "rho", "seed", "sec_per_epoch"],
            [(r["K"], repr(r["rho"]), r["seed"], repr(r["sec_per_epoch"])) for r in rows],
        )
        write_json(out_dir / "sweep_report.json", [{k: v for k, v in r.items() if k != "sec_per_epoch"} for r in rows])
    return rows


