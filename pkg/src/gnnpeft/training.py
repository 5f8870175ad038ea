"""Optimization loop, edge-prediction pre-training, ranking metrics,
and run recording.

Runs are deterministic functions of (configs, seed): batch order, dropout
masks, edge hiding, and negative sampling all draw from named streams
derived from the training seed. Reported "training error" is 1 − train
ROC-AUC (a ranking proxy for the 0/1 loss; the raw loss is recorded per
epoch alongside it).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ModelConfig, PeftConfig, TrainConfig
from .graphs import Dataset, Graph, batch as make_batch
from .model import forward_logits, gin_node_states, init_params
from .registry import ParamRegistry
from .rng import RngStream
from .tensor import EmptyLossError, Tape, Tensor, bce_with_logits, gather_rows, row_dot


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch


class MetricUndefinedError(ValueError):
    """No task had both positive and negative labels; AUC is undefined."""


class Adam:
    """Adam over the registry's trainable tensors (weight_decay as plain L2)."""

    def __init__(self, registry: ParamRegistry, cfg: TrainConfig):
        self.registry = registry
        self.cfg = cfg
        self.slots = [(name, t) for name, t in registry.trainable_tensors()]
        self.m = {name: np.zeros_like(t.data) for name, t in self.slots}
        self.v = {name: np.zeros_like(t.data) for name, t in self.slots}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.cfg.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, tensor in self.slots:
            g = tensor.grad
            if self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * tensor.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            tensor.data -= self.cfg.lr * mhat / (np.sqrt(vhat) + self.cfg.eps)

    def zero_grad(self) -> None:
        self.registry.zero_grads()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Exact AUC by tie-averaged ranks: equals pairwise
    (#correct + 0.5·#ties)/#pairs because all intermediate values are
    half-integers representable in float64."""
    n = scores.shape[0]
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * ((i + 1) + j)  # average of ranks i+1..j
        i = j
    pos = labels == 1
    p = int(pos.sum())
    q = n - p
    num = ranks[pos].sum() - 0.5 * p * (p + 1)
    return num / (p * q)


def roc_auc(scores: np.ndarray, labels: np.ndarray,
            mask: Optional[np.ndarray] = None) -> float:
    """Mean ROC-AUC over tasks that have at least one positive and one
    negative unmasked label; raises if no task qualifies.

    ``scores``/``labels`` are (G, T); a 1-D input is treated as one task.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim == 1:
        s = s[:, None]
        y = y[:, None]
        mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None]
    m = np.ones(s.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if s.shape != y.shape or s.shape != m.shape:
        raise ValueError(f"scores {s.shape}, labels {y.shape}, mask {m.shape} differ")
    per_task = []
    for t in range(s.shape[1]):
        sel = m[:, t]
        yt = y[sel, t]
        if sel.sum() == 0 or yt.min() == yt.max():
            continue  # needs both classes
        per_task.append(_rank_auc(s[sel, t], yt))
    if not per_task:
        raise MetricUndefinedError(
            "no task has both positive and negative unmasked labels")
    return float(np.mean(per_task))


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    """Per-epoch metrics plus the config fingerprint that reproduces them."""
    train_loss: list[float] = field(default_factory=list)
    train_auc: list[float] = field(default_factory=list)
    test_auc: list[float] = field(default_factory=list)
    fingerprint: str = ""
    config: dict = field(default_factory=dict)

    @property
    def final_train_err(self) -> float:
        return 1.0 - self.train_auc[-1]

    @property
    def final_test_err(self) -> float:
        return 1.0 - self.test_auc[-1]

    @property
    def gap(self) -> float:
        """train AUC − test AUC at the final epoch; equals
        test error − train error (up to rounding) under err = 1 − AUC."""
        return self.train_auc[-1] - self.test_auc[-1]

    def summary(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "epochs": len(self.train_loss),
            "final_train_loss": self.train_loss[-1],
            "final_train_auc": self.train_auc[-1],
            "final_test_auc": self.test_auc[-1],
            "final_train_err": self.final_train_err,
            "final_test_err": self.final_test_err,
            "gap_auc": self.gap,
            "gap_err": self.final_test_err - self.final_train_err,
            "epoch1_train_loss": self.train_loss[0],
            "config": self.config,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_auc", "test_auc", "gap"])
        for e in range(len(self.train_loss)):
            w.writerow([e + 1, f"{self.train_loss[e]:.10g}",
                        f"{self.train_auc[e]:.10g}", f"{self.test_auc[e]:.10g}",
                        f"{self.train_auc[e] - self.test_auc[e]:.10g}"])
        return buf.getvalue()

    def write(self, directory) -> None:
        import pathlib
        d = pathlib.Path(directory)
        (d / "record.csv").write_text(self.to_csv())
        (d / "summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def generalization_gap(record: RunRecord) -> float:
    """Final-epoch train AUC minus test AUC."""
    return record.gap


# ---------------------------------------------------------------------------
# supervised fine-tuning / from-scratch training
# ---------------------------------------------------------------------------

def _batches(graphs: Sequence[Graph], order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        idx = order[start:start + size]
        yield [graphs[i] for i in idx]


def evaluate_auc(dataset: Dataset, reg: ParamRegistry, model: ModelConfig,
                 peft: PeftConfig, chunk: int = 256) -> float:
    """Eval-mode ROC-AUC over a whole dataset, batched for memory."""
    scores, labels, masks = [], [], []
    graphs = dataset.graphs
    for start in range(0, len(graphs), chunk):
        b = make_batch(list(graphs[start:start + chunk]), dataset.vocab)
        logits = forward_logits(b, reg, model, peft, "eval")
        scores.append(logits.data)
        labels.append(b.labels)
        masks.append(b.label_mask)
    return roc_auc(np.concatenate(scores), np.concatenate(labels),
                   np.concatenate(masks))


def train_supervised(train_ds: Dataset, test_ds: Dataset, reg: ParamRegistry,
                     model: ModelConfig, peft: PeftConfig, cfg: TrainConfig,
                     fingerprint: str = "", config_echo: Optional[dict] = None,
                     ) -> RunRecord:
    """Adam fine-tuning on the train split with per-epoch train/test AUC.

    Updates only trainable tensors (frozen ones are bitwise untouched by
    construction). Raises TrainingDivergedError on a non-finite loss.
    """
    opt = Adam(reg, cfg)
    root = RngStream(cfg.seed, ("train",))
    record = RunRecord(fingerprint=fingerprint, config=config_echo or {})
    graphs = train_ds.graphs
    for epoch in range(1, cfg.epochs + 1):
        order = root.child(f"epoch{epoch}.order").permutation(len(graphs))
        losses, weights = [], []
        for bi, chunk in enumerate(_batches(graphs, order, cfg.batch_size)):
            b = make_batch(chunk, train_ds.vocab)
            rng = root.child(f"epoch{epoch}.batch{bi}")
            with Tape() as tape:
                logits = forward_logits(b, reg, model, peft, "train", rng)
                try:
                    loss = bce_with_logits(logits, b.labels, b.label_mask)
                except EmptyLossError:
                    continue  # every label in this batch is missing
                val = float(loss.data)
                if not np.isfinite(val):
                    raise TrainingDivergedError(epoch, val)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(val)
            weights.append(int(b.label_mask.sum()))
        record.train_loss.append(float(np.average(losses, weights=weights)))
        record.train_auc.append(evaluate_auc(train_ds, reg, model, peft))
        record.test_auc.append(evaluate_auc(test_ds, reg, model, peft))
    return record


# ---------------------------------------------------------------------------
# edge-prediction pre-training
# ---------------------------------------------------------------------------

def _hidden_edge_count(num_edges: int) -> int:
    """Hide ~15% of undirected edges; graphs with fewer than two edges
    contribute none (they still participate in message passing)."""
    if num_edges < 2:
        return 0
    return max(1, int(round(0.15 * num_edges)))


def _sample_negatives(g: Graph, count: int, rng: RngStream) -> np.ndarray:
    """Uniform non-edge pairs (u < v), at most ``count`` of them."""
    n = g.num_nodes
    adj = np.zeros((n, n), dtype=bool)
    if g.num_edges:
        adj[g.edges[:, 0], g.edges[:, 1]] = True
        adj[g.edges[:, 1], g.edges[:, 0]] = True
    iu, iv = np.triu_indices(n, k=1)
    free = ~adj[iu, iv]
    candidates = np.stack([iu[free], iv[free]], axis=1)
    if candidates.shape[0] == 0 or count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    take = min(count, candidates.shape[0])
    pick = rng.choice(candidates.shape[0], size=take, replace=False)
    return candidates[np.sort(pick)]


def pretrain_edgepred(dataset: Dataset, model: ModelConfig, cfg: TrainConfig,
                      ) -> tuple[ParamRegistry, list[float]]:
    """Self-supervised edge prediction: hide ~15% of undirected edges per
    graph, run the encoder on the thinned graph, and score each candidate
    pair by the inner product of its two final node embeddings — BCE
    against 1 for hidden edges, 0 for an equal number of sampled
    non-edges (resampled every epoch).

    Returns the registry (classifier untouched and meant to be discarded)
    plus per-epoch mean losses.
    """
    reg = init_params(model, seed=cfg.seed)
    peft = PeftConfig(mode="full")
    # classifier gets no gradient from the pair loss; keep optimizer on
    # encoder + layers only so its Adam state stays empty.
    for name in ("classifier.weight", "classifier.bias"):
        reg.set_trainable(name, False)
    opt = Adam(reg, cfg)
    root = RngStream(cfg.seed, ("pretrain",))
    graphs = dataset.graphs
    epoch_losses: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        order = root.child(f"epoch{epoch}.order").permutation(len(graphs))
        losses, weights = [], []
        for bi, chunk in enumerate(_batches(graphs, order, cfg.batch_size)):
            rng = root.child(f"epoch{epoch}.batch{bi}")
            drop: dict[int, np.ndarray] = {}
            pos_pairs: list[np.ndarray] = []
            neg_pairs: list[np.ndarray] = []
            offset = 0
            for gi, g in enumerate(chunk):
                k = _hidden_edge_count(g.num_edges)
                if k:
                    grng = rng.child(f"graph{gi}")
                    hide = grng.choice(g.num_edges, size=k, replace=False)
                    keep = np.ones(g.num_edges, dtype=bool)
                    keep[hide] = False
                    drop[gi] = keep
                    pos_pairs.append(g.edges[np.sort(hide)] + offset)
                    negs = _sample_negatives(g, k, grng.child("neg"))
                    if negs.shape[0]:
                        neg_pairs.append(negs + offset)
                offset += g.num_nodes
            b = make_batch(chunk, dataset.vocab, drop_edges=drop)
            pairs = pos_pairs + neg_pairs
            if not pairs:
                continue
            all_pairs = np.concatenate(pairs, axis=0)
            n_pos = sum(p.shape[0] for p in pos_pairs)
            targets = np.zeros(all_pairs.shape[0])
            targets[:n_pos] = 1.0
            with Tape() as tape:
                x = gin_node_states(b, reg, model, peft, "train", rng.child("fwd"))
                scores = row_dot(gather_rows(x, all_pairs[:, 0]),
                                 gather_rows(x, all_pairs[:, 1]))
                loss = bce_with_logits(scores, targets)
                val = float(loss.data)
                if not np.isfinite(val):
                    raise TrainingDivergedError(epoch, val)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(val)
            weights.append(all_pairs.shape[0])
        if losses:
            epoch_losses.append(float(np.average(losses, weights=weights)))
        else:
            epoch_losses.append(float("nan"))
    return reg, epoch_losses


def encoder_param_names(reg: ParamRegistry) -> list[str]:
    """All parameter names except the task classifier (checkpointing a
    pre-trained backbone discards the task head)."""
    return [n for n in reg.names() if not n.startswith("classifier.")]
