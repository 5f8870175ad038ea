"""Generalization-bound arithmetic, parameter counting, FLOPs estimation,
gap measurement, and the sweep experiment runners.

The finite-hypothesis bound used throughout: with probability 1−δ,
test error ≤ train error + sqrt((ln|H| + ln(2/δ)) / (2n)). The
log-hypothesis-size of a model with |P| trainable parameters is proxied
by ln|H| = c·|P| with c = ln 2 by default (one bit per parameter).
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import (ConfigError, ModelConfig, PeftConfig, TrainConfig,
                     config_fingerprint)
from .graphs import Dataset, SplitSpec, split
from .model import init_params
from .peft import apply_peft
from .registry import ParamRegistry
from .rng import RngStream
from .training import RunRecord, pretrain_edgepred, train_supervised

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# bound calculator
# ---------------------------------------------------------------------------

def hoeffding_gap(log_hypothesis_size: float, n: int, delta: float) -> float:
    """sqrt((ln|H| + ln(2/δ)) / (2n)) — the uniform-convergence margin."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if log_hypothesis_size < 0.0:
        raise ValueError(f"log hypothesis size must be >= 0, got {log_hypothesis_size}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return math.sqrt((log_hypothesis_size + math.log(2.0 / delta)) / (2.0 * n))


@dataclass(frozen=True)
class BoundInput:
    train_error: float
    log_hypothesis_size: float
    n: int
    delta: float

    def __post_init__(self):
        if not 0.0 <= self.train_error <= 1.0:
            raise ValueError(f"train_error must be in [0, 1], got {self.train_error}")


def bound(inp: BoundInput) -> float:
    """Upper bound on test error: train error plus the margin."""
    return inp.train_error + hoeffding_gap(inp.log_hypothesis_size, inp.n, inp.delta)


def log_hypothesis_size_for(trainable_params: int, bits_per_param: float = LN2) -> float:
    """ln|H| proxy: c·|P| (default one bit of capacity per parameter)."""
    if trainable_params < 0:
        raise ValueError("parameter count cannot be negative")
    return bits_per_param * trainable_params


# ---------------------------------------------------------------------------
# parameter counting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamCounts:
    total: int
    trainable: int
    by_group: dict
    """group -> (total, trainable)"""

    @property
    def fraction(self) -> float:
        return self.trainable / self.total


def count_params(reg: ParamRegistry) -> ParamCounts:
    """Exact counts by registry enumeration."""
    total = 0
    trainable = 0
    by_group: dict[str, list[int]] = {}
    for _, p in reg.items():
        size = p.tensor.data.size
        total += size
        g = by_group.setdefault(p.group, [0, 0])
        g[0] += size
        if p.trainable:
            trainable += size
            g[1] += size
    return ParamCounts(total, trainable,
                       {k: tuple(v) for k, v in sorted(by_group.items())})


# ---------------------------------------------------------------------------
# FLOPs estimation
# ---------------------------------------------------------------------------

# Per-element cost constants (multiply-add = 2). These are conventions,
# not silicon truth; they are reported with every estimate.
FLOP_COSTS = {
    "madd": 2,              # per multiply-add inside matrix products
    "bias_add": 1,          # per output element
    "add": 1,               # per element; backward adds 1 per grad-carrying input
    "relu_fwd": 1, "relu_bwd": 1,
    "bn_fwd_train": 8, "bn_fwd_eval": 4, "bn_bwd": 10,
    "dropout_fwd": 2, "dropout_bwd": 1,
    "scale_fwd": 1, "scale_bwd_input": 1, "scale_bwd_scalar": 2,
    "mp_fwd": 2,            # per directed-edge element: message add + scatter add
    "mp_bwd": 1,            # per directed-edge element routed back to inputs
    "emb_fwd": 1,           # two-table sum, per gathered element
    "emb_bwd": 1,           # per element per trainable table
    "ia3_fwd": 1, "ia3_bwd_input": 1, "ia3_bwd_vec": 2,
    "pool_fwd": 1, "pool_bwd": 1,
    "loss_fwd": 5, "loss_bwd": 3,   # per label element
}


@dataclass(frozen=True)
class FlopsEstimate:
    total: int
    forward: int
    backward: int
    items: tuple
    """(label, flops) pairs in forward order."""
    constants: dict
    variants: dict
    """dual-adapter mode only: totals for both backbone-bias treatments."""


class _FlopWalker:
    """Mirrors the forward graph symbolically, tracking which tensors
    would require gradients, and accrues documented per-op costs."""

    def __init__(self, train_phase: bool):
        self.train = train_phase
        self.fwd = 0
        self.bwd = 0
        self.items: list[tuple[str, int]] = []

    def _log(self, label: str, fwd: int, bwd: int) -> None:
        self.fwd += fwd
        if self.train:
            self.bwd += bwd
        self.items.append((label, fwd + (bwd if self.train else 0)))

    def linear(self, label: str, rows: int, n_in: int, n_out: int,
               w_train: bool, b_train: bool, x_rg: bool,
               with_bias: bool = True) -> bool:
        c = FLOP_COSTS
        fwd = c["madd"] * rows * n_in * n_out
        if with_bias:
            fwd += c["bias_add"] * rows * n_out
        bwd = 0
        if x_rg:
            bwd += c["madd"] * rows * n_in * n_out
        if w_train:
            bwd += c["madd"] * rows * n_in * n_out
        if b_train and with_bias:
            bwd += c["bias_add"] * rows * n_out
        self._log(label, fwd, bwd)
        return x_rg or w_train or (b_train and with_bias)

    def elementwise(self, label: str, elems: int, c_fwd: int, c_bwd: int,
                    rg: bool) -> bool:
        self._log(label, c_fwd * elems, c_bwd * elems if rg else 0)
        return rg

    def add(self, label: str, elems: int, rg_inputs: int) -> bool:
        self._log(label, FLOP_COSTS["add"] * elems,
                  FLOP_COSTS["add"] * elems * rg_inputs)
        return rg_inputs > 0

    def bn(self, label: str, elems: int, affine_train: bool, x_rg: bool) -> bool:
        c = FLOP_COSTS
        fwd = (c["bn_fwd_train"] if self.train else c["bn_fwd_eval"]) * elems
        bwd = c["bn_bwd"] * elems if (x_rg or affine_train) else 0
        self._log(label, fwd, bwd)
        return x_rg or affine_train


def _adapter_cost(w: _FlopWalker, label: str, rows: int, d: int, b: int,
                  x_rg: bool) -> bool:
    """Bottleneck adapter (all its parameters trainable); b=0 is identity."""
    if b == 0:
        return x_rg
    h_rg = w.linear(f"{label}.down", rows, d, b, True, True, x_rg)
    h_rg = w.elementwise(f"{label}.relu", rows * b,
                         FLOP_COSTS["relu_fwd"], FLOP_COSTS["relu_bwd"], h_rg)
    h_rg = w.linear(f"{label}.up", rows, b, d, True, True, h_rg)
    return w.bn(f"{label}.bn", rows * d, True, h_rg)


def _walk(model: ModelConfig, peft: PeftConfig, batch_size: int,
          train_phase: bool, avg_nodes: float, avg_edges: float,
          bias_tuning: bool) -> _FlopWalker:
    d, H, L, T = model.emb_dim, model.hidden, model.num_layers, model.num_tasks
    G = batch_size
    n = int(round(G * avg_nodes))
    m = int(round(G * avg_edges)) * 2 + n  # directed copies + self-loops
    mode = peft.mode
    w = _FlopWalker(train_phase)
    c = FLOP_COSTS

    def layer_w_train(l: int) -> bool:
        if mode == "full":
            return True
        if mode == "partial_k":
            return l >= L - peft.k
        return False

    enc_train = mode == "full"
    x_rg = enc_train
    w.elementwise("encoder.node_emb", n * d, c["emb_fwd"],
                  2 * c["emb_bwd"], enc_train)
    if mode == "prompt_feat":
        x_rg = w.add("encoder.prompt_add", n * d, int(x_rg) + 1)
    e_rg = enc_train
    w.elementwise("encoder.edge_emb", m * d, c["emb_fwd"],
                  2 * c["emb_bwd"], enc_train)

    for l in range(L):
        wt = layer_w_train(l)
        bias_t = wt or mode == "bitfit" or (mode == "adaptergnn" and bias_tuning)
        bn_t = wt or mode == "prompt_feat" or (mode == "adaptergnn"
                                               and peft.tune_backbone_bn)
        m_rg = w.elementwise(f"layer.{l}.mp", m * d, c["mp_fwd"], c["mp_bwd"],
                             x_rg or e_rg)
        if mode == "prompt_node":
            m_rg = w.add(f"layer.{l}.prompt_add", n * d, int(m_rg) + 1)

        h_rg = m_rg
        if mode == "ia3":
            h_rg = w.elementwise(f"layer.{l}.mlp.0.ia3", n * d, c["ia3_fwd"],
                                 c["ia3_bwd_input"] if h_rg else 0, True)
            w._log(f"layer.{l}.mlp.0.ia3_vec_grad", 0,
                   c["ia3_bwd_vec"] * n * d)
        h_rg = w.linear(f"layer.{l}.mlp.0", n, d, H, wt, bias_t, h_rg)
        if mode == "lora":
            r = peft.lora_rank
            w.linear(f"layer.{l}.mlp.0.lora_a", n, d, r, True, False, m_rg,
                     with_bias=False)
            w.linear(f"layer.{l}.mlp.0.lora_b", n, r, H, True, False, True,
                     with_bias=False)
            h_rg = w.add(f"layer.{l}.mlp.0.lora_add", n * H, int(h_rg) + 1)
        h_rg = w.elementwise(f"layer.{l}.mlp.relu", n * H,
                             c["relu_fwd"], c["relu_bwd"], h_rg)
        mid_rg = h_rg
        if mode == "ia3":
            h_rg = w.elementwise(f"layer.{l}.mlp.1.ia3", n * H, c["ia3_fwd"],
                                 c["ia3_bwd_input"] if h_rg else 0, True)
            w._log(f"layer.{l}.mlp.1.ia3_vec_grad", 0,
                   c["ia3_bwd_vec"] * n * H)
        h_rg = w.linear(f"layer.{l}.mlp.1", n, H, d, wt, bias_t, h_rg)
        if mode == "lora":
            r = peft.lora_rank
            w.linear(f"layer.{l}.mlp.1.lora_a", n, H, r, True, False, mid_rg,
                     with_bias=False)
            w.linear(f"layer.{l}.mlp.1.lora_b", n, r, d, True, False, True,
                     with_bias=False)
            h_rg = w.add(f"layer.{l}.mlp.1.lora_add", n * d, int(h_rg) + 1)
        h_rg = w.bn(f"layer.{l}.bn", n * d, bn_t, h_rg)

        if mode == "adaptergnn":
            a1_rg = _adapter_cost(w, f"layer.{l}.adapter1", n, d,
                                  peft.bottleneck, x_rg)
            a2_rg = _adapter_cost(w, f"layer.{l}.adapter2", n, d,
                                  peft.bottleneck, m_rg)
            a1_rg = w.elementwise(f"layer.{l}.scale1", n * d, c["scale_fwd"],
                                  c["scale_bwd_input"] if a1_rg else 0, True)
            w._log(f"layer.{l}.scale1_grad", 0, c["scale_bwd_scalar"] * n * d)
            a2_rg = w.elementwise(f"layer.{l}.scale2", n * d, c["scale_fwd"],
                                  c["scale_bwd_input"] if a2_rg else 0, True)
            w._log(f"layer.{l}.scale2_grad", 0, c["scale_bwd_scalar"] * n * d)
            h_rg = w.add(f"layer.{l}.combine", n * d,
                         int(h_rg) + int(a1_rg) + int(a2_rg))
        elif mode == "adapter_par":
            a_rg = _adapter_cost(w, f"layer.{l}.adapter", n, d,
                                 peft.bottleneck, m_rg)
            h_rg = w.add(f"layer.{l}.combine", n * d, int(h_rg) + int(a_rg))
        elif mode == "adapter_seq":
            a_rg = _adapter_cost(w, f"layer.{l}.adapter", n, d,
                                 peft.bottleneck, h_rg)
            h_rg = w.add(f"layer.{l}.combine", n * d, int(h_rg) + int(a_rg))

        if l < L - 1:
            h_rg = w.elementwise(f"layer.{l}.act", n * d,
                                 c["relu_fwd"], c["relu_bwd"], h_rg)
            if train_phase and model.dropout > 0.0:
                h_rg = w.elementwise(f"layer.{l}.dropout", n * d,
                                     c["dropout_fwd"], c["dropout_bwd"], h_rg)
        x_rg = h_rg

    emb_rg = w.elementwise("readout.mean_pool", n * d,
                           c["pool_fwd"], c["pool_bwd"], x_rg)
    w.linear("classifier", G, d, T, True, True, emb_rg)
    if train_phase:
        w._log("loss", c["loss_fwd"] * G * T, c["loss_bwd"] * G * T)
    return w


def estimate_flops(model: ModelConfig, peft: PeftConfig, batch_size: int,
                   phase: str = "train", avg_nodes: float = 12.0,
                   avg_edges: float = 13.0) -> FlopsEstimate:
    """Analytic FLOPs for one batch under the documented cost constants.

    Backward costs follow gradient reachability: a weight gradient is
    charged only for trainable weights, and an input gradient only where
    some trainable parameter sits upstream of that input — exactly the
    work the tape performs. For the dual-adapter mode the estimate also
    reports both backbone-bias treatments (tuned vs. frozen).
    """
    if phase not in ("train", "infer"):
        raise ValueError(f"phase must be train|infer, got {phase!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    train_phase = phase == "train"
    w = _walk(model, peft, batch_size, train_phase, avg_nodes, avg_edges,
              peft.bias_tuning)
    variants = {}
    if peft.mode == "adaptergnn":
        for label, flag in (("bias_tuned", True), ("bias_frozen", False)):
            v = _walk(model, peft, batch_size, train_phase, avg_nodes,
                      avg_edges, flag)
            variants[label] = v.fwd + v.bwd
    return FlopsEstimate(total=w.fwd + w.bwd, forward=w.fwd, backward=w.bwd,
                         items=tuple(w.items), constants=dict(FLOP_COSTS),
                         variants=variants)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("fingerprint", "mode", "d", "b", "n_train", "seed",
                 "train_err", "test_err", "test_auc", "gap", "trainable_frac")


def _run_sweep_task(task: dict, train_ds: Dataset, test_ds: Dataset,
                    pretrained_state: Optional[dict]) -> dict:
    model = ModelConfig(emb_dim=task["d"], num_layers=task["layers"],
                        num_tasks=train_ds.num_tasks, dropout=task["dropout"],
                        vocab=train_ds.vocab)
    peft = PeftConfig(mode=task["mode"], bottleneck=task["b"],
                      lora_rank=task.get("lora_rank", 10),
                      scaling_init=task.get("scaling_init", 0.01),
                      k=task.get("k", 1))
    tcfg = TrainConfig(epochs=task["epochs"], batch_size=task["batch_size"],
                       lr=task["lr"], seed=task["seed"])
    reg = init_params(model, seed=task["seed"])
    if pretrained_state is not None:
        reg.load_state(pretrained_state["params"], pretrained_state["buffers"])
    apply_peft(reg, model, peft, seed=task["seed"])
    fp = config_fingerprint(task)
    record = train_supervised(train_ds, test_ds, reg, model, peft, tcfg,
                              fingerprint=fp, config_echo=task)
    counts = count_params(reg)
    return {
        "fingerprint": fp, "mode": task["mode"], "d": task["d"], "b": task["b"],
        "n_train": len(train_ds), "seed": task["seed"],
        "train_err": record.final_train_err, "test_err": record.final_test_err,
        "test_auc": record.test_auc[-1], "gap": record.gap,
        "trainable_frac": counts.fraction,
        "trainable_count": counts.trainable,
        "record": record,
    }


def _subsample(ds: Dataset, frac: float, seed: int) -> Dataset:
    k = int(round(frac * len(ds)))
    if k < 1:
        raise ConfigError(f"data fraction {frac} leaves no training graphs")
    order = RngStream(seed, ("datasize",)).permutation(len(ds))
    return ds.subset([int(i) for i in order[:k]])


def sweep_plan(kind: str, *, model: ModelConfig = ModelConfig(),
               train: TrainConfig = TrainConfig(), bottleneck: int = 15,
               d_grid: Sequence[int] = (), b_grid: Sequence[int] = (),
               frac_grid: Sequence[float] = (),
               d_full_grid: Sequence[int] = (),
               modes: Sequence[str] = ("full", "adaptergnn"),
               init: str = "scratch", seeds: Sequence[int] = (0,),
               ) -> list[dict]:
    """Expand a sweep request into per-run task dicts, validating every
    grid point up front so bad grids fail before any work starts."""
    if not seeds:
        raise ConfigError("need at least one seed")
    base = {"layers": model.num_layers, "dropout": model.dropout,
            "epochs": train.epochs, "batch_size": train.batch_size,
            "lr": train.lr, "kind": kind, "init": init}
    tasks: list[dict] = []
    if kind == "model_size":
        if not d_grid:
            raise ConfigError("model_size sweep needs d_grid")
        for d in d_grid:
            ModelConfig(emb_dim=d, num_layers=model.num_layers)  # validate early
            for mode in modes:
                PeftConfig(mode=mode, bottleneck=bottleneck)
                for s in seeds:
                    tasks.append(dict(base, mode=mode, d=d, b=bottleneck, seed=s))
    elif kind == "data_size":
        if not frac_grid:
            raise ConfigError("data_size sweep needs frac_grid")
        for frac in frac_grid:
            if not 0.0 < frac <= 1.0:
                raise ConfigError(f"data fraction must be in (0, 1], got {frac}")
            for mode in modes:
                for s in seeds:
                    tasks.append(dict(base, mode=mode, d=model.emb_dim,
                                      b=bottleneck, seed=s, frac=frac))
    elif kind == "bottleneck":
        if not b_grid:
            raise ConfigError("bottleneck sweep needs b_grid")
        for b in b_grid:
            if b != 0 and b >= model.emb_dim:
                raise ConfigError(f"bottleneck {b} must be < emb_dim {model.emb_dim}")
            for s in seeds:
                tasks.append(dict(base, mode="adaptergnn", d=model.emb_dim,
                                  b=b, seed=s))
    elif kind == "expressivity":
        if not d_full_grid:
            raise ConfigError("expressivity sweep needs d_full_grid")
        for s in seeds:
            tasks.append(dict(base, mode="adaptergnn", d=model.emb_dim,
                              b=bottleneck, seed=s, init="scratch"))
        for d in d_full_grid:
            ModelConfig(emb_dim=d, num_layers=model.num_layers)
            for s in seeds:
                tasks.append(dict(base, mode="full", d=d, b=bottleneck, seed=s,
                                  init="scratch"))
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    return tasks


def sweep(kind: str, dataset: Dataset, *, model: ModelConfig = ModelConfig(),
          train: TrainConfig = TrainConfig(), bottleneck: int = 15,
          d_grid: Sequence[int] = (), b_grid: Sequence[int] = (),
          frac_grid: Sequence[float] = (), d_full_grid: Sequence[int] = (),
          modes: Sequence[str] = ("full", "adaptergnn"),
          init: str = "scratch", pretrain_epochs: Optional[int] = None,
          seeds: Sequence[int] = (0,), jobs: int = 1,
          split_spec: SplitSpec = SplitSpec(mode="structure"),
          ) -> list[dict]:
    """Run one of the four experiment recipes and return result rows.

    model_size — vary embedding width d (MLP hidden stays 2d) for each
        mode; ``init="pretrained"`` first runs edge-prediction
        pre-training per (d, seed) and all modes share that backbone.
    data_size  — subsample the train split to each fraction.
    bottleneck — vary the adapter width b (0 = identity) in the
        dual-adapter mode.
    expressivity — dual-adapter structure over a frozen random backbone
        vs. plain full training at the widths in ``d_full_grid``.

    Rows are sorted by fingerprint; every row regenerates bitwise from
    its fingerprinted config.
    """
    tasks = sweep_plan(kind, model=model, train=train, bottleneck=bottleneck,
                       d_grid=d_grid, b_grid=b_grid, frac_grid=frac_grid,
                       d_full_grid=d_full_grid, modes=modes, init=init,
                       seeds=seeds)
    train_ds, _, test_ds = split(dataset, split_spec, seed=0)

    # stage pre-trained backbones, shared across modes per (d, seed)
    staged: dict[tuple[int, int], dict] = {}
    if init == "pretrained" and kind != "expressivity":
        pe = pretrain_epochs if pretrain_epochs is not None else train.epochs
        for key in sorted({(t["d"], t["seed"]) for t in tasks}):
            d, s = key
            mcfg = ModelConfig(emb_dim=d, num_layers=model.num_layers,
                               num_tasks=dataset.num_tasks,
                               dropout=model.dropout, vocab=dataset.vocab)
            pcfg = TrainConfig(epochs=pe, batch_size=train.batch_size,
                               lr=train.lr, seed=s)
            reg, _ = pretrain_edgepred(train_ds, mcfg, pcfg)
            staged[key] = {
                "params": {n: reg.get(n).data.copy() for n in reg.names()
                           if not n.startswith("classifier.")},
                "buffers": {n: b.copy() for n, b in reg.buffers.items()},
            }

    def job_args(task: dict):
        tds = train_ds
        if "frac" in task:
            tds = _subsample(train_ds, task["frac"], task["seed"])
        state = staged.get((task["d"], task["seed"]))
        return task, tds, test_ds, state

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_pool_entry, [job_args(t) for t in tasks]))
    else:
        rows = [_run_sweep_task(*job_args(t)) for t in tasks]
    rows.sort(key=lambda r: r["fingerprint"])
    return rows


def _pool_entry(args):
    return _run_sweep_task(*args)


def sweep_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["fingerprint"], r["mode"], r["d"], r["b"], r["n_train"],
                    r["seed"], f"{r['train_err']:.10g}", f"{r['test_err']:.10g}",
                    f"{r['test_auc']:.10g}", f"{r['gap']:.10g}",
                    f"{r['trainable_frac']:.10g}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# transfer / overfitting gains
# ---------------------------------------------------------------------------

class PairingError(ValueError):
    """Run records passed as a pair do not describe comparable runs."""


@dataclass(frozen=True)
class GapReport:
    tg_values: tuple
    tg_epoch1_loss_values: tuple
    og_measured: Optional[float]
    og_theoretical: Optional[float]
    og_by_d: dict
    notes: str
    provenance: dict

    @property
    def tg_median(self) -> Optional[float]:
        return float(np.median(self.tg_values)) if self.tg_values else None

    @property
    def tg_epoch1_loss_median(self) -> Optional[float]:
        vals = self.tg_epoch1_loss_values
        return float(np.median(vals)) if vals else None


def _pair_key(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k != "init"}


def compute_gaps(run_pairs: Sequence[tuple[RunRecord, RunRecord]] = (),
                 sweep_rows: Sequence[dict] = (), delta: float = 0.05,
                 bits_per_param: float = LN2) -> GapReport:
    """Measure transfer gain and overfitting-mitigation gain.

    ``run_pairs`` are (scratch, pretrained) records of otherwise
    identical runs: TG = scratch train error − pretrained train error at
    the final epoch (an epoch-1 loss-difference variant is reported too,
    since "training error" admits both readings).

    ``sweep_rows`` are from-scratch model-size rows of a single mode:
    for each seed the bound-with-measured-gap at width d is
    train_err + measured gap = test error, so
    OG = test_err(largest d) − min over d of test_err (median over
    seeds). The theoretical variant replaces the measured gap with the
    finite-hypothesis margin at each width.
    """
    tg_vals: list[float] = []
    tg_loss_vals: list[float] = []
    prov: dict = {"tg_pairs": [], "og_fingerprints": []}
    for scratch, pre in run_pairs:
        if _pair_key(scratch.config) != _pair_key(pre.config):
            raise PairingError(
                f"paired runs differ beyond init: {scratch.config} vs {pre.config}")
        if scratch.config.get("init") == pre.config.get("init"):
            raise PairingError("a TG pair needs one scratch and one pretrained run")
        tg_vals.append(scratch.final_train_err - pre.final_train_err)
        tg_loss_vals.append(scratch.train_loss[0] - pre.train_loss[0])
        prov["tg_pairs"].append((scratch.fingerprint, pre.fingerprint))

    og_measured = None
    og_theoretical = None
    og_by_d: dict = {}
    if sweep_rows:
        modes = {r["mode"] for r in sweep_rows}
        if len(modes) != 1:
            raise PairingError(f"overfitting-gain rows must share a mode, got {modes}")
        ds_sorted = sorted({r["d"] for r in sweep_rows})
        largest = ds_sorted[-1]
        seeds = sorted({r["seed"] for r in sweep_rows})
        measured, theoretical = [], []
        for s in seeds:
            by_d = {r["d"]: r for r in sweep_rows if r["seed"] == s}
            if set(by_d) != set(ds_sorted):
                raise PairingError(f"seed {s} is missing some widths")
            meas = {d: by_d[d]["test_err"] for d in ds_sorted}
            theo = {d: by_d[d]["train_err"] +
                    hoeffding_gap(bits_per_param * by_d[d]["trainable_count"],
                                  by_d[d]["n_train"], delta)
                    for d in ds_sorted}
            measured.append(meas[largest] - min(meas.values()))
            theoretical.append(theo[largest] - min(theo.values()))
        og_measured = float(np.median(measured))
        og_theoretical = float(np.median(theoretical))
        for d in ds_sorted:
            errs = [r["test_err"] for r in sweep_rows if r["d"] == d]
            og_by_d[d] = float(np.median(errs))
        prov["og_fingerprints"] = [r["fingerprint"] for r in sweep_rows]

    return GapReport(
        tg_values=tuple(tg_vals), tg_epoch1_loss_values=tuple(tg_loss_vals),
        og_measured=og_measured, og_theoretical=og_theoretical,
        og_by_d=og_by_d,
        notes=("overfitting gain uses the empirically measured gap in place "
               "of the O(sqrt(|P|/n)) capacity term; the theoretical variant "
               "uses the finite-hypothesis margin with ln|H| = c*|P|"),
        provenance=prov)
