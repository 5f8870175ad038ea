"""GIN backbone: encoders, message-passing layers, readout, classifier.

Layer recurrence: h_l = BN(MLP(MP(x_l))), x_{l+1} = Dropout(ReLU(h_l)).
The final layer's h feeds the mean-pool readout directly (no trailing
ReLU/Dropout). Message passing is non-parametric: for each node i it
sums x_j + e_{ji} over incoming directed edges, including a self-loop
carrying the reserved edge code. Node and edge embedding tables live in
the encoder and are shared by all layers.

Tuning-mode insertions (adapters, low-rank factors, rescaling vectors,
prompts) are looked up by registry name, so a registry without them runs
the plain backbone.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ModelConfig, PeftConfig
from .graphs import GraphBatch
from .peft import AdapterModule, adapter_forward
from .registry import ParamRegistry
from .rng import RngStream
from .tensor import (BatchNormState, Tensor, add, batchnorm1d, dropout,
                     gather_rows, matmul, mul_elementwise, relu,
                     scatter_sum, segment_mean_pool)


def init_params(config: ModelConfig, seed: int = 0) -> ParamRegistry:
    """Fresh registry: linear weights ~ U(±1/√fan_in), biases 0,
    embedding tables ~ N(0, 0.02), BN affine at identity.

    Every tensor draws from a stream keyed by its own name, so the result
    is deterministic per seed and independent of insertion order.
    """
    d, h, t = config.emb_dim, config.hidden, config.num_tasks
    reg = ParamRegistry()
    root = RngStream(seed, ("init",))

    def emb(name: str, rows: int) -> None:
        reg.add(name, root.child(name).normal(0.0, 0.02, size=(rows, d)),
                True, "backbone")

    def linear(prefix: str, n_in: int, n_out: int, group: str = "backbone") -> None:
        bound = 1.0 / np.sqrt(n_in)
        reg.add(f"{prefix}.weight",
                root.child(f"{prefix}.weight").uniform(-bound, bound, size=(n_in, n_out)),
                True, group)
        reg.add(f"{prefix}.bias", np.zeros(n_out), True, group)

    for i, size in enumerate(config.vocab.node):
        emb(f"encoder.node_emb.{i}.weight", size)
    for i, size in enumerate(config.vocab.edge):
        emb(f"encoder.edge_emb.{i}.weight", size + 1)  # +1: self-loop code
    for l in range(config.num_layers):
        linear(f"layer.{l}.mlp.0", d, h)
        linear(f"layer.{l}.mlp.1", h, d)
        reg.add(f"layer.{l}.bn.gamma", np.ones(d), True, "backbone")
        reg.add(f"layer.{l}.bn.beta", np.zeros(d), True, "backbone")
        reg.add_buffer(f"layer.{l}.bn.running_mean", np.zeros(d))
        reg.add_buffer(f"layer.{l}.bn.running_var", np.ones(d))
    linear("classifier", d, t, group="classifier")
    return reg


def _bn_state(reg: ParamRegistry, prefix: str) -> BatchNormState:
    return BatchNormState(reg.get(f"{prefix}.gamma"), reg.get(f"{prefix}.beta"),
                          reg.buffer(f"{prefix}.running_mean"),
                          reg.buffer(f"{prefix}.running_var"))


def encode_nodes(batch: GraphBatch, reg: ParamRegistry) -> Tensor:
    """Initial node states: sum of the two node-attribute embeddings,
    plus the feature prompt when one is installed."""
    x = add(gather_rows(reg.get("encoder.node_emb.0.weight"), batch.node_attrs[:, 0]),
            gather_rows(reg.get("encoder.node_emb.1.weight"), batch.node_attrs[:, 1]))
    if "prompt.feature" in reg:
        x = add(x, reg.get("prompt.feature"))
    return x


def edge_embeddings(batch: GraphBatch, reg: ParamRegistry) -> Tensor:
    """Per directed edge: sum of the two edge-attribute embeddings."""
    return add(gather_rows(reg.get("encoder.edge_emb.0.weight"), batch.edge_attrs[:, 0]),
               gather_rows(reg.get("encoder.edge_emb.1.weight"), batch.edge_attrs[:, 1]))


def message_pass(x: Tensor, batch: GraphBatch, edge_emb: Tensor) -> Tensor:
    """MP(x)_i = Σ_{j→i, incl. self-loop} (x_j + e_{ji}); non-parametric."""
    msgs = add(gather_rows(x, batch.edge_src), edge_emb)
    return scatter_sum(msgs, batch.edge_dst, x.shape[0])


def _mlp_linear(x: Tensor, reg: ParamRegistry, name: str) -> Tensor:
    """One MLP linear, honoring installed input-rescaling or low-rank factors."""
    if f"{name}.ia3" in reg:
        x = mul_elementwise(x, reg.get(f"{name}.ia3"))
    out = add(matmul(x, reg.get(f"{name}.weight")), reg.get(f"{name}.bias"))
    if f"{name}.lora_a" in reg:
        out = add(out, matmul(matmul(x, reg.get(f"{name}.lora_a")),
                              reg.get(f"{name}.lora_b")))
    return out


def backbone_layer(m: Tensor, reg: ParamRegistry, l: int, mode: str) -> Tensor:
    """BN(MLP(m)) for layer l; m is the message-passing output."""
    h = relu(_mlp_linear(m, reg, f"layer.{l}.mlp.0"))
    h = _mlp_linear(h, reg, f"layer.{l}.mlp.1")
    return batchnorm1d(h, _bn_state(reg, f"layer.{l}.bn"), mode)


def _adapter_out(x: Tensor, reg: ParamRegistry, prefix: str,
                 bottleneck: int, mode: str) -> Tensor:
    if bottleneck == 0:
        return x  # width-0 bottleneck degenerates to the identity mapping
    return adapter_forward(x, AdapterModule.from_registry(reg, prefix), mode)


def adaptergnn_layer_forward(x: Tensor, m: Tensor, reg: ParamRegistry, l: int,
                             peft: PeftConfig, mode: str) -> Tensor:
    """Dual-adapter combination for layer l:

    h = BN(MLP(m)) + s1·A1(x) + s2·A2(m)

    where x is the layer input, m its message-passing output, A1/A2 the
    layer's two adapters, and s1/s2 the learnable scalar scalings.
    """
    h = backbone_layer(m, reg, l, mode)
    a1 = _adapter_out(x, reg, f"layer.{l}.adapter1", peft.bottleneck, mode)
    a2 = _adapter_out(m, reg, f"layer.{l}.adapter2", peft.bottleneck, mode)
    return add(h, add(mul_elementwise(a1, reg.get(f"layer.{l}.scale1")),
                      mul_elementwise(a2, reg.get(f"layer.{l}.scale2"))))


def gin_node_states(batch: GraphBatch, reg: ParamRegistry, config: ModelConfig,
                    peft: PeftConfig, mode: str,
                    rng: Optional[RngStream] = None) -> Tensor:
    """Run all layers and return final per-node states (n×d)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train|eval, got {mode!r}")
    x = encode_nodes(batch, reg)
    e = edge_embeddings(batch, reg)
    for l in range(config.num_layers):
        m = message_pass(x, batch, e)
        if f"layer.{l}.prompt" in reg:
            m = add(m, reg.get(f"layer.{l}.prompt"))
        if peft.mode == "adaptergnn":
            h = adaptergnn_layer_forward(x, m, reg, l, peft, mode)
        else:
            h = backbone_layer(m, reg, l, mode)
            if peft.mode == "adapter_par":
                h = add(h, _adapter_out(m, reg, f"layer.{l}.adapter",
                                        peft.bottleneck, mode))
            elif peft.mode == "adapter_seq":
                h = add(h, _adapter_out(h, reg, f"layer.{l}.adapter",
                                        peft.bottleneck, mode))
        if l < config.num_layers - 1:
            x = relu(h)
            stream = rng.child(f"layer{l}.dropout") if rng is not None else None
            x = dropout(x, config.dropout, stream, mode)
        else:
            x = h
    return x


def gin_forward(batch: GraphBatch, reg: ParamRegistry, config: ModelConfig,
                peft: PeftConfig, mode: str,
                rng: Optional[RngStream] = None) -> Tensor:
    """Graph embeddings (G×d): mean-pool readout over final node states."""
    x = gin_node_states(batch, reg, config, peft, mode, rng)
    return segment_mean_pool(x, batch.graph_ids, batch.num_graphs)


def classify(embeddings: Tensor, reg: ParamRegistry) -> Tensor:
    """Affine map from graph embeddings to per-task logits."""
    return add(matmul(embeddings, reg.get("classifier.weight")),
               reg.get("classifier.bias"))


def forward_logits(batch: GraphBatch, reg: ParamRegistry, config: ModelConfig,
                   peft: PeftConfig, mode: str,
                   rng: Optional[RngStream] = None) -> Tensor:
    return classify(gin_forward(batch, reg, config, peft, mode, rng), reg)
