"""Losses, the training loop, and the key=value config file.

Node classification uses cross-entropy, edge classification a focal loss.
Masks multiply per-primitive terms before reduction, so mutating a masked
label cannot change the loss or any gradient. Batches concatenate the
per-graph logits per readout stage, which reproduces the semantics of one
big block-diagonal graph.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .engine import Adam, PlateauScheduler, Tape, Tensor, backward
from .model import forward, init_parameters


class TrainError(Exception):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.00027
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    decay_factor: float = 0.1
    node_weight: float = 0.5
    aux_weight: float = 0.3
    focal_gamma: float = 1.5
    dropout: float = 0.1
    n_max: int = 16
    val_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise TrainError("lr, batch_size and max_epochs must be positive")
        if not 0.0 <= self.node_weight <= 1.0:
            raise TrainError(f"node_weight must be in [0, 1], got {self.node_weight}")
        if self.aux_weight < 0 or self.focal_gamma < 0:
            raise TrainError("aux_weight and focal_gamma must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def to_dict(self):
        return {
            "lr": self.lr, "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "patience": self.patience, "decay_factor": self.decay_factor,
            "node_weight": self.node_weight, "aux_weight": self.aux_weight,
            "focal_gamma": self.focal_gamma, "dropout": self.dropout,
            "n_max": self.n_max, "val_fraction": self.val_fraction, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# losses


def _zero_scalar(dtype=np.float64):
    return Tensor(np.zeros((), dtype=dtype))


def _onehot(labels, num_classes):
    n = labels.shape[0]
    out = np.zeros((n, num_classes))
    out[np.arange(n), labels] = 1.0
    return out


def node_loss(logits, labels, mask):
    """Mean cross-entropy over mask == 1 nodes; exactly zero when all are masked."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    denom = float(mask.sum())
    if logits.shape[0] == 0 or denom == 0.0:
        return _zero_scalar(logits.dtype)
    logp = eg.log_softmax(logits, axis=1)
    picked = eg.tsum(eg.mul(logp, Tensor(_onehot(labels, logits.shape[1]))), axis=1)
    total = eg.tsum(eg.mul(picked, Tensor(mask)))
    return eg.scale(total, -1.0 / denom)


def edge_loss(logits, labels, mask, gamma=1.5):
    """Mean focal loss -(1 - p_t)^gamma * log p_t over mask == 1 support slots."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    denom = float(mask.sum())
    if logits.shape[0] == 0 or denom == 0.0:
        return _zero_scalar(logits.dtype)
    logp = eg.log_softmax(logits, axis=1)
    picked = eg.tsum(eg.mul(logp, Tensor(_onehot(labels, logits.shape[1]))), axis=1)
    p_t = eg.texp(picked)
    weight = eg.pow_scalar(eg.add_const(eg.neg(p_t), 1.0), gamma)
    contrib = eg.mul(weight, picked)
    total = eg.tsum(eg.mul(contrib, Tensor(mask)))
    return eg.scale(total, -1.0 / denom)


def total_loss(final_node, final_edge, aux_pairs, node_weight=0.5, aux_weight=0.3):
    """node_weight * Ln + (1 - node_weight) * Le plus aux_weight-scaled copies
    of the same blend for every auxiliary stage."""
    out = eg.add(eg.scale(final_node, node_weight),
                 eg.scale(final_edge, 1.0 - node_weight))
    for aux_node, aux_edge in aux_pairs:
        stage = eg.add(eg.scale(aux_node, node_weight),
                       eg.scale(aux_edge, 1.0 - node_weight))
        out = eg.add(out, eg.scale(stage, aux_weight))
    return out


# ---------------------------------------------------------------------------
# batching helpers


def _local_masks(graph):
    off = 1 if graph.has_master else 0
    return graph.node_mask[off:], graph.edge_mask[off:, off:]


def _edge_targets(aligned, support, edge_mask):
    labels = np.array([aligned.edge_ids[i, j] for i, j in support], dtype=np.int64)
    mask = np.array([edge_mask[i, j] for i, j in support], dtype=np.float64)
    return labels, mask


def graph_losses(results_and_targets, config):
    """Stage-concatenated losses for a batch.

    Takes [(ForwardResult, AlignedLabels, node_mask, edge_mask), ...]; returns
    the total loss Tensor. Concatenation per stage makes the means run over
    every unmasked primitive of the batch at once.
    """
    num_aux = len(results_and_targets[0][0].aux)
    node_parts = [[] for _ in range(num_aux + 1)]
    node_labels, node_masks = [], []
    edge_parts = [[] for _ in range(num_aux + 1)]
    edge_labels, edge_masks = [], []
    for res, aligned, nmask, emask in results_and_targets:
        node_parts[0].append(res.node_logits)
        for s, (nl, _) in enumerate(res.aux):
            node_parts[s + 1].append(nl)
        node_labels.append(aligned.node_ids)
        node_masks.append(nmask)
        labels, mask = _edge_targets(aligned, res.support, emask)
        edge_parts[0].append(res.edge_logits)
        for s, (_, el) in enumerate(res.aux):
            edge_parts[s + 1].append(el)
        edge_labels.append(labels)
        edge_masks.append(mask)
    nl_cat = np.concatenate(node_labels)
    nm_cat = np.concatenate(node_masks)
    el_cat = np.concatenate(edge_labels) if edge_labels else np.zeros(0, dtype=np.int64)
    em_cat = np.concatenate(edge_masks) if edge_masks else np.zeros(0)
    el_cat = np.where(el_cat < 0, 0, el_cat)  # slots without support never pass the mask

    def stage_losses(s):
        n_logits = eg.concat(node_parts[s], axis=0)
        e_logits = eg.concat(edge_parts[s], axis=0)
        ln = node_loss(n_logits, nl_cat, nm_cat)
        le = edge_loss(e_logits, el_cat, em_cat, gamma=config.focal_gamma)
        return ln, le

    final_n, final_e = stage_losses(0)
    aux = [stage_losses(s) for s in range(1, num_aux + 1)]
    return total_loss(final_n, final_e, aux,
                      node_weight=config.node_weight, aux_weight=config.aux_weight)


def primitive_counts(result, aligned, node_mask, edge_mask):
    """(correct, total) pairs for nodes and edges under the masks."""
    node_pred = result.node_logits.data.argmax(axis=1)
    nsel = node_mask > 0
    node_correct = int((node_pred[nsel] == aligned.node_ids[nsel]).sum())
    node_total = int(nsel.sum())
    edge_correct = edge_total = 0
    if result.support:
        epred = result.edge_logits.data.argmax(axis=1)
        for k, (i, j) in enumerate(result.support):
            if edge_mask[i, j] > 0:
                edge_total += 1
                edge_correct += int(epred[k] == aligned.edge_ids[i, j])
    return node_correct, node_total, edge_correct, edge_total


# ---------------------------------------------------------------------------
# fit


@dataclass
class FitResult:
    params: dict
    best_params: dict
    history: list
    best_epoch: int


def fit(train_items, val_items, model_config, train_config, edge_dim, progress=None):
    """Train on pre-split chunk graphs, validate on full graphs each epoch.

    train_items/val_items: [(ModeledGraph, AlignedLabels), ...]. Returns the
    final parameters, the best-validation copy, and the per-epoch history.
    """
    if not train_items:
        raise TrainError("fit: empty training set")
    if not val_items:
        raise TrainError("fit: empty validation set")
    ss = np.random.SeedSequence(train_config.seed)
    init_rng, shuffle_rng_src, drop_rng = [np.random.default_rng(s) for s in ss.spawn(3)]
    params = init_parameters(model_config, edge_dim, seed=init_rng)
    opt = Adam(params, lr=train_config.lr)
    sched = PlateauScheduler(train_config.lr, factor=train_config.decay_factor,
                             patience=train_config.patience)
    history = []
    best_val = np.inf
    best_epoch = -1
    best_params = {k: p.data.copy() for k, p in params.items()}

    for epoch in range(train_config.max_epochs):
        order = shuffle_rng_src.permutation(len(train_items))
        lr_now = sched.lr
        opt.lr = lr_now
        batch_losses = []
        for lo in range(0, len(order), train_config.batch_size):
            idxs = order[lo:lo + train_config.batch_size]
            with Tape() as tape:
                triples = []
                for idx in idxs:
                    graph, aligned = train_items[idx]
                    res = forward(graph, params, model_config, train=True, rng=drop_rng)
                    nmask, emask = _local_masks(graph)
                    triples.append((res, aligned, nmask, emask))
                loss = graph_losses(triples, train_config)
                grads = backward(tape, loss, params)
            opt.step(grads)
            batch_losses.append(float(loss.data))
        train_loss = float(np.mean(batch_losses))

        val_losses = []
        counts = np.zeros(4, dtype=np.int64)
        for graph, aligned in val_items:
            res = forward(graph, params, model_config, train=False)
            nmask, emask = _local_masks(graph)
            vloss = graph_losses([(res, aligned, nmask, emask)], train_config)
            val_losses.append(float(vloss.data))
            counts += primitive_counts(res, aligned, nmask, emask)
        val_loss = float(np.mean(val_losses))
        node_acc = counts[0] / counts[1] if counts[1] else 0.0
        edge_acc = counts[2] / counts[3] if counts[3] else 0.0

        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "node_acc": float(node_acc), "edge_acc": float(edge_acc),
                        "lr": lr_now})
        if progress is not None:
            progress(history[-1])
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in params.items()}
        sched.update(val_loss)

    return FitResult(params=params, best_params=best_params, history=history,
                     best_epoch=best_epoch)


def history_to_csv(history):
    lines = ["epoch,train_loss,val_loss,node_acc,edge_acc,lr"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['train_loss']:.10g},{row['val_loss']:.10g},"
            f"{row['node_acc']:.10g},{row['edge_acc']:.10g},{row['lr']:.10g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config file


_MODEL_KEYS = {
    "hidden": int, "layers": int, "readout_hidden": int, "dropout": float,
    "attn_leaky_relu": bool, "leaky_slope": float, "message_concat": bool,
    "residual": bool, "aux_readouts": bool,
}
_TRAIN_KEYS = {
    "lr": float, "batch_size": int, "max_epochs": int, "patience": int,
    "decay_factor": float, "node_weight": float, "aux_weight": float,
    "focal_gamma": float, "dropout": float, "n_max": int,
    "val_fraction": float, "seed": int,
}
_DATA_KEYS = {
    "d_n": int, "d_e": int, "n_max": int, "global_graph": bool,
    "full_connect": bool, "count": int, "max_symbols": int,
}

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "on": True,
                "false": False, "0": False, "no": False, "off": False}


def parse_config_text(text):
    """Parse the [model]/[train]/[data] key=value format. Unknown sections or
    keys are errors; values are coerced per key."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise TrainError(f"config: {exc}") from None
    tables = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS, "data": _DATA_KEYS}
    out = {"model": {}, "train": {}, "data": {}}
    for section in cp.sections():
        if section not in tables:
            raise TrainError(f"config: unknown section [{section}]")
        for key, raw in cp.items(section):
            table = tables[section]
            if key not in table:
                raise TrainError(f"config: unknown key {key!r} in [{section}]")
            caster = table[key]
            try:
                if caster is bool:
                    out[section][key] = _BOOL_VALUES[raw.strip().lower()]
                else:
                    out[section][key] = caster(raw)
            except (ValueError, KeyError):
                raise TrainError(f"config: bad value {raw!r} for {section}.{key}") from None
    return out
