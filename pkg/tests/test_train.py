"""Training tests: loss fixtures against closed forms, exact masking, batch
concatenation semantics, the fit loop, and config-file parsing."""

import numpy as np
import pytest

from inkgraph import engine as eg
from inkgraph.engine import Tape, Tensor, backward
from inkgraph.graphs import GraphConfig, ModeledGraph, augment_global, build_local_graph
from inkgraph.labels import Vocabulary, align_labels
from inkgraph.model import ModelConfig, forward, init_parameters
from inkgraph.synth import generate_synthetic
from inkgraph.train import (FitResult, TrainConfig, TrainError, edge_loss, fit,
                            graph_losses, history_to_csv, node_loss,
                            parse_config_text, primitive_counts, total_loss)

from oracles import rel_err


def _np_log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _np_node_loss(logits, labels, mask):
    lp = _np_log_softmax(logits)[np.arange(len(labels)), labels]
    return -(lp * mask).sum() / mask.sum()


def _np_edge_loss(logits, labels, mask, gamma):
    lp = _np_log_softmax(logits)[np.arange(len(labels)), labels]
    p = np.exp(lp)
    return -(((1.0 - p) ** gamma) * lp * mask).sum() / mask.sum()


# ---------------------------------------------------------------------------
# config


def test_train_config_defaults_and_round_trip():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.batch_size, cfg.max_epochs) == (0.00027, 32, 200)
    assert (cfg.patience, cfg.decay_factor) == (20, 0.1)
    assert (cfg.node_weight, cfg.aux_weight, cfg.focal_gamma) == (0.5, 0.3, 1.5)
    assert (cfg.dropout, cfg.n_max, cfg.val_fraction, cfg.seed) == (0.1, 16, 0.0, 0)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_train_config_validation():
    with pytest.raises(TrainError):
        TrainConfig(lr=0.0)
    with pytest.raises(TrainError):
        TrainConfig(batch_size=0)
    with pytest.raises(TrainError, match="node_weight"):
        TrainConfig(node_weight=1.5)
    with pytest.raises(TrainError):
        TrainConfig(aux_weight=-0.1)
    with pytest.raises(TrainError):
        TrainConfig(focal_gamma=-1.0)
    with pytest.raises(TrainError, match="val_fraction"):
        TrainConfig(val_fraction=1.0)


# ---------------------------------------------------------------------------
# losses


def test_node_loss_perfect_prediction_near_zero():
    labels = np.array([2, 0, 1])
    logits = Tensor(50.0 * np.eye(4)[labels][:, :4])
    loss = node_loss(logits, labels, np.ones(3))
    assert 0.0 <= float(loss.data) <= 1e-6


def test_node_loss_two_class_closed_form():
    a, b = 0.7, -0.4
    logits = Tensor(np.array([[a, b]]))
    loss = node_loss(logits, np.array([0]), np.ones(1))
    want = np.log(1.0 + np.exp(b - a))
    assert rel_err(float(loss.data), want) < 1e-12


def test_node_loss_mean_runs_over_unmasked_only():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((3, 5))
    labels = np.array([0, 3, 4])
    mask = np.array([1.0, 1.0, 0.0])
    loss = node_loss(Tensor(logits), labels, mask)
    assert rel_err(float(loss.data), _np_node_loss(logits, labels, mask)) < 1e-12
    # the masked row's logits are irrelevant
    logits2 = logits.copy()
    logits2[2] = 99.0
    loss2 = node_loss(Tensor(logits2), labels, mask)
    assert float(loss.data) == float(loss2.data)


def test_all_masked_loss_is_exact_zero_with_zero_grads():
    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    x = Tensor(rng.standard_normal((3, 4)))
    labels = np.array([1, 2, 5])
    for fn in (lambda lg: node_loss(lg, labels, np.zeros(3)),
               lambda lg: edge_loss(lg, labels, np.zeros(3))):
        with Tape() as tape:
            loss = fn(eg.matmul(x, w))
            grads = backward(tape, loss, {"w": w})
        assert float(loss.data) == 0.0
        assert np.all(grads["w"] == 0.0)


def test_empty_logits_give_zero_loss():
    logits = Tensor(np.zeros((0, 14)))
    assert float(node_loss(logits, np.zeros(0, dtype=int), np.zeros(0)).data) == 0.0
    assert float(edge_loss(logits, np.zeros(0, dtype=int), np.zeros(0)).data) == 0.0


def test_edge_loss_gamma_zero_is_cross_entropy():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((6, 14))
    labels = rng.integers(0, 14, size=6)
    mask = np.array([1, 1, 0, 1, 1, 1], dtype=np.float64)
    ce = node_loss(Tensor(logits), labels, mask)
    fl = edge_loss(Tensor(logits), labels, mask, gamma=0.0)
    assert rel_err(float(fl.data), float(ce.data)) < 1e-12


def test_edge_loss_focal_fixture():
    # p_t = 0.9, gamma = 2 -> loss = (1 - 0.9)^2 * (-log 0.9)
    logits = np.array([[np.log(9.0), 0.0]])
    loss = edge_loss(Tensor(logits), np.array([0]), np.ones(1), gamma=2.0)
    p = np.exp(logits[0, 0]) / (np.exp(logits[0, 0]) + 1.0)
    want = -((1.0 - p) ** 2) * np.log(p)
    assert rel_err(float(loss.data), want) < 1e-12
    assert abs(float(loss.data) - 0.01 * -np.log(0.9)) < 1e-9


def test_edge_loss_random_matches_numpy():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((8, 14))
    labels = rng.integers(0, 14, size=8)
    mask = (rng.random(8) < 0.7).astype(np.float64)
    mask[0] = 1.0
    for gamma in (0.5, 1.5, 2.0):
        got = float(edge_loss(Tensor(logits), labels, mask, gamma=gamma).data)
        assert rel_err(got, _np_edge_loss(logits, labels, mask, gamma)) < 1e-12


def test_total_loss_blend():
    ln = Tensor(np.array(1.0))
    le = Tensor(np.array(3.0))
    assert float(total_loss(ln, le, [], node_weight=0.5).data) == 2.0
    assert float(total_loss(ln, le, [], node_weight=1.0).data) == 1.0
    assert float(total_loss(ln, le, [], node_weight=0.0).data) == 3.0

    one = Tensor(np.array(1.0))
    aux = [(one, one)] * 5
    got = total_loss(one, one, aux, node_weight=0.5, aux_weight=0.3)
    assert rel_err(float(got.data), 1.0 + 5 * 0.3) < 1e-12
    # aux_weight = 0 silences the auxiliary stages entirely
    got0 = total_loss(ln, le, [(Tensor(np.array(9.0)), Tensor(np.array(9.0)))],
                      node_weight=0.5, aux_weight=0.0)
    assert float(got0.data) == 2.0


# ---------------------------------------------------------------------------
# batched graph losses and exact masking


def _random_item(rng, n, gcfg_edge_dim, vocab, master=True):
    adj = np.triu((rng.random((n, n)) < 0.7).astype(np.int8), 1)
    adj[0, 1] = 1
    adj = adj + adj.T
    ef = rng.standard_normal((n, n, gcfg_edge_dim)) * adj[:, :, None]
    g = ModeledGraph(adjacency=adj, node_features=rng.standard_normal((n, 2, 10)),
                     edge_features=ef, node_mask=np.ones(n), edge_mask=np.ones((n, n)))
    node_ids = rng.integers(0, len(vocab.symbols), size=n)
    support = np.triu(adj, 1)
    edge_ids = np.where(support == 1,
                        rng.integers(0, vocab.num_edge_classes, size=(n, n)), -1)
    from inkgraph.labels import AlignedLabels
    aligned = AlignedLabels(node_ids=node_ids, edge_ids=edge_ids, order_adj=support)
    return (augment_global(g) if master else g), aligned


def test_masked_primitives_cannot_move_loss_or_grads():
    rng = np.random.default_rng(4)
    vocab = Vocabulary.default()
    mcfg = ModelConfig(hidden=8, layers=2, node_classes=vocab.num_symbols,
                       edge_classes=vocab.num_edge_classes, readout_hidden=6, dropout=0.0)
    params = init_parameters(mcfg, edge_dim=7, seed=0)
    tcfg = TrainConfig(dropout=0.0)
    graph, aligned = _random_item(rng, 5, 7, vocab)
    graph.node_mask[1 + 2] = 0.0  # local node 2; index 0 is the master
    i, j = map(int, np.argwhere(np.triu(graph.adjacency[1:, 1:], 1))[0])
    graph.edge_mask[1 + i, 1 + j] = 0.0

    def run(al):
        with Tape() as tape:
            res = forward(graph, params, mcfg)
            nmask, emask = graph.node_mask[1:], graph.edge_mask[1:, 1:]
            loss = graph_losses([(res, al, nmask, emask)], tcfg)
            grads = backward(tape, loss, params)
        return float(loss.data), grads

    base_loss, base_grads = run(aligned)
    mutated = aligned
    mutated.node_ids[2] = (mutated.node_ids[2] + 7) % vocab.num_symbols
    mutated.edge_ids[i, j] = (mutated.edge_ids[i, j] + 3) % vocab.num_edge_classes
    new_loss, new_grads = run(mutated)

    assert base_loss == new_loss
    for k in base_grads:
        assert np.array_equal(base_grads[k], new_grads[k]), k


def test_graph_losses_match_manual_concatenation():
    rng = np.random.default_rng(5)
    vocab = Vocabulary.default()
    mcfg = ModelConfig(hidden=8, layers=2, node_classes=vocab.num_symbols,
                       edge_classes=vocab.num_edge_classes, readout_hidden=6, dropout=0.0)
    params = init_parameters(mcfg, edge_dim=7, seed=1, dtype=np.float64)
    tcfg = TrainConfig(node_weight=0.4, aux_weight=0.25, focal_gamma=1.5)

    triples = []
    for n in (4, 6):
        graph, aligned = _random_item(rng, n, 7, vocab)
        res = forward(graph, params, mcfg)
        triples.append((res, aligned, graph.node_mask[1:], graph.edge_mask[1:, 1:]))
    got = float(graph_losses(triples, tcfg).data)

    stages = len(triples[0][0].aux) + 1
    want = 0.0
    for s in range(stages):
        n_logits, e_logits = [], []
        nl, nm, el, em = [], [], [], []
        for res, aligned, nmask, emask in triples:
            n_logits.append((res.node_logits if s == 0 else res.aux[s - 1][0]).data)
            e_logits.append((res.edge_logits if s == 0 else res.aux[s - 1][1]).data)
            nl.append(aligned.node_ids)
            nm.append(nmask)
            el.append([aligned.edge_ids[i, j] for i, j in res.support])
            em.append([emask[i, j] for i, j in res.support])
        ln = _np_node_loss(np.concatenate(n_logits), np.concatenate(nl), np.concatenate(nm))
        le = _np_edge_loss(np.concatenate(e_logits),
                           np.concatenate(el).astype(int), np.concatenate(em), 1.5)
        blend = tcfg.node_weight * ln + (1 - tcfg.node_weight) * le
        want += blend if s == 0 else tcfg.aux_weight * blend
    assert rel_err(got, want) < 1e-10


def test_primitive_counts_respect_masks():
    rng = np.random.default_rng(6)
    vocab = Vocabulary.default()
    mcfg = ModelConfig(hidden=8, layers=1, node_classes=vocab.num_symbols,
                       edge_classes=vocab.num_edge_classes, readout_hidden=6, dropout=0.0)
    params = init_parameters(mcfg, edge_dim=7, seed=0)
    graph, aligned = _random_item(rng, 5, 7, vocab)
    res = forward(graph, params, mcfg)
    nmask, emask = graph.node_mask[1:].copy(), graph.edge_mask[1:, 1:].copy()

    # force perfect labels, then knock out one node and one edge via the masks
    aligned.node_ids[:] = res.node_logits.data.argmax(axis=1)
    for k, (i, j) in enumerate(res.support):
        aligned.edge_ids[i, j] = res.edge_logits.data[k].argmax()
    nc, nt, ec, et = primitive_counts(res, aligned, nmask, emask)
    assert (nc, nt) == (5, 5)
    assert (ec, et) == (len(res.support), len(res.support))

    nmask[0] = 0.0
    i0, j0 = res.support[0]
    emask[i0, j0] = 0.0
    aligned.node_ids[0] += 1  # wrong now, but masked
    nc, nt, ec, et = primitive_counts(res, aligned, nmask, emask)
    assert (nc, nt) == (4, 4)
    assert (ec, et) == (len(res.support) - 1, len(res.support) - 1)


# ---------------------------------------------------------------------------
# fit loop


def _fit_items(seed=7, count=3):
    gcfg = GraphConfig(d_n=12, d_e=2)
    pool = generate_synthetic(seed=seed, count=count, max_symbols=2)
    vocab = Vocabulary.from_symbols(
        {lab for _, lg in pool for lab in lg.node_labels})
    items = []
    for expr, lg in pool:
        local = build_local_graph(expr, gcfg)
        aligned = align_labels(lg, local.adjacency, vocab)
        items.append((augment_global(local), aligned))
    return items, vocab, gcfg


def test_fit_runs_and_reports_history():
    items, vocab, gcfg = _fit_items()
    mcfg = ModelConfig(hidden=8, layers=1, node_classes=vocab.num_symbols,
                       edge_classes=vocab.num_edge_classes, readout_hidden=6, dropout=0.0)
    tcfg = TrainConfig(lr=0.01, batch_size=2, max_epochs=3, dropout=0.0, seed=1)
    seen = []
    result = fit(items, items, mcfg, tcfg, edge_dim=gcfg.edge_dim,
                 progress=seen.append)
    assert isinstance(result, FitResult)
    assert len(result.history) == 3 and len(seen) == 3
    for k, row in enumerate(result.history):
        assert row["epoch"] == k
        assert set(row) == {"epoch", "train_loss", "val_loss", "node_acc", "edge_acc", "lr"}
        assert 0.0 <= row["node_acc"] <= 1.0 and 0.0 <= row["edge_acc"] <= 1.0
    assert result.best_epoch == int(np.argmin([r["val_loss"] for r in result.history]))
    assert set(result.best_params) == set(result.params)


def test_fit_is_deterministic_for_a_seed():
    items, vocab, gcfg = _fit_items()
    mcfg = ModelConfig(hidden=8, layers=1, node_classes=vocab.num_symbols,
                       edge_classes=vocab.num_edge_classes, readout_hidden=6, dropout=0.1)
    tcfg = TrainConfig(lr=0.01, batch_size=2, max_epochs=2, dropout=0.1, seed=5)
    r1 = fit(items, items, mcfg, tcfg, edge_dim=gcfg.edge_dim)
    r2 = fit(items, items, mcfg, tcfg, edge_dim=gcfg.edge_dim)
    assert r1.history == r2.history
    assert all(np.array_equal(r1.params[k].data, r2.params[k].data) for k in r1.params)
    r3 = fit(items, items, mcfg, TrainConfig(lr=0.01, batch_size=2, max_epochs=2,
                                             dropout=0.1, seed=6), edge_dim=gcfg.edge_dim)
    assert r1.history != r3.history


def test_fit_rejects_empty_splits():
    items, vocab, gcfg = _fit_items()
    mcfg = ModelConfig(hidden=8, layers=1, node_classes=vocab.num_symbols,
                       edge_classes=vocab.num_edge_classes, readout_hidden=6)
    tcfg = TrainConfig()
    with pytest.raises(TrainError, match="train"):
        fit([], items, mcfg, tcfg, edge_dim=gcfg.edge_dim)
    with pytest.raises(TrainError, match="validation"):
        fit(items, [], mcfg, tcfg, edge_dim=gcfg.edge_dim)


def test_history_csv_is_stable_text():
    history = [{"epoch": 0, "train_loss": 1.25, "val_loss": 0.5,
                "node_acc": 0.75, "edge_acc": 1.0, "lr": 0.00027},
               {"epoch": 1, "train_loss": 1.0 / 3.0, "val_loss": 0.25,
                "node_acc": 1.0, "edge_acc": 1.0, "lr": 0.00027}]
    want = ("epoch,train_loss,val_loss,node_acc,edge_acc,lr\n"
            "0,1.25,0.5,0.75,1,0.00027\n"
            "1,0.3333333333,0.25,1,1,0.00027\n")
    assert history_to_csv(history) == want


# ---------------------------------------------------------------------------
# config text


def test_parse_config_happy_path():
    text = """
[model]
hidden = 64
layers = 2
dropout = 0.2
message_concat = yes
residual = off

[train]
lr = 0.003
batch_size = 4
seed = 9

[data]
d_n = 32
global_graph = true
count = 20
"""
    out = parse_config_text(text)
    assert out["model"] == {"hidden": 64, "layers": 2, "dropout": 0.2,
                            "message_concat": True, "residual": False}
    assert out["train"] == {"lr": 0.003, "batch_size": 4, "seed": 9}
    assert out["data"] == {"d_n": 32, "global_graph": True, "count": 20}
    assert isinstance(out["train"]["lr"], float)
    assert isinstance(out["data"]["d_n"], int)


def test_parse_config_rejects_unknowns_and_bad_values():
    with pytest.raises(TrainError, match=r"unknown section \[optimizer\]"):
        parse_config_text("[optimizer]\nlr = 1\n")
    with pytest.raises(TrainError, match="unknown key 'width'"):
        parse_config_text("[model]\nwidth = 4\n")
    with pytest.raises(TrainError, match="bad value 'abc'"):
        parse_config_text("[train]\nlr = abc\n")
    with pytest.raises(TrainError, match="bad value 'maybe'"):
        parse_config_text("[model]\nresidual = maybe\n")
    with pytest.raises(TrainError, match="config:"):
        parse_config_text("lr = 1\n")
