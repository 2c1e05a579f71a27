"""Compressed-gossip data plane: error-feedback compression, Bernoulli delivery
masks, delivered-weight renormalization, memory mixing, and resynchronization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

FLOAT_BYTES = 4  # scalar width used for all byte accounting
INT8_SCALE_BYTES = 4
TOPK_ENTRY_BYTES = 8  # 4-byte value + 4-byte index per kept entry

_SALT_MASK = 31


class Mode(str, Enum):
    DENSE = "dense"
    INT8 = "int8"
    TOPK = "topk"


@dataclass(frozen=True)
class CompressionOperator:
    mode: Mode
    topk_ratio: float = 1.0

    def __post_init__(self):
        if self.mode is Mode.TOPK and not 0.0 < self.topk_ratio <= 1.0:
            raise ValueError(f"topk_ratio must be in (0, 1], got {self.topk_ratio}")


DENSE_OP = CompressionOperator(Mode.DENSE)
INT8_OP = CompressionOperator(Mode.INT8)


def topk_op(ratio: float) -> CompressionOperator:
    return CompressionOperator(Mode.TOPK, ratio)


@dataclass
class CompressedVector:
    """Wire representation of one compressed payload."""

    mode: Mode
    values: np.ndarray
    indices: np.ndarray | None = None
    scale: float | None = None


def compress(v: np.ndarray, op: CompressionOperator):
    """Apply the operator; returns (wire representation, reconstructed vector).

    Int8 uses symmetric per-vector quantization with scale max|v|/127; Top-K
    keeps the ceil(ratio * dim) largest magnitudes, ties resolved toward the
    lowest index.
    """
    v = np.asarray(v, dtype=float)
    if op.mode is Mode.DENSE:
        return CompressedVector(Mode.DENSE, v.copy()), v.copy()
    if op.mode is Mode.INT8:
        scale = float(np.max(np.abs(v))) / 127.0
        if scale == 0.0:
            codes = np.zeros(v.shape, dtype=np.int8)
            return CompressedVector(Mode.INT8, codes, scale=0.0), np.zeros_like(v)
        codes = np.round(v / scale).astype(np.int8)
        return CompressedVector(Mode.INT8, codes, scale=scale), codes.astype(float) * scale
    k = math.ceil(op.topk_ratio * v.size)
    order = np.argsort(-np.abs(v), kind="stable")[:k]
    idx = np.sort(order)
    recon = np.zeros_like(v)
    recon[idx] = v[idx]
    return CompressedVector(Mode.TOPK, v[idx].copy(), indices=idx), recon


def payload_bytes(op: CompressionOperator, dim: int) -> int:
    """Payload size of one message for the given operator and model dimension."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if op.mode is Mode.DENSE:
        return FLOAT_BYTES * dim
    if op.mode is Mode.INT8:
        return dim + INT8_SCALE_BYTES
    return math.ceil(op.topk_ratio * dim) * TOPK_ENTRY_BYTES


@dataclass
class NodeState:
    """Model vector and error-feedback memory of one node."""

    x: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.x.shape != self.h.shape:
            raise ValueError("x and h must share a dimension")


def fresh_states(n_nodes: int, dim: int) -> list:
    return [NodeState(np.zeros(dim), np.zeros(dim)) for _ in range(n_nodes)]


def error_feedback(state: NodeState, trained: np.ndarray, op: CompressionOperator):
    """One error-feedback step: e = trained - h, broadcast Q(e), memory h + Q(e).

    Under the dense operator the new memory is set to the trained iterate
    exactly so the memory-tracks-state identity holds bitwise.
    """
    trained = np.asarray(trained, dtype=float)
    e = trained - state.h
    _, e_hat = compress(e, op)
    if op.mode is Mode.DENSE:
        h_new = trained.copy()
    else:
        h_new = state.h + e_hat
    return h_new, e_hat


@dataclass
class DeliveryMask:
    """Delivery flags for directed messages; self-messages always succeed."""

    flags: dict = field(default_factory=dict)  # (sender, receiver) -> bool

    def delivered(self, sender: int, receiver: int) -> bool:
        if sender == receiver:
            return True
        return self.flags.get((sender, receiver), False)


def sample_mask(activated_edges, loss_p: float, seed: int, t: int) -> DeliveryMask:
    """Independent Bernoulli delivery per direction of each activated edge.

    Randomness is keyed by (seed, round, sender, receiver) so identical seeds
    give identical masks regardless of which strategy activated the edges.
    """
    if not 0.0 <= loss_p < 1.0:
        raise ValueError(f"loss probability must be in [0, 1), got {loss_p}")
    flags = {}
    for i, j in activated_edges:
        for sender, receiver in ((i, j), (j, i)):
            if loss_p == 0.0:
                flags[(sender, receiver)] = True
            else:
                u = np.random.default_rng([seed, _SALT_MASK, t, sender, receiver]).uniform()
                flags[(sender, receiver)] = bool(u >= loss_p)
    return DeliveryMask(flags)


def delivered_mixing(w: np.ndarray, mask: DeliveryMask) -> np.ndarray:
    """Renormalize mixing rows over delivered messages (self always delivered);
    a row with zero delivered weight falls back to the identity row."""
    n = w.shape[0]
    out = np.zeros_like(w)
    for i in range(n):
        kept = np.zeros(n)
        for j in range(n):
            if w[i, j] != 0.0 and mask.delivered(j, i):
                kept[j] = w[i, j]
        total = kept.sum()
        if total > 0.0:
            out[i] = kept / total
        else:
            out[i, i] = 1.0
    return out


def mix_and_update(states, w_tilde: np.ndarray, active, gamma: float):
    """Gossip update for active nodes: x <- trained + gamma * (mixed h - own h).

    states[i].x must hold the post-training iterate and states[i].h the
    post-error-feedback memory; inactive nodes are untouched.
    """
    active = sorted(active)
    h_mat = np.stack([s.h for s in states])
    for i in active:
        mixed = w_tilde[i] @ h_mat
        states[i].x = states[i].x + gamma * (mixed - states[i].h)
    return states


@dataclass(frozen=True)
class PayloadRecord:
    sender: int
    receiver: int
    mode: Mode
    bytes_attempted: int
    delivered: bool


def metropolis_weights(edges, n: int) -> np.ndarray:
    """Row-stochastic Metropolis matrix: w_ij = 1/(1 + max(deg_i, deg_j)) on
    edges, remainder on the diagonal."""
    w = np.zeros((n, n))
    deg = [0] * n
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    for i, j in sorted(edges):
        weight = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, j] = weight
        w[j, i] = weight
    for i in range(n):
        w[i, i] = 1.0 - w[i].sum()
    return w


def resynchronize(states, activated_edges, mask: DeliveryMask, nodes):
    """Full-precision averaging pass over delivered activated links among the
    given nodes, then memory reset h <- x for all of them.

    Bytes: one dense message per direction of every activated link between
    participants, delivered flags from the round mask.
    """
    nodes = sorted(nodes)
    node_set = set(nodes)
    dim = states[0].x.size if states else 0
    links = [(i, j) for i, j in activated_edges if i in node_set and j in node_set]
    records = []
    delivered_links = []
    for i, j in links:
        fwd = mask.delivered(i, j)
        bwd = mask.delivered(j, i)
        records.append(PayloadRecord(i, j, Mode.DENSE, FLOAT_BYTES * dim, fwd))
        records.append(PayloadRecord(j, i, Mode.DENSE, FLOAT_BYTES * dim, bwd))
        if fwd and bwd:
            delivered_links.append((i, j))
    n = len(states)
    w = metropolis_weights(delivered_links, n)
    x_mat = np.stack([s.x for s in states])
    for i in nodes:
        states[i].x = w[i] @ x_mat
        states[i].h = states[i].x.copy()
    return records


def resync_pull(states, activated_edges, mask: DeliveryMask, waking):
    """Waking nodes pull full-precision state over their delivered activated
    links and average equally with their own state; h <- x afterwards.

    Only settled peers (activated neighbors that are not themselves waking)
    serve pulls: a node returning from inactivity has nothing fresh to offer.
    Bytes: one dense message per qualifying in-link, delivered flags from the
    round mask. Senders are unchanged.
    """
    waking_set = set(waking)
    waking = sorted(waking_set)
    dim = states[0].x.size if states else 0
    records = []
    pulled = {}
    x_snapshot = {i: s.x.copy() for i, s in enumerate(states)}
    for w_node in waking:
        senders = []
        for i, j in activated_edges:
            if w_node == i and j not in waking_set:
                senders.append(j)
            elif w_node == j and i not in waking_set:
                senders.append(i)
        received = []
        for s in sorted(senders):
            ok = mask.delivered(s, w_node)
            records.append(PayloadRecord(s, w_node, Mode.DENSE, FLOAT_BYTES * dim, ok))
            if ok:
                received.append(x_snapshot[s])
        if received:
            pulled[w_node] = (x_snapshot[w_node] + sum(received)) / (1 + len(received))
        else:
            pulled[w_node] = x_snapshot[w_node]
    for w_node in waking:
        states[w_node].x = pulled[w_node]
        states[w_node].h = states[w_node].x.copy()
    return records


@dataclass
class DataRoundResult:
    losses: dict
    flops: dict
    steps: int
    payloads: list
    delivered_in: dict  # receiver -> sorted list of senders whose gossip payload arrived


def data_round(states, bundle, loss_p: float, learner, seed: int, t: int, gamma: float):
    """Execute one compressed-gossip round for the given decision bundle.

    Order: local training, error feedback, delivery mask, delivered-weight
    renormalization, state update, optional resynchronization. Nodes outside
    the active set keep state and memory bit-identical.
    """
    active = sorted(bundle.active_set)
    dim = states[0].x.size if states else 0
    losses = {}
    flops = {}
    steps = 0
    for i in active:
        trained, loss, work = learner.epoch(i, states[i].x, t)
        states[i].x = trained
        losses[i] = loss
        flops[i] = work.flops
        steps += work.steps
    ops = {i: _operator_for(bundle.compression[i], bundle) for i in active}
    for i in active:
        h_new, _ = error_feedback(states[i], states[i].x, ops[i])
        states[i].h = h_new
    mask = sample_mask(bundle.activated_edges, loss_p, seed, t)
    payloads = []
    delivered_in = {}
    for i, j in sorted(bundle.activated_edges):
        for sender, receiver in ((i, j), (j, i)):
            ok = mask.delivered(sender, receiver)
            payloads.append(
                PayloadRecord(sender, receiver, ops[sender].mode, payload_bytes(ops[sender], dim), ok)
            )
            if ok:
                delivered_in.setdefault(receiver, []).append(sender)
    w_tilde = delivered_mixing(bundle.mixing, mask)
    mix_and_update(states, w_tilde, active, gamma)
    if bundle.resync and bundle.resync_nodes:
        payloads.extend(resync_pull(states, bundle.activated_edges, mask, bundle.resync_nodes))
    return DataRoundResult(
        losses=losses,
        flops=flops,
        steps=steps,
        payloads=payloads,
        delivered_in={k: sorted(v) for k, v in delivered_in.items()},
    )


def _operator_for(mode: Mode, bundle) -> CompressionOperator:
    if mode is Mode.TOPK:
        return CompressionOperator(Mode.TOPK, bundle.topk_ratio)
    return CompressionOperator(mode)
