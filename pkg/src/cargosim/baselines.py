"""Decentralized strategies behind one per-round interface, so every method
consumes identical availability draws, candidate topologies, loss masks,
learners, and ledgers: dense Metropolis consensus, push-sum, compressed
error-feedback gossip, sparse adaptive gossip, and the orchestrated protocol."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import (
    ControlContext,
    ControllerConfig,
    CostModel,
    DecisionBundle,
    DualState,
    RuntimePreset,
    bundle_record,
    control_round,
    dual_update,
)
from .dataplane import (
    FLOAT_BYTES,
    CompressionOperator,
    Mode,
    PayloadRecord,
    compress,
    data_round,
    metropolis_weights,
    delivered_mixing,
    payload_bytes,
    sample_mask,
)
from .signals import ParticipationTracker, Telemetry, disagreement

_SALT_SUBSAMPLE = 42

STRATEGY_NAMES = ("dpsgd", "sgp", "choco", "gossip", "cargo")


@dataclass
class RoundContext:
    """Environment of one round, identical for every strategy at a given seed."""

    t: int
    n_nodes: int
    available: tuple
    candidate_edges: tuple
    loss_p: float
    seed: int
    chi: dict  # node -> gCO2/kWh this round


@dataclass
class RoundOutcome:
    active: tuple
    payloads: list
    losses: dict
    flops: dict
    steps: int
    record: dict = field(default_factory=dict)


class Strategy:
    """Per-round state transition; subclasses own any extra internal state."""

    name = "base"

    def round(self, ctx: RoundContext, states) -> RoundOutcome:
        raise NotImplementedError

    def after_accounting(self, cumulative_carbon_g: float):
        """Hook invoked once the round has been priced; may extend the record."""
        return None


def target_cardinality(fraction: float, n_nodes: int, available) -> int:
    return min(math.ceil(fraction * n_nodes), len(available))


def uniform_subsample(available, k: int, seed: int, t: int) -> tuple:
    """K-subset of the available nodes, keyed by (seed, round) only so all
    baseline strategies draw the same participants."""
    available = sorted(available)
    if k >= len(available):
        return tuple(available)
    rng = np.random.default_rng([seed, _SALT_SUBSAMPLE, t])
    picked = rng.choice(len(available), size=k, replace=False)
    return tuple(sorted(available[i] for i in picked))


def _active_edges(candidates, active) -> tuple:
    active = set(active)
    return tuple(sorted((min(i, j), max(i, j)) for i, j in candidates if i in active and j in active))


class DpsgdStrategy(Strategy):
    """Full-precision neighbor mixing with Metropolis weights over the active
    topology; the dense-consensus reference point."""

    name = "dpsgd"

    def __init__(self, learner, participation_f: float = 1.0):
        self.learner = learner
        self.participation_f = participation_f

    def round(self, ctx, states):
        k = target_cardinality(self.participation_f, ctx.n_nodes, ctx.available)
        active = uniform_subsample(ctx.available, k, ctx.seed, ctx.t)
        losses, flops = {}, {}
        steps = 0
        dim = states[0].x.size
        for i in active:
            trained, loss, work = self.learner.epoch(i, states[i].x, ctx.t)
            states[i].x = trained
            losses[i] = loss
            flops[i] = work.flops
            steps += work.steps
        edges = _active_edges(ctx.candidate_edges, active)
        mask = sample_mask(edges, ctx.loss_p, ctx.seed, ctx.t)
        payloads = []
        for i, j in edges:
            for s, r in ((i, j), (j, i)):
                payloads.append(
                    PayloadRecord(s, r, Mode.DENSE, FLOAT_BYTES * dim, mask.delivered(s, r))
                )
        w = metropolis_weights(edges, ctx.n_nodes)
        w_tilde = delivered_mixing(w, mask)
        x_mat = np.stack([s.x for s in states])
        for i in active:
            states[i].x = w_tilde[i] @ x_mat
        return RoundOutcome(active, payloads, losses, flops, steps)


class SgpStrategy(Strategy):
    """Push-sum gossip: each active node splits its (value, weight) pair evenly
    over its out-edges plus itself; lost shares destroy mass and the x = z/w
    ratio absorbs the bias. Both directions of every candidate edge are used."""

    name = "sgp"

    def __init__(self, learner, participation_f: float = 1.0):
        self.learner = learner
        self.participation_f = participation_f
        self._z = None
        self._w = None

    def _ensure_init(self, states):
        if self._z is None:
            self._z = [s.x.copy() for s in states]
            self._w = [1.0] * len(states)

    def round(self, ctx, states):
        self._ensure_init(states)
        k = target_cardinality(self.participation_f, ctx.n_nodes, ctx.available)
        active = uniform_subsample(ctx.available, k, ctx.seed, ctx.t)
        losses, flops = {}, {}
        steps = 0
        dim = states[0].x.size
        for i in active:
            estimate = self._z[i] / self._w[i]
            trained, loss, work = self.learner.epoch(i, estimate, ctx.t)
            self._z[i] = trained * self._w[i]
            losses[i] = loss
            flops[i] = work.flops
            steps += work.steps
        edges = _active_edges(ctx.candidate_edges, active)
        out_neighbors = {i: [] for i in active}
        for i, j in edges:
            out_neighbors[i].append(j)
            out_neighbors[j].append(i)
        mask = sample_mask(edges, ctx.loss_p, ctx.seed, ctx.t)
        z_new = {i: self._z[i].copy() for i in active}
        w_new = {i: self._w[i] for i in active}
        payloads = []
        # Weight scalar rides along with the share; byte accounting counts the
        # dense model payload only, matching the dense baseline convention.
        for i in sorted(active):
            share = 1.0 / (len(out_neighbors[i]) + 1)
            z_new[i] -= self._z[i] * (1.0 - share)
            w_new[i] -= self._w[i] * (1.0 - share)
            for j in sorted(out_neighbors[i]):
                ok = mask.delivered(i, j)
                payloads.append(PayloadRecord(i, j, Mode.DENSE, FLOAT_BYTES * dim, ok))
                if ok:
                    z_new[j] = z_new[j] + self._z[i] * share
                    w_new[j] = w_new[j] + self._w[i] * share
        for i in active:
            self._z[i] = z_new[i]
            self._w[i] = w_new[i]
            states[i].x = self._z[i] / self._w[i]
        return RoundOutcome(active, payloads, losses, flops, steps)

    @property
    def push_sum_weights(self):
        return None if self._w is None else list(self._w)


class ChocoStrategy(Strategy):
    """Compressed error-feedback gossip: the shared data-plane pipeline with a
    fixed top-k operator for every node, all candidate active-edges, no fanout
    cap, no carbon or fairness control, and no resynchronization."""

    name = "choco"

    def __init__(self, learner, participation_f: float = 1.0, topk_ratio: float = 0.05, gamma: float = 0.5):
        self.learner = learner
        self.participation_f = participation_f
        self.topk_ratio = topk_ratio
        self.gamma = gamma

    def implicit_bundle(self, ctx, active) -> DecisionBundle:
        edges = _active_edges(ctx.candidate_edges, active)
        return DecisionBundle(
            active_set=tuple(sorted(active)),
            activated_edges=edges,
            mixing=metropolis_weights(edges, ctx.n_nodes),
            compression={i: Mode.TOPK for i in active},
            resync=False,
            topk_ratio=self.topk_ratio,
        )

    def round(self, ctx, states):
        k = target_cardinality(self.participation_f, ctx.n_nodes, ctx.available)
        active = uniform_subsample(ctx.available, k, ctx.seed, ctx.t)
        bundle = self.implicit_bundle(ctx, active)
        result = data_round(states, bundle, ctx.loss_p, self.learner, ctx.seed, ctx.t, self.gamma)
        return RoundOutcome(bundle.active_set, result.payloads, result.losses, result.flops, result.steps)


class SparseGossipStrategy(Strategy):
    """Sparse adaptive peer selection: each active node sends one top-k payload
    to the candidate neighbor with the largest loss gap; receivers average the
    delivered coordinates with weight 1/2."""

    name = "gossip"

    def __init__(self, learner, participation_f: float = 1.0, topk_ratio: float = 0.05):
        self.learner = learner
        self.participation_f = participation_f
        self.topk_ratio = topk_ratio
        self._last_loss = None

    def _ensure_init(self, states):
        if self._last_loss is None:
            self._last_loss = {
                i: self.learner.initial_loss(i, states[i].x) for i in range(len(states))
            }

    def round(self, ctx, states):
        self._ensure_init(states)
        k = target_cardinality(self.participation_f, ctx.n_nodes, ctx.available)
        active = uniform_subsample(ctx.available, k, ctx.seed, ctx.t)
        losses, flops = {}, {}
        steps = 0
        dim = states[0].x.size
        op = CompressionOperator(Mode.TOPK, self.topk_ratio)
        edges = _active_edges(ctx.candidate_edges, active)
        neighbors = {i: [] for i in active}
        for i, j in edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        # Peer choice uses the pre-round loss signal, mirroring telemetry timing.
        choice = {}
        for i in sorted(active):
            if neighbors[i]:
                choice[i] = max(
                    sorted(neighbors[i]), key=lambda j: (abs(self._last_loss[i] - self._last_loss[j]), -j)
                )
        for i in active:
            trained, loss, work = self.learner.epoch(i, states[i].x, ctx.t)
            states[i].x = trained
            losses[i] = loss
            flops[i] = work.flops
            steps += work.steps
        mask = sample_mask(edges, ctx.loss_p, ctx.seed, ctx.t)
        snapshot = {i: states[i].x.copy() for i in active}
        payloads = []
        size = payload_bytes(op, dim)
        for i in sorted(choice):
            j = choice[i]
            ok = mask.delivered(i, j)
            payloads.append(PayloadRecord(i, j, Mode.TOPK, size, ok))
            if ok:
                wire, _ = compress(snapshot[i], op)
                idx = wire.indices
                states[j].x[idx] = 0.5 * (states[j].x[idx] + wire.values)
        for i, loss in losses.items():
            self._last_loss[i] = loss
        return RoundOutcome(active, payloads, losses, flops, steps)


class CargoStrategy(Strategy):
    """Control-plane scheduling over the compressed-gossip data plane, with
    participation tracking, telemetry assembly, and dual updates each round."""

    name = "cargo"

    def __init__(
        self,
        learner,
        config: ControllerConfig,
        preset: RuntimePreset,
        cost: CostModel,
        n_nodes: int,
    ):
        self.learner = learner
        self.config = config
        self.preset = preset
        self.cost = cost
        self.n_nodes = n_nodes
        self.duals = DualState()
        self.tracker = ParticipationTracker(n_nodes)
        self._last_loss = None
        self._last_delta = [0.0] * n_nodes

    def _ensure_init(self, states):
        if self._last_loss is None:
            self._last_loss = {
                i: self.learner.initial_loss(i, states[i].x) for i in range(len(states))
            }

    def round(self, ctx, states):
        self._ensure_init(states)
        telemetry = {
            i: Telemetry(
                loss=self._last_loss[i],
                disagreement=self._last_delta[i],
                streak=self.tracker.streak(i),
                rate=self.tracker.rate(i),
                chi=ctx.chi[i],
            )
            for i in ctx.available
        }
        control_ctx = ControlContext(
            t=ctx.t,
            n_nodes=ctx.n_nodes,
            available=tuple(sorted(ctx.available)),
            candidate_edges=ctx.candidate_edges,
            telemetry=telemetry,
            duals=self.duals,
            config=self.config,
            preset=self.preset,
            cost=self.cost,
        )
        bundle = control_round(control_ctx)
        record = {
            "available": sorted(ctx.available),
            "streaks": {str(i): self.tracker.streak(i) for i in range(ctx.n_nodes)},
        }
        record.update(bundle_record(bundle, self.duals))
        result = data_round(states, bundle, ctx.loss_p, self.learner, ctx.seed, ctx.t, self.config.gamma)
        self.tracker.update(bundle.active_set)
        for i, loss in result.losses.items():
            self._last_loss[i] = loss
        for i, senders in result.delivered_in.items():
            self._last_delta[i] = disagreement(states[i].x, [states[j].h for j in senders])
        return RoundOutcome(
            bundle.active_set, result.payloads, result.losses, result.flops, result.steps, record
        )

    def after_accounting(self, cumulative_carbon_g):
        self.duals = dual_update(
            self.duals,
            cumulative_carbon_g,
            self.config.carbon_budget_g,
            self.tracker.mean_rate(),
            self.config,
        )
        return {"lambda_c": self.duals.lambda_c, "lambda_f": self.duals.lambda_f}


def make_strategy(
    name: str,
    learner,
    participation_f: float,
    preset: RuntimePreset,
    controller_config: ControllerConfig = None,
    cost: CostModel = None,
    n_nodes: int = None,
    params: dict = None,
) -> Strategy:
    """Instantiate a strategy by configuration name."""
    params = dict(params or {})
    topk = params.pop("topk_ratio", preset.topk_ratio)
    if params:
        raise ValueError(f"unknown strategy parameters: {sorted(params)}")
    if name == "dpsgd":
        return DpsgdStrategy(learner, participation_f)
    if name == "sgp":
        return SgpStrategy(learner, participation_f)
    if name == "choco":
        gamma = controller_config.gamma if controller_config else 0.5
        return ChocoStrategy(learner, participation_f, topk, gamma)
    if name == "gossip":
        return SparseGossipStrategy(learner, participation_f, topk)
    if name == "cargo":
        if controller_config is None or cost is None or n_nodes is None:
            raise ValueError("cargo requires controller_config, cost model, and n_nodes")
        return CargoStrategy(learner, controller_config, preset, cost, n_nodes)
    raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}")
