"""Round-by-round orchestration of server and clients.

One round: every client computes its smoothed update from a fresh
mini-batch (plus a curvature estimate on refresh rounds), the updates
travel uplink over the selected link model (analog superposition,
digital with Shannon-rate cost accounting, or an ideal zero-cost link),
and the server applies the clipped preconditioned step and re-broadcasts.
First-order baselines run several local gradient steps and upload
parameters instead.

All randomness is drawn from streams derived from
(master seed, round, purpose, index), so rounds are reproducible and
client work could be evaluated in any order or in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    EnergyLedger,
    OtaConfig,
    client_scale_factor,
    digital_slots,
    energy_accumulate,
    global_scale_factor,
    ota_aggregate_slot,
    sample_channel_matrix,
)
from .model import (
    Batch,
    MlpArch,
    cross_entropy,
    forward,
    gnb_diag_hessian,
    loss_and_grad,
)
from .optimizer import (
    EmaState,
    SophiaConfig,
    apply_step,
    ema_hessian,
    ema_moment,
    fedprox_grad,
    sophia_direction,
)

ALGOS = ("fed_sophia", "fedavg", "fedprox")
LINKS = ("ota", "digital", "ideal")

# stream tags keeping client, slot and digital-link randomness disjoint
_CLIENT_STREAM = 1
_OTA_M_STREAM = 2
_OTA_H_STREAM = 3
_DIGITAL_STREAM = 4


@dataclass
class Dataset:
    """Feature matrix with integer labels below class_count."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("dataset inputs must be a nonempty 2-D matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("need one label per sample")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError("label out of range")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ClientState:
    shard: Dataset
    ema: EmaState
    ledger: EnergyLedger
    p_n: float


@dataclass
class FederationState:
    theta: np.ndarray
    arch: MlpArch
    clients: list[ClientState]
    round: int = 0
    h_bar: np.ndarray | None = None  # server-side curvature, persisted between refreshes

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.h_bar is None:
            self.h_bar = np.zeros_like(self.theta)


@dataclass(frozen=True)
class RoundReport:
    round: int
    slots: int
    bits: int
    energy_j: float
    train_loss: float
    test_accuracy: float


@dataclass
class RoundConfig:
    """Everything run_round needs besides the evolving state."""

    sophia: SophiaConfig
    ota: OtaConfig
    master_seed: int
    train_eval: Dataset
    test_eval: Dataset
    batch_size: int = 64
    local_steps: int = 10  # baseline local iterations per round
    mu: float = 0.01  # proximal weight (fedprox)
    eta_baseline: float | None = None  # per-local-step rate; None -> sophia.eta
    bits_per_param: int = 32
    e_compute_round: float = 1e-3  # joules per local gradient evaluation
    e_per_bit: float = 1e-6
    normalize_by_participants: bool = False


def partition_iid(data: Dataset, n_clients: int, seed: int) -> list[Dataset]:
    """Shuffle and split into near-equal disjoint shards."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if n_clients > data.size:
        raise ValueError(f"cannot split {data.size} samples across {n_clients} clients")
    perm = np.random.default_rng(seed).permutation(data.size)
    shards = []
    for part in np.array_split(perm, n_clients):
        shards.append(Dataset(data.inputs[part], data.labels[part], data.class_count))
    return shards


def partition_label_limited(
    data: Dataset, n_clients: int, max_labels: int, seed: int
) -> list[Dataset]:
    """Label-skewed split: each shard sees at most max_labels classes.

    Classes are dealt to clients cyclically from a shuffled order, then
    each class's samples are divided among the clients holding it. Raises
    when the label slots cannot cover every class or a client would end
    up empty.
    """
    if max_labels < 1:
        raise ValueError("max_labels must be >= 1")
    c = data.class_count
    eff = min(max_labels, c)
    if n_clients * eff < c:
        raise ValueError(
            f"{n_clients} clients x {eff} labels cannot cover {c} classes"
        )
    counts = np.bincount(data.labels, minlength=c)
    if counts.min() == 0:
        missing = int(np.argmin(counts))
        raise ValueError(f"class {missing} has no samples to assign")

    rng = np.random.default_rng(seed)
    order = rng.permutation(c)
    assigned = [
        sorted({int(order[(n * eff + j) % c]) for j in range(eff)})
        for n in range(n_clients)
    ]
    holders = {cls: [n for n in range(n_clients) if cls in assigned[n]] for cls in range(c)}

    member_idx: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for cls in range(c):
        cls_idx = np.flatnonzero(data.labels == cls)
        rng.shuffle(cls_idx)
        for owner, part in zip(holders[cls], np.array_split(cls_idx, len(holders[cls]))):
            if part.size:
                member_idx[owner].append(part)

    shards = []
    for n in range(n_clients):
        if not member_idx[n]:
            raise ValueError(f"client {n} received no samples; partition infeasible")
        idx = np.concatenate(member_idx[n])
        shards.append(Dataset(data.inputs[idx], data.labels[idx], c))
    return shards


def client_local_step(
    client: ClientState,
    theta: np.ndarray,
    arch: MlpArch,
    cfg: SophiaConfig,
    batch_size: int,
    k: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray | None]:
    """One local iteration: refresh m, and h too on refresh rounds.

    Mutates client.ema in place and returns the vectors to uplink; the
    curvature slot is None off-refresh.
    """
    if client.shard.size < 1:
        raise ValueError("client shard is empty")
    idx = rng.integers(0, client.shard.size, size=batch_size)
    batch = Batch(client.shard.inputs[idx], client.shard.labels[idx])
    _, g_hat = loss_and_grad(theta, arch, batch)
    client.ema.m = ema_moment(client.ema.m, g_hat, cfg.beta1)
    if k % cfg.tau == 0:
        h_hat = gnb_diag_hessian(theta, arch, batch.inputs, rng)
        client.ema.h = ema_hessian(client.ema, h_hat, cfg.beta2, k, cfg.tau)
        client.ema.last_h_round = k
        return client.ema.m, client.ema.h
    return client.ema.m, None


def evaluate(theta: np.ndarray, arch: MlpArch, test: Dataset) -> tuple[float, float]:
    """Mean loss and argmax accuracy (ties go to the lowest class index)."""
    if test.size < 1:
        raise ValueError("test set is empty")
    logits = forward(theta, arch, test.inputs)
    loss = cross_entropy(logits, test.labels)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == test.labels))
    return loss, accuracy


def _ota_uplink(
    vectors: list[np.ndarray],
    clients: list[ClientState],
    ctx: RoundConfig,
    k: int,
    stream: int,
) -> tuple[np.ndarray, int]:
    """Send one vector per client over the analog MAC; return (mean, slots).

    The shared scale factor is renegotiated for every slot over the
    coordinates that slot carries. Slots where no client can transmit
    contribute zeros.
    """
    n = len(vectors)
    d = vectors[0].shape[0]
    b = ctx.ota.b
    h_th = ctx.ota.h_th
    sigma = ctx.ota.noise_sigma
    received = np.empty(d)
    participants = np.empty(d, dtype=np.int64)
    slots = -(-d // b)
    for t in range(slots):
        lo = t * b
        hi = min(d, lo + b)
        rng = np.random.default_rng([ctx.master_seed, k, stream, t])
        gains = sample_channel_matrix(n, hi - lo, rng)
        chunks = np.stack([v[lo:hi] for v in vectors])
        alpha = global_scale_factor(
            [
                client_scale_factor(chunks[i], gains[i], h_th, clients[i].p_n)
                for i in range(n)
            ]
        )
        if math.isinf(alpha):
            received[lo:hi] = 0.0
            participants[lo:hi] = 0
            continue
        received[lo:hi], participants[lo:hi] = ota_aggregate_slot(
            chunks, gains, h_th, alpha, sigma, rng
        )
    if ctx.normalize_by_participants:
        mean = received / np.maximum(participants, 1)
    else:
        mean = received / n
    return mean, slots


def _uplink_mean(
    vectors: list[np.ndarray],
    link: str,
    clients: list[ClientState],
    ctx: RoundConfig,
    k: int,
    stream: int,
) -> tuple[np.ndarray, int, int]:
    """Aggregate per-client vectors; returns (mean, slots, bits per client)."""
    n = len(vectors)
    d = vectors[0].shape[0]
    if link == "ideal":
        return np.stack(vectors).sum(axis=0) / n, 0, 0
    if link == "digital":
        # exact delivery; cost modelled from per-client Shannon rates
        sub_per_client = ctx.ota.b // n
        if sub_per_client < 1:
            raise ValueError(f"{n} clients cannot share {ctx.ota.b} subcarriers")
        bits = ctx.bits_per_param * d
        slots = 0
        for i in range(n):
            rng = np.random.default_rng([ctx.master_seed, k, _DIGITAL_STREAM + stream, i])
            slots = max(
                slots,
                digital_slots(d, ctx.bits_per_param, sub_per_client, ctx.ota, rng),
            )
        return np.stack(vectors).sum(axis=0) / n, slots, bits
    if link == "ota":
        mean, slots = _ota_uplink(vectors, clients, ctx, k, stream)
        return mean, slots, 0
    raise ValueError(f"unknown link {link!r}")


def _copy_client(client: ClientState) -> ClientState:
    ema = EmaState(client.ema.m.copy(), client.ema.h.copy(), client.ema.last_h_round)
    return ClientState(client.shard, ema, client.ledger, client.p_n)


def run_round(
    state: FederationState, algo: str, link: str, ctx: RoundConfig
) -> tuple[FederationState, RoundReport]:
    """Advance the federation by one communication round.

    The input state is not modified; the returned state carries the new
    model, incremented round counter, per-client EMA/energy updates and
    (on refresh rounds) the new server-side curvature.
    """
    if algo not in ALGOS:
        raise ValueError(f"unknown algo {algo!r}")
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}")
    k = state.round
    new_clients = [_copy_client(c) for c in state.clients]

    if algo == "fed_sophia":
        theta_next, h_bar, slots, bits_per_client, grad_evals = _fed_sophia_round(
            state, new_clients, link, ctx
        )
    else:
        theta_next, slots, bits_per_client, grad_evals = _baseline_round(
            state, new_clients, algo, link, ctx
        )
        h_bar = state.h_bar

    energy_round = 0.0
    for c in new_clients:
        before = c.ledger.total_j
        c.ledger = energy_accumulate(
            c.ledger,
            grad_evals * ctx.e_compute_round,
            bits_per_client,
            ctx.e_per_bit,
            slots,
        )
        energy_round += c.ledger.total_j - before

    train_loss, _ = evaluate(theta_next, state.arch, ctx.train_eval)
    _, test_accuracy = evaluate(theta_next, state.arch, ctx.test_eval)

    next_state = FederationState(theta_next, state.arch, new_clients, k + 1, h_bar)
    report = RoundReport(
        round=k,
        slots=slots,
        bits=bits_per_client * len(new_clients),
        energy_j=energy_round,
        train_loss=train_loss,
        test_accuracy=test_accuracy,
    )
    return next_state, report


def _fed_sophia_round(
    state: FederationState,
    clients: list[ClientState],
    link: str,
    ctx: RoundConfig,
):
    k = state.round
    cfg = ctx.sophia
    refresh = k % cfg.tau == 0

    m_vecs, h_vecs = [], []
    for i, client in enumerate(clients):
        rng = np.random.default_rng([ctx.master_seed, k, _CLIENT_STREAM, i])
        m, h = client_local_step(
            client, state.theta, state.arch, cfg, ctx.batch_size, k, rng
        )
        m_vecs.append(m)
        if h is not None:
            h_vecs.append(h)

    m_bar, slots_m, bits_m = _uplink_mean(m_vecs, link, clients, ctx, k, _OTA_M_STREAM)
    if refresh:
        h_bar, slots_h, bits_h = _uplink_mean(
            h_vecs, link, clients, ctx, k, _OTA_H_STREAM
        )
    else:
        h_bar, slots_h, bits_h = state.h_bar, 0, 0

    direction = sophia_direction(m_bar, h_bar, cfg.gamma, cfg.epsilon)
    theta_next = apply_step(state.theta, direction, cfg.eta)

    grad_evals = 2 if refresh else 1  # curvature estimate costs one extra backprop
    return theta_next, h_bar, slots_m + slots_h, bits_m + bits_h, grad_evals


def _baseline_round(
    state: FederationState,
    clients: list[ClientState],
    algo: str,
    link: str,
    ctx: RoundConfig,
):
    k = state.round
    eta = ctx.eta_baseline if ctx.eta_baseline is not None else ctx.sophia.eta
    mu = ctx.mu if algo == "fedprox" else 0.0

    locals_ = []
    for i, client in enumerate(clients):
        rng = np.random.default_rng([ctx.master_seed, k, _CLIENT_STREAM, i])
        theta = state.theta.copy()
        for _ in range(ctx.local_steps):
            idx = rng.integers(0, client.shard.size, size=ctx.batch_size)
            batch = Batch(client.shard.inputs[idx], client.shard.labels[idx])
            _, g = loss_and_grad(theta, state.arch, batch)
            g = fedprox_grad(g, theta, state.theta, mu)
            theta = apply_step(theta, g, eta)
        locals_.append(theta)

    theta_next, slots, bits = _uplink_mean(locals_, link, clients, ctx, k, _OTA_M_STREAM)
    return theta_next, slots, bits, ctx.local_steps
