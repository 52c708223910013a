"""Decentralized DP-SGD round loop with push-sum weight correction.

Each round, every node samples one local data point, evaluates the gradient
at its de-biased estimate z_i = x_i / w_i, clips it to the scheduled bound,
perturbs it with scheduled Gaussian noise, takes the step on its raw iterate
x_i, and then all nodes mix both x and the push-sum weight w through the
round's column-stochastic matrix:

    x_i^{k+1/2} = x_i^k - gamma * (clip(g_i^k) + N_i^k)
    x_i^{k+1}   = sum_j P_ij^k x_j^{k+1/2}
    w_i^{k+1}   = sum_j P_ij^k w_j^k

Column stochasticity conserves the sums of x and w, so the average iterate
follows the noisy mean gradient exactly and the weights w recover the bias a
directed graph would otherwise inject into z.

Randomness is drawn from counter-based Philox streams keyed by
(master seed, node index, purpose), one purpose for parameter init, one for
data sampling, and one for noise.  Results are therefore bitwise
reproducible for a given seed no matter how many workers execute the
per-node phase, and ablating noise never shifts the sampled data sequence.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricsLog, RoundDetail, RoundStats, mean_sq_consensus
from .models import Task, evaluate, per_sample_gradient
from .topology import GraphSchedule, validate_column_stochastic

PURPOSE_INIT = 0
PURPOSE_SAMPLE = 1
PURPOSE_NOISE = 2

# Push-sum weights this small mean the matrix schedule starves a node.
WEIGHT_FLOOR = 1e-300


class DegenerateWeight(ArithmeticError):
    """A push-sum weight collapsed to zero; the mixing schedule is unusable."""


class NonFiniteParameter(ArithmeticError):
    """An iterate overflowed or went NaN (step size likely too large)."""

    def __init__(self, k: int):
        self.k = k
        super().__init__(f"non-finite parameter after round {k}; try a smaller step size")


def node_stream(master_seed: int, node: int, purpose: int) -> np.random.Generator:
    """Independent Philox stream for one node and purpose."""
    seq = np.random.SeedSequence([master_seed, node, purpose])
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class NodeState:
    """One node's raw iterate, push-sum weight, and de-biased estimate."""

    x: np.ndarray
    w: float
    z: np.ndarray

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("push-sum weight must be positive")

    @classmethod
    def initial(cls, x0: np.ndarray) -> "NodeState":
        x = np.asarray(x0, dtype=float)
        return cls(x=x, w=1.0, z=x.copy())


def clip_gradient(g: np.ndarray, bound: float) -> np.ndarray:
    """Scale g down to norm ``bound`` when it is longer; otherwise pass through.

    The zero vector and any ``bound = inf`` (clipping disabled) pass through
    unchanged, so the non-private path does no extra arithmetic.
    """
    norm = float(np.linalg.norm(g))
    if norm > bound:
        return g * (bound / norm)
    return g


def local_dp_step(
    state: NodeState,
    g_clipped: np.ndarray,
    sigma: float,
    gamma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Half-step x - gamma * (g + N) with N ~ Normal(0, sigma^2 I).

    Noise is drawn as a standard normal vector scaled by sigma, so runs that
    differ only in sigma consume identical stream draws.  sigma = 0 skips
    the draw entirely (the stream does not advance).
    """
    if sigma > 0:
        noise = rng.standard_normal(len(g_clipped)) * sigma
        return state.x - gamma * (g_clipped + noise)
    return state.x - gamma * g_clipped


def _mix_arrays(
    halves: np.ndarray, weights: np.ndarray, P: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_next = P @ halves
    w_next = P @ weights
    if (w_next <= WEIGHT_FLOOR).any():
        node = int(np.argmax(w_next <= WEIGHT_FLOOR))
        raise DegenerateWeight(f"push-sum weight underflowed at node {node}")
    return x_next, w_next, x_next / w_next[:, None]


def mix_round(states, matrix) -> list[NodeState]:
    """One synchronized gossip exchange over a validated mixing matrix."""
    halves = np.stack([s.x for s in states])
    weights = np.asarray([s.w for s in states], dtype=float)
    x_next, w_next, z_next = _mix_arrays(halves, weights, matrix.weights)
    return [
        NodeState(x=x_next[i], w=float(w_next[i]), z=z_next[i])
        for i in range(len(states))
    ]


@dataclass
class RunConfig:
    """Everything one deterministic run needs.

    ``schedule`` is a NoiseSchedule or GeneralSchedule; None selects the
    non-private path (no clipping, no noise).  ``noise_enabled = False`` keeps
    the clipping bound of the schedule but injects no noise, which isolates
    the two privacy mechanisms in ablations.  ``x0`` overrides the default
    per-node Gaussian initialization (shape (n, d)).
    """

    task: Task
    graph: GraphSchedule
    schedule: object | None
    gamma: float
    K: int
    seed: int
    noise_enabled: bool = True
    x0: np.ndarray | None = None
    init_scale: float = 0.5
    workers: int = 1
    capture_detail: bool = False
    extra_meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def d(self) -> int:
        return self.task.model.dim


def _initial_iterates(config: RunConfig) -> np.ndarray:
    if config.x0 is not None:
        x0 = np.array(config.x0, dtype=float)
        if x0.shape != (config.n, config.d):
            raise ValueError(f"x0 must have shape ({config.n}, {config.d})")
        return x0
    return np.stack(
        [
            node_stream(config.seed, i, PURPOSE_INIT).standard_normal(config.d)
            * config.init_scale
            for i in range(config.n)
        ]
    )


def run(config: RunConfig) -> MetricsLog:
    """Execute K rounds and return the full metrics log.

    Row k is evaluated at the average iterate entering round k, while its
    clip rate refers to the gradients sampled during round k.  The log's
    metadata records the worst push-sum weight-sum drift and the largest
    unclipped stochastic gradient norm seen, both useful sanity checks.
    """
    model, data = config.task.model, config.task.dataset
    n, d, K, J = config.n, config.d, config.K, config.task.dataset.J
    if data.n != n:
        raise ValueError(f"dataset has {data.n} shards but the graph has {n} nodes")
    if config.gamma < 0:
        raise ValueError("step size must be nonnegative")
    for k in range(config.graph.period):
        validate_column_stochastic(config.graph.matrix_at(k))
    sched = config.schedule
    if sched is not None and sched.K < K:
        raise ValueError("schedule is shorter than the run")

    sample_rngs = [node_stream(config.seed, i, PURPOSE_SAMPLE) for i in range(n)]
    noise_rngs = [node_stream(config.seed, i, PURPOSE_NOISE) for i in range(n)]
    X = _initial_iterates(config)
    w = np.ones(n)
    Z = X.copy()

    halves = np.empty((n, d))
    clipped = np.zeros(n, dtype=bool)
    grads = np.empty((n, d)) if config.capture_detail else None
    noises = np.empty((n, d)) if config.capture_detail else None
    rows: list[RoundStats] = []
    details: list[RoundDetail] = [] if config.capture_detail else None
    max_weight_drift = 0.0
    max_grad_norm = 0.0

    def step_node(i: int, C_k: float, sigma: float) -> float:
        idx = int(sample_rngs[i].integers(J))
        g = per_sample_gradient(model, Z[i], data.features[i, idx], data.labels[i, idx])
        norm = float(np.linalg.norm(g))
        clipped[i] = norm > C_k
        if clipped[i]:
            g = g * (C_k / norm)
        if sigma > 0:
            noise = noise_rngs[i].standard_normal(d) * sigma
            halves[i] = X[i] - config.gamma * (g + noise)
        else:
            noise = None
            halves[i] = X[i] - config.gamma * g
        if grads is not None:
            grads[i] = g
            noises[i] = noise if noise is not None else 0.0
        return norm

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for k in range(K):
            if sched is None:
                C_k, mu_k, sigma = math.inf, math.nan, 0.0
            else:
                C_k = sched.clip_bound_at(k)
                mu_k = sched.budget_at(k)
                sigma = sched.sigma_at(k) if config.noise_enabled else 0.0

            xbar = X.mean(axis=0)
            loss, grad, acc = evaluate(model, data, xbar)
            stats_k = RoundStats(
                k=k,
                loss=loss,
                grad_norm_sq=float(grad @ grad),
                consensus_err=mean_sq_consensus(Z, xbar),
                clip_rate=0.0,
                clip_bound=C_k,
                step_budget=mu_k,
                noise_std=sigma,
                accuracy=acc,
            )

            if pool is None:
                norms = [step_node(i, C_k, sigma) for i in range(n)]
            else:
                norms = list(pool.map(lambda i: step_node(i, C_k, sigma), range(n)))
            max_grad_norm = max(max_grad_norm, max(norms))

            P = config.graph.matrix_at(k).weights
            X_next, w_next, Z_next = _mix_arrays(halves, w, P)
            if not np.isfinite(X_next).all():
                raise NonFiniteParameter(k)
            max_weight_drift = max(max_weight_drift, abs(float(w_next.sum()) - n))

            rows.append(dataclasses.replace(stats_k, clip_rate=float(clipped.mean())))
            if details is not None:
                details.append(
                    RoundDetail(
                        xbar=xbar,
                        xbar_next=X_next.mean(axis=0),
                        halves_mean=halves.mean(axis=0),
                        mean_clipped_grad=grads.mean(axis=0),
                        mean_noise=noises.mean(axis=0),
                        weight_sum=float(w_next.sum()),
                        stoch_grad_norms=np.asarray(norms, dtype=float),
                    )
                )
            X, w, Z = X_next, w_next, Z_next
    finally:
        if pool is not None:
            pool.shutdown()

    meta = {
        "n": n,
        "d": d,
        "K": K,
        "J": J,
        "gamma": repr(float(config.gamma)),
        "seed": config.seed,
        "graph": config.graph.kind,
        "noise_enabled": config.noise_enabled,
    }
    meta.update(config.extra_meta)
    meta["max_weight_sum_drift"] = repr(max_weight_drift)
    meta["max_stoch_grad_norm"] = repr(max_grad_norm)
    return MetricsLog(meta=meta, rows=rows, detail=details)
