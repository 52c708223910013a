"""Time-varying directed graphs and their column-stochastic mixing matrices.

A communication round is described by a mixing matrix P where ``P[i, j]`` is
the weight node i applies to the value pushed by node j.  Columns describe how
a sender splits its outgoing mass, so every column must sum to one (push-sum
weights then undo the directional bias).  Built-in generators keep one half of
the mass on the sender and push the other half to a single out-neighbor:

* ``ring_graph``: node i sends to (i + 1) mod n every round.
* ``exponential_graph``: node i sends to (i + 2^(k mod m)) mod n at round k,
  with m = floor(log2(n - 1)) + 1, so the hop distance cycles through powers
  of two and the schedule is periodic with period m.
* ``complete_graph``: uniform all-to-all averaging with every entry 1/n.

The module also checks B-strong-connectivity of a schedule (every window of B
consecutive rounds must have a strongly connected edge union) and derives the
contraction constants that govern how fast push-sum forgets initial conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Column sums may deviate from one by at most this much.
COLUMN_SUM_TOL = 1e-12


class MixingMatrixError(ValueError):
    """A proposed mixing matrix violates the column-stochastic contract."""


class NegativeWeight(MixingMatrixError):
    def __init__(self, i: int, j: int, value: float):
        self.i, self.j, self.value = i, j, value
        super().__init__(f"negative weight {value!r} at entry ({i}, {j})")


class ColumnSumViolation(MixingMatrixError):
    def __init__(self, j: int, total: float):
        self.j, self.total = j, total
        super().__init__(f"column {j} sums to {total!r}, expected 1 within {COLUMN_SUM_TOL}")


class MissingSelfLoop(MixingMatrixError):
    def __init__(self, i: int):
        self.i = i
        super().__init__(f"node {i} has no positive self weight")


class InvalidRegime(ValueError):
    """Contraction constants are undefined for these graph parameters."""


@dataclass(frozen=True)
class MixingMatrix:
    """One round's communication weights, columns summing to one."""

    n: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.n, self.n):
            raise ValueError(f"weights must be ({self.n}, {self.n}), got {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def validate_column_stochastic(matrix: MixingMatrix) -> None:
    """Raise unless the matrix is column-stochastic with positive self weights.

    Checks run in a fixed order: entry signs first, then column sums within
    ``COLUMN_SUM_TOL``, then the diagonal.  Positive diagonals are required
    because a node that forgets its own value breaks push-sum weight recovery.
    """
    w = matrix.weights
    negative = np.argwhere(w < 0)
    if negative.size:
        i, j = (int(v) for v in negative[0])
        raise NegativeWeight(i, j, float(w[i, j]))
    sums = w.sum(axis=0)
    bad = np.argwhere(np.abs(sums - 1.0) > COLUMN_SUM_TOL)
    if bad.size:
        j = int(bad[0][0])
        raise ColumnSumViolation(j, float(sums[j]))
    diag = np.diagonal(w)
    off = np.argwhere(diag <= 0)
    if off.size:
        raise MissingSelfLoop(int(off[0][0]))


def _one_neighbor_matrix(n: int, hop: int) -> MixingMatrix:
    """Each node keeps half its mass and pushes half to the node ``hop`` ahead."""
    w = np.zeros((n, n))
    for sender in range(n):
        receiver = (sender + hop) % n
        w[sender, sender] += 0.5
        w[receiver, sender] += 0.5
    return MixingMatrix(n, w)


def exponential_period(n: int) -> int:
    """Number of rounds before the exponential hop pattern repeats."""
    if n <= 2:
        return 1
    return int(math.floor(math.log2(n - 1))) + 1


def exponential_graph(n: int, k: int) -> MixingMatrix:
    """Round-k matrix of the one-peer exponential schedule.

    At round k every node sends to the peer ``2^(k mod m)`` positions ahead,
    so over m consecutive rounds information hops by 1, 2, 4, ... positions
    and reaches every node in logarithmically many rounds.
    """
    if n < 1:
        raise ValueError("need at least one node")
    hop = 2 ** (k % exponential_period(n))
    return _one_neighbor_matrix(n, hop)


def ring_graph(n: int) -> MixingMatrix:
    """Static directed ring: node i sends half its mass to node i + 1."""
    if n < 1:
        raise ValueError("need at least one node")
    return _one_neighbor_matrix(n, 1)


def complete_graph(n: int) -> MixingMatrix:
    """Uniform averaging matrix with every entry 1/n."""
    if n < 1:
        raise ValueError("need at least one node")
    return MixingMatrix(n, np.full((n, n), 1.0 / n))


@dataclass(frozen=True)
class GraphSchedule:
    """Periodic sequence of mixing matrices, one per communication round."""

    n: int
    kind: str
    period: int
    matrices: tuple[MixingMatrix, ...]

    def matrix_at(self, k: int) -> MixingMatrix:
        return self.matrices[k % self.period]

    def min_positive_weight(self) -> float:
        return min(float(m.weights[m.weights > 0].min()) for m in self.matrices)


def graph_schedule(kind: str, n: int, matrices=None) -> GraphSchedule:
    """Build a schedule from a generator name or an explicit matrix list.

    ``kind`` is one of ``ring``, ``exponential``, ``complete``, or
    ``explicit``; the latter takes ``matrices`` (dense arrays or
    MixingMatrix instances) and cycles through them.  Every matrix is
    validated once here so the engine can trust the schedule.
    """
    if kind == "ring":
        mats = (ring_graph(n),)
    elif kind == "complete":
        mats = (complete_graph(n),)
    elif kind == "exponential":
        mats = tuple(exponential_graph(n, k) for k in range(exponential_period(n)))
    elif kind == "explicit":
        if not matrices:
            raise ValueError("explicit schedule needs at least one matrix")
        mats = tuple(
            m if isinstance(m, MixingMatrix) else MixingMatrix(n, np.asarray(m, dtype=float))
            for m in matrices
        )
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    for m in mats:
        validate_column_stochastic(m)
    return GraphSchedule(n=n, kind=kind, period=len(mats), matrices=mats)


@dataclass(frozen=True)
class ConnectivityReport:
    is_b_connected: bool
    window: int
    diameter: int | None  # max shortest-path length over windows; None if disconnected


def _window_distances(n: int, adjacency: np.ndarray) -> np.ndarray:
    """All-pairs BFS hop counts on a directed adjacency matrix (-1 if unreachable)."""
    dist = np.full((n, n), -1, dtype=int)
    out_neighbors = [np.flatnonzero(adjacency[:, j]) for j in range(n)]
    for source in range(n):
        dist[source, source] = 0
        frontier = [source]
        hops = 0
        while frontier:
            hops += 1
            next_frontier = []
            for j in frontier:
                for i in out_neighbors[j]:
                    if dist[source, i] < 0:
                        dist[source, i] = hops
                        next_frontier.append(int(i))
            frontier = next_frontier
    return dist


def check_b_strong_connectivity(schedule: GraphSchedule, B: int) -> ConnectivityReport:
    """Check that every window of B consecutive rounds is strongly connected.

    The schedule is periodic, so examining lcm(period, B) / B consecutive
    windows covers every union graph that can ever occur.  The reported
    diameter is the worst shortest-path length over those windows, measured
    along the direction messages travel (edge j -> i when ``P[i, j] > 0``).
    """
    if B < 1:
        raise ValueError("window must be at least one round")
    n = schedule.n
    num_windows = math.lcm(schedule.period, B) // B
    connected = True
    diameter = 0
    for window in range(num_windows):
        union = np.zeros((n, n), dtype=bool)
        for k in range(window * B, (window + 1) * B):
            union |= schedule.matrix_at(k).weights > 0
        dist = _window_distances(n, union)
        if (dist < 0).any():
            connected = False
            break
        diameter = max(diameter, int(dist.max()))
    return ConnectivityReport(
        is_b_connected=connected,
        window=B,
        diameter=diameter if connected else None,
    )


@dataclass(frozen=True)
class SpectralConstants:
    """Constants controlling push-sum's geometric forgetting.

    ``window_contraction`` is how much disagreement mass one connectivity
    window is guaranteed to remove; ``contraction_rate`` spreads that over
    the window to a per-round rate in [0, 1); ``amplification_bound`` caps
    the transient overshoot before contraction takes hold (infinite on the
    boundary where the guarantee degenerates).
    """

    min_weight: float
    window_contraction: float
    contraction_rate: float
    amplification_bound: float


def spectral_constants(n: int, eps_min: float, B: int, diameter: int, d: int) -> SpectralConstants:
    """Derive contraction constants from graph parameters.

    Requires ``eps_min`` in (0, 1], a window-diameter product of at least one
    round, and ``n * eps_min**(diameter * B) <= 1``; outside that regime the
    guarantee is vacuous and InvalidRegime is raised.
    """
    if not 0 < eps_min <= 1:
        raise ValueError("minimal mixing weight must lie in (0, 1]")
    exponent = diameter * B
    if exponent < 1:
        raise ValueError("diameter * window must be at least 1")
    mass = n * eps_min**exponent
    if mass > 1 + 1e-15:
        raise InvalidRegime(
            f"n * eps_min^(diameter*B) = {mass:g} exceeds 1; contraction is not guaranteed"
        )
    lam = max(0.0, 1.0 - mass)
    rate = lam ** (1.0 / (exponent + 1))
    if lam > 0:
        amp = 2.0 * math.sqrt(d) * eps_min ** (-exponent) / lam ** ((exponent + 2) / (exponent + 1))
    else:
        amp = math.inf
    return SpectralConstants(
        min_weight=eps_min,
        window_contraction=lam,
        contraction_rate=rate,
        amplification_bound=amp,
    )


def spectral_report(
    schedule: GraphSchedule, d: int, B: int | None = None
) -> tuple[ConnectivityReport, SpectralConstants | None]:
    """Connectivity plus contraction constants for a schedule.

    ``B`` defaults to the schedule period, which is the natural window for
    the built-in generators.  Constants are None when the window check fails.
    """
    window = B if B is not None else schedule.period
    report = check_b_strong_connectivity(schedule, window)
    if not report.is_b_connected:
        return report, None
    constants = spectral_constants(
        schedule.n, schedule.min_positive_weight(), window, report.diameter, d
    )
    return report, constants
