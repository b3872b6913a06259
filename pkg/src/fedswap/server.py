"""Server round loop: schedule branch, aggregation, exchange, redistribution.

The server alternates between two actions on a fixed period T: at rounds
divisible by T it aggregates uploads into a global decoder via a weighted
average; at every other round it clusters the uploads by cosine distance
and redistributes them according to the configured exchange strategy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clients import (
    ClientState,
    evaluate,
    local_train,
    local_train_fedprox,
)
from .clustering import build_distance_matrix, cluster_to_two
from .errors import ConfigInvalid, FedswapError
from .exchange import (
    ExchangeHistory,
    ExchangePlan,
    build_clustered_plan,
    build_random_plan,
    build_round_robin_plan,
)
from .params import AggregationWeights, ParamVector, weighted_average

logger = logging.getLogger(__name__)

__all__ = [
    "AGGREGATE",
    "EXCHANGE",
    "WARMUP",
    "STRATEGIES",
    "ServerConfig",
    "ServerState",
    "RoundRecord",
    "derive_seed",
    "schedule_decision",
    "run_round",
    "run_simulation",
]

AGGREGATE = "aggregate"
EXCHANGE = "exchange"
WARMUP = "warmup"

STRATEGIES = ("clustered", "round_robin", "random", "fedavg_only", "fedprox")

# purpose tags for seed derivation; changing these changes every derived stream
_PURPOSE_INIT = 0
_PURPOSE_CONCEPT = 1
_PURPOSE_DOMAIN = 2
_PURPOSE_BACKBONE = 3
_PURPOSE_TRAIN = 4
_PURPOSE_EXCHANGE = 5
_PURPOSE_WARMUP = 6

PURPOSES = {
    "init": _PURPOSE_INIT,
    "concept": _PURPOSE_CONCEPT,
    "domain": _PURPOSE_DOMAIN,
    "backbone": _PURPOSE_BACKBONE,
    "train": _PURPOSE_TRAIN,
    "exchange": _PURPOSE_EXCHANGE,
    "warmup": _PURPOSE_WARMUP,
}


def derive_seed(master_seed: int, *path: int) -> int:
    """Stable per-purpose seed: SeedSequence entropy [master, *path].

    Every random draw in a simulation flows through here, so a run is a pure
    function of master_seed and the (purpose, round, client) path.
    """
    entries = [int(master_seed)] + [int(p) for p in path]
    if any(e < 0 for e in entries):
        raise ConfigInvalid(f"seed path entries must be non-negative, got {entries}")
    ss = np.random.SeedSequence(entries)
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ServerConfig:
    """Protocol settings for one simulation."""

    rounds: int
    aggregation_frequency: int
    strategy: str = "clustered"
    warmup_rounds: int = 5
    master_seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigInvalid(f"rounds must be >= 1, got {self.rounds}")
        if self.aggregation_frequency < 1:
            raise ConfigInvalid(
                f"aggregation_frequency must be >= 1, got {self.aggregation_frequency}"
            )
        if self.rounds % self.aggregation_frequency != 0:
            raise ConfigInvalid(
                f"rounds ({self.rounds}) must be divisible by aggregation_frequency "
                f"({self.aggregation_frequency}) so the final round aggregates"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigInvalid(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        if self.strategy in ("fedavg_only", "fedprox") and self.aggregation_frequency != 1:
            raise ConfigInvalid(
                f"strategy {self.strategy!r} aggregates every round; "
                f"set aggregation_frequency=1"
            )
        if self.warmup_rounds < 0:
            raise ConfigInvalid(f"warmup_rounds must be >= 0, got {self.warmup_rounds}")
        if self.master_seed < 0:
            raise ConfigInvalid(f"master_seed must be non-negative, got {self.master_seed}")


@dataclass
class RoundRecord:
    """One row of the simulation trace; metrics are filled after redistribution.

    Warm-up rows carry non-positive round indices and decision "warmup".
    global_eval marks rows whose metrics were computed on the shared global
    decoder rather than on each client's own (possibly exchanged) decoder.
    """

    round_index: int
    decision: str
    global_eval: bool
    strategy_tag: Optional[str] = None
    assignment: Optional[tuple[int, ...]] = None
    plan: Optional[tuple[int, ...]] = None
    domain_losses: tuple[float, ...] = ()
    domain_accuracies: Optional[tuple[float, ...]] = None
    avg_loss: float = float("nan")
    std_loss: float = float("nan")


@dataclass
class ServerState:
    current_round: int = 0
    latest_global_decoder: Optional[ParamVector] = None
    exchange_history: ExchangeHistory = field(default_factory=ExchangeHistory)
    trace: list[RoundRecord] = field(default_factory=list)


def schedule_decision(r: int, T: int) -> str:
    """Aggregate iff the 1-based round index is a multiple of T."""
    if r < 1 or T < 1:
        raise ConfigInvalid(f"round index and frequency must be >= 1, got r={r}, T={T}")
    return AGGREGATE if r % T == 0 else EXCHANGE


def _build_plan(state: ServerState, cfg: ServerConfig, n: int, r: int) -> ExchangePlan:
    if cfg.strategy == "round_robin":
        return build_round_robin_plan(n, r)
    if cfg.strategy == "random":
        return build_random_plan(n, derive_seed(cfg.master_seed, _PURPOSE_EXCHANGE, r))
    raise ConfigInvalid(f"strategy {cfg.strategy!r} never reaches an exchange round")


def run_round(
    state: ServerState,
    uploads: Sequence[ParamVector],
    weights: AggregationWeights,
    cfg: ServerConfig,
) -> list[ParamVector]:
    """Process one protocol round's uploads; returns the per-client deliveries.

    Appends a RoundRecord (metrics unfilled) to state.trace. On aggregation
    every client receives the same weighted average and the global decoder is
    updated; on exchange the uploads are clustered, a plan is built per the
    configured strategy, and client i receives uploads[plan.assignment[i]].
    """
    r = state.current_round
    n = len(uploads)
    if n != len(weights):
        raise ConfigInvalid(
            f"round {r}: got {n} uploads for {len(weights)} aggregation weights"
        )
    decision = schedule_decision(r, cfg.aggregation_frequency)
    try:
        if decision == AGGREGATE:
            global_decoder = weighted_average(uploads, weights)
            state.latest_global_decoder = global_decoder
            record = RoundRecord(
                round_index=r,
                decision=AGGREGATE,
                global_eval=True,
                strategy_tag=cfg.strategy,
            )
            state.trace.append(record)
            return [global_decoder] * n

        assignment = cluster_to_two(build_distance_matrix(uploads))
        if cfg.strategy == "clustered":
            plan = build_clustered_plan(
                assignment,
                state.exchange_history,
                derive_seed(cfg.master_seed, _PURPOSE_EXCHANGE, r),
            )
        else:
            plan = _build_plan(state, cfg, n, r)
        state.exchange_history = ExchangeHistory(last_assignment=plan.assignment)
        record = RoundRecord(
            round_index=r,
            decision=EXCHANGE,
            global_eval=False,
            strategy_tag=plan.strategy_tag,
            assignment=assignment.index_list,
            plan=plan.assignment,
        )
        state.trace.append(record)
        return [uploads[plan.assignment[i]] for i in range(n)]
    except FedswapError as exc:
        if str(exc).startswith(f"round {r}:"):
            raise
        raise type(exc)(f"round {r}: {exc}") from exc


def _train_one(
    client: ClientState, cfg: ServerConfig, seed: int
) -> ParamVector:
    start = client.decoder
    if cfg.strategy == "fedprox":
        return local_train_fedprox(start, client, start, client.config.prox_mu, seed)
    return local_train(start, client, seed)


def _fill_metrics(record: RoundRecord, clients: Sequence[ClientState],
                  decoders: Sequence[ParamVector]) -> None:
    results = [evaluate(dec, cl) for dec, cl in zip(decoders, clients)]
    losses = np.array([res.loss for res in results])
    record.domain_losses = tuple(float(v) for v in losses)
    record.avg_loss = float(np.mean(losses))
    record.std_loss = float(np.std(losses))
    if all(res.accuracy is not None for res in results):
        record.domain_accuracies = tuple(float(res.accuracy) for res in results)


def run_simulation(
    cfg: ServerConfig, clients: Sequence[ClientState]
) -> tuple[RoundRecord, ...]:
    """Warm-up then R protocol rounds; returns the trace.

    Every client starts from one shared randomly initialized decoder. Each
    warm-up round trains locally and aggregates, so clients enter round 1
    with identical decoders. Protocol rounds follow the schedule branch.
    The whole trace is a pure function of cfg.master_seed.
    """
    if len(clients) < 2:
        raise ConfigInvalid(f"need at least 2 clients, got {len(clients)}")
    dims = {c.manifest.dim for c in clients}
    if len(dims) != 1:
        raise ConfigInvalid(f"clients disagree on decoder dimension: {sorted(dims)}")
    dim = dims.pop()

    init_rng = np.random.default_rng(derive_seed(cfg.master_seed, _PURPOSE_INIT))
    initial = ParamVector(init_rng.normal(0.0, 0.1, size=dim))
    for client in clients:
        client.decoder = initial
        client.received_from = None

    weights = AggregationWeights.from_sizes([c.train_size for c in clients])
    state = ServerState()

    for w in range(1, cfg.warmup_rounds + 1):
        uploads = [
            _train_one(c, cfg, derive_seed(cfg.master_seed, _PURPOSE_WARMUP, w, i))
            for i, c in enumerate(clients)
        ]
        global_decoder = weighted_average(uploads, weights)
        state.latest_global_decoder = global_decoder
        for client in clients:
            client.decoder = global_decoder
            client.received_from = None
        record = RoundRecord(
            round_index=w - cfg.warmup_rounds,
            decision=WARMUP,
            global_eval=True,
            strategy_tag=cfg.strategy,
        )
        _fill_metrics(record, clients, [global_decoder] * len(clients))
        state.trace.append(record)

    for r in range(1, cfg.rounds + 1):
        state.current_round = r
        uploads = [
            _train_one(c, cfg, derive_seed(cfg.master_seed, _PURPOSE_TRAIN, r, i))
            for i, c in enumerate(clients)
        ]
        deliveries = run_round(state, uploads, weights, cfg)
        record = state.trace[-1]
        for i, client in enumerate(clients):
            client.decoder = deliveries[i]
            client.received_from = record.plan[i] if record.plan is not None else None
        _fill_metrics(record, clients, deliveries)

    return tuple(state.trace)
