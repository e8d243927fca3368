"""Per-node feature extraction and the signed-log / z-score normalization.

Canonical features (same names on both graphs, computed against that
graph's own edges):

    in_degree            number of incoming edges
    out_degree           number of outgoing edges
    unique_in_degree     number of distinct incoming counterparts
    unique_out_degree    number of distinct outgoing counterparts
    clustering_coefficient   local coefficient on the undirected simple projection
    avg_in_value         mean incoming edge amount in BTC (0 if none)
    avg_out_value        mean outgoing edge amount in BTC (0 if none)
    avg_in_interval      mean gap between consecutive incoming timestamps (0 if < 2)
    avg_out_interval     likewise for outgoing edges
    mean_time_interval   mean of the two interval features
    balance              received minus sent, in BTC
    creation_date        earliest incident edge timestamp (0 if isolated)
    active_duration      latest minus earliest incident timestamp

plus ``total_amount`` (transaction graph only): the sum of the record's
output amounts in BTC.

On the user graph ``balance`` comes from the ledger-level totals carried by
UserGraph, so coinbase receipts and self-change are counted even though the
corresponding edges are pruned; on synthetic fee-free ledgers the balances
then sum exactly to the coinbase total.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .graphs import TransactionGraph, UserGraph
from .ledger import SATOSHI_PER_BTC, TransactionRecord

EDGE_FEATURES = (
    "in_degree",
    "out_degree",
    "unique_in_degree",
    "unique_out_degree",
    "clustering_coefficient",
    "avg_in_value",
    "avg_out_value",
    "avg_in_interval",
    "avg_out_interval",
    "mean_time_interval",
    "balance",
    "creation_date",
    "active_duration",
)
TRANSACTION_ONLY_FEATURES = ("total_amount",)


class ConsistencyError(Exception):
    """Graph and ledger disagree (e.g. a graph node has no record)."""


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    graph_kind: str  # "user" | "transaction"

    def __post_init__(self):
        if not self.names:
            raise ValueError("schema must name at least one feature")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")
        if self.graph_kind not in ("user", "transaction"):
            raise ValueError(f"unknown graph kind {self.graph_kind!r}")


@dataclass(frozen=True)
class FeatureMatrix:
    entity_ids: tuple
    values: np.ndarray  # m x n float64
    schema: FeatureSchema
    normalized: bool = False

    def __post_init__(self):
        if self.values.shape != (len(self.entity_ids), len(self.schema.names)):
            raise ValueError("values shape does not match ids/schema")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def default_schema(graph_kind: str) -> FeatureSchema:
    """The runtime feature subsets: six user features, three transaction ones."""
    if graph_kind == "user":
        return FeatureSchema(
            names=(
                "in_degree",
                "out_degree",
                "avg_in_value",
                "avg_out_value",
                "mean_time_interval",
                "clustering_coefficient",
            ),
            graph_kind="user",
        )
    if graph_kind == "transaction":
        return FeatureSchema(
            names=("in_degree", "out_degree", "total_amount"),
            graph_kind="transaction",
        )
    raise ValueError(f"unknown graph kind {graph_kind!r}")


def _edge_feature_table(
    node_ids: Sequence, edges: Iterable[tuple], wanted: set[str]
) -> dict[str, np.ndarray]:
    """Compute requested canonical features from (src, dst, amount, ts) edges."""
    index = {node: i for i, node in enumerate(node_ids)}
    m = len(node_ids)

    in_deg = np.zeros(m)
    out_deg = np.zeros(m)
    in_amount = np.zeros(m)
    out_amount = np.zeros(m)
    in_ts: list[list[int]] = [[] for _ in range(m)]
    out_ts: list[list[int]] = [[] for _ in range(m)]
    in_peers: list[set] = [set() for _ in range(m)]
    out_peers: list[set] = [set() for _ in range(m)]
    neighbors: list[set] = [set() for _ in range(m)]

    need_cc = "clustering_coefficient" in wanted
    need_intervals = wanted & {"avg_in_interval", "avg_out_interval", "mean_time_interval"}

    for src, dst, amount, ts, *_ in edges:
        s, d = index[src], index[dst]
        out_deg[s] += 1
        in_deg[d] += 1
        out_amount[s] += amount
        in_amount[d] += amount
        out_peers[s].add(d)
        in_peers[d].add(s)
        if need_intervals:
            out_ts[s].append(ts)
            in_ts[d].append(ts)
        if need_cc and s != d:
            neighbors[s].add(d)
            neighbors[d].add(s)

    table: dict[str, np.ndarray] = {}
    if "in_degree" in wanted:
        table["in_degree"] = in_deg
    if "out_degree" in wanted:
        table["out_degree"] = out_deg
    if "unique_in_degree" in wanted:
        table["unique_in_degree"] = np.array([len(p) for p in in_peers], dtype=float)
    if "unique_out_degree" in wanted:
        table["unique_out_degree"] = np.array([len(p) for p in out_peers], dtype=float)
    if "avg_in_value" in wanted:
        table["avg_in_value"] = np.divide(
            in_amount / SATOSHI_PER_BTC, in_deg, out=np.zeros(m), where=in_deg > 0
        )
    if "avg_out_value" in wanted:
        table["avg_out_value"] = np.divide(
            out_amount / SATOSHI_PER_BTC, out_deg, out=np.zeros(m), where=out_deg > 0
        )
    if "balance" in wanted:
        table["balance"] = (in_amount - out_amount) / SATOSHI_PER_BTC

    if need_intervals:
        def mean_gap(ts_list: list[int]) -> float:
            if len(ts_list) < 2:
                return 0.0
            ts_sorted = sorted(ts_list)
            return (ts_sorted[-1] - ts_sorted[0]) / (len(ts_sorted) - 1)

        gap_in = np.array([mean_gap(t) for t in in_ts])
        gap_out = np.array([mean_gap(t) for t in out_ts])
        if "avg_in_interval" in wanted:
            table["avg_in_interval"] = gap_in
        if "avg_out_interval" in wanted:
            table["avg_out_interval"] = gap_out
        if "mean_time_interval" in wanted:
            table["mean_time_interval"] = 0.5 * (gap_in + gap_out)

    if wanted & {"creation_date", "active_duration"}:
        first = np.zeros(m)
        last = np.zeros(m)
        seen = np.zeros(m, dtype=bool)
        for src, dst, amount, ts, *_ in edges:
            for node in (index[src], index[dst]):
                if not seen[node]:
                    first[node] = last[node] = ts
                    seen[node] = True
                else:
                    first[node] = min(first[node], ts)
                    last[node] = max(last[node], ts)
        if "creation_date" in wanted:
            table["creation_date"] = first
        if "active_duration" in wanted:
            table["active_duration"] = last - first

    if need_cc:
        cc = np.zeros(m)
        for i in range(m):
            nbrs = neighbors[i]
            d = len(nbrs)
            if d < 2:
                continue
            links = 0
            for v in nbrs:
                # iterate the smaller set to bound hub cost
                small, big = (neighbors[v], nbrs) if len(neighbors[v]) < d else (nbrs, neighbors[v])
                links += sum(1 for w in small if w in big and w != i and w != v)
            cc[i] = links / (d * (d - 1))  # each link counted twice
        table["clustering_coefficient"] = cc

    return table


def _assemble(
    node_ids: Sequence, schema: FeatureSchema, table: dict[str, np.ndarray]
) -> FeatureMatrix:
    missing = [n for n in schema.names if n not in table]
    if missing:
        raise ValueError(f"unknown feature(s) for this graph: {missing}")
    values = np.column_stack([table[n] for n in schema.names]) if node_ids else np.zeros(
        (0, len(schema.names))
    )
    return FeatureMatrix(entity_ids=tuple(node_ids), values=values, schema=schema)


def extract_user_features(
    graph: UserGraph, schema: FeatureSchema | None = None
) -> FeatureMatrix:
    """One row per user, rows ordered by user id."""
    schema = schema or default_schema("user")
    if schema.graph_kind != "user":
        raise ValueError("schema is not a user-graph schema")
    node_ids = sorted(graph.nodes)
    wanted = set(schema.names)
    table = _edge_feature_table(node_ids, graph.edges, wanted)
    if "balance" in wanted:
        table["balance"] = np.array(
            [graph.balance(u) / SATOSHI_PER_BTC for u in node_ids]
        )
    return _assemble(node_ids, schema, table)


def extract_transaction_features(
    graph: TransactionGraph,
    records: Sequence[TransactionRecord],
    schema: FeatureSchema | None = None,
) -> FeatureMatrix:
    """One row per transaction, rows in ledger order."""
    schema = schema or default_schema("transaction")
    if schema.graph_kind != "transaction":
        raise ValueError("schema is not a transaction-graph schema")
    by_id = {rec.tx_id: rec for rec in records}
    missing = [t for t in graph.nodes if t not in by_id]
    if missing:
        raise ConsistencyError(f"graph transactions missing from records: {missing[:5]}")
    wanted = set(schema.names)
    table = _edge_feature_table(graph.nodes, graph.edges, wanted - {"total_amount"})
    if "total_amount" in wanted:
        table["total_amount"] = np.array(
            [sum(v for _, v in by_id[t].outputs) / SATOSHI_PER_BTC for t in graph.nodes]
        )
    return _assemble(graph.nodes, schema, table)


def signed_log(x: np.ndarray) -> np.ndarray:
    """sign(x) * ln(1 + |x|): odd, strictly monotone, defined at 0 and below."""
    return np.sign(x) * np.log1p(np.abs(x))


def normalize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Signed-log transform then per-column z-score with population std.

    Zero-variance columns become all-zero.  Rejects a matrix that is
    already normalized.
    """
    if matrix.normalized:
        raise ValueError("matrix is already normalized")
    logged = signed_log(matrix.values)
    # constancy decided exactly on the values, not on the std: the mean of a
    # constant column rounds a ulp off and would z-score the noise up to O(1)
    constant = logged.max(axis=0) == logged.min(axis=0)
    mean = logged.mean(axis=0)
    std = logged.std(axis=0)  # population (1/m), matching the MLE covariance
    safe_std = np.where(constant | (std == 0), 1.0, std)
    values = np.where(constant | (std == 0), 0.0, (logged - mean) / safe_std)
    return replace(matrix, values=values, normalized=True)


def write_feature_csv(matrix: FeatureMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entity_id," + ",".join(matrix.schema.names) + "\n")
        for ent, row in zip(matrix.entity_ids, matrix.values):
            fh.write(str(ent) + "," + ",".join(repr(v) for v in row) + "\n")
