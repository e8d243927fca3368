"""Cross-detector and ground-truth evaluation.

Three checks, none of which needs labels on the full data set:

* centroid-distance ratios against a k-means baseline: how far the detected
  outliers sit from their cluster centroid relative to the cluster radius;
* dual evaluation: do the suspicious users own the suspicious transactions
  (and vice versa) across the two graph views;
* membership of independently known bad actors in the top of a ranking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .features import FeatureMatrix
from .graphs import MappingError
from .kmeans import KMeansModel
from .ledger import TransactionRecord
from .ranking import AnomalyRanking

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OwnershipIndex:
    user_to_txs: dict[int, frozenset[str]]
    tx_to_users: dict[str, frozenset[int]]


@dataclass(frozen=True)
class DualEvalResult:
    a1: float
    a2: float
    m_de: float
    n_top: int
    m_top: int
    x_size: int  # |X_N|: transactions owned by the top-N users (uncapped)
    y_size: int  # |Y_M|: users owning the top-M transactions


@dataclass(frozen=True)
class GroundTruth:
    users: dict[str, str]  # user id (as written in the file) -> label
    txs: dict[str, str]


@dataclass(frozen=True)
class HitReport:
    hits: tuple[tuple[str, int], ...]  # (id, 1-based rank within top_n)
    top_n: int
    truth_size: int

    @property
    def hit_count(self) -> int:
        return len(self.hits)


def build_ownership(
    records: Iterable[TransactionRecord], user_map: dict[str, int]
) -> OwnershipIndex:
    """A user owns every transaction in which one of its addresses appears
    as an input or an output."""
    user_to_txs: dict[int, set[str]] = {}
    tx_to_users: dict[str, set[int]] = {}
    for rec in records:
        users = set()
        for addr, _ in rec.inputs + rec.outputs:
            try:
                users.add(user_map[addr])
            except KeyError:
                raise MappingError(f"address {addr!r} not in user map") from None
        tx_to_users[rec.tx_id] = users
        for u in users:
            user_to_txs.setdefault(u, set()).add(rec.tx_id)
    return OwnershipIndex(
        user_to_txs={u: frozenset(t) for u, t in user_to_txs.items()},
        tx_to_users={t: frozenset(u) for t, u in tx_to_users.items()},
    )


def dual_metric(a1: float, a2: float) -> float:
    return (a1 + a2) / 2.0


def dual_evaluation(
    user_ranking: AnomalyRanking,
    tx_ranking: AnomalyRanking,
    ownership: OwnershipIndex,
    n_top: int = 100,
    m_top: int = 100,
) -> DualEvalResult:
    """Overlap between each graph's top outliers and the entities they own.

    X_N is the set of transactions owned by the top-N users; A1 is the
    fraction of X_N found within the leading |X_N| entries of the
    transaction ranking.  Y_M and A2 are symmetric.  X_N is not capped;
    a single busy user can make it large, and its size is reported.
    """
    if n_top > len(user_ranking) or m_top > len(tx_ranking):
        raise ValueError("top-N/M exceed ranking lengths")
    x_n: set[str] = set()
    for u in user_ranking.top_ids(n_top):
        x_n |= ownership.user_to_txs.get(u, frozenset())
    if x_n:
        a1 = len(x_n & set(tx_ranking.top_ids(len(x_n)))) / len(x_n)
    else:
        log.warning("X_N is empty; A1 defined as 0")
        a1 = 0.0
    y_m: set[int] = set()
    for t in tx_ranking.top_ids(m_top):
        y_m |= ownership.tx_to_users.get(t, frozenset())
    if y_m:
        a2 = len(y_m & set(user_ranking.top_ids(len(y_m)))) / len(y_m)
    else:
        log.warning("Y_M is empty; A2 defined as 0")
        a2 = 0.0
    return DualEvalResult(
        a1=a1, a2=a2, m_de=dual_metric(a1, a2),
        n_top=n_top, m_top=m_top, x_size=len(x_n), y_size=len(y_m),
    )


def centroid_distance_ratios(
    model: KMeansModel,
    matrix: FeatureMatrix,
    ranking: AnomalyRanking,
    top_n: int,
) -> float:
    """Mean over the top-n outliers of ||x - centroid|| / max same-cluster
    distance.  Values near 1 mean the detections are the extreme points of
    their clusters."""
    if top_n <= 0:
        raise ValueError("top_n must be positive")
    if top_n > matrix.m:
        raise ValueError("top_n exceeds the number of scored entities")
    row_of = {ent: i for i, ent in enumerate(matrix.entity_ids)}
    X = matrix.values
    dist = np.linalg.norm(X - model.centroids[model.assignments], axis=1)
    max_per_cluster = np.zeros(model.k)
    np.maximum.at(max_per_cluster, model.assignments, dist)
    ratios = []
    for ent in ranking.top_ids(top_n):
        if ent not in row_of:
            raise ValueError(f"ranked entity {ent!r} not in the feature matrix")
        i = row_of[ent]
        denom = max_per_cluster[model.assignments[i]]
        ratios.append(dist[i] / denom if denom > 0 else 0.0)
    return float(np.mean(ratios))


def load_ground_truth(stream: Iterable[str]) -> GroundTruth:
    """Read ``kind(user|tx),id,label`` lines; blank and #-comment lines skipped."""
    users: dict[str, str] = {}
    txs: dict[str, str] = {}
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split(",", 2)
        if len(parts) != 3 or parts[0] not in ("user", "tx") or not parts[1]:
            raise ValueError(f"ground-truth line {line_no}: malformed {line!r}")
        kind, ident, label = parts
        (users if kind == "user" else txs)[ident] = label
    return GroundTruth(users=users, txs=txs)


def serialize_ground_truth(truth: GroundTruth) -> str:
    lines = [f"user,{i},{label}" for i, label in truth.users.items()]
    lines += [f"tx,{i},{label}" for i, label in truth.txs.items()]
    return "\n".join(lines) + ("\n" if lines else "")


def ground_truth_hits(
    ranking: AnomalyRanking, truth_ids: Sequence[str], top_n: int
) -> HitReport:
    """Which known-bad ids appear in the top_n of the ranking, and where.

    Ranking entity ids are compared by string form, matching the on-disk
    ground-truth format.
    """
    if top_n > len(ranking):
        raise ValueError("top_n exceeds ranking length")
    wanted = set(truth_ids)
    hits = tuple(
        (str(ent), rank)
        for rank, (ent, _) in enumerate(ranking.entries[:top_n], start=1)
        if str(ent) in wanted
    )
    return HitReport(hits=hits, top_n=top_n, truth_size=len(wanted))
