"""The two dual graph views of a ledger: users as nodes, transactions as nodes.

The user graph keeps parallel edges: one edge per transaction per distinct
(sender user, receiver user) pair, carrying the amount the receiver took out
of that transaction.  Self-loops (change returning to the sender) are
dropped.  The transaction graph connects a transaction to the earlier
transactions whose outputs it consumes; output-input matching is a
per-address FIFO over unspent amounts, which makes construction
deterministic and the result acyclic for timestamp-ordered ledgers.
"""

from __future__ import annotations

import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .ledger import TransactionRecord

log = logging.getLogger(__name__)


class MappingError(Exception):
    """An address in the ledger is missing from the user map."""


class UserEdge(NamedTuple):
    sender: int
    receiver: int
    amount: int  # satoshi
    timestamp: int
    tx_id: str


class TxEdge(NamedTuple):
    funding: str
    spending: str
    amount: int  # satoshi
    timestamp: int  # timestamp of the spending transaction


@dataclass(frozen=True)
class UserGraph:
    nodes: frozenset[int]
    edges: tuple[UserEdge, ...]
    # Ledger-level per-user satoshi totals (include coinbase receipts and
    # self-change, which the pruned edge multiset cannot see).
    received: dict[int, int] = field(default_factory=dict)
    sent: dict[int, int] = field(default_factory=dict)

    def balance(self, user: int) -> int:
        return self.received.get(user, 0) - self.sent.get(user, 0)


@dataclass(frozen=True)
class TransactionGraph:
    nodes: tuple[str, ...]  # record order
    edges: tuple[TxEdge, ...]
    dangling_inputs: int = 0


def build_user_graph(
    records: Iterable[TransactionRecord], user_map: dict[str, int]
) -> UserGraph:
    """One edge per (sender user, receiver user) pair per transaction.

    The edge amount is the total the receiver user collects from that
    transaction; with several distinct sender users each of them carries a
    parallel edge with the receiver's full amount (no pro-rata split).
    """
    nodes: set[int] = set()
    edges: list[UserEdge] = []
    received: dict[int, int] = defaultdict(int)
    sent: dict[int, int] = defaultdict(int)

    def user_of(addr: str) -> int:
        try:
            return user_map[addr]
        except KeyError:
            raise MappingError(f"address {addr!r} not in user map") from None

    for rec in records:
        senders: list[int] = []
        for addr, amount in rec.inputs:
            uid = user_of(addr)
            if uid not in senders:
                senders.append(uid)
            sent[uid] += amount
            nodes.add(uid)
        receiver_amounts: dict[int, int] = {}
        for addr, amount in rec.outputs:
            uid = user_of(addr)
            receiver_amounts[uid] = receiver_amounts.get(uid, 0) + amount
            received[uid] += amount
            nodes.add(uid)
        for s in senders:
            for r, amount in receiver_amounts.items():
                if s != r:
                    edges.append(UserEdge(s, r, amount, rec.timestamp, rec.tx_id))
    return UserGraph(
        nodes=frozenset(nodes),
        edges=tuple(edges),
        received=dict(received),
        sent=dict(sent),
    )


def build_transaction_graph(records: Iterable[TransactionRecord]) -> TransactionGraph:
    """Connect funding transactions to the spenders of their outputs.

    Each input (address, amount) consumes that address's unspent outputs in
    FIFO order, splitting across several funding transactions when needed.
    Flows from the same funding transaction into the same spender are summed
    into a single edge.  Inputs with no unspent cover are dropped with a
    warning (coinbase-funded or truncated history).
    """
    nodes: list[str] = []
    # address -> deque of [remaining_satoshi, funding_tx_id]
    unspent: dict[str, deque[list]] = defaultdict(deque)
    flows: dict[tuple[str, str], int] = {}
    spend_ts: dict[str, int] = {}
    dangling = 0

    for rec in records:
        nodes.append(rec.tx_id)
        for addr, amount in rec.inputs:
            need = amount
            queue = unspent[addr]
            while need > 0 and queue:
                entry = queue[0]
                take = min(need, entry[0])
                key = (entry[1], rec.tx_id)
                flows[key] = flows.get(key, 0) + take
                spend_ts[rec.tx_id] = rec.timestamp
                entry[0] -= take
                need -= take
                if entry[0] == 0:
                    queue.popleft()
            if need > 0:
                dangling += 1
        for addr, amount in rec.outputs:
            if amount > 0:
                unspent[addr].append([amount, rec.tx_id])

    if dangling:
        log.warning("%d input(s) had no unspent output to consume", dangling)
    edges = tuple(
        TxEdge(src, dst, amount, spend_ts[dst])
        for (src, dst), amount in flows.items()
    )
    return TransactionGraph(nodes=tuple(nodes), edges=edges, dangling_inputs=dangling)


def write_edge_list(edges: Iterable[UserEdge | TxEdge], path) -> None:
    """Dump edges as ``src,dst,amount,timestamp`` lines for external inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in edges:
            fh.write(f"{e[0]},{e[1]},{e[2]},{e[3]}\n")
