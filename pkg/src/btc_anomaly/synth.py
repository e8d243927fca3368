"""Deterministic synthetic ledgers with planted anomalies.

This is the test oracle for the whole pipeline: every planted anomaly is
recorded in the returned ground truth, generation is byte-deterministic per
seed, timestamps are strictly increasing, and spending is fee-free so user
balances sum exactly to the minted coinbase total.

Motifs:

* funnel theft: one transaction drains many previously funded addresses
  (each backed by a distinct earlier transaction) into a single sink
  address, so the sink transaction has an extreme in-degree and total
  amount, and the sink's owner an extreme user-graph in-degree;
* burst sender: a user fires a rapid chain of small payments;
* dormant user: funded early, idle for most of the stream, then suddenly
  active.

Funnel sizes and amounts are spread over a wide range on purpose: a pile of
near-identical anomalies forms its own tight cluster, which a one-class SVM
can legitimately wrap instead of flagging.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import GroundTruth, serialize_ground_truth
from .ledger import TransactionRecord, serialize_ledger, serialize_user_map

SATOSHI = 10**8
START_TS = 1_300_000_000


@dataclass(frozen=True)
class SynthConfig:
    user_count: int = 500
    tx_count: int = 10_000
    seed: int = 0
    funnel_count: int = 0
    funnel_sources_min: int = 55  # distinct funding transactions per funnel, lower bound
    funnel_sources_max: int = 220
    burst_count: int = 0
    burst_length: int = 30
    dormant_count: int = 0
    dormant_run: int = 5
    coinbase_rate: float = 0.08
    amount_log_mean: float = 0.7  # ln BTC; median ~2 BTC coinbases
    amount_log_sigma: float = 1.0
    gap_log_mean: float = 4.1  # ln seconds; median ~60 s between transactions
    gap_log_sigma: float = 0.8

    def __post_init__(self):
        if self.user_count <= 0 or self.tx_count <= 0:
            raise ValueError("counts must be positive")
        planted_txs = (
            self.funnel_count
            + self.burst_count * (self.burst_length + 1)
            + self.dormant_count * (self.dormant_run + 1)
        )
        if planted_txs >= self.tx_count:
            raise ValueError("more planted anomaly transactions than transactions")
        if self.funnel_count and self.funnel_sources_min < 1:
            raise ValueError("funnels need at least one source")
        anomalous_users = self.funnel_count + self.burst_count + self.dormant_count
        if anomalous_users > self.user_count:
            raise ValueError("more anomalous users than users")


class _Wallets:
    """Per-address FIFO queues of unspent outputs, mirroring the matcher."""

    def __init__(self):
        self.queues: dict[str, deque] = {}
        self.funded: list[str] = []  # addresses with (possibly stale) liquidity

    def credit(self, addr: str, amount: int, tx_id: str) -> None:
        q = self.queues.get(addr)
        if q is None:
            q = self.queues[addr] = deque()
        if not q:
            self.funded.append(addr)
        q.append((amount, tx_id))

    def pop_front(self, addr: str) -> tuple[int, str]:
        return self.queues[addr].popleft()

    def pick_funded(self, rng: np.random.Generator) -> str | None:
        while self.funded:
            idx = int(rng.integers(len(self.funded)))
            addr = self.funded[idx]
            if self.queues[addr]:
                return addr
            self.funded[idx] = self.funded[-1]
            self.funded.pop()
        return None


def generate(
    config: SynthConfig,
) -> tuple[list[TransactionRecord], dict[str, int], GroundTruth]:
    rng = np.random.default_rng(config.seed)

    addr_count = rng.integers(1, 3, size=config.user_count)
    user_map: dict[str, int] = {}
    addrs_of: list[list[str]] = []
    for uid in range(config.user_count):
        addrs = [f"u{uid}a{j}" for j in range(int(addr_count[uid]))]
        for a in addrs:
            user_map[a] = uid
        addrs_of.append(addrs)

    special = rng.choice(
        config.user_count,
        size=config.funnel_count + config.burst_count + config.dormant_count,
        replace=False,
    )
    thieves = [int(u) for u in special[: config.funnel_count]]
    bursters = [
        int(u)
        for u in special[config.funnel_count : config.funnel_count + config.burst_count]
    ]
    dormants = [int(u) for u in special[config.funnel_count + config.burst_count :]]

    # Slot plan: background unless a motif claims the position.
    plan: dict[int, tuple] = {}

    def claim(pos: int, intent: tuple) -> None:
        while pos in plan:
            pos += 1
        plan[pos] = intent

    lo = config.tx_count // 2
    for i, thief in enumerate(thieves):
        span = max(config.tx_count - lo - 1, 1)
        claim(lo + (i * span) // max(len(thieves), 1), ("funnel", i, thief))
    for i, user in enumerate(bursters):
        start = config.tx_count // 3 + (
            i * max(config.tx_count // 3, 1)
        ) // max(len(bursters), 1)
        claim(start, ("burst_fund", user))
        for j in range(config.burst_length):
            claim(start + 1 + j, ("burst_tx", user))
    for i, user in enumerate(dormants):
        # Early funding plus one early send so the user-graph sees the long
        # idle stretch; reactivation late in the stream.
        claim(2 + 2 * i, ("dormant_fund", user))
        claim(3 + 2 * i, ("dormant_tx", user))
        start = int(config.tx_count * 0.9) + i * (config.dormant_run + 1)
        claim(start, ("dormant_fund", user))
        for j in range(config.dormant_run):
            claim(start + 1 + j, ("dormant_tx", user))

    wallets = _Wallets()
    records: list[TransactionRecord] = []
    truth_users: dict[str, str] = {}
    truth_txs: dict[str, str] = {}
    ts = START_TS
    funnel_sizes = np.exp(
        rng.uniform(
            np.log(config.funnel_sources_min),
            np.log(max(config.funnel_sources_max, config.funnel_sources_min + 1)),
            size=max(config.funnel_count, 1),
        )
    ).astype(int)

    def lognormal_satoshi(mean: float, sigma: float) -> int:
        return max(int(rng.lognormal(mean, sigma) * SATOSHI), 1)

    def random_addr(uid: int) -> str:
        addrs = addrs_of[uid]
        return addrs[int(rng.integers(len(addrs)))] if len(addrs) > 1 else addrs[0]

    def next_ts(gap: int | None = None) -> int:
        nonlocal ts
        if gap is None:
            gap = int(rng.lognormal(config.gap_log_mean, config.gap_log_sigma)) + 1
        ts += max(gap, 1)
        return ts

    def emit(tx_id: str, when: int, inputs, outputs) -> None:
        records.append(
            TransactionRecord(
                tx_id=tx_id, timestamp=when, inputs=tuple(inputs), outputs=tuple(outputs)
            )
        )
        for addr, amount in outputs:
            if amount > 0:
                wallets.credit(addr, amount, tx_id)

    def coinbase(tx_id: str, when: int, uid: int | None = None, amount: int | None = None):
        uid = int(rng.integers(config.user_count)) if uid is None else uid
        amount = amount or lognormal_satoshi(config.amount_log_mean, config.amount_log_sigma)
        emit(tx_id, when, (), [(random_addr(uid), amount)])

    def background(tx_id: str, when: int) -> None:
        addr = wallets.pick_funded(rng)
        if addr is None or rng.random() < config.coinbase_rate:
            coinbase(tx_id, when)
            return
        sender = user_map[addr]
        amount, _ = wallets.pop_front(addr)
        receiver = int(rng.integers(config.user_count))
        if receiver == sender:
            receiver = (receiver + 1) % config.user_count
        r_amt = max(int(amount * rng.uniform(0.1, 0.9)), 1)
        outputs = [(random_addr(receiver), r_amt)]
        if amount - r_amt > 0:
            outputs.append((addr, amount - r_amt))
        emit(tx_id, when, [(addr, amount)], outputs)

    def funnel(tx_id: str, when: int, idx: int, thief: int) -> None:
        target = int(funnel_sizes[idx])
        order = rng.permutation(len(wallets.funded))
        inputs = []
        seen_txs: set[str] = set()
        total = 0
        for pos in order:
            addr = wallets.funded[pos]
            q = wallets.queues[addr]
            if not q or user_map[addr] == thief:
                continue
            amount, funding_tx = q[0]
            if funding_tx in seen_txs:
                continue
            q.popleft()
            seen_txs.add(funding_tx)
            inputs.append((addr, amount))
            total += amount
            if len(inputs) >= target:
                break
        if len(inputs) < min(target, config.funnel_sources_min):
            raise RuntimeError(
                f"not enough distinct funded sources for funnel {idx} "
                f"(wanted {target}, found {len(inputs)})"
            )
        sink = addrs_of[thief][0]
        emit(tx_id, when, inputs, [(sink, total)])
        truth_txs[tx_id] = "funnel_theft"
        truth_users[str(thief)] = "funnel_theft"

    def fund_user(tx_id: str, when: int, user: int) -> None:
        amount = lognormal_satoshi(config.amount_log_mean + 1.0, 0.5)
        coinbase(tx_id, when, uid=user, amount=amount)

    def chained_send(tx_id: str, when: int, user: int, label: str) -> None:
        addr = None
        for a in addrs_of[user]:
            if wallets.queues.get(a):
                addr = a
                break
        if addr is None:
            coinbase(tx_id, when, uid=user)
            return
        amount, _ = wallets.pop_front(addr)
        receiver = int(rng.integers(config.user_count))
        if receiver == user:
            receiver = (receiver + 1) % config.user_count
        send = max(amount // 20, 1)
        outputs = [(random_addr(receiver), min(send, amount))]
        if amount - send > 0:
            outputs.append((addr, amount - send))
        emit(tx_id, when, [(addr, amount)], outputs)
        truth_users[str(user)] = label

    for pos in range(config.tx_count):
        tx_id = f"tx{pos:07d}"
        intent = plan.get(pos, ("background",))
        kind = intent[0]
        if kind == "background":
            background(tx_id, next_ts())
        elif kind == "funnel":
            funnel(tx_id, next_ts(), intent[1], intent[2])
        elif kind == "burst_fund":
            fund_user(tx_id, next_ts(), intent[1])
        elif kind == "burst_tx":
            chained_send(tx_id, next_ts(gap=1), intent[1], "burst_sender")
        elif kind == "dormant_fund":
            fund_user(tx_id, next_ts(), intent[1])
        elif kind == "dormant_tx":
            chained_send(tx_id, next_ts(gap=2), intent[1], "dormant_reactivated")
        else:  # pragma: no cover
            raise AssertionError(kind)

    for user in dormants:
        truth_users.setdefault(str(user), "dormant_reactivated")

    truth = GroundTruth(users=truth_users, txs=truth_txs)
    return records, user_map, truth


def generate_files(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Generate and write the standard ledger, user-map and ground-truth files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, user_map, truth = generate(config)
    paths = {
        "ledger": out / "ledger.csv",
        "user_map": out / "user_map.csv",
        "ground_truth": out / "ground_truth.csv",
    }
    paths["ledger"].write_text(serialize_ledger(records), encoding="utf-8")
    paths["user_map"].write_text(serialize_user_map(user_map), encoding="utf-8")
    paths["ground_truth"].write_text(serialize_ground_truth(truth), encoding="utf-8")
    return paths
