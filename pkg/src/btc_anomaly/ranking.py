"""Anomaly rankings shared by the detectors: higher score = more anomalous."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class AnomalyRanking:
    entries: tuple[tuple[object, float], ...]  # (entity_id, score), scores non-increasing
    flagged_count: int

    def __post_init__(self):
        if not 0 <= self.flagged_count <= len(self.entries):
            raise ValueError("flagged_count out of range")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")

    def top_ids(self, k: int) -> list:
        return [ent for ent, _ in self.entries[:k]]

    def __len__(self) -> int:
        return len(self.entries)


def write_ranking_csv(ranking: AnomalyRanking, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank,entity_id,score,flagged\n")
        for rank, (ent, score) in enumerate(ranking.entries, start=1):
            flagged = int(rank <= ranking.flagged_count)
            fh.write(f"{rank},{ent},{score!r},{flagged}\n")


def read_ranking_csv(path) -> AnomalyRanking:
    entries = []
    flagged = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "rank,entity_id,score,flagged":
            raise ValueError(f"unexpected ranking header {header!r}")
        for line in fh:
            _, ent, score, flag = line.rstrip("\n").split(",")
            entries.append((ent, float(score)))
            flagged += int(flag)
    return AnomalyRanking(entries=tuple(entries), flagged_count=flagged)
