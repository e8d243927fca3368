"""Parsing and validation of transaction-ledger and user-map files.

Ledger file format (UTF-8, LF, one transaction per line, ``#`` starts a comment):

    tx_id,timestamp,in1:amt|in2:amt|...,out1:amt|out2:amt|...

The input field is empty for coinbase transactions.  Amounts are decimal
strings with exactly 8 fractional digits and are stored internally as
integer satoshi (1 BTC = 10^8 satoshi) so balance arithmetic is exact.

User-map file format: ``address,user_id`` per line, same comment rules.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator

SATOSHI_PER_BTC = 10**8

_AMOUNT_RE = re.compile(r"^\d+\.\d{8}$")
_TIMESTAMP_RE = re.compile(r"^-?\d+$")
_USER_ID_RE = re.compile(r"^\d+$")


class LedgerError(Exception):
    """Base class for ledger-file problems."""


class LedgerParseError(LedgerError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateTxIdError(LedgerParseError):
    pass


class UserMapConflictError(LedgerError):
    def __init__(self, address: str, first: int, second: int):
        super().__init__(
            f"address {address!r} mapped to both user {first} and user {second}"
        )
        self.address = address


@dataclass(frozen=True)
class TransactionRecord:
    """One ledger entry.  Amounts are satoshi; inputs may be empty (coinbase)."""

    tx_id: str
    timestamp: int
    inputs: tuple[tuple[str, int], ...]
    outputs: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class ValidationReport:
    record_count: int
    errors: tuple[tuple[int, str], ...]

    @property
    def error_count(self) -> int:
        return len(self.errors)


def parse_amount(text: str) -> int:
    """Parse a BTC decimal string with exactly 8 fractional digits to satoshi."""
    if not _AMOUNT_RE.match(text):
        raise ValueError(f"bad amount {text!r}")
    whole, frac = text.split(".")
    return int(whole) * SATOSHI_PER_BTC + int(frac)


def format_amount(satoshi: int) -> str:
    if satoshi < 0:
        raise ValueError("amounts are non-negative")
    return f"{satoshi // SATOSHI_PER_BTC}.{satoshi % SATOSHI_PER_BTC:08d}"


def _parse_io_field(field: str, line_no: int) -> tuple[tuple[str, int], ...]:
    if field == "":
        return ()
    entries = []
    for part in field.split("|"):
        addr, sep, amt = part.partition(":")
        if not sep or not addr:
            raise LedgerParseError(line_no, f"malformed entry {part!r}")
        try:
            entries.append((addr, parse_amount(amt)))
        except ValueError:
            raise LedgerParseError(line_no, f"bad amount {amt!r}") from None
    return tuple(entries)


def _content_lines(stream: Iterable[str]) -> Iterator[tuple[int, str]]:
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        yield line_no, line


def parse_ledger(stream: Iterable[str]) -> list[TransactionRecord]:
    """Parse a ledger stream into records, in file order.

    Raises LedgerParseError (with the 1-based line number) on malformed
    lines and DuplicateTxIdError on repeated tx ids.  Structural invariants
    that are not enforced by the format (e.g. non-empty outputs) are left
    to validate_ledger.
    """
    records: list[TransactionRecord] = []
    seen: set[str] = set()
    for line_no, line in _content_lines(stream):
        fields = line.split(",")
        if len(fields) != 4:
            raise LedgerParseError(line_no, f"expected 4 fields, got {len(fields)}")
        tx_id, ts_text, in_field, out_field = fields
        if not tx_id:
            raise LedgerParseError(line_no, "empty tx_id")
        if tx_id in seen:
            raise DuplicateTxIdError(line_no, f"duplicate tx_id {tx_id!r}")
        if not _TIMESTAMP_RE.match(ts_text):
            raise LedgerParseError(line_no, f"bad timestamp {ts_text!r}")
        records.append(
            TransactionRecord(
                tx_id=tx_id,
                timestamp=int(ts_text),
                inputs=_parse_io_field(in_field, line_no),
                outputs=_parse_io_field(out_field, line_no),
            )
        )
        seen.add(tx_id)
    return records


def serialize_ledger(records: Iterable[TransactionRecord]) -> str:
    """Inverse of parse_ledger; round-trips bit-exactly."""
    lines = []
    for rec in records:
        ins = "|".join(f"{a}:{format_amount(v)}" for a, v in rec.inputs)
        outs = "|".join(f"{a}:{format_amount(v)}" for a, v in rec.outputs)
        lines.append(f"{rec.tx_id},{rec.timestamp},{ins},{outs}")
    return "\n".join(lines) + ("\n" if lines else "")


def validate_ledger(records: list[TransactionRecord]) -> ValidationReport:
    """Report invariant violations; positions are 1-based record ordinals."""
    errors: list[tuple[int, str]] = []
    seen: set[str] = set()
    for pos, rec in enumerate(records, start=1):
        if rec.timestamp < 0:
            errors.append((pos, "negative timestamp"))
        if not rec.outputs:
            errors.append((pos, "no outputs"))
        if any(v < 0 for _, v in rec.inputs) or any(v < 0 for _, v in rec.outputs):
            errors.append((pos, "negative amount"))
        if rec.tx_id in seen:
            errors.append((pos, f"duplicate tx_id {rec.tx_id!r}"))
        seen.add(rec.tx_id)
    return ValidationReport(record_count=len(records), errors=tuple(errors))


def ledger_addresses(records: Iterable[TransactionRecord]) -> list[str]:
    """All addresses in first-appearance order (inputs before outputs per record)."""
    out: list[str] = []
    seen: set[str] = set()
    for rec in records:
        for addr, _ in rec.inputs + rec.outputs:
            if addr not in seen:
                seen.add(addr)
                out.append(addr)
    return out


def load_user_map(
    stream: Iterable[str], records: list[TransactionRecord]
) -> dict[str, int]:
    """Read ``address,user_id`` lines and complete the map over the ledger.

    Addresses present in the ledger but absent from the file get fresh
    singleton user ids, strictly greater than every listed id, assigned in
    first-appearance order.  Conflicting duplicate lines raise
    UserMapConflictError; identical duplicates are tolerated.
    """
    mapping: dict[str, int] = {}
    for line_no, line in _content_lines(stream):
        addr, sep, id_text = line.partition(",")
        if not sep or not addr or not _USER_ID_RE.match(id_text):
            raise LedgerParseError(line_no, f"malformed user-map line {line!r}")
        user_id = int(id_text)
        if addr in mapping and mapping[addr] != user_id:
            raise UserMapConflictError(addr, mapping[addr], user_id)
        mapping[addr] = user_id
    next_id = max(mapping.values(), default=-1) + 1
    for addr in ledger_addresses(records):
        if addr not in mapping:
            mapping[addr] = next_id
            next_id += 1
    return mapping


def serialize_user_map(mapping: dict[str, int]) -> str:
    return "".join(f"{a},{u}\n" for a, u in mapping.items())
