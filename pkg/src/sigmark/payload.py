"""Metadata payload codec and the one-time-use authorization registry.

A payload packs (record_id, doc-digest fragment, expiry bucket, CRC) into the
watermark bit budget. The registry binds each record to a full document
digest and enforces issued -> consumed|expired|revoked transitions, so every
issued signature verifies at most once.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PayloadConfig
from .errors import ChecksumError, FieldOverflow, StoreError, UnknownSigner

# generator polynomials by CRC width (x^w term implicit)
_CRC_POLY = {8: 0x07, 4: 0x3}


def crc_bits(message_bits, width):
    """Bitwise CRC over an MSB-first bit sequence; returns ``width`` bits."""
    poly = _CRC_POLY[width]
    reg = 0
    for bit in message_bits:
        reg ^= int(bit) << (width - 1)
        top = reg & (1 << (width - 1))
        reg = ((reg << 1) & ((1 << width) - 1))
        if top:
            reg ^= poly
    return _int_to_bits(reg, width)


def _int_to_bits(value, width):
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def _bits_to_int(bits):
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


@dataclass(frozen=True)
class PayloadRecord:
    record_id: int
    doc_digest_fragment: int
    expiry_bucket: int


def encode_metadata(record, layout: PayloadConfig):
    """Big-endian bit packing of the payload fields plus CRC."""
    fields = [(record.record_id, layout.record_bits, "record_id"),
              (record.doc_digest_fragment, layout.digest_bits,
               "doc_digest_fragment"),
              (record.expiry_bucket, layout.expiry_bits, "expiry_bucket")]
    bits = []
    for value, width, name in fields:
        if not 0 <= value < (1 << width):
            raise FieldOverflow(f"{name}={value} exceeds {width} bits")
        bits.extend(_int_to_bits(value, width))
    bits.extend(crc_bits(bits, layout.crc_bits))
    return np.asarray(bits, dtype=np.uint8)


def decode_bits(bits, layout: PayloadConfig):
    """Unpack and CRC-check a payload; raises ChecksumError on mismatch."""
    total = (layout.record_bits + layout.digest_bits
             + layout.expiry_bits + layout.crc_bits)
    bits = [int(b) for b in np.asarray(bits).ravel()]
    if len(bits) != total:
        raise ValueError(f"expected {total} bits, got {len(bits)}")
    body = bits[:total - layout.crc_bits]
    expect = crc_bits(body, layout.crc_bits)
    got = bits[total - layout.crc_bits:]
    record = PayloadRecord(
        record_id=_bits_to_int(body[:layout.record_bits]),
        doc_digest_fragment=_bits_to_int(
            body[layout.record_bits:layout.record_bits + layout.digest_bits]),
        expiry_bucket=_bits_to_int(
            body[layout.record_bits + layout.digest_bits:]))
    if got != expect:
        raise ChecksumError("payload CRC mismatch", fields=record)
    return record


def digest_fragment(document_bytes, width):
    digest = hashlib.sha256(document_bytes).digest()
    value = int.from_bytes(digest[:8], "big")
    return value >> (64 - width)


def expiry_bucket(timestamp, width):
    return int(timestamp // 3600) % (1 << width)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

STATES = ("issued", "consumed", "expired", "revoked")


@dataclass
class RegistryEntry:
    record_id: int
    signer_id: str
    full_doc_digest: str   # hex sha256
    issued_at: float
    expires_at: float
    state: str = "issued"


class Registry:
    """Journal-backed one-time-use store.

    Every mutation is appended to a JSONL journal and the in-memory view is
    rebuilt by replay; consume is linearizable under an instance-wide lock.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries = {}
        self._next_id = 0
        if self.path.exists():
            self._replay()

    def _replay(self):
        try:
            with open(self.path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    if rec["op"] == "issue":
                        entry = RegistryEntry(**rec["entry"])
                        self._entries[entry.record_id] = entry
                        self._next_id = max(self._next_id,
                                            entry.record_id + 1)
                    elif rec["op"] == "transition":
                        self._entries[rec["record_id"]].state = rec["state"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise StoreError(f"journal replay failed: {exc}") from exc

    def _append(self, record):
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
        except OSError as exc:
            raise StoreError(f"journal append failed: {exc}") from exc

    def issue(self, signer_id, full_doc_digest, issued_at, expires_at,
              max_id):
        with self._lock:
            record_id = self._next_id
            if record_id >= max_id:
                raise StoreError("record_id space exhausted")
            self._next_id += 1
            entry = RegistryEntry(record_id=record_id, signer_id=signer_id,
                                  full_doc_digest=full_doc_digest,
                                  issued_at=issued_at, expires_at=expires_at)
            self._append({"op": "issue", "entry": entry.__dict__})
            self._entries[record_id] = entry
            return entry

    def get(self, record_id):
        with self._lock:
            return self._entries.get(record_id)

    def transition(self, record_id, new_state, expect_state="issued"):
        """Atomic compare-and-swap on the entry state; True on success."""
        if new_state not in STATES:
            raise ValueError(f"unknown state {new_state!r}")
        with self._lock:
            entry = self._entries.get(record_id)
            if entry is None or entry.state != expect_state:
                return False
            self._append({"op": "transition", "record_id": record_id,
                          "state": new_state})
            entry.state = new_state
            return True


# ---------------------------------------------------------------------------
# issue / verify-bits state machine
# ---------------------------------------------------------------------------

def issue(signer_id, document_bytes, ttl, store, layout: PayloadConfig,
          now, known_signers=None):
    """Allocate a record, bind the document digest, and build the payload."""
    if known_signers is not None and signer_id not in known_signers:
        raise UnknownSigner(f"signer {signer_id!r} has no reference samples")
    digest = hashlib.sha256(document_bytes).hexdigest()
    entry = store.issue(signer_id, digest, issued_at=now,
                        expires_at=now + ttl,
                        max_id=1 << layout.record_bits)
    record = PayloadRecord(
        record_id=entry.record_id,
        doc_digest_fragment=digest_fragment(document_bytes,
                                            layout.digest_bits),
        expiry_bucket=expiry_bucket(entry.expires_at, layout.expiry_bits))
    return record, entry


@dataclass
class VerificationReport:
    crc_ok: bool = False
    record_known: bool = False
    state_ok: bool = False
    digest_ok: bool = False
    not_expired: bool = False
    consumed_now: bool = False
    extraction_confidence: float = 0.0
    detail: str = ""

    @property
    def ok(self):
        return (self.crc_ok and self.record_known and self.state_ok
                and self.digest_ok and self.not_expired and self.consumed_now)

    def to_dict(self):
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def verify_bits(bits, claimed_signer, document_bytes, now, store,
                layout: PayloadConfig, confidence=0.0):
    """Registry-side checks on extracted watermark bits.

    Consumes the record (issued -> consumed) only when every check passes.
    """
    report = VerificationReport(extraction_confidence=float(confidence))
    try:
        record = decode_bits(bits, layout)
    except ChecksumError as exc:
        report.detail = "crc mismatch"
        record = exc.fields
        if record is None:
            return report
    else:
        report.crc_ok = True

    entry = store.get(record.record_id)
    if entry is None or entry.signer_id != claimed_signer:
        report.detail = report.detail or "record unknown for claimed signer"
        return report
    report.record_known = True
    report.state_ok = entry.state == "issued"

    digest = hashlib.sha256(document_bytes).hexdigest()
    frag = digest_fragment(document_bytes, layout.digest_bits)
    report.digest_ok = (entry.full_doc_digest == digest
                        and record.doc_digest_fragment == frag)
    report.not_expired = now < entry.expires_at
    if not report.not_expired and entry.state == "issued":
        store.transition(record.record_id, "expired")

    if (report.crc_ok and report.state_ok and report.digest_ok
            and report.not_expired):
        report.consumed_now = store.transition(record.record_id, "consumed")
        report.state_ok = report.consumed_now
    if not report.ok and not report.detail:
        failed = [k for k in ("crc_ok", "record_known", "state_ok",
                              "digest_ok", "not_expired")
                  if not getattr(report, k)]
        report.detail = "failed checks: " + ", ".join(failed)
    return report
