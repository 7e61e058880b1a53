"""The one-signature-one-use protocol, independent of any trained model.

Walks the payload codec and registry state machine directly: issue a
48-bit payload bound to a document, verify it (which consumes the record),
then show that replay, forgery, corruption, and expiry are all rejected.
"""

import tempfile
from pathlib import Path

from sigmark import payload
from sigmark.config import full_scale_config

layout = full_scale_config().payload     # 48-bit: 20/12/8/8 with CRC-8
document = b"Purchase agreement, lot 7, $125,000."
tmp = Path(tempfile.mkdtemp())
store = payload.Registry(tmp / "registry.jsonl")

# -- issue ------------------------------------------------------------------
record, entry = payload.issue("alice", document, ttl=3600.0, store=store,
                              layout=layout, now=1_000_000.0)
bits = payload.encode_metadata(record, layout)
print(f"issued record {entry.record_id} for signer {entry.signer_id!r}; "
      f"payload = {''.join(map(str, bits))} ({len(bits)} bits)")

# -- first verification: consumes the record --------------------------------
rep = payload.verify_bits(bits, "alice", document, now=1_000_100.0,
                          store=store, layout=layout)
print(f"first verify:  ok={rep.ok} (record now "
      f"{store.get(record.record_id).state})")

# -- replay: the same signature cannot verify twice -------------------------
rep = payload.verify_bits(bits, "alice", document, now=1_000_200.0,
                          store=store, layout=layout)
print(f"replay:        ok={rep.ok} ({rep.detail})")

# -- forgery: different document, same signature ----------------------------
record2, _ = payload.issue("alice", document, ttl=3600.0, store=store,
                           layout=layout, now=1_000_000.0)
bits2 = payload.encode_metadata(record2, layout)
rep = payload.verify_bits(bits2, "alice", b"Forged: lot 7, $1.",
                          now=1_000_100.0, store=store, layout=layout)
print(f"wrong doc:     ok={rep.ok} ({rep.detail})")

# -- corruption: a single flipped bit trips the CRC -------------------------
bad = bits2.copy()
bad[5] ^= 1
rep = payload.verify_bits(bad, "alice", document, now=1_000_100.0,
                          store=store, layout=layout)
print(f"bit flip:      ok={rep.ok} ({rep.detail})")

# -- expiry: past the TTL, the record is marked expired ---------------------
record3, entry3 = payload.issue("alice", document, ttl=60.0, store=store,
                                layout=layout, now=1_000_000.0)
bits3 = payload.encode_metadata(record3, layout)
rep = payload.verify_bits(bits3, "alice", document,
                          now=entry3.expires_at + 1,
                          store=store, layout=layout)
print(f"expired:       ok={rep.ok} (record now "
      f"{store.get(record3.record_id).state})")

# the journal survives process restarts
fresh = payload.Registry(tmp / "registry.jsonl")
states = {rid: fresh.get(rid).state for rid in range(3)}
print(f"journal replay after 'restart': {states}")
