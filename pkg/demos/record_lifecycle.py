"""
Record lifecycle: create, share, revoke, audit
==============================================

A patient visits one hospital, shares a record with a second hospital and
later takes that access back.
"""

import random

from ehrchain import crypto
from ehrchain.protocol import System
from ehrchain.records import random_record

# Three founding hospitals sign blocks in turn.
system = System(seed=1, kdf_iterations=1000)
system.bootstrap([("H1", "h1-pass"), ("H2", "h2-pass"), ("H3", "h3-pass")])

# The patient's keys come from the fingerprint, so nothing secret is typed.
thumb = crypto.Fingerprint.from_text("left thumb, enrolment scan 0001")
system.patient_signup(thumb, "asha")

rng = random.Random(1)
for hid in ("H1", "H1", "H3"):
    h = system.create_record(hid, "asha", random_record(rng, "asha", hid), thumb)
    print(hid, "stored", h)

for r in system.patient_view_records("asha", thumb):
    print(r.date, r.hospital_id, r.disease, "-", r.diagnosis)

#%%
# Share only the second record with H2.
(shared,) = system.grant_access("asha", thumb, "H2", [1])
print("H2 sees", [r.disease for r in system.hospital_view_records("H2", "h2-pass", "asha")])

#%%
# Revoke it. H2 honours the notice and drops its copy, so the audit is empty.
system.revoke_access("asha", thumb, "H2", shared)
print("H2 sees", system.hospital_view_records("H2", "h2-pass", "asha"))
print("still hosting the revoked copy:", system.audit_revocation("asha", shared) or "nobody")

#%%
# Every step above is on chain; replaying it gives the same registries.
replayed = system.chain.verify()
print("blocks:", len(system.chain.blocks), "replay matches:", replayed.dump() == system.chain.contracts.dump())
