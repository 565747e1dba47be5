"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[ACCEPT n] PASS|FAIL ...`` line; the lines are
repeated in the terminal summary so they survive output capture.
"""

import dataclasses
import itertools
import random
import time


from ehrchain import crypto
from ehrchain.cas import ALPHABET, Network, content_hash
from ehrchain.chain import OK, Transaction, import_lines, replay
from ehrchain.contracts import Contract, combine_keys, encode_stats_args, join_hash, split_hash
from ehrchain.errors import BadNonce, BadSignature, ChainVerificationError
from ehrchain.privacy import NO_BATCHING, STRICT2, linkage_attack_estimate
from ehrchain.protocol import System
from ehrchain.records import HealthRecord, random_record
from ehrchain.simctl import SimConfig, bench_hash_retrieval, bench_retrieval, run_scenario

from conftest import FAST_KDF, fp

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[ACCEPT {n:2d}] {'PASS' if ok else 'FAIL'} {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------


def test_01_codec_exactness():
    rng = random.Random(1)
    t0 = time.perf_counter()
    failures = 0
    for _ in range(10_000):
        h = "".join(rng.choice(ALPHABET) for _ in range(46))
        failures += join_hash(split_hash(h, rng)) != h
    elapsed = time.perf_counter() - t0
    report(1, failures == 0 and elapsed < 5, f"codec 10000 cases failures={failures} time={elapsed:.2f}s (<5s)")


# 2 ---------------------------------------------------------------------------


def test_02_end_to_end_round_trip():
    t0 = time.perf_counter()
    s = System(seed=2, kdf_iterations=FAST_KDF)
    s.bootstrap([("H1", "a"), ("H2", "b"), ("H3", "c")])
    rng = random.Random(2)
    originals: dict[str, list[HealthRecord]] = {}
    for p in range(10):
        pid = f"P{p}"
        s.patient_signup(fp(pid), pid)
        originals[pid] = []
    for i in range(100):
        pid, hid = f"P{i % 10}", f"H{i % 3 + 1}"
        r = random_record(rng, pid, hid)
        s.create_record(hid, pid, r, fp(pid))
        originals[pid].append(r)
    mismatched = 0
    for pid, records in originals.items():
        viewed = s.patient_view_records(pid, fp(pid))
        assert len(viewed) == len(records)
        for a, b in zip(viewed, records):
            da, db = a.as_dict(), b.as_dict()
            assert len(da) == 13
            mismatched += sum(da[k] != db[k] for k in db)
    elapsed = time.perf_counter() - t0
    report(2, mismatched == 0 and elapsed < 30,
           f"100 records round trip, mismatched fields={mismatched} time={elapsed:.2f}s (<30s)")


# 3 ---------------------------------------------------------------------------


def _fuzz_world():
    s = System(seed=3, kdf_iterations=FAST_KDF)
    s.bootstrap([("H1", "a"), ("H2", "b")])
    for pid in ("P1", "P2"):
        s.patient_signup(fp(pid), pid)
    rng = random.Random(3)
    for pid in ("P1", "P2"):
        for _ in range(2):
            s.create_record("H1", pid, random_record(rng, pid), fp(pid))
    s.grant_access("P1", fp("P1"), "H2", "all")
    return s


def test_03_access_control_fuzz():
    s = _fuzz_world()
    chain = s.chain
    rng = random.Random(33)
    p1 = s.unlock_patient("P1", fp("P1"))
    p2 = s.unlock_patient("P2", fp("P2"))
    h1 = s._sessions["H1"]
    h2 = s._sessions["H2"]
    outsiders = [crypto.generate_keypair(rng.randbytes) for _ in range(5)]
    replayable = [tx for b in chain.blocks for tx, st in b.entries if st == OK]
    granted = [join_hash(p) for p in chain.contracts.access_list(combine_keys(p1.public_key, h2.public_key))]
    before = chain.contracts.dump()
    start_height = chain.height

    def fresh_hash():
        return content_hash(rng.randbytes(8))

    def store_args(patient_pub, h, signer):
        parts = split_hash(h, rng)
        return [patient_pub, parts.part1, parts.part2, crypto.sign(signer.private_key, h.encode())]

    def nonce(kp):
        return chain.next_nonce(kp.public_key)

    def wrong_signer():
        kind = rng.randrange(3)
        h = fresh_hash()
        if kind == 0:  # record signed by the wrong patient
            return Transaction.create(h1, Contract.RECORDS, "store", store_args(p1.public_key, h, p2), nonce(h1))
        if kind == 1:  # grant signed by another patient
            ck = combine_keys(p1.public_key, h1.public_key)
            parts = split_hash(h, rng)
            return Transaction.create(p2, Contract.ACCESS, "grant",
                                      [ck, parts.part1, parts.part2, crypto.sign(p2.private_key, h.encode())], nonce(p2))
        # transaction claims a hospital sender but is signed by an outsider
        tx = Transaction.create(rng.choice(outsiders), Contract.RECORDS, "store",
                                store_args(p1.public_key, h, p1), nonce(h1))
        return dataclasses.replace(tx, sender=h1.public_key)

    def unregistered():
        o = rng.choice(outsiders)
        kind = rng.randrange(4)
        if kind == 0:
            return Transaction.create(o, Contract.RECORDS, "store",
                                      store_args(p1.public_key, fresh_hash(), p1), nonce(o))
        if kind == 1:
            return Transaction.create(o, Contract.STATS, "update",
                                      encode_stats_args([("flu", None), ("asthma", None)], True), nonce(o))
        if kind == 2:
            return Transaction.create(o, Contract.GOVERNANCE, "add_hospital", [o.public_key], nonce(o))
        return Transaction.create(o, Contract.MAP_POINTER, "set",
                                  [b"", fresh_hash().encode(), b"", b"", b""], nonce(o))

    def forged_revoke():
        ck = combine_keys(p1.public_key, h2.public_key)
        forger = rng.choice([p2, h1, h2] + outsiders)
        parts = split_hash(rng.choice(granted), rng)
        args = [ck, crypto.sign(forger.private_key, ck), crypto.sign(forger.private_key, h2.public_key),
                parts.part1, parts.part2]
        return Transaction.create(forger, Contract.ACCESS, "revoke", args, nonce(forger))

    def replayed():
        return rng.choice(replayable)

    makers = [wrong_signer, unregistered, forged_revoke, replayed]
    by_kind = {m.__name__: 0 for m in makers}
    for i in range(1000):
        make = makers[i % 4]
        by_kind[make.__name__] += 1
        try:
            chain.submit_tx(make())
        except (BadSignature, BadNonce):
            pass
        if chain.pending_count >= 25:
            s.commit()
    s.commit()
    entries = [(tx, st) for b in chain.blocks[start_height + 1:] for tx, st in b.entries]
    failed = sum(st != OK for _, st in entries)
    unchanged = chain.contracts.dump() == before
    replayed_ok = replay(chain.blocks).dump() == before
    report(3, unchanged and replayed_ok and len(entries) == 1000 and failed == 1000,
           f"fuzz 1000 unauthorized ops {by_kind}: state unchanged={unchanged} "
           f"logged={len(entries)} failed-flagged={failed}")


# 4 ---------------------------------------------------------------------------

REVOKE_SCRIPT = """\
create H1 P1 disease=flu location=Delhi
grant P1 H2 all
view hospital H2 P1
revoke P1 H2 0
view hospital H2 P1
audit P1 H2 0
"""


def _result(transcript, prefix):
    line = next(l for l in transcript if l[4:].startswith(prefix) and "=>" in l)
    return line.split("=> ", 1)[1].rsplit(" | ", 1)[0]


def test_04_revocation():
    base = SimConfig(n_hospitals=2, n_patients=1, rng_seed=4)
    status_c, tc = run_scenario(base, REVOKE_SCRIPT, strict=True)
    status_n, tn = run_scenario(dataclasses.replace(base, noncompliant="H2"), REVOKE_SCRIPT, strict=True)
    views_c = [l for l in tc if "view hospital" in l]
    views_n = [l for l in tn if "view hospital" in l]
    ok = (
        status_c == status_n == 0
        and "=> 1 record(s)" in views_c[0] and "=> 0 record(s)" in views_c[1]
        and "=> 0 record(s)" in views_n[1]
        and _result(tc, "audit") == "providers {}"
        and _result(tn, "audit") == "providers {hospital:H2}"
    )
    report(4, ok, f"revocation: compliant audit={_result(tc, 'audit')!r} "
                  f"non-compliant audit={_result(tn, 'audit')!r}, post-revoke views empty")


# 5 ---------------------------------------------------------------------------


def test_05_privacy_bound():
    strict = linkage_attack_estimate(10_000, STRICT2, seed=5)
    none = linkage_attack_estimate(10_000, NO_BATCHING, seed=5)
    report(5, 0.45 <= strict <= 0.55 and none >= 0.95,
           f"linkage accuracy strict2={strict:.4f} in [0.45,0.55], no batching={none:.4f} >= 0.95 (10000 trials)")


# 6 ---------------------------------------------------------------------------


def _ten_creates(policy):
    s = System(seed=6, batching=policy, kdf_iterations=FAST_KDF)
    s.bootstrap([("H1", "a"), ("H2", "b")])
    s.patient_signup(fp("P1"), "P1")
    rng = random.Random(6)
    diseases = ["flu", "diabetes", "asthma", "malaria", "dengue"] * 2
    for d in diseases:
        r = dataclasses.replace(random_record(rng, "P1"), disease=d)
        s.create_record("H1", "P1", r, fp("P1"))
    return s, diseases


def test_06_decoupled_statistics():
    dec, _ = _ten_creates("decoupled(10,9)")
    dec_updates = [e for e in dec.chain.query_log(contract=Contract.STATS) if not e.failed]
    strict, diseases = _ten_creates("strict2")
    total = sum(strict.stats_get(d) for d in set(diseases))
    strict_updates = strict.chain.query_log(contract=Contract.STATS)
    per_disease_ok = all(strict.stats_get(d) == diseases.count(d) for d in set(diseases))
    report(6, len(dec_updates) == 9 and total == 10 and per_disease_ok and not any(e.failed for e in strict_updates),
           f"decoupled(10,9) count updates={len(dec_updates)} (9); strict sum(counts)={total} (10) "
           f"over {len(strict_updates)} batched update(s)")


# 7 ---------------------------------------------------------------------------


def _busy_system(seed=7):
    s = System(seed=seed, kdf_iterations=FAST_KDF)
    s.bootstrap([("H1", "a"), ("H2", "b"), ("H3", "c")])
    rng = random.Random(seed)
    for pid in ("P1", "P2"):
        s.patient_signup(fp(pid), pid)
    for i in range(6):
        pid = f"P{i % 2 + 1}"
        s.create_record(f"H{i % 3 + 1}", pid, random_record(rng, pid), fp(pid))
    hh = s.grant_access("P1", fp("P1"), "H2", "all")[0]
    s.hospital_view_records("H2", "b", "P1")
    s.revoke_access("P1", fp("P1"), "H2", hh)
    return s


def test_07_chain_integrity():
    s = _busy_system()
    chain = s.chain
    verified = chain.verify().dump() == chain.contracts.dump()
    order = chain.blocks[0].genesis_authorities
    round_robin = all(b.authority == order[b.height % len(order)] for b in chain.blocks)
    signers_known = all(b.authority in chain.authorities for b in chain.blocks)

    lines = chain.export_lines()
    raw = [bytes.fromhex(l) for l in lines]
    total_bytes = sum(len(r) for r in raw)
    undetected = 0
    for bi, data in enumerate(raw):
        for i in range(len(data)):
            bad = bytearray(data)
            bad[i] ^= 0x80
            mutated = list(lines)
            mutated[bi] = bytes(bad).hex()
            try:
                import_lines(mutated)
                undetected += 1
            except ChainVerificationError:
                pass

    again = _busy_system()
    replay_identical = (
        replay(import_lines(lines)).dump() == chain.contracts.dump()
        and again.chain.export_lines() == lines
        and again.chain.contracts.dump() == chain.contracts.dump()
    )
    ok = verified and round_robin and signers_known and undetected == 0 and replay_identical
    report(7, ok, f"chain of {len(raw)} blocks verifies={verified}; {total_bytes} single-byte mutations, "
                  f"undetected={undetected}; round-robin={round_robin}; replay identical={replay_identical}")


# 8 ---------------------------------------------------------------------------


def test_08_replication():
    net = Network(8)
    nodes = [f"n{i:02d}" for i in range(25)]
    for n in nodes:
        net.add_node(n)
    h = net.put(nodes[0], b"replicated record")
    net.replicate(h, 20)
    providers = net.find_providers(h)
    failures = 0
    checked = 0
    for offline in itertools.combinations(nodes, 6):
        down = set(offline)
        for n in offline:
            net.set_online(n, False)
        fetcher = next(n for n in nodes if n not in down)
        was_provider = net.has_local(fetcher, h)
        try:
            net.get(fetcher, h)
        except Exception:
            failures += 1
        if not was_provider:
            net.remove_local(fetcher, h)
        for n in offline:
            net.set_online(n, True)
        checked += 1
    report(8, len(providers) >= 20 and failures == 0,
           f"25 nodes, replicate 20: providers={len(providers)}; get with every 6-node outage "
           f"({checked} subsets) failures={failures}")


# 9 ---------------------------------------------------------------------------

EQUIV_SCRIPT = """\
create H1 P1 disease=flu location=Delhi age=30
create H2 P1 disease=asthma location=Mumbai
create H1 P2 disease=malaria location=Chennai
view patient P1
view patient P2
grant P1 H3 0,1
view hospital H3 P1
revoke P1 H3 0
view hospital H3 P1
view patient P1
"""


def test_09_mode_equivalence():
    base = SimConfig(n_hospitals=3, n_patients=2, rng_seed=9)
    outs = {}
    for mode in ("contract", "ipfs-map"):
        status, transcript = run_scenario(dataclasses.replace(base, storage_mode=mode), EQUIV_SCRIPT, strict=True)
        assert status == 0
        outs[mode] = [l.split(" | ")[0] for l in transcript if l[4:].startswith("view")]
    # records are compared field by field, not just by summary line
    full = {}
    for mode in ("contract", "ipfs-map"):
        s = System(seed=9, storage_mode=mode, kdf_iterations=FAST_KDF)
        s.bootstrap([("H1", "a"), ("H2", "b")])
        s.patient_signup(fp("P1"), "P1")
        rng = random.Random(9)
        for i in range(4):
            s.create_record(f"H{i % 2 + 1}", "P1", random_record(rng, "P1"), fp("P1"))
        s.grant_access("P1", fp("P1"), "H2", [1, 3])
        full[mode] = (s.patient_view_records("P1", fp("P1")), s.hospital_view_records("H2", "b", "P1"))
    same = outs["contract"] == outs["ipfs-map"] and full["contract"] == full["ipfs-map"]
    report(9, same, f"contract vs ipfs-map: {len(outs['contract'])} scripted views and "
                    f"{len(full['contract'][0])}+{len(full['contract'][1])} full records identical={same}")


# 10 --------------------------------------------------------------------------


def test_10_benchmarks():
    cfg = SimConfig(n_hospitals=3, rng_seed=10)
    rows = bench_retrieval(cfg, 50, 10)
    monotone = {}
    for backend in ("cas", "kv"):
        ticks = [r.ticks for r in rows if r.backend == backend]
        monotone[backend] = len(ticks) == 5 and all(a <= b for a, b in zip(ticks, ticks[1:]))
    same_plain = all(
        len({r.digest for r in rows if r.x == k}) == 1 for k in range(10, 51, 10)
    )
    hrows = bench_hash_retrieval(cfg, 50, 10)
    one_per_step = [r.x for r in hrows] == [10, 20, 30, 40, 50]
    same_hashes = len({r.digest for r in hrows}) == 1
    ok = all(monotone.values()) and same_plain and one_per_step and same_hashes
    report(10, ok, f"bench_retrieval monotone={monotone} plaintexts equal={same_plain}; "
                   f"bench_hash_retrieval rows={len(hrows)} identical hash sets={same_hashes}")
