import random

import pytest
from hypothesis import given, settings, strategies as st

from ehrchain import crypto
from ehrchain.cas import content_hash
from ehrchain.chain import Block, Chain, LightNode, Transaction, import_lines, replay
from ehrchain.contracts import Contract, combine_keys, split_hash
from ehrchain.errors import (
    BadNonce,
    BadSignature,
    ChainVerificationError,
    NotAnAuthority,
    NotYourTurn,
)


@pytest.fixture
def auths():
    rng = random.Random(5)
    return [crypto.generate_keypair(rng.randbytes) for _ in range(3)]


@pytest.fixture
def patient():
    return crypto.derive_keypair(crypto.Fingerprint.from_text("chain-test-patient"))


def grant_tx(chain, patient, hosp_pub, data=b"rec", nonce=None):
    h = content_hash(data)
    parts = split_hash(h, random.Random(0))
    ck = combine_keys(patient.public_key, hosp_pub)
    sig = crypto.sign(patient.private_key, h.encode())
    n = chain.next_nonce(patient.public_key) if nonce is None else nonce
    return Transaction.create(patient, Contract.ACCESS, "grant", [ck, parts.part1, parts.part2, sig], n)


def mine(chain, auths):
    signer = next(a for a in auths if a.public_key == chain.expected_signer())
    return chain.mine_block(signer)


def build(auths, patient, n_blocks=4):
    chain = Chain(auths[0], [a.public_key for a in auths])
    for i in range(n_blocks):
        chain.submit_tx(grant_tx(chain, patient, auths[0].public_key, bytes([i])))
        mine(chain, auths)
    return chain


def test_submit_and_pool(auths, patient):
    chain = Chain(auths[0], [a.public_key for a in auths])
    tx = grant_tx(chain, patient, auths[0].public_key)
    chain.submit_tx(tx)
    assert chain.pending_count == 1
    with pytest.raises(BadNonce):
        chain.submit_tx(tx)
    forged = Transaction(tx.sender, tx.contract, tx.op, tx.args, 2, tx.signature)
    with pytest.raises(BadSignature):
        chain.submit_tx(forged)
    block = mine(chain, auths)
    assert [s for _, s in block.entries] == ["ok", "BadNonce", "BadSignature"]
    assert len(chain.query_log(failed=True)) == 2
    chain.verify()


def test_round_robin(auths, patient):
    chain = build(auths, patient, 4)
    signers = [b.authority for b in chain.blocks]
    order = [a.public_key for a in auths]
    assert signers == [order[h % 3] for h in range(5)]


def test_mining_permissions(auths, patient):
    chain = Chain(auths[0], [a.public_key for a in auths])
    chain.submit_tx(grant_tx(chain, patient, auths[0].public_key))
    with pytest.raises(NotAnAuthority):
        chain.mine_block(patient)
    with pytest.raises(NotYourTurn):
        chain.mine_block(auths[0])
    assert chain.mine_block(auths[1]).height == 1


def test_log_queries(auths, patient):
    chain = build(auths, patient, 1)
    entries = chain.query_log(contract=Contract.ACCESS)
    assert len(entries) == 1 and not entries[0].failed
    assert chain.query_log(sender=b"\x02" * 33) == []
    ck = combine_keys(patient.public_key, auths[0].public_key)
    assert len(chain.contracts.access_list(ck)) == 1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(["good", "replay", "forge", "mine"]), max_size=12))
def test_log_length_monotone(ops):
    rng = random.Random(1)
    auths = [crypto.generate_keypair(rng.randbytes) for _ in range(2)]
    patient = crypto.generate_keypair(rng.randbytes)
    chain = Chain(auths[0], [a.public_key for a in auths])
    last_tx = None
    seen = chain.log_length()
    for op in ops:
        try:
            if op == "good":
                last_tx = grant_tx(chain, patient, auths[0].public_key, rng.randbytes(4))
                chain.submit_tx(last_tx)
            elif op == "replay" and last_tx:
                chain.submit_tx(last_tx)
            elif op == "forge" and last_tx:
                chain.submit_tx(Transaction(last_tx.sender, 2, "grant", last_tx.args, 99, last_tx.signature))
            elif op == "mine" and chain.pending_count:
                mine(chain, auths)
        except (BadNonce, BadSignature):
            pass
        assert chain.log_length() >= seen
        seen = chain.log_length()
    replay(chain.blocks)


def test_export_import_and_replay(auths, patient):
    chain = build(auths, patient, 3)
    blocks = import_lines(chain.export_lines())
    assert [b.to_bytes() for b in blocks] == [b.to_bytes() for b in chain.blocks]
    assert replay(blocks).dump() == chain.contracts.dump()
    assert chain.verify().dump() == chain.contracts.dump()


def test_every_byte_mutation_detected(auths, patient):
    chain = build(auths, patient, 2)
    raw = [b.to_bytes() for b in chain.blocks]
    undetected = 0
    for bi, data in enumerate(raw):
        for i in range(len(data)):
            bad = bytearray(data)
            bad[i] ^= 0x01
            lines = [r.hex() for r in raw]
            lines[bi] = bytes(bad).hex()
            try:
                import_lines(lines)
                undetected += 1
            except ChainVerificationError:
                pass
    assert undetected == 0


def test_block_bytes_round_trip(auths, patient):
    chain = build(auths, patient, 1)
    for b in chain.blocks:
        assert Block.from_bytes(b.to_bytes()) == b


def test_light_node(auths, patient):
    chain = build(auths, patient, 2)
    light = LightNode(chain)
    assert light.sync() == 3
    with pytest.raises(NotAnAuthority):
        light.mine_block(auths[0])
    ck = combine_keys(patient.public_key, auths[0].public_key)
    assert light.access_list(ck) == chain.contracts.access_list(ck)


def test_governance_extends_authorities(auths, patient):
    chain = Chain(auths[0], [auths[0].public_key])
    newcomer = auths[1]
    chain.submit_tx(Transaction.create(auths[0], Contract.GOVERNANCE, "add_hospital", [newcomer.public_key], 1))
    chain.mine_block(auths[0])
    assert chain.authorities == [auths[0].public_key, newcomer.public_key]
    assert chain.expected_signer() == auths[0].public_key
    chain.submit_tx(Transaction.create(patient, Contract.GOVERNANCE, "add_hospital", [auths[2].public_key], 1))
    chain.mine_block(auths[0])
    assert chain.query_log(sender=patient.public_key)[0].status == "UnregisteredHospital"
    assert len(chain.authorities) == 2
    assert chain.expected_signer() == newcomer.public_key
    chain.verify()
