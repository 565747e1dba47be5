import random

import pytest
from hypothesis import given, settings, strategies as st

from ehrchain import crypto
from ehrchain.errors import CorruptKeyfile, DecryptionFailure, MalformedKey, SecretTooShort, WrongPassword

from conftest import fp


def test_derive_keypair_is_deterministic():
    assert crypto.derive_keypair(fp("a")) == crypto.derive_keypair(fp("a"))


def test_distinct_fingerprints_give_distinct_keys():
    assert crypto.derive_keypair(fp("a")).public_key != crypto.derive_keypair(fp("b")).public_key


def test_short_secret_rejected():
    with pytest.raises(SecretTooShort):
        crypto.derive_keypair(crypto.Fingerprint(b"12345678"))


def test_public_key_recomputable(keys):
    for kp in keys:
        assert crypto.public_from_private(kp.private_key) == kp.public_key
        assert len(kp.public_key) == crypto.PUBLIC_KEY_SIZE


def test_keypair_rejects_mismatched_halves(keys):
    with pytest.raises(MalformedKey):
        crypto.KeyPair(keys[0].public_key, keys[1].private_key)


def test_encrypt_round_trip_1kib(keys):
    msg = bytes(range(256)) * 4
    ct = crypto.asym_encrypt(keys[0].public_key, msg)
    assert crypto.asym_decrypt(keys[0].private_key, ct) == msg
    assert crypto.asym_decrypt(keys[0].private_key, crypto.Ciphertext.from_bytes(ct.to_bytes())) == msg


def test_decrypt_with_other_key_fails(keys):
    ct = crypto.asym_encrypt(keys[0].public_key, b"secret")
    with pytest.raises(DecryptionFailure):
        crypto.asym_decrypt(keys[1].private_key, ct)


def test_encryption_is_randomized(keys):
    a = crypto.asym_encrypt(keys[0].public_key, b"same")
    b = crypto.asym_encrypt(keys[0].public_key, b"same")
    assert a.to_bytes() != b.to_bytes()


def test_tampered_body_fails(keys):
    ct = crypto.asym_encrypt(keys[0].public_key, b"payload")
    bad = crypto.Ciphertext(ct.ephemeral_public, ct.sealed_key, ct.body[:-1] + bytes([ct.body[-1] ^ 1]))
    with pytest.raises(DecryptionFailure):
        crypto.asym_decrypt(keys[0].private_key, bad)


def test_sign_verify(keys):
    sig = crypto.sign(keys[0].private_key, b"msg")
    assert crypto.verify(keys[0].public_key, b"msg", sig)
    assert not crypto.verify(keys[0].public_key, b"msh", sig)
    assert not crypto.verify(keys[1].public_key, b"msg", sig)


def test_verify_malformed_key():
    with pytest.raises(MalformedKey):
        crypto.verify(b"\x02" + b"\x00" * 10, b"m", b"sig")


def test_signatures_deterministic(keys):
    assert crypto.sign(keys[0].private_key, b"x") == crypto.sign(keys[0].private_key, b"x")


def test_signature_soundness_1000_pairs():
    rng = random.Random(3)
    pool = [crypto.generate_keypair(rng.randbytes) for _ in range(20)]
    accepted = 0
    for _ in range(1000):
        a, b = rng.sample(pool, 2)
        msg = rng.randbytes(rng.randint(0, 64))
        accepted += crypto.verify(b.public_key, msg, crypto.sign(a.private_key, msg))
    assert accepted == 0


@settings(max_examples=40, deadline=None)
@given(st.binary(max_size=64), st.integers(min_value=0))
def test_bit_flip_breaks_signature(msg, pos):
    kp = crypto.derive_keypair(fp("hyp"))
    sig = crypto.sign(kp.private_key, msg)
    assert crypto.verify(kp.public_key, msg, sig)
    if msg:
        i = pos % len(msg)
        flipped = msg[:i] + bytes([msg[i] ^ 0x01]) + msg[i + 1 :]
        assert not crypto.verify(kp.public_key, flipped, sig)


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=300))
def test_envelope_round_trip_property(msg):
    kp = crypto.derive_keypair(fp("env"))
    assert crypto.asym_decrypt(kp.private_key, crypto.asym_encrypt(kp.public_key, msg)) == msg


def test_keyfile_round_trip(keys):
    kf = crypto.seal_keyfile(b"pw", keys[0], iterations=1000)
    assert crypto.open_keyfile(b"pw", crypto.EncryptedKeyfile.from_bytes(kf.to_bytes())) == keys[0]


def test_keyfile_wrong_password(keys):
    kf = crypto.seal_keyfile(b"pw", keys[0], iterations=1000)
    with pytest.raises(WrongPassword):
        crypto.open_keyfile(b"other", kf)


def test_keyfile_plaintext_key_not_in_bytes(keys):
    kf = crypto.seal_keyfile(b"pw", keys[0], iterations=1000)
    assert keys[0].private_key not in kf.to_bytes()


def test_keyfile_any_byte_corruption_detected(keys):
    blob = crypto.seal_keyfile(b"pw", keys[0], iterations=1000).to_bytes()
    for i in range(len(blob)):
        bad = bytearray(blob)
        bad[i] ^= 0x40
        with pytest.raises((CorruptKeyfile, WrongPassword)):
            crypto.open_keyfile(b"pw", crypto.EncryptedKeyfile.from_bytes(bytes(bad)))


def test_ciphertext_corruption_is_corrupt_keyfile(keys):
    kf = crypto.seal_keyfile(b"pw", keys[0], iterations=1000)
    bad = crypto.EncryptedKeyfile(kf.salt, kf.nonce, bytes([kf.ciphertext[0] ^ 1]) + kf.ciphertext[1:], kf.check, kf.iterations)
    with pytest.raises(CorruptKeyfile):
        crypto.open_keyfile(b"pw", bad)


def test_subkeys_differ_by_label(keys):
    a = crypto.derive_subkey(keys[0].private_key, b"one")
    b = crypto.derive_subkey(keys[0].private_key, b"two")
    assert a != b and a == crypto.derive_subkey(keys[0].private_key, b"one")
