"""Key derivation, hybrid record envelopes, signatures and sealed keyfiles.

All actors use secp256k1 keys (the curve of Ethereum accounts).  A single
keypair both signs transactions and receives encrypted records:

* records are wrapped in an ECIES-style envelope: an ephemeral ECDH share
  wraps a fresh AES-256-GCM session key that encrypts the body;
* signatures are deterministic ECDSA over SHA-256;
* keyfiles are sealed with AES-256-GCM under a PBKDF2-stretched password.

Every function that needs randomness takes a ``randbytes`` callable so the
simulator can drive it from a seeded generator.  The default is
:func:`os.urandom`.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass, field
from typing import Callable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from .encoding import pack_fields, u32, unpack_fields
from .errors import (
    CorruptKeyfile,
    DecryptionFailure,
    MalformedKey,
    SecretTooShort,
    WrongPassword,
)

RandBytes = Callable[[int], bytes]

CURVE = ec.SECP256K1()
CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
PUBLIC_KEY_SIZE = 33  # SEC1 compressed point
PRIVATE_KEY_SIZE = 32
MIN_SECRET_LENGTH = 16

KDF_ITERATIONS = 200_000
# Upper bound accepted when opening, so a tampered count cannot stall the KDF.
MAX_KDF_ITERATIONS = 1_000_000
KEYFILE_VERSION = 1
CIPHERTEXT_VERSION = 1
_SALT_SIZE = 16
_NONCE_SIZE = 12

_FINGERPRINT_SALT = b"ehrchain/fingerprint-key/v1"


@dataclass(frozen=True)
class Fingerprint:
    """Simulated biometric: an opaque secret byte string."""

    secret: bytes = field(repr=False)

    @classmethod
    def from_text(cls, text: str) -> "Fingerprint":
        return cls(text.encode("utf-8"))


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.private_key) != PRIVATE_KEY_SIZE:
            raise MalformedKey("private key must be 32 bytes")
        if public_from_private(self.private_key) != self.public_key:
            raise MalformedKey("public key does not match private key")


@dataclass(frozen=True)
class Ciphertext:
    ephemeral_public: bytes
    sealed_key: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return bytes([CIPHERTEXT_VERSION]) + pack_fields(
            [self.ephemeral_public, self.sealed_key, self.body]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if not data or data[0] != CIPHERTEXT_VERSION:
            raise DecryptionFailure("unknown envelope format")
        try:
            eph, sealed, body = unpack_fields(data[1:], 3)
        except ValueError as exc:
            raise DecryptionFailure(str(exc)) from exc
        return cls(eph, sealed, body)


@dataclass(frozen=True)
class EncryptedKeyfile:
    salt: bytes
    nonce: bytes
    ciphertext: bytes
    check: bytes
    iterations: int = KDF_ITERATIONS

    def _header(self) -> bytes:
        return bytes([KEYFILE_VERSION]) + u32(self.iterations) + self.salt

    def to_bytes(self) -> bytes:
        return bytes([KEYFILE_VERSION]) + pack_fields(
            [u32(self.iterations), self.salt, self.check, self.nonce, self.ciphertext]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedKeyfile":
        if not data or data[0] != KEYFILE_VERSION:
            raise CorruptKeyfile("unknown keyfile format")
        try:
            it, salt, check, nonce, ct = unpack_fields(data[1:], 5)
        except ValueError as exc:
            raise CorruptKeyfile(str(exc)) from exc
        if len(it) != 4:
            raise CorruptKeyfile("bad iteration field")
        return cls(salt, nonce, ct, check, int.from_bytes(it, "big"))


# -- keys --------------------------------------------------------------------


def _scalar_to_private(scalar: int) -> ec.EllipticCurvePrivateKey:
    return ec.derive_private_key(scalar, CURVE)


def _load_private(private_key: bytes) -> ec.EllipticCurvePrivateKey:
    scalar = int.from_bytes(private_key, "big")
    if not 0 < scalar < CURVE_ORDER:
        raise MalformedKey("private scalar out of range")
    return _scalar_to_private(scalar)


def _load_public(public_key: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, public_key)
    except (ValueError, TypeError) as exc:
        raise MalformedKey("not a secp256k1 public key") from exc


def _encode_public(key: ec.EllipticCurvePublicKey) -> bytes:
    return key.public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
    )


def public_from_private(private_key: bytes) -> bytes:
    return _encode_public(_load_private(private_key).public_key())


def is_public_key(data: bytes) -> bool:
    try:
        _load_public(data)
    except MalformedKey:
        return False
    return True


def _keypair_from_stream(next_candidate: Callable[[], bytes]) -> KeyPair:
    while True:
        candidate = next_candidate()
        scalar = int.from_bytes(candidate, "big")
        if 0 < scalar < CURVE_ORDER:
            priv = scalar.to_bytes(PRIVATE_KEY_SIZE, "big")
            return KeyPair(public_from_private(priv), priv)


def generate_keypair(randbytes: RandBytes = os.urandom) -> KeyPair:
    return _keypair_from_stream(lambda: randbytes(PRIVATE_KEY_SIZE))


def _hkdf(secret: bytes, info: bytes, length: int = 32, salt: bytes | None = None) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(secret)


def derive_keypair(fp: Fingerprint) -> KeyPair:
    """Derive the account keypair from a fingerprint secret.

    The same secret always yields the same keypair.  Candidates outside the
    curve order are skipped with a counter, which happens with probability
    around 2**-128.
    """
    if len(fp.secret) < MIN_SECRET_LENGTH:
        raise SecretTooShort(
            f"fingerprint secret must be at least {MIN_SECRET_LENGTH} bytes"
        )
    counter = iter(range(2**32))

    def candidate() -> bytes:
        info = b"account-key" + u32(next(counter))
        return _hkdf(fp.secret, info, salt=_FINGERPRINT_SALT)

    return _keypair_from_stream(candidate)


def derive_subkey(private_key: bytes, label: bytes) -> KeyPair:
    """Deterministic child keypair of an account key, one per ``label``."""
    counter = iter(range(2**32))
    return _keypair_from_stream(
        lambda: _hkdf(private_key, b"subkey" + u32(next(counter)) + label)
    )


def fingerprint_password(fp: Fingerprint) -> bytes:
    """Keyfile password derived from the fingerprint, independent of the account key."""
    if len(fp.secret) < MIN_SECRET_LENGTH:
        raise SecretTooShort("fingerprint secret too short")
    return _hkdf(fp.secret, b"keyfile-password", salt=_FINGERPRINT_SALT)


def fingerprint_digest(fp: Fingerprint, registry_salt: bytes) -> bytes:
    """Salted digest used to detect duplicate registrations."""
    return hmac.new(registry_salt, fp.secret, hashlib.sha256).digest()


# -- envelopes ---------------------------------------------------------------


def _kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return _hkdf(shared, b"envelope-kek" + eph_pub + recipient_pub)


def asym_encrypt(pub: bytes, plaintext: bytes, randbytes: RandBytes = os.urandom) -> Ciphertext:
    recipient = _load_public(pub)
    eph = generate_keypair(randbytes)
    shared = _load_private(eph.private_key).exchange(ec.ECDH(), recipient)
    kek = _kek(shared, eph.public_key, pub)
    session_key = randbytes(32)
    key_nonce = randbytes(_NONCE_SIZE)
    body_nonce = randbytes(_NONCE_SIZE)
    sealed = key_nonce + AESGCM(kek).encrypt(key_nonce, session_key, eph.public_key)
    body = body_nonce + AESGCM(session_key).encrypt(body_nonce, plaintext, eph.public_key)
    return Ciphertext(eph.public_key, sealed, body)


def asym_decrypt(priv: bytes, ct: Ciphertext) -> bytes:
    key = _load_private(priv)
    try:
        eph = _load_public(ct.ephemeral_public)
    except MalformedKey as exc:
        raise DecryptionFailure("bad ephemeral key") from exc
    shared = key.exchange(ec.ECDH(), eph)
    kek = _kek(shared, ct.ephemeral_public, _encode_public(key.public_key()))
    try:
        session_key = AESGCM(kek).decrypt(
            ct.sealed_key[:_NONCE_SIZE], ct.sealed_key[_NONCE_SIZE:], ct.ephemeral_public
        )
        return AESGCM(session_key).decrypt(
            ct.body[:_NONCE_SIZE], ct.body[_NONCE_SIZE:], ct.ephemeral_public
        )
    except (InvalidTag, ValueError) as exc:
        raise DecryptionFailure("envelope does not open under this key") from exc


# -- signatures --------------------------------------------------------------

_ECDSA_SIGN = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
_ECDSA_VERIFY = ec.ECDSA(hashes.SHA256())


def sign(priv: bytes, message: bytes) -> bytes:
    return _load_private(priv).sign(message, _ECDSA_SIGN)


def verify(pub: bytes, message: bytes, sig: bytes) -> bool:
    key = _load_public(pub)
    try:
        key.verify(sig, message, _ECDSA_VERIFY)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- keyfiles ----------------------------------------------------------------


def _stretch(password: bytes, salt: bytes, iterations: int) -> tuple[bytes, bytes]:
    material = PBKDF2HMAC(
        algorithm=hashes.SHA256(), length=64, salt=salt, iterations=iterations
    ).derive(password)
    return material[:32], material[32:]


def seal_keyfile(
    password: bytes,
    kp: KeyPair,
    randbytes: RandBytes = os.urandom,
    iterations: int = KDF_ITERATIONS,
) -> EncryptedKeyfile:
    if not password:
        raise WrongPassword("password must be non-empty")
    if not 1 <= iterations <= MAX_KDF_ITERATIONS:
        raise ValueError(f"iterations must be in 1..{MAX_KDF_ITERATIONS}")
    salt = randbytes(_SALT_SIZE)
    nonce = randbytes(_NONCE_SIZE)
    key, check = _stretch(password, salt, iterations)
    shell = EncryptedKeyfile(salt, nonce, b"", check, iterations)
    ct = AESGCM(key).encrypt(nonce, kp.private_key + kp.public_key, shell._header())
    return EncryptedKeyfile(salt, nonce, ct, check, iterations)


def open_keyfile(password: bytes, kf: EncryptedKeyfile) -> KeyPair:
    """Recover the keypair; WrongPassword vs CorruptKeyfile is decided by the check value."""
    if not password:
        raise WrongPassword("password must be non-empty")
    if not 1 <= kf.iterations <= MAX_KDF_ITERATIONS or len(kf.nonce) != _NONCE_SIZE:
        raise CorruptKeyfile("malformed keyfile header")
    key, check = _stretch(password, kf.salt, kf.iterations)
    if not hmac.compare_digest(check, kf.check):
        raise WrongPassword("keyfile does not open with this password")
    try:
        plain = AESGCM(key).decrypt(kf.nonce, kf.ciphertext, kf._header())
    except InvalidTag as exc:
        raise CorruptKeyfile("keyfile failed authentication") from exc
    try:
        return KeyPair(plain[PRIVATE_KEY_SIZE:], plain[:PRIVATE_KEY_SIZE])
    except MalformedKey as exc:
        raise CorruptKeyfile("keyfile holds an inconsistent keypair") from exc
