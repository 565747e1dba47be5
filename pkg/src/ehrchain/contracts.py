"""On-chain registries and the two-part hash codec.

Three contract state machines live here, plus the hospital registry and the
map-pointer contract used when the patient-key map is kept off-chain:

=====  ==============================================================
id     registry
=====  ==============================================================
0      governance: registered hospitals (also the mining authorities)
1      records: patient public key -> list of HashParts
2      access: combined patient||hospital key -> list of HashParts
3      disease statistics: disease (and location, disease) -> count
4      map pointer: content hash of the off-chain patient-key map
5      access log: no state, records that somebody read something
=====  ==============================================================

State only changes inside :meth:`Contracts.apply`, which the chain calls for
every mined transaction.  A rejected call raises a :class:`ContractError`
subclass and leaves the state untouched.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from . import crypto
from .cas import ALPHABET, HASH_TEXT_LENGTH
from .encoding import unpack_fields
from .errors import (
    BadHashLength,
    BatchTooSmall,
    ContractError,
    EmptyPointer,
    InvalidPatientSignature,
    MalformedKey,
    MalformedPart,
    NonBase58Character,
    NoSuchEntry,
    StaleMap,
    UnknownOperation,
    UnregisteredHospital,
)

PART_WIDTH = 32
FRAGMENT_LENGTH = 24
SPLIT_AT = 23
_B58 = frozenset(ALPHABET)


class Contract(enum.IntEnum):
    GOVERNANCE = 0
    RECORDS = 1
    ACCESS = 2
    STATS = 3
    MAP_POINTER = 4
    ACCESS_LOG = 5


# -- hash codec --------------------------------------------------------------


@dataclass(frozen=True)
class HashParts:
    part1: bytes
    part2: bytes

    def fragments(self) -> tuple[str, str]:
        return _fragment(self.part1), _fragment(self.part2)

    def text(self) -> str:
        """The comma-joined form a contract query returns."""
        return ",".join(self.fragments())

    @classmethod
    def from_text(cls, text: str) -> "HashParts":
        pieces = text.split(",")
        if len(pieces) != 2:
            raise MalformedPart("expected two comma-separated fragments")
        return cls(*(_to_bytes32(p) for p in pieces))


def _to_bytes32(fragment: str) -> bytes:
    raw = fragment.encode("ascii")
    if len(raw) > PART_WIDTH:
        raise MalformedPart("fragment wider than 32 bytes")
    return raw.ljust(PART_WIDTH, b"\0")


def _fragment(part: bytes) -> str:
    if len(part) != PART_WIDTH:
        raise MalformedPart(f"part must be {PART_WIDTH} bytes")
    body = part.rstrip(b"\0")
    if b"\0" in body:
        raise MalformedPart("padding byte inside fragment")
    if len(body) != FRAGMENT_LENGTH:
        raise MalformedPart(f"fragment must be {FRAGMENT_LENGTH} characters")
    try:
        text = body.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedPart("fragment is not ASCII") from None
    if not set(text) <= _B58:
        raise MalformedPart("fragment is not base58")
    return text


def split_hash(h: str, rng: random.Random) -> HashParts:
    """Split a 46-character hash into two 32-byte fields.

    Each half gets one random base58 character appended before it is
    right-padded with zero bytes.
    """
    if len(h) != HASH_TEXT_LENGTH:
        raise BadHashLength(f"hash must be {HASH_TEXT_LENGTH} characters, got {len(h)}")
    if not set(h) <= _B58:
        raise NonBase58Character(h)
    p1 = h[:SPLIT_AT] + rng.choice(ALPHABET)
    p2 = h[SPLIT_AT:] + rng.choice(ALPHABET)
    return HashParts(_to_bytes32(p1), _to_bytes32(p2))


def join_hash(parts: HashParts) -> str:
    f1, f2 = parts.fragments()
    return f1[:-1] + f2[:-1]


def join_hash_text(text: str) -> str:
    return join_hash(HashParts.from_text(text))


# -- combined keys -----------------------------------------------------------


def combine_keys(patient_pub: bytes, hospital_pub: bytes) -> bytes:
    return patient_pub + hospital_pub


def split_combined(ck: bytes) -> tuple[bytes, bytes]:
    n = crypto.PUBLIC_KEY_SIZE
    if len(ck) != 2 * n:
        raise MalformedKey(f"combined key must be {2 * n} bytes")
    return ck[:n], ck[n:]


# -- state -------------------------------------------------------------------


@dataclass
class ContractState:
    hospitals: list[bytes] = field(default_factory=list)
    records: dict[bytes, list[HashParts]] = field(default_factory=dict)
    access: dict[bytes, list[HashParts]] = field(default_factory=dict)
    stats: dict[str, int] = field(default_factory=dict)
    stats_by_location: dict[tuple[str, str], int] = field(default_factory=dict)
    map_pointer: str | None = None


def _check_sig(pub: bytes, message: bytes, sig: bytes) -> None:
    try:
        ok = crypto.verify(pub, message, sig)
    except MalformedKey:
        ok = False
    if not ok:
        raise InvalidPatientSignature("patient signature does not verify")


class Contracts:
    """The full set of registries driven by mined transactions."""

    def __init__(self, hospitals: list[bytes] | tuple[bytes, ...] = ()):
        self.state = ContractState(hospitals=list(hospitals))

    # -- dispatch ------------------------------------------------------------

    def apply(self, sender: bytes, contract: int, op: str, args: bytes) -> None:
        try:
            contract = Contract(contract)
        except ValueError:
            raise UnknownOperation(f"no contract {contract}") from None
        try:
            handler = _HANDLERS[(contract, op)]
        except KeyError:
            raise UnknownOperation(f"{contract.name}.{op}") from None
        try:
            handler(self, sender, unpack_fields(args))
        except (ValueError, UnicodeError) as exc:
            raise MalformedPart(f"undecodable arguments: {exc}") from exc

    def _do_add_hospital(self, sender, fields):
        self._require_hospital(sender)
        (pub,) = _arity(fields, 1)
        if not crypto.is_public_key(pub):
            raise MalformedKey("hospital key malformed")
        self.add_hospital(pub)

    def _do_store(self, sender, fields):
        patient_pub, p1, p2, sig = _arity(fields, 4)
        self.record_store(patient_pub, HashParts(p1, p2), sig, sender)

    def _do_grant(self, sender, fields):
        ck, p1, p2, sig = _arity(fields, 4)
        self.access_grant(ck, HashParts(p1, p2), sig)

    def _do_revoke(self, sender, fields):
        ck, sig_ck, sig_h, p1, p2 = _arity(fields, 5)
        self.access_revoke(ck, sig_ck, sig_h, HashParts(p1, p2))

    def _do_stats(self, sender, fields):
        if not fields:
            raise MalformedPart("empty stats update")
        strict = fields[0] == b"\x01"
        flat = [f.decode("utf-8") for f in fields[1:]]
        if len(flat) % 2:
            raise MalformedPart("stats entries come in (disease, location) pairs")
        updates = [(flat[i], flat[i + 1] or None) for i in range(0, len(flat), 2)]
        self.stats_update(updates, strict, sender)

    def _do_map_set(self, sender, fields):
        expected, new, patient_pub, record_hash, sig = _arity(fields, 5)
        self.map_pointer_set(
            new.decode("ascii"),
            sender,
            expected=expected.decode("ascii") or None,
            patient_pub=patient_pub,
            record_hash=record_hash.decode("ascii"),
            patient_sig=sig,
        )

    def _do_log(self, sender, fields):
        pass

    # -- registry ------------------------------------------------------------

    def is_hospital(self, pub: bytes) -> bool:
        return pub in self.state.hospitals

    def _require_hospital(self, pub: bytes) -> None:
        if pub not in self.state.hospitals:
            raise UnregisteredHospital("sender is not a registered hospital")

    def add_hospital(self, pub: bytes) -> None:
        if pub in self.state.hospitals:
            raise ContractError("hospital already registered")
        self.state.hospitals.append(pub)

    # -- contract 1 ----------------------------------------------------------

    def record_store(self, patient_pub: bytes, parts: HashParts, patient_sig: bytes, sender: bytes) -> None:
        h = join_hash(parts)
        self._require_hospital(sender)
        _check_sig(patient_pub, h.encode("ascii"), patient_sig)
        self.state.records.setdefault(patient_pub, []).append(parts)

    def record_list(self, patient_pub: bytes) -> list[HashParts]:
        return list(self.state.records.get(patient_pub, ()))

    def record_list_text(self, patient_pub: bytes) -> list[str]:
        return [p.text() for p in self.record_list(patient_pub)]

    # -- contract 2 ----------------------------------------------------------

    def access_grant(self, ck: bytes, parts: HashParts, patient_sig: bytes) -> None:
        patient_pub, _ = split_combined(ck)
        h = join_hash(parts)
        _check_sig(patient_pub, h.encode("ascii"), patient_sig)
        self.state.access.setdefault(ck, []).append(parts)

    def access_revoke(self, ck: bytes, sig_ck: bytes, sig_hkey: bytes, parts: HashParts) -> None:
        patient_pub, hospital_pub = split_combined(ck)
        target = join_hash(parts)
        _check_sig(patient_pub, ck, sig_ck)
        _check_sig(patient_pub, hospital_pub, sig_hkey)
        entries = self.state.access.get(ck, [])
        for i, entry in enumerate(entries):
            if join_hash(entry) == target:
                del entries[i]
                if not entries:
                    del self.state.access[ck]
                return
        raise NoSuchEntry(f"no grant of {target}")

    def access_list(self, ck: bytes) -> list[HashParts]:
        return list(self.state.access.get(ck, ()))

    def access_list_text(self, ck: bytes) -> list[str]:
        return [p.text() for p in self.access_list(ck)]

    # -- contract 3 ----------------------------------------------------------

    def stats_update(self, updates: list[tuple[str, str | None]], strict: bool, sender: bytes) -> None:
        self._require_hospital(sender)
        if not updates:
            raise BatchTooSmall("empty update")
        if strict and len({d for d, _ in updates}) < 2:
            raise BatchTooSmall("strict mode needs at least two distinct diseases")
        for disease, location in updates:
            self.state.stats[disease] = self.state.stats.get(disease, 0) + 1
            if location:
                key = (location, disease)
                self.state.stats_by_location[key] = self.state.stats_by_location.get(key, 0) + 1

    def stats_get(self, disease: str, location: str | None = None) -> int:
        if location is None:
            return self.state.stats.get(disease, 0)
        return self.state.stats_by_location.get((location, disease), 0)

    # -- contract 4 ----------------------------------------------------------

    def map_pointer_get(self) -> str:
        if self.state.map_pointer is None:
            raise EmptyPointer("map pointer never set")
        return self.state.map_pointer

    def map_pointer_set(
        self,
        h: str,
        sender: bytes,
        expected: str | None = None,
        patient_pub: bytes | None = None,
        record_hash: str | None = None,
        patient_sig: bytes | None = None,
    ) -> None:
        """Replace the pointer (compare-and-swap on ``expected``).

        When the new map adds a record entry, the patient signature over that
        record hash is checked exactly as for a direct ``record_store``.
        """
        self._require_hospital(sender)
        if len(h) != HASH_TEXT_LENGTH:
            raise BadHashLength("map pointer must be a content hash")
        if self.state.map_pointer != expected:
            raise StaleMap("pointer changed since the map was fetched")
        if record_hash:
            _check_sig(patient_pub or b"", record_hash.encode("ascii"), patient_sig or b"")
        self.state.map_pointer = h

    # -- serialization -------------------------------------------------------

    def dump(self) -> str:
        """Canonical sorted text dump, one mapping entry per line."""
        s = self.state
        lines = [f"hospital\t{i}\t{pub.hex()}" for i, pub in enumerate(s.hospitals)]
        for pub in sorted(s.records):
            lines += [
                f"record\t{pub.hex()}\t{i}\t{p.text()}" for i, p in enumerate(s.records[pub])
            ]
        for ck in sorted(s.access):
            lines += [f"access\t{ck.hex()}\t{i}\t{p.text()}" for i, p in enumerate(s.access[ck])]
        lines += [f"stats\t{d}\t{n}" for d, n in sorted(s.stats.items())]
        lines += [
            f"stats_location\t{loc}\t{d}\t{n}"
            for (loc, d), n in sorted(s.stats_by_location.items())
        ]
        if s.map_pointer is not None:
            lines.append(f"map_pointer\t{s.map_pointer}")
        return "".join(line + "\n" for line in lines)


def _arity(fields: list[bytes], n: int) -> list[bytes]:
    if len(fields) != n:
        raise MalformedPart(f"expected {n} arguments, got {len(fields)}")
    return fields


_HANDLERS = {
    (Contract.GOVERNANCE, "add_hospital"): Contracts._do_add_hospital,
    (Contract.RECORDS, "store"): Contracts._do_store,
    (Contract.ACCESS, "grant"): Contracts._do_grant,
    (Contract.ACCESS, "revoke"): Contracts._do_revoke,
    (Contract.STATS, "update"): Contracts._do_stats,
    (Contract.MAP_POINTER, "set"): Contracts._do_map_set,
    (Contract.ACCESS_LOG, "access"): Contracts._do_log,
}


def encode_stats_args(updates: list[tuple[str, str | None]], strict: bool) -> list[bytes]:
    flat = [x.encode("utf-8") for d, loc in updates for x in (d, loc or "")]
    return [b"\x01" if strict else b"\x00"] + flat


__all__ = [
    "Contract",
    "ContractState",
    "Contracts",
    "HashParts",
    "combine_keys",
    "encode_stats_args",
    "join_hash",
    "join_hash_text",
    "split_combined",
    "split_hash",
]
