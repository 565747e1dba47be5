"""Permissioned chain with round-robin Proof-of-Authority.

The registered hospitals are the authorities.  The signer of height ``h`` is
``authorities[h % len(authorities)]`` where the authority list is the
hospital registry as it stood before block ``h`` was applied.  There is no
fee or balance anywhere: acceptance depends only on signatures and nonces.

Every submission ends up in the log.  Transactions that fail signature or
nonce checks at submission are carried into the next block with a failure
status (and never touch contract state) so that rejected attempts are as
visible as accepted ones.

Canonical encoding (all integers big-endian, fields 4-byte length-prefixed):

* transaction: ``[sender, u8 contract, op, args, u64 nonce, signature]``
* header: ``"EHRB" u64 height, prev_hash(32), u64 timestamp, body_root(32),
  [authority]``
* body: ``[[authority_0, ...], [tx_0, status_0], [tx_1, status_1], ...]``
* block: ``[header, body, signature]``; block hash = SHA-256(header).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable

from . import crypto
from .contracts import Contracts
from .encoding import pack_fields, u8, u64, unpack_fields
from .errors import (
    BadNonce,
    BadSignature,
    ChainError,
    ChainVerificationError,
    EHRError,
    MalformedKey,
    NotAnAuthority,
    NotYourTurn,
)

OK = "ok"
ZERO_HASH = bytes(32)
_SUBMIT_REJECTIONS = ("BadSignature", "BadNonce")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    contract: int
    op: str
    args: bytes
    nonce: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return b"EHRT" + pack_fields(
            [self.sender, u8(self.contract), self.op.encode(), self.args, u64(self.nonce)]
        )

    def to_bytes(self) -> bytes:
        return pack_fields(
            [self.sender, u8(self.contract), self.op.encode(), self.args, u64(self.nonce), self.signature]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transaction":
        sender, contract, op, args, nonce, sig = unpack_fields(data, 6)
        if len(contract) != 1 or len(nonce) != 8:
            raise ValueError("bad fixed-width field")
        return cls(sender, contract[0], op.decode(), args, int.from_bytes(nonce, "big"), sig)

    @property
    def txid(self) -> str:
        return sha256(self.to_bytes()).hex()

    def signature_valid(self) -> bool:
        try:
            return crypto.verify(self.sender, self.signing_bytes(), self.signature)
        except MalformedKey:
            return False

    @classmethod
    def create(cls, kp: crypto.KeyPair, contract: int, op: str, args: Iterable[bytes], nonce: int) -> "Transaction":
        unsigned = cls(kp.public_key, int(contract), op, pack_fields(args), nonce)
        sig = crypto.sign(kp.private_key, unsigned.signing_bytes())
        return cls(unsigned.sender, unsigned.contract, op, unsigned.args, nonce, sig)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    authority: bytes
    entries: tuple[tuple[Transaction, str], ...]
    signature: bytes = b""
    genesis_authorities: tuple[bytes, ...] = ()

    def body_bytes(self) -> bytes:
        parts = [pack_fields(self.genesis_authorities)]
        parts += [pack_fields([tx.to_bytes(), status.encode()]) for tx, status in self.entries]
        return pack_fields(parts)

    def header_bytes(self) -> bytes:
        return (
            b"EHRB"
            + u64(self.height)
            + self.prev_hash
            + u64(self.timestamp)
            + sha256(self.body_bytes())
            + pack_fields([self.authority])
        )

    @property
    def hash(self) -> bytes:
        return sha256(self.header_bytes())

    def to_bytes(self) -> bytes:
        return pack_fields([self.header_bytes(), self.body_bytes(), self.signature])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        header, body, sig = unpack_fields(data, 3)
        if header[:4] != b"EHRB" or len(header) < 84:
            raise ValueError("bad header")
        height = int.from_bytes(header[4:12], "big")
        prev = header[12:44]
        ts = int.from_bytes(header[44:52], "big")
        root = header[52:84]
        (authority,) = unpack_fields(header[84:], 1)
        if sha256(body) != root:
            raise ValueError("body does not match header root")
        body_fields = unpack_fields(body)
        if not body_fields:
            raise ValueError("empty body")
        genesis = tuple(unpack_fields(body_fields[0]))
        entries = []
        for raw in body_fields[1:]:
            tx_bytes, status = unpack_fields(raw, 2)
            entries.append((Transaction.from_bytes(tx_bytes), status.decode()))
        block = cls(height, prev, ts, authority, tuple(entries), sig, genesis)
        if block.header_bytes() != header or block.body_bytes() != body:
            raise ValueError("non-canonical block encoding")
        return block

    def signed(self, kp: crypto.KeyPair) -> "Block":
        sig = crypto.sign(kp.private_key, self.header_bytes())
        return Block(self.height, self.prev_hash, self.timestamp, self.authority,
                     self.entries, sig, self.genesis_authorities)

    def signature_valid(self) -> bool:
        try:
            return crypto.verify(self.authority, self.header_bytes(), self.signature)
        except MalformedKey:
            return False


@dataclass(frozen=True)
class LogEntry:
    height: int
    tx: Transaction
    status: str

    @property
    def failed(self) -> bool:
        return self.status != OK


@dataclass
class _Pending:
    tx: Transaction
    rejection: str | None = None


class Chain:
    """Single-writer chain state: blocks, pending pool and contract registries."""

    def __init__(self, genesis_authority: crypto.KeyPair, authorities: Iterable[bytes] = (),
                 allow_empty_blocks: bool = False, timestamp: int = 0):
        auths = list(authorities) or [genesis_authority.public_key]
        if genesis_authority.public_key != auths[0]:
            raise NotYourTurn("genesis must be signed by the first authority")
        self.allow_empty_blocks = allow_empty_blocks
        self.contracts = Contracts(auths)
        self.blocks: list[Block] = []
        self._pending: list[_Pending] = []
        self._nonces: dict[bytes, int] = {}
        self._pending_nonces: dict[bytes, int] = {}
        genesis = Block(0, ZERO_HASH, timestamp, auths[0], (), b"", tuple(auths))
        self.blocks.append(genesis.signed(genesis_authority))

    # -- state views ---------------------------------------------------------

    @property
    def height(self) -> int:
        """Height of the newest block."""
        return len(self.blocks) - 1

    @property
    def authorities(self) -> list[bytes]:
        return list(self.contracts.state.hospitals)

    def expected_signer(self, height: int | None = None) -> bytes:
        if height is None:
            height = len(self.blocks)
        if height != len(self.blocks):
            raise ChainError("signer is only defined for the next height")
        auths = self.contracts.state.hospitals
        return auths[height % len(auths)]

    def next_nonce(self, sender: bytes) -> int:
        return self._pending_nonces.get(sender, self._nonces.get(sender, 0)) + 1

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    # -- writes --------------------------------------------------------------

    def submit_tx(self, tx: Transaction) -> None:
        """Queue ``tx``; rejected submissions are still queued, flagged as failed."""
        if not tx.signature_valid():
            self._pending.append(_Pending(tx, "BadSignature"))
            raise BadSignature("transaction signature invalid")
        if tx.nonce != self.next_nonce(tx.sender):
            self._pending.append(_Pending(tx, "BadNonce"))
            raise BadNonce(f"nonce {tx.nonce}, expected {self.next_nonce(tx.sender)}")
        self._pending_nonces[tx.sender] = tx.nonce
        self._pending.append(_Pending(tx))

    def mine_block(self, authority: crypto.KeyPair, timestamp: int | None = None) -> Block:
        pub = authority.public_key
        if pub not in self.contracts.state.hospitals:
            raise NotAnAuthority("key is not in the authority set")
        if pub != self.expected_signer():
            raise NotYourTurn("another authority signs this height")
        if not self._pending and not self.allow_empty_blocks:
            raise ChainError("no pending transactions")
        entries = []
        for item in self._pending:
            if item.rejection is not None:
                entries.append((item.tx, item.rejection))
                continue
            self._nonces[item.tx.sender] = item.tx.nonce
            entries.append((item.tx, _apply(self.contracts, item.tx)))
        self._pending.clear()
        self._pending_nonces.clear()
        height = len(self.blocks)
        block = Block(
            height,
            self.blocks[-1].hash,
            height if timestamp is None else timestamp,
            pub,
            tuple(entries),
        ).signed(authority)
        self.blocks.append(block)
        return block

    # -- reads ---------------------------------------------------------------

    def query_log(self, sender: bytes | None = None, contract: int | None = None,
                  op: str | None = None, failed: bool | None = None) -> list[LogEntry]:
        out = []
        for block in self.blocks:
            for tx, status in block.entries:
                if sender is not None and tx.sender != sender:
                    continue
                if contract is not None and tx.contract != contract:
                    continue
                if op is not None and tx.op != op:
                    continue
                if failed is not None and (status != OK) != failed:
                    continue
                out.append(LogEntry(block.height, tx, status))
        return out

    def log_length(self) -> int:
        return sum(len(b.entries) for b in self.blocks)

    # -- verification and export ---------------------------------------------

    def verify(self) -> Contracts:
        """Re-verify every block from genesis; return the replayed contract state."""
        return replay(self.blocks)

    def export_lines(self) -> list[str]:
        return [b.to_bytes().hex() for b in self.blocks]

    def headers(self) -> list[tuple[bytes, bytes]]:
        return [(b.header_bytes(), b.signature) for b in self.blocks]


def _apply(contracts: Contracts, tx: Transaction) -> str:
    try:
        contracts.apply(tx.sender, tx.contract, tx.op, tx.args)
    except EHRError as exc:
        return type(exc).__name__
    return OK


def replay(blocks: list[Block]) -> Contracts:
    """Verify links, signers, transactions and statuses; rebuild contract state."""
    if not blocks:
        raise ChainVerificationError("empty chain")
    genesis = blocks[0]
    if genesis.height != 0 or genesis.prev_hash != ZERO_HASH or not genesis.genesis_authorities:
        raise ChainVerificationError("malformed genesis")
    if genesis.entries or genesis.authority != genesis.genesis_authorities[0]:
        raise ChainVerificationError("malformed genesis")
    if not genesis.signature_valid():
        raise ChainVerificationError("genesis signature invalid")
    contracts = Contracts(list(genesis.genesis_authorities))
    nonces: dict[bytes, int] = {}
    prev = genesis
    for block in blocks[1:]:
        h = block.height
        if h != prev.height + 1 or block.prev_hash != prev.hash:
            raise ChainVerificationError(f"broken link at height {h}")
        if block.genesis_authorities:
            raise ChainVerificationError(f"authority list outside genesis at {h}")
        auths = contracts.state.hospitals
        if block.authority != auths[h % len(auths)]:
            raise ChainVerificationError(f"wrong signer at height {h}")
        if not block.signature_valid():
            raise ChainVerificationError(f"block signature invalid at height {h}")
        pool_nonces = dict(nonces)
        for tx, status in block.entries:
            sig_ok = tx.signature_valid()
            if status == "BadSignature":
                if sig_ok:
                    raise ChainVerificationError(f"valid tx flagged BadSignature at {h}")
                continue
            if not sig_ok:
                raise ChainVerificationError(f"unsigned transaction at height {h}")
            expected = pool_nonces.get(tx.sender, 0) + 1
            if status == "BadNonce":
                if tx.nonce == expected:
                    raise ChainVerificationError(f"in-order tx flagged BadNonce at {h}")
                continue
            if tx.nonce != expected:
                raise ChainVerificationError(f"nonce out of order at height {h}")
            pool_nonces[tx.sender] = tx.nonce
            if _apply(contracts, tx) != status:
                raise ChainVerificationError(f"status mismatch replaying height {h}")
        nonces = pool_nonces
        prev = block
    return contracts


def import_lines(lines: Iterable[str]) -> list[Block]:
    """Decode exported lines and verify them; raises ChainVerificationError."""
    blocks = []
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            blocks.append(Block.from_bytes(bytes.fromhex(line)))
        except (ValueError, UnicodeError) as exc:
            raise ChainVerificationError(f"undecodable block on line {i + 1}: {exc}") from exc
    replay(blocks)
    return blocks


@dataclass
class LightNode:
    """Holds headers only and defers state queries to a full node."""

    full_node: Chain
    headers: list[tuple[bytes, bytes]] = field(default_factory=list)

    def sync(self) -> int:
        new = self.full_node.headers()[len(self.headers):]
        prev_hash = sha256(self.headers[-1][0]) if self.headers else ZERO_HASH
        for header, sig in new:
            if header[12:44] != prev_hash:
                raise ChainVerificationError("header chain broken")
            (authority,) = unpack_fields(header[84:], 1)
            if not crypto.verify(authority, header, sig):
                raise ChainVerificationError("header signature invalid")
            prev_hash = sha256(header)
        self.headers.extend(new)
        return len(self.headers)

    def mine_block(self, *args, **kwargs):
        raise NotAnAuthority("light nodes never mine")

    def record_list(self, patient_pub: bytes):
        return self.full_node.contracts.record_list(patient_pub)

    def access_list(self, ck: bytes):
        return self.full_node.contracts.access_list(ck)
