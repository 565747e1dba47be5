"""Content-addressed object network.

Objects are addressed by the base58 text of a SHA-256 multihash (the
46-character ``Qm...`` form).  Each node keeps a local object store; the
provider index is simply the set of nodes holding a copy.  Nodes can go
offline, in which case they still hold their copies but cannot serve them.

Transfer cost is tracked in simulated ticks.  The latency of a link is a
deterministic function of the network seed and the two node ids, so the cost
of any fetch is reproducible regardless of operation order.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from pathlib import Path

import base58

from . import crypto
from .encoding import u64
from .errors import (
    BadSignature,
    InsufficientNodes,
    NodeOffline,
    NoOnlineProvider,
    NotAProvider,
    StaleSequence,
    UnknownHash,
    UnknownName,
    UnknownNode,
)

SHA2_256 = 0x12
DIGEST_SIZE = 0x20
HASH_TEXT_LENGTH = 46
ALPHABET = base58.BITCOIN_ALPHABET.decode("ascii")

ContentHash = str
NodeId = str


def content_hash(data: bytes) -> ContentHash:
    """Multihash (sha2-256) of ``data`` rendered in base58."""
    mh = bytes([SHA2_256, DIGEST_SIZE]) + hashlib.sha256(data).digest()
    return base58.b58encode(mh).decode("ascii")


def decode_content_hash(text: str) -> bytes:
    """Return the 34-byte multihash; ValueError if ``text`` is not one."""
    if len(text) != HASH_TEXT_LENGTH:
        raise ValueError(f"content hash must be {HASH_TEXT_LENGTH} characters")
    raw = base58.b58decode(text)
    if len(raw) != 2 + DIGEST_SIZE or raw[0] != SHA2_256 or raw[1] != DIGEST_SIZE:
        raise ValueError("not a sha2-256 multihash")
    return raw


def is_content_hash(text: str) -> bool:
    try:
        decode_content_hash(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class StoredObject:
    data: bytes
    hash: ContentHash


@dataclass(frozen=True)
class IpnsName:
    """A signed pointer from a key-derived name to a content hash."""

    name: str
    current: ContentHash
    sequence: int
    public_key: bytes
    signature: bytes

    def signed_bytes(self) -> bytes:
        return ipns_signed_bytes(self.name, self.current, self.sequence)


def ipns_name_for(public_key: bytes) -> str:
    return content_hash(b"ipns-key:" + public_key)


def ipns_signed_bytes(name: str, current: ContentHash, sequence: int) -> bytes:
    return b"ipns|" + name.encode() + b"|" + current.encode() + b"|" + u64(sequence)


class Network:
    """A set of storage nodes sharing one provider index."""

    def __init__(
        self,
        seed: int = 0,
        latency_range: tuple[int, int] = (5, 40),
        bytes_per_tick: int = 4096,
    ):
        self.seed = seed
        self.rng = random.Random(seed)
        self.latency_range = latency_range
        self.bytes_per_tick = bytes_per_tick
        self._online: dict[NodeId, bool] = {}
        self._stores: dict[NodeId, dict[ContentHash, StoredObject]] = {}
        self._providers: dict[ContentHash, set[NodeId]] = {}
        self._names: dict[str, IpnsName] = {}
        self.ticks = 0

    # -- membership ----------------------------------------------------------

    def add_node(self, node: NodeId, online: bool = True) -> None:
        if node not in self._online:
            self._stores[node] = {}
        self._online[node] = online

    def set_online(self, node: NodeId, online: bool) -> None:
        self._require(node)
        self._online[node] = online

    def is_online(self, node: NodeId) -> bool:
        return self._online.get(node, False)

    @property
    def nodes(self) -> list[NodeId]:
        return sorted(self._online)

    def online_nodes(self) -> list[NodeId]:
        return sorted(n for n, up in self._online.items() if up)

    def _require(self, node: NodeId) -> None:
        if node not in self._online:
            raise UnknownNode(node)

    def _require_online(self, node: NodeId) -> None:
        self._require(node)
        if not self._online[node]:
            raise NodeOffline(node)

    # -- latency -------------------------------------------------------------

    def link_latency(self, a: NodeId, b: NodeId) -> int:
        if a == b:
            return 0
        lo, hi = self.latency_range
        x, y = sorted((a, b))
        h = hashlib.sha256(f"{self.seed}|{x}|{y}".encode()).digest()
        return lo + int.from_bytes(h[:8], "big") % (hi - lo + 1)

    def transfer_cost(self, src: NodeId, dst: NodeId, size: int) -> int:
        if src == dst:
            return 0
        return self.link_latency(src, dst) + math.ceil(size / self.bytes_per_tick)

    # -- objects -------------------------------------------------------------

    def put(self, node: NodeId, data: bytes) -> ContentHash:
        self._require_online(node)
        h = content_hash(data)
        self._stores[node][h] = StoredObject(bytes(data), h)
        self._providers.setdefault(h, set()).add(node)
        return h

    def has_local(self, node: NodeId, h: ContentHash) -> bool:
        return h in self._stores.get(node, {})

    def get(self, node: NodeId, h: ContentHash) -> bytes:
        """Fetch ``h`` for ``node``; the fetcher becomes a provider afterwards."""
        self._require_online(node)
        if h in self._stores[node]:
            return self._stores[node][h].data
        providers = self._providers.get(h)
        if providers is None:
            raise UnknownHash(h)
        online = sorted(p for p in providers if self._online[p])
        if not online:
            raise NoOnlineProvider(h)
        source = min(online, key=lambda p: (self.link_latency(node, p), p))
        obj = self._stores[source][h]
        self.ticks += self.transfer_cost(source, node, len(obj.data))
        self._stores[node][h] = obj
        providers.add(node)
        return obj.data

    def find_providers(self, h: ContentHash) -> set[NodeId]:
        return set(self._providers.get(h, ()))

    def remove_local(self, node: NodeId, h: ContentHash) -> None:
        self._require(node)
        if h not in self._stores[node]:
            raise NotAProvider(f"{node} holds no copy of {h}")
        del self._stores[node][h]
        self._providers[h].discard(node)

    def replicate(self, h: ContentHash, factor: int) -> set[NodeId]:
        """Copy ``h`` to randomly chosen online nodes until ``factor`` providers exist."""
        if factor < 1:
            raise ValueError("replication factor must be positive")
        providers = self._providers.get(h, set())
        online_providers = sorted(p for p in providers if self._online[p])
        if not online_providers:
            raise NoOnlineProvider(h)
        online = self.online_nodes()
        if factor > len(online):
            raise InsufficientNodes(f"factor {factor} > {len(online)} online nodes")
        missing = factor - len(providers)
        if missing > 0:
            candidates = [n for n in online if n not in providers]
            obj = self._stores[online_providers[0]][h]
            for node in self.rng.sample(candidates, missing):
                self.ticks += self.transfer_cost(online_providers[0], node, len(obj.data))
                self._stores[node][h] = obj
                providers.add(node)
        return set(providers)

    # -- mutable names -------------------------------------------------------

    def ipns_publish(self, kp: crypto.KeyPair, h: ContentHash) -> IpnsName:
        name = ipns_name_for(kp.public_key)
        prev = self._names.get(name)
        seq = 1 if prev is None else prev.sequence + 1
        sig = crypto.sign(kp.private_key, ipns_signed_bytes(name, h, seq))
        record = IpnsName(name, h, seq, kp.public_key, sig)
        self.ipns_put(record)
        return record

    def ipns_put(self, record: IpnsName) -> None:
        """Accept a name record from anyone, provided it is signed and fresh."""
        if ipns_name_for(record.public_key) != record.name:
            raise BadSignature("name is not derived from the signing key")
        if not crypto.verify(record.public_key, record.signed_bytes(), record.signature):
            raise BadSignature("name record signature invalid")
        prev = self._names.get(record.name)
        if prev is not None and record.sequence <= prev.sequence:
            raise StaleSequence(f"sequence {record.sequence} <= {prev.sequence}")
        self._names[record.name] = record

    def ipns_resolve(self, name: str) -> ContentHash:
        try:
            return self._names[name].current
        except KeyError:
            raise UnknownName(name) from None

    def is_name(self, text: str) -> bool:
        return text in self._names

    # -- persistence ---------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write objects as files named by hash plus a ``hash<TAB>node`` index."""
        root = Path(directory)
        (root / "objects").mkdir(parents=True, exist_ok=True)
        for h in sorted(self._providers):
            holders = sorted(self._providers[h])
            if holders:
                (root / "objects" / h).write_bytes(self._stores[holders[0]][h].data)
        lines = [
            f"{h}\t{node}"
            for h in sorted(self._providers)
            for node in sorted(self._providers[h])
        ]
        (root / "providers.tsv").write_text("".join(line + "\n" for line in lines))

    def load(self, directory: str | Path) -> None:
        root = Path(directory)
        for line in (root / "providers.tsv").read_text().splitlines():
            if not line.strip():
                continue
            h, node = line.split("\t")
            data = (root / "objects" / h).read_bytes()
            if content_hash(data) != h:
                raise UnknownHash(f"object file {h} does not match its name")
            self.add_node(node, self._online.get(node, True))
            self._stores[node][h] = StoredObject(data, h)
            self._providers.setdefault(h, set()).add(node)


class CentralStore:
    """Single key-value server standing in for a centralized database.

    Every request pays the same round-trip cost; there is no provider set.
    """

    def __init__(self, round_trip: int = 20, bytes_per_tick: int = 4096):
        self.round_trip = round_trip
        self.bytes_per_tick = bytes_per_tick
        self._objects: dict[ContentHash, bytes] = {}
        self.ticks = 0

    def add_node(self, node: NodeId, online: bool = True) -> None:
        pass

    def put(self, node: NodeId, data: bytes) -> ContentHash:
        h = content_hash(data)
        self._objects[h] = bytes(data)
        return h

    def get(self, node: NodeId, h: ContentHash) -> bytes:
        try:
            data = self._objects[h]
        except KeyError:
            raise UnknownHash(h) from None
        self.ticks += self.round_trip + math.ceil(len(data) / self.bytes_per_tick)
        return data

    def has_local(self, node: NodeId, h: ContentHash) -> bool:
        return False

    def find_providers(self, h: ContentHash) -> set[NodeId]:
        return {"central"} if h in self._objects else set()

    def is_name(self, text: str) -> bool:
        return False
