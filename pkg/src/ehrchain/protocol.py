"""Patient and hospital workflows on top of the chain and the object network.

:class:`System` is one simulated deployment: a permissioned chain whose
authorities are the registered hospitals, a content-addressed object network
in which every actor runs a node, and the off-chain directory that maps
patient and hospital ids to public keys and holds server-side keyfile copies.

Every workflow that writes to a contract submits a transaction and mines it
immediately with the authority whose turn it is; a rejected contract call
surfaces as the matching exception after the (failed) transaction has been
logged.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import crypto
from .cas import CentralStore, ContentHash, Network, NodeId
from .chain import OK, Chain, LogEntry, Transaction
from .contracts import Contract, combine_keys, encode_stats_args, join_hash, split_hash
from .errors import (
    FAILURE_CODES,
    ContractError,
    DuplicateFingerprint,
    EmptyPointer,
    NoSuchGrant,
    NoSuchRecord,
    NotApproved,
    ProtocolError,
    StaleMap,
    UnknownHospital,
    UnknownPatient,
    UnregisteredHospital,
)
from .privacy import STRICT2, BatchingPolicy, DiseaseBatch
from .records import HealthRecord

STORAGE_MODES = ("contract", "ipfs-map")
_MAP_RETRIES = 3
_TOMBSTONE = b"revoked"


@dataclass
class PatientAccount:
    patient_id: str
    public_key: bytes
    keyfile: crypto.EncryptedKeyfile
    fingerprint_digest: bytes
    node: NodeId


@dataclass
class HospitalAccount:
    hospital_id: str
    public_key: bytes
    keyfile: crypto.EncryptedKeyfile
    registered: bool
    node: NodeId
    compliant: bool = True
    inbox: list["RevocationNotice"] = field(default_factory=list)


@dataclass(frozen=True)
class RevocationNotice:
    hospital_id: str
    hash: ContentHash
    tick: int


@dataclass
class Grant:
    """Patient-side bookkeeping for one record shared with one hospital."""

    hospital_id: str
    source_hash: ContentHash
    hospital_hash: ContentHash
    pointer: str  # what contract 2 stores: the object hash or an IPNS name
    name_key: crypto.KeyPair | None = None


class System:
    def __init__(
        self,
        seed: int = 0,
        storage_mode: str = "contract",
        batching: BatchingPolicy | str = STRICT2,
        replication_factor: int = 1,
        kdf_iterations: int = crypto.KDF_ITERATIONS,
        use_ipns: bool = False,
        backend: str = "cas",
        latency_range: tuple[int, int] = (5, 40),
        auto_flush: bool = True,
        contract_read_ticks: int = 2,
    ):
        if storage_mode not in STORAGE_MODES:
            raise ValueError(f"storage_mode must be one of {STORAGE_MODES}")
        self.seed = seed
        self.rng = random.Random(seed)
        self.storage_mode = storage_mode
        self.policy = BatchingPolicy.parse(batching) if isinstance(batching, str) else batching
        self.replication_factor = replication_factor
        self.kdf_iterations = kdf_iterations
        self.use_ipns = use_ipns
        self.auto_flush = auto_flush
        self.contract_read_ticks = contract_read_ticks
        if backend == "cas":
            self.store: Network | CentralStore = Network(seed, latency_range)
        elif backend == "kv":
            self.store = CentralStore()
        else:
            raise ValueError("backend must be 'cas' or 'kv'")
        self.chain: Chain | None = None
        self.clock = 0
        self.read_ticks = 0
        self.patients: dict[str, PatientAccount] = {}
        self.hospitals: dict[str, HospitalAccount] = {}
        self.server_keyfiles: dict[str, bytes] = {}
        self.local_keyfiles: dict[NodeId, bytes] = {}
        self.grants: dict[tuple[str, str], list[Grant]] = {}
        self.notices: list[RevocationNotice] = []
        self.batches: dict[str, DiseaseBatch] = {}
        self._fingerprints: set[bytes] = set()
        self._registry_salt = self.randbytes(16)
        self._sessions: dict[str, crypto.KeyPair] = {}
        self._miners: dict[bytes, crypto.KeyPair] = {}
        self._patients_by_key: dict[bytes, str] = {}

    def randbytes(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    # -- chain plumbing ------------------------------------------------------

    def _require_chain(self) -> Chain:
        if self.chain is None:
            raise UnregisteredHospital("no hospital registered yet; chain has no genesis")
        return self.chain

    def commit(self):
        """Mine the pending pool with the authority whose turn it is."""
        chain = self._require_chain()
        if not chain.pending_count:
            return None
        signer = self._miners[chain.expected_signer()]
        block = chain.mine_block(signer, timestamp=self.clock)
        return block

    def tick(self, n: int = 1) -> None:
        for _ in range(n):
            self.clock += 1
            self.commit()

    def transact(self, kp: crypto.KeyPair, contract: Contract, op: str, args: Sequence[bytes]) -> LogEntry:
        """Submit, mine and return the log entry; raise if the contract rejected it."""
        chain = self._require_chain()
        tx = Transaction.create(kp, contract, op, args, chain.next_nonce(kp.public_key))
        chain.submit_tx(tx)
        block = self.commit()
        status = next(s for t, s in block.entries if t == tx)
        entry = LogEntry(block.height, tx, status)
        if status != OK:
            raise FAILURE_CODES.get(status, ContractError)(f"{contract.name}.{op} rejected: {status}")
        return entry

    # -- lookups -------------------------------------------------------------

    def patient(self, patient_id: str) -> PatientAccount:
        try:
            return self.patients[patient_id]
        except KeyError:
            raise UnknownPatient(patient_id) from None

    def hospital(self, hospital_id: str) -> HospitalAccount:
        try:
            return self.hospitals[hospital_id]
        except KeyError:
            raise UnknownHospital(hospital_id) from None

    def _keyfile(self, account_id: str, node: NodeId) -> crypto.EncryptedKeyfile:
        # local cache first; the server copy only if the cache was cleared
        raw = self.local_keyfiles.get(node)
        if raw is None:
            raw = self.server_keyfiles[account_id]
            self.local_keyfiles[node] = raw
        return crypto.EncryptedKeyfile.from_bytes(raw)

    def unlock_patient(self, patient_id: str, fingerprint: crypto.Fingerprint) -> crypto.KeyPair:
        acct = self.patient(patient_id)
        kf = self._keyfile(patient_id, acct.node)
        return crypto.open_keyfile(crypto.fingerprint_password(fingerprint), kf)

    def hospital_login(self, hospital_id: str, password: str) -> crypto.KeyPair:
        acct = self.hospital(hospital_id)
        kp = crypto.open_keyfile(password.encode("utf-8"), self._keyfile(hospital_id, acct.node))
        self._sessions[hospital_id] = kp
        return kp

    def _session(self, hospital_id: str) -> crypto.KeyPair:
        self.hospital(hospital_id)
        try:
            return self._sessions[hospital_id]
        except KeyError:
            raise ProtocolError(f"hospital {hospital_id} is not logged in") from None

    # -- signup --------------------------------------------------------------

    def patient_signup(self, fingerprint: crypto.Fingerprint, patient_id: str | None = None) -> PatientAccount:
        digest = crypto.fingerprint_digest(fingerprint, self._registry_salt)
        if digest in self._fingerprints:
            raise DuplicateFingerprint("this fingerprint already has an account")
        kp = crypto.derive_keypair(fingerprint)
        if patient_id is None:
            patient_id = f"P{len(self.patients) + 1}"
        if patient_id in self.patients:
            raise ProtocolError(f"patient id {patient_id} taken")
        kf = crypto.seal_keyfile(
            crypto.fingerprint_password(fingerprint), kp, self.randbytes, self.kdf_iterations
        )
        node = f"patient:{patient_id}"
        self.store.add_node(node)
        acct = PatientAccount(patient_id, kp.public_key, kf, digest, node)
        self._fingerprints.add(digest)
        self.patients[patient_id] = acct
        self._patients_by_key[kp.public_key] = patient_id
        self.server_keyfiles[patient_id] = kf.to_bytes()
        self.local_keyfiles[node] = kf.to_bytes()
        return acct

    def bootstrap(self, hospitals: Sequence[tuple[str, str]], compliant: Iterable[bool] | None = None) -> list[HospitalAccount]:
        """Create the founding hospitals and a genesis block naming all of them."""
        if self.chain is not None:
            raise ProtocolError("network already has a genesis block")
        if not hospitals:
            raise ValueError("need at least one founding hospital")
        flags = list(compliant) if compliant is not None else [True] * len(hospitals)
        accounts = [
            self._new_hospital(hid, pw, flag) for (hid, pw), flag in zip(hospitals, flags, strict=True)
        ]
        keys = [self._sessions[a.hospital_id] for a in accounts]
        self.chain = Chain(keys[0], [k.public_key for k in keys], timestamp=self.clock)
        for acct, kp in zip(accounts, keys):
            self._miners[kp.public_key] = kp
            acct.registered = True
        return accounts

    def _new_hospital(self, hospital_id: str, password: str, compliant: bool) -> HospitalAccount:
        if hospital_id in self.hospitals:
            raise ProtocolError(f"hospital id {hospital_id} taken")
        kp = crypto.generate_keypair(self.randbytes)
        kf = crypto.seal_keyfile(password.encode("utf-8"), kp, self.randbytes, self.kdf_iterations)
        node = f"hospital:{hospital_id}"
        self.store.add_node(node)
        acct = HospitalAccount(hospital_id, kp.public_key, kf, False, node, compliant)
        self.hospitals[hospital_id] = acct
        self.server_keyfiles[hospital_id] = kf.to_bytes()
        self.local_keyfiles[node] = kf.to_bytes()
        self._sessions[hospital_id] = kp
        self.batches[hospital_id] = DiseaseBatch(self.policy)
        return acct

    def hospital_signup(
        self,
        hospital_id: str,
        password: str,
        committee_approval: bool = True,
        compliant: bool = True,
    ) -> HospitalAccount:
        acct = self._new_hospital(hospital_id, password, compliant)
        kp = self._sessions[hospital_id]
        if not committee_approval:
            raise NotApproved(f"committee did not approve {hospital_id}", account=acct)
        if self.chain is None:
            self.chain = Chain(kp, [kp.public_key], timestamp=self.clock)
        else:
            sponsor = self._miners[self.chain.expected_signer()]
            self.transact(sponsor, Contract.GOVERNANCE, "add_hospital", [kp.public_key])
        self._miners[kp.public_key] = kp
        acct.registered = True
        return acct

    # -- hospital flows ------------------------------------------------------

    def create_record(
        self,
        hospital_id: str,
        patient_id: str,
        record: HealthRecord,
        patient_fingerprint: crypto.Fingerprint,
    ) -> ContentHash:
        hosp = self.hospital(hospital_id)
        hkp = self._session(hospital_id)
        patient = self.patient(patient_id)
        pkp = self.unlock_patient(patient_id, patient_fingerprint)
        self._require_chain()
        ct = crypto.asym_encrypt(patient.public_key, record.to_bytes(), self.randbytes)
        h = self.store.put(hosp.node, ct.to_bytes())
        sig = crypto.sign(pkp.private_key, h.encode("ascii"))
        if self.storage_mode == "contract":
            parts = split_hash(h, self.rng)
            self.transact(hkp, Contract.RECORDS, "store", [patient.public_key, parts.part1, parts.part2, sig])
        else:
            self.sync_map_mode(hospital_id, ("add", patient.public_key, h, sig))
        if self.replication_factor > 1 and isinstance(self.store, Network):
            self.store.replicate(h, self.replication_factor)
        self.batches[hospital_id].add(record.disease, record.location or None)
        if self.auto_flush:
            self.flush_disease_batch(hospital_id)
        return h

    def hospital_view_records(self, hospital_id: str, password: str, patient_id: str) -> list[HealthRecord]:
        hosp = self.hospital(hospital_id)
        hkp = self.hospital_login(hospital_id, password)
        patient = self.patient(patient_id)
        ck = combine_keys(patient.public_key, hosp.public_key)
        entries = self._require_chain().contracts.access_list(ck)
        self.read_ticks += self.contract_read_ticks + len(entries)
        records = []
        for parts in entries:
            h = self._resolve(join_hash(parts))
            ct = crypto.Ciphertext.from_bytes(self.store.get(hosp.node, h))
            records.append(HealthRecord.from_bytes(crypto.asym_decrypt(hkp.private_key, ct)))
        self.transact(hkp, Contract.ACCESS_LOG, "access", [b"hospital-view", ck])
        return records

    def _resolve(self, pointer: str) -> ContentHash:
        if self.use_ipns and self.store.is_name(pointer):
            return self.store.ipns_resolve(pointer)
        return pointer

    # -- patient flows -------------------------------------------------------

    def patient_record_hashes(self, patient_id: str) -> list[ContentHash]:
        """Record hashes for a patient, from contract 1 or from the off-chain map."""
        patient = self.patient(patient_id)
        chain = self._require_chain()
        if self.storage_mode == "contract":
            entries = chain.contracts.record_list(patient.public_key)
            self.read_ticks += self.contract_read_ticks + len(entries)
            return [join_hash(p) for p in entries]
        try:
            pointer = chain.contracts.map_pointer_get()
        except EmptyPointer:
            return []
        self.read_ticks += self.contract_read_ticks
        mapping = json.loads(self.store.get(patient.node, pointer))
        return list(mapping.get(patient.public_key.hex(), []))

    def patient_view_records(self, patient_id: str, fingerprint: crypto.Fingerprint) -> list[HealthRecord]:
        patient = self.patient(patient_id)
        kp = self.unlock_patient(patient_id, fingerprint)
        out = []
        for h in self.patient_record_hashes(patient_id):
            ct = crypto.Ciphertext.from_bytes(self.store.get(patient.node, h))
            out.append(HealthRecord.from_bytes(crypto.asym_decrypt(kp.private_key, ct)))
        self.transact(kp, Contract.ACCESS_LOG, "access", [b"patient-view", patient.public_key])
        return out

    def _select(self, patient_id: str, selection) -> list[ContentHash]:
        hashes = self.patient_record_hashes(patient_id)
        if selection is None or selection == "all":
            return hashes
        if isinstance(selection, (int, str)):
            selection = [selection]
        out = []
        for item in selection:
            if isinstance(item, int):
                if not 0 <= item < len(hashes):
                    raise NoSuchRecord(f"record index {item} out of range")
                out.append(hashes[item])
            elif item in hashes:
                out.append(item)
            else:
                raise NoSuchRecord(item)
        return out

    def grant_access(
        self,
        patient_id: str,
        fingerprint: crypto.Fingerprint,
        hospital_id: str,
        record_selection: Iterable | int | str | None = None,
    ) -> list[ContentHash]:
        """Share selected records with a hospital; returns the hospital-encrypted hashes."""
        patient = self.patient(patient_id)
        kp = self.unlock_patient(patient_id, fingerprint)
        hosp = self.hospital(hospital_id)
        ck = combine_keys(patient.public_key, hosp.public_key)
        out = []
        for src in self._select(patient_id, record_selection):
            plain = crypto.asym_decrypt(
                kp.private_key, crypto.Ciphertext.from_bytes(self.store.get(patient.node, src))
            )
            ct = crypto.asym_encrypt(hosp.public_key, plain, self.randbytes)
            hh = self.store.put(patient.node, ct.to_bytes())
            pointer, name_key = hh, None
            if self.use_ipns:
                label = hosp.public_key + hh.encode()
                name_key = crypto.derive_subkey(kp.private_key, label)
                pointer = self.store.ipns_publish(name_key, hh).name
            parts = split_hash(pointer, self.rng)
            sig = crypto.sign(kp.private_key, pointer.encode("ascii"))
            self.transact(kp, Contract.ACCESS, "grant", [ck, parts.part1, parts.part2, sig])
            self.grants.setdefault((patient_id, hospital_id), []).append(
                Grant(hospital_id, src, hh, pointer, name_key)
            )
            out.append(hh)
        return out

    def revoke_access(
        self,
        patient_id: str,
        fingerprint: crypto.Fingerprint,
        hospital_id: str,
        record: ContentHash,
    ) -> RevocationNotice:
        patient = self.patient(patient_id)
        kp = self.unlock_patient(patient_id, fingerprint)
        hosp = self.hospital(hospital_id)
        grants = self.grants.get((patient_id, hospital_id), [])
        grant = next(
            (g for g in grants if record in (g.hospital_hash, g.pointer, g.source_hash)), None
        )
        if grant is None:
            raise NoSuchGrant(f"{patient_id} has not granted {record} to {hospital_id}")
        ck = combine_keys(patient.public_key, hosp.public_key)
        parts = split_hash(grant.pointer, self.rng)
        self.transact(
            kp,
            Contract.ACCESS,
            "revoke",
            [
                ck,
                crypto.sign(kp.private_key, ck),
                crypto.sign(kp.private_key, hosp.public_key),
                parts.part1,
                parts.part2,
            ],
        )
        grants.remove(grant)
        if grant.name_key is not None:
            tomb = self.store.put(patient.node, _TOMBSTONE)
            self.store.ipns_publish(grant.name_key, tomb)
        if self.store.has_local(patient.node, grant.hospital_hash):
            self.store.remove_local(patient.node, grant.hospital_hash)
        notice = RevocationNotice(hospital_id, grant.hospital_hash, self.clock)
        self.notices.append(notice)
        self._deliver(hosp, notice)
        return notice

    def _deliver(self, hosp: HospitalAccount, notice: RevocationNotice) -> None:
        hosp.inbox.append(notice)
        if hosp.compliant and self.store.has_local(hosp.node, notice.hash):
            self.store.remove_local(hosp.node, notice.hash)

    def audit_revocation(self, patient_id: str, revoked_hash: ContentHash) -> set[NodeId]:
        """Nodes other than the patient's that still provide a revoked object."""
        patient = self.patient(patient_id)
        return self.store.find_providers(revoked_hash) - {patient.node}

    def node_owner(self, node: NodeId) -> str:
        return node.split(":", 1)[1] if ":" in node else node

    # -- statistics ----------------------------------------------------------

    def flush_disease_batch(self, hospital_id: str, force: bool = False) -> int:
        """Post whatever the batching policy allows; returns the number of update transactions."""
        hkp = self._session(hospital_id)
        batch = self.batches[hospital_id]
        plans = batch.plan(self.rng, force=force)
        for updates in plans:
            self.transact(hkp, Contract.STATS, "update", encode_stats_args(updates, self.policy.strict))
        return len(plans)

    def stats_get(self, disease: str, location: str | None = None) -> int:
        return self._require_chain().contracts.stats_get(disease, location)

    # -- off-chain map mode --------------------------------------------------

    def sync_map_mode(self, hospital_id: str, mutation: tuple) -> ContentHash:
        """Fetch the patient-key map, apply ``mutation``, store it, move the pointer.

        ``mutation`` is ``("add", patient_pub, record_hash, patient_sig)``.
        """
        if self.storage_mode != "ipfs-map":
            raise ProtocolError("system is not in ipfs-map storage mode")
        kind, patient_pub, record_hash, sig = mutation
        if kind != "add":
            raise ValueError(f"unsupported map mutation {kind!r}")
        hosp = self.hospital(hospital_id)
        hkp = self._session(hospital_id)
        contracts = self._require_chain().contracts
        for _ in range(_MAP_RETRIES):
            try:
                expected = contracts.map_pointer_get()
                mapping = json.loads(self.store.get(hosp.node, expected))
            except EmptyPointer:
                expected, mapping = None, {}
            mapping.setdefault(patient_pub.hex(), []).append(record_hash)
            blob = json.dumps(mapping, sort_keys=True, separators=(",", ":")).encode()
            new = self.store.put(hosp.node, blob)
            try:
                self.transact(
                    hkp,
                    Contract.MAP_POINTER,
                    "set",
                    [(expected or "").encode(), new.encode(), patient_pub, record_hash.encode(), sig],
                )
            except StaleMap:
                continue
            return new
        raise StaleMap("map pointer kept moving")
