"""Scenario runner and benchmark harness.

::

    simctl run --config sim.conf --script scenario.txt [--strict]
    simctl bench retrieval --config sim.conf --out retrieval.csv
    simctl bench hashes --config sim.conf --out hashes.csv

Exit codes: 0 ok, 1 scenario failure (only with ``--strict``), 2 usage or
parse error.

Scenario scripts have one command per line; ``#`` starts a comment and a
leading ``!`` marks a command that is expected to fail::

    signup-patient <pid> <fingerprint-text>
    signup-hospital <hid> <password> [unapproved] [noncompliant]
    create <hid> <pid> [field=value ...]
    view patient <pid>
    view hospital <hid> <pid>
    grant <pid> <hid> [all | i,j,...]
    revoke <pid> <hid> <grant-index | hash>
    audit <pid> <hid> <grant-index | hash>
    flush <hid> [force]
    stats <disease> [location]
    offline <actor-or-node> / online <actor-or-node>
    replicate <pid> <record-index> <factor>
    tick [n]
    verify
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import random
import shlex
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import crypto
from .cas import Network
from .errors import EHRError, ParseError
from .privacy import BatchingPolicy
from .protocol import System
from .records import HealthRecord, random_record


@dataclass
class SimConfig:
    n_hospitals: int = 1
    n_patients: int = 0
    n_peers: int = 0
    replication_factor: int = 1
    storage_mode: str = "contract"
    batching_policy: str = "strict2"
    rng_seed: int = 0
    latency_min: int = 5
    latency_max: int = 40
    block_interval: int = 1
    kdf_iterations: int = 1000
    use_ipns: bool = False
    backend: str = "cas"
    noncompliant: str = ""
    bench_max_records: int = 50
    bench_record_step: int = 10
    bench_max_participants: int = 50
    bench_participant_step: int = 10

    def __post_init__(self):
        if self.n_hospitals < 1:
            raise ValueError("n_hospitals must be at least 1")
        if self.storage_mode not in ("contract", "ipfs-map"):
            raise ValueError(f"unknown storage_mode {self.storage_mode!r}")
        BatchingPolicy.parse(self.batching_policy)
        if not 0 < self.latency_min <= self.latency_max:
            raise ValueError("need 0 < latency_min <= latency_max")

    @classmethod
    def parse(cls, text: str) -> "SimConfig":
        """Read ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", n)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ParseError(f"unknown config key {key!r}", n)
            kind = types[key]
            try:
                if kind == "int":
                    values[key] = int(value)
                elif kind == "bool":
                    values[key] = value.lower() in ("1", "true", "yes", "on")
                else:
                    values[key] = value
            except ValueError as exc:
                raise ParseError(str(exc), n) from exc
        try:
            return cls(**values)
        except ValueError as exc:
            raise ParseError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        return cls.parse(Path(path).read_text())


def patient_fingerprint(pid: str, seed: int) -> crypto.Fingerprint:
    return crypto.Fingerprint.from_text(f"fingerprint:{pid}:{seed}:simulated")


class Simulation:
    """A System built from a config plus the secrets the script driver knows."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.system = System(
            seed=config.rng_seed,
            storage_mode=config.storage_mode,
            batching=config.batching_policy,
            replication_factor=config.replication_factor,
            kdf_iterations=config.kdf_iterations,
            use_ipns=config.use_ipns,
            backend=config.backend,
            latency_range=(config.latency_min, config.latency_max),
        )
        self.fingerprints: dict[str, crypto.Fingerprint] = {}
        self.passwords: dict[str, str] = {}
        self.granted: dict[tuple[str, str], list[str]] = {}
        noncompliant = {s.strip() for s in config.noncompliant.split(",") if s.strip()}
        founders = [(f"H{i}", f"H{i}-password") for i in range(1, config.n_hospitals + 1)]
        self.passwords.update(founders)
        self.system.bootstrap(founders, [hid not in noncompliant for hid, _ in founders])
        for i in range(1, config.n_peers + 1):
            self.system.store.add_node(f"peer:{i}")
        for i in range(1, config.n_patients + 1):
            pid = f"P{i}"
            self.signup_patient(pid, patient_fingerprint(pid, config.rng_seed))

    def signup_patient(self, pid: str, fp: crypto.Fingerprint):
        acct = self.system.patient_signup(fp, pid)
        self.fingerprints[pid] = fp
        return acct

    def signup_hospital(self, hid: str, password: str, approved: bool = True, compliant: bool = True):
        self.passwords[hid] = password
        return self.system.hospital_signup(hid, password, approved, compliant)

    def fingerprint(self, pid: str) -> crypto.Fingerprint:
        self.system.patient(pid)
        return self.fingerprints[pid]

    # -- script commands -----------------------------------------------------

    def execute(self, argv: list[str]) -> str:
        cmd, args = argv[0], argv[1:]
        handler = getattr(self, "cmd_" + cmd.replace("-", "_"), None)
        if handler is None:
            raise ParseError(f"unknown command {cmd!r}")
        return handler(args)

    def cmd_signup_patient(self, args):
        _need(args, 2)
        acct = self.signup_patient(args[0], crypto.Fingerprint.from_text(args[1]))
        return f"patient {acct.patient_id} key={acct.public_key.hex()[:16]}"

    def cmd_signup_hospital(self, args):
        _need(args, 2, 4)
        flags = set(args[2:])
        if not flags <= {"unapproved", "noncompliant"}:
            raise ParseError(f"unknown flags {sorted(flags)}")
        acct = self.signup_hospital(
            args[0], args[1], "unapproved" not in flags, "noncompliant" not in flags
        )
        return f"hospital {acct.hospital_id} registered authorities={len(self.system.chain.authorities)}"

    def cmd_create(self, args):
        _need(args, 2, None)
        hid, pid = args[0], args[1]
        kw = dict(a.split("=", 1) for a in args[2:])
        kw.setdefault("patient_id", pid)
        kw.setdefault("hospital_id", hid)
        record = HealthRecord.from_fields(**kw)
        h = self.system.create_record(hid, pid, record, self.fingerprint(pid))
        return f"record {h}"

    def cmd_view(self, args):
        if args and args[0] == "patient":
            _need(args, 2)
            recs = self.system.patient_view_records(args[1], self.fingerprint(args[1]))
        elif args and args[0] == "hospital":
            _need(args, 3)
            hid, pid = args[1], args[2]
            recs = self.system.hospital_view_records(hid, self.passwords.get(hid, ""), pid)
        else:
            raise ParseError("usage: view patient <pid> | view hospital <hid> <pid>")
        return _describe(recs)

    def cmd_grant(self, args):
        _need(args, 2, 3)
        pid, hid = args[0], args[1]
        sel = args[2] if len(args) == 3 else "all"
        selection = "all" if sel == "all" else [int(x) for x in sel.split(",")]
        hashes = self.system.grant_access(pid, self.fingerprint(pid), hid, selection)
        self.granted.setdefault((pid, hid), []).extend(hashes)
        return "granted " + " ".join(hashes) if hashes else "granted nothing"

    def _grant_ref(self, pid, hid, ref):
        if ref.isdigit():
            try:
                return self.granted.get((pid, hid), [])[int(ref)]
            except IndexError:
                raise ParseError(f"no grant #{ref} from {pid} to {hid}") from None
        return ref

    def cmd_revoke(self, args):
        _need(args, 3)
        pid, hid = args[0], args[1]
        h = self._grant_ref(pid, hid, args[2])
        notice = self.system.revoke_access(pid, self.fingerprint(pid), hid, h)
        return f"revoked {notice.hash} notice->{notice.hospital_id}"

    def cmd_audit(self, args):
        _need(args, 3)
        pid, hid = args[0], args[1]
        nodes = self.system.audit_revocation(pid, self._grant_ref(pid, hid, args[2]))
        return "providers {" + ",".join(sorted(nodes)) + "}"

    def cmd_flush(self, args):
        _need(args, 1, 2)
        n = self.system.flush_disease_batch(args[0], force=args[1:] == ["force"])
        return f"flushed {n} update(s)"

    def cmd_stats(self, args):
        _need(args, 1, 2)
        return f"count {self.system.stats_get(args[0], args[1] if len(args) > 1 else None)}"

    def _node(self, ref):
        if ":" in ref:
            return ref
        if ref in self.system.patients:
            return self.system.patients[ref].node
        if ref in self.system.hospitals:
            return self.system.hospitals[ref].node
        raise ParseError(f"unknown actor {ref!r}")

    def cmd_offline(self, args):
        _need(args, 1)
        self.system.store.set_online(self._node(args[0]), False)
        return f"{self._node(args[0])} offline"

    def cmd_online(self, args):
        _need(args, 1)
        self.system.store.set_online(self._node(args[0]), True)
        return f"{self._node(args[0])} online"

    def cmd_replicate(self, args):
        _need(args, 3)
        if not isinstance(self.system.store, Network):
            raise ParseError("replicate needs the cas backend")
        h = self.system.patient_record_hashes(args[0])[int(args[1])]
        providers = self.system.store.replicate(h, int(args[2]))
        return f"providers {len(providers)}"

    def cmd_tick(self, args):
        _need(args, 0, 1)
        n = int(args[0]) if args else 1
        self.system.tick(n * self.config.block_interval)
        return f"clock {self.system.clock}"

    def cmd_verify(self, args):
        _need(args, 0)
        replayed = self.system.chain.verify()
        same = replayed.dump() == self.system.chain.contracts.dump()
        return f"chain ok blocks={len(self.system.chain.blocks)} replay={'identical' if same else 'DIFFERS'}"


def _need(args, lo, hi=-1):
    hi = lo if hi == -1 else hi
    if len(args) < lo or (hi is not None and len(args) > hi):
        raise ParseError("wrong number of arguments")


def _describe(records: list[HealthRecord]) -> str:
    body = ",".join(f"{r.disease}@{r.location}" for r in records)
    return f"{len(records)} record(s) [{body}]"


def parse_script(text: str) -> list[tuple[int, bool, list[str]]]:
    """Return ``(line_number, expect_failure, argv)`` for each command line."""
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        expect_fail = line.startswith("!")
        if expect_fail:
            line = line[1:].strip()
        try:
            argv = shlex.split(line, comments=True)
        except ValueError as exc:
            raise ParseError(str(exc), n) from exc
        if not argv:
            continue
        if not hasattr(Simulation, "cmd_" + argv[0].replace("-", "_")):
            raise ParseError(f"unknown command {argv[0]!r}", n)
        out.append((n, expect_fail, argv))
    return out


def run_scenario(config: SimConfig, script: str, strict: bool = False) -> tuple[int, list[str]]:
    """Execute a script against a fresh network; returns (exit status, transcript)."""
    commands = parse_script(script)
    sim = Simulation(config)
    chain = sim.system.chain
    transcript = [
        f"# seed={config.rng_seed} mode={config.storage_mode} "
        f"batching={config.batching_policy} replication={config.replication_factor}",
        f"genesis height={chain.height} authorities={len(chain.authorities)} "
        f"patients={len(sim.system.patients)}",
    ]
    status = 0
    for n, expect_fail, argv in commands:
        label = " ".join(argv)
        try:
            result = sim.execute(argv)
            ok = not expect_fail
            if expect_fail:
                result = f"UNEXPECTED-OK {result}"
        except (EHRError, ValueError, KeyError, IndexError) as exc:
            name = type(exc).__name__
            if isinstance(exc, ParseError) and exc.line is None:
                exc = ParseError(str(exc), n)
            result = f"{'expected-error' if expect_fail else 'error'} {name}: {exc}"
            ok = expect_fail
        transcript.append(f"{n:03d} {label} => {result} | height={sim.system.chain.height}")
        if not ok and strict:
            transcript.append(f"aborted at line {n}")
            status = 1
            break
    state = hashlib.sha256(sim.system.chain.contracts.dump().encode()).hexdigest()[:16]
    transcript.append(
        f"final height={sim.system.chain.height} log={sim.system.chain.log_length()} state={state}"
    )
    return status, transcript


# -- benchmarks --------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    x: int
    backend: str
    ticks: int
    wall_ms: float
    digest: str = field(default="", compare=False)


def _digest(chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()[:16]


def _bench_patient(sim: Simulation) -> tuple[str, crypto.Fingerprint]:
    if "P1" not in sim.system.patients:
        sim.signup_patient("P1", patient_fingerprint("P1", sim.config.rng_seed))
    return "P1", sim.fingerprints["P1"]


def bench_retrieval(config: SimConfig, max_records: int, step: int) -> list[BenchmarkRow]:
    """Patient view time against record count, on the object network and a central store."""
    if max_records == 0:
        return []
    if not max_records >= step >= 1:
        raise ValueError("need max_records >= step >= 1")
    rows = []
    for k in range(step, max_records + 1, step):
        for backend in ("cas", "kv"):
            sim = Simulation(dataclasses.replace(config, backend=backend))
            pid, fp = _bench_patient(sim)
            rec_rng = random.Random(config.rng_seed)
            hids = sorted(sim.system.hospitals)
            for i in range(k):
                hid = hids[i % len(hids)]
                sim.system.create_record(hid, pid, random_record(rec_rng, pid, hid), fp)
            sim.system.store.ticks = 0
            sim.system.read_ticks = 0
            t0 = time.perf_counter()
            records = sim.system.patient_view_records(pid, fp)
            wall = (time.perf_counter() - t0) * 1000
            ticks = sim.system.store.ticks + sim.system.read_ticks
            rows.append(BenchmarkRow(k, backend, ticks, wall, _digest(r.to_bytes() for r in records)))
    return rows


def bench_hash_retrieval(config: SimConfig, max_participants: int, step: int, n_records: int = 5) -> list[BenchmarkRow]:
    """Contract hash lookups against the number of extra participants in the network."""
    if max_participants == 0:
        return []
    if not max_participants >= step >= 1:
        raise ValueError("need max_participants >= step >= 1")
    rows = []
    for n in range(step, max_participants + 1, step):
        sim = Simulation(config)
        system = sim.system
        pid, fp = _bench_patient(sim)
        hid = sorted(system.hospitals)[0]
        rec_rng = random.Random(config.rng_seed)
        for _ in range(n_records):
            system.create_record(hid, pid, random_record(rec_rng, pid, hid), fp)
        system.grant_access(pid, fp, hid, "all")
        for i in range(n):
            sim.signup_patient(f"X{i}", patient_fingerprint(f"X{i}", config.rng_seed))
        system.read_ticks = 0
        t0 = time.perf_counter()
        hashes = system.patient_record_hashes(pid)
        ck = system.patients[pid].public_key + system.hospitals[hid].public_key
        entries = system.chain.contracts.access_list(ck)
        system.read_ticks += system.contract_read_ticks + len(entries)
        wall = (time.perf_counter() - t0) * 1000
        hashes += [p.text() for p in entries]
        rows.append(BenchmarkRow(n, config.storage_mode, system.read_ticks, wall, _digest(h.encode() for h in hashes)))
    return rows


def rows_to_csv(rows: list[BenchmarkRow], x_name: str) -> str:
    lines = [f"{x_name},backend,sim_ticks,wall_ms"]
    lines += [f"{r.x},{r.backend},{r.ticks},{r.wall_ms:.3f}" for r in rows]
    return "\n".join(lines) + "\n"


# -- command line ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simctl", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a scenario script")
    run.add_argument("--config", required=True)
    run.add_argument("--script", required=True)
    run.add_argument("--strict", action="store_true", help="abort at the first failing command")
    bench = sub.add_parser("bench", help="emit benchmark CSV")
    bench.add_argument("kind", choices=["retrieval", "hashes"])
    bench.add_argument("--config", required=True)
    bench.add_argument("--out", required=True)
    bench.add_argument("--max", type=int, default=None)
    bench.add_argument("--step", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        config = SimConfig.load(args.config)
        if args.command == "run":
            status, transcript = run_scenario(config, Path(args.script).read_text(), args.strict)
            sys.stdout.write("\n".join(transcript) + "\n")
            return status
        if args.kind == "retrieval":
            rows = bench_retrieval(
                config, args.max if args.max is not None else config.bench_max_records,
                args.step or config.bench_record_step,
            )
            csv = rows_to_csv(rows, "records")
        else:
            rows = bench_hash_retrieval(
                config, args.max if args.max is not None else config.bench_max_participants,
                args.step or config.bench_participant_step,
            )
            csv = rows_to_csv(rows, "participants")
        Path(args.out).write_text(csv)
        return 0
    except (ParseError, ValueError, OSError) as exc:
        sys.stderr.write(f"simctl: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
