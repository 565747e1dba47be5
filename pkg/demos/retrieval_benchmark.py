"""
Retrieval cost against record count
===================================

Simulated ticks for a patient fetching all records, from the peer object
network and from a single central store.  Wall-clock times depend on the
host and are printed for reference only.
"""

from ehrchain.simctl import SimConfig, bench_hash_retrieval, bench_retrieval, rows_to_csv

cfg = SimConfig(n_hospitals=3, rng_seed=42)
print(rows_to_csv(bench_retrieval(cfg, 40, 10), "records"))
print(rows_to_csv(bench_hash_retrieval(cfg, 40, 10), "participants"))
