"""
How much does batching hide?
============================

An observer watches record transactions and disease-count transactions
and tries to pair them up.
"""

from ehrchain.privacy import linkage_attack_estimate

for policy in ("none", "strict2", "decoupled(10,9)", "decoupled(10,5)"):
    acc = linkage_attack_estimate(20_000, policy, seed=0)
    print(f"{policy:>16}  accuracy {acc:.3f}")

# decoupled(n, m) trades accuracy of the public counts for privacy:
# only m of every n diseases are ever counted.
