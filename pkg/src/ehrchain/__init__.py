"""Blockchain-anchored sharing of encrypted health records, simulated at desk scale."""

from .cas import CentralStore, Network, content_hash
from .chain import Block, Chain, LightNode, Transaction
from .contracts import Contract, Contracts, HashParts, join_hash, split_hash
from .crypto import Fingerprint, KeyPair
from .privacy import BatchingPolicy, DiseaseBatch, linkage_attack_estimate
from .protocol import System
from .records import HealthRecord

__all__ = [
    "BatchingPolicy",
    "Block",
    "CentralStore",
    "Chain",
    "Contract",
    "Contracts",
    "DiseaseBatch",
    "Fingerprint",
    "HashParts",
    "HealthRecord",
    "KeyPair",
    "LightNode",
    "Network",
    "System",
    "Transaction",
    "content_hash",
    "join_hash",
    "linkage_attack_estimate",
    "split_hash",
]
