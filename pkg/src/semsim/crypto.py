"""Counter-mode block sealing, per-block MACs and the Bonsai Merkle tree.

Everything here is a functional model: the PRF is keyed BLAKE2b, not AES,
and the 16-bit tags are a keyed polynomial-division hash masked with a PRF
output. The tags detect every single-bit (indeed every <=16-bit burst)
modification deterministically; arbitrary forgeries pass with probability
about 2**-16.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache

from semsim.errors import IntegrityError, IntegrityKind

BLOCK_SIZE = 64
SEED_SIZE = 8
SEEDS_PER_COUNTER_BLOCK = BLOCK_SIZE // SEED_SIZE
HASH_SIZE = 2
HASHES_PER_BLOCK = BLOCK_SIZE // HASH_SIZE
PRF_OUT = 16
PAD_BLOCKS = BLOCK_SIZE // PRF_OUT
MAC_BITS = 16
MAX_SEED = (1 << 64) - 1

FLAG_INITIAL = 0
FLAG_RUNTIME = 1


def encode_pad_input(flag: int, payload: int, block_index: int) -> bytes:
    """Injective encoding of (domain flag, VA-or-seed, sub-block index)."""
    if flag not in (FLAG_INITIAL, FLAG_RUNTIME):
        raise ValueError(f"bad domain flag {flag}")
    return struct.pack("<BQB", flag, payload & MAX_SEED, block_index)


# -- GF(2) polynomial helpers for the division hash -------------------------

def _gf2_mulmod(a: int, b: int, mod: int, deg: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> deg & 1:
            a ^= mod
    return r


def _gf2_mod(a: int, mod: int) -> int:
    dm = mod.bit_length()
    while a.bit_length() >= dm:
        a ^= mod << (a.bit_length() - dm)
    return a


def _gf2_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, _gf2_mod(a, b)
    return a


def is_irreducible16(poly: int) -> bool:
    """Rabin's test specialised to degree 16 (only prime factor of 16 is 2)."""
    if poly.bit_length() != 17:
        return False
    x = 0b10
    acc = x
    powers = {}
    for i in range(1, 17):
        acc = _gf2_mulmod(acc, acc, poly, 16)  # x^(2^i)
        powers[i] = acc
    if powers[16] != x:
        return False
    return _gf2_gcd(poly, powers[8] ^ x) == 1


def _crc_table(poly: int) -> tuple[int, ...]:
    low = poly & 0xFFFF
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ low) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table.append(crc)
    return tuple(table)


class DivisionHash:
    """M(x)*x^16 mod p(x) for a secret irreducible p of degree 16."""

    __slots__ = ("poly", "_table")

    def __init__(self, key: bytes):
        counter = 0
        while True:
            raw = hashlib.blake2b(struct.pack("<I", counter), key=key, digest_size=2,
                                  person=b"semsim-poly").digest()
            cand = (1 << 16) | int.from_bytes(raw, "little") | 1
            if is_irreducible16(cand):
                break
            counter += 1
        self.poly = cand
        self._table = _crc_table(cand)

    def __call__(self, data: bytes) -> int:
        table = self._table
        crc = 0
        for b in data:
            crc = ((crc << 8) & 0xFFFF) ^ table[(crc >> 8) ^ b]
        return crc


@lru_cache(maxsize=64)
def _division_hash(key: bytes) -> DivisionHash:
    return DivisionHash(key)


class Prf:
    """Deterministic keyed PRF; one 256-bit key houses the encryption and MAC keys."""

    __slots__ = ("key", "skey", "mkey", "_div")

    def __init__(self, key: bytes):
        if len(key) != 32:
            raise ValueError("key must be 32 bytes")
        self.key = key
        self.skey = hashlib.blake2b(key, digest_size=32, person=b"semsim-skey").digest()
        self.mkey = hashlib.blake2b(key, digest_size=32, person=b"semsim-mkey").digest()
        self._div = _division_hash(self.mkey)

    @classmethod
    def from_seed(cls, seed: int) -> "Prf":
        return cls(hashlib.sha256(b"semsim-key" + struct.pack("<q", seed)).digest())

    def __call__(self, pad_input: bytes) -> bytes:
        return hashlib.blake2b(pad_input, key=self.skey, digest_size=PRF_OUT).digest()

    def mask16(self, domain: bytes) -> int:
        out = hashlib.blake2b(domain, key=self.mkey, digest_size=2).digest()
        return int.from_bytes(out, "little")

    def tag16(self, data: bytes, domain: bytes) -> int:
        return self._div(data) ^ self.mask16(domain)


def derive_pad(prf: Prf, seed: int, va: int) -> bytes:
    """64-byte keystream block: VA-bound for seed 0, VA-independent otherwise."""
    if seed == 0:
        flag, payload = FLAG_INITIAL, va
    else:
        flag, payload = FLAG_RUNTIME, seed
    return b"".join(prf(encode_pad_input(flag, payload, i)) for i in range(PAD_BLOCKS))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(n, "little")


def block_mac(prf: Prf, clear: bytes, va: int, seed: int) -> int:
    return prf.tag16(clear, struct.pack("<BQQ", 2, va & MAX_SEED, seed))


@dataclass(frozen=True)
class SealedBlock:
    va: int
    cipher: bytes
    mac: int
    seed: int


def seal_block(prf: Prf, seed: int, va: int, clear: bytes) -> SealedBlock:
    if len(clear) != BLOCK_SIZE:
        raise ValueError(f"clear block must be {BLOCK_SIZE} bytes")
    cipher = xor_bytes(clear, derive_pad(prf, seed, va))
    return SealedBlock(va, cipher, block_mac(prf, clear, va, seed), seed)


def open_block(prf: Prf, sealed: SealedBlock, expected_seed: int) -> bytes:
    """Decrypt with the verified seed and check the tag.

    The seed stored beside the block is compared first, so presenting a block
    sealed under an older seed fails deterministically.
    """
    if sealed.seed != expected_seed:
        raise IntegrityError(IntegrityKind.MAC_MISMATCH,
                             f"seed {sealed.seed} != expected {expected_seed} at {sealed.va:#x}")
    clear = xor_bytes(sealed.cipher, derive_pad(prf, expected_seed, sealed.va))
    if block_mac(prf, clear, sealed.va, expected_seed) != sealed.mac:
        raise IntegrityError(IntegrityKind.MAC_MISMATCH, f"block {sealed.va:#x}")
    return clear


def memory_overhead(block_size_bytes: float, counter_size_bytes: float,
                    mac_size_bytes: float, hash_size_bytes: float) -> float:
    """Metadata bytes per data byte, counting only the first hash level."""
    if block_size_bytes <= 0:
        raise ValueError("block size must be > 0")
    if counter_size_bytes < 0 or mac_size_bytes < 0 or hash_size_bytes < 0:
        raise ValueError("sizes must be >= 0")
    per_block = (counter_size_bytes + mac_size_bytes) / block_size_bytes
    if hash_size_bytes == 0:
        return per_block
    if counter_size_bytes == 0:
        raise ValueError("counter size 0 leaves the hash term undefined")
    counter_blocks_per_byte = 1 / (block_size_bytes * (block_size_bytes / counter_size_bytes))
    return per_block + hash_size_bytes * counter_blocks_per_byte


# -- hash trees ---------------------------------------------------------------

NodeId = tuple[int, int]  # (level, index); level 0 = leaf blocks


@dataclass
class HashTree:
    """Sparse keyed hash tree with an on-chip root and a cache of verified nodes.

    Leaf blocks and hash blocks live in ``untrusted`` (adversary-writable).
    ``cache`` holds trusted copies of verified nodes; the root tag never
    leaves the object.
    """

    prf: Prf
    levels: int = 4
    leaf_default: bytes = bytes(BLOCK_SIZE)
    untrusted: dict[NodeId, bytes] = field(default_factory=dict)
    cache: dict[NodeId, bytes] = field(default_factory=dict)
    root: int = 0
    cached_nodes_limit: int | None = None

    def __post_init__(self):
        self._defaults: list[bytes] = [self.leaf_default]
        for level in range(1, self.levels + 1):
            child_hash = self._hash(level - 1, 0, self._defaults[level - 1], default=True)
            self._defaults.append(child_hash.to_bytes(HASH_SIZE, "little") * HASHES_PER_BLOCK)
        self.root = self._hash(self.levels, 0, self._defaults[self.levels], default=True)
        self.stats_verified = 0

    @property
    def capacity(self) -> int:
        return HASHES_PER_BLOCK ** self.levels

    def _hash(self, level: int, index: int, content: bytes, default: bool = False) -> int:
        # default subtrees hash identically regardless of position
        domain = struct.pack("<BBQ", 3, level, 0 if default else index)
        if default:
            return self.prf.tag16(content, domain)
        if content == self._defaults[level]:
            return self.prf.tag16(content, struct.pack("<BBQ", 3, level, 0))
        return self.prf.tag16(content, domain)

    def _stored(self, node: NodeId) -> bytes:
        return self.untrusted.get(node, self._defaults[node[0]])

    def _check_index(self, index: int):
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf block {index} outside tree capacity {self.capacity}")

    def _expected_hash(self, level: int, index: int) -> int:
        """Trusted hash of node (level, index), verifying ancestors on the way."""
        if level == self.levels:
            return self.root
        parent = (level + 1, index // HASHES_PER_BLOCK)
        content = self._trusted_content(parent)
        slot = (index % HASHES_PER_BLOCK) * HASH_SIZE
        return int.from_bytes(content[slot:slot + HASH_SIZE], "little")

    def _trusted_content(self, node: NodeId) -> bytes:
        hit = self.cache.get(node)
        if hit is not None:
            return hit
        level, index = node
        content = self._stored(node)
        self.stats_verified += 1
        if self._hash(level, index, content) != self._expected_hash(level, index):
            raise IntegrityError(IntegrityKind.TREE_MISMATCH, f"node level={level} index={index}")
        self._cache_put(node, content)
        return content

    def _cache_put(self, node: NodeId, content: bytes):
        self.cache[node] = content
        if self.cached_nodes_limit is not None and len(self.cache) > self.cached_nodes_limit:
            oldest = next(iter(self.cache))
            if oldest != node:
                self.evict(oldest)

    def verify(self, index: int) -> bytes:
        """Fetch leaf block ``index`` and verify it up to the first cached ancestor."""
        self._check_index(index)
        return self._trusted_content((0, index))

    def read(self, index: int) -> bytes:
        return self.verify(index)

    def update(self, index: int, new_contents: bytes) -> int:
        """Replace a leaf block and recompute every ancestor hash; returns the new root."""
        self._check_index(index)
        if len(new_contents) != BLOCK_SIZE:
            raise ValueError("leaf blocks are 64 bytes")
        for level in range(self.levels):
            self._trusted_content((level + 1, index >> (5 * (level + 1))))
        node: NodeId = (0, index)
        content = new_contents
        for level in range(self.levels):
            self.cache[node] = content
            self.untrusted[node] = content
            h = self._hash(level, node[1], content)
            parent = (level + 1, node[1] // HASHES_PER_BLOCK)
            pc = bytearray(self.cache[parent])
            slot = (node[1] % HASHES_PER_BLOCK) * HASH_SIZE
            pc[slot:slot + HASH_SIZE] = h.to_bytes(HASH_SIZE, "little")
            node, content = parent, bytes(pc)
        self.cache[node] = content
        self.untrusted[node] = content
        self.root = self._hash(self.levels, 0, content)
        return self.root

    def evict(self, node: NodeId):
        content = self.cache.pop(node, None)
        if content is not None:
            self.untrusted[node] = content

    def flush(self):
        for node in list(self.cache):
            self.evict(node)


class BonsaiTree:
    """Counter store (8 seeds per 64-byte block) protected by a HashTree."""

    def __init__(self, prf: Prf, levels: int = 4):
        self.tree = HashTree(prf, levels=levels)

    @staticmethod
    def counter_block_of(block_index: int) -> tuple[int, int]:
        return divmod(block_index, SEEDS_PER_COUNTER_BLOCK)

    def verify(self, counter_block_addr: int) -> bytes:
        return self.tree.verify(counter_block_addr)

    def update(self, counter_block_addr: int, new_contents: bytes) -> int:
        return self.tree.update(counter_block_addr, new_contents)

    def get_seed(self, block_index: int) -> int:
        cb, slot = self.counter_block_of(block_index)
        content = self.tree.verify(cb)
        return int.from_bytes(content[slot * SEED_SIZE:(slot + 1) * SEED_SIZE], "little")

    def set_seed(self, block_index: int, seed: int) -> int:
        cb, slot = self.counter_block_of(block_index)
        content = bytearray(self.tree.verify(cb))
        content[slot * SEED_SIZE:(slot + 1) * SEED_SIZE] = seed.to_bytes(SEED_SIZE, "little")
        return self.tree.update(cb, bytes(content))

    @property
    def root(self) -> int:
        return self.tree.root


def bmt_verify(tree: BonsaiTree, counter_block_addr: int) -> bytes:
    return tree.verify(counter_block_addr)


def bmt_update(tree: BonsaiTree, counter_block_addr: int, new_contents: bytes) -> int:
    return tree.update(counter_block_addr, new_contents)


@dataclass
class SecureMemory:
    """One node's untrusted memory: sealed blocks, counters under a BMT.

    ``store`` / ``load`` are the TA boundary: eviction seals with a fresh seed,
    fetch verifies the counter through the tree and opens the block.
    """

    prf: Prf
    levels: int = 4
    blocks: dict[int, SealedBlock] = field(default_factory=dict)

    def __post_init__(self):
        self.bmt = BonsaiTree(self.prf, self.levels)
        self._next_seed = 1

    def store(self, va: int, clear: bytes, seed: int | None = None) -> SealedBlock:
        idx = va // BLOCK_SIZE
        if seed is None:
            seed = self._next_seed
            self._next_seed += 1
        self.bmt.set_seed(idx, seed)
        sealed = seal_block(self.prf, seed, va, clear)
        self.blocks[idx] = sealed
        return sealed

    def load(self, va: int) -> bytes:
        idx = va // BLOCK_SIZE
        seed = self.bmt.get_seed(idx)
        sealed = self.blocks.get(idx)
        if sealed is None:
            if seed != 0:
                raise IntegrityError(IntegrityKind.MAC_MISMATCH, f"missing block {va:#x}")
            return bytes(BLOCK_SIZE)
        return open_block(self.prf, sealed, seed)
