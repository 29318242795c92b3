"""Protocol trees, interactivity measurement, and the blocking transform.

A protocol tree is represented by its depth plus two callables: the owner of
the node reached by a bit-string prefix, and the owner's preferred outgoing
edge given that party's input.  Small trees (depth <= EXPLICIT_LIMIT) may
additionally carry explicit per-node tables, which unlocks the exhaustive
operations (path enumeration, full DP, origin-map checks).  Deep trees used
by the experiments are generated lazily from a keyed PRF so the protocol
behaves like a real adaptive conversation without 2^n storage.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bitops import as_bits

__all__ = [
    "ALICE",
    "BOB",
    "Inputs",
    "ProtocolTree",
    "MessageLengthProfile",
    "BlockedProtocol",
    "average_message_length",
    "blocking_transform",
    "make_native_blocked",
    "run_noiseless",
    "alternating_tree",
    "one_way_tree",
    "blocks_tree",
    "table_tree",
    "prf_tree",
    "random_blocked_protocol",
    "load_protocol",
    "is_b_blocked",
    "owners_along",
    "path_block_lengths",
]

ALICE, BOB = 0, 1
EXPLICIT_LIMIT = 24


@dataclass(frozen=True)
class Inputs:
    """The two parties' inputs; each fixes the preferred edges at the nodes
    that party owns."""
    alice: int = 0
    bob: int = 0

    def of(self, owner: int) -> int:
        return self.alice if owner == ALICE else self.bob


def _prf_bit(key: int, owner: int, owner_input: int, prefix: np.ndarray) -> int:
    h = hashlib.blake2b(digest_size=8,
                        key=(key & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    h.update(owner.to_bytes(1, "little"))
    h.update((owner_input & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    h.update(len(prefix).to_bytes(4, "little"))
    h.update(np.packbits(prefix).tobytes())
    return h.digest()[0] & 1


@dataclass
class ProtocolTree:
    """Binary protocol tree of a fixed depth.

    owner_fn(prefix) -> ALICE/BOB for the node reached by `prefix`;
    preferred_fn(prefix, inputs) -> the owner's preferred bit there.
    `non_adaptive` marks owner_fn as depending on len(prefix) only.
    """

    depth: int
    owner_fn: object
    preferred_fn: object
    non_adaptive: bool = False
    owner_table: np.ndarray | None = None  # heap-ordered, explicit trees only

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("empty protocol")

    @property
    def explicit(self) -> bool:
        return self.depth <= EXPLICIT_LIMIT

    def owner(self, prefix) -> int:
        return self.owner_fn(as_bits(prefix))

    def preferred(self, prefix, inputs: Inputs) -> int:
        return self.preferred_fn(as_bits(prefix), inputs)


def path_block_lengths(tree, path_bits) -> list[int]:
    """Maximal same-owner block lengths along one root-to-leaf path."""
    path = as_bits(path_bits, tree.depth)
    lengths, prev = [], None
    for d in range(tree.depth):
        w = tree.owner_fn(path[:d])
        if w == prev:
            lengths[-1] += 1
        else:
            lengths.append(1)
            prev = w
    return lengths


@dataclass
class MessageLengthProfile:
    avg_message_length: float  # ell = min over paths of per-path average
    alternation_count: int  # k = max over paths of the block count
    per_path_lengths: dict | None = None  # path string -> block lengths (small trees)


def average_message_length(tree: ProtocolTree) -> MessageLengthProfile:
    """Interactivity profile: ell = n / max-blocks, k = max-blocks.

    The minimum of the per-path average n/blocks(s) is attained on a path
    maximising the block count, so one DP over (node, entering owner)
    suffices.  Per the definition the minimum ranges over all s in {0,1}^n,
    reachable or not.
    """
    n = tree.depth
    if tree.non_adaptive:
        owners = [tree.owner_fn(np.zeros(d, dtype=np.uint8)) for d in range(n)]
        k = 1 + sum(1 for i in range(1, n) if owners[i] != owners[i - 1])
        profile = MessageLengthProfile(n / k, k)
        if tree.explicit and n <= 12:
            profile.per_path_lengths = _enumerate_paths(tree)
        return profile
    if not tree.explicit or (tree.owner_table is None and n > 16):
        raise NotImplementedError(
            "average_message_length needs an explicit tree or a non-adaptive rule")

    # per-level sweep over all 2^d nodes: blocks accumulated entering each
    # node, exact for adaptive owners up to the explicit depth cap
    cur_blocks = np.zeros(1, dtype=np.int32)
    cur_owner = np.full(1, 2, dtype=np.int8)  # 2 = no block entered yet
    for d in range(n):
        owners = _level_owners(tree, d)
        new_blocks = cur_blocks + (owners != cur_owner)
        cur_blocks = np.repeat(new_blocks, 2)
        cur_owner = np.repeat(owners, 2)
    k = int(cur_blocks.max())
    profile = MessageLengthProfile(n / k, k)
    if n <= 12:
        profile.per_path_lengths = _enumerate_paths(tree)
    return profile


def _int_to_path(i: int, d: int) -> np.ndarray:
    return np.array([(i >> (d - 1 - j)) & 1 for j in range(d)], dtype=np.uint8)


def _level_owners(tree: ProtocolTree, d: int) -> np.ndarray:
    owners = np.empty(1 << d, dtype=np.int8)
    if tree.owner_table is not None:
        owners[:] = tree.owner_table[(1 << d) - 1:(2 << d) - 1]
    else:
        for i in range(1 << d):
            owners[i] = tree.owner_fn(_int_to_path(i, d))
    return owners


def _enumerate_paths(tree) -> dict:
    out = {}
    for i in range(1 << tree.depth):
        path = _int_to_path(i, tree.depth)
        out["".join(map(str, path.tolist()))] = path_block_lengths(tree, path)
    return out


def run_noiseless(proto, inputs: Inputs) -> np.ndarray:
    """Ground-truth transcript: the unique preferred root-to-leaf path."""
    depth = proto.rounds if isinstance(proto, BlockedProtocol) else proto.depth
    path = np.zeros(depth, dtype=np.uint8)
    for d in range(depth):
        path[d] = proto.preferred_fn(path[:d], inputs)
    return path


# ---------------------------------------------------------------------------
# Blocking
# ---------------------------------------------------------------------------

class _Walk:
    """Translation state between a blocked-tree prefix and the base tree."""

    __slots__ = ("orig", "pad_left", "run_owner", "run_len", "done")

    def __init__(self):
        self.orig: list[int] = []
        self.pad_left = 0
        self.run_owner = ALICE
        self.run_len = 0
        self.done = False


@dataclass
class BlockedProtocol:
    """A b-blocked protocol, either derived by `blocking_transform` or native.

    Every aligned b-round block has a single owner on every path; the engine
    additionally extends the tree past its depth with zero blocks owned by
    Alice, so owner/content queries are total.
    """

    block_size: int
    rounds: int  # n', a multiple of block_size
    tree: ProtocolTree
    native: bool = False  # tree itself is already b-blocked (no translation)

    def __post_init__(self):
        if self.rounds % self.block_size:
            raise ValueError("blocked rounds must be a multiple of the block size")

    @property
    def n_blocks(self) -> int:
        return self.rounds // self.block_size

    # -- walk translation (identity for native protocols) ------------------

    def _walk(self, prefix: np.ndarray) -> _Walk:
        st = _Walk()
        b = self.block_size
        n = self.tree.depth
        for bit in prefix.tolist():
            if st.done:
                continue  # trailing dummy rounds
            if st.pad_left:
                st.pad_left -= 1
                if st.pad_left == 0 and len(st.orig) == n:
                    st.done = True
                continue
            p = np.array(st.orig, dtype=np.uint8)
            w = self.tree.owner_fn(p)
            if w != st.run_owner or st.run_len == 0:
                st.run_owner, st.run_len = w, 0
            st.orig.append(int(bit))
            st.run_len += 1
            if len(st.orig) == n:
                st.pad_left = (-st.run_len) % b
                if st.pad_left == 0:
                    st.done = True
            else:
                nxt = self.tree.owner_fn(np.array(st.orig, dtype=np.uint8))
                if nxt != w:
                    st.pad_left = (-st.run_len) % b
                    st.run_len = 0
        return st

    def owner_fn(self, prefix) -> int:
        prefix = as_bits(prefix)
        if self.native:
            if prefix.size >= self.tree.depth:
                return ALICE  # zero-padding blocks
            return self.tree.owner_fn(prefix)
        st = self._walk(prefix)
        if st.done:
            return ALICE
        if st.pad_left:
            return st.run_owner
        return self.tree.owner_fn(np.array(st.orig, dtype=np.uint8))

    def preferred_fn(self, prefix, inputs: Inputs) -> int:
        prefix = as_bits(prefix)
        if self.native:
            if prefix.size >= self.tree.depth:
                return 0
            return self.tree.preferred_fn(prefix, inputs)
        st = self._walk(prefix)
        if st.done or st.pad_left:
            return 0  # dummy padding bit, fixed to 0
        return self.tree.preferred_fn(np.array(st.orig, dtype=np.uint8), inputs)

    def origin_of(self, blocked_path) -> np.ndarray:
        """Map a blocked-tree path to the base-tree path it simulates."""
        blocked_path = as_bits(blocked_path)
        if self.native:
            return blocked_path[:self.tree.depth].copy()
        st = self._walk(blocked_path)
        return np.array(st.orig, dtype=np.uint8)

    # -- engine-facing block queries ---------------------------------------

    def block_owner(self, transcript_prefix) -> int:
        prefix = as_bits(transcript_prefix)
        if prefix.size % self.block_size:
            raise ValueError("block queries need block-aligned prefixes")
        if prefix.size >= self.rounds:
            return ALICE
        return self.owner_fn(prefix)

    def block_content(self, transcript_prefix, inputs: Inputs) -> np.ndarray:
        """The owner's preferred bits for the next block after the prefix."""
        prefix = as_bits(transcript_prefix)
        if prefix.size >= self.rounds:
            return np.zeros(self.block_size, dtype=np.uint8)
        cur = prefix.copy()
        out = np.empty(self.block_size, dtype=np.uint8)
        for i in range(self.block_size):
            bit = self.preferred_fn(cur, inputs) if cur.size < self.rounds else 0
            out[i] = bit
            cur = np.append(cur, np.uint8(bit))
        return out


def blocking_transform(tree: ProtocolTree, b: int) -> BlockedProtocol:
    """Pad every maximal same-owner run up to a multiple of b with dummy
    rounds (fixed bit 0, ignored by the origin map)."""
    if b < 1:
        raise ValueError("block size must be >= 1")
    if tree.non_adaptive:
        lengths = path_block_lengths(tree, np.zeros(tree.depth, dtype=np.uint8))
        rounds = sum(-(-l // b) * b for l in lengths)
    elif tree.explicit and (tree.owner_table is not None or tree.depth <= 16):
        rounds = _max_padded_length(tree, b)
    else:
        raise NotImplementedError("blocking an adaptive tree needs an explicit tree")
    return BlockedProtocol(b, rounds, tree)


def _max_padded_length(tree: ProtocolTree, b: int) -> int:
    # per-level sweep: padded length accumulated per node, maximised at leaves
    cur_pad = np.zeros(1, dtype=np.int64)  # rounds emitted so far (padded)
    cur_owner = np.full(1, 2, dtype=np.int8)
    cur_run = np.zeros(1, dtype=np.int64)
    for d in range(tree.depth):
        owners = _level_owners(tree, d)
        switch = owners != cur_owner
        pad = np.where(switch & (cur_owner != 2), (-cur_run) % b, 0)
        new_pad = cur_pad + pad + 1
        new_run = np.where(switch, 1, cur_run + 1)
        cur_pad = np.repeat(new_pad, 2)
        cur_run = np.repeat(new_run, 2)
        cur_owner = np.repeat(owners, 2)
    total = cur_pad + (-cur_run) % b
    return int(total.max())


def make_native_blocked(tree: ProtocolTree, B: int) -> BlockedProtocol:
    """Wrap a tree that is already B-blocked (depth a multiple of B)."""
    if tree.depth % B:
        raise ValueError("native blocked protocol needs depth % B == 0")
    return BlockedProtocol(B, tree.depth, tree, native=True)


def owners_along(proto, path) -> list[int]:
    """Per-round owners down one path, walking the path a single time."""
    if isinstance(proto, BlockedProtocol) and not proto.native:
        path = as_bits(path, proto.rounds)
        st = _Walk()
        out = []
        b, n = proto.block_size, proto.tree.depth
        for bit in path.tolist():
            if st.done:
                out.append(ALICE)
                continue
            if st.pad_left:
                out.append(st.run_owner)
                st.pad_left -= 1
                if st.pad_left == 0 and len(st.orig) == n:
                    st.done = True
                continue
            w = proto.tree.owner_fn(np.array(st.orig, dtype=np.uint8))
            out.append(w)
            if w != st.run_owner or st.run_len == 0:
                st.run_owner, st.run_len = w, 0
            st.orig.append(int(bit))
            st.run_len += 1
            if len(st.orig) == n:
                st.pad_left = (-st.run_len) % b
                if st.pad_left == 0:
                    st.done = True
            elif proto.tree.owner_fn(np.array(st.orig, dtype=np.uint8)) != w:
                st.pad_left = (-st.run_len) % b
                st.run_len = 0
        return out
    depth = proto.rounds if isinstance(proto, BlockedProtocol) else proto.depth
    path = as_bits(path, depth)
    return [proto.owner_fn(path[:d]) for d in range(depth)]


def is_b_blocked(proto, b: int, paths=None, samples: int = 512) -> bool:
    """Independent checker: one owner per aligned b-block on each path.

    Exhaustive up to 12 rounds; beyond that, checks the supplied paths or a
    seeded random sample.
    """
    depth = proto.rounds if isinstance(proto, BlockedProtocol) else proto.depth
    if paths is None:
        if depth <= 12:
            paths = (_int_to_path(i, depth) for i in range(1 << depth))
        else:
            rng = np.random.default_rng(0)
            paths = (rng.integers(0, 2, size=depth).astype(np.uint8)
                     for _ in range(samples))
    for path in paths:
        owners = owners_along(proto, path)
        for j in range(0, depth, b):
            if len(set(owners[j:j + b])) > 1:
                return False
    return True


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def alternating_tree(n: int, first: int = ALICE, seed: int = 0) -> ProtocolTree:
    owner = lambda p: (first + p.size) % 2
    pref = lambda p, inp: _prf_bit(seed, owner(p), inp.of(owner(p)), p)
    return ProtocolTree(n, owner, pref, non_adaptive=True)


def one_way_tree(n: int, speaker: int = ALICE, seed: int = 0) -> ProtocolTree:
    owner = lambda p: speaker
    pref = lambda p, inp: _prf_bit(seed, speaker, inp.of(speaker), p)
    return ProtocolTree(n, owner, pref, non_adaptive=True)


def blocks_tree(lengths, first: int = ALICE, seed: int = 0) -> ProtocolTree:
    """Non-adaptive tree whose owner runs have the given lengths."""
    lengths = list(lengths)
    n = sum(lengths)
    bounds = np.cumsum([0] + lengths)

    def owner(p):
        idx = int(np.searchsorted(bounds, p.size, side="right")) - 1
        return (first + idx) % 2

    pref = lambda p, inp: _prf_bit(seed, owner(p), inp.of(owner(p)), p)
    return ProtocolTree(n, owner, pref, non_adaptive=True)


def table_tree(depth: int, owner_table, preferred_table=None) -> ProtocolTree:
    """Explicit tree from heap-ordered tables (node index 2^d - 1 + path)."""
    owner_table = np.asarray(owner_table, dtype=np.int8)
    if owner_table.size != (1 << depth) - 1:
        raise ValueError("owner table must cover all internal nodes")

    def node_index(p):
        i = 0
        for bit in p.tolist():
            i = 2 * i + 1 + int(bit)
        return i

    owner = lambda p: int(owner_table[node_index(p)])
    if preferred_table is not None:
        preferred_table = np.asarray(preferred_table, dtype=np.uint8)
        pref = lambda p, inp: int(preferred_table[node_index(p)])
    else:
        pref = lambda p, inp: _prf_bit(0, owner(p), inp.of(owner(p)), p)
    return ProtocolTree(depth, owner, pref, owner_table=owner_table)


def prf_tree(depth: int, seed: int, min_run: int = 1) -> ProtocolTree:
    """Adaptive lazy tree: the owner switches pseudo-randomly but never
    before min_run rounds, so the average message length stays >= min_run."""

    def owner(p):
        w, run = ALICE, 0
        for d in range(p.size + 1):
            if d == p.size:
                return w
            run += 1
            if run >= min_run and _prf_bit(seed ^ 0x51, w, 0, p[:d + 1]):
                w, run = 1 - w, 0
        return w

    pref = lambda p, inp: _prf_bit(seed, owner(p), inp.of(owner(p)), p)
    return ProtocolTree(depth, owner, pref)


def random_blocked_protocol(n_blocks: int, B: int, seed: int,
                            owner_seq=None) -> BlockedProtocol:
    """Natively B-blocked protocol with a (seeded) random block-owner
    sequence and PRF preferred edges: the experiment workhorse."""
    rng = np.random.default_rng(seed)
    if owner_seq is None:
        owner_seq = rng.integers(0, 2, size=n_blocks).tolist()
    owner_seq = list(owner_seq)

    def owner(p):
        return int(owner_seq[min(p.size // B, n_blocks - 1)])

    pref = lambda p, inp: _prf_bit(seed, owner(p), inp.of(owner(p)), p)
    tree = ProtocolTree(n_blocks * B, owner, pref, non_adaptive=True)
    return make_native_blocked(tree, B)


def load_protocol(doc) -> ProtocolTree:
    """Load a protocol description from a JSON document (or path / dict):
    {"depth": n, "owner_rule": "alternating" | "blocks:[..]" | "table",
     "owner_table": [...], "preferred_edges": seed | [table]}.
    """
    if isinstance(doc, (str, bytes)) and "{" not in str(doc):
        with open(doc) as fh:
            doc = json.load(fh)
    elif isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    depth = int(doc["depth"])
    rule = doc.get("owner_rule", "alternating")
    pref_spec = doc.get("preferred_edges", 0)
    seed = pref_spec if isinstance(pref_spec, int) else 0

    if rule == "alternating":
        tree = alternating_tree(depth, seed=seed)
    elif isinstance(rule, str) and rule.startswith("blocks:"):
        tree = blocks_tree(json.loads(rule[len("blocks:"):]), seed=seed)
    elif rule == "table":
        table = doc["owner_table"]
        pref_table = pref_spec if isinstance(pref_spec, list) else None
        tree = table_tree(depth, table, pref_table)
    else:
        raise ValueError(f"unknown owner_rule {rule!r}")
    return tree
