"""Protocol-tree tests: interactivity profiles against exhaustive oracles,
the blocking transform round bound, and noiseless-walk equivalence."""

import numpy as np
import pytest

from icx.protocol import (
    ALICE,
    BOB,
    Inputs,
    alternating_tree,
    average_message_length,
    blocking_transform,
    blocks_tree,
    is_b_blocked,
    load_protocol,
    make_native_blocked,
    one_way_tree,
    path_block_lengths,
    prf_tree,
    random_blocked_protocol,
    run_noiseless,
    table_tree,
)
from icx.protocol import ProtocolTree, _int_to_path

RNG = np.random.default_rng(5)


def exhaustive_profile(tree):
    """Independent oracle: enumerate every s in {0,1}^n."""
    best_ell, max_k = None, 0
    for i in range(1 << tree.depth):
        lengths = path_block_lengths(tree, _int_to_path(i, tree.depth))
        ell_s = tree.depth / len(lengths)
        best_ell = ell_s if best_ell is None else min(best_ell, ell_s)
        max_k = max(max_k, len(lengths))
    return best_ell, max_k


def recursive_walk(tree, inputs):
    """Second, recursive implementation of the preferred-path walk."""
    def go(prefix):
        if prefix.size == tree.depth:
            return prefix
        bit = tree.preferred_fn(prefix, inputs)
        return go(np.append(prefix, np.uint8(bit)))
    return go(np.zeros(0, dtype=np.uint8))


def test_alternating_has_ell_one():
    prof = average_message_length(alternating_tree(4))
    assert prof.avg_message_length == 1.0
    assert prof.alternation_count == 4


def test_one_way_has_ell_n():
    prof = average_message_length(one_way_tree(9))
    assert prof.avg_message_length == 9.0
    assert prof.alternation_count == 1


def test_depth_zero_rejected():
    with pytest.raises(ValueError, match="empty protocol"):
        ProtocolTree(0, lambda p: ALICE, lambda p, i: 0)


def test_derived_two_branch_profile():
    # depth-4 tree: 0-branch has blocks (3,1), 1-branch has blocks (2,2)
    # owner table by level: root A; then owner depends on the first bit
    def owner(p):
        if p.size == 0:
            return ALICE
        if p[0] == 0:
            return ALICE if p.size < 3 else BOB
        return ALICE if p.size < 2 else BOB

    tree = ProtocolTree(4, owner, lambda p, i: 0)
    table = np.array([owner(_int_to_path(i, d)) for d in range(4)
                      for i in range(1 << d)])
    tree.owner_table = table
    prof = average_message_length(tree)
    want_ell, want_k = exhaustive_profile(tree)
    assert prof.avg_message_length == want_ell == 2.0
    assert prof.alternation_count == want_k == 2
    assert prof.per_path_lengths["0000"] == [3, 1]
    assert prof.per_path_lengths["1111"] == [2, 2]


def test_profile_matches_exhaustive_on_random_adaptive_trees():
    for seed in range(12):
        depth = int(RNG.integers(2, 9))
        table = np.random.default_rng(seed).integers(0, 2, size=(1 << depth) - 1)
        tree = table_tree(depth, table)
        prof = average_message_length(tree)
        want_ell, want_k = exhaustive_profile(tree)
        assert prof.avg_message_length == want_ell
        assert prof.alternation_count == want_k
        # ell * k_path <= n on each path
        for lengths in prof.per_path_lengths.values() if prof.per_path_lengths else []:
            assert prof.avg_message_length * len(lengths) <= depth + 1e-9


def test_blocking_pads_runs():
    # path blocks (3,5), b=4 -> padded to (4,8): 12 rounds <= 8 + 2*4
    tree = blocks_tree([3, 5])
    blocked = blocking_transform(tree, 4)
    assert blocked.rounds == 12
    assert blocked.rounds <= 8 + 2 * 4
    assert is_b_blocked(blocked, 4)


def test_blocking_idempotent_on_blocked_tree():
    tree = blocks_tree([4, 8, 4])
    blocked = blocking_transform(tree, 4)
    assert blocked.rounds == 16  # no padding added
    assert is_b_blocked(blocked, 4)


def test_blocking_round_bound_grid():
    # k-alternating n-round trees: blocked rounds <= n + k*b across the grid
    rng = np.random.default_rng(0)
    for n in [8, 16, 33, 64]:
        for k in [1, 2, 3, 5, 8]:
            if k > n:
                continue
            for b in [2, 4, 8]:
                cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False))
                lengths = np.diff(np.concatenate([[0], cuts, [n]])).tolist()
                tree = blocks_tree(lengths)
                blocked = blocking_transform(tree, b)
                assert blocked.rounds <= n + k * b
                assert blocked.rounds % b == 0


def test_blocking_b1_is_identity_on_round_counts():
    for seed in range(5):
        depth = int(RNG.integers(2, 10))
        table = np.random.default_rng(seed).integers(0, 2, size=(1 << depth) - 1)
        tree = table_tree(depth, table)
        assert blocking_transform(tree, 1).rounds == depth


def test_blocked_is_b_blocked_adaptive():
    for seed in range(6):
        depth = int(RNG.integers(3, 8))
        table = np.random.default_rng(seed + 50).integers(0, 2, size=(1 << depth) - 1)
        tree = table_tree(depth, table)
        blocked = blocking_transform(tree, 3)
        assert is_b_blocked(blocked, 3, samples=64)


def test_noiseless_matches_recursive_walk():
    for seed in range(10):
        tree = prf_tree(int(RNG.integers(2, 12)), seed)
        inputs = Inputs(int(RNG.integers(1 << 30)), int(RNG.integers(1 << 30)))
        assert np.array_equal(run_noiseless(tree, inputs), recursive_walk(tree, inputs))


def test_figure_style_three_round_path():
    # 3-round tree with explicit preferred edges realising the path 011
    owner_table = [ALICE, BOB, BOB, ALICE, ALICE, ALICE, ALICE]
    pref_table = [0, 1, 0, 0, 1, 0, 0]  # root->0, node "0"->1, node "01"->1
    tree = table_tree(3, owner_table, pref_table)
    assert run_noiseless(tree, Inputs()).tolist() == [0, 1, 1]


def test_all_zero_preferred_edges():
    tree = table_tree(4, [ALICE] * 15, [0] * 15)
    assert run_noiseless(tree, Inputs()).tolist() == [0, 0, 0, 0]


def test_origin_map_roundtrip_exhaustive():
    # every original leaf is reachable: insert pads along each original path
    for seed in range(4):
        depth = 6
        table = np.random.default_rng(seed + 9).integers(0, 2, size=(1 << depth) - 1)
        tree = table_tree(depth, table)
        b = 3
        blocked = blocking_transform(tree, b)
        for i in range(1 << depth):
            orig_path = _int_to_path(i, depth)
            padded = pad_path(tree, orig_path, b, blocked.rounds)
            back = blocked.origin_of(padded)
            assert np.array_equal(back, orig_path)


def pad_path(tree, path, b, total):
    """Insert the dummy rounds the transform would add along this path."""
    out = []
    run_len, prev = 0, None
    for d in range(path.size):
        w = tree.owner_fn(path[:d])
        if w != prev:
            if prev is not None:
                out.extend([0] * ((-run_len) % b))
            run_len, prev = 0, w
        out.append(int(path[d]))
        run_len += 1
    out.extend([0] * ((-run_len) % b))
    out.extend([0] * (total - len(out)))
    return np.array(out, dtype=np.uint8)


def test_noiseless_blocked_maps_to_original():
    for seed in range(20):
        depth = int(RNG.integers(2, 16))
        tree = prf_tree(depth, seed) if depth > 10 else table_tree(
            depth, np.random.default_rng(seed).integers(0, 2, size=(1 << depth) - 1))
        b = int(RNG.integers(2, 6))
        blocked = blocking_transform(tree, b) if (tree.non_adaptive or tree.depth <= 16) else None
        if blocked is None:
            continue
        inputs = Inputs(int(RNG.integers(1 << 30)), int(RNG.integers(1 << 30)))
        t_blk = run_noiseless(blocked, inputs)
        t_orig = run_noiseless(tree, inputs)
        assert np.array_equal(blocked.origin_of(t_blk), t_orig)


def test_native_blocked_protocol_blocks():
    proto = random_blocked_protocol(6, 8, seed=3)
    assert proto.rounds == 48
    inputs = Inputs(1, 2)
    t = run_noiseless(proto, inputs)
    # block_content agrees with the noiseless walk block by block
    for c in range(6):
        content = proto.block_content(t[:c * 8], inputs)
        assert np.array_equal(content, t[c * 8:(c + 1) * 8])
    # beyond the tree: zero blocks owned by Alice
    assert proto.block_owner(t) == ALICE
    assert not proto.block_content(t, inputs).any()


def test_load_protocol_json():
    tree = load_protocol({"depth": 6, "owner_rule": "alternating",
                          "preferred_edges": 4})
    assert tree.depth == 6 and tree.owner_fn(np.zeros(1, dtype=np.uint8)) == BOB
    tree = load_protocol('{"depth": 8, "owner_rule": "blocks:[3, 5]"}')
    assert path_block_lengths(tree, np.zeros(8, dtype=np.uint8)) == [3, 5]
    tree = load_protocol({"depth": 2, "owner_rule": "table",
                          "owner_table": [0, 1, 1],
                          "preferred_edges": [1, 0, 1]})
    assert run_noiseless(tree, Inputs()).tolist() == [1, 1]
