"""The encoded-protocol simulator: mini-block iterations with hidden control
slots, rateless data transmission, and meeting-point backtracking.

Each iteration both parties (1) build and encode their 8-field control
record, (2) exchange one mini-block of b' rounds - b data bits plus each
party's o encoded control bits at shared-secret positions - and (3) run the
control-flow state machine on whatever they decoded.  The state machine
follows the pseudocode contract exactly: the update phase adjusts the
backtracking counters, the sync-status procedure re-derives the party's
belief, and the transition phase performs meeting-point rollbacks or error
resets when the counters cross the 0.2k thresholds.

Decoding tiers: the listener's window decode first checks ground-truth
candidate codewords against the certified unique-decoding radius (inside the
radius a hit *is* the nearest codeword); below the enumeration limit it
falls back to the exact table search, above it to a deterministic systematic
guess whose hash check then decides.  The control decode works the same way
through `ControlCodec.dec` with the transmitted wire bits as the hint.

The oblivious adversary is a fixed `ErrorPattern` over all rounds, generated
before the run from public parameters only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bitops import pack_words
from .codes import (
    CodeSearchParams,
    gv_search,
    rateless_search,
    window_decode,
)
from .control import FLIP, SET0, SET1, STAR, ControlCodec, ControlInfo, ErrorPattern
from .entropy import binary_entropy, certified_distance
from .protocol import ALICE, BOB, BlockedProtocol, Inputs, run_noiseless
from .randomness import SharedRandomness, SmallBiasStream, slot_assignment
from .trace import (
    INVALID,
    MALICIOUS,
    SOUND,
    IterationEvent,
    PartyView,
    RunResult,
    StateSnapshot,
)

__all__ = [
    "EngineConfig",
    "RunParams",
    "derive_params",
    "ChannelModel",
    "PublicRunInfo",
    "adversary_strategies",
    "make_pattern",
    "run_simulation",
    "run_rateless",
    "EngineError",
]


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    """Desk-scale engine parameters.  eps_prime defaults to eps^2; the
    N_iter constant is (1 + kappa*eps*log2(1/eps)) * (s + latency_slack)/s,
    tuned so the zero-noise run finishes with >= 10% slack."""

    s: int = 16
    b: int = 16
    p: int = 8
    o_prime: int = 8
    eps: float = 0.0
    eps_prime: float | None = None
    kappa_iter: float = 8.0
    latency_slack: float = 5.0
    exchange_factor: float = 10.0
    delta_exp: int = 64  # stretch bias delta = 2^-delta_exp
    code_seed: int = 0
    exchange: str = "private"  # "private" performs the exchange, "public" skips it
    cert_budget_log2: float = math.log2(0.01)

    @property
    def B(self) -> int:
        return self.s * self.b

    @property
    def eps_prime_val(self) -> float:
        if self.eps_prime is not None:
            return self.eps_prime
        return self.eps * self.eps if self.eps > 0 else 1e-4


# hash-field indices (12 families: per party c, x, k, T, MP1, MP2)
F_C, F_X, F_K, F_T, F_MP1, F_MP2 = range(6)
_NFIELDS = 6


@dataclass
class RunParams:
    """Everything derived from (config, protocol): codes, sizes, layout."""

    cfg: EngineConfig
    n_prime: int
    n_blocks: int
    l_ctrl: int
    o: int
    b_prime: int
    N_iter: int
    N_ex: int
    l_prime: int
    stretch_bits: int
    T_cap: int
    rateless: object
    codec: ControlCodec
    exchange_code: object | None
    words_per_iter: int
    field_offsets: list  # word offset of each of the 12 hash-seed blocks
    field_words: list  # bucket words per field (length 6)
    slots_off: int
    mask_off: list  # per party
    tagseed_off: list
    window_radius: dict

    @property
    def total_rounds(self) -> int:
        return self.N_ex + self.N_iter * self.b_prime


def _ctrl_code_length(k_c: int, budget: float) -> int:
    """Smallest multiple of 64 where a systematic random [o, k_c] code is
    certified to reach relative distance 1/4."""
    from .entropy import certified_systematic_distance
    o = 64 * max(1, math.ceil(k_c / (1 - binary_entropy(0.25)) / 64))
    while True:
        if certified_systematic_distance(k_c, o, budget) >= math.ceil(o / 4):
            return o
        o += 64


def _exchange_min_length(l_prime: int, budget: float) -> int:
    """Smallest length where a random [n, l'] code certifies distance 2n/5."""
    n = math.ceil((l_prime - budget) / (1 - binary_entropy(0.4)))
    while certified_distance(l_prime, n, budget) < math.ceil(0.4 * n):
        n = math.ceil(n * 1.05) + 64
    return n


_param_cache: dict = {}


def derive_params(cfg: EngineConfig, proto: BlockedProtocol) -> RunParams:
    key = (cfg, proto.rounds, proto.block_size)
    if key in _param_cache:
        return _param_cache[key]
    s, b, p = cfg.s, cfg.b, cfg.p
    B = cfg.B
    if proto.block_size != B:
        raise EngineError(f"protocol block size {proto.block_size} != s*b = {B}")
    n_prime = proto.rounds
    n_blocks = proto.n_blocks

    j_bits = max(1, (2 * s).bit_length())
    l_ctrl = 6 * p + j_bits + 1
    k_c = l_ctrl + cfg.o_prime
    o = _ctrl_code_length(k_c, cfg.cert_budget_log2)
    b_prime = b + 2 * o

    noise = 1.0
    if cfg.eps > 0:
        noise += cfg.kappa_iter * cfg.eps * math.log2(1 / cfg.eps)
    N_iter = math.ceil((n_prime / b) * noise * (s + cfg.latency_slack) / s)

    # transcript capacity: listener advances need > s chunks each, sender
    # advances mirror the other side's, plus margin for spurious advances
    T_cap_blocks = n_blocks + math.ceil(2 * N_iter / (s + 1)) + 8
    T_cap = T_cap_blocks * B

    # stretch layout (all offsets 64-bit aligned)
    xw = 1 + -(-B // 64)
    tw = 1 + -(-T_cap // 64)
    field_words = [1, xw, 1, tw, tw, tw]
    field_offsets = []
    off = 0
    for party in (ALICE, BOB):
        for f in range(_NFIELDS):
            field_offsets.append(off)
            off += p * field_words[f]
    slots_off = off
    off += b_prime  # one 64-bit sort key per slot
    mask_words = -(-o // 64)
    tag_words = -(-(l_ctrl * cfg.o_prime) // 64)
    mask_off = []
    tagseed_off = []
    for party in (ALICE, BOB):
        mask_off.append(off)
        off += mask_words
        tagseed_off.append(off)
        off += tag_words
    words_per_iter = off
    stretch_bits = 64 * words_per_iter * N_iter

    # l' = stretch seed + spare; the exchange code carries exactly l' bits
    delta = 2.0 ** -cfg.delta_exp
    from .randomness import _lfsr_degree
    l_prime = _lfsr_degree(stretch_bits, delta) + 64

    if cfg.exchange == "public":
        N_ex, exchange_code = 0, None
    else:
        n_min = _exchange_min_length(l_prime, cfg.cert_budget_log2)
        N_ex = max(math.ceil(cfg.exchange_factor * cfg.eps * N_iter * b_prime), n_min)
        exchange_code = gv_search(l_prime, N_ex, math.ceil(0.4 * N_ex),
                                  CodeSearchParams(rng_seed=cfg.code_seed),
                                  verification="certified")

    rateless = rateless_search(s, b, CodeSearchParams(
        rng_seed=cfg.code_seed, log2_fail_budget=cfg.cert_budget_log2),
        enforce_targets=False)
    ctrl_code = gv_search(k_c, o, math.ceil(o / 4),
                          CodeSearchParams(rng_seed=cfg.code_seed,
                                           log2_fail_budget=cfg.cert_budget_log2),
                          systematic=True, verification="certified")
    codec = ControlCodec(l_ctrl, cfg.o_prime, ctrl_code)
    radius = {j: rateless.decode_radius(j) for j in range(s + 1, 2 * s + 1)}

    params = RunParams(cfg, n_prime, n_blocks, l_ctrl, o, b_prime, N_iter, N_ex,
                       l_prime, stretch_bits, T_cap, rateless, codec,
                       exchange_code, words_per_iter, field_offsets, field_words,
                       slots_off, mask_off, tagseed_off, radius)
    _param_cache[key] = params
    return params


# ---------------------------------------------------------------------------
# Channel and adversary strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PublicRunInfo:
    """What an oblivious adversary is allowed to see: sizes and layout-free
    public parameters.  Slot positions and any shared randomness are absent
    by construction."""

    eps: float
    n: int
    n_prime: int
    s: int
    b: int
    B: int
    b_prime: int
    o: int
    N_iter: int
    N_ex: int
    total_rounds: int

    @property
    def budget(self) -> int:
        return int(math.floor(self.eps * self.total_rounds))


@dataclass
class ChannelModel:
    """Either a BSC(eps) or an oblivious adversary with a fixed pattern."""

    kind: str  # "bsc" | "oblivious"
    eps: float = 0.0
    pattern: ErrorPattern | None = None
    seed: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed ^ 0x5D7E)

    def symbols(self, start: int, stop: int) -> np.ndarray:
        if self.kind == "oblivious":
            return self.pattern.slice(start, stop)
        flips = self._rng.random(stop - start) < self.eps
        out = np.full(stop - start, STAR, dtype=np.uint8)
        out[flips] = FLIP
        return out


def _filler_from_symbols(sym: np.ndarray) -> np.ndarray:
    """Both-listen rounds deliver an arbitrary adversary-chosen symbol for
    free; we use the pattern's own replace/flip values, default 0."""
    out = np.zeros(sym.size, dtype=np.uint8)
    out[sym == SET1] = 1
    out[sym == FLIP] = 1
    return out


def make_pattern(info: PublicRunInfo, positions: np.ndarray,
                 symbols: np.ndarray) -> ErrorPattern:
    sym = np.full(info.total_rounds, STAR, dtype=np.uint8)
    sym[positions] = symbols
    pat = ErrorPattern(sym)
    if pat.wt > info.budget:
        raise EngineError(f"pattern weight {pat.wt} exceeds budget {info.budget}")
    return pat


def _strat_uniform(info: PublicRunInfo, seed: int = 0) -> ErrorPattern:
    rng = np.random.default_rng(seed ^ 0xADE1)
    pos = rng.choice(info.total_rounds, size=info.budget, replace=False)
    return make_pattern(info, pos, np.full(info.budget, FLIP, dtype=np.uint8))


def _strat_burst(info: PublicRunInfo, seed: int = 0) -> ErrorPattern:
    # the budget split into 4 contiguous bursts spread over the execution
    n_bursts = 4
    per = info.budget // n_bursts
    pos = []
    for i, frac in enumerate((0.12, 0.37, 0.62, 0.87)):
        size = per if i < n_bursts - 1 else info.budget - per * (n_bursts - 1)
        start = min(int(frac * info.total_rounds), info.total_rounds - size)
        pos.append(np.arange(start, start + size))
    pos = np.concatenate(pos)
    return make_pattern(info, pos, np.full(pos.size, FLIP, dtype=np.uint8))


def _strat_redundancy_window(info: PublicRunInfo, seed: int = 0) -> ErrorPattern:
    """The anti-redundancy window attack: spend ~90% of the budget corrupting
    every round of one contiguous window of mini-blocks (with hidden slots
    the attacker cannot target control rounds more precisely than this) and
    scatter the rest as the 'few extra errors' that derail unprotected data."""
    rng = np.random.default_rng(seed ^ 0xF00D)
    window = int(info.budget * 0.9)
    start = info.N_ex + info.b_prime  # right after the exchange settles
    start = min(start, info.total_rounds - window)
    pos = [np.arange(start, start + window)]
    extra = info.budget - window
    if extra > 0:
        tail = rng.choice(np.arange(start + window, info.total_rounds),
                          size=min(extra, info.total_rounds - start - window),
                          replace=False)
        pos.append(tail)
    pos = np.concatenate(pos)
    sym = np.empty(pos.size, dtype=np.uint8)
    sym[0::2] = FLIP
    sym[1::2] = SET1  # mix flip and replace errors
    return make_pattern(info, pos, sym)


def _strat_control_slot_guess(info: PublicRunInfo, seed: int = 0) -> ErrorPattern:
    """Corrupt fixed in-block positions (as if control bits sat contiguously
    at the end of each mini-block) - the attack information hiding defeats."""
    guess = np.arange(info.b_prime - 2 * info.o, info.b_prime)
    n_iters = max(1, info.budget // guess.size)
    stride = max(1, info.N_iter // n_iters)
    pos = []
    spent = 0
    for m in range(0, info.N_iter, stride):
        take = min(guess.size, info.budget - spent)
        if take <= 0:
            break
        pos.append(info.N_ex + m * info.b_prime + guess[:take])
        spent += take
    pos = np.concatenate(pos) if pos else np.zeros(0, dtype=np.int64)
    return make_pattern(info, pos, np.full(pos.size, FLIP, dtype=np.uint8))


def _strat_exchange_attack(info: PublicRunInfo, seed: int = 0) -> ErrorPattern:
    """Dump the whole budget on the randomness exchange prefix; it must fail
    because the exchange code's distance exceeds twice any in-budget wt."""
    size = min(info.budget, info.N_ex) if info.N_ex else 0
    pos = np.arange(size)
    return make_pattern(info, pos, np.full(size, SET0, dtype=np.uint8))


def adversary_strategies() -> dict:
    return {
        "uniform_random": _strat_uniform,
        "burst": _strat_burst,
        "redundancy_window": _strat_redundancy_window,
        "control_slot_guess": _strat_control_slot_guess,
        "exchange_attack": _strat_exchange_attack,
    }


# ---------------------------------------------------------------------------
# Per-run shared machinery
# ---------------------------------------------------------------------------

class HashSystem:
    """The 12 per-iteration hash families, seeded from the stretch at fixed
    per-iteration word offsets."""

    def __init__(self, params: RunParams, stream: SmallBiasStream):
        self.params = params
        self.words = stream.words
        self.p = params.cfg.p

    def seed_view(self, m: int, party: int, fld: int) -> np.ndarray:
        pr = self.params
        base = m * pr.words_per_iter + pr.field_offsets[party * _NFIELDS + fld]
        w = pr.field_words[fld]
        return self.words[base:base + self.p * w].reshape(self.p, w)

    def value(self, m: int, party: int, fld: int, x_words: np.ndarray) -> int:
        seed = self.seed_view(m, party, fld)
        acc = np.bitwise_count(seed[:, :x_words.size] & x_words).sum(axis=1) & 1
        out = 0
        for bit in acc.tolist():
            out = (out << 1) | int(bit)
        return out


def _uint_words(v: int) -> np.ndarray:
    return np.array([v], dtype=np.uint64)


def _len_prefixed_words(bits: np.ndarray | None) -> np.ndarray:
    """[bit length][packed bits...]; None encodes the empty value nil."""
    if bits is None or bits.size == 0:
        return np.array([0], dtype=np.uint64)
    packed = pack_words(bits)
    out = np.empty(1 + packed.size, dtype=np.uint64)
    out[0] = bits.size
    out[1:] = packed
    return out


class _Layout:
    """Per-iteration views into the stretch for slots, masks and tag seeds."""

    def __init__(self, params: RunParams, stream: SmallBiasStream):
        self.pr = params
        self.stream = stream

    def slot_keys(self, m: int) -> np.ndarray:
        base = m * self.pr.words_per_iter + self.pr.slots_off
        return self.stream.words[base:base + self.pr.b_prime]

    def codec_seed(self, m: int, party: int) -> np.ndarray:
        pr = self.pr
        mask_base = 64 * (m * pr.words_per_iter + pr.mask_off[party])
        tag_base = 64 * (m * pr.words_per_iter + pr.tagseed_off[party])
        mask = self.stream.bit_slice(mask_base, pr.o)
        tag = self.stream.bit_slice(tag_base, pr.l_ctrl * pr.cfg.o_prime)
        return np.concatenate([mask, tag])


class Transcript:
    """Append/truncate-by-block bit buffer."""

    __slots__ = ("bits", "length")

    def __init__(self, capacity: int):
        self.bits = np.zeros(capacity, dtype=np.uint8)
        self.length = 0

    def append(self, block: np.ndarray) -> None:
        end = self.length + block.size
        if end > self.bits.size:
            raise EngineError("transcript capacity exceeded")
        self.bits[self.length:end] = block
        self.length = end

    def truncate(self, to_len: int) -> None:
        self.bits[to_len:self.length] = 0
        self.length = to_len

    def view(self, upto: int | None = None) -> np.ndarray:
        return self.bits[:self.length if upto is None else upto]


# ---------------------------------------------------------------------------
# Party state machine (the pseudocode's AliceControlFlow etc.; Bob mirrors)
# ---------------------------------------------------------------------------

@dataclass
class _CtrlSnapshot:
    """Ground-truth values a party committed to when building its control
    record, for collision detection and genie decoding."""

    ctrl: ControlInfo
    ctrl_bits: np.ndarray
    wire: np.ndarray
    c: int
    k: int
    sync: int
    j: int
    x: np.ndarray | None
    T: np.ndarray  # copy
    MP1: int
    MP2: int


class Party:
    def __init__(self, pid: int, sim: "Simulation"):
        self.pid = pid
        self.sim = sim
        pr = sim.params
        self.s, self.b, self.B = pr.cfg.s, pr.cfg.b, pr.cfg.B
        self.T = Transcript(pr.T_cap)
        self.x: np.ndarray | None = None
        self.x_words = _len_prefixed_words(None)
        self.y: np.ndarray | None = None  # (2s, b) chunk matrix
        self.c = 1
        self.k = self.k_tilde = self.sync = 1
        self.E = self.v1 = self.v2 = 0
        self.j = self.speak = self.a = self.m = 0
        self.MP1 = self.MP2 = 0
        self.g: np.ndarray | None = None  # data chunk heard this iteration
        self.gtilde = np.zeros((2 * self.s, self.b), dtype=np.uint8)
        # initialisation keeps a = 0 (no re-anchor: the first chunk really is y_0)
        if sim.proto.block_owner(self.T.view()) == self.pid:
            self.speak = 1
            self.x = sim.block_content(self.T.view())
            self.x_words = _len_prefixed_words(self.x)
            self.y = sim.params.rateless.encode(self.x).reshape(2 * self.s, self.b)

    # -- helpers ------------------------------------------------------------

    @property
    def other(self) -> "Party":
        return self.sim.parties[1 - self.pid]

    def _load_block(self) -> None:
        """Recompute speak/x/y for block c from the own transcript prefix."""
        prefix = self.T.view()
        if self.sim.proto.block_owner(prefix) == self.pid:
            self.speak = 1
            self.x = self.sim.block_content(prefix)
            self.x_words = _len_prefixed_words(self.x)
            self.y = self.sim.params.rateless.encode(self.x).reshape(2 * self.s, self.b)
        else:
            self.speak = 0
            self.a = (self.m + 1) % (2 * self.s)
            self.x = None
            self.x_words = _len_prefixed_words(None)
            self.y = None

    def _t_words(self, upto: int | None = None) -> np.ndarray:
        return _len_prefixed_words(self.T.view(upto))

    def _hash(self, party: int, fld: int, words: np.ndarray) -> int:
        return self.sim.hash_sys[self.pid].value(self.m, party, fld, words)

    def _cmp(self, fld: int, my_words: np.ndarray, their_hash: int,
             truth: bool) -> bool:
        """Compare the other party's transmitted hash against my own value
        hashed under the same (other-party) family; record false matches."""
        match = self._hash(1 - self.pid, fld, my_words) == their_hash
        if match and not truth:
            self.sim.note_collision(1 - self.pid)
        return match

    # -- Algorithm 3: build the control record ------------------------------

    def update_control(self) -> _CtrlSnapshot:
        me = self.pid
        ctrl = ControlInfo(
            h_c=self._hash(me, F_C, _uint_words(self.c)),
            h_x=self._hash(me, F_X, self.x_words),
            h_k=self._hash(me, F_K, _uint_words(self.k)),
            h_T=self._hash(me, F_T, self._t_words()),
            h_MP1=self._hash(me, F_MP1, self._t_words(self.MP1)),
            h_MP2=self._hash(me, F_MP2, self._t_words(self.MP2)),
            j=self.j, sync=self.sync)
        bits = ctrl.to_bits(self.sim.params.cfg.p, self.s)
        seed = self.sim.layouts[self.pid].codec_seed(self.m, me)
        wire = self.sim.params.codec.enc(bits, seed)
        return _CtrlSnapshot(ctrl, bits, wire, self.c, self.k, self.sync, self.j,
                             None if self.x is None else self.x.copy(),
                             self.T.view().copy(), self.MP1, self.MP2)

    # -- Algorithm 4: decode the other party's record ------------------------

    def decode_control(self, received: np.ndarray) -> ControlInfo | None:
        pr = self.sim.params
        seed = self.sim.layouts[self.pid].codec_seed(self.m, 1 - self.pid)
        out = pr.codec.dec(received, seed, sent_wire=self.other_snap.wire)
        if out is None:
            return None
        return ControlInfo.from_bits(out, pr.cfg.p, self.s)

    # -- Algorithm 1 ---------------------------------------------------------

    def control_flow(self, dec: ControlInfo | None) -> str | None:
        snap = self.other_snap
        # Update phase
        if dec is not None:
            if self.sync == 0:
                if (not self._cmp(F_K, _uint_words(self.k), dec.h_k,
                                  snap.k == self.k)) or dec.sync == 1:
                    self.E += 1
                elif self._mp_match(dec, self.MP1):
                    self.v1 += 1
                elif self._mp_match(dec, self.MP2):
                    self.v2 += 1
        elif self.sync == 0:
            self.E += 1
        if self.sync == 0:
            self.k += 1
            self.k_tilde = 1 << (self.k.bit_length() - 1)
        self.update_sync_status(dec)

        # Transition phase
        trans = None
        if self.k == self.k_tilde >= 2 and self.v1 >= 0.2 * self.k:
            self.rollback(self.MP1)
            trans = "mp1"
        elif self.k == self.k_tilde >= 2 and self.v2 >= 0.2 * self.k:
            self.rollback(self.MP2)
            trans = "mp2"
        elif self.k == self.k_tilde >= 2 and self.E >= 0.2 * self.k:
            self.a = (self.m + 1) % (2 * self.s)
            self.k = self.k_tilde = self.sync = 1
            self.E = self.v1 = self.v2 = self.j = 0
            trans = "error"
        elif self.k == self.k_tilde >= 2:
            self.v1 = self.v2 = 0

        kB = self.k_tilde * self.B
        self.MP1 = kB * (self.T.length // kB)
        self.MP2 = max(self.MP1 - kB, 0)
        self.m += 1
        return trans

    def _mp_match(self, dec: ControlInfo, mp: int) -> bool:
        """Either of the other party's meeting-point hashes matches my
        transcript prefix T[:mp] (hashed under the matching family)."""
        snap = self.other_snap
        words = self._t_words(mp)
        mine = self.T.view(mp)
        t1 = _prefix_eq(mine, snap.T, snap.MP1)
        t2 = _prefix_eq(mine, snap.T, snap.MP2)
        return (self._cmp(F_MP1, words, dec.h_MP1, t1)
                or self._cmp(F_MP2, words, dec.h_MP2, t2))

    # -- Algorithm 2 ---------------------------------------------------------

    def update_sync_status(self, dec: ControlInfo | None) -> None:
        snap = self.other_snap
        s2 = 2 * self.s
        self.sync = 0
        if self.k != 1:
            return
        if dec is not None and self._cmp(F_K, _uint_words(1), dec.h_k, snap.k == 1):
            if dec.sync == 0:
                self.sync = 1
                self.j = 0
                self.a = (self.m + 1) % s2
            elif (self._cmp(F_C, _uint_words(self.c), dec.h_c, snap.c == self.c)
                  and self._cmp(F_T, self._t_words(), dec.h_T,
                                _bits_eq(self.T.view(), snap.T))):
                self.sync = 1
                if self.speak == 0:
                    if self.j <= dec.j:
                        self.update_estimate(dec)
                    else:
                        self.j = 0
                        self.a = (self.m + 1) % s2
                else:
                    self.j = min(self.j + 1, s2)
            elif (self.speak == 1
                  and self._cmp(F_C, _uint_words(self.c + 1), dec.h_c,
                                snap.c == self.c + 1)
                  and self._cmp(F_T, _len_prefixed_words(_concat(self.T.view(), self.x)),
                                dec.h_T, _bits_eq(_concat(self.T.view(), self.x), snap.T))):
                self.sync = 1
                self.advance_block(None)
            elif (self.c >= 2
                  and self.sim.proto.block_owner(self.T.view((self.c - 2) * self.B))
                  == 1 - self.pid
                  and self._cmp(F_C, _uint_words(self.c - 1), dec.h_c,
                                snap.c == self.c - 1)
                  and self._cmp(F_T, self._t_words((self.c - 2) * self.B), dec.h_T,
                                _bits_eq(self.T.view((self.c - 2) * self.B), snap.T))
                  and self._cmp(F_X, _len_prefixed_words(
                       self.T.bits[(self.c - 2) * self.B:(self.c - 1) * self.B]),
                       dec.h_x, _bits_eq(
                           self.T.bits[(self.c - 2) * self.B:(self.c - 1) * self.B],
                           snap.x))):
                self.sync = 1
                if self.speak == 0:
                    self.j = 0
                    self.a = (self.m + 1) % s2
                else:
                    self.j = min(self.j + 1, s2)
        elif dec is None:
            self.sync = 1
            if self.speak == 0:
                if self.j != 0:
                    self.update_estimate(None)
                else:
                    self.a = (self.m + 1) % s2
            else:
                self.j = min(self.j + 1, s2)

    # -- Algorithm 6 ---------------------------------------------------------

    def update_estimate(self, dec: ControlInfo | None) -> None:
        assert self.g is not None and self.j < 2 * self.s
        self.gtilde[self.j] = self.g
        self.j += 1
        if self.j > self.s:
            xt = self.sim.listener_decode(self)
            snap = self.other_snap
            if dec is not None and self._cmp(F_X, _len_prefixed_words(xt), dec.h_x,
                                             _bits_eq(xt, snap.x)):
                self.advance_block(xt)
            elif self.j == 2 * self.s:
                self.j = 0
                self.a = (self.m + 1) % (2 * self.s)

    # -- Algorithm 5 ---------------------------------------------------------

    def advance_block(self, estimate: np.ndarray | None) -> None:
        if self.speak == 1:
            self.T.append(self.x)
        else:
            self.T.append(estimate)
        self.c += 1
        self.j = 0
        self._load_block()
        self.sim.advances[self.pid] += 1

    # -- Algorithm 7 ---------------------------------------------------------

    def rollback(self, mp: int) -> None:
        self.T.truncate(mp)
        self.c = mp // self.B + 1
        self.k = self.k_tilde = self.sync = 1
        self.E = self.v1 = self.v2 = self.j = 0
        self._load_block()

    def view(self) -> PartyView:
        return PartyView(self.c, self.k, self.k_tilde, self.sync, self.j, self.a,
                         self.speak, self.E, self.v1, self.v2, self.MP1, self.MP2,
                         self.T.length)


def _concat(a: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    if b is None:
        return a
    return np.concatenate([a, b])


def _bits_eq(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.size == b.size and bool(np.array_equal(a, b))


def _prefix_eq(mine: np.ndarray, theirs: np.ndarray, their_len: int) -> bool:
    if their_len > theirs.size:
        return False
    return _bits_eq(mine, theirs[:their_len])


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class Simulation:
    def __init__(self, proto: BlockedProtocol, inputs: Inputs, params: RunParams,
                 channel: ChannelModel, seed: int):
        self.proto = proto
        self.inputs = inputs
        self.params = params
        self.channel = channel
        self.seed = seed
        self.noiseless = run_noiseless(proto, inputs)
        self._content_cache: dict = {}
        self.advances = [0, 0]
        s2 = 2 * params.cfg.s
        self._zero_x = np.zeros(params.cfg.B, dtype=np.uint8)
        self._zero_y = np.zeros((s2, params.cfg.b), dtype=np.uint8)
        self.chunk_ring: list = [None] * (s2 + 4)
        self._collide = [False, False]
        self.mal = [0, 0]
        self._t_hist: list = []
        self._bad_hist: list = []

    # -- shared helpers -------------------------------------------------------

    def block_content(self, prefix: np.ndarray) -> np.ndarray:
        key = prefix.tobytes()
        hit = self._content_cache.get(key)
        if hit is None:
            hit = self.proto.block_content(prefix, self.inputs)
            if len(self._content_cache) > 512:
                self._content_cache.clear()
            self._content_cache[key] = hit
        return hit

    def note_collision(self, sender_pid: int) -> None:
        self._collide[sender_pid] = True

    def listener_decode(self, party: Party) -> np.ndarray:
        """Tiered window decode: certified candidate check, exact table below
        the enumeration limit, deterministic systematic guess above it."""
        pr = self.params
        j, a = party.j, party.a
        s2 = 2 * pr.cfg.s
        received = party.gtilde[:j].ravel()
        rows = (a + np.arange(j)) % s2
        cands = [(self._zero_x, self._zero_y)]
        seen = {id(self._zero_y)}
        for i in range(j):
            mm = party.m - j + 1 + i
            entry = self.chunk_ring[mm % len(self.chunk_ring)]
            if entry is None or entry[0] != mm:
                continue
            _, sender, x_ref, y_ref = entry
            if sender == 1 - party.pid and id(y_ref) not in seen:
                seen.add(id(y_ref))
                cands.append((x_ref, y_ref))
        radius = pr.window_radius[j]
        best_x, best_d = None, None
        for x_ref, y_ref in cands:
            d = int(np.count_nonzero(y_ref[rows].ravel() != received))
            if d <= radius and (best_d is None or d < best_d):
                best_x, best_d = x_ref, d
                if d == 0:
                    break
        if best_x is not None:
            return best_x.copy()
        if pr.cfg.B <= 20:
            return window_decode(pr.rateless, a, j, received)
        return received[:pr.cfg.B].copy()

    # -- the iteration --------------------------------------------------------

    def run_iteration(self, m: int):
        pr = self.params
        A, B = self.parties
        snap_a = A.update_control()
        snap_b = B.update_control()
        A.other_snap = snap_b
        B.other_snap = snap_a
        self._collide = [False, False]
        pre_sync = (A.sync, B.sync)

        base = pr.N_ex + m * pr.b_prime
        sym = self.channel.symbols(base, base + pr.b_prime)

        # each party's believed slot layout comes from its own stretch view;
        # after a successful exchange these coincide
        beliefs = []
        for pid in (ALICE, BOB):
            keys = self.layouts[pid].slot_keys(m)
            perm = np.argsort(keys, kind="stable")
            beliefs.append((perm[:pr.o], perm[pr.o:2 * pr.o],
                            np.sort(perm[2 * pr.o:])))
        send_a = A.sync == 1 and A.speak == 1
        send_b = B.sync == 1 and B.speak == 1
        s2 = 2 * pr.cfg.s

        content = np.zeros(pr.b_prime, dtype=np.uint8)
        count = np.zeros(pr.b_prime, dtype=np.uint8)

        def place(pos, bits):
            content[pos] = bits
            count[pos] += 1

        place(beliefs[ALICE][0], snap_a.wire)
        place(beliefs[BOB][1], snap_b.wire)
        chunk_a = A.y[m % s2] if send_a else None
        chunk_b = B.y[m % s2] if send_b else None
        if send_a:
            place(beliefs[ALICE][2], chunk_a)
        if send_b:
            place(beliefs[BOB][2], chunk_b)

        def hear(pos):
            solo = count[pos] == 1
            delivered = corrupt_bits(content[pos], sym[pos])
            fill = _filler_from_symbols(sym[pos])
            return np.where(solo, delivered, fill).astype(np.uint8)

        # control deliveries: each party listens where it believes the
        # other's slots sit
        recv_of_b = hear(beliefs[ALICE][1])  # Alice's view of Bob's ctrl
        recv_of_a = hear(beliefs[BOB][0])  # Bob's view of Alice's ctrl
        ctrl_hits_a = int(np.count_nonzero(recv_of_a != snap_a.wire))
        ctrl_hits_b = int(np.count_nonzero(recv_of_b != snap_b.wire))

        t = 0
        A.g = B.g = None
        ring_entry = (m, None, None, None)
        if not send_a:
            A.g = hear(beliefs[ALICE][2])
        if not send_b:
            B.g = hear(beliefs[BOB][2])
        if send_a and not send_b:
            t = int(np.count_nonzero(B.g != chunk_a))
            ring_entry = (m, ALICE, A.x, A.y)
        elif send_b and not send_a:
            t = int(np.count_nonzero(A.g != chunk_b))
            ring_entry = (m, BOB, B.x, B.y)
        self.chunk_ring[m % len(self.chunk_ring)] = ring_entry

        dec_a = A.decode_control(recv_of_b)  # Alice's decode of Bob's record
        dec_b = B.decode_control(recv_of_a)
        trans_a = A.control_flow(dec_a)
        trans_b = B.control_flow(dec_b)

        outcome_a = self._classify_sent(snap_a, dec_b, ALICE)
        outcome_b = self._classify_sent(snap_b, dec_a, BOB)

        # malicious-iteration counters (analysis bookkeeping): increment when
        # the iteration started unsynced and any record was malicious, then
        # reset on that party's own transition
        any_mal = MALICIOUS in (outcome_a, outcome_b)
        for pid, pre, trans in ((ALICE, pre_sync[0], trans_a),
                                (BOB, pre_sync[1], trans_b)):
            if pre == 0 and any_mal:
                self.mal[pid] += 1
            if trans is not None:
                self.mal[pid] = 0

        self._t_hist.append(t)
        self._bad_hist.append(outcome_a != SOUND or outcome_b != SOUND)
        return IterationEvent(m, outcome_a, outcome_b, t, ctrl_hits_a, ctrl_hits_b,
                              int(dec_a is None), int(dec_b is None),
                              trans_a, trans_b,
                              self.advances[0], self.advances[1])

    def _classify_sent(self, snap: _CtrlSnapshot, decoded: ControlInfo | None,
                       sender: int) -> str:
        if decoded is None:
            return INVALID
        if decoded != snap.ctrl or self._collide[sender]:
            return MALICIOUS
        return SOUND

    # -- snapshots -------------------------------------------------------------

    def snapshot(self, m: int) -> StateSnapshot:
        A, B = self.parties
        ta, tb = A.T.view(), B.T.view()
        lim = min(ta.size, tb.size)
        neq = np.nonzero(ta[:lim] != tb[:lim])[0]
        lplus = int(neq[0]) if neq.size else lim
        lminus = ta.size + tb.size - 2 * lplus

        owner_at_common = self.proto.block_owner(ta[:lplus - lplus % self.params.cfg.B]) \
            if lminus else self.proto.block_owner(ta[:lplus])
        next_block_correct = None
        if lminus == self.params.cfg.B and lplus == lim:
            longer = ta if ta.size > tb.size else tb
            content = self.block_content(longer[:lplus])
            next_block_correct = bool(np.array_equal(longer[lplus:lplus + self.params.cfg.B],
                                                     content))

        success_now = False
        if lplus >= self.n_prime:
            success_now = bool(np.array_equal(ta[:self.n_prime], self.noiseless))

        snap = StateSnapshot(m, A.view(), B.view(), self.params.cfg.B,
                             lplus, lminus, owner_at_common, next_block_correct,
                             self.mal[0], self.mal[1], None, None, success_now)
        from . import analysis
        cls = analysis.classify_snapshot(snap)
        if cls.name == "perfectly_synced":
            jw = cls.j
            snap.err = int(sum(self._t_hist[-jw:])) if jw else 0
            snap.inv = int(sum(self._bad_hist[-jw:])) if jw else 0
        return snap

    @property
    def n_prime(self) -> int:
        return self.params.n_prime


def corrupt_bits(x: np.ndarray, sym: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[sym == FLIP] ^= 1
    out[sym == SET0] = 0
    out[sym == SET1] = 1
    return out


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _resolve_channel(channel, eps: float, pattern: ErrorPattern | None,
                     seed: int) -> ChannelModel:
    if isinstance(channel, ChannelModel):
        return channel
    if channel in (None, "oblivious"):
        return ChannelModel("oblivious", eps, pattern, seed)
    if channel == "bsc":
        return ChannelModel("bsc", eps, None, seed)
    raise EngineError(f"unknown channel {channel!r}")


def _resolve_pattern(strategy, info: PublicRunInfo, seed: int) -> ErrorPattern:
    if strategy is None:
        return ErrorPattern.clean(info.total_rounds)
    if isinstance(strategy, ErrorPattern):
        if strategy.wt > info.budget:
            raise EngineError(f"pattern weight {strategy.wt} over budget {info.budget}")
        if len(strategy) != info.total_rounds:
            raise EngineError("pattern length mismatch")
        return strategy
    if isinstance(strategy, str):
        strategy = adversary_strategies()[strategy]
    return strategy(info, seed)


def prepare_simulation(proto: BlockedProtocol, inputs: Inputs, eps: float,
                       eps_prime: float | None = None, channel=None,
                       strategy=None, config: EngineConfig | None = None,
                       seed: int = 0):
    """Set up a ready-to-iterate Simulation: derive parameters, commit the
    adversary's pattern, perform the randomness exchange, build both
    parties.  Returns (sim, exchange_ok)."""
    cfg = config or EngineConfig()
    cfg = replace(cfg, eps=eps, eps_prime=eps_prime if eps_prime is not None
                  else cfg.eps_prime)
    params = derive_params(cfg, proto)

    info = PublicRunInfo(eps, proto.tree.depth, params.n_prime, cfg.s, cfg.b,
                         cfg.B, params.b_prime, params.o, params.N_iter,
                         params.N_ex, params.total_rounds)
    # the adversary commits to its pattern before any shared randomness exists
    pattern = None
    if channel in (None, "oblivious") or isinstance(channel, ChannelModel):
        pattern = _resolve_pattern(strategy, info, seed)
    chan = _resolve_channel(channel, eps, pattern, seed)
    if chan.kind == "oblivious" and chan.pattern is None:
        chan.pattern = pattern

    rng = np.random.default_rng([seed, 0x1C])
    str_a = rng.integers(0, 2, size=params.l_prime, dtype=np.uint8)

    exchange_ok = True
    if cfg.exchange == "public":
        str_b = str_a.copy()
    else:
        code = params.exchange_code
        w = code.encode(str_a)
        received = corrupt_bits(w, chan.symbols(0, params.N_ex))
        radius = (code.min_distance - 1) // 2
        if int(np.count_nonzero(received != w)) <= radius:
            str_b = str_a.copy()
        else:
            exchange_ok = False
            str_b = received[:params.l_prime].copy()  # derailed decode

    delta = 2.0 ** -cfg.delta_exp
    sr_a = SharedRandomness(str_a)
    stream_a = sr_a.init_stretch(params.stretch_bits, delta)
    if np.array_equal(str_a, str_b):
        sr_b = SharedRandomness(str_b)
        sr_b.take(sr_a.cursor, "stretch_seed")
        sr_b.stretch = stream_a
        stream_b = stream_a
    else:
        sr_b = SharedRandomness(str_b)
        stream_b = sr_b.init_stretch(params.stretch_bits, delta)
    # per-purpose consumption ledger (allocated sizes are 64-bit aligned,
    # so masks/tag seeds include their alignment padding)
    mask_words = -(-params.o // 64)
    tag_words = -(-(params.l_ctrl * cfg.o_prime) // 64)
    for sr in (sr_a, sr_b):
        p = cfg.p
        per_iter_hash = 64 * sum(p * w for w in params.field_words) * 2
        sr.account_stretch(per_iter_hash * params.N_iter, "hash_seeds")
        sr.account_stretch(64 * params.b_prime * params.N_iter, "slot_keys")
        sr.account_stretch(2 * 64 * mask_words * params.N_iter, "pad_masks")
        sr.account_stretch(2 * 64 * tag_words * params.N_iter, "ctrl_tag_seeds")

    sim = Simulation(proto, inputs, params, chan, seed)
    # with a failed exchange the parties genuinely hold different stretches;
    # each party's hashing, slots and masks then come from its own view
    sim.hash_sys = (HashSystem(params, stream_a), HashSystem(params, stream_b))
    sim.layouts = (_Layout(params, stream_a), _Layout(params, stream_b))
    sim.shared = (sr_a, sr_b)
    sim.parties = (Party(ALICE, sim), Party(BOB, sim))
    return sim, exchange_ok


def run_simulation(proto: BlockedProtocol, inputs: Inputs, eps: float,
                   eps_prime: float | None = None, channel=None, strategy=None,
                   config: EngineConfig | None = None, seed: int = 0,
                   check_invariants: bool = False) -> RunResult:
    """Execute the encoded protocol for N_iter mini-block iterations.

    Returns a RunResult carrying both transcripts, the full per-iteration
    trace (states/events), and summary metrics.
    """
    sim, exchange_ok = prepare_simulation(proto, inputs, eps, eps_prime,
                                          channel, strategy, config, seed)
    params = sim.params
    states = [sim.snapshot(0)]
    events = []
    for m in range(params.N_iter):
        events.append(sim.run_iteration(m))
        states.append(sim.snapshot(m + 1))
        if check_invariants:
            _check_party_invariants(sim)

    counts = {SOUND: 0, INVALID: 0, MALICIOUS: 0}
    for ev in events:
        counts[ev.outcome] += 1
    succ_flags = [st.success_now for st in states]
    rounds_to_success = None
    if succ_flags[-1]:
        last_false = max((i for i, ok in enumerate(succ_flags) if not ok), default=-1)
        rounds_to_success = params.N_ex + (last_false + 1) * params.b_prime

    A, B = sim.parties
    success = bool(states[-1].success_now
                   and np.array_equal(B.T.view()[:params.n_prime], sim.noiseless))
    return RunResult(success, params.total_rounds, proto.tree.depth,
                     params.n_prime, A.T.view().copy(), B.T.view().copy(),
                     sim.noiseless, states, events, counts, rounds_to_success,
                     exchange_ok, _config_dict(params.cfg, params, sim.seed))


def _check_party_invariants(sim) -> None:
    """Debug-mode per-iteration state invariants."""
    B = sim.params.cfg.B
    for p in sim.parties:
        assert p.k_tilde == 1 << (p.k.bit_length() - 1)
        assert p.sync == 0 or p.k == 1, "sync=1 implies k=1"
        assert p.T.length % B == 0
        assert p.T.length == (p.c - 1) * B
        kB = p.k_tilde * B
        assert p.MP1 == kB * (p.T.length // kB)
        assert p.MP2 == max(p.MP1 - kB, 0)
        assert 0 <= p.j <= 2 * sim.params.cfg.s


def _config_dict(cfg: EngineConfig, params: RunParams, seed: int) -> dict:
    from dataclasses import asdict
    out = asdict(cfg)
    out.update(seed=seed, N_iter=params.N_iter, N_ex=params.N_ex,
               b_prime=params.b_prime, o=params.o, l_prime=params.l_prime,
               n_prime=params.n_prime, total_rounds=params.total_rounds)
    return out


def run_rateless(proto: BlockedProtocol, inputs: Inputs, eps_prime: float,
                 true_eps: float, strategy=None, config: EngineConfig | None = None,
                 seed: int = 0) -> RunResult:
    """Theorem-2 harness: public shared randomness, fixed eps', and a round
    budget N(true_eps); the code and configuration never see true_eps other
    than through the budget, so the rate adapts to the realised error rate."""
    cfg = config or EngineConfig()
    cfg = replace(cfg, exchange="public", eps_prime=eps_prime)
    return run_simulation(proto, inputs, true_eps, eps_prime, None, strategy,
                          cfg, seed)
