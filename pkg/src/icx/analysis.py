"""State classification, the potential function, and trace audits.

Everything here is pure post-hoc computation over the engine's trace
records.  The per-iteration potential-drop bounds are encoded as a case
table (protocol state at the start of the iteration x control outcome), and
`audit_trace` mechanically checks every iteration of a run against them, so
any divergence between the implemented control flow and the analysis
machinery surfaces as a reported violation rather than a silent wrong rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .entropy import binary_entropy, binary_entropy_inv
from .trace import INVALID, MALICIOUS, SOUND, IterationEvent, StateSnapshot

__all__ = [
    "StateClass",
    "PotentialConstants",
    "Counters",
    "classify_snapshot",
    "classify_state",
    "compute_phi",
    "phi_of_snapshot",
    "audit_trace",
    "AuditReport",
    "counters_from_trace",
    "final_progress_check",
    "constants_inequalities",
    "summarize",
]

PERFECT, ALMOST, UNSYNCED = "perfectly_synced", "almost_synced", "unsynced"


@dataclass
class StateClass:
    name: str
    case: int | None  # almost-synced subcase 1..4
    j: int | None  # the per-definition j where one exists
    lplus: int
    lminus: int
    len_a: int
    len_b: int
    k_a: int
    k_b: int
    sync_a: int
    sync_b: int
    E_a: int
    E_b: int
    same_ks: bool  # (k_A, sync_A) == (k_B, sync_B)


@dataclass
class Counters:
    """err/inv are the perfectly-synced window counters; mal_a/mal_b the
    malicious-iteration counters that reset on the party's transitions."""

    err: int = 0
    inv: int = 0
    mal_a: int = 0
    mal_b: int = 0


def classify_snapshot(snap: StateSnapshot, B: int | None = None) -> StateClass:
    """The three-way state classification, including the almost-synced
    subcases, straight from the definitions."""
    a, b = snap.alice, snap.bob
    if B is None:
        B = snap.B
    lp, lm = snap.lplus, snap.lminus
    base = dict(lplus=lp, lminus=lm, len_a=a.T_len, len_b=b.T_len,
                k_a=a.k, k_b=b.k, sync_a=a.sync, sync_b=b.sync,
                E_a=a.E, E_b=b.E,
                same_ks=(a.k, a.sync) == (b.k, b.sync))
    synced_flags = a.sync == 1 and b.sync == 1 and a.k == 1 and b.k == 1
    if synced_flags:
        if lm == 0 and a.c == b.c:
            sender_j, listener_j = ((a.j, b.j) if snap.owner_at_common == 0
                                    else (b.j, a.j))
            if sender_j >= listener_j:
                return StateClass(PERFECT, None, min(a.j, b.j), **base)
            # sender's chunk counter behind the listener's: case 3/4
            case = 3 if snap.owner_at_common == 0 else 4
            return StateClass(ALMOST, case, listener_j, **base)
        if lm == B and snap.next_block_correct:
            # one transcript extends the other by exactly the true next block
            if b.c == a.c + 1 and lp == a.T_len and b.T_len == a.T_len + B:
                return StateClass(ALMOST, 1, b.j, **base)
            if a.c == b.c + 1 and lp == b.T_len and a.T_len == b.T_len + B:
                return StateClass(ALMOST, 2, a.j, **base)
    return StateClass(UNSYNCED, None, None, **base)


def classify_state(alice, bob, proto, inputs) -> StateClass:
    """Live variant: classify two engine Party objects directly."""
    import numpy as np
    ta, tb = alice.T.view(), bob.T.view()
    lim = min(ta.size, tb.size)
    neq = np.nonzero(ta[:lim] != tb[:lim])[0]
    lplus = int(neq[0]) if neq.size else lim
    lminus = ta.size + tb.size - 2 * lplus
    B = proto.block_size
    owner = proto.block_owner(ta[:lplus - lplus % B]) if lminus \
        else proto.block_owner(ta[:lplus])
    nbc = None
    if lminus == B and lplus == lim:
        longer = ta if ta.size > tb.size else tb
        nbc = bool(np.array_equal(longer[lplus:lplus + B],
                                  proto.block_content(longer[:lplus], inputs)))
    snap = StateSnapshot(0, alice.view(), bob.view(), B, lplus, lminus, owner,
                         nbc, 0, 0, None, None, False)
    return classify_snapshot(snap)


# ---------------------------------------------------------------------------
# Potential function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialConstants:
    """Defaults solved against the inequality system extracted from the
    per-iteration lemma proofs (see `constants_inequalities`)."""

    C0: float = 10.0
    C1: float = 16.0
    C2: float = 1.0
    C3: float = 104.0
    C4: float = 6.0
    C5: float = 12.0
    C6: float = 1.0
    C7: float = 100.0
    C_inv: float = 135.0
    C_mal: float = 460.0
    C: float = 10.0
    D: float = 4.0


def _log_eps(eps: float) -> float:
    return math.log2(1.0 / eps) if eps > 0 else 0.0


def compute_phi(cls: StateClass, counters: Counters, consts: PotentialConstants,
                eps: float, b: int, B: int) -> float:
    """Evaluate the four-branch potential at one iteration boundary."""
    c = consts
    growth = 1.0 + c.C0 * binary_entropy(eps)
    if cls.name == PERFECT:
        return (cls.lplus * growth + cls.j * b
                - c.C * counters.err * _log_eps(eps)
                - c.D * b * counters.inv)
    if cls.name == ALMOST:
        return max(cls.len_a, cls.len_b) * growth - (cls.j + 1) * b
    mal_ab = counters.mal_a + counters.mal_b
    k_ab = cls.k_a + cls.k_b
    e_ab = cls.E_a + cls.E_b
    if cls.same_ks:
        z1 = 0.0
        if cls.k_a == cls.k_b == 1:
            if cls.sync_a == cls.sync_b == 1:
                z1 = b * c.C4
            elif cls.sync_a == cls.sync_b == 0:
                z1 = 0.5 * b * c.C4
        return (cls.lplus * growth - c.C1 * cls.lminus
                + b * (c.C2 * k_ab - c.C3 * e_ab)
                - 2 * c.C7 * B * mal_ab - z1)
    z2 = b * c.C6 if cls.k_a == cls.k_b == 1 else 0.0
    return (cls.lplus * growth - c.C1 * cls.lminus
            + b * c.C5 * (-0.8 * k_ab + 0.9 * e_ab)
            - c.C7 * B * mal_ab - z2)


def phi_of_snapshot(snap: StateSnapshot, consts: PotentialConstants, eps: float,
                    b: int, B: int) -> float:
    cls = classify_snapshot(snap, B=B)
    ctr = Counters(snap.err or 0, snap.inv or 0, snap.mal_a, snap.mal_b)
    return compute_phi(cls, ctr, consts, eps, b, B)


# ---------------------------------------------------------------------------
# Trace audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    checked: int = 0
    violations: list = field(default_factory=list)
    min_margin: float = math.inf
    phi_final: float = 0.0
    final_class: str = ""

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"checked": self.checked, "ok": self.ok,
                "violations": self.violations[:50],
                "n_violations": len(self.violations),
                "min_margin": self.min_margin,
                "phi_final": self.phi_final, "final_class": self.final_class}


def _lemma_bound(cls_before: StateClass, cls_after: StateClass,
                 ev: IterationEvent, consts: PotentialConstants, eps: float,
                 b: int, B: int) -> float:
    """The per-iteration potential-drop lower bound for this case."""
    c = consts
    outcome = ev.outcome
    if cls_before.name == PERFECT:
        if cls_after.name == UNSYNCED:
            return -c.C_mal * B
        base = -c.C * ev.t_data * _log_eps(eps)
        if outcome == SOUND:
            return b + base
        return base - (c.D - 1) * b
    if outcome == SOUND:
        return b
    if outcome == INVALID:
        return -c.C_inv * b
    return -c.C_mal * B


def audit_trace(states, events, consts: PotentialConstants, eps: float,
                b: int, B: int, atol: float = 1e-6) -> AuditReport:
    """Check every iteration's potential change against the case table."""
    report = AuditReport()
    classes = [classify_snapshot(s, B=B) for s in states]
    phis = [compute_phi(cls, Counters(s.err or 0, s.inv or 0, s.mal_a, s.mal_b),
                        consts, eps, b, B)
            for cls, s in zip(classes, states)]
    for i, ev in enumerate(events):
        bound = _lemma_bound(classes[i], classes[i + 1], ev, consts, eps, b, B)
        dphi = phis[i + 1] - phis[i]
        margin = dphi - bound
        report.checked += 1
        report.min_margin = min(report.min_margin, margin)
        if margin < -atol:
            report.violations.append({
                "m": ev.m, "state": classes[i].name, "case": classes[i].case,
                "next_state": classes[i + 1].name, "outcome": ev.outcome,
                "t": ev.t_data, "dphi": dphi, "bound": bound,
            })
    report.phi_final = phis[-1]
    report.final_class = classes[-1].name
    return report


def counters_from_trace(states, events) -> list[Counters]:
    """Recompute the counter streams from the events alone; entry i is the
    counters at iteration boundary i (matching states[i])."""
    out = [Counters()]
    mal_a = mal_b = 0
    t_hist: list[int] = []
    bad_hist: list[bool] = []
    for i, ev in enumerate(events):
        pre_a, pre_b = states[i].alice.sync, states[i].bob.sync
        any_mal = MALICIOUS in (ev.outcome_a, ev.outcome_b)
        if pre_a == 0 and any_mal:
            mal_a += 1
        if ev.trans_a is not None:
            mal_a = 0
        if pre_b == 0 and any_mal:
            mal_b += 1
        if ev.trans_b is not None:
            mal_b = 0
        t_hist.append(ev.t_data)
        bad_hist.append(ev.outcome != SOUND)
        cls = classify_snapshot(states[i + 1])
        if cls.name == PERFECT and cls.j:
            err = sum(t_hist[-cls.j:])
            inv = sum(bad_hist[-cls.j:])
        else:
            err = inv = 0
        out.append(Counters(err, inv, mal_a, mal_b))
    return out


def final_progress_check(phi_final: float, final_cls: StateClass,
                         n_prime: int, eps: float,
                         consts: PotentialConstants, b: int, B: int):
    """Re-derive l+ >= n' from the final potential by the end-state case
    analysis; returns (certified, lower_bound)."""
    c = consts
    growth = 1.0 + c.C0 * binary_entropy(eps)
    if final_cls.name == PERFECT:
        lb = (phi_final - 2 * B) / growth
    elif final_cls.name == ALMOST:
        lb = phi_final / growth - B
    elif final_cls.same_ks and final_cls.k_a == 1:
        lb = (phi_final - 2 * b * c.C2) / growth
    else:
        lb = phi_final / growth
    return lb >= n_prime, lb


def summarize(result, consts: PotentialConstants | None = None,
              eps: float | None = None) -> dict:
    """Engine metrics plus the final potential (the summary JSON schema)."""
    consts = consts or PotentialConstants()
    cfg = result.config
    eps = cfg["eps"] if eps is None else eps
    b, B = cfg["b"], cfg["s"] * cfg["b"]
    phi_final = phi_of_snapshot(result.states[-1], consts, eps, b, B)
    out = result.metrics(phi_final=phi_final)
    out["config"] = cfg
    return out


# ---------------------------------------------------------------------------
# Constant feasibility
# ---------------------------------------------------------------------------

def constants_inequalities(consts: PotentialConstants, eps_max: float = 0.04,
                           s_min: int = 4,
                           eps_min: float = 0.01) -> list[tuple[str, float]]:
    """The inequality system extracted from the per-iteration lemma proofs;
    every entry must be >= 0 for the default constants.

    eps_min/eps_max bracket the *design* noise rates the potential will be
    evaluated at.  The `advance-margin` entry is the desk-scale form of the
    block-advance case (the proof's "B(C0 H(eps) - 2 eps') >= 0" step): it
    requires s * C0 * H(eps) >= 2, which is why audits are only meaningful
    for schemes configured with eps > 0.
    """
    c = consts
    H = binary_entropy(eps_max)
    ep = eps_max * eps_max
    log_eps = math.log2(1 / eps_max)
    hinv = binary_entropy_inv((c.D - 2) / (2 * (c.D - 1)) - ep / 4)
    s = s_min
    ineqs = [
        ("advance-margin", c.C0 * binary_entropy(eps_min) * s - 2),
        ("C0>=10", c.C0 - 10),
        ("C>=10", c.C - 10),
        ("D>=2", c.D - 2),
        ("D-1<=C_inv", c.C_inv - (c.D - 1)),
        ("D-1<=C_mal*s", c.C_mal * s - (c.D - 1)),
        ("reset-tail", (c.C / 2) * hinv * log_eps - 1),
        ("sync-to-unsync-eq", c.C_mal - (2 + 2 * c.C1 + c.C4 / s)),
        ("sync-to-unsync-neq", c.C_mal - (2 + 2 * c.C1 + (1.6 * c.C5 + c.C6) / s)),
        ("async-inv", c.C_inv - 1),
        ("async-mal-eq", c.C_mal - (1 + c.C0 * H + 3 * c.C1 + c.C4 / s)),
        ("async-mal-neq", c.C_mal - (1 + c.C0 * H + 3 * c.C1 + (1.6 * c.C5 + c.C6) / s)),
        ("kneq-sound", 0.1 * c.C5 - 1),
        ("kneq-mal-both", c.C_mal - (2 * c.C7 + 1.6 * c.C5 / s)),
        ("kneq-mal-one", c.C_mal - (2 * c.C7 + c.C1 + 1.6 * c.C5 / s)),
        ("P1-nonneg", 0.2 * c.C7 - (1 + c.C0 * H + c.C1)),
        ("mp-margin", 0.17 * c.C5 - c.C6 - 1),
        ("kneq-trans-sound", 0.27 * c.C5 - 1),
        ("invalid-two-sided", 2 * c.C2 - c.C4 + 1.6 * c.C5 - 1),
        ("kneq-trans-malB", c.C_mal - ((0.8 * c.C5 + c.C6) / s + 2 * c.C7)),
        ("kneq-trans-malB2", c.C_mal - (c.C1 + c.C7)),
        ("k1-sync-sound", 0.5 * c.C4 - 1),
        ("k1-sync-inv", c.C_inv - (2 * c.C2 - c.C4 + 1.6 * c.C5 + c.C6)),
        ("k1-sync-mal1", c.C_mal - 2 * c.C1),
        ("k1-sync-mal2", c.C_mal - (2 + (2 * c.C2 + 1) / s)),
        ("k1-sync-mal3", c.C_mal - (c.C1 + (2 * c.C2 - c.C4 + 1.6 * c.C5 + c.C6) / s)),
        ("k1-unsync-mp", 0.5 * c.C4 - 2 * c.C2 - 1),
        ("k1-unsync-inv1", c.C_inv - (2 * c.C2 - 0.5 * c.C4 + 2.4 * c.C5)),
        ("k1-unsync-inv2", c.C_inv - 0.5 * c.C4),
        ("k1-unsync-mal1", c.C_mal - 4 * c.C7),
        ("k1-unsync-mal2", c.C_mal - (2 * (1 + c.C0 * H + c.C1) + 0.5 * c.C4 / s)),
        ("k1-unsync-mal3", c.C_mal - ((1 + c.C0 * H + c.C1) + c.C7
                                      + (2 * c.C2 - 0.5 * c.C4 + 2.4 * c.C5) / s)),
        ("k1-mixed-sound1", 1.6 * c.C5 + c.C6 + 2 * c.C2 - c.C4 - 1),
        ("k1-mixed-sound2", 1.6 * c.C5 + c.C6 - 2),
        ("k1-mixed-mal1", c.C_mal - (c.C1 + c.C7 + 0.8 * c.C5 / s)),
        ("k1-mixed-mal2", c.C_mal - (3 + c.C0 * H + 2 * c.C1 + 1 / s)),
        ("keq-nontrans-sound", 2 * c.C2 - 1),
        ("keq-nontrans-mal", c.C_mal - (4 * c.C7 + 2 * c.C3 / s)),
        ("keq-mp-short", c.C1 / 4 - (1 + c.C0 * H + 2 * c.C2 / s)),
        ("keq-mp-short2", c.C1 * s / 4 + 2 * c.C2 - c.C4 - 1),
        ("keq-mp-wrong", 0.8 * c.C7 - (1 + c.C0 * H + c.C1 + 2 * c.C2 / s)),
        ("keq-mp-wrong2", 2 * c.C2 - c.C4 + 0.8 * c.C7 * s - 1),
        ("keq-mp-wrong-mal", c.C_mal - (3.2 * c.C7 + (c.C4 - 2 * c.C2) / s)),
        ("keq-mp-far", 0.1 * c.C7 - (1 + c.C0 * H + 2 * c.C2 / s)),
        ("keq-mp-far2", 2 * c.C2 - c.C4 + 0.1 * c.C7 * s - 1),
        ("keq-err-sound", 0.8 * c.C3 - c.C4 - 1),
        ("keq-err-sound2", 0.4 * c.C3 - 2 * c.C2),
        ("keq-err-inv", c.C_inv - (1.2 * c.C3 + c.C4)),
        ("one-err-sound", 0.2 * c.C3 - 0.8 * c.C5 - 2 * c.C2),
        ("one-err-sound2", 0.2 * c.C3 - 1.6 * c.C5 - 1),
        ("one-err-inv", c.C_inv - (0.8 * c.C3 + 1.6 * c.C5)),
        ("one-err-mal", c.C_mal - (c.C7 + (0.8 * c.C3 + 1.6 * c.C5) / s)),
        ("one-mp-sound", 0.3 * c.C7 - (1 + c.C0 * H + c.C1 + (2 * c.C2 + 0.8 * c.C5) / s)),
        ("one-mp-sound2", 0.3 * c.C7 * s - 1.6 * c.C5 - 1),
        ("one-mp-mal", c.C_mal - (2.7 * c.C7 + 1.6 * c.C5 / s)),
    ]
    return ineqs
