"""Trace records emitted by the simulation engine.

A run produces one `StateSnapshot` per iteration boundary (N_iter + 1 of
them) and one `IterationEvent` per iteration, so iteration m is the triple
(states[m], events[m], states[m+1]).  Snapshots carry everything the
analysis layer needs to classify the protocol state and evaluate the
potential function without replaying transcripts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

__all__ = ["PartyView", "StateSnapshot", "IterationEvent", "RunResult",
           "SOUND", "INVALID", "MALICIOUS"]

SOUND, INVALID, MALICIOUS = "sound", "invalid", "malicious"


@dataclass
class PartyView:
    """Scalar image of one party's state at an iteration boundary."""

    c: int
    k: int
    k_tilde: int
    sync: int
    j: int
    a: int
    speak: int
    E: int
    v1: int
    v2: int
    MP1: int
    MP2: int
    T_len: int


@dataclass
class StateSnapshot:
    """Joint state at an iteration boundary plus classification inputs.

    `next_block_correct` is ground truth for the almost-synced cases: when
    one transcript extends the other by exactly one block, whether that
    block equals the true contents of the protocol block at the common
    prefix.  `owner_at_common` is the owner of the block starting at the
    common prefix (used when lminus == 0).
    """

    m: int
    alice: PartyView
    bob: PartyView
    B: int  # block size (classification needs it)
    lplus: int
    lminus: int
    owner_at_common: int
    next_block_correct: bool | None
    mal_a: int
    mal_b: int
    err: int | None  # live data-corruption window counter (perfectly synced)
    inv: int | None  # live invalid/malicious window counter (perfectly synced)
    success_now: bool


@dataclass
class IterationEvent:
    """What happened during iteration m."""

    m: int
    outcome_a: str  # classification of the ctrl SENT by Alice
    outcome_b: str
    t_data: int  # data bits actually corrupted (exactly-one-speaker rounds)
    ctrl_hits_a: int  # corrupted bits among Alice's encoded control positions
    ctrl_hits_b: int
    bottom_a: int  # Alice's decode of Bob's ctrl was a failure
    bottom_b: int
    trans_a: str | None  # "mp1" | "mp2" | "error" | None
    trans_b: str | None
    advanced_a: int
    advanced_b: int

    @property
    def outcome(self) -> str:
        if MALICIOUS in (self.outcome_a, self.outcome_b):
            return MALICIOUS
        if INVALID in (self.outcome_a, self.outcome_b):
            return INVALID
        return SOUND


@dataclass
class RunResult:
    success: bool
    rounds: int
    n: int
    n_prime: int
    transcript_a: object
    transcript_b: object
    noiseless: object
    states: list
    events: list
    counts: dict
    rounds_to_success: int | None
    exchange_ok: bool
    config: dict

    @property
    def rate(self) -> float:
        return self.n / self.rounds

    def metrics(self, phi_final=None) -> dict:
        out = {
            "success": bool(self.success),
            "rounds": int(self.rounds),
            "rate": self.rate,
            "counts": dict(self.counts),
            "phi_final": phi_final,
            "n": self.n,
            "n_prime": self.n_prime,
            "rounds_to_success": self.rounds_to_success,
            "exchange_ok": bool(self.exchange_ok),
        }
        return out

    def trace_jsonl(self) -> str:
        """One JSON line per iteration (the IterationRecord wire format)."""
        lines = []
        for ev, before, after in zip(self.events, self.states, self.states[1:]):
            rec = {"m": ev.m,
                   "before": asdict(before), "after": asdict(after),
                   "event": asdict(ev)}
            lines.append(json.dumps(rec, default=_js))
        return "\n".join(lines)


def _js(v):
    import numpy as np
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v)}")
