"""Independent reference models used as test oracles.

They are written from the timing rules directly (command-by-command, cycle by
cycle) and share no code with the simulator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

T_RCD, T_RAS, T_RP, T_CL, T_BL = 16, 39, 16, 16, 4
ROW = 1024
BURST = 32


@dataclass
class Req:
    arrival: int
    address: int
    size: int
    seq: int

    @property
    def row(self) -> int:
        return self.address // ROW


def bursts(size: int) -> int:
    return max(1, -(-size // BURST))


def better(a: Req, b: Req, open_row: int | None, now: int, age_cap: int | None) -> bool:
    """True when the scheduling rule prefers ``a`` over ``b``."""
    key = lambda r: (r.arrival, r.seq)
    if age_cap is not None:
        sa, sb = now - a.arrival > age_cap, now - b.arrival > age_cap
        if sa != sb:
            return sa
        if sa:
            return key(a) < key(b)
    ha, hb = a.row == open_row, b.row == open_row
    if ha != hb:
        return ha
    return key(a) < key(b)


def brute_pick(queue: list[Req], open_row: int | None, now: int = 0, age_cap: int | None = None) -> Req:
    """The unique request no other request beats."""
    winners = [c for c in queue if not any(better(o, c, open_row, now, age_cap) for o in queue if o is not c)]
    assert len(winners) == 1
    return winners[0]


def bank_oracle(reqs: list[Req], age_cap: int | None = 2000) -> dict[int, int]:
    """Completion DRAM cycle of every request (keyed by seq), stepping the bank one cycle at a time."""
    pending = sorted(reqs, key=lambda r: (r.arrival, r.seq))
    queue: list[Req] = []
    done: dict[int, int] = {}
    open_row: int | None = None
    last_act = -(10**9)
    busy_until = 0
    t = 0
    while pending or queue:
        while pending and pending[0].arrival <= t:
            queue.append(pending.pop(0))
        if not queue:
            t = pending[0].arrival
            continue
        if t < busy_until:
            t += 1
            continue
        r = brute_pick(queue, open_row, t, age_cap)
        queue.remove(r)
        if open_row == r.row:
            cas = t
        else:
            if open_row is None:
                act = t
            else:
                pre = t
                while pre < last_act + T_RAS:   # wait out tRAS before precharging
                    pre += 1
                act = pre + T_RP
            last_act = act
            open_row = r.row
            cas = act + T_RCD
        finish = cas + T_CL + T_BL * bursts(r.size)
        done[r.seq] = finish
        busy_until = finish
    return done


def permutations_upto(items, k):
    for n in range(1, k + 1):
        for combo in itertools.permutations(items, n):
            yield list(combo)


def lru_trace(capacity: int, keys: list[int]) -> list[int | None]:
    """Evicted key (or None) after touching each key of a fully associative LRU structure."""
    order: list[int] = []
    out: list[int | None] = []
    for k in keys:
        victim = None
        if k in order:
            order.remove(k)
        elif len(order) == capacity:
            victim = order.pop(0)
        order.append(k)
        out.append(victim)
    return out
