"""Serial frame-synchronous and label-synchronous Viterbi beam search.

Both modes share one step function: relax every live token's emitting arcs
against the current frame's label costs, min-recombine per destination
state, propagate epsilon arcs to a fixpoint, then prune by beam and
max-active.  Frame-synchronous decoding (FSD) runs the step for every
frame; label-synchronous decoding (LSD) discards frames classified blank
and is therefore exactly FSD on the non-blank frame subsequence.

Recombination ties resolve by the total order (cost, predecessor state id,
arc index), which makes results reproducible and lets the parallel engine
match this module bit for bit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

from .posteriors import PosteriorMatrix, classify_blank_frames, frame_costs
from .wfst import Wfst, WfstError

INF = math.inf

ROOT_TRACE = -1


@dataclass(frozen=True)
class Token:
    """One live hypothesis: a state, its accumulated cost, and a trace link."""

    state: int
    cost: float
    trace: int


class TraceRecord(NamedTuple):
    prev: int
    olabel: int
    ilabel: int
    step: int
    arc_weight: float
    acoustic: float


class TraceArena:
    """Append-only backpointer storage; records never mutate once added."""

    def __init__(self):
        self.prev: list[int] = []
        self.olabel: list[int] = []
        self.ilabel: list[int] = []
        self.step: list[int] = []
        self.arc_weight: list[float] = []
        self.acoustic: list[float] = []

    def add(self, prev: int, olabel: int, ilabel: int, step: int,
            arc_weight: float, acoustic: float) -> int:
        idx = len(self.prev)
        self.prev.append(prev)
        self.olabel.append(olabel)
        self.ilabel.append(ilabel)
        self.step.append(step)
        self.arc_weight.append(arc_weight)
        self.acoustic.append(acoustic)
        return idx

    def record(self, idx: int) -> TraceRecord:
        return TraceRecord(self.prev[idx], self.olabel[idx], self.ilabel[idx],
                           self.step[idx], self.arc_weight[idx], self.acoustic[idx])

    def __len__(self) -> int:
        return len(self.prev)


@dataclass
class DecodeConfig:
    beam: float = INF
    max_active: int | None = None
    blank_threshold: float = 0.98
    acoustic_scale: float = 1.0
    mode: str = "lsd"

    def __post_init__(self):
        if self.beam < 0:
            raise ValueError(f"beam must be >= 0, got {self.beam}")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError(f"max_active must be >= 1, got {self.max_active}")
        if self.acoustic_scale <= 0:
            raise ValueError(f"acoustic_scale must be positive, got {self.acoustic_scale}")
        if self.mode not in ("fsd", "lsd"):
            raise ValueError(f"mode must be 'fsd' or 'lsd', got {self.mode!r}")


@dataclass(frozen=True)
class DecodeResult:
    total_cost: float
    olabels: tuple[int, ...]
    ilabels: tuple[int, ...]
    search_steps: int
    tokens_expanded: int
    reached_final: bool
    died_at_step: int | None = None


class SearchDied(RuntimeError):
    """Raised by callers that treat an emptied beam as fatal; decoding itself
    reports death through DecodeResult.died_at_step."""


def select_frames(posts: PosteriorMatrix, cfg: DecodeConfig) -> tuple[list[int], int]:
    """Frame indices the search will consume, plus the blank count skipped."""
    if cfg.mode == "fsd":
        return list(range(posts.num_frames)), 0
    mask = classify_blank_frames(posts, cfg.blank_threshold)
    return mask.nonblank_frames(), mask.count


def _relax(cand: dict, arena: TraceArena, dst: int, cost: float,
           src_state: int, arc_idx: int, prev_trace: int,
           olabel: int, ilabel: int, step: int, arc_weight: float,
           acoustic: float) -> bool:
    """Min-recombination under the (cost, src state, arc index) total order."""
    entry = cand.get(dst)
    if entry is not None:
        ecost = entry[0]
        if cost > ecost:
            return False
        if cost == ecost and (src_state, arc_idx) >= (entry[1], entry[2]):
            return False
    trace = arena.add(prev_trace, olabel, ilabel, step, arc_weight, acoustic)
    cand[dst] = [cost, src_state, arc_idx, trace]
    return True


def _epsilon_fixpoint(wfst: Wfst, cand: dict, arena: TraceArena, step: int,
                      recorder=None, node_step: int = 0) -> None:
    """Propagate epsilon arcs until no state improves.

    Positive-weight epsilon cycles converge because a candidate must beat
    the stored entry under the total order to be accepted; zero- and
    negative-weight cycles are rejected before decoding starts.
    """
    if not wfst.has_epsilon_arcs:
        return
    arcs = wfst.arcs
    offsets = wfst.arc_offsets
    split = wfst.eps_split
    work = deque(sorted(cand))
    queued = set(work)
    while work:
        u = work.popleft()
        queued.discard(u)
        entry = cand[u]
        ucost = entry[0]
        utrace = entry[3]
        for ai in range(offsets[u], split[u]):
            arc = arcs[ai]
            dst = arc.dst
            if dst == u:
                continue  # a positive self-loop can never improve its own state
            if recorder is not None:
                recorder.epsilon(node_step, u, ai)
            c = ucost + arc.weight
            if _relax(cand, arena, dst, c, u, ai, utrace,
                      arc.olabel, arc.ilabel, step, arc.weight, 0.0):
                if dst not in queued:
                    work.append(dst)
                    queued.add(dst)


def _prune_candidates(items, beam: float, max_active: int | None) -> list[Token]:
    """Beam and max-active pruning; returns survivors ordered by state id.

    A candidate survives iff cost <= best + beam; max-active then keeps the
    cheapest entries under the (cost, state id) tie-break.  The parallel
    engine funnels its aggregated slots through this same function so both
    engines prune identically.
    """
    items = list(items)
    if not items:
        return []
    best = min(c for _, c, _ in items)
    cutoff = best + beam
    kept = [(s, c, t) for s, c, t in items if c <= cutoff]
    if max_active is not None and len(kept) > max_active:
        kept.sort(key=lambda e: (e[1], e[0]))
        kept = kept[:max_active]
        kept.sort(key=lambda e: e[0])
    else:
        kept.sort(key=lambda e: e[0])
    return [Token(s, c, t) for s, c, t in kept]


def viterbi_step(wfst: Wfst, live: list[Token], costs: list[float],
                 cfg: DecodeConfig, arena: TraceArena, step: int = 0,
                 recorder=None) -> list[Token]:
    """One search step: emit, recombine, epsilon-propagate, prune.

    `costs` holds per-label acoustic costs for the consumed frame, indexed
    by label id.  An empty return signals search death.
    """
    node_step = step + 1
    if recorder is not None:
        recorder.begin_step(node_step)
    cand: dict[int, list] = {}
    arcs = wfst.arcs
    offsets = wfst.arc_offsets
    split = wfst.eps_split
    for tok in live:
        s = tok.state
        tcost = tok.cost
        ttrace = tok.trace
        for ai in range(split[s], offsets[s + 1]):
            arc = arcs[ai]
            ac = costs[arc.ilabel]
            if ac == INF:
                continue
            c = tcost + arc.weight + ac
            if recorder is not None:
                recorder.emitting(node_step, s, ai, ac)
            _relax(cand, arena, arc.dst, c, s, ai, ttrace,
                   arc.olabel, arc.ilabel, step, arc.weight, ac)

    _epsilon_fixpoint(wfst, cand, arena, step, recorder, node_step)

    survivors = _prune_candidates(
        ((s, e[0], e[3]) for s, e in cand.items()), cfg.beam, cfg.max_active)
    if recorder is not None:
        recorder.survivors(node_step, tuple(t.state for t in survivors))
    return survivors


def _initial_tokens(wfst: Wfst, cfg: DecodeConfig, arena: TraceArena,
                    recorder=None) -> list[Token]:
    """Start token plus its epsilon closure, pruned like any other step."""
    if recorder is not None:
        recorder.begin_step(0)
    cand: dict[int, list] = {wfst.start: [0.0, -1, -1, ROOT_TRACE]}
    _epsilon_fixpoint(wfst, cand, arena, 0, recorder, 0)
    survivors = _prune_candidates(
        ((s, e[0], e[3]) for s, e in cand.items()), cfg.beam, cfg.max_active)
    if recorder is not None:
        states = {t.state for t in survivors}
        states.add(wfst.start)  # keep the lattice rooted even under brutal pruning
        recorder.survivors(0, tuple(sorted(states)))
    return survivors


def final_transition(wfst: Wfst, live: list[Token]) -> tuple[Token, bool]:
    """Apply final weights and pick the winner.

    Returns the argmin token over final states with its final weight folded
    into the cost (ties break toward the lower state id).  With no token on
    a final state, falls back to the global min-cost token unchanged and
    reports False.
    """
    if not live:
        raise ValueError("final_transition needs at least one live token")
    best: Token | None = None
    for t in live:
        fw = wfst.final_weight(t.state)
        if fw == INF:
            continue
        c = t.cost + fw
        if best is None or c < best.cost or (c == best.cost and t.state < best.state):
            best = Token(t.state, c, t.trace)
    if best is not None:
        return best, True
    fallback = min(live, key=lambda t: (t.cost, t.state))
    return fallback, False


def backtrace(token: Token, arena: TraceArena) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Follow trace links to the root; non-epsilon labels in path order."""
    olabels: list[int] = []
    ilabels: list[int] = []
    idx = token.trace
    while idx != ROOT_TRACE:
        ol = arena.olabel[idx]
        il = arena.ilabel[idx]
        if ol != 0:
            olabels.append(ol)
        if il != 0:
            ilabels.append(il)
        idx = arena.prev[idx]
    olabels.reverse()
    ilabels.reverse()
    return tuple(olabels), tuple(ilabels)


def _check_compatible(wfst: Wfst, posts: PosteriorMatrix) -> None:
    max_ilabel = max((a.ilabel for a in wfst.arcs), default=0)
    if max_ilabel > posts.num_nonblank_labels:
        raise ValueError(
            f"graph uses input label {max_ilabel} but the posterior matrix "
            f"only covers labels 1..{posts.num_nonblank_labels}")


def _search(wfst: Wfst, posts: PosteriorMatrix, cfg: DecodeConfig,
            frames: list[int], recorder=None) -> DecodeResult:
    cycle = wfst.epsilon_cycle()
    if cycle is not None:
        raise WfstError(
            f"epsilon cycle with total weight {cycle.total_weight} through "
            f"states {list(cycle.states)}; non-emitting propagation would not terminate")
    _check_compatible(wfst, posts)

    arena = TraceArena()
    live = _initial_tokens(wfst, cfg, arena, recorder)
    expanded = 0
    steps_run = 0
    died_at: int | None = None

    for s, f in enumerate(frames):
        costs = frame_costs(posts, f, cfg.acoustic_scale)
        expanded += len(live)
        nxt = viterbi_step(wfst, live, costs, cfg, arena, step=s, recorder=recorder)
        steps_run += 1
        if not nxt:
            died_at = s
            break
        live = nxt

    if died_at is None:
        best, reached = final_transition(wfst, live)
        last_step = steps_run
    else:
        best = min(live, key=lambda t: (t.cost, t.state))
        reached = False
        last_step = died_at  # node step of the last non-empty token set

    olabels, ilabels = backtrace(best, arena)
    if recorder is not None:
        recorder.finish(last_step, best.state, reached)
    return DecodeResult(
        total_cost=best.cost,
        olabels=olabels,
        ilabels=ilabels,
        search_steps=steps_run,
        tokens_expanded=expanded,
        reached_final=reached,
        died_at_step=died_at,
    )


def decode_fsd(wfst: Wfst, posts: PosteriorMatrix, cfg: DecodeConfig,
               recorder=None) -> DecodeResult:
    """Frame-synchronous decoding: one search step per frame."""
    return _search(wfst, posts, cfg, list(range(posts.num_frames)), recorder)


def decode_lsd(wfst: Wfst, posts: PosteriorMatrix, cfg: DecodeConfig,
               recorder=None) -> DecodeResult:
    """Label-synchronous decoding: blank frames are discarded unsearched."""
    mask = classify_blank_frames(posts, cfg.blank_threshold)
    return _search(wfst, posts, cfg, mask.nonblank_frames(), recorder)


def decode(wfst: Wfst, posts: PosteriorMatrix, cfg: DecodeConfig,
           recorder=None) -> DecodeResult:
    """Dispatch on cfg.mode."""
    if cfg.mode == "fsd":
        return decode_fsd(wfst, posts, cfg, recorder)
    return decode_lsd(wfst, posts, cfg, recorder)
