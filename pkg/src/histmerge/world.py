"""World state with branching and merging of histories.

A :class:`WorldState` carries two descriptions of the same coarse-grained
state:

* ``rho_bar``: the dense density matrix in the Schrodinger picture at time
  ``now``. It is canonical for dynamics and entropy.
* ``bundle``: the weighted chains whose erased slots range over all of their
  outcomes. Each chain keeps its unnormalized probability and its
  Heisenberg-picture conditional state, which is what consistency checks and
  later erasures need.

Heisenberg-picture quantities are referred to the world's start time ``t0``;
the family held by the world stores slot times relative to ``t0``.
:func:`bundle_density` is the one place where the two pictures meet.

Three transformations are provided: :func:`branch` (condition on an event),
:func:`merge_deterministic` (records of a past event decay, followed by free
evolution) and :func:`merge_with_event` (records decay while a new event is
actualized, as one transformation).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    DensityMatrix,
    Hamiltonian,
    as_matrix,
    evolve_unitary,
    hermitize,
    matrix_to_json,
    residual,
    validate,
    von_neumann_entropy,
)
from .errors import CapacityError, DoubleEraseError, HistmergeError, SelectorError, ZeroBranchError
from .histories import (
    ERASED,
    P_MIN,
    EventSlot,
    HistoryFamily,
    chain_operator,
    conditional_state_direct,
    history_probability,
)

log = logging.getLogger(__name__)

BUNDLE_CAP = 1024

__all__ = [
    "BUNDLE_CAP", "WeightedChain", "WorldState", "init_world", "branch",
    "branch_probabilities", "merge_deterministic", "merge_with_event",
    "merge_with_event_probabilities", "world_entropy", "bundle_density",
    "recompute_rho_bar", "world_residuals", "new_slot_consistency",
    "world_to_json",
]


@dataclass(frozen=True, eq=False)
class WeightedChain:
    """One history of the bundle.

    ``probability`` is the unnormalized chain probability ``Tr(C^dagger rho0 C)``
    and ``state`` the Heisenberg-picture conditional state ``C^dagger rho0 C / p``.
    A synthetic chain (produced when an oversized bundle is collapsed) has
    already folded slots ``< anchor`` into ``anchor_state``.
    """

    selector: tuple
    weight: float
    probability: float
    state: np.ndarray
    anchor: int = 0
    anchor_state: np.ndarray | None = None
    anchor_probability: float = 1.0

    @property
    def synthetic(self) -> bool:
        return self.anchor > 0


@dataclass(frozen=True, eq=False)
class WorldState:
    family: HistoryFamily
    realized: tuple
    bundle: tuple
    rho_bar: np.ndarray
    now: float
    t0: float = 0.0
    bundle_cap: int = BUNDLE_CAP
    allow_collapse: bool = True

    @property
    def dim(self) -> int:
        return self.family.dim

    @property
    def hamiltonian(self) -> Hamiltonian:
        return self.family.hamiltonian

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.bundle])

    @property
    def erased_slots(self) -> tuple[int, ...]:
        return tuple(k for k, a in enumerate(self.realized) if a is ERASED)

    @property
    def intact_slots(self) -> tuple[int, ...]:
        return tuple(k for k, a in enumerate(self.realized) if a is not ERASED)


def init_world(rho0, hamiltonian, t0: float = 0.0, *, bundle_cap: int = BUNDLE_CAP,
               allow_collapse: bool = True) -> WorldState:
    """A world with no events yet: one empty chain of weight 1 and ``rho_bar = rho0``."""
    family = HistoryFamily(rho0, hamiltonian)
    rho = family.initial_state.matrix
    chain = WeightedChain((), 1.0, 1.0, rho)
    return WorldState(family, (), (chain,), rho, float(t0), float(t0), bundle_cap, allow_collapse)


def _evolve(w: WorldState, rho: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
    if t_to == t_from:
        return rho
    u = evolve_unitary(w.hamiltonian, t_to - t_from)
    return hermitize(u @ rho @ u.conj().T)


def _to_schrodinger(w: WorldState, rho_h: np.ndarray, t: float) -> np.ndarray:
    return _evolve(w, rho_h, w.t0, t)


def bundle_density(w: WorldState) -> np.ndarray:
    """The bundle's convex combination, evolved to ``w.now`` (Schrodinger picture)."""
    rho_h = sum(c.weight * c.state for c in w.bundle)
    return _to_schrodinger(w, hermitize(rho_h), w.now)


def _check_new_time(w: WorldState, t: float):
    if not np.isfinite(t) or not t > w.now:
        raise HistmergeError(f"event time {t} must be later than the world time {w.now}")


def _choose(probs: np.ndarray, outcome) -> int:
    if isinstance(outcome, np.random.Generator):
        total = probs.sum()
        return int(outcome.choice(len(probs), p=probs / total))
    if isinstance(outcome, bool) or not isinstance(outcome, (int, np.integer)):
        raise SelectorError(f"outcome must be an index or a numpy Generator, got {outcome!r}")
    if not 0 <= outcome < len(probs):
        raise SelectorError(f"outcome {outcome} outside 0..{len(probs) - 1}")
    return int(outcome)


def _finalize(w: WorldState, **changes) -> WorldState:
    new = replace(w, **changes)
    if len(new.bundle) > new.bundle_cap:
        if not new.allow_collapse:
            raise CapacityError(f"bundle of {len(new.bundle)} chains exceeds cap {new.bundle_cap}")
        new = _collapse(new)
    return new


def _collapse(w: WorldState) -> WorldState:
    rho_h = hermitize(sum(c.weight * c.state for c in w.bundle))
    p = float(sum(c.probability for c in w.bundle))
    n = len(w.realized)
    log.warning("bundle of %d chains collapsed into one synthetic chain at slot %d",
                len(w.bundle), n)
    chain = WeightedChain(w.realized, 1.0, p, rho_h, anchor=n, anchor_state=rho_h,
                          anchor_probability=p)
    return replace(w, bundle=(chain,))


def branch_probabilities(w: WorldState, slot: EventSlot) -> np.ndarray:
    """``N_alpha = Tr(E^alpha rho_bar(t))`` for every outcome of ``slot``."""
    _check_new_time(w, slot.time)
    rho = _evolve(w, w.rho_bar, w.now, slot.time)
    return np.array([float(np.trace(e @ rho).real) for e in slot.decomposition])


def branch(w: WorldState, slot: EventSlot, outcome) -> tuple[WorldState, float]:
    """Condition the world on one outcome of a new event.

    ``outcome`` is an index, or a ``numpy.random.Generator`` to draw the
    outcome with probability ``N_alpha``. Returns the new world and ``N``.
    """
    _check_new_time(w, slot.time)
    family = w.family.extended(EventSlot(slot.time - w.t0, slot.decomposition))
    rho = _evolve(w, w.rho_bar, w.now, slot.time)
    probs = np.array([float(np.trace(e @ rho).real) for e in slot.decomposition])
    alpha = _choose(probs, outcome)
    n = probs[alpha]
    if n <= P_MIN:
        raise ZeroBranchError(f"outcome {alpha} has probability {n:.3e}", n)
    e = slot.decomposition[alpha]
    rho_bar = hermitize(e @ rho @ e) / n

    e_h = family.heisenberg(family.num_slots - 1)[alpha]
    chains = []
    for c in w.bundle:
        m = e_h @ c.state @ e_h
        n_c = float(np.trace(m).real)
        if n_c <= P_MIN:
            continue
        chains.append(WeightedChain(c.selector + (alpha,), c.weight * n_c,
                                    c.probability * n_c, hermitize(m) / n_c,
                                    c.anchor, c.anchor_state, c.anchor_probability))
    total = sum(c.weight for c in chains)
    if total <= 0:
        raise ZeroBranchError(f"no bundle chain supports outcome {alpha}", n)
    chains = tuple(replace(c, weight=c.weight / total) for c in chains)
    new = _finalize(w, family=family, realized=w.realized + (alpha,), bundle=chains,
                    rho_bar=rho_bar, now=float(slot.time))
    return new, float(n)


def _replay(family: HistoryFamily, chain: WeightedChain, selector: tuple):
    """Unnormalized Heisenberg state and probability of ``selector`` from the chain's anchor."""
    if chain.anchor_state is None:
        m = family.initial_state.matrix
    else:
        m = chain.anchor_probability * chain.anchor_state
    for k in range(chain.anchor, len(selector)):
        e = family.heisenberg(k)[selector[k]]
        m = e @ m @ e
    return m, float(np.trace(m).real)


def _variants(w: WorldState, family: HistoryFamily, i: int) -> list:
    """Every bundle chain with slot ``i`` ranging over all outcomes.

    Returns ``(selector, unnormalized_state, probability, chain)`` tuples.
    """
    out = []
    m_i = len(family.slots[i])
    for c in w.bundle:
        if i < c.anchor:
            # lossy: the record structure before the collapse point is gone
            sel = c.selector[:i] + (ERASED,) + c.selector[i + 1:]
            out.append((sel, c.probability * c.state, c.probability, c))
            continue
        for a in range(m_i):
            sel = c.selector[:i] + (a,) + c.selector[i + 1:]
            m, p = _replay(family, c, sel)
            out.append((sel, m, p, c))
    return out


def _bundle_from(variants: list) -> tuple:
    kept = [(s, m, p, c) for s, m, p, c in variants if p > P_MIN]
    total = sum(p for _, _, p, _ in kept)
    return tuple(
        WeightedChain(s, p / total, p, hermitize(m) / p, c.anchor, c.anchor_state,
                      c.anchor_probability)
        for s, m, p, c in kept
    )


def _check_erasable(w: WorldState, i: int):
    if not 0 <= i < len(w.realized):
        raise SelectorError(f"slot {i} does not exist (world has {len(w.realized)} slots)")
    if w.realized[i] is ERASED:
        raise DoubleEraseError(f"records of slot {i} were already destroyed")


def merge_deterministic(w: WorldState, slot_index: int, t_n: float) -> WorldState:
    """Destroy the records of slot ``slot_index``, then evolve freely to ``t_n``.

    Every bundle chain is expanded over all outcomes of the slot, weighted by
    its chain probability relative to the whole new bundle; the new
    ``rho_bar`` is the evolved convex combination.

    Free evolution runs from ``w.now`` to ``t_n``. When events are processed
    in time order ``w.now`` is the previous event time, so this is the usual
    ``exp(-iH(t_n - t_{n-1}))`` factor.
    """
    _check_erasable(w, slot_index)
    if not np.isfinite(t_n) or t_n < w.now:
        raise HistmergeError(f"erasure time {t_n} precedes the world time {w.now}")
    if any(slot_index < c.anchor for c in w.bundle):
        log.warning("slot %d predates the bundle collapse; its erasure is not resolved", slot_index)
    bundle = _bundle_from(_variants(w, w.family, slot_index))
    if not bundle:
        raise HistmergeError("every variant chain has zero probability")
    realized = w.realized[:slot_index] + (ERASED,) + w.realized[slot_index + 1:]
    new = replace(w, realized=realized, bundle=bundle, now=float(t_n))
    return _finalize(new, rho_bar=bundle_density(new))


def _event_table(w: WorldState, slot_index: int, new_slot: EventSlot):
    _check_erasable(w, slot_index)
    _check_new_time(w, new_slot.time)
    family = w.family.extended(EventSlot(new_slot.time - w.t0, new_slot.decomposition))
    base = _variants(w, family, slot_index)
    last = family.num_slots - 1
    per_outcome = []
    for alpha, e in enumerate(family.heisenberg(last)):
        rows = []
        for sel, m, p, c in base:
            if p <= P_MIN:
                continue
            mm = e @ m @ e
            rows.append((sel + (alpha,), mm, float(np.trace(mm).real), c))
        per_outcome.append(rows)
    total = sum(p for _, _, p, _ in base if p > P_MIN)
    if total <= 0:
        raise HistmergeError("every variant chain has zero probability")
    probs = np.array([sum(p for _, _, p, _ in rows if p > P_MIN) for rows in per_outcome]) / total
    return family, per_outcome, probs


def merge_with_event_probabilities(w: WorldState, slot_index: int, new_slot: EventSlot) -> np.ndarray:
    """Aggregate probability of each outcome of ``new_slot`` after erasing ``slot_index``."""
    return _event_table(w, slot_index, new_slot)[2]


def merge_with_event(w: WorldState, slot_index: int, new_slot: EventSlot,
                     outcome) -> tuple[WorldState, float]:
    """Destroy the records of ``slot_index`` while a new event is actualized.

    The weights use the full-length chain probabilities, including the new
    outcome, so this is not the same as branching then merging.
    Returns the new world and the aggregate probability of the chosen outcome.
    """
    family, per_outcome, probs = _event_table(w, slot_index, new_slot)
    alpha = _choose(probs, outcome)
    if probs[alpha] <= P_MIN:
        raise ZeroBranchError(f"outcome {alpha} has probability {probs[alpha]:.3e}", probs[alpha])
    bundle = _bundle_from(per_outcome[alpha])
    realized = w.realized[:slot_index] + (ERASED,) + w.realized[slot_index + 1:] + (alpha,)
    new = replace(w, family=family, realized=realized, bundle=bundle, now=float(new_slot.time))
    return _finalize(new, rho_bar=bundle_density(new)), float(probs[alpha])


def world_entropy(w: WorldState) -> float:
    return von_neumann_entropy(w.rho_bar)


def recompute_rho_bar(w: WorldState) -> np.ndarray:
    """Debug oracle: rebuild ``rho_bar`` from the bundle selectors alone.

    Each chain's state and probability are recomputed from scratch with the
    history formulas; synthetic chains cannot be rebuilt this way.
    """
    if any(c.synthetic for c in w.bundle):
        raise HistmergeError("bundle holds a collapsed synthetic chain; no exact rebuild")
    probs = np.array([history_probability(w.family, c.selector) for c in w.bundle])
    states = [conditional_state_direct(w.family, c.selector).matrix for c in w.bundle]
    rho_h = sum(p * s for p, s in zip(probs / probs.sum(), states))
    return _to_schrodinger(w, hermitize(rho_h), w.now)


def world_residuals(w: WorldState) -> dict:
    """Measured residual of every world invariant (all should be ~0)."""
    agree = 0
    for c in w.bundle:
        for k, a in enumerate(w.realized):
            if a is not ERASED and c.selector[k] != a:
                agree += 1
    return {
        "weight_sum": abs(float(sum(c.weight for c in w.bundle)) - 1.0),
        "bundle_dense": residual(bundle_density(w) - w.rho_bar),
        "selector_mismatches": agree,
        "density_valid": 0 if validate(DensityMatrix(w.rho_bar)).valid else 1,
    }


def new_slot_consistency(w: WorldState, slot: EventSlot) -> float:
    """Worst medium-consistency residual among bundle chains extended by ``slot``.

    Pairs are the individual chains (not sums over erased outcomes).
    """
    if any(c.synthetic for c in w.bundle):
        raise HistmergeError("consistency is undefined for a collapsed bundle")
    family = w.family.extended(EventSlot(slot.time - w.t0, slot.decomposition))
    chains = [chain_operator(family, c.selector + (a,))
              for c in w.bundle for a in range(len(slot))]
    if len(chains) < 2:
        return 0.0
    rho0 = family.initial_state.matrix
    stack = np.array(chains)
    n = len(chains)
    left = np.einsum("ij,ajk->aik", rho0, stack).reshape(n, -1)
    d = np.abs(left @ stack.reshape(n, -1).conj().T)
    np.fill_diagonal(d, 0.0)
    return float(d.max())


def world_to_json(w: WorldState) -> dict:
    return {
        "time": w.now,
        "realized": ["erased" if a is ERASED else a for a in w.realized],
        "bundle": [
            {"selector": ["erased" if a is ERASED else a for a in c.selector],
             "weight": c.weight, "synthetic": c.synthetic}
            for c in w.bundle
        ],
        "rho_bar": matrix_to_json(w.rho_bar),
        "entropy": world_entropy(w),
    }
