"""Chain operators, history probabilities and the decoherence functional.

A family is an initial state, a Hamiltonian and a time-ordered list of
event slots. Projectors are stored in the Schrodinger picture together with
their time stamp; the Heisenberg-picture projector
``E(t) = U(t)^dagger E U(t)`` with ``U(t) = exp(-iHt)`` is computed on demand
and cached per family.

A chain selector is a tuple with one entry per consumed slot: an outcome
index, or ``ERASED`` (``None``) for a slot whose records were destroyed.
The chain operator of a fully chosen selector is the ordered product
``C = E_1(t_1) E_2(t_2) ... E_n(t_n)`` and its probability is
``Tr(C^dagger rho0 C)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    DensityMatrix,
    Hamiltonian,
    ProjectorDecomposition,
    as_matrix,
    evolve_unitary,
    hermitize,
    matrix_from_json,
    matrix_to_json,
    residual,
    TOL_HERM,
    TOL_PROJ,
    validate,
)
from .errors import CapacityError, SchemaError, SelectorError, ValidationError, ZeroBranchError

P_MIN = 1e-12
ENUMERATION_CAP = 4096
ERASED = None

__all__ = [
    "P_MIN", "ENUMERATION_CAP", "ERASED",
    "EventSlot", "HistoryFamily", "DecoherenceMatrix", "ConsistencyReport",
    "heisenberg_projector", "chain_operator", "history_probability",
    "conditional_state_direct", "conditional_state_step",
    "enumerate_selectors", "chain_count", "decoherence_functional",
    "check_consistency", "family_from_json", "family_to_json",
    "load_family", "save_family",
]


@dataclass(frozen=True, eq=False)
class EventSlot:
    time: float
    decomposition: ProjectorDecomposition

    @property
    def label(self) -> str:
        return self.decomposition.label

    def __len__(self) -> int:
        return len(self.decomposition)


class HistoryFamily:
    """Initial state, Hamiltonian and a schedule of event slots.

    Instances are immutable. All operators must share one dimension and
    slot times must be non-negative and strictly increasing.
    """

    __slots__ = ("initial_state", "hamiltonian", "slots", "_heis")

    def __init__(self, initial_state, hamiltonian, slots: Sequence[EventSlot] = ()):
        rho0 = initial_state if isinstance(initial_state, DensityMatrix) else DensityMatrix(initial_state)
        h = hamiltonian if isinstance(hamiltonian, Hamiltonian) else Hamiltonian(hamiltonian)
        validate(rho0).raise_if_invalid()
        validate(h).raise_if_invalid()
        if h.dim != rho0.dim:
            raise ValidationError(f"hamiltonian dim {h.dim} != state dim {rho0.dim}")
        object.__setattr__(self, "initial_state", rho0)
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "slots", ())
        object.__setattr__(self, "_heis", {})
        for slot in slots:
            self._check_slot(slot)
            object.__setattr__(self, "slots", self.slots + (slot,))

    def __setattr__(self, name, value):
        raise AttributeError("HistoryFamily is immutable")

    def __repr__(self):
        times = ", ".join(f"{s.time:g}" for s in self.slots)
        return f"HistoryFamily(dim={self.dim}, slots=[{times}])"

    @property
    def dim(self) -> int:
        return self.initial_state.dim

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    @property
    def outcome_counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.slots)

    @property
    def last_time(self) -> float | None:
        return self.slots[-1].time if self.slots else None

    def _check_slot(self, slot: EventSlot):
        if not isinstance(slot, EventSlot):
            raise TypeError("slots must be EventSlot instances")
        if not math.isfinite(slot.time) or slot.time < 0:
            raise ValidationError(f"slot time must be finite and >= 0, got {slot.time}")
        if self.slots and not slot.time > self.slots[-1].time:
            raise ValidationError(
                f"slot times must increase strictly: {slot.time} after {self.slots[-1].time}")
        if slot.decomposition.dim != self.dim:
            raise ValidationError(f"slot dim {slot.decomposition.dim} != family dim {self.dim}")
        validate(slot.decomposition).raise_if_invalid()

    def extended(self, slot: EventSlot) -> "HistoryFamily":
        """Return a new family with ``slot`` appended; cached conjugations are shared."""
        new = object.__new__(HistoryFamily)
        for name in ("initial_state", "hamiltonian", "slots"):
            object.__setattr__(new, name, getattr(self, name))
        object.__setattr__(new, "_heis", dict(self._heis))
        new._check_slot(slot)
        object.__setattr__(new, "slots", self.slots + (slot,))
        return new

    def prefix(self, n: int) -> "HistoryFamily":
        new = object.__new__(HistoryFamily)
        for name in ("initial_state", "hamiltonian"):
            object.__setattr__(new, name, getattr(self, name))
        object.__setattr__(new, "slots", self.slots[:n])
        object.__setattr__(new, "_heis", {k: v for k, v in self._heis.items() if k < n})
        return new

    def heisenberg(self, index: int) -> tuple[np.ndarray, ...]:
        """Heisenberg-picture projectors of slot ``index``."""
        cached = self._heis.get(index)
        if cached is None:
            slot = self.slots[index]
            u = evolve_unitary(self.hamiltonian, slot.time)
            cached = tuple(_conjugate(e, u) for e in slot.decomposition)
            self._heis[index] = cached
        return cached


def _conjugate(e: np.ndarray, u: np.ndarray) -> np.ndarray:
    return hermitize(u.conj().T @ e @ u)


def heisenberg_projector(e, h, t: float) -> np.ndarray:
    """``U(t)^dagger e U(t)`` with ``U(t) = exp(-i h t)``."""
    e = as_matrix(e)
    if residual(e - e.conj().T) > TOL_HERM or residual(e @ e - e) > TOL_PROJ:
        raise ValidationError("heisenberg_projector: input is not a Hermitian idempotent")
    return _conjugate(e, evolve_unitary(h, t))


def _selector(family: HistoryFamily, sel: Iterable, allow_erased: bool = False) -> tuple:
    sel = tuple(sel)
    if len(sel) > family.num_slots:
        raise SelectorError(f"selector of length {len(sel)} exceeds {family.num_slots} slots")
    for k, a in enumerate(sel):
        if a is ERASED:
            if not allow_erased:
                raise SelectorError(f"slot {k} is erased; a fully chosen selector is required")
            continue
        if isinstance(a, bool) or not isinstance(a, (int, np.integer)):
            raise SelectorError(f"slot {k}: outcome must be an integer, got {a!r}")
        if not 0 <= a < len(family.slots[k]):
            raise SelectorError(f"slot {k}: outcome {a} outside 0..{len(family.slots[k]) - 1}")
    return tuple(None if a is None else int(a) for a in sel)


def chain_operator(family: HistoryFamily, sel: Sequence[int]) -> np.ndarray:
    """Ordered product of the selected Heisenberg-picture projectors."""
    sel = _selector(family, sel)
    c = np.eye(family.dim, dtype=complex)
    for k, a in enumerate(sel):
        c = c @ family.heisenberg(k)[a]
    return c


def _unnormalized(family: HistoryFamily, sel: tuple) -> np.ndarray:
    c = chain_operator(family, sel)
    return c.conj().T @ family.initial_state.matrix @ c


def _clamp_probability(p: float) -> float:
    if -P_MIN <= p < 0.0:
        return 0.0
    if 1.0 < p <= 1.0 + P_MIN:
        return 1.0
    return p


def history_probability(family: HistoryFamily, sel: Sequence[int]) -> float:
    """``Tr(C^dagger rho0 C)`` for a fully chosen selector."""
    sel = _selector(family, sel)
    return _clamp_probability(float(np.trace(_unnormalized(family, sel)).real))


def conditional_state_direct(family: HistoryFamily, sel: Sequence[int]) -> DensityMatrix:
    """Normalized ``C^dagger rho0 C / Tr(...)`` (Heisenberg picture)."""
    sel = _selector(family, sel)
    m = _unnormalized(family, sel)
    p = float(np.trace(m).real)
    if p <= P_MIN:
        raise ZeroBranchError(f"history {sel} has probability {p:.3e}", p)
    return DensityMatrix(hermitize(m) / p)


def _step(prev: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, float]:
    m = e @ prev @ e
    n = float(np.trace(m).real)
    if n <= P_MIN:
        raise ZeroBranchError(f"branch weight {n:.3e} at or below P_MIN", n)
    return hermitize(m) / n, n


def conditional_state_step(prev, e_heis) -> tuple[DensityMatrix, float]:
    """One step of the recursion ``rho -> E rho E / N`` with ``N = Tr(E rho)``."""
    rho, n = _step(as_matrix(prev), as_matrix(e_heis))
    return DensityMatrix(rho), n


def chain_count(family: HistoryFamily, n: int | None = None) -> int:
    counts = family.outcome_counts[: family.num_slots if n is None else n]
    return math.prod(counts)


def enumerate_selectors(family: HistoryFamily, n: int | None = None):
    """All fully chosen selectors over the first ``n`` slots, lexicographic."""
    counts = family.outcome_counts[: family.num_slots if n is None else n]
    return itertools.product(*(range(c) for c in counts))


@dataclass(frozen=True, eq=False)
class DecoherenceMatrix:
    """Entries ``D[a, b] = Tr(C_b^dagger rho0 C_a)`` over enumerated selectors."""

    selectors: tuple
    entries: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def index(self, sel: Sequence[int]) -> int:
        return self.selectors.index(tuple(sel))

    def __getitem__(self, pair) -> complex:
        a, b = pair
        return complex(self.entries[self.index(a), self.index(b)])

    def off_diagonal(self) -> np.ndarray:
        out = self.entries.copy()
        np.fill_diagonal(out, 0.0)
        return out


def decoherence_functional(family: HistoryFamily, cap: int = ENUMERATION_CAP) -> DecoherenceMatrix:
    n = chain_count(family)
    if n > cap:
        raise CapacityError(f"{n} chains exceed the enumeration cap {cap}")
    selectors = tuple(enumerate_selectors(family))
    chains = np.array([chain_operator(family, s) for s in selectors])
    rho0 = family.initial_state.matrix
    left = np.einsum("ij,ajk->aik", rho0, chains).reshape(n, -1)
    d = left @ chains.reshape(n, -1).conj().T
    return DecoherenceMatrix(selectors, hermitize(d))


@dataclass(frozen=True)
class ConsistencyReport:
    mode: str
    tolerance: float
    consistent: bool
    worst_residual: float
    worst_pair: tuple | None
    chains: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "tolerance": self.tolerance,
            "consistent": self.consistent,
            "worst_residual": self.worst_residual,
            "worst_pair": None if self.worst_pair is None else [list(s) for s in self.worst_pair],
            "chains": self.chains,
        }


def _offdiag_residuals(d: np.ndarray, mode: str) -> np.ndarray:
    if mode == "weak":
        r = np.abs(d.real)
    elif mode == "medium":
        r = np.abs(d)
    else:
        raise ValueError(f"unknown consistency mode {mode!r}; use 'weak' or 'medium'")
    np.fill_diagonal(r, 0.0)
    return r


def check_consistency(family: HistoryFamily, mode: str = "medium", tol: float = 1e-10,
                      cap: int = ENUMERATION_CAP) -> ConsistencyReport:
    """Compare off-diagonal decoherence entries against ``tol``.

    ``weak`` bounds ``|Re D(a, b)|``, ``medium`` bounds ``|D(a, b)|``.
    """
    dm = decoherence_functional(family, cap)
    r = _offdiag_residuals(dm.entries, mode)
    if r.size <= 1 or not np.any(r):
        return ConsistencyReport(mode, tol, True, 0.0, None, len(dm.selectors))
    a, b = np.unravel_index(np.argmax(r), r.shape)
    worst = float(r[a, b])
    pair = (dm.selectors[a], dm.selectors[b])
    return ConsistencyReport(mode, tol, worst <= tol, worst, pair, len(dm.selectors))


def family_from_json(obj) -> HistoryFamily:
    """Build a family from the JSON layout used by family specification files.

    ``{"initial_state": M, "hamiltonian": M,
    "slots": [{"time": t, "label": "...", "projectors": [M, ...]}, ...]}``
    where each ``M`` is ``{"dim": n, "re": [[...]], "im": [[...]]}``.
    """
    if not isinstance(obj, dict):
        raise SchemaError("$", "family file must hold a JSON object")
    for key in ("initial_state", "hamiltonian"):
        if key not in obj:
            raise SchemaError(key, "missing")
    rho0 = matrix_from_json(obj["initial_state"], "initial_state")
    h = matrix_from_json(obj["hamiltonian"], "hamiltonian")
    slots_obj = obj.get("slots", [])
    if not isinstance(slots_obj, list):
        raise SchemaError("slots", "must be a list")
    slots = []
    for k, s in enumerate(slots_obj):
        where = f"slots[{k}]"
        if not isinstance(s, dict):
            raise SchemaError(where, "must be an object")
        if "time" not in s:
            raise SchemaError(f"{where}.time", "missing")
        if not isinstance(s["time"], (int, float)) or isinstance(s["time"], bool):
            raise SchemaError(f"{where}.time", f"must be a number, got {s['time']!r}")
        projs = s.get("projectors")
        if not isinstance(projs, list) or not projs:
            raise SchemaError(f"{where}.projectors", "must be a non-empty list")
        mats = tuple(matrix_from_json(p, f"{where}.projectors[{j}]") for j, p in enumerate(projs))
        decomposition = ProjectorDecomposition(mats, str(s.get("label", "")))
        report = validate(decomposition)
        if not report.valid:
            raise SchemaError(f"{where}.projectors", "; ".join(map(str, report.violations)))
        slots.append(EventSlot(float(s["time"]), decomposition))
    for key, m, kind in (("initial_state", rho0, "density"), ("hamiltonian", h, "hamiltonian")):
        report = validate(m, kind)
        if not report.valid:
            raise SchemaError(key, "; ".join(map(str, report.violations)))
    try:
        return HistoryFamily(rho0, h, slots)
    except ValidationError as exc:
        raise SchemaError("slots", str(exc)) from None


def family_to_json(family: HistoryFamily) -> dict:
    return {
        "initial_state": matrix_to_json(family.initial_state.matrix),
        "hamiltonian": matrix_to_json(family.hamiltonian.matrix),
        "slots": [
            {"time": s.time, "label": s.label,
             "projectors": [matrix_to_json(p) for p in s.decomposition]}
            for s in family.slots
        ],
    }


def load_family(path) -> HistoryFamily:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON ({exc})") from None
    return family_from_json(obj)


def save_family(family: HistoryFamily, path):
    Path(path).write_text(json.dumps(family_to_json(family), indent=2) + "\n")
