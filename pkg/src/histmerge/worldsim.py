"""Random instances and the record-saturation world simulation.

The simulated world has a fixed capacity for intact records. Every step
draws a fresh random projector decomposition and branches on it; the new
record goes into a :class:`RecordLedger`. When the ledger overflows, one
record is destroyed (oldest first by default), either by
:func:`~histmerge.world.merge_deterministic` right after the branch or folded
into the next event with :func:`~histmerge.world.merge_with_event`.

What triggers record decay is not physics here; it is the ledger policy.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .core import DensityMatrix, Hamiltonian, ProjectorDecomposition, hermitize
from .errors import CapacityError, HistmergeError, SchemaError, ValidationError
from .histories import ENUMERATION_CAP, P_MIN, EventSlot, HistoryFamily
from .world import (
    BUNDLE_CAP,
    WorldState,
    branch,
    branch_probabilities,
    init_world,
    merge_deterministic,
    merge_with_event,
    merge_with_event_probabilities,
    new_slot_consistency,
    world_entropy,
    world_to_json,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("step", "time", "event", "entropy", "probability", "bundle_size", "ledger_occupancy")
CONSISTENCY_TOL = 1e-6

__all__ = [
    "CSV_HEADER", "random_hamiltonian", "random_unitary", "random_projector_decomposition",
    "random_density", "random_family", "partition_ranks", "RecordLedger", "ERASE_POLICIES",
    "SimConfig", "TrajectoryRow", "Trajectory", "run_world", "summarize",
    "branch_erase_pairs", "event_family",
]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_hamiltonian(dim: int, scale: float = 1.0, seed=None) -> Hamiltonian:
    """GUE sample ``scale * (G + G^dagger) / 2`` with complex Gaussian ``G``."""
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    rng = _rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    if scale == 0:
        return Hamiltonian.zero(dim)
    return Hamiltonian(scale * 0.5 * (g + g.conj().T))


def random_unitary(dim: int, seed=None) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a complex Ginibre matrix."""
    rng = _rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_projector_decomposition(dim: int, ranks: Sequence[int], seed=None,
                                   label: str = "random") -> ProjectorDecomposition:
    """Projectors onto consecutive column blocks of a Haar-random unitary."""
    ranks = [int(r) for r in ranks]
    if sum(ranks) != dim or any(r < 1 for r in ranks):
        raise ValidationError(f"ranks {ranks} must be positive and sum to {dim}")
    u = random_unitary(dim, seed)
    projs = []
    start = 0
    for r in ranks:
        cols = u[:, start:start + r]
        projs.append(hermitize(cols @ cols.conj().T))
        start += r
    return ProjectorDecomposition(tuple(projs), label)


def random_density(dim: int, rank: int | None = None, seed=None, uniform: bool = False) -> DensityMatrix:
    """Wishart-style ``G G^dagger / Tr`` with ``G`` of shape ``dim x rank``.

    ``uniform=True`` (full rank only) returns the maximally mixed ``I / dim``.
    """
    rank = dim if rank is None else rank
    if not 1 <= rank <= dim:
        raise ValidationError(f"rank must lie in 1..{dim}, got {rank}")
    if uniform:
        if rank != dim:
            raise ValidationError("the uniform state has full rank")
        return DensityMatrix(np.eye(dim) / dim)
    rng = _rng(seed)
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    m = g @ g.conj().T
    return DensityMatrix(hermitize(m / np.trace(m).real))


def partition_ranks(dim: int, outcomes: int) -> list[int]:
    """Split ``dim`` into ``outcomes`` near-equal ranks, larger blocks first."""
    if not 1 <= outcomes <= dim:
        raise ValidationError(f"cannot split dim {dim} into {outcomes} non-empty blocks")
    base, extra = divmod(dim, outcomes)
    return [base + 1] * extra + [base] * (outcomes - extra)


def random_family(dim: int, n_slots: int, seed=None, max_outcomes: int | None = None,
                  hamiltonian_scale: float = 1.0, rank: int | None = None,
                  dt: float = 1.0) -> HistoryFamily:
    """Random state, GUE Hamiltonian and ``n_slots`` random decompositions at ``t = k * dt``."""
    rng = _rng(seed)
    h = random_hamiltonian(dim, hamiltonian_scale, rng)
    rho = random_density(dim, rank if rank is not None else int(rng.integers(1, dim + 1)), rng)
    top = dim if max_outcomes is None else min(dim, max_outcomes)
    slots = []
    for k in range(n_slots):
        outcomes = int(rng.integers(1, top + 1))
        cuts = np.sort(rng.choice(np.arange(1, dim), outcomes - 1, replace=False))
        ranks = np.diff(np.concatenate(([0], cuts, [dim]))).tolist()
        slots.append(EventSlot((k + 1) * dt, random_projector_decomposition(dim, ranks, rng)))
    return HistoryFamily(rho, h, slots)


def _oldest(intact: tuple, rng) -> int:
    return intact[0]


def _newest_but_one(intact: tuple, rng) -> int:
    return intact[-2] if len(intact) >= 2 else intact[-1]


def _random(intact: tuple, rng) -> int:
    return intact[int(rng.integers(len(intact)))]


ERASE_POLICIES: dict[str, Callable] = {
    "oldest": _oldest,
    "newest_but_one": _newest_but_one,
    "random": _random,
}


@dataclass(frozen=True)
class RecordLedger:
    """Slots whose records are still intact, oldest first."""

    capacity: int
    intact: tuple = ()

    @property
    def occupancy(self) -> int:
        return len(self.intact)

    @property
    def overflowing(self) -> bool:
        return len(self.intact) > self.capacity

    def add(self, slot_index: int) -> "RecordLedger":
        return RecordLedger(self.capacity, self.intact + (slot_index,))

    def remove(self, slot_index: int) -> "RecordLedger":
        return RecordLedger(self.capacity, tuple(k for k in self.intact if k != slot_index))

    def check(self, world: WorldState):
        if self.overflowing:
            raise HistmergeError(f"ledger holds {len(self.intact)} records > capacity {self.capacity}")
        erased = set(world.erased_slots)
        if any(k in erased or k >= len(world.realized) for k in self.intact):
            raise HistmergeError("ledger lists a slot whose records were destroyed")


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters; the JSON config file uses these field names.

    ``initial_rank`` sets the rank of the random initial state (0 selects
    the maximally mixed state). ``dt`` spaces the events; a deterministic
    erasure happens half a step after the branch it follows.
    ``merge_mode="off"`` ignores ``record_capacity`` (records never decay).
    """

    dim: int = 8
    steps: int = 8
    seed: int = 0
    outcomes_per_event: int = 2
    record_capacity: int = 2
    merge_mode: str = "deterministic"
    hamiltonian_scale: float = 0.0
    mode: str = "sampled"
    consistency_check: bool = False
    tolerance: float = 1e-9
    initial_rank: int = 2
    dt: float = 1.0
    erase_policy: str = "oldest"
    bundle_cap: int = BUNDLE_CAP
    enumeration_cap: int = ENUMERATION_CAP

    def __post_init__(self):
        def bad(name, why):
            raise SchemaError(name, why)

        for name in ("dim", "steps", "seed", "outcomes_per_event", "record_capacity",
                     "initial_rank", "bundle_cap", "enumeration_cap"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                bad(name, f"must be an integer, got {v!r}")
        for name in ("hamiltonian_scale", "tolerance", "dt"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                bad(name, f"must be a finite number, got {v!r}")
        if self.dim < 2:
            bad("dim", "must be >= 2")
        if self.steps < 1:
            bad("steps", "must be >= 1")
        if not 1 <= self.outcomes_per_event <= self.dim:
            bad("outcomes_per_event", f"must lie in 1..dim ({self.dim})")
        if self.record_capacity < 0:
            bad("record_capacity", "must be >= 0")
        if self.merge_mode not in ("deterministic", "evented", "off"):
            bad("merge_mode", "must be 'deterministic', 'evented' or 'off'")
        if self.merge_mode == "evented" and self.record_capacity < 1:
            bad("record_capacity", "evented merging needs room for at least one record")
        if self.mode not in ("sampled", "exhaustive"):
            bad("mode", "must be 'sampled' or 'exhaustive'")
        if not isinstance(self.consistency_check, bool):
            bad("consistency_check", "must be true or false")
        if not 0 <= self.initial_rank <= self.dim:
            bad("initial_rank", f"must lie in 0..dim ({self.dim})")
        if self.dt <= 0:
            bad("dt", "must be positive")
        if self.erase_policy not in ERASE_POLICIES:
            bad("erase_policy", f"must be one of {sorted(ERASE_POLICIES)}")

    @property
    def ranks(self) -> list[int]:
        return partition_ranks(self.dim, self.outcomes_per_event)

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        if not isinstance(obj, dict):
            raise SchemaError("$", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise SchemaError(key, "unknown config field")
        values = dict(obj)
        if "consistency_check" in values and values["consistency_check"] in ("on", "off"):
            values["consistency_check"] = values["consistency_check"] == "on"
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "SimConfig":
        return SimConfig(**{**self.to_dict(), "seed": int(seed)})


@dataclass(frozen=True)
class TrajectoryRow:
    step: int
    time: float
    event: str
    entropy: float
    probability: float
    bundle_size: int
    ledger_occupancy: int
    slot: int | None = None
    erased: int | None = None

    def csv_fields(self) -> list:
        return [self.step, repr(self.time), self.event, repr(self.entropy),
                repr(self.probability), self.bundle_size, self.ledger_occupancy]


@dataclass
class Trajectory:
    """Event rows of one run (sampled) or the probability-weighted average (exhaustive).

    ``consistency`` lists ``(step, worst_residual)`` when checking is on;
    ``mass_deficit`` is the probability carried by pruned zero branches.
    """

    config: SimConfig
    rows: list = field(default_factory=list)
    consistency: list = field(default_factory=list)
    mass_deficit: float = 0.0
    final_world: dict | None = None

    def step_entropies(self) -> list[float]:
        """Entropy after the last event of each step, starting with step 0."""
        last: dict[int, float] = {}
        for r in self.rows:
            last[r.step] = r.entropy
        return [last[k] for k in sorted(last)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow(r.csv_fields())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "step_entropies": self.step_entropies(),
            "mass_deficit": self.mass_deficit,
            "consistency": [list(c) for c in self.consistency],
            "final_world": self.final_world,
        }


def _initial_state(config: SimConfig, rng) -> DensityMatrix:
    if config.initial_rank == 0:
        return random_density(config.dim, config.dim, uniform=True)
    return random_density(config.dim, config.initial_rank, rng)


def _consistency(config: SimConfig, traj: Trajectory, step: int, worlds, slot: EventSlot):
    if not config.consistency_check:
        return
    worst = max(new_slot_consistency(w, slot) for w in worlds)
    traj.consistency.append((step, worst))
    if worst > CONSISTENCY_TOL:
        log.info("step %d: new slot violates medium consistency by %.3e", step, worst)


def run_world(config: SimConfig) -> Trajectory:
    """Simulate one world; see :class:`SimConfig` for the knobs.

    In ``exhaustive`` mode every outcome is followed and the rows carry the
    probability-weighted mean entropy over all leaves; the ``probability``
    column then reports the total retained probability mass.
    """
    rng = np.random.default_rng(config.seed)
    h = random_hamiltonian(config.dim, config.hamiltonian_scale, rng)
    rho0 = _initial_state(config, rng)
    world = init_world(rho0, h, 0.0, bundle_cap=config.bundle_cap,
                       allow_collapse=not config.consistency_check)
    if config.mode == "sampled":
        return _run_sampled(config, world, rng)
    return _run_exhaustive(config, world, rng)


def event_family(config: SimConfig) -> HistoryFamily:
    """The family of events a run of ``config`` draws, rebuilt from its seed.

    Exact only when no outcome sampling or random erasure draws interleave
    with the decompositions, i.e. exhaustive mode with a deterministic
    erase policy.
    """
    rng = np.random.default_rng(config.seed)
    h = random_hamiltonian(config.dim, config.hamiltonian_scale, rng)
    rho0 = _initial_state(config, rng)
    slots = [EventSlot(k * config.dt, random_projector_decomposition(config.dim, config.ranks, rng))
             for k in range(1, config.steps + 1)]
    return HistoryFamily(rho0, h, slots)


def _erase_choice(config: SimConfig, ledger: RecordLedger, rng) -> int:
    return ERASE_POLICIES[config.erase_policy](ledger.intact, rng)


def _run_sampled(config: SimConfig, world: WorldState, rng) -> Trajectory:
    traj = Trajectory(config)
    ledger = RecordLedger(config.record_capacity, ())
    traj.rows.append(TrajectoryRow(0, world.now, "init", world_entropy(world), 1.0,
                                   len(world.bundle), 0))
    for step in range(1, config.steps + 1):
        t = step * config.dt
        slot = EventSlot(t, random_projector_decomposition(config.dim, config.ranks, rng))
        new_index = len(world.realized)
        _consistency(config, traj, step, [world], slot)
        if config.merge_mode == "evented" and ledger.occupancy >= config.record_capacity:
            j = _erase_choice(config, ledger, rng)
            world, p = merge_with_event(world, j, slot, rng)
            ledger = ledger.remove(j).add(new_index)
            traj.rows.append(TrajectoryRow(step, t, "branch+merge", world_entropy(world), p,
                                           len(world.bundle), ledger.occupancy, new_index, j))
        else:
            world, p = branch(world, slot, rng)
            ledger = ledger.add(new_index)
            if config.merge_mode == "off":
                ledger = RecordLedger(len(ledger.intact), ledger.intact)
            traj.rows.append(TrajectoryRow(step, t, "branch", world_entropy(world), p,
                                           len(world.bundle), ledger.occupancy, new_index))
            while config.merge_mode == "deterministic" and ledger.overflowing:
                j = _erase_choice(config, ledger, rng)
                world = merge_deterministic(world, j, t + 0.5 * config.dt)
                ledger = ledger.remove(j)
                traj.rows.append(TrajectoryRow(step, world.now, "merge", world_entropy(world), 1.0,
                                               len(world.bundle), ledger.occupancy, None, j))
        ledger.check(world)
    traj.final_world = world_to_json(world)
    return traj


def _run_exhaustive(config: SimConfig, world: WorldState, rng) -> Trajectory:
    traj = Trajectory(config)
    leaves = [(1.0, world)]
    ledger = RecordLedger(config.record_capacity, ())

    def row(step, t, event, slot=None, erased=None):
        mass = sum(p for p, _ in leaves)
        mean = sum(p * world_entropy(w) for p, w in leaves)
        size = max(len(w.bundle) for _, w in leaves)
        traj.rows.append(TrajectoryRow(step, t, event, mean, mass, size, ledger.occupancy,
                                       slot, erased))

    row(0, world.now, "init")
    for step in range(1, config.steps + 1):
        t = step * config.dt
        slot = EventSlot(t, random_projector_decomposition(config.dim, config.ranks, rng))
        new_index = len(leaves[0][1].realized)
        _consistency(config, traj, step, [w for _, w in leaves], slot)
        evented = config.merge_mode == "evented" and ledger.occupancy >= config.record_capacity
        j = _erase_choice(config, ledger, rng) if evented else None
        grown = []
        for p, w in leaves:
            if evented:
                probs = merge_with_event_probabilities(w, j, slot)
            else:
                probs = branch_probabilities(w, slot)
            for alpha, n in enumerate(probs):
                if n <= P_MIN:
                    traj.mass_deficit += p * max(n, 0.0)
                    continue
                if evented:
                    child, _ = merge_with_event(w, j, slot, alpha)
                else:
                    child, _ = branch(w, slot, alpha)
                grown.append((p * n, child))
            if len(grown) > config.enumeration_cap:
                raise CapacityError(f"exhaustive tree exceeds {config.enumeration_cap} leaves")
        leaves = grown
        if evented:
            ledger = ledger.remove(j).add(new_index)
            row(step, t, "branch+merge", new_index, j)
        else:
            ledger = ledger.add(new_index)
            if config.merge_mode == "off":
                ledger = RecordLedger(len(ledger.intact), ledger.intact)
            row(step, t, "branch", new_index)
            while config.merge_mode == "deterministic" and ledger.overflowing:
                j = _erase_choice(config, ledger, rng)
                t_merge = t + 0.5 * config.dt
                leaves = [(p, merge_deterministic(w, j, t_merge)) for p, w in leaves]
                ledger = ledger.remove(j)
                row(step, t_merge, "merge", None, j)
        for _, w in leaves:
            ledger.check(w)
    return traj


def branch_erase_pairs(traj: Trajectory) -> list[tuple[int, float, float]]:
    """``(step, entropy_before_branch, entropy_after_erase)`` for every branch
    row immediately followed by a merge row erasing that same slot."""
    out = []
    rows = traj.rows
    for k in range(1, len(rows) - 1):
        b, m = rows[k], rows[k + 1]
        if b.event == "branch" and m.event == "merge" and m.erased == b.slot:
            out.append((b.step, rows[k - 1].entropy, m.entropy))
    return out


def summarize(trajectories: Sequence[Trajectory], tol: float = 1e-9) -> dict:
    """Per-step entropy statistics across trials and monotonicity fractions.

    Trajectories of different length are aligned by step; ``count`` per step
    says how many trials reached it and ``padded`` how many did not.
    """
    if not trajectories:
        raise ValueError("summarize needs at least one trajectory")
    series = [t.step_entropies() for t in trajectories]
    n_steps = max(len(s) for s in series)
    steps = []
    for k in range(n_steps):
        vals = np.array([s[k] for s in series if len(s) > k])
        steps.append({
            "step": k,
            "count": int(len(vals)),
            "padded": int(len(series) - len(vals)),
            "mean": float(vals.mean()),
            "min": float(vals.min()),
            "max": float(vals.max()),
            "std": float(vals.std()),
        })
    diffs = [np.diff(s) for s in series]
    return {
        "trials": len(trajectories),
        "steps": steps,
        "mean_initial": steps[0]["mean"],
        "mean_final": steps[-1]["mean"],
        "fraction_non_decreasing": float(np.mean([bool(np.all(d >= -tol)) for d in diffs])),
        "fraction_non_increasing": float(np.mean([bool(np.all(d <= tol)) for d in diffs])),
        "fraction_increasing_steps": float(np.mean(np.concatenate(diffs) > tol)) if n_steps > 1 else 0.0,
    }
