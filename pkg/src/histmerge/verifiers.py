"""Numerical witnesses for the entropy inequalities of branching and merging.

For a state ``rho`` and a complete set of orthogonal projectors ``E^a`` write
``p_a = Tr(E^a rho)`` and ``rho'_a = E^a rho E^a / p_a``. The checks are

* average branch entropy: ``sum_a p_a s[rho'_a] <= s[rho]``
* branch then erase: ``s[rho] <= s[sum_a p_a rho'_a]``
* the same average inequality for the quadratic entropy ``-Tr rho^2``

and, for a whole family, that the probability-weighted mean entropy of the
conditional states never rises as more events are appended.

Ensemble runners (:func:`run_suite`) sample reproducible random instances
and return a JSON-ready summary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DensityMatrix,
    ProjectorDecomposition,
    as_matrix,
    hermitize,
    quadratic_entropy,
    residual,
    validate,
    von_neumann_entropy,
)
from .errors import CapacityError, ValidationError, ZeroBranchError
from .histories import (
    ENUMERATION_CAP,
    P_MIN,
    HistoryFamily,
    chain_count,
    conditional_state_direct,
    conditional_state_step,
    enumerate_selectors,
    history_probability,
)

TOLERANCE = 1e-9
SUITES = ("gl", "merge", "quadratic", "qubit", "conditional")
DEFAULT_DIMS = (2, 3, 4, 6, 8)

__all__ = [
    "TOLERANCE", "SUITES", "DEFAULT_DIMS", "InequalityReport", "PropositionReport",
    "branch_states", "dephase", "entropy_decrease", "check_groenewold_lindblad",
    "check_branch_merge_inequality", "check_quadratic_variant", "check_proposition",
    "integer_partitions", "run_suite",
]


@dataclass(frozen=True)
class InequalityReport:
    """``lhs <= rhs`` up to ``tolerance``; ``slack = rhs - lhs``."""

    name: str
    lhs: float
    rhs: float
    tolerance: float = TOLERANCE
    digest: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= -self.tolerance

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "holds": self.holds, "tolerance": self.tolerance, "digest": self.digest}


def _inputs(rho, d: ProjectorDecomposition) -> np.ndarray:
    m = as_matrix(rho)
    if d.dim != m.shape[0]:
        raise ValidationError(f"dimension mismatch: state {m.shape[0]} vs decomposition {d.dim}")
    validate(m, "density").raise_if_invalid()
    validate(d).raise_if_invalid()
    return m


def branch_states(rho, d: ProjectorDecomposition) -> list[tuple[float, np.ndarray | None]]:
    """``(p_a, rho'_a)`` per outcome; ``rho'_a`` is ``None`` when ``p_a <= P_MIN``."""
    m = as_matrix(rho)
    out = []
    for e in d:
        b = e @ m @ e
        p = float(np.trace(b).real)
        out.append((p, hermitize(b) / p if p > P_MIN else None))
    return out


def dephase(rho, d: ProjectorDecomposition) -> np.ndarray:
    """``sum_a E^a rho E^a``: the state after branching and then erasing the record."""
    m = as_matrix(rho)
    return hermitize(sum(e @ m @ e for e in d))


def _average(branches, entropy) -> float:
    return float(sum(p * entropy(r, check=False) for p, r in branches if r is not None))


def entropy_decrease(rho, d: ProjectorDecomposition) -> float:
    """``s[rho] - sum_a p_a s[rho'_a]``, the mean entropy lost by branching."""
    m = _inputs(rho, d)
    return von_neumann_entropy(m, check=False) - _average(branch_states(m, d), von_neumann_entropy)


def check_groenewold_lindblad(rho, d: ProjectorDecomposition, tol: float = TOLERANCE,
                              digest: dict | None = None) -> InequalityReport:
    m = _inputs(rho, d)
    lhs = _average(branch_states(m, d), von_neumann_entropy)
    return InequalityReport("groenewold_lindblad", lhs, von_neumann_entropy(m, check=False),
                            tol, digest or {})


def check_branch_merge_inequality(rho, d: ProjectorDecomposition, tol: float = TOLERANCE,
                                  digest: dict | None = None) -> InequalityReport:
    m = _inputs(rho, d)
    after = von_neumann_entropy(dephase(m, d), check=False)
    return InequalityReport("branch_merge", von_neumann_entropy(m, check=False), after,
                            tol, digest or {})


def check_quadratic_variant(rho, d: ProjectorDecomposition, tol: float = TOLERANCE,
                            digest: dict | None = None) -> InequalityReport:
    m = _inputs(rho, d)
    lhs = _average(branch_states(m, d), quadratic_entropy)
    return InequalityReport("quadratic", lhs, quadratic_entropy(m, check=False), tol, digest or {})


@dataclass(frozen=True)
class PropositionReport:
    """Mean conditional-state entropy after each number of events.

    ``averages[n]`` is ``sum_C P(C) s[rho(C, t_n)]`` over prefix chains of
    length ``n``; ``branch_slacks[n]`` is the worst average-entropy slack of
    any single branching between ``n`` and ``n + 1`` events.
    """

    averages: tuple
    branch_slacks: tuple
    tolerance: float
    mass_deficit: float

    @property
    def increments(self) -> tuple:
        return tuple(b - a for a, b in zip(self.averages, self.averages[1:]))

    @property
    def holds(self) -> bool:
        return (all(inc <= self.tolerance for inc in self.increments)
                and all(s >= -self.tolerance for s in self.branch_slacks))


def check_proposition(family: HistoryFamily, tol: float = TOLERANCE,
                      cap: int = ENUMERATION_CAP) -> PropositionReport:
    """Exhaustive branching tree of ``family``; checks that mean entropy never rises."""
    total = sum(chain_count(family, n) for n in range(family.num_slots + 1))
    if total > cap:
        raise CapacityError(f"{total} prefix chains exceed the enumeration cap {cap}")
    leaves = [(1.0, family.initial_state.matrix)]
    averages = [von_neumann_entropy(leaves[0][1])]
    slacks = []
    lost = 0.0
    for k in range(family.num_slots):
        heis = family.heisenberg(k)
        grown = []
        worst = math.inf
        for weight, rho in leaves:
            entropies = []
            for e in heis:
                try:
                    child, n = conditional_state_step(rho, e)
                except ZeroBranchError as exc:
                    lost += weight * max(exc.probability, 0.0)
                    continue
                grown.append((weight * n, child.matrix))
                entropies.append(n * von_neumann_entropy(child, check=False))
            worst = min(worst, von_neumann_entropy(rho, check=False) - sum(entropies))
        leaves = grown
        slacks.append(worst)
        averages.append(sum(w * von_neumann_entropy(r, check=False) for w, r in leaves))
    return PropositionReport(tuple(averages), tuple(slacks), tol, lost)


def integer_partitions(n: int, largest: int | None = None):
    """Partitions of ``n`` as non-increasing tuples, e.g. 3 -> (3,), (2, 1), (1, 1, 1)."""
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for first in range(min(n, largest), 0, -1):
        for rest in integer_partitions(n - first, first):
            yield (first,) + rest


def _instance_rng(seed: int, suite: str, dim: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, SUITES.index(suite), dim, k])


def _inequality_instances(suite: str, instances: int, seed: int, dims, tol: float):
    from .worldsim import random_density, random_projector_decomposition

    check = {"gl": check_groenewold_lindblad, "merge": check_branch_merge_inequality,
             "quadratic": check_quadratic_variant}[suite]
    for dim in dims:
        partitions = list(integer_partitions(dim))
        for k in range(instances):
            rng = _instance_rng(seed, suite, dim, k)
            ranks = list(partitions[k % len(partitions)])
            rng.shuffle(ranks)
            rank = int(rng.integers(1, dim + 1))
            rho = random_density(dim, rank, rng)
            d = random_projector_decomposition(dim, ranks, rng)
            digest = {"seed": seed, "suite": suite, "dim": dim, "index": k,
                      "ranks": ranks, "state_rank": rank}
            yield check(rho, d, tol, digest)


def _qubit_instances(instances: int, seed: int, tol: float):
    from .worldsim import random_density, random_projector_decomposition

    for k in range(instances):
        rng = _instance_rng(seed, "qubit", 2, k)
        rank = int(rng.integers(1, 3))
        rho = random_density(2, rank, rng)
        d = random_projector_decomposition(2, [1, 1], rng)
        digest = {"seed": seed, "suite": "qubit", "dim": 2, "index": k, "state_rank": rank}
        yield InequalityReport("qubit_bound", entropy_decrease(rho, d), math.log(2), tol, digest)
    rho = DensityMatrix(np.eye(2) / 2)
    dec = entropy_decrease(rho, ProjectorDecomposition.computational(2))
    yield InequalityReport("qubit_bound_saturation", abs(dec - math.log(2)), 0.0, tol,
                           {"seed": seed, "suite": "qubit", "case": "I/2 eigenbasis"})


def _conditional_instances(instances: int, seed: int, tol: float):
    from .worldsim import random_family

    for k in range(instances):
        rng = _instance_rng(seed, "conditional", 0, k)
        dim = int(rng.integers(2, 9))
        n_slots = int(rng.integers(1, 5))
        family = random_family(dim, n_slots, rng, max_outcomes=3)
        digest = {"seed": seed, "suite": "conditional", "index": k, "dim": dim, "slots": n_slots}
        worst_state, worst_prob = conditional_agreement(family)
        total = sum(history_probability(family, s) for s in enumerate_selectors(family))
        yield InequalityReport("recursive_vs_direct_state", worst_state, 0.0, 1e-10, digest)
        yield InequalityReport("probability_chain_rule", worst_prob, 0.0, 1e-10, digest)
        yield InequalityReport("probability_completeness", abs(total - 1.0), 0.0, tol, digest)


def conditional_agreement(family: HistoryFamily, p_floor: float = 1e-6) -> tuple[float, float]:
    """Largest gaps between direct and recursive conditional states/probabilities.

    States are compared on chains with probability above ``p_floor`` (the
    direct formula divides by ``p``, so tiny branches amplify roundoff);
    probabilities are compared on every chain.
    """
    worst_state = 0.0
    worst_prob = 0.0
    for sel in enumerate_selectors(family):
        rho = family.initial_state.matrix
        weight = 1.0
        alive = True
        for k, a in enumerate(sel):
            try:
                state, n = conditional_state_step(rho, family.heisenberg(k)[a])
            except ZeroBranchError as exc:
                weight *= max(exc.probability, 0.0)
                alive = False
                break
            rho, weight = state.matrix, weight * n
        p = history_probability(family, sel)
        worst_prob = max(worst_prob, abs(p - weight) if alive else max(p - P_MIN, 0.0))
        if alive and p > p_floor:
            direct = conditional_state_direct(family, sel).matrix
            worst_state = max(worst_state, residual(direct - rho))
    return worst_state, worst_prob


def run_suite(suite: str, instances: int = 500, seed: int = 1, dims=DEFAULT_DIMS,
              tol: float = TOLERANCE) -> dict:
    """Run one verification ensemble (or ``"all"``) and summarize it.

    The summary holds ``checks``, ``instances``, ``violations`` and
    ``worst_slack``, plus the worst report for reproduction.
    """
    names = SUITES if suite == "all" else (suite,)
    per_suite = {}
    for name in names:
        if name in ("gl", "merge", "quadratic"):
            reports = _inequality_instances(name, instances, seed, dims, tol)
        elif name == "qubit":
            reports = _qubit_instances(instances, seed, tol)
        elif name == "conditional":
            reports = _conditional_instances(instances, seed, tol)
        else:
            raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
        count = violations = 0
        worst = None
        for r in reports:
            count += 1
            violations += not r.holds
            if worst is None or r.slack + r.tolerance < worst.slack + worst.tolerance:
                worst = r
        per_suite[name] = {
            "checks": count,
            "violations": violations,
            "worst_slack": worst.slack if worst else None,
            "worst": worst.to_dict() if worst else None,
        }
    return {
        "suite": suite,
        "checks": sum(s["checks"] for s in per_suite.values()),
        "instances": instances,
        "dims": list(dims),
        "seed": seed,
        "tolerance": tol,
        "violations": sum(s["violations"] for s in per_suite.values()),
        "worst_slack": min(s["worst_slack"] for s in per_suite.values() if s["worst_slack"] is not None),
        "suites": per_suite,
    }
