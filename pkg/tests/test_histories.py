import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from histmerge import fixture_path
from histmerge.core import DensityMatrix, ProjectorDecomposition, evolve_unitary
from histmerge.errors import CapacityError, SchemaError, SelectorError, ValidationError, ZeroBranchError
from histmerge.histories import (
    EventSlot,
    HistoryFamily,
    chain_operator,
    check_consistency,
    conditional_state_direct,
    conditional_state_step,
    decoherence_functional,
    enumerate_selectors,
    family_from_json,
    family_to_json,
    heisenberg_projector,
    history_probability,
    load_family,
)
from histmerge.verifiers import conditional_agreement
from histmerge.worldsim import random_family

from conftest import KET0, KET1, MINUS, PAULI_X, PLUS, x_basis, z_basis


def z_then_x(rho0, h=None):
    h = np.zeros((2, 2)) if h is None else h
    return HistoryFamily(rho0, h, [EventSlot(1.0, z_basis()), EventSlot(2.0, x_basis())])


class TestHeisenbergProjector:
    def test_time_zero(self):
        assert_allclose(heisenberg_projector(KET0, PAULI_X, 0.0), KET0)

    def test_no_dynamics(self):
        assert_allclose(heisenberg_projector(PLUS, np.zeros((2, 2)), 3.3), PLUS)

    def test_pauli_x_flip(self):
        # U = -iX, so U^dagger |0><0| U = X |0><0| X = |1><1|
        assert np.max(np.abs(heisenberg_projector(KET0, PAULI_X, math.pi / 2) - KET1)) <= 1e-9

    def test_rejects_non_projector(self):
        with pytest.raises(ValidationError):
            heisenberg_projector(2 * KET0, PAULI_X, 1.0)


class TestChainOperator:
    def test_empty_selector(self):
        fam = z_then_x(KET0)
        assert_allclose(chain_operator(fam, ()), np.eye(2))

    def test_single_slot_at_zero(self):
        fam = HistoryFamily(KET0, PAULI_X, [EventSlot(0.0, x_basis())])
        assert_allclose(chain_operator(fam, (1,)), MINUS, atol=1e-15)

    def test_z_then_x_products(self):
        fam = z_then_x(KET0)
        # |a><a|b><b| = <a|b> |a><b|, worked by hand
        expected = {
            (0, 0): np.array([[0.5, 0.5], [0, 0]]),
            (0, 1): np.array([[0.5, -0.5], [0, 0]]),
            (1, 0): np.array([[0, 0], [0.5, 0.5]]),
            (1, 1): np.array([[0, 0], [-0.5, 0.5]]),
        }
        for sel, m in expected.items():
            assert_allclose(chain_operator(fam, sel), m, atol=1e-15)

    def test_out_of_range(self):
        with pytest.raises(SelectorError):
            chain_operator(z_then_x(KET0), (0, 2))
        with pytest.raises(SelectorError):
            chain_operator(z_then_x(KET0), (0, 0, 0))
        with pytest.raises(SelectorError):
            chain_operator(z_then_x(KET0), (None, 0))


class TestProbabilities:
    def test_trivial_slot(self):
        fam = HistoryFamily(np.eye(2) / 2, PAULI_X, [EventSlot(1.0, ProjectorDecomposition.identity(2))])
        assert history_probability(fam, (0,)) == pytest.approx(1.0)

    def test_diagonal_state(self):
        fam = HistoryFamily(np.diag([0.3, 0.7]), np.zeros((2, 2)), [EventSlot(1.0, z_basis())])
        assert history_probability(fam, (0,)) == pytest.approx(0.3)

    def test_z_then_x_table(self):
        fam = z_then_x(KET0)
        table = {s: history_probability(fam, s) for s in enumerate_selectors(fam)}
        assert table[(0, 0)] == pytest.approx(0.5) and table[(0, 1)] == pytest.approx(0.5)
        assert table[(1, 0)] == 0.0 and table[(1, 1)] == 0.0
        assert sum(table.values()) == pytest.approx(1.0, abs=1e-12)


class TestConditionalStates:
    def test_identity_slot_gives_initial_state(self, rng):
        rho0 = np.diag([0.2, 0.8])
        fam = HistoryFamily(rho0, PAULI_X, [EventSlot(0.7, ProjectorDecomposition.identity(2))])
        # Heisenberg picture: the state itself does not move; its Schrodinger
        # image at t is U rho0 U^dagger
        rho = conditional_state_direct(fam, (0,)).matrix
        assert_allclose(rho, rho0, atol=1e-14)
        u = evolve_unitary(PAULI_X, 0.7)
        assert_allclose(u @ rho @ u.conj().T, u @ rho0 @ u.conj().T, atol=1e-14)

    def test_rank_one_outcome(self):
        fam = HistoryFamily(np.eye(2) / 2, np.zeros((2, 2)), [EventSlot(1.0, x_basis())])
        assert_allclose(conditional_state_direct(fam, (1,)).matrix, MINUS, atol=1e-15)

    def test_z_then_x(self):
        fam = z_then_x(KET0)
        assert_allclose(conditional_state_direct(fam, (0, 0)).matrix, PLUS, atol=1e-15)

    def test_zero_branch(self):
        with pytest.raises(ZeroBranchError):
            conditional_state_direct(z_then_x(KET0), (1, 0))

    def test_step_identity(self, rng):
        prev = DensityMatrix(np.diag([0.4, 0.6]))
        rho, n = conditional_state_step(prev, np.eye(2))
        assert n == pytest.approx(1.0)
        assert_allclose(rho.matrix, prev.matrix)

    def test_step_projection(self):
        rho, n = conditional_state_step(np.eye(2) / 2, KET0)
        assert n == pytest.approx(0.5)
        assert_allclose(rho.matrix, KET0)

    def test_step_zero(self):
        with pytest.raises(ZeroBranchError):
            conditional_state_step(KET0, KET1)

    def test_direct_equals_recursive_dim4(self):
        fam = random_family(4, 3, 11, max_outcomes=3)
        worst_state, worst_prob = conditional_agreement(fam)
        assert worst_state <= 1e-10 and worst_prob <= 1e-10


class TestDecoherence:
    def test_common_eigenbasis_is_diagonal(self):
        fam = HistoryFamily(np.diag([0.5, 0.3, 0.2]), np.diag([0, 1.0, 2.0]),
                            [EventSlot(1.0, ProjectorDecomposition.computational(3))])
        d = decoherence_functional(fam).entries
        assert_allclose(d, np.diag([0.5, 0.3, 0.2]), atol=1e-15)

    def test_diagonal_matches_probabilities(self):
        fam = random_family(3, 3, 5, max_outcomes=2)
        dm = decoherence_functional(fam)
        for k, sel in enumerate(dm.selectors):
            assert abs(dm.entries[k, k] - history_probability(fam, sel)) <= 1e-12

    def test_double_slit_off_diagonal(self):
        fam = z_then_x(PLUS)
        dm = decoherence_functional(fam)
        # D(a, b) = <a_b|x_b><a_a|x_a> <a_b|rho0|a_a> <x_a|x_b>, by hand:
        assert dm[(0, 0), (1, 0)] == pytest.approx(0.25, abs=1e-15)
        assert dm[(0, 1), (1, 1)] == pytest.approx(-0.25, abs=1e-15)
        assert dm[(0, 0), (1, 1)] == pytest.approx(0.0, abs=1e-15)
        assert_allclose(dm.probabilities, [0.25] * 4, atol=1e-15)

    def test_cap(self):
        fam = random_family(4, 3, 2, max_outcomes=4)
        with pytest.raises(CapacityError):
            decoherence_functional(fam, cap=2)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), dim=st.integers(2, 5), slots=st.integers(1, 3))
    def test_hermitian(self, seed, dim, slots):
        d = decoherence_functional(random_family(dim, slots, seed, max_outcomes=3)).entries
        assert np.max(np.abs(d - d.conj().T)) <= 1e-12
        assert np.all(d.diagonal().real >= -1e-15)
        assert d.diagonal().real.sum() <= 1 + 1e-9


class TestConsistency:
    def test_commuting_family(self):
        fam = load_family(fixture_path("consistent_fixture.json"))
        report = check_consistency(fam, "medium", 1e-12)
        assert report.consistent and report.worst_residual <= 1e-12

    def test_double_slit_inconsistent(self):
        report = check_consistency(z_then_x(PLUS), "medium", 1e-12)
        assert not report.consistent
        assert report.worst_residual == pytest.approx(0.25, abs=1e-10)

    def test_weak_mode_uses_real_part(self):
        # a purely imaginary interference term passes weak but fails medium
        y_plus = np.array([1, 1j]) / math.sqrt(2)
        rho0 = np.outer(y_plus, y_plus.conj())
        fam = HistoryFamily(rho0, np.zeros((2, 2)),
                            [EventSlot(1.0, z_basis()), EventSlot(2.0, x_basis())])
        assert check_consistency(fam, "weak", 1e-12).consistent
        assert not check_consistency(fam, "medium", 1e-12).consistent

    @pytest.mark.parametrize("seed", range(5))
    def test_single_slot_always_consistent(self, seed):
        fam = random_family(5, 1, seed)
        assert check_consistency(fam, "medium", 1e-12).consistent

    def test_additivity_under_coarse_graining(self):
        fam = load_family(fixture_path("consistent_fixture.json"))
        assert check_consistency(fam, "medium", 1e-10).consistent
        coarse = HistoryFamily(fam.initial_state, fam.hamiltonian, [fam.slots[0], fam.slots[2]])
        for a in range(2):
            for c in range(2):
                summed = sum(history_probability(fam, (a, b, c)) for b in range(3))
                assert abs(summed - history_probability(coarse, (a, c))) <= 10 * 1e-10

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            check_consistency(z_then_x(PLUS), "strong")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(2, 8), slots=st.integers(1, 4))
def test_completeness_and_chain_rule(seed, dim, slots):
    fam = random_family(dim, slots, seed, max_outcomes=3)
    total = sum(history_probability(fam, s) for s in enumerate_selectors(fam))
    assert abs(total - 1.0) <= 1e-9
    worst_state, worst_prob = conditional_agreement(fam)
    assert worst_state <= 1e-10
    assert worst_prob <= 1e-10


class TestFamilyStructure:
    def test_times_must_increase(self):
        with pytest.raises(ValidationError):
            HistoryFamily(KET0, np.zeros((2, 2)), [EventSlot(2.0, z_basis()), EventSlot(1.0, x_basis())])

    def test_negative_time(self):
        with pytest.raises(ValidationError):
            HistoryFamily(KET0, np.zeros((2, 2)), [EventSlot(-1.0, z_basis())])

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            HistoryFamily(KET0, np.zeros((3, 3)))

    def test_immutable(self):
        fam = z_then_x(KET0)
        with pytest.raises(AttributeError):
            fam.slots = ()


class TestFamilyJson:
    def test_round_trip(self):
        fam = random_family(3, 2, 9)
        again = family_from_json(json.loads(json.dumps(family_to_json(fam))))
        for sel in enumerate_selectors(fam):
            assert history_probability(again, sel) == pytest.approx(history_probability(fam, sel))

    def test_fixtures_load(self):
        assert load_family(fixture_path("double_slit.json")).num_slots == 2
        assert load_family(fixture_path("consistent_fixture.json")).dim == 3

    def test_missing_field(self):
        obj = family_to_json(z_then_x(KET0))
        del obj["slots"][1]["time"]
        with pytest.raises(SchemaError) as info:
            family_from_json(obj)
        assert info.value.field == "slots[1].time"

    def test_bad_projectors(self):
        obj = family_to_json(z_then_x(KET0))
        obj["slots"][0]["projectors"] = obj["slots"][0]["projectors"][:1]
        with pytest.raises(SchemaError) as info:
            family_from_json(obj)
        assert info.value.field == "slots[0].projectors"

    def test_bad_state(self):
        obj = family_to_json(z_then_x(KET0))
        obj["initial_state"]["re"] = [[0.6, 0], [0, 0.6]]
        with pytest.raises(SchemaError) as info:
            family_from_json(obj)
        assert info.value.field == "initial_state"
