import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concept_forge.concepts import (AtomicConceptSet, ConceptSpec, EnvironmentSystem,
                                    build_env_matrices, generate_random_system)
from concept_forge.exceptions import NotQuadratic, SignAmbiguity, SubsetBudget
from concept_forge.structure import (QuadraticForm, argmin_affine, argmin_set, compare_to_truth,
                                     fit_quadratic, identify, normalize_column,
                                     normalized_truth, oracle_forms, recover_incidence,
                                     recover_valuations, signature_counts,
                                     subset_concept_count, valuation_gap_sq)


def system(supports, valuations, d_z=None, sigma2=0.005, seed=0):
    n = 1 + max(i for S in supports for i in S)
    d_z = d_z or n
    atoms = np.random.default_rng(seed).uniform(-0.3, 0.3, (n, d_z))
    return EnvironmentSystem(AtomicConceptSet(atoms), tuple(
        ConceptSpec(S, b, sigma2) for S, b in zip(supports, valuations)))


def true_union_sizes(s, T):
    return len(set().union(*[s.supports()[e] for e in T])) if T else 0


class TestFitQuadratic:
    def test_square(self):
        q = fit_quadratic(lambda z: z[0] ** 2, 2, rng=0)
        np.testing.assert_allclose(q.H, [[2, 0], [0, 0]], atol=1e-10)
        np.testing.assert_allclose(q.c, 0, atol=1e-10)

    def test_cubic_rejected(self):
        with pytest.raises(NotQuadratic):
            fit_quadratic(lambda z: z[0] ** 3, 2, rng=0)

    def test_matches_hessian_formula(self):
        s = generate_random_system(3, 4, rng=1)
        mats = build_env_matrices(s)
        for e, q in enumerate(oracle_forms(s, 0), start=1):
            H = sum(mats.M[e - 1, i] * np.outer(a, a) for i, a in enumerate(s.atoms.vectors))
            assert np.max(np.abs(q.H - H)) < 1e-8

    def test_symmetric_required(self):
        with pytest.raises(ValueError):
            QuadraticForm(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 5))
    def test_exact_on_quadratics(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((d, d))
        H = A + A.T
        c = rng.standard_normal(d)
        q = fit_quadratic(QuadraticForm(H, c, 1.5), d, rng=seed)
        assert np.max(np.abs(q.H - H)) < 1e-10
        assert np.max(np.abs(q.c - c)) < 1e-10


class TestSubsetCounts:
    def test_two_singletons(self):
        s = system([[0], [1]], [[0.1], [0.2]])
        forms = oracle_forms(s, 0)
        assert subset_concept_count(forms, [0, 1]) == 2
        assert subset_concept_count(forms, []) == 0

    def test_all_subsets_match_union_sizes(self):
        s = generate_random_system(3, 4, 4, rng=2)
        forms = oracle_forms(s, 0)
        for r in range(5):
            for T in itertools.combinations(range(4), r):
                assert subset_concept_count(forms, T) == true_union_sizes(s, T)

    def test_subset_budget(self):
        forms = [QuadraticForm(np.eye(1), np.zeros(1))] * 17
        with pytest.raises(SubsetBudget):
            signature_counts(forms)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_subset_count_monotone(seed, data):
    s = generate_random_system(3, 4, 5, rng=seed)
    forms = oracle_forms(s, seed)
    T2 = data.draw(st.sets(st.integers(0, 4)))
    T1 = data.draw(st.sets(st.sampled_from(sorted(T2)))) if T2 else set()
    assert subset_concept_count(forms, T1) <= subset_concept_count(forms, T2)


class TestIncidence:
    def test_two_atoms_joint(self):
        s = system([[0], [1], [0, 1]], [[0.1], [0.2], [0.0, 0.3]])
        inc = recover_incidence(oracle_forms(s, 0)).incidence
        cols = {tuple(c) for c in inc.T}
        assert cols == {(1, 0, 1), (0, 1, 1)}
        # canonical order: signature read with environment 1 as the leading bit, descending
        np.testing.assert_array_equal(inc, [[1, 0], [0, 1], [1, 1]])

    def test_single_environment_block(self):
        s = system([[0, 1, 2]], [[0.1, 0.2, 0.3]])
        res = recover_incidence(oracle_forms(s, 0))
        np.testing.assert_array_equal(res.incidence, np.ones((1, 3), dtype=int))
        assert res.non_separable == [1]

    def test_merged_signature_flagged(self):
        s = system([[0, 1], [0, 1], [2]], [[0.1, 0.2], [0.0, -0.1], [0.2]])
        res = recover_incidence(oracle_forms(s, 0))
        assert res.non_separable == [0b011]
        assert sorted(res.signatures) == [0b011, 0b011, 0b100]
        rec = identify(oracle_forms(s, 0))
        assert rec.B_hat is None


class TestValuations:
    def test_gap_identity(self):
        s = system([[0], [0], [1]], [[0.1], [-0.05], [0.2]], d_z=3)
        forms = oracle_forms(s, 0)
        mats = build_env_matrices(s)
        std = mats.B[:, 0] / np.sqrt(mats.M[:, 0].clip(min=1e-300))
        gap = valuation_gap_sq(forms, [2], 0, 1, 3)
        assert gap == pytest.approx((std[0] - std[1]) ** 2 / 2, rel=1e-9)

    def test_equal_valuations_give_zero_column(self):
        s = system([[0], [0, 1], [1]], [[0.1], [0.1, 0.0], [0.2]])
        rec = identify(oracle_forms(s, 0))
        j = [k for k in range(2) if list(rec.M_hat[:, k]) == [1, 1, 0]][0]
        assert np.max(np.abs(rec.B_hat[:, j])) < 1e-6

    def test_single_support_centres_to_zero(self):
        col = normalize_column(np.array([0.0, 5.0]), [1])
        np.testing.assert_array_equal(col, [0.0, 0.0])

    def test_empty_support(self):
        forms = [QuadraticForm(np.eye(2), np.zeros(2))]
        with pytest.raises(SignAmbiguity):
            recover_valuations(forms, np.array([[0]]))

    def test_normalization_convention(self):
        col = normalize_column(np.array([3.0, 1.0, 0.0, 2.0]), [0, 1, 3])
        np.testing.assert_allclose(col, [1.0, -1.0, 0.0, 0.0])
        col = normalize_column(np.array([1.0, 3.0, 0.0, 2.0]), [0, 1, 3])
        np.testing.assert_allclose(col, [1.0, -1.0, 0.0, 0.0])

    def test_argmin_of_positive_definite(self):
        H = np.array([[2.0, 0.5], [0.5, 1.0]])
        c = np.array([1.0, -1.0])
        q = QuadraticForm(H, c)
        z, basis, val = argmin_affine(q, np.zeros(2), np.eye(2))
        np.testing.assert_allclose(z, -np.linalg.solve(H, c), atol=1e-12)
        assert basis.shape == (2, 0) and val == pytest.approx(q(z))

    def test_argmin_set_dimension(self):
        s = generate_random_system(2, 4, rng=0)
        forms = oracle_forms(s, 0)
        _, basis = argmin_set(forms, [0], 4)
        assert basis.shape[1] == 3


def test_recovered_structure_invariants():
    s = generate_random_system(3, 4, 6, rng=5)
    rec = identify(oracle_forms(s, 5))
    assert np.all((np.abs(rec.B_hat) > 1e-12) <= (rec.M_hat == 1))
    for j in range(rec.M_hat.shape[1]):
        support = rec.M_hat[:, j] == 1
        assert abs(rec.B_hat[support, j].mean()) < 1e-9


def test_end_to_end_identification_on_25_systems():
    for seed in range(25):
        n = 1 + seed % 3
        s = generate_random_system(n, n + seed % 2, rng=seed)
        report = compare_to_truth(s, identify(oracle_forms(s, seed)))
        assert report["incidence_match"], seed
        assert report["max_valuation_error"] < 1e-6, seed


def test_normalized_truth_units():
    s = system([[0], [0]], [[0.2], [0.0]], sigma2=0.01)
    # standardised units b / sigma: (2, 0) centred -> (1, -1)
    np.testing.assert_allclose(normalized_truth(s)[:, 0], [1.0, -1.0])
