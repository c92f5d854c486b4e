import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concept_forge.concepts import (
    AtomicConceptSet,
    ConceptSpec,
    EnvironmentSystem,
    build_env_matrices,
    check_diversity_one,
    check_diversity_two,
    generate_random_system,
    numerical_rank,
)
from concept_forge.exceptions import DegenerateSystem, RankDeficiency


def make_system(vectors, supports, valuations, sigma2=1.0):
    atoms = AtomicConceptSet(np.asarray(vectors, float))
    return EnvironmentSystem(atoms, tuple(ConceptSpec(S, b, sigma2)
                                          for S, b in zip(supports, valuations)))


class TestTypes:
    def test_too_many_atoms(self):
        with pytest.raises(RankDeficiency):
            AtomicConceptSet(np.ones((3, 2)))

    def test_dependent_atoms(self):
        with pytest.raises(RankDeficiency):
            AtomicConceptSet([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]])

    def test_concept_spec_validation(self):
        with pytest.raises(ValueError):
            ConceptSpec([0, 0], [1.0, 2.0])
        with pytest.raises(ValueError):
            ConceptSpec([0, 1], [1.0])
        with pytest.raises(ValueError):
            ConceptSpec([0], [1.0], noise_variance=0.0)

    def test_every_atom_must_appear(self):
        with pytest.raises(ValueError, match="not filtered"):
            make_system(np.eye(2), [[0]], [[0.0]])

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            make_system(np.eye(2), [[0], [2]], [[0.0], [0.0]])

    def test_arrays_are_immutable(self):
        s = make_system(np.eye(2), [[0], [1]], [[0.0], [0.0]])
        with pytest.raises(ValueError):
            s.atoms.vectors[0, 0] = 5.0


class TestEnvMatrices:
    def test_single_atom_two_envs(self):
        s = make_system([[1.0]], [[0], [0]], [[0.0], [1.0]])
        mats = build_env_matrices(s)
        np.testing.assert_array_equal(mats.M, [[1.0], [1.0]])
        np.testing.assert_array_equal(mats.B, [[0.0], [1.0]])

    def test_two_atoms_three_envs(self):
        s = make_system(np.eye(2), [[0], [1], [0, 1]], [[0.0], [0.0], [0.1, 0.2]], 0.005)
        mats = build_env_matrices(s)
        np.testing.assert_allclose(mats.M, [[200, 0], [0, 200], [200, 200]])
        np.testing.assert_allclose(mats.B[2], [20.0, 40.0])

    def test_zero_valuations_give_zero_B(self):
        s = make_system(np.eye(3), [[0], [1, 2], [0, 2]], [[0.0], [0.0, 0.0], [0.0, 0.0]])
        assert not build_env_matrices(s).B.any()

    def test_support_follows_index_order(self):
        # the k-th valuation belongs to atom atom_indices[k], whatever the order
        s = make_system(np.eye(2), [[1, 0]], [[0.5, -0.25]])
        mats = build_env_matrices(s)
        np.testing.assert_array_equal(mats.B, [[-0.25, 0.5]])


class TestDiversityOne:
    def test_unique_null_direction(self):
        from concept_forge.concepts import EnvMatrices

        rep = check_diversity_one(EnvMatrices(np.array([[1.0], [1.0]]), np.array([[0.0], [1.0]])))
        assert rep.holds
        v = rep.witness_v / np.linalg.norm(rep.witness_v)
        assert abs(abs(v @ np.array([1.0, -1.0]) / np.sqrt(2)) - 1) < 1e-12
        assert abs(abs(v @ np.array([0.0, 1.0])) - 1 / np.sqrt(2)) < 1e-12

    def test_zero_B_fails(self):
        from concept_forge.concepts import EnvMatrices

        M = np.array([[1.0, 0], [0, 1], [1, 1]])
        assert not check_diversity_one(EnvMatrices(M, np.zeros((3, 2)))).holds

    def test_too_few_envs(self):
        from concept_forge.concepts import EnvMatrices

        with pytest.raises(DegenerateSystem):
            check_diversity_one(EnvMatrices(np.eye(2)[:1], np.zeros((1, 2))))

    def test_rank_deficient(self):
        from concept_forge.concepts import EnvMatrices

        M = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        rep = check_diversity_one(EnvMatrices(M, M))
        assert not rep.holds and rep.rank == 1


class TestDiversityTwo:
    def test_singletons(self):
        s = make_system(np.eye(2), [[0], [1]], [[0.0], [0.0]])
        assert check_diversity_two(s).holds

    def test_joint_only(self):
        s = make_system(np.eye(2), [[0, 1]], [[0.0, 0.0]])
        rep = check_diversity_two(s)
        assert not rep.holds
        assert sorted(rep.violating_pairs) == [(0, 1), (1, 0)]

    def test_single_atom_vacuous(self):
        s = make_system([[1.0]], [[0], [0]], [[0.0], [1.0]])
        assert check_diversity_two(s).holds


class TestGenerate:
    def test_small_system_is_diverse(self):
        s = generate_random_system(2, 3, 3, 0.005, rng=0)
        assert check_diversity_one(build_env_matrices(s), rng=0).holds
        assert check_diversity_two(s).holds

    def test_one_dim(self):
        s = generate_random_system(1, 1, 2, rng=1)
        assert s.atoms.vectors.shape == (1, 1) and s.atoms.vectors[0, 0] != 0

    def test_n_above_dz(self):
        with pytest.raises(RankDeficiency):
            generate_random_system(4, 3, 5, rng=0)

    def test_too_few_envs(self):
        with pytest.raises(ValueError):
            generate_random_system(2, 3, 2, rng=0)

    def test_entries_in_range(self):
        s = generate_random_system(3, 5, 6, rng=3)
        assert np.all(np.abs(s.atoms.vectors) <= 0.3)
        assert s.m == 6
        assert [c.noise_variance for c in s.concepts] == [0.005] * 6

    def test_layout(self):
        s = generate_random_system(3, 4, rng=2)
        assert [set(c.atom_indices) for c in s.concepts] == [{0}, {1}, {2}, {0, 1, 2}]

    def test_anchored_valuations(self):
        anchors = np.arange(9, dtype=float).reshape(3, 3) / 10
        s = generate_random_system(2, 3, rng=5, anchors=anchors)
        for e in range(1, 4):
            np.testing.assert_allclose(s.concept(e).valuation, s.concept_matrix(e) @ anchors[e - 1])

    def test_deterministic(self):
        a = generate_random_system(3, 4, rng=11).to_dict()
        b = generate_random_system(3, 4, rng=11).to_dict()
        assert a == b


class TestSerialization:
    def test_round_trip_bit_exact(self):
        s = generate_random_system(3, 4, 5, rng=7)
        text = json.dumps(s.to_dict())
        back = EnvironmentSystem.from_dict(json.loads(text))
        np.testing.assert_array_equal(back.atoms.vectors, s.atoms.vectors)
        for c1, c2 in zip(s.concepts, back.concepts):
            assert c1.atom_indices == c2.atom_indices
            np.testing.assert_array_equal(c1.valuation, c2.valuation)
            assert c1.noise_variance == c2.noise_variance

    def test_keys(self):
        d = generate_random_system(2, 3, rng=0).to_dict()
        assert set(d) == {"n", "d_z", "sigma2", "atoms", "concepts"}
        assert set(d["concepts"][0]) == {"atom_indices", "valuation"}


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 4), extra=st.integers(0, 3), seed=st.integers(0, 10_000))
def test_B_support_inside_M_support(n, extra, seed):
    s = generate_random_system(n, n + 1, n + 1 + extra, rng=seed)
    mats = build_env_matrices(s)
    assert np.all((mats.B != 0) <= (mats.M != 0))
    for e, c in enumerate(s.concepts):
        assert set(np.flatnonzero(mats.M[e])) == set(c.atom_indices)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_witness_satisfies_contract(n, seed):
    s = generate_random_system(n, n + 2, rng=seed)
    mats = build_env_matrices(s)
    rep = check_diversity_one(mats, rng=seed)
    assert rep.holds
    assert np.max(np.abs(rep.witness_v @ mats.M)) <= 1e-6
    assert np.min(np.abs(rep.witness_v @ mats.B)) > 1e-6


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 4), seed=st.integers(0, 10_000), data=st.data())
def test_permutation_equivariance(n, seed, data):
    s = generate_random_system(n, n + 1, n + 2, rng=seed)
    perm = data.draw(st.permutations(range(n)))
    mats = build_env_matrices(s)
    pm = build_env_matrices(s.permuted(perm))
    np.testing.assert_array_equal(pm.M, mats.M[:, perm])
    np.testing.assert_array_equal(pm.B, mats.B[:, perm])


def test_diversity_holds_for_100_seeds():
    for seed in range(100):
        n = 1 + seed % 4
        s = generate_random_system(n, n + seed % 3, rng=seed)
        assert check_diversity_one(build_env_matrices(s), rng=seed).holds, seed
        assert check_diversity_two(s).holds, seed


def test_numerical_rank_tolerance():
    assert numerical_rank(np.diag([1.0, 1e-9])) == 1
    assert numerical_rank(np.diag([1.0, 1e-7])) == 2
    assert numerical_rank(np.zeros((2, 2))) == 0
