import numpy as np
import pytest

from ovclass.errors import ValidationError
from ovclass.synthetic import (ClusterSpec, cluster_vocabulary,
                               gen_cluster_bank, gen_cluster_split)


def test_zero_noise_collapses_to_center():
    spec = ClusterSpec(n_classes=3, dimension=8, per_class=5, noise=0.0, seed=1)
    bank = gen_cluster_bank(spec)
    for cid in bank.classes():
        matrix = bank.embeddings(cid)
        for row in matrix:
            np.testing.assert_array_equal(row, matrix[0])


def test_same_seed_bit_identical_banks():
    spec = ClusterSpec(n_classes=4, dimension=8, per_class=6, noise=0.1, seed=9)
    b1 = gen_cluster_bank(spec)
    b2 = gen_cluster_bank(spec)
    for cid in b1.classes():
        np.testing.assert_array_equal(b1.embeddings(cid), b2.embeddings(cid))


def test_intra_class_similarity_exceeds_inter_class():
    spec = ClusterSpec(n_classes=50, dimension=32, per_class=20, noise=0.05, seed=3)
    bank = gen_cluster_bank(spec)
    centers = {cid: bank.embeddings(cid).mean(axis=0) for cid in bank.classes()}
    intra = []
    for cid in bank.classes():
        c = centers[cid] / np.linalg.norm(centers[cid])
        for row in bank.embeddings(cid):
            intra.append(float(c @ row / np.linalg.norm(row)))
    inter = []
    ids = bank.classes()
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            ca = centers[a] / np.linalg.norm(centers[a])
            cb = centers[b] / np.linalg.norm(centers[b])
            inter.append(float(ca @ cb))
    assert np.mean(inter) < np.mean(intra)


def test_split_shares_centers():
    spec = ClusterSpec(n_classes=3, dimension=16, per_class=4, noise=0.0, seed=5)
    train, queries = gen_cluster_split(spec, n_query=2)
    for cid in train.classes():
        np.testing.assert_array_equal(train.embeddings(cid)[0],
                                      queries.embeddings(cid)[0])


def test_embeddings_are_unit_norm():
    spec = ClusterSpec(n_classes=5, dimension=8, per_class=4, noise=0.2, seed=2)
    bank = gen_cluster_bank(spec)
    for cid in bank.classes():
        np.testing.assert_allclose(np.linalg.norm(bank.embeddings(cid), axis=1),
                                   1.0, atol=1e-6)


def test_dimension_below_two_rejected():
    with pytest.raises(ValidationError):
        ClusterSpec(n_classes=2, dimension=1, per_class=3, noise=0.1, seed=0)


def test_vocabulary_covers_all_classes():
    spec = ClusterSpec(n_classes=10, dimension=8, per_class=2, noise=0.1, seed=0)
    vocab = cluster_vocabulary(spec)
    bank = gen_cluster_bank(spec)
    assert {e.id for e in vocab} == set(bank.classes())
    assert {e.bucket for e in vocab} == {"rare", "common", "frequent"}
