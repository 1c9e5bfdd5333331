import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_two_way_spread, pspi_formula
from painvit import data as D
from painvit.errors import ConfigError, ContractError, ValidationError
from painvit.pnm import write_image

AU_DOMAIN = [range(6)] * 5 + [range(2)]


# -- PSPI ----------------------------------------------------------------------------
def test_pspi_examples():
    assert D.pspi_score(D.AUVector()) == 0
    assert D.pspi_score(D.AUVector(5, 5, 4, 5, 3, 1)) == 16
    assert D.pspi_score(D.AUVector(4, 3, 5, 1, 0, 1)) == 11
    assert D.pspi_score({"au4": 2, "au10": 3}) == 5


def test_pspi_rejects_out_of_range():
    for bad in ({"au6": 7}, {"au43": 2}, {"au4": -1}):
        with pytest.raises(ValidationError):
            D.AUVector(**bad)


def test_pspi_exhaustive_and_binarize():
    combos = np.array(list(itertools.product(*AU_DOMAIN)))
    assert len(combos) == 15552
    vectorised = D.pspi_array(combos)
    for row, v in zip(combos, vectorised):
        expected = pspi_formula(*row)
        assert D.pspi_score(tuple(row)) == expected == v
        assert (D.binarize(expected) == 0) == (not row.any())
    assert vectorised.min() == 0 and vectorised.max() == 16


def test_binarize_examples():
    assert [D.binarize(p) for p in (0, 1, 16)] == [0, 1, 1]
    with pytest.raises(ValidationError):
        D.binarize(17)


# -- folds ---------------------------------------------------------------------------
def test_twenty_five_subjects_make_five_by_five():
    rng = np.random.default_rng(0)
    subjects = [(f"S{i:02d}", int(c)) for i, c in enumerate(rng.integers(0, 400, 25))]
    folds = D.make_folds(subjects, 5, seed=1)
    groups = folds.folds()
    assert [len(g) for g in groups] == [5] * 5
    assert sorted(itertools.chain(*groups)) == sorted(s for s, _ in subjects)


def test_forced_one_subject_per_fold():
    folds = D.make_folds([("a", 10), ("b", 8), ("c", 6), ("d", 4), ("e", 2)], k=5)
    assert sorted(len(g) for g in folds.folds()) == [1] * 5


def test_too_few_subjects():
    with pytest.raises(ConfigError):
        D.make_folds([("a", 1), ("b", 2)], k=5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 300), min_size=10, max_size=10), st.integers(0, 1000))
def test_two_fold_spread_near_optimal(counts, seed):
    subjects = [(f"S{i}", c) for i, c in enumerate(counts)]
    folds = D.make_folds(subjects, k=2, seed=seed)
    lookup = dict(subjects)
    totals = [sum(lookup[s] for s in g) for g in folds.folds()]
    assert [len(g) for g in folds.folds()] == [5, 5]
    assert abs(totals[0] - totals[1]) <= 1.5 * best_two_way_spread(counts)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 23), st.integers(0, 100))
def test_folds_partition_subjects(n, seed):
    rng = np.random.default_rng(seed)
    subjects = [(f"S{i}", int(c)) for i, c in enumerate(rng.integers(0, 50, n))]
    folds = D.make_folds(subjects, 5, seed)
    sizes = [len(g) for g in folds.folds()]
    assert set(sizes) <= {n // 5, -(-n // 5)}
    assert sorted(itertools.chain(*folds.folds())) == sorted(s for s, _ in subjects)
    for f in range(5):
        assert not set(folds.test_subjects(f)) & set(folds.train_subjects(f))


def test_folds_deterministic_and_json_round_trip():
    subjects = [(f"S{i}", i * 3 % 7) for i in range(12)]
    a, b = D.make_folds(subjects, 5, 4), D.make_folds(subjects, 5, 4)
    assert a.mapping == b.mapping
    assert D.FoldAssignment.from_json(a.to_json()).mapping == a.mapping


# -- oversampling ----------------------------------------------------------------------
def test_oversample_examples():
    idx = np.arange(100, 110)
    labels = np.array([0] * 8 + [1] * 2)
    out = D.oversample(idx, labels, seed=3)
    lookup = dict(zip(idx, labels))
    assert len(out) == 16
    assert sum(lookup[i] for i in out) == 8
    assert set(i for i in out if lookup[i] == 1) <= {108, 109}
    assert np.array_equal(out, D.oversample(idx, labels, seed=3))

    balanced = D.oversample(np.arange(10), np.array([0, 1] * 5), seed=0)
    assert sorted(balanced) == list(range(10))


def test_oversample_single_class():
    with pytest.raises(ConfigError):
        D.oversample(np.arange(4), np.zeros(4), 0)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=40).filter(lambda v: 0 < sum(v) < len(v)),
       st.integers(0, 100))
def test_oversample_balances(labels, seed):
    labels = np.array(labels)
    idx = np.arange(len(labels)) * 3
    out = D.oversample(idx, labels, seed)
    lab = labels[out // 3]
    assert (lab == 1).sum() == (lab == 0).sum()
    assert set(out) <= set(idx) and set(idx) <= set(out)


# -- grids -------------------------------------------------------------------------
def frames(labels, video="V0", subject="S0", size=8):
    rng = np.random.default_rng(len(labels))
    out = []
    for i, lab in enumerate(labels):
        au = D.AUVector(au4=lab)
        out.append(D.Sample(subject, video, i, rng.random((1, size, size)), au, D.pspi_score(au), D.binarize(lab)))
    return out


def test_grid_examples():
    grids = D.make_grids(frames([0, 0, 0, 1, 0, 0, 0, 0]), stride=4)
    assert [g.label for g in grids] == [1, 0]
    assert [g.frame_indices for g in grids] == [(0, 1, 2, 3), (4, 5, 6, 7)]
    assert [g.label for g in D.make_grids(frames([0, 0, 0, 1]))] == [1]
    assert D.make_grids(frames([1, 1, 1])) == []


def test_grid_layout_matches_area_average():
    fs = frames([0, 1, 2, 3])
    g = D.make_grids(fs)[0].image
    assert g.shape == (1, 8, 8)
    for k, (r, c) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        img = fs[k].image[0]
        for y in range(4):
            for x in range(4):
                avg = img[2 * y:2 * y + 2, 2 * x:2 * x + 2].mean()
                assert g[0, 4 * r + y, 4 * c + x] == pytest.approx(avg, abs=1e-15)


@given(st.integers(0, 30), st.integers(1, 6))
def test_grid_count_formula(length, stride):
    grids = D.make_grids(frames([0] * length), stride)
    assert len(grids) == max(0, (length - 4) // stride + 1)
    for g in grids:
        a, b, c, d = g.frame_indices
        assert (b - a, c - b, d - c) == (1, 1, 1)


def test_grids_never_cross_videos():
    corpus = D.gen_synthetic(num_subjects=2, frames_per_video=10, videos_per_subject=2, seed=0)
    grids = D.grid_corpus(corpus, stride=4)
    assert grids.is_grid and len(grids) == 2 * 2 * 2
    with pytest.raises(ContractError):
        D.make_grids(frames([0] * 4, "V0") + frames([0] * 4, "V1"))


# -- mixup -------------------------------------------------------------------------
def test_paper_mixup_label():
    lam = 0.8
    _, y = D.blend(np.zeros(1), np.ones(1), [1, 0], [0, 1], lam)
    # 1 - 0.8 is exact in binary64 but sits two ulps below the double 0.2, so the
    # label is compared bitwise to [lam, 1 - lam] and to [0.8, 0.2] up to that gap
    assert y[0] == lam and y[1] == 1.0 - lam
    assert y.sum() == 1.0
    assert abs(y[1] - 0.2) <= 2 * np.spacing(0.2)


def test_lambda_one_is_identity():
    x, y = D.blend(np.full(4, 0.3), np.full(4, 0.9), [1, 0], [0, 1], 1.0)
    assert np.array_equal(x, np.full(4, 0.3)) and np.array_equal(y, [1.0, 0.0])


def test_mixup_alpha_must_be_positive():
    with pytest.raises(ConfigError):
        D.mixup(np.zeros((2, 1, 2, 2)), [0, 1], ["a", "a"], alpha=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 2.0), st.booleans())
def test_mixup_pixels_and_labels(seed, alpha, same_subject):
    rng = np.random.default_rng(seed)
    n = 20
    x = rng.random((n, 1, 4, 4))
    labels = rng.integers(0, 2, n)
    subjects = rng.choice(["a", "b", "c"], n)
    mixed_x, mixed_y, plan = D.mixup(x, labels, subjects, alpha, 0.2, same_subject, seed)
    assert len(plan.mixed) <= round(0.2 * n)
    assert np.allclose(mixed_y.sum(1), 1.0)
    for i in range(n):
        j, lam = plan.partner[i], plan.lam[i]
        if j < 0:
            assert np.array_equal(mixed_x[i], x[i])
            continue
        assert labels[j] != labels[i]
        if same_subject:
            assert subjects[j] == subjects[i]
        for idx in np.ndindex(x.shape[1:]):
            assert mixed_x[i][idx] == pytest.approx(lam * x[i][idx] + (1 - lam) * x[j][idx], abs=1e-15)
        assert mixed_y[i][labels[i]] == pytest.approx(lam)


def test_mixup_without_partner_leaves_sample():
    x = np.random.default_rng(0).random((4, 1, 2, 2))
    mixed_x, _, plan = D.mixup(x, [0, 0, 1, 1], ["a", "a", "b", "b"], 0.4, fraction=1.0, same_subject=True)
    assert len(plan.mixed) == 0
    assert np.array_equal(mixed_x, x)


# -- synthetic corpus ---------------------------------------------------------------------
def test_synthetic_is_deterministic():
    a = D.gen_synthetic(num_subjects=3, frames_per_video=12, videos_per_subject=2, seed=5)
    b = D.gen_synthetic(num_subjects=3, frames_per_video=12, videos_per_subject=2, seed=5)
    c = D.gen_synthetic(num_subjects=3, frames_per_video=12, videos_per_subject=2, seed=6)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.aus, b.aus)
    assert not np.array_equal(a.images, c.images)
    assert a.images.shape == (72, 1, 32, 32)
    assert a.images.min() >= 0 and a.images.max() <= 1


def test_synthetic_default_prevalence():
    values = [D.gen_synthetic(seed=s).prevalence() for s in range(8)]
    assert all(0.15 <= v <= 0.25 for v in values)
    assert 0.15 <= np.mean(values) <= 0.25


def test_no_signal_means_labels_do_not_touch_pixels():
    kw = dict(num_subjects=2, frames_per_video=30, videos_per_subject=2, seed=11)
    null = D.gen_synthetic(signal_strength=0.0, **kw)
    strong = D.gen_synthetic(signal_strength=1.0, **kw)
    assert null.labels.sum() > 0
    assert np.array_equal(null.aus, strong.aus)
    # the planted brightness is the only label-dependent term, and it is zero
    masks = D.region_masks(32)
    assert np.all(D.au_brightness(null.aus, masks, 0.0) == 0)
    assert np.any(strong.images != null.images)
    unplanted = ~np.any(np.stack(list(masks.values())), axis=0)
    assert np.array_equal(null.images[:, :, unplanted], strong.images[:, :, unplanted])


def test_au_patch_mask_covers_central_patches():
    mask = D.au_patch_mask(32, 8)
    assert mask.sum() == 4
    assert mask[1:3, 1:3].all()


def test_three_channel_synthetic():
    c = D.gen_synthetic(num_subjects=1, frames_per_video=4, videos_per_subject=1, channels=3, image_size=64)
    assert c.images.shape == (4, 3, 64, 64)


# -- manifests -------------------------------------------------------------------------
def test_manifest_round_trip(tmp_path):
    corpus = D.gen_synthetic(num_subjects=2, frames_per_video=5, videos_per_subject=2, seed=2)
    path = D.export_manifest(corpus, tmp_path)
    back = D.load_manifest(path)
    assert np.array_equal(back.aus, corpus.aus)
    assert np.array_equal(back.labels, corpus.labels)
    assert back.subject_ids.tolist() == corpus.subject_ids.tolist()
    assert np.abs(back.images - corpus.images).max() <= 0.5 / 255 + 1e-12


def write_manifest(tmp_path, rows, with_pspi=True):
    write_image(tmp_path / "a.pgm", np.full((1, 4, 4), 0.5))
    header = "subject_id,video_id,frame_index,image_path,au4,au6,au7,au9,au10,au43" + (",pspi" if with_pspi else "")
    (tmp_path / "m.csv").write_text(header + "\n" + "\n".join(rows) + "\n")
    return tmp_path / "m.csv"


def test_manifest_accepts_zero_row(tmp_path):
    c = D.load_manifest(write_manifest(tmp_path, ["S1,V1,0,a.pgm,0,0,0,0,0,0,0"]))
    assert c.labels.tolist() == [0]


def test_manifest_range_error_names_row(tmp_path):
    with pytest.raises(ValidationError, match="row 3.*au6"):
        D.load_manifest(write_manifest(tmp_path, ["S1,V1,0,a.pgm,0,0,0,0,0,0,0", "S1,V1,1,a.pgm,0,7,0,0,0,0,7"]))


def test_manifest_pspi_mismatch(tmp_path):
    with pytest.raises(ValidationError, match="mismatch.*S1/V1/4"):
        D.load_manifest(write_manifest(tmp_path, ["S1,V1,4,a.pgm,1,2,0,0,0,0,2"]))


def test_manifest_frame_order(tmp_path):
    with pytest.raises(ValidationError, match="strictly increasing"):
        D.load_manifest(write_manifest(tmp_path, ["S1,V1,3,a.pgm,0,0,0,0,0,0", "S1,V1,2,a.pgm,0,0,0,0,0,0"],
                                       with_pspi=False))


def test_manifest_malformed_row(tmp_path):
    with pytest.raises(ValidationError, match="row 2"):
        D.load_manifest(write_manifest(tmp_path, ["S1,V1,x,a.pgm,0,0,0,0,0,0,0"]))
    with pytest.raises(ValidationError, match="row 2"):
        D.load_manifest(write_manifest(tmp_path, ["S1,V1,0,a.pgm,0,0"]))


def test_manifest_missing_image_is_io_error(tmp_path):
    path = write_manifest(tmp_path, ["S1,V1,0,missing.pgm,0,0,0,0,0,0,0"])
    with pytest.raises(OSError):
        D.load_manifest(path)
