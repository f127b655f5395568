import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from algrnet import data, geometry, synth
from algrnet.config import SynthConfig
from algrnet.errors import InputError, ManifestError, MissingFileError


# ---- H-B mapping ----

@pytest.mark.parametrize("hb,grade", [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (6, 3)])
def test_hb_mapping(hb, grade):
    assert data.palsy_grade_from_hb(hb) == grade
    assert data.GRADE_NAMES[grade] == {1: "normal", 2: "low", 3: "medium", 4: "medium",
                                       5: "high", 6: "high"}[hb]


@pytest.mark.parametrize("hb", [0, 7, 2.5, True])
def test_hb_out_of_range(hb):
    with pytest.raises(InputError):
        data.palsy_grade_from_hb(hb)


def test_sample_validation():
    with pytest.raises(InputError):
        data.FaceSample("x.png", "", np.zeros((49, 2)), labels=np.zeros(12))
    with pytest.raises(InputError):
        data.FaceSample("x.png", "s", np.zeros((49, 2)), labels=np.array([0, 2]))
    with pytest.raises(InputError):
        data.FaceSample("x.png", "s", np.full((49, 2), np.nan), labels=np.zeros(2))


# ---- manifest ----

def small_dataset(tmp_path, mode="au", n=10):
    cfg = SynthConfig(mode=mode, rules="palsy" if mode == "palsy" else "bp4d", subjects=5,
                      samples_per_subject=2, image_size=40)
    samples = synth.synth_generate(cfg)[:n]
    names = geometry.load_rule_table(cfg.rules).names
    return samples, synth.write_dataset(samples, tmp_path, names), names


@pytest.mark.parametrize("mode", ["au", "palsy"])
def test_manifest_round_trip(tmp_path, mode):
    samples, manifest, names = small_dataset(tmp_path, mode)
    loaded = data.load_manifest(manifest)
    assert len(loaded) == 10
    for a, b in zip(samples, loaded):
        assert a.subject_id == b.subject_id and a.mode == b.mode
        np.testing.assert_array_equal(a.landmarks, b.landmarks)
        if mode == "au":
            np.testing.assert_array_equal(a.labels, b.labels)
        else:
            assert a.hb == b.hb
        np.testing.assert_array_equal(a.pixels(), b.pixels(manifest.parent))
    if mode == "au":
        assert data.manifest_label_names(manifest) == names
    # write -> read -> write reproduces the file byte for byte
    again = tmp_path / "again.csv"
    data.write_manifest(again, loaded, names)
    assert again.read_text() == manifest.read_text()


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("")
    assert data.load_manifest(p) == []


def corrupt(manifest, row, col, value):
    lines = manifest.read_text().splitlines()
    cells = lines[row].split(",")
    cells[col] = value
    lines[row] = ",".join(cells)
    manifest.write_text("\n".join(lines) + "\n")


def test_label_value_two_is_parse_error_with_line(tmp_path):
    _, manifest, _ = small_dataset(tmp_path)
    corrupt(manifest, 3, -1, "2")
    with pytest.raises(ManifestError, match="line 4"):
        data.load_manifest(manifest)


def test_missing_label_and_bad_number(tmp_path):
    _, manifest, _ = small_dataset(tmp_path)
    corrupt(manifest, 2, -1, "")
    with pytest.raises(ManifestError):
        data.load_manifest(manifest)
    _, manifest, _ = small_dataset(tmp_path / "b")
    corrupt(manifest, 1, 2, "abc")
    with pytest.raises(ManifestError, match="line 2"):
        data.load_manifest(manifest)


def test_dangling_image(tmp_path):
    _, manifest, _ = small_dataset(tmp_path)
    (tmp_path / "images" / "00003.png").unlink()
    with pytest.raises(MissingFileError):
        data.load_manifest(manifest)
    assert len(data.load_manifest(manifest, check_images=False)) == 10


def test_landmark_file_column(tmp_path):
    samples, _, names = small_dataset(tmp_path)
    lines = ["image,subject,landmarks," + ",".join(names)]
    for i, s in enumerate(samples):
        np.savetxt(tmp_path / f"lm{i}.txt", s.landmarks)
        lines.append(f"images/{i:05d}.png,{s.subject_id},lm{i}.txt," + ",".join(map(str, s.labels)))
    p = tmp_path / "files.csv"
    p.write_text("\n".join(lines) + "\n")
    loaded = data.load_manifest(p)
    np.testing.assert_allclose(loaded[4].landmarks, samples[4].landmarks)


# ---- folds ----

def test_three_subjects_three_folds():
    plan = data.subject_exclusive_folds(["a", "a", "b", "c", "c", "c"], 3)
    assert sorted(len(s) for s in plan.subjects) == [1, 1, 1]


def test_too_few_subjects():
    with pytest.raises(InputError):
        data.subject_exclusive_folds(["a", "b"], 3)


def test_skewed_counts_balance():
    rng = np.random.default_rng(0)
    counts = rng.integers(5, 60, size=30)
    ids = [f"s{i}" for i, c in enumerate(counts) for _ in range(c)]
    plan = data.subject_exclusive_folds(ids, 3, seed=1)
    sizes = [len(f) for f in plan.folds]
    assert max(sizes) / min(sizes) <= 1.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 20), min_size=3, max_size=25), st.integers(2, 3), st.integers(0, 99))
def test_plan_is_subject_exclusive_partition(counts, k, seed):
    ids = [f"s{i}" for i, c in enumerate(counts) for _ in range(c)]
    plan = data.subject_exclusive_folds(ids, k, seed)
    flat = sorted(i for f in plan.folds for i in f)
    assert flat == list(range(len(ids)))
    owner = {}
    for f, idx in enumerate(plan.folds):
        for i in idx:
            assert owner.setdefault(ids[i], f) == f
    for f in range(k):
        assert set(plan.train_indices(f)).isdisjoint(plan.test_indices(f))


def test_plan_deterministic_and_json(tmp_path):
    ids = [f"s{i % 7}" for i in range(40)]
    a = data.subject_exclusive_folds(ids, 3, seed=4)
    assert a == data.subject_exclusive_folds(ids, 3, seed=4)
    a.save(tmp_path / "f.json")
    assert data.FoldPlan.load(tmp_path / "f.json") == a
    assert json.loads(a.to_json())["seed"] == 4


# ---- balance weights ----

def test_balance_hand_cases():
    eq = np.array([[1, 0], [0, 1]])
    np.testing.assert_allclose(data.balance_weights(eq), [1, 1])
    m = np.array([[1, 1], [1, 0], [0, 0], [0, 0]])   # rates 0.5, 0.25
    np.testing.assert_allclose(data.balance_weights(m), [2 / 3, 4 / 3], atol=1e-12)


def test_balance_absent_class_warns():
    with pytest.warns(RuntimeWarning):
        w = data.balance_weights(np.array([[1, 0], [1, 0], [0, 0], [1, 0]]))
    # rates 0.75 and clamped 0.25
    np.testing.assert_allclose(w, 2 * np.array([4 / 3, 4]) / (4 / 3 + 4))


def test_balance_recount_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = (rng.random((50, 6)) < rng.uniform(0.05, 0.9, 6)).astype(int)
        inv = []
        for j in range(6):
            count = sum(1 for r in range(50) if m[r, j] == 1)
            inv.append(50 / max(count, 1))
        ref = [6 * v / sum(inv) for v in inv]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            np.testing.assert_allclose(data.balance_weights(m), ref, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 10))
def test_balance_equal_rates_mean_one(n, reps):
    m = np.tile(np.eye(n), (reps, 1))
    w = data.balance_weights(m)
    assert w.mean() == pytest.approx(1.0)


# ---- augmentation ----

def face(size=40, symmetric=False, seed=0):
    rng = np.random.default_rng(seed)
    lm = synth.subject_landmarks(rng, size, symmetric=symmetric)
    img = rng.integers(0, 255, (size, size), dtype=np.uint8)
    return data.FaceSample(img, "s", lm, labels=np.array([1, 0, 1]))


def test_noop_crop_is_identity():
    s = face()
    out = data.augment(s, np.random.default_rng(0), 40, allow_flip=False)
    np.testing.assert_array_equal(out.image, s.image)
    np.testing.assert_array_equal(out.landmarks, s.landmarks)


def test_crop_translates_landmarks_and_keeps_labels():
    s = face()
    img, lm = data.crop_and_flip(s.image, s.landmarks, 30, 4, 7, False)
    np.testing.assert_array_equal(img, s.image[4:34, 7:37])
    np.testing.assert_allclose(lm, s.landmarks - [7, 4])
    out = data.augment(s, np.random.default_rng(5), 32, geometry.load_flip_permutation())
    np.testing.assert_array_equal(out.labels, s.labels)
    assert out.landmarks.shape == (49, 2)


def test_double_flip_restores():
    s = face()
    perm = geometry.load_flip_permutation()
    img, lm = data.crop_and_flip(s.image, s.landmarks, 40, 0, 0, True, perm)
    img2, lm2 = data.crop_and_flip(img, lm, 40, 0, 0, True, perm)
    np.testing.assert_array_equal(img2, s.image)
    np.testing.assert_allclose(lm2, s.landmarks, rtol=0, atol=1e-12)


def test_flip_of_symmetric_face_is_same_set():
    size = 40
    lm = (synth.TEMPLATE - 0.5) * 30 + (size - 1) / 2
    _, flipped = data.crop_and_flip(np.zeros((size, size)), lm, size, 0, 0, True,
                                    geometry.load_flip_permutation())
    # as sets: sort rows
    key = lambda a: a[np.lexsort((a[:, 1], a[:, 0]))]  # noqa: E731
    np.testing.assert_allclose(key(np.round(flipped, 9)), key(np.round(lm, 9)))
    # and index-wise, since the permutation maps each point to its mirror
    np.testing.assert_allclose(flipped, lm, atol=1e-9)


def test_crop_too_large():
    with pytest.raises(InputError):
        data.augment(face(), np.random.default_rng(0), 41)


def test_flip_needs_permutation():
    with pytest.raises(InputError):
        data.crop_and_flip(np.zeros((4, 4)), np.zeros((49, 2)), 4, 0, 0, True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(30, 40))
def test_augment_preserves_labels_and_count(seed, crop):
    s = face()
    out = data.augment(s, np.random.default_rng(seed), crop, geometry.load_flip_permutation())
    assert out.image.shape == (crop, crop)
    assert out.landmarks.shape == s.landmarks.shape
    np.testing.assert_array_equal(out.labels, s.labels)


# ---- dataset batching ----

def test_batches_deterministic():
    samples = synth.synth_generate(SynthConfig(subjects=3, samples_per_subject=3, image_size=40))
    ds = data.FaceDataset(samples, 36, flip_perm=geometry.load_flip_permutation())
    a = list(ds.train_batches(4, epoch=2, seed=7))
    b = list(ds.train_batches(4, epoch=2, seed=7))
    c = list(ds.train_batches(4, epoch=3, seed=7))
    assert all((x["image"] == y["image"]).all() for x, y in zip(a, b))
    assert not all((x["image"] == y["image"]).all() for x, y in zip(a, c))
    batch = next(iter(ds.eval_batches(4)))
    assert batch["image"].shape == (4, 3, 36, 36)
    assert batch["labels"].shape == (4, 12)
    np.testing.assert_allclose(batch["d_o"][0].item() * 4,
                               data.interocular(data.center_crop(samples[0], 36).landmarks), rtol=1e-6)
