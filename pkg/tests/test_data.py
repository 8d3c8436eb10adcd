import numpy as np
import pytest
from scipy import ndimage

from trifuse.data import (
    AttackSpec,
    SampleRecord,
    apply_attack,
    attack_from_label,
    augment_flip,
    gaussian_blur,
    gaussian_kernel1d,
    generate_authentic,
    generate_copy_move,
    generate_splice,
    jpeg_roundtrip,
    load_dataset,
    load_sample,
    make_dataset,
    save_sample,
    write_dataset,
)
from trifuse.errors import ConfigError, DataIOError
from trifuse.metrics import psnr


class TestSplice:
    def test_mask_area_fraction_in_range(self):
        for seed in range(6):
            rec = generate_splice(np.random.default_rng(seed), 64)
            frac = rec.mask.sum() / rec.mask.size
            assert 0.05 <= frac <= 0.40

    def test_same_seed_identical(self):
        a = generate_splice(np.random.default_rng(7), 64)
        b = generate_splice(np.random.default_rng(7), 64)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)

    def test_mask_matches_pixel_edit(self):
        # regenerate host and donor with the same rng stream, compare per pixel
        from trifuse.data import _procedural_image, _region_mask, SPLICE_AREA_RANGE

        rng = np.random.default_rng(3)
        rec = generate_splice(rng, 64)
        rng2 = np.random.default_rng(3)
        rng2.integers(0, 2 ** 31)  # seed note draw
        host = _procedural_image(rng2, 64)
        donor = _procedural_image(rng2, 64)
        m = rec.mask.astype(bool)
        assert np.array_equal(rec.image[m], donor[m])
        assert np.array_equal(rec.image[~m], host[~m])

    def test_bad_size_rejected(self):
        with pytest.raises(ConfigError):
            generate_splice(np.random.default_rng(0), 60)


class TestCopyMove:
    def test_two_equal_connected_components(self):
        for seed in range(6):
            rec = generate_copy_move(np.random.default_rng(seed), 64)
            labels, n = ndimage.label(rec.mask, structure=np.ones((3, 3)))
            assert n == 2
            c1 = (labels == 1).sum()
            c2 = (labels == 2).sum()
            assert c1 == c2

    def test_target_pixels_equal_source_pixels(self):
        rec = generate_copy_move(np.random.default_rng(11), 64)
        labels, n = ndimage.label(rec.mask, structure=np.ones((3, 3)))
        assert n == 2
        comps = [np.argwhere(labels == k) for k in (1, 2)]
        # align the two components by their bounding-box origin
        vals = []
        for comp in comps:
            origin = comp.min(axis=0)
            rel = {tuple(rc - origin) for rc in comp}
            vals.append((origin, rel))
        assert vals[0][1] == vals[1][1]
        off = vals[1][0] - vals[0][0]
        for rc in comps[0]:
            r, c = rc
            assert np.array_equal(rec.image[r, c], rec.image[r + off[0], c + off[1]])

    def test_same_seed_identical(self):
        a = generate_copy_move(np.random.default_rng(5), 64)
        b = generate_copy_move(np.random.default_rng(5), 64)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)


class TestAuthentic:
    def test_empty_mask(self):
        rec = generate_authentic(np.random.default_rng(0), 64)
        assert rec.mask.sum() == 0
        assert rec.meta["kind"] == "authentic"


class TestAttacks:
    def test_jpeg_q100_roundtrip_psnr(self):
        rec = generate_splice(np.random.default_rng(1), 64)
        out = jpeg_roundtrip(rec.image, 100)
        assert psnr(out, rec.image) >= 40.0

    def test_jpeg_degrades_with_quality(self):
        rec = generate_splice(np.random.default_rng(2), 64)
        p50 = psnr(apply_attack(rec.image, AttackSpec("jpeg", 50)), rec.image)
        p100 = psnr(apply_attack(rec.image, AttackSpec("jpeg", 100)), rec.image)
        assert p50 < p100

    def test_blur_kernel_sums_to_one(self):
        for k in (5, 11, 17, 23, 29):
            kern = gaussian_kernel1d(k)
            assert abs(kern.sum() - 1.0) <= 1e-9

    def test_blur_preserves_constant_image(self):
        img = np.full((32, 32, 3), 119, dtype=np.uint8)
        out = gaussian_blur(img, 11)
        assert np.array_equal(out, img)

    def test_attacks_preserve_dimensions(self):
        rec = generate_splice(np.random.default_rng(3), 64)
        for spec in (AttackSpec("jpeg", 50), AttackSpec("gaussian_blur", 29), AttackSpec()):
            out = apply_attack(rec.image, spec)
            assert out.shape == rec.image.shape

    def test_off_grid_parameters_rejected(self):
        with pytest.raises(ConfigError):
            AttackSpec("jpeg", 85)
        with pytest.raises(ConfigError):
            AttackSpec("gaussian_blur", 7)
        with pytest.raises(ConfigError):
            AttackSpec("sharpen", 1)

    def test_attack_labels_roundtrip(self):
        for spec in (AttackSpec(), AttackSpec("jpeg", 60), AttackSpec("gaussian_blur", 5)):
            assert attack_from_label(spec.label()) == spec


class TestAugment:
    def test_double_flip_is_identity(self):
        rec = generate_splice(np.random.default_rng(4), 64)

        class Always:
            def random(self):
                return 0.0  # < 0.5 -> flip both axes

        once = augment_flip(rec, Always())
        twice = augment_flip(once, Always())
        assert np.array_equal(twice.image, rec.image)
        assert np.array_equal(twice.mask, rec.mask)

    def test_mask_area_preserved(self):
        rec = generate_splice(np.random.default_rng(6), 64)
        out = augment_flip(rec, np.random.default_rng(0))
        assert out.mask.sum() == rec.mask.sum()

    def test_flip_commutes_with_symmetric_blur(self):
        rec = generate_splice(np.random.default_rng(8), 64)

        class Always:
            def random(self):
                return 0.0

        a = gaussian_blur(augment_flip(rec, Always()).image, 11)
        b = augment_flip(
            SampleRecord(gaussian_blur(rec.image, 11), rec.mask, rec.meta), Always()
        ).image
        assert np.array_equal(a, b)


class TestDiskFormat:
    def test_roundtrip(self, tmp_path):
        rec = generate_splice(np.random.default_rng(9), 64)
        save_sample(tmp_path, "s1", rec)
        loaded = load_sample(tmp_path, "s1")
        assert np.array_equal(loaded.image, rec.image)
        assert np.array_equal(loaded.mask, rec.mask)
        assert loaded.meta == rec.meta

    def test_mask_bytes_binary_on_disk(self, tmp_path):
        from PIL import Image

        rec = generate_copy_move(np.random.default_rng(10), 64)
        save_sample(tmp_path, "s2", rec)
        raw = np.asarray(Image.open(tmp_path / "masks" / "s2_gt.png"))
        assert set(np.unique(raw)) <= {0, 255}

    def test_missing_file_error(self, tmp_path):
        with pytest.raises(DataIOError):
            load_sample(tmp_path, "nope")

    def test_corrupt_png_error(self, tmp_path):
        rec = generate_splice(np.random.default_rng(12), 64)
        save_sample(tmp_path, "s3", rec)
        (tmp_path / "images" / "s3.png").write_bytes(b"not a png at all")
        with pytest.raises(DataIOError):
            load_sample(tmp_path, "s3")

    def test_nonbinary_mask_error(self, tmp_path):
        from PIL import Image

        rec = generate_splice(np.random.default_rng(13), 64)
        save_sample(tmp_path, "s4", rec)
        bad = np.full((64, 64), 17, dtype=np.uint8)
        Image.fromarray(bad, mode="L").save(tmp_path / "masks" / "s4_gt.png")
        with pytest.raises(DataIOError):
            load_sample(tmp_path, "s4")


class TestMakeDataset:
    def test_split_ratio_80_10_10(self):
        samples, splits = make_dataset(
            np.random.default_rng(0), {"splice": 50, "copy_move": 30, "authentic": 20}, size=32
        )
        assert len(samples) == 100
        assert len(splits["train"]) == 80
        assert len(splits["val"]) == 10
        assert len(splits["test"]) == 10

    def test_splits_disjoint(self):
        _, splits = make_dataset(np.random.default_rng(1), {"splice": 20}, size=32)
        all_ids = splits["train"] + splits["val"] + splits["test"]
        assert len(all_ids) == len(set(all_ids))

    def test_same_seed_same_split(self):
        _, a = make_dataset(np.random.default_rng(2), {"splice": 10, "authentic": 10}, size=32)
        _, b = make_dataset(np.random.default_rng(2), {"splice": 10, "authentic": 10}, size=32)
        assert a == b

    def test_explicit_split_counts(self):
        _, splits = make_dataset(
            np.random.default_rng(3), {"splice": 30}, size=32, split_counts=(20, 5, 5)
        )
        assert (len(splits["train"]), len(splits["val"]), len(splits["test"])) == (20, 5, 5)

    def test_attack_grid_recorded(self):
        samples, _ = make_dataset(
            np.random.default_rng(4),
            {"splice": 4},
            size=32,
            attack_grid=[AttackSpec(), AttackSpec("jpeg", 80)],
        )
        attacks = sorted(rec.meta["attack"] for rec in samples.values())
        assert attacks == ["jpeg:80", "jpeg:80", "none", "none"]

    def test_write_and_load_roundtrip(self, tmp_path):
        samples, splits = make_dataset(np.random.default_rng(5), {"splice": 6}, size=32)
        write_dataset(tmp_path, samples, splits)
        records, loaded_splits = load_dataset(tmp_path)
        assert loaded_splits == splits
        assert set(records) == set(samples)
        for sid in samples:
            assert np.array_equal(records[sid].image, samples[sid].image)
