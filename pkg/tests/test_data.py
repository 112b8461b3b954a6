"""Phantom generation, volume slicing, masking, dataset layout."""

import hashlib

import numpy as np
import pytest

from kanpaint.data import (PhantomSpec, SliceRecord, generate_phantom,
                           load_dataset, mask_apply, save_dataset,
                           slice_volume, split_by_subject)
from kanpaint.errors import ConfigError, ContractError, DataError

# first-run value, pinned as the generation regression golden
PHANTOM42_SHA256 = \
    "1f3d0c769eb025f8b252bd03bcfbee3e9869f1ffffca25bb0334e296292aa086"


class TestPhantom:
    def test_fixed_seed_is_bit_identical(self):
        digests = []
        for _ in range(2):
            rec = generate_phantom(PhantomSpec(seed=42))
            h = hashlib.sha256()
            for arr in (rec.image, rec.tumor_mask, rec.healthy_mask):
                h.update(np.ascontiguousarray(arr).tobytes())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1] == PHANTOM42_SHA256

    def test_mask_area_fraction_within_radius_bounds(self):
        spec = PhantomSpec(seed=0)
        lo, hi = spec.mask_radius
        area_lo = np.pi * (lo - 0.5) ** 2 / (64 * 64)
        area_hi = np.pi * (hi + 0.5) ** 2 / (64 * 64)
        for seed in range(1000):
            rec = generate_phantom(PhantomSpec(seed=seed))
            frac = rec.healthy_mask.mean()
            assert area_lo <= frac <= area_hi

    def test_records_satisfy_type_invariants(self):
        for seed in range(1000):
            rec = generate_phantom(PhantomSpec(seed=seed))
            assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0
            assert set(np.unique(rec.healthy_mask)) <= {0.0, 1.0}
            assert set(np.unique(rec.tumor_mask)) <= {0.0, 1.0}
            assert rec.healthy_mask.sum() > 0  # non-zero-mask filter holds

    def test_degenerate_dims_rejected(self):
        with pytest.raises(ConfigError):
            PhantomSpec(seed=0, height=8, width=8)
        with pytest.raises(ConfigError):
            PhantomSpec(seed=0, mask_radius=(9, 40), height=32, width=32)


class TestSliceVolume:
    def make_volume(self, d=6, h=24, w=20, mask_slices=(2, 3)):
        rng = np.random.default_rng(0)
        vol = rng.random((d, h, w)) * 4.0 - 1.0
        tumor = np.zeros((d, h, w))
        healthy = np.zeros((d, h, w))
        for k in mask_slices:
            tumor[k, 5:8, 5:8] = 1.0
            healthy[k, 10:13, 9:12] = 1.0
        return vol, tumor, healthy

    def test_crop_and_normalize(self):
        vol, tumor, healthy = self.make_volume()
        records = slice_volume(vol, tumor, healthy, crop=16, subject_id="s1")
        assert len(records) == 2
        for rec in records:
            assert rec.image.shape == (1, 16, 16)
            assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0
            assert rec.subject_id == "s1"
        assert [r.slice_index for r in records] == [2, 3]

    def test_full_scale_slice_dims(self):
        # the paper-scale layout: 155 slices of 240x240 cropped to 192
        vol = np.zeros((3, 240, 240))
        vol[1, 100, 100] = 1.0
        masks = np.zeros_like(vol)
        masks[1, 120:130, 120:130] = 1.0
        records = slice_volume(vol, masks, masks, crop=192)
        assert len(records) == 1
        assert records[0].image.shape == (1, 192, 192)

    def test_all_zero_masks_give_empty_list(self):
        vol = np.random.default_rng(0).random((4, 20, 20))
        zeros = np.zeros_like(vol)
        assert slice_volume(vol, zeros, zeros, crop=16) == []

    def test_constant_volume_normalizes_to_zero(self):
        vol = np.full((2, 20, 20), 3.7)
        masks = np.zeros_like(vol)
        masks[:, 8:12, 8:12] = 1.0
        records = slice_volume(vol, masks, masks, crop=16)
        for rec in records:
            np.testing.assert_array_equal(rec.image, 0.0)

    def test_idempotent(self):
        vol, tumor, healthy = self.make_volume()
        a = slice_volume(vol, tumor, healthy, crop=16)
        b = slice_volume(vol, tumor, healthy, crop=16)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.image, rb.image)

    def test_crop_too_large(self):
        vol, tumor, healthy = self.make_volume()
        with pytest.raises(ConfigError, match="crop"):
            slice_volume(vol, tumor, healthy, crop=100)

    def test_non_binary_mask_rejected(self):
        vol, tumor, healthy = self.make_volume()
        tumor[0, 0, 0] = 0.5
        with pytest.raises(DataError, match="binary"):
            slice_volume(vol, tumor, healthy, crop=16)


class TestMaskApply:
    def test_zero_mask_keeps_image(self):
        rec = generate_phantom(PhantomSpec(seed=1))
        rec.healthy_mask[...] = 0.0
        np.testing.assert_array_equal(mask_apply(rec), rec.image)

    def test_full_mask_zeroes_image(self):
        rec = generate_phantom(PhantomSpec(seed=1))
        rec.healthy_mask[...] = 1.0
        np.testing.assert_array_equal(mask_apply(rec), 0.0)

    def test_half_mask_preserves_unmasked_half(self):
        rec = generate_phantom(PhantomSpec(seed=1))
        rec.healthy_mask[...] = 0.0
        rec.healthy_mask[:, :, :32] = 1.0
        masked = mask_apply(rec)
        np.testing.assert_array_equal(masked[:, :, 32:], rec.image[:, :, 32:])
        np.testing.assert_array_equal(masked[:, :, :32], 0.0)


class TestSplitAndLayout:
    def make_records(self):
        vol = np.random.default_rng(1).random((4, 20, 20))
        masks = np.zeros_like(vol)
        masks[:, 5:9, 5:9] = 1.0
        records = []
        for sid in ("a", "b", "c", "d"):
            records.extend(slice_volume(vol, masks, masks, crop=16,
                                        subject_id=sid))
        return records

    def test_split_is_disjoint_by_subject(self):
        records = self.make_records()
        train, val = split_by_subject(records, val_subjects=1, seed=3)
        train_subjects = {r.subject_id for r in train}
        val_subjects = {r.subject_id for r in val}
        assert train_subjects.isdisjoint(val_subjects)
        assert len(val_subjects) == 1
        assert len(train) + len(val) == len(records)

    def test_split_cannot_hold_out_everything(self):
        records = self.make_records()
        with pytest.raises(ConfigError):
            split_by_subject(records, val_subjects=4)

    def test_dataset_roundtrip(self, tmp_path):
        records = [generate_phantom(PhantomSpec(seed=s)) for s in range(3)]
        save_dataset(tmp_path / "ds", records)
        loaded = load_dataset(tmp_path / "ds")
        assert len(loaded) == 3
        for orig, back in zip(records, loaded):
            assert back.subject_id == orig.subject_id
            # storage is float32, so compare at that precision
            np.testing.assert_allclose(back.image, orig.image, atol=1e-7)
            np.testing.assert_array_equal(back.healthy_mask,
                                          orig.healthy_mask)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_dataset(tmp_path / "nope")


class TestRecordValidation:
    def test_image_range_enforced(self):
        with pytest.raises(ContractError, match=r"\[0, 1\]"):
            SliceRecord(np.full((1, 16, 16), 1.5), np.zeros((1, 16, 16)),
                        np.zeros((1, 16, 16)), "x", 0)

    def test_mask_binary_enforced(self):
        with pytest.raises(ContractError, match="binary"):
            SliceRecord(np.zeros((1, 16, 16)), np.full((1, 16, 16), 0.3),
                        np.zeros((1, 16, 16)), "x", 0)

    def test_shape_consistency(self):
        with pytest.raises(ContractError):
            SliceRecord(np.zeros((1, 16, 16)), np.zeros((1, 8, 8)),
                        np.zeros((1, 16, 16)), "x", 0)
