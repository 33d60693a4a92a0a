import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tactisense.preprocess import (DESK_CROP, DESK_OUT, PAPER_CROP, PAPER_OUT, CropResize, FramePreprocessor,
                                   SpaceTimeSpec, StreamingMean, center_crop_resize, clip_mean_image, clip_spacetime,
                                   crop_offset, denormalize_image, normalize_image, preset_geometry,
                                   spacetime_transform, streaming_mean_update, to_gray)


class TestCrop:
    def test_paper_offset(self):
        assert crop_offset(960, 540) == (330, 120)

    def test_desk_offset(self):
        assert crop_offset(320, 180, DESK_CROP) == (110, 40)

    def test_too_small(self):
        with pytest.raises(ValueError):
            crop_offset(200, 200)

    def test_paper_output_size(self, rng):
        img = rng.integers(0, 256, size=(540, 960, 3), dtype=np.uint8)
        assert center_crop_resize(img).shape == (PAPER_OUT, PAPER_OUT, 3)

    def test_identity_when_crop_equals_output(self, rng):
        img = rng.uniform(size=(20, 30, 3))
        out = center_crop_resize(img, crop=10, out=10)
        np.testing.assert_allclose(out, img[5:15, 10:20])

    def test_only_crop_window_matters(self, rng):
        img = rng.uniform(size=(540, 960, 3))
        other = img.copy()
        other[:120] = 0.0
        other[:, :330] = 0.0
        np.testing.assert_array_equal(center_crop_resize(img), center_crop_resize(other))

    @given(st.floats(0, 255))
    @settings(max_examples=20)
    def test_constant_stays_constant(self, value):
        out = center_crop_resize(np.full((180, 320, 3), value), DESK_CROP, DESK_OUT)
        np.testing.assert_allclose(out, value, rtol=1e-12, atol=1e-9)

    def test_wrong_size_rejected(self):
        with pytest.raises(ValueError):
            CropResize(320, 180, DESK_CROP, DESK_OUT)(np.zeros((100, 100, 3)))

    def test_geometry(self):
        assert preset_geometry(960, 540) == (PAPER_CROP, PAPER_OUT)
        assert preset_geometry(320, 180) == (DESK_CROP, DESK_OUT)
        with pytest.raises(ValueError):
            preset_geometry(640, 480)


class TestNormalize:
    def test_mean_colour_maps_to_zero(self):
        img = np.tile([0.485, 0.456, 0.406], (4, 4, 1))
        np.testing.assert_allclose(normalize_image(img), 0.0, atol=1e-12)

    def test_chw_layout(self, rng):
        assert normalize_image(rng.uniform(size=(5, 7, 3))).shape == (3, 5, 7)

    @pytest.mark.parametrize("layout", ["chw", "hwc"])
    def test_round_trip(self, rng, layout):
        img = rng.uniform(size=(5, 7, 3))
        np.testing.assert_allclose(denormalize_image(normalize_image(img, layout=layout), layout=layout), img)

    def test_frame_preprocessor_matches_reference(self, rng):
        frame = rng.integers(0, 256, size=(180, 320, 3), dtype=np.uint8)
        ref = normalize_image(center_crop_resize(frame, DESK_CROP, DESK_OUT) / 255.0, layout="hwc")
        out = FramePreprocessor(320, 180, DESK_CROP, DESK_OUT)(frame)
        np.testing.assert_allclose(out, ref, atol=1e-12)


class TestSpaceTime:
    def test_history_is_twenty(self):
        assert SpaceTimeSpec().history == 20

    def test_constant_clip_gives_zero_stacks(self):
        clip = np.full((40, 6, 8, 3), 117, dtype=np.uint8)
        mean = clip_mean_image(clip)
        stack = spacetime_transform(clip, 25, mean_image=mean)
        assert stack.shape == (6, 8, 3)
        np.testing.assert_array_equal(stack, 0.0)
        np.testing.assert_array_equal(clip_spacetime(to_gray(clip), mean_image=to_gray(mean)), 0.0)

    def test_newest_first(self):
        gray = np.arange(30, dtype=float)[:, None, None] * np.ones((1, 2, 2))
        stack = spacetime_transform(gray, 25)
        np.testing.assert_array_equal(stack[0, 0], [25.0, 15.0, 5.0])

    def test_needs_history(self):
        with pytest.raises(ValueError):
            spacetime_transform(np.zeros((30, 2, 2)), 19)

    def test_clip_matches_per_tick(self, rng):
        gray = rng.uniform(size=(35, 3, 4))
        batch = clip_spacetime(gray)
        assert batch.shape == (15, 3, 4, 3)
        for t in (20, 27, 34):
            np.testing.assert_array_equal(batch[t - 20], spacetime_transform(gray, t))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SpaceTimeSpec(spacing=0)
        with pytest.raises(ValueError):
            SpaceTimeSpec(alpha=0.0)


class TestStreamingMean:
    def test_first_frame_initializes(self):
        m = StreamingMean(0.01)
        np.testing.assert_array_equal(m.update(np.full((2, 2), 5.0)), 5.0)

    def test_matches_recurrence(self, rng):
        frames = rng.uniform(size=(10, 3, 3))
        m = StreamingMean(0.1)
        ref = frames[0]
        m.update(frames[0])
        for f in frames[1:]:
            ref = streaming_mean_update(ref, f, 0.1)
            m.update(f)
        np.testing.assert_allclose(m.mean, ref, atol=1e-14)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            StreamingMean(1.5)
