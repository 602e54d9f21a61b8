import numpy as np
import pytest

from tcovis.assignment import global_instance_assignment, locpro_assignment
from tcovis.cost import LossWeights
from tcovis.model import ClipSpec, Corpus, validate
from tcovis.synth import (NoiseConfig, SceneConfig, build_clip, generate_clip,
                          generate_corpus, simulate_predictions)

SPEC = ClipSpec(T=6, H=64, W=64, S=4, K=3, N_v=6, C=16)


def scene(**overrides):
    fields = dict(spec=SPEC, n_objects=(2, 4), velocity=(0.5, 1.5))
    fields.update(overrides)
    return SceneConfig(**fields)


class TestSceneConfig:
    def test_rejects_too_many_objects(self):
        with pytest.raises(ValueError, match="n_objects"):
            scene(n_objects=(2, 7))

    def test_rejects_oversized_objects(self):
        with pytest.raises(ValueError, match="fit"):
            scene(size=(2, 8))

    def test_rejects_unknown_shape(self):
        with pytest.raises(ValueError, match="shapes"):
            scene(shapes=("triangle",))

    def test_rejects_bad_entry_range(self):
        with pytest.raises(ValueError, match="entry_frame"):
            scene(entry_frame=(0, 3))


class TestNoiseConfig:
    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError, match="mask_jitter"):
            NoiseConfig(mask_jitter=1.5)

    def test_rejects_early_swap_frame(self):
        with pytest.raises(ValueError, match="swap_frame"):
            NoiseConfig(swap_mode="early_swap", swap_frame=1)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError, match="swap_mode"):
            NoiseConfig(swap_mode="late_swap")


class TestGenerateClip:
    def test_static_object_keeps_its_mask(self):
        cfg = scene(n_objects=(1, 1), velocity=(0.0, 0.0))
        tracks = generate_clip(cfg, seed=3)
        assert len(tracks) == 1
        for t in range(1, SPEC.T):
            assert np.array_equal(tracks[0].masks[t], tracks[0].masks[0])

    def test_deterministic_under_seed(self):
        cfg = scene()
        a = generate_clip(cfg, seed=5)
        b = generate_clip(cfg, seed=5)
        assert len(a) == len(b)
        for ta, tb in zip(a, b):
            assert ta.class_id == tb.class_id
            assert np.array_equal(ta.masks, tb.masks)

    def test_seeded_configs_pass_validation(self):
        rng = np.random.default_rng(0)
        for i in range(10):
            cfg = scene(n_objects=(1, int(rng.integers(2, 5))),
                        velocity=(0.0, float(rng.uniform(0.5, 2.0))),
                        entry_frame=(1, int(rng.integers(1, 4))))
            corpus = generate_corpus(cfg, None, 1, seed=i)
            assert validate(corpus) == []

    def test_entry_frames_delay_appearance(self):
        cfg = scene(n_objects=(3, 3), entry_frame=(3, 3))
        tracks = generate_clip(cfg, seed=9)
        for track in tracks:
            assert not track.masks[:2].any()
            assert track.masks[2:].any()

    def test_depth_order_later_index_on_top(self):
        cfg = scene(n_objects=(4, 4), velocity=(0.0, 1.0), allow_occlusion=True)
        tracks = generate_clip(cfg, seed=11)
        stacked = np.stack([t.masks for t in tracks])
        # visible masks never overlap after carving
        assert (stacked.sum(axis=0) <= 1).all()

    def test_no_occlusion_flag_prevents_overlap(self):
        cfg = scene(n_objects=(2, 3), allow_occlusion=False, size=(2, 2))
        tracks = generate_clip(cfg, seed=13)
        stacked = np.stack([t.masks for t in tracks])
        assert (stacked.sum(axis=0) <= 1).all()


class TestSimulatePredictions:
    def test_zero_noise_recovers_generator_pairing(self):
        cfg = scene()
        gts = generate_clip(cfg, seed=21)
        preds = simulate_predictions(gts, NoiseConfig(), SPEC, seed=21)
        assert len(preds) == SPEC.N_v
        gia = global_instance_assignment(gts, preds, LossWeights())
        assert gia.pairs == tuple((i, i) for i in range(len(gts)))
        assert gia.total_cost < 1e-2

    def test_early_swap_separates_strategies(self):
        cfg = scene()
        w = LossWeights()
        noise = NoiseConfig(swap_mode="early_swap", swap_frame=2)
        for seed in range(5):
            gts = generate_clip(cfg, seed=seed)
            preds = simulate_predictions(gts, noise, SPEC, seed=seed)
            gia = global_instance_assignment(gts, preds, w)
            loc = locpro_assignment(gts, preds, w)
            assert gia.total_cost < loc.total_cost
            assert dict(gia.pairs)[0] == 1 and dict(gia.pairs)[1] == 0
            assert dict(loc.pairs)[0] == 0 and dict(loc.pairs)[1] == 1

    def test_bit_identical_under_seed(self):
        cfg = scene()
        gts = generate_clip(cfg, seed=31)
        noise = NoiseConfig(mask_jitter=0.1, class_confusion=0.2)
        a = simulate_predictions(gts, noise, SPEC, seed=31)
        b = simulate_predictions(gts, noise, SPEC, seed=31)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.class_probs, tb.class_probs)
            assert np.array_equal(ta.mask_probs, tb.mask_probs)

    def test_outputs_satisfy_model_invariants(self):
        cfg = scene()
        noise = NoiseConfig(mask_jitter=0.05, class_confusion=0.3)
        corpus = generate_corpus(cfg, noise, 5, seed=41)
        assert validate(corpus) == []

    def test_jitter_monotonically_raises_expected_cost(self):
        cfg = scene()
        w = LossWeights()
        means = []
        for jitter in (0.0, 0.05, 0.15):
            noise = NoiseConfig(mask_jitter=jitter)
            totals = []
            for index in range(50):
                clip = build_clip(cfg, noise, seed=51, index=index)
                gia = global_instance_assignment(clip.gt, clip.pred, w)
                totals.append(gia.total_cost)
            means.append(float(np.mean(totals)))
        assert means[0] <= means[1] <= means[2]

    def test_rejects_too_many_tracks(self):
        cfg = scene()
        gts = generate_clip(cfg, seed=61) * 4
        with pytest.raises(ValueError, match="exceed"):
            simulate_predictions(gts, NoiseConfig(), SPEC, seed=61)

    def test_early_swap_needs_two_tracks(self):
        cfg = scene(n_objects=(1, 1))
        gts = generate_clip(cfg, seed=71)
        with pytest.raises(ValueError, match="two ground-truth"):
            simulate_predictions(gts, NoiseConfig(swap_mode="early_swap"),
                                 SPEC, seed=71)


class TestCorpus:
    def test_header_records_generator(self):
        cfg = scene()
        corpus = generate_corpus(cfg, NoiseConfig(), 3, seed=81)
        assert corpus.generator["name"].startswith("philox")
        assert corpus.generator["scene"]["n_objects"] == [2, 4]
        assert corpus.generator["clips"] == 3

    def test_clips_independent_of_generation_order(self):
        cfg = scene()
        noise = NoiseConfig(mask_jitter=0.02)
        full = generate_corpus(cfg, noise, 4, seed=91)
        lone = build_clip(cfg, noise, seed=91, index=2)
        want = full.clips[2]
        for a, b in zip(want.gt, lone.gt):
            assert np.array_equal(a.masks, b.masks)
        for a, b in zip(want.pred, lone.pred):
            assert np.array_equal(a.mask_probs, b.mask_probs)
