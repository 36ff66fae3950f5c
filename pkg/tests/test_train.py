import dataclasses
import json

import numpy as np
import pytest

from bandlearn.augment import AugmentConfig
from bandlearn.exceptions import ConfigError, InvalidInputError
from bandlearn.model import ModelConfig, init_model
from bandlearn.spectral import Bandlimits, SpectralConfig
from bandlearn.synth import GenSpec, gen_positive
from bandlearn.train import (
    TrainConfig,
    TtaConfig,
    personalize,
    poison_sweep,
    stream_gt_rates,
    stream_inference,
    train,
    tta_run,
    write_history,
)
from bandlearn.util import derive_rng, derive_seed

# small, fast configs for behavioral tests (convergence is acceptance-suite turf)
SPEC = GenSpec(seed=0)
MODEL = ModelConfig(seed=1)
FAST = TrainConfig(epochs=2, batch_size=4, spectral=SpectralConfig(240, 30.0), seed=5)


def make_clips(n, seed=0, **spec_kwargs):
    spec = dataclasses.replace(SPEC, seed=seed, **spec_kwargs)
    long_spec = dataclasses.replace(spec, T=180)
    return [
        gen_positive(long_spec, np.random.default_rng(derive_seed(seed, f"clip-{i}")))
        for i in range(n)
    ]


class TestTrain:
    def test_zero_lr_keeps_params(self):
        clips = make_clips(6)
        cfg = dataclasses.replace(FAST, lr=0.0, epochs=5)
        params, history = train(MODEL, cfg, clips)
        np.testing.assert_array_equal(params.to_vector(), init_model(MODEL).to_vector())
        assert history.final_checksum == init_model(MODEL).checksum()

    def test_deterministic(self):
        clips = make_clips(6)
        a, ha = train(MODEL, FAST, clips)
        b, hb = train(MODEL, FAST, clips)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())
        assert ha.final_checksum == hb.final_checksum
        assert [s.losses.total for s in ha.steps] == [s.losses.total for s in hb.steps]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            train(MODEL, FAST, [])

    def test_step_count(self):
        clips = make_clips(6)
        _, history = train(MODEL, FAST, clips)  # 6 clips / batch 4 -> 2 steps/epoch
        assert len(history.steps) == 2 * FAST.epochs
        assert [s.step for s in history.steps] == list(range(len(history.steps)))

    def test_poison_requires_spec(self):
        clips = make_clips(6)
        cfg = dataclasses.replace(FAST, poison_alpha=0.5)
        with pytest.raises(ConfigError):
            train(MODEL, cfg, clips)  # list input carries no generator spec
        train(MODEL, cfg, clips, poison_spec=SPEC)  # explicit spec works

    def test_scaled_bands_recorded_per_view(self):
        clips = make_clips(6)
        _, history = train(MODEL, FAST, clips)
        saw_scaled = False
        for rec in history.steps:
            assert len(rec.band_scales) == len(rec.bands)
            for scale, (a, b, df) in zip(rec.band_scales, rec.bands):
                assert a == pytest.approx(FAST.band.a * scale, rel=1e-12)
                assert b == pytest.approx(FAST.band.b * scale, rel=1e-12)
                assert df == pytest.approx(FAST.band.delta_f * scale, rel=1e-12)
                if scale != 1.0:
                    saw_scaled = True
        assert saw_scaled  # resampling enabled by default

    def test_short_clips_rejected(self):
        clips = make_clips(4)
        short = [
            dataclasses.replace(c, data=c.data[:130], gt_rate=c.gt_rate[:130]) for c in clips
        ]
        with pytest.raises(ConfigError):
            train(MODEL, FAST, short)  # resampling needs ceil(1.4*119)+1 = 168 frames


class TestHistoryFile:
    def test_written_records(self, tmp_path):
        clips = make_clips(6)
        _, history = train(MODEL, FAST, clips)
        path = str(tmp_path / "history.jsonl")
        write_history(path, history)
        records = [json.loads(line) for line in open(path)]
        kinds = {r["type"] for r in records}
        assert kinds == {"step", "timing", "final"}
        steps = [r for r in records if r["type"] == "step"]
        assert len(steps) == len(history.steps)
        assert {"bandwidth", "sparsity", "variance", "total", "weights"} <= set(
            steps[0]["losses"]
        )
        final = [r for r in records if r["type"] == "final"][0]
        assert final["params_sha256"] == history.final_checksum


class TestPersonalize:
    def _subject(self, seed=77, t_len=600):
        spec = dataclasses.replace(SPEC, seed=seed, T=t_len)
        return gen_positive(spec, derive_rng(seed, "subject"))

    def test_window_arithmetic(self):
        # 600 frames, 120-frame windows at stride 60 -> 9 windows -> 1 step/epoch
        subject = self._subject()
        cfg = dataclasses.replace(
            FAST, epochs=3, batch_size=20, augment=AugmentConfig.finetune()
        )
        _, history = personalize(init_model(MODEL), subject, cfg)
        assert len(history.steps) == 3  # max(1, 9 // 20) = 1 step per epoch

    def test_zero_epochs_returns_pretrained(self):
        subject = self._subject()
        cfg = dataclasses.replace(
            FAST, epochs=0, batch_size=20, augment=AugmentConfig.finetune()
        )
        pretrained = init_model(MODEL)
        adapted, _ = personalize(pretrained, subject, cfg)
        np.testing.assert_array_equal(adapted.to_vector(), pretrained.to_vector())

    def test_pretrained_not_mutated(self):
        subject = self._subject()
        cfg = dataclasses.replace(
            FAST, epochs=2, batch_size=8, augment=AugmentConfig.finetune()
        )
        pretrained = init_model(MODEL)
        before = pretrained.to_vector().copy()
        adapted, _ = personalize(pretrained, subject, cfg)
        np.testing.assert_array_equal(pretrained.to_vector(), before)
        assert not np.array_equal(adapted.to_vector(), before)

    def test_short_clip_rejected(self):
        subject = self._subject(t_len=300)
        cfg = dataclasses.replace(FAST, augment=AugmentConfig.finetune())
        with pytest.raises(InvalidInputError):
            personalize(init_model(MODEL), subject, cfg)

    def test_resampling_augment_rejected(self):
        subject = self._subject()
        with pytest.raises(ConfigError):
            personalize(init_model(MODEL), subject, FAST)  # FAST keeps resample on


class TestTta:
    def _stream(self, t_len=480, seed=31):
        spec = dataclasses.replace(SPEC, seed=seed, T=t_len)
        return gen_positive(spec, derive_rng(seed, "stream"))

    def test_disabled_equals_frozen_inference(self):
        stream = self._stream()
        params = init_model(MODEL)
        band, cfg = FAST.band, SpectralConfig(5400, 30.0)
        tta_cfg = TtaConfig(n_tta=0.0, seed=3)
        rates, adapted, history = tta_run(params, stream, tta_cfg, band, cfg)
        frozen = stream_inference(params, stream, 120, 60, band, cfg)
        np.testing.assert_array_equal(rates.rates, frozen.rates)
        np.testing.assert_array_equal(rates.times, frozen.times)
        np.testing.assert_array_equal(adapted.to_vector(), params.to_vector())
        assert len(history.steps) == 0

    def test_fractional_schedule(self):
        stream = self._stream(t_len=120 + 9 * 60)  # 10 clips
        params = init_model(MODEL)
        tta_cfg = TtaConfig(n_tta=0.5, seed=3, lr=1e-4)
        _, _, history = tta_run(params, stream, tta_cfg, FAST.band, SpectralConfig(240, 30.0))
        assert len(history.steps) == 5  # every 2nd clip

    def test_integer_updates_per_clip(self):
        stream = self._stream(t_len=240)  # 3 clips
        params = init_model(MODEL)
        tta_cfg = TtaConfig(n_tta=2.0, seed=3, lr=1e-4, views_per_update=4)
        _, _, history = tta_run(params, stream, tta_cfg, FAST.band, SpectralConfig(240, 30.0))
        assert len(history.steps) == 6

    def test_deterministic(self):
        stream = self._stream()
        params = init_model(MODEL)
        tta_cfg = TtaConfig(n_tta=1.0, seed=3, lr=1e-3, views_per_update=4)
        r1, p1, _ = tta_run(params, stream, tta_cfg, FAST.band, SpectralConfig(240, 30.0))
        r2, p2, _ = tta_run(params, stream, tta_cfg, FAST.band, SpectralConfig(240, 30.0))
        np.testing.assert_array_equal(r1.rates, r2.rates)
        np.testing.assert_array_equal(p1.to_vector(), p2.to_vector())

    def test_gt_series_alignment(self):
        stream = self._stream(t_len=300)
        gt = stream_gt_rates(stream, 120, 60)
        assert len(gt.times) == 4
        assert gt.times[0] == pytest.approx((119 / 2) / 30.0)

    def test_resample_augment_rejected(self):
        with pytest.raises(ConfigError):
            TtaConfig(augment=AugmentConfig())


class TestPoisonSweep:
    def test_row_shape_and_single_seed_std(self):
        clips = make_clips(8)
        cfg = dataclasses.replace(FAST, epochs=1)
        rows = poison_sweep([0.0], 2, 1, MODEL, cfg, clips)
        assert len(rows) == 1
        row = rows[0]
        assert row.alpha == 0.0 and row.eval_set == "within"
        assert row.mae_std == 0.0  # single value per key -> std 0 by convention

    def test_cross_set_rows(self):
        clips = make_clips(8)
        cross = make_clips(4, seed=99)
        cfg = dataclasses.replace(FAST, epochs=1)
        rows = poison_sweep(
            [0.0, 0.5], 2, 1, MODEL, cfg, clips, cross_clips=cross, poison_spec=SPEC
        )
        keys = {(r.alpha, r.eval_set) for r in rows}
        assert keys == {(0.0, "within"), (0.0, "cross"), (0.5, "within"), (0.5, "cross")}

    def test_jobs_parallel_matches_serial(self):
        clips = make_clips(8)
        cfg = dataclasses.replace(FAST, epochs=1)
        serial = poison_sweep([0.0, 0.25], 2, 1, MODEL, cfg, clips)
        parallel = poison_sweep([0.0, 0.25], 2, 1, MODEL, cfg, clips, jobs=2)
        assert [
            (r.alpha, r.eval_set, r.mae_mean, r.mae_std) for r in serial
        ] == [(r.alpha, r.eval_set, r.mae_mean, r.mae_std) for r in parallel]
