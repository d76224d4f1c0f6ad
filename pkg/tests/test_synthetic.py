import json

import numpy as np
import pytest

from brainchannel import (
    FrequencyDomainRecipe,
    InvalidInputError,
    InvalidRecipeError,
    SegmentationPlan,
    StareConfig,
    SyntheticChannelSpec,
    TimeDomainRecipe,
    ToneSpec,
    complete_graph,
    estimate_ls,
    estimate_mmse,
    estimate_sequence,
    frames_from_recordings,
    gen_channel,
    gen_dataset,
    gen_frames,
    gen_time_domain,
    graph_from_edge_list,
    load_recipe,
    truth_tensor_for_plan,
)
from brainchannel.synthetic import packaged_recipe_names


def ring_graph(n):
    return graph_from_edge_list(n, [(i, i % n + 1) for i in range(1, n + 1)])


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestGenChannel:
    def test_static_limit(self):
        spec = SyntheticChannelSpec(
            num_rcv_N=4, num_src_P=3, bins_hz=(1.0, 2.0), num_frames_K=5,
            temporal_drift_ar1=1 - 1e-12, seed=0,
        )
        t = gen_channel(spec, ring_graph(4))
        for k in range(2, 6):
            assert rel_err(t.data[k - 1], t.data[0]) <= 1e-5

    def test_uncorrelated_rows_when_strength_zero(self):
        # iid rows need P large for the sample correlation to sit near zero
        spec = SyntheticChannelSpec(
            num_rcv_N=6, num_src_P=128, bins_hz=(1.0,), num_frames_K=1,
            spatial_corr_strength=0.0, seed=1,
        )
        g = ring_graph(6)
        corrs = []
        for draw in range(64):
            t = gen_channel(
                SyntheticChannelSpec(
                    num_rcv_N=6, num_src_P=128, bins_hz=(1.0,), num_frames_K=1,
                    spatial_corr_strength=0.0, seed=1000 + draw,
                ),
                g,
            )
            H = t.data[0, 0]
            Hc = H - H.mean(axis=1, keepdims=True)
            for i in range(6):
                for j in range(i + 1, 6):
                    num = np.vdot(Hc[i], Hc[j])
                    corrs.append(abs(num) / (np.linalg.norm(Hc[i]) * np.linalg.norm(Hc[j])))
        assert np.mean(corrs) <= 0.1

    def test_smoothing_reduces_roughness(self):
        kw = dict(num_rcv_N=8, num_src_P=16, bins_hz=(1.0,), num_frames_K=1, seed=2)
        g = ring_graph(8)
        from brainchannel import smoothness_penalty

        rough = gen_channel(SyntheticChannelSpec(spatial_corr_strength=0.0, **kw), g)
        smooth = gen_channel(SyntheticChannelSpec(spatial_corr_strength=0.9, **kw), g)

        def norm_pen(t):
            H = t.data[0, 0]
            return smoothness_penalty(H, g) / np.linalg.norm(H) ** 2

        assert norm_pen(smooth) < norm_pen(rough)

    def test_determinism(self):
        spec = SyntheticChannelSpec(
            num_rcv_N=3, num_src_P=2, bins_hz=(0.0, 1.0), num_frames_K=2,
            spatial_corr_strength=0.4, temporal_drift_ar1=0.7, seed=42,
        )
        g = ring_graph(3)
        a = gen_channel(spec, g)
        b = gen_channel(spec, g)
        assert np.array_equal(a.data, b.data)

    def test_rolloff(self):
        spec = SyntheticChannelSpec(
            num_rcv_N=3, num_src_P=3, bins_hz=(0.0, 30.0), num_frames_K=1,
            freq_rolloff_hz=10.0, seed=3,
        )
        t = gen_channel(spec, ring_graph(3))
        # 30 Hz bins carry exp(-3) of the magnitude scale of DC bins
        r = np.linalg.norm(t.data[0, 1]) / np.linalg.norm(t.data[0, 0])
        assert r < np.exp(-3) * 3  # loose: single draw

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            SyntheticChannelSpec(num_rcv_N=2, num_src_P=2, bins_hz=(1.0,), num_frames_K=1, temporal_drift_ar1=1.0)
        with pytest.raises(InvalidInputError):
            SyntheticChannelSpec(num_rcv_N=2, num_src_P=2, bins_hz=(1.0,), num_frames_K=1, spatial_corr_strength=2.0)
        with pytest.raises(InvalidInputError):
            SyntheticChannelSpec(num_rcv_N=2, num_src_P=2, bins_hz=(0.3,), num_frames_K=1, delta_f_hz=1.0).bin_indices()


class TestGenFrames:
    def _truth(self, seed=0, **kw):
        spec = SyntheticChannelSpec(
            num_rcv_N=kw.pop("N", 3),
            num_src_P=kw.pop("P", 2),
            bins_hz=kw.pop("bins", (1.0, 2.0)),
            num_frames_K=kw.pop("K", 2),
            seed=seed,
            **kw,
        )
        return gen_channel(spec, complete_graph(spec.num_rcv_N))

    def test_noise_free_exact_and_recoverable(self):
        truth = self._truth(P=3, N=2)
        frames, noise = gen_frames(truth, symbols_per_frame_M=6, snr_db=np.inf, seed=9)
        for fr in frames:
            H = truth.data[fr.frame_index_k - 1, truth.bin_indices.index(fr.bin_index)]
            assert np.array_equal(fr.Y, H @ fr.X)
            assert rel_err(estimate_ls(fr).H, H) <= 1e-6

    def test_snr_calibration(self):
        truth = self._truth(N=4, P=3, bins=tuple(float(b) for b in range(16)), K=10)
        frames, noise = gen_frames(truth, symbols_per_frame_M=64, snr_db=0.0, seed=10)
        sig = nz = 0.0
        for fr in frames:
            H = truth.data[fr.frame_index_k - 1, truth.bin_indices.index(fr.bin_index)]
            HX = H @ fr.X
            sig += np.sum(np.abs(HX) ** 2)
            nz += np.sum(np.abs(fr.Y - HX) ** 2)
        snr_emp = 10 * np.log10(sig / nz)
        assert abs(snr_emp - 0.0) <= 0.5

    def test_per_frame_snr_within_half_db(self):
        truth = self._truth(N=6, P=4, bins=(1.0, 2.0), K=3)
        frames, _ = gen_frames(truth, symbols_per_frame_M=256, snr_db=6.0, seed=11)
        for fr in frames:
            H = truth.data[fr.frame_index_k - 1, truth.bin_indices.index(fr.bin_index)]
            HX = H @ fr.X
            target = np.mean(np.abs(HX) ** 2) * 10 ** (-0.6)
            emp = np.mean(np.abs(fr.Y - HX) ** 2)
            assert abs(10 * np.log10(emp / target)) <= 0.5

    def test_single_symbol_frames_valid(self):
        truth = self._truth()
        frames, _ = gen_frames(truth, symbols_per_frame_M=1, snr_db=10.0, seed=12)
        for fr in frames:
            estimate_ls(fr)  # rank-deficient ridge path, no error

    def test_noise_is_stored_residual(self):
        truth = self._truth()
        frames, noise = gen_frames(truth, symbols_per_frame_M=8, snr_db=3.0, seed=13)
        for fr in frames:
            H = truth.data[fr.frame_index_k - 1, truth.bin_indices.index(fr.bin_index)]
            W = noise[(fr.frame_index_k, fr.bin_index)]
            assert np.linalg.norm(fr.Y - H @ fr.X) == np.linalg.norm(W)

    def test_determinism(self):
        truth = self._truth()
        f1, _ = gen_frames(truth, 4, 5.0, seed=14)
        f2, _ = gen_frames(truth, 4, 5.0, seed=14)
        for a, b in zip(f1, f2):
            assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)

    def test_estimator_oracle_loop(self):
        # noise-free, static, well-conditioned: every estimator recovers truth
        spec = SyntheticChannelSpec(
            num_rcv_N=4, num_src_P=3, bins_hz=(1.0, 5.0), num_frames_K=3,
            spatial_corr_strength=0.5, temporal_drift_ar1=1 - 1e-12, seed=15,
        )
        g = ring_graph(4)
        ds = gen_dataset(spec, g, symbols_per_frame_M=6, snr_db=np.inf)
        cfg = StareConfig(mu=0.0, nu=0.5, rho=1.0, max_iters_t_max=5000, residual_tol=1e-11)
        for method in ("ls", "mmse", "stare"):
            tensor = estimate_sequence(ds.frames, method=method, graph=g, cfg=cfg)
            for k in range(ds.true_channels.num_frames_K):
                for j in range(ds.true_channels.num_bins):
                    assert rel_err(tensor.data[k, j], ds.true_channels.data[k, j]) <= 1e-5


class TestTimeDomain:
    def test_identity_pipeline_recovery(self):
        recipe = TimeDomainRecipe(
            num_src_P=2, num_rcv_N=2, sample_rate_hz=1000.0, duration_s=8.0,
            tones=(ToneSpec(10.0),), mod_block_len=1000, tone_mod="block",
            gain_mode="identity", seed=5,
        )
        data = gen_time_domain(recipe)
        plan = SegmentationPlan(1000, 4, 1000.0, num_samples_T=data.src.num_samples)
        frames = frames_from_recordings(data.src, data.rcv, plan)
        fr = [f for f in frames if f.frame_index_k == 1 and f.bin_index == 10][0]
        H = estimate_ls(fr).H
        assert np.linalg.norm(H - np.eye(2)) / np.linalg.norm(np.eye(2)) <= 1e-3

    def test_two_resolution_leakage_comparison(self):
        # tones 0.5 Hz apart: at delta_f = 1 Hz they collide, at 0.1 Hz they resolve
        recipe = TimeDomainRecipe(
            num_src_P=2, num_rcv_N=2, sample_rate_hz=1000.0, duration_s=40.0,
            tones=(ToneSpec(10.0), ToneSpec(10.5)), mod_block_len=5000,
            tone_mod="block", gain_mode="random", seed=6,
        )
        data = gen_time_domain(recipe)

        def err_at_10hz(L):
            plan = SegmentationPlan(L, 4, 1000.0, num_samples_T=data.src.num_samples)
            frames = frames_from_recordings(data.src, data.rcv, plan, bandpass=None)
            b = round(10.0 / plan.delta_f_hz)
            fr = [f for f in frames if f.frame_index_k == 1 and f.bin_index == b][0]
            truth = data.gains[0, 0]  # static gains: block 0 is the channel
            return rel_err(estimate_ls(fr).H, truth)

        assert err_at_10hz(1000) > err_at_10hz(10000)

    def test_empty_recipe_zero_recordings(self):
        recipe = TimeDomainRecipe(
            num_src_P=2, num_rcv_N=3, sample_rate_hz=500.0, duration_s=1.0, tones=(), seed=7,
        )
        data = gen_time_domain(recipe)
        assert not data.src.samples.any()
        assert not data.rcv.samples.any()

    def test_tone_at_nyquist_rejected(self):
        with pytest.raises(InvalidRecipeError):
            TimeDomainRecipe(
                num_src_P=1, num_rcv_N=1, sample_rate_hz=1000.0, duration_s=1.0,
                tones=(ToneSpec(500.0),),
            )

    def test_seed_changes_data_not_shape(self):
        kw = dict(
            num_src_P=2, num_rcv_N=2, sample_rate_hz=1000.0, duration_s=2.0,
            tones=(ToneSpec(9.0),),
        )
        a = gen_time_domain(TimeDomainRecipe(seed=1, **kw))
        b = gen_time_domain(TimeDomainRecipe(seed=2, **kw))
        assert a.src.samples.shape == b.src.samples.shape
        assert not np.array_equal(a.src.samples, b.src.samples)

    def test_determinism(self):
        kw = dict(
            num_src_P=2, num_rcv_N=3, sample_rate_hz=1000.0, duration_s=2.0,
            tones=(ToneSpec(9.0), ToneSpec(11.0)), gain_drift_ar1=0.99, seed=8,
        )
        a = gen_time_domain(TimeDomainRecipe(**kw))
        b = gen_time_domain(TimeDomainRecipe(**kw))
        assert np.array_equal(a.rcv.samples, b.rcv.samples)
        assert np.array_equal(a.gains, b.gains)

    def test_truth_tensor_static_exact(self):
        recipe = TimeDomainRecipe(
            num_src_P=2, num_rcv_N=2, sample_rate_hz=1000.0, duration_s=8.0,
            tones=(ToneSpec(10.0),), tone_mod="block", mod_block_len=1000, seed=9,
        )
        data = gen_time_domain(recipe)
        plan = SegmentationPlan(1000, 4, 1000.0, num_samples_T=8000)
        truth = truth_tensor_for_plan(data, plan)
        assert truth.num_frames_K == 2
        j = truth.bin_indices.index(10)
        assert np.allclose(truth.data[0, j], data.gains[0, 0])
        # off-tone bins are zero
        assert not truth.data[0, truth.bin_indices.index(5)].any()


class TestRecipes:
    def test_packaged_recipes_load(self):
        names = packaged_recipe_names()
        assert "demo-small" in names and "demo-17x256" in names and "demo-freq" in names
        small = load_recipe("demo-small")
        assert isinstance(small, TimeDomainRecipe)
        big = load_recipe("demo-17x256")
        assert big.num_rcv_N == 17 and big.num_src_P == 256 and big.sample_rate_hz == 1000.0
        freq = load_recipe("demo-freq")
        assert isinstance(freq, FrequencyDomainRecipe)

    def test_file_recipe_roundtrip(self, tmp_path):
        doc = {
            "kind": "time_domain",
            "num_src_P": 2,
            "num_rcv_N": 2,
            "sample_rate_hz": 1000.0,
            "duration_s": 1.0,
            "tones": [{"freq_hz": 5.0}],
        }
        path = tmp_path / "r.json"
        path.write_text(json.dumps(doc))
        recipe = load_recipe(str(path))
        assert recipe.tones[0].freq_hz == 5.0

    def test_bad_recipe_kind(self, tmp_path):
        path = tmp_path / "r.json"
        path.write_text(json.dumps({"kind": "nope"}))
        with pytest.raises(InvalidRecipeError):
            load_recipe(str(path))

    def test_missing_recipe(self):
        with pytest.raises(FileNotFoundError):
            load_recipe("does-not-exist")

    def test_frequency_recipe_generates(self):
        recipe = load_recipe("demo-freq")
        ds = recipe.generate()
        assert ds.true_channels.shape_NP == (8, 16)
        assert len(ds.frames) == 6 * 4
