import numpy as np
import pytest

from diffworld import fit as fi
from diffworld import melcodec as mc
from diffworld import synth as sy
from diffworld.errors import ValidationError
from diffworld.features import WorldFeatures
from diffworld.losses import MslConfig
from helpers import two_formant_envelope

DESK = sy.SynthConfig(sample_rate=8000, fft_size=64)


def desk_problem(t=250, seed=0):
    """Synthetic target on the synthesizer's own manifold (matched seed)."""
    rs = np.random.default_rng(seed)
    bins = DESK.fft_size // 2 + 1
    env = two_formant_envelope(bins, DESK.sample_rate, centers=(500, 1700))
    sp = np.tile(env, (t, 1)) * rs.uniform(0.7, 1.3, size=(t, 1))
    ap = np.tile(np.linspace(0.1, 0.6, bins), (t, 1))
    f0 = 150.0 + 30.0 * np.sin(2 * np.pi * np.arange(t) / t)
    feats = WorldFeatures(f0=f0, sp=sp, ap=ap, sample_rate=DESK.sample_rate,
                          hop=DESK.hop, fft_size=DESK.fft_size)
    comp = mc.compress(feats, n_mels=16, ap_bands=4)
    target = sy.synthesize(comp, sy.SynthConfig.for_features(comp)).data
    return target, f0


class TestAdamStep:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        cfg = fi.FitConfig(learning_rate=0.1)
        out, state = fi.adam_step(params, grads, fi.AdamState.fresh(), cfg)
        np.testing.assert_array_equal(out["w"], params["w"])
        assert state.step == 1

    def test_first_step_moves_by_learning_rate(self):
        # with fresh state the bias-corrected update is g / (|g| + eps)
        g = np.array([3.0, -0.5, 10.0])
        cfg = fi.FitConfig(learning_rate=0.01)
        out, _ = fi.adam_step({"w": np.zeros(3)}, {"w": g},
                              fi.AdamState.fresh(), cfg)
        np.testing.assert_allclose(out["w"], -0.01 * np.sign(g), rtol=1e-6)

    def test_two_steps_match_naive_reimplementation(self):
        rs = np.random.default_rng(1)
        w = rs.normal(size=5)
        g1, g2 = rs.normal(size=5), rs.normal(size=5)
        cfg = fi.FitConfig(learning_rate=0.07, beta1=0.9, beta2=0.999,
                           adam_epsilon=1e-8)

        params, state = fi.adam_step({"w": w.copy()}, {"w": g1},
                                     fi.AdamState.fresh(), cfg)
        params, state = fi.adam_step(params, {"w": g2}, state, cfg)

        # naive double-loop oracle
        m = np.zeros(5)
        v = np.zeros(5)
        w_ref = w.copy()
        for t, g in ((1, g1), (2, g2)):
            for i in range(5):
                m[i] = 0.9 * m[i] + 0.1 * g[i]
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i]
                m_hat = m[i] / (1 - 0.9 ** t)
                v_hat = v[i] / (1 - 0.999 ** t)
                w_ref[i] -= 0.07 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(params["w"], w_ref, rtol=1e-12)

    def test_state_is_not_mutated(self):
        state = fi.AdamState.fresh()
        fi.adam_step({"w": np.ones(2)}, {"w": np.ones(2)}, state,
                     fi.FitConfig())
        assert state.step == 0 and not state.m


class TestFit:
    def test_empty_target_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            fi.fit(np.array([]), np.full(4, 100.0), synth_cfg=DESK)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="length"):
            fi.fit(np.zeros(10 * DESK.hop), np.full(4, 100.0), synth_cfg=DESK)

    def test_zero_learning_rate_is_identity(self):
        target, f0 = desk_problem(t=40)
        cfg = fi.FitConfig(steps=5, learning_rate=0.0, msl=MslConfig(scales=2))
        fitted, trace = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                               n_mels=16, ap_bands=4)
        s0, a0 = fi._default_init(40, 16, 4, mc.DEFAULT_EPSILON)
        np.testing.assert_array_equal(fitted.log_mel, s0)
        np.testing.assert_allclose(fitted.coded_ap, a0, rtol=1e-12)
        assert np.all(trace == trace[0])

    def test_deterministic(self):
        target, f0 = desk_problem(t=40)
        cfg = fi.FitConfig(steps=8, learning_rate=0.02, msl=MslConfig(scales=2))
        a = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK, n_mels=16, ap_bands=4)
        b = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK, n_mels=16, ap_bands=4)
        np.testing.assert_array_equal(a[0].log_mel, b[0].log_mel)
        np.testing.assert_array_equal(a[0].coded_ap, b[0].coded_ap)
        np.testing.assert_array_equal(a[1], b[1])

    def test_self_consistency_reduces_loss(self):
        target, f0 = desk_problem()
        cfg = fi.FitConfig(steps=120, learning_rate=0.03, seed=0,
                           msl=MslConfig(scales=3))
        fitted, trace = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                               n_mels=16, ap_bands=4)
        assert trace[-1] < 0.25 * trace[0]
        assert fitted.n_frames == f0.shape[0]
        assert np.all(fitted.coded_ap >= 0.0) and np.all(fitted.coded_ap <= 1.0)

    def test_smoothed_trace_non_increasing(self):
        target, f0 = desk_problem()
        cfg = fi.FitConfig(steps=120, learning_rate=0.03, seed=0,
                           msl=MslConfig(scales=3))
        _, trace = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                          n_mels=16, ap_bands=4)
        smooth = fi.smoothed_trace(trace, window=20)
        assert np.all(np.diff(smooth) <= 1e-9)

    def test_warm_start_from_init(self):
        target, f0 = desk_problem(t=40)
        cfg = fi.FitConfig(steps=6, learning_rate=0.02, msl=MslConfig(scales=2))
        first, _ = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                          n_mels=16, ap_bands=4)
        _, trace = fi.fit(target, f0, init=first, cfg=cfg, synth_cfg=DESK)
        fresh = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                       n_mels=16, ap_bands=4)[1]
        assert trace[0] < fresh[0]

    def test_joint_fir_fit_runs_and_updates_taps(self):
        target, f0 = desk_problem(t=60)
        fir = sy.FirPostFilter(length=32)
        cfg = fi.FitConfig(steps=15, learning_rate=0.02, msl=MslConfig(scales=2))
        _, trace = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                          n_mels=16, ap_bands=4, fir=fir)
        assert trace[-1] < trace[0]
        assert np.any(fir.free != 0.0)
        assert fir.taps[0] == 0.0

    def test_feature_loss_pulls_toward_reference(self):
        target, f0 = desk_problem(t=40)
        reference = mc.compress(mc.decompress(fi.fit(
            target, f0, cfg=fi.FitConfig(steps=1, learning_rate=0.0,
                                         msl=MslConfig(scales=1)),
            synth_cfg=DESK, n_mels=16, ap_bands=4)[0]), n_mels=16, ap_bands=4)
        cfg = fi.FitConfig(steps=10, learning_rate=0.02, alpha=5.0,
                           msl=MslConfig(scales=2))
        fitted, trace = fi.fit(target, f0, cfg=cfg, synth_cfg=DESK,
                               n_mels=16, ap_bands=4, reference=reference)
        assert np.all(np.isfinite(trace))

    def test_waveform_input_checks_sample_rate(self):
        from diffworld.features import Waveform
        target, f0 = desk_problem(t=40)
        wave = Waveform(target, 22050)  # wrong rate for the 8 kHz config
        with pytest.raises(ValidationError, match="rate"):
            fi.fit(wave, f0, cfg=fi.FitConfig(steps=1, msl=MslConfig(scales=1)),
                   synth_cfg=DESK)

    def test_waveform_input_supplies_config(self):
        from diffworld.features import Waveform
        target, f0 = desk_problem(t=40)
        wave = Waveform(target, DESK.sample_rate)
        cfg = fi.FitConfig(steps=2, learning_rate=0.01, msl=MslConfig(scales=1))
        fitted, trace = fi.fit(wave, f0, cfg=cfg, synth_cfg=DESK,
                               n_mels=16, ap_bands=4)
        assert fitted.sample_rate == DESK.sample_rate
        assert trace.shape == (2,)

    def test_divergence_aborts_with_step_index(self):
        target, f0 = desk_problem(t=40)
        cfg = fi.FitConfig(steps=30, learning_rate=1e5, msl=MslConfig(scales=2))
        with np.errstate(all="ignore"):
            with pytest.raises(fi.FitDivergence, match=r"step \d+"):
                fi.fit(target, f0, cfg=cfg, synth_cfg=DESK, n_mels=16, ap_bands=4)


class TestSmoothedTrace:
    def test_short_trace_passthrough(self):
        np.testing.assert_array_equal(fi.smoothed_trace([3.0, 2.0], 20), [3.0, 2.0])

    def test_window_average(self):
        out = fi.smoothed_trace([1.0, 2.0, 3.0, 4.0], 2)
        np.testing.assert_allclose(out, [1.5, 2.5, 3.5])
