import numpy as np
import pytest
from gradcheck import REL_TOL, check_gradients
from hypothesis import given, settings
from hypothesis import strategies as st

from freqprint.experiments import apply_conv, single_conv_models, training_images
from freqprint.fingerprint import (
    Fingerprint,
    LinearProbe,
    SpectralFingerprint,
    attenuation_curve,
    averaged_kernel_spectrum,
    azimuthal_integral,
    cosine,
    extract_fingerprint,
    highpass_mask,
    hp_ratio,
    image_feature,
    image_hp_ratio,
    kernel_spectrum_similarity,
    lattice_peak_ratio,
    log_spectra,
    mean_magnitude_spectrum,
    weight_map_agreement,
)
from freqprint.freq_algebra import UpsampleMode, upsample
from freqprint.numeric import dft2, make_rng, power_law_image, power_law_rgb


def min_image_radius(M):
    d = np.minimum(np.arange(M), M - np.arange(M))
    return np.hypot(d[:, None], d[None, :])


def test_mean_magnitude_single_and_oracle():
    rng = make_rng(0)
    x = rng.uniform(size=(1, 6, 6))
    np.testing.assert_allclose(mean_magnitude_spectrum([x]), np.abs(dft2(x[0])))
    y = 0.7 - x
    ref = np.zeros((6, 6))
    for img in (x[0], y[0]):
        F = dft2(img)
        for u in range(6):
            for v in range(6):
                ref[u, v] += abs(F[u, v]) / 2
    np.testing.assert_allclose(mean_magnitude_spectrum([x, y]), ref, atol=1e-12)
    with pytest.raises(ValueError):
        mean_magnitude_spectrum([np.zeros((1, 4, 4)), np.zeros((1, 4, 6))])


def test_highpass_mask_by_hand():
    # 8x8 lattice: radius < 2 (= M/4) bins are the DC cross and its diagonals
    S = np.ones((8, 8))
    out = highpass_mask(S, 0.5)
    expected = np.ones((8, 8))
    for u in range(8):
        for v in range(8):
            du, dv = min(u, 8 - u), min(v, 8 - v)
            if du * du + dv * dv < 4:
                expected[u, v] = 0
    np.testing.assert_array_equal(out, expected)
    assert (out == 0).sum() == 9
    np.testing.assert_array_equal(highpass_mask(out, 0.5), out)
    tiny = highpass_mask(S, 1e-9)
    assert tiny[0, 0] == 0 and tiny.sum() == 63
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            highpass_mask(S, bad)


def test_azimuthal_integral_lattice_count():
    M = 16
    ai = azimuthal_integral(np.ones((M, M)))
    r = np.rint(min_image_radius(M)).astype(int)
    counts = np.array([(r == k).sum() for k in range(M // 2)])
    np.testing.assert_array_equal(ai, counts)
    assert np.all(azimuthal_integral(np.zeros((8, 8))) == 0)


def test_azimuthal_homogeneity_and_crop():
    x = make_rng(1).standard_normal((12, 12))
    a1, a2 = azimuthal_integral(dft2(x)), azimuthal_integral(dft2(2.5 * x))
    np.testing.assert_allclose(a2, 6.25 * a1, rtol=1e-12)
    assert np.all(a1 >= 0) and a1.sum() <= np.sum(np.abs(dft2(x)) ** 2)
    # non-square spectra are centre-cropped to the smaller side
    assert azimuthal_integral(np.ones((8, 12))).shape == (4,)


def test_hp_ratio_trivia():
    assert hp_ratio(dft2(np.full((8, 8), 3.0))) == 0.0
    r, flag = hp_ratio(np.zeros((8, 8)), return_flag=True)
    assert r == 0.0 and flag


def test_hp_ratio_white_noise_expectation():
    M = 64
    r = np.rint(min_image_radius(M)).astype(int)
    inside = r < M // 2
    expected = (inside & (r >= M // 4)).sum() / inside.sum()
    rng = make_rng(2)
    got = np.mean([hp_ratio(dft2(rng.standard_normal((M, M)))) for _ in range(50)])
    assert abs(got - expected) <= 0.05


def test_bilinear_upsample_attenuates():
    for s in range(20):
        x = power_law_image(32, 32, rng=make_rng(s, 3))
        up = upsample(x, UpsampleMode("bilinear"), boundary="circular")[0]
        assert hp_ratio(dft2(up)) < hp_ratio(dft2(x))


def test_nearest_can_raise_hp_on_smooth_input():
    # replication leaks the low band into the high band through the box
    # kernel's slow roll-off, which outweighs a steep input's own high band
    rises = 0
    for s in range(20):
        x = power_law_image(32, 32, 3.4, 3.4, make_rng(s, 4))
        up = upsample(x, UpsampleMode("nearest"), boundary="circular")[0]
        rises += hp_ratio(dft2(up)) > hp_ratio(dft2(x))
    assert rises > 0


def test_attenuation_curve_chain():
    img = power_law_rgb(16, 16, make_rng(4))
    ident = [("a", lambda x: x), ("b", lambda x: x)]
    curve = attenuation_curve(ident, img)
    assert [n for n, _ in curve] == ["a", "b"]
    assert curve[0][1] == curve[1][1] == image_hp_ratio(img)
    bil = [("up", lambda x: upsample(x, UpsampleMode("bilinear"), "circular"))]
    assert attenuation_curve(bil, img)[0][1] < image_hp_ratio(img)


def test_fingerprint_basics():
    X = training_images(5, 16, 0)
    fp = extract_fingerprint(X)
    assert fp.dims == (16, 16) and fp.n_images == 5
    assert abs(np.linalg.norm(fp.vector) - 1) < 1e-9
    np.testing.assert_allclose(extract_fingerprint(X[::-1]).vector, fp.vector, atol=1e-12)
    np.testing.assert_array_equal(image_feature(X[0]).vector, extract_fingerprint(X[:1]).vector)
    st_fp = extract_fingerprint(X, channel="stack")
    assert st_fp.dims == (3, 16, 16) and abs(np.linalg.norm(st_fp.vector) - 1) < 1e-9
    with pytest.raises(ValueError):
        extract_fingerprint([])
    with pytest.raises(ValueError):
        Fingerprint(np.ones(5), (2, 2), 0.5, 1)


def test_spectral_fingerprint_transform():
    X = training_images(4, 16, 1)
    for channel in ("mean", "stack"):
        feat = SpectralFingerprint(channel=channel).fit()
        F = feat.transform(X)
        for i in range(4):
            np.testing.assert_allclose(F[i], image_feature(X[i], channel=channel).vector,
                                       atol=1e-12)
    assert SpectralFingerprint().get_params()["cutoff"] == 0.5


def test_cosine():
    a = make_rng(5).standard_normal(7)
    b = make_rng(6).standard_normal(7)
    assert cosine(a, a) == pytest.approx(1.0)
    assert cosine(a, b) == pytest.approx(cosine(b, a))
    ref = sum(x * y for x, y in zip(a, b)) / (sum(x * x for x in a) * sum(y * y for y in b)) ** 0.5
    assert cosine(a, b) == pytest.approx(ref, abs=1e-12)
    assert cosine(np.eye(3)[0], np.eye(3)[1]) == 0.0
    with pytest.raises(ValueError):
        cosine(np.ones(3), np.ones(4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10))
def test_kernel_similarity_scale_invariant(seed, alpha):
    w = single_conv_models(1, seed)[0]
    Y = apply_conv(w, training_images(3, 16, seed % 97))
    assert kernel_spectrum_similarity(w, alpha * Y) == pytest.approx(
        kernel_spectrum_similarity(w, Y), abs=1e-12)


def test_kernel_similarity_delta_kernel():
    X = training_images(4, 16, 2)
    w = np.zeros((3, 3, 3, 3))
    for i in range(3):
        w[i, i, 1, 1] = 1.0
    Y = apply_conv(w, X)
    np.testing.assert_allclose(Y, X, atol=1e-12)
    # a delta has a flat spectrum, so the score is the image's similarity to flat
    ref = averaged_kernel_spectrum(w, (16, 16))
    assert np.allclose(ref, 1 / 3)
    flat = highpass_mask(np.ones((16, 16)))
    base = np.mean([cosine(highpass_mask(np.abs(dft2(x[0]))), flat) for x in X])
    assert kernel_spectrum_similarity(w, Y) == pytest.approx(base, abs=1e-12)


def test_lattice_peak_ratio():
    S = np.ones((16, 16))
    S[::4, ::4] = 20.0
    assert lattice_peak_ratio(S, 2) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        lattice_peak_ratio(np.ones((12, 12)), 3)


def test_probe_separable_and_errors():
    rng = make_rng(7)
    X = np.concatenate([rng.normal(0, 1, (20, 4, 4)), rng.normal(3, 1, (20, 4, 4))])
    y = ["a"] * 20 + ["b"] * 20
    probe = LinearProbe(epochs=200).fit(X, y)
    assert probe.score(X, y) == 1.0
    assert probe.weight_maps().shape == (2, 4, 4)
    np.testing.assert_allclose(probe.predict_proba(X).sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        LinearProbe().fit(X, ["a"] * 40)
    with pytest.raises(ValueError):
        LinearProbe().fit(X[:3], ["a", "a", "b"])


def test_probe_gradient_matches_finite_differences():
    rng = make_rng(8)
    probe = LinearProbe(l2=0.1)
    Z = rng.standard_normal((12, 6))
    Y = np.eye(3)[rng.integers(0, 3, 12)]
    params = {"W": rng.standard_normal((3, 6)), "b": rng.standard_normal(3)}

    def loss_and_grads():
        loss, gW, gb = probe.loss_and_grads(params["W"], params["b"], Z, Y)
        return loss, {"W": gW, "b": gb}

    assert check_gradients(params.__getitem__, loss_and_grads) < REL_TOL


def test_probe_unstandardized_keeps_units():
    rng = make_rng(9)
    X = np.concatenate([rng.normal(0, 1, (15, 3, 3)), rng.normal(2, 1, (15, 3, 3))])
    y = [0] * 15 + [1] * 15
    probe = LinearProbe(standardize=False, lr=0.1).fit(X, y)
    assert np.all(probe.scale_ == 1.0)
    assert probe.score(X, y) >= 0.9


def test_log_spectra_shapes():
    X = training_images(2, 8, 3)
    assert log_spectra(X).shape == (2, 8, 8)
    assert log_spectra(X, "stack").shape == (2, 3, 8, 8)


def test_weight_map_agreement():
    refs = make_rng(10).standard_normal((3, 4, 4))
    # adding a map shared by all classes leaves softmax predictions unchanged
    np.testing.assert_allclose(weight_map_agreement(2 * refs + 5.0, refs), 1.0)
    with pytest.raises(ValueError):
        weight_map_agreement(refs, refs[:2])
