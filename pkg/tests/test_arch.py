from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqprint.arch import (
    ENUMS,
    ArchSimulator,
    ArchSpec,
    BlockSpec,
    ParseError,
    components,
    parse,
    to_text,
)
from freqprint.arch.dsl import _tokenize
from freqprint.experiments import training_images
from freqprint.fingerprint import (
    averaged_kernel_spectrum,
    cosine,
    highpass_mask,
    lattice_mask,
    mean_magnitude_spectrum,
)
from freqprint.freq_algebra import NEAREST_KERNEL, kernel_spectrum
from freqprint.numeric import make_rng, power_law_rgb

GOLDEN = Path(__file__).parent / "golden"
EXAMPLE = "input(3,32,32) block(u=deconv,k=3,ch=16,pad=zero,norm=batch,act=relu,sc=false,seq=post)"


def test_grammar_example():
    spec = parse(EXAMPLE)
    assert spec.input == (3, 32, 32)
    assert spec.blocks == (BlockSpec("deconv", 3, 16, "zero", "batch", "relu", False, "post"),)
    assert spec.output_shape == (16, 64, 64)
    spaced = parse("  input ( 3 , 32,32 )\n\n block( u = deconv , k=3, ch=16 ,norm=batch,"
                   "act=relu )  # trailing comment\n")
    assert spaced == spec


def test_unknown_enum_value_reports_position():
    with pytest.raises(ParseError) as err:
        parse("input(3,8,8)\nblock(u=bicubic,k=3,ch=4)")
    e = err.value
    assert e.message == "unknown enum value 'bicubic' for u"
    assert (e.line, e.col) == (2, 9)
    assert str(e).startswith("line 2, col 9:")


@pytest.mark.parametrize("text, fragment", [
    ("input(3,8,8) block(u=nearest,k=3,ch=4,color=red)", "unknown key"),
    ("input(3,8,8) block(u=nearest,k=3,ch=4,k=5)", "duplicate key"),
    ("input(3,8,8) block(u=nearest,ch=4)", "missing required key 'k'"),
    ("input(3,8,8) block(u=nearest,k=4,ch=4)", "odd"),
    ("input(3,8,8) block(u=nearest,k=3,ch=0)", "positive"),
    ("input(3,1024,1024)" + " block(u=nearest,k=1,ch=1)" * 3, "resolution exceeds"),
    ("input(3,8,8)", "expected"),
    ("input(3,8,8) block(u=nearest;k=3,ch=4)", "unexpected character"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ParseError, match=fragment) as err:
        parse(text)
    assert err.value.line >= 1 and err.value.col >= 1


blocks = st.builds(
    BlockSpec,
    u=st.sampled_from(ENUMS["u"]), k=st.sampled_from([1, 3, 5, 7]), ch=st.integers(1, 64),
    pad=st.sampled_from(ENUMS["pad"]), norm=st.sampled_from(ENUMS["norm"]),
    act=st.sampled_from(ENUMS["act"]), sc=st.booleans(), seq=st.sampled_from(ENUMS["seq"]))
specs = st.builds(ArchSpec, st.tuples(st.integers(1, 4), st.integers(1, 64), st.integers(1, 64)),
                  st.lists(blocks, min_size=1, max_size=5))


@settings(max_examples=100, deadline=None)
@given(specs)
def test_round_trip(spec):
    text = to_text(spec)
    assert parse(text) == spec
    assert to_text(parse(text)) == text


def corruptions(text):
    toks = [t for t in _tokenize(text) if t[0] != "eof"]
    for i, (kind, value, *_) in enumerate(toks):
        others = [t[1] for j, t in enumerate(toks) if j != i]
        yield " ".join(others)
        bad = {"int": "0", "ident": "zzz", "punct": ";" if value != "=" else ","}[kind]
        yield " ".join(others[:i] + [bad] + others[i:])


@settings(max_examples=20, deadline=None)
@given(specs)
def test_single_token_corruptions_are_rejected(spec):
    for bad in corruptions(to_text(spec)):
        with pytest.raises(ParseError) as err:
            parse(bad)
        assert err.value.col >= 1


def test_canonical_golden():
    assert to_text(parse(EXAMPLE)) == (GOLDEN / "one_block.arch").read_text()


def test_empty_block_list_rejected():
    with pytest.raises(ValueError):
        ArchSpec((3, 8, 8), [])
    with pytest.raises(ValueError):
        BlockSpec("bicubic", 3, 4)


TWO_BLOCK = """input(3,16,16)
block(u=bilinear,k=3,ch=4,norm=instance,act=relu,sc=true)
block(u=nearest,k=3,ch=3,pad=reflect,seq=pre,norm=batch,act=tanh)
"""


def test_forward_shape_taps_and_determinism():
    img = power_law_rgb(16, 16, make_rng(0))
    sim = ArchSimulator(TWO_BLOCK, seed=3).fit()
    out, taps = sim.forward(img[None], taps=True)
    assert out.shape == (1, 3, 64, 64) == (1,) + sim.spec_.output_shape
    assert [n for n, _ in taps] == components(sim.spec_)
    assert components(sim.spec_) == ["b1.up", "b1.conv", "b1.norm", "b1.act", "b1.sc",
                                     "b2.up", "b2.norm", "b2.act", "b2.conv"]
    again = ArchSimulator(TWO_BLOCK, seed=3).fit().transform(img[None])
    np.testing.assert_array_equal(out, again)
    other = ArchSimulator(TWO_BLOCK, seed=4).fit().transform(img[None])
    assert not np.allclose(out, other)
    with pytest.raises(ValueError):
        sim.transform(np.zeros((1, 3, 8, 8)))
    assert ArchSimulator(TWO_BLOCK).get_params()["seed"] == 0


def test_upsample_taps_attenuate_on_power_law():
    from freqprint.fingerprint import attenuation_curve, image_hp_ratio
    spec = "input(3,16,16) block(u=bilinear,k=3,ch=3,act=relu) block(u=bilinear,k=3,ch=3)"
    for s in range(10):
        img = power_law_rgb(16, 16, make_rng(s, 1))
        curve = [("in", image_hp_ratio(img))] + attenuation_curve(
            ArchSimulator(spec, s).fit(), img)
        for (_, h0), (name, h1) in zip(curve, curve[1:]):
            if name.endswith(".up"):
                assert h1 < h0


def test_predict_flat_input():
    sim = ArchSimulator("input(2,8,8) block(u=nearest,k=3,ch=3)", seed=1).fit()
    P = sim.predict_spectrum(np.ones((8, 8)))
    w = sim.weights_[0]["conv"]
    conv = np.mean([averaged_kernel_spectrum(w, (16, 16), o) for o in range(3)], axis=0)
    np.testing.assert_allclose(P, np.abs(kernel_spectrum(NEAREST_KERNEL, (16, 16))) * conv,
                               atol=1e-12)
    with pytest.raises(ValueError):
        sim.predict_spectrum(np.ones((4, 4)))


@pytest.mark.parametrize("text", [TWO_BLOCK, "input(1,8,8) block(u=deconv,k=5,ch=2)"])
def test_predict_homogeneous_in_conv_kernels(text):
    sim = ArchSimulator(text, seed=2).fit()
    S = np.abs(make_rng(3).standard_normal(sim.spec_.input[1:]))
    base = sim.predict_spectrum(S)
    alpha = 1.7
    for w in sim.weights_:
        w["conv"] = alpha * w["conv"]
    L = len(sim.spec_.blocks)
    scaled = sim.predict_spectrum(S)
    # shortcut branches are not scaled by the conv kernels
    if any(b.sc for b in sim.spec_.blocks):
        assert np.all(scaled >= base)
    else:
        np.testing.assert_allclose(scaled, alpha**L * base, rtol=1e-12)


@pytest.fixture(scope="module")
def small_batch():
    return training_images(200, 16, 0)


def test_deconv_prediction_matches_measurement(small_batch):
    S = mean_magnitude_spectrum(small_batch)
    for s in range(4):
        sim = ArchSimulator("input(3,16,16) block(u=deconv,k=3,ch=4,act=relu)", seed=s).fit()
        measured = mean_magnitude_spectrum(sim.transform(small_batch))
        assert cosine(highpass_mask(sim.predict_spectrum(S)), highpass_mask(measured)) >= 0.7


def test_two_block_deconv_lattice_peaks(small_batch):
    S = mean_magnitude_spectrum(small_batch)
    lat = lattice_mask((64, 64), 2)
    lat[0, 0] = False
    k = int(lat.sum())

    def top(spec):
        v = spec.copy()
        v[0, 0] = -np.inf
        return np.argsort(v.ravel())[::-1][:k]

    text = "input(3,16,16) block(u=deconv,k=3,ch=4,act=relu) block(u=deconv,k=3,ch=3)"
    for s in range(6):
        sim = ArchSimulator(text, seed=s).fit()
        predicted = top(sim.predict_spectrum(S))
        measured = top(mean_magnitude_spectrum(sim.transform(small_batch)))
        assert lat.ravel()[predicted].all()
        assert lat.ravel()[measured].sum() >= 0.6 * k
