"""Acceptance run: one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import numpy as np
from conftest import record
from gradcheck import REL_TOL, check_gradients

from freqprint import cli
from freqprint.arch import ArchSimulator
from freqprint.attribution import roc
from freqprint.experiments import (
    kernel_similarity_experiment,
    open_set_experiment,
    pool_images,
    probe_experiment,
    single_conv_spectra,
    training_images,
)
from freqprint.fingerprint import (
    LinearProbe,
    attenuation_curve,
    image_hp_ratio,
    lattice_peak_ratio,
    weight_map_agreement,
)
from freqprint.freq_algebra import (
    ConvKernel,
    NormParams,
    UpsampleMode,
    conv2_spatial,
    conv2_via_dft,
    normalize,
    normalize_freq,
    srelu_freq,
    srelu_poly,
    upsample,
    zero_interleave,
)
from freqprint.io import load_pool, read_csv, save_image
from freqprint.numeric import dft2, make_rng, power_law_rgb
from freqprint.synth import BlockConfig, FreqGenerator, GridGenerator
from test_attribution import mann_whitney
from test_freq_algebra import separable_oracle


def test_criterion_01_convolution_theorem():
    t0 = time.perf_counter()
    rng = make_rng(1001)
    worst = 0.0
    for ci in (1, 2, 3):
        for co in (1, 2, 3):
            for k in (1, 3, 5, 7):
                for n in range(k, 17, 3):
                    for mode in ("same", "valid", "full"):
                        x = rng.standard_normal((ci, n, 16))
                        K = ConvKernel(rng.standard_normal((ci, co, k, k)), mode)
                        worst = max(worst, np.max(np.abs(conv2_spatial(x, K) - conv2_via_dft(x, K))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10
    record(1, ok, f"max |spatial - dft| = {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_spectrum_replication():
    rng = make_rng(1002)
    worst = 0.0
    for _ in range(50):
        M, N = rng.integers(1, 17, size=2)
        x = rng.standard_normal((M, N))
        F = dft2(x)
        G = dft2(zero_interleave(x))
        for blk in (G[:M, :N], G[M:, :N], G[:M, N:], G[M:, N:]):
            worst = max(worst, np.max(np.abs(blk - F)))
    record(2, worst < 1e-9, f"max replica deviation = {worst:.2e}")
    assert worst < 1e-9


def test_criterion_03_unified_upsampling():
    rng = make_rng(1003)
    near, bil = 0.0, 0.0
    for _ in range(50):
        H, W = rng.integers(2, 12, size=2)
        x = rng.standard_normal((H, W))
        rep = np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)
        near = max(near, np.max(np.abs(upsample(x, UpsampleMode("nearest"))[0] - rep)))
        out = upsample(x, UpsampleMode("bilinear"))[0]
        bil = max(bil, np.max(np.abs(out[:-1, :-1] - separable_oracle(x)[:-1, :-1])))
    ok = near == 0.0 and bil < 1e-9
    record(3, ok, f"nearest max diff = {near:.1e}, bilinear interior = {bil:.2e}")
    assert ok


def test_criterion_04_norm_and_activation_identities():
    rng = make_rng(1004)
    worst = {"batch": 0.0, "instance": 0.0, "srelu": 0.0}
    for _ in range(100):
        x = rng.standard_normal((2, 3, 8, 8)) * rng.uniform(0.5, 3) + rng.standard_normal()
        for kind in ("batch", "instance"):
            p = NormParams(kind, gamma=rng.uniform(0.5, 2, 3), beta=rng.standard_normal(3))
            err = np.max(np.abs(dft2(normalize(x, p)) - normalize_freq(dft2(x), p)))
            worst[kind] = max(worst[kind], err)
        y = rng.standard_normal((8, 8))
        worst["srelu"] = max(worst["srelu"],
                             np.max(np.abs(dft2(srelu_poly(y)) - srelu_freq(dft2(y)))))
    ok = max(worst.values()) < 1e-9
    record(4, ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))
    assert ok


def test_criterion_05_gradients():
    t0 = time.perf_counter()
    worst = {}
    # every upsampler, norm, activation and ordering appears at least once
    configs = [
        BlockConfig(2, "post", "deconv", "tanh", "batch", 11),
        BlockConfig(2, "pre", "bilinear", "sigmoid", "instance", 12),
        BlockConfig(1, "post", "nearest", "relu", "none", 13),
        BlockConfig(1, "pre", "deconv", "none", "batch", 14),
        BlockConfig(1, "pre", "nearest", "relu", "instance", 15),
    ]
    for cfg in configs:
        m = FreqGenerator.from_config(cfg, feature_dim=3).build()
        X = np.stack([power_law_rgb(8, 8, make_rng(cfg.seed, i)) for i in range(2)])
        worst[cfg.model_id] = check_gradients(m.net_.get_param, lambda: m.loss_and_grads(X))
    g = GridGenerator(3, seed=5).build()
    Z = g.sample_input(2, 16, make_rng(6))
    worst["grid"] = check_gradients(g.net_.get_param, lambda: g.loss_and_grads(Z))
    rng = make_rng(1005)
    probe = LinearProbe(l2=0.05)
    Zp, Yp = rng.standard_normal((10, 7)), np.eye(4)[rng.integers(0, 4, 10)]
    params = {"W": rng.standard_normal((4, 7)), "b": rng.standard_normal(4)}

    def probe_loss():
        loss, gW, gb = probe.loss_and_grads(params["W"], params["b"], Zp, Yp)
        return loss, {"W": gW, "b": gb}

    worst["probe"] = check_gradients(params.__getitem__, probe_loss)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < REL_TOL and elapsed < 60
    record(5, ok, f"worst relative error {max(worst.values()):.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_06_desk_verification(desk_pool, tmp_path):
    pool_dir, train_seconds = desk_pool
    t0 = time.perf_counter()
    assert cli.main(["synth", "--pool", str(pool_dir), "--n", "200", "--out",
                     str(tmp_path / "ds")]) == 0
    labels = read_csv(tmp_path / "ds" / "labels.csv")
    assert len({r["model_id"] for r in labels}) == 20
    assert cli.main(["verify", "--pool", str(pool_dir), "--out", str(tmp_path / "v")]) == 0
    elapsed = train_seconds + time.perf_counter() - t0
    s = json.loads((tmp_path / "v" / "summary.json").read_text())["summary"]
    ok = (s["10"]["auc"] >= 0.95 and s["10"]["accuracy"] >= 0.90 and s["1"]["auc"] >= 0.80
          and s["10"]["n_pairs"] == 1000 and elapsed < 600)
    record(6, ok, f"N_S=10 AUC {s['10']['auc']:.3f} acc {s['10']['accuracy']:.3f}; "
                  f"N_S=1 AUC {s['1']['auc']:.3f}; {elapsed:.0f} s end to end")
    assert ok


def test_criterion_07_kernel_spectrum_similarity():
    mean, sims = kernel_similarity_experiment(n_models=5, n_images=200, size=64, seed=0)
    record(7, mean >= 0.7, f"mean high-pass cosine {mean:.3f} "
                           f"(per model {', '.join(f'{s:.2f}' for s in sims)})")
    assert mean >= 0.7


def _desk_split(pool_dir):
    pool = load_pool(pool_dir)
    images = pool_images(pool, training_images(40, 96, 1), 100, seed=0, crop=64)
    ids = sorted(images)
    perm = [ids[i] for i in make_rng(0, 61).permutation(len(ids))]
    return images, sorted(perm[:10]), sorted(perm[10:15])


def test_criterion_08_open_set(desk_pool):
    images, known, unknown = _desk_split(desk_pool[0])
    _, s = open_set_experiment(images, known, unknown)
    ok = s["accuracy"] >= 0.85 and s["auc"] >= 0.85
    record(8, ok, f"closed-set accuracy {s['accuracy']:.3f}, known/unknown AUC {s['auc']:.3f}")
    assert ok


ATTENUATION_ARCHS = {
    "bilinear-first": """input(3,32,32)
block(u=bilinear,k=3,ch=4,act=relu)
block(u=nearest,k=3,ch=4,norm=instance,act=tanh,pad=reflect)
block(u=bilinear,k=5,ch=3,sc=true,seq=pre,norm=batch,act=sigmoid)
""",
    "nearest-first": """input(3,32,32)
block(u=nearest,k=3,ch=4,act=relu)
block(u=bilinear,k=3,ch=3,norm=batch,act=tanh)
""",
}


def test_criterion_09_attenuation():
    failing = {}
    for name, text in ATTENUATION_ARCHS.items():
        bad = 0
        for s in range(20):
            img = power_law_rgb(32, 32, make_rng(s, 90))
            curve = [("input", image_hp_ratio(img))] + attenuation_curve(
                ArchSimulator(text, seed=s).fit(), img)
            bad += any(tap.endswith(".up") and not h1 < h0
                       for (_, h0), (tap, h1) in zip(curve, curve[1:]))
        failing[name] = bad
    ok = not any(failing.values())
    record(9, ok, "; ".join(f"{k}: {20 - v}/20 seeds decrease at every tap"
                            for k, v in failing.items()))
    assert ok


def test_criterion_10_grid_lattice():
    ratios = {}
    for n in (3, 4, 5):
        noise = GridGenerator(n, seed=0).fit().generate(8, 256, make_rng(1))
        ratios[n] = lattice_peak_ratio(np.abs(dft2(noise)).mean(axis=(0, 1)), n)
    ok = min(ratios.values()) >= 10
    record(10, ok, ", ".join(f"n={n}: {r:.1f}" for n, r in ratios.items()))
    assert ok


def test_criterion_11_linear_probe(desk_pool):
    images, known, _ = _desk_split(desk_pool[0])
    _, acc = probe_experiment({m: images[m] for m in known}, 70)
    conv_images, refs = single_conv_spectra(5, 200, 32, 0)
    probe, conv_acc = probe_experiment(conv_images, 150, channel="mean")
    agree = weight_map_agreement(probe.weight_maps(), refs)
    ok = acc >= 0.90 and agree.mean() > 0.5
    record(11, ok, f"desk held-out accuracy {acc:.3f}; single-conv weight-map cosine "
                   f"{agree.mean():.3f} (per class {', '.join(f'{a:.2f}' for a in agree)}, "
                   f"probe accuracy {conv_acc:.3f})")
    assert ok


def test_criterion_12_auc_oracle():
    rng = make_rng(1012)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n).astype(bool)
        labels[:2] = True, False
        scores = rng.integers(0, 5, n) / 4 if i % 2 else rng.standard_normal(n)
        worst = max(worst, abs(roc(scores, labels).auc - mann_whitney(scores, labels)))
    record(12, worst < 1e-9, f"max |trapezoid - Mann-Whitney| = {worst:.1e}")
    assert worst < 1e-9


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_13_reproducible_cli(desk_pool, tmp_path):
    pool_dir = desk_pool[0]
    src = tmp_path / "src"
    for name in ("a", "b", "c"):
        (src / name).mkdir(parents=True)
        for i in range(4):
            save_image(power_law_rgb(16, 16, make_rng(ord(name), i)), src / name / f"{i}.ppm")
    (src / "n.arch").write_text("input(3,16,16)\nblock(u=deconv,k=3,ch=3,act=relu)\n")

    def runs(out):
        out.mkdir()
        cmds = [
            ["pool", "train", "--n-freq", "2", "--n-grid", "1", "--max-steps", "5",
             "--n-train", "4", "--crop", "16", "--out", out / "pool"],
            ["synth", "--pool", pool_dir, "--n", "20", "--out", out / "synth"],
            ["verify", "--pool", pool_dir, "--pairs", "50", "--n-images", "20",
             "--out", out / "verify"],
            ["identify", "--gallery", src, "--probes", src, "--out", out / "identify"],
            ["fingerprint", "--images", src / "a", "--out", out / "a.fpt"],
            ["fingerprint", "--images", src / "b", "--out", out / "b.fpt"],
            ["lineage", "--fingerprints", out / "a.fpt", out / "b.fpt", "--out", out / "lin.csv"],
            ["attenuation", "--arch", src / "n.arch", "--input", src / "a" / "0.ppm",
             "--out", out / "att.csv"],
            ["spectrum", "--image", src / "a" / "0.ppm", "--out", out / "s.csv"],
        ]
        codes = [cli.main([str(a) for a in c]) for c in cmds]
        assert codes == [0] * len(cmds)
        return _snapshot(out)

    first, second = runs(tmp_path / "r1"), runs(tmp_path / "r2")
    # paths inside run.json name the output directory, so compare with it masked
    norm = {k: v.replace(b"/r2", b"/r1") for k, v in second.items()}
    differing = [k for k in first if first[k] != norm.get(k)]
    ok = first.keys() == norm.keys() and not differing
    record(13, ok, f"{len(first)} output files, {len(differing)} differ")
    assert ok
