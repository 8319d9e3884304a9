"""Desk-scale experiment pipelines shared by the CLI and the test-suite."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from .attribution import (
    UNKNOWN,
    OpenSetIdentifier,
    best_accuracy,
    lineage_matrix,
    make_pairs,
    open_set_metrics,
    roc,
    score_pairs,
)
from .fingerprint import (
    LinearProbe,
    SpectralFingerprint,
    extract_fingerprint,
    kernel_spectrum_similarity,
    log_spectra,
)
from .freq_algebra import conv_padding, convolve, kernel_spectrum
from .nn import uniform_init
from .numeric import make_rng, power_law_rgb
from .synth import (
    FreqGenerator,
    GridGenConfig,
    GridGenerator,
    enumerate_pool,
    random_crop,
)

__all__ = [
    "training_images",
    "train_model",
    "train_pool",
    "select_desk_pool",
    "model_images",
    "pool_images",
    "verification_experiment",
    "open_set_experiment",
    "probe_experiment",
    "kernel_similarity_experiment",
    "single_conv_models",
    "single_conv_spectra",
    "lineage_experiment",
]


def training_images(n, size, seed):
    """``n`` power-law RGB images, one sub-stream per image."""
    return np.stack([power_law_rgb(size, size, make_rng(seed, 100, i)) for i in range(n)])


def train_model(config, images=None, **kwargs):
    if isinstance(config, GridGenConfig):
        return GridGenerator(config.num_blocks, config.seed, config.channels, **kwargs).fit()
    return FreqGenerator.from_config(config, **kwargs).fit(images)


def _train_job(args):
    config, images, kwargs = args
    return train_model(config, images, **kwargs)


def train_pool(configs, images, jobs=1, freq_kwargs=None, grid_kwargs=None):
    """Train every config; returns ``{model id: fitted model}``.

    Each model depends only on its own config and the shared images, so the
    result is identical for any ``jobs``.
    """
    tasks = [(c, None if isinstance(c, GridGenConfig) else images,
              (grid_kwargs if isinstance(c, GridGenConfig) else freq_kwargs) or {})
             for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            models = list(ex.map(_train_job, tasks))
    else:
        models = [_train_job(t) for t in tasks]
    return {c.model_id: m for c, m in zip(configs, models)}


def select_desk_pool(n_freq, n_grid, seed=0, seeds_per_config=1):
    """A deterministic subset of the desk-scale configurations.

    Freq architectures are drawn without replacement from the 144-entry
    grid; grid generators cycle through the depths with increasing seeds.
    """
    freq, _ = enumerate_pool("desk", seeds_per_config)
    rng = make_rng(seed, 7)
    picked = [freq[i] for i in sorted(rng.choice(len(freq), size=n_freq, replace=False))]
    depths = (3, 4, 5)
    grid = [GridGenConfig(depths[i % 3], i // 3) for i in range(n_grid)]
    return picked + grid


def model_images(model, sources, n, rng, crop=32):
    """``n`` images produced by one model from random crops of ``sources``."""
    idx = rng.integers(0, len(sources), size=n)
    X = np.stack([random_crop(sources[i], crop, rng)[0] for i in idx])
    if isinstance(model, GridGenerator):
        return model.transform(X, rng)
    return np.clip(model.transform(X), 0.0, 1.0)


def pool_images(pool, sources, n, seed, crop=32):
    """``{model id: (n, 3, crop, crop)}`` with one sub-stream per model."""
    return {mid: model_images(pool[mid], sources, n, make_rng(seed, 11, k), crop)
            for k, mid in enumerate(sorted(pool))}


def verification_experiment(images_by_model, ns_values=(1, 5, 10), n_pos=500, n_neg=500,
                            seed=0, cutoff=0.5, channel="stack"):
    """Pair scores and summary metrics for every ``N_S``.

    Returns ``(rows, summary)``; rows carry pair id, ns, score and label.
    """
    rows, summary = [], {}
    for ns in ns_values:
        pairs = make_pairs(images_by_model, ns, n_pos, n_neg, make_rng(seed, 21, ns))
        scores, labels = score_pairs(pairs, images_by_model, cutoff, channel)
        acc, tau = best_accuracy(scores, labels)
        summary[str(ns)] = {"auc": roc(scores, labels).auc, "accuracy": acc, "tau": tau,
                            "n_pairs": len(pairs)}
        rows += [{"pair": f"ns{ns}-{i}", "ns": ns, "score": float(s), "label": bool(lab)}
                 for i, (s, lab) in enumerate(zip(scores, labels))]
    return rows, summary


def open_set_experiment(images_by_model, known, unknown, n_gallery=40, n_cal=10,
                        cutoff=0.5, channel="stack"):
    """Gallery from known models; probes from known and unknown ones.

    Each model's image list is split into gallery, calibration and probe
    parts in order. Known-model gallery features are averaged per model,
    the threshold is calibrated on the calibration split (known and
    unknown), and metrics are computed on single-image probe features.
    Returns ``(rows, summary)``.
    """
    feat = SpectralFingerprint(cutoff, channel).fit()
    Xg, yg, Xc, yc, Xp, yp = [], [], [], [], [], []
    for mid in known:
        F = feat.transform(images_by_model[mid])
        Xg.append(F[:n_gallery])
        yg += [mid] * n_gallery
        Xc.append(F[n_gallery:n_gallery + n_cal])
        yc += [mid] * n_cal
        Xp.append(F[n_gallery + n_cal:])
        yp += [mid] * (len(F) - n_gallery - n_cal)
    for mid in unknown:
        F = feat.transform(images_by_model[mid])
        Xc.append(F[n_gallery:n_gallery + n_cal])
        yc += [UNKNOWN] * n_cal
        Xp.append(F[n_gallery + n_cal:])
        yp += [UNKNOWN] * (len(F) - n_gallery - n_cal)
    ident = OpenSetIdentifier().fit(np.concatenate(Xg), yg, np.concatenate(Xc), yc)
    Xp = np.concatenate(Xp)
    acc, auc = open_set_metrics(Xp, yp, ident.gallery_)
    pred = ident.predict(Xp)
    scores = ident.gallery_.vectors @ (Xp / np.linalg.norm(Xp, axis=1, keepdims=True)).T
    argmax = [ident.gallery_.ids[i] for i in scores.argmax(axis=0)]
    rows = [{"probe": f"p{i}", "truth": t, "argmax_id": a, "predicted": p,
             "best_score": float(s)}
            for i, (t, a, p, s) in enumerate(zip(yp, argmax, pred, scores.max(axis=0)))]
    return rows, {"accuracy": acc, "auc": auc, "tau": ident.tau_, "n_probes": len(yp)}


def probe_experiment(images_by_model, n_train, seed=0, channel="stack", **probe_kwargs):
    """Train the linear probe on log spectra; return (probe, held-out accuracy)."""
    ids = sorted(images_by_model)
    Xtr, ytr, Xte, yte = [], [], [], []
    for mid in ids:
        S = log_spectra(images_by_model[mid], channel)
        Xtr.append(S[:n_train])
        ytr += [mid] * n_train
        Xte.append(S[n_train:])
        yte += [mid] * (len(S) - n_train)
    probe = LinearProbe(seed=seed, **probe_kwargs).fit(np.concatenate(Xtr), ytr)
    return probe, float(probe.score(np.concatenate(Xte), yte))


def single_conv_models(n_models, seed, channels=3, k=3):
    """Random single-conv models: ``(Cin, Cout, k, k)`` weights per model."""
    return [uniform_init(make_rng(seed, 31, i), (channels, channels, k, k), channels * k * k)
            for i in range(n_models)]


def apply_conv(weights, X):
    return convolve(np.asarray(X), weights, conv_padding(weights.shape[-1], "same"))


def kernel_similarity_experiment(n_models=5, n_images=200, size=64, seed=0, cutoff=0.5):
    """Mean (over models) of per-image high-pass cosine to the kernel spectrum."""
    X = training_images(n_images, size, seed)
    sims = [kernel_spectrum_similarity(w, apply_conv(w, X), cutoff)
            for w in single_conv_models(n_models, seed)]
    return float(np.mean(sims)), sims


def single_conv_spectra(n_models, n_per_class, size, seed):
    """Single-conv outputs per class plus log reference kernel spectra.

    Every class convolves the same source images, so class differences come
    from the kernels alone. Power-law RGB channels are strongly correlated,
    so the inputs add coherently and the channel-mean output is close to
    the mean image filtered by the mean kernel over ``(i, o)``; the reference
    is the log magnitude spectrum of that kernel.
    """
    weights = single_conv_models(n_models, seed)
    X = training_images(n_per_class, size, seed)
    images = {f"conv{i}": apply_conv(w, X) for i, w in enumerate(weights)}
    refs = [np.log(np.abs(kernel_spectrum(w.mean(axis=(0, 1)), (size, size))) + 1e-8)
            for w in weights]
    return images, np.stack(refs)


def lineage_experiment(base_configs, images, finetune_steps=50, n_images=40, seed=0,
                       **train_kwargs):
    """Fingerprint similarity of parents, fine-tuned children and unrelated models.

    Every parent is trained, then a child is trained further from the parent
    weights for ``finetune_steps``. Returns ``(ids, matrix, families)``.
    """
    fps, families = {}, []
    for j, cfg in enumerate(base_configs):
        parent = FreqGenerator.from_config(cfg, **train_kwargs).fit(images)
        child = finetune(parent, images, finetune_steps)
        for tag, model in (("parent", parent), ("child", child)):
            X = model_images(model, images, n_images, make_rng(seed, 41, j))
            fps[f"{cfg.model_id}-{tag}"] = extract_fingerprint(X)
    ids, M = lineage_matrix(fps)
    families = [i.rsplit("-", 1)[0] for i in ids]
    return ids, M, families


def finetune(model, images, steps):
    """Copy ``model`` and continue training it for ``steps`` on ``images``."""
    from .nn import make_optimizer

    child = FreqGenerator(**model.get_params()).build()
    child.net_.load_state_dict(model.net_.state_dict())
    rng = make_rng(model.seed, 51)
    opt = make_optimizer(model.optimizer, model.lr, model.clip)
    n = len(images)
    bs = min(model.batch_size, n)
    for _ in range(steps):
        batch = images[np.sort(rng.choice(n, size=bs, replace=False))]
        child.loss_and_grads(batch)
        opt.step(child.net_)
    child.net_.forward(batch, train=True)
    child.net_.freeze_norms()
    child.trained_ = True
    child.n_steps_ = model.n_steps_ + steps
    child.final_residual_ = float(np.mean(np.abs(child.transform(images) - images)))
    return child


def config_dict(config):
    return asdict(config)
