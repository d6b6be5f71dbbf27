"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The end-to-end desk
experiment (dataset -> GAN pretraining -> several encoder trainings) takes
roughly 30-40 minutes on one CPU core; set FSENC_ACCEPT_CACHE to a directory
to reuse its artifacts across runs.

Known-red: the K-sweep reconstruction-ordering clause fails for structural
reasons analyzed in the project notes; the test states the measured values.
"""

import json
import math
import os
import shutil
import socket
import subprocess
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from fsenc.checkpoint import file_sha256, load_archive, save_archive
from fsenc.data import DatasetHandle, make_dataset
from fsenc.editing import (EditDirection, apply_direction, closed_form_directions,
                           edit_feature, edit_image, linear_boundary, style_mix)
from fsenc.encoder import invert
from fsenc.generator import FeatureCode, Generator, GeneratorSpec, LatentWPlus
from fsenc.metrics import evaluate, fid, identity_consistency, psnr, ssim
from fsenc.objectives import (IdentityEmbedder, LossWeights, desk_embedder,
                              feature_recon_loss, mse_loss,
                              multilayer_cosine_loss, multiscale_lpips)
from fsenc.pretrain import GanTrainConfig, load_generator, pretrain_generator
from fsenc.training import (AblationFlags, TrainConfig, load_bundle, train)

from conftest import random_spec, random_wplus
from test_metrics import ssim_sliding_window_oracle
from test_objectives import analytic_gradient, central_difference_gradient
from test_editing import jacobi_eigh

DATASET_SEED = 11
GAN_SEED = 11
TRAIN_SEED = 13


def report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}", flush=True)
    return ok


# ---------------------------------------------------------------------------
# criterion: algebraic identity suite (< 1 min)
# ---------------------------------------------------------------------------

def test_criterion_algebraic_identities():
    started = time.monotonic()
    rng = np.random.default_rng(202)
    draws = 200
    worst_sub = worst_eq1 = 0.0
    for i in range(draws):
        spec = random_spec(rng)
        g = Generator(spec, seed=int(rng.integers(0, 2 ** 31)))
        w = random_wplus(spec, int(rng.integers(0, 2 ** 31)))
        w_edit = random_wplus(spec, int(rng.integers(0, 2 ** 31)))
        noise = g.noise_bundle(int(rng.integers(0, 2 ** 31)))

        # substitution identity through the injection layer
        feat = g.extract_features_at_k(w, noise)
        direct = g.synthesize(w, noise)
        via = g.synthesize_with_feature(w, feat, noise)
        worst_sub = max(worst_sub, float((direct - via).abs().max()))

        # edited-latent identities for the feature shift
        same = edit_feature(feat, w, w, noise, g)
        assert torch.equal(same.tensor, feat.tensor)
        moved = edit_feature(feat, w, w_edit, noise, g)
        target = g.extract_features_at_k(w_edit, noise)
        worst_eq1 = max(worst_eq1, float((moved.tensor - target.tensor).abs().max()))

        # blocks below the injection layer are ignored
        perturbed = w.clone()
        perturbed.blocks[:spec.k_inject - 1] += rng.normal() * 2 + 3
        assert torch.equal(g.synthesize_with_feature(perturbed, feat, noise), via)

    elapsed = time.monotonic() - started
    ok = worst_sub <= 1e-6 and worst_eq1 <= 1e-6 and elapsed < 60
    assert report("algebraic identity suite",
                  ok, f"{draws} draws, max substitution err {worst_sub:.2e}, "
                      f"max feature-shift err {worst_eq1:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion: loss correctness (< 5 min)
# ---------------------------------------------------------------------------

def test_criterion_loss_correctness():
    started = time.monotonic()
    emb = desk_embedder(21).double()
    emb5 = desk_embedder(22).double()

    # zero at identity
    x = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(0),
                    dtype=torch.float64) * 0.5
    f = torch.randn(4, 5, 5, generator=torch.Generator().manual_seed(1),
                    dtype=torch.float64)
    zeros_ok = (float(mse_loss(x, x)) == 0.0
                and float(multiscale_lpips(x, x, emb)) == 0.0
                and float(feature_recon_loss(f, f)) == 0.0
                and float(multilayer_cosine_loss(x, x, emb5)) == 0.0)

    # analytic vs central-difference gradients, float64, h=1e-3
    worst_rel = 0.0
    cases = {
        "mse": lambda t, ref: mse_loss(t, ref),
        "m_lpips": lambda t, ref: multiscale_lpips(t, ref, emb),
        "cosine": lambda t, ref: multilayer_cosine_loss(t, ref, emb5),
    }
    for trial in range(3):
        gen = torch.Generator().manual_seed(300 + trial)
        a = torch.randn(3, 8, 8, generator=gen, dtype=torch.float64) * 0.5
        b = torch.randn(3, 8, 8, generator=gen, dtype=torch.float64) * 0.5
        for name, fn in cases.items():
            ga = analytic_gradient(lambda t: fn(t, b), a)
            gf = central_difference_gradient(lambda t: fn(t, b), a.clone())
            rel = float(torch.linalg.vector_norm(ga - gf)
                        / torch.linalg.vector_norm(gf))
            worst_rel = max(worst_rel, rel)
        fa = torch.randn(4, 5, 5, generator=gen, dtype=torch.float64)
        fb = torch.randn(4, 5, 5, generator=gen, dtype=torch.float64)
        ga = analytic_gradient(lambda t: feature_recon_loss(t, fb), fa)
        gf = central_difference_gradient(lambda t: feature_recon_loss(t, fb),
                                         fa.clone())
        worst_rel = max(worst_rel, float(
            torch.linalg.vector_norm(ga - gf) / torch.linalg.vector_norm(gf)))

    # single-scale reduction is exact
    gen = torch.Generator().manual_seed(5)
    p = torch.randn(3, 8, 8, generator=gen)
    q = torch.randn(3, 8, 8, generator=gen)
    ident = IdentityEmbedder()
    reduction_ok = (float(multiscale_lpips(p, q, ident, scales=(0,)))
                    == float(torch.linalg.vector_norm(
                        ident.concat(p) - ident.concat(q))))

    # report recomposition and published weight defaults
    from test_objectives import TestTotalLoss
    fwd = TestTotalLoss()._forward(seed=9)
    weights = LossWeights(face_mode=True)
    from fsenc.objectives import total_loss
    rep = total_loss(fwd, weights, desk_embedder(0),
                     identity=desk_embedder(1), parsing=desk_embedder(2))
    recompose_err = abs(float(rep.total) - rep.detach().recompose(weights))
    defaults = LossWeights()
    weights_ok = (defaults.lambda1, defaults.lambda2,
                  defaults.lambda3, defaults.lambda4) == (0.2, 0.01, 0.1, 0.1)

    elapsed = time.monotonic() - started
    ok = (zeros_ok and worst_rel <= 1e-4 and reduction_ok
          and recompose_err <= 1e-9 and weights_ok and elapsed < 300)
    assert report("loss correctness", ok,
                  f"identity zeros {zeros_ok}, grad rel err {worst_rel:.2e}, "
                  f"scale-0 reduction exact {reduction_ok}, recomposition err "
                  f"{recompose_err:.1e}, weights (0.2, 0.01, 0.1, 0.1) "
                  f"{weights_ok}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion: direction discovery
# ---------------------------------------------------------------------------

def test_criterion_direction_discovery():
    g = Generator(GeneratorSpec(), seed=42)
    dirs = closed_form_directions(g, (3, 6), top_k=5)
    weights = g.style_affine_weights()[2:6]
    a = np.concatenate([w.double().numpy() for w in weights], axis=0)
    gram = a.T @ a
    vals_o, vecs_o = jacobi_eigh(gram)
    order = np.argsort(vals_o)[::-1]
    worst_eigval = worst_resid = 0.0
    for rank, d in enumerate(dirs):
        lam = d.metadata["eigenvalue"]
        worst_eigval = max(worst_eigval, abs(lam - float(vals_o[order[rank]])))
        vec = d.per_block[2].double().numpy() * 2.0  # undo 1/sqrt(4) block spread
        worst_resid = max(worst_resid,
                          float(np.linalg.norm(gram @ vec - lam * vec)))

    spec = GeneratorSpec(z_dim=16, w_dim=16, output_resolution=16,
                         base_channels=32, channel_floor=8, k_inject=3)
    gen = torch.Generator().manual_seed(7)
    latents = [LatentWPlus(torch.randn(spec.n_layers, spec.w_dim, generator=gen))
               for _ in range(500)]
    labels = [float(w.blocks[1, 3]) for w in latents]
    boundary = linear_boundary(latents, labels)
    flat = boundary.per_block.double().reshape(-1)
    idx = 1 * spec.w_dim + 3
    planted_err = max(abs(abs(float(flat[idx])) - 1.0),
                      float(torch.cat([flat[:idx], flat[idx + 1:]]).abs().max()))

    ok = worst_eigval <= 1e-8 and worst_resid <= 1e-8 and planted_err <= 1e-6
    assert report("direction discovery", ok,
                  f"eigenvalue err {worst_eigval:.2e}, eigenpair residual "
                  f"{worst_resid:.2e}, planted-coordinate err {planted_err:.2e}")


# ---------------------------------------------------------------------------
# criterion: metric oracles
# ---------------------------------------------------------------------------

def test_criterion_metric_oracles():
    gen = torch.Generator().manual_seed(0)
    a = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    b = (a + 0.3 * (torch.rand(3, 16, 16, generator=gen) * 2 - 1)).clamp(-1, 1)
    ssim_err = abs(ssim(a, b) - ssim_sliding_window_oracle(a, b))

    rng = np.random.default_rng(1)
    feats = rng.normal(size=(100, 5))
    self_fid = fid(feats, feats)
    delta = np.array([0.4, -0.2, 0.7, 0.0, 0.1])
    shift_err = abs(fid(feats, feats + delta) - float(delta @ delta))

    frame = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    ic = identity_consistency([frame] * 6, desk_embedder(0))

    x = torch.zeros(3, 10, 10)
    psnr_val = psnr(torch.full_like(x, 0.1), x)

    ok = (ssim_err <= 1e-6 and self_fid <= 1e-6 and shift_err <= 1e-6
          and abs(ic - 1.0) <= 1e-6 and abs(psnr_val - 26.02) <= 0.01)
    assert report("metric oracles", ok,
                  f"ssim vs sliding-window {ssim_err:.2e}, fid(S,S) "
                  f"{self_fid:.2e}, mean-shift err {shift_err:.2e}, "
                  f"IC(const) {ic:.8f}, psnr {psnr_val:.4f} dB")


# ---------------------------------------------------------------------------
# end-to-end desk experiment (shared fixture)
# ---------------------------------------------------------------------------


def _mixing_effect(bundle, dataset, val_ids, n_pairs=32) -> float:
    total = 0.0
    for p in range(n_pairs):
        ia, ib = val_ids[2 * p], val_ids[2 * p + 1]
        inv_a = invert(bundle.encoder, bundle.generator, dataset.load_image(ia),
                       bundle.eval_noise)
        inv_b = invert(bundle.encoder, bundle.generator, dataset.load_image(ib),
                       bundle.eval_noise)
        mab = style_mix(inv_a, inv_b, bundle.eval_noise, bundle.generator)
        mba = style_mix(inv_b, inv_a, bundle.eval_noise, bundle.generator)
        total += float((mab - mba).abs().mean())
    return total / n_pairs


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Dataset (2k, 32x32) -> GAN (5k steps) -> encoders D, B, D-rerun,
    K-sweep; evaluations on the 128 held-out images."""
    cache = os.environ.get("FSENC_ACCEPT_CACHE")
    root = Path(cache) if cache else tmp_path_factory.mktemp("desk")
    root.mkdir(parents=True, exist_ok=True)
    done = root / "done.json"
    if done.exists():
        return json.loads(done.read_text())

    print("\n[desk experiment] building artifacts (this takes ~35 min)",
          flush=True)
    t0 = time.monotonic()

    def tick(msg):
        print(f"[desk experiment {time.monotonic()-t0:7.1f}s] {msg}", flush=True)

    data_dir = root / "data"
    if not (data_dir / "manifest.jsonl").exists():
        make_dataset(data_dir, n=2000, resolution=32, seed=DATASET_SEED)
    dataset = DatasetHandle(data_dir)
    tick("dataset ready (2000 images at 32x32)")

    gan_path = root / "gan.fse"
    gan_summary = pretrain_generator(
        GanTrainConfig(steps=5000, batch_size=8, seed=GAN_SEED, holdout=128),
        dataset, gan_path, log_path=root / "gan.log.jsonl")
    tick(f"GAN pretrained: disc acc {gan_summary['disc_real_accuracy']:.3f}, "
         f"pixel std {gan_summary['sample_pixel_std']:.3f}")

    generator = load_generator(gan_path)
    perceptual = desk_embedder(101)
    identity = desk_embedder(202)
    _, val_ids = dataset.split(128)

    def train_and_eval(label, config):
        out = root / f"{label}.fse"
        result = train(generator, dataset, config, out)
        bundle = load_bundle(out)
        reports = evaluate(bundle.encoder, bundle.generator, dataset, val_ids,
                           identity, perceptual, bundle.eval_noise)
        entry = {
            "checkpoint": str(out),
            "sha256": file_sha256(out),
            "first_val": result.validations[0],
            "last_val": result.validations[-1],
            "history_first_total": result.history[0]["total"],
            "history_last_totals": [h["total"] for h in result.history[-50:]],
            "reports": {v: r.to_dict() for v, r in reports.items()},
        }
        tick(f"{label}: val m-LPIPS {entry['first_val']['m_lpips']:.4f} -> "
             f"{entry['last_val']['m_lpips']:.4f}; delivered PSNR "
             f"{entry['reports'].get('x2', entry['reports']['x1'])['psnr_db']:.2f} dB")
        return entry, bundle

    results = {"gan": {k: gan_summary[k] for k in
                       ("disc_real_accuracy", "sample_pixel_std", "steps")},
               "dataset_dir": str(data_dir), "gan_checkpoint": str(gan_path)}

    desk_cfg = TrainConfig.desk(seed=TRAIN_SEED)
    results["D"], bundle_d = train_and_eval("D", desk_cfg)
    results["B"], _ = train_and_eval(
        "B", replace(desk_cfg, ablation=AblationFlags.named("B")))
    results["D2"], _ = train_and_eval("D2", desk_cfg)

    sweep_cfg = TrainConfig(epochs=3, iters_per_epoch=400, val_every=400,
                            val_count=128, seed=TRAIN_SEED)
    results["sweep"] = {}
    for k in (4, 5, 6, 7):
        entry, bundle = train_and_eval(f"K{k}", replace(sweep_cfg, k_inject=k))
        entry["mix_effect"] = _mixing_effect(bundle, dataset, val_ids)
        tick(f"K{k}: mix effect {entry['mix_effect']:.5f}")
        results["sweep"][str(k)] = entry

    done.write_text(json.dumps(results, indent=1, sort_keys=True))
    tick("desk experiment complete")
    return results


def test_criterion_desk_experiment(desk):
    gan_ok = (0.5 < desk["gan"]["disc_real_accuracy"] < 1.0
              and desk["gan"]["sample_pixel_std"] > 0.05)
    report("desk GAN pretraining (5k steps)", gan_ok,
           f"held-out disc accuracy {desk['gan']['disc_real_accuracy']:.3f} "
           f"in (0.5, 1.0); sample pixel std "
           f"{desk['gan']['sample_pixel_std']:.3f} > 0.05")

    first = desk["D"]["first_val"]["m_lpips"]
    last = desk["D"]["last_val"]["m_lpips"]
    drop = 1.0 - last / first
    a_ok = drop >= 0.40
    report("desk (a) validation m-LPIPS drop >= 40%", a_ok,
           f"{first:.4f} -> {last:.4f} ({drop:.1%})")

    psnr_x1 = desk["D"]["reports"]["x1"]["psnr_db"]
    psnr_x2 = desk["D"]["reports"]["x2"]["psnr_db"]
    b_ok = psnr_x2 > psnr_x1
    report("desk (b) PSNR(x2) > PSNR(x1) on 128 held-out", b_ok,
           f"x2 {psnr_x2:.2f} dB vs x1 {psnr_x1:.2f} dB")

    b_delivered = desk["B"]["reports"]["x1"]["psnr_db"]
    c_ok = psnr_x2 > b_delivered
    report("desk (c) config D beats config B on delivered PSNR", c_ok,
           f"D(x2) {psnr_x2:.2f} dB vs B(x1) {b_delivered:.2f} dB")

    # smoke-level learning signal on the training objective itself
    first_total = desk["D"]["history_first_total"]
    last_totals = desk["D"]["history_last_totals"]
    loss_drop = 1.0 - (sum(last_totals) / len(last_totals)) / first_total
    t_ok = loss_drop >= 0.20
    report("desk training-loss decrease >= 20%", t_ok,
           f"step-0 total {first_total:.4f} vs final-window mean "
           f"{sum(last_totals)/len(last_totals):.4f} ({loss_drop:.1%})")

    assert gan_ok and a_ok and b_ok and c_ok and t_ok


def test_criterion_k_sweep_tradeoff(desk):
    ks = [4, 5, 6, 7]
    errors = [desk["sweep"][str(k)]["reports"]["x2"]["mse"] for k in ks]
    effects = [desk["sweep"][str(k)]["mix_effect"] for k in ks]

    recon_ok = all(e1 >= e2 for e1, e2 in zip(errors, errors[1:]))
    effect_ok = all(e1 >= e2 for e1, e2 in zip(effects, effects[1:]))
    report("desk (d) K-sweep reconstruction error non-increasing in K",
           recon_ok,
           "delivered MSE " + ", ".join(f"K{k}={e:.5f}"
                                        for k, e in zip(ks, errors))
           + ("" if recon_ok else
              " — known structural failure at desk scale, see notes"))
    report("desk (d) K-sweep style-mixing effect non-increasing in K",
           effect_ok,
           "mean |mix(a,b)-mix(b,a)| " + ", ".join(
               f"K{k}={e:.5f}" for k, e in zip(ks, effects)))
    assert effect_ok
    assert recon_ok, (
        "delivered reconstruction error increases with K at desk scale; "
        "structural analysis in the decisions notes")


def test_criterion_determinism(desk, tmp_path):
    same_hash = desk["D"]["sha256"] == desk["D2"]["sha256"]
    report("determinism: identical seeds give identical checkpoints",
           same_hash, f"D {desk['D']['sha256'][:12]}… vs rerun "
                      f"{desk['D2']['sha256'][:12]}…")

    tensors, specs = load_archive(desk["D"]["checkpoint"])
    resaved = save_archive(tmp_path / "resave.fse", tensors, specs)
    round_trip = (Path(desk["D"]["checkpoint"]).read_bytes()
                  == resaved.read_bytes())
    report("determinism: archive round-trips bit-exactly", round_trip,
           f"{len(resaved.read_bytes())} bytes compared")
    assert same_hash and round_trip


# ---------------------------------------------------------------------------
# trained-model behavior beyond the numbered criteria
# ---------------------------------------------------------------------------


def test_trained_editing_paths(desk):
    bundle = load_bundle(desk["D"]["checkpoint"])
    dataset = DatasetHandle(desk["dataset_dir"])
    _, val_ids = dataset.split(128)
    inv = invert(bundle.encoder, bundle.generator, dataset.load_image(val_ids[0]),
                 bundle.eval_noise)
    k = bundle.generator.spec.k_inject
    n = bundle.generator.spec.n_layers

    high = closed_form_directions(bundle.generator, (k, n), top_k=1)[0]
    edited_high = edit_image(inv, high, 3.0, bundle.eval_noise, bundle.generator)
    delta_high = float((edited_high - inv.x2).abs().mean())

    low = closed_form_directions(bundle.generator, (1, k - 1), top_k=1)[0]
    edited_low = edit_image(inv, low, 3.0, bundle.eval_noise, bundle.generator)
    delta_low = float((edited_low - inv.x2).abs().mean())

    zero = edit_image(inv, low, 0.0, bundle.eval_noise, bundle.generator)
    ok = delta_high > 0 and delta_low > 0 and torch.equal(zero, inv.x2)
    assert report(
        "trained editing: blocks >= K and blocks < K both steer the output",
        ok, f"delta(blocks {k}-{n}) {delta_high:.4f}, delta(blocks 1-{k-1}) "
            f"{delta_low:.4f} (through the feature shift), alpha-0 exact")


def test_trained_style_mix_asymmetry(desk):
    bundle = load_bundle(desk["D"]["checkpoint"])
    dataset = DatasetHandle(desk["dataset_dir"])
    _, val_ids = dataset.split(128)
    inv_a = invert(bundle.encoder, bundle.generator,
                   dataset.load_image(val_ids[0]), bundle.eval_noise)
    inv_b = invert(bundle.encoder, bundle.generator,
                   dataset.load_image(val_ids[1]), bundle.eval_noise)
    mab = style_mix(inv_a, inv_b, bundle.eval_noise, bundle.generator)
    mba = style_mix(inv_b, inv_a, bundle.eval_noise, bundle.generator)
    self_mix = style_mix(inv_a, inv_a, bundle.eval_noise, bundle.generator)
    ok = (not torch.equal(mab, mba)) and torch.equal(self_mix, inv_a.x2)
    assert report("trained style mixing asymmetric between distinct inputs",
                  ok, f"mean |mix(a,b)-mix(b,a)| {float((mab-mba).abs().mean()):.4f}")


def test_trained_interpolation_w_distance(desk, tmp_path):
    from fsenc.video import invert_sequence, make_interpolation_frames
    bundle = load_bundle(desk["D"]["checkpoint"])
    frames_dir = make_interpolation_frames(bundle.generator, tmp_path / "seq",
                                           8, seed=3)
    inversions, _ = invert_sequence(frames_dir, bundle.encoder, bundle.generator,
                                    bundle.eval_noise)
    anchor = inversions[0].w.blocks
    dists = [float(torch.linalg.vector_norm(inv.w.blocks - anchor))
             for inv in inversions]
    ok = all(b >= a for a, b in zip(dists, dists[1:]))
    assert report("trained inversion of a latent interpolation walks "
                  "monotonically in w", ok,
                  "frame-0 distances " + ", ".join(f"{d:.3f}" for d in dists))


# ---------------------------------------------------------------------------
# [SECONDARY] UI end-to-end
# ---------------------------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_secondary_ui_end_to_end(desk):
    frontend = Path(__file__).resolve().parents[1] / "frontend"
    npx = shutil.which("npx")
    assert npx is not None, "node toolchain required for the UI acceptance test"

    build = subprocess.run([npx, "--no-install", "tsc", "-p", "tsconfig.json"],
                           cwd=frontend, capture_output=True, text=True)
    assert build.returncode == 0, build.stdout + build.stderr

    dirs_dir = Path(desk["D"]["checkpoint"]).parent / "ui_directions"
    if not dirs_dir.exists():
        bundle = load_bundle(desk["D"]["checkpoint"])
        k = bundle.generator.spec.k_inject
        for d in closed_form_directions(bundle.generator,
                                        (k, bundle.generator.spec.n_layers),
                                        top_k=3):
            d.save(dirs_dir / f"{d.name}.json")

    port = _free_port()
    server = subprocess.Popen(
        ["python3", "-m", "fsenc.cli", "serve", "--ckpt", desk["D"]["checkpoint"],
         "--directions", str(dirs_dir), "--port", str(port)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    try:
        import httpx
        base = f"http://127.0.0.1:{port}"
        for _ in range(100):
            try:
                if httpx.get(f"{base}/api/health", timeout=1).status_code == 200:
                    break
            except Exception:
                time.sleep(0.3)
        else:
            raise RuntimeError("service did not come up")

        # the static UI shell is served at /
        index = httpx.get(f"{base}/", timeout=5)
        shell_ok = index.status_code == 200 and "main.js" in index.text

        env = dict(os.environ, FSENC_SERVICE_URL=base)
        suite = subprocess.run([npx, "--no-install", "vitest", "run"],
                               cwd=frontend, env=env, capture_output=True,
                               text=True, timeout=600)
        ui_ok = suite.returncode == 0 and shell_ok
        assert report(
            "[SECONDARY] UI end-to-end (build + client suite + live alpha-0 "
            "byte equality)", ui_ok,
            f"static shell {shell_ok}; vitest "
            f"{'passed' if suite.returncode == 0 else 'failed'}"), \
            suite.stdout + suite.stderr
    finally:
        server.terminate()
        server.wait(timeout=10)
