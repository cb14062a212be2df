"""Operator command line: dataset synthesis, two-stage training (DAGAN
first, then the Siamese embedding on the enlarged corpus), evaluation,
one-off diagnosis, and serving.

Exit codes: 0 ok, 1 usage, 2 data error, 3 model error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import tensor as T
from .dagan import (DaganDiscriminator, DaganGenerator, GanTrainState,
                    augment_dataset, dagan_train_step)
from .data import (DatasetManifest, ImageSample, ManifestRecord, StandardSet,
                   decode_pgm, encode_pgm, make_pairs, normalize_resize,
                   select_standard_set, stratified_split)
from .errors import ContractError, DomainError, FormatError, ShapeError, StateError
from .inference import diagnose, dissimilarity_report
from .layers import EmbeddingNetwork
from .metrics import EvalReport
from .semilive import (ModelCheckpoint, RetrainPolicy, build_embedding_network,
                       build_generator, make_checkpoint)
from .service import ServiceConfig, run_server
from .siamese import LossConfig, train_epoch
from .synthetic import CATEGORIES, generate_corpus

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the documented usage code is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_run_config(path: str, args: argparse.Namespace) -> None:
    """Persist the fully resolved run configuration for reproducibility."""
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)


def write_loss_history(path: str, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.6g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    categories = args.categories.split(",")
    manifest = generate_corpus(args.out_dir, categories, args.n_per_category,
                               args.noise_level, args.seed, hw=(args.hw, args.hw))
    if args.test_frac > 0 or args.val_frac > 0:
        manifest = stratified_split(manifest, args.test_frac, args.val_frac, args.seed)
        manifest.save(os.path.join(args.out_dir, "manifest.tsv"))
    counts = manifest.counts()
    splits = {}
    for rec in manifest.records:
        splits[rec.split] = splits.get(rec.split, 0) + 1
    print(f"wrote {len(manifest.records)} images to {args.out_dir}")
    print(f"categories: {counts}")
    print(f"splits: {splits}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    manifest = stratified_split(manifest, args.test_frac, args.val_frac, args.seed)
    manifest.save(args.manifest)
    print(f"re-split {len(manifest.records)} records in {args.manifest}")
    return EXIT_OK


def _train_split(manifest: DatasetManifest):
    samples = manifest.load_split("train")
    if not samples:
        raise DomainError("manifest has no train-split samples; run gen-synthetic "
                          "with fractions or the split command first")
    return samples


def cmd_train_dagan(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    samples = [s for s in _train_split(manifest) if s.source == "real"]
    by_cat: dict[str, list] = {}
    for s in samples:
        by_cat.setdefault(s.category, []).append(s)
    for cat, items in by_cat.items():
        if len(items) < 2:
            raise DomainError(f"category {cat!r} has fewer than 2 train images")
    hw = (args.hw, args.hw)
    gen = DaganGenerator(input_hw=hw, latent_dim=args.latent_dim,
                         noise_scale=args.noise_scale, seed=args.seed)
    disc = DaganDiscriminator(input_hw=hw, seed=args.seed + 1)
    state = GanTrainState.create(gen, disc, g_lr=args.g_lr, d_lr=args.d_lr)
    rng = np.random.default_rng(args.seed)
    categories = sorted(by_cat)
    tensors = {cat: [normalize_resize(s, hw) for s in items]
               for cat, items in by_cat.items()}
    probe = T.concat([tensors[c][0] for c in categories]
                     + [tensors[c][1] for c in categories], axis=0)

    def probe_recon() -> float:
        out = gen.decode(gen.encode(probe))
        return float(np.mean(np.abs(out.data - probe.data)))

    # adversarial training can degrade late; keep the snapshot that
    # reconstructs the probe set best
    best_err, best_state, best_step = probe_recon(), gen.state_dict(), -1
    rows = []
    for step in range(args.steps):
        cat = categories[step % len(categories)]
        pool = tensors[cat]
        take = min(args.batch_size, len(pool))
        idx = rng.choice(len(pool), size=take, replace=take > len(pool))
        batch = T.concat([pool[i] for i in idx], axis=0)
        d_loss, g_loss = dagan_train_step(state, gen, disc, batch, rng)
        rows.append((step, d_loss + g_loss, d_loss, g_loss))
        if step % 10 == 9:
            err = probe_recon()
            if err < best_err:
                best_err, best_state, best_step = err, gen.state_dict(), step
        if args.log_every and step % args.log_every == 0:
            print(f"step {step}: d_loss {d_loss:.4f}  g_loss {g_loss:.4f}")
    if best_step >= 0:
        gen.load_state(best_state)
        print(f"kept generator from step {best_step} "
              f"(probe reconstruction L1 {best_err:.4f})")
    ckpt = ModelCheckpoint(
        1, {f"dagan.{k}": v for k, v in gen.state_dict().items()}, StandardSet(),
        {"dagan": gen.config(), "train_steps": gen.train_steps})
    ckpt.save(args.checkpoint)
    write_loss_history(args.checkpoint + ".loss.csv", "step,loss,d_loss,g_loss", rows)
    write_run_config(args.checkpoint + ".run.json", args)
    print(f"wrote DAGAN checkpoint to {args.checkpoint} after {args.steps} steps")
    return EXIT_OK


def cmd_augment(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    gen = build_generator(ckpt)
    if gen is None:
        raise StateError(f"checkpoint {args.checkpoint} carries no generator")
    if any(r.source == "generated" for r in manifest.records):
        raise DomainError("manifest already contains generated samples; "
                          "augment once per corpus")
    samples = [s for s in _train_split(manifest) if s.source == "real"]
    rng = np.random.default_rng(args.seed)
    enlarged = augment_dataset(gen, samples, args.k_augment, rng)
    generated = [s for s in enlarged if s.source == "generated"]
    out_dir = args.out_dir or manifest.root
    os.makedirs(out_dir, exist_ok=True)
    new_records = list(manifest.records)
    for s in generated:
        rel = f"{s.id}.pgm"
        with open(os.path.join(out_dir, rel), "wb") as fh:
            fh.write(encode_pgm(s.pixels))
        new_records.append(ManifestRecord(s.id, rel, s.category, "generated", "train"))
    DatasetManifest(new_records, manifest.root).save(args.manifest)
    print(f"added {len(generated)} generated images "
          f"({args.k_augment} per training image)")
    return EXIT_OK


def cmd_train_siamese(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    samples = _train_split(manifest)
    hw = (args.hw, args.hw)
    net = EmbeddingNetwork(input_hw=hw, latent_dim=args.latent_dim, seed=args.seed)
    carried_gen = None
    if args.dagan_checkpoint:
        carried_gen = build_generator(ModelCheckpoint.load(args.dagan_checkpoint))
    pairs = make_pairs(samples, args.pairs, args.like_fraction, args.seed, hw)
    cfg = LossConfig(margin=args.margin)
    opt = T.Adam(net.parameters(), lr=args.lr)
    rng = np.random.default_rng(args.seed)
    rows = []
    for epoch in range(args.epochs):
        mean_loss = train_epoch(pairs, net, cfg, opt, args.batch_size, rng)
        rows.append((epoch, mean_loss))
        if args.log_every and epoch % args.log_every == 0:
            print(f"epoch {epoch}: mean pair loss {mean_loss:.4f}")
    net.freeze()
    std, manifest = select_standard_set(manifest, args.std_k, net=net, target_hw=hw)
    manifest.save(args.manifest)
    ckpt = make_checkpoint(1, net, carried_gen, std, meta={"margin": args.margin})
    ckpt.save(args.checkpoint)
    write_loss_history(args.checkpoint + ".loss.csv", "step,loss", rows)
    write_run_config(args.checkpoint + ".run.json", args)
    print(f"wrote checkpoint to {args.checkpoint}; standard set "
          f"{std.sizes()} moved out of train")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    net = build_embedding_network(ckpt)
    test = manifest.load_split("test")
    if not test:
        raise DomainError("manifest has no test-split samples")
    hw = net.input_hw
    predictions, truths = [], []
    for sample in test:
        result = diagnose(normalize_resize(sample, hw), ckpt.standard, net,
                          ckpt.version, with_attention=False)
        predictions.append(result.predicted_category)
        truths.append(sample.category)
    report = EvalReport.from_predictions(predictions, truths,
                                         ckpt.standard.categories(), z=args.z)
    dissim = dissimilarity_report(test, ckpt.standard, net,
                                  lambda s: normalize_resize(s, hw))
    print(report.to_text())
    print()
    print(f"dissimilarity like:   [{dissim.like.minimum:.4f}, "
          f"{dissim.like.maximum:.4f}] mean {dissim.like.mean:.4f}")
    print(f"dissimilarity unlike: [{dissim.unlike.minimum:.4f}, "
          f"{dissim.unlike.maximum:.4f}] mean {dissim.unlike.mean:.4f}")
    blob = report.to_json_dict()
    blob["dissimilarity"] = dissim.to_json_dict()
    with open(args.json_out, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2)
    print(f"\nwrote {args.json_out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    ckpt = ModelCheckpoint.load(args.checkpoint)
    net = build_embedding_network(ckpt)
    with open(args.image, "rb") as fh:
        pixels = decode_pgm(fh.read())
    sample = ImageSample("query", pixels, "unlabeled", source="user")
    result = diagnose(normalize_resize(sample, net.input_hw), ckpt.standard, net,
                      ckpt.version, with_attention=False)
    print(f"predicted category: {result.predicted_category}")
    for cat in sorted(result.per_category_mean_energy):
        print(f"  {cat}: mean energy {result.per_category_mean_energy[cat]:.4f}")
    print(f"checkpoint version: {result.checkpoint_version}")
    return EXIT_OK


def cmd_serve(args) -> int:
    if args.config:
        config = ServiceConfig.from_file(args.config)
    else:
        if not args.checkpoint or not args.tokens:
            raise DomainError("serve needs --config or both --checkpoint and --tokens")
        config = ServiceConfig(checkpoint=args.checkpoint, tokens=args.tokens,
                               data_dir=args.data_dir, manifest=args.manifest or "",
                               retrain=RetrainPolicy())
        config.apply_env()
    if args.listen:
        config.listen = args.listen
    print(f"serving on {config.listen} (checkpoint {config.checkpoint})")
    run_server(config)
    return EXIT_OK


# -- parser wiring --------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="osxray", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic PGM corpus")
    p.add_argument("out_dir")
    p.add_argument("--categories", default=",".join(CATEGORIES))
    p.add_argument("--n-per-category", type=int, default=20)
    p.add_argument("--noise-level", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hw", type=int, default=64)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("split", help="re-split an existing manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-dagan", help="train the augmentation GAN")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hw", type=int, default=64)
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--noise-scale", type=float, default=0.5)
    p.add_argument("--g-lr", type=float, default=2e-3)
    p.add_argument("--d-lr", type=float, default=5e-4)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train_dagan)

    p = sub.add_parser("augment", help="enlarge the training set with the DAGAN")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k-augment", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-siamese", help="train the twin embedding network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dagan-checkpoint", default="")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--pairs", type=int, default=300)
    p.add_argument("--like-fraction", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--hw", type=int, default=64)
    p.add_argument("--std-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=5)
    p.set_defaults(func=cmd_train_siamese)

    p = sub.add_parser("evaluate", help="score the test split and write a report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--json-out", default="eval.json")
    p.add_argument("--z", type=float, default=2.576)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="diagnose a single PGM image")
    p.add_argument("image")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("serve", help="start the inference service")
    p.add_argument("--config", default="")
    p.add_argument("--checkpoint", default="")
    p.add_argument("--tokens", default="")
    p.add_argument("--manifest", default="")
    p.add_argument("--data-dir", default="data")
    p.add_argument("--listen", default="")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (FormatError, DomainError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StateError, ShapeError, ContractError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
