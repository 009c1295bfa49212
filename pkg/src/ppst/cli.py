"""Command-line driver: corpus building, training, generation, evaluation.

    ppst build-corpus            --config cfg.json
    ppst train-mapper            --config cfg.json
    ppst train-adapter --style S --config cfg.json      (S may be "non-styled")
    ppst generate --style S --images DIR --config cfg.json
    ppst evaluate --records F --gold F --config cfg.json

The config is a single JSON file with per-stage sections (see
DEFAULT_CONFIG). Every training and decoding hyperparameter is a default
there and can be overridden. Each command writes an isolated run directory
`<artifacts_dir>/<stage>-<confighash>/` containing a manifest, checkpoints,
records and reports; re-running with unchanged config and inputs is detected
from the manifest and skipped unless --force is given.

Exit codes: 0 success, 2 input/config error, 3 numeric failure.
The external-scorer endpoint is taken from $PPST_SCORER_ENDPOINT.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from pathlib import Path

from . import corpus as corpus_mod
from .adapters import (AdapterConfig, AdapterTrainConfig, StyleAdapterSet,
                       StyledLanguageModel, adapter_data_fingerprint, attach,
                       train_adapter, train_full_finetune, train_on_texts)
from .artifacts import (base_manifest, fingerprint_file, fingerprint_json,
                        run_is_up_to_date, run_lock, write_manifest)
from .encoding import HashedNgramEncoder
from .errors import ConfigurationError, InputError, PpstError, TrainingDiverged
from .generation import DecodeConfig, generate
from .lm import CausalTransformerLM, LmConfig
from .mapper import (MapperConfig, MapperTrainConfig, PrefixMapper,
                     mapper_data_fingerprint, train_mapper)
from .metrics import evaluate_run
from .tokenizer import WordTokenizer

SCORER_ENDPOINT_ENV = "PPST_SCORER_ENDPOINT"

DEFAULT_CONFIG = {
    "seed": 0,
    "artifacts_dir": "runs",
    "corpus": {
        "books_dir": None,          # directory of <title>.txt books
        "catalog": None,            # TSV title -> semicolon genre list
        "captions": None,           # caption-pair JSONL (image_ref/caption/split)
        "caption_fraction": 0.1,
    },
    "encoder": {
        "embed_dim": 256,
        "n_buckets": 2048,
        "max_text_tokens": 77,
        "model_id": None,
    },
    "lm": {
        "checkpoint": None,         # use an existing LM checkpoint instead of building
        "n_layer": 2,
        "n_head": 2,
        "d_model": 32,
        "d_ff": 0,
        "max_seq_len": 128,
        "max_vocab": 512,
        "pretrain_epochs": 1,
        "learning_rate": 1e-3,
        "batch_size": 8,
    },
    "mapper": {
        "hidden_dim": 512,
        "prefix_length": 10,
        "activation": "tanh",
        "max_epochs": 10,
        "learning_rate": 1e-3,
        "batch_size": 8,
        "max_seq_len": 512,
    },
    "adapters": {
        "styles": ["romance", "action"],
        "bottleneck_dim": 0,        # 0 -> lm d_model / 8
        "activation": "relu",
        "max_epochs": 10,
        "learning_rate": 1e-3,
        "batch_size": 8,
        "max_seq_len": 512,
        "val_fraction": 0.1,
        "patience": 2,
    },
    "decode": {
        "beam_size": 5,
        "temperature": 0.8,
        "top_k": 10,
        "repetition_penalty": 0.7,
        "no_repeat_ngram": 3,
        "length_decay_factor": 1.7,
        "length_decay_start": 20,
        "min_length": 750,
        "max_length": None,
    },
    "eval": {
        "clip_weight": 2.5,
        "scorer_timeout": 10.0,
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path, seed=None):
    try:
        user = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}", ref=str(path))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _encoder(cfg):
    e = cfg["encoder"]
    return HashedNgramEncoder(embed_dim=e["embed_dim"], model_id=e["model_id"],
                              max_text_tokens=e["max_text_tokens"],
                              n_buckets=e["n_buckets"])


def _stage_dir(cfg, stage, sections, extra=None):
    """Run directory + config hash + the resolved config that hash covers."""
    relevant = {name: cfg[name] for name in sections}
    relevant["seed"] = cfg["seed"]
    if extra:
        relevant["extra"] = extra
    config_hash = fingerprint_json(relevant)
    run_id = f"{stage}-{config_hash[:10]}"
    return Path(cfg["artifacts_dir"]) / run_id, config_hash, relevant


def _require(path, what):
    if path is None:
        raise InputError(f"config does not name {what}", ref=what)
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}", ref=str(p))
    return p


# ---------------------------------------------------------------------------
# corpus stage


def corpus_run_dir(cfg):
    return _stage_dir(cfg, "build-corpus", ["corpus"])


def _corpus_paths(cfg):
    run_dir, _, _ = corpus_run_dir(cfg)
    return run_dir / "passages.jsonl", run_dir / "captions.jsonl"


def cmd_build_corpus(cfg, force=False):
    section = cfg["corpus"]
    books_dir = _require(section["books_dir"], "corpus.books_dir")
    catalog_path = _require(section["catalog"], "corpus.catalog")
    caption_path = (_require(section["captions"], "corpus.captions")
                    if section["captions"] else None)

    book_files = sorted(books_dir.glob("*.txt"))
    inputs = [fingerprint_file(f) for f in book_files] + [fingerprint_file(catalog_path)]
    if caption_path:
        inputs.append(fingerprint_file(caption_path))
    input_fp = fingerprint_json(inputs)

    run_dir, config_hash, resolved = corpus_run_dir(cfg)
    if not force and run_is_up_to_date(run_dir, config_hash, input_fp):
        print(f"build-corpus: up to date ({run_dir})")
        return 0

    with run_lock(run_dir):
        catalog = corpus_mod.GenreCatalog.from_table(catalog_path)
        books = [(f.stem, f.read_text(encoding="utf-8")) for f in book_files]
        passages = corpus_mod.build_styled_passages(books, catalog)
        corpus_mod.save_passages(passages, run_dir / "passages.jsonl")

        counts = corpus_mod.genre_counts(passages)
        (run_dir / "genre_counts.json").write_text(json.dumps(counts, indent=2,
                                                              sort_keys=True))
        print(f"build-corpus: {len(passages)} passages from {len(books)} books")
        for genre in corpus_mod.RECOGNIZED_GENRES:
            print(f"  {genre:>16}: {counts[genre]}")

        n_pairs = 0
        if caption_path:
            pairs = corpus_mod.load_caption_pairs(caption_path)
            pairs = corpus_mod.subsample(pairs, section["caption_fraction"], cfg["seed"])
            corpus_mod.save_caption_pairs(pairs, run_dir / "captions.jsonl")
            n_pairs = len(pairs)
            print(f"build-corpus: kept {n_pairs} caption pairs "
                  f"(fraction {section['caption_fraction']})")

        manifest = base_manifest("build-corpus", config_hash, input_fp)
        manifest["resolved_config"] = resolved
        manifest["outputs"] = ["passages.jsonl", "genre_counts.json"]
        if caption_path:
            manifest["outputs"].append("captions.jsonl")
        manifest["n_passages"] = len(passages)
        manifest["n_caption_pairs"] = n_pairs
        write_manifest(run_dir, manifest)
    return 0


def _load_corpus_outputs(cfg, need_captions=False, need_passages=False):
    passages_path, captions_path = _corpus_paths(cfg)
    if (need_passages and not passages_path.exists()) or \
            (need_captions and not captions_path.exists()):
        raise InputError("corpus outputs missing; run `ppst build-corpus` first",
                         ref=str(passages_path.parent))
    passages = (corpus_mod.load_passages(passages_path)
                if passages_path.exists() else [])
    captions = (corpus_mod.load_caption_pairs(captions_path)
                if captions_path.exists() else [])
    return passages, captions


# ---------------------------------------------------------------------------
# base LM materialization


def base_lm_dir(cfg):
    return _stage_dir(cfg, "base-lm", ["corpus", "lm"])


def ensure_base_lm(cfg, force=False):
    """Resolve the base LM: an explicit checkpoint, or a deterministic toy LM
    built from the corpus (vocabulary from passages + captions, then
    `pretrain_epochs` of causal-LM training)."""
    section = cfg["lm"]
    if section["checkpoint"]:
        return CausalTransformerLM.load(_require(section["checkpoint"], "lm.checkpoint"))

    run_dir, config_hash, resolved = base_lm_dir(cfg)
    checkpoint = run_dir / "checkpoints" / "lm"
    passages, captions = _load_corpus_outputs(cfg)
    texts = [p.text for p in passages] + [c.caption_text for c in captions]
    if not texts:
        raise InputError("no corpus text to build a base LM from", ref="corpus")
    input_fp = fingerprint_json(texts)
    if not force and run_is_up_to_date(run_dir, config_hash, input_fp):
        return CausalTransformerLM.load(checkpoint)

    with run_lock(run_dir):
        tokenizer = WordTokenizer.build(texts, max_vocab=section["max_vocab"])
        lm_config = LmConfig(vocab_size=tokenizer.vocab_size,
                             n_layer=section["n_layer"], n_head=section["n_head"],
                             d_model=section["d_model"], d_ff=section["d_ff"],
                             max_seq_len=section["max_seq_len"])
        lm = CausalTransformerLM(lm_config, tokenizer, seed=cfg["seed"])
        if section["pretrain_epochs"] > 0:
            train_cfg = AdapterTrainConfig(
                max_epochs=section["pretrain_epochs"],
                learning_rate=section["learning_rate"],
                batch_size=section["batch_size"],
                max_seq_len=section["max_seq_len"],
                seed=cfg["seed"], val_fraction=0.0)
            all_passages = passages or []
            if all_passages:
                lm, _ = train_full_finetune(all_passages, lm, train_cfg)
            if captions:
                train_on_texts([c.caption_text for c in captions], lm, train_cfg,
                               "base-lm captions")
        lm.lm_id = f"base-lm-{config_hash[:8]}"
        lm.save(checkpoint)
        manifest = base_manifest("base-lm", config_hash, input_fp)
        manifest["resolved_config"] = resolved
        manifest["outputs"] = ["checkpoints/lm"]
        manifest["lm_id"] = lm.lm_id
        manifest["lm_fingerprint"] = lm.fingerprint()
        write_manifest(run_dir, manifest)
        print(f"base-lm: built {lm.lm_id} (vocab {tokenizer.vocab_size})")
    return CausalTransformerLM.load(checkpoint)


# ---------------------------------------------------------------------------
# training stages


def mapper_run_dir(cfg):
    return _stage_dir(cfg, "train-mapper", ["corpus", "encoder", "lm", "mapper"])


def cmd_train_mapper(cfg, force=False):
    _, captions = _load_corpus_outputs(cfg, need_captions=True)
    if not captions:
        raise InputError("caption dataset is empty", ref="captions.jsonl")
    encoder = _encoder(cfg)
    lm = ensure_base_lm(cfg, force=False)

    run_dir, config_hash, resolved = mapper_run_dir(cfg)
    input_fp = mapper_data_fingerprint(captions)
    if not force and run_is_up_to_date(run_dir, config_hash, input_fp):
        print(f"train-mapper: up to date ({run_dir})")
        return 0

    section = cfg["mapper"]
    mapper_config = MapperConfig(input_dim=encoder.embed_dim,
                                 lm_embed_dim=lm.config.d_model,
                                 hidden_dim=section["hidden_dim"],
                                 prefix_length=section["prefix_length"],
                                 activation=section["activation"])
    train_cfg = MapperTrainConfig(max_epochs=section["max_epochs"],
                                  learning_rate=section["learning_rate"],
                                  batch_size=section["batch_size"],
                                  max_seq_len=section["max_seq_len"],
                                  seed=cfg["seed"])
    with run_lock(run_dir):
        checksum_before = lm.checksum()
        mapper, loss_log = train_mapper(captions, encoder, lm, train_cfg, mapper_config)
        assert lm.checksum() == checksum_before, "frozen-LM contract violated"
        mapper.save(run_dir / "checkpoints" / "mapper", extra_manifest={
            "train_config": vars(train_cfg),
            "encoder_model_id": encoder.model_id,
            "lm_id": lm.lm_id,
            "lm_fingerprint": lm.fingerprint(),
            "data_fingerprint": input_fp,
            "final_loss": loss_log[-1]["train_loss"],
        })
        with open(run_dir / "loss_log.jsonl", "w") as fh:
            for entry in loss_log:
                fh.write(json.dumps(entry) + "\n")
        manifest = base_manifest("train-mapper", config_hash, input_fp)
        manifest["resolved_config"] = resolved
        manifest["outputs"] = ["checkpoints/mapper", "loss_log.jsonl"]
        manifest["encoder_model_id"] = encoder.model_id
        manifest["lm_id"] = lm.lm_id
        write_manifest(run_dir, manifest)
        print(f"train-mapper: final loss {loss_log[-1]['train_loss']:.4f} "
              f"after {len(loss_log)} epochs")
    return 0


def adapter_run_dir(cfg, style):
    return _stage_dir(cfg, f"train-adapter-{style.replace(' ', '_')}",
                      ["corpus", "lm", "adapters"], extra=style)


def cmd_train_adapter(cfg, style, force=False):
    section = cfg["adapters"]
    known = list(section["styles"]) + ["non-styled"]
    if style not in known:
        raise InputError(f"unknown style {style!r}; configured: {known}", ref=style)
    passages, _ = _load_corpus_outputs(cfg, need_passages=True)
    if style != "non-styled":
        passages = corpus_mod.filter_by_style(passages, style)
    if not passages:
        raise InputError(f"no passages for style {style!r}", ref=style)
    lm = ensure_base_lm(cfg, force=False)

    run_dir, config_hash, resolved = adapter_run_dir(cfg, style)
    input_fp = adapter_data_fingerprint(passages)
    if not force and run_is_up_to_date(run_dir, config_hash, input_fp):
        print(f"train-adapter[{style}]: up to date ({run_dir})")
        return 0

    train_cfg = AdapterTrainConfig(max_epochs=section["max_epochs"],
                                   learning_rate=section["learning_rate"],
                                   batch_size=section["batch_size"],
                                   max_seq_len=section["max_seq_len"],
                                   seed=cfg["seed"],
                                   val_fraction=section["val_fraction"],
                                   patience=section["patience"])
    with run_lock(run_dir):
        checksum_before = lm.checksum()
        if style == "non-styled":
            tuned, loss_log = train_full_finetune(passages, lm, train_cfg)
            tuned.save(run_dir / "checkpoints" / "lm_finetuned")
            outputs = ["checkpoints/lm_finetuned"]
        else:
            adapter_config = None
            if section["bottleneck_dim"]:
                adapter_config = AdapterConfig(bottleneck_dim=section["bottleneck_dim"],
                                               activation=section["activation"])
            adapter_set, loss_log = train_adapter(passages, lm, train_cfg, style=style,
                                                  adapter_config=adapter_config)
            assert lm.checksum() == checksum_before, "frozen-LM contract violated"
            adapter_set.save(run_dir / "checkpoints" / "adapter", extra_manifest={
                "train_config": vars(train_cfg),
                "data_fingerprint": input_fp,
                "final_loss": loss_log[-1]["train_loss"],
            })
            outputs = ["checkpoints/adapter"]
        with open(run_dir / "loss_log.jsonl", "w") as fh:
            for entry in loss_log:
                fh.write(json.dumps(entry) + "\n")
        manifest = base_manifest(f"train-adapter-{style}", config_hash, input_fp)
        manifest["resolved_config"] = resolved
        manifest["outputs"] = outputs + ["loss_log.jsonl"]
        manifest["style"] = style
        manifest["n_passages"] = len(passages)
        write_manifest(run_dir, manifest)
        final = loss_log[-1]["train_loss"] if loss_log else float("nan")
        print(f"train-adapter[{style}]: {len(passages)} passages, "
              f"final loss {final:.4f}")
    return 0


# ---------------------------------------------------------------------------
# generation and evaluation


def _resolve_styled_model(cfg, style):
    lm = ensure_base_lm(cfg, force=False)
    if style == "plain":
        return StyledLanguageModel(lm, None, "plain")
    if style == "non-styled":
        run_dir, _, _ = adapter_run_dir(cfg, "non-styled")
        checkpoint = run_dir / "checkpoints" / "lm_finetuned"
        if not checkpoint.exists():
            raise InputError("non-styled model missing; run "
                             "`ppst train-adapter --style non-styled` first",
                             ref=str(checkpoint))
        return StyledLanguageModel(CausalTransformerLM.load(checkpoint), None,
                                   "full_finetune")
    run_dir, _, _ = adapter_run_dir(cfg, style)
    checkpoint = run_dir / "checkpoints" / "adapter"
    if not checkpoint.exists():
        raise InputError(f"adapter for style {style!r} missing; run "
                         f"`ppst train-adapter --style {style}` first",
                         ref=str(checkpoint))
    return attach(lm, StyleAdapterSet.load(checkpoint, lm))


def generate_run_dir(cfg, style, image_fp):
    return _stage_dir(cfg, f"generate-{style.replace(' ', '_')}",
                      ["corpus", "encoder", "lm", "mapper", "adapters", "decode"],
                      extra={"style": style, "images": image_fp})


def _list_images(images):
    path = Path(images)
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.suffix.lower() in (".pgm", ".ppm", ".pbm", ".png",
                                               ".jpg", ".jpeg"))
    else:
        files = [path]
    if not files:
        raise InputError(f"no images found under {images}", ref=str(images))
    return files


def cmd_generate(cfg, images, style, force=False):
    image_files = _list_images(images)
    image_fp = fingerprint_json([fingerprint_file(f) for f in image_files])
    run_dir, config_hash, resolved = generate_run_dir(cfg, style, image_fp)
    if not force and run_is_up_to_date(run_dir, config_hash, image_fp):
        print(f"generate[{style}]: up to date ({run_dir})")
        return 0

    mapper_dir, _, _ = mapper_run_dir(cfg)
    mapper_ckpt = mapper_dir / "checkpoints" / "mapper"
    if not mapper_ckpt.exists():
        raise InputError("mapper checkpoint missing; run `ppst train-mapper` first",
                         ref=str(mapper_ckpt))
    mapper = PrefixMapper.load(mapper_ckpt)
    encoder = _encoder(cfg)
    model = _resolve_styled_model(cfg, style)
    decode_kwargs = {k: v for k, v in cfg["decode"].items() if k != "seed"}
    decode_cfg = DecodeConfig(seed=cfg["seed"], **decode_kwargs)

    with run_lock(run_dir):
        records_dir = run_dir / "records"
        records_dir.mkdir(parents=True, exist_ok=True)
        n_ok = 0
        with open(records_dir / "records.jsonl", "w", encoding="utf-8") as rec_fh, \
                open(records_dir / "timings.jsonl", "w", encoding="utf-8") as time_fh:
            for image in image_files:
                try:
                    embedding = encoder.encode_image(image)
                    prefix = mapper.map_prefix(embedding)
                    record = generate(prefix, model, decode_cfg, image_ref=str(image))
                except InputError as exc:
                    rec_fh.write(json.dumps({"image_ref": str(image),
                                             "error": str(exc)},
                                            sort_keys=True) + "\n")
                    print(f"generate[{style}]: skipped {image}: {exc}", file=sys.stderr)
                    continue
                rec_fh.write(record.to_json_line() + "\n")
                time_fh.write(json.dumps({"image_ref": str(image),
                                          "wall_time_s": record.wall_time_s}) + "\n")
                n_ok += 1
        manifest = base_manifest(f"generate-{style}", config_hash, image_fp)
        manifest["resolved_config"] = resolved
        manifest["outputs"] = ["records/records.jsonl", "records/timings.jsonl"]
        manifest["n_records"] = n_ok
        manifest["n_images"] = len(image_files)
        manifest["model"] = model.manifest()
        write_manifest(run_dir, manifest)
        print(f"generate[{style}]: {n_ok}/{len(image_files)} records -> "
              f"{records_dir / 'records.jsonl'}")
    return 0


def evaluate_run_dir(cfg, records_fp, gold_fp):
    return _stage_dir(cfg, "evaluate", ["encoder", "eval"],
                      extra={"records": records_fp, "gold": gold_fp})


def cmd_evaluate(cfg, records_path, gold_path, force=False):
    records_path = _require(records_path, "records file")
    gold_path = _require(gold_path, "gold captions file")

    class _Row:
        def __init__(self, image_ref, story_text, style):
            self.image_ref = image_ref
            self.story_text = story_text
            self.style = style

    rows = []
    with open(records_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "story" in obj:
                rows.append(_Row(obj["image_ref"], obj["story"], obj.get("style", "")))
    if not rows:
        raise InputError(f"no evaluable records in {records_path}", ref=str(records_path))

    references = {}
    for pair in corpus_mod.load_caption_pairs(gold_path):
        references.setdefault(pair.image_ref, []).append(pair.caption_text)

    records_fp = fingerprint_file(records_path)
    gold_fp = fingerprint_file(gold_path)
    run_dir, config_hash, resolved = evaluate_run_dir(cfg, records_fp, gold_fp)
    input_fp = fingerprint_json([records_fp, gold_fp])
    if not force and run_is_up_to_date(run_dir, config_hash, input_fp):
        print(f"evaluate: up to date ({run_dir})")
        return 0

    report = evaluate_run(rows, references, encoder=_encoder(cfg),
                          scorer_endpoint=os.environ.get(SCORER_ENDPOINT_ENV),
                          clip_weight=cfg["eval"]["clip_weight"],
                          scorer_timeout=cfg["eval"]["scorer_timeout"])
    if not report.per_item:
        raise InputError("no record had gold references; nothing to evaluate",
                         ref=str(records_path))

    with run_lock(run_dir):
        reports_dir = run_dir / "reports"
        reports_dir.mkdir(parents=True, exist_ok=True)
        (reports_dir / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
        (reports_dir / "report.txt").write_text(report.to_table(), encoding="utf-8")
        manifest = base_manifest("evaluate", config_hash, input_fp)
        manifest["resolved_config"] = resolved
        manifest["outputs"] = ["reports/report.jsonl", "reports/report.txt"]
        manifest["n_items"] = len(report.per_item)
        manifest["unavailable"] = sorted(report.unavailable)
        write_manifest(run_dir, manifest)
        print(report.to_table())
        if report.unavailable:
            print(f"evaluate: unavailable metrics: {', '.join(sorted(report.unavailable))}")
        print(f"evaluate: report -> {reports_dir / 'report.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="ppst",
                                     description="image-to-story pipeline driver")
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--force", action="store_true",
                        help="re-run even if an up-to-date run exists")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-corpus")
    sub.add_parser("train-mapper")
    adapter = sub.add_parser("train-adapter")
    adapter.add_argument("--style", required=True)
    gen = sub.add_parser("generate")
    gen.add_argument("--style", required=True)
    gen.add_argument("--images", required=True)
    ev = sub.add_parser("evaluate")
    ev.add_argument("--records", required=True)
    ev.add_argument("--gold", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.command == "build-corpus":
            code = cmd_build_corpus(cfg, force=args.force)
        elif args.command == "train-mapper":
            code = cmd_train_mapper(cfg, force=args.force)
        elif args.command == "train-adapter":
            code = cmd_train_adapter(cfg, args.style, force=args.force)
        elif args.command == "generate":
            code = cmd_generate(cfg, args.images, args.style, force=args.force)
        else:
            code = cmd_evaluate(cfg, args.records, args.gold, force=args.force)
    except TrainingDiverged as exc:
        print(f"ppst {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (InputError, ConfigurationError) as exc:
        print(f"ppst {args.command}: {exc}", file=sys.stderr)
        return 2
    except PpstError as exc:
        print(f"ppst {args.command}: {exc}", file=sys.stderr)
        return 2
    print(f"ppst {args.command}: done in {time.perf_counter() - started:.1f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
