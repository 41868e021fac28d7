"""Command-line entry point.

Machine-readable JSON goes to stdout, logs to stderr. Exit codes: 0 on
success, 1 on validation errors (flags, configs, malformed inputs), 2 on
runtime failures. Every run prints its resolved configuration (seed
included) so experiments are reproducible from logs alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import FuserKind, FuserSpec, build_fuser
from .checkpoint import MAGIC as CKPT_MAGIC
from .checkpoint import load_checkpoint
from .gradcheck import grad_check
from .model import CcmtConfig, init_params, params_to_double
from .rng import Rng
from .storage import MAGIC as EMB_MAGIC
from .storage import load_manifest, load_records, read_embedding_file
from .synth import SynthConfig, generate_dataset
from .tokens import parse_modality
from .training import (
    TrainConfig,
    evaluate,
    load_fuser_checkpoint,
    save_fuser_checkpoint,
    train,
)


class _CliError(Exception):
    """Validation failure: maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _CliError(message)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _threads() -> int:
    raw = os.environ.get("CCMT_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise _CliError(f"CCMT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise _CliError(f"CCMT_THREADS must be >= 1, got {n}")
    return n


def _cmd_synth(args) -> int:
    kwargs = dict(
        n_train=args.n_train,
        n_dev=args.n_dev,
        dim=args.dim,
        noise_sigma=args.noise_sigma,
        label_flip_prob=args.flip_prob,
        seed=args.seed,
    )
    if args.injection_prob is not None:
        kwargs["injection_prob"] = args.injection_prob
    cfg = SynthConfig(**kwargs)
    if args.zero_signal:
        cfg.amplitudes = {t: {m: 0.0 for m in mods} for t, mods in cfg.amplitudes.items()}
    _log(f"resolved config: {json.dumps(cfg.to_dict(), sort_keys=True)}")
    meta = generate_dataset(
        cfg,
        args.out,
        compute_oracle=not args.skip_oracle,
        oracle_samples=args.oracle_samples,
    )
    _emit({"out": str(Path(args.out)), "meta": meta})
    return 0


def _cmd_train(args) -> int:
    mods = tuple(parse_modality(m.strip()) for m in args.modalities.split(",") if m.strip())
    spec = FuserSpec(
        kind=FuserKind(args.fusion),
        modalities=mods,
        k=args.k,
        depth=args.depth,
        heads=args.heads,
        standard_residual=args.standard_residual,
    )
    cfg = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        weight_decay=args.weight_decay,
        seed=args.seed,
        k=args.k,
    )
    train_recs = load_records(load_manifest(args.data, split="train"))
    dev_recs = load_records(load_manifest(args.data, split="dev"))
    if not train_recs or not dev_recs:
        raise _CliError("manifest must provide nonempty train and dev splits")
    d = next(iter(train_recs[0].token_sets.values())).dim
    resolved = {"fuser": spec.to_dict(), "train": cfg.to_dict(), "d": d, "threads": _threads()}
    _log(f"resolved config: {json.dumps(resolved, sort_keys=True)}")
    fuser = build_fuser(spec, d, seed=cfg.seed)
    result = train(
        fuser,
        train_recs,
        dev_recs,
        cfg,
        log=lambda r: _log(
            f"epoch {r.epoch}: loss {r.train_loss:.4f} dev mean UAR {r.dev_uar_mean:.4f}"
        ),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_fuser_checkpoint(
        out,
        fuser,
        result.best_tensors,
        extra={"train": cfg.to_dict(), "best_epoch": result.best_epoch},
    )
    history_path = out.with_suffix(out.suffix + ".history.jsonl")
    history_path.write_text(result.history_jsonl(), encoding="utf-8")
    _emit(
        {
            "checkpoint": str(out),
            "history": str(history_path),
            "best_epoch": result.best_epoch,
            "best_dev": result.best_metrics.to_dict(),
        }
    )
    return 0


def _cmd_eval(args) -> int:
    fuser, config = load_fuser_checkpoint(args.ckpt)
    records = load_records(load_manifest(args.data, split=args.split))
    if not records:
        raise _CliError(f"split {args.split!r} is empty in {args.data}")
    _log(f"resolved config: {json.dumps({'ckpt': str(args.ckpt), 'split': args.split}, sort_keys=True)}")
    metrics = evaluate(fuser, records, threshold=args.threshold)
    _emit(metrics.to_dict())
    return 0


def _gradcheck_config(spec: str, seed: int) -> CcmtConfig:
    if spec == "tiny":
        return CcmtConfig(d=8, k=4, heads=1, d_h=8, d_mlp=8, seed=seed)
    path = Path(spec)
    if not path.is_file():
        raise _CliError(f"gradcheck config must be 'tiny' or a JSON file path, got {spec!r}")
    fields = json.loads(path.read_text(encoding="utf-8"))
    allowed = {"d", "k", "heads", "d_h", "d_mlp", "depth", "eps", "standard_residual"}
    unknown = set(fields) - allowed
    if unknown:
        raise _CliError(f"unknown gradcheck config keys: {sorted(unknown)}")
    if "d" not in fields:
        raise _CliError("gradcheck config file must set 'd'")
    return CcmtConfig(seed=seed, **fields)


def _tiny_gradcheck(seed: int, cfg: CcmtConfig | None = None) -> float:
    from .model import ccmt_forward, prepare_token_set
    from .tensor import Tensor, add, bce_with_logits, scale
    from .tokens import Modality, TokenSet

    if cfg is None:
        cfg = CcmtConfig(d=8, k=4, heads=1, d_h=8, d_mlp=8, seed=seed)
    params = init_params(cfg, Rng(seed))
    params_to_double(params)
    data_rng = Rng(seed ^ 0xDA7A)
    raw = {
        Modality.TEXT_FR: TokenSet(
            Modality.TEXT_FR, Tensor(data_rng.gaussian_array((cfg.k + 1, cfg.d))), True
        ),
        Modality.TEXT_EN: TokenSet(
            Modality.TEXT_EN, Tensor(data_rng.gaussian_array((max(cfg.k - 1, 1), cfg.d))), True
        ),
        Modality.AUDIO: TokenSet(
            Modality.AUDIO, Tensor(data_rng.gaussian_array((cfg.k + 2, cfg.d))), False
        ),
    }

    def model_fn():
        sample_rng = Rng(seed ^ 0x5A17)
        prepared = {m: prepare_token_set(ts, params, sample_rng) for m, ts in raw.items()}
        lr, lc = ccmt_forward(
            prepared[Modality.TEXT_FR],
            prepared[Modality.TEXT_EN],
            prepared[Modality.AUDIO],
            params,
        )
        # The check loss is scaled down to condition the finite differences:
        # the block structure makes some directions exactly loss-invariant
        # (uniform key shifts cancel in softmax), and at O(1) loss the FD
        # roundoff on those zero gradients exceeds the relative-error floor.
        total = add(bce_with_logits(lr, np.float64(1.0)), bce_with_logits(lc, np.float64(0.0)))
        return scale(total, 0.01)

    return grad_check(model_fn, params.named_tensors(), eps=1e-5)


def _cmd_gradcheck(args) -> int:
    cfg = _gradcheck_config(args.config, args.seed)
    _log(f"resolved config: {json.dumps({'config': cfg.to_dict(), 'seed': args.seed}, sort_keys=True)}")
    err = _tiny_gradcheck(args.seed, cfg)
    _emit({"max_relative_error": err, "threshold": 1e-4, "ok": bool(err < 1e-4)})
    return 0 if err < 1e-4 else 2


def _cmd_inspect(args) -> int:
    path = Path(args.file)
    if not path.is_file():
        raise _CliError(f"no such file: {path}")
    head = path.read_bytes()[:4]
    if head == EMB_MAGIC:
        sets = read_embedding_file(path)
        _emit(
            {
                "format": "embedding",
                "modalities": {
                    m.value: {
                        "tokens": ts.count,
                        "dim": ts.dim,
                        "has_class_token": ts.has_class_token,
                    }
                    for m, ts in sorted(sets.items(), key=lambda kv: kv[0].value)
                },
            }
        )
        return 0
    if head == CKPT_MAGIC:
        config, tensors = load_checkpoint(path)
        _emit(
            {
                "format": "checkpoint",
                "config": config,
                "tensors": {name: list(arr.shape) for name, arr in sorted(tensors.items())},
            }
        )
        return 0
    raise _CliError(f"unrecognized file magic {head!r} (expected {EMB_MAGIC!r} or {CKPT_MAGIC!r})")


def build_parser() -> _Parser:
    p = _Parser(prog="ccmt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic three-modality dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-train", type=int, default=1000)
    sp.add_argument("--n-dev", type=int, default=500)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--noise-sigma", type=float, default=1.0)
    sp.add_argument("--injection-prob", type=float, default=None)
    sp.add_argument("--flip-prob", type=float, default=0.05)
    sp.add_argument("--zero-signal", action="store_true", help="set all amplitudes to zero")
    sp.add_argument("--skip-oracle", action="store_true")
    sp.add_argument("--oracle-samples", type=int, default=2000)
    sp.set_defaults(func=_cmd_synth)

    tp = sub.add_parser("train", help="train a fuser on a dataset manifest")
    tp.add_argument("--data", required=True)
    tp.add_argument("--fusion", required=True, choices=[k.value for k in FuserKind])
    tp.add_argument("--modalities", default="text_fr,text_en,audio")
    tp.add_argument("--epochs", type=int, default=30)
    tp.add_argument("--lr", type=float, default=1e-4)
    tp.add_argument("--batch", type=int, default=32)
    tp.add_argument("--k", type=int, default=100)
    tp.add_argument("--depth", type=int, default=1)
    tp.add_argument("--heads", type=int, default=1)
    tp.add_argument("--weight-decay", type=float, default=0.0)
    tp.add_argument("--standard-residual", action="store_true")
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--out", required=True)
    tp.set_defaults(func=_cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", default="dev", choices=["dev", "test"])
    ep.add_argument("--threshold", type=float, default=0.5)
    ep.set_defaults(func=_cmd_eval)

    gp = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    gp.add_argument("--config", default="tiny")
    gp.add_argument("--seed", type=int, default=0)
    gp.set_defaults(func=_cmd_gradcheck)

    ip = sub.add_parser("inspect", help="dump embedding-file or checkpoint headers")
    ip.add_argument("--file", required=True)
    ip.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
