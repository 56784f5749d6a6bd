"""Command-line entry point: gen, dict, train, adapt, eval, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import dtemdnet, experiments, simgen, sparsedict
from .diffcore import NonFiniteError
from .tta import TTAConfig, adapt_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
NORM_SCALE = 1e-3

log = logging.getLogger("temdenoise")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_model(ckpt_path, dict_path):
    dictionary = sparsedict.Dictionary.load(dict_path)
    ckpt = dtemdnet.load_checkpoint(ckpt_path)
    return dtemdnet.build_model(ckpt, dictionary), dictionary


def _load_domains(dirs) -> dict:
    domains = {}
    for d in dirs:
        ds = simgen.load_dataset(d)
        name = ds.spec.kind.value
        domains[name if name not in domains else f"{name}:{Path(d).name}"] = ds
    return domains


def _tta_config(args) -> TTAConfig:
    return TTAConfig(beta1=args.beta1, beta2=args.beta2, lr=args.lr, batch=args.batch,
                     aug_noise_std=args.noise_level)


def cmd_gen(args) -> int:
    ds = simgen.make_dataset(simgen.DomainSpec.default(args.domain), args.n, args.seed)
    simgen.save_dataset(ds, args.out)
    log.info("wrote %d %s samples to %s", len(ds), args.domain, args.out)
    return EXIT_OK


def cmd_dict(args) -> int:
    ds = simgen.load_dataset(args.data)
    Y = ds.clean.astype(np.float64) * NORM_SCALE
    D, _, rep = sparsedict.learn_dictionary(Y, args.k, args.lam, args.epochs, args.seed,
                                            max_iters=args.max_iters, source_hash=ds.digest())
    D.save(args.out)
    log.info("dictionary K=%d  mse %.4g  sparsity %.3f", D.K, rep.final_mse, rep.sparsity)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = simgen.load_dataset(args.data)
    dictionary = sparsedict.Dictionary.load(args.dict)
    cfg = dtemdnet.TrainConfig.preset(args.preset)
    if args.epochs is not None:
        cfg = dtemdnet.TrainConfig(**{**cfg.__dict__, "epochs": args.epochs})
    train_set, _ = simgen.train_test_split(ds, seed=args.seed)
    train_set = train_set.subset(np.arange(min(cfg.n_train, len(train_set))))
    codes = sparsedict.sparse_encode(dictionary, train_set.clean.astype(np.float64) * NORM_SCALE,
                                     dictionary.lam, max_iters=args.max_iters)
    ckpt = dtemdnet.train(train_set.clean, train_set.noisy, dictionary, codes, cfg, args.seed, NORM_SCALE)
    dtemdnet.save_checkpoint(ckpt, args.out)
    log_path = Path(args.log) if args.log else Path(args.out).with_name("train_log.csv")
    dtemdnet.write_train_log(ckpt.log, log_path)
    return EXIT_OK


def cmd_adapt(args) -> int:
    model, _ = _load_model(args.ckpt, args.dict)
    data = simgen.load_dataset(args.data)
    rep = adapt_dataset(model, data, _tta_config(args), args.seed)
    rep.write_csv(args.report)
    log.info("snr source %.3f dB -> adapted %.3f dB", rep.snr_pre, rep.snr_post)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, dictionary = _load_model(args.ckpt, args.dict)
    rows = experiments.domain_report(model, dictionary, _load_domains(args.data), _tta_config(args), args.seed)
    experiments.write_metric_rows(rows, args.report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.axis == "k":
        if len(args.data) != 1:
            raise UsageError("ablate k takes a single --data corpus")
        ds = simgen.load_dataset(args.data[0])
        ks = [int(k) for k in args.ks.split(",")]
        grid = experiments.ablate_k(ks, ds.clean.astype(np.float64) * NORM_SCALE, args.lam, args.seed,
                                    args.epochs, max_iters=args.max_iters)
    else:
        if not (args.ckpt and args.dict):
            raise UsageError("ablate losses needs --ckpt and --dict")
        model, _ = _load_model(args.ckpt, args.dict)
        grid = experiments.ablate_losses(model, _load_domains(args.data), _tta_config(args), args.seed)
    grid.write_csv(args.report)
    return EXIT_OK


def _add_tta_flags(p):
    d = TTAConfig()
    p.add_argument("--beta1", type=float, default=d.beta1)
    p.add_argument("--beta2", type=float, default=d.beta2)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch", type=int, default=d.batch)
    p.add_argument("--noise-level", type=float, default=d.aug_noise_std, help="augmentation std in mV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="temdenoise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a clean/noisy corpus")
    p.add_argument("--domain", required=True, choices=[k.value for k in simgen.Kind])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("dict", help="dictionary learning")
    p.add_argument("action", choices=["learn"])
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dict)

    p = sub.add_parser("train", help="train the denoiser on a source corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--preset", choices=["paper", "desk"], default="desk")
    p.add_argument("--epochs", type=int, default=None, help="override the preset epoch count")
    p.add_argument("--max-iters", type=int, default=300, help="ISTA budget for the target codes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="training log CSV (default: train_log.csv beside --out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="one-step test-time adaptation over a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--data", required=True)
    _add_tta_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="per-domain SNR / smoothness report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--data", required=True, nargs="+")
    _add_tta_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="dictionary-size or loss-component ablation")
    p.add_argument("axis", choices=["k", "losses"])
    p.add_argument("--data", required=True, nargs="+", help="one corpus for k; one or more (pooled) for losses")
    p.add_argument("--ks", default="8,32,64,256")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--ckpt")
    p.add_argument("--dict")
    _add_tta_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, NonFiniteError, sparsedict.ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
