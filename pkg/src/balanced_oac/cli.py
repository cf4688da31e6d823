"""Command-line entry point.

Subcommands: ``codec`` (one-off encode/decode queries), ``linksim``
(one-shot aggregation of a gradient file), ``mse-verify`` (closed-form vs
Monte Carlo error table), and ``feel`` (federated training).  All accept a
TOML/JSON config file plus flag overrides; emitted CSV/JSON files embed the
resolved config and its hash, carry no timestamps, and are byte-identical
across reruns with the same seed.

Exit codes: 0 success, 2 configuration error, 3 capacity error,
4 numerical divergence.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .analysis import monte_carlo_mse
from .codec import BalancedConfig, decode, encode, step_size
from .config import ExperimentConfig, config_hash, load_config
from .errors import CapacityError, ConfigError, DivergenceError
from .feel import (
    load_mnist,
    make_model,
    partition_heterogeneous_concentric,
    partition_homogeneous,
    synthetic_dataset,
    train,
)
from .link import oac_round

__all__ = ["main"]

OUTPUT_DIR_ENV = "BALANCED_OAC_OUTPUT_DIR"

_PARTITION_ALIASES = {
    "homo": "homogeneous",
    "homogeneous": "homogeneous",
    "hetero": "heterogeneous_concentric",
    "heterogeneous_concentric": "heterogeneous_concentric",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="balanced-oac",
        description="Digital over-the-air gradient aggregation over balanced numerals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON experiment file")
    common.add_argument("--output-dir", type=Path, help="directory for emitted files")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--base", type=int, help="numeral base (odd, >= 3)")
    common.add_argument("--digits", type=int, help="numerals per gradient entry")
    common.add_argument("--v-max", type=float, help="clip level of the quantizer")

    chan = argparse.ArgumentParser(add_help=False)
    chan.add_argument("--devices", type=int, help="number of edge devices K")
    chan.add_argument("--antennas", type=int, help="server antennas R")
    chan.add_argument("--snr-db", type=float, help="SNR in dB (noise power 10^(-x/10))")
    chan.add_argument(
        "--fading", choices=("iid_flat", "epa_tdl"), help="fading model"
    )
    chan.add_argument(
        "--sync-error-samples", type=float, help="receiver DFT window offset N_err"
    )
    chan.add_argument(
        "--detector", choices=("relaxed", "exact"), help="vote detector"
    )
    chan.add_argument(
        "--clamp-votes", action="store_true", default=None,
        help="clip relaxed votes into [0, K]",
    )
    chan.add_argument(
        "--noise-scale", type=float,
        help="multiplicative error on the noise power assumed by the detector",
    )

    p_codec = sub.add_parser(
        "codec", parents=[common], help="encode/decode/step-size queries (JSON lines)"
    )
    p_codec.add_argument("--encode", type=float, nargs="+", metavar="VALUE")
    p_codec.add_argument(
        "--decode", nargs="+", metavar="SEQ", help="comma-separated numerals, e.g. 1,-2,2"
    )
    p_codec.add_argument("--step", action="store_true", help="print the quantizer step")

    p_link = sub.add_parser(
        "linksim", parents=[common, chan], help="one-shot aggregation of a gradient file"
    )
    p_link.add_argument(
        "--gradients", type=Path, required=True,
        help="text file, one device per row, one column per gradient entry",
    )
    p_link.add_argument(
        "--mode", choices=("oac", "quantized", "ideal"), help="link mode"
    )
    p_link.add_argument(
        "--ideal-link", action="store_true",
        help="bypass the channel (codec-only aggregation)",
    )
    p_link.add_argument("--output", type=Path, help="also write a CSV of estimates")

    p_mse = sub.add_parser(
        "mse-verify", parents=[common, chan],
        help="closed-form vs Monte Carlo error table (CSV)",
    )
    p_mse.add_argument("--trials", type=int, help="Monte Carlo trials per parameter set")
    p_mse.add_argument(
        "--antenna-sweep", type=str, metavar="R1,R2,...",
        help="comma-separated antenna counts (default: the configured R)",
    )
    p_mse.add_argument(
        "--gradients", type=Path,
        help="fixed gradient file; default draws uniform gradients from the seed",
    )
    p_mse.add_argument(
        "--num-gradients", type=int, default=None,
        help="random gradient columns to draw when no file is given (default 1)",
    )
    p_mse.add_argument("--output", type=Path, help="CSV path (default mse_verify.csv)")

    p_feel = sub.add_parser(
        "feel", parents=[common, chan], help="federated training over the link"
    )
    p_feel.add_argument(
        "--partition", choices=sorted(_PARTITION_ALIASES), help="data partition"
    )
    p_feel.add_argument("--rounds", type=int, help="communication rounds")
    p_feel.add_argument("--task", choices=("mnist", "synthetic"), help="learning task")
    p_feel.add_argument("--mnist-dir", type=Path, help="directory with MNIST IDX files")
    p_feel.add_argument("--mode", choices=("oac", "quantized", "ideal"), help="link mode")
    p_feel.add_argument("--learning-rate", type=float)
    p_feel.add_argument("--batch-size", type=int)
    p_feel.add_argument("--momentum", type=float)
    p_feel.add_argument("--hidden", type=int, help="hidden width (0 = softmax)")
    p_feel.add_argument(
        "--v-max-policy", choices=("fixed", "adaptive"), help="clip level policy"
    )
    return parser


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    codec_kw = {}
    if args.base is not None:
        codec_kw["base"] = args.base
    if args.digits is not None:
        codec_kw["digits"] = args.digits
    if getattr(args, "v_max", None) is not None:
        codec_kw["v_max"] = args.v_max
    if codec_kw:
        cfg = dataclasses.replace(
            cfg, codec=dataclasses.replace(cfg.codec, **codec_kw)
        )
    chan_kw = {}
    for arg_name, field_name in (
        ("devices", "num_devices"),
        ("antennas", "num_antennas"),
        ("fading", "fading"),
        ("sync_error_samples", "sync_error_samples"),
    ):
        value = getattr(args, arg_name, None)
        if value is not None:
            chan_kw[field_name] = value
    if getattr(args, "snr_db", None) is not None:
        chan_kw["noise_var"] = 10.0 ** (-args.snr_db / 10.0)
    if chan_kw:
        cfg = dataclasses.replace(
            cfg, channel=dataclasses.replace(cfg.channel, **chan_kw)
        )
    top_kw = {}
    if getattr(args, "detector", None) is not None:
        top_kw["detector"] = args.detector
    if getattr(args, "clamp_votes", None) is not None:
        top_kw["clamp_votes"] = args.clamp_votes
    if getattr(args, "noise_scale", None) is not None:
        top_kw["noise_scale"] = args.noise_scale
    if getattr(args, "mode", None) is not None:
        top_kw["link_mode"] = args.mode
    if args.seed is not None:
        top_kw["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        top_kw["trials"] = args.trials
    if top_kw:
        cfg = dataclasses.replace(cfg, **top_kw)
    return cfg


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    if args.output_dir is not None:
        path = Path(args.output_dir)
    elif os.environ.get(OUTPUT_DIR_ENV):
        path = Path(os.environ[OUTPUT_DIR_ENV])
    elif cfg.output_dir is not None:
        path = Path(cfg.output_dir)
    else:
        path = Path.cwd()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, cfg: ExperimentConfig, header, rows) -> str:
    lines = [
        f"# config: {json.dumps(cfg.resolved(), sort_keys=True)}",
        f"# config_sha256: {config_hash(cfg)}",
        ",".join(header),
    ]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    path.write_text(text)
    return text


def _write_summary(path: Path, cfg: ExperimentConfig, payload: dict):
    body = {"config": cfg.resolved(), "config_sha256": config_hash(cfg), **payload}
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")


def _load_gradient_file(path: Path) -> np.ndarray:
    try:
        g = np.loadtxt(path, delimiter=None, ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read gradients from {path}: {e}") from e
    if g.size == 0:
        raise ConfigError(f"gradient file {path} is empty")
    return g


def _cmd_codec(args) -> int:
    cfg = _base_config(args)
    codec = cfg.codec
    if not (args.encode or args.decode or args.step):
        raise ConfigError("codec needs at least one of --encode, --decode, --step")
    out = []
    for v in args.encode or ():
        numerals = encode(codec, v)
        out.append(
            {
                "op": "encode",
                "value": v,
                "numerals": [int(x) for x in numerals],
                "decoded": float(decode(codec, numerals)),
            }
        )
    for seq in args.decode or ():
        try:
            numerals = [float(tok) for tok in seq.split(",")]
        except ValueError as e:
            raise ConfigError(f"bad numeral sequence {seq!r}: {e}") from e
        out.append(
            {"op": "decode", "numerals": numerals, "value": float(decode(codec, numerals))}
        )
    if args.step:
        out.append({"op": "step", "value": step_size(codec)})
    for entry in out:
        print(json.dumps(entry, sort_keys=True))
    return 0


def _cmd_linksim(args) -> int:
    cfg = _base_config(args)
    gradients = _load_gradient_file(args.gradients)
    devices, num_gradients = gradients.shape
    cfg = dataclasses.replace(
        cfg, channel=dataclasses.replace(cfg.channel, num_devices=devices)
    )
    if args.ideal_link:
        cfg = dataclasses.replace(cfg, link_mode="quantized")
    estimates = oac_round(gradients, cfg.link(), cfg.seed)
    for value in estimates:
        print(f"{value:.6f}")
    if args.output is not None:
        out_dir = _output_dir(args, cfg)
        path = args.output if args.output.is_absolute() else out_dir / args.output
        _write_csv(
            path,
            cfg,
            ("gradient", "estimate"),
            [(q, estimates[q]) for q in range(num_gradients)],
        )
        _write_summary(
            path.with_suffix(".summary.json"),
            cfg,
            {
                "seed": cfg.seed,
                "estimates": [float(v) for v in estimates],
                "outputs": {"csv": str(path)},
            },
        )
    return 0


def _cmd_mse_verify(args) -> int:
    cfg = _base_config(args)
    if args.gradients is not None and args.num_gradients is not None:
        raise ConfigError("give either --gradients or --num-gradients, not both")
    if args.gradients is not None:
        gradients = _load_gradient_file(args.gradients)
        cfg = dataclasses.replace(
            cfg, channel=dataclasses.replace(cfg.channel, num_devices=gradients.shape[0])
        )
    else:
        q = args.num_gradients if args.num_gradients is not None else 1
        profile_rng = rngmod.stream(cfg.seed, rngmod.ROLE_PROFILE)
        gradients = profile_rng.uniform(
            -cfg.codec.v_max, cfg.codec.v_max, size=(cfg.channel.num_devices, q)
        )
    if args.antenna_sweep:
        try:
            antenna_list = [int(tok) for tok in args.antenna_sweep.split(",")]
        except ValueError as e:
            raise ConfigError(f"bad --antenna-sweep {args.antenna_sweep!r}") from e
    else:
        antenna_list = [cfg.channel.num_antennas]

    rows = []
    for antennas in antenna_list:
        run_cfg = dataclasses.replace(
            cfg, channel=dataclasses.replace(cfg.channel, num_antennas=antennas)
        )
        report = monte_carlo_mse(
            run_cfg.codec,
            gradients,
            run_cfg.channel,
            trials=run_cfg.trials,
            seed=run_cfg.seed,
            detector=run_cfg.detector,
        )
        for q in range(gradients.shape[1]):
            rows.append(
                (
                    f"q{q:02d}-R{antennas}",
                    report.theory_var[q],
                    report.emp_var[q],
                    report.emp_var_se[q],
                    report.theory_bias2[q],
                    report.emp_mse[q],
                    report.trials,
                    run_cfg.seed,
                )
            )
    out_dir = _output_dir(args, cfg)
    path = args.output if args.output is not None else Path("mse_verify.csv")
    if not path.is_absolute():
        path = out_dir / path
    header = (
        "param_set",
        "theory_var",
        "emp_var",
        "emp_var_se",
        "theory_bias2",
        "emp_mse",
        "trials",
        "seed",
    )
    text = _write_csv(path, cfg, header, rows)
    _write_summary(
        path.with_suffix(".summary.json"),
        cfg,
        {"seed": cfg.seed, "outputs": {"csv": str(path)}, "param_sets": len(rows)},
    )
    sys.stdout.write(text)
    return 0


def _cmd_feel(args) -> int:
    cfg = _base_config(args)
    learn_kw = {}
    for arg_name, field_name in (
        ("rounds", "rounds"),
        ("learning_rate", "learning_rate"),
        ("batch_size", "batch_size"),
        ("momentum", "momentum"),
        ("v_max_policy", "v_max_policy"),
    ):
        value = getattr(args, arg_name, None)
        if value is not None:
            learn_kw[field_name] = value
    if learn_kw:
        cfg = dataclasses.replace(cfg, learn=dataclasses.replace(cfg.learn, **learn_kw))
    data_kw = {}
    if args.task is not None:
        data_kw["task"] = args.task
    if args.partition is not None:
        data_kw["partition"] = _PARTITION_ALIASES[args.partition]
    if args.mnist_dir is not None:
        data_kw["mnist_dir"] = str(args.mnist_dir)
    if args.hidden is not None:
        data_kw["hidden"] = args.hidden
    if data_kw:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, **data_kw))

    if cfg.data.task == "mnist":
        if cfg.data.mnist_dir is None:
            raise ConfigError("task mnist needs --mnist-dir (or learning.mnist_dir)")
        train_set, test_set = load_mnist(cfg.data.mnist_dir)
    else:
        train_set, test_set = synthetic_dataset(
            classes=cfg.data.classes,
            features=cfg.data.features,
            train_size=cfg.data.train_size,
            test_size=cfg.data.test_size,
            seed=cfg.seed,
            separation=cfg.data.separation,
        )
    if cfg.data.partition == "heterogeneous_concentric":
        partition = partition_heterogeneous_concentric(
            train_set.y, cfg.channel.num_devices, cfg.seed
        )
    else:
        partition = partition_homogeneous(
            train_set.y, cfg.channel.num_devices, cfg.seed
        )
    model = make_model(train_set.x.shape[1], train_set.num_classes, cfg.data.hidden)
    reports = train(
        model, train_set, test_set, partition, cfg.link(), cfg.learn, cfg.seed
    )

    out_dir = _output_dir(args, cfg)
    csv_path = out_dir / "feel_rounds.csv"
    header = (
        "round",
        "loss",
        "accuracy",
        "true_norm",
        "oac_error",
        "quant_error",
        "clipped",
        "v_max",
    )
    _write_csv(
        csv_path,
        cfg,
        header,
        [
            (
                r.round,
                r.loss,
                r.accuracy,
                r.true_norm,
                r.oac_error,
                r.quant_error,
                r.clipped,
                r.v_max,
            )
            for r in reports
        ],
    )
    summary_path = out_dir / "feel_summary.json"
    _write_summary(
        summary_path,
        cfg,
        {
            "seed": cfg.seed,
            "rounds": len(reports),
            "model_parameters": model.num_params,
            "final_accuracy": reports[-1].accuracy,
            "best_accuracy": max(r.accuracy for r in reports),
            "final_loss": reports[-1].loss,
            "mean_oac_error": float(np.mean([r.oac_error for r in reports])),
            "mean_quant_error": float(np.mean([r.quant_error for r in reports])),
            "outputs": {"csv": str(csv_path), "summary": str(summary_path)},
        },
    )
    last = reports[-1]
    print(
        f"rounds={len(reports)} final_accuracy={last.accuracy:.4f} "
        f"final_loss={last.loss:.4f} outputs={csv_path}"
    )
    return 0


_COMMANDS = {
    "codec": _cmd_codec,
    "linksim": _cmd_linksim,
    "mse-verify": _cmd_mse_verify,
    "feel": _cmd_feel,
}

_EXIT_CODES = {ConfigError: 2, CapacityError: 3, DivergenceError: 4}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CapacityError, DivergenceError) as e:
        kind = next(k for k in _EXIT_CODES if isinstance(e, k))
        payload = {"error": {"type": kind.__name__, "message": str(e)}}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return _EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
