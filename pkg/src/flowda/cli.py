"""``flowda`` command-line interface.

Every command reads an optional YAML config, applies flag overrides,
holds a lock on its output directory and prints one JSON record on
success. Failures print a JSON error record to stderr and exit nonzero.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml
from filelock import FileLock, Timeout

from . import config as cfgmod
from . import evaluation as ev
from . import io
from . import pipeline
from .errors import ConfigurationError, FormatError, NonFiniteError, RejectedInput
from .sampler import BACKWARD, FORWARD, integrate, model_velocity, sigmoid_schedule
from . import codec as codecs

log = logging.getLogger("flowda")

TRAIN_FILE = "train.flow"
TEST_FILE = "test.flow"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.flow"
TRACE_FILE = "trace.jsonl"
METRICS_FILE = "metrics.jsonl"
LOCK_FILE = ".flowda.lock"

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NONFINITE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="data and training seed")
    p.add_argument("--out", help="output directory (translate: output file)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. train.batch_size=128")
    p.add_argument("-v", "--verbose", action="store_true")


def _sampling(p):
    p.add_argument("--steps", type=int, help="sampling steps (default 50)")
    p.add_argument("--kappa", type=float, help="sigmoid schedule sharpness (default 10)")
    p.add_argument("--direction", choices=(FORWARD, BACKWARD))


def build_parser():
    parser = _Parser(prog="flowda", description="Paired-coupling latent flows for domain translation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write train/test datasets and a manifest")
    _common(p)
    p.add_argument("--modality", choices=("shapes", "points"))
    p.add_argument("--weak-p", type=float)

    p = sub.add_parser("train", help="fit the codec, downstream predictors and one flow")
    _common(p)
    p.add_argument("--data", help="directory holding gen-data output (default: --out)")
    p.add_argument("--coupling")
    p.add_argument("--train-steps", type=int, help="total optimisation steps")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p = sub.add_parser("translate", help="push a data file through a trained flow")
    _common(p)
    _sampling(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="array container, .npy or text table")
    p.add_argument("--trajectory", help="also dump per-step latent states as JSONL here")

    p = sub.add_parser("evaluate", help="no-adaptation / adapted / upper-bound records")
    _common(p)
    _sampling(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="test dataset file (default: <checkpoint dir>/test.flow)")
    p.add_argument("--downstream", help="frozen predictor file (default: next to the checkpoint)")

    p = sub.add_parser("ablate", help="coupling ablation table (both directions)")
    _common(p)
    _sampling(p)
    p.add_argument("--coupling", action="append", help="restrict to these strategies")
    p.add_argument("--train-steps", type=int)
    p.add_argument("--schedule-sweep", action="store_true",
                   help="add linear vs sigmoid rows at N = 10, 25, 50")
    return parser


# -- config resolution ----------------------------------------------------------

def _parse_value(text):
    value = yaml.safe_load(text)
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            return float(value)
        except ValueError:
            pass
    return value


def resolve_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig().validate()
    overrides = []
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), _parse_value(value)))
    if args.seed is not None:
        overrides += [("data.seed", args.seed), ("train.seed", args.seed)]
    flag_keys = {"steps": "sampler.steps", "kappa": "sampler.kappa", "direction": "sampler.direction",
                 "train_steps": "train.total_steps", "modality": "data.modality", "weak_p": "data.weak_p",
                 "out": "out"}
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append((key, value))
    coupling = getattr(args, "coupling", None)
    if isinstance(coupling, str):
        overrides.append(("coupling", coupling))
    for key, value in overrides:
        cfg = cfgmod.set_key(cfg, key, value)
    return cfg


def _emit(record):
    print(json.dumps(record, sort_keys=True))


# -- commands -------------------------------------------------------------------

def cmd_gen_data(cfg, args):
    out = Path(cfg.out)
    train_set, test_set = pipeline.make_datasets(cfg)
    io.save_dataset(out / TRAIN_FILE, train_set)
    io.save_dataset(out / TEST_FILE, test_set)
    manifest = {"config": cfg.echo(), "train": train_set.manifest(), "test": test_set.manifest()}
    manifest["fingerprint"] = io.manifest_fingerprint(manifest)
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    rec = {"command": "gen-data", "out": str(out), "agreement_rate": train_set.agreement_rate,
           "test_agreement_rate": test_set.agreement_rate, "n_train": len(train_set),
           "n_test": len(test_set), "fingerprint": manifest["fingerprint"]}
    _emit(rec)
    return rec


def _downstream_file(out, direction):
    return Path(out) / f"downstream_{direction}.flow"


def cmd_train(cfg, args):
    out = Path(cfg.out)
    data_dir = Path(args.data) if args.data else out
    if not (data_dir / TRAIN_FILE).exists():
        raise FileNotFoundError(f"no dataset at {data_dir / TRAIN_FILE}; run gen-data first")
    train_set = io.load_dataset(data_dir / TRAIN_FILE)
    fingerprint = io.manifest_fingerprint(train_set.manifest())
    ckpt_path = out / CHECKPOINT_FILE
    state = None
    if args.resume:
        prev = io.load_checkpoint(ckpt_path)
        state, codec = prev.state, prev.codec
        if prev.dataset_fingerprint != fingerprint:
            raise RejectedInput("checkpoint was trained on a different dataset "
                                f"(expected {prev.dataset_fingerprint}, found {fingerprint})")
    else:
        codec = pipeline.fit_codec(cfg, train_set)
        for direction, domain in ((FORWARD, 1), (BACKWARD, 0)):
            model = pipeline.fit_downstream(train_set, domain, seed=cfg.data.seed)
            io.save_downstream(_downstream_file(out, direction), model)
        trace_path = out / TRACE_FILE
        if trace_path.exists():
            trace_path.unlink()

    z0, z1 = codecs.encode(codec, train_set.x0), codecs.encode(codec, train_set.x1)
    echo = cfg.echo()
    current = {"state": state}

    def save(st):
        io.save_checkpoint(ckpt_path, io.Checkpoint(st, codec, echo, fingerprint))

    def on_step(rec):
        io.append_jsonl(out / TRACE_FILE, rec)
        every = cfg.checkpoint_every
        if every and (rec["step"] + 1) % every == 0:
            save(current["state"])

    from .velocity import init_state, train

    if state is None:
        state = init_state(z0.shape[1], cfg.train)
    current["state"] = state
    try:
        state = train(z0, z1, cfg.coupling, cfg.train, state=state, on_step=on_step)
    except NonFiniteError as exc:
        if exc.state is not None:
            save(exc.state)
        raise
    save(state)
    rec = {"command": "train", "checkpoint": str(ckpt_path), "step": state.step,
           "coupling": cfg.coupling, "final_loss": state.trace[-1]["loss"] if state.trace else None}
    _emit(rec)
    return rec


def _grid(cfg):
    return sigmoid_schedule(cfg.sampler.steps, cfg.sampler.kappa)


def cmd_translate(cfg, args):
    if args.out is None:
        raise ConfigurationError("translate needs --out FILE")
    ckpt = io.load_checkpoint(args.checkpoint)
    x = io.load_array(args.input)
    out = Path(cfg.out)
    grid = _grid(cfg)
    direction = cfg.sampler.direction
    if x.size == 0:
        y = np.empty((0, ckpt.codec.input_dim))
        states = []
    else:
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != ckpt.codec.input_dim:
            raise RejectedInput(f"input has dim {x.shape[1]}, checkpoint expects {ckpt.codec.input_dim}")
        z = codecs.encode(ckpt.codec, x)
        z_end, states = integrate(model_velocity(ckpt.state.ema_params), z, grid, direction,
                                  trajectory=bool(args.trajectory))
        y = codecs.decode(ckpt.codec, z_end)
    io.save_array(out, y, {"direction": direction, "steps": grid.steps, "kappa": grid.kappa})
    if args.trajectory:
        path = Path(args.trajectory)
        if path.exists():
            path.unlink()
        times = grid.times if direction == FORWARD else grid.times[::-1]
        for i, zs in enumerate(states or []):
            io.append_jsonl(path, {"node": i, "t": float(times[i]), "z": zs.tolist()})
    rec = {"command": "translate", "out": str(out), "n": int(len(y)), "direction": direction,
           "steps": grid.steps, "kappa": grid.kappa}
    _emit(rec)
    return rec


def cmd_evaluate(cfg, args):
    ckpt = io.load_checkpoint(args.checkpoint)
    base = Path(args.checkpoint).parent
    test = io.load_dataset(args.data or base / TEST_FILE)
    direction = cfg.sampler.direction
    downstream = io.load_downstream(args.downstream or _downstream_file(base, direction))
    frozen = downstream.weights.copy()
    reports = ev.evaluate_configuration(ckpt.state, ckpt.codec, test, downstream, _grid(cfg),
                                        direction, name=ckpt.config.get("coupling", "flow"),
                                        raw_features=cfg.eval.raw_features)
    if not np.array_equal(frozen, downstream.weights):
        raise RuntimeError("downstream weights changed during evaluation")
    out = Path(cfg.out)
    records = []
    for role in ("no_adaptation", "adapted", "upper_bound"):
        rec = {"role": role, "direction": direction, **reports[role].record()}
        io.append_jsonl(out / METRICS_FILE, rec)
        records.append(rec)
        _emit(rec)
    return records


def cmd_ablate(cfg, args):
    out = Path(cfg.out)
    strategies = tuple(args.coupling) if args.coupling else pipeline.STRATEGIES
    sweep = cfg.eval.sweep_steps if (args.schedule_sweep or cfg.eval.schedule_sweep) else None
    res = pipeline.run_coupling_ablation(cfg, strategies=strategies, sweep=sweep)
    table = res.table()
    (out / "ablation.txt").write_text(table + "\n")
    path = out / "ablation.jsonl"
    if path.exists():
        path.unlink()
    for row in res.rows + res.sweep:
        io.append_jsonl(path, {**row, "config": cfg.echo()})
    print(table)
    return res


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "translate": cmd_translate,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def _lock_dir(cfg, command):
    out = Path(cfg.out)
    if command == "translate":
        out = out.parent if str(out.parent) else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _error_record(command, exc):
    rec = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    step = getattr(exc, "step", None)
    if step is not None:
        rec["step"] = step
    return rec


def main(argv=None):
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        lock_dir = _lock_dir(cfg, command)
        with FileLock(os.fspath(lock_dir / LOCK_FILE), timeout=0):
            COMMANDS[command](cfg, args)
        return 0
    except Timeout as exc:
        err, code = RuntimeError(f"output directory is locked by another run ({exc.lock_file})"), EXIT_FAILURE
    except NonFiniteError as exc:
        err, code = exc, EXIT_NONFINITE
    except (ConfigurationError, RejectedInput, FormatError) as exc:
        err, code = exc, EXIT_USAGE
    except (OSError, RuntimeError, ValueError, KeyError) as exc:
        err, code = exc, EXIT_FAILURE
    print(json.dumps(_error_record(command, err), sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
