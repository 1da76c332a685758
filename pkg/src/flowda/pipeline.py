"""End-to-end runs shared by the CLI and the acceptance harness."""

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import codec as codecs
from . import evaluation as ev
from . import synthdata
from .coupling import STRATEGIES
from .sampler import BACKWARD, FORWARD, linear_schedule, sigmoid_schedule, translate
from .velocity import train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    train: synthdata.DomainPairDataset
    test: synthdata.DomainPairDataset
    codec: codecs.Codec
    downstream: dict  # direction -> frozen predictor for that direction's output domain


def make_datasets(cfg):
    d = cfg.data
    kw = dict(seed=d.seed, side=d.side, weak_p=d.weak_p, noise_sigma=d.noise_sigma)
    return (synthdata.generate(d.modality, d.n, split="train", **kw),
            synthdata.generate(d.modality, d.n_test, split="test", **kw))


def fit_codec(cfg, train_set):
    if cfg.codec.kind == "identity":
        return codecs.identity_codec(train_set.x0.shape[1])
    return codecs.fit_pca(np.vstack([train_set.x0, train_set.x1]), cfg.codec.latent_dim)


def direction_codec(codec, train_set, direction, refit):
    """Optionally refit the decoder on the output domain of ``direction``."""
    if not refit:
        return codec
    return codecs.refit_decoder(codec, train_set.x1 if direction == FORWARD else train_set.x0)


def fit_downstream(train_set, domain, seed=0):
    """Predictor trained on one domain's labelled split (1 for forward, 0 for backward)."""
    x, y = (train_set.x1, train_set.y1) if domain == 1 else (train_set.x0, train_set.y0)
    if train_set.modality == "shapes":
        return ev.train_downstream(x, y, kind=ev.PIXEL, classes=synthdata.N_CLASSES,
                                   side=train_set.params["side"], seed=seed)
    return ev.train_downstream(x, y, kind=ev.LINEAR, classes=2, seed=seed)


def prepare(cfg, directions=(FORWARD, BACKWARD)):
    train_set, test_set = make_datasets(cfg)
    codec = fit_codec(cfg, train_set)
    downstream = {}
    for direction in directions:
        downstream[direction] = fit_downstream(train_set, 1 if direction == FORWARD else 0,
                                               seed=cfg.data.seed)
    return Prepared(train_set, test_set, codec, downstream)


def train_flow(cfg, prepared, strategy, on_step=None, state=None):
    z0 = codecs.encode(prepared.codec, prepared.train.x0)
    z1 = codecs.encode(prepared.codec, prepared.train.x1)
    return train(z0, z1, strategy, cfg.train, state=state, on_step=on_step)


def model_digest(state):
    h = hashlib.sha256()
    for p in state.ema_params.params:
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class AblationResult:
    rows: list
    sweep: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)  # (strategy, direction) -> report triple
    trained: int = 0

    def table(self):
        return render_table(self.rows) + ("\n\n" + render_table(self.sweep) if self.sweep else "")


ROW_COLUMNS = ("strategy", "direction", "seed", "miou", "macc", "fd_gaussian", "paired_rmse",
               "no_adapt_miou", "upper_miou", "n_eval", "model")
SWEEP_COLUMNS = ("strategy", "direction", "seed", "steps", "schedule", "kappa", "miou", "macc",
                 "fd_gaussian")


def _row(strategy, direction, seed, rep, digest):
    ad, na, ub = rep["adapted"], rep["no_adaptation"], rep["upper_bound"]
    return {
        "strategy": strategy, "direction": direction, "seed": seed,
        "miou": ad.miou, "macc": ad.macc, "accuracy": ad.accuracy,
        "fd_gaussian": ad.fd_gaussian, "paired_rmse": ad.paired_rmse,
        "no_adapt_miou": na.miou, "no_adapt_fd": na.fd_gaussian,
        "upper_miou": ub.miou, "n_eval": ad.n_eval, "model": digest,
    }


def run_coupling_ablation(cfg, prepared=None, strategies=STRATEGIES, directions=None,
                          sweep=None, sweep_strategies=None, on_trained=None):
    """Train one flow per coupling and score each in every direction.

    Every strategy shares the data, codec, predictors, training config
    and seed. The same trained model serves both directions. ``sweep``
    (a list of step counts) adds paired linear/sigmoid rows in the
    forward direction for ``sweep_strategies`` (default: all).
    """
    directions = tuple(directions or cfg.eval.directions)
    prepared = prepared or prepare(cfg, directions)
    seed = cfg.train.seed
    res = AblationResult(rows=[])
    for strategy in strategies:
        log.info("training %s for %d steps", strategy, cfg.train.total_steps)
        state = train_flow(cfg, prepared, strategy)
        res.trained += 1
        res.states[strategy] = state
        if on_trained is not None:
            on_trained(strategy, state)
        digest = model_digest(state)
        grid = sigmoid_schedule(cfg.sampler.steps, cfg.sampler.kappa)
        for direction in directions:
            codec = direction_codec(prepared.codec, prepared.train, direction, cfg.codec.refit_decoder)
            rep = ev.evaluate_configuration(state, codec, prepared.test, prepared.downstream[direction],
                                            grid, direction, name=strategy,
                                            raw_features=cfg.eval.raw_features)
            res.reports[(strategy, direction)] = rep
            res.rows.append(_row(strategy, direction, seed, rep, digest))
        if sweep_strategies is not None and strategy not in sweep_strategies:
            continue
        for n in sweep or ():
            codec = direction_codec(prepared.codec, prepared.train, FORWARD, cfg.codec.refit_decoder)
            for name, g in (("linear", linear_schedule(n)), ("sigmoid", sigmoid_schedule(n, cfg.sampler.kappa))):
                out = translate(state, codec, prepared.test.x0, FORWARD, g)
                rep = ev.evaluate_configuration(state, codec, prepared.test, prepared.downstream[FORWARD],
                                                g, FORWARD, name=strategy, translated=out,
                                                raw_features=cfg.eval.raw_features)
                ad = rep["adapted"]
                res.sweep.append({"strategy": strategy, "direction": FORWARD, "seed": seed, "steps": n,
                                  "schedule": name, "kappa": g.kappa, "miou": ad.miou,
                                  "macc": ad.macc, "fd_gaussian": ad.fd_gaussian})
    return res


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_table(rows, columns=None):
    """Aligned plain-text table; numeric columns right-aligned."""
    if not rows:
        return ""
    if columns is None:
        columns = ROW_COLUMNS if "upper_miou" in rows[0] else SWEEP_COLUMNS
    cells = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    numeric = [all(isinstance(r.get(c), (int, float)) for r in rows) for c in columns]

    def line(vals):
        return "  ".join(v.rjust(w) if num else v.ljust(w)
                         for v, w, num in zip(vals, widths, numeric)).rstrip()

    out = [line(list(columns)), line(["-" * w for w in widths])]
    out += [line(row) for row in cells]
    return "\n".join(out)
