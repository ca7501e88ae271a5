"""Training loop, loss masking, noise injection, and the evaluation protocol.

Training is closed-loop: each epoch rolls the model out over the training
window from the data's initial condition with a differentiable fixed-step
integrator, compares against the (optionally noisy) data under the configured
mask, backpropagates through the entire rollout, and takes one ADAM step.
There is no teacher forcing at any step.

Evaluation reports mean squared error over three windows: the training window,
the extrapolated remainder of the same rollout, and a full rollout under the
unseen test boundary condition.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tape as T
from .dataio import Dataset, parse_bc
from .errors import ConfigError, DivergenceError, ShapeError, TrainingError
from .fvm import Dirichlet, FieldPair
from .model import FinnConfig, init_params, lift_params, rollout, rollout_recorded
from .nn import AdamState, ParamStore, adam_step
from .tape import Tape, value_of

log = logging.getLogger("finn.train")


# -- loss masks ----------------------------------------------------------------

@dataclass(frozen=True)
class FullField:
    """Average squared error over both fields, all times, all volumes."""


@dataclass(frozen=True)
class BreakthroughOnly:
    """Dissolved concentration at one volume (default: the outlet), all times."""

    volume: int = -1


@dataclass(frozen=True)
class FinalProfileOnly:
    """Total concentration over all volumes at one time (default: the last)."""

    t_index: int = -1


LossMask = FullField | BreakthroughOnly | FinalProfileOnly


def mask_from_name(name: str) -> LossMask:
    if name == "full":
        return FullField()
    if name == "breakthrough":
        return BreakthroughOnly()
    if name == "profile":
        return FinalProfileOnly()
    raise ConfigError(f"unknown mask {name!r}; expected full, breakthrough, or profile")


@dataclass
class FieldSeries:
    """Prediction/target pair of (T, n) field matrices; entries may be tape Vars."""

    c: object
    ct: object


def _sq_mean(diff):
    return (diff * diff).sum() * (1.0 / value_of(diff).size)


def mse_loss(pred: FieldSeries, target: FieldSeries, mask: LossMask):
    """Masked mean squared error; tape-recorded when predictions are Vars."""
    pc, pct = pred.c, pred.ct
    tc = np.asarray(target.c, dtype=np.float64)
    tct = np.asarray(target.ct, dtype=np.float64)
    if value_of(pc).shape != tc.shape or value_of(pct).shape != tct.shape:
        raise ShapeError(f"prediction {value_of(pc).shape} vs target {tc.shape}")
    if isinstance(mask, FullField):
        dc, dct = pc - tc, pct - tct
        total = (dc * dc).sum() + (dct * dct).sum()
        return total * (1.0 / (tc.size + tct.size))
    if isinstance(mask, BreakthroughOnly):
        return _sq_mean(pc[:, mask.volume] - tc[:, mask.volume])
    if isinstance(mask, FinalProfileOnly):
        return _sq_mean(pct[mask.t_index] - tct[mask.t_index])
    raise ConfigError(f"unknown mask {mask!r}")


# -- noise ---------------------------------------------------------------------

def add_noise(data: Dataset, sigma: float, seed: int) -> Dataset:
    """I.i.d. zero-mean Gaussian noise on every field entry; input untouched."""
    if sigma < 0:
        raise ConfigError(f"noise sigma must be non-negative, got {sigma}")
    rng = np.random.default_rng(seed)
    meta = dict(data.meta)
    meta["noise.sigma"] = f"{sigma:.17g}"
    meta["noise.seed"] = str(seed)
    return Dataset(t_grid=data.t_grid.copy(),
                   c=data.c + rng.normal(0.0, sigma, size=data.c.shape),
                   ct=data.ct + rng.normal(0.0, sigma, size=data.ct.shape),
                   meta=meta)


# -- training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    seed: int = 0
    noise_sigma: float = 1e-5
    train_window: tuple[int, int] = (0, 500)  # inclusive row range
    method: str = "rk4"
    clip_norm: float | None = None  # optional global-norm gradient clip
    mask: LossMask = field(default_factory=FullField)


@dataclass
class TrainResult:
    params: ParamStore          # after the final update
    best_params: ParamStore     # lowest recorded epoch loss
    history: list[float]
    best_loss: float


def _states_to_series(states: list, n: int) -> FieldSeries:
    c = T.stack([s[:n] for s in states])
    ct = T.stack([s[n:] for s in states])
    return FieldSeries(c=c, ct=ct)


def _guard_bound(config: FinnConfig, c_target: np.ndarray, ct_target: np.ndarray) -> float:
    base = config.bc_left.value if isinstance(config.bc_left, Dirichlet) else 0.0
    base = max(base, float(np.max(np.abs(c_target))), float(np.max(np.abs(ct_target))))
    return 10.0 * max(base, 1e-12)


def train_finn(config: FinnConfig, tc: TrainConfig, data: Dataset) -> TrainResult:
    """Closed-loop training on one dataset; deterministic for a given seed."""
    w0, w1 = tc.train_window
    if not (0 <= w0 < w1 < data.t_grid.size):
        raise ConfigError(f"train window {tc.train_window} outside dataset "
                          f"extent 0..{data.t_grid.size - 1}")
    ss = np.random.SeedSequence(tc.seed)
    _, noise_seed = ss.spawn(2)
    noisy = add_noise(data, tc.noise_sigma,
                      noise_seed.generate_state(1)[0]) if tc.noise_sigma > 0 else data

    t_win = noisy.t_grid[w0:w1 + 1]
    target = FieldSeries(c=noisy.c[w0:w1 + 1], ct=noisy.ct[w0:w1 + 1])
    initial = FieldPair(noisy.c[w0].copy(), noisy.ct[w0].copy())
    n = config.grid.n_volumes
    max_abs = _guard_bound(config, target.c, target.ct)

    params = init_params(config, tc.seed)
    if tc.epochs == 0:
        return TrainResult(params, params.copy(), [], float("inf"))

    flat = params.flatten()
    adam = AdamState.init(flat.size, lr=tc.lr)
    history: list[float] = []
    best_loss, best_flat = float("inf"), flat.copy()
    lr_halved = False

    epoch = 0
    while epoch < tc.epochs:
        t0 = time.perf_counter()
        current = params.with_flat(flat)
        tape = Tape()
        leaves = lift_params(tape, current)
        failure = None
        try:
            states = rollout_recorded(tape, leaves, config, initial, t_win,
                                      method=tc.method, max_abs=max_abs)
            loss = mse_loss(_states_to_series(states, n), target, tc.mask)
            loss_value = float(value_of(loss))
            if not np.isfinite(loss_value):
                failure = f"non-finite loss at epoch {epoch}"
        except DivergenceError as exc:
            failure = f"divergent rollout at epoch {epoch}: {exc}"

        if failure is not None:
            if lr_halved:
                raise TrainingError(failure, epoch=epoch)
            # one-shot guard: halve the step size and retry this epoch
            adam = replace(adam, lr=adam.lr / 2.0)
            lr_halved = True
            log.warning("%s; halving learning rate to %g and retrying", failure, adam.lr)
            continue

        grads = tape.gradient(loss, [leaves[name] for name in current.names()])
        flat_grad = np.concatenate([g.ravel() for g in grads])
        if tc.clip_norm is not None:
            norm = float(np.linalg.norm(flat_grad))
            if norm > tc.clip_norm:
                flat_grad = flat_grad * (tc.clip_norm / norm)
        flat, adam = adam_step(flat, flat_grad, adam)

        history.append(loss_value)
        if loss_value < best_loss:
            # the recorded loss belongs to the pre-update parameters
            best_loss, best_flat = loss_value, current.flatten()
        log.info("epoch=%d loss=%.6e wall=%.3fs", epoch, loss_value,
                 time.perf_counter() - t0)
        epoch += 1

    return TrainResult(params=params.with_flat(flat),
                       best_params=params.with_flat(best_flat),
                       history=history, best_loss=best_loss)


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    """Mean squared errors over the three evaluation windows."""

    training: float
    extrapolated: float
    unseen: float

    def as_dict(self) -> dict[str, float]:
        return {"training": self.training, "extrapolated": self.extrapolated,
                "unseen": self.unseen}


def _window_mse(pred: Dataset, target: Dataset, lo: int, hi: int) -> float:
    series_p = FieldSeries(c=pred.c[lo:hi + 1], ct=pred.ct[lo:hi + 1])
    series_t = FieldSeries(c=target.c[lo:hi + 1], ct=target.ct[lo:hi + 1])
    return float(mse_loss(series_p, series_t, FullField()))


def evaluate(params: ParamStore, config: FinnConfig, train_data: Dataset,
             test_data: Dataset, split: int = 500,
             rtol: float = 1e-6, atol: float = 1e-8) -> EvalReport:
    """Three-window closed-loop evaluation.

    One rollout over the training data's full time grid scores the training
    window (rows 0..split) and the extrapolation window (rows split..end);
    a second rollout under the test dataset's boundary condition scores the
    whole unseen set.
    """
    if train_data.n_volumes != config.grid.n_volumes:
        raise ShapeError("train data does not match the model grid")
    split = min(split, train_data.t_grid.size - 1)

    pred = rollout(params, config, train_data.initial(), train_data.t_grid,
                   rtol=rtol, atol=atol)
    training = _window_mse(pred, train_data, 0, split)
    extrapolated = _window_mse(pred, train_data, split, train_data.t_grid.size - 1)

    test_config = replace(config,
                          bc_left=parse_bc(test_data.meta, "bc.left"),
                          bc_right=parse_bc(test_data.meta, "bc.right"))
    pred_test = rollout(params, test_config, test_data.initial(),
                        test_data.t_grid, rtol=rtol, atol=atol)
    unseen = _window_mse(pred_test, test_data, 0, test_data.t_grid.size - 1)
    return EvalReport(training=training, extrapolated=extrapolated, unseen=unseen)


# -- multi-seed experiment -------------------------------------------------------

@dataclass
class SeedOutcome:
    seed: int
    report: EvalReport | None
    error: str | None = None
    history: list[float] = field(default_factory=list)


@dataclass
class ExperimentReport:
    outcomes: list[SeedOutcome]
    mean: dict[str, float]
    std: dict[str, float]

    def survivors(self) -> list[SeedOutcome]:
        return [o for o in self.outcomes if o.report is not None]


def run_experiment(config: FinnConfig, tc: TrainConfig, train_data: Dataset,
                   test_data: Dataset, n_seeds: int,
                   out_dir: str | Path | None = None,
                   split: int = 500) -> ExperimentReport:
    """Independent training runs with seeds ``tc.seed .. tc.seed + n_seeds - 1``.

    Per-seed checkpoints land under ``out_dir/seed_<s>/`` when a directory is
    given. Individual failures are recorded and aggregation proceeds over the
    survivors with a warning.
    """
    from .dataio import save_checkpoint, write_config
    from .model import model_config_entries

    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be >= 1, got {n_seeds}")
    outcomes: list[SeedOutcome] = []
    for i in range(n_seeds):
        seed = tc.seed + i
        run_tc = replace(tc, seed=seed)
        log.info("seed %d: training for %d epochs", seed, run_tc.epochs)
        try:
            result = train_finn(config, run_tc, train_data)
            report = evaluate(result.best_params, config, train_data, test_data,
                              split=split)
            outcomes.append(SeedOutcome(seed, report, history=result.history))
            if out_dir is not None:
                run_dir = Path(out_dir) / f"seed_{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(run_dir / "checkpoint.bin", result.best_params)
                write_config(run_dir / "model.cfg", model_config_entries(config))
        except (TrainingError, DivergenceError) as exc:
            log.warning("seed %d failed: %s", seed, exc)
            outcomes.append(SeedOutcome(seed, None, error=str(exc)))

    survivors = [o for o in outcomes if o.report is not None]
    if not survivors:
        raise TrainingError("every seed failed; nothing to aggregate")
    if len(survivors) < len(outcomes):
        log.warning("aggregating %d/%d seeds (others failed)",
                    len(survivors), len(outcomes))

    mean, std = {}, {}
    for key in ("training", "extrapolated", "unseen"):
        vals = np.array([getattr(o.report, key) for o in survivors])
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    report = ExperimentReport(outcomes=outcomes, mean=mean, std=std)

    if out_dir is not None:
        _write_summary(Path(out_dir) / "summary.csv", report)
    return report


def _write_summary(path: Path, report: ExperimentReport) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["seed,training,extrapolated,unseen,error"]
    for o in report.outcomes:
        if o.report is None:
            lines.append(f"{o.seed},,,,{o.error}")
        else:
            r = o.report
            lines.append(f"{o.seed},{r.training:.17g},{r.extrapolated:.17g},"
                         f"{r.unseen:.17g},")
    lines.append(f"mean,{report.mean['training']:.17g},"
                 f"{report.mean['extrapolated']:.17g},{report.mean['unseen']:.17g},")
    lines.append(f"std,{report.std['training']:.17g},"
                 f"{report.std['extrapolated']:.17g},{report.std['unseen']:.17g},")
    path.write_text("\n".join(lines) + "\n")
