"""Finite-difference gradient suites over the ops, the losses and the full model."""
from __future__ import annotations

import math
import time
from typing import Callable, Literal

import numpy as np

from sati.numcore import ops
from sati.numcore.gradcheck import grad_check
from sati.numcore.params import ParamRegistry
from sati.numcore.tensor import Tensor
from sati.schemas import (
    AdversaryConfig,
    CmdConfig,
    EncoderConfig,
    FusionConfig,
    GradCheckReport,
    GradCheckSuiteReport,
    ModalityInts,
    SynthConfig,
    TemporalConfig,
    TrainConfig,
)
from sati.services import adversary, disentangle, fusion, temporal
from sati.services.data import collate, generate, to_arrays
from sati.services.model import SatiModel
from sati.utils.logging_utils import get_logger, logging_context

logger = get_logger("sati.services.diagnostics")

Scope = Literal["ops", "losses", "full"]
Check = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]

# (tolerance, denominator floor, coordinates per parameter)
SUITE_SETTINGS: dict[str, tuple[float, float, int | None]] = {
    "ops": (1e-4, 1e-6, None),
    "losses": (1e-4, 1e-5, None),
    "full": (1e-3, 1e-4, 3),
}


def _param(rng: np.random.Generator, name: str, shape: tuple[int, ...], low: float = -2.0, high: float = 2.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, name=name)


def _unary(op: Callable[[Tensor], Tensor], shape=(3, 4), low: float = -2.0, high: float = 2.0) -> Check:
    def build(rng: np.random.Generator):
        x = _param(rng, "x", shape, low, high)
        weights = rng.uniform(-1.0, 1.0, size=op(Tensor(x.data)).shape)
        return (lambda: ops.sum(ops.mul(op(x), weights))), {"x": x}

    return build


def _binary(op: Callable[[Tensor, Tensor], Tensor], shape_a, shape_b, low_b: float = -2.0) -> Check:
    def build(rng: np.random.Generator):
        a = _param(rng, "a", shape_a)
        b = _param(rng, "b", shape_b, low_b, 2.0)
        weights = rng.uniform(-1.0, 1.0, size=op(Tensor(a.data), Tensor(b.data)).shape)
        return (lambda: ops.sum(ops.mul(op(a, b), weights))), {"a": a, "b": b}

    return build


def _layer_norm(rng: np.random.Generator):
    x, gamma, beta = _param(rng, "x", (3, 5)), _param(rng, "gamma", (5,)), _param(rng, "beta", (5,))
    weights = rng.uniform(-1.0, 1.0, size=(3, 5))
    return (lambda: ops.sum(ops.mul(ops.layer_norm(x, gamma, beta), weights))), {"x": x, "gamma": gamma, "beta": beta}


def _linear(rng: np.random.Generator):
    x, w, b = _param(rng, "x", (2, 3, 4)), _param(rng, "W", (4, 5)), _param(rng, "b", (5,))
    weights = rng.uniform(-1.0, 1.0, size=(2, 3, 5))
    return (lambda: ops.sum(ops.mul(ops.linear(x, w, b), weights))), {"x": x, "W": w, "b": b}


def _composite(rng: np.random.Generator):
    x, w = _param(rng, "x", (3, 4)), _param(rng, "W", (4, 5))
    return (lambda: ops.mean(ops.log(ops.softmax(ops.matmul(x, w), axis=-1)))), {"x": x, "W": w}


def _concat(rng: np.random.Generator):
    a, b = _param(rng, "a", (2, 3)), _param(rng, "b", (2, 2))
    weights = rng.uniform(-1.0, 1.0, size=(2, 5))
    return (lambda: ops.sum(ops.mul(ops.concat([a, b], axis=-1), weights))), {"a": a, "b": b}


def _reuse(rng: np.random.Generator):
    x = _param(rng, "x", (4,))
    return (lambda: ops.sum(ops.mul(ops.add(x, x), ops.tanh(x)))), {"x": x}


def _signed_denominator(rng: np.random.Generator):
    a = _param(rng, "a", (3, 4))
    magnitude = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
    b = Tensor(magnitude, requires_grad=True, name="b")
    weights = rng.uniform(-1.0, 1.0, size=(3, 4))
    return (lambda: ops.sum(ops.mul(ops.div(a, b), weights))), {"a": a, "b": b}


OP_CHECKS: dict[str, Check] = {
    "add": _binary(ops.add, (3, 4), (4,)),
    "sub": _binary(ops.sub, (3, 4), (3, 1)),
    "mul": _binary(ops.mul, (3, 4), (3, 4)),
    "div": _signed_denominator,
    "scale": _unary(lambda x: ops.scale(x, -1.7)),
    "add_scalar": _unary(lambda x: ops.add_scalar(x, 0.3)),
    "power": _unary(lambda x: ops.power(x, 1.5), low=0.5),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, low=0.1),
    "relu": _unary(ops.relu),
    "gelu": _unary(ops.gelu),
    "sigmoid": _unary(ops.sigmoid),
    "tanh": _unary(ops.tanh),
    "cos": _unary(ops.cos),
    "arccos": _unary(ops.arccos, low=-0.9, high=0.9),
    "matmul": _binary(ops.matmul, (2, 3, 4), (4, 2)),
    "softmax": _unary(lambda x: ops.softmax(x, axis=-1)),
    "log_softmax": _unary(lambda x: ops.log_softmax(x, axis=0)),
    "mean": _unary(lambda x: ops.mean(x, axis=0)),
    "variance": _unary(lambda x: ops.variance(x, axis=-1)),
    "l2_norm": _unary(lambda x: ops.l2_norm(x, axis=-1)),
    "l2_normalize": _unary(lambda x: ops.l2_normalize(x, axis=-1)),
    "concat": _concat,
    "slice": _unary(lambda x: ops.slice_(x, 1, 3, axis=1)),
    "transpose": _unary(lambda x: ops.transpose(x, (1, 0))),
    "reshape": _unary(lambda x: ops.reshape(x, (2, 6))),
    "linear": _linear,
    "layer_norm": _layer_norm,
    "sum_pool": _unary(lambda x: ops.sum_pool(x, 2, axis=-1)),
    "masked_fill": _unary(lambda x: ops.masked_fill(x, np.eye(3, 4, dtype=bool), -5.0)),
    "reused_value": _reuse,
    "composite": _composite,
}


# --- losses and fusion operations -------------------------------------------------------------

def _cmd(rng: np.random.Generator):
    x, y = _param(rng, "X", (4, 3)), _param(rng, "Y", (5, 3))
    return (lambda: disentangle.cmd(x, y, CmdConfig())), {"X": x, "Y": y}


def _consistency(rng: np.random.Generator):
    reps = {m: _param(rng, f"I_{m}", (4, 3)) for m in ("a", "v", "t")}
    return (lambda: disentangle.consistency_loss(reps["a"], reps["v"], reps["t"], CmdConfig())), reps


def _discriminator(rng: np.random.Generator, d: int, cfg: AdversaryConfig) -> ParamRegistry:
    registry = ParamRegistry(seed=int(rng.integers(2**31)))
    adversary.init_discriminator(registry, d, cfg)
    registry["discriminator.proj.b"].data = rng.uniform(-0.5, 0.5, size=cfg.d_h)
    return registry


def _aam(rng: np.random.Generator):
    cfg = AdversaryConfig(alpha=4.0, d_h=5)
    h = _param(rng, "h", (4, 5))
    w_d = _param(rng, "W_D", (5, 3))
    labels = rng.integers(0, 3, size=4)
    return (lambda: adversary.aam_loss(ops.l2_normalize(h), labels, w_d, cfg.alpha, cfg.tau)), {"h": h, "W_D": w_d}


def _domain(rng: np.random.Generator):
    # reversal rewrites the backward pass, so the objective itself is checked without it
    cfg = AdversaryConfig(alpha=4.0, d_h=4, grl_enabled=False)
    registry = _discriminator(rng, 3, cfg)
    invariant = {m: _param(rng, f"I_{m}", (2, 3, 3)) for m in ("a", "t", "v")}
    specific = {m: _param(rng, f"S_{m}", (2, 3, 3)) for m in ("a", "t", "v")}
    masks = {m: np.array([[True, True, True], [True, True, False]]) for m in ("a", "t", "v")}
    params = {**invariant, **specific, **dict(registry.items())}
    return (lambda: adversary.domain_loss(invariant, specific, masks, registry, cfg)), params


def _temporal(mode: str) -> Check:
    def build(rng: np.random.Generator):
        r = _param(rng, "R", (2, 5, 8))
        mask = np.array([[True] * 5, [True, True, True, False, False]])
        cfg = TemporalConfig(mode=mode, n_groups=2, grid_size=8)
        return (lambda: temporal.temporal_invariance_loss(r, mask, cfg).value), {"R": r}

    return build


def _cross_attention(rng: np.random.Generator):
    s_t, s_i = _param(rng, "S_t", (2, 3, 4)), _param(rng, "S_i", (2, 2, 4))
    mask = np.array([[True, True], [True, False]])
    weights = rng.uniform(-1.0, 1.0, size=(2, 3, 4))
    return (lambda: ops.sum(ops.mul(fusion.cross_attention(s_t, s_i, mask), weights))), {"S_t": s_t, "S_i": s_i}


def _fbp_gate(rng: np.random.Generator):
    cfg = FusionConfig(d_fbp=3, k=2)
    registry = ParamRegistry(seed=int(rng.integers(2**31)))
    fusion.init_fusion(registry, 4, cfg)
    i_t, i_i = _param(rng, "I_t", (2, 3, 4)), _param(rng, "I_i", (2, 5, 4))
    mask_t = np.array([[True, True, True], [True, True, False]])
    mask_i = np.array([[True] * 5, [True, True, True, False, False]])
    weights = rng.uniform(-1.0, 1.0, size=(2, 3, 4))
    scope = registry.scope("fusion.a")

    def f() -> Tensor:
        return ops.sum(ops.mul(fusion.fbp_gate(i_t, i_i, scope, cfg, mask_t, mask_i), weights))

    params = {"I_t": i_t, "I_i": i_i, **{name: registry[name] for name in scope.names()}}
    return f, params


def _fuse_predict(rng: np.random.Generator):
    registry = ParamRegistry(seed=int(rng.integers(2**31)))
    fusion.init_head(registry, 8, 5, 1)
    gates = [_param(rng, name, (2, 3, 4), 0.05, 0.95) for name in ("gate_a", "gate_v")]
    streams = [_param(rng, name, (2, 3, 4)) for name in ("F_ta", "F_tv")]
    mask = np.array([[True, True, True], [True, False, False]])
    scope = registry.scope("head")
    labels = rng.uniform(-3.0, 3.0, size=2)

    def f() -> Tensor:
        f_final = fusion.fuse(gates[0], gates[1], streams[0], streams[1])
        return ops.mse_loss(fusion.predict(f_final, mask, scope), labels)

    params = {t.name: t for t in gates + streams}
    params.update({name: registry[name] for name in scope.names()})
    return f, params


def _cross_entropy(rng: np.random.Generator):
    logits = _param(rng, "logits", (4, 7))
    labels = rng.integers(0, 7, size=4)
    return (lambda: ops.cross_entropy(logits, labels)), {"logits": logits}


def _total(rng: np.random.Generator):
    parts = [_param(rng, name, ()) for name in ("L_task", "L_con", "L_ti", "L_dom")]
    return (lambda: fusion.total_loss(*parts, 0.3, 0.1, 0.1)[0]), {t.name: t for t in parts}


LOSS_CHECKS: dict[str, Check] = {
    "cmd": _cmd,
    "consistency_loss": _consistency,
    "aam_loss": _aam,
    "domain_loss": _domain,
    "temporal_softmax": _temporal("softmax"),
    "temporal_gaussian_proxy": _temporal("gaussian-proxy"),
    "cross_attention": _cross_attention,
    "fbp_gate": _fbp_gate,
    "fuse_predict": _fuse_predict,
    "cross_entropy": _cross_entropy,
    "total_loss": _total,
}


# --- full model ----------------------------------------------------------------------------------

def tiny_config(task: str = "regression", seed: int = 0) -> TrainConfig:
    return TrainConfig(
        seed=seed,
        task=task,
        head_hidden=8,
        encoder=EncoderConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16, max_len=ModalityInts(a=4, t=4, v=4)),
        adversary=AdversaryConfig(alpha=4.0, d_h=4, grl_enabled=False),
        fusion=FusionConfig(d_fbp=4, k=2),
    )


def tiny_batch(seed: int = 0):
    synth = SynthConfig(
        n_samples=2,
        dims=ModalityInts(a=3, t=4, v=3),
        lengths=ModalityInts(a=4, t=4, v=4),
        length_jitter=0,
        seed=seed,
    )
    items = to_arrays(generate(synth))
    return collate(items, ModalityInts(a=4, t=4, v=4))


def _full(task: str) -> Check:
    def build(rng: np.random.Generator):
        seed = int(rng.integers(2**31))
        batch = tiny_batch(seed)
        model = SatiModel(tiny_config(task, seed), ModalityInts(a=3, t=4, v=3))

        def f() -> Tensor:
            return model.loss(model.forward(batch), batch)[0]

        return f, dict(model.registry.items())

    return build


FULL_CHECKS: dict[str, Check] = {
    "full_regression": _full("regression"),
    "full_classification": _full("classification"),
}

SUITES: dict[str, dict[str, Check]] = {"ops": OP_CHECKS, "losses": LOSS_CHECKS, "full": FULL_CHECKS}


def _merge(name: str, reports: list[GradCheckReport]) -> GradCheckReport:
    """Worst error per parameter across seeds."""

    merged_error: dict[str, float] = {}
    merged_worst: dict[str, list[int]] = {}
    for report in reports:
        for key, error in report.max_rel_error.items():
            if math.isnan(error):
                error = math.inf
            if key not in merged_error or error > merged_error[key]:
                merged_error[key] = error
                merged_worst[key] = report.worst_coordinate[key]
    first = reports[0]
    return GradCheckReport(
        name=name,
        eps=first.eps,
        tolerance=first.tolerance,
        max_rel_error=merged_error,
        worst_coordinate=merged_worst,
    )


def run_check(
    name: str,
    check: Check,
    scope: Scope,
    seeds: int = 20,
    eps: float = 1e-5,
    start: int = 0,
) -> GradCheckReport:
    tolerance, floor, coordinates = SUITE_SETTINGS[scope]
    reports = []
    for seed in range(start, start + seeds):
        f, params = check(np.random.default_rng(np.random.SeedSequence([seed, 11])))
        reports.append(
            grad_check(
                f,
                params,
                eps=eps,
                tolerance=tolerance,
                floor=floor,
                max_coordinates=coordinates,
                seed=seed,
                name=f"{name}[seed={seed}]",
            )
        )
    return _merge(name, reports)


def gradcheck_suite(scope: Scope, seeds: int = 20, eps: float = 1e-5, start: int = 0) -> GradCheckSuiteReport:
    """Run every check of ``scope`` over ``seeds`` random draws starting at seed ``start``."""

    started = time.perf_counter()
    with logging_context(run="gradcheck", scope=scope):
        reports = [run_check(name, check, scope, seeds, eps, start) for name, check in SUITES[scope].items()]
        suite = GradCheckSuiteReport(scope=scope, reports=reports, wall_clock_s=time.perf_counter() - started)
        for report in suite.reports:
            if not report.passed:
                worst = max(report.max_rel_error, key=report.max_rel_error.get)
                logger.error(
                    "Gradient check failed",
                    extra={
                        "context": {
                            "check": report.name,
                            "parameter": worst,
                            "coordinate": report.worst_coordinate[worst],
                            "error": report.max_rel_error[worst],
                        }
                    },
                )
    return suite
