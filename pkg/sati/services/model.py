"""End-to-end model: extraction, disentanglement, gated fusion and the composite objective."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from sati.numcore import ops
from sati.numcore.checkpoint import load_checkpoint, save_checkpoint
from sati.numcore.params import ParamRegistry
from sati.numcore.tensor import Tensor, no_grad
from sati.schemas import MODALITIES, ModalityInts, TotalLossBreakdown, TrainConfig
from sati.services import adversary, disentangle, encoders, fusion, temporal
from sati.services.data import Batch

N_CLASSES = 7
CLASS_VALUES = np.arange(-3.0, 4.0)


def class_targets(labels: np.ndarray) -> np.ndarray:
    """Seven sentiment classes ``round(clip(label, -3, 3)) + 3``."""

    return (np.round(np.clip(labels, -3.0, 3.0)) + 3).astype(np.int64)


@dataclass(slots=True)
class ForwardOutput:
    prediction: Tensor
    frames_v: Tensor
    h: dict[str, Tensor]
    invariant: dict[str, Tensor]
    specific: dict[str, Tensor]
    f_ta: Tensor
    f_tv: Tensor
    gate_a: Optional[Tensor]
    gate_v: Optional[Tensor]
    f_final: Tensor


class SatiModel:
    """Parameters plus the forward pass; the registry is the only mutable state."""

    def __init__(self, config: TrainConfig, dims: Optional[ModalityInts] = None) -> None:
        if dims is not None:
            encoder = config.encoder.model_copy(update={"input_dims": dims})
            config = config.model_copy(update={"encoder": encoder})
        self.config = config
        self.registry = ParamRegistry(seed=config.seed)
        d_model = config.encoder.d_model
        encoders.init_encoders(self.registry, config.encoder)
        adversary.init_discriminator(self.registry, d_model, config.adversary)
        fusion.init_fusion(self.registry, d_model, config.fusion)
        n_out = 1 if config.task == "regression" else N_CLASSES
        fusion.init_head(self.registry, 2 * d_model, config.head_hidden, n_out)

    # --- persistence -----------------------------------------------------------------

    def save(self, path: Path | str, **extra: Any) -> Path:
        metadata = {"config": self.config.model_dump(mode="json"), **extra}
        return save_checkpoint(path, self.registry, metadata)

    @classmethod
    def from_checkpoint(cls, path: Path | str) -> tuple["SatiModel", dict[str, Any]]:
        arrays, metadata = load_checkpoint(path)
        model = cls(TrainConfig.model_validate(metadata["config"]))
        model.registry.restore(arrays)
        return model, metadata

    # --- forward ---------------------------------------------------------------------------

    def forward(self, batch: Batch, *, rng: Optional[np.random.Generator] = None) -> ForwardOutput:
        cfg = self.config
        reg = self.registry
        x = {m: Tensor(batch.features[m]) for m in MODALITIES}
        masks = batch.masks

        h = {"t": encoders.text_encode(x["t"], reg.scope("extract.t"))}
        for m in encoders.SEQUENCE_MODALITIES:
            h[m] = encoders.transformer_encode(
                x[m], masks[m], reg.scope(f"extract.{m}"), cfg.encoder, dropout=cfg.dropout, rng=rng
            )
        invariant = {m: encoders.shared_encode(h[m], reg) for m in MODALITIES}
        specific = {m: encoders.private_encode(h[m], m, reg) for m in MODALITIES}

        positioned = {m: encoders.add_positions(specific[m]) for m in MODALITIES}
        f_ta = fusion.cross_attention(positioned["t"], positioned["a"], masks["a"])
        f_tv = fusion.cross_attention(positioned["t"], positioned["v"], masks["v"])

        gate_a = gate_v = None
        if cfg.fusion.gating:
            source = specific if cfg.fusion.fbp_on_specific else invariant
            gate_a, gate_v = (
                fusion.fbp_gate(source["t"], source[m], reg.scope(f"fusion.{m}"), cfg.fusion, masks["t"], masks[m])
                for m in fusion.GATED_STREAMS
            )
        f_final = fusion.fuse(gate_a, gate_v, f_ta, f_tv)
        f_final = ops.dropout(f_final, cfg.dropout, rng)
        prediction = fusion.predict(f_final, masks["t"], reg.scope("head"), cfg.task)
        return ForwardOutput(
            prediction=prediction,
            frames_v=encoders.frame_embed(x["v"], reg.scope("extract.v")),
            h=h,
            invariant=invariant,
            specific=specific,
            f_ta=f_ta,
            f_tv=f_tv,
            gate_a=gate_a,
            gate_v=gate_v,
            f_final=f_final,
        )

    # --- objective -----------------------------------------------------------------------------

    def task_loss(self, out: ForwardOutput, batch: Batch) -> Tensor:
        if self.config.task == "regression":
            return ops.mse_loss(out.prediction, batch.labels)
        return ops.cross_entropy(out.prediction, class_targets(batch.labels))

    def _consistency(self, out: ForwardOutput, batch: Batch) -> Tensor:
        pooled = {m: disentangle.pool_valid(out.invariant[m], batch.masks[m]) for m in MODALITIES}
        return disentangle.consistency_loss(pooled["a"], pooled["v"], pooled["t"], self.config.cmd)

    def temporal_target(self, out: ForwardOutput) -> Tensor:
        """Video representation whose adjacent frames the temporal term ties together.

        ``frames`` is the per-frame embedding before self-attention mixes the steps;
        ``H_v`` and ``S_v`` are taken after it.
        """

        target = self.config.temporal.target
        if target == "frames":
            return out.frames_v
        return out.h["v"] if target == "H_v" else out.specific["v"]

    def _temporal(self, out: ForwardOutput, batch: Batch) -> Tensor:
        return temporal.temporal_invariance_loss(self.temporal_target(out), batch.masks["v"], self.config.temporal).value

    def _domain(self, out: ForwardOutput, batch: Batch) -> Tensor:
        return adversary.domain_loss(out.invariant, out.specific, batch.masks, self.registry, self.config.adversary)

    def loss(self, out: ForwardOutput, batch: Batch) -> tuple[Tensor, TotalLossBreakdown]:
        """Composite objective; a term with zero weight is evaluated for reporting only."""

        cfg = self.config
        terms = []
        for weight, fn in ((cfg.alpha_w, self._consistency), (cfg.beta, self._temporal), (cfg.gamma, self._domain)):
            if weight == 0.0:
                with no_grad():
                    terms.append(ops.stop_gradient(fn(out, batch)))
            else:
                terms.append(fn(out, batch))
        return fusion.total_loss(self.task_loss(out, batch), *terms, cfg.alpha_w, cfg.beta, cfg.gamma)

    # --- inference --------------------------------------------------------------------------------

    def scores(self, batch: Batch) -> np.ndarray:
        with no_grad():
            prediction = self.forward(batch).prediction.data
        return self.to_scores(prediction)

    def to_scores(self, prediction: np.ndarray) -> np.ndarray:
        """Sentiment scores; classification heads report the expected class value."""

        if self.config.task == "regression":
            return prediction.copy()
        shifted = np.exp(prediction - prediction.max(axis=-1, keepdims=True))
        probs = shifted / shifted.sum(axis=-1, keepdims=True)
        return probs @ CLASS_VALUES
