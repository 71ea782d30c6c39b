import math

import numpy as np
import pytest

from sati.errors import ContractError
from sati.numcore import ops
from sati.numcore.optim import Adam
from sati.numcore.params import ParamRegistry
from sati.numcore.tensor import Tape, Tensor, backward
from sati.schemas import MODALITIES, AdversaryConfig
from sati.services import adversary


def _registry(cfg: AdversaryConfig, d_model: int = 6) -> ParamRegistry:
    registry = ParamRegistry(seed=0)
    adversary.init_discriminator(registry, d_model, cfg)
    return registry


def _representations(seed: int, d_model: int = 6) -> tuple[dict, dict, dict]:
    rng = np.random.default_rng(seed)
    invariant = {m: Tensor(rng.normal(size=(3, 4, d_model)), requires_grad=True) for m in MODALITIES}
    specific = {m: Tensor(rng.normal(size=(3, 4, d_model)), requires_grad=True) for m in MODALITIES}
    masks = {m: np.ones((3, 4), dtype=bool) for m in MODALITIES}
    return invariant, specific, masks


def test_grl_is_identity_forward_and_negates_backward():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        y = adversary.grl(x, 0.5)
        loss = ops.sum(ops.mul(y, np.array([3.0, 4.0])))
    grads = backward(tape, loss)

    np.testing.assert_array_equal(y.data, x.data)
    np.testing.assert_allclose(grads[x], [-1.5, -2.0])


def test_grl_rejects_negative_strength():
    with pytest.raises(ContractError):
        adversary.grl(Tensor([1.0]), -0.1)


def test_aam_without_margin_is_scaled_cosine_softmax():
    h_hat = Tensor([[1.0, 0.0]])
    w_d = Tensor([[1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    expected = -(2.0 - math.log(math.exp(2.0) + math.exp(0.0) + math.exp(-2.0)))

    assert adversary.aam_loss(h_hat, np.array([0]), w_d, 2.0, 0.0).item() == pytest.approx(expected)


def test_margin_makes_the_target_harder():
    rng = np.random.default_rng(1)
    h_hat = ops.l2_normalize(Tensor(rng.normal(size=(5, 4))), axis=-1)
    w_d = Tensor(rng.normal(size=(4, 3)))
    labels = np.array([0, 1, 2, 0, 1])

    plain = adversary.aam_loss(h_hat, labels, w_d, 8.0, 0.0).item()
    margin = adversary.aam_loss(h_hat, labels, w_d, 8.0, 0.35).item()

    assert margin > plain


def test_aam_rejects_bad_labels():
    h_hat = Tensor(np.eye(2, 3)[:, :2])
    w_d = Tensor(np.ones((2, 3)))

    with pytest.raises(ContractError):
        adversary.aam_loss(h_hat, np.array([0, 3]), w_d, 2.0, 0.1)
    with pytest.raises(ContractError):
        adversary.aam_loss(h_hat, np.array([0.0, 1.0]), w_d, 2.0, 0.1)


def test_discriminator_embeddings_are_unit_rows():
    cfg = AdversaryConfig(d_h=5)
    registry = _registry(cfg)
    h = Tensor(np.random.default_rng(2).normal(size=(4, 3, 6)))

    embedded = adversary.discriminator_embed(h, registry).data

    assert embedded.shape == (4, 5)
    np.testing.assert_allclose(np.linalg.norm(embedded, axis=-1), 1.0)


def test_domain_loss_is_finite_and_positive():
    cfg = AdversaryConfig(d_h=5)
    invariant, specific, masks = _representations(0)

    value = adversary.domain_loss(invariant, specific, masks, _registry(cfg), cfg).item()

    assert np.isfinite(value) and value > 0.0


def _invariant_gradient(cfg: AdversaryConfig) -> tuple[np.ndarray, np.ndarray]:
    invariant, specific, masks = _representations(3)
    registry = _registry(cfg)
    with Tape() as tape:
        loss = adversary.domain_loss(invariant, specific, masks, registry, cfg)
    grads = backward(tape, loss)
    return grads.get_or_zeros(invariant["a"]), grads.get_or_zeros(specific["a"])


def test_reversal_flips_only_the_invariant_gradient():
    reversed_inv, reversed_specific = _invariant_gradient(AdversaryConfig(d_h=5, lam=1.0))
    plain_inv, plain_specific = _invariant_gradient(AdversaryConfig(d_h=5, grl_enabled=False))

    np.testing.assert_allclose(reversed_inv, -plain_inv, atol=1e-12)
    np.testing.assert_allclose(reversed_specific, plain_specific, atol=1e-12)
    assert np.abs(plain_inv).max() > 0.0


def test_zero_strength_stops_invariant_gradient():
    inv, specific = _invariant_gradient(AdversaryConfig(d_h=5, lam=0.0))

    assert not inv.any()
    assert specific.any()


def test_specific_stream_can_be_reversed():
    _, reversed_specific = _invariant_gradient(AdversaryConfig(d_h=5, lam=1.0, grl_on_specific=True))
    _, plain_specific = _invariant_gradient(AdversaryConfig(d_h=5))

    np.testing.assert_allclose(reversed_specific, -plain_specific, atol=1e-12)


def test_predict_modality_takes_largest_cosine():
    h_hat = Tensor([[0.0, 1.0], [1.0, 0.0]])
    w_d = Tensor([[1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])

    assert adversary.predict_modality(h_hat, w_d).tolist() == [1, 0]


def test_aam_on_two_classes_hand_value():
    h_hat = Tensor([[1.0, 0.0]])
    w_d = Tensor(np.eye(2))

    value = adversary.aam_loss(h_hat, np.array([0]), w_d, 1.0, 0.0).item()

    assert value == pytest.approx(-math.log(math.e / (math.e + 1.0)), abs=1e-10)


def test_aam_without_margin_equals_cross_entropy_on_cosines():
    rng = np.random.default_rng(4)
    h_hat = rng.normal(size=(6, 4))
    h_hat /= np.linalg.norm(h_hat, axis=-1, keepdims=True)
    w_d = rng.normal(size=(4, 3))
    labels = np.array([0, 1, 2, 2, 1, 0])
    logits = 5.0 * h_hat @ (w_d / np.linalg.norm(w_d, axis=0, keepdims=True))
    log_probs = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    expected = -log_probs[np.arange(6), labels].mean()

    value = adversary.aam_loss(Tensor(h_hat), labels, Tensor(w_d), 5.0, 0.0).item()

    assert value == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_aam_is_non_negative(seed):
    rng = np.random.default_rng(seed)
    h_hat = ops.l2_normalize(Tensor(rng.normal(size=(4, 3))), axis=-1)

    value = adversary.aam_loss(h_hat, rng.integers(0, 3, size=4), Tensor(rng.normal(size=(3, 3))), 30.0, 0.35).item()

    assert value >= 0.0


def test_discriminator_embedding_matches_pool_project_normalise():
    cfg = AdversaryConfig(d_h=5)
    registry = _registry(cfg)
    registry["discriminator.proj.b"].data = np.random.default_rng(5).normal(size=5)
    h = np.random.default_rng(6).normal(size=(2, 4, 6))
    mask = np.array([[True, True, True, False], [True, False, False, False]])

    pooled = np.stack([h[row][mask[row]].mean(axis=0) for row in range(2)])
    affine = pooled @ registry["discriminator.proj.W"].data + registry["discriminator.proj.b"].data
    expected = affine / np.linalg.norm(affine, axis=-1, keepdims=True)

    np.testing.assert_allclose(adversary.discriminator_embed(Tensor(h), registry, mask).data, expected, atol=1e-12)


def test_discriminator_learns_separated_modalities():
    cfg = AdversaryConfig(d_h=5, alpha=8.0, grl_enabled=False)
    registry = _registry(cfg)
    rng = np.random.default_rng(7)
    centres = {m: 3.0 * np.eye(6)[index] for index, m in enumerate(MODALITIES)}
    invariant = {m: Tensor(centres[m] + rng.normal(scale=0.3, size=(16, 3, 6))) for m in MODALITIES}
    specific = {m: Tensor(centres[m] + rng.normal(scale=0.3, size=(16, 3, 6))) for m in MODALITIES}
    masks = {m: np.ones((16, 3), dtype=bool) for m in MODALITIES}
    optimizer = Adam(registry, lr=0.05)

    for _ in range(300):
        with Tape() as tape:
            loss = adversary.domain_loss(invariant, specific, masks, registry, cfg)
        grads = backward(tape, loss)
        optimizer.step({name: grads[tensor] for name, tensor in registry.items() if tensor in grads})

    hits = []
    for index, m in enumerate(MODALITIES):
        for stream in (invariant, specific):
            h_hat = adversary.discriminator_embed(stream[m], registry, masks[m])
            hits.extend(adversary.predict_modality(h_hat, registry["discriminator.W_D"]) == index)

    assert np.mean(hits) >= 0.99
