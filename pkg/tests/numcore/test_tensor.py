import numpy as np
import pytest

from sati.errors import ContractError
from sati.numcore import ops
from sati.numcore.tensor import Tape, Tensor, backward, no_grad, primitive, unbroadcast


def test_backward_of_sum_is_all_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    grads = backward(tape, loss)

    np.testing.assert_array_equal(grads[x], np.ones((2, 3)))
    np.testing.assert_array_equal(grads[loss], np.ones(()))


def test_backward_of_dot_with_itself_is_twice_input():
    x = Tensor([1.5, -2.0, 0.25], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    grads = backward(tape, loss)

    np.testing.assert_allclose(grads[x], 2 * x.data)


def test_value_used_twice_accumulates():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = ops.add(x, x)
    grads = backward(tape, loss)

    assert grads[x] == pytest.approx(2.0)


def test_non_scalar_loss_is_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)

    with pytest.raises(ContractError):
        backward(tape, y)


def test_loss_from_another_tape_is_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        loss = ops.sum(x)
    with Tape() as other:
        ops.sum(x)

    with pytest.raises(ContractError):
        backward(other, loss)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            ops.exp(x)
        recorded = ops.exp(x)

    assert len(tape) == 1
    assert tape.produced(recorded)


def test_constants_are_not_recorded():
    with Tape() as tape:
        ops.add(Tensor([1.0]), Tensor([2.0]))

    assert len(tape) == 0


def test_tape_cannot_be_entered_twice():
    tape = Tape()
    with tape:
        with pytest.raises(ContractError):
            tape.__enter__()


def test_primitive_extension_point():
    x = Tensor([1.0, -1.0], requires_grad=True)
    with Tape() as tape:
        y = primitive(x.data * 3.0, (x,), lambda g: (g * 3.0,))
        loss = ops.sum(y)
    grads = backward(tape, loss)

    np.testing.assert_array_equal(grads[x], [3.0, 3.0])


def test_unbroadcast_reduces_to_operand_shape():
    grad = np.ones((2, 3, 4))

    assert unbroadcast(grad, (4,)).tolist() == [6.0] * 4
    assert unbroadcast(grad, (3, 1)).shape == (3, 1)
    assert unbroadcast(grad, (3, 1))[0, 0] == 8.0


def test_unreached_tensor_has_no_gradient():
    x = Tensor([1.0], requires_grad=True)
    unused = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    grads = backward(tape, loss)

    assert unused not in grads
    np.testing.assert_array_equal(grads.get_or_zeros(unused), [0.0])


def test_item_requires_single_element():
    assert Tensor([[4.0]]).item() == 4.0
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()


def test_constructor_copies_data():
    source = np.zeros(3)
    tensor = Tensor(source)
    source[0] = 1.0

    assert tensor.data[0] == 0.0
    assert tensor.data.dtype == np.float64
