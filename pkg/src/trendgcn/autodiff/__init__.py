from .gradcheck import check_gradients, numerical_grad, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import (
    CounterRNG,
    Tensor,
    abs,
    add,
    as_tensor,
    clip,
    computation_record,
    concat,
    dropout,
    exp,
    getitem,
    hadamard,
    is_grad_enabled,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    scale,
    sigmoid,
    softmax,
    stack,
    sub,
    sum,
    swapaxes,
    tanh,
    transpose,
)

subtract = sub
