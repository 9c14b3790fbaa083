from .autodiff import (Tensor, NonFiniteError, as_tensor, grad, value_and_grad, concat,
                       einsum, exp, log, sin, cos, sqrt, tanh, sigmoid, silu, layer_norm,
                       take, where_const)
from .linalg import sym_eigen
from .optim import AdamState, LbfgsResult, adam_step, lbfgs_minimize
from .rng import DEFAULT_SEED, rng, spawn
