import numpy as np
from hypothesis import assume

from angular_kd.autodiff import backward, finite_difference_check, zero_grad

FD_TOLERANCE = 1e-5
# Central differences at h=1e-5 carry ~1e-10 absolute roundoff; nonzero gradients
# below this magnitude cannot be compared to FD_TOLERANCE.
RESOLVABLE_GRADIENT = 1e-4


def analytic_gradients(f, params):
    params = list(params)
    zero_grad(params)
    backward(f())
    flat = np.concatenate([param.grad.reshape(-1) for param in params])
    zero_grad(params)
    return flat


def gradient_error(f, params, resolvable=RESOLVABLE_GRADIENT):
    """finite_difference_check on draws whose gradients are exactly zero or resolvable."""
    params = list(params)
    magnitudes = np.abs(analytic_gradients(f, params))
    assume(bool(np.all((magnitudes == 0.0) | (magnitudes >= resolvable))))
    return finite_difference_check(f, params)
