"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; set
``HIPMDP_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

if os.environ.get("HIPMDP_PURE_PYTHON", "") not in ("", "0"):
    from . import _pure as _impl
else:
    try:
        from . import _ext as _impl
    except ImportError:  # extension not built
        from . import _pure as _impl

BACKEND = _impl.BACKEND
se_kernel_matrix = _impl.se_kernel_matrix
se_kernel_vector = _impl.se_kernel_vector
interp_outputs = _impl.interp_outputs
cartpole_step = _impl.cartpole_step
acrobot_step = _impl.acrobot_step
wrap_angle = _impl.wrap_angle
fourier_features = _impl.fourier_features
