"""Pure-numpy twin of the compiled conv kernels.

Both backends must stay bit-identical: im2col is a pure gather, and col2im
accumulates the nine kernel taps in the same fixed order, so every output
element sees the same float addition sequence under either backend.
"""

import numpy as np


def im2col3(x: np.ndarray) -> np.ndarray:
    """Unfold zero-padded 3x3 patches of ``x`` (C,H,W) into (C*9, H*W) columns.

    Row layout is channel-major: row index = c*9 + ky*3 + kx.
    """
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1 : h + 1, 1 : w + 1] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    # win: (C, H, W, 3, 3) -> (C, 3, 3, H, W) -> (C*9, H*W)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * 9, h * w)


def col2im3(cols: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`im2col3`: scatter-add columns back to a (C,H,W) map.

    Taps are accumulated in ascending k order (k = ky*3 + kx) so the result is
    bit-reproducible across backends.
    """
    c9 = cols.shape[0]
    c = c9 // 9
    patches = cols.reshape(c, 9, h, w)
    out = np.zeros((c, h + 2, w + 2), dtype=cols.dtype)
    for k in range(9):
        ky, kx = divmod(k, 3)
        out[:, ky : ky + h, kx : kx + w] += patches[:, k]
    return out[:, 1 : h + 1, 1 : w + 1].copy()
