"""Pure-numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    """Unfold a padded NCHW array into rows of receptive fields.

    Returns an array of shape (N*OH*OW, C*kh*kw) with rows ordered
    (n, oh, ow) and columns ordered (c, ki, kj).
    """
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, shape, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add rows back into a padded array."""
    n, c, hp, wp = shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols6 = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros(shape, dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            out[:, :, ki : ki + stride * (oh - 1) + 1 : stride, kj : kj + stride * (ow - 1) + 1 : stride] += (
                cols6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return out


def box_mean(img, r):
    """Mean over (2r+1)x(2r+1) windows with edge-replicated borders.

    ``img`` is a 2-D float64 array; the result is float64.
    """
    k = 2 * r + 1
    p = np.pad(img, r, mode="edge")
    s = np.zeros((p.shape[0] + 1, p.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(p, axis=0), axis=1, out=s[1:, 1:])
    h, w = img.shape
    tot = s[k : k + h, k : k + w] - s[:h, k : k + w] - s[k : k + h, :w] + s[:h, :w]
    return tot / (k * k)


def correlate_sparse(img, kernel):
    """Zero-padded 'same' correlation that only visits the nonzero taps.

    The kernel must have odd extents; its center is aligned with each
    output pixel.
    """
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    h, w = img.shape
    out = np.zeros_like(img)
    padded = np.zeros((h + 2 * ch, w + 2 * cw), dtype=img.dtype)
    padded[ch : ch + h, cw : cw + w] = img
    for ki, kj in zip(*np.nonzero(kernel)):
        out += kernel[ki, kj] * padded[ki : ki + h, kj : kj + w]
    return out


def lcs_length(a, b):
    """Length of the longest common subsequence of two int sequences."""
    if len(a) == 0 or len(b) == 0:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]
