"""Pure-numpy reference implementation of the aggregation kernels.

These are the semantics the compiled extension must match.  All kernels
operate on CSR-style edge structures: edges are grouped by destination
segment, ``idx[e]`` is the source row of edge ``e`` and segment ``s``
owns edges ``indptr[s]:indptr[s+1]``.  Within a segment edges are in
ascending source order; tie-breaking in ``seg_max`` relies on that.

``np.ufunc.reduceat`` has two sharp edges that the helper below papers
over: an empty segment (indices[i] == indices[i+1]) silently yields
``a[indices[i]]`` instead of the identity, and an index equal to
``len(a)`` raises.  Appending one neutral row keeps every start index
valid without disturbing the preceding segment's slice (clipping the
start would), and empty segments get the fill value patched in
afterwards.  The fill must be neutral for the ufunc because the final
segment's reduction includes the pad row.
"""

from __future__ import annotations

import numpy as np


def _reduceat(ufunc, a: np.ndarray, indptr: np.ndarray, fill: float) -> np.ndarray:
    pad = np.full((1,) + a.shape[1:], fill, dtype=a.dtype)
    a_pad = np.concatenate([a, pad], axis=0)
    out = ufunc.reduceat(a_pad, indptr[:-1], axis=0)
    empty = indptr[1:] == indptr[:-1]
    if empty.any():
        out[empty] = fill
    return out


def _segment_ids(indptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))


def seg_sum(
    payload: np.ndarray,
    idx: np.ndarray,
    indptr: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """out[s] = sum_e weights[e] * payload[idx[e]] over segment s."""
    contrib = payload[idx]
    if weights is not None:
        contrib = contrib * weights[:, None]
    return _reduceat(np.add, contrib, indptr, 0.0)


def seg_dot(
    payload: np.ndarray,
    seg_grad: np.ndarray,
    idx: np.ndarray,
    indptr: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Per-edge dot product: r[e] = weights[e] * <payload[idx[e]], seg_grad[seg(e)]>.

    This is the gradient of a scale-weighted seg_sum with respect to the
    per-edge scale.
    """
    seg = _segment_ids(indptr)
    r = np.einsum("ed,ed->e", payload[idx], seg_grad[seg])
    if weights is not None:
        r = r * weights
    return r


def seg_max(
    values: np.ndarray,
    idx: np.ndarray,
    indptr: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise max per segment with argmax source rows.

    Ties go to the lowest source index.  An empty segment yields -inf
    and arg -1; callers that cannot tolerate that must guarantee
    non-empty segments (the state-update structures always include a
    self edge).
    """
    n_src = values.shape[0]
    v = values[idx]
    out = _reduceat(np.maximum, v, indptr, -np.inf)
    seg = _segment_ids(indptr)
    masked = np.where(v == out[seg], idx[:, None], n_src)
    arg = _reduceat(np.minimum, masked, indptr, n_src)
    arg[arg == n_src] = -1
    return out, arg


def seg_max_backward(
    seg_grad: np.ndarray,
    arg: np.ndarray,
    n_src: int,
) -> np.ndarray:
    """Scatter seg_grad back to the winning source rows (arg < 0 skipped)."""
    grad = np.zeros((n_src, seg_grad.shape[1]), dtype=seg_grad.dtype)
    mask = arg >= 0
    cols = np.broadcast_to(np.arange(seg_grad.shape[1]), arg.shape)
    np.add.at(grad, (arg[mask], cols[mask]), seg_grad[mask])
    return grad


def scatter_rows(rows: np.ndarray, idx: np.ndarray, n_out: int) -> np.ndarray:
    """Accumulate rows[m] into out[idx[m]]; backward of a row gather."""
    out = np.zeros((n_out, rows.shape[1]), dtype=rows.dtype)
    np.add.at(out, idx, rows)
    return out
