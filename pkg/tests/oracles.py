"""Independent reference implementations written with explicit loops.

Nothing here imports the package under test; these are the oracles the
vectorised code is compared against.
"""

import math

import numpy as np


def naive_conv2d(x, kernel, bias=None):
    c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernel.shape
    assert k_in == c_in
    ph, pw = kh // 2, kw // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for i in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            yy, xs = y + a - ph, xx + b - pw
                            if 0 <= yy < h and 0 <= xs < w:
                                acc += kernel[o, i, a, b] * x[i, yy, xs]
                out[o, y, xx] = acc + (bias[o] if bias is not None else 0.0)
    return out


def naive_depthwise_conv2d(x, kernel, bias=None):
    c, h, w = x.shape
    out = np.zeros_like(x, dtype=float)
    for ch in range(c):
        single = naive_conv2d(x[ch : ch + 1], kernel[ch : ch + 1])
        out[ch] = single[0] + (bias[ch] if bias is not None else 0.0)
    return out


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def _path(variant, params, name, y):
    if variant == "standard":
        return naive_conv2d(y, params[name])
    if variant == "depthwise":
        return naive_depthwise_conv2d(y, params[name])
    if variant == "spatial":
        return naive_conv2d(naive_conv2d(y, params[name + "_h"]), params[name + "_w"])
    return naive_conv2d(naive_depthwise_conv2d(y, params[name + "_dw"]), params[name + "_pw"])


def naive_cell_step(variant, params, x, h_prev, c_prev):
    """One convLSTM step transcribed gate by gate, element by element."""
    o_ch, hh, ww = h_prev.shape
    pre = {}
    for g in "ifco":
        zx = _path(variant, params, f"W_x{g}", x)
        zh = _path(variant, params, f"W_h{g}", h_prev)
        pre[g] = zx + zh
    gate = {g: np.zeros((o_ch, hh, ww)) for g in "ifco"}
    c = np.zeros((o_ch, hh, ww))
    h = np.zeros((o_ch, hh, ww))
    for o in range(o_ch):
        for y in range(hh):
            for xx in range(ww):
                i_t = _sigmoid(pre["i"][o, y, xx] + params["b_i"][o])
                f_t = _sigmoid(pre["f"][o, y, xx] + params["b_f"][o])
                j_t = math.tanh(pre["c"][o, y, xx] + params["b_c"][o])
                o_t = _sigmoid(pre["o"][o, y, xx] + params["b_o"][o])
                c[o, y, xx] = f_t * c_prev[o, y, xx] + i_t * j_t
                h[o, y, xx] = o_t * math.tanh(c[o, y, xx])
                gate["i"][o, y, xx], gate["f"][o, y, xx] = i_t, f_t
                gate["c"][o, y, xx], gate["o"][o, y, xx] = j_t, o_t
    return h, c, gate


def naive_rollout(variant, params, frames, h0, c0):
    h, c = h0, c0
    outs = []
    for x in frames:
        h, c, _ = naive_cell_step(variant, params, x, h, c)
        outs.append(h)
    return outs, h, c


def brute_diff_maps(pred, gt):
    """Materialise every error map: predicted class + 1 where wrong, 0 where right."""
    n, hh, ww = pred.shape
    d = np.zeros((n, hh, ww), dtype=np.int64)
    for t in range(n):
        for y in range(hh):
            for x in range(ww):
                if pred[t, y, x] != gt[t, y, x]:
                    d[t, y, x] = int(pred[t, y, x]) + 1
    return d


def brute_changes(seq):
    n, hh, ww = seq.shape
    total = 0
    for t in range(1, n):
        for y in range(hh):
            for x in range(ww):
                if seq[t, y, x] != seq[t - 1, y, x]:
                    total += 1
    return total


def brute_mfip(pred):
    n, hh, ww = pred.shape
    return brute_changes(pred) / (hh * ww) * 1000.0


def brute_mfp(pred, gt):
    n, hh, ww = pred.shape
    return brute_changes(brute_diff_maps(pred, gt)) / (hh * ww) * 1000.0


def brute_confusion(preds, gts, n):
    cm = np.zeros((n, n), dtype=np.int64)
    for p, g in zip(preds, gts):
        for y in range(p.shape[0]):
            for x in range(p.shape[1]):
                cm[g[y, x], p[y, x]] += 1
    return cm


def brute_miou(preds, gts, n):
    cm = brute_confusion(preds, gts, n)
    ious = []
    for k in range(n):
        tp = cm[k, k]
        fp = sum(cm[j, k] for j in range(n) if j != k)
        fn = sum(cm[k, j] for j in range(n) if j != k)
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
    return sum(ious) / len(ious)


def closed_form_total_flops(variant, k, i, o, dx, dy):
    """Per-variant totals for I == O and Kx == Ky, written out by hand."""
    per = {
        "standard": 16 * k * k * i + 37,
        "spatial": 32 * k * i + 37,
        "depthwise": 16 * k * k + 37,
        "separable": 16 * k * k + 16 * i + 37,
    }[variant]
    return per * o * dx * dy
