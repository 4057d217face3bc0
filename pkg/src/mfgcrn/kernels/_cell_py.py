"""Pure numpy fused multi-graph GRU step: forward and hand-derived backward.

Node-major layout: x, h are (N, B, D) so a graph product over the whole
batch is one (K*N, N) @ (N, B*F) matrix multiply whose result is already
graph-major (K, N*B, F). graphs are (K, N, N), w_r/w_u/w_c are (K, 2D, D),
biases (D,). Gate pre-activations average the K graph convolutions.
"""
import numpy as np


def _sigmoid(z):
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def cell_forward(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c):
    N, B, D = h.shape
    K = graphs.shape[0]
    F = 2 * D
    inv_k = 1.0 / K
    a_flat = graphs.reshape(K * N, N)
    z = np.concatenate([x, h], axis=-1)
    p = (a_flat @ z.reshape(N, B * F)).reshape(K, N * B, F)
    w_ru = np.concatenate([w_r, w_u], axis=-1)
    pre = np.matmul(p, w_ru).sum(axis=0)
    pre *= inv_k
    pre += np.concatenate([b_r, b_u])
    gates = _sigmoid(pre).reshape(N, B, F)
    r, u = gates[..., :D], gates[..., D:]
    z2 = np.concatenate([x, r * h], axis=-1)
    p2 = (a_flat @ z2.reshape(N, B * F)).reshape(K, N * B, F)
    pc = np.matmul(p2, w_c).sum(axis=0)
    pc *= inv_k
    pc += b_c
    c = np.tanh(pc).reshape(N, B, D)
    h_new = c + u * (h - c)
    cache = (h, a_flat, w_ru, w_c, z, p, r, u, z2, p2, c)
    return h_new, cache


def cell_backward(g, cache, fixed_graphs=0):
    """Gradients of every input; the first ``fixed_graphs`` graph slots get zeros."""
    h, a_flat, w_ru, w_c, z, p, r, u, z2, p2, c = cache
    N, B, D = h.shape
    K = a_flat.shape[0] // N
    F = 2 * D
    inv_k = 1.0 / K
    gu = g * (h - c)
    gh = g * u
    gpc = ((g - gh) * (1.0 - c * c)).reshape(N * B, D)
    gb_c = gpc.sum(axis=0)
    gpc *= inv_k
    gw_c = np.matmul(p2.transpose(0, 2, 1), gpc)
    gp2 = np.matmul(gpc, w_c.transpose(0, 2, 1)).reshape(K * N, B * F)
    rows = slice(fixed_graphs * N, K * N)
    ggraphs = np.zeros((K * N, N), dtype=gp2.dtype)
    ggraphs[rows] = gp2[rows] @ z2.reshape(N, B * F).T
    gz2 = (a_flat.T @ gp2).reshape(N, B, F)
    gx = gz2[..., :D].copy()
    grh = gz2[..., D:]
    gh += grh * r
    gpre = np.concatenate([grh * h * r * (1.0 - r), gu * u * (1.0 - u)], axis=-1).reshape(N * B, F)
    gb = gpre.sum(axis=0)
    gpre *= inv_k
    gw = np.matmul(p.transpose(0, 2, 1), gpre)
    gp = np.matmul(gpre, w_ru.transpose(0, 2, 1)).reshape(K * N, B * F)
    ggraphs[rows] += gp[rows] @ z.reshape(N, B * F).T
    gz = (a_flat.T @ gp).reshape(N, B, F)
    gx += gz[..., :D]
    gh += gz[..., D:]
    return (gx, gh, ggraphs.reshape(K, N, N), gw[..., :D], gw[..., D:], gw_c,
            gb[:D], gb[D:], gb_c)
