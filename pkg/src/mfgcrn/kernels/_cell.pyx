# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled multi-graph GRU step (float64).

Same contract and layout as ``_cell_py``: x, h are (N, B, D) node-major,
graphs (K, N, N), weights (K, 2D, D), biases (D,). Matrix products go to
BLAS dgemm with strided operands so no concatenation or transposition copies
are made. Transcendentals use numpy's vectorised tanh in place on the GEMM
output buffers (scalar libm tanh is several times slower); the surrounding
arithmetic runs in single fused loops. Graph slots that are
exactly the identity skip their propagation product.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                      const double* a, int lda, const double* b, int ldb,
                      double beta, double* c, int ldc) noexcept nogil:
    # row-major C[m, n] = alpha * op(A) @ op(B) + beta * C, via column-major BLAS
    cdef char opa = b'T' if ta else b'N'
    cdef char opb = b'T' if tb else b'N'
    dgemm(&opb, &opa, &n, &m, &k, &alpha, <double*>b, &ldb, <double*>a, &lda, &beta, c, &ldc)


cdef bint _is_identity(const double[:, :, ::1] graphs, int k) noexcept:
    cdef Py_ssize_t i, j, n = graphs.shape[1]
    for i in range(n):
        for j in range(n):
            if graphs[k, i, j] != (1.0 if i == j else 0.0):
                return False
    return True


cdef void _propagate(const double[:, :, ::1] graphs, const unsigned char[::1] ident,
                     const double[:, :, ::1] z, double[:, :, ::1] out) noexcept:
    # out[k] (N*B, F) = graphs[k] @ z viewed as (N, B*F)
    cdef int K = graphs.shape[0], N = graphs.shape[1]
    cdef int BF = z.shape[1] * z.shape[2]
    cdef Py_ssize_t k, i
    cdef const double* zp = &z[0, 0, 0]
    for k in range(K):
        if ident[k]:
            for i in range(N * BF):
                (&out[k, 0, 0])[i] = zp[i]
        else:
            gemm(False, False, N, BF, N, 1.0, &graphs[k, 0, 0], N, zp, BF, 0.0, &out[k, 0, 0], BF)


def cell_forward(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(graphs, dtype=np.float64)
    cdef double[:, :, ::1] wr = np.ascontiguousarray(w_r, dtype=np.float64)
    cdef double[:, :, ::1] wu = np.ascontiguousarray(w_u, dtype=np.float64)
    cdef double[:, :, ::1] wc = np.ascontiguousarray(w_c, dtype=np.float64)
    cdef double[::1] br = np.ascontiguousarray(b_r, dtype=np.float64)
    cdef double[::1] bu = np.ascontiguousarray(b_u, dtype=np.float64)
    cdef double[::1] bc = np.ascontiguousarray(b_c, dtype=np.float64)
    cdef int N = hv.shape[0], B = hv.shape[1], D = hv.shape[2], K = gv.shape[0]
    cdef int F = 2 * D, NB = N * B
    cdef double inv_k = 1.0 / K
    cdef Py_ssize_t i, j, k, row

    ident_arr = np.array([_is_identity(gv, kk) for kk in range(K)], dtype=np.uint8)
    cdef unsigned char[::1] ident = ident_arr

    z_arr = np.empty((N, B, F))
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, ::1] zf = z_arr.reshape(NB, F)
    cdef double[:, ::1] xf = np.asarray(xv).reshape(NB, D)
    cdef double[:, ::1] hf = np.asarray(hv).reshape(NB, D)
    for row in range(NB):
        for j in range(D):
            zf[row, j] = xf[row, j]
            zf[row, D + j] = hf[row, j]

    p_arr = np.empty((K, NB, F))
    cdef double[:, :, ::1] p = p_arr
    _propagate(gv, ident, z, p)

    pre_arr = np.empty((NB, F))
    cdef double[:, ::1] pre = pre_arr
    for k in range(K):
        gemm(False, False, NB, D, F, inv_k, &p[k, 0, 0], F, &wr[k, 0, 0], D,
             0.0 if k == 0 else 1.0, &pre[0, 0], F)
        gemm(False, False, NB, D, F, inv_k, &p[k, 0, 0], F, &wu[k, 0, 0], D,
             0.0 if k == 0 else 1.0, &pre[0, D], F)

    r_arr = np.empty((N, B, D))
    u_arr = np.empty((N, B, D))
    z2_arr = np.empty((N, B, F))
    cdef double[:, ::1] rf = r_arr.reshape(NB, D)
    cdef double[:, ::1] uf = u_arr.reshape(NB, D)
    cdef double[:, ::1] z2f = z2_arr.reshape(NB, F)
    cdef double rv
    for row in range(NB):
        for j in range(D):
            pre[row, j] = 0.5 * (pre[row, j] + br[j])
            pre[row, D + j] = 0.5 * (pre[row, D + j] + bu[j])
    np.tanh(pre_arr, out=pre_arr)
    for row in range(NB):
        for j in range(D):
            rv = 0.5 + 0.5 * pre[row, j]
            rf[row, j] = rv
            uf[row, j] = 0.5 + 0.5 * pre[row, D + j]
            z2f[row, j] = xf[row, j]
            z2f[row, D + j] = rv * hf[row, j]

    p2_arr = np.empty((K, NB, F))
    cdef double[:, :, ::1] p2 = p2_arr
    _propagate(gv, ident, z2_arr, p2)
    pc_arr = np.empty((NB, D))
    cdef double[:, ::1] pc = pc_arr
    for k in range(K):
        gemm(False, False, NB, D, F, inv_k, &p2[k, 0, 0], F, &wc[k, 0, 0], D,
             0.0 if k == 0 else 1.0, &pc[0, 0], D)

    c_arr = np.empty((N, B, D))
    out_arr = np.empty((N, B, D))
    cdef double[:, ::1] cf = c_arr.reshape(NB, D)
    cdef double[:, ::1] of = out_arr.reshape(NB, D)
    cdef double cv
    for row in range(NB):
        for j in range(D):
            pc[row, j] += bc[j]
    np.tanh(pc_arr, out=pc_arr)
    for row in range(NB):
        for j in range(D):
            cv = pc[row, j]
            cf[row, j] = cv
            of[row, j] = cv + uf[row, j] * (hf[row, j] - cv)

    cache = (np.asarray(hv), np.asarray(gv), ident_arr, np.asarray(wr), np.asarray(wu),
             np.asarray(wc), z_arr, p_arr, r_arr, u_arr, z2_arr, p2_arr, c_arr)
    return out_arr, cache


def cell_backward(g, cache, int fixed_graphs=0):
    h_arr, g_arr, ident_arr, wr_arr, wu_arr, wc_arr, z_arr, p_arr, r_arr, u_arr, z2_arr, p2_arr, c_arr = cache
    cdef int N = h_arr.shape[0], B = h_arr.shape[1], D = h_arr.shape[2], K = g_arr.shape[0]
    cdef int F = 2 * D, NB = N * B, BF = B * F
    cdef double inv_k = 1.0 / K
    cdef Py_ssize_t j, k, row

    cdef double[:, ::1] gf = np.ascontiguousarray(g, dtype=np.float64).reshape(NB, D)
    cdef double[:, ::1] hf = h_arr.reshape(NB, D)
    cdef double[:, ::1] rf = r_arr.reshape(NB, D)
    cdef double[:, ::1] uf = u_arr.reshape(NB, D)
    cdef double[:, ::1] cf = c_arr.reshape(NB, D)
    cdef double[:, :, ::1] graphs = g_arr
    cdef double[:, :, ::1] wr = wr_arr
    cdef double[:, :, ::1] wu = wu_arr
    cdef double[:, :, ::1] wc = wc_arr
    cdef double[:, :, ::1] p = p_arr
    cdef double[:, :, ::1] p2 = p2_arr
    cdef double[:, ::1] zf = z_arr.reshape(NB, F)
    cdef double[:, ::1] z2f = z2_arr.reshape(NB, F)

    gu_arr = np.empty((NB, D))
    gh_arr = np.empty((N, B, D))
    gpc_arr = np.empty((NB, D))
    gb_c_arr = np.zeros(D)
    cdef double[:, ::1] gu = gu_arr
    cdef double[:, ::1] ghf = gh_arr.reshape(NB, D)
    cdef double[:, ::1] gpc = gpc_arr
    cdef double[::1] gb_c = gb_c_arr
    cdef double gv, uv, cv, t
    for row in range(NB):
        for j in range(D):
            gv = gf[row, j]
            uv = uf[row, j]
            cv = cf[row, j]
            gu[row, j] = gv * (hf[row, j] - cv)
            ghf[row, j] = gv * uv
            t = gv * (1.0 - uv) * (1.0 - cv * cv)
            gb_c[j] += t
            gpc[row, j] = t * inv_k

    gw_c_arr = np.empty((K, F, D))
    gp2_arr = np.empty((K, NB, F))
    cdef double[:, :, ::1] gw_c = gw_c_arr
    cdef double[:, :, ::1] gp2 = gp2_arr
    for k in range(K):
        gemm(True, False, F, D, NB, 1.0, &p2[k, 0, 0], F, &gpc[0, 0], D, 0.0, &gw_c[k, 0, 0], D)
        gemm(False, True, NB, F, D, 1.0, &gpc[0, 0], D, &wc[k, 0, 0], D, 0.0, &gp2[k, 0, 0], F)

    ggraphs_arr = np.zeros((K, N, N))
    cdef double[:, :, ::1] ggraphs = ggraphs_arr
    cdef int f0 = min(max(fixed_graphs, 0), K)
    if f0 < K:
        gemm(False, True, (K - f0) * N, N, BF, 1.0, &gp2[f0, 0, 0], BF, &z2f[0, 0], BF, 0.0,
             &ggraphs[f0, 0, 0], N)
    gz2_arr = np.empty((NB, F))
    cdef double[:, ::1] gz2 = gz2_arr
    _adjoint(graphs, ident_arr, gp2, gz2, 0.0)

    gx_arr = np.empty((N, B, D))
    gpre_arr = np.empty((NB, F))
    gb_arr = np.zeros(F)
    cdef double[:, ::1] gxf = gx_arr.reshape(NB, D)
    cdef double[:, ::1] gpre = gpre_arr
    cdef double[::1] gb = gb_arr
    cdef double grh, rv, a, bq
    for row in range(NB):
        for j in range(D):
            gxf[row, j] = gz2[row, j]
            grh = gz2[row, D + j]
            rv = rf[row, j]
            uv = uf[row, j]
            ghf[row, j] += grh * rv
            a = grh * hf[row, j] * rv * (1.0 - rv)
            bq = gu[row, j] * uv * (1.0 - uv)
            gb[j] += a
            gb[D + j] += bq
            gpre[row, j] = a * inv_k
            gpre[row, D + j] = bq * inv_k

    gw_r_arr = np.empty((K, F, D))
    gw_u_arr = np.empty((K, F, D))
    gp_arr = np.empty((K, NB, F))
    cdef double[:, :, ::1] gw_r = gw_r_arr
    cdef double[:, :, ::1] gw_u = gw_u_arr
    cdef double[:, :, ::1] gp = gp_arr
    for k in range(K):
        gemm(True, False, F, D, NB, 1.0, &p[k, 0, 0], F, &gpre[0, 0], F, 0.0, &gw_r[k, 0, 0], D)
        gemm(True, False, F, D, NB, 1.0, &p[k, 0, 0], F, &gpre[0, D], F, 0.0, &gw_u[k, 0, 0], D)
        gemm(False, True, NB, F, D, 1.0, &gpre[0, 0], F, &wr[k, 0, 0], D, 0.0, &gp[k, 0, 0], F)
        gemm(False, True, NB, F, D, 1.0, &gpre[0, D], F, &wu[k, 0, 0], D, 1.0, &gp[k, 0, 0], F)
    if f0 < K:
        gemm(False, True, (K - f0) * N, N, BF, 1.0, &gp[f0, 0, 0], BF, &zf[0, 0], BF, 1.0,
             &ggraphs[f0, 0, 0], N)
    _adjoint(graphs, ident_arr, gp, gz2, 0.0)
    for row in range(NB):
        for j in range(D):
            gxf[row, j] += gz2[row, j]
            ghf[row, j] += gz2[row, D + j]

    return (gx_arr, gh_arr, ggraphs_arr, gw_r_arr, gw_u_arr, gw_c_arr,
            gb_arr[:D].copy(), gb_arr[D:].copy(), gb_c_arr)


cdef void _adjoint(const double[:, :, ::1] graphs, const unsigned char[::1] ident,
                   const double[:, :, ::1] gp, double[:, ::1] out, double beta) noexcept:
    # out (N, B*F) = beta * out + sum_k graphs[k].T @ gp[k]
    cdef int K = graphs.shape[0], N = graphs.shape[1]
    cdef int BF = gp.shape[1] * gp.shape[2] // N
    cdef Py_ssize_t k, i
    cdef double* op = &out[0, 0]
    cdef double bk
    for k in range(K):
        bk = beta if k == 0 else 1.0
        if ident[k]:
            for i in range(N * BF):
                op[i] = (op[i] * bk if bk != 0.0 else 0.0) + (&gp[k, 0, 0])[i]
        else:
            gemm(True, False, N, BF, N, 1.0, &graphs[k, 0, 0], N, &gp[k, 0, 0], BF, bk, op, BF)
