#pragma once

#include <cstdint>

#include "bevpred/common.hpp"

// Dense compute kernels on raw row-major buffers.
//
// Parallel variants live in bevpred::kernels and use OpenMP. Every loop is
// parallelized over disjoint output elements with a fixed inner accumulation
// order, so results are bit-identical for any thread count. The naive serial
// counterparts in bevpred::kernels::serial are kept as independent references
// for tests and the bench_kernels comparison target.

namespace bevpred::kernels {

// ---- pointwise ----
void add(scalar* out, const scalar* a, const scalar* b, int64_t n);
void sub(scalar* out, const scalar* a, const scalar* b, int64_t n);
void mul(scalar* out, const scalar* a, const scalar* b, int64_t n);
void scale(scalar* out, const scalar* a, scalar c, int64_t n);
void accumulate(scalar* y, const scalar* x, int64_t n);            // y += x
void axpy(scalar* y, scalar a, const scalar* x, int64_t n);        // y += a*x
void fill(scalar* out, scalar v, int64_t n);
void sigmoid(scalar* out, const scalar* x, int64_t n);
void sigmoid_backward(scalar* dx, const scalar* y, const scalar* dy, int64_t n);
void gelu(scalar* out, const scalar* x, int64_t n);
void gelu_backward(scalar* dx, const scalar* x, const scalar* dy, int64_t n);
void exp_fwd(scalar* out, const scalar* x, int64_t n);
void abs_fwd(scalar* out, const scalar* x, int64_t n);

// ---- reductions (sequential accumulation in double for reproducibility) ----
double sum(const scalar* x, int64_t n);
// x viewed as [outer, k, inner]; out[o,i] = sum_k x[o,k,i]
void sum_axis(scalar* out, const scalar* x, int64_t outer, int64_t k, int64_t inner);
void broadcast_axis_acc(scalar* dx, const scalar* dout, int64_t outer, int64_t k,
                        int64_t inner, scalar factor);             // dx[o,j,i] += factor*dout[o,i]

// ---- matmul ----
// C (+)= A[M,K] * B[K,N]
void matmul(scalar* c, const scalar* a, const scalar* b, int64_t m, int64_t k, int64_t n,
            bool accumulate);
// C (+)= A[M,K] * B[N,K]^T
void matmul_bt(scalar* c, const scalar* a, const scalar* b, int64_t m, int64_t k, int64_t n,
               bool accumulate);
// C (+)= A[K,M]^T * B[K,N]
void matmul_at(scalar* c, const scalar* a, const scalar* b, int64_t m, int64_t k, int64_t n,
               bool accumulate);
void bmm(scalar* c, const scalar* a, const scalar* b, int64_t batch, int64_t m, int64_t k,
         int64_t n, bool accumulate);
void bmm_bt(scalar* c, const scalar* a, const scalar* b, int64_t batch, int64_t m, int64_t k,
            int64_t n, bool accumulate);
void bmm_at(scalar* c, const scalar* a, const scalar* b, int64_t batch, int64_t m, int64_t k,
            int64_t n, bool accumulate);

// ---- conv2d, NCHW, weight [O,C,kh,kw] ----
void conv2d_forward(scalar* out, const scalar* x, const scalar* w, const scalar* bias,
                    int64_t n, int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                    int64_t kw, int64_t stride, int64_t pad);
void conv2d_backward_input(scalar* dx, const scalar* dout, const scalar* w, int64_t n,
                           int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                           int64_t kw, int64_t stride, int64_t pad);
void conv2d_backward_weight(scalar* dw, scalar* dbias, const scalar* x, const scalar* dout,
                            int64_t n, int64_t cin, int64_t h, int64_t wd, int64_t cout,
                            int64_t kh, int64_t kw, int64_t stride, int64_t pad);

// ---- transposed conv2d, weight [C,O,kh,kw], out extent (H-1)*s + kh - 2p ----
void conv_transpose2d_forward(scalar* out, const scalar* x, const scalar* w, const scalar* bias,
                              int64_t n, int64_t cin, int64_t h, int64_t wd, int64_t cout,
                              int64_t kh, int64_t kw, int64_t stride, int64_t pad);
void conv_transpose2d_backward_input(scalar* dx, const scalar* dout, const scalar* w, int64_t n,
                                     int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                                     int64_t kw, int64_t stride, int64_t pad);
void conv_transpose2d_backward_weight(scalar* dw, scalar* dbias, const scalar* x,
                                      const scalar* dout, int64_t n, int64_t cin, int64_t h,
                                      int64_t wd, int64_t cout, int64_t kh, int64_t kw,
                                      int64_t stride, int64_t pad);

// ---- max pool (argmax saved for the backward scatter) ----
void maxpool2d_forward(scalar* out, int32_t* argmax, const scalar* x, int64_t n, int64_t c,
                       int64_t h, int64_t wd, int64_t k, int64_t stride);
void maxpool2d_backward(scalar* dx, const scalar* dout, const int32_t* argmax, int64_t n,
                        int64_t c, int64_t h, int64_t wd, int64_t ho, int64_t wo);

// ---- nearest-neighbor upsample ----
void upsample_nearest2d_forward(scalar* out, const scalar* x, int64_t nc, int64_t h, int64_t wd,
                                int64_t factor);
void upsample_nearest2d_backward(scalar* dx, const scalar* dout, int64_t nc, int64_t h,
                                 int64_t wd, int64_t factor);

// ---- row-wise softmax / log-softmax / layer norm ----
void softmax_lastaxis(scalar* out, const scalar* x, int64_t rows, int64_t cols);
void softmax_backward(scalar* dx, const scalar* y, const scalar* dy, int64_t rows, int64_t cols);
void log_softmax_lastaxis(scalar* out, const scalar* x, int64_t rows, int64_t cols);
void log_softmax_backward(scalar* dx, const scalar* y, const scalar* dy, int64_t rows,
                          int64_t cols);
void layer_norm_forward(scalar* out, scalar* mean_save, scalar* rstd_save, const scalar* x,
                        const scalar* gamma, const scalar* beta, int64_t rows, int64_t cols);
void layer_norm_backward(scalar* dx, scalar* dgamma, scalar* dbeta, const scalar* x,
                         const scalar* gamma, const scalar* mean_save, const scalar* rstd_save,
                         const scalar* dy, int64_t rows, int64_t cols);

// ---- bilinear sampling: feat [C,H,W], coords [P,2] as (u,v) pixels ----
void bilinear_sample_forward(scalar* out, const scalar* feat, const scalar* coords, int64_t c,
                             int64_t h, int64_t wd, int64_t p);
void bilinear_sample_backward(scalar* dfeat, const scalar* dout, const scalar* coords, int64_t c,
                              int64_t h, int64_t wd, int64_t p);

// ---- embedding rows ----
void embedding_forward(scalar* out, const scalar* table, const int64_t* idx, int64_t n,
                       int64_t dim);
void embedding_backward(scalar* dtable, const scalar* dout, const int64_t* idx, int64_t n,
                        int64_t dim);

bool all_finite(const scalar* x, int64_t n);

namespace serial {

// Naive single-threaded references, written independently of the parallel
// kernels (dot-product order matmul, direct 7-loop convolutions).
void matmul(scalar* c, const scalar* a, const scalar* b, int64_t m, int64_t k, int64_t n);
void conv2d_forward(scalar* out, const scalar* x, const scalar* w, const scalar* bias,
                    int64_t n, int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                    int64_t kw, int64_t stride, int64_t pad);
void softmax_lastaxis(scalar* out, const scalar* x, int64_t rows, int64_t cols);
void layer_norm_forward(scalar* out, const scalar* x, const scalar* gamma, const scalar* beta,
                        int64_t rows, int64_t cols);
void bilinear_sample_forward(scalar* out, const scalar* feat, const scalar* coords, int64_t c,
                             int64_t h, int64_t wd, int64_t p);
void gelu(scalar* out, const scalar* x, int64_t n);

}  // namespace serial

}  // namespace bevpred::kernels
