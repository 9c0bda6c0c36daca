#pragma once

#include <vector>

#include "pansharp/tensor.hpp"

namespace ps::ops {

// Elementwise / broadcast arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& s, const Tensor& x);      // s is a scalar tensor
Tensor add_bias(const Tensor& x, const Tensor& b);        // broadcast over last dim

// Matrix products, 2-D operands.
Tensor matmul(const Tensor& a, const Tensor& b);          // a[m,k] * b[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);       // a[m,k] * b[n,k]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);       // a[k,m]^T * b[k,n]

// Spatial ops on [h,w,c] images; reflect-101 padding, stride 1, same size.
Tensor conv2d(const Tensor& x, const Tensor& w);          // w[kh,kw,cin,cout]
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w);// w[kh,kw,c]
Tensor upsample_bicubic(const Tensor& x, int factor);     // Keys kernel a=-0.5
Tensor nearest_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// Activations and normalization.
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sine_act(const Tensor& x, double w0);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor softmax_lastdim(const Tensor& x);

// Shape / layout.
Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape);
Tensor concat_lastdim(const std::vector<Tensor>& xs);
Tensor slice_lastdim(const Tensor& x, std::int64_t start, std::int64_t len);
Tensor patchify(const Tensor& x, int p);                  // [H,W,C] -> [T, p*p*C]
Tensor unpatchify(const Tensor& t, std::int64_t out_h, std::int64_t out_w, int p,
                  std::int64_t channels);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor abs_val(const Tensor& x);
Tensor l1_loss(const Tensor& a, const Tensor& b);
Tensor mse_loss(const Tensor& a, const Tensor& b);

// Reflect-101 boundary index (edge pixel not repeated).
int reflect_index(int i, int n);

}  // namespace ps::ops
