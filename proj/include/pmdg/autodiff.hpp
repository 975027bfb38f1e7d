#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pmdg/tensor.hpp"

namespace pmdg::ad {

/**
 * Reverse-mode automatic differentiation over Tensor.
 *
 * A graph is built per training step out of shared_ptr nodes and discarded
 * after backward(); leaves (model parameters) outlive graphs and accumulate
 * gradients in their `grad` tensor. The op set is exactly what the models and
 * penalty terms need — this is not a general framework.
 */
struct Node {
    Tensor value;
    Tensor grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

using Value = std::shared_ptr<Node>;

// Leaves.
Value constant(Tensor t);
Value leaf(Tensor t);  // requires_grad = true; gradients accumulate across graphs until zeroed

// Elementwise.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value relu(const Value& a);
Value exp(const Value& a);
Value mul_const(const Value& a, Tensor weights);  // a .* constant

// Shape.
Value reshape(const Value& a, std::vector<int> shape);
Value select_rows(const Value& a, std::vector<int> rows);  // [n,d] -> [k,d]
Value concat_scalars(const std::vector<Value>& scalars);   // k scalars -> [k]

// Linear algebra.
Value matmul(const Value& a, const Value& b);     // [n,k]x[k,m] -> [n,m]
Value matmul_tn(const Value& a, const Value& b);  // a^T b : [k,n],[k,m] -> [n,m]
Value add_rowvec(const Value& a, const Value& v);  // [n,d] + [d]
Value sub_colvec(const Value& a, const Value& v);  // [n,d] - [n] per row

// Reductions.
Value sum_all(const Value& a);    // -> [1]
Value mean_all(const Value& a);   // -> [1]
Value mean_rows(const Value& a);  // [n,d] -> [d]
Value logsumexp_rows(const Value& a);  // [n,c] -> [n], numerically stable

// Pairwise squared euclidean distances: [n,d],[m,d] -> [n,m].
Value pairwise_sqdist(const Value& x, const Value& y);

// Convolution / pooling (NCHW, stride 1, zero padding).
Value conv2d(const Value& x, const Value& w, const Value& bias, int pad);
Value avg_pool2x2(const Value& x);
Value global_avg_pool(const Value& x);  // [b,c,h,w] -> [b,c]

// Batch normalization over the channel axis; input viewed as
// [outer, channels, inner] (2d: inner = h*w, 1d: inner = 1).
// Train form normalizes with batch statistics and reports them through
// batch_mean/batch_var (biased) so the caller can maintain running buffers.
Value batchnorm_train(const Value& x, const Value& gamma, const Value& beta, int channels,
                      double eps, Tensor* batch_mean, Tensor* batch_var);
Value batchnorm_eval(const Value& x, const Value& gamma, const Value& beta, int channels,
                     double eps, const Tensor& running_mean, const Tensor& running_var);

// Runs reverse accumulation from a scalar root.
void backward(const Value& root);

double scalar_value(const Value& v);

}  // namespace pmdg::ad
