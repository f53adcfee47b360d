#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jmvr/kernels.hpp"
#include "jmvr/tensor.hpp"

namespace jmvr {

class Graph;

// Handle into a Graph's tape.
struct Value {
    Graph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
};

// Reverse-mode autodiff tape over Tensor. One Graph is built per training or
// inference step and discarded afterwards; parents always precede children in
// the tape, so backward() is a single reverse sweep.
class Graph {
public:
    Value leaf(Tensor t, bool requires_grad = true);
    Value constant(Tensor t) { return leaf(std::move(t), false); }

    const Tensor& value(Value v) const;
    const Tensor& grad(Value v) const;
    bool has_grad(Value v) const;
    bool requires_grad(Value v) const;
    size_t num_nodes() const { return nodes_.size(); }

    // Elementwise / broadcast
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double s);
    Value add_rowvec(Value x, Value v); // v broadcast over the rows of x
    Value mul_rowvec(Value x, Value v);

    // Linear algebra
    Value matmul(Value a, Value b, kernels::MatMode mode = kernels::MatMode::NN);
    Value linear(Value x, Value w, Value b); // x*w + b

    // Structure
    Value concat_rows(const std::vector<Value>& parts);
    Value slice_rows(Value x, int r0, int n);
    Value concat_cols(const std::vector<Value>& parts);
    Value slice_cols(Value x, int c0, int n);
    Value reshape(Value x, std::vector<int> shape);
    Value gather_rows(Value table, std::vector<int> idx);
    // Rows where mask!=0 are replaced by null_row (1 x D).
    Value replace_rows(Value x, Value null_row, const std::vector<uint8_t>& mask);

    // Nonlinearities / normalization
    Value silu(Value x);
    Value sigmoid(Value x);
    Value layer_norm_rows(Value x, double eps = 1e-6);
    Value softmax_rows(Value x);

    // Reductions
    Value mean_rows(Value x); // [n x d] -> [1 x d]
    Value mean_all(Value x);  // -> [1]
    Value mse(Value a, Value b);

    // Convolutions / pooling
    Value conv1d_depthwise(Value x, Value w, Value b);
    Value conv2d_single(Value x, Value w, Value b); // w [kh x kw], b [1]
    // x [Cin x H x W], w [d x Cin*p*p], b [d] -> [(H/p)*(W/p) x d]
    Value patchify(Value x, Value w, Value b, int p);
    Value adaptive_pool_cols(Value x, int out_len);

    void backward(Value loss_scalar);

private:
    struct Node {
        Tensor value;
        Tensor grad; // empty until touched by backward
        bool requires_grad = false;
        std::function<void(Graph&)> back;
    };

    std::vector<Node> nodes_;

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    Tensor& grad_ref(int id); // allocates zeros on first touch
    Value push(Tensor value, bool requires_grad, std::function<void(Graph&)> back);
};

} // namespace jmvr
