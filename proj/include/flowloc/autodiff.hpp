#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowloc/rng.hpp"

namespace flowloc::ad {

// Dense row-major tensor, double precision throughout: tolerances in the
// gradient checks assume it, and sizes here never make speed the bottleneck.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    static std::size_t numel_of(const std::vector<int>& shape);
    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double v) { return from({1}, {v}); }
    static Tensor randn(std::vector<int> shape, rng::Stream& rs, double scale = 1.0);
    static Tensor randu(std::vector<int> shape, rng::Stream& rs, double lo, double hi);

    std::size_t numel() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
};

class Tape;

// Handle to a tape node; cheap to copy, only meaningful with its tape.
struct Value {
    int id = -1;
    Tape* tape = nullptr;
};

// Records forward ops; replays adjoints in reverse creation order. One
// backward pass per tape.
class Tape {
public:
    Value input(Tensor t, bool requires_grad = false);

    const Tensor& val(Value v) const { return node(v.id).val; }
    // Gradient accumulated by backward(); zeros if the node never saw one.
    const Tensor& grad(Value v);

    void backward(Value loss);

    // Op-builder plumbing (used by the free functions below).
    using BackFn = std::function<void(Tape&, int self)>;
    Value emplace(Tensor value, bool requires_grad, BackFn back);
    Tensor& grad_ref(int id);
    bool grad_seen(int id) const { return node(id).grad_alloc; }
    const Tensor& val_of(int id) const { return node(id).val; }
    bool rg_of(int id) const { return node(id).rg; }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool rg = false;
        bool grad_alloc = false;
        BackFn back;
    };
    Node& node(int id);
    const Node& node(int id) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---- differentiable primitives -------------------------------------------
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value multiply(Value a, Value b);             // elementwise
Value affine(Value a, double mul, double add);  // mul*a + add, elementwise
Value scale(Value a, double c);
Value matmul(Value a, Value b);               // [n,k] x [k,m]
Value transpose(Value a);                     // 2-d
Value add_rows(Value a, Value row);           // [n,m] + broadcast [m]
Value relu(Value a);
Value sigmoid(Value a);
Value tanh_op(Value a);
Value exp_op(Value a);
Value log_op(Value a);
Value softplus(Value a);                      // log(1+e^x), stable
Value softmax(Value a, int axis);
Value log_sum_exp(Value a, int axis);         // keeps the axis as size 1
Value layer_norm(Value a, int axis, double eps = 1e-5);
Value layer_norm_affine(Value a, int axis, Value gamma, Value beta, double eps = 1e-5);
Value dropout(Value a, double p, std::uint64_t seed);   // inverted scaling
Value gaussian_sample(Value mu, Value sigma, std::uint64_t seed);  // mu + sigma*eps
Value embed(Value table, const std::vector<int>& indices);  // gathers rows
Value concat(Value a, Value b, int axis);
Value slice(Value a, int axis, int start, int len);
Value sum(Value a);                           // -> scalar
Value mean(Value a);                          // -> scalar
Value mean_axis(Value a, int axis);           // keeps the axis as size 1

// Cross-entropy of a [1,C] logit row against an integer label; stable form.
Value cross_entropy_logits(Value logits, int label);

// ---- training utilities ----------------------------------------------------
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool amsgrad = false;
    // per-parameter state, created lazily on first step
    std::vector<Tensor> m, v, vmax;
};

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamConfig& cfg, long t);

double cosine_lr(long t, long T, double lr_max, double lr_min = 0.0);

// Central-difference gradient verification on a random subsample of at least
// 100 coordinates (all coordinates when fewer exist). model_fn must be
// deterministic: it is evaluated twice up front and rejected if the losses
// differ (e.g. dropout with an unfrozen seed).
using ModelFn = std::function<Value(Tape&, const std::vector<Value>&)>;
double finite_diff_check(const ModelFn& model_fn, const std::vector<Tensor>& params,
                         double eps = 1e-5, std::uint64_t seed = 0);

}  // namespace flowloc::ad
