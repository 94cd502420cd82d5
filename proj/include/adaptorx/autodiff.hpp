#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors, with
// exactly the primitives the transformer and its losses need. Instantiated
// for float (training) and double (finite-difference verification).

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adaptorx/errors.hpp"

namespace adaptorx {

using Shape = std::vector<int>;
using IdMatrix = std::vector<std::vector<int>>;

constexpr int kIgnoreId = -100;

long numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first needed
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward;

    long size() const { return static_cast<long>(value.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

bool grad_enabled();
void set_grad_enabled(bool on);

}  // namespace detail

// Scoped "no graph recording" guard for evaluation and decoding.
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
    ~NoGradGuard() { detail::set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Shared handle to a graph node. Copies alias the same storage.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, T v);
    static Tensor from_data(Shape shape, std::vector<T> data);
    static Tensor scalar(T v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    long size() const { return n_->size(); }

    const std::vector<T>& data() const { return n_->value; }
    std::vector<T>& data() { return n_->value; }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        n_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<T>& grad() const { return n_->grad; }
    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

    T item() const {
        if (size() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
        return n_->value[0];
    }

    std::shared_ptr<detail::Node<T>> node() const { return n_; }
    explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node<T>> n_;
};

// --- primitives -------------------------------------------------------------

// A [..., m, k] · B [..., k, n] (B may be rank-2 and shared across the batch).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// NumPy-style broadcasting on both operands.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const IdMatrix& ids);

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine gain and bias (both shaped [width]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

template <typename T>
Tensor<T> softmax(const Tensor<T>& x);  // last axis

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Swaps two axes (materialized copy).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);  // scalar reduction

// Mean negative log-softmax over positions whose target != ignore_id.
// logits [..., vocab]; targets row-major over the leading axes.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const IdMatrix& targets, int ignore_id);

// Dispatcher over the primitive set by name; `attrs` carries the op-specific
// arguments. Unknown ids raise UnsupportedOpError.
struct OpAttrs {
    int axis = 0;
    int axis_b = 1;
    int start = 0;
    int len = 0;
    double scalar = 1.0;
    double eps = 1e-5;
    Shape shape;
    IdMatrix ids;
};

template <typename T>
Tensor<T> apply_primitive(const std::string& op_id, const std::vector<Tensor<T>>& inputs,
                          const OpAttrs& attrs = {});

// Reverse pass from a scalar loss. Gradients accumulate on leaf tensors
// across calls until explicitly zeroed.
template <typename T>
void backward(const Tensor<T>& loss);

// --- parameters -------------------------------------------------------------

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;

    Parameter(std::string n, Tensor<T> t) : name(std::move(n)), tensor(std::move(t)) {
        tensor.set_requires_grad(true);
    }
};

template <typename T>
using ParamPtr = std::shared_ptr<Parameter<T>>;

// Name-ordered set of parameters. Insertion rejects duplicate names; the
// same physical parameter may be referenced from several sets (sharing).
template <typename T>
class ParamSet {
public:
    using Map = std::map<std::string, ParamPtr<T>>;

    void insert(ParamPtr<T> p) {
        auto [it, ok] = params_.emplace(p->name, std::move(p));
        if (!ok) throw ConfigError("ParamSet: duplicate parameter name " + it->first);
    }
    void insert_ref(const std::string& key, ParamPtr<T> p) {
        auto [it, ok] = params_.emplace(key, std::move(p));
        if (!ok) throw ConfigError("ParamSet: duplicate parameter name " + it->first);
    }
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const ParamPtr<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw RoutingError("ParamSet: unknown parameter " + name);
        return it->second;
    }
    void erase(const std::string& name) { params_.erase(name); }

    typename Map::const_iterator begin() const { return params_.begin(); }
    typename Map::const_iterator end() const { return params_.end(); }
    size_t size() const { return params_.size(); }
    bool empty() const { return params_.empty(); }

    long total_elements() const {
        long total = 0;
        for (const auto& [_, p] : params_) total += p->tensor.size();
        return total;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [name, _] : params_) out.push_back(name);
        return out;
    }

private:
    Map params_;
};

using Real = float;

}  // namespace adaptorx
