#include "adaptorx/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "adaptorx/kernels.hpp"

namespace adaptorx {

long numel(const Shape& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

thread_local bool g_grad_enabled = true;

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

}  // namespace detail

namespace {

using detail::Node;

template <typename T>
std::shared_ptr<Node<T>> new_node(Shape shape, std::vector<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

// Records the op on the graph when recording is enabled and any input
// requires grad; otherwise returns an unrecorded value node.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> bw) {
    auto n = new_node<T>(std::move(shape), std::move(value));
    n->op = op;
    bool wants_grad = false;
    if (detail::grad_enabled()) {
        for (const auto& in : inputs) wants_grad = wants_grad || in.requires_grad();
    }
    if (wants_grad) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (const auto& in : inputs) n->inputs.push_back(in.node());
        n->backward = std::move(bw);
    }
    return Tensor<T>(n);
}

// Effective row-major strides of `in` when iterated over `out`; broadcast
// axes get stride 0. `in` must already be broadcast-compatible with `out`.
std::vector<long> effective_strides(const Shape& out, const Shape& in) {
    const int r = static_cast<int>(out.size());
    const int ri = static_cast<int>(in.size());
    std::vector<long> strides(static_cast<size_t>(r), 0);
    long s = 1;
    for (int ax = ri - 1; ax >= 0; --ax) {
        const int out_ax = ax + (r - ri);
        strides[static_cast<size_t>(out_ax)] = (in[static_cast<size_t>(ax)] == 1) ? 0 : s;
        s *= in[static_cast<size_t>(ax)];
    }
    return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    const int r = static_cast<int>(std::max(a.size(), b.size()));
    Shape out(static_cast<size_t>(r), 1);
    for (int ax = 0; ax < r; ++ax) {
        const int da = ax - (r - static_cast<int>(a.size()));
        const int db = ax - (r - static_cast<int>(b.size()));
        const int va = da >= 0 ? a[static_cast<size_t>(da)] : 1;
        const int vb = db >= 0 ? b[static_cast<size_t>(db)] : 1;
        if (va != vb && va != 1 && vb != 1) {
            throw ShapeError(std::string(op) + ": shapes not broadcastable " + shape_str(a) +
                             " vs " + shape_str(b));
        }
        out[static_cast<size_t>(ax)] = std::max(va, vb);
    }
    return out;
}

// Walks `out` in row-major order, handing f the linear output index plus the
// offsets into the two (possibly broadcast) operands.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const int r = static_cast<int>(out.size());
    const long n = numel(out);
    if (r == 0) {
        if (n > 0) f(0L, 0L, 0L);
        return;
    }
    const std::vector<long> stra = effective_strides(out, sa);
    const std::vector<long> strb = effective_strides(out, sb);
    std::vector<int> coord(static_cast<size_t>(r), 0);
    long ia = 0, ib = 0;
    for (long i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (int ax = r - 1; ax >= 0; --ax) {
            ++coord[static_cast<size_t>(ax)];
            ia += stra[static_cast<size_t>(ax)];
            ib += strb[static_cast<size_t>(ax)];
            if (coord[static_cast<size_t>(ax)] < out[static_cast<size_t>(ax)]) break;
            coord[static_cast<size_t>(ax)] = 0;
            ia -= stra[static_cast<size_t>(ax)] * out[static_cast<size_t>(ax)];
            ib -= strb[static_cast<size_t>(ax)] * out[static_cast<size_t>(ax)];
        }
    }
}

template <typename T>
struct BinaryKind {
    enum Kind { Add, Mul } kind;
};

template <typename T>
Tensor<T> broadcast_binary(const char* op, bool is_mul, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
    std::vector<T> value(static_cast<size_t>(numel(out_shape)));
    const auto& av = a.data();
    const auto& bv = b.data();
    if (is_mul) {
        for_each_broadcast(out_shape, a.shape(), b.shape(),
                           [&](long i, long ia, long ib) { value[i] = av[ia] * bv[ib]; });
    } else {
        for_each_broadcast(out_shape, a.shape(), b.shape(),
                           [&](long i, long ia, long ib) { value[i] = av[ia] + bv[ib]; });
    }
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    const Shape so = out_shape;
    return make_op<T>(
        op, out_shape, std::move(value), {a, b}, [is_mul, sa, sb, so](Node<T>& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            const std::vector<T>& g = self.grad;
            if (na.requires_grad) {
                na.ensure_grad();
                if (is_mul) {
                    for_each_broadcast(so, sa, sb, [&](long i, long ia, long ib) {
                        na.grad[ia] += g[i] * nb.value[ib];
                    });
                } else {
                    for_each_broadcast(so, sa, sb,
                                       [&](long i, long ia, long ib) { na.grad[ia] += g[i]; (void)ib; });
                }
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                if (is_mul) {
                    for_each_broadcast(so, sa, sb, [&](long i, long ia, long ib) {
                        nb.grad[ib] += g[i] * na.value[ia];
                    });
                } else {
                    for_each_broadcast(so, sa, sb,
                                       [&](long i, long ia, long ib) { nb.grad[ib] += g[i]; (void)ia; });
                }
            }
        });
}

}  // namespace

// --- Tensor factories --------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
    const long n = numel(shape);
    return Tensor<T>(new_node<T>(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0))));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
    const long n = numel(shape);
    return Tensor<T>(new_node<T>(std::move(shape), std::vector<T>(static_cast<size_t>(n), v)));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
    if (numel(shape) != static_cast<long>(data.size())) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    return Tensor<T>(new_node<T>(std::move(shape), std::move(data)));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v) {
    return Tensor<T>(new_node<T>(Shape{}, std::vector<T>{v}));
}

// --- primitives ---------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must be rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const bool b_batched = b.rank() > 2;
    if (b_batched && b.rank() != a.rank()) {
        throw ShapeError("matmul: batch ranks differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int ra = a.rank();
    const long m = a.dim(ra - 2);
    const long k = a.dim(ra - 1);
    const long kb = b.dim(b.rank() - 2);
    const long n = b.dim(b.rank() - 1);
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    long batch = 1;
    for (int i = 0; i < ra - 2; ++i) {
        batch *= a.dim(i);
        if (b_batched && b.dim(i) != a.dim(i)) {
            throw ShapeError("matmul: batch dimensions mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.back() = static_cast<int>(m);
    out_shape.push_back(static_cast<int>(n));

    std::vector<T> value(static_cast<size_t>(batch * m * n));
    kernels::gemm_batched(a.data().data(), b.data().data(), value.data(), batch, m, k, n,
                          b_batched, false);

    return make_op<T>("matmul", std::move(out_shape), std::move(value), {a, b},
                      [batch, m, k, n, b_batched](Node<T>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          const T* dc = self.grad.data();
                          if (na.requires_grad) {
                              na.ensure_grad();
                              if (b_batched) {
                                  std::vector<T> bt(static_cast<size_t>(batch * n * k));
                                  for (long s = 0; s < batch; ++s) {
                                      kernels::transpose_2d(nb.value.data() + s * k * n,
                                                            bt.data() + s * n * k, k, n);
                                  }
                                  kernels::gemm_batched(dc, bt.data(), na.grad.data(), batch, m, n,
                                                        k, true, true);
                              } else {
                                  std::vector<T> bt(static_cast<size_t>(n * k));
                                  kernels::transpose_2d(nb.value.data(), bt.data(), k, n);
                                  kernels::gemm_batched(dc, bt.data(), na.grad.data(), batch, m, n,
                                                        k, false, true);
                              }
                          }
                          if (nb.requires_grad) {
                              nb.ensure_grad();
                              if (b_batched) {
                                  std::vector<T> at(static_cast<size_t>(batch * k * m));
                                  for (long s = 0; s < batch; ++s) {
                                      kernels::transpose_2d(na.value.data() + s * m * k,
                                                            at.data() + s * k * m, m, k);
                                  }
                                  kernels::gemm_batched(at.data(), dc, nb.grad.data(), batch, k, m,
                                                        n, true, true);
                              } else {
                                  // B is shared: reduce over the batch in fixed order.
                                  std::vector<T> at(static_cast<size_t>(k * m));
                                  for (long s = 0; s < batch; ++s) {
                                      kernels::transpose_2d(na.value.data() + s * m * k, at.data(),
                                                            m, k);
                                      kernels::gemm(at.data(), dc + s * m * n, nb.grad.data(), k, m,
                                                    n, true);
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_binary<T>("add", false, a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_binary<T>("mul", true, a, b);
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const IdMatrix& ids) {
    if (table.rank() != 2) {
        throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
    }
    const long vocab = table.dim(0);
    const long width = table.dim(1);
    const long rows = static_cast<long>(ids.size());
    if (rows == 0) throw ShapeError("embedding_lookup: empty id batch");
    const long cols = static_cast<long>(ids[0].size());
    for (const auto& r : ids) {
        if (static_cast<long>(r.size()) != cols) {
            throw ShapeError("embedding_lookup: ragged id rows");
        }
        for (int id : r) {
            if (id < 0 || id >= vocab) {
                throw ShapeError("embedding_lookup: token id " + std::to_string(id) +
                                 " out of range [0," + std::to_string(vocab) + ")");
            }
        }
    }
    std::vector<T> value(static_cast<size_t>(rows * cols * width));
    const T* tv = table.data().data();
    for (long i = 0; i < rows; ++i) {
        for (long j = 0; j < cols; ++j) {
            const T* src = tv + static_cast<long>(ids[i][j]) * width;
            std::copy(src, src + width, value.data() + (i * cols + j) * width);
        }
    }
    auto ids_copy = std::make_shared<IdMatrix>(ids);
    return make_op<T>("embedding_lookup",
                      Shape{static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(width)},
                      std::move(value), {table}, [ids_copy, rows, cols, width](Node<T>& self) {
                          auto& nt = *self.inputs[0];
                          if (!nt.requires_grad) return;
                          nt.ensure_grad();
                          const T* g = self.grad.data();
                          for (long i = 0; i < rows; ++i) {
                              for (long j = 0; j < cols; ++j) {
                                  T* dst = nt.grad.data() +
                                           static_cast<long>((*ids_copy)[i][j]) * width;
                                  const T* src = g + (i * cols + j) * width;
                                  for (long v = 0; v < width; ++v) dst[v] += src[v];
                              }
                          }
                      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const long width = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != width || bias.rank() != 1 || bias.dim(0) != width) {
        throw ShapeError("layer_norm: gain/bias must be shaped [" + std::to_string(width) +
                         "], got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    const long rows = x.size() / width;
    std::vector<T> value(static_cast<size_t>(x.size()));
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.size()));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    kernels::layer_norm_rows(x.data().data(), gain.data().data(), bias.data().data(), value.data(),
                             xhat->data(), inv_std->data(), rows, width, eps);
    return make_op<T>("layer_norm", x.shape(), std::move(value), {x, gain, bias},
                      [xhat, inv_std, rows, width](Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          auto& ng = *self.inputs[1];
                          auto& nb = *self.inputs[2];
                          std::vector<T> scratch_dx, scratch_dg, scratch_db;
                          T* dx;
                          if (nx.requires_grad) {
                              nx.ensure_grad();
                              dx = nx.grad.data();
                          } else {
                              scratch_dx.assign(self.value.size(), T(0));
                              dx = scratch_dx.data();
                          }
                          T* dg;
                          if (ng.requires_grad) {
                              ng.ensure_grad();
                              dg = ng.grad.data();
                          } else {
                              scratch_dg.assign(static_cast<size_t>(width), T(0));
                              dg = scratch_dg.data();
                          }
                          T* db;
                          if (nb.requires_grad) {
                              nb.ensure_grad();
                              db = nb.grad.data();
                          } else {
                              scratch_db.assign(static_cast<size_t>(width), T(0));
                              db = scratch_db.data();
                          }
                          kernels::layer_norm_backward_rows(xhat->data(), inv_std->data(),
                                                            ng.value.data(), self.grad.data(), dx,
                                                            dg, db, rows, width);
                      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax: input must have rank >= 1");
    const long width = x.dim(x.rank() - 1);
    const long rows = x.size() / width;
    std::vector<T> value(static_cast<size_t>(x.size()));
    kernels::softmax_rows(x.data().data(), value.data(), rows, width);
    return make_op<T>("softmax", x.shape(), std::move(value), {x}, [rows, width](Node<T>& self) {
        auto& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        kernels::softmax_backward_rows(self.value.data(), self.grad.data(), nx.grad.data(), rows,
                                       width);
    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> value(static_cast<size_t>(x.size()));
    kernels::gelu(x.data().data(), value.data(), x.size());
    const long count = x.size();
    return make_op<T>("gelu", x.shape(), std::move(value), {x}, [count](Node<T>& self) {
        auto& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        kernels::gelu_backward(nx.value.data(), self.grad.data(), nx.grad.data(), count);
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<T> value = x.data();
    return make_op<T>("reshape", std::move(shape), std::move(value), {x}, [](Node<T>& self) {
        auto& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
    });
}

namespace {

// dst permuted view copy: dst has x's shape with axes a and b swapped.
template <typename T>
void swap_axes_copy(const T* src, T* dst, const Shape& in_shape, int axis_a, int axis_b,
                    bool add_into) {
    const int r = static_cast<int>(in_shape.size());
    Shape out_shape = in_shape;
    std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);
    std::vector<long> in_strides(static_cast<size_t>(r), 1);
    for (int ax = r - 2; ax >= 0; --ax) {
        in_strides[static_cast<size_t>(ax)] =
            in_strides[static_cast<size_t>(ax + 1)] * in_shape[static_cast<size_t>(ax + 1)];
    }
    // Stride of the out axis in the input buffer.
    std::vector<long> strides(static_cast<size_t>(r));
    for (int ax = 0; ax < r; ++ax) {
        int src_ax = ax;
        if (ax == axis_a) src_ax = axis_b;
        else if (ax == axis_b) src_ax = axis_a;
        strides[static_cast<size_t>(ax)] = in_strides[static_cast<size_t>(src_ax)];
    }
    std::vector<int> coord(static_cast<size_t>(r), 0);
    long off = 0;
    const long n = numel(out_shape);
    for (long i = 0; i < n; ++i) {
        if (add_into) dst[off] += src[i];
        else dst[i] = src[off];
        for (int ax = r - 1; ax >= 0; --ax) {
            ++coord[static_cast<size_t>(ax)];
            off += strides[static_cast<size_t>(ax)];
            if (coord[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
            coord[static_cast<size_t>(ax)] = 0;
            off -= strides[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
    const int r = x.rank();
    if (axis_a < 0) axis_a += r;
    if (axis_b < 0) axis_b += r;
    if (axis_a < 0 || axis_a >= r || axis_b < 0 || axis_b >= r) {
        throw ShapeError("transpose: axes (" + std::to_string(axis_a) + "," +
                         std::to_string(axis_b) + ") out of range for " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);
    std::vector<T> value(static_cast<size_t>(x.size()));
    const Shape in_shape = x.shape();
    swap_axes_copy(x.data().data(), value.data(), in_shape, axis_a, axis_b, false);
    return make_op<T>("transpose", std::move(out_shape), std::move(value), {x},
                      [in_shape, axis_a, axis_b](Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          if (!nx.requires_grad) return;
                          nx.ensure_grad();
                          // The same axis swap maps the output gradient back.
                          swap_axes_copy(self.grad.data(), nx.grad.data(), in_shape, axis_a, axis_b,
                                         true);
                      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const int r = xs[0].rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape out_shape = xs[0].shape();
    int total = 0;
    for (const auto& x : xs) {
        if (x.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int ax = 0; ax < r; ++ax) {
            if (ax != axis && x.dim(ax) != out_shape[static_cast<size_t>(ax)]) {
                throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                                 shape_str(xs[0].shape()));
            }
        }
        total += x.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total;

    long outer = 1, inner = 1;
    for (int ax = 0; ax < axis; ++ax) outer *= out_shape[static_cast<size_t>(ax)];
    for (int ax = axis + 1; ax < r; ++ax) inner *= out_shape[static_cast<size_t>(ax)];

    std::vector<T> value(static_cast<size_t>(numel(out_shape)));
    std::vector<int> spans;
    long offset = 0;
    for (const auto& x : xs) {
        const long span = x.dim(axis) * inner;
        for (long o = 0; o < outer; ++o) {
            std::copy(x.data().data() + o * span, x.data().data() + (o + 1) * span,
                      value.data() + o * total * inner + offset);
        }
        offset += span;
        spans.push_back(static_cast<int>(span));
    }
    std::vector<Tensor<T>> inputs = xs;
    return make_op<T>("concat", std::move(out_shape), std::move(value), std::move(inputs),
                      [outer, inner, total, spans](Node<T>& self) {
                          long off = 0;
                          for (size_t idx = 0; idx < self.inputs.size(); ++idx) {
                              auto& nx = *self.inputs[idx];
                              const long span = spans[idx];
                              if (nx.requires_grad) {
                                  nx.ensure_grad();
                                  for (long o = 0; o < outer; ++o) {
                                      const T* src = self.grad.data() + o * total * inner + off;
                                      T* dst = nx.grad.data() + o * span;
                                      for (long j = 0; j < span; ++j) dst[j] += src[j];
                                  }
                              }
                              off += span;
                          }
                      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > x.dim(axis)) {
        throw ShapeError("slice: window [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for " +
                         shape_str(x.shape()) + " axis " + std::to_string(axis));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    long outer = 1, inner = 1;
    for (int ax = 0; ax < axis; ++ax) outer *= x.dim(ax);
    for (int ax = axis + 1; ax < r; ++ax) inner *= x.dim(ax);
    const long in_span = x.dim(axis) * inner;
    const long out_span = static_cast<long>(len) * inner;

    std::vector<T> value(static_cast<size_t>(numel(out_shape)));
    for (long o = 0; o < outer; ++o) {
        std::copy(x.data().data() + o * in_span + start * inner,
                  x.data().data() + o * in_span + start * inner + out_span,
                  value.data() + o * out_span);
    }
    return make_op<T>("slice", std::move(out_shape), std::move(value), {x},
                      [outer, inner, in_span, out_span, start](Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          if (!nx.requires_grad) return;
                          nx.ensure_grad();
                          for (long o = 0; o < outer; ++o) {
                              const T* src = self.grad.data() + o * out_span;
                              T* dst = nx.grad.data() + o * in_span + start * inner;
                              for (long j = 0; j < out_span; ++j) dst[j] += src[j];
                          }
                      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    std::vector<T> value(static_cast<size_t>(x.size()));
    const auto& xv = x.data();
    for (size_t i = 0; i < value.size(); ++i) value[i] = xv[i] * c;
    return make_op<T>("scale", x.shape(), std::move(value), {x}, [c](Node<T>& self) {
        auto& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i] * c;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (const T v : x.data()) total += v;
    return make_op<T>("sum", Shape{}, std::vector<T>{total}, {x}, [](Node<T>& self) {
        auto& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        const T g = self.grad[0];
        for (auto& v : nx.grad) v += g;
    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const IdMatrix& targets, int ignore_id) {
    if (logits.rank() < 2) {
        throw ShapeError("cross_entropy: logits must be rank >= 2, got " +
                         shape_str(logits.shape()));
    }
    const long width = logits.dim(logits.rank() - 1);
    const long rows = logits.size() / width;
    std::vector<int> flat;
    flat.reserve(static_cast<size_t>(rows));
    for (const auto& r : targets) flat.insert(flat.end(), r.begin(), r.end());
    if (static_cast<long>(flat.size()) != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(flat.size()) +
                         " targets for " + std::to_string(rows) + " logit rows");
    }
    long count = 0;
    for (const int t : flat) {
        if (t == ignore_id) continue;
        if (t < 0 || t >= width) {
            throw ShapeError("cross_entropy: target id " + std::to_string(t) +
                             " out of range [0," + std::to_string(width) + ")");
        }
        ++count;
    }
    if (count == 0) throw ValueError("cross_entropy: all positions ignored, mean undefined");

    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * width));
    std::vector<T> row_loss(static_cast<size_t>(rows));
    kernels::cross_entropy_rows(logits.data().data(), flat.data(), row_loss.data(), probs->data(),
                                rows, width, ignore_id);
    T total = T(0);
    for (long i = 0; i < rows; ++i) total += row_loss[i];
    const T mean = total / static_cast<T>(count);

    auto flat_copy = std::make_shared<std::vector<int>>(std::move(flat));
    return make_op<T>("cross_entropy", Shape{}, std::vector<T>{mean}, {logits},
                      [probs, flat_copy, rows, width, count, ignore_id](Node<T>& self) {
                          auto& nl = *self.inputs[0];
                          if (!nl.requires_grad) return;
                          nl.ensure_grad();
                          const T g = self.grad[0] / static_cast<T>(count);
                          const std::vector<int>& tgt = *flat_copy;
#pragma omp parallel for schedule(static) if (rows * width > kernels::kParallelGrain)
                          for (long i = 0; i < rows; ++i) {
                              if (tgt[i] == ignore_id) continue;
                              const T* p = probs->data() + i * width;
                              T* d = nl.grad.data() + i * width;
                              for (long v = 0; v < width; ++v) d[v] += g * p[v];
                              d[tgt[i]] -= g;
                          }
                      });
}

template <typename T>
Tensor<T> apply_primitive(const std::string& op_id, const std::vector<Tensor<T>>& inputs,
                          const OpAttrs& attrs) {
    auto need = [&](size_t n) {
        if (inputs.size() != n) {
            throw ShapeError("apply_primitive(" + op_id + "): expected " + std::to_string(n) +
                             " inputs, got " + std::to_string(inputs.size()));
        }
    };
    if (op_id == "matmul") {
        need(2);
        return matmul(inputs[0], inputs[1]);
    }
    if (op_id == "add") {
        need(2);
        return add(inputs[0], inputs[1]);
    }
    if (op_id == "mul") {
        need(2);
        return mul(inputs[0], inputs[1]);
    }
    if (op_id == "embedding_lookup") {
        need(1);
        return embedding_lookup(inputs[0], attrs.ids);
    }
    if (op_id == "layer_norm") {
        need(3);
        return layer_norm(inputs[0], inputs[1], inputs[2], static_cast<T>(attrs.eps));
    }
    if (op_id == "softmax") {
        need(1);
        return softmax(inputs[0]);
    }
    if (op_id == "gelu") {
        need(1);
        return gelu(inputs[0]);
    }
    if (op_id == "reshape") {
        need(1);
        return reshape(inputs[0], attrs.shape);
    }
    if (op_id == "transpose") {
        need(1);
        return transpose(inputs[0], attrs.axis, attrs.axis_b);
    }
    if (op_id == "concat") {
        if (inputs.empty()) throw ShapeError("apply_primitive(concat): no inputs");
        return concat(inputs, attrs.axis);
    }
    if (op_id == "slice") {
        need(1);
        return slice(inputs[0], attrs.axis, attrs.start, attrs.len);
    }
    if (op_id == "scale") {
        need(1);
        return scale(inputs[0], static_cast<T>(attrs.scalar));
    }
    throw UnsupportedOpError("unsupported op: " + op_id);
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
    }
    using NodeT = Node<T>;
    NodeT* root = loss.node().get();

    // Iterative post-order DFS; the graph can be deep for long decodes.
    std::vector<NodeT*> topo;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeT* child = node->inputs[next].get();
            ++next;
            if (visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch per pass; leaf gradients accumulate
    // across passes until zeroed by the caller.
    for (NodeT* n : topo) {
        if (n->backward) n->grad.assign(n->value.size(), T(0));
    }
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

// --- explicit instantiations --------------------------------------------------

#define ADAPTORX_INSTANTIATE_BACKEND(T)                                                          \
    template class Tensor<T>;                                                                    \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> embedding_lookup<T>(const Tensor<T>&, const IdMatrix&);                   \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                             \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                                \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                      \
    template Tensor<T> transpose<T>(const Tensor<T>&, int, int);                                 \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                            \
    template Tensor<T> slice<T>(const Tensor<T>&, int, int, int);                                \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                 \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, const IdMatrix&, int);                 \
    template Tensor<T> apply_primitive<T>(const std::string&, const std::vector<Tensor<T>>&,     \
                                          const OpAttrs&);                                       \
    template void backward<T>(const Tensor<T>&);

ADAPTORX_INSTANTIATE_BACKEND(float)
ADAPTORX_INSTANTIATE_BACKEND(double)

#undef ADAPTORX_INSTANTIATE_BACKEND

}  // namespace adaptorx
