#include "cepa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace cepa {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> data, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return impl;
}

void check_positive_shape(const Shape& shape, const char* op) {
    for (int d : shape) {
        if (d <= 0)
            throw ShapeError(std::string(op) + ": non-positive dimension in " + shape_str(shape));
    }
}

std::vector<float>& grad_buf(TensorImpl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0f);
    return impl.grad;
}

// Attaches a node to `out` when any input requires grad; otherwise the op
// leaves no trace (no-grad fast path).
Tensor finish_op(const char* op, Shape out_shape, std::vector<float> out_data,
                 std::vector<Tensor> inputs,
                 std::function<void(const TensorImpl&)> backward_fn) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    auto impl = make_impl(std::move(out_shape), std::move(out_data), needs);
    if (needs) {
        auto node = std::make_shared<GraphNode>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward_fn);
        impl->node = std::move(node);
    }
    return Tensor(std::move(impl));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_positive_shape(shape, "zeros");
    auto n = numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f),
                            requires_grad));
}

Tensor Tensor::full(Shape shape, float value) {
    check_positive_shape(shape, "full");
    auto n = numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), false));
}

Tensor Tensor::scalar(float value) {
    return Tensor(make_impl({1}, std::vector<float>{value}, false));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    check_positive_shape(shape, "from_data");
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

float Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return impl_->data[0];
}

std::vector<float> Tensor::grad() const {
    if (impl_->grad.empty()) return std::vector<float>(impl_->data.size(), 0.0f);
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
    return Tensor(make_impl(impl_->shape, impl_->data, impl_->requires_grad));
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = false;
    return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
    for (float v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;  // nothing reachable requires grad

    // Reverse topological order via iterative postorder DFS over impls.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* impl;
        std::size_t next_child;
    };
    std::vector<Frame> stk;
    if (loss.impl_->node) {
        visited.insert(loss.impl_.get());
        stk.push_back({loss.impl_.get(), 0});
    }
    while (!stk.empty()) {
        Frame& f = stk.back();
        auto& inputs = f.impl->node->inputs;
        if (f.next_child < inputs.size()) {
            TensorImpl* child = inputs[f.next_child++].impl_.get();
            if (child->node && !visited.count(child)) {
                visited.insert(child);
                stk.push_back({child, 0});
            }
        } else {
            order.push_back(f.impl);
            stk.pop_back();
        }
    }

    grad_buf(*loss.impl_).assign(1, 1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* impl = *it;
        if (impl->grad.empty()) continue;  // unreachable from the seed
        impl->node->backward(*impl);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace {

enum class AddMode { Same, RowBias, ChannelBias };

AddMode add_mode(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return AddMode::Same;
    if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return AddMode::RowBias;
    if (a.size() == 4 && b.size() == 1 && a[1] == b[0]) return AddMode::ChannelBias;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    AddMode mode = add_mode(a.shape(), b.shape(), "add");
    std::vector<float> out(a.vec());
    const float* pb = b.data();
    const auto n = a.size();
    if (mode == AddMode::Same) {
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += pb[i];
    } else if (mode == AddMode::RowBias) {
        const int cols = a.shape()[1];
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += pb[i % cols];
    } else {
        const int c = a.shape()[1];
        const std::int64_t hw = static_cast<std::int64_t>(a.shape()[2]) * a.shape()[3];
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += pb[(i / hw) % c];
    }
    return finish_op("add", a.shape(), std::move(out), {a, b}, [mode](const TensorImpl& o) {
        const auto& node = *o.node;
        const Tensor& ta = node.inputs[0];
        const Tensor& tb = node.inputs[1];
        const auto n = static_cast<std::int64_t>(o.data.size());
        if (ta.requires_grad()) {
            auto& ga = grad_buf(*ta.impl_);
            for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += o.grad[static_cast<std::size_t>(i)];
        }
        if (tb.requires_grad()) {
            auto& gb = grad_buf(*tb.impl_);
            if (mode == AddMode::Same) {
                for (std::int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] += o.grad[static_cast<std::size_t>(i)];
            } else if (mode == AddMode::RowBias) {
                const int cols = ta.shape()[1];
                for (std::int64_t i = 0; i < n; ++i) gb[i % cols] += o.grad[static_cast<std::size_t>(i)];
            } else {
                const int c = ta.shape()[1];
                const std::int64_t hw = static_cast<std::int64_t>(ta.shape()[2]) * ta.shape()[3];
                for (std::int64_t i = 0; i < n; ++i) gb[(i / hw) % c] += o.grad[static_cast<std::size_t>(i)];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<float> out(a.vec());
    const float* pb = b.data();
    for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] -= pb[i];
    return finish_op("sub", a.shape(), std::move(out), {a, b}, [](const TensorImpl& o) {
        const Tensor& ta = o.node->inputs[0];
        const Tensor& tb = o.node->inputs[1];
        const auto n = o.data.size();
        if (ta.requires_grad()) {
            auto& ga = grad_buf(*ta.impl_);
            for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
        }
        if (tb.requires_grad()) {
            auto& gb = grad_buf(*tb.impl_);
            for (std::size_t i = 0; i < n; ++i) gb[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<float> out(a.vec());
    const float* pb = b.data();
    for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] *= pb[i];
    return finish_op("mul", a.shape(), std::move(out), {a, b}, [](const TensorImpl& o) {
        const Tensor& ta = o.node->inputs[0];
        const Tensor& tb = o.node->inputs[1];
        const auto n = o.data.size();
        if (ta.requires_grad()) {
            auto& ga = grad_buf(*ta.impl_);
            const float* pb = tb.data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i] * pb[i];
        }
        if (tb.requires_grad()) {
            auto& gb = grad_buf(*tb.impl_);
            const float* pa = ta.data();
            for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i] * pa[i];
        }
    });
}

Tensor scalar_mul(const Tensor& a, float s) {
    std::vector<float> out(a.vec());
    for (auto& v : out) v *= s;
    return finish_op("scalar_mul", a.shape(), std::move(out), {a}, [s](const TensorImpl& o) {
        const Tensor& ta = o.node->inputs[0];
        if (!ta.requires_grad()) return;
        auto& ga = grad_buf(*ta.impl_);
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += s * o.grad[i];
    });
}

Tensor relu(const Tensor& x) {
    std::vector<float> out(x.vec());
    for (auto& v : out) v = v > 0.0f ? v : 0.0f;
    return finish_op("relu", x.shape(), std::move(out), {x}, [](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        const float* px = tx.data();
        for (std::size_t i = 0; i < o.data.size(); ++i)
            if (px[i] > 0.0f) gx[i] += o.grad[i];
    });
}

Tensor square(const Tensor& x) {
    std::vector<float> out(x.vec());
    for (auto& v : out) v *= v;
    return finish_op("square", x.shape(), std::move(out), {x}, [](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        const float* px = tx.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += 2.0f * px[i] * o.grad[i];
    });
}

Tensor clip(const Tensor& x, float lo, float hi) {
    if (!(lo <= hi)) throw ShapeError("clip: lo > hi");
    std::vector<float> out(x.vec());
    for (auto& v : out) v = std::min(std::max(v, lo), hi);
    // Gradient passes only where the input is strictly inside (lo, hi).
    return finish_op("clip", x.shape(), std::move(out), {x}, [lo, hi](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        const float* px = tx.data();
        for (std::size_t i = 0; i < o.data.size(); ++i)
            if (px[i] > lo && px[i] < hi) gx[i] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// matmul / conv / pooling
// ---------------------------------------------------------------------------

namespace {

// Reductions accumulate in double so near-cancelling sums keep full float32
// accuracy in the result.

// C[M,N] += A[M,K] * B[K,N]; expects B small enough that strided reads stay cached
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<std::int64_t>(i) * k;
        float* ci = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += static_cast<double>(ai[p]) * b[static_cast<std::int64_t>(p) * n + j];
            ci[j] += static_cast<float>(acc);
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_bt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<std::int64_t>(i) * k;
        float* ci = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* bj = b + static_cast<std::int64_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += static_cast<double>(ai[p]) * bj[p];
            ci[j] += static_cast<float>(acc);
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]; K may be large, so accumulate into a double
// scratch of the (small) output instead of striding over A column-wise
void gemm_at_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    std::vector<double> tmp(static_cast<std::size_t>(m) * n, 0.0);
    for (int p = 0; p < k; ++p) {
        const float* ap = a + static_cast<std::int64_t>(p) * m;
        const float* bp = b + static_cast<std::int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double api = ap[i];
            if (api == 0.0) continue;
            double* ti = tmp.data() + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) ti[j] += api * bp[j];
        }
    }
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m) * n; ++i)
        c[i] += static_cast<float>(tmp[static_cast<std::size_t>(i)]);
}

struct ConvDims {
    int n, ci, h, w, co, kh, kw, oh, ow, pad;
    std::int64_t rows() const { return static_cast<std::int64_t>(n) * oh * ow; }
    int cols() const { return ci * kh * kw; }
};

void im2col(const float* x, const ConvDims& d, float* cols) {
    const std::int64_t chw = static_cast<std::int64_t>(d.ci) * d.h * d.w;
    std::int64_t r = 0;
    for (int n = 0; n < d.n; ++n) {
        const float* xn = x + n * chw;
        for (int oh = 0; oh < d.oh; ++oh) {
            for (int ow = 0; ow < d.ow; ++ow, ++r) {
                float* dst = cols + r * d.cols();
                int idx = 0;
                for (int c = 0; c < d.ci; ++c) {
                    const float* xc = xn + static_cast<std::int64_t>(c) * d.h * d.w;
                    for (int ki = 0; ki < d.kh; ++ki) {
                        const int yi = oh + ki - d.pad;
                        for (int kj = 0; kj < d.kw; ++kj, ++idx) {
                            const int xj = ow + kj - d.pad;
                            dst[idx] = (yi >= 0 && yi < d.h && xj >= 0 && xj < d.w)
                                           ? xc[static_cast<std::int64_t>(yi) * d.w + xj]
                                           : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im_acc(const float* cols, const ConvDims& d, float* gx) {
    const std::int64_t chw = static_cast<std::int64_t>(d.ci) * d.h * d.w;
    std::int64_t r = 0;
    for (int n = 0; n < d.n; ++n) {
        float* xn = gx + n * chw;
        for (int oh = 0; oh < d.oh; ++oh) {
            for (int ow = 0; ow < d.ow; ++ow, ++r) {
                const float* src = cols + r * d.cols();
                int idx = 0;
                for (int c = 0; c < d.ci; ++c) {
                    float* xc = xn + static_cast<std::int64_t>(c) * d.h * d.w;
                    for (int ki = 0; ki < d.kh; ++ki) {
                        const int yi = oh + ki - d.pad;
                        for (int kj = 0; kj < d.kw; ++kj, ++idx) {
                            const int xj = ow + kj - d.pad;
                            if (yi >= 0 && yi < d.h && xj >= 0 && xj < d.w)
                                xc[static_cast<std::int64_t>(yi) * d.w + xj] += src[idx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<float> out(static_cast<std::size_t>(m) * n, 0.0f);
    gemm_acc(a.data(), b.data(), out.data(), m, k, n);
    return finish_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](const TensorImpl& o) {
        const Tensor& ta = o.node->inputs[0];
        const Tensor& tb = o.node->inputs[1];
        if (ta.requires_grad())
            gemm_bt_acc(o.grad.data(), tb.data(), grad_buf(*ta.impl_).data(), m, n, k);
        if (tb.requires_grad())
            gemm_at_acc(ta.data(), o.grad.data(), grad_buf(*tb.impl_).data(), k, m, n);
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
    ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, pad};
    d.oh = d.h + 2 * pad - d.kh + 1;
    d.ow = d.w + 2 * pad - d.kw + 1;
    if (d.oh <= 0 || d.ow <= 0)
        throw ShapeError("conv2d: kernel " + shape_str(ws) + " too large for input " + shape_str(xs));

    auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(d.rows()) * d.cols());
    im2col(x.data(), d, cols->data());

    // y'[r, co] = cols[r, :] . w[co, :]
    std::vector<float> ymat(static_cast<std::size_t>(d.rows()) * d.co, 0.0f);
    gemm_bt_acc(cols->data(), w.data(), ymat.data(), static_cast<int>(d.rows()), d.cols(), d.co);

    // scatter to [N,Co,OH,OW]
    std::vector<float> out(static_cast<std::size_t>(d.n) * d.co * d.oh * d.ow);
    const std::int64_t ohw = static_cast<std::int64_t>(d.oh) * d.ow;
    for (std::int64_t r = 0; r < d.rows(); ++r) {
        const std::int64_t n = r / ohw, pix = r % ohw;
        for (int co = 0; co < d.co; ++co)
            out[(n * d.co + co) * ohw + pix] = ymat[r * d.co + co];
    }

    const bool x_needs = x.requires_grad();
    if (!x_needs && !w.requires_grad()) cols.reset();  // no-grad path frees the im2col buffer

    return finish_op("conv2d", {d.n, d.co, d.oh, d.ow}, std::move(out), {x, w},
                     [d, cols](const TensorImpl& o) {
                         const Tensor& tx = o.node->inputs[0];
                         const Tensor& tw = o.node->inputs[1];
                         const std::int64_t ohw = static_cast<std::int64_t>(d.oh) * d.ow;
                         // gather output grad into [R, Co]
                         std::vector<float> gmat(static_cast<std::size_t>(d.rows()) * d.co);
                         for (std::int64_t r = 0; r < d.rows(); ++r) {
                             const std::int64_t n = r / ohw, pix = r % ohw;
                             for (int co = 0; co < d.co; ++co)
                                 gmat[r * d.co + co] = o.grad[(n * d.co + co) * ohw + pix];
                         }
                         if (tw.requires_grad())  // dW[co,k] += g'[.,co]^T cols[.,k]
                             gemm_at_acc(gmat.data(), cols->data(), grad_buf(*tw.impl_).data(),
                                         d.co, static_cast<int>(d.rows()), d.cols());
                         if (tx.requires_grad()) {
                             std::vector<float> gcols(static_cast<std::size_t>(d.rows()) * d.cols(), 0.0f);
                             gemm_acc(gmat.data(), tw.data(), gcols.data(),
                                      static_cast<int>(d.rows()), d.co, d.cols());
                             col2im_acc(gcols.data(), d, grad_buf(*tx.impl_).data());
                         }
                     });
}

Tensor maxpool2(const Tensor& x) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || xs[2] < 2 || xs[3] < 2)
        throw ShapeError("maxpool2: need [N,C,H,W] with H,W >= 2, got " + shape_str(xs));
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const int oh = h / 2, ow = w / 2;
    std::vector<float> out(static_cast<std::size_t>(n) * c * oh * ow);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const float* px = x.data();
    std::size_t o = 0;
    for (int i = 0; i < n * c; ++i) {
        const float* plane = px + static_cast<std::int64_t>(i) * h * w;
        const std::int64_t base = static_cast<std::int64_t>(i) * h * w;
        for (int r = 0; r < oh; ++r) {
            for (int q = 0; q < ow; ++q, ++o) {
                std::int64_t best_idx = static_cast<std::int64_t>(2 * r) * w + 2 * q;
                float best = plane[best_idx];
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj) {
                        const std::int64_t idx = static_cast<std::int64_t>(2 * r + di) * w + 2 * q + dj;
                        if (plane[idx] > best) {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                out[o] = best;
                (*argmax)[o] = base + best_idx;
            }
        }
    }
    return finish_op("maxpool2", {n, c, oh, ow}, std::move(out), {x},
                     [argmax](const TensorImpl& o) {
                         const Tensor& tx = o.node->inputs[0];
                         if (!tx.requires_grad()) return;
                         auto& gx = grad_buf(*tx.impl_);
                         for (std::size_t i = 0; i < o.data.size(); ++i)
                             gx[static_cast<std::size_t>((*argmax)[i])] += o.grad[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_positive_shape(shape, "reshape");
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<float> out(x.vec());
    return finish_op("reshape", std::move(shape), std::move(out), {x}, [](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i];
    });
}

Tensor flatten2(const Tensor& x) {
    if (x.shape().size() < 2)
        throw ShapeError("flatten2: need rank >= 2, got " + shape_str(x.shape()));
    const int n = x.shape()[0];
    return reshape(x, {n, static_cast<int>(x.size() / n)});
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.vec()) acc += v;
    return finish_op("sum", {1}, {static_cast<float>(acc)}, {x}, [](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        const float g = o.grad[0];
        for (auto& v : gx) v += g;
    });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.vec()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    return finish_op("mean", {1}, {static_cast<float>(acc * inv)}, {x}, [inv](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        const float g = o.grad[0] * static_cast<float>(inv);
        for (auto& v : gx) v += g;
    });
}

Tensor l2_norm(const Tensor& x) {
    const double norm = l2_norm_value(x);
    return finish_op("l2_norm", {1}, {static_cast<float>(norm)}, {x}, [norm](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        const float* px = tx.data();
        const double denom = std::max(norm, 1e-12);
        const float g = o.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += g * static_cast<float>(px[i] / denom);
    });
}

namespace {

void softmax_row(const float* in, float* out, int c) {
    float mx = in[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(in[j] - mx));
    for (int j = 0; j < c; ++j)
        out[j] = static_cast<float>(std::exp(static_cast<double>(in[j] - mx)) / z);
}

}  // namespace

Tensor softmax(const Tensor& x) {
    const auto& s = x.shape();
    int n, c;
    if (s.size() == 1) {
        n = 1;
        c = s[0];
    } else if (s.size() == 2) {
        n = s[0];
        c = s[1];
    } else {
        throw ShapeError("softmax: need [C] or [N,C], got " + shape_str(s));
    }
    std::vector<float> out(x.vec().size());
    for (int i = 0; i < n; ++i) softmax_row(x.data() + static_cast<std::int64_t>(i) * c, out.data() + static_cast<std::int64_t>(i) * c, c);
    return finish_op("softmax", s, std::move(out), {x}, [n, c](const TensorImpl& o) {
        const Tensor& tx = o.node->inputs[0];
        if (!tx.requires_grad()) return;
        auto& gx = grad_buf(*tx.impl_);
        for (int i = 0; i < n; ++i) {
            const float* y = o.data.data() + static_cast<std::int64_t>(i) * c;
            const float* g = o.grad.data() + static_cast<std::int64_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += static_cast<double>(g[j]) * y[j];
            for (int j = 0; j < c; ++j)
                gx[static_cast<std::int64_t>(i) * c + j] += y[j] * (g[j] - static_cast<float>(dot));
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const auto& s = logits.shape();
    if (s.size() != 2)
        throw ShapeError("softmax_cross_entropy: need [N,C] logits, got " + shape_str(s));
    const int n = s[0], c = s[1];
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    for (int lab : labels)
        if (lab < 0 || lab >= c)
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                             std::to_string(c) + ")");
    // loss = mean_i ( logsumexp(row_i) - row_i[label_i] )
    double total = 0.0;
    const float* p = logits.data();
    for (int i = 0; i < n; ++i) {
        const float* rowp = p + static_cast<std::int64_t>(i) * c;
        float mx = rowp[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, rowp[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(rowp[j] - mx));
        total += std::log(z) + mx - rowp[labels[static_cast<std::size_t>(i)]];
    }
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    return finish_op("softmax_cross_entropy", {1}, {static_cast<float>(total / n)}, {logits},
                     [n, c, labels_copy](const TensorImpl& o) {
                         const Tensor& tl = o.node->inputs[0];
                         if (!tl.requires_grad()) return;
                         auto& gl = grad_buf(*tl.impl_);
                         const float g = o.grad[0] / static_cast<float>(n);
                         const float* p = tl.data();
                         std::vector<float> sm(static_cast<std::size_t>(c));
                         for (int i = 0; i < n; ++i) {
                             softmax_row(p + static_cast<std::int64_t>(i) * c, sm.data(), c);
                             for (int j = 0; j < c; ++j) {
                                 float d = sm[static_cast<std::size_t>(j)];
                                 if (j == (*labels_copy)[static_cast<std::size_t>(i)]) d -= 1.0f;
                                 gl[static_cast<std::int64_t>(i) * c + j] += g * d;
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// graph-free helpers
// ---------------------------------------------------------------------------

Tensor stack(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("stack: empty list");
    const Shape& s0 = xs[0].shape();
    Shape out_shape;
    out_shape.push_back(static_cast<int>(xs.size()));
    out_shape.insert(out_shape.end(), s0.begin(), s0.end());
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(numel(out_shape)));
    for (const auto& x : xs) {
        if (x.shape() != s0)
            throw ShapeError("stack: mixed shapes " + shape_str(s0) + " and " + shape_str(x.shape()));
        out.insert(out.end(), x.vec().begin(), x.vec().end());
    }
    return Tensor::from_data(std::move(out_shape), std::move(out));
}

Tensor row(const Tensor& x, int i) {
    const auto& s = x.shape();
    if (s.size() < 2 || i < 0 || i >= s[0])
        throw ShapeError("row: index " + std::to_string(i) + " invalid for " + shape_str(s));
    Shape rs(s.begin() + 1, s.end());
    const std::int64_t stride = numel(rs);
    std::vector<float> out(x.vec().begin() + i * stride, x.vec().begin() + (i + 1) * stride);
    return Tensor::from_data(std::move(rs), std::move(out));
}

std::vector<int> argmax_rows(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 2) throw ShapeError("argmax_rows: need [N,C], got " + shape_str(s));
    const int n = s[0], c = s[1];
    std::vector<int> out(static_cast<std::size_t>(n));
    const float* p = x.data();
    for (int i = 0; i < n; ++i) {
        const float* rowp = p + static_cast<std::int64_t>(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (rowp[j] > rowp[best]) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

double l2_norm_value(const float* p, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]) * p[i];
    return std::sqrt(acc);
}

double l2_norm_value(const Tensor& x) { return l2_norm_value(x.data(), x.size()); }

}  // namespace cepa
