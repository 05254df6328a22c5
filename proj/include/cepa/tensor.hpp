#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cepa {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tensor;

/// One recorded primitive op: keeps its inputs alive and knows how to push
/// the output gradient back into them.
struct GraphNode {
    const char* op = "";
    std::vector<Tensor> inputs;
    std::function<void(const struct TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation
    std::shared_ptr<GraphNode> node;
};

/// Dense n-d float tensor with shared storage (copies alias the same buffer;
/// use clone() for a deep copy). Ops defined below record a define-by-run
/// graph whenever an input requires grad.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value);
    static Tensor scalar(float value);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    /// Value of a single-element tensor.
    float item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    /// Gradient buffer; zeros if backward never reached this tensor.
    std::vector<float> grad() const;
    void zero_grad();

    Tensor clone() const;
    Tensor detach() const;  // shares data, drops graph + requires_grad

    bool all_finite() const;

    std::shared_ptr<TensorImpl> impl_;

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
};

/// Reverse-mode sweep from a scalar loss. Fills grad buffers of every
/// requires_grad tensor reachable through the recorded graph.
void backward(const Tensor& loss);

// ---- primitive ops ----

// Same-shape add, or bias broadcast: [N,D]+[D] and [N,C,H,W]+[C].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise, same shape
Tensor scalar_mul(const Tensor& a, float s);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);           // [M,K]x[K,N]
Tensor conv2d(const Tensor& x, const Tensor& w, int pad = 0);  // [N,Ci,H,W], [Co,Ci,kh,kw], stride 1
Tensor maxpool2(const Tensor& x);                          // 2x2, stride 2, first-index tie-break
Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten2(const Tensor& x);                          // [N,...] -> [N,rest]
Tensor clip(const Tensor& x, float lo, float hi);
Tensor sum(const Tensor& x);                               // -> scalar
Tensor mean(const Tensor& x);                              // -> scalar
Tensor l2_norm(const Tensor& x);                           // -> scalar
Tensor softmax(const Tensor& x);                           // rows of [N,C], or a single [C]
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);  // mean over rows

// ---- graph-free helpers ----

Tensor stack(const std::vector<Tensor>& xs);               // k tensors of shape S -> [k,S...]
Tensor row(const Tensor& x, int i);                        // [N,...] -> [...] (copy)
std::vector<int> argmax_rows(const Tensor& x);             // [N,C] -> per-row argmax, lowest index wins
double l2_norm_value(const float* p, std::int64_t n);
double l2_norm_value(const Tensor& x);

}  // namespace cepa
