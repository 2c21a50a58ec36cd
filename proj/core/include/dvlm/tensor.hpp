#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dvlm {

// Dense row-major tensor of 64-bit floats participating in a reverse-mode
// autodiff graph. Tensors are immutable once they have entered a graph; only
// grad buffers mutate. The graph is a DAG of shared nodes ordered by creation
// id; backward() walks it in reverse creation order.
//
// Scalars are rank-0 tensors (shape {}, numel 1).

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

struct TensorNode;

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    size_t rank() const { return shape().size(); }
    size_t numel() const;
    size_t rows() const;  // rank-2 only
    size_t cols() const;  // rank-2 only

    const std::vector<double>& data() const;
    // Leaf initialization only; mutating a tensor that is already an input of
    // another node invalidates recorded backward closures.
    std::vector<double>& mutable_data();

    bool requires_grad() const;
    void set_requires_grad(bool rg);  // leaf tensors only
    bool has_grad() const;
    const std::vector<double>& grad() const;  // throws ContractError if absent
    void zero_grad();
    void accumulate_grad(const std::vector<double>& g);

    uint64_t node_id() const;

    double item() const;                       // scalar tensors only
    double at2(size_t r, size_t c) const;      // rank-2 convenience
    double at1(size_t i) const;                // rank-1 convenience

    bool same_storage(const Tensor& other) const { return n_ == other.n_; }

    // Internal: used by op implementations.
    TensorNode* node() const { return n_.get(); }
    static Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward_fn);

private:
    std::shared_ptr<TensorNode> n_;
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}
};

struct TensorNode {
    uint64_t id = 0;
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
    std::vector<Tensor> parents;
    std::function<void(TensorNode&)> backward_fn;

    size_t numel() const { return data.size(); }
    void ensure_grad();
    void add_grad(const double* g, size_t n);
};

// ---- elementwise / structural ops -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor sub(const Tensor& a, const Tensor& b);              // same shape
Tensor mul(const Tensor& a, const Tensor& b);              // same shape, elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& m, const Tensor& v);       // [T x D] + [D]
Tensor transpose(const Tensor& a);                         // rank-2
Tensor reshape(const Tensor& a, Shape shape);              // same numel
Tensor concat_rows(const std::vector<Tensor>& parts);      // rank-2, same cols
Tensor concat_cols(const std::vector<Tensor>& parts);      // rank-2, same rows
Tensor slice_rows(const Tensor& a, size_t r0, size_t r1);  // [r0, r1)
Tensor slice_cols(const Tensor& a, size_t c0, size_t c1);  // [c0, c1)
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor sum(const Tensor& a);       // scalar
Tensor mean_all(const Tensor& a);  // scalar
Tensor mean_of(const std::vector<Tensor>& scalars);

// ---- numeric kernels ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] . [k x n]
Tensor softmax(const Tensor& x, size_t axis);
// Row-wise softmax over the positions where allowed[r * cols + c] != 0. Masked
// entries come out exactly 0 and never enter the max/sum, so allowed prefixes
// are bitwise independent of masked suffix values.
Tensor masked_softmax_rows(const Tensor& scores, const std::vector<uint8_t>& allowed);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index);

// Reverse-topological gradient accumulation from a scalar loss. Calling twice
// without zero_grad accumulates into existing buffers. Tensors with
// requires_grad=false (frozen parameters included) never receive a grad buffer.
void backward(const Tensor& loss);

// While alive, new ops are recorded without graph edges (pure inference).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace dvlm
