#include "dvlm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "dvlm/errors.hpp"

namespace dvlm {

namespace {

std::atomic<uint64_t> g_next_node_id{1};
thread_local int g_no_grad_depth = 0;

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " + shape_str(t.shape()));
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

void TensorNode::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void TensorNode::add_grad(const double* g, size_t n) {
    if (!requires_grad) return;
    ensure_grad();
    for (size_t i = 0; i < n; ++i) grad[i] += g[i];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " + std::to_string(data.size()));
    }
    auto n = std::make_shared<TensorNode>();
    n->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                       std::function<void(TensorNode&)> backward_fn) {
    Tensor t = from_data(std::move(shape), std::move(data), false);
    bool rg = false;
    if (g_no_grad_depth == 0) {
        for (const auto& p : parents) rg = rg || p.requires_grad();
    }
    t.n_->requires_grad = rg;
    if (rg) {
        t.n_->parents = std::move(parents);
        t.n_->backward_fn = std::move(backward_fn);
    }
    return t;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

const Shape& Tensor::shape() const { return n_->shape; }
size_t Tensor::numel() const { return n_->data.size(); }

size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not rank-2, shape " + shape_str(shape()));
    return shape()[0];
}

size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not rank-2, shape " + shape_str(shape()));
    return shape()[1];
}

const std::vector<double>& Tensor::data() const { return n_->data; }
std::vector<double>& Tensor::mutable_data() { return n_->data; }

bool Tensor::requires_grad() const { return n_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    if (n_->backward_fn) {
        throw ContractError("set_requires_grad: only leaf tensors can be toggled");
    }
    n_->requires_grad = rg;
    if (!rg) n_->grad.clear();
}

bool Tensor::has_grad() const { return !n_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (n_->grad.empty()) {
        throw ContractError("grad(): no gradient buffer present (requires_grad=" +
                            std::string(n_->requires_grad ? "true" : "false") + ")");
    }
    return n_->grad;
}

void Tensor::zero_grad() { n_->grad.clear(); }

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != n_->data.size()) {
        throw ShapeError("accumulate_grad: size mismatch");
    }
    n_->add_grad(g.data(), g.size());
}

uint64_t Tensor::node_id() const { return n_->id; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return n_->data[0];
}

double Tensor::at2(size_t r, size_t c) const {
    check_rank2(*this, "at2");
    return n_->data[r * cols() + c];
}

double Tensor::at1(size_t i) const {
    if (rank() != 1) throw ShapeError("at1: tensor is not rank-1");
    return n_->data[i];
}

// ---- elementwise / structural ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto& da = a.data();
    const auto& db = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        self.parents[0].node()->add_grad(self.grad.data(), self.grad.size());
        self.parents[1].node()->add_grad(self.grad.data(), self.grad.size());
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto& da = a.data();
    const auto& db = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        self.parents[0].node()->add_grad(self.grad.data(), self.grad.size());
        if (self.parents[1].requires_grad()) {
            std::vector<double> neg(self.grad.size());
            for (size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
            self.parents[1].node()->add_grad(neg.data(), neg.size());
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto& da = a.data();
    const auto& db = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        const auto& da = self.parents[0].data();
        const auto& db = self.parents[1].data();
        if (self.parents[0].requires_grad()) {
            std::vector<double> g(self.grad.size());
            for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * db[i];
            self.parents[0].node()->add_grad(g.data(), g.size());
        }
        if (self.parents[1].requires_grad()) {
            std::vector<double> g(self.grad.size());
            for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * da[i];
            self.parents[1].node()->add_grad(g.data(), g.size());
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& da = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * s;
    return Tensor::make_op(a.shape(), std::move(out), {a}, [s](TensorNode& self) {
        std::vector<double> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * s;
        self.parents[0].node()->add_grad(g.data(), g.size());
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& da = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + s;
    return Tensor::make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
        self.parents[0].node()->add_grad(self.grad.data(), self.grad.size());
    });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    check_rank2(m, "add_rowvec");
    if (v.rank() != 1 || v.shape()[0] != m.cols()) {
        throw ShapeError("add_rowvec: vector shape " + shape_str(v.shape()) + " does not match matrix " +
                         shape_str(m.shape()));
    }
    size_t rows = m.rows(), cols = m.cols();
    std::vector<double> out(m.numel());
    const auto& dm = m.data();
    const auto& dv = v.data();
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out[r * cols + c] = dm[r * cols + c] + dv[c];
    return Tensor::make_op(m.shape(), std::move(out), {m, v}, [rows, cols](TensorNode& self) {
        self.parents[0].node()->add_grad(self.grad.data(), self.grad.size());
        if (self.parents[1].requires_grad()) {
            std::vector<double> gv(cols, 0.0);
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) gv[c] += self.grad[r * cols + c];
            self.parents[1].node()->add_grad(gv.data(), gv.size());
        }
    });
}

Tensor transpose(const Tensor& a) {
    check_rank2(a, "transpose");
    size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(a.numel());
    const auto& da = a.data();
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out[c * rows + r] = da[r * cols + c];
    return Tensor::make_op({cols, rows}, std::move(out), {a}, [rows, cols](TensorNode& self) {
        std::vector<double> g(self.grad.size());
        for (size_t c = 0; c < cols; ++c)
            for (size_t r = 0; r < rows; ++r) g[r * cols + c] = self.grad[c * rows + r];
        self.parents[0].node()->add_grad(g.data(), g.size());
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    return Tensor::make_op(std::move(shape), a.data(), {a}, [](TensorNode& self) {
        self.parents[0].node()->add_grad(self.grad.data(), self.grad.size());
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    size_t cols = 0;
    for (const auto& p : parts) {
        check_rank2(p, "concat_rows");
        if (cols == 0) cols = p.cols();
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: column mismatch " + std::to_string(p.cols()) + " vs " +
                             std::to_string(cols));
        }
    }
    size_t total_rows = 0;
    for (const auto& p : parts) total_rows += p.rows();
    std::vector<double> out;
    out.reserve(total_rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return Tensor::make_op({total_rows, cols}, std::move(out), parts, [](TensorNode& self) {
        size_t offset = 0;
        for (auto& p : self.parents) {
            size_t n = p.numel();
            if (p.requires_grad()) p.node()->add_grad(self.grad.data() + offset, n);
            offset += n;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    size_t rows = 0;
    size_t total_cols = 0;
    for (const auto& p : parts) {
        check_rank2(p, "concat_cols");
        if (rows == 0) rows = p.rows();
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: row mismatch " + std::to_string(p.rows()) + " vs " +
                             std::to_string(rows));
        }
        total_cols += p.cols();
    }
    std::vector<double> out(rows * total_cols);
    size_t col_off = 0;
    for (const auto& p : parts) {
        size_t w = p.cols();
        const auto& dp = p.data();
        for (size_t r = 0; r < rows; ++r)
            std::copy(dp.begin() + r * w, dp.begin() + (r + 1) * w,
                      out.begin() + r * total_cols + col_off);
        col_off += w;
    }
    return Tensor::make_op({rows, total_cols}, std::move(out), parts,
                           [rows, total_cols](TensorNode& self) {
                               size_t col_off = 0;
                               for (auto& p : self.parents) {
                                   size_t w = p.numel() / rows;
                                   if (p.requires_grad()) {
                                       auto* n = p.node();
                                       n->ensure_grad();
                                       for (size_t r = 0; r < rows; ++r)
                                           for (size_t c = 0; c < w; ++c)
                                               n->grad[r * w + c] += self.grad[r * total_cols + col_off + c];
                                   }
                                   col_off += w;
                               }
                           });
}

Tensor slice_rows(const Tensor& a, size_t r0, size_t r1) {
    check_rank2(a, "slice_rows");
    if (r0 > r1 || r1 > a.rows()) {
        throw IndexError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                         ") out of bounds for " + std::to_string(a.rows()) + " rows");
    }
    size_t cols = a.cols();
    std::vector<double> out(a.data().begin() + r0 * cols, a.data().begin() + r1 * cols);
    return Tensor::make_op({r1 - r0, cols}, std::move(out), {a}, [r0, cols](TensorNode& self) {
        auto* p = self.parents[0].node();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[r0 * cols + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, size_t c0, size_t c1) {
    check_rank2(a, "slice_cols");
    if (c0 > c1 || c1 > a.cols()) {
        throw IndexError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") out of bounds for " + std::to_string(a.cols()) + " cols");
    }
    size_t rows = a.rows(), cols = a.cols(), w = c1 - c0;
    std::vector<double> out(rows * w);
    const auto& da = a.data();
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < w; ++c) out[r * w + c] = da[r * cols + c0 + c];
    return Tensor::make_op({rows, w}, std::move(out), {a}, [rows, cols, c0, w](TensorNode& self) {
        auto* p = self.parents[0].node();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < w; ++c) p->grad[r * cols + c0 + c] += self.grad[r * w + c];
    });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    check_rank2(table, "embedding_rows");
    size_t rows = table.rows(), cols = table.cols();
    std::vector<double> out(ids.size() * cols);
    const auto& dt = table.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || static_cast<size_t>(id) >= rows) {
            throw IndexError("embedding_rows: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(rows) + ")");
        }
        std::copy(dt.begin() + id * cols, dt.begin() + (id + 1) * cols, out.begin() + i * cols);
    }
    return Tensor::make_op({ids.size(), cols}, std::move(out), {table}, [ids, cols](TensorNode& self) {
        auto* p = self.parents[0].node();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (size_t c = 0; c < cols; ++c)
                p->grad[static_cast<size_t>(ids[i]) * cols + c] += self.grad[i * cols + c];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::make_op(Shape{}, {s}, {a}, [](TensorNode& self) {
        auto* p = self.parents[0].node();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (auto& g : p->grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
    if (scalars.empty()) throw ShapeError("mean_of: empty input");
    std::vector<double> packed(scalars.size());
    for (size_t i = 0; i < scalars.size(); ++i) packed[i] = scalars[i].item();
    Tensor stacked = Tensor::make_op({scalars.size()}, std::move(packed), scalars, [](TensorNode& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            self.parents[i].node()->add_grad(&self.grad[i], 1);
        }
    });
    return mean_all(stacked);
}

// ---- numeric kernels --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    {
        ConstMatMap ma(a.data().data(), m, k);
        ConstMatMap mb(b.data().data(), k, n);
        MatMap mo(out.data(), m, n);
        mo.noalias() = ma * mb;
    }
    return Tensor::make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        ConstMatMap gc(self.grad.data(), m, n);
        const auto& a = self.parents[0];
        const auto& b = self.parents[1];
        ConstMatMap ma(a.data().data(), m, k);
        ConstMatMap mb(b.data().data(), k, n);
        if (a.requires_grad()) {
            std::vector<double> ga(m * k);
            MatMap g(ga.data(), m, k);
            g.noalias() = gc * mb.transpose();
            a.node()->add_grad(ga.data(), ga.size());
        }
        if (b.requires_grad()) {
            std::vector<double> gb(k * n);
            MatMap g(gb.data(), k, n);
            g.noalias() = ma.transpose() * gc;
            b.node()->add_grad(gb.data(), gb.size());
        }
    });
}

namespace {

// Shared softmax core: applies softmax along `axis` treating the tensor as
// [outer, axis_len, inner] strides.
struct AxisView {
    size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, size_t axis) {
    AxisView v;
    v.len = s[axis];
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

}  // namespace

Tensor softmax(const Tensor& x, size_t axis) {
    if (axis >= x.rank()) {
        throw IndexError("softmax: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(x.rank()));
    }
    AxisView v = axis_view(x.shape(), axis);
    std::vector<double> out(x.numel());
    const auto& dx = x.data();
    for (size_t o = 0; o < v.outer; ++o) {
        for (size_t i = 0; i < v.inner; ++i) {
            size_t base = o * v.len * v.inner + i;
            double mx = dx[base];
            for (size_t j = 1; j < v.len; ++j) mx = std::max(mx, dx[base + j * v.inner]);
            double sum = 0.0;
            for (size_t j = 0; j < v.len; ++j) {
                double e = std::exp(dx[base + j * v.inner] - mx);
                out[base + j * v.inner] = e;
                sum += e;
            }
            for (size_t j = 0; j < v.len; ++j) out[base + j * v.inner] /= sum;
        }
    }
    return Tensor::make_op(x.shape(), std::move(out), {x}, [v](TensorNode& self) {
        auto* p = self.parents[0].node();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t o = 0; o < v.outer; ++o) {
            for (size_t i = 0; i < v.inner; ++i) {
                size_t base = o * v.len * v.inner + i;
                double dot = 0.0;
                for (size_t j = 0; j < v.len; ++j) {
                    size_t idx = base + j * v.inner;
                    dot += self.grad[idx] * self.data[idx];
                }
                for (size_t j = 0; j < v.len; ++j) {
                    size_t idx = base + j * v.inner;
                    p->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor masked_softmax_rows(const Tensor& scores, const std::vector<uint8_t>& allowed) {
    check_rank2(scores, "masked_softmax_rows");
    if (allowed.size() != scores.numel()) {
        throw ShapeError("masked_softmax_rows: mask size " + std::to_string(allowed.size()) +
                         " does not match " + shape_str(scores.shape()));
    }
    size_t rows = scores.rows(), cols = scores.cols();
    std::vector<double> out(scores.numel(), 0.0);
    const auto& ds = scores.data();
    for (size_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (size_t c = 0; c < cols; ++c) {
            if (!allowed[r * cols + c]) continue;
            mx = any ? std::max(mx, ds[r * cols + c]) : ds[r * cols + c];
            any = true;
        }
        if (!any) {
            throw ContractError("masked_softmax_rows: row " + std::to_string(r) + " has no allowed entries");
        }
        double sum = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            if (!allowed[r * cols + c]) continue;
            double e = std::exp(ds[r * cols + c] - mx);
            out[r * cols + c] = e;
            sum += e;
        }
        for (size_t c = 0; c < cols; ++c) {
            if (allowed[r * cols + c]) out[r * cols + c] /= sum;
        }
    }
    return Tensor::make_op(scores.shape(), std::move(out), {scores},
                           [rows, cols, allowed](TensorNode& self) {
                               auto* p = self.parents[0].node();
                               if (!p->requires_grad) return;
                               p->ensure_grad();
                               for (size_t r = 0; r < rows; ++r) {
                                   double dot = 0.0;
                                   for (size_t c = 0; c < cols; ++c) {
                                       size_t idx = r * cols + c;
                                       if (allowed[idx]) dot += self.grad[idx] * self.data[idx];
                                   }
                                   for (size_t c = 0; c < cols; ++c) {
                                       size_t idx = r * cols + c;
                                       if (allowed[idx]) {
                                           p->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                                       }
                                   }
                               }
                           });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    size_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.shape()[0] != d || beta.rank() != 1 || beta.shape()[0] != d) {
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match last dim " + std::to_string(d));
    }
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    size_t slices = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(slices);
    const auto& dx = x.data();
    const auto& dg = gamma.data();
    const auto& db = beta.data();
    for (size_t s = 0; s < slices; ++s) {
        const double* row = dx.data() + s * d;
        double mean = 0.0;
        for (size_t i = 0; i < d; ++i) mean += row[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t i = 0; i < d; ++i) {
            double c = row[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double istd = 1.0 / std::sqrt(var + eps);
        inv_std[s] = istd;
        for (size_t i = 0; i < d; ++i) {
            double h = (row[i] - mean) * istd;
            xhat[s * d + i] = h;
            out[s * d + i] = h * dg[i] + db[i];
        }
    }
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [d, slices, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
            const auto& x = self.parents[0];
            const auto& gamma = self.parents[1];
            const auto& beta = self.parents[2];
            const auto& dg = gamma.data();
            if (gamma.requires_grad()) {
                std::vector<double> gg(d, 0.0);
                for (size_t s = 0; s < slices; ++s)
                    for (size_t i = 0; i < d; ++i) gg[i] += self.grad[s * d + i] * xhat[s * d + i];
                gamma.node()->add_grad(gg.data(), d);
            }
            if (beta.requires_grad()) {
                std::vector<double> gb(d, 0.0);
                for (size_t s = 0; s < slices; ++s)
                    for (size_t i = 0; i < d; ++i) gb[i] += self.grad[s * d + i];
                beta.node()->add_grad(gb.data(), d);
            }
            if (x.requires_grad()) {
                std::vector<double> gx(self.grad.size());
                for (size_t s = 0; s < slices; ++s) {
                    double mean_gy = 0.0, mean_gy_xhat = 0.0;
                    for (size_t i = 0; i < d; ++i) {
                        double gy = self.grad[s * d + i] * dg[i];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xhat[s * d + i];
                    }
                    mean_gy /= static_cast<double>(d);
                    mean_gy_xhat /= static_cast<double>(d);
                    for (size_t i = 0; i < d; ++i) {
                        double gy = self.grad[s * d + i] * dg[i];
                        gx[s * d + i] = (gy - mean_gy - xhat[s * d + i] * mean_gy_xhat) * inv_std[s];
                    }
                }
                x.node()->add_grad(gx.data(), gx.size());
            }
        });
}

namespace {

constexpr double kGeluC = 0.044715;

double gelu_scalar(double x) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(k * (x + kGeluC * x * x * x)));
}

double gelu_grad_scalar(double x) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    double u = k * (x + kGeluC * x * x * x);
    double t = std::tanh(u);
    double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * k * (1.0 + 3.0 * kGeluC * x * x);
}

}  // namespace

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& dx = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(dx[i]);
    return Tensor::make_op(x.shape(), std::move(out), {x}, [](TensorNode& self) {
        auto* p = self.parents[0].node();
        if (!p->requires_grad) return;
        p->ensure_grad();
        const auto& dx = self.parents[0].data();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * gelu_grad_scalar(dx[i]);
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
    check_rank2(logits, "cross_entropy");
    size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t) + " rows");
    }
    size_t kept = 0;
    for (int id : targets) {
        if (id == ignore_index) continue;
        if (id < 0 || static_cast<size_t>(id) >= v) {
            throw IndexError("cross_entropy: target " + std::to_string(id) + " out of range [0, " +
                             std::to_string(v) + ")");
        }
        ++kept;
    }
    if (kept == 0) {
        throw ContractError("cross_entropy: all positions ignored (degenerate batch)");
    }
    const auto& dl = logits.data();
    double total = 0.0;
    for (size_t r = 0; r < t; ++r) {
        if (targets[r] == ignore_index) continue;
        const double* row = dl.data() + r * v;
        double mx = row[0];
        for (size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (size_t c = 0; c < v; ++c) sum += std::exp(row[c] - mx);
        double lse = mx + std::log(sum);
        total += lse - row[targets[r]];
    }
    double loss = total / static_cast<double>(kept);
    return Tensor::make_op(Shape{}, {loss}, {logits},
                           [t, v, targets, ignore_index, kept](TensorNode& self) {
                               auto* p = self.parents[0].node();
                               if (!p->requires_grad) return;
                               p->ensure_grad();
                               const auto& dl = self.parents[0].data();
                               double g0 = self.grad[0] / static_cast<double>(kept);
                               for (size_t r = 0; r < t; ++r) {
                                   if (targets[r] == ignore_index) continue;
                                   const double* row = dl.data() + r * v;
                                   double mx = row[0];
                                   for (size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
                                   double sum = 0.0;
                                   for (size_t c = 0; c < v; ++c) sum += std::exp(row[c] - mx);
                                   for (size_t c = 0; c < v; ++c) {
                                       double soft = std::exp(row[c] - mx) / sum;
                                       double delta = (static_cast<size_t>(targets[r]) == c) ? 1.0 : 0.0;
                                       p->grad[r * v + c] += g0 * (soft - delta);
                                   }
                               }
                           });
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Collect the reachable requires_grad subgraph, then run node closures in
    // reverse creation order (a valid reverse-topological order: every op's id
    // exceeds its parents' ids).
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<Tensor> stack{loss};
    while (!stack.empty()) {
        Tensor t = stack.back();
        stack.pop_back();
        TensorNode* n = t.node();
        if (!n->requires_grad || seen.count(n)) continue;
        seen.insert(n);
        order.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p);
    }
    std::sort(order.begin(), order.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (TensorNode* n : order) {
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
            // Interior grads are scratch space for this pass. Dropping them keeps
            // repeated backward calls accumulating correctly at the leaves.
            n->grad.clear();
        }
    }
}

}  // namespace dvlm
