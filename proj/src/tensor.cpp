// SPDX-License-Identifier: Apache-2.0

#include "sscan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace sscan {

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::int64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

namespace {

thread_local std::int64_t g_next_id = 0;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

}  // namespace detail

using detail::Node;

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor handle ------------------------------------------------------

class OpBuilder {
public:
    static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }

    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    static Tensor leaf(std::vector<std::size_t> shape, std::vector<double> value, bool requires_grad) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->is_leaf = true;
        n->id = detail::g_next_id++;
        return wrap(std::move(n));
    }

    // Result of an op. Records parents and the backward closure only when
    // some parent participates in the tape.
    static Tensor result(std::vector<std::size_t> shape, std::vector<double> value,
                         std::vector<std::shared_ptr<Node>> parents,
                         const std::function<std::function<void(Node&)>()>& make_backprop) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        n->is_leaf = false;
        n->id = detail::g_next_id++;
        bool needs = false;
        for (const auto& p : parents) needs = needs || (p && p->requires_grad);
        n->requires_grad = needs;
        if (needs) {
            n->parents = std::move(parents);
            n->backprop = make_backprop();
        }
        return wrap(std::move(n));
    }
};

namespace {

const std::shared_ptr<Node>& node_of(const Tensor& t) {
    if (!t.defined()) throw ValueError("tensor: operation on an undefined tensor");
    return OpBuilder::node(t);
}

void check_shapes_equal(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Tensor Tensor::zeros(const std::vector<std::size_t>& shape, bool requires_grad) {
    return OpBuilder::leaf(shape, std::vector<double>(detail::shape_product(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const std::vector<std::size_t>& shape, double value, bool requires_grad) {
    return OpBuilder::leaf(shape, std::vector<double>(detail::shape_product(shape), value), requires_grad);
}

Tensor Tensor::from_data(const std::vector<std::size_t>& shape, std::vector<double> data,
                         bool requires_grad) {
    if (detail::shape_product(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                         std::to_string(detail::shape_product(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("from_data: zero dimension in shape " + shape_str(shape));
    }
    return OpBuilder::leaf(shape, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<std::size_t>& Tensor::shape() const { return node_of(*this)->shape; }

std::size_t Tensor::size() const { return node_of(*this)->value.size(); }

const std::vector<double>& Tensor::values() const { return node_of(*this)->value; }

std::vector<double>& Tensor::raw() { return node_of(*this)->value; }

double Tensor::scalar_value() const {
    const auto& n = node_of(*this);
    if (n->value.size() != 1) {
        throw ValueError("scalar_value: tensor has shape " + shape_str(n->shape));
    }
    return n->value[0];
}

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }

void Tensor::set_requires_grad(bool requires_grad) { node_of(*this)->requires_grad = requires_grad; }

bool Tensor::has_grad() const {
    const auto& n = node_of(*this);
    return n->grad.size() == n->value.size();
}

const std::vector<double>& Tensor::grad() const {
    const auto& n = node_of(*this);
    if (n->grad.size() != n->value.size()) {
        throw ValueError("grad: not populated; call backward() first");
    }
    return n->grad;
}

void Tensor::zero_grad() {
    auto& n = node_of(*this);
    n->grad.assign(n->value.size(), 0.0);
}

// ---- backward -----------------------------------------------------------

void backward(const Tensor& loss) {
    const auto& root = node_of(loss);
    if (root->value.size() != 1) {
        throw ValueError("backward: loss must be a scalar tensor, got shape " + shape_str(root->shape));
    }

    // Collect everything reachable through parent edges.
    std::vector<std::shared_ptr<Node>> reached;
    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        for (const auto& p : n->parents) {
            if (p && seen.insert(p.get()).second) stack.push_back(p);
        }
        reached.push_back(std::move(n));
    }

    // Creation order is a topological order: parents precede children.
    std::sort(reached.begin(), reached.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });

    for (const auto& n : reached) {
        if (n->requires_grad) n->grad.assign(n->value.size(), 0.0);
    }
    if (root->requires_grad) {
        root->grad[0] = 1.0;
        for (const auto& n : reached) {
            if (n->backprop && n->requires_grad) n->backprop(*n);
        }
    }

    // Release the tape.
    for (const auto& n : reached) {
        n->parents.clear();
        n->backprop = nullptr;
    }
}

// ---- elementwise ops ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_shapes_equal(a, b, "add");
    auto pa = node_of(a), pb = node_of(b);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pb->value[i];
    return OpBuilder::result(pa->shape, std::move(out), {pa, pb}, [&] {
        return [pa, pb](Node& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        };
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_shapes_equal(a, b, "sub");
    auto pa = node_of(a), pb = node_of(b);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] - pb->value[i];
    return OpBuilder::result(pa->shape, std::move(out), {pa, pb}, [&] {
        return [pa, pb](Node& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        };
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_shapes_equal(a, b, "mul");
    auto pa = node_of(a), pb = node_of(b);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * pb->value[i];
    return OpBuilder::result(pa->shape, std::move(out), {pa, pb}, [&] {
        return [pa, pb](Node& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->value[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->value[i];
        };
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    auto pa = node_of(a);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + s;
    return OpBuilder::result(pa->shape, std::move(out), {pa}, [&] {
        return [pa](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        };
    });
}

Tensor mul_scalar(const Tensor& a, double s) {
    auto pa = node_of(a);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * s;
    return OpBuilder::result(pa->shape, std::move(out), {pa}, [&] {
        return [pa, s](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += s * self.grad[i];
        };
    });
}

Tensor abs(const Tensor& a) {
    auto pa = node_of(a);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(pa->value[i]);
    return OpBuilder::result(pa->shape, std::move(out), {pa}, [&] {
        return [pa](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                double x = pa->value[i];
                double sign = (x > 0.0) - (x < 0.0);
                pa->grad[i] += self.grad[i] * sign;
            }
        };
    });
}

// ---- structural ops -------------------------------------------------------

Tensor reshape(const Tensor& a, const std::vector<std::size_t>& shape) {
    auto pa = node_of(a);
    if (detail::shape_product(shape) != pa->value.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(pa->shape) + " as " + shape_str(shape));
    }
    std::vector<double> out = pa->value;
    return OpBuilder::result(shape, std::move(out), {pa}, [&] {
        return [pa](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        };
    });
}

namespace {

std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<std::size_t>& dims) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (dims.size() != shape.size()) {
        throw ShapeError("permute: axis list size " + std::to_string(dims.size()) +
                         " does not match rank of " + shape_str(shape));
    }
    std::vector<bool> used(dims.size(), false);
    for (std::size_t d : dims) {
        if (d >= dims.size() || used[d]) throw ValueError("permute: invalid axis permutation");
        used[d] = true;
    }

    std::vector<std::size_t> out_shape(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) out_shape[i] = shape[dims[i]];

    const auto in_strides = row_major_strides(shape);
    const std::size_t n = pa->value.size();

    // src[i] = input flat index feeding output flat index i
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> counter(dims.size(), 0);
    std::size_t in_idx_stride_sum = 0;
    std::vector<std::size_t> out_axis_in_stride(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) out_axis_in_stride[i] = in_strides[dims[i]];
    for (std::size_t i = 0; i < n; ++i) {
        src[i] = in_idx_stride_sum;
        for (std::size_t ax = dims.size(); ax-- > 0;) {
            ++counter[ax];
            in_idx_stride_sum += out_axis_in_stride[ax];
            if (counter[ax] < out_shape[ax]) break;
            in_idx_stride_sum -= counter[ax] * out_axis_in_stride[ax];
            counter[ax] = 0;
        }
    }

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = pa->value[src[i]];

    return OpBuilder::result(std::move(out_shape), std::move(out), {pa}, [&] {
        return [pa, src = std::move(src)](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[src[i]] += self.grad[i];
        };
    });
}

Tensor transpose_last2(const Tensor& a) {
    const auto r = a.rank();
    if (r < 2) throw ShapeError("transpose_last2: rank must be >= 2, got " + shape_str(a.shape()));
    std::vector<std::size_t> dims(r);
    std::iota(dims.begin(), dims.end(), 0);
    std::swap(dims[r - 2], dims[r - 1]);
    return permute(a, dims);
}

// ---- broadcasting adds ------------------------------------------------------

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    auto pa = node_of(a), pv = node_of(v);
    if (pv->shape.size() != 1 || pa->shape.empty() || pa->shape.back() != pv->shape[0]) {
        throw ShapeError("add_rowvec: " + shape_str(pa->shape) + " + " + shape_str(pv->shape));
    }
    const std::size_t c = pv->shape[0];
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pv->value[i % c];
    return OpBuilder::result(pa->shape, std::move(out), {pa, pv}, [&] {
        return [pa, pv, c](Node& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            if (pv->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pv->grad[i % c] += self.grad[i];
        };
    });
}

Tensor add_broadcast_axis0(const Tensor& a, const Tensor& b) {
    auto pa = node_of(a), pb = node_of(b);
    if (pa->shape.size() != pb->shape.size() + 1 ||
        !std::equal(pb->shape.begin(), pb->shape.end(), pa->shape.begin() + 1)) {
        throw ShapeError("add_broadcast_axis0: " + shape_str(pa->shape) + " + " + shape_str(pb->shape));
    }
    const std::size_t rest = pb->value.size();
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pb->value[i % rest];
    return OpBuilder::result(pa->shape, std::move(out), {pa, pb}, [&] {
        return [pa, pb, rest](Node& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i % rest] += self.grad[i];
        };
    });
}

Tensor add_broadcast_axis1(const Tensor& a, const Tensor& b) {
    auto pa = node_of(a), pb = node_of(b);
    bool ok = pa->shape.size() >= 2 && pb->shape.size() + 1 == pa->shape.size() &&
              pb->shape[0] == pa->shape[0] &&
              std::equal(pb->shape.begin() + 1, pb->shape.end(), pa->shape.begin() + 2);
    if (!ok) {
        throw ShapeError("add_broadcast_axis1: " + shape_str(pa->shape) + " + " + shape_str(pb->shape));
    }
    const std::size_t a0 = pa->shape[0];
    const std::size_t a1 = pa->shape[1];
    const std::size_t rest = pb->value.size() / a0;
    std::vector<double> out(pa->value.size());
    for (std::size_t i0 = 0; i0 < a0; ++i0)
        for (std::size_t i1 = 0; i1 < a1; ++i1)
            for (std::size_t r = 0; r < rest; ++r) {
                std::size_t ia = (i0 * a1 + i1) * rest + r;
                out[ia] = pa->value[ia] + pb->value[i0 * rest + r];
            }
    return OpBuilder::result(pa->shape, std::move(out), {pa, pb}, [&] {
        return [pa, pb, a0, a1, rest](Node& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            if (pb->requires_grad)
                for (std::size_t i0 = 0; i0 < a0; ++i0)
                    for (std::size_t i1 = 0; i1 < a1; ++i1)
                        for (std::size_t r = 0; r < rest; ++r)
                            pb->grad[i0 * rest + r] += self.grad[(i0 * a1 + i1) * rest + r];
        };
    });
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
    auto pa = node_of(a);
    double s = 0.0;
    for (double v : pa->value) s += v;
    return OpBuilder::result({1}, {s}, {pa}, [&] {
        return [pa](Node& self) {
            for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[0];
        };
    });
}

Tensor mean(const Tensor& a) {
    auto pa = node_of(a);
    double s = 0.0;
    for (double v : pa->value) s += v;
    const double inv_n = 1.0 / static_cast<double>(pa->value.size());
    return OpBuilder::result({1}, {s * inv_n}, {pa}, [&] {
        return [pa, inv_n](Node& self) {
            for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[0] * inv_n;
        };
    });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (axis >= shape.size()) {
        throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t mid = shape[axis];
    const double inv_mid = 1.0 / static_cast<double>(mid);

    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out_shape.push_back(shape[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m)
            for (std::size_t r = 0; r < inner; ++r)
                out[o * inner + r] += pa->value[(o * mid + m) * inner + r];
    for (double& v : out) v *= inv_mid;

    return OpBuilder::result(std::move(out_shape), std::move(out), {pa}, [&] {
        return [pa, outer, mid, inner, inv_mid](Node& self) {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t m = 0; m < mid; ++m)
                    for (std::size_t r = 0; r < inner; ++r)
                        pa->grad[(o * mid + m) * inner + r] += self.grad[o * inner + r] * inv_mid;
        };
    });
}

// ---- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto pa = node_of(a), pb = node_of(b);
    const auto& sa = pa->shape;
    const auto& sb = pb->shape;
    if (sa.size() < 2 || sb.size() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2: " + shape_str(sa) + " x " +
                         shape_str(sb));
    }
    const std::size_t m = sa[sa.size() - 2], p = sa[sa.size() - 1];
    const std::size_t pb_rows = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (p != pb_rows) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
    }
    const bool shared_b = sb.size() == 2;
    if (!shared_b && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
        throw ShapeError("matmul: batch dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
    }

    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

    std::vector<std::size_t> out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);

    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* A = pa->value.data() + bi * m * p;
        const double* B = pb->value.data() + (shared_b ? 0 : bi * p * n);
        double* C = out.data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t k = 0; k < p; ++k) {
                const double aik = A[i * p + k];
                const double* Bk = B + k * n;
                double* Ci = C + i * n;
                for (std::size_t j = 0; j < n; ++j) Ci[j] += aik * Bk[j];
            }
        }
    }

    if (FlopMeter* meter = FlopMeter::active()) {
        meter->add(2ull * batch * m * p * n);
    }

    return OpBuilder::result(std::move(out_shape), std::move(out), {pa, pb}, [&] {
        return [pa, pb, batch, m, p, n, shared_b](Node& self) {
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* A = pa->value.data() + bi * m * p;
                const double* B = pb->value.data() + (shared_b ? 0 : bi * p * n);
                const double* G = self.grad.data() + bi * m * n;
                if (pa->requires_grad) {
                    double* GA = pa->grad.data() + bi * m * p;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t k = 0; k < p; ++k) {
                            double acc = 0.0;
                            const double* Gi = G + i * n;
                            const double* Bk = B + k * n;
                            for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bk[j];
                            GA[i * p + k] += acc;
                        }
                }
                if (pb->requires_grad) {
                    double* GB = pb->grad.data() + (shared_b ? 0 : bi * p * n);
                    for (std::size_t k = 0; k < p; ++k)
                        for (std::size_t i = 0; i < m; ++i) {
                            const double aik = A[i * p + k];
                            const double* Gi = G + i * n;
                            double* GBk = GB + k * n;
                            for (std::size_t j = 0; j < n; ++j) GBk[j] += aik * Gi[j];
                        }
                }
            }
        };
    });
}

// ---- softmax / layer norm / gelu -------------------------------------------

Tensor softmax_lastdim(const Tensor& a) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (shape.empty()) throw ShapeError("softmax_lastdim: rank must be >= 1");
    const std::size_t c = shape.back();
    const std::size_t rows = pa->value.size() / c;

    std::vector<double> out(pa->value.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pa->value.data() + r * c;
        double* y = out.data() + r * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < c; ++j) y[j] *= inv;
    }

    return OpBuilder::result(shape, std::move(out), {pa}, [&] {
        return [pa, rows, c](Node& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * c;
                const double* g = self.grad.data() + r * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                double* gx = pa->grad.data() + r * c;
                for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        };
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    auto pa = node_of(a), pg = node_of(gamma), pc = node_of(beta);
    if (eps <= 0.0) throw ValueError("layer_norm: eps must be > 0");
    const auto& shape = pa->shape;
    if (shape.empty()) throw ShapeError("layer_norm: rank must be >= 1");
    const std::size_t c = shape.back();
    if (pg->shape != std::vector<std::size_t>{c} || pc->shape != std::vector<std::size_t>{c}) {
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
                         shape_str(pg->shape) + " and " + shape_str(pc->shape));
    }
    const std::size_t rows = pa->value.size() / c;

    std::vector<double> xhat(pa->value.size());
    std::vector<double> inv_sigma(rows);
    std::vector<double> out(pa->value.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pa->value.data() + r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (x[j] - mu) * inv;
            xhat[r * c + j] = h;
            out[r * c + j] = h * pg->value[j] + pc->value[j];
        }
    }

    return OpBuilder::result(shape, std::move(out), {pa, pg, pc}, [&] {
        return [pa, pg, pc, rows, c, xhat = std::move(xhat),
                inv_sigma = std::move(inv_sigma)](Node& self) {
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * c;
                const double* h = xhat.data() + r * c;
                if (pg->requires_grad)
                    for (std::size_t j = 0; j < c; ++j) pg->grad[j] += g[j] * h[j];
                if (pc->requires_grad)
                    for (std::size_t j = 0; j < c; ++j) pc->grad[j] += g[j];
                if (pa->requires_grad) {
                    double sum_gg = 0.0, sum_ggh = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gg = g[j] * pg->value[j];
                        sum_gg += gg;
                        sum_ggh += gg * h[j];
                    }
                    const double m1 = sum_gg * inv_c, m2 = sum_ggh * inv_c;
                    double* gx = pa->grad.data() + r * c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gg = g[j] * pg->value[j];
                        gx[j] += inv_sigma[r] * (gg - m1 - h[j] * m2);
                    }
                }
            }
        };
    });
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor gelu(const Tensor& a) {
    auto pa = node_of(a);
    std::vector<double> out(pa->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = pa->value[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return OpBuilder::result(pa->shape, std::move(out), {pa}, [&] {
        return [pa](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double x = pa->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                pa->grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        };
    });
}

// ---- conv2d --------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
    auto px = node_of(x), pw = node_of(w);
    const auto& sx = px->shape;
    const auto& sw = pw->shape;
    if (sx.size() != 3 || sw.size() != 4) {
        throw ShapeError("conv2d: want x [Cin,H,W] and w [Cout,Cin,kh,kw], got " + shape_str(sx) +
                         " and " + shape_str(sw));
    }
    const std::size_t cin = sx[0], h = sx[1], wdt = sx[2];
    const std::size_t cout = sw[0], kh = sw[2], kw = sw[3];
    if (sw[1] != cin) {
        throw ShapeError("conv2d: input channels disagree: x " + shape_str(sx) + " vs w " +
                         shape_str(sw));
    }
    if (stride == 0) throw ValueError("conv2d: stride must be >= 1");
    if (h + 2 * pad < kh || wdt + 2 * pad < kw || (h + 2 * pad - kh) % stride != 0 ||
        (wdt + 2 * pad - kw) % stride != 0) {
        throw ShapeError("conv2d: output size not integral for input " + shape_str(sx) + ", kernel " +
                         shape_str(sw) + ", stride " + std::to_string(stride) + ", pad " +
                         std::to_string(pad));
    }
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wdt + 2 * pad - kw) / stride + 1;

    std::shared_ptr<Node> pbias;
    if (bias.defined()) {
        pbias = node_of(bias);
        if (pbias->shape != std::vector<std::size_t>{cout}) {
            throw ShapeError("conv2d: bias must be [" + std::to_string(cout) + "], got " +
                             shape_str(pbias->shape));
        }
    }

    std::vector<double> out(cout * oh * ow, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        const double b = pbias ? pbias->value[co] : 0.0;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = b;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long ix =
                                static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            if (ix < 0 || ix >= static_cast<long>(wdt)) continue;
                            acc += px->value[(ci * h + iy) * wdt + ix] *
                                   pw->value[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                out[(co * oh + oy) * ow + ox] = acc;
            }
    }

    if (FlopMeter* meter = FlopMeter::active()) {
        meter->add(2ull * cout * oh * ow * cin * kh * kw);
    }

    std::vector<std::shared_ptr<Node>> parents{px, pw};
    if (pbias) parents.push_back(pbias);
    return OpBuilder::result({cout, oh, ow}, std::move(out), std::move(parents), [&] {
        return [px, pw, pbias, cin, h, wdt, cout, kh, kw, oh, ow, stride, pad](Node& self) {
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double g = self.grad[(co * oh + oy) * ow + ox];
                        if (g == 0.0) continue;
                        if (pbias && pbias->requires_grad) pbias->grad[co] += g;
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const long iy =
                                    static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const long ix =
                                        static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                    if (ix < 0 || ix >= static_cast<long>(wdt)) continue;
                                    const std::size_t xi = (ci * h + iy) * wdt + ix;
                                    const std::size_t wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                    if (px->requires_grad) px->grad[xi] += g * pw->value[wi];
                                    if (pw->requires_grad) pw->grad[wi] += g * px->value[xi];
                                }
                            }
                    }
        };
    });
}

// ---- window plumbing -------------------------------------------------------------

Tensor gather_regions(const Tensor& a, const std::vector<std::vector<std::size_t>>& indices) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (shape.size() != 3) throw ShapeError("gather_regions: want [n,T,C], got " + shape_str(shape));
    const std::size_t n = shape[0], t = shape[1], c = shape[2];
    if (indices.size() != n) {
        throw ShapeError("gather_regions: index rows " + std::to_string(indices.size()) +
                         " != regions " + std::to_string(n));
    }
    const std::size_t k = indices.empty() ? 0 : indices[0].size();
    for (const auto& row : indices) {
        if (row.size() != k) throw ValueError("gather_regions: ragged index rows");
        for (std::size_t idx : row)
            if (idx >= n)
                throw ValueError("gather_regions: region index " + std::to_string(idx) +
                                 " out of range (n=" + std::to_string(n) + ")");
    }

    std::vector<double> out(n * k * t * c);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < k; ++j) {
            const double* srcp = pa->value.data() + indices[r][j] * t * c;
            double* dstp = out.data() + (r * k + j) * t * c;
            std::copy(srcp, srcp + t * c, dstp);
        }

    return OpBuilder::result({n, k * t, c}, std::move(out), {pa}, [&] {
        return [pa, indices, n, k, t, c](Node& self) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < k; ++j) {
                    double* dstg = pa->grad.data() + indices[r][j] * t * c;
                    const double* srcg = self.grad.data() + (r * k + j) * t * c;
                    for (std::size_t i = 0; i < t * c; ++i) dstg[i] += srcg[i];
                }
        };
    });
}

Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& index) {
    auto pt = node_of(table);
    const auto& shape = pt->shape;
    if (shape.size() != 2) throw ShapeError("index_rows: want [R,C], got " + shape_str(shape));
    const std::size_t rows = shape[0], c = shape[1];
    for (std::size_t i : index) {
        if (i >= rows)
            throw ValueError("index_rows: row " + std::to_string(i) + " out of range (R=" +
                             std::to_string(rows) + ")");
    }

    const std::size_t n = index.size();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        const double* srcp = pt->value.data() + index[i] * c;
        std::copy(srcp, srcp + c, out.data() + i * c);
    }

    return OpBuilder::result({n, c}, std::move(out), {pt}, [&] {
        return [pt, index, c](Node& self) {
            for (std::size_t i = 0; i < index.size(); ++i) {
                double* dstg = pt->grad.data() + index[i] * c;
                const double* srcg = self.grad.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dstg[j] += srcg[j];
            }
        };
    });
}

namespace {

std::size_t wrap_index(long i, std::size_t n) {
    const long m = static_cast<long>(n);
    long r = i % m;
    if (r < 0) r += m;
    return static_cast<std::size_t>(r);
}

// Mirror an index into [0, n) without repeating the edge sample.
std::size_t reflect_index(std::size_t i, std::size_t n) {
    if (i < n) return i;
    if (n == 1) return 0;
    const std::size_t period = 2 * n - 2;
    std::size_t j = i % period;
    return j < n ? j : period - j;
}

}  // namespace

Tensor roll2d(const Tensor& a, long dy, long dx) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (shape.size() != 3) throw ShapeError("roll2d: want [H,W,C], got " + shape_str(shape));
    const std::size_t h = shape[0], w = shape[1], c = shape[2];

    std::vector<double> out(pa->value.size());
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = wrap_index(static_cast<long>(y) - dy, h);
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = wrap_index(static_cast<long>(x) - dx, w);
            const double* srcp = pa->value.data() + (sy * w + sx) * c;
            double* dstp = out.data() + (y * w + x) * c;
            std::copy(srcp, srcp + c, dstp);
        }
    }

    return OpBuilder::result(shape, std::move(out), {pa}, [&] {
        return [pa, h, w, c, dy, dx](Node& self) {
            for (std::size_t y = 0; y < h; ++y) {
                const std::size_t sy = wrap_index(static_cast<long>(y) - dy, h);
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t sx = wrap_index(static_cast<long>(x) - dx, w);
                    double* dstg = pa->grad.data() + (sy * w + sx) * c;
                    const double* srcg = self.grad.data() + (y * w + x) * c;
                    for (std::size_t i = 0; i < c; ++i) dstg[i] += srcg[i];
                }
            }
        };
    });
}

Tensor reflect_pad_hw(const Tensor& a, std::size_t pad_bottom, std::size_t pad_right) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (shape.size() != 3) throw ShapeError("reflect_pad_hw: want [H,W,C], got " + shape_str(shape));
    const std::size_t h = shape[0], w = shape[1], c = shape[2];
    const std::size_t oh = h + pad_bottom, ow = w + pad_right;

    std::vector<double> out(oh * ow * c);
    for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t sy = reflect_index(y, h);
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t sx = reflect_index(x, w);
            const double* srcp = pa->value.data() + (sy * w + sx) * c;
            double* dstp = out.data() + (y * ow + x) * c;
            std::copy(srcp, srcp + c, dstp);
        }
    }

    return OpBuilder::result({oh, ow, c}, std::move(out), {pa}, [&] {
        return [pa, h, w, c, oh, ow](Node& self) {
            for (std::size_t y = 0; y < oh; ++y) {
                const std::size_t sy = reflect_index(y, h);
                for (std::size_t x = 0; x < ow; ++x) {
                    const std::size_t sx = reflect_index(x, w);
                    double* dstg = pa->grad.data() + (sy * w + sx) * c;
                    const double* srcg = self.grad.data() + (y * ow + x) * c;
                    for (std::size_t i = 0; i < c; ++i) dstg[i] += srcg[i];
                }
            }
        };
    });
}

Tensor crop2d(const Tensor& a, std::size_t out_h, std::size_t out_w) {
    auto pa = node_of(a);
    const auto& shape = pa->shape;
    if (shape.size() != 3) throw ShapeError("crop2d: want [H,W,C], got " + shape_str(shape));
    const std::size_t h = shape[0], w = shape[1], c = shape[2];
    if (out_h > h || out_w > w || out_h == 0 || out_w == 0) {
        throw ShapeError("crop2d: cannot crop " + shape_str(shape) + " to " + std::to_string(out_h) +
                         "x" + std::to_string(out_w));
    }

    std::vector<double> out(out_h * out_w * c);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            const double* srcp = pa->value.data() + (y * w + x) * c;
            double* dstp = out.data() + (y * out_w + x) * c;
            std::copy(srcp, srcp + c, dstp);
        }

    return OpBuilder::result({out_h, out_w, c}, std::move(out), {pa}, [&] {
        return [pa, w, c, out_h, out_w](Node& self) {
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t x = 0; x < out_w; ++x) {
                    double* dstg = pa->grad.data() + (y * w + x) * c;
                    const double* srcg = self.grad.data() + (y * out_w + x) * c;
                    for (std::size_t i = 0; i < c; ++i) dstg[i] += srcg[i];
                }
        };
    });
}

// ---- finite differences -------------------------------------------------------

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw ValueError("finite_diff_grad: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
    }
    auto px = node_of(x);
    std::vector<double> g(px->value.size());
    std::vector<double> probe = px->value;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(Tensor::from_data(px->shape, probe));
        probe[i] = orig - eps;
        const double fm = f(Tensor::from_data(px->shape, probe));
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return Tensor::from_data(px->shape, std::move(g));
}

// ---- FLOP meter -----------------------------------------------------------------

namespace {

thread_local FlopMeter* g_active_meter = nullptr;
thread_local const char* g_flop_section = "other";

}  // namespace

FlopMeter* FlopMeter::active() { return g_active_meter; }

void FlopMeter::add(std::uint64_t flops) {
    auto it = counts_.find(std::string_view(g_flop_section));
    if (it == counts_.end()) {
        counts_.emplace(std::string(g_flop_section), flops);
    } else {
        it->second += flops;
    }
}

std::uint64_t FlopMeter::section(std::string_view name) const {
    auto it = counts_.find(name);
    return it == counts_.end() ? 0 : it->second;
}

std::uint64_t FlopMeter::total() const {
    std::uint64_t t = 0;
    for (const auto& [_, v] : counts_) t += v;
    return t;
}

FlopMeter::Enable::Enable(FlopMeter& meter) : prev_(g_active_meter) { g_active_meter = &meter; }
FlopMeter::Enable::~Enable() { g_active_meter = prev_; }

FlopMeter::Section::Section(const char* name) : prev_(g_flop_section) { g_flop_section = name; }
FlopMeter::Section::~Section() { g_flop_section = prev_; }

}  // namespace sscan
