// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "sscan/errors.hpp"

namespace sscan {

namespace detail {
struct Node;
}

// Dense n-dimensional array of doubles, row-major, with optional
// participation in a reverse-mode gradient tape. Tensor is a cheap
// shared handle: copies alias the same storage and gradient buffer.
//
// Graph recording happens implicitly: an op whose inputs require grad
// records a backward closure; backward(loss) propagates and then clears
// the recorded graph. Single-threaded by contract (one tape per thread).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const std::vector<std::size_t>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<std::size_t>& shape, double value, bool requires_grad = false);
    static Tensor from_data(const std::vector<std::size_t>& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    const std::vector<double>& values() const;
    // Mutable access to leaf storage (weight init, optimizer updates).
    std::vector<double>& raw();

    double scalar_value() const;  // size-1 tensors only

    bool requires_grad() const;
    void set_requires_grad(bool requires_grad);

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    friend void backward(const Tensor& loss);
    friend class OpBuilder;

private:
    std::shared_ptr<detail::Node> node_;
};

// Populates grad for every requires-grad tensor reachable from `loss`,
// then releases the recorded graph. Grads are overwritten per call,
// not accumulated across calls.
void backward(const Tensor& loss);

// ---- elementwise / structural ops ------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);  // d|x|/dx = sign(x), sign(0) = 0

Tensor reshape(const Tensor& a, const std::vector<std::size_t>& shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& dims);
Tensor transpose_last2(const Tensor& a);

// Broadcasting adds used by attention. add_rowvec broadcasts a [C]
// vector over the last axis; the axis0/axis1 variants broadcast the
// smaller operand across the leading batch axis or the second axis.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor add_broadcast_axis0(const Tensor& a, const Tensor& b);  // a:[B,rest], b:[rest]
Tensor add_broadcast_axis1(const Tensor& a, const Tensor& b);  // a:[A,B,rest], b:[A,rest]

// ---- reductions -------------------------------------------------------

Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}
Tensor mean_axis(const Tensor& a, std::size_t axis);

// ---- linear algebra / NN ops -----------------------------------------

// Batched matrix product [.., m, p] x [.., p, n] -> [.., m, n].
// Batch dims must match exactly, or b may be rank-2 (shared weights).
Tensor matmul(const Tensor& a, const Tensor& b);

// Numerically stable softmax over the last axis (max subtraction).
Tensor softmax_lastdim(const Tensor& a);

// Per-last-axis standardization followed by the affine gamma/beta map.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gelu(const Tensor& a);  // exact erf form

// Cross-correlation with zero padding. x:[Cin,H,W], w:[Cout,Cin,kh,kw],
// bias:[Cout] (may be undefined for no bias).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride = 1, std::size_t pad = 0);

// ---- window plumbing primitives (gradient-capable) ---------------------

// Concatenate selected regions: a:[n,T,C] with indices[n][k] -> [n,k*T,C].
Tensor gather_regions(const Tensor& a, const std::vector<std::vector<std::size_t>>& indices);

// Row lookup (embedding style): table:[R,C], index[N] -> [N,C].
Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& index);

// Toroidal roll of a [H,W,C] map by (dy,dx).
Tensor roll2d(const Tensor& a, long dy, long dx);

// Mirror padding (no edge repeat) on the bottom/right of a [H,W,C] map.
Tensor reflect_pad_hw(const Tensor& a, std::size_t pad_bottom, std::size_t pad_right);

// Top-left crop of a [H,W,C] map.
Tensor crop2d(const Tensor& a, std::size_t out_h, std::size_t out_w);

// ---- verification oracle ----------------------------------------------

// Central-difference gradient of a scalar-valued function at x.
// eps must lie in [1e-7, 1e-3].
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

// ---- FLOP instrumentation ----------------------------------------------

// Counts multiply-accumulates x2, bucketed by section name. Activated
// per thread via Enable; matmul adds to the current section.
class FlopMeter {
public:
    void reset() { counts_.clear(); }
    void add(std::uint64_t flops);
    std::uint64_t section(std::string_view name) const;
    std::uint64_t total() const;

    static FlopMeter* active();

    class Enable {
    public:
        explicit Enable(FlopMeter& meter);
        ~Enable();
        Enable(const Enable&) = delete;
        Enable& operator=(const Enable&) = delete;

    private:
        FlopMeter* prev_;
    };

    class Section {
    public:
        explicit Section(const char* name);
        ~Section();
        Section(const Section&) = delete;
        Section& operator=(const Section&) = delete;

    private:
        const char* prev_;
    };

private:
    std::map<std::string, std::uint64_t, std::less<>> counts_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace sscan
