// SPDX-License-Identifier: Apache-2.0

#include "sscan/optim.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace sscan::optim {

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("l1_loss: shapes disagree: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    return mean(abs(sub(pred, target)));
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ValueError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& w = params[i].raw();
        if (g.size() != w.size()) throw ValueError("adam_step: grad/param size mismatch");
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

namespace {

// Deterministic spatial flips/rotations applied jointly to a patch pair.
Tensor flip_h(const Tensor& t) {
    const auto& s = t.shape();  // [C,H,W]
    const auto& v = t.values();
    std::vector<double> out(v.size());
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t y = 0; y < s[1]; ++y)
            for (std::size_t x = 0; x < s[2]; ++x)
                out[(c * s[1] + y) * s[2] + x] = v[(c * s[1] + y) * s[2] + (s[2] - 1 - x)];
    return Tensor::from_data(s, std::move(out));
}

Tensor flip_v(const Tensor& t) {
    const auto& s = t.shape();
    const auto& v = t.values();
    std::vector<double> out(v.size());
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t y = 0; y < s[1]; ++y)
            for (std::size_t x = 0; x < s[2]; ++x)
                out[(c * s[1] + y) * s[2] + x] = v[(c * s[1] + (s[1] - 1 - y)) * s[2] + x];
    return Tensor::from_data(s, std::move(out));
}

Tensor rot90(const Tensor& t) {
    const auto& s = t.shape();
    const auto& v = t.values();
    std::vector<double> out(v.size());
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t y = 0; y < s[1]; ++y)
            for (std::size_t x = 0; x < s[2]; ++x)
                out[(c * s[2] + x) * s[1] + (s[1] - 1 - y)] = v[(c * s[1] + y) * s[2] + x];
    return Tensor::from_data({s[0], s[2], s[1]}, std::move(out));
}

}  // namespace

TrainResult train_toy(const model::ModelConfig& cfg, const std::vector<PatchPair>& patches,
                      const TrainOptions& opts) {
    cfg.validate();
    if (patches.empty()) throw ValueError("train_toy: empty patch list");

    model::WeightStore weights = model::init_weights(cfg, opts.seed);
    weights.set_requires_grad(true);
    std::vector<Tensor> params = weights.parameters();

    AdamState state;
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<double> curve;
    curve.reserve(opts.iters);

    for (std::size_t it = 0; it < opts.iters; ++it) {
        const std::size_t pick = static_cast<std::size_t>(rng() % patches.size());
        Tensor lr_img = patches[pick].lr_img;
        Tensor hr_img = patches[pick].hr_img;

        if (opts.augment) {
            const std::uint64_t bits = rng();
            if (bits & 1) {
                lr_img = flip_h(lr_img);
                hr_img = flip_h(hr_img);
            }
            if (bits & 2) {
                lr_img = flip_v(lr_img);
                hr_img = flip_v(hr_img);
            }
            if (bits & 4) {
                lr_img = rot90(lr_img);
                hr_img = rot90(hr_img);
            }
        }

        Tensor pred = model::forward(lr_img, cfg, weights, attn::Mode::train);
        Tensor loss = l1_loss(pred, hr_img);
        backward(loss);
        adam_step(params, state, opts.lr);
        curve.push_back(loss.scalar_value());
    }

    weights.set_requires_grad(false);
    return TrainResult{std::move(weights), std::move(curve)};
}

std::string loss_curve_csv(const std::vector<double>& curve) {
    std::ostringstream os;
    os << "iteration,l1_loss\n";
    os.precision(17);
    for (std::size_t i = 0; i < curve.size(); ++i) os << i << ',' << curve[i] << '\n';
    return os.str();
}

}  // namespace sscan::optim
