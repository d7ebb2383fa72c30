// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sscan/model.hpp"
#include "sscan/tensor.hpp"

namespace sscan::optim {

// Mean absolute error; the zero residual contributes zero gradient.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Standard bias-corrected Adam update over a fixed parameter list.
// Parameters must carry grads from a preceding backward().
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct PatchPair {
    Tensor lr_img;  // [C,h,w] in [0,1]
    Tensor hr_img;  // [C,scale*h,scale*w] in [0,1]
};

struct TrainOptions {
    std::size_t iters = 500;
    double lr = 2e-4;
    std::uint64_t seed = 0;
    bool augment = false;  // random flips/rotations; off for determinism
};

struct TrainResult {
    model::WeightStore weights;
    std::vector<double> loss_curve;  // one entry per iteration
};

// Downscaled training loop: random init by seed, one random patch per
// iteration, L1 loss, Adam. Deterministic for a fixed seed.
TrainResult train_toy(const model::ModelConfig& cfg, const std::vector<PatchPair>& patches,
                      const TrainOptions& opts);

std::string loss_curve_csv(const std::vector<double>& curve);

}  // namespace sscan::optim
