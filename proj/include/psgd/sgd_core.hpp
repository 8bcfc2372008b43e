#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "psgd/dataset.hpp"

namespace psgd {

using Weights = std::vector<double>;

struct HyperParams {
    double c = 1.0;            // weight of the summed hinge term
    std::size_t t_max = 1;     // epoch budget

    void validate() const;
};

struct ModelState {
    Weights weights;
    std::size_t epoch = 0;

    bool finite() const noexcept;
};

// Gaussian N(0, sigma^2) initial weights from a seeded generator.
ModelState gaussian_init(std::size_t dimension, double sigma, std::uint64_t seed);

// Sparse inner product; throws InvalidArgument if the sample has an index
// beyond weights.size().
double dot(std::span<const double> weights, const Sample& sample);

// max(0, 1 - y<w,x>)
double hinge(std::span<const double> weights, const Sample& sample);

// w when the hinge term is exactly zero (including the kink y<w,x> == 1),
// w - c*y*x otherwise.
Weights subgradient(std::span<const double> weights, const Sample& sample, double c);

// 1 / (1 + epoch)
double learning_rate(std::size_t epoch) noexcept;

// Returns w - alpha * subgradient(w, sample, c). `weights` is not modified.
Weights sgd_step(std::span<const double> weights, const Sample& sample, double c, double alpha);

// In-place form of sgd_step; produces bit-identical results.
void sgd_step_inplace(std::span<double> weights, const Sample& sample, double c, double alpha);

// 0.5*||w||^2 + c * sum of hinge over the dataset, summed in sample order.
double objective(std::span<const double> weights, const Dataset& dataset, double c);

// Componentwise mean. Summation runs in index order 0..K-1 and the sum is
// divided by K, matching an order-fixed all-reduce followed by division.
Weights average_models(std::span<const Weights> models);

// sign(<w,x>) with ties resolved to +1.
int classify(std::span<const double> weights, const Sample& sample);

// Fraction of samples where classify() matches the label; dataset must be nonempty.
double accuracy(std::span<const double> weights, const Dataset& dataset);

struct Confusion {
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;
};

Confusion confusion(std::span<const double> weights, const Dataset& dataset);

}  // namespace psgd
