#include "psgd/sgd_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "psgd/error.hpp"
#include "psgd/random.hpp"

namespace psgd {

void HyperParams::validate() const {
    if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("sgd_core", "C must be a positive finite number");
    if (t_max < 1) throw InvalidArgument("sgd_core", "epoch budget must be >= 1");
}

bool ModelState::finite() const noexcept {
    return std::all_of(weights.begin(), weights.end(), [](double v) { return std::isfinite(v); });
}

ModelState gaussian_init(std::size_t dimension, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sgd_core", "sigma must be >= 0");
    Rng rng(seed);
    ModelState state;
    state.weights.resize(dimension);
    for (double& w : state.weights) w = sigma * rng.normal();
    return state;
}

double dot(std::span<const double> weights, const Sample& sample) {
    if (sample.max_index() > weights.size()) {
        throw InvalidArgument("sgd_core", "sample feature index " + std::to_string(sample.max_index()) +
                                              " exceeds weight dimension " + std::to_string(weights.size()));
    }
    double sum = 0.0;
    for (const Feature& f : sample.features) sum += weights[f.index - 1] * f.value;
    return sum;
}

double hinge(std::span<const double> weights, const Sample& sample) {
    return std::max(0.0, 1.0 - sample.label * dot(weights, sample));
}

Weights subgradient(std::span<const double> weights, const Sample& sample, double c) {
    Weights g(weights.begin(), weights.end());
    if (hinge(weights, sample) == 0.0) return g;
    const double cy = c * sample.label;
    for (const Feature& f : sample.features) g[f.index - 1] = g[f.index - 1] - cy * f.value;
    return g;
}

double learning_rate(std::size_t epoch) noexcept { return 1.0 / (1.0 + static_cast<double>(epoch)); }

Weights sgd_step(std::span<const double> weights, const Sample& sample, double c, double alpha) {
    const Weights g = subgradient(weights, sample, c);
    Weights out(weights.size());
    for (std::size_t j = 0; j < weights.size(); ++j) out[j] = weights[j] - alpha * g[j];
    return out;
}

void sgd_step_inplace(std::span<double> weights, const Sample& sample, double c, double alpha) {
    const bool active = hinge(weights, sample) != 0.0;
    const double cy = c * sample.label;
    auto next = sample.features.begin();
    for (std::size_t j = 0; j < weights.size(); ++j) {
        double g = weights[j];
        if (next != sample.features.end() && next->index - 1 == j) {
            if (active) g = g - cy * next->value;
            ++next;
        }
        weights[j] = weights[j] - alpha * g;
    }
}

double objective(std::span<const double> weights, const Dataset& dataset, double c) {
    double norm2 = 0.0;
    for (double w : weights) norm2 += w * w;
    double loss = 0.0;
    for (const Sample& s : dataset) loss += hinge(weights, s);
    return 0.5 * norm2 + c * loss;
}

Weights average_models(std::span<const Weights> models) {
    if (models.empty()) throw InvalidArgument("sgd_core", "cannot average an empty list of models");
    Weights sum = models.front();
    for (std::size_t k = 1; k < models.size(); ++k) {
        if (models[k].size() != sum.size()) {
            throw InvalidArgument("sgd_core", "model " + std::to_string(k) + " has length " +
                                                  std::to_string(models[k].size()) + ", expected " +
                                                  std::to_string(sum.size()));
        }
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += models[k][j];
    }
    const double count = static_cast<double>(models.size());
    for (double& v : sum) v /= count;
    return sum;
}

int classify(std::span<const double> weights, const Sample& sample) {
    return dot(weights, sample) >= 0.0 ? 1 : -1;
}

double accuracy(std::span<const double> weights, const Dataset& dataset) {
    if (dataset.empty()) throw InvalidArgument("sgd_core", "accuracy of an empty dataset is undefined");
    std::size_t correct = 0;
    for (const Sample& s : dataset) correct += classify(weights, s) == s.label;
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

Confusion confusion(std::span<const double> weights, const Dataset& dataset) {
    Confusion m;
    for (const Sample& s : dataset) {
        const bool predicted_positive = classify(weights, s) > 0;
        if (s.label > 0) {
            (predicted_positive ? m.true_positive : m.false_negative)++;
        } else {
            (predicted_positive ? m.false_positive : m.true_negative)++;
        }
    }
    return m;
}

}  // namespace psgd
