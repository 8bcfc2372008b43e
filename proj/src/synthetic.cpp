#include "psgd/synthetic.hpp"

#include <cmath>

#include "psgd/error.hpp"
#include "psgd/random.hpp"

namespace psgd {

Dataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.dimension == 0) throw InvalidArgument("dataset", "synthetic dimension must be >= 1");
    if (!(spec.density > 0.0 && spec.density <= 1.0)) throw InvalidArgument("dataset", "density must be in (0,1]");

    Rng rng(spec.seed);
    std::vector<double> hidden(spec.dimension);
    double norm2 = 0.0;
    for (double& u : hidden) {
        u = rng.normal();
        norm2 += u * u;
    }
    const double norm = std::sqrt(norm2);

    std::vector<Sample> samples;
    samples.reserve(spec.samples);
    while (samples.size() < spec.samples) {
        Sample s;
        double projection = 0.0;
        for (std::size_t j = 0; j < spec.dimension; ++j) {
            if (spec.density < 1.0 && rng.uniform() >= spec.density) continue;
            const double v = rng.normal();
            s.features.push_back({static_cast<std::uint32_t>(j + 1), v});
            projection += hidden[j] * v;
        }
        if (std::abs(projection) / norm < spec.gap) continue;
        s.label = projection >= 0.0 ? 1 : -1;
        if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise) s.label = -s.label;
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples), spec.dimension);
}

}  // namespace psgd
