#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cmn/random.hpp"
#include "cmn/tensor.hpp"

namespace cmn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, Real sd = 1.0, bool requires_grad = true) {
    std::vector<Real> data(shape_numel(shape));
    for (auto& v : data) v = rng.normal(0.0, sd);
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

struct GradReport {
    double max_rel = 0.0;
    std::size_t input = 0;
    std::size_t element = 0;
    std::size_t checked = 0;
};

/// Central differences over every element of every input. The error of one
/// element is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradReport gradcheck(std::vector<Tensor> inputs, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                            Real h = 1e-5, Real floor = 1e-3) {
    for (auto& t : inputs) t.zero_grad();
    Tensor out = f(inputs);
    out.backward();
    std::vector<std::vector<Real>> analytic;
    for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

    GradReport report;
    NoGradGuard guard;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto data = inputs[i].mutable_data();
        for (std::size_t e = 0; e < data.size(); ++e) {
            const Real saved = data[e];
            data[e] = saved + h;
            const Real up = f(inputs).item();
            data[e] = saved - h;
            const Real down = f(inputs).item();
            data[e] = saved;
            const Real numeric = (up - down) / (2 * h);
            const Real a = analytic[i][e];
            const Real rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > report.max_rel) report = {rel, i, e, report.checked};
            ++report.checked;
        }
    }
    return report;
}

/// Weighted sum with fixed random coefficients, so every output element matters.
inline Tensor probe(const Tensor& x, std::uint64_t seed = 99) {
    Rng rng(seed);
    std::vector<Real> w(x.numel());
    for (auto& v : w) v = rng.normal();
    return sum(mul(x, Tensor(x.shape(), std::move(w))));
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("cmn-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace cmn::testing
