#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lrc/autodiff.hpp"
#include "lrc/rng.hpp"
#include "lrc/util.hpp"

namespace lrc {

struct GradCheckFailure {
    std::string param;
    size_t coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    size_t coords_checked = 0;
    double max_rel_err = 0.0;
    std::string worst_param;
    // Max relative error seen per sampled parameter.
    std::map<std::string, double> per_param_max;
    // Coordinates whose relative error exceeded the tolerance.
    std::vector<GradCheckFailure> failures;

    bool ok() const { return failures.empty(); }
};

// Compares analytic gradients of a scalar-valued tape program against central
// finite differences. `build` must be deterministic in the parameter values.
// With n_samples == 0 every coordinate is checked; otherwise n_samples
// coordinates are drawn uniformly over all parameter entries. The error
// denominator is floored so that near-zero gradient pairs are compared
// absolutely instead of dividing by noise.
template <typename T, typename BuildFn>
GradCheckReport grad_check(ParamSetT<T>& params, BuildFn&& build, double h, double tol,
                           size_t n_samples = 0, Rng rng = Rng(0)) {
    if (!(h > 0.0)) throw ValidationError("grad_check: step h must be positive");

    GradientsT<T> grads(params);
    TapeT<T> tape(&params, &grads);
    tape.backward(build(tape));

    auto loss_at = [&]() -> double {
        TapeT<T> t(&params, nullptr);
        ValueRef r = build(t);
        return static_cast<double>(t.val(r).data[0]);
    };

    std::vector<std::pair<size_t, size_t>> coords;  // (param index, flat offset)
    if (n_samples == 0) {
        for (size_t p = 0; p < params.size(); ++p) {
            for (size_t c = 0; c < params[p].value.numel(); ++c) coords.emplace_back(p, c);
        }
    } else {
        const uint64_t total = params.total_numel();
        for (size_t s = 0; s < n_samples; ++s) {
            uint64_t flat = rng.uniform_int(total);
            size_t p = 0;
            while (flat >= params[p].value.numel()) {
                flat -= params[p].value.numel();
                ++p;
            }
            coords.emplace_back(p, size_t(flat));
        }
    }

    GradCheckReport rep;
    for (const auto& [p, c] : coords) {
        T& w = params[p].value.data[c];
        const T saved = w;
        w = static_cast<T>(double(saved) + h);
        const double plus = loss_at();
        w = static_cast<T>(double(saved) - h);
        const double minus = loss_at();
        w = saved;

        const double numeric = (plus - minus) / (2.0 * h);
        const double analytic = grads.populated[p] ? double(grads.grad[p].data[c]) : 0.0;
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        const double rel = std::abs(analytic - numeric) / denom;

        const std::string& name = params[p].name;
        auto [it, fresh] = rep.per_param_max.emplace(name, rel);
        if (!fresh && rel > it->second) it->second = rel;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_param = name;
        }
        if (rel > tol) rep.failures.push_back({name, c, analytic, numeric, rel});
        ++rep.coords_checked;
    }
    return rep;
}

}  // namespace lrc
