#pragma once

#include <functional>

#include "dac/graph.hpp"

namespace dac::testing {

// Central finite differences (step 1e-5) against the tape gradients, double
// mode. Returns max over all parameter entries of
// |g_analytic - g_fd| / (|g_fd| + 1e-8).
template <typename BuildLoss>
double max_rel_grad_err(ParamStore<double>& ps, BuildLoss build, double h = 1e-5) {
    ps.zero_grads();
    {
        Graph<double> g;
        auto loss = build(g);
        g.backward(loss);
    }
    std::vector<Tensor<double>> analytic;
    for (const auto& e : ps.entries) analytic.push_back(e.grad);

    auto eval = [&]() {
        Graph<double> g;
        return g.value(build(g)).data[0];
    };

    double max_err = 0.0;
    for (int pi = 0; pi < ps.size(); ++pi) {
        auto& value = ps[pi].value;
        for (int64_t i = 0; i < value.numel(); ++i) {
            double orig = value.data[i];
            value.data[i] = orig + h;
            double lp = eval();
            value.data[i] = orig - h;
            double lm = eval();
            value.data[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double ga = analytic[static_cast<size_t>(pi)].data[i];
            double err = std::abs(ga - fd) / (std::abs(fd) + 1e-8);
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Scalar probe: pins a non-uniform gradient on a tensor-valued node so FD
// checks see every element (a plain sum would zero out softmax rows).
template <typename T>
typename Graph<T>::NodeId probe_loss(Graph<T>& g, typename Graph<T>::NodeId x, uint64_t seed) {
    Rng rng(seed);
    const auto& v = g.value(x);
    Tensor<T> target = Tensor<T>::randn(v.shape, rng);
    std::vector<uint8_t> mask(static_cast<size_t>(v.shape[0]), 1);
    return g.mse_masked(x, g.constant(std::move(target), "probe"), std::move(mask));
}

}  // namespace dac::testing
