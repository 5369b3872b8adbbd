#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dac/tensor.hpp"

namespace dac {

// Named, shaped parameter tensors with paired gradient buffers. Entry order
// is fixed at creation time and defines the checkpoint layout.
template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, int> by_name;

    int add(const std::string& name, Tensor<T> init) {
        DAC_CHECK(by_name.find(name) == by_name.end(), "duplicate parameter name '", name, "'");
        int idx = static_cast<int>(entries.size());
        Tensor<T> grad = Tensor<T>::zeros(init.shape);
        entries.push_back(Entry{name, std::move(init), std::move(grad)});
        by_name.emplace(entries.back().name, idx);
        return idx;
    }

    int find(const std::string& name) const {
        auto it = by_name.find(name);
        return it == by_name.end() ? -1 : it->second;
    }

    Entry& operator[](int idx) { return entries[static_cast<size_t>(idx)]; }
    const Entry& operator[](int idx) const { return entries[static_cast<size_t>(idx)]; }

    int size() const { return static_cast<int>(entries.size()); }

    void zero_grads() {
        for (auto& e : entries) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries) out.add(e.name, e.value.template cast<U>());
        return out;
    }
};

}  // namespace dac
