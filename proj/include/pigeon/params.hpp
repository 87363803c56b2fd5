#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>

#include "pigeon/tape.hpp"

namespace pigeon::nn {

// Named gradient accumulators, shared across the per-example tapes of a batch.
struct GradMap {
    std::map<std::string, Matrix> g;

    Matrix* sink(const std::string& name) { return &g[name]; }
    void clear() { g.clear(); }
    bool has(const std::string& name) const { return g.count(name) > 0; }
};

// Decides, per named parameter, how a forward graph sees it: trainable leaf
// (gradients flow into `grads`), plain constant, or an overridden value
// (used for frozen reference-policy weights).
struct Binder {
    Tape* tape = nullptr;
    GradMap* grads = nullptr;
    std::function<bool(const std::string&)> trainable;
    const std::map<std::string, Matrix>* overrides = nullptr;

    Var operator()(const std::string& name, const Matrix& value) {
        const Matrix* v = &value;
        if (overrides) {
            auto it = overrides->find(name);
            if (it != overrides->end()) v = &it->second;
        }
        if (grads && trainable && trainable(name)) return tape->leaf(*v, grads->sink(name));
        return tape->constant(*v);
    }

    static Binder constants(Tape& t) { return Binder{&t, nullptr, nullptr, nullptr}; }
};

}  // namespace pigeon::nn
