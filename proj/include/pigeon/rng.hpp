#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cmath>
#include <vector>

namespace pigeon {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic RNG used everywhere. Distributions are hand-rolled on top of
// the raw 64-bit stream so output is stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // warm up so that nearby seeds decorrelate
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // multiply-shift; bias is negligible for desk-scale n
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // standard normal via Box-Muller (uncached, two uniforms per draw)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        return -std::log(-std::log(u));
    }

    Eigen::MatrixXd gaussian(int rows, int cols, double stddev = 1.0) {
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = stddev * normal();
        return m;
    }

    Eigen::VectorXd unit_vector(int dim) {
        Eigen::VectorXd v(dim);
        double n2 = 0.0;
        do {
            for (int i = 0; i < dim; ++i) v(i) = normal();
            n2 = v.squaredNorm();
        } while (n2 < 1e-12);
        return v / std::sqrt(n2);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // independent child stream; stable under call-order changes elsewhere
    Rng fork(std::uint64_t stream) const {
        std::uint64_t s = state_ ^ (0xa0761d6478bd642full * (stream + 1));
        return Rng(s);
    }

private:
    std::uint64_t state_;
};

}  // namespace pigeon
