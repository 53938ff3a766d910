#pragma once

#include "seqnet/model.hpp"
#include "seqnet/tensor.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace seqnet::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false,
                            double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// Fresh models have zero biases, which leaves many pre-activations exactly on a
// ReLU kink. Biases and betas (and, with `stats`, the running statistics) get
// continuous random values instead. A coarse grid is not good enough: an exact
// zero beta on a constant channel puts a kink right at the evaluation point.
inline void randomise_offsets(SeqNetModel& model, std::mt19937_64& rng, bool stats = false) {
    std::uniform_real_distribution<double> offset(-0.1, 0.1), var(0.5, 1.5);
    for (auto& [name, t] : model.parameters()) {
        if (name.ends_with("bias") || name.ends_with("beta")) {
            for (double& v : t.mutable_data()) v = offset(rng);
        }
    }
    if (!stats) return;
    for (auto& [name, t] : model.buffers()) {
        const bool is_var = name.find("running_var") != std::string::npos;
        for (double& v : t.mutable_data()) v = is_var ? var(rng) : offset(rng);
    }
}

struct SmoothCheck {
    double worst = 0.0;        // max |a - n| / max(|a|, |n|, floor) over probed coordinates
    std::size_t probed = 0;
    std::size_t kinks = 0;     // draws rejected because x +- h changed the ReLU pattern
};

// Central differences are only an oracle where f is smooth on [x - h, x + h].
// With ~10^5 ReLUs the smallest pre-activations sit near 1e-8, so any fixed h
// sometimes straddles a kink. Coordinates are drawn at random and a draw is
// rejected when either probe runs through a different ReLU on/off pattern than
// the base point; `count` accepted coordinates are checked (at most 20 * count
// draws).
inline void smooth_gradient_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, std::mt19937_64& rng,
                                  std::size_t count, SmoothCheck& acc, double h = 1e-7, double floor = 1e-4) {
    const bool had_flag = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    f(x).backward();
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    x.zero_grad();
    x.set_requires_grad(had_flag);

    auto eval = [&](std::uint64_t& pattern) {
        NoGradGuard guard;
        nn::ReluPattern p;
        const double v = f(x).item();
        pattern = p.fingerprint();
        return v;
    };
    std::uint64_t base = 0, up = 0, down = 0;
    eval(base);
    auto values = x.mutable_data();
    std::size_t accepted = 0;
    for (std::size_t draw = 0; draw < 20 * count && accepted < count; ++draw) {
        const std::size_t i = rng() % values.size();
        const double original = values[i];
        values[i] = original + h;
        const double plus = eval(up);
        values[i] = original - h;
        const double minus = eval(down);
        values[i] = original;
        if (up != base || down != base) {
            ++acc.kinks;
            continue;
        }
        const double numeric = (plus - minus) / (2 * h);
        acc.worst = std::max(acc.worst, std::abs(analytic[i] - numeric) /
                                            std::max({std::abs(analytic[i]), std::abs(numeric), floor}));
        ++accepted;
        ++acc.probed;
    }
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() /
                ("seqnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    static int& counter() {
        static int n = 0;
        return n;
    }
    std::filesystem::path path_;
};

} // namespace seqnet::testing
