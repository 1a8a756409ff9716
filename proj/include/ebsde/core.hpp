#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ebsde {

/// Largest state dimension supported by the fixed-capacity vector types.
inline constexpr int kMaxDim = 6;

/// Stack-allocated dynamic vectors and matrices (no heap traffic in path loops).
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

using ScalarFn = std::function<double(const Vec&)>;
using VectorFn = std::function<Vec(const Vec&)>;
using MatrixFn = std::function<Mat(const Vec&)>;

enum class ErrorCode {
    InvalidArgument,
    NonConvergence,
    NotOnBoundary,
    StepTooLarge,
    NotKolmogorov,
    SigmaNotConstant,
    NonConvexPotential,
    PicardDiverged,
    NoConvergence,
    SchemeMismatch,
    FlatCurve,
    BracketFailure,
    SingularSigma,
    DegenerateLocalTime,
    WeightDegeneracy,
    ConfigError,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NonConvergence: return "NonConvergence";
        case ErrorCode::NotOnBoundary: return "NotOnBoundary";
        case ErrorCode::StepTooLarge: return "StepTooLarge";
        case ErrorCode::NotKolmogorov: return "NotKolmogorov";
        case ErrorCode::SigmaNotConstant: return "SigmaNotConstant";
        case ErrorCode::NonConvexPotential: return "NonConvexPotential";
        case ErrorCode::PicardDiverged: return "PicardDiverged";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::SchemeMismatch: return "SchemeMismatch";
        case ErrorCode::FlatCurve: return "FlatCurve";
        case ErrorCode::BracketFailure: return "BracketFailure";
        case ErrorCode::SingularSigma: return "SingularSigma";
        case ErrorCode::DegenerateLocalTime: return "DegenerateLocalTime";
        case ErrorCode::WeightDegeneracy: return "WeightDegeneracy";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Every failure raised by the library. `module()` names the subsystem that
/// raised it so the CLI can point at the right remedy.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string module, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + " [" + module + "]: " + what),
          code_(code),
          module_(std::move(module)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& module() const noexcept { return module_; }

private:
    ErrorCode code_;
    std::string module_;
};

/// A twice differentiable scalar field: value, gradient and Hessian.
struct C2Field {
    ScalarFn value;
    VectorFn gradient;
    MatrixFn hessian;
};

/// Monte Carlo or grid estimate with its standard error.
struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;
};

inline Estimate estimate_from(const std::vector<double>& xs) {
    Estimate e;
    e.samples = xs.size();
    if (xs.empty()) return e;
    double s = 0.0;
    for (double x : xs) s += x;
    e.mean = s / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - e.mean) * (x - e.mean);
        e.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    }
    return e;
}

/// Deterministic 64-bit mixer used to derive per-path RNG streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent random stream for one path: standard normals and uniforms in (0, 1].
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t stream)
        : engine_(splitmix64(seed ^ splitmix64(stream + 0x51ED270B27D2E4A1ULL))) {}

    double normal() { return normal_(engine_); }
    double uniform_open() { return 1.0 - uniform_(engine_); }

    Vec normal_vector(int dim) {
        Vec v(dim);
        for (int i = 0; i < dim; ++i) v[i] = normal();
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must
/// write only its own output slot; results are then independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned threads = 0) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

inline Vec zeros(int dim) { return Vec::Zero(dim); }
inline Mat identity(int dim) { return Mat::Identity(dim, dim); }

/// Size of the dyadic grid used for a requested density; grids for
/// increasing densities are nested, so grid suprema never decrease.
inline int nested_grid_size(int density) {
    int m = 1;
    while (m + 1 < density) m *= 2;
    return m + 1;
}

}  // namespace ebsde
