#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace vlab {

/// Neumaier-compensated accumulator. Summation order is the insertion order,
/// so results are reproducible as long as callers add in a fixed order.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }

    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double stable_sum(std::span<const double> values) noexcept {
    CompensatedSum acc;
    for (const double v : values) acc.add(v);
    return acc.value();
}

inline double stable_mean(std::span<const double> values) noexcept {
    return values.empty() ? 0.0 : stable_sum(values) / static_cast<double>(values.size());
}

/// Elementwise compensated accumulation of equally sized vectors.
class CompensatedVectorSum {
public:
    explicit CompensatedVectorSum(std::size_t dim) : sum_(dim, 0.0), comp_(dim, 0.0) {}

    void add(std::span<const double> x) noexcept {
        for (std::size_t i = 0; i < sum_.size(); ++i) {
            const double s = sum_[i];
            const double t = s + x[i];
            if (std::abs(s) >= std::abs(x[i]))
                comp_[i] += (s - t) + x[i];
            else
                comp_[i] += (x[i] - t) + s;
            sum_[i] = t;
        }
    }

    std::vector<double> value() const {
        std::vector<double> out(sum_.size());
        for (std::size_t i = 0; i < sum_.size(); ++i) out[i] = sum_[i] + comp_[i];
        return out;
    }

private:
    std::vector<double> sum_;
    std::vector<double> comp_;
};

}  // namespace vlab
