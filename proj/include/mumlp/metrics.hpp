#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace mumlp {

/// cls x cls counts; rows are ground truth, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const { return classes_; }

    void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1) {
        if (truth >= classes_ || predicted >= classes_) {
            throw Error(ErrorKind::LabelOutOfRange, "confusion entry (" + std::to_string(truth) + ", " +
                                                        std::to_string(predicted) + ") outside " + std::to_string(classes_) +
                                                        " classes");
        }
        counts_[truth * classes_ + predicted] += count;
    }

    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }

    std::uint64_t row_sum(std::size_t truth) const {
        std::uint64_t s = 0;
        for (std::size_t j = 0; j < classes_; ++j) s += at(truth, j);
        return s;
    }

    std::uint64_t col_sum(std::size_t predicted) const {
        std::uint64_t s = 0;
        for (std::size_t i = 0; i < classes_; ++i) s += at(i, predicted);
        return s;
    }

    std::uint64_t trace() const {
        std::uint64_t s = 0;
        for (std::size_t i = 0; i < classes_; ++i) s += at(i, i);
        return s;
    }

    std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

    /// Elementwise sum; associative, so partial matrices can be merged in any order.
    ConfusionMatrix& merge(const ConfusionMatrix& other) {
        if (other.classes_ != classes_) throw Error(ErrorKind::ShapeMismatch, "merging confusion matrices of different size");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
        return *this;
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct ClassificationScores {
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class_recall;     // NaN for classes without ground truth
    std::vector<std::size_t> excluded_classes;  // left out of AA (no ground-truth pixels)
    bool degenerate_kappa = false;            // chance agreement was 1
};

/// Overall accuracy, average per-class recall and Cohen's kappa.
inline ClassificationScores classification_scores(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw Error(ErrorKind::EmptyMatrix, "confusion matrix has no entries");
    const double n = static_cast<double>(total);
    ClassificationScores s;
    s.oa = static_cast<double>(cm.trace()) / n;

    double recall_sum = 0.0;
    std::size_t counted = 0;
    s.per_class_recall.resize(cm.classes());
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        const auto row = cm.row_sum(c);
        if (row == 0) {
            s.per_class_recall[c] = std::numeric_limits<double>::quiet_NaN();
            s.excluded_classes.push_back(c);
            continue;
        }
        s.per_class_recall[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
        recall_sum += s.per_class_recall[c];
        ++counted;
    }
    s.aa = recall_sum / static_cast<double>(counted);

    double chance = 0.0;
    for (std::size_t c = 0; c < cm.classes(); ++c)
        chance += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
    chance /= n * n;
    if (chance >= 1.0) {
        s.degenerate_kappa = true;
        s.kappa = s.oa == 1.0 ? 1.0 : 0.0;
    } else {
        s.kappa = (s.oa - chance) / (1.0 - chance);
    }
    return s;
}

struct RunStats {
    std::vector<double> values;
    double mean = 0.0;
    double sample_std = 0.0;
};

inline RunStats run_statistics(std::span<const double> values) {
    if (values.size() < 2) throw Error(ErrorKind::TooFewRuns, "need at least 2 runs, got " + std::to_string(values.size()));
    RunStats r;
    r.values.assign(values.begin(), values.end());
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sample_std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return r;
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double incomplete_beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::incomplete_beta_cf(a, b, x) / a;
    return 1.0 - front * detail::incomplete_beta_cf(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof) {
    if (std::isinf(t)) return 0.0;
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

struct WelchResult {
    double t = 0.0;
    double dof = 0.0;
    double p_two_sided = 1.0;
    bool zero_variance_pair = false;
};

/// Welch's unequal-variance two-sample t test.
inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    const auto sa = run_statistics(a);
    const auto sb = run_statistics(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double va = sa.sample_std * sa.sample_std / na;
    const double vb = sb.sample_std * sb.sample_std / nb;
    WelchResult r;
    if (va + vb == 0.0) {
        r.zero_variance_pair = true;
        const bool same = sa.mean == sb.mean;
        r.t = same ? 0.0 : (sa.mean > sb.mean ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity());
        r.dof = na + nb - 2.0;
        r.p_two_sided = same ? 1.0 : 0.0;
        return r;
    }
    r.t = (sa.mean - sb.mean) / std::sqrt(va + vb);
    r.dof = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    r.p_two_sided = student_t_two_sided_p(r.t, r.dof);
    return r;
}

}  // namespace mumlp
