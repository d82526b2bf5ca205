#include "cpga/tensor.hpp"

#include <cmath>
#include <string>

namespace cpga {

Temperature::Temperature(double value) : value_(value) {
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw ConfigError("tau: temperature must be positive, got " + std::to_string(value));
    }
}

Mat softmax_rows(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

Mat softmax_rows_backward(const Mat& probs, const Mat& grad_probs) {
    const Vec inner = (probs.array() * grad_probs.array()).rowwise().sum().matrix();
    return (probs.array() * (grad_probs.colwise() - inner).array()).matrix();
}

NormalizedRows normalize_rows(const Mat& x) {
    NormalizedRows out{x, Vec(x.rows())};
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double n = out.unit.row(i).norm();
        if (n < kNormEps) {
            out.unit(i, 0) += kNormEps;
            n = out.unit.row(i).norm();
        }
        out.norms(i) = n;
        out.unit.row(i) /= n;
    }
    return out;
}

Mat normalize_rows_backward(const NormalizedRows& forward, const Mat& grad_unit) {
    const Vec proj = (forward.unit.array() * grad_unit.array()).rowwise().sum().matrix();
    Mat g = grad_unit - forward.unit.cwiseProduct(proj.replicate(1, grad_unit.cols()));
    return g.array().colwise() / forward.norms.array();
}

double cosine(const Eigen::Ref<const RowVec>& a, const Eigen::Ref<const RowVec>& b) {
    const double na = std::max(a.norm(), kNormEps);
    const double nb = std::max(b.norm(), kNormEps);
    return a.dot(b) / (na * nb);
}

void require_unit_rows(const Mat& x, const char* what, double tol) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        if (std::abs(n - 1.0) > tol) {
            throw ContractError(std::string(what) + ": row " + std::to_string(i) +
                                " is not unit norm (norm " + std::to_string(n) + ")");
        }
    }
}

void require_cols(const Mat& x, Eigen::Index cols, const char* what) {
    if (x.cols() != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                         std::to_string(x.cols()));
    }
}

void require_labels(std::span<const int> labels, int num_classes, const char* what) {
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw ContractError(std::string(what) + ": label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
    }
}

Mat gather_rows(const Mat& x, std::span<const int> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
    if (predicted.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

Labels argmax_rows(const Mat& x) {
    Labels out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < x.cols(); ++k) {
            if (x(i, k) > x(i, best)) best = k;
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace cpga
