#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpga/errors.hpp"

namespace cpga {

// Rows are samples throughout the library.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Labels = std::vector<int>;

inline constexpr double kLogEps = 1e-7;
inline constexpr double kNormEps = 1e-12;

class Temperature {
public:
    explicit Temperature(double value);
    double value() const { return value_; }

private:
    double value_;
};

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& logits);

// Gradient w.r.t. logits given probabilities and gradient w.r.t. probabilities.
Mat softmax_rows_backward(const Mat& probs, const Mat& grad_probs);

struct NormalizedRows {
    Mat unit;
    Vec norms;
};

/// L2-normalizes each row. A row whose norm is below kNormEps is first
/// perturbed by kNormEps along its first coordinate, so the output is
/// always unit norm and no division by zero happens.
NormalizedRows normalize_rows(const Mat& x);

Mat normalize_rows_backward(const NormalizedRows& forward, const Mat& grad_unit);

double cosine(const Eigen::Ref<const RowVec>& a, const Eigen::Ref<const RowVec>& b);

// Throws ContractError if any row norm deviates from 1 by more than tol.
void require_unit_rows(const Mat& x, const char* what, double tol = 1e-6);

void require_cols(const Mat& x, Eigen::Index cols, const char* what);

void require_labels(std::span<const int> labels, int num_classes, const char* what);

Mat gather_rows(const Mat& x, std::span<const int> rows);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

Labels argmax_rows(const Mat& x);

// FNV-1a over raw bytes; stable across runs on one platform.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace cpga
