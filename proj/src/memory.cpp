#include "cpga/memory.hpp"

#include <limits>
#include <string>
#include <vector>

namespace cpga {

namespace {

void require_unique_in_range(std::span<const int> indices, int size, const char* what) {
    std::vector<char> seen(static_cast<std::size_t>(size), 0);
    for (int i : indices) {
        if (i < 0 || i >= size) {
            throw ContractError(std::string(what) + ": index " + std::to_string(i) + " out of range");
        }
        if (seen[static_cast<std::size_t>(i)]) {
            throw ContractError(std::string(what) + ": duplicate index " + std::to_string(i) + " in one batch");
        }
        seen[static_cast<std::size_t>(i)] = 1;
    }
}

}  // namespace

Mat nonparametric_predict(const Mat& u, const Mat& v, Temperature tau) {
    if (u.cols() != v.cols()) throw ShapeError("nonparametric_predict: u and v widths differ");
    require_unit_rows(u, "nonparametric_predict u");
    require_unit_rows(v, "nonparametric_predict v");
    return softmax_rows(u * v.transpose() / tau.value());
}

void nonparametric_predict_backward(const Mat& u, const Mat& v, const Mat& predictions, const Mat& grad_predictions,
                                    Temperature tau, Mat& grad_u, Mat& grad_v) {
    const Mat grad_logits = softmax_rows_backward(predictions, grad_predictions) / tau.value();
    grad_u = grad_logits * v;
    grad_v = grad_logits.transpose() * u;
}

PredictionBank::PredictionBank(int size, int num_classes, double beta, BankInit init) : beta_(beta) {
    if (size < 1 || num_classes < 1) throw ConfigError("prediction bank: size and num_classes must be positive");
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta: momentum must be in [0, 1]");
    const double fill = init == BankInit::Uniform ? 1.0 / num_classes : 0.0;
    h_ = Mat::Constant(size, num_classes, fill);
}

PredictionBank PredictionBank::from_values(Mat values, double beta) {
    PredictionBank bank(static_cast<int>(values.rows()), static_cast<int>(values.cols()), beta);
    bank.h_ = std::move(values);
    return bank;
}

void PredictionBank::update(std::span<const int> indices, const Mat& predictions) {
    require_unique_in_range(indices, size(), "prediction bank");
    if (static_cast<std::size_t>(predictions.rows()) != indices.size() || predictions.cols() != h_.cols()) {
        throw ShapeError("prediction bank: update shape mismatch");
    }
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = indices[r];
        h_.row(i) = beta_ * h_.row(i) + (1.0 - beta_) * predictions.row(static_cast<Eigen::Index>(r));
    }
}

FeatureBank::FeatureBank(Mat initial) : q_(std::move(initial)) {
    if (q_.rows() < 1) throw ConfigError("feature bank: needs at least one row");
    if (!q_.allFinite()) throw ContractError("feature bank: non-finite initial features");
}

void FeatureBank::update(std::span<const int> indices, const Mat& features) {
    require_unique_in_range(indices, size(), "feature bank");
    if (static_cast<std::size_t>(features.rows()) != indices.size() || features.cols() != q_.cols()) {
        throw ShapeError("feature bank: update shape mismatch");
    }
    for (std::size_t r = 0; r < indices.size(); ++r) q_.row(indices[r]) = features.row(static_cast<Eigen::Index>(r));
}

Vec neighbor_similarities(const FeatureBank& bank, int anchor, Temperature tau) {
    const int n = bank.size();
    if (n < 2) throw ContractError("neighbor_similarities: bank needs at least 2 entries");
    if (anchor < 0 || anchor >= n) throw ContractError("neighbor_similarities: anchor out of range");
    const Mat unit = normalize_rows(bank.values()).unit;
    Vec logits(n - 1);
    for (int j = 0, o = 0; j < n; ++j) {
        if (j == anchor) continue;
        logits(o++) = unit.row(anchor).dot(unit.row(j)) / tau.value();
    }
    const double m = logits.maxCoeff();
    Vec s = (logits.array() - m).exp().matrix();
    return s / s.sum();
}

Mat neighbor_similarities(const FeatureBank& bank, std::span<const int> indices, const Mat& anchor_features,
                          Temperature tau, NeighborCache* cache) {
    const int n = bank.size();
    if (n < 2) throw ContractError("neighbor_similarities: bank needs at least 2 entries");
    if (static_cast<std::size_t>(anchor_features.rows()) != indices.size()) {
        throw ShapeError("neighbor_similarities: one anchor feature per index");
    }
    require_cols(anchor_features, bank.values().cols(), "neighbor_similarities");
    for (int i : indices) {
        if (i < 0 || i >= n) throw ContractError("neighbor_similarities: anchor out of range");
    }
    NormalizedRows anchors = normalize_rows(anchor_features);
    Mat bank_unit = normalize_rows(bank.values()).unit;
    Mat logits = anchors.unit * bank_unit.transpose() / tau.value();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        logits(static_cast<Eigen::Index>(r), indices[r]) = -std::numeric_limits<double>::infinity();
    }
    Mat s(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        s.row(r) = (logits.row(r).array() - m).exp().matrix();
        s.row(r) /= s.row(r).sum();
    }
    if (cache) {
        cache->anchors = std::move(anchors);
        cache->bank_unit = std::move(bank_unit);
        cache->similarities = s;
        cache->inv_tau = 1.0 / tau.value();
    }
    return s;
}

Mat neighbor_similarities_backward(const NeighborCache& cache, const Mat& grad_similarities) {
    // The self column has s = 0, so the softmax backward leaves it at zero.
    const Mat grad_logits = softmax_rows_backward(cache.similarities, grad_similarities) * cache.inv_tau;
    return normalize_rows_backward(cache.anchors, grad_logits * cache.bank_unit);
}

}  // namespace cpga
