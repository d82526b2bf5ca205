#include "cpga/labeling.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

namespace cpga {

CentroidSet init_centroids(const Mat& features, const Mat& probs, const Mat* fallback) {
    if (features.rows() != probs.rows()) throw ShapeError("init_centroids: one probability row per feature row");
    if (features.rows() == 0) throw ShapeError("init_centroids: empty feature batch");
    const Mat weighted = probs.transpose() * features;  // K x d
    const RowVec mass = probs.colwise().sum();
    CentroidSet out{Mat(probs.cols(), features.cols()), 0};
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
        if (mass(k) < 1e-12) {
            if (!fallback) {
                throw ContractError("init_centroids: class " + std::to_string(k) + " has no probability mass");
            }
            if (fallback->rows() != probs.cols() || fallback->cols() != features.cols()) {
                throw ShapeError("init_centroids: fallback must be K x d");
            }
            out.centroids.row(k) = fallback->row(k);
        } else {
            out.centroids.row(k) = weighted.row(k) / mass(k);
        }
    }
    return out;
}

Labels assign_labels(const Mat& features, const CentroidSet& centroids) {
    require_cols(features, centroids.centroids.cols(), "assign_labels");
    const Mat q = normalize_rows(features).unit;
    const Mat c = normalize_rows(centroids.centroids).unit;
    // Pairwise dots (not a GEMM) so identical centroids give bit-identical scores.
    Mat sims(q.rows(), c.rows());
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        for (Eigen::Index k = 0; k < c.rows(); ++k) sims(i, k) = q.row(i).dot(c.row(k));
    }
    // argmax_rows keeps the first maximum, i.e. the lowest class index on ties.
    return argmax_rows(sims);
}

CentroidSet refresh_centroids(const Mat& features, std::span<const int> labels, const CentroidSet& previous) {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("refresh_centroids: label count");
    const auto k = previous.centroids.rows();
    require_labels(labels, static_cast<int>(k), "refresh_centroids");
    require_cols(features, previous.centroids.cols(), "refresh_centroids");
    Mat sums = Mat::Zero(k, features.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sums.row(labels[i]) += features.row(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(labels[i])];
    }
    CentroidSet out{previous.centroids, previous.epoch + 1};
    for (Eigen::Index c = 0; c < k; ++c) {
        const int count = counts[static_cast<std::size_t>(c)];
        if (count > 0) out.centroids.row(c) = sums.row(c) / static_cast<double>(count);
    }
    return out;
}

std::vector<double> confidence(const Mat& features, const CentroidSet& centroids, std::span<const int> labels,
                               Temperature tau) {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("confidence: label count");
    require_labels(labels, static_cast<int>(centroids.centroids.rows()), "confidence");
    const Mat sims = normalize_rows(features).unit * normalize_rows(centroids.centroids).unit.transpose();
    const Mat p = softmax_rows(sims / tau.value());
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = p(static_cast<Eigen::Index>(i), labels[i]);
    return w;
}

void write_pseudo_labels(std::ostream& out, const PseudoLabels& pseudo) {
    if (pseudo.labels.size() != pseudo.weights.size()) throw ShapeError("write_pseudo_labels: length mismatch");
    out << "index,label,weight\n" << std::setprecision(17);
    for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
        out << i << ',' << pseudo.labels[i] << ',' << pseudo.weights[i] << '\n';
    }
}

}  // namespace cpga
