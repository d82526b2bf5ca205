#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "cpga/tensor.hpp"

namespace cpga {

struct CentroidSet {
    Mat centroids;  // K x d
    int epoch = 0;
};

struct PseudoLabels {
    Labels labels;
    std::vector<double> weights;
};

/// Probability-weighted feature means, c_k = sum_i p_ik q_i / sum_i p_ik.
/// A class whose probability mass is below 1e-12 falls back to the matching
/// row of `fallback` (the classifier's unit direction); without a fallback
/// that is a ContractError.
CentroidSet init_centroids(const Mat& features, const Mat& probs, const Mat* fallback = nullptr);

// Cosine-nearest centroid per row; ties go to the lowest class index.
Labels assign_labels(const Mat& features, const CentroidSet& centroids);

// Per-class mean of the features carrying each label; empty classes keep the previous centroid.
CentroidSet refresh_centroids(const Mat& features, std::span<const int> labels, const CentroidSet& previous);

/// w_i = softmax_k(cos(q_i, c_k) / tau) evaluated at the assigned class.
std::vector<double> confidence(const Mat& features, const CentroidSet& centroids, std::span<const int> labels,
                               Temperature tau);

// Diagnostic dump: header "index,label,weight" then one row per sample.
void write_pseudo_labels(std::ostream& out, const PseudoLabels& pseudo);

}  // namespace cpga
