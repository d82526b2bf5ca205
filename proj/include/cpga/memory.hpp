#pragma once

#include <span>

#include "cpga/tensor.hpp"

namespace cpga {

/// o_{i,k} = softmax_k(u_i . v_k / tau). Both inputs must have unit rows.
Mat nonparametric_predict(const Mat& u, const Mat& v, Temperature tau);

// Gradients of a loss w.r.t. u and v given its gradient w.r.t. the predictions.
void nonparametric_predict_backward(const Mat& u, const Mat& v, const Mat& predictions, const Mat& grad_predictions,
                                    Temperature tau, Mat& grad_u, Mat& grad_v);

enum class BankInit { Zero, Uniform };

/// Momentum bank of non-parametric predictions, h_i <- beta h_i + (1 - beta) o_i.
class PredictionBank {
public:
    PredictionBank(int size, int num_classes, double beta, BankInit init = BankInit::Zero);

    void update(std::span<const int> indices, const Mat& predictions);

    const Mat& values() const { return h_; }
    Mat rows(std::span<const int> indices) const { return gather_rows(h_, indices); }
    double beta() const { return beta_; }
    int size() const { return static_cast<int>(h_.rows()); }

    // Restores a bank from checkpointed state.
    static PredictionBank from_values(Mat values, double beta);

private:
    Mat h_;
    double beta_;
};

// Most recent feature of every target sample.
class FeatureBank {
public:
    explicit FeatureBank(Mat initial);

    void update(std::span<const int> indices, const Mat& features);

    const Mat& values() const { return q_; }
    int size() const { return static_cast<int>(q_.rows()); }

private:
    Mat q_;
};

/// s_{i,j} = softmax over j != i of cos(q_i, q_j) / tau for the bank row i.
/// Returns a length n-1 distribution ordered by bank index with i removed.
Vec neighbor_similarities(const FeatureBank& bank, int anchor, Temperature tau);

struct NeighborCache {
    NormalizedRows anchors;
    Mat bank_unit;
    Mat similarities;
    double inv_tau = 1.0;
};

/// Batched form used in training: anchors are the current (differentiable)
/// features of samples `indices`, compared against the stored bank. The
/// result is batch x n with the self column held at exactly zero.
Mat neighbor_similarities(const FeatureBank& bank, std::span<const int> indices, const Mat& anchor_features,
                          Temperature tau, NeighborCache* cache = nullptr);

Mat neighbor_similarities_backward(const NeighborCache& cache, const Mat& grad_similarities);

}  // namespace cpga
