#pragma once

#include <random>
#include <span>
#include <vector>

#include "cpga/memory.hpp"
#include "cpga/models.hpp"
#include "cpga/tensor.hpp"

// Every loss is reduced by the arithmetic mean over the batch. Where a
// `grad` out-parameter is provided it receives dLoss/dInput of the same shape.
namespace cpga::losses {

// Mean of -log(clamp(p[y], eps, 1)).
double ce_prototype(const Mat& probs, std::span<const int> labels, Mat* grad_probs = nullptr);

/// Cross entropy against (1 - alpha) onehot + alpha / K. alpha in [0, 1).
double label_smoothing_ce(const Mat& probs, std::span<const int> labels, double alpha, Mat* grad_probs = nullptr);

// Positive and K-1 negative partners of every anchor in a prototype batch.
struct ContrastPlan {
    std::vector<int> positive;
    std::vector<std::vector<int>> negatives;  // one per other class, ascending class order
};

/// Draws, for every anchor, one other same-class prototype as the positive
/// and one prototype of each other class as a negative, uniformly at random.
/// Throws ContractError if any class has fewer than two prototypes.
ContrastPlan sample_contrast_plan(std::span<const int> labels, int num_classes, std::mt19937_64& rng);

/// InfoNCE over generated prototypes with cosine similarity:
/// -log exp(cos(p, k+)/tau) / (exp(cos(p, k+)/tau) + sum_j exp(cos(p, k_j-)/tau)).
double prototype_infonce(const Mat& prototypes, std::span<const int> labels, int num_classes,
                         const ContrastPlan& plan, Temperature tau, Mat* grad_prototypes = nullptr);

/// -w_i log softmax(u_i v^T / tau)[y_i]. v has exactly one unit row per class,
/// u has unit rows and weights lie in [0, 1].
double weighted_contrastive(const Mat& u, const Mat& v, std::span<const int> pseudo_labels,
                            std::span<const double> weights, Temperature tau, int num_classes,
                            Mat* grad_u = nullptr, Mat* grad_v = nullptr);

// Mean of log(1 - clamp(o_i . h_i, 0, 1 - eps)). The bank rows are constants.
double elr(const Mat& predictions, const Mat& bank_rows, Mat* grad_predictions = nullptr);

// Mean entropy of the similarity rows, with 0 log 0 = 0. Rows must sum to 1.
double neighborhood_clustering(const Mat& similarities, Mat* grad_similarities = nullptr);

struct Stage1Terms {
    double ce = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
    Mat prototypes;
};

/// L_ce + L_con^p on one generated batch. Gradients flow to the generator
/// only; the classifier is treated as a constant.
Stage1Terms stage1_objective(const Generator& generator, const Classifier& classifier, std::span<const int> labels,
                             const Mat& noise, const ContrastPlan& plan, Temperature tau, bool use_contrastive = true,
                             Grads* grad_generator = nullptr);

struct Stage2Weights {
    double lambda = 5.0;
    double eta = 0.05;
    bool use_contrastive = true;
    bool use_weights = true;
    bool use_elr = true;
    bool use_nc = true;
};

struct Stage2Batch {
    const Mat& inputs;
    std::span<const int> indices;
    std::span<const int> pseudo_labels;
    std::span<const double> weights;
    const Mat& prototypes;  // one per class, in class order
    const PredictionBank& predictions;
    const FeatureBank& features;
    Temperature tau;
};

struct Stage2Terms {
    double contrastive = 0.0;
    double elr = 0.0;
    double nc = 0.0;
    double total = 0.0;
    Mat features;     // extractor output for the batch
    Mat predictions;  // non-parametric predictions o for the batch
};

/// L_con^w + lambda L_elr + eta L_nc for one target batch, with gradients
/// w.r.t. the extractor and projector parameters.
Stage2Terms stage2_objective(const Extractor& extractor, const Projector& projector, const Stage2Batch& batch,
                             const Stage2Weights& weights, Grads* grad_extractor = nullptr,
                             Grads* grad_projector = nullptr);

}  // namespace cpga::losses
