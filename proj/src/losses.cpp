#include "cpga/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cpga::losses {

namespace {

void require_batch(const Mat& x, std::span<const int> labels, const char* what) {
    if (static_cast<std::size_t>(x.rows()) != labels.size()) {
        throw ShapeError(std::string(what) + ": " + std::to_string(x.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw ShapeError(std::string(what) + ": empty batch");
}

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

double ce_prototype(const Mat& probs, std::span<const int> labels, Mat* grad_probs) {
    require_batch(probs, labels, "ce_prototype");
    require_labels(labels, static_cast<int>(probs.cols()), "ce_prototype");
    const double n = static_cast<double>(labels.size());
    if (grad_probs) *grad_probs = Mat::Zero(probs.rows(), probs.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const double p = probs(i, labels[static_cast<std::size_t>(i)]);
        loss -= std::log(std::clamp(p, kLogEps, 1.0));
        if (grad_probs && p > kLogEps && p <= 1.0) (*grad_probs)(i, labels[static_cast<std::size_t>(i)]) = -1.0 / (n * p);
    }
    return loss / n;
}

double label_smoothing_ce(const Mat& probs, std::span<const int> labels, double alpha, Mat* grad_probs) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("label_smoothing: alpha must be in [0, 1)");
    require_batch(probs, labels, "label_smoothing_ce");
    const int k = static_cast<int>(probs.cols());
    require_labels(labels, k, "label_smoothing_ce");
    const double n = static_cast<double>(labels.size());
    if (grad_probs) *grad_probs = Mat::Zero(probs.rows(), probs.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        for (int c = 0; c < k; ++c) {
            const double t = (c == labels[static_cast<std::size_t>(i)] ? 1.0 - alpha : 0.0) + alpha / k;
            if (t == 0.0) continue;
            const double p = probs(i, c);
            loss -= t * std::log(std::clamp(p, kLogEps, 1.0));
            if (grad_probs && p > kLogEps && p <= 1.0) (*grad_probs)(i, c) = -t / (n * p);
        }
    }
    return loss / n;
}

ContrastPlan sample_contrast_plan(std::span<const int> labels, int num_classes, std::mt19937_64& rng) {
    require_labels(labels, num_classes, "sample_contrast_plan");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    for (int c = 0; c < num_classes; ++c) {
        if (members[static_cast<std::size_t>(c)].size() < 2) {
            throw ContractError("prototype_infonce: class " + std::to_string(c) + " has fewer than 2 prototypes");
        }
    }
    ContrastPlan plan;
    plan.positive.resize(labels.size());
    plan.negatives.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& same = members[static_cast<std::size_t>(labels[i])];
        // Uniform over the other members of the anchor's class.
        const auto self = static_cast<std::size_t>(
            std::find(same.begin(), same.end(), static_cast<int>(i)) - same.begin());
        std::uniform_int_distribution<std::size_t> pick(0, same.size() - 2);
        std::size_t j = pick(rng);
        if (j >= self) ++j;
        plan.positive[i] = same[j];
        for (int c = 0; c < num_classes; ++c) {
            if (c == labels[i]) continue;
            const auto& other = members[static_cast<std::size_t>(c)];
            std::uniform_int_distribution<std::size_t> pick_neg(0, other.size() - 1);
            plan.negatives[i].push_back(other[pick_neg(rng)]);
        }
    }
    return plan;
}

double prototype_infonce(const Mat& prototypes, std::span<const int> labels, int num_classes,
                         const ContrastPlan& plan, Temperature tau, Mat* grad_prototypes) {
    require_batch(prototypes, labels, "prototype_infonce");
    require_labels(labels, num_classes, "prototype_infonce");
    const std::size_t n = labels.size();
    if (plan.positive.size() != n || plan.negatives.size() != n) throw ShapeError("prototype_infonce: plan size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        const int p = plan.positive[i];
        if (p < 0 || static_cast<std::size_t>(p) >= n || p == static_cast<int>(i) || labels[static_cast<std::size_t>(p)] != labels[i]) {
            throw ContractError("prototype_infonce: invalid positive for anchor " + std::to_string(i));
        }
        if (plan.negatives[i].size() != static_cast<std::size_t>(num_classes - 1)) {
            throw ContractError("prototype_infonce: anchor " + std::to_string(i) + " needs K-1 negatives");
        }
        for (int j : plan.negatives[i]) {
            if (j < 0 || static_cast<std::size_t>(j) >= n || labels[static_cast<std::size_t>(j)] == labels[i]) {
                throw ContractError("prototype_infonce: invalid negative for anchor " + std::to_string(i));
            }
        }
    }

    const NormalizedRows unit = normalize_rows(prototypes);
    const double inv_tau = 1.0 / tau.value();
    Mat grad_unit = Mat::Zero(prototypes.rows(), prototypes.cols());
    std::vector<int> partners;
    std::vector<double> logits;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        partners.assign(1, plan.positive[i]);
        partners.insert(partners.end(), plan.negatives[i].begin(), plan.negatives[i].end());
        logits.resize(partners.size());
        const auto a = static_cast<Eigen::Index>(i);
        for (std::size_t t = 0; t < partners.size(); ++t) logits[t] = unit.unit.row(a).dot(unit.unit.row(partners[t])) * inv_tau;
        const double lse = log_sum_exp(logits);
        loss += lse - logits[0];
        if (grad_prototypes) {
            for (std::size_t t = 0; t < partners.size(); ++t) {
                const double g = (std::exp(logits[t] - lse) - (t == 0 ? 1.0 : 0.0)) * inv_tau / static_cast<double>(n);
                grad_unit.row(a) += g * unit.unit.row(partners[t]);
                grad_unit.row(partners[t]) += g * unit.unit.row(a);
            }
        }
    }
    if (grad_prototypes) *grad_prototypes = normalize_rows_backward(unit, grad_unit);
    return loss / static_cast<double>(n);
}

double weighted_contrastive(const Mat& u, const Mat& v, std::span<const int> pseudo_labels,
                            std::span<const double> weights, Temperature tau, int num_classes, Mat* grad_u,
                            Mat* grad_v) {
    if (v.rows() != num_classes) {
        throw ShapeError("weighted_contrastive: expected one prototype per class (" + std::to_string(num_classes) +
                         "), got " + std::to_string(v.rows()));
    }
    require_batch(u, pseudo_labels, "weighted_contrastive");
    if (weights.size() != pseudo_labels.size()) throw ShapeError("weighted_contrastive: one weight per sample");
    if (u.cols() != v.cols()) throw ShapeError("weighted_contrastive: u and v widths differ");
    require_labels(pseudo_labels, num_classes, "weighted_contrastive");
    require_unit_rows(u, "weighted_contrastive u");
    require_unit_rows(v, "weighted_contrastive v");
    for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0)) throw ContractError("weighted_contrastive: weights must lie in [0, 1]");
    }
    const double n = static_cast<double>(pseudo_labels.size());
    const Mat logits = u * v.transpose() / tau.value();
    const Mat probs = softmax_rows(logits);
    Mat grad_logits = Mat::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto s = static_cast<std::size_t>(i);
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        loss += weights[s] * (lse - logits(i, pseudo_labels[s]));
        grad_logits.row(i) = weights[s] * probs.row(i) / n;
        grad_logits(i, pseudo_labels[s]) -= weights[s] / n;
    }
    grad_logits /= tau.value();
    if (grad_u) *grad_u = grad_logits * v;
    if (grad_v) *grad_v = grad_logits.transpose() * u;
    return loss / n;
}

double elr(const Mat& predictions, const Mat& bank_rows, Mat* grad_predictions) {
    if (predictions.rows() != bank_rows.rows() || predictions.cols() != bank_rows.cols()) {
        throw ShapeError("elr: predictions and bank rows differ in shape");
    }
    if (predictions.rows() == 0) throw ShapeError("elr: empty batch");
    const double n = static_cast<double>(predictions.rows());
    if (grad_predictions) *grad_predictions = Mat::Zero(predictions.rows(), predictions.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
        const double dot = predictions.row(i).dot(bank_rows.row(i));
        const double c = std::clamp(dot, 0.0, 1.0 - kLogEps);
        loss += std::log(1.0 - c);
        if (grad_predictions && dot >= 0.0 && dot < 1.0 - kLogEps) {
            grad_predictions->row(i) = -bank_rows.row(i) / ((1.0 - dot) * n);
        }
    }
    return loss / n;
}

double neighborhood_clustering(const Mat& similarities, Mat* grad_similarities) {
    if (similarities.rows() == 0) throw ShapeError("neighborhood_clustering: empty batch");
    const double n = static_cast<double>(similarities.rows());
    if (grad_similarities) *grad_similarities = Mat::Zero(similarities.rows(), similarities.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < similarities.rows(); ++i) {
        const double total = similarities.row(i).sum();
        if (std::abs(total - 1.0) > 1e-6) {
            throw ContractError("neighborhood_clustering: row " + std::to_string(i) + " sums to " + std::to_string(total));
        }
        for (Eigen::Index j = 0; j < similarities.cols(); ++j) {
            const double s = similarities(i, j);
            if (s <= 0.0) continue;
            const double ls = std::log(s);
            loss -= s * ls;
            if (grad_similarities) (*grad_similarities)(i, j) = -(ls + 1.0) / n;
        }
    }
    return loss / n;
}

Stage1Terms stage1_objective(const Generator& generator, const Classifier& classifier, std::span<const int> labels,
                             const Mat& noise, const ContrastPlan& plan, Temperature tau, bool use_contrastive,
                             Grads* grad_generator) {
    if (classifier.feature_dim() != generator.feature_dim()) throw ShapeError("stage1: generator/classifier width mismatch");
    Stage1Terms terms;
    GeneratorCache gcache;
    terms.prototypes = generator.forward(labels, noise, grad_generator ? &gcache : nullptr);
    ClassifierCache ccache;
    const Mat probs = softmax_rows(classifier.logits(terms.prototypes, &ccache));
    Mat grad_probs;
    terms.ce = ce_prototype(probs, labels, grad_generator ? &grad_probs : nullptr);
    Mat grad_conp;
    if (use_contrastive) {
        terms.contrastive = prototype_infonce(terms.prototypes, labels, classifier.num_classes(), plan, tau,
                                              grad_generator ? &grad_conp : nullptr);
    }
    terms.total = terms.ce + terms.contrastive;
    if (grad_generator) {
        // The classifier only passes gradients through to its input.
        Mat grad_p = classifier.backward(ccache, softmax_rows_backward(probs, grad_probs), nullptr);
        if (use_contrastive) grad_p += grad_conp;
        generator.backward(gcache, grad_p, *grad_generator);
    }
    return terms;
}

Stage2Terms stage2_objective(const Extractor& extractor, const Projector& projector, const Stage2Batch& batch,
                             const Stage2Weights& weights, Grads* grad_extractor, Grads* grad_projector) {
    if (weights.lambda < 0.0) throw ConfigError("lambda: must be non-negative");
    if (weights.eta < 0.0) throw ConfigError("eta: must be non-negative");
    const std::size_t b = batch.indices.size();
    if (static_cast<std::size_t>(batch.inputs.rows()) != b) throw ShapeError("stage2: one input row per index");
    if (batch.pseudo_labels.size() != b || batch.weights.size() != b) throw ShapeError("stage2: label/weight count");
    const int num_classes = static_cast<int>(batch.prototypes.rows());
    const bool want_grad = grad_extractor || grad_projector;

    Stage2Terms terms;
    MlpCache ecache;
    terms.features = extractor.forward(batch.inputs, &ecache);
    ProjectorCache ucache;
    ProjectorCache vcache;
    const Mat u = projector.forward(terms.features, &ucache);
    const Mat v = projector.forward(batch.prototypes, &vcache);

    Mat grad_u = Mat::Zero(u.rows(), u.cols());
    Mat grad_v = Mat::Zero(v.rows(), v.cols());
    Mat grad_q = Mat::Zero(terms.features.rows(), terms.features.cols());

    if (weights.use_contrastive) {
        std::vector<double> ones;
        std::span<const double> w = batch.weights;
        if (!weights.use_weights) {
            ones.assign(b, 1.0);
            w = ones;
        }
        Mat gu, gv;
        terms.contrastive = weighted_contrastive(u, v, batch.pseudo_labels, w, batch.tau, num_classes,
                                                 want_grad ? &gu : nullptr, want_grad ? &gv : nullptr);
        if (want_grad) {
            grad_u += gu;
            grad_v += gv;
        }
    }

    terms.predictions = nonparametric_predict(u, v, batch.tau);
    if (weights.use_elr) {
        Mat grad_o;
        terms.elr = elr(terms.predictions, batch.predictions.rows(batch.indices), want_grad ? &grad_o : nullptr);
        if (want_grad) {
            Mat gu, gv;
            nonparametric_predict_backward(u, v, terms.predictions, weights.lambda * grad_o, batch.tau, gu, gv);
            grad_u += gu;
            grad_v += gv;
        }
    }

    if (weights.use_nc) {
        NeighborCache ncache;
        const Mat s = neighbor_similarities(batch.features, batch.indices, terms.features, batch.tau,
                                            want_grad ? &ncache : nullptr);
        Mat grad_s;
        terms.nc = neighborhood_clustering(s, want_grad ? &grad_s : nullptr);
        if (want_grad) grad_q += neighbor_similarities_backward(ncache, weights.eta * grad_s);
    }

    terms.total = terms.contrastive + (weights.use_elr ? weights.lambda * terms.elr : 0.0) +
                  (weights.use_nc ? weights.eta * terms.nc : 0.0);

    if (want_grad) {
        Grads scratch = zero_grads(projector.params);
        Grads& gp = grad_projector ? *grad_projector : scratch;
        grad_q += projector.backward(ucache, grad_u, &gp);
        projector.backward(vcache, grad_v, &gp);
        if (grad_extractor) extractor.backward(ecache, grad_q, *grad_extractor);
    }
    return terms;
}

}  // namespace cpga::losses
