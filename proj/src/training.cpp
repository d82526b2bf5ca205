#include "cpga/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace cpga {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

enum Salt : std::uint64_t {
    kExtractorInit = 1,
    kClassifierInit,
    kPretrainShuffle,
    kGeneratorInit,
    kStage1Sampling,
    kProjectorInit,
    kStage2Sampling,
    kPseudoNoise,
    kGeometryDraw,
    kReverseInit,
    kReverseShuffle,
    kReversePrototypes,
};

void require_finite(double value, const std::string& where) {
    if (!std::isfinite(value)) throw DivergenceError(where + ": loss became non-finite");
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, std::mt19937_64& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

void write_field(std::ostream& out, double v) {
    out << ',';
    if (!std::isnan(v)) out << v;
}

/// Fits `classifier` (and `extractor`, if given) to labelled inputs by
/// label-smoothed cross entropy. Returns the final training accuracy.
double fit_classifier(Extractor* extractor, Classifier& classifier, const Mat& inputs, std::span<const int> labels,
                      int epochs, double lr, const TrainConfig& cfg, std::uint64_t shuffle_seed) {
    Sgd opt_c(lr, cfg.momentum, cfg.weight_decay);
    Sgd opt_e(lr, cfg.momentum, cfg.weight_decay);
    std::mt19937_64 rng(shuffle_seed);
    const int n = static_cast<int>(inputs.rows());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (const auto& idx : make_batches(n, cfg.batch_size, rng)) {
            const Mat x = gather_rows(inputs, idx);
            Labels y(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) y[i] = labels[static_cast<std::size_t>(idx[i])];
            MlpCache ecache;
            const Mat q = extractor ? extractor->forward(x, &ecache) : x;
            ClassifierCache ccache;
            const Mat probs = softmax_rows(classifier.logits(q, &ccache));
            Mat grad_probs;
            const double loss = losses::label_smoothing_ce(probs, y, cfg.label_smoothing, &grad_probs);
            require_finite(loss, "source pretraining epoch " + std::to_string(epoch + 1));
            Grads gc = zero_grads(classifier.params);
            const Mat grad_q = classifier.backward(ccache, softmax_rows_backward(probs, grad_probs), &gc);
            if (extractor) {
                Grads ge = zero_grads(extractor->params);
                extractor->backward(ecache, grad_q, ge);
                opt_e.step(extractor->params, ge);
            }
            opt_c.step(classifier.params, gc);
        }
    }
    const Mat q = extractor ? extractor->forward(inputs) : inputs;
    return accuracy(argmax_rows(classifier.logits(q)), labels);
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw ConfigError(std::string(name) + ": must be positive");
    };
    auto non_negative = [](double v, const char* name) {
        if (!(v >= 0.0)) throw ConfigError(std::string(name) + ": must be non-negative");
    };
    non_negative(pretrain_epochs, "pretrain_epochs");
    non_negative(stage1_epochs, "stage1_epochs");
    non_negative(stage2_epochs, "stage2_epochs");
    positive(stage1_batches_per_epoch, "stage1_batches_per_epoch");
    positive(pretrain_learning_rate, "pretrain_learning_rate");
    positive(stage1_learning_rate, "stage1_learning_rate");
    positive(learning_rate, "learning_rate");
    positive(batch_size, "batch_size");
    positive(tau, "tau");
    non_negative(lambda, "lambda");
    non_negative(eta, "eta");
    non_negative(weight_decay, "weight_decay");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum: must be in [0, 1)");
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta: must be in [0, 1]");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing: must be in [0, 1)");
    if (pseudo_label_noise < 0.0 || pseudo_label_noise > 1.0) throw ConfigError("pseudo_label_noise: must be in [0, 1]");
    positive(feature_dim, "feature_dim");
    positive(noise_dim, "noise_dim");
    positive(generator_hidden, "generator_hidden");
    positive(projection_dim, "projection_dim");
    positive(reverse_epochs, "reverse_epochs");
    positive(reverse_prototypes_per_class, "reverse_prototypes_per_class");
    if (toggles.stage1_contrastive && stage1_prototypes_per_class < 2) {
        throw ConfigError("stage1_prototypes_per_class: contrastive generation needs at least 2 per class");
    }
    positive(stage1_prototypes_per_class, "stage1_prototypes_per_class");
    if (toggles.use_elr && !toggles.use_contrastive) {
        throw ConfigError("toggles.use_elr: requires use_contrastive");
    }
}

losses::Stage2Weights TrainConfig::stage2_weights() const {
    return {lambda, eta, toggles.use_contrastive, toggles.use_weights, toggles.use_elr, toggles.use_nc};
}

// ---------------------------------------------------------------- metrics

const char* MetricsLog::csv_header() {
    return "epoch,stage,loss_total,loss_ce,loss_conp,loss_conw,loss_elr,loss_nc,target_accuracy,pseudo_accuracy,"
           "mean_weight,inter_distance,intra_distance";
}

void MetricsLog::append(EpochRecord record) {
    if (!records_.empty() && record.epoch <= records_.back().epoch) {
        throw ContractError("metrics log: epoch numbers must increase");
    }
    records_.push_back(std::move(record));
}

void MetricsLog::extend(const MetricsLog& other) {
    for (const auto& r : other.records_) append(r);
}

void MetricsLog::write_csv(std::ostream& out) const {
    out << csv_header() << '\n' << std::setprecision(10);
    for (const auto& r : records_) {
        out << r.epoch << ',' << r.stage;
        for (double v : {r.loss_total, r.loss_ce, r.loss_conp, r.loss_conw, r.loss_elr, r.loss_nc, r.target_accuracy,
                         r.pseudo_accuracy, r.mean_weight, r.inter_distance, r.intra_distance}) {
            write_field(out, v);
        }
        out << '\n';
    }
}

std::string MetricsLog::to_csv() const {
    std::ostringstream out;
    write_csv(out);
    return out.str();
}

MetricsLog MetricsLog::read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != csv_header()) throw ConfigError("metrics log: unexpected CSV header");
    MetricsLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        while (cells.size() < 13) cells.emplace_back();
        if (cells.size() != 13) throw ConfigError("metrics log: expected 13 columns");
        auto num = [](const std::string& s) { return s.empty() ? kNaN : std::stod(s); };
        EpochRecord r;
        r.epoch = std::stoi(cells[0]);
        r.stage = cells[1];
        double* fields[] = {&r.loss_total, &r.loss_ce, &r.loss_conp, &r.loss_conw, &r.loss_elr, &r.loss_nc,
                            &r.target_accuracy, &r.pseudo_accuracy, &r.mean_weight, &r.inter_distance,
                            &r.intra_distance};
        for (std::size_t f = 0; f < 11; ++f) *fields[f] = num(cells[f + 2]);
        log.append(std::move(r));
    }
    return log;
}

// ----------------------------------------------------------- prototypes

PrototypeGeometry prototype_geometry(const Mat& prototypes, std::span<const int> labels) {
    if (static_cast<std::size_t>(prototypes.rows()) != labels.size()) throw ShapeError("prototype_geometry: label count");
    const Mat unit = normalize_rows(prototypes).unit;
    double inter = 0.0;
    double intra = 0.0;
    std::size_t n_inter = 0;
    std::size_t n_intra = 0;
    for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < unit.rows(); ++j) {
            const double dist = 1.0 - unit.row(i).dot(unit.row(j));
            if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
                intra += dist;
                ++n_intra;
            } else {
                inter += dist;
                ++n_inter;
            }
        }
    }
    return {n_inter ? inter / static_cast<double>(n_inter) : kNaN, n_intra ? intra / static_cast<double>(n_intra) : kNaN};
}

Mat draw_prototypes(const Generator& generator, int per_class, std::mt19937_64& rng, Labels* labels) {
    Labels y;
    for (int c = 0; c < generator.num_classes(); ++c) y.insert(y.end(), static_cast<std::size_t>(per_class), c);
    const Mat noise = sample_noise(static_cast<int>(y.size()), generator.noise_dim(), rng);
    Mat p = generator.forward(y, noise);
    if (labels) *labels = std::move(y);
    return p;
}

// ------------------------------------------------------------- pretrain

SourceModel initial_source_model(int input_dim, int num_classes, const TrainConfig& cfg) {
    return SourceModel{
        Extractor::create(input_dim, cfg.feature_dim, cfg.extractor_hidden, derive_seed(cfg.seed, kExtractorInit)),
        Classifier::create(num_classes, cfg.feature_dim, derive_seed(cfg.seed, kClassifierInit)), 0.0};
}

Generator initial_generator(int num_classes, int feature_dim, const TrainConfig& cfg) {
    return Generator::create(num_classes, cfg.noise_dim, cfg.generator_hidden, feature_dim,
                             derive_seed(cfg.seed, kGeneratorInit));
}

Projector initial_projector(int feature_dim, const TrainConfig& cfg) {
    return Projector::create(feature_dim, cfg.projector_hidden, cfg.projection_dim,
                             derive_seed(cfg.seed, kProjectorInit));
}

SourceModel pretrain_source(const Dataset& source, const TrainConfig& cfg) {
    cfg.validate();
    SourceModel model = initial_source_model(source.input_dim(), source.num_classes(), cfg);
    model.train_accuracy = fit_classifier(&model.extractor, model.classifier, source.features(), source.eval_labels(),
                                          cfg.pretrain_epochs, cfg.pretrain_learning_rate, cfg,
                                          derive_seed(cfg.seed, kPretrainShuffle));
    model.classifier.params.frozen = true;
    return model;
}

// --------------------------------------------------------------- stage 1

Generator train_stage1(const Classifier& classifier, const TrainConfig& cfg, MetricsLog* log, std::ostream* progress) {
    cfg.validate();
    if (!classifier.params.frozen) throw ContractError("stage 1: classifier must be frozen");
    const std::uint64_t classifier_hash = classifier.params.hash();
    const int k = classifier.num_classes();
    Generator generator = initial_generator(k, classifier.feature_dim(), cfg);
    Sgd opt(cfg.stage1_learning_rate, cfg.momentum, cfg.weight_decay);
    std::mt19937_64 rng(derive_seed(cfg.seed, kStage1Sampling));
    const Temperature tau(cfg.tau);
    const bool contrastive = cfg.toggles.stage1_contrastive;

    Labels labels;
    for (int c = 0; c < k; ++c) labels.insert(labels.end(), static_cast<std::size_t>(cfg.stage1_prototypes_per_class), c);

    const int first_epoch = log ? log->last_epoch() + 1 : 1;
    for (int e = 0; e < cfg.stage1_epochs; ++e) {
        double ce = 0.0, conp = 0.0, total = 0.0;
        Mat last_prototypes;
        for (int b = 0; b < cfg.stage1_batches_per_epoch; ++b) {
            const Mat noise = sample_noise(static_cast<int>(labels.size()), cfg.noise_dim, rng);
            const losses::ContrastPlan plan =
                contrastive ? losses::sample_contrast_plan(labels, k, rng) : losses::ContrastPlan{};
            Grads grads = zero_grads(generator.params);
            losses::Stage1Terms terms =
                losses::stage1_objective(generator, classifier, labels, noise, plan, tau, contrastive, &grads);
            require_finite(terms.total, "stage 1 epoch " + std::to_string(e + 1));
            opt.step(generator.params, grads);
            ce += terms.ce;
            conp += terms.contrastive;
            total += terms.total;
            last_prototypes = std::move(terms.prototypes);
        }
        const double nb = cfg.stage1_batches_per_epoch;
        const PrototypeGeometry geo = prototype_geometry(last_prototypes, labels);
        if (log) {
            log->append({first_epoch + e, "stage1", total / nb, ce / nb, contrastive ? conp / nb : kNaN, kNaN, kNaN,
                         kNaN, kNaN, kNaN, kNaN, geo.inter, geo.intra});
        }
        if (progress) {
            *progress << "stage1 epoch " << e + 1 << '/' << cfg.stage1_epochs << " loss " << total / nb << " ce "
                      << ce / nb << " inter " << geo.inter << " intra " << geo.intra << '\n';
        }
    }
    if (classifier.params.hash() != classifier_hash) throw ContractError("stage 1: classifier parameters changed");
    generator.params.frozen = true;
    return generator;
}

// --------------------------------------------------------------- stage 2

Stage2Result train_stage2(const Extractor& extractor, const Generator& generator, const Classifier& classifier,
                          const Dataset& target, const TrainConfig& cfg, int first_epoch, std::ostream* progress) {
    cfg.validate();
    if (!classifier.params.frozen) throw ContractError("stage 2: classifier must be frozen");
    if (!generator.params.frozen) throw ContractError("stage 2: generator must be frozen");
    if (generator.num_classes() != classifier.num_classes() || target.num_classes() != classifier.num_classes()) {
        throw ShapeError("stage 2: class count mismatch between generator, classifier and target");
    }
    const std::uint64_t classifier_hash = classifier.params.hash();
    const std::uint64_t generator_hash = generator.params.hash();

    const int k = classifier.num_classes();
    const int n = target.size();
    const Mat& x = target.features();
    const Temperature tau(cfg.tau);
    const losses::Stage2Weights weights = cfg.stage2_weights();

    Stage2Result result{extractor,
                        initial_projector(extractor.feature_dim(), cfg),
                        MetricsLog{},
                        PredictionBank(n, k, cfg.beta, cfg.bank_init),
                        FeatureBank(extract(extractor, x)),
                        PseudoLabels{}};
    if (!cfg.toggles.any_adaptation()) return result;

    Sgd opt_e(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    Sgd opt_p(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    std::mt19937_64 rng(derive_seed(cfg.seed, kStage2Sampling));

    std::mt19937_64 geo_rng(derive_seed(cfg.seed, kGeometryDraw));
    Labels geo_labels;
    const Mat geo_prototypes = draw_prototypes(generator, 2, geo_rng, &geo_labels);
    const PrototypeGeometry geo = prototype_geometry(geo_prototypes, geo_labels);

    Labels class_order(static_cast<std::size_t>(k));
    std::iota(class_order.begin(), class_order.end(), 0);
    CentroidSet centroids;
    Labels labels;

    for (int m = 0; m < cfg.stage2_epochs; ++m) {
        const Mat prototypes = generator.forward(class_order, sample_noise(k, generator.noise_dim(), rng));
        const Mat q_all = extract(result.extractor, x);
        if (m == 0) {
            const Mat fallback = classifier.unit_directions();
            centroids = init_centroids(q_all, classify(classifier, q_all), &fallback);
        } else {
            centroids = refresh_centroids(q_all, labels, centroids);
        }
        labels = assign_labels(q_all, centroids);
        const Labels train_labels =
            cfg.pseudo_label_noise > 0.0
                ? inject_label_noise(labels, k, cfg.pseudo_label_noise, derive_seed(cfg.seed, kPseudoNoise))
                : labels;
        const std::vector<double> w = confidence(q_all, centroids, train_labels, tau);

        double conw = 0.0, elr = 0.0, nc = 0.0, total = 0.0;
        const auto batches = make_batches(n, cfg.batch_size, rng);
        for (const auto& idx : batches) {
            Labels y(idx.size());
            std::vector<double> wb(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                y[i] = train_labels[static_cast<std::size_t>(idx[i])];
                wb[i] = w[static_cast<std::size_t>(idx[i])];
            }
            const Mat xb = gather_rows(x, idx);
            const losses::Stage2Batch batch{xb, idx, y, wb, prototypes, result.predictions, result.features, tau};
            Grads ge = zero_grads(result.extractor.params);
            Grads gp = zero_grads(result.projector.params);
            losses::Stage2Terms terms =
                losses::stage2_objective(result.extractor, result.projector, batch, weights, &ge, &gp);
            if (!std::isfinite(terms.total)) {
                throw DivergenceError("stage 2 epoch " + std::to_string(m + 1) + ": non-finite loss (conw " +
                                      std::to_string(terms.contrastive) + ", elr " + std::to_string(terms.elr) +
                                      ", nc " + std::to_string(terms.nc) + ")");
            }
            result.predictions.update(idx, terms.predictions);
            result.features.update(idx, terms.features);
            opt_e.step(result.extractor.params, ge);
            opt_p.step(result.projector.params, gp);
            conw += terms.contrastive;
            elr += terms.elr;
            nc += terms.nc;
            total += terms.total;
        }
        const double nb = static_cast<double>(batches.size());
        const double acc = accuracy(infer(result.extractor, classifier, x), target.eval_labels());
        const double pseudo_acc = accuracy(labels, target.eval_labels());
        const double mean_w = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);
        result.log.append({first_epoch + m, "stage2", total / nb, kNaN, kNaN,
                           weights.use_contrastive ? conw / nb : kNaN, weights.use_elr ? elr / nb : kNaN,
                           weights.use_nc ? nc / nb : kNaN, acc, pseudo_acc, mean_w, geo.inter, geo.intra});
        if (progress) {
            *progress << "stage2 epoch " << m + 1 << '/' << cfg.stage2_epochs << " loss " << total / nb
                      << " target_acc " << acc << " pseudo_acc " << pseudo_acc << " mean_w " << mean_w << '\n';
        }
        result.pseudo = PseudoLabels{train_labels, w};
    }

    if (classifier.params.hash() != classifier_hash) throw ContractError("stage 2: classifier parameters changed");
    if (generator.params.hash() != generator_hash) throw ContractError("stage 2: generator parameters changed");
    return result;
}

Labels infer(const Extractor& extractor, const Classifier& classifier, const Mat& inputs) {
    return argmax_rows(classifier.logits(extractor.forward(inputs)));
}

// ------------------------------------------------------ reverse validation

ReverseValidation reverse_validate(std::span<const TrainConfig> candidates, const SourceModel& source,
                                   const Generator& generator, const Dataset& target) {
    if (candidates.empty()) throw ConfigError("candidates: reverse validation needs at least one config");
    ReverseValidation out;
    for (const TrainConfig& cfg : candidates) {
        const Stage2Result adapted = train_stage2(source.extractor, generator, source.classifier, target, cfg);
        const Mat features = extract(adapted.extractor, target.features());
        Labels predicted = argmax_rows(source.classifier.logits(features));

        // Pseudo-labelled target plays the source role for a fresh classifier.
        Classifier reverse = Classifier::create(source.classifier.num_classes(), features.cols(),
                                                derive_seed(cfg.seed, kReverseInit));
        fit_classifier(nullptr, reverse, features, predicted, cfg.reverse_epochs, cfg.pretrain_learning_rate, cfg,
                       derive_seed(cfg.seed, kReverseShuffle));

        std::mt19937_64 rng(derive_seed(cfg.seed, kReversePrototypes));
        Labels proto_labels;
        const Mat prototypes = draw_prototypes(generator, cfg.reverse_prototypes_per_class, rng, &proto_labels);
        out.scores.push_back(accuracy(argmax_rows(reverse.logits(prototypes)), proto_labels));
        out.predictions.push_back(std::move(predicted));
    }
    for (std::size_t i = 1; i < out.scores.size(); ++i) {
        if (out.scores[i] > out.scores[out.best]) out.best = i;
    }
    return out;
}

// ---------------------------------------------------------------- pipeline

PipelineResult run_pipeline(const Dataset& source, const Dataset& target, const TrainConfig& cfg,
                            std::ostream* progress) {
    if (source.num_classes() != target.num_classes() || source.input_dim() != target.input_dim()) {
        throw ShapeError("pipeline: source and target disagree on K or d_in");
    }
    SourceModel src = pretrain_source(source, cfg);
    const double source_only = accuracy(infer(src.extractor, src.classifier, target.features()), target.eval_labels());
    if (progress) {
        *progress << "source pretraining: train accuracy " << src.train_accuracy << ", target accuracy "
                  << source_only << '\n';
    }
    MetricsLog log;
    Generator generator = train_stage1(src.classifier, cfg, &log, progress);
    Stage2Result adapted =
        train_stage2(src.extractor, generator, src.classifier, target, cfg, log.last_epoch() + 1, progress);
    log.extend(adapted.log);
    const double adapted_acc =
        accuracy(infer(adapted.extractor, src.classifier, target.features()), target.eval_labels());

    std::mt19937_64 geo_rng(derive_seed(cfg.seed, kGeometryDraw));
    Labels geo_labels;
    const Mat geo_prototypes = draw_prototypes(generator, 2, geo_rng, &geo_labels);
    const PrototypeGeometry geo = prototype_geometry(geo_prototypes, geo_labels);

    const double src_acc = src.train_accuracy;
    return PipelineResult{std::move(src), std::move(generator), std::move(adapted), std::move(log), geo,
                          src_acc, source_only, adapted_acc};
}

}  // namespace cpga
