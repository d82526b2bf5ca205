#include "cpga/models.hpp"

#include <cmath>

namespace cpga {

namespace {

std::vector<Activation> hidden_then_linear(std::size_t layers, Activation hidden) {
    std::vector<Activation> acts(layers, hidden);
    if (!acts.empty()) acts.back() = Activation::Identity;
    return acts;
}

void require_component(const ParamSet& params, const char* name, std::size_t min_tensors) {
    if (params.component != name) {
        throw ContractError("expected a '" + std::string(name) + "' parameter set, got '" + params.component + "'");
    }
    if (params.values.size() < min_tensors) throw ShapeError(std::string(name) + ": too few tensors");
}

}  // namespace

// ---------------------------------------------------------------- extractor

Extractor Extractor::create(int input_dim, int feature_dim, std::span<const int> hidden, std::uint64_t seed) {
    if (input_dim < 1 || feature_dim < 1) throw ConfigError("extractor: dimensions must be positive");
    std::mt19937_64 rng(seed);
    Extractor e;
    e.params.component = "extractor";
    e.params.seed = seed;
    std::vector<int> widths{input_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(feature_dim);
    append_mlp(e.params, "mlp", widths, rng);
    return e;
}

Extractor Extractor::from_params(ParamSet params) {
    require_component(params, "extractor", 2);
    return Extractor{std::move(params)};
}

std::vector<Activation> Extractor::activations() const { return hidden_then_linear(layers(), Activation::Tanh); }

Mat Extractor::forward(const Mat& x, MlpCache* cache) const {
    require_cols(x, input_dim(), "extract");
    const auto acts = activations();
    return mlp_forward(params, 0, acts, x, cache);
}

void Extractor::backward(const MlpCache& cache, const Mat& grad_features, Grads& grads) const {
    const auto acts = activations();
    mlp_backward(params, 0, acts, cache, grad_features, &grads);
}

// --------------------------------------------------------------- classifier

Classifier Classifier::create(int num_classes, int feature_dim, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
    std::mt19937_64 rng(seed);
    Classifier c;
    c.params.component = "classifier";
    c.params.seed = seed;
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat v(num_classes, feature_dim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = u(rng);
    // Gains start at the row norms, so the initial layer equals the plain linear layer.
    Mat g(1, num_classes);
    for (int k = 0; k < num_classes; ++k) g(0, k) = v.row(k).norm();
    c.params.add("direction", std::move(v));
    c.params.add("gain", std::move(g));
    return c;
}

Classifier Classifier::from_params(ParamSet params) {
    require_component(params, "classifier", 2);
    if (params.values[1].rows() != 1 || params.values[1].cols() != params.values[0].rows()) {
        throw ShapeError("classifier: gain must be 1 x K");
    }
    return Classifier{std::move(params)};
}

Mat Classifier::unit_directions() const { return normalize_rows(params.values[0]).unit; }

Mat Classifier::logits(const Mat& features, ClassifierCache* cache) const {
    require_cols(features, feature_dim(), "classify");
    NormalizedRows dirs = normalize_rows(params.values[0]);
    Mat cos = features * dirs.unit.transpose();
    Mat out = cos.array().rowwise() * params.values[1].row(0).array();
    if (cache) {
        cache->features = features;
        cache->directions = std::move(dirs);
        cache->cosines = std::move(cos);
    }
    return out;
}

Mat Classifier::backward(const ClassifierCache& cache, const Mat& grad_logits, Grads* grads) const {
    const Mat scaled = grad_logits.array().rowwise() * params.values[1].row(0).array();
    if (grads) {
        if (params.frozen) throw ContractError("classifier: gradient requested for frozen classifier");
        (*grads)[1] += (grad_logits.array() * cache.cosines.array()).colwise().sum().matrix();
        const Mat grad_unit = scaled.transpose() * cache.features;
        (*grads)[0] += normalize_rows_backward(cache.directions, grad_unit);
    }
    return scaled * cache.directions.unit;
}

// ---------------------------------------------------------------- generator

Generator Generator::create(int num_classes, int noise_dim, int hidden, int feature_dim, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
    if (noise_dim < 1 || hidden < 1 || feature_dim < 1) throw ConfigError("generator: dimensions must be positive");
    std::mt19937_64 rng(seed);
    Generator g;
    g.params.component = "generator";
    g.params.seed = seed;
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat emb(num_classes, noise_dim);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = n01(rng);
    g.params.add("embedding", std::move(emb));
    const int widths[] = {noise_dim, hidden, feature_dim};
    append_mlp(g.params, "mlp", widths, rng);
    return g;
}

Generator Generator::from_params(ParamSet params) {
    require_component(params, "generator", 3);
    return Generator{std::move(params)};
}

std::vector<Activation> Generator::activations() const {
    return hidden_then_linear((params.values.size() - 1) / 2, Activation::Relu);
}

Mat Generator::forward(std::span<const int> labels, const Mat& noise, GeneratorCache* cache) const {
    require_labels(labels, num_classes(), "generate");
    require_cols(noise, noise_dim(), "generate noise");
    if (static_cast<std::size_t>(noise.rows()) != labels.size()) throw ShapeError("generate: one noise row per label");
    const Mat& emb = params.values[0];
    Mat h(noise.rows(), noise.cols());
    for (Eigen::Index i = 0; i < noise.rows(); ++i) {
        h.row(i) = emb.row(labels[static_cast<std::size_t>(i)]).cwiseProduct(noise.row(i));
    }
    const auto acts = activations();
    if (cache) {
        cache->labels.assign(labels.begin(), labels.end());
        cache->noise = noise;
        return mlp_forward(params, 1, acts, h, &cache->mlp);
    }
    return mlp_forward(params, 1, acts, h, nullptr);
}

void Generator::backward(const GeneratorCache& cache, const Mat& grad_prototypes, Grads& grads) const {
    const auto acts = activations();
    const Mat grad_h = mlp_backward(params, 1, acts, cache.mlp, grad_prototypes, &grads);
    for (Eigen::Index i = 0; i < grad_h.rows(); ++i) {
        grads[0].row(cache.labels[static_cast<std::size_t>(i)]) += grad_h.row(i).cwiseProduct(cache.noise.row(i));
    }
}

Mat sample_noise(int rows, int noise_dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat z(rows, noise_dim);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = u(rng);
    }
    return z;
}

// ---------------------------------------------------------------- projector

Projector Projector::create(int feature_dim, std::span<const int> hidden, int output_dim, std::uint64_t seed) {
    if (feature_dim < 1 || output_dim < 1) throw ConfigError("projector: dimensions must be positive");
    std::mt19937_64 rng(seed);
    Projector p;
    p.params.component = "projector";
    p.params.seed = seed;
    std::vector<int> widths{feature_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(output_dim);
    append_mlp(p.params, "mlp", widths, rng);
    return p;
}

Projector Projector::from_params(ParamSet params) {
    require_component(params, "projector", 2);
    return Projector{std::move(params)};
}

std::vector<Activation> Projector::activations() const { return hidden_then_linear(layers(), Activation::Tanh); }

Mat Projector::forward(const Mat& features, ProjectorCache* cache) const {
    const auto acts = activations();
    if (cache) {
        cache->out = normalize_rows(mlp_forward(params, 0, acts, features, &cache->mlp));
        return cache->out.unit;
    }
    return normalize_rows(mlp_forward(params, 0, acts, features, nullptr)).unit;
}

Mat Projector::backward(const ProjectorCache& cache, const Mat& grad_out, Grads* grads) const {
    const auto acts = activations();
    return mlp_backward(params, 0, acts, cache.mlp, normalize_rows_backward(cache.out, grad_out), grads);
}

// --------------------------------------------------------------- functional

Mat extract(const Extractor& extractor, const Mat& inputs) { return extractor.forward(inputs); }

Mat classify(const Classifier& classifier, const Mat& features) { return classifier.probabilities(features); }

Mat generate(const Generator& generator, std::span<const int> labels, const Mat& noise) {
    return generator.forward(labels, noise);
}

Mat project(const Projector& projector, const Mat& features) { return projector.forward(features); }

}  // namespace cpga
