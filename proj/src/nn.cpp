#include "cpga/nn.hpp"

#include <cmath>

namespace cpga {

std::size_t ParamSet::add(std::string name, Mat value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return values.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return i;
    }
    throw ContractError(component + ": no parameter named '" + std::string(name) + "'");
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
}

std::uint64_t ParamSet::hash() const {
    std::uint64_t h = fnv1a(component.data(), component.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        h = fnv1a(names[i].data(), names[i].size(), h);
        const std::int64_t shape[2] = {values[i].rows(), values[i].cols()};
        h = fnv1a(shape, sizeof(shape), h);
        h = fnv1a(values[i].data(), sizeof(double) * static_cast<std::size_t>(values[i].size()), h);
    }
    return h;
}

Grads zero_grads(const ParamSet& params) {
    Grads g;
    g.reserve(params.values.size());
    for (const auto& v : params.values) g.push_back(Mat::Zero(v.rows(), v.cols()));
    return g;
}

Vec flatten(const Grads& grads) {
    std::size_t n = 0;
    for (const auto& g : grads) n += static_cast<std::size_t>(g.size());
    Vec out(static_cast<Eigen::Index>(n));
    Eigen::Index at = 0;
    for (const auto& g : grads) {
        out.segment(at, g.size()) = Eigen::Map<const Vec>(g.data(), g.size());
        at += g.size();
    }
    return out;
}

Vec flatten(const ParamSet& params) { return flatten(params.values); }

void unflatten(const Vec& flat, ParamSet& params) {
    if (static_cast<std::size_t>(flat.size()) != params.scalar_count()) {
        throw ShapeError(params.component + ": flat parameter length mismatch");
    }
    Eigen::Index at = 0;
    for (auto& v : params.values) {
        Eigen::Map<Vec>(v.data(), v.size()) = flat.segment(at, v.size());
        at += v.size();
    }
}

void append_mlp(ParamSet& params, const std::string& prefix, std::span<const int> widths, std::mt19937_64& rng) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l];
        const int out = widths[l + 1];
        // Same fan-in scaling as the usual framework default for dense layers.
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Mat w(out, in);
        Mat b(1, out);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
        params.add(prefix + "." + std::to_string(l) + ".weight", std::move(w));
        params.add(prefix + "." + std::to_string(l) + ".bias", std::move(b));
    }
}

namespace {

Mat activate(Activation act, const Mat& z) {
    switch (act) {
        case Activation::Tanh:
            return z.array().tanh().matrix();
        case Activation::Relu:
            return z.cwiseMax(0.0);
        case Activation::Identity:
            break;
    }
    return z;
}

Mat activation_backward(Activation act, const Mat& z, const Mat& grad) {
    switch (act) {
        case Activation::Tanh:
            return (grad.array() * (1.0 - z.array().tanh().square())).matrix();
        case Activation::Relu:
            return (grad.array() * (z.array() > 0.0).cast<double>()).matrix();
        case Activation::Identity:
            break;
    }
    return grad;
}

}  // namespace

Mat mlp_forward(const ParamSet& params, std::size_t offset, std::span<const Activation> acts, const Mat& x,
                MlpCache* cache) {
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Mat h = x;
    for (std::size_t l = 0; l < acts.size(); ++l) {
        const Mat& w = params.values[offset + 2 * l];
        const Mat& b = params.values[offset + 2 * l + 1];
        if (h.cols() != w.cols()) {
            throw ShapeError(params.component + ": layer " + std::to_string(l) + " expects " +
                             std::to_string(w.cols()) + " inputs, got " + std::to_string(h.cols()));
        }
        Mat z = h * w.transpose();
        z.rowwise() += b.row(0);
        Mat a = activate(acts[l], z);
        if (cache) {
            cache->inputs.push_back(std::move(h));
            cache->pre.push_back(std::move(z));
        }
        h = std::move(a);
    }
    return h;
}

Mat mlp_backward(const ParamSet& params, std::size_t offset, std::span<const Activation> acts, const MlpCache& cache,
                 const Mat& grad_out, Grads* grads) {
    Mat g = grad_out;
    for (std::size_t l = acts.size(); l-- > 0;) {
        const Mat dz = activation_backward(acts[l], cache.pre[l], g);
        const Mat& w = params.values[offset + 2 * l];
        if (grads) {
            (*grads)[offset + 2 * l].noalias() += dz.transpose() * cache.inputs[l];
            (*grads)[offset + 2 * l + 1] += dz.colwise().sum();
        }
        g = dz * w;
    }
    return g;
}

std::vector<int> mlp_widths(const ParamSet& params, std::size_t offset, std::size_t layers) {
    std::vector<int> widths;
    widths.push_back(static_cast<int>(params.values.at(offset).cols()));
    for (std::size_t l = 0; l < layers; ++l) widths.push_back(static_cast<int>(params.values.at(offset + 2 * l).rows()));
    return widths;
}

Sgd::Sgd(double learning_rate, double momentum, double weight_decay)
    : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate: must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum: must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay: must be non-negative");
}

void Sgd::step(ParamSet& params, const Grads& grads) {
    if (params.frozen) {
        throw ContractError(params.component + ": gradient step applied to a frozen parameter set");
    }
    if (grads.size() != params.values.size()) throw ShapeError(params.component + ": gradient count mismatch");
    if (velocity_.empty()) velocity_ = zero_grads(params);
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        Mat g = grads[i];
        if (weight_decay_ > 0.0) g += weight_decay_ * params.values[i];
        velocity_[i] = momentum_ * velocity_[i] + g;
        params.values[i] -= lr_ * velocity_[i];
    }
}

}  // namespace cpga
