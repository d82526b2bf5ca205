#include "cpga/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace cpga {

namespace {

constexpr double kClassRadius = 3.0;

Mat random_orthonormal(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat g(dim, dim);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(dim, dim);
    // Fix column signs so the basis is a deterministic function of g.
    const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < dim; ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    return q;
}

// Rotation by `angle` in every coordinate plane (2j, 2j+1) of `basis`.
Mat plane_rotation(const Mat& basis, double angle) {
    const auto dim = basis.rows();
    Mat block = Mat::Identity(dim, dim);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (Eigen::Index j = 0; j + 1 < dim; j += 2) {
        block(j, j) = c;
        block(j, j + 1) = -s;
        block(j + 1, j) = s;
        block(j + 1, j + 1) = c;
    }
    return basis * block * basis.transpose();
}

Vec translation_vector(const ShiftConfig& cfg) {
    Vec t = Vec::Zero(cfg.input_dim);
    for (std::size_t i = 0; i < cfg.translation.size(); ++i) t(static_cast<Eigen::Index>(i)) = cfg.translation[i];
    return t;
}

}  // namespace

std::string to_string(Domain domain) { return domain == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& text) {
    if (text == "source") return Domain::Source;
    if (text == "target") return Domain::Target;
    throw ConfigError("domain: expected 'source' or 'target', got '" + text + "'");
}

Dataset::Dataset(Mat features, Labels labels, Domain domain, int num_classes)
    : features_(std::move(features)), labels_(std::move(labels)), domain_(domain), num_classes_(num_classes) {
    if (num_classes_ < 2) throw ConfigError("num_classes: must be >= 2");
    if (features_.rows() < 1) throw ShapeError("dataset: needs at least one sample");
    if (static_cast<std::size_t>(features_.rows()) != labels_.size()) throw ShapeError("dataset: one label per row");
    if (!features_.allFinite()) throw ContractError("dataset: non-finite feature values");
    require_labels(labels_, num_classes_, "dataset");
}

void ShiftConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
    if (input_dim < 2) throw ConfigError("input_dim: must be >= 2");
    if (samples_per_class < 2) throw ConfigError("samples_per_class: must be >= 2");
    if (!(scale > 0.0)) throw ConfigError("scale: must be positive");
    if (!(noise_std > 0.0)) throw ConfigError("noise_std: must be positive");
    if (!std::isfinite(rotation_angle)) throw ConfigError("rotation_angle: must be finite");
    if (!translation.empty() && translation.size() != static_cast<std::size_t>(input_dim)) {
        throw ConfigError("translation: must be empty or have input_dim entries");
    }
}

std::pair<Dataset, Dataset> make_gaussian_domains(const ShiftConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int k = cfg.num_classes;
    const int d = cfg.input_dim;

    const Mat basis = random_orthonormal(d, rng);
    Mat means(k, d);
    for (int c = 0; c < k; ++c) {
        if (k <= d) {
            means.row(c) = kClassRadius * basis.col(c).transpose();
        } else {
            const double a = 2.0 * std::numbers::pi * c / k;
            means.row(c) = kClassRadius * (std::cos(a) * basis.col(0) + std::sin(a) * basis.col(1)).transpose();
        }
    }
    const Mat rotation = plane_rotation(random_orthonormal(d, rng), cfg.rotation_angle);
    const Vec t = translation_vector(cfg);
    Mat target_means = cfg.scale * means * rotation.transpose();
    target_means.rowwise() += t.transpose();

    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    auto sample = [&](const Mat& centres, Domain domain) {
        const int n = k * cfg.samples_per_class;
        Mat x(n, d);
        Labels y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int c = i % k;
            y[static_cast<std::size_t>(i)] = c;
            for (int j = 0; j < d; ++j) x(i, j) = centres(c, j) + noise(rng);
        }
        return Dataset(std::move(x), std::move(y), domain, k);
    };
    Dataset source = sample(means, Domain::Source);
    Dataset target = sample(target_means, Domain::Target);
    return {std::move(source), std::move(target)};
}

std::pair<Dataset, Dataset> make_moons_domains(const ShiftConfig& cfg) {
    cfg.validate();
    if (cfg.num_classes != 2) throw ConfigError("num_classes: two moons requires exactly 2 classes");
    std::mt19937_64 rng(cfg.seed);
    const int d = cfg.input_dim;
    std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    const Vec t = translation_vector(cfg);
    const double c = std::cos(cfg.rotation_angle);
    const double s = std::sin(cfg.rotation_angle);
    const double cx = 0.5;
    const double cy = 0.25;

    auto sample = [&](Domain domain) {
        const int n = 2 * cfg.samples_per_class;
        Mat x = Mat::Zero(n, d);
        Labels y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int label = i % 2;
            const double a = arc(rng);
            double px = label == 0 ? std::cos(a) : 1.0 - std::cos(a);
            double py = label == 0 ? std::sin(a) : 0.5 - std::sin(a);
            if (domain == Domain::Target) {
                const double rx = c * (px - cx) - s * (py - cy);
                const double ry = s * (px - cx) + c * (py - cy);
                px = cfg.scale * rx + cx;
                py = cfg.scale * ry + cy;
            }
            x(i, 0) = px;
            x(i, 1) = py;
            for (int j = 0; j < d; ++j) x(i, j) += noise(rng) + (domain == Domain::Target ? t(j) : 0.0);
            y[static_cast<std::size_t>(i)] = label;
        }
        return Dataset(std::move(x), std::move(y), domain, 2);
    };
    Dataset source = sample(Domain::Source);
    Dataset target = sample(Domain::Target);
    return {std::move(source), std::move(target)};
}

Labels inject_label_noise(std::span<const int> labels, int num_classes, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("rate: label noise rate must be in [0, 1]");
    if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
    require_labels(labels, num_classes, "inject_label_noise");
    Labels out(labels.begin(), labels.end());
    const auto flips = static_cast<std::size_t>(std::floor(rate * static_cast<double>(labels.size())));
    std::vector<int> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> other(1, num_classes - 1);
    for (std::size_t r = 0; r < flips; ++r) {
        auto& y = out[static_cast<std::size_t>(order[r])];
        y = (y + other(rng)) % num_classes;
    }
    return out;
}

void save_dataset(std::ostream& out, const Dataset& data) {
    out << "cpga-dataset v1 K=" << data.num_classes() << " d=" << data.input_dim()
        << " domain=" << to_string(data.domain()) << '\n';
    out << std::setprecision(17);
    const auto& x = data.features();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        out << data.eval_labels()[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < x.cols(); ++j) out << ',' << x(i, j);
        out << '\n';
    }
}

Dataset load_dataset(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw ConfigError("dataset: missing header");
    std::istringstream hs(header);
    std::string magic, version, kfield, dfield, domfield;
    hs >> magic >> version >> kfield >> dfield >> domfield;
    if (magic != "cpga-dataset" || version != "v1" || kfield.rfind("K=", 0) != 0 || dfield.rfind("d=", 0) != 0 ||
        domfield.rfind("domain=", 0) != 0) {
        throw ConfigError("dataset: malformed header '" + header + "'");
    }
    int k = 0;
    int d = 0;
    try {
        k = std::stoi(kfield.substr(2));
        d = std::stoi(dfield.substr(2));
    } catch (const std::logic_error&) {
        throw ConfigError("dataset: malformed header '" + header + "'");
    }
    const Domain domain = parse_domain(domfield.substr(7));
    if (d < 1) throw ConfigError("dataset: d must be positive");

    std::vector<double> values;
    Labels labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        int cols = 0;
        try {
            std::getline(ls, cell, ',');
            labels.push_back(std::stoi(cell));
            while (std::getline(ls, cell, ',')) {
                values.push_back(std::stod(cell));
                ++cols;
            }
        } catch (const std::logic_error&) {
            throw ConfigError("dataset: unparsable value '" + cell + "' in row " + std::to_string(labels.size() + 1));
        }
        if (cols != d) {
            throw ShapeError("dataset: row " + std::to_string(labels.size()) + " has " + std::to_string(cols) +
                             " features, header says " + std::to_string(d));
        }
    }
    const auto n = static_cast<Eigen::Index>(labels.size());
    Mat x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), n, d);
    return Dataset(std::move(x), std::move(labels), domain, k);
}

void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw ConfigError("dataset: cannot open '" + path + "' for writing");
    save_dataset(out, data);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("dataset: cannot open '" + path + "'");
    return load_dataset(in);
}

}  // namespace cpga
