#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "cpga/io.hpp"
#include "cpga/training.hpp"
#include "support.hpp"

using namespace cpga;

namespace {

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.feature_dim = 16;
    cfg.noise_dim = 16;
    cfg.generator_hidden = 32;
    cfg.extractor_hidden = {16, 16};
    cfg.projector_hidden = {16, 8};
    cfg.projection_dim = 8;
    cfg.pretrain_epochs = 30;
    cfg.stage1_epochs = 60;
    cfg.stage2_epochs = 5;
    cfg.batch_size = 32;
    return cfg;
}

ShiftConfig small_shift(std::uint64_t seed, double rotation) {
    ShiftConfig s;
    s.num_classes = 4;
    s.input_dim = 6;
    s.samples_per_class = 40;
    s.rotation_angle = rotation;
    s.noise_std = 0.5;
    s.seed = seed;
    return s;
}

bool same_params(const ParamSet& a, const ParamSet& b) {
    if (a.values.size() != b.values.size()) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i] != b.values[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.tau = 0.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("tau"), ConfigError);
    cfg = TrainConfig{};
    cfg.momentum = 1.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("momentum"), ConfigError);
    cfg = TrainConfig{};
    cfg.toggles.use_contrastive = false;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("use_elr"), ConfigError);
    cfg = TrainConfig{};
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    CHECK(cfg.tau == 0.07);
    CHECK(cfg.beta == 0.9);
    CHECK(cfg.eta == 0.05);
    CHECK(cfg.lambda == 5.0);
    CHECK(cfg.batch_size == 64);
}

TEST_CASE("pretraining fits separable blobs and is deterministic") {
    ShiftConfig s = small_shift(1, 0.0);
    s.noise_std = 0.3;
    const auto [source, target] = make_gaussian_domains(s);
    TrainConfig cfg = small_config(1);
    cfg.pretrain_epochs = 200;
    const SourceModel a = pretrain_source(source, cfg);
    CHECK(a.train_accuracy >= 0.99);
    CHECK(a.classifier.params.frozen);
    const SourceModel b = pretrain_source(source, cfg);
    CHECK(same_params(a.extractor.params, b.extractor.params));
    CHECK(same_params(a.classifier.params, b.classifier.params));

    cfg.pretrain_epochs = 0;
    const SourceModel z = pretrain_source(source, cfg);
    const SourceModel init = initial_source_model(source.input_dim(), source.num_classes(), cfg);
    CHECK(same_params(z.extractor.params, init.extractor.params));
    CHECK(same_params(z.classifier.params, init.classifier.params));
}

TEST_CASE("stage 1: generator frozen on return, classifier untouched, prototypes classified correctly") {
    const auto [source, target] = make_gaussian_domains(small_shift(2, 0.0));
    const TrainConfig cfg = small_config(2);
    const SourceModel model = pretrain_source(source, cfg);
    const auto before = model.classifier.params.hash();
    MetricsLog log;
    const Generator g = train_stage1(model.classifier, cfg, &log);
    CHECK(g.params.frozen);
    CHECK(model.classifier.params.hash() == before);
    CHECK(log.records().size() == static_cast<std::size_t>(cfg.stage1_epochs));
    CHECK(log.records().front().stage == "stage1");

    std::mt19937_64 rng(3);
    Labels y;
    const Mat p = draw_prototypes(g, 50, rng, &y);
    CHECK(accuracy(argmax_rows(model.classifier.logits(p)), y) >= 0.99);

    // Same label, two noises: both land in that class.
    const Labels same{1, 1};
    const Mat two = generate(g, same, sample_noise(2, cfg.noise_dim, rng));
    CHECK(argmax_rows(model.classifier.logits(two)) == same);

    Classifier thawed = model.classifier;
    thawed.params.frozen = false;
    CHECK_THROWS_AS(train_stage1(thawed, cfg), ContractError);

    TrainConfig none = cfg;
    none.stage1_epochs = 0;
    const Generator g0 = train_stage1(model.classifier, none);
    CHECK(same_params(g0.params, initial_generator(4, cfg.feature_dim, cfg).params));
}

TEST_CASE("stage 2: contracts, zero epochs, logging and determinism") {
    const auto [source, target] = make_gaussian_domains(small_shift(3, 0.3));
    TrainConfig cfg = small_config(3);
    const SourceModel model = pretrain_source(source, cfg);
    const Generator g = train_stage1(model.classifier, cfg);

    Generator thawed = g;
    thawed.params.frozen = false;
    CHECK_THROWS_AS(train_stage2(model.extractor, thawed, model.classifier, target, cfg), ContractError);

    TrainConfig zero = cfg;
    zero.stage2_epochs = 0;
    const Stage2Result r0 = train_stage2(model.extractor, g, model.classifier, target, zero);
    CHECK(same_params(r0.extractor.params, model.extractor.params));
    CHECK(same_params(r0.projector.params, initial_projector(cfg.feature_dim, cfg).params));
    CHECK(r0.log.empty());

    const auto cls_hash = model.classifier.params.hash();
    const auto gen_hash = g.params.hash();
    const Stage2Result a = train_stage2(model.extractor, g, model.classifier, target, cfg, 7);
    CHECK(model.classifier.params.hash() == cls_hash);
    CHECK(g.params.hash() == gen_hash);
    REQUIRE(a.log.records().size() == 5);
    CHECK(a.log.records().front().epoch == 7);
    CHECK(a.pseudo.labels.size() == static_cast<std::size_t>(target.size()));
    for (const auto& r : a.log.records()) {
        CHECK(r.target_accuracy >= 0.0);
        CHECK(r.target_accuracy <= 1.0);
        CHECK(r.mean_weight >= 0.25);
        CHECK(r.mean_weight <= 1.0);
    }
    const Stage2Result b = train_stage2(model.extractor, g, model.classifier, target, cfg, 7);
    CHECK(a.log.to_csv() == b.log.to_csv());
    CHECK(same_params(a.extractor.params, b.extractor.params));

    TrainConfig off = cfg;
    off.toggles = LossToggles{false, false, false, false, true};
    const Stage2Result c = train_stage2(model.extractor, g, model.classifier, target, off);
    CHECK(same_params(c.extractor.params, model.extractor.params));
}

TEST_CASE("stage 2 does no harm on an identity shift") {
    const auto [source, target] = make_gaussian_domains(small_shift(4, 0.0));
    TrainConfig cfg = small_config(4);
    cfg.stage2_epochs = 15;
    const SourceModel model = pretrain_source(source, cfg);
    const double before = accuracy(infer(model.extractor, model.classifier, target.features()), target.eval_labels());
    const Generator g = train_stage1(model.classifier, cfg);
    const Stage2Result r = train_stage2(model.extractor, g, model.classifier, target, cfg);
    const double after = accuracy(infer(r.extractor, model.classifier, target.features()), target.eval_labels());
    MESSAGE("identity shift: before " << before << " after " << after);
    CHECK(after >= before - 0.01);
}

TEST_CASE("infer: deterministic, batch equals one-at-a-time, equals argmax of classify(extract)") {
    const SourceModel m = initial_source_model(6, 4, small_config(5));
    std::mt19937_64 rng(5);
    const Mat x = test::random_mat(12, 6, rng);
    const Labels y = infer(m.extractor, m.classifier, x);
    CHECK(infer(m.extractor, m.classifier, x) == y);
    CHECK(y == argmax_rows(classify(m.classifier, extract(m.extractor, x))));
    for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(infer(m.extractor, m.classifier, x.row(i))[0] == y[static_cast<std::size_t>(i)]);
    CHECK_THROWS_AS(infer(m.extractor, m.classifier, Mat::Zero(2, 5)), ShapeError);
}

TEST_CASE("reverse validation: empty, single and tied candidates") {
    const auto [source, target] = make_gaussian_domains(small_shift(6, 0.3));
    TrainConfig cfg = small_config(6);
    cfg.stage2_epochs = 2;
    cfg.reverse_epochs = 3;
    const SourceModel m = pretrain_source(source, cfg);
    const Generator g = train_stage1(m.classifier, cfg);
    CHECK_THROWS_AS(reverse_validate({}, m, g, target), ConfigError);
    const std::vector<TrainConfig> one{cfg};
    const ReverseValidation r1 = reverse_validate(one, m, g, target);
    CHECK(r1.best == 0);
    CHECK(r1.scores.size() == 1);
    const std::vector<TrainConfig> two{cfg, cfg};
    const ReverseValidation r2 = reverse_validate(two, m, g, target);
    CHECK(r2.scores[0] == r2.scores[1]);
    CHECK(r2.best == 0);
}

TEST_CASE("metrics log: monotone epochs and exact CSV round trip") {
    MetricsLog log;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    log.append({1, "stage1", 1.5, 1.0, 0.5, nan, nan, nan, nan, nan, nan, 0.9, 0.01});
    log.append({2, "stage2", 0.25, nan, nan, 0.2, -0.01, 1.2, 0.8125, 0.875, 0.6, 0.9, 0.01});
    CHECK_THROWS_AS(log.append({2, "stage2"}), ContractError);
    const std::string csv = log.to_csv();
    CHECK(csv.rfind(std::string(MetricsLog::csv_header()) + "\n", 0) == 0);
    CHECK(csv.find("1,stage1,1.5,1,0.5,,,,,,,0.9,0.01\n") != std::string::npos);
    std::istringstream in(csv);
    const MetricsLog back = MetricsLog::read_csv(in);
    CHECK(back.to_csv() == csv);
    std::istringstream bad("epoch,stage\n");
    CHECK_THROWS_AS(MetricsLog::read_csv(bad), ConfigError);
}

TEST_CASE("prototype geometry on a hand-built batch") {
    Mat p(4, 2);
    p << 1, 0, 2, 0, 0, 1, 0, 3;
    const Labels y{0, 0, 1, 1};
    const PrototypeGeometry g = prototype_geometry(p, y);
    CHECK(g.intra == doctest::Approx(0.0));
    CHECK(g.inter == doctest::Approx(1.0));
    Mat q(4, 2);
    q << 1, 0, 0, 1, -1, 0, 0, -1;
    const PrototypeGeometry h = prototype_geometry(q, y);
    CHECK(h.intra == doctest::Approx(1.0));
    CHECK(h.inter == doctest::Approx(1.5));
}

TEST_CASE("stage 2 loss smoothed over 5-epoch windows does not increase on the default benchmark") {
    RunConfig rc;
    rc.shift = rotated_gaussians_benchmark(1);
    rc.train.seed = 1;
    auto [source, target] = make_domains(rc);
    const PipelineResult r = run_pipeline(source, target, rc.train);
    std::vector<double> losses;
    for (const auto& rec : r.log.records()) {
        if (rec.stage == "stage2") losses.push_back(rec.loss_total);
    }
    REQUIRE(losses.size() == static_cast<std::size_t>(rc.train.stage2_epochs));
    std::vector<double> windows;
    for (std::size_t s = 0; s + 5 <= losses.size(); s += 5) {
        windows.push_back(std::accumulate(losses.begin() + static_cast<long>(s), losses.begin() + static_cast<long>(s) + 5, 0.0) / 5.0);
    }
    for (std::size_t w = 1; w < windows.size(); ++w) {
        INFO("window " << w << ": " << windows[w - 1] << " -> " << windows[w]);
        CHECK(windows[w] <= windows[w - 1] + 1e-9);
    }
}
