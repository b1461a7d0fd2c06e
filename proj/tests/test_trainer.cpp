#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include <unistd.h>

#include "pamunet/trainer.hpp"
#include <algorithm>

using namespace pamunet;

namespace {

std::vector<Sample> dataset(int count, int size, std::uint64_t seed = 1) {
    SynthOptions opt;
    opt.seed = seed;
    opt.size = size;
    opt.count = count;
    std::vector<Sample> out;
    for (int i = 0; i < count; ++i) out.push_back(synth_sample(opt, i));
    return out;
}

PAMUNetConfig small_model() {
    PAMUNetConfig c = PAMUNetConfig::tiny();
    c.base_channels = 4;
    return c;
}

TrainConfig short_run(int epochs = 2) {
    TrainConfig t;
    t.batch_size = 4;
    t.epochs = epochs;
    t.seed = 7;
    return t;
}

TensorF& param(ParameterList<float>& params, const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p.tensor;
    throw std::out_of_range(name);
}

}  // namespace

TEST_CASE("sgd step examples") {
    std::vector<float> w{1.0f}, v{0.0f};
    const std::vector<float> g{1.0f};
    sgd_step<float>(w, g, v, 0.1f, 0.9f, 0.0f);
    CHECK(v[0] == doctest::Approx(1.0f));
    CHECK(w[0] == doctest::Approx(0.9f));
    sgd_step<float>(w, g, v, 0.1f, 0.9f, 0.0f);
    CHECK(v[0] == doctest::Approx(1.9f));
    CHECK(w[0] == doctest::Approx(0.71f));

    std::vector<double> wd{2.5}, vd{0.0};
    sgd_step<double>(wd, std::vector<double>{0.0}, vd, 0.1, 0.9, 0.0);
    CHECK(wd[0] == 2.5);

    // Coupled decay: g' = g + wd * w.
    std::vector<double> w2{2.0}, v2{0.0};
    sgd_step<double>(w2, std::vector<double>{0.5}, v2, 0.1, 0.0, 0.25);
    CHECK(v2[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(w2[0] == doctest::Approx(1.9).epsilon(1e-15));

    std::vector<double> a{1.0, 2.0}, b{0.0};
    CHECK_THROWS(sgd_step<double>(a, std::vector<double>{1.0, 1.0}, b, 0.1, 0.9, 0.0));
}

TEST_CASE("one plain step descends a convex quadratic below the curvature bound") {
    // f(w) = L / 2 w^2, gradient L w; any lr < 2 / L reduces f.
    const double curvature = 4.0;
    for (double lr : {0.05, 0.2, 0.45, 0.49}) {
        std::vector<double> w{1.5}, v{0.0};
        const double before = curvature / 2 * w[0] * w[0];
        sgd_step<double>(w, std::vector<double>{curvature * w[0]}, v, lr, 0.0, 0.0);
        CHECK(curvature / 2 * w[0] * w[0] < before);
    }
    std::vector<double> w{1.5}, v{0.0};
    sgd_step<double>(w, std::vector<double>{curvature * w[0]}, v, 0.55, 0.0, 0.0);
    CHECK(std::abs(w[0]) > 1.5);
}

TEST_CASE("train config") {
    TrainConfig t;
    CHECK(t.lr == 0.01);
    CHECK(t.momentum == 0.9);
    CHECK(t.weight_decay == 1e-4);
    CHECK(t.batch_size == 8);
    CHECK(t.lambda_reg == 0.01);
    CHECK(TrainConfig::from_json(t.to_json()) == t);
    CHECK(TrainConfig::from_json({{"lr", 0.5}}, t).lr == 0.5);
    CHECK_THROWS(TrainConfig::from_json({{"learning_rate", 0.5}}));
    t.lr = 0;
    CHECK_THROWS(t.validate());
    t = TrainConfig{};
    t.momentum = 1.0;
    CHECK_THROWS(t.validate());
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS(t.validate());
}

TEST_CASE("shuffle order is a pure function of seed and epoch") {
    CHECK(Trainer::permutation(3, 1, 20) == Trainer::permutation(3, 1, 20));
    CHECK(Trainer::permutation(3, 1, 20) != Trainer::permutation(3, 2, 20));
    CHECK(Trainer::permutation(3, 1, 20) != Trainer::permutation(4, 1, 20));
    auto p = Trainer::permutation(3, 1, 20);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}

TEST_CASE("same-seed training is byte-identical") {
    const auto train = dataset(6, 32);
    auto run = [&] {
        PAMUNet<float> model(small_model(), 3);
        Trainer trainer(model, short_run());
        std::vector<std::string> rows;
        for (const auto& log : trainer.fit(train)) rows.push_back(log.csv_row());
        return std::pair{trainer.checkpoint().serialize(), rows};
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    REQUIRE(a.second.size() == 2);
    CHECK(std::string(EpochLog::csv_header) == "epoch,seg_loss,reg_loss,total_loss,train_dice");
}

TEST_CASE("checkpoint round trip") {
    PAMUNet<float> model(small_model(), 3);
    Trainer trainer(model, short_run(1));
    trainer.fit(dataset(4, 32));
    const Checkpoint c = trainer.checkpoint();
    const std::string bytes = c.serialize();
    CHECK(Checkpoint::deserialize(bytes).serialize() == bytes);

    const auto path = std::filesystem::temp_directory_path() / ("pamunet_ckpt_" + std::to_string(::getpid()));
    c.save(path / "m.pamckpt");
    const Checkpoint loaded = Checkpoint::load(path / "m.pamckpt");
    CHECK(loaded.serialize() == bytes);
    std::filesystem::remove_all(path);

    CHECK(loaded.epoch == 1);
    CHECK(loaded.steps == 1);
    CHECK(loaded.model == model.config());
    const PAMUNet<float> rebuilt = loaded.build_model();
    const auto a = model.parameters(), b = rebuilt.parameters();
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));

    std::string wrong_version = bytes;
    wrong_version[8] = 2;
    CHECK_THROWS_AS(Checkpoint::deserialize(wrong_version), DataError);
    CHECK_THROWS_AS(Checkpoint::deserialize("garbage"), DataError);
    CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 1)), DataError);
}

TEST_CASE("resuming continues the same trajectory") {
    const auto train = dataset(6, 32);
    PAMUNet<float> straight(small_model(), 3);
    Trainer full(straight, short_run(3));
    full.fit(train);

    PAMUNet<float> first(small_model(), 3);
    Trainer part(first, short_run(1));
    part.fit(train);
    Checkpoint mid = part.checkpoint();
    mid.train.epochs = 3;
    PAMUNet<float> second = mid.build_model();
    Trainer rest(second, mid);
    rest.fit(train);
    CHECK(rest.checkpoint().serialize() == full.checkpoint().serialize());
}

TEST_CASE("zero-initialized gates without regularization match the attention-free model") {
    const auto train = dataset(6, 32);
    PAMUNetConfig gated = small_model();
    gated.zero_init_gates = true;
    PAMUNetConfig plain = small_model();
    plain.attention_variant = AttentionVariant::none;
    TrainConfig t = short_run(3);
    t.lambda_reg = 0.0;
    PAMUNet<float> a(gated, 5), b(plain, 5);
    Trainer ta(a, t), tb(b, t);
    const auto la = ta.fit(train), lb = tb.fit(train);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(la[i].seg_loss == lb[i].seg_loss);
        CHECK(la[i].total_loss == lb[i].total_loss);
        CHECK(la[i].train_dice == lb[i].train_dice);
    }
}

TEST_CASE("step budget and incomplete batches") {
    const auto train = dataset(6, 32);
    PAMUNet<float> model(small_model(), 3);
    TrainConfig t = short_run(10);
    t.max_steps = 3;
    Trainer trainer(model, t);
    const auto logs = trainer.fit(train);
    CHECK(trainer.steps() == 3);
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].steps == 2);
    CHECK(logs[1].steps == 1);
    CHECK(trainer.finished());
    CHECK_THROWS_AS(trainer.run_epoch({}), DataError);
}

TEST_CASE("non-finite loss names the first bad layer") {
    PAMUNet<float> model(small_model(), 3);
    auto params = model.parameters();
    param(params, "enc0.ir1.expand.weight").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    Trainer trainer(model, short_run(1));
    try {
        trainer.run_epoch(dataset(4, 32));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("enc0.ir1") != std::string::npos);
    }
}

TEST_CASE("evaluation identities") {
    PAMUNet<float> model(small_model(), 3);
    auto samples = dataset(10, 32, 9);

    SUBCASE("own predictions as ground truth") {
        for (auto& s : samples) {
            TensorF x(Shape{1, 1, 32, 32}, std::vector<float>(s.image.data().begin(), s.image.data().end()));
            TensorF m = model.predict_mask(x);
            s.mask = TensorF(Shape{1, 32, 32}, std::vector<float>(m.data().begin(), m.data().end()));
        }
        const MetricReport r = evaluate(model, samples, 3);
        CHECK(r.samples.size() == 10);
        CHECK(r.mean_dice == 1.0);
        CHECK(r.mean_miou == 1.0);
        CHECK(r.mean_recall == 1.0);
    }
    SUBCASE("all-background predictor") {
        auto params = model.parameters();
        TensorF& w = param(params, "head.weight");
        std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0f);
        param(params, "head.bias").mutable_data()[0] = -10.0f;
        const MetricReport r = evaluate(model, samples);
        for (const auto& row : r.samples) CHECK(row.recall < 1e-6);
    }
    SUBCASE("per-sample rows equal direct metric calls") {
        const MetricReport r = evaluate(model, samples, 4);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            TensorF x(Shape{1, 1, 32, 32}, std::vector<float>(samples[i].image.data().begin(),
                                                              samples[i].image.data().end()));
            const TensorF pred = model.predict_mask(x);
            const std::vector<double> p(pred.data().begin(), pred.data().end());
            const std::vector<double> g(samples[i].mask.data().begin(), samples[i].mask.data().end());
            const Confusion c = confusion(p, g);
            CHECK(r.samples[i].id == samples[i].id);
            CHECK(r.samples[i].dice == dice(c));
            CHECK(r.samples[i].miou == miou(c));
            CHECK(r.samples[i].recall == recall(c));
        }
    }
    CHECK_THROWS_AS(evaluate(model, {}), DataError);
}
