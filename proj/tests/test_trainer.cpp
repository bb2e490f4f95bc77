#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cmn/commands.hpp"
#include "cmn/errors.hpp"
#include "cmn/trainer.hpp"
#include "support.hpp"

using namespace cmn;
using cmn::testing::temp_dir;

namespace {

// Plain scalar Adam with bias correction.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double x, double g, double lr) {
        ++t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        return x - lr * mh / (std::sqrt(vh) + 1e-8);
    }
};

void set_grad(Tensor& t, std::span<const Real> g) {
    t.zero_grad();
    Tensor loss = sum(mul(t, Tensor(t.shape(), std::vector<Real>(g.begin(), g.end()))));
    loss.backward();
}

struct MicroData {
    RunConfig cfg;
    Dataset data;
    std::vector<TrainingPair> pairs;
};

MicroData micro_data(const std::string& name, std::size_t n_train) {
    const auto dir = temp_dir(name);
    CorpusOptions opt;
    opt.n_train = n_train;
    opt.n_val = 1;
    opt.n_test = 1;
    generate_corpus(opt, dir);
    MicroData d;
    d.cfg.apply_preset("micro");
    d.cfg.manifest = dir / "manifest.json";
    d.data = load_dataset(d.cfg);
    d.cfg.model = resolve_model_config(d.cfg, d.data);
    d.pairs = make_pairs(d.cfg, d.data, "train");
    return d;
}

}  // namespace

TEST_CASE("adam first step on a scalar") {
    Tensor x = Tensor::vector({0.0}, true);
    Adam opt({{"x", x, false}});
    const std::vector<Real> g{1.0};
    set_grad(x, g);
    opt.step(0.1, 0.1);
    CHECK(x.item() == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam matches hand-computed steps on a quadratic") {
    // f(x) = (x - 3)^2, gradient 2(x - 3)
    Tensor x = Tensor::vector({0.5}, true);
    Adam opt({{"x", x, false}});
    ScalarAdam ref;
    double xr = 0.5;
    const double hand[3] = {0.5499999999, 0.5999711214651299, 0.6498933541820149};
    for (int i = 0; i < 3; ++i) {
        x.zero_grad();
        Tensor loss = sum(mul(sub(x, Tensor::vector({3.0})), sub(x, Tensor::vector({3.0}))));
        loss.backward();
        CHECK(x.grad()[0] == doctest::Approx(2 * (xr - 3)).epsilon(1e-14));
        opt.step(0.05, 0.05);
        xr = ref.step(xr, 2 * (xr - 3), 0.05);
        CHECK(std::abs(x.item() - xr) < 1e-10);
        CHECK(std::abs(x.item() - hand[i]) < 1e-10);
    }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    Tensor x = Tensor::vector({1.5, -2.0}, true);
    Adam opt({{"x", x, false}});
    const std::vector<Real> g{0.0, 0.0};
    set_grad(x, g);
    opt.step(0.1, 0.1);
    CHECK(x.data()[0] == 1.5);
    CHECK(x.data()[1] == -2.0);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("non-finite gradient names the parameter") {
    Tensor x = Tensor::vector({1.0}, true);
    Adam opt({{"decoder.0.ffn.in.weight", x, false}});
    const std::vector<Real> g{NAN};
    set_grad(x, g);
    try {
        opt.step(0.1, 0.1);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("decoder.0.ffn.in.weight") != std::string::npos);
    }
    CHECK(x.item() == 1.0);
}

TEST_CASE("two learning-rate groups") {
    Tensor a = Tensor::vector({0.0, 0.0}, true), b = Tensor::vector({0.0, 0.0}, true);
    Adam opt({{"visual.proj.weight", a, true}, {"embedding", b, false}});
    const std::vector<Real> g{3.0, -0.5};
    set_grad(a, g);
    set_grad(b, g);
    opt.step(1e-3, 5e-2);
    CHECK(a.data()[0] == doctest::Approx(-1e-3));
    CHECK(a.data()[1] == doctest::Approx(1e-3));
    CHECK(b.data()[0] == doctest::Approx(-5e-2));
    CHECK(b.data()[1] == doctest::Approx(5e-2));
}

TEST_CASE("schedule decays per epoch") {
    const Schedule s;
    CHECK(s.other_at(1) == 0.8 * s.other_at(0));
    CHECK(s.visual_at(1) == 0.8 * s.visual_at(0));
    CHECK(s.other_at(0) == 1e-4);
    CHECK(s.visual_at(0) == 5e-5);
    CHECK(s.other_at(3) == doctest::Approx(1e-4 * 0.512).epsilon(1e-15));
    CHECK_THROWS_AS((Schedule{0.0, 1e-4, 0.8}.validate()), ArgumentError);
    CHECK_THROWS_AS((Schedule{1e-4, 1e-4, 1.5}.validate()), ArgumentError);
    CHECK_NOTHROW((Schedule{1e-4, 1e-4, 1.0}.validate()));
}

TEST_CASE("epoch order is a seeded permutation") {
    const auto a = epoch_order(32, 5, 0), b = epoch_order(32, 5, 0), c = epoch_order(32, 5, 1);
    CHECK(a == b);
    CHECK(a != c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 32; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("training logs the decayed rates and rejects empty data") {
    auto d = micro_data("trainer-log", 8);
    ReportModel model(d.cfg.model, 1);
    TrainOptions opt;
    opt.epochs = 2;
    opt.batch_size = 4;
    const Schedule sched{1e-3, 2e-3, 0.8};
    const auto r = train(model, d.pairs, sched, opt);
    REQUIRE(r.log.size() == 4);
    CHECK(r.log[2].lr_other == 0.8 * r.log[0].lr_other);
    CHECK(r.log[2].lr_visual == 0.8 * r.log[0].lr_visual);
    std::ostringstream csv;
    write_loss_log(csv, r.log);
    CHECK(csv.str().starts_with("epoch,step,loss,lr_visual,lr_other\n0,1,"));
    CHECK_THROWS_AS(train(model, std::span<const TrainingPair>{}, sched, opt), ArgumentError);
}

TEST_CASE("training is deterministic under a seed") {
    auto d = micro_data("trainer-det", 16);
    TrainOptions opt;
    opt.epochs = 2;
    opt.seed = 9;
    ReportModel a(d.cfg.model, 3), b(d.cfg.model, 3);
    const auto ra = train(a, d.pairs, d.cfg.schedule, opt);
    const auto rb = train(b, d.pairs, d.cfg.schedule, opt);
    REQUIRE(ra.log.size() == rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].loss == rb.log[i].loss);
}

TEST_CASE("two hundred steps halve the training loss") {
    auto d = micro_data("trainer-200", 32);
    ReportModel model(d.cfg.model, 0);
    TrainOptions opt;
    opt.epochs = 1000;
    opt.batch_size = 8;
    opt.max_steps = 200;
    const auto r = train(model, d.pairs, d.cfg.schedule, opt);
    REQUIRE(r.steps == opt.max_steps);
    double last = 0.0;
    for (std::size_t i = r.log.size() - 4; i < r.log.size(); ++i) last += r.log[i].loss / 4.0;
    MESSAGE("initial loss " << r.log.front().loss << ", final epoch mean " << last);
    CHECK(last <= 0.5 * r.log.front().loss);
}

TEST_CASE("checkpoint written each epoch reloads bit-identically") {
    auto d = micro_data("trainer-ckpt", 8);
    const auto dir = temp_dir("trainer-ckpt-out");
    ReportModel model(d.cfg.model, 4);
    TrainOptions opt;
    opt.epochs = 2;
    opt.checkpoint_dir = dir;
    opt.vocab = d.data.vocab.tokens();
    std::size_t epochs_seen = 0;
    opt.on_epoch = [&](std::size_t, const ReportModel&) {
        CHECK(std::filesystem::exists(dir / "last.ckpt"));
        ++epochs_seen;
    };
    train(model, d.pairs, d.cfg.schedule, opt);
    CHECK(epochs_seen == 2);
    const auto ck = load_checkpoint(dir / "last.ckpt", &d.cfg.model);
    CHECK(ck.vocab == d.data.vocab.tokens());
    const auto& p = d.pairs[0];
    const Tensor x = model.logits(p.visual, p.tokens), y = ck.model->logits(p.visual, p.tokens);
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}
