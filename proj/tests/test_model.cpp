#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "support.hpp"
#include "vulsatd/error.hpp"
#include "vulsatd/model.hpp"

using namespace vulsatd;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(TaskMode mode) {
    ModelConfig mc;
    mc.vocab_size = 40;
    mc.hidden = 12;
    mc.layers = 2;
    mc.heads = 2;
    mc.max_len = 16;
    mc.dropout = 0.0;
    mc.task_mode = mode;
    mc.seed = 11;
    return mc;
}

EncodedPair make_input(const std::string& id, std::initializer_list<int> comment,
                       std::initializer_list<int> code) {
    EncodedPair e;
    e.id = id;
    e.comment_ids.assign(comment);
    e.code_ids.assign(code);
    e.input_ids.push_back(TokenizerModel::kCls);
    e.input_ids.insert(e.input_ids.end(), e.comment_ids.begin(), e.comment_ids.end());
    e.input_ids.push_back(TokenizerModel::kSep);
    e.input_ids.insert(e.input_ids.end(), e.code_ids.begin(), e.code_ids.end());
    e.input_ids.push_back(TokenizerModel::kEos);
    e.segment_lengths = {static_cast<int>(e.comment_ids.size()),
                         static_cast<int>(e.code_ids.size())};
    return e;
}

bool params_equal(const Model& a, const Model& b) {
    if (a.params().size() != b.params().size()) return false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        if (a.params()[i].name != b.params()[i].name) return false;
        if (a.params()[i].w.a != b.params()[i].w.a) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("same seed twice gives bitwise-identical parameters") {
    Model a(tiny_config(TaskMode::Multi));
    Model b(tiny_config(TaskMode::Multi));
    CHECK(params_equal(a, b));
}

TEST_CASE("task modes share the encoder initialization") {
    Model multi(tiny_config(TaskMode::Multi));
    Model st(tiny_config(TaskMode::StSatd));
    CHECK(multi.has_satd_head());
    CHECK(multi.has_vuln_head());
    CHECK(st.has_satd_head());
    CHECK_FALSE(st.has_vuln_head());
    for (const Param& p : st.params()) {
        const auto it = std::find_if(multi.params().begin(), multi.params().end(),
                                     [&](const Param& q) { return q.name == p.name; });
        REQUIRE(it != multi.params().end());
        CHECK(it->w.a == p.w.a);
    }
}

TEST_CASE("parameter count matches independent arithmetic") {
    ModelConfig mc;
    mc.vocab_size = 1000;
    mc.hidden = 64;
    mc.layers = 2;
    mc.heads = 4;
    mc.max_len = 512;
    mc.task_mode = TaskMode::Multi;
    Model model(mc);
    const std::size_t h = 64, f = 4 * h;
    const std::size_t per_layer = 2 * h                 // ln1
                                  + 4 * (h * h + h)     // q, k, v, o projections
                                  + 2 * h               // ln2
                                  + (h * f + f)         // ffn in
                                  + (f * h + h);        // ffn out
    const std::size_t expected = 1000 * h + 512 * h + 2 * per_layer + 2 * h  // final ln
                                 + 2 * (h * 2 + 2);                          // two heads
    CHECK(model.parameter_count() == expected);
}

TEST_CASE("attention rows are probability distributions at every layer and head") {
    Model model(tiny_config(TaskMode::Multi));
    const EncodedPair e = make_input("att", {6, 7, 8}, {9, 10, 11, 12});
    const auto probs = model.attention_probs(e);
    REQUIRE(probs.size() == 2);
    for (const auto& layer : probs) {
        REQUIRE(layer.size() == 2);
        for (const Matrix& p : layer) {
            REQUIRE(p.rows == static_cast<int>(e.input_ids.size()));
            for (int t = 0; t < p.rows; ++t) {
                double sum = 0.0;
                for (int u = 0; u < p.cols; ++u) {
                    CHECK(p[t][u] >= 0.0);
                    sum += p[t][u];
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("logits do not depend on batch composition") {
    Model model(tiny_config(TaskMode::Multi));
    const EncodedPair target = make_input("t", {6, 7}, {8, 9});
    const auto solo = model.forward({target}, false);
    std::vector<EncodedPair> batch;
    for (int i = 0; i < 7; ++i)
        batch.push_back(make_input("pad" + std::to_string(i), {10, 11, 12, 13},
                                   {14, 15, 16, 17, 18, 19}));
    batch.push_back(target);
    const auto padded = model.forward(batch, false);
    REQUIRE(solo.size() == 1);
    REQUIRE(padded.size() == 8);
    CHECK((*padded[7].satd)[0] == doctest::Approx((*solo[0].satd)[0]).epsilon(1e-6));
    CHECK((*padded[7].satd)[1] == doctest::Approx((*solo[0].satd)[1]).epsilon(1e-6));
    CHECK((*padded[7].vuln)[0] == doctest::Approx((*solo[0].vuln)[0]).epsilon(1e-6));
    CHECK((*padded[7].vuln)[1] == doctest::Approx((*solo[0].vuln)[1]).epsilon(1e-6));

    // permuting the batch permutes the outputs
    std::vector<EncodedPair> reversed(batch.rbegin(), batch.rend());
    const auto back = model.forward(reversed, false);
    CHECK((*back[0].satd)[0] == (*padded[7].satd)[0]);
    CHECK((*back[7].satd)[1] == (*padded[0].satd)[1]);
}

TEST_CASE("over-length and malformed inputs are rejected by id") {
    Model model(tiny_config(TaskMode::StSatd));
    std::vector<int> long_code(20, 6);
    EncodedPair e = make_input("too_long", {6}, {7});
    e.input_ids.insert(e.input_ids.end(), long_code.begin(), long_code.end());
    try {
        model.forward({e}, false);
        FAIL("expected InputError");
    } catch (const InputError& err) {
        CHECK(std::string(err.what()).find("too_long") != std::string::npos);
    }
    CHECK_THROWS_AS(model.forward({}, false), InputError);
}

TEST_CASE("class weights follow the inverse-frequency rule") {
    std::vector<bool> labels(90, false);
    labels.insert(labels.end(), 10, true);
    const ClassWeights w = class_weights(labels);
    CHECK(w.negative == doctest::Approx(0.5556).epsilon(1e-3));
    CHECK(w.positive == doctest::Approx(5.0).epsilon(1e-9));

    std::vector<bool> balanced(50, false);
    balanced.insert(balanced.end(), 50, true);
    const ClassWeights wb = class_weights(balanced);
    CHECK(wb.negative == doctest::Approx(1.0));
    CHECK(wb.positive == doctest::Approx(1.0));

    // doubling every count leaves the weights unchanged
    std::vector<bool> doubled(180, false);
    doubled.insert(doubled.end(), 20, true);
    const ClassWeights wd = class_weights(doubled);
    CHECK(wd.negative == doctest::Approx(w.negative));
    CHECK(wd.positive == doctest::Approx(w.positive));

    CHECK_THROWS_AS((void)class_weights(std::vector<bool>(5, true)), InputError);
}

TEST_CASE("uniform logits cost ln 2 per task") {
    Model model(tiny_config(TaskMode::Multi));
    TaskLogits logits;
    logits.satd = {0.0, 0.0};
    logits.vuln = {0.0, 0.0};
    TaskLabels labels{true, false};
    const double loss = model.example_loss(logits, labels, TaskWeights{}, 0.0);
    CHECK(loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // saturated logits on the true class cost nothing
    TaskLogits sat;
    sat.satd = {-50.0, 50.0};
    sat.vuln = {50.0, -50.0};
    CHECK(model.example_loss(sat, labels, TaskWeights{}, 0.0) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("unit weights reproduce the unweighted loss") {
    Model model(tiny_config(TaskMode::Multi));
    TaskLogits logits;
    logits.satd = {0.3, -0.9};
    logits.vuln = {-1.2, 0.4};
    TaskLabels labels{false, true};
    TaskWeights unit;  // (1, 1) per task
    const double a = model.example_loss(logits, labels, unit, 0.0);
    // manual unweighted cross-entropy
    const auto ps = binary_softmax(*logits.satd);
    const auto pv = binary_softmax(*logits.vuln);
    const double expected = -std::log(ps[0]) - std::log(pv[1]);
    CHECK(a == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("multi-task loss is the sum of the single-task losses") {
    const EncodedPair e = make_input("sum", {6, 7, 8}, {9, 10});
    Model multi(tiny_config(TaskMode::Multi));
    Model st_satd(tiny_config(TaskMode::StSatd));
    Model st_vuln(tiny_config(TaskMode::StVuln));
    // equal seeds give the three models identical encoder and head parameters
    const TaskLogits lm = multi.forward({e}, false)[0];
    const TaskLogits ls = st_satd.forward({e}, false)[0];
    const TaskLogits lv = st_vuln.forward({e}, false)[0];
    CHECK((*lm.satd)[0] == doctest::Approx((*ls.satd)[0]).epsilon(1e-12));
    CHECK((*lm.vuln)[1] == doctest::Approx((*lv.vuln)[1]).epsilon(1e-12));

    TaskLabels both{true, false};
    TaskLabels satd_only{true, std::nullopt};
    TaskLabels vuln_only{std::nullopt, false};
    const double sum = st_satd.example_loss(ls, satd_only, TaskWeights{}, 0.0) +
                       st_vuln.example_loss(lv, vuln_only, TaskWeights{}, 0.0);
    CHECK(multi.example_loss(lm, both, TaskWeights{}, 0.0) ==
          doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("the l2 term adds exactly two lambda w to each gradient") {
    Model model(tiny_config(TaskMode::StSatd));
    std::vector<LabeledExample> batch;
    batch.push_back({make_input("a", {6, 7}, {8, 9}), {true, std::nullopt}});
    batch.push_back({make_input("b", {10}, {11, 12}), {false, std::nullopt}});

    model.batch_loss_and_gradients(batch, TaskWeights{}, 0.0);
    std::vector<Matrix> plain;
    for (const Param& p : model.params()) plain.push_back(p.g);

    const double lambda = 0.37;
    model.batch_loss_and_gradients(batch, TaskWeights{}, lambda);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const Param& p = model.params()[i];
        for (std::size_t j = 0; j < p.g.a.size(); ++j) {
            const double expected = plain[i].a[j] + 2.0 * lambda * p.w.a[j];
            CHECK(p.g.a[j] == doctest::Approx(expected).epsilon(1e-9));
        }
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    GradCheckResult st = grad_check(tiny_config(TaskMode::StSatd));
    CAPTURE(st.worst_param);
    CHECK(st.max_rel_error < 1e-4);
    GradCheckResult multi = grad_check(tiny_config(TaskMode::Multi));
    CAPTURE(multi.worst_param);
    CHECK(multi.max_rel_error < 1e-4);

    ModelConfig with_dropout = tiny_config(TaskMode::Multi);
    with_dropout.dropout = 0.1;
    CHECK_THROWS_AS((void)grad_check(with_dropout), InputError);
}

TEST_CASE("zeroing one head leaves the other task's logits unchanged") {
    Model model(tiny_config(TaskMode::Multi));
    const EncodedPair e = make_input("heads", {6, 7, 8}, {9, 10, 11});
    const TaskLogits before = model.forward({e}, false)[0];
    for (Param& p : model.params())
        if (p.name.rfind("head.satd", 0) == 0) p.w.zero();
    const TaskLogits after = model.forward({e}, false)[0];
    CHECK((*after.vuln)[0] == (*before.vuln)[0]);
    CHECK((*after.vuln)[1] == (*before.vuln)[1]);
    CHECK((*after.satd)[0] == 0.0);
    CHECK((*after.satd)[1] == 0.0);
}

TEST_CASE("zero learning rate leaves parameters and history flat") {
    using namespace vulsatd::testsupport;
    const auto corpus = separable_corpus(24);
    const auto encoded = encode_corpus(corpus, 120, 13);
    const std::vector<LabeledExample> train(encoded.examples.begin(),
                                            encoded.examples.begin() + 16);
    const std::vector<LabeledExample> val(encoded.examples.begin() + 16,
                                          encoded.examples.end());
    ModelConfig mc = tiny_config(TaskMode::Multi);
    mc.vocab_size = 200;
    mc.max_len = 16;
    Model model(mc);
    std::vector<Matrix> before;
    for (const Param& p : model.params()) before.push_back(p.w);

    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 5;
    const TrainResult r = model.train(train, val, tc);
    for (std::size_t i = 0; i < model.params().size(); ++i)
        CHECK(model.params()[i].w.a == before[i].a);
    REQUIRE(r.history.size() == 3);
    CHECK(r.history[0].train_loss == r.history[1].train_loss);
    CHECK(r.history[1].val_loss == r.history[2].val_loss);
}

TEST_CASE("prediction is softmax argmax and shift invariant") {
    const auto p = binary_softmax({2.0, -1.0});
    CHECK(p[0] == doctest::Approx(0.9526).epsilon(1e-3));
    const auto shifted = binary_softmax({2.0 + 100.0, -1.0 + 100.0});
    CHECK(shifted[0] == doctest::Approx(p[0]).epsilon(1e-12));

    Model model(tiny_config(TaskMode::Multi));
    const EncodedPair e = make_input("pred", {6, 7}, {8, 9, 10});
    const TaskLogits logits = model.forward({e}, false)[0];
    const Prediction pred = model.predict({e})[0];
    CHECK(*pred.satd == ((*logits.satd)[1] > (*logits.satd)[0]));
    CHECK((*pred.satd_probs)[0] + (*pred.satd_probs)[1] == doctest::Approx(1.0));
}

TEST_CASE("a small model overfits the separable corpus deterministically") {
    using namespace vulsatd::testsupport;
    const auto corpus = separable_corpus(64);
    const auto encoded = encode_corpus(corpus, 300, 29);
    const std::vector<LabeledExample> train(encoded.examples.begin(),
                                            encoded.examples.begin() + 48);
    const std::vector<LabeledExample> val(encoded.examples.begin() + 48,
                                          encoded.examples.end());

    ModelConfig mc;
    mc.vocab_size = 300;
    mc.hidden = 32;
    mc.layers = 2;
    mc.heads = 2;
    mc.max_len = 32;
    mc.dropout = 0.1;
    mc.task_mode = TaskMode::Multi;
    mc.seed = 3;

    TrainConfig tc;
    tc.learning_rate = 1e-3;  // from-scratch scale; the reference rate targets fine-tuning
    tc.epochs = 20;
    tc.batch_size = 16;
    tc.seed = 9;

    Model model(mc);
    const TrainResult r = model.train(train, val, tc);
    double best_satd = 0.0, best_vuln = 0.0;
    for (const EpochStats& es : r.history) {
        best_satd = std::max(best_satd, es.train_satd->f1);
        best_vuln = std::max(best_vuln, es.train_vuln->f1);
    }
    CHECK(best_satd >= 0.95);
    CHECK(best_vuln >= 0.95);

    Model rerun(mc);
    const TrainResult r2 = rerun.train(train, val, tc);
    REQUIRE(r2.history.size() == r.history.size());
    for (std::size_t i = 0; i < r.history.size(); ++i) {
        CHECK(r2.history[i].train_loss == r.history[i].train_loss);
        CHECK(r2.history[i].val_loss == r.history[i].val_loss);
    }
    CHECK(r2.best_epoch == r.best_epoch);
    CHECK(params_equal(model, rerun));
}

TEST_CASE("checkpoints restore parameters bitwise") {
    using namespace vulsatd::testsupport;
    Model model(tiny_config(TaskMode::Multi));
    // nudge the weights away from initialization first
    const auto corpus = separable_corpus(16);
    const auto encoded = encode_corpus(corpus, 150, 13);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 1;
    tc.batch_size = 8;
    const std::vector<LabeledExample> train(encoded.examples.begin(),
                                            encoded.examples.begin() + 12);
    const std::vector<LabeledExample> val(encoded.examples.begin() + 12,
                                          encoded.examples.end());
    ModelConfig mc = tiny_config(TaskMode::Multi);
    mc.vocab_size = 150;
    Model trained(mc);
    trained.train(train, val, tc);

    const fs::path path = fs::temp_directory_path() / "vulsatd_ckpt.bin";
    trained.save(path);
    const Model loaded = Model::load(path);
    CHECK(loaded.config().hidden == mc.hidden);
    CHECK(loaded.config().task_mode == TaskMode::Multi);
    CHECK(loaded.config().seed == mc.seed);
    CHECK(params_equal(trained, loaded));
    fs::remove(path);
}
