#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "vulsatd/error.hpp"
#include "vulsatd/experiment.hpp"

using namespace vulsatd;
using namespace vulsatd::testsupport;

namespace {

std::vector<FunctionRecord> numbered_records(int n) {
    std::vector<FunctionRecord> out;
    for (int i = 0; i < n; ++i) {
        FunctionRecord r;
        r.id = "r" + std::to_string(i);
        r.code = "int f(){}";
        out.push_back(std::move(r));
    }
    return out;
}

Cell make_cell(const std::string& dataset, ApproachRow approach, LossMode loss, double f1) {
    Cell c;
    c.dataset = dataset;
    c.approach = approach;
    c.loss = loss;
    c.metrics.f1 = f1;
    return c;
}

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

}  // namespace

TEST_CASE("split slices 100 records into 80/10/10") {
    const auto parts = split(numbered_records(100), {0.8, 0.1, 0.1}, 17);
    CHECK(parts.train.size() == 80);
    CHECK(parts.val.size() == 10);
    CHECK(parts.test.size() == 10);

    const auto again = split(numbered_records(100), {0.8, 0.1, 0.1}, 17);
    for (std::size_t i = 0; i < parts.train.size(); ++i)
        CHECK(parts.train[i].id == again.train[i].id);
    for (std::size_t i = 0; i < parts.test.size(); ++i)
        CHECK(parts.test[i].id == again.test[i].id);

    // union of the parts is the input multiset
    std::multiset<std::string> seen;
    for (const auto& r : parts.train) seen.insert(r.id);
    for (const auto& r : parts.val) seen.insert(r.id);
    for (const auto& r : parts.test) seen.insert(r.id);
    CHECK(seen.size() == 100);
    for (int i = 0; i < 100; ++i) CHECK(seen.count("r" + std::to_string(i)) == 1);
}

TEST_CASE("split rejects bad fractions and tiny datasets") {
    CHECK_THROWS_AS((void)split(numbered_records(100), {0.8, 0.1, 0.2}, 1), InputError);
    CHECK_THROWS_AS((void)split(numbered_records(9), {0.8, 0.1, 0.1}, 1), InputError);
    CHECK_THROWS_AS((void)split(numbered_records(100), {1.0, 0.0, 0.0}, 1), InputError);
}

TEST_CASE("stratified split preserves label-pair proportions") {
    const auto corpus = separable_corpus(64);  // 16 records per label pair
    const auto parts = split_stratified(corpus, {0.8, 0.1, 0.1}, 23);
    auto count_pairs = [](const std::vector<FunctionRecord>& rs) {
        std::map<std::pair<bool, bool>, int> c;
        for (const auto& r : rs) ++c[{*r.satd_label, *r.vuln_label}];
        return c;
    };
    const auto train_counts = count_pairs(parts.train);
    REQUIRE(train_counts.size() == 4);
    for (const auto& [pair, count] : train_counts) CHECK(count == 12);
    CHECK(parts.train.size() == 48);
    CHECK(parts.val.size() == 4);
    CHECK(parts.test.size() == 12);
}

TEST_CASE("compute_metrics reproduces the published precision/recall pairs") {
    // counts engineered to produce P = 0.944, R = 0.880 exactly
    {
        std::vector<bool> pred, truth;
        auto add = [&](int n, bool p, bool t) {
            for (int i = 0; i < n; ++i) {
                pred.push_back(p);
                truth.push_back(t);
            }
        };
        add(2596, true, true);    // tp
        add(154, true, false);    // fp
        add(354, false, true);    // fn
        add(100, false, false);   // tn
        const Metrics m = compute_metrics(pred, truth);
        CHECK(m.precision == doctest::Approx(0.944).epsilon(1e-9));
        CHECK(m.recall == doctest::Approx(0.880).epsilon(1e-9));
        CHECK(std::abs(m.f1 - 0.911) <= 0.001);
    }
    // P = 0.991, R = 0.515
    {
        const Metrics m = metrics_from_counts(102073, 927, 96127, 5);
        CHECK(m.precision == doctest::Approx(0.991).epsilon(1e-9));
        CHECK(m.recall == doctest::Approx(0.515).epsilon(1e-9));
        CHECK(std::abs(m.f1 - 0.678) <= 0.001);
    }
    // all correct
    {
        const Metrics m = compute_metrics({true, false, true}, {true, false, true});
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
    }
}

TEST_CASE("metrics agree with a brute-force recount on random vectors") {
    std::mt19937_64 rng(13);
    for (int iter = 0; iter < 3000; ++iter) {
        const int n = 1 + static_cast<int>(rng() % 12);
        std::vector<bool> pred(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            pred[static_cast<std::size_t>(i)] = rng() % 2;
            truth[static_cast<std::size_t>(i)] = rng() % 2;
        }
        std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (int i = 0; i < n; ++i) {
            const bool p = pred[static_cast<std::size_t>(i)], t = truth[static_cast<std::size_t>(i)];
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
            tn += !p && !t;
        }
        const Metrics m = compute_metrics(pred, truth);
        CHECK(m.tp == tp);
        CHECK(m.fp == fp);
        CHECK(m.fn == fn);
        CHECK(m.tn == tn);
        CHECK(m.precision >= 0.0);
        CHECK(m.precision <= 1.0);
        CHECK(m.recall >= 0.0);
        CHECK(m.recall <= 1.0);
        CHECK(m.f1 <= std::max(m.precision, m.recall) + 1e-12);
        CHECK((m.f1 == 0.0) == (tp == 0));

        // label-swap symmetry
        std::vector<bool> pred_sw(pred.size()), truth_sw(truth.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred_sw[i] = !pred[i];
            truth_sw[i] = !truth[i];
        }
        const Metrics sw = compute_metrics(pred_sw, truth_sw);
        CHECK(sw.tp == tn);
        CHECK(sw.tn == tp);
        CHECK(sw.fp == fn);
        CHECK(sw.fn == fp);
    }
    CHECK_THROWS_AS((void)compute_metrics({true}, {true, false}), InputError);
    CHECK_THROWS_AS((void)compute_metrics({}, {}), InputError);
}

TEST_CASE("build_report reproduces the reference delta table") {
    // F1 columns of the regular-loss comparison
    std::vector<Cell> cells;
    cells.push_back(make_cell("ospr", ApproachRow::MtSatd, LossMode::Regular, 0.711));
    cells.push_back(make_cell("ospr", ApproachRow::MtVuln, LossMode::Regular, 0.967));
    cells.push_back(make_cell("ospr", ApproachRow::StSatd, LossMode::Regular, 0.678));
    cells.push_back(make_cell("ospr", ApproachRow::StVuln, LossMode::Regular, 0.968));
    // weighted rows
    cells.push_back(make_cell("ospr", ApproachRow::MtSatd, LossMode::Weighted, 0.690));
    cells.push_back(make_cell("ospr", ApproachRow::MtVuln, LossMode::Weighted, 0.969));
    cells.push_back(make_cell("ospr", ApproachRow::StSatd, LossMode::Weighted, 0.713));
    cells.push_back(make_cell("ospr", ApproachRow::StVuln, LossMode::Weighted, 0.967));

    const auto reports = build_report(cells);
    REQUIRE(reports.size() == 1);
    const ExperimentReport& rep = reports[0];

    // rows ordered regular-then-weighted, MT before ST
    REQUIRE(rep.rows.size() == 8);
    CHECK(rep.rows[0].approach == ApproachRow::MtSatd);
    CHECK(rep.rows[0].loss == LossMode::Regular);
    CHECK(rep.rows[2].approach == ApproachRow::StSatd);
    CHECK(rep.rows[4].loss == LossMode::Weighted);

    auto delta = [&](bool satd, LossMode loss) {
        for (const DeltaF1& d : rep.delta_f1)
            if (d.satd_task == satd && d.loss == loss) return d.value;
        FAIL("missing delta");
        return 0.0;
    };
    CHECK(round3(delta(true, LossMode::Regular)) == doctest::Approx(0.033));
    CHECK(round3(delta(false, LossMode::Regular)) == doctest::Approx(-0.001));
    CHECK(round3(delta(true, LossMode::Weighted)) == doctest::Approx(-0.023));

    auto prime = [&](ApproachRow row) {
        for (const DeltaPrimeF1& d : rep.delta_prime_f1)
            if (d.approach == row) return d.value;
        FAIL("missing delta prime");
        return 0.0;
    };
    CHECK(round3(prime(ApproachRow::StSatd)) == doctest::Approx(0.035));
    CHECK(round3(prime(ApproachRow::MtSatd)) == doctest::Approx(-0.021));
    CHECK(round3(prime(ApproachRow::MtVuln)) == doctest::Approx(0.002));
    CHECK(round3(prime(ApproachRow::StVuln)) == doctest::Approx(-0.001));

    // every delta is a difference of two row F1s
    for (const DeltaF1& d : rep.delta_f1) {
        bool matched = false;
        for (const Cell& a : rep.rows)
            for (const Cell& b : rep.rows)
                if (std::abs((a.metrics.f1 - b.metrics.f1) - d.value) < 1e-9) matched = true;
        CHECK(matched);
    }
}

TEST_CASE("identical cells produce zero deltas and no direction marker") {
    std::vector<Cell> cells;
    cells.push_back(make_cell("d", ApproachRow::MtSatd, LossMode::Regular, 0.5));
    cells.push_back(make_cell("d", ApproachRow::StSatd, LossMode::Regular, 0.5));
    const auto reports = build_report(cells);
    REQUIRE(reports.size() == 1);
    REQUIRE(reports[0].delta_f1.size() == 1);
    CHECK(reports[0].delta_f1[0].value == 0.0);
    CHECK(delta_marker(0.0).empty());
    CHECK(delta_marker(0.033) == "▲");
    CHECK(delta_marker(-0.001) == "▼");
}

TEST_CASE("missing delta operands are reported by name") {
    std::vector<Cell> only_mt{make_cell("d", ApproachRow::MtSatd, LossMode::Regular, 0.5)};
    try {
        build_report(only_mt);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("st_satd") != std::string::npos);
    }
    std::vector<Cell> only_weighted{make_cell("d", ApproachRow::StSatd, LossMode::Weighted, 0.5)};
    try {
        build_report(only_weighted);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("regular") != std::string::npos);
    }
}

TEST_CASE("multi-task cells emit both rows from one training run") {
    const auto corpus = separable_corpus(40);
    ModelConfig mc;
    mc.vocab_size = 300;
    mc.hidden = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.max_len = 32;
    mc.dropout = 0.0;
    mc.task_mode = TaskMode::Multi;
    mc.seed = 21;
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 22;

    const CellRunResult r = run_cell(corpus, "synthetic", LossMode::Regular, InputMode::Out, mc, tc);
    REQUIRE(r.cells.size() == 2);
    CHECK(r.cells[0].approach == ApproachRow::MtSatd);
    CHECK(r.cells[1].approach == ApproachRow::MtVuln);
    CHECK(r.cells[0].seed == 22);
    CHECK(r.cells[0].wall_train_s == r.cells[1].wall_train_s);
    CHECK(r.history.size() == 2);
    CHECK(r.train_size == 32);
    CHECK(r.val_size == 4);
    CHECK(r.test_size == 4);

    // determinism: metrics reproduce bitwise for a fixed seed
    const CellRunResult again =
        run_cell(corpus, "synthetic", LossMode::Regular, InputMode::Out, mc, tc);
    CHECK(again.cells[0].metrics.f1 == r.cells[0].metrics.f1);
    CHECK(again.cells[1].metrics.f1 == r.cells[1].metrics.f1);
    CHECK(again.history.back().val_loss == r.history.back().val_loss);
}

TEST_CASE("unlabeled records are excluded and counted") {
    auto corpus = separable_corpus(40);
    corpus[0].satd_label.reset();
    corpus[1].vuln_label.reset();
    ModelConfig mc;
    mc.vocab_size = 300;
    mc.hidden = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.max_len = 32;
    mc.dropout = 0.0;
    mc.task_mode = TaskMode::StSatd;
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 8;
    const CellRunResult r = run_cell(corpus, "synthetic", LossMode::Regular, InputMode::Out, mc, tc);
    CHECK(r.excluded_unlabeled == 1);  // only the satd label matters for ST_SATD
    CHECK(r.train_size + r.val_size + r.test_size == 39);
}

TEST_CASE("weighted loss reduces to regular training on a balanced split") {
    const auto corpus = separable_corpus(64);
    const auto encoded = encode_corpus(corpus, 300, 29);

    // hand-balanced train split: 40 records, ten per label pair
    std::vector<LabeledExample> train, val;
    std::map<std::pair<bool, bool>, int> taken;
    for (const LabeledExample& ex : encoded.examples) {
        const auto key = std::make_pair(*ex.labels.satd, *ex.labels.vuln);
        if (taken[key] < 10) {
            train.push_back(ex);
            ++taken[key];
        } else {
            val.push_back(ex);
        }
    }
    REQUIRE(train.size() == 40);

    ModelConfig mc;
    mc.vocab_size = 300;
    mc.hidden = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.max_len = 32;
    mc.dropout = 0.1;
    mc.task_mode = TaskMode::Multi;
    mc.seed = 31;
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 32;

    Model regular(mc);
    tc.weighted_loss = false;
    const TrainResult rr = regular.train(train, val, tc);
    Model weighted(mc);
    tc.weighted_loss = true;
    const TrainResult rw = weighted.train(train, val, tc);

    CHECK(rw.weights.satd.negative == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rw.weights.satd.positive == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(rr.history.size() == rw.history.size());
    for (std::size_t i = 0; i < rr.history.size(); ++i) {
        CHECK(std::abs(rr.history[i].train_loss - rw.history[i].train_loss) < 1e-6);
        CHECK(std::abs(rr.history[i].val_loss - rw.history[i].val_loss) < 1e-6);
    }
}

TEST_CASE("multi-task runs beat back-to-back single-task runs on the clock") {
    const auto corpus = separable_corpus(24);
    ModelConfig mc;
    mc.vocab_size = 300;
    mc.hidden = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.max_len = 32;
    mc.dropout = 0.0;
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 1;
    tc.batch_size = 24;  // a single batch per epoch
    const BenchResult b = benchmark_mt_vs_st(corpus, "synthetic", mc, tc, 1);
    REQUIRE(b.runs.size() == 1);
    CHECK(b.train_ratio_median < 1.0);
    CHECK(b.test_ratio_median < 1.0);
}
