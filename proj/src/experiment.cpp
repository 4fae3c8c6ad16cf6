#include "vulsatd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "vulsatd/error.hpp"
#include "vulsatd/rng.hpp"
#include "vulsatd/tokenizer.hpp"

namespace vulsatd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

std::vector<LabeledExample> encode_split(const TokenizerModel& tok,
                                         const std::vector<FunctionRecord>& records,
                                         InputMode mode, int budget) {
    std::vector<LabeledExample> out;
    out.reserve(records.size());
    for (const FunctionRecord& r : records) {
        LabeledExample ex;
        ex.input = build_model_input(tok, prepare_input(r, mode), budget);
        ex.labels = {r.satd_label, r.vuln_label};
        out.push_back(std::move(ex));
    }
    return out;
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    if (n == 0) return 0.0;
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double sample_stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string to_string(LossMode mode) {
    return mode == LossMode::Regular ? "regular" : "weighted";
}

std::string to_string(ApproachRow row) {
    switch (row) {
        case ApproachRow::MtSatd: return "mt_satd";
        case ApproachRow::MtVuln: return "mt_vuln";
        case ApproachRow::StSatd: return "st_satd";
        case ApproachRow::StVuln: return "st_vuln";
    }
    return "st_satd";
}

LossMode loss_mode_from_string(std::string_view s) {
    if (s == "regular") return LossMode::Regular;
    if (s == "weighted") return LossMode::Weighted;
    throw InputError("unknown loss mode '" + std::string(s) + "'");
}

ApproachRow approach_from_string(std::string_view s) {
    if (s == "mt_satd") return ApproachRow::MtSatd;
    if (s == "mt_vuln") return ApproachRow::MtVuln;
    if (s == "st_satd") return ApproachRow::StSatd;
    if (s == "st_vuln") return ApproachRow::StVuln;
    throw InputError("unknown approach '" + std::string(s) + "'");
}

SplitResult split(const std::vector<FunctionRecord>& records, std::array<double, 3> fractions,
                  std::uint64_t seed) {
    const double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError("split fractions must sum to 1 (got " + std::to_string(sum) + ")");
    if (fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0)
        throw InputError("split fractions must all be positive");
    const std::size_t n = records.size();
    if (n < 10) throw InputError("dataset too small to split: " + std::to_string(n) + " records");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));
    const std::size_t n_test = n - n_train - n_val;
    if (n_train == 0 || n_val == 0 || n_test == 0)
        throw InputError("degenerate split: a part would be empty");

    SplitResult out;
    out.train.reserve(n_train);
    out.val.reserve(n_val);
    out.test.reserve(n_test);
    for (std::size_t i = 0; i < n; ++i) {
        const FunctionRecord& r = records[order[i]];
        if (i < n_train) out.train.push_back(r);
        else if (i < n_train + n_val) out.val.push_back(r);
        else out.test.push_back(r);
    }
    return out;
}

SplitResult split_stratified(const std::vector<FunctionRecord>& records,
                             std::array<double, 3> fractions, std::uint64_t seed) {
    const double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError("split fractions must sum to 1 (got " + std::to_string(sum) + ")");
    if (fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0)
        throw InputError("split fractions must all be positive");
    if (records.size() < 10)
        throw InputError("dataset too small to split: " + std::to_string(records.size()) +
                         " records");

    auto group_key = [](const FunctionRecord& r) {
        int key = 0;
        if (r.satd_label) key |= 1 | (*r.satd_label ? 2 : 0);
        if (r.vuln_label) key |= 4 | (*r.vuln_label ? 8 : 0);
        return key;
    };
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i)
        groups[group_key(records[i])].push_back(i);

    Rng rng(seed);
    SplitResult out;
    for (auto& [key, idxs] : groups) {
        rng.shuffle(idxs);
        const auto n = static_cast<double>(idxs.size());
        const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * n));
        const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * n));
        for (std::size_t i = 0; i < idxs.size(); ++i) {
            const FunctionRecord& r = records[idxs[i]];
            if (i < n_train) out.train.push_back(r);
            else if (i < n_train + n_val) out.val.push_back(r);
            else out.test.push_back(r);
        }
    }
    if (out.train.empty() || out.val.empty() || out.test.empty())
        throw InputError("degenerate stratified split: a part would be empty");
    return out;
}

CellRunResult run_cell(const std::vector<FunctionRecord>& records,
                       const std::string& dataset_name, LossMode loss_mode, InputMode input_mode,
                       const ModelConfig& mc, const TrainConfig& tc, std::optional<Model>* trained_out,
                       TokenizerModel* tok_out) {
    const bool needs_satd = mc.task_mode != TaskMode::StVuln;
    const bool needs_vuln = mc.task_mode != TaskMode::StSatd;

    std::vector<FunctionRecord> usable;
    usable.reserve(records.size());
    std::size_t excluded = 0;
    for (const FunctionRecord& r : records) {
        if ((needs_satd && !r.satd_label) || (needs_vuln && !r.vuln_label)) {
            ++excluded;
            continue;
        }
        usable.push_back(r);
    }

    SplitResult parts = tc.stratified_split ? split_stratified(usable, tc.split, tc.seed)
                                            : split(usable, tc.split, tc.seed);

    std::vector<PreparedInput> train_prepared;
    train_prepared.reserve(parts.train.size());
    for (const FunctionRecord& r : parts.train) train_prepared.push_back(prepare_input(r, input_mode));
    const TokenizerModel tok = train_bpe(train_prepared, mc.vocab_size);

    const int budget = mc.max_len - 3;
    std::vector<LabeledExample> train_ex;
    train_ex.reserve(parts.train.size());
    for (std::size_t i = 0; i < parts.train.size(); ++i) {
        LabeledExample ex;
        ex.input = build_model_input(tok, train_prepared[i], budget);
        ex.labels = {parts.train[i].satd_label, parts.train[i].vuln_label};
        train_ex.push_back(std::move(ex));
    }
    std::vector<LabeledExample> val_ex = encode_split(tok, parts.val, input_mode, budget);
    std::vector<LabeledExample> test_ex = encode_split(tok, parts.test, input_mode, budget);

    TrainConfig effective = tc;
    effective.weighted_loss = loss_mode == LossMode::Weighted;

    Model model(mc);
    const auto train_start = Clock::now();
    TrainResult tr = model.train(train_ex, val_ex, effective);
    const double wall_train = seconds_since(train_start);

    const auto test_start = Clock::now();
    const Model::EvalResult test_eval = model.evaluate(test_ex, tr.weights);
    const double wall_test = seconds_since(test_start);

    CellRunResult out;
    out.history = std::move(tr.history);
    out.best_epoch = tr.best_epoch;
    out.wall_train_s = wall_train;
    out.wall_test_s = wall_test;
    out.train_size = parts.train.size();
    out.val_size = parts.val.size();
    out.test_size = parts.test.size();
    out.excluded_unlabeled = excluded;

    const bool multi = mc.task_mode == TaskMode::Multi;
    if (needs_satd && test_eval.satd) {
        Cell c;
        c.dataset = dataset_name;
        c.approach = multi ? ApproachRow::MtSatd : ApproachRow::StSatd;
        c.loss = loss_mode;
        c.mode = input_mode;
        c.metrics = *test_eval.satd;
        c.wall_train_s = wall_train;
        c.wall_test_s = wall_test;
        c.seed = tc.seed;
        out.cells.push_back(std::move(c));
    }
    if (needs_vuln && test_eval.vuln) {
        Cell c;
        c.dataset = dataset_name;
        c.approach = multi ? ApproachRow::MtVuln : ApproachRow::StVuln;
        c.loss = loss_mode;
        c.mode = input_mode;
        c.metrics = *test_eval.vuln;
        c.wall_train_s = wall_train;
        c.wall_test_s = wall_test;
        c.seed = tc.seed;
        out.cells.push_back(std::move(c));
    }
    if (trained_out) trained_out->emplace(std::move(model));
    if (tok_out) *tok_out = tok;
    return out;
}

std::vector<ExperimentReport> build_report(const std::vector<Cell>& cells) {
    std::vector<std::string> dataset_order;
    std::map<std::string, std::vector<Cell>> by_dataset;
    for (const Cell& c : cells) {
        auto [it, inserted] = by_dataset.emplace(c.dataset, std::vector<Cell>{});
        if (inserted) dataset_order.push_back(c.dataset);
        it->second.push_back(c);
    }

    auto row_rank = [](const Cell& c) {
        const int loss = c.loss == LossMode::Regular ? 0 : 1;
        const int mode = c.mode == InputMode::Out ? 0 : 1;
        int approach = 0;
        switch (c.approach) {
            case ApproachRow::MtSatd: approach = 0; break;
            case ApproachRow::MtVuln: approach = 1; break;
            case ApproachRow::StSatd: approach = 2; break;
            case ApproachRow::StVuln: approach = 3; break;
        }
        return mode * 100 + loss * 10 + approach;
    };

    std::vector<ExperimentReport> reports;
    for (const std::string& name : dataset_order) {
        std::vector<Cell>& rows = by_dataset[name];
        std::stable_sort(rows.begin(), rows.end(),
                         [&](const Cell& a, const Cell& b) { return row_rank(a) < row_rank(b); });

        auto find_row = [&](ApproachRow approach, LossMode loss, InputMode mode) -> const Cell* {
            for (const Cell& c : rows)
                if (c.approach == approach && c.loss == loss && c.mode == mode) return &c;
            return nullptr;
        };
        auto cell_name = [&](ApproachRow approach, LossMode loss, InputMode mode) {
            return name + "/" + to_string(approach) + "/" + to_string(loss) + "/" +
                   to_string(mode);
        };

        ExperimentReport rep;
        rep.dataset = name;
        rep.rows = rows;

        // MT rows require their ST partner under the same loss and mode
        for (const Cell& c : rows) {
            if (c.approach != ApproachRow::MtSatd && c.approach != ApproachRow::MtVuln) continue;
            const bool satd_task = c.approach == ApproachRow::MtSatd;
            const ApproachRow st = satd_task ? ApproachRow::StSatd : ApproachRow::StVuln;
            const Cell* partner = find_row(st, c.loss, c.mode);
            if (!partner)
                throw InputError("delta F1 needs the missing cell " + cell_name(st, c.loss, c.mode));
            rep.delta_f1.push_back({satd_task, c.loss, c.mode, c.metrics.f1 - partner->metrics.f1});
        }
        // weighted rows require their regular partner
        for (const Cell& c : rows) {
            if (c.loss != LossMode::Weighted) continue;
            const Cell* partner = find_row(c.approach, LossMode::Regular, c.mode);
            if (!partner)
                throw InputError("delta' F1 needs the missing cell " +
                                 cell_name(c.approach, LossMode::Regular, c.mode));
            rep.delta_prime_f1.push_back({c.approach, c.mode, c.metrics.f1 - partner->metrics.f1});
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::string delta_marker(double rounded_delta) {
    if (rounded_delta > 0.0) return "▲";
    if (rounded_delta < 0.0) return "▼";
    return "";
}

std::string render_report(const ExperimentReport& report) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "dataset: " << report.dataset << '\n';
    os << "approach    loss      mode  precision  recall  f1      dF1        d'F1\n";
    auto find_delta = [&](const Cell& c) -> const DeltaF1* {
        const bool satd_task =
            c.approach == ApproachRow::MtSatd || c.approach == ApproachRow::StSatd;
        const bool mt = c.approach == ApproachRow::MtSatd || c.approach == ApproachRow::MtVuln;
        if (!mt) return nullptr;
        for (const DeltaF1& d : report.delta_f1)
            if (d.satd_task == satd_task && d.loss == c.loss && d.mode == c.mode) return &d;
        return nullptr;
    };
    auto find_prime = [&](const Cell& c) -> const DeltaPrimeF1* {
        if (c.loss != LossMode::Weighted) return nullptr;
        for (const DeltaPrimeF1& d : report.delta_prime_f1)
            if (d.approach == c.approach && d.mode == c.mode) return &d;
        return nullptr;
    };
    for (const Cell& c : report.rows) {
        os << to_string(c.approach) << "     " << to_string(c.loss)
           << (c.loss == LossMode::Regular ? "   " : "  ") << to_string(c.mode)
           << (c.mode == InputMode::Out ? "   " : "    ");
        os << c.metrics.precision << "      " << c.metrics.recall << "   " << c.metrics.f1;
        auto delta_text = [&](double value) {
            const double r = round3(value);
            std::ostringstream ds;
            ds.setf(std::ios::fixed);
            ds.precision(3);
            if (r > 0.0) ds << delta_marker(r) << " +" << r;
            else if (r < 0.0) ds << delta_marker(r) << " " << r;
            else ds << r;
            return ds.str();
        };
        if (const DeltaF1* d = find_delta(c)) os << "   " << delta_text(d->value);
        else os << "          ";
        if (const DeltaPrimeF1* d = find_prime(c)) os << "   " << delta_text(d->value);
        os << '\n';
    }
    return os.str();
}

BenchResult benchmark_mt_vs_st(const std::vector<FunctionRecord>& records,
                               const std::string& dataset_name, const ModelConfig& mc,
                               const TrainConfig& tc, int runs) {
    if (runs < 1) throw InputError("benchmark needs at least one run");
    BenchResult out;
    std::vector<double> train_ratios, test_ratios;
    for (int r = 0; r < runs; ++r) {
        ModelConfig mt_cfg = mc;
        mt_cfg.task_mode = TaskMode::Multi;
        const CellRunResult mt = run_cell(records, dataset_name, LossMode::Regular,
                                          InputMode::Out, mt_cfg, tc);
        ModelConfig satd_cfg = mc;
        satd_cfg.task_mode = TaskMode::StSatd;
        const CellRunResult st_satd = run_cell(records, dataset_name, LossMode::Regular,
                                               InputMode::Out, satd_cfg, tc);
        ModelConfig vuln_cfg = mc;
        vuln_cfg.task_mode = TaskMode::StVuln;
        const CellRunResult st_vuln = run_cell(records, dataset_name, LossMode::Regular,
                                               InputMode::Out, vuln_cfg, tc);
        BenchRun run;
        run.mt_train_s = mt.wall_train_s;
        run.mt_test_s = mt.wall_test_s;
        run.st_train_s = st_satd.wall_train_s + st_vuln.wall_train_s;
        run.st_test_s = st_satd.wall_test_s + st_vuln.wall_test_s;
        run.train_ratio = run.mt_train_s / run.st_train_s;
        run.test_ratio = run.mt_test_s / run.st_test_s;
        train_ratios.push_back(run.train_ratio);
        test_ratios.push_back(run.test_ratio);
        out.runs.push_back(run);
    }
    out.train_ratio_median = median(train_ratios);
    out.test_ratio_median = median(test_ratios);
    out.train_ratio_stddev = sample_stddev(train_ratios);
    out.test_ratio_stddev = sample_stddev(test_ratios);
    return out;
}

}  // namespace vulsatd
