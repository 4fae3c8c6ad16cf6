#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vulsatd/corpus.hpp"
#include "vulsatd/metrics.hpp"
#include "vulsatd/model.hpp"

namespace vulsatd {

struct SplitResult {
    std::vector<FunctionRecord> train, val, test;
};

/// Seeded shuffle followed by contiguous slicing. Fractions must sum to 1;
/// each part must come out non-empty and the dataset must have >= 10 records.
SplitResult split(const std::vector<FunctionRecord>& records, std::array<double, 3> fractions,
                  std::uint64_t seed);

/// Same contract, but slices every (satd, vuln) label group separately so the
/// parts keep the label-pair proportions of the whole dataset.
SplitResult split_stratified(const std::vector<FunctionRecord>& records,
                             std::array<double, 3> fractions, std::uint64_t seed);

enum class LossMode { Regular, Weighted };
enum class ApproachRow { MtSatd, MtVuln, StSatd, StVuln };

std::string to_string(LossMode mode);
std::string to_string(ApproachRow row);
LossMode loss_mode_from_string(std::string_view s);
ApproachRow approach_from_string(std::string_view s);

/// One (dataset, approach, loss, input mode) result row.
struct Cell {
    std::string dataset;
    ApproachRow approach = ApproachRow::StSatd;
    LossMode loss = LossMode::Regular;
    InputMode mode = InputMode::Out;
    Metrics metrics;
    double wall_train_s = 0.0;
    double wall_test_s = 0.0;
    std::uint64_t seed = 0;
};

struct CellRunResult {
    std::vector<Cell> cells;  // one row for ST runs, two for MT
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double wall_train_s = 0.0;
    double wall_test_s = 0.0;
    std::size_t train_size = 0, val_size = 0, test_size = 0;
    std::size_t excluded_unlabeled = 0;  // records dropped for missing labels
};

/// Full pipeline for one experiment cell: drop records lacking the labels the
/// task needs, split, prepare inputs in the requested mode, train BPE on the
/// training split, encode, train the model, and evaluate the test split.
/// The BPE vocabulary size and the content budget (max_len - 3) come from the
/// model config. Wall-clock covers the train call and the test evaluation.
/// When given, `trained_out`/`tok_out` receive the trained model and the
/// tokenizer for checkpointing.
CellRunResult run_cell(const std::vector<FunctionRecord>& records,
                       const std::string& dataset_name, LossMode loss_mode, InputMode input_mode,
                       const ModelConfig& mc, const TrainConfig& tc,
                       std::optional<Model>* trained_out = nullptr,
                       TokenizerModel* tok_out = nullptr);

struct DeltaF1 {
    bool satd_task = true;  // otherwise the vuln task
    LossMode loss = LossMode::Regular;
    InputMode mode = InputMode::Out;
    double value = 0.0;  // MT f1 - ST f1
};

struct DeltaPrimeF1 {
    ApproachRow approach = ApproachRow::StSatd;
    InputMode mode = InputMode::Out;
    double value = 0.0;  // weighted f1 - regular f1
};

struct ExperimentReport {
    std::string dataset;
    std::vector<Cell> rows;  // regular before weighted, MT rows before ST
    std::vector<DeltaF1> delta_f1;
    std::vector<DeltaPrimeF1> delta_prime_f1;
};

/// Groups cells by dataset and computes the deltas. A delta is produced for
/// every cell that has a defined counterpart dimension: each MT row needs its
/// ST partner (same task, loss, mode) and each weighted row needs its regular
/// partner; a missing partner is an error naming the absent cell.
std::vector<ExperimentReport> build_report(const std::vector<Cell>& cells);

/// Direction marker for a delta already rounded for display: rising, falling,
/// or empty at exactly zero.
std::string delta_marker(double rounded_delta);

/// Plain-text table per dataset mirroring the report layout.
std::string render_report(const ExperimentReport& report);

struct BenchRun {
    double mt_train_s = 0.0, mt_test_s = 0.0;
    double st_train_s = 0.0, st_test_s = 0.0;  // ST_SATD + ST_VULN combined
    double train_ratio = 0.0, test_ratio = 0.0;
};

struct BenchResult {
    std::vector<BenchRun> runs;
    double train_ratio_median = 0.0;
    double test_ratio_median = 0.0;
    double train_ratio_stddev = 0.0;
    double test_ratio_stddev = 0.0;
};

/// Wall-clock comparison of one multi-task run against the two single-task
/// runs it replaces, repeated `runs` times with identical configs.
BenchResult benchmark_mt_vs_st(const std::vector<FunctionRecord>& records,
                               const std::string& dataset_name, const ModelConfig& mc,
                               const TrainConfig& tc, int runs = 3);

}  // namespace vulsatd
