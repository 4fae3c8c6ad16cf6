#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vulsatd/annotate.hpp"
#include "vulsatd/corpus.hpp"
#include "vulsatd/error.hpp"
#include "vulsatd/experiment.hpp"
#include "vulsatd/metrics.hpp"
#include "vulsatd/model.hpp"
#include "vulsatd/tokenizer.hpp"
#include "vulsatd/version.hpp"

namespace py = pybind11;
using namespace vulsatd;

PYBIND11_MODULE(_vulsatd, m) {
    m.doc() = "SATD and vulnerability classification pipeline for C functions";
    m.attr("__version__") = kVersion;

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    // ------------------------------------------------------------- corpus
    py::enum_<InputMode>(m, "InputMode")
        .value("IN", InputMode::In)
        .value("OUT", InputMode::Out);

    py::class_<FunctionRecord>(m, "FunctionRecord")
        .def(py::init<>())
        .def_readwrite("id", &FunctionRecord::id)
        .def_readwrite("project", &FunctionRecord::project)
        .def_readwrite("dataset", &FunctionRecord::dataset)
        .def_readwrite("code", &FunctionRecord::code)
        .def_readwrite("leading_comment", &FunctionRecord::leading_comment)
        .def_readwrite("satd_label", &FunctionRecord::satd_label)
        .def_readwrite("vuln_label", &FunctionRecord::vuln_label)
        .def("__repr__", [](const FunctionRecord& r) {
            return "<FunctionRecord id='" + r.id + "'>";
        });

    py::class_<PreparedInput>(m, "PreparedInput")
        .def(py::init<>())
        .def_readwrite("id", &PreparedInput::id)
        .def_readwrite("comment_text", &PreparedInput::comment_text)
        .def_readwrite("code_text", &PreparedInput::code_text)
        .def_readwrite("mode", &PreparedInput::mode);

    m.def("ingest_dataset", [](const std::filesystem::path& p) { return ingest_dataset(p); },
          py::arg("path"));
    m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("records"));
    m.def("extract_functions", [](const std::string& s) { return extract_functions(s); },
          py::arg("source"));
    m.def(
        "strip_internal_comments",
        [](const std::string& code) {
            const StripResult r = strip_internal_comments(code);
            return py::make_tuple(r.code, r.comments);
        },
        py::arg("code"));
    m.def("prepare_input", &prepare_input, py::arg("record"), py::arg("mode"));

    // ----------------------------------------------------------- annotate
    py::enum_<PatternKind>(m, "PatternKind")
        .value("WORD", PatternKind::Word)
        .value("SUBSTRING", PatternKind::Substring);

    py::class_<Pattern>(m, "Pattern")
        .def(py::init([](const std::string& text, PatternKind kind) {
                 return Pattern{text, kind};
             }),
             py::arg("text"), py::arg("kind") = PatternKind::Word)
        .def_readwrite("text", &Pattern::text)
        .def_readwrite("kind", &Pattern::kind);

    py::class_<PatternSet>(m, "PatternSet")
        .def(py::init<>())
        .def_readwrite("name", &PatternSet::name)
        .def_readwrite("patterns", &PatternSet::patterns);

    m.def("mat_pattern_set", &mat_pattern_set);
    m.def("load_pattern_set", &load_pattern_set, py::arg("path"));
    m.def("annotate_mat", [](const std::string& s) { return annotate_mat(s); },
          py::arg("comment_text"));
    m.def(
        "annotate_patterns",
        [](const std::string& s, const PatternSet& ps) { return annotate_patterns(s, ps); },
        py::arg("comment_text"), py::arg("patterns"));
    m.def("label_dataset", &label_dataset, py::arg("records"), py::arg("patterns"));

    py::class_<ContingencyTable>(m, "ContingencyTable")
        .def(py::init([](std::uint64_t n00, std::uint64_t n01, std::uint64_t n10,
                         std::uint64_t n11) {
                 return ContingencyTable{n00, n01, n10, n11};
             }),
             py::arg("n00"), py::arg("n01"), py::arg("n10"), py::arg("n11"))
        .def_readwrite("n00", &ContingencyTable::n00)
        .def_readwrite("n01", &ContingencyTable::n01)
        .def_readwrite("n10", &ContingencyTable::n10)
        .def_readwrite("n11", &ContingencyTable::n11)
        .def("total", &ContingencyTable::total);

    py::class_<ChiSquareResult>(m, "ChiSquareResult")
        .def_readonly("statistic", &ChiSquareResult::statistic)
        .def_readonly("dof", &ChiSquareResult::dof)
        .def_readonly("p_value", &ChiSquareResult::p_value);

    m.def("build_contingency", &build_contingency, py::arg("records"));
    m.def("chi_square", &chi_square, py::arg("table"));

    // ---------------------------------------------------------- tokenizer
    py::class_<TokenizerModel>(m, "TokenizerModel")
        .def_readonly("id_to_token", &TokenizerModel::id_to_token)
        .def_readonly("merges", &TokenizerModel::merges)
        .def("size", &TokenizerModel::size)
        .def_property_readonly_static("CLS", [](py::object) { return TokenizerModel::kCls; })
        .def_property_readonly_static("SEP", [](py::object) { return TokenizerModel::kSep; })
        .def_property_readonly_static("EOS", [](py::object) { return TokenizerModel::kEos; })
        .def_property_readonly_static("PAD", [](py::object) { return TokenizerModel::kPad; })
        .def_property_readonly_static("UNK", [](py::object) { return TokenizerModel::kUnk; });

    m.def(
        "train_bpe",
        [](const std::vector<std::string>& texts, int vocab_size) {
            return train_bpe(texts, vocab_size);
        },
        py::arg("texts"), py::arg("vocab_size"));
    m.def(
        "train_bpe_prepared",
        [](const std::vector<PreparedInput>& corpus, int vocab_size) {
            return train_bpe(corpus, vocab_size);
        },
        py::arg("corpus"), py::arg("vocab_size"));
    m.def("encode", [](const TokenizerModel& t, const std::string& s) { return encode(t, s); },
          py::arg("tokenizer"), py::arg("text"));
    m.def("decode", &decode, py::arg("tokenizer"), py::arg("ids"));
    m.def("truncate_head_only", &truncate_head_only, py::arg("comment_ids"), py::arg("code_ids"),
          py::arg("budget"));

    py::class_<EncodedPair>(m, "EncodedPair")
        .def(py::init<>())
        .def_readwrite("id", &EncodedPair::id)
        .def_readwrite("comment_ids", &EncodedPair::comment_ids)
        .def_readwrite("code_ids", &EncodedPair::code_ids)
        .def_readwrite("input_ids", &EncodedPair::input_ids)
        .def_readwrite("segment_lengths", &EncodedPair::segment_lengths);

    m.def("build_model_input", &build_model_input, py::arg("tokenizer"), py::arg("prepared"),
          py::arg("budget"));
    m.def("save_tokenizer", &save_tokenizer, py::arg("tokenizer"), py::arg("vocab_path"),
          py::arg("merges_path"));
    m.def("load_tokenizer", &load_tokenizer, py::arg("vocab_path"), py::arg("merges_path"));

    // --------------------------------------------------------------- model
    py::enum_<TaskMode>(m, "TaskMode")
        .value("ST_SATD", TaskMode::StSatd)
        .value("ST_VULN", TaskMode::StVuln)
        .value("MULTI", TaskMode::Multi);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("hidden", &ModelConfig::hidden)
        .def_readwrite("layers", &ModelConfig::layers)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("max_len", &ModelConfig::max_len)
        .def_readwrite("dropout", &ModelConfig::dropout)
        .def_readwrite("task_mode", &ModelConfig::task_mode)
        .def_readwrite("seed", &ModelConfig::seed);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("l2_lambda", &TrainConfig::l2_lambda)
        .def_readwrite("weighted_loss", &TrainConfig::weighted_loss)
        .def_readwrite("split", &TrainConfig::split)
        .def_readwrite("stratified_split", &TrainConfig::stratified_split)
        .def_readwrite("seed", &TrainConfig::seed);

    py::class_<ClassWeights>(m, "ClassWeights")
        .def(py::init<>())
        .def_readwrite("negative", &ClassWeights::negative)
        .def_readwrite("positive", &ClassWeights::positive);
    m.def("class_weights", &class_weights, py::arg("labels"), py::arg("num_classes") = 2);
    m.def("binary_softmax", &binary_softmax, py::arg("logits"));

    py::class_<TaskWeights>(m, "TaskWeights")
        .def(py::init<>())
        .def_readwrite("satd", &TaskWeights::satd)
        .def_readwrite("vuln", &TaskWeights::vuln);

    py::class_<TaskLogits>(m, "TaskLogits")
        .def(py::init<>())
        .def_readwrite("satd", &TaskLogits::satd)
        .def_readwrite("vuln", &TaskLogits::vuln);

    py::class_<TaskLabels>(m, "TaskLabels")
        .def(py::init([](std::optional<bool> satd, std::optional<bool> vuln) {
                 return TaskLabels{satd, vuln};
             }),
             py::arg("satd") = std::nullopt, py::arg("vuln") = std::nullopt)
        .def_readwrite("satd", &TaskLabels::satd)
        .def_readwrite("vuln", &TaskLabels::vuln);

    py::class_<LabeledExample>(m, "LabeledExample")
        .def(py::init([](const EncodedPair& input, const TaskLabels& labels) {
                 return LabeledExample{input, labels};
             }),
             py::arg("input"), py::arg("labels"))
        .def_readwrite("input", &LabeledExample::input)
        .def_readwrite("labels", &LabeledExample::labels);

    py::class_<Prediction>(m, "Prediction")
        .def_readonly("satd", &Prediction::satd)
        .def_readonly("vuln", &Prediction::vuln)
        .def_readonly("satd_probs", &Prediction::satd_probs)
        .def_readonly("vuln_probs", &Prediction::vuln_probs);

    py::class_<Metrics>(m, "Metrics")
        .def(py::init<>())
        .def_readwrite("tp", &Metrics::tp)
        .def_readwrite("fp", &Metrics::fp)
        .def_readwrite("fn", &Metrics::fn)
        .def_readwrite("tn", &Metrics::tn)
        .def_readwrite("precision", &Metrics::precision)
        .def_readwrite("recall", &Metrics::recall)
        .def_readwrite("f1", &Metrics::f1);
    m.def("metrics_from_counts", &metrics_from_counts, py::arg("tp"), py::arg("fp"),
          py::arg("fn"), py::arg("tn"));
    m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));
    m.def("compute_metrics", &compute_metrics, py::arg("predictions"), py::arg("labels"));

    py::class_<EpochStats>(m, "EpochStats")
        .def_readonly("epoch", &EpochStats::epoch)
        .def_readonly("train_loss", &EpochStats::train_loss)
        .def_readonly("val_loss", &EpochStats::val_loss)
        .def_readonly("train_satd", &EpochStats::train_satd)
        .def_readonly("train_vuln", &EpochStats::train_vuln)
        .def_readonly("val_satd", &EpochStats::val_satd)
        .def_readonly("val_vuln", &EpochStats::val_vuln)
        .def_readonly("val_selection_f1", &EpochStats::val_selection_f1);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("history", &TrainResult::history)
        .def_readonly("best_epoch", &TrainResult::best_epoch)
        .def_readonly("weights", &TrainResult::weights);

    py::class_<Model>(m, "Model")
        .def(py::init<const ModelConfig&>(), py::arg("config"))
        .def_property_readonly("config", &Model::config)
        .def("forward", &Model::forward, py::arg("batch"), py::arg("training") = false)
        .def("predict", &Model::predict, py::arg("inputs"))
        .def("example_loss", &Model::example_loss, py::arg("logits"), py::arg("labels"),
             py::arg("weights"), py::arg("l2_lambda") = 0.0)
        .def("train", &Model::train, py::arg("train_set"), py::arg("val_set"), py::arg("config"))
        .def("parameter_count", &Model::parameter_count)
        .def("save", &Model::save, py::arg("path"))
        .def_static("load", &Model::load, py::arg("path"));

    py::class_<GradCheckResult>(m, "GradCheckResult")
        .def_readonly("max_rel_error", &GradCheckResult::max_rel_error)
        .def_readonly("worst_param", &GradCheckResult::worst_param);
    m.def("grad_check", &grad_check, py::arg("config"), py::arg("fd_step") = 1e-5);

    // ---------------------------------------------------------- experiment
    py::enum_<LossMode>(m, "LossMode")
        .value("REGULAR", LossMode::Regular)
        .value("WEIGHTED", LossMode::Weighted);

    py::enum_<ApproachRow>(m, "ApproachRow")
        .value("MT_SATD", ApproachRow::MtSatd)
        .value("MT_VULN", ApproachRow::MtVuln)
        .value("ST_SATD", ApproachRow::StSatd)
        .value("ST_VULN", ApproachRow::StVuln);

    py::class_<SplitResult>(m, "SplitResult")
        .def_readonly("train", &SplitResult::train)
        .def_readonly("val", &SplitResult::val)
        .def_readonly("test", &SplitResult::test);
    m.def("split", &split, py::arg("records"), py::arg("fractions"), py::arg("seed"));
    m.def("split_stratified", &split_stratified, py::arg("records"), py::arg("fractions"),
          py::arg("seed"));

    py::class_<Cell>(m, "Cell")
        .def(py::init<>())
        .def_readwrite("dataset", &Cell::dataset)
        .def_readwrite("approach", &Cell::approach)
        .def_readwrite("loss", &Cell::loss)
        .def_readwrite("mode", &Cell::mode)
        .def_readwrite("metrics", &Cell::metrics)
        .def_readwrite("wall_train_s", &Cell::wall_train_s)
        .def_readwrite("wall_test_s", &Cell::wall_test_s)
        .def_readwrite("seed", &Cell::seed);

    py::class_<CellRunResult>(m, "CellRunResult")
        .def_readonly("cells", &CellRunResult::cells)
        .def_readonly("history", &CellRunResult::history)
        .def_readonly("best_epoch", &CellRunResult::best_epoch)
        .def_readonly("wall_train_s", &CellRunResult::wall_train_s)
        .def_readonly("wall_test_s", &CellRunResult::wall_test_s)
        .def_readonly("train_size", &CellRunResult::train_size)
        .def_readonly("val_size", &CellRunResult::val_size)
        .def_readonly("test_size", &CellRunResult::test_size)
        .def_readonly("excluded_unlabeled", &CellRunResult::excluded_unlabeled);

    m.def(
        "run_cell",
        [](const std::vector<FunctionRecord>& records, const std::string& dataset_name,
           LossMode loss, InputMode mode, const ModelConfig& mc, const TrainConfig& tc) {
            return run_cell(records, dataset_name, loss, mode, mc, tc);
        },
        py::arg("records"), py::arg("dataset_name"), py::arg("loss"), py::arg("mode"),
        py::arg("model_config"), py::arg("train_config"));

    py::class_<DeltaF1>(m, "DeltaF1")
        .def_readonly("satd_task", &DeltaF1::satd_task)
        .def_readonly("loss", &DeltaF1::loss)
        .def_readonly("mode", &DeltaF1::mode)
        .def_readonly("value", &DeltaF1::value);

    py::class_<DeltaPrimeF1>(m, "DeltaPrimeF1")
        .def_readonly("approach", &DeltaPrimeF1::approach)
        .def_readonly("mode", &DeltaPrimeF1::mode)
        .def_readonly("value", &DeltaPrimeF1::value);

    py::class_<ExperimentReport>(m, "ExperimentReport")
        .def_readonly("dataset", &ExperimentReport::dataset)
        .def_readonly("rows", &ExperimentReport::rows)
        .def_readonly("delta_f1", &ExperimentReport::delta_f1)
        .def_readonly("delta_prime_f1", &ExperimentReport::delta_prime_f1);

    m.def("build_report", &build_report, py::arg("cells"));
    m.def("render_report", &render_report, py::arg("report"));
    m.def("delta_marker", &delta_marker, py::arg("rounded_delta"));

    py::class_<BenchRun>(m, "BenchRun")
        .def_readonly("mt_train_s", &BenchRun::mt_train_s)
        .def_readonly("mt_test_s", &BenchRun::mt_test_s)
        .def_readonly("st_train_s", &BenchRun::st_train_s)
        .def_readonly("st_test_s", &BenchRun::st_test_s)
        .def_readonly("train_ratio", &BenchRun::train_ratio)
        .def_readonly("test_ratio", &BenchRun::test_ratio);

    py::class_<BenchResult>(m, "BenchResult")
        .def_readonly("runs", &BenchResult::runs)
        .def_readonly("train_ratio_median", &BenchResult::train_ratio_median)
        .def_readonly("test_ratio_median", &BenchResult::test_ratio_median)
        .def_readonly("train_ratio_stddev", &BenchResult::train_ratio_stddev)
        .def_readonly("test_ratio_stddev", &BenchResult::test_ratio_stddev);

    m.def("benchmark_mt_vs_st", &benchmark_mt_vs_st, py::arg("records"), py::arg("dataset_name"),
          py::arg("model_config"), py::arg("train_config"), py::arg("runs") = 3);
}
