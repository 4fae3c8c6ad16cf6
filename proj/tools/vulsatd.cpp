// vulsatd: corpus-to-classifier pipeline for SATD and vulnerability
// detection experiments on C functions.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vulsatd/annotate.hpp"
#include "vulsatd/corpus.hpp"
#include "vulsatd/error.hpp"
#include "vulsatd/experiment.hpp"
#include "vulsatd/metrics.hpp"
#include "vulsatd/model.hpp"
#include "vulsatd/tokenizer.hpp"
#include "vulsatd/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;
using namespace vulsatd;

namespace {

// ---------------------------------------------------------------- utilities

std::string fnv1a64_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file for digest: " + path.string());
    std::uint64_t h = 14695981039346656037ull;
    char buf[1 << 15];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    char out[19];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string("fnv1a64:") + out;
}

std::string now_iso8601() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void atomic_write_text(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write file: " + path.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw InputError("failed writing file: " + path.string());
    }
    fs::rename(tmp, path);
}

std::string thousands(std::uint64_t n) {
    std::string digits = std::to_string(n);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count && count % 3 == 0) out += ',';
        out += *it;
        ++count;
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::string percent(std::uint64_t part, std::uint64_t whole) {
    const double p = whole ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", p);
    return buf;
}

// one manifest per invocation, written next to the primary output
void write_manifest(const fs::path& primary_output, const std::string& command,
                    const std::string& resolved_config, const ordered_json& seeds,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    ordered_json m;
    m["tool"] = "vulsatd";
    m["version"] = kVersion;
    m["command"] = command;
    m["timestamp"] = now_iso8601();
    m["resolved_config"] = resolved_config;
    m["seeds"] = seeds;
    ordered_json in_list = ordered_json::array();
    for (const fs::path& p : inputs)
        in_list.push_back({{"path", p.string()}, {"digest", fnv1a64_file(p)}});
    m["inputs"] = in_list;
    ordered_json out_list = ordered_json::array();
    for (const fs::path& p : outputs)
        out_list.push_back({{"path", p.string()}, {"digest", fnv1a64_file(p)}});
    m["outputs"] = out_list;
    atomic_write_text(primary_output.string() + ".manifest.json", m.dump(2) + "\n");
}

ordered_json cell_to_json(const Cell& c) {
    ordered_json j;
    j["dataset"] = c.dataset;
    j["approach"] = to_string(c.approach);
    j["loss"] = to_string(c.loss);
    j["mode"] = to_string(c.mode);
    j["tp"] = c.metrics.tp;
    j["fp"] = c.metrics.fp;
    j["fn"] = c.metrics.fn;
    j["tn"] = c.metrics.tn;
    j["precision"] = c.metrics.precision;
    j["recall"] = c.metrics.recall;
    j["f1"] = c.metrics.f1;
    j["wall_train_s"] = c.wall_train_s;
    j["wall_test_s"] = c.wall_test_s;
    j["seed"] = c.seed;
    return j;
}

Cell cell_from_json(const json& j, const std::string& context) {
    try {
        Cell c;
        c.dataset = j.at("dataset").get<std::string>();
        c.approach = approach_from_string(j.at("approach").get<std::string>());
        c.loss = loss_mode_from_string(j.at("loss").get<std::string>());
        c.mode = input_mode_from_string(j.at("mode").get<std::string>());
        c.metrics.tp = j.value("tp", 0ull);
        c.metrics.fp = j.value("fp", 0ull);
        c.metrics.fn = j.value("fn", 0ull);
        c.metrics.tn = j.value("tn", 0ull);
        c.metrics.precision = j.value("precision", 0.0);
        c.metrics.recall = j.value("recall", 0.0);
        c.metrics.f1 = j.at("f1").get<double>();
        c.wall_train_s = j.value("wall_train_s", 0.0);
        c.wall_test_s = j.value("wall_test_s", 0.0);
        c.seed = j.value("seed", 0ull);
        return c;
    } catch (const json::exception& e) {
        throw InputError(context + ": bad cell record: " + e.what());
    }
}

std::string history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,split,loss,satd_precision,satd_recall,satd_f1,"
          "vuln_precision,vuln_recall,vuln_f1\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    auto row = [&](int epoch, const char* split, double loss, const std::optional<Metrics>& satd,
                   const std::optional<Metrics>& vuln) {
        os << epoch << ',' << split << ',' << loss << ',';
        if (satd) os << satd->precision << ',' << satd->recall << ',' << satd->f1 << ',';
        else os << ",,,";
        if (vuln) os << vuln->precision << ',' << vuln->recall << ',' << vuln->f1;
        else os << ",,";
        os << '\n';
    };
    for (const EpochStats& es : history) {
        row(es.epoch, "train", es.train_loss, es.train_satd, es.train_vuln);
        row(es.epoch, "val", es.val_loss, es.val_satd, es.val_vuln);
    }
    return os.str();
}

struct ModelFlags {
    int vocab_size = 8000;
    int hidden = 128;
    int layers = 4;
    int heads = 4;
    int max_len = 512;
    double dropout = 0.1;
    std::uint64_t model_seed = 42;
};

struct TrainFlags {
    double learning_rate = 2e-5;
    int epochs = 10;
    int batch_size = 16;
    double l2_lambda = 0.0;
    std::vector<double> split{0.8, 0.1, 0.1};
    bool stratified = false;
    std::uint64_t seed = 42;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--vocab-size", f.vocab_size, "BPE/model vocabulary size");
    cmd->add_option("--hidden", f.hidden, "encoder hidden size");
    cmd->add_option("--layers", f.layers, "encoder layers");
    cmd->add_option("--heads", f.heads, "attention heads");
    cmd->add_option("--max-len", f.max_len, "maximum input length");
    cmd->add_option("--dropout", f.dropout, "dropout rate");
    cmd->add_option("--model-seed", f.model_seed, "weight initialization seed");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--lr", f.learning_rate, "learning rate");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
    cmd->add_option("--l2", f.l2_lambda, "L2 lambda");
    cmd->add_option("--split", f.split, "train/val/test fractions")->expected(3);
    cmd->add_flag("--stratified", f.stratified, "stratify the split by label pair");
    cmd->add_option("--seed", f.seed, "split/shuffle/dropout seed");
}

ModelConfig to_model_config(const ModelFlags& f, TaskMode task) {
    ModelConfig mc;
    mc.vocab_size = f.vocab_size;
    mc.hidden = f.hidden;
    mc.layers = f.layers;
    mc.heads = f.heads;
    mc.max_len = f.max_len;
    mc.dropout = f.dropout;
    mc.task_mode = task;
    mc.seed = f.model_seed;
    return mc;
}

TrainConfig to_train_config(const TrainFlags& f, bool weighted) {
    TrainConfig tc;
    tc.learning_rate = f.learning_rate;
    tc.epochs = f.epochs;
    tc.batch_size = f.batch_size;
    tc.l2_lambda = f.l2_lambda;
    tc.weighted_loss = weighted;
    if (f.split.size() != 3) throw InputError("--split needs three fractions");
    tc.split = {f.split[0], f.split[1], f.split[2]};
    tc.stratified_split = f.stratified;
    tc.seed = f.seed;
    return tc;
}

std::string summary_line(const DatasetStats& s) {
    std::ostringstream os;
    os << thousands(s.total) << " functions, " << percent(s.satd, s.total) << " SATD, "
       << percent(s.vuln, s.total) << " vulnerable";
    return os.str();
}

void write_records_atomic(const fs::path& path, const std::vector<FunctionRecord>& records) {
    const fs::path tmp = path.string() + ".tmp";
    write_dataset(tmp, records);
    fs::rename(tmp, path);
}

std::string pad_to(const std::string& s, std::size_t width) {
    return s + std::string(width > s.size() ? width - s.size() : 1, ' ');
}

std::string render_contingency(const ContingencyTable& t, const ChiSquareResult& r) {
    std::ostringstream os;
    os << "            non-vulnerable  vulnerable\n";
    os << "non-SATD    " << pad_to(thousands(t.n00), 16) << thousands(t.n01) << '\n';
    os << "SATD        " << pad_to(thousands(t.n10), 16) << thousands(t.n11) << '\n';
    char buf[128];
    std::snprintf(buf, sizeof(buf), "\nchi-square = %.4f  dof = %d  p-value = %.6g\n",
                  r.statistic, r.dof, r.p_value);
    os << buf;
    return os.str();
}

ordered_json chi2_record(const ContingencyTable& t, const ChiSquareResult& r) {
    ordered_json j;
    j["n00"] = t.n00;
    j["n01"] = t.n01;
    j["n10"] = t.n10;
    j["n11"] = t.n11;
    j["statistic"] = r.statistic;
    j["dof"] = r.dof;
    j["p_value"] = r.p_value;
    return j;
}

// ---------------------------------------------------------------- commands

int cmd_ingest(const fs::path& input, const std::optional<fs::path>& output,
               const std::string& resolved) {
    const auto records = ingest_dataset(input);
    const DatasetStats s = dataset_stats(records);
    std::cout << summary_line(s) << '\n';
    if (s.satd_labeled < s.total || s.vuln_labeled < s.total)
        std::cout << "label coverage: " << s.satd_labeled << "/" << s.total << " satd, "
                  << s.vuln_labeled << "/" << s.total << " vuln\n";
    if (output) {
        write_records_atomic(*output, records);
        write_manifest(*output, "ingest", resolved, ordered_json::object(), {input}, {*output});
    }
    return 0;
}

int cmd_extract(const std::vector<fs::path>& inputs, const fs::path& output,
                const std::string& project, const std::string& dataset,
                const std::string& resolved) {
    std::vector<FunctionRecord> all;
    for (const fs::path& in : inputs) {
        std::ifstream f(in, std::ios::binary);
        if (!f) throw InputError("cannot open source file: " + in.string());
        std::ostringstream ss;
        ss << f.rdbuf();
        auto records = extract_functions(ss.str());
        for (FunctionRecord& r : records) {
            r.project = project.empty() ? in.stem().string() : project;
            r.dataset = dataset;
            if (inputs.size() > 1) r.id = in.stem().string() + ":" + r.id;
            all.push_back(std::move(r));
        }
    }
    write_records_atomic(output, all);
    std::cout << thousands(all.size()) << " functions extracted from " << inputs.size()
              << " file(s)\n";
    write_manifest(output, "extract", resolved, ordered_json::object(), inputs, {output});
    return 0;
}

int cmd_annotate(const fs::path& input, const fs::path& output, const std::string& annotator,
                 const std::optional<fs::path>& patterns_file, bool with_chi2,
                 const std::optional<fs::path>& report, const std::string& resolved) {
    const PatternSet patterns = [&] {
        if (annotator == "mat") return mat_pattern_set();
        if (annotator == "patterns") {
            if (!patterns_file) throw InputError("--annotator patterns requires --patterns FILE");
            return load_pattern_set(*patterns_file);
        }
        throw InputError("unknown annotator '" + annotator + "' (expected mat or patterns)");
    }();

    auto records = ingest_dataset(input);
    records = label_dataset(std::move(records), patterns);
    write_records_atomic(output, records);
    const DatasetStats s = dataset_stats(records);
    std::cout << summary_line(s) << '\n';

    std::vector<fs::path> outputs{output};
    if (with_chi2 || report) {
        std::vector<FunctionRecord> labeled;
        for (const FunctionRecord& r : records)
            if (r.satd_label && r.vuln_label) labeled.push_back(r);
        if (labeled.empty()) throw InputError("no records carry both labels; cannot run chi2");
        const ContingencyTable t = build_contingency(labeled);
        const ChiSquareResult r = chi_square(t);
        std::cout << render_contingency(t, r);
        if (report) {
            atomic_write_text(*report, chi2_record(t, r).dump(2) + "\n");
            outputs.push_back(*report);
        }
    }
    std::vector<fs::path> inputs{input};
    if (patterns_file) inputs.push_back(*patterns_file);
    write_manifest(output, "annotate", resolved, ordered_json::object(), inputs, outputs);
    return 0;
}

int cmd_chi2(const fs::path& input, const std::optional<fs::path>& report,
             const std::string& resolved) {
    const auto records = ingest_dataset(input);
    std::vector<FunctionRecord> labeled;
    for (const FunctionRecord& r : records)
        if (r.satd_label && r.vuln_label) labeled.push_back(r);
    if (labeled.empty()) throw InputError("no records carry both labels; cannot run chi2");
    if (labeled.size() < records.size())
        std::cout << "note: " << records.size() - labeled.size()
                  << " records lack a label and were excluded\n";
    const ContingencyTable t = build_contingency(labeled);
    const ChiSquareResult r = chi_square(t);
    std::cout << render_contingency(t, r);
    if (report) {
        atomic_write_text(*report, chi2_record(t, r).dump(2) + "\n");
        write_manifest(*report, "chi2", resolved, ordered_json::object(), {input}, {*report});
    }
    return 0;
}

int cmd_tokenize(const fs::path& input, const std::string& mode_name, int vocab_size, int budget,
                 const std::string& prefix, const std::optional<fs::path>& encoded_out,
                 const std::optional<fs::path>& prepared_out, const std::string& resolved) {
    const InputMode mode = input_mode_from_string(mode_name);
    const auto records = ingest_dataset(input);
    if (records.empty()) throw InputError("dataset is empty: " + input.string());

    std::vector<PreparedInput> prepared;
    prepared.reserve(records.size());
    for (const FunctionRecord& r : records) prepared.push_back(prepare_input(r, mode));
    const TokenizerModel tok = train_bpe(prepared, vocab_size);

    const fs::path vocab_path = prefix + ".vocab.txt";
    const fs::path merges_path = prefix + ".merges.txt";
    save_tokenizer(tok, vocab_path, merges_path);
    std::cout << "tokenizer: " << tok.size() << " tokens, " << tok.merges.size() << " merges\n";

    std::vector<fs::path> outputs{vocab_path, merges_path};
    if (prepared_out) {
        std::ostringstream os;
        for (std::size_t i = 0; i < records.size(); ++i) {
            ordered_json j;
            const FunctionRecord& r = records[i];
            j["id"] = r.id;
            j["project"] = r.project;
            j["dataset"] = r.dataset;
            j["code"] = r.code;
            j["leading_comment"] = r.leading_comment;
            if (r.satd_label) j["satd"] = *r.satd_label;
            if (r.vuln_label) j["vuln"] = *r.vuln_label;
            j["comment_text"] = prepared[i].comment_text;
            j["code_text"] = prepared[i].code_text;
            j["mode"] = to_string(mode);
            os << j.dump() << '\n';
        }
        atomic_write_text(*prepared_out, os.str());
        outputs.push_back(*prepared_out);
    }
    if (encoded_out) {
        std::ostringstream os;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const EncodedPair e = build_model_input(tok, prepared[i], budget);
            ordered_json j;
            j["id"] = e.id;
            j["input_ids"] = e.input_ids;
            j["comment_len"] = e.segment_lengths.first;
            j["code_len"] = e.segment_lengths.second;
            if (records[i].satd_label) j["satd"] = *records[i].satd_label;
            if (records[i].vuln_label) j["vuln"] = *records[i].vuln_label;
            os << j.dump() << '\n';
        }
        atomic_write_text(*encoded_out, os.str());
        outputs.push_back(*encoded_out);
    }
    write_manifest(vocab_path, "tokenize", resolved, ordered_json::object(), {input}, outputs);
    return 0;
}

int cmd_train(const fs::path& input, const std::string& dataset_name, const std::string& task,
              const std::string& mode_name, const std::string& loss_name, const ModelFlags& mf,
              const TrainFlags& tf, const std::optional<fs::path>& checkpoint,
              const std::optional<std::string>& tokenizer_prefix,
              const std::optional<fs::path>& history_out, const std::optional<fs::path>& cells_out,
              const std::string& resolved) {
    const auto records = ingest_dataset(input);
    const LossMode loss = loss_mode_from_string(loss_name);
    const InputMode mode = input_mode_from_string(mode_name);
    const ModelConfig mc = to_model_config(mf, task_mode_from_string(task));
    const TrainConfig tc = to_train_config(tf, loss == LossMode::Weighted);
    const std::string name = dataset_name.empty() ? input.stem().string() : dataset_name;

    std::optional<Model> trained;
    TokenizerModel tok;
    const CellRunResult result = run_cell(records, name, loss, mode, mc, tc, &trained, &tok);

    for (const Cell& c : result.cells) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s  P=%.3f R=%.3f F1=%.3f  (train %.2fs, test %.2fs)",
                      to_string(c.approach).c_str(), c.metrics.precision, c.metrics.recall,
                      c.metrics.f1, c.wall_train_s, c.wall_test_s);
        std::cout << buf << '\n';
    }
    std::cout << "best epoch: " << result.best_epoch << "; split " << result.train_size << "/"
              << result.val_size << "/" << result.test_size;
    if (result.excluded_unlabeled)
        std::cout << "; excluded unlabeled: " << result.excluded_unlabeled;
    std::cout << '\n';

    std::vector<fs::path> outputs;
    if (checkpoint) {
        trained->save(*checkpoint);
        outputs.push_back(*checkpoint);
    }
    if (tokenizer_prefix) {
        const fs::path vocab_path = *tokenizer_prefix + ".vocab.txt";
        const fs::path merges_path = *tokenizer_prefix + ".merges.txt";
        save_tokenizer(tok, vocab_path, merges_path);
        outputs.push_back(vocab_path);
        outputs.push_back(merges_path);
    }
    if (history_out) {
        atomic_write_text(*history_out, history_csv(result.history));
        outputs.push_back(*history_out);
    }
    if (cells_out) {
        std::ostringstream os;
        for (const Cell& c : result.cells) os << cell_to_json(c).dump() << '\n';
        atomic_write_text(*cells_out, os.str());
        outputs.push_back(*cells_out);
    }
    if (!outputs.empty()) {
        ordered_json seeds{{"model_seed", mc.seed}, {"train_seed", tc.seed}};
        write_manifest(outputs.front(), "train", resolved, seeds, {input}, outputs);
    }
    return 0;
}

int cmd_evaluate(const fs::path& input, const fs::path& checkpoint,
                 const std::string& tokenizer_prefix, const std::string& mode_name,
                 const std::string& part, const TrainFlags& tf, const std::string& loss_name,
                 const std::string& dataset_name, const std::optional<fs::path>& cells_out,
                 const std::optional<fs::path>& report_out, const std::string& resolved) {
    Model model = Model::load(checkpoint);
    const TokenizerModel tok =
        load_tokenizer(tokenizer_prefix + ".vocab.txt", tokenizer_prefix + ".merges.txt");
    const InputMode mode = input_mode_from_string(mode_name);
    const LossMode loss = loss_mode_from_string(loss_name);
    auto records = ingest_dataset(input);
    const std::string name = dataset_name.empty() ? input.stem().string() : dataset_name;

    if (part != "all") {
        TrainConfig tc = to_train_config(tf, false);
        const SplitResult parts = tc.stratified_split
                                      ? split_stratified(records, tc.split, tc.seed)
                                      : split(records, tc.split, tc.seed);
        if (part == "train") records = parts.train;
        else if (part == "val") records = parts.val;
        else if (part == "test") records = parts.test;
        else throw InputError("unknown --part '" + part + "' (all, train, val, test)");
    }

    const bool needs_satd = model.config().task_mode != TaskMode::StVuln;
    const bool needs_vuln = model.config().task_mode != TaskMode::StSatd;
    std::vector<LabeledExample> examples;
    std::size_t excluded = 0;
    const int budget = model.config().max_len - 3;
    for (const FunctionRecord& r : records) {
        if ((needs_satd && !r.satd_label) || (needs_vuln && !r.vuln_label)) {
            ++excluded;
            continue;
        }
        LabeledExample ex;
        ex.input = build_model_input(tok, prepare_input(r, mode), budget);
        ex.labels = {r.satd_label, r.vuln_label};
        examples.push_back(std::move(ex));
    }
    if (examples.empty()) throw InputError("no labeled records to evaluate");
    if (excluded) std::cout << "note: " << excluded << " unlabeled records excluded\n";

    const auto start = std::chrono::steady_clock::now();
    const Model::EvalResult eval = model.evaluate(examples, TaskWeights{});
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::vector<Cell> cells;
    const bool multi = model.config().task_mode == TaskMode::Multi;
    auto push_cell = [&](bool satd_task, const Metrics& m) {
        Cell c;
        c.dataset = name;
        c.approach = satd_task ? (multi ? ApproachRow::MtSatd : ApproachRow::StSatd)
                               : (multi ? ApproachRow::MtVuln : ApproachRow::StVuln);
        c.loss = loss;
        c.mode = mode;
        c.metrics = m;
        c.wall_test_s = wall;
        c.seed = tf.seed;
        cells.push_back(std::move(c));
    };
    if (eval.satd) push_cell(true, *eval.satd);
    if (eval.vuln) push_cell(false, *eval.vuln);

    ordered_json rep;
    rep["dataset"] = name;
    rep["part"] = part;
    rep["loss"] = eval.loss;
    rep["cells"] = ordered_json::array();
    for (const Cell& c : cells) {
        rep["cells"].push_back(cell_to_json(c));
        char buf[120];
        std::snprintf(buf, sizeof(buf), "%s  P=%.3f R=%.3f F1=%.3f",
                      to_string(c.approach).c_str(), c.metrics.precision, c.metrics.recall,
                      c.metrics.f1);
        std::cout << buf << '\n';
    }

    std::vector<fs::path> outputs;
    if (cells_out) {
        std::ostringstream os;
        for (const Cell& c : cells) os << cell_to_json(c).dump() << '\n';
        atomic_write_text(*cells_out, os.str());
        outputs.push_back(*cells_out);
    }
    if (report_out) {
        atomic_write_text(*report_out, rep.dump(2) + "\n");
        outputs.push_back(*report_out);
    }
    if (!outputs.empty()) {
        ordered_json seeds{{"split_seed", tf.seed}};
        write_manifest(outputs.front(), "evaluate", resolved, seeds,
                       {input, checkpoint, fs::path(tokenizer_prefix + ".vocab.txt"),
                        fs::path(tokenizer_prefix + ".merges.txt")},
                       outputs);
    }
    return 0;
}

int cmd_compare(const std::vector<fs::path>& cell_files, const std::optional<fs::path>& table_out,
                const std::optional<fs::path>& records_out, const std::string& resolved) {
    std::vector<Cell> cells;
    for (const fs::path& path : cell_files) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot open cell file: " + path.string());
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const json j = json::parse(line, nullptr, false);
            if (j.is_discarded())
                throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad json");
            cells.push_back(cell_from_json(j, path.string() + ":" + std::to_string(lineno)));
        }
    }
    if (cells.empty()) throw InputError("no cells to compare");
    const auto reports = build_report(cells);

    std::string text;
    for (const ExperimentReport& rep : reports) text += render_report(rep) + "\n";
    std::cout << text;

    std::vector<fs::path> outputs;
    if (table_out) {
        atomic_write_text(*table_out, text);
        outputs.push_back(*table_out);
    }
    if (records_out) {
        std::ostringstream os;
        for (const ExperimentReport& rep : reports) {
            ordered_json j;
            j["dataset"] = rep.dataset;
            j["rows"] = ordered_json::array();
            for (const Cell& c : rep.rows) j["rows"].push_back(cell_to_json(c));
            j["delta_f1"] = ordered_json::array();
            for (const DeltaF1& d : rep.delta_f1)
                j["delta_f1"].push_back({{"task", d.satd_task ? "satd" : "vuln"},
                                         {"loss", to_string(d.loss)},
                                         {"mode", to_string(d.mode)},
                                         {"value", d.value}});
            j["delta_prime_f1"] = ordered_json::array();
            for (const DeltaPrimeF1& d : rep.delta_prime_f1)
                j["delta_prime_f1"].push_back({{"approach", to_string(d.approach)},
                                               {"mode", to_string(d.mode)},
                                               {"value", d.value}});
            os << j.dump() << '\n';
        }
        atomic_write_text(*records_out, os.str());
        outputs.push_back(*records_out);
    }
    if (!outputs.empty())
        write_manifest(outputs.front(), "compare", resolved, ordered_json::object(), cell_files,
                       outputs);
    return 0;
}

int cmd_bench(const fs::path& input, int runs, const ModelFlags& mf, const TrainFlags& tf,
              const std::optional<fs::path>& output, const std::string& resolved) {
    const auto records = ingest_dataset(input);
    const ModelConfig mc = to_model_config(mf, TaskMode::Multi);
    const TrainConfig tc = to_train_config(tf, false);
    const BenchResult b = benchmark_mt_vs_st(records, input.stem().string(), mc, tc, runs);

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "train ratio: %.3f (stddev %.3f)  test ratio: %.3f (stddev %.3f)  over %d runs\n",
                  b.train_ratio_median, b.train_ratio_stddev, b.test_ratio_median,
                  b.test_ratio_stddev, static_cast<int>(b.runs.size()));
    std::cout << buf;

    if (output) {
        ordered_json j;
        j["run_count"] = b.runs.size();
        j["train_ratio_median"] = b.train_ratio_median;
        j["test_ratio_median"] = b.test_ratio_median;
        j["train_ratio_stddev"] = b.train_ratio_stddev;
        j["test_ratio_stddev"] = b.test_ratio_stddev;
        j["runs"] = ordered_json::array();
        for (const BenchRun& r : b.runs)
            j["runs"].push_back({{"mt_train_s", r.mt_train_s},
                                 {"mt_test_s", r.mt_test_s},
                                 {"st_train_s", r.st_train_s},
                                 {"st_test_s", r.st_test_s},
                                 {"train_ratio", r.train_ratio},
                                 {"test_ratio", r.test_ratio}});
        atomic_write_text(*output, j.dump(2) + "\n");
        ordered_json seeds{{"model_seed", mc.seed}, {"train_seed", tc.seed}};
        write_manifest(*output, "bench", resolved, seeds, {input}, {*output});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SATD and vulnerability classification pipeline for C functions"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // every subcommand accepts a declarative config file; command-line flags win
    auto add_config = [](CLI::App* cmd) {
        cmd->set_config("--config", "", "declarative configuration file (INI/TOML keys = flags)");
    };

    auto* ingest = app.add_subcommand("ingest", "validate a dataset and print demographics");
    fs::path ingest_input;
    std::optional<fs::path> ingest_output;
    ingest->add_option("--input", ingest_input, "record file")->required();
    ingest->add_option("--output", ingest_output, "write the normalized dataset here");
    add_config(ingest);

    auto* extract = app.add_subcommand("extract", "extract functions from raw C sources");
    std::vector<fs::path> extract_inputs;
    fs::path extract_output;
    std::string extract_project, extract_dataset = "extracted";
    extract->add_option("--input", extract_inputs, "C source files")->required()->expected(-1);
    extract->add_option("--output", extract_output, "record file to write")->required();
    extract->add_option("--project", extract_project, "project name (default: file stem)");
    extract->add_option("--dataset", extract_dataset, "dataset name");
    add_config(extract);

    auto* annotate = app.add_subcommand("annotate", "label records for SATD");
    fs::path annotate_input, annotate_output;
    std::string annotator = "mat";
    std::optional<fs::path> patterns_file, annotate_report;
    bool annotate_chi2 = false;
    annotate->add_option("--input", annotate_input, "record file")->required();
    annotate->add_option("--output", annotate_output, "labeled record file")->required();
    annotate->add_option("--annotator", annotator, "mat or patterns");
    annotate->add_option("--patterns", patterns_file, "pattern file (w:/s: prefixed lines)");
    annotate->add_flag("--chi2", annotate_chi2, "print the contingency table and test");
    annotate->add_option("--report", annotate_report, "write the chi-square record here");
    add_config(annotate);

    auto* chi2cmd = app.add_subcommand("chi2", "contingency table and independence test");
    fs::path chi2_input;
    std::optional<fs::path> chi2_report;
    chi2cmd->add_option("--input", chi2_input, "labeled record file")->required();
    chi2cmd->add_option("--report", chi2_report, "write the machine-readable record here");
    add_config(chi2cmd);

    auto* tokenize = app.add_subcommand("tokenize", "train BPE and encode a corpus");
    fs::path tokenize_input;
    std::string tokenize_mode = "out", tokenize_prefix;
    int tokenize_vocab = 8000, tokenize_budget = 509;
    std::optional<fs::path> encoded_out, prepared_out;
    tokenize->add_option("--input", tokenize_input, "record file")->required();
    tokenize->add_option("--mode", tokenize_mode, "in or out");
    tokenize->add_option("--vocab-size", tokenize_vocab, "BPE vocabulary size");
    tokenize->add_option("--budget", tokenize_budget, "content budget before special tokens");
    tokenize->add_option("--output-prefix", tokenize_prefix, "tokenizer file prefix")->required();
    tokenize->add_option("--encoded", encoded_out, "write the encoded corpus here");
    tokenize->add_option("--prepared", prepared_out, "write the prepared corpus here");
    add_config(tokenize);

    auto* train = app.add_subcommand("train", "train a classifier on a labeled dataset");
    fs::path train_input;
    std::string train_task = "multi", train_mode = "out", train_loss = "regular",
                train_dataset_name;
    ModelFlags train_mf;
    TrainFlags train_tf;
    std::optional<fs::path> train_checkpoint, train_history, train_cells;
    std::optional<std::string> train_tok_prefix;
    train->add_option("--input", train_input, "labeled record file")->required();
    train->add_option("--dataset-name", train_dataset_name, "name used in reports");
    train->add_option("--task", train_task, "satd, vuln, or multi");
    train->add_option("--mode", train_mode, "in or out");
    train->add_option("--loss", train_loss, "regular or weighted");
    add_model_flags(train, train_mf);
    add_train_flags(train, train_tf);
    train->add_option("--checkpoint", train_checkpoint, "write the trained model here");
    train->add_option("--tokenizer-prefix", train_tok_prefix, "write tokenizer files here");
    train->add_option("--history", train_history, "write the per-epoch history CSV here");
    train->add_option("--cells", train_cells, "write cell records (JSONL) here");
    add_config(train);

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
    fs::path eval_input, eval_checkpoint;
    std::string eval_tok_prefix, eval_mode = "out", eval_part = "all", eval_loss = "regular",
                eval_dataset_name;
    TrainFlags eval_tf;
    std::optional<fs::path> eval_cells, eval_report;
    evaluate->add_option("--input", eval_input, "labeled record file")->required();
    evaluate->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
    evaluate->add_option("--tokenizer-prefix", eval_tok_prefix, "tokenizer file prefix")
        ->required();
    evaluate->add_option("--mode", eval_mode, "in or out");
    evaluate->add_option("--part", eval_part, "all, train, val, or test");
    evaluate->add_option("--loss", eval_loss, "loss label recorded in cells");
    evaluate->add_option("--dataset-name", eval_dataset_name, "name used in reports");
    add_train_flags(evaluate, eval_tf);
    evaluate->add_option("--cells", eval_cells, "write cell records (JSONL) here");
    evaluate->add_option("--report", eval_report, "write the evaluation report here");
    add_config(evaluate);

    auto* compare = app.add_subcommand("compare", "delta tables from cell records");
    std::vector<fs::path> compare_cells;
    std::optional<fs::path> compare_table, compare_records;
    compare->add_option("--cells", compare_cells, "cell record files (JSONL)")
        ->required()
        ->expected(-1);
    compare->add_option("--output", compare_table, "write the plain-text table here");
    compare->add_option("--records", compare_records, "write the machine-readable report here");
    add_config(compare);

    auto* bench = app.add_subcommand("bench", "multi-task vs single-task wall-clock comparison");
    fs::path bench_input;
    int bench_runs = 3;
    ModelFlags bench_mf;
    TrainFlags bench_tf;
    std::optional<fs::path> bench_output;
    bench->add_option("--input", bench_input, "labeled record file")->required();
    bench->add_option("--runs", bench_runs, "number of repetitions");
    add_model_flags(bench, bench_mf);
    add_train_flags(bench, bench_tf);
    bench->add_option("--output", bench_output, "write the benchmark record here");
    add_config(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        const std::string resolved = cmd->config_to_str(true, false);
        if (cmd == ingest) return cmd_ingest(ingest_input, ingest_output, resolved);
        if (cmd == extract)
            return cmd_extract(extract_inputs, extract_output, extract_project, extract_dataset,
                               resolved);
        if (cmd == annotate)
            return cmd_annotate(annotate_input, annotate_output, annotator, patterns_file,
                                annotate_chi2, annotate_report, resolved);
        if (cmd == chi2cmd) return cmd_chi2(chi2_input, chi2_report, resolved);
        if (cmd == tokenize)
            return cmd_tokenize(tokenize_input, tokenize_mode, tokenize_vocab, tokenize_budget,
                                tokenize_prefix, encoded_out, prepared_out, resolved);
        if (cmd == train)
            return cmd_train(train_input, train_dataset_name, train_task, train_mode, train_loss,
                             train_mf, train_tf, train_checkpoint, train_tok_prefix, train_history,
                             train_cells, resolved);
        if (cmd == evaluate)
            return cmd_evaluate(eval_input, eval_checkpoint, eval_tok_prefix, eval_mode, eval_part,
                                eval_tf, eval_loss, eval_dataset_name, eval_cells, eval_report,
                                resolved);
        if (cmd == compare)
            return cmd_compare(compare_cells, compare_table, compare_records, resolved);
        if (cmd == bench)
            return cmd_bench(bench_input, bench_runs, bench_mf, bench_tf, bench_output, resolved);
        throw std::logic_error("unhandled subcommand");
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
}
