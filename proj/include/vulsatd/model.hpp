#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vulsatd/matrix.hpp"
#include "vulsatd/metrics.hpp"
#include "vulsatd/rng.hpp"
#include "vulsatd/tokenizer.hpp"

namespace vulsatd {

enum class TaskMode { StSatd, StVuln, Multi };

std::string to_string(TaskMode mode);
TaskMode task_mode_from_string(std::string_view s);

/// Encoder shape. The classifier heads read the CLS position of the final
/// layer; MULTI attaches one two-logit head per task to the shared encoder.
struct ModelConfig {
    int vocab_size = 8000;
    int hidden = 128;
    int layers = 4;
    int heads = 4;
    int max_len = 512;
    double dropout = 0.1;
    TaskMode task_mode = TaskMode::Multi;
    std::uint64_t seed = 42;
};

struct TrainConfig {
    double learning_rate = 2e-5;
    int epochs = 10;
    int batch_size = 16;
    double l2_lambda = 0.0;
    bool weighted_loss = false;
    std::array<double, 3> split = {0.8, 0.1, 0.1};
    bool stratified_split = false;  // keep label-pair proportions per part
    std::uint64_t seed = 42;
};

/// Per-class loss weights w_c = N / (K * n_c); (1, 1) when weighting is off.
struct ClassWeights {
    double negative = 1.0;
    double positive = 1.0;
};

/// Throws InputError when labels contain only one class.
ClassWeights class_weights(const std::vector<bool>& labels, int num_classes = 2);

/// Softmax over a two-logit score pair.
std::array<double, 2> binary_softmax(const std::array<double, 2>& logits);

struct TaskWeights {
    ClassWeights satd;
    ClassWeights vuln;
};

/// Two-class scores per active task; logit index 0 scores the negative class.
struct TaskLogits {
    std::optional<std::array<double, 2>> satd;
    std::optional<std::array<double, 2>> vuln;
};

struct TaskLabels {
    std::optional<bool> satd;
    std::optional<bool> vuln;
};

struct LabeledExample {
    EncodedPair input;
    TaskLabels labels;
};

struct Prediction {
    std::optional<bool> satd;
    std::optional<bool> vuln;
    std::optional<std::array<double, 2>> satd_probs;
    std::optional<std::array<double, 2>> vuln_probs;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::optional<Metrics> train_satd, train_vuln, val_satd, val_vuln;
    double val_selection_f1 = 0.0;  // mean of active-task validation F1s
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    TaskWeights weights;  // the weights the run actually used
};

struct Param {
    std::string name;
    Matrix w;  // value
    Matrix g;  // gradient
    Matrix m;  // Adam first moment
    Matrix v;  // Adam second moment
};

/// Pre-norm transformer encoder over `[CLS] comment [SEP] code [EOS]`
/// sequences, trained from random initialization. All randomness flows from
/// the config/train seeds; a fixed (seed, config, data) triple reproduces
/// parameters and history exactly.
class Model {
public:
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    /// Logits per record per active task. Dropout is live only when
    /// `training` is true. Records are processed independently at their own
    /// length, so results never depend on batch composition.
    std::vector<TaskLogits> forward(const std::vector<EncodedPair>& batch, bool training);

    std::vector<Prediction> predict(const std::vector<EncodedPair>& inputs);

    /// Weighted softmax cross-entropy summed over active tasks, plus
    /// l2_lambda * ||params||^2.
    double example_loss(const TaskLogits& logits, const TaskLabels& labels,
                        const TaskWeights& weights, double l2_lambda) const;

    TrainResult train(const std::vector<LabeledExample>& train_set,
                      const std::vector<LabeledExample>& val_set, const TrainConfig& tc);

    /// Batch objective: mean weighted cross-entropy over the batch plus
    /// l2_lambda * ||params||^2. Fills every parameter's gradient.
    double batch_loss_and_gradients(const std::vector<LabeledExample>& batch,
                                    const TaskWeights& weights, double l2_lambda);
    /// Same objective without touching gradients.
    double batch_loss(const std::vector<LabeledExample>& batch, const TaskWeights& weights,
                      double l2_lambda);

    /// Mean eval-mode loss and per-task metrics on a labeled set.
    struct EvalResult {
        double loss = 0.0;
        std::optional<Metrics> satd;
        std::optional<Metrics> vuln;
    };
    EvalResult evaluate(const std::vector<LabeledExample>& data, const TaskWeights& weights);

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    std::size_t parameter_count() const;

    bool has_satd_head() const { return satd_head_w_ >= 0; }
    bool has_vuln_head() const { return vuln_head_w_ >= 0; }

    /// Attention probabilities for one record (eval mode): [layer][head],
    /// each an LxL row-stochastic matrix.
    std::vector<std::vector<Matrix>> attention_probs(const EncodedPair& input);

    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

private:
    struct LayerIdx {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        int ln2_g, ln2_b, w1, b1, w2, b2;
    };
    struct RecordCache;

    int add_param(const std::string& name, int rows, int cols);
    void init_weights();
    void validate_input(const EncodedPair& input) const;
    TaskLogits forward_record(const EncodedPair& input, bool training, RecordCache* cache,
                              std::vector<std::vector<Matrix>>* att_probs);
    void backward_record(const RecordCache& cache, const TaskLogits& dlogits);
    void adam_step(double lr);
    void zero_gradients();

    ModelConfig config_;
    std::vector<Param> params_;
    int tok_emb_ = -1, pos_emb_ = -1;
    std::vector<LayerIdx> layer_idx_;
    int lnf_g_ = -1, lnf_b_ = -1;
    int satd_head_w_ = -1, satd_head_b_ = -1;
    int vuln_head_w_ = -1, vuln_head_b_ = -1;
    Rng dropout_rng_;
    long long adam_t_ = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
};

/// Central finite differences (step `fd_step`) against the analytic batch
/// gradient on a fixed tiny batch. Requires dropout = 0 in the config.
GradCheckResult grad_check(const ModelConfig& config, double fd_step = 1e-5);

}  // namespace vulsatd
