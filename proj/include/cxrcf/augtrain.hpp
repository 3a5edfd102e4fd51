#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxrcf/cohort.hpp"
#include "cxrcf/core/cooccurrence.hpp"
#include "cxrcf/core/kvconfig.hpp"
#include "cxrcf/editor.hpp"
#include "cxrcf/nn.hpp"
#include "cxrcf/stress.hpp"

namespace cxrcf {

enum class LabelingScheme { ABSENT, MASKED, COOCCURRENCE };
std::string to_string(LabelingScheme s);
LabelingScheme parse_labeling_scheme(const std::string& s);

enum class ExampleKind { REAL, SYNTHETIC_BASELINE, COUNTERFACTUAL };

struct TrainingExample {
    std::string id;
    std::string patient_id;
    std::string image_path;
    ExampleKind kind = ExampleKind::REAL;
    std::string prompted;  ///< counterfactuals only
    LabelVector labels;    ///< real scans only
};

struct Targets {
    std::vector<float> values;
    std::vector<std::uint8_t> mask;  ///< 0 = excluded from the loss
    friend bool operator==(const Targets&, const Targets&) = default;
};

/// Throws ConfigError when COOCCURRENCE lacks a matrix covering `findings`.
void check_scheme(LabelingScheme scheme, const std::vector<std::string>& findings, const CooccurrenceMatrix* matrix);

/// Real scans: hard labels (cohort aliases applied; labels the cohort lacks
/// are masked). Synthetic baselines: all zero. Counterfactuals: the prompted
/// finding is 1, off-target entries are 0 (ABSENT), masked (MASKED) or the
/// matrix row value (COOCCURRENCE).
Targets make_targets(const TrainingExample& example, LabelingScheme scheme, const std::vector<std::string>& findings,
                     const CooccurrenceMatrix* matrix = nullptr);

std::vector<TrainingExample> real_examples(const std::vector<LabeledScan>& scans);
/// Baselines and OK edits of a generated cohort; an edit's patient is its baseline.
std::vector<TrainingExample> synthetic_examples(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                                const std::vector<std::string>& pathologies);

struct SyntheticSplit {
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> test;
};
/// Baseline-patient level split; `train_fraction` of patients (rounded) train.
SyntheticSplit split_synthetic(const std::vector<TrainingExample>& examples, double train_fraction, std::uint64_t seed);

struct TrainingSet {
    std::vector<TrainingExample> items;  ///< seeded interleave of real and synthetic
    std::size_t n_real = 0;
    std::size_t n_synthetic = 0;
};

/// Throws IntegrityError when an id appears on both sides (or twice).
TrainingSet assemble_training_set(const std::vector<TrainingExample>& real,
                                  const std::vector<TrainingExample>& synthetic, std::uint64_t seed);

struct TrainingConfig {
    double learning_rate = 1e-4;
    int epochs = 100;
    int batch_size = 32;
    int patience = 50;
    std::vector<std::string> findings = default_findings();
    LabelingScheme scheme = LabelingScheme::COOCCURRENCE;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    /// Targets become t * (1 - a) + a / 2 before the loss; 0 leaves them as is.
    double label_smoothing = 0.0;
    nn::CnnConfig architecture = default_architecture();

    static std::vector<std::string> default_findings();
    static nn::CnnConfig default_architecture();  ///< one output per default finding
    void validate() const;  ///< throws ConfigError
    static TrainingConfig from_kv(const KvConfig& kv);
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    std::vector<std::optional<double>> val_auc;
    double val_mean_auc = 0.0;
    double val_loss = 0.0;
    bool improved = false;
};

struct TrainingResult {
    nn::ToyCnn model;  ///< best-validation weights
    std::vector<std::string> findings;
    std::vector<EpochLog> log;
    int best_epoch = 0;
    int stop_epoch = 0;
    std::string stop_reason;
    std::size_t n_train = 0;
    std::size_t n_validation = 0;
};

/// Trains the toy network. Validation is `validation_fraction` of patients,
/// seeded; early stopping on mean validation AUC (ties broken by validation
/// loss) once `max(patience, 1)` epochs pass without improvement. Batch order depends only on (seed, epoch).
/// Writes one JSONL line per epoch to `log_path` when given. Throws
/// TrainingError on a non-finite loss.
TrainingResult train(const TrainingSet& data, const TrainingConfig& config, const ImageLoader& loader,
                     const CooccurrenceMatrix* matrix = nullptr, const std::filesystem::path& log_path = {});

/// Writes model.bin and model.json (architecture id, findings, input size,
/// parameter hash, stopping details) into `dir`.
void save_model(const TrainingResult& result, const TrainingConfig& config, const std::filesystem::path& dir);

/// Probabilities from a trained network, as a stress-test adapter.
class ModelAdapter final : public ClassifierAdapter {
public:
    ModelAdapter(nn::ToyCnn model, std::vector<std::string> findings, std::string name = "toy-cnn");
    /// Reads a directory written by save_model.
    static ModelAdapter load(const std::filesystem::path& dir);
    const AdapterInfo& info() const override { return info_; }
    Predictions predict(const Image& image) const override;

private:
    nn::ToyCnn model_;
    AdapterInfo info_;
};

/// Makes "toy-checkpoint" (key: checkpoint = <model dir>) available to adapter_from_config.
void register_model_adapter();

/// Rank-statistic ROC AUC with midranks for ties; nullopt when only one class is present.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

struct AucRow {
    std::string cohort;
    std::vector<std::string> findings;
    std::vector<std::optional<double>> auc;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::vector<std::string> notes;  ///< why a cell is blank
};

/// Predicts the labelled scans and computes per-finding AUC; cells are blank
/// where the cohort has no such label or only one class occurs.
AucRow evaluate_auc(const ClassifierAdapter& adapter, const std::string& cohort, const std::vector<LabeledScan>& scans,
                    const std::vector<std::string>& findings, const ImageLoader& loader = disk_loader());

/// Same, over training examples with hard targets (synthetic holdouts, toy sets).
AucRow evaluate_examples(const ClassifierAdapter& adapter, const std::string& cohort,
                         const std::vector<TrainingExample>& examples, const std::vector<std::string>& findings,
                         const ImageLoader& loader, LabelingScheme scheme = LabelingScheme::ABSENT);

/// Cohort rows, finding columns, blank where undefined.
void write_auc_table(const std::vector<AucRow>& rows, std::ostream& out);

enum class TaskMode { SINGLE, MULTI };
std::string to_string(TaskMode m);

struct SweepInputs {
    TrainingSet train;
    std::vector<TrainingExample> test;
    std::optional<CooccurrenceMatrix> matrix;
};

struct SweepCell {
    TaskMode mode = TaskMode::MULTI;
    LabelingScheme scheme = LabelingScheme::ABSENT;
    std::size_t n_synthetic = 0;
    AucRow auc;
    std::string error;  ///< non-empty when the cell failed
};

/// One model per (mode, scheme, n_synthetic) cell; SINGLE trains one network
/// per finding. `inputs` builds the data for a synthetic count. Failures stay
/// inside their cell.
std::vector<SweepCell> small_scale_sweep(const std::function<SweepInputs(std::size_t)>& inputs,
                                         const TrainingConfig& base, const ImageLoader& loader,
                                         const std::vector<std::size_t>& synthetic_counts = {2000, 5000});
void write_sweep_report(const std::vector<SweepCell>& cells, std::ostream& out);

/// Writes the training table (id, patient, image, split, per-finding target
/// and mask) an external trainer such as a DenseNet script consumes.
void write_training_table(const TrainingSet& data, const TrainingConfig& config, const CooccurrenceMatrix* matrix,
                          std::ostream& out);

} // namespace cxrcf
