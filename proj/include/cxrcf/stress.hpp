#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxrcf/core/cooccurrence.hpp"
#include "cxrcf/core/image.hpp"
#include "cxrcf/core/kvconfig.hpp"
#include "cxrcf/editor.hpp"

namespace cxrcf {

enum class Invocation { IN_PROCESS, SUBPROCESS, HTTP };
std::string to_string(Invocation i);
Invocation parse_invocation(const std::string& s);

using Predictions = std::map<std::string, double>;

struct AdapterInfo {
    std::string name;
    std::vector<std::string> supported_findings;
    int input_resolution = 224;
    Invocation invocation = Invocation::IN_PROCESS;
    std::string citation;

    bool supports(const std::string& finding) const;
};

class ClassifierAdapter {
public:
    virtual ~ClassifierAdapter() = default;
    virtual const AdapterInfo& info() const = 0;
    /// One probability in [0, 1] per supported finding.
    virtual Predictions predict(const Image& image) const = 0;
};

class ConstantAdapter final : public ClassifierAdapter {
public:
    ConstantAdapter(std::vector<std::string> findings, double value, std::string name = "constant");
    const AdapterInfo& info() const override { return info_; }
    Predictions predict(const Image& image) const override;

private:
    AdapterInfo info_;
    double value_;
};

/// Wraps a callable; the image is resized to info.input_resolution first.
class FunctionAdapter final : public ClassifierAdapter {
public:
    using Fn = std::function<Predictions(const Image&)>;
    FunctionAdapter(AdapterInfo info, Fn fn) : info_(std::move(info)), fn_(std::move(fn)) {}
    const AdapterInfo& info() const override { return info_; }
    Predictions predict(const Image& image) const override;

private:
    AdapterInfo info_;
    Fn fn_;
};

/// `<command> <image.png>` printing a JSON object {finding: probability}.
class SubprocessAdapter final : public ClassifierAdapter {
public:
    SubprocessAdapter(AdapterInfo info, std::string command, std::filesystem::path scratch_dir = {});
    const AdapterInfo& info() const override { return info_; }
    Predictions predict(const Image& image) const override;

private:
    AdapterInfo info_;
    std::string command_;
    std::filesystem::path scratch_;
};

/// POSTs the PNG (image/png) to the endpoint and expects the same JSON object back.
class HttpAdapter final : public ClassifierAdapter {
public:
    HttpAdapter(AdapterInfo info, std::string endpoint);
    const AdapterInfo& info() const override { return info_; }
    Predictions predict(const Image& image) const override;

private:
    AdapterInfo info_;
    std::string host_;
    std::string path_;
};

/// Checks that a raw prediction covers `findings` with values in [0, 1]; throws ValidationError.
void check_predictions(const AdapterInfo& info, const Predictions& p, const std::vector<std::string>& findings);

/// Builds an adapter from a key-value file:
///   name, findings (comma list), input_resolution, invocation, citation,
///   command (SUBPROCESS), endpoint (HTTP), builtin + value (IN_PROCESS).
/// IN_PROCESS builtins: "constant", and whatever `register_builtin_adapter` added.
std::unique_ptr<ClassifierAdapter> adapter_from_config(const KvConfig& config);

using AdapterFactory = std::function<std::unique_ptr<ClassifierAdapter>(const KvConfig&)>;
void register_builtin_adapter(const std::string& builtin, AdapterFactory factory);

enum class PredictionSource { REFERENCE, BASELINE, COUNTERFACTUAL };
std::string to_string(PredictionSource s);
PredictionSource parse_prediction_source(const std::string& s);

struct PredictItem {
    std::string scan_id;
    std::string image_path;
    PredictionSource source = PredictionSource::BASELINE;
    std::string added_pathology;  ///< counterfactuals only
    std::string baseline_id;      ///< counterfactuals: the scan that was edited
};

struct PredictionRow {
    PredictItem item;
    Predictions probabilities;
};

struct ProbabilityTable {
    std::string adapter;
    std::vector<std::string> findings;
    std::vector<PredictionRow> rows;  ///< in item order, failed items omitted
    std::vector<std::pair<std::string, std::string>> failures;  ///< (scan_id, reason)

    std::vector<double> column(const std::string& finding) const;
    /// Columns: scan_id, finding, probability, adapter, source, added_pathology, baseline_id.
    void write_csv(std::ostream& out) const;
    static ProbabilityTable read_csv(std::istream& in);
};

/// Parallel per-image prediction. Throws ArgumentError if the adapter lacks a
/// requested finding; per-image failures are logged and listed in `failures`.
ProbabilityTable predict_cohort(const ClassifierAdapter& adapter, const std::vector<PredictItem>& items,
                                const std::vector<std::string>& findings, const ImageLoader& loader = disk_loader(),
                                unsigned threads = 0);

/// Midrank percentile: 100 * (#{r < p} + 0.5 * #{r == p}) / |ref|.
/// Throws ArgumentError on an empty reference.
double to_percentile(double p, std::span<const double> reference);

/// Sorted copy of a reference column for repeated O(log n) lookups.
class PercentileReference {
public:
    explicit PercentileReference(std::vector<double> values);
    double operator()(double p) const;
    std::size_t size() const { return sorted_.size(); }

private:
    std::vector<double> sorted_;
};

using ReferenceSet = std::map<std::string, PercentileReference>;
ReferenceSet build_reference(const ProbabilityTable& reference, const std::vector<std::string>& findings);

struct PercentileChangeMatrix {
    std::vector<std::string> row_keys;  ///< added pathology
    std::vector<std::string> col_keys;  ///< predicted finding
    std::vector<std::vector<double>> values;  ///< NaN when a row has no pairs
    std::vector<std::size_t> row_counts;      ///< evaluated (baseline, counterfactual) pairs
    std::vector<std::size_t> row_excluded;    ///< baselines missing that counterfactual

    double at(const std::string& row, const std::string& col) const;
    void write_csv(std::ostream& out) const;
    static PercentileChangeMatrix read_csv(std::istream& in);
};

/// cell[p][f] = median over baselines of pct_f(counterfactual with p) - pct_f(baseline).
/// Pure over the completed tables; when several counterfactuals share a
/// (baseline, pathology) the lowest scan id is used.
PercentileChangeMatrix compute_change_matrix(const ProbabilityTable& baselines, const ProbabilityTable& counterfactuals,
                                             const ReferenceSet& reference, const std::vector<std::string>& pathologies,
                                             const std::vector<std::string>& findings);

/// Counterfactual prediction items for the OK edit records of a manifest.
std::vector<PredictItem> counterfactual_items(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                              const std::vector<std::string>& pathologies);

struct StressRun {
    ProbabilityTable reference;
    ProbabilityTable baselines;
    ProbabilityTable counterfactuals;
    PercentileChangeMatrix matrix;
};

/// Predicts the reference cohort, baselines and counterfactuals, then builds
/// the change matrix. `reference` is the whole real evaluation cohort; when
/// it is empty the baselines serve as the reference.
StressRun change_matrix(const ClassifierAdapter& adapter, const std::vector<PredictItem>& baselines,
                        const Manifest& manifest, const std::filesystem::path& manifest_dir,
                        const std::vector<PredictItem>& reference, const std::vector<std::string>& pathologies,
                        const std::vector<std::string>& findings, const ImageLoader& loader = disk_loader(),
                        unsigned threads = 0);

struct ProbabilityReferenceRow {
    std::string added;
    std::string predicted;
    double baseline_median = 0.0;
    double modified_median = 0.0;
    std::size_t n = 0;
    std::optional<double> reader_cooccurrence;
};

/// Median raw probability on baselines vs modified scans per (added, predicted),
/// next to the reader co-occurrence for the same cell when available.
std::vector<ProbabilityReferenceRow> probability_reference_report(const ProbabilityTable& baselines,
                                                                  const ProbabilityTable& counterfactuals,
                                                                  const CooccurrenceMatrix* cooccurrence,
                                                                  const std::vector<std::string>& pathologies,
                                                                  const std::vector<std::string>& findings);
void write_probability_reference_csv(const std::vector<ProbabilityReferenceRow>& rows, std::ostream& out);

} // namespace cxrcf
