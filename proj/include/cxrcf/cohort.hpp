#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cxrcf/core/cooccurrence.hpp"

namespace cxrcf {

enum class Cohort { NIH, MIMIC, CHEXPERT, PADCHEST, SYNTHETIC };
enum class View { PA, AP, OTHER };
enum class Sex { F, M, UNKNOWN };
enum class Split { TRAIN, VAL, TEST };

std::string to_string(Cohort c);
std::string to_string(View v);
std::string to_string(Sex s);
std::string to_string(Split s);
Cohort parse_cohort(const std::string& name);  ///< case-insensitive; throws ArgumentError
Split parse_split(const std::string& name);

using Date = std::chrono::year_month_day;

/// Parses YYYY-MM-DD or YYYYMMDD.
std::optional<Date> parse_date(const std::string& text);
std::string format_date(const Date& d);

struct ScanRecord {
    std::string scan_id;
    std::string patient_id;
    Cohort cohort = Cohort::NIH;
    View view = View::OTHER;
    std::optional<double> age_years;  ///< nullopt when the source row had no age
    Sex sex = Sex::UNKNOWN;
    std::string image_path;
    std::optional<Date> study_date;
    /// Visit ordinal within a patient, for cohorts that publish one instead of dates (NIH).
    std::optional<int> follow_up;
};

struct LabelVocabulary {
    Cohort cohort = Cohort::SYNTHETIC;
    std::vector<std::string> findings;

    std::optional<std::size_t> index_of(const std::string& key) const;
    bool has_no_finding() const;
};

/// Built-in vocabularies; stable order.
std::shared_ptr<const LabelVocabulary> vocabulary(Cohort cohort);
/// Vocabulary over an explicit finding list (training targets).
std::shared_ptr<const LabelVocabulary> make_vocabulary(std::vector<std::string> findings,
                                                       Cohort cohort = Cohort::SYNTHETIC);

/// One label entry: a hard or soft value in [0, 1], "unsure", or "masked"
/// (excluded from the loss).
class LabelValue {
public:
    enum class State { Value, Unsure, Masked };

    LabelValue() = default;
    static LabelValue of(double v);  ///< throws ValidationError outside [0, 1]
    static LabelValue unsure() { return LabelValue(State::Unsure, 0.0); }
    static LabelValue masked() { return LabelValue(State::Masked, 0.0); }

    State state() const { return state_; }
    bool is_value() const { return state_ == State::Value; }
    bool is_masked() const { return state_ == State::Masked; }
    bool is_unsure() const { return state_ == State::Unsure; }
    bool is_hard() const { return is_value() && (value_ == 0.0 || value_ == 1.0); }
    bool positive() const { return is_value() && value_ == 1.0; }
    double value() const { return value_; }

    friend bool operator==(const LabelValue&, const LabelValue&) = default;

private:
    LabelValue(State s, double v) : state_(s), value_(v) {}
    State state_ = State::Value;
    double value_ = 0.0;
};

struct LabelVector {
    std::shared_ptr<const LabelVocabulary> vocabulary;
    std::vector<LabelValue> values;

    LabelVector() = default;
    explicit LabelVector(std::shared_ptr<const LabelVocabulary> vocab);

    LabelValue get(const std::string& key) const;  ///< throws NotFoundError
    void set(const std::string& key, LabelValue v);
    bool has(const std::string& key) const;
};

/// UNSURE -> 0. Applying it twice is the same as once.
LabelVector uncertain_to_negative(LabelVector labels);

struct LabeledScan {
    ScanRecord scan;
    LabelVector labels;
};

struct SkippedRow {
    std::size_t line = 0;
    std::string reason;
};

struct IngestOptions {
    /// Prefix for relative image paths.
    std::filesystem::path image_root;
    /// When set, rows whose image file does not exist are skipped.
    bool verify_images = false;
};

struct IngestResult {
    std::vector<LabeledScan> records;
    std::vector<SkippedRow> skipped;
    std::size_t rows_read = 0;
    std::vector<std::string> notes;
};

/// Parses one cohort's metadata CSV. Required columns per cohort are listed in
/// README.md; a missing column raises SchemaError. Rows with an unparseable age
/// or date are skipped and reported. Uncertain labels become negative.
IngestResult ingest_cohort(std::istream& metadata, Cohort cohort, const IngestOptions& options = {});
IngestResult ingest_cohort(const std::filesystem::path& metadata_file, Cohort cohort,
                           const IngestOptions& options = {});

struct FilterReport {
    std::size_t input = 0;
    std::size_t kept = 0;
    std::size_t dropped_view = 0;
    std::size_t dropped_age = 0;
    std::size_t dropped_missing_age = 0;
    std::size_t patients = 0;
};

struct FilterResult {
    std::vector<LabeledScan> records;
    FilterReport report;
};

/// NIH and CheXpert keep PA only; MIMIC and PadChest keep PA or AP. All keep
/// age >= 18 and drop rows without an age. Synthetic records pass through.
FilterResult apply_inclusion_filter(const std::vector<LabeledScan>& records, Cohort cohort);

/// Scans whose no_finding entry is 1. Throws ConfigError if a record's
/// vocabulary has no no_finding entry.
std::vector<LabeledScan> select_no_finding(const std::vector<LabeledScan>& records);

/// Seeded sample of n records without replacement, returned in input order.
std::vector<LabeledScan> sample_records(const std::vector<LabeledScan>& records, std::size_t n,
                                        std::uint64_t seed);

/// entry[a][b] = share of scans positive for a that are also positive for b.
/// `finding_keys` defaults to the first record's vocabulary minus no_finding.
CooccurrenceMatrix real_cooccurrence(const std::vector<LabeledScan>& records,
                                     std::vector<std::string> finding_keys = {});

/// Label of one of the six study findings, translated through the cohort's
/// alias map. nullopt when the cohort does not label that finding.
std::optional<LabelValue> study_label(const LabeledScan& record, const std::string& study_key);
/// Cohort key used for a study finding, or nullopt when the cohort lacks it.
std::optional<std::string> study_alias(Cohort cohort, const std::string& study_key);

struct SplitAssignment {
    std::string patient_id;
    Split split = Split::TRAIN;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<SplitAssignment> assignments;  ///< sorted by patient_id
    std::map<Split, std::size_t> scans;
    std::map<Split, std::size_t> patients;

    Split split_of(const std::string& patient_id) const;  ///< throws NotFoundError
};

/// Patient-level split: n_train_patients drawn under seed go to TRAIN, the
/// rest to TEST.
SplitResult make_split(const std::vector<LabeledScan>& records, std::size_t n_train_patients,
                       std::uint64_t seed);

/// Moves a seeded fraction of TRAIN patients to VAL (at least one when TRAIN
/// has two or more patients).
SplitResult carve_validation(SplitResult split, double fraction, std::uint64_t seed);

void write_split_csv(const SplitResult& split, std::ostream& out);
SplitResult read_split_csv(std::istream& in);

/// Scan manifest: one JSON object per line with the ScanRecord fields and a
/// "labels" object keyed by finding.
void write_scan_manifest(const std::vector<LabeledScan>& records, std::ostream& out);
std::vector<LabeledScan> read_scan_manifest(const std::filesystem::path& path);

} // namespace cxrcf
