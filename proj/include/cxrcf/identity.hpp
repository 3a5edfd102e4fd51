#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "cxrcf/cohort.hpp"
#include "cxrcf/core/image.hpp"
#include "cxrcf/editor.hpp"

namespace cxrcf {

/// Pairwise Frechet distance between two singleton embedding sets. With one
/// sample per set both covariances are zero, leaving the squared Euclidean
/// distance between the embeddings. Throws ArgumentError on a size mismatch.
double pfid(std::span<const double> a, std::span<const double> b);

struct EmbedderTag {
    std::string name;
    std::size_t dimension = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbedderTag tag() const = 0;
    virtual std::vector<double> embed(const Image& image) const = 0;
};

/// Fixed random projection of a block-mean downsampled image. Deterministic
/// for a given (grid, dimension, seed).
class ToyEmbedder final : public Embedder {
public:
    explicit ToyEmbedder(std::size_t dimension = 64, int grid = 16, std::uint64_t seed = 0x5eed);
    EmbedderTag tag() const override { return {"toy-projection", dimension_}; }
    std::vector<double> embed(const Image& image) const override;

private:
    std::size_t dimension_;
    int grid_;
    std::vector<double> projection_;  // dimension x grid*grid
};

/// Runs an external command per image (`<command> <image.png>`) that prints
/// whitespace-separated floats; used for inception-v3 / xresnet / clip.
class CommandEmbedder final : public Embedder {
public:
    CommandEmbedder(EmbedderTag tag, std::string command, std::filesystem::path scratch_dir = {});
    EmbedderTag tag() const override { return tag_; }
    std::vector<double> embed(const Image& image) const override;

private:
    EmbedderTag tag_;
    std::string command_;
    std::filesystem::path scratch_;
};

/// Content-addressed embedding cache: <dir>/<embedder>/<sha256 of the pixel buffer>.bin
/// holding raw little-endian doubles.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {}
    std::vector<double> get_or_compute(const Embedder& embedder, const Image& image);
    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    std::filesystem::path dir_;
    std::mutex mutex_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

enum class PairKind { CONTROL, MODEL, REAL };
std::string to_string(PairKind k);
PairKind parse_pair_kind(const std::string& s);

struct ImagePair {
    PairKind kind = PairKind::REAL;
    std::string condition;
    std::string baseline_id;
    std::string baseline_path;
    std::string baseline_patient;
    std::string comparison_id;
    std::string comparison_path;
    std::string comparison_patient;
};

struct PairingInputs {
    /// Real scans with labels (REAL pairs; patient lookup for MODEL/CONTROL).
    const std::vector<LabeledScan>* scans = nullptr;
    /// Counterfactual manifest and its directory (MODEL/CONTROL pairs).
    const Manifest* manifest = nullptr;
    std::filesystem::path manifest_dir;
    /// Follow-up window for REAL pairs.
    int max_years = 2;
};

/// REAL: per patient, one (no-finding baseline, later scan positive for the
/// condition within max_years) pair drawn under seed; candidates are ordered
/// by baseline time, then gap, then earliest follow-up. Patients without dates
/// fall back to the follow-up ordinal with the age difference as the gap.
/// MODEL: each baseline with its own counterfactual for the condition.
/// CONTROL: the MODEL baselines matched to counterfactuals of other patients
/// through a seeded derangement.
/// An empty result is logged as a warning.
std::vector<ImagePair> build_pairings(const PairingInputs& inputs, const std::string& condition, PairKind kind,
                                      std::uint64_t seed);

struct PairScore {
    PairKind kind = PairKind::REAL;
    std::string condition;
    std::string baseline_id;
    std::string comparison_id;
    EmbedderTag embedder;
    double value = 0.0;
};

struct ScoreSummary {
    PairKind kind = PairKind::REAL;
    std::string condition;
    std::string embedder;
    double median = 0.0;
    double iqr = 0.0;
    std::size_t n = 0;
    std::size_t skipped = 0;
};

struct ScoringResult {
    std::vector<PairScore> scores;
    std::vector<ScoreSummary> summaries;  ///< one per (kind, condition) present
};

/// Embeds both sides of every pair (through the cache when given) and
/// summarises median / IQR per (kind, condition). Pairs with unloadable
/// images are skipped and counted.
ScoringResult score_pairings(const std::vector<ImagePair>& pairs, const Embedder& embedder,
                             const ImageLoader& loader = disk_loader(), EmbeddingCache* cache = nullptr);

void write_pair_scores_csv(const std::vector<PairScore>& scores, std::ostream& out);
/// Rows: embedder x kind; columns: condition "median (IQR)" with N in the header.
void write_summary_table(const std::vector<ScoreSummary>& summaries, std::ostream& out);

} // namespace cxrcf
