#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cxrcf/core/cooccurrence.hpp"
#include "cxrcf/editor.hpp"

namespace cxrcf {

inline constexpr int kReadAbsent = 0;
inline constexpr int kReadPresent = 1;
inline constexpr int kReadUnsure = 2;

/// One label per findings::reader() entry, in that order.
using ReadLabels = std::array<int, 8>;

/// Throws ValidationError unless every label is 0, 1 or 2.
void validate_labels(const ReadLabels& labels);

struct AssignedScan {
    int display_id = 0;
    std::string output_id;  ///< server-side only
};

struct ReaderSession {
    std::string session_id;
    std::string reader_id;
    std::vector<AssignedScan> items;  ///< presentation order
};

/// Seeded, prompt-blind assignment of the manifest's OK edits. Display ids
/// are sequential from 1 across all sessions. With `disjoint` the sessions
/// partition a shuffled prefix of the manifest; otherwise each reader gets an
/// independent shuffle. Throws ArgumentError when there are too few scans.
std::vector<ReaderSession> assign_reads(const Manifest& manifest, const std::vector<std::string>& readers,
                                        std::size_t per_reader, std::uint64_t seed, bool disjoint = true);

struct ReadRecord {
    std::string reader_id;
    std::string session_id;
    int display_id = 0;
    std::string output_id;
    ReadLabels labels{};
    std::string notes;
    int revision = 0;
    /// Set by adjudication; reads with blank notes start at 0.
    std::optional<int> artificial_flag;
    std::optional<int> extra_anomaly_flag;
};

enum class UnsurePolicy { AS_ABSENT, AS_PRESENT, EXCLUDE };
std::string to_string(UnsurePolicy p);
UnsurePolicy parse_unsure_policy(const std::string& s);

/// entry[p][f] = share of reads of scans prompted with p where f was read
/// present. Rows and columns default to the eight reader findings; rows with
/// no reads hold NaN. EXCLUDE drops unsure reads from that cell's
/// denominator. Throws ValidationError listing reads whose output id is not
/// an edit in the manifest.
CooccurrenceMatrix compute_read_cooccurrence(const std::vector<ReadRecord>& reads, const Manifest& manifest,
                                             UnsurePolicy policy = UnsurePolicy::AS_ABSENT,
                                             const std::vector<std::string>& keys = {});

/// Same matrix per reader id.
std::map<std::string, CooccurrenceMatrix> cooccurrence_by_reader(const std::vector<ReadRecord>& reads,
                                                                 const Manifest& manifest,
                                                                 UnsurePolicy policy = UnsurePolicy::AS_ABSENT,
                                                                 const std::vector<std::string>& keys = {});

struct RealismCounts {
    std::size_t total = 0;
    std::size_t artificial = 0;
    std::size_t extra_anomaly = 0;
};

struct RealismSummary {
    RealismCounts overall;
    double realistic_fraction = 0.0;     ///< 1 - artificial / total
    double extra_anomaly_fraction = 0.0;  ///< extra_anomaly / total
    std::map<std::string, RealismCounts> per_reader;
};

/// Throws ValidationError on an empty read set or on reads still awaiting
/// adjudication.
RealismSummary realism_summary(const std::vector<ReadRecord>& reads);
void write_realism_csv(const RealismSummary& summary, std::ostream& out);

/// Reader spreadsheet layout: display_id, one column per reader finding
/// (display names), Notes. Rows sorted by display id, labels written as digits.
void export_reads(const std::vector<ReadRecord>& reads, std::ostream& out);

struct DisplayMapping {
    std::string session_id;
    std::string reader_id;
    std::string output_id;
};
using DisplayMap = std::map<int, DisplayMapping>;

DisplayMap display_map(const std::vector<ReaderSession>& sessions);
void write_display_map(const DisplayMap& map, std::ostream& out);
DisplayMap read_display_map(std::istream& in);

/// Parses a reader spreadsheet; blank label cells read as 0. Display ids are
/// joined through `map`; unknown ids raise NotFoundError.
std::vector<ReadRecord> import_reads(std::istream& in, const DisplayMap& map);

/// Keywords in notes that point at realism or extra-anomaly remarks.
std::vector<std::string> highlight_keywords(const std::string& notes);

} // namespace cxrcf
