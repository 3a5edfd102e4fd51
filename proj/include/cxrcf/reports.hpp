#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cxrcf {

/// Artifact names a run directory may hold, by producing subcommand.
std::vector<std::string> expected_artifacts(const std::string& subcommand);

struct ReportResult {
    std::vector<std::filesystem::path> written;
    std::vector<std::string> missing;  ///< expected artifacts that were absent
};

/// Renders heatmaps (PNG next to each CSV) for change matrices and
/// co-occurrence matrices found in `run_dir`, plus a paired
/// prompted-vs-read / real co-occurrence panel when both exist. The
/// subcommand comes from config.json. Throws NotFoundError listing what is
/// missing when nothing can be rendered.
ReportResult render_reports(const std::filesystem::path& run_dir);

struct ManifestIssue {
    std::filesystem::path file;
    std::size_t line = 0;  ///< 0 when the issue concerns the whole file
    std::string message;
};

struct ManifestCheck {
    std::size_t manifests = 0;
    std::size_t records = 0;
    std::vector<ManifestIssue> issues;
    bool ok() const { return issues.empty(); }
};

/// Checks every manifest.jsonl under `run_dir`: each line parses under the
/// current schema, output ids are unique, OK records have their image, record
/// seeds replay from the run seed, and the record count matches
/// config.json's expected_records when present.
ManifestCheck validate_manifests(const std::filesystem::path& run_dir);

} // namespace cxrcf
