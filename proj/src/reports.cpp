#include "cxrcf/reports.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "cxrcf/core/cooccurrence.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/heatmap.hpp"
#include "cxrcf/editor.hpp"
#include "cxrcf/stress.hpp"

namespace cxrcf {
namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> expected_artifacts(const std::string& subcommand) {
    static const std::map<std::string, std::vector<std::string>> table{
        {"ingest", {"scans.jsonl", "ingest_report.json"}},
        {"generate", {"manifest.jsonl"}},
        {"sweep", {"manifest.jsonl", "review_index.csv"}},
        {"pfid", {"pfid_scores.csv", "pfid_summary.csv"}},
        {"cooccur", {"prompted_vs_read.csv", "realism.csv"}},
        {"stress", {"predictions.csv", "change_matrix.csv"}},
        {"train", {"model/model.json", "train_log.jsonl"}},
        {"evaluate", {"auc.csv"}},
        {"toy-demo", {"change_matrix_confounded.csv", "change_matrix_counterfactual.csv", "auc.csv", "summary.json"}},
        {"reader-export", {"reads.csv", "display_map.csv"}},
    };
    auto it = table.find(subcommand);
    return it == table.end() ? std::vector<std::string>{} : it->second;
}

namespace {

std::vector<std::string> display(const std::vector<std::string>& keys) {
    std::vector<std::string> out;
    for (const auto& k : keys) {
        try {
            out.push_back(findings::display_name(k));
        } catch (const std::exception&) {
            out.push_back(k);
        }
    }
    return out;
}

HeatmapSpec cooccurrence_spec(const CooccurrenceMatrix& m, const std::string& title) {
    HeatmapSpec spec;
    spec.title = title;
    spec.row_labels = display(m.row_keys);
    spec.col_labels = display(m.col_keys);
    for (const auto& row : m.fractions) {
        std::vector<double> pct;
        for (double v : row) pct.push_back(100.0 * v);
        spec.values.push_back(std::move(pct));
    }
    spec.signed_scale = false;
    return spec;
}

CooccurrenceMatrix read_cooccurrence(const fs::path& p) {
    std::ifstream in(p);
    return CooccurrenceMatrix::read_csv(in);
}

} // namespace

ReportResult render_reports(const fs::path& run_dir) {
    ReportResult result;
    if (!fs::is_directory(run_dir)) throw NotFoundError("run directory does not exist: " + run_dir.string());
    std::string subcommand;
    if (fs::exists(run_dir / "config.json")) {
        std::ifstream in(run_dir / "config.json");
        subcommand = json::parse(in).value("subcommand", "");
    } else {
        result.missing.emplace_back("config.json");
    }
    for (const auto& a : expected_artifacts(subcommand))
        if (!fs::exists(run_dir / a)) result.missing.push_back(a);

    std::vector<fs::path> csvs;
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
    std::sort(csvs.begin(), csvs.end());

    for (const auto& p : csvs) {
        const auto stem = p.stem().string();
        if (stem.rfind("change_matrix", 0) == 0) {
            std::ifstream in(p);
            const auto m = PercentileChangeMatrix::read_csv(in);
            HeatmapSpec spec{"Median percentile change: " + stem, display(m.row_keys), display(m.col_keys),
                             m.values};
            const auto out = fs::path(p).replace_extension(".png");
            write_heatmap_png(spec, out);
            result.written.push_back(out);
        } else if (stem.find("cooccurrence") != std::string::npos || stem == "prompted_vs_read") {
            const auto out = fs::path(p).replace_extension(".png");
            write_heatmap_png(cooccurrence_spec(read_cooccurrence(p), stem), out);
            result.written.push_back(out);
        }
    }
    if (fs::exists(run_dir / "prompted_vs_read.csv") && fs::exists(run_dir / "real_cooccurrence.csv")) {
        const auto out = run_dir / "cooccurrence_paired.png";
        write_heatmap_panels({cooccurrence_spec(read_cooccurrence(run_dir / "prompted_vs_read.csv"),
                                                "Prompted vs read (%)"),
                              cooccurrence_spec(read_cooccurrence(run_dir / "real_cooccurrence.csv"),
                                                "Real co-occurrence (%)")},
                             out);
        result.written.push_back(out);
    }
    if (result.written.empty()) {
        std::string list;
        for (const auto& m : result.missing) list += (list.empty() ? "" : ", ") + m;
        if (list.empty()) list = "no change_matrix*.csv or *cooccurrence*.csv artifacts";
        throw NotFoundError("nothing to render in " + run_dir.string() + "; missing: " + list);
    }
    return result;
}

ManifestCheck validate_manifests(const fs::path& run_dir) {
    ManifestCheck check;
    std::optional<std::uint64_t> run_seed;
    std::optional<std::size_t> expected;
    if (fs::exists(run_dir / "config.json")) {
        std::ifstream in(run_dir / "config.json");
        const auto cfg = json::parse(in);
        if (cfg.contains("seed") && cfg["seed"].is_number_unsigned()) run_seed = cfg["seed"].get<std::uint64_t>();
        if (cfg.contains("expected_records")) expected = cfg["expected_records"].get<std::size_t>();
    }
    std::vector<fs::path> manifests;
    if (fs::is_directory(run_dir))
        for (const auto& e : fs::recursive_directory_iterator(run_dir))
            if (e.is_regular_file() && e.path().filename() == "manifest.jsonl") manifests.push_back(e.path());
    std::sort(manifests.begin(), manifests.end());
    if (manifests.empty()) {
        check.issues.push_back({run_dir, 0, "no manifest.jsonl found"});
        return check;
    }
    for (const auto& path : manifests) {
        ++check.manifests;
        std::ifstream in(path);
        std::string text;
        std::size_t line_no = 0, records = 0;
        std::set<std::string> ids;
        while (std::getline(in, text)) {
            ++line_no;
            if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
            CounterfactualRecord r;
            try {
                r = record_from_json(json::parse(text));
            } catch (const std::exception& e) {
                check.issues.push_back({path, line_no, e.what()});
                continue;
            }
            ++records;
            if (!ids.insert(r.output_id).second)
                check.issues.push_back({path, line_no, "duplicate output id " + r.output_id});
            if (r.status == RecordStatus::OK && !fs::exists(path.parent_path() / r.output_path))
                check.issues.push_back({path, line_no, "image missing: " + r.output_path});
            if (run_seed) {
                const auto replay = derive_seed(r.source_scan_id, r.prompt.pathology_key, r.replicate, *run_seed);
                if (replay != r.seed)
                    check.issues.push_back({path, line_no,
                                            "seed " + std::to_string(r.seed) + " does not replay (expected " +
                                                std::to_string(replay) + ")"});
            }
        }
        check.records += records;
        // only the run's own manifest sits at the top level
        if (expected && path.parent_path() == run_dir && records != *expected)
            check.issues.push_back({path, 0,
                                    "record count " + std::to_string(records) + " != expected " +
                                        std::to_string(*expected)});
    }
    return check;
}

} // namespace cxrcf
