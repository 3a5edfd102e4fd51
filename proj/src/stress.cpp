#include "cxrcf/stress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/parallel.hpp"
#include "cxrcf/core/stats.hpp"
#include "cxrcf/core/subprocess.hpp"

namespace cxrcf {
namespace fs = std::filesystem;

namespace {

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::string fmt_double(double v) {
    if (std::isnan(v)) return {};
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double parse_double(const std::string& s) {
    if (trim(s).empty()) return std::numeric_limits<double>::quiet_NaN();
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw ValidationError("not a number: '" + s + "'");
    }
}

Predictions parse_prediction_json(const std::string& text, const std::string& who) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(who + " returned invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(who + " must return a JSON object of probabilities");
    Predictions p;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number()) throw Error(who + " returned a non-numeric value for " + k);
        p[k] = v.get<double>();
    }
    return p;
}

std::map<std::string, AdapterFactory>& builtin_registry() {
    static std::map<std::string, AdapterFactory> r;
    return r;
}
std::mutex registry_mutex;

} // namespace

std::string to_string(Invocation i) {
    switch (i) {
    case Invocation::IN_PROCESS: return "IN_PROCESS";
    case Invocation::SUBPROCESS: return "SUBPROCESS";
    case Invocation::HTTP: return "HTTP";
    }
    return "?";
}

Invocation parse_invocation(const std::string& s) {
    const auto u = upper(s);
    if (u == "IN_PROCESS") return Invocation::IN_PROCESS;
    if (u == "SUBPROCESS") return Invocation::SUBPROCESS;
    if (u == "HTTP") return Invocation::HTTP;
    throw ConfigError("unknown adapter invocation '" + s + "'");
}

bool AdapterInfo::supports(const std::string& finding) const {
    return std::find(supported_findings.begin(), supported_findings.end(), finding) != supported_findings.end();
}

ConstantAdapter::ConstantAdapter(std::vector<std::string> findings, double value, std::string name) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ArgumentError("constant adapter value must lie in [0, 1]");
    info_.name = std::move(name);
    info_.supported_findings = std::move(findings);
}

Predictions ConstantAdapter::predict(const Image&) const {
    Predictions p;
    for (const auto& f : info_.supported_findings) p[f] = value_;
    return p;
}

Predictions FunctionAdapter::predict(const Image& image) const {
    const int r = info_.input_resolution;
    if (r > 0 && (image.width != r || image.height != r)) return fn_(resize(image, r, r));
    return fn_(image);
}

SubprocessAdapter::SubprocessAdapter(AdapterInfo info, std::string command, fs::path scratch_dir)
    : info_(std::move(info)), command_(std::move(command)), scratch_(std::move(scratch_dir)) {
    if (scratch_.empty()) scratch_ = fs::temp_directory_path() / "cxrcf-adapter";
    fs::create_directories(scratch_);
}

Predictions SubprocessAdapter::predict(const Image& image) const {
    const auto png = encode_png(info_.input_resolution > 0 ? resize(image, info_.input_resolution, info_.input_resolution)
                                                           : image);
    const fs::path path = scratch_ / (info_.name + "-" + sha256_hex(png).substr(0, 24) + ".png");
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    }
    const auto result = run_command(command_, {path.string()});
    std::error_code ec;
    fs::remove(path, ec);
    if (result.exit_code != 0)
        throw Error(info_.name + " adapter exited with status " + std::to_string(result.exit_code));
    return parse_prediction_json(result.output, info_.name + " adapter");
}

HttpAdapter::HttpAdapter(AdapterInfo info, std::string endpoint) : info_(std::move(info)) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) throw ConfigError("adapter endpoint needs a scheme: " + endpoint);
    if (endpoint.substr(0, scheme) != "http") throw ConfigError("only http:// endpoints are supported: " + endpoint);
    const auto slash = endpoint.find('/', scheme + 3);
    host_ = endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : endpoint.substr(slash);
}

Predictions HttpAdapter::predict(const Image& image) const {
    const auto png = encode_png(info_.input_resolution > 0 ? resize(image, info_.input_resolution, info_.input_resolution)
                                                           : image);
    httplib::Client client(host_);
    client.set_read_timeout(120, 0);
    auto res = client.Post(path_, reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
    if (!res) throw Error(info_.name + " adapter: request to " + host_ + path_ + " failed");
    if (res->status != 200)
        throw Error(info_.name + " adapter: HTTP " + std::to_string(res->status) + " from " + host_ + path_);
    return parse_prediction_json(res->body, info_.name + " adapter");
}

void check_predictions(const AdapterInfo& info, const Predictions& p, const std::vector<std::string>& findings) {
    for (const auto& f : findings) {
        auto it = p.find(f);
        if (it == p.end()) throw ValidationError(info.name + " returned no probability for " + f);
        if (!(it->second >= 0.0 && it->second <= 1.0))
            throw ValidationError(info.name + " returned probability " + fmt_double(it->second) + " for " + f);
    }
}

void register_builtin_adapter(const std::string& builtin, AdapterFactory factory) {
    std::lock_guard lock(registry_mutex);
    builtin_registry()[builtin] = std::move(factory);
}

std::unique_ptr<ClassifierAdapter> adapter_from_config(const KvConfig& config) {
    AdapterInfo info;
    info.name = config.require("name");
    std::istringstream list(config.require("findings"));
    for (std::string f; std::getline(list, f, ',');)
        if (auto t = trim(f); !t.empty()) info.supported_findings.push_back(t);
    if (info.supported_findings.empty()) throw ConfigError(info.name + ": adapter lists no findings");
    info.input_resolution = static_cast<int>(config.get_int("input_resolution", 224));
    info.invocation = parse_invocation(config.get_or("invocation", "IN_PROCESS"));
    info.citation = config.get_or("citation", "");

    switch (info.invocation) {
    case Invocation::SUBPROCESS:
        return std::make_unique<SubprocessAdapter>(info, config.require("command"),
                                                   config.get_or("scratch_dir", ""));
    case Invocation::HTTP: return std::make_unique<HttpAdapter>(info, config.require("endpoint"));
    case Invocation::IN_PROCESS: break;
    }
    const auto builtin = config.require("builtin");
    if (builtin == "constant")
        return std::make_unique<ConstantAdapter>(info.supported_findings, config.get_double("value", 0.5), info.name);
    AdapterFactory factory;
    {
        std::lock_guard lock(registry_mutex);
        auto it = builtin_registry().find(builtin);
        if (it == builtin_registry().end()) throw ConfigError("unknown in-process adapter '" + builtin + "'");
        factory = it->second;
    }
    return factory(config);
}

std::string to_string(PredictionSource s) {
    switch (s) {
    case PredictionSource::REFERENCE: return "reference";
    case PredictionSource::BASELINE: return "baseline";
    case PredictionSource::COUNTERFACTUAL: return "counterfactual";
    }
    return "?";
}

PredictionSource parse_prediction_source(const std::string& s) {
    const auto l = lower(s);
    if (l == "reference") return PredictionSource::REFERENCE;
    if (l == "baseline") return PredictionSource::BASELINE;
    if (l == "counterfactual") return PredictionSource::COUNTERFACTUAL;
    throw ValidationError("unknown prediction source '" + s + "'");
}

std::vector<double> ProbabilityTable::column(const std::string& finding) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows)
        if (auto it = r.probabilities.find(finding); it != r.probabilities.end()) out.push_back(it->second);
    return out;
}

void ProbabilityTable::write_csv(std::ostream& out) const {
    csv::write_row(out, {"scan_id", "finding", "probability", "adapter", "source", "added_pathology", "baseline_id"});
    for (const auto& r : rows)
        for (const auto& f : findings)
            csv::write_row(out, {r.item.scan_id, f, fmt_double(r.probabilities.at(f)), adapter,
                                 to_string(r.item.source), r.item.added_pathology, r.item.baseline_id});
}

ProbabilityTable ProbabilityTable::read_csv(std::istream& in) {
    auto table = csv::Table::read(in);
    table.require({"scan_id", "finding", "probability", "adapter", "source", "added_pathology"});
    const auto c_id = *table.column("scan_id"), c_f = *table.column("finding"), c_p = *table.column("probability"),
               c_a = *table.column("adapter"), c_s = *table.column("source"),
               c_add = *table.column("added_pathology");
    const auto c_base = table.column("baseline_id");
    ProbabilityTable t;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < table.rows().size(); ++i) {
        const auto& row = table.rows()[i];
        if (row.size() < table.header().size())
            throw ValidationError("line " + std::to_string(table.line_of(i)) + ": short row");
        if (t.adapter.empty()) t.adapter = row[c_a];
        if (std::find(t.findings.begin(), t.findings.end(), row[c_f]) == t.findings.end())
            t.findings.push_back(row[c_f]);
        auto [it, fresh] = index.emplace(row[c_id], t.rows.size());
        if (fresh) {
            PredictionRow r;
            r.item.scan_id = row[c_id];
            r.item.source = parse_prediction_source(row[c_s]);
            r.item.added_pathology = row[c_add];
            if (c_base) r.item.baseline_id = row[*c_base];
            t.rows.push_back(std::move(r));
        }
        t.rows[it->second].probabilities[row[c_f]] = parse_double(row[c_p]);
    }
    return t;
}

ProbabilityTable predict_cohort(const ClassifierAdapter& adapter, const std::vector<PredictItem>& items,
                                const std::vector<std::string>& findings, const ImageLoader& loader,
                                unsigned threads) {
    const auto& info = adapter.info();
    for (const auto& f : findings)
        if (!info.supports(f)) throw ArgumentError("adapter " + info.name + " does not support finding '" + f + "'");

    std::vector<std::optional<Predictions>> results(items.size());
    std::vector<std::string> errors(items.size());
    parallel_for(
        items.size(),
        [&](std::size_t i) {
            try {
                auto p = adapter.predict(loader(items[i].image_path));
                check_predictions(info, p, findings);
                Predictions kept;
                for (const auto& f : findings) kept[f] = p.at(f);
                results[i] = std::move(kept);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        },
        threads ? threads : default_threads());

    ProbabilityTable table;
    table.adapter = info.name;
    table.findings = findings;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (results[i]) {
            table.rows.push_back({items[i], std::move(*results[i])});
        } else {
            spdlog::warn("{}: prediction failed for {}: {}", info.name, items[i].scan_id, errors[i]);
            table.failures.emplace_back(items[i].scan_id, errors[i]);
        }
    }
    return table;
}

double to_percentile(double p, std::span<const double> reference) {
    if (reference.empty()) throw ArgumentError("percentile reference is empty");
    std::size_t less = 0, equal = 0;
    for (double r : reference) {
        less += r < p;
        equal += r == p;
    }
    return 100.0 * (static_cast<double>(less) + 0.5 * static_cast<double>(equal)) /
           static_cast<double>(reference.size());
}

PercentileReference::PercentileReference(std::vector<double> values) : sorted_(std::move(values)) {
    if (sorted_.empty()) throw ArgumentError("percentile reference is empty");
    for (double v : sorted_)
        if (std::isnan(v)) throw ArgumentError("percentile reference contains NaN");
    std::sort(sorted_.begin(), sorted_.end());
}

double PercentileReference::operator()(double p) const {
    const auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), p);
    const auto hi = std::upper_bound(lo, sorted_.end(), p);
    const auto less = static_cast<double>(lo - sorted_.begin());
    const auto equal = static_cast<double>(hi - lo);
    return 100.0 * (less + 0.5 * equal) / static_cast<double>(sorted_.size());
}

ReferenceSet build_reference(const ProbabilityTable& reference, const std::vector<std::string>& findings) {
    ReferenceSet out;
    for (const auto& f : findings) out.emplace(f, PercentileReference(reference.column(f)));
    return out;
}

double PercentileChangeMatrix::at(const std::string& row, const std::string& col) const {
    const auto r = std::find(row_keys.begin(), row_keys.end(), row);
    const auto c = std::find(col_keys.begin(), col_keys.end(), col);
    if (r == row_keys.end() || c == col_keys.end()) throw NotFoundError("no change-matrix cell " + row + "/" + col);
    return values[static_cast<std::size_t>(r - row_keys.begin())][static_cast<std::size_t>(c - col_keys.begin())];
}

void PercentileChangeMatrix::write_csv(std::ostream& out) const {
    csv::Row header{"added", "n", "excluded"};
    header.insert(header.end(), col_keys.begin(), col_keys.end());
    csv::write_row(out, header);
    for (std::size_t r = 0; r < row_keys.size(); ++r) {
        csv::Row row{row_keys[r], std::to_string(row_counts[r]), std::to_string(row_excluded[r])};
        for (double v : values[r]) row.push_back(fmt_double(v));
        csv::write_row(out, row);
    }
}

PercentileChangeMatrix PercentileChangeMatrix::read_csv(std::istream& in) {
    auto table = csv::Table::read(in);
    table.require({"added", "n", "excluded"});
    PercentileChangeMatrix m;
    m.col_keys.assign(table.header().begin() + 3, table.header().end());
    for (std::size_t i = 0; i < table.rows().size(); ++i) {
        const auto& row = table.rows()[i];
        if (row.size() != table.header().size())
            throw ValidationError("line " + std::to_string(table.line_of(i)) + ": wrong number of fields");
        m.row_keys.push_back(row[0]);
        m.row_counts.push_back(std::stoull(row[1]));
        m.row_excluded.push_back(std::stoull(row[2]));
        std::vector<double> v;
        for (std::size_t c = 3; c < row.size(); ++c) v.push_back(parse_double(row[c]));
        m.values.push_back(std::move(v));
    }
    return m;
}

namespace {

// (baseline id, pathology) -> counterfactual row, lowest scan id wins.
std::map<std::pair<std::string, std::string>, const PredictionRow*> index_counterfactuals(
    const ProbabilityTable& counterfactuals) {
    std::map<std::pair<std::string, std::string>, const PredictionRow*> out;
    for (const auto& r : counterfactuals.rows) {
        auto& slot = out[{r.item.baseline_id, r.item.added_pathology}];
        if (!slot || r.item.scan_id < slot->item.scan_id) slot = &r;
    }
    return out;
}

} // namespace

PercentileChangeMatrix compute_change_matrix(const ProbabilityTable& baselines, const ProbabilityTable& counterfactuals,
                                             const ReferenceSet& reference, const std::vector<std::string>& pathologies,
                                             const std::vector<std::string>& findings) {
    for (const auto& f : findings)
        if (!reference.count(f)) throw ArgumentError("no percentile reference for " + f);
    const auto cf = index_counterfactuals(counterfactuals);

    PercentileChangeMatrix m;
    m.row_keys = pathologies;
    m.col_keys = findings;
    for (const auto& p : pathologies) {
        std::vector<std::vector<double>> deltas(findings.size());
        std::size_t n = 0, excluded = 0;
        for (const auto& base : baselines.rows) {
            auto it = cf.find({base.item.scan_id, p});
            if (it == cf.end()) {
                ++excluded;
                continue;
            }
            ++n;
            for (std::size_t j = 0; j < findings.size(); ++j) {
                const auto& ref = reference.at(findings[j]);
                deltas[j].push_back(ref(it->second->probabilities.at(findings[j])) -
                                    ref(base.probabilities.at(findings[j])));
            }
        }
        std::vector<double> row;
        for (const auto& d : deltas) row.push_back(stats::median(d));
        m.values.push_back(std::move(row));
        m.row_counts.push_back(n);
        m.row_excluded.push_back(excluded);
        if (excluded) spdlog::info("change matrix: {} baselines lack a {} counterfactual", excluded, p);
    }
    return m;
}

std::vector<PredictItem> counterfactual_items(const Manifest& manifest, const fs::path& manifest_dir,
                                              const std::vector<std::string>& pathologies) {
    std::vector<PredictItem> out;
    for (const auto& r : manifest.records) {
        if (r.kind != RecordKind::EDIT || r.status != RecordStatus::OK) continue;
        if (std::find(pathologies.begin(), pathologies.end(), r.prompt.pathology_key) == pathologies.end()) continue;
        out.push_back({r.output_id, (manifest_dir / r.output_path).string(), PredictionSource::COUNTERFACTUAL,
                       r.prompt.pathology_key, r.source_scan_id});
    }
    return out;
}

StressRun change_matrix(const ClassifierAdapter& adapter, const std::vector<PredictItem>& baselines,
                        const Manifest& manifest, const fs::path& manifest_dir,
                        const std::vector<PredictItem>& reference, const std::vector<std::string>& pathologies,
                        const std::vector<std::string>& findings, const ImageLoader& loader, unsigned threads) {
    StressRun run;
    run.baselines = predict_cohort(adapter, baselines, findings, loader, threads);
    run.counterfactuals =
        predict_cohort(adapter, counterfactual_items(manifest, manifest_dir, pathologies), findings, loader, threads);
    if (reference.empty()) {
        run.reference = run.baselines;
    } else {
        run.reference = predict_cohort(adapter, reference, findings, loader, threads);
    }
    run.matrix = compute_change_matrix(run.baselines, run.counterfactuals, build_reference(run.reference, findings),
                                       pathologies, findings);
    return run;
}

std::vector<ProbabilityReferenceRow> probability_reference_report(const ProbabilityTable& baselines,
                                                                  const ProbabilityTable& counterfactuals,
                                                                  const CooccurrenceMatrix* cooccurrence,
                                                                  const std::vector<std::string>& pathologies,
                                                                  const std::vector<std::string>& findings) {
    const auto cf = index_counterfactuals(counterfactuals);
    std::vector<ProbabilityReferenceRow> out;
    for (const auto& p : pathologies) {
        for (const auto& f : findings) {
            std::vector<double> base, mod;
            for (const auto& b : baselines.rows) {
                auto it = cf.find({b.item.scan_id, p});
                if (it == cf.end()) continue;
                base.push_back(b.probabilities.at(f));
                mod.push_back(it->second->probabilities.at(f));
            }
            ProbabilityReferenceRow row{p, f, stats::median(base), stats::median(mod), base.size(), std::nullopt};
            if (cooccurrence) {
                try {
                    row.reader_cooccurrence = cooccurrence->at(p, f);
                } catch (const NotFoundError&) {
                }
            }
            out.push_back(row);
        }
    }
    return out;
}

void write_probability_reference_csv(const std::vector<ProbabilityReferenceRow>& rows, std::ostream& out) {
    csv::write_row(out, {"added", "predicted", "n", "baseline_median", "modified_median", "reader_cooccurrence"});
    for (const auto& r : rows)
        csv::write_row(out, {r.added, r.predicted, std::to_string(r.n), fmt_double(r.baseline_median),
                             fmt_double(r.modified_median),
                             r.reader_cooccurrence ? fmt_double(*r.reader_cooccurrence) : ""});
}

} // namespace cxrcf
