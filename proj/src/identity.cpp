#include "cxrcf/identity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/rng.hpp"
#include "cxrcf/core/stats.hpp"
#include "cxrcf/core/subprocess.hpp"

namespace cxrcf {
namespace fs = std::filesystem;

double pfid(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ArgumentError("pfid: embedding dimensions differ (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum;
}

ToyEmbedder::ToyEmbedder(std::size_t dimension, int grid, std::uint64_t seed) : dimension_(dimension), grid_(grid) {
    const std::size_t inputs = static_cast<std::size_t>(grid) * grid;
    const double scale = 1.0 / std::sqrt(static_cast<double>(inputs));
    Rng rng(seed);
    projection_.resize(dimension * inputs);
    for (auto& w : projection_) w = rng.bernoulli(0.5) ? scale : -scale;
}

std::vector<double> ToyEmbedder::embed(const Image& image) const {
    const Image small = downsample(image, grid_, grid_);
    const std::size_t inputs = small.pixels.size();
    std::vector<double> out(dimension_, 0.0);
    for (std::size_t d = 0; d < dimension_; ++d) {
        const double* row = &projection_[d * inputs];
        double s = 0.0;
        for (std::size_t i = 0; i < inputs; ++i) s += row[i] * small.pixels[i];
        out[d] = s;
    }
    return out;
}

CommandEmbedder::CommandEmbedder(EmbedderTag tag, std::string command, fs::path scratch_dir)
    : tag_(std::move(tag)), command_(std::move(command)), scratch_(std::move(scratch_dir)) {
    if (scratch_.empty()) scratch_ = fs::temp_directory_path() / "cxrcf-embed";
    fs::create_directories(scratch_);
}

std::vector<double> CommandEmbedder::embed(const Image& image) const {
    const auto png = encode_png(image);
    const fs::path path = scratch_ / (sha256_hex(png) + ".png");
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    }
    const auto result = run_command(command_, {path.string()});
    fs::remove(path);
    if (result.exit_code != 0)
        throw Error(tag_.name + " embedder exited with status " + std::to_string(result.exit_code));
    std::istringstream in(result.output);
    std::vector<double> v;
    double x = 0;
    while (in >> x) v.push_back(x);
    if (v.size() != tag_.dimension)
        throw Error(tag_.name + " embedder returned " + std::to_string(v.size()) + " values, expected " +
                    std::to_string(tag_.dimension));
    return v;
}

std::vector<double> EmbeddingCache::get_or_compute(const Embedder& embedder, const Image& image) {
    const auto tag = embedder.tag();
    std::string raw(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size() * sizeof(float));
    raw += "|" + std::to_string(image.width) + "x" + std::to_string(image.height);
    std::string name = tag.name;
    for (auto& c : name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    const fs::path path = dir_ / name / (sha256_hex(raw) + ".bin");
    {
        std::lock_guard lock(mutex_);
        std::ifstream in(path, std::ios::binary);
        if (in) {
            std::vector<double> v(tag.dimension);
            in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
            if (in.gcount() == static_cast<std::streamsize>(v.size() * sizeof(double))) {
                ++hits_;
                return v;
            }
        }
    }
    auto v = embedder.embed(image);
    std::lock_guard lock(mutex_);
    ++misses_;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    return v;
}

std::string to_string(PairKind k) {
    switch (k) {
    case PairKind::CONTROL: return "CONTROL";
    case PairKind::MODEL: return "MODEL";
    case PairKind::REAL: return "REAL";
    }
    return "?";
}

PairKind parse_pair_kind(const std::string& s) {
    std::string u;
    for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (u == "CONTROL") return PairKind::CONTROL;
    if (u == "MODEL") return PairKind::MODEL;
    if (u == "REAL") return PairKind::REAL;
    throw ArgumentError("unknown pairing kind '" + s + "'");
}

namespace {

struct Candidate {
    const LabeledScan* baseline;
    const LabeledScan* follow_up;
    double baseline_time;
    double gap;
    double follow_time;
};

bool positive_for(const LabeledScan& s, const std::string& condition) {
    auto v = study_label(s, condition);
    return v && v->positive();
}

bool no_finding(const LabeledScan& s) {
    return s.labels.has(std::string(findings::kNoFinding)) &&
           s.labels.get(std::string(findings::kNoFinding)).positive();
}

std::optional<Candidate> eligible(const LabeledScan& b, const LabeledScan& f, int max_years) {
    using namespace std::chrono;
    if (b.scan.study_date && f.scan.study_date) {
        const auto bd = sys_days(*b.scan.study_date);
        const auto fd = sys_days(*f.scan.study_date);
        if (fd <= bd) return std::nullopt;
        const auto limit = *b.scan.study_date + years{max_years};
        if (fd > sys_days(limit.ok() ? limit : year_month_day(limit.year() / limit.month() / last))) return std::nullopt;
        const double gap = static_cast<double>((fd - bd).count()) / 365.25;
        return Candidate{&b, &f, static_cast<double>(bd.time_since_epoch().count()), gap,
                         static_cast<double>(fd.time_since_epoch().count())};
    }
    if (b.scan.study_date || f.scan.study_date) return std::nullopt;
    if (!b.scan.follow_up || !f.scan.follow_up || !b.scan.age_years || !f.scan.age_years) return std::nullopt;
    if (*f.scan.follow_up <= *b.scan.follow_up) return std::nullopt;
    const double gap = *f.scan.age_years - *b.scan.age_years;
    if (gap < 0 || gap > max_years) return std::nullopt;
    return Candidate{&b, &f, static_cast<double>(*b.scan.follow_up), gap, static_cast<double>(*f.scan.follow_up)};
}

std::vector<ImagePair> real_pairs(const PairingInputs& in, const std::string& condition, std::uint64_t seed) {
    if (!in.scans) throw ArgumentError("REAL pairing needs labelled scans");
    std::map<std::string, std::vector<const LabeledScan*>> by_patient;
    for (const auto& s : *in.scans) by_patient[s.scan.patient_id].push_back(&s);
    std::vector<ImagePair> out;
    for (const auto& [patient, scans] : by_patient) {
        std::vector<Candidate> cands;
        for (const auto* b : scans) {
            if (!no_finding(*b)) continue;
            for (const auto* f : scans) {
                if (f == b || !positive_for(*f, condition)) continue;
                if (auto c = eligible(*b, *f, in.max_years)) cands.push_back(*c);
            }
        }
        if (cands.empty()) continue;
        std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
            return std::tie(x.baseline_time, x.gap, x.follow_time, x.baseline->scan.scan_id, x.follow_up->scan.scan_id) <
                   std::tie(y.baseline_time, y.gap, y.follow_time, y.baseline->scan.scan_id, y.follow_up->scan.scan_id);
        });
        Rng rng(stable_hash64({"real-pair", std::to_string(seed), patient, condition}));
        const auto& c = cands[rng.below(cands.size())];
        out.push_back({PairKind::REAL, condition, c.baseline->scan.scan_id, c.baseline->scan.image_path, patient,
                       c.follow_up->scan.scan_id, c.follow_up->scan.image_path, patient});
    }
    return out;
}

std::vector<ImagePair> model_pairs(const PairingInputs& in, const std::string& condition) {
    if (!in.manifest) throw ArgumentError("MODEL/CONTROL pairing needs a counterfactual manifest");
    std::map<std::string, const LabeledScan*> scan_by_id;
    if (in.scans)
        for (const auto& s : *in.scans) scan_by_id[s.scan.scan_id] = &s;
    std::map<std::string, const CounterfactualRecord*> baselines;
    for (const auto& r : in.manifest->records)
        if (r.kind == RecordKind::BASELINE && r.status == RecordStatus::OK) baselines[r.output_id] = &r;

    std::map<std::string, const CounterfactualRecord*> chosen;  // source -> lowest replicate edit
    for (const auto& r : in.manifest->records) {
        if (r.kind != RecordKind::EDIT || r.status != RecordStatus::OK || r.prompt.pathology_key != condition) continue;
        auto& slot = chosen[r.source_scan_id];
        if (!slot || r.replicate < slot->replicate) slot = &r;
    }
    std::vector<ImagePair> out;
    for (const auto& [source, rec] : chosen) {
        ImagePair p;
        p.kind = PairKind::MODEL;
        p.condition = condition;
        p.baseline_id = source;
        if (auto it = scan_by_id.find(source); it != scan_by_id.end()) {
            p.baseline_path = it->second->scan.image_path;
            p.baseline_patient = it->second->scan.patient_id;
        } else if (auto b = baselines.find(source); b != baselines.end()) {
            p.baseline_path = (in.manifest_dir / b->second->output_path).string();
            p.baseline_patient = source;
        } else {
            spdlog::warn("counterfactual {} has unknown source scan {}; pair dropped", rec->output_id, source);
            continue;
        }
        p.comparison_id = rec->output_id;
        p.comparison_path = (in.manifest_dir / rec->output_path).string();
        p.comparison_patient = p.baseline_patient;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<ImagePair> control_pairs(std::vector<ImagePair> model, const std::string& condition, std::uint64_t seed) {
    std::set<std::string> patients;
    for (const auto& p : model) patients.insert(p.baseline_patient);
    if (patients.size() < 2) return {};
    Rng rng(stable_hash64({"control-derangement", std::to_string(seed), condition}));
    const std::size_t n = model.size();
    std::vector<std::size_t> perm(n);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        // Sattolo: a uniformly random single cycle, so no index maps to itself.
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i)]);
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) ok = model[perm[i]].comparison_patient != model[i].baseline_patient;
        if (!ok) continue;
        std::vector<ImagePair> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            ImagePair p = model[i];
            p.kind = PairKind::CONTROL;
            p.comparison_id = model[perm[i]].comparison_id;
            p.comparison_path = model[perm[i]].comparison_path;
            p.comparison_patient = model[perm[i]].comparison_patient;
            out.push_back(std::move(p));
        }
        return out;
    }
    throw ArgumentError("could not build a cross-patient control pairing for " + condition);
}

} // namespace

std::vector<ImagePair> build_pairings(const PairingInputs& inputs, const std::string& condition, PairKind kind,
                                      std::uint64_t seed) {
    std::vector<ImagePair> out;
    switch (kind) {
    case PairKind::REAL: out = real_pairs(inputs, condition, seed); break;
    case PairKind::MODEL: out = model_pairs(inputs, condition); break;
    case PairKind::CONTROL: out = control_pairs(model_pairs(inputs, condition), condition, seed); break;
    }
    if (out.empty()) spdlog::warn("no eligible {} pairs for {}", to_string(kind), condition);
    return out;
}

ScoringResult score_pairings(const std::vector<ImagePair>& pairs, const Embedder& embedder, const ImageLoader& loader,
                             EmbeddingCache* cache) {
    ScoringResult result;
    const auto tag = embedder.tag();
    std::map<std::pair<PairKind, std::string>, std::vector<double>> groups;
    std::map<std::pair<PairKind, std::string>, std::size_t> skipped;
    auto embed = [&](const std::string& path) {
        const Image img = loader(path);
        return cache ? cache->get_or_compute(embedder, img) : embedder.embed(img);
    };
    for (const auto& p : pairs) {
        const auto key = std::make_pair(p.kind, p.condition);
        groups[key];
        try {
            const auto a = embed(p.baseline_path);
            const auto b = embed(p.comparison_path);
            const double v = pfid(a, b);
            result.scores.push_back({p.kind, p.condition, p.baseline_id, p.comparison_id, tag, v});
            groups[key].push_back(v);
        } catch (const std::exception& e) {
            spdlog::warn("pair ({}, {}) skipped: {}", p.baseline_id, p.comparison_id, e.what());
            ++skipped[key];
        }
    }
    for (const auto& [key, values] : groups) {
        ScoreSummary s;
        s.kind = key.first;
        s.condition = key.second;
        s.embedder = tag.name;
        s.median = stats::median(values);
        s.iqr = stats::iqr(values);
        s.n = values.size();
        s.skipped = skipped[key];
        result.summaries.push_back(s);
    }
    return result;
}

void write_pair_scores_csv(const std::vector<PairScore>& scores, std::ostream& out) {
    csv::write_row(out, {"kind", "condition", "embedder", "baseline_id", "comparison_id", "pfid"});
    for (const auto& s : scores) {
        std::ostringstream v;
        v.precision(17);
        v << s.value;
        csv::write_row(out, {to_string(s.kind), s.condition, s.embedder.name, s.baseline_id, s.comparison_id, v.str()});
    }
}

void write_summary_table(const std::vector<ScoreSummary>& summaries, std::ostream& out) {
    std::vector<std::string> conditions;
    std::map<std::string, std::size_t> n_by_condition;
    for (const auto& key : findings::study())
        for (const auto& s : summaries)
            if (s.condition == key && std::find(conditions.begin(), conditions.end(), key) == conditions.end())
                conditions.push_back(key);
    for (const auto& s : summaries)
        if (std::find(conditions.begin(), conditions.end(), s.condition) == conditions.end())
            conditions.push_back(s.condition);
    for (const auto& s : summaries) n_by_condition[s.condition] = std::max(n_by_condition[s.condition], s.n);

    csv::Row header{"embedder", "score"};
    for (const auto& c : conditions) header.push_back(findings::display_name(c) + " N=" + std::to_string(n_by_condition[c]));
    csv::write_row(out, header);

    std::vector<std::string> embedders;
    for (const auto& s : summaries)
        if (std::find(embedders.begin(), embedders.end(), s.embedder) == embedders.end()) embedders.push_back(s.embedder);
    for (const auto& e : embedders) {
        for (auto kind : {PairKind::CONTROL, PairKind::REAL, PairKind::MODEL}) {
            csv::Row row{e, to_string(kind)};
            bool any = false;
            for (const auto& c : conditions) {
                std::string cell;
                for (const auto& s : summaries)
                    if (s.embedder == e && s.kind == kind && s.condition == c && s.n > 0) {
                        std::ostringstream os;
                        os << std::setprecision(6) << s.median << " (" << s.iqr << ")";
                        cell = os.str();
                        any = true;
                    }
                row.push_back(cell);
            }
            if (any) csv::write_row(out, row);
        }
    }
}

} // namespace cxrcf
