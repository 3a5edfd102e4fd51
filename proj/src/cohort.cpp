#include "cxrcf/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/jsonl.hpp"
#include "cxrcf/core/rng.hpp"

namespace cxrcf {
namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

const std::vector<std::string> kNihFindings{
    "atelectasis", "consolidation", "infiltration", "pneumothorax", "edema",       "emphysema", "fibrosis",
    "pleural_effusion", "pneumonia", "pleural_thickening", "cardiomegaly", "nodule", "mass", "hernia",
};

// Label columns shared by MIMIC-CXR (CheXpert labeler output) and CheXpert.
const std::vector<std::pair<std::string, std::string>> kChexpertColumns{
    {"No Finding", "no_finding"},
    {"Atelectasis", "atelectasis"},
    {"Consolidation", "consolidation"},
    {"Pneumothorax", "pneumothorax"},
    {"Edema", "edema"},
    {"Pleural Effusion", "pleural_effusion"},
    {"Pneumonia", "pneumonia"},
    {"Pleural Other", "pleural_other"},
    {"Cardiomegaly", "cardiomegaly"},
    {"Lung Lesion", "lung_lesion"},
    {"Lung Opacity", "lung_opacity"},
    {"Enlarged Cardiomediastinum", "enlarged_cardiomediastinum"},
    {"Fracture", "fracture"},
    {"Support Devices", "support_devices"},
};

const std::map<std::string, std::string> kNihLabelNames{
    {"Atelectasis", "atelectasis"},   {"Consolidation", "consolidation"},
    {"Infiltration", "infiltration"}, {"Pneumothorax", "pneumothorax"},
    {"Edema", "edema"},               {"Emphysema", "emphysema"},
    {"Fibrosis", "fibrosis"},         {"Effusion", "pleural_effusion"},
    {"Pneumonia", "pneumonia"},       {"Pleural_Thickening", "pleural_thickening"},
    {"Cardiomegaly", "cardiomegaly"}, {"Nodule", "nodule"},
    {"Mass", "mass"},                 {"Hernia", "hernia"},
};

// PadChest curator labels collapsed onto the study findings. This is a
// documented choice and is echoed in the ingest notes.
const std::map<std::string, std::string> kPadchestAliases{
    {"normal", "no_finding"},
    {"cardiomegaly", "cardiomegaly"},
    {"pulmonary edema", "edema"},
    {"edema", "edema"},
    {"pleural effusion", "pleural_effusion"},
    {"pneumonia", "pneumonia"},
    {"hiatal hernia", "hernia"},
    {"hernia", "hernia"},
    {"mass", "mass"},
    {"pulmonary mass", "mass"},
    {"lung mass", "mass"},
};

const std::set<std::string> kNonPathology{"no_finding", "support_devices"};

std::shared_ptr<const LabelVocabulary> build_vocab(Cohort c) {
    auto v = std::make_shared<LabelVocabulary>();
    v->cohort = c;
    switch (c) {
    case Cohort::NIH:
        v->findings = kNihFindings;
        v->findings.emplace_back(findings::kNoFinding);
        break;
    case Cohort::MIMIC:
    case Cohort::CHEXPERT:
        for (const auto& [col, key] : kChexpertColumns) v->findings.push_back(key);
        break;
    case Cohort::PADCHEST:
    case Cohort::SYNTHETIC:
        v->findings.emplace_back(findings::kNoFinding);
        for (const auto& f : findings::study()) v->findings.push_back(f);
        break;
    }
    return v;
}

std::optional<double> parse_number(const std::string& raw) {
    const std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ValidationError("not a number: '" + s + "'");
    }
    if (used != s.size() || !std::isfinite(v)) throw ValidationError("not a number: '" + s + "'");
    return v;
}

// NIH ages look like "58" or "058Y".
std::optional<double> parse_age(const std::string& raw) {
    std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    if (s.back() == 'Y' || s.back() == 'y') s.pop_back();
    auto v = parse_number(s);
    if (v && *v < 0) throw ValidationError("negative age '" + raw + "'");
    return v;
}

Sex parse_sex(const std::string& raw) {
    const std::string s = lower(trim(raw));
    if (s == "f" || s == "female") return Sex::F;
    if (s == "m" || s == "male") return Sex::M;
    return Sex::UNKNOWN;
}

View parse_view(const std::string& raw) {
    const std::string s = lower(trim(raw));
    if (s == "pa") return View::PA;
    if (s == "ap" || s == "ap_horizontal" || s == "ap axial") return View::AP;
    return View::OTHER;
}

// CheXpert labeler values: 1 positive, 0 negative, -1 uncertain, blank unmentioned.
LabelValue chexpert_value(const std::string& raw) {
    auto v = parse_number(raw);
    if (!v || *v == 0.0) return LabelValue::of(0.0);
    if (*v == 1.0) return LabelValue::of(1.0);
    if (*v == -1.0) return LabelValue::unsure();
    throw ValidationError("unexpected label value '" + raw + "'");
}

std::filesystem::path resolve_image(const IngestOptions& opt, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_relative() && !opt.image_root.empty()) p = opt.image_root / p;
    return p;
}

// Resolves no_finding=1 alongside a positive pathology in favour of the pathology.
bool reconcile_no_finding(LabelVector& labels) {
    if (!labels.has(std::string(findings::kNoFinding))) return false;
    if (!labels.get(std::string(findings::kNoFinding)).positive()) return false;
    const auto& keys = labels.vocabulary->findings;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (kNonPathology.count(keys[i])) continue;
        if (labels.values[i].positive()) {
            labels.set(std::string(findings::kNoFinding), LabelValue::of(0.0));
            return true;
        }
    }
    return false;
}

struct RowContext {
    const csv::Table& table;
    const csv::Row& row;
    std::string cell(const std::string& name) const {
        auto c = table.column(name);
        if (!c || *c >= row.size()) return {};
        return row[*c];
    }
};

void ingest_nih(const csv::Table& table, const IngestOptions&, IngestResult& out,
                const std::shared_ptr<const LabelVocabulary>& vocab, std::vector<std::pair<std::size_t, ScanRecord>>& scans,
                std::vector<LabelVector>& labels) {
    table.require({"Image Index", "Finding Labels", "Follow-up #", "Patient ID", "Patient Age", "Patient Gender",
                   "View Position"});
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        RowContext ctx{table, table.rows()[r]};
        ScanRecord s;
        s.cohort = Cohort::NIH;
        s.scan_id = trim(ctx.cell("Image Index"));
        s.patient_id = trim(ctx.cell("Patient ID"));
        s.view = parse_view(ctx.cell("View Position"));
        s.sex = parse_sex(ctx.cell("Patient Gender"));
        s.image_path = s.scan_id;
        LabelVector lv(vocab);
        try {
            s.age_years = parse_age(ctx.cell("Patient Age"));
            if (auto fu = parse_number(ctx.cell("Follow-up #"))) s.follow_up = static_cast<int>(*fu);
            std::stringstream ss(ctx.cell("Finding Labels"));
            std::string item;
            bool any = false;
            while (std::getline(ss, item, '|')) {
                item = trim(item);
                if (item.empty()) continue;
                if (item == "No Finding") {
                    lv.set(std::string(findings::kNoFinding), LabelValue::of(1.0));
                    continue;
                }
                auto it = kNihLabelNames.find(item);
                if (it == kNihLabelNames.end()) throw ValidationError("unknown finding label '" + item + "'");
                lv.set(it->second, LabelValue::of(1.0));
                any = true;
            }
            if (!any) lv.set(std::string(findings::kNoFinding), LabelValue::of(1.0));
        } catch (const ValidationError& e) {
            out.skipped.push_back({table.line_of(r), e.what()});
            continue;
        }
        scans.emplace_back(r, std::move(s));
        labels.push_back(std::move(lv));
    }
}

void read_chexpert_labels(const RowContext& ctx, LabelVector& lv) {
    for (const auto& [col, key] : kChexpertColumns) lv.set(key, chexpert_value(ctx.cell(col)));
}

std::vector<std::string> chexpert_label_columns() {
    std::vector<std::string> cols;
    for (const auto& [col, key] : kChexpertColumns) cols.push_back(col);
    return cols;
}

void ingest_mimic(const csv::Table& table, IngestResult& out, const std::shared_ptr<const LabelVocabulary>& vocab,
                  std::vector<std::pair<std::size_t, ScanRecord>>& scans, std::vector<LabelVector>& labels) {
    auto required = chexpert_label_columns();
    required.insert(required.end(), {"dicom_id", "subject_id", "study_id", "ViewPosition"});
    table.require(required);
    const bool has_anchor = table.column("anchor_age").has_value();
    if (!has_anchor && !table.column("age")) throw SchemaError("missing required columns: anchor_age (or age)");
    const bool can_shift = has_anchor && table.column("anchor_year") && table.column("StudyDate");
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        RowContext ctx{table, table.rows()[r]};
        ScanRecord s;
        s.cohort = Cohort::MIMIC;
        s.scan_id = trim(ctx.cell("dicom_id"));
        s.patient_id = trim(ctx.cell("subject_id"));
        s.view = parse_view(ctx.cell("ViewPosition"));
        s.sex = parse_sex(ctx.cell("gender"));
        s.image_path = trim(ctx.cell("path"));
        if (s.image_path.empty()) s.image_path = s.scan_id + ".jpg";
        LabelVector lv(vocab);
        try {
            const std::string date_raw = trim(ctx.cell("StudyDate"));
            if (!date_raw.empty()) {
                std::string digits = date_raw.substr(0, date_raw.find('.'));
                s.study_date = parse_date(digits);
                if (!s.study_date) throw ValidationError("unparseable study date '" + date_raw + "'");
            }
            s.age_years = parse_age(ctx.cell(has_anchor ? "anchor_age" : "age"));
            // anchor_age is the age in anchor_year; shift it to the study year.
            if (can_shift && s.age_years && s.study_date) {
                if (auto anchor_year = parse_number(ctx.cell("anchor_year")))
                    *s.age_years += static_cast<int>(s.study_date->year()) - *anchor_year;
            }
            read_chexpert_labels(ctx, lv);
        } catch (const ValidationError& e) {
            out.skipped.push_back({table.line_of(r), e.what()});
            continue;
        }
        scans.emplace_back(r, std::move(s));
        labels.push_back(std::move(lv));
    }
}

std::string chexpert_patient(const std::string& path) {
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '/'))
        if (part.rfind("patient", 0) == 0) return part;
    throw ValidationError("no patient segment in path '" + path + "'");
}

void ingest_chexpert(const csv::Table& table, IngestResult& out, const std::shared_ptr<const LabelVocabulary>& vocab,
                     std::vector<std::pair<std::size_t, ScanRecord>>& scans, std::vector<LabelVector>& labels) {
    auto required = chexpert_label_columns();
    required.insert(required.end(), {"Path", "Sex", "Age", "Frontal/Lateral", "AP/PA"});
    table.require(required);
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        RowContext ctx{table, table.rows()[r]};
        ScanRecord s;
        s.cohort = Cohort::CHEXPERT;
        s.scan_id = trim(ctx.cell("Path"));
        s.image_path = s.scan_id;
        s.sex = parse_sex(ctx.cell("Sex"));
        s.view = lower(trim(ctx.cell("Frontal/Lateral"))) == "frontal" ? parse_view(ctx.cell("AP/PA")) : View::OTHER;
        LabelVector lv(vocab);
        try {
            s.patient_id = chexpert_patient(s.scan_id);
            s.age_years = parse_age(ctx.cell("Age"));
            read_chexpert_labels(ctx, lv);
        } catch (const ValidationError& e) {
            out.skipped.push_back({table.line_of(r), e.what()});
            continue;
        }
        scans.emplace_back(r, std::move(s));
        labels.push_back(std::move(lv));
    }
}

// "['pleural effusion', 'cardiomegaly']" -> {"pleural effusion", "cardiomegaly"}
std::vector<std::string> split_padchest_labels(const std::string& raw) {
    std::string s = trim(raw);
    if (!s.empty() && s.front() == '[') s.erase(s.begin());
    if (!s.empty() && s.back() == ']') s.pop_back();
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        while (!item.empty() && (item.front() == '\'' || item.front() == '"')) item.erase(item.begin());
        while (!item.empty() && (item.back() == '\'' || item.back() == '"')) item.pop_back();
        item = lower(trim(item));
        if (!item.empty() && item != "nan") out.push_back(item);
    }
    return out;
}

void ingest_padchest(const csv::Table& table, IngestResult& out, const std::shared_ptr<const LabelVocabulary>& vocab,
                     std::vector<std::pair<std::size_t, ScanRecord>>& scans, std::vector<LabelVector>& labels) {
    table.require({"ImageID", "PatientID", "Projection", "PatientBirth", "StudyDate_DICOM", "PatientSex_DICOM",
                   "Labels"});
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        RowContext ctx{table, table.rows()[r]};
        ScanRecord s;
        s.cohort = Cohort::PADCHEST;
        s.scan_id = trim(ctx.cell("ImageID"));
        s.patient_id = trim(ctx.cell("PatientID"));
        s.view = parse_view(ctx.cell("Projection"));
        s.sex = parse_sex(ctx.cell("PatientSex_DICOM"));
        const std::string dir = trim(ctx.cell("ImageDir"));
        s.image_path = dir.empty() ? s.scan_id : dir + "/" + s.scan_id;
        LabelVector lv(vocab);
        try {
            const std::string date_raw = trim(ctx.cell("StudyDate_DICOM"));
            if (!date_raw.empty()) {
                s.study_date = parse_date(date_raw.substr(0, date_raw.find('.')));
                if (!s.study_date) throw ValidationError("unparseable study date '" + date_raw + "'");
            }
            if (auto birth = parse_number(ctx.cell("PatientBirth")); birth && s.study_date) {
                const double age = static_cast<int>(s.study_date->year()) - *birth;
                if (age < 0) throw ValidationError("birth year after study date");
                s.age_years = age;
            }
            for (const auto& label : split_padchest_labels(ctx.cell("Labels"))) {
                auto it = kPadchestAliases.find(label);
                if (it != kPadchestAliases.end()) lv.set(it->second, LabelValue::of(1.0));
            }
        } catch (const ValidationError& e) {
            out.skipped.push_back({table.line_of(r), e.what()});
            continue;
        }
        scans.emplace_back(r, std::move(s));
        labels.push_back(std::move(lv));
    }
}

} // namespace

std::string to_string(Cohort c) {
    switch (c) {
    case Cohort::NIH: return "NIH";
    case Cohort::MIMIC: return "MIMIC";
    case Cohort::CHEXPERT: return "CHEXPERT";
    case Cohort::PADCHEST: return "PADCHEST";
    case Cohort::SYNTHETIC: return "SYNTHETIC";
    }
    return "?";
}

std::string to_string(View v) {
    switch (v) {
    case View::PA: return "PA";
    case View::AP: return "AP";
    case View::OTHER: return "OTHER";
    }
    return "?";
}

std::string to_string(Sex s) {
    switch (s) {
    case Sex::F: return "F";
    case Sex::M: return "M";
    case Sex::UNKNOWN: return "UNKNOWN";
    }
    return "?";
}

std::string to_string(Split s) {
    switch (s) {
    case Split::TRAIN: return "TRAIN";
    case Split::VAL: return "VAL";
    case Split::TEST: return "TEST";
    }
    return "?";
}

Cohort parse_cohort(const std::string& name) {
    const std::string n = lower(name);
    if (n == "nih") return Cohort::NIH;
    if (n == "mimic") return Cohort::MIMIC;
    if (n == "chexpert") return Cohort::CHEXPERT;
    if (n == "padchest") return Cohort::PADCHEST;
    if (n == "synthetic") return Cohort::SYNTHETIC;
    throw ArgumentError("unknown cohort '" + name + "'");
}

Split parse_split(const std::string& name) {
    const std::string n = lower(name);
    if (n == "train") return Split::TRAIN;
    if (n == "val") return Split::VAL;
    if (n == "test") return Split::TEST;
    throw ArgumentError("unknown split '" + name + "'");
}

std::optional<Date> parse_date(const std::string& text) {
    const std::string s = trim(text);
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (s.size() == 10 && std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) == 3) {
    } else if (s.size() == 8 && std::all_of(s.begin(), s.end(), ::isdigit)) {
        y = std::stoi(s.substr(0, 4));
        m = static_cast<unsigned>(std::stoi(s.substr(4, 2)));
        d = static_cast<unsigned>(std::stoi(s.substr(6, 2)));
    } else {
        return std::nullopt;
    }
    Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) return std::nullopt;
    return date;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                  static_cast<unsigned>(d.day()));
    return buf;
}

std::optional<std::size_t> LabelVocabulary::index_of(const std::string& key) const {
    auto it = std::find(findings.begin(), findings.end(), key);
    if (it == findings.end()) return std::nullopt;
    return static_cast<std::size_t>(it - findings.begin());
}

bool LabelVocabulary::has_no_finding() const { return index_of(std::string(findings::kNoFinding)).has_value(); }

std::shared_ptr<const LabelVocabulary> vocabulary(Cohort cohort) {
    static const std::map<Cohort, std::shared_ptr<const LabelVocabulary>> table = [] {
        std::map<Cohort, std::shared_ptr<const LabelVocabulary>> t;
        for (auto c : {Cohort::NIH, Cohort::MIMIC, Cohort::CHEXPERT, Cohort::PADCHEST, Cohort::SYNTHETIC})
            t[c] = build_vocab(c);
        return t;
    }();
    return table.at(cohort);
}

std::shared_ptr<const LabelVocabulary> make_vocabulary(std::vector<std::string> keys, Cohort cohort) {
    auto v = std::make_shared<LabelVocabulary>();
    v->cohort = cohort;
    v->findings = std::move(keys);
    return v;
}

LabelValue LabelValue::of(double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("label value outside [0, 1]");
    return LabelValue(State::Value, v);
}

LabelVector::LabelVector(std::shared_ptr<const LabelVocabulary> vocab)
    : vocabulary(std::move(vocab)), values(vocabulary->findings.size(), LabelValue::of(0.0)) {}

LabelValue LabelVector::get(const std::string& key) const {
    auto i = vocabulary->index_of(key);
    if (!i) throw NotFoundError("label vocabulary has no finding '" + key + "'");
    return values[*i];
}

void LabelVector::set(const std::string& key, LabelValue v) {
    auto i = vocabulary->index_of(key);
    if (!i) throw NotFoundError("label vocabulary has no finding '" + key + "'");
    values[*i] = v;
}

bool LabelVector::has(const std::string& key) const { return vocabulary && vocabulary->index_of(key).has_value(); }

LabelVector uncertain_to_negative(LabelVector labels) {
    for (auto& v : labels.values)
        if (v.is_unsure()) v = LabelValue::of(0.0);
    return labels;
}

IngestResult ingest_cohort(std::istream& metadata, Cohort cohort, const IngestOptions& options) {
    if (cohort == Cohort::SYNTHETIC)
        throw ArgumentError("synthetic records come from generation manifests, not metadata CSVs");
    const auto table = csv::Table::read(metadata);
    IngestResult out;
    out.rows_read = table.rows().size();
    const auto vocab = vocabulary(cohort);
    std::vector<std::pair<std::size_t, ScanRecord>> scans;
    std::vector<LabelVector> labels;
    if (table.header().empty()) throw SchemaError("metadata file has no header row");
    switch (cohort) {
    case Cohort::NIH: ingest_nih(table, options, out, vocab, scans, labels); break;
    case Cohort::MIMIC: ingest_mimic(table, out, vocab, scans, labels); break;
    case Cohort::CHEXPERT: ingest_chexpert(table, out, vocab, scans, labels); break;
    case Cohort::PADCHEST:
        ingest_padchest(table, out, vocab, scans, labels);
        out.notes.push_back(
            "PadChest labels collapsed with alias map padchest-v1: normal->no_finding, cardiomegaly, "
            "pulmonary edema|edema->edema, pleural effusion, pneumonia, hiatal hernia|hernia->hernia, "
            "mass|pulmonary mass|lung mass->mass");
        break;
    case Cohort::SYNTHETIC: break;
    }

    std::set<std::string> seen;
    std::size_t reconciled = 0;
    for (std::size_t i = 0; i < scans.size(); ++i) {
        auto& [row, scan] = scans[i];
        const std::size_t line = table.line_of(row);
        if (scan.scan_id.empty() || scan.patient_id.empty()) {
            out.skipped.push_back({line, "empty scan or patient id"});
            continue;
        }
        if (!seen.insert(scan.scan_id).second) {
            out.skipped.push_back({line, "duplicate scan id " + scan.scan_id});
            continue;
        }
        const auto path = resolve_image(options, scan.image_path);
        if (options.verify_images && !std::filesystem::exists(path)) {
            out.skipped.push_back({line, "image not found: " + path.string()});
            continue;
        }
        scan.image_path = path.string();
        LabelVector lv = uncertain_to_negative(std::move(labels[i]));
        if (reconcile_no_finding(lv)) ++reconciled;
        out.records.push_back({std::move(scan), std::move(lv)});
    }
    if (reconciled)
        out.notes.push_back(std::to_string(reconciled) +
                            " rows had no_finding=1 alongside a positive pathology; no_finding cleared");
    for (const auto& s : out.skipped) spdlog::warn("{} metadata line {} skipped: {}", to_string(cohort), s.line, s.reason);
    return out;
}

IngestResult ingest_cohort(const std::filesystem::path& metadata_file, Cohort cohort, const IngestOptions& options) {
    std::ifstream in(metadata_file, std::ios::binary);
    if (!in) throw NotFoundError("cannot open metadata file " + metadata_file.string());
    return ingest_cohort(in, cohort, options);
}

FilterResult apply_inclusion_filter(const std::vector<LabeledScan>& records, Cohort cohort) {
    FilterResult out;
    out.report.input = records.size();
    std::set<std::string> patients;
    for (const auto& r : records) {
        if (cohort != Cohort::SYNTHETIC) {
            const bool pa_only = cohort == Cohort::NIH || cohort == Cohort::CHEXPERT;
            const bool view_ok = r.scan.view == View::PA || (!pa_only && r.scan.view == View::AP);
            if (!view_ok) {
                ++out.report.dropped_view;
                continue;
            }
            if (!r.scan.age_years) {
                ++out.report.dropped_missing_age;
                continue;
            }
            if (*r.scan.age_years < 18.0) {
                ++out.report.dropped_age;
                continue;
            }
        }
        patients.insert(r.scan.patient_id);
        out.records.push_back(r);
    }
    out.report.kept = out.records.size();
    out.report.patients = patients.size();
    return out;
}

std::vector<LabeledScan> select_no_finding(const std::vector<LabeledScan>& records) {
    const std::string key(findings::kNoFinding);
    std::vector<LabeledScan> out;
    for (const auto& r : records) {
        if (!r.labels.vocabulary || !r.labels.vocabulary->has_no_finding())
            throw ConfigError("label vocabulary for " + to_string(r.scan.cohort) + " has no no_finding entry");
        if (uncertain_to_negative(r.labels).get(key).positive()) out.push_back(r);
    }
    return out;
}

std::vector<LabeledScan> sample_records(const std::vector<LabeledScan>& records, std::size_t n, std::uint64_t seed) {
    if (n > records.size())
        throw ArgumentError("cannot sample " + std::to_string(n) + " of " + std::to_string(records.size()) + " records");
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledScan> out;
    out.reserve(n);
    for (auto i : idx) out.push_back(records[i]);
    return out;
}

CooccurrenceMatrix real_cooccurrence(const std::vector<LabeledScan>& records, std::vector<std::string> keys) {
    if (keys.empty() && !records.empty()) {
        for (const auto& k : records.front().labels.vocabulary->findings)
            if (k != findings::kNoFinding) keys.push_back(k);
    }
    const std::size_t n = keys.size();
    std::vector<std::vector<std::size_t>> both(n, std::vector<std::size_t>(n, 0));
    std::vector<std::size_t> count(n, 0);
    std::vector<char> pos(n);
    for (const auto& r : records) {
        for (std::size_t a = 0; a < n; ++a) pos[a] = r.labels.has(keys[a]) && r.labels.get(keys[a]).positive();
        for (std::size_t a = 0; a < n; ++a) {
            if (!pos[a]) continue;
            ++count[a];
            for (std::size_t b = 0; b < n; ++b)
                if (pos[b]) ++both[a][b];
        }
    }
    CooccurrenceMatrix m;
    m.row_keys = keys;
    m.col_keys = keys;
    m.row_counts = count;
    m.note = "real label co-occurrence; rows condition on the row finding being positive";
    for (std::size_t a = 0; a < n; ++a) {
        std::vector<double> row(n, std::numeric_limits<double>::quiet_NaN());
        if (count[a] > 0)
            for (std::size_t b = 0; b < n; ++b)
                row[b] = static_cast<double>(both[a][b]) / static_cast<double>(count[a]);
        m.fractions.push_back(std::move(row));
        m.cell_counts.emplace_back(n, count[a]);
    }
    return m;
}

std::optional<std::string> study_alias(Cohort cohort, const std::string& study_key) {
    switch (cohort) {
    case Cohort::MIMIC:
    case Cohort::CHEXPERT:
        if (study_key == findings::kHernia) return std::nullopt;
        if (study_key == findings::kMass) return std::string("lung_lesion");
        break;
    default: break;
    }
    if (!vocabulary(cohort)->index_of(study_key)) return std::nullopt;
    return study_key;
}

std::optional<LabelValue> study_label(const LabeledScan& record, const std::string& study_key) {
    const Cohort c = record.labels.vocabulary ? record.labels.vocabulary->cohort : record.scan.cohort;
    auto alias = study_alias(c, study_key);
    if (!alias || !record.labels.has(*alias)) return std::nullopt;
    return record.labels.get(*alias);
}

Split SplitResult::split_of(const std::string& patient_id) const {
    auto it = std::lower_bound(assignments.begin(), assignments.end(), patient_id,
                               [](const SplitAssignment& a, const std::string& p) { return a.patient_id < p; });
    if (it == assignments.end() || it->patient_id != patient_id)
        throw NotFoundError("patient " + patient_id + " has no split assignment");
    return it->split;
}

SplitResult make_split(const std::vector<LabeledScan>& records, std::size_t n_train_patients, std::uint64_t seed) {
    std::map<std::string, std::size_t> scans_per_patient;
    for (const auto& r : records) ++scans_per_patient[r.scan.patient_id];
    if (n_train_patients > scans_per_patient.size())
        throw ArgumentError("requested " + std::to_string(n_train_patients) + " training patients but only " +
                            std::to_string(scans_per_patient.size()) + " exist");
    std::vector<std::string> patients;
    for (const auto& [p, n] : scans_per_patient) patients.push_back(p);
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(patients));
    std::set<std::string> train(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_train_patients));

    SplitResult out;
    for (const auto& [p, n] : scans_per_patient) {
        const Split s = train.count(p) ? Split::TRAIN : Split::TEST;
        out.assignments.push_back({p, s, seed});
        out.scans[s] += n;
        out.patients[s] += 1;
    }
    return out;
}

SplitResult carve_validation(SplitResult split, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < split.assignments.size(); ++i)
        if (split.assignments[i].split == Split::TRAIN) train.push_back(i);
    auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
    if (fraction > 0 && n_val == 0 && train.size() >= 2) n_val = 1;
    n_val = std::min(n_val, train.size() > 0 ? train.size() - 1 : 0);
    Rng rng(stable_hash64({"validation", std::to_string(seed)}));
    rng.shuffle(std::span<std::size_t>(train));
    for (std::size_t k = 0; k < n_val; ++k) split.assignments[train[k]].split = Split::VAL;
    split.patients.clear();
    for (const auto& a : split.assignments) split.patients[a.split] += 1;
    split.scans.clear();  // scan counts are recomputed by callers holding records
    return split;
}

void write_split_csv(const SplitResult& split, std::ostream& out) {
    csv::write_row(out, {"patient_id", "split", "seed"});
    for (const auto& a : split.assignments) csv::write_row(out, {a.patient_id, to_string(a.split), std::to_string(a.seed)});
}

SplitResult read_split_csv(std::istream& in) {
    const auto table = csv::Table::read(in);
    table.require({"patient_id", "split", "seed"});
    SplitResult out;
    const auto pc = *table.column("patient_id"), sc = *table.column("split"), kc = *table.column("seed");
    for (const auto& row : table.rows()) {
        out.assignments.push_back({row.at(pc), parse_split(row.at(sc)), std::stoull(row.at(kc))});
        out.patients[out.assignments.back().split] += 1;
    }
    std::sort(out.assignments.begin(), out.assignments.end(),
              [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    return out;
}

void write_scan_manifest(const std::vector<LabeledScan>& records, std::ostream& out) {
    for (const auto& r : records) {
        nlohmann::json j;
        j["scan_id"] = r.scan.scan_id;
        j["patient_id"] = r.scan.patient_id;
        j["cohort"] = to_string(r.scan.cohort);
        j["view"] = to_string(r.scan.view);
        j["age_years"] = r.scan.age_years ? nlohmann::json(*r.scan.age_years) : nlohmann::json(nullptr);
        j["sex"] = to_string(r.scan.sex);
        j["image_path"] = r.scan.image_path;
        j["study_date"] = r.scan.study_date ? nlohmann::json(format_date(*r.scan.study_date)) : nlohmann::json(nullptr);
        j["follow_up"] = r.scan.follow_up ? nlohmann::json(*r.scan.follow_up) : nlohmann::json(nullptr);
        nlohmann::json labels = nlohmann::json::object();
        const auto& keys = r.labels.vocabulary->findings;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const auto& v = r.labels.values[i];
            if (v.is_unsure())
                labels[keys[i]] = "unsure";
            else if (v.is_masked())
                labels[keys[i]] = "masked";
            else
                labels[keys[i]] = v.value();
        }
        j["labels"] = std::move(labels);
        out << jsonl::dump_line(j) << '\n';
    }
}

std::vector<LabeledScan> read_scan_manifest(const std::filesystem::path& path) {
    std::vector<LabeledScan> out;
    jsonl::for_each(path, [&](const nlohmann::json& j, std::size_t line) {
        try {
            LabeledScan r;
            r.scan.scan_id = j.at("scan_id").get<std::string>();
            r.scan.patient_id = j.at("patient_id").get<std::string>();
            r.scan.cohort = parse_cohort(j.at("cohort").get<std::string>());
            const auto view = j.at("view").get<std::string>();
            r.scan.view = view == "PA" ? View::PA : view == "AP" ? View::AP : View::OTHER;
            if (!j.at("age_years").is_null()) r.scan.age_years = j["age_years"].get<double>();
            const auto sex = j.at("sex").get<std::string>();
            r.scan.sex = sex == "F" ? Sex::F : sex == "M" ? Sex::M : Sex::UNKNOWN;
            r.scan.image_path = j.at("image_path").get<std::string>();
            if (j.contains("study_date") && !j["study_date"].is_null())
                r.scan.study_date = parse_date(j["study_date"].get<std::string>());
            if (j.contains("follow_up") && !j["follow_up"].is_null()) r.scan.follow_up = j["follow_up"].get<int>();
            r.labels = LabelVector(vocabulary(r.scan.cohort));
            for (const auto& [key, value] : j.at("labels").items()) {
                if (value.is_string())
                    r.labels.set(key, value.get<std::string>() == "unsure" ? LabelValue::unsure() : LabelValue::masked());
                else
                    r.labels.set(key, LabelValue::of(value.get<double>()));
            }
            out.push_back(std::move(r));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

} // namespace cxrcf
