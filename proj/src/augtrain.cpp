#include "cxrcf/augtrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/parallel.hpp"
#include "cxrcf/core/rng.hpp"

namespace cxrcf {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(LabelingScheme s) {
    switch (s) {
    case LabelingScheme::ABSENT: return "absent";
    case LabelingScheme::MASKED: return "masked";
    case LabelingScheme::COOCCURRENCE: return "cooccurrence";
    }
    return "?";
}

LabelingScheme parse_labeling_scheme(const std::string& s) {
    std::string l;
    for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (l == "absent" || l == "off_target_absent") return LabelingScheme::ABSENT;
    if (l == "masked" || l == "off_target_masked") return LabelingScheme::MASKED;
    if (l == "cooccurrence" || l == "off_target_cooccurrence") return LabelingScheme::COOCCURRENCE;
    throw ConfigError("unknown labeling scheme '" + s + "' (absent, masked, cooccurrence)");
}

void check_scheme(LabelingScheme scheme, const std::vector<std::string>& findings, const CooccurrenceMatrix* matrix) {
    if (scheme != LabelingScheme::COOCCURRENCE) return;
    if (!matrix) throw ConfigError("the cooccurrence scheme needs a co-occurrence matrix");
    if (!matrix->covers(findings)) throw ConfigError("co-occurrence matrix does not cover every training finding");
}

Targets make_targets(const TrainingExample& example, LabelingScheme scheme, const std::vector<std::string>& findings,
                     const CooccurrenceMatrix* matrix) {
    Targets t;
    t.values.assign(findings.size(), 0.0f);
    t.mask.assign(findings.size(), 1);
    switch (example.kind) {
    case ExampleKind::SYNTHETIC_BASELINE: return t;
    case ExampleKind::REAL: {
        const Cohort cohort = example.labels.vocabulary ? example.labels.vocabulary->cohort : Cohort::SYNTHETIC;
        for (std::size_t i = 0; i < findings.size(); ++i) {
            std::optional<std::string> key;
            if (example.labels.has(findings[i])) key = findings[i];
            else key = study_alias(cohort, findings[i]);
            if (!key || !example.labels.has(*key)) {
                t.mask[i] = 0;
                continue;
            }
            const auto v = example.labels.get(*key);
            if (v.is_masked()) t.mask[i] = 0;
            else t.values[i] = v.is_unsure() ? 0.0f : static_cast<float>(v.value());
        }
        return t;
    }
    case ExampleKind::COUNTERFACTUAL: break;
    }
    check_scheme(scheme, findings, matrix);
    const auto prompted = std::find(findings.begin(), findings.end(), example.prompted);
    for (std::size_t i = 0; i < findings.size(); ++i) {
        if (findings.begin() + static_cast<std::ptrdiff_t>(i) == prompted) {
            t.values[i] = 1.0f;
            continue;
        }
        switch (scheme) {
        case LabelingScheme::ABSENT: break;
        case LabelingScheme::MASKED: t.mask[i] = 0; break;
        case LabelingScheme::COOCCURRENCE: {
            const double v = matrix->at(example.prompted, findings[i]);
            if (std::isnan(v))
                throw ConfigError("co-occurrence matrix has no value for " + example.prompted + " -> " + findings[i]);
            t.values[i] = static_cast<float>(v);
            break;
        }
        }
    }
    return t;
}

std::vector<TrainingExample> real_examples(const std::vector<LabeledScan>& scans) {
    std::vector<TrainingExample> out;
    out.reserve(scans.size());
    for (const auto& s : scans)
        out.push_back({s.scan.scan_id, s.scan.patient_id, s.scan.image_path, ExampleKind::REAL, "", s.labels});
    return out;
}

std::vector<TrainingExample> synthetic_examples(const Manifest& manifest, const fs::path& manifest_dir,
                                                const std::vector<std::string>& pathologies) {
    std::vector<TrainingExample> out;
    for (const auto& r : manifest.records) {
        if (r.status != RecordStatus::OK) continue;
        TrainingExample e;
        e.id = r.output_id;
        e.image_path = (manifest_dir / r.output_path).string();
        if (r.kind == RecordKind::BASELINE) {
            e.kind = ExampleKind::SYNTHETIC_BASELINE;
            e.patient_id = r.output_id;
        } else {
            if (std::find(pathologies.begin(), pathologies.end(), r.prompt.pathology_key) == pathologies.end()) continue;
            e.kind = ExampleKind::COUNTERFACTUAL;
            e.patient_id = r.source_scan_id;
            e.prompted = r.prompt.pathology_key;
        }
        out.push_back(std::move(e));
    }
    return out;
}

SyntheticSplit split_synthetic(const std::vector<TrainingExample>& examples, double train_fraction,
                               std::uint64_t seed) {
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ArgumentError("train_fraction must lie in [0, 1]");
    std::set<std::string> patient_set;
    for (const auto& e : examples) patient_set.insert(e.patient_id);
    std::vector<std::string> patients(patient_set.begin(), patient_set.end());
    Rng rng(stable_hash64({"synthetic-split", std::to_string(seed)}));
    rng.shuffle(std::span<std::string>(patients));
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(patients.size())));
    const std::set<std::string> train(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_train));
    SyntheticSplit out;
    for (const auto& e : examples) (train.count(e.patient_id) ? out.train : out.test).push_back(e);
    return out;
}

TrainingSet assemble_training_set(const std::vector<TrainingExample>& real,
                                  const std::vector<TrainingExample>& synthetic, std::uint64_t seed) {
    std::set<std::string> ids;
    std::vector<std::string> clashes;
    for (const auto* side : {&real, &synthetic})
        for (const auto& e : *side)
            if (!ids.insert(e.id).second) clashes.push_back(e.id);
    if (!clashes.empty()) {
        std::string list;
        for (std::size_t i = 0; i < clashes.size() && i < 10; ++i) list += (i ? ", " : "") + clashes[i];
        throw IntegrityError(std::to_string(clashes.size()) + " scan ids occur more than once across real and " +
                             "synthetic data: " + list);
    }
    TrainingSet set;
    set.n_real = real.size();
    set.n_synthetic = synthetic.size();
    set.items = real;
    set.items.insert(set.items.end(), synthetic.begin(), synthetic.end());
    Rng rng(stable_hash64({"assemble", std::to_string(seed)}));
    rng.shuffle(std::span<TrainingExample>(set.items));
    return set;
}

std::vector<std::string> TrainingConfig::default_findings() { return findings::study(); }

nn::CnnConfig TrainingConfig::default_architecture() {
    nn::CnnConfig a;
    a.outputs = static_cast<int>(default_findings().size());
    return a;
}

void TrainingConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (patience < 0 || patience > epochs) throw ConfigError("patience must lie in [0, epochs]");
    if (findings.empty()) throw ConfigError("no training findings");
    if (!(label_smoothing >= 0.0 && label_smoothing < 0.5)) throw ConfigError("label_smoothing must lie in [0, 0.5)");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation_fraction must lie in (0, 1)");
    if (architecture.outputs != static_cast<int>(findings.size()))
        throw ConfigError("architecture has " + std::to_string(architecture.outputs) + " outputs for " +
                          std::to_string(findings.size()) + " findings");
    try {
        architecture.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

TrainingConfig TrainingConfig::from_kv(const KvConfig& kv) {
    TrainingConfig c;
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.patience = static_cast<int>(kv.get_int("early_stop_patience", kv.get_int("patience", c.patience)));
    // an unset patience never exceeds a short run
    if (!kv.get("early_stop_patience") && !kv.get("patience")) c.patience = std::min(c.patience, c.epochs);
    if (auto f = kv.get("findings")) {
        c.findings.clear();
        std::istringstream in(*f);
        for (std::string item; std::getline(in, item, ',');) {
            item.erase(0, item.find_first_not_of(" \t"));
            item.erase(item.find_last_not_of(" \t") + 1);
            if (!item.empty()) c.findings.push_back(item);
        }
    }
    if (auto s = kv.get("scheme")) c.scheme = parse_labeling_scheme(*s);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.validation_fraction = kv.get_double("validation_fraction", c.validation_fraction);
    c.label_smoothing = kv.get_double("label_smoothing", c.label_smoothing);
    c.architecture.input = static_cast<int>(kv.get_int("input_size", c.architecture.input));
    c.architecture.c1 = static_cast<int>(kv.get_int("conv1_channels", c.architecture.c1));
    c.architecture.c2 = static_cast<int>(kv.get_int("conv2_channels", c.architecture.c2));
    c.architecture.outputs = static_cast<int>(c.findings.size());
    c.validate();
    return c;
}

namespace {

json config_json(const TrainingConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"patience", c.patience},
            {"findings", c.findings},
            {"scheme", to_string(c.scheme)},
            {"seed", c.seed},
            {"validation", {{"fraction", c.validation_fraction},
                            {"unit", "patient"},
                            {"metric", "mean AUC over findings, ties broken by loss"}}},
            {"label_smoothing", c.label_smoothing},
            {"lr_schedule", "none"},
            {"augmentation", "none"},
            {"architecture",
             {{"id", "toy-cnn/1"},
              {"input", c.architecture.input},
              {"conv1", {c.architecture.c1, c.architecture.k1}},
              {"conv2", {c.architecture.c2, c.architecture.k2}}}}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Per-finding AUC over entries whose target is a hard, unmasked 0/1.
std::vector<std::optional<double>> hard_target_auc(const std::vector<std::vector<float>>& probs,
                                                   const std::vector<Targets>& targets, std::size_t n_findings) {
    std::vector<std::optional<double>> out;
    for (std::size_t f = 0; f < n_findings; ++f) {
        std::vector<double> s;
        std::vector<int> l;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const float t = targets[i].values[f];
            if (!targets[i].mask[f] || (t != 0.0f && t != 1.0f)) continue;
            s.push_back(probs[i][f]);
            l.push_back(t == 1.0f);
        }
        out.push_back(roc_auc(s, l));
    }
    return out;
}

Image fit(Image img, int size) {
    if (img.width != size || img.height != size) img = resize(img, size, size);
    return img;
}

} // namespace

TrainingResult train(const TrainingSet& data, const TrainingConfig& config, const ImageLoader& loader,
                     const CooccurrenceMatrix* matrix, const fs::path& log_path) {
    config.validate();
    check_scheme(config.scheme, config.findings, matrix);
    if (data.items.empty()) throw TrainingError("training set is empty");

    // Validation: a seeded share of patients.
    std::set<std::string> patient_set;
    for (const auto& e : data.items) patient_set.insert(e.patient_id);
    std::vector<std::string> patients(patient_set.begin(), patient_set.end());
    Rng split_rng(stable_hash64({"validation-split", std::to_string(config.seed)}));
    split_rng.shuffle(std::span<std::string>(patients));
    const auto n_val_patients = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(patients.size()))));
    if (n_val_patients >= patients.size()) throw TrainingError("too few patients to carve a validation split");
    const std::set<std::string> val_patients(patients.begin(),
                                             patients.begin() + static_cast<std::ptrdiff_t>(n_val_patients));

    const std::size_t n = data.items.size();
    const auto& arch = config.architecture;
    std::vector<Image> images(n);
    std::vector<Targets> targets(n);
    std::vector<std::string> errors(n);
    parallel_for(n, [&](std::size_t i) {
        try {
            images[i] = fit(loader(data.items[i].image_path), arch.input);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i].empty()) throw TrainingError("cannot load " + data.items[i].id + ": " + errors[i]);
        targets[i] = make_targets(data.items[i], config.scheme, config.findings, matrix);
    }
    // validation AUC keeps the unsmoothed targets
    auto loss_targets = targets;
    if (config.label_smoothing > 0.0) {
        const auto a = static_cast<float>(config.label_smoothing);
        for (auto& t : loss_targets)
            for (auto& v : t.values) v = v * (1.0f - a) + a / 2.0f;
    }
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < n; ++i) (val_patients.count(data.items[i].patient_id) ? val_idx : train_idx).push_back(i);

    TrainingResult result;
    result.findings = config.findings;
    result.n_train = train_idx.size();
    result.n_validation = val_idx.size();
    nn::ToyCnn net(arch, stable_hash64({"init", std::to_string(config.seed)}));
    nn::Adam adam(net.parameters().size(), config.learning_rate);
    result.model = net;

    std::ofstream log;
    if (!log_path.empty()) {
        if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
        log.open(log_path, std::ios::trunc);
        log << json{{"event", "config"},
                    {"config", config_json(config)},
                    {"n_train", train_idx.size()},
                    {"n_validation", val_idx.size()}}
                   .dump()
            << '\n';
    }

    std::vector<float> grad(net.parameters().size());
    double best = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const int stop_after = std::max(config.patience, 1);
    result.stop_reason = "max epochs";
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng rng(stable_hash64({"epoch-order", std::to_string(config.seed), std::to_string(epoch)}));
        rng.shuffle(std::span<std::size_t>(order));

        double epoch_loss = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0f);
            double batch_loss = 0.0;
            std::size_t batch_count = 0;
            for (std::size_t b = start; b < end; ++b) {
                const auto i = order[b];
                std::size_t count = 0;
                batch_loss += net.loss_and_grad(images[i], loss_targets[i].values, loss_targets[i].mask, grad, count);
                batch_count += count;
            }
            if (!std::isfinite(batch_loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting with " +
                                    data.items[order[start]].id + " (lr " + std::to_string(config.learning_rate) + ")");
            if (batch_count == 0) continue;
            const float scale = 1.0f / static_cast<float>(batch_count);
            for (auto& g : grad) g *= scale;
            adam.step(net.parameters(), grad);
            epoch_loss += batch_loss;
            epoch_count += batch_count;
        }

        std::vector<std::vector<float>> probs(val_idx.size());
        std::vector<Targets> val_targets(val_idx.size());
        double val_loss = 0.0;
        std::size_t val_count = 0;
        for (std::size_t k = 0; k < val_idx.size(); ++k) {
            const auto z = net.logits(images[val_idx[k]]);
            const auto& lt = loss_targets[val_idx[k]];
            std::size_t count = 0;
            val_loss += nn::masked_bce(z, lt.values, lt.mask, {}, count);
            val_count += count;
            probs[k].resize(z.size());
            for (std::size_t f = 0; f < z.size(); ++f) probs[k][f] = 1.0f / (1.0f + std::exp(-z[f]));
            val_targets[k] = targets[val_idx[k]];
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0;
        entry.val_auc = hard_target_auc(probs, val_targets, config.findings.size());
        double sum = 0.0;
        int defined = 0;
        for (const auto& a : entry.val_auc)
            if (a) {
                sum += *a;
                ++defined;
            }
        entry.val_mean_auc = defined ? sum / defined : 0.0;
        entry.val_loss = val_count ? val_loss / static_cast<double>(val_count) : 0.0;
        // AUC saturates on easy data, so ties fall to validation loss
        entry.improved = entry.val_mean_auc > best || (entry.val_mean_auc == best && entry.val_loss < best_loss);
        if (entry.improved) {
            best = entry.val_mean_auc;
            best_loss = entry.val_loss;
            result.best_epoch = epoch;
            result.model = net;
            since_best = 0;
        } else {
            ++since_best;
        }
        result.log.push_back(entry);
        result.stop_epoch = epoch;
        if (log) {
            json aucs = json::object();
            for (std::size_t f = 0; f < config.findings.size(); ++f) aucs[config.findings[f]] = optional_json(entry.val_auc[f]);
            log << json{{"epoch", epoch},
                        {"train_loss", entry.train_loss},
                        {"val_auc", aucs},
                        {"val_mean_auc", entry.val_mean_auc},
                        {"val_loss", entry.val_loss},
                        {"improved", entry.improved},
                        {"best_epoch", result.best_epoch}}
                       .dump()
                << '\n';
        }
        if (since_best >= stop_after) {
            result.stop_reason = "early stop: " + std::to_string(since_best) + " epochs without improvement";
            break;
        }
    }
    if (log)
        log << json{{"event", "stop"},
                    {"stop_epoch", result.stop_epoch},
                    {"best_epoch", result.best_epoch},
                    {"reason", result.stop_reason}}
                   .dump()
            << '\n';
    return result;
}

void save_model(const TrainingResult& result, const TrainingConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    result.model.save(dir / "model.bin");
    std::ofstream out(dir / "model.json", std::ios::trunc);
    out << json{{"architecture", "toy-cnn/1"},
                {"findings", result.findings},
                {"input_size", result.model.config().input},
                {"checkpoint", "model.bin"},
                {"checkpoint_sha256", sha256_file(dir / "model.bin")},
                {"best_epoch", result.best_epoch},
                {"stop_epoch", result.stop_epoch},
                {"stop_reason", result.stop_reason},
                {"config", config_json(config)}}
               .dump(2)
        << '\n';
}

ModelAdapter::ModelAdapter(nn::ToyCnn model, std::vector<std::string> findings, std::string name)
    : model_(std::move(model)) {
    if (static_cast<int>(findings.size()) != model_.config().outputs)
        throw ArgumentError("model has " + std::to_string(model_.config().outputs) + " outputs for " +
                            std::to_string(findings.size()) + " findings");
    info_.name = std::move(name);
    info_.supported_findings = std::move(findings);
    info_.input_resolution = model_.config().input;
    info_.invocation = Invocation::IN_PROCESS;
}

ModelAdapter ModelAdapter::load(const fs::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw NotFoundError("no model.json in " + dir.string());
    const auto desc = json::parse(in);
    const auto checkpoint = dir / desc.at("checkpoint").get<std::string>();
    if (sha256_file(checkpoint) != desc.at("checkpoint_sha256").get<std::string>())
        throw IntegrityError("checkpoint hash does not match its descriptor: " + checkpoint.string());
    return ModelAdapter(nn::ToyCnn::load(checkpoint), desc.at("findings").get<std::vector<std::string>>());
}

Predictions ModelAdapter::predict(const Image& image) const {
    const auto p = model_.probabilities(fit(image, info_.input_resolution));
    Predictions out;
    for (std::size_t i = 0; i < p.size(); ++i) out[info_.supported_findings[i]] = p[i];
    return out;
}

void register_model_adapter() {
    register_builtin_adapter("toy-checkpoint", [](const KvConfig& kv) -> std::unique_ptr<ClassifierAdapter> {
        return std::make_unique<ModelAdapter>(ModelAdapter::load(kv.require("checkpoint")));
    });
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const double midrank = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]]) rank_sum += midrank;
        i = j;
    }
    for (int l : labels) pos += l != 0;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

namespace {

AucRow auc_row(const std::string& cohort, const std::vector<std::string>& findings,
               const std::vector<std::vector<std::optional<int>>>& labels, const ProbabilityTable& table,
               const std::map<std::string, std::size_t>& row_of) {
    AucRow row;
    row.cohort = cohort;
    row.findings = findings;
    for (std::size_t f = 0; f < findings.size(); ++f) {
        std::vector<double> s;
        std::vector<int> l;
        for (const auto& r : table.rows) {
            const auto& lab = labels[row_of.at(r.item.scan_id)][f];
            if (!lab) continue;
            s.push_back(r.probabilities.at(findings[f]));
            l.push_back(*lab);
        }
        const auto pos = static_cast<std::size_t>(std::count(l.begin(), l.end(), 1));
        row.positives.push_back(pos);
        row.negatives.push_back(l.size() - pos);
        row.auc.push_back(roc_auc(s, l));
        if (l.empty()) row.notes.push_back("no label");
        else if (!row.auc.back()) row.notes.push_back("single class (" + std::to_string(pos) + " positive of " +
                                                      std::to_string(l.size()) + ")");
        else row.notes.emplace_back();
    }
    return row;
}

} // namespace

AucRow evaluate_auc(const ClassifierAdapter& adapter, const std::string& cohort, const std::vector<LabeledScan>& scans,
                    const std::vector<std::string>& findings, const ImageLoader& loader) {
    std::vector<PredictItem> items;
    std::vector<std::vector<std::optional<int>>> labels;
    std::map<std::string, std::size_t> row_of;
    for (const auto& s : scans) {
        std::vector<std::optional<int>> l;
        for (const auto& f : findings) {
            auto v = study_label(s, f);
            if (v && v->is_hard()) l.push_back(v->positive() ? 1 : 0);
            else if (v && v->is_unsure()) l.push_back(0);
            else l.push_back(std::nullopt);
        }
        row_of[s.scan.scan_id] = labels.size();
        labels.push_back(std::move(l));
        items.push_back({s.scan.scan_id, s.scan.image_path, PredictionSource::REFERENCE, "", ""});
    }
    const auto table = predict_cohort(adapter, items, findings, loader);
    return auc_row(cohort, findings, labels, table, row_of);
}

AucRow evaluate_examples(const ClassifierAdapter& adapter, const std::string& cohort,
                         const std::vector<TrainingExample>& examples, const std::vector<std::string>& findings,
                         const ImageLoader& loader, LabelingScheme scheme) {
    std::vector<PredictItem> items;
    std::vector<std::vector<std::optional<int>>> labels;
    std::map<std::string, std::size_t> row_of;
    for (const auto& e : examples) {
        const auto t = make_targets(e, scheme == LabelingScheme::COOCCURRENCE ? LabelingScheme::ABSENT : scheme,
                                    findings, nullptr);
        std::vector<std::optional<int>> l;
        for (std::size_t f = 0; f < findings.size(); ++f) {
            if (t.mask[f] && (t.values[f] == 0.0f || t.values[f] == 1.0f)) l.push_back(t.values[f] == 1.0f);
            else l.push_back(std::nullopt);
        }
        row_of[e.id] = labels.size();
        labels.push_back(std::move(l));
        items.push_back({e.id, e.image_path, PredictionSource::REFERENCE, "", ""});
    }
    const auto table = predict_cohort(adapter, items, findings, loader);
    return auc_row(cohort, findings, labels, table, row_of);
}

void write_auc_table(const std::vector<AucRow>& rows, std::ostream& out) {
    if (rows.empty()) return;
    csv::Row header{"cohort"};
    for (const auto& f : rows.front().findings) header.push_back(findings::display_name(f));
    csv::write_row(out, header);
    for (const auto& r : rows) {
        csv::Row row{r.cohort};
        for (const auto& a : r.auc) {
            if (!a) {
                row.emplace_back();
                continue;
            }
            std::ostringstream os;
            os.precision(4);
            os << std::fixed << *a;
            row.push_back(os.str());
        }
        csv::write_row(out, row);
    }
}

std::string to_string(TaskMode m) { return m == TaskMode::SINGLE ? "single" : "multi"; }

std::vector<SweepCell> small_scale_sweep(const std::function<SweepInputs(std::size_t)>& inputs,
                                         const TrainingConfig& base, const ImageLoader& loader,
                                         const std::vector<std::size_t>& synthetic_counts) {
    std::vector<SweepCell> cells;
    for (auto n_synth : synthetic_counts) {
        std::optional<SweepInputs> data;
        std::string data_error;
        try {
            data = inputs(n_synth);
        } catch (const std::exception& e) {
            data_error = e.what();
        }
        for (auto mode : {TaskMode::SINGLE, TaskMode::MULTI}) {
            for (auto scheme : {LabelingScheme::ABSENT, LabelingScheme::MASKED, LabelingScheme::COOCCURRENCE}) {
                SweepCell cell{mode, scheme, n_synth, {}, data_error};
                cell.auc.cohort = "sweep/" + to_string(mode) + "/" + to_string(scheme) + "/" + std::to_string(n_synth);
                cell.auc.findings = base.findings;
                if (data) {
                    try {
                        const CooccurrenceMatrix* m = data->matrix ? &*data->matrix : nullptr;
                        if (mode == TaskMode::MULTI) {
                            auto cfg = base;
                            cfg.scheme = scheme;
                            auto trained = train(data->train, cfg, loader, m);
                            ModelAdapter adapter(trained.model, cfg.findings);
                            cell.auc = evaluate_examples(adapter, cell.auc.cohort, data->test, cfg.findings, loader);
                        } else {
                            AucRow merged;
                            merged.cohort = cell.auc.cohort;
                            merged.findings = base.findings;
                            for (const auto& f : base.findings) {
                                auto cfg = base;
                                cfg.scheme = scheme;
                                cfg.findings = {f};
                                cfg.architecture.outputs = 1;
                                auto trained = train(data->train, cfg, loader, m);
                                ModelAdapter adapter(trained.model, cfg.findings);
                                auto r = evaluate_examples(adapter, cell.auc.cohort, data->test, cfg.findings, loader);
                                merged.auc.push_back(r.auc[0]);
                                merged.positives.push_back(r.positives[0]);
                                merged.negatives.push_back(r.negatives[0]);
                                merged.notes.push_back(r.notes[0]);
                            }
                            cell.auc = std::move(merged);
                        }
                    } catch (const std::exception& e) {
                        cell.error = e.what();
                        spdlog::warn("sweep cell {} failed: {}", cell.auc.cohort, e.what());
                    }
                }
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

void write_sweep_report(const std::vector<SweepCell>& cells, std::ostream& out) {
    if (cells.empty()) return;
    csv::Row header{"mode", "scheme", "n_synthetic"};
    for (const auto& f : cells.front().auc.findings) header.push_back(findings::display_name(f));
    header.emplace_back("error");
    csv::write_row(out, header);
    for (const auto& c : cells) {
        csv::Row row{to_string(c.mode), to_string(c.scheme), std::to_string(c.n_synthetic)};
        for (std::size_t i = 0; i < c.auc.findings.size(); ++i) {
            std::string cell;
            if (i < c.auc.auc.size() && c.auc.auc[i]) {
                std::ostringstream os;
                os.precision(4);
                os << std::fixed << *c.auc.auc[i];
                cell = os.str();
            }
            row.push_back(cell);
        }
        row.push_back(c.error);
        csv::write_row(out, row);
    }
}

void write_training_table(const TrainingSet& data, const TrainingConfig& config, const CooccurrenceMatrix* matrix,
                          std::ostream& out) {
    csv::Row header{"id", "patient_id", "image_path", "kind"};
    for (const auto& f : config.findings) header.push_back("target_" + f);
    for (const auto& f : config.findings) header.push_back("mask_" + f);
    csv::write_row(out, header);
    for (const auto& e : data.items) {
        const auto t = make_targets(e, config.scheme, config.findings, matrix);
        csv::Row row{e.id, e.patient_id, e.image_path,
                     e.kind == ExampleKind::REAL                 ? "real"
                     : e.kind == ExampleKind::SYNTHETIC_BASELINE ? "synthetic_baseline"
                                                                 : "counterfactual"};
        for (float v : t.values) {
            std::ostringstream os;
            os.precision(9);
            os << v;
            row.push_back(os.str());
        }
        for (auto m : t.mask) row.push_back(m ? "1" : "0");
        csv::write_row(out, row);
    }
}

} // namespace cxrcf
