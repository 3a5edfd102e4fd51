// cxrcf: command line front end. Every subcommand writes into its own run
// directory <out-dir>/<subcommand>-<hash of the frozen config>.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cxrcf/augtrain.hpp"
#include "cxrcf/cohort.hpp"
#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/kvconfig.hpp"
#include "cxrcf/editor.hpp"
#include "cxrcf/identity.hpp"
#include "cxrcf/reader_server.hpp"
#include "cxrcf/reader_study.hpp"
#include "cxrcf/reports.hpp"
#include "cxrcf/stress.hpp"
#include "cxrcf/toy_demo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cxrcf;

namespace {

struct Common {
    std::string out_dir = "runs";
    bool force = false;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

// Relative inputs that do not exist here are looked up under $CXRCF_DATA_ROOT.
fs::path resolve(const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    if (path.is_absolute() || fs::exists(path)) return path;
    if (const char* root = std::getenv("CXRCF_DATA_ROOT")) {
        const auto alt = fs::path(root) / path;
        if (fs::exists(alt)) return alt;
    }
    return path;
}

json input_json(const std::string& p) {
    if (p.empty()) return nullptr;
    const auto path = resolve(p);
    json j{{"path", fs::absolute(path).lexically_normal().string()}};
    if (fs::is_regular_file(path)) j["sha256"] = sha256_file(path);
    else if (!fs::exists(path)) throw NotFoundError("input not found: " + p);
    return j;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

class Run {
public:
    Run(const std::string& subcommand, json config, const Common& common) {
        config["subcommand"] = subcommand;
        config["seed"] = common.seed;
        dir_ = fs::path(common.out_dir) / (subcommand + "-" + sha256_hex(config.dump()).substr(0, 12));
        if (fs::exists(dir_ / ".complete") && !common.force) {
            spdlog::info("{} is complete for this configuration; nothing to do (--force reruns)", dir_.string());
            done_ = true;
            return;
        }
        fs::create_directories(dir_);
        fs::remove(dir_ / ".complete");
        std::ofstream(dir_ / "config.json", std::ios::trunc) << config.dump(2) << '\n';
    }
    bool done() const { return done_; }
    const fs::path& dir() const { return dir_; }
    fs::path operator/(const std::string& name) const { return dir_ / name; }
    void finish() const {
        std::ofstream(dir_ / ".complete", std::ios::trunc) << "ok\n";
        std::cout << dir_.string() << '\n';
    }

private:
    fs::path dir_;
    bool done_ = false;
};

int finish_noop(const Run& run) {
    std::cout << run.dir().string() << '\n';
    return 0;
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--out-dir", c.out_dir, "Root for run directories")->capture_default_str();
    sub->add_flag("--force", c.force, "Rerun even if a complete run exists");
    sub->add_option("--seed", c.seed, "Run seed")->capture_default_str();
    sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    fn(out);
}

std::vector<PromptSpec> prompts_named(const std::string& which) {
    if (which == "all") return prompt_registry();
    if (which == "final") return final_prompts();
    std::vector<PromptSpec> out;
    for (const auto& key : split_list(which)) out.push_back(prompt_for(key));
    return out;
}

struct BackendChoice {
    std::string backend = "mock";
    std::string config;
};

std::pair<BackendDescriptor, ComposeOptions> backend_setup(const BackendChoice& b) {
    if (b.backend == "mock") return {BackendDescriptor::mock(), {}};
    if (b.backend != "composed") throw UsageError("--backend must be mock or composed");
    if (b.config.empty()) throw UsageError("--backend composed needs --backend-config");
    return backend_from_config(KvConfig::read_file(resolve(b.config)));
}

// --- ingest -----------------------------------------------------------------

struct IngestArgs {
    std::string cohort, metadata, image_root;
    bool verify = false;
    std::size_t train_patients = 0;
    double val_fraction = 0.0;
};

int cmd_ingest(const IngestArgs& a, const Common& c) {
    const Cohort cohort = parse_cohort(a.cohort);
    Run run("ingest",
            {{"cohort", to_string(cohort)},
             {"metadata", input_json(a.metadata)},
             {"image_root", a.image_root},
             {"verify_images", a.verify},
             {"train_patients", a.train_patients},
             {"val_fraction", a.val_fraction}},
            c);
    if (run.done()) return finish_noop(run);
    IngestOptions opt;
    opt.image_root = a.image_root.empty() ? fs::path() : resolve(a.image_root);
    opt.verify_images = a.verify;
    const auto ingest = ingest_cohort(resolve(a.metadata), cohort, opt);
    const auto filtered = apply_inclusion_filter(ingest.records, cohort);
    write_file(run / "scans.jsonl", [&](std::ostream& o) { write_scan_manifest(filtered.records, o); });
    write_file(run / "skipped.csv", [&](std::ostream& o) {
        o << "line,reason\n";
        for (const auto& s : ingest.skipped) o << s.line << ',' << csv::escape(s.reason) << '\n';
    });
    const auto& r = filtered.report;
    json report{{"rows_read", ingest.rows_read},
                {"skipped", ingest.skipped.size()},
                {"notes", ingest.notes},
                {"filter",
                 {{"input", r.input},
                  {"kept", r.kept},
                  {"dropped_view", r.dropped_view},
                  {"dropped_age", r.dropped_age},
                  {"dropped_missing_age", r.dropped_missing_age},
                  {"patients", r.patients}}}};
    if (a.train_patients > 0) {
        auto split = make_split(filtered.records, a.train_patients, c.seed);
        if (a.val_fraction > 0) split = carve_validation(std::move(split), a.val_fraction, c.seed);
        write_file(run / "split.csv", [&](std::ostream& o) { write_split_csv(split, o); });
        for (const auto& [s, n] : split.patients) report["split_patients"][to_string(s)] = n;
        for (const auto& [s, n] : split.scans) report["split_scans"][to_string(s)] = n;
    }
    write_file(run / "ingest_report.json", [&](std::ostream& o) { o << report.dump(2) << '\n'; });
    spdlog::info("ingest: {} rows, {} kept, {} patients", ingest.rows_read, r.kept, r.patients);
    run.finish();
    return 0;
}

// --- generate / sweep -------------------------------------------------------

struct GenerateArgs {
    BackendChoice backend;
    std::string mode = "eval";
    std::string scans;
    std::size_t n_scans = 100;
    std::string prompts = "all";
    std::size_t baselines = 10000;
    int replicates = 2;
    EditorParams params;
};

json params_json(const EditorParams& p) {
    return {{"guidance_scale", p.guidance_scale},
            {"strength", p.strength},
            {"inference_steps", p.inference_steps},
            {"image_size", p.image_size}};
}

std::vector<SourceScan> no_finding_sources(const std::string& scans, std::size_t n, std::uint64_t seed) {
    const auto all = read_scan_manifest(resolve(scans));
    const auto nf = select_no_finding(all);
    if (nf.size() < n)
        throw ArgumentError("only " + std::to_string(nf.size()) + " no-finding scans, " + std::to_string(n) +
                            " requested");
    std::vector<ScanRecord> picked;
    for (const auto& s : sample_records(nf, n, seed)) picked.push_back(s.scan);
    return sources_from(picked);
}

int cmd_generate(const GenerateArgs& a, const Common& c) {
    if (a.mode != "eval" && a.mode != "training") throw UsageError("--mode must be eval or training");
    if (a.mode == "eval" && a.scans.empty()) throw UsageError("--mode eval needs --scans");
    a.params.validate();
    const auto prompts = prompts_named(a.prompts);
    const std::size_t expected = a.mode == "eval"
                                     ? a.n_scans * prompts.size()
                                     : a.baselines + a.baselines * prompts.size() * static_cast<std::size_t>(a.replicates);
    json cfg{{"backend", a.backend.backend},
             {"backend_config", input_json(a.backend.config)},
             {"mode", a.mode},
             {"params", params_json(a.params)},
             {"prompts", a.prompts},
             {"expected_records", expected}};
    if (a.mode == "eval") {
        cfg["scans"] = input_json(a.scans);
        cfg["n_scans"] = a.n_scans;
    } else {
        cfg["baselines"] = a.baselines;
        cfg["replicates"] = a.replicates;
    }
    Run run("generate", cfg, c);
    if (run.done()) return finish_noop(run);

    const auto [descriptor, options] = backend_setup(a.backend);
    const auto editor = compose_backend(descriptor, options);
    GenerationContext ctx;
    ctx.out_dir = run.dir();
    ctx.threads = c.threads;
    Manifest m;
    if (a.mode == "eval") {
        m = generate_eval_cohort(*editor, no_finding_sources(a.scans, a.n_scans, c.seed), prompts, a.params, c.seed,
                                 ctx);
    } else {
        const auto generator = compose_generator(descriptor, options);
        m = generate_training_cohort(*generator, *editor, a.baselines, prompts, a.replicates, a.params, c.seed, ctx);
    }
    m.write(run / "manifest.jsonl");
    spdlog::info("generate: {} records ({} failed), manifest sha256 {}", m.records.size(), m.failed(), m.hash());
    run.finish();
    return m.complete() ? 0 : 1;
}

struct SweepArgs {
    BackendChoice backend;
    std::string scans;
    std::size_t n_scans = 5;
    std::string prompts = "all";
    std::vector<double> guidance, strength;
    EditorParams params;
};

int cmd_sweep(SweepArgs a, const Common& c) {
    if (a.guidance.empty()) a.guidance = default_guidance_grid();
    if (a.strength.empty()) a.strength = default_strength_grid();
    const auto prompts = prompts_named(a.prompts);
    Run run("sweep",
            {{"backend", a.backend.backend},
             {"backend_config", input_json(a.backend.config)},
             {"scans", input_json(a.scans)},
             {"n_scans", a.n_scans},
             {"prompts", a.prompts},
             {"guidance", a.guidance},
             {"strength", a.strength},
             {"params", params_json(a.params)},
             {"expected_records", a.n_scans * prompts.size() * a.guidance.size() * a.strength.size()}},
            c);
    if (run.done()) return finish_noop(run);
    const auto [descriptor, options] = backend_setup(a.backend);
    const auto editor = compose_backend(descriptor, options);
    GenerationContext ctx;
    ctx.out_dir = run.dir();
    ctx.threads = c.threads;
    const auto m = sweep_params(*editor, no_finding_sources(a.scans, a.n_scans, c.seed), a.guidance, a.strength,
                                prompts, a.params, c.seed, ctx);
    m.write(run / "manifest.jsonl");
    spdlog::info("sweep: {} records", m.records.size());
    run.finish();
    return m.complete() ? 0 : 1;
}

// --- reader study -----------------------------------------------------------

struct ServeArgs {
    std::string manifest;
    std::string readers;
    std::size_t per_reader = 100;
    bool overlap = false;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string admin_token;
};

int cmd_reader_serve(const ServeArgs& a, const Common& c) {
    const auto readers = split_list(a.readers);
    if (readers.empty()) throw UsageError("--readers needs at least one reader id");
    Common keep = c;
    keep.force = false;
    // the study database lives in the run directory; reruns reopen it
    Run run("reader-serve",
            {{"manifest", input_json(a.manifest)},
             {"readers", readers},
             {"per_reader", a.per_reader},
             {"disjoint", !a.overlap}},
            keep);
    fs::create_directories(run.dir());
    const auto manifest_path = resolve(a.manifest);
    const auto manifest = Manifest::read(manifest_path);
    ReaderStore store(run / "reader.db");
    if (store.mapping().empty()) {
        const auto sessions = assign_reads(manifest, readers, a.per_reader, c.seed, !a.overlap);
        const auto tokens = store.create_sessions(sessions, manifest, manifest_path.parent_path());
        write_file(run / "tokens.csv", [&](std::ostream& o) {
            o << "reader_id,session_id,token\n";
            for (std::size_t i = 0; i < sessions.size(); ++i)
                o << sessions[i].reader_id << ',' << sessions[i].session_id << ',' << tokens[i] << '\n';
        });
        write_file(run / "display_map.csv", [&](std::ostream& o) { write_display_map(display_map(sessions), o); });
        spdlog::info("reader-serve: {} sessions created; tokens in {}", sessions.size(), (run / "tokens.csv").string());
    } else {
        spdlog::info("reader-serve: reopening existing study in {}", run.dir().string());
    }
    ReaderServer server(store, {a.host, a.port, a.admin_token});
    std::cout << run.dir().string() << '\n' << std::flush;
    server.run();
    return 0;
}

struct ExportArgs {
    std::string db;
};

int cmd_reader_export(const ExportArgs& a, const Common& c) {
    const auto db = resolve(a.db);
    if (!fs::exists(db)) throw NotFoundError("no reader database at " + a.db);
    json cfg{{"db", input_json(a.db)}};
    if (fs::exists(db.string() + "-wal")) cfg["wal_sha256"] = sha256_file(db.string() + "-wal");
    Run run("reader-export", cfg, c);
    if (run.done()) return finish_noop(run);
    ReaderStore store(db);
    const auto reads = store.reads();
    write_file(run / "reads.csv", [&](std::ostream& o) { export_reads(reads, o); });
    write_file(run / "display_map.csv", [&](std::ostream& o) { write_display_map(store.mapping(), o); });
    try {
        const auto summary = realism_summary(reads);
        write_file(run / "realism.csv", [&](std::ostream& o) { write_realism_csv(summary, o); });
    } catch (const ValidationError& e) {
        spdlog::warn("reader-export: realism summary not written: {}", e.what());
    }
    spdlog::info("reader-export: {} reads", reads.size());
    run.finish();
    return 0;
}

// --- cooccur ----------------------------------------------------------------

struct CooccurArgs {
    std::string reads, display_map, db, manifest, scans, unsure = "as-absent";
};

int cmd_cooccur(const CooccurArgs& a, const Common& c) {
    if (a.db.empty() == a.reads.empty()) throw UsageError("give either --db or --reads with --display-map");
    if (!a.reads.empty() && a.display_map.empty()) throw UsageError("--reads needs --display-map");
    const auto policy = parse_unsure_policy(a.unsure);
    Run run("cooccur",
            {{"reads", input_json(a.reads)},
             {"display_map", input_json(a.display_map)},
             {"db", input_json(a.db)},
             {"manifest", input_json(a.manifest)},
             {"scans", input_json(a.scans)},
             {"unsure", to_string(policy)}},
            c);
    if (run.done()) return finish_noop(run);
    std::vector<ReadRecord> reads;
    if (!a.db.empty()) {
        ReaderStore store(resolve(a.db));
        reads = store.reads();
    } else {
        std::ifstream map_in(resolve(a.display_map));
        const auto map = read_display_map(map_in);
        std::ifstream in(resolve(a.reads));
        reads = import_reads(in, map);
    }
    const auto manifest = Manifest::read(resolve(a.manifest));
    const auto matrix = compute_read_cooccurrence(reads, manifest, policy);
    write_file(run / "prompted_vs_read.csv", [&](std::ostream& o) { matrix.write_csv(o); });
    for (const auto& [reader, m] : cooccurrence_by_reader(reads, manifest, policy))
        write_file(run / ("reader_" + reader + ".csv"), [&](std::ostream& o) { m.write_csv(o); });
    try {
        const auto summary = realism_summary(reads);
        write_file(run / "realism.csv", [&](std::ostream& o) { write_realism_csv(summary, o); });
    } catch (const ValidationError& e) {
        spdlog::warn("cooccur: realism summary not written: {}", e.what());
    }
    if (!a.scans.empty()) {
        const auto scans = read_scan_manifest(resolve(a.scans));
        if (!scans.empty()) {
            std::vector<std::string> keys;
            for (const auto& k : findings::reader())
                if (scans.front().labels.vocabulary->index_of(k)) keys.push_back(k);
            const auto real = real_cooccurrence(scans, keys);
            write_file(run / "real_cooccurrence.csv", [&](std::ostream& o) { real.write_csv(o); });
        }
    }
    render_reports(run.dir());
    run.finish();
    return 0;
}

// --- pfid -------------------------------------------------------------------

struct PfidArgs {
    std::string scans, manifest, conditions, kinds = "control,model,real";
    std::string embedder = "toy", embedder_command, embedder_name, cache_dir;
    std::size_t dimension = 64;
    int max_years = 2;
};

int cmd_pfid(const PfidArgs& a, const Common& c) {
    const auto conditions = a.conditions.empty() ? findings::study() : split_list(a.conditions);
    std::vector<PairKind> kinds;
    for (const auto& k : split_list(a.kinds)) kinds.push_back(parse_pair_kind(k));
    if (a.embedder != "toy" && a.embedder != "command") throw UsageError("--embedder must be toy or command");
    if (a.embedder == "command" && (a.embedder_command.empty() || a.embedder_name.empty()))
        throw UsageError("--embedder command needs --embedder-command and --embedder-name");
    Run run("pfid",
            {{"scans", input_json(a.scans)},
             {"manifest", input_json(a.manifest)},
             {"conditions", conditions},
             {"kinds", a.kinds},
             {"embedder", a.embedder},
             {"embedder_command", a.embedder_command},
             {"embedder_name", a.embedder_name},
             {"dimension", a.dimension},
             {"max_years", a.max_years}},
            c);
    if (run.done()) return finish_noop(run);

    std::vector<LabeledScan> scans;
    Manifest manifest;
    PairingInputs in;
    if (!a.scans.empty()) {
        scans = read_scan_manifest(resolve(a.scans));
        in.scans = &scans;
    }
    if (!a.manifest.empty()) {
        const auto path = resolve(a.manifest);
        manifest = Manifest::read(path);
        in.manifest = &manifest;
        in.manifest_dir = path.parent_path();
    }
    in.max_years = a.max_years;
    std::unique_ptr<Embedder> embedder;
    if (a.embedder == "toy") embedder = std::make_unique<ToyEmbedder>(a.dimension);
    else embedder = std::make_unique<CommandEmbedder>(EmbedderTag{a.embedder_name, a.dimension}, a.embedder_command);
    EmbeddingCache cache(a.cache_dir.empty() ? fs::path(c.out_dir) / "embedding_cache" : fs::path(a.cache_dir));

    std::vector<ImagePair> pairs;
    for (auto kind : kinds) {
        if (kind == PairKind::REAL && !in.scans) throw UsageError("REAL pairs need --scans");
        if (kind != PairKind::REAL && !in.manifest) throw UsageError("MODEL/CONTROL pairs need --manifest");
        for (const auto& cond : conditions) {
            auto p = build_pairings(in, cond, kind, c.seed);
            pairs.insert(pairs.end(), p.begin(), p.end());
        }
    }
    const auto result = score_pairings(pairs, *embedder, disk_loader(), &cache);
    write_file(run / "pfid_scores.csv", [&](std::ostream& o) { write_pair_scores_csv(result.scores, o); });
    write_file(run / "pfid_summary.csv", [&](std::ostream& o) { write_summary_table(result.summaries, o); });
    spdlog::info("pfid: {} pairs scored (cache {} hits / {} misses)", result.scores.size(), cache.hits(),
                 cache.misses());
    run.finish();
    return 0;
}

// --- stress -----------------------------------------------------------------

struct StressArgs {
    std::string adapter, scans, manifest, pathologies, findings, cooccurrence;
};

int cmd_stress(const StressArgs& a, const Common& c) {
    Run run("stress",
            {{"adapter", input_json(a.adapter)},
             {"scans", input_json(a.scans)},
             {"manifest", input_json(a.manifest)},
             {"pathologies", a.pathologies},
             {"findings", a.findings},
             {"cooccurrence", input_json(a.cooccurrence)}},
            c);
    if (run.done()) return finish_noop(run);
    const auto adapter = adapter_from_config(KvConfig::read_file(resolve(a.adapter)));
    const auto pathologies = a.pathologies.empty() ? findings::study() : split_list(a.pathologies);
    std::vector<std::string> keys;
    if (a.findings.empty()) {
        for (const auto& f : findings::study())
            if (adapter->info().supports(f)) keys.push_back(f);
    } else {
        keys = split_list(a.findings);
    }
    const auto manifest_path = resolve(a.manifest);
    const auto manifest = Manifest::read(manifest_path);
    const auto scans = read_scan_manifest(resolve(a.scans));

    std::set<std::string> sources;
    for (const auto& r : manifest.records)
        if (r.kind == RecordKind::EDIT) sources.insert(r.source_scan_id);
    std::vector<PredictItem> baselines, reference;
    for (const auto& s : scans) {
        reference.push_back({s.scan.scan_id, s.scan.image_path, PredictionSource::REFERENCE, "", ""});
        if (sources.erase(s.scan.scan_id))
            baselines.push_back({s.scan.scan_id, s.scan.image_path, PredictionSource::BASELINE, "", ""});
    }
    if (!sources.empty())
        throw NotFoundError(std::to_string(sources.size()) + " counterfactual sources are not in --scans, e.g. " +
                            *sources.begin());
    const auto result = change_matrix(*adapter, baselines, manifest, manifest_path.parent_path(), reference,
                                      pathologies, keys, disk_loader(), c.threads);
    write_file(run / "predictions.csv", [&](std::ostream& o) {
        result.reference.write_csv(o);
        ProbabilityTable rest = result.baselines;
        rest.rows.insert(rest.rows.end(), result.counterfactuals.rows.begin(), result.counterfactuals.rows.end());
        std::stringstream tmp;
        rest.write_csv(tmp);
        std::string line;
        std::getline(tmp, line);  // header already written
        o << tmp.rdbuf();
    });
    write_file(run / "change_matrix.csv", [&](std::ostream& o) { result.matrix.write_csv(o); });
    std::optional<CooccurrenceMatrix> reads;
    if (!a.cooccurrence.empty()) {
        std::ifstream in(resolve(a.cooccurrence));
        reads = CooccurrenceMatrix::read_csv(in);
    }
    const auto report = probability_reference_report(result.baselines, result.counterfactuals,
                                                     reads ? &*reads : nullptr, pathologies, keys);
    write_file(run / "probability_reference.csv",
               [&](std::ostream& o) { write_probability_reference_csv(report, o); });
    render_reports(run.dir());
    run.finish();
    return 0;
}

// --- train / evaluate -------------------------------------------------------

struct TrainArgs {
    std::string config, scans, split, synthetic, cooccurrence, scheme;
    double synthetic_train_fraction = 0.8;
    bool export_table = false;
};

int cmd_train(const TrainArgs& a, const Common& c) {
    auto cfg = a.config.empty() ? TrainingConfig{} : TrainingConfig::from_kv(KvConfig::read_file(resolve(a.config)));
    cfg.seed = c.seed;
    if (!a.scheme.empty()) cfg.scheme = parse_labeling_scheme(a.scheme);
    cfg.architecture.outputs = static_cast<int>(cfg.findings.size());
    cfg.validate();
    Run run("train",
            {{"config", input_json(a.config)},
             {"scans", input_json(a.scans)},
             {"split", input_json(a.split)},
             {"synthetic", input_json(a.synthetic)},
             {"cooccurrence", input_json(a.cooccurrence)},
             {"scheme", to_string(cfg.scheme)},
             {"synthetic_train_fraction", a.synthetic_train_fraction},
             {"export_table", a.export_table}},
            c);
    if (run.done()) return finish_noop(run);

    std::vector<TrainingExample> real, synthetic;
    if (!a.scans.empty()) {
        auto scans = read_scan_manifest(resolve(a.scans));
        if (!a.split.empty()) {
            std::ifstream in(resolve(a.split));
            const auto split = read_split_csv(in);
            std::erase_if(scans, [&](const LabeledScan& s) { return split.split_of(s.scan.patient_id) == Split::TEST; });
        }
        real = real_examples(scans);
    }
    if (!a.synthetic.empty()) {
        const auto path = resolve(a.synthetic);
        const auto all = synthetic_examples(Manifest::read(path), path.parent_path(), cfg.findings);
        const auto parts = split_synthetic(all, a.synthetic_train_fraction, c.seed);
        synthetic = parts.train;
        write_file(run / "synthetic_holdout.csv", [&](std::ostream& o) {
            o << "id\n";
            for (const auto& e : parts.test) o << e.id << '\n';
        });
    }
    std::optional<CooccurrenceMatrix> matrix;
    if (!a.cooccurrence.empty()) {
        std::ifstream in(resolve(a.cooccurrence));
        matrix = CooccurrenceMatrix::read_csv(in);
    }
    const auto data = assemble_training_set(real, synthetic, c.seed);
    spdlog::info("train: {} real + {} synthetic examples, scheme {}", data.n_real, data.n_synthetic,
                 to_string(cfg.scheme));
    if (a.export_table) {
        write_file(run / "training_table.csv",
                   [&](std::ostream& o) { write_training_table(data, cfg, matrix ? &*matrix : nullptr, o); });
    } else {
        const auto result = train(data, cfg, disk_loader(), matrix ? &*matrix : nullptr, run / "train_log.jsonl");
        save_model(result, cfg, run / "model");
        spdlog::info("train: best epoch {} of {} ({})", result.best_epoch, result.stop_epoch, result.stop_reason);
    }
    run.finish();
    return 0;
}

struct EvaluateArgs {
    std::string model, adapter, findings;
    std::vector<std::string> scans;  // name=path
};

int cmd_evaluate(const EvaluateArgs& a, const Common& c) {
    if (a.model.empty() == a.adapter.empty()) throw UsageError("give exactly one of --model or --adapter");
    if (a.scans.empty()) throw UsageError("--scans NAME=PATH is required");
    json inputs = json::array();
    std::vector<std::pair<std::string, std::string>> cohorts;
    for (const auto& s : a.scans) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--scans expects NAME=PATH, got " + s);
        cohorts.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        inputs.push_back({{"name", cohorts.back().first}, {"scans", input_json(cohorts.back().second)}});
    }
    json model_json = nullptr;
    if (!a.model.empty()) model_json = input_json((fs::path(a.model) / "model.json").string());
    Run run("evaluate",
            {{"model", model_json}, {"adapter", input_json(a.adapter)}, {"cohorts", inputs}, {"findings", a.findings}},
            c);
    if (run.done()) return finish_noop(run);
    std::unique_ptr<ClassifierAdapter> adapter;
    if (!a.model.empty()) adapter = std::make_unique<ModelAdapter>(ModelAdapter::load(resolve(a.model)));
    else adapter = adapter_from_config(KvConfig::read_file(resolve(a.adapter)));
    std::vector<std::string> keys;
    if (a.findings.empty()) {
        for (const auto& f : findings::study())
            if (adapter->info().supports(f)) keys.push_back(f);
    } else {
        keys = split_list(a.findings);
    }
    std::vector<AucRow> rows;
    for (const auto& [name, path] : cohorts)
        rows.push_back(evaluate_auc(*adapter, name, read_scan_manifest(resolve(path)), keys));
    write_file(run / "auc.csv", [&](std::ostream& o) { write_auc_table(rows, o); });
    run.finish();
    return 0;
}

// --- toy demo ---------------------------------------------------------------

struct ToyArgs {
    std::size_t n_train = 0, n_heldout = 0, n_synthetic = 0;
    int epochs = 0;
    bool strict = false;
};

int cmd_toy_demo(const ToyArgs& a, const Common& c) {
    toy::DemoConfig cfg;
    cfg.seed = c.seed;
    if (a.n_train) cfg.n_train = a.n_train;
    if (a.n_heldout) cfg.n_heldout = a.n_heldout;
    if (a.n_synthetic) cfg.n_synthetic_baselines = a.n_synthetic;
    if (a.epochs) cfg.training.epochs = a.epochs;
    cfg.training.patience = std::min(cfg.training.patience, cfg.training.epochs);
    Run run("toy-demo",
            {{"n_train", cfg.n_train},
             {"n_heldout", cfg.n_heldout},
             {"n_synthetic_baselines", cfg.n_synthetic_baselines},
             {"epochs", cfg.training.epochs},
             {"confounding", cfg.confounding}},
            c);
    if (run.done()) return finish_noop(run);
    const auto r = toy::run_demo(cfg, run.dir());
    render_reports(run.dir());
    const bool detected = r.shortcut_before() >= cfg.min_shortcut;
    const bool removed = std::abs(r.shortcut_after()) < cfg.max_residual;
    const bool kept = r.b_auc_drop() <= cfg.max_auc_drop;
    std::cerr << "cell[square][circle] before " << r.shortcut_before() << (detected ? " (shortcut)" : " (none)")
              << ", after " << r.shortcut_after() << (removed ? " (removed)" : " (remains)")
              << "; circle AUC drop " << r.b_auc_drop() << (kept ? "" : " (too large)") << '\n';
    run.finish();
    return (a.strict && !(detected && removed && kept)) ? 1 : 0;
}

// --- report / validate ------------------------------------------------------

int cmd_report(const std::string& dir) {
    const auto r = render_reports(dir);
    for (const auto& p : r.written) std::cout << p.string() << '\n';
    for (const auto& m : r.missing) spdlog::warn("missing artifact: {}", m);
    return 0;
}

int cmd_validate(const std::string& dir) {
    const auto check = validate_manifests(dir);
    for (const auto& i : check.issues)
        std::cerr << i.file.string() << (i.line ? ":" + std::to_string(i.line) : "") << ": " << i.message << '\n';
    std::cout << check.manifests << " manifests, " << check.records << " records, " << check.issues.size()
              << " issues\n";
    return check.ok() ? 0 : 1;
}

void add_editor_params(CLI::App* sub, EditorParams& p) {
    sub->add_option("--guidance", p.guidance_scale, "Classifier-free guidance scale")->capture_default_str();
    sub->add_option("--strength", p.strength, "img2img strength")->capture_default_str();
    sub->add_option("--steps", p.inference_steps, "Denoising steps")->capture_default_str();
    sub->add_option("--image-size", p.image_size, "Output side length")->capture_default_str();
}

void add_backend(CLI::App* sub, BackendChoice& b) {
    sub->add_option("--backend", b.backend, "mock or composed")->check(CLI::IsMember({"mock", "composed"}))
        ->capture_default_str();
    sub->add_option("--backend-config", b.config, "Key-value file with checkpoint sources");
}

} // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("cxrcf");
    spdlog::set_default_logger(logger);

    CLI::App app{"Counterfactual chest X-ray toolkit", "cxrcf"};
    app.require_subcommand(1);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

    Common common;
    std::function<int()> action;

    IngestArgs ingest;
    auto* s_ingest = app.add_subcommand("ingest", "Normalize a cohort's metadata CSV into a scan manifest");
    s_ingest->add_option("--cohort", ingest.cohort, "nih, mimic, chexpert or padchest")
        ->required()
        ->check(CLI::IsMember({"nih", "mimic", "chexpert", "padchest"}, CLI::ignore_case));
    s_ingest->add_option("--metadata", ingest.metadata, "Metadata CSV")->required();
    s_ingest->add_option("--image-root", ingest.image_root, "Prefix for relative image paths");
    s_ingest->add_flag("--verify-images", ingest.verify, "Skip rows whose image is missing");
    s_ingest->add_option("--train-patients", ingest.train_patients, "Write a patient split with this many TRAIN");
    s_ingest->add_option("--val-fraction", ingest.val_fraction, "Share of TRAIN patients moved to VAL");
    add_common(s_ingest, common);
    s_ingest->callback([&] { action = [&] { return cmd_ingest(ingest, common); }; });

    GenerateArgs gen;
    auto* s_gen = app.add_subcommand("generate", "Generate an evaluation or training counterfactual cohort");
    add_backend(s_gen, gen.backend);
    s_gen->add_option("--mode", gen.mode, "eval or training")->capture_default_str();
    s_gen->add_option("--scans", gen.scans, "Scan manifest (eval: no-finding sources)");
    s_gen->add_option("--n-scans", gen.n_scans, "Source scans for eval")->capture_default_str();
    s_gen->add_option("--prompts", gen.prompts, "all, final, or a comma list of keys")->capture_default_str();
    s_gen->add_option("--baselines", gen.baselines, "Synthetic baselines for training")->capture_default_str();
    s_gen->add_option("--replicates", gen.replicates, "Edits per (baseline, prompt)")->capture_default_str();
    add_editor_params(s_gen, gen.params);
    add_common(s_gen, common);
    s_gen->callback([&] { action = [&] { return cmd_generate(gen, common); }; });

    SweepArgs sweep;
    auto* s_sweep = app.add_subcommand("sweep", "Guidance x strength parameter sweep");
    add_backend(s_sweep, sweep.backend);
    s_sweep->add_option("--scans", sweep.scans, "Scan manifest")->required();
    s_sweep->add_option("--n-scans", sweep.n_scans, "No-finding scans to edit")->capture_default_str();
    s_sweep->add_option("--prompts", sweep.prompts, "all, final, or a comma list")->capture_default_str();
    s_sweep->add_option("--guidance-grid", sweep.guidance, "Guidance values")->delimiter(',');
    s_sweep->add_option("--strength-grid", sweep.strength, "Strength values")->delimiter(',');
    add_editor_params(s_sweep, sweep.params);
    add_common(s_sweep, common);
    s_sweep->callback([&] { action = [&] { return cmd_sweep(sweep, common); }; });

    ServeArgs serve;
    auto* s_serve = app.add_subcommand("reader-serve", "Serve the blinded reader study");
    s_serve->add_option("--manifest", serve.manifest, "Evaluation manifest")->required();
    s_serve->add_option("--readers", serve.readers, "Comma-separated reader ids")->required();
    s_serve->add_option("--per-reader", serve.per_reader, "Scans per reader")->capture_default_str();
    s_serve->add_flag("--overlap", serve.overlap, "Independent shuffles instead of disjoint slices");
    s_serve->add_option("--host", serve.host)->capture_default_str();
    s_serve->add_option("--port", serve.port)->capture_default_str();
    s_serve->add_option("--admin-token", serve.admin_token, "Required as X-Admin-Token on /admin");
    add_common(s_serve, common);
    s_serve->callback([&] { action = [&] { return cmd_reader_serve(serve, common); }; });

    ExportArgs exp;
    auto* s_exp = app.add_subcommand("reader-export", "Export reads as the reader spreadsheet");
    s_exp->add_option("--db", exp.db, "reader.db of a reader-serve run")->required();
    add_common(s_exp, common);
    s_exp->callback([&] { action = [&] { return cmd_reader_export(exp, common); }; });

    PfidArgs pf;
    auto* s_pfid = app.add_subcommand("pfid", "Pairwise Frechet distance between paired images");
    s_pfid->add_option("--scans", pf.scans, "Real scan manifest (REAL pairs)");
    s_pfid->add_option("--manifest", pf.manifest, "Counterfactual manifest (MODEL/CONTROL pairs)");
    s_pfid->add_option("--conditions", pf.conditions, "Comma list (default: six study findings)");
    s_pfid->add_option("--kinds", pf.kinds, "Comma list of control, model, real")->capture_default_str();
    s_pfid->add_option("--embedder", pf.embedder, "toy or command")->capture_default_str();
    s_pfid->add_option("--embedder-command", pf.embedder_command, "Command printing an embedding for an image");
    s_pfid->add_option("--embedder-name", pf.embedder_name, "Name recorded for the command embedder");
    s_pfid->add_option("--dimension", pf.dimension, "Embedding dimension")->capture_default_str();
    s_pfid->add_option("--cache-dir", pf.cache_dir, "Embedding cache (default <out-dir>/embedding_cache)");
    s_pfid->add_option("--max-years", pf.max_years, "Follow-up window for REAL pairs")->capture_default_str();
    add_common(s_pfid, common);
    s_pfid->callback([&] { action = [&] { return cmd_pfid(pf, common); }; });

    CooccurArgs co;
    auto* s_co = app.add_subcommand("cooccur", "Prompted-vs-read co-occurrence and realism");
    s_co->add_option("--reads", co.reads, "Reader spreadsheet CSV");
    s_co->add_option("--display-map", co.display_map, "display_map.csv of the study");
    s_co->add_option("--db", co.db, "reader.db instead of a spreadsheet");
    s_co->add_option("--manifest", co.manifest, "Evaluation manifest")->required();
    s_co->add_option("--scans", co.scans, "Real scan manifest for the real co-occurrence matrix");
    s_co->add_option("--unsure", co.unsure, "as-absent, as-present or exclude")->capture_default_str();
    add_common(s_co, common);
    s_co->callback([&] { action = [&] { return cmd_cooccur(co, common); }; });

    StressArgs st;
    auto* s_st = app.add_subcommand("stress", "Percentile change matrix for a classifier adapter");
    s_st->add_option("--adapter", st.adapter, "Adapter key-value config")->required();
    s_st->add_option("--scans", st.scans, "Real evaluation scans (reference, baselines)")->required();
    s_st->add_option("--manifest", st.manifest, "Counterfactual manifest")->required();
    s_st->add_option("--pathologies", st.pathologies, "Added pathologies (default: six study findings)");
    s_st->add_option("--findings", st.findings, "Predicted findings (default: supported study findings)");
    s_st->add_option("--cooccurrence", st.cooccurrence, "prompted_vs_read.csv for the probability report");
    add_common(s_st, common);
    s_st->callback([&] { action = [&] { return cmd_stress(st, common); }; });

    TrainArgs tr;
    auto* s_tr = app.add_subcommand("train", "Train a classifier on real plus synthetic data");
    s_tr->add_option("--config", tr.config, "Training key-value config");
    s_tr->add_option("--scans", tr.scans, "Real scan manifest");
    s_tr->add_option("--split", tr.split, "split.csv; TEST patients are left out");
    s_tr->add_option("--synthetic", tr.synthetic, "Synthetic training manifest");
    s_tr->add_option("--cooccurrence", tr.cooccurrence, "Co-occurrence matrix CSV (cooccurrence scheme)");
    s_tr->add_option("--scheme", tr.scheme, "absent, masked or cooccurrence");
    s_tr->add_option("--synthetic-train-fraction", tr.synthetic_train_fraction)->capture_default_str();
    s_tr->add_flag("--export-table", tr.export_table, "Write the training table for an external trainer instead");
    add_common(s_tr, common);
    s_tr->callback([&] { action = [&] { return cmd_train(tr, common); }; });

    EvaluateArgs ev;
    auto* s_ev = app.add_subcommand("evaluate", "Per-finding AUC on labelled cohorts");
    s_ev->add_option("--model", ev.model, "Model directory written by train");
    s_ev->add_option("--adapter", ev.adapter, "Adapter key-value config");
    s_ev->add_option("--scans", ev.scans, "NAME=PATH scan manifest (repeatable)");
    s_ev->add_option("--findings", ev.findings, "Comma list (default: supported study findings)");
    add_common(s_ev, common);
    s_ev->callback([&] { action = [&] { return cmd_evaluate(ev, common); }; });

    ToyArgs toy_args;
    auto* s_toy = app.add_subcommand("toy-demo", "End-to-end shortcut experiment on the shape world");
    s_toy->add_option("--n-train", toy_args.n_train, "Real training scans");
    s_toy->add_option("--n-heldout", toy_args.n_heldout, "Held-out scans");
    s_toy->add_option("--n-synthetic", toy_args.n_synthetic, "Synthetic baselines");
    s_toy->add_option("--epochs", toy_args.epochs, "Training epochs");
    s_toy->add_flag("--strict", toy_args.strict, "Exit 1 when a shortcut check fails");
    add_common(s_toy, common);
    s_toy->callback([&] { action = [&] { return cmd_toy_demo(toy_args, common); }; });

    std::string report_dir;
    auto* s_rep = app.add_subcommand("report", "Render heatmaps and tables for a run directory");
    s_rep->add_option("run", report_dir, "Run directory")->required();
    s_rep->callback([&] { action = [&] { return cmd_report(report_dir); }; });

    std::string validate_dir;
    auto* s_val = app.add_subcommand("validate", "Check the manifests of a run directory");
    s_val->add_option("run", validate_dir, "Run directory")->required();
    s_val->callback([&] { action = [&] { return cmd_validate(validate_dir); }; });

    if (argc < 2) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);
    register_model_adapter();
    try {
        return action();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
