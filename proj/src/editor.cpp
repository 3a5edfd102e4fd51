#include "cxrcf/editor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cxrcf/cohort.hpp"
#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/jsonl.hpp"
#include "cxrcf/core/parallel.hpp"
#include "cxrcf/core/subprocess.hpp"

namespace cxrcf {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(PromptStatus s) { return s == PromptStatus::FINAL ? "FINAL" : "TESTED_ONLY"; }

const std::vector<PromptSpec>& prompt_registry() {
    static const std::vector<PromptSpec> prompts{
        {"cardiomegaly", "cardiomegaly", PromptStatus::FINAL},
        {"edema", "edema", PromptStatus::FINAL},
        {"pleural_effusion", "right pleural effusion", PromptStatus::FINAL},
        {"pneumonia", "middle lobe pneumonia", PromptStatus::FINAL},
        {"hernia", "hernia", PromptStatus::FINAL},
        {"mass", "left upper lobe mass", PromptStatus::FINAL},
        {"emphysema", "emphysema", PromptStatus::TESTED_ONLY},
        {"nodule", "multiple pulmonary nodules", PromptStatus::TESTED_ONLY},
    };
    return prompts;
}

std::vector<PromptSpec> final_prompts() {
    std::vector<PromptSpec> out;
    for (const auto& p : prompt_registry())
        if (p.status == PromptStatus::FINAL) out.push_back(p);
    return out;
}

const std::map<std::string, std::vector<std::string>>& tested_prompt_variants() {
    static const std::map<std::string, std::vector<std::string>> variants{
        {"no_finding", {"no acute cardiopulmonary process"}},
        {"cardiomegaly", {"cardiomegaly"}},
        {"edema", {"edema", "butterfly edema"}},
        {"pneumonia",
         {"pneumonia", "right upper lobe pneumonia", "left upper lobe pneumonia", "middle lobe pneumonia",
          "right lower lobe pneumonia", "left lower lobe pneumonia"}},
        {"pleural_effusion", {"right pleural effusion", "left pleural effusion"}},
        {"emphysema", {"emphysema", "severe emphysema", "panlobular emphysema"}},
        {"hernia", {"hernia"}},
        {"nodule", {"solitary lung nodule", "multiple pulmonary nodules"}},
        {"mass",
         {"right upper lobe mass", "left upper lobe mass", "middle lobe mass", "right lower lobe mass",
          "left lower lobe mass"}},
    };
    return variants;
}

const PromptSpec& no_finding_prompt() {
    static const PromptSpec p{"no_finding", "no acute cardiopulmonary process", PromptStatus::FINAL};
    return p;
}

const PromptSpec& prompt_for(const std::string& pathology_key) {
    for (const auto& p : prompt_registry())
        if (p.pathology_key == pathology_key) return p;
    if (pathology_key == no_finding_prompt().pathology_key) return no_finding_prompt();
    throw NotFoundError("no registered prompt for '" + pathology_key + "'");
}

void EditorParams::validate() const {
    if (!(strength >= 0.0 && strength <= 1.0)) throw ValidationError("strength must lie in [0, 1]");
    if (!(guidance_scale > 0.0)) throw ValidationError("guidance_scale must be positive");
    if (inference_steps <= 0) throw ValidationError("inference_steps must be positive");
    if (image_size <= 0) throw ValidationError("image_size must be positive");
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v;
    if (n == 1) return {lo};
    for (std::size_t i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return v;
}

std::vector<double> default_guidance_grid() { return linspace(1.5, 10.0, 10); }
std::vector<double> default_strength_grid() { return linspace(0.2, 1.0, 10); }

BackendDescriptor BackendDescriptor::mock() { return {kMockSource, kMockSource, kMockSource}; }

bool BackendDescriptor::is_mock() const {
    return text_encoder_source == kMockSource && denoiser_source == kMockSource && autoencoder_source == kMockSource;
}

CompositionCheck check_composition(const BackendDescriptor& d, const std::optional<std::string>& generator_id,
                                   const std::optional<std::string>& base_id) {
    CompositionCheck c;
    auto warn = [&](std::string w) {
        c.matches_reference = false;
        c.warnings.push_back(std::move(w));
    };
    if (d.is_mock()) return c;
    if (d.text_encoder_source != d.denoiser_source)
        warn("text encoder (" + d.text_encoder_source + ") and denoiser (" + d.denoiser_source +
             ") come from different checkpoints; the reference composition takes both from the finetuned generator");
    if (generator_id && d.denoiser_source != *generator_id)
        warn("denoiser is not the finetuned generator checkpoint " + *generator_id);
    if (base_id) {
        if (d.autoencoder_source != *base_id)
            warn("autoencoder is not the base img2img checkpoint " + *base_id);
    } else if (d.autoencoder_source == d.denoiser_source) {
        warn("autoencoder comes from the generator checkpoint; the reference composition uses the base img2img "
             "autoencoder");
    }
    return c;
}

MockBackend::MockBackend() : styles_(default_styles()) {}

MockBackend::MockBackend(std::map<std::string, toy::StampStyle> styles) : styles_(std::move(styles)) {}

std::map<std::string, toy::StampStyle> MockBackend::default_styles() {
    using toy::Shape;
    const std::map<std::string, Shape> by_key{
        {"cardiomegaly", Shape::Square}, {"edema", Shape::Cross},  {"pleural_effusion", Shape::HBar},
        {"pneumonia", Shape::Triangle},  {"hernia", Shape::Diamond}, {"mass", Shape::Circle},
        {"emphysema", Shape::Ring},      {"nodule", Shape::VBar},
    };
    std::map<std::string, toy::StampStyle> styles;
    for (const auto& p : prompt_registry()) styles[p.prompt_text] = {by_key.at(p.pathology_key), 0.12, 0.2, 0.5f};
    return styles;
}

toy::StampStyle MockBackend::style_for(const std::string& prompt_text) const {
    auto it = styles_.find(prompt_text);
    if (it != styles_.end()) return it->second;
    toy::StampStyle s;
    s.shape = static_cast<toy::Shape>(stable_hash64({"mock-shape", prompt_text}) % toy::kShapeCount);
    s.min_half = 0.12;
    s.max_half = 0.2;
    return s;
}

Image MockBackend::edit(const Image& input, const std::string& prompt_text, const EditorParams& params,
                        std::uint64_t seed) const {
    params.validate();
    Image out = resize(input, params.image_size, params.image_size);
    const float scale = static_cast<float>(std::min(2.0, params.strength / 0.4));
    if (scale > 0.0f) toy::stamp_random(out, style_for(prompt_text), seed, scale);
    return out;
}

Image ToyGenerator::generate(const std::string&, const EditorParams& params, std::uint64_t seed) const {
    params.validate();
    return toy::background(params.image_size, level_, sigma_, seed);
}

namespace {

bool is_uri(const std::string& s) {
    return s.rfind("hf://", 0) == 0 || s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0;
}

std::optional<json> read_component_config(const std::string& source, const std::string& component) {
    if (is_uri(source)) return std::nullopt;
    for (const fs::path& p : {fs::path(source) / component / "config.json", fs::path(source) / "config.json"}) {
        if (!fs::exists(p)) continue;
        std::ifstream in(p);
        try {
            return json::parse(in);
        } catch (const json::parse_error& e) {
            throw CompositionError("unreadable config " + p.string() + ": " + e.what());
        }
    }
    return std::nullopt;
}

std::optional<long long> int_field(const std::optional<json>& j, const char* key) {
    if (!j || !j->contains(key) || !(*j)[key].is_number_integer()) return std::nullopt;
    return (*j)[key].get<long long>();
}

class ComposedBackend final : public EditingBackend {
public:
    ComposedBackend(BackendDescriptor d, ComposeOptions o) : descriptor_(std::move(d)), options_(std::move(o)) {
        if (options_.scratch_dir.empty()) options_.scratch_dir = fs::temp_directory_path() / "cxrcf-img2img";
        fs::create_directories(options_.scratch_dir);
    }

    std::string name() const override { return "composed"; }
    const BackendDescriptor& descriptor() const override { return descriptor_; }

    Image edit(const Image& input, const std::string& prompt_text, const EditorParams& params,
               std::uint64_t seed) const override {
        params.validate();
        const std::string tag = std::to_string(seed) + "-" + sha256_hex(prompt_text).substr(0, 8);
        const fs::path in = options_.scratch_dir / ("in-" + tag + ".png");
        const fs::path out = options_.scratch_dir / ("out-" + tag + ".png");
        save_png(resize(input, params.image_size, params.image_size), in);
        const auto result = run_command(
            options_.runner_command,
            {"--text-encoder", descriptor_.text_encoder_source, "--denoiser", descriptor_.denoiser_source,
             "--autoencoder", descriptor_.autoencoder_source, "--prompt", prompt_text, "--guidance",
             std::to_string(params.guidance_scale), "--strength", std::to_string(params.strength), "--steps",
             std::to_string(params.inference_steps), "--seed", std::to_string(seed), "--size",
             std::to_string(params.image_size), "--input", in.string(), "--output", out.string()});
        fs::remove(in);
        if (result.exit_code != 0)
            throw Error("img2img runner exited with status " + std::to_string(result.exit_code));
        Image img = load_image(out);
        fs::remove(out);
        if (img.width != params.image_size || img.height != params.image_size)
            throw Error("runner returned " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " image, expected " + std::to_string(params.image_size));
        return img;
    }

private:
    BackendDescriptor descriptor_;
    ComposeOptions options_;
};

// Text-to-image through the same runner (no --input); the generator's own
// text encoder and denoiser drive it.
class RunnerGenerator final : public GeneratorBackend {
public:
    RunnerGenerator(BackendDescriptor d, ComposeOptions o) : descriptor_(std::move(d)), options_(std::move(o)) {
        if (options_.scratch_dir.empty()) options_.scratch_dir = fs::temp_directory_path() / "cxrcf-img2img";
        fs::create_directories(options_.scratch_dir);
    }
    std::string name() const override { return "runner-txt2img"; }
    Image generate(const std::string& prompt_text, const EditorParams& params, std::uint64_t seed) const override {
        params.validate();
        const fs::path out = options_.scratch_dir / ("gen-" + std::to_string(seed) + ".png");
        const auto result = run_command(
            options_.runner_command,
            {"--text-encoder", descriptor_.text_encoder_source, "--denoiser", descriptor_.denoiser_source,
             "--autoencoder", descriptor_.autoencoder_source, "--prompt", prompt_text, "--guidance",
             std::to_string(params.guidance_scale), "--steps", std::to_string(params.inference_steps), "--seed",
             std::to_string(seed), "--size", std::to_string(params.image_size), "--output", out.string()});
        if (result.exit_code != 0)
            throw Error("txt2img runner exited with status " + std::to_string(result.exit_code));
        Image img = load_image(out);
        fs::remove(out);
        return img;
    }

private:
    BackendDescriptor descriptor_;
    ComposeOptions options_;
};

} // namespace

std::unique_ptr<GeneratorBackend> compose_generator(const BackendDescriptor& d, const ComposeOptions& options) {
    if (d.is_mock()) return std::make_unique<ToyGenerator>();
    if (options.runner_command.empty()) throw ConfigError("composed generator needs a runner command");
    // the generator's text encoder and denoiser with its own autoencoder
    BackendDescriptor g = d;
    if (options.generator_id) g.autoencoder_source = *options.generator_id;
    return std::make_unique<RunnerGenerator>(g, options);
}

std::unique_ptr<EditingBackend> compose_backend(const BackendDescriptor& d, const ComposeOptions& options) {
    if (d.is_mock()) {
        spdlog::info("editing backend: built-in mock");
        return std::make_unique<MockBackend>();
    }
    for (const auto& [role, src] : {std::pair{"text encoder", d.text_encoder_source},
                                    std::pair{"denoiser", d.denoiser_source},
                                    std::pair{"autoencoder", d.autoencoder_source}}) {
        if (src.empty()) throw ResolutionError(std::string("no checkpoint given for the ") + role);
        if (is_uri(src)) {
            spdlog::warn("{} source {} is remote; resolution is left to the runner", role, src);
            continue;
        }
        if (!fs::exists(src)) throw ResolutionError(std::string(role) + " checkpoint not found: " + src);
    }

    const auto te = read_component_config(d.text_encoder_source, "text_encoder");
    const auto unet = read_component_config(d.denoiser_source, "unet");
    const auto vae = read_component_config(d.autoencoder_source, "vae");
    const auto hidden = int_field(te, "hidden_size");
    const auto cross = int_field(unet, "cross_attention_dim");
    if (hidden && cross && *hidden != *cross)
        throw CompositionError("text encoder hidden size " + std::to_string(*hidden) +
                               " does not match denoiser cross-attention dim " + std::to_string(*cross));
    const auto in_ch = int_field(unet, "in_channels");
    const auto latent = int_field(vae, "latent_channels");
    if (in_ch && latent && *in_ch != *latent)
        throw CompositionError("denoiser expects " + std::to_string(*in_ch) + " latent channels, autoencoder produces " +
                               std::to_string(*latent));

    const auto check = check_composition(d, options.generator_id, options.base_id);
    spdlog::info("editing backend: text_encoder={} denoiser={} autoencoder={}", d.text_encoder_source,
                 d.denoiser_source, d.autoencoder_source);
    for (const auto& w : check.warnings) spdlog::warn("composition: {}", w);
    if (options.runner_command.empty()) throw ConfigError("composed backend needs a runner command");
    return std::make_unique<ComposedBackend>(d, options);
}

std::pair<BackendDescriptor, ComposeOptions> backend_from_config(const KvConfig& config) {
    BackendDescriptor d{config.require("text_encoder"), config.require("denoiser"), config.require("autoencoder")};
    ComposeOptions o;
    o.runner_command = config.get_or("runner", "python3 tools/img2img_runner.py");
    o.generator_id = config.get("generator");
    o.base_id = config.get("base");
    if (auto s = config.get("scratch_dir")) o.scratch_dir = *s;
    return {d, o};
}

namespace {

const char* kind_name(RecordKind k) { return k == RecordKind::EDIT ? "edit" : "baseline"; }

json params_json(const EditorParams& p) {
    return {{"guidance_scale", p.guidance_scale},
            {"strength", p.strength},
            {"inference_steps", p.inference_steps},
            {"image_size", p.image_size}};
}

} // namespace

json to_json(const CounterfactualRecord& r) {
    return {{"schema", kManifestSchema},
            {"output_id", r.output_id},
            {"source_scan_id", r.source_scan_id},
            {"kind", kind_name(r.kind)},
            {"prompt",
             {{"pathology_key", r.prompt.pathology_key},
              {"prompt_text", r.prompt.prompt_text},
              {"status", to_string(r.prompt.status)}}},
            {"params", params_json(r.params)},
            {"seed", r.seed},
            {"replicate", r.replicate},
            {"output_path", r.output_path},
            {"backend",
             {{"text_encoder_source", r.backend.text_encoder_source},
              {"denoiser_source", r.backend.denoiser_source},
              {"autoencoder_source", r.backend.autoencoder_source}}},
            {"status", r.status == RecordStatus::OK ? "OK" : "FAILED"},
            {"reason", r.reason}};
}

CounterfactualRecord record_from_json(const json& j) {
    if (j.value("schema", "") != kManifestSchema)
        throw ValidationError("unsupported manifest schema '" + j.value("schema", "") + "'");
    CounterfactualRecord r;
    r.output_id = j.at("output_id").get<std::string>();
    r.source_scan_id = j.at("source_scan_id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "edit" && kind != "baseline") throw ValidationError("unknown record kind '" + kind + "'");
    r.kind = kind == "edit" ? RecordKind::EDIT : RecordKind::BASELINE;
    const auto& p = j.at("prompt");
    r.prompt.pathology_key = p.at("pathology_key").get<std::string>();
    r.prompt.prompt_text = p.at("prompt_text").get<std::string>();
    r.prompt.status = p.at("status").get<std::string>() == "FINAL" ? PromptStatus::FINAL : PromptStatus::TESTED_ONLY;
    const auto& q = j.at("params");
    r.params.guidance_scale = q.at("guidance_scale").get<double>();
    r.params.strength = q.at("strength").get<double>();
    r.params.inference_steps = q.at("inference_steps").get<int>();
    r.params.image_size = q.at("image_size").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.replicate = j.at("replicate").get<int>();
    r.output_path = j.at("output_path").get<std::string>();
    const auto& b = j.at("backend");
    r.backend = {b.at("text_encoder_source").get<std::string>(), b.at("denoiser_source").get<std::string>(),
                 b.at("autoencoder_source").get<std::string>()};
    r.status = j.at("status").get<std::string>() == "OK" ? RecordStatus::OK : RecordStatus::FAILED;
    r.reason = j.value("reason", "");
    return r;
}

bool Manifest::complete() const { return failed() == 0; }

std::size_t Manifest::failed() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                  [](const auto& r) { return r.status == RecordStatus::FAILED; }));
}

std::string Manifest::to_jsonl() const {
    std::string out;
    for (const auto& r : records) {
        out += jsonl::dump_line(to_json(r));
        out.push_back('\n');
    }
    return out;
}

std::string Manifest::hash() const { return sha256_hex(to_jsonl()); }

void Manifest::write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << to_jsonl();
}

Manifest Manifest::read(const fs::path& path) {
    Manifest m;
    jsonl::for_each(path, [&](const json& j, std::size_t line) {
        try {
            m.records.push_back(record_from_json(j));
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return m;
}

std::uint64_t derive_seed(const std::string& source_scan_id, const std::string& pathology_key, int replicate,
                          std::uint64_t run_seed) {
    return stable_hash64({"cxrcf-seed/1", source_scan_id, pathology_key, std::to_string(replicate),
                          std::to_string(run_seed)});
}

ImageLoader disk_loader() {
    return [](const std::string& path) { return load_image(path); };
}

std::vector<SourceScan> sources_from(const std::vector<ScanRecord>& scans) {
    std::vector<SourceScan> out;
    out.reserve(scans.size());
    for (const auto& s : scans) out.push_back({s.scan_id, s.image_path});
    return out;
}

namespace {

std::string output_id_for(const EditJob& j, bool include_params) {
    std::string key = j.source_scan_id + "|" + j.prompt.pathology_key + "|" + std::to_string(j.replicate) + "|" +
                      std::to_string(j.seed);
    if (include_params) {
        std::ostringstream os;
        os.precision(17);
        os << "|" << j.params.guidance_scale << "|" << j.params.strength;
        key += os.str();
    }
    return (j.kind == RecordKind::BASELINE ? "base-" : "cf-") + sha256_hex(key).substr(0, 20);
}

EditJob make_edit_job(const SourceScan& s, const PromptSpec& p, const EditorParams& params, int replicate,
                      std::uint64_t run_seed) {
    EditJob j;
    j.kind = RecordKind::EDIT;
    j.source_scan_id = s.scan_id;
    j.source_image = s.image_path;
    j.prompt = p;
    j.params = params;
    j.replicate = replicate;
    j.seed = derive_seed(s.scan_id, p.pathology_key, replicate, run_seed);
    j.output_id = output_id_for(j, false);
    return j;
}

CounterfactualRecord execute(const EditingBackend& editor, const GeneratorBackend* generator, const EditJob& job,
                             const GenerationContext& ctx) {
    CounterfactualRecord r;
    r.output_id = job.output_id;
    r.source_scan_id = job.source_scan_id;
    r.kind = job.kind;
    r.prompt = job.prompt;
    r.params = job.params;
    r.seed = job.seed;
    r.replicate = job.replicate;
    r.output_path = (fs::path("images") / (job.output_id + ".png")).string();
    r.backend = editor.descriptor();
    try {
        job.params.validate();
        Image out;
        if (job.kind == RecordKind::BASELINE) {
            if (!generator) throw ConfigError("baseline job without a generator backend");
            out = generator->generate(job.prompt.prompt_text, job.params, job.seed);
        } else {
            out = editor.edit(ctx.loader(job.source_image), job.prompt.prompt_text, job.params, job.seed);
        }
        if (out.width != job.params.image_size || out.height != job.params.image_size)
            throw Error("backend returned an image of the wrong size");
        save_png(out, ctx.out_dir / r.output_path);
    } catch (const std::exception& e) {
        r.status = RecordStatus::FAILED;
        r.reason = e.what();
        spdlog::error("generation of {} failed: {}", job.output_id, e.what());
    }
    return r;
}

} // namespace

CounterfactualRecord edit_one(const EditingBackend& backend, const SourceScan& scan, const PromptSpec& prompt,
                              const EditorParams& params, int replicate, std::uint64_t run_seed,
                              const GenerationContext& ctx) {
    return execute(backend, nullptr, make_edit_job(scan, prompt, params, replicate, run_seed), ctx);
}

std::vector<EditJob> plan_eval_cohort(const std::vector<SourceScan>& scans, const std::vector<PromptSpec>& prompts,
                                      const EditorParams& params, std::uint64_t run_seed) {
    std::vector<EditJob> jobs;
    jobs.reserve(scans.size() * prompts.size());
    for (const auto& s : scans)
        for (const auto& p : prompts) jobs.push_back(make_edit_job(s, p, params, 0, run_seed));
    return jobs;
}

TrainingPlan plan_training_cohort(std::size_t n_baselines, const std::vector<PromptSpec>& prompts, int replicates,
                                  const EditorParams& params, std::uint64_t run_seed) {
    TrainingPlan plan;
    plan.baselines.reserve(n_baselines);
    plan.edits.reserve(n_baselines * prompts.size() * static_cast<std::size_t>(std::max(replicates, 0)));
    const int width = std::max<int>(6, static_cast<int>(std::to_string(n_baselines).size()));
    for (std::size_t i = 0; i < n_baselines; ++i) {
        std::string idx = std::to_string(i);
        idx.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(idx.size()))), '0');
        EditJob b;
        b.kind = RecordKind::BASELINE;
        b.source_scan_id = "synth-" + idx;
        b.prompt = no_finding_prompt();
        b.params = params;
        b.seed = derive_seed(b.source_scan_id, b.prompt.pathology_key, 0, run_seed);
        b.output_id = "synth-" + idx;
        plan.baselines.push_back(b);
    }
    for (const auto& b : plan.baselines) {
        const SourceScan src{b.output_id, ""};
        for (const auto& p : prompts)
            for (int r = 0; r < replicates; ++r) plan.edits.push_back(make_edit_job(src, p, params, r, run_seed));
    }
    return plan;
}

std::vector<EditJob> plan_sweep(const std::vector<SourceScan>& scans, const std::vector<double>& guidance_grid,
                                const std::vector<double>& strength_grid, const std::vector<PromptSpec>& prompts,
                                const EditorParams& base, std::uint64_t run_seed) {
    if (guidance_grid.empty() || strength_grid.empty()) throw ArgumentError("sweep grids must be nonempty");
    std::vector<EditJob> jobs;
    jobs.reserve(scans.size() * prompts.size() * guidance_grid.size() * strength_grid.size());
    for (const auto& s : scans)
        for (const auto& p : prompts)
            for (double st : strength_grid)
                for (double g : guidance_grid) {
                    EditorParams params = base;
                    params.guidance_scale = g;
                    params.strength = st;
                    EditJob j = make_edit_job(s, p, params, 0, run_seed);
                    j.output_id = output_id_for(j, true);
                    jobs.push_back(std::move(j));
                }
    return jobs;
}

Manifest run_jobs(const EditingBackend& editor, const GeneratorBackend* generator, const std::vector<EditJob>& jobs,
                  const GenerationContext& ctx) {
    Manifest m;
    m.records.resize(jobs.size());
    parallel_for(
        jobs.size(), [&](std::size_t i) { m.records[i] = execute(editor, generator, jobs[i], ctx); },
        ctx.threads ? ctx.threads : default_threads());
    return m;
}

Manifest generate_eval_cohort(const EditingBackend& backend, const std::vector<SourceScan>& no_finding_scans,
                              const std::vector<PromptSpec>& prompts, const EditorParams& params,
                              std::uint64_t run_seed, const GenerationContext& ctx) {
    auto m = run_jobs(backend, nullptr, plan_eval_cohort(no_finding_scans, prompts, params, run_seed), ctx);
    if (!m.complete()) spdlog::warn("evaluation manifest incomplete: {} failed records", m.failed());
    return m;
}

Manifest generate_training_cohort(const GeneratorBackend& generator, const EditingBackend& editor,
                                  std::size_t n_baselines, const std::vector<PromptSpec>& prompts, int replicates,
                                  const EditorParams& params, std::uint64_t run_seed, const GenerationContext& ctx) {
    const auto plan = plan_training_cohort(n_baselines, prompts, replicates, params, run_seed);
    Manifest m = run_jobs(editor, &generator, plan.baselines, ctx);
    // Edits read the baselines just written.
    auto edits = plan.edits;
    for (auto& e : edits) e.source_image = (ctx.out_dir / "images" / (e.source_scan_id + ".png")).string();
    Manifest rest = run_jobs(editor, nullptr, edits, ctx);
    m.records.insert(m.records.end(), rest.records.begin(), rest.records.end());
    if (!m.complete()) spdlog::warn("training manifest incomplete: {} failed records", m.failed());
    return m;
}

Manifest sweep_params(const EditingBackend& backend, const std::vector<SourceScan>& scans,
                      const std::vector<double>& guidance_grid, const std::vector<double>& strength_grid,
                      const std::vector<PromptSpec>& prompts, const EditorParams& base, std::uint64_t run_seed,
                      const GenerationContext& ctx) {
    auto m = run_jobs(backend, nullptr, plan_sweep(scans, guidance_grid, strength_grid, prompts, base, run_seed), ctx);
    std::ofstream idx(ctx.out_dir / "review_index.csv", std::ios::binary | std::ios::trunc);
    write_review_index(m, idx);
    return m;
}

void write_review_index(const Manifest& sweep, std::ostream& out) {
    csv::write_row(out, {"review_index", "source_scan_id", "pathology_key", "prompt_text", "strength",
                         "guidance_scale", "output_path", "status"});
    std::size_t i = 0;
    for (const auto& r : sweep.records) {
        std::ostringstream st, g;
        st << r.params.strength;
        g << r.params.guidance_scale;
        csv::write_row(out, {std::to_string(++i), r.source_scan_id, r.prompt.pathology_key, r.prompt.prompt_text,
                             st.str(), g.str(), r.output_path, r.status == RecordStatus::OK ? "OK" : "FAILED"});
    }
}

} // namespace cxrcf
