#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxrcf/core/image.hpp"
#include "cxrcf/core/kvconfig.hpp"
#include "cxrcf/toy_shapes.hpp"

namespace cxrcf {

struct ScanRecord;

enum class PromptStatus { FINAL, TESTED_ONLY };

struct PromptSpec {
    std::string pathology_key;
    std::string prompt_text;
    PromptStatus status = PromptStatus::FINAL;

    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

std::string to_string(PromptStatus s);

/// The eight editing prompts, in reader-column order. Emphysema and nodule
/// are TESTED_ONLY.
const std::vector<PromptSpec>& prompt_registry();
/// Only the FINAL prompts (the six study findings).
std::vector<PromptSpec> final_prompts();
/// Every prompt phrasing tried per pathology during prompt selection.
const std::map<std::string, std::vector<std::string>>& tested_prompt_variants();
/// Prompt used for generated no-finding baselines.
const PromptSpec& no_finding_prompt();
/// Looks up a registry prompt by pathology key; throws NotFoundError.
const PromptSpec& prompt_for(const std::string& pathology_key);

struct EditorParams {
    double guidance_scale = 4.0;
    double strength = 0.4;
    int inference_steps = 50;
    int image_size = 512;

    void validate() const;  ///< throws ValidationError
    friend bool operator==(const EditorParams&, const EditorParams&) = default;
};

/// Evenly spaced grid of n values over [lo, hi], endpoints included.
std::vector<double> linspace(double lo, double hi, std::size_t n);
std::vector<double> default_guidance_grid();  ///< 10 values over [1.5, 10]
std::vector<double> default_strength_grid();  ///< 10 values over [0.2, 1]

inline constexpr const char* kMockSource = "builtin:mock";

struct BackendDescriptor {
    std::string text_encoder_source;
    std::string denoiser_source;
    std::string autoencoder_source;

    static BackendDescriptor mock();
    bool is_mock() const;

    friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

struct CompositionCheck {
    bool matches_reference = true;
    std::vector<std::string> warnings;
};

/// Checks the composition rule: text encoder and denoiser from the same
/// finetuned generator, autoencoder from the base img2img architecture. When
/// `generator_id` / `base_id` are known they are compared exactly; otherwise
/// only the structural rule is checked.
CompositionCheck check_composition(const BackendDescriptor& d, const std::optional<std::string>& generator_id = {},
                                   const std::optional<std::string>& base_id = {});

class EditingBackend {
public:
    virtual ~EditingBackend() = default;
    virtual std::string name() const = 0;
    virtual const BackendDescriptor& descriptor() const = 0;
    /// Returns an image of params.image_size squared. Must be deterministic in
    /// (input, prompt_text, params, seed) for backends that claim determinism.
    virtual Image edit(const Image& input, const std::string& prompt_text, const EditorParams& params,
                       std::uint64_t seed) const = 0;
};

/// Text-to-image generator used for synthetic baselines.
class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;
    virtual std::string name() const = 0;
    virtual Image generate(const std::string& prompt_text, const EditorParams& params, std::uint64_t seed) const = 0;
};

/// Test double: resizes the input, then stamps a prompt-keyed shape at a
/// seed-derived position. Stamp intensity scales with strength / 0.4 (capped
/// at 2x), so strength 0 leaves the image unchanged.
class MockBackend final : public EditingBackend {
public:
    MockBackend();
    explicit MockBackend(std::map<std::string, toy::StampStyle> styles);

    std::string name() const override { return "mock"; }
    const BackendDescriptor& descriptor() const override { return descriptor_; }
    Image edit(const Image& input, const std::string& prompt_text, const EditorParams& params,
               std::uint64_t seed) const override;

    /// Style used for a prompt; unknown prompts get a shape keyed by a hash of the text.
    toy::StampStyle style_for(const std::string& prompt_text) const;
    static std::map<std::string, toy::StampStyle> default_styles();

private:
    BackendDescriptor descriptor_ = BackendDescriptor::mock();
    std::map<std::string, toy::StampStyle> styles_;
};

/// Toy text-to-image generator: noise-textured background, no findings.
class ToyGenerator final : public GeneratorBackend {
public:
    ToyGenerator(float level = 0.3f, float noise_sigma = 0.06f) : level_(level), sigma_(noise_sigma) {}
    std::string name() const override { return "toy"; }
    Image generate(const std::string& prompt_text, const EditorParams& params, std::uint64_t seed) const override;

private:
    float level_;
    float sigma_;
};

struct ComposeOptions {
    /// Command line of the external img2img runner (composed backend only).
    std::string runner_command;
    std::optional<std::string> generator_id;
    std::optional<std::string> base_id;
    std::filesystem::path scratch_dir;
};

/// Builds a backend from a descriptor. The mock descriptor yields MockBackend.
/// Otherwise every source must resolve (an existing local path, or an
/// hf:// / http(s):// URI handed to the runner), local diffusers layouts are
/// checked for shape compatibility, and the composition rule is evaluated;
/// deviations are logged as warnings.
std::unique_ptr<EditingBackend> compose_backend(const BackendDescriptor& descriptor, const ComposeOptions& options = {});

/// Text-to-image generator for synthetic baselines: ToyGenerator for the mock
/// descriptor, otherwise the runner without an input image.
std::unique_ptr<GeneratorBackend> compose_generator(const BackendDescriptor& descriptor,
                                                    const ComposeOptions& options = {});

/// Reads text_encoder / denoiser / autoencoder (+ optional generator, base,
/// runner) from a key-value config.
std::pair<BackendDescriptor, ComposeOptions> backend_from_config(const KvConfig& config);

enum class RecordKind { EDIT, BASELINE };
enum class RecordStatus { OK, FAILED };

struct CounterfactualRecord {
    std::string output_id;
    std::string source_scan_id;
    RecordKind kind = RecordKind::EDIT;
    PromptSpec prompt;
    EditorParams params;
    std::uint64_t seed = 0;
    int replicate = 0;
    std::string output_path;  ///< relative to the manifest's directory
    BackendDescriptor backend;
    RecordStatus status = RecordStatus::OK;
    std::string reason;

    friend bool operator==(const CounterfactualRecord&, const CounterfactualRecord&) = default;
};

nlohmann::json to_json(const CounterfactualRecord& r);
CounterfactualRecord record_from_json(const nlohmann::json& j);

inline constexpr const char* kManifestSchema = "cxrcf.counterfactual/1";

struct Manifest {
    std::vector<CounterfactualRecord> records;

    bool complete() const;  ///< no FAILED records
    std::size_t failed() const;
    std::string to_jsonl() const;
    std::string hash() const;  ///< SHA-256 of to_jsonl()
    void write(const std::filesystem::path& path) const;
    static Manifest read(const std::filesystem::path& path);  ///< line-numbered errors
};

/// Pure seed derivation from the record identity and the run seed.
std::uint64_t derive_seed(const std::string& source_scan_id, const std::string& pathology_key, int replicate,
                          std::uint64_t run_seed);

/// One unit of generation work.
struct EditJob {
    RecordKind kind = RecordKind::EDIT;
    std::string source_scan_id;
    std::string source_image;  ///< path of the input; empty for generated baselines
    PromptSpec prompt;
    EditorParams params;
    int replicate = 0;
    std::uint64_t seed = 0;
    std::string output_id;
};

using ImageLoader = std::function<Image(const std::string& path)>;
ImageLoader disk_loader();

struct GenerationContext {
    std::filesystem::path out_dir;  ///< manifest dir; images go under out_dir/images
    ImageLoader loader = disk_loader();
    unsigned threads = 0;  ///< 0 = hardware concurrency
};

/// A source image to edit.
struct SourceScan {
    std::string scan_id;
    std::string image_path;
};

std::vector<SourceScan> sources_from(const std::vector<ScanRecord>& scans);

/// Edits one image and writes it; failures are recorded, not thrown.
CounterfactualRecord edit_one(const EditingBackend& backend, const SourceScan& scan, const PromptSpec& prompt,
                              const EditorParams& params, int replicate, std::uint64_t run_seed,
                              const GenerationContext& ctx);

/// (scan, prompt) jobs for the evaluation cohort: |scans| x |prompts|.
std::vector<EditJob> plan_eval_cohort(const std::vector<SourceScan>& scans, const std::vector<PromptSpec>& prompts,
                                      const EditorParams& params, std::uint64_t run_seed);

struct TrainingPlan {
    std::vector<EditJob> baselines;
    std::vector<EditJob> edits;
    std::size_t total() const { return baselines.size() + edits.size(); }
};

/// n baselines plus n x |prompts| x replicates edits.
TrainingPlan plan_training_cohort(std::size_t n_baselines, const std::vector<PromptSpec>& prompts, int replicates,
                                  const EditorParams& params, std::uint64_t run_seed);

/// |scans| x |guidance| x |strength| x |prompts| jobs. The seed depends on
/// (scan, prompt) only, so grid cells differ by parameters alone.
std::vector<EditJob> plan_sweep(const std::vector<SourceScan>& scans, const std::vector<double>& guidance_grid,
                                const std::vector<double>& strength_grid, const std::vector<PromptSpec>& prompts,
                                const EditorParams& base, std::uint64_t run_seed);

/// Executes jobs in parallel; records come back in job order.
Manifest run_jobs(const EditingBackend& editor, const GeneratorBackend* generator, const std::vector<EditJob>& jobs,
                  const GenerationContext& ctx);

Manifest generate_eval_cohort(const EditingBackend& backend, const std::vector<SourceScan>& no_finding_scans,
                              const std::vector<PromptSpec>& prompts, const EditorParams& params,
                              std::uint64_t run_seed, const GenerationContext& ctx);

/// Generates baselines first, then edits each baseline.
Manifest generate_training_cohort(const GeneratorBackend& generator, const EditingBackend& editor,
                                  std::size_t n_baselines, const std::vector<PromptSpec>& prompts, int replicates,
                                  const EditorParams& params, std::uint64_t run_seed, const GenerationContext& ctx);

/// Runs the sweep and writes review_index.csv next to the manifest, ordered by
/// scan, prompt, strength, guidance.
Manifest sweep_params(const EditingBackend& backend, const std::vector<SourceScan>& scans,
                      const std::vector<double>& guidance_grid, const std::vector<double>& strength_grid,
                      const std::vector<PromptSpec>& prompts, const EditorParams& base, std::uint64_t run_seed,
                      const GenerationContext& ctx);

void write_review_index(const Manifest& sweep, std::ostream& out);

} // namespace cxrcf
