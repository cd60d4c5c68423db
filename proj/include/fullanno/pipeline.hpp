#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fullanno/gateway.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/model.hpp"

namespace fullanno {

class Tokenizer;

struct PipelineConfig {
    std::string dataset_name = "dataset";
    /// Either COCO inputs or an already-ingested enriched JSONL.
    std::optional<std::filesystem::path> coco_instances;
    std::optional<std::filesystem::path> coco_captions;
    std::optional<std::filesystem::path> enriched_input;

    std::vector<EndpointConfig> endpoints;
    std::vector<std::string> detector_ids;
    std::vector<std::string> ocr_ids;
    std::string captioner_id;
    std::string verifier_id;
    std::string integrator_id;

    double conf_threshold = 0.3;
    double iou_threshold = 0.75;
    bool class_aware_nms = true;
    double context_ratio = 0.2;
    std::size_t max_simple_captions = 2;
    int worker_count = 4;
    std::size_t batch_size = 64;
    std::string tokenizer_id = "whitespace";

    std::filesystem::path output_path = "enriched.jsonl";
    std::filesystem::path checkpoint_dir = "checkpoint";
    std::optional<std::filesystem::path> cache_dir;

    /// Serve every endpoint from StubTransport instead of the network.
    bool dry_run = false;
    std::optional<std::filesystem::path> stub_fixtures;

    /// Throws ConfigError describing the first problem found.
    void check() const;
    /// Hash over every setting that can change the output. Worker count,
    /// batch size and file locations are excluded.
    std::string hash() const;
    std::string to_json() const;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

struct PipelineCheckpoint {
    std::string config_hash;
    std::string dataset;
    std::vector<SourceFile> sources;
    std::map<int, std::set<ImageId>> completed;  // stage -> image ids
    std::string state_file;  // relative to the checkpoint directory
    std::string state_sha256;
    std::int64_t state_lines = 0;

    friend bool operator==(const PipelineCheckpoint&, const PipelineCheckpoint&) = default;
};

std::string checkpoint_to_json(const PipelineCheckpoint& checkpoint);
PipelineCheckpoint checkpoint_from_json(const std::string& text);

/// `<dir>/checkpoint.json` plus the partial dataset in
/// `<dir>/state-<hash prefix>.jsonl`. The state file is written before the
/// checkpoint that names it, so a crash between the two leaves the previous
/// checkpoint intact.
class CheckpointStore {
public:
    explicit CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    bool exists() const;
    /// Saves `handle` as the partial state. Completed sets may only grow;
    /// shrinking one throws CheckpointMismatch.
    PipelineCheckpoint save(const DatasetHandle& handle, const std::string& config_hash);
    /// Loads the partial state. Throws CheckpointMismatch when the config
    /// hash or the state file hash does not match.
    DatasetHandle load(const std::string& expected_config_hash, PipelineCheckpoint* out = nullptr) const;

    std::filesystem::path checkpoint_file() const { return dir_ / "checkpoint.json"; }
    std::optional<PipelineCheckpoint> read() const;
    void clear() const;

private:
    std::filesystem::path dir_;
};

struct FailureRecord {
    ImageId image_id = 0;
    StageFailure failure;
};

/// Runs a stage over one dataset. Images that already finished the stage or
/// failed earlier are skipped; an image that is not failed but lacks the
/// previous stage makes the whole call throw StageViolation.
class Engine {
public:
    Engine(PipelineConfig config, std::shared_ptr<Gateway> gateway,
           std::shared_ptr<const Tokenizer> tokenizer);

    /// Called after each completed batch with the dataset as it stands.
    using BatchHook = std::function<void(const DatasetHandle&)>;

    DatasetHandle run_stage1(DatasetHandle handle, const BatchHook& hook = {});
    DatasetHandle run_stage2(DatasetHandle handle, const BatchHook& hook = {});
    DatasetHandle run_stage3(DatasetHandle handle, const BatchHook& hook = {});
    DatasetHandle run_stage(int stage, DatasetHandle handle, const BatchHook& hook = {});

    /// Per-image units; exposed for tests.
    EnrichedImageAnnotation stage1_image(const EnrichedImageAnnotation& record);
    EnrichedImageAnnotation stage2_image(const EnrichedImageAnnotation& record);
    EnrichedImageAnnotation stage3_image(const EnrichedImageAnnotation& record);

    const PipelineConfig& config() const { return config_; }
    Gateway& gateway() { return *gateway_; }
    const Tokenizer& tokenizer() const { return *tokenizer_; }

private:
    PipelineConfig config_;
    std::shared_ptr<Gateway> gateway_;
    std::shared_ptr<const Tokenizer> tokenizer_;
};

/// Builds the gateway the config asks for: StubTransport when dry_run is
/// set, HttpTransport otherwise; DirectoryCache when cache_dir is set.
std::shared_ptr<Gateway> make_gateway(const PipelineConfig& config,
                                      std::shared_ptr<Clock> clock = nullptr);

struct RunOptions {
    int through_stage = 3;
    bool resume = false;
    /// Stop (as if interrupted) after this many checkpointed batches.
    std::optional<std::int64_t> stop_after_batches;
    std::shared_ptr<Gateway> gateway;  // built from the config when null
};

struct RunReport {
    bool interrupted = false;
    int completed_through = 0;
    std::int64_t batches = 0;
    std::optional<Manifest> manifest;
    std::vector<FailureRecord> failures;
};

/// ingest -> stage 1 -> stage 2 -> stage 3 -> write_enriched, checkpointing
/// after every batch. The output file is written once `through_stage`
/// finishes.
RunReport run_all(const PipelineConfig& config, const RunOptions& options = {});

DatasetHandle ingest(const PipelineConfig& config, const Tokenizer& tokenizer);

std::vector<FailureRecord> collect_failures(const DatasetHandle& handle);

// --- statistics ------------------------------------------------------------

StatsReport compute_stats(const DatasetHandle& handle, const Tokenizer& tokenizer);

/// Aligned text table with the columns Dataset, Simple Cap, Dense Cap,
/// Region Cap, OCR, # Images, # Boxes, ATL for Dense Cap, ATL for Region Cap.
std::string render_stats_table(const StatsReport& report);
std::string stats_to_json(const StatsReport& report);

}  // namespace fullanno
