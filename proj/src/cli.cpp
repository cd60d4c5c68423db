#include "fullanno/cli.hpp"

#include <ostream>

#include "CLI11.hpp"
#include "fullanno/errors.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/pipeline.hpp"
#include "fullanno/serialize.hpp"
#include "fullanno/tokenizer.hpp"
#include "json.hpp"

namespace fullanno::cli {

namespace {

using ojson = nlohmann::ordered_json;

constexpr int kOk = 0;
constexpr int kDataError = 1;
constexpr int kUsageError = 2;

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << ojson{{"error", ojson{{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

struct IngestArgs {
    std::string instances;
    std::string captions;
    std::string vg_regions;
    std::string out;
    std::string name = "dataset";
    std::string tokenizer = "whitespace";
};

struct RunArgs {
    std::string config;
    std::string stage = "all";
    bool resume = false;
    int workers = 0;
    bool dry_run = false;
    std::string out;
};

struct StatsArgs {
    std::string input;
    std::string tokenizer = "whitespace";
    bool json = false;
};

struct ExportArgs {
    std::string input;
    std::string out;
};

int do_ingest(const IngestArgs& a, std::ostream& out) {
    const auto tokenizer = make_tokenizer(a.tokenizer);
    std::optional<std::filesystem::path> captions;
    if (!a.captions.empty()) captions = a.captions;
    DatasetHandle handle = load_coco(a.instances, captions, *tokenizer);
    handle.name = a.name;

    ojson summary;
    summary["images"] = handle.images.size();
    summary["input_annotations"] = handle.report.input_annotations;
    summary["loaded_objects"] = handle.report.loaded_objects;
    summary["dropped_boxes"] = handle.report.dropped_boxes;
    summary["clamped_boxes"] = handle.report.clamped_boxes;
    summary["input_captions"] = handle.report.input_captions;
    if (!a.vg_regions.empty()) {
        // Region phrases are candidates only; they never become objects.
        const VgRegions vg = load_vg_regions(a.vg_regions);
        std::int64_t phrases = 0;
        for (const auto& [id, list] : vg.regions) phrases += static_cast<std::int64_t>(list.size());
        summary["vg_images"] = vg.regions.size();
        summary["vg_regions"] = phrases;
        summary["vg_skipped"] = vg.skipped;
        summary["vg_clamped"] = vg.clamped;
    }
    const Manifest m = write_enriched(handle, a.out, ManifestInfo{a.name, tokenizer->id(), ""});
    summary["output"] = a.out;
    summary["content_sha256"] = m.content_sha256;
    out << summary.dump(2) << "\n";
    return kOk;
}

int do_run(const RunArgs& a, std::ostream& out) {
    PipelineConfig config = load_config(a.config);
    if (a.workers > 0) config.worker_count = a.workers;
    if (a.dry_run) config.dry_run = true;
    if (!a.out.empty()) config.output_path = a.out;

    RunOptions options;
    options.resume = a.resume;
    options.through_stage = a.stage == "all" ? 3 : std::stoi(a.stage);
    const RunReport report = run_all(config, options);

    ojson summary;
    summary["completed_through"] = report.completed_through;
    summary["batches"] = report.batches;
    summary["output"] = config.output_path.string();
    if (report.manifest) {
        summary["lines"] = report.manifest->line_count;
        summary["content_sha256"] = report.manifest->content_sha256;
    }
    ojson failures = ojson::array();
    for (const auto& f : report.failures) {
        failures.push_back(ojson{{"image_id", f.image_id},
                                 {"stage", f.failure.stage},
                                 {"kind", f.failure.kind},
                                 {"message", f.failure.message}});
    }
    summary["failures"] = std::move(failures);
    out << summary.dump(2) << "\n";
    return kOk;
}

int do_stats(const StatsArgs& a, std::ostream& out) {
    const auto tokenizer = make_tokenizer(a.tokenizer);
    const StatsReport report = compute_stats(read_enriched(a.input), *tokenizer);
    out << (a.json ? stats_to_json(report) : render_stats_table(report));
    return kOk;
}

int do_export(const ExportArgs& a, std::ostream& out) {
    const DatasetHandle handle = read_enriched(a.input);
    std::string tokenizer_id = "whitespace";
    std::string config_hash;
    if (std::filesystem::exists(manifest_path_for(a.input))) {
        const Manifest m = read_manifest(manifest_path_for(a.input));
        tokenizer_id = m.tokenizer_id;
        config_hash = m.config_hash;
    }
    const Manifest m = write_enriched(handle, a.out, ManifestInfo{handle.name, tokenizer_id, config_hash});
    out << ojson{{"output", a.out}, {"lines", m.line_count}, {"content_sha256", m.content_sha256}}.dump(2) << "\n";
    return kOk;
}

int do_validate(const std::string& input, std::string tokenizer_id, std::ostream& out, std::ostream& err) {
    const DatasetHandle handle = read_enriched(input);
    // token lengths are checked with the tokenizer the file was written with
    if (tokenizer_id.empty()) {
        tokenizer_id = "whitespace";
        if (std::filesystem::exists(manifest_path_for(input))) {
            tokenizer_id = read_manifest(manifest_path_for(input)).tokenizer_id;
        }
    }
    const auto tokenizer = make_tokenizer(tokenizer_id);
    ojson problems = ojson::array();
    for (const auto& r : handle.images) {
        for (const auto& v : validate(r, tokenizer.get())) {
            problems.push_back(
                ojson{{"image_id", r.image_id}, {"field", v.field}, {"rule", v.rule}, {"detail", v.detail}});
        }
    }
    out << ojson{{"records", handle.images.size()}, {"violations", problems}}.dump(2) << "\n";
    if (!problems.empty()) {
        report_error(err, "InvariantViolation", std::to_string(problems.size()) + " violation(s) in " + input);
        return kDataError;
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Annotation enrichment engine", "fullanno"};
    app.require_subcommand(1);

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand("ingest", "Load COCO files into an enriched JSONL");
    ingest->add_option("--coco-instances", ingest_args.instances, "COCO detection JSON")->required();
    ingest->add_option("--coco-captions", ingest_args.captions, "COCO captions JSON");
    ingest->add_option("--vg-regions", ingest_args.vg_regions, "Visual Genome region_descriptions JSON");
    ingest->add_option("--out", ingest_args.out, "Output JSONL")->required();
    ingest->add_option("--name", ingest_args.name, "Dataset name");
    ingest->add_option("--tokenizer", ingest_args.tokenizer, "whitespace or bpe:<vocab.json>");

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "Run the enrichment stages");
    run_cmd->add_option("--config", run_args.config, "Pipeline config JSON")->required();
    run_cmd->add_option("--stage", run_args.stage, "Last stage to run")
        ->check(CLI::IsMember({"1", "2", "3", "all"}));
    run_cmd->add_flag("--resume", run_args.resume, "Continue from the checkpoint");
    run_cmd->add_option("--workers", run_args.workers, "Worker threads")->check(CLI::PositiveNumber);
    run_cmd->add_flag("--dry-run", run_args.dry_run, "Serve every endpoint from local stubs");
    run_cmd->add_option("--out", run_args.out, "Output JSONL (overrides the config)");

    StatsArgs stats_args;
    auto* stats = app.add_subcommand("stats", "Summarize an enriched JSONL");
    stats->add_option("--input", stats_args.input, "Enriched JSONL")->required();
    stats->add_option("--tokenizer", stats_args.tokenizer, "whitespace or bpe:<vocab.json>");
    stats->add_flag("--json", stats_args.json, "Emit JSON instead of a table");

    ExportArgs export_args;
    auto* exp = app.add_subcommand("export", "Rewrite an enriched JSONL in canonical form");
    exp->add_option("--input", export_args.input, "Enriched JSONL")->required();
    exp->add_option("--out", export_args.out, "Output JSONL")->required();

    std::string validate_input;
    std::string validate_tokenizer;
    auto* val = app.add_subcommand("validate", "Check every record of an enriched JSONL");
    val->add_option("--input", validate_input, "Enriched JSONL")->required();
    val->add_option("--tokenizer", validate_tokenizer, "Tokenizer for length checks (default: from the manifest)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        report_error(err, "UsageError", e.what());
        err << app.help();
        return kUsageError;
    }

    try {
        if (*ingest) return do_ingest(ingest_args, out);
        if (*run_cmd) return do_run(run_args, out);
        if (*stats) return do_stats(stats_args, out);
        if (*exp) return do_export(export_args, out);
        return do_validate(validate_input, validate_tokenizer, out, err);
    } catch (const ConfigError& e) {
        report_error(err, e.kind(), e.what());
        return kUsageError;
    } catch (const Error& e) {
        report_error(err, e.kind(), e.what());
        return kDataError;
    } catch (const std::exception& e) {
        report_error(err, "InternalError", e.what());
        return kDataError;
    }
}

}  // namespace fullanno::cli
