#include <algorithm>

#include "fullanno/errors.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/pipeline.hpp"
#include "fullanno/version.hpp"
#include "json.hpp"

namespace fullanno {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string checkpoint_to_json(const PipelineCheckpoint& c) {
    ojson j;
    j["engine_version"] = kEngineVersion;
    j["config_hash"] = c.config_hash;
    j["dataset"] = c.dataset;
    ojson sources = ojson::array();
    for (const auto& src : c.sources) sources.push_back(ojson{{"path", src.path}, {"sha256", src.sha256}});
    j["sources"] = std::move(sources);
    ojson completed = ojson::object();
    for (const auto& [stage, ids] : c.completed) completed[std::to_string(stage)] = ids;
    j["completed"] = std::move(completed);
    j["state_file"] = c.state_file;
    j["state_sha256"] = c.state_sha256;
    j["state_lines"] = c.state_lines;
    return j.dump(2) + "\n";
}

PipelineCheckpoint checkpoint_from_json(const std::string& text) {
    PipelineCheckpoint c;
    try {
        const json j = json::parse(text);
        c.config_hash = j.at("config_hash").get<std::string>();
        c.dataset = j.at("dataset").get<std::string>();
        for (const auto& src : j.at("sources")) {
            c.sources.push_back({src.at("path").get<std::string>(), src.at("sha256").get<std::string>()});
        }
        for (const auto& [stage, ids] : j.at("completed").items()) {
            c.completed[std::stoi(stage)] = ids.get<std::set<ImageId>>();
        }
        c.state_file = j.at("state_file").get<std::string>();
        c.state_sha256 = j.at("state_sha256").get<std::string>();
        c.state_lines = j.at("state_lines").get<std::int64_t>();
    } catch (const std::exception& e) {
        throw CheckpointMismatch(std::string("unreadable checkpoint: ") + e.what());
    }
    return c;
}

bool CheckpointStore::exists() const { return std::filesystem::exists(checkpoint_file()); }

std::optional<PipelineCheckpoint> CheckpointStore::read() const {
    if (!exists()) return std::nullopt;
    return checkpoint_from_json(read_file(checkpoint_file()));
}

void CheckpointStore::clear() const {
    std::error_code ec;
    if (!std::filesystem::exists(dir_)) return;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        const auto name = entry.path().filename().string();
        if (name == "checkpoint.json" || (name.rfind("state-", 0) == 0 && entry.path().extension() == ".jsonl")) {
            std::filesystem::remove(entry.path(), ec);
        }
    }
}

PipelineCheckpoint CheckpointStore::save(const DatasetHandle& handle, const std::string& config_hash) {
    PipelineCheckpoint next;
    next.config_hash = config_hash;
    next.dataset = handle.name;
    next.sources = handle.source_manifest;
    for (int stage = 0; stage <= 3; ++stage) {
        auto& ids = next.completed[stage];
        for (const auto& r : handle.images) {
            if (r.provenance.complete(stage)) ids.insert(r.image_id);
        }
    }

    const auto previous = read();
    if (previous && previous->config_hash == config_hash) {
        for (const auto& [stage, ids] : previous->completed) {
            const auto& now = next.completed[stage];
            if (!std::includes(now.begin(), now.end(), ids.begin(), ids.end())) {
                throw CheckpointMismatch("completed set for stage " + std::to_string(stage) + " would shrink");
            }
        }
    }

    const std::string text = render_jsonl(handle);
    next.state_sha256 = sha256_hex(text);
    next.state_lines = static_cast<std::int64_t>(handle.images.size());
    next.state_file = "state-" + next.state_sha256.substr(0, 16) + ".jsonl";
    write_file_atomic(dir_ / next.state_file, text);
    write_file_atomic(checkpoint_file(), checkpoint_to_json(next));

    if (previous && previous->state_file != next.state_file) {
        std::error_code ec;
        std::filesystem::remove(dir_ / previous->state_file, ec);
    }
    return next;
}

DatasetHandle CheckpointStore::load(const std::string& expected_config_hash, PipelineCheckpoint* out) const {
    const auto c = read();
    if (!c) throw CheckpointMismatch("no checkpoint in " + dir_.string());
    if (c->config_hash != expected_config_hash) {
        throw CheckpointMismatch("checkpoint was written with config " + c->config_hash.substr(0, 12) +
                                 " but the current config is " + expected_config_hash.substr(0, 12));
    }
    const std::string text = read_file(dir_ / c->state_file);
    if (sha256_hex(text) != c->state_sha256) {
        throw CheckpointMismatch("state file " + c->state_file + " does not match its checkpoint hash");
    }
    DatasetHandle handle = parse_jsonl(text);
    handle.name = c->dataset;
    handle.source_manifest = c->sources;
    if (static_cast<std::int64_t>(handle.images.size()) != c->state_lines) {
        throw CheckpointMismatch("state file line count differs from checkpoint");
    }
    if (out) *out = *c;
    return handle;
}

}  // namespace fullanno
