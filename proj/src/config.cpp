#include <set>

#include "fullanno/enrichment.hpp"
#include "fullanno/errors.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/pipeline.hpp"
#include "fullanno/version.hpp"
#include "json.hpp"

namespace fullanno {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void PipelineConfig::check() const {
    if (!coco_instances && !enriched_input) {
        throw ConfigError("dataset needs coco_instances or enriched_input");
    }
    if (!(iou_threshold >= 0 && iou_threshold <= 1)) throw ConfigError("iou_threshold must lie in [0,1]");
    if (!(conf_threshold >= 0 && conf_threshold <= 1)) throw ConfigError("conf_threshold must lie in [0,1]");
    if (!(context_ratio >= 0)) throw ConfigError("context_ratio must be >= 0");
    if (worker_count < 1) throw ConfigError("workers must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");

    std::map<std::string, Role> roles;
    for (const auto& e : endpoints) {
        e.check();
        if (!dry_run && e.base_url.empty()) throw ConfigError("endpoint " + e.endpoint_id + " has no base_url");
        if (!roles.emplace(e.endpoint_id, e.role).second) throw ConfigError("duplicate endpoint id " + e.endpoint_id);
    }
    auto require = [&](const std::string& id, Role role, const char* what) {
        auto it = roles.find(id);
        if (it == roles.end()) throw ConfigError(std::string(what) + " endpoint '" + id + "' is not configured");
        if (it->second != role) {
            throw ConfigError(std::string(what) + " endpoint '" + id + "' has role " + to_string(it->second));
        }
    };
    std::set<std::string> seen;
    for (const auto& id : detector_ids) {
        require(id, Role::Detector, "detector");
        if (id == kGroundTruthSource) throw ConfigError("detector id 'coco-gt' is reserved");
        if (!seen.insert(id).second) throw ConfigError("detector listed twice: " + id);
    }
    for (const auto& id : ocr_ids) require(id, Role::Ocr, "ocr");
    require(captioner_id, Role::Captioner, "captioner");
    require(integrator_id, Role::Integrator, "integrator");
    if (!ocr_ids.empty()) require(verifier_id, Role::Verifier, "verifier");
}

namespace {

ojson endpoint_identity(const EndpointConfig& e) {
    ojson j;
    j["endpoint_id"] = e.endpoint_id;
    j["role"] = to_string(e.role);
    j["protocol"] = to_string(e.protocol);
    j["model"] = e.model;
    j["temperature"] = e.temperature;
    j["max_output_tokens"] = e.max_output_tokens;
    j["priority"] = e.priority;
    return j;
}

ojson endpoint_json(const EndpointConfig& e) {
    ojson j = endpoint_identity(e);
    j["base_url"] = e.base_url;
    j["auth_env_var"] = e.auth_env_var;
    j["max_in_flight"] = e.max_in_flight;
    j["requests_per_minute"] = e.requests_per_minute;
    j["max_retries"] = e.max_retries;
    j["backoff_base_ms"] = e.backoff_base.count();
    j["timeout_ms"] = e.timeout.count();
    return j;
}

ojson opt_path(const std::optional<std::filesystem::path>& p) {
    return p ? ojson(p->string()) : ojson(nullptr);
}

}  // namespace

std::string PipelineConfig::hash() const {
    ojson j;
    j["engine_version"] = kEngineVersion;
    j["templates"] = templates::templates_hash();
    j["dataset"] = dataset_name;
    ojson eps = ojson::array();
    for (const auto& e : endpoints) eps.push_back(endpoint_identity(e));
    j["endpoints"] = std::move(eps);
    j["detectors"] = detector_ids;
    j["ocr"] = ocr_ids;
    j["captioner"] = captioner_id;
    j["verifier"] = verifier_id;
    j["integrator"] = integrator_id;
    j["conf_threshold"] = conf_threshold;
    j["iou_threshold"] = iou_threshold;
    j["class_aware_nms"] = class_aware_nms;
    j["context_ratio"] = context_ratio;
    j["max_simple_captions"] = max_simple_captions;
    // a vocabulary file is identified by content, not by where it lives
    j["tokenizer"] = tokenizer_id.rfind("bpe:", 0) == 0 ? "bpe:" + sha256_file(tokenizer_id.substr(4)) : tokenizer_id;
    j["dry_run"] = dry_run;
    j["stub_fixtures"] = stub_fixtures ? ojson(sha256_file(*stub_fixtures)) : ojson(nullptr);
    return sha256_hex(j.dump());
}

std::string PipelineConfig::to_json() const {
    ojson j;
    ojson ds;
    ds["name"] = dataset_name;
    ds["coco_instances"] = opt_path(coco_instances);
    ds["coco_captions"] = opt_path(coco_captions);
    ds["enriched_input"] = opt_path(enriched_input);
    j["dataset"] = std::move(ds);
    ojson eps = ojson::array();
    for (const auto& e : endpoints) eps.push_back(endpoint_json(e));
    j["endpoints"] = std::move(eps);
    ojson roles;
    roles["detectors"] = detector_ids;
    roles["ocr"] = ocr_ids;
    roles["captioner"] = captioner_id;
    roles["verifier"] = verifier_id;
    roles["integrator"] = integrator_id;
    j["roles"] = std::move(roles);
    j["conf_threshold"] = conf_threshold;
    j["iou_threshold"] = iou_threshold;
    j["class_aware_nms"] = class_aware_nms;
    j["context_ratio"] = context_ratio;
    j["max_simple_captions"] = max_simple_captions;
    j["workers"] = worker_count;
    j["batch_size"] = batch_size;
    j["tokenizer"] = tokenizer_id;
    j["output"] = output_path.string();
    j["checkpoint_dir"] = checkpoint_dir.string();
    j["cache_dir"] = opt_path(cache_dir);
    j["dry_run"] = dry_run;
    j["stub_fixtures"] = opt_path(stub_fixtures);
    return j.dump(2) + "\n";
}

namespace {

template <typename T>
T get(const json& j, const char* key, T fallback, const std::string& at) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(at + "." + key + ": wrong type");
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& at) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(at + ": unknown key '" + key + "'");
    }
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, {"dataset", "endpoints", "roles", "conf_threshold", "iou_threshold", "class_aware_nms",
                       "context_ratio", "max_simple_captions", "workers", "batch_size", "tokenizer", "output",
                       "checkpoint_dir", "cache_dir", "dry_run", "stub_fixtures"},
                   "$");

    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        std::filesystem::path path(p);
        if (path.is_relative() && !base_dir.empty()) return base_dir / path;
        return path;
    };
    auto opt = [&](const json& obj, const char* key, const std::string& at) -> std::optional<std::filesystem::path> {
        auto s = get<std::string>(obj, key, "", at);
        if (s.empty()) return std::nullopt;
        return resolve(s);
    };

    PipelineConfig c;
    const json ds = j.value("dataset", json::object());
    reject_unknown(ds, {"name", "coco_instances", "coco_captions", "enriched_input"}, "$.dataset");
    c.dataset_name = get<std::string>(ds, "name", c.dataset_name, "$.dataset");
    c.coco_instances = opt(ds, "coco_instances", "$.dataset");
    c.coco_captions = opt(ds, "coco_captions", "$.dataset");
    c.enriched_input = opt(ds, "enriched_input", "$.dataset");

    const json eps = j.value("endpoints", json::array());
    if (!eps.is_array()) throw ConfigError("$.endpoints must be an array");
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const std::string at = "$.endpoints[" + std::to_string(i) + "]";
        const json& e = eps[i];
        if (!e.is_object()) throw ConfigError(at + " must be an object");
        reject_unknown(e, {"endpoint_id", "role", "protocol", "base_url", "auth_env_var", "model", "max_in_flight",
                           "requests_per_minute", "max_retries", "backoff_base_ms", "timeout_ms", "temperature",
                           "max_output_tokens", "priority"},
                       at);
        const auto id = get<std::string>(e, "endpoint_id", "", at);
        const auto role_name = get<std::string>(e, "role", "", at);
        if (id.empty() || role_name.empty()) throw ConfigError(at + " needs endpoint_id and role");
        EndpointConfig ep = default_endpoint(id, role_from_string(role_name));
        if (e.contains("protocol")) ep.protocol = protocol_from_string(get<std::string>(e, "protocol", "", at));
        ep.base_url = get<std::string>(e, "base_url", ep.base_url, at);
        ep.auth_env_var = get<std::string>(e, "auth_env_var", ep.auth_env_var, at);
        ep.model = get<std::string>(e, "model", ep.model, at);
        ep.max_in_flight = get<int>(e, "max_in_flight", ep.max_in_flight, at);
        ep.requests_per_minute = get<int>(e, "requests_per_minute", ep.requests_per_minute, at);
        ep.max_retries = get<int>(e, "max_retries", ep.max_retries, at);
        ep.backoff_base = std::chrono::milliseconds(get<std::int64_t>(e, "backoff_base_ms", ep.backoff_base.count(), at));
        ep.timeout = std::chrono::milliseconds(get<std::int64_t>(e, "timeout_ms", ep.timeout.count(), at));
        ep.temperature = get<double>(e, "temperature", ep.temperature, at);
        ep.max_output_tokens = get<std::int64_t>(e, "max_output_tokens", ep.max_output_tokens, at);
        ep.priority = get<int>(e, "priority", ep.priority, at);
        c.endpoints.push_back(std::move(ep));
    }

    const json roles = j.value("roles", json::object());
    reject_unknown(roles, {"detectors", "ocr", "captioner", "verifier", "integrator"}, "$.roles");
    c.detector_ids = get<std::vector<std::string>>(roles, "detectors", {}, "$.roles");
    c.ocr_ids = get<std::vector<std::string>>(roles, "ocr", {}, "$.roles");
    c.captioner_id = get<std::string>(roles, "captioner", "", "$.roles");
    c.verifier_id = get<std::string>(roles, "verifier", "", "$.roles");
    c.integrator_id = get<std::string>(roles, "integrator", "", "$.roles");

    c.conf_threshold = get<double>(j, "conf_threshold", c.conf_threshold, "$");
    c.iou_threshold = get<double>(j, "iou_threshold", c.iou_threshold, "$");
    c.class_aware_nms = get<bool>(j, "class_aware_nms", c.class_aware_nms, "$");
    c.context_ratio = get<double>(j, "context_ratio", c.context_ratio, "$");
    c.max_simple_captions = get<std::size_t>(j, "max_simple_captions", c.max_simple_captions, "$");
    c.worker_count = get<int>(j, "workers", c.worker_count, "$");
    c.batch_size = get<std::size_t>(j, "batch_size", c.batch_size, "$");
    c.tokenizer_id = get<std::string>(j, "tokenizer", c.tokenizer_id, "$");
    if (c.tokenizer_id.rfind("bpe:", 0) == 0) c.tokenizer_id = "bpe:" + resolve(c.tokenizer_id.substr(4)).string();
    c.output_path = resolve(get<std::string>(j, "output", c.output_path.string(), "$"));
    c.checkpoint_dir = resolve(get<std::string>(j, "checkpoint_dir", c.checkpoint_dir.string(), "$"));
    c.cache_dir = opt(j, "cache_dir", "$");
    c.dry_run = get<bool>(j, "dry_run", c.dry_run, "$");
    c.stub_fixtures = opt(j, "stub_fixtures", "$");
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, path.parent_path());
}

}  // namespace fullanno
