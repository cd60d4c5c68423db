#include "fullanno/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fullanno/errors.hpp"
#include "fullanno/geometry.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/serialize.hpp"
#include "fullanno/tokenizer.hpp"
#include "fullanno/version.hpp"
#include "json.hpp"

namespace fullanno {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

const EnrichedImageAnnotation* DatasetHandle::find(ImageId id) const {
    auto it = std::lower_bound(images.begin(), images.end(), id,
                               [](const auto& r, ImageId v) { return r.image_id < v; });
    if (it != images.end() && it->image_id == id) return &*it;
    for (const auto& r : images) {
        if (r.image_id == id) return &r;
    }
    return nullptr;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

namespace {

json parse_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError("$", path.string() + ": invalid JSON: " + e.what());
    }
}

const json& member(const json& node, const char* key, const std::string& path) {
    if (!node.is_object()) throw SchemaError(path, "expected an object");
    auto it = node.find(key);
    if (it == node.end()) throw SchemaError(path + "." + key, "missing key");
    return *it;
}

const json& array_member(const json& node, const char* key, const std::string& path) {
    const json& v = member(node, key, path);
    if (!v.is_array()) throw SchemaError(path + "." + key, "expected an array");
    return v;
}

std::int64_t int_member(const json& node, const char* key, const std::string& path) {
    const json& v = member(node, key, path);
    if (!v.is_number_integer()) throw SchemaError(path + "." + key, "expected an integer");
    return v.get<std::int64_t>();
}

double num_member(const json& node, const char* key, const std::string& path) {
    const json& v = member(node, key, path);
    if (!v.is_number()) throw SchemaError(path + "." + key, "expected a number");
    return v.get<double>();
}

std::string str_member(const json& node, const char* key, const std::string& path) {
    const json& v = member(node, key, path);
    if (!v.is_string()) throw SchemaError(path + "." + key, "expected a string");
    return v.get<std::string>();
}

}  // namespace

DatasetHandle load_coco(const std::filesystem::path& instances_path,
                        const std::optional<std::filesystem::path>& captions_path,
                        const Tokenizer& tokenizer) {
    const json doc = parse_json_file(instances_path);
    if (!doc.is_object()) throw SchemaError("$", "expected an object");
    const json& images = array_member(doc, "images", "$");
    const json& annotations = array_member(doc, "annotations", "$");
    const json& categories = array_member(doc, "categories", "$");

    DatasetHandle handle;
    handle.name = instances_path.stem().string();
    handle.source_manifest.push_back({instances_path.string(), sha256_file(instances_path)});

    std::unordered_map<std::int64_t, std::string> category_names;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        const std::string at = "$.categories[" + std::to_string(i) + "]";
        category_names[int_member(categories[i], "id", at)] = str_member(categories[i], "name", at);
    }

    std::unordered_map<ImageId, std::size_t> index;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string at = "$.images[" + std::to_string(i) + "]";
        EnrichedImageAnnotation r;
        r.image_id = int_member(images[i], "id", at);
        r.file_name = str_member(images[i], "file_name", at);
        r.width = num_member(images[i], "width", at);
        r.height = num_member(images[i], "height", at);
        if (!(r.width > 0) || !(r.height > 0)) throw SchemaError(at, "image dimensions must be positive");
        r.provenance.ingested = true;
        if (!index.emplace(r.image_id, handle.images.size()).second) {
            throw IdCollision("duplicate image id " + std::to_string(r.image_id) + " at " + at);
        }
        handle.images.push_back(std::move(r));
    }

    std::set<ObjectId> seen_ids;
    std::unordered_map<ImageId, std::uint32_t> ordinals;
    handle.report.input_annotations = static_cast<std::int64_t>(annotations.size());
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const json& a = annotations[i];
        const std::string at = "$.annotations[" + std::to_string(i) + "]";
        const ImageId image_id = int_member(a, "image_id", at);
        auto img = index.find(image_id);
        if (img == index.end()) throw SchemaError(at + ".image_id", "unknown image " + std::to_string(image_id));
        const std::int64_t cat = int_member(a, "category_id", at);
        auto name = category_names.find(cat);
        if (name == category_names.end()) throw SchemaError(at + ".category_id", "unknown category " + std::to_string(cat));
        const json& jb = array_member(a, "bbox", at);
        if (jb.size() != 4 || !std::all_of(jb.begin(), jb.end(), [](const json& v) { return v.is_number(); })) {
            throw SchemaError(at + ".bbox", "expected four numbers");
        }
        auto& record = handle.images[img->second];

        ObjectId id;
        if (a.contains("id")) {
            id = int_member(a, "id", at);
        } else {
            id = derived_object_id(image_id, ordinals[image_id]++);
        }
        if (!seen_ids.insert(id).second) throw IdCollision("duplicate annotation id " + std::to_string(id) + " at " + at);

        const BBox raw{jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(), jb[3].get<double>()};
        std::optional<BBox> box;
        if (raw.w > 0 && raw.h > 0) box = geometry::clamp_to_image(raw, record.width, record.height);
        if (!box) {
            ++handle.report.dropped_boxes;
            continue;
        }
        if (!(*box == raw)) ++handle.report.clamped_boxes;

        ObjectAnnotation o;
        o.object_id = id;
        o.bbox = *box;
        o.category = name->second;
        o.score = 1.0;
        o.source_id = kGroundTruthSource;
        if (a.contains("segmentation")) o.segmentation = ojson::parse(a["segmentation"].dump()).dump();
        record.objects.push_back(std::move(o));
        ++handle.report.loaded_objects;
    }

    if (captions_path) {
        const json caps = parse_json_file(*captions_path);
        handle.source_manifest.push_back({captions_path->string(), sha256_file(*captions_path)});
        const json& list = array_member(caps, "annotations", "$");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string at = "$.annotations[" + std::to_string(i) + "]";
            const ImageId image_id = int_member(list[i], "image_id", at);
            auto img = index.find(image_id);
            if (img == index.end()) throw SchemaError(at + ".image_id", "unknown image " + std::to_string(image_id));
            std::string text = str_member(list[i], "caption", at);
            const auto n = tokenizer.count(text);
            handle.images[img->second].simple_captions.push_back(SimpleCaption{std::move(text), n});
            ++handle.report.input_captions;
        }
    }

    std::sort(handle.images.begin(), handle.images.end(),
              [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    return handle;
}

VgRegions load_vg_regions(const std::filesystem::path& regions_path) {
    const json doc = parse_json_file(regions_path);
    if (!doc.is_array()) throw SchemaError("$", "expected an array of images");
    VgRegions out;
    constexpr double kUnbounded = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::string at = "$[" + std::to_string(i) + "]";
        const json& entry = doc[i];
        const json& regions = array_member(entry, "regions", at);
        std::optional<ImageId> parent;
        if (entry.contains("id") && entry["id"].is_number_integer()) parent = entry["id"].get<ImageId>();
        for (const json& reg : regions) {
            auto is_num = [&](const char* k) { return reg.is_object() && reg.contains(k) && reg[k].is_number(); };
            if (!reg.is_object() || !reg.contains("phrase") || !reg["phrase"].is_string() ||
                !is_num("x") || !is_num("y") || !is_num("width") || !is_num("height")) {
                ++out.skipped;
                continue;
            }
            std::optional<ImageId> image_id = parent;
            if (reg.contains("image_id") && reg["image_id"].is_number_integer()) image_id = reg["image_id"].get<ImageId>();
            if (!image_id) {
                ++out.skipped;
                continue;
            }
            const BBox raw{reg["x"].get<double>(), reg["y"].get<double>(), reg["width"].get<double>(),
                           reg["height"].get<double>()};
            std::optional<BBox> box;
            if (raw.w > 0 && raw.h > 0) box = geometry::clamp_to_image(raw, kUnbounded, kUnbounded);
            if (!box) {
                ++out.skipped;
                continue;
            }
            if (!(*box == raw)) ++out.clamped;
            out.regions[*image_id].push_back(RegionText{*box, reg["phrase"].get<std::string>()});
        }
    }
    return out;
}

DatasetHandle merge_by_file_name(DatasetHandle primary, const DatasetHandle& secondary) {
    std::set<std::string> names;
    std::set<ImageId> ids;
    for (const auto& r : primary.images) {
        names.insert(r.file_name);
        ids.insert(r.image_id);
    }
    for (const auto& r : secondary.images) {
        if (names.count(r.file_name)) continue;
        if (!ids.insert(r.image_id).second) {
            throw IdCollision("image id " + std::to_string(r.image_id) + " used by two different files");
        }
        primary.images.push_back(r);
    }
    primary.source_manifest.insert(primary.source_manifest.end(), secondary.source_manifest.begin(),
                                   secondary.source_manifest.end());
    std::sort(primary.images.begin(), primary.images.end(),
              [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    return primary;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& jsonl_path) {
    auto p = jsonl_path;
    p += ".manifest.json";
    return p;
}

std::string render_jsonl(const DatasetHandle& handle) {
    std::vector<const EnrichedImageAnnotation*> order;
    for (const auto& r : handle.images) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
    std::string out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && order[i]->image_id == order[i - 1]->image_id) {
            throw IdCollision("duplicate image id " + std::to_string(order[i]->image_id));
        }
        out += canonical_serialize(*order[i]);
        out += '\n';
    }
    return out;
}

std::string manifest_to_json(const Manifest& m) {
    ojson j;
    j["dataset"] = m.dataset;
    j["tokenizer_id"] = m.tokenizer_id;
    j["engine_version"] = m.engine_version;
    j["config_hash"] = m.config_hash;
    j["union_key"] = m.union_key;
    j["line_count"] = m.line_count;
    j["content_sha256"] = m.content_sha256;
    ojson sources = ojson::array();
    for (const auto& s : m.sources) sources.push_back(ojson{{"path", s.path}, {"sha256", s.sha256}});
    j["sources"] = std::move(sources);
    return j.dump(2) + "\n";
}

Manifest read_manifest(const std::filesystem::path& path) {
    const json j = parse_json_file(path);
    Manifest m;
    m.dataset = str_member(j, "dataset", "$");
    m.tokenizer_id = str_member(j, "tokenizer_id", "$");
    m.engine_version = str_member(j, "engine_version", "$");
    m.config_hash = str_member(j, "config_hash", "$");
    m.union_key = str_member(j, "union_key", "$");
    m.line_count = int_member(j, "line_count", "$");
    m.content_sha256 = str_member(j, "content_sha256", "$");
    const json& sources = array_member(j, "sources", "$");
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const std::string at = "$.sources[" + std::to_string(i) + "]";
        m.sources.push_back({str_member(sources[i], "path", at), str_member(sources[i], "sha256", at)});
    }
    return m;
}

Manifest write_enriched(const DatasetHandle& handle, const std::filesystem::path& out_path,
                        const ManifestInfo& info) {
    const std::string text = render_jsonl(handle);
    Manifest m;
    m.dataset = info.dataset.empty() ? handle.name : info.dataset;
    m.tokenizer_id = info.tokenizer_id;
    m.engine_version = kEngineVersion;
    m.config_hash = info.config_hash;
    m.line_count = static_cast<std::int64_t>(handle.images.size());
    m.content_sha256 = sha256_hex(text);
    m.sources = handle.source_manifest;
    write_file_atomic(out_path, text);
    write_file_atomic(manifest_path_for(out_path), manifest_to_json(m));
    return m;
}

DatasetHandle parse_jsonl(std::string_view text) {
    DatasetHandle handle;
    std::set<ImageId> ids;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            if (pos >= text.size()) break;
            throw SchemaError("$", "empty line", line_no);
        }
        EnrichedImageAnnotation r;
        try {
            r = parse_record(line);
        } catch (const SchemaError& e) {
            throw SchemaError(e.path(), e.detail(), line_no);
        }
        if (!ids.insert(r.image_id).second) {
            throw SchemaError("$.image_id", "duplicate image id " + std::to_string(r.image_id), line_no);
        }
        handle.images.push_back(std::move(r));
    }
    std::sort(handle.images.begin(), handle.images.end(),
              [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    return handle;
}

DatasetHandle read_enriched(const std::filesystem::path& path) {
    DatasetHandle handle = parse_jsonl(read_file(path));
    handle.name = path.stem().string();
    const auto manifest = manifest_path_for(path);
    if (std::filesystem::exists(manifest)) {
        const Manifest m = read_manifest(manifest);
        handle.name = m.dataset;
        handle.source_manifest = m.sources;
    }
    return handle;
}

}  // namespace fullanno
