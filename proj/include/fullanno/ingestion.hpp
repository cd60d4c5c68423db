#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fullanno/model.hpp"

namespace fullanno {

class Tokenizer;

inline constexpr const char* kGroundTruthSource = "coco-gt";

struct SourceFile {
    std::string path;
    std::string sha256;

    friend bool operator==(const SourceFile&, const SourceFile&) = default;
};

struct LoadReport {
    std::int64_t input_annotations = 0;
    std::int64_t loaded_objects = 0;
    std::int64_t dropped_boxes = 0;
    std::int64_t clamped_boxes = 0;
    std::int64_t input_captions = 0;
    std::int64_t skipped_regions = 0;
};

struct DatasetHandle {
    std::string name;
    std::vector<EnrichedImageAnnotation> images;
    std::vector<SourceFile> source_manifest;
    LoadReport report;

    const EnrichedImageAnnotation* find(ImageId id) const;
};

/// Reads a COCO detection file (and optionally a COCO captions file).
/// Ground-truth boxes become objects with score 1.0 from source "coco-gt".
/// Partially out-of-frame boxes are clamped; zero-area boxes are dropped.
DatasetHandle load_coco(const std::filesystem::path& instances_path,
                        const std::optional<std::filesystem::path>& captions_path,
                        const Tokenizer& tokenizer);

struct RegionText {
    BBox bbox;
    std::string phrase;

    friend bool operator==(const RegionText&, const RegionText&) = default;
};

struct VgRegions {
    std::map<ImageId, std::vector<RegionText>> regions;
    std::int64_t skipped = 0;
    std::int64_t clamped = 0;
};

/// Reads Visual Genome region_descriptions.json. Boxes are clamped to the
/// non-negative quadrant (the file carries no image sizes).
VgRegions load_vg_regions(const std::filesystem::path& regions_path);

/// Union of two datasets keyed on file_name; on a collision the record from
/// `primary` wins.
DatasetHandle merge_by_file_name(DatasetHandle primary, const DatasetHandle& secondary);

struct ManifestInfo {
    std::string dataset;
    std::string tokenizer_id;
    std::string config_hash;
};

struct Manifest {
    std::string dataset;
    std::string tokenizer_id;
    std::string engine_version;
    std::string config_hash;
    std::string union_key = "file_name";
    std::int64_t line_count = 0;
    std::string content_sha256;
    std::vector<SourceFile> sources;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

std::filesystem::path manifest_path_for(const std::filesystem::path& jsonl_path);

/// Canonical JSONL text for a dataset: one record per line sorted by image_id.
/// Throws InvariantViolation naming the first invalid record.
std::string render_jsonl(const DatasetHandle& handle);

/// Writes the JSONL file and its sidecar manifest (`<out>.manifest.json`).
/// Nothing is written if any record is invalid. Files are written to a
/// temporary name and renamed into place.
Manifest write_enriched(const DatasetHandle& handle, const std::filesystem::path& out_path,
                        const ManifestInfo& info);

DatasetHandle read_enriched(const std::filesystem::path& path);
DatasetHandle parse_jsonl(std::string_view text);

std::string manifest_to_json(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Atomic replace of `path` with `bytes`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace fullanno
