#pragma once

// Domain types shared by every stage of the engine. All of them are plain
// values: construct, copy, compare. Nothing here does I/O.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fullanno {

using ImageId = std::int64_t;
using ObjectId = std::int64_t;
using OcrId = std::int64_t;

/// Axis-aligned box in COCO xywh pixels, top-left origin.
struct BBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
    BBox bbox;
    std::string category;
    double score = 0;
    std::string source_id;

    friend bool operator==(const Detection&, const Detection&) = default;
};

struct ObjectAnnotation {
    ObjectId object_id = 0;
    BBox bbox;
    std::string category;
    double score = 1.0;
    std::string source_id;
    std::optional<std::string> region_description;
    std::optional<std::int64_t> region_token_length;
    std::vector<OcrId> matched_ocr_ids;
    /// COCO segmentation carried through untouched, as compact JSON text.
    std::optional<std::string> segmentation;

    friend bool operator==(const ObjectAnnotation&, const ObjectAnnotation&) = default;
};

struct OcrEntry {
    OcrId ocr_id = 0;
    BBox bbox;
    std::string text;
    double confidence = 0;
    bool verified = false;
    std::optional<std::string> corrected_text;
    /// Set when the verifier answered with nothing usable and the original text was kept.
    bool verification_failed = false;
    std::optional<ObjectId> matched_object_id;

    /// Text the rest of the pipeline should use.
    const std::string& best_text() const { return corrected_text ? *corrected_text : text; }

    friend bool operator==(const OcrEntry&, const OcrEntry&) = default;
};

struct SimpleCaption {
    std::string text;
    std::int64_t token_length = 0;

    friend bool operator==(const SimpleCaption&, const SimpleCaption&) = default;
};

struct GeneratorInfo {
    std::string endpoint_id;
    std::string model;
    std::string template_version;
    double temperature = 0;
    std::int64_t max_output_tokens = 0;
    /// Creation time reported by the endpoint (unix seconds).
    std::int64_t timestamp = 0;

    friend bool operator==(const GeneratorInfo&, const GeneratorInfo&) = default;
};

struct DenseCaption {
    std::string text;
    std::int64_t token_length = 0;
    GeneratorInfo generator;
    std::string prompt_hash;

    friend bool operator==(const DenseCaption&, const DenseCaption&) = default;
};

struct StageFailure {
    int stage = 0;
    std::string kind;
    std::string message;

    friend bool operator==(const StageFailure&, const StageFailure&) = default;
};

/// Stage-completion flags. Stage 0 is ingestion.
struct Provenance {
    bool ingested = false;
    bool stage1 = false;
    bool stage2 = false;
    bool stage3 = false;
    std::optional<StageFailure> failure;

    bool complete(int stage) const;
    void mark_complete(int stage);
    /// Highest stage k such that every stage <= k is complete, or -1.
    int completed_through() const;
    bool monotone() const;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct EnrichedImageAnnotation {
    ImageId image_id = 0;
    std::string file_name;
    double width = 0;
    double height = 0;
    std::vector<ObjectAnnotation> objects;
    std::vector<OcrEntry> ocr;
    std::vector<SimpleCaption> simple_captions;
    std::optional<DenseCaption> dense_caption;
    Provenance provenance;

    bool failed() const { return provenance.failure.has_value(); }

    friend bool operator==(const EnrichedImageAnnotation&, const EnrichedImageAnnotation&) = default;
};

struct NormalizedBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

inline constexpr const char* kUnattached = "unattached";

/// Prior knowledge handed to the caption integrator, in canonical order.
struct AnnotationBundle {
    struct Object {
        ObjectId object_id = 0;  // ordering key only, never rendered
        double area = 0;         // pixel area, ordering key only
        std::string category;
        NormalizedBox position;
        std::string region_description;

        friend bool operator==(const Object&, const Object&) = default;
    };
    struct Ocr {
        OcrId ocr_id = 0;  // ordering key only
        std::string text;
        std::string owner;  // owning category or kUnattached

        friend bool operator==(const Ocr&, const Ocr&) = default;
    };

    double width = 0;
    double height = 0;
    std::vector<Object> objects;
    std::vector<Ocr> ocr_items;
    std::vector<std::string> sampled_simple_captions;

    bool empty() const { return objects.empty() && sampled_simple_captions.empty(); }

    friend bool operator==(const AnnotationBundle&, const AnnotationBundle&) = default;
};

struct StatsReport {
    std::string dataset;
    std::string tokenizer_id;
    std::int64_t num_images = 0;
    std::int64_t num_boxes = 0;
    std::int64_t num_ocr_entries = 0;
    std::int64_t num_simple_captions = 0;
    std::int64_t num_dense_captions = 0;
    std::int64_t num_region_descriptions = 0;
    double atl_dense = 0;
    double atl_region = 0;
    bool dense_empty = true;
    bool region_empty = true;

    bool has_simple_captions() const { return num_simple_captions > 0; }
    bool has_dense_captions() const { return num_dense_captions > 0; }
    bool has_region_captions() const { return num_region_descriptions > 0; }
    bool has_ocr() const { return num_ocr_entries > 0; }
};

/// Identifiers minted by the engine live above 2^61 so they never collide
/// with ids carried over from COCO. Layout: tag | image_id << 20 | ordinal.
ObjectId derived_object_id(ImageId image, std::uint32_t ordinal);
OcrId derived_ocr_id(ImageId image, std::uint32_t ordinal);

}  // namespace fullanno
