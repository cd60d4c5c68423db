#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "fullanno/model.hpp"

namespace fullanno {

class Tokenizer;

struct Violation {
    std::string field;  // e.g. "objects[2].bbox"
    std::string rule;   // e.g. "degenerate-box", "dangling-reference"
    std::string detail;

    friend bool operator==(const Violation&, const Violation&) = default;
};

/// Checks every record invariant. Token lengths are only checked when a
/// tokenizer is supplied.
std::vector<Violation> validate(const EnrichedImageAnnotation& record,
                                const Tokenizer* tokenizer = nullptr);

/// One-line canonical JSON for a record (no trailing newline). Objects are
/// emitted sorted by object_id and OCR entries by ocr_id; key order is fixed
/// (see docs/enriched-format.md). Throws InvariantViolation when validate()
/// reports anything.
std::string canonical_serialize(const EnrichedImageAnnotation& record);

/// Inverse of canonical_serialize. Throws SchemaError with a JSON path.
EnrichedImageAnnotation parse_record(std::string_view json_text);

/// Record with objects, OCR entries and their id lists sorted into canonical order.
EnrichedImageAnnotation canonicalized(EnrichedImageAnnotation record);

}  // namespace fullanno
