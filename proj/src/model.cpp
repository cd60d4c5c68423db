#include "fullanno/model.hpp"

#include <stdexcept>

#include "fullanno/errors.hpp"

namespace fullanno {

bool Provenance::complete(int stage) const {
    switch (stage) {
        case 0: return ingested;
        case 1: return stage1;
        case 2: return stage2;
        case 3: return stage3;
        default: return false;
    }
}

void Provenance::mark_complete(int stage) {
    switch (stage) {
        case 0: ingested = true; break;
        case 1: stage1 = true; break;
        case 2: stage2 = true; break;
        case 3: stage3 = true; break;
        default: throw StageViolation("no such stage: " + std::to_string(stage));
    }
}

int Provenance::completed_through() const {
    int k = -1;
    while (k < 3 && complete(k + 1)) ++k;
    return k;
}

bool Provenance::monotone() const {
    const bool flags[] = {ingested, stage1, stage2, stage3};
    for (int k = 1; k < 4; ++k) {
        if (flags[k] && !flags[k - 1]) return false;
    }
    return true;
}

namespace {

std::int64_t derived_id(std::int64_t tag, ImageId image, std::uint32_t ordinal) {
    constexpr std::int64_t kMaxImage = std::int64_t{1} << 41;
    constexpr std::uint32_t kMaxOrdinal = 1u << 20;
    if (image < 0 || image >= kMaxImage) {
        throw InvariantViolation("image id out of range for derived ids: " + std::to_string(image));
    }
    if (ordinal >= kMaxOrdinal) {
        throw InvariantViolation("too many derived ids for image " + std::to_string(image));
    }
    return tag | (image << 20) | static_cast<std::int64_t>(ordinal);
}

}  // namespace

ObjectId derived_object_id(ImageId image, std::uint32_t ordinal) {
    return derived_id(std::int64_t{1} << 62, image, ordinal);
}

OcrId derived_ocr_id(ImageId image, std::uint32_t ordinal) {
    return derived_id(std::int64_t{1} << 61, image, ordinal);
}

}  // namespace fullanno
