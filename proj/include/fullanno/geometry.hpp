#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fullanno/model.hpp"

namespace fullanno::geometry {

inline constexpr double kDefaultIouThreshold = 0.75;
inline constexpr double kDefaultConfidenceThreshold = 0.3;

/// Throws DegenerateBox unless w > 0 and h > 0 (and all fields finite).
void require_valid(const BBox& b);

double area(const BBox& b);
double iou(const BBox& a, const BBox& b);
/// Edge-inclusive containment.
bool contains(const BBox& outer, const BBox& inner);

/// Clips `b` to [0,width]x[0,height]. Returns nullopt when nothing with
/// positive area is left.
std::optional<BBox> clamp_to_image(const BBox& b, double width, double height);

std::vector<Detection> filter_by_confidence(std::span<const Detection> dets, double threshold);

/// Lower value = higher priority. Sources missing from the map rank after
/// every listed source.
using SourcePriorities = std::map<std::string, int>;

struct NmsOptions {
    bool class_aware = true;
    const SourcePriorities* priorities = nullptr;
};

/// Greedy NMS. Candidates are visited by (score desc, source priority asc,
/// input index asc); a candidate is dropped when its IoU with an already
/// kept detection (of the same category, when class-aware) is strictly
/// greater than `iou_threshold`. Output is ordered by (score desc, input
/// index asc).
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold,
                           const NmsOptions& options = {});

/// Indices into `dets` of the kept detections, in output order.
std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double iou_threshold,
                                     const NmsOptions& options = {});

using SourceDetections = std::pair<std::string, std::vector<Detection>>;

/// Confidence filter + NMS over several detector sources. Sources are
/// concatenated in priority order and each source's list is put in a
/// canonical order first, so neither the order of `per_source` nor the order
/// inside any list changes the result. Throws UnknownSource for a source id
/// missing from `priorities`.
std::vector<Detection> aggregate_sources(std::span<const SourceDetections> per_source,
                                         const SourcePriorities& priorities,
                                         double conf_threshold, double iou_threshold,
                                         bool class_aware = true);

}  // namespace fullanno::geometry
