#include "fullanno/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "fullanno/errors.hpp"

namespace fullanno::geometry {

void require_valid(const BBox& b) {
    const bool finite =
        std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h);
    if (!finite || b.w <= 0 || b.h <= 0) {
        throw DegenerateBox("degenerate box (" + std::to_string(b.x) + ", " + std::to_string(b.y) +
                            ", " + std::to_string(b.w) + ", " + std::to_string(b.h) + ")");
    }
}

double area(const BBox& b) {
    require_valid(b);
    return b.w * b.h;
}

double iou(const BBox& a, const BBox& b) {
    const double area_a = area(a);
    const double area_b = area(b);
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = area_a + area_b - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

bool contains(const BBox& outer, const BBox& inner) {
    return outer.x <= inner.x && outer.y <= inner.y && inner.right() <= outer.right() &&
           inner.bottom() <= outer.bottom();
}

std::optional<BBox> clamp_to_image(const BBox& b, double width, double height) {
    const double x0 = std::clamp(b.x, 0.0, width);
    const double y0 = std::clamp(b.y, 0.0, height);
    const double x1 = std::clamp(b.right(), 0.0, width);
    const double y1 = std::clamp(b.bottom(), 0.0, height);
    if (!(x1 - x0 > 0) || !(y1 - y0 > 0)) return std::nullopt;
    if (x0 == b.x && y0 == b.y && x1 == b.right() && y1 == b.bottom()) return b;
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

std::vector<Detection> filter_by_confidence(std::span<const Detection> dets, double threshold) {
    std::vector<Detection> out;
    std::copy_if(dets.begin(), dets.end(), std::back_inserter(out),
                 [threshold](const Detection& d) { return d.score >= threshold; });
    return out;
}

namespace {

int priority_of(const NmsOptions& options, const std::string& source) {
    if (!options.priorities) return 0;
    auto it = options.priorities->find(source);
    return it == options.priorities->end() ? std::numeric_limits<int>::max() : it->second;
}

}  // namespace

std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double iou_threshold,
                                     const NmsOptions& options) {
    for (const auto& d : dets) require_valid(d.bbox);

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> prio(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) prio[i] = priority_of(options, dets[i].source_id);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        if (prio[a] != prio[b]) return prio[a] < prio[b];
        return a < b;
    });

    // Kept indices bucketed by category so each candidate is only compared
    // against boxes that can suppress it.
    std::map<std::string_view, std::vector<std::size_t>> kept_by_class;
    std::vector<std::size_t> kept;
    for (std::size_t idx : order) {
        const std::string_view key = options.class_aware ? std::string_view(dets[idx].category) : "";
        auto& bucket = kept_by_class[key];
        const bool suppressed = std::any_of(bucket.begin(), bucket.end(), [&](std::size_t k) {
            return iou(dets[k].bbox, dets[idx].bbox) > iou_threshold;
        });
        if (suppressed) continue;
        bucket.push_back(idx);
        kept.push_back(idx);
    }

    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });
    return kept;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold,
                           const NmsOptions& options) {
    std::vector<Detection> out;
    for (std::size_t i : nms_indices(dets, iou_threshold, options)) out.push_back(dets[i]);
    return out;
}

std::vector<Detection> aggregate_sources(std::span<const SourceDetections> per_source,
                                         const SourcePriorities& priorities,
                                         double conf_threshold, double iou_threshold,
                                         bool class_aware) {
    std::vector<const SourceDetections*> sources;
    for (const auto& s : per_source) {
        if (!priorities.count(s.first)) throw UnknownSource("unconfigured source: " + s.first);
        sources.push_back(&s);
    }
    std::stable_sort(sources.begin(), sources.end(), [&](const auto* a, const auto* b) {
        const int pa = priorities.at(a->first);
        const int pb = priorities.at(b->first);
        return pa != pb ? pa < pb : a->first < b->first;
    });

    std::vector<Detection> all;
    for (const auto* s : sources) {
        std::vector<Detection> dets = s->second;
        for (auto& d : dets) d.source_id = s->first;
        std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
            return std::tie(b.score, a.category, a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h) <
                   std::tie(a.score, b.category, b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h);
        });
        all.insert(all.end(), dets.begin(), dets.end());
    }

    const auto filtered = filter_by_confidence(all, conf_threshold);
    return nms(filtered, iou_threshold, NmsOptions{class_aware, &priorities});
}

}  // namespace fullanno::geometry
