#pragma once

// Reference implementations used to check the library. They are written
// from the definitions, favour obviousness over speed, and share no code
// with src/.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fullanno/model.hpp"

namespace oracle {

inline long double iou(const fullanno::BBox& a, const fullanno::BBox& b) {
    const long double ax1 = a.x, ay1 = a.y, ax2 = static_cast<long double>(a.x) + a.w,
                      ay2 = static_cast<long double>(a.y) + a.h;
    const long double bx1 = b.x, by1 = b.y, bx2 = static_cast<long double>(b.x) + b.w,
                      by2 = static_cast<long double>(b.y) + b.h;
    const long double iw = std::max<long double>(0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const long double ih = std::max<long double>(0, std::min(ay2, by2) - std::max(ay1, by1));
    const long double inter = iw * ih;
    const long double uni = static_cast<long double>(a.w) * a.h + static_cast<long double>(b.w) * b.h - inter;
    return uni > 0 ? inter / uni : 0;
}

/// IoU by counting unit cells; boxes must have integer coordinates.
inline double raster_iou(const fullanno::BBox& a, const fullanno::BBox& b) {
    const int x0 = static_cast<int>(std::min(a.x, b.x));
    const int y0 = static_cast<int>(std::min(a.y, b.y));
    const int x1 = static_cast<int>(std::max(a.right(), b.right()));
    const int y1 = static_cast<int>(std::max(a.bottom(), b.bottom()));
    auto inside = [](const fullanno::BBox& r, int px, int py) {
        return px >= r.x && px + 1 <= r.right() && py >= r.y && py + 1 <= r.bottom();
    };
    std::int64_t in_both = 0, in_any = 0;
    for (int py = y0; py < y1; ++py) {
        for (int px = x0; px < x1; ++px) {
            const bool ia = inside(a, px, py), ib = inside(b, px, py);
            in_both += ia && ib;
            in_any += ia || ib;
        }
    }
    return in_any ? static_cast<double>(in_both) / static_cast<double>(in_any) : 0.0;
}

inline bool contains(const fullanno::BBox& outer, const fullanno::BBox& inner) {
    return outer.x <= inner.x && outer.y <= inner.y && inner.x + inner.w <= outer.x + outer.w &&
           inner.y + inner.h <= outer.y + outer.h;
}

/// Quadratic greedy NMS straight from the definition. Returns kept input
/// indices sorted ascending.
inline std::vector<std::size_t> nms(const std::vector<fullanno::Detection>& dets, double threshold,
                                    bool class_aware, const std::map<std::string, int>& priority) {
    auto prio = [&](const std::string& s) {
        auto it = priority.find(s);
        return it == priority.end() ? INT32_MAX : it->second;
    };
    // i goes before j when it has the higher score, then the better source, then the lower index.
    auto before = [&](std::size_t i, std::size_t j) {
        if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
        if (prio(dets[i].source_id) != prio(dets[j].source_id)) return prio(dets[i].source_id) < prio(dets[j].source_id);
        return i < j;
    };
    std::vector<int> state(dets.size(), 0);  // 0 undecided, 1 kept, 2 dropped
    for (std::size_t round = 0; round < dets.size(); ++round) {
        // Pick the first undecided detection in visiting order by scanning all of them.
        std::optional<std::size_t> next;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (state[i] == 0 && (!next || before(i, *next))) next = i;
        }
        const std::size_t i = *next;
        state[i] = 1;
        for (std::size_t j = 0; j < dets.size(); ++j) {
            if (j == i || state[j] != 1) continue;
            if (class_aware && dets[j].category != dets[i].category) continue;
            if (iou(dets[i].bbox, dets[j].bbox) > threshold) state[i] = 2;
        }
    }
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (state[i] == 1) kept.push_back(i);
    }
    return kept;
}

/// Exhaustive OCR -> object assignment: smallest containing box, lowest id on ties.
inline std::optional<fullanno::ObjectId> match(const fullanno::OcrEntry& ocr,
                                               const std::vector<fullanno::ObjectAnnotation>& objects) {
    std::optional<fullanno::ObjectId> best;
    long double best_area = 0;
    for (const auto& o : objects) {
        if (!contains(o.bbox, ocr.bbox)) continue;
        const long double a = static_cast<long double>(o.bbox.w) * o.bbox.h;
        if (!best || a < best_area || (a == best_area && o.object_id < *best)) {
            best = o.object_id;
            best_area = a;
        }
    }
    return best;
}

/// Random box with integer corners inside [0, extent).
inline fullanno::BBox random_int_box(std::mt19937_64& rng, int extent, int max_side) {
    std::uniform_int_distribution<int> side(1, max_side);
    const int w = side(rng), h = side(rng);
    std::uniform_int_distribution<int> px(0, std::max(0, extent - w));
    std::uniform_int_distribution<int> py(0, std::max(0, extent - h));
    return fullanno::BBox{static_cast<double>(px(rng)), static_cast<double>(py(rng)), static_cast<double>(w),
                          static_cast<double>(h)};
}

/// Random NMS instance: up to `max_n` boxes, clustered so that overlaps above
/// and below the threshold both occur, with a handful of categories and sources.
inline std::vector<fullanno::Detection> random_detections(std::mt19937_64& rng, std::size_t max_n) {
    static const std::vector<std::string> cats = {"person", "car", "dog"};
    static const std::vector<std::string> sources = {"gt", "det-a", "det-b"};
    std::uniform_int_distribution<std::size_t> count(0, max_n);
    const std::size_t n = count(rng);
    std::vector<fullanno::Detection> out;
    std::vector<fullanno::BBox> seeds;
    std::uniform_int_distribution<int> jitter(-3, 3);
    std::uniform_int_distribution<int> coin(0, 2);
    // Coarse score grid so equal scores (and hence tie-breaks) are common.
    std::uniform_int_distribution<int> score_step(1, 10);
    for (std::size_t i = 0; i < n; ++i) {
        fullanno::BBox b;
        if (!seeds.empty() && coin(rng) != 0) {
            const auto& s = seeds[std::uniform_int_distribution<std::size_t>(0, seeds.size() - 1)(rng)];
            b = fullanno::BBox{s.x + jitter(rng), s.y + jitter(rng), std::max(1.0, s.w + jitter(rng)),
                               std::max(1.0, s.h + jitter(rng))};
        } else {
            b = random_int_box(rng, 200, 60);
            b.w += 4;
            b.h += 4;
            seeds.push_back(b);
        }
        out.push_back(fullanno::Detection{b, cats[static_cast<std::size_t>(coin(rng))], score_step(rng) / 10.0,
                                          sources[static_cast<std::size_t>(coin(rng))]});
    }
    return out;
}

/// Whitespace token count, written independently of the library tokenizer.
inline std::int64_t count_words(const std::string& s) {
    std::int64_t n = 0;
    bool in_word = false;
    for (char c : s) {
        const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

}  // namespace oracle
