#include <cstdio>
#include <sstream>

#include "fullanno/pipeline.hpp"
#include "fullanno/tokenizer.hpp"
#include "json.hpp"

namespace fullanno {

StatsReport compute_stats(const DatasetHandle& handle, const Tokenizer& tokenizer) {
    StatsReport s;
    s.dataset = handle.name;
    s.tokenizer_id = tokenizer.id();
    std::int64_t dense_tokens = 0;
    std::int64_t region_tokens = 0;
    for (const auto& r : handle.images) {
        ++s.num_images;
        s.num_boxes += static_cast<std::int64_t>(r.objects.size());
        s.num_ocr_entries += static_cast<std::int64_t>(r.ocr.size());
        s.num_simple_captions += static_cast<std::int64_t>(r.simple_captions.size());
        if (r.dense_caption) {
            ++s.num_dense_captions;
            dense_tokens += tokenizer.count(r.dense_caption->text);
        }
        for (const auto& o : r.objects) {
            if (!o.region_description) continue;
            ++s.num_region_descriptions;
            region_tokens += tokenizer.count(*o.region_description);
        }
    }
    // Averages are over items, so an empty population has no ATL at all.
    s.dense_empty = s.num_dense_captions == 0;
    s.region_empty = s.num_region_descriptions == 0;
    if (!s.dense_empty) s.atl_dense = static_cast<double>(dense_tokens) / static_cast<double>(s.num_dense_captions);
    if (!s.region_empty) {
        s.atl_region = static_cast<double>(region_tokens) / static_cast<double>(s.num_region_descriptions);
    }
    return s;
}

namespace {

std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) ++n;
    }
    return n;
}

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

const char* mark(bool b) { return b ? "✓" : "✗"; }

}  // namespace

std::string render_stats_table(const StatsReport& s) {
    const std::vector<std::string> head = {"Dataset",  "Simple Cap", "Dense Cap",        "Region Cap",
                                           "OCR",      "# Images",   "# Boxes",          "ATL for Dense Cap",
                                           "ATL for Region Cap"};
    const std::vector<std::string> row = {s.dataset,
                                          mark(s.has_simple_captions()),
                                          mark(s.has_dense_captions()),
                                          mark(s.has_region_captions()),
                                          mark(s.has_ocr()),
                                          std::to_string(s.num_images),
                                          std::to_string(s.num_boxes),
                                          s.dense_empty ? "-" : fixed2(s.atl_dense),
                                          s.region_empty ? "-" : fixed2(s.atl_region)};
    std::vector<std::size_t> width(head.size());
    for (std::size_t i = 0; i < head.size(); ++i) width[i] = std::max(display_width(head[i]), display_width(row[i]));

    auto line = [&](const std::vector<std::string>& cells) {
        std::string out = "|";
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out += ' ' + cells[i] + std::string(width[i] - display_width(cells[i]), ' ') + " |";
        }
        return out + "\n";
    };
    std::string rule = "|";
    for (auto w : width) rule += std::string(w + 2, '-') + "|";
    return line(head) + rule + "\n" + line(row);
}

std::string stats_to_json(const StatsReport& s) {
    nlohmann::ordered_json j;
    j["dataset"] = s.dataset;
    j["tokenizer"] = s.tokenizer_id;
    j["simple_cap"] = s.has_simple_captions();
    j["dense_cap"] = s.has_dense_captions();
    j["region_cap"] = s.has_region_captions();
    j["ocr"] = s.has_ocr();
    j["num_images"] = s.num_images;
    j["num_boxes"] = s.num_boxes;
    j["num_ocr_entries"] = s.num_ocr_entries;
    j["num_simple_captions"] = s.num_simple_captions;
    j["num_dense_captions"] = s.num_dense_captions;
    j["num_region_descriptions"] = s.num_region_descriptions;
    j["atl_dense"] = s.dense_empty ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(s.atl_dense);
    j["atl_region"] = s.region_empty ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(s.atl_region);
    j["dense_empty"] = s.dense_empty;
    j["region_empty"] = s.region_empty;
    return j.dump(2) + "\n";
}

}  // namespace fullanno
