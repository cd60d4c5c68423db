#include "fixture.hpp"

#include <unistd.h>

#include <fstream>
#include <random>
#include <vector>

#include "json.hpp"

namespace fixture {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kCategories = {"person", "dog", "car", "bus", "stop sign", "bicycle"};

void write(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

json box_json(const fullanno::BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

double round1(double v) { return static_cast<double>(static_cast<long long>(v * 10.0)) / 10.0; }

json config_json(const SyntheticSet& set, int workers, const std::filesystem::path& output,
                 const std::filesystem::path& checkpoint_dir, int batch_size) {
    json endpoints = json::array();
    endpoints.push_back({{"endpoint_id", "det-a"}, {"role", "detector"}, {"model", "stub-detector-a"}, {"priority", 10}});
    endpoints.push_back({{"endpoint_id", "det-b"}, {"role", "detector"}, {"model", "stub-detector-b"}, {"priority", 20}});
    endpoints.push_back({{"endpoint_id", "ocr-a"}, {"role", "ocr"}, {"model", "stub-ocr"}});
    endpoints.push_back({{"endpoint_id", "captioner"}, {"role", "captioner"}, {"model", "stub-llava"}});
    endpoints.push_back({{"endpoint_id", "verifier"}, {"role", "verifier"}, {"model", "stub-llava"}});
    endpoints.push_back({{"endpoint_id", "integrator"},
                         {"role", "integrator"},
                         {"model", "stub-concat"},
                         {"requests_per_minute", 120}});
    json j;
    j["dataset"] = {{"name", "synthetic"},
                    {"coco_instances", set.instances.filename().string()},
                    {"coco_captions", set.captions.filename().string()}};
    j["endpoints"] = endpoints;
    j["roles"] = {{"detectors", {"det-a", "det-b"}},
                  {"ocr", {"ocr-a"}},
                  {"captioner", "captioner"},
                  {"verifier", "verifier"},
                  {"integrator", "integrator"}};
    j["workers"] = workers;
    j["batch_size"] = batch_size;
    j["output"] = output.string();
    j["checkpoint_dir"] = checkpoint_dir.string();
    j["dry_run"] = true;
    j["stub_fixtures"] = set.stubs.filename().string();
    return j;
}

}  // namespace

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() /
               ("fullanno-" + name + "-" + std::to_string(static_cast<long>(::getpid())));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

SyntheticSet write_synthetic(const std::filesystem::path& dir, const Options& options) {
    std::mt19937_64 rng(options.seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto pick = [&](int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng)); };

    SyntheticSet set;
    set.dir = dir;
    set.instances = dir / "instances.json";
    set.captions = dir / "captions.json";
    set.stubs = dir / "stubs.json";
    set.config = dir / "config.json";
    set.output = dir / "enriched.jsonl";
    set.checkpoint_dir = dir / "checkpoint";
    set.images = options.images;

    json images = json::array();
    json annotations = json::array();
    json captions = json::array();
    json categories = json::array();
    for (std::size_t i = 0; i < kCategories.size(); ++i) {
        categories.push_back({{"id", static_cast<int>(i) + 1}, {"name", kCategories[i]}});
    }

    auto& f = set.fixtures;
    f.created = 1700000000;
    f.corrections["5T0P"] = "STOP";

    std::int64_t ann_id = 1000;
    std::int64_t cap_id = 1;
    for (int i = 0; i < options.images; ++i) {
        const std::int64_t image_id = i + 1;
        const double W = 320 + 32 * pick(11);
        const double H = 240 + 24 * pick(11);
        char name[64];
        std::snprintf(name, sizeof name, "synthetic_%06d.jpg", i + 1);
        const std::string file = name;
        images.push_back({{"id", image_id}, {"file_name", file}, {"width", W}, {"height", H}});

        std::vector<std::pair<fullanno::BBox, std::string>> gt;
        const int n = 1 + pick(3);
        for (int k = 0; k < n; ++k) {
            const double w = round1(uniform(0.15, 0.4) * W);
            const double h = round1(uniform(0.15, 0.4) * H);
            const double x = round1(uniform(0, W - w));
            const double y = round1(uniform(0, H - h));
            const int cat = pick(static_cast<int>(kCategories.size()));
            gt.push_back({fullanno::BBox{x, y, w, h}, kCategories[cat]});
            annotations.push_back({{"id", ann_id++},
                                   {"image_id", image_id},
                                   {"category_id", cat + 1},
                                   {"bbox", box_json(gt.back().first)},
                                   {"area", w * h},
                                   {"iscrowd", 0}});
            ++set.input_annotations;
        }
        // Every fifth image: one box hanging off the right edge and one with no width.
        if (i % 5 == 0) {
            annotations.push_back({{"id", ann_id++},
                                   {"image_id", image_id},
                                   {"category_id", 2},
                                   {"bbox", json::array({W - 40, 10, 80, 50})},
                                   {"iscrowd", 0}});
            annotations.push_back({{"id", ann_id++},
                                   {"image_id", image_id},
                                   {"category_id", 3},
                                   {"bbox", json::array({5, 5, 0, 30})},
                                   {"iscrowd", 0}});
            set.input_annotations += 2;
            ++set.degenerate_annotations;
        }

        for (int c = 0; c < 3; ++c) {
            const auto& a = gt[static_cast<std::size_t>(c) % gt.size()].second;
            captions.push_back({{"id", cap_id++},
                                {"image_id", image_id},
                                {"caption", "A photo of a " + a + " in scene " + std::to_string(c + 1) + "."}});
        }

        // Detector A re-finds the first ground-truth box almost exactly and adds a new object.
        auto& da = f.detections["det-a"][file];
        const auto& g0 = gt.front().first;
        da.push_back({fullanno::BBox{g0.x + 1, g0.y + 1, g0.w, g0.h}, gt.front().second, 0.91});
        const fullanno::BBox extra{round1(W * 0.05), round1(H * 0.55), round1(W * 0.3), round1(H * 0.4)};
        da.push_back({extra, "bicycle", 0.8});
        da.push_back({fullanno::BBox{round1(W * 0.6), round1(H * 0.1), 30, 30}, "dog", 0.1});  // below threshold
        // Detector B reports the same new object at the same score (priority decides) and one of its own.
        auto& db = f.detections["det-b"][file];
        db.push_back({fullanno::BBox{extra.x + 2, extra.y, extra.w, extra.h}, "bicycle", 0.8});
        db.push_back({fullanno::BBox{round1(W * 0.7), round1(H * 0.7), round1(W * 0.25), round1(H * 0.25)}, "car", 0.66});

        // OCR on two out of three images: inside the first ground-truth box, plus a stray corner text.
        if (i % 3 != 2) {
            auto& texts = f.ocr["ocr-a"][file];
            static const std::vector<std::string> kWords = {"13", "Carwford", "5T0P", "EXIT 4", "Main St"};
            const std::string word = i < 2 ? kWords[static_cast<std::size_t>(i)] : kWords[static_cast<std::size_t>(pick(5))];
            texts.push_back({fullanno::BBox{g0.x + g0.w * 0.25, g0.y + g0.h * 0.25, g0.w * 0.5, g0.h * 0.25}, word, 0.87});
            if (i % 4 == 0) texts.push_back({fullanno::BBox{W - 30, H - 14, 28, 12}, "2024", 0.55});
        }
    }

    json inst;
    inst["info"] = {{"description", "synthetic fixture"}};
    inst["images"] = images;
    inst["annotations"] = annotations;
    inst["categories"] = categories;
    write(set.instances, inst.dump());

    json caps;
    caps["images"] = images;
    caps["annotations"] = captions;
    write(set.captions, caps.dump());

    write(set.stubs, f.to_json());
    rewrite_config(set, options.workers, set.output, set.checkpoint_dir, options.batch_size);
    return set;
}

void rewrite_config(const SyntheticSet& set, int workers, const std::filesystem::path& output,
                    const std::filesystem::path& checkpoint_dir, int batch_size) {
    write(set.config, config_json(set, workers, output, checkpoint_dir, batch_size).dump(2));
}

}  // namespace fixture
