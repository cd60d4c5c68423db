#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "fixture.hpp"
#include "fullanno/errors.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/serialize.hpp"
#include "fullanno/tokenizer.hpp"
#include "json.hpp"
#include "records.hpp"

using namespace fullanno;
using json = nlohmann::json;

class IngestionTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fixture::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }

    std::filesystem::path write(const std::string& name, const std::string& text) {
        const auto p = dir_ / name;
        std::ofstream(p) << text;
        return p;
    }

    std::filesystem::path dir_;
    WhitespaceTokenizer tok_;
};

namespace {

json minimal_coco() {
    return json::parse(R"({
        "images": [{"id": 1, "file_name": "a.jpg", "width": 100, "height": 80}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 3, "bbox": [10, 10, 20, 20]}],
        "categories": [{"id": 3, "name": "car"}]
    })");
}

}  // namespace

TEST_F(IngestionTest, MinimalDocument) {
    const auto h = load_coco(write("i.json", minimal_coco().dump()), std::nullopt, tok_);
    ASSERT_EQ(h.images.size(), 1u);
    ASSERT_EQ(h.images[0].objects.size(), 1u);
    const auto& o = h.images[0].objects[0];
    EXPECT_EQ(o.object_id, 5);
    EXPECT_EQ(o.category, "car");
    EXPECT_EQ(o.score, 1.0);
    EXPECT_EQ(o.source_id, "coco-gt");
    EXPECT_TRUE(h.images[0].provenance.ingested);
    ASSERT_EQ(h.source_manifest.size(), 1u);
    EXPECT_EQ(h.source_manifest[0].sha256, sha256_file(dir_ / "i.json"));
}

TEST_F(IngestionTest, MissingImagesKey) {
    auto doc = minimal_coco();
    doc.erase("images");
    try {
        load_coco(write("i.json", doc.dump()), std::nullopt, tok_);
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_EQ(e.path(), "$.images");
    }
}

TEST_F(IngestionTest, WrongTypeReportsPath) {
    auto doc = minimal_coco();
    doc["annotations"][0]["bbox"] = "x";
    try {
        load_coco(write("i.json", doc.dump()), std::nullopt, tok_);
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_EQ(e.path(), "$.annotations[0].bbox");
    }
}

TEST_F(IngestionTest, ZeroWidthBoxDropped) {
    auto doc = minimal_coco();
    doc["annotations"][0]["bbox"] = {10, 10, 0, 20};
    const auto h = load_coco(write("i.json", doc.dump()), std::nullopt, tok_);
    ASSERT_EQ(h.images.size(), 1u);
    EXPECT_TRUE(h.images[0].objects.empty());
    EXPECT_EQ(h.report.dropped_boxes, 1);
    EXPECT_EQ(h.report.loaded_objects, 0);
}

TEST_F(IngestionTest, PartiallyOutsideBoxClamped) {
    auto doc = minimal_coco();
    doc["annotations"][0]["bbox"] = {90, -5, 20, 20};
    const auto h = load_coco(write("i.json", doc.dump()), std::nullopt, tok_);
    ASSERT_EQ(h.images[0].objects.size(), 1u);
    EXPECT_EQ(h.images[0].objects[0].bbox, (BBox{90, 0, 10, 15}));
    EXPECT_EQ(h.report.clamped_boxes, 1);
}

TEST_F(IngestionTest, DuplicateImageIdCollides) {
    auto doc = minimal_coco();
    doc["images"].push_back({{"id", 1}, {"file_name", "b.jpg"}, {"width", 10}, {"height", 10}});
    EXPECT_THROW(load_coco(write("i.json", doc.dump()), std::nullopt, tok_), IdCollision);
}

TEST_F(IngestionTest, UnknownImageReference) {
    auto doc = minimal_coco();
    doc["annotations"][0]["image_id"] = 2;
    EXPECT_THROW(load_coco(write("i.json", doc.dump()), std::nullopt, tok_), SchemaError);
}

TEST_F(IngestionTest, CaptionsGetTokenLengths) {
    const auto caps = write("c.json", R"({"annotations": [
        {"id": 1, "image_id": 1, "caption": "A car parked on a street."},
        {"id": 2, "image_id": 1, "caption": "red car"}]})");
    const auto h = load_coco(write("i.json", minimal_coco().dump()), caps, tok_);
    ASSERT_EQ(h.images[0].simple_captions.size(), 2u);
    EXPECT_EQ(h.images[0].simple_captions[0].token_length, 6);
    EXPECT_EQ(h.images[0].simple_captions[1].token_length, 2);
    EXPECT_EQ(h.source_manifest.size(), 2u);
}

TEST_F(IngestionTest, SegmentationPassesThrough) {
    auto doc = minimal_coco();
    doc["annotations"][0]["segmentation"] = {{10, 10, 30, 10, 30, 30}};
    const auto h = load_coco(write("i.json", doc.dump()), std::nullopt, tok_);
    ASSERT_TRUE(h.images[0].objects[0].segmentation);
    EXPECT_EQ(*h.images[0].objects[0].segmentation, "[[10,10,30,10,30,30]]");
}

TEST_F(IngestionTest, ConservationOverRandomFiles) {
    std::mt19937_64 rng(21);
    for (int file = 0; file < 100; ++file) {
        json doc;
        doc["categories"] = {{{"id", 1}, {"name", "thing"}}};
        doc["images"] = json::array();
        doc["annotations"] = json::array();
        const int images = 1 + static_cast<int>(rng() % 5);
        for (int i = 0; i < images; ++i) {
            doc["images"].push_back({{"id", i}, {"file_name", std::to_string(i)}, {"width", 50}, {"height", 40}});
        }
        const int n = static_cast<int>(rng() % 30);
        std::uniform_real_distribution<double> pos(-30, 70), side(-5, 40);
        for (int k = 0; k < n; ++k) {
            doc["annotations"].push_back({{"id", k},
                                          {"image_id", static_cast<int>(rng() % images)},
                                          {"category_id", 1},
                                          {"bbox", {pos(rng), pos(rng), side(rng), side(rng)}}});
        }
        const auto h = load_coco(write("r.json", doc.dump()), std::nullopt, tok_);
        std::int64_t objects = 0;
        for (const auto& r : h.images) {
            objects += static_cast<std::int64_t>(r.objects.size());
            EXPECT_TRUE(validate(r).empty());
        }
        ASSERT_EQ(objects, h.report.loaded_objects);
        ASSERT_EQ(h.report.loaded_objects + h.report.dropped_boxes, n) << "file " << file;
        ASSERT_EQ(h.report.input_annotations, n);
    }
}

TEST_F(IngestionTest, VgRegions) {
    const auto p = write("vg.json", R"([
        {"id": 1, "regions": [
            {"region_id": 1, "image_id": 1, "phrase": "a dog", "x": 1, "y": 2, "width": 10, "height": 10},
            {"region_id": 2, "image_id": 1, "phrase": "grass", "x": -4, "y": 0, "width": 10, "height": 10},
            {"region_id": 3, "image_id": 1, "x": 0, "y": 0, "width": 5, "height": 5}
        ]}
    ])");
    const auto vg = load_vg_regions(p);
    ASSERT_EQ(vg.regions.size(), 1u);
    ASSERT_EQ(vg.regions.at(1).size(), 2u);
    EXPECT_EQ(vg.regions.at(1)[0].phrase, "a dog");
    EXPECT_EQ(vg.regions.at(1)[1].bbox, (BBox{0, 0, 6, 10}));
    EXPECT_EQ(vg.skipped, 1);
    EXPECT_EQ(vg.clamped, 1);

    EXPECT_TRUE(load_vg_regions(write("empty.json", "[]")).regions.empty());
    EXPECT_THROW(load_vg_regions(write("bad.json", "{}")), SchemaError);
}

TEST_F(IngestionTest, MergeByFileNamePrefersPrimary) {
    DatasetHandle a, b;
    auto r1 = fixture::sample_record(1);
    auto r2 = fixture::sample_record(2);
    auto dup = fixture::sample_record(9);
    dup.file_name = r1.file_name;
    a.images = {r1};
    b.images = {dup, r2};
    const auto merged = merge_by_file_name(a, b);
    ASSERT_EQ(merged.images.size(), 2u);
    EXPECT_EQ(merged.images[0].image_id, 1);
    EXPECT_EQ(merged.images[1].image_id, 2);

    auto clash = fixture::sample_record(1);
    clash.file_name = "other.jpg";
    b.images = {clash};
    EXPECT_THROW(merge_by_file_name(a, b), IdCollision);
}

TEST_F(IngestionTest, WriteSortsByImageId) {
    DatasetHandle h;
    h.name = "t";
    h.images = {fixture::sample_record(9), fixture::sample_record(2)};
    const auto m = write_enriched(h, dir_ / "out.jsonl", {"t", "whitespace", ""});
    EXPECT_EQ(m.line_count, 2);
    const std::string text = read_file(dir_ / "out.jsonl");
    EXPECT_EQ(m.content_sha256, sha256_hex(text));
    EXPECT_LT(text.find("\"image_id\":2"), text.find("\"image_id\":9"));
    EXPECT_EQ(read_manifest(manifest_path_for(dir_ / "out.jsonl")), m);
}

TEST_F(IngestionTest, InvalidRecordBlocksWrite) {
    DatasetHandle h;
    auto bad = fixture::sample_record(3);
    bad.objects[0].bbox.w = -1;
    h.images = {fixture::sample_record(1), bad};
    try {
        write_enriched(h, dir_ / "out.jsonl", {});
        FAIL();
    } catch (const InvariantViolation& e) {
        EXPECT_NE(std::string(e.what()).find("image 3"), std::string::npos);
    }
    EXPECT_FALSE(std::filesystem::exists(dir_ / "out.jsonl"));
}

TEST_F(IngestionTest, RoundTrip) {
    DatasetHandle h;
    h.name = "rt";
    h.images = {fixture::sample_record(1), fixture::sample_record(2)};
    write_enriched(h, dir_ / "a.jsonl", {"rt", "whitespace", ""});
    const auto back = read_enriched(dir_ / "a.jsonl");
    EXPECT_EQ(back.name, "rt");
    ASSERT_EQ(back.images.size(), 2u);
    EXPECT_EQ(back.images[0], canonicalized(h.images[0]));
    write_enriched(back, dir_ / "b.jsonl", {"rt", "whitespace", ""});
    EXPECT_EQ(read_file(dir_ / "a.jsonl"), read_file(dir_ / "b.jsonl"));
}

TEST_F(IngestionTest, ReadEnrichedErrors) {
    EXPECT_TRUE(read_enriched(write("empty.jsonl", "")).images.empty());
    try {
        read_enriched(write("bad.jsonl", "{broken\n"));
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
    const std::string good = canonical_serialize(fixture::sample_record(1));
    try {
        read_enriched(write("bad2.jsonl", good + "\n{\"image_id\": 2}\n"));
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}
