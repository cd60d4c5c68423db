#include <gtest/gtest.h>

#include "fixture.hpp"
#include "fullanno/errors.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/pipeline.hpp"
#include "fullanno/serialize.hpp"
#include "fullanno/tokenizer.hpp"

using namespace fullanno;

namespace {

// Answers like the stubs except for requests that mention `file_name`.
class FailingFor final : public Transport {
public:
    FailingFor(StubFixtures fixtures, std::string file_name, std::string path_suffix)
        : stub_(std::move(fixtures)), file_name_(std::move(file_name)), suffix_(std::move(path_suffix)) {}

    HttpResponse post(const EndpointConfig& endpoint, const HttpRequest& request) override {
        const bool path_hit = request.url.size() >= suffix_.size() &&
                              request.url.compare(request.url.size() - suffix_.size(), suffix_.size(), suffix_) == 0;
        if (path_hit && request.body.find(file_name_) != std::string::npos) {
            return HttpResponse{400, R"({"error": "bad image"})"};
        }
        return stub_.post(endpoint, request);
    }

private:
    StubTransport stub_;
    std::string file_name_;
    std::string suffix_;
};

std::size_t count_objects(const DatasetHandle& h) {
    std::size_t n = 0;
    for (const auto& r : h.images) n += r.objects.size();
    return n;
}

const ObjectAnnotation* find_object(const EnrichedImageAnnotation& r, ObjectId id) {
    for (const auto& o : r.objects) {
        if (o.object_id == id) return &o;
    }
    return nullptr;
}

}  // namespace

class PipelineTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fixture::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
        fixture::Options o;
        o.images = 20;
        o.batch_size = 6;
        set_ = fixture::write_synthetic(dir_, o);
        config_ = load_config(set_.config);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }

    Engine engine(std::shared_ptr<Transport> transport = nullptr) {
        if (!transport) transport = std::make_shared<StubTransport>(set_.fixtures);
        auto gw = std::make_shared<Gateway>(config_.endpoints, transport, std::make_shared<SimulatedClock>(),
                                            std::make_shared<MemoryCache>());
        return Engine(config_, gw, make_tokenizer(config_.tokenizer_id));
    }

    std::filesystem::path dir_;
    fixture::SyntheticSet set_;
    PipelineConfig config_;
    WhitespaceTokenizer tok_;
};

TEST_F(PipelineTest, IngestMatchesFixture) {
    const auto h = ingest(config_, tok_);
    EXPECT_EQ(h.name, "synthetic");
    EXPECT_EQ(static_cast<int>(h.images.size()), set_.images);
    EXPECT_EQ(h.report.input_annotations, set_.input_annotations);
    EXPECT_EQ(h.report.dropped_boxes, set_.degenerate_annotations);
    EXPECT_EQ(h.report.loaded_objects + h.report.dropped_boxes, set_.input_annotations);
}

TEST_F(PipelineTest, StagesRunInOrder) {
    auto e = engine();
    const auto h = ingest(config_, tok_);
    EXPECT_THROW(e.run_stage2(h), StageViolation);
    EXPECT_THROW(e.run_stage3(h), StageViolation);
    EXPECT_THROW(e.run_stage(4, h), StageViolation);
    const auto s1 = e.run_stage1(h);
    EXPECT_THROW(e.run_stage3(s1), StageViolation);
    EXPECT_NO_THROW(e.run_stage2(s1));
}

TEST_F(PipelineTest, StageOneKeepsGroundTruthAndAddsDetections) {
    auto e = engine();
    const auto h = ingest(config_, tok_);
    const auto s1 = e.run_stage1(h);
    ASSERT_EQ(s1.images.size(), h.images.size());
    for (std::size_t i = 0; i < h.images.size(); ++i) {
        const auto& before = h.images[i];
        const auto& after = s1.images[i];
        EXPECT_TRUE(after.provenance.stage1);
        // every ground-truth object survives with its id
        for (const auto& o : before.objects) {
            const auto* kept = find_object(after, o.object_id);
            ASSERT_NE(kept, nullptr) << "image " << before.image_id;
            EXPECT_EQ(kept->bbox, o.bbox);
        }
        int bikes = 0, low_dogs = 0;
        for (const auto& o : after.objects) {
            if (o.source_id == kGroundTruthSource) continue;
            EXPECT_GE(o.score, config_.conf_threshold);
            EXPECT_GE(o.object_id, derived_object_id(0, 0));
            bikes += o.category == "bicycle";
            low_dogs += o.score < 0.3;
            // det-a outranks det-b for the duplicate bicycle
            if (o.category == "bicycle") {
                EXPECT_EQ(o.source_id, "det-a");
            }
        }
        EXPECT_LE(bikes, 1);
        EXPECT_EQ(low_dogs, 0);
        EXPECT_TRUE(validate(after).empty());
    }
}

TEST_F(PipelineTest, LaterStagesConserveObjects) {
    auto e = engine();
    const auto s1 = e.run_stage1(ingest(config_, tok_));
    const auto s2 = e.run_stage2(s1);
    const auto s3 = e.run_stage3(s2);
    EXPECT_EQ(count_objects(s1), count_objects(s2));
    EXPECT_EQ(count_objects(s1), count_objects(s3));
    for (const auto& r : s3.images) {
        EXPECT_TRUE(r.provenance.stage3);
        ASSERT_TRUE(r.dense_caption);
        EXPECT_GT(r.dense_caption->token_length, 0);
        EXPECT_EQ(r.dense_caption->generator.timestamp, 1700000000);
        for (const auto& o : r.objects) {
            ASSERT_TRUE(o.region_description);
            EXPECT_EQ(o.region_token_length, tok_.count(*o.region_description));
        }
        for (const auto& t : r.ocr) {
            EXPECT_TRUE(t.verified);
            EXPECT_NE(r.dense_caption->text.find(t.best_text()), std::string::npos) << t.best_text();
        }
        EXPECT_TRUE(validate(r).empty());
    }
}

TEST_F(PipelineTest, OcrVerifiedCorrectedAndMatched) {
    auto e = engine();
    const auto s2 = e.run_stage2(e.run_stage1(ingest(config_, tok_)));
    int corrected = 0, attached = 0, unattached = 0;
    for (const auto& r : s2.images) {
        for (const auto& t : r.ocr) {
            if (t.text == "5T0P") {
                EXPECT_EQ(t.corrected_text, "STOP");
                ++corrected;
            }
            if (t.text == "2024") {
                ++unattached;
            } else if (t.matched_object_id) {
                ++attached;
            }
        }
    }
    EXPECT_GT(attached, 0);
    EXPECT_GT(unattached, 0);
    (void)corrected;
}

TEST_F(PipelineTest, RerunningAStageIsANoOp) {
    auto e = engine();
    const auto s1 = e.run_stage1(ingest(config_, tok_));
    const auto calls = e.gateway().total_attempts();
    const auto again = e.run_stage1(s1);
    EXPECT_EQ(e.gateway().total_attempts(), calls);
    EXPECT_EQ(render_jsonl(again), render_jsonl(s1));
}

TEST_F(PipelineTest, FailureStaysWithOneImage) {
    const std::string victim = "synthetic_000003.jpg";
    auto e = engine(std::make_shared<FailingFor>(set_.fixtures, victim, "/chat/completions"));
    const auto h = e.run_stage3(e.run_stage2(e.run_stage1(ingest(config_, tok_))));
    const auto failures = collect_failures(h);
    ASSERT_EQ(failures.size(), 1u);
    EXPECT_EQ(failures[0].image_id, 3);
    EXPECT_EQ(failures[0].failure.stage, 2);
    EXPECT_EQ(failures[0].failure.kind, "ClientError");
    for (const auto& r : h.images) {
        EXPECT_EQ(r.provenance.stage3, r.image_id != 3);
        EXPECT_TRUE(validate(r).empty());
    }
    // the failed image keeps its stage 1 result
    EXPECT_TRUE(h.find(3)->provenance.stage1);
}

TEST_F(PipelineTest, RunAllWritesOutputAndManifest) {
    const auto report = run_all(config_);
    EXPECT_FALSE(report.interrupted);
    EXPECT_EQ(report.completed_through, 3);
    ASSERT_TRUE(report.manifest);
    EXPECT_EQ(report.manifest->config_hash, config_.hash());
    EXPECT_EQ(report.manifest->line_count, set_.images);
    EXPECT_EQ(report.manifest->content_sha256, sha256_file(config_.output_path));
    EXPECT_EQ(report.manifest->sources.size(), 2u);
    const auto back = read_enriched(config_.output_path);
    for (const auto& r : back.images) EXPECT_TRUE(r.dense_caption);
}

TEST_F(PipelineTest, ThroughStageOneStopsThere) {
    RunOptions o;
    o.through_stage = 1;
    run_all(config_, o);
    for (const auto& r : read_enriched(config_.output_path).images) {
        EXPECT_TRUE(r.provenance.stage1);
        EXPECT_FALSE(r.provenance.stage2);
    }
}

TEST_F(PipelineTest, ResumeContinuesWhereItStopped) {
    const auto full = run_all(config_);
    const std::string expected = read_file(config_.output_path);

    // 20 images in batches of 6 -> 4 batches per stage
    for (std::int64_t stop : {1, 4, 6, 9, 11}) {
        const auto sub = dir_ / ("resume-" + std::to_string(stop));
        fixture::rewrite_config(set_, 4, sub / "out.jsonl", sub / "ck", 6);
        const auto cfg = load_config(set_.config);
        RunOptions first;
        first.stop_after_batches = stop;
        const auto r1 = run_all(cfg, first);
        EXPECT_TRUE(r1.interrupted);
        EXPECT_FALSE(std::filesystem::exists(cfg.output_path));

        RunOptions second;
        second.resume = true;
        const auto r2 = run_all(cfg, second);
        EXPECT_FALSE(r2.interrupted);
        EXPECT_EQ(r2.batches, 12 - stop) << "stop " << stop;
        EXPECT_EQ(read_file(cfg.output_path), expected) << "stop " << stop;
        EXPECT_EQ(r2.manifest->content_sha256, full.manifest->content_sha256);
    }
}

TEST_F(PipelineTest, ResumeRejectsChangedConfig) {
    RunOptions first;
    first.stop_after_batches = 2;
    run_all(config_, first);
    auto changed = config_;
    changed.iou_threshold = 0.5;
    RunOptions second;
    second.resume = true;
    EXPECT_THROW(run_all(changed, second), CheckpointMismatch);
}

TEST_F(PipelineTest, WorkerCountDoesNotChangeOutput) {
    std::string reference;
    for (int workers : {1, 4, 16}) {
        const auto sub = dir_ / ("w" + std::to_string(workers));
        fixture::rewrite_config(set_, workers, sub / "out.jsonl", sub / "ck", 6);
        const auto cfg = load_config(set_.config);
        run_all(cfg);
        const auto text = read_file(cfg.output_path);
        if (reference.empty()) reference = text;
        EXPECT_EQ(text, reference) << workers << " workers";
    }
}

TEST_F(PipelineTest, EnrichedInputCanBeRerun) {
    run_all(config_);
    auto cfg = config_;
    cfg.coco_instances.reset();
    cfg.coco_captions.reset();
    cfg.enriched_input = config_.output_path;
    cfg.output_path = dir_ / "second.jsonl";
    cfg.checkpoint_dir = dir_ / "ck2";
    const auto report = run_all(cfg);
    EXPECT_EQ(report.batches, 0);
    EXPECT_EQ(read_file(cfg.output_path), read_file(config_.output_path));
}

TEST_F(PipelineTest, DryRunCacheFollowsFixtures) {
    auto fresh = [&](const std::string& tag, bool cached, const std::filesystem::path& fixtures) {
        auto cfg = config_;
        cfg.cache_dir = cached ? std::optional(dir_ / "cache") : std::nullopt;
        cfg.stub_fixtures = fixtures;
        cfg.output_path = dir_ / (tag + ".jsonl");
        cfg.checkpoint_dir = dir_ / ("ck-" + tag);
        run_all(cfg);
        return read_file(cfg.output_path);
    };
    const auto first = fresh("a", true, *config_.stub_fixtures);

    // same requests, different canned answers
    auto other = set_.fixtures;
    other.detections.clear();
    other.ocr.clear();
    const auto other_path = dir_ / "other-fixtures.json";
    write_file_atomic(other_path, other.to_json());
    const auto second = fresh("b", true, other_path);
    EXPECT_NE(second, first);
    EXPECT_EQ(second, fresh("c", false, other_path));
    EXPECT_EQ(fresh("d", true, *config_.stub_fixtures), first);
}
