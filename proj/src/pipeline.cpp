#include "fullanno/pipeline.hpp"

#include <algorithm>
#include <set>

#include "fullanno/enrichment.hpp"
#include "fullanno/errors.hpp"
#include "fullanno/geometry.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/stub_transport.hpp"
#include "fullanno/tokenizer.hpp"
#include "fullanno/worker_pool.hpp"

namespace fullanno {

namespace {

// Ground truth outranks every detector in NMS tie-breaks.
constexpr int kGroundTruthPriority = -1;

ImageRef ref_of(const EnrichedImageAnnotation& r) {
    return ImageRef{r.image_id, r.file_name, r.width, r.height};
}

bool is_fatal(const Error& e) {
    return dynamic_cast<const ConfigError*>(&e) != nullptr || dynamic_cast<const IoError*>(&e) != nullptr;
}

EnrichedImageAnnotation with_failure(EnrichedImageAnnotation r, int stage, const Error& e) {
    r.provenance.failure = StageFailure{stage, e.kind(), e.what()};
    return r;
}

template <typename IdT, typename MakeId>
IdT next_free_id(std::set<IdT>& used, std::uint32_t& ordinal, ImageId image, MakeId make) {
    for (;; ++ordinal) {
        const IdT id = make(image, ordinal);
        if (used.insert(id).second) {
            ++ordinal;
            return id;
        }
    }
}

}  // namespace

Engine::Engine(PipelineConfig config, std::shared_ptr<Gateway> gateway, std::shared_ptr<const Tokenizer> tokenizer)
    : config_(std::move(config)), gateway_(std::move(gateway)), tokenizer_(std::move(tokenizer)) {
    if (!gateway_) throw ConfigError("engine needs a gateway");
    if (!tokenizer_) throw ConfigError("engine needs a tokenizer");
}

EnrichedImageAnnotation Engine::stage1_image(const EnrichedImageAnnotation& record) {
    EnrichedImageAnnotation out = record;
    try {
        const ImageRef image = ref_of(record);
        geometry::SourcePriorities priorities;
        std::map<std::string, std::vector<Detection>> by_source;
        for (const auto& o : record.objects) {
            priorities[o.source_id] = kGroundTruthPriority;
            by_source[o.source_id].push_back(Detection{o.bbox, o.category, o.score, o.source_id});
        }
        for (const auto& id : config_.detector_ids) {
            priorities[id] = gateway_->endpoint(id).priority;
            by_source[id] = gateway_->detect(image, id);
        }
        std::vector<geometry::SourceDetections> per_source(by_source.begin(), by_source.end());
        const auto kept = geometry::aggregate_sources(per_source, priorities, config_.conf_threshold,
                                                      config_.iou_threshold, config_.class_aware_nms);

        std::set<ObjectId> used;
        for (const auto& o : record.objects) used.insert(o.object_id);
        std::vector<bool> reused(record.objects.size(), false);
        std::uint32_t ordinal = 0;
        out.objects.clear();
        for (const auto& d : kept) {
            bool matched = false;
            for (std::size_t i = 0; i < record.objects.size() && !matched; ++i) {
                const auto& o = record.objects[i];
                if (reused[i] || o.source_id != d.source_id || !(o.bbox == d.bbox) || o.category != d.category ||
                    o.score != d.score) {
                    continue;
                }
                reused[i] = true;
                matched = true;
                out.objects.push_back(o);
            }
            if (matched) continue;
            ObjectAnnotation o;
            o.object_id = next_free_id<ObjectId>(used, ordinal, record.image_id, derived_object_id);
            o.bbox = d.bbox;
            o.category = d.category;
            o.score = d.score;
            o.source_id = d.source_id;
            out.objects.push_back(std::move(o));
        }
        // Suppressed objects may have owned OCR links; drop links that no longer resolve.
        std::set<ObjectId> live;
        for (const auto& o : out.objects) live.insert(o.object_id);
        for (auto& e : out.ocr) {
            if (e.matched_object_id && !live.count(*e.matched_object_id)) e.matched_object_id.reset();
        }
        out.provenance.mark_complete(1);
        return out;
    } catch (const Error& e) {
        if (is_fatal(e)) throw;
        return with_failure(record, 1, e);
    }
}

EnrichedImageAnnotation Engine::stage2_image(const EnrichedImageAnnotation& record) {
    EnrichedImageAnnotation out = record;
    try {
        const ImageRef image = ref_of(record);
        for (auto& o : out.objects) {
            if (o.region_description) continue;
            const BBox crop = crop_with_context(record.width, record.height, o.bbox, config_.context_ratio);
            const Completion c =
                gateway_->describe_region(image, crop, build_region_prompt(o.category), config_.captioner_id);
            o.region_description = c.text;
            o.region_token_length = tokenizer_->count(c.text);
        }

        std::set<OcrId> used;
        for (const auto& e : out.ocr) used.insert(e.ocr_id);
        std::uint32_t ordinal = 0;
        for (const auto& id : config_.ocr_ids) {
            for (auto& e : gateway_->recognize_text(image, id)) {
                e.ocr_id = next_free_id<OcrId>(used, ordinal, record.image_id, derived_ocr_id);
                out.ocr.push_back(std::move(e));
            }
        }

        // Verify first, then match.
        if (!out.ocr.empty()) {
            GatewayVerifier verifier(*gateway_, image, config_.verifier_id);
            for (auto& e : out.ocr) {
                if (e.verified) continue;
                const BBox crop = crop_with_context(record.width, record.height, e.bbox, config_.context_ratio);
                e = verify_ocr(e, crop, verifier);
            }
        }
        apply_ocr_matches(out);
        out.provenance.mark_complete(2);
        return out;
    } catch (const Error& e) {
        if (is_fatal(e)) throw;
        return with_failure(record, 2, e);
    }
}

EnrichedImageAnnotation Engine::stage3_image(const EnrichedImageAnnotation& record) {
    EnrichedImageAnnotation out = record;
    try {
        const AnnotationBundle bundle = build_bundle(record, config_.max_simple_captions);
        const IntegrationMessage message = build_integration_prompt(bundle);
        out.dense_caption = gateway_->integrate_caption(message, config_.integrator_id, *tokenizer_);
        out.provenance.mark_complete(3);
        return out;
    } catch (const Error& e) {
        if (is_fatal(e)) throw;
        return with_failure(record, 3, e);
    }
}

DatasetHandle Engine::run_stage(int stage, DatasetHandle handle, const BatchHook& hook) {
    if (stage < 1 || stage > 3) throw StageViolation("no such stage: " + std::to_string(stage));

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < handle.images.size(); ++i) {
        const auto& r = handle.images[i];
        if (r.failed() || r.provenance.complete(stage)) continue;
        if (!r.provenance.complete(stage - 1)) {
            throw StageViolation("image " + std::to_string(r.image_id) + " has not finished stage " +
                                 std::to_string(stage - 1));
        }
        pending.push_back(i);
    }

    for (std::size_t begin = 0; begin < pending.size(); begin += config_.batch_size) {
        const std::size_t end = std::min(pending.size(), begin + config_.batch_size);
        std::vector<EnrichedImageAnnotation> results(end - begin);
        parallel_for(end - begin, config_.worker_count, [&](std::size_t k) {
            const auto& record = handle.images[pending[begin + k]];
            switch (stage) {
                case 1: results[k] = stage1_image(record); break;
                case 2: results[k] = stage2_image(record); break;
                default: results[k] = stage3_image(record); break;
            }
        });
        for (std::size_t k = 0; k < results.size(); ++k) handle.images[pending[begin + k]] = std::move(results[k]);
        if (hook) hook(handle);
    }
    return handle;
}

DatasetHandle Engine::run_stage1(DatasetHandle handle, const BatchHook& hook) {
    return run_stage(1, std::move(handle), hook);
}
DatasetHandle Engine::run_stage2(DatasetHandle handle, const BatchHook& hook) {
    return run_stage(2, std::move(handle), hook);
}
DatasetHandle Engine::run_stage3(DatasetHandle handle, const BatchHook& hook) {
    return run_stage(3, std::move(handle), hook);
}

std::shared_ptr<Gateway> make_gateway(const PipelineConfig& config, std::shared_ptr<Clock> clock) {
    std::shared_ptr<Transport> transport;
    if (config.dry_run) {
        transport = std::make_shared<StubTransport>(config.stub_fixtures ? StubFixtures::from_file(*config.stub_fixtures)
                                                                         : StubFixtures{});
        // Rate limits still apply, but against virtual time.
        if (!clock) clock = std::make_shared<SimulatedClock>();
    } else {
        transport = std::make_shared<HttpTransport>();
    }
    if (!clock) clock = std::make_shared<SteadyClock>();
    std::shared_ptr<ResponseCache> cache;
    if (config.cache_dir) {
        // Stub answers depend on the fixture file, which the request key never sees. Keep them
        // apart from real responses and from each other.
        auto dir = *config.cache_dir;
        if (config.dry_run) {
            dir = dir / "dry-run" /
                  (config.stub_fixtures ? sha256_file(*config.stub_fixtures).substr(0, 16) : std::string("no-fixtures"));
        }
        cache = std::make_shared<DirectoryCache>(dir);
    } else {
        cache = std::make_shared<MemoryCache>();
    }
    return std::make_shared<Gateway>(config.endpoints, std::move(transport), std::move(clock), std::move(cache));
}

DatasetHandle ingest(const PipelineConfig& config, const Tokenizer& tokenizer) {
    DatasetHandle handle;
    if (config.enriched_input) {
        handle = read_enriched(*config.enriched_input);
    } else {
        handle = load_coco(*config.coco_instances, config.coco_captions, tokenizer);
    }
    handle.name = config.dataset_name;
    return handle;
}

std::vector<FailureRecord> collect_failures(const DatasetHandle& handle) {
    std::vector<FailureRecord> out;
    for (const auto& r : handle.images) {
        if (r.provenance.failure) out.push_back(FailureRecord{r.image_id, *r.provenance.failure});
    }
    return out;
}

namespace {

struct Interrupted {};

}  // namespace

RunReport run_all(const PipelineConfig& config, const RunOptions& options) {
    config.check();
    if (options.through_stage < 0 || options.through_stage > 3) {
        throw ConfigError("stage must be 0, 1, 2 or 3");
    }
    auto tokenizer = make_tokenizer(config.tokenizer_id);
    auto gateway = options.gateway ? options.gateway : make_gateway(config);
    Engine engine(config, gateway, tokenizer);
    CheckpointStore store(config.checkpoint_dir);
    const std::string config_hash = config.hash();

    RunReport report;
    DatasetHandle handle;
    if (options.resume && store.exists()) {
        handle = store.load(config_hash);
    } else {
        store.clear();
        handle = ingest(config, *tokenizer);
        store.save(handle, config_hash);
    }

    auto hook = [&](const DatasetHandle& h) {
        store.save(h, config_hash);
        ++report.batches;
        if (options.stop_after_batches && report.batches >= *options.stop_after_batches) throw Interrupted{};
    };

    try {
        for (int stage = 1; stage <= options.through_stage; ++stage) {
            handle = engine.run_stage(stage, std::move(handle), hook);
            report.completed_through = stage;
        }
    } catch (const Interrupted&) {
        report.interrupted = true;
        return report;
    }

    report.failures = collect_failures(handle);
    report.manifest = write_enriched(handle, config.output_path,
                                     ManifestInfo{config.dataset_name, tokenizer->id(), config_hash});
    return report;
}

}  // namespace fullanno
