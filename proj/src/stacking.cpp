#include "retfuse/stacking.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_set>

#include "retfuse/error.hpp"

namespace fs = std::filesystem;

namespace retfuse {

Tensor<float> PreparedSplit::batch(std::span<const std::size_t> indices, std::span<const int> ops) const {
    Tensor<float> t(static_cast<int>(indices.size()), 6, side, side);
    const std::size_t stride = sample_floats();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::span<const float> src(pixels.data() + indices[k] * stride, stride);
        const std::span<float> dst(t.sample(static_cast<int>(k)), stride);
        if (ops.empty() || ops[k] == 0) {
            std::copy(src.begin(), src.end(), dst.begin());
        } else {
            augment_planes(src, dst, 6, side, side, ops[k]);
        }
    }
    return t;
}

PreparedSplit prepare_split(const std::vector<PatientRecord>& records, int side, const NormalizationSpec& norm,
                            const MetadataBounds& bounds) {
    PreparedSplit split;
    split.side = side;
    split.pixels.reserve(records.size() * split.sample_floats());
    for (const auto& r : records) {
        const auto pair = load_eye_pair(r, side, norm);
        split.ids.push_back(r.patient_id);
        split.labels.push_back(r.diabetes_label);
        split.meta.push_back(normalize_metadata(r, bounds));
        split.pixels.insert(split.pixels.end(), pair.data.begin(), pair.data.end());
    }
    return split;
}

void check_disjoint(const DatasetSplits& splits) {
    std::unordered_set<std::string> seen;
    for (const auto* s : {&splits.train1, &splits.train2, &splits.test})
        for (const auto& r : *s)
            if (!seen.insert(r.patient_id).second) throw Error("split hygiene: patient " + r.patient_id + " appears in more than one split");
}

void verify_split_hygiene(const SplitAudit& audit, const DatasetSplits& splits) {
    auto ids_of = [](const std::vector<PatientRecord>& recs) {
        std::set<std::string> ids;
        for (const auto& r : recs) ids.insert(r.patient_id);
        return ids;
    };
    const auto train1 = ids_of(splits.train1), train2 = ids_of(splits.train2), test = ids_of(splits.test);
    auto within = [](const std::set<std::string>& used, const std::set<std::string>& allowed, const char* step) {
        for (const auto& id : used)
            if (!allowed.count(id)) throw Error(std::string("split hygiene: ") + step + " touched patient " + id + " outside its split");
    };
    within(audit.stage1_batches, train1, "stage-1 training");
    within(audit.fusion_head_training, train1, "fusion-head training");
    within(audit.stage2_features, train2, "stage-2 feature extraction");
    within(audit.stage2_training, train2, "stage-2 training");
    within(audit.evaluation, test, "evaluation");
}

namespace {

class BackboneObjective final : public Objective<float> {
public:
    BackboneObjective(BackboneModel<float>& model, const PreparedSplit& split, bool augment, std::set<std::string>* seen)
        : model_(model), split_(split), augment_(augment), seen_(seen) {}

    std::size_t size() const override { return split_.size(); }
    int label(std::size_t i) const override { return split_.labels[i]; }
    std::vector<nn::ParamRef<float>> parameters() override { return model_.parameters(); }
    std::vector<nn::BufferRef<float>> buffers() override { return model_.buffers(); }

    BatchResult run_batch(std::span<const std::size_t> batch, std::mt19937_64& rng) override {
        std::vector<int> ops(batch.size(), 0);
        if (augment_) {
            std::uniform_int_distribution<int> pick(0, kAugmentOps - 1);
            for (auto& op : ops) op = pick(rng);
        }
        if (seen_)
            for (std::size_t i : batch) seen_->insert(split_.ids[i]);
        const Tensor<float> x = split_.batch(batch, ops);
        const Tensor<float> z = model_.logits(x, true);
        Tensor<float> grad(z.n, 2, 1, 1);
        BatchResult r;
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (int i = 0; i < z.n; ++i) {
            const int y = split_.labels[batch[static_cast<std::size_t>(i)]];
            const std::array<double, 2> logits = {z(i, 0, 0, 0), z(i, 1, 0, 0)};
            r.loss_sum += cross_entropy(logits, y);
            r.correct += static_cast<int>(logits[1] > logits[0]) == y;
            const double mx = std::max(logits[0], logits[1]);
            const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
            grad(i, 0, 0, 0) = static_cast<float>((e0 / (e0 + e1) - (y == 0)) * inv);
            grad(i, 1, 0, 0) = static_cast<float>((e1 / (e0 + e1) - (y == 1)) * inv);
        }
        model_.backward(grad);
        return r;
    }

private:
    BackboneModel<float>& model_;
    const PreparedSplit& split_;
    bool augment_;
    std::set<std::string>* seen_;
};

std::vector<MetadataVector> metadata_vectors(const PreparedSplit& split, MetadataMode mode) {
    std::vector<MetadataVector> out;
    out.reserve(split.size());
    for (const auto& m : split.meta) out.push_back(*expand_metadata(mode, m.age, m.gender));
    return out;
}

}  // namespace

std::vector<TrainedBase> train_backbones(const PreparedSplit& train1, const StackingConfig& cfg, SplitAudit* audit) {
    if (cfg.backbones.empty()) throw Error("stage 1 needs at least one backbone");
    for (const auto& name : cfg.backbones)
        if (!is_registered_backbone(name)) (void)build_backbone<float>(name, 0);  // throws with the registry listing

    const std::size_t k = cfg.backbones.size();
    std::vector<TrainedBase> bases(k);
    std::vector<std::set<std::string>> seen(k);
    std::vector<std::exception_ptr> errors(k);

    auto train_one = [&](std::size_t i) {
        try {
            const std::uint64_t seed = base_seed(cfg.run_seed, i);
            auto model = build_backbone<float>(cfg.backbones[i], seed);
            TrainConfig tc = cfg.backbone_training;
            tc.seed = seed;
            BackboneObjective objective(*model, train1, cfg.augment, audit ? &seen[i] : nullptr);
            bases[i].backbone_trace = train_loop<float>(objective, tc);
            bases[i].backbone = std::move(model);
            const auto& last = bases[i].backbone_trace;
            spdlog::info("stage 1: {} (seed {}) trained {} epochs, final loss {:.4f}", cfg.backbones[i], seed, last.size(),
                         last.empty() ? 0.0 : last.back().loss);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const int threads = std::clamp(cfg.threads, 1, static_cast<int>(k));
    if (threads == 1) {
        for (std::size_t i = 0; i < k; ++i) train_one(i);
    } else {
        std::vector<std::thread> pool;
        std::mutex mu;
        std::size_t next = 0;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= k) return;
                        i = next++;
                    }
                    train_one(i);
                }
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    if (audit)
        for (auto& s : seen) audit->stage1_batches.insert(s.begin(), s.end());
    return bases;
}

std::vector<BaseModelOutput> base_outputs(BackboneModel<float>& model, const PreparedSplit& split) {
    std::vector<BaseModelOutput> out;
    out.reserve(split.size());
    constexpr std::size_t chunk = 64;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(split.size(), start + chunk); ++i) idx.push_back(i);
        const auto rows = model.forward(split.batch(idx));
        out.insert(out.end(), rows.begin(), rows.end());
    }
    return out;
}

void train_fusion_heads(std::vector<TrainedBase>& bases, const PreparedSplit& train1, MetadataMode mode, const StackingConfig& cfg,
                        SplitAudit* audit) {
    for (auto& b : bases) {
        b.head.reset();
        b.head_trace.clear();
    }
    if (mode == MetadataMode::none) return;
    const auto metas = metadata_vectors(train1, mode);
    for (std::size_t i = 0; i < bases.size(); ++i) {
        TrainConfig tc = cfg.head_training;
        tc.seed = base_seed(cfg.run_seed, i);
        const auto outputs = base_outputs(*bases[i].backbone, train1);
        bases[i].head = train_fusion_head(outputs, metas, train1.labels, tc, &bases[i].head_trace);
    }
    if (audit) audit->fusion_head_training.insert(train1.ids.begin(), train1.ids.end());
}

std::vector<TrainedBase> train_stage1(const PreparedSplit& train1, const StackingConfig& cfg, SplitAudit* audit) {
    auto bases = train_backbones(train1, cfg, audit);
    train_fusion_heads(bases, train1, cfg.mode, cfg, audit);
    return bases;
}

std::vector<std::array<double, 2>> base_scores(const TrainedBase& base, const PreparedSplit& split, MetadataMode mode) {
    const auto outputs = base_outputs(*base.backbone, split);
    std::vector<std::array<double, 2>> scores;
    scores.reserve(outputs.size());
    if (mode == MetadataMode::none) {
        for (const auto& o : outputs) scores.push_back(o.scores);
        return scores;
    }
    if (!base.head) throw Error("base " + base.backbone->name() + " has no fusion head for mode " + mode_name(mode));
    const auto metas = metadata_vectors(split, mode);
    for (std::size_t i = 0; i < outputs.size(); ++i) scores.push_back(fuse_forward(outputs[i], metas[i], *base.head));
    return scores;
}

FeatureSet extract_features(const std::vector<TrainedBase>& bases, const std::vector<std::string>& ordering, const PreparedSplit& split,
                            MetadataMode mode) {
    if (bases.size() != ordering.size()) throw Error("feature extraction: bundle ordering lists a different number of bases");
    for (std::size_t i = 0; i < bases.size(); ++i)
        if (bases[i].backbone->name() != ordering[i])
            throw Error("feature extraction: base " + std::to_string(i) + " is " + bases[i].backbone->name() + " but ordering expects " +
                        ordering[i]);
    std::vector<std::vector<std::array<double, 2>>> per_base;
    per_base.reserve(bases.size());
    for (const auto& b : bases) per_base.push_back(base_scores(b, split, mode));

    FeatureSet features;
    features.dim = static_cast<int>(2 * bases.size());
    std::vector<double> row(static_cast<std::size_t>(features.dim));
    for (std::size_t s = 0; s < split.size(); ++s) {
        for (std::size_t b = 0; b < bases.size(); ++b) {
            row[2 * b] = per_base[b][s][0];
            row[2 * b + 1] = per_base[b][s][1];
        }
        features.push(row, split.labels[s]);
    }
    return features;
}

StackerParams train_stage2(const FeatureSet& features, const TrainConfig& cfg, EpochTrace* trace) {
    return {train_linear_softmax(features, cfg, trace)};
}

EnsembleBundle fit_ensemble(const std::vector<TrainedBase>& backbones, const PreparedSplit& train1, const PreparedSplit& train2,
                            MetadataMode mode, const StackingConfig& cfg, const NormalizationSpec& norm, const MetadataBounds& bounds,
                            SplitAudit* audit) {
    EnsembleBundle bundle;
    bundle.bases = backbones;
    for (const auto& b : backbones) bundle.ordering.push_back(b.backbone->name());
    bundle.mode = mode;
    bundle.norm = norm;
    bundle.bounds = bounds;
    bundle.image_side = train1.side;
    bundle.run_seed = cfg.run_seed;

    train_fusion_heads(bundle.bases, train1, mode, cfg, audit);
    const FeatureSet features = extract_features(bundle.bases, bundle.ordering, train2, mode);
    if (audit) {
        audit->stage2_features.insert(train2.ids.begin(), train2.ids.end());
        audit->stage2_training.insert(train2.ids.begin(), train2.ids.end());
    }
    TrainConfig tc = cfg.head_training;
    tc.seed = stacker_seed(cfg.run_seed, backbones.size());
    bundle.stacker = train_stage2(features, tc, &bundle.stacker_trace);
    return bundle;
}

std::vector<Prediction> predict_split(const EnsembleBundle& bundle, const PreparedSplit& split) {
    const FeatureSet features = extract_features(bundle.bases, bundle.ordering, split, bundle.mode);
    std::vector<Prediction> out;
    out.reserve(split.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto scores = bundle.stacker.layer.scores(features.row(i));
        out.push_back({decide(scores), scores});
    }
    return out;
}

Prediction predict(const EnsembleBundle& bundle, const PatientRecord& record) {
    const PreparedSplit one = prepare_split({record}, bundle.image_side, bundle.norm, bundle.bounds);
    return predict_split(bundle, one).front();
}

namespace {

constexpr int kBundleSchema = 1;

std::string base_file(std::size_t i, const std::string& name) { return "base_" + std::to_string(i) + "_" + name + ".ckpt"; }

}  // namespace

void save_bundle(const EnsembleBundle& bundle, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json meta = {{"schema_version", kBundleSchema},
                           {"mode", mode_name(bundle.mode)},
                           {"ordering", bundle.ordering},
                           {"image_side", bundle.image_side},
                           {"normalization", {{"min", bundle.norm.min_value}, {"max", bundle.norm.max_value}}},
                           {"metadata_bounds", {{"age_min", bundle.bounds.age_min}, {"age_max", bundle.bounds.age_max}}},
                           {"run_seed", bundle.run_seed},
                           {"stacker_seed", stacker_seed(bundle.run_seed, bundle.bases.size())}};
    nlohmann::json seeds = nlohmann::json::array();
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < bundle.bases.size(); ++i) {
        const auto& b = bundle.bases[i];
        Checkpoint ckpt = backbone_checkpoint(*b.backbone);
        if (b.head) {
            append_linear(ckpt, "fusion_head", b.head->layer);
            ckpt.meta["fusion_head"] = true;
        }
        save_checkpoint(dir / base_file(i, b.backbone->name()), ckpt);
        seeds.push_back(b.backbone->seed());
        files.push_back(base_file(i, b.backbone->name()));
    }
    meta["base_seeds"] = seeds;
    meta["base_files"] = files;

    Checkpoint stacker;
    stacker.meta = {{"kind", "stacker"}, {"inputs", bundle.stacker.layer.inputs}};
    append_linear(stacker, "stacker", bundle.stacker.layer);
    save_checkpoint(dir / "stacker.ckpt", stacker);

    std::ofstream out(dir / "bundle.json", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "bundle.json").string());
    out << meta.dump(2) << '\n';
}

EnsembleBundle load_bundle(const fs::path& dir) {
    std::ifstream in(dir / "bundle.json");
    if (!in) throw Error("bundle metadata missing: " + (dir / "bundle.json").string());
    const auto meta = nlohmann::json::parse(in);
    if (meta.at("schema_version").get<int>() != kBundleSchema) throw Error("unsupported bundle schema");

    EnsembleBundle bundle;
    bundle.mode = parse_metadata_mode(meta.at("mode").get<std::string>());
    bundle.ordering = meta.at("ordering").get<std::vector<std::string>>();
    bundle.image_side = meta.at("image_side").get<int>();
    bundle.norm = {meta.at("normalization").at("min").get<double>(), meta.at("normalization").at("max").get<double>()};
    bundle.bounds = {meta.at("metadata_bounds").at("age_min").get<double>(), meta.at("metadata_bounds").at("age_max").get<double>()};
    bundle.run_seed = meta.at("run_seed").get<std::uint64_t>();
    const auto files = meta.at("base_files").get<std::vector<std::string>>();
    if (files.size() != bundle.ordering.size()) throw Error("bundle lists " + std::to_string(files.size()) + " base files for " +
                                                            std::to_string(bundle.ordering.size()) + " ordered bases");
    for (const auto& f : files) {
        const Checkpoint ckpt = load_checkpoint(dir / f);
        TrainedBase base;
        base.backbone = backbone_from_checkpoint<float>(ckpt);
        if (ckpt.meta.value("fusion_head", false)) base.head = FusionHeadParams{read_linear(ckpt, "fusion_head")};
        bundle.bases.push_back(std::move(base));
    }
    for (std::size_t i = 0; i < bundle.bases.size(); ++i)
        if (bundle.bases[i].backbone->name() != bundle.ordering[i]) throw Error("bundle ordering does not match stored base " + files[i]);
    const Checkpoint stacker = load_checkpoint(dir / "stacker.ckpt");
    bundle.stacker.layer = read_linear(stacker, "stacker");
    if (bundle.stacker.layer.inputs != static_cast<int>(2 * bundle.bases.size())) throw Error("stacker width does not match base count");
    return bundle;
}

}  // namespace retfuse
