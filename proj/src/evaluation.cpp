#include "retfuse/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "retfuse/csv.hpp"
#include "retfuse/error.hpp"

namespace fs = std::filesystem;

namespace retfuse {

double row_average(std::span<const double> accuracies) {
    if (accuracies.empty()) throw Error("row_average: empty row");
    return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double stage_diff(double stage1_average, double stage2_accuracy) { return stage2_accuracy - stage1_average; }

double ConditionResult::stage1_average() const {
    std::vector<double> acc;
    for (const auto& s : stage1) acc.push_back(s.accuracy);
    return row_average(acc);
}

double ConditionResult::diff() const {
    if (!stage2) throw Error("condition " + mode_name(mode) + " has no stage-2 result");
    return stage_diff(stage1_average(), stage2->accuracy);
}

const ConditionResult* AblationResult::find(MetadataMode mode) const {
    for (const auto& c : conditions)
        if (c.mode == mode) return &c;
    return nullptr;
}

const ConditionResult& AblationResult::at(MetadataMode mode) const {
    const auto* c = find(mode);
    if (!c) throw Error("result has no condition " + mode_name(mode));
    return *c;
}

std::string condition_label(MetadataMode mode) {
    switch (mode) {
        case MetadataMode::none: return "w/o Age & Gender";
        case MetadataMode::gender: return "w/i Gender";
        case MetadataMode::both: return "w/i Age & Gender";
        case MetadataMode::age: return "w/i Age";
    }
    return "?";
}

std::string format4(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", value);
    return buf;
}

namespace {

std::string full(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string optional_cell(const std::optional<double>& v) { return v ? full(*v) : std::string(); }
std::string optional_pct(const std::optional<double>& v) { return v ? format4(*v) : std::string("n/a"); }

std::vector<const ConditionResult*> ordered_conditions(const AblationResult& result) {
    std::vector<const ConditionResult*> out;
    for (MetadataMode m : kAblationConditions)
        if (const auto* c = result.find(m)) out.push_back(c);
    return out;
}

void check_complete(const AblationResult& result) {
    if (result.backbones.empty()) throw Error("incomplete result: no backbones");
    if (result.conditions.empty()) throw Error("incomplete result: no conditions");
    for (const auto& c : result.conditions) {
        if (c.stage1.size() != result.backbones.size())
            throw Error("incomplete result: condition " + mode_name(c.mode) + " has " + std::to_string(c.stage1.size()) +
                        " stage-1 scores for " + std::to_string(result.backbones.size()) + " backbones");
        if (!c.stage2) throw Error("incomplete result: condition " + mode_name(c.mode) + " lacks the ensemble score");
    }
}

}  // namespace

RenderedTables render_tables(const AblationResult& result) {
    check_complete(result);
    const auto conds = ordered_conditions(result);
    RenderedTables out;

    csv::Row h1{"condition"};
    h1.insert(h1.end(), result.backbones.begin(), result.backbones.end());
    h1.push_back("average");
    out.table1_csv = csv::join(h1) + "\n";
    out.table2_csv = csv::join({"condition", "training1", "training2", "diff"}) + "\n";
    for (const auto* c : conds) {
        csv::Row row{mode_name(c->mode)};
        for (const auto& s : c->stage1) row.push_back(format4(s.accuracy));
        row.push_back(format4(c->stage1_average()));
        out.table1_csv += csv::join(row) + "\n";
        out.table2_csv += csv::join({mode_name(c->mode), format4(c->stage1_average()), format4(c->stage2->accuracy), format4(c->diff())}) + "\n";
    }

    std::ostringstream md;
    md << "# Ablation report\n\n"
       << "Positive class: diabetic (label 1). Precision and recall refer to the diabetic class; "
       << "\"n/a\" marks a ratio with a zero denominator.\n\n";
    md << "## Stage-1 accuracy by backbone\n\n| Condition |";
    for (const auto& b : result.backbones) md << ' ' << b << " |";
    md << " Average |\n|---|";
    for (std::size_t i = 0; i <= result.backbones.size(); ++i) md << "---|";
    md << '\n';
    for (const auto* c : conds) {
        md << "| " << condition_label(c->mode) << " |";
        for (const auto& s : c->stage1) md << ' ' << format4(s.accuracy) << " |";
        md << ' ' << format4(c->stage1_average()) << " |\n";
    }
    md << "\n## Ensemble accuracy\n\n| Condition | Training1 | Training2 | Diff. |\n|---|---|---|---|\n";
    for (const auto* c : conds)
        md << "| " << condition_label(c->mode) << " | " << format4(c->stage1_average()) << " | " << format4(c->stage2->accuracy) << " | "
           << format4(c->diff()) << " |\n";

    md << "\n## Ensemble precision and recall\n\n| Condition | Precision | Recall |\n|---|---|---|\n";
    for (const auto* c : conds)
        md << "| " << condition_label(c->mode) << " | " << optional_pct(c->stage2->precision) << " | " << optional_pct(c->stage2->recall)
           << " |\n";

    const auto* none = result.find(MetadataMode::none);
    if (none) {
        md << "\n## Metadata gains over the image-only condition\n\n| Condition | Training1 gain | Training2 gain |\n|---|---|---|\n";
        for (const auto* c : conds) {
            if (c == none) continue;
            md << "| " << condition_label(c->mode) << " | " << format4(c->stage1_average() - none->stage1_average()) << " | "
               << format4(c->stage2->accuracy - none->stage2->accuracy) << " |\n";
        }
    }
    out.markdown = md.str();
    return out;
}

std::string results_csv(const AblationResult& result) {
    check_complete(result);
    std::string out = "condition,model,stage,accuracy,precision,recall,tp,fp,tn,fn\n";
    auto line = [&](MetadataMode mode, const std::string& model, const char* stage, const ModelScore& s) {
        csv::Row row{mode_name(mode), model, stage, full(s.accuracy), optional_cell(s.precision), optional_cell(s.recall)};
        if (s.metrics) {
            for (std::size_t v : {s.metrics->tp, s.metrics->fp, s.metrics->tn, s.metrics->fn}) row.push_back(std::to_string(v));
        } else {
            row.insert(row.end(), 4, "");
        }
        out += csv::join(row) + "\n";
    };
    for (const auto& c : result.conditions) {
        for (std::size_t i = 0; i < c.stage1.size(); ++i) line(c.mode, result.backbones[i], "stage1", c.stage1[i]);
        line(c.mode, "ensemble", "stage2", *c.stage2);
    }
    return out;
}

AblationResult parse_results_csv(const fs::path& path) {
    if (!fs::exists(path)) throw Error("results file not found: " + path.string());
    const auto table = csv::read_file(path);
    const csv::Row expected{"condition", "model", "stage", "accuracy", "precision", "recall", "tp", "fp", "tn", "fn"};
    if (table.header != expected) throw Error(path.string() + ": unexpected results header");

    auto number = [&](const std::string& text, std::size_t line, const char* field) -> std::optional<double> {
        if (csv::trim(text).empty()) return std::nullopt;
        try {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
            return v;
        } catch (const std::exception&) {
            throw Error(path.string() + ": row " + std::to_string(line) + ", field " + field + ": not a number");
        }
    };

    AblationResult result;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_numbers[r];
        if (row.size() != expected.size()) throw Error(path.string() + ": row " + std::to_string(line) + " has wrong field count");
        const MetadataMode mode = parse_metadata_mode(row[0]);
        ConditionResult* cond = nullptr;
        for (auto& c : result.conditions)
            if (c.mode == mode) cond = &c;
        if (!cond) {
            result.conditions.push_back({mode, {}, std::nullopt});
            cond = &result.conditions.back();
        }
        ModelScore score;
        const auto acc = number(row[3], line, "accuracy");
        if (!acc) throw Error(path.string() + ": row " + std::to_string(line) + ", field accuracy: missing");
        score.accuracy = *acc;
        score.precision = number(row[4], line, "precision");
        score.recall = number(row[5], line, "recall");
        if (!csv::trim(row[6]).empty()) {
            std::array<std::size_t, 4> counts{};
            for (int k = 0; k < 4; ++k) counts[k] = static_cast<std::size_t>(*number(row[6 + k], line, "counts"));
            score.metrics = metrics_from_counts(counts[0], counts[1], counts[2], counts[3]);
        }
        if (row[2] == "stage1") {
            if (&result.conditions.front() == cond) result.backbones.push_back(row[1]);
            cond->stage1.push_back(score);
        } else if (row[2] == "stage2") {
            cond->stage2 = score;
        } else {
            throw Error(path.string() + ": row " + std::to_string(line) + ", field stage: expected stage1 or stage2");
        }
    }
    check_complete(result);
    return result;
}

void emit_curves(const TraceMap& traces, const AblationResult& result, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error("cannot create curve directory " + out_dir.string() + ": " + ec.message());
    auto open = [&](const fs::path& p) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + p.string());
        return out;
    };
    for (const auto& [name, trace] : traces) {
        auto out = open(out_dir / (name + ".csv"));
        out << "epoch,loss,accuracy,lr\n";
        if (trace.empty()) spdlog::warn("trace {} is empty; wrote header only", name);
        for (const auto& r : trace) out << r.epoch << ',' << full(r.loss) << ',' << full(r.accuracy) << ',' << full(r.lr) << '\n';
    }
    check_complete(result);
    auto out = open(out_dir / "final_accuracy.csv");
    out << "condition,training1,training2\n";
    for (const auto* c : ordered_conditions(result))
        out << mode_name(c->mode) << ',' << full(c->stage1_average()) << ',' << full(c->stage2->accuracy) << '\n';
}

AblationRun run_conditions(const DatasetSplits& splits, const ExperimentConfig& cfg, const std::vector<MetadataMode>& modes,
                           SplitAudit* audit) {
    check_disjoint(splits);
    const auto bounds = compute_metadata_bounds(splits.train1, splits.train2);
    const PreparedSplit train1 = prepare_split(splits.train1, cfg.image_side, cfg.norm, bounds);
    const PreparedSplit train2 = prepare_split(splits.train2, cfg.image_side, cfg.norm, bounds);
    const PreparedSplit test = prepare_split(splits.test, cfg.image_side, cfg.norm, bounds);

    AblationRun run;
    run.result.backbones = cfg.stacking.backbones;
    const auto backbones = train_backbones(train1, cfg.stacking, audit);
    for (std::size_t i = 0; i < backbones.size(); ++i)
        run.traces["stage1_" + std::to_string(i) + "_" + backbones[i].backbone->name()] = backbones[i].backbone_trace;

    for (MetadataMode mode : modes) {
        spdlog::info("condition {}: fitting fusion heads and stacker", mode_name(mode));
        EnsembleBundle bundle = fit_ensemble(backbones, train1, train2, mode, cfg.stacking, cfg.norm, bounds, audit);

        ConditionResult cond;
        cond.mode = mode;
        for (const auto& base : bundle.bases) {
            std::vector<int> preds;
            for (const auto& s : base_scores(base, test, mode)) preds.push_back(decide(s));
            cond.stage1.push_back(ModelScore::from(compute_metrics(preds, test.labels)));
        }
        std::vector<int> preds;
        for (const auto& p : predict_split(bundle, test)) preds.push_back(p.predicted);
        cond.stage2 = ModelScore::from(compute_metrics(preds, test.labels));
        if (audit) audit->evaluation.insert(test.ids.begin(), test.ids.end());

        for (std::size_t i = 0; i < bundle.bases.size(); ++i)
            if (mode != MetadataMode::none)
                run.traces[mode_name(mode) + "_head_" + std::to_string(i) + "_" + bundle.ordering[i]] = bundle.bases[i].head_trace;
        run.traces[mode_name(mode) + "_stacker"] = bundle.stacker_trace;

        FairnessRecord fair;
        fair.mode = mode;
        for (const auto& b : bundle.bases) fair.model_seeds.push_back(b.backbone->seed());
        fair.train1_ids = train1.ids;
        fair.train2_ids = train2.ids;
        fair.test_ids = test.ids;
        run.fairness.push_back(std::move(fair));

        spdlog::info("condition {}: stage-1 average {:.4f}, ensemble {:.4f}", mode_name(mode), cond.stage1_average(), cond.stage2->accuracy);
        run.result.conditions.push_back(std::move(cond));
        run.bundles.push_back(std::move(bundle));
    }
    if (audit) verify_split_hygiene(*audit, splits);
    return run;
}

AblationRun run_ablation(const DatasetSplits& splits, const ExperimentConfig& cfg, SplitAudit* audit) {
    auto run = run_conditions(splits, cfg, {kAblationConditions.begin(), kAblationConditions.end()}, audit);
    const auto& ref = run.fairness.front();
    for (const auto& f : run.fairness)
        if (f.model_seeds != ref.model_seeds || f.train1_ids != ref.train1_ids || f.train2_ids != ref.train2_ids || f.test_ids != ref.test_ids)
            throw Error("ablation fairness violated for condition " + mode_name(f.mode));
    return run;
}

}  // namespace retfuse
