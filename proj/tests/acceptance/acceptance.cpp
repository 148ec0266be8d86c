// Acceptance suite: one PASS/FAIL line per criterion, detail lines indented.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "../gradcheck.hpp"
#include "../oracles.hpp"
#include "../test_support.hpp"
#include "retfuse/cli.hpp"
#include "retfuse/csv.hpp"
#include "retfuse/error.hpp"
#include "retfuse/evaluation.hpp"
#include "retfuse/preprocess.hpp"
#include "retfuse/stacking.hpp"
#include "retfuse/training.hpp"

using namespace retfuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects the checks of one criterion.
class Criterion {
public:
    explicit Criterion(std::string title) : title_(std::move(title)) {}

    bool check(bool ok, const std::string& what) {
        details_.push_back(std::string(ok ? "    ok   " : "    FAIL ") + what);
        pass_ = pass_ && ok;
        return ok;
    }
    void note(const std::string& what) { details_.push_back("    note " + what); }
    void fail(const std::string& what) { check(false, what); }
    bool passed() const { return pass_; }

    void print(int index) const {
        std::cout << "criterion " << index << ": " << (pass_ ? "PASS" : "FAIL") << " " << title_ << "\n";
        for (const auto& d : details_) std::cout << d << "\n";
        std::cout.flush();
    }

private:
    std::string title_;
    std::vector<std::string> details_;
    bool pass_ = true;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string read_bytes(const fs::path& p) { return testing::read_file(p); }

// ---------------------------------------------------------------------------

Criterion table_arithmetic() {
    Criterion c("table arithmetic on the published numbers");
    const auto t0 = Clock::now();
    const fs::path fixture = fs::path(RETFUSE_SOURCE_DIR) / "data/published_tables/results.csv";
    try {
        const AblationResult r = parse_results_csv(fixture);
        const RenderedTables t = render_tables(r);
        const auto t1 = csv::parse(t.table1_csv);
        const auto t2 = csv::parse(t.table2_csv);

        const std::array<const char*, 4> modes = {"none", "gender", "both", "age"};
        const std::array<const char*, 4> averages = {"0.6780", "0.6853", "0.7007", "0.7113"};
        const std::array<const char*, 4> diffs = {"0.0420", "0.0380", "0.0460", "0.0420"};
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& row1 = t1.rows.at(k);
            const auto& row2 = t2.rows.at(k);
            c.check(row1.front() == modes[k] && row2.front() == modes[k], std::string("row order ") + modes[k]);
            c.check(row1.back() == averages[k], std::string("average ") + modes[k] + ": rendered " + row1.back() + ", expected " + averages[k]);
            c.check(row2.at(1) == averages[k], std::string("table II training1 ") + modes[k] + ": " + row2.at(1));
            c.check(row2.at(3) == diffs[k], std::string("diff ") + modes[k] + ": rendered " + row2.at(3) + ", expected " + diffs[k]);
        }

        const auto& none = r.at(MetadataMode::none);
        const auto& both = r.at(MetadataMode::both);
        const std::string stage2_gain = format4(stage_diff(none.stage2->accuracy, both.stage2->accuracy));
        c.check(stage2_gain == "0.0267", "stage-2 metadata gain: rendered " + stage2_gain + ", expected 0.0267");
        const std::string stage1_gain = format4(stage_diff(none.stage1_average(), both.stage1_average()));
        c.check(stage1_gain == "0.0227", "stage-1 metadata gain: rendered " + stage1_gain + ", expected 0.0227");
    } catch (const std::exception& e) {
        c.fail(std::string("exception: ") + e.what());
    }
    const double s = seconds_since(t0);
    c.check(s < 1.0, "runtime " + fmt("%.3f", s) + " s < 1 s");
    return c;
}

// ---------------------------------------------------------------------------

Criterion gradients() {
    Criterion c("analytic gradients match central differences");
    const auto t0 = Clock::now();
    for (int dim : {4, 10}) {
        std::vector<std::vector<double>> xs;
        std::vector<int> labels;
        gradcheck::random_batch(dim, 6, 100 + dim, xs, labels);
        const auto layer = LinearSoftmax::initialize(dim, 7 + dim);
        const auto out = gradcheck::linear_softmax(layer, xs, labels, 1e-5);
        const std::string name = dim == 4 ? "fusion head (4 inputs)" : "stacker (10 inputs)";
        c.check(out.max_error < 1e-4, name + " max relative error " + fmt("%.3e", out.max_error) + " at " + out.worst);
    }
    for (const char* name : {"tiny_a", "tiny_b", "tiny_c", "tiny_d", "tiny_e"}) {
        const auto out = gradcheck::composite<float>(name, 11, 2, 12);
        const std::string label = name;
        c.check(out.global_error < 1e-3, label + " composite (float) relative error " + fmt("%.3e", out.global_error));
        c.note(label + " worst single tensor " + fmt("%.3e", out.max_error) + " at " + out.worst);
    }
    c.note("runtime " + fmt("%.1f", seconds_since(t0)) + " s");
    return c;
}

// ---------------------------------------------------------------------------

struct SeedRun {
    std::uint64_t seed = 0;
    fs::path dir;
    AblationResult result;
    double seconds = 0.0;
};

Criterion synthetic_ablation(const fs::path& work, std::vector<SeedRun>& runs) {
    Criterion c("synthetic four-condition ablation over 5 seeds");
    const fs::path config = fs::path(RETFUSE_SOURCE_DIR) / "configs/synthetic_ablation.json";
    const RunConfig base = load_run_config(config);
    const SyntheticConfig& syn = *base.synthetic;
    const double oracle_acc = oracle::age_bayes_accuracy(syn.age_class1_range.lo, syn.age_class1_range.hi, syn.age_class0_range.lo,
                                                          syn.age_class0_range.hi, syn.class_balance);
    const double majority = std::max(syn.class_balance, 1.0 - syn.class_balance);
    c.note("age-only Bayes oracle " + fmt("%.4f", oracle_acc) + ", majority rate " + fmt("%.4f", majority));

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SeedRun run;
        run.seed = seed;
        run.dir = work / ("seed" + std::to_string(seed));
        const auto t0 = Clock::now();
        try {
            std::ostringstream sink;
            auto* old = std::cout.rdbuf(sink.rdbuf());
            const int rc = cmd_ablate({config, seed, run.dir, std::nullopt});
            std::cout.rdbuf(old);
            run.seconds = seconds_since(t0);
            if (rc != 0) {
                c.fail("seed " + std::to_string(seed) + ": ablate exited with " + std::to_string(rc));
                continue;
            }
            run.result = parse_results_csv(run.dir / "results.csv");
        } catch (const std::exception& e) {
            c.fail("seed " + std::to_string(seed) + ": " + e.what());
            continue;
        }
        c.check(run.seconds < 600.0, "seed " + std::to_string(seed) + " wall time " + fmt("%.1f", run.seconds) + " s < 600 s");
        runs.push_back(std::move(run));
    }
    if (runs.size() != 5) {
        c.fail("only " + std::to_string(runs.size()) + " of 5 seeds completed");
        return c;
    }

    for (MetadataMode mode : kAblationConditions) {
        double s1 = 0, s2 = 0;
        for (const auto& r : runs) {
            s1 += r.result.at(mode).stage1_average();
            s2 += r.result.at(mode).stage2->accuracy;
        }
        s1 /= 5;
        s2 /= 5;
        c.check(s2 >= s1, "(a) " + mode_name(mode) + ": mean stage-2 " + fmt("%.4f", s2) + " >= mean stage-1 " + fmt("%.4f", s1));
    }

    double gain = 0;
    int ordered = 0;
    for (const auto& r : runs) {
        const double none = r.result.at(MetadataMode::none).stage2->accuracy;
        const double age = r.result.at(MetadataMode::age).stage2->accuracy;
        gain += age - none;
        if (none <= age) ++ordered;
        c.note("seed " + std::to_string(r.seed) + ": stage-2 none " + fmt("%.4f", none) + ", age " + fmt("%.4f", age));
    }
    gain /= 5;
    if (oracle_acc - majority >= 0.15) {
        c.check(gain >= 0.03, "(b) mean stage-2 age - none = " + fmt("%+.4f", gain) + " >= +0.03");
    } else {
        c.note("(b) not applicable: oracle margin " + fmt("%.4f", oracle_acc - majority) + " < 0.15");
    }
    c.check(ordered >= 4, "(c) none <= age at stage 2 in " + std::to_string(ordered) + " of 5 seeds");
    return c;
}

// ---------------------------------------------------------------------------

/// Replays a fixed per-epoch loss sequence through the training loop.
class ScriptedObjective final : public Objective<double> {
public:
    explicit ScriptedObjective(std::vector<double> losses) : losses_(std::move(losses)), p_(Tensor<double>(1, 1, 1, 1)) {}
    std::size_t size() const override { return 2; }
    int label(std::size_t i) const override { return static_cast<int>(i); }
    std::vector<nn::ParamRef<double>> parameters() override { return {{"p", &p_}}; }
    BatchResult run_batch(std::span<const std::size_t> batch, std::mt19937_64&) override {
        const double l = losses_[std::min(epoch_, losses_.size() - 1)];
        if (++seen_ == 2) {
            seen_ = 0;
            ++epoch_;
        }
        return {l * static_cast<double>(batch.size()), 0};
    }

private:
    std::vector<double> losses_;
    nn::Parameter<double> p_;
    std::size_t epoch_ = 0;
    int seen_ = 0;
};

bool lr_on_ladder(double lr, const TrainConfig& cfg) {
    if (lr == cfg.min_lr) return true;
    for (int k = 0; k < 64; ++k) {
        const double rung = cfg.initial_lr * std::pow(cfg.plateau_factor, k);
        if (std::abs(lr - rung) <= 1e-12 * rung) return true;
    }
    return false;
}

bool check_lr_trace(Criterion& c, const EpochTrace& trace, const TrainConfig& cfg, const std::string& label) {
    bool ladder = !trace.empty(), monotone = true;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        ladder = ladder && lr_on_ladder(trace[i].lr, cfg);
        if (i > 0) monotone = monotone && trace[i].lr <= trace[i - 1].lr;
    }
    c.check(ladder, label + ": every lr equals 0.01 * 0.1^k or min_lr (" + std::to_string(trace.size()) + " epochs, last " +
                        fmt("%.3g", trace.empty() ? 0.0 : trace.back().lr) + ")");
    c.check(monotone, label + ": lr non-increasing");
    return ladder && monotone;
}

Criterion loss_and_schedule() {
    Criterion c("loss, scheduler and early stopping");
    const std::array<double, 2> zero = {0.0, 0.0};
    const double ce = cross_entropy(zero, 0);
    c.check(std::abs(ce - std::log(2.0)) <= 1e-9, "cross_entropy((0,0)) = " + fmt("%.15f", ce));

    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.weight_decay = 0.0;
    cfg.max_epochs = 60;
    cfg.early_stop_patience = 50;
    std::vector<double> flat(60, 1.0);
    ScriptedObjective stalled(flat);
    const EpochTrace flat_trace = train_loop(stalled, cfg);
    check_lr_trace(c, flat_trace, cfg, "constant loss");
    c.check(flat_trace.back().lr == cfg.min_lr, "constant loss reaches min_lr");

    // A real head fit on noisy features.
    FeatureSet data;
    data.dim = 4;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int i = 0; i < 64; ++i) {
        const int y = i % 2;
        for (int j = 0; j < 4; ++j) data.values.push_back(d(rng) + 0.3 * y);
        data.labels.push_back(y);
    }
    TrainConfig head = cfg;
    head.batch_size = 16;
    head.weight_decay = 1e-4;
    head.max_epochs = 100;
    head.early_stop_patience = 10;
    EpochTrace head_trace;
    train_linear_softmax(data, head, &head_trace);
    check_lr_trace(c, head_trace, head, "linear head fit");

    for (int patience : {1, 3, 4, 10}) {
        TrainConfig es = cfg;
        es.early_stop_patience = patience;
        es.plateau_patience = 100;
        std::vector<double> losses = {1.0, 0.9, 0.8};
        losses.resize(40, 0.85);
        ScriptedObjective obj(losses);
        const EpochTrace trace = train_loop(obj, es);
        const std::size_t expected = 3 + static_cast<std::size_t>(patience);
        c.check(trace.size() == expected, "early stop with patience " + std::to_string(patience) + " after " + std::to_string(trace.size()) +
                                              " epochs (expected " + std::to_string(expected) + ")");
    }
    EarlyStopping stopper(5, 1e-3);
    int fired_at = -1;
    for (int e = 0; e < 20 && fired_at < 0; ++e)
        if (stopper.step(e == 0 ? 1.0 : 2.0)) fired_at = e;
    c.check(fired_at == 5, "EarlyStopping(5) fires on the 5th non-improving epoch (epoch " + std::to_string(fired_at) + ")");
    return c;
}

// ---------------------------------------------------------------------------

Criterion preprocessing() {
    Criterion c("preprocessing invariants");
    for (const NormalizationSpec spec : {NormalizationSpec{0.0, 255.0}, NormalizationSpec{-3.5, 17.25}, NormalizationSpec{12.0, 13.0}}) {
        const std::vector<double> ends = {spec.min_value, spec.max_value};
        const auto n = minmax_normalize(ends, spec);
        c.check(n[0] == 0.0 && n[1] == 1.0, "minmax(" + fmt("%g", spec.min_value) + ", " + fmt("%g", spec.max_value) + ") -> (0, 1)");
    }

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    RgbTensor left{32, 24, {}}, right{32, 24, {}};
    for (int i = 0; i < 3 * 32 * 24; ++i) {
        left.data.push_back(u(rng));
        right.data.push_back(u(rng));
    }
    const EyePairTensor pair = stack_eye_pair(left, right);
    const RgbTensor l2 = left_eye(pair), r2 = right_eye(pair);
    c.check(pair.data.size() == 6u * 32 * 24 && l2.data == left.data && r2.data == right.data, "stack then slice is bit-exact");

    EyePairTensor square{16, 16, {}};
    for (int i = 0; i < 6 * 16 * 16; ++i) square.data.push_back(u(rng));
    std::set<std::vector<float>> distinct;
    for (int op = 0; op < kAugmentOps; ++op) {
        const EyePairTensor t = augment(square, op);
        distinct.insert(t.data);
        c.check(augment(t, inverse_augment_op(op)) == square, "augmentation op " + std::to_string(op) + " inverts");
    }
    c.check(distinct.size() == 8, "the 8 ops give 8 distinct images");

    const double a = 0.37, g = 1.0;
    c.check(!expand_metadata(MetadataMode::none, a, g).has_value(), "none -> no metadata");
    const auto ga = expand_metadata(MetadataMode::gender, a, g);
    c.check(ga && ga->components == std::array<double, 2>{g, g}, "gender -> (g, g)");
    const auto ag = expand_metadata(MetadataMode::age, a, g);
    c.check(ag && ag->components == std::array<double, 2>{a, a}, "age -> (a, a)");
    const auto bo = expand_metadata(MetadataMode::both, a, g);
    c.check(bo && bo->components == std::array<double, 2>{a, g}, "both -> (a, g)");
    return c;
}

// ---------------------------------------------------------------------------

Criterion determinism(const fs::path& work, const std::vector<SeedRun>& runs) {
    Criterion c("byte-identical results across repeated runs");
    const fs::path config = fs::path(RETFUSE_SOURCE_DIR) / "configs/synthetic_ablation.json";
    const RunConfig cfg = load_run_config(config);
    c.check(cfg.threads == 1, "config runs single-threaded");
    auto ablate = [&](const fs::path& out) {
        std::ostringstream sink;
        auto* old = std::cout.rdbuf(sink.rdbuf());
        const int rc = cmd_ablate({config, 1, out, std::nullopt});
        std::cout.rdbuf(old);
        return rc;
    };
    fs::path first = runs.empty() ? work / "seed1" : runs.front().dir;
    if (runs.empty() || runs.front().seed != 1) {
        first = work / "seed1-first";
        if (!c.check(ablate(first) == 0, "first ablate run")) return c;
    }
    const fs::path again = work / "seed1-again";
    const int rc = ablate(again);
    if (!c.check(rc == 0, "second ablate run exit code " + std::to_string(rc))) return c;
    const std::string a = read_bytes(first / "results.csv");
    const std::string b = read_bytes(again / "results.csv");
    c.check(!a.empty() && a == b, "results.csv identical (" + std::to_string(a.size()) + " bytes)");
    return c;
}

// ---------------------------------------------------------------------------

std::set<std::string> ids_of(const std::vector<PatientRecord>& rs) {
    std::set<std::string> out;
    for (const auto& r : rs) out.insert(r.patient_id);
    return out;
}

bool disjoint(const std::set<std::string>& a, const std::set<std::string>& b) {
    for (const auto& x : a)
        if (b.count(x)) return false;
    return true;
}

bool subset(const std::set<std::string>& a, const std::set<std::string>& b) {
    for (const auto& x : a)
        if (!b.count(x)) return false;
    return true;
}

Criterion split_hygiene(const fs::path& work) {
    Criterion c("split hygiene in an instrumented run");
    try {
        SyntheticConfig syn;
        syn.n_patients = 120;
        syn.seed = 8;
        const auto records = generate_synthetic(syn, work / "hygiene-data");
        const DatasetSplits splits = make_splits(records, SplitRatios{}, 3);
        const auto t1 = ids_of(splits.train1), t2 = ids_of(splits.train2), te = ids_of(splits.test);
        c.check(t1.size() + t2.size() + te.size() == records.size(), "splits cover every patient once");
        c.check(disjoint(t1, t2) && disjoint(t1, te) && disjoint(t2, te), "train1, train2 and test share no patient id");

        ExperimentConfig cfg;
        cfg.image_side = 32;
        cfg.stacking.backbones = {"tiny_a", "tiny_b"};
        cfg.stacking.run_seed = 5;
        cfg.stacking.backbone_training.max_epochs = 2;
        cfg.stacking.head_training.max_epochs = 5;
        SplitAudit audit;
        run_ablation(splits, cfg, &audit);

        c.check(!audit.stage1_batches.empty() && subset(audit.stage1_batches, t1), "stage-1 batches drawn only from train1");
        c.check(!audit.fusion_head_training.empty() && subset(audit.fusion_head_training, t1), "fusion heads trained only on train1");
        c.check(audit.stage2_features == t2, "stage-2 features computed on exactly train2 (" + std::to_string(audit.stage2_features.size()) + " ids)");
        c.check(audit.stage2_training == t2, "stacker trained on exactly train2");
        c.check(audit.evaluation == te, "evaluation touched exactly the test split");

        SplitAudit tampered = audit;
        tampered.stage2_features.insert(*t1.begin());
        bool caught = false;
        try {
            verify_split_hygiene(tampered, splits);
        } catch (const Error&) {
            caught = true;
        }
        c.check(caught, "a train1 id among stage-2 features is rejected");

        DatasetSplits leaky = splits;
        leaky.test.push_back(splits.train2.front());
        caught = false;
        try {
            check_disjoint(leaky);
        } catch (const Error&) {
            caught = true;
        }
        c.check(caught, "an overlapping split is rejected");
    } catch (const std::exception& e) {
        c.fail(std::string("exception: ") + e.what());
    }
    return c;
}

}  // namespace

/// Runs every criterion, or only those whose numbers are given as arguments.
int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    testing::TempDir work("acceptance");
    std::vector<SeedRun> runs;
    std::vector<std::function<Criterion()>> criteria = {
        table_arithmetic,
        gradients,
        [&] { return synthetic_ablation(work.path(), runs); },
        loss_and_schedule,
        preprocessing,
        [&] { return determinism(work.path(), runs); },
        [&] { return split_hygiene(work.path()); },
    };
    int failed = 0;
    std::set<std::size_t> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(i + 1)) continue;
        Criterion c("");
        try {
            c = criteria[i]();
        } catch (const std::exception& e) {
            c = Criterion("uncaught exception");
            c.fail(e.what());
        }
        c.print(static_cast<int>(i + 1));
        if (!c.passed()) ++failed;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
    return failed == 0 ? 0 : 1;
}
