#include <doctest.h>

#include "retfuse/error.hpp"
#include "retfuse/evaluation.hpp"
#include "test_support.hpp"

using namespace retfuse;

namespace {

AblationResult sample_result() {
    AblationResult r;
    r.backbones = {"tiny_a", "tiny_b"};
    const std::array<std::array<double, 3>, 4> acc = {{{0.6, 0.7, 0.8}, {0.61, 0.69, 0.81}, {0.7, 0.72, 0.85}, {0.72, 0.74, 0.9}}};
    for (std::size_t k = 0; k < 4; ++k) {
        ConditionResult c;
        c.mode = kAblationConditions[k];
        c.stage1 = {ModelScore{acc[k][0], 0.5, 0.25, std::nullopt}, ModelScore{acc[k][1], std::nullopt, std::nullopt, std::nullopt}};
        c.stage2 = ModelScore::from(metrics_from_counts(40, 10, 40, 10));
        c.stage2->accuracy = acc[k][2];
        r.conditions.push_back(c);
    }
    return r;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == '\n') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("row_average and stage_diff") {
    const std::vector<double> row{0.6967, 0.65, 0.6833, 0.6867, 0.6733};
    CHECK(format4(row_average(row)) == "0.6780");
    CHECK(row_average(std::vector<double>{0.5}) == 0.5);
    CHECK_THROWS_AS(row_average(std::vector<double>{}), Error);
    CHECK(format4(stage_diff(0.678, 0.72)) == "0.0420");
    CHECK(stage_diff(0.7, 0.7) == 0.0);
}

TEST_CASE("format4 rounds to four decimals") {
    CHECK(format4(0.72) == "0.7200");
    CHECK(format4(0.71134) == "0.7113");
    CHECK(format4(1.0) == "1.0000");
}

TEST_CASE("condition labels") {
    CHECK(condition_label(MetadataMode::none) == "w/o Age & Gender");
    CHECK(condition_label(MetadataMode::gender) == "w/i Gender");
    CHECK(condition_label(MetadataMode::both) == "w/i Age & Gender");
    CHECK(condition_label(MetadataMode::age) == "w/i Age");
}

TEST_CASE("rendered tables have the documented headers and rows") {
    const auto t = render_tables(sample_result());
    const auto t1 = lines(t.table1_csv), t2 = lines(t.table2_csv);
    REQUIRE(t1.size() == 5);
    CHECK(t1[0] == "condition,tiny_a,tiny_b,average");
    CHECK(t1[1] == "none,0.6000,0.7000,0.6500");
    CHECK(t1[4] == "age,0.7200,0.7400,0.7300");
    REQUIRE(t2.size() == 5);
    CHECK(t2[0] == "condition,training1,training2,diff");
    CHECK(t2[1] == "none,0.6500,0.8000,0.1500");
    CHECK(t2[3] == "both,0.7100,0.8500,0.1400");
    CHECK(t.markdown.find("diabetic") != std::string::npos);
    CHECK(t.markdown.find("w/i Age & Gender") != std::string::npos);
}

TEST_CASE("rendering is a pure function of the result") {
    const auto a = render_tables(sample_result()), b = render_tables(sample_result());
    CHECK(a.table1_csv == b.table1_csv);
    CHECK(a.table2_csv == b.table2_csv);
    CHECK(a.markdown == b.markdown);
}

TEST_CASE("undefined precision renders as n/a") {
    auto r = sample_result();
    r.conditions[0].stage2 = ModelScore::from(metrics_from_counts(0, 0, 50, 50));
    const auto md = render_tables(r).markdown;
    CHECK(md.find("| w/o Age & Gender | n/a | 0.0000 |") != std::string::npos);
}

TEST_CASE("incomplete results are rejected") {
    auto r = sample_result();
    r.conditions[1].stage1.pop_back();
    CHECK_THROWS_AS(render_tables(r), Error);
    r = sample_result();
    r.conditions[2].stage2.reset();
    CHECK_THROWS_AS(render_tables(r), Error);
    CHECK_THROWS_AS(results_csv(r), Error);
}

TEST_CASE("results csv round-trips at full precision") {
    testing::TempDir dir("results");
    auto r = sample_result();
    r.conditions[0].stage1[0].accuracy = 0.1 + 0.2;  // not representable in 4 decimals
    testing::write_file(dir / "results.csv", results_csv(r));
    const auto back = parse_results_csv(dir / "results.csv");
    CHECK(back.backbones == r.backbones);
    REQUIRE(back.conditions.size() == 4);
    CHECK(back.conditions[0].stage1[0].accuracy == 0.1 + 0.2);
    CHECK(*back.conditions[0].stage1[0].precision == 0.5);
    CHECK_FALSE(back.conditions[0].stage1[1].precision.has_value());
    CHECK(back.conditions[3].stage2->metrics->tp == 40);
    CHECK(results_csv(back) == results_csv(r));
}

TEST_CASE("malformed results files are reported") {
    testing::TempDir dir("results-bad");
    CHECK_THROWS_AS(parse_results_csv(dir / "results.csv"), Error);
    testing::write_file(dir / "a.csv", "condition,model,accuracy\n");
    CHECK_THROWS_AS(parse_results_csv(dir / "a.csv"), Error);
    testing::write_file(dir / "b.csv", "condition,model,stage,accuracy,precision,recall,tp,fp,tn,fn\nnone,x,stage1,abc,,,,,,\n");
    CHECK_THROWS_AS(parse_results_csv(dir / "b.csv"), Error);
    testing::write_file(dir / "c.csv", "condition,model,stage,accuracy,precision,recall,tp,fp,tn,fn\nnone,x,stage3,0.5,,,,,,\n");
    CHECK_THROWS_AS(parse_results_csv(dir / "c.csv"), Error);
}

TEST_CASE("emit_curves writes series files") {
    testing::TempDir dir("curves");
    TraceMap traces;
    EpochTrace t;
    for (int e = 1; e <= 20; ++e) t.push_back({e, 1.0 / e, 0.5 + e * 0.01, 0.01, 0.1});
    traces["stage1_0_tiny_a"] = t;
    traces["empty"] = {};
    emit_curves(traces, sample_result(), dir / "curves");
    const auto series = lines(testing::read_file(dir / "curves/stage1_0_tiny_a.csv"));
    CHECK(series.size() == 21);
    CHECK(series[0] == "epoch,loss,accuracy,lr");
    CHECK(lines(testing::read_file(dir / "curves/empty.csv")).size() == 1);
    const auto fin = lines(testing::read_file(dir / "curves/final_accuracy.csv"));
    CHECK(fin.size() == 5);
    CHECK(fin[0] == "condition,training1,training2");

    const auto before = testing::read_file(dir / "curves/stage1_0_tiny_a.csv");
    emit_curves(traces, sample_result(), dir / "curves");
    CHECK(testing::read_file(dir / "curves/stage1_0_tiny_a.csv") == before);
}

TEST_CASE("published-table fixture: exact cells and documented discrepancies") {
    const auto r = parse_results_csv(std::filesystem::path(RETFUSE_SOURCE_DIR) / "data/published_tables/results.csv");
    CHECK(r.backbones == std::vector<std::string>{"resnet50", "resnet101", "densenet121", "densenet161", "densenet169"});
    CHECK(format4(r.at(MetadataMode::none).stage1_average()) == "0.6780");
    CHECK(format4(r.at(MetadataMode::age).stage1_average()) == "0.7113");
    CHECK(format4(r.at(MetadataMode::none).diff()) == "0.0420");
    CHECK(format4(r.at(MetadataMode::age).diff()) == "0.0420");
    CHECK(format4(r.at(MetadataMode::both).stage2->accuracy - r.at(MetadataMode::none).stage2->accuracy) == "0.0267");
    // The two rows holding the printed 0.7076 average to 0.68552 and 0.70084.
    CHECK(format4(r.at(MetadataMode::gender).stage1_average()) == "0.6855");
    CHECK(format4(r.at(MetadataMode::both).stage1_average()) == "0.7008");
    // Printed Training1 column fed to stage_diff reproduces the printed Diff column.
    CHECK(format4(stage_diff(0.6853, 0.7233)) == "0.0380");
    CHECK(format4(stage_diff(0.7007, 0.7467)) == "0.0460");
    CHECK(format4(stage_diff(0.678, 0.7007)) == "0.0227");
}
