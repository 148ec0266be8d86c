#include "retfuse/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "retfuse/csv.hpp"
#include "retfuse/error.hpp"
#include "retfuse/image_io.hpp"

namespace fs = std::filesystem;

namespace retfuse {

double encode_gender(Gender g) { return g == Gender::male ? 1.0 : 0.0; }

Gender parse_gender(const std::string& text) {
    const auto t = csv::to_lower(csv::trim(text));
    if (t == "female" || t == "f") return Gender::female;
    if (t == "male" || t == "m") return Gender::male;
    throw Error("unknown gender '" + text + "'");
}

std::string gender_name(Gender g) { return g == Gender::male ? "male" : "female"; }

namespace {

[[noreturn]] void row_error(const fs::path& file, std::size_t row, const std::string& field, const std::string& msg) {
    throw Error(file.string() + ": row " + std::to_string(row) + ", field " + field + ": " + msg);
}

std::optional<double> parse_double(const std::string& text) {
    const auto t = csv::trim(text);
    if (t.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<int> parse_binary(const std::string& text) {
    const auto t = csv::trim(text);
    if (t == "0") return 0;
    if (t == "1") return 1;
    return std::nullopt;
}

std::string format_age(double age) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", age);
    return buf;
}

std::string relative_if_beneath(const fs::path& p, const fs::path& base) {
    if (base.empty()) return p.generic_string();
    auto rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

}  // namespace

std::vector<PatientRecord> load_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw Error("manifest not found: " + path.string());
    const auto table = csv::read_file(path);
    const auto& header = table.header;
    if (header.size() != 6 && header.size() != 13)
        throw Error(path.string() + ": header must have 6 columns (+7 optional flag columns), found " +
                    std::to_string(header.size()));
    for (std::size_t i = 0; i < 6; ++i) {
        if (csv::to_lower(csv::trim(header[i])) != kManifestColumns[i])
            throw Error(path.string() + ": header column " + std::to_string(i + 1) + " must be '" +
                        kManifestColumns[i] + "', found '" + header[i] + "'");
    }
    const bool has_flags = header.size() == 13;
    for (std::size_t i = 6; i < header.size(); ++i) {
        const auto expected = "flag_" + std::to_string(i - 5);
        if (csv::to_lower(csv::trim(header[i])) != expected)
            throw Error(path.string() + ": header column " + std::to_string(i + 1) + " must be '" + expected + "'");
    }

    const fs::path base = path.parent_path();
    std::vector<PatientRecord> records;
    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_numbers[r];
        if (row.size() != header.size())
            row_error(path, line, "*", "expected " + std::to_string(header.size()) + " fields, found " +
                                           std::to_string(row.size()));
        PatientRecord rec;
        rec.patient_id = csv::trim(row[0]);
        if (rec.patient_id.empty()) row_error(path, line, "patient_id", "empty");
        if (!seen.insert(rec.patient_id).second) row_error(path, line, "patient_id", "duplicate id '" + rec.patient_id + "'");

        const auto left = csv::trim(row[1]);
        const auto right = csv::trim(row[2]);
        if (left.empty()) row_error(path, line, "left_image_path", "missing image path");
        if (right.empty()) row_error(path, line, "right_image_path", "missing image path");
        rec.left_image = fs::path(left).is_absolute() ? fs::path(left) : (base / left).lexically_normal();
        rec.right_image = fs::path(right).is_absolute() ? fs::path(right) : (base / right).lexically_normal();

        const auto age = parse_double(row[3]);
        if (!age) row_error(path, line, "age_years", "not a number: '" + row[3] + "'");
        if (*age < 0.0 || *age > 130.0) row_error(path, line, "age_years", "outside [0, 130]");
        rec.age_years = *age;

        try {
            rec.gender = parse_gender(row[4]);
        } catch (const Error&) {
            row_error(path, line, "gender", "expected female or male, found '" + row[4] + "'");
        }

        const auto label = parse_binary(row[5]);
        if (!label) row_error(path, line, "diabetes_label", "expected 0 or 1, found '" + row[5] + "'");
        rec.diabetes_label = *label;

        if (has_flags) {
            std::array<bool, 7> flags{};
            for (std::size_t f = 0; f < 7; ++f) {
                const auto v = parse_binary(row[6 + f]);
                if (!v) row_error(path, line, "flag_" + std::to_string(f + 1), "expected 0 or 1");
                flags[f] = *v == 1;
            }
            if (static_cast<int>(flags[kDiabetesFlag]) != rec.diabetes_label)
                row_error(path, line, "diabetes_label", "disagrees with flag_1 (diabetes)");
            rec.disease_flags = flags;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_manifest(const fs::path& path, const std::vector<PatientRecord>& records) {
    const bool any_flags = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.disease_flags.has_value(); });
    const bool all_flags = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.disease_flags.has_value(); });
    const bool with_flags = any_flags && all_flags;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest " + path.string());
    const fs::path base = path.parent_path();

    csv::Row header(kManifestColumns.begin(), kManifestColumns.end());
    if (with_flags)
        for (int f = 1; f <= 7; ++f) header.push_back("flag_" + std::to_string(f));
    out << csv::join(header) << '\n';
    for (const auto& r : records) {
        csv::Row row{r.patient_id, relative_if_beneath(r.left_image, base), relative_if_beneath(r.right_image, base),
                     format_age(r.age_years), gender_name(r.gender), std::to_string(r.diabetes_label)};
        if (with_flags)
            for (bool f : *r.disease_flags) row.push_back(f ? "1" : "0");
        out << csv::join(row) << '\n';
    }
}

std::vector<ManifestRow> adapt_odir_annotations(const fs::path& path, const fs::path& image_root) {
    const auto table = csv::read_file(path);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < table.header.size(); ++i) col[csv::to_lower(csv::trim(table.header[i]))] = i;

    auto require = [&](const std::string& name, const std::string& what) {
        auto it = col.find(csv::to_lower(name));
        if (it == col.end()) throw Error(path.string() + ": " + what);
        return it->second;
    };
    const std::size_t id_col = require("ID", "missing ID column");
    const std::size_t age_col = require("Patient Age", "missing Patient Age column");
    const std::size_t sex_col = require("Patient Sex", "missing Patient Sex column");
    const std::size_t left_col = require("Left-Fundus", "missing Left-Fundus column");
    const std::size_t right_col = require("Right-Fundus", "missing Right-Fundus column");
    std::array<std::size_t, 7> flag_cols{};
    flag_cols[kDiabetesFlag] = require("D", "missing diabetes column");
    for (std::size_t f = 0; f < 7; ++f) {
        if (f == kDiabetesFlag) continue;
        flag_cols[f] = require(kDiseaseFlagNames[f], std::string("missing flag column ") + kDiseaseFlagNames[f]);
    }

    auto image_path = [&](const std::string& name) {
        const auto n = csv::trim(name);
        return image_root.empty() ? n : (image_root / n).generic_string();
    };

    std::vector<ManifestRow> rows;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_numbers[r];
        auto field = [&](std::size_t c) -> std::string {
            if (c >= row.size()) row_error(path, line, table.header[c], "missing value");
            return csv::trim(row[c]);
        };
        ManifestRow out;
        out.patient_id = field(id_col);
        out.left_image_path = image_path(field(left_col));
        out.right_image_path = image_path(field(right_col));
        out.age_years = field(age_col);
        try {
            out.gender = gender_name(parse_gender(field(sex_col)));
        } catch (const Error&) {
            row_error(path, line, table.header[sex_col], "unknown gender '" + field(sex_col) + "'");
        }
        for (std::size_t f = 0; f < 7; ++f) {
            const auto v = parse_binary(field(flag_cols[f]));
            if (!v) row_error(path, line, table.header[flag_cols[f]], "expected 0 or 1");
            out.flags[f] = std::to_string(*v);
        }
        out.diabetes_label = out.flags[kDiabetesFlag];
        rows.push_back(std::move(out));
    }
    return rows;
}

void write_manifest_rows(const fs::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest " + path.string());
    csv::Row header(kManifestColumns.begin(), kManifestColumns.end());
    for (int f = 1; f <= 7; ++f) header.push_back("flag_" + std::to_string(f));
    out << csv::join(header) << '\n';
    for (const auto& r : rows) {
        csv::Row row{r.patient_id, r.left_image_path, r.right_image_path, r.age_years, r.gender, r.diabetes_label};
        row.insert(row.end(), r.flags.begin(), r.flags.end());
        out << csv::join(row) << '\n';
    }
}

std::vector<std::string> read_exclusion_list(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read exclusion list " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto id = csv::trim(line);
        if (!id.empty()) ids.push_back(std::move(id));
    }
    return ids;
}

ExclusionOutcome apply_exclusions(const std::vector<PatientRecord>& records, const fs::path& exclusion_path) {
    return apply_exclusions(records, read_exclusion_list(exclusion_path));
}

ExclusionOutcome apply_exclusions(const std::vector<PatientRecord>& records, const std::vector<std::string>& excluded) {
    const std::unordered_set<std::string> drop(excluded.begin(), excluded.end());
    std::unordered_set<std::string> present;
    ExclusionOutcome out;
    for (const auto& r : records) {
        present.insert(r.patient_id);
        if (drop.count(r.patient_id)) {
            ++out.removed;
        } else {
            out.kept.push_back(r);
        }
    }
    std::set<std::string> unknown;
    for (const auto& id : excluded)
        if (!present.count(id)) unknown.insert(id);
    out.unknown_ids.assign(unknown.begin(), unknown.end());
    for (const auto& id : out.unknown_ids) spdlog::warn("exclusion id '{}' not present in dataset", id);
    spdlog::info("exclusions removed {} of {} records", out.removed, records.size());
    return out;
}

DatasetSplits make_splits(const std::vector<PatientRecord>& records, const SplitRatios& ratios, std::uint64_t seed) {
    const std::array<double, 3> r = {ratios.train1, ratios.train2, ratios.test};
    for (double v : r)
        if (!(v >= 0.0)) throw Error("split ratios must be non-negative");
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
    if (records.size() < 3) throw Error("need at least 3 records to split, got " + std::to_string(records.size()));
    {
        std::unordered_set<std::string> ids;
        for (const auto& rec : records)
            if (!ids.insert(rec.patient_id).second) throw Error("duplicate patient_id '" + rec.patient_id + "'");
    }

    // Split sizes by largest remainder.
    const std::size_t n = records.size();
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = r[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    for (int i = 0; i < 3; ++i)
        if (sizes[i] == 0) throw Error("split " + std::to_string(i + 1) + " would be empty");

    // Stratify: shuffle each class, then interleave by fractional rank so any
    // contiguous slice carries the global class proportions.
    std::mt19937_64 rng(seed);
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[records[i].diabetes_label == 1 ? 1 : 0].push_back(i);
    for (auto& idx : by_class) std::shuffle(idx.begin(), idx.end(), rng);
    const int first_class = static_cast<int>(rng() & 1U);

    struct Keyed {
        double key;
        int class_rank;
        std::size_t index;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(n);
    for (int c = 0; c < 2; ++c) {
        const auto& idx = by_class[c];
        for (std::size_t j = 0; j < idx.size(); ++j)
            keyed.push_back({(static_cast<double>(j) + 0.5) / static_cast<double>(idx.size()), c == first_class ? 0 : 1, idx[j]});
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
        return a.key != b.key ? a.key < b.key : a.class_rank < b.class_rank;
    });

    DatasetSplits out;
    out.seed = seed;
    out.ratios = ratios;
    std::array<std::vector<PatientRecord>*, 3> dest = {&out.train1, &out.train2, &out.test};
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < sizes[s]; ++k) dest[s]->push_back(records[keyed[pos++].index]);
    return out;
}

void validate(const SyntheticConfig& cfg) {
    if (cfg.n_patients <= 0) throw Error("synthetic: n_patients must be positive");
    if (cfg.image_side <= 0) throw Error("synthetic: image_side must be positive");
    if (!(cfg.noise_sigma > 0.0)) throw Error("synthetic: noise_sigma must be positive");
    if (!(cfg.signal_intensity > 0.0 && cfg.signal_intensity <= 1.0)) throw Error("synthetic: signal_intensity must be in (0,1]");
    if (!(cfg.background_level >= 0.0 && cfg.background_level <= 1.0)) throw Error("synthetic: background_level must be in [0,1]");
    if (cfg.square_side <= 0 || cfg.square_side > cfg.image_side) throw Error("synthetic: square_side must be in [1, image_side]");
    if (!(cfg.class_balance > 0.0 && cfg.class_balance < 1.0)) throw Error("synthetic: class_balance must be in (0,1)");
    for (const auto* range : {&cfg.age_class0_range, &cfg.age_class1_range}) {
        if (!(range->lo >= 0.0 && range->hi <= 130.0 && range->lo < range->hi))
            throw Error("synthetic: age ranges must be non-empty intervals within [0,130]");
    }
    const double overlap_lo = std::max(cfg.age_class0_range.lo, cfg.age_class1_range.lo);
    const double overlap_hi = std::min(cfg.age_class0_range.hi, cfg.age_class1_range.hi);
    const bool overlaps = overlap_lo < overlap_hi;
    const bool nested = (cfg.age_class0_range.lo <= cfg.age_class1_range.lo && cfg.age_class0_range.hi >= cfg.age_class1_range.hi) ||
                        (cfg.age_class1_range.lo <= cfg.age_class0_range.lo && cfg.age_class1_range.hi >= cfg.age_class0_range.hi);
    if (!overlaps || nested) throw Error("synthetic: the two age ranges must overlap partially");
}

namespace {

RgbImage synth_eye(const SyntheticConfig& cfg, bool diabetic, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    std::uniform_int_distribution<int> place(0, cfg.image_side - cfg.square_side);
    int sx = -1, sy = -1;
    if (diabetic) {
        sx = place(rng);
        sy = place(rng);
    }
    RgbImage img(cfg.image_side, cfg.image_side);
    for (int y = 0; y < cfg.image_side; ++y) {
        for (int x = 0; x < cfg.image_side; ++x) {
            const bool in_square = diabetic && x >= sx && x < sx + cfg.square_side && y >= sy && y < sy + cfg.square_side;
            const double level = in_square ? cfg.signal_intensity : cfg.background_level;
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(level + noise(rng), 0.0, 1.0);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

}  // namespace

std::vector<PatientRecord> generate_synthetic(const SyntheticConfig& cfg, const fs::path& out_dir) {
    validate(cfg);
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw Error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<PatientRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.n_patients));
    for (int i = 0; i < cfg.n_patients; ++i) {
        PatientRecord rec;
        char id[32];
        std::snprintf(id, sizeof id, "S%05d", i + 1);
        rec.patient_id = id;
        rec.diabetes_label = unit(rng) < cfg.class_balance ? 1 : 0;
        rec.gender = unit(rng) < 0.5 ? Gender::female : Gender::male;
        const auto& range = rec.diabetes_label ? cfg.age_class1_range : cfg.age_class0_range;
        rec.age_years = std::round((range.lo + (range.hi - range.lo) * unit(rng)) * 100.0) / 100.0;

        rec.left_image = out_dir / "images" / (rec.patient_id + "_left.png");
        rec.right_image = out_dir / "images" / (rec.patient_id + "_right.png");
        write_png(rec.left_image, synth_eye(cfg, rec.diabetes_label == 1, rng));
        write_png(rec.right_image, synth_eye(cfg, rec.diabetes_label == 1, rng));
        records.push_back(std::move(rec));
    }
    write_manifest(out_dir / "manifest.csv", records);
    return records;
}

}  // namespace retfuse
