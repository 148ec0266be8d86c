#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace retfuse {

enum class Gender { female, male };

/// Fixed order of the seven disease flags; diabetes is the first entry.
inline constexpr std::array<const char*, 7> kDiseaseFlagNames = {"D", "G", "C", "A", "H", "M", "O"};
inline constexpr std::size_t kDiabetesFlag = 0;

struct PatientRecord {
    std::string patient_id;
    std::filesystem::path left_image;
    std::filesystem::path right_image;
    double age_years = 0.0;
    Gender gender = Gender::female;
    std::optional<std::array<bool, 7>> disease_flags;
    int diabetes_label = 0;  // 1 = diabetic

    bool operator==(const PatientRecord&) const = default;
};

double encode_gender(Gender g);
Gender parse_gender(const std::string& text);
std::string gender_name(Gender g);

// ---------------------------------------------------------------------------
// Manifest files

inline constexpr std::array<const char*, 6> kManifestColumns = {
    "patient_id", "left_image_path", "right_image_path", "age_years", "gender", "diabetes_label"};

/// Loads a manifest. Relative image paths are resolved against the manifest's
/// directory. Throws retfuse::Error naming the offending row and field.
std::vector<PatientRecord> load_manifest(const std::filesystem::path& path);

/// Writes records in manifest format. Image paths are written relative to
/// the manifest directory when they live beneath it.
void write_manifest(const std::filesystem::path& path, const std::vector<PatientRecord>& records);

/// One manifest line (all fields as text), as produced by the ODIR adapter.
struct ManifestRow {
    std::string patient_id;
    std::string left_image_path;
    std::string right_image_path;
    std::string age_years;
    std::string gender;
    std::string diabetes_label;
    std::array<std::string, 7> flags;
};

/// Converts an ODIR-style annotation export (CSV with columns ID, Patient Age,
/// Patient Sex, Left-Fundus, Right-Fundus and the disease flags N,D,G,C,A,H,M,O)
/// into manifest rows. Image names are prefixed with `image_root` when given.
std::vector<ManifestRow> adapt_odir_annotations(const std::filesystem::path& path,
                                                const std::filesystem::path& image_root = {});
void write_manifest_rows(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

// ---------------------------------------------------------------------------
// Exclusions and splits

struct ExclusionOutcome {
    std::vector<PatientRecord> kept;
    std::size_t removed = 0;
    std::vector<std::string> unknown_ids;
};

/// Reads a plain-text exclusion list (one id per line, `#` starts a comment).
std::vector<std::string> read_exclusion_list(const std::filesystem::path& path);
ExclusionOutcome apply_exclusions(const std::vector<PatientRecord>& records, const std::filesystem::path& exclusion_path);
ExclusionOutcome apply_exclusions(const std::vector<PatientRecord>& records, const std::vector<std::string>& excluded);

struct SplitRatios {
    double train1 = 0.4;
    double train2 = 0.4;
    double test = 0.2;
};

struct DatasetSplits {
    std::vector<PatientRecord> train1;
    std::vector<PatientRecord> train2;
    std::vector<PatientRecord> test;
    std::uint64_t seed = 0;
    SplitRatios ratios;
};

/// Stratified deterministic split: each class is shuffled with the seed and
/// sliced by the ratios, then each split is ordered by a seeded shuffle.
DatasetSplits make_splits(const std::vector<PatientRecord>& records, const SplitRatios& ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic data

struct AgeRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct SyntheticConfig {
    int n_patients = 1000;
    int image_side = 32;
    double noise_sigma = 0.25;
    double signal_intensity = 0.5;
    double background_level = 0.4;
    int square_side = 8;
    AgeRange age_class1_range{50.0, 100.0};
    AgeRange age_class0_range{0.0, 70.0};
    double class_balance = 0.5;
    std::uint64_t seed = 0;
};

void validate(const SyntheticConfig& cfg);

/// Writes `images/<id>_{left,right}.png` plus `manifest.csv` under `out_dir`
/// and returns the records. Byte-identical output for identical configs.
std::vector<PatientRecord> generate_synthetic(const SyntheticConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace retfuse
