#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "retfuse/dataset.hpp"
#include "retfuse/image_io.hpp"

namespace retfuse {

/// Min/Max pair of the min-max rescaling (x - min) / (max - min).
struct NormalizationSpec {
    double min_value = 0.0;
    double max_value = 255.0;
};

/// Elementwise min-max rescaling, clamped to [0, 1].
std::vector<double> minmax_normalize(std::span<const double> x, const NormalizationSpec& spec);
double minmax_normalize(double x, const NormalizationSpec& spec);

/// Bilinear resize (half-pixel centres) to a target_side x target_side square.
RgbImage resize_image(const RgbImage& image, int target_side);

/// Three planar channels of one eye, values in [0, 1].
struct RgbTensor {
    static constexpr int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<float> data;
};

/// Both eyes of a patient: channels 0-2 left, 3-5 right.
struct EyePairTensor {
    static constexpr int channels = 6;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    std::span<const float> plane(int c) const {
        return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * height * width,
                                                    static_cast<std::size_t>(height) * width);
    }
    bool operator==(const EyePairTensor&) const = default;
};

RgbTensor to_tensor(const RgbImage& image, const NormalizationSpec& spec);
EyePairTensor stack_eye_pair(const RgbTensor& left, const RgbTensor& right);
RgbTensor left_eye(const EyePairTensor& pair);
RgbTensor right_eye(const EyePairTensor& pair);

/// Reads both eye images of a record, resizes to `side`, normalizes and stacks.
EyePairTensor load_eye_pair(const PatientRecord& record, int side, const NormalizationSpec& spec);

// ---------------------------------------------------------------------------
// Metadata

enum class MetadataMode { none, gender, age, both };

MetadataMode parse_metadata_mode(const std::string& name);
std::string mode_name(MetadataMode mode);
inline constexpr std::array<MetadataMode, 4> kAblationConditions = {
    MetadataMode::none, MetadataMode::gender, MetadataMode::both, MetadataMode::age};

struct MetadataBounds {
    double age_min = 0.0;
    double age_max = 0.0;
};

/// Age bounds over the two training splits (never the test split).
MetadataBounds compute_metadata_bounds(const std::vector<PatientRecord>& train1, const std::vector<PatientRecord>& train2);

struct NormalizedMetadata {
    double age = 0.0;
    double gender = 0.0;
};

NormalizedMetadata normalize_metadata(const PatientRecord& record, const MetadataBounds& bounds);

struct MetadataVector {
    MetadataMode mode = MetadataMode::both;
    std::array<double, 2> components{};
};

/// age/gender modes repeat the single scalar in both slots; `none` yields
/// nothing so callers take the image-only path.
std::optional<MetadataVector> expand_metadata(MetadataMode mode, double age_n, double gender_n);

// ---------------------------------------------------------------------------
// Dihedral augmentation

inline constexpr int kAugmentOps = 8;

/// op = rotation_quarter_turns + 4 * flip. Flip (column reversal) is applied
/// first, then clockwise quarter turns. All channels transform together.
EyePairTensor augment(const EyePairTensor& t, int op);
int inverse_augment_op(int op);

/// Raw planar form used by batch assembly: `src` and `dst` hold `channels`
/// planes of `side` x `side`; they must not alias.
void augment_planes(std::span<const float> src, std::span<float> dst, int channels, int height, int width, int op);

}  // namespace retfuse
