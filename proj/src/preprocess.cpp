#include "retfuse/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "retfuse/csv.hpp"
#include "retfuse/error.hpp"

namespace retfuse {

namespace {

void check_spec(const NormalizationSpec& spec) {
    if (!(spec.max_value > spec.min_value)) throw Error("degenerate normalization range");
}

}  // namespace

double minmax_normalize(double x, const NormalizationSpec& spec) {
    check_spec(spec);
    return std::clamp((x - spec.min_value) / (spec.max_value - spec.min_value), 0.0, 1.0);
}

std::vector<double> minmax_normalize(std::span<const double> x, const NormalizationSpec& spec) {
    check_spec(spec);
    const double range = spec.max_value - spec.min_value;
    std::vector<double> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(),
                   [&](double v) { return std::clamp((v - spec.min_value) / range, 0.0, 1.0); });
    return out;
}

RgbImage resize_image(const RgbImage& image, int target_side) {
    if (image.empty()) throw Error("resize_image: empty image");
    if (target_side < 8) throw Error("resize_image: target side must be at least 8");
    if (image.width == target_side && image.height == target_side) return image;

    RgbImage out(target_side, target_side);
    const double sx = static_cast<double>(image.width) / target_side;
    const double sy = static_cast<double>(image.height) / target_side;
    for (int y = 0; y < target_side; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_side; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
                const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(top * (1 - wy) + bottom * wy, 0.0, 255.0)));
            }
        }
    }
    return out;
}

RgbTensor to_tensor(const RgbImage& image, const NormalizationSpec& spec) {
    check_spec(spec);
    RgbTensor t;
    t.height = image.height;
    t.width = image.width;
    t.data.resize(static_cast<std::size_t>(3) * image.height * image.width);
    const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.data[c * plane + static_cast<std::size_t>(y) * image.width + x] =
                    static_cast<float>(minmax_normalize(image.at(y, x, c), spec));
    return t;
}

EyePairTensor stack_eye_pair(const RgbTensor& left, const RgbTensor& right) {
    if (left.height != right.height || left.width != right.width)
        throw Error("stack_eye_pair: eye images differ in shape (" + std::to_string(left.height) + "x" +
                    std::to_string(left.width) + " vs " + std::to_string(right.height) + "x" + std::to_string(right.width) + ")");
    EyePairTensor out;
    out.height = left.height;
    out.width = left.width;
    out.data.reserve(left.data.size() * 2);
    out.data.insert(out.data.end(), left.data.begin(), left.data.end());
    out.data.insert(out.data.end(), right.data.begin(), right.data.end());
    return out;
}

namespace {

RgbTensor eye_slice(const EyePairTensor& pair, int first_channel) {
    RgbTensor t;
    t.height = pair.height;
    t.width = pair.width;
    const std::size_t plane = static_cast<std::size_t>(pair.height) * pair.width;
    const auto begin = pair.data.begin() + static_cast<std::ptrdiff_t>(first_channel * plane);
    t.data.assign(begin, begin + static_cast<std::ptrdiff_t>(3 * plane));
    return t;
}

}  // namespace

RgbTensor left_eye(const EyePairTensor& pair) { return eye_slice(pair, 0); }
RgbTensor right_eye(const EyePairTensor& pair) { return eye_slice(pair, 3); }

EyePairTensor load_eye_pair(const PatientRecord& record, int side, const NormalizationSpec& spec) {
    auto load = [&](const std::filesystem::path& p) {
        if (!std::filesystem::exists(p)) throw Error("patient " + record.patient_id + ": missing image " + p.string());
        return to_tensor(resize_image(read_image(p), side), spec);
    };
    return stack_eye_pair(load(record.left_image), load(record.right_image));
}

MetadataMode parse_metadata_mode(const std::string& name) {
    const auto n = csv::to_lower(csv::trim(name));
    if (n == "none") return MetadataMode::none;
    if (n == "gender") return MetadataMode::gender;
    if (n == "age") return MetadataMode::age;
    if (n == "both") return MetadataMode::both;
    throw Error("unknown metadata mode '" + name + "' (expected none, gender, age or both)");
}

std::string mode_name(MetadataMode mode) {
    switch (mode) {
        case MetadataMode::none: return "none";
        case MetadataMode::gender: return "gender";
        case MetadataMode::age: return "age";
        case MetadataMode::both: return "both";
    }
    return "?";
}

MetadataBounds compute_metadata_bounds(const std::vector<PatientRecord>& train1, const std::vector<PatientRecord>& train2) {
    MetadataBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto* split : {&train1, &train2})
        for (const auto& r : *split) {
            b.age_min = std::min(b.age_min, r.age_years);
            b.age_max = std::max(b.age_max, r.age_years);
        }
    if (!(b.age_max > b.age_min)) throw Error("metadata bounds: training ages are constant or absent");
    return b;
}

NormalizedMetadata normalize_metadata(const PatientRecord& record, const MetadataBounds& bounds) {
    if (!(bounds.age_max > bounds.age_min)) throw Error("metadata bounds: age_max must exceed age_min");
    return {std::clamp((record.age_years - bounds.age_min) / (bounds.age_max - bounds.age_min), 0.0, 1.0),
            encode_gender(record.gender)};
}

std::optional<MetadataVector> expand_metadata(MetadataMode mode, double age_n, double gender_n) {
    switch (mode) {
        case MetadataMode::none: return std::nullopt;
        case MetadataMode::age: return MetadataVector{mode, {age_n, age_n}};
        case MetadataMode::gender: return MetadataVector{mode, {gender_n, gender_n}};
        case MetadataMode::both: return MetadataVector{mode, {age_n, gender_n}};
    }
    return std::nullopt;
}

void augment_planes(std::span<const float> src, std::span<float> dst, int channels, int height, int width, int op) {
    if (op < 0 || op >= kAugmentOps) throw Error("augment: op id " + std::to_string(op) + " outside 0..7");
    const int turns = op % 4;
    const bool flip = op >= 4;
    if (turns % 2 == 1 && height != width) throw Error("augment: quarter-turn rotations need a square tensor");
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    if (src.size() != plane * channels || dst.size() != src.size()) throw Error("augment: buffer size mismatch");

    // Source pixel for each output pixel; a clockwise quarter turn maps
    // out(y, x) = in(S-1-x, y). The flip acts on the source image.
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            int sy = y, sx = x;
            switch (turns) {
                case 1: sy = width - 1 - x; sx = y; break;
                case 2: sy = height - 1 - y; sx = width - 1 - x; break;
                case 3: sy = x; sx = height - 1 - y; break;
                default: break;
            }
            if (flip) sx = width - 1 - sx;
            const std::size_t to = static_cast<std::size_t>(y) * width + x;
            const std::size_t from = static_cast<std::size_t>(sy) * width + sx;
            for (int c = 0; c < channels; ++c) dst[c * plane + to] = src[c * plane + from];
        }
    }
}

EyePairTensor augment(const EyePairTensor& t, int op) {
    EyePairTensor out = t;
    augment_planes(t.data, out.data, EyePairTensor::channels, t.height, t.width, op);
    return out;
}

int inverse_augment_op(int op) {
    if (op < 0 || op >= kAugmentOps) throw Error("augment: op id " + std::to_string(op) + " outside 0..7");
    if (op >= 4) return op;  // reflections are involutions
    return (4 - op) % 4;
}

}  // namespace retfuse
