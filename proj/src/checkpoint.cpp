#include "retfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "retfuse/error.hpp"

namespace retfuse {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'E', 'T', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
const char* dtype_of();
template <>
const char* dtype_of<float>() { return "f32"; }
template <>
const char* dtype_of<double>() { return "f64"; }

std::size_t element_size(const std::string& dtype) {
    if (dtype == "f32") return 4;
    if (dtype == "f64") return 8;
    throw Error("checkpoint: unknown dtype " + dtype);
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["meta"] = ckpt.meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        header["tensors"].push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"offset", offset}, {"bytes", t.bytes.size()}});
        offset += t.bytes.size();
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.tensors) out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!out) throw Error("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error("not a checkpoint archive: " + path.string());
    if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const auto header = nlohmann::json::parse(text);

    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        CheckpointTensor t;
        t.name = entry.at("name").get<std::string>();
        t.dtype = entry.at("dtype").get<std::string>();
        t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
        t.bytes.resize(entry.at("bytes").get<std::size_t>());
        in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
        if (!in) throw Error("truncated checkpoint payload for " + t.name + " in " + path.string());
        std::int64_t count = 1;
        for (auto d : t.shape) count *= d;
        if (static_cast<std::size_t>(count) * element_size(t.dtype) != t.bytes.size())
            throw Error("checkpoint tensor " + t.name + " has inconsistent size");
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

template <typename T>
CheckpointTensor pack_tensor(const std::string& name, const Tensor<T>& t) {
    CheckpointTensor out{name, dtype_of<T>(), {t.n, t.c, t.h, t.w}, {}};
    out.bytes.resize(t.size() * sizeof(T));
    std::memcpy(out.bytes.data(), t.data.data(), out.bytes.size());
    return out;
}

template <typename T>
void unpack_tensor(const CheckpointTensor& src, Tensor<T>& dst) {
    if (src.dtype != dtype_of<T>()) throw Error("checkpoint tensor " + src.name + ": dtype " + src.dtype + " does not match model");
    const std::vector<std::int64_t> shape{dst.n, dst.c, dst.h, dst.w};
    if (src.shape != shape) throw Error("checkpoint tensor " + src.name + ": shape mismatch with model " + dst.shape_string());
    std::memcpy(dst.data.data(), src.bytes.data(), src.bytes.size());
}

CheckpointTensor pack_values(const std::string& name, const std::vector<double>& values, std::vector<std::int64_t> shape) {
    CheckpointTensor out{name, "f64", std::move(shape), {}};
    out.bytes.resize(values.size() * sizeof(double));
    std::memcpy(out.bytes.data(), values.data(), out.bytes.size());
    return out;
}

std::vector<double> unpack_values(const CheckpointTensor& src) {
    if (src.dtype != "f64") throw Error("checkpoint tensor " + src.name + ": expected f64");
    std::vector<double> values(src.bytes.size() / sizeof(double));
    std::memcpy(values.data(), src.bytes.data(), src.bytes.size());
    return values;
}

template CheckpointTensor pack_tensor(const std::string&, const Tensor<float>&);
template CheckpointTensor pack_tensor(const std::string&, const Tensor<double>&);
template void unpack_tensor(const CheckpointTensor&, Tensor<float>&);
template void unpack_tensor(const CheckpointTensor&, Tensor<double>&);

}  // namespace retfuse
