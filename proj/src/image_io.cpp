#include "retfuse/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "retfuse/error.hpp"

namespace retfuse {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RgbImage decode_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw Error("png decode failed for " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    RgbImage out(static_cast<int>(img.width), static_cast<int>(img.height));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw Error("png decode failed for " + path.string() + ": " + msg);
    }
    return out;
}

struct JpegErrorTrap {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

RgbImage decode_jpeg(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    jpeg_decompress_struct cinfo;
    JpegErrorTrap trap;
    cinfo.err = jpeg_std_error(&trap.mgr);
    trap.mgr.error_exit = [](j_common_ptr info) {
        auto* t = reinterpret_cast<JpegErrorTrap*>(info->err);
        (*info->err->format_message)(info, t->message);
        std::longjmp(t->jump, 1);
    };
    RgbImage out;
    if (setjmp(trap.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw Error("jpeg decode failed for " + path.string() + ": " + trap.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out = RgbImage(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

RgbImage decode_ppm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    std::string text(bytes.begin(), bytes.end());
    std::size_t pos = 2;
    auto next_token = [&]() -> long {
        while (pos < text.size()) {
            if (text[pos] == '#') {
                while (pos < text.size() && text[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(text[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        if (start == pos) throw Error("malformed ppm header in " + path.string());
        return std::stol(text.substr(start, pos - start));
    };
    const long w = next_token(), h = next_token(), maxval = next_token();
    if (maxval != 255) throw Error("only 8-bit ppm supported: " + path.string());
    ++pos;  // single whitespace before raster
    RgbImage out(static_cast<int>(w), static_cast<int>(h));
    if (bytes.size() < pos + out.pixels.size()) throw Error("truncated ppm raster in " + path.string());
    std::memcpy(out.pixels.data(), bytes.data() + pos, out.pixels.size());
    return out;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes, path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
    throw Error("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    if (image.empty()) throw Error("refusing to write empty image " + path.string());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
        throw Error("cannot write png " + path.string() + ": " + img.message);
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace retfuse
