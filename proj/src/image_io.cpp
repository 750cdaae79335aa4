#include "shapemoire/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace shapemoire {

Tensor read_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFoundError("image not found: " + path.string());
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    const auto h = static_cast<std::int64_t>(image.height);
    const auto w = static_cast<std::int64_t>(image.width);
    Tensor out(Dims{h, w, 3});
    auto d = out.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(buffer[i]) / 255.0f;
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    if (!image.defined() || image.rank() != 3 || image.dim(2) != 3) {
        throw ShapeError("write_png expects [H, W, 3], got " + dims_to_string(image.dims()));
    }
    std::vector<png_byte> buffer(static_cast<std::size_t>(image.numel()));
    auto d = image.data();
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        buffer[i] = static_cast<png_byte>(std::lround(std::clamp(d[i], 0.0f, 1.0f) * 255.0f));
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.dim(1));
    img.height = static_cast<png_uint_32>(image.dim(0));
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

}  // namespace shapemoire
