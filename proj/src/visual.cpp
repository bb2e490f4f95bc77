#include "cmn/visual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cmn/errors.hpp"
#include "cmn/serialize.hpp"

namespace cmn {

RasterImage RasterImage::blank(std::size_t height, std::size_t width, std::size_t channels) {
    return RasterImage{height, width, channels, std::vector<Real>(height * width * channels, 0.0)};
}

Tensor patchify(const RasterImage& image, std::size_t patch) {
    if (patch == 0 || image.height == 0 || image.width == 0 || image.height % patch != 0 ||
        image.width % patch != 0) {
        throw ArgumentError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                            " (H x W) is not divisible by patch size P=" + std::to_string(patch));
    }
    if (image.pixels.size() != image.height * image.width * image.channels) {
        throw DimensionError("image pixel buffer does not match its extents");
    }
    const std::size_t rows = image.height / patch, cols = image.width / patch;
    const std::size_t width = patch * patch * image.channels;
    std::vector<Real> out;
    out.reserve(rows * cols * width);
    for (std::size_t pr = 0; pr < rows; ++pr)
        for (std::size_t pc = 0; pc < cols; ++pc)
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < image.channels; ++c)
                        out.push_back(image.at(pr * patch + y, pc * patch + x, c));
    return Tensor(Shape{rows * cols, width}, std::move(out));
}

RasterImage unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                       std::size_t patch) {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
        throw ArgumentError("image " + std::to_string(height) + "x" + std::to_string(width) +
                            " (H x W) is not divisible by patch size P=" + std::to_string(patch));
    }
    const std::size_t rows = height / patch, cols = width / patch;
    if (patches.rank() != 2 || patches.shape()[0] != rows * cols || patches.shape()[1] != patch * patch * channels) {
        throw DimensionError("patch matrix " + shape_str(patches.shape()) + " does not fit a " +
                             std::to_string(height) + "x" + std::to_string(width) + " image with P=" +
                             std::to_string(patch));
    }
    RasterImage image = RasterImage::blank(height, width, channels);
    const auto src = patches.data();
    std::size_t i = 0;
    for (std::size_t pr = 0; pr < rows; ++pr)
        for (std::size_t pc = 0; pc < cols; ++pc)
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < channels; ++c) image.at(pr * patch + y, pc * patch + x, c) = src[i++];
    return image;
}

Tensor project(const Tensor& patches, const Tensor& projection) { return matmul(patches, projection); }

Tensor load_features(const std::filesystem::path& path, std::size_t expected_dim) {
    Tensor t = load_tensor(path);
    if (t.rank() != 2) {
        throw FormatError("feature file " + path.string() + " must be rank 2, got " + shape_str(t.shape()));
    }
    if (expected_dim != 0 && t.shape()[1] != expected_dim) {
        throw DimensionError("feature file " + path.string() + " has width " + std::to_string(t.shape()[1]) +
                             ", expected " + std::to_string(expected_dim));
    }
    return t;
}

void save_features(const std::filesystem::path& path, const Tensor& features) {
    if (features.rank() != 2) throw DimensionError("features must be rank 2, got " + shape_str(features.shape()));
    save_tensor(path, features, DType::Float32);
}

Tensor concat_views(std::span<const Tensor> views) {
    if (views.empty()) throw ArgumentError("concat_views: no views");
    if (views.size() == 1) return views[0];
    return concat(views, 0);
}

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string discard;
            std::getline(in, discard);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

}  // namespace

RasterImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open " + path.string());
    if (pgm_token(in) != "P5") throw FormatError(path.string() + " is not a binary PGM (P5)");
    std::size_t width = 0, height = 0, maxval = 0;
    try {
        width = std::stoul(pgm_token(in));
        height = std::stoul(pgm_token(in));
        maxval = std::stoul(pgm_token(in));
    } catch (const std::exception&) {
        throw FormatError("malformed PGM header in " + path.string());
    }
    if (width == 0 || height == 0 || maxval == 0 || maxval > 255) {
        throw FormatError("unsupported PGM geometry in " + path.string());
    }
    std::string bytes(width * height, '\0');
    if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw FormatError("truncated PGM payload in " + path.string());
    }
    RasterImage image = RasterImage::blank(height, width, 1);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        image.pixels[i] = static_cast<Real>(static_cast<unsigned char>(bytes[i])) / static_cast<Real>(maxval);
    return image;
}

void write_pgm(const std::filesystem::path& path, const RasterImage& image) {
    if (image.channels != 1) throw ArgumentError("PGM output needs a single-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot write " + path.string());
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    for (Real v : image.pixels) {
        const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.put(static_cast<char>(byte));
    }
    if (!out) throw FileError("write failed for " + path.string());
}

}  // namespace cmn
