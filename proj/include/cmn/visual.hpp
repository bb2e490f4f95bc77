#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "cmn/tensor.hpp"

namespace cmn {

struct RasterImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<Real> pixels;  // row-major, channel-interleaved, values in [0,1]

    Real at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
    Real& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }

    static RasterImage blank(std::size_t height, std::size_t width, std::size_t channels = 1);
    bool operator==(const RasterImage&) const = default;
};

/// Splits an image into P x P patches, row-major over the patch grid.
/// Each row of the result is one patch flattened row-major with channels innermost.
Tensor patchify(const RasterImage& image, std::size_t patch);
/// Inverse of patchify.
RasterImage unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                       std::size_t patch);

/// Linear map of each patch: patches (S x P*P*C) times projection (P*P*C x d).
Tensor project(const Tensor& patches, const Tensor& projection);

/// Loads a rank-2 feature file whose second extent must equal expected_dim (0 = any).
Tensor load_features(const std::filesystem::path& path, std::size_t expected_dim = 0);
void save_features(const std::filesystem::path& path, const Tensor& features);

/// Concatenates view sequences along the position axis, in the given order.
Tensor concat_views(std::span<const Tensor> views);

/// Binary (P5) portable graymap, 8-bit.
RasterImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const RasterImage& image);

}  // namespace cmn
