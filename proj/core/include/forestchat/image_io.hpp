#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "forestchat/raster.hpp"

namespace forestchat {

/// Decodes an 8-bit PNG or a JPEG held in memory. Alpha is dropped, palettes
/// and low bit depths are expanded, 16-bit samples are stripped to 8 bits.
/// Throws Error{DecodeError}.
Raster decode_image(std::span<const std::uint8_t> bytes);

/// Reads a PNG or JPEG file. Throws Error{DecodeError} on I/O or decode failure.
Raster read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Raster& raster);
void write_png(const Raster& raster, const std::filesystem::path& path);

/// Interprets a decoded raster as a mask. Value sets within {0,255} or {0,1}
/// become Binary; anything else is kept as MultiClass labels. RGB inputs are
/// collapsed to their per-pixel channel maximum first.
ChangeMask mask_from_raster(const Raster& raster, MaskProvenance provenance);

ChangeMask read_mask(const std::filesystem::path& path, MaskProvenance provenance);
ChangeMask decode_mask(std::span<const std::uint8_t> bytes, MaskProvenance provenance);

/// Binary masks are written as 0/255, multi-class masks as raw labels.
std::vector<std::uint8_t> encode_mask_png(const ChangeMask& mask);
void write_mask_png(const ChangeMask& mask, const std::filesystem::path& path);

/// Reads only the image header. Throws Error{DecodeError}.
struct ImageShape {
  int width;
  int height;
};
ImageShape probe_image_shape(const std::filesystem::path& path);

ImagePair load_image_pair(const std::filesystem::path& path_a,
                          const std::filesystem::path& path_b);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace forestchat
