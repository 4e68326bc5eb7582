#include "forestchat/image_io.hpp"

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <fmt/format.h>
#include <jpeglib.h>
#include <png.h>

#include "forestchat/error.hpp"

namespace forestchat {

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSignature, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorKind::DecodeError, fmt::format("png: {}", image.message));
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::DecodeError, fmt::format("png: {}", image.message));
  }
  return Raster(static_cast<int>(image.width), static_cast<int>(image.height), channels,
                std::move(data));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* manager = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, manager->message);
  std::longjmp(manager->jump, 1);
}

Raster decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct info;
  JpegErrorManager error;
  info.err = jpeg_std_error(&error.base);
  error.base.error_exit = jpeg_error_exit;
  error.message[0] = '\0';
  // No objects with destructors may live between setjmp and the last libjpeg call.
  std::vector<std::uint8_t> data;
  int width = 0;
  int height = 0;
  int channels = 0;
  if (setjmp(error.jump)) {
    jpeg_destroy_decompress(&info);
    throw Error(ErrorKind::DecodeError, fmt::format("jpeg: {}", error.message));
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = info.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&info);
  width = static_cast<int>(info.output_width);
  height = static_cast<int>(info.output_height);
  channels = info.output_components;
  data.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
              static_cast<std::size_t>(channels));
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = data.data() + static_cast<std::size_t>(info.output_scanline) *
                                     static_cast<std::size_t>(width) *
                                     static_cast<std::size_t>(channels);
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return Raster(width, height, channels, std::move(data));
}

std::vector<std::uint8_t> encode_png_samples(int width, int height, int channels,
                                             const std::uint8_t* samples) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, samples, 0, nullptr)) {
    throw Error(ErrorKind::EncodeError, fmt::format("png: {}", image.message));
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, samples, 0, nullptr)) {
    throw Error(ErrorKind::EncodeError, fmt::format("png: {}", image.message));
  }
  out.resize(size);
  return out;
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorKind::IoError, fmt::format("cannot open {} for writing", path.string()));
  }
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) {
    throw Error(ErrorKind::IoError, fmt::format("failed writing {}", path.string()));
  }
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorKind::DecodeError, fmt::format("cannot open {}", path.string()));
  }
  return {std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
}

Raster decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) return decode_jpeg(bytes);
  throw Error(ErrorKind::DecodeError, "unrecognised image format (expected PNG or JPEG)");
}

Raster read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(ErrorKind::DecodeError, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
  return encode_png_samples(raster.width(), raster.height(), raster.channels(),
                            raster.data().data());
}

void write_png(const Raster& raster, const std::filesystem::path& path) {
  write_bytes(encode_png(raster), path);
}

ChangeMask mask_from_raster(const Raster& raster, MaskProvenance provenance) {
  std::vector<std::uint8_t> labels(raster.pixel_count());
  for (int row = 0; row < raster.height(); ++row) {
    for (int col = 0; col < raster.width(); ++col) {
      std::uint8_t v = raster.at(row, col, 0);
      for (int c = 1; c < raster.channels(); ++c) v = std::max(v, raster.at(row, col, c));
      labels[static_cast<std::size_t>(row) * static_cast<std::size_t>(raster.width()) +
             static_cast<std::size_t>(col)] = v;
    }
  }
  const std::set<std::uint8_t> values(labels.begin(), labels.end());
  const bool zero_255 = std::all_of(values.begin(), values.end(),
                                    [](std::uint8_t v) { return v == 0 || v == 255; });
  if (zero_255) {
    for (auto& v : labels) v = v ? 1 : 0;
  }
  return ChangeMask::from_labels(raster.width(), raster.height(), std::move(labels), provenance);
}

ChangeMask read_mask(const std::filesystem::path& path, MaskProvenance provenance) {
  return mask_from_raster(read_image(path), provenance);
}

ChangeMask decode_mask(std::span<const std::uint8_t> bytes, MaskProvenance provenance) {
  return mask_from_raster(decode_image(bytes), provenance);
}

std::vector<std::uint8_t> encode_mask_png(const ChangeMask& mask) {
  std::vector<std::uint8_t> samples(mask.labels().begin(), mask.labels().end());
  if (mask.is_binary()) {
    for (auto& v : samples) v = v ? 255 : 0;
  }
  return encode_png_samples(mask.width(), mask.height(), 1, samples.data());
}

void write_mask_png(const ChangeMask& mask, const std::filesystem::path& path) {
  write_bytes(encode_mask_png(mask), path);
}

ImageShape probe_image_shape(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (is_png(bytes)) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
      throw Error(ErrorKind::DecodeError, fmt::format("{}: png: {}", path.string(), image.message));
    }
    ImageShape shape{static_cast<int>(image.width), static_cast<int>(image.height)};
    png_image_free(&image);
    return shape;
  }
  const Raster raster = read_image(path);
  return {raster.width(), raster.height()};
}

ImagePair load_image_pair(const std::filesystem::path& path_a,
                          const std::filesystem::path& path_b) {
  Raster a = read_image(path_a);
  Raster b = read_image(path_b);
  return make_image_pair(path_a.stem().string(), std::move(a), std::move(b));
}

}  // namespace forestchat
