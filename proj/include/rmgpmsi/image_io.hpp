#pragma once

// Decoding and encoding of PNG, JPEG and binary PNM files. Decoded images are
// unit-float RGB; grayscale files are expanded to three channels.

#include <png.h>

#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/image.hpp"

namespace rmgpmsi::io {

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext;
}

inline bool is_image_file(const std::filesystem::path& p) {
  const auto ext = lower_extension(p);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

inline ImageTensor from_bytes(std::size_t h, std::size_t w, std::size_t channels, const std::uint8_t* data) {
  ImageTensor img(h, w, 3);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.values()[i * 3 + c] = static_cast<float>(data[i * channels + (channels == 1 ? 0 : c)]) / 255.0f;
  return img;
}

/// Unit-float or byte image to 8-bit samples, clamped.
template <typename P>
std::vector<std::uint8_t> to_bytes(const BasicImage<P>& img) {
  const double scale = img.value_range() == ValueRange::Byte ? 1.0 : 255.0;
  std::vector<std::uint8_t> out(img.values().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(static_cast<double>(img.values()[i]) * scale), 0L, 255L));
  return out;
}

inline ImageTensor read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorKind::DecodeError, path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::DecodeError, path + ": " + image.message);
  }
  return from_bytes(image.height, image.width, 3, buffer.data());
}

namespace detail {
struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};
}  // namespace detail

inline ImageTensor read_jpeg(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) fail(ErrorKind::UnreadableImage, path);
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = [](j_common_ptr info) {
    std::longjmp(reinterpret_cast<detail::JpegErrorManager*>(info->err)->jump, 1);
  };
  std::vector<std::uint8_t> buffer;
  std::size_t w = 0, h = 0, ch = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::DecodeError, path + ": invalid JPEG data");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = cinfo.output_width;
  h = cinfo.output_height;
  ch = static_cast<std::size_t>(cinfo.output_components);
  buffer.resize(w * h * ch);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * ch;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_bytes(h, w, ch, buffer.data());
}

/// Binary P5 (gray) and P6 (RGB) with maxval 255.
inline ImageTensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::UnreadableImage, path);
  std::string magic;
  in >> magic;
  const auto next_int = [&]() -> std::size_t {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    std::size_t v = 0;
    if (!(in >> v)) fail(ErrorKind::DecodeError, path + ": malformed PNM header");
    return v;
  };
  if (magic != "P5" && magic != "P6") fail(ErrorKind::DecodeError, path + ": unsupported PNM type " + magic);
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) fail(ErrorKind::DecodeError, path + ": only maxval 255 is supported");
  in.get();
  const std::size_t ch = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> data(w * h * ch);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(in.gcount()) != data.size()) fail(ErrorKind::DecodeError, path + ": truncated");
  return from_bytes(h, w, ch, data.data());
}

inline ImageTensor read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::UnreadableImage, path + " does not exist");
  const auto ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  fail(ErrorKind::DecodeError, path + ": unknown image format");
}

template <typename P>
void write_png(const std::string& path, const BasicImage<P>& img) {
  require(img.channels() == 1 || img.channels() == 3, ErrorKind::ShapeMismatch, "PNG needs 1 or 3 channels");
  const auto bytes = to_bytes(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    fail(ErrorKind::IoError, path + ": " + image.message);
}

template <typename P>
void write_pnm(const std::string& path, const BasicImage<P>& img) {
  require(img.channels() == 1 || img.channels() == 3, ErrorKind::ShapeMismatch, "PNM needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << (img.channels() == 1 ? "P5" : "P6") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  const auto bytes = to_bytes(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Writes by extension: .png, or .pgm/.ppm/.pnm.
template <typename P>
void write_image(const std::string& path, const BasicImage<P>& img) {
  const auto ext = lower_extension(path);
  if (ext == ".png") write_png(path, img);
  else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") write_pnm(path, img);
  else fail(ErrorKind::ConfigError, "unsupported output format " + ext);
}

}  // namespace rmgpmsi::io
