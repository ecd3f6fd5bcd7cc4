#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "llts/datakit.hpp"
#include "llts/errors.hpp"

namespace llts {

namespace fs = std::filesystem;

namespace {

bool has_png_signature(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw DataError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  return std::fread(sig, 1, 8, f.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

struct JpegErrorJump {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorJump*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Decodes (or only measures, when pixels is null) a JPEG as 8-bit RGB.
ImageSize read_jpeg(const fs::path& path, std::vector<unsigned char>* pixels) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw DataError("cannot open image " + path.string());
  jpeg_decompress_struct cinfo;
  JpegErrorJump err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  ImageSize size{cinfo.image_width, cinfo.image_height};
  if (pixels) {
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    pixels->assign(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_height * 3, 0);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = pixels->data() + static_cast<std::size_t>(cinfo.output_scanline) * cinfo.output_width * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  }
  jpeg_destroy_decompress(&cinfo);
  return size;
}

ImageSize read_png(const fs::path& path, std::vector<unsigned char>* pixels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  ImageSize size{img.width, img.height};
  if (!pixels) {
    png_image_free(&img);
    return size;
  }
  img.format = PNG_FORMAT_RGB;
  pixels->assign(PNG_IMAGE_SIZE(img), 0);
  if (!png_image_finish_read(&img, nullptr, pixels->data(), 0, nullptr))
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  return size;
}

}  // namespace

ImageSize image_size(const fs::path& path) {
  return has_png_signature(path) ? read_png(path, nullptr) : read_jpeg(path, nullptr);
}

Tensor load_image(const fs::path& path) {
  std::vector<unsigned char> px;
  const ImageSize s = has_png_signature(path) ? read_png(path, &px) : read_jpeg(path, &px);
  const std::size_t H = s.height, W = s.width;
  std::vector<double> v(3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) v[(c * H + y) * W + x] = px[(y * W + x) * 3 + c] / 255.0;
  return Tensor({3, H, W}, std::move(v));
}

void save_png(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("save_png expects [3,H,W], got " + shape_str(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2);
  std::vector<unsigned char> px(H * W * 3);
  const auto v = image.data();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double u = std::clamp(v[(c * H + y) * W + x], 0.0, 1.0);
        px[(y * W + x) * 3 + c] = static_cast<unsigned char>(std::lround(u * 255.0));
      }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + img.message);
}

Tensor resize_image(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3 || out_h == 0 || out_w == 0)
    throw ShapeError("resize_image expects [C,H,W] and a non-empty target, got " + shape_str(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == out_h && W == out_w) return image.detach();
  auto axis = [](std::size_t in, std::size_t out, std::vector<std::size_t>& i0, std::vector<std::size_t>& i1,
                 std::vector<double>& frac) {
    i0.resize(out);
    i1.resize(out);
    frac.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      i0[o] = static_cast<std::size_t>(src);
      i1[o] = std::min(i0[o] + 1, in - 1);
      frac[o] = src - static_cast<double>(i0[o]);
    }
  };
  std::vector<std::size_t> y0, y1, x0, x1;
  std::vector<double> fy, fx;
  axis(H, out_h, y0, y1, fy);
  axis(W, out_w, x0, x1, fx);
  const auto v = image.data();
  std::vector<double> out(C * out_h * out_w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = v.data() + (c * H + y0[y]) * W;
      const double* r1 = v.data() + (c * H + y1[y]) * W;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double top = r0[x0[x]] + (r0[x1[x]] - r0[x0[x]]) * fx[x];
        const double bot = r1[x0[x]] + (r1[x1[x]] - r1[x0[x]]) * fx[x];
        out[(c * out_h + y) * out_w + x] = top + (bot - top) * fy[y];
      }
    }
  return Tensor({C, out_h, out_w}, std::move(out));
}

std::vector<ImageSample> load_samples(const fs::path& root, const DatasetManifest& m, std::size_t size) {
  std::vector<ImageSample> out;
  out.reserve(m.images.size());
  for (const ImageEntry& e : m.images) {
    Tensor img = load_image(root / e.path);
    out.push_back({fs::path(e.path).stem().string(), resize_image(img, size, size), e.labels});
  }
  return out;
}

}  // namespace llts
