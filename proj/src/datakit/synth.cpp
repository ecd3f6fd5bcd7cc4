#include <algorithm>
#include <cmath>
#include <optional>

#include "llts/datakit.hpp"
#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

namespace {

using Rgb = std::array<double, 3>;

constexpr double kRectAspect = 0.75;               // height / width of mandatory plates
constexpr double kTriangleAspect = 0.8660254037844386;  // equilateral

double glyph_height(const SignGlyph& g) {
  switch (g.class_id) {
    case 0: return g.width;
    case 1: return g.width * kRectAspect;
    default: return g.width * kTriangleAspect;
  }
}

// Colour of the glyph at pixel centre (x, y), or nothing outside it.
std::optional<Rgb> glyph_color(const SignGlyph& g, double x, double y) {
  const double s = g.width, dx = x - g.cx, dy = y - g.cy;
  Rgb c;
  switch (g.class_id) {
    case 0: {  // red ring on white
      const double d = std::hypot(dx, dy);
      if (d > s / 2) return std::nullopt;
      c = d > s * 0.36 ? Rgb{0.85, 0.08, 0.08} : Rgb{0.92, 0.92, 0.92};
      break;
    }
    case 1: {  // blue plate with a white bar
      if (std::fabs(dx) > s / 2 || std::fabs(dy) > s * kRectAspect / 2) return std::nullopt;
      c = (std::fabs(dx) <= s * 0.3 && std::fabs(dy) <= s * 0.07) ? Rgb{0.92, 0.92, 0.92} : Rgb{0.08, 0.25, 0.8};
      break;
    }
    default: {  // yellow triangle, black border
      const double h = s * kTriangleAspect, top = g.cy - h / 2, t = (y - top) / h;
      if (t < 0 || t > 1 || std::fabs(dx) > t * s / 2) return std::nullopt;
      // Distance to the slanted edges and to the base.
      const double side = (t * s / 2 - std::fabs(dx)) * kTriangleAspect;
      const double base = g.cy + h / 2 - y;
      c = std::min(side, base) < s * 0.1 ? Rgb{0.05, 0.05, 0.05} : Rgb{0.95, 0.78, 0.1};
      break;
    }
  }
  for (double& v : c) v *= g.brightness;
  return c;
}

int sample_class(Rng& rng, const std::array<double, 3>& ratios) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  double u = rng.uniform(0.0, total);
  for (int k = 0; k < 2; ++k) {
    if (u < ratios[static_cast<std::size_t>(k)]) return k;
    u -= ratios[static_cast<std::size_t>(k)];
  }
  return 2;
}

// Smooth value noise in [-1, 1] on a coarse lattice.
std::vector<double> value_noise(std::size_t size, std::uint64_t seed) {
  const std::size_t cell = 8, n = size / cell + 2;
  Rng rng(seed, 3);
  std::vector<double> lattice(n * n);
  for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / cell, fy = static_cast<double>(y) / cell;
      const auto ix = static_cast<std::size_t>(fx), iy = static_cast<std::size_t>(fy);
      const double tx = fx - static_cast<double>(ix), ty = fy - static_cast<double>(iy);
      const double a = lattice[iy * n + ix], b = lattice[iy * n + ix + 1];
      const double c = lattice[(iy + 1) * n + ix], d = lattice[(iy + 1) * n + ix + 1];
      out[y * size + x] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  return out;
}

}  // namespace

std::vector<std::uint8_t> glyph_mask(const SignGlyph& g, std::size_t size) {
  std::vector<std::uint8_t> m(size * size, 0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (glyph_color(g, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) m[y * size + x] = 1;
  return m;
}

SceneLayout make_layout(std::uint64_t seed, const SynthOptions& opt) {
  if (opt.size < 16) throw UsageError("synthetic scenes need size >= 16");
  if (opt.max_signs == 0) throw UsageError("max_signs must be at least 1");
  for (double r : opt.class_ratios)
    if (!(r >= 0)) throw UsageError("class ratios must be non-negative");
  if (!(opt.class_ratios[0] + opt.class_ratios[1] + opt.class_ratios[2] > 0))
    throw UsageError("class ratios must not all be zero");

  Rng rng(seed, 1);
  const double S = static_cast<double>(opt.size);
  SceneLayout L;
  L.size = opt.size;
  L.texture_seed = rng.next_u64();
  L.sky = {0.06 + 0.08 * rng.uniform(), 0.07 + 0.08 * rng.uniform(), 0.12 + 0.1 * rng.uniform()};
  const double g = 0.1 + 0.12 * rng.uniform();
  L.ground = {g, g * 0.97, g * 0.93};
  L.horizon = rng.uniform(0.35, 0.65);

  for (std::size_t k = 0; k < opt.distractors; ++k) {
    Distractor d;
    d.kind = rng.uniform_int(0, 2);
    d.x = rng.uniform(0, S);
    d.y = rng.uniform(0, S);
    switch (d.kind) {
      case 0: {  // building block or lit window
        d.a = rng.uniform(4, S / 3);
        d.b = rng.uniform(4, S / 3);
        const double v = rng.uniform(0.12, 0.45);
        d.color = {v, v * rng.uniform(0.9, 1.05), v * rng.uniform(0.85, 1.1)};
        break;
      }
      case 1: {  // lamp glow
        d.a = rng.uniform(2, std::max(3.0, S / 14));
        d.color = {rng.uniform(0.55, 0.8), rng.uniform(0.5, 0.7), rng.uniform(0.4, 0.55)};
        break;
      }
      default: {  // pole
        d.a = rng.uniform(1, 3);
        const double v = rng.uniform(0.15, 0.3);
        d.color = {v, v, v};
        break;
      }
    }
    L.distractors.push_back(d);
  }

  const double max_w = std::min(static_cast<double>(opt.max_sign_px), S * 0.45);
  const double min_w = std::min(static_cast<double>(opt.min_sign_px), max_w);
  const int count = rng.uniform_int(1, static_cast<int>(opt.max_signs));
  for (int k = 0; k < count; ++k) {
    SignGlyph gl;
    gl.class_id = sample_class(rng, opt.class_ratios);
    gl.width = rng.uniform(min_w, max_w);
    gl.brightness = rng.uniform(0.6, 1.0);
    const double h = glyph_height(gl);
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      gl.cx = rng.uniform(gl.width / 2 + 1, S - gl.width / 2 - 1);
      gl.cy = rng.uniform(h / 2 + 1, S - h / 2 - 1);
      placed = true;
      for (const SignGlyph& o : L.signs) {
        const double oh = glyph_height(o);
        if (std::fabs(gl.cx - o.cx) < (gl.width + o.width) / 2 + 2 && std::fabs(gl.cy - o.cy) < (h + oh) / 2 + 2) {
          placed = false;
          break;
        }
      }
    }
    if (placed) L.signs.push_back(gl);
  }
  return L;
}

Tensor render_layout(const SceneLayout& L, bool draw_signs) {
  const std::size_t N = L.size;
  const double S = static_cast<double>(N);
  const std::vector<double> noise = value_noise(N, L.texture_seed);
  Rng grain(L.texture_seed, 5);
  std::vector<double> px(3 * N * N);
  auto put = [&](std::size_t x, std::size_t y, const Rgb& c) {
    for (std::size_t ch = 0; ch < 3; ++ch) px[(ch * N + y) * N + x] = c[ch];
  };

  const double horizon = L.horizon * S;
  for (std::size_t y = 0; y < N; ++y)
    for (std::size_t x = 0; x < N; ++x) {
      const double yc = static_cast<double>(y) + 0.5;
      const double t = noise[y * N + x] * 0.04 + grain.uniform(-0.01, 0.01);
      Rgb c;
      if (yc < horizon) {
        const double fade = 0.6 + 0.4 * yc / horizon;  // darker towards the top
        for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = L.sky[ch] * fade + t;
      } else {
        for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = L.ground[ch] + t;
      }
      put(x, y, c);
    }

  for (const Distractor& d : L.distractors)
    for (std::size_t y = 0; y < N; ++y)
      for (std::size_t x = 0; x < N; ++x) {
        const double xc = static_cast<double>(x) + 0.5, yc = static_cast<double>(y) + 0.5;
        bool in = false;
        switch (d.kind) {
          case 0: in = xc >= d.x && xc < d.x + d.a && yc >= d.y && yc < d.y + d.b; break;
          case 1: in = std::hypot(xc - d.x, yc - d.y) <= d.a; break;
          default: in = xc >= d.x && xc < d.x + d.a && yc >= d.y; break;
        }
        if (in) put(x, y, d.color);
      }

  if (draw_signs)
    for (const SignGlyph& g : L.signs) {
      const double h = glyph_height(g);
      const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(g.cx - g.width / 2 - 1)));
      const auto x1 = static_cast<std::size_t>(std::min(S, std::ceil(g.cx + g.width / 2 + 1)));
      const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(g.cy - h / 2 - 1)));
      const auto y1 = static_cast<std::size_t>(std::min(S, std::ceil(g.cy + h / 2 + 1)));
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x)
          if (auto c = glyph_color(g, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) put(x, y, *c);
    }

  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  return Tensor({3, N, N}, std::move(px));
}

SynthScene synth_scene(std::uint64_t seed, const SynthOptions& opt) {
  SceneLayout L = make_layout(seed, opt);
  SynthScene s;
  s.image = render_layout(L, true);
  const double S = static_cast<double>(L.size);
  for (const SignGlyph& g : L.signs) {
    const auto m = glyph_mask(g, L.size);
    std::size_t x0 = L.size, y0 = L.size, x1 = 0, y1 = 0;
    for (std::size_t y = 0; y < L.size; ++y)
      for (std::size_t x = 0; x < L.size; ++x)
        if (m[y * L.size + x]) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x + 1);
          y1 = std::max(y1, y + 1);
        }
    if (x1 <= x0 || y1 <= y0) continue;
    LabelRecord r;
    r.class_id = g.class_id;
    r.cx = static_cast<double>(x0 + x1) / 2 / S;
    r.cy = static_cast<double>(y0 + y1) / 2 / S;
    r.w = static_cast<double>(x1 - x0) / S;
    r.h = static_cast<double>(y1 - y0) / S;
    s.labels.push_back(r);
  }
  return s;
}

SynthScene synth_scene(std::uint64_t seed, std::size_t size, std::size_t max_signs) {
  SynthOptions opt;
  opt.size = size;
  opt.max_signs = max_signs;
  return synth_scene(seed, opt);
}

}  // namespace llts
