#include "llts/pgfe.hpp"

#include <algorithm>
#include <cmath>

#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

CbrParams CbrParams::make(std::size_t channels) {
  CbrParams p;
  p.conv = ConvSpec::make(channels, channels, 3, 3, 1, 1);
  p.norm_scale = Tensor({channels}, 1.0);
  p.norm_shift = Tensor({channels}, 0.0);
  p.norm_scale.set_requires_grad(true);
  p.norm_shift.set_requires_grad(true);
  return p;
}

PgeParams PgeParams::make(std::size_t channels, std::size_t stages) {
  PgeParams p;
  for (std::size_t t = 0; t < stages; ++t) p.cbr.push_back(CbrParams::make(channels));
  p.validate(channels);
  return p;
}

void PgeParams::validate(std::size_t channels) const {
  if (cbr.empty()) throw UsageError("PGE needs at least one residual stage");
  if (!(gamma > 0.0)) throw UsageError("PGE gamma must be positive");
  if (!(delta >= 0.0)) throw UsageError("PGE delta must be non-negative");
  if (blur_ksize % 2 == 0) throw UsageError("PGE blur kernel size must be odd");
  for (const CbrParams& c : cbr) {
    c.conv.validate();
    if (c.conv.in_channels != channels || c.conv.out_channels != channels || c.conv.kernel_h != 3 ||
        c.conv.kernel_w != 3 || c.conv.stride != 1 || c.conv.padding != 1)
      throw ShapeError("CBR stage must be a " + std::to_string(channels) + "->" + std::to_string(channels) +
                       " 3x3 pad-1 conv, got weight " + shape_str(c.conv.weight.shape()));
  }
}

InnBlockParams InnBlockParams::make(std::size_t channels, std::size_t split) {
  if (split < 1 || split >= channels)
    throw UsageError("INN split must satisfy 1 <= c < C, got c=" + std::to_string(split));
  InnBlockParams b;
  b.split = split;
  b.cdc_f = ConvSpec::make(split, channels - split, 3, 3, 1, 1);
  b.cdc_g = ConvSpec::make(channels - split, split, 3, 3, 1, 1);
  return b;
}

void InnBlockParams::validate(std::size_t channels) const {
  if (split < 1 || split >= channels) throw ShapeError("INN split out of range");
  cdc_f.validate();
  cdc_g.validate();
  if (cdc_f.in_channels != split || cdc_f.out_channels != channels - split || cdc_g.in_channels != channels - split ||
      cdc_g.out_channels != split)
    throw ShapeError("INN coupling convs do not match split " + std::to_string(split) + " of " +
                     std::to_string(channels));
}

PgfeParams PgfeParams::make(const PgfeConfig& cfg) {
  PgfeParams p;
  p.stem = ConvSpec::make(cfg.in_channels, cfg.channels, 3, 3, 1, 1);
  p.pge = PgeParams::make(cfg.channels, cfg.stages);
  p.pge.gamma = cfg.gamma;
  p.pge.delta = cfg.delta;
  p.pge.blur_ksize = cfg.blur_ksize;
  p.pge.blur_sigma = cfg.blur_sigma;
  p.pge.validate(cfg.channels);
  for (std::size_t k = 0; k < cfg.inn_blocks; ++k) p.inn_blocks.push_back(InnBlockParams::make(cfg.channels, cfg.split));
  p.fuse = ConvSpec::make(cfg.channels, cfg.channels, 1, 1);
  return p;
}

void PgfeParams::init(Rng& rng) {
  stem.init_uniform(rng, std::sqrt(2.0));
  for (CbrParams& c : pge.cbr) c.conv.init_uniform(rng, 0.5);
  for (InnBlockParams& b : inn_blocks) {
    b.cdc_f.init_uniform(rng, 0.1);
    b.cdc_g.init_uniform(rng, 0.1);
  }
  fuse.init_uniform(rng, 0.5);
}

void PgfeParams::collect(ParamList& out, const std::string& prefix) const {
  collect_conv(out, prefix + ".stem", stem);
  for (std::size_t t = 0; t < pge.cbr.size(); ++t) {
    const std::string p = prefix + ".pge.cbr" + std::to_string(t);
    collect_conv(out, p + ".conv", pge.cbr[t].conv);
    out.push_back({p + ".norm_scale", pge.cbr[t].norm_scale});
    out.push_back({p + ".norm_shift", pge.cbr[t].norm_shift});
  }
  for (std::size_t k = 0; k < inn_blocks.size(); ++k) {
    const std::string p = prefix + ".dtr.inn" + std::to_string(k);
    collect_conv(out, p + ".cdc_f", inn_blocks[k].cdc_f);
    collect_conv(out, p + ".cdc_g", inn_blocks[k].cdc_g);
  }
  collect_conv(out, prefix + ".fuse", fuse);
}

std::size_t PgfeParams::enhancement_param_count() const {
  ParamList all;
  collect(all, "p");
  return count_params(all) - stem.param_count();
}

std::size_t pgfe_stem_param_count(const PgfeConfig& cfg) {
  return conv_param_count(cfg.in_channels, cfg.channels, 3, 3);
}

std::size_t pgfe_enhancement_param_count(const PgfeConfig& cfg) {
  const std::size_t C = cfg.channels, c = cfg.split;
  const std::size_t cbr = conv_param_count(C, C, 3, 3) + 2 * C;
  const std::size_t inn = conv_param_count(c, C - c, 3, 3) + conv_param_count(C - c, c, 3, 3);
  return cfg.stages * cbr + cfg.inn_blocks * inn + conv_param_count(C, C, 1, 1);
}

Tensor cbr_forward(const Tensor& x, const CbrParams& p) {
  return relu(add(mul(conv2d(x, p.conv), p.norm_scale), p.norm_shift));
}

Tensor pge_residual_chain(const Tensor& u1, const PgeParams& p) {
  if (u1.rank() != 4) throw ShapeError("pge_residual_chain: expected [N,C,H,W], got " + shape_str(u1.shape()));
  p.validate(u1.dim(1));
  Tensor v = u1;
  for (const CbrParams& stage : p.cbr) v = add(v, cbr_forward(v, stage));
  return add(u1, v);
}

Tensor contrast_enhance(const Tensor& x, double gamma) {
  Tensor m = pool_channel_descriptor(x, PoolMode::avg);
  return add(scale(sub(x, m), gamma), m);
}

Tensor edge_enhance(const Tensor& y, double delta, std::size_t ksize, double sigma) {
  return add(scale(abs(sub(y, gaussian_blur(y, ksize, sigma))), delta), y);
}

Tensor pge_branch(const Tensor& s, const PgeParams& p) {
  return edge_enhance(contrast_enhance(pge_residual_chain(s, p), p.gamma), p.delta, p.blur_ksize, p.blur_sigma);
}

namespace {

Tensor cdc(const Tensor& x, const ConvSpec& c) { return relu(conv2d(x, c)); }

template <typename Fn>
Tensor with_block_context(std::size_t block_index, const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string(what) + " block " + std::to_string(block_index) + ": " + e.what());
  }
}

void check_inn_input(const Tensor& u, const InnBlockParams& b, const char* what) {
  if (u.rank() != 4) throw ShapeError(std::string(what) + ": expected [N,C,H,W], got " + shape_str(u.shape()));
  b.validate(u.dim(1));
}

}  // namespace

Tensor inn_forward(const Tensor& u, const InnBlockParams& b, std::size_t block_index) {
  check_inn_input(u, b, "inn_forward");
  return with_block_context(block_index, "inn_forward", [&] {
    detail::ensure_finite(u.data(), "input");
    const std::size_t C = u.dim(1);
    Tensor a = slice_channels(u, 0, b.split);
    Tensor bb = slice_channels(u, b.split, C);
    Tensor b_next = add(bb, cdc(a, b.cdc_f));
    Tensor g = cdc(b_next, b.cdc_g);
    Tensor a_next = add(mul(a, exp(clamp(g, -kInnExpClamp, kInnExpClamp))), g);
    Tensor parts[] = {a_next, b_next};
    return concat_channels(parts);
  });
}

Tensor inn_inverse(const Tensor& v, const InnBlockParams& b, std::size_t block_index) {
  check_inn_input(v, b, "inn_inverse");
  return with_block_context(block_index, "inn_inverse", [&] {
    detail::ensure_finite(v.data(), "input");
    const std::size_t C = v.dim(1);
    Tensor a_next = slice_channels(v, 0, b.split);
    Tensor b_next = slice_channels(v, b.split, C);
    Tensor g = cdc(b_next, b.cdc_g);
    Tensor a = mul(sub(a_next, g), exp(scale(clamp(g, -kInnExpClamp, kInnExpClamp), -1.0)));
    Tensor bb = sub(b_next, cdc(a, b.cdc_f));
    Tensor parts[] = {a, bb};
    return concat_channels(parts);
  });
}

Tensor dtr_forward(const Tensor& s, const std::vector<InnBlockParams>& blocks) {
  Tensor u = s;
  for (std::size_t k = 0; k < blocks.size(); ++k) u = inn_forward(u, blocks[k], k);
  return u;
}

Tensor dtr_inverse(const Tensor& v, const std::vector<InnBlockParams>& blocks) {
  Tensor u = v;
  for (std::size_t k = blocks.size(); k-- > 0;) u = inn_inverse(u, blocks[k], k);
  return u;
}

Tensor pgfe_stem(const Tensor& img, const PgfeParams& p) { return relu(conv2d(img, p.stem)); }

Tensor pgfe_forward(const Tensor& img, const PgfeParams& p) {
  Tensor s = pgfe_stem(img, p);
  return conv2d(add(pge_branch(s, p.pge), dtr_forward(s, p.inn_blocks)), p.fuse);
}

PgfeParams make_preview_pgfe(const PgfeConfig& cfg) {
  if (cfg.in_channels != 3 || cfg.channels < 3) throw UsageError("preview needs RGB input and >= 3 features");
  PgfeParams p = PgfeParams::make(cfg);
  const std::size_t C = cfg.channels;
  auto w = p.stem.weight.mutable_data();
  for (std::size_t k = 0; k < C; ++k) w[((k * 3 + k % 3) * 3 + 1) * 3 + 1] = 1.0;
  auto f = p.fuse.weight.mutable_data();
  for (std::size_t o = 0; o < 3; ++o) {
    const std::size_t count = (C - o + 2) / 3;
    for (std::size_t k = o; k < C; k += 3) f[o * C + k] = 1.0 / static_cast<double>(count);
  }
  return p;
}

Tensor enhance_preview(const Tensor& img, const PgfeParams& p) {
  ConvSpec rgb = ConvSpec::make(p.fuse.in_channels, 3, 1, 1);
  const std::size_t C = p.fuse.in_channels;
  std::copy_n(p.fuse.weight.data().begin(), 3 * C, rgb.weight.mutable_data().begin());
  std::copy_n(p.fuse.bias.data().begin(), 3, rgb.bias.mutable_data().begin());
  return clamp(conv2d(pge_branch(pgfe_stem(img, p), p.pge), rgb), 0.0, 1.0);
}

}  // namespace llts
