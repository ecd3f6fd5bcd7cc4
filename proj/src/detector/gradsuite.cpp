#include "llts/gradsuite.hpp"

#include <algorithm>

#include "llts/detector.hpp"
#include "llts/errors.hpp"
#include "llts/gradcheck.hpp"
#include "llts/rng.hpp"

namespace llts {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

void randomize(Rng& rng, ConvSpec& c, double scale) {
  for (double& v : c.weight.mutable_data()) v = rng.uniform(-scale, scale);
  for (double& v : c.bias.mutable_data()) v = rng.uniform(-scale, scale);
}

// sum(y * w) with fixed random w, so that no gradient path cancels by symmetry.
struct Probe {
  std::vector<double> w;
  Tensor operator()(const Tensor& y) {
    if (w.size() != y.numel()) {
      Rng rng(w.size() + 17, 3);
      w.resize(y.numel());
      for (double& v : w) v = rng.uniform(-1, 1);
    }
    return weighted_sum(y, w);
  }
};

void push_conv(std::vector<Tensor>& leaves, const ConvSpec& c) {
  leaves.push_back(c.weight);
  leaves.push_back(c.bias);
}

class Suite {
 public:
  Suite(std::uint64_t seed, std::vector<GradSuiteResult>& out) : seed_(seed), out_(out) {}

  template <typename F>
  void check(const std::string& module, const std::string& op, F&& f, std::vector<Tensor> leaves,
             std::size_t max_coords = 0) {
    GradCheckReport r = grad_check_leaves(std::forward<F>(f), std::move(leaves), 1e-6, max_coords, seed_);
    out_.push_back({module, op, seed_, r.max_rel_error, r.coords_checked, r.kinks});
  }

  void tensorops() {
    Rng rng(seed_, 1);
    Tensor x = random_tensor(rng, {2, 3, 7, 7});
    ConvSpec c = ConvSpec::make(3, 4, 3, 3, 2, 1);
    randomize(rng, c, 0.5);
    Probe p;
    check("tensorops", "conv2d", [&] { return p(conv2d(x, c)); }, {x, c.weight, c.bias});
    Tensor u = random_tensor(rng, {1, 2, 4, 5});
    check("tensorops", "bilinear_upsample", [&] { return p(bilinear_upsample(u, 9, 11)); }, {u});
    Tensor b = random_tensor(rng, {1, 2, 7, 8});
    check("tensorops", "gaussian_blur", [&] { return p(gaussian_blur(b, 5, 1.0)); }, {b});
  }

  void pgfe() {
    Rng rng(seed_, 2);
    PgeParams pge = PgeParams::make(4, 2);
    std::vector<Tensor> chain_leaves;
    for (CbrParams& s : pge.cbr) {
      randomize(rng, s.conv, 0.3);
      for (double& v : s.norm_scale.mutable_data()) v = rng.uniform(0.5, 1.5);
      for (double& v : s.norm_shift.mutable_data()) v = rng.uniform(-0.2, 0.2);
      push_conv(chain_leaves, s.conv);
      chain_leaves.push_back(s.norm_scale);
      chain_leaves.push_back(s.norm_shift);
    }
    Tensor u1 = random_tensor(rng, {2, 4, 5, 6});
    chain_leaves.push_back(u1);
    Probe p;
    check("pgfe", "pge_residual_chain", [&] { return p(pge_residual_chain(u1, pge)); }, chain_leaves);

    Tensor x = random_tensor(rng, {2, 3, 5, 5}, 0, 1);
    check("pgfe", "contrast_enhance", [&] { return p(contrast_enhance(x, 2.0)); }, {x});
    Tensor y = random_tensor(rng, {1, 3, 7, 7}, 0, 1);
    check("pgfe", "edge_enhance", [&] { return p(edge_enhance(y, 2.5, 5, 1.0)); }, {y});

    PgfeConfig cfg;
    cfg.channels = 4;
    cfg.split = 2;
    cfg.stages = 2;
    cfg.inn_blocks = 2;
    PgfeParams params = PgfeParams::make(cfg);
    Rng init(seed_, 3);
    params.init(init);
    ParamList named;
    params.collect(named, "pgfe");
    std::vector<Tensor> leaves;
    for (auto& n : named) {
      if (n.name.ends_with("bias") || n.name.ends_with("shift"))
        for (double& v : n.tensor.mutable_data()) v = rng.uniform(-0.1, 0.1);
      leaves.push_back(n.tensor);
    }
    Tensor img = random_tensor(rng, {1, 3, 12, 12}, 0, 1);
    leaves.push_back(img);
    check("pgfe", "pgfe_forward", [&] { return p(pgfe_forward(img, params)); }, leaves);
  }

  void mfia() {
    Rng rng(seed_, 4);
    Branches f;
    std::vector<Tensor> branch_leaves;
    for (Tensor& t : f) {
      t = random_tensor(rng, {2, 8, 5, 5});
      branch_leaves.push_back(t);
    }
    Probe p;
    CamParams cp = CamParams::make(8, 4);
    randomize(rng, cp.reduce, 0.5);
    randomize(rng, cp.expand, 0.5);
    auto leaves = branch_leaves;
    push_conv(leaves, cp.reduce);
    push_conv(leaves, cp.expand);
    check("mfia", "cam", [&] { return p(cam(f, cp)); }, leaves);

    SamParams sp = SamParams::make();
    randomize(rng, sp.conv7, 0.3);
    leaves = branch_leaves;
    push_conv(leaves, sp.conv7);
    check("mfia", "sam", [&] { return p(sam(f, sp)); }, leaves);

    MfiaParams mp = MfiaParams::make(8, seed_ % 4);
    for (ConvSpec* c : {&mp.cam1.reduce, &mp.cam1.expand, &mp.cam2.reduce, &mp.cam2.expand}) randomize(rng, *c, 0.5);
    randomize(rng, mp.sam.conv7, 0.3);
    leaves = branch_leaves;
    ParamList named;
    mp.collect(named, "mfia");
    for (auto& n : named) leaves.push_back(n.tensor);
    check("mfia", "mfia_forward", [&] { return p(mfia_forward(f, mp)); }, leaves);
  }

  void detector() {
    ModelConfig c;
    c.input_size = 64;
    c.num_classes = 2;
    c.stem_channels = 4;
    c.pgfe_stages = 1;
    c.inn_blocks = 1;
    c.backbone_widths = {4, 6, 8, 8};
    c.branch_channels = 4;
    c.head_channels = 4;
    c.cam_ratio = 2;
    DetectorModel m = make_model(c, seed_);
    Rng rng(seed_, 5);
    std::vector<Tensor> leaves;
    for (auto& n : m.params()) {
      if (n.name.ends_with("bias") || n.name.ends_with("shift"))
        for (double& v : n.tensor.mutable_data()) v += rng.uniform(-0.1, 0.1);
      leaves.push_back(n.tensor);
    }
    Tensor x = random_tensor(rng, {1, 3, 64, 64}, 0, 1);
    std::vector<std::vector<LabelRecord>> labels(1);
    for (int i = 0; i < 3; ++i) {
      const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
      labels[0].push_back({rng.uniform_int(0, 1), rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h});
    }
    TargetMap t = assign_targets(labels, 16, kHeadStride);
    check("detector", "full_model_64", [&] { return detection_loss(model_forward(m, x), t).total; }, leaves, 4);
  }

 private:
  std::uint64_t seed_;
  std::vector<GradSuiteResult>& out_;
};

}  // namespace

const std::vector<std::string>& grad_suite_modules() {
  static const std::vector<std::string> names{"tensorops", "pgfe", "mfia", "detector"};
  return names;
}

std::vector<GradSuiteResult> run_grad_suite(const std::string& scope, std::size_t seeds) {
  const auto& names = grad_suite_modules();
  if (scope != "all" && std::find(names.begin(), names.end(), scope) == names.end())
    throw UsageError("unknown gradcheck scope '" + scope + "' (all, tensorops, pgfe, mfia, detector)");
  std::vector<GradSuiteResult> out;
  for (const std::string& name : names) {
    if (scope != "all" && scope != name) continue;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
      Suite s(seed, out);
      if (name == "tensorops") s.tensorops();
      else if (name == "pgfe") s.pgfe();
      else if (name == "mfia") s.mfia();
      else s.detector();
    }
  }
  return out;
}

}  // namespace llts
