#include "faqs/superkernel.hpp"

#include <cmath>

#include "faqs/errors.hpp"

namespace faqs::nas {

int kernel_size(Block b) {
  switch (b) {
    case Block::K3E3:
    case Block::K3E6:
      return 3;
    case Block::K5E3:
    case Block::K5E6:
      return 5;
    case Block::Skip:
      return 0;
  }
  return 0;
}

int expansion_ratio(Block b) {
  switch (b) {
    case Block::K3E3:
    case Block::K5E3:
      return 3;
    case Block::K3E6:
    case Block::K5E6:
      return 6;
    case Block::Skip:
      return 0;
  }
  return 0;
}

Block make_block(int kernel, int ratio) {
  if (kernel == 3 && ratio == 3) return Block::K3E3;
  if (kernel == 3 && ratio == 6) return Block::K3E6;
  if (kernel == 5 && ratio == 3) return Block::K5E3;
  if (kernel == 5 && ratio == 6) return Block::K5E6;
  throw ConfigError("no block with kernel " + std::to_string(kernel) + " and ratio " + std::to_string(ratio));
}

std::string block_name(Block b) {
  if (b == Block::Skip) return "skip";
  return std::to_string(kernel_size(b)) + "x" + std::to_string(kernel_size(b)) + "/" +
         std::to_string(expansion_ratio(b));
}

std::optional<Block> block_from_tag(std::uint8_t tag) {
  if (tag > static_cast<std::uint8_t>(Block::K5E6)) return std::nullopt;
  return static_cast<Block>(tag);
}

namespace {

bool in_center(std::size_t i, std::size_t j) { return i >= 1 && i <= 3 && j >= 1 && j <= 3; }

std::shared_ptr<const Tensor> dw_mask(const LayerSpec& s, bool want_center, bool want_ring, bool first,
                                      bool second) {
  Tensor m(Shape{s.c_max(), kSuperKernel, kSuperKernel}, 0.0);
  for (std::size_t c = 0; c < s.c_max(); ++c) {
    const bool chan = c < s.c_half() ? first : second;
    if (!chan) continue;
    for (std::size_t i = 0; i < kSuperKernel; ++i) {
      for (std::size_t j = 0; j < kSuperKernel; ++j) {
        const bool center = in_center(i, j);
        if ((center && want_center) || (!center && want_ring)) {
          m[(c * kSuperKernel + i) * kSuperKernel + j] = 1.0;
        }
      }
    }
  }
  return std::make_shared<const Tensor>(std::move(m));
}

}  // namespace

LayerMasks LayerMasks::build(const LayerSpec& s) {
  LayerMasks m;
  m.dw_center = dw_mask(s, true, false, true, true);
  m.dw_ring = dw_mask(s, false, true, true, true);
  m.dw_first = dw_mask(s, true, true, true, false);
  m.dw_second = dw_mask(s, true, true, false, true);

  Tensor ef(Shape{s.c_max(), s.c_in, 1, 1}, 0.0), es(Shape{s.c_max(), s.c_in, 1, 1}, 0.0);
  for (std::size_t o = 0; o < s.c_max(); ++o) {
    for (std::size_t c = 0; c < s.c_in; ++c) (o < s.c_half() ? ef : es)[o * s.c_in + c] = 1.0;
  }
  Tensor pf(Shape{s.c_out, s.c_max(), 1, 1}, 0.0), ps(Shape{s.c_out, s.c_max(), 1, 1}, 0.0);
  for (std::size_t o = 0; o < s.c_out; ++o) {
    for (std::size_t c = 0; c < s.c_max(); ++c) (c < s.c_half() ? pf : ps)[o * s.c_max() + c] = 1.0;
  }
  m.expand_first = std::make_shared<const Tensor>(std::move(ef));
  m.expand_second = std::make_shared<const Tensor>(std::move(es));
  m.project_first = std::make_shared<const Tensor>(std::move(pf));
  m.project_second = std::make_shared<const Tensor>(std::move(ps));
  return m;
}

Tensor depthwise_block_mask(const LayerSpec& spec, Block b) {
  if (b == Block::Skip) return Tensor(Shape{spec.c_max(), kSuperKernel, kSuperKernel}, 0.0);
  const bool ring = kernel_size(b) == 5;
  const bool second = expansion_ratio(b) == 6;
  return *dw_mask(spec, true, ring, true, second);
}

ad::Var id_indicator(const ad::Var& group, const ad::Var& threshold) {
  return ad::sub(ad::squared_l2(group), threshold);
}

KernelShape compose_kernel_shape(const ad::Var& dw, const ad::Var& t_k5, const LayerMasks& masks) {
  const ad::Var center = ad::mask(dw, masks.dw_center);
  const ad::Var ring = ad::mask(dw, masks.dw_ring);
  KernelShape out;
  out.id_k5 = id_indicator(ring, t_k5);
  out.g_k5 = ad::sigmoid(out.id_k5);
  out.w_k = ad::add(center, ad::mul(out.g_k5, ring));
  return out;
}

Expansion compose_expansion(const ad::Var& w_k, const ad::Var& t_e3, const ad::Var& t_e6, const LayerMasks& masks,
                            bool skip_capable) {
  const ad::Var first = ad::mask(w_k, masks.dw_first);
  const ad::Var second = ad::mask(w_k, masks.dw_second);
  Expansion out;
  out.id_e3 = id_indicator(first, t_e3);
  out.id_e6 = id_indicator(first, t_e6);
  out.g_e3 = skip_capable ? ad::sigmoid(out.id_e3) : ad::scalar_constant(1.0);
  out.g_e6 = ad::sigmoid(out.id_e6);
  out.w_hat = ad::mul(out.g_e3, ad::add(first, ad::mul(out.g_e6, second)));
  return out;
}

Block select_from_indicators(const ArchIndicators& ids, bool skip_capable) {
  if (skip_capable && ids.id_e3 < 0.0) return Block::Skip;
  const int ratio = ids.id_e6 < 0.0 ? 3 : 6;
  const int kernel = ids.id_k5 < 0.0 ? 3 : 5;
  return make_block(kernel, ratio);
}

SuperKernelLayer::SuperKernelLayer(const LayerSpec& spec, std::mt19937_64& rng) : SuperKernelLayer(spec) {
  if (spec.c_in == 0 || spec.c_out == 0) throw ConfigError("layer channel counts must be positive");
  if (spec.stride != 1 && spec.stride != 2) throw ConfigError("layer stride must be 1 or 2");
  const std::size_t cmax = spec.c_max();
  auto init = [&rng](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return ad::parameter(std::move(t));
  };
  expand_w = init(Shape{cmax, spec.c_in, 1, 1}, std::sqrt(2.0 / static_cast<double>(spec.c_in)));
  dw_w = init(Shape{cmax, kSuperKernel, kSuperKernel}, std::sqrt(2.0 / 9.0));
  project_w = init(Shape{spec.c_out, cmax, 1, 1}, std::sqrt(1.0 / static_cast<double>(cmax)));
  scale1 = ad::parameter(Tensor(Shape{cmax}, 1.0));
  shift1 = ad::parameter(Tensor(Shape{cmax}, 0.0));
  scale2 = ad::parameter(Tensor(Shape{cmax}, 1.0));
  shift2 = ad::parameter(Tensor(Shape{cmax}, 0.0));
  scale3 = ad::parameter(Tensor(Shape{spec.c_out}, 1.0));
  shift3 = ad::parameter(Tensor(Shape{spec.c_out}, 0.0));
  t_k5 = ad::parameter(Tensor::scalar(0.0));
  t_e3 = ad::parameter(Tensor::scalar(0.0));
  t_e6 = ad::parameter(Tensor::scalar(0.0));
  t_q58 = ad::parameter(Tensor::scalar(0.0));
  t_q916 = ad::parameter(Tensor::scalar(0.0));
  init_thresholds(true);
}

SuperKernelLayer::SuperKernelLayer(const LayerSpec& spec) : spec_(spec), masks_(LayerMasks::build(spec)) {}

SuperKernelLayer SuperKernelLayer::clone() const {
  SuperKernelLayer copy(spec_);
  copy.masks_ = masks_;
  auto dst_w = copy.weights();
  const auto src_w = weights();
  for (std::size_t i = 0; i < dst_w.size(); ++i) *dst_w[i] = ad::parameter(src_w[i]->value());
  copy.t_k5 = ad::parameter(t_k5.value());
  copy.t_e3 = ad::parameter(t_e3.value());
  copy.t_e6 = ad::parameter(t_e6.value());
  copy.t_q58 = ad::parameter(t_q58.value());
  copy.t_q916 = ad::parameter(t_q916.value());
  return copy;
}

ad::Var SuperKernelLayer::gate_channels(const ad::Var& w, const std::shared_ptr<const Tensor>& first,
                                        const std::shared_ptr<const Tensor>& second, const ad::Var& g_e3,
                                        const ad::Var& g_e6) const {
  return ad::mul(g_e3, ad::add(ad::mask(w, first), ad::mul(g_e6, ad::mask(w, second))));
}

ad::Var SuperKernelLayer::run_block(const ad::Var& x, const ad::Var& e, const ad::Var& d, const ad::Var& p,
                                    const ad::Var& shift) const {
  if (x.value().rank() != 4 || x.shape()[1] != spec_.c_in) {
    throw DimensionError("super-kernel layer: axis 'channels' of input " + shape_str(x.shape()) + " must be " +
                         std::to_string(spec_.c_in));
  }
  ad::Var h = ad::relu6(ad::affine_channel(ad::conv2d_pointwise(x, e), scale1, shift1));
  h = ad::relu6(ad::affine_channel(ad::conv2d_depthwise(h, d, spec_.stride), scale2, shift2));
  h = ad::affine_channel(ad::conv2d_pointwise(h, p), scale3, shift);
  if (spec_.skip_capable()) h = ad::add(h, x);
  return h;
}

Gates SuperKernelLayer::compose_gates(bool quantize, ArchIndicators* ids) const {
  ad::Var d = dw_w;
  Gates g;
  if (quantize) {
    const std::vector<ad::Var> ws{expand_w, dw_w, project_w};
    quant::BitSharing bs = quant::compose_bitsharing(ws, t_q58, t_q916);
    d = bs.weights[1];
    g.g58 = bs.g58;
    g.g916 = bs.g916;
  }
  const KernelShape ks = compose_kernel_shape(d, t_k5, masks_);
  const Expansion ex = compose_expansion(ks.w_k, t_e3, t_e6, masks_, spec_.skip_capable());
  g.g_k5 = ks.g_k5;
  g.g_e3 = ex.g_e3;
  g.g_e6 = ex.g_e6;
  if (ids) *ids = {ex.id_e3.value().item(), ex.id_e6.value().item(), ks.id_k5.value().item()};
  return g;
}

SuperKernelLayer::SoftOutput SuperKernelLayer::forward_soft(const ad::Var& x, bool quantize) const {
  ad::Var e = expand_w, d = dw_w, p = project_w;
  SoftOutput out;
  if (quantize) {
    const std::vector<ad::Var> ws{expand_w, dw_w, project_w};
    quant::BitSharing bs = quant::compose_bitsharing(ws, t_q58, t_q916);
    e = bs.weights[0];
    d = bs.weights[1];
    p = bs.weights[2];
    out.gates.g58 = bs.g58;
    out.gates.g916 = bs.g916;
  }
  const KernelShape ks = compose_kernel_shape(d, t_k5, masks_);
  const Expansion ex = compose_expansion(ks.w_k, t_e3, t_e6, masks_, spec_.skip_capable());
  out.gates.g_k5 = ks.g_k5;
  out.gates.g_e3 = ex.g_e3;
  out.gates.g_e6 = ex.g_e6;
  out.ids = {ex.id_e3.value().item(), ex.id_e6.value().item(), ks.id_k5.value().item()};

  const ad::Var e_hat = gate_channels(e, masks_.expand_first, masks_.expand_second, ex.g_e3, ex.g_e6);
  const ad::Var p_hat = gate_channels(p, masks_.project_first, masks_.project_second, ex.g_e3, ex.g_e6);
  // A skipped block contributes nothing, so the projection shift is gated too.
  const ad::Var s3 = ad::mul(ex.g_e3, shift3);
  out.y = run_block(x, e_hat, ex.w_hat, p_hat, s3);
  return out;
}

ad::Var SuperKernelLayer::forward_fixed(const ad::Var& x, Block block, std::optional<quant::QuantChoice> q) const {
  if (block == Block::Skip) {
    if (!spec_.skip_capable()) throw ConfigError("skip selected on a layer without a residual path");
    if (x.value().rank() != 4 || x.shape()[1] != spec_.c_in) {
      throw DimensionError("super-kernel layer: axis 'channels' of input " + shape_str(x.shape()) + " must be " +
                           std::to_string(spec_.c_in));
    }
    return x;
  }
  ad::Var e = expand_w, d = dw_w, p = project_w;
  if (q) {
    e = quant::hard_quant_ste(e, *q);
    d = quant::hard_quant_ste(d, *q);
    p = quant::hard_quant_ste(p, *q);
  }
  const bool six = expansion_ratio(block) == 6;
  auto dmask = std::make_shared<const Tensor>(depthwise_block_mask(spec_, block));
  d = ad::mask(d, dmask);
  if (!six) {
    e = ad::mask(e, masks_.expand_first);
    p = ad::mask(p, masks_.project_first);
  }
  return run_block(x, e, d, p, shift3);
}

Block SuperKernelLayer::select_block(bool quantize) const {
  ArchIndicators ids;
  compose_gates(quantize, &ids);
  return select_from_indicators(ids, spec_.skip_capable());
}

quant::QuantThresholds SuperKernelLayer::quant_thresholds() const {
  return {t_q58.value().item(), t_q916.value().item()};
}

quant::QuantChoice SuperKernelLayer::select_quant() const {
  const std::vector<Tensor> ws{expand_w.value(), dw_w.value(), project_w.value()};
  return quant::select_quant(ws, quant_thresholds());
}

void SuperKernelLayer::init_thresholds(bool quantize) {
  ad::Var d = dw_w;
  if (quantize) {
    const std::vector<Tensor> ws{expand_w.value(), dw_w.value(), project_w.value()};
    const quant::QuantThresholds t = quant::band_norm_thresholds(ws);
    t_q58.mutable_value()[0] = t.t_q58;
    t_q916.mutable_value()[0] = t.t_q916;
    const std::vector<ad::Var> vs{expand_w, dw_w, project_w};
    d = quant::compose_bitsharing(vs, t_q58, t_q916).weights[1];
  }
  t_k5.mutable_value()[0] = ad::squared_l2(ad::mask(d, masks_.dw_ring)).value().item();
  const KernelShape ks = compose_kernel_shape(d, t_k5, masks_);
  const double first = ad::squared_l2(ad::mask(ks.w_k, masks_.dw_first)).value().item();
  t_e3.mutable_value()[0] = first;
  t_e6.mutable_value()[0] = first;
}

std::vector<ad::Var*> SuperKernelLayer::weights() {
  return {&expand_w, &dw_w, &project_w, &scale1, &shift1, &scale2, &shift2, &scale3, &shift3};
}

std::vector<const ad::Var*> SuperKernelLayer::weights() const {
  return {&expand_w, &dw_w, &project_w, &scale1, &shift1, &scale2, &shift2, &scale3, &shift3};
}

std::vector<ad::Var*> SuperKernelLayer::thresholds() { return {&t_k5, &t_e3, &t_e6, &t_q58, &t_q916}; }

}  // namespace faqs::nas
