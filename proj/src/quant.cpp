#include "faqs/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "faqs/errors.hpp"

namespace faqs::quant {

namespace {

std::uint32_t max_code(int bits) { return (std::uint32_t{1} << bits) - 1U; }

}  // namespace

bool valid_bits(int bits) { return bits == 4 || bits == 8 || bits == 16; }

double decode_code(std::uint32_t code, int bits, double w_min, double w_max) {
  const std::uint32_t top = max_code(bits);
  if (code >= top) return w_max;
  return w_min + static_cast<double>(code) / static_cast<double>(top) * (w_max - w_min);
}

Tensor QuantState::decode() const {
  Tensor out(shape, 0.0);
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = decode_code(codes[i], bits, w_min, w_max);
  return out;
}

QuantState encode(const Tensor& w, int bits) {
  if (bits < 1 || bits > kStorageBits) throw ConfigError("quantizer width must be in [1,16], got " + std::to_string(bits));
  QuantState q;
  q.shape = w.shape();
  q.bits = bits;
  const auto values = w.data();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  q.w_min = *lo;
  q.w_max = *hi;
  q.codes.assign(values.size(), 0);
  if (q.w_max == q.w_min) return q;
  const double range = q.w_max - q.w_min;
  const double top = static_cast<double>(max_code(bits));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double norm = (values[i] - q.w_min) / range;
    // std::round rounds half away from zero; norm is non-negative here.
    const double code = std::round(norm * top);
    q.codes[i] = static_cast<std::uint32_t>(std::clamp(code, 0.0, top));
  }
  return q;
}

Tensor quantize_any_width(const Tensor& w, int bits) { return encode(w, bits).decode(); }

Tensor quantize(const Tensor& w, int bits) {
  if (!valid_bits(bits)) throw ConfigError("quantization width must be one of {4,8,16}, got " + std::to_string(bits));
  return quantize_any_width(w, bits);
}

CodeBands band_decompose(const QuantState& q16) {
  if (q16.bits != kStorageBits) throw UsageError("band_decompose expects 16-bit codes");
  CodeBands b;
  b.c14.reserve(q16.codes.size());
  b.c58.reserve(q16.codes.size());
  b.c916.reserve(q16.codes.size());
  for (std::uint32_t c : q16.codes) {
    b.c14.push_back(c & 0xF000U);
    b.c58.push_back(c & 0x0F00U);
    b.c916.push_back(c & 0x00FFU);
  }
  return b;
}

BandValues band_values(const Tensor& w) {
  const QuantState q = encode(w, kStorageBits);
  BandValues bv{Tensor(w.shape()), Tensor(w.shape()), Tensor(w.shape()), Tensor(w.shape())};
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    const std::uint32_t c = q.codes[i];
    const double r4 = decode_code(truncate_code(c, 4), 4, q.w_min, q.w_max);
    const double r8 = decode_code(truncate_code(c, 8), 8, q.w_min, q.w_max);
    const double r16 = decode_code(c, 16, q.w_min, q.w_max);
    bv.v14[i] = r4;
    bv.v58[i] = r8 - r4;
    bv.v916[i] = r16 - r8;
    bv.decoded[i] = r16;
  }
  return bv;
}

Tensor apply_hard_quant(const Tensor& w, QuantChoice choice) {
  if (!valid_bits(choice.bits)) {
    throw ConfigError("quantization width must be one of {4,8,16}, got " + std::to_string(choice.bits));
  }
  const QuantState q = encode(w, kStorageBits);
  Tensor out(w.shape());
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    out[i] = decode_code(truncate_code(q.codes[i], choice.bits), choice.bits, q.w_min, q.w_max);
  }
  return out;
}

QuantChoice select_from_indicators(double id58, double id916) {
  if (id58 < 0.0) return {4};
  if (id916 < 0.0) return {8};
  return {16};
}

QuantIndicators quant_indicators(std::span<const Tensor> weights, QuantThresholds t) {
  const QuantThresholds norms = band_norm_thresholds(weights);
  return {norms.t_q58 - t.t_q58, norms.t_q916 - t.t_q916};
}

QuantChoice select_quant(std::span<const Tensor> weights, QuantThresholds t) {
  const QuantIndicators id = quant_indicators(weights, t);
  return select_from_indicators(id.id58, id.id916);
}

QuantThresholds band_norm_thresholds(std::span<const Tensor> weights) {
  QuantThresholds t;
  for (const Tensor& w : weights) {
    const BandValues bv = band_values(w);
    for (double v : bv.v58.data()) t.t_q58 += v * v;
    for (double v : bv.v916.data()) t.t_q916 += v * v;
  }
  return t;
}

BitSharing compose_bitsharing(std::span<const ad::Var> weights, const ad::Var& t_q58, const ad::Var& t_q916) {
  std::vector<BandValues> bands;
  bands.reserve(weights.size());
  double n58 = 0.0, n916 = 0.0;
  for (const ad::Var& w : weights) {
    bands.push_back(band_values(w.value()));
    for (double v : bands.back().v58.data()) n58 += v * v;
    for (double v : bands.back().v916.data()) n916 += v * v;
  }

  BitSharing out;
  out.g58 = ad::sigmoid(ad::sub(ad::scalar_constant(n58), t_q58));
  out.g916 = ad::sigmoid(ad::sub(ad::scalar_constant(n916), t_q916));
  // w_q = v14 + g58 (v58 + g916 v916), written as w* - v58 - v916 + g58 v58 + g58 g916 v916
  // so that the weight path is the straight-through identity.
  const ad::Var keep58 = ad::add_scalar(out.g58, -1.0);
  const ad::Var keep916 = ad::add_scalar(ad::mul(out.g58, out.g916), -1.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const BandValues& bv = bands[i];
    ad::Var wq = ad::straight_through(weights[i], bv.decoded);
    wq = ad::add(wq, ad::mul(keep58, ad::constant(bv.v58)));
    wq = ad::add(wq, ad::mul(keep916, ad::constant(bv.v916)));
    out.weights.push_back(std::move(wq));
  }
  return out;
}

ad::Var hard_quant_ste(const ad::Var& w, QuantChoice choice) {
  return ad::straight_through(w, apply_hard_quant(w.value(), choice));
}

}  // namespace faqs::quant
