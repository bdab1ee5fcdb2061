#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "faqs/autodiff.hpp"
#include "faqs/tensor.hpp"

// Bit-sharing weight quantization.
//
// Every weight tensor is stored as one 16-bit uniform code per element. The
// 4- and 8-bit policies are the top nibble / top byte of that code, decoded on
// their own b-bit lattice, so all three widths share one storage space.
namespace faqs::quant {

inline constexpr int kStorageBits = 16;

struct QuantChoice {
  int bits = 16;  // 4, 8 or 16
  friend bool operator==(QuantChoice, QuantChoice) = default;
};

struct QuantThresholds {
  double t_q58 = 0.0;
  double t_q916 = 0.0;
};

// Codes plus the normalization bounds of one tensor.
struct QuantState {
  Shape shape;
  std::vector<std::uint32_t> codes;
  double w_min = 0.0;
  double w_max = 0.0;
  int bits = kStorageBits;

  Tensor decode() const;
};

bool valid_bits(int bits);

// Uniform min/max quantizer with round-half-away-from-zero. Accepts any width
// in [1, 16]; `quantize` restricts to the searchable set.
QuantState encode(const Tensor& w, int bits);
Tensor quantize(const Tensor& w, int bits);
Tensor quantize_any_width(const Tensor& w, int bits);

// Value of a b-bit code on the [w_min, w_max] lattice.
double decode_code(std::uint32_t code, int bits, double w_min, double w_max);

// Top `bits` of a 16-bit code, as a `bits`-wide integer.
inline std::uint32_t truncate_code(std::uint32_t code16, int bits) { return code16 >> (kStorageBits - bits); }

struct CodeBands {
  std::vector<std::uint32_t> c14;   // mask 0xF000
  std::vector<std::uint32_t> c58;   // mask 0x0F00
  std::vector<std::uint32_t> c916;  // mask 0x00FF
};

CodeBands band_decompose(const QuantState& q16);

// Real-valued contribution of each bit band. v14 is the 4-bit reconstruction
// (offset included), v14 + v58 the 8-bit one, and v14 + v58 + v916 the 16-bit
// one, so the three always sum to the decoded 16-bit tensor.
struct BandValues {
  Tensor v14;
  Tensor v58;
  Tensor v916;
  Tensor decoded;  // 16-bit reconstruction, exactly quantize(w, 16)
};

BandValues band_values(const Tensor& w);

Tensor apply_hard_quant(const Tensor& w, QuantChoice choice);

// (id58, id916): (+,+) -> 16, (+,-) -> 8, (-,*) -> 4. Zero counts as +.
QuantChoice select_from_indicators(double id58, double id916);

// Indicators over the joint band norms of a layer's weight tensors.
struct QuantIndicators {
  double id58 = 0.0;
  double id916 = 0.0;
};
QuantIndicators quant_indicators(std::span<const Tensor> weights, QuantThresholds t);
QuantChoice select_quant(std::span<const Tensor> weights, QuantThresholds t);

// Band norms used to initialize thresholds so that both gates start at 0.5.
QuantThresholds band_norm_thresholds(std::span<const Tensor> weights);

// Soft bit-sharing composition of several tensors sharing one pair of gates.
// Rounding is straight-through for the weights; the gates carry exact
// gradients to the thresholds.
struct BitSharing {
  std::vector<ad::Var> weights;
  ad::Var g58;
  ad::Var g916;
};

BitSharing compose_bitsharing(std::span<const ad::Var> weights, const ad::Var& t_q58, const ad::Var& t_q916);

// Forward: apply_hard_quant at the fixed choice; backward: identity.
ad::Var hard_quant_ste(const ad::Var& w, QuantChoice choice);

}  // namespace faqs::quant
