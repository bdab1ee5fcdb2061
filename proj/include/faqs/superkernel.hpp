#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "faqs/autodiff.hpp"
#include "faqs/quant.hpp"

namespace faqs::nas {

inline constexpr std::size_t kSuperKernel = 5;
inline constexpr std::size_t kMaxExpansion = 6;

// Discrete block of one searchable layer. Values double as wire tags.
enum class Block : std::uint8_t { Skip = 0, K3E3 = 1, K3E6 = 2, K5E3 = 3, K5E6 = 4 };

int kernel_size(Block b);      // 0 for Skip
int expansion_ratio(Block b);  // 0 for Skip
Block make_block(int kernel, int ratio);
std::string block_name(Block b);
std::optional<Block> block_from_tag(std::uint8_t tag);

struct LayerSpec {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  int stride = 1;

  std::size_t c_max() const { return c_in * kMaxExpansion; }
  std::size_t c_half() const { return c_in * kMaxExpansion / 2; }
  // Only stride-1, equal-width layers carry a residual and may be skipped.
  bool skip_capable() const { return stride == 1 && c_in == c_out; }
};

// Fixed 0/1 masks over the super kernel and the pointwise weights.
struct LayerMasks {
  std::shared_ptr<const Tensor> dw_center;      // [Cmax,5,5] 3x3 core
  std::shared_ptr<const Tensor> dw_ring;        // [Cmax,5,5] 5x5 minus 3x3
  std::shared_ptr<const Tensor> dw_first;       // channels [0, Cmax/2)
  std::shared_ptr<const Tensor> dw_second;      // channels [Cmax/2, Cmax)
  std::shared_ptr<const Tensor> expand_first;   // output channels of expand
  std::shared_ptr<const Tensor> expand_second;
  std::shared_ptr<const Tensor> project_first;  // input channels of project
  std::shared_ptr<const Tensor> project_second;

  static LayerMasks build(const LayerSpec& spec);
};

// Hard presence mask of the depthwise kernel for a discrete block.
Tensor depthwise_block_mask(const LayerSpec& spec, Block b);

ad::Var id_indicator(const ad::Var& group, const ad::Var& threshold);

struct KernelShape {
  ad::Var w_k;
  ad::Var g_k5;
  ad::Var id_k5;
};

// w_k = w33 + sigmoid(id(ring, t_k5)) * ring
KernelShape compose_kernel_shape(const ad::Var& dw, const ad::Var& t_k5, const LayerMasks& masks);

struct Expansion {
  ad::Var w_hat;
  ad::Var g_e3;
  ad::Var g_e6;
  ad::Var id_e3;
  ad::Var id_e6;
};

// g_e3 gates the whole kernel (skip), g_e6 the second channel half (ratio 6
// vs 3). Both indicators read the first channel half of w_k. When the layer
// cannot skip, g_e3 is the constant 1.
Expansion compose_expansion(const ad::Var& w_k, const ad::Var& t_e3, const ad::Var& t_e6, const LayerMasks& masks,
                            bool skip_capable);

struct ArchIndicators {
  double id_e3 = 0.0;
  double id_e6 = 0.0;
  double id_k5 = 0.0;
};

// (+,+,+) -> (5,6), (+,+,-) -> (3,6), (+,-,+) -> (5,3), (+,-,-) -> (3,3), (-,*,*) -> skip.
// Zero counts as positive; id_e3 is ignored for layers that cannot skip.
Block select_from_indicators(const ArchIndicators& ids, bool skip_capable);

struct Gates {
  ad::Var g_k5;
  ad::Var g_e3;
  ad::Var g_e6;
  ad::Var g58;  // invalid when quantization is off
  ad::Var g916;
};

class SuperKernelLayer {
 public:
  SuperKernelLayer(const LayerSpec& spec, std::mt19937_64& rng);

  // Parameters are shared handles; copies must go through clone().
  SuperKernelLayer(const SuperKernelLayer&) = delete;
  SuperKernelLayer& operator=(const SuperKernelLayer&) = delete;
  SuperKernelLayer(SuperKernelLayer&&) = default;
  SuperKernelLayer& operator=(SuperKernelLayer&&) = default;

  SuperKernelLayer clone() const;

  const LayerSpec& spec() const { return spec_; }
  const LayerMasks& masks() const { return masks_; }

  struct SoftOutput {
    ad::Var y;
    Gates gates;
    ArchIndicators ids;
  };

  // Search-time forward: bit-sharing quantization (if enabled), then
  // super-kernel composition, then expand -> depthwise -> project.
  SoftOutput forward_soft(const ad::Var& x, bool quantize) const;

  // Discrete forward for a fixed block and optional fixed bit width
  // (straight-through quantization).
  ad::Var forward_fixed(const ad::Var& x, Block block, std::optional<quant::QuantChoice> q) const;

  // Composition only, on the current values.
  Gates compose_gates(bool quantize, ArchIndicators* ids = nullptr) const;

  Block select_block(bool quantize = true) const;
  quant::QuantChoice select_quant() const;
  quant::QuantThresholds quant_thresholds() const;

  // Sets every threshold to the squared norm of its group so each gate is 0.5.
  void init_thresholds(bool quantize);

  std::vector<ad::Var*> weights();
  std::vector<ad::Var*> thresholds();
  std::vector<const ad::Var*> weights() const;

  // Order: expand, depthwise, project, s1, b1, s2, b2, s3, b3.
  static constexpr std::size_t kTensorCount = 9;

  ad::Var expand_w;   // [Cmax, Cin, 1, 1]
  ad::Var dw_w;       // [Cmax, 5, 5]
  ad::Var project_w;  // [Cout, Cmax, 1, 1]
  ad::Var scale1, shift1, scale2, shift2, scale3, shift3;
  ad::Var t_k5, t_e3, t_e6, t_q58, t_q916;

 private:
  explicit SuperKernelLayer(const LayerSpec& spec);

  ad::Var run_block(const ad::Var& x, const ad::Var& e, const ad::Var& d, const ad::Var& p,
                    const ad::Var& shift) const;
  ad::Var gate_channels(const ad::Var& w, const std::shared_ptr<const Tensor>& first,
                        const std::shared_ptr<const Tensor>& second, const ad::Var& g_e3,
                        const ad::Var& g_e6) const;

  LayerSpec spec_;
  LayerMasks masks_;
};

}  // namespace faqs::nas
