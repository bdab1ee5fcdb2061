#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "faqs/autodiff.hpp"
#include "faqs/model.hpp"
#include "faqs/superkernel.hpp"

// Differentiable latency / model-size proxies and the per-client Pareto loss.
namespace faqs::hw {

struct ParetoCoefficients {
  double alpha = 1.0;  // cross-entropy
  double beta = 0.0;   // latency
  double gamma = 0.0;  // model size

  // Throws ConfigError unless all are >= 0 and they sum to 1 within 1e-9.
  void validate() const;
};

struct CostEntry {
  double latency_ms = 0.0;
  std::uint64_t param_count = 0;
};

// Per-layer costs of the four non-skip blocks. Skip costs nothing.
class CostTable {
 public:
  CostTable() = default;
  explicit CostTable(std::vector<std::array<CostEntry, 4>> rows);

  // Latency proportional to k^2 * e * C_in * H_out * W_out; exact weight counts.
  static CostTable synthetic(const ModelPlan& plan);
  // Rows of "layer kernel ratio latency_ms param_count"; '#' starts a comment.
  static CostTable load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t layer_count() const { return rows_.size(); }
  // Throws ConfigError naming the layer when it is not covered.
  const CostEntry& at(std::size_t layer, nas::Block b) const;
  double latency(std::size_t layer, nas::Block b) const;
  std::uint64_t params(std::size_t layer, nas::Block b) const;

  // Positive entries and (5,6) >= (3,3) on both metrics, per layer.
  void validate() const;

 private:
  std::vector<std::array<CostEntry, 4>> rows_;  // K3E3, K3E6, K5E3, K5E6
};

// Exact weight count of the expand, depthwise and project convolutions.
std::uint64_t block_param_count(const nas::LayerSpec& spec, int kernel, int ratio);

struct Normalizers {
  double lat0 = 1.0;  // sum of (5,6) latencies
  double ms0 = 1.0;   // sum of (5,6) sizes at 16 bits, bytes
};
Normalizers full_architecture_costs(const CostTable& table);

// E[bits] = 4 + 4 g58 + 8 g58 g916; 16 when quantization gates are absent.
ad::Var expected_bits(const nas::Gates& g);

ad::Var expected_latency(std::span<const nas::Gates> gates, const CostTable& table);
// Bytes.
ad::Var expected_model_size(std::span<const nas::Gates> gates, const CostTable& table);

double architecture_latency(std::span<const nas::Block> arch, const CostTable& table);
double architecture_model_size(std::span<const nas::Block> arch, std::span<const quant::QuantChoice> bits,
                               const CostTable& table);

// L = alpha ce + beta lat / lat0 + gamma ms / ms0
ad::Var pareto_loss(const ad::Var& ce, const ad::Var& lat, const ad::Var& ms, const ParetoCoefficients& coeff,
                    const Normalizers& norm);

}  // namespace faqs::hw
