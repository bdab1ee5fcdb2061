#pragma once

// Test-only helpers that push a layer's thresholds far past its current
// indicator values so every gate saturates toward a chosen selection.

#include <optional>

#include "faqs/superkernel.hpp"

namespace faqs::testing {

inline void saturate_quant(nas::SuperKernelLayer& layer, quant::QuantChoice q, double margin = 60.0) {
  const std::vector<Tensor> ws{layer.expand_w.value(), layer.dw_w.value(), layer.project_w.value()};
  const quant::QuantThresholds n = quant::band_norm_thresholds(ws);
  layer.t_q58.mutable_value()[0] = n.t_q58 + (q.bits >= 8 ? -margin : margin);
  layer.t_q916.mutable_value()[0] = n.t_q916 + (q.bits == 16 ? -margin : margin);
}

// Arch thresholds: the ring norm is fixed once quantization gates are set,
// and the first-half norm depends on the ring gate, so set k5 first.
inline void saturate_arch(nas::SuperKernelLayer& layer, nas::Block b, bool quantize, double margin = 60.0) {
  const bool skip = b == nas::Block::Skip;
  const int k = skip ? 5 : nas::kernel_size(b);
  const int e = skip ? 6 : nas::expansion_ratio(b);
  nas::ArchIndicators ids;
  layer.compose_gates(quantize, &ids);
  const double ring = layer.t_k5.value().item() + ids.id_k5;
  layer.t_k5.mutable_value()[0] = ring + (k == 5 ? -margin : margin);
  layer.compose_gates(quantize, &ids);
  const double first3 = layer.t_e3.value().item() + ids.id_e3;
  const double first6 = layer.t_e6.value().item() + ids.id_e6;
  layer.t_e3.mutable_value()[0] = first3 + (skip ? margin : -margin);
  layer.t_e6.mutable_value()[0] = first6 + (e == 6 ? -margin : margin);
}

}  // namespace faqs::testing
