#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "faqs/autodiff.hpp"
#include "faqs/superkernel.hpp"

namespace faqs {

// Stem (1x1 conv + affine + relu6) -> searchable layers -> global pool -> dense head.
struct ModelPlan {
  std::size_t image_channels = 3;
  std::size_t image_size = 16;
  std::size_t stem_channels = 8;
  std::size_t num_classes = 3;
  std::vector<nas::LayerSpec> layers;

  // Throws ConfigError when the channel chain or strides are inconsistent.
  void validate() const;
  // Spatial side length of each searchable layer's output.
  std::vector<std::size_t> output_sizes() const;
};

struct SoftForward {
  ad::Var logits;
  std::vector<nas::Gates> gates;
};

class Network {
 public:
  Network(const ModelPlan& plan, std::mt19937_64& rng);

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Network clone() const;

  const ModelPlan& plan() const { return plan_; }
  std::vector<nas::SuperKernelLayer>& layers() { return layers_; }
  const std::vector<nas::SuperKernelLayer>& layers() const { return layers_; }

  SoftForward forward_soft(const ad::Var& images, bool quantize) const;
  ad::Var forward_fixed(const ad::Var& images, std::span<const nas::Block> arch,
                        std::span<const quant::QuantChoice> bits) const;

  std::vector<nas::Block> select_architecture() const;
  std::vector<quant::QuantChoice> select_quantization() const;

  // Every trainable weight (not thresholds), in a fixed order.
  std::vector<ad::Var*> weight_params();
  std::vector<ad::Var*> threshold_params();

  // Stem: weight, scale, shift. Head: weight, bias.
  std::vector<ad::Var*> stem_params() { return {&stem_w, &stem_scale, &stem_shift}; }
  std::vector<ad::Var*> head_params() { return {&head_w, &head_b}; }
  std::vector<const ad::Var*> stem_params() const { return {&stem_w, &stem_scale, &stem_shift}; }
  std::vector<const ad::Var*> head_params() const { return {&head_w, &head_b}; }

  ad::Var stem_w, stem_scale, stem_shift;
  ad::Var head_w, head_b;

 private:
  explicit Network(const ModelPlan& plan);
  ad::Var stem(const ad::Var& images) const;
  ad::Var head(const ad::Var& features) const;

  ModelPlan plan_;
  std::vector<nas::SuperKernelLayer> layers_;
};

}  // namespace faqs
