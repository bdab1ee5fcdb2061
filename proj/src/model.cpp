#include "faqs/model.hpp"

#include <cmath>
#include <string>

#include "faqs/errors.hpp"

namespace faqs {

void ModelPlan::validate() const {
  if (image_channels == 0 || image_size == 0 || stem_channels == 0) {
    throw ConfigError("image_channels, image_size and stem_channels must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (layers.empty()) throw ConfigError("layer plan needs at least one searchable layer");
  std::size_t c = stem_channels;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.c_in != c) {
      throw ConfigError("layer " + std::to_string(i) + ": c_in " + std::to_string(l.c_in) +
                        " does not match previous width " + std::to_string(c));
    }
    if (l.c_out == 0) throw ConfigError("layer " + std::to_string(i) + ": c_out must be positive");
    if (l.stride != 1 && l.stride != 2) throw ConfigError("layer " + std::to_string(i) + ": stride must be 1 or 2");
    c = l.c_out;
  }
}

std::vector<std::size_t> ModelPlan::output_sizes() const {
  std::vector<std::size_t> out;
  std::size_t s = image_size;
  for (const auto& l : layers) {
    s = (s + static_cast<std::size_t>(l.stride) - 1) / static_cast<std::size_t>(l.stride);
    out.push_back(s);
  }
  return out;
}

Network::Network(const ModelPlan& plan) : plan_(plan) {}

Network::Network(const ModelPlan& plan, std::mt19937_64& rng) : plan_(plan) {
  plan_.validate();
  auto init = [&rng](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return ad::parameter(std::move(t));
  };
  stem_w = init(Shape{plan_.stem_channels, plan_.image_channels, 1, 1},
                std::sqrt(2.0 / static_cast<double>(plan_.image_channels)));
  stem_scale = ad::parameter(Tensor(Shape{plan_.stem_channels}, 1.0));
  stem_shift = ad::parameter(Tensor(Shape{plan_.stem_channels}, 0.0));
  layers_.reserve(plan_.layers.size());
  for (const auto& spec : plan_.layers) layers_.emplace_back(spec, rng);
  const std::size_t features = plan_.layers.back().c_out;
  head_w = init(Shape{plan_.num_classes, features}, std::sqrt(1.0 / static_cast<double>(features)));
  head_b = ad::parameter(Tensor(Shape{plan_.num_classes}, 0.0));
}

Network Network::clone() const {
  Network copy(plan_);
  copy.stem_w = ad::parameter(stem_w.value());
  copy.stem_scale = ad::parameter(stem_scale.value());
  copy.stem_shift = ad::parameter(stem_shift.value());
  for (const auto& l : layers_) copy.layers_.push_back(l.clone());
  copy.head_w = ad::parameter(head_w.value());
  copy.head_b = ad::parameter(head_b.value());
  return copy;
}

ad::Var Network::stem(const ad::Var& images) const {
  return ad::relu6(ad::affine_channel(ad::conv2d_pointwise(images, stem_w), stem_scale, stem_shift));
}

ad::Var Network::head(const ad::Var& features) const {
  return ad::dense(ad::global_avg_pool(features), head_w, head_b);
}

SoftForward Network::forward_soft(const ad::Var& images, bool quantize) const {
  SoftForward out;
  ad::Var h = stem(images);
  for (const auto& layer : layers_) {
    auto r = layer.forward_soft(h, quantize);
    h = r.y;
    out.gates.push_back(std::move(r.gates));
  }
  out.logits = head(h);
  return out;
}

ad::Var Network::forward_fixed(const ad::Var& images, std::span<const nas::Block> arch,
                               std::span<const quant::QuantChoice> bits) const {
  if (arch.size() != layers_.size()) throw ConfigError("architecture length does not match the layer plan");
  if (!bits.empty() && bits.size() != layers_.size()) {
    throw ConfigError("quantization policy length does not match the layer plan");
  }
  ad::Var h = stem(images);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::optional<quant::QuantChoice> q;
    if (!bits.empty()) q = bits[i];
    h = layers_[i].forward_fixed(h, arch[i], q);
  }
  return head(h);
}

std::vector<nas::Block> Network::select_architecture() const {
  std::vector<nas::Block> arch;
  for (const auto& l : layers_) arch.push_back(l.select_block(true));
  return arch;
}

std::vector<quant::QuantChoice> Network::select_quantization() const {
  std::vector<quant::QuantChoice> q;
  for (const auto& l : layers_) q.push_back(l.select_quant());
  return q;
}

std::vector<ad::Var*> Network::weight_params() {
  std::vector<ad::Var*> out{&stem_w, &stem_scale, &stem_shift};
  for (auto& l : layers_) {
    for (ad::Var* v : l.weights()) out.push_back(v);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<ad::Var*> Network::threshold_params() {
  std::vector<ad::Var*> out;
  for (auto& l : layers_) {
    for (ad::Var* v : l.thresholds()) out.push_back(v);
  }
  return out;
}

}  // namespace faqs
