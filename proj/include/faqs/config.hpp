#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "faqs/data.hpp"
#include "faqs/hw_proxy.hpp"
#include "faqs/model.hpp"

namespace faqs {

struct RunConfig {
  std::size_t rounds = 30;
  std::size_t local_epochs = 1;
  std::size_t clients = 8;
  std::size_t batch_size = 16;
  std::optional<std::size_t> finetune_epochs;  // default 5 * local_epochs
  double lr_w = 0.05;
  double lr_t = 0.05;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool quantize = true;  // bit-sharing quantization during search
  std::string cost_table;  // empty: synthetic table from the layer plan

  // Data: synthetic unless dataset_path names a binary import.
  data::SyntheticSpec data;
  std::string dataset_path;
  double lda_alpha = 0.5;
  std::size_t min_samples = 10;
  bool equalize = true;  // trim shards to the smallest so the unweighted mean is fair
  double train_fraction = 0.9;

  ModelPlan plan;
  nas::Block baseline_block = nas::Block::K3E6;

  std::vector<hw::ParetoCoefficients> profiles;  // one per client

  std::size_t finetune() const { return finetune_epochs.value_or(5 * local_epochs); }

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Flat "key = value" lines, '#' comments, and "[client N]" sections holding
// that client's alpha/beta/gamma. Top-level alpha/beta/gamma are the default
// profile. Layers: "layers = cin:cout:stride, ...".
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

// Canonical text form; parse_config(write_config(c)) == c field for field.
std::string write_config(const RunConfig& c);

}  // namespace faqs
