#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faqs/tensor.hpp"

namespace faqs::data {

struct Dataset {
  Tensor images;            // [N, C, H, W]
  std::vector<int> labels;  // N entries in [0, num_classes)
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  // Throws DataError on shape/label inconsistencies or an empty class.
  void validate() const;

  // Gathers samples (in the given order) into a contiguous batch.
  Tensor gather_images(std::span<const std::size_t> idx) const;
  std::vector<int> gather_labels(std::span<const std::size_t> idx) const;
};

struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t samples_per_class = 100;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;
};

// Each class is a coloured Gaussian blob at a class-specific position plus a
// class-specific sinusoidal grating; samples add i.i.d. Gaussian pixel noise.
// Samples are ordered class by class.
Dataset make_synthetic(const SyntheticSpec& spec);

struct PartitionSpec {
  std::size_t num_clients = 1;
  double lda_alpha = 0.2;
  std::uint64_t seed = 0;
  std::size_t min_samples = 1;  // rejection threshold per client
};

using Partition = std::vector<std::vector<std::size_t>>;

// Per-class Dirichlet(alpha) proportions across clients; proportions are
// redrawn until every client holds at least min_samples indices.
Partition lda_partition(const Dataset& ds, const PartitionSpec& spec);

// Shuffles each client's indices and trims every client to the smallest count.
Partition equalize(Partition parts, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
// Deterministic shuffle, then the first ceil(train_fraction * n) go to train.
Split holdout_split(std::vector<std::size_t> idx, double train_fraction, std::uint64_t seed);

// Little-endian u32 header {N, C, H, W, num_classes}, N*C*H*W float32 pixel
// values, then N int32 labels.
void save_binary(const Dataset& ds, const std::string& path);
Dataset load_binary(const std::string& path);

// Label histogram of a subset, normalized to sum 1.
std::vector<double> label_distribution(const Dataset& ds, std::span<const std::size_t> idx);
double entropy(std::span<const double> p);

}  // namespace faqs::data
