#include "faqs/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "faqs/errors.hpp"
#include "faqs/rng.hpp"

namespace faqs::data {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("'" + path + "' is truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be [N,C,H,W], got " + shape_str(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw DataError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                    " labels");
  }
  if (num_classes < 2) throw DataError("dataset needs at least 2 classes");
  std::vector<std::size_t> count(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++count[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (count[c] == 0) throw DataError("class " + std::to_string(c) + " has no samples");
  }
  if (!images.all_finite()) throw DataError("dataset contains non-finite pixel values");
}

Tensor Dataset::gather_images(std::span<const std::size_t> idx) const {
  const std::size_t per = channels() * height() * width();
  Tensor out(Shape{idx.size(), channels(), height(), width()});
  const auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

Dataset make_synthetic(const SyntheticSpec& s) {
  if (s.num_classes < 2 || s.samples_per_class == 0 || s.channels == 0 || s.height == 0 || s.width == 0) {
    throw ConfigError("synthetic data needs >= 2 classes and positive sizes");
  }
  if (!(s.noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const std::size_t K = s.num_classes, C = s.channels, H = s.height, W = s.width;
  const std::size_t per = C * H * W;

  std::vector<double> templ(K * per);
  const double sigma_blob = static_cast<double>(std::max(H, W)) / 4.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double phase = static_cast<double>(k) / static_cast<double>(K);
    // blob centre walks around a circle, one position per class
    const double cy = (static_cast<double>(H) - 1.0) * (0.5 + 0.25 * std::sin(kTwoPi * phase));
    const double cx = (static_cast<double>(W) - 1.0) * (0.5 + 0.25 * std::cos(kTwoPi * phase));
    const double fx = 1.0 + static_cast<double>(k % 3), fy = static_cast<double>(k % 2);
    for (std::size_t c = 0; c < C; ++c) {
      const double colour = std::cos(kTwoPi * (phase + static_cast<double>(c) / static_cast<double>(C)));
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          const double dy = static_cast<double>(h) - cy, dx = static_cast<double>(w) - cx;
          const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_blob * sigma_blob));
          const double grating = std::sin(kTwoPi * (fx * static_cast<double>(w) / static_cast<double>(W) +
                                                    fy * static_cast<double>(h) / static_cast<double>(H)) +
                                          static_cast<double>(c) * std::numbers::pi / 3.0);
          templ[k * per + (c * H + h) * W + w] = colour * blob + 0.5 * grating;
        }
      }
    }
  }

  Dataset ds;
  ds.num_classes = K;
  ds.images = Tensor(Shape{K * s.samples_per_class, C, H, W});
  ds.labels.reserve(K * s.samples_per_class);
  std::mt19937_64 rng(derive_seed(s.seed, 0xDA7A));
  std::normal_distribution<double> noise(0.0, 1.0);
  auto px = ds.images.data();
  std::size_t n = 0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < s.samples_per_class; ++i, ++n) {
      for (std::size_t j = 0; j < per; ++j) px[n * per + j] = templ[k * per + j] + s.noise_sigma * noise(rng);
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

Partition lda_partition(const Dataset& ds, const PartitionSpec& spec) {
  if (spec.num_clients == 0) throw ConfigError("partition needs at least one client");
  if (!(spec.lda_alpha > 0.0) || !std::isfinite(spec.lda_alpha)) throw ConfigError("lda_alpha must be positive");
  const std::size_t need = std::max<std::size_t>(spec.min_samples, 1);
  if (spec.num_clients * need > ds.size()) {
    throw ConfigError("cannot give " + std::to_string(spec.num_clients) + " clients " + std::to_string(need) +
                      " samples each from " + std::to_string(ds.size()));
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::mt19937_64 rng(derive_seed(spec.seed, 0x1DA));
  std::gamma_distribution<double> gamma(spec.lda_alpha, 1.0);
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Partition parts(spec.num_clients);
    for (auto cls : by_class) {
      std::shuffle(cls.begin(), cls.end(), rng);
      std::vector<double> p(spec.num_clients);
      double total = 0.0;
      for (double& v : p) total += (v = gamma(rng));
      if (!(total > 0.0)) {
        // every draw underflowed; hand the class to one client
        std::fill(p.begin(), p.end(), 0.0);
        p[rng() % spec.num_clients] = 1.0;
        total = 1.0;
      }
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t c = 0; c < spec.num_clients; ++c) {
        cum += p[c] / total;
        const std::size_t end =
            c + 1 == spec.num_clients ? cls.size()
                                      : std::min(cls.size(), static_cast<std::size_t>(cum * static_cast<double>(cls.size())));
        for (std::size_t i = begin; i < std::max(begin, end); ++i) parts[c].push_back(cls[i]);
        begin = std::max(begin, end);
      }
    }
    const bool ok = std::all_of(parts.begin(), parts.end(), [&](const auto& v) { return v.size() >= need; });
    if (ok) return parts;
  }
  throw ConfigError("lda partition: no draw gave every client " + std::to_string(need) + " samples after " +
                    std::to_string(kMaxAttempts) + " attempts; raise lda_alpha or the dataset size");
}

Partition equalize(Partition parts, std::uint64_t seed) {
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (const auto& p : parts) m = std::min(m, p.size());
  for (std::size_t c = 0; c < parts.size(); ++c) {
    std::mt19937_64 rng(derive_seed(seed, 0xE0 + c));
    std::shuffle(parts[c].begin(), parts[c].end(), rng);
    parts[c].resize(m);
  }
  return parts;
}

Split holdout_split(std::vector<std::size_t> idx, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must be in (0, 1]");
  std::mt19937_64 rng(derive_seed(seed, 0x5917));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(idx.size())));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, idx.size())));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(s.train.size()), idx.end());
  return s;
}

void save_binary(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (std::size_t v : {ds.size(), ds.channels(), ds.height(), ds.width(), ds.num_classes}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (double v : ds.images.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  for (int y : ds.labels) put_u32(out, static_cast<std::uint32_t>(y));
}

Dataset load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  std::uint32_t hdr[5];
  for (auto& h : hdr) h = get_u32(in, path);
  for (int i = 0; i < 4; ++i) {
    if (hdr[i] == 0) throw DataError("'" + path + "': zero dimension in header");
  }
  Dataset ds;
  ds.num_classes = hdr[4];
  ds.images = Tensor(Shape{hdr[0], hdr[1], hdr[2], hdr[3]});
  for (double& v : ds.images.data()) v = static_cast<double>(std::bit_cast<float>(get_u32(in, path)));
  ds.labels.resize(hdr[0]);
  for (int& y : ds.labels) y = static_cast<int>(get_u32(in, path));
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("'" + path + "' has trailing bytes");
  ds.validate();
  return ds;
}

std::vector<double> label_distribution(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<double> p(ds.num_classes, 0.0);
  for (std::size_t i : idx) p[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  if (!idx.empty()) {
    for (double& v : p) v /= static_cast<double>(idx.size());
  }
  return p;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace faqs::data
