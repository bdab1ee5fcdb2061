#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "faqs/model.hpp"
#include "faqs/superkernel.hpp"

// Masked transmission: wire messages, region-overlap aggregation and the
// communication ledger.
namespace faqs::fl {

// ---- kernel regions -------------------------------------------------------

enum class Spatial : std::uint8_t { Center3x3, Ring5x5 };
enum class Channels : std::uint8_t { FirstHalf, SecondHalf };

struct KernelRegion {
  Spatial spatial;
  Channels channels;
  friend bool operator==(KernelRegion, KernelRegion) = default;
};

std::vector<KernelRegion> region_set(nas::Block b);
// Depthwise elements inside one region.
std::size_t region_size(const nas::LayerSpec& spec, KernelRegion r);

// Shapes of the nine layer tensors (expand, dw, project, s1, b1, s2, b2, s3, b3).
std::vector<Shape> layer_tensor_shapes(const nas::LayerSpec& spec);
// Which elements of each layer tensor a block transmits. Skip selects nothing.
std::vector<std::vector<std::uint8_t>> layer_element_masks(const nas::LayerSpec& spec, nas::Block b);
std::size_t masked_count(const nas::LayerSpec& spec, nas::Block b);
// All nine tensors under the full (5,6) super kernel.
std::size_t full_layer_params(const nas::LayerSpec& spec);

// ---- wire message ---------------------------------------------------------

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::uint8_t kFixedFlag = 0x40;  // fixed block, no thresholds
inline constexpr std::uint8_t kStemTag = 0x80;
inline constexpr std::uint8_t kHeadTag = 0x81;
inline constexpr int kRawFloatBits = 32;

struct TensorPayload {
  std::uint32_t count = 0;  // transmitted elements
  std::uint8_t bits = 16;   // 4, 8, 16, or 32 for raw float32
  float w_min = 0.0f;       // only on the wire when bits < 32
  float w_max = 0.0f;
  std::vector<std::uint32_t> codes;

  friend bool operator==(const TensorPayload&, const TensorPayload&) = default;
};

struct LayerRecord {
  std::uint8_t tag = 0;  // Block value, kFixedFlag | Block, kStemTag or kHeadTag
  std::uint8_t qbits = 16;
  std::uint16_t layer_index = 0;
  std::vector<TensorPayload> tensors;
  // t_k5, t_e3, t_e6, t_q58, t_q916 for searchable records
  std::optional<std::array<float, 5>> thresholds;

  bool searchable() const { return tag < kFixedFlag; }
  bool fixed() const { return (tag & 0xC0) == kFixedFlag; }
  nas::Block block() const { return static_cast<nas::Block>(tag & 0x3F); }

  friend bool operator==(const LayerRecord&, const LayerRecord&) = default;
};

struct MaskedUpdate {
  std::uint32_t round = 0;
  std::uint16_t client_id = 0;
  std::vector<LayerRecord> records;

  friend bool operator==(const MaskedUpdate&, const MaskedUpdate&) = default;
};

// Big-endian layout:
//   header  "FAQS" | version u8 | round u32 | client u16 | record_count u16
//   record  tag u8 | qbits u8 | layer_index u16 | tensor_count u8 | tensors | [5 x f32 thresholds]
//   tensor  count u32 | bits u8 | [w_min f32 | w_max f32 if bits < 32] | codes MSB-first, byte padded
std::vector<std::uint8_t> serialize(const MaskedUpdate& m);
// Throws DeserializeError carrying the byte offset of the problem.
MaskedUpdate deserialize(std::span<const std::uint8_t> bytes);

// Bits the ledger does not count: header, record and tensor descriptors, padding.
std::uint64_t framing_bits(const MaskedUpdate& m);

// ---- client side ----------------------------------------------------------

// Block and bit width from the current indicators; conv weights at qbits,
// affine tensors at 16 bits, thresholds as float32.
LayerRecord masked_sample(const nas::SuperKernelLayer& layer, std::uint16_t index);
LayerRecord fixed_record(const nas::SuperKernelLayer& layer, std::uint16_t index, nas::Block block, int bits);
LayerRecord plain_record(std::uint8_t tag, std::span<const Tensor* const> tensors, int bits);

MaskedUpdate build_update(const Network& net, std::uint16_t client, std::uint32_t round);
// FedAvg baseline: every layer a fixed block, raw float32, no thresholds.
MaskedUpdate build_fixed_update(const Network& net, std::uint16_t client, std::uint32_t round, nas::Block block,
                                int bits = kRawFloatBits);

// ---- server side ----------------------------------------------------------

struct DecodedTensor {
  Tensor values;                      // zero where absent
  std::vector<std::uint8_t> present;  // element mask
};

struct DecodedRecord {
  std::uint8_t tag = 0;
  std::uint8_t qbits = 16;
  std::uint16_t layer_index = 0;
  std::vector<DecodedTensor> tensors;
  std::optional<std::array<float, 5>> thresholds;
};

struct DecodedUpdate {
  std::uint32_t round = 0;
  std::uint16_t client_id = 0;
  std::vector<DecodedRecord> records;
};

// Checks the message against the layer plan. Throws ProtocolError.
DecodedUpdate decode(const MaskedUpdate& m, const ModelPlan& plan);

// Element-wise mean over exactly the clients that transmitted each element.
// Each client gets back only its own selection; thresholds are echoed.
std::vector<DecodedUpdate> aggregate(std::span<const DecodedUpdate> updates);

// Quantizes an aggregated result for the pull at the widths of the client's
// upload. Bounds cover the upload bounds and the new values, so values a
// client alone contributed come back bit-identical.
MaskedUpdate encode_pull(const DecodedUpdate& aggregated, const MaskedUpdate& upload);

// Writes every transmitted element into the network; thresholds stay local.
void install(Network& net, const DecodedUpdate& pull);

// ---- ledger ---------------------------------------------------------------

enum class Direction : std::uint8_t { Upload, Pull };
std::string direction_name(Direction d);

inline constexpr int kStemLayer = -1;

struct LedgerEntry {
  std::uint32_t round = 0;
  std::uint16_t client = 0;
  int layer = 0;  // kStemLayer, 0..L-1, or L for the head
  Direction direction = Direction::Upload;
  std::uint64_t n_params = 0;
  int bits_per_param = 0;
  double gamma = 0.0;
  std::uint64_t bits_total = 0;
};

class CommLedger {
 public:
  // One entry per (record, bit width): payload elements at their width,
  // bounds and thresholds at 32. Returns the bits recorded.
  std::uint64_t record(const MaskedUpdate& m, Direction d, const ModelPlan& plan);
  void append(const LedgerEntry& e);

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::uint64_t total() const;
  std::uint64_t round_total(std::uint32_t round) const;
  std::uint64_t bits_for(std::uint32_t round, std::uint16_t client, Direction d) const;
  std::uint32_t max_round() const;

  void write_csv(std::ostream& out, std::size_t layer_count) const;

 private:
  std::vector<LedgerEntry> entries_;
};

// Exact integer total over all rounds, or a single round.
std::uint64_t comm_cost(const CommLedger& ledger, std::optional<std::uint32_t> round = std::nullopt);

// 1 KB = 1000 bytes.
double bits_to_kb(double bits);
// Both directions of one block: 2 * gamma * N * Q bits.
double block_comm_bits(double gamma, double n_params, double q_bits);

// Weight count of all four candidate paths stored side by side.
std::uint64_t multipath_params(const nas::LayerSpec& spec);

// Analytic multi-path ledger: every client moves every candidate path of
// every layer at an additive width, both directions, each round.
CommLedger multipath_ledger(const ModelPlan& plan, std::size_t clients, std::size_t rounds, int q_bits);

}  // namespace faqs::fl
