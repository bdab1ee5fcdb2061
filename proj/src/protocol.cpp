#include "faqs/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "faqs/errors.hpp"

namespace faqs::fl {

namespace {

using nas::Block;

constexpr std::size_t kHeaderBytes = 4 + 1 + 4 + 2 + 2;
constexpr std::size_t kRecordBytes = 1 + 1 + 2 + 1;
constexpr std::size_t kTensorBytes = 4 + 1;

bool in_center(std::size_t i, std::size_t j) { return i >= 1 && i <= 3 && j >= 1 && j <= 3; }

bool valid_wire_bits(int b) { return b == 4 || b == 8 || b == 16 || b == kRawFloatBits; }

float round_down(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
  return f;
}

float round_up(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) < v) f = std::nextafter(f, std::numeric_limits<float>::infinity());
  return f;
}

std::uint32_t max_code(int bits) { return (std::uint32_t{1} << bits) - 1U; }

std::uint32_t code_for(double v, int bits, double lo, double hi) {
  if (hi <= lo) return 0;
  const double top = static_cast<double>(max_code(bits));
  const double c = std::round((v - lo) / (hi - lo) * top);
  return static_cast<std::uint32_t>(std::clamp(c, 0.0, top));
}

double decode_value(const TensorPayload& p, std::uint32_t code) {
  if (p.bits == kRawFloatBits) return static_cast<double>(std::bit_cast<float>(code));
  return quant::decode_code(code, p.bits, p.w_min, p.w_max);
}

// Upload encoding: 16-bit codes on the full tensor's (float-widened) bounds,
// truncated to the top `bits`, or raw float32.
TensorPayload encode_upload(const Tensor& w, const std::vector<std::uint8_t>& mask, int bits) {
  TensorPayload p;
  p.bits = static_cast<std::uint8_t>(bits);
  const auto vals = w.data();
  if (bits < kRawFloatBits) {
    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
    p.w_min = round_down(*lo);
    p.w_max = round_up(*hi);
  }
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!mask[i]) continue;
    if (bits == kRawFloatBits) {
      p.codes.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(vals[i])));
    } else {
      const std::uint32_t c16 = code_for(vals[i], quant::kStorageBits, p.w_min, p.w_max);
      p.codes.push_back(quant::truncate_code(c16, bits));
    }
  }
  p.count = static_cast<std::uint32_t>(p.codes.size());
  return p;
}

std::vector<std::uint8_t> all_present(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// ---- byte IO ----

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void codes(const std::vector<std::uint32_t>& codes, int bits) {
    std::uint64_t acc = 0;
    int filled = 0;
    for (std::uint32_t c : codes) {
      acc = (acc << bits) | c;
      filled += bits;
      while (filled >= 8) {
        filled -= 8;
        u8(static_cast<std::uint8_t>(acc >> filled));
      }
      acc &= (std::uint64_t{1} << filled) - 1;
    }
    if (filled > 0) u8(static_cast<std::uint8_t>(acc << (8 - filled)));
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t hi = u8();
    return static_cast<std::uint16_t>(hi << 8 | u8());
  }
  std::uint32_t u32() {
    const std::uint32_t hi = u16();
    return hi << 16 | u16();
  }
  float f32() { return std::bit_cast<float>(u32()); }

  std::vector<std::uint32_t> codes(std::uint32_t count, int bits) {
    const std::uint64_t nbits = static_cast<std::uint64_t>(count) * static_cast<std::uint64_t>(bits);
    const std::size_t nbytes = static_cast<std::size_t>((nbits + 7) / 8);
    need(nbytes);
    std::vector<std::uint32_t> out;
    out.reserve(count);
    std::uint64_t acc = 0;
    int filled = 0;
    std::size_t p = pos_;
    for (std::uint32_t i = 0; i < count; ++i) {
      while (filled < bits) {
        acc = (acc << 8) | b_[p++];
        filled += 8;
      }
      filled -= bits;
      out.push_back(static_cast<std::uint32_t>((acc >> filled) & ((std::uint64_t{1} << bits) - 1)));
      acc &= (std::uint64_t{1} << filled) - 1;
    }
    if (acc != 0) throw DeserializeError("non-zero padding bits", pos_ + nbytes - 1);
    pos_ += nbytes;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw DeserializeError("message truncated", pos_);
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::vector<Shape> stem_shapes(const ModelPlan& p) {
  return {{p.stem_channels, p.image_channels, 1, 1}, {p.stem_channels}, {p.stem_channels}};
}

std::vector<Shape> head_shapes(const ModelPlan& p) {
  return {{p.num_classes, p.layers.back().c_out}, {p.num_classes}};
}

std::size_t shapes_numel(const std::vector<Shape>& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += shape_numel(s);
  return n;
}

struct RecordLayout {
  std::vector<Shape> shapes;
  std::vector<std::vector<std::uint8_t>> masks;
  std::size_t gamma_base = 1;
  int ledger_layer = 0;
};

RecordLayout layout_of(const LayerRecord& r, const ModelPlan& plan) {
  RecordLayout l;
  if (r.tag == kStemTag || r.tag == kHeadTag) {
    l.shapes = r.tag == kStemTag ? stem_shapes(plan) : head_shapes(plan);
    for (const auto& s : l.shapes) l.masks.push_back(all_present(shape_numel(s)));
    l.gamma_base = shapes_numel(l.shapes);
    l.ledger_layer = r.tag == kStemTag ? kStemLayer : static_cast<int>(plan.layers.size());
    return l;
  }
  const std::uint8_t kind = r.tag & 0xC0;
  if ((kind != 0 && kind != kFixedFlag) || !nas::block_from_tag(r.tag & 0x3F)) {
    throw ProtocolError("unknown record tag " + std::to_string(r.tag));
  }
  if (r.layer_index >= plan.layers.size()) {
    throw ProtocolError("record names layer " + std::to_string(r.layer_index) + " but the plan has " +
                        std::to_string(plan.layers.size()));
  }
  const auto& spec = plan.layers[r.layer_index];
  const Block b = r.block();
  if (b == Block::Skip && !spec.skip_capable()) {
    throw ProtocolError("layer " + std::to_string(r.layer_index) + " cannot be skipped");
  }
  if (b != Block::Skip) {
    l.shapes = layer_tensor_shapes(spec);
    l.masks = layer_element_masks(spec, b);
  }
  l.gamma_base = r.searchable() ? full_layer_params(spec) : masked_count(spec, b);
  l.ledger_layer = r.layer_index;
  return l;
}

}  // namespace

// ---- regions ----

std::vector<KernelRegion> region_set(Block b) {
  using enum Spatial;
  using enum Channels;
  switch (b) {
    case Block::Skip:
      return {};
    case Block::K3E3:
      return {{Center3x3, FirstHalf}};
    case Block::K3E6:
      return {{Center3x3, FirstHalf}, {Center3x3, SecondHalf}};
    case Block::K5E3:
      return {{Center3x3, FirstHalf}, {Ring5x5, FirstHalf}};
    case Block::K5E6:
      return {{Center3x3, FirstHalf}, {Center3x3, SecondHalf}, {Ring5x5, FirstHalf}, {Ring5x5, SecondHalf}};
  }
  return {};
}

std::size_t region_size(const nas::LayerSpec& spec, KernelRegion r) {
  return spec.c_half() * (r.spatial == Spatial::Center3x3 ? 9 : 16);
}

std::vector<Shape> layer_tensor_shapes(const nas::LayerSpec& s) {
  const std::size_t m = s.c_max();
  return {{m, s.c_in, 1, 1}, {m, nas::kSuperKernel, nas::kSuperKernel}, {s.c_out, m, 1, 1}, {m}, {m}, {m}, {m},
          {s.c_out},         {s.c_out}};
}

std::vector<std::vector<std::uint8_t>> layer_element_masks(const nas::LayerSpec& s, Block b) {
  const auto shapes = layer_tensor_shapes(s);
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& sh : shapes) masks.emplace_back(shape_numel(sh), 0);
  if (b == Block::Skip) return masks;
  const std::size_t m = s.c_max();
  const std::size_t used = nas::expansion_ratio(b) == 6 ? m : s.c_half();
  const bool ring = nas::kernel_size(b) == 5;
  for (std::size_t c = 0; c < used; ++c) {
    for (std::size_t k = 0; k < s.c_in; ++k) masks[0][c * s.c_in + k] = 1;
    for (std::size_t i = 0; i < nas::kSuperKernel; ++i) {
      for (std::size_t j = 0; j < nas::kSuperKernel; ++j) {
        if (ring || in_center(i, j)) masks[1][(c * nas::kSuperKernel + i) * nas::kSuperKernel + j] = 1;
      }
    }
    for (std::size_t o = 0; o < s.c_out; ++o) masks[2][o * m + c] = 1;
    for (int t = 3; t < 7; ++t) masks[t][c] = 1;
  }
  std::fill(masks[7].begin(), masks[7].end(), 1);
  std::fill(masks[8].begin(), masks[8].end(), 1);
  return masks;
}

std::size_t masked_count(const nas::LayerSpec& spec, Block b) {
  std::size_t n = 0;
  for (const auto& m : layer_element_masks(spec, b)) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
  return n;
}

std::size_t full_layer_params(const nas::LayerSpec& spec) { return shapes_numel(layer_tensor_shapes(spec)); }

// ---- serialization ----

std::vector<std::uint8_t> serialize(const MaskedUpdate& m) {
  if (m.records.size() > 0xFFFF) throw ProtocolError("too many records");
  Writer w;
  for (char c : {'F', 'A', 'Q', 'S'}) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kWireVersion);
  w.u32(m.round);
  w.u16(m.client_id);
  w.u16(static_cast<std::uint16_t>(m.records.size()));
  for (const auto& r : m.records) {
    if (r.tensors.size() > 0xFF) throw ProtocolError("too many tensors in a record");
    if (r.searchable() != r.thresholds.has_value()) {
      throw ProtocolError("thresholds must accompany exactly the searchable records");
    }
    w.u8(r.tag);
    w.u8(r.qbits);
    w.u16(r.layer_index);
    w.u8(static_cast<std::uint8_t>(r.tensors.size()));
    for (const auto& t : r.tensors) {
      if (!valid_wire_bits(t.bits)) throw ProtocolError("invalid payload width " + std::to_string(t.bits));
      if (t.count != t.codes.size()) throw ProtocolError("payload count does not match its codes");
      w.u32(t.count);
      w.u8(t.bits);
      if (t.bits < kRawFloatBits) {
        w.f32(t.w_min);
        w.f32(t.w_max);
        for (std::uint32_t c : t.codes) {
          if (c > max_code(t.bits)) throw ProtocolError("code does not fit in " + std::to_string(t.bits) + " bits");
        }
      }
      w.codes(t.codes, t.bits);
    }
    if (r.thresholds) {
      for (float v : *r.thresholds) w.f32(v);
    }
  }
  return w.take();
}

MaskedUpdate deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (char c : {'F', 'A', 'Q', 'S'}) {
    const std::size_t at = r.offset();
    if (r.u8() != static_cast<std::uint8_t>(c)) throw DeserializeError("bad magic", at);
  }
  {
    const std::size_t at = r.offset();
    const std::uint8_t v = r.u8();
    if (v != kWireVersion) throw DeserializeError("unsupported version " + std::to_string(v), at);
  }
  MaskedUpdate m;
  m.round = r.u32();
  m.client_id = r.u16();
  const std::uint16_t n = r.u16();
  m.records.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) {
    LayerRecord rec;
    const std::size_t tag_at = r.offset();
    rec.tag = r.u8();
    const bool plain = rec.tag == kStemTag || rec.tag == kHeadTag;
    if (!plain && (((rec.tag & 0xC0) != 0 && (rec.tag & 0xC0) != kFixedFlag) || !nas::block_from_tag(rec.tag & 0x3F))) {
      throw DeserializeError("unknown record tag " + std::to_string(rec.tag), tag_at);
    }
    const std::size_t q_at = r.offset();
    rec.qbits = r.u8();
    if (!valid_wire_bits(rec.qbits)) throw DeserializeError("invalid width " + std::to_string(rec.qbits), q_at);
    rec.layer_index = r.u16();
    const std::uint8_t nt = r.u8();
    for (std::uint8_t t = 0; t < nt; ++t) {
      TensorPayload p;
      p.count = r.u32();
      const std::size_t b_at = r.offset();
      p.bits = r.u8();
      if (!valid_wire_bits(p.bits)) throw DeserializeError("invalid width " + std::to_string(p.bits), b_at);
      if (p.bits < kRawFloatBits) {
        const std::size_t at = r.offset();
        p.w_min = r.f32();
        p.w_max = r.f32();
        if (!std::isfinite(p.w_min) || !std::isfinite(p.w_max) || p.w_min > p.w_max) {
          throw DeserializeError("invalid quantization bounds", at);
        }
      }
      p.codes = r.codes(p.count, p.bits);
      rec.tensors.push_back(std::move(p));
    }
    if (rec.searchable()) {
      std::array<float, 5> th;
      for (float& v : th) v = r.f32();
      rec.thresholds = th;
    }
    m.records.push_back(std::move(rec));
  }
  if (!r.done()) throw DeserializeError("trailing bytes", r.offset());
  return m;
}

std::uint64_t framing_bits(const MaskedUpdate& m) {
  std::uint64_t bits = 8 * kHeaderBytes;
  for (const auto& r : m.records) {
    bits += 8 * kRecordBytes;
    for (const auto& t : r.tensors) {
      bits += 8 * kTensorBytes;
      const std::uint64_t payload = static_cast<std::uint64_t>(t.count) * t.bits;
      bits += (8 - payload % 8) % 8;
    }
  }
  return bits;
}

// ---- client side ----

LayerRecord fixed_record(const nas::SuperKernelLayer& layer, std::uint16_t index, Block block, int bits) {
  if (!valid_wire_bits(bits)) throw ConfigError("invalid payload width " + std::to_string(bits));
  LayerRecord r;
  r.tag = static_cast<std::uint8_t>(kFixedFlag | static_cast<std::uint8_t>(block));
  r.qbits = static_cast<std::uint8_t>(bits);
  r.layer_index = index;
  const auto masks = layer_element_masks(layer.spec(), block);
  const auto ws = layer.weights();
  for (std::size_t t = 0; t < ws.size(); ++t) r.tensors.push_back(encode_upload(ws[t]->value(), masks[t], bits));
  return r;
}

LayerRecord masked_sample(const nas::SuperKernelLayer& layer, std::uint16_t index) {
  LayerRecord r;
  const Block b = layer.select_block(true);
  const quant::QuantChoice q = layer.select_quant();
  r.tag = static_cast<std::uint8_t>(b);
  r.qbits = static_cast<std::uint8_t>(q.bits);
  r.layer_index = index;
  if (b != Block::Skip) {
    const auto masks = layer_element_masks(layer.spec(), b);
    const auto ws = layer.weights();
    for (std::size_t t = 0; t < ws.size(); ++t) {
      r.tensors.push_back(encode_upload(ws[t]->value(), masks[t], t < 3 ? q.bits : quant::kStorageBits));
    }
  }
  r.thresholds = std::array<float, 5>{static_cast<float>(layer.t_k5.value().item()),
                                      static_cast<float>(layer.t_e3.value().item()),
                                      static_cast<float>(layer.t_e6.value().item()),
                                      static_cast<float>(layer.t_q58.value().item()),
                                      static_cast<float>(layer.t_q916.value().item())};
  return r;
}

LayerRecord plain_record(std::uint8_t tag, std::span<const Tensor* const> tensors, int bits) {
  LayerRecord r;
  r.tag = tag;
  r.qbits = static_cast<std::uint8_t>(bits);
  for (const Tensor* t : tensors) r.tensors.push_back(encode_upload(*t, all_present(t->numel()), bits));
  return r;
}

namespace {

void add_plain(MaskedUpdate& m, const Network& net, int bits) {
  std::vector<const Tensor*> stem, head;
  for (const ad::Var* v : net.stem_params()) stem.push_back(&v->value());
  for (const ad::Var* v : net.head_params()) head.push_back(&v->value());
  m.records.insert(m.records.begin(), plain_record(kStemTag, stem, bits));
  m.records.push_back(plain_record(kHeadTag, head, bits));
}

}  // namespace

MaskedUpdate build_update(const Network& net, std::uint16_t client, std::uint32_t round) {
  MaskedUpdate m;
  m.round = round;
  m.client_id = client;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    m.records.push_back(masked_sample(net.layers()[i], static_cast<std::uint16_t>(i)));
  }
  add_plain(m, net, quant::kStorageBits);
  return m;
}

MaskedUpdate build_fixed_update(const Network& net, std::uint16_t client, std::uint32_t round, Block block, int bits) {
  MaskedUpdate m;
  m.round = round;
  m.client_id = client;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    m.records.push_back(fixed_record(net.layers()[i], static_cast<std::uint16_t>(i), block, bits));
  }
  add_plain(m, net, bits);
  return m;
}

// ---- server side ----

DecodedUpdate decode(const MaskedUpdate& m, const ModelPlan& plan) {
  DecodedUpdate d;
  d.round = m.round;
  d.client_id = m.client_id;
  for (const auto& r : m.records) {
    const RecordLayout l = layout_of(r, plan);
    if (r.tensors.size() != l.shapes.size()) {
      throw ProtocolError("record for layer " + std::to_string(r.layer_index) + " carries " +
                          std::to_string(r.tensors.size()) + " tensors, expected " + std::to_string(l.shapes.size()));
    }
    DecodedRecord dr;
    dr.tag = r.tag;
    dr.qbits = r.qbits;
    dr.layer_index = r.layer_index;
    dr.thresholds = r.thresholds;
    for (std::size_t t = 0; t < r.tensors.size(); ++t) {
      const TensorPayload& p = r.tensors[t];
      const auto& mask = l.masks[t];
      const auto expected = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
      if (p.count != expected) {
        throw ProtocolError("tensor " + std::to_string(t) + " of layer " + std::to_string(r.layer_index) + " carries " +
                            std::to_string(p.count) + " values, its mask selects " + std::to_string(expected));
      }
      DecodedTensor dt{Tensor(l.shapes[t], 0.0), mask};
      std::size_t k = 0;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) dt.values[i] = decode_value(p, p.codes[k++]);
      }
      dr.tensors.push_back(std::move(dt));
    }
    d.records.push_back(std::move(dr));
  }
  return d;
}

std::vector<DecodedUpdate> aggregate(std::span<const DecodedUpdate> updates) {
  if (updates.empty()) throw ProtocolError("aggregate needs at least one update");
  const auto& ref = updates.front();
  for (const auto& u : updates) {
    if (u.round != ref.round) throw ProtocolError("updates from different rounds");
    if (u.records.size() != ref.records.size()) throw ProtocolError("updates disagree on the number of layers");
    for (std::size_t r = 0; r < ref.records.size(); ++r) {
      const auto& a = u.records[r];
      const auto& b = ref.records[r];
      const bool a_plain = a.tag >= kStemTag, b_plain = b.tag >= kStemTag;
      if (a.layer_index != b.layer_index || a_plain != b_plain || (a_plain && a.tag != b.tag)) {
        throw ProtocolError("updates disagree on the structure of record " + std::to_string(r));
      }
    }
  }

  std::vector<DecodedUpdate> out(updates.size());
  for (std::size_t c = 0; c < updates.size(); ++c) {
    out[c].round = updates[c].round;
    out[c].client_id = updates[c].client_id;
  }
  for (std::size_t r = 0; r < ref.records.size(); ++r) {
    // Shapes come from any client that sent tensors for this record.
    const DecodedRecord* shape_src = nullptr;
    for (const auto& u : updates) {
      if (!u.records[r].tensors.empty()) {
        shape_src = &u.records[r];
        break;
      }
    }
    std::vector<Tensor> sum, cnt;
    if (shape_src) {
      for (const auto& t : shape_src->tensors) {
        sum.emplace_back(t.values.shape(), 0.0);
        cnt.emplace_back(t.values.shape(), 0.0);
      }
      for (const auto& u : updates) {
        const auto& rec = u.records[r];
        if (rec.tensors.empty()) continue;
        if (rec.tensors.size() != sum.size()) throw ProtocolError("tensor count mismatch in record " + std::to_string(r));
        for (std::size_t t = 0; t < sum.size(); ++t) {
          if (!rec.tensors[t].values.same_shape(sum[t])) throw ProtocolError("tensor shape mismatch in record " + std::to_string(r));
          for (std::size_t i = 0; i < sum[t].numel(); ++i) {
            if (!rec.tensors[t].present[i]) continue;
            sum[t][i] += rec.tensors[t].values[i];
            cnt[t][i] += 1.0;
          }
        }
      }
    }
    for (std::size_t c = 0; c < updates.size(); ++c) {
      const auto& mine = updates[c].records[r];
      DecodedRecord res;
      res.tag = mine.tag;
      res.qbits = mine.qbits;
      res.layer_index = mine.layer_index;
      res.thresholds = mine.thresholds;
      for (std::size_t t = 0; t < mine.tensors.size(); ++t) {
        DecodedTensor dt{Tensor(mine.tensors[t].values.shape(), 0.0), mine.tensors[t].present};
        for (std::size_t i = 0; i < dt.present.size(); ++i) {
          if (dt.present[i]) dt.values[i] = cnt[t][i] == 1.0 ? mine.tensors[t].values[i] : sum[t][i] / cnt[t][i];
        }
        res.tensors.push_back(std::move(dt));
      }
      out[c].records.push_back(std::move(res));
    }
  }
  return out;
}

MaskedUpdate encode_pull(const DecodedUpdate& agg, const MaskedUpdate& upload) {
  if (agg.records.size() != upload.records.size()) throw ProtocolError("pull does not match the upload");
  MaskedUpdate m;
  m.round = upload.round;
  m.client_id = upload.client_id;
  for (std::size_t r = 0; r < upload.records.size(); ++r) {
    const LayerRecord& up = upload.records[r];
    const DecodedRecord& ag = agg.records[r];
    if (ag.tensors.size() != up.tensors.size()) throw ProtocolError("pull does not match the upload");
    LayerRecord rec;
    rec.tag = up.tag;
    rec.qbits = up.qbits;
    rec.layer_index = up.layer_index;
    rec.thresholds = up.thresholds;
    for (std::size_t t = 0; t < up.tensors.size(); ++t) {
      const TensorPayload& u = up.tensors[t];
      const DecodedTensor& a = ag.tensors[t];
      TensorPayload p;
      p.bits = u.bits;
      double lo = u.w_min, hi = u.w_max;
      for (std::size_t i = 0; i < a.present.size(); ++i) {
        if (!a.present[i]) continue;
        lo = std::min(lo, a.values[i]);
        hi = std::max(hi, a.values[i]);
      }
      if (u.bits < kRawFloatBits) {
        p.w_min = round_down(lo);
        p.w_max = round_up(hi);
      }
      for (std::size_t i = 0; i < a.present.size(); ++i) {
        if (!a.present[i]) continue;
        p.codes.push_back(u.bits == kRawFloatBits ? std::bit_cast<std::uint32_t>(static_cast<float>(a.values[i]))
                                                  : code_for(a.values[i], u.bits, p.w_min, p.w_max));
      }
      p.count = static_cast<std::uint32_t>(p.codes.size());
      if (p.count != u.count) throw ProtocolError("pull selection differs from the upload");
      rec.tensors.push_back(std::move(p));
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

void install(Network& net, const DecodedUpdate& pull) {
  for (const auto& r : pull.records) {
    std::vector<ad::Var*> dst;
    if (r.tag == kStemTag) {
      dst = net.stem_params();
    } else if (r.tag == kHeadTag) {
      dst = net.head_params();
    } else {
      if (r.layer_index >= net.layers().size()) throw ProtocolError("pull names an unknown layer");
      if (r.tensors.empty()) continue;
      dst = net.layers()[r.layer_index].weights();
    }
    if (dst.size() != r.tensors.size()) throw ProtocolError("pull tensor count does not match the model");
    for (std::size_t t = 0; t < dst.size(); ++t) {
      Tensor& v = dst[t]->mutable_value();
      if (!v.same_shape(r.tensors[t].values)) throw ProtocolError("pull tensor shape does not match the model");
      for (std::size_t i = 0; i < v.numel(); ++i) {
        if (r.tensors[t].present[i]) v[i] = r.tensors[t].values[i];
      }
    }
  }
}

// ---- ledger ----

std::string direction_name(Direction d) { return d == Direction::Upload ? "upload" : "pull"; }

std::uint64_t CommLedger::record(const MaskedUpdate& m, Direction d, const ModelPlan& plan) {
  std::uint64_t bits = 0;
  for (const auto& r : m.records) {
    const RecordLayout l = layout_of(r, plan);
    std::map<int, std::uint64_t> by_width;
    for (const auto& t : r.tensors) {
      by_width[t.bits] += t.count;
      if (t.bits < kRawFloatBits) by_width[kRawFloatBits] += 2;
    }
    if (r.thresholds) by_width[kRawFloatBits] += r.thresholds->size();
    for (const auto& [q, n] : by_width) {
      if (n == 0) continue;
      LedgerEntry e;
      e.round = m.round;
      e.client = m.client_id;
      e.layer = l.ledger_layer;
      e.direction = d;
      e.n_params = n;
      e.bits_per_param = q;
      e.gamma = static_cast<double>(n) / static_cast<double>(l.gamma_base);
      e.bits_total = n * static_cast<std::uint64_t>(q);
      bits += e.bits_total;
      entries_.push_back(e);
    }
  }
  return bits;
}

void CommLedger::append(const LedgerEntry& e) {
  if (e.bits_total != e.n_params * static_cast<std::uint64_t>(e.bits_per_param)) {
    throw UsageError("ledger entry bits_total must equal n_params * bits_per_param");
  }
  entries_.push_back(e);
}

std::uint64_t CommLedger::total() const {
  std::uint64_t s = 0;
  for (const auto& e : entries_) s += e.bits_total;
  return s;
}

std::uint64_t CommLedger::round_total(std::uint32_t round) const {
  std::uint64_t s = 0;
  for (const auto& e : entries_) {
    if (e.round == round) s += e.bits_total;
  }
  return s;
}

std::uint64_t CommLedger::bits_for(std::uint32_t round, std::uint16_t client, Direction d) const {
  std::uint64_t s = 0;
  for (const auto& e : entries_) {
    if (e.round == round && e.client == client && e.direction == d) s += e.bits_total;
  }
  return s;
}

std::uint32_t CommLedger::max_round() const {
  std::uint32_t r = 0;
  for (const auto& e : entries_) r = std::max(r, e.round);
  return r;
}

void CommLedger::write_csv(std::ostream& out, std::size_t layer_count) const {
  out << "round,client,layer,direction,n_params,bits_per_param,gamma,bits_total\n";
  char gamma[32];
  for (const auto& e : entries_) {
    std::snprintf(gamma, sizeof gamma, "%.6f", e.gamma);
    out << e.round << ',' << e.client << ',';
    if (e.layer == kStemLayer) {
      out << "stem";
    } else if (e.layer == static_cast<int>(layer_count)) {
      out << "head";
    } else {
      out << e.layer;
    }
    out << ',' << direction_name(e.direction) << ',' << e.n_params << ',' << e.bits_per_param << ',' << gamma << ','
        << e.bits_total << '\n';
  }
}

std::uint64_t comm_cost(const CommLedger& ledger, std::optional<std::uint32_t> round) {
  return round ? ledger.round_total(*round) : ledger.total();
}

double bits_to_kb(double bits) { return bits / 8.0 / 1000.0; }

double block_comm_bits(double gamma, double n_params, double q_bits) { return 2.0 * gamma * n_params * q_bits; }

std::uint64_t multipath_params(const nas::LayerSpec& spec) {
  std::uint64_t n = 0;
  for (Block b : {Block::K3E3, Block::K3E6, Block::K5E3, Block::K5E6}) {
    const std::uint64_t mid = spec.c_in * static_cast<std::uint64_t>(nas::expansion_ratio(b));
    const auto k = static_cast<std::uint64_t>(nas::kernel_size(b));
    n += spec.c_in * mid + mid * k * k + mid * spec.c_out;
  }
  return n;
}

CommLedger multipath_ledger(const ModelPlan& plan, std::size_t clients, std::size_t rounds, int q_bits) {
  CommLedger ledger;
  const int L = static_cast<int>(plan.layers.size());
  for (std::size_t r = 1; r <= rounds; ++r) {
    for (std::size_t c = 0; c < clients; ++c) {
      for (Direction d : {Direction::Upload, Direction::Pull}) {
        auto add = [&](int layer, std::uint64_t n) {
          LedgerEntry e;
          e.round = static_cast<std::uint32_t>(r);
          e.client = static_cast<std::uint16_t>(c);
          e.layer = layer;
          e.direction = d;
          e.n_params = n;
          e.bits_per_param = q_bits;
          e.gamma = 1.0;
          e.bits_total = n * static_cast<std::uint64_t>(q_bits);
          ledger.append(e);
        };
        add(kStemLayer, shapes_numel(stem_shapes(plan)));
        for (int i = 0; i < L; ++i) add(i, multipath_params(plan.layers[static_cast<std::size_t>(i)]));
        add(L, shapes_numel(head_shapes(plan)));
      }
    }
  }
  return ledger;
}

}  // namespace faqs::fl
