#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "faqs/errors.hpp"
#include "faqs/protocol.hpp"
#include "layer_helpers.hpp"

using namespace faqs;
using nas::Block;

namespace {

ModelPlan small_plan(std::size_t c = 4) {
  ModelPlan p;
  p.image_channels = 3;
  p.image_size = 4;
  p.stem_channels = c;
  p.num_classes = 3;
  p.layers = {{c, c, 1}, {c, 2 * c, 2}};
  return p;
}

// Independent random weights so clients differ everywhere.
Network random_net(const ModelPlan& plan, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Network net(plan, rng);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (ad::Var* v : net.weight_params()) {
    for (double& x : v->mutable_value().data()) x = nd(rng);
  }
  return net;
}

void choose(Network& net, std::size_t layer, Block b, int bits) {
  auto& L = net.layers()[layer];
  testing::saturate_quant(L, {bits});
  testing::saturate_arch(L, b, true);
  REQUIRE(L.select_block(true) == b);
  REQUIRE(L.select_quant().bits == bits);
}

fl::DecodedUpdate roundtrip_decode(const fl::MaskedUpdate& m, const ModelPlan& plan) {
  const auto bytes = fl::serialize(m);
  return fl::decode(fl::deserialize(bytes), plan);
}

bool in_center(std::size_t i, std::size_t j) { return i >= 1 && i <= 3 && j >= 1 && j <= 3; }

}  // namespace

TEST_CASE("region sets partition the super kernel") {
  const nas::LayerSpec s{24, 24, 1};
  for (Block b : {Block::Skip, Block::K3E3, Block::K3E6, Block::K5E3, Block::K5E6}) {
    std::size_t sum = 0;
    for (auto r : fl::region_set(b)) sum += fl::region_size(s, r);
    const auto masks = fl::layer_element_masks(s, b);
    CHECK(static_cast<std::size_t>(std::count(masks[1].begin(), masks[1].end(), 1)) == sum);
    const Tensor dm = nas::depthwise_block_mask(s, b);
    for (std::size_t i = 0; i < dm.numel(); ++i) CHECK((dm[i] != 0.0) == (masks[1][i] == 1));
  }
  CHECK(fl::region_set(Block::K5E6).size() == 4);
  std::size_t all = 0;
  for (auto r : fl::region_set(Block::K5E6)) all += fl::region_size(s, r);
  CHECK(all == s.c_max() * 25);
}

TEST_CASE("depthwise mask fraction of a (3,3) block at 24 input channels") {
  const nas::LayerSpec s{24, 24, 1};
  const auto masks = fl::layer_element_masks(s, Block::K3E3);
  const auto dw = static_cast<double>(std::count(masks[1].begin(), masks[1].end(), 1));
  CHECK(dw == 648.0);
  CHECK(dw / static_cast<double>(masks[1].size()) == doctest::Approx(0.18).epsilon(1e-15));
}

TEST_CASE("serialize round trip is lossless") {
  const auto plan = small_plan();
  auto net = random_net(plan, 1);
  const std::vector<std::pair<Block, int>> picks{{Block::K3E3, 4}, {Block::K3E6, 8}, {Block::K5E3, 16},
                                                 {Block::K5E6, 4}, {Block::Skip, 8}};
  for (auto [b, q] : picks) {
    choose(net, 0, b, q);
    choose(net, 1, Block::K5E6, 16);
    const auto m = fl::build_update(net, 3, 7);
    const auto bytes = fl::serialize(m);
    CHECK(fl::deserialize(bytes) == m);
    CHECK(fl::serialize(fl::deserialize(bytes)) == bytes);
  }
  const auto fixed = fl::build_fixed_update(net, 1, 2, Block::K3E6);
  CHECK(fl::deserialize(fl::serialize(fixed)) == fixed);
}

TEST_CASE("every code fits its width") {
  const auto plan = small_plan();
  auto net = random_net(plan, 2);
  for (int q : {4, 8, 16}) {
    choose(net, 0, Block::K5E6, q);
    for (const auto& r : fl::build_update(net, 0, 1).records) {
      for (const auto& t : r.tensors) {
        for (auto c : t.codes) CHECK(c < (std::uint64_t{1} << t.bits));
      }
    }
  }
}

TEST_CASE("deserialize reports where a message breaks") {
  const auto plan = small_plan();
  auto net = random_net(plan, 3);
  choose(net, 0, Block::K3E6, 8);
  const auto bytes = fl::serialize(fl::build_update(net, 0, 1));

  auto bad = bytes;
  bad[1] = 'X';
  try {
    fl::deserialize(bad);
    FAIL("bad magic accepted");
  } catch (const DeserializeError& e) {
    CHECK(e.offset() == 1);
  }
  bad = bytes;
  bad[4] = 9;
  try {
    fl::deserialize(bad);
    FAIL("bad version accepted");
  } catch (const DeserializeError& e) {
    CHECK(e.offset() == 4);
  }
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      fl::deserialize(part);
      FAIL("truncated message accepted");
    } catch (const DeserializeError& e) {
      CHECK(e.offset() <= cut);
    }
  }
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(fl::deserialize(longer), DeserializeError);
}

TEST_CASE("a skipped layer carries only its tag and thresholds") {
  const auto plan = small_plan();
  auto net = random_net(plan, 4);
  choose(net, 0, Block::Skip, 4);
  const auto rec = fl::masked_sample(net.layers()[0], 0);
  CHECK(rec.tensors.empty());
  REQUIRE(rec.thresholds.has_value());
  fl::MaskedUpdate m;
  m.records.push_back(rec);
  // 13 header bytes, 5 record descriptor bytes, 20 threshold bytes
  CHECK(fl::serialize(m).size() == 13 + 5 + 20);
  fl::CommLedger ledger;
  CHECK(ledger.record(m, fl::Direction::Upload, plan) == 5 * 32);
}

TEST_CASE("a (3,3) 4-bit layer costs exactly what the ledger predicts") {
  const auto plan = small_plan();
  auto net = random_net(plan, 5);
  choose(net, 0, Block::K3E3, 4);
  fl::MaskedUpdate m;
  m.records.push_back(fl::masked_sample(net.layers()[0], 0));

  // C_in = 4: half width 12; expand 12x4, depthwise 12x9, project 4x12.
  const std::uint64_t conv = 48 + 108 + 48;
  const std::uint64_t affine = 4 * 12 + 2 * 4;
  const std::uint64_t scalars = 2 * 9 + 5;
  const std::uint64_t expected = conv * 4 + affine * 16 + scalars * 32;

  fl::CommLedger ledger;
  CHECK(ledger.record(m, fl::Direction::Upload, plan) == expected);
  std::uint64_t payload_bits = 0;
  for (const auto& t : m.records[0].tensors) payload_bits += std::uint64_t{t.count} * t.bits;
  CHECK(payload_bits == conv * 4 + affine * 16);
  CHECK(8 * fl::serialize(m).size() == expected + fl::framing_bits(m));

  for (const auto& e : ledger.entries()) {
    CHECK(e.bits_total == e.n_params * static_cast<std::uint64_t>(e.bits_per_param));
    CHECK(e.gamma == doctest::Approx(static_cast<double>(e.n_params) /
                                     static_cast<double>(fl::full_layer_params(plan.layers[0]))));
  }
}

TEST_CASE("ledger and serializer agree on every message") {
  const auto plan = small_plan();
  std::mt19937_64 pick(6);
  const Block blocks[] = {Block::Skip, Block::K3E3, Block::K3E6, Block::K5E3, Block::K5E6};
  const int widths[] = {4, 8, 16};
  for (int trial = 0; trial < 40; ++trial) {
    auto net = random_net(plan, 100 + static_cast<std::uint64_t>(trial));
    choose(net, 0, blocks[pick() % 5], widths[pick() % 3]);
    choose(net, 1, blocks[1 + pick() % 4], widths[pick() % 3]);
    const auto m = fl::build_update(net, 0, 1);
    fl::CommLedger ledger;
    const auto bits = ledger.record(m, fl::Direction::Upload, plan);
    CHECK(8 * fl::serialize(m).size() == bits + fl::framing_bits(m));
    CHECK(bits == ledger.total());
    const auto fixed = fl::build_fixed_update(net, 0, 1, Block::K3E6);
    const auto fbits = ledger.record(fixed, fl::Direction::Upload, plan);
    CHECK(8 * fl::serialize(fixed).size() == fbits + fl::framing_bits(fixed));
  }
}

TEST_CASE("three overlapping clients average each region over its owners") {
  const auto plan = small_plan();
  const Block picks[] = {Block::K3E3, Block::K3E6, Block::K5E6};
  std::vector<Network> nets;
  std::vector<fl::DecodedUpdate> ups;
  for (int c = 0; c < 3; ++c) {
    nets.push_back(random_net(plan, 10 + static_cast<std::uint64_t>(c)));
    choose(nets.back(), 0, picks[c], 16);
    choose(nets.back(), 1, Block::K5E6, 16);
    ups.push_back(roundtrip_decode(fl::build_update(nets.back(), static_cast<std::uint16_t>(c), 1), plan));
  }
  const auto agg = fl::aggregate(ups);
  REQUIRE(agg.size() == 3);

  const auto& s = plan.layers[0];
  const std::size_t half = s.c_half();
  std::size_t checked = 0;
  for (std::size_t ch = 0; ch < s.c_max(); ++ch) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const std::size_t idx = (ch * 5 + i) * 5 + j;
        // owners by region: centre/first half -> all; centre/second -> {1,2}; ring -> {2}
        std::vector<int> owners;
        if (in_center(i, j)) {
          owners = ch < half ? std::vector<int>{0, 1, 2} : std::vector<int>{1, 2};
        } else {
          owners = {2};
        }
        double mean = 0.0;
        for (int o : owners) mean += ups[o].records[1].tensors[1].values[idx];
        mean /= static_cast<double>(owners.size());
        for (int c = 0; c < 3; ++c) {
          const auto& t = agg[c].records[1].tensors[1];
          const bool mine = std::find(owners.begin(), owners.end(), c) != owners.end();
          CHECK((t.present[idx] == 1) == mine);
          if (mine) {
            CHECK(t.values[idx] == doctest::Approx(mean).epsilon(1e-14));
            ++checked;
          }
        }
      }
    }
  }
  CHECK(checked == 12 * 9 * 3 + 12 * 9 * 2 + 24 * 16);
  // The ring belongs to client 2 alone and comes back untouched.
  for (std::size_t ch = 0; ch < s.c_max(); ++ch) {
    const std::size_t idx = (ch * 5 + 0) * 5 + 0;
    CHECK(agg[2].records[1].tensors[1].values[idx] == ups[2].records[1].tensors[1].values[idx]);
  }
}

TEST_CASE("full masks at 32 bits reduce to plain federated averaging") {
  const auto plan = small_plan();
  std::vector<Network> nets;
  std::vector<fl::DecodedUpdate> ups;
  for (int c = 0; c < 4; ++c) {
    nets.push_back(random_net(plan, 20 + static_cast<std::uint64_t>(c)));
    ups.push_back(roundtrip_decode(fl::build_fixed_update(nets.back(), static_cast<std::uint16_t>(c), 1, Block::K5E6),
                                   plan));
  }
  const auto agg = fl::aggregate(ups);
  for (std::size_t L = 0; L < plan.layers.size(); ++L) {
    for (std::size_t t = 0; t < 9; ++t) {
      const std::size_t n = nets[0].layers()[L].weights()[t]->value().numel();
      for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (const auto& net : nets) {
          mean += static_cast<double>(static_cast<float>(net.layers()[L].weights()[t]->value()[i]));
        }
        mean /= 4.0;
        for (const auto& a : agg) CHECK(std::abs(a.records[L + 1].tensors[t].values[i] - mean) <= 1e-12);
      }
    }
  }
}

TEST_CASE("aggregation of one client or identical clients changes nothing") {
  const auto plan = small_plan();
  auto net = random_net(plan, 30);
  choose(net, 0, Block::K5E3, 8);
  choose(net, 1, Block::K3E6, 4);
  const auto up = roundtrip_decode(fl::build_update(net, 0, 1), plan);
  for (std::size_t k : {std::size_t{1}, std::size_t{3}}) {
    const std::vector<fl::DecodedUpdate> many(k, up);
    const auto agg = fl::aggregate(many);
    for (const auto& a : agg) {
      for (std::size_t r = 0; r < up.records.size(); ++r) {
        CHECK(a.records[r].thresholds == up.records[r].thresholds);
        for (std::size_t t = 0; t < up.records[r].tensors.size(); ++t) {
          CHECK(a.records[r].tensors[t].present == up.records[r].tensors[t].present);
          for (std::size_t i = 0; i < up.records[r].tensors[t].present.size(); ++i) {
            CHECK(a.records[r].tensors[t].values[i] == doctest::Approx(up.records[r].tensors[t].values[i]).epsilon(1e-15));
          }
        }
      }
    }
  }
}

TEST_CASE("the pull of a lone client reproduces its upload bit for bit") {
  const auto plan = small_plan();
  auto net = random_net(plan, 31);
  for (int q : {4, 8, 16}) {
    choose(net, 0, Block::K5E6, q);
    const auto up = fl::build_update(net, 0, 1);
    const auto dec = fl::decode(up, plan);
    const std::vector<fl::DecodedUpdate> one{dec};
    const auto pull = fl::encode_pull(fl::aggregate(one)[0], up);
    const auto back = fl::decode(fl::deserialize(fl::serialize(pull)), plan);
    for (std::size_t r = 0; r < dec.records.size(); ++r) {
      for (std::size_t t = 0; t < dec.records[r].tensors.size(); ++t) {
        CHECK(pull.records[r].tensors[t].codes == up.records[r].tensors[t].codes);
        CHECK(back.records[r].tensors[t].values.data()[0] == dec.records[r].tensors[t].values.data()[0]);
      }
    }
  }
}

TEST_CASE("install writes only the pulled selection") {
  const auto plan = small_plan();
  auto a = random_net(plan, 40);
  auto b = random_net(plan, 41);
  choose(a, 0, Block::K3E3, 16);
  choose(b, 0, Block::K3E3, 16);
  const std::vector<fl::DecodedUpdate> ups{roundtrip_decode(fl::build_update(a, 0, 1), plan),
                                           roundtrip_decode(fl::build_update(b, 1, 1), plan)};
  const auto agg = fl::aggregate(ups);
  const Tensor dw_before = a.layers()[0].dw_w.value();
  const auto thresholds_before = a.layers()[0].t_k5.value().item();
  fl::install(a, agg[0]);
  const Tensor& dw = a.layers()[0].dw_w.value();
  const auto& mask = agg[0].records[1].tensors[1].present;
  for (std::size_t i = 0; i < dw.numel(); ++i) {
    if (mask[i]) {
      CHECK(dw[i] == agg[0].records[1].tensors[1].values[i]);
    } else {
      CHECK(dw[i] == dw_before[i]);
    }
  }
  CHECK(a.layers()[0].t_k5.value().item() == thresholds_before);
}

TEST_CASE("baseline aggregation of w and -w is zero") {
  const auto plan = small_plan();
  auto a = random_net(plan, 50);
  auto b = a.clone();
  for (ad::Var* v : b.weight_params()) {
    for (double& x : v->mutable_value().data()) x = -x;
  }
  const std::vector<fl::DecodedUpdate> ups{
      roundtrip_decode(fl::build_fixed_update(a, 0, 1, Block::K3E6), plan),
      roundtrip_decode(fl::build_fixed_update(b, 1, 1, Block::K3E6), plan)};
  for (const auto& u : fl::aggregate(ups)) {
    for (const auto& r : u.records) {
      for (const auto& t : r.tensors) {
        for (std::size_t i = 0; i < t.present.size(); ++i) {
          if (t.present[i]) CHECK(t.values[i] == 0.0);
        }
      }
    }
  }
  fl::CommLedger ledger;
  ledger.record(fl::build_fixed_update(a, 0, 1, Block::K3E6), fl::Direction::Upload, plan);
  for (const auto& e : ledger.entries()) {
    CHECK(e.bits_per_param == 32);
    CHECK(e.gamma == 1.0);
  }
}

TEST_CASE("masked payload never exceeds the full 16-bit super kernel") {
  const auto plan = small_plan();
  std::mt19937_64 pick(60);
  const Block blocks[] = {Block::Skip, Block::K3E3, Block::K3E6, Block::K5E3, Block::K5E6};
  for (int trial = 0; trial < 30; ++trial) {
    auto net = random_net(plan, 200 + static_cast<std::uint64_t>(trial));
    choose(net, 0, blocks[pick() % 5], 4 << (pick() % 3));
    choose(net, 1, blocks[1 + pick() % 4], 4 << (pick() % 3));
    fl::CommLedger faqs, full;
    const auto bits = faqs.record(fl::build_update(net, 0, 1), fl::Direction::Upload, plan);
    const auto ref = full.record(fl::build_fixed_update(net, 0, 1, Block::K5E6, 16), fl::Direction::Upload, plan);
    // thresholds are the only thing the fixed message lacks
    CHECK(bits - 5 * 32 * plan.layers.size() <= ref);
  }
}

TEST_CASE("decode rejects messages that contradict the plan") {
  const auto plan = small_plan();
  auto net = random_net(plan, 70);
  choose(net, 0, Block::K3E6, 8);
  auto m = fl::build_update(net, 0, 1);
  auto bad = m;
  bad.records[1].layer_index = 9;
  CHECK_THROWS_AS(fl::decode(bad, plan), ProtocolError);
  bad = m;
  bad.records[1].tensors[1].codes.pop_back();
  bad.records[1].tensors[1].count -= 1;
  CHECK_THROWS_AS(fl::decode(bad, plan), ProtocolError);
  bad = m;
  bad.records[2].tag = static_cast<std::uint8_t>(Block::Skip);  // stride-2 layer
  bad.records[2].tensors.clear();
  CHECK_THROWS_AS(fl::decode(bad, plan), ProtocolError);
  CHECK_THROWS_AS(fl::aggregate(std::span<const fl::DecodedUpdate>{}), ProtocolError);
  auto shorter = fl::decode(m, plan);
  shorter.records.pop_back();
  const std::vector<fl::DecodedUpdate> mixed{fl::decode(m, plan), shorter};
  CHECK_THROWS_AS(fl::aggregate(mixed), ProtocolError);
}

TEST_CASE("communication arithmetic for one block") {
  CHECK(fl::bits_to_kb(fl::block_comm_bits(1.0, 9000, 32)) == 72.0);
  CHECK(fl::bits_to_kb(fl::block_comm_bits(1.0, 25000, 28)) == 175.0);
  CHECK(fl::bits_to_kb(fl::block_comm_bits(0.51, 9000, 16)) == doctest::Approx(18.36).epsilon(1e-12));
}

TEST_CASE("ledger totals and csv") {
  fl::CommLedger ledger;
  ledger.append({1, 0, 0, fl::Direction::Upload, 9000, 32, 1.0, 288000});
  ledger.append({1, 0, 0, fl::Direction::Pull, 9000, 32, 1.0, 288000});
  ledger.append({2, 1, 1, fl::Direction::Upload, 10, 4, 0.5, 40});
  CHECK(fl::comm_cost(ledger) == 576040);
  CHECK(fl::comm_cost(ledger, 1) == 576000);
  CHECK(fl::bits_to_kb(static_cast<double>(fl::comm_cost(ledger, 1))) == 72.0);
  CHECK(ledger.bits_for(2, 1, fl::Direction::Upload) == 40);
  CHECK(ledger.max_round() == 2);
  CHECK_THROWS_AS(ledger.append({1, 0, 0, fl::Direction::Upload, 10, 4, 1.0, 41}), UsageError);
  std::ostringstream csv;
  ledger.write_csv(csv, 1);
  CHECK(csv.str() ==
        "round,client,layer,direction,n_params,bits_per_param,gamma,bits_total\n"
        "1,0,0,upload,9000,32,1.000000,288000\n"
        "1,0,0,pull,9000,32,1.000000,288000\n"
        "2,1,head,upload,10,4,0.500000,40\n");
}

TEST_CASE("multi-path ledger counts every candidate path") {
  const nas::LayerSpec s{8, 8, 1};
  // ratios 3+6+3+6 = 18 expanded widths, kernels 9+9+25+25
  const std::uint64_t expected = 8 * 8 * 18 + 8 * (3 * 9 + 6 * 9 + 3 * 25 + 6 * 25) + 8 * 8 * 18;
  CHECK(fl::multipath_params(s) == expected);
  ModelPlan plan;
  plan.stem_channels = 8;
  plan.layers = {s};
  const auto ledger = fl::multipath_ledger(plan, 2, 3, 28);
  const std::uint64_t stem = 8 * 3 + 16, head = 3 * 8 + 3;
  CHECK(ledger.total() == 2 * 2 * 3 * 28 * (expected + stem + head));
}
