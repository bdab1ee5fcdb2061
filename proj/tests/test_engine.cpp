#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "faqs/engine.hpp"
#include "faqs/errors.hpp"
#include "layer_helpers.hpp"

using namespace faqs;
using nas::Block;

namespace {

RunConfig small_config(std::uint64_t seed = 3) {
  RunConfig c;
  c.rounds = 2;
  c.clients = 3;
  c.batch_size = 16;
  c.seed = seed;
  c.data.samples_per_class = 40;
  c.data.height = c.data.width = 8;
  c.min_samples = 20;
  c.plan.image_size = 8;
  c.plan.stem_channels = 4;
  c.plan.layers = {{4, 4, 1}, {4, 8, 2}};
  c.profiles.assign(c.clients, hw::ParetoCoefficients{});
  c.validate();
  return c;
}

std::string csvs(const engine::Report& r) {
  std::ostringstream o;
  engine::write_metrics_csv(r, o);
  r.ledger.write_csv(o, r.layer_count);
  engine::write_final_csv(r, o);
  return o.str();
}

std::vector<Tensor> snapshot(Network& net) {
  std::vector<Tensor> out;
  for (ad::Var* v : net.weight_params()) out.push_back(v->value());
  for (ad::Var* v : net.threshold_params()) out.push_back(v->value());
  return out;
}

}  // namespace

TEST_CASE("local search with zero epochs changes nothing") {
  const auto cfg = small_config();
  engine::Federation fed(cfg);
  auto net = fed.networks()[0].clone();
  const auto before = snapshot(net);
  std::mt19937_64 rng(1);
  const auto& env = fed.environment();
  const auto trace = engine::local_search(net, env.clients[0], {}, env.table, env.norm, {0, 16, 0.1, 0.1, true}, rng);
  CHECK(trace.step_losses.empty());
  CHECK(snapshot(net) == before);
  const auto m = fl::build_update(net, 0, 1);
  CHECK(m == fl::build_update(fed.networks()[0], 0, 1));
}

TEST_CASE("frozen gates reproduce plain fixed-block training") {
  const auto cfg = small_config();
  engine::Federation fed(cfg);
  const auto& env = fed.environment();
  auto soft = fed.networks()[0].clone();
  std::mt19937_64 init(5);
  std::uniform_real_distribution<double> shift(0.05, 0.2);
  for (auto& l : soft.layers()) {
    // Zero shifts put all-zero depthwise windows exactly on the relu6 kink,
    // where the gated and the masked kernels pick different subgradients.
    for (ad::Var* v : {&l.shift1, &l.shift2}) {
      for (double& s : v->mutable_value().data()) s = shift(init);
    }
    l.init_thresholds(false);
    testing::saturate_arch(l, Block::K3E6, false);
  }
  auto hard = soft.clone();
  std::mt19937_64 r1(9), r2(9);
  const auto a = engine::local_search(soft, env.clients[0], {1.0, 0.0, 0.0}, env.table, env.norm,
                                      {2, 8, 0.05, 0.0, false}, r1);
  const std::vector<Block> arch(2, Block::K3E6);
  const auto b = engine::train_fixed(hard, arch, {}, env.clients[0], 2, 8, 0.05, r2);
  REQUIRE(a.step_losses.size() == b.step_losses.size());
  REQUIRE(a.step_losses.size() > 4);
  for (std::size_t i = 0; i < a.step_losses.size(); ++i) CHECK(std::abs(a.step_losses[i] - b.step_losses[i]) <= 1e-8);
}

TEST_CASE("two local epochs lower the training loss") {
  int lowered = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cfg = small_config(seed);
    engine::Federation fed(cfg);
    const auto& env = fed.environment();
    auto net = fed.networks()[0].clone();
    auto train_loss = [&](const Network& n) {
      const auto& d = env.clients[0];
      const ad::Var x = ad::constant(d.ds->gather_images(d.train));
      return ad::softmax_cross_entropy(n.forward_soft(x, true).logits, d.ds->gather_labels(d.train)).value().item();
    };
    const double before = train_loss(net);
    std::mt19937_64 rng(seed);
    engine::local_search(net, env.clients[0], {1.0, 0.0, 0.0}, env.table, env.norm, {2, 16, 0.05, 0.05, true}, rng);
    lowered += train_loss(net) < before;
  }
  CHECK(lowered >= 19);
}

TEST_CASE("results do not depend on the number of worker threads") {
  auto cfg = small_config();
  const auto serial = csvs(engine::run_faqs(cfg));
  CHECK(serial == csvs(engine::run_faqs(cfg)));
  cfg.threads = 3;
  CHECK(serial == csvs(engine::run_faqs(cfg)));
  cfg.threads = 1;
  const auto base = csvs(engine::run_fedavg(cfg));
  cfg.threads = 2;
  CHECK(base == csvs(engine::run_fedavg(cfg)));
}

TEST_CASE("rounds = 0 reports initialization only") {
  auto cfg = small_config();
  cfg.rounds = 0;
  const auto r = engine::run_faqs(cfg);
  CHECK(r.ledger.entries().empty());
  REQUIRE(r.metrics.size() == cfg.clients);
  for (const auto& m : r.metrics) CHECK(m.round == 0);
  CHECK(r.finals.size() == cfg.clients);
}

TEST_CASE("a single client pulls back what it uploaded") {
  auto cfg = small_config();
  cfg.clients = 1;
  cfg.min_samples = 1;
  cfg.profiles.resize(1);
  const auto r = engine::run_faqs(cfg);
  for (std::uint32_t round = 1; round <= cfg.rounds; ++round) {
    CHECK(r.ledger.bits_for(round, 0, fl::Direction::Upload) == r.ledger.bits_for(round, 0, fl::Direction::Pull));
  }
}

TEST_CASE("final models: consistent selection and table-exact costs") {
  auto cfg = small_config();
  cfg.profiles = {{1.0, 0.0, 0.0}, {0.4, 0.5, 0.1}, {0.4, 0.1, 0.5}};
  engine::Federation fed(cfg);
  for (std::uint32_t r = 1; r <= cfg.rounds; ++r) fed.run_round(r);
  std::vector<std::vector<Block>> arch;
  for (const auto& n : fed.networks()) arch.push_back(n.select_architecture());
  fed.finetune();
  const auto& env = fed.environment();
  for (const auto& f : fed.report().finals) {
    CHECK(f.arch == arch[f.client]);
    CHECK(f.latency == hw::architecture_latency(f.arch, env.table));
    CHECK(f.model_size == hw::architecture_model_size(f.arch, f.quant, env.table));
    // unselected regions were discarded
    const auto& net = fed.networks()[f.client];
    for (std::size_t i = 0; i < f.arch.size(); ++i) {
      const auto masks = fl::layer_element_masks(net.layers()[i].spec(), f.arch[i]);
      const auto ws = net.layers()[i].weights();
      for (std::size_t t = 0; t < ws.size(); ++t) {
        for (std::size_t k = 0; k < masks[t].size(); ++k) {
          if (!masks[t][k]) CHECK(ws[t]->value()[k] == 0.0);
        }
      }
    }
  }
}

TEST_CASE("an all-skip model finetunes into a stem and head classifier") {
  auto cfg = small_config();
  cfg.plan.layers = {{4, 4, 1}, {4, 4, 1}};
  engine::Federation fed(cfg);
  const auto& env = fed.environment();
  auto net = fed.networks()[0].clone();
  for (auto& l : net.layers()) testing::saturate_arch(l, Block::Skip, true);
  std::mt19937_64 rng(4);
  const auto f = engine::local_finetune(net, env.clients[0], env.table, 3, 16, 0.05, rng);
  CHECK(f.arch == std::vector<Block>{Block::Skip, Block::Skip});
  CHECK(f.latency == 0.0);
  CHECK(f.model_size == 0.0);
  // oracle: the network without any searchable layer
  const auto& d = env.clients[0];
  const ad::Var x = ad::constant(d.ds->gather_images(d.test));
  const ad::Var stem = ad::relu6(ad::affine_channel(ad::conv2d_pointwise(x, net.stem_w), net.stem_scale, net.stem_shift));
  const Tensor want = ad::dense(ad::global_avg_pool(stem), net.head_w, net.head_b).value();
  const Tensor got = net.forward_fixed(x, f.arch, f.quant).value();
  for (std::size_t i = 0; i < want.numel(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  CHECK(f.accuracy == engine::evaluate_fixed(net, *d.ds, d.test, f.arch, f.quant));
}

TEST_CASE("divergence is reported with round and client") {
  auto cfg = small_config();
  cfg.lr_w = 1e12;
  try {
    engine::run_faqs(cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string what = e.what();
    CHECK(what.find("round ") == 0);
    CHECK(what.find(", client ") != std::string::npos);
  }
}

TEST_CASE("fedavg baseline moves every parameter at 32 bits") {
  const auto cfg = small_config();
  const auto r = engine::run_fedavg(cfg);
  for (const auto& e : r.ledger.entries()) {
    CHECK(e.bits_per_param == 32);
    CHECK(e.gamma == 1.0);
  }
  const auto faqs = engine::run_faqs(cfg);
  for (std::uint32_t round = 1; round <= cfg.rounds; ++round) {
    CHECK(faqs.ledger.round_total(round) < r.ledger.round_total(round));
  }
}
