#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "faqs/errors.hpp"
#include "faqs/hw_proxy.hpp"
#include "gradcheck.hpp"

using namespace faqs;
using nas::Block;

namespace {

nas::Gates const_gates(double e3, double k5, double e6, double q58 = -1, double q916 = -1) {
  nas::Gates g;
  g.g_e3 = ad::parameter(Tensor::scalar(e3));
  g.g_k5 = ad::parameter(Tensor::scalar(k5));
  g.g_e6 = ad::parameter(Tensor::scalar(e6));
  if (q58 >= 0) {
    g.g58 = ad::parameter(Tensor::scalar(q58));
    g.g916 = ad::parameter(Tensor::scalar(q916));
  }
  return g;
}

hw::CostTable one_layer(double l33, double l36, double l53, double l56, std::uint64_t p33 = 10,
                        std::uint64_t p36 = 20, std::uint64_t p53 = 30, std::uint64_t p56 = 40) {
  return hw::CostTable({{hw::CostEntry{l33, p33}, {l36, p36}, {l53, p53}, {l56, p56}}});
}

ModelPlan small_plan() {
  ModelPlan p;
  p.image_size = 8;
  p.stem_channels = 4;
  p.layers = {{4, 4, 1}, {4, 6, 2}, {6, 6, 1}};
  return p;
}

}  // namespace

TEST_CASE("expected latency: half gates over a 1-2-3-4 table") {
  const auto table = one_layer(1, 2, 3, 4);
  const std::vector<nas::Gates> g{const_gates(0.5, 0.5, 0.5)};
  CHECK(hw::expected_latency(g, table).value().item() == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("expected latency: degenerate distributions") {
  const auto table = hw::CostTable::synthetic(small_plan());
  std::vector<nas::Gates> full, none;
  double sum56 = 0.0;
  for (std::size_t i = 0; i < table.layer_count(); ++i) {
    full.push_back(const_gates(1, 1, 1));
    none.push_back(const_gates(1e-12, 0.5, 0.5));
    sum56 += table.latency(i, Block::K5E6);
  }
  CHECK(hw::expected_latency(full, table).value().item() == sum56);
  CHECK(hw::expected_latency(none, table).value().item() <= 1e-9);
}

TEST_CASE("expected model size: bits and the 1000-byte example") {
  CHECK(hw::expected_bits(const_gates(1, 1, 1, 1, 1)).value().item() == 16.0);
  CHECK(hw::expected_bits(const_gates(1, 1, 1, 0, 1)).value().item() == 4.0);
  CHECK(hw::expected_bits(const_gates(1, 1, 1, 0, 0)).value().item() == 4.0);
  CHECK(hw::expected_bits(const_gates(1, 1, 1, 1, 0)).value().item() == 8.0);
  CHECK(hw::expected_bits(const_gates(1, 1, 1)).value().item() == 16.0);

  const auto table = one_layer(1, 2, 3, 4, 1000, 2000, 3000, 4000);
  const std::vector<nas::Gates> g{const_gates(1, 0, 0, 1, 0)};
  CHECK(hw::expected_model_size(g, table).value().item() == 1000.0);
}

TEST_CASE("hard gates reproduce the discrete table sums") {
  const auto table = hw::CostTable::synthetic(small_plan());
  std::mt19937_64 rng(1);
  const std::vector<Block> skippable{Block::Skip, Block::K3E3, Block::K3E6, Block::K5E3, Block::K5E6};
  const std::vector<int> widths{4, 8, 16};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Block> arch;
    std::vector<quant::QuantChoice> bits;
    std::vector<nas::Gates> gates;
    for (std::size_t i = 0; i < table.layer_count(); ++i) {
      const Block b = skippable[rng() % 5];
      const int q = widths[rng() % 3];
      arch.push_back(b);
      bits.push_back({q});
      const bool skip = b == Block::Skip;
      gates.push_back(const_gates(skip ? 0 : 1, nas::kernel_size(b) == 5 ? 1 : 0, nas::expansion_ratio(b) == 6 ? 1 : 0,
                                  q >= 8 ? 1 : 0, q == 16 ? 1 : 0));
    }
    CHECK(hw::expected_latency(gates, table).value().item() ==
          doctest::Approx(hw::architecture_latency(arch, table)).epsilon(1e-15));
    CHECK(hw::expected_model_size(gates, table).value().item() ==
          doctest::Approx(hw::architecture_model_size(arch, bits, table)).epsilon(1e-15));
  }
}

TEST_CASE("expected latency is monotone in the enabling gates") {
  const auto table = hw::CostTable::synthetic(small_plan());
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> vals;
    for (int i = 0; i < 9; ++i) vals.push_back(u(rng));
    auto build = [&](std::size_t which, double delta) {
      std::vector<nas::Gates> g;
      for (std::size_t l = 0; l < 3; ++l) {
        double v[3] = {vals[3 * l], vals[3 * l + 1], vals[3 * l + 2]};
        if (l * 3 <= which && which < l * 3 + 3) v[which - 3 * l] -= delta;
        g.push_back(const_gates(v[0], v[1], v[2]));
      }
      return hw::expected_latency(g, table).value().item();
    };
    const double base = build(99, 0.0);
    for (std::size_t which = 0; which < 9; ++which) CHECK(build(which, 0.005) <= base);
  }
}

TEST_CASE("expected costs: gate gradients match finite differences") {
  const auto table = hw::CostTable::synthetic(small_plan());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<nas::Gates> g;
  std::vector<ad::Var> params;
  for (int l = 0; l < 3; ++l) {
    g.push_back(const_gates(u(rng), u(rng), u(rng), u(rng), u(rng)));
    for (const ad::Var* v : {&g.back().g_e3, &g.back().g_k5, &g.back().g_e6, &g.back().g58, &g.back().g916}) {
      params.push_back(*v);
    }
  }
  auto loss = [&] { return ad::add(hw::expected_latency(g, table), hw::expected_model_size(g, table)); };
  const auto r = faqs::testing::grad_check(loss, params);
  CHECK(r.failed == 0);
  CHECK(r.checked == 15);
}

TEST_CASE("pareto loss") {
  const hw::Normalizers n{7.0, 3000.0};
  auto ce = ad::scalar_constant(0.83);
  auto lat = ad::scalar_constant(2.0), ms = ad::scalar_constant(100.0);
  CHECK(hw::pareto_loss(ce, lat, ms, {1, 0, 0}, n).value().item() == 0.83);
  CHECK(hw::pareto_loss(ad::scalar_constant(0.0), ad::scalar_constant(7.0), ad::scalar_constant(3000.0),
                        {0.4, 0.5, 0.1}, n)
            .value()
            .item() == doctest::Approx(0.6).epsilon(1e-15));
  // linear in each cost input
  const hw::ParetoCoefficients c{0.2, 0.3, 0.5};
  auto L = [&](double a, double b, double d) {
    return hw::pareto_loss(ad::scalar_constant(a), ad::scalar_constant(b), ad::scalar_constant(d), c, n).value().item();
  };
  CHECK(L(2, 1, 1) - L(1, 1, 1) == doctest::Approx(L(3, 1, 1) - L(2, 1, 1)).epsilon(1e-12));
  CHECK(L(1, 3, 1) - L(1, 1, 1) == doctest::Approx(2 * (L(1, 2, 1) - L(1, 1, 1))).epsilon(1e-12));
  CHECK(L(1, 1, 5) - L(1, 1, 1) == doctest::Approx(4 * (L(1, 1, 2) - L(1, 1, 1))).epsilon(1e-12));
}

TEST_CASE("pareto coefficient validation") {
  CHECK_NOTHROW(hw::ParetoCoefficients{0.8, 0.1, 0.1}.validate());
  CHECK_NOTHROW(hw::ParetoCoefficients{0.4, 0.5, 0.1}.validate());
  CHECK_THROWS_AS(hw::ParetoCoefficients({0.5, 0.5, 0.5}).validate(), ConfigError);
  CHECK_THROWS_AS(hw::ParetoCoefficients({1.2, -0.1, -0.1}).validate(), ConfigError);
  CHECK_THROWS_AS(hw::pareto_loss(ad::scalar_constant(0), ad::scalar_constant(0), ad::scalar_constant(0),
                                  {0.5, 0.5, 0.5}, {1, 1}),
                  ConfigError);
}

TEST_CASE("synthetic table: exact parameter counts and monotonicity") {
  // C_in = 24, (3,3): 24*72 + 72*9 + 72*24
  CHECK(hw::block_param_count({24, 24, 1}, 3, 3) == 24u * 72u + 72u * 9u + 72u * 24u);
  CHECK(hw::block_param_count({24, 24, 1}, 5, 6) == 24u * 144u + 144u * 25u + 144u * 24u);
  const auto plan = small_plan();
  const auto table = hw::CostTable::synthetic(plan);
  REQUIRE(table.layer_count() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(table.latency(i, Block::K5E6) >= table.latency(i, Block::K3E3));
    CHECK(table.params(i, Block::K5E6) >= table.params(i, Block::K3E3));
    CHECK(table.latency(i, Block::Skip) == 0.0);
    CHECK(table.params(i, Block::Skip) == 0u);
  }
  // stride-2 layer runs at half resolution: lat = 1e-4 k^2 e C_in H W
  CHECK(table.latency(1, Block::K3E3) == doctest::Approx(1e-4 * 9 * 3 * 4 * 16));
  const auto n = hw::full_architecture_costs(table);
  CHECK(n.lat0 == doctest::Approx(table.latency(0, Block::K5E6) + table.latency(1, Block::K5E6) +
                                  table.latency(2, Block::K5E6)));
  CHECK(n.ms0 == 2.0 * static_cast<double>(table.params(0, Block::K5E6) + table.params(1, Block::K5E6) +
                                           table.params(2, Block::K5E6)));
  CHECK_THROWS_AS(table.latency(3, Block::K3E3), ConfigError);
}

TEST_CASE("cost table file round trip and validation") {
  const auto table = hw::CostTable::synthetic(small_plan());
  const std::string path = "hw_proxy_table.txt";
  table.save(path);
  const auto back = hw::CostTable::load(path);
  REQUIRE(back.layer_count() == table.layer_count());
  for (std::size_t i = 0; i < 3; ++i) {
    for (Block b : {Block::K3E3, Block::K3E6, Block::K5E3, Block::K5E6}) {
      CHECK(back.latency(i, b) == table.latency(i, b));
      CHECK(back.params(i, b) == table.params(i, b));
    }
  }
  {
    std::ofstream out(path);
    out << "0 3 3 1.0 10\n0 3 6 2.0 20\n0 5 3 3.0 30\n";
  }
  CHECK_THROWS_AS(hw::CostTable::load(path), ConfigError);
  {
    std::ofstream out(path);
    out << "0 3 3 5.0 10\n0 3 6 2.0 20\n0 5 3 3.0 30\n0 5 6 4.0 40\n";
  }
  CHECK_THROWS_AS(hw::CostTable::load(path), ConfigError);
  {
    std::ofstream out(path);
    out << "# comment\n1 3 3 1.0 10\n1 3 6 2.0 20\n1 5 3 3.0 30\n1 5 6 4.0 40\n";
  }
  CHECK_THROWS_AS(hw::CostTable::load(path), ConfigError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(hw::CostTable::load("does/not/exist.txt"), ConfigError);
}
