#include "faqs/hw_proxy.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "faqs/errors.hpp"

namespace faqs::hw {

namespace {

int slot(nas::Block b) {
  switch (b) {
    case nas::Block::K3E3:
      return 0;
    case nas::Block::K3E6:
      return 1;
    case nas::Block::K5E3:
      return 2;
    case nas::Block::K5E6:
      return 3;
    case nas::Block::Skip:
      break;
  }
  return -1;
}

constexpr nas::Block kSlots[4] = {nas::Block::K3E3, nas::Block::K3E6, nas::Block::K5E3, nas::Block::K5E6};

ad::Var one_minus(const ad::Var& g) { return ad::add_scalar(ad::scalar_mul(g, -1.0), 1.0); }

// g_e3 * sum_{k,e} p(k) p(e) value(k,e)
ad::Var expected_block_value(const nas::Gates& g, const std::array<double, 4>& v) {
  const ad::Var k3 = one_minus(g.g_k5), e3 = one_minus(g.g_e6);
  ad::Var s = ad::scalar_mul(ad::mul(k3, e3), v[0]);
  s = ad::add(s, ad::scalar_mul(ad::mul(k3, g.g_e6), v[1]));
  s = ad::add(s, ad::scalar_mul(ad::mul(g.g_k5, e3), v[2]));
  s = ad::add(s, ad::scalar_mul(ad::mul(g.g_k5, g.g_e6), v[3]));
  return ad::mul(g.g_e3, s);
}

void check_cover(std::span<const nas::Gates> gates, const CostTable& table) {
  if (gates.size() > table.layer_count()) {
    throw ConfigError("cost table has no entry for layer " + std::to_string(table.layer_count()));
  }
}

}  // namespace

void ParetoCoefficients::validate() const {
  for (double v : {alpha, beta, gamma}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("pareto coefficients must be finite and non-negative");
  }
  if (std::abs(alpha + beta + gamma - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "pareto coefficients must sum to 1, got (" << alpha << ", " << beta << ", " << gamma << ")";
    throw ConfigError(os.str());
  }
}

std::uint64_t block_param_count(const nas::LayerSpec& spec, int kernel, int ratio) {
  const std::uint64_t mid = spec.c_in * static_cast<std::uint64_t>(ratio);
  return spec.c_in * mid + mid * static_cast<std::uint64_t>(kernel * kernel) + mid * spec.c_out;
}

CostTable::CostTable(std::vector<std::array<CostEntry, 4>> rows) : rows_(std::move(rows)) { validate(); }

CostTable CostTable::synthetic(const ModelPlan& plan) {
  plan.validate();
  const auto sizes = plan.output_sizes();
  std::vector<std::array<CostEntry, 4>> rows;
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const auto& spec = plan.layers[i];
    std::array<CostEntry, 4> row;
    for (int s = 0; s < 4; ++s) {
      const int k = nas::kernel_size(kSlots[s]), e = nas::expansion_ratio(kSlots[s]);
      const double macs = static_cast<double>(k * k * e) * static_cast<double>(spec.c_in) *
                          static_cast<double>(sizes[i] * sizes[i]);
      row[s] = {1e-4 * macs, block_param_count(spec, k, e)};
    }
    rows.push_back(row);
  }
  return CostTable(std::move(rows));
}

CostTable CostTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cost table '" + path + "'");
  std::map<std::size_t, std::array<CostEntry, 4>> found;
  std::map<std::size_t, std::array<bool, 4>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    long layer = 0;
    int k = 0, e = 0;
    double lat = 0.0;
    long long params = 0;
    if (!(ls >> layer)) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (!(ls >> k >> e >> lat >> params)) throw ConfigError(where + ": expected 'layer kernel ratio latency_ms params'");
    std::string extra;
    if (ls >> extra) throw ConfigError(where + ": trailing field '" + extra + "'");
    if (layer < 0) throw ConfigError(where + ": negative layer index");
    if (params <= 0) throw ConfigError(where + ": param_count must be positive");
    const int s = slot(nas::make_block(k, e));
    auto& flags = seen[static_cast<std::size_t>(layer)];
    if (flags[s]) throw ConfigError(where + ": duplicate entry");
    flags[s] = true;
    found[static_cast<std::size_t>(layer)][s] = {lat, static_cast<std::uint64_t>(params)};
  }
  std::vector<std::array<CostEntry, 4>> rows;
  for (const auto& [layer, row] : found) {
    if (layer != rows.size()) throw ConfigError("cost table: layer " + std::to_string(rows.size()) + " is missing");
    for (int s = 0; s < 4; ++s) {
      if (!seen[layer][s]) {
        throw ConfigError("cost table: layer " + std::to_string(layer) + " lacks block " + nas::block_name(kSlots[s]));
      }
    }
    rows.push_back(row);
  }
  return CostTable(std::move(rows));
}

void CostTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write cost table '" + path + "'");
  out << "# layer kernel ratio latency_ms param_count\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    for (int s = 0; s < 4; ++s) {
      out << i << ' ' << nas::kernel_size(kSlots[s]) << ' ' << nas::expansion_ratio(kSlots[s]) << ' '
          << rows_[i][s].latency_ms << ' ' << rows_[i][s].param_count << '\n';
    }
  }
}

void CostTable::validate() const {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    for (const auto& c : r) {
      if (!std::isfinite(c.latency_ms) || c.latency_ms <= 0.0 || c.param_count == 0) {
        throw ConfigError("cost table: layer " + std::to_string(i) + " has a non-positive entry");
      }
    }
    if (r[3].latency_ms < r[0].latency_ms || r[3].param_count < r[0].param_count) {
      throw ConfigError("cost table: layer " + std::to_string(i) + " has (5,6) cheaper than (3,3)");
    }
  }
}

const CostEntry& CostTable::at(std::size_t layer, nas::Block b) const {
  if (layer >= rows_.size()) throw ConfigError("cost table has no entry for layer " + std::to_string(layer));
  const int s = slot(b);
  if (s < 0) throw UsageError("skip has no cost table entry");
  return rows_[layer][s];
}

double CostTable::latency(std::size_t layer, nas::Block b) const {
  const CostEntry& e = at(layer, b == nas::Block::Skip ? nas::Block::K3E3 : b);
  return b == nas::Block::Skip ? 0.0 : e.latency_ms;
}

std::uint64_t CostTable::params(std::size_t layer, nas::Block b) const {
  const CostEntry& e = at(layer, b == nas::Block::Skip ? nas::Block::K3E3 : b);
  return b == nas::Block::Skip ? 0 : e.param_count;
}

Normalizers full_architecture_costs(const CostTable& table) {
  Normalizers n{0.0, 0.0};
  for (std::size_t i = 0; i < table.layer_count(); ++i) {
    n.lat0 += table.latency(i, nas::Block::K5E6);
    n.ms0 += static_cast<double>(table.params(i, nas::Block::K5E6)) * 16.0 / 8.0;
  }
  return n;
}

ad::Var expected_bits(const nas::Gates& g) {
  if (!g.g58.valid()) return ad::scalar_constant(16.0);
  ad::Var b = ad::add_scalar(ad::scalar_mul(g.g58, 4.0), 4.0);
  return ad::add(b, ad::scalar_mul(ad::mul(g.g58, g.g916), 8.0));
}

ad::Var expected_latency(std::span<const nas::Gates> gates, const CostTable& table) {
  check_cover(gates, table);
  ad::Var total = ad::scalar_constant(0.0);
  for (std::size_t i = 0; i < gates.size(); ++i) {
    std::array<double, 4> v;
    for (int s = 0; s < 4; ++s) v[s] = table.latency(i, kSlots[s]);
    total = ad::add(total, expected_block_value(gates[i], v));
  }
  return total;
}

ad::Var expected_model_size(std::span<const nas::Gates> gates, const CostTable& table) {
  check_cover(gates, table);
  ad::Var total = ad::scalar_constant(0.0);
  for (std::size_t i = 0; i < gates.size(); ++i) {
    std::array<double, 4> v;
    for (int s = 0; s < 4; ++s) v[s] = static_cast<double>(table.params(i, kSlots[s]));
    const ad::Var bytes = ad::scalar_mul(expected_bits(gates[i]), 1.0 / 8.0);
    total = ad::add(total, ad::mul(expected_block_value(gates[i], v), bytes));
  }
  return total;
}

double architecture_latency(std::span<const nas::Block> arch, const CostTable& table) {
  double s = 0.0;
  for (std::size_t i = 0; i < arch.size(); ++i) s += table.latency(i, arch[i]);
  return s;
}

double architecture_model_size(std::span<const nas::Block> arch, std::span<const quant::QuantChoice> bits,
                               const CostTable& table) {
  if (bits.size() != arch.size()) throw UsageError("architecture and quantization policy differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    s += static_cast<double>(table.params(i, arch[i])) * bits[i].bits / 8.0;
  }
  return s;
}

ad::Var pareto_loss(const ad::Var& ce, const ad::Var& lat, const ad::Var& ms, const ParetoCoefficients& coeff,
                    const Normalizers& norm) {
  coeff.validate();
  if (!(norm.lat0 > 0.0) || !(norm.ms0 > 0.0)) throw ConfigError("cost normalizers must be positive");
  ad::Var l = ad::scalar_mul(ce, coeff.alpha);
  l = ad::add(l, ad::scalar_mul(lat, coeff.beta / norm.lat0));
  return ad::add(l, ad::scalar_mul(ms, coeff.gamma / norm.ms0));
}

}  // namespace faqs::hw
