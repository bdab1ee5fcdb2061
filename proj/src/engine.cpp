#include "faqs/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "faqs/errors.hpp"
#include "faqs/rng.hpp"

namespace faqs::engine {

namespace {

constexpr std::size_t kEvalBatch = 128;

// Salts for derive_seed, one per independent random stream.
constexpr std::uint64_t kDataSalt = 0xDA7A;
constexpr std::uint64_t kPartitionSalt = 0x9A27;
constexpr std::uint64_t kSplitSalt = 0x5B17;
constexpr std::uint64_t kInitSalt = 0x1417;
constexpr std::uint64_t kClientSalt = 0xC11E;
constexpr std::uint64_t kFinetuneSalt = 0xF17E;

std::mt19937_64 client_rng(std::uint64_t seed, std::uint64_t salt, std::size_t client, std::uint64_t round) {
  return std::mt19937_64(derive_seed(derive_seed(derive_seed(seed, salt), client), round));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first failure in
// index order is rethrown, so errors do not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_finite(const ad::Var& v, const char* what, std::size_t step) {
  if (!v.value().all_finite()) {
    throw DivergenceError(std::string(what) + " is not finite at step " + std::to_string(step));
  }
}

// Plain SGD. Every gradient is checked before any parameter moves.
void sgd_step(const std::vector<ad::Var*>& params, double lr, std::size_t step) {
  for (ad::Var* p : params) {
    if (!p->grad().all_finite()) throw DivergenceError("gradient is not finite at step " + std::to_string(step));
  }
  for (ad::Var* p : params) {
    if (lr != 0.0) {
      auto v = p->mutable_value().data();
      const auto g = p->grad().data();
      bool fits = true;
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] -= lr * g[i];
        // anything float32 cannot carry will not survive the next exchange
        fits = fits && std::abs(v[i]) <= std::numeric_limits<float>::max();
      }
      if (!fits) throw DivergenceError("parameters overflowed at step " + std::to_string(step));
    }
    p->zero_grad();
  }
}

template <class StepFn>
TrainTrace run_epochs(const ClientData& data, std::size_t epochs, std::size_t batch_size, std::mt19937_64& rng,
                      StepFn step) {
  TrainTrace trace;
  std::vector<std::size_t> order = data.train;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(batch_size, order.size() - b));
      const ad::Var images = ad::constant(data.ds->gather_images(idx));
      const std::vector<int> labels = data.ds->gather_labels(idx);
      trace.step_losses.push_back(step(images, labels, trace.step_losses.size()));
    }
  }
  return trace;
}

template <class Logits>
double accuracy_of(const data::Dataset& ds, std::span<const std::size_t> idx, Logits logits_fn) {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < idx.size(); b += kEvalBatch) {
    const auto part = idx.subspan(b, std::min(kEvalBatch, idx.size() - b));
    const Tensor logits = logits_fn(ad::constant(ds.gather_images(part))).value();
    const std::size_t K = logits.dim(1);
    for (std::size_t n = 0; n < part.size(); ++n) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k) {
        if (logits[n * K + k] > logits[n * K + best]) best = k;
      }
      correct += static_cast<int>(best) == ds.labels[part[n]];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

std::vector<nas::Gates> current_gates(const Network& net, bool quantize) {
  std::vector<nas::Gates> g;
  for (const auto& l : net.layers()) g.push_back(l.compose_gates(quantize));
  return g;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Upload, aggregate, pull and install for one round; every message passes
// through the byte format and is checked against the ledger.
template <class Build>
void exchange(std::vector<Network>& nets, std::uint32_t round, const ModelPlan& plan, Report& rep, Build build) {
  fl::CommLedger& ledger = rep.ledger;
  WireRound& wire = rep.wire.emplace_back(WireRound{round, 0, 0});
  auto transmit = [&](const fl::MaskedUpdate& m, fl::Direction d) {
    const auto bytes = fl::serialize(m);
    wire.bytes += bytes.size();
    wire.framing_bits += fl::framing_bits(m);
    const std::uint64_t counted = ledger.record(m, d, plan);
    if (8 * bytes.size() != counted + fl::framing_bits(m)) {
      throw ProtocolError("round " + std::to_string(round) + ", client " + std::to_string(m.client_id) + ": " +
                          fl::direction_name(d) + " of " + std::to_string(bytes.size()) +
                          " bytes disagrees with the ledger");
    }
    return fl::deserialize(bytes);
  };
  std::vector<fl::MaskedUpdate> received;
  std::vector<fl::DecodedUpdate> decoded;
  for (std::size_t c = 0; c < nets.size(); ++c) {
    received.push_back(transmit(build(nets[c], static_cast<std::uint16_t>(c)), fl::Direction::Upload));
    decoded.push_back(fl::decode(received.back(), plan));
  }
  const auto agg = fl::aggregate(decoded);
  for (std::size_t c = 0; c < nets.size(); ++c) {
    const auto pulled = transmit(fl::encode_pull(agg[c], received[c]), fl::Direction::Pull);
    fl::install(nets[c], fl::decode(pulled, plan));
  }
}

std::vector<Network> common_start(const RunConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, kInitSalt));
  Network base(cfg.plan, rng);
  if (!cfg.quantize) {
    for (auto& l : base.layers()) l.init_thresholds(false);
  }
  std::vector<Network> nets;
  for (std::size_t c = 0; c < cfg.clients; ++c) nets.push_back(base.clone());
  return nets;
}

template <class Fn>
auto with_context(std::uint32_t round, std::size_t client, Fn fn) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    throw DivergenceError("round " + std::to_string(round) + ", client " + std::to_string(client) + ": " + e.what());
  }
}

std::string arch_string(std::span<const nas::Block> arch) {
  std::string s;
  for (nas::Block b : arch) s += (s.empty() ? "" : " ") + nas::block_name(b);
  return s;
}

std::string bits_string(std::span<const quant::QuantChoice> q) {
  std::string s;
  for (auto b : q) s += (s.empty() ? "" : " ") + std::to_string(b.bits);
  return s;
}

}  // namespace

double TrainTrace::mean_loss() const {
  if (step_losses.empty()) return 0.0;
  return std::accumulate(step_losses.begin(), step_losses.end(), 0.0) / static_cast<double>(step_losses.size());
}

TrainTrace local_search(Network& net, const ClientData& data, const hw::ParetoCoefficients& coeff,
                        const hw::CostTable& table, const hw::Normalizers& norm, const SearchSettings& s,
                        std::mt19937_64& rng) {
  const auto weights = net.weight_params();
  const auto thresholds = net.threshold_params();
  return run_epochs(data, s.epochs, s.batch_size, rng, [&](const ad::Var& images, const std::vector<int>& labels,
                                                           std::size_t step) {
    const SoftForward f = net.forward_soft(images, s.quantize);
    const ad::Var ce = ad::softmax_cross_entropy(f.logits, labels);
    const ad::Var lat = hw::expected_latency(f.gates, table);
    const ad::Var ms = hw::expected_model_size(f.gates, table);
    const ad::Var loss = hw::pareto_loss(ce, lat, ms, coeff, norm);
    check_finite(loss, "loss", step);
    ad::backward(loss);
    sgd_step(weights, s.lr_w, step);
    sgd_step(thresholds, s.lr_t, step);
    return loss.value().item();
  });
}

TrainTrace train_fixed(Network& net, std::span<const nas::Block> arch, std::span<const quant::QuantChoice> bits,
                       const ClientData& data, std::size_t epochs, std::size_t batch_size, double lr_w,
                       std::mt19937_64& rng) {
  const auto weights = net.weight_params();
  return run_epochs(data, epochs, batch_size, rng, [&](const ad::Var& images, const std::vector<int>& labels,
                                                       std::size_t step) {
    const ad::Var loss = ad::softmax_cross_entropy(net.forward_fixed(images, arch, bits), labels);
    check_finite(loss, "loss", step);
    ad::backward(loss);
    sgd_step(weights, lr_w, step);
    return loss.value().item();
  });
}

double evaluate_soft(const Network& net, const data::Dataset& ds, std::span<const std::size_t> idx, bool quantize) {
  return accuracy_of(ds, idx, [&](const ad::Var& x) { return net.forward_soft(x, quantize).logits; });
}

double evaluate_fixed(const Network& net, const data::Dataset& ds, std::span<const std::size_t> idx,
                      std::span<const nas::Block> arch, std::span<const quant::QuantChoice> bits) {
  return accuracy_of(ds, idx, [&](const ad::Var& x) { return net.forward_fixed(x, arch, bits); });
}

void discard_unselected(Network& net, std::span<const nas::Block> arch) {
  if (arch.size() != net.layers().size()) throw UsageError("architecture length does not match the network");
  for (std::size_t i = 0; i < arch.size(); ++i) {
    auto& layer = net.layers()[i];
    const auto masks = fl::layer_element_masks(layer.spec(), arch[i]);
    const auto ws = layer.weights();
    for (std::size_t t = 0; t < ws.size(); ++t) {
      auto v = ws[t]->mutable_value().data();
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (!masks[t][k]) v[k] = 0.0;
      }
    }
  }
}

FinalModel local_finetune(Network& net, const ClientData& data, const hw::CostTable& table, std::size_t epochs,
                          std::size_t batch_size, double lr_w, std::mt19937_64& rng) {
  FinalModel f;
  f.arch = net.select_architecture();
  f.quant = net.select_quantization();
  discard_unselected(net, f.arch);
  train_fixed(net, f.arch, f.quant, data, epochs, batch_size, lr_w, rng);
  f.accuracy = evaluate_fixed(net, *data.ds, data.test, f.arch, f.quant);
  f.latency = hw::architecture_latency(f.arch, table);
  f.model_size = hw::architecture_model_size(f.arch, f.quant, table);
  return f;
}

double Report::final_mean_accuracy() const {
  if (metrics.empty()) return 0.0;
  const std::uint32_t last = metrics.back().round;
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& m : metrics) {
    if (m.round == last) s += m.accuracy, ++n;
  }
  return s / static_cast<double>(n);
}

Environment make_environment(const RunConfig& cfg) {
  cfg.validate();
  Environment env;
  if (cfg.dataset_path.empty()) {
    data::SyntheticSpec spec = cfg.data;
    spec.seed = derive_seed(cfg.seed, kDataSalt);
    env.dataset = data::make_synthetic(spec);
  } else {
    env.dataset = data::load_binary(cfg.dataset_path);
    if (env.dataset.channels() != cfg.plan.image_channels || env.dataset.height() != cfg.plan.image_size ||
        env.dataset.width() != cfg.plan.image_size || env.dataset.num_classes != cfg.plan.num_classes) {
      throw ConfigError("dataset '" + cfg.dataset_path + "' does not match image_channels/image_size/num_classes");
    }
  }
  auto parts = data::lda_partition(env.dataset,
                                   {cfg.clients, cfg.lda_alpha, derive_seed(cfg.seed, kPartitionSalt), cfg.min_samples});
  if (cfg.equalize) parts = data::equalize(std::move(parts), derive_seed(cfg.seed, kPartitionSalt + 1));
  for (std::size_t c = 0; c < cfg.clients; ++c) {
    auto split = data::holdout_split(parts[c], cfg.train_fraction, derive_seed(derive_seed(cfg.seed, kSplitSalt), c));
    if (split.train.empty() || split.test.empty()) {
      throw ConfigError("client " + std::to_string(c) + " has " + std::to_string(parts[c].size()) +
                        " samples, too few for a train/held-out split; raise min_samples or samples_per_class");
    }
    env.clients.push_back({&env.dataset, std::move(split.train), std::move(split.test)});
  }
  env.table = cfg.cost_table.empty() ? hw::CostTable::synthetic(cfg.plan) : hw::CostTable::load(cfg.cost_table);
  if (env.table.layer_count() != cfg.plan.layers.size()) {
    throw ConfigError("cost table covers " + std::to_string(env.table.layer_count()) + " layers, the plan has " +
                      std::to_string(cfg.plan.layers.size()));
  }
  env.norm = hw::full_architecture_costs(env.table);
  return env;
}

Federation::Federation(const RunConfig& cfg) : cfg_(cfg), env_(make_environment(cfg)), nets_(common_start(cfg)) {
  // ClientData points into env_.dataset; fix the pointers after the move.
  for (auto& c : env_.clients) c.ds = &env_.dataset;
  report_.method = "faqs";
  report_.layer_count = cfg_.plan.layers.size();
}

void Federation::run_round(std::uint32_t round) {
  std::vector<double> losses(nets_.size());
  const SearchSettings s{cfg_.local_epochs, cfg_.batch_size, cfg_.lr_w, cfg_.lr_t, cfg_.quantize};
  parallel_for(nets_.size(), cfg_.threads, [&](std::size_t c) {
    auto rng = client_rng(cfg_.seed, kClientSalt, c, round);
    losses[c] = with_context(round, c, [&] {
      return local_search(nets_[c], env_.clients[c], cfg_.profiles[c], env_.table, env_.norm, s, rng).mean_loss();
    });
  });
  exchange(nets_, round, cfg_.plan, report_,
           [&](const Network& n, std::uint16_t c) { return fl::build_update(n, c, round); });
  record_metrics(round, losses);
}

void Federation::record_metrics(std::uint32_t round, const std::vector<double>& losses) {
  std::vector<MetricRow> rows(nets_.size());
  parallel_for(nets_.size(), cfg_.threads, [&](std::size_t c) {
    MetricRow& m = rows[c];
    m.round = round;
    m.client = static_cast<std::uint16_t>(c);
    m.train_loss = losses[c];
    m.accuracy = evaluate_soft(nets_[c], env_.dataset, env_.clients[c].test, cfg_.quantize);
    const auto gates = current_gates(nets_[c], cfg_.quantize);
    m.expected_lat = hw::expected_latency(gates, env_.table).value().item();
    m.expected_ms = hw::expected_model_size(gates, env_.table).value().item();
  });
  for (auto& m : rows) {
    m.bits_uploaded = report_.ledger.bits_for(round, m.client, fl::Direction::Upload);
    m.bits_pulled = report_.ledger.bits_for(round, m.client, fl::Direction::Pull);
    report_.metrics.push_back(m);
  }
}

void Federation::finetune() {
  const std::size_t epochs = cfg_.rounds == 0 ? 0 : cfg_.finetune();
  std::vector<FinalModel> finals(nets_.size());
  parallel_for(nets_.size(), cfg_.threads, [&](std::size_t c) {
    const double soft = evaluate_soft(nets_[c], env_.dataset, env_.clients[c].test, cfg_.quantize);
    auto rng = client_rng(cfg_.seed, kFinetuneSalt, c, 0);
    finals[c] = with_context(static_cast<std::uint32_t>(cfg_.rounds), c, [&] {
      return local_finetune(nets_[c], env_.clients[c], env_.table, epochs, cfg_.batch_size, cfg_.lr_w, rng);
    });
    finals[c].client = static_cast<std::uint16_t>(c);
    finals[c].coeff = cfg_.profiles[c];
    finals[c].search_accuracy = soft;
  });
  report_.finals = std::move(finals);
}

Report run_faqs(const RunConfig& cfg) {
  Federation fed(cfg);
  fed.record_metrics(0, std::vector<double>(cfg.clients, 0.0));
  for (std::uint32_t r = 1; r <= cfg.rounds; ++r) fed.run_round(r);
  fed.finetune();
  return fed.take_report();
}

Report run_fedavg(const RunConfig& cfg) {
  Environment env = make_environment(cfg);
  for (auto& c : env.clients) c.ds = &env.dataset;
  std::vector<Network> nets = common_start(cfg);
  const std::vector<nas::Block> arch(cfg.plan.layers.size(), cfg.baseline_block);
  const std::vector<quant::QuantChoice> none;
  double size_bytes = 0.0;
  for (std::size_t i = 0; i < arch.size(); ++i) size_bytes += static_cast<double>(env.table.params(i, arch[i])) * 4.0;
  const double latency = hw::architecture_latency(arch, env.table);

  Report rep;
  rep.method = "fedavg";
  rep.layer_count = cfg.plan.layers.size();
  auto metrics = [&](std::uint32_t round, const std::vector<double>& losses) {
    std::vector<MetricRow> rows(nets.size());
    parallel_for(nets.size(), cfg.threads, [&](std::size_t c) {
      rows[c] = {round, static_cast<std::uint16_t>(c), losses[c],
                 evaluate_fixed(nets[c], env.dataset, env.clients[c].test, arch, none), latency, size_bytes,
                 rep.ledger.bits_for(round, static_cast<std::uint16_t>(c), fl::Direction::Upload),
                 rep.ledger.bits_for(round, static_cast<std::uint16_t>(c), fl::Direction::Pull)};
    });
    rep.metrics.insert(rep.metrics.end(), rows.begin(), rows.end());
  };
  metrics(0, std::vector<double>(cfg.clients, 0.0));
  for (std::uint32_t r = 1; r <= cfg.rounds; ++r) {
    std::vector<double> losses(nets.size());
    parallel_for(nets.size(), cfg.threads, [&](std::size_t c) {
      auto rng = client_rng(cfg.seed, kClientSalt, c, r);
      losses[c] = with_context(r, c, [&] {
        return train_fixed(nets[c], arch, none, env.clients[c], cfg.local_epochs, cfg.batch_size, cfg.lr_w, rng)
            .mean_loss();
      });
    });
    exchange(nets, r, cfg.plan, rep, [&](const Network& n, std::uint16_t c) {
      return fl::build_fixed_update(n, c, r, cfg.baseline_block, fl::kRawFloatBits);
    });
    metrics(r, losses);
  }
  for (std::size_t c = 0; c < nets.size(); ++c) {
    FinalModel f;
    f.client = static_cast<std::uint16_t>(c);
    f.coeff = cfg.profiles[c];
    f.arch = arch;
    f.quant.assign(arch.size(), quant::QuantChoice{fl::kRawFloatBits});
    f.accuracy = f.search_accuracy = evaluate_fixed(nets[c], env.dataset, env.clients[c].test, arch, none);
    f.latency = latency;
    f.model_size = size_bytes;
    rep.finals.push_back(f);
  }
  return rep;
}

fl::CommLedger edd_ledger(const RunConfig& cfg) { return fl::multipath_ledger(cfg.plan, cfg.clients, cfg.rounds, 28); }

std::vector<AccountRow> account(std::optional<std::size_t> c_in, double masked_gamma) {
  std::vector<AccountRow> rows;
  if (c_in) {
    const nas::LayerSpec s{*c_in, *c_in, 1};
    rows = {{"FedAvg", 1.0, static_cast<double>(hw::block_param_count(s, 3, 6)), 32, 0},
            {"FedNAS+EDD", 1.0, static_cast<double>(fl::multipath_params(s)), 28, 0},
            {"FAQS", masked_gamma, static_cast<double>(hw::block_param_count(s, 5, 6)), 16, 0}};
  } else {
    rows = {{"FedAvg", 1.0, 9000, 32, 0}, {"FedNAS+EDD", 1.0, 25000, 28, 0}, {"FAQS", masked_gamma, 9000, 16, 0}};
  }
  for (auto& r : rows) r.kb = fl::bits_to_kb(fl::block_comm_bits(r.gamma, r.n_params, r.q_bits));
  return rows;
}

std::string format_account(const std::vector<AccountRow>& rows) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s %8s %10s %6s %12s\n", "method", "gamma", "N", "Q", "Comm (KB)");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %8.4g %10.0f %6.0f %12.2f\n", r.method.c_str(), r.gamma, r.n_params, r.q_bits,
                  r.kb);
    out += buf;
  }
  return out;
}

void write_metrics_csv(const Report& r, std::ostream& out) {
  out << "round,client,train_loss,accuracy,expected_lat,expected_ms,bits_uploaded,bits_pulled\n";
  for (const auto& m : r.metrics) {
    out << m.round << ',' << m.client << ',' << fmt(m.train_loss) << ',' << fmt(m.accuracy) << ','
        << fmt(m.expected_lat) << ',' << fmt(m.expected_ms) << ',' << m.bits_uploaded << ',' << m.bits_pulled << '\n';
  }
}

void write_final_csv(const Report& r, std::ostream& out) {
  out << "client,alpha,beta,gamma,architecture,bits,search_accuracy,accuracy,latency,model_size_bytes\n";
  for (const auto& f : r.finals) {
    out << f.client << ',' << fmt(f.coeff.alpha) << ',' << fmt(f.coeff.beta) << ',' << fmt(f.coeff.gamma) << ','
        << arch_string(f.arch) << ',' << bits_string(f.quant) << ',' << fmt(f.search_accuracy) << ','
        << fmt(f.accuracy) << ',' << fmt(f.latency) << ',' << fmt(f.model_size) << '\n';
  }
}

void write_report(const Report& r, const std::string& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    const auto path = std::filesystem::path(dir) / (prefix + name);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write '" + path.string() + "'");
    return out;
  };
  {
    auto out = open("metrics.csv");
    write_metrics_csv(r, out);
  }
  {
    auto out = open("ledger.csv");
    r.ledger.write_csv(out, r.layer_count);
  }
  if (!r.finals.empty()) {
    auto out = open("final.csv");
    write_final_csv(r, out);
  }
}

std::string summarize(const Report& faqs, const Report* fedavg) {
  std::ostringstream o;
  const std::uint32_t rounds = faqs.ledger.max_round();
  o << "rounds: " << rounds << "\n";
  auto line = [&](const Report& r) {
    const double total = static_cast<double>(fl::comm_cost(r.ledger));
    o << r.method << ": total " << fmt(fl::bits_to_kb(total)) << " KB";
    if (rounds > 0) o << ", per round " << fmt(fl::bits_to_kb(total / rounds)) << " KB";
    o << ", final mean held-out accuracy " << fmt(r.final_mean_accuracy()) << "\n";
  };
  line(faqs);
  if (fedavg) {
    line(*fedavg);
    const auto a = fl::comm_cost(faqs.ledger), b = fl::comm_cost(fedavg->ledger);
    if (a > 0) o << "fedavg / faqs total bits: " << fmt(static_cast<double>(b) / static_cast<double>(a)) << "\n";
  }
  o << "\nfinal models\n";
  for (const auto& f : faqs.finals) {
    o << "client " << f.client << " (" << fmt(f.coeff.alpha) << ", " << fmt(f.coeff.beta) << ", " << fmt(f.coeff.gamma)
      << "): accuracy " << fmt(f.accuracy) << ", latency " << fmt(f.latency) << " ms, size " << fmt(f.model_size)
      << " bytes\n  blocks: " << arch_string(f.arch) << "\n  bits:   " << bits_string(f.quant) << "\n";
  }
  return o.str();
}

}  // namespace faqs::engine
