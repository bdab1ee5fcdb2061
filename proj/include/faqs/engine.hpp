#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faqs/config.hpp"
#include "faqs/data.hpp"
#include "faqs/hw_proxy.hpp"
#include "faqs/model.hpp"
#include "faqs/protocol.hpp"

// Federated search rounds, final finetuning and the FedAvg baseline.
namespace faqs::engine {

struct ClientData {
  const data::Dataset* ds = nullptr;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct SearchSettings {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  double lr_w = 0.05;
  double lr_t = 0.05;  // 0 freezes the thresholds
  bool quantize = true;
};

struct TrainTrace {
  std::vector<double> step_losses;
  double mean_loss() const;
};

// SGD on weights and thresholds against the Pareto loss of the soft model.
// Throws DivergenceError on a non-finite loss or gradient.
TrainTrace local_search(Network& net, const ClientData& data, const hw::ParetoCoefficients& coeff,
                        const hw::CostTable& table, const hw::Normalizers& norm, const SearchSettings& s,
                        std::mt19937_64& rng);

// SGD on the weights of a fixed architecture; cross-entropy only. An empty
// `bits` trains at full precision, otherwise straight-through quantization.
TrainTrace train_fixed(Network& net, std::span<const nas::Block> arch, std::span<const quant::QuantChoice> bits,
                       const ClientData& data, std::size_t epochs, std::size_t batch_size, double lr_w,
                       std::mt19937_64& rng);

double evaluate_soft(const Network& net, const data::Dataset& ds, std::span<const std::size_t> idx, bool quantize);
double evaluate_fixed(const Network& net, const data::Dataset& ds, std::span<const std::size_t> idx,
                      std::span<const nas::Block> arch, std::span<const quant::QuantChoice> bits);

// Zeroes every weight outside the selected blocks; skipped layers lose all nine tensors.
void discard_unselected(Network& net, std::span<const nas::Block> arch);

struct FinalModel {
  std::uint16_t client = 0;
  hw::ParetoCoefficients coeff;
  std::vector<nas::Block> arch;
  std::vector<quant::QuantChoice> quant;
  double search_accuracy = 0.0;  // soft model before finetuning
  double accuracy = 0.0;
  double latency = 0.0;     // cost-table sum over the architecture
  double model_size = 0.0;  // bytes
};

// Freezes architecture and bit widths, discards unselected regions, trains.
FinalModel local_finetune(Network& net, const ClientData& data, const hw::CostTable& table, std::size_t epochs,
                          std::size_t batch_size, double lr_w, std::mt19937_64& rng);

struct MetricRow {
  std::uint32_t round = 0;
  std::uint16_t client = 0;
  double train_loss = 0.0;
  double accuracy = 0.0;
  double expected_lat = 0.0;
  double expected_ms = 0.0;
  std::uint64_t bits_uploaded = 0;
  std::uint64_t bits_pulled = 0;
};

// What actually crossed the wire in one round, both directions.
struct WireRound {
  std::uint32_t round = 0;
  std::uint64_t bytes = 0;
  std::uint64_t framing_bits = 0;
};

struct Report {
  std::string method;  // "faqs" or "fedavg"
  std::size_t layer_count = 0;
  std::vector<MetricRow> metrics;
  fl::CommLedger ledger;
  std::vector<WireRound> wire;
  std::vector<FinalModel> finals;

  // Mean held-out accuracy over clients at the last recorded round.
  double final_mean_accuracy() const;
};

// Dataset, shards and the cost table a run works on.
struct Environment {
  data::Dataset dataset;
  std::vector<ClientData> clients;
  hw::CostTable table;
  hw::Normalizers norm;
};
Environment make_environment(const RunConfig& cfg);

class Federation {
 public:
  explicit Federation(const RunConfig& cfg);

  // One round of local search, masked upload, aggregation and masked pull.
  void run_round(std::uint32_t round);
  // Metrics of every client at the current state (soft model, held-out split).
  void record_metrics(std::uint32_t round, const std::vector<double>& losses);
  void finetune();

  const Report& report() const { return report_; }
  Report take_report() { return std::move(report_); }
  const std::vector<Network>& networks() const { return nets_; }
  const Environment& environment() const { return env_; }

 private:
  RunConfig cfg_;
  Environment env_;
  std::vector<Network> nets_;
  Report report_;
};

Report run_faqs(const RunConfig& cfg);
Report run_fedavg(const RunConfig& cfg);

// Search-time analytic ledger for a multi-path supernet with additive widths.
fl::CommLedger edd_ledger(const RunConfig& cfg);

struct AccountRow {
  std::string method;
  double gamma = 0.0;
  double n_params = 0.0;
  double q_bits = 0.0;
  double kb = 0.0;
};
// Both-direction cost of one block per method. Without c_in the reference
// constants are used; with it, N is counted for a c_in -> c_in block.
std::vector<AccountRow> account(std::optional<std::size_t> c_in, double masked_gamma);
std::string format_account(const std::vector<AccountRow>& rows);

// metrics.csv, ledger.csv and final.csv (when finals exist), each with `prefix`.
void write_report(const Report& r, const std::string& dir, const std::string& prefix = "");
void write_metrics_csv(const Report& r, std::ostream& out);
void write_final_csv(const Report& r, std::ostream& out);

// Human-readable comparison; every figure is read from the reports.
std::string summarize(const Report& faqs, const Report* fedavg);

}  // namespace faqs::engine
