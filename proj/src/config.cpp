#include "faqs/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "faqs/errors.hpp"

namespace faqs {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

class Field {
 public:
  Field(std::string where, std::string key, std::string value)
      : where_(std::move(where)), key_(std::move(key)), value_(std::move(value)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(where_ + ": key '" + key_ + "': " + what + " (got '" + value_ + "')");
  }

  std::uint64_t u64() const { return parse_uint(value_); }

  std::size_t size() const { return static_cast<std::size_t>(u64()); }

  double real() const {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(value_.data(), value_.data() + value_.size(), v);
    if (ec != std::errc{} || p != value_.data() + value_.size() || !std::isfinite(v)) fail("expected a real number");
    return v;
  }

  bool boolean() const {
    if (value_ == "true" || value_ == "1" || value_ == "yes") return true;
    if (value_ == "false" || value_ == "0" || value_ == "no") return false;
    fail("expected true or false");
  }

  const std::string& text() const { return value_; }

  std::vector<nas::LayerSpec> layers() const {
    std::vector<nas::LayerSpec> out;
    for (const auto& item : split(value_, ',')) {
      const auto parts = split(item, ':');
      if (parts.size() != 3) fail("layers are written cin:cout:stride, separated by commas");
      nas::LayerSpec s;
      s.c_in = static_cast<std::size_t>(parse_uint(parts[0]));
      s.c_out = static_cast<std::size_t>(parse_uint(parts[1]));
      s.stride = static_cast<int>(parse_uint(parts[2]));
      out.push_back(s);
    }
    return out;
  }

  nas::Block block() const {
    const auto parts = split(value_, ':');
    if (parts.size() != 2) fail("expected kernel:ratio, e.g. 3:6");
    try {
      return nas::make_block(static_cast<int>(parse_uint(parts[0])), static_cast<int>(parse_uint(parts[1])));
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }

 private:
  std::uint64_t parse_uint(const std::string& s) const {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) fail("expected a non-negative integer");
    return v;
  }

  std::string where_, key_, value_;
};

struct PartialProfile {
  std::optional<double> alpha, beta, gamma;
};

void set_profile(PartialProfile& p, const std::string& key, const Field& f) {
  if (key == "alpha") {
    p.alpha = f.real();
  } else if (key == "beta") {
    p.beta = f.real();
  } else if (key == "gamma") {
    p.gamma = f.real();
  } else {
    f.fail("unknown key in a client section (expected alpha, beta or gamma)");
  }
}

using Setter = std::function<void(RunConfig&, const Field&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s{
      {"rounds", [](RunConfig& c, const Field& f) { c.rounds = f.size(); }},
      {"local_epochs", [](RunConfig& c, const Field& f) { c.local_epochs = f.size(); }},
      {"clients", [](RunConfig& c, const Field& f) { c.clients = f.size(); }},
      {"batch_size", [](RunConfig& c, const Field& f) { c.batch_size = f.size(); }},
      {"finetune_epochs", [](RunConfig& c, const Field& f) { c.finetune_epochs = f.size(); }},
      {"lr_w", [](RunConfig& c, const Field& f) { c.lr_w = f.real(); }},
      {"lr_t", [](RunConfig& c, const Field& f) { c.lr_t = f.real(); }},
      {"seed", [](RunConfig& c, const Field& f) { c.seed = f.u64(); }},
      {"threads", [](RunConfig& c, const Field& f) { c.threads = f.size(); }},
      {"quantize", [](RunConfig& c, const Field& f) { c.quantize = f.boolean(); }},
      {"cost_table", [](RunConfig& c, const Field& f) { c.cost_table = f.text(); }},
      {"num_classes", [](RunConfig& c, const Field& f) { c.data.num_classes = f.size(); }},
      {"samples_per_class", [](RunConfig& c, const Field& f) { c.data.samples_per_class = f.size(); }},
      {"image_channels", [](RunConfig& c, const Field& f) { c.data.channels = f.size(); }},
      {"image_size", [](RunConfig& c, const Field& f) { c.data.height = c.data.width = f.size(); }},
      {"noise_sigma", [](RunConfig& c, const Field& f) { c.data.noise_sigma = f.real(); }},
      {"dataset", [](RunConfig& c, const Field& f) { c.dataset_path = f.text(); }},
      {"lda_alpha", [](RunConfig& c, const Field& f) { c.lda_alpha = f.real(); }},
      {"min_samples", [](RunConfig& c, const Field& f) { c.min_samples = f.size(); }},
      {"equalize", [](RunConfig& c, const Field& f) { c.equalize = f.boolean(); }},
      {"train_fraction", [](RunConfig& c, const Field& f) { c.train_fraction = f.real(); }},
      {"stem_channels", [](RunConfig& c, const Field& f) { c.plan.stem_channels = f.size(); }},
      {"layers", [](RunConfig& c, const Field& f) { c.plan.layers = f.layers(); }},
      {"baseline_block", [](RunConfig& c, const Field& f) { c.baseline_block = f.block(); }},
  };
  return s;
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(local_epochs >= 1, "local_epochs must be at least 1");
  need(clients >= 1, "clients must be at least 1");
  need(clients <= 0xFFFF, "clients must fit in 16 bits");
  need(batch_size >= 1, "batch_size must be at least 1");
  need(lr_w > 0.0, "lr_w must be positive");
  need(lr_t > 0.0, "lr_t must be positive");
  need(threads >= 1, "threads must be at least 1");
  need(lda_alpha > 0.0, "lda_alpha must be positive");
  need(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie strictly between 0 and 1");
  need(data.num_classes >= 2, "num_classes must be at least 2");
  need(data.samples_per_class >= 1, "samples_per_class must be at least 1");
  need(data.noise_sigma >= 0.0, "noise_sigma must be non-negative");
  need(baseline_block != nas::Block::Skip, "baseline_block cannot be skip");
  need(plan.image_channels == data.channels && plan.image_size == data.height && data.height == data.width &&
           plan.num_classes == data.num_classes,
       "model plan and data shape disagree");
  try {
    plan.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("layers: ") + e.what());
  }
  need(plan.layers.size() <= 0xFFFF, "too many layers");
  need(profiles.size() == clients, "expected " + std::to_string(clients) + " client profiles, have " +
                                       std::to_string(profiles.size()));
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    try {
      profiles[i].validate();
    } catch (const ConfigError& e) {
      throw ConfigError("client " + std::to_string(i) + ": " + e.what());
    }
  }
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig c;
  c.plan.layers.clear();
  PartialProfile defaults;
  std::map<std::size_t, PartialProfile> per_client;
  std::optional<std::size_t> section;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string where = source + " line " + std::to_string(no);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": unterminated section header");
      const auto parts = split(trim(std::string_view(t).substr(1, t.size() - 2)), ' ');
      if (parts.size() != 2 || parts[0] != "client") throw ConfigError(where + ": sections are written [client N]");
      section = Field(where, "client", parts[1]).size();
      per_client[*section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const Field f(where, key, trim(std::string_view(t).substr(eq + 1)));
    if (section) {
      set_profile(per_client[*section], key, f);
    } else if (key == "alpha" || key == "beta" || key == "gamma") {
      set_profile(defaults, key, f);
    } else if (const auto it = setters().find(key); it != setters().end()) {
      it->second(c, f);
    } else {
      f.fail("unknown key");
    }
  }
  c.plan.image_channels = c.data.channels;
  c.plan.image_size = c.data.height;
  c.plan.num_classes = c.data.num_classes;
  for (const auto& [id, _] : per_client) {
    if (id >= c.clients) {
      throw ConfigError(source + ": section [client " + std::to_string(id) + "] but clients = " +
                        std::to_string(c.clients));
    }
  }
  c.profiles.clear();
  for (std::size_t i = 0; i < c.clients; ++i) {
    hw::ParetoCoefficients p;
    const PartialProfile own = per_client.count(i) ? per_client[i] : PartialProfile{};
    p.alpha = own.alpha.value_or(defaults.alpha.value_or(1.0));
    p.beta = own.beta.value_or(defaults.beta.value_or(0.0));
    p.gamma = own.gamma.value_or(defaults.gamma.value_or(0.0));
    c.profiles.push_back(p);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

std::string write_config(const RunConfig& c) {
  std::ostringstream o;
  o << "rounds = " << c.rounds << "\nlocal_epochs = " << c.local_epochs << "\nclients = " << c.clients
    << "\nbatch_size = " << c.batch_size << "\nfinetune_epochs = " << c.finetune() << "\nlr_w = " << fmt_real(c.lr_w)
    << "\nlr_t = " << fmt_real(c.lr_t) << "\nseed = " << c.seed << "\nthreads = " << c.threads
    << "\nquantize = " << (c.quantize ? "true" : "false") << '\n';
  if (!c.cost_table.empty()) o << "cost_table = " << c.cost_table << '\n';
  o << "num_classes = " << c.data.num_classes << "\nsamples_per_class = " << c.data.samples_per_class
    << "\nimage_channels = " << c.data.channels << "\nimage_size = " << c.data.height
    << "\nnoise_sigma = " << fmt_real(c.data.noise_sigma) << '\n';
  if (!c.dataset_path.empty()) o << "dataset = " << c.dataset_path << '\n';
  o << "lda_alpha = " << fmt_real(c.lda_alpha) << "\nmin_samples = " << c.min_samples
    << "\nequalize = " << (c.equalize ? "true" : "false") << "\ntrain_fraction = " << fmt_real(c.train_fraction)
    << "\nstem_channels = " << c.plan.stem_channels << "\nlayers = ";
  for (std::size_t i = 0; i < c.plan.layers.size(); ++i) {
    const auto& l = c.plan.layers[i];
    o << (i ? ", " : "") << l.c_in << ':' << l.c_out << ':' << l.stride;
  }
  o << "\nbaseline_block = " << nas::kernel_size(c.baseline_block) << ':' << nas::expansion_ratio(c.baseline_block)
    << '\n';
  for (std::size_t i = 0; i < c.profiles.size(); ++i) {
    o << "\n[client " << i << "]\nalpha = " << fmt_real(c.profiles[i].alpha)
      << "\nbeta = " << fmt_real(c.profiles[i].beta) << "\ngamma = " << fmt_real(c.profiles[i].gamma) << '\n';
  }
  return o.str();
}

}  // namespace faqs
