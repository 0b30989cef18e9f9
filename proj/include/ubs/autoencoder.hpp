#pragma once

// Baseline mirror-MLP autoencoders.
//   Auto-TAB: one row per session (F wide), mini-batched across sessions.
//   Auto-UBS: one row per user, real sessions packed front to back and
//             zero-padded to D*S*F; one step per user.
// Both emit the same UserScore records as the transformer.

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/numcore.hpp"
#include "ubs/score.hpp"
#include "ubs/sequencing.hpp"

namespace ubs::autoencoder {

using nn::Mat;
using nn::Param;
using nn::Tape;
using nn::Var;

enum class Variant { Tab, Ubs };

inline std::string_view to_string(Variant v) { return v == Variant::Tab ? "auto-tab" : "auto-ubs"; }

struct MlpAeConfig {
  int input_width = 0;
  std::vector<int> hidden{64, 16};
  double dropout = 0.1;
  double learning_rate = 1e-3;
  int epochs = 50;
  std::uint64_t seed = 0;
  int batch_size = 32;  // Auto-TAB only
  double early_stop_delta = 1e-6;
  int early_stop_patience = 5;

  void validate() const {
    if (input_width <= 0) fail("ConfigError", "autoencoder input width must be positive");
    if (hidden.empty()) fail("ConfigError", "autoencoder needs at least one hidden layer");
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      if (hidden[i] <= 0) fail("ConfigError", "hidden widths must be positive");
      if (i > 0 && hidden[i] >= hidden[i - 1]) fail("ConfigError", "hidden widths must strictly decrease");
    }
    if (hidden.back() >= input_width) fail("ConfigError", "bottleneck must be narrower than the input");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("ConfigError", "dropout must be in [0,1)");
    if (epochs < 0 || batch_size <= 0) fail("ConfigError", "epochs >= 0 and batch_size > 0 required");
  }
};

inline void to_json(nlohmann::json& j, const MlpAeConfig& c) {
  j = {{"input_width", c.input_width}, {"hidden", c.hidden},     {"dropout", c.dropout},
       {"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"seed", c.seed},
       {"batch_size", c.batch_size}, {"early_stop_delta", c.early_stop_delta},
       {"early_stop_patience", c.early_stop_patience}};
}

inline void from_json(const nlohmann::json& j, MlpAeConfig& c) {
  c.input_width = j.at("input_width");
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.dropout = j.at("dropout");
  c.learning_rate = j.at("learning_rate");
  c.epochs = j.at("epochs");
  c.seed = j.at("seed");
  c.batch_size = j.at("batch_size");
  c.early_stop_delta = j.at("early_stop_delta");
  c.early_stop_patience = j.at("early_stop_patience");
}

class MlpAutoencoder {
 public:
  explicit MlpAutoencoder(MlpAeConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::vector<int> widths{cfg_.input_width};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    for (auto it = cfg_.hidden.rbegin() + 1; it != cfg_.hidden.rend(); ++it) widths.push_back(*it);
    widths.push_back(cfg_.input_width);
    Rng rng(derive_seed(cfg_.seed, 0));
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const auto in = static_cast<std::size_t>(widths[l]);
      const auto out = static_cast<std::size_t>(widths[l + 1]);
      const std::string p = "layer" + std::to_string(l) + ".";
      weights_.emplace_back(p + "w", nn::xavier_uniform(in, out, rng));
      biases_.emplace_back(p + "b", Mat(1, out));
    }
  }

  const MlpAeConfig& config() const { return cfg_; }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }
  std::vector<const Param*> parameters() const {
    auto ps = const_cast<MlpAutoencoder*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
  std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

  // ReLU + dropout after every hidden layer; linear output.
  Var forward(Tape& tape, const Mat& x, bool train, Rng& rng) const {
    if (x.cols != static_cast<std::size_t>(cfg_.input_width))
      fail("ShapeMismatch", "autoencoder input width " + std::to_string(x.cols));
    Var h = tape.constant(x);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = nn::add_row(nn::matmul(h, tape.param(weights_[l])), tape.param(biases_[l]));
      if (l + 1 < weights_.size()) h = nn::dropout(nn::relu(h), cfg_.dropout, rng, train);
    }
    return h;
  }

  Mat reconstruct(const Mat& x) const {
    Tape tape;
    Rng unused(0);
    return forward(tape, x, false, unused).value();
  }

 private:
  MlpAeConfig cfg_;
  std::vector<Param> weights_;
  std::vector<Param> biases_;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t parameter_count = 0;
  std::size_t steps = 0;
  bool early_stopped = false;

  nlohmann::json to_json() const {
    return {{"epoch_loss", epoch_loss}, {"parameter_count", parameter_count}, {"steps", steps},
            {"early_stopped", early_stopped}};
  }
};

// ---------------------------------------------------------------------------
// Input arrangements

// All real session rows of a map, user by user.
inline Mat session_rows(const UbsTensor& t) {
  const auto slots = t.valid_slots();
  const auto F = static_cast<std::size_t>(t.dims.features);
  Mat m(slots.size(), F);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto r = t.row(slots[i]);
    std::copy(r.begin(), r.end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * F));
  }
  return m;
}

// One 1 x (D*S*F) row: real sessions first, then zeros. mask marks the
// real cells.
struct FlatUser {
  Mat row;
  std::vector<std::uint8_t> mask;
  std::size_t sessions = 0;
};

inline FlatUser flatten_user(const UbsTensor& t) {
  const auto F = static_cast<std::size_t>(t.dims.features);
  FlatUser f{Mat(1, t.dims.cells()), std::vector<std::uint8_t>(t.dims.cells(), 0), 0};
  std::size_t o = 0;
  for (std::size_t s : t.valid_slots()) {
    const auto r = t.row(s);
    std::copy(r.begin(), r.end(), f.row.data.begin() + static_cast<std::ptrdiff_t>(o));
    std::fill_n(f.mask.begin() + static_cast<std::ptrdiff_t>(o), F, 1);
    o += F;
    ++f.sessions;
  }
  return f;
}

namespace detail {
inline std::vector<const UbsTensor*> benign_users(const UserDataMap& map) {
  if (map.empty()) fail("ConfigError", "no training users");
  std::vector<const UbsTensor*> out;
  for (const auto& [id, t] : map) {
    if (t.label != Label::Benign) fail("ConfigError", "training user " + id + " is not labeled benign");
    if (t.session_count() > 0) out.push_back(&t);
  }
  return out;
}

struct EarlyStop {
  double delta;
  int patience;
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;

  bool update(double loss) {
    if (best - loss < delta) {
      if (++stall >= patience) return true;
    } else {
      stall = 0;
    }
    best = std::min(best, loss);
    return false;
  }
};
}  // namespace detail

// ---------------------------------------------------------------------------
// Auto-TAB

inline TrainReport train_tab(MlpAutoencoder& model, const UserDataMap& benign) {
  const auto& cfg = model.config();
  std::vector<std::vector<double>> rows;
  for (const UbsTensor* t : detail::benign_users(benign)) {
    if (t->dims.features != cfg.input_width) fail("ShapeMismatch", "Auto-TAB width must equal F");
    const Mat m = session_rows(*t);
    for (std::size_t r = 0; r < m.rows; ++r) rows.emplace_back(m.row(r).begin(), m.row(r).end());
  }
  TrainReport report;
  report.parameter_count = model.parameter_count();
  nn::Adam adam({cfg.learning_rate});
  Rng rng(derive_seed(cfg.seed, 1));
  auto params = model.parameters();
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto W = static_cast<std::size_t>(cfg.input_width);
  detail::EarlyStop stop{cfg.early_stop_delta, cfg.early_stop_patience};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span(order), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      Mat x(n, W);
      for (std::size_t i = 0; i < n; ++i) std::copy(rows[order[start + i]].begin(), rows[order[start + i]].end(), x.row(i).begin());
      Tape tape;
      Var loss = nn::mse(model.forward(tape, x, true, rng), x);
      const double lv = loss.value().data[0];
      if (!std::isfinite(lv)) fail("NonFiniteLoss", "Auto-TAB loss is not finite at epoch " + std::to_string(epoch));
      tape.backward(loss);
      adam.step(params);
      total += lv;
      ++batches;
      ++report.steps;
    }
    const double mean = batches == 0 ? 0.0 : total / static_cast<double>(batches);
    report.epoch_loss.push_back(mean);
    if (stop.update(mean)) {
      report.early_stopped = true;
      break;
    }
  }
  return report;
}

inline std::vector<double> session_errors_tab(const MlpAutoencoder& model, const UbsTensor& t) {
  const Mat x = session_rows(t);
  if (x.rows == 0) return {};
  const Mat y = model.reconstruct(x);
  std::vector<double> errs(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double d = y(r, c) - x(r, c);
      errs[r] += d * d;
    }
    errs[r] /= static_cast<double>(x.cols);
  }
  return errs;
}

// ---------------------------------------------------------------------------
// Auto-UBS

inline TrainReport train_ubs(MlpAutoencoder& model, const UserDataMap& benign) {
  const auto& cfg = model.config();
  auto users = detail::benign_users(benign);
  for (const UbsTensor* t : users)
    if (t->dims.cells() != static_cast<std::size_t>(cfg.input_width))
      fail("ShapeMismatch", "Auto-UBS width must equal D*S*F");
  TrainReport report;
  report.parameter_count = model.parameter_count();
  nn::Adam adam({cfg.learning_rate});
  Rng rng(derive_seed(cfg.seed, 1));
  auto params = model.parameters();
  detail::EarlyStop stop{cfg.early_stop_delta, cfg.early_stop_patience};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span(users), rng);
    double total = 0.0;
    for (const UbsTensor* t : users) {
      const FlatUser f = flatten_user(*t);
      Tape tape;
      Var loss = nn::mse_masked(model.forward(tape, f.row, true, rng), f.row, f.mask);
      const double lv = loss.value().data[0];
      if (!std::isfinite(lv)) fail("NonFiniteLoss", "Auto-UBS loss is not finite for " + t->user);
      tape.backward(loss);
      adam.step(params);
      total += lv;
      ++report.steps;
    }
    const double mean = users.empty() ? 0.0 : total / static_cast<double>(users.size());
    report.epoch_loss.push_back(mean);
    if (stop.update(mean)) {
      report.early_stopped = true;
      break;
    }
  }
  return report;
}

inline std::vector<double> session_errors_ubs(const MlpAutoencoder& model, const UbsTensor& t) {
  const FlatUser f = flatten_user(t);
  if (f.sessions == 0) return {};
  const Mat y = model.reconstruct(f.row);
  const auto F = static_cast<std::size_t>(t.dims.features);
  std::vector<double> errs(f.sessions, 0.0);
  for (std::size_t s = 0; s < f.sessions; ++s) {
    for (std::size_t k = 0; k < F; ++k) {
      const double d = y.data[s * F + k] - f.row.data[s * F + k];
      errs[s] += d * d;
    }
    errs[s] /= static_cast<double>(F);
  }
  return errs;
}

// ---------------------------------------------------------------------------

inline TrainReport train(Variant v, MlpAutoencoder& model, const UserDataMap& benign) {
  return v == Variant::Tab ? train_tab(model, benign) : train_ubs(model, benign);
}

inline std::vector<UserScore> score(Variant v, const MlpAutoencoder& model, const UserDataMap& map) {
  std::vector<UserScore> out;
  for (const auto& [id, t] : map) {
    if (t.session_count() == 0) {
      log_warn("user " + id + " has no sessions; not scored");
      continue;
    }
    UserScore s;
    s.user = id;
    s.label = t.label;
    s.session_errors = v == Variant::Tab ? session_errors_tab(model, t) : session_errors_ubs(model, t);
    s.summary = summarize(s.session_errors);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<UserScore> score_tab(const MlpAutoencoder& m, const UserDataMap& map) { return score(Variant::Tab, m, map); }
inline std::vector<UserScore> score_ubs(const MlpAutoencoder& m, const UserDataMap& map) { return score(Variant::Ubs, m, map); }

inline void save(Variant v, const MlpAutoencoder& m, const std::filesystem::path& path) {
  const auto ps = m.parameters();
  nn::write_checkpoint(path, {{"model", to_string(v)}, {"config", m.config()}}, ps);
}

inline MlpAutoencoder load(Variant v, const std::filesystem::path& path) {
  const auto ck = nn::read_checkpoint(path);
  if (ck.config.value("model", "") != to_string(v))
    fail("ConfigError", "checkpoint is not an " + std::string(to_string(v)) + " model");
  MlpAutoencoder m(ck.config.at("config").get<MlpAeConfig>());
  nn::load_params(ck, m.parameters());
  return m;
}

}  // namespace ubs::autoencoder
