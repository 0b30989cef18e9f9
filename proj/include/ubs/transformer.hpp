#pragma once

// Encoder-only Transformer that reconstructs session feature vectors.
//
// A user tensor is read as a sequence of D*S slots in (day, session) order.
// Padding slots never act as attention keys, so a real slot's output does
// not depend on padding content. Training and scoring therefore run on the
// real slots only, each keeping its original position in the encoding.

#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/numcore.hpp"
#include "ubs/score.hpp"
#include "ubs/sequencing.hpp"

namespace ubs::transformer {

using nn::Mat;
using nn::Param;
using nn::Tape;
using nn::Var;

struct EncoderConfig {
  int d_model = 64;
  int n_blocks = 6;
  int n_heads = 8;
  int d_ff = 256;
  double dropout = 0.1;
  double learning_rate = 1e-5;
  int epochs = 50;
  std::uint64_t seed = 0;
  // Stop once the epoch loss has improved by less than this for `patience`
  // consecutive epochs.
  double early_stop_delta = 1e-6;
  int early_stop_patience = 5;
  UbsDims dims;

  void validate() const {
    if (d_model <= 0 || n_blocks <= 0 || n_heads <= 0 || d_ff <= 0)
      fail("ConfigError", "encoder widths must be positive");
    if (d_model % n_heads != 0) fail("ConfigError", "d_model must be divisible by n_heads");
    if (d_model % 2 != 0) fail("ConfigError", "d_model must be even for sinusoidal encoding");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("ConfigError", "dropout must be in [0,1)");
    if (epochs < 0) fail("ConfigError", "epochs must be >= 0");
    dims.validate();
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"d_model", c.d_model},       {"n_blocks", c.n_blocks},
       {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
       {"dropout", c.dropout},       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},         {"seed", c.seed},
       {"early_stop_delta", c.early_stop_delta}, {"early_stop_patience", c.early_stop_patience},
       {"dims", {{"days", c.dims.days}, {"sessions", c.dims.sessions}, {"features", c.dims.features}}}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.d_model = j.at("d_model");
  c.n_blocks = j.at("n_blocks");
  c.n_heads = j.at("n_heads");
  c.d_ff = j.at("d_ff");
  c.dropout = j.at("dropout");
  c.learning_rate = j.at("learning_rate");
  c.epochs = j.at("epochs");
  c.seed = j.at("seed");
  c.early_stop_delta = j.at("early_stop_delta");
  c.early_stop_patience = j.at("early_stop_patience");
  c.dims.days = j.at("dims").at("days");
  c.dims.sessions = j.at("dims").at("sessions");
  c.dims.features = j.at("dims").at("features");
}

// Closed-form parameter count for a config.
inline std::size_t count_parameters(const EncoderConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.dims.features);
  const std::size_t ff = static_cast<std::size_t>(c.d_ff);
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t norms = 2 * (2 * d);
  const std::size_t ffn = d * ff + ff + ff * d + d;
  return (f * d + d) + static_cast<std::size_t>(c.n_blocks) * (attention + norms + ffn) + (d * f + f);
}

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
inline Mat positional_encoding(std::size_t length, std::size_t d_model) {
  if (length == 0 || d_model == 0 || d_model % 2 != 0)
    fail("ConfigError", "positional encoding needs positive length and even width");
  Mat pe(length, d_model);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = std::sin(angle);
      pe(pos, i + 1) = std::cos(angle);
    }
  return pe;
}

struct Block {
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln1_gamma, ln1_beta;
  Param ff1_w, ff1_b, ff2_w, ff2_b;
  Param ln2_gamma, ln2_beta;
};

// Attention weights captured during a forward pass: [block][head], each
// (queries x keys).
struct ForwardTrace {
  std::vector<std::vector<Mat>> attention;
};

class EncoderModel {
 public:
  explicit EncoderModel(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto f = static_cast<std::size_t>(cfg_.dims.features);
    const auto ff = static_cast<std::size_t>(cfg_.d_ff);
    Rng rng(derive_seed(cfg_.seed, 0));
    embed_w_ = Param("embed.w", nn::xavier_uniform(f, d, rng));
    embed_b_ = Param("embed.b", Mat(1, d));
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      Block blk;
      blk.wq = Param(p + "wq", nn::xavier_uniform(d, d, rng));
      blk.bq = Param(p + "bq", Mat(1, d));
      blk.wk = Param(p + "wk", nn::xavier_uniform(d, d, rng));
      blk.bk = Param(p + "bk", Mat(1, d));
      blk.wv = Param(p + "wv", nn::xavier_uniform(d, d, rng));
      blk.bv = Param(p + "bv", Mat(1, d));
      blk.wo = Param(p + "wo", nn::xavier_uniform(d, d, rng));
      blk.bo = Param(p + "bo", Mat(1, d));
      blk.ln1_gamma = Param(p + "ln1.gamma", Mat(1, d, 1.0));
      blk.ln1_beta = Param(p + "ln1.beta", Mat(1, d));
      blk.ff1_w = Param(p + "ff1.w", nn::xavier_uniform(d, ff, rng));
      blk.ff1_b = Param(p + "ff1.b", Mat(1, ff));
      blk.ff2_w = Param(p + "ff2.w", nn::xavier_uniform(ff, d, rng));
      blk.ff2_b = Param(p + "ff2.b", Mat(1, d));
      blk.ln2_gamma = Param(p + "ln2.gamma", Mat(1, d, 1.0));
      blk.ln2_beta = Param(p + "ln2.beta", Mat(1, d));
      blocks_.push_back(std::move(blk));
    }
    head_w_ = Param("head.w", nn::xavier_uniform(d, f, rng));
    head_b_ = Param("head.b", Mat(1, f));
    pe_ = positional_encoding(cfg_.dims.slots(), d);
  }

  const EncoderConfig& config() const { return cfg_; }
  const Mat& positional_table() const { return pe_; }

  std::vector<Param*> parameters() {
    std::vector<Param*> out{&embed_w_, &embed_b_};
    for (auto& b : blocks_)
      for (Param* p : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_gamma, &b.ln1_beta, &b.ff1_w,
                       &b.ff1_b, &b.ff2_w, &b.ff2_b, &b.ln2_gamma, &b.ln2_beta})
        out.push_back(p);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }
  std::vector<const Param*> parameters() const {
    auto ps = const_cast<EncoderModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
  std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

  std::vector<Block>& blocks() { return blocks_; }
  Param& head_weight() { return head_w_; }
  Param& head_bias() { return head_b_; }

  // Records the encoder on `tape` for the given input rows.
  //   rows:      n x F input slots
  //   positions: slot index of each row (selects its positional encoding)
  //   keys:      which rows may be attended to
  // Returns the n x F reconstruction.
  Var forward_rows(Tape& tape, const Mat& rows, std::span<const std::size_t> positions,
                   std::span<const std::size_t> keys, bool train, Rng& rng, ForwardTrace* trace = nullptr) const {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    if (rows.cols != static_cast<std::size_t>(cfg_.dims.features))
      fail("ShapeMismatch", "input has " + std::to_string(rows.cols) + " features, model expects " +
                                std::to_string(cfg_.dims.features));
    if (positions.size() != rows.rows) fail("ShapeMismatch", "one position per input row required");
    Mat pe(rows.rows, d);
    for (std::size_t i = 0; i < rows.rows; ++i) {
      if (positions[i] >= pe_.rows) fail("ShapeMismatch", "position beyond D*S");
      std::copy_n(pe_.data.data() + positions[i] * d, d, pe.data.data() + i * d);
    }
    bool all_keys = keys.size() == rows.rows;
    for (std::size_t i = 0; all_keys && i < keys.size(); ++i) all_keys = keys[i] == i;
    const std::vector<std::size_t> key_idx(keys.begin(), keys.end());

    Var x = tape.constant(rows);
    Var h = nn::add_row(nn::matmul(x, tape.param(embed_w_)), tape.param(embed_b_));
    h = nn::add(h, tape.constant(std::move(pe)));
    h = nn::dropout(h, cfg_.dropout, rng, train);

    const auto heads = static_cast<std::size_t>(cfg_.n_heads);
    const std::size_t dk = d / heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    if (trace) trace->attention.assign(blocks_.size(), {});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      Var attn_out;
      if (key_idx.empty()) {
        attn_out = tape.constant(Mat(rows.rows, d));
      } else {
        Var src = all_keys ? h : nn::gather_rows(h, key_idx);
        Var q = nn::add_row(nn::matmul(h, tape.param(blk.wq)), tape.param(blk.bq));
        Var k = nn::add_row(nn::matmul(src, tape.param(blk.wk)), tape.param(blk.bk));
        Var v = nn::add_row(nn::matmul(src, tape.param(blk.wv)), tape.param(blk.bv));
        std::vector<Var> head_out;
        for (std::size_t hd = 0; hd < heads; ++hd) {
          Var qh = nn::slice_cols(q, hd * dk, (hd + 1) * dk);
          Var kh = nn::slice_cols(k, hd * dk, (hd + 1) * dk);
          Var vh = nn::slice_cols(v, hd * dk, (hd + 1) * dk);
          Var weights = nn::softmax_rows(nn::scale(nn::matmul_nt(qh, kh), inv_sqrt_dk));
          if (trace) trace->attention[b].push_back(weights.value());
          head_out.push_back(nn::matmul(weights, vh));
        }
        Var cat = heads == 1 ? head_out[0] : nn::concat_cols(head_out);
        attn_out = nn::add_row(nn::matmul(cat, tape.param(blk.wo)), tape.param(blk.bo));
      }
      h = nn::layer_norm_rows(nn::add(h, attn_out), tape.param(blk.ln1_gamma), tape.param(blk.ln1_beta));
      Var ff = nn::relu(nn::add_row(nn::matmul(h, tape.param(blk.ff1_w)), tape.param(blk.ff1_b)));
      ff = nn::add_row(nn::matmul(ff, tape.param(blk.ff2_w)), tape.param(blk.ff2_b));
      h = nn::layer_norm_rows(nn::add(h, ff), tape.param(blk.ln2_gamma), tape.param(blk.ln2_beta));
    }
    return nn::add_row(nn::matmul(h, tape.param(head_w_)), tape.param(head_b_));
  }

  // Full [D*S x F] reconstruction of a user tensor.
  Mat forward(const UbsTensor& t, bool train, Rng& rng, ForwardTrace* trace = nullptr) const {
    check_dims(t);
    const std::size_t L = t.dims.slots();
    const std::size_t F = static_cast<std::size_t>(t.dims.features);
    Mat rows(L, F);
    for (std::size_t i = 0; i < t.values.size(); ++i) rows.data[i] = t.values[i];
    std::vector<std::size_t> positions(L);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    const auto keys = t.valid_slots();
    Tape tape;
    return forward_rows(tape, rows, positions, keys, train, rng, trace).value();
  }

  // Eval-mode forward, no dropout.
  Mat forward(const UbsTensor& t, ForwardTrace* trace = nullptr) const {
    Rng unused(0);
    return forward(t, false, unused, trace);
  }

  void check_dims(const UbsTensor& t) const {
    if (!(t.dims == cfg_.dims)) fail("ShapeMismatch", "tensor dims differ from model config for user " + t.user);
  }

 private:
  EncoderConfig cfg_;
  Param embed_w_, embed_b_;
  std::vector<Block> blocks_;
  Param head_w_, head_b_;
  Mat pe_;
};

// Real slots of a tensor packed as rows, with their slot positions.
struct PackedUser {
  Mat rows;
  std::vector<std::size_t> positions;
};

inline PackedUser pack_valid(const UbsTensor& t) {
  PackedUser p;
  p.positions = t.valid_slots();
  const auto F = static_cast<std::size_t>(t.dims.features);
  p.rows = Mat(p.positions.size(), F);
  for (std::size_t i = 0; i < p.positions.size(); ++i) {
    const auto r = t.row(p.positions[i]);
    std::copy(r.begin(), r.end(), p.rows.data.begin() + static_cast<std::ptrdiff_t>(i * F));
  }
  return p;
}

// Masked reconstruction loss for one user, recorded on `tape`.
inline Var user_loss(const EncoderModel& model, Tape& tape, const UbsTensor& t, bool train, Rng& rng) {
  model.check_dims(t);
  const PackedUser p = pack_valid(t);
  std::vector<std::size_t> keys(p.positions.size());
  std::iota(keys.begin(), keys.end(), std::size_t{0});
  Var recon = model.forward_rows(tape, p.rows, p.positions, keys, train, rng);
  return nn::mse(recon, p.rows);
}

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

// User-Based Batching: one Adam step per user tensor per epoch, user order
// reshuffled every epoch from the config seed.
inline TrainReport train(EncoderModel& model, const UserDataMap& train_map) {
  const auto& cfg = model.config();
  if (train_map.empty()) fail("ConfigError", "no training users");
  std::vector<const UbsTensor*> users;
  for (const auto& [id, t] : train_map) {
    if (t.label != Label::Benign) fail("ConfigError", "training user " + id + " is not labeled benign");
    model.check_dims(t);
    if (t.session_count() == 0) {
      log_warn("training user " + id + " has no sessions; skipped");
      continue;
    }
    users.push_back(&t);
  }

  TrainReport report;
  report.parameter_count = model.parameter_count();
  nn::Adam adam({cfg.learning_rate});
  Rng rng(derive_seed(cfg.seed, 1));
  auto params = model.parameters();
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span(users), rng);
    double total = 0.0;
    for (const UbsTensor* t : users) {
      Tape tape;
      Var loss = user_loss(model, tape, *t, true, rng);
      const double lv = loss.value().data[0];
      if (!std::isfinite(lv))
        fail("NonFiniteLoss", "loss is " + std::to_string(lv) + " at epoch " + std::to_string(epoch) + " user " + t->user);
      tape.backward(loss);
      adam.step(params);
      total += lv;
      ++report.steps;
    }
    const double mean = users.empty() ? 0.0 : total / static_cast<double>(users.size());
    report.epoch_loss.push_back(mean);
    log_debug("transformer epoch " + std::to_string(epoch) + " loss " + std::to_string(mean));
    if (best - mean < cfg.early_stop_delta) {
      if (++stall >= cfg.early_stop_patience) {
        report.early_stopped = true;
        break;
      }
    } else {
      stall = 0;
    }
    best = std::min(best, mean);
  }
  return report;
}

// Per-slot mean squared error over features, for real slots only (eval mode).
inline std::vector<double> session_errors(const EncoderModel& model, const UbsTensor& t) {
  model.check_dims(t);
  const PackedUser p = pack_valid(t);
  if (p.positions.empty()) return {};
  std::vector<std::size_t> keys(p.positions.size());
  std::iota(keys.begin(), keys.end(), std::size_t{0});
  Tape tape;
  Rng unused(0);
  const Mat recon = model.forward_rows(tape, p.rows, p.positions, keys, false, unused).value();
  std::vector<double> errs(p.positions.size(), 0.0);
  for (std::size_t i = 0; i < recon.rows; ++i) {
    for (std::size_t k = 0; k < recon.cols; ++k) {
      const double diff = recon(i, k) - p.rows(i, k);
      errs[i] += diff * diff;
    }
    errs[i] /= static_cast<double>(recon.cols);
  }
  return errs;
}

// Runs `fn(index)` for 0..n-1 over up to `threads` workers. Each index is
// handled exactly once and results are written by index, so the outcome does
// not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// One UserScore per user with at least one session, in user id order.
inline std::vector<UserScore> score(const EncoderModel& model, const UserDataMap& map, unsigned threads = 1) {
  std::vector<const UbsTensor*> users;
  for (const auto& [id, t] : map) {
    if (t.session_count() == 0) {
      log_warn("user " + id + " has no sessions; not scored");
      continue;
    }
    users.push_back(&t);
  }
  std::vector<UserScore> out(users.size());
  parallel_for(users.size(), threads, [&](std::size_t i) {
    UserScore s;
    s.user = users[i]->user;
    s.label = users[i]->label;
    s.session_errors = session_errors(model, *users[i]);
    s.summary = summarize(s.session_errors);
    out[i] = std::move(s);
  });
  return out;
}

inline nlohmann::json checkpoint_header(const EncoderModel& m) {
  return {{"model", "transformer"}, {"config", m.config()}};
}

inline void save(const EncoderModel& m, const std::filesystem::path& path) {
  const auto ps = m.parameters();
  nn::write_checkpoint(path, checkpoint_header(m), ps);
}

inline EncoderModel load(const std::filesystem::path& path) {
  const auto ck = nn::read_checkpoint(path);
  if (ck.config.value("model", "") != "transformer") fail("ConfigError", "checkpoint is not a transformer");
  EncoderModel m(ck.config.at("config").get<EncoderConfig>());
  nn::load_params(ck, m.parameters());
  return m;
}

}  // namespace ubs::transformer
