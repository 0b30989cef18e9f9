// Trains a tiny encoder on random users and prints per-session errors for a
// user whose last session is shifted far from the training distribution.

#include <cstdio>

#include "ubs/transformer.hpp"

int main() {
  using namespace ubs;
  const UbsDims dims{7, 3, 35};
  Rng rng(3);
  UserDataMap users;
  for (int u = 0; u < 8; ++u) {
    UbsTensor t("user" + std::to_string(u), dims, Label::Benign);
    for (int d = 0; d < dims.days; ++d) {
      if (d % 7 >= 5) continue;
      t.mask[t.slot(d, 0)] = 1;
      for (int k = 0; k < dims.features; ++k) t.at(d, 0, k) = static_cast<float>(0.1 * normal(rng));
    }
    users.emplace(t.user, std::move(t));
  }

  transformer::EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 30;
  cfg.dims = dims;
  transformer::EncoderModel model(cfg);
  const auto report = transformer::train(model, users);
  std::printf("loss %.4f -> %.4f over %zu epochs\n", report.epoch_loss.front(), report.epoch_loss.back(),
              report.epoch_loss.size());

  UbsTensor probe = users.begin()->second;
  for (int k = 0; k < dims.features; ++k) probe.at(4, 0, k) = 3.0f;
  const auto errs = transformer::session_errors(model, probe);
  for (std::size_t i = 0; i < errs.size(); ++i) std::printf("session %zu  error %.4f\n", i, errs[i]);
}
