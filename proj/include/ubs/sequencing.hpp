#pragma once

// User-Based Sequencing: one [days x sessions x features] tensor per user.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/ingest.hpp"
#include "ubs/io.hpp"

namespace ubs {

struct UbsDims {
  int days = 501;
  int sessions = 9;
  int features = static_cast<int>(ingest::kFeatureCount);

  std::size_t slots() const { return static_cast<std::size_t>(days) * static_cast<std::size_t>(sessions); }
  std::size_t cells() const { return slots() * static_cast<std::size_t>(features); }

  void validate() const {
    if (days <= 0 || sessions <= 0 || features <= 0) fail("ConfigError", "UBS dimensions must be positive");
  }

  friend bool operator==(const UbsDims&, const UbsDims&) = default;
};

// values[(day * S + session) * F + feature]; mask[day * S + session].
struct UbsTensor {
  std::string user;
  UbsDims dims;
  std::vector<float> values;
  std::vector<std::uint8_t> mask;
  Label label = Label::Unknown;

  UbsTensor() = default;
  UbsTensor(std::string id, UbsDims d, Label l = Label::Unknown)
      : user(std::move(id)), dims(d), values(d.cells(), 0.0f), mask(d.slots(), 0), label(l) {}

  std::size_t slot(int day, int session) const {
    return static_cast<std::size_t>(day) * static_cast<std::size_t>(dims.sessions) + static_cast<std::size_t>(session);
  }
  float& at(int day, int session, int feature) {
    return values[slot(day, session) * static_cast<std::size_t>(dims.features) + static_cast<std::size_t>(feature)];
  }
  float at(int day, int session, int feature) const {
    return values[slot(day, session) * static_cast<std::size_t>(dims.features) + static_cast<std::size_t>(feature)];
  }
  std::span<const float> row(std::size_t slot_index) const {
    return std::span<const float>(values).subspan(slot_index * static_cast<std::size_t>(dims.features),
                                                  static_cast<std::size_t>(dims.features));
  }
  std::size_t session_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
  std::vector<std::size_t> valid_slots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(i);
    return out;
  }

  friend bool operator==(const UbsTensor&, const UbsTensor&) = default;
};

// Sorted by user id.
using UserDataMap = std::map<std::string, UbsTensor>;
using LabelMap = std::map<std::string, Label>;

// Later duplicates of a (user, day, session) cell replace earlier ones;
// ingest never emits duplicates.
inline UserDataMap build_ubs(std::span<const ingest::SessionRecord> sessions, const UbsDims& dims,
                             const LabelMap& labels) {
  dims.validate();
  if (static_cast<std::size_t>(dims.features) != ingest::kFeatureCount)
    fail("DimMismatch", "feature dimension must be " + std::to_string(ingest::kFeatureCount));
  UserDataMap out;
  for (const auto& s : sessions) {
    if (s.day_index < 0 || s.day_index >= dims.days || s.session_index < 0 || s.session_index >= dims.sessions)
      fail("DimensionOverflow", "session (" + s.user + ", day " + std::to_string(s.day_index) + ", slot " +
                                    std::to_string(s.session_index) + ") outside tensor bounds");
    auto it = out.find(s.user);
    if (it == out.end()) {
      const auto lab = labels.find(s.user);
      it = out.emplace(s.user, UbsTensor(s.user, dims, lab == labels.end() ? Label::Unknown : lab->second)).first;
    }
    UbsTensor& t = it->second;
    t.mask[t.slot(s.day_index, s.session_index)] = 1;
    for (int k = 0; k < dims.features; ++k)
      t.at(s.day_index, s.session_index, k) = static_cast<float>(s.features[static_cast<std::size_t>(k)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kStdFloor = 1e-8;

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  nlohmann::json to_json() const { return {{"mean", mean}, {"std", stddev}}; }
  static NormStats from_json(const nlohmann::json& j) {
    NormStats s{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
    if (s.mean.size() != s.stddev.size()) fail("DimMismatch", "norm stats mean/std length differ");
    return s;
  }
};

// Population mean/std per feature over mask-true cells of Benign users.
// Constant features get the std floor.
inline NormStats fit_norm(const UserDataMap& train, int features = static_cast<int>(ingest::kFeatureCount)) {
  const auto F = static_cast<std::size_t>(features);
  std::vector<double> sum(F, 0.0);
  std::size_t n = 0;
  for (const auto& [_, t] : train) {
    if (t.label != Label::Benign) continue;
    if (static_cast<std::size_t>(t.dims.features) != F) fail("DimMismatch", "feature width mismatch in fit_norm");
    for (std::size_t s : t.valid_slots()) {
      const auto r = t.row(s);
      for (std::size_t k = 0; k < F; ++k) sum[k] += r[k];
      ++n;
    }
  }
  NormStats st{std::vector<double>(F, 0.0), std::vector<double>(F, 1.0)};
  if (n == 0) return st;
  for (std::size_t k = 0; k < F; ++k) st.mean[k] = sum[k] / static_cast<double>(n);
  std::vector<double> sq(F, 0.0);
  for (const auto& [_, t] : train) {
    if (t.label != Label::Benign) continue;
    for (std::size_t s : t.valid_slots()) {
      const auto r = t.row(s);
      for (std::size_t k = 0; k < F; ++k) {
        const double d = r[k] - st.mean[k];
        sq[k] += d * d;
      }
    }
  }
  for (std::size_t k = 0; k < F; ++k) st.stddev[k] = std::max(std::sqrt(sq[k] / static_cast<double>(n)), kStdFloor);
  return st;
}

inline UbsTensor apply_norm(UbsTensor t, const NormStats& st) {
  const auto F = static_cast<std::size_t>(t.dims.features);
  if (st.mean.size() != F) fail("DimMismatch", "norm stats width differs from tensor features");
  for (std::size_t s = 0; s < t.mask.size(); ++s) {
    float* r = t.values.data() + s * F;
    if (!t.mask[s]) {
      std::fill(r, r + F, 0.0f);
      continue;
    }
    for (std::size_t k = 0; k < F; ++k) r[k] = static_cast<float>((r[k] - st.mean[k]) / st.stddev[k]);
  }
  return t;
}

inline UserDataMap apply_norm(const UserDataMap& map, const NormStats& st) {
  UserDataMap out;
  for (const auto& [id, t] : map) out.emplace(id, apply_norm(t, st));
  return out;
}

// ---------------------------------------------------------------------------
// Binary format: "UBS1", u32 version, u32 U, D, S, F, then per user in id
// order: u16 id length, id bytes, u8 label, D*S mask bytes, D*S*F float32.

inline constexpr char kUbsMagic[4] = {'U', 'B', 'S', '1'};
inline constexpr std::uint32_t kUbsVersion = 1;

inline void write_ubs(std::ostream& out, const UserDataMap& map, const UbsDims& dims) {
  io::put_bytes(out, std::string_view(kUbsMagic, 4));
  io::put<std::uint32_t>(out, kUbsVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(map.size()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.days));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.sessions));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.features));
  for (const auto& [id, t] : map) {
    if (!(t.dims == dims)) fail("DimMismatch", "tensor for " + id + " has different dimensions");
    if (id.size() > 0xffff) fail("IoError", "user id too long");
    io::put<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    io::put_bytes(out, id);
    io::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.label));
    out.write(reinterpret_cast<const char*>(t.mask.data()), static_cast<std::streamsize>(t.mask.size()));
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
}

inline void write_ubs(const std::filesystem::path& path, const UserDataMap& map, const UbsDims& dims) {
  auto out = io::open_out(path, true);
  write_ubs(out, map, dims);
}

struct UbsFile {
  UbsDims dims;
  UserDataMap users;
};

// expected: when set, the header dims must equal it (DimMismatch otherwise).
inline UbsFile read_ubs(std::istream& in, const std::optional<UbsDims>& expected = std::nullopt) {
  io::Reader r(in);
  char magic[4];
  try {
    r.read_raw(magic, 4);
  } catch (const Error&) {
    fail("BadMagic", "file too short for UBS magic");
  }
  if (!std::equal(magic, magic + 4, kUbsMagic)) fail("BadMagic", "not a UBS file");
  const auto version = r.get<std::uint32_t>();
  if (version != kUbsVersion) fail("BadMagic", "unsupported UBS version " + std::to_string(version));
  const auto n_users = r.get<std::uint32_t>();
  UbsFile f;
  f.dims.days = static_cast<int>(r.get<std::uint32_t>());
  f.dims.sessions = static_cast<int>(r.get<std::uint32_t>());
  f.dims.features = static_cast<int>(r.get<std::uint32_t>());
  if (f.dims.days <= 0 || f.dims.sessions <= 0 || f.dims.features <= 0) fail("DimMismatch", "non-positive dimension");
  if (expected && !(*expected == f.dims)) fail("DimMismatch", "UBS file dimensions differ from configuration");
  for (std::uint32_t u = 0; u < n_users; ++u) {
    const auto len = r.get<std::uint16_t>();
    std::string id = r.get_bytes(len);
    const auto lab = r.get<std::uint8_t>();
    if (lab > 2) fail("IoError", "bad label byte for " + id);
    UbsTensor t(id, f.dims, static_cast<Label>(lab));
    r.read_raw(reinterpret_cast<char*>(t.mask.data()), t.mask.size());
    r.read_raw(reinterpret_cast<char*>(t.values.data()), t.values.size() * sizeof(float));
    if (!f.users.emplace(id, std::move(t)).second) fail("IoError", "duplicate user " + id);
  }
  return f;
}

inline UbsFile read_ubs(const std::filesystem::path& path, const std::optional<UbsDims>& expected = std::nullopt) {
  auto in = io::open_in(path, true);
  return read_ubs(in, expected);
}

}  // namespace ubs
