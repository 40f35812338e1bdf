#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gaitlab/augmentation.hpp"
#include "gaitlab/contrastive.hpp"
#include "gaitlab/encoder.hpp"
#include "gaitlab/synthetic.hpp"
#include "gaitlab/transfer.hpp"
#include "gaitlab/view_sampler.hpp"

namespace gaitlab {

enum class ValueType { kInt, kReal, kBool, kString, kIntList, kRealList, kStringList };

/// Flat namespaced settings (`pretrain.lr`, `aug.p_flip`, ...). Every key
/// has a declared type; keys without a default stay unset until given.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines (`#` starts a comment). Throws UnknownKey,
  /// TypeError (with key and line number) and RangeError.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");
  /// One override, as from `--key value`. Same errors as load_file.
  void set(const std::string& key, const std::string& value, const std::string& origin = "flag");

  bool has_key(const std::string& key) const { return schema_.count(key) > 0; }
  bool is_set(const std::string& key) const { return values_.count(key) > 0; }

  std::int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  /// Every set key as `key = value`, sorted; loading it back reproduces
  /// this configuration.
  std::string resolved_text() const;

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

  EncoderConfig encoder() const;
  SpatialAugConfig augment() const;
  SamplerConfig sampler() const;
  PretrainConfig pretrain() const;
  ViewClassifierConfig view_classifier() const;
  /// Dataset table row, overridden by any explicitly set transfer.* key.
  TransferConfig transfer(const std::string& dataset, bool scratch) const;
  CorpusSpec synth() const;

  /// Runs every typed validator (pretrain, aug, sampler, encoder).
  void validate() const;

 private:
  using Value = std::variant<std::int64_t, double, bool, std::string, std::vector<std::int64_t>, std::vector<double>,
                             std::vector<std::string>>;
  struct Spec {
    ValueType type;
    std::optional<std::string> default_text;
    double lo;       // numeric values (and list elements) must be >= lo,
    bool lo_open;    // or > lo when lo_open,
    double hi;       // and <= hi
  };

  void declare(const std::string& key, ValueType type, std::optional<std::string> default_text,
               double lo = -1e300, bool lo_open = false, double hi = 1e300);
  Value parse(const std::string& key, const std::string& text, const std::string& where) const;
  const Value& value(const std::string& key) const;

  std::map<std::string, Spec> schema_;
  std::map<std::string, Value> values_;
  std::map<std::string, std::string> text_;
};

}  // namespace gaitlab
