#include "gaitlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gaitlab/errors.hpp"

namespace gaitlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  // accept 150K / 1.5K style shorthands used in schedules
  std::string t = s;
  double mult = 1;
  if (!t.empty() && (t.back() == 'K' || t.back() == 'k')) {
    mult = 1000;
    t.pop_back();
  }
  if (mult == 1) {
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    return ec == std::errc() && ptr == t.data() + t.size();
  }
  double d;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), d);
  if (ec != std::errc() || ptr != t.data() + t.size()) return false;
  out = static_cast<std::int64_t>(d * mult);
  return static_cast<double>(out) == d * mult;
}

bool parse_real(const std::string& s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

RunConfig::RunConfig() {
  using T = ValueType;
  constexpr bool open = true;
  declare("seed", T::kInt, "0", 0);

  declare("encoder.stem_channels", T::kInt, "64", 0, open);
  declare("encoder.channels", T::kIntList, "64,128,256,512", 0, open);
  declare("encoder.strides", T::kIntList, "2,2,1,1", 0, open);
  declare("encoder.parts", T::kInt, "16", 0, open);
  declare("encoder.embed_dim", T::kInt, "512", 0, open);
  declare("encoder.combine", T::kString, "add");

  declare("pretrain.batch_size", T::kInt, "512", 2);
  declare("pretrain.clip_len", T::kInt, "16", 1);
  declare("pretrain.tau", T::kReal, "16", 0, open);
  declare("pretrain.tau_mode", T::kString, "divide");
  declare("pretrain.lr", T::kReal, "0.1", 0, open);
  declare("pretrain.momentum", T::kReal, "0.9", 0, false, 1);
  declare("pretrain.weight_decay", T::kReal, "0", 0);
  declare("pretrain.lr_decay", T::kReal, "0.1", 0, open, 1);
  declare("pretrain.milestones", T::kIntList, "80000,120000", 0, open);
  declare("pretrain.total_steps", T::kInt, "150000", 0);
  declare("pretrain.checkpoint_every", T::kInt, "10000", 0);
  declare("pretrain.spatial", T::kBool, "true");
  declare("pretrain.intraseq", T::kBool, "true");
  declare("pretrain.sampling", T::kBool, "true");
  declare("pretrain.negatives", T::kBool, "true");
  declare("pretrain.subset_frac", T::kReal, "1", 0, open, 1);

  declare("aug.p_flip", T::kReal, "0.5", 0, false, 1);
  declare("aug.p_affine", T::kReal, "0.5", 0, false, 1);
  declare("aug.p_perspective", T::kReal, "0.5", 0, false, 1);
  declare("aug.p_dilation", T::kReal, "0.5", 0, false, 1);
  declare("aug.rot_deg", T::kReal, "10", 0);
  declare("aug.shear", T::kReal, "0.005", 0);
  declare("aug.persp_px", T::kReal, "10", 0);
  declare("aug.dilate_shapes", T::kStringList, "rect,cross,ellipse");
  declare("aug.dilate_sizes", T::kIntList, "3,5", 1);
  declare("aug.band_frac_min", T::kReal, "0.1", 0, false, 1);
  declare("aug.band_frac_max", T::kReal, "0.5", 0, false, 1);

  declare("sampler.dumb_prob", T::kReal, "0.1", 0, false, 1);
  declare("sampler.dumb_threshold", T::kReal, "1", 0);

  declare("view.hidden", T::kIntList, "1024,512,256,128", 0, open);
  declare("view.epsilon", T::kReal, "0.1", 0, false, 1);
  declare("view.epochs", T::kInt, "30", 1);
  declare("view.batch_size", T::kInt, "64", 2);
  declare("view.lr", T::kReal, "0.05", 0, open);
  declare("view.window", T::kInt, "16", 1);

  // Unset transfer keys fall back to the per-dataset schedule table.
  declare("transfer.p", T::kInt, std::nullopt, 1);
  declare("transfer.k", T::kInt, std::nullopt, 1);
  declare("transfer.clip_len", T::kInt, "30", 1);
  declare("transfer.margin", T::kReal, "0.3", 0, open);
  declare("transfer.lr_backbone", T::kReal, std::nullopt, 0);
  declare("transfer.lr_projection", T::kReal, std::nullopt, 0);
  declare("transfer.lr_head", T::kReal, std::nullopt, 0);
  declare("transfer.momentum", T::kReal, "0.9", 0, false, 1);
  declare("transfer.weight_decay", T::kReal, std::nullopt, 0);
  declare("transfer.lr_decay", T::kReal, "0.1", 0, open, 1);
  declare("transfer.freeze_bn", T::kBool, std::nullopt);
  declare("transfer.milestones", T::kIntList, std::nullopt, 0, open);
  declare("transfer.total_steps", T::kInt, std::nullopt, 0);
  declare("transfer.subject_fraction", T::kReal, "1", 0, open, 1);
  declare("transfer.scale_schedule", T::kBool, "true");
  declare("transfer.head_dim", T::kInt, "512", 0, open);
  declare("transfer.checkpoint_every", T::kInt, "0", 0);

  declare("eval.protocol", T::kString, "synthetic");
  declare("eval.batch", T::kInt, "8", 1);

  declare("synth.ids", T::kInt, "10", 2);
  declare("synth.first_subject", T::kInt, "0", 0);
  declare("synth.identity_pool", T::kInt, "0", 0);
  declare("synth.views", T::kIntList, "0,18,36,54,72,90,108,126,144,162,180", 0, false, 360);
  declare("synth.conditions", T::kStringList, "nm");
  declare("synth.seqs_per_cell", T::kInt, "2", 1);
  declare("synth.casia_like", T::kBool, "false");
  declare("synth.frames", T::kInt, "30", 1);
  declare("synth.frame_jitter", T::kInt, "0", 0);
  declare("synth.noise", T::kReal, "0", 0, false, 1);
  declare("synth.view_drift", T::kReal, "0", 0);

  declare("hypothesis.pi_radius", T::kReal, "0.5", 0);
  declare("hypothesis.chain_len", T::kInt, "3", 1);
}

void RunConfig::declare(const std::string& key, ValueType type, std::optional<std::string> default_text, double lo,
                        bool lo_open, double hi) {
  schema_[key] = Spec{type, default_text, lo, lo_open, hi};
  if (default_text) {
    values_[key] = parse(key, *default_text, "default");
    text_[key] = *default_text;
  }
}

RunConfig::Value RunConfig::parse(const std::string& key, const std::string& raw, const std::string& where) const {
  const Spec& spec = schema_.at(key);
  const std::string text = trim(raw);
  auto type_error = [&](const std::string& want) {
    return GaitError(ErrorKind::kTypeError, where + ": key '" + key + "' expects " + want + ", got '" + text + "'");
  };
  auto check = [&](double v) {
    const bool low_ok = spec.lo_open ? v > spec.lo : v >= spec.lo;
    if (!low_ok || v > spec.hi) {
      std::ostringstream msg;
      msg << where << ": key '" << key << "' value " << v << " outside " << (spec.lo_open ? "(" : "[");
      if (spec.lo > -1e299) msg << spec.lo; else msg << "-inf";
      msg << ", ";
      if (spec.hi < 1e299) msg << spec.hi; else msg << "inf";
      msg << "]";
      throw GaitError(ErrorKind::kRangeError, msg.str());
    }
  };
  switch (spec.type) {
    case ValueType::kInt: {
      std::int64_t v;
      if (!parse_int(text, v)) throw type_error("an integer");
      check(static_cast<double>(v));
      return v;
    }
    case ValueType::kReal: {
      double v;
      if (!parse_real(text, v)) throw type_error("a number");
      check(v);
      return v;
    }
    case ValueType::kBool: {
      if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
      if (text == "false" || text == "0" || text == "no" || text == "off") return false;
      throw type_error("true/false");
    }
    case ValueType::kString:
      if (text.empty()) throw type_error("a non-empty string");
      return text;
    case ValueType::kIntList: {
      std::vector<std::int64_t> out;
      for (const auto& tok : split_list(text)) {
        std::int64_t v;
        if (!parse_int(tok, v)) throw type_error("a comma-separated integer list");
        check(static_cast<double>(v));
        out.push_back(v);
      }
      return out;
    }
    case ValueType::kRealList: {
      std::vector<double> out;
      for (const auto& tok : split_list(text)) {
        double v;
        if (!parse_real(tok, v)) throw type_error("a comma-separated number list");
        check(v);
        out.push_back(v);
      }
      return out;
    }
    case ValueType::kStringList:
      return split_list(text);
  }
  throw type_error("?");
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
  if (!schema_.count(key)) throw GaitError(ErrorKind::kUnknownKey, origin + ": unknown key '" + key + "'");
  values_[key] = parse(key, value, origin);
  text_[key] = trim(value);
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw GaitError(ErrorKind::kTypeError, where + ": expected 'key = value', got '" + line + "'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1), where);
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GaitError(ErrorKind::kIoError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const RunConfig::Value& RunConfig::value(const std::string& key) const {
  if (!schema_.count(key)) throw GaitError(ErrorKind::kUnknownKey, "unknown key '" + key + "'");
  auto it = values_.find(key);
  if (it == values_.end()) throw GaitError(ErrorKind::kMissingMetadata, "key '" + key + "' is not set");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const { return std::get<std::int64_t>(value(key)); }
double RunConfig::get_real(const std::string& key) const { return std::get<double>(value(key)); }
bool RunConfig::get_bool(const std::string& key) const { return std::get<bool>(value(key)); }
std::string RunConfig::get_string(const std::string& key) const { return std::get<std::string>(value(key)); }
std::vector<std::int64_t> RunConfig::get_int_list(const std::string& key) const {
  return std::get<std::vector<std::int64_t>>(value(key));
}
std::vector<double> RunConfig::get_real_list(const std::string& key) const {
  return std::get<std::vector<double>>(value(key));
}
std::vector<std::string> RunConfig::get_string_list(const std::string& key) const {
  return std::get<std::vector<std::string>>(value(key));
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& [key, text] : text_) out += key + " = " + text + "\n";
  return out;
}

EncoderConfig RunConfig::encoder() const {
  EncoderConfig c;
  c.stem_channels = static_cast<int>(get_int("encoder.stem_channels"));
  const auto ch = get_int_list("encoder.channels");
  const auto st = get_int_list("encoder.strides");
  if (ch.size() != 4 || st.size() != 4) {
    throw GaitError(ErrorKind::kRangeError, "encoder.channels and encoder.strides need exactly 4 entries");
  }
  for (int i = 0; i < 4; ++i) {
    c.channels[i] = static_cast<int>(ch[i]);
    c.strides[i] = static_cast<int>(st[i]);
  }
  c.parts = static_cast<int>(get_int("encoder.parts"));
  c.embed_dim = static_cast<int>(get_int("encoder.embed_dim"));
  const auto combine = get_string("encoder.combine");
  if (combine == "add") {
    c.combine = PoolCombine::kAdd;
  } else if (combine == "concat") {
    c.combine = PoolCombine::kConcat;
  } else {
    throw GaitError(ErrorKind::kRangeError, "encoder.combine must be 'add' or 'concat'");
  }
  return c;
}

SpatialAugConfig RunConfig::augment() const {
  SpatialAugConfig a;
  a.p_flip = get_real("aug.p_flip");
  a.p_affine = get_real("aug.p_affine");
  a.p_perspective = get_real("aug.p_perspective");
  a.p_dilation = get_real("aug.p_dilation");
  a.rotation_deg = get_real("aug.rot_deg");
  a.shear = get_real("aug.shear");
  a.perspective_px = get_real("aug.persp_px");
  a.dilation_shapes.clear();
  for (const auto& s : get_string_list("aug.dilate_shapes")) a.dilation_shapes.push_back(kernel_shape_from(s));
  a.dilation_sizes.clear();
  for (auto s : get_int_list("aug.dilate_sizes")) a.dilation_sizes.push_back(static_cast<int>(s));
  a.band_frac_min = get_real("aug.band_frac_min");
  a.band_frac_max = get_real("aug.band_frac_max");
  return a;
}

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.dumb_prob = get_real("sampler.dumb_prob");
  s.dumb_threshold = get_real("sampler.dumb_threshold");
  return s;
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.batch_size = static_cast<int>(get_int("pretrain.batch_size"));
  p.clip_len = static_cast<int>(get_int("pretrain.clip_len"));
  p.tau = get_real("pretrain.tau");
  p.tau_mode = tau_mode_from(get_string("pretrain.tau_mode"));
  p.lr = get_real("pretrain.lr");
  p.momentum = get_real("pretrain.momentum");
  p.weight_decay = get_real("pretrain.weight_decay");
  p.lr_decay = get_real("pretrain.lr_decay");
  p.milestones = get_int_list("pretrain.milestones");
  p.total_steps = get_int("pretrain.total_steps");
  p.checkpoint_every = get_int("pretrain.checkpoint_every");
  p.spatial = get_bool("pretrain.spatial");
  p.intraseq = get_bool("pretrain.intraseq");
  p.sampling = get_bool("pretrain.sampling");
  p.negatives = get_bool("pretrain.negatives");
  p.subset_frac = get_real("pretrain.subset_frac");
  p.seed = seed();
  p.encoder = encoder();
  p.augment = augment();
  p.sampler = sampler();
  return p;
}

ViewClassifierConfig RunConfig::view_classifier() const {
  ViewClassifierConfig v;
  v.hidden.clear();
  for (auto h : get_int_list("view.hidden")) v.hidden.push_back(static_cast<int>(h));
  v.epsilon = get_real("view.epsilon");
  v.epochs = static_cast<int>(get_int("view.epochs"));
  v.batch_size = static_cast<int>(get_int("view.batch_size"));
  v.lr = get_real("view.lr");
  v.seed = seed();
  return v;
}

TransferConfig RunConfig::transfer(const std::string& dataset, bool scratch) const {
  TransferConfig t = transfer_defaults(dataset, scratch);
  if (is_set("transfer.p")) t.p = static_cast<int>(get_int("transfer.p"));
  if (is_set("transfer.k")) t.k = static_cast<int>(get_int("transfer.k"));
  t.clip_len = static_cast<int>(get_int("transfer.clip_len"));
  t.margin = get_real("transfer.margin");
  if (is_set("transfer.lr_backbone")) t.lr_backbone = get_real("transfer.lr_backbone");
  if (is_set("transfer.lr_projection")) t.lr_projection = get_real("transfer.lr_projection");
  if (is_set("transfer.lr_head")) t.lr_head = get_real("transfer.lr_head");
  t.momentum = get_real("transfer.momentum");
  if (is_set("transfer.weight_decay")) t.weight_decay = get_real("transfer.weight_decay");
  t.lr_decay = get_real("transfer.lr_decay");
  if (is_set("transfer.freeze_bn")) t.freeze_bn = get_bool("transfer.freeze_bn");
  if (is_set("transfer.milestones")) t.milestones = get_int_list("transfer.milestones");
  if (is_set("transfer.total_steps")) t.total_steps = get_int("transfer.total_steps");
  t.subject_fraction = get_real("transfer.subject_fraction");
  t.scale_schedule = get_bool("transfer.scale_schedule");
  t.head_dim = static_cast<int>(get_int("transfer.head_dim"));
  t.checkpoint_every = get_int("transfer.checkpoint_every");
  t.seed = seed();
  if (t.scale_schedule && t.subject_fraction < 1.0) t = scaled_schedule(t, t.subject_fraction);
  return t;
}

CorpusSpec RunConfig::synth() const {
  CorpusSpec c;
  const int ids = static_cast<int>(get_int("synth.ids"));
  if (get_bool("synth.casia_like")) {
    c = casia_like_spec(ids, static_cast<int>(get_int("synth.frames")), seed());
  } else {
    c.n_ids = ids;
    c.views.clear();
    for (auto v : get_int_list("synth.views")) c.views.push_back(static_cast<int>(v));
    c.conditions.clear();
    for (const auto& s : get_string_list("synth.conditions")) c.conditions.push_back(condition_from(s));
    c.seqs_per_cell = static_cast<int>(get_int("synth.seqs_per_cell"));
    c.frames = static_cast<int>(get_int("synth.frames"));
    c.seed = seed();
  }
  c.first_subject = static_cast<int>(get_int("synth.first_subject"));
  c.identity_pool = static_cast<int>(get_int("synth.identity_pool"));
  c.frame_jitter = static_cast<int>(get_int("synth.frame_jitter"));
  c.noise = get_real("synth.noise");
  c.max_view_drift = get_real("synth.view_drift");
  return c;
}

void RunConfig::validate() const {
  pretrain().validate();
}

}  // namespace gaitlab
