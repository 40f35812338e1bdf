#include "gaitlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>

#include "gaitlab/errors.hpp"

namespace gaitlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// "nm-05" -> ("nm", 5); anything else -> (whole string, -1).
std::pair<std::string, int> split_condition(const std::string& c) {
  const auto dash = c.rfind('-');
  if (dash == std::string::npos || dash + 1 >= c.size()) return {c, -1};
  const std::string num = c.substr(dash + 1);
  if (!std::all_of(num.begin(), num.end(), ::isdigit)) return {c, -1};
  std::string kind = c.substr(0, dash);
  std::transform(kind.begin(), kind.end(), kind.begin(), ::tolower);
  return {kind, std::stoi(num)};
}

std::vector<std::string> sorted_views(std::set<std::string> views) {
  std::vector<std::string> out(views.begin(), views.end());
  const bool numeric = std::all_of(out.begin(), out.end(), [](const std::string& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](char ch) { return std::isdigit(ch) || ch == '.'; });
  });
  if (numeric) {
    std::stable_sort(out.begin(), out.end(),
                     [](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); });
  }
  return out;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), ::toupper);
  return s;
}

bool has_subject(const EmbeddingSet& gallery, const std::vector<int>& candidates, const std::string& subject) {
  return std::any_of(candidates.begin(), candidates.end(),
                     [&](int g) { return gallery.items[g].subject_id == subject; });
}

struct CellCounts {
  int hits = 0;
  int used = 0;
  int skipped = 0;
};

// Scores `probes` against `candidates`, appending into `counts`.
void score(const EmbeddingSet& gallery, const EmbeddingItem& probe, const std::vector<int>& candidates,
           bool skip_missing, CellCounts& counts) {
  std::vector<int> own_free;
  own_free.reserve(candidates.size());
  for (int g : candidates) {
    if (gallery.items[g].sequence_id != probe.sequence_id) own_free.push_back(g);
  }
  if (skip_missing && !has_subject(gallery, own_free, probe.subject_id)) {
    ++counts.skipped;
    return;
  }
  ++counts.used;
  const int nn = nearest_gallery(probe, gallery, &own_free);
  if (nn >= 0 && gallery.items[nn].subject_id == probe.subject_id) ++counts.hits;
}

void require_views(const EmbeddingSet& s, const char* what) {
  for (const auto& it : s.items) {
    if (!it.view) throw GaitError(ErrorKind::kMissingMetadata, std::string(what) + " item " + it.sequence_id + " has no view");
  }
}

}  // namespace

void normalize_parts(std::span<float> values, int parts) {
  const size_t d = values.size() / static_cast<size_t>(parts);
  for (int p = 0; p < parts; ++p) {
    auto part = values.subspan(p * d, d);
    double sq = 0.0;
    for (float v : part) sq += static_cast<double>(v) * v;
    if (sq == 0.0) throw GaitError(ErrorKind::kZeroNormVector, "zero-norm part " + std::to_string(p));
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : part) v = static_cast<float>(v * inv);
  }
}

EmbeddingSet extract_embeddings(const Embedder& embed, int parts, int dim, std::span<const GaitSequence> sequences,
                                int batch) {
  EmbeddingSet out;
  out.parts = parts;
  out.dim = dim;
  batch = std::max(1, batch);
  const size_t stride = static_cast<size_t>(parts) * dim;
  for (size_t start = 0; start < sequences.size(); start += batch) {
    const size_t end = std::min(sequences.size(), start + batch);
    std::vector<Clip> clips;
    for (size_t i = start; i < end; ++i) clips.push_back(full_clip(sequences[i]));
    const Tensor e = embed(clips);
    if (e.size() != clips.size() * stride) throw GaitError(ErrorKind::kShapeMismatch, "embedder output " + e.shape_str());
    for (size_t i = start; i < end; ++i) {
      const GaitSequence& s = sequences[i];
      EmbeddingItem item;
      item.sequence_id = s.sequence_id;
      item.subject_id = s.subject_id.value_or(s.sequence_id);
      item.view = s.view_label;
      item.condition = s.condition;
      item.values.assign(e.ptr() + (i - start) * stride, e.ptr() + (i - start + 1) * stride);
      normalize_parts(item.values, parts);
      out.items.push_back(std::move(item));
    }
  }
  return out;
}

EmbeddingSet extract_embeddings(Encoder& model, std::span<const GaitSequence> sequences, int batch) {
  return extract_embeddings([&](std::span<const Clip> clips) { return model.encode(clips, Mode::kEval); },
                            model.config().parts, model.config().embed_dim, sequences, batch);
}

double pairwise_distance(std::span<const float> a, std::span<const float> b, int parts) {
  if (a.size() != b.size() || parts <= 0 || a.size() % parts != 0) {
    throw GaitError(ErrorKind::kShapeMismatch, "embeddings differ in shape");
  }
  const size_t d = a.size() / parts;
  double total = 0.0;
  for (int p = 0; p < parts; ++p) {
    double sq = 0.0;
    for (size_t k = p * d; k < (p + 1) * d; ++k) {
      const double diff = static_cast<double>(a[k]) - b[k];
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / parts;
}

int nearest_gallery(const EmbeddingItem& probe, const EmbeddingSet& gallery, const std::vector<int>* candidates) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](int g) {
    const auto& item = gallery.items[g];
    if (item.sequence_id == probe.sequence_id) return;
    const double d = pairwise_distance(probe.values, item.values, gallery.parts);
    if (d < best_d || (d == best_d && g < best)) {
      best_d = d;
      best = g;
    }
  };
  if (candidates) {
    for (int g : *candidates) consider(g);
  } else {
    for (int g = 0; g < static_cast<int>(gallery.items.size()); ++g) consider(g);
  }
  return best;
}

ProtocolKind protocol_kind_from(const std::string& name) {
  static const std::map<std::string, ProtocolKind> kinds = {
      {"casiab", ProtocolKind::kCasiaB}, {"casiab_star", ProtocolKind::kCasiaBStar},
      {"oumvlp", ProtocolKind::kOuMvlp}, {"oumvlp_noskip", ProtocolKind::kOuMvlpNoSkip},
      {"grew", ProtocolKind::kGrew},     {"gait3d", ProtocolKind::kGait3D},
      {"synthetic", ProtocolKind::kSynthetic}};
  auto it = kinds.find(name);
  if (it == kinds.end()) throw GaitError(ErrorKind::kRangeError, "unknown protocol '" + name + "'");
  return it->second;
}

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::kCasiaB: return "casiab";
    case ProtocolKind::kCasiaBStar: return "casiab_star";
    case ProtocolKind::kOuMvlp: return "oumvlp";
    case ProtocolKind::kOuMvlpNoSkip: return "oumvlp_noskip";
    case ProtocolKind::kGrew: return "grew";
    case ProtocolKind::kGait3D: return "gait3d";
    case ProtocolKind::kSynthetic: return "synthetic";
  }
  return "?";
}

Protocol protocol_rules(ProtocolKind kind) {
  Protocol p;
  p.tag = to_string(kind);
  switch (kind) {
    case ProtocolKind::kCasiaB:
    case ProtocolKind::kCasiaBStar:
    case ProtocolKind::kOuMvlp:
    case ProtocolKind::kSynthetic:
      p.view_averaged = true;
      break;
    case ProtocolKind::kOuMvlpNoSkip:
      p.view_averaged = true;
      p.skip_empty_gallery = false;
      break;
    case ProtocolKind::kGrew:
    case ProtocolKind::kGait3D:
      p.view_averaged = false;
      p.exclude_identical_view = false;
      p.skip_empty_gallery = false;
      break;
  }
  return p;
}

ViewMatrix cross_view_heatmap(const EmbeddingSet& probe, const EmbeddingSet& gallery, const Protocol& protocol) {
  require_views(probe, "probe");
  require_views(gallery, "gallery");
  ViewMatrix m;
  std::set<std::string> pv, gv;
  for (const auto& it : probe.items) pv.insert(*it.view);
  for (const auto& it : gallery.items) gv.insert(*it.view);
  m.probe_views = sorted_views(pv);
  m.gallery_views = sorted_views(gv);
  std::map<std::string, std::vector<int>> by_view;
  for (int g = 0; g < static_cast<int>(gallery.items.size()); ++g) by_view[*gallery.items[g].view].push_back(g);

  m.values.assign(m.probe_views.size(), std::vector<double>(m.gallery_views.size(), kNaN));
  for (size_t r = 0; r < m.probe_views.size(); ++r) {
    for (size_t c = 0; c < m.gallery_views.size(); ++c) {
      CellCounts counts;
      for (const auto& p : probe.items) {
        if (*p.view != m.probe_views[r]) continue;
        score(gallery, p, by_view[m.gallery_views[c]], protocol.skip_empty_gallery, counts);
      }
      if (counts.used > 0) m.values[r][c] = 100.0 * counts.hits / counts.used;
    }
  }
  return m;
}

RetrievalResult rank1(const EmbeddingSet& probe, const EmbeddingSet& gallery, const Protocol& protocol) {
  if (probe.items.empty() || gallery.items.empty()) {
    throw GaitError(ErrorKind::kEmptySet, "rank-1 needs non-empty probe and gallery sets");
  }
  if (probe.parts != gallery.parts || probe.dim != gallery.dim) {
    throw GaitError(ErrorKind::kShapeMismatch, "probe and gallery embeddings differ in shape");
  }
  RetrievalResult res;
  res.protocol = protocol.tag;
  const bool have_views =
      std::all_of(probe.items.begin(), probe.items.end(), [](const auto& i) { return i.view.has_value(); }) &&
      std::all_of(gallery.items.begin(), gallery.items.end(), [](const auto& i) { return i.view.has_value(); });

  if (protocol.view_averaged) {
    res.view_matrix = cross_view_heatmap(probe, gallery, protocol);
    // Recount per cell for used/skipped bookkeeping.
    std::map<std::string, std::vector<int>> by_view;
    for (int g = 0; g < static_cast<int>(gallery.items.size()); ++g) by_view[*gallery.items[g].view].push_back(g);
    double sum = 0.0;
    int cells = 0;
    const auto& m = res.view_matrix;
    for (size_t r = 0; r < m.probe_views.size(); ++r) {
      for (size_t c = 0; c < m.gallery_views.size(); ++c) {
        if (protocol.exclude_identical_view && m.probe_views[r] == m.gallery_views[c]) continue;
        CellCounts counts;
        for (const auto& p : probe.items) {
          if (*p.view == m.probe_views[r]) score(gallery, p, by_view[m.gallery_views[c]], protocol.skip_empty_gallery, counts);
        }
        res.probes_used += counts.used;
        res.probes_skipped += counts.skipped;
        if (!std::isnan(m.values[r][c])) {
          sum += m.values[r][c];
          ++cells;
        }
      }
    }
    if (cells == 0) throw GaitError(ErrorKind::kEmptyGalleryForProbe, "no probe had a usable gallery");
    res.rank1 = sum / cells;
    return res;
  }

  std::vector<int> all(gallery.items.size());
  for (size_t g = 0; g < all.size(); ++g) all[g] = static_cast<int>(g);
  CellCounts counts;
  for (const auto& p : probe.items) score(gallery, p, all, protocol.skip_empty_gallery, counts);
  res.probes_used = counts.used;
  res.probes_skipped = counts.skipped;
  if (counts.used == 0) throw GaitError(ErrorKind::kEmptyGalleryForProbe, "no probe had a usable gallery");
  res.rank1 = 100.0 * counts.hits / counts.used;
  if (have_views) res.view_matrix = cross_view_heatmap(probe, gallery, protocol);
  return res;
}

Partition partition_for(const EmbeddingSet& all, ProtocolKind kind) {
  Partition part;
  part.gallery.parts = all.parts;
  part.gallery.dim = all.dim;
  auto add_probe = [&](const std::string& group, const EmbeddingItem& item) {
    auto& set = part.probes[group];
    set.parts = all.parts;
    set.dim = all.dim;
    set.items.push_back(item);
  };
  for (const auto& item : all.items) {
    if (!item.condition) {
      throw GaitError(ErrorKind::kMissingMetadata, "sequence " + item.sequence_id + " has no condition tag");
    }
    const std::string& cond = *item.condition;
    switch (kind) {
      case ProtocolKind::kCasiaB:
      case ProtocolKind::kCasiaBStar: {
        if (!item.view) throw GaitError(ErrorKind::kMissingMetadata, "sequence " + item.sequence_id + " has no view");
        const auto [type, num] = split_condition(cond);
        if (num < 0) {
          throw GaitError(ErrorKind::kMissingMetadata, "condition '" + cond + "' lacks a sequence number");
        }
        if (type == "nm" && num <= 4) {
          part.gallery.items.push_back(item);
        } else if (type == "nm" || type == "bg" || type == "cl") {
          add_probe(upper(type), item);
        }
        break;
      }
      case ProtocolKind::kOuMvlp:
      case ProtocolKind::kOuMvlpNoSkip: {
        if (!item.view) throw GaitError(ErrorKind::kMissingMetadata, "sequence " + item.sequence_id + " has no view");
        if (cond == "01") {
          part.gallery.items.push_back(item);
        } else if (cond == "00") {
          add_probe("ALL", item);
        }
        break;
      }
      case ProtocolKind::kGrew:
      case ProtocolKind::kGait3D: {
        if (cond.rfind("gallery", 0) == 0) {
          part.gallery.items.push_back(item);
        } else if (cond.rfind("probe", 0) == 0) {
          add_probe("ALL", item);
        }
        break;
      }
      case ProtocolKind::kSynthetic: {
        const auto [type, num] = split_condition(cond);
        if (num == 1 && type == "nm") {
          part.gallery.items.push_back(item);
        } else {
          add_probe(upper(type), item);
        }
        break;
      }
    }
  }
  if (part.gallery.items.empty() || part.probes.empty()) {
    throw GaitError(ErrorKind::kEmptySet, "protocol " + to_string(kind) + " found no gallery or no probes");
  }
  return part;
}

RetrievalResult evaluate_protocol(const EmbeddingSet& all, ProtocolKind kind) {
  const Partition part = partition_for(all, kind);
  const Protocol rules = protocol_rules(kind);
  RetrievalResult res;
  res.protocol = rules.tag;
  double sum = 0.0;
  for (const auto& [group, probes] : part.probes) {
    RetrievalResult r = rank1(probes, part.gallery, rules);
    res.per_condition[group] = r.rank1;
    res.probes_used += r.probes_used;
    res.probes_skipped += r.probes_skipped;
    sum += r.rank1;
    // The first group (NM for CASIA-B) supplies the reported heatmap.
    if (group == "NM" || res.view_matrix.values.empty()) res.view_matrix = r.view_matrix;
  }
  res.rank1 = sum / part.probes.size();
  return res;
}

std::string to_json(const RetrievalResult& r) {
  nlohmann::json j;
  j["protocol"] = r.protocol;
  j["rank1"] = r.rank1;
  j["per_condition"] = r.per_condition;
  j["probes_used"] = r.probes_used;
  j["probes_skipped"] = r.probes_skipped;
  nlohmann::json vm;
  vm["probe_views"] = r.view_matrix.probe_views;
  vm["gallery_views"] = r.view_matrix.gallery_views;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.view_matrix.values) {
    nlohmann::json jr = nlohmann::json::array();
    for (double v : row) jr.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    rows.push_back(jr);
  }
  vm["values"] = rows;
  j["view_matrix"] = vm;
  return j.dump(2);
}

RetrievalResult result_from_json(const std::string& text) {
  RetrievalResult r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.protocol = j.value("protocol", "");
    r.rank1 = j.at("rank1").get<double>();
    r.per_condition = j.at("per_condition").get<std::map<std::string, double>>();
    r.probes_used = j.value("probes_used", 0);
    r.probes_skipped = j.value("probes_skipped", 0);
    const auto& vm = j.at("view_matrix");
    r.view_matrix.probe_views = vm.at("probe_views").get<std::vector<std::string>>();
    r.view_matrix.gallery_views = vm.at("gallery_views").get<std::vector<std::string>>();
    for (const auto& row : vm.at("values")) {
      std::vector<double> vals;
      for (const auto& v : row) vals.push_back(v.is_null() ? kNaN : v.get<double>());
      r.view_matrix.values.push_back(std::move(vals));
    }
  } catch (const nlohmann::json::exception& e) {
    throw GaitError(ErrorKind::kFormatError, std::string("bad result file: ") + e.what());
  }
  return r;
}

void write_heatmap_csv(const std::filesystem::path& out, const ViewMatrix& m) {
  std::ofstream f(out);
  if (!f) throw GaitError(ErrorKind::kIoError, "cannot write " + out.string());
  f << "probe\\gallery";
  for (const auto& g : m.gallery_views) f << ',' << g;
  f << '\n';
  for (size_t r = 0; r < m.probe_views.size(); ++r) {
    f << m.probe_views[r];
    for (double v : m.values[r]) {
      f << ',';
      if (!std::isnan(v)) f << v;
    }
    f << '\n';
  }
}

void write_heatmap_png(const std::filesystem::path& out, const ViewMatrix& m, int cell_px) {
  const int rows = static_cast<int>(m.probe_views.size());
  const int cols = static_cast<int>(m.gallery_views.size());
  if (rows == 0 || cols == 0) throw GaitError(ErrorKind::kEmptySet, "empty view matrix");
  cv::Mat gray(rows, cols, CV_8UC1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = m.values[r][c];
      gray.at<std::uint8_t>(r, c) = std::isnan(v) ? 0 : static_cast<std::uint8_t>(std::lround(v * 2.55));
    }
  }
  cv::Mat color, big;
  cv::applyColorMap(gray, color, cv::COLORMAP_VIRIDIS);
  cv::resize(color, big, cv::Size(cols * cell_px, rows * cell_px), 0, 0, cv::INTER_NEAREST);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = m.values[r][c];
      if (std::isnan(v)) continue;
      cv::putText(big, std::to_string(static_cast<int>(std::lround(v))), {c * cell_px + 2, r * cell_px + cell_px - 8},
                  cv::FONT_HERSHEY_PLAIN, 0.7, v > 60 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255));
    }
  }
  if (!cv::imwrite(out.string(), big)) throw GaitError(ErrorKind::kIoError, "cannot write " + out.string());
}

}  // namespace gaitlab
