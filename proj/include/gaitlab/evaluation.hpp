#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/encoder.hpp"

namespace gaitlab {

struct EmbeddingItem {
  std::string sequence_id;
  std::string subject_id;
  std::optional<std::string> view;
  std::optional<std::string> condition;
  std::vector<float> values;  // parts * dim, each part unit length
};

struct EmbeddingSet {
  int parts = 0;
  int dim = 0;
  std::vector<EmbeddingItem> items;
};

/// L2-normalizes each of the `parts` consecutive blocks in place.
/// Throws ZeroNormVector.
void normalize_parts(std::span<float> values, int parts);

/// Full-sequence inference in eval mode, `batch` sequences per forward.
/// Sequences without a subject id get their sequence id as subject.
EmbeddingSet extract_embeddings(Encoder& model, std::span<const GaitSequence> sequences, int batch = 8);

/// Same, for any model mapping clips to [B, parts, dim].
using Embedder = std::function<Tensor(std::span<const Clip>)>;
EmbeddingSet extract_embeddings(const Embedder& embed, int parts, int dim, std::span<const GaitSequence> sequences,
                                int batch = 8);

/// Mean over parts of the Euclidean distance between corresponding parts.
double pairwise_distance(std::span<const float> a, std::span<const float> b, int parts);

struct Protocol {
  std::string tag;
  bool view_averaged = false;          // average over (probe view, gallery view) cells
  bool exclude_identical_view = true;  // drop diagonal cells from the average
  bool skip_empty_gallery = true;      // skip probes whose subject is absent from the gallery
};

enum class ProtocolKind { kCasiaB, kCasiaBStar, kOuMvlp, kOuMvlpNoSkip, kGrew, kGait3D, kSynthetic };

ProtocolKind protocol_kind_from(const std::string& name);
std::string to_string(ProtocolKind kind);
Protocol protocol_rules(ProtocolKind kind);

/// rank-1 per (probe view, gallery view). NaN marks cells without probes.
struct ViewMatrix {
  std::vector<std::string> probe_views;
  std::vector<std::string> gallery_views;
  std::vector<std::vector<double>> values;
};

struct RetrievalResult {
  std::string protocol;
  double rank1 = 0.0;  // percent
  std::map<std::string, double> per_condition;
  ViewMatrix view_matrix;
  int probes_used = 0;
  int probes_skipped = 0;
};

/// Nearest gallery index for one probe among `candidates` (all when empty
/// optional); ties go to the lowest index, the probe's own sequence is never
/// a candidate. Returns -1 if nothing is left.
int nearest_gallery(const EmbeddingItem& probe, const EmbeddingSet& gallery,
                    const std::vector<int>* candidates = nullptr);

RetrievalResult rank1(const EmbeddingSet& probe, const EmbeddingSet& gallery, const Protocol& protocol);
ViewMatrix cross_view_heatmap(const EmbeddingSet& probe, const EmbeddingSet& gallery, const Protocol& protocol);

struct Partition {
  EmbeddingSet gallery;
  std::map<std::string, EmbeddingSet> probes;  // keyed by probe condition group
};

/// Splits one embedding set into gallery and probe groups by the dataset's
/// metadata conventions (see README). Throws MissingMetadata.
Partition partition_for(const EmbeddingSet& all, ProtocolKind kind);

/// Partition + rank1 per probe group; overall rank1 is the mean of groups.
RetrievalResult evaluate_protocol(const EmbeddingSet& all, ProtocolKind kind);

std::string to_json(const RetrievalResult& result);
RetrievalResult result_from_json(const std::string& text);
void write_heatmap_csv(const std::filesystem::path& out, const ViewMatrix& matrix);
void write_heatmap_png(const std::filesystem::path& out, const ViewMatrix& matrix, int cell_px = 24);

}  // namespace gaitlab
