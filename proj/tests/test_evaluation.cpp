#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "gaitlab/errors.hpp"
#include "gaitlab/evaluation.hpp"
#include "gaitlab/synthetic.hpp"
#include "helpers.hpp"

using namespace gaitlab;

namespace {

EmbeddingItem item(const std::string& seq, const std::string& subj, const std::string& view, const std::string& cond,
                   std::vector<float> v) {
  EmbeddingItem it;
  it.sequence_id = seq;
  it.subject_id = subj;
  it.view = view;
  it.condition = cond;
  it.values = std::move(v);
  return it;
}

std::vector<float> random_unit(std::mt19937_64& rng, int parts, int dim) {
  std::normal_distribution<float> nd;
  std::vector<float> v(static_cast<size_t>(parts) * dim);
  for (auto& x : v) x = nd(rng);
  normalize_parts(v, parts);
  return v;
}

double oracle_distance(const std::vector<float>& a, const std::vector<float>& b, int parts) {
  const int dim = static_cast<int>(a.size()) / parts;
  double total = 0;
  for (int p = 0; p < parts; ++p) {
    double s = 0;
    for (int j = 0; j < dim; ++j) {
      const double d = double(a[p * dim + j]) - b[p * dim + j];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / parts;
}

// Exhaustive nearest-neighbour reference, following the protocol rules.
double oracle_rank1(const EmbeddingSet& probe, const EmbeddingSet& gallery, const Protocol& proto) {
  auto score = [&](const EmbeddingItem& p, const std::vector<int>& cand, int& hits, int& used) {
    std::vector<int> c;
    for (int g : cand) {
      if (gallery.items[g].sequence_id != p.sequence_id) c.push_back(g);
    }
    bool present = false;
    for (int g : c) present |= gallery.items[g].subject_id == p.subject_id;
    if (!present && proto.skip_empty_gallery) return;
    ++used;
    if (c.empty()) return;
    int best = c[0];
    for (int g : c) {
      if (oracle_distance(p.values, gallery.items[g].values, probe.parts) <
          oracle_distance(p.values, gallery.items[best].values, probe.parts)) {
        best = g;
      }
    }
    hits += gallery.items[best].subject_id == p.subject_id;
  };
  if (!proto.view_averaged) {
    std::vector<int> all;
    for (int g = 0; g < static_cast<int>(gallery.items.size()); ++g) all.push_back(g);
    int hits = 0, used = 0;
    for (const auto& p : probe.items) score(p, all, hits, used);
    return 100.0 * hits / used;
  }
  std::set<std::string> pv, gv;
  for (const auto& p : probe.items) pv.insert(*p.view);
  for (const auto& g : gallery.items) gv.insert(*g.view);
  double sum = 0;
  int cells = 0;
  for (const auto& a : pv) {
    for (const auto& b : gv) {
      if (proto.exclude_identical_view && a == b) continue;
      std::vector<int> cand;
      for (int g = 0; g < static_cast<int>(gallery.items.size()); ++g) {
        if (*gallery.items[g].view == b) cand.push_back(g);
      }
      int hits = 0, used = 0;
      for (const auto& p : probe.items) {
        if (*p.view == a) score(p, cand, hits, used);
      }
      if (used > 0) {
        sum += 100.0 * hits / used;
        ++cells;
      }
    }
  }
  return sum / cells;
}

EmbeddingSet one_hot_casia(int subjects, const std::vector<std::string>& views) {
  EmbeddingSet s;
  s.parts = 1;
  s.dim = subjects;
  std::vector<std::string> conds;
  for (int i = 1; i <= 6; ++i) conds.push_back("nm-0" + std::to_string(i));
  for (const char* c : {"bg-01", "bg-02", "cl-01", "cl-02"}) conds.push_back(c);
  for (int id = 0; id < subjects; ++id) {
    std::vector<float> v(subjects, 0.f);
    v[id] = 1.f;
    for (const auto& c : conds) {
      for (const auto& view : views) {
        s.items.push_back(item(std::to_string(id) + "-" + c + "-" + view, std::to_string(id), view, c, v));
      }
    }
  }
  return s;
}

}  // namespace

TEST_CASE("distance basics and two-loop oracle") {
  std::mt19937_64 rng(1);
  const auto a = random_unit(rng, 4, 5);
  CHECK(pairwise_distance(a, a, 4) == 0.0);
  std::vector<float> neg = a;
  for (auto& x : neg) x = -x;
  CHECK(pairwise_distance(a, neg, 4) == doctest::Approx(2.0));
  for (int t = 0; t < 100; ++t) {
    const auto x = random_unit(rng, 4, 5), y = random_unit(rng, 4, 5), z = random_unit(rng, 4, 5);
    CHECK(std::abs(pairwise_distance(x, y, 4) - oracle_distance(x, y, 4)) < 1e-6);
    CHECK(pairwise_distance(x, z, 4) <= pairwise_distance(x, y, 4) + pairwise_distance(y, z, 4) + 1e-9);
  }
  const std::vector<float> short_v(19, 0.1f);
  CHECK_THROWS_AS(pairwise_distance(a, short_v, 4), GaitError);
  std::vector<float> zero(8, 0.f);
  CHECK_THROWS_AS(normalize_parts(zero, 2), GaitError);
}

TEST_CASE("self match gives 100 percent") {
  std::mt19937_64 rng(2);
  EmbeddingSet g, p;
  g.parts = p.parts = 2;
  g.dim = p.dim = 3;
  for (int i = 0; i < 5; ++i) {
    const auto v = random_unit(rng, 2, 3);
    g.items.push_back(item("g" + std::to_string(i), "s" + std::to_string(i), "0", "a", v));
    p.items.push_back(item("p" + std::to_string(i), "s" + std::to_string(i), "0", "b", v));
  }
  CHECK(rank1(p, g, Protocol{"plain", false, false, true}).rank1 == 100.0);
}

TEST_CASE("rank-1 equals an exhaustive oracle on random sets") {
  std::mt19937_64 rng(3);
  const std::vector<Protocol> protos = {{"plain", false, false, true},
                                        {"views", true, true, true},
                                        {"views_noskip", true, true, false},
                                        {"views_diag", true, false, true}};
  for (int trial = 0; trial < 100; ++trial) {
    EmbeddingSet g, p;
    g.parts = p.parts = 2;
    g.dim = p.dim = 3;
    const int subjects = 2 + static_cast<int>(rng() % 6);
    const int n = 20 + static_cast<int>(rng() % 80);
    for (int i = 0; i < n; ++i) {
      const std::string subj = std::to_string(rng() % subjects), view = std::to_string(rng() % 3);
      auto& set = rng() % 2 ? g : p;
      set.items.push_back(item("x" + std::to_string(i), subj, view, "c", random_unit(rng, 2, 3)));
    }
    if (g.items.empty() || p.items.empty()) continue;
    for (const auto& proto : protos) {
      double got = 0, want = 0;
      bool got_err = false, want_err = false;
      try {
        got = rank1(p, g, proto).rank1;
      } catch (const GaitError&) {
        got_err = true;
      }
      try {
        want = oracle_rank1(p, g, proto);
        want_err = std::isnan(want);
      } catch (...) {
        want_err = true;
      }
      CHECK(got_err == want_err);
      if (!got_err && !want_err) CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("crafted 3-subject, 2-view nearest neighbours") {
  EmbeddingSet g, p;
  g.parts = p.parts = 1;
  g.dim = p.dim = 2;
  auto at = [](double deg) {
    const double r = deg * 3.14159265358979 / 180;
    return std::vector<float>{static_cast<float>(std::cos(r)), static_cast<float>(std::sin(r))};
  };
  g.items = {item("ga0", "A", "0", "g", at(0)), item("gb0", "B", "0", "g", at(100)), item("gc0", "C", "0", "g", at(200)),
             item("ga1", "A", "1", "g", at(10)), item("gb1", "B", "1", "g", at(110)), item("gc1", "C", "1", "g", at(210))};
  // A matches, B lands nearest to C's entries, C matches
  p.items = {item("pa", "A", "1", "p", at(5)), item("pb", "B", "1", "p", at(170)), item("pc", "C", "1", "p", at(205))};
  const auto r = rank1(p, g, Protocol{"v", true, true, true});
  CHECK(r.rank1 == doctest::Approx(200.0 / 3));
  CHECK(r.probes_used == 3);
  CHECK(nearest_gallery(p.items[1], g) == 2);
}

TEST_CASE("skip and no-skip differ by the probe without a gallery match") {
  EmbeddingSet g, p;
  g.parts = p.parts = 1;
  g.dim = p.dim = 3;
  const std::vector<float> e0 = {1, 0, 0}, e1 = {0, 1, 0}, e2 = {0, 0, 1};
  g.items = {item("g0", "0", "090", "01", e0), item("g1", "1", "090", "01", e1)};
  // subject 2 was never recorded at 090 in the gallery
  p.items = {item("p0", "0", "000", "00", e0), item("p1", "1", "000", "00", e1), item("p2", "2", "000", "00", e2)};
  const auto skip = rank1(p, g, protocol_rules(ProtocolKind::kOuMvlp));
  const auto keep = rank1(p, g, protocol_rules(ProtocolKind::kOuMvlpNoSkip));
  CHECK(skip.rank1 == 100.0);
  CHECK(skip.probes_skipped == 1);
  CHECK(keep.rank1 == doctest::Approx(200.0 / 3));
  CHECK(skip.rank1 - keep.rank1 == doctest::Approx(100.0 / 3));  // one of three probes
}

TEST_CASE("monotonicity: a farther gallery item changes nothing") {
  std::mt19937_64 rng(4);
  EmbeddingSet g, p;
  g.parts = p.parts = 1;
  g.dim = p.dim = 4;
  for (int i = 0; i < 10; ++i) {
    g.items.push_back(item("g" + std::to_string(i), std::to_string(i % 3), "0", "g", random_unit(rng, 1, 4)));
    p.items.push_back(item("p" + std::to_string(i), std::to_string(i % 3), "0", "p", random_unit(rng, 1, 4)));
  }
  const Protocol proto{"plain", false, false, true};
  const double before = rank1(p, g, proto).rank1;
  // antipode of the probe's current nearest neighbour is never closer
  std::vector<int> nearest;
  for (const auto& q : p.items) nearest.push_back(nearest_gallery(q, g));
  std::vector<float> far = p.items[0].values;
  for (auto& x : far) x = -x;
  g.items.push_back(item("far", "9", "0", "g", far));
  CHECK(nearest_gallery(p.items[0], g) == nearest[0]);
  CHECK(rank1(p, g, proto).rank1 == before);
}

TEST_CASE("CASIA-B partition on a two-subject mock") {
  const std::vector<std::string> views = {"000", "018", "036", "054", "072", "090", "108", "126", "144", "162", "180"};
  const EmbeddingSet all = one_hot_casia(2, views);
  REQUIRE(all.items.size() == 220);
  const Partition part = partition_for(all, ProtocolKind::kCasiaB);
  CHECK(part.gallery.items.size() == 2 * 11 * 4);
  REQUIRE(part.probes.size() == 3);
  for (const char* c : {"NM", "BG", "CL"}) CHECK(part.probes.at(c).items.size() == 2 * 11 * 2);

  const auto res = evaluate_protocol(all, ProtocolKind::kCasiaB);
  for (const auto& [cond, acc] : res.per_condition) CHECK(acc == 100.0);
  CHECK(res.rank1 == 100.0);
  const auto& m = res.view_matrix;
  REQUIRE(m.values.size() == 11);
  for (size_t r = 0; r < 11; ++r) {
    for (size_t c = 0; c < 11; ++c) {
      CHECK(m.values[r][c] == 100.0);
      CHECK(m.values[r][c] == m.values[c][r]);
    }
  }

  EmbeddingSet broken = all;
  broken.items[3].view.reset();
  CHECK_THROWS_AS(partition_for(broken, ProtocolKind::kCasiaB), GaitError);
}

TEST_CASE("identical views are excluded and the average is the off-diagonal mean") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> views = {"000", "090", "180"};
  EmbeddingSet all = one_hot_casia(4, views);
  // noisy embeddings so cells differ
  for (auto& it : all.items) {
    auto noise = random_unit(rng, 1, 4);
    for (int j = 0; j < 4; ++j) it.values[j] = it.values[j] + 1.2f * noise[j];
    normalize_parts(it.values, 1);
  }
  const Partition part = partition_for(all, ProtocolKind::kCasiaB);
  const Protocol proto = protocol_rules(ProtocolKind::kCasiaB);
  for (const auto& [cond, probes] : part.probes) {
    const auto r = rank1(probes, part.gallery, proto);
    double sum = 0;
    int n = 0;
    for (size_t a = 0; a < r.view_matrix.probe_views.size(); ++a) {
      for (size_t b = 0; b < r.view_matrix.gallery_views.size(); ++b) {
        if (a != b && !std::isnan(r.view_matrix.values[a][b])) {
          sum += r.view_matrix.values[a][b];
          ++n;
        }
      }
    }
    CHECK(r.rank1 == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(r.rank1 == doctest::Approx(oracle_rank1(probes, part.gallery, proto)).epsilon(1e-12));
  }
}

TEST_CASE("OU-MVLP, GREW and synthetic partitions") {
  std::mt19937_64 rng(6);
  EmbeddingSet s;
  s.parts = 1;
  s.dim = 3;
  for (const char* c : {"00", "01", "02"}) s.items.push_back(item(std::string("a") + c, "1", "000", c, random_unit(rng, 1, 3)));
  auto ou = partition_for(s, ProtocolKind::kOuMvlp);
  CHECK(ou.gallery.items.size() == 1);
  CHECK(ou.probes.at("ALL").items.size() == 1);

  EmbeddingSet gr = s;
  gr.items[0].condition = "gallery";
  gr.items[1].condition = "probe";
  gr.items[2].condition = "probe_2";
  auto grew = partition_for(gr, ProtocolKind::kGrew);
  CHECK(grew.gallery.items.size() == 1);
  CHECK(grew.probes.at("ALL").items.size() == 2);
  CHECK_FALSE(protocol_rules(ProtocolKind::kGrew).view_averaged);

  EmbeddingSet sy = s;
  sy.items[0].condition = "nm-01";
  sy.items[1].condition = "nm-02";
  sy.items[2].condition = "cl-01";
  auto syn = partition_for(sy, ProtocolKind::kSynthetic);
  CHECK(syn.gallery.items.size() == 1);
  CHECK(syn.probes.size() == 2);
}

TEST_CASE("embedding extraction is deterministic, order free and unit norm") {
  EncoderConfig cfg;
  cfg.stem_channels = 4;
  cfg.channels = {4, 8, 8, 8};
  cfg.parts = 4;
  cfg.embed_dim = 6;
  Encoder enc(cfg, 1);
  CorpusSpec spec;
  spec.n_ids = 2;
  spec.views = {90};
  spec.seqs_per_cell = 1;
  spec.frames = 9;
  auto seqs = build_corpus(spec);
  GaitSequence copy = seqs[0];
  copy.sequence_id = "copy";
  std::mt19937_64 rng(7);
  std::shuffle(copy.frames.begin(), copy.frames.end(), rng);
  seqs.push_back(copy);
  const auto set = extract_embeddings(enc, seqs, 2);
  REQUIRE(set.items.size() == 3);
  CHECK(set.items[2].values == set.items[0].values);
  CHECK(extract_embeddings(enc, seqs, 1).items[1].values == set.items[1].values);
  for (const auto& it : set.items) {
    for (int p = 0; p < 4; ++p) {
      double s = 0;
      for (int j = 0; j < 6; ++j) s += std::pow(it.values[p * 6 + j], 2);
      CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("result json and heatmap files") {
  testing::TempDir tmp("eval_io");
  const auto res = evaluate_protocol(one_hot_casia(2, {"000", "090"}), ProtocolKind::kCasiaB);
  const auto back = result_from_json(to_json(res));
  CHECK(back.rank1 == res.rank1);
  CHECK(back.per_condition == res.per_condition);
  CHECK(back.view_matrix.probe_views == res.view_matrix.probe_views);
  write_heatmap_csv(tmp.path / "h.csv", res.view_matrix);
  write_heatmap_png(tmp.path / "h.png", res.view_matrix);
  CHECK(std::filesystem::file_size(tmp.path / "h.png") > 0);
  std::ifstream is(tmp.path / "h.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header.find("090") != std::string::npos);
}
