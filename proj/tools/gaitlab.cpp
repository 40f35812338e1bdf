// gaitlab: command-line front end for the self-supervised gait pipeline.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "gaitlab/config.hpp"
#include "gaitlab/contrastive.hpp"
#include "gaitlab/dataset.hpp"
#include "gaitlab/errors.hpp"
#include "gaitlab/evaluation.hpp"
#include "gaitlab/hypothesis.hpp"
#include "gaitlab/synthetic.hpp"
#include "gaitlab/transfer.hpp"
#include "gaitlab/view_sampler.hpp"

namespace fs = std::filesystem;
using namespace gaitlab;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_root() {
  const char* home = std::getenv("GAITLAB_HOME");
  return home && *home ? fs::path(home) : fs::path("gaitlab_runs");
}

// Applies `--section.key value` / `--section.key=value` pairs left over by CLI11.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& extras) {
  for (size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("flag --" + key + " needs a value");
      value = extras[++i];
    }
    cfg.set(key, value, "--" + key);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw GaitError(ErrorKind::kIoError, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw GaitError(ErrorKind::kIoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every run leaves its resolved config and seed next to its outputs. For a
// directory output they go inside it, otherwise beside the output file.
void record_run(const fs::path& out, bool is_dir, const RunConfig& cfg, const std::string& command) {
  const fs::path cfg_path = is_dir ? out / "resolved.cfg" : fs::path(out.string() + ".resolved.cfg");
  const fs::path seed_path = is_dir ? out / "seed.txt" : fs::path(out.string() + ".seed.txt");
  write_text(cfg_path, "# " + command + "\n" + cfg.resolved_text());
  write_text(seed_path, "seed = " + std::to_string(cfg.seed()) + "\n");
}

std::vector<GaitSequence> load_data(const fs::path& data) { return load_all(open_dataset(data)); }

// Sequence -> merged view class, from a `sequence_id<TAB>degrees` file or the
// manifest's view tags.
std::map<std::string, int> view_labels(const std::vector<GaitSequence>& seqs, const std::string& labels_path) {
  std::map<std::string, int> out;
  if (!labels_path.empty()) {
    std::istringstream in(read_text(labels_path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string id;
      double deg;
      if (!(ls >> id >> deg)) {
        throw GaitError(ErrorKind::kFormatError, labels_path + ":" + std::to_string(lineno) + ": expected 'id degrees'");
      }
      out[id] = view_label_from_degrees(deg);
    }
    return out;
  }
  for (const auto& s : seqs) {
    if (!s.view_label) throw GaitError(ErrorKind::kMissingLabels, "sequence " + s.sequence_id + " has no view tag");
    out[s.sequence_id] = view_label_from_degrees(std::stod(*s.view_label));
  }
  return out;
}

std::vector<Point> read_points(const std::string& path) {
  std::vector<Point> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line) {
      if (c == ',' || c == '\t') c = ' ';
    }
    std::istringstream ls(line);
    Point p;
    for (double v; ls >> v;) p.push_back(v);
    if (!p.empty()) out.push_back(std::move(p));
  }
  return out;
}

std::vector<int> read_labels(const std::string& path) {
  std::vector<int> out;
  std::map<std::string, int> ids;
  std::istringstream in(read_text(path));
  for (std::string tok; in >> tok;) out.push_back(ids.emplace(tok, static_cast<int>(ids.size())).first->second);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaitlab: self-supervised gait representation learning on binary silhouettes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunConfig cfg;
  std::string config_file;
  std::int64_t seed = -1;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "flat key = value config file");
    sub->add_option("--seed", seed, "global seed");
    sub->allow_extras();
    sub->footer("Any config key can be overridden as --section.key VALUE.");
  };

  // prepare
  std::string root, out, layout = "flat", storage = "packed";
  bool no_normalize = false;
  auto* prepare = app.add_subcommand("prepare", "pack a silhouette image tree into a container");
  prepare->add_option("--input,--root", root, "image tree root")->required();
  prepare->add_option("--output,--out", out, "output container");
  prepare->add_option("--layout", layout, "casia (subject/condition/view/frames) or flat (sequence/frames)")
      ->check(CLI::IsMember({"casia", "flat"}));
  prepare->add_option("--storage", storage)->check(CLI::IsMember({"packed", "png"}));
  prepare->add_flag("--no-normalize", no_normalize, "keep frames as they are (must already be 64x44)");
  common(prepare);

  // synth
  auto* synth = app.add_subcommand("synth", "render a labeled synthetic gait corpus");
  std::map<std::string, std::string> synth_flags;
  for (const auto& [flag, key] : std::vector<std::pair<std::string, std::string>>{
           {"--ids", "synth.ids"},
           {"--views", "synth.views"},
           {"--conditions", "synth.conditions"},
           {"--seqs-per-cell", "synth.seqs_per_cell"},
           {"--frames", "synth.frames"},
           {"--frame-jitter", "synth.frame_jitter"},
           {"--noise", "synth.noise"},
           {"--view-drift", "synth.view_drift"},
           {"--first-subject", "synth.first_subject"},
           {"--identity-pool", "synth.identity_pool"}}) {
    synth->add_option(flag, synth_flags[key], key);
  }
  bool casia_like = false;
  synth->add_flag("--casia-like", casia_like, "NM x6, BG x2, CL x2 per view");
  synth->add_option("--out", out, "output container");
  common(synth);

  // train-view-classifier / classify-views
  std::string data, labels, ckpt, stats;
  auto* tvc = app.add_subcommand("train-view-classifier", "train the 7-way view classifier");
  tvc->add_option("--data", data)->required();
  tvc->add_option("--labels", labels, "lines 'sequence_id degrees'; default: manifest view tags");
  tvc->add_option("--out", out, "output checkpoint");
  common(tvc);

  auto* cv = app.add_subcommand("classify-views", "per-sequence view statistics table");
  cv->add_option("--ckpt", ckpt)->required();
  cv->add_option("--data", data)->required();
  cv->add_option("--out", out, "output stats table");
  common(cv);

  // pretrain
  bool no_spatial = false, no_intraseq = false, no_sampling = false, no_negatives = false;
  std::string subset_frac;
  auto* pre = app.add_subcommand("pretrain", "self-supervised contrastive pre-training");
  pre->add_option("--data", data)->required();
  pre->add_option("--stats", stats, "view statistics table (needed unless --no-sampling)");
  pre->add_option("--out", out, "run directory");
  pre->add_flag("--no-spatial", no_spatial);
  pre->add_flag("--no-intraseq", no_intraseq);
  pre->add_flag("--no-sampling", no_sampling);
  pre->add_flag("--no-negatives", no_negatives);
  pre->add_option("--subset-frac", subset_frac);
  common(pre);

  // finetune
  std::string init = "random", dataset = "synthetic", subject_frac;
  auto* ft = app.add_subcommand("finetune", "supervised transfer (or training from scratch with --init random)");
  ft->add_option("--init", init, "pre-training checkpoint, or 'random'");
  ft->add_option("--data", data)->required();
  ft->add_option("--dataset", dataset)
      ->check(CLI::IsMember({"casiab", "casiab_star", "oumvlp", "grew", "gait3d", "synthetic"}));
  ft->add_option("--subject-frac", subject_frac);
  ft->add_option("--out", out, "run directory");
  common(ft);

  // evaluate / heatmap
  std::string protocol;
  auto* ev = app.add_subcommand("evaluate", "rank-1 retrieval under a dataset protocol");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--protocol", protocol)
      ->check(CLI::IsMember({"casiab", "casiab_star", "oumvlp", "oumvlp_noskip", "grew", "gait3d", "synthetic"}));
  ev->add_option("--out", out, "result JSON");
  common(ev);

  std::string result;
  auto* hm = app.add_subcommand("heatmap", "render a result's cross-view matrix as .png or .csv");
  hm->add_option("--result", result)->required();
  hm->add_option("--out", out)->required();
  common(hm);

  // hypothesis-check
  std::string embeddings, pi_radius, chain_len;
  auto* hc = app.add_subcommand("hypothesis-check", "distance-bound report on labeled embeddings");
  hc->add_option("--embeddings", embeddings, "one vector per line")->required();
  hc->add_option("--labels", labels, "one label per line")->required();
  hc->add_option("--pi-radius", pi_radius);
  hc->add_option("--chain-len", chain_len);
  hc->add_option("--out", out, "report JSON");
  common(hc);

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    if (!config_file.empty()) cfg.load_file(config_file);
    if (seed >= 0) cfg.set("seed", std::to_string(seed), "--seed");
    for (const auto& [key, value] : synth_flags) {
      if (!value.empty()) cfg.set(key, value, "--" + key);
    }
    if (casia_like) cfg.set("synth.casia_like", "true", "--casia-like");
    if (no_spatial) cfg.set("pretrain.spatial", "false", "--no-spatial");
    if (no_intraseq) cfg.set("pretrain.intraseq", "false", "--no-intraseq");
    if (no_sampling) cfg.set("pretrain.sampling", "false", "--no-sampling");
    if (no_negatives) cfg.set("pretrain.negatives", "false", "--no-negatives");
    if (!subset_frac.empty()) cfg.set("pretrain.subset_frac", subset_frac, "--subset-frac");
    if (!subject_frac.empty()) cfg.set("transfer.subject_fraction", subject_frac, "--subject-frac");
    if (!protocol.empty()) cfg.set("eval.protocol", protocol, "--protocol");
    if (!pi_radius.empty()) cfg.set("hypothesis.pi_radius", pi_radius, "--pi-radius");
    if (!chain_len.empty()) cfg.set("hypothesis.chain_len", chain_len, "--chain-len");
    apply_overrides(cfg, sub->remaining());
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const GaitError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    auto out_or = [&](const std::string& fallback) {
      return out.empty() ? default_root() / fallback : fs::path(out);
    };

    if (command == "prepare") {
      PackOptions opt;
      opt.layout = layout == "casia" ? DirectoryLayout::kCasia : DirectoryLayout::kFlat;
      opt.storage = storage == "png" ? StorageMode::kPng : StorageMode::kPacked;
      opt.normalize = !no_normalize;
      const fs::path dst = out_or("dataset.gssb");
      if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
      const auto manifest = pack_dataset(root, dst, opt);
      for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
      record_run(dst, false, cfg, command);
      std::cout << "packed " << manifest.entries.size() << " sequences into " << dst.string() << "\n";

    } else if (command == "synth") {
      const fs::path dst = out_or("synthetic.gssb");
      if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
      const auto seqs = build_corpus(cfg.synth());
      write_dataset(dst, seqs);
      record_run(dst, false, cfg, command);
      std::cout << "wrote " << seqs.size() << " sequences to " << dst.string() << "\n";

    } else if (command == "train-view-classifier") {
      const auto seqs = load_data(data);
      const auto label_of = view_labels(seqs, labels);
      const int window = static_cast<int>(cfg.get_int("view.window"));
      std::vector<LabeledClip> examples;
      for (const auto& s : seqs) {
        auto it = label_of.find(s.sequence_id);
        if (it == label_of.end()) continue;
        for (auto& c : view_windows(s, window)) examples.push_back({std::move(c), it->second});
      }
      auto model = train_view_classifier(examples, cfg.view_classifier());
      const fs::path dst = out_or("view_classifier.glck");
      if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
      nn::save_checkpoint(dst, model.to_checkpoint());
      record_run(dst, false, cfg, command);
      std::vector<std::vector<float>> inputs;
      std::vector<int> truth;
      for (const auto& e : examples) {
        inputs.push_back(build_view_input(e.clip));
        truth.push_back(e.label);
      }
      const auto pred = model.predict(inputs);
      int correct = 0;
      for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
      std::cout << "training accuracy " << 100.0 * correct / std::max<size_t>(1, pred.size()) << "% on "
                << pred.size() << " clips\n";

    } else if (command == "classify-views") {
      auto model = ViewClassifier::from_checkpoint(nn::load_checkpoint(ckpt));
      const auto seqs = load_data(data);
      const int window = static_cast<int>(cfg.get_int("view.window"));
      std::map<std::string, SequenceViewStats> table;
      for (const auto& s : seqs) {
        std::vector<std::vector<float>> inputs;
        for (const auto& c : view_windows(s, window)) inputs.push_back(build_view_input(c));
        const auto views = model.predict(inputs);
        table[s.sequence_id] = sequence_view_stats(views);
      }
      const fs::path dst = out_or("view_stats.tsv");
      if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
      write_stats_table(dst, table);
      record_run(dst, false, cfg, command);
      int dumb = 0;
      for (const auto& [_, st] : table) dumb += is_dumb(st, cfg.sampler());
      std::cout << table.size() << " sequences, " << dumb << " dumb\n";

    } else if (command == "pretrain") {
      const PretrainConfig pc = cfg.pretrain();
      pc.validate();
      std::optional<std::map<std::string, SequenceViewStats>> table;
      if (!stats.empty()) table = read_stats_table(stats);
      if (pc.sampling && !table) {
        throw GaitError(ErrorKind::kConfigConflict, "sampling augmentation is enabled; pass --stats or --no-sampling");
      }
      const fs::path dir = out_or("pretrain");
      fs::create_directories(dir);
      record_run(dir, true, cfg, command);
      auto run = run_pretraining(pc, load_data(data), table, dir, [&](const StepMetrics& m) {
        if (m.step % 50 == 0) std::cerr << "step " << m.step << " loss " << m.loss << " emb_std " << m.emb_std << "\n";
      });
      std::cout << "final checkpoint " << run.final_checkpoint.string() << "\n";

    } else if (command == "finetune") {
      const bool scratch = init == "random";
      const TransferConfig tc = cfg.transfer(dataset, scratch);
      tc.validate();
      auto seqs = load_data(data);
      const fs::path dir = out_or("finetune");
      fs::create_directories(dir);
      record_run(dir, true, cfg, command);
      TransferModel model = scratch ? TransferModel(Encoder(cfg.encoder(), cfg.seed()), tc.head_dim, cfg.seed() + 3)
                                    : attach_finetune_head(nn::load_checkpoint(init), tc.head_dim, cfg.seed() + 3);
      const auto path = run_supervised(tc, model, std::move(seqs), dir, [&](const SupervisedMetrics& m) {
        if (m.step % 50 == 0) std::cerr << "step " << m.step << " loss " << m.loss << "\n";
      });
      std::cout << "final checkpoint " << path.string() << "\n";

    } else if (command == "evaluate") {
      const nn::Checkpoint ck = nn::load_checkpoint(ckpt);
      const auto seqs = load_data(data);
      const int batch = static_cast<int>(cfg.get_int("eval.batch"));
      EmbeddingSet set;
      if (ck.meta.count("transfer.head_dim")) {
        TransferModel model = TransferModel::from_checkpoint(ck);
        set = extract_embeddings([&](std::span<const Clip> c) { return model.forward(c, Mode::kEval); },
                                 model.encoder().config().parts, model.head().out_dim(), seqs, batch);
      } else {
        Encoder enc = load_encoder(ck);
        set = extract_embeddings(enc, seqs, batch);
      }
      const auto res = evaluate_protocol(set, protocol_kind_from(cfg.get_string("eval.protocol")));
      const fs::path dst = out_or("result.json");
      write_text(dst, to_json(res) + "\n");
      record_run(dst, false, cfg, command);
      std::cout << "rank-1 " << res.rank1 << "%";
      for (const auto& [k, v] : res.per_condition) std::cout << "  " << k << " " << v << "%";
      std::cout << "\n";

    } else if (command == "heatmap") {
      const auto res = result_from_json(read_text(result));
      const fs::path dst(out);
      if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
      if (dst.extension() == ".csv") {
        write_heatmap_csv(dst, res.view_matrix);
      } else {
        write_heatmap_png(dst, res.view_matrix);
      }
      std::cout << "wrote " << dst.string() << "\n";

    } else if (command == "hypothesis-check") {
      const auto points = read_points(embeddings);
      const auto lab = read_labels(labels);
      const auto report = bounds_report(points, lab, cfg.get_real("hypothesis.pi_radius"),
                                        static_cast<int>(cfg.get_int("hypothesis.chain_len")));
      const std::string text = to_json(report);
      if (out.empty()) {
        std::cout << text << "\n";
      } else {
        write_text(out, text + "\n");
        record_run(out, false, cfg, command);
      }
    }
  } catch (const GaitError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
