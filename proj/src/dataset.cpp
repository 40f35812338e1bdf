#include "gaitlab/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "gaitlab/errors.hpp"

namespace gaitlab {
namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic = {'G', 'S', 'S', 'B'};

template <typename T>
void put(std::ostream& os, T v) {
  std::array<char, sizeof(T)> buf{};
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename T>
T get(std::istream& is) {
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw GaitError(ErrorKind::kFormatError, "truncated container");
  std::uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw GaitError(ErrorKind::kFormatError, "string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw GaitError(ErrorKind::kFormatError, "truncated string");
  return s;
}

void put_optional(std::ostream& os, const std::optional<std::string>& s) {
  put<std::uint8_t>(os, s ? 1 : 0);
  if (s) put_string(os, *s);
}

std::optional<std::string> get_optional(std::istream& is) {
  if (get<std::uint8_t>(is) == 0) return std::nullopt;
  return get_string(is);
}

size_t packed_bytes(size_t bits) { return (bits + 7) / 8; }

std::vector<char> pack_bits(const GaitSequence& seq) {
  const size_t per_frame = seq.frames.front().pixels.size();
  std::vector<char> out(packed_bytes(per_frame * seq.frames.size()), 0);
  size_t bit = 0;
  for (const auto& f : seq.frames) {
    for (std::uint8_t p : f.pixels) {
      if (p) out[bit >> 3] = static_cast<char>(out[bit >> 3] | (0x80 >> (bit & 7)));
      ++bit;
    }
  }
  return out;
}

void check_sequence(const GaitSequence& seq) {
  if (seq.frames.empty()) throw GaitError(ErrorKind::kEmptySet, "sequence " + seq.sequence_id + " has no frames");
  const auto& f0 = seq.frames.front();
  for (const auto& f : seq.frames) {
    if (f.height != f0.height || f.width != f0.width) {
      throw GaitError(ErrorKind::kShapeMismatch, "frames of " + seq.sequence_id + " differ in size");
    }
  }
  if (seq.sequence_id.find_first_of("\t\n") != std::string::npos) {
    throw GaitError(ErrorKind::kFormatError, "sequence id contains tab or newline");
  }
}

ManifestEntry entry_for(const GaitSequence& seq) {
  ManifestEntry e;
  e.sequence_id = seq.sequence_id;
  e.subject_id = seq.subject_id;
  e.view = seq.view_label;
  e.condition = seq.condition;
  e.frame_count = seq.frame_count();
  e.height = seq.frames.front().height;
  e.width = seq.frames.front().width;
  return e;
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", i);
  return buf;
}

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".bmp" || ext == ".pgm" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

const ManifestEntry* DatasetManifest::find(const std::string& sequence_id) const {
  for (const auto& e : entries) {
    if (e.sequence_id == sequence_id) return &e;
  }
  return nullptr;
}

SilhouetteFrame read_frame_image(const fs::path& file) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw GaitError(ErrorKind::kCorruptFrame, "cannot decode " + file.string());
  SilhouetteFrame f(img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y) {
    const auto* row = img.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.cols; ++x) f.at(y, x) = row[x] > 127 ? 1 : 0;
  }
  return f;
}

void write_frame_image(const fs::path& file, const SilhouetteFrame& frame) {
  cv::Mat img(frame.height, frame.width, CV_8UC1);
  for (int y = 0; y < frame.height; ++y) {
    auto* row = img.ptr<std::uint8_t>(y);
    for (int x = 0; x < frame.width; ++x) row[x] = frame.at(y, x) ? 255 : 0;
  }
  if (!cv::imwrite(file.string(), img)) throw GaitError(ErrorKind::kIoError, "cannot write " + file.string());
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  if (!os) throw GaitError(ErrorKind::kIoError, "cannot write " + path.string());
  os << "# gaitlab dataset manifest\n";
  os << "format_version=" << manifest.format_version
     << "\tstorage=" << (manifest.storage == StorageMode::kPacked ? "packed" : "png")
     << "\tcontainer=" << manifest.container.filename().string() << "\n";
  for (const auto& e : manifest.entries) {
    os << "sequence_id=" << e.sequence_id;
    if (e.subject_id) os << "\tsubject=" << *e.subject_id;
    if (e.view) os << "\tview=" << *e.view;
    if (e.condition) os << "\tcondition=" << *e.condition;
    os << "\tframes=" << e.frame_count << "\theight=" << e.height << "\twidth=" << e.width;
    if (manifest.storage == StorageMode::kPacked) {
      os << "\toffset=" << e.offset;
    } else {
      os << "\tpath=" << e.path;
    }
    os << "\n";
  }
  for (const auto& w : manifest.warnings) os << "# warning: " << w << "\n";
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw GaitError(ErrorKind::kIoError, "cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  bool header = false;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      constexpr std::string_view kWarn = "# warning: ";
      if (line.rfind(kWarn, 0) == 0) m.warnings.push_back(line.substr(kWarn.size()));
      continue;
    }
    std::map<std::string, std::string> kv;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) {
        throw GaitError(ErrorKind::kFormatError, path.string() + ":" + std::to_string(lineno) + ": bad field");
      }
      kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    if (!header) {
      if (!kv.count("format_version")) throw GaitError(ErrorKind::kFormatError, "manifest header missing");
      m.format_version = static_cast<std::uint32_t>(std::stoul(kv["format_version"]));
      if (m.format_version != kContainerVersion) {
        throw GaitError(ErrorKind::kFormatError, "unsupported manifest version " + kv["format_version"]);
      }
      m.storage = kv["storage"] == "png" ? StorageMode::kPng : StorageMode::kPacked;
      m.container = m.storage == StorageMode::kPacked ? path.parent_path() / kv["container"] : path;
      header = true;
      continue;
    }
    ManifestEntry e;
    e.sequence_id = kv.at("sequence_id");
    if (!seen.insert(e.sequence_id).second) {
      throw GaitError(ErrorKind::kDuplicateSequence, e.sequence_id);
    }
    if (kv.count("subject")) e.subject_id = kv["subject"];
    if (kv.count("view")) e.view = kv["view"];
    if (kv.count("condition")) e.condition = kv["condition"];
    e.frame_count = std::stoi(kv.at("frames"));
    e.height = std::stoi(kv.at("height"));
    e.width = std::stoi(kv.at("width"));
    if (kv.count("offset")) e.offset = std::stoull(kv["offset"]);
    if (kv.count("path")) e.path = kv["path"];
    m.entries.push_back(std::move(e));
  }
  if (!header) throw GaitError(ErrorKind::kFormatError, "empty manifest " + path.string());
  return m;
}

DatasetManifest write_dataset(const fs::path& out, std::span<const GaitSequence> sequences, StorageMode mode) {
  std::set<std::string> ids;
  for (const auto& s : sequences) {
    check_sequence(s);
    if (!ids.insert(s.sequence_id).second) throw GaitError(ErrorKind::kDuplicateSequence, s.sequence_id);
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());

  DatasetManifest m;
  m.storage = mode;
  m.container = out;
  if (mode == StorageMode::kPacked) {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw GaitError(ErrorKind::kIoError, "cannot write " + out.string());
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kContainerVersion);
    put<std::uint64_t>(os, sequences.size());
    for (const auto& s : sequences) {
      ManifestEntry e = entry_for(s);
      put_string(os, s.sequence_id);
      put_optional(os, s.subject_id);
      put_optional(os, s.view_label);
      put_optional(os, s.condition);
      put<std::uint16_t>(os, static_cast<std::uint16_t>(e.height));
      put<std::uint16_t>(os, static_cast<std::uint16_t>(e.width));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(e.frame_count));
      e.offset = static_cast<std::uint64_t>(os.tellp());
      const auto bits = pack_bits(s);
      os.write(bits.data(), static_cast<std::streamsize>(bits.size()));
      m.entries.push_back(std::move(e));
    }
    if (!os) throw GaitError(ErrorKind::kIoError, "write failed for " + out.string());
    write_manifest(fs::path(out.string() + ".manifest"), m);
  } else {
    const fs::path frames_root = out.string() + ".frames";
    for (size_t i = 0; i < sequences.size(); ++i) {
      const auto& s = sequences[i];
      ManifestEntry e = entry_for(s);
      e.path = frames_root.filename().string() + "/" + std::to_string(i);
      const fs::path dir = out.parent_path() / e.path;
      fs::create_directories(dir);
      for (int t = 0; t < s.frame_count(); ++t) write_frame_image(dir / frame_name(t), s.frames[t]);
      m.entries.push_back(std::move(e));
    }
    write_manifest(out, m);
  }
  return m;
}

DatasetManifest open_dataset(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw GaitError(ErrorKind::kIoError, "cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) return read_manifest(path);

  DatasetManifest m;
  m.container = path;
  m.format_version = get<std::uint32_t>(is);
  if (m.format_version != kContainerVersion) {
    throw GaitError(ErrorKind::kFormatError, "unsupported container version " + std::to_string(m.format_version));
  }
  const auto count = get<std::uint64_t>(is);
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    ManifestEntry e;
    e.sequence_id = get_string(is);
    if (!seen.insert(e.sequence_id).second) throw GaitError(ErrorKind::kDuplicateSequence, e.sequence_id);
    e.subject_id = get_optional(is);
    e.view = get_optional(is);
    e.condition = get_optional(is);
    e.height = get<std::uint16_t>(is);
    e.width = get<std::uint16_t>(is);
    e.frame_count = static_cast<int>(get<std::uint32_t>(is));
    e.offset = static_cast<std::uint64_t>(is.tellg());
    const auto bytes = packed_bytes(static_cast<size_t>(e.height) * e.width * e.frame_count);
    is.seekg(static_cast<std::streamoff>(bytes), std::ios::cur);
    if (!is) throw GaitError(ErrorKind::kFormatError, "truncated container at " + e.sequence_id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

GaitSequence load_sequence(const DatasetManifest& manifest, const std::string& sequence_id) {
  const ManifestEntry* e = manifest.find(sequence_id);
  if (e == nullptr) throw GaitError(ErrorKind::kUnknownSequence, sequence_id);

  GaitSequence seq;
  seq.sequence_id = e->sequence_id;
  seq.subject_id = e->subject_id;
  seq.view_label = e->view;
  seq.condition = e->condition;

  if (manifest.storage == StorageMode::kPacked) {
    std::ifstream is(manifest.container, std::ios::binary);
    if (!is) throw GaitError(ErrorKind::kIoError, "cannot open " + manifest.container.string());
    const size_t per_frame = static_cast<size_t>(e->height) * e->width;
    std::vector<char> bits(packed_bytes(per_frame * e->frame_count));
    is.seekg(static_cast<std::streamoff>(e->offset));
    is.read(bits.data(), static_cast<std::streamsize>(bits.size()));
    if (!is) throw GaitError(ErrorKind::kFormatError, "truncated payload for " + sequence_id);
    size_t bit = 0;
    for (int t = 0; t < e->frame_count; ++t) {
      SilhouetteFrame f(e->height, e->width);
      for (auto& p : f.pixels) {
        p = (static_cast<unsigned char>(bits[bit >> 3]) >> (7 - (bit & 7))) & 1;
        ++bit;
      }
      seq.frames.push_back(std::move(f));
    }
  } else {
    const fs::path dir = manifest.container.parent_path() / e->path;
    for (int t = 0; t < e->frame_count; ++t) seq.frames.push_back(read_frame_image(dir / frame_name(t)));
  }
  return seq;
}

std::vector<GaitSequence> load_all(const DatasetManifest& manifest) {
  std::vector<GaitSequence> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_sequence(manifest, e.sequence_id));
  return out;
}

DatasetManifest pack_dataset(const fs::path& root_dir, const fs::path& out, const PackOptions& options) {
  if (!fs::is_directory(root_dir)) throw GaitError(ErrorKind::kIoError, "not a directory: " + root_dir.string());

  struct Pending {
    fs::path dir;
    GaitSequence seq;
  };
  std::vector<Pending> pending;
  if (options.layout == DirectoryLayout::kCasia) {
    for (const auto& subj : sorted_dirs(root_dir)) {
      for (const auto& cond : sorted_dirs(subj)) {
        for (const auto& view : sorted_dirs(cond)) {
          Pending p;
          p.dir = view;
          p.seq.subject_id = subj.filename().string();
          p.seq.condition = cond.filename().string();
          p.seq.view_label = view.filename().string();
          p.seq.sequence_id = *p.seq.subject_id + "-" + *p.seq.condition + "-" + *p.seq.view_label;
          pending.push_back(std::move(p));
        }
      }
    }
  } else {
    for (const auto& d : sorted_dirs(root_dir)) {
      Pending p;
      p.dir = d;
      p.seq.sequence_id = d.filename().string();
      pending.push_back(std::move(p));
    }
  }

  std::vector<std::string> warnings;
  std::vector<GaitSequence> sequences;
  for (auto& p : pending) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p.dir)) {
      if (e.is_regular_file() && is_image(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      SilhouetteFrame frame = read_frame_image(f);
      if (options.normalize && (frame.height != kFrameHeight || frame.width != kFrameWidth)) {
        try {
          frame = size_normalize(frame);
        } catch (const GaitError& err) {
          warnings.push_back(p.seq.sequence_id + ": dropped frame " + f.filename().string() + " (" + err.what() + ")");
          continue;
        }
      }
      p.seq.frames.push_back(std::move(frame));
    }
    if (p.seq.frames.empty()) {
      warnings.push_back(p.seq.sequence_id + ": no usable frames, sequence skipped");
      continue;
    }
    sequences.push_back(std::move(p.seq));
  }

  DatasetManifest m = write_dataset(out, sequences, options.storage);
  m.warnings = warnings;
  write_manifest(options.storage == StorageMode::kPacked ? fs::path(out.string() + ".manifest") : out, m);
  return m;
}

}  // namespace gaitlab
