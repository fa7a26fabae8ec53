#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xltal/data.hpp"

namespace xltal {

namespace fs = std::filesystem;
using nlohmann::json;

double index_to_time(const FeatureSequence& seq, double index) {
  return (index * seq.stride_frames + seq.window / 2.0) / seq.fps;
}

double time_to_index(const FeatureSequence& seq, double t_seconds) {
  return (t_seconds * seq.fps - seq.window / 2.0) / seq.stride_frames;
}

bool is_extrapolated(const FeatureSequence& seq, double index) {
  return index < 0.0 || index > static_cast<double>(seq.length() - 1);
}

FeatureSequence concat_channelwise(const FeatureSequence& a, const FeatureSequence& b) {
  if (a.video_id != b.video_id) {
    throw DataError("concat_channelwise: video ids differ (" + a.video_id + " vs " + b.video_id + ")");
  }
  if (a.channels() == 0) return b;
  if (b.channels() == 0) return a;
  if (a.length() != b.length()) {
    throw DataError("concat_channelwise: lengths differ (" + std::to_string(a.length()) + " vs " +
                    std::to_string(b.length()) + ")");
  }
  if (a.fps != b.fps || a.window != b.window || a.stride_frames != b.stride_frames) {
    throw DataError("concat_channelwise: timing metadata differs for " + a.video_id);
  }
  FeatureSequence out = a;
  out.features.resize(a.length(), a.channels() + b.channels());
  out.features << a.features, b.features;
  return out;
}

FeatureSequence resize_sequence(const FeatureSequence& seq, Index target_len) {
  if (target_len < 1) throw DataError("resize_sequence: target length must be positive");
  const Index n = seq.length();
  FeatureSequence out = seq;
  if (target_len == n) return out;
  out.features.resize(target_len, seq.channels());
  if (n == 1 || target_len == 1) {
    for (Index i = 0; i < target_len; ++i) out.features.row(i) = seq.features.row(0);
  } else {
    const double ratio = static_cast<double>(n - 1) / static_cast<double>(target_len - 1);
    for (Index i = 0; i < target_len; ++i) {
      const double pos = static_cast<double>(i) * ratio;
      Index lo = static_cast<Index>(std::floor(pos));
      if (lo >= n - 1) lo = n - 2;
      const double frac = pos - static_cast<double>(lo);
      out.features.row(i) = (1.0 - frac) * seq.features.row(lo) + frac * seq.features.row(lo + 1);
    }
    out.stride_frames = seq.stride_frames * ratio;
  }
  return out;
}

// ---- feature files --------------------------------------------------------

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'M', 'L', 'F', 'T'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return to_little(v);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

void write_feature_file(const fs::path& path, const Mat& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kFeatureMagic.data(), 4);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  for (Index i = 0; i < features.size(); ++i) put<float>(out, static_cast<float>(features.data()[i]));
}

Mat read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing feature file " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  const auto version = get<std::uint32_t>(in);
  const auto rows = get<std::uint32_t>(in);
  const auto cols = get<std::uint32_t>(in);
  if (!in || magic != kFeatureMagic) throw DataError("bad feature header in " + path.string());
  if (version != 1) throw DataError("unsupported feature file version in " + path.string());
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = get<float>(in);
  if (!in) throw DataError("feature file " + path.string() + " is shorter than its header declares");
  in.peek();
  if (!in.eof()) throw DataError("feature file " + path.string() + " has trailing data");
  return m;
}

// ---- manifest / annotations ------------------------------------------------

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw DataError("manifest " + path.string() + " must be a JSON array");
  std::vector<ManifestEntry> entries;
  try {
    for (const auto& e : j) {
      ManifestEntry m;
      m.video_id = e.at("video_id").get<std::string>();
      m.feature_file = e.at("feature_file").get<std::string>();
      m.fps = e.at("fps").get<double>();
      m.window = e.at("window").get<double>();
      m.stride_frames = e.at("stride_frames").get<double>();
      m.length = e.at("T_f").get<Index>();
      m.channels = e.at("C").get<Index>();
      if (m.fps <= 0 || m.stride_frames <= 0 || m.length < 1 || m.channels < 1) {
        throw DataError("manifest entry " + m.video_id + " has non-positive timing or shape");
      }
      entries.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  json j = json::array();
  for (const auto& m : entries) {
    j.push_back({{"video_id", m.video_id},
                 {"feature_file", m.feature_file},
                 {"fps", m.fps},
                 {"window", m.window},
                 {"stride_frames", m.stride_frames},
                 {"T_f", m.length},
                 {"C", m.channels}});
  }
  write_json(path, j);
}

const AnnotationSet* AnnotationFile::find(const std::string& video_id) const {
  for (const auto& v : videos) {
    if (v.video_id == video_id) return &v;
  }
  return nullptr;
}

AnnotationFile read_annotations(const fs::path& path) {
  const json j = read_json(path);
  AnnotationFile file;
  try {
    file.num_classes = j.at("num_classes").get<int>();
    if (file.num_classes < 1) throw DataError("annotations: num_classes must be positive");
    for (const auto& [vid, list] : j.at("videos").items()) {
      AnnotationSet set{vid, {}, file.num_classes};
      for (const auto& inst : list) {
        ActionInstance a{inst.at("start_s").get<double>(), inst.at("end_s").get<double>(),
                         inst.at("label").get<int>()};
        if (a.label < 0 || a.label >= file.num_classes) {
          throw DataError("annotations: label " + std::to_string(a.label) + " out of range in " + vid);
        }
        if (!(a.start_s >= 0.0 && a.start_s < a.end_s)) {
          throw DataError("annotations: invalid interval in " + vid);
        }
        set.instances.push_back(a);
      }
      file.videos.push_back(std::move(set));
    }
  } catch (const json::exception& e) {
    throw DataError("annotations " + path.string() + ": " + e.what());
  }
  return file;
}

void write_annotations(const fs::path& path, const AnnotationFile& file) {
  json videos = json::object();
  for (const auto& v : file.videos) {
    json list = json::array();
    for (const auto& a : v.instances) {
      list.push_back({{"start_s", a.start_s}, {"end_s", a.end_s}, {"label", a.label}});
    }
    videos[v.video_id] = std::move(list);
  }
  write_json(path, json{{"num_classes", file.num_classes}, {"videos", std::move(videos)}});
}

Dataset load_dataset(const fs::path& manifest_path, const fs::path& annotations_path) {
  Dataset data;
  const auto entries = read_manifest(manifest_path);
  AnnotationFile annotations;
  if (!annotations_path.empty()) annotations = read_annotations(annotations_path);
  const fs::path base = manifest_path.parent_path();
  for (const auto& e : entries) {
    FeatureSequence seq;
    seq.video_id = e.video_id;
    seq.fps = e.fps;
    seq.window = e.window;
    seq.stride_frames = e.stride_frames;
    seq.features = read_feature_file(base / e.feature_file);
    if (seq.length() != e.length || seq.channels() != e.channels) {
      std::ostringstream os;
      os << "shape mismatch for " << e.video_id << ": manifest declares " << e.length << "x"
         << e.channels << ", file holds " << seq.length() << "x" << seq.channels();
      throw DataError(os.str());
    }
    AnnotationSet set{e.video_id, {}, annotations.num_classes};
    if (const AnnotationSet* found = annotations.find(e.video_id)) {
      const double lo = index_to_time(seq, 0.0);
      const double hi = index_to_time(seq, static_cast<double>(seq.length() - 1));
      for (ActionInstance a : found->instances) {
        if (a.start_s < lo || a.end_s > hi) {
          std::ostringstream os;
          os << e.video_id << ": instance [" << a.start_s << ", " << a.end_s
             << "] clipped to feature span [" << lo << ", " << hi << "]";
          a.start_s = std::clamp(a.start_s, lo, hi);
          a.end_s = std::clamp(a.end_s, lo, hi);
          if (a.end_s <= a.start_s) {
            data.warnings.push_back(os.str() + " and dropped (empty)");
            continue;
          }
          data.warnings.push_back(os.str());
        }
        set.instances.push_back(a);
      }
    }
    data.videos.push_back({std::move(seq), std::move(set)});
  }
  return data;
}

Dataset load_dataset(const fs::path& manifest_path) {
  const fs::path ann = manifest_path.parent_path() / "annotations.json";
  return load_dataset(manifest_path, fs::exists(ann) ? ann : fs::path{});
}

void write_dataset(const fs::path& dir, const Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  AnnotationFile annotations;
  for (const auto& v : data.videos) {
    const auto& s = v.sequence;
    const std::string file = s.video_id + ".mlft";
    write_feature_file(dir / file, s.features);
    entries.push_back({s.video_id, file, s.fps, s.window, s.stride_frames, s.length(), s.channels()});
    annotations.num_classes = std::max(annotations.num_classes, v.annotations.num_classes);
    annotations.videos.push_back(v.annotations);
  }
  write_manifest(dir / "manifest.json", entries);
  write_annotations(dir / "annotations.json", annotations);
}

}  // namespace xltal
