#include "xltal/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>

namespace xltal {

using nlohmann::json;

json to_json(const ModelConfig& c) {
  return json{{"input_len", c.input_len},
              {"input_dim", c.input_dim},
              {"embed_dim", c.embed_dim},
              {"num_heads", c.num_heads},
              {"fpn_levels", c.fpn_levels},
              {"encoder_mode", to_string(c.encoder_mode)},
              {"segment_len", c.segment_len},
              {"encoder_layers", c.encoder_layers},
              {"head_layers", c.head_layers},
              {"mlp_ratio", c.mlp_ratio},
              {"num_classes", c.num_classes},
              {"attention_window", c.attention_window},
              {"prior_prob", c.prior_prob},
              {"seed", c.seed}};
}

void update_from_json(ModelConfig& c, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "input_len") c.input_len = v.get<Index>();
    else if (key == "input_dim") c.input_dim = v.get<Index>();
    else if (key == "embed_dim") c.embed_dim = v.get<Index>();
    else if (key == "num_heads") c.num_heads = v.get<Index>();
    else if (key == "fpn_levels") c.fpn_levels = v.get<Index>();
    else if (key == "encoder_mode") c.encoder_mode = encoder_mode_from_string(v.get<std::string>());
    else if (key == "segment_len") c.segment_len = v.get<Index>();
    else if (key == "encoder_layers") c.encoder_layers = v.get<Index>();
    else if (key == "head_layers") c.head_layers = v.get<Index>();
    else if (key == "mlp_ratio") c.mlp_ratio = v.get<Index>();
    else if (key == "num_classes") c.num_classes = v.get<int>();
    else if (key == "attention_window") c.attention_window = v.get<Index>();
    else if (key == "prior_prob") c.prior_prob = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
}

namespace {

constexpr std::array<char, 4> kMagic = {'X', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto b = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(b.begin(), b.end());
    v = std::bit_cast<T>(b);
  }
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto b = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(b.begin(), b.end());
    v = std::bit_cast<T>(b);
  }
  return v;
}

json registry(const Parameters& params) {
  json list = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    list.push_back({{"name", params.name(i)}, {"shape", params.at(i).shape()}});
  }
  return list;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const json header{{"config", to_json(model.config())}, {"parameters", registry(model.parameters())}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& v = params.at(i).value();
    for (Index k = 0; k < v.size(); ++k) put<double>(out, v.data()[k]);
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  const auto version = get<std::uint32_t>(in);
  const auto size = get<std::uint64_t>(in);
  if (!in || magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version");
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint header: " + std::string(e.what()));
  }
  ModelConfig config;
  update_from_json(config, header.at("config"));
  Model model(config);
  if (header.at("parameters") != registry(model.parameters())) {
    throw CheckpointError("checkpoint parameter registry does not match its config");
  }
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat v(params.at(i).rows(), params.at(i).cols());
    for (Index k = 0; k < v.size(); ++k) v.data()[k] = get<double>(in);
    params.set(i, std::move(v));
  }
  if (!in) throw CheckpointError("checkpoint payload is truncated");
  in.peek();
  if (!in.eof()) throw CheckpointError("checkpoint has trailing bytes");
  return model;
}

}  // namespace xltal
