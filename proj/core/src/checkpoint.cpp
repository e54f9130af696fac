#include "confoundnet/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "confoundnet/error.hpp"
#include "confoundnet/json_io.hpp"

namespace confoundnet {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'F', 'N', 'T', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > remaining()) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct NamedParam {
  std::string name;
  const LayerParams* params;
};

std::vector<NamedParam> named_parameters(const Network& net) {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < net.trunk().size(); ++i) {
    out.push_back({"trunk." + std::to_string(i), &net.trunk()[i]});
  }
  out.push_back({"class_head", &net.class_head()});
  if (net.pose_head() != nullptr) out.push_back({"pose_head", net.pose_head()});
  return out;
}

Tensor read_tensor(Reader& reader, const Json& entry) {
  Shape shape;
  try {
    shape = entry.at("shape").get<Shape>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint tensor entry malformed: ") + e.what());
  }
  std::vector<double> values;
  try {
    values.resize(shape_size(shape));
  } catch (const std::length_error&) {
    throw FormatError("checkpoint tensor shape is absurd");
  }
  const std::string_view raw = reader.take(values.size() * sizeof(double), "tensor data");
  std::memcpy(values.data(), raw.data(), raw.size());
  try {
    return Tensor(std::move(shape), std::move(values));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint tensor: ") + e.what());
  }
}

}  // namespace

std::string checkpoint_serialize(const Network& net, const HyperParams& hp, const Metrics& metrics,
                                 const std::vector<std::string>& class_names) {
  const auto params = named_parameters(net);
  Json tensors = Json::array();
  for (const NamedParam& p : params) {
    tensors.push_back({{"name", p.name + ".weights"}, {"shape", p.params->weights.shape()}});
    tensors.push_back({{"name", p.name + ".bias"}, {"shape", p.params->bias.shape()}});
  }
  const Json header = {{"format", "confoundnet-checkpoint"},
                       {"network", to_json(net.config())},
                       {"seed", net.seed()},
                       {"hyper", to_json(hp)},
                       {"metrics", to_json(metrics)},
                       {"class_names", class_names},
                       {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::string out(kMagic.begin(), kMagic.end());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const NamedParam& p : params) {
    for (const Tensor* t : {&p.params->weights, &p.params->bias}) {
      out.append(reinterpret_cast<const char*>(t->data().data()), t->size() * sizeof(double));
    }
  }
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

Checkpoint checkpoint_deserialize(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + sizeof(std::uint64_t) ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const std::string_view body(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);

  Reader reader(body);
  reader.take(kMagic.size(), "magic");
  const auto version = reader.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (stored != fnv1a(body)) throw FormatError("checkpoint checksum mismatch (corrupted or truncated)");
  const auto header_len = reader.get<std::uint64_t>("header length");
  const std::string_view header_text = reader.take(header_len, "header");

  Json header;
  try {
    header = Json::parse(header_text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  try {
    const NetworkConfig config = network_config_from_json(header.at("network"));
    const auto seed = header.at("seed").get<std::uint64_t>();
    const HyperParams hp = hyper_params_from_json(header.at("hyper"));
    Metrics metrics = metrics_from_json(header.at("metrics"));
    auto class_names = header.at("class_names").get<std::vector<std::string>>();

    const Json& tensors = header.at("tensors");
    std::size_t next = 0;
    auto read_layer = [&](const std::string& name) {
      if (next + 2 > tensors.size()) throw FormatError("checkpoint is missing tensor " + name);
      if (tensors[next].at("name") != name + ".weights" || tensors[next + 1].at("name") != name + ".bias") {
        throw FormatError("checkpoint tensor order differs at " + name);
      }
      LayerParams p;
      p.weights = read_tensor(reader, tensors[next]);
      p.bias = read_tensor(reader, tensors[next + 1]);
      next += 2;
      return p;
    };
    std::vector<LayerParams> trunk;
    for (std::size_t i = 0; i < config.conv.size() + 1; ++i) {
      trunk.push_back(read_layer("trunk." + std::to_string(i)));
    }
    LayerParams class_head = read_layer("class_head");
    std::optional<LayerParams> pose_head;
    if (config.pose_mode != PoseMode::none) pose_head = read_layer("pose_head");
    if (next != tensors.size() || reader.remaining() != 0) {
      throw FormatError("checkpoint has trailing tensors or bytes");
    }
    Network net = Network::assemble(config, seed, std::move(trunk), std::move(class_head),
                                    std::move(pose_head));
    return Checkpoint{std::move(net), hp, std::move(metrics), std::move(class_names)};
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header malformed: ") + e.what());
  }
}

void checkpoint_save(const Network& net, const HyperParams& hp, const Metrics& metrics,
                     const std::filesystem::path& path,
                     const std::vector<std::string>& class_names) {
  const std::string bytes = checkpoint_serialize(net, hp, metrics, class_names);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to checkpoint " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_deserialize(bytes);
}

}  // namespace confoundnet
