#include "spcc/model.hpp"

#include "spcc/byte_io.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

namespace spcc {
namespace {

constexpr std::uint16_t kFloatVersion = 1;
constexpr std::uint16_t kIntegerVersion = 1;

struct LayerSpec {
  enum class Role { Weight, Bias, Slope, Table, Seed };
  std::string name;
  int rows = 0;
  int cols = 0;
  Role role = Role::Weight;
  int fan_in = 1;
  bool output = false;
};

void add_linear(std::vector<LayerSpec>& specs, const std::string& site, int in, int out, int fan_in,
                bool output = false) {
  specs.push_back({site + ".w", in, out, LayerSpec::Role::Weight, fan_in, output});
  specs.push_back({site + ".b", 1, out, LayerSpec::Role::Bias, fan_in, output});
}

void add_resblock(std::vector<LayerSpec>& specs, const std::string& prefix, int width, int depth) {
  for (int i = 0; i < depth; ++i) {
    add_linear(specs, prefix + ".conv" + std::to_string(i), 27 * width, width, 27 * width);
    if (i + 1 < depth) specs.push_back({prefix + ".act" + std::to_string(i), 1, width, LayerSpec::Role::Slope});
  }
}

void add_upsample(std::vector<LayerSpec>& specs, const std::string& site, int in, int channels) {
  add_linear(specs, site, in, 8 * channels, in);
  specs.push_back({site + ".act", 1, channels, LayerSpec::Role::Slope});
}

void add_predictor(std::vector<LayerSpec>& specs, const std::string& site, int channels) {
  add_linear(specs, site + ".lin1", channels, channels, channels);
  specs.push_back({site + ".act", 1, channels, LayerSpec::Role::Slope});
  add_linear(specs, site + ".lin2", channels, kNumSymbols, channels, true);
}

std::vector<LayerSpec> layer_specs(const ModelConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  const int t = cfg.decision_level();
  std::vector<LayerSpec> specs;
  if (cfg.raw_level() >= cfg.depth) return specs;
  specs.push_back({"seed", 1, c, LayerSpec::Role::Seed});
  for (int d = cfg.raw_level(); d < cfg.depth; ++d) {
    const std::string p = layer_names::level_prefix(d);
    if (!cfg.is_deep(d)) {
      add_resblock(specs, p + ".res", c, cfg.resblock_depth);
      specs.push_back({p + ".up.emb", kNumSymbols, c, LayerSpec::Role::Table});
      add_upsample(specs, p + ".up", 2 * c, c);
    } else {
      specs.push_back({p + ".g.emb", kNumSymbols, c, LayerSpec::Role::Table});
      for (int j = 0; j < d - 1 - t; ++j) add_linear(specs, p + ".g.down" + std::to_string(j), 8 * c, c, 8 * c);
      add_resblock(specs, p + ".h", 2 * c, cfg.resblock_depth);
      for (int s = 0; s < d - t; ++s) {
        const std::string sp = p + ".s" + std::to_string(s);
        specs.push_back({sp + ".emb", kNumSymbols, c, LayerSpec::Role::Table});
        add_upsample(specs, sp, (s == 0 ? 2 * c : c) + c, c);
      }
    }
    add_predictor(specs, p + ".pred", c);
  }
  return specs;
}

/// Per-tensor stream: seed mixed with the layer name and shape.
std::uint64_t stream_seed(std::uint64_t seed, const LayerSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (char ch : spec.name) mix(static_cast<unsigned char>(ch));
  mix(static_cast<std::uint64_t>(spec.rows));
  mix(static_cast<std::uint64_t>(spec.cols));
  return h;
}

double uniform_pm1(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

void write_config(ByteWriter& w, const ModelConfig& cfg) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.resblock_depth));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.t_offset));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.l_min));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.depth));
}

ModelConfig read_config(ByteReader& r) {
  ModelConfig cfg;
  cfg.channels = static_cast<int>(r.get<std::uint32_t>());
  cfg.resblock_depth = static_cast<int>(r.get<std::uint32_t>());
  cfg.t_offset = static_cast<int>(r.get<std::uint32_t>());
  cfg.l_min = static_cast<int>(r.get<std::uint32_t>());
  cfg.depth = static_cast<int>(r.get<std::uint32_t>());
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorCode::MalformedHeader, e.what());
  }
  return cfg;
}

void write_qparams(ByteWriter& w, const QuantParams& q) {
  w.put<double>(q.scale);
  w.put<std::int32_t>(q.zero_point);
  w.put<std::int32_t>(q.q_min);
  w.put<std::int32_t>(q.q_max);
}

QuantParams read_qparams(ByteReader& r) {
  QuantParams q;
  q.scale = r.get<double>();
  q.zero_point = r.get<std::int32_t>();
  q.q_min = r.get<std::int32_t>();
  q.q_max = r.get<std::int32_t>();
  return q;
}

void append_hash(Bytes& bytes) {
  const ModelHash h = content_hash(bytes);
  bytes.insert(bytes.end(), h.begin(), h.end());
}

std::span<const std::uint8_t> verify_hash(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 12, ErrorCode::TruncatedInput, "model file too short");
  const auto body = bytes.first(bytes.size() - 8);
  const ModelHash h = content_hash(body);
  require(std::equal(h.begin(), h.end(), bytes.end() - 8), ErrorCode::CorruptStream,
          "model content hash does not match trailer");
  return body;
}

}  // namespace

namespace layer_names {
std::string level_prefix(int level) { return "d" + std::to_string(level); }
}  // namespace layer_names

ModelHash content_hash(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1, ErrorCode::IoFailure,
          "SHA-256 failed");
  ModelHash h{};
  std::copy(digest, digest + h.size(), h.begin());
  return h;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

void ModelConfig::validate() const {
  require(channels >= 1 && channels <= 1024, ErrorCode::ConfigMismatch, "channels must be in [1, 1024]");
  require(resblock_depth >= 1 && resblock_depth <= 8, ErrorCode::ConfigMismatch, "resblock depth must be in [1, 8]");
  require(depth >= 1 && depth <= 21, ErrorCode::ConfigMismatch, "depth must be in [1, 21]");
  require(l_min >= 1, ErrorCode::ConfigMismatch, "l_min must be >= 1");
  require(t_offset >= 0 && t_offset <= std::max(0, depth - l_min), ErrorCode::ConfigMismatch,
          "t_offset must be in [0, depth - l_min]");
}

const MatrixF& FloatModel::at(const std::string& name) const {
  const auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::ShapeMismatch, "float model lacks tensor " + name);
  return it->second;
}

MatrixF& FloatModel::at(const std::string& name) {
  const auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::ShapeMismatch, "float model lacks tensor " + name);
  return it->second;
}

const IntLayer& IntegerModel::at(const std::string& name) const {
  const auto it = layers.find(name);
  require(it != layers.end(), ErrorCode::ShapeMismatch, "integer model lacks layer " + name);
  return it->second;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path);
}

Bytes serialize_float_model(const FloatModel& model) {
  ByteWriter w;
  w.put_magic("PCWF");
  w.put<std::uint16_t>(kFloatVersion);
  write_config(w, model.config);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.tensors.size()));
  for (const auto& [name, t] : model.tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.put<float>(t.data()[i]);
  }
  Bytes bytes = std::move(w.bytes());
  append_hash(bytes);
  return bytes;
}

FloatModel parse_float_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(verify_hash(bytes));
  require(r.magic_is("PCWF"), ErrorCode::BadMagic, "not a float weight file");
  const auto version = r.get<std::uint16_t>();
  require(version == kFloatVersion, ErrorCode::UnsupportedVersion, "float weight version " + std::to_string(version));
  FloatModel model;
  model.config = read_config(r);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.get_string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    require(static_cast<std::uint64_t>(rows) * cols * 4 <= r.remaining(), ErrorCode::TruncatedInput,
            "tensor " + name + " truncated");
    MatrixF t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = r.get<float>();
    require(t.allFinite(), ErrorCode::NumericalFault, "tensor " + name + " is not finite");
    model.tensors.emplace(name, std::move(t));
  }
  require(r.remaining() == 0, ErrorCode::MalformedHeader, "trailing bytes in float weight file");
  for (const auto& spec : layer_specs(model.config)) {
    const auto& t = model.at(spec.name);
    require(t.rows() == spec.rows && t.cols() == spec.cols, ErrorCode::ShapeMismatch,
            "tensor " + spec.name + " has the wrong shape");
  }
  return model;
}

FloatModel read_float_model(const std::filesystem::path& path) { return parse_float_model(read_file_bytes(path)); }

void write_float_model(const FloatModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_float_model(model));
}

ModelHash float_model_hash(const FloatModel& model) {
  const Bytes b = serialize_float_model(model);
  ModelHash h{};
  std::copy(b.end() - 8, b.end(), h.begin());
  return h;
}

Bytes serialize_integer_model(const IntegerModel& model) {
  ByteWriter w;
  w.put_magic("PCWQ");
  w.put<std::uint16_t>(kIntegerVersion);
  write_config(w, model.config);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& [name, layer] : model.layers) {
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(layer.kind));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.cols()));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      const std::int32_t v = layer.weights.data()[i];
      require(v >= -128 && v <= 127, ErrorCode::ContractViolation, "weight outside int8 in " + name);
      w.put<std::int8_t>(static_cast<std::int8_t>(v));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.bias.cols()));
    for (Eigen::Index i = 0; i < layer.bias.cols(); ++i) w.put<std::int32_t>(layer.bias[i]);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.requant.size()));
    for (const auto& rq : layer.requant) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(rq.multiplier));
      w.put<std::uint8_t>(static_cast<std::uint8_t>(rq.shift));
      w.put<std::int32_t>(rq.zero_point);
    }
    write_qparams(w, layer.input);
    write_qparams(w, layer.output);
  }
  for (auto v : model.lut.table) w.put<std::int32_t>(v);
  Bytes bytes = std::move(w.bytes());
  append_hash(bytes);
  return bytes;
}

IntegerModel parse_integer_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(verify_hash(bytes));
  require(r.magic_is("PCWQ"), ErrorCode::BadMagic, "not an integer weight file");
  const auto version = r.get<std::uint16_t>();
  require(version == kIntegerVersion, ErrorCode::UnsupportedVersion,
          "integer weight version " + std::to_string(version));
  IntegerModel model;
  model.config = read_config(r);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.get_string();
    IntLayer layer;
    const auto kind = r.get<std::uint8_t>();
    require(kind <= static_cast<std::uint8_t>(LayerKind::Concat), ErrorCode::MalformedHeader, "unknown layer kind");
    layer.kind = static_cast<LayerKind>(kind);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    require(static_cast<std::uint64_t>(rows) * cols <= r.remaining(), ErrorCode::TruncatedInput,
            "layer " + name + " truncated");
    layer.weights.resize(rows, cols);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = r.get<std::int8_t>();
    const auto nb = r.get<std::uint32_t>();
    require(static_cast<std::uint64_t>(nb) * 4 <= r.remaining(), ErrorCode::TruncatedInput, "bias truncated");
    layer.bias.resize(nb);
    for (std::uint32_t i = 0; i < nb; ++i) layer.bias[i] = r.get<std::int32_t>();
    const auto nr = r.get<std::uint32_t>();
    require(static_cast<std::uint64_t>(nr) * 9 <= r.remaining(), ErrorCode::TruncatedInput, "requant truncated");
    for (std::uint32_t i = 0; i < nr; ++i) {
      RequantParams rq;
      rq.multiplier = r.get<std::uint32_t>();
      rq.shift = r.get<std::uint8_t>();
      rq.zero_point = r.get<std::int32_t>();
      require(rq.multiplier < (std::int64_t{1} << 31) && rq.shift <= 62, ErrorCode::MalformedHeader,
              "requant parameters out of range");
      layer.requant.push_back(rq);
    }
    layer.input = read_qparams(r);
    layer.output = read_qparams(r);
    model.layers.emplace(name, std::move(layer));
  }
  for (auto& v : model.lut.table) v = r.get<std::int32_t>();
  require(model.lut.valid(), ErrorCode::MalformedHeader, "exponential table is not a valid Q24 table");
  require(r.remaining() == 0, ErrorCode::MalformedHeader, "trailing bytes in integer weight file");
  std::copy(bytes.end() - 8, bytes.end(), model.hash.begin());
  return model;
}

void stamp_hash(IntegerModel& model) {
  const Bytes b = serialize_integer_model(model);
  std::copy(b.end() - 8, b.end(), model.hash.begin());
}

IntegerModel read_integer_model(const std::filesystem::path& path) {
  return parse_integer_model(read_file_bytes(path));
}

void write_integer_model(const IntegerModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_integer_model(model));
}

std::string peek_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  char m[4] = {};
  in.read(m, 4);
  require(in.gcount() == 4, ErrorCode::TruncatedInput, "file too short for magic");
  return std::string(m, 4);
}

FloatModel generate_float_model(const ModelConfig& config, const WeightGenOptions& options) {
  FloatModel model;
  model.config = config;
  for (const auto& spec : layer_specs(config)) {
    MatrixF t(spec.rows, spec.cols);
    std::mt19937_64 rng(stream_seed(options.seed, spec));
    switch (spec.role) {
      case LayerSpec::Role::Weight: {
        const double gain = (spec.output ? options.output_gain : options.gain) * std::sqrt(3.0 / spec.fan_in);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(gain * uniform_pm1(rng));
        break;
      }
      case LayerSpec::Role::Bias:
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(0.05 * uniform_pm1(rng));
        break;
      case LayerSpec::Role::Slope:
        t.setConstant(options.prelu_slope);
        break;
      case LayerSpec::Role::Table:
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(uniform_pm1(rng));
        break;
      case LayerSpec::Role::Seed:
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(0.5 + 0.5 * uniform_pm1(rng));
        break;
    }
    model.tensors.emplace(spec.name, std::move(t));
  }
  return model;
}

void fit_output_prior(FloatModel& model, const std::vector<OctreeLevels>& trees) {
  const auto& cfg = model.config;
  for (int d = cfg.raw_level(); d < cfg.depth; ++d) {
    std::array<double, kNumSymbols> counts;
    counts.fill(0.5);
    for (const auto& tree : trees) {
      require(tree.depth == cfg.depth, ErrorCode::ConfigMismatch, "prior sample depth differs from model depth");
      for (auto code : tree.codes_of(d)) counts[static_cast<std::size_t>(code - 1)] += 1.0;
    }
    double total = 0.0;
    for (double c : counts) total += c;
    double mean = 0.0;
    for (double c : counts) mean += std::log(c / total);
    mean /= kNumSymbols;
    MatrixF& bias = model.at(layer_names::level_prefix(d) + ".pred.lin2.b");
    for (int s = 0; s < kNumSymbols; ++s)
      bias(0, s) = static_cast<float>(std::log(counts[static_cast<std::size_t>(s)] / total) - mean);
  }
}

}  // namespace spcc
