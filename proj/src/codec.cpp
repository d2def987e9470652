#include "spcc/codec.hpp"

#include "spcc/byte_io.hpp"
#include "spcc/entropy.hpp"

#include <algorithm>
#include <cmath>

namespace spcc {
namespace {

constexpr std::uint8_t kFlagFloat = 1;

MatrixI to_masses(const MatrixD& probs, int workers) { return probabilities_to_masses(probs, workers); }
MatrixI to_masses(MatrixI masses, int) { return masses; }

FixedCdf row_cdf(const MatrixI& masses, Eigen::Index row) {
  return cdf_from_fixed_probs(
      std::span<const std::int32_t>(masses.row(row).data(), static_cast<std::size_t>(masses.cols())));
}

template <typename Ops, typename ModelT>
Bytes encode_impl(const QuantizedCloud& cloud, const ModelT& model, const ModelHash& hash, bool float_path,
                  const CodecOptions& opt) {
  const ModelConfig& cfg = model.config;
  require(!cloud.keys.empty(), ErrorCode::EmptyCloud, "nothing to encode");
  require(cloud.transform.precision == cfg.depth, ErrorCode::ConfigMismatch,
          "cloud precision " + std::to_string(cloud.transform.precision) + " != model depth " +
              std::to_string(cfg.depth));
  const OctreeLevels tree = build_octree(cloud.keys, cfg.depth);
  const int raw = cfg.raw_level();

  BitstreamHeader h;
  h.float_path = float_path;
  h.depth = cfg.depth;
  h.l_min = cfg.l_min;
  h.decision_level = cfg.decision_level();
  h.transform = cloud.transform;
  h.model_hash = hash;
  for (int l = raw; l <= cfg.depth; ++l) h.node_counts.push_back(static_cast<std::uint32_t>(tree.node_count(l)));

  std::vector<Bytes> payloads;
  payloads.push_back(encode_raw_coords(tree.keys[static_cast<std::size_t>(raw)], raw));
  if (opt.level_stats) opt.level_stats->push_back({raw, Regime::Raw, tree.node_count(raw), payloads.back().size(), 0.0});

  Ops ops(model, opt.workers);
  TreeView view(tree, opt.trace);
  Propagator<Ops> prop(cfg, ops, view);
  for (int d = raw; d < cfg.depth; ++d) {
    const MatrixI masses = to_masses(prop.step(d), opt.workers);
    const CodeList& codes = tree.codes_of(d);
    RangeEncoder enc;
    double bits = 0.0;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      const FixedCdf cdf = row_cdf(masses, static_cast<Eigen::Index>(i));
      enc.encode(cdf, codes[i]);
      if (opt.level_stats) bits -= std::log2(cdf.mass(codes[i]) / 65536.0);
    }
    payloads.push_back(enc.finish());
    if (opt.level_stats)
      opt.level_stats->push_back(
          {d, cfg.is_deep(d) ? Regime::Deep : Regime::Shallow, codes.size(), payloads.back().size(), bits});
  }
  for (const auto& p : payloads) h.payload_lengths.push_back(static_cast<std::uint32_t>(p.size()));

  Bytes out = write_header(h);
  for (const auto& p : payloads) out.insert(out.end(), p.begin(), p.end());
  return out;
}

template <typename Ops, typename ModelT>
QuantizedCloud decode_impl(std::span<const std::uint8_t> stream, const ModelT& model, const ModelHash& hash,
                           bool float_path, const DecodeOptions& opt, Ops& ops) {
  std::size_t offset = 0;
  const BitstreamHeader h = read_header(stream, &offset);
  require(h.float_path == float_path, ErrorCode::ModelMismatch,
          float_path ? "stream was produced by an integer model" : "stream was produced by a float model");
  require(h.model_hash == hash, ErrorCode::ModelMismatch,
          "stream model " + to_hex(h.model_hash) + " != supplied model " + to_hex(hash));
  const ModelConfig& cfg = model.config;
  require(h.depth == cfg.depth && h.l_min == cfg.l_min && h.decision_level == cfg.decision_level(),
          ErrorCode::ConfigMismatch, "stream levels do not match the model configuration");

  const int raw = cfg.raw_level();
  std::vector<std::span<const std::uint8_t>> payloads;
  for (auto len : h.payload_lengths) {
    require(stream.size() - offset >= len, ErrorCode::CorruptStream, "payload extends past end of stream");
    payloads.push_back(stream.subspan(offset, len));
    offset += len;
  }
  require(offset == stream.size(), ErrorCode::CorruptStream, "trailing bytes after payloads");

  OctreeLevels tree;
  tree.depth = cfg.depth;
  tree.keys.resize(static_cast<std::size_t>(cfg.depth) + 1);
  tree.codes.resize(static_cast<std::size_t>(cfg.depth) + 1);
  require(h.node_counts[0] >= 1 && (raw >= 10 || h.node_counts[0] <= (std::uint32_t{1} << (3 * raw))),
          ErrorCode::CorruptStream, "implausible raw node count");
  KeyList& top = tree.keys[static_cast<std::size_t>(raw)];
  top = decode_raw_coords(payloads[0], h.node_counts[0], raw);
  if (!strictly_increasing(top)) {
    require(opt.lenient, ErrorCode::CorruptStream, "raw coordinates are not strictly increasing");
    std::sort(top.begin(), top.end());
    top.erase(std::unique(top.begin(), top.end()), top.end());
  }
  for (int l = raw; l > 0; --l) {
    const auto& child = tree.keys[static_cast<std::size_t>(l)];
    tree.codes[static_cast<std::size_t>(l)] = occupancy_codes(child);
    tree.keys[static_cast<std::size_t>(l - 1)] = downsample_keys(child);
  }

  DecodeReport local;
  DecodeReport& report = opt.report ? *opt.report : local;
  report = {};
  report.deepest_level = raw;
  TreeView view(tree, opt.trace);
  Propagator<Ops> prop(cfg, ops, view);
  for (int d = raw; d < cfg.depth; ++d) {
    const MatrixI masses = to_masses(prop.step(d), opt.workers);
    const auto& parents = tree.keys[static_cast<std::size_t>(d)];
    CodeList codes(parents.size());
    RangeDecoder dec(payloads[static_cast<std::size_t>(d - raw + 1)], opt.lenient);
    for (std::size_t i = 0; i < codes.size(); ++i)
      codes[i] = static_cast<std::uint8_t>(dec.decode(row_cdf(masses, static_cast<Eigen::Index>(i))));
    KeyList children = expand_children(parents, codes);
    const std::size_t expected = h.node_counts[static_cast<std::size_t>(d + 1 - raw)];
    tree.codes[static_cast<std::size_t>(d) + 1] = codes;
    report.codes.push_back(std::move(codes));
    if (children.size() != expected) {
      require(opt.lenient, ErrorCode::CorruptStream,
              "level " + std::to_string(d + 1) + " decoded " + std::to_string(children.size()) + " nodes, header says " +
                  std::to_string(expected));
      if (children.size() > 4 * std::max<std::size_t>(expected, 1)) {
        report.aborted = true;
        break;
      }
    }
    tree.keys[static_cast<std::size_t>(d) + 1] = std::move(children);
    report.deepest_level = d + 1;
  }
  report.deepest_keys = tree.keys[static_cast<std::size_t>(report.deepest_level)];
  if (report.aborted) return {};
  QuantizedCloud out;
  out.keys = tree.keys[static_cast<std::size_t>(cfg.depth)];
  out.transform = h.transform;
  return out;
}

void write_transform(ByteWriter& w, const QuantTransform& t) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.mode));
  w.put<double>(t.scale);
  for (int a = 0; a < 3; ++a) w.put<std::int32_t>(t.offset[a]);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.precision));
}

QuantTransform read_transform(ByteReader& r) {
  QuantTransform t;
  const auto mode = r.get<std::uint8_t>();
  require(mode <= 1, ErrorCode::MalformedHeader, "unknown quantization mode");
  t.mode = static_cast<QuantMode>(mode);
  t.scale = r.get<double>();
  for (int a = 0; a < 3; ++a) t.offset[a] = r.get<std::int32_t>();
  t.precision = r.get<std::uint8_t>();
  return t;
}

}  // namespace

Bytes write_header(const BitstreamHeader& h) {
  require(h.node_counts.size() == static_cast<std::size_t>(h.depth - h.raw_level() + 1) &&
              h.payload_lengths.size() == h.node_counts.size(),
          ErrorCode::MalformedHeader, "header count lists do not match its levels");
  ByteWriter w;
  w.put_magic("VXTC");
  w.put<std::uint16_t>(h.version);
  w.put<std::uint8_t>(h.float_path ? kFlagFloat : 0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.depth));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.l_min));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.decision_level));
  write_transform(w, h.transform);
  w.put_bytes(h.model_hash);
  for (auto n : h.node_counts) w.put<std::uint32_t>(n);
  for (auto n : h.payload_lengths) w.put<std::uint32_t>(n);
  return std::move(w.bytes());
}

BitstreamHeader read_header(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  ByteReader r(bytes, ErrorCode::TruncatedStream);
  require(r.magic_is("VXTC"), ErrorCode::BadMagic, "not a VXTC bitstream");
  BitstreamHeader h;
  h.version = r.get<std::uint16_t>();
  require(h.version == kBitstreamVersion, ErrorCode::UnsupportedVersion,
          "bitstream version " + std::to_string(h.version));
  const auto flags = r.get<std::uint8_t>();
  require((flags & ~kFlagFloat) == 0, ErrorCode::MalformedHeader, "unknown header flags");
  h.float_path = (flags & kFlagFloat) != 0;
  h.depth = r.get<std::uint8_t>();
  h.l_min = r.get<std::uint8_t>();
  h.decision_level = r.get<std::uint8_t>();
  require(h.depth >= 1 && h.depth <= kMaxDepth && h.l_min >= 1, ErrorCode::MalformedHeader, "level fields out of range");
  require(h.decision_level >= h.raw_level() && h.decision_level <= h.depth, ErrorCode::MalformedHeader,
          "decision level outside [L_min, L]");
  h.transform = read_transform(r);
  const auto hash = r.get_bytes(8);
  std::copy(hash.begin(), hash.end(), h.model_hash.begin());
  const int levels = h.depth - h.raw_level() + 1;
  for (int i = 0; i < levels; ++i) h.node_counts.push_back(r.get<std::uint32_t>());
  for (int i = 0; i < levels; ++i) h.payload_lengths.push_back(r.get<std::uint32_t>());
  if (consumed) *consumed = r.position();
  return h;
}

Bytes encode(const QuantizedCloud& cloud, const IntegerModel& model, const CodecOptions& options) {
  return encode_impl<IntOps>(cloud, model, model.hash, false, options);
}

Bytes encode(const QuantizedCloud& cloud, const FloatModel& model, const CodecOptions& options) {
  return encode_impl<FloatOps>(cloud, model, float_model_hash(model), true, options);
}

QuantizedCloud decode(std::span<const std::uint8_t> stream, const IntegerModel& model, const DecodeOptions& options) {
  IntOps ops(model, options.workers);
  return decode_impl(stream, model, model.hash, false, options, ops);
}

QuantizedCloud decode(std::span<const std::uint8_t> stream, const FloatModel& model, const DecodeOptions& options) {
  FloatOps ops(model, options.workers);
  if (options.logit_epsilon != 0.0) ops.set_logit_perturbation(options.logit_epsilon, options.perturb_seed);
  return decode_impl(stream, model, float_model_hash(model), true, options, ops);
}

double bpp(std::size_t stream_bytes, std::size_t point_count) {
  require(point_count > 0, ErrorCode::EmptyCloud, "bpp of an empty cloud");
  return 8.0 * static_cast<double>(stream_bytes) / static_cast<double>(point_count);
}

}  // namespace spcc
