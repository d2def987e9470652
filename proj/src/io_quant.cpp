#include "spcc/io_quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace spcc {
namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

RawCloud parse_kitti(const std::vector<char>& bytes) {
  require(!bytes.empty(), ErrorCode::TruncatedInput, "empty KITTI file");
  require(bytes.size() % 16 == 0, ErrorCode::TruncatedInput, "KITTI record truncated");
  RawCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* rec = bytes.data() + 16 * i;
    // intensity at offset 12 is parsed by layout and dropped
    cloud.points.emplace_back(read_le<float>(rec), read_le<float>(rec + 4), read_le<float>(rec + 8));
  }
  return cloud;
}

struct PlyProperty {
  std::string name;
  std::string type;
  int size = 0;
};

int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

double ply_read_binary(const char* p, const std::string& t) {
  if (t == "char" || t == "int8") return read_le<std::int8_t>(p);
  if (t == "uchar" || t == "uint8") return read_le<std::uint8_t>(p);
  if (t == "short" || t == "int16") return read_le<std::int16_t>(p);
  if (t == "ushort" || t == "uint16") return read_le<std::uint16_t>(p);
  if (t == "int" || t == "int32") return read_le<std::int32_t>(p);
  if (t == "uint" || t == "uint32") return read_le<std::uint32_t>(p);
  if (t == "float" || t == "float32") return read_le<float>(p);
  return read_le<double>(p);
}

RawCloud parse_ply(const std::vector<char>& bytes, PointFormat expect) {
  // Header ends at the first "end_header\n".
  const std::string marker = "end_header";
  auto it = std::search(bytes.begin(), bytes.end(), marker.begin(), marker.end());
  require(it != bytes.end(), ErrorCode::MalformedHeader, "PLY header has no end_header");
  auto body = std::find(it, bytes.end(), '\n');
  require(body != bytes.end(), ErrorCode::MalformedHeader, "PLY header not terminated");
  ++body;
  std::istringstream header(std::string(bytes.begin(), body));

  std::string line;
  std::getline(header, line);
  require(line.rfind("ply", 0) == 0, ErrorCode::MalformedHeader, "missing ply magic");

  bool binary = false;
  bool format_seen = false;
  bool in_vertex = false;
  bool vertex_seen = false;
  std::size_t vertex_count = 0;
  std::vector<PlyProperty> props;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") {
        binary = false;
      } else if (fmt == "binary_little_endian") {
        binary = true;
      } else {
        fail(ErrorCode::MalformedHeader, "unsupported PLY format " + fmt);
      }
      format_seen = true;
    } else if (kw == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      require(count >= 0, ErrorCode::MalformedHeader, "bad element count");
      in_vertex = (name == "vertex");
      if (in_vertex) {
        require(!vertex_seen, ErrorCode::MalformedHeader, "duplicate vertex element");
        require(props.empty(), ErrorCode::MalformedHeader, "vertex element must come first");
        vertex_seen = true;
        vertex_count = static_cast<std::size_t>(count);
      }
    } else if (kw == "property" && in_vertex) {
      PlyProperty p;
      ls >> p.type;
      require(p.type != "list", ErrorCode::MalformedHeader, "list property on vertex");
      ls >> p.name;
      p.size = ply_type_size(p.type);
      require(p.size > 0, ErrorCode::MalformedHeader, "unknown PLY type " + p.type);
      props.push_back(p);
    }
  }
  require(format_seen && vertex_seen, ErrorCode::MalformedHeader, "PLY header missing format or vertex");
  if (expect == PointFormat::PlyAscii) require(!binary, ErrorCode::MalformedHeader, "expected ASCII PLY");
  if (expect == PointFormat::PlyBinary) require(binary, ErrorCode::MalformedHeader, "expected binary PLY");

  int ix = -1, iy = -1, iz = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    if (props[i].name == "x") ix = i;
    if (props[i].name == "y") iy = i;
    if (props[i].name == "z") iz = i;
  }
  require(ix >= 0 && iy >= 0 && iz >= 0, ErrorCode::MalformedHeader, "PLY vertex lacks x/y/z");

  RawCloud cloud;
  cloud.points.reserve(vertex_count);
  const std::size_t offset = static_cast<std::size_t>(body - bytes.begin());
  if (binary) {
    std::size_t stride = 0;
    std::vector<std::size_t> at(props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
      at[i] = stride;
      stride += props[i].size;
    }
    require(bytes.size() - offset >= stride * vertex_count, ErrorCode::TruncatedInput, "PLY body truncated");
    for (std::size_t v = 0; v < vertex_count; ++v) {
      const char* rec = bytes.data() + offset + v * stride;
      cloud.points.emplace_back(ply_read_binary(rec + at[ix], props[ix].type),
                                ply_read_binary(rec + at[iy], props[iy].type),
                                ply_read_binary(rec + at[iz], props[iz].type));
    }
  } else {
    std::istringstream in(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end()));
    std::vector<double> vals(props.size());
    for (std::size_t v = 0; v < vertex_count; ++v) {
      for (std::size_t k = 0; k < vals.size(); ++k) {
        require(static_cast<bool>(in >> vals[k]), ErrorCode::TruncatedInput, "PLY ASCII record truncated");
        // text of a float property denotes the nearest float
        if (props[k].type == "float" || props[k].type == "float32") vals[k] = static_cast<float>(vals[k]);
      }
      cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
    }
  }
  return cloud;
}

PointFormat resolve_save_format(const std::filesystem::path& path, PointFormat format) {
  if (format != PointFormat::Auto) return format;
  const auto ext = lower_ext(path);
  if (ext == ".bin") return PointFormat::KittiBin;
  if (ext == ".ply") return PointFormat::PlyBinary;
  fail(ErrorCode::UnknownFormat, "cannot infer format from extension '" + ext + "'");
}

/// floor() that snaps values within a few ulps below an integer up to it, so
/// lattice points survive a dequantize/quantize round trip.
double snapped_floor(double v) {
  const double f = std::floor(v);
  const double next = f + 1.0;
  if (next - v <= 1e-9 * std::max(1.0, std::abs(v))) return next;
  return f;
}

}  // namespace

RawCloud load_points(const std::filesystem::path& path, PointFormat format) {
  if (format == PointFormat::Auto) {
    const auto ext = lower_ext(path);
    if (ext == ".bin") {
      format = PointFormat::KittiBin;
    } else if (ext == ".ply") {
      const auto bytes = read_all(path);
      return parse_ply(bytes, PointFormat::Auto);
    } else {
      fail(ErrorCode::UnknownFormat, "unknown point file extension '" + ext + "'");
    }
  }
  const auto bytes = read_all(path);
  if (format == PointFormat::KittiBin) return parse_kitti(bytes);
  return parse_ply(bytes, format);
}

void save_points(const RawCloud& cloud, const std::filesystem::path& path, PointFormat format) {
  format = resolve_save_format(path, format);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path.string());
  if (format == PointFormat::KittiBin) {
    for (const auto& p : cloud.points) {
      write_le<float>(out, static_cast<float>(p.x()));
      write_le<float>(out, static_cast<float>(p.y()));
      write_le<float>(out, static_cast<float>(p.z()));
      write_le<float>(out, 0.0f);
    }
  } else {
    const bool binary = format == PointFormat::PlyBinary;
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "element vertex " << cloud.points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\nend_header\n";
    if (binary) {
      for (const auto& p : cloud.points) {
        write_le<float>(out, static_cast<float>(p.x()));
        write_le<float>(out, static_cast<float>(p.y()));
        write_le<float>(out, static_cast<float>(p.z()));
      }
    } else {
      out.precision(std::numeric_limits<float>::max_digits10);
      for (const auto& p : cloud.points) {
        out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' ' << static_cast<float>(p.z())
            << '\n';
      }
    }
  }
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

QuantizedCloud make_quantized(KeyList keys, const QuantTransform& transform) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  QuantizedCloud q;
  q.keys = std::move(keys);
  q.transform = transform;
  return q;
}

QuantizedCloud make_quantized(const CoordList& coords, const QuantTransform& transform) {
  const std::int64_t hi = (std::int64_t{1} << transform.precision) - 1;
  for (const auto& c : coords) {
    require(c.minCoeff() >= 0 && c.maxCoeff() <= hi, ErrorCode::CoordinateOverflow,
            "coordinate outside [0, 2^L - 1]");
  }
  return make_quantized(to_keys(coords), transform);
}

QuantizedCloud quantize_points(const RawCloud& cloud, const QuantTransform& transform) {
  require(!cloud.points.empty(), ErrorCode::EmptyCloud, "cannot quantize an empty cloud");
  require(transform.scale > 0.0, ErrorCode::InvalidArgument, "scale must be positive");
  QuantTransform out = transform;
  KeyList keys;
  keys.reserve(cloud.points.size());
  std::size_t clipped = 0;

  if (transform.mode == QuantMode::BboxNorm) {
    require(transform.precision >= 1 && transform.precision <= kMaxDepth, ErrorCode::InvalidArgument,
            "precision must be in [1, 21]");
    const double hi = static_cast<double>((std::int64_t{1} << transform.precision) - 1);
    out.scale = 1.0;
    out.offset = Coord::Zero();
    for (const auto& p : cloud.points) {
      require(p.allFinite(), ErrorCode::InvalidArgument, "non-finite coordinate");
      std::uint32_t c[3];
      bool was_clipped = false;
      for (int a = 0; a < 3; ++a) {
        double v = round_half_even((p[a] + kBboxHalfExtent) / (2.0 * kBboxHalfExtent) * hi);
        if (v < 0.0 || v > hi) {
          was_clipped = true;
          v = std::clamp(v, 0.0, hi);
        }
        c[a] = static_cast<std::uint32_t>(v);
      }
      clipped += was_clipped ? 1 : 0;
      keys.push_back(morton_encode(c[0], c[1], c[2]));
    }
  } else {
    std::vector<Eigen::Matrix<std::int64_t, 3, 1>> raw;
    raw.reserve(cloud.points.size());
    Eigen::Matrix<std::int64_t, 3, 1> lo;
    lo.setConstant(std::numeric_limits<std::int64_t>::max());
    for (const auto& p : cloud.points) {
      require(p.allFinite(), ErrorCode::InvalidArgument, "non-finite coordinate");
      Eigen::Matrix<std::int64_t, 3, 1> c;
      for (int a = 0; a < 3; ++a) c[a] = static_cast<std::int64_t>(snapped_floor(p[a] * transform.scale));
      lo = lo.cwiseMin(c);
      raw.push_back(c);
    }
    std::int64_t hi = 0;
    for (auto& c : raw) {
      c -= lo;
      hi = std::max(hi, c.maxCoeff());
    }
    int bits = 1;
    while (bits < 63 && (hi >> bits) != 0) ++bits;
    if (transform.precision == 0) {
      out.precision = bits;
    } else {
      require(bits <= transform.precision, ErrorCode::CoordinateOverflow,
              "coordinates need " + std::to_string(bits) + " bits, precision is " +
                  std::to_string(transform.precision));
    }
    require(out.precision <= kMaxDepth, ErrorCode::CoordinateOverflow, "coordinates exceed 21 bits per axis");
    out.offset = (-lo).cast<int>();
    for (const auto& c : raw) {
      keys.push_back(morton_encode(static_cast<std::uint32_t>(c[0]), static_cast<std::uint32_t>(c[1]),
                                   static_cast<std::uint32_t>(c[2])));
    }
  }
  QuantizedCloud q = make_quantized(std::move(keys), out);
  q.clipped = clipped;
  return q;
}

RawCloud dequantize_points(const QuantizedCloud& cloud) {
  RawCloud raw;
  raw.points.reserve(cloud.size());
  const auto& t = cloud.transform;
  if (t.mode == QuantMode::BboxNorm) {
    const double hi = static_cast<double>((std::int64_t{1} << t.precision) - 1);
    const double step = 2.0 * kBboxHalfExtent / hi;
    for (MortonKey k : cloud.keys) {
      const Coord c = morton_decode(k);
      raw.points.push_back(c.cast<double>() * step - Point3::Constant(kBboxHalfExtent));
    }
  } else {
    for (MortonKey k : cloud.keys) {
      const Coord c = morton_decode(k);
      raw.points.push_back((c - t.offset).cast<double>() / t.scale);
    }
  }
  return raw;
}

}  // namespace spcc
