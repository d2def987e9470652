// Command-line front end for the codec, the model tools and the diagnostics.
// Exit codes: 0 success, 1 internal error, 2 usage, 3 data, 4 determinism.

#include "spcc/calibration.hpp"
#include "spcc/codec.hpp"
#include "spcc/harness.hpp"
#include "spcc/metrics.hpp"
#include "spcc/readout.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace spcc;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNondeterministic = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Bytes read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFailure, "short write to " + p.string());
}

/// Point files of a directory in file-name order.
std::vector<fs::path> point_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::IoFailure, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".bin" || ext == ".ply") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

QuantTransform make_transform(int level, const std::string& mode, double scale) {
  QuantTransform t;
  t.precision = level;
  if (mode == "bbox") {
    t.mode = QuantMode::BboxNorm;
  } else if (mode == "scale") {
    t.mode = QuantMode::ScalePosQ;
    t.scale = scale;
  } else {
    throw UsageError("--quant must be 'bbox' or 'scale'");
  }
  return t;
}

struct LoadedModel {
  bool is_float = false;
  FloatModel fmodel;
  IntegerModel imodel;
  const ModelConfig& config() const { return is_float ? fmodel.config : imodel.config; }
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  const std::string magic = peek_magic(path);
  if (magic == "PCWF") {
    m.is_float = true;
    m.fmodel = read_float_model(path);
  } else {
    m.imodel = read_integer_model(path);
  }
  return m;
}

Bytes encode_with(const QuantizedCloud& cloud, const LoadedModel& m, const CodecOptions& opt) {
  return m.is_float ? encode(cloud, m.fmodel, opt) : encode(cloud, m.imodel, opt);
}

QuantizedCloud decode_with(std::span<const std::uint8_t> stream, const LoadedModel& m, int workers) {
  return m.is_float ? decode(stream, m.fmodel, {.workers = workers}) : decode(stream, m.imodel, {.workers = workers});
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Raw: return "raw";
    case Regime::Shallow: return "shallow";
    case Regime::Deep: return "deep";
  }
  return "?";
}

// ---- subcommands -----------------------------------------------------------

struct CompressArgs {
  std::string in, out, model, quant = "bbox";
  int level = 12;
  double scale = 1.0;
  bool use_float = false;
  bool verbose = false;
  int workers = 1;
};

int run_compress(const CompressArgs& a) {
  const LoadedModel m = load_model(a.model);
  if (a.use_float != m.is_float)
    throw UsageError(a.use_float ? "--float needs a float (PCWF) model" : "integer coding needs a PCWQ model; pass --float for PCWF");
  if (a.level != m.config().depth)
    throw UsageError("--level " + std::to_string(a.level) + " differs from the model depth " +
                     std::to_string(m.config().depth));
  const QuantizedCloud cloud = quantize_points(load_points(a.in), make_transform(a.level, a.quant, a.scale));
  std::vector<LevelStat> stats;
  const Bytes stream = encode_with(cloud, m, {.workers = a.workers, .level_stats = &stats});
  write_bytes(a.out, stream);
  std::cout << "points " << cloud.size() << " bytes " << stream.size() << " bpp " << std::fixed
            << std::setprecision(4) << bpp(stream.size(), cloud.size()) << '\n';
  if (cloud.clipped) std::cout << "clipped " << cloud.clipped << '\n';
  if (a.verbose) {
    std::cout << "level,regime,nodes,payload_bytes,bits_per_node\n";
    for (const auto& s : stats)
      std::cout << s.level << ',' << regime_name(s.regime) << ',' << s.nodes << ',' << s.payload_bytes << ','
                << (s.nodes ? 8.0 * static_cast<double>(s.payload_bytes) / static_cast<double>(s.nodes) : 0.0)
                << '\n';
  }
  return 0;
}

int run_decompress(const std::string& in, const std::string& out, const std::string& model, int workers) {
  const LoadedModel m = load_model(model);
  const Bytes stream = read_bytes(in);
  const QuantizedCloud cloud = decode_with(stream, m, workers);
  save_points(dequantize_points(cloud), out);
  std::cout << "points " << cloud.size() << '\n';
  return 0;
}

int run_eval(const std::string& ref_path, const std::string& test_path, std::optional<double> peak,
             std::optional<int> level, int k_normals) {
  PointList ref = load_points(ref_path).points;
  PointList test = load_points(test_path).points;
  double p = 0.0;
  if (level) {
    // compare on the lattice of a shared BboxNorm transform
    QuantTransform t;
    t.precision = *level;
    ref = lattice_points(quantize_points({ref}, t));
    test = lattice_points(quantize_points({test}, t));
    p = peak.value_or(std::ldexp(1.0, *level) - 1.0);
  } else {
    if (!peak) throw UsageError("eval needs --peak or --level");
    p = *peak;
  }
  const D2Result d2 = d2_psnr(ref, test, p, k_normals);
  std::cout << std::setprecision(6) << "d1_psnr " << d1_psnr(ref, test, p) << '\n'
            << "d2_psnr " << d2.psnr << '\n'
            << "chamfer " << chamfer(ref, test) << '\n'
            << "ref_points " << ref.size() << "\ntest_points " << test.size() << '\n';
  return 0;
}

int run_calibrate(const std::string& float_model, const std::string& samples_dir, const std::string& out,
                  int workers) {
  const FloatModel fm = read_float_model(float_model);
  std::vector<QuantizedCloud> samples;
  QuantTransform t;
  t.precision = fm.config.depth;
  for (const auto& f : point_files(samples_dir)) samples.push_back(quantize_points(load_points(f), t));
  require(!samples.empty(), ErrorCode::Insufficient, "no .bin or .ply samples in " + samples_dir);
  const IntegerModel im = calibrate(fm, samples, workers);
  write_integer_model(im, out);
  std::cout << "samples " << samples.size() << " hash " << to_hex(im.hash) << '\n';
  return 0;
}

int run_stats(const std::string& in, int level) {
  QuantTransform t;
  t.precision = level;
  const QuantizedCloud cloud = quantize_points(load_points(in), t);
  write_hrcs_csv(std::cout, hrcs_stats(build_octree(cloud)));
  return 0;
}

int run_detcheck(const std::string& in, const std::string& model, int runs, const std::vector<int>& worker_counts) {
  if (runs < 1) throw UsageError("--runs must be >= 1");
  const LoadedModel m = load_model(model);
  if (m.is_float) std::cerr << "warning: float-path streams are not portable across platforms\n";
  QuantTransform t;
  t.precision = m.config().depth;
  const QuantizedCloud cloud = quantize_points(load_points(in), t);
  std::string first;
  bool same = true;
  for (int r = 0; r < runs; ++r) {
    const int w = worker_counts[static_cast<std::size_t>(r) % worker_counts.size()];
    const Bytes stream = encode_with(cloud, m, {.workers = w});
    const std::string h = digest_hex(stream);
    const bool lossless = decode_with(stream, m, w).keys == cloud.keys;
    std::cout << "run " << r << " workers " << w << " hash " << h << (lossless ? "" : " DECODE-MISMATCH") << '\n';
    if (r == 0) first = h;
    same = same && h == first && lossless;
  }
  std::cout << (same ? "deterministic" : "NONDETERMINISTIC") << '\n';
  return same ? 0 : kExitNondeterministic;
}

/// One RD curve per CSV file (rows as written by write_rd_csv); the curve is
/// named after the file stem.
std::map<std::string, RdCurve> read_rd_dir(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::IoFailure, dir.string() + " is not a directory");
  std::map<std::string, RdCurve> curves;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream in(e.path());
    std::string line;
    std::getline(in, line);
    RdCurve c;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string name, bpp_s, d1_s;
      std::getline(ss, name, ',');
      std::getline(ss, bpp_s, ',');
      std::getline(ss, d1_s, ',');
      try {
        c.push_back({std::stod(bpp_s), std::stod(d1_s)});
      } catch (const std::exception&) {
        fail(ErrorCode::MalformedHeader, "bad RD row in " + e.path().string() + ": " + line);
      }
    }
    curves[e.path().stem().string()] = std::move(c);
  }
  return curves;
}

int run_rd(const std::string& dir, const std::string& baseline, const std::string& markdown) {
  const auto curves = read_rd_dir(dir);
  const auto base = curves.find(baseline);
  require(base != curves.end(), ErrorCode::Insufficient, "no curve named '" + baseline + "' in " + dir);
  std::ostringstream md;
  md << "| codec | BD-Rate (%) | BD-PSNR (dB) |\n|---|---|---|\n";
  std::cout << "codec,bd_rate_percent,bd_psnr_db\n";
  for (const auto& [name, curve] : curves) {
    if (name == baseline) continue;
    const double rate = bd_metric(base->second, curve, BdKind::Rate);
    const double psnr = bd_metric(base->second, curve, BdKind::Psnr);
    std::cout << name << ',' << rate << ',' << psnr << '\n';
    md << "| " << name << " | " << std::fixed << std::setprecision(3) << rate << " | " << psnr << " |\n";
  }
  if (!markdown.empty()) {
    std::ofstream out(markdown);
    require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + markdown);
    out << md.str();
  }
  return 0;
}

struct GenModelArgs {
  std::string out;
  int depth = 12;
  int channels = 32;
  std::uint64_t seed = 7;
  int fit_scans = 8;
  int rays = 30000;
  std::uint64_t fit_seed = 1000;
  int workers = 1;
};

int run_genmodel(const GenModelArgs& a) {
  const ModelConfig cfg = toy_config(a.depth, a.channels);
  FloatModel fm = a.fit_scans > 0
                      ? toy_float_model(cfg, a.seed, synth_set(a.fit_seed, a.fit_scans, a.rays, a.depth), a.workers)
                      : generate_float_model(cfg, {.seed = a.seed});
  write_float_model(fm, a.out);
  std::cout << "depth " << cfg.depth << " channels " << cfg.channels << " t " << cfg.decision_level() << " tensors "
            << fm.tensors.size() << " hash " << to_hex(float_model_hash(fm)) << '\n';
  return 0;
}

int run_synth(const std::string& out, std::uint64_t seed, int rays, const std::string& scene) {
  if (scene != "boxes" && scene != "sphere") throw UsageError("--scene must be 'boxes' or 'sphere'");
  const RawCloud c = synth_scan(seed, rays, scene == "sphere" ? SceneKind::Sphere : SceneKind::GroundBoxes);
  save_points(c, out);
  std::cout << "points " << c.points.size() << '\n';
  return 0;
}

int run_perturb(const std::string& in, const std::string& model, double eps, int trials, std::uint64_t seed,
                int workers) {
  const FloatModel fm = read_float_model(model);
  QuantTransform t;
  t.precision = fm.config.depth;
  const QuantizedCloud cloud = quantize_points(load_points(in), t);
  const Bytes stream = encode(cloud, fm, {.workers = workers});
  std::cout << "trial,seed,lossless,aborted,first_divergence,corrupted_fraction,d1_psnr,decoded_points\n";
  int failures = 0;
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    const PerturbationReport r = perturbed_decode(stream, cloud, fm, eps, s, workers);
    failures += r.lossless ? 0 : 1;
    std::cout << i << ',' << s << ',' << r.lossless << ',' << r.aborted << ','
              << (r.first_divergence ? std::to_string(*r.first_divergence) : "") << ',' << r.corrupted_fraction << ','
              << r.d1_psnr << ',' << r.decoded_points << '\n';
  }
  std::cout << "failed " << failures << " of " << trials << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned octree geometry codec for LiDAR point clouds"};
  app.require_subcommand(1);
  app.fallthrough();
  int workers = 1;
  app.add_option("--workers", workers, "Worker threads (never changes the output)")->check(CLI::Range(1, 256));

  CompressArgs ca;
  auto* compress = app.add_subcommand("compress", "Quantize and encode a point file");
  compress->add_option("in", ca.in, "Input .bin or .ply")->required();
  compress->add_option("out", ca.out, "Output bitstream")->required();
  compress->add_option("--model", ca.model, "PCWQ (integer) or PCWF (--float) model")->required();
  compress->add_option("--level", ca.level, "Octree depth L")->required()->check(CLI::Range(1, kMaxDepth));
  compress->add_flag("--float", ca.use_float, "Use the float path (non-portable streams)");
  compress->add_option("--quant", ca.quant, "Quantization: bbox or scale");
  compress->add_option("--scale", ca.scale, "Scale for --quant scale");
  compress->add_flag("-v,--verbose", ca.verbose, "Per-level report");

  std::string d_in, d_out, d_model;
  auto* decompress = app.add_subcommand("decompress", "Decode a bitstream to a point file");
  decompress->add_option("in", d_in)->required();
  decompress->add_option("out", d_out)->required();
  decompress->add_option("--model", d_model)->required();

  std::string e_ref, e_test;
  std::optional<double> e_peak;
  std::optional<int> e_level;
  int e_k = 16;
  auto* eval = app.add_subcommand("eval", "D1/D2 PSNR and Chamfer distance");
  eval->add_option("--ref", e_ref)->required();
  eval->add_option("--test", e_test)->required();
  eval->add_option("--peak", e_peak, "PSNR peak in input units");
  eval->add_option("--level", e_level, "Compare on the BboxNorm lattice of this depth (peak 2^L - 1)")
      ->check(CLI::Range(1, kMaxDepth));
  eval->add_option("--normals-k", e_k, "Neighbors for normal estimation")->check(CLI::Range(3, 1024));

  std::string c_float, c_samples, c_out;
  auto* calib = app.add_subcommand("calibrate", "Derive an integer model from a float model");
  calib->add_option("--float-model", c_float)->required();
  calib->add_option("--samples", c_samples, "Directory of calibration point files (file-name order)")->required();
  calib->add_option("--out", c_out)->required();

  std::string s_in;
  int s_level = 14;
  auto* stats = app.add_subcommand("stats", "HRCS statistics as CSV");
  stats->add_option("in", s_in)->required();
  stats->add_option("--level", s_level)->required()->check(CLI::Range(1, kMaxDepth));

  std::string dc_in, dc_model;
  int dc_runs = 5;
  std::vector<int> dc_workers{1, 8};
  auto* detcheck = app.add_subcommand("detcheck", "Repeat encodes and compare stream hashes");
  detcheck->add_option("in", dc_in)->required();
  detcheck->add_option("--model", dc_model)->required();
  detcheck->add_option("--runs", dc_runs)->check(CLI::Range(1, 1000));
  detcheck->add_option("--worker-cycle", dc_workers, "Worker counts cycled over runs")->check(CLI::Range(1, 256));

  std::string rd_dir, rd_base, rd_md;
  auto* rd = app.add_subcommand("rd", "BD-Rate / BD-PSNR table from RD CSV files");
  rd->add_option("--dir", rd_dir)->required();
  rd->add_option("--baseline", rd_base)->required();
  rd->add_option("--markdown", rd_md, "Also write a Markdown table here");

  GenModelArgs g;
  auto* genmodel = app.add_subcommand("genmodel", "Write a generated float model");
  genmodel->add_option("--out", g.out)->required();
  genmodel->add_option("--depth", g.depth)->check(CLI::Range(1, kMaxDepth));
  genmodel->add_option("--channels", g.channels)->check(CLI::Range(1, 1024));
  genmodel->add_option("--seed", g.seed);
  genmodel->add_option("--fit-scans", g.fit_scans, "Synthetic scans for the readout fit (0 = none)")
      ->check(CLI::Range(0, 1000));
  genmodel->add_option("--fit-rays", g.rays)->check(CLI::Range(1, 10000000));
  genmodel->add_option("--fit-seed", g.fit_seed);

  std::string sy_out, sy_scene = "boxes";
  std::uint64_t sy_seed = 1;
  int sy_rays = 100000;
  auto* synth = app.add_subcommand("synth", "Write a synthetic LiDAR scan");
  synth->add_option("--out", sy_out)->required();
  synth->add_option("--seed", sy_seed);
  synth->add_option("--rays", sy_rays)->check(CLI::Range(1, 100000000));
  synth->add_option("--scene", sy_scene, "boxes or sphere");

  std::string p_in, p_model;
  double p_eps = 1e-6;
  int p_trials = 20;
  std::uint64_t p_seed = 1;
  auto* perturb = app.add_subcommand("perturb", "Float-path decode under logit perturbation");
  perturb->add_option("in", p_in)->required();
  perturb->add_option("--model", p_model, "PCWF model")->required();
  perturb->add_option("--eps", p_eps);
  perturb->add_option("--trials", p_trials)->check(CLI::Range(1, 100000));
  perturb->add_option("--seed", p_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    ca.workers = workers;
    g.workers = workers;
    if (*compress) return run_compress(ca);
    if (*decompress) return run_decompress(d_in, d_out, d_model, workers);
    if (*eval) return run_eval(e_ref, e_test, e_peak, e_level, e_k);
    if (*calib) return run_calibrate(c_float, c_samples, c_out, workers);
    if (*stats) return run_stats(s_in, s_level);
    if (*detcheck) return run_detcheck(dc_in, dc_model, dc_runs, dc_workers);
    if (*rd) return run_rd(rd_dir, rd_base, rd_md);
    if (*genmodel) return run_genmodel(g);
    if (*synth) return run_synth(sy_out, sy_seed, sy_rays, sy_scene);
    if (*perturb) return run_perturb(p_in, p_model, p_eps, p_trials, p_seed, workers);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidArgument ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
