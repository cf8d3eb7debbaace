#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "panodepth/checkpoint.hpp"
#include "panodepth/evaluation.hpp"
#include "panodepth/geometry.hpp"
#include "panodepth/image_io.hpp"
#include "panodepth/renderer.hpp"
#include "panodepth/rng.hpp"
#include "panodepth/training.hpp"

namespace fs = std::filesystem;
using namespace panodepth;

namespace {

constexpr const char* kFaceNames[6] = {"px", "nx", "py", "ny", "pz", "nz"};

struct Dims {
  int h = 0;
  int w = 0;
};

Dims parse_dims(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    return Dims{std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("dims must look like HxW, got '" + text + "'");
  }
}

bool has_extension(const std::string& path, const char* ext) { return fs::path(path).extension() == ext; }

// --- synth ---------------------------------------------------------------

struct SynthArgs {
  int scenes = 0;
  std::string scene_file;
  int width = 128;
  std::string out;
  std::uint64_t seed = 0;
  int jobs = 1;
};

int run_synth(const SynthArgs& a) {
  if (a.width % 4 != 0) {
    throw ConfigError("--width must be divisible by 4 (quarter-turn yaw shifts), got " + std::to_string(a.width));
  }
  const SphereDims dims(a.width, a.width / 2);
  std::vector<NamedScene> scenes;
  if (!a.scene_file.empty()) {
    scenes.push_back({fs::path(a.scene_file).stem().string(), parse_scene(read_file(a.scene_file))});
  } else {
    if (a.scenes < 1) throw ConfigError("--scenes must be >= 1");
    scenes = generate_scenes(a.scenes, a.seed);
  }
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
  const auto manifest = render_dataset(scenes, dims, a.out, a.jobs);
  std::cout << "wrote " << manifest.records.size() << " records to " << (fs::path(a.out) / kManifestName).string()
            << "\n";
  return 0;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string arch = "rectnet";
  int width = 8;
  int iterations = 2000;
  int batch = 4;
  double lr = 2e-4;
  double dropout = 0.0;
  std::string padding = "sphere";
  bool all_samples = false;
  std::string out;
  std::string log;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const auto samples = load_samples(a.manifest);
  if (samples.empty()) throw ConfigError("manifest has no records");
  TrainConfig config;
  config.spec = ModelSpec::defaults(parse_architecture(a.arch), samples[0].color.height(), samples[0].color.width(),
                                    a.width);
  config.spec.dropout = a.dropout;
  if (a.padding == "zero") {
    config.spec.padding = PaddingMode::zero;
  } else if (a.padding != "sphere") {
    throw ConfigError("--padding must be sphere or zero");
  }
  config.manifest = a.manifest;
  config.batch = a.batch;
  config.iterations = a.iterations;
  config.learning_rate = a.lr;
  config.seed = a.seed;
  config.hold_out_validation = !a.all_samples;

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::binary);
    if (!log) throw IoError("cannot open " + a.log + " for writing");
    log << log_header() << "\n";
  }
  const auto result = train(config, samples, [&](const LogRow& row) {
    if (log) log << format_log_row(row) << "\n";
    if (row.step % 100 == 0 || row.step == static_cast<std::uint64_t>(a.iterations)) {
      std::cerr << "step " << row.step << " loss " << row.loss << "\n";
    }
  });
  if (result.empty_mask_warning) std::cerr << "warning: some batches had no valid pixel at any scale\n";
  save_checkpoint(a.out, result.model, result.steps);
  std::cout << "saved " << a.out << " after " << result.steps << " steps\n";
  return 0;
}

// --- predict -------------------------------------------------------------

int run_predict(const std::string& ckpt, const std::string& in, const std::string& out) {
  const auto checkpoint = load_checkpoint(ckpt);
  save_depth(out, predict(checkpoint.model, load_color(in)));
  return 0;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string manifest;
  std::string pred;
  std::string gt;
  std::string mask;
  std::string csv;
  int jobs = 1;
};

void print_metrics(const MetricsRecord& m) {
  std::cout << metrics_csv_header() << "\n" << metrics_csv_row("aggregate", m) << "\n";
}

int run_eval(const EvalArgs& a) {
  if (!a.pred.empty()) {
    if (a.gt.empty() || a.mask.empty()) throw ConfigError("--pred needs --gt and --mask");
    const auto m = compute_metrics(load_depth(a.pred), load_depth(a.gt), load_mask(a.mask));
    print_metrics(m);
    if (!a.csv.empty()) write_file(a.csv, metrics_csv_header() + "\n" + metrics_csv_row(a.pred, m) + "\n");
    return 0;
  }
  if (a.ckpt.empty() || a.manifest.empty()) throw ConfigError("eval needs --ckpt and --manifest, or --pred/--gt/--mask");
  const auto checkpoint = load_checkpoint(a.ckpt);
  const auto result = evaluate(checkpoint.model, a.manifest, a.jobs);
  for (const auto& f : result.failures) std::cerr << "skipped " << f << "\n";
  if (!a.csv.empty()) write_file(a.csv, encode_metrics_csv(result));
  if (result.samples.empty()) throw IoError("no sample could be evaluated");
  print_metrics(result.aggregate);
  return result.failures.empty() ? 0 : 3;
}

// --- gradcheck -----------------------------------------------------------

struct GradCheckArgs {
  std::string arch = "rectnet";
  int width = 2;
  std::string dims = "8x16";
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

int run_gradcheck(const GradCheckArgs& a) {
  const Dims d = parse_dims(a.dims);
  const ModelSpec spec = ModelSpec::defaults(parse_architecture(a.arch), d.h, d.w, a.width);
  const auto result = model_grad_check(spec, a.seed, a.max_per_tensor);
  std::printf("checked %zu gradients, max relative error %.3e (%s[%zu]: analytic %.9e numeric %.9e)\n",
              result.checked, result.max_rel_error, result.worst_param.c_str(), result.worst_index, result.analytic,
              result.numeric);
  return result.max_rel_error < 1e-4 ? 0 : 4;
}

// --- convert -------------------------------------------------------------

struct ConvertArgs {
  std::string in;
  std::string faces;
  std::string out;
  int face_size = 0;
  int width = 0;
};

Image<float> load_any(const std::string& path) {
  if (has_extension(path, ".ppm")) return load_color(path);
  if (has_extension(path, ".pfm")) return load_depth(path);
  throw ConfigError("unsupported image extension in " + path + " (expected .ppm or .pfm)");
}

void save_any(const std::string& path, const Image<float>& img) {
  if (has_extension(path, ".ppm")) return save_color(path, img);
  if (has_extension(path, ".pfm")) return save_depth(path, img);
  throw ConfigError("unsupported image extension in " + path + " (expected .ppm or .pfm)");
}

int run_convert(const ConvertArgs& a) {
  if (!a.in.empty() == !a.faces.empty()) throw ConfigError("convert needs exactly one of --in or --faces");
  if (!a.in.empty()) {
    const auto pano = load_any(a.in);
    const int face = a.face_size > 0 ? a.face_size : pano.height() / 2;
    const auto cube = equirect_to_cubemap(pano, face);
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
    const std::string ext = fs::path(a.in).extension().string();
    for (int f = 0; f < 6; ++f) save_any((fs::path(a.out) / (std::string(kFaceNames[f]) + ext)).string(), cube[f]);
    std::cout << "wrote 6 faces of " << face << "x" << face << " to " << a.out << "\n";
    return 0;
  }
  if (a.width <= 0) throw ConfigError("--faces needs --width");
  const std::string ext = fs::path(a.out).extension().string();
  Cubemap cube;
  for (int f = 0; f < 6; ++f) cube[f] = load_any((fs::path(a.faces) / (std::string(kFaceNames[f]) + ext)).string());
  save_any(a.out, cubemap_to_equirect(cube, SphereDims(a.width, a.width / 2)));
  return 0;
}

// --- info ----------------------------------------------------------------

int run_info(const std::string& manifest_path, const std::string& ckpt) {
  if (manifest_path.empty() == ckpt.empty()) throw ConfigError("info needs exactly one of --manifest or --ckpt");
  if (!manifest_path.empty()) {
    const auto manifest = read_manifest(manifest_path);
    std::set<std::string> scenes;
    for (const auto& r : manifest.records) scenes.insert(r.scene_id);
    std::cout << "records " << manifest.records.size() << "\n";
    std::cout << "scenes " << scenes.size() << "\n";
    if (!manifest.records.empty()) {
      const auto color = load_color((fs::path(manifest_path).parent_path() / manifest.records[0].color).string());
      std::cout << "dims " << color.width() << "x" << color.height() << "\n";
    }
    return 0;
  }
  const auto checkpoint = load_checkpoint(ckpt);
  std::cout << checkpoint.model.spec().to_text();
  std::cout << "step " << checkpoint.step << "\n";
  std::cout << "tensors " << checkpoint.model.parameters().size() << "\n";
  std::cout << "parameters " << checkpoint.model.parameter_count() << "\n";
  return 0;
}

// --config FILE turns each "key value" line into "--key value" after the
// subcommand; a key also given on the command line is an error.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::vector<std::string> out;
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 == args.size()) throw ConfigError("--config needs a file");
      config = args[++i];
    } else if (args[i].starts_with("--config=")) {
      config = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config.empty()) return out;
  std::istringstream in(read_file(config));
  std::vector<std::string> extra;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream words(line);
    std::string key, value, rest;
    if (!(words >> key)) continue;
    if (!(words >> value) || (words >> rest)) {
      throw ConfigError(config + " line " + std::to_string(line_no) + ": expected 'key value'");
    }
    const std::string flag = "--" + key;
    for (const auto& a : out) {
      if (a == flag || a.starts_with(flag + "=")) {
        throw ConfigError("'" + key + "' is set both in " + config + " and on the command line");
      }
    }
    extra.push_back(flag);
    extra.push_back(value);
  }
  // After the subcommand name, which is the first non-option argument.
  auto at = out.begin();
  while (at != out.end() && at->starts_with("-")) ++at;
  if (at != out.end()) ++at;
  out.insert(at, extra.begin(), extra.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panoramic depth estimation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* sc_synth = app.add_subcommand("synth", "render a synthetic panorama dataset");
  auto* scenes_opt = sc_synth->add_option("--scenes", synth.scenes, "number of generated rooms");
  sc_synth->add_option("--scene-file", synth.scene_file, "render one scene description file")->excludes(scenes_opt);
  sc_synth->add_option("--width", synth.width, "panorama width (height is width/2)")->capture_default_str();
  sc_synth->add_option("--out", synth.out, "output directory")->required();
  sc_synth->add_option("--seed", synth.seed)->capture_default_str();
  sc_synth->add_option("--jobs", synth.jobs)->capture_default_str()->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "train a model on a dataset manifest");
  sc_train->add_option("--manifest", tr.manifest)->required();
  sc_train->add_option("--arch", tr.arch)->capture_default_str()->check(CLI::IsMember({"rectnet", "uresnet"}));
  sc_train->add_option("--width", tr.width, "base channel width")->capture_default_str();
  sc_train->add_option("--iterations", tr.iterations)->capture_default_str();
  sc_train->add_option("--batch", tr.batch)->capture_default_str();
  sc_train->add_option("--lr", tr.lr)->capture_default_str();
  sc_train->add_option("--dropout", tr.dropout)->capture_default_str();
  sc_train->add_option("--padding", tr.padding)->capture_default_str();
  sc_train->add_flag("--all-samples", tr.all_samples, "train on every record (no validation hold-out)");
  sc_train->add_option("--out", tr.out, "checkpoint path")->required();
  sc_train->add_option("--log", tr.log, "training log CSV");
  sc_train->add_option("--seed", tr.seed)->capture_default_str();

  std::string pr_ckpt, pr_in, pr_out;
  std::uint64_t pr_seed = 0;
  auto* sc_predict = app.add_subcommand("predict", "predict a depth map for one panorama");
  sc_predict->add_option("--ckpt", pr_ckpt)->required();
  sc_predict->add_option("--in", pr_in, "color panorama (.ppm)")->required();
  sc_predict->add_option("--out", pr_out, "depth output (.pfm)")->required();
  sc_predict->add_option("--seed", pr_seed)->capture_default_str();

  EvalArgs ev;
  std::uint64_t ev_seed = 0;
  auto* sc_eval = app.add_subcommand("eval", "score predictions against ground truth");
  sc_eval->add_option("--ckpt", ev.ckpt);
  sc_eval->add_option("--manifest", ev.manifest);
  sc_eval->add_option("--pred", ev.pred, "predicted depth (.pfm)");
  sc_eval->add_option("--gt", ev.gt, "ground-truth depth (.pfm)");
  sc_eval->add_option("--mask", ev.mask, "validity mask (.pgm)");
  sc_eval->add_option("--csv", ev.csv, "per-sample metrics CSV");
  sc_eval->add_option("--jobs", ev.jobs)->capture_default_str()->check(CLI::PositiveNumber);
  sc_eval->add_option("--seed", ev_seed)->capture_default_str();

  GradCheckArgs gc;
  auto* sc_grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  sc_grad->add_option("--arch", gc.arch)->capture_default_str()->check(CLI::IsMember({"rectnet", "uresnet"}));
  sc_grad->add_option("--width", gc.width)->capture_default_str();
  sc_grad->add_option("--dims", gc.dims, "HxW")->capture_default_str();
  sc_grad->add_option("--max-per-tensor", gc.max_per_tensor, "0 checks every element")->capture_default_str();
  sc_grad->add_option("--seed", gc.seed)->capture_default_str();

  ConvertArgs cv;
  std::uint64_t cv_seed = 0;
  auto* sc_convert = app.add_subcommand("convert", "equirectangular <-> cubemap");
  sc_convert->add_option("--in", cv.in, "equirectangular image to split into faces");
  sc_convert->add_option("--faces", cv.faces, "directory of faces to merge");
  sc_convert->add_option("--out", cv.out, "face directory or merged image")->required();
  sc_convert->add_option("--face-size", cv.face_size, "default: height / 2");
  sc_convert->add_option("--width", cv.width, "merged panorama width");
  sc_convert->add_option("--seed", cv_seed)->capture_default_str();

  std::string in_manifest, in_ckpt;
  std::uint64_t in_seed = 0;
  auto* sc_info = app.add_subcommand("info", "describe a manifest or checkpoint");
  sc_info->add_option("--manifest", in_manifest);
  sc_info->add_option("--ckpt", in_ckpt);
  sc_info->add_option("--seed", in_seed)->capture_default_str();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }

  try {
    for (auto* sub : app.get_subcommands()) {
      std::cerr << "# " << sub->get_name() << "\n" << sub->config_to_str(true, false);
    }
    if (sc_synth->parsed()) return run_synth(synth);
    if (sc_train->parsed()) return run_train(tr);
    if (sc_predict->parsed()) return run_predict(pr_ckpt, pr_in, pr_out);
    if (sc_eval->parsed()) return run_eval(ev);
    if (sc_grad->parsed()) return run_gradcheck(gc);
    if (sc_convert->parsed()) return run_convert(cv);
    if (sc_info->parsed()) return run_info(in_manifest, in_ckpt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
