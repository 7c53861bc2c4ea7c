// shapeset command-line tool. Every subcommand accepts --config FILE with flat
// `key = value` lines naming its long flags; flags given on the command line win.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <sstream>

#include <fmt/format.h>

#include "shapeset/applications.hpp"
#include "shapeset/binary_io.hpp"
#include "shapeset/checkpoint.hpp"
#include "shapeset/dataset_io.hpp"
#include "shapeset/error.hpp"
#include "shapeset/io.hpp"
#include "shapeset/metrics.hpp"
#include "shapeset/service.hpp"

namespace fs = std::filesystem;
using namespace shapeset;

namespace {

struct MakeDataArgs {
  fs::path out;
  int n = 2000;
  int p = 256;
  double amplitude = 1.0;
  std::uint64_t seed = 0;
};

struct FitArgs {
  fs::path data, out;
  int q = 64;
};

struct TrainArgs {
  fs::path data, ssm, out, loss_log;
  int steps = 3000, batch = 64, warmup = 100, diffusion_steps = 200;
  int width = 128, blocks = 4, heads = 4, time_dim = 128;
  double lr = 1e-3, clip = 1.0, lambda_mse = 1.0, lambda_ce = 0.1, lambda_kl = 0.001, ema = 0.999;
  bool mask_padding = false;
  bool clean_semantics = false;
  std::uint64_t seed = 0;
};

struct SampleArgs {
  fs::path model, out;
  int n = 5;
  bool pure_noise_semantics = false;
  std::uint64_t seed = 0;
};

struct CompleteArgs {
  fs::path model, input, out;
  int k = 3;
  int part = -1;
  int resamples = 5;
  double ridge = 1e-3;
  std::uint64_t seed = 0;
};

struct EditArgs {
  fs::path model, latents, donor, out;
  std::string op;
  int index = 0, donor_index = 0, category = -1, t_start = -1;
  std::vector<double> z;
  double alpha = 0.5;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  fs::path gen, ref, out;
  bool no_emd = false;
  std::size_t emd_points = 256;
  std::size_t max_points = 2048;
  std::uint64_t seed = 0;
};

struct ServeArgs {
  fs::path model;
  std::string host = "127.0.0.1";
  int port = 8080;
};

std::string json_escape(const std::string& s) { return nlohmann::json(s).dump(); }

// Converts a flat key=value file into `--key=value` arguments, skipping keys
// already given on the command line.
std::vector<std::string> config_arguments(const fs::path& path, const std::vector<std::string>& given) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  std::vector<std::string> out;
  for (const auto& item : CLI::ConfigINI().from_file(path.string())) {
    if (!item.parents.empty()) throw UsageError("config: sections are not supported (" + item.fullname() + ")");
    if (item.name == "config") continue;
    const std::string flag = "--" + item.name;
    const bool overridden = std::any_of(given.begin(), given.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (overridden) continue;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    out.push_back(flag + "=" + value);
  }
  return out;
}

std::vector<SegmentedShape> load_shapes(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) return read_dataset(dir).shapes;
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".ply") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no dataset manifest or .ply files in " + dir.string());
  std::vector<SegmentedShape> shapes;
  for (const auto& f : files) {
    const auto cloud = read_ply(f);
    SegmentedShape s;
    s.id = f.stem().string();
    std::map<int, std::size_t> slot;
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      const int c = cloud.part[i];
      auto [it, fresh] = slot.emplace(c, s.parts.size());
      if (fresh) s.parts.push_back(CorrespondedCloud{c, {}});
      s.parts[it->second].points.push_back(cloud.points[i]);
    }
    shapes.push_back(std::move(s));
  }
  return shapes;
}

void write_shapes(const Model& model, const std::vector<ShapeLatent>& latents, const fs::path& dir,
                  const std::string& prefix) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    auto shape = decode_shape(latents[i], model.ssms, model.codebook, model.layout);
    shape.id = fmt::format("{}_{:03d}", prefix, i);
    write_ply(shape, dir / (shape.id + ".ply"));
  }
  write_text_file(dir / "latents.json", latents_to_json(latents, model.layout));
}

int run_make_data(const MakeDataArgs& a) {
  FamilyConfig family;
  family.points_per_part = a.p;
  family.amplitude = a.amplitude;
  const auto data = generate_dataset(family, a.n, a.seed);
  write_dataset(data.dataset, a.out);
  spdlog::info("wrote {} shapes (p={}) to {}", a.n, a.p, a.out.string());
  return 0;
}

int run_fit_ssm(const FitArgs& a) {
  const Dataset data = read_dataset(a.data);
  std::vector<SsmFitInfo> infos(data.categories.size());
  int common = a.q;
  for (std::size_t c = 0; c < data.categories.size(); ++c) {
    const auto parts = data.parts_of(static_cast<int>(c));
    if (parts.size() < 2) throw ValidationError("category " + data.categories[c].name + " has fewer than 2 parts");
    fit_ssm(parts, std::min<int>(a.q, static_cast<int>(parts.size()) - 1), &infos[c]);
    common = std::min(common, infos[c].retained_q);
  }
  if (common < a.q) spdlog::warn("q clamped from {} to {} (shared across categories)", a.q, common);

  fs::create_directories(a.out);
  nlohmann::ordered_json report;
  report["requested_q"] = a.q;
  report["q"] = common;
  report["categories"] = nlohmann::json::array();
  std::cout << fmt::format("{:<14} {:>6} {:>6}  cumulative explained variance\n", "category", "n", "rank");
  for (std::size_t c = 0; c < data.categories.size(); ++c) {
    const auto parts = data.parts_of(static_cast<int>(c));
    const PartSSM ssm = fit_ssm(parts, common);
    save_ssm(ssm, a.out / fmt::format("ssm_{}.bin", c));
    std::vector<double> cumulative;
    double acc = 0.0;
    for (double l : infos[c].spectrum) cumulative.push_back((acc += l) / infos[c].total_variance);
    std::string row;
    for (double v : cumulative) row += fmt::format(" {:.6f}", v);
    std::cout << fmt::format("{:<14} {:>6} {:>6} {}\n", data.categories[c].name, parts.size(), infos[c].retained_q, row);
    report["categories"].push_back({{"id", c},
                                    {"name", data.categories[c].name},
                                    {"samples", parts.size()},
                                    {"rank", infos[c].retained_q},
                                    {"eigenvalues", infos[c].spectrum},
                                    {"cumulative_explained_variance", cumulative}});
  }
  write_text_file(a.out / "ssm_report.json", report.dump(2) + "\n");
  return 0;
}

std::vector<PartSSM> load_ssms(const fs::path& dir, int m) {
  std::vector<PartSSM> ssms;
  for (int c = 0; c < m; ++c) ssms.push_back(load_ssm(dir / fmt::format("ssm_{}.bin", c)));
  return ssms;
}

int run_train(const TrainArgs& a) {
  const Dataset data = read_dataset(a.data);
  auto ssms = load_ssms(a.ssm, data.category_count());
  std::vector<std::string> names;
  for (const auto& c : data.categories) names.push_back(c.name);

  DenoiserConfig dc;
  dc.width = a.width;
  dc.blocks = a.blocks;
  dc.heads = a.heads;
  dc.time_dim = a.time_dim;
  dc.attend_padding = !a.mask_padding;
  Model model = make_model(std::move(ssms), names, dc, a.diffusion_steps, {a.lambda_mse, a.lambda_ce, a.lambda_kl}, a.seed);

  std::vector<ShapeLatent> latents;
  for (const auto& s : data.shapes) latents.push_back(encode_shape(s, model.ssms, model.codebook, model.layout));

  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.warmup = a.warmup;
  tc.grad_clip = a.clip;
  tc.noisy_semantics = !a.clean_semantics;
  tc.ema_decay = a.ema;
  tc.seed = a.seed;

  std::string csv = "step,total,mse,ce,kl,grad_norm,lr\n";
  train_denoiser(model, latents, tc, [&](const TrainRecord& r) {
    csv += fmt::format("{},{},{},{},{},{},{}\n", r.step, r.loss.total, r.loss.mse, r.loss.ce, r.loss.kl, r.grad_norm,
                       r.learning_rate);
    if (r.step % 100 == 0 || r.step + 1 == tc.steps) spdlog::info("step {:>5} loss {:.5f}", r.step, r.loss.total);
  });
  save_checkpoint(model, a.out);
  const fs::path log = a.loss_log.empty() ? fs::path(a.out.string() + ".loss.csv") : a.loss_log;
  write_text_file(log, csv);
  spdlog::info("saved {} and {}", a.out.string(), log.string());
  return 0;
}

int run_sample(const SampleArgs& a) {
  const Model model = load_checkpoint(a.model);
  SampleOptions opts;
  opts.semantics_from_padding = !a.pure_noise_semantics;
  const auto latents = sample_latents(model, a.n, a.seed, opts);
  write_shapes(model, latents, a.out, "sample");
  int valid = 0;
  for (const auto& z : latents) valid += structurally_valid(decode_shape(z, model.ssms, model.codebook, model.layout));
  spdlog::info("{} samples, {} structurally valid", a.n, valid);
  return 0;
}

int run_complete(const CompleteArgs& a) {
  const Model model = load_checkpoint(a.model);
  const auto cloud = read_ply(a.input);
  PointCloud observed;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (a.part < 0 || cloud.part[i] == a.part) observed.push_back(cloud.points[i]);
  }
  if (observed.empty()) throw ValidationError("no input points selected");
  SampleOptions opts;
  opts.completion_resamples = a.resamples;
  const auto result = cascaded_complete(model, observed, a.k, a.seed, a.ridge, opts);
  if (result.match.ambiguous) spdlog::warn("category identification is ambiguous");
  write_shapes(model, result.latents, a.out, "completion");
  nlohmann::ordered_json j;
  j["category"] = result.match.category;
  j["name"] = model.category_names[static_cast<std::size_t>(result.match.category)];
  j["ambiguous"] = result.match.ambiguous;
  j["distances"] = result.match.distances;
  j["fit_residual"] = result.fit.residual;
  j["fit_iterations"] = result.fit.iterations;
  j["latent"] = std::vector<double>(result.fit.z.data(), result.fit.z.data() + result.fit.z.size());
  write_text_file(a.out / "completion.json", j.dump(2) + "\n");
  return 0;
}

ShapeLatent pick(const std::vector<ShapeLatent>& all, int index, const std::string& what) {
  if (index < 0 || index >= static_cast<int>(all.size())) {
    throw ValidationError(fmt::format("{} index {} out of range ({} latents)", what, index, all.size()));
  }
  return all[static_cast<std::size_t>(index)];
}

int run_edit(const EditArgs& a) {
  const Model model = load_checkpoint(a.model);
  const auto latents = latents_from_json(read_text_file(a.latents), model.layout);
  const ShapeLatent base = pick(latents, a.index, "--index");
  auto donor = [&]() {
    if (a.donor.empty()) throw UsageError("--op " + a.op + " needs --donor");
    return pick(latents_from_json(read_text_file(a.donor), model.layout), a.donor_index, "--donor-index");
  };
  auto part_latent = [&]() -> GeometryLatent {
    if (!a.z.empty()) return Eigen::Map<const Eigen::VectorXd>(a.z.data(), static_cast<Eigen::Index>(a.z.size()));
    const ShapeLatent d = donor();
    const int row = find_category_row(model, d, a.category);
    if (row < 0) throw ValidationError("donor shape lacks category " + std::to_string(a.category));
    return d.values.row(row).head(model.layout.q).transpose();
  };

  ShapeLatent out;
  if (a.op == "add") {
    out = add_part(model, base, a.category, part_latent());
  } else if (a.op == "replace") {
    out = replace_part(model, base, a.category, part_latent());
  } else if (a.op == "remove") {
    out = remove_part(model, base, a.category);
  } else if (a.op == "interpolate") {
    out = interpolate_part(model, base, donor(), a.category, a.alpha);
  } else if (a.op == "mix") {
    out = mix_and_refine(model, base, donor(), a.category, a.seed, a.t_start).refined;
  } else {
    throw UsageError("unknown --op '" + a.op + "'");
  }
  write_shapes(model, {out}, a.out, "edit");
  return 0;
}

int run_eval(const EvalArgs& a) {
  std::vector<PointCloud> gen, ref;
  for (const auto& s : load_shapes(a.gen)) gen.push_back(eval_cloud(s, a.max_points, a.seed));
  for (const auto& s : load_shapes(a.ref)) ref.push_back(eval_cloud(s, a.max_points, a.seed));
  EvalOptions opts;
  opts.with_emd = !a.no_emd;
  opts.emd_points = a.emd_points;
  opts.seed = a.seed;
  const EvalReport report = evaluate(gen, ref, opts);
  const std::string json = report.to_json() + "\n";
  if (a.out.empty()) {
    std::cout << json;
  } else {
    write_text_file(a.out, json);
  }
  std::cerr << report.to_table();
  return 0;
}

int run_serve(const ServeArgs& a) {
  const ShapeService service(load_checkpoint(a.model));
  spdlog::info("serving {} on http://{}:{}", a.model.string(), a.host, a.port);
  if (!service.serve(a.host, a.port)) throw ValidationError(fmt::format("could not bind {}:{}", a.host, a.port));
  return 0;
}

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << "{\"error\":" << json_escape(kind) << ",\"exit_code\":" << code << ",\"message\":" << json_escape(message)
            << "}\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("shapeset");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);

  CLI::App app{"Part-based shape generation with statistical shape models and set diffusion"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  std::vector<CLI::App*> subs;
  auto add_sub = [&](const char* name, const char* help) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--config", "key=value file; command-line flags win")->check(CLI::ExistingFile);
    subs.push_back(s);
    return s;
  };

  MakeDataArgs md;
  auto* s_make = add_sub("make-data", "Generate a synthetic segmented dataset");
  s_make->add_option("--out", md.out, "Output dataset directory")->required();
  s_make->add_option("--n", md.n, "Number of shapes")->capture_default_str();
  s_make->add_option("--p", md.p, "Points per part")->capture_default_str();
  s_make->add_option("--amplitude", md.amplitude, "Deformation amplitude")->capture_default_str();
  s_make->add_option("--seed", md.seed)->capture_default_str();

  FitArgs fa;
  auto* s_fit = add_sub("fit-ssm", "Fit per-category SSMs and report explained variance");
  s_fit->add_option("--data", fa.data, "Dataset directory")->required();
  s_fit->add_option("--out", fa.out, "Output directory for ssm_<category>.bin")->required();
  s_fit->add_option("--q", fa.q, "Requested components (clamped to the shared available rank)")->capture_default_str();

  TrainArgs ta;
  auto* s_train = add_sub("train", "Train the set denoiser and write a checkpoint");
  s_train->add_option("--data", ta.data, "Dataset directory")->required();
  s_train->add_option("--ssm", ta.ssm, "Directory with ssm_<category>.bin")->required();
  s_train->add_option("--out", ta.out, "Checkpoint path")->required();
  s_train->add_option("--loss-log", ta.loss_log, "Loss CSV (default <out>.loss.csv)");
  s_train->add_option("--steps", ta.steps)->capture_default_str();
  s_train->add_option("--batch", ta.batch)->capture_default_str();
  s_train->add_option("--lr", ta.lr)->capture_default_str();
  s_train->add_option("--warmup", ta.warmup)->capture_default_str();
  s_train->add_option("--clip", ta.clip, "Gradient norm clip")->capture_default_str();
  s_train->add_option("--diffusion-steps", ta.diffusion_steps, "T")->capture_default_str();
  s_train->add_option("--width", ta.width)->capture_default_str();
  s_train->add_option("--blocks", ta.blocks)->capture_default_str();
  s_train->add_option("--heads", ta.heads)->capture_default_str();
  s_train->add_option("--time-dim", ta.time_dim)->capture_default_str();
  s_train->add_option("--lambda-mse", ta.lambda_mse)->capture_default_str();
  s_train->add_option("--lambda-ce", ta.lambda_ce)->capture_default_str();
  s_train->add_option("--lambda-kl", ta.lambda_kl)->capture_default_str();
  s_train->add_flag("--mask-padding", ta.mask_padding, "Exclude padding tokens from attention keys");
  s_train->add_flag("--clean-semantics", ta.clean_semantics, "Train on codebook means instead of GMM draws");
  s_train->add_option("--ema", ta.ema, "Weight moving-average decay, 0 to disable")->capture_default_str();
  s_train->add_option("--seed", ta.seed)->capture_default_str();

  SampleArgs sa;
  auto* s_sample = add_sub("sample", "Generate shapes as PLY plus latents.json");
  s_sample->add_option("--model", sa.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_sample->add_option("--out", sa.out, "Output directory")->required();
  s_sample->add_option("--n", sa.n)->capture_default_str();
  s_sample->add_flag("--pure-noise-semantics", sa.pure_noise_semantics,
                     "Start semantics from pure noise instead of the noised padding embedding");
  s_sample->add_option("--seed", sa.seed)->capture_default_str();

  CompleteArgs ca;
  auto* s_complete = add_sub("complete", "Complete whole shapes from a partial PLY");
  s_complete->add_option("--model", ca.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_complete->add_option("--input", ca.input, "PLY with the observed points")->required()->check(CLI::ExistingFile);
  s_complete->add_option("--out", ca.out, "Output directory")->required();
  s_complete->add_option("--k", ca.k, "Completions to draw")->capture_default_str();
  s_complete->add_option("--part", ca.part, "Only use points with this part label (-1: all)")->capture_default_str();
  s_complete->add_option("--ridge", ca.ridge)->capture_default_str();
  s_complete->add_option("--resamples", ca.resamples, "Passes per reverse step while completing")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s_complete->add_option("--seed", ca.seed)->capture_default_str();

  EditArgs ea;
  auto* s_edit = add_sub("edit", "Add, replace, remove, interpolate or mix parts of saved latents");
  s_edit->add_option("--model", ea.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_edit->add_option("--latents", ea.latents, "latents.json to edit")->required()->check(CLI::ExistingFile);
  s_edit->add_option("--index", ea.index, "Latent within --latents")->capture_default_str();
  s_edit->add_option("--op", ea.op)->required()->check(CLI::IsMember({"add", "replace", "remove", "interpolate", "mix"}));
  s_edit->add_option("--category", ea.category)->required();
  s_edit->add_option("--z", ea.z, "Part latent (q values) for add/replace")->delimiter(',');
  s_edit->add_option("--donor", ea.donor, "latents.json supplying the other shape")->check(CLI::ExistingFile);
  s_edit->add_option("--donor-index", ea.donor_index)->capture_default_str();
  s_edit->add_option("--alpha", ea.alpha)->capture_default_str();
  s_edit->add_option("--t-start", ea.t_start, "Refinement start step for mix (-1: 0.4 T)")->capture_default_str();
  s_edit->add_option("--out", ea.out, "Output directory")->required();
  s_edit->add_option("--seed", ea.seed)->capture_default_str();

  EvalArgs va;
  auto* s_eval = add_sub("eval", "MMD / COV / 1-NNA under Chamfer and EMD");
  s_eval->add_option("--gen", va.gen, "Dataset directory or directory of PLY files")->required();
  s_eval->add_option("--ref", va.ref, "Dataset directory or directory of PLY files")->required();
  s_eval->add_option("--out", va.out, "Report JSON path (default stdout)");
  s_eval->add_flag("--no-emd", va.no_emd);
  s_eval->add_option("--emd-points", va.emd_points)->capture_default_str();
  s_eval->add_option("--max-points", va.max_points)->capture_default_str();
  s_eval->add_option("--seed", va.seed)->capture_default_str();

  ServeArgs sv;
  auto* s_serve = add_sub("serve", "Start the HTTP service");
  s_serve->add_option("--model", sv.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_serve->add_option("--host", sv.host)->capture_default_str();
  s_serve->add_option("--port", sv.port)->capture_default_str();

  // Splice config-file values in as flags before parsing.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] != "--config" && args[i].rfind("--config=", 0) != 0) continue;
      const std::string path = args[i] == "--config" ? args[i + 1] : args[i].substr(9);
      auto extra = config_arguments(path, args);
      args.insert(args.end(), extra.begin(), extra.end());
      break;
    }
  } catch (const shapeset::Error& e) {
    return fail(static_cast<int>(e.kind()), e.kind() == ErrorKind::Usage ? "usage" : "validation", e.what());
  } catch (const std::exception& e) {
    return fail(1, "usage", e.what());
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, "usage", e.what());
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*s_make) return run_make_data(md);
    if (*s_fit) return run_fit_ssm(fa);
    if (*s_train) return run_train(ta);
    if (*s_sample) return run_sample(sa);
    if (*s_complete) return run_complete(ca);
    if (*s_edit) return run_edit(ea);
    if (*s_eval) return run_eval(va);
    if (*s_serve) return run_serve(sv);
  } catch (const NumericalError& e) {
    return fail(3, "numerical", e.what());
  } catch (const UsageError& e) {
    return fail(1, "usage", e.what());
  } catch (const shapeset::Error& e) {
    return fail(2, "validation", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(2, "validation", e.what());
  } catch (const std::exception& e) {
    return fail(3, "internal", e.what());
  }
  return 1;
}
