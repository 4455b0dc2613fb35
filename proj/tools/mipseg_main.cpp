#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mipseg/mipseg.hpp"

namespace {

using namespace mipseg;

void print_kv(const std::string& key, const std::string& value) {
  std::cout << "config " << key << '=' << value << '\n';
}

void print_config(const TrainConfig& cfg) {
  for (const auto& [k, v] : config_to_kv(cfg)) print_kv(k, v);
}

PhantomSpec load_phantom_spec(const std::string& path, PhantomSpec base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "n_targets")
        base.n_target_vessels = std::stoi(value);
      else if (key == "n_distractors")
        base.n_distractors = std::stoi(value);
      else if (key == "radius_min")
        base.radius_min = std::stod(value);
      else if (key == "radius_max")
        base.radius_max = std::stod(value);
      else if (key == "target_intensity_min")
        base.target_intensity_min = std::stod(value);
      else if (key == "target_intensity_max")
        base.target_intensity_max = std::stod(value);
      else if (key == "distractor_intensity_min")
        base.distractor_intensity_min = std::stod(value);
      else if (key == "distractor_intensity_max")
        base.distractor_intensity_max = std::stod(value);
      else if (key == "noise_sigma")
        base.noise_sigma = std::stod(value);
      else if (key == "budget")
        base.foreground_budget = std::stod(value);
      else
        throw ConfigError("unknown phantom spec key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value '" + value + "' for phantom spec key '" + key + "'");
    }
  }
  return base;
}

void parse_dims(const std::string& text, int& a, int& b, int& c) {
  if (std::sscanf(text.c_str(), "%dx%dx%d", &a, &b, &c) != 3 || a < 1 || b < 1 || c < 1)
    throw UsageError("bad --dims '" + text + "', expected AxBxC with positive extents");
}

std::vector<double> parse_angles(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    try {
      const double a = std::stod(item);
      if (a < 0.0 || a >= 180.0)
        throw UsageError("angle " + item + " outside [0,180)");
      out.push_back(a);
    } catch (const std::invalid_argument&) {
      throw UsageError("bad angle '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("no angles given");
  return out;
}

std::string angle_label(double a) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", a);
  std::string s(buf);
  for (auto& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

int cmd_phantom(int n, const std::string& dims, const std::string& spec_file,
                std::uint64_t seed, const std::string& out_dir) {
  PhantomSpec spec;
  if (!dims.empty()) parse_dims(dims, spec.a, spec.b, spec.c);
  if (!spec_file.empty()) spec = load_phantom_spec(spec_file, spec);
  spec.validate();
  print_kv("n", std::to_string(n));
  print_kv("dims", std::to_string(spec.a) + "x" + std::to_string(spec.b) + "x" +
                       std::to_string(spec.c));
  print_kv("n_targets", std::to_string(spec.n_target_vessels));
  print_kv("n_distractors", std::to_string(spec.n_distractors));
  print_kv("seed", std::to_string(seed));
  print_kv("out_dir", out_dir);
  if (n < 1) throw UsageError("--n must be >= 1");
  write_phantom_dataset(out_dir, n, spec, seed);
  std::cout << "wrote " << 2 * n << " volume files + index.txt to " << out_dir << '\n';
  return 0;
}

int cmd_project(const std::string& in, const std::string& angles_text, const std::string& mode,
                const std::string& out_dir, bool normalize) {
  const std::vector<double> angles = parse_angles(angles_text);
  if (mode != "mip" && mode != "sum") throw UsageError("--mode must be mip or sum");
  print_kv("in", in);
  print_kv("mode", mode);
  print_kv("normalize", normalize ? "1" : "0");
  print_kv("out_dir", out_dir);
  LoadedVolume lv = load_volume(in);
  std::filesystem::create_directories(out_dir);
  Tensor<float> x = to_tensor(lv.vol);
  for (double a : angles) {
    Tensor<float> img = mode == "mip" ? mip_project(x, a) : sum_project(x, a);
    const std::string path = out_dir + "/" + mode + "_" + angle_label(a) + ".pgm";
    export_image_p5(path, to_image(img), normalize);
    std::cout << "wrote " << path << '\n';
  }
  return 0;
}

TrainConfig resolve_config(const std::string& config_file, std::uint64_t seed, bool seed_set,
                           int folds_override) {
  TrainConfig cfg;
  if (!config_file.empty()) cfg = load_config_file(config_file);
  if (seed_set) cfg.seed = seed;
  if (folds_override > 0) cfg.folds = folds_override;
  cfg.validate();
  return cfg;
}

int cmd_train(const std::string& data_dir, const std::string& config_file, std::uint64_t seed,
              bool seed_set, const std::string& out_path) {
  TrainConfig cfg = resolve_config(config_file, seed, seed_set, 0);
  print_config(cfg);
  print_kv("data", data_dir);
  print_kv("out", out_path);
  Dataset<float> data = load_dataset(data_dir);
  const size_t n_val = std::max<size_t>(1, data.size() / 6);
  if (data.size() < 2) throw ConfigError("training needs at least 2 samples");
  Dataset<float> val_set(data.end() - n_val, data.end());
  Dataset<float> train_set(data.begin(), data.end() - n_val);

  Model25D<float> model = make_model25d<float>(cfg.unet(), cfg.p, cfg.m, cfg.seed);
  RunState<float> state;
  std::ofstream log(out_path + ".log");
  if (!log) throw FormatError("cannot open '" + out_path + ".log' for writing");
  TrainHooks hooks;
  hooks.log_line = [&](const std::string& line) {
    std::cout << line << '\n';
    log << line << '\n';
  };
  train(model, train_set, val_set, cfg, state, hooks);
  save_checkpoint(out_path, model, state, cfg);
  std::cout << "best_epoch=" << state.best_epoch << " best_val=" << state.best_val << '\n';
  std::cout << "wrote checkpoint " << out_path << '\n';
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& in,
                const std::string& out_prefix) {
  print_kv("checkpoint", ckpt_path);
  print_kv("in", in);
  print_kv("out", out_prefix);
  LoadedCheckpoint<float> ck = load_checkpoint<float>(ckpt_path);
  LoadedVolume lv = load_volume(in);
  Volume<float> prob = predict_volume(ck.model, lv.vol);
  Volume<float> mask = threshold_mask(prob);
  save_volume(out_prefix + ".prob.vol", prob, VolumeKind::Prob);
  save_volume(out_prefix + ".mask.vol", mask, VolumeKind::Mask);
  std::cout << "wrote " << out_prefix << ".prob.vol and " << out_prefix << ".mask.vol\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path) {
  print_kv("pred", pred_path);
  print_kv("truth", truth_path);
  LoadedVolume pred = load_volume(pred_path);
  LoadedVolume truth = load_volume(truth_path);
  if (truth.kind != VolumeKind::Mask)
    throw FormatError(truth_path + ": ground truth must be a mask volume");
  Volume<float> mask =
      pred.kind == VolumeKind::Mask ? pred.vol : threshold_mask(pred.vol);
  const MetricsReport r = evaluate(truth.vol, mask);
  std::cout << report_to_text(r);
  return 0;
}

int cmd_compare(const std::string& data_dir, const std::string& config_file, std::uint64_t seed,
                bool seed_set, int folds) {
  TrainConfig cfg = resolve_config(config_file, seed, seed_set, folds);
  print_config(cfg);
  print_kv("data", data_dir);
  Dataset<float> data = load_dataset(data_dir);
  std::cout << "model ma_mean ma_std iu_mean iu_std dc_mean dc_std\n";
  for (ModelKind kind : {ModelKind::Random25D, ModelKind::SliceBySlice}) {
    const CrossValResult r = cross_validate(data, cfg, kind);
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f %.6f %.6f %.6f", model_kind_name(kind),
                  r.mean[0], r.stddev[0], r.mean[1], r.stddev[1], r.mean[2], r.stddev[2]);
    std::cout << buf << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projection-based 2.5D volumetric segmentation"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for kernels (1 = sequential)");

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic vessel dataset");
  int ph_n = 4;
  std::string ph_dims, ph_spec, ph_out = "phantoms";
  std::uint64_t ph_seed = 0;
  phantom->add_option("--n", ph_n, "number of (scan, mask) pairs");
  phantom->add_option("--dims", ph_dims, "volume extents AxBxC");
  phantom->add_option("--spec-file", ph_spec, "phantom spec overrides (key=value lines)");
  phantom->add_option("--seed", ph_seed, "generation seed");
  phantom->add_option("--out-dir", ph_out, "output directory");

  auto* project = app.add_subcommand("project", "export projection images of a volume");
  std::string pr_in, pr_angles = "0", pr_mode = "mip", pr_out = "projections";
  bool pr_raw = false;
  project->add_option("--in", pr_in, "input volume file")->required();
  project->add_option("--angles", pr_angles, "comma-separated degrees in [0,180)");
  project->add_option("--mode", pr_mode, "mip or sum");
  project->add_option("--out-dir", pr_out, "output directory");
  project->add_flag("--raw", pr_raw, "clamp [0,1] instead of min-max normalization");

  auto* train_cmd = app.add_subcommand("train", "train the projection model");
  std::string tr_data, tr_config, tr_out = "model.ckpt";
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  train_cmd->add_option("--data", tr_data, "dataset directory (index.txt)")->required();
  train_cmd->add_option("--config", tr_config, "config file (key=value lines)");
  train_cmd->add_option("--seed", tr_seed, "seed override")->each([&](const std::string&) {
    tr_seed_set = true;
  });
  train_cmd->add_option("--out", tr_out, "checkpoint output path");

  auto* predict = app.add_subcommand("predict", "segment a volume with a trained checkpoint");
  std::string pd_ckpt, pd_in, pd_out = "prediction";
  predict->add_option("--checkpoint", pd_ckpt, "checkpoint path")->required();
  predict->add_option("--in", pd_in, "input scan volume")->required();
  predict->add_option("--out", pd_out, "output prefix (.prob.vol, .mask.vol)");

  auto* eval_cmd = app.add_subcommand("eval", "score a prediction against ground truth");
  std::string ev_pred, ev_truth;
  eval_cmd->add_option("--pred", ev_pred, "prediction volume (prob or mask)")->required();
  eval_cmd->add_option("--truth", ev_truth, "ground-truth mask volume")->required();

  auto* compare = app.add_subcommand("compare", "cross-validate both model families");
  std::string cp_data, cp_config;
  std::uint64_t cp_seed = 0;
  bool cp_seed_set = false;
  int cp_folds = 0;
  compare->add_option("--data", cp_data, "dataset directory")->required();
  compare->add_option("--config", cp_config, "config file");
  compare->add_option("--seed", cp_seed, "seed override")->each([&](const std::string&) {
    cp_seed_set = true;
  });
  compare->add_option("--folds", cp_folds, "fold count override");

  CLI11_PARSE(app, argc, argv);

  try {
    mipseg::set_num_threads(threads);
    if (phantom->parsed()) return cmd_phantom(ph_n, ph_dims, ph_spec, ph_seed, ph_out);
    if (project->parsed()) return cmd_project(pr_in, pr_angles, pr_mode, pr_out, !pr_raw);
    if (train_cmd->parsed()) return cmd_train(tr_data, tr_config, tr_seed, tr_seed_set, tr_out);
    if (predict->parsed()) return cmd_predict(pd_ckpt, pd_in, pd_out);
    if (eval_cmd->parsed()) return cmd_eval(ev_pred, ev_truth);
    if (compare->parsed()) return cmd_compare(cp_data, cp_config, cp_seed, cp_seed_set, cp_folds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
