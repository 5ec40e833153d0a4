// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/checkpoint.hpp"
#include "cgdrcn/dataset_io.hpp"
#include "cgdrcn/densitygen.hpp"
#include "cgdrcn/image_io.hpp"
#include "cgdrcn/synthdata.hpp"

namespace fs = std::filesystem;

namespace cgdrcn {
namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "backbone",      "variant",         "class_conditioned", "confidence_at_level6", "pretrained_weights",
      "seed",          "sigma",           "sigma_mode",        "crop_size",            "resize_min",
      "resize_max",    "learning_rate",   "beta1",             "beta2",                "epsilon",
      "batch_size",    "max_steps",       "checkpoint_interval", "crops_per_image",    "auto_class_weights",
      "pixel_budget",  "tile_size",       "tile_overlap",      "lambda_c",             "lambda_w",
      "lambda_3",      "lambda_4",        "lambda_5",          "lambda_6",             "reduction"};
  return keys;
}

template <class T>
T number(const KeyValues& kv, const std::string& key, T fallback) {
  try {
    if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(kv_double(kv, key).value_or(fallback));
    } else {
      return static_cast<T>(kv_long(kv, key).value_or(static_cast<long>(fallback)));
    }
  } catch (const KeyValueError& e) {
    throw UsageError(e.what());
  }
}

bool flag(const KeyValues& kv, const std::string& key, bool fallback) {
  try {
    return kv_bool(kv, key).value_or(fallback);
  } catch (const KeyValueError& e) {
    throw UsageError(e.what());
  }
}

Split parse_split(const std::string& s) {
  const auto split = split_from_string(s);
  if (!split) throw UsageError("unknown split '" + s + "' (expected train, val or test)");
  return *split;
}

std::vector<Sample> load_samples(const fs::path& root, std::optional<Split> split) {
  std::vector<Sample> out;
  for (DatasetEntry& e : load_dataset(root, split)) {
    Sample s;
    s.annotation = std::move(e.annotation);
    s.image_path = std::move(e.image_path);
    out.push_back(std::move(s));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// Options shared by the subcommands that read settings.
struct SettingFlags {
  std::string config_path;
  std::optional<std::string> backbone;
  std::optional<std::string> variant;
  bool class_conditioned = false;
  std::optional<double> sigma;
  std::optional<double> lambda_c;
  std::optional<double> lambda_w;
  std::optional<std::uint64_t> seed;
  std::optional<long> max_steps;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;

  KeyValues overrides() const {
    KeyValues kv;
    const auto put = [&](const char* key, const auto& v) {
      if (v) {
        std::ostringstream s;
        s.precision(17);
        s << *v;
        kv[key] = s.str();
      }
    };
    put("backbone", backbone);
    put("variant", variant);
    if (class_conditioned) kv["class_conditioned"] = "1";
    put("sigma", sigma);
    put("lambda_c", lambda_c);
    put("lambda_w", lambda_w);
    put("seed", seed);
    put("max_steps", max_steps);
    put("batch_size", batch_size);
    put("learning_rate", learning_rate);
    return kv;
  }

  RunSettings resolve() const {
    KeyValues file;
    if (!config_path.empty()) {
      try {
        file = read_key_values(config_path);
      } catch (const KeyValueError& e) {
        throw UsageError(e.what());
      }
    }
    return resolve_settings(file, overrides());
  }
};

void add_setting_flags(CLI::App& cmd, SettingFlags& f, bool model_flags) {
  cmd.add_option("--config", f.config_path, "Flat key = value settings file")->check(CLI::ExistingFile);
  cmd.add_option("--sigma", f.sigma, "Gaussian kernel sigma in pixels");
  cmd.add_option("--seed", f.seed, "Random seed");
  if (!model_flags) return;
  cmd.add_option("--backbone", f.backbone, "vgg16 | resnet101 | tiny")
      ->check(CLI::IsMember({"vgg16", "resnet101", "tiny"}));
  cmd.add_option("--variant", f.variant, "base | residual | ureb | ureb-c")
      ->check(CLI::IsMember({"base", "residual", "ureb", "ureb-c"}));
  cmd.add_flag("--class-conditioned", f.class_conditioned, "Use the weather-conditioned model");
  cmd.add_option("--lambda-c", f.lambda_c, "Confidence loss weight");
  cmd.add_option("--lambda-w", f.lambda_w, "Weather loss weight");
  cmd.add_option("--max-steps", f.max_steps, "Optimizer steps");
  cmd.add_option("--batch-size", f.batch_size, "Patches per step");
  cmd.add_option("--learning-rate", f.learning_rate, "Adam step size");
}

int cmd_train(const fs::path& data, const std::optional<std::string>& checkpoint, const fs::path& out,
              const SettingFlags& flags, std::ostream& log) {
  RunSettings s = flags.resolve();
  s.train.checkpoint_path = out;
  Model model = create_model(s.model);
  if (checkpoint) import_weights(model, *checkpoint);
  const TrainResult r = train(model, load_samples(data, std::nullopt), s.train, s.loss, &log);
  log << "best step " << r.best_step << " val MAE " << r.best_val_mae << " -> " << out.string() << '\n';
  return 0;
}

int cmd_eval(const fs::path& data, Split split, const fs::path& checkpoint, const std::optional<fs::path>& out,
             const SettingFlags& flags, std::ostream& stdout_) {
  const RunSettings s = flags.resolve();
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const EvalReport report = evaluate(ck.model, load_samples(data, split), s.train);
  stdout_ << report_to_table(report);
  if (out) write_text(*out, report_to_json(report));
  return 0;
}

int cmd_stats(const fs::path& data, std::optional<Split> split, const std::optional<fs::path>& out, bool json,
              std::ostream& stdout_) {
  const DatasetStats stats = compute_stats(annotations_of(load_dataset(data, split)));
  stdout_ << (json ? stats_to_json(stats) : stats_to_table(stats));
  if (out) write_text(*out, stats_to_json(stats));
  return 0;
}

int cmd_render(const fs::path& data, Split split, const std::string& id, int level, const fs::path& out,
               bool image, const SettingFlags& flags, std::ostream& stdout_) {
  if (level != 1 && (level < 3 || level > 6)) throw UsageError("--level must be 1 (full resolution) or 3..6");
  const RunSettings s = flags.resolve();
  for (const DatasetEntry& e : load_dataset(data, split)) {
    if (e.annotation.id != id) continue;
    const DensityMap map = generate_density_map(e.annotation.heads, e.annotation.width, e.annotation.height,
                                                s.train.density, level_scale(level));
    fs::path bin = out;
    bin += ".bin";
    if (bin.has_parent_path()) fs::create_directories(bin.parent_path());
    std::ofstream f(bin, std::ios::binary);
    write_density_binary(f, map);
    if (!f) throw std::runtime_error("cannot write " + bin.string());
    stdout_ << "wrote " << bin.string() << " (" << map.values.rows() << "x" << map.values.cols()
            << ", mass " << map.values.sum() << ")\n";
    if (image) {
      fs::path png = out;
      png += ".png";
      write_density_image(png.string(), map);
      stdout_ << "wrote " << png.string() << '\n';
    }
    return 0;
  }
  throw std::runtime_error("no image '" + id + "' in split " + std::string(to_string(split)) + " of " + data.string());
}

int cmd_synth(const fs::path& out, const std::string& preset, int count, int min_heads, int max_heads, int size,
              std::uint64_t seed, std::ostream& stdout_) {
  const std::vector<SceneSpec> specs =
      preset == "fixture" ? fixture_specs() : random_specs(count, min_heads, max_heads, size, seed);
  std::vector<AnnotatedImage> annotations;
  std::vector<Tensor> images;
  for (const SceneSpec& spec : specs) {
    Scene scene = generate_scene(spec);
    annotations.push_back(std::move(scene.annotation));
    images.push_back(std::move(scene.image));
  }
  write_dataset(out, annotations, images);
  stdout_ << "wrote " << specs.size() << " scenes to " << out.string() << '\n';
  return 0;
}

}  // namespace

RunSettings resolve_settings(const KeyValues& config_file, const KeyValues& overrides) {
  KeyValues kv = config_file;
  for (const auto& [k, v] : overrides) kv[k] = v;
  for (const auto& [k, v] : kv) {
    if (!known_keys().count(k)) throw UsageError("unknown setting '" + k + "'");
  }

  RunSettings s;
  if (const auto it = kv.find("backbone"); it != kv.end()) {
    const auto kind = backbone_from_string(it->second);
    if (!kind) throw UsageError("unknown backbone '" + it->second + "'");
    s.model.backbone.kind = *kind;
  }
  if (const auto it = kv.find("variant"); it != kv.end()) {
    const auto variant = variant_from_string(it->second);
    if (!variant) throw UsageError("unknown variant '" + it->second + "'");
    s.model.variant = *variant;
  }
  if (flag(kv, "class_conditioned", false)) s.model.variant = Variant::ureb_c;
  s.model.confidence_at_level6 = flag(kv, "confidence_at_level6", false);
  if (const auto it = kv.find("pretrained_weights"); it != kv.end()) s.model.backbone.pretrained_weights = it->second;
  s.model.seed = number<std::uint64_t>(kv, "seed", 0);

  TrainConfig& t = s.train;
  t.seed = s.model.seed;
  t.density.sigma = number(kv, "sigma", t.density.sigma);
  if (const auto it = kv.find("sigma_mode"); it != kv.end()) {
    if (it->second == "fixed") {
      t.density.mode = SigmaMode::fixed;
    } else if (it->second == "adaptive") {
      t.density.mode = SigmaMode::adaptive;
    } else {
      throw UsageError("sigma_mode must be fixed or adaptive");
    }
  }
  t.crop_size = number(kv, "crop_size", t.crop_size);
  t.resize_min = number(kv, "resize_min", t.resize_min);
  t.resize_max = number(kv, "resize_max", t.resize_max);
  t.learning_rate = number(kv, "learning_rate", t.learning_rate);
  t.beta1 = number(kv, "beta1", t.beta1);
  t.beta2 = number(kv, "beta2", t.beta2);
  t.epsilon = number(kv, "epsilon", t.epsilon);
  t.batch_size = number(kv, "batch_size", t.batch_size);
  t.max_steps = number(kv, "max_steps", t.max_steps);
  t.checkpoint_interval = number(kv, "checkpoint_interval", t.checkpoint_interval);
  t.crops_per_image = number(kv, "crops_per_image", t.crops_per_image);
  t.auto_class_weights = flag(kv, "auto_class_weights", t.auto_class_weights);
  t.pixel_budget = number(kv, "pixel_budget", t.pixel_budget);
  t.tile_size = number(kv, "tile_size", t.tile_size);
  t.tile_overlap = number(kv, "tile_overlap", t.tile_overlap);
  try {
    validate(t);
  } catch (const TrainError& e) {
    throw UsageError(e.what());
  }

  LossConfig& l = s.loss;
  l = default_loss_config(s.model.backbone.kind);
  l.lambda_c = number(kv, "lambda_c", l.lambda_c);
  l.lambda_w = number(kv, "lambda_w", l.lambda_w);
  for (int level = 3; level <= 6; ++level) {
    l.level_weights[level] = number(kv, "lambda_" + std::to_string(level), l.level_weights[level]);
  }
  if (const auto it = kv.find("reduction"); it != kv.end()) {
    if (it->second == "norm") {
      l.reduction = Reduction::norm;
    } else if (it->second == "mean_square") {
      l.reduction = Reduction::mean_square;
    } else {
      throw UsageError("reduction must be norm or mean_square");
    }
  }
  return s;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weather-aware crowd counting: training, evaluation and dataset tools", "cgdrcn"};
  app.require_subcommand(1, 1);

  std::string data;
  std::string split_name;
  std::optional<std::string> checkpoint;
  std::optional<std::string> out_path;
  SettingFlags settings;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write the best checkpoint");
  train_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--checkpoint", checkpoint, "Warm-start weights");
  std::string train_out = "checkpoint.bin";
  train_cmd->add_option("--out", train_out, "Checkpoint path")->capture_default_str();
  add_setting_flags(*train_cmd, settings, true);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  std::string eval_split = "test";
  eval_cmd->add_option("--split", eval_split, "train | val | test")->capture_default_str();
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint archive")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", out_path, "JSON report path");
  add_setting_flags(*eval_cmd, settings, false);

  CLI::App* stats_cmd = app.add_subcommand("stats", "Dataset statistics");
  stats_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  stats_cmd->add_option("--split", split_name, "Restrict to one split");
  stats_cmd->add_option("--out", out_path, "JSON output path");
  bool json = false;
  stats_cmd->add_flag("--json", json, "Print JSON instead of the table");

  CLI::App* render_cmd = app.add_subcommand("render-density", "Write the density map of one image");
  render_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  std::string render_split = "train";
  render_cmd->add_option("--split", render_split, "Split holding the image")->capture_default_str();
  std::string id;
  render_cmd->add_option("--id", id, "Image id")->required();
  int level = 1;
  render_cmd->add_option("--level", level, "Pyramid level (scale 2^(level-1))")->capture_default_str();
  std::string render_out;
  render_cmd->add_option("--out", render_out, "Output prefix (.bin, .png)")->required();
  bool render_image = false;
  render_cmd->add_flag("--image", render_image, "Also write a colorized PNG");
  add_setting_flags(*render_cmd, settings, false);

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "Dataset root to create")->required();
  std::string preset = "random";
  synth_cmd->add_option("--preset", preset, "random | fixture")->check(CLI::IsMember({"random", "fixture"}));
  int count = 10;
  int min_heads = 0;
  int max_heads = 100;
  int size = 128;
  std::uint64_t seed = 0;
  synth_cmd->add_option("--count", count, "Number of scenes")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--min-heads", min_heads, "Fewest heads per scene")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--max-heads", max_heads, "Most heads per scene")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--size", size, "Scene side length in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    if (e.get_name() != "CallForHelp") err << app.help();
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(data, checkpoint, train_out, settings, out);
    if (*eval_cmd) {
      return cmd_eval(data, parse_split(eval_split), *checkpoint,
                      out_path ? std::optional<fs::path>(*out_path) : std::nullopt, settings, out);
    }
    if (*stats_cmd) {
      const std::optional<Split> split = split_name.empty() ? std::nullopt : std::optional(parse_split(split_name));
      return cmd_stats(data, split, out_path ? std::optional<fs::path>(*out_path) : std::nullopt, json, out);
    }
    if (*render_cmd) {
      return cmd_render(data, parse_split(render_split), id, level, render_out, render_image, settings, out);
    }
    return cmd_synth(synth_out, preset, count, min_heads, max_heads, size, seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cgdrcn
