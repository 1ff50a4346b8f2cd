// Copyright 2026 The hacnn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hacnn/checkpoint.hpp"
#include "hacnn/config.hpp"
#include "hacnn/data.hpp"
#include "hacnn/gradcheck_suites.hpp"
#include "hacnn/network.hpp"
#include "hacnn/reid_eval.hpp"
#include "hacnn/training.hpp"
#include "hacnn/visualize.hpp"

namespace hacnn {

/// Everything a command needs: model, training and generator settings plus
/// dataset source and output location. Mirrors the key=value config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::string data_dir;  // empty selects the synthetic generator
  std::string output_dir = "hacnn_out";
  std::string dtype = "f32";

  kv::Map to_kv() const {
    kv::Map m = model.to_kv();
    m.merge(train.to_kv());
    m.merge(synth.to_kv());
    m["data_dir"] = data_dir;
    m["output_dir"] = output_dir;
    m["dtype"] = dtype;
    return m;
  }

  /// Applies known keys; unknown keys are a usage error.
  void apply(const kv::Map& m) {
    const auto known = RunConfig().to_kv();
    for (const auto& [k, v] : m) {
      if (!known.count(k)) throw kv::ParseError("unknown configuration key '" + k + "'");
    }
    model.apply(m);
    train.apply(m);
    synth.apply(m);
    kv::read(m, "data_dir", data_dir);
    kv::read(m, "output_dir", output_dir);
    kv::read(m, "dtype", dtype);
    if (dtype != "f32" && dtype != "f64") throw kv::ParseError("dtype must be f32 or f64");
  }
};

namespace cli {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Config file first, then --set pairs, then dedicated flags.
struct ConfigSources {
  std::string file;
  std::vector<std::string> sets;
  kv::Map flags;

  RunConfig resolve() const {
    kv::Map m;
    if (!file.empty()) m = kv::load(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      m[kv::trim(s.substr(0, eq))] = kv::trim(s.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) m[k] = v;
    RunConfig rc;
    rc.apply(m);
    return rc;
  }
};

template <typename F>
auto with_dtype(const std::string& dtype, F&& f) {
  if (dtype == "f64") return f(double{});
  return f(float{});
}

inline Dataset load_dataset(const RunConfig& rc, std::ostream& err) {
  if (rc.data_dir.empty()) return generate_synthetic(rc.synth);
  std::vector<std::string> warnings;
  LoadOptions opt;
  opt.warnings = &warnings;
  auto ds = load_directory(rc.data_dir, opt);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return ds;
}

inline std::string dims(std::size_t h, std::size_t w, std::size_t c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

/// Layer table, component totals, attention closed forms and totals.
template <typename T>
std::string inspect_report(const Model<T>& model) {
  const auto s = summarize(model);
  const auto& cfg = model.config();
  std::ostringstream os;
  os << std::left << std::setw(44) << "layer" << std::setw(18) << "kind" << std::setw(14) << "input"
     << std::setw(14) << "output" << std::right << std::setw(10) << "params" << std::setw(16)
     << "flops" << '\n';
  for (const auto& li : s.layers) {
    os << std::left << std::setw(44) << li.name << std::setw(18) << li.kind << std::setw(14)
       << dims(li.in_h, li.in_w, li.in_c) << std::setw(14) << dims(li.out_h, li.out_w, li.out_c)
       << std::right << std::setw(10) << li.params << std::setw(16) << std::setprecision(0)
       << std::fixed << li.flops << '\n';
  }
  os << "\ncomponent totals\n";
  for (const auto& c : s.components) {
    os << "  " << std::left << std::setw(28) << c.component << std::right << " params "
       << std::setw(9) << c.params << "  flops " << std::setw(14) << std::setprecision(0) << c.flops
       << '\n';
  }
  os << "\nattention sub-modules (closed forms)\n";
  for (std::size_t l = 1; l <= cfg.levels(); ++l) {
    const auto& ha = model.attention(l);
    const std::size_t c = cfg.widths[l - 1];
    const std::string p = "  ha" + std::to_string(l);
    os << p << ".spatial params " << ha.spatial_parameter_count() << "  closed form 3*3 conv + scale = "
       << (ha.switches().spatial ? 10 : 0) << '\n';
    os << p << ".channel params " << ha.channel_parameter_count() << "  closed form 2c^2/r = "
       << (ha.switches().channel ? 2 * c * c / cfg.reduction : 0) << " (c=" << c
       << ", r=" << cfg.reduction << ")\n";
    os << p << ".fusion params " << ha.fusion_parameter_count() << "  closed form c^2 = "
       << (ha.switches().soft() ? c * c : 0) << '\n';
    os << p << ".hard params " << ha.hard_parameter_count() << "  closed form 2Tc = "
       << (ha.switches().hard ? 2 * cfg.streams * c : 0) << " (T=" << cfg.streams << ")\n";
  }
  os << "\ntotal parameters: " << s.total_params << '\n';
  os << std::setprecision(4) << std::scientific << "total FLOPs: " << s.total_flops << '\n';
  os << "depth: " << s.depth << " layers (conv/fc only: " << s.conv_fc_depth << ")\n";
  return os.str();
}

template <typename T>
std::string inspect_csv(const Model<T>& model) {
  std::ostringstream os;
  os << "name,component,kind,in_h,in_w,in_c,out_h,out_w,out_c,params,flops\n";
  os << std::setprecision(17);
  for (const auto& li : model.layers()) {
    os << li.name << ',' << li.component << ',' << li.kind << ',' << li.in_h << ',' << li.in_w
       << ',' << li.in_c << ',' << li.out_h << ',' << li.out_w << ',' << li.out_c << ','
       << li.params << ',' << li.flops << '\n';
  }
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

template <typename T>
int run_train(const RunConfig& base, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  RunConfig rc = base;
  const auto ds = load_dataset(rc, err);
  rc.model.num_classes = training_classes(ds).size();
  if (rc.model.num_classes == 0) throw std::runtime_error("dataset has no training images");
  fs::create_directories(rc.output_dir);
  const std::string dir = rc.output_dir;
  rc.train.checkpoint_path = (fs::path(dir) / "model.ckpt").string();
  rc.train.log_path = (fs::path(dir) / "train_log.csv").string();
  write_text((fs::path(dir) / "run_config.txt").string(), kv::serialize(rc.to_kv()));
  Model<T> model(rc.model);
  AdamState<T> adam;
  out << "training on " << ds.indices(Split::train).size() << " images of "
      << rc.model.num_classes << " identities (" << ds.provenance << ")\n";
  const auto res = train(model, ds, rc.train, adam, &out);
  if (res.aborted) {
    err << "training aborted: " << res.message << '\n';
    return 2;
  }
  out << "checkpoint: " << rc.train.checkpoint_path << "\nlog: " << rc.train.log_path << '\n';
  return 0;
}

template <typename T>
int run_eval(const RunConfig& rc, const std::string& checkpoint, std::size_t max_rank,
             std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  auto model = load_model<T>(checkpoint);
  const auto ds = load_dataset(rc, err);
  const auto q = extract_descriptors(model, ds, ds.indices(Split::query));
  const auto g = extract_descriptors(model, ds, ds.indices(Split::gallery));
  if (q.empty() || g.empty()) throw std::runtime_error("dataset has no query or gallery images");
  fs::create_directories(rc.output_dir);
  write_descriptors_csv((fs::path(rc.output_dir) / "query_descriptors.csv").string(), q);
  write_descriptors_csv((fs::path(rc.output_dir) / "gallery_descriptors.csv").string(), g);
  const auto rep = evaluate_descriptors(q, g, max_rank);
  if (rep.excluded_invalid) err << "warning: " << rep.excluded_invalid << " zero-norm descriptors excluded\n";
  write_text((fs::path(rc.output_dir) / "report.txt").string(), format_report(rep));
  write_text((fs::path(rc.output_dir) / "cmc.csv").string(), format_cmc_csv(rep));
  out << format_report(rep);
  return 0;
}

template <typename T>
int run_attend(const std::string& checkpoint, const std::string& image_path,
               const std::string& out_dir, std::ostream& out) {
  namespace fs = std::filesystem;
  auto model = load_model<T>(checkpoint);
  const auto& cfg = model.config();
  const Image img = resize_bilinear(read_image(image_path), cfg.input_height, cfg.input_width);
  Buffer<T> px(img.pixels.begin(), img.pixels.end());
  Tensor<T> x({1, cfg.input_height, cfg.input_width, 3}, std::move(px));
  Tape<T> tape(false);
  const auto fo = model.forward(tape, x, Mode::infer);
  fs::create_directories(out_dir);
  std::ofstream offsets((fs::path(out_dir) / "offsets.csv").string(), std::ios::trunc);
  offsets << "level,region,t_h,t_w,y0,x0,y1,x1\n" << std::setprecision(9);
  for (std::size_t l = 1; l <= cfg.levels(); ++l) {
    const auto& b = fo.attention[l - 1];
    const auto& g = fo.global_blocks[l - 1];
    const std::size_t h = g.dim(1), w = g.dim(2), c = g.dim(3);
    const std::string stem = "level" + std::to_string(l);
    if (b.spatial.defined()) {
      std::vector<double> m(b.spatial.values().begin(), b.spatial.values().end());
      write_ppm((fs::path(out_dir) / (stem + "_spatial.ppm")).string(),
                heatmap(m, h, w, cfg.input_height, cfg.input_width));
    }
    std::vector<double> full(h * w, 0.0);
    for (std::size_t i = 0; i < h * w; ++i) {
      for (std::size_t j = 0; j < c; ++j) full[i] += b.full.values()[i * c + j];
      full[i] /= static_cast<double>(c);
    }
    write_ppm((fs::path(out_dir) / (stem + "_attention.ppm")).string(),
              heatmap(full, h, w, cfg.input_height, cfg.input_width));
    Image boxes = img;
    const auto geo = cfg.geometry(l);
    for (std::size_t t = 0; t < cfg.streams; ++t) {
      const double th = b.offsets.values()[t * 2], tw = b.offsets.values()[t * 2 + 1];
      const Box box = region_box(th, tw, geo, cfg.input_height, cfg.input_width);
      draw_box(boxes, box, kRegionColors[t % kRegionColors.size()]);
      offsets << l << ',' << t + 1 << ',' << th << ',' << tw << ',' << box.y0 << ',' << box.x0
              << ',' << box.y1 << ',' << box.x1 << '\n';
    }
    write_ppm((fs::path(out_dir) / (stem + "_regions.ppm")).string(), boxes);
  }
  out << "wrote attention maps for " << cfg.levels() << " levels to " << out_dir << '\n';
  return 0;
}

inline void add_config_options(CLI::App* sub, ConfigSources& src) {
  sub->add_option("-c,--config", src.file, "key=value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--set", src.sets, "override a configuration key (key=value), repeatable");
}

/// Registers `--name` as an override of configuration key `key`.
inline void add_key_option(CLI::App* sub, ConfigSources& src, const std::string& flag,
                           const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&src, key](const std::string& v) { src.flags[key] = v; }, help);
}

inline void add_key_flag(CLI::App* sub, ConfigSources& src, const std::string& flag,
                         const std::string& key, const std::string& value, const std::string& help) {
  sub->add_flag_function(
      flag, [&src, key, value](std::int64_t) { src.flags[key] = value; }, help);
}

inline void add_data_options(CLI::App* sub, ConfigSources& src) {
  add_key_option(sub, src, "--data", "data_dir", "dataset directory (default: synthetic data)");
  add_key_option(sub, src, "-o,--out", "output_dir", "output directory");
  add_key_option(sub, src, "--ids", "synth_ids", "synthetic identities");
  add_key_option(sub, src, "--images-per-cam", "synth_images_per_id_per_cam",
                 "synthetic images per identity and camera");
  add_key_option(sub, src, "--cameras", "synth_cameras", "synthetic cameras");
  add_key_option(sub, src, "--synth-seed", "synth_seed", "synthetic data seed");
}

}  // namespace cli

/// Command-line entry point. Returns 0 on success, 1 on usage errors and 2
/// on runtime failures.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"hacnn: two-branch attention CNN for person re-identification"};
  app.name("hacnn");
  app.require_subcommand(1);

  ConfigSources src;
  std::string checkpoint, image, query_csv, gallery_csv, csv_out;
  std::size_t max_rank = 20, instances = 20;
  std::uint64_t gc_seed = 2024;
  double tolerance = 1e-4;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint, log and config");
  add_config_options(train_cmd, src);
  add_data_options(train_cmd, src);
  add_key_option(train_cmd, src, "--epochs", "epochs", "training epochs");
  add_key_option(train_cmd, src, "--batch-size", "batch_size", "mini-batch size");
  add_key_option(train_cmd, src, "--lr", "learning_rate", "ADAM learning rate");
  add_key_option(train_cmd, src, "--seed", "seed", "model initialisation seed");
  add_key_option(train_cmd, src, "--train-seed", "train_seed", "batch order seed");
  add_key_option(train_cmd, src, "--widths", "widths", "comma-separated level widths");
  add_key_option(train_cmd, src, "--dtype", "dtype", "value type: f32 or f64");
  add_key_flag(train_cmd, src, "--no-spatial", "use_spatial", "false", "disable soft spatial attention");
  add_key_flag(train_cmd, src, "--no-channel", "use_channel", "false", "disable soft channel attention");
  add_key_flag(train_cmd, src, "--no-hard", "use_hard", "false", "disable hard regional attention");
  add_key_flag(train_cmd, src, "--no-cail", "use_cail", "false", "disable cross-attention interaction");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint, or descriptor CSVs, with CMC and mAP");
  add_config_options(eval_cmd, src);
  add_data_options(eval_cmd, src);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--query-descriptors", query_csv, "query descriptor CSV (id,cam,values)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--gallery-descriptors", gallery_csv, "gallery descriptor CSV")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--max-rank", max_rank, "highest CMC rank reported")->check(CLI::PositiveNumber);

  auto* inspect_cmd = app.add_subcommand("inspect", "parameter, FLOP and depth accounting");
  add_config_options(inspect_cmd, src);
  inspect_cmd->add_option("--checkpoint", checkpoint, "read the model config from a checkpoint")
      ->check(CLI::ExistingFile);
  inspect_cmd->add_option("--csv", csv_out, "also write the per-layer table as CSV");

  auto* attend_cmd = app.add_subcommand("attend", "render attention heatmaps and hard-region boxes");
  attend_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  attend_cmd->add_option("--image", image, "input image (ppm or png)")->required()->check(CLI::ExistingFile);
  std::string attend_out = "hacnn_attend";
  attend_cmd->add_option("-o,--out", attend_out, "output directory");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset directory");
  add_config_options(synth_cmd, src);
  add_key_option(synth_cmd, src, "-o,--out", "output_dir", "output directory");
  add_key_option(synth_cmd, src, "--ids", "synth_ids", "identities");
  add_key_option(synth_cmd, src, "--images-per-cam", "synth_images_per_id_per_cam",
                 "images per identity and camera");
  add_key_option(synth_cmd, src, "--cameras", "synth_cameras", "cameras");
  add_key_option(synth_cmd, src, "--seed", "synth_seed", "generator seed");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites in double precision");
  grad_cmd->add_option("--instances", instances, "random instances per suite")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--seed", gc_seed, "suite seed");
  grad_cmd->add_option("--tolerance", tolerance, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help("", CLI::AppFormatMode::Normal);
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      out << sub->help();
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  RunConfig rc;
  try {
    rc = src.resolve();
    if (train_cmd->parsed()) {
      rc.train.validate();
      rc.model.validate();
    }
    if (synth_cmd->parsed()) rc.synth.validate();
    if (eval_cmd->parsed() && checkpoint.empty() && (query_csv.empty() || gallery_csv.empty())) {
      throw UsageError("eval needs --checkpoint or both --query-descriptors and --gallery-descriptors");
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (train_cmd->parsed()) {
      return with_dtype(rc.dtype, [&](auto t) { return run_train<decltype(t)>(rc, out, err); });
    }
    if (eval_cmd->parsed()) {
      if (!checkpoint.empty()) {
        const auto dtype = read_checkpoint_header(checkpoint).at("dtype");
        return with_dtype(dtype, [&](auto t) {
          return run_eval<decltype(t)>(rc, checkpoint, max_rank, out, err);
        });
      }
      const auto rep = evaluate_descriptors(read_descriptors_csv(query_csv),
                                            read_descriptors_csv(gallery_csv), max_rank);
      std::filesystem::create_directories(rc.output_dir);
      write_text((std::filesystem::path(rc.output_dir) / "report.txt").string(), format_report(rep));
      write_text((std::filesystem::path(rc.output_dir) / "cmc.csv").string(), format_cmc_csv(rep));
      out << format_report(rep);
      return 0;
    }
    if (inspect_cmd->parsed()) {
      ModelConfig mc = rc.model;
      if (!checkpoint.empty()) mc = checkpoint_config(read_checkpoint_header(checkpoint));
      Model<float> model(mc);
      out << inspect_report(model);
      if (!csv_out.empty()) write_text(csv_out, inspect_csv(model));
      return 0;
    }
    if (attend_cmd->parsed()) {
      const auto dtype = read_checkpoint_header(checkpoint).at("dtype");
      return with_dtype(dtype, [&](auto t) {
        return run_attend<decltype(t)>(checkpoint, image, attend_out, out);
      });
    }
    if (synth_cmd->parsed()) {
      const auto ds = generate_synthetic(rc.synth);
      write_directory(ds, rc.output_dir);
      write_text((std::filesystem::path(rc.output_dir) / "synth_config.txt").string(),
                 kv::serialize(rc.synth.to_kv()));
      out << "wrote " << ds.items.size() << " images of " << ds.num_ids << " identities to "
          << rc.output_dir << '\n';
      return 0;
    }
    if (grad_cmd->parsed()) {
      gradcheck::SuiteOptions opt;
      opt.instances = instances;
      opt.seed = gc_seed;
      bool ok = true;
      for (const auto& r : gradcheck::run_all(opt)) {
        const bool pass = r.max_rel_error <= tolerance;
        ok = ok && pass;
        out << (pass ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name
            << " instances " << r.instances << "  max rel error " << std::scientific
            << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "  checked "
            << r.checked << "  kink-skipped " << r.skipped_at_kinks << "  worst " << r.worst << '\n';
      }
      return ok ? 0 : 2;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"hacnn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace hacnn
