// mednca: dataset generation, training, inference, evaluation, perturbation
// sweeps and memory benchmarking for the two-stage NCA segmenter.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mednca/checkpoint.hpp"
#include "mednca/losses.hpp"
#include "mednca/parallel.hpp"
#include "mednca/perturb.hpp"
#include "mednca/pgm.hpp"
#include "mednca/pipeline.hpp"
#include "mednca/synth.hpp"
#include "mednca/trainer.hpp"

namespace fs = std::filesystem;
using namespace mednca;

namespace {

struct ModelFlags {
  i64 n = 32;
  i64 hidden = 128;
  i64 steps = 32;
  double fire_rate = 0.5;
  i64 scale_factor = 4;

  NcaConfig config() const {
    NcaConfig cfg;
    cfg.n = n;
    cfg.h = hidden;
    cfg.steps = steps;
    cfg.fire_rate = fire_rate;
    cfg.validate();
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  cmd->add_option("--channels", m.n, "state channels per cell");
  cmd->add_option("--hidden", m.hidden, "hidden units of the update MLP");
  cmd->add_option("--steps", m.steps, "rollout steps per stage");
  cmd->add_option("--fire-rate", m.fire_rate, "per-cell update probability");
  cmd->add_option("--scale-factor", m.scale_factor, "stage-1 downscale factor");
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

struct SplitData {
  std::vector<TrainSample<float>> samples;
  std::vector<std::string> names;
};

SplitData load_named_split(const std::string& dir, const std::string& split) {
  DatasetManifest m = read_manifest(dir + "/manifest.tsv");
  SplitData out;
  for (const auto& e : m.split(split)) {
    TrainSample<float> s;
    s.image = read_pgm_image<float>(dir + "/" + e.image_path);
    s.mask = read_pgm_mask<float>(dir + "/" + e.mask_path);
    require(s.image.same_shape(s.mask), "dataset: image/mask shape mismatch");
    out.samples.push_back(std::move(s));
    out.names.push_back(e.image_path);
  }
  if (out.samples.empty())
    throw std::runtime_error("split '" + split + "' is empty in " + dir + "/manifest.tsv");
  return out;
}

std::vector<double> eval_split(const MedNcaModel<float>& model, const SplitData& data,
                               std::uint64_t seed) {
  std::vector<double> scores(data.samples.size());
  parallel_for(data.samples.size(), [&](std::size_t i) {
    InferResult<float> r = infer(model, data.samples[i].image, mix64(seed, i));
    scores[i] = dice_score(r.mask, data.samples[i].mask);
  });
  return scores;
}

void write_or_print(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    write_text_file(out_path, content);
  }
}

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed, i64 count, i64 size) {
  SynthSpec spec;
  spec.seed = seed;
  spec.count = count;
  spec.height = size;
  spec.width = size;
  if (count > 0) spec.validate();
  DatasetManifest m = generate_dataset(spec, out_dir);
  std::cout << "wrote " << m.entries.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, const ModelFlags& mf,
              TrainConfig tc, std::uint64_t model_seed, bool quiet) {
  SplitData train = load_named_split(data_dir, "train");
  SplitData val = load_named_split(data_dir, "val");

  MedNcaModel<float> model = make_model<float>(mf.config(), mf.scale_factor, model_seed);
  fs::create_directories(out_dir);
  auto progress = [&](const std::string& line) {
    if (!quiet) std::cout << line << "\n" << std::flush;
  };
  FitResult<float> r = fit(model, train.samples, val.samples, tc, progress);

  save_checkpoint(out_dir + "/model.ckpt", r.best_model);
  write_text_file(out_dir + "/history.csv", r.history.to_csv());
  std::cout << "best val dice " << fmt(r.best_val_dice) << " at epoch " << r.best_epoch
            << "; checkpoint " << out_dir << "/model.ckpt\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path,
              const std::string& out_mask, const std::string& out_prob, double threshold,
              std::uint64_t seed, double fire_rate_override) {
  MedNcaModel<float> model = load_checkpoint(ckpt);
  Tensor<float> image = read_pgm_image<float>(image_path);
  InferResult<float> r = infer(model, image, seed, threshold, fire_rate_override);
  write_pgm_mask(out_mask, r.mask);
  if (!out_prob.empty()) write_pgm_image(out_prob, r.prob);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split,
             const std::string& out_path, std::uint64_t seed) {
  MedNcaModel<float> model = load_checkpoint(ckpt);
  SplitData data = load_named_split(data_dir, split);
  EvalReport report = EvalReport::from_scores(eval_split(model, data, seed));

  std::ostringstream csv;
  csv << "# mean_dice=" << fmt(report.mean) << " std_dice=" << fmt(report.std_dev)
      << " n=" << report.n_images() << "\n";
  csv << "image,dice\n";
  for (std::size_t i = 0; i < data.names.size(); ++i)
    csv << data.names[i] << "," << fmt(report.per_image_dice[i]) << "\n";
  write_or_print(out_path, csv.str());
  std::cerr << "mean dice " << fmt(report.mean) << " +- " << fmt(report.std_dev) << " over "
            << report.n_images() << " images\n";
  return 0;
}

int cmd_sweep(const std::string& ckpt, const std::string& data_dir, const std::string& split,
              const std::string& kind_name, std::vector<double> severities,
              const std::string& axis_name, i64 num_ghosts, const std::string& out_path,
              std::uint64_t seed) {
  MedNcaModel<float> model = load_checkpoint(ckpt);
  SplitData data = load_named_split(data_dir, split);
  const PerturbKind kind = perturb_kind_from_name(kind_name);
  const Axis axis = axis_name == "horizontal" ? Axis::kHorizontal : Axis::kVertical;
  if (axis_name != "horizontal" && axis_name != "vertical")
    throw std::runtime_error("axis must be 'horizontal' or 'vertical'");
  if (severities.empty()) severities = default_severity_grid(kind);

  std::ostringstream csv;
  csv << "kind,severity,image,dice,mean_dice,std_dice\n";
  for (std::size_t si = 0; si < severities.size(); ++si) {
    PerturbSpec spec;
    spec.kind = kind;
    spec.severity = severities[si];
    spec.axis = axis;
    spec.num_ghosts = num_ghosts;
    spec.seed = mix64(seed, 0xb1a5ULL, si);

    std::vector<double> scores(data.samples.size());
    parallel_for(data.samples.size(), [&](std::size_t i) {
      TrainSample<float> p = apply_perturbation(data.samples[i], spec);
      InferResult<float> r = infer(model, p.image, mix64(seed, i));
      scores[i] = dice_score(r.mask, p.mask);
    });
    EvalReport rep = EvalReport::from_scores(scores);
    for (std::size_t i = 0; i < data.names.size(); ++i)
      csv << kind_name << "," << severities[si] << "," << data.names[i] << ","
          << fmt(rep.per_image_dice[i]) << "," << fmt(rep.mean) << "," << fmt(rep.std_dev)
          << "\n";
    std::cerr << kind_name << " severity " << severities[si] << ": mean dice "
              << fmt(rep.mean) << "\n";
  }
  write_or_print(out_path, csv.str());
  return 0;
}

int cmd_bench(const std::string& ckpt, std::vector<i64> sizes, const ModelFlags& mf,
              const std::string& out_path) {
  MedNcaModel<float> model =
      ckpt.empty() ? make_model<float>(mf.config(), mf.scale_factor, 0) : load_checkpoint(ckpt);
  if (sizes.empty()) sizes = {64, 128, 256};

  std::ostringstream csv;
  csv << "size,param_count,infer_peak_s8,infer_peak_s64,train_saved,naive_saved,ratio,"
         "wall_ms\n";
  for (i64 size : sizes) {
    require(size % model.scale_factor == 0, "bench: size must be divisible by the scale factor");
    Tensor<float> image({1, size, size}, 0.5f);

    auto infer_peak = [&](i64 steps) {
      MedNcaModel<float> m = model;
      m.config.steps = steps;
      AllocAccountant acc;
      ScopedAccountant scope(acc);
      infer(m, image, 1);
      return acc.peak;
    };
    const std::size_t peak8 = infer_peak(8);
    const std::size_t peak64 = infer_peak(64);

    const std::size_t train_saved = mednca_train_saved_scalars(model, size, size);
    const std::size_t naive_saved = naive_train_saved_scalars(
        model.config.n, model.config.h, 2 * model.config.steps, size, size);

    const auto t0 = std::chrono::steady_clock::now();
    infer(model, image, 2);
    const auto t1 = std::chrono::steady_clock::now();
    const double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    csv << size << "," << 2 * param_count(model.config.n, model.config.h) << "," << peak8
        << "," << peak64 << "," << train_saved << "," << naive_saved << ","
        << fmt(static_cast<double>(naive_saved) / static_cast<double>(train_saved)) << ","
        << fmt(wall_ms) << "\n";
  }
  write_or_print(out_path, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage neural cellular automata segmentation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  i64 gen_count = 250, gen_size = 128;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--count", gen_count, "number of samples");
  gen->add_option("--size", gen_size, "square image side");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_data, train_out;
  ModelFlags train_mf;
  TrainConfig tc;
  std::uint64_t train_model_seed = 0;
  bool train_quiet = false;
  train->set_config("--config", "", "line-oriented key=value file; flags override it");
  train->allow_config_extras(CLI::config_extras_mode::error);
  train->add_option("--data", train_data, "dataset directory (with manifest.tsv)")->required();
  train->add_option("--out", train_out, "output directory")->required();
  add_model_flags(train, train_mf);
  train->add_option("--lr", tc.lr, "learning rate");
  train->add_option("--epochs", tc.epochs, "training epochs");
  train->add_option("--batch-size", tc.batch_size, "mini-batch size");
  train->add_option("--seed", tc.seed, "training seed (shuffle, masks, patches)");
  train->add_option("--patience", tc.patience, "early-stop patience in epochs");
  train->add_option("--clip-norm", tc.clip_norm, "global gradient-norm cap; <= 0 disables");
  train->add_option("--model-seed", train_model_seed, "parameter init seed");
  train->add_flag("--quiet", train_quiet, "suppress per-epoch progress");

  // infer
  auto* inf = app.add_subcommand("infer", "segment one image");
  std::string inf_ckpt, inf_image, inf_mask, inf_prob;
  double inf_threshold = 0.5, inf_fire_rate = -1.0;
  std::uint64_t inf_seed = 0;
  inf->add_option("--ckpt", inf_ckpt, "checkpoint path")->required();
  inf->add_option("--image", inf_image, "input PGM image")->required();
  inf->add_option("--out-mask", inf_mask, "output mask PGM")->required();
  inf->add_option("--out-prob", inf_prob, "optional probability PGM");
  inf->add_option("--threshold", inf_threshold, "foreground threshold (strict >)");
  inf->add_option("--seed", inf_seed, "fire-mask seed");
  inf->add_option("--fire-rate", inf_fire_rate, "override the stored fire rate");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  std::uint64_t ev_seed = 0;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "split name (train/val/test)");
  ev->add_option("--out", ev_out, "output CSV path (default stdout)");
  ev->add_option("--seed", ev_seed, "fire-mask seed");

  // sweep
  auto* sw = app.add_subcommand("sweep", "perturbation robustness sweep");
  std::string sw_ckpt, sw_data, sw_split = "test", sw_kind, sw_axis = "vertical", sw_out;
  std::vector<double> sw_sev;
  i64 sw_ghosts = 4;
  std::uint64_t sw_seed = 0;
  sw->add_option("--ckpt", sw_ckpt, "checkpoint path")->required();
  sw->add_option("--data", sw_data, "dataset directory")->required();
  sw->add_option("--split", sw_split, "split name");
  sw->add_option("--kind", sw_kind,
                 "scale|shape|translate|ghosting|anisotropy|bias_field")->required();
  sw->add_option("--severity-grid", sw_sev, "severity values (default per kind)");
  sw->add_option("--axis", sw_axis, "horizontal|vertical");
  sw->add_option("--num-ghosts", sw_ghosts, "ghosting frequency stride");
  sw->add_option("--out", sw_out, "output CSV path (default stdout)");
  sw->add_option("--seed", sw_seed, "fire-mask and perturbation seed");

  // bench
  auto* be = app.add_subcommand("bench", "memory and timing report");
  std::string be_ckpt, be_out;
  std::vector<i64> be_sizes;
  ModelFlags be_mf;
  be->add_option("--ckpt", be_ckpt, "checkpoint path (default: fresh default model)");
  be->add_option("--size-grid", be_sizes, "square image sizes (default 64 128 256)");
  add_model_flags(be, be_mf);
  be->add_option("--out", be_out, "output CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_seed, gen_count, gen_size);
    if (train->parsed())
      return cmd_train(train_data, train_out, train_mf, tc, train_model_seed, train_quiet);
    if (inf->parsed())
      return cmd_infer(inf_ckpt, inf_image, inf_mask, inf_prob, inf_threshold, inf_seed,
                       inf_fire_rate);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out, ev_seed);
    if (sw->parsed())
      return cmd_sweep(sw_ckpt, sw_data, sw_split, sw_kind, sw_sev, sw_axis, sw_ghosts,
                       sw_out, sw_seed);
    if (be->parsed()) return cmd_bench(be_ckpt, be_sizes, be_mf, be_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
