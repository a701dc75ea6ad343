#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>

#include "nimaenh/can.hpp"
#include "nimaenh/checkpoint.hpp"
#include "nimaenh/config.hpp"
#include "nimaenh/csv.hpp"
#include "nimaenh/dataset.hpp"
#include "nimaenh/error.hpp"
#include "nimaenh/image.hpp"
#include "nimaenh/quality.hpp"
#include "nimaenh/synth.hpp"
#include "nimaenh/training.hpp"

#ifndef NIMAENH_VERSION
#define NIMAENH_VERSION "unknown"
#endif

namespace nimaenh::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kManifestFile = "run_manifest.json";

fs::path output_dir(const std::string& flag, const std::string& command) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv(kOutDirEnv); root && *root) return fs::path(root) / command;
  throw InvalidArgument("--out is required when " + std::string(kOutDirEnv) + " is unset");
}

void make_dirs(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string num(double v) { return config::format_double(v); }

std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

// Written before any result so every output directory records how it was made.
void write_run_manifest(const fs::path& dir, const std::string& command,
                        const config::RunConfig& rc, std::uint64_t seed, const json& inputs,
                        const json& outputs) {
  json m;
  m["command"] = command;
  m["version"] = NIMAENH_VERSION;
  m["seed"] = seed;
  m["config"] = config::to_key_values(rc);
  m["config_hash"] = config::config_hash(rc);
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  write_text(dir / kManifestFile, m.dump(2) + "\n");
}

config::RunConfig load_config(const std::string& path, train::TrainConfig train_defaults) {
  config::RunConfig base;
  base.train = train_defaults;
  if (path.empty()) return config::apply(base, {});
  return config::apply(base, config::load(path));
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  std::size_t h = 0, w = 0;
  auto parse = [&](std::string_view s, std::size_t& v) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc{} && ptr == s.data() + s.size() && v > 0;
  };
  const std::string_view s(text);
  if (x == std::string::npos || !parse(s.substr(0, x), h) || !parse(s.substr(x + 1), w)) {
    throw InvalidArgument("--size must look like HxW with positive integers, got '" + text + "'");
  }
  return {h, w};
}

// Files given directly, plus every .ppm/.png inside given directories; sorted
// by path so output order never depends on the file system.
std::vector<fs::path> collect_images(const std::vector<std::string>& args) {
  std::vector<fs::path> paths;
  for (const auto& arg : args) {
    const fs::path p(arg);
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
      for (const auto& entry : fs::directory_iterator(p)) {
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (entry.is_regular_file() && (ext == ".ppm" || ext == ".png")) paths.push_back(entry.path());
      }
    } else if (fs::exists(p, ec)) {
      paths.push_back(p);
    } else {
      throw IoError("image not found: " + arg);
    }
  }
  std::sort(paths.begin(), paths.end());
  paths.erase(std::unique(paths.begin(), paths.end()), paths.end());
  if (paths.empty()) throw InvalidArgument("no images found");
  return paths;
}

std::vector<Tensor> read_images(const std::vector<fs::path>& paths) {
  std::vector<Tensor> images;
  images.reserve(paths.size());
  for (const auto& p : paths) images.push_back(image::read_image(p));
  return images;
}

std::vector<quality::RatingDistribution> predict_all(const quality::NimaModel& model,
                                                     const std::vector<Tensor>& images) {
  for (const auto& img : images) quality::check_image(model.config, img);
  std::vector<quality::RatingDistribution> out(images.size(), quality::RatingDistribution::uniform());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = quality::predict(model, images[i]);
  return out;
}

std::vector<Tensor> enhance_all(const can::CanModel& model, const std::vector<Tensor>& images) {
  for (const auto& img : images) can::check_image(model.config, img);
  std::vector<Tensor> out(images.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i] = image::clamp01(can::can_forward(model, images[i]));
  }
  return out;
}

csv::Row distribution_header(std::string first, std::string second, std::size_t buckets) {
  csv::Row header{std::move(first), std::move(second)};
  for (std::size_t k = 1; k <= buckets; ++k) header.push_back("p" + std::to_string(k));
  return header;
}

std::string predictor_report_csv(const std::vector<quality::RatingDistribution>& predicted,
                                 const std::vector<quality::RatingDistribution>& truth) {
  const auto report = quality::eval_metrics(predicted, truth);
  csv::Table table({"count", "two_class_accuracy", "lcc", "srcc", "mean_emd"});
  table.add({std::to_string(truth.size()), num(report.two_class_accuracy), num(report.lcc),
             num(report.srcc), num(report.mean_emd)});
  return table.str();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string size;
  std::string op = "tone";
  std::string config;
  std::string out;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  const auto rc = load_config(a.config, train::TrainConfig::can_defaults());
  const auto [h, w] = parse_size(a.size);
  const std::size_t min_extent = std::max(can::minimum_extent(rc.can), rc.nima.min_extent);
  if (h < min_extent || w < min_extent) {
    throw InvalidArgument("--size " + a.size + " is below the minimum image size " +
                          std::to_string(min_extent) + "x" + std::to_string(min_extent) +
                          " for a depth-" + std::to_string(rc.can.depth) + " CAN");
  }
  const auto choice = synth::parse_operator_choice(a.op);
  const fs::path dir = output_dir(a.out, "gen-data");
  make_dirs(dir);
  write_run_manifest(dir, "gen-data", rc, a.seed,
                     {{"count", a.count}, {"size", a.size}, {"operator", a.op}},
                     {{"manifest", (dir / dataset::kManifestName).string()},
                      {"images", (dir / "images").string()}});
  const auto data = synth::make_datasets(a.seed, a.count, h, w, choice, min_extent);
  const std::size_t rows = dataset::write_dataset(dir, data);
  out << "wrote " << rows << " images (" << data.rated_train.size() << "/" << data.rated_test.size()
      << " rated, " << data.pairs_train.size() << "/" << data.pairs_test.size() << " pairs) to "
      << dir.string() << "\n";
  return kExitOk;
}

struct TrainNimaArgs {
  std::string data, config, out;
  std::optional<std::uint64_t> seed;
};

int train_nima(const TrainNimaArgs& a, std::ostream& out) {
  auto rc = load_config(a.config, train::TrainConfig::nima_defaults());
  if (a.seed) rc.train.seed = *a.seed;
  const fs::path dir = output_dir(a.out, "train-nima");
  make_dirs(dir);
  write_run_manifest(dir, "train-nima", rc, rc.train.seed, {{"data", a.data}},
                     {{"checkpoint", (dir / "nima.ckpt").string()},
                      {"history", (dir / "history.csv").string()},
                      {"eval", (dir / "eval.csv").string()}});
  const auto data = dataset::read_dataset(a.data);
  if (data.rated_train.empty()) throw InvalidArgument(a.data + " has no rated training images");

  std::vector<train::RatedExample> examples;
  for (const auto& r : data.rated_train) examples.push_back({r.image, r.rating});
  auto result = train::train_nima(examples, rc.train, rc.nima);
  result.model.frozen = true;
  checkpoint::save(dir / "nima.ckpt", checkpoint::from_model(result.model, result.steps));

  csv::Table history({"epoch", "loss"});
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    history.add({std::to_string(e + 1), num(result.epoch_loss[e])});
  }
  write_text(dir / "history.csv", history.str());

  std::vector<Tensor> test_images;
  std::vector<quality::RatingDistribution> truth;
  for (const auto& r : data.rated_test) {
    test_images.push_back(r.image);
    truth.push_back(r.rating);
  }
  if (!test_images.empty()) {
    write_text(dir / "eval.csv", predictor_report_csv(predict_all(result.model, test_images), truth));
  }
  out << "trained predictor for " << result.steps << " steps; final epoch loss "
      << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << "\n";
  return kExitOk;
}

struct TrainCanArgs {
  std::string data, nima, config, out;
  std::optional<double> gamma;
  std::optional<std::uint64_t> seed;
};

int train_can(const TrainCanArgs& a, std::ostream& out) {
  auto rc = load_config(a.config, train::TrainConfig::can_defaults());
  if (a.gamma) rc.train.gamma = *a.gamma;
  if (a.seed) rc.train.seed = *a.seed;
  rc.train.validate();
  const auto nima = checkpoint::to_nima(checkpoint::load(a.nima));
  rc.nima = nima.config;
  const fs::path dir = output_dir(a.out, "train-can");
  make_dirs(dir);
  write_run_manifest(dir, "train-can", rc, rc.train.seed,
                     {{"data", a.data},
                      {"nima", a.nima},
                      {"nima_parameter_hash", checkpoint::parameter_hash(nima.params)}},
                     {{"checkpoint", (dir / "can.ckpt").string()},
                      {"history", (dir / "history.csv").string()}});
  const auto data = dataset::read_dataset(a.data);
  if (data.pairs_train.empty()) throw InvalidArgument(a.data + " has no training pairs");

  std::vector<train::ImagePair> pairs;
  for (const auto& p : data.pairs_train) pairs.push_back({p.input, p.reference});
  const std::size_t report_every = std::max<std::size_t>(1, rc.train.step_budget / 10);
  const auto result = train::train_can(pairs, nima, rc.train, rc.can, [&](const train::CanStepRecord& r) {
    if (r.step % report_every == 0) out << "step " << r.step << " loss " << r.total << "\n" << std::flush;
    return true;
  });
  checkpoint::save(dir / "can.ckpt", checkpoint::from_model(result.model, result.history.size()));

  csv::Table history({"step", "fidelity", "gamma_q", "total"});
  for (const auto& r : result.history) {
    history.add({std::to_string(r.step), num(r.fidelity), num(r.gamma_q), num(r.total)});
  }
  write_text(dir / "history.csv", history.str());
  out << "trained CAN for " << result.history.size() << " steps\n";
  return kExitOk;
}

struct ScoreArgs {
  std::string nima, out;
  std::vector<std::string> images;
};

int score(const ScoreArgs& a, std::ostream& out) {
  const auto nima = checkpoint::to_nima(checkpoint::load(a.nima));
  const fs::path csv_path = a.out.empty() ? output_dir("", "score") / "scores.csv" : fs::path(a.out);
  const fs::path dir = csv_path.parent_path();
  make_dirs(dir);
  config::RunConfig rc;
  rc.nima = nima.config;
  write_run_manifest(dir.empty() ? "." : dir, "score", rc, 0, {{"nima", a.nima}, {"images", a.images}},
                     {{"scores", csv_path.string()}});
  const auto paths = collect_images(a.images);
  const auto predicted = predict_all(nima, read_images(paths));

  csv::Table table(distribution_header("path", "nima_score", nima.config.buckets));
  for (std::size_t i = 0; i < paths.size(); ++i) {
    csv::Row row{paths[i].string(), num(quality::nima_score(predicted[i]))};
    for (double p : predicted[i].probs()) row.push_back(num(p));
    table.add(std::move(row));
  }
  write_text(csv_path, table.str());
  out << "scored " << paths.size() << " images into " << csv_path.string() << "\n";
  return kExitOk;
}

struct EnhanceArgs {
  std::string can, out;
  std::vector<std::string> images;
};

int enhance(const EnhanceArgs& a, std::ostream& out) {
  const auto model = checkpoint::to_can(checkpoint::load(a.can));
  const fs::path dir = output_dir(a.out, "enhance");
  const auto paths = collect_images(a.images);
  std::vector<fs::path> targets;
  for (const auto& p : paths) targets.push_back(dir / p.filename());
  for (std::size_t i = 1; i < targets.size(); ++i) {
    if (std::count(targets.begin(), targets.end(), targets[i]) > 1) {
      throw InvalidArgument("two inputs share the output name " + targets[i].filename().string());
    }
  }
  const auto images = read_images(paths);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    try {
      can::check_image(model.config, images[i]);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(paths[i].string() + ": " + e.what());
    }
  }
  make_dirs(dir);
  config::RunConfig rc;
  rc.can = model.config;
  json outputs = json::array();
  for (const auto& t : targets) outputs.push_back(t.string());
  write_run_manifest(dir, "enhance", rc, 0, {{"can", a.can}, {"images", a.images}},
                     {{"images", outputs}});
  const auto enhanced = enhance_all(model, images);
  for (std::size_t i = 0; i < paths.size(); ++i) image::write_image(targets[i], enhanced[i]);
  out << "enhanced " << paths.size() << " images into " << dir.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string nima, can, can_baseline, data, out;
};

int eval(const EvalArgs& a, std::ostream& out) {
  const auto nima = checkpoint::to_nima(checkpoint::load(a.nima));
  const auto can_model = checkpoint::to_can(checkpoint::load(a.can));
  const auto baseline = checkpoint::to_can(checkpoint::load(a.can_baseline));
  const fs::path dir = output_dir(a.out, "eval");
  make_dirs(dir);
  config::RunConfig rc;
  rc.nima = nima.config;
  rc.can = can_model.config;
  write_run_manifest(dir, "eval", rc, 0,
                     {{"nima", a.nima}, {"can", a.can}, {"can_baseline", a.can_baseline}, {"data", a.data}},
                     {{"methods", (dir / "eval_methods.csv").string()},
                      {"scores", (dir / "eval_scores.csv").string()},
                      {"predictor", (dir / "eval_predictor.csv").string()}});
  const auto data = dataset::read_dataset(a.data);
  if (data.pairs_test.empty()) throw InvalidArgument(a.data + " has no test pairs");

  std::vector<Tensor> inputs, references;
  for (const auto& p : data.pairs_test) {
    inputs.push_back(p.input);
    references.push_back(p.reference);
  }
  const std::vector<std::pair<std::string, std::vector<Tensor>>> methods{
      {"input", inputs},
      {"reference", references},
      {"can_l2", enhance_all(baseline, inputs)},
      {"can_l2_nima", enhance_all(can_model, inputs)},
  };

  csv::Table summary({"method", "count", "mean_score", "std_score", "mean_psnr"});
  csv::Table per_image({"method", "pair", "score", "psnr"});
  for (const auto& [name, images] : methods) {
    const auto predicted = predict_all(nima, images);
    const std::size_t n = images.size();
    std::vector<double> scores(n), psnrs(n);
    double score_sum = 0.0, psnr_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = quality::nima_score(predicted[i]);
      psnrs[i] = image::psnr(images[i], references[i]);
      score_sum += scores[i];
      psnr_sum += psnrs[i];
      per_image.add({name, std::to_string(data.pairs_test[i].base_index), num(scores[i]), num(psnrs[i])});
    }
    const double mean = score_sum / static_cast<double>(n);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    summary.add({name, std::to_string(n), num(mean), num(std::sqrt(var / static_cast<double>(n))),
                 num(psnr_sum / static_cast<double>(n))});
  }
  write_text(dir / "eval_methods.csv", summary.str());
  write_text(dir / "eval_scores.csv", per_image.str());

  std::vector<Tensor> rated_images;
  std::vector<quality::RatingDistribution> truth;
  for (const auto& r : data.rated_test) {
    rated_images.push_back(r.image);
    truth.push_back(r.rating);
  }
  if (!rated_images.empty()) {
    write_text(dir / "eval_predictor.csv", predictor_report_csv(predict_all(nima, rated_images), truth));
  }
  out << summary.str();
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quality-aware image enhancement: synthetic data, predictor and CAN training, scoring"};
  app.name("nimaenh");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(NIMAENH_VERSION));

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic rated and paired dataset");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed")->default_val(0);
  gen_cmd->add_option("--count", gen.count, "Number of base images")->required();
  gen_cmd->add_option("--size", gen.size, "Image size as HxW")->required();
  gen_cmd->add_option("--operator", gen.op, "Reference operator: tone, haze or mixed")->default_val("tone");
  gen_cmd->add_option("--config", gen.config, "key = value config file");
  gen_cmd->add_option("--out", gen.out, "Output directory");

  TrainNimaArgs tn;
  std::uint64_t tn_seed = 0;
  auto* tn_cmd = app.add_subcommand("train-nima", "Train the quality predictor on rated images");
  tn_cmd->add_option("--data", tn.data, "Dataset directory")->required();
  tn_cmd->add_option("--config", tn.config, "key = value config file");
  tn_cmd->add_option("--out", tn.out, "Output directory");
  auto* tn_seed_opt = tn_cmd->add_option("--seed", tn_seed, "Overrides the config seed");

  TrainCanArgs tc;
  std::uint64_t tc_seed = 0;
  double tc_gamma = 0.0;
  auto* tc_cmd = app.add_subcommand("train-can", "Train the enhancement network against a frozen predictor");
  tc_cmd->add_option("--data", tc.data, "Dataset directory")->required();
  tc_cmd->add_option("--nima", tc.nima, "Predictor checkpoint")->required();
  auto* tc_gamma_opt = tc_cmd->add_option("--gamma", tc_gamma, "Perceptual weight (default 1e-4)");
  tc_cmd->add_option("--config", tc.config, "key = value config file");
  tc_cmd->add_option("--out", tc.out, "Output directory");
  auto* tc_seed_opt = tc_cmd->add_option("--seed", tc_seed, "Overrides the config seed");

  ScoreArgs sc;
  auto* sc_cmd = app.add_subcommand("score", "Predict quality scores for images");
  sc_cmd->add_option("--nima", sc.nima, "Predictor checkpoint")->required();
  sc_cmd->add_option("--images", sc.images, "Image files or directories")->required();
  sc_cmd->add_option("--out", sc.out, "Output CSV path");

  EnhanceArgs en;
  auto* en_cmd = app.add_subcommand("enhance", "Enhance images with a trained CAN");
  en_cmd->add_option("--can", en.can, "CAN checkpoint")->required();
  en_cmd->add_option("--images", en.images, "Image files or directories")->required();
  en_cmd->add_option("--out", en.out, "Output directory");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Score statistics and PSNR for input, reference and both CANs");
  ev_cmd->add_option("--nima", ev.nima, "Predictor checkpoint")->required();
  ev_cmd->add_option("--can", ev.can, "CAN trained with the perceptual term")->required();
  ev_cmd->add_option("--can-baseline", ev.can_baseline, "CAN trained with gamma = 0")->required();
  ev_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  ev_cmd->add_option("--out", ev.out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*tn_cmd) {
      if (*tn_seed_opt) tn.seed = tn_seed;
      return train_nima(tn, out);
    }
    if (*tc_cmd) {
      if (*tc_gamma_opt) tc.gamma = tc_gamma;
      if (*tc_seed_opt) tc.seed = tc_seed;
      return train_can(tc, out);
    }
    if (*sc_cmd) return score(sc, out);
    if (*en_cmd) return enhance(en, out);
    if (*ev_cmd) return eval(ev, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace nimaenh::cli
