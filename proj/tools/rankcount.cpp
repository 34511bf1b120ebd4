// rankcount: synthetic-corpus generation, ranked-chain generation, training
// with the three counting/ranking combination regimes, evaluation, and report
// assembly. Every run writes a manifest sufficient to reproduce its artifacts.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rankcount/checkpoint.hpp"
#include "rankcount/data.hpp"
#include "rankcount/density.hpp"
#include "rankcount/eval.hpp"
#include "rankcount/manifest.hpp"
#include "rankcount/model.hpp"
#include "rankcount/rankgen.hpp"
#include "rankcount/trainer.hpp"
#include "rankcount/version.hpp"

namespace fs = std::filesystem;
using namespace rankcount;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("RANKCOUNT_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return 1;
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

struct ManifestScope {
  RunManifest manifest;
  fs::path path;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  ManifestScope(const std::string& subcommand, int argc, char** argv) {
    manifest.version = kVersion;
    manifest.subcommand = subcommand;
    manifest.started_at = timestamp_utc();
    for (int i = 1; i < argc; ++i) manifest.argv.emplace_back(argv[i]);
  }

  void finish() {
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!path.empty()) manifest.write(path);
  }
};

void parse_size(const std::string& text, int& height, int& width) {
  const auto x = text.find('x');
  if (x == std::string::npos) {
    throw std::runtime_error("--size expects HxW, e.g. 192x192");
  }
  height = std::stoi(text.substr(0, x));
  width = std::stoi(text.substr(x + 1));
  if (height < 1 || width < 1) throw std::runtime_error("--size sides must be positive");
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  int scenes = 30;
  int min_count = 0;
  int max_count = 100;
  std::string size = "192x192";
  std::uint64_t seed = default_seed();
  std::string out;
  std::string prefix = "scene";
  double blob_min = 3.0;
  double blob_max = 9.0;
  double clutter = 0.15;
  bool vertical_gradient = false;
};

int run_synth(const SynthArgs& args, ManifestScope& scope) {
  SceneParams params;
  parse_size(args.size, params.height, params.width);
  params.min_count = args.min_count;
  params.max_count = args.max_count;
  params.blob_radius_min = args.blob_min;
  params.blob_radius_max = args.blob_max;
  params.clutter = args.clutter;
  params.vertical_gradient = args.vertical_gradient;

  auto scenes = generate_corpus(params, args.scenes, args.seed, args.prefix);
  save_corpus(args.out, scenes);

  scope.manifest.seed = args.seed;
  scope.manifest.resolved = {{"scenes", std::to_string(args.scenes)},
                             {"min_count", std::to_string(args.min_count)},
                             {"max_count", std::to_string(args.max_count)},
                             {"size", args.size},
                             {"prefix", args.prefix},
                             {"clutter", std::to_string(args.clutter)},
                             {"vertical_gradient", args.vertical_gradient ? "1" : "0"}};
  scope.manifest.outputs = {args.out};
  scope.path = fs::path(args.out) / "manifest.json";
  std::cout << "wrote " << scenes.size() << " scenes to " << args.out << "\n";
  return 0;
}

// --- rankgen -----------------------------------------------------------------

struct RankgenArgs {
  std::string corpus;
  int k = 5;
  double s = 0.75;
  double r = 8.0;
  std::uint64_t seed = default_seed();
  std::string out;
  int per_image = 1;
  int min_side = 32;
  std::string anchor_mode = "area";
  bool skip_infeasible = false;
};

int run_rankgen(const RankgenArgs& args, ManifestScope& scope) {
  ChainParams params;
  params.k = args.k;
  params.s = args.s;
  params.r = args.r;
  params.min_side = args.min_side;
  params.anchor_mode = args.anchor_mode == "side" ? AnchorMode::side : AnchorMode::area;

  const auto entries = scan_corpus(args.corpus);
  std::vector<RankedChain> chains;
  int skipped = 0;
  for (const auto& entry : entries) {
    for (int j = 0; j < args.per_image; ++j) {
      const std::uint64_t chain_seed =
          Rng::derive(args.seed, entry.image_id, static_cast<std::uint64_t>(j));
      Rng rng(chain_seed);
      try {
        RankedChain chain = generate_chain(entry.width, entry.height, params, rng);
        chain.image_id = entry.image_id;
        chain.seed = chain_seed;
        chains.push_back(std::move(chain));
      } catch (const ChainInfeasible& e) {
        if (!args.skip_infeasible) {
          throw std::runtime_error(std::string(e.what()) + " (image '" + entry.image_id +
                                   "'; pass --skip-infeasible to drop such images)");
        }
        ++skipped;
        break;
      }
    }
  }
  if (chains.empty()) throw std::runtime_error("no feasible chains in corpus " + args.corpus);
  save_chains(args.out, chains);

  scope.manifest.seed = args.seed;
  scope.manifest.resolved = {{"k", std::to_string(args.k)},
                             {"s", std::to_string(args.s)},
                             {"r", std::to_string(args.r)},
                             {"per_image", std::to_string(args.per_image)},
                             {"min_side", std::to_string(args.min_side)},
                             {"anchor_mode", args.anchor_mode}};
  scope.manifest.inputs = {args.corpus};
  scope.manifest.outputs = {args.out};
  scope.path = fs::path(args.out).string() + ".manifest.json";
  std::cout << "wrote " << chains.size() << " chains to " << args.out;
  if (skipped > 0) std::cout << " (skipped " << skipped << " infeasible images)";
  std::cout << "\n";
  return 0;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string regime;
  std::string labeled;
  std::string chains;
  std::string unlabeled;
  std::string config_file;
  std::string preset = "toy";
  std::string out;
  std::string eval_dataset;
  std::vector<std::string> sets;
  std::uint64_t seed = default_seed();
  bool seed_given = false;
  double lambda = -1.0;
  double lr = -1.0;
  std::int64_t iterations = -1;
};

int run_train(const TrainArgs& args, ManifestScope& scope) {
  TrainConfig config = TrainConfig::preset(args.preset);
  if (!args.config_file.empty()) config = load_train_config(args.config_file, config);
  if (!args.regime.empty()) config.regime = regime_from_string(args.regime);
  if (args.seed_given || std::getenv("RANKCOUNT_SEED")) config.seed = args.seed;
  if (args.lambda >= 0.0) config.lambda = args.lambda;
  if (args.lr > 0.0) config.lr = args.lr;
  if (args.iterations >= 0) config.total_iterations = args.iterations;
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("--set expects key=value, got '" + kv + "'");
    }
    apply_config_entry(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  if (args.out.empty()) throw std::runtime_error("--out is required");

  std::vector<SyntheticScene> labeled;
  if (!args.labeled.empty()) labeled = load_corpus(args.labeled);
  std::vector<RankedChain> chains;
  std::unique_ptr<DirImageStore> store;
  if (!args.chains.empty()) {
    chains = load_chains(args.chains);
    if (args.unlabeled.empty()) {
      throw std::runtime_error("--chains requires --unlabeled DIR for the chain images");
    }
    store = std::make_unique<DirImageStore>(args.unlabeled);
  }
  DataSources sources;
  if (!labeled.empty()) sources.labeled = &labeled;
  if (!chains.empty()) {
    sources.chains = &chains;
    sources.chain_images = store.get();
  }

  TrainHooks hooks;
  EvalDataset held_out;
  if (!args.eval_dataset.empty()) {
    held_out = EvalDataset::from_dir(args.eval_dataset);
    hooks.evaluate = [&held_out](const CountingNet& net) {
      const EvalReport report = evaluate(net, held_out);
      return std::make_pair(report.mae, report.mse);
    };
  }

  Rng init_rng(config.seed);
  CountingNet net = CountingNet::init(config.model_config(), init_rng);
  const TrainResult result = train(net, sources, config, args.out, hooks);

  const fs::path out_dir(args.out);
  result.log.write_csv(out_dir / "train_log.csv");
  if (!result.log.evals.empty()) result.log.write_eval_csv(out_dir / "eval_log.csv");
  {
    std::ofstream cfg_out(out_dir / "config.cfg");
    cfg_out << dump_train_config(config);
  }

  scope.manifest.seed = config.seed;
  {
    std::istringstream is(dump_train_config(config));
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) {
        scope.manifest.resolved[line.substr(0, eq)] = line.substr(eq + 3);
      }
    }
  }
  for (const auto& in : {args.labeled, args.chains, args.unlabeled, args.config_file}) {
    if (!in.empty()) scope.manifest.inputs.push_back(in);
  }
  scope.manifest.outputs = {args.out};
  scope.path = out_dir / "manifest.json";

  std::cout << "trained " << to_string(config.regime) << " for "
            << result.log.iterations.size() << " iterations; final checkpoint "
            << (out_dir / "final.ckpt").string() << "\n";
  return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::string label;
  bool transfer = false;
  int folds = 0;
  int fold = 0;
  std::uint64_t seed = default_seed();
};

int run_eval(const EvalArgs& args, ManifestScope& scope) {
  CountingNet net = CountingNet::load(args.checkpoint);
  EvalDataset dataset = EvalDataset::from_dir(args.dataset);

  if (args.folds > 0) {
    if (args.fold < 0 || args.fold >= args.folds) {
      throw std::runtime_error("--fold must lie in [0, --folds)");
    }
    std::vector<std::string> ids;
    for (const auto& scene : dataset.scenes) ids.push_back(scene.annotation.image_id);
    const auto folds = fold_split(std::move(ids), args.folds, args.seed);
    const auto& keep = folds[static_cast<std::size_t>(args.fold)];
    std::vector<SyntheticScene> subset;
    for (auto& scene : dataset.scenes) {
      if (std::find(keep.begin(), keep.end(), scene.annotation.image_id) != keep.end()) {
        subset.push_back(std::move(scene));
      }
    }
    dataset.scenes = std::move(subset);
    dataset.id += "/fold" + std::to_string(args.fold);
  }

  EvalReport report = args.transfer ? transfer_eval(net, dataset) : evaluate(net, dataset);
  report.checkpoint_hash = hash_file(args.checkpoint);
  report.label = args.label.empty() ? fs::path(args.checkpoint).stem().string() : args.label;
  write_report_csv(args.out, report);

  scope.manifest.seed = args.seed;
  scope.manifest.resolved = {{"transfer", args.transfer ? "1" : "0"},
                             {"label", report.label},
                             {"folds", std::to_string(args.folds)},
                             {"fold", std::to_string(args.fold)}};
  scope.manifest.inputs = {args.checkpoint, args.dataset};
  scope.manifest.outputs = {args.out};
  scope.path = fs::path(args.out).string() + ".manifest.json";

  std::printf("%s: MAE %.4f  MSE %.4f  (%zu images)\n", report.label.c_str(), report.mae,
              report.mse, report.items.size());
  return 0;
}

// --- report ------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> reports;
  std::string out;
  std::string dataset;
  std::string checkpoint;
  int triptychs = 0;
};

Image normalized_map_image(const std::vector<double>& cells, int rows, int cols) {
  Image img;
  img.width = cols;
  img.height = rows;
  img.pixels = cells;
  double peak = 1e-12;
  for (double v : img.pixels) peak = std::max(peak, v);
  for (double& v : img.pixels) v /= peak;
  return img;
}

int run_report(const ReportArgs& args, ManifestScope& scope) {
  std::vector<EvalReport> reports;
  for (const auto& path : args.reports) reports.push_back(read_report_csv(path));
  if (reports.empty()) throw std::runtime_error("report: no input reports");
  for (const auto& r : reports) {
    if (r.dataset_id != reports[0].dataset_id) {
      throw std::runtime_error("report: dataset ids differ: '" + reports[0].dataset_id +
                               "' vs '" + r.dataset_id + "'");
    }
  }
  std::sort(reports.begin(), reports.end(),
            [](const EvalReport& a, const EvalReport& b) { return a.mae < b.mae; });

  fs::create_directories(args.out);
  const fs::path table_csv = fs::path(args.out) / "table.csv";
  const fs::path table_md = fs::path(args.out) / "table.md";
  {
    std::ofstream csv(table_csv);
    csv << "label,mae,mse,images\n";
    std::ofstream md(table_md);
    md << "| method | MAE | MSE |\n|---|---|---|\n";
    char buf[160];
    for (const auto& r : reports) {
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%zu\n", r.label.c_str(), r.mae, r.mse,
                    r.items.size());
      csv << buf;
      std::snprintf(buf, sizeof(buf), "| %s | %.2f | %.2f |\n", r.label.c_str(), r.mae, r.mse);
      md << buf;
    }
  }

  std::vector<std::string> outputs{table_csv.string(), table_md.string()};
  if (args.triptychs > 0) {
    if (args.dataset.empty() || args.checkpoint.empty()) {
      throw std::runtime_error("--triptychs requires --dataset and --checkpoint");
    }
    CountingNet net = CountingNet::load(args.checkpoint);
    EvalDataset dataset = EvalDataset::from_dir(args.dataset);
    const int stride = net.output_stride();
    const int n = std::min<int>(args.triptychs, static_cast<int>(dataset.scenes.size()));
    for (int i = 0; i < n; ++i) {
      const auto& scene = dataset.scenes[static_cast<std::size_t>(i)];
      const std::string id = scene.annotation.image_id;
      const int w = scene.image.width, h = scene.image.height;

      save_pgm(fs::path(args.out) / (id + "_image.pgm"), scene.image);

      const DensityMap gt = render_density(scene.annotation, 15.0, h / stride, w / stride);
      save_pgm(fs::path(args.out) / (id + "_gt.pgm"),
               resize_bilinear(normalized_map_image(gt.cells, gt.rows, gt.cols), w, h));

      ag::Tensor batch = ag::Tensor::zeros({1, 1, h, w});
      std::copy(scene.image.pixels.begin(), scene.image.pixels.end(), batch.values().begin());
      const ag::Tensor out = net.forward(batch);
      save_pgm(fs::path(args.out) / (id + "_pred.pgm"),
               resize_bilinear(normalized_map_image(out.values(), out.dim(2), out.dim(3)), w, h));
      outputs.push_back((fs::path(args.out) / (id + "_image.pgm")).string());
    }
  }

  scope.manifest.inputs = args.reports;
  scope.manifest.outputs = outputs;
  scope.manifest.resolved = {{"triptychs", std::to_string(args.triptychs)}};
  scope.path = fs::path(args.out) / "manifest.json";

  std::cout << "wrote " << table_csv.string() << " (" << reports.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rankcount: self-supervised crowd counting by learning to rank"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  synth_cmd->add_option("--scenes", synth.scenes, "Number of scenes")->required();
  synth_cmd->add_option("--min-count", synth.min_count, "Minimum persons per scene");
  synth_cmd->add_option("--max-count", synth.max_count, "Maximum persons per scene");
  synth_cmd->add_option("--size", synth.size, "Scene size HxW (default 192x192)");
  synth_cmd->add_option("--seed", synth.seed, "Seed (default: RANKCOUNT_SEED or 1)");
  synth_cmd->add_option("--out", synth.out, "Output corpus directory")->required();
  synth_cmd->add_option("--prefix", synth.prefix, "Image-id prefix");
  synth_cmd->add_option("--blob-min", synth.blob_min, "Minimum blob radius (px)");
  synth_cmd->add_option("--blob-max", synth.blob_max, "Maximum blob radius (px)");
  synth_cmd->add_option("--clutter", synth.clutter, "Background texture amplitude");
  synth_cmd->add_flag("--vertical-gradient", synth.vertical_gradient,
                      "Denser points toward the top");

  RankgenArgs rankgen;
  auto* rankgen_cmd = app.add_subcommand("rankgen", "Generate ranked chains from a corpus");
  rankgen_cmd->add_option("--corpus", rankgen.corpus, "Directory of .pgm images")->required();
  rankgen_cmd->add_option("--k", rankgen.k, "Patches per chain");
  rankgen_cmd->add_option("--s", rankgen.s, "Scale factor between patches");
  rankgen_cmd->add_option("--r", rankgen.r, "Anchor region parameter");
  rankgen_cmd->add_option("--seed", rankgen.seed, "Seed (default: RANKCOUNT_SEED or 1)");
  rankgen_cmd->add_option("--out", rankgen.out, "Output chain manifest (JSONL)")->required();
  rankgen_cmd->add_option("--per-image", rankgen.per_image, "Chains per image");
  rankgen_cmd->add_option("--min-side", rankgen.min_side, "Minimum patch side (px)");
  rankgen_cmd->add_option("--anchor-mode", rankgen.anchor_mode,
                          "Anchor region scaling: area (1/r of area) or side (1/r per side)")
      ->check(CLI::IsMember({"area", "side"}));
  rankgen_cmd->add_flag("--skip-infeasible", rankgen.skip_infeasible,
                        "Skip images too small for a full chain");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a counting network");
  train_cmd->add_option("--regime", train_args.regime, "finetune|alternating|multitask")
      ->check(CLI::IsMember({"finetune", "alternating", "multitask"}));
  train_cmd->add_option("--labeled", train_args.labeled, "Labeled corpus directory");
  train_cmd->add_option("--chains", train_args.chains, "Chain manifest (JSONL)");
  train_cmd->add_option("--unlabeled", train_args.unlabeled,
                        "Directory with the chain images");
  train_cmd->add_option("--config", train_args.config_file, "Flat key=value config file");
  train_cmd->add_option("--preset", train_args.preset, "Config preset: toy|paper")
      ->check(CLI::IsMember({"toy", "paper"}));
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--eval-dataset", train_args.eval_dataset,
                        "Held-out corpus for periodic evaluation");
  train_cmd->add_option("--set", train_args.sets, "Override any config key: --set key=value");
  auto* seed_opt =
      train_cmd->add_option("--seed", train_args.seed, "Seed (default: RANKCOUNT_SEED or 1)");
  train_cmd->add_option("--lambda", train_args.lambda, "Multitask loss weight");
  train_cmd->add_option("--lr", train_args.lr, "Learning rate");
  train_cmd->add_option("--iterations", train_args.iterations, "Total iterations");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--dataset", eval_args.dataset, "Corpus directory")->required();
  eval_cmd->add_option("--out", eval_args.out, "Output report CSV")->required();
  eval_cmd->add_option("--label", eval_args.label, "Row label for report tables");
  eval_cmd->add_flag("--transfer", eval_args.transfer, "Tag the report as cross-dataset");
  eval_cmd->add_option("--folds", eval_args.folds, "Split the dataset into N seeded folds");
  eval_cmd->add_option("--fold", eval_args.fold, "Evaluate only this fold index");
  eval_cmd->add_option("--seed", eval_args.seed, "Fold-split seed");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "Combine eval reports into a table");
  report_cmd->add_option("--reports", report_args.reports, "Input report CSVs")->required();
  report_cmd->add_option("--out", report_args.out, "Output directory")->required();
  report_cmd->add_option("--dataset", report_args.dataset, "Corpus for density triptychs");
  report_cmd->add_option("--checkpoint", report_args.checkpoint, "Checkpoint for triptychs");
  report_cmd->add_option("--triptychs", report_args.triptychs,
                         "Render image/gt/prediction panels for the first N images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the error and a usage hint
    return 1;
  }
  train_args.seed_given = seed_opt->count() > 0;

  try {
    if (synth_cmd->parsed()) {
      ManifestScope scope("synth", argc, argv);
      const int rc = run_synth(synth, scope);
      scope.finish();
      return rc;
    }
    if (rankgen_cmd->parsed()) {
      ManifestScope scope("rankgen", argc, argv);
      const int rc = run_rankgen(rankgen, scope);
      scope.finish();
      return rc;
    }
    if (train_cmd->parsed()) {
      ManifestScope scope("train", argc, argv);
      const int rc = run_train(train_args, scope);
      scope.finish();
      return rc;
    }
    if (eval_cmd->parsed()) {
      ManifestScope scope("eval", argc, argv);
      const int rc = run_eval(eval_args, scope);
      scope.finish();
      return rc;
    }
    if (report_cmd->parsed()) {
      ManifestScope scope("report", argc, argv);
      const int rc = run_report(report_args, scope);
      scope.finish();
      return rc;
    }
  } catch (const std::exception& e) {
    std::cerr << "rankcount: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
