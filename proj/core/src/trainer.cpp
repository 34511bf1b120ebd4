#include "rankcount/trainer.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rankcount/losses.hpp"

namespace rankcount {

Regime regime_from_string(const std::string& s) {
  if (s == "finetune") return Regime::finetune;
  if (s == "alternating") return Regime::alternating;
  if (s == "multitask") return Regime::multitask;
  throw std::runtime_error("unknown regime '" + s +
                           "' (expected finetune|alternating|multitask)");
}

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::finetune: return "finetune";
    case Regime::alternating: return "alternating";
    case Regime::multitask: return "multitask";
  }
  return "?";
}

TrainConfig TrainConfig::preset_paper() {
  TrainConfig c;
  c.lr = 1e-6;
  c.total_iterations = 20000;
  c.input_size = 224;
  c.widths = {16, 32, 64, 64};
  return c;
}

TrainConfig TrainConfig::preset_toy() {
  TrainConfig c;
  c.lr = 3e-3;
  c.lambda = 10.0;
  c.total_iterations = 600;
  c.input_size = 64;
  c.widths = {8, 16, 32};  // stride 8
  c.max_patch_side = 96;
  c.alternating_period = 24;
  c.checkpoint_every = 1000;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "paper") return preset_paper();
  if (name == "toy") return preset_toy();
  throw std::runtime_error("unknown preset '" + name + "' (expected paper|toy)");
}

double TrainConfig::lr_at(std::int64_t iteration) const {
  double value = lr;
  for (std::int64_t n = iteration / lr_decay_interval; n > 0; --n) value *= lr_decay_factor;
  return value;
}

BatchConfig TrainConfig::batch_config() const {
  BatchConfig bc;
  bc.counting_batch = counting_batch;
  bc.ranking_sets = ranking_sets;
  bc.patch.input_size = input_size;
  bc.patch.output_stride = model_config().output_stride();
  bc.patch.sigma_px = sigma_px;
  bc.patch.min_side = min_patch_side;
  bc.patch.max_side = max_patch_side;
  bc.patch.log_uniform = log_uniform_scales;
  return bc;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.in_channels = in_channels;
  mc.widths = widths;
  return mc;
}

void TrainConfig::validate() const {
  if (lambda < 0.0) throw std::runtime_error("config: lambda must be >= 0");
  if (epsilon < 0.0) throw std::runtime_error("config: epsilon must be >= 0");
  if (lr <= 0.0) throw std::runtime_error("config: lr must be > 0");
  if (lr_decay_interval < 1) throw std::runtime_error("config: lr_decay_interval must be >= 1");
  if (total_iterations < 0) throw std::runtime_error("config: total_iterations must be >= 0");
  if (weight_decay < 0.0) throw std::runtime_error("config: weight_decay must be >= 0");
  if (alternating_period < 1) throw std::runtime_error("config: alternating_period must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw std::runtime_error("config: momentum must be in [0,1)");
  if (k < 2) throw std::runtime_error("config: k must be >= 2");
  if (!(s > 0.0 && s < 1.0)) throw std::runtime_error("config: s must be in (0,1)");
  if (r < 1.0) throw std::runtime_error("config: r must be >= 1");
  if (counting_batch < 1) throw std::runtime_error("config: counting_batch must be >= 1");
  if (ranking_sets < 1) throw std::runtime_error("config: ranking_sets must be >= 1");
  if (widths.empty()) throw std::runtime_error("config: widths must not be empty");
  const int stride = model_config().output_stride();
  if (input_size < stride || input_size % stride != 0) {
    throw std::runtime_error("config: input_size must be a positive multiple of the output stride " +
                             std::to_string(stride));
  }
  if (min_patch_side < 1 || min_patch_side > max_patch_side) {
    throw std::runtime_error("config: patch side range is empty");
  }
}

void apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value) {
  auto as_double = [&] { return std::stod(value); };
  auto as_int = [&] { return static_cast<std::int64_t>(std::stoll(value)); };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::runtime_error("config: '" + key + "' expects true/false, got '" + value + "'");
  };

  if (key == "regime") config.regime = regime_from_string(value);
  else if (key == "lambda") config.lambda = as_double();
  else if (key == "epsilon") config.epsilon = as_double();
  else if (key == "lr") config.lr = as_double();
  else if (key == "lr_decay_factor") config.lr_decay_factor = as_double();
  else if (key == "lr_decay_interval") config.lr_decay_interval = as_int();
  else if (key == "total_iterations") config.total_iterations = as_int();
  else if (key == "phase1_iterations") config.phase1_iterations = as_int();
  else if (key == "weight_decay") config.weight_decay = as_double();
  else if (key == "alternating_period") config.alternating_period = as_int();
  else if (key == "momentum") config.momentum = as_double();
  else if (key == "lr_clock") {
    if (value == "global") config.lr_clock_per_task = false;
    else if (value == "per_task") config.lr_clock_per_task = true;
    else throw std::runtime_error("config: lr_clock expects global|per_task");
  }
  else if (key == "seed") config.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "checkpoint_every") config.checkpoint_every = as_int();
  else if (key == "eval_every") config.eval_every = as_int();
  else if (key == "k") config.k = static_cast<int>(as_int());
  else if (key == "s") config.s = as_double();
  else if (key == "r") config.r = as_double();
  else if (key == "input_size") config.input_size = static_cast<int>(as_int());
  else if (key == "counting_batch") config.counting_batch = static_cast<int>(as_int());
  else if (key == "ranking_sets") config.ranking_sets = static_cast<int>(as_int());
  else if (key == "min_patch_side") config.min_patch_side = static_cast<int>(as_int());
  else if (key == "max_patch_side") config.max_patch_side = static_cast<int>(as_int());
  else if (key == "sigma_px") config.sigma_px = as_double();
  else if (key == "log_uniform_scales") config.log_uniform_scales = as_bool();
  else if (key == "in_channels") config.in_channels = static_cast<int>(as_int());
  else if (key == "widths") {
    config.widths.clear();
    std::istringstream is(value);
    std::string token;
    while (std::getline(is, token, ',')) config.widths.push_back(std::stoi(token));
  } else {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": expected key = value");
      }
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_entry(base, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

std::string dump_train_config(const TrainConfig& c) {
  std::ostringstream os;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "regime = " << to_string(c.regime) << '\n'
     << "lambda = " << num(c.lambda) << '\n'
     << "epsilon = " << num(c.epsilon) << '\n'
     << "lr = " << num(c.lr) << '\n'
     << "lr_decay_factor = " << num(c.lr_decay_factor) << '\n'
     << "lr_decay_interval = " << c.lr_decay_interval << '\n'
     << "total_iterations = " << c.total_iterations << '\n'
     << "phase1_iterations = " << c.phase1_iterations << '\n'
     << "weight_decay = " << num(c.weight_decay) << '\n'
     << "alternating_period = " << c.alternating_period << '\n'
     << "momentum = " << num(c.momentum) << '\n'
     << "lr_clock = " << (c.lr_clock_per_task ? "per_task" : "global") << '\n'
     << "seed = " << c.seed << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "eval_every = " << c.eval_every << '\n'
     << "k = " << c.k << '\n'
     << "s = " << num(c.s) << '\n'
     << "r = " << num(c.r) << '\n'
     << "input_size = " << c.input_size << '\n'
     << "counting_batch = " << c.counting_batch << '\n'
     << "ranking_sets = " << c.ranking_sets << '\n'
     << "min_patch_side = " << c.min_patch_side << '\n'
     << "max_patch_side = " << c.max_patch_side << '\n'
     << "sigma_px = " << num(c.sigma_px) << '\n'
     << "log_uniform_scales = " << (c.log_uniform_scales ? "true" : "false") << '\n'
     << "in_channels = " << c.in_channels << '\n';
  os << "widths = ";
  for (std::size_t i = 0; i < c.widths.size(); ++i) {
    if (i) os << ',';
    os << c.widths[i];
  }
  os << '\n';
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "iteration,phase,loss_counting,loss_ranking,active_pairs,lr\n";
  char buf[64];
  for (const auto& rec : iterations) {
    out << rec.iteration << ',' << rec.phase << ',';
    if (rec.has_counting) {
      std::snprintf(buf, sizeof(buf), "%.17g", rec.loss_counting);
      out << buf;
    }
    out << ',';
    if (rec.has_ranking) {
      std::snprintf(buf, sizeof(buf), "%.17g", rec.loss_ranking);
      out << buf << ',' << rec.active_pairs;
    } else {
      out << ',';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", rec.lr);
    out << ',' << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void TrainLog::write_eval_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "iteration,mae,mse\n";
  char buf[64];
  for (const auto& rec : evals) {
    std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.17g,%.17g", rec.iteration, rec.mae, rec.mse);
    out << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

struct Optimizer {
  double momentum = 0.0;
  std::vector<std::vector<double>> velocity;

  void step(std::vector<ag::Tensor>& params, double lr, double weight_decay) {
    if (momentum == 0.0) {
      ag::sgd_step(params, lr, weight_decay);
      return;
    }
    if (velocity.empty()) velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.grad_populated()) {
        throw std::runtime_error("sgd_step: parameter '" + p.name() +
                                 "' has no populated gradient");
      }
      auto& v = velocity[i];
      if (v.empty()) v.assign(static_cast<std::size_t>(p.size()), 0.0);
      const auto& g = p.grad();
      auto& values = p.values();
      for (std::size_t j = 0; j < values.size(); ++j) {
        v[j] = momentum * v[j] + (g[j] + weight_decay * values[j]);
        values[j] -= lr * v[j];
      }
      p.zero_grad();
    }
  }
};

void run_iteration(CountingNet& net, Optimizer& opt, const DataSources& sources,
                   const TrainConfig& config, const BatchConfig& bc, BatchKind kind,
                   std::int64_t iteration, std::int64_t lr_iteration, TrainLog& log) {
  Rng rng = Rng::stream(config.seed, "batch", static_cast<std::uint64_t>(iteration));
  Minibatch batch = assemble_batch(kind, sources, bc, rng);

  // Accidental accumulation guard: the previous step must have cleared grads.
  for (const auto& p : net.parameters()) {
    if (p.grad_populated()) {
      throw std::logic_error("training loop: parameter '" + p.name() +
                             "' carries a gradient before backward()");
    }
  }

  ag::Tensor pred = net.forward(batch.images);

  IterRecord rec;
  rec.iteration = iteration;
  rec.phase = to_string(kind);
  rec.lr = config.lr_at(lr_iteration);

  ag::Tensor loss;
  switch (kind) {
    case BatchKind::counting: {
      loss = counting_loss(pred, batch.gt);
      rec.has_counting = true;
      rec.loss_counting = loss.item();
      break;
    }
    case BatchKind::ranking: {
      ag::Tensor counts = ag::avg_pool_global(pred);
      RankingLossResult rl = ranking_loss(counts, batch.pairs, config.epsilon);
      loss = rl.loss;
      rec.has_ranking = true;
      rec.loss_ranking = loss.item();
      rec.active_pairs = rl.active_pairs;
      break;
    }
    case BatchKind::mixed: {
      ag::Tensor lc = counting_loss(ag::slice_rows(pred, 0, batch.counting_rows), batch.gt);
      ag::Tensor counts = ag::avg_pool_global(pred);  // pairs address batch rows directly
      RankingLossResult rl = ranking_loss(counts, batch.pairs, config.epsilon);
      loss = multitask_loss(lc, rl.loss, config.lambda);
      rec.has_counting = true;
      rec.loss_counting = lc.item();
      rec.has_ranking = true;
      rec.loss_ranking = rl.loss.item();
      rec.active_pairs = rl.active_pairs;
      break;
    }
  }

  ag::backward(loss);
  opt.step(net.parameters(), rec.lr, config.weight_decay);
  log.iterations.push_back(std::move(rec));
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir,
                                      std::int64_t iteration) {
  char name[64];
  std::snprintf(name, sizeof(name), "checkpoint_%07" PRId64 ".ckpt", iteration);
  return out_dir / name;
}

TrainResult train_common(const CountingNet& initial, const DataSources& sources,
                         const TrainConfig& config, const std::filesystem::path& out_dir,
                         const TrainHooks& hooks,
                         const std::function<BatchKind(std::int64_t)>& kind_of,
                         std::int64_t phase_boundary) {
  config.validate();
  if (sources.chains && !sources.chains->empty() && (*sources.chains)[0].k() != config.k) {
    throw std::runtime_error("chain manifest has k=" +
                             std::to_string((*sources.chains)[0].k()) +
                             " but the config says k=" + std::to_string(config.k));
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.net = initial.clone();
  Optimizer opt;
  opt.momentum = config.momentum;
  const BatchConfig bc = config.batch_config();

  std::int64_t task_clock[3] = {0, 0, 0};
  for (std::int64_t iter = 0; iter < config.total_iterations; ++iter) {
    if (iter == phase_boundary && iter > 0 && !out_dir.empty()) {
      result.net.save(out_dir / "phase1.ckpt");
    }
    const BatchKind kind = kind_of(iter);
    const std::int64_t lr_iter =
        config.lr_clock_per_task ? task_clock[static_cast<int>(kind)]++ : iter;
    run_iteration(result.net, opt, sources, config, bc, kind, iter, lr_iter, result.log);
    const std::int64_t done = iter + 1;
    if (!out_dir.empty() && config.checkpoint_every > 0 &&
        done % config.checkpoint_every == 0) {
      result.net.save(checkpoint_path(out_dir, done));
    }
    if (hooks.evaluate && config.eval_every > 0 && done % config.eval_every == 0) {
      const auto [mae, mse] = hooks.evaluate(result.net);
      result.log.evals.push_back({iter, mae, mse});
    }
  }

  if (!out_dir.empty()) result.net.save(out_dir / "final.ckpt");
  return result;
}

}  // namespace

TrainResult train_finetune(const CountingNet& initial, const DataSources& sources,
                           const TrainConfig& config, const std::filesystem::path& out_dir,
                           const TrainHooks& hooks) {
  const std::int64_t phase1 = config.resolved_phase1();
  if (phase1 > config.total_iterations) {
    throw std::runtime_error("finetune: phase1_iterations exceeds total_iterations");
  }
  return train_common(
      initial, sources, config, out_dir, hooks,
      [phase1](std::int64_t iter) {
        return iter < phase1 ? BatchKind::ranking : BatchKind::counting;
      },
      phase1);
}

TrainResult train_alternating(const CountingNet& initial, const DataSources& sources,
                              const TrainConfig& config,
                              const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  const std::int64_t period = config.alternating_period;
  return train_common(
      initial, sources, config, out_dir, hooks,
      [period](std::int64_t iter) {
        return (iter / period) % 2 == 0 ? BatchKind::counting : BatchKind::ranking;
      },
      -1);
}

TrainResult train_multitask(const CountingNet& initial, const DataSources& sources,
                            const TrainConfig& config, const std::filesystem::path& out_dir,
                            const TrainHooks& hooks) {
  return train_common(
      initial, sources, config, out_dir, hooks,
      [](std::int64_t) { return BatchKind::mixed; }, -1);
}

TrainResult train(const CountingNet& initial, const DataSources& sources,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks) {
  switch (config.regime) {
    case Regime::finetune: return train_finetune(initial, sources, config, out_dir, hooks);
    case Regime::alternating:
      return train_alternating(initial, sources, config, out_dir, hooks);
    case Regime::multitask: return train_multitask(initial, sources, config, out_dir, hooks);
  }
  throw std::logic_error("unreachable regime");
}

}  // namespace rankcount
