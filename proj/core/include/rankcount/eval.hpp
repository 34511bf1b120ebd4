#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rankcount/data.hpp"
#include "rankcount/model.hpp"

namespace rankcount {

struct EvalItem {
  std::string image_id;
  double true_count = 0.0;
  double predicted = 0.0;
  double abs_error() const { return true_count > predicted ? true_count - predicted
                                                           : predicted - true_count; }
};

/// MAE = (1/N) sum |C - Chat|; MSE keeps the paper's name and formula,
/// i.e. sqrt((1/N) sum (C - Chat)^2), a root-mean-square count error.
struct EvalReport {
  std::string dataset_id;
  std::string label;
  std::uint64_t checkpoint_hash = 0;
  bool cross_dataset = false;
  std::vector<EvalItem> items;
  double mae = 0.0;
  double mse = 0.0;
};

struct EvalDataset {
  std::string id;
  std::vector<SyntheticScene> scenes;

  static EvalDataset from_scenes(std::string id, std::vector<SyntheticScene> scenes);
  static EvalDataset from_dir(const std::filesystem::path& dir);
};

/// Full-image forward pass; returns the sum of the output density map. Images
/// whose sides are not stride multiples are reflect-padded up to the next
/// multiple and cells are weighted by the fraction of their pixel block that
/// overlaps the original image, so padding adds no counted mass.
double predict_count(const CountingNet& net, const Image& image);

using Predictor = std::function<double(const Image&)>;

/// Computes per-image predictions and the Eq.-7 aggregates. The dataset must
/// be non-empty.
EvalReport evaluate(const Predictor& predict, const EvalDataset& dataset);
EvalReport evaluate(const CountingNet& net, const EvalDataset& dataset);

/// Cross-dataset protocol: evaluate on a target domain with no further
/// training; the report is tagged cross-dataset.
EvalReport transfer_eval(const CountingNet& net, const EvalDataset& target);

/// Recomputes mae/mse from the items (fixed summation order).
void finalize_report(EvalReport& report);

/// CSV: header image_id,true,pred,abs_err; one row per image; footer rows
/// MAE,<v> and MSE,<v>. A leading comment line carries dataset id, label and
/// checkpoint hash so reports stay self-describing.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_csv(const std::filesystem::path& path);

/// Seeded shuffle split into `folds` nearly equal parts (cross-validation
/// utility).
std::vector<std::vector<std::string>> fold_split(std::vector<std::string> image_ids,
                                                 int folds, std::uint64_t seed);

}  // namespace rankcount
