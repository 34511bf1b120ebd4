#include "rankcount/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rankcount {

EvalDataset EvalDataset::from_scenes(std::string id, std::vector<SyntheticScene> scenes) {
  EvalDataset ds;
  ds.id = std::move(id);
  ds.scenes = std::move(scenes);
  return ds;
}

EvalDataset EvalDataset::from_dir(const std::filesystem::path& dir) {
  EvalDataset ds;
  ds.id = dir.filename().string();
  ds.scenes = load_corpus(dir);
  return ds;
}

namespace {

Image reflect_pad(const Image& img, int pad_right, int pad_bottom) {
  Image out;
  out.width = img.width + pad_right;
  out.height = img.height + pad_bottom;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y) {
    const int sy = y < img.height ? y : 2 * img.height - 2 - y;
    for (int x = 0; x < out.width; ++x) {
      const int sx = x < img.width ? x : 2 * img.width - 2 - x;
      out.at(x, y) = img.at(std::clamp(sx, 0, img.width - 1), std::clamp(sy, 0, img.height - 1));
    }
  }
  return out;
}

}  // namespace

double predict_count(const CountingNet& net, const Image& image) {
  const int stride = net.output_stride();
  if (image.width < stride || image.height < stride) {
    throw std::runtime_error("image " + std::to_string(image.width) + "x" +
                             std::to_string(image.height) + " is smaller than the output stride " +
                             std::to_string(stride));
  }
  const int pad_right = (stride - image.width % stride) % stride;
  const int pad_bottom = (stride - image.height % stride) % stride;
  const Image* input = &image;
  Image padded;
  if (pad_right > 0 || pad_bottom > 0) {
    padded = reflect_pad(image, pad_right, pad_bottom);
    input = &padded;
  }

  ag::Tensor batch = ag::Tensor::zeros({1, 1, input->height, input->width});
  std::copy(input->pixels.begin(), input->pixels.end(), batch.values().begin());
  ag::Tensor out = net.forward(batch);

  const int rows = out.dim(2), cols = out.dim(3);
  // Cells are weighted by the fraction of their stride x stride pixel block
  // that lies inside the original image; padding contributes no mass.
  double acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double hr = std::min<double>(image.height - static_cast<double>(r) * stride, stride);
    const double wy = std::clamp(hr / stride, 0.0, 1.0);
    for (int c = 0; c < cols; ++c) {
      const double wc = std::min<double>(image.width - static_cast<double>(c) * stride, stride);
      const double wx = std::clamp(wc / stride, 0.0, 1.0);
      acc += out.values()[static_cast<std::size_t>(r) * cols + c] * wy * wx;
    }
  }
  return acc;
}

void finalize_report(EvalReport& report) {
  if (report.items.empty()) throw std::runtime_error("evaluate: empty dataset");
  double abs_acc = 0.0;
  double sq_acc = 0.0;
  for (const auto& item : report.items) {
    const double err = item.true_count - item.predicted;
    abs_acc += std::abs(err);
    sq_acc += err * err;
  }
  const double n = static_cast<double>(report.items.size());
  report.mae = abs_acc / n;
  report.mse = std::sqrt(sq_acc / n);
}

EvalReport evaluate(const Predictor& predict, const EvalDataset& dataset) {
  if (dataset.scenes.empty()) throw std::runtime_error("evaluate: empty dataset");
  EvalReport report;
  report.dataset_id = dataset.id;
  for (const auto& scene : dataset.scenes) {
    EvalItem item;
    item.image_id = scene.annotation.image_id;
    item.true_count = scene.annotation.count();
    item.predicted = predict(scene.image);
    report.items.push_back(std::move(item));
  }
  finalize_report(report);
  return report;
}

EvalReport evaluate(const CountingNet& net, const EvalDataset& dataset) {
  return evaluate([&net](const Image& img) { return predict_count(net, img); }, dataset);
}

EvalReport transfer_eval(const CountingNet& net, const EvalDataset& target) {
  EvalReport report = evaluate(net, target);
  report.cross_dataset = true;
  return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(report.checkpoint_hash));
  out << "# dataset=" << report.dataset_id << " label=" << report.label
      << " checkpoint=" << buf << " cross_dataset=" << (report.cross_dataset ? 1 : 0) << '\n';
  out << "image_id,true,pred,abs_err\n";
  for (const auto& item : report.items) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g", item.true_count, item.predicted,
                  item.abs_error());
    out << item.image_id << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf), "MAE,%.17g\nMSE,%.17g\n", report.mae, report.mse);
  out << buf;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EvalReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report: " + path.string());
  EvalReport report;
  std::string line;
  bool have_mae = false, have_mse = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string token;
      while (is >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = token.substr(0, eq);
        const std::string value = token.substr(eq + 1);
        if (key == "dataset") report.dataset_id = value;
        else if (key == "label") report.label = value;
        else if (key == "checkpoint") report.checkpoint_hash = std::stoull(value, nullptr, 16);
        else if (key == "cross_dataset") report.cross_dataset = value == "1";
      }
      continue;
    }
    if (line.rfind("image_id,", 0) == 0) continue;
    std::istringstream is(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (fields.size() == 2 && fields[0] == "MAE") {
      report.mae = std::stod(fields[1]);
      have_mae = true;
    } else if (fields.size() == 2 && fields[0] == "MSE") {
      report.mse = std::stod(fields[1]);
      have_mse = true;
    } else if (fields.size() == 4) {
      EvalItem item;
      item.image_id = fields[0];
      item.true_count = std::stod(fields[1]);
      item.predicted = std::stod(fields[2]);
      report.items.push_back(std::move(item));
    } else {
      throw std::runtime_error("malformed report row in " + path.string() + ": " + line);
    }
  }
  if (!have_mae || !have_mse) {
    throw std::runtime_error("report " + path.string() + " is missing MAE/MSE footer rows");
  }
  return report;
}

std::vector<std::vector<std::string>> fold_split(std::vector<std::string> image_ids,
                                                 int folds, std::uint64_t seed) {
  if (folds < 1) throw std::runtime_error("fold_split: folds must be >= 1");
  std::sort(image_ids.begin(), image_ids.end());
  Rng rng = Rng::stream(seed, "folds");
  for (std::size_t i = image_ids.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(image_ids[i - 1], image_ids[j]);
  }
  std::vector<std::vector<std::string>> result(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    result[i % static_cast<std::size_t>(folds)].push_back(std::move(image_ids[i]));
  }
  return result;
}

}  // namespace rankcount
