#include "rankcount/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rankcount/checkpoint.hpp"

namespace rankcount {

std::string ModelConfig::arch_string() const {
  std::ostringstream os;
  os << "in=" << in_channels << ";widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) os << ',';
    os << widths[i];
  }
  return os.str();
}

ModelConfig ModelConfig::from_arch_string(const std::string& s) {
  ModelConfig config;
  config.widths.clear();
  if (s.rfind("in=", 0) != 0) throw std::runtime_error("bad architecture string: " + s);
  const auto semi = s.find(';');
  if (semi == std::string::npos || s.compare(semi, 8, ";widths=") != 0) {
    throw std::runtime_error("bad architecture string: " + s);
  }
  config.in_channels = std::stoi(s.substr(3, semi - 3));
  std::string rest = s.substr(semi + 8);
  std::istringstream is(rest);
  std::string token;
  while (std::getline(is, token, ',')) config.widths.push_back(std::stoi(token));
  if (config.widths.empty() || config.in_channels < 1) {
    throw std::runtime_error("bad architecture string: " + s);
  }
  return config;
}

std::int64_t ModelConfig::parameter_count() const {
  std::int64_t total = 0;
  int cin = in_channels;
  for (int w : widths) {
    total += 9LL * cin * w + w;  // 3x3 conv + bias
    total += 4LL * w * w + w;    // 2x2 stride-2 conv + bias
    cin = w;
  }
  total += 9LL * cin + 1;  // single-filter 3x3 head + bias
  return total;
}

namespace {

ag::Tensor he_conv(int out_ch, int in_ch, int kh, int kw, Rng& rng, std::string name) {
  const int fan_in = in_ch * kh * kw;
  const double stddev = std::sqrt(2.0 / fan_in);
  std::vector<double> values(static_cast<std::size_t>(out_ch) * in_ch * kh * kw);
  for (auto& v : values) v = rng.normal(0.0, stddev);
  auto t = ag::Tensor::from_values({out_ch, in_ch, kh, kw}, std::move(values), true);
  t.set_name(std::move(name));
  return t;
}

ag::Tensor zero_bias(int ch, std::string name) {
  auto t = ag::Tensor::zeros({ch}, true);
  t.set_name(std::move(name));
  return t;
}

}  // namespace

CountingNet CountingNet::init(const ModelConfig& config, Rng& rng) {
  if (config.widths.empty() || config.in_channels < 1) {
    throw std::runtime_error("model config needs at least one block and one input channel");
  }
  for (int w : config.widths) {
    if (w < 1) throw std::runtime_error("model config has non-positive width");
  }
  CountingNet net;
  net.config_ = config;
  int cin = config.in_channels;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const int w = config.widths[i];
    const std::string block = "block" + std::to_string(i + 1);
    net.params_.push_back(he_conv(w, cin, 3, 3, rng, block + ".conva.weight"));
    net.params_.push_back(zero_bias(w, block + ".conva.bias"));
    net.params_.push_back(he_conv(w, w, 2, 2, rng, block + ".convb.weight"));
    net.params_.push_back(zero_bias(w, block + ".convb.bias"));
    cin = w;
  }
  net.params_.push_back(he_conv(1, cin, 3, 3, rng, "head.weight"));
  net.params_.push_back(zero_bias(1, "head.bias"));
  return net;
}

ag::Tensor CountingNet::forward(const ag::Tensor& batch) const {
  if (!batch.defined() || batch.shape().size() != 4) {
    throw std::runtime_error("forward expects a [N,C,H,W] batch");
  }
  if (batch.dim(1) != config_.in_channels) {
    throw std::runtime_error("forward: batch has " + std::to_string(batch.dim(1)) +
                             " channels, model expects " + std::to_string(config_.in_channels));
  }
  const int stride = output_stride();
  if (batch.dim(2) % stride != 0 || batch.dim(3) % stride != 0) {
    throw std::runtime_error("forward: input " + std::to_string(batch.dim(2)) + "x" +
                             std::to_string(batch.dim(3)) +
                             " is not divisible by the output stride " + std::to_string(stride));
  }
  // Inputs arrive in [0,1]; center them so first-layer gradients are not all
  // same-signed.
  ag::Tensor x = ag::add_scalar(batch, -0.5);
  std::size_t p = 0;
  for (std::size_t i = 0; i < config_.widths.size(); ++i) {
    x = ag::relu(ag::add_channel_bias(ag::conv2d(x, params_[p], 1, 1), params_[p + 1]));
    x = ag::relu(ag::add_channel_bias(ag::conv2d(x, params_[p + 2], 2, 0), params_[p + 3]));
    p += 4;
  }
  x = ag::add_channel_bias(ag::conv2d(x, params_[p], 1, 1), params_[p + 1]);
  return ag::softplus(x);
}

std::int64_t CountingNet::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.size();
  return total;
}

void CountingNet::save(const std::filesystem::path& path) const {
  std::vector<TensorEntry> entries;
  entries.reserve(params_.size());
  for (const auto& p : params_) {
    entries.push_back(TensorEntry{p.name(), p.shape(), p.values()});
  }
  save_tensor_file(path, config_.arch_string(), entries);
}

CountingNet CountingNet::load(const std::filesystem::path& path) {
  const TensorFile file = load_tensor_file(path);
  const ModelConfig config = ModelConfig::from_arch_string(file.meta);
  Rng rng(0);
  CountingNet net = init(config, rng);
  if (file.entries.size() != net.params_.size()) {
    throw std::runtime_error("checkpoint " + path.string() + " has " +
                             std::to_string(file.entries.size()) + " tensors, architecture '" +
                             file.meta + "' expects " + std::to_string(net.params_.size()));
  }
  for (auto& p : net.params_) {
    const TensorEntry* entry = file.find(p.name());
    if (!entry) {
      throw std::runtime_error("checkpoint " + path.string() + " is missing tensor '" +
                               p.name() + "'");
    }
    if (entry->shape != p.shape()) {
      throw std::runtime_error("checkpoint " + path.string() + " tensor '" + p.name() +
                               "' has shape " + ag::shape_str(entry->shape) +
                               ", architecture expects " + ag::shape_str(p.shape()));
    }
    p.values() = entry->values;
  }
  return net;
}

CountingNet CountingNet::clone() const {
  CountingNet copy;
  copy.config_ = config_;
  copy.params_.reserve(params_.size());
  for (const auto& p : params_) {
    auto t = ag::Tensor::from_values(p.shape(), p.values(), p.requires_grad());
    t.set_name(p.name());
    copy.params_.push_back(std::move(t));
  }
  return copy;
}

}  // namespace rankcount
