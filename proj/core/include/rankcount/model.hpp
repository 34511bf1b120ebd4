#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rankcount/rng.hpp"
#include "rankcount/tensor.hpp"

namespace rankcount {

/// Architecture of the density regressor. Each block is
/// conv3x3(stride 1, pad 1) -> relu -> conv2x2(stride 2) -> relu, so every
/// block halves the spatial size; the head is a single-filter conv3x3
/// (stride 1, pad 1) followed by softplus to keep the density non-negative.
struct ModelConfig {
  int in_channels = 1;
  std::vector<int> widths = {16, 32, 64, 64};

  int output_stride() const { return 1 << widths.size(); }
  /// Compact textual form, e.g. "in=1;widths=16,32,64,64"; stored in
  /// checkpoint headers and compared on load.
  std::string arch_string() const;
  static ModelConfig from_arch_string(const std::string& s);

  /// Closed form: per block 9*c_in*w + w (3x3 conv) + 4*w*w + w (2x2 conv),
  /// plus the 9*w_last + 1 head.
  std::int64_t parameter_count() const;
};

class CountingNet {
 public:
  /// He-style fan-in initialization (weights ~ N(0, sqrt(2/fan_in)), biases
  /// zero), fully determined by the rng state.
  static CountingNet init(const ModelConfig& config, Rng& rng);

  /// [N,C,in,in] -> [N,1,in/stride,in/stride], all outputs > 0. The input
  /// side must be divisible by the output stride; violations are rejected
  /// before any compute.
  ag::Tensor forward(const ag::Tensor& batch) const;

  const ModelConfig& config() const { return config_; }
  int output_stride() const { return config_.output_stride(); }
  std::vector<ag::Tensor>& parameters() { return params_; }
  const std::vector<ag::Tensor>& parameters() const { return params_; }
  std::int64_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  /// Throws if the stored architecture does not match the file contents.
  static CountingNet load(const std::filesystem::path& path);

  /// Deep copy with freshly allocated parameter tensors.
  CountingNet clone() const;

 private:
  ModelConfig config_;
  std::vector<ag::Tensor> params_;  // blockI.conv{a,b}.{weight,bias}..., head.{weight,bias}
};

}  // namespace rankcount
