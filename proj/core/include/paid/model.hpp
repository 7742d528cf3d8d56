#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "paid/autodiff.hpp"
#include "paid/tensor.hpp"

namespace paid {

enum class LayerKind : std::uint8_t { dense, conv, pool, relu, flatten };

/// One step of a sequential network. `in`/`out` are features for dense layers
/// and channels for conv layers; unused otherwise.
struct Layer {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;

  static Layer dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out}; }
  static Layer conv(std::size_t in_channels, std::size_t out_channels) {
    return {LayerKind::conv, in_channels, out_channels};
  }
  static Layer pool() { return {LayerKind::pool, 0, 0}; }
  static Layer relu() { return {LayerKind::relu, 0, 0}; }
  static Layer flatten() { return {LayerKind::flatten, 0, 0}; }

  [[nodiscard]] bool learnable() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv; }
  bool operator==(const Layer&) const = default;
};

enum class Role : std::uint8_t { student, peer, teacher, surrogate };

[[nodiscard]] std::string_view to_string(Role role) noexcept;
[[nodiscard]] Role parse_role(std::string_view text);

/// Sequential network topology.
///
/// `input_shape` excludes the batch axis: {d} for vectors, {c, h, w} for
/// images. The final layer must be dense with `class_count` outputs.
struct ModelSpec {
  Shape input_shape;
  std::vector<Layer> layers;
  std::size_t class_count = 0;
  Role role = Role::student;

  /// Throws ShapeError when consecutive layers do not compose.
  void validate() const;
  /// Per-sample output shape after each layer.
  [[nodiscard]] std::vector<Shape> layer_output_shapes() const;
  /// Index of the last dense layer.
  [[nodiscard]] std::size_t head_index() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Textual form, e.g. "input(2) dense(2,16) relu dense(16,16) relu dense(16,3)".
[[nodiscard]] std::string to_string(const ModelSpec& spec);
/// Inverse of to_string; class_count is taken from the final dense layer.
[[nodiscard]] ModelSpec parse_model_spec(std::string_view text, Role role = Role::student);

/// in -> 16 -> 16 -> classes.
[[nodiscard]] ModelSpec mlp_s(std::size_t inputs, std::size_t classes, Role role = Role::student);
/// in -> 32 -> 32 -> classes.
[[nodiscard]] ModelSpec mlp_p(std::size_t inputs, std::size_t classes, Role role = Role::peer);
/// conv8 -> pool -> conv16 -> pool -> dense, for small square images.
[[nodiscard]] ModelSpec cnn_t(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                              Role role = Role::teacher);
/// Resolves "mlp-s", "mlp-p", "cnn-t" against a sample shape, or parses an
/// explicit spec string.
[[nodiscard]] ModelSpec make_model_spec(std::string_view preset_or_spec, const Shape& sample_shape,
                                        std::size_t classes, Role role);

struct NamedTensor {
  std::string name;
  Tensor value;

  bool operator==(const NamedTensor&) const = default;
};

/// Learnable values, in layer order: "layerN.weight" then "layerN.bias".
struct Params {
  std::vector<NamedTensor> tensors;
  std::uint64_t seed = 0;

  [[nodiscard]] const Tensor& at(std::string_view name) const;
  [[nodiscard]] Tensor& at(std::string_view name);
  [[nodiscard]] std::size_t size() const noexcept { return tensors.size(); }

  bool operator==(const Params&) const = default;
};

/// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases. Bit
/// deterministic per (spec, seed) on a given platform.
[[nodiscard]] Params init_params(const ModelSpec& spec, std::uint64_t seed);

/// Throws ShapeError when `params` does not belong to `spec`.
void check_params(const ModelSpec& spec, const Params& params);

struct Model {
  ModelSpec spec;
  Params params;

  bool operator==(const Model&) const = default;
};

[[nodiscard]] Model make_model(ModelSpec spec, std::uint64_t seed);

/// A model whose parameters have been registered on a tape.
struct BoundModel {
  const ModelSpec* spec = nullptr;
  std::vector<Var> params;

  /// Forward pass to logits [n, classes].
  [[nodiscard]] Var logits(Var x) const;
  /// Input of the final dense layer [n, features].
  [[nodiscard]] Var penultimate(Var x) const;
  /// Applies the final dense layer to penultimate features.
  [[nodiscard]] Var head(Var features) const;
};

/// Registers `model`'s parameters on `tape`. With requires_grad=false they are
/// constants and receive no gradient.
[[nodiscard]] BoundModel bind(Tape& tape, const Model& model, bool requires_grad);

/// Gradients of the bound parameters after tape.backward(), aligned with
/// model.params.tensors.
[[nodiscard]] std::vector<Tensor> param_grads(const Tape& tape, const BoundModel& bound);

// Tape-free conveniences.
[[nodiscard]] Tensor forward_logits(const Model& model, const Tensor& x);
/// Throws UnsupportedError for single-layer specs.
[[nodiscard]] Tensor penultimate(const Model& model, const Tensor& x);
/// softmax(logits / temperature); throws ParameterError when temperature <= 0.
[[nodiscard]] Tensor predict_prob(const Model& model, const Tensor& x, Real temperature = Real{1});
[[nodiscard]] std::vector<int> predict(const Model& model, const Tensor& x);

/// Writes a PAIDCKPT v1 file. Values are stored as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
[[nodiscard]] Model load_checkpoint(const std::filesystem::path& path);

}  // namespace paid
