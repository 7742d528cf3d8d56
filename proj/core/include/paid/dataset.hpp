#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paid/tensor.hpp"

namespace paid {

enum class Split : std::uint8_t { train, val, test };

[[nodiscard]] std::string_view to_string(Split split) noexcept;

/// Labelled samples with inputs in [0, 1].
///
/// `inputs` is [n, d] for vector data or [n, c, h, w] for images.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::train;
  std::string name;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
  /// Shape of one sample (inputs shape without the batch axis).
  [[nodiscard]] Shape sample_shape() const;
  /// Throws ContractError when empty, mislabelled or out of [0, 1].
  void validate() const;
  /// Samples at `rows`, in that order.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> rows) const;
  /// First `count` samples.
  [[nodiscard]] Dataset head(std::size_t count) const;
};

enum class SyntheticKind : std::uint8_t { gauss_blobs, two_moons, ring };

[[nodiscard]] std::string_view to_string(SyntheticKind kind) noexcept;
[[nodiscard]] SyntheticKind parse_synthetic_kind(std::string_view text);

struct SyntheticData {
  Dataset data;
  /// Class centres after rescaling (blobs only; empty otherwise).
  std::vector<std::vector<Real>> centers;
  /// Smallest distance between two class centres after rescaling (blobs
  /// only; 0 otherwise).
  Real class_gap = 0;
};

/// Deterministic 2-D toy problems rescaled isotropically into [0, 1]^2.
///
/// gauss-blobs puts class centres on the unit circle and adds isotropic
/// Gaussian noise of standard deviation `noise` (pre-rescale units);
/// two-moons and ring generalise to `classes` interleaved arcs and concentric
/// rings. Classes are balanced within one sample. Values are representable as
/// float32 so the PAID round trip is exact.
///
/// Throws ParameterError unless classes >= 2, n >= classes, noise >= 0.
[[nodiscard]] SyntheticData gen_synthetic(SyntheticKind kind, std::size_t classes, std::size_t n, double noise,
                                          std::uint64_t seed);

/// Deterministic shuffled split into (first, second) with round(n * fraction)
/// samples in the second part.
[[nodiscard]] std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction, std::uint64_t seed);

/// PAID v1: "PAID", u32 version, n, c, h, w, float32 pixels, u32 labels.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
/// Throws FormatError with a distinct kind for bad magic, truncation, labels
/// or pixels out of range.
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& path);

/// PAIT v1: PAID header with magic "PAIT" and no labels. Rank-1 tensors are
/// stored as [1, 1, 1, w], rank-2 as [n, 1, 1, w], rank-3 as [n, 1, h, w].
void save_raw_tensor(const std::filesystem::path& path, const Tensor& tensor);
/// Returns the tensor as [n, c, h, w].
[[nodiscard]] Tensor load_raw_tensor(const std::filesystem::path& path);

}  // namespace paid
