#include "paid/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "paid/error.hpp"

namespace paid {

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::string_view to_string(SyntheticKind kind) noexcept {
  switch (kind) {
    case SyntheticKind::gauss_blobs: return "gauss-blobs";
    case SyntheticKind::two_moons: return "two-moons";
    case SyntheticKind::ring: return "ring";
  }
  return "gauss-blobs";
}

SyntheticKind parse_synthetic_kind(std::string_view text) {
  if (text == "gauss-blobs" || text == "blobs") return SyntheticKind::gauss_blobs;
  if (text == "two-moons" || text == "moons") return SyntheticKind::two_moons;
  if (text == "ring") return SyntheticKind::ring;
  throw ParameterError("unknown synthetic dataset kind '" + std::string(text) + "'");
}

Shape Dataset::sample_shape() const {
  const auto& s = inputs.shape();
  if (s.empty()) return {};
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (labels.empty()) throw ContractError("dataset '" + name + "': no samples");
  if (inputs.rank() < 2 || inputs.extent(0) != labels.size()) {
    throw ContractError("dataset '" + name + "': inputs " + to_string(inputs.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("dataset '" + name + "': label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
  }
  for (auto v : inputs.values()) {
    if (!(v >= 0 && v <= 1)) throw ContractError("dataset '" + name + "': input value outside [0, 1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.inputs = inputs.gather_rows(rows);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(labels.at(r));
  out.classes = classes;
  out.split = split;
  out.name = name;
  return out;
}

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  Dataset out;
  out.inputs = inputs.slice_rows(0, count);
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(count));
  out.classes = classes;
  out.split = split;
  out.name = name;
  return out;
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  // Box-Muller; the second variate is discarded to keep the stream simple.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

SyntheticData gen_synthetic(SyntheticKind kind, std::size_t classes, std::size_t n, double noise, std::uint64_t seed) {
  if (classes < 2) throw ParameterError("gen_synthetic: classes must be >= 2");
  if (n < classes) throw ParameterError("gen_synthetic: n must be >= classes");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ParameterError("gen_synthetic: noise must be >= 0");

  Sampler rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> px(n), py(n);
  std::vector<int> labels(n);
  std::vector<std::array<double, 2>> centers;
  if (kind == SyntheticKind::gauss_blobs) {
    for (std::size_t k = 0; k < classes; ++k) {
      const double a = two_pi * static_cast<double>(k) / static_cast<double>(classes);
      centers.push_back({std::cos(a), std::sin(a)});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = i % classes;
    labels[i] = static_cast<int>(k);
    double x = 0, y = 0;
    switch (kind) {
      case SyntheticKind::gauss_blobs:
        x = centers[k][0];
        y = centers[k][1];
        break;
      case SyntheticKind::two_moons: {
        const double t = std::numbers::pi * rng.uniform();
        const bool even = k % 2 == 0;
        x = static_cast<double>(k) + (even ? std::cos(t) : -std::cos(t));
        y = even ? std::sin(t) : 0.5 - std::sin(t);
        break;
      }
      case SyntheticKind::ring: {
        const double t = two_pi * rng.uniform();
        const double r = static_cast<double>(k + 1);
        x = r * std::cos(t);
        y = r * std::sin(t);
        break;
      }
    }
    px[i] = x + noise * rng.normal();
    py[i] = y + noise * rng.normal();
  }

  const auto [xmin, xmax] = std::minmax_element(px.begin(), px.end());
  const auto [ymin, ymax] = std::minmax_element(py.begin(), py.end());
  const double span = std::max(*xmax - *xmin, *ymax - *ymin);
  const double mx = 0.5 * (*xmin + *xmax), my = 0.5 * (*ymin + *ymax);
  auto rescale = [&](double v, double mid) {
    const double u = span > 0 ? (v - mid) / span + 0.5 : 0.5;
    return static_cast<Real>(std::clamp(static_cast<float>(u), 0.0f, 1.0f));
  };

  SyntheticData out;
  out.data.inputs = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    out.data.inputs[2 * i] = rescale(px[i], mx);
    out.data.inputs[2 * i + 1] = rescale(py[i], my);
  }
  out.data.labels = std::move(labels);
  out.data.classes = classes;
  out.data.name = std::string(to_string(kind));
  for (const auto& c : centers) out.centers.push_back({rescale(c[0], mx), rescale(c[1], my)});
  if (!out.centers.empty()) {
    Real gap = std::numeric_limits<Real>::infinity();
    for (std::size_t a = 0; a < out.centers.size(); ++a)
      for (std::size_t b = a + 1; b < out.centers.size(); ++b)
        gap = std::min(gap, std::hypot(out.centers[a][0] - out.centers[b][0], out.centers[a][1] - out.centers[b][1]));
    out.class_gap = gap;
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction <= 1)) throw ParameterError("split_dataset: fraction must be in [0, 1]");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Sampler rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto second = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  const auto cut = order.size() - second;
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {data.subset(a), data.subset(b)};
}

// ----------------------------------------------------------------------------
// PAID / PAIT codecs

namespace {

constexpr std::string_view kDataMagic = "PAID";
constexpr std::string_view kTensorMagic = "PAIT";
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxClasses = 1u << 16;

struct Header {
  std::uint32_t n, c, h, w;
};

Header header_for(const Shape& shape) {
  auto u32 = [](std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("extent does not fit the file format");
    return static_cast<std::uint32_t>(v);
  };
  switch (shape.size()) {
    case 1: return {1, 1, 1, u32(shape[0])};
    case 2: return {u32(shape[0]), 1, 1, u32(shape[1])};
    case 3: return {u32(shape[0]), 1, u32(shape[1]), u32(shape[2])};
    case 4: return {u32(shape[0]), u32(shape[1]), u32(shape[2]), u32(shape[3])};
    default: throw ShapeError("cannot store tensor of shape " + to_string(shape));
  }
}

void write_header(detail::ByteWriter& w, std::string_view magic, const Header& h) {
  w.bytes(magic);
  w.u32(kFormatVersion);
  w.u32(h.n);
  w.u32(h.c);
  w.u32(h.h);
  w.u32(h.w);
}

Header read_header(detail::ByteReader& r, std::string_view magic) {
  if (r.remaining() < magic.size() || r.bytes(magic.size()) != magic) {
    throw FormatError(FormatError::Kind::bad_magic,
                      "'" + r.origin() + "': bad magic, expected \"" + std::string(magic) + "\"");
  }
  if (const auto v = r.u32(); v != kFormatVersion) {
    throw FormatError(FormatError::Kind::bad_version, "'" + r.origin() + "': unsupported version " + std::to_string(v));
  }
  Header h{};
  h.n = r.u32();
  h.c = r.u32();
  h.h = r.u32();
  h.w = r.u32();
  return h;
}

std::uint64_t payload_count(const Header& h) {
  return static_cast<std::uint64_t>(h.n) * h.c * h.h * h.w;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  detail::ByteWriter w;
  write_header(w, kDataMagic, header_for(data.inputs.shape()));
  for (auto v : data.inputs.values()) w.f32(static_cast<float>(v));
  for (auto y : data.labels) w.u32(static_cast<std::uint32_t>(y));
  w.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  const auto h = read_header(r, kDataMagic);
  const auto count = payload_count(h);
  if (h.n == 0) throw FormatError(FormatError::Kind::truncated, "'" + r.origin() + "': empty dataset");
  if (count > r.remaining() / 4 || static_cast<std::uint64_t>(h.n) > (r.remaining() - count * 4) / 4) {
    r.need(r.remaining() + 1);
  }
  Dataset d;
  Shape shape = (h.c == 1 && h.h == 1) ? Shape{h.n, h.w} : Shape{h.n, h.c, h.h, h.w};
  std::vector<Real> values(count);
  for (auto& v : values) {
    const float f = r.f32();
    if (!(f >= 0.0f && f <= 1.0f)) {
      throw FormatError(FormatError::Kind::value_out_of_range, "'" + r.origin() + "': pixel value outside [0, 1]");
    }
    v = static_cast<Real>(f);
  }
  d.inputs = Tensor(std::move(shape), std::move(values));
  d.labels.resize(h.n);
  std::uint32_t top = 0;
  for (auto& y : d.labels) {
    const auto raw = r.u32();
    if (raw >= kMaxClasses) {
      throw FormatError(FormatError::Kind::label_out_of_range,
                        "'" + r.origin() + "': label " + std::to_string(raw) + " out of range");
    }
    top = std::max(top, raw);
    y = static_cast<int>(raw);
  }
  d.classes = static_cast<std::size_t>(top) + 1;
  d.name = path.stem().string();
  return d;
}

void save_raw_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  detail::ByteWriter w;
  write_header(w, kTensorMagic, header_for(tensor.shape()));
  for (auto v : tensor.values()) w.f32(static_cast<float>(v));
  w.write_file(path);
}

Tensor load_raw_tensor(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  const auto h = read_header(r, kTensorMagic);
  const auto count = payload_count(h);
  if (count > r.remaining() / 4) r.need(r.remaining() + 1);
  std::vector<Real> values(count);
  for (auto& v : values) v = static_cast<Real>(r.f32());
  return Tensor({h.n, h.c, h.h, h.w}, std::move(values));
}

}  // namespace paid
