// PAIDCKPT v1 layout, all integers little-endian:
//
//   "PAIDCKPT"            8 bytes
//   version               u32 (= 1)
//   seed                  u64
//   role                  u32 (student, peer, teacher, surrogate)
//   spec length, spec     u32, UTF-8 bytes of to_string(ModelSpec)
//   record count          u32
//   per record:
//     name length, name   u32, UTF-8 bytes
//     rank, dims          u32, u64 x rank
//     values              float64 x prod(dims)

#include <limits>

#include "binary_io.hpp"
#include "paid/model.hpp"

namespace paid {

namespace {
constexpr std::string_view kMagic = "PAIDCKPT";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  check_params(model.spec, model.params);
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u64(model.params.seed);
  w.u32(static_cast<std::uint32_t>(model.spec.role));
  const auto spec_text = to_string(model.spec);
  w.u32(static_cast<std::uint32_t>(spec_text.size()));
  w.bytes(spec_text);
  w.u32(static_cast<std::uint32_t>(model.params.tensors.size()));
  for (const auto& t : model.params.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u64(d);
    for (auto v : t.value.values()) w.f64(static_cast<double>(v));
  }
  w.write_file(path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError(FormatError::Kind::bad_magic, "'" + r.origin() + "': bad magic, not a PAIDCKPT file");
  }
  if (const auto version = r.u32(); version != kVersion) {
    throw FormatError(FormatError::Kind::bad_version,
                      "'" + r.origin() + "': unsupported checkpoint version " + std::to_string(version));
  }
  Model model;
  model.params.seed = r.u64();
  const auto role = r.u32();
  if (role > static_cast<std::uint32_t>(Role::surrogate)) {
    throw FormatError(FormatError::Kind::value_out_of_range, "'" + r.origin() + "': bad role code");
  }
  const auto spec_len = r.u32();
  model.spec = parse_model_spec(r.bytes(spec_len), static_cast<Role>(role));
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    const auto rank = r.u32();
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d != 0 && total > std::numeric_limits<std::uint64_t>::max() / d) {
        throw FormatError(FormatError::Kind::truncated, "'" + r.origin() + "': tensor extent overflow");
      }
      total *= d;
    }
    if (total > r.remaining() / 8) r.need(r.remaining() + 1);
    std::vector<Real> values(total);
    for (auto& v : values) v = static_cast<Real>(r.f64());
    t.value = Tensor(std::move(shape), std::move(values));
    model.params.tensors.push_back(std::move(t));
  }
  check_params(model.spec, model.params);
  return model;
}

}  // namespace paid
