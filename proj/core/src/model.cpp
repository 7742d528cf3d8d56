#include "paid/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <sstream>

#include "paid/error.hpp"

namespace paid {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::student: return "student";
    case Role::peer: return "peer";
    case Role::teacher: return "teacher";
    case Role::surrogate: return "surrogate";
  }
  return "student";
}

Role parse_role(std::string_view text) {
  if (text == "student") return Role::student;
  if (text == "peer") return Role::peer;
  if (text == "teacher") return Role::teacher;
  if (text == "surrogate") return Role::surrogate;
  throw ParameterError("unknown model role '" + std::string(text) + "'");
}

std::vector<Shape> ModelSpec::layer_output_shapes() const {
  if (input_shape.empty() || element_count(input_shape) == 0) {
    throw ShapeError("model: empty input shape " + paid::to_string(input_shape));
  }
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const auto where = "model layer " + std::to_string(i) + ": ";
    switch (l.kind) {
      case LayerKind::dense:
        if (cur.size() != 1 || cur[0] != l.in || l.out == 0) {
          throw ShapeError(where + "dense(" + std::to_string(l.in) + "," + std::to_string(l.out) + ") cannot take " +
                           paid::to_string(cur));
        }
        cur = {l.out};
        break;
      case LayerKind::conv:
        if (cur.size() != 3 || cur[0] != l.in || l.out == 0) {
          throw ShapeError(where + "conv(" + std::to_string(l.in) + "," + std::to_string(l.out) + ") cannot take " +
                           paid::to_string(cur));
        }
        cur = {l.out, cur[1], cur[2]};
        break;
      case LayerKind::pool:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
          throw ShapeError(where + "pool cannot take " + paid::to_string(cur));
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {element_count(cur)};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ShapeError("model: no layers");
  if (class_count == 0) throw ShapeError("model: class_count must be positive");
  (void)layer_output_shapes();
  const auto& last = layers.back();
  if (last.kind != LayerKind::dense || last.out != class_count) {
    throw ShapeError("model: final layer must be dense with " + std::to_string(class_count) + " outputs");
  }
}

std::size_t ModelSpec::head_index() const {
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].kind == LayerKind::dense) return i;
  }
  throw ShapeError("model: no dense layer");
}

std::string to_string(const ModelSpec& spec) {
  std::ostringstream os;
  os << "input(";
  for (std::size_t i = 0; i < spec.input_shape.size(); ++i) os << (i ? "x" : "") << spec.input_shape[i];
  os << ')';
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::dense: os << " dense(" << l.in << ',' << l.out << ')'; break;
      case LayerKind::conv: os << " conv(" << l.in << ',' << l.out << ')'; break;
      case LayerKind::pool: os << " pool"; break;
      case LayerKind::relu: os << " relu"; break;
      case LayerKind::flatten: os << " flatten"; break;
    }
  }
  return os.str();
}

namespace {

std::vector<std::size_t> parse_numbers(std::string_view body, char sep, std::string_view token) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= body.size()) {
    auto end = body.find(sep, start);
    if (end == std::string_view::npos) end = body.size();
    const auto piece = body.substr(start, end - start);
    if (piece.empty() || !std::all_of(piece.begin(), piece.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw ParameterError("model spec: bad token '" + std::string(token) + "'");
    }
    out.push_back(std::stoull(std::string(piece)));
    start = end + 1;
  }
  return out;
}

}  // namespace

ModelSpec parse_model_spec(std::string_view text, Role role) {
  ModelSpec spec;
  spec.role = role;
  std::istringstream in{std::string(text)};
  std::string token;
  bool have_input = false;
  while (in >> token) {
    const auto open = token.find('(');
    const std::string name = token.substr(0, open);
    std::string_view body;
    if (open != std::string::npos) {
      if (token.back() != ')') throw ParameterError("model spec: bad token '" + token + "'");
      body = std::string_view(token).substr(open + 1, token.size() - open - 2);
    }
    if (name == "input") {
      spec.input_shape = parse_numbers(body, 'x', token);
      have_input = true;
    } else if (name == "dense" || name == "conv") {
      const auto nums = parse_numbers(body, ',', token);
      if (nums.size() != 2) throw ParameterError("model spec: bad token '" + token + "'");
      spec.layers.push_back(name == "dense" ? Layer::dense(nums[0], nums[1]) : Layer::conv(nums[0], nums[1]));
    } else if (name == "relu" && body.empty()) {
      spec.layers.push_back(Layer::relu());
    } else if (name == "pool" && body.empty()) {
      spec.layers.push_back(Layer::pool());
    } else if (name == "flatten" && body.empty()) {
      spec.layers.push_back(Layer::flatten());
    } else {
      throw ParameterError("model spec: unknown token '" + token + "'");
    }
  }
  if (!have_input) throw ParameterError("model spec: missing input(...)");
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::dense) {
    throw ParameterError("model spec: must end with a dense layer");
  }
  spec.class_count = spec.layers.back().out;
  spec.validate();
  return spec;
}

ModelSpec mlp_s(std::size_t inputs, std::size_t classes, Role role) {
  return {{inputs},
          {Layer::dense(inputs, 16), Layer::relu(), Layer::dense(16, 16), Layer::relu(), Layer::dense(16, classes)},
          classes,
          role};
}

ModelSpec mlp_p(std::size_t inputs, std::size_t classes, Role role) {
  return {{inputs},
          {Layer::dense(inputs, 32), Layer::relu(), Layer::dense(32, 32), Layer::relu(), Layer::dense(32, classes)},
          classes,
          role};
}

ModelSpec cnn_t(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes, Role role) {
  ModelSpec spec{{channels, height, width},
                 {Layer::conv(channels, 8), Layer::relu(), Layer::pool(), Layer::conv(8, 16), Layer::relu(),
                  Layer::pool(), Layer::flatten(), Layer::dense(16 * (height / 4) * (width / 4), classes)},
                 classes,
                 role};
  spec.validate();
  return spec;
}

ModelSpec make_model_spec(std::string_view preset_or_spec, const Shape& sample_shape, std::size_t classes, Role role) {
  const auto flat = element_count(sample_shape);
  if (preset_or_spec == "mlp-s") return mlp_s(flat, classes, role);
  if (preset_or_spec == "mlp-p") return mlp_p(flat, classes, role);
  if (preset_or_spec == "cnn-t") {
    if (sample_shape.size() != 3) throw ShapeError("cnn-t needs image samples, got " + to_string(sample_shape));
    return cnn_t(sample_shape[0], sample_shape[1], sample_shape[2], classes, role);
  }
  auto spec = parse_model_spec(preset_or_spec, role);
  if (spec.input_shape != sample_shape && element_count(spec.input_shape) != flat) {
    throw ShapeError("model spec input " + to_string(spec.input_shape) + " does not match data " +
                     to_string(sample_shape));
  }
  return spec;
}

const Tensor& Params::at(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw ContractError("params: no tensor named '" + std::string(name) + "'");
}

Tensor& Params::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const Params&>(*this).at(name));
}

namespace {

Shape weight_shape(const Layer& l) {
  return l.kind == LayerKind::dense ? Shape{l.in, l.out} : Shape{l.out, l.in, 3, 3};
}

std::size_t fan_in(const Layer& l) { return l.kind == LayerKind::dense ? l.in : l.in * 9; }

}  // namespace

Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Params params;
  params.seed = seed;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (!l.learnable()) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(l)));
    Tensor w(weight_shape(l));
    for (auto& v : w.values()) {
      // 53 random bits -> [0, 1); independent of the standard library's
      // distribution implementations.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = static_cast<Real>(bound * (2.0 * u - 1.0));
    }
    const auto prefix = "layer" + std::to_string(i);
    params.tensors.push_back({prefix + ".weight", std::move(w)});
    params.tensors.push_back({prefix + ".bias", Tensor({l.out})});
  }
  return params;
}

void check_params(const ModelSpec& spec, const Params& params) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (!l.learnable()) continue;
    const auto prefix = "layer" + std::to_string(i);
    if (k + 2 > params.tensors.size()) {
      throw ShapeError("params: missing tensors for " + prefix);
    }
    const auto& w = params.tensors[k];
    const auto& b = params.tensors[k + 1];
    if (w.name != prefix + ".weight" || w.value.shape() != weight_shape(l) || b.name != prefix + ".bias" ||
        b.value.shape() != Shape{l.out}) {
      throw ShapeError("params: tensors for " + prefix + " do not match the model spec");
    }
    k += 2;
  }
  if (k != params.tensors.size()) throw ShapeError("params: unexpected extra tensors");
}

Model make_model(ModelSpec spec, std::uint64_t seed) {
  auto params = init_params(spec, seed);
  return {std::move(spec), std::move(params)};
}

BoundModel bind(Tape& tape, const Model& model, bool requires_grad) {
  BoundModel bound;
  bound.spec = &model.spec;
  bound.params.reserve(model.params.size());
  for (const auto& t : model.params.tensors) bound.params.push_back(tape.leaf(t.value, requires_grad));
  return bound;
}

std::vector<Tensor> param_grads(const Tape& tape, const BoundModel& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.params.size());
  for (const auto& v : bound.params) out.push_back(tape.grad(v));
  return out;
}

namespace {

// Runs layers [0, stop) and returns the activation.
Var run_layers(const BoundModel& m, Var x, std::size_t stop) {
  const auto& spec = *m.spec;
  Shape expected{0};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  const Shape xs = x.shape();
  expected[0] = xs.empty() ? 0 : xs[0];
  Var h = x;
  if (xs != expected) {
    if (xs.empty() || element_count(xs) != element_count(expected)) {
      throw ShapeError("forward: input " + to_string(xs) + " does not match model input " +
                       to_string(spec.input_shape));
    }
    // Image batches feed vector models through a differentiable flatten; the
    // other direction is only offered for constant inputs.
    if (spec.input_shape.size() == 1) {
      h = flatten(x);
    } else if (!x.requires_grad()) {
      h = x.tape->constant(x.value().reshaped(expected));
    } else {
      throw ShapeError("forward: differentiable input must have shape " + to_string(expected));
    }
  }
  std::size_t p = 0;
  for (std::size_t i = 0; i < stop; ++i) {
    const auto& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::dense:
        h = add_bias(matmul(h, m.params[p]), m.params[p + 1]);
        p += 2;
        break;
      case LayerKind::conv:
        h = add_bias(conv2d(h, m.params[p]), m.params[p + 1]);
        p += 2;
        break;
      case LayerKind::pool: h = max_pool2(h); break;
      case LayerKind::relu: h = relu(h); break;
      case LayerKind::flatten: h = flatten(h); break;
    }
  }
  return h;
}

}  // namespace

Var BoundModel::logits(Var x) const { return run_layers(*this, x, spec->layers.size()); }

Var BoundModel::penultimate(Var x) const {
  const auto head = spec->head_index();
  if (head == 0) throw UnsupportedError("penultimate: model has a single layer");
  return run_layers(*this, x, head);
}

Var BoundModel::head(Var features) const {
  return add_bias(matmul(features, params[params.size() - 2]), params[params.size() - 1]);
}

Tensor forward_logits(const Model& model, const Tensor& x) {
  Tape tape;
  auto bound = bind(tape, model, false);
  return bound.logits(tape.constant(x)).value();
}

Tensor penultimate(const Model& model, const Tensor& x) {
  Tape tape;
  auto bound = bind(tape, model, false);
  return bound.penultimate(tape.constant(x)).value();
}

Tensor predict_prob(const Model& model, const Tensor& x, Real temperature) {
  if (!(temperature > 0)) throw ParameterError("predict_prob: temperature must be > 0");
  Tape tape;
  auto bound = bind(tape, model, false);
  return exp(log_softmax(bound.logits(tape.constant(x)), temperature)).value();
}

std::vector<int> predict(const Model& model, const Tensor& x) { return argmax_rows(forward_logits(model, x)); }

}  // namespace paid
