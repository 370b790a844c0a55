#include "fsr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "fsr/errors.hpp"

namespace fsr {

static_assert(std::endian::native == std::endian::little,
              "model files are written in host byte order");

Linear init_linear(std::size_t in, std::size_t out, std::uint64_t seed) {
  if (in == 0 || out == 0) throw ContractError("layer dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Linear layer{Matrix(in, out), Matrix(1, out)};
  for (double& w : layer.weight.data()) w = normal(rng);
  return layer;
}

MlpParams init_params(std::size_t p, std::size_t h, std::size_t q, std::uint64_t seed,
                      OutputActivation activation) {
  if (p == 0 || h == 0 || q == 0) throw ContractError("MLP dimensions must be positive");
  std::mt19937_64 seeds(seed);
  MlpParams params;
  params.hidden = init_linear(p, h, seeds());
  params.output = init_linear(h, q, seeds());
  params.activation = activation;
  return params;
}

HeteroskedasticBundle make_hetero_bundle(std::size_t p, std::size_t h, std::size_t groups,
                                         std::uint64_t seed) {
  std::mt19937_64 seeds(seed);
  HeteroskedasticBundle b;
  b.phi = init_linear(p, h, seeds());
  b.mean_head = init_linear(h, 1, seeds());
  b.logvar_head = init_linear(h, 1, seeds());
  for (std::size_t d = 0; d < groups; ++d) b.subgroup.push_back(init_linear(h, 2, seeds()));
  return b;
}

ResidualBundle make_residual_bundle(std::size_t p, std::size_t h, std::size_t groups,
                                    std::uint64_t seed) {
  std::mt19937_64 seeds(seed);
  ResidualBundle b;
  b.mean_net = init_params(p, h, 1, seeds(), OutputActivation::kLinear);
  b.var_net = init_params(p, h, 1, seeds(), OutputActivation::kSoftplus);
  for (std::size_t d = 0; d < groups; ++d) b.subgroup_mean.push_back(init_linear(h, 1, seeds()));
  for (std::size_t d = 0; d < groups; ++d) b.subgroup_var.push_back(init_linear(h, 1, seeds()));
  return b;
}

LinearVars place(Tape& tape, const Linear& layer, bool trainable) {
  if (trainable) return {tape.parameter(layer.weight), tape.parameter(layer.bias)};
  return {tape.constant(layer.weight), tape.constant(layer.bias)};
}

Var apply(Tape& tape, const LinearVars& layer, Var x) {
  return tape.affine(x, layer.weight, layer.bias);
}

Var represent(Tape& tape, const LinearVars& layer, Var x) {
  return tape.selu(apply(tape, layer, x));
}

HeteroOutputs forward_hetero(Tape& tape, const HeteroVars& vars, Var x) {
  const Var phi = represent(tape, vars.phi, x);
  return {apply(tape, vars.mean_head, phi), apply(tape, vars.logvar_head, phi), phi};
}

MlpVars place(Tape& tape, const MlpParams& params, bool trainable_hidden,
              bool trainable_output) {
  return {place(tape, params.hidden, trainable_hidden),
          place(tape, params.output, trainable_output), params.activation};
}

MlpOutputs forward_mlp(Tape& tape, const MlpVars& vars, Var x) {
  const Var phi = represent(tape, vars.hidden, x);
  Var out = apply(tape, vars.output, phi);
  if (vars.activation == OutputActivation::kSoftplus) out = tape.softplus(out);
  return {out, phi};
}

Matrix HeteroPrediction::variance() const {
  Matrix v(logvar.rows(), logvar.cols());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(logvar[i]);
  return v;
}

HeteroPrediction forward_hetero(const HeteroskedasticBundle& bundle, const Matrix& x) {
  Tape tape;
  const HeteroVars vars{place(tape, bundle.phi, false), place(tape, bundle.mean_head, false),
                        place(tape, bundle.logvar_head, false)};
  const HeteroOutputs out = forward_hetero(tape, vars, tape.constant(x));
  return {tape.value(out.mean), tape.value(out.logvar), tape.value(out.phi)};
}

ResidualMeanPrediction forward_residual_mean(const ResidualBundle& bundle, const Matrix& x) {
  Tape tape;
  const MlpOutputs out = forward_mlp(tape, place(tape, bundle.mean_net, false, false),
                                     tape.constant(x));
  return {tape.value(out.output), tape.value(out.phi)};
}

ResidualVarPrediction forward_residual_var(const ResidualBundle& bundle, const Matrix& x) {
  Tape tape;
  const MlpOutputs out = forward_mlp(tape, place(tape, bundle.var_net, false, false),
                                     tape.constant(x));
  return {tape.value(out.output), tape.value(out.phi)};
}

Prediction predict(const ModelBundle& bundle, const Matrix& x) {
  if (const auto* hetero = std::get_if<HeteroskedasticBundle>(&bundle)) {
    HeteroPrediction p = forward_hetero(*hetero, x);
    return {std::move(p.mean), p.variance()};
  }
  const auto& residual = std::get<ResidualBundle>(bundle);
  return {forward_residual_mean(residual, x).mean, forward_residual_var(residual, x).var};
}

// --- persistence -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'S', 'R', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

struct NamedMatrix {
  std::string name;
  const Matrix* value;
};

void add_linear(std::vector<NamedMatrix>& out, const std::string& prefix, const Linear& l) {
  out.push_back({prefix + ".weight", &l.weight});
  out.push_back({prefix + ".bias", &l.bias});
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("model file truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

Linear take_linear(std::vector<std::pair<std::string, Matrix>>& entries, std::size_t& next,
                   const std::string& prefix) {
  auto take = [&](const std::string& name) {
    if (next >= entries.size() || entries[next].first != name) {
      throw DataError("model file: expected entry '" + name + "'");
    }
    return std::move(entries[next++].second);
  };
  Linear l;
  l.weight = take(prefix + ".weight");
  l.bias = take(prefix + ".bias");
  if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
    throw DataError("model file: bias shape mismatch for '" + prefix + "'");
  }
  return l;
}

}  // namespace

std::string encode_model(const ModelBundle& bundle) {
  std::vector<NamedMatrix> entries;
  std::uint32_t kind = 0;
  if (const auto* h = std::get_if<HeteroskedasticBundle>(&bundle)) {
    add_linear(entries, "phi", h->phi);
    add_linear(entries, "mean_head", h->mean_head);
    add_linear(entries, "logvar_head", h->logvar_head);
    for (std::size_t d = 0; d < h->subgroup.size(); ++d) {
      add_linear(entries, "subgroup" + std::to_string(d), h->subgroup[d]);
    }
  } else {
    kind = 1;
    const auto& r = std::get<ResidualBundle>(bundle);
    add_linear(entries, "mean_net.hidden", r.mean_net.hidden);
    add_linear(entries, "mean_net.output", r.mean_net.output);
    add_linear(entries, "var_net.hidden", r.var_net.hidden);
    add_linear(entries, "var_net.output", r.var_net.output);
    for (std::size_t d = 0; d < r.subgroup_mean.size(); ++d) {
      add_linear(entries, "subgroup_mean" + std::to_string(d), r.subgroup_mean[d]);
    }
    for (std::size_t d = 0; d < r.subgroup_var.size(); ++d) {
      add_linear(entries, "subgroup_var" + std::to_string(d), r.subgroup_var[d]);
    }
  }

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, kind);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint64_t>(out, e.value->rows());
    put<std::uint64_t>(out, e.value->cols());
    for (double v : e.value->data()) put<double>(out, v);
  }
  return out;
}

ModelBundle decode_model(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("not a model file (bad magic)");
  }
  if (const auto version = in.get<std::uint32_t>(); version != kVersion) {
    throw DataError("unsupported model file version " + std::to_string(version));
  }
  const auto kind = in.get<std::uint32_t>();
  const auto count = in.get<std::uint32_t>();
  std::vector<std::pair<std::string, Matrix>> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.get_string(in.get<std::uint32_t>());
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    std::vector<double> data(rows * cols);
    for (double& v : data) v = in.get<double>();
    entries.emplace_back(std::move(name), Matrix(rows, cols, std::move(data)));
  }
  if (!in.done()) throw DataError("trailing bytes in model file");

  std::size_t next = 0;
  auto count_prefix = [&](const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& [name, m] : entries) {
      if (name.rfind(prefix, 0) == 0 && name.ends_with(".weight") &&
          name.find_first_not_of("0123456789", prefix.size()) == name.size() - 7) {
        ++n;
      }
    }
    return n;
  };

  if (kind == 0) {
    HeteroskedasticBundle b;
    b.phi = take_linear(entries, next, "phi");
    b.mean_head = take_linear(entries, next, "mean_head");
    b.logvar_head = take_linear(entries, next, "logvar_head");
    const std::size_t groups = count_prefix("subgroup");
    for (std::size_t d = 0; d < groups; ++d) {
      b.subgroup.push_back(take_linear(entries, next, "subgroup" + std::to_string(d)));
    }
    return b;
  }
  if (kind == 1) {
    ResidualBundle b;
    b.mean_net.hidden = take_linear(entries, next, "mean_net.hidden");
    b.mean_net.output = take_linear(entries, next, "mean_net.output");
    b.mean_net.activation = OutputActivation::kLinear;
    b.var_net.hidden = take_linear(entries, next, "var_net.hidden");
    b.var_net.output = take_linear(entries, next, "var_net.output");
    b.var_net.activation = OutputActivation::kSoftplus;
    const std::size_t groups = count_prefix("subgroup_mean");
    for (std::size_t d = 0; d < groups; ++d) {
      b.subgroup_mean.push_back(take_linear(entries, next, "subgroup_mean" + std::to_string(d)));
    }
    for (std::size_t d = 0; d < groups; ++d) {
      b.subgroup_var.push_back(take_linear(entries, next, "subgroup_var" + std::to_string(d)));
    }
    return b;
  }
  throw DataError("unknown model kind " + std::to_string(kind));
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_model(bundle);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_model(buf.str());
}

}  // namespace fsr
