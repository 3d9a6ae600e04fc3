#include "mirn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mirn/rng.hpp"

namespace mirn {

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "healthy",          "anterior",       "antero-lateral",
      "antero-septal",    "inferior",       "infero-lateral",
      "infero-postero-lateral"};
  return names;
}

std::string_view class_name(ClassLabel label) {
  return class_names()[static_cast<std::size_t>(label)];
}

std::optional<ClassLabel> class_from_name(std::string_view name) {
  const auto& names = class_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<ClassLabel>(i);
  }
  return std::nullopt;
}

// ---- initialization ----

namespace {

Tensor glorot_uniform(Rng& rng, std::vector<std::size_t> shape,
                      std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

Tensor glorot_conv2d(Rng& rng, std::size_t filters, std::size_t in_channels) {
  return glorot_uniform(rng, {filters, 3, 3, in_channels}, 9 * in_channels,
                        9 * filters);
}

Conv2dSpec conv_spec(const std::pair<int, int>& dilation) {
  Conv2dSpec s;
  s.num_filters = static_cast<int>(kNumChannels);
  s.dilation_rows = dilation.first;
  s.dilation_cols = dilation.second;
  return s;
}

}  // namespace

ModelParams init_model(std::uint64_t seed) {
  Rng rng(derive_seed(seed, seed_purpose::kInit));
  ModelParams p;
  const std::size_t k = static_cast<std::size_t>(p.frontend_spec.kernel_size);
  const std::size_t f = static_cast<std::size_t>(p.frontend_spec.num_filters);
  p.frontend_w = glorot_uniform(rng, {f, k}, k, k * f);
  p.conv_in_w = glorot_conv2d(rng, kNumChannels, kNumLeads);
  for (auto& w : p.res_conv_w) w = glorot_conv2d(rng, kNumChannels, kNumChannels);
  p.final_conv_w = glorot_conv2d(rng, kNumChannels, kNumChannels);
  for (auto& bn : p.bn) bn = BatchNormState::init(kNumChannels);
  p.dense_w = glorot_uniform(rng, {kNumClasses, kNumChannels}, kNumChannels,
                             kNumClasses);
  p.dense_b = Tensor({kNumClasses});
  return p;
}

std::size_t count_parameters(const ModelParams& p) {
  std::size_t n = 0;
  for (const Tensor* t : trainable_params(p)) n += t->size();
  return n;
}

std::vector<Tensor*> trainable_params(ModelParams& p) {
  std::vector<Tensor*> out;
  out.push_back(&p.frontend_w);
  out.push_back(&p.conv_in_w);
  for (auto& w : p.res_conv_w) out.push_back(&w);
  out.push_back(&p.final_conv_w);
  for (auto& bn : p.bn) {
    out.push_back(&bn.gamma);
    out.push_back(&bn.beta);
  }
  out.push_back(&p.dense_w);
  out.push_back(&p.dense_b);
  return out;
}

std::vector<const Tensor*> trainable_params(const ModelParams& p) {
  std::vector<Tensor*> mut = trainable_params(const_cast<ModelParams&>(p));
  return {mut.begin(), mut.end()};
}

const std::vector<std::string>& trainable_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    n.emplace_back("frontend_w");
    n.emplace_back("conv_in_w");
    for (int b = 1; b <= 3; ++b) {
      for (int c = 1; c <= 2; ++c) {
        n.push_back("res" + std::to_string(b) + "_conv" + std::to_string(c) +
                    "_w");
      }
    }
    n.emplace_back("final_conv_w");
    for (int i = 1; i <= 7; ++i) {
      n.push_back("bn" + std::to_string(i) + "_gamma");
      n.push_back("bn" + std::to_string(i) + "_beta");
    }
    n.emplace_back("dense_w");
    n.emplace_back("dense_b");
    return n;
  }();
  return names;
}

// ---- network assembly ----

namespace {

void check_batch_shape(const Tensor& batch) {
  if (batch.rank() != 3 || batch.extent(1) != kSegmentSamples ||
      batch.extent(2) != kNumLeads) {
    throw ShapeError("model input must be [B,500,12], got " +
                     batch.shape_str());
  }
}

GradTape::ValueId tape_residual(GradTape& t, GradTape::ValueId x,
                                GradTape::ValueId w1, GradTape::ValueId w2,
                                GradTape::ValueId g1, GradTape::ValueId b1,
                                GradTape::ValueId g2, GradTape::ValueId b2,
                                const BatchNormState& s1,
                                const BatchNormState& s2, const Conv2dSpec& d1,
                                const Conv2dSpec& d2, Mode mode,
                                BatchNormState* u1, BatchNormState* u2) {
  auto branch = tape_conv2d(t, x, w1, d1);
  branch = tape_relu(t, branch);
  branch = tape_batchnorm(t, branch, g1, b1, s1, mode, u1);
  branch = tape_conv2d(t, branch, w2, d2);
  branch = tape_relu(t, branch);
  branch = tape_batchnorm(t, branch, g2, b2, s2, mode, u2);
  return tape_add(t, branch, x);
}

struct NetGraph {
  GradTape tape;
  TapedParams ids;
  GradTape::ValueId input = 0;
  GradTape::ValueId after_frontend = 0;  // post-ReLU volume
  TailStages stages;
  GradTape::ValueId logits = 0;
  std::array<BatchNormState, 7> bn_updated;
};

NetGraph build_network(const Tensor& batch, const ModelParams& p, Mode mode) {
  check_batch_shape(batch);
  NetGraph g;
  g.ids = push_params(g.tape, p);
  g.input = g.tape.leaf(batch);

  auto conv = tape_frontend_conv(g.tape, g.input, g.ids.frontend_w,
                                 p.frontend_spec);
  g.after_frontend = tape_relu(g.tape, conv);

  tape_network_tail(g.tape, g.after_frontend, g.ids, p, mode, &g.bn_updated,
                    &g.stages);
  g.logits = tape_dense(g.tape, g.stages.pooled, g.ids.dense_w, g.ids.dense_b);
  return g;
}

}  // namespace

TapedParams push_params(GradTape& tape, const ModelParams& p) {
  TapedParams ids;
  ids.frontend_w = tape.leaf(p.frontend_w);
  ids.conv_in_w = tape.leaf(p.conv_in_w);
  for (std::size_t i = 0; i < p.res_conv_w.size(); ++i) {
    ids.res_conv_w[i] = tape.leaf(p.res_conv_w[i]);
  }
  ids.final_conv_w = tape.leaf(p.final_conv_w);
  for (std::size_t i = 0; i < p.bn.size(); ++i) {
    ids.bn_gamma[i] = tape.leaf(p.bn[i].gamma);
    ids.bn_beta[i] = tape.leaf(p.bn[i].beta);
  }
  ids.dense_w = tape.leaf(p.dense_w);
  ids.dense_b = tape.leaf(p.dense_b);
  return ids;
}

GradTape::ValueId tape_network_tail(GradTape& tape, GradTape::ValueId volume,
                                    const TapedParams& ids,
                                    const ModelParams& p, Mode mode,
                                    std::array<BatchNormState, 7>* bn_updated,
                                    TailStages* stages) {
  std::array<BatchNormState, 7> local;
  std::array<BatchNormState, 7>& upd = bn_updated ? *bn_updated : local;
  TailStages local_stages;
  TailStages& st = stages ? *stages : local_stages;

  auto x = tape_conv2d(tape, volume, ids.conv_in_w, conv_spec({1, 1}));
  st.conv_in = x;

  const auto& rates = p.dilations.rates;
  for (std::size_t block = 0; block < 3; ++block) {
    const std::size_t c1 = 2 * block, c2 = 2 * block + 1;
    x = tape_residual(tape, x, ids.res_conv_w[c1], ids.res_conv_w[c2],
                      ids.bn_gamma[c1], ids.bn_beta[c1], ids.bn_gamma[c2],
                      ids.bn_beta[c2], p.bn[c1], p.bn[c2], conv_spec(rates[c1]),
                      conv_spec(rates[c2]), mode, &upd[c1], &upd[c2]);
    st.blocks[block] = x;
  }

  st.final_conv = tape_conv2d(tape, x, ids.final_conv_w, conv_spec(rates[6]));
  st.final_bn = tape_batchnorm(tape, st.final_conv, ids.bn_gamma[6],
                               ids.bn_beta[6], p.bn[6], mode, &upd[6]);
  st.pooled = tape_global_avg_pool(tape, st.final_bn);
  return st.pooled;
}

Tensor frontend(const Tensor& batch, const ModelParams& p) {
  check_batch_shape(batch);
  return relu(frontend_conv_batch(batch, p.frontend_w, p.frontend_spec));
}

ResidualBlockResult residual_block(const Tensor& x, const Tensor& w1,
                                   const Tensor& w2, const BatchNormState& bn1,
                                   const BatchNormState& bn2,
                                   const Conv2dSpec& d1, const Conv2dSpec& d2,
                                   Mode mode) {
  ResidualBlockResult r;
  BatchNormResult n1 =
      batchnorm_forward(relu(conv2d_dilated_forward(x, w1, d1)), bn1, mode);
  BatchNormResult n2 =
      batchnorm_forward(relu(conv2d_dilated_forward(n1.y, w2, d2)), bn2, mode);
  r.y = std::move(n2.y);
  r.y += x;
  r.bn1 = std::move(n1.state);
  r.bn2 = std::move(n2.state);
  return r;
}

Tensor forward(const Tensor& batch, const ModelParams& p, Mode mode) {
  NetGraph g = build_network(batch, p, mode);
  return softmax(g.tape.value(g.logits));
}

ForwardTrace forward_trace(const Tensor& batch, const ModelParams& p,
                           Mode mode) {
  NetGraph g = build_network(batch, p, mode);
  ForwardTrace t;
  t.after_frontend = g.tape.value(g.after_frontend);
  t.after_conv_in = g.tape.value(g.stages.conv_in);
  for (std::size_t i = 0; i < 3; ++i) {
    t.after_block[i] = g.tape.value(g.stages.blocks[i]);
  }
  t.after_final_conv = g.tape.value(g.stages.final_conv);
  t.after_final_bn = g.tape.value(g.stages.final_bn);
  t.pooled = g.tape.value(g.stages.pooled);
  t.probs = softmax(g.tape.value(g.logits));
  return t;
}

BatchGradients loss_and_gradients(const Tensor& batch,
                                  const std::vector<int>& labels,
                                  const ModelParams& p) {
  NetGraph g = build_network(batch, p, Mode::kTrain);
  BatchGradients out;
  const auto loss_id =
      tape_softmax_xent_mean(g.tape, g.logits, labels, &out.probs);
  out.loss = g.tape.value(loss_id)[0];
  out.bn_updated = g.bn_updated;

  const std::vector<Tensor> grads = g.tape.backward(loss_id, Tensor::scalar(1.0));
  std::vector<GradTape::ValueId> order;
  order.push_back(g.ids.frontend_w);
  order.push_back(g.ids.conv_in_w);
  for (auto id : g.ids.res_conv_w) order.push_back(id);
  order.push_back(g.ids.final_conv_w);
  for (std::size_t i = 0; i < 7; ++i) {
    order.push_back(g.ids.bn_gamma[i]);
    order.push_back(g.ids.bn_beta[i]);
  }
  order.push_back(g.ids.dense_w);
  order.push_back(g.ids.dense_b);

  out.grads.reserve(order.size());
  for (auto id : order) {
    if (grads[id].empty()) {
      out.grads.emplace_back(g.tape.value(id).shape());
    } else {
      out.grads.push_back(grads[id]);
    }
  }
  return out;
}

// ---- weight file ----

namespace {

constexpr char kMagic[4] = {'M', 'I', 'R', 'N'};
constexpr std::uint8_t kVersion = 0x01;

struct NamedArray {
  std::string name;
  Tensor* tensor;
};

std::vector<NamedArray> weight_arrays(ModelParams& p) {
  std::vector<NamedArray> arrays;
  const auto& names = trainable_names();
  const auto params = trainable_params(p);
  // trainables in canonical order, with the running moments of each batch
  // norm appended right after its beta
  for (std::size_t i = 0; i < params.size(); ++i) {
    arrays.push_back({names[i], params[i]});
    if (names[i].size() > 4 &&
        names[i].compare(names[i].size() - 5, 5, "_beta") == 0) {
      const std::string stem = names[i].substr(0, names[i].size() - 5);
      const std::size_t bn_index = static_cast<std::size_t>(stem[2] - '1');
      arrays.push_back({stem + "_mean", &p.bn[bn_index].running_mean});
      arrays.push_back({stem + "_var", &p.bn[bn_index].running_var});
    }
  }
  return arrays;
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64_le(std::ostream& os, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

bool read_bytes(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint32_t read_u32_le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!read_bytes(is, b, 4)) throw TruncatedError("truncated weight file " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

double read_f64_le(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!read_bytes(is, b, 8)) throw TruncatedError("truncated weight file " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_weights(const ModelParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));

  ModelParams& mut = const_cast<ModelParams&>(p);
  for (const NamedArray& a : weight_arrays(mut)) {
    os.put(static_cast<char>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    os.put(static_cast<char>(a.tensor->rank()));
    for (std::size_t e : a.tensor->shape()) {
      write_u32_le(os, static_cast<std::uint32_t>(e));
    }
    for (std::size_t i = 0; i < a.tensor->size(); ++i) {
      write_f64_le(os, (*a.tensor)[i]);
    }
  }
  if (!os) throw Error("write failed: " + path);
}

ModelParams load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);

  char magic[4];
  if (!read_bytes(is, magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagicError("not a weight file: " + path);
  }
  char version = 0;
  if (!is.get(version) || static_cast<std::uint8_t>(version) != kVersion) {
    throw BadMagicError("unsupported weight file version in " + path);
  }

  ModelParams p = init_model(0);
  for (const NamedArray& a : weight_arrays(p)) {
    unsigned char name_len = 0;
    if (!read_bytes(is, &name_len, 1)) {
      throw TruncatedError("truncated weight file " + path);
    }
    std::string name(name_len, '\0');
    if (!read_bytes(is, name.data(), name_len)) {
      throw TruncatedError("truncated weight file " + path);
    }
    if (name != a.name) {
      throw ArrayMismatchError("expected array '" + a.name + "', found '" +
                               name + "' in " + path);
    }
    unsigned char rank = 0;
    if (!read_bytes(is, &rank, 1)) {
      throw TruncatedError("truncated weight file " + path);
    }
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = read_u32_le(is, path);
    if (shape != a.tensor->shape()) {
      throw ArrayMismatchError("array '" + a.name + "' has shape " +
                               shape_to_string(shape) + ", expected " +
                               a.tensor->shape_str() + " in " + path);
    }
    for (std::size_t i = 0; i < a.tensor->size(); ++i) {
      (*a.tensor)[i] = read_f64_le(is, path);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing data after the last array in " + path);
  }
  return p;
}

}  // namespace mirn
