// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "coopgen/errors.hpp"
#include "coopgen/rng.hpp"

namespace coopgen {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

double layer_norm_row(const double* x, const double* gain, const double* bias, double* y,
                      std::size_t n) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  return rstd;
}

// dx += LN backward for one row; accumulates gain/bias gradients.
void layer_norm_row_backward(const double* x, double rstd, const double* gain, const double* dy,
                             double* dx, double* d_gain, double* d_bias, std::size_t n,
                             std::vector<double>& scratch) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<double>(n);
  scratch.resize(2 * n);
  double* xhat = scratch.data();
  double* dxhat = scratch.data() + n;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    xhat[j] = (x[j] - mean) * rstd;
    dxhat[j] = dy[j] * gain[j];
    d_gain[j] += dy[j] * xhat[j];
    d_bias[j] += dy[j];
    m1 += dxhat[j];
    m2 += dxhat[j] * xhat[j];
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) dx[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
}

// One query row against `count` cached keys for one head. Shared verbatim by
// the full and the incremental path so both produce identical bits.
thread_local std::uint64_t kernel_scores = 0;

void attend(const double* q, const double* const* keys, const double* const* values,
            std::size_t count, std::size_t offset, std::size_t dim, double scale, double* probs,
            double* out) {
  kernel_scores += count;
  for (std::size_t j = 0; j < count; ++j) {
    const double* k = keys[j] + offset;
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) s += q[d] * k[d];
    probs[j] = s * scale;
  }
  softmax_in_place({probs, count});
  std::fill(out, out + dim, 0.0);
  for (std::size_t j = 0; j < count; ++j) {
    const double a = probs[j];
    const double* v = values[j] + offset;
    for (std::size_t d = 0; d < dim; ++d) out[d] += a * v[d];
  }
}

// y = x W + b for `rows` rows.
void affine(const Model& model, const double* x, std::size_t w_off, std::size_t b_off, double* y,
            std::size_t rows, std::size_t in, std::size_t out) {
  kernels::gemm_nn({x, rows * in}, {model.at(w_off), in * out}, {y, rows * out}, rows, in, out);
  kernels::add_row_bias({y, rows * out}, {model.at(b_off), out}, rows, out);
}

void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside model vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }
}

Matrix run_full(const Model& model, std::span<const TokenId> tokens, ForwardTrace* trace,
                CostCounters* counters) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& lay = model.layout();
  const std::size_t t = tokens.size();
  if (t == 0) throw CapacityError("forward pass needs at least one token");
  if (t > cfg.max_positions) {
    throw CapacityError("sequence of " + std::to_string(t) + " tokens exceeds max_positions " +
                        std::to_string(cfg.max_positions));
  }
  check_tokens(cfg, tokens);
  const std::size_t h = cfg.hidden_size;
  const std::size_t f = cfg.ffn_size();
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = cfg.mask_mode == MaskMode::causal;

  Matrix x(t, h);
  for (std::size_t i = 0; i < t; ++i) {
    const double* te = model.at(lay.token_embedding) + static_cast<std::size_t>(tokens[i]) * h;
    const double* pe = model.at(lay.position_embedding) + i * h;
    auto row = x.row(i);
    for (std::size_t j = 0; j < h; ++j) row[j] = te[j] + pe[j];
  }

  if (trace) {
    trace->tokens.assign(tokens.begin(), tokens.end());
    trace->layers.clear();
    trace->layers.reserve(cfg.num_layers);
  }

  std::vector<const double*> key_rows(t), value_rows(t);
  for (const LayerOffsets& off : lay.layers) {
    ForwardTrace::Layer L;
    L.input = x;
    L.norm1 = Matrix(t, h);
    L.norm1_rstd.resize(t);
    for (std::size_t i = 0; i < t; ++i) {
      L.norm1_rstd[i] = layer_norm_row(x.row(i).data(), model.at(off.ln1_gain),
                                       model.at(off.ln1_bias), L.norm1.row(i).data(), h);
    }
    L.q = Matrix(t, h);
    L.k = Matrix(t, h);
    L.v = Matrix(t, h);
    affine(model, L.norm1.values().data(), off.wq, off.bq, L.q.values().data(), t, h, h);
    affine(model, L.norm1.values().data(), off.wk, off.bk, L.k.values().data(), t, h, h);
    affine(model, L.norm1.values().data(), off.wv, off.bv, L.v.values().data(), t, h, h);
    for (std::size_t j = 0; j < t; ++j) {
      key_rows[j] = L.k.row(j).data();
      value_rows[j] = L.v.row(j).data();
    }
    L.context = Matrix(t, h);
    L.probs.assign(heads * t * t, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t count = causal ? i + 1 : t;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        attend(L.q.row(i).data() + hd * dh, key_rows.data(), value_rows.data(), count, hd * dh, dh,
               scale, L.probs.data() + (hd * t + i) * t, L.context.row(i).data() + hd * dh);
      }
    }
    Matrix attn_out(t, h);
    affine(model, L.context.values().data(), off.wo, off.bo, attn_out.values().data(), t, h, h);
    L.mid = Matrix(t, h);
    for (std::size_t n = 0; n < t * h; ++n) L.mid.values()[n] = x.values()[n] + attn_out.values()[n];

    L.norm2 = Matrix(t, h);
    L.norm2_rstd.resize(t);
    for (std::size_t i = 0; i < t; ++i) {
      L.norm2_rstd[i] = layer_norm_row(L.mid.row(i).data(), model.at(off.ln2_gain),
                                       model.at(off.ln2_bias), L.norm2.row(i).data(), h);
    }
    L.ffn_pre = Matrix(t, f);
    affine(model, L.norm2.values().data(), off.w1, off.b1, L.ffn_pre.values().data(), t, h, f);
    L.ffn_act = Matrix(t, f);
    for (std::size_t n = 0; n < t * f; ++n) L.ffn_act.values()[n] = gelu(L.ffn_pre.values()[n]);
    Matrix ffn_out(t, h);
    affine(model, L.ffn_act.values().data(), off.w2, off.b2, ffn_out.values().data(), t, f, h);
    for (std::size_t n = 0; n < t * h; ++n) x.values()[n] = L.mid.values()[n] + ffn_out.values()[n];

    if (trace) trace->layers.push_back(std::move(L));
  }

  Matrix final_norm(t, h);
  std::vector<double> final_rstd(t);
  for (std::size_t i = 0; i < t; ++i) {
    final_rstd[i] = layer_norm_row(x.row(i).data(), model.at(lay.final_gain),
                                   model.at(lay.final_bias), final_norm.row(i).data(), h);
  }

  const std::size_t width = cfg.head_width();
  Matrix logits;
  if (cfg.head_kind == HeadKind::lm) {
    logits = Matrix(t, width);
    affine(model, final_norm.values().data(), lay.head_weight, lay.head_bias,
           logits.values().data(), t, h, width);
  } else {
    logits = Matrix(1, width);
    affine(model, final_norm.row(t - 1).data(), lay.head_weight, lay.head_bias,
           logits.values().data(), 1, h, width);
  }

  if (trace) {
    trace->output = std::move(x);
    trace->final_norm = std::move(final_norm);
    trace->final_rstd = std::move(final_rstd);
  }
  if (counters) {
    counters->forward_passes += 1;
    counters->attention_scores += full_pass_attention_scores(cfg, t);
    counters->tokens_scored += t;
  }
  return logits;
}

// Little-endian byte stream helpers for checkpoints.
class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& data, std::size_t pos) : data_(data), pos_(pos) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint is truncated", CheckpointFailure::truncated);
  }
  const std::vector<unsigned char>& data_;
  std::size_t pos_;
};

constexpr char kMagic[4] = {'C', 'G', 'C', 'K'};

}  // namespace

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden_size == 0 || num_heads == 0) {
    throw ParameterError("model needs at least one layer, one head and a non-zero hidden size");
  }
  if (hidden_size % num_heads != 0) throw ParameterError("hidden_size must be divisible by num_heads");
  if (max_positions < kMaxSequenceLength) {
    throw ParameterError("max_positions must be at least " + std::to_string(kMaxSequenceLength));
  }
  if (vocab_size <= kNumSpecialTokens) throw ParameterError("vocabulary has no characters");
  if (head_kind == HeadKind::classifier && num_classes < 2) {
    throw ParameterError("classifier head needs at least 2 classes");
  }
  if (num_control_tokens > 0) {
    if (head_kind != HeadKind::lm || mask_mode != MaskMode::causal || num_control_tokens != num_classes ||
        num_control_tokens >= vocab_size - kNumSpecialTokens) {
      throw ParameterError("class-conditional LM needs a causal lm head with one control token per class");
    }
  }
}

ParamLayout ParamLayout::for_config(const ModelConfig& cfg) {
  ParamLayout lay;
  const std::size_t h = cfg.hidden_size;
  const std::size_t f = cfg.ffn_size();
  std::size_t cursor = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = cursor;
    cursor += n;
    return at;
  };
  lay.token_embedding = take(cfg.vocab_size * h);
  lay.position_embedding = take(cfg.max_positions * h);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    LayerOffsets o{};
    o.ln1_gain = take(h);
    o.ln1_bias = take(h);
    o.wq = take(h * h);
    o.bq = take(h);
    o.wk = take(h * h);
    o.bk = take(h);
    o.wv = take(h * h);
    o.bv = take(h);
    o.wo = take(h * h);
    o.bo = take(h);
    o.ln2_gain = take(h);
    o.ln2_bias = take(h);
    o.w1 = take(h * f);
    o.b1 = take(f);
    o.w2 = take(f * h);
    o.b2 = take(h);
    lay.layers.push_back(o);
  }
  lay.final_gain = take(h);
  lay.final_bias = take(h);
  lay.head_weight = take(h * cfg.head_width());
  lay.head_bias = take(cfg.head_width());
  lay.total = cursor;
  return lay;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  layout_ = ParamLayout::for_config(config_);
  params_.assign(layout_.total, 0.0);
  const std::size_t h = config_.hidden_size;
  for (const auto& o : layout_.layers) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(o.ln1_gain), h, 1.0);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(o.ln2_gain), h, 1.0);
  }
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.final_gain), h, 1.0);
}

Model Model::initialize(ModelConfig config, std::uint64_t seed) {
  Model model(std::move(config));
  Rng rng(seed);
  const ModelConfig& cfg = model.config_;
  const std::size_t h = cfg.hidden_size;
  const std::size_t f = cfg.ffn_size();
  auto fill = [&](std::size_t offset, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) model.params_[offset + i] = kInitStd * standard_normal(rng);
  };
  const ParamLayout& lay = model.layout_;
  fill(lay.token_embedding, cfg.vocab_size * h);
  fill(lay.position_embedding, cfg.max_positions * h);
  for (const auto& o : lay.layers) {
    fill(o.wq, h * h);
    fill(o.wk, h * h);
    fill(o.wv, h * h);
    fill(o.wo, h * h);
    fill(o.w1, h * f);
    fill(o.w2, f * h);
  }
  fill(lay.head_weight, h * cfg.head_width());
  return model;
}

IncrementalState fork_state(const IncrementalState& state) { return state; }

std::uint64_t attention_kernel_tally() { return kernel_scores; }

std::uint64_t full_pass_attention_scores(const ModelConfig& cfg, std::size_t length) {
  const std::uint64_t per_head = cfg.mask_mode == MaskMode::causal
                                     ? static_cast<std::uint64_t>(length) * (length + 1) / 2
                                     : static_cast<std::uint64_t>(length) * length;
  return cfg.num_layers * cfg.num_heads * per_head;
}

std::uint64_t incremental_attention_scores(const ModelConfig& cfg, std::size_t new_length) {
  return cfg.num_layers * cfg.num_heads * static_cast<std::uint64_t>(new_length);
}

Matrix forward_full(const Model& model, std::span<const TokenId> tokens, CostCounters* counters) {
  return run_full(model, tokens, nullptr, counters);
}

Matrix forward_train(const Model& model, std::span<const TokenId> tokens, ForwardTrace& trace) {
  return run_full(model, tokens, &trace, nullptr);
}

std::vector<double> forward_incremental(const Model& model, IncrementalState& state, TokenId token,
                                        CostCounters* counters) {
  const ModelConfig& cfg = model.config();
  if (cfg.mask_mode != MaskMode::causal) {
    throw ModeError("incremental decoding requires a causal (unidirectional) model");
  }
  const std::size_t pos = state.length();
  if (pos + 1 > cfg.max_positions) {
    throw CapacityError("incremental state already holds max_positions tokens");
  }
  const TokenId one[1] = {token};
  check_tokens(cfg, one);

  const ParamLayout& lay = model.layout();
  const std::size_t h = cfg.hidden_size;
  const std::size_t f = cfg.ffn_size();
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> x(h), norm(h), q(h), ctx(h), tmp(h), pre(f), act(f);
  const double* te = model.at(lay.token_embedding) + static_cast<std::size_t>(token) * h;
  const double* pe = model.at(lay.position_embedding) + pos * h;
  for (std::size_t j = 0; j < h; ++j) x[j] = te[j] + pe[j];

  auto block = std::make_shared<PositionCache>();
  block->keys.resize(cfg.num_layers * h);
  block->values.resize(cfg.num_layers * h);
  std::vector<const double*> key_rows(pos + 1), value_rows(pos + 1);
  std::vector<double> probs(pos + 1);

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const LayerOffsets& off = lay.layers[l];
    layer_norm_row(x.data(), model.at(off.ln1_gain), model.at(off.ln1_bias), norm.data(), h);
    double* k_new = block->keys.data() + l * h;
    double* v_new = block->values.data() + l * h;
    affine(model, norm.data(), off.wq, off.bq, q.data(), 1, h, h);
    affine(model, norm.data(), off.wk, off.bk, k_new, 1, h, h);
    affine(model, norm.data(), off.wv, off.bv, v_new, 1, h, h);
    for (std::size_t j = 0; j < pos; ++j) {
      key_rows[j] = state.positions_[j]->keys.data() + l * h;
      value_rows[j] = state.positions_[j]->values.data() + l * h;
    }
    key_rows[pos] = k_new;
    value_rows[pos] = v_new;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      attend(q.data() + hd * dh, key_rows.data(), value_rows.data(), pos + 1, hd * dh, dh, scale,
             probs.data(), ctx.data() + hd * dh);
    }
    affine(model, ctx.data(), off.wo, off.bo, tmp.data(), 1, h, h);
    for (std::size_t j = 0; j < h; ++j) x[j] = x[j] + tmp[j];
    layer_norm_row(x.data(), model.at(off.ln2_gain), model.at(off.ln2_bias), norm.data(), h);
    affine(model, norm.data(), off.w1, off.b1, pre.data(), 1, h, f);
    for (std::size_t j = 0; j < f; ++j) act[j] = gelu(pre[j]);
    affine(model, act.data(), off.w2, off.b2, tmp.data(), 1, f, h);
    for (std::size_t j = 0; j < h; ++j) x[j] = x[j] + tmp[j];
  }
  layer_norm_row(x.data(), model.at(lay.final_gain), model.at(lay.final_bias), norm.data(), h);
  std::vector<double> logits(cfg.head_width());
  affine(model, norm.data(), lay.head_weight, lay.head_bias, logits.data(), 1, h, logits.size());

  state.positions_.push_back(std::move(block));
  if (counters) {
    counters->forward_passes += 1;
    counters->attention_scores += incremental_attention_scores(cfg, pos + 1);
    counters->tokens_scored += 1;
  }
  return logits;
}

void backward(const Model& model, const ForwardTrace& trace, const Matrix& d_logits,
              std::span<double> grads) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& lay = model.layout();
  if (grads.size() != lay.total) throw DimensionError("gradient buffer does not match the model");
  const std::size_t t = trace.tokens.size();
  const std::size_t h = cfg.hidden_size;
  const std::size_t f = cfg.ffn_size();
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_dim();
  const std::size_t width = cfg.head_width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = cfg.mask_mode == MaskMode::causal;
  double* g = grads.data();
  std::vector<double> scratch;

  Matrix d_norm(t, h);
  if (cfg.head_kind == HeadKind::lm) {
    if (d_logits.rows() != t || d_logits.cols() != width) throw DimensionError("d_logits shape");
    kernels::gemm_tn_acc(trace.final_norm.values(), d_logits.values(), {g + lay.head_weight, h * width},
                         t, h, width);
    kernels::add_column_sums(d_logits.values(), {g + lay.head_bias, width}, t, width);
    kernels::gemm_nt(d_logits.values(), {model.at(lay.head_weight), h * width}, d_norm.values(), t,
                     width, h);
  } else {
    if (d_logits.rows() != 1 || d_logits.cols() != width) throw DimensionError("d_logits shape");
    kernels::gemm_tn_acc(trace.final_norm.row(t - 1), d_logits.values(),
                         {g + lay.head_weight, h * width}, 1, h, width);
    kernels::add_column_sums(d_logits.values(), {g + lay.head_bias, width}, 1, width);
    kernels::gemm_nt(d_logits.values(), {model.at(lay.head_weight), h * width}, d_norm.row(t - 1), 1,
                     width, h);
  }

  Matrix dx(t, h);
  for (std::size_t i = 0; i < t; ++i) {
    layer_norm_row_backward(trace.output.row(i).data(), trace.final_rstd[i], model.at(lay.final_gain),
                            d_norm.row(i).data(), dx.row(i).data(), g + lay.final_gain,
                            g + lay.final_bias, h, scratch);
  }

  Matrix d_act(t, f), d_n2(t, h), d_mid(t, h), d_ctx(t, h), dq(t, h), dk(t, h), dv(t, h), d_n1(t, h);
  std::vector<double> d_a(t), d_s(t);
  for (std::size_t li = cfg.num_layers; li-- > 0;) {
    const LayerOffsets& off = lay.layers[li];
    const ForwardTrace::Layer& L = trace.layers[li];

    // x_out = mid + gelu(norm2 W1 + b1) W2 + b2
    kernels::gemm_nt(dx.values(), {model.at(off.w2), f * h}, d_act.values(), t, h, f);
    kernels::gemm_tn_acc(L.ffn_act.values(), dx.values(), {g + off.w2, f * h}, t, f, h);
    kernels::add_column_sums(dx.values(), {g + off.b2, h}, t, h);
    for (std::size_t n = 0; n < t * f; ++n) d_act.values()[n] *= gelu_derivative(L.ffn_pre.values()[n]);
    kernels::gemm_tn_acc(L.norm2.values(), d_act.values(), {g + off.w1, h * f}, t, h, f);
    kernels::add_column_sums(d_act.values(), {g + off.b1, f}, t, f);
    kernels::gemm_nt(d_act.values(), {model.at(off.w1), h * f}, d_n2.values(), t, f, h);
    d_mid = dx;
    for (std::size_t i = 0; i < t; ++i) {
      layer_norm_row_backward(L.mid.row(i).data(), L.norm2_rstd[i], model.at(off.ln2_gain),
                              d_n2.row(i).data(), d_mid.row(i).data(), g + off.ln2_gain,
                              g + off.ln2_bias, h, scratch);
    }

    // mid = input + context Wo + bo
    kernels::gemm_nt(d_mid.values(), {model.at(off.wo), h * h}, d_ctx.values(), t, h, h);
    kernels::gemm_tn_acc(L.context.values(), d_mid.values(), {g + off.wo, h * h}, t, h, h);
    kernels::add_column_sums(d_mid.values(), {g + off.bo, h}, t, h);

    std::fill(dq.values().begin(), dq.values().end(), 0.0);
    std::fill(dk.values().begin(), dk.values().end(), 0.0);
    std::fill(dv.values().begin(), dv.values().end(), 0.0);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t o = hd * dh;
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t count = causal ? i + 1 : t;
        const double* a = L.probs.data() + (hd * t + i) * t;
        const double* dc = d_ctx.row(i).data() + o;
        double row_dot = 0.0;
        for (std::size_t j = 0; j < count; ++j) {
          const double* vj = L.v.row(j).data() + o;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += dc[d] * vj[d];
          d_a[j] = s;
          row_dot += a[j] * s;
          double* dvj = dv.row(j).data() + o;
          for (std::size_t d = 0; d < dh; ++d) dvj[d] += a[j] * dc[d];
        }
        const double* qi = L.q.row(i).data() + o;
        double* dqi = dq.row(i).data() + o;
        for (std::size_t j = 0; j < count; ++j) {
          const double ds = a[j] * (d_a[j] - row_dot) * scale;
          if (ds == 0.0) continue;
          const double* kj = L.k.row(j).data() + o;
          double* dkj = dk.row(j).data() + o;
          for (std::size_t d = 0; d < dh; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
          }
        }
      }
    }
    kernels::gemm_tn_acc(L.norm1.values(), dq.values(), {g + off.wq, h * h}, t, h, h);
    kernels::gemm_tn_acc(L.norm1.values(), dk.values(), {g + off.wk, h * h}, t, h, h);
    kernels::gemm_tn_acc(L.norm1.values(), dv.values(), {g + off.wv, h * h}, t, h, h);
    kernels::add_column_sums(dq.values(), {g + off.bq, h}, t, h);
    kernels::add_column_sums(dk.values(), {g + off.bk, h}, t, h);
    kernels::add_column_sums(dv.values(), {g + off.bv, h}, t, h);
    kernels::gemm_nt(dq.values(), {model.at(off.wq), h * h}, d_n1.values(), t, h, h);
    kernels::gemm_nt(dk.values(), {model.at(off.wk), h * h}, d_n1.values(), t, h, h, true);
    kernels::gemm_nt(dv.values(), {model.at(off.wv), h * h}, d_n1.values(), t, h, h, true);

    dx = d_mid;
    for (std::size_t i = 0; i < t; ++i) {
      layer_norm_row_backward(L.input.row(i).data(), L.norm1_rstd[i], model.at(off.ln1_gain),
                              d_n1.row(i).data(), dx.row(i).data(), g + off.ln1_gain,
                              g + off.ln1_bias, h, scratch);
    }
  }

  for (std::size_t i = 0; i < t; ++i) {
    double* gt = g + lay.token_embedding + static_cast<std::size_t>(trace.tokens[i]) * h;
    double* gp = g + lay.position_embedding + i * h;
    const auto row = dx.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      gt[j] += row[j];
      gp[j] += row[j];
    }
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.config();
  Writer config_block;
  config_block.u32(static_cast<std::uint32_t>(cfg.num_layers));
  config_block.u32(static_cast<std::uint32_t>(cfg.hidden_size));
  config_block.u32(static_cast<std::uint32_t>(cfg.num_heads));
  config_block.u32(static_cast<std::uint32_t>(cfg.max_positions));
  config_block.u32(static_cast<std::uint32_t>(cfg.vocab_size));
  config_block.u32(static_cast<std::uint32_t>(cfg.head_kind));
  config_block.u32(static_cast<std::uint32_t>(cfg.num_classes));
  config_block.u32(static_cast<std::uint32_t>(cfg.num_control_tokens));
  config_block.u32(static_cast<std::uint32_t>(cfg.mask_mode));
  config_block.u32(static_cast<std::uint32_t>(cfg.alphabet.size()));
  config_block.raw(cfg.alphabet);

  Writer payload;
  payload.u32(static_cast<std::uint32_t>(config_block.bytes.size()));
  payload.bytes.insert(payload.bytes.end(), config_block.bytes.begin(), config_block.bytes.end());
  const auto params = model.parameters();
  payload.u64(params.size());
  for (double p : params) payload.f32(static_cast<float>(p));

  Writer file;
  file.raw({kMagic, 4});
  file.u32(kCheckpointVersion);
  file.bytes.insert(file.bytes.end(), payload.bytes.begin(), payload.bytes.end());
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), payload.bytes.data(), static_cast<uInt>(payload.bytes.size()));
  file.u32(static_cast<std::uint32_t>(crc));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(file.bytes.data()), static_cast<std::streamsize>(file.bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 4) throw CheckpointError("checkpoint is truncated", CheckpointFailure::truncated);
  if (std::memcmp(data.data(), kMagic, 4) != 0) {
    throw CheckpointError(path.string() + " is not a coopgen checkpoint", CheckpointFailure::bad_magic);
  }
  Reader header(data, 4);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")",
                          CheckpointFailure::version);
  }
  const std::size_t payload_start = header.position();
  Reader r(data, payload_start);
  const std::uint32_t config_len = r.u32();
  const std::size_t config_start = r.position();
  ModelConfig cfg;
  cfg.num_layers = r.u32();
  cfg.hidden_size = r.u32();
  cfg.num_heads = r.u32();
  cfg.max_positions = r.u32();
  cfg.vocab_size = r.u32();
  cfg.head_kind = static_cast<HeadKind>(r.u32());
  cfg.num_classes = r.u32();
  cfg.num_control_tokens = r.u32();
  cfg.mask_mode = static_cast<MaskMode>(r.u32());
  cfg.alphabet = r.raw(r.u32());
  if (r.position() - config_start != config_len) {
    throw CheckpointError("checkpoint config block has unexpected length", CheckpointFailure::truncated);
  }
  const std::uint64_t count = r.u64();
  if (data.size() < r.position() || (data.size() - r.position()) / 4 < count + 1) {
    throw CheckpointError("checkpoint is truncated", CheckpointFailure::truncated);
  }
  std::vector<double> values(count);
  for (auto& v : values) v = r.f32();
  const std::size_t payload_end = r.position();
  const std::uint32_t stored = r.u32();
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), data.data() + payload_start,
                          static_cast<uInt>(payload_end - payload_start));
  if (static_cast<std::uint32_t>(crc) != stored) {
    throw CheckpointError("checkpoint checksum mismatch in " + path.string(), CheckpointFailure::checksum);
  }
  if (cfg.head_kind != HeadKind::lm && cfg.head_kind != HeadKind::classifier) {
    throw CheckpointError("checkpoint has an unknown head kind", CheckpointFailure::checksum);
  }
  Model model(cfg);
  if (model.parameters().size() != count) {
    throw CheckpointError("checkpoint parameter count does not match its config", CheckpointFailure::truncated);
  }
  std::copy(values.begin(), values.end(), model.parameters().begin());
  return model;
}

}  // namespace coopgen
