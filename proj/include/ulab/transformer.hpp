// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ulab/errors.hpp"
#include "ulab/param_layout.hpp"
#include "ulab/vocab.hpp"

namespace ulab {

struct TransformerConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int context = 64;
  bool tied_output = false;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  bool operator==(const TransformerConfig&) const = default;
};

/// Pre-LayerNorm decoder-only transformer (learned positions, GELU MLP) with
/// an explicit reverse pass. All learnable weights live in one flat vector.
template <typename ScalarT>
class Transformer {
 public:
  using Scalar = ScalarT;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct LayerTrace {
    Matrix x_in, ln1_hat, ln1_out;
    Vector ln1_rstd;
    Matrix qkv;
    std::vector<Matrix> probs;  // one T x T attention matrix per head
    Matrix att;
    Matrix x_mid, ln2_hat, ln2_out;
    Vector ln2_rstd;
    Matrix fc, act;
  };

  /// Activations kept by forward() for backward().
  struct Trace {
    std::vector<TokenId> ids;
    std::vector<LayerTrace> layers;
    Matrix lnf_hat, lnf_out;
    Vector lnf_rstd;
    Matrix logits;  // T x K, row t scores token t+1
  };

  explicit Transformer(const TransformerConfig& cfg) : cfg_(cfg) {
    build_layout();
    params_.resize(layout_.size());
    initialize();
  }

  Transformer(const TransformerConfig& cfg, Vector params)
      : cfg_(cfg), params_(std::move(params)) {
    build_layout();
    if (params_.size() != layout_.size()) {
      throw InputError("parameter vector has " + std::to_string(params_.size()) +
                       " entries, layout needs " + std::to_string(layout_.size()));
    }
    if (!params_.allFinite()) throw InputError("non-finite parameter");
  }

  const TransformerConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  int vocab_size() const { return cfg_.vocab_size; }
  int context() const { return cfg_.context; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  Trace forward(std::span<const TokenId> ids) const {
    Trace tr;
    run(ids, tr, /*all_logits=*/true);
    return tr;
  }

  /// Scores for the token following `ids`; skips the other T-1 logit rows.
  RowVector next_logits(std::span<const TokenId> ids) const {
    Trace tr;
    run(ids, tr, /*all_logits=*/false);
    return tr.logits.row(0);
  }

  /// Accumulates d(objective)/d(params) into `grad` given d(objective)/d(logits).
  void backward(const Trace& tr, const Matrix& dlogits, Vector& grad) const {
    const Eigen::Index T = static_cast<Eigen::Index>(tr.ids.size());
    const int d = cfg_.d_model;
    if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
    if (dlogits.rows() != T || dlogits.cols() != cfg_.vocab_size) {
      throw InputError("dlogits shape mismatch");
    }

    Matrix dx(T, d);
    if (cfg_.tied_output) {
      dx.noalias() = dlogits * view(wte_);
      gview(grad, wte_).noalias() += dlogits.transpose() * tr.lnf_out;
    } else {
      dx.noalias() = dlogits * view(w_out_).transpose();
      gview(grad, w_out_).noalias() += tr.lnf_out.transpose() * dlogits;
    }
    dx = ln_backward(dx, tr.lnf_hat, tr.lnf_rstd, view(lnf_gain_),
                     gview(grad, lnf_gain_), gview(grad, lnf_bias_));

    const int hs = d / cfg_.n_heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hs));
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const LayerSlots& s = layers_[static_cast<std::size_t>(l)];
      const LayerTrace& c = tr.layers[static_cast<std::size_t>(l)];

      // x_out = x_mid + act * W_proj + b_proj
      Matrix dact = dx * view(s.w_proj).transpose();
      gview(grad, s.w_proj).noalias() += c.act.transpose() * dx;
      gview(grad, s.b_proj).row(0) += dx.colwise().sum();
      Matrix dfc = dact;
      for (Eigen::Index i = 0; i < dfc.size(); ++i) {
        dfc.data()[i] *= gelu_grad(c.fc.data()[i]);
      }
      gview(grad, s.w_fc).noalias() += c.ln2_out.transpose() * dfc;
      gview(grad, s.b_fc).row(0) += dfc.colwise().sum();
      Matrix dln2 = dfc * view(s.w_fc).transpose();
      Matrix dmid = dx + ln_backward(dln2, c.ln2_hat, c.ln2_rstd, view(s.ln2_gain),
                                     gview(grad, s.ln2_gain), gview(grad, s.ln2_bias));

      // x_mid = x_in + att * W_o + b_o
      Matrix datt = dmid * view(s.w_o).transpose();
      gview(grad, s.w_o).noalias() += c.att.transpose() * dmid;
      gview(grad, s.b_o).row(0) += dmid.colwise().sum();

      Matrix dqkv = Matrix::Zero(T, 3 * d);
      for (int h = 0; h < cfg_.n_heads; ++h) {
        const auto q = c.qkv.middleCols(h * hs, hs);
        const auto k = c.qkv.middleCols(d + h * hs, hs);
        const auto v = c.qkv.middleCols(2 * d + h * hs, hs);
        const Matrix& p = c.probs[static_cast<std::size_t>(h)];
        const auto dout = datt.middleCols(h * hs, hs);
        Matrix dp = dout * v.transpose();
        dqkv.middleCols(2 * d + h * hs, hs).noalias() += p.transpose() * dout;
        Matrix ds = p.cwiseProduct(dp);
        const Vector rowdot = ds.rowwise().sum();
        ds -= p.cwiseProduct(rowdot.replicate(1, T));
        ds *= scale;
        dqkv.middleCols(h * hs, hs).noalias() += ds * k;
        dqkv.middleCols(d + h * hs, hs).noalias() += ds.transpose() * q;
      }
      gview(grad, s.w_qkv).noalias() += c.ln1_out.transpose() * dqkv;
      gview(grad, s.b_qkv).row(0) += dqkv.colwise().sum();
      Matrix dln1 = dqkv * view(s.w_qkv).transpose();
      dx = dmid + ln_backward(dln1, c.ln1_hat, c.ln1_rstd, view(s.ln1_gain),
                              gview(grad, s.ln1_gain), gview(grad, s.ln1_bias));
    }

    auto gwte = gview(grad, wte_);
    auto gwpe = gview(grad, wpe_);
    for (Eigen::Index t = 0; t < T; ++t) {
      gwte.row(tr.ids[static_cast<std::size_t>(t)]) += dx.row(t);
      gwpe.row(t) += dx.row(t);
    }
  }

 private:
  using ConstMap = Eigen::Map<const Matrix>;
  using Map = Eigen::Map<Matrix>;
  static constexpr Scalar kLnEps = Scalar(1e-5);

  struct LayerSlots {
    TensorSlot ln1_gain, ln1_bias, w_qkv, b_qkv, w_o, b_o;
    TensorSlot ln2_gain, ln2_bias, w_fc, b_fc, w_proj, b_proj;
  };

  void build_layout() {
    const int d = cfg_.d_model;
    if (cfg_.vocab_size < 4) throw InputError("vocab_size must be >= 4");
    if (d <= 0 || cfg_.n_layers < 0 || cfg_.n_heads <= 0 || cfg_.d_ff <= 0 ||
        cfg_.context <= 0) {
      throw InputError("transformer dimensions must be positive");
    }
    if (d % cfg_.n_heads != 0) throw InputError("d_model must divide by n_heads");
    wte_ = layout_.add("wte", cfg_.vocab_size, d);
    wpe_ = layout_.add("wpe", cfg_.context, d);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      LayerSlots s;
      s.ln1_gain = layout_.add(p + "ln1.gain", 1, d);
      s.ln1_bias = layout_.add(p + "ln1.bias", 1, d);
      s.w_qkv = layout_.add(p + "attn.w_qkv", d, 3 * d);
      s.b_qkv = layout_.add(p + "attn.b_qkv", 1, 3 * d);
      s.w_o = layout_.add(p + "attn.w_out", d, d);
      s.b_o = layout_.add(p + "attn.b_out", 1, d);
      s.ln2_gain = layout_.add(p + "ln2.gain", 1, d);
      s.ln2_bias = layout_.add(p + "ln2.bias", 1, d);
      s.w_fc = layout_.add(p + "mlp.w_fc", d, cfg_.d_ff);
      s.b_fc = layout_.add(p + "mlp.b_fc", 1, cfg_.d_ff);
      s.w_proj = layout_.add(p + "mlp.w_proj", cfg_.d_ff, d);
      s.b_proj = layout_.add(p + "mlp.b_proj", 1, d);
      layers_.push_back(s);
    }
    lnf_gain_ = layout_.add("lnf.gain", 1, d);
    lnf_bias_ = layout_.add("lnf.bias", 1, d);
    if (!cfg_.tied_output) w_out_ = layout_.add("w_out", d, cfg_.vocab_size);
  }

  void initialize() {
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double proj_std = cfg_.init_std / std::sqrt(2.0 * std::max(1, cfg_.n_layers));
    for (const auto& s : layout_.slots()) {
      auto block = params_.segment(s.offset, s.size());
      const auto ends_with = [&](const char* suffix) {
        const std::string suf(suffix);
        return s.name.size() >= suf.size() &&
               s.name.compare(s.name.size() - suf.size(), suf.size(), suf) == 0;
      };
      if (ends_with(".gain")) {
        block.setOnes();
      } else if (ends_with(".bias") || ends_with("b_qkv") || ends_with("b_out") ||
                 ends_with("b_fc") || ends_with("b_proj")) {
        block.setZero();
      } else {
        const double sd = (ends_with("attn.w_out") || ends_with("mlp.w_proj"))
                              ? proj_std
                              : cfg_.init_std;
        for (Eigen::Index i = 0; i < block.size(); ++i) {
          block(i) = static_cast<Scalar>(sd * normal(rng));
        }
      }
    }
  }

  ConstMap view(const TensorSlot& s) const {
    return ConstMap(params_.data() + s.offset, s.rows, s.cols);
  }
  static Map gview(Vector& g, const TensorSlot& s) {
    return Map(g.data() + s.offset, s.rows, s.cols);
  }

  static Scalar gelu(Scalar x) {
    using std::tanh;
    const Scalar c = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
    return Scalar(0.5) * x * (Scalar(1) + tanh(c * (x + Scalar(0.044715) * x * x * x)));
  }
  static Scalar gelu_grad(Scalar x) {
    using std::tanh;
    const Scalar c = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
    const Scalar th = tanh(c * (x + Scalar(0.044715) * x * x * x));
    const Scalar du = c * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
    return Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * x * (Scalar(1) - th * th) * du;
  }

  static void ln_forward(const Matrix& x, const ConstMap& gain, const ConstMap& bias,
                         Matrix& hat, Vector& rstd, Matrix& out) {
    const Eigen::Index T = x.rows();
    hat.resize(T, x.cols());
    rstd.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Scalar mean = x.row(t).mean();
      const auto centered = x.row(t).array() - mean;
      const Scalar var = centered.square().mean();
      const Scalar r = Scalar(1) / std::sqrt(var + kLnEps);
      hat.row(t) = centered * r;
      rstd(t) = r;
    }
    out = (hat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  }

  static Matrix ln_backward(const Matrix& dout, const Matrix& hat, const Vector& rstd,
                            const ConstMap& gain, Map ggain, Map gbias) {
    ggain.row(0) += dout.cwiseProduct(hat).colwise().sum();
    gbias.row(0) += dout.colwise().sum();
    const Matrix dhat = dout.array().rowwise() * gain.row(0).array();
    Matrix dx(dout.rows(), dout.cols());
    for (Eigen::Index t = 0; t < dout.rows(); ++t) {
      const Scalar m1 = dhat.row(t).mean();
      const Scalar m2 = dhat.row(t).cwiseProduct(hat.row(t)).mean();
      dx.row(t) = rstd(t) * (dhat.row(t).array() - m1 - hat.row(t).array() * m2);
    }
    return dx;
  }

  void run(std::span<const TokenId> ids, Trace& tr, bool all_logits) const {
    const Eigen::Index T = static_cast<Eigen::Index>(ids.size());
    const int d = cfg_.d_model;
    if (T == 0) throw InputError("empty input sequence");
    if (T > cfg_.context) throw InputError("sequence longer than model context");
    for (TokenId id : ids) {
      if (id < 0 || id >= cfg_.vocab_size) {
        throw InputError("token id " + std::to_string(id) + " out of range");
      }
    }
    tr.ids.assign(ids.begin(), ids.end());
    const auto wte = view(wte_);
    const auto wpe = view(wpe_);
    Matrix x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) x.row(t) = wte.row(ids[static_cast<std::size_t>(t)]) + wpe.row(t);

    const int hs = d / cfg_.n_heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hs));
    tr.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const LayerSlots& s = layers_[static_cast<std::size_t>(l)];
      LayerTrace& c = tr.layers[static_cast<std::size_t>(l)];
      c.x_in = x;
      ln_forward(x, view(s.ln1_gain), view(s.ln1_bias), c.ln1_hat, c.ln1_rstd, c.ln1_out);
      c.qkv.noalias() = c.ln1_out * view(s.w_qkv);
      c.qkv.rowwise() += view(s.b_qkv).row(0);
      c.att.resize(T, d);
      c.probs.resize(static_cast<std::size_t>(cfg_.n_heads));
      for (int h = 0; h < cfg_.n_heads; ++h) {
        const auto q = c.qkv.middleCols(h * hs, hs);
        const auto k = c.qkv.middleCols(d + h * hs, hs);
        const auto v = c.qkv.middleCols(2 * d + h * hs, hs);
        Matrix p = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < T; ++i) {
          const Scalar mx = p.row(i).head(i + 1).maxCoeff();
          Scalar sum(0);
          for (Eigen::Index j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          }
          p.row(i).head(i + 1) /= sum;
          p.row(i).tail(T - i - 1).setZero();
        }
        c.att.middleCols(h * hs, hs).noalias() = p * v;
        c.probs[static_cast<std::size_t>(h)] = std::move(p);
      }
      x.noalias() += c.att * view(s.w_o);
      x.rowwise() += view(s.b_o).row(0);
      c.x_mid = x;
      ln_forward(x, view(s.ln2_gain), view(s.ln2_bias), c.ln2_hat, c.ln2_rstd, c.ln2_out);
      c.fc.noalias() = c.ln2_out * view(s.w_fc);
      c.fc.rowwise() += view(s.b_fc).row(0);
      c.act = c.fc.unaryExpr([](Scalar u) { return gelu(u); });
      x.noalias() += c.act * view(s.w_proj);
      x.rowwise() += view(s.b_proj).row(0);
    }
    ln_forward(x, view(lnf_gain_), view(lnf_bias_), tr.lnf_hat, tr.lnf_rstd, tr.lnf_out);
    const auto rows = all_logits ? tr.lnf_out.topRows(T) : tr.lnf_out.bottomRows(1);
    if (cfg_.tied_output) {
      tr.logits.noalias() = rows * wte.transpose();
    } else {
      tr.logits.noalias() = rows * view(w_out_);
    }
  }

  TransformerConfig cfg_;
  ParamLayout layout_;
  TensorSlot wte_, wpe_, lnf_gain_, lnf_bias_, w_out_;
  std::vector<LayerSlots> layers_;
  Vector params_;
};

}  // namespace ulab
