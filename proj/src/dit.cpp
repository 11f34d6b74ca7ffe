// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/dit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvi/rng.hpp"
#include "mvi/simd.hpp"

namespace mvi::dit {

void ModelConfig::validate() const {
  if (width <= 0 || depth < 0 || heads <= 0 || width % heads != 0) {
    throw Error("ModelConfig: width must be positive and divisible by heads");
  }
  if (width % 2 != 0) throw Error("ModelConfig: width must be even (sinusoidal time embedding)");
  if (token_patch <= 0 || latent_height % token_patch != 0 || latent_width % token_patch != 0) {
    throw Error("ModelConfig: latent dims must be divisible by token_patch");
  }
  if (vocab <= 0 || max_frames <= 0 || mlp_ratio <= 0 || latent_channels <= 0) {
    throw Error("ModelConfig: vocab, max_frames, mlp_ratio and latent_channels must be positive");
  }
}

template <typename T>
void NamedArrays<T>::add(const std::string& name, Tensor<T> value) {
  if (has(name)) throw Error("duplicate parameter name '" + name + "'");
  index_.emplace(name, arrays_.size());
  names_.push_back(name);
  arrays_.push_back(std::move(value));
}

template <typename T>
std::size_t NamedArrays<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t NamedArrays<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

template <typename T>
NamedArrays<T> NamedArrays<T>::zeros_like() const {
  NamedArrays out;
  for (std::size_t i = 0; i < arrays_.size(); ++i) out.add(names_[i], Tensor<T>(arrays_[i].shape()));
  return out;
}

template <typename T>
void NamedArrays<T>::set_zero() {
  for (auto& a : arrays_) a.fill(T(0));
}

template <typename T>
bool ModelParams<T>::has_adapter(const std::string& slot) const {
  return std::any_of(adapters.begin(), adapters.end(), [&](const AdapterInfo& a) { return a.slot == slot; });
}

std::vector<std::string> adapter_targets(const ModelConfig& config) {
  std::vector<std::string> out;
  for (int b = 0; b < config.depth; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    for (const char* n : {"adaln", "attn2d.qkv", "attn2d.proj", "attn3d.qkv", "attn3d.proj", "mlp.fc1", "mlp.fc2"}) {
      out.push_back(p + n);
    }
  }
  return out;
}

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kTimeScale = 1000.0;

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}
template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}
template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::tanh(T(kGeluK) * (x + T(kGeluC) * x * x * x)));
}
template <typename T>
T gelu_grad(T x) {
  const T th = std::tanh(T(kGeluK) * (x + T(kGeluC) * x * x * x));
  return T(0.5) * (T(1) + th) +
         T(0.5) * x * (T(1) - th * th) * T(kGeluK) * (T(1) + T(3 * kGeluC) * x * x);
}

// Resolved linear map: array indices plus adapter indices.
struct Lin {
  std::size_t w = 0, b = 0, in = 0, out = 0;
  struct Ad {
    std::size_t a, b, rank;
    double scale;
  };
  std::vector<Ad> ads;
};

template <typename T>
Lin resolve(const ModelParams<T>& p, const std::string& prefix, bool use_policy, bool adapters) {
  Lin l;
  l.w = p.arrays.index_of(prefix + ".weight");
  l.b = p.arrays.index_of(prefix + ".bias");
  l.in = p.arrays.at(l.w).dim(0);
  l.out = p.arrays.at(l.w).dim(1);
  if (adapters) {
    for (const auto& ad : p.adapters) {
      if (ad.slot == "policy" && !use_policy) continue;
      Lin::Ad a;
      a.a = p.arrays.index_of(prefix + "." + ad.slot + "_a");
      a.b = p.arrays.index_of(prefix + "." + ad.slot + "_b");
      a.rank = p.arrays.at(a.a).dim(1);
      a.scale = ad.scale();
      l.ads.push_back(a);
    }
  }
  return l;
}

template <typename T>
void lin_forward(const NamedArrays<T>& P, const Lin& L, const T* x, std::size_t n, T* y, LinearCache<T>* lc) {
  simd::gemm(false, false, n, L.out, L.in, T(1), x, L.in, P.at(L.w).data(), L.out, T(0), y, L.out);
  const T* b = P.at(L.b).data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < L.out; ++j) y[i * L.out + j] += b[j];
  if (lc) lc->xa.clear();
  for (const auto& ad : L.ads) {
    Tensor<T> xa({n, ad.rank});
    simd::gemm(false, false, n, ad.rank, L.in, T(1), x, L.in, P.at(ad.a).data(), ad.rank, T(0), xa.data(), ad.rank);
    simd::gemm(false, false, n, L.out, ad.rank, static_cast<T>(ad.scale), xa.data(), ad.rank, P.at(ad.b).data(),
               L.out, T(1), y, L.out);
    if (lc) lc->xa.push_back(std::move(xa));
  }
}

// dx (n x in) is overwritten when non-null.
template <typename T>
void lin_backward(const NamedArrays<T>& P, const Lin& L, const T* x, std::size_t n, const T* dy, T* dx,
                  const LinearCache<T>& lc, NamedArrays<T>& G, const std::vector<bool>& tr) {
  if (dx) simd::gemm(false, true, n, L.in, L.out, T(1), dy, L.out, P.at(L.w).data(), L.out, T(0), dx, L.in);
  if (tr[L.w]) simd::gemm(true, false, L.in, L.out, n, T(1), x, L.in, dy, L.out, T(1), G.at(L.w).data(), L.out);
  if (tr[L.b]) {
    T* db = G.at(L.b).data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < L.out; ++j) db[j] += dy[i * L.out + j];
  }
  for (std::size_t k = 0; k < L.ads.size(); ++k) {
    const auto& ad = L.ads[k];
    const T s = static_cast<T>(ad.scale);
    const bool need_t = dx || tr[ad.a];
    Tensor<T> t;
    if (need_t) {
      t = Tensor<T>({n, ad.rank});
      simd::gemm(false, true, n, ad.rank, L.out, T(1), dy, L.out, P.at(ad.b).data(), L.out, T(0), t.data(), ad.rank);
    }
    if (dx) simd::gemm(false, true, n, L.in, ad.rank, s, t.data(), ad.rank, P.at(ad.a).data(), ad.rank, T(1), dx, L.in);
    if (tr[ad.a]) {
      simd::gemm(true, false, L.in, ad.rank, n, s, x, L.in, t.data(), ad.rank, T(1), G.at(ad.a).data(), ad.rank);
    }
    if (tr[ad.b]) {
      simd::gemm(true, false, ad.rank, L.out, n, s, lc.xa[k].data(), ad.rank, dy, L.out, T(1), G.at(ad.b).data(),
                 L.out);
    }
  }
}

template <typename T>
void layer_norm(const T* h, std::size_t n, std::size_t d, T* u, T* rstd) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* hi = h + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += hi[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (hi[j] - mean) * (hi[j] - mean);
    var /= static_cast<T>(d);
    const T r = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    rstd[i] = r;
    for (std::size_t j = 0; j < d; ++j) u[i * d + j] = (hi[j] - mean) * r;
  }
}

// dh += LN backward of du.
template <typename T>
void layer_norm_backward(const T* du, const T* u, const T* rstd, std::size_t n, std::size_t d, T* dh) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* g = du + i * d;
    const T* ui = u + i * d;
    T mg = 0, mgu = 0;
    for (std::size_t j = 0; j < d; ++j) {
      mg += g[j];
      mgu += g[j] * ui[j];
    }
    mg /= static_cast<T>(d);
    mgu /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) dh[i * d + j] += rstd[i] * (g[j] - mg - ui[j] * mgu);
  }
}

// Self-attention over `groups` independent sequences of length L.
template <typename T>
void attention_forward(const T* qkv, std::size_t groups, std::size_t L, std::size_t heads, std::size_t d, T* att,
                       T* probs) {
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t g = 0; g < groups; ++g) {
    const T* base = qkv + g * L * 3 * d;
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs + (g * heads + h) * L * L;
      simd::gemm(false, true, L, L, dh, scale, base + h * dh, 3 * d, base + d + h * dh, 3 * d, T(0), p, L);
      simd::softmax_rows(p, L, L, L);
      simd::gemm(false, false, L, dh, L, T(1), p, L, base + 2 * d + h * dh, 3 * d, T(0), att + g * L * d + h * dh,
                 d);
    }
  }
}

template <typename T>
void attention_backward(const T* qkv, const T* probs, std::size_t groups, std::size_t L, std::size_t heads,
                        std::size_t d, const T* datt, T* dqkv) {
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> ds(L * L);
  for (std::size_t g = 0; g < groups; ++g) {
    const T* base = qkv + g * L * 3 * d;
    T* dbase = dqkv + g * L * 3 * d;
    const T* dout = datt + g * L * d;
    for (std::size_t h = 0; h < heads; ++h) {
      const T* p = probs + (g * heads + h) * L * L;
      const T* q = base + h * dh;
      const T* k = base + d + h * dh;
      const T* v = base + 2 * d + h * dh;
      // dP = dO V^T
      simd::gemm(false, true, L, L, dh, T(1), dout + h * dh, d, v, 3 * d, T(0), ds.data(), L);
      // dV = P^T dO
      simd::gemm(true, false, L, dh, L, T(1), p, L, dout + h * dh, d, T(0), dbase + 2 * d + h * dh, 3 * d);
      for (std::size_t i = 0; i < L; ++i) {
        T* row = ds.data() + i * L;
        const T* pr = p + i * L;
        const T dot = simd::dot(row, pr, L);
        for (std::size_t j = 0; j < L; ++j) row[j] = pr[j] * (row[j] - dot);
      }
      simd::gemm(false, false, L, dh, L, scale, ds.data(), L, k, 3 * d, T(0), dbase + h * dh, 3 * d);
      simd::gemm(true, false, L, dh, L, scale, ds.data(), L, q, 3 * d, T(0), dbase + d + h * dh, 3 * d);
    }
  }
}

// Packed frames (F x C x hl x wl) to tokens (F*P x C*q*q); inverse when `back`.
template <typename T>
void patchify(T* packed, T* tokens, std::size_t F, std::size_t C, std::size_t hl, std::size_t wl, std::size_t q,
              bool back) {
  const std::size_t th = hl / q, tw = wl / q, P = th * tw, D = C * q * q;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < hl; ++y)
        for (std::size_t x = 0; x < wl; ++x) {
          const std::size_t tok = f * P + (y / q) * tw + (x / q);
          const std::size_t feat = c * q * q + (y % q) * q + (x % q);
          T& a = packed[((f * C + c) * hl + y) * wl + x];
          T& b = tokens[tok * D + feat];
          if (back) a = b;
          else b = a;
        }
}

}  // namespace

template <typename T>
struct Model<T>::Impl {
  struct Block {
    Lin adaln, qkv2, proj2, qkv3, proj3, fc1, fc2;
  };
  Lin embed, t1, t2, final_mod, head;
  std::size_t pos_frame = 0, pos_space = 0, prompt_emb = 0;
  std::vector<Block> blocks;
};

template <typename T>
Model<T>::Model(const ModelParams<T>& params, ForwardOptions options) : params_(params), impl_(new Impl) {
  params.config.validate();
  const bool pol = options.use_policy;
  impl_->embed = resolve(params, "embed", pol, false);
  impl_->t1 = resolve(params, "time.fc1", pol, false);
  impl_->t2 = resolve(params, "time.fc2", pol, false);
  impl_->final_mod = resolve(params, "final.adaln", pol, false);
  impl_->head = resolve(params, "head", pol, false);
  impl_->pos_frame = params.arrays.index_of("pos.frame");
  impl_->pos_space = params.arrays.index_of("pos.space");
  impl_->prompt_emb = params.arrays.index_of("prompt.embedding");
  for (int b = 0; b < params.config.depth; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    typename Impl::Block blk;
    blk.adaln = resolve(params, p + "adaln", pol, true);
    blk.qkv2 = resolve(params, p + "attn2d.qkv", pol, true);
    blk.proj2 = resolve(params, p + "attn2d.proj", pol, true);
    blk.qkv3 = resolve(params, p + "attn3d.qkv", pol, true);
    blk.proj3 = resolve(params, p + "attn3d.proj", pol, true);
    blk.fc1 = resolve(params, p + "mlp.fc1", pol, true);
    blk.fc2 = resolve(params, p + "mlp.fc2", pol, true);
    impl_->blocks.push_back(std::move(blk));
  }
}

template <typename T>
Model<T>::~Model() = default;

template <typename T>
Tensor<T> Model<T>::forward(const cfi::PackedInput<T>& input, std::span<const std::int64_t> prompt_in,
                            ForwardCache<T>* cache) const {
  const auto& cfg = params_.config;
  const auto& P = params_.arrays;
  const auto& in = input.data;
  if (in.rank() != 4 || in.dim(1) != static_cast<std::size_t>(cfg.in_channels()) ||
      in.dim(2) != static_cast<std::size_t>(cfg.latent_height) ||
      in.dim(3) != static_cast<std::size_t>(cfg.latent_width)) {
    throw ShapeError("forward: packed input " + shape_str(in.shape()) + " does not match model config");
  }
  const std::size_t F = in.dim(0);
  if (F > static_cast<std::size_t>(cfg.max_frames)) {
    throw ShapeError("forward: " + std::to_string(F) + " frames exceed max_frames " +
                     std::to_string(cfg.max_frames));
  }
  if (!(input.t >= 0.0 && input.t <= 1.0)) throw Error("forward: t must lie in [0, 1]");
  std::vector<std::int64_t> prompt(prompt_in.begin(), prompt_in.end());
  if (prompt.empty()) prompt.push_back(cfi::kNullToken);
  for (auto tok : prompt) {
    if (tok < 0 || tok >= cfg.vocab) throw Error("forward: prompt token " + std::to_string(tok) + " out of vocab");
  }

  const std::size_t q = static_cast<std::size_t>(cfg.token_patch);
  const std::size_t C = in.dim(1), hl = in.dim(2), wl = in.dim(3);
  const std::size_t Ptok = static_cast<std::size_t>(cfg.tokens_per_frame());
  const std::size_t N = F * Ptok;
  const std::size_t d = static_cast<std::size_t>(cfg.width);
  const std::size_t heads = static_cast<std::size_t>(cfg.heads);

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.frames = F;
  c.prompt = prompt;
  c.tokens = Tensor<T>({N, C * q * q});
  patchify(const_cast<T*>(in.data()), c.tokens.data(), F, C, hl, wl, q, false);

  Tensor<T> H({N, d});
  lin_forward(P, impl_->embed, c.tokens.data(), N, H.data(), static_cast<LinearCache<T>*>(nullptr));
  {
    const T* pf = P.at(impl_->pos_frame).data();
    const T* ps = P.at(impl_->pos_space).data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < d; ++j) H[n * d + j] += pf[(n / Ptok) * d + j] + ps[(n % Ptok) * d + j];
  }

  // Conditioning vector.
  const std::size_t half = d / 2;
  c.t_freq = Tensor<T>({1, d});
  for (std::size_t k = 0; k < half; ++k) {
    const double fr = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    const double arg = kTimeScale * input.t * fr;
    c.t_freq[k] = static_cast<T>(std::cos(arg));
    c.t_freq[half + k] = static_cast<T>(std::sin(arg));
  }
  c.t_pre = Tensor<T>({1, d});
  lin_forward(P, impl_->t1, c.t_freq.data(), 1, c.t_pre.data(), static_cast<LinearCache<T>*>(nullptr));
  c.t_act = Tensor<T>({1, d});
  for (std::size_t j = 0; j < d; ++j) c.t_act[j] = silu(c.t_pre[j]);
  c.cond = Tensor<T>({1, d});
  lin_forward(P, impl_->t2, c.t_act.data(), 1, c.cond.data(), static_cast<LinearCache<T>*>(nullptr));
  {
    const T* emb = P.at(impl_->prompt_emb).data();
    const T inv = T(1) / static_cast<T>(prompt.size());
    for (auto tok : prompt)
      for (std::size_t j = 0; j < d; ++j) c.cond[j] += inv * emb[static_cast<std::size_t>(tok) * d + j];
  }
  c.cond_act = Tensor<T>({1, d});
  for (std::size_t j = 0; j < d; ++j) c.cond_act[j] = silu(c.cond[j]);

  c.blocks.resize(impl_->blocks.size());
  for (std::size_t b = 0; b < impl_->blocks.size(); ++b) {
    const auto& blk = impl_->blocks[b];
    auto& bc = c.blocks[b];
    bc.mod = Tensor<T>({1, 9 * d});
    lin_forward(P, blk.adaln, c.cond_act.data(), 1, bc.mod.data(), &bc.mod_lc);
    for (int s = 0; s < 3; ++s) {
      auto& sc = bc.sub[s];
      const T* shift = bc.mod.data() + (3 * s) * d;
      const T* scl = bc.mod.data() + (3 * s + 1) * d;
      const T* gate = bc.mod.data() + (3 * s + 2) * d;
      sc.u = Tensor<T>({N, d});
      sc.rstd = Tensor<T>({N});
      layer_norm(H.data(), N, d, sc.u.data(), sc.rstd.data());
      sc.um = Tensor<T>({N, d});
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < d; ++j) sc.um[n * d + j] = sc.u[n * d + j] * (T(1) + scl[j]) + shift[j];
      sc.out = Tensor<T>({N, d});
      if (s < 2) {
        const Lin& lq = s == 0 ? blk.qkv2 : blk.qkv3;
        const Lin& lp = s == 0 ? blk.proj2 : blk.proj3;
        const std::size_t groups = s == 0 ? F : 1;
        const std::size_t L = N / groups;
        sc.qkv = Tensor<T>({N, 3 * d});
        lin_forward(P, lq, sc.um.data(), N, sc.qkv.data(), &sc.first);
        sc.probs = Tensor<T>({groups * heads * L * L});
        sc.att = Tensor<T>({N, d});
        attention_forward(sc.qkv.data(), groups, L, heads, d, sc.att.data(), sc.probs.data());
        lin_forward(P, lp, sc.att.data(), N, sc.out.data(), &sc.second);
      } else {
        const std::size_t hid = blk.fc1.out;
        sc.pre = Tensor<T>({N, hid});
        lin_forward(P, blk.fc1, sc.um.data(), N, sc.pre.data(), &sc.first);
        sc.hidden = Tensor<T>({N, hid});
        for (std::size_t i = 0; i < sc.pre.size(); ++i) sc.hidden[i] = gelu(sc.pre[i]);
        lin_forward(P, blk.fc2, sc.hidden.data(), N, sc.out.data(), &sc.second);
      }
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < d; ++j) H[n * d + j] += gate[j] * sc.out[n * d + j];
    }
  }

  c.final_mod = Tensor<T>({1, 2 * d});
  lin_forward(P, impl_->final_mod, c.cond_act.data(), 1, c.final_mod.data(), static_cast<LinearCache<T>*>(nullptr));
  c.final_u = Tensor<T>({N, d});
  c.final_rstd = Tensor<T>({N});
  layer_norm(H.data(), N, d, c.final_u.data(), c.final_rstd.data());
  c.final_um = Tensor<T>({N, d});
  {
    const T* shift = c.final_mod.data();
    const T* scl = c.final_mod.data() + d;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < d; ++j) c.final_um[n * d + j] = c.final_u[n * d + j] * (T(1) + scl[j]) + shift[j];
  }
  const std::size_t Cout = static_cast<std::size_t>(cfg.out_channels());
  Tensor<T> Y({N, Cout * q * q});
  lin_forward(P, impl_->head, c.final_um.data(), N, Y.data(), static_cast<LinearCache<T>*>(nullptr));
  Tensor<T> vel({F, Cout, hl, wl});
  patchify(vel.data(), Y.data(), F, Cout, hl, wl, q, true);
  return vel;
}

template <typename T>
void Model<T>::backward(const ForwardCache<T>& c, const Tensor<T>& d_velocity, NamedArrays<T>& G,
                        const std::vector<bool>& tr) const {
  const auto& cfg = params_.config;
  const auto& P = params_.arrays;
  if (tr.size() != P.size() || G.size() != P.size()) throw Error("backward: gradient layout mismatch");
  const std::size_t F = c.frames;
  const std::size_t q = static_cast<std::size_t>(cfg.token_patch);
  const std::size_t hl = static_cast<std::size_t>(cfg.latent_height), wl = static_cast<std::size_t>(cfg.latent_width);
  const std::size_t Cout = static_cast<std::size_t>(cfg.out_channels());
  const std::size_t Ptok = static_cast<std::size_t>(cfg.tokens_per_frame());
  const std::size_t N = F * Ptok;
  const std::size_t d = static_cast<std::size_t>(cfg.width);
  const std::size_t heads = static_cast<std::size_t>(cfg.heads);
  if (d_velocity.shape() != Shape{F, Cout, hl, wl}) throw ShapeError("backward: velocity gradient shape mismatch");

  Tensor<T> dY({N, Cout * q * q});
  patchify(const_cast<T*>(d_velocity.data()), dY.data(), F, Cout, hl, wl, q, false);

  std::vector<T> dsc(d, T(0));
  Tensor<T> dH({N, d});
  {
    Tensor<T> dum({N, d});
    lin_backward(P, impl_->head, c.final_um.data(), N, dY.data(), dum.data(), LinearCache<T>{}, G, tr);
    Tensor<T> dmod({1, 2 * d});
    const T* scl = c.final_mod.data() + d;
    Tensor<T> du({N, d});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < d; ++j) {
        const T g = dum[n * d + j];
        dmod[j] += g;
        dmod[d + j] += g * c.final_u[n * d + j];
        du[n * d + j] = g * (T(1) + scl[j]);
      }
    layer_norm_backward(du.data(), c.final_u.data(), c.final_rstd.data(), N, d, dH.data());
    std::vector<T> dx(d);
    lin_backward(P, impl_->final_mod, c.cond_act.data(), 1, dmod.data(), dx.data(), LinearCache<T>{}, G, tr);
    for (std::size_t j = 0; j < d; ++j) dsc[j] += dx[j];
  }

  for (std::size_t bi = impl_->blocks.size(); bi-- > 0;) {
    const auto& blk = impl_->blocks[bi];
    const auto& bc = c.blocks[bi];
    Tensor<T> dmod({1, 9 * d});
    for (int s = 2; s >= 0; --s) {
      const auto& sc = bc.sub[s];
      const T* scl = bc.mod.data() + (3 * s + 1) * d;
      const T* gate = bc.mod.data() + (3 * s + 2) * d;
      T* dshift = dmod.data() + (3 * s) * d;
      T* dscale = dmod.data() + (3 * s + 1) * d;
      T* dgate = dmod.data() + (3 * s + 2) * d;
      Tensor<T> dout({N, d});
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < d; ++j) {
          const T g = dH[n * d + j];
          dgate[j] += g * sc.out[n * d + j];
          dout[n * d + j] = g * gate[j];
        }
      Tensor<T> dum({N, d});
      if (s < 2) {
        const Lin& lq = s == 0 ? blk.qkv2 : blk.qkv3;
        const Lin& lp = s == 0 ? blk.proj2 : blk.proj3;
        const std::size_t groups = s == 0 ? F : 1;
        const std::size_t L = N / groups;
        Tensor<T> datt({N, d});
        lin_backward(P, lp, sc.att.data(), N, dout.data(), datt.data(), sc.second, G, tr);
        Tensor<T> dqkv({N, 3 * d});
        attention_backward(sc.qkv.data(), sc.probs.data(), groups, L, heads, d, datt.data(), dqkv.data());
        lin_backward(P, lq, sc.um.data(), N, dqkv.data(), dum.data(), sc.first, G, tr);
      } else {
        const std::size_t hid = blk.fc1.out;
        Tensor<T> dhid({N, hid});
        lin_backward(P, blk.fc2, sc.hidden.data(), N, dout.data(), dhid.data(), sc.second, G, tr);
        for (std::size_t i = 0; i < dhid.size(); ++i) dhid[i] *= gelu_grad(sc.pre[i]);
        lin_backward(P, blk.fc1, sc.um.data(), N, dhid.data(), dum.data(), sc.first, G, tr);
      }
      Tensor<T> du({N, d});
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < d; ++j) {
          const T g = dum[n * d + j];
          dshift[j] += g;
          dscale[j] += g * sc.u[n * d + j];
          du[n * d + j] = g * (T(1) + scl[j]);
        }
      layer_norm_backward(du.data(), sc.u.data(), sc.rstd.data(), N, d, dH.data());
    }
    std::vector<T> dx(d);
    lin_backward(P, blk.adaln, c.cond_act.data(), 1, dmod.data(), dx.data(), bc.mod_lc, G, tr);
    for (std::size_t j = 0; j < d; ++j) dsc[j] += dx[j];
  }

  if (tr[impl_->pos_frame]) {
    T* g = G.at(impl_->pos_frame).data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < d; ++j) g[(n / Ptok) * d + j] += dH[n * d + j];
  }
  if (tr[impl_->pos_space]) {
    T* g = G.at(impl_->pos_space).data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < d; ++j) g[(n % Ptok) * d + j] += dH[n * d + j];
  }
  lin_backward(P, impl_->embed, c.tokens.data(), N, dH.data(), static_cast<T*>(nullptr), LinearCache<T>{}, G, tr);

  std::vector<T> dcond(d);
  for (std::size_t j = 0; j < d; ++j) dcond[j] = dsc[j] * silu_grad(c.cond[j]);
  if (tr[impl_->prompt_emb]) {
    T* g = G.at(impl_->prompt_emb).data();
    const T inv = T(1) / static_cast<T>(c.prompt.size());
    for (auto tok : c.prompt)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(tok) * d + j] += inv * dcond[j];
  }
  std::vector<T> dact(d);
  lin_backward(P, impl_->t2, c.t_act.data(), 1, dcond.data(), dact.data(), LinearCache<T>{}, G, tr);
  for (std::size_t j = 0; j < d; ++j) dact[j] *= silu_grad(c.t_pre[j]);
  lin_backward(P, impl_->t1, c.t_freq.data(), 1, dact.data(), static_cast<T*>(nullptr), LinearCache<T>{}, G, tr);
}

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const cfi::PackedInput<T>& input,
                  std::span<const std::int64_t> prompt, ForwardOptions options) {
  return Model<T>(params, options).forward(input, prompt);
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> p;
  p.config = cfg;
  p.init_seed = seed;
  Rng rng(derive_seed(seed, {0x696E6974ULL}));
  const std::size_t d = static_cast<std::size_t>(cfg.width);
  const std::size_t q = static_cast<std::size_t>(cfg.token_patch);
  const std::size_t din = static_cast<std::size_t>(cfg.in_channels()) * q * q;
  const std::size_t dout = static_cast<std::size_t>(cfg.out_channels()) * q * q;
  const std::size_t hid = d * static_cast<std::size_t>(cfg.mlp_ratio);

  auto normal = [&](Shape s, double sd) {
    Tensor<T> t(std::move(s));
    rng.fill_normal(t, sd);
    return t;
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, bool zero) {
    p.arrays.add(name + ".weight", zero ? Tensor<T>({in, out}) : normal({in, out}, 1.0 / std::sqrt(double(in))));
    p.arrays.add(name + ".bias", Tensor<T>({out}));
  };

  linear("embed", din, d, false);
  p.arrays.add("pos.frame", normal({static_cast<std::size_t>(cfg.max_frames), d}, 0.1));
  p.arrays.add("pos.space", normal({static_cast<std::size_t>(cfg.tokens_per_frame()), d}, 0.1));
  linear("time.fc1", d, d, false);
  linear("time.fc2", d, d, false);
  p.arrays.add("prompt.embedding", normal({static_cast<std::size_t>(cfg.vocab), d}, 0.5));
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    linear(pre + "adaln", d, 9 * d, true);
    linear(pre + "attn2d.qkv", d, 3 * d, false);
    linear(pre + "attn2d.proj", d, d, false);
    linear(pre + "attn3d.qkv", d, 3 * d, false);
    linear(pre + "attn3d.proj", d, d, false);
    linear(pre + "mlp.fc1", d, hid, false);
    linear(pre + "mlp.fc2", hid, d, false);
  }
  linear("final.adaln", d, 2 * d, true);
  linear("head", d, dout, true);
  return p;
}

template <typename T>
ModelParams<T> attach_lora(ModelParams<T> params, const LoraConfig& lc, std::uint64_t seed) {
  if (lc.rank < 1) throw Error("attach_lora: rank must be >= 1");
  if (lc.slot.empty() || lc.slot.find('.') != std::string::npos) throw Error("attach_lora: invalid slot name");
  if (params.has_adapter(lc.slot)) throw Error("attach_lora: adapter slot '" + lc.slot + "' already attached");
  Rng rng(derive_seed(seed, {hash_string(lc.slot)}));
  const auto r = static_cast<std::size_t>(lc.rank);
  for (const auto& target : adapter_targets(params.config)) {
    const auto& w = params.arrays.get(target + ".weight");
    Tensor<T> a({w.dim(0), r});
    rng.fill_normal(a, 1.0 / std::sqrt(static_cast<double>(w.dim(0))));
    Tensor<T> b({r, w.dim(1)});
    params.arrays.add(target + "." + lc.slot + "_a", std::move(a));
    params.arrays.add(target + "." + lc.slot + "_b", std::move(b));
  }
  params.adapters.push_back({lc.slot, lc.rank, lc.alpha});
  return params;
}

template <typename T>
ModelParams<T> merge_adapter(ModelParams<T> params, const std::string& slot) {
  auto it = std::find_if(params.adapters.begin(), params.adapters.end(),
                         [&](const AdapterInfo& a) { return a.slot == slot; });
  if (it == params.adapters.end()) throw Error("merge_adapter: no adapter slot '" + slot + "'");
  const T s = static_cast<T>(it->scale());
  for (const auto& target : adapter_targets(params.config)) {
    auto& w = params.arrays.get(target + ".weight");
    const auto& a = params.arrays.get(target + "." + slot + "_a");
    const auto& b = params.arrays.get(target + "." + slot + "_b");
    simd::gemm(false, false, w.dim(0), w.dim(1), a.dim(1), s, a.data(), a.dim(1), b.data(), b.dim(1), T(1), w.data(),
               w.dim(1));
  }
  params.adapters.erase(it);
  NamedArrays<T> kept;
  const std::string sa = "." + slot + "_a", sb = "." + slot + "_b";
  auto ends_with = [](const std::string& n, const std::string& suf) {
    return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    const auto& n = params.arrays.name(i);
    if (!ends_with(n, sa) && !ends_with(n, sb)) kept.add(n, std::move(params.arrays.at(i)));
  }
  params.arrays = std::move(kept);
  return params;
}

template <typename T>
std::set<std::string> trainable_names(const ModelParams<T>& params, int phase) {
  if (phase < 1 || phase > 4) throw Error("trainable_names: unknown phase " + std::to_string(phase));
  std::set<std::string> out;
  if (phase == 4) {
    if (!params.has_adapter("policy")) throw Error("phase 4 requires an attached policy adapter");
    for (const auto& n : params.arrays.names())
      if (n.find(".policy_") != std::string::npos) out.insert(n);
    return out;
  }
  for (const auto& n : params.arrays.names()) {
    const bool adapter = n.find(".lora_") != std::string::npos;
    const bool outer = n.rfind("embed.", 0) == 0 || n.rfind("pos.", 0) == 0 || n.rfind("time.", 0) == 0 ||
                       n.rfind("prompt.", 0) == 0 || n.rfind("final.", 0) == 0 || n.rfind("head.", 0) == 0;
    if (adapter || outer) out.insert(n);
  }
  return out;
}

template <typename T>
std::vector<bool> trainable_flags(const ModelParams<T>& params, const std::set<std::string>& names) {
  std::vector<bool> f(params.arrays.size(), false);
  for (const auto& n : names) f[params.arrays.index_of(n)] = true;
  return f;
}

template <typename T>
std::size_t count_elements(const NamedArrays<T>& arrays, const std::set<std::string>& names) {
  std::size_t n = 0;
  for (const auto& name : names) n += arrays.get(name).size();
  return n;
}

#define MVI_DIT_INSTANTIATE(T)                                                                              \
  template class NamedArrays<T>;                                                                            \
  template struct ModelParams<T>;                                                                           \
  template class Model<T>;                                                                                  \
  template Tensor<T> forward<T>(const ModelParams<T>&, const cfi::PackedInput<T>&,                          \
                                std::span<const std::int64_t>, ForwardOptions);                             \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                \
  template ModelParams<T> attach_lora<T>(ModelParams<T>, const LoraConfig&, std::uint64_t);                 \
  template ModelParams<T> merge_adapter<T>(ModelParams<T>, const std::string&);                             \
  template std::set<std::string> trainable_names<T>(const ModelParams<T>&, int);                            \
  template std::vector<bool> trainable_flags<T>(const ModelParams<T>&, const std::set<std::string>&);       \
  template std::size_t count_elements<T>(const NamedArrays<T>&, const std::set<std::string>&);

MVI_DIT_INSTANTIATE(float)
MVI_DIT_INSTANTIATE(double)

}  // namespace mvi::dit
